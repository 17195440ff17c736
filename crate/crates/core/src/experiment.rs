//! Desk-scale reproduction run: synthetic corpus, source pretraining,
//! transfer with a frozen prefix, cross-validated comparison against the
//! count baseline, a paired fog test and PCA of the transfer values.

use std::collections::BTreeMap;

use crate::analysis::{pca_fit, separation_metric, PcaResult};
use crate::baseline::{classify, fit_thresholds, video_mean_count, BlobConfig, Thresholds};
use crate::catalog::{Arch, ArchParams};
use crate::data::dataset::DatasetIndex;
use crate::data::image::{mirror, PreprocessMode};
use crate::data::split::{SplitMode, SplitPlan};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, prob_rows, CvResult};
use crate::label::Label;
use crate::model::{Model, TrainPolicy};
use crate::optim::{argmax, evaluate_features, fit_features, Adam, AdamConfig, Examples, History, TrainConfig, INFERENCE_BATCH};
use crate::par;
use crate::rng::Rng;
use crate::synth::{generate_corpus_videos, generate_tercile_videos, generate_video, videos_to_index, CorpusConfig, Video, Weather};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FogTestConfig {
    pub videos_per_class: usize,
    pub frames_per_video: usize,
    pub density: f64,
    pub seed: u64,
}

impl Default for FogTestConfig {
    fn default() -> Self {
        Self {
            videos_per_class: 20,
            frames_per_video: 12,
            density: 0.7,
            seed: 9_001,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    /// Source-task corpus; its seed must differ from the target corpus seed.
    pub source: CorpusConfig,
    pub source_videos: usize,
    pub pretrain: TrainConfig,
    pub transfer: TrainConfig,
    pub policy: TrainPolicy,
    pub folds: usize,
    pub split_seed: u64,
    pub model_seed: u64,
    pub preprocess: PreprocessMode,
    pub blob: BlobConfig,
    pub fog_test: FogTestConfig,
    /// Layer whose outputs are the transfer values.
    pub transfer_layer: String,
    /// Add left-right mirrored copies of the training frames when fitting
    /// the transfer model.
    pub mirror_augment: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        let source = CorpusConfig {
            seed: corpus.seed + 1_000,
            frames_per_video: 1,
            ..corpus.clone()
        };
        Self {
            corpus,
            source,
            source_videos: 3_000,
            pretrain: TrainConfig {
                batch_size: 32,
                epochs: 10,
                learning_rate: 1e-3,
                ..Default::default()
            },
            transfer: TrainConfig {
                batch_size: 32,
                epochs: 6,
                learning_rate: 5e-4,
                ..Default::default()
            },
            policy: TrainPolicy::LastK(5),
            folds: 10,
            split_seed: 7,
            model_seed: 7,
            preprocess: PreprocessMode::ScalePm1,
            blob: BlobConfig::default(),
            fog_test: FogTestConfig::default(),
            transfer_layer: "flatten".into(),
            mirror_augment: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.source.seed == self.corpus.seed {
            return Err(Error::InvalidParam("source corpus seed must differ from the target corpus seed".into()));
        }
        if self.source_videos < 3 {
            return Err(Error::InvalidParam("source corpus needs at least 3 videos".into()));
        }
        self.pretrain.validate()?;
        self.transfer.validate()?;
        SplitPlan::kfold(self.folds, SplitMode::ByVideo, self.split_seed).validate()
    }
}

/// Outputs of layers `..end` for the selected samples, computed in batches.
pub fn prefix_features(
    model: &Model<f32>,
    end: usize,
    index: &DatasetIndex,
    indices: &[usize],
    mode: &PreprocessMode,
) -> Result<Tensor<f32>> {
    let [h, w, _] = model.input_shape()[..] else {
        return Err(Error::Shape(format!("expected image input, got {:?}", model.input_shape())));
    };
    let mut data = Vec::new();
    let mut dims = Vec::new();
    for chunk in indices.chunks(INFERENCE_BATCH) {
        let ex = index.examples(chunk, (h, w), mode)?;
        let y = model.forward_range(&ex.x, 0, end)?;
        dims = y.dims().to_vec();
        data.extend_from_slice(y.data());
    }
    if indices.is_empty() {
        return Err(Error::Empty("no samples selected".into()));
    }
    dims[0] = indices.len();
    Tensor::new(dims, data)
}

/// Model with the source weights imported by name and the policy applied.
pub fn transfer_model(source: &Model<f32>, arch: Arch, seed: u64, policy: &TrainPolicy) -> Result<Model<f32>> {
    let mut m = arch.build::<f32>(&ArchParams::default(), &Rng::new(seed).derive_str("target"))?;
    let file = source.to_weight_file();
    let names: Vec<String> = file.records.iter().map(|r| r.name.clone()).collect();
    m.import_from(&file, &names)?;
    m.set_trainable(policy)?;
    Ok(m)
}

/// Copy of the index with every frame mirrored left-right.
pub fn mirrored_index(index: &DatasetIndex) -> Result<DatasetIndex> {
    let mut out = index.clone();
    for s in &mut out.samples {
        s.image = mirror(&s.image)?;
    }
    Ok(out)
}

/// Training examples for `idx`: rows of `feats` followed by the same rows of
/// each augmentation set.
pub fn feature_examples(feats: &Tensor<f32>, extra: &[Tensor<f32>], labels: &[usize], idx: &[usize]) -> Result<Examples> {
    let mut x = feats.gather(idx)?;
    let mut y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    if !extra.is_empty() {
        let mut dims = x.dims().to_vec();
        let mut data = x.into_data();
        for e in extra {
            data.extend_from_slice(e.gather(idx)?.data());
            y.extend(idx.iter().map(|&i| labels[i]));
        }
        dims[0] = y.len();
        x = Tensor::new(dims, data)?;
    }
    Examples::new(x, y)
}

/// Mean of the per-view probability rows; views are stacked in blocks of `n`.
pub fn average_views(rows: &[[f64; 3]], n: usize) -> Vec<[f64; 3]> {
    let views = rows.len() / n.max(1);
    (0..n)
        .map(|i| {
            let mut p = [0.0; 3];
            for v in 0..views {
                for (acc, x) in p.iter_mut().zip(rows[v * n + i]) {
                    *acc += x / views as f64;
                }
            }
            p
        })
        .collect()
}

/// Cross-validate the frozen-prefix model: the prefix outputs are shared by
/// every fold, only the trainable tail is fit per fold. `extra` holds prefix
/// outputs of augmented copies; they are added to the training rows and their
/// predictions are averaged with the plain view at test time.
pub fn transfer_cv(
    base: &Model<f32>,
    feats: &Tensor<f32>,
    extra: &[Tensor<f32>],
    index: &DatasetIndex,
    plan: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<(CvResult, Vec<History>)> {
    let start = base.first_trainable().ok_or_else(|| Error::InvalidParam("model has no trainable layers".into()))?;
    let labels: Vec<usize> = index.samples.iter().map(|s| s.label.index()).collect();
    let histories = std::sync::Mutex::new(BTreeMap::new());
    let cv = cross_validate(index, plan, |task| {
        let mut model = base.clone();
        let train = feature_examples(feats, extra, &labels, task.train)?;
        let test = feature_examples(feats, extra, &labels, task.test)?;
        let fold_cfg = TrainConfig {
            seed: task.seed,
            ..cfg.clone()
        };
        let mut adam = Adam::new(AdamConfig::new(fold_cfg.learning_rate));
        let h = fit_features(&mut model, start, &train, None, &fold_cfg, &mut adam)?;
        histories.lock().expect("history lock").insert(task.fold, h);
        let probs = prob_rows(&evaluate_features(&model, start, &test, INFERENCE_BATCH)?.probs);
        Ok(average_views(&probs, task.test.len()))
    })?;
    let histories = histories.into_inner().expect("history lock").into_values().collect();
    Ok((cv, histories))
}

/// Mean blob count per video, keyed by video id.
pub fn video_means(index: &DatasetIndex, blob: &BlobConfig) -> Result<BTreeMap<String, f64>> {
    let ids: Vec<&String> = index.videos.keys().collect();
    let means = par::try_map_range(ids.len(), |k| {
        let frames: Vec<Tensor<f32>> = index.videos[ids[k]].iter().map(|&i| index.samples[i].image.clone()).collect();
        video_mean_count(&frames, blob)
    })?;
    Ok(ids.into_iter().cloned().zip(means).collect())
}

/// Count-baseline under the same folds: thresholds are fit on the training
/// videos of each fold and every frame of a test video gets its video's label.
pub fn baseline_cv(index: &DatasetIndex, means: &BTreeMap<String, f64>, plan: &SplitPlan) -> Result<CvResult> {
    cross_validate(index, plan, |task| {
        let mut seen = BTreeMap::new();
        for &i in task.train {
            let s = &index.samples[i];
            seen.entry(s.video_id.as_str()).or_insert((means[&s.video_id], s.label));
        }
        let train: Vec<(f64, Label)> = seen.into_values().collect();
        let t = fit_thresholds(&train)?;
        Ok(task
            .test
            .iter()
            .map(|&i| {
                let mut p = [0.0; 3];
                p[classify(means[&index.samples[i].video_id], &t).index()] = 1.0;
                p
            })
            .collect())
    })
}

pub fn fit_all_thresholds(index: &DatasetIndex, means: &BTreeMap<String, f64>) -> Result<Thresholds> {
    let train: Vec<(f64, Label)> = means
        .iter()
        .map(|(id, m)| (*m, index.video_label(id).expect("indexed video")))
        .collect();
    fit_thresholds(&train)
}

/// Paired clear and fogged renderings of the same held-out scenes.
pub fn fog_pairs(corpus: &CorpusConfig, cfg: &FogTestConfig) -> Result<(Vec<Video>, Vec<Video>)> {
    let root = Rng::new(cfg.seed).derive_str("fog-test");
    let jobs: Vec<(Label, usize)> = Label::ALL
        .iter()
        .flat_map(|&l| (0..cfg.videos_per_class).map(move |i| (l, i)))
        .collect();
    let pairs = par::try_map_range(jobs.len(), |k| {
        let (label, i) = jobs[k];
        let id = format!("fogtest_{}{i:03}", label.dir_name());
        let seed = root.derive_str(&id).seed();
        let f = cfg.frames_per_video;
        let clear = generate_video(&id, label, f, &corpus.scene, Weather::Clear, seed, None)?;
        let fog = generate_video(&id, label, f, &corpus.scene, Weather::Fog { density: cfg.density }, seed, None)?;
        Ok::<_, Error>((clear, fog))
    })?;
    Ok(pairs.into_iter().unzip())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherAccuracy {
    pub clear: f64,
    pub fog: f64,
}

impl WeatherAccuracy {
    /// Clear minus fog accuracy.
    pub fn drop(&self) -> f64 {
        self.clear - self.fog
    }
}

fn baseline_video_accuracy(videos: &[Video], blob: &BlobConfig, t: &Thresholds) -> Result<f64> {
    let ok = par::try_map_range(videos.len(), |k| {
        let v = &videos[k];
        Ok::<_, Error>(classify(video_mean_count(&v.frames, blob)?, t) == v.label)
    })?;
    Ok(ok.iter().filter(|&&b| b).count() as f64 / videos.len() as f64)
}

fn model_video_accuracy(model: &Model<f32>, videos: &[Video], mode: &PreprocessMode, mirrored: bool) -> Result<f64> {
    let index = videos_to_index(videos)?;
    let all: Vec<usize> = (0..index.len()).collect();
    let end = model.layers().len();
    let mut flat: Vec<f64> = prefix_features(model, end, &index, &all, mode)?.data().iter().map(|&v| v as f64).collect();
    if mirrored {
        let m = prefix_features(model, end, &mirrored_index(&index)?, &all, mode)?;
        flat.extend(m.data().iter().map(|&v| v as f64));
    }
    let rows = average_views(&prob_rows(&flat), all.len());
    let votes = crate::eval::video_predictions(&index, &all, &rows);
    Ok(votes.iter().filter(|(_, t, p)| t == p).count() as f64 / votes.len() as f64)
}

#[derive(Debug, Clone)]
pub struct SeparationReport {
    pub low_vs_rest: f64,
    pub medium_vs_heavy: f64,
    pub pca: PcaResult,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub pretrain_history: History,
    pub fold_histories: Vec<History>,
    pub transfer_cv: CvResult,
    pub baseline_cv: CvResult,
    pub baseline_fog: WeatherAccuracy,
    pub transfer_fog: WeatherAccuracy,
    pub separation: SeparationReport,
    pub trainable: Vec<String>,
    pub source_model: Model<f32>,
    pub final_model: Model<f32>,
}

/// Fraction of Medium and Heavy samples predicted as the other of the two.
pub fn medium_heavy_confusion_rate(cv: &crate::eval::ConfusionMatrix) -> f64 {
    let (m, h) = (Label::Medium, Label::Heavy);
    let n = cv.row_total(m) + cv.row_total(h);
    if n == 0 {
        return f64::NAN;
    }
    cv.confusion_between(m, h) as f64 / n as f64
}

/// Run the whole desk-scale experiment. `progress` receives one line per
/// stage.
pub fn run_experiment(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&str)) -> Result<ExperimentReport> {
    cfg.validate()?;
    let arch = Arch::VggS;
    let [h, w, _] = arch.input_shape();

    progress("generating corpora");
    let videos = generate_corpus_videos(&cfg.corpus)?;
    let index = videos_to_index(&videos)?;
    drop(videos);
    let source_videos = generate_tercile_videos(&cfg.source, cfg.source_videos)?;
    let source_index = videos_to_index(&source_videos)?;
    drop(source_videos);

    progress("pretraining on the source task");
    let mut source = arch.build::<f32>(&ArchParams::default(), &Rng::new(cfg.model_seed).derive_str("source"))?;
    let src_all: Vec<usize> = (0..source_index.len()).collect();
    let src_ex = source_index.examples(&src_all, (h, w), &cfg.preprocess)?;
    drop(source_index);
    let pretrain_history = crate::optim::fit(&mut source, &src_ex, None, &cfg.pretrain)?;
    drop(src_ex);

    progress("computing frozen-prefix features");
    let base = transfer_model(&source, arch, cfg.model_seed, &cfg.policy)?;
    let start = base
        .first_trainable()
        .ok_or_else(|| Error::InvalidParam("policy leaves no trainable layer".into()))?;
    let all: Vec<usize> = (0..index.len()).collect();
    let feats = prefix_features(&base, start, &index, &all, &cfg.preprocess)?;
    let extra = if cfg.mirror_augment {
        vec![prefix_features(&base, start, &mirrored_index(&index)?, &all, &cfg.preprocess)?]
    } else {
        Vec::new()
    };

    progress("cross-validating the transfer model");
    let plan = SplitPlan::kfold(cfg.folds, SplitMode::ByVideo, cfg.split_seed);
    let (transfer_cv, fold_histories) = transfer_cv(&base, &feats, &extra, &index, &plan, &cfg.transfer)?;

    progress("cross-validating the count baseline");
    let means = video_means(&index, &cfg.blob)?;
    let baseline_cv = baseline_cv(&index, &means, &plan)?;

    progress("training the final transfer model");
    let mut final_model = base.clone();
    let labels: Vec<usize> = index.samples.iter().map(|s| s.label.index()).collect();
    let all_ex = feature_examples(&feats, &extra, &labels, &all)?;
    drop(extra);
    let final_cfg = TrainConfig {
        seed: Rng::new(cfg.model_seed).derive_str("final").seed(),
        ..cfg.transfer.clone()
    };
    let mut adam = Adam::new(AdamConfig::new(final_cfg.learning_rate));
    fit_features(&mut final_model, start, &all_ex, None, &final_cfg, &mut adam)?;

    progress("paired fog test");
    let (clear, fog) = fog_pairs(&cfg.corpus, &cfg.fog_test)?;
    let t = fit_all_thresholds(&index, &means)?;
    let baseline_fog = WeatherAccuracy {
        clear: baseline_video_accuracy(&clear, &cfg.blob, &t)?,
        fog: baseline_video_accuracy(&fog, &cfg.blob, &t)?,
    };
    let transfer_fog = WeatherAccuracy {
        clear: model_video_accuracy(&final_model, &clear, &cfg.preprocess, cfg.mirror_augment)?,
        fog: model_video_accuracy(&final_model, &fog, &cfg.preprocess, cfg.mirror_augment)?,
    };

    progress("PCA of transfer values");
    let end = final_model.layer_index(&cfg.transfer_layer)? + 1;
    if end <= start {
        return Err(Error::InvalidParam(format!(
            "transfer layer `{}` lies inside the frozen prefix",
            cfg.transfer_layer
        )));
    }
    let tv = final_model.forward_range_batched(&feats, start, end, INFERENCE_BATCH)?;
    let d = tv.sample_len();
    let x: Vec<f64> = tv.data().iter().map(|&v| v as f64).collect();
    let pca = pca_fit(&x, index.len(), d)?;
    let point_labels: Vec<Label> = index.samples.iter().map(|s| s.label).collect();
    let low_vs_rest = separation_metric(&pca.projected, &point_labels, &[Label::Low], &[Label::Medium, Label::Heavy])?;
    let medium_vs_heavy = separation_metric(&pca.projected, &point_labels, &[Label::Medium], &[Label::Heavy])?;

    Ok(ExperimentReport {
        pretrain_history,
        fold_histories,
        transfer_cv,
        baseline_cv,
        baseline_fog,
        transfer_fog,
        separation: SeparationReport {
            low_vs_rest,
            medium_vs_heavy,
            pca,
            labels: point_labels,
        },
        trainable: base.trainable_names(),
        source_model: source,
        final_model,
    })
}

/// Argmax class of each row of a probability tensor.
pub fn predicted_labels(probs: &Tensor<f32>) -> Vec<Label> {
    let k = probs.dims()[1];
    probs.data().chunks(k).map(|r| Label::ALL[argmax(r)]).collect()
}
