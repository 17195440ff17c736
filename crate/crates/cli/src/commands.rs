use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use trafficnet::analysis::{extract_transfer_values, pca_fit, scatter_csv, scatter_svg, separation_metric};
use trafficnet::baseline::{counts_csv, BlobConfig};
use trafficnet::data::dataset::{load_directory_dataset, DatasetIndex};
use trafficnet::data::image::PreprocessMode;
use trafficnet::data::split::{make_splits, SplitKind, SplitMode, SplitPlan, Splits};
use trafficnet::eval::{
    diagnostic_rows, emit_report, render_diagnostic_table, render_model_table, ConfusionMatrix, CvResult, ModelRow,
    ReportFormat,
};
use trafficnet::experiment::{baseline_cv, fit_all_thresholds, mirrored_index, prefix_features, transfer_cv, video_means};
use trafficnet::optim::{argmax, evaluate, fit, Evaluation, TrainConfig, INFERENCE_BATCH};
use trafficnet::synth::{generate_corpus_videos, generate_tercile_videos, write_corpus, CorpusConfig, SceneConfig, WeatherMix};
use trafficnet::{Arch, ArchParams, Label, Model, Rng, TrainPolicy};

use crate::config::{Pair, RunConfig, Schema, Triple, CONFIG_FILE};
use crate::CliError;

type Res<T> = Result<T, CliError>;

/// Where a command writes and how it was configured.
pub struct Run {
    pub out: PathBuf,
    pub config: RunConfig,
}

impl Run {
    /// Validate, create the output directory and record the resolved config.
    fn start(mut self) -> Res<Self> {
        self.config.finish()?;
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        self.write(CONFIG_FILE, &self.config.to_text())?;
        Ok(self)
    }

    fn write(&self, name: &str, content: &str) -> Res<()> {
        Ok(emit_report(content, &self.out.join(name))?)
    }
}

fn ext(fmt: ReportFormat) -> &'static str {
    match fmt {
        ReportFormat::Csv => "csv",
        ReportFormat::Markdown => "md",
    }
}

/// `1234567` as `1,234,567`.
pub fn group_digits(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

// ---- synth ----

pub fn synth_schema() -> Schema {
    let c = CorpusConfig::default();
    let s = &c.scene;
    let pair = |p: (usize, usize)| Pair(p.0, p.1).to_string();
    vec![
        ("seed", c.seed.to_string()),
        ("task", "classes".into()),
        ("videos_per_class", Triple(c.videos_per_class).to_string()),
        ("source_videos", "3000".into()),
        ("frames_per_video", c.frames_per_video.to_string()),
        ("height", s.height.to_string()),
        ("width", s.width.to_string()),
        ("lanes", s.lanes.to_string()),
        ("lane_pitch", s.lane_pitch.to_string()),
        ("count_low", pair(s.count_ranges[0])),
        ("count_medium", pair(s.count_ranges[1])),
        ("count_heavy", pair(s.count_ranges[2])),
        ("vehicle_height", pair(s.vehicle_height)),
        ("vehicle_length", pair(s.vehicle_length)),
        ("overlap_probability", s.overlap_probability.to_string()),
        ("max_overlap", s.max_overlap.to_string()),
        ("non_overlapping", s.non_overlapping.to_string()),
        ("weather_fraction", c.weather.fraction.to_string()),
        ("fog_density", Pair(c.weather.fog_density.0, c.weather.fog_density.1).to_string()),
    ]
}

pub fn synth(run: Run) -> Res<()> {
    let mut run = run;
    let c = &mut run.config;
    let d = CorpusConfig::default();
    let task: String = c.get("task");
    let tercile = match task.as_str() {
        "classes" => false,
        "count_tercile" => true,
        other => {
            c.check(Err(format!("`task`: expected classes or count_tercile, got `{other}`")));
            false
        }
    };
    let range = |c: &mut RunConfig, k: &str| {
        let Pair(a, b) = c.get::<Pair<usize>>(k);
        (a, b)
    };
    let scene = SceneConfig {
        height: c.get("height"),
        width: c.get("width"),
        lanes: c.get("lanes"),
        lane_pitch: c.get("lane_pitch"),
        count_ranges: [range(c, "count_low"), range(c, "count_medium"), range(c, "count_heavy")],
        vehicle_height: range(c, "vehicle_height"),
        vehicle_length: range(c, "vehicle_length"),
        overlap_probability: c.get("overlap_probability"),
        max_overlap: c.get("max_overlap"),
        non_overlapping: c.get("non_overlapping"),
        ..d.scene.clone()
    };
    let Pair(fog_lo, fog_hi) = c.get::<Pair<f64>>("fog_density");
    let cfg = CorpusConfig {
        videos_per_class: c.get::<Triple<usize>>("videos_per_class").0,
        frames_per_video: c.get("frames_per_video"),
        scene,
        weather: WeatherMix {
            fraction: c.get("weather_fraction"),
            fog_density: (fog_lo, fog_hi),
            ..d.weather
        },
        seed: c.get("seed"),
    };
    let source_videos: usize = c.get("source_videos");
    c.check(cfg.scene.validate());
    if cfg.frames_per_video == 0 {
        c.check(Err("`frames_per_video` must be >= 1"));
    }
    let run = run.start()?;
    let videos = if tercile {
        generate_tercile_videos(&cfg, source_videos)?
    } else {
        generate_corpus_videos(&cfg)?
    };
    write_corpus(&videos, &run.out)?;
    eprintln!("wrote {} videos to {}", videos.len(), run.out.display());
    Ok(())
}

// ---- train / transfer ----

fn model_keys(arch: &str) -> Schema {
    vec![
        ("data", String::new()),
        ("arch", arch.into()),
        ("num_dense_nodes", String::new()),
        ("preprocess", PreprocessMode::ScalePm1.to_string()),
        ("seed", "7".into()),
    ]
}

fn fit_keys(trainable: &str, lr: &str) -> Schema {
    let t = TrainConfig::default();
    vec![
        ("trainable", trainable.into()),
        ("batch_size", t.batch_size.to_string()),
        ("epochs", t.epochs.to_string()),
        ("steps_per_epoch", String::new()),
        ("learning_rate", lr.into()),
        ("report_format", "markdown".into()),
    ]
}

pub fn train_schema() -> Schema {
    let mut s = model_keys("VGG_S");
    s.extend(fit_keys("all", "0.001"));
    s.extend([
        ("split_mode", "by_video".to_string()),
        ("split_train", "0.7".into()),
        ("split_val", "0.15".into()),
        ("split_test", "0.15".into()),
    ]);
    s
}

pub fn transfer_schema() -> Schema {
    let mut s = train_schema();
    s.insert(1, ("source", String::new()));
    for kv in s.iter_mut() {
        match kv.0 {
            "trainable" => kv.1 = "last_5".into(),
            "learning_rate" => kv.1 = "0.0005".into(),
            _ => {}
        }
    }
    s
}

struct ModelSetup {
    data: PathBuf,
    arch: Arch,
    params: ArchParams,
    preprocess: PreprocessMode,
    seed: u64,
}

fn model_setup(c: &mut RunConfig) -> ModelSetup {
    ModelSetup {
        data: c.path("data"),
        arch: c.get_or("arch", Arch::VggS),
        params: ArchParams {
            num_dense_nodes: c.opt("num_dense_nodes"),
            ..Default::default()
        },
        preprocess: c.get_or("preprocess", PreprocessMode::ScalePm1),
        seed: c.get("seed"),
    }
}

struct FitSetup {
    policy: TrainPolicy,
    train: TrainConfig,
    format: ReportFormat,
}

fn fit_setup(c: &mut RunConfig, seed: u64) -> FitSetup {
    let train = TrainConfig {
        batch_size: c.get("batch_size"),
        epochs: c.get("epochs"),
        steps_per_epoch: c.opt("steps_per_epoch"),
        learning_rate: c.get("learning_rate"),
        seed: Rng::new(seed).derive_str("fit").seed(),
        shuffle: true,
    };
    c.check(train.validate());
    FitSetup {
        policy: c.get_or("trainable", TrainPolicy::All),
        train,
        format: c.get_or("report_format", ReportFormat::Markdown),
    }
}

fn holdout_plan(c: &mut RunConfig, seed: u64) -> SplitPlan {
    let plan = SplitPlan {
        mode: c.get_or("split_mode", SplitMode::ByVideo),
        kind: SplitKind::Holdout {
            train: c.get("split_train"),
            val: c.get("split_val"),
            test: c.get("split_test"),
        },
        seed,
    };
    c.check(plan.validate());
    plan
}

fn build(m: &ModelSetup) -> Res<Model<f32>> {
    Ok(m.arch.build::<f32>(&m.params, &Rng::new(m.seed).derive_str("init"))?)
}

fn hyper_parameters(m: &Model<f32>, params: &ArchParams, f: &FitSetup) -> String {
    let mut s = format!(
        "lr={}, batch_size={}, epochs={}, trainable_layers={}",
        f.train.learning_rate,
        f.train.batch_size,
        f.train.epochs,
        m.trainable_names().len()
    );
    if let Some(n) = params.num_dense_nodes {
        s = format!("num_dense_nodes={n}, {s}");
    }
    s
}

fn input_size(m: &Model<f32>) -> (usize, usize) {
    (m.input_shape()[0], m.input_shape()[1])
}

fn eval_split(m: &Model<f32>, index: &DatasetIndex, idx: &[usize], mode: &PreprocessMode) -> Res<Option<Evaluation>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let ex = index.examples(idx, input_size(m), mode)?;
    Ok(Some(evaluate(m, &ex, INFERENCE_BATCH)?))
}

fn train_common(run: Run, mut model: Model<f32>, ms: &ModelSetup, fs: &FitSetup, plan: &SplitPlan) -> Res<()> {
    let index = load_directory_dataset(&ms.data)?;
    let Splits::Holdout { train, val, test } = make_splits(&index, plan)? else {
        unreachable!("holdout plan")
    };
    model.set_trainable(&fs.policy)?;
    let size = input_size(&model);
    let train_ex = index.examples(&train, size, &ms.preprocess)?;
    let val_ex = if val.is_empty() {
        None
    } else {
        Some(index.examples(&val, size, &ms.preprocess)?)
    };
    let history = fit(&mut model, &train_ex, val_ex.as_ref(), &fs.train)?;
    drop((train_ex, val_ex));

    let acc = |e: &Option<Evaluation>| e.as_ref().map(|e| e.accuracy);
    let tr = eval_split(&model, &index, &train, &ms.preprocess)?;
    let va = eval_split(&model, &index, &val, &ms.preprocess)?;
    let te = eval_split(&model, &index, &test, &ms.preprocess)?;
    let row = ModelRow {
        model: ms.arch.id().into(),
        hyper_parameters: hyper_parameters(&model, &ms.params, fs),
        train: acc(&tr),
        validation: acc(&va),
        test_cv: acc(&te),
    };
    model.save_weights(&run.out.join("weights.nnwt"))?;
    run.write("history.csv", &history.to_csv())?;
    run.write(&format!("table1.{}", ext(fs.format)), &render_model_table(&[row], fs.format))?;
    if let Some(te) = &te {
        let truth: Vec<usize> = test.iter().map(|&i| index.samples[i].label.index()).collect();
        let cm = ConfusionMatrix::from_indices(&truth, &te.predictions)?;
        run.write("confusion_test.csv", &cm.to_csv())?;
    }
    let mut m = String::new();
    let _ = writeln!(m, "train_samples={}\nval_samples={}\ntest_samples={}", train.len(), val.len(), test.len());
    for (k, e) in [("train", &tr), ("val", &va), ("test", &te)] {
        if let Some(e) = e {
            let _ = writeln!(m, "{k}_accuracy={:.6}\n{k}_loss={:.6}", e.accuracy, e.loss);
        }
    }
    run.write("metrics.txt", &m)
}

pub fn train(mut run: Run) -> Res<()> {
    let c = &mut run.config;
    let ms = model_setup(c);
    let fs = fit_setup(c, ms.seed);
    let plan = holdout_plan(c, ms.seed);
    let run = run.start()?;
    let model = build(&ms)?;
    train_common(run, model, &ms, &fs, &plan)
}

pub fn render_import(r: &trafficnet::model::ImportReport) -> String {
    format!(
        "matched={}\nmodel_only={}\nfile_only={}\n",
        r.matched.join(","),
        r.model_only.join(","),
        r.file_only.join(",")
    )
}

pub fn transfer(mut run: Run) -> Res<()> {
    let c = &mut run.config;
    let source = c.path("source");
    let ms = model_setup(c);
    let fs = fit_setup(c, ms.seed);
    let plan = holdout_plan(c, ms.seed);
    let run = run.start()?;
    let mut model = build(&ms)?;
    let report = model.import_by_name(&source)?;
    run.write("import.txt", &render_import(&report))?;
    train_common(run, model, &ms, &fs, &plan)
}

// ---- eval ----

pub fn eval_schema() -> Schema {
    let mut s = model_keys("VGG_S");
    s.insert(1, ("weights", String::new()));
    s.extend(fit_keys("last_5", "0.0005"));
    s.extend([
        ("folds", "10".to_string()),
        ("split_mode", "by_video".into()),
        ("mirror_augment", "true".into()),
    ]);
    s
}

fn kfold_plan(c: &mut RunConfig, seed: u64) -> SplitPlan {
    let plan = SplitPlan::kfold(c.get("folds"), c.get_or("split_mode", SplitMode::ByVideo), seed);
    c.check(plan.validate());
    plan
}

/// Frame-level (with test batch counts) and video-level pairwise tables plus
/// pooled matrices.
fn write_cv_reports(run: &Run, cv: &CvResult, batch: usize, fmt: ReportFormat) -> Res<Vec<String>> {
    let batches: usize = cv.folds.iter().map(|f| f.test.len().div_ceil(batch)).sum();
    let (frame_rows, e1) = diagnostic_rows(&cv.pooled, Some(batches));
    let (video_rows, e2) = diagnostic_rows(&cv.pooled_video, None);
    run.write(&format!("table2.{}", ext(fmt)), &render_diagnostic_table(&frame_rows, true, fmt))?;
    run.write(&format!("table3.{}", ext(fmt)), &render_diagnostic_table(&video_rows, false, fmt))?;
    run.write("confusion_frames.csv", &cv.pooled.to_csv())?;
    run.write("confusion_videos.csv", &cv.pooled_video.to_csv())?;
    let mut folds = String::from("fold,seed,test_samples,accuracy\n");
    for f in &cv.folds {
        let _ = writeln!(folds, "{},{},{},{:.6}", f.fold, f.seed, f.test.len(), f.accuracy);
    }
    run.write("folds.csv", &folds)?;
    Ok(e1.iter().chain(&e2).map(|e| e.to_string()).collect())
}

fn predictions_csv(index: &DatasetIndex, cv: &CvResult) -> String {
    let mut s = String::from("video_id,frame_index,label,predicted,p_low,p_medium,p_heavy\n");
    for (i, p) in cv.sample_probs(index.len()).iter().enumerate() {
        if let Some(p) = p {
            let smp = &index.samples[i];
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.6}",
                smp.video_id,
                smp.frame_index,
                smp.label,
                Label::ALL[argmax(p)],
                p[0],
                p[1],
                p[2]
            );
        }
    }
    s
}

fn metrics_text(cv: &CvResult, notes: &[String]) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "mean_accuracy={:.6}\nstd_accuracy={:.6}", cv.mean_accuracy, cv.std_accuracy);
    for (k, cm) in [("frame", &cv.pooled), ("video", &cv.pooled_video)] {
        let _ = writeln!(m, "pooled_{k}_accuracy={:.6}", cm.accuracy().unwrap_or(f64::NAN));
    }
    for n in notes {
        let _ = writeln!(m, "note={n}");
    }
    m
}

pub fn eval(mut run: Run) -> Res<()> {
    let c = &mut run.config;
    let weights = c.path("weights");
    let ms = model_setup(c);
    let fs = fit_setup(c, ms.seed);
    let plan = kfold_plan(c, ms.seed);
    let mirror: bool = c.get("mirror_augment");
    let run = run.start()?;

    let index = load_directory_dataset(&ms.data)?;
    let mut base = build(&ms)?;
    base.load_weights(&weights)?;
    base.set_trainable(&fs.policy)?;
    let start = base
        .first_trainable()
        .ok_or_else(|| CliError::config("`trainable` selects no layer".into()))?;
    let all: Vec<usize> = (0..index.len()).collect();
    let feats = prefix_features(&base, start, &index, &all, &ms.preprocess)?;
    let extra = if mirror {
        vec![prefix_features(&base, start, &mirrored_index(&index)?, &all, &ms.preprocess)?]
    } else {
        Vec::new()
    };
    let (cv, histories) = transfer_cv(&base, &feats, &extra, &index, &plan, &fs.train)?;

    let train_acc: Vec<f64> = histories.iter().filter_map(|h| h.epochs.last()).map(|e| e.acc).collect();
    let row = ModelRow {
        model: ms.arch.id().into(),
        hyper_parameters: hyper_parameters(&base, &ms.params, &fs),
        train: (!train_acc.is_empty()).then(|| train_acc.iter().sum::<f64>() / train_acc.len() as f64),
        validation: None,
        test_cv: Some(cv.mean_accuracy),
    };
    run.write(&format!("table1.{}", ext(fs.format)), &render_model_table(&[row], fs.format))?;
    let notes = write_cv_reports(&run, &cv, fs.train.batch_size, fs.format)?;
    run.write("predictions.csv", &predictions_csv(&index, &cv))?;
    run.write("metrics.txt", &metrics_text(&cv, &notes))
}

// ---- baseline ----

pub fn baseline_schema() -> Schema {
    let b = BlobConfig::default();
    vec![
        ("data", String::new()),
        ("seed", "7".into()),
        ("blob_threshold", b.threshold.to_string()),
        ("min_area", b.min_area.to_string()),
        ("folds", "10".into()),
        ("split_mode", "by_video".into()),
        ("report_format", "markdown".into()),
    ]
}

pub fn baseline(mut run: Run) -> Res<()> {
    let c = &mut run.config;
    let data = c.path("data");
    let seed: u64 = c.get("seed");
    let blob = BlobConfig {
        threshold: c.get("blob_threshold"),
        min_area: c.get("min_area"),
    };
    let plan = kfold_plan(c, seed);
    if plan.mode != SplitMode::ByVideo {
        c.check(Err("`split_mode`: the count baseline classifies whole videos, use by_video"));
    }
    let fmt = c.get_or("report_format", ReportFormat::Markdown);
    let run = run.start()?;

    let index = load_directory_dataset(&data)?;
    let means = video_means(&index, &blob)?;
    let rows: Vec<(String, Label, f64)> = means
        .iter()
        .map(|(id, &m)| (id.clone(), index.video_label(id).expect("indexed video"), m))
        .collect();
    run.write("counts.csv", &counts_csv(&rows))?;
    let t = fit_all_thresholds(&index, &means)?;
    run.write("thresholds.txt", &format!("t1={}\nt2={}\n", t.t1, t.t2))?;
    let cv = baseline_cv(&index, &means, &plan)?;
    let notes = write_cv_reports(&run, &cv, INFERENCE_BATCH, fmt)?;
    run.write("metrics.txt", &metrics_text(&cv, &notes))
}

// ---- pca ----

pub fn pca_schema() -> Schema {
    let mut s = model_keys("VGG_S");
    s.insert(1, ("weights", String::new()));
    s.push(("layer", "flatten".into()));
    s
}

pub const VALUES_FILE: &str = "transfer_values.nnwt";

pub fn pca(mut run: Run) -> Res<()> {
    let c = &mut run.config;
    let weights = c.path("weights");
    let ms = model_setup(c);
    let layer: String = c.get("layer");
    let run = run.start()?;

    let index = load_directory_dataset(&ms.data)?;
    let mut model = build(&ms)?;
    model.load_weights(&weights)?;
    let all: Vec<usize> = (0..index.len()).collect();
    let tv = extract_transfer_values(
        &model,
        &layer,
        &index,
        &all,
        input_size(&model),
        &ms.preprocess,
        Some(&run.out.join(VALUES_FILE)),
    )?;
    let p = pca_fit(&tv.to_f64(), tv.rows(), tv.width())?;
    run.write("scatter.csv", &scatter_csv(&p.projected, &tv.labels)?)?;
    let title = format!("{} {} transfer values", ms.arch.id(), layer);
    run.write("scatter.svg", &scatter_svg(&p.projected, &tv.labels, &title)?)?;

    let mut m = String::new();
    let _ = writeln!(
        m,
        "samples={}\nwidth={}\nexplained_variance_1={:.9e}\nexplained_variance_2={:.9e}",
        tv.rows(),
        tv.width(),
        p.explained_variance[0],
        p.explained_variance[1]
    );
    let groups: [(&str, &[Label], &[Label]); 2] = [
        ("low_vs_rest", &[Label::Low], &[Label::Medium, Label::Heavy]),
        ("medium_vs_heavy", &[Label::Medium], &[Label::Heavy]),
    ];
    for (k, a, b) in groups {
        match separation_metric(&p.projected, &tv.labels, a, b) {
            Ok(v) => {
                let _ = writeln!(m, "separation_{k}={v:.9}");
            }
            Err(e) => {
                let _ = writeln!(m, "note=separation_{k}: {e}");
            }
        }
    }
    run.write("pca.txt", &m)
}

// ---- inspect ----

pub struct InspectTarget {
    pub arch: Arch,
    pub params: ArchParams,
    pub weights: Option<PathBuf>,
    pub trainable: Option<TrainPolicy>,
}

/// Read `arch`, `num_dense_nodes` and `trainable` from a run's recorded
/// config; its `weights.nnwt` is used when present.
pub fn inspect_target_from_run(dir: &Path) -> Res<InspectTarget> {
    let kv: BTreeMap<String, String> = crate::config::read_file(&dir.join(CONFIG_FILE))?.into_iter().collect();
    let arch = kv
        .get("arch")
        .ok_or_else(|| CliError::config(format!("{} has no `arch`", dir.join(CONFIG_FILE).display())))?
        .parse::<Arch>()?;
    let num_dense_nodes = match kv.get("num_dense_nodes").map(String::as_str) {
        None | Some("") => None,
        Some(v) => Some(v.parse().map_err(|_| CliError::config(format!("`num_dense_nodes`: bad value `{v}`")))?),
    };
    let trainable = kv.get("trainable").map(|t| t.parse()).transpose()?;
    let w = dir.join("weights.nnwt");
    Ok(InspectTarget {
        arch,
        params: ArchParams {
            num_dense_nodes,
            ..Default::default()
        },
        weights: w.exists().then_some(w),
        trainable,
    })
}

pub fn render_inspect(model: &Model<f32>) -> String {
    let counts = model.count_params();
    let mut s = format!(
        "{} input {}\n| Layer | Kind | Output | Params | Trainable |\n|---|---|---|---|---|\n",
        model.name(),
        shape_text(model.input_shape())
    );
    for l in &counts.per_layer {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            l.name,
            l.kind,
            shape_text(&l.output_shape),
            group_digits(l.params),
            if l.params == 0 {
                "-"
            } else if l.trainable {
                "yes"
            } else {
                "no"
            }
        );
    }
    let _ = writeln!(
        s,
        "total_params={}\ntrainable_params={}\nfrozen_params={}",
        group_digits(counts.total),
        group_digits(counts.trainable),
        group_digits(counts.frozen())
    );
    s
}

fn shape_text(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("×")
}

pub fn inspect(t: &InspectTarget) -> Res<String> {
    let mut model = t.arch.build::<f32>(&t.params, &Rng::new(0))?;
    if let Some(w) = &t.weights {
        model.load_weights(w)?;
    }
    if let Some(p) = &t.trainable {
        model.set_trainable(p)?;
    }
    let mut text = render_inspect(&model);
    if t.arch == Arch::Vgg19Trunc {
        let full = spec_param_total(Arch::Vgg19)? as f64;
        let counts = model.count_params();
        let _ = writeln!(
            text,
            "total_reduction_vs_VGG19={:.2}%\ntrainable_reduction_vs_VGG19={:.2}%",
            100.0 * (1.0 - counts.total as f64 / full),
            100.0 * (1.0 - counts.trainable as f64 / full)
        );
    }
    Ok(text)
}

/// Parameter total of an architecture from its layer specs alone.
fn spec_param_total(arch: Arch) -> Res<usize> {
    let mut shape = arch.input_shape().to_vec();
    let mut total = 0;
    for spec in arch.layer_specs(&ArchParams::default())? {
        total += spec.param_count(&shape);
        shape = spec.output_shape(&shape)?;
    }
    Ok(total)
}
