//! Confusion matrices, pairwise diagnostics, k-fold cross-validation and
//! report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::dataset::DatasetIndex;
use crate::data::image::PreprocessMode;
use crate::data::split::{make_splits, SplitKind, SplitPlan, Splits};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::model::Model;
use crate::optim::{argmax, evaluate, fit, TrainConfig};
use crate::par;
use crate::rng::mix;

/// Rows are true labels, columns predictions, both in `Label::ALL` order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[Label], predicted: &[Label]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::InvalidParam(format!(
                "{} true labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::default();
        for (t, p) in truth.iter().zip(predicted) {
            cm.counts[t.index()][p.index()] += 1;
        }
        Ok(cm)
    }

    pub fn from_indices(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        let conv = |v: &[usize]| v.iter().map(|&i| Label::from_index(i)).collect::<Result<Vec<_>>>();
        Self::from_labels(&conv(truth)?, &conv(predicted)?)
    }

    pub fn get(&self, truth: Label, predicted: Label) -> usize {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn row_total(&self, truth: Label) -> usize {
        self.counts[truth.index()].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.trace() as f64 / n as f64)
    }

    /// Off-diagonal mass between two classes in both directions.
    pub fn confusion_between(&self, a: Label, b: Label) -> usize {
        self.get(a, b) + self.get(b, a)
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for i in 0..3 {
            for j in 0..3 {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true,Low,Medium,Heavy\n");
        for l in Label::ALL {
            let r = self.counts[l.index()];
            let _ = writeln!(s, "{l},{},{},{}", r[0], r[1], r[2]);
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| True \\ Predicted | Low | Medium | Heavy |\n|---|---|---|---|\n");
        for l in Label::ALL {
            let r = self.counts[l.index()];
            let _ = writeln!(s, "| {l} | {} | {} | {} |", r[0], r[1], r[2]);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseDiagnostics {
    /// Positive class.
    pub a: Label,
    pub b: Label,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

pub const PAIRS: [(Label, Label); 3] = [
    (Label::Low, Label::Medium),
    (Label::Low, Label::Heavy),
    (Label::Medium, Label::Heavy),
];

/// Metrics over the rows of `a` and `b`, with `a` positive. Predictions of
/// the third class count as errors for their true row.
pub fn pairwise_diagnostics(cm: &ConfusionMatrix, a: Label, b: Label) -> Result<PairwiseDiagnostics> {
    if a == b {
        return Err(Error::InvalidParam(format!("pair needs two distinct classes, got {a} twice")));
    }
    let (na, nb) = (cm.row_total(a), cm.row_total(b));
    for (l, n) in [(a, na), (b, nb)] {
        if n == 0 {
            return Err(Error::UndefinedMetric(l.to_string()));
        }
    }
    let (ta, tb) = (cm.get(a, a), cm.get(b, b));
    Ok(PairwiseDiagnostics {
        a,
        b,
        sensitivity: ta as f64 / na as f64,
        specificity: tb as f64 / nb as f64,
        accuracy: (ta + tb) as f64 / (na + nb) as f64,
    })
}

/// Work handed to a fold runner.
#[derive(Debug, Clone, Copy)]
pub struct FoldTask<'a> {
    pub fold: usize,
    /// `mix(run seed, fold)`.
    pub seed: u64,
    pub train: &'a [usize],
    pub test: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub test: Vec<usize>,
    pub probs: Vec<[f64; 3]>,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub video_confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Sample standard deviation of fold accuracies (0 for one fold).
    pub std_accuracy: f64,
    /// Frame-level matrix summed over folds.
    pub pooled: ConfusionMatrix,
    /// Video-level matrix summed over folds.
    pub pooled_video: ConfusionMatrix,
}

impl CvResult {
    pub fn fold_accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }

    /// Per-sample probabilities in dataset order.
    pub fn sample_probs(&self, n: usize) -> Vec<Option<[f64; 3]>> {
        let mut out = vec![None; n];
        for f in &self.folds {
            for (&i, p) in f.test.iter().zip(&f.probs) {
                out[i] = Some(*p);
            }
        }
        out
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Video-level labels: each video is assigned the argmax of its mean frame
/// probabilities. Returns `(video_id, truth, predicted)` sorted by id.
pub fn video_predictions(index: &DatasetIndex, samples: &[usize], probs: &[[f64; 3]]) -> Vec<(String, Label, Label)> {
    let mut acc: BTreeMap<&str, ([f64; 3], usize, Label)> = BTreeMap::new();
    for (&i, p) in samples.iter().zip(probs) {
        let s = &index.samples[i];
        let e = acc.entry(&s.video_id).or_insert(([0.0; 3], 0, s.label));
        for k in 0..3 {
            e.0[k] += p[k];
        }
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(id, (sum, n, truth))| {
            let mean = sum.map(|v| v / n as f64);
            (id.to_string(), truth, Label::ALL[argmax(&mean)])
        })
        .collect()
}

fn score_fold(index: &DatasetIndex, task: &FoldTask<'_>, probs: Vec<[f64; 3]>) -> Result<FoldResult> {
    if probs.len() != task.test.len() {
        return Err(Error::InvalidParam(format!(
            "fold {} runner returned {} predictions for {} test samples",
            task.fold,
            probs.len(),
            task.test.len()
        )));
    }
    let truth: Vec<Label> = task.test.iter().map(|&i| index.samples[i].label).collect();
    let pred: Vec<Label> = probs.iter().map(|p| Label::ALL[argmax(p)]).collect();
    let confusion = ConfusionMatrix::from_labels(&truth, &pred)?;
    let videos = video_predictions(index, task.test, &probs);
    let (vt, vp): (Vec<Label>, Vec<Label>) = videos.iter().map(|(_, t, p)| (*t, *p)).unzip();
    Ok(FoldResult {
        fold: task.fold,
        seed: task.seed,
        test: task.test.to_vec(),
        probs,
        accuracy: confusion.accuracy().unwrap_or(f64::NAN),
        confusion,
        video_confusion: ConfusionMatrix::from_labels(&vt, &vp)?,
    })
}

/// k-fold cross-validation. `run` trains on `task.train` and returns class
/// probabilities for each sample of `task.test`, in order. Folds run
/// independently; results are ordered by fold index.
pub fn cross_validate<F>(index: &DatasetIndex, plan: &SplitPlan, run: F) -> Result<CvResult>
where
    F: Fn(&FoldTask<'_>) -> Result<Vec<[f64; 3]>> + Sync + Send,
{
    if !matches!(plan.kind, SplitKind::KFold { .. }) {
        return Err(Error::Split("cross-validation needs a kfold split plan".into()));
    }
    let Splits::Folds(folds) = make_splits(index, plan)? else {
        return Err(Error::Split("kfold plan produced a holdout split".into()));
    };
    let k = folds.len();
    let results = par::try_map_range(k, |f| {
        let mut train: Vec<usize> = (0..k).filter(|&g| g != f).flat_map(|g| folds[g].iter().copied()).collect();
        train.sort_unstable();
        let task = FoldTask {
            fold: f,
            seed: mix(plan.seed, f as u64),
            train: &train,
            test: &folds[f],
        };
        let probs = run(&task)?;
        score_fold(index, &task, probs)
    })?;
    let (mean_accuracy, std_accuracy) = mean_std(&results.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let mut pooled = ConfusionMatrix::default();
    let mut pooled_video = ConfusionMatrix::default();
    for r in &results {
        pooled.add(&r.confusion);
        pooled_video.add(&r.video_confusion);
    }
    Ok(CvResult {
        folds: results,
        mean_accuracy,
        std_accuracy,
        pooled,
        pooled_video,
    })
}

/// Rows of an `[n, 3]` probability buffer.
pub fn prob_rows(flat: &[f64]) -> Vec<[f64; 3]> {
    flat.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect()
}

/// Cross-validate a model family end to end: `build(seed)` gives a fresh
/// model per fold, trained with `cfg` (its seed replaced by the fold seed).
pub fn cross_validate_model<B>(
    index: &DatasetIndex,
    plan: &SplitPlan,
    build: B,
    cfg: &TrainConfig,
    size: (usize, usize),
    mode: &PreprocessMode,
) -> Result<CvResult>
where
    B: Fn(u64) -> Result<Model<f32>> + Sync + Send,
{
    cross_validate(index, plan, |task| {
        let mut model = build(task.seed)?;
        if model.output_shape() != [3] {
            return Err(Error::Shape(format!(
                "model must output 3 classes, got {:?}",
                model.output_shape()
            )));
        }
        let train = index.examples(task.train, size, mode)?;
        let test = index.examples(task.test, size, mode)?;
        let fold_cfg = TrainConfig {
            seed: task.seed,
            ..cfg.clone()
        };
        fit(&mut model, &train, None, &fold_cfg)?;
        Ok(prob_rows(&evaluate(&model, &test, 64)?.probs))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::InvalidParam(format!("unknown report format `{s}`"))),
        }
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

fn pct_opt(v: Option<f64>) -> String {
    v.map(pct).unwrap_or_else(|| "-".into())
}

fn num(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn num_opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRow {
    pub model: String,
    pub hyper_parameters: String,
    pub train: Option<f64>,
    pub validation: Option<f64>,
    pub test_cv: Option<f64>,
}

/// Model | Hyper Parameters | Train | Validation | Test(CV).
pub fn render_model_table(rows: &[ModelRow], format: ReportFormat) -> String {
    let mut s = String::new();
    match format {
        ReportFormat::Markdown => {
            s.push_str("| Model | Hyper Parameters | Train | Validation | Test(CV) |\n|---|---|---|---|---|\n");
            for r in rows {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} |",
                    r.model,
                    r.hyper_parameters,
                    pct_opt(r.train),
                    pct_opt(r.validation),
                    pct_opt(r.test_cv)
                );
            }
        }
        ReportFormat::Csv => {
            s.push_str("model,hyper_parameters,train,validation,test_cv\n");
            for r in rows {
                let _ = writeln!(
                    s,
                    "{},\"{}\",{},{},{}",
                    r.model,
                    r.hyper_parameters.replace('"', "'"),
                    num_opt(r.train),
                    num_opt(r.validation),
                    num_opt(r.test_cv)
                );
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub pair: (Label, Label),
    pub batches: Option<usize>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

impl DiagnosticRow {
    pub fn from_diagnostics(d: &PairwiseDiagnostics, batches: Option<usize>) -> Self {
        Self {
            pair: (d.a, d.b),
            batches,
            sensitivity: d.sensitivity,
            specificity: d.specificity,
            accuracy: d.accuracy,
        }
    }
}

/// Pair-Labels | [#batches |] Sensitivity | Specificity | Accuracy.
pub fn render_diagnostic_table(rows: &[DiagnosticRow], with_batches: bool, format: ReportFormat) -> String {
    let mut s = String::new();
    let batches = |r: &DiagnosticRow| r.batches.map(|b| b.to_string()).unwrap_or_default();
    match format {
        ReportFormat::Markdown => {
            if with_batches {
                s.push_str("| Pair-Labels | #batches | Sensitivity | Specificity | Accuracy |\n|---|---|---|---|---|\n");
            } else {
                s.push_str("| Pair-Labels | Sensitivity | Specificity | Accuracy |\n|---|---|---|---|\n");
            }
            for r in rows {
                let _ = write!(s, "| {}-{} |", r.pair.0, r.pair.1);
                if with_batches {
                    let _ = write!(s, " {} |", batches(r));
                }
                let _ = writeln!(s, " {} | {} | {} |", pct(r.sensitivity), pct(r.specificity), pct(r.accuracy));
            }
        }
        ReportFormat::Csv => {
            s.push_str(if with_batches {
                "pair,batches,sensitivity,specificity,accuracy\n"
            } else {
                "pair,sensitivity,specificity,accuracy\n"
            });
            for r in rows {
                let _ = write!(s, "{}-{},", r.pair.0, r.pair.1);
                if with_batches {
                    let _ = write!(s, "{},", batches(r));
                }
                let _ = writeln!(s, "{},{},{}", num(r.sensitivity), num(r.specificity), num(r.accuracy));
            }
        }
    }
    s
}

/// Diagnostic rows for every pair that is defined on `cm`; undefined pairs
/// are returned separately as errors.
pub fn diagnostic_rows(cm: &ConfusionMatrix, batches: Option<usize>) -> (Vec<DiagnosticRow>, Vec<Error>) {
    let mut rows = Vec::new();
    let mut errs = Vec::new();
    for (a, b) in PAIRS {
        match pairwise_diagnostics(cm, a, b) {
            Ok(d) => rows.push(DiagnosticRow::from_diagnostics(&d, batches)),
            Err(e) => errs.push(e),
        }
    }
    (rows, errs)
}

pub fn emit_report(content: &str, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}
