//! Holdout and k-fold split plans over videos or frames.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::dataset::DatasetIndex;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    ByVideo,
    ByFrame,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::ByVideo => "by_video",
            SplitMode::ByFrame => "by_frame",
        }
    }
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "by_video" => Ok(SplitMode::ByVideo),
            "by_frame" => Ok(SplitMode::ByFrame),
            other => Err(Error::Split(format!("unknown split mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitKind {
    Holdout { train: f64, val: f64, test: f64 },
    KFold { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub kind: SplitKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Splits {
    Holdout {
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
    Folds(Vec<Vec<usize>>),
}

impl SplitPlan {
    pub fn kfold(k: usize, mode: SplitMode, seed: u64) -> Self {
        Self {
            mode,
            kind: SplitKind::KFold { k },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SplitKind::KFold { k } if k < 2 => Err(Error::Split(format!("k must be >= 2, got {k}"))),
            SplitKind::Holdout { train, val, test } => {
                if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) {
                    return Err(Error::Split("fractions must lie in [0, 1]".into()));
                }
                if ((train + val + test) - 1.0).abs() > 1e-9 {
                    return Err(Error::Split(format!(
                        "fractions sum to {}, expected 1",
                        train + val + test
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `key=value` lines with keys `split_mode`, `split_kind`, `split_seed`
    /// and either `split_k` or `split_train`/`split_val`/`split_test`.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "split_mode={}", self.mode.as_str());
        match self.kind {
            SplitKind::KFold { k } => {
                let _ = writeln!(s, "split_kind=kfold\nsplit_k={k}");
            }
            SplitKind::Holdout { train, val, test } => {
                let _ = writeln!(
                    s,
                    "split_kind=holdout\nsplit_train={train}\nsplit_val={val}\nsplit_test={test}"
                );
            }
        }
        let _ = writeln!(s, "split_seed={}", self.seed);
        s
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| Error::Split(format!("missing `{k}`")));
        let num = |k: &str| -> Result<f64> {
            get(k)?.trim().parse().map_err(|_| Error::Split(format!("`{k}` is not a number")))
        };
        let mode = get("split_mode")?.parse()?;
        let kind = match get("split_kind")?.trim() {
            "kfold" => SplitKind::KFold {
                k: get("split_k")?
                    .trim()
                    .parse()
                    .map_err(|_| Error::Split("`split_k` is not an integer".into()))?,
            },
            "holdout" => SplitKind::Holdout {
                train: num("split_train")?,
                val: num("split_val")?,
                test: num("split_test")?,
            },
            other => return Err(Error::Split(format!("unknown split kind `{other}`"))),
        };
        let seed = get("split_seed")?
            .trim()
            .parse()
            .map_err(|_| Error::Split("`split_seed` is not an integer".into()))?;
        let plan = Self { mode, kind, seed };
        plan.validate()?;
        Ok(plan)
    }
}

/// Split units: whole videos (ordered by id) or single frames.
fn units(index: &DatasetIndex, mode: SplitMode) -> Vec<Vec<usize>> {
    match mode {
        SplitMode::ByVideo => index.videos.values().cloned().collect(),
        SplitMode::ByFrame => (0..index.len()).map(|i| vec![i]).collect(),
    }
}

/// Sizes of `k` near-equal parts of `n` (larger parts first).
pub fn fold_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|f| n / k + usize::from(f < n % k)).collect()
}

/// Partition the index according to `plan`. Returned sample indices are
/// sorted within each subset.
pub fn make_splits(index: &DatasetIndex, plan: &SplitPlan) -> Result<Splits> {
    plan.validate()?;
    let mut units = units(index, plan.mode);
    Rng::new(plan.seed).derive_str("split").shuffle(&mut units);
    let n = units.len();
    let collect = |chunk: &[Vec<usize>]| {
        let mut v: Vec<usize> = chunk.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    };
    match plan.kind {
        SplitKind::KFold { k } => {
            if k > n {
                return Err(Error::Split(format!("k = {k} exceeds the {n} available units")));
            }
            let mut folds = Vec::with_capacity(k);
            let mut start = 0;
            for size in fold_sizes(n, k) {
                folds.push(collect(&units[start..start + size]));
                start += size;
            }
            Ok(Splits::Folds(folds))
        }
        SplitKind::Holdout { train, val, .. } => {
            let n_train = (train * n as f64).round() as usize;
            let n_val = ((val * n as f64).round() as usize).min(n - n_train.min(n));
            let n_train = n_train.min(n);
            let (tr, rest) = units.split_at(n_train);
            let (va, te) = rest.split_at(n_val);
            let out = Splits::Holdout {
                train: collect(tr),
                val: collect(va),
                test: collect(te),
            };
            if let (SplitKind::Holdout { train, val, test }, Splits::Holdout { train: a, val: b, test: c }) = (plan.kind, &out) {
                for (frac, part, name) in [(train, a, "train"), (val, b, "val"), (test, c, "test")] {
                    if frac > 0.0 && part.is_empty() {
                        return Err(Error::Split(format!("{name} subset is empty with {n} units")));
                    }
                }
            }
            Ok(out)
        }
    }
}
