//! Transfer values, two-component PCA and class-separation scores.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::dataset::DatasetIndex;
use crate::data::image::PreprocessMode;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::model::Model;
use crate::tensor::Tensor;
use crate::weights::{WeightFile, WeightRecord};

/// Record names used in a transfer-value cache file.
pub const VALUES_RECORD: &str = "transfer_values";
pub const FINGERPRINT_RECORD: &str = "fingerprint";

const EXTRACT_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TransferValues {
    /// `[n, features]`.
    pub values: Tensor<f32>,
    pub labels: Vec<Label>,
    pub model: String,
    pub layer: String,
}

impl TransferValues {
    pub fn rows(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.data().iter().map(|&v| v as f64).collect()
    }
}

/// Key of a cache entry: model name, layer, the weights up to the layer, the
/// dataset content, the selected rows and the preprocessing.
fn cache_key(
    model: &Model<f32>,
    end: usize,
    layer: &str,
    index: &DatasetIndex,
    indices: &[usize],
    size: (usize, usize),
    mode: &PreprocessMode,
) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(model.name().as_bytes());
    h.update([0]);
    h.update(layer.as_bytes());
    h.update([0]);
    h.update(model.fingerprint_range(0, end));
    h.update(index.content_hash());
    for &i in indices {
        h.update((i as u64).to_le_bytes());
    }
    h.update((size.0 as u64).to_le_bytes());
    h.update((size.1 as u64).to_le_bytes());
    h.update(mode.to_string().as_bytes());
    h.finalize().into()
}

fn key_tensor(key: &[u8; 32]) -> Tensor<f32> {
    Tensor::new(vec![32], key.iter().map(|&b| b as f32).collect()).expect("32 values")
}

/// Outputs of `model` truncated after `layer` for the selected samples,
/// flattened per row. With a cache path, a matching cache is returned as is
/// and a mismatching one is an error; a missing cache is written.
#[allow(clippy::too_many_arguments)]
pub fn extract_transfer_values(
    model: &Model<f32>,
    layer: &str,
    index: &DatasetIndex,
    indices: &[usize],
    size: (usize, usize),
    mode: &PreprocessMode,
    cache: Option<&Path>,
) -> Result<TransferValues> {
    let end = model.layer_index(layer)? + 1;
    if indices.is_empty() {
        return Err(Error::Empty("no samples to extract".into()));
    }
    let labels: Vec<Label> = indices.iter().map(|&i| index.samples[i].label).collect();
    let key = cache_key(model, end, layer, index, indices, size, mode);
    if let Some(path) = cache {
        if path.exists() {
            return read_cache(path, &key, labels, model.name(), layer);
        }
    }
    let mut data = Vec::new();
    let mut width = 0;
    for chunk in indices.chunks(EXTRACT_BATCH) {
        let ex = index.examples(chunk, size, mode)?;
        let y = model.forward_range(&ex.x, 0, end)?;
        width = y.sample_len();
        data.extend_from_slice(y.data());
    }
    let values = Tensor::new(vec![indices.len(), width], data)?;
    if let Some(path) = cache {
        let label_t = Tensor::new(vec![labels.len()], labels.iter().map(|l| l.index() as f32).collect())?;
        let file = WeightFile {
            records: vec![
                WeightRecord {
                    name: VALUES_RECORD.into(),
                    tensors: vec![values.clone(), label_t],
                },
                WeightRecord {
                    name: FINGERPRINT_RECORD.into(),
                    tensors: vec![key_tensor(&key)],
                },
            ],
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        file.save(path)?;
    }
    Ok(TransferValues {
        values,
        labels,
        model: model.name().to_string(),
        layer: layer.to_string(),
    })
}

fn read_cache(path: &Path, key: &[u8; 32], labels: Vec<Label>, model: &str, layer: &str) -> Result<TransferValues> {
    let stale = |msg: &str| Error::StaleCache {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let file = WeightFile::load(path)?;
    let fp = file.get(FINGERPRINT_RECORD).ok_or_else(|| stale("no fingerprint record"))?;
    if fp.tensors.len() != 1 || fp.tensors[0] != key_tensor(key) {
        return Err(stale("model, layer or dataset changed since the cache was written"));
    }
    let rec = file.get(VALUES_RECORD).ok_or_else(|| stale("no transfer_values record"))?;
    let [values, _] = &rec.tensors[..] else {
        return Err(stale("malformed transfer_values record"));
    };
    if values.rank() != 2 || values.dims()[0] != labels.len() {
        return Err(stale("row count does not match the dataset"));
    }
    Ok(TransferValues {
        values: values.clone(),
        labels,
        model: model.to_string(),
        layer: layer.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Two orthonormal rows of length `d`.
    pub components: [Vec<f64>; 2],
    /// Descending, `sigma^2 / (n - 1)`.
    pub explained_variance: [f64; 2],
    pub projected: Vec<[f64; 2]>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One-sided Jacobi: rotate `cols` (all of equal length) until pairwise
/// orthogonal, applying the same rotations to the columns of `basis`.
fn orthogonalize(cols: &mut [Vec<f64>], basis: &mut [Vec<f64>]) {
    let k = cols.len();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut *cols, &mut *basis] {
                    let (lo, hi) = m.split_at_mut(q);
                    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                        let (a, b) = (*x, *y);
                        *x = c * a - s * b;
                        *y = s * a + c * b;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

fn identity(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let mut e = vec![0.0; k];
            e[i] = 1.0;
            e
        })
        .collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Unit vector orthogonal to `u`: the first standard basis vector with a
/// usable residual after projection.
fn orthogonal_complement(u: &[f64]) -> Vec<f64> {
    (0..u.len())
        .map(|j| {
            let mut e = vec![0.0; u.len()];
            e[j] = 1.0;
            let p = u[j];
            e.iter_mut().zip(u).for_each(|(x, ui)| *x -= p * ui);
            e
        })
        .find_map(|mut e| (normalize(&mut e) > 1e-6).then_some(e))
        .expect("dimension >= 2")
}

/// Flip so that the largest-magnitude coordinate (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-two principal directions of the row-major `n x d` matrix `x`.
pub fn pca_fit(x: &[f64], n: usize, d: usize) -> Result<PcaResult> {
    if n < 2 {
        return Err(Error::InvalidParam(format!("PCA needs at least 2 samples, got {n}")));
    }
    if d < 2 {
        return Err(Error::InvalidParam(format!("PCA needs at least 2 features, got {d}")));
    }
    if x.len() != n * d {
        return Err(Error::Shape(format!("{} values for a {n} x {d} matrix", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("non-finite feature value".into()));
    }
    let mut mean = vec![0.0; d];
    for row in x.chunks_exact(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = x.chunks_exact(d).flat_map(|r| r.iter().zip(&mean).map(|(v, m)| v - m)).collect();
    if centered.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all samples are identical (rank 0)".into()));
    }

    // (singular value, right singular vector) pairs.
    let mut pairs: Vec<(f64, Vec<f64>)> = if d <= n {
        let mut cols: Vec<Vec<f64>> = (0..d).map(|j| (0..n).map(|i| centered[i * d + j]).collect()).collect();
        let mut v = identity(d);
        orthogonalize(&mut cols, &mut v);
        cols.iter().map(|c| dot(c, c).sqrt()).zip(v).collect()
    } else {
        // Work on the transpose: its columns are the rows of x.
        let mut cols: Vec<Vec<f64>> = centered.chunks_exact(d).map(<[f64]>::to_vec).collect();
        let mut u = identity(n);
        orthogonalize(&mut cols, &mut u);
        cols.into_iter()
            .map(|mut c| {
                let s = normalize(&mut c);
                (s, c)
            })
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let s0 = pairs[0].0;
    let mut c0 = std::mem::take(&mut pairs[0].1);
    let (s1, mut c1) = {
        let (s, v) = &pairs[1];
        if *s > s0 * 1e-12 && *s > 0.0 {
            (*s, v.clone())
        } else {
            (0.0, orthogonal_complement(&c0))
        }
    };
    normalize(&mut c0);
    normalize(&mut c1);
    fix_sign(&mut c0);
    fix_sign(&mut c1);
    let denom = (n - 1) as f64;
    let mut result = PcaResult {
        mean,
        components: [c0, c1],
        explained_variance: [s0 * s0 / denom, s1 * s1 / denom],
        projected: Vec::new(),
    };
    result.projected = project(&result, x, d)?;
    Ok(result)
}

/// `(x - mean) * components^T` for a row-major matrix of width `d`.
pub fn project(pca: &PcaResult, x: &[f64], d: usize) -> Result<Vec<[f64; 2]>> {
    if d != pca.mean.len() || x.len() % d.max(1) != 0 {
        return Err(Error::Shape(format!(
            "feature width {d} does not match the fitted width {}",
            pca.mean.len()
        )));
    }
    Ok(x.chunks_exact(d)
        .map(|row| {
            let mut out = [0.0; 2];
            for (k, comp) in pca.components.iter().enumerate() {
                out[k] = row.iter().zip(&pca.mean).zip(comp).map(|((v, m), c)| (v - m) * c).sum();
            }
            out
        })
        .collect())
}

/// `pc1,pc2,label` with 12 significant digits.
pub fn scatter_csv(points: &[[f64; 2]], labels: &[Label]) -> Result<String> {
    if points.len() != labels.len() {
        return Err(Error::InvalidParam(format!("{} points but {} labels", points.len(), labels.len())));
    }
    let mut s = String::from("pc1,pc2,label\n");
    for (p, l) in points.iter().zip(labels) {
        let _ = writeln!(s, "{:.11e},{:.11e},{l}", p[0], p[1]);
    }
    Ok(s)
}

pub fn parse_scatter_csv(text: &str) -> Result<Vec<([f64; 2], Label)>> {
    let mut lines = text.lines();
    if lines.next() != Some("pc1,pc2,label") {
        return Err(Error::InvalidParam("scatter CSV header must be `pc1,pc2,label`".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::InvalidParam(format!("scatter CSV line {}: `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            let [a, b, l] = f[..] else { return Err(bad()) };
            Ok(([a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?], l.parse().map_err(|_| bad())?))
        })
        .collect()
}

pub fn class_color(l: Label) -> &'static str {
    match l {
        Label::Low => "#2ca02c",
        Label::Medium => "#d62728",
        Label::Heavy => "#9467bd",
    }
}

/// Standalone SVG scatter plot with one color per class and a legend.
pub fn scatter_svg(points: &[[f64; 2]], labels: &[Label], title: &str) -> Result<String> {
    if points.len() != labels.len() {
        return Err(Error::InvalidParam(format!("{} points but {} labels", points.len(), labels.len())));
    }
    let (w, h, pad) = (640.0, 480.0, 48.0);
    let range = |k: usize| {
        let lo = points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (-1.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        }
    };
    let ((x0, x1), (y0, y1)) = (range(0), range(1));
    let sx = |v: f64| pad + (v - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - (v - y0) / (y1 - y0) * (h - 2.0 * pad);
    let esc = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{esc}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">PC1</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">PC2</text>"#,
        h / 2.0,
        h / 2.0
    );
    for l in Label::ALL {
        let _ = writeln!(s, r#"<g fill="{}" fill-opacity="0.7">"#, class_color(l));
        for (p, _) in points.iter().zip(labels).filter(|(_, pl)| **pl == l) {
            let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="2.5"/>"#, sx(p[0]), sy(p[1]));
        }
        s.push_str("</g>\n");
    }
    for (i, l) in Label::ALL.iter().enumerate() {
        let y = pad + 14.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="5" fill="{}"/>"#, w - pad - 70.0, y - 4.0, class_color(*l));
        let _ = writeln!(s, r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="12">{l}</text>"#, w - pad - 60.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn centroid_spread(points: &[[f64; 2]]) -> ([f64; 2], f64) {
    let n = points.len() as f64;
    let c = [
        points.iter().map(|p| p[0]).sum::<f64>() / n,
        points.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let ms = points.iter().map(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sum::<f64>() / n;
    (c, ms.sqrt())
}

/// Centroid distance between two groups of classes divided by the mean of
/// their RMS spreads around their own centroids.
pub fn separation_metric(points: &[[f64; 2]], labels: &[Label], group_a: &[Label], group_b: &[Label]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::InvalidParam(format!("{} points but {} labels", points.len(), labels.len())));
    }
    let pick = |g: &[Label]| -> Vec<[f64; 2]> {
        points.iter().zip(labels).filter(|(_, l)| g.contains(l)).map(|(p, _)| *p).collect()
    };
    let (a, b) = (pick(group_a), pick(group_b));
    for (g, pts) in [(group_a, &a), (group_b, &b)] {
        if pts.is_empty() {
            let names: Vec<String> = g.iter().map(Label::to_string).collect();
            return Err(Error::UndefinedMetric(names.join("+")));
        }
    }
    let (ca, sa) = centroid_spread(&a);
    let (cb, sb) = centroid_spread(&b);
    let dist = ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2)).sqrt();
    let spread = (sa + sb) / 2.0;
    Ok(if spread > 0.0 {
        dist / spread
    } else if dist > 0.0 {
        f64::INFINITY
    } else {
        0.0
    })
}
