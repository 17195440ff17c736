//! Vehicle-count baseline: background subtraction, connected components and
//! two count thresholds.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::label::Label;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobConfig {
    /// Minimum absolute luma difference from the background.
    pub threshold: f32,
    /// Components smaller than this are discarded.
    pub min_area: usize,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            threshold: 40.0,
            min_area: 9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobBox {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub area: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobDetection {
    pub background: f32,
    pub boxes: Vec<BlobBox>,
}

impl BlobDetection {
    pub fn count(&self) -> usize {
        self.boxes.len()
    }
}

/// `0.299 R + 0.587 G + 0.114 B` for `[h, w, 3]`; single-channel frames pass
/// through.
pub fn luma(frame: &Tensor<f32>) -> Result<Vec<f32>> {
    match frame.dims() {
        [_, _, 3] => Ok(frame
            .data()
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()),
        [_, _, 1] => Ok(frame.data().to_vec()),
        d => Err(Error::Shape(format!("expected [h, w, 1|3] frame, got {d:?}"))),
    }
}

fn median(values: &[f32]) -> f32 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f32::total_cmp);
    *m
}

/// 8-connected components of a binary mask, in raster order of their first
/// pixel.
pub fn connected_components(mask: &[bool], h: usize, w: usize) -> Vec<BlobBox> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut r0, mut r1, mut c0, mut c1, mut area) = (h, 0, w, 0, 0);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            area += 1;
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(BlobBox {
            row: r0,
            col: c0,
            height: r1 - r0 + 1,
            width: c1 - c0 + 1,
            area,
        });
    }
    out
}

/// Foreground is every pixel whose luma differs from the frame median by at
/// least the threshold.
pub fn detect_blobs(frame: &Tensor<f32>, cfg: &BlobConfig) -> Result<BlobDetection> {
    let y = luma(frame)?;
    let (h, w) = (frame.dims()[0], frame.dims()[1]);
    let background = median(&y);
    let mask: Vec<bool> = y.iter().map(|&v| (v - background).abs() >= cfg.threshold).collect();
    let boxes = connected_components(&mask, h, w)
        .into_iter()
        .filter(|b| b.area >= cfg.min_area)
        .collect();
    Ok(BlobDetection { background, boxes })
}

pub fn video_mean_count(frames: &[Tensor<f32>], cfg: &BlobConfig) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::InvalidParam("video has no frames".into()));
    }
    let mut total = 0usize;
    for f in frames {
        total += detect_blobs(f, cfg)?.count();
    }
    Ok(total as f64 / frames.len() as f64)
}

/// Count cut points: below `t1` is Low, below `t2` Medium, otherwise Heavy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub t1: f64,
    pub t2: f64,
}

pub fn classify(count: f64, t: &Thresholds) -> Label {
    if count < t.t1 {
        Label::Low
    } else if count < t.t2 {
        Label::Medium
    } else {
        Label::Heavy
    }
}

/// Exhaustive search over midpoints between sorted distinct training counts
/// maximising training accuracy. Ties go to the lexicographically smallest
/// `(t1, t2)`.
pub fn fit_thresholds(train: &[(f64, Label)]) -> Result<Thresholds> {
    for l in Label::ALL {
        if !train.iter().any(|(_, t)| *t == l) {
            return Err(Error::InvalidParam(format!("cannot fit thresholds: no {l} videos in training set")));
        }
    }
    if train.iter().any(|(c, _)| !c.is_finite()) {
        return Err(Error::InvalidParam("non-finite training count".into()));
    }
    let mut values: Vec<f64> = train.iter().map(|(c, _)| *c).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut cands: Vec<f64> = values.windows(2).map(|p| (p[0] + p[1]) / 2.0).collect();
    if cands.is_empty() {
        cands.push(values[0]);
    }

    // below[k][c]: samples of class c with count < cands[k].
    let below: Vec<[usize; 3]> = cands
        .iter()
        .map(|&t| {
            let mut n = [0usize; 3];
            for (c, l) in train {
                if *c < t {
                    n[l.index()] += 1;
                }
            }
            n
        })
        .collect();
    let mut totals = [0usize; 3];
    train.iter().for_each(|(_, l)| totals[l.index()] += 1);

    let mut best = (0usize, 0usize, 0usize);
    let mut found = false;
    for i in 0..cands.len() {
        for j in i..cands.len() {
            let correct = below[i][0] + (below[j][1] - below[i][1]) + (totals[2] - below[j][2]);
            if !found || correct > best.0 {
                best = (correct, i, j);
                found = true;
            }
        }
    }
    Ok(Thresholds {
        t1: cands[best.1],
        t2: cands[best.2],
    })
}

/// `video_id,label,mean_count`.
pub fn counts_csv(rows: &[(String, Label, f64)]) -> String {
    let mut s = String::from("video_id,label,mean_count\n");
    for (id, l, c) in rows {
        let _ = writeln!(s, "{id},{l},{c:.4}");
    }
    s
}
