//! Resampling and input normalization.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resize of `[h, w, c]` with half-pixel centers and edge clamping.
pub fn resize_bilinear(image: &Tensor<f32>, target: (usize, usize)) -> Result<Tensor<f32>> {
    let [h, w, c] = image.dims()[..] else {
        return Err(Error::shape(format!("image must be [h, w, c], got {:?}", image.dims())));
    };
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::InvalidParam(format!("resize target {th}x{tw} must be >= 1")));
    }
    if (th, tw) == (h, w) {
        return Ok(image.clone());
    }
    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let src = image.data();
    let mut out = Vec::with_capacity(th * tw * c);
    for y in 0..th {
        let (y0, y1, fy) = axis(y, h, th);
        for x in 0..tw {
            let (x0, x1, fx) = axis(x, w, tw);
            for ch in 0..c {
                let p = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    Tensor::new(vec![th, tw, c], out)
}

/// Left-right mirror of `[h, w, c]`.
pub fn mirror(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [h, w, c] = image.dims()[..] else {
        return Err(Error::shape(format!("image must be [h, w, c], got {:?}", image.dims())));
    };
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let at = (y * w + x) * c;
            out.extend_from_slice(&src[at..at + c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PreprocessMode {
    /// `x / 127.5 - 1`.
    ScalePm1,
    /// Subtract per-channel means.
    MeanSubtract(Vec<f32>),
}

impl fmt::Display for PreprocessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreprocessMode::ScalePm1 => f.write_str("scale_pm1"),
            PreprocessMode::MeanSubtract(m) => {
                let parts: Vec<String> = m.iter().map(|v| v.to_string()).collect();
                write!(f, "mean_subtract:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for PreprocessMode {
    type Err = Error;

    /// `scale_pm1` or `mean_subtract:r,g,b`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "scale_pm1" {
            return Ok(PreprocessMode::ScalePm1);
        }
        if let Some(rest) = s.strip_prefix("mean_subtract:") {
            let means = rest
                .split(',')
                .map(|v| v.trim().parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::InvalidParam(format!("bad channel means in `{s}`")))?;
            return Ok(PreprocessMode::MeanSubtract(means));
        }
        Err(Error::InvalidParam(format!("unknown preprocess mode `{s}`")))
    }
}

pub fn preprocess(image: &Tensor<f32>, mode: &PreprocessMode) -> Result<Tensor<f32>> {
    let mut out = image.clone();
    match mode {
        PreprocessMode::ScalePm1 => out.data_mut().iter_mut().for_each(|v| *v = *v / 127.5 - 1.0),
        PreprocessMode::MeanSubtract(means) => {
            let c = *image.dims().last().unwrap_or(&1);
            if means.len() != c {
                return Err(Error::shape(format!("{} means for {c} channels", means.len())));
            }
            for px in out.data_mut().chunks_mut(c) {
                for (v, m) in px.iter_mut().zip(means) {
                    *v -= m;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_reverses_columns_and_is_an_involution() {
        let img = Tensor::new(vec![2, 3, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        let m = mirror(&img).unwrap();
        assert_eq!(m.data()[..6], [4.0, 5.0, 2.0, 3.0, 0.0, 1.0]);
        assert_eq!(mirror(&m).unwrap(), img);
        assert!(mirror(&Tensor::zeros(&[4, 4]).unwrap()).is_err());
    }

    #[test]
    fn same_size_is_identity() {
        let img = Tensor::new(vec![2, 3, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(resize_bilinear(&img, (2, 3)).unwrap(), img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Tensor::full(&[5, 7, 3], 50.0).unwrap();
        for t in [(1, 1), (3, 11), (64, 64)] {
            assert!(resize_bilinear(&img, t).unwrap().data().iter().all(|&v| v == 50.0));
        }
    }

    #[test]
    fn checkerboard_center() {
        let img = Tensor::new(vec![2, 2, 1], vec![0.0, 255.0, 255.0, 0.0]).unwrap();
        let r = resize_bilinear(&img, (3, 3)).unwrap();
        assert_eq!(r.data()[4], 127.5);
        assert!(resize_bilinear(&img, (0, 3)).is_err());
    }

    #[test]
    fn preprocess_modes() {
        let px = Tensor::new(vec![1, 3, 1], vec![0.0, 127.5, 255.0]).unwrap();
        assert_eq!(preprocess(&px, &PreprocessMode::ScalePm1).unwrap().data(), &[-1.0, 0.0, 1.0]);
        let rgb = Tensor::new(vec![1, 1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        let m = "mean_subtract:10,20,30".parse().unwrap();
        assert_eq!(preprocess(&rgb, &m).unwrap().data(), &[0.0, 0.0, 0.0]);
        assert_eq!(m.to_string(), "mean_subtract:10,20,30");
    }
}
