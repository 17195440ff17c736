//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn err(offset: usize, msg: impl Into<String>) -> Error {
    Error::ImageFormat {
        offset,
        msg: msg.into(),
    }
}

struct Header {
    width: usize,
    height: usize,
    channels: usize,
    raster: usize,
}

fn skip_space_and_comments(b: &[u8], mut i: usize) -> usize {
    loop {
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < b.len() && b[i] == b'#' {
            while i < b.len() && b[i] != b'\n' && b[i] != b'\r' {
                i += 1;
            }
        } else {
            return i;
        }
    }
}

fn number(b: &[u8], i: &mut usize, what: &str) -> Result<(usize, usize)> {
    *i = skip_space_and_comments(b, *i);
    let start = *i;
    while *i < b.len() && b[*i].is_ascii_digit() {
        *i += 1;
    }
    if start == *i {
        return Err(err(start, format!("expected {what}")));
    }
    let v = std::str::from_utf8(&b[start..*i])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(start, format!("{what} out of range")))?;
    Ok((v, start))
}

fn header(b: &[u8]) -> Result<Header> {
    let channels = match b.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(err(0, "bad magic, expected P6 or P5")),
    };
    let mut i = 2;
    let (width, wo) = number(b, &mut i, "width")?;
    let (height, ho) = number(b, &mut i, "height")?;
    let (maxval, mo) = number(b, &mut i, "maxval")?;
    if width == 0 {
        return Err(err(wo, "width must be >= 1"));
    }
    if height == 0 {
        return Err(err(ho, "height must be >= 1"));
    }
    if maxval != 255 {
        return Err(err(mo, format!("maxval {maxval} unsupported, expected 255")));
    }
    match b.get(i) {
        Some(c) if c.is_ascii_whitespace() => i += 1,
        _ => return Err(err(i, "expected a single whitespace before the raster")),
    }
    Ok(Header {
        width,
        height,
        channels,
        raster: i,
    })
}

/// Decode P6 or P5 into `[h, w, c]` with raw 0-255 values.
pub fn parse_netpbm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let h = header(bytes)?;
    let need = h.width * h.height * h.channels;
    let have = bytes.len() - h.raster;
    if have < need {
        return Err(err(bytes.len(), format!("truncated raster: {have} of {need} bytes")));
    }
    let data = bytes[h.raster..h.raster + need].iter().map(|&v| v as f32).collect();
    Tensor::new(vec![h.height, h.width, h.channels], data)
}

/// Decode a P6 image into `[h, w, 3]`.
pub fn parse_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.get(..2) != Some(b"P6") {
        return Err(err(0, "bad magic, expected P6"));
    }
    parse_netpbm(bytes)
}

/// Decode a P5 image into `[h, w, 1]`.
pub fn parse_pgm(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.get(..2) != Some(b"P5") {
        return Err(err(0, "bad magic, expected P5"));
    }
    parse_netpbm(bytes)
}

/// Encode `[h, w, 3]` as P6 or `[h, w, 1]` as P5. Values are rounded and
/// clamped to 0-255.
pub fn encode_netpbm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let [h, w, c] = image.dims()[..] else {
        return Err(Error::shape(format!("image must be [h, w, c], got {:?}", image.dims())));
    };
    let magic = match c {
        3 => "P6",
        1 => "P5",
        _ => return Err(Error::shape(format!("{c} channels cannot be written as PPM/PGM"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn write_ppm(image: &Tensor<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_netpbm(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_netpbm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn single_red_pixel() {
        let t = parse_ppm(b"P6\n1 1\n255\n\xff\x00\x00").unwrap();
        assert_eq!(t.dims(), &[1, 1, 3]);
        assert_eq!(t.data(), &[255.0, 0.0, 0.0]);
    }

    #[test]
    fn comments_in_header() {
        let t = parse_ppm(b"P6\n# made by hand\n2 1 # trailing\n255\n\x01\x02\x03\x04\x05\x06").unwrap();
        assert_eq!(t.dims(), &[1, 2, 3]);
        assert_eq!(t.data()[5], 6.0);
        let g = parse_pgm(b"P5 #c\n2 2 255\n\x00\x01\x02\x03").unwrap();
        assert_eq!(g.dims(), &[2, 2, 1]);
    }

    #[test]
    fn distinct_errors_with_offsets() {
        let e = parse_ppm(b"P3\n1 1\n255\n000").unwrap_err();
        assert!(matches!(e, Error::ImageFormat { offset: 0, ref msg } if msg.contains("magic")));
        let e = parse_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").unwrap_err();
        assert!(matches!(e, Error::ImageFormat { offset: 7, ref msg } if msg.contains("maxval")));
        let e = parse_ppm(b"P6\n2 2\n255\n\x00\x00").unwrap_err();
        assert!(matches!(e, Error::ImageFormat { offset: 13, ref msg } if msg.contains("truncated")));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        let mut rng = Rng::new(1);
        let data = (0..16 * 16 * 3).map(|_| rng.int_range(0, 255) as f32).collect();
        let img = Tensor::new(vec![16, 16, 3], data).unwrap();
        write_ppm(&img, &p).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }

    proptest! {
        #[test]
        fn round_trip_random(h in 1usize..12, w in 1usize..12, gray in any::<bool>(), seed in any::<u64>()) {
            let c = if gray { 1 } else { 3 };
            let mut rng = Rng::new(seed);
            let data = (0..h * w * c).map(|_| rng.int_range(0, 255) as f32).collect();
            let img = Tensor::new(vec![h, w, c], data).unwrap();
            let bytes = encode_netpbm(&img).unwrap();
            prop_assert_eq!(parse_netpbm(&bytes).unwrap(), img);
        }
    }
}
