//! Binary Netpbm (P5/P6, 8-bit) and the raw `PGT1` tensor format.
//!
//! Raw layout: `b"PGT1"`, then `height`, `width`, `channels` as little-endian
//! `u32`, then `height·width·channels` little-endian `f32` samples, row-major,
//! channel-last.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const RAW_MAGIC: &[u8; 4] = b"PGT1";

/// Sample count above which a header is rejected outright.
const MAX_SAMPLES: u64 = 1 << 31;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Ppm,
    Raw,
}

impl ImageFormat {
    /// Picks the export format from the file extension; anything other than
    /// `.pgm`/`.ppm` is written raw.
    pub fn from_path(path: &Path) -> ImageFormat {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("pgm") => ImageFormat::Pgm,
            Some("ppm") => ImageFormat::Ppm,
            _ => ImageFormat::Raw,
        }
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode(&bytes, path)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ImageTensor> {
    if bytes.len() >= 4 && &bytes[..4] == RAW_MAGIC {
        return decode_raw(bytes, path);
    }
    decode_netpbm(bytes, path)
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn checked_len(path: &Path, h: u64, w: u64, c: u64) -> Result<usize> {
    h.checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .filter(|&n| n <= MAX_SAMPLES)
        .map(|n| n as usize)
        .ok_or(Error::DimensionOverflow {
            path: path.to_path_buf(),
            height: h,
            width: w,
            channels: c,
        })
}

fn decode_raw(bytes: &[u8], path: &Path) -> Result<ImageTensor> {
    if bytes.len() < 16 {
        return Err(malformed(path, "raw header shorter than 16 bytes"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as u64;
    let (h, w, c) = (word(0), word(1), word(2));
    if c == 0 {
        return Err(malformed(path, "zero channels"));
    }
    let n = checked_len(path, h, w, c)?;
    let payload = &bytes[16..];
    if payload.len() < n * 4 {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: n * 4,
            found: payload.len(),
        });
    }
    let data = payload[..n * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ImageTensor::new(h as usize, w as usize, c as usize, data)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&b) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<u64> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

fn decode_netpbm(bytes: &[u8], path: &Path) -> Result<ImageTensor> {
    if bytes.len() < 2 {
        return Err(malformed(path, "file too short for a magic number"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(malformed(
                path,
                format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            ))
        }
    };
    let mut rd = HeaderReader { bytes, pos: 2 };
    let width = rd.number().ok_or_else(|| malformed(path, "missing width"))?;
    let height = rd.number().ok_or_else(|| malformed(path, "missing height"))?;
    let maxval = rd.number().ok_or_else(|| malformed(path, "missing maxval"))?;
    if width == 0 || height == 0 {
        return Err(malformed(path, "zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(malformed(path, format!("maxval {maxval} (only 8-bit supported)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(rd.pos) {
        Some(b) if b.is_ascii_whitespace() => rd.pos += 1,
        _ => return Err(malformed(path, "missing whitespace after maxval")),
    }
    let n = checked_len(path, height, width, channels)?;
    let payload = &bytes[rd.pos..];
    if payload.len() < n {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: n,
            found: payload.len(),
        });
    }
    let scale = maxval as f32;
    let data = payload[..n].iter().map(|&b| b as f32 / scale).collect();
    ImageTensor::new(height as usize, width as usize, channels as usize, data)
}

/// Writes `img` in the format implied by the extension of `path`.
///
/// Netpbm output is quantized to 8 bits; with `clamp` samples are first
/// clipped to `[0, 1]`, without it an out-of-range sample is an error. The raw
/// format stores samples verbatim and ignores `clamp`.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>, clamp: bool) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(img, ImageFormat::from_path(path), clamp)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn encode(img: &ImageTensor, format: ImageFormat, clamp: bool) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Raw => Ok(encode_raw(img)),
        ImageFormat::Pgm | ImageFormat::Ppm => {
            let (magic, want) = if format == ImageFormat::Pgm {
                ("P5", 1)
            } else {
                ("P6", 3)
            };
            if img.channels() != want {
                return Err(Error::InvalidArgument(format!(
                    "{magic} needs {want} channel(s), image has {}",
                    img.channels()
                )));
            }
            let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
            out.reserve(img.len());
            for (i, &v) in img.as_slice().iter().enumerate() {
                let v = if clamp {
                    if v.is_nan() {
                        0.0
                    } else {
                        v.clamp(0.0, 1.0)
                    }
                } else if (0.0..=1.0).contains(&v) {
                    v
                } else {
                    return Err(Error::OutOfRange { index: i, value: v });
                };
                out.push((v * 255.0).round() as u8);
            }
            Ok(out)
        }
    }
}

fn encode_raw(img: &ImageTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * img.len());
    out.extend_from_slice(RAW_MAGIC);
    for d in [img.height(), img.width(), img.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in img.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(name: &str) -> &Path {
        Path::new(name)
    }

    #[test]
    fn decodes_small_pgm() {
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        let img = decode(&bytes, p("x.pgm")).unwrap();
        assert_eq!(img.shape(), (2, 2, 1));
        let expect = [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0];
        for (a, b) in img.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((img.get(1, 0, 0) - 0.50196).abs() < 1e-5);
        assert!((img.get(1, 1, 0) - 0.25098).abs() < 1e-5);
    }

    #[test]
    fn header_errors_are_distinct() {
        assert!(matches!(decode(b"", p("e")), Err(Error::MalformedHeader { .. })));
        assert!(matches!(decode(b"P5\n2 2\n", p("e")), Err(Error::MalformedHeader { .. })));
        assert!(matches!(
            decode(b"P5\n2 2\n65535\n", p("e")),
            Err(Error::MalformedHeader { .. })
        ));
        assert!(matches!(
            decode(b"P5\n2 2\n255\n\x01\x02", p("e")),
            Err(Error::TruncatedPayload { expected: 4, found: 2, .. })
        ));
        assert!(matches!(
            decode(b"P6\n4294967295 4294967295\n255\n", p("e")),
            Err(Error::DimensionOverflow { .. })
        ));
        let mut raw = RAW_MAGIC.to_vec();
        for d in [2u32, 2, 1] {
            raw.extend_from_slice(&d.to_le_bytes());
        }
        raw.extend_from_slice(&[0; 7]);
        assert!(matches!(decode(&raw, p("e")), Err(Error::TruncatedPayload { .. })));
    }

    #[test]
    fn clamped_export() {
        let img = ImageTensor::new(1, 2, 1, vec![1.3, -0.1]).unwrap();
        let bytes = encode(&img, ImageFormat::Pgm, true).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[255, 0]);
        assert!(matches!(
            encode(&img, ImageFormat::Pgm, false),
            Err(Error::OutOfRange { index: 0, .. })
        ));
        let raw = encode(&img, ImageFormat::Raw, true).unwrap();
        assert_eq!(decode(&raw, p("r")).unwrap().as_slice(), &[1.3, -0.1]);
    }

    #[test]
    fn ppm_channel_order() {
        let img = ImageTensor::from_fn(2, 3, 3, |r, c, ch| ((r * 3 + c) * 3 + ch) as f32 / 255.0);
        let bytes = encode(&img, ImageFormat::Ppm, false).unwrap();
        let back = decode(&bytes, p("x.ppm")).unwrap();
        assert_eq!(back.shape(), (2, 3, 3));
        for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(encode(&img, ImageFormat::Pgm, false).is_err());
    }
}
