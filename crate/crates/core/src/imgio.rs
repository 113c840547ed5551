//! PGM and raw-float image files, plus synthetic test instances.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{DynImage, ElemKind, GridError, Image, BINARY_MAX};
use crate::pixel::Pixel;

/// Header comment marking a {0, 255} image as binary.
const BINARY_TAG: &str = "# binary";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImgError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("truncated payload at byte {offset}: expected {expected} bytes, found {actual}")]
    Truncated {
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{0:?} images cannot be written as PGM; use the f32 raw format")]
    Unsupported(ElemKind),
    #[error("raw header says {header_len} samples but payload holds {payload_len} bytes")]
    RawLength { header_len: usize, payload_len: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn parse_err(offset: usize, message: impl Into<String>) -> ImgError {
    ImgError::Parse {
        offset,
        message: message.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    binary_tag: bool,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                let end = self.bytes[self.pos..]
                    .iter()
                    .position(|&c| c == b'\n')
                    .map_or(self.bytes.len(), |n| self.pos + n);
                if self.bytes[self.pos..end].trim_ascii_end() == BINARY_TAG.as_bytes() {
                    self.binary_tag = true;
                }
                self.pos = end;
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<(usize, &'a [u8]), ImgError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, "unexpected end of header"));
        }
        Ok((start, &self.bytes[start..self.pos]))
    }

    fn number(&mut self, what: &str) -> Result<(usize, u64), ImgError> {
        let (at, tok) = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u64>().ok())
            .map(|v| (at, v))
            .ok_or_else(|| parse_err(at, format!("invalid {what} {:?}", String::from_utf8_lossy(tok))))
    }
}

/// Parses a P2 (ASCII) or P5 (binary) PGM.
///
/// Samples become `u8` when maxval < 256 and big-endian `u16` otherwise.
/// A maxval of 1, or a `# binary` header comment over {0, 255} data, yields a
/// binary image with foreground 255.
pub fn read_pgm(bytes: &[u8]) -> Result<DynImage, ImgError> {
    let mut h = Header {
        bytes,
        pos: 0,
        binary_tag: false,
    };
    let (at, magic) = h.token()?;
    let ascii = match magic {
        b"P2" => true,
        b"P5" => false,
        other => {
            return Err(parse_err(
                at,
                format!("expected P2 or P5, found {:?}", String::from_utf8_lossy(other)),
            ))
        }
    };
    let (wat, width) = h.number("width")?;
    let (hat, height) = h.number("height")?;
    let (mat, maxval) = h.number("maxval")?;
    if width == 0 {
        return Err(parse_err(wat, "width must be positive"));
    }
    if height == 0 {
        return Err(parse_err(hat, "height must be positive"));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(parse_err(mat, format!("maxval {maxval} outside 1..=65535")));
    }
    let (width, height) = (width as usize, height as usize);
    let n = width
        .checked_mul(height)
        .ok_or_else(|| parse_err(wat, "image too large"))?;

    let mut samples: Vec<u16> = Vec::with_capacity(n);
    if ascii {
        for _ in 0..n {
            let (at, v) = h.number("sample")?;
            if v > maxval {
                return Err(parse_err(at, format!("sample {v} exceeds maxval {maxval}")));
            }
            samples.push(v as u16);
        }
    } else {
        // exactly one whitespace byte separates maxval from the payload
        let start = h.pos + 1;
        if h.bytes.get(h.pos).is_none_or(|b| !b.is_ascii_whitespace()) {
            return Err(parse_err(h.pos, "expected whitespace after maxval"));
        }
        let bps = if maxval < 256 { 1 } else { 2 };
        let expected = n * bps;
        let payload = &bytes[start.min(bytes.len())..];
        if payload.len() < expected {
            return Err(ImgError::Truncated {
                offset: start,
                expected,
                actual: payload.len(),
            });
        }
        for i in 0..n {
            let v = if bps == 1 {
                payload[i] as u16
            } else {
                u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]])
            };
            if v as u64 > maxval {
                return Err(parse_err(
                    start + i * bps,
                    format!("sample {v} exceeds maxval {maxval}"),
                ));
            }
            samples.push(v);
        }
    }

    if maxval == 1 {
        let data = samples.into_iter().map(|v| v as u8 * BINARY_MAX).collect();
        return Ok(DynImage::Binary(Image::from_vec(width, height, data)?));
    }
    if maxval < 256 {
        let img = Image::from_vec(width, height, samples.into_iter().map(|v| v as u8).collect())?;
        if h.binary_tag {
            if let Ok(bin) = DynImage::binary(img.clone()) {
                return Ok(bin);
            }
        }
        return Ok(DynImage::U8(img));
    }
    Ok(DynImage::U16(Image::from_vec(width, height, samples)?))
}

/// Encodes as P5. Binary images use maxval 255 and a `# binary` comment.
pub fn write_pgm(img: &DynImage) -> Result<Vec<u8>, ImgError> {
    let (w, h) = img.dims();
    let mut out = Vec::new();
    match img {
        DynImage::U8(i) => {
            out.extend(format!("P5\n{w} {h}\n255\n").as_bytes());
            out.extend(i.data());
        }
        DynImage::Binary(i) => {
            out.extend(format!("P5\n{BINARY_TAG}\n{w} {h}\n255\n").as_bytes());
            out.extend(i.data());
        }
        DynImage::U16(i) => {
            out.extend(format!("P5\n{w} {h}\n65535\n").as_bytes());
            for v in i.data() {
                out.extend(v.to_be_bytes());
            }
        }
        DynImage::F32(_) => return Err(ImgError::Unsupported(ElemKind::F32)),
    }
    Ok(out)
}

/// Sidecar header line for the raw float format.
pub fn f32_raw_header(width: usize, height: usize) -> String {
    format!("{width} {height} f32le")
}

/// Row-major little-endian payload and its header line.
pub fn write_f32_raw(img: &Image<f32>) -> (String, Vec<u8>) {
    let bytes = img.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    (f32_raw_header(img.width(), img.height()), bytes)
}

pub fn read_f32_raw(header: &str, payload: &[u8]) -> Result<Image<f32>, ImgError> {
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad = || parse_err(0, format!("expected \"<width> <height> f32le\", found {header:?}"));
    let [w, h, "f32le"] = fields[..] else {
        return Err(bad());
    };
    let w: usize = w.parse().map_err(|_| bad())?;
    let h: usize = h.parse().map_err(|_| bad())?;
    if payload.len() != w * h * 4 {
        return Err(ImgError::RawLength {
            header_len: w * h,
            payload_len: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Image::from_vec(w, h, data)?)
}

/// Rounds distances to the nearest integer, saturating at `u16::MAX`.
pub fn quantize_distances(img: &Image<f32>) -> Image<u16> {
    img.map(|d| d.round().clamp(0.0, u16::MAX as f32) as u16)
}

/// Binary mask whose foreground is a union of random axis-aligned ellipses
/// covering `round(coverage_pct% of the pixels)`. Each ellipse covers at most
/// half of the remaining shortfall, so the target is never overshot; the last
/// few pixels are placed one at a time.
pub fn gen_synthetic_mask(width: usize, height: usize, coverage_pct: f64, seed: u64) -> Image<u8> {
    let n = width * height;
    let target = ((coverage_pct.clamp(0.0, 100.0) / 100.0) * n as f64).round() as usize;
    let mut img = Image::filled(width, height, 0u8);
    if target == n {
        img.data_mut().fill(BINARY_MAX);
        return img;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covered = 0;
    while covered < target {
        let deficit = target - covered;
        if deficit < 16 {
            let i = rng.random_range(0..n);
            if img.data()[i] == 0 {
                img.data_mut()[i] = BINARY_MAX;
                covered += 1;
            }
            continue;
        }
        let area = rng.random_range(0.25..1.0) * deficit as f64 / 2.0;
        let aspect: f64 = rng.random_range(0.5..2.0);
        let rx = (area / std::f64::consts::PI * aspect).sqrt();
        let ry = (area / std::f64::consts::PI / aspect).sqrt();
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let x0 = (cx - rx).floor().max(0.0) as usize;
        let x1 = ((cx + rx).ceil() as usize).min(width);
        let y0 = (cy - ry).floor().max(0.0) as usize;
        let y1 = ((cy + ry).ceil() as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                let i = y * width + x;
                if dx * dx + dy * dy <= 1.0 && img.data()[i] == 0 {
                    img.data_mut()[i] = BINARY_MAX;
                    covered += 1;
                }
            }
        }
    }
    img
}

/// Gray image: zero outside a synthetic mask of the given coverage, smooth
/// random terrain in 1..=255 inside.
pub fn gen_gray_mask(width: usize, height: usize, coverage_pct: f64, seed: u64) -> Image<u8> {
    let support = gen_synthetic_mask(width, height, coverage_pct, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    const CELL: usize = 16;
    let cw = width / CELL + 2;
    let ch = height / CELL + 2;
    let coarse: Vec<f64> = (0..cw * ch).map(|_| rng.random_range(30.0..255.0)).collect();
    Image::from_fn(width, height, |p| {
        if support.get(p) == 0 {
            return 0;
        }
        let fx = p.x as f64 / CELL as f64;
        let fy = p.y as f64 / CELL as f64;
        let (ix, iy) = (fx as usize, fy as usize);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let at = |x: usize, y: usize| coarse[y * cw + x];
        let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
        let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
        let v = top * (1.0 - ty) + bottom * ty + rng.random_range(-12.0..12.0);
        v.round().clamp(1.0, 255.0) as u8
    })
}

/// `max(mask - h, 0)`.
pub fn gen_marker<T: Pixel>(mask: &Image<T>, h: T) -> Image<T> {
    mask.map(|v| v.saturating_sub(h))
}
