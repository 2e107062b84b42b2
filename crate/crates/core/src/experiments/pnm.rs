//! Binary portable graymap/pixmap (P5/P6) reading and writing.
//!
//! Samples are exposed as `f64` in `[0, 1]`, interleaved per pixel.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 for graymaps, 3 for pixmaps.
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!("{channels} channels")));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Channel `c` as a row-major plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        let mut data = vec![0.0; width * height * channels];
        for (c, plane) in planes.iter().enumerate() {
            if plane.len() != width * height {
                return Err(Error::ShapeMismatch("plane size".into()));
            }
            for (i, &v) in plane.iter().enumerate() {
                data[i * channels + c] = v;
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn to_grayscale(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| (px[0] + px[1] + px[2]) / 3.0)
            .collect();
        Self {
            channels: 1,
            data,
            ..*self
        }
    }

    /// Centered square crop followed by box-filter resampling to `side × side`.
    pub fn square(&self, side: usize) -> Self {
        let s = self.width.min(self.height);
        let (x0, y0) = ((self.width - s) / 2, (self.height - s) / 2);
        let mut data = vec![0.0; side * side * self.channels];
        let scale = s as f64 / side as f64;
        for r in 0..side {
            let (ya, yb) = (r as f64 * scale, (r + 1) as f64 * scale);
            for c in 0..side {
                let (xa, xb) = (c as f64 * scale, (c + 1) as f64 * scale);
                for ch in 0..self.channels {
                    data[(r * side + c) * self.channels + ch] =
                        self.area_average(x0, y0, (xa, xb), (ya, yb), ch);
                }
            }
        }
        Self {
            width: side,
            height: side,
            channels: self.channels,
            data,
        }
    }

    /// Mean of channel `ch` over the source rectangle `[xa, xb) × [ya, yb)`,
    /// weighting partially covered pixels by their overlap.
    fn area_average(&self, x0: usize, y0: usize, (xa, xb): (f64, f64), (ya, yb): (f64, f64), ch: usize) -> f64 {
        let (mut acc, mut weight) = (0.0, 0.0);
        for py in ya.floor() as usize..(yb.ceil() as usize) {
            let wy = (yb.min(py as f64 + 1.0) - ya.max(py as f64)).max(0.0);
            for px in xa.floor() as usize..(xb.ceil() as usize) {
                let wx = (xb.min(px as f64 + 1.0) - xa.max(px as f64)).max(0.0);
                let idx = ((y0 + py) * self.width + x0 + px) * self.channels + ch;
                acc += wx * wy * self.data[idx];
                weight += wx * wy;
            }
        }
        acc / weight
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("truncated PNM header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::Format("non-ASCII PNM header".into()))
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| Error::Format(format!("bad PNM header field {t:?}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let mut cur = Cursor { bytes, pos: 0 };
    let channels = match cur.token()? {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported PNM magic {other:?}"))),
    };
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = cur.number()?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!(
            "bad PNM geometry {width}x{height}, maxval {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = cur.pos + 1;
    let wide = maxval > 255;
    let samples = width * height * channels;
    let needed = samples * if wide { 2 } else { 1 };
    let raster = bytes
        .get(start..start + needed)
        .ok_or_else(|| Error::Format("truncated PNM raster".into()))?;
    let max = maxval as f64;
    let data = if wide {
        raster
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / max)
            .collect()
    } else {
        raster.iter().map(|&b| b as f64 / max).collect()
    };
    Image::new(width, height, channels, data)
}

/// 8-bit P5/P6 encoding; samples are clamped to `[0, 1]`.
pub fn encode(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(
        image
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn read(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    decode(&bytes)
}

pub fn write(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), encode(image)).map_err(|e| Error::io(path, e))
}
