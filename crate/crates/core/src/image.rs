//! Raster containers and binary PGM (P5) I/O.

use std::io::{self, BufRead, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a binary PGM: {0}")]
    Format(String),
}

/// Row-major binary raster; `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, val: bool) {
        self.data[v * self.width + u] = val;
    }

    /// Signed lookup; anything outside the raster reads as background.
    #[inline]
    pub fn get_i(&self, u: i64, v: i64) -> bool {
        u >= 0
            && v >= 0
            && (u as usize) < self.width
            && (v as usize) < self.height
            && self.get(u as usize, v as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Foreground pixel coordinates in raster order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    pub fn from_pixels(width: usize, height: usize, px: &[(usize, usize)]) -> Self {
        let mut m = Self::new(width, height);
        for &(u, v) in px {
            m.set(u, v, true);
        }
        m
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |u, v| {
            self.get(self.width - 1 - u, v)
        })
    }

    /// 3x3 (8-neighbour) binary dilation.
    pub fn dilate(&self) -> Self {
        Self::from_fn(self.width, self.height, |u, v| {
            let (u, v) = (u as i64, v as i64);
            (-1..=1).any(|dv| (-1..=1).any(|du| self.get_i(u + du, v + dv)))
        })
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn write_pgm<W: Write>(&self, w: W) -> Result<(), PgmError> {
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_pgm_bytes(w, self.width, self.height, &bytes)
    }

    /// Any byte ≥ 128 is foreground.
    pub fn read_pgm<R: Read>(r: R) -> Result<Self, PgmError> {
        let (width, height, bytes) = read_pgm_bytes(r)?;
        Ok(Self {
            width,
            height,
            data: bytes.into_iter().map(|b| b >= 128).collect(),
        })
    }
}

/// Row-major grayscale raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: f32) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, val: f32) {
        self.data[v * self.width + u] = val;
    }

    pub fn threshold(&self, t: f32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&x| x >= t).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for v in 0..self.height {
            for u in 0..self.width {
                out.set(u, v, self.get(self.width - 1 - u, v));
            }
        }
        out
    }

    pub fn invert(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&x| 1.0 - x).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn write_pgm<W: Write>(&self, w: W) -> Result<(), PgmError> {
        write_pgm_bytes(w, self.width, self.height, &self.to_bytes())
    }

    pub fn read_pgm<R: Read>(r: R) -> Result<Self, PgmError> {
        let (width, height, bytes) = read_pgm_bytes(r)?;
        Ok(Self {
            width,
            height,
            data: bytes.into_iter().map(|b| b as f32 / 255.0).collect(),
        })
    }
}

fn write_pgm_bytes<W: Write>(
    mut w: W,
    width: usize,
    height: usize,
    bytes: &[u8],
) -> Result<(), PgmError> {
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_pgm_bytes<R: Read>(r: R) -> Result<(usize, usize, Vec<u8>), PgmError> {
    let mut r = io::BufReader::new(r);
    let mut header = Vec::new();
    // magic, width, height, maxval; '#' comments allowed between tokens
    while header.len() < 4 {
        let buf = r.fill_buf()?;
        if buf.is_empty() {
            return Err(PgmError::Format("truncated header".into()));
        }
        let c = buf[0];
        if c == b'#' {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            r.consume(1);
            continue;
        }
        let mut tok = Vec::new();
        loop {
            let buf = r.fill_buf()?;
            if buf.is_empty() || buf[0].is_ascii_whitespace() {
                break;
            }
            tok.push(buf[0]);
            r.consume(1);
        }
        header.push(String::from_utf8_lossy(&tok).into_owned());
    }
    // exactly one whitespace byte separates maxval from the raster
    r.consume(1);
    if header[0] != "P5" {
        return Err(PgmError::Format(format!("magic {:?}", header[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| PgmError::Format(format!("bad header field {s:?}")))
    };
    let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
    if maxval != 255 {
        return Err(PgmError::Format(format!("maxval {maxval} unsupported")));
    }
    let mut bytes = vec![0u8; width * height];
    r.read_exact(&mut bytes)?;
    Ok((width, height, bytes))
}
