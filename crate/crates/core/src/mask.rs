//! Binary masks and their on-disk formats (8-bit grayscale PNG, plain PBM).

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("bitmap has {actual} pixels, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("mask has no foreground pixels")]
    NoForeground,
    #[error("malformed PBM: {0}")]
    Pbm(String),
    #[error("unsupported mask file extension: {0}")]
    UnsupportedFormat(String),
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode error: {0}")]
    Image(#[from] image::ImageError),
}

/// Row-major foreground bitmap.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMask({}x{}, {} fg)", self.width, self.height, self.area())
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::EmptyDimensions { width, height });
        }
        if bits.len() != width * height {
            return Err(MaskError::LengthMismatch {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self, MaskError> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, MaskError> {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    /// Parses rows of `0`/`1` (or `.`/`#`) characters; whitespace is ignored
    /// within rows and blank lines are skipped.
    pub fn from_ascii(art: &str) -> Result<Self, MaskError> {
        let rows: Vec<Vec<bool>> = art
            .lines()
            .map(|l| {
                l.chars()
                    .filter(|c| !c.is_whitespace())
                    .map(|c| c == '1' || c == '#')
                    .collect::<Vec<_>>()
            })
            .filter(|r| !r.is_empty())
            .collect();
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(MaskError::Pbm("ragged rows".into()));
        }
        Self::new(width, height, rows.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.width != other.width || self.height != other.height {
            return Err(MaskError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Loads a mask by extension: `.png` (nonzero luma = foreground) or `.pbm` (P1).
    pub fn load(path: &Path) -> Result<Self, MaskError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "png" => {
                let img = image::open(path)?.into_luma8();
                let (w, h) = img.dimensions();
                let bits = img.pixels().map(|p| p.0[0] != 0).collect();
                Self::new(w as usize, h as usize, bits)
            }
            "pbm" => {
                let text = std::fs::read_to_string(path).map_err(|source| MaskError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                Self::from_pbm(&text)
            }
            other => Err(MaskError::UnsupportedFormat(other.to_string())),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), MaskError> {
        let pixels: Vec<u8> = self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, pixels)
            .expect("buffer length matches dimensions");
        img.save(path)?;
        Ok(())
    }

    /// Plain PBM (`P1`); `1` marks foreground. Comments start with `#`.
    pub fn from_pbm(text: &str) -> Result<Self, MaskError> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        if tokens.next() != Some("P1") {
            return Err(MaskError::Pbm("missing P1 magic".into()));
        }
        let mut dim = |name: &str| -> Result<usize, MaskError> {
            tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| MaskError::Pbm(format!("bad {name}")))
        };
        let width = dim("width")?;
        let height = dim("height")?;
        // P1 allows pixels to be packed without separators.
        let mut bits = Vec::with_capacity(width * height);
        for tok in tokens {
            for c in tok.chars() {
                match c {
                    '0' => bits.push(false),
                    '1' => bits.push(true),
                    other => return Err(MaskError::Pbm(format!("unexpected character `{other}`"))),
                }
            }
        }
        Self::new(width, height, bits)
    }

    pub fn to_pbm(&self) -> String {
        let mut out = format!("P1\n{} {}\n", self.width, self.height);
        for row in self.bits.chunks(self.width) {
            let line: Vec<&str> = row.iter().map(|b| if *b { "1" } else { "0" }).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(
            BinaryMask::new(0, 3, vec![]),
            Err(MaskError::EmptyDimensions { .. })
        ));
        assert!(matches!(
            BinaryMask::new(2, 2, vec![true; 3]),
            Err(MaskError::LengthMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn pbm_round_trip_and_packed_form() {
        let m = BinaryMask::from_ascii("0110\n1001\n").unwrap();
        let back = BinaryMask::from_pbm(&m.to_pbm()).unwrap();
        assert_eq!(m, back);
        let packed = BinaryMask::from_pbm("P1\n# comment\n4 2\n0110\n1001\n").unwrap();
        assert_eq!(m, packed);
        assert!(BinaryMask::from_pbm("P4\n1 1\n0").is_err());
        assert!(BinaryMask::from_pbm("P1\n2 2\n0 1 1").is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = BinaryMask::from_fn(7, 5, |x, y| (x + y) % 3 == 0).unwrap();
        m.save_png(&path).unwrap();
        assert_eq!(BinaryMask::load(&path).unwrap(), m);
        assert!(matches!(
            BinaryMask::load(&dir.path().join("m.bmp")),
            Err(MaskError::UnsupportedFormat(_))
        ));
    }
}
