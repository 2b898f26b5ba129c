//! Binary rasters and their run-length wire form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("mask dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("run lengths sum to {sum}, expected {expected} ({width}x{height})")]
    RunSumMismatch {
        sum: u64,
        expected: u64,
        width: u32,
        height: u32,
    },
    #[error("negative run length {value} at index {index}")]
    NegativeRun { index: usize, value: i64 },
    #[error("mask bit buffer has {len} entries, expected {expected}")]
    BufferLength { len: usize, expected: usize },
    #[error("mask image: {0}")]
    Image(String),
}

/// A `width` x `height` raster of {0,1} values, stored row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BinaryMask {}x{} (area {})", self.width, self.height, self.area())?;
        if self.width <= 32 && self.height <= 32 {
            for row in self.bits.chunks(self.width as usize) {
                let line: String = row.iter().map(|&b| if b { '#' } else { '.' }).collect();
                writeln!(f, "  {line}")?;
            }
        }
        Ok(())
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Result<Self, CodecError> {
        if width == 0 || height == 0 {
            return Err(CodecError::EmptyDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        })
    }

    pub fn filled(width: u32, height: u32) -> Result<Self, CodecError> {
        let mut mask = Self::new(width, height)?;
        mask.bits.fill(true);
        Ok(mask)
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, CodecError> {
        if width == 0 || height == 0 {
            return Err(CodecError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(CodecError::BufferLength {
                len: bits.len(),
                expected,
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, CodecError> {
        let mut mask = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                mask.bits[(y * width + x) as usize] = f(x, y);
            }
        }
        Ok(mask)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y * self.width + x) as usize] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels as `(x, y)` pairs in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    /// Panics if the dimensions differ.
    pub fn or_assign(&mut self, other: &BinaryMask) {
        assert_eq!(self.dims(), other.dims(), "mask dimension mismatch");
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    pub fn union<'a>(
        width: u32,
        height: u32,
        masks: impl IntoIterator<Item = &'a BinaryMask>,
    ) -> Result<Self, CodecError> {
        let mut out = Self::new(width, height)?;
        for m in masks {
            if m.dims() != out.dims() {
                return Err(CodecError::BufferLength {
                    len: m.bits.len(),
                    expected: out.bits.len(),
                });
            }
            out.or_assign(m);
        }
        Ok(out)
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn intersect(&self, other: &BinaryMask) -> Self {
        assert_eq!(self.dims(), other.dims(), "mask dimension mismatch");
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    /// Morphological dilation with a `(2r+1)`-square structuring element
    /// (the 8-neighbourhood applied `radius` times).
    pub fn dilate(&self, radius: u32) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width as i64, self.height as i64);
        let r = radius as i64;
        // Separable: a square element is the product of a row and a column pass.
        let mut rows = vec![false; self.bits.len()];
        for y in 0..h {
            for x in 0..w {
                let lo = (x - r).max(0);
                let hi = (x + r).min(w - 1);
                rows[(y * w + x) as usize] = (lo..=hi).any(|xx| self.bits[(y * w + xx) as usize]);
            }
        }
        let mut out = vec![false; self.bits.len()];
        for y in 0..h {
            for x in 0..w {
                let lo = (y - r).max(0);
                let hi = (y + r).min(h - 1);
                out[(y * w + x) as usize] = (lo..=hi).any(|yy| rows[(yy * w + x) as usize]);
            }
        }
        Self {
            width: self.width,
            height: self.height,
            bits: out,
        }
    }

    pub fn to_rle(&self) -> RleMask {
        rle_encode(self)
    }

    /// Reads an 8-bit single-channel PNG; values above 127 are foreground.
    pub fn load_png(path: &Path) -> Result<Self, CodecError> {
        let img = image::open(path)
            .map_err(|e| CodecError::Image(format!("{}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = img.dimensions();
        Self::from_bits(w, h, img.pixels().map(|p| p.0[0] > 127).collect())
    }

    pub fn to_luma_image(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width, self.height, |x, y| {
            image::Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }
}

/// Row-major run-length encoding. `counts` alternates zero-runs and one-runs,
/// starting with the (possibly empty) leading zero-run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<i64>,
}

impl RleMask {
    pub fn decode(&self) -> Result<BinaryMask, CodecError> {
        rle_decode(&self.counts, self.width, self.height)
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run: i64 = 0;
    for &bit in &mask.bits {
        if bit != current {
            counts.push(run);
            run = 0;
            current = bit;
        }
        run += 1;
    }
    counts.push(run);
    RleMask {
        width: mask.width,
        height: mask.height,
        counts,
    }
}

pub fn rle_decode(counts: &[i64], width: u32, height: u32) -> Result<BinaryMask, CodecError> {
    if width == 0 || height == 0 {
        return Err(CodecError::EmptyDimensions { width, height });
    }
    let expected = width as u64 * height as u64;
    let mut sum: u64 = 0;
    for (index, &value) in counts.iter().enumerate() {
        if value < 0 {
            return Err(CodecError::NegativeRun { index, value });
        }
        sum = sum.saturating_add(value as u64);
    }
    if sum != expected {
        return Err(CodecError::RunSumMismatch {
            sum,
            expected,
            width,
            height,
        });
    }
    let mut bits = Vec::with_capacity(expected as usize);
    for (i, &run) in counts.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, run as usize));
    }
    Ok(BinaryMask {
        width,
        height,
        bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_zero_is_single_run() {
        let m = BinaryMask::new(3, 3).unwrap();
        assert_eq!(rle_encode(&m).counts, vec![9]);
    }

    #[test]
    fn all_one_starts_with_empty_zero_run() {
        let m = BinaryMask::filled(2, 2).unwrap();
        assert_eq!(rle_encode(&m).counts, vec![0, 4]);
    }

    #[test]
    fn decode_rejects_bad_runs() {
        assert!(matches!(
            rle_decode(&[3, 2], 2, 2),
            Err(CodecError::RunSumMismatch { sum: 5, .. })
        ));
        assert!(matches!(
            rle_decode(&[5, -1], 2, 2),
            Err(CodecError::NegativeRun { index: 1, value: -1 })
        ));
        assert!(matches!(
            rle_decode(&[0], 0, 2),
            Err(CodecError::EmptyDimensions { .. })
        ));
    }

    #[test]
    fn negative_run_rejected_from_json() {
        let rle: RleMask = serde_json::from_str(r#"{"width":2,"height":1,"counts":[3,-1]}"#).unwrap();
        assert!(matches!(rle.decode(), Err(CodecError::NegativeRun { .. })));
    }

    fn brute_dilate(m: &BinaryMask, r: u32) -> BinaryMask {
        let r = r as i64;
        BinaryMask::from_fn(m.width(), m.height(), |x, y| {
            (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    xx >= 0
                        && yy >= 0
                        && xx < m.width() as i64
                        && yy < m.height() as i64
                        && m.get(xx as u32, yy as u32)
                })
            })
        })
        .unwrap()
    }

    #[test]
    fn dilation_radius_one_on_fixture() {
        let m = BinaryMask::from_fn(5, 5, |x, y| (x, y) == (1, 1) || (x, y) == (4, 3)).unwrap();
        let d = m.dilate(1);
        assert_eq!(d, brute_dilate(&m, 1));
        // 3x3 block around (1,1) plus clipped 2x3 block around (4,3).
        assert_eq!(d.area(), 9 + 6);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1u32..20, 1u32..20).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), (w * h) as usize)
                .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rle_roundtrip(m in arb_mask()) {
            let rle = rle_encode(&m);
            prop_assert_eq!(rle.counts.iter().sum::<i64>(), (m.width() * m.height()) as i64);
            prop_assert_eq!(rle.decode().unwrap(), m);
        }

        #[test]
        fn dilation_matches_brute_force(m in arb_mask(), r in 0u32..3) {
            prop_assert_eq!(m.dilate(r), brute_dilate(&m, r));
        }

        #[test]
        fn union_commutative_idempotent(a in arb_mask(), seed in any::<u64>()) {
            let (w, h) = a.dims();
            let b = BinaryMask::from_fn(w, h, |x, y| (seed >> ((x + y) % 64)) & 1 == 1).unwrap();
            let ab = BinaryMask::union(w, h, [&a, &b]).unwrap();
            let ba = BinaryMask::union(w, h, [&b, &a]).unwrap();
            prop_assert_eq!(&ab, &ba);
            prop_assert_eq!(BinaryMask::union(w, h, [&a, &a]).unwrap(), a);
        }
    }
}
