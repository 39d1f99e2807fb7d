//! Binary pixel masks backed by a word-packed bitset.
//!
//! Each row is packed into `ceil(width/64)` 64-bit words so that
//! intersection/union counts reduce to word-wise AND/OR popcounts; the set
//! area is cached at construction. Masks are immutable once built.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::types::{CoreError, CoreResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    words_per_row: usize,
    words: Vec<u64>,
    area: usize,
}

impl BinaryMask {
    fn empty_unchecked(height: usize, width: usize) -> Self {
        let words_per_row = width.div_ceil(64);
        Self {
            height,
            width,
            words_per_row,
            words: vec![0; height * words_per_row],
            area: 0,
        }
    }

    /// All-false mask.
    pub fn empty(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        Self::empty_unchecked(height, width)
    }

    /// All-true mask.
    pub fn full(height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |_, _| true)
    }

    /// Builds a mask from a per-pixel predicate.
    pub fn from_fn<F: FnMut(usize, usize) -> bool>(
        height: usize,
        width: usize,
        mut bit: F,
    ) -> Self {
        let mut mask = Self::empty(height, width);
        for r in 0..height {
            for c in 0..width {
                if bit(r, c) {
                    mask.set_bit(r, c);
                }
            }
        }
        mask
    }

    /// Builds a mask from row-major booleans; the slice length must equal
    /// `height * width`.
    pub fn from_bits(height: usize, width: usize, bits: &[bool]) -> CoreResult<Self> {
        if bits.len() != height * width {
            return Err(CoreError::LengthMismatch {
                expected: height * width,
                actual: bits.len(),
            });
        }
        Ok(Self::from_fn(height, width, |r, c| bits[r * width + c]))
    }

    /// Mask with exactly `area` uniformly chosen distinct pixels set;
    /// deterministic for a fixed seed.
    pub fn random(height: usize, width: usize, area: usize, seed: u64) -> CoreResult<Self> {
        let total = height * width;
        if area > total {
            return Err(CoreError::AreaOutOfRange {
                area,
                height,
                width,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = (0..total).collect();
        let (chosen, _) = indices.partial_shuffle(&mut rng, area);
        let mut mask = Self::empty(height, width);
        for &idx in chosen.iter() {
            mask.set_bit(idx / width, idx % width);
        }
        mask
            .validate_area()
            .expect("random mask area bookkeeping is consistent");
        Ok(mask)
    }

    fn set_bit(&mut self, row: usize, col: usize) {
        let word = row * self.words_per_row + col / 64;
        let bit = 1u64 << (col % 64);
        if self.words[word] & bit == 0 {
            self.words[word] |= bit;
            self.area += 1;
        }
    }

    fn validate_area(&self) -> CoreResult<()> {
        let counted: u32 = self.words.iter().map(|w| w.count_ones()).sum();
        if counted as usize != self.area {
            return Err(CoreError::AreaOutOfRange {
                area: self.area,
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of set pixels (cached).
    pub fn area(&self) -> usize {
        self.area
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.height && col < self.width);
        let word = row * self.words_per_row + col / 64;
        self.words[word] >> (col % 64) & 1 == 1
    }

    /// Row-major indices of the set pixels.
    pub fn set_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.area);
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    out.push(r * self.width + c);
                }
            }
        }
        out
    }

    /// Mask with every bit flipped.
    pub fn complement(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| !self.get(r, c))
    }

    fn check_same_dims(&self, other: &Self) -> CoreResult<()> {
        if self.height != other.height || self.width != other.width {
            return Err(CoreError::MaskDimensionMismatch {
                a_height: self.height,
                a_width: self.width,
                b_height: other.height,
                b_width: other.width,
            });
        }
        Ok(())
    }

    /// Counts `(|a AND c|, |a OR c|)` by word-wise popcount.
    pub fn intersection_union(&self, other: &Self) -> CoreResult<(usize, usize)> {
        self.check_same_dims(other)?;
        let mut intersection = 0usize;
        let mut union = 0usize;
        for (a, b) in self.words.iter().zip(other.words.iter()) {
            intersection += (a & b).count_ones() as usize;
            union += (a | b).count_ones() as usize;
        }
        Ok((intersection, union))
    }

    /// Intersection-over-union; a pair of empty masks yields `None`.
    pub fn iou(&self, other: &Self) -> CoreResult<Option<f64>> {
        let (intersection, union) = self.intersection_union(other)?;
        if union == 0 {
            return Ok(None);
        }
        Ok(Some(intersection as f64 / union as f64))
    }
}

/// Serialized form: dimensions plus row-major indices of set pixels.
#[derive(Serialize, Deserialize)]
struct MaskRepr {
    height: usize,
    width: usize,
    set: Vec<usize>,
}

impl Serialize for BinaryMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        MaskRepr {
            height: self.height,
            width: self.width,
            set: self.set_indices(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BinaryMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = MaskRepr::deserialize(deserializer)?;
        if repr.height == 0 || repr.width == 0 {
            return Err(serde::de::Error::custom("mask dimensions must be positive"));
        }
        let total = repr.height * repr.width;
        let mut mask = BinaryMask::empty(repr.height, repr.width);
        for idx in repr.set {
            if idx >= total {
                return Err(serde::de::Error::custom(format!(
                    "pixel index {idx} out of range for {}x{}",
                    repr.height, repr.width
                )));
            }
            mask.set_bit(idx / repr.width, idx % repr.width);
        }
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Naive per-pixel oracle for intersection/union counts.
    fn naive_intersection_union(a: &BinaryMask, c: &BinaryMask) -> (usize, usize) {
        let mut intersection = 0;
        let mut union = 0;
        for r in 0..a.height() {
            for c_idx in 0..a.width() {
                let (pa, pc) = (a.get(r, c_idx), c.get(r, c_idx));
                if pa && pc {
                    intersection += 1;
                }
                if pa || pc {
                    union += 1;
                }
            }
        }
        (intersection, union)
    }

    #[test]
    fn identical_full_masks() {
        let a = BinaryMask::full(3, 3);
        assert_eq!(a.intersection_union(&a).unwrap(), (9, 9));
    }

    #[test]
    fn disjoint_columns() {
        let a = BinaryMask::from_fn(3, 3, |_, c| c == 0);
        let b = BinaryMask::from_fn(3, 3, |_, c| c == 2);
        assert_eq!(a.intersection_union(&b).unwrap(), (0, 6));
    }

    #[test]
    fn half_row_overlap() {
        // a = pixels 0..8 (rows 0-1) of a 4x4 grid, c = pixels 4..12 (rows 1-2)
        let a = BinaryMask::from_fn(4, 4, |r, _| r < 2);
        let c = BinaryMask::from_fn(4, 4, |r, _| r == 1 || r == 2);
        assert_eq!(a.intersection_union(&c).unwrap(), (4, 12));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let a = BinaryMask::full(3, 3);
        let b = BinaryMask::full(3, 4);
        assert!(a.intersection_union(&b).is_err());
    }

    #[test]
    fn random_full_area_is_all_true() {
        let m = BinaryMask::random(4, 4, 16, 123).unwrap();
        assert_eq!(m.area(), 16);
        assert_eq!(m, BinaryMask::full(4, 4));
    }

    #[test]
    fn random_zero_area_is_all_false() {
        let m = BinaryMask::random(4, 4, 0, 123).unwrap();
        assert_eq!(m.area(), 0);
        assert_eq!(m, BinaryMask::empty(4, 4));
    }

    #[test]
    fn random_is_deterministic_per_seed() {
        let a = BinaryMask::random(8, 8, 16, 7).unwrap();
        let b = BinaryMask::random(8, 8, 16, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.area(), 16);
        let c = BinaryMask::random(8, 8, 16, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_rejects_oversized_area() {
        assert!(BinaryMask::random(4, 4, 17, 0).is_err());
    }

    #[test]
    fn complement_flips_every_bit() {
        let m = BinaryMask::random(5, 70, 40, 3).unwrap();
        let inv = m.complement();
        assert_eq!(inv.area(), 5 * 70 - 40);
        assert_eq!(inv.complement(), m);
        let (inter, union) = m.intersection_union(&inv).unwrap();
        assert_eq!(inter, 0);
        assert_eq!(union, 5 * 70);
    }

    #[test]
    fn serde_round_trip() {
        let m = BinaryMask::random(6, 9, 20, 11).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: BinaryMask = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn deserialize_rejects_out_of_range_index() {
        let bad = r#"{"height":2,"width":2,"set":[4]}"#;
        assert!(serde_json::from_str::<BinaryMask>(bad).is_err());
    }

    proptest! {
        #[test]
        fn packed_matches_naive_oracle(
            h in 1usize..=16,
            w in 1usize..=16,
            seed_a in 0u64..1000,
            seed_b in 0u64..1000,
            frac_a in 0.0f64..=1.0,
            frac_b in 0.0f64..=1.0,
        ) {
            let area_a = (frac_a * (h * w) as f64) as usize;
            let area_b = (frac_b * (h * w) as f64) as usize;
            let a = BinaryMask::random(h, w, area_a, seed_a).unwrap();
            let c = BinaryMask::random(h, w, area_b, seed_b).unwrap();
            prop_assert_eq!(a.intersection_union(&c).unwrap(), naive_intersection_union(&a, &c));
        }

        #[test]
        fn intersection_union_identities(
            h in 1usize..=16,
            w in 1usize..=16,
            seed_a in 0u64..1000,
            seed_b in 0u64..1000,
            area_a in 0usize..=256,
            area_b in 0usize..=256,
        ) {
            let area_a = area_a.min(h * w);
            let area_b = area_b.min(h * w);
            let a = BinaryMask::random(h, w, area_a, seed_a).unwrap();
            let c = BinaryMask::random(h, w, area_b, seed_b).unwrap();
            let (inter, union) = a.intersection_union(&c).unwrap();
            prop_assert!(inter <= a.area().min(c.area()));
            prop_assert_eq!(union, a.area() + c.area() - inter);
            // symmetry
            prop_assert_eq!(c.intersection_union(&a).unwrap(), (inter, union));
        }
    }
}
