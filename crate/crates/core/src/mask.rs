//! Mask and probability-map containers, confusion counts, and exhaustive
//! enumeration of small mask pairs.
//!
//! Masks carry their spatial dims but every overlap computation works on the
//! flat, row-major (x fastest) pixel vector.

use std::fmt;

use crate::error::{Error, Result};

/// Largest pixel count for which [`enumerate_mask_pairs`] will enumerate all `4^d` pairs.
pub const MAX_ENUM_D: usize = 14;

/// Spatial extent of a mask. `nz == 1` for 2D data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn flat(d: usize) -> Self {
        Dims::new(d, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_2d(&self) -> bool {
        self.nz == 1
    }

    /// Pixel-center coordinates of a flat index.
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / (self.nx * self.ny);
        (x, y, z)
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidDims(*self));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

fn check_same(a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch { left: a, right: b });
    }
    Ok(())
}

/// A binary segmentation: the set of pixels labeled foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    dims: Dims,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: Dims, data: Vec<bool>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::LengthMismatchDims {
                dims,
                len: data.len(),
            });
        }
        Ok(BinaryMask { dims, data })
    }

    /// 1D mask from 0/1 values; any nonzero entry is foreground.
    pub fn from_bits(bits: &[u8]) -> Self {
        BinaryMask {
            dims: Dims::flat(bits.len()),
            data: bits.iter().map(|&b| b != 0).collect(),
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        BinaryMask {
            dims,
            data: vec![false; dims.len()],
        }
    }

    pub fn ones(dims: Dims) -> Self {
        BinaryMask {
            dims,
            data: vec![true; dims.len()],
        }
    }

    /// Mask of `d` pixels whose pixel `i` is bit `d - 1 - i` of `bits`, so
    /// that integer order equals lexicographic order of the pixel vector.
    pub fn from_pattern(bits: u32, d: usize) -> Self {
        BinaryMask {
            dims: Dims::flat(d),
            data: (0..d).map(|i| (bits >> (d - 1 - i)) & 1 == 1).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, i: usize) -> bool {
        self.data[i]
    }

    pub fn set(&mut self, i: usize, v: bool) {
        self.data[i] = v;
    }

    /// Number of foreground pixels, `|y|`.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        BinaryMask {
            dims: self.dims,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    /// Foreground pixel indices in ascending order.
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    /// Relaxed view of the mask: vertex of the unit hypercube.
    pub fn to_prob(&self) -> ProbMap {
        ProbMap {
            dims: self.dims,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Keeps only the pixels selected by `keep`, as a flat mask.
    pub fn select(&self, keep: &BinaryMask) -> Result<BinaryMask> {
        check_same(self.dims, keep.dims)?;
        let data: Vec<bool> = self
            .data
            .iter()
            .zip(&keep.data)
            .filter_map(|(&v, &k)| k.then_some(v))
            .collect();
        BinaryMask::new(Dims::flat(data.len()), data)
    }
}

/// A relaxed prediction in `[0, 1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    dims: Dims,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::LengthMismatchDims {
                dims,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::ProbabilityOutOfRange { index, value });
        }
        Ok(ProbMap { dims, data })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        ProbMap::new(Dims::flat(values.len()), values.to_vec())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copy with coordinate `i` shifted by `delta`; the result may leave `[0, 1]`
    /// only if the caller has not checked, so this stays crate-private.
    pub(crate) fn perturbed(&self, i: usize, delta: f64) -> ProbMap {
        let mut data = self.data.clone();
        data[i] += delta;
        ProbMap {
            dims: self.dims,
            data,
        }
    }
}

/// Pixel counts of the four confusion cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    /// Counts of a pair of `d`-pixel bit patterns.
    pub fn from_patterns(y: u32, yhat: u32, d: usize) -> Self {
        let full = if d >= 32 { u32::MAX } else { (1u32 << d) - 1 };
        let tp = (y & yhat).count_ones() as u64;
        let fp = (!y & yhat & full).count_ones() as u64;
        let fn_ = (y & !yhat & full).count_ones() as u64;
        ConfusionCounts {
            tp,
            fp,
            fn_,
            tn: d as u64 - tp - fp - fn_,
        }
    }

    pub fn d(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `|y|`
    pub fn truth(&self) -> u64 {
        self.tp + self.fn_
    }

    /// `|ỹ|`
    pub fn predicted(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn union(&self) -> u64 {
        self.tp + self.fp + self.fn_
    }

    pub fn sym_diff(&self) -> u64 {
        self.fp + self.fn_
    }

    /// Counts with the roles of ground truth and prediction exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tp,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tn,
        }
    }
}

pub fn confusion_counts(y: &BinaryMask, yhat: &BinaryMask) -> Result<ConfusionCounts> {
    check_same(y.dims, yhat.dims)?;
    let mut c = ConfusionCounts::default();
    for (&a, &b) in y.data.iter().zip(&yhat.data) {
        match (a, b) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Binarizes `p` with a strict inequality: pixels equal to `t` are background.
pub fn threshold(p: &ProbMap, t: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange {
            value: t,
            reason: "threshold must lie in [0, 1]",
        });
    }
    Ok(BinaryMask {
        dims: p.dims,
        data: p.data.iter().map(|&v| v > t).collect(),
    })
}

/// Number of ordered pairs over `d` pixels, `4^d`.
pub fn pair_count(d: usize) -> u64 {
    1u64 << (2 * d)
}

/// Splits a pair index into its `(y, ỹ)` bit patterns.
#[inline]
pub fn pair_patterns(index: u64, d: usize) -> (u32, u32) {
    let y = (index >> d) as u32;
    let yhat = (index & ((1u64 << d) - 1)) as u32;
    (y, yhat)
}

/// All `4^d` ordered mask pairs over `d` pixels, in lexicographic order of
/// the concatenated pixel vectors `(y, ỹ)`.
#[derive(Debug, Clone)]
pub struct MaskPairs {
    d: usize,
    next: u64,
    end: u64,
}

impl MaskPairs {
    /// Restricts the stream to the index range `[start, end)`, for partitioned
    /// consumption.
    pub fn range(mut self, start: u64, end: u64) -> Self {
        let total = pair_count(self.d);
        self.next = start.min(total);
        self.end = end.min(total).max(self.next);
        self
    }
}

impl Iterator for MaskPairs {
    type Item = (BinaryMask, BinaryMask);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.end {
            return None;
        }
        let (y, yhat) = pair_patterns(self.next, self.d);
        self.next += 1;
        Some((
            BinaryMask::from_pattern(y, self.d),
            BinaryMask::from_pattern(yhat, self.d),
        ))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.end - self.next) as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for MaskPairs {}

pub fn enumerate_mask_pairs(d: usize) -> Result<MaskPairs> {
    if d > MAX_ENUM_D {
        return Err(Error::DTooLarge { d, max: MAX_ENUM_D });
    }
    if d == 0 {
        return Err(Error::InvalidDims(Dims::flat(0)));
    }
    Ok(MaskPairs {
        d,
        next: 0,
        end: pair_count(d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn counts_worked_pair() {
        let y = BinaryMask::from_bits(&[1, 1, 0, 0]);
        let yhat = BinaryMask::from_bits(&[1, 0, 1, 0]);
        assert_eq!(
            confusion_counts(&y, &yhat).unwrap(),
            ConfusionCounts::new(1, 1, 1, 1)
        );
    }

    #[test]
    fn counts_identity_and_empty() {
        let y = BinaryMask::from_bits(&[1, 0, 1, 1, 0]);
        assert_eq!(
            confusion_counts(&y, &y).unwrap(),
            ConfusionCounts::new(3, 0, 0, 2)
        );
        let z = BinaryMask::from_bits(&[0, 0, 0, 0]);
        assert_eq!(
            confusion_counts(&z, &z).unwrap(),
            ConfusionCounts::new(0, 0, 0, 4)
        );
    }

    #[test]
    fn counts_reject_dim_mismatch() {
        let a = BinaryMask::zeros(Dims::new(2, 2, 1));
        let b = BinaryMask::zeros(Dims::new(4, 1, 1));
        assert!(matches!(
            confusion_counts(&a, &b),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn pattern_counts_match_mask_counts() {
        for (y, yhat) in [(0b1100u32, 0b1010u32), (0, 0), (0b1111, 0b0001)] {
            let a = BinaryMask::from_pattern(y, 4);
            let b = BinaryMask::from_pattern(yhat, 4);
            assert_eq!(
                ConfusionCounts::from_patterns(y, yhat, 4),
                confusion_counts(&a, &b).unwrap()
            );
        }
    }

    #[test]
    fn threshold_is_strict() {
        let p = ProbMap::from_slice(&[0.3, 0.7]).unwrap();
        assert_eq!(threshold(&p, 0.5).unwrap().data(), &[false, true]);
        let p = ProbMap::from_slice(&[0.5, 0.5]).unwrap();
        assert_eq!(threshold(&p, 0.5).unwrap().data(), &[false, false]);
        let m = BinaryMask::from_bits(&[1, 0, 0, 1, 1]);
        assert_eq!(threshold(&m.to_prob(), 0.5).unwrap(), m);
        assert!(threshold(&p, 1.5).is_err());
    }

    #[test]
    fn probmap_rejects_out_of_range() {
        assert!(matches!(
            ProbMap::from_slice(&[0.2, 1.2]),
            Err(Error::ProbabilityOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn enumeration_small_cases() {
        let pairs: Vec<_> = enumerate_mask_pairs(1).unwrap().collect();
        let bits: Vec<(bool, bool)> = pairs.iter().map(|(a, b)| (a.get(0), b.get(0))).collect();
        assert_eq!(
            bits,
            vec![(false, false), (false, true), (true, false), (true, true)]
        );

        let mut two = enumerate_mask_pairs(2).unwrap();
        assert_eq!(two.len(), 16);
        let (a, b) = two.next().unwrap();
        assert_eq!((a.count(), b.count()), (0, 0));

        assert_eq!(enumerate_mask_pairs(5).unwrap().count(), 1024);
        assert!(matches!(
            enumerate_mask_pairs(15),
            Err(Error::DTooLarge { d: 15, .. })
        ));
    }

    #[test]
    fn enumeration_is_lexicographic_and_unique() {
        for d in 1..=5 {
            let all: Vec<Vec<bool>> = enumerate_mask_pairs(d)
                .unwrap()
                .map(|(a, b)| a.data().iter().chain(b.data()).copied().collect())
                .collect();
            assert_eq!(all.len() as u64, pair_count(d));
            assert!(all.windows(2).all(|w| w[0] < w[1]));
            let set: HashSet<_> = all.iter().collect();
            assert_eq!(set.len(), all.len());
        }
    }

    #[test]
    fn partitioned_enumeration_covers_everything_once() {
        let d = 4;
        let whole: Vec<_> = enumerate_mask_pairs(d).unwrap().collect();
        let mut parts = Vec::new();
        for (s, e) in [(0, 37), (37, 100), (100, 256)] {
            parts.extend(enumerate_mask_pairs(d).unwrap().range(s, e));
        }
        assert_eq!(whole, parts);
    }

    #[test]
    fn select_gathers_in_index_order() {
        let y = BinaryMask::from_bits(&[1, 0, 1, 1]);
        let keep = BinaryMask::from_bits(&[0, 1, 1, 1]);
        assert_eq!(y.select(&keep).unwrap().data(), &[false, true, true]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
            (1usize..40).prop_flat_map(|d| {
                (
                    proptest::collection::vec(any::<bool>(), d),
                    proptest::collection::vec(any::<bool>(), d),
                )
                    .prop_map(move |(a, b)| {
                        (
                            BinaryMask::new(Dims::flat(d), a).unwrap(),
                            BinaryMask::new(Dims::flat(d), b).unwrap(),
                        )
                    })
            })
        }

        proptest! {
            #[test]
            fn swap_exchanges_fp_and_fn((y, yhat) in mask_pair()) {
                let c = confusion_counts(&y, &yhat).unwrap();
                let s = confusion_counts(&yhat, &y).unwrap();
                prop_assert_eq!(s, c.swapped());
                prop_assert_eq!(c.d() as usize, y.len());
            }

            #[test]
            fn threshold_self_has_no_errors(v in proptest::collection::vec(0.0f64..=1.0, 1..50), t in 0.0f64..=1.0) {
                let p = ProbMap::from_slice(&v).unwrap();
                let m = threshold(&p, t).unwrap();
                let c = confusion_counts(&m, &m).unwrap();
                prop_assert_eq!(c.fp + c.fn_, 0);
            }
        }
    }
}
