//! Map scaling and the two dissimilarity readings used by the model.
//!
//! Cosine similarity is computed on min-max scaled maps; L1 distance on
//! sum-normalized maps. Both scalings are applied by the callers so that the
//! same consensus grid can feed either pipeline.

use thiserror::Error;

use crate::grid::FloatGrid;
use crate::special::neumaier_sum;

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("grids must share dimensions: {a_w}x{a_h}x{a_c} vs {b_w}x{b_h}x{b_c}")]
    DimensionMismatch {
        a_w: usize,
        a_h: usize,
        a_c: usize,
        b_w: usize,
        b_h: usize,
        b_c: usize,
    },
    #[error("negative value {value} at index {index}; maps must be nonnegative")]
    NegativeValue { index: usize, value: f64 },
    #[error("cannot sum-normalize a zero-mass grid")]
    ZeroMass,
    #[error("similarity {0} is outside [0, 1]")]
    OutOfRange(f64),
}

/// Cosine similarity in [0, 1] (guaranteed by nonnegative inputs).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Result<Self, SimilarityError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(SimilarityError::OutOfRange(value));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// L1 distance between two distributions; lies in [0, 2].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct L1Distance(f64);

impl L1Distance {
    pub fn new(value: f64) -> Result<Self, SimilarityError> {
        if !value.is_finite() || value < 0.0 {
            return Err(SimilarityError::OutOfRange(value));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Result of min-max scaling. `constant_input` flags a degenerate source
/// grid (all values equal), which scales to all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaled {
    pub grid: FloatGrid,
    pub constant_input: bool,
}

/// Rescales values affinely so the minimum maps to exactly 0 and the
/// maximum to exactly 1. A constant grid becomes all zeros and is flagged.
pub fn minmax_scale(grid: &FloatGrid) -> MinMaxScaled {
    let values = grid.values();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        log::warn!("min-max scaling a constant grid; result is all zeros");
        return MinMaxScaled {
            grid: grid.map(|_| 0.0),
            constant_input: true,
        };
    }
    let span = hi - lo;
    MinMaxScaled {
        grid: grid.map(|v| (v - lo) / span),
        constant_input: false,
    }
}

/// Divides by the total mass so values sum to 1. Errors on negative values
/// or zero total mass.
pub fn sum_normalize(grid: &FloatGrid) -> Result<FloatGrid, SimilarityError> {
    if let Some((index, &value)) = grid.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(SimilarityError::NegativeValue { index, value });
    }
    let total = neumaier_sum(grid.values().iter().copied());
    if total <= 0.0 {
        return Err(SimilarityError::ZeroMass);
    }
    Ok(grid.map(|v| v / total))
}

fn check_dims(a: &FloatGrid, b: &FloatGrid) -> Result<(), SimilarityError> {
    if !a.same_shape(b) {
        return Err(SimilarityError::DimensionMismatch {
            a_w: a.width(),
            a_h: a.height(),
            a_c: a.channels(),
            b_w: b.width(),
            b_h: b.height(),
            b_c: b.channels(),
        });
    }
    Ok(())
}

/// Cosine similarity between two nonnegative grids.
///
/// Nonnegativity pins the result to [0, 1]. If either grid has zero norm the
/// similarity is defined as 0 (with a warning), so fully blank maps compare
/// as maximally dissimilar rather than erroring out mid-pipeline.
pub fn sloman_similarity(a: &FloatGrid, b: &FloatGrid) -> Result<SimilarityScore, SimilarityError> {
    check_dims(a, b)?;
    for (index, &value) in a.values().iter().enumerate() {
        if value < 0.0 {
            return Err(SimilarityError::NegativeValue { index, value });
        }
    }
    for (index, &value) in b.values().iter().enumerate() {
        if value < 0.0 {
            return Err(SimilarityError::NegativeValue { index, value });
        }
    }
    let dot = neumaier_sum(
        a.values()
            .iter()
            .zip(b.values())
            .map(|(&x, &y)| x * y),
    );
    let na = neumaier_sum(a.values().iter().map(|&x| x * x));
    let nb = neumaier_sum(b.values().iter().map(|&y| y * y));
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine similarity of a zero-norm grid defined as 0");
        return Ok(SimilarityScore(0.0));
    }
    let cos = dot / (libm::sqrt(na) * libm::sqrt(nb));
    // Guard the upper edge against rounding drift.
    Ok(SimilarityScore(cos.clamp(0.0, 1.0)))
}

/// L1 distance between two grids (callers pass sum-normalized maps, making
/// the range [0, 2]).
pub fn l1_dissimilarity(a: &FloatGrid, b: &FloatGrid) -> Result<L1Distance, SimilarityError> {
    check_dims(a, b)?;
    let dist = neumaier_sum(
        a.values()
            .iter()
            .zip(b.values())
            .map(|(&x, &y)| (x - y).abs()),
    );
    Ok(L1Distance(dist.max(0.0)))
}

/// Convenience: min-max scale both grids, then cosine.
pub fn scaled_similarity(a: &FloatGrid, b: &FloatGrid) -> Result<SimilarityScore, SimilarityError> {
    check_dims(a, b)?;
    sloman_similarity(&minmax_scale(a).grid, &minmax_scale(b).grid)
}

/// Convenience: sum-normalize both grids, then L1.
pub fn normalized_l1(a: &FloatGrid, b: &FloatGrid) -> Result<L1Distance, SimilarityError> {
    check_dims(a, b)?;
    l1_dissimilarity(&sum_normalize(a)?, &sum_normalize(b)?)
}
