//! Dense float grids: stimulus images, drawn masks, and saliency maps.
//!
//! Values are stored channel-major (`c` contiguous planes of `h` rows of `w`
//! columns), which is also the on-disk layout used by the companion crate.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid dimensions must be positive, got {width}x{height}x{channels}")]
    EmptyDimension {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("expected {expected} values for {width}x{height}x{channels}, got {actual}")]
    LengthMismatch {
        width: usize,
        height: usize,
        channels: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("saliency value {value} at index {index} is outside [0, 1]")]
    OutOfUnitRange { index: usize, value: f64 },
    #[error("saliency map must have exactly one channel, got {0}")]
    MultiChannel(usize),
}

/// A `width x height x channels` grid of finite f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatGrid {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FloatGrid {
    /// Builds a grid, verifying dimensions, length, and finiteness.
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(GridError::EmptyDimension {
                width,
                height,
                channels,
            });
        }
        let expected = width * height * channels;
        if values.len() != expected {
            return Err(GridError::LengthMismatch {
                width,
                height,
                channels,
                expected,
                actual: values.len(),
            });
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(idx));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    /// Constant-valued grid. Panics if any dimension is zero; intended for
    /// call sites with statically known shapes.
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(
            width > 0 && height > 0 && channels > 0,
            "filled() needs positive dimensions"
        );
        assert!(value.is_finite());
        Self {
            width,
            height,
            channels,
            values: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixels in one channel plane.
    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn index(&self, channel: usize, y: usize, x: usize) -> usize {
        debug_assert!(channel < self.channels && y < self.height && x < self.width);
        channel * self.plane_len() + y * self.width + x
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.values[self.index(channel, y, x)]
    }

    /// True when spatial dimensions and channel count all match.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    /// True when spatial dimensions match (channel counts may differ).
    pub fn same_plane(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Applies `f` to every value, rebuilding the grid. The result must stay
    /// finite; the caller guarantees that.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// A single-channel grid with every value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    grid: FloatGrid,
}

impl SaliencyMap {
    pub fn new(grid: FloatGrid) -> Result<Self, GridError> {
        if grid.channels() != 1 {
            return Err(GridError::MultiChannel(grid.channels()));
        }
        if let Some((index, &value)) = grid
            .values()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(GridError::OutOfUnitRange { index, value });
        }
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &FloatGrid {
        &self.grid
    }

    pub fn into_grid(self) -> FloatGrid {
        self.grid
    }
}

impl core::ops::Deref for SaliencyMap {
    type Target = FloatGrid;

    fn deref(&self) -> &FloatGrid {
        &self.grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_shape_and_values() {
        assert!(FloatGrid::new(2, 2, 1, vec![0.0; 4]).is_ok());
        assert!(matches!(
            FloatGrid::new(0, 2, 1, vec![]),
            Err(GridError::EmptyDimension { .. })
        ));
        assert!(matches!(
            FloatGrid::new(2, 2, 1, vec![0.0; 3]),
            Err(GridError::LengthMismatch { expected: 4, actual: 3, .. })
        ));
        assert!(matches!(
            FloatGrid::new(2, 1, 1, vec![0.0, f64::NAN]),
            Err(GridError::NonFinite(1))
        ));
        assert!(matches!(
            FloatGrid::new(1, 1, 1, vec![f64::INFINITY]),
            Err(GridError::NonFinite(0))
        ));
    }

    #[test]
    fn indexing_is_channel_major() {
        let g = FloatGrid::new(2, 2, 2, (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(g.get(0, 0, 0), 0.0);
        assert_eq!(g.get(0, 1, 1), 3.0);
        assert_eq!(g.get(1, 0, 0), 4.0);
        assert_eq!(g.get(1, 1, 1), 7.0);
    }

    #[test]
    fn saliency_rejects_out_of_range_and_multichannel() {
        let ok = FloatGrid::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert!(SaliencyMap::new(ok).is_ok());
        let bad = FloatGrid::new(2, 1, 1, vec![0.5, 1.2]).unwrap();
        assert!(matches!(
            SaliencyMap::new(bad),
            Err(GridError::OutOfUnitRange { index: 1, .. })
        ));
        let multi = FloatGrid::filled(2, 1, 3, 0.5);
        assert!(matches!(
            SaliencyMap::new(multi),
            Err(GridError::MultiChannel(3))
        ));
    }

    #[test]
    fn shape_comparisons() {
        let a = FloatGrid::filled(3, 2, 1, 0.0);
        let b = FloatGrid::filled(3, 2, 4, 0.0);
        let c = FloatGrid::filled(2, 3, 1, 0.0);
        assert!(a.same_plane(&b));
        assert!(!a.same_shape(&b));
        assert!(!a.same_plane(&c));
    }
}
