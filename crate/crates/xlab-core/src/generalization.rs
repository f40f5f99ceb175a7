//! Generalization curves: how strongly a similarity (or distance) reading
//! counts as evidence for a class.
//!
//! The main model uses an exponential decay in dissimilarity with a free
//! rate. Two parametric ablations reuse the same rate parameter: an
//! exponential over L1 distance, and a symmetric Beta density over the
//! similarity itself.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{log_gamma, SpecialError};

#[derive(Debug, Error, PartialEq)]
pub enum GeneralizationError {
    #[error("generalization rate must be finite and > 0, got {0}")]
    BadRate(f64),
    #[error("similarity {0} is outside [0, 1]")]
    SimilarityOutOfRange(f64),
    #[error("distance {0} must be finite and >= 0")]
    NegativeDistance(f64),
    #[error(transparent)]
    Special(#[from] SpecialError),
}

/// A strictly positive decay/concentration rate.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeneralizationRate(f64);

impl GeneralizationRate {
    pub fn new(value: f64) -> Result<Self, GeneralizationError> {
        if !value.is_finite() || value <= 0.0 {
            return Err(GeneralizationError::BadRate(value));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Exponential generalization over similarity: `rate * exp(-rate * (1 - sim))`.
pub fn exp_generalization(sim: f64, rate: GeneralizationRate) -> Result<f64, GeneralizationError> {
    if !(0.0..=1.0).contains(&sim) {
        return Err(GeneralizationError::SimilarityOutOfRange(sim));
    }
    let l = rate.value();
    Ok(l * libm::exp(-l * (1.0 - sim)))
}

/// Exponential generalization over a distance: `rate * exp(-rate * dist)`.
pub fn exp_generalization_l1(
    dist: f64,
    rate: GeneralizationRate,
) -> Result<f64, GeneralizationError> {
    if !dist.is_finite() || dist < 0.0 {
        return Err(GeneralizationError::NegativeDistance(dist));
    }
    let l = rate.value();
    Ok(l * libm::exp(-l * dist))
}

/// Default clamp keeping Beta densities finite at the similarity endpoints.
pub const BETA_SIM_CLAMP: f64 = 1e-9;

/// Symmetric Beta(rate, rate) density evaluated at the similarity, with the
/// argument clamped away from {0, 1}.
///
/// At `rate = 1` the density is exactly 1 for every similarity (the uniform
/// density), so the ablation collapses onto the prior-only model.
pub fn beta_generalization(sim: f64, rate: GeneralizationRate) -> Result<f64, GeneralizationError> {
    beta_generalization_clamped(sim, rate, BETA_SIM_CLAMP)
}

/// [`beta_generalization`] with an explicit clamp half-width.
pub fn beta_generalization_clamped(
    sim: f64,
    rate: GeneralizationRate,
    clamp: f64,
) -> Result<f64, GeneralizationError> {
    if !(0.0..=1.0).contains(&sim) {
        return Err(GeneralizationError::SimilarityOutOfRange(sim));
    }
    let l = rate.value();
    if l == 1.0 {
        return Ok(1.0);
    }
    let s = sim.clamp(clamp, 1.0 - clamp);
    let ln_norm = log_gamma(2.0 * l)? - 2.0 * log_gamma(l)?;
    Ok(libm::exp(
        ln_norm + (l - 1.0) * (libm::log(s) + libm::log1p(-s)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rate(v: f64) -> GeneralizationRate {
        GeneralizationRate::new(v).unwrap()
    }

    #[test]
    fn rate_rejects_bad_values() {
        assert!(GeneralizationRate::new(0.0).is_err());
        assert!(GeneralizationRate::new(-2.0).is_err());
        assert!(GeneralizationRate::new(f64::NAN).is_err());
        assert!(GeneralizationRate::new(f64::INFINITY).is_err());
        assert!(GeneralizationRate::new(1e-3).is_ok());
    }

    #[test]
    fn exp_curve_reference_points() {
        assert_eq!(exp_generalization(1.0, rate(1.0)).unwrap(), 1.0);
        let g = exp_generalization(0.5, rate(2.0)).unwrap();
        assert!((g - 0.735_758_882_342_884_643_2).abs() < 1e-15);
        let g0 = exp_generalization(0.0, rate(1.0)).unwrap();
        assert!((g0 - 0.367_879_441_171_442_321_6).abs() < 1e-15);
        assert!(exp_generalization(1.1, rate(1.0)).is_err());
        assert!(exp_generalization(-0.1, rate(1.0)).is_err());
    }

    #[test]
    fn exp_l1_reference_points() {
        assert_eq!(exp_generalization_l1(0.0, rate(1.0)).unwrap(), 1.0);
        let g = exp_generalization_l1(1.0, rate(1.0)).unwrap();
        assert!((g - 0.367_879_441_171_442_321_6).abs() < 1e-15);
        let g2 = exp_generalization_l1(2.0, rate(0.5)).unwrap();
        assert!((g2 - 0.183_939_720_585_721_160_8).abs() < 1e-15);
        assert!(exp_generalization_l1(-0.5, rate(1.0)).is_err());
    }

    #[test]
    fn beta_uniform_rate_is_exactly_one() {
        for sim in [0.0, 0.25, 0.5, 0.99, 1.0] {
            assert_eq!(beta_generalization(sim, rate(1.0)).unwrap(), 1.0);
        }
    }

    #[test]
    fn beta_reference_points() {
        let d = beta_generalization(0.5, rate(2.0)).unwrap();
        assert!((d - 1.5).abs() < 1e-12);
        let d9 = beta_generalization(0.9, rate(2.0)).unwrap();
        assert!((d9 - 0.54).abs() < 1e-12);
    }

    #[test]
    fn beta_clamp_keeps_endpoints_finite() {
        let spiky = beta_generalization(0.0, rate(0.5)).unwrap();
        assert!(spiky.is_finite() && spiky > 0.0);
        let flat = beta_generalization(1.0, rate(3.0)).unwrap();
        assert!(flat.is_finite() && flat >= 0.0);
        let wider = beta_generalization_clamped(0.0, rate(0.5), 1e-3).unwrap();
        assert!(wider < spiky);
    }

    #[test]
    fn beta_is_symmetric_about_half() {
        for r in [0.3, 2.0, 7.5] {
            for s in [0.1, 0.25, 0.4] {
                let a = beta_generalization(s, rate(r)).unwrap();
                let b = beta_generalization(1.0 - s, rate(r)).unwrap();
                assert!((a - b).abs() < 1e-12, "rate {r} sim {s}");
            }
        }
    }

    #[test]
    fn exp_curve_is_monotone_in_similarity() {
        for r in [0.2, 1.0, 5.0, 40.0] {
            let mut prev = -1.0;
            for i in 0..=100 {
                let sim = i as f64 / 100.0;
                let g = exp_generalization(sim, rate(r)).unwrap();
                assert!(g > prev, "rate {r} sim {sim}");
                prev = g;
            }
        }
    }
}
