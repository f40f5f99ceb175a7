//! Teaching-based saliency: sample candidate masks from a smooth spatial
//! prior, weight each by how strongly the masked stimulus drives a
//! classifier toward a class, and return the weighted average mask.
//!
//! The mask prior is a stationary GP with an RBF kernel, sampled exactly via
//! the Kronecker structure of the row/column covariances, then squashed
//! through a sigmoid. A strongly negative mean with a large marginal scale
//! yields masks that are mostly near zero with coherent bright patches.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{FloatGrid, GridError, SaliencyMap};
use crate::rng::{next_standard_normal, stream_rng};

/// Reference RBF length scale: 22.4 px on a 224 px grid, i.e. one tenth of
/// the average spatial extent.
pub const LENGTH_SCALE_FRACTION: f64 = 0.1;

/// Largest jitter tried before giving up on a Cholesky factorization.
pub const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Error, PartialEq)]
pub enum TeachingError {
    #[error("GP config invalid: {0}")]
    BadConfig(&'static str),
    #[error("covariance factorization failed even with jitter {final_jitter}")]
    CholeskyFailed { final_jitter: f64 },
    #[error("classifier error: {0}")]
    Classifier(String),
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("target class {0} is not in the requested class list")]
    TargetNotInClasses(String),
    #[error("classifier returned {actual} probabilities for {expected} classes")]
    ProbsLength { expected: usize, actual: usize },
    #[error("classifier probability {value} at index {index} is invalid")]
    BadProb { index: usize, value: f64 },
    #[error("classifier probabilities sum to {0}, expected 1")]
    ProbsSum(f64),
    #[error("all mask weights are zero; expected mask is undefined")]
    DegenerateWeights,
    #[error("need at least one mask sample")]
    NoMasks,
    #[error("mask and image have different spatial dimensions")]
    ShapeMismatch,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Configuration of the GP mask prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub width: usize,
    pub height: usize,
    /// Latent-field mean before squashing.
    pub mean: f64,
    /// Latent-field marginal standard deviation.
    pub marginal_std: f64,
    /// RBF length scale in pixels.
    pub length_scale: f64,
    pub n_samples: usize,
    /// Initial diagonal jitter; escalated tenfold up to [`MAX_JITTER`] if
    /// factorization fails.
    pub jitter: f64,
    pub seed: u64,
}

impl GpConfig {
    /// Defaults for a grid of the given size: mean -100, marginal std 100,
    /// length scale proportional to the grid (22.4 px at 224 px), 1000
    /// samples, jitter 1e-6.
    pub fn for_grid(width: usize, height: usize, seed: u64) -> Self {
        Self {
            width,
            height,
            mean: -100.0,
            marginal_std: 100.0,
            length_scale: LENGTH_SCALE_FRACTION * (width + height) as f64 / 2.0,
            n_samples: 1000,
            jitter: 1e-6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TeachingError> {
        if self.width == 0 || self.height == 0 {
            return Err(TeachingError::BadConfig("grid dimensions must be positive"));
        }
        if !self.mean.is_finite() {
            return Err(TeachingError::BadConfig("mean must be finite"));
        }
        if !(self.marginal_std > 0.0) || !self.marginal_std.is_finite() {
            return Err(TeachingError::BadConfig("marginal_std must be positive"));
        }
        if !(self.length_scale > 0.0) || !self.length_scale.is_finite() {
            return Err(TeachingError::BadConfig("length_scale must be positive"));
        }
        if self.n_samples == 0 {
            return Err(TeachingError::BadConfig("n_samples must be at least 1"));
        }
        if !(self.jitter > 0.0) || self.jitter > MAX_JITTER {
            return Err(TeachingError::BadConfig("jitter must be in (0, 1e-2]"));
        }
        Ok(())
    }
}

/// Logistic squash.
pub fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-a))
}

/// Exact GP sampler over a `width x height` grid.
///
/// The RBF kernel factorizes over axes, so a field draw is
/// `mean + std * (L_h Z L_w^T)` with `L` the 1-D Cholesky factors and `Z` an
/// iid standard-normal matrix. Each sample index draws from its own RNG
/// stream, so sample `i` is the same whether computed alone, in sequence, or
/// in parallel.
pub struct GpSampler {
    config: GpConfig,
    chol_w: Vec<f64>,
    chol_h: Vec<f64>,
    jitter_used: f64,
}

impl GpSampler {
    pub fn new(config: GpConfig) -> Result<Self, TeachingError> {
        config.validate()?;
        let (chol_w, jw) = axis_cholesky(config.width, config.length_scale, config.jitter)?;
        let (chol_h, jh) = axis_cholesky(config.height, config.length_scale, config.jitter)?;
        Ok(Self {
            config,
            chol_w,
            chol_h,
            jitter_used: jw.max(jh),
        })
    }

    pub fn config(&self) -> &GpConfig {
        &self.config
    }

    /// Jitter that actually made the factorization succeed.
    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Latent field for sample `index` (before squashing).
    pub fn field(&self, index: usize) -> FloatGrid {
        let w = self.config.width;
        let h = self.config.height;
        let mut rng = stream_rng(self.config.seed, index as u64);
        let mut z = vec![0.0; h * w];
        for cell in z.iter_mut() {
            *cell = next_standard_normal(&mut rng);
        }
        // a = L_h z
        let lh = &self.chol_h;
        let mut a = vec![0.0; h * w];
        for y in 0..h {
            for k in 0..=y {
                let l = lh[y * h + k];
                if l == 0.0 {
                    continue;
                }
                let (zrow, arow) = (&z[k * w..(k + 1) * w], y * w);
                for x in 0..w {
                    a[arow + x] += l * zrow[x];
                }
            }
        }
        // b = a L_w^T, then scale and shift
        let lw = &self.chol_w;
        let mean = self.config.mean;
        let std = self.config.marginal_std;
        let mut b = vec![0.0; h * w];
        for y in 0..h {
            let arow = &a[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                for k in 0..=x {
                    acc += arow[k] * lw[x * w + k];
                }
                b[y * w + x] = mean + std * acc;
            }
        }
        FloatGrid::new(w, h, 1, b).expect("sampled field is finite by construction")
    }

    /// Squashed mask for sample `index`.
    pub fn mask(&self, index: usize) -> SaliencyMap {
        let field = self.field(index);
        SaliencyMap::new(field.map(sigmoid)).expect("sigmoid output lies in [0, 1]")
    }

    /// All masks for the configured sample count, in index order.
    pub fn masks(&self) -> Vec<SaliencyMap> {
        (0..self.config.n_samples).map(|i| self.mask(i)).collect()
    }
}

/// Samples the full mask dictionary for a config.
pub fn sample_masks(config: GpConfig) -> Result<Vec<SaliencyMap>, TeachingError> {
    Ok(GpSampler::new(config)?.masks())
}

fn axis_cholesky(n: usize, length_scale: f64, jitter0: f64) -> Result<(Vec<f64>, f64), TeachingError> {
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = i as f64 - j as f64;
            kernel[i * n + j] = libm::exp(-d * d / (2.0 * length_scale * length_scale));
        }
    }
    let mut jitter = jitter0;
    loop {
        let mut attempt = kernel.clone();
        for i in 0..n {
            attempt[i * n + i] += jitter;
        }
        if cholesky_in_place(n, &mut attempt) {
            return Ok((attempt, jitter));
        }
        if jitter >= MAX_JITTER {
            return Err(TeachingError::CholeskyFailed { final_jitter: jitter });
        }
        jitter *= 10.0;
        log::warn!("covariance factorization failed; escalating jitter to {jitter}");
    }
}

/// In-place lower-triangular Cholesky; returns false if the matrix is not
/// positive definite. The upper triangle is zeroed on success.
fn cholesky_in_place(n: usize, a: &mut [f64]) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let ljj = libm::sqrt(d);
        a[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / ljj;
        }
        for k in (j + 1)..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

/// Pointwise product of an image with a single-channel mask, broadcast over
/// the image's channels.
pub fn apply_mask(image: &FloatGrid, mask: &SaliencyMap) -> Result<FloatGrid, TeachingError> {
    if !image.same_plane(mask.grid()) {
        return Err(TeachingError::ShapeMismatch);
    }
    let plane = image.plane_len();
    let mv = mask.grid().values();
    let mut out = Vec::with_capacity(image.values().len());
    for (i, &v) in image.values().iter().enumerate() {
        out.push(v * mv[i % plane]);
    }
    Ok(FloatGrid::new(image.width(), image.height(), image.channels(), out)?)
}

/// Anything that can score an image against a set of class labels.
pub trait Classifier {
    /// Probabilities over `classes`, in order, summing to 1.
    fn classify(&mut self, image: &FloatGrid, classes: &[&str]) -> Result<Vec<f64>, TeachingError>;
}

/// Checks a probability vector returned by a classifier backend.
pub fn validate_probs(probs: &[f64], expected: usize) -> Result<(), TeachingError> {
    if probs.len() != expected {
        return Err(TeachingError::ProbsLength {
            expected,
            actual: probs.len(),
        });
    }
    for (index, &value) in probs.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(TeachingError::BadProb { index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(TeachingError::ProbsSum(sum));
    }
    Ok(())
}

/// Template-matching softmax classifier; the deterministic stand-in used by
/// synthetic corpora and tests.
///
/// Scores are inner products with per-class templates divided by the
/// temperature; probabilities are a softmax over the requested classes.
#[derive(Debug, Clone)]
pub struct BuiltinClassifier {
    templates: BTreeMap<String, FloatGrid>,
    temperature: f64,
}

impl BuiltinClassifier {
    pub fn new(templates: BTreeMap<String, FloatGrid>, temperature: f64) -> Result<Self, TeachingError> {
        if templates.is_empty() {
            return Err(TeachingError::BadConfig("need at least one template"));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(TeachingError::BadConfig("temperature must be positive"));
        }
        let mut shape: Option<(usize, usize, usize)> = None;
        for grid in templates.values() {
            let s = (grid.width(), grid.height(), grid.channels());
            match shape {
                None => shape = Some(s),
                Some(prev) if prev != s => {
                    return Err(TeachingError::BadConfig("templates must share one shape"))
                }
                Some(_) => {}
            }
        }
        Ok(Self {
            templates,
            temperature,
        })
    }

    pub fn class_labels(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

impl Classifier for BuiltinClassifier {
    fn classify(&mut self, image: &FloatGrid, classes: &[&str]) -> Result<Vec<f64>, TeachingError> {
        if classes.is_empty() {
            return Err(TeachingError::BadConfig("class list must not be empty"));
        }
        let mut scores = Vec::with_capacity(classes.len());
        for &label in classes {
            let template = self
                .templates
                .get(label)
                .ok_or_else(|| TeachingError::UnknownClass(label.into()))?;
            if !template.same_shape(image) {
                return Err(TeachingError::ShapeMismatch);
            }
            let dot: f64 = image
                .values()
                .iter()
                .zip(template.values())
                .map(|(&a, &b)| a * b)
                .sum();
            scores.push(dot / self.temperature);
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|&s| libm::exp(s - max)).collect();
        let total: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / total).collect())
    }
}

/// The saliency estimator: weight each candidate mask by the classifier's
/// probability of `target` on the masked image, then average the masks.
///
/// Masks enter in slice order and the accumulation order is fixed, so the
/// result is bit-reproducible for a given classifier.
pub fn expected_mask(
    image: &FloatGrid,
    classes: &[&str],
    target: &str,
    masks: &[SaliencyMap],
    classifier: &mut dyn Classifier,
) -> Result<SaliencyMap, TeachingError> {
    if masks.is_empty() {
        return Err(TeachingError::NoMasks);
    }
    let target_idx = classes
        .iter()
        .position(|&c| c == target)
        .ok_or_else(|| TeachingError::TargetNotInClasses(target.into()))?;

    let plane = masks[0].grid().plane_len();
    let mut weighted = vec![0.0; plane];
    let mut total_weight = 0.0;
    for mask in masks {
        let masked = apply_mask(image, mask)?;
        let probs = classifier.classify(&masked, classes)?;
        validate_probs(&probs, classes.len())?;
        let q = probs[target_idx];
        total_weight += q;
        if q != 0.0 {
            for (acc, &m) in weighted.iter_mut().zip(mask.grid().values()) {
                *acc += q * m;
            }
        }
    }
    if !(total_weight > 1e-300) {
        return Err(TeachingError::DegenerateWeights);
    }
    let first = masks[0].grid();
    let values: Vec<f64> = weighted
        .into_iter()
        .map(|v| (v / total_weight).clamp(0.0, 1.0))
        .collect();
    let grid = FloatGrid::new(first.width(), first.height(), 1, values)?;
    Ok(SaliencyMap::new(grid)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn small_config(seed: u64) -> GpConfig {
        GpConfig {
            n_samples: 16,
            ..GpConfig::for_grid(8, 8, seed)
        }
    }

    #[test]
    fn sigmoid_shape() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(40.0) > 0.999_999);
        assert!(sigmoid(-40.0) < 1e-6);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!(sigmoid(1.0) > sigmoid(0.5));
    }

    #[test]
    fn default_length_scale_tracks_grid() {
        let c = GpConfig::for_grid(224, 224, 0);
        assert!((c.length_scale - 22.4).abs() < 1e-12);
        let c32 = GpConfig::for_grid(32, 32, 0);
        assert!((c32.length_scale - 3.2).abs() < 1e-12);
    }

    #[test]
    fn cholesky_known_factor() {
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        assert!(cholesky_in_place(2, &mut a));
        assert_eq!(a[0], 2.0);
        assert_eq!(a[1], 0.0);
        assert_eq!(a[2], 1.0);
        assert!((a[3] - libm::sqrt(2.0)).abs() < 1e-15);
    }

    #[test]
    fn cholesky_reconstructs_rbf_kernel() {
        let n = 8;
        let (l, jitter) = axis_cholesky(n, 1.6, 1e-6).unwrap();
        assert_eq!(jitter, 1e-6);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += l[i * n + k] * l[j * n + k];
                }
                let d = i as f64 - j as f64;
                let mut want = libm::exp(-d * d / (2.0 * 1.6 * 1.6));
                if i == j {
                    want += 1e-6;
                }
                assert!((acc - want).abs() < 1e-10, "({i},{j})");
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_in_place(2, &mut a));
    }

    #[test]
    fn sampler_is_deterministic_and_schedule_independent() {
        let sampler = GpSampler::new(small_config(42)).unwrap();
        let direct = sampler.field(5);
        for i in 0..5 {
            let _ = sampler.field(i);
        }
        let after_others = sampler.field(5);
        assert_eq!(direct, after_others);

        let again = GpSampler::new(small_config(42)).unwrap();
        assert_eq!(direct, again.field(5));
        let other_seed = GpSampler::new(small_config(43)).unwrap();
        assert_ne!(direct, other_seed.field(5));
    }

    #[test]
    fn field_moments_match_prior() {
        let mut config = small_config(7);
        config.n_samples = 4000;
        let sampler = GpSampler::new(config).unwrap();
        let n = 4000;
        let mut mean_acc = 0.0;
        let mut var_acc = 0.0;
        let mut pair_acc = 0.0;
        for i in 0..n {
            let f = sampler.field(i);
            let v = f.values();
            mean_acc += v[27];
            var_acc += (v[27] + 100.0) * (v[27] + 100.0);
            pair_acc += (v[27] + 100.0) * (v[28] + 100.0);
        }
        let mean = mean_acc / n as f64;
        let var = var_acc / n as f64;
        let cov = pair_acc / n as f64;
        assert!((mean + 100.0).abs() < 6.0, "mean {mean}");
        assert!((var / 1e4 - 1.0).abs() < 0.1, "var {var}");
        let ls = sampler.config().length_scale;
        let want = libm::exp(-1.0 / (2.0 * ls * ls));
        assert!((cov / var - want).abs() < 0.05, "corr {} want {want}", cov / var);
    }

    #[test]
    fn masks_are_unit_range_and_not_constant() {
        let sampler = GpSampler::new(small_config(3)).unwrap();
        let masks = sampler.masks();
        assert_eq!(masks.len(), 16);
        let mut distinct = false;
        for m in &masks {
            let v = m.grid().values();
            assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
            if v.iter().any(|&x| (x - v[0]).abs() > 1e-6) {
                distinct = true;
            }
        }
        assert!(distinct, "every mask came out constant");
    }

    #[test]
    fn apply_mask_broadcasts_and_validates() {
        let image = FloatGrid::new(2, 1, 2, vec![1.0, 0.5, 0.8, 0.2]).unwrap();
        let mask =
            SaliencyMap::new(FloatGrid::new(2, 1, 1, vec![0.25, 0.5]).unwrap()).unwrap();
        let out = apply_mask(&image, &mask).unwrap();
        assert_eq!(out.values(), &[0.25, 0.25, 0.2, 0.1]);

        let ones = SaliencyMap::new(FloatGrid::filled(2, 1, 1, 1.0)).unwrap();
        assert_eq!(apply_mask(&image, &ones).unwrap(), image);
        let zeros = SaliencyMap::new(FloatGrid::filled(2, 1, 1, 0.0)).unwrap();
        assert!(apply_mask(&image, &zeros).unwrap().values().iter().all(|&v| v == 0.0));

        let wrong = SaliencyMap::new(FloatGrid::filled(3, 1, 1, 1.0)).unwrap();
        assert_eq!(apply_mask(&image, &wrong), Err(TeachingError::ShapeMismatch));
    }

    fn two_templates() -> BTreeMap<String, FloatGrid> {
        let mut t = BTreeMap::new();
        t.insert("a".to_string(), FloatGrid::new(2, 1, 1, vec![1.0, 0.0]).unwrap());
        t.insert("b".to_string(), FloatGrid::new(2, 1, 1, vec![0.0, 1.0]).unwrap());
        t
    }

    #[test]
    fn builtin_classifier_softmax_reference() {
        let mut clf = BuiltinClassifier::new(two_templates(), 1.0).unwrap();
        let image = FloatGrid::new(2, 1, 1, vec![1.0, 0.0]).unwrap();
        let probs = clf.classify(&image, &["a", "b"]).unwrap();
        let e = core::f64::consts::E;
        assert!((probs[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((probs[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        validate_probs(&probs, 2).unwrap();

        // Matching scores give exactly even odds.
        let neutral = FloatGrid::new(2, 1, 1, vec![0.5, 0.5]).unwrap();
        let even = clf.classify(&neutral, &["a", "b"]).unwrap();
        assert_eq!(even, vec![0.5, 0.5]);
    }

    #[test]
    fn builtin_classifier_temperature_sharpens() {
        let mut cold = BuiltinClassifier::new(two_templates(), 0.1).unwrap();
        let mut warm = BuiltinClassifier::new(two_templates(), 10.0).unwrap();
        let image = FloatGrid::new(2, 1, 1, vec![1.0, 0.0]).unwrap();
        let sharp = cold.classify(&image, &["a", "b"]).unwrap();
        let soft = warm.classify(&image, &["a", "b"]).unwrap();
        assert!(sharp[0] > soft[0]);
    }

    #[test]
    fn builtin_classifier_errors() {
        let mut clf = BuiltinClassifier::new(two_templates(), 1.0).unwrap();
        let image = FloatGrid::new(2, 1, 1, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            clf.classify(&image, &["a", "zebra"]),
            Err(TeachingError::UnknownClass(_))
        ));
        let wrong = FloatGrid::filled(3, 1, 1, 0.5);
        assert_eq!(
            clf.classify(&wrong, &["a", "b"]),
            Err(TeachingError::ShapeMismatch)
        );
        assert!(BuiltinClassifier::new(BTreeMap::new(), 1.0).is_err());
        assert!(BuiltinClassifier::new(two_templates(), 0.0).is_err());
    }

    /// Returns pre-scripted probability vectors, one per call.
    struct Scripted {
        script: Vec<Vec<f64>>,
        call: usize,
    }

    impl Classifier for Scripted {
        fn classify(&mut self, _image: &FloatGrid, _classes: &[&str]) -> Result<Vec<f64>, TeachingError> {
            let p = self.script[self.call].clone();
            self.call += 1;
            Ok(p)
        }
    }

    fn unit_mask(values: Vec<f64>) -> SaliencyMap {
        SaliencyMap::new(FloatGrid::new(values.len(), 1, 1, values).unwrap()).unwrap()
    }

    #[test]
    fn expected_mask_weighted_average_reference() {
        let image = FloatGrid::filled(2, 1, 1, 1.0);
        let masks = vec![unit_mask(vec![1.0, 0.0]), unit_mask(vec![0.0, 1.0])];
        let mut clf = Scripted {
            script: vec![vec![0.8, 0.2], vec![0.2, 0.8]],
            call: 0,
        };
        let out = expected_mask(&image, &["a", "b"], "a", &masks, &mut clf).unwrap();
        assert!((out.grid().values()[0] - 0.8).abs() < 1e-15);
        assert!((out.grid().values()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn expected_mask_uniform_weights_is_plain_mean() {
        let image = FloatGrid::filled(3, 1, 1, 1.0);
        let masks = vec![
            unit_mask(vec![1.0, 0.0, 0.5]),
            unit_mask(vec![0.0, 1.0, 0.5]),
            unit_mask(vec![0.5, 0.5, 0.5]),
        ];
        let mut clf = Scripted {
            script: vec![vec![0.4, 0.6]; 3],
            call: 0,
        };
        let out = expected_mask(&image, &["a", "b"], "a", &masks, &mut clf).unwrap();
        for (got, want) in out.grid().values().iter().zip([0.5, 0.5, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_mask_degenerate_weights() {
        let image = FloatGrid::filled(2, 1, 1, 1.0);
        let masks = vec![unit_mask(vec![1.0, 0.0])];
        let mut clf = Scripted {
            script: vec![vec![0.0, 1.0]],
            call: 0,
        };
        assert_eq!(
            expected_mask(&image, &["a", "b"], "a", &masks, &mut clf),
            Err(TeachingError::DegenerateWeights)
        );
        assert_eq!(
            expected_mask(&image, &["a", "b"], "zebra", &masks, &mut Scripted { script: vec![], call: 0 }),
            Err(TeachingError::TargetNotInClasses("zebra".to_string()))
        );
        assert_eq!(
            expected_mask(&image, &["a", "b"], "a", &[], &mut Scripted { script: vec![], call: 0 }),
            Err(TeachingError::NoMasks)
        );
    }

    /// Reads one pixel of the masked image as the class-0 probability.
    struct PixelProbe {
        x: usize,
        y: usize,
    }

    impl Classifier for PixelProbe {
        fn classify(&mut self, image: &FloatGrid, _classes: &[&str]) -> Result<Vec<f64>, TeachingError> {
            let v = image.get(0, self.y, self.x).clamp(0.0, 1.0);
            Ok(vec![v, 1.0 - v])
        }
    }

    #[test]
    fn expected_mask_upweights_influential_pixel() {
        let config = GpConfig {
            n_samples: 200,
            ..GpConfig::for_grid(6, 6, 19)
        };
        let sampler = GpSampler::new(config).unwrap();
        let masks = sampler.masks();
        let image = FloatGrid::filled(6, 6, 1, 1.0);
        let mut probe = PixelProbe { x: 2, y: 3 };
        let out = expected_mask(&image, &["hot", "cold"], "hot", &masks, &mut probe).unwrap();

        let idx = masks[0].grid().index(0, 3, 2);
        let plain_mean: f64 =
            masks.iter().map(|m| m.grid().values()[idx]).sum::<f64>() / masks.len() as f64;
        assert!(
            out.grid().values()[idx] > plain_mean,
            "weighted {} <= mean {}",
            out.grid().values()[idx],
            plain_mean
        );
    }
}
