//! Special functions backing the generalization curves and test statistics.
//!
//! Everything is implemented over `libm` primitives so results are
//! bit-stable across platforms. Accuracy is validated against independent
//! high-precision references in the test suite; all functions agree with
//! those references to at least 1e-8 absolute error over their documented
//! domains (log-gamma does far better, see below).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpecialError {
    #[error("log_gamma requires x > 0, got {0}")]
    NonPositiveGammaArg(f64),
    #[error("incomplete gamma requires a > 0 and x >= 0, got a={a}, x={x}")]
    GammaDomain { a: f64, x: f64 },
    #[error("incomplete beta requires a > 0, b > 0, x in [0, 1], got a={a}, b={b}, x={x}")]
    BetaDomain { a: f64, b: f64, x: f64 },
    #[error("continued fraction failed to converge")]
    NoConvergence,
    #[error("degrees of freedom must be positive, got {0}")]
    BadDegreesOfFreedom(f64),
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_741_8;
const EPS: f64 = 1e-16;
const MAX_ITER: usize = 500;

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
///
/// Relative error stays below ~1e-13 across the domain. Absolute error is
/// below 1e-10 for `x <= 1e4`; above that the value itself is so large that
/// f64 spacing exceeds 1e-10, so only relative accuracy is meaningful.
pub fn log_gamma(x: f64) -> Result<f64, SpecialError> {
    if !(x > 0.0) {
        return Err(SpecialError::NonPositiveGammaArg(x));
    }
    Ok(log_gamma_unchecked(x))
}

fn log_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the Lanczos argument in its accurate range.
        let pi = core::f64::consts::PI;
        return libm::log(pi / libm::sin(pi * x)) - log_gamma_unchecked(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    HALF_LN_TWO_PI + (z + 0.5) * libm::log(t) - t + libm::log(acc)
}

/// Regularized lower incomplete gamma P(a, x).
pub fn lower_reg_gamma(a: f64, x: f64) -> Result<f64, SpecialError> {
    if !(a > 0.0) || !(x >= 0.0) {
        return Err(SpecialError::GammaDomain { a, x });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        Ok(1.0 - gamma_cf(a, x)?)
    }
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
///
/// Computed directly by continued fraction when x is large relative to a,
/// which keeps tiny tails (e.g. chi-square p-values near 1e-176) accurate.
pub fn upper_reg_gamma(a: f64, x: f64) -> Result<f64, SpecialError> {
    if !(a > 0.0) || !(x >= 0.0) {
        return Err(SpecialError::GammaDomain { a, x });
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        Ok(1.0 - gamma_series(a, x)?)
    } else {
        gamma_cf(a, x)
    }
}

fn gamma_prefactor(a: f64, x: f64) -> f64 {
    libm::exp(a * libm::log(x) - x - log_gamma_unchecked(a))
}

fn gamma_series(a: f64, x: f64) -> Result<f64, SpecialError> {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut n = 1.0;
    for _ in 0..MAX_ITER {
        term *= x / (a + n);
        sum += term;
        if term.abs() < sum.abs() * EPS {
            return Ok(sum * gamma_prefactor(a, x));
        }
        n += 1.0;
    }
    Err(SpecialError::NoConvergence)
}

fn gamma_cf(a: f64, x: f64) -> Result<f64, SpecialError> {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(gamma_prefactor(a, x) * h);
        }
    }
    Err(SpecialError::NoConvergence)
}

/// Error function.
pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let p = lower_reg_gamma(0.5, x * x).unwrap_or(1.0);
    if x > 0.0 {
        p
    } else {
        -p
    }
}

/// Complementary error function, accurate for large positive arguments.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x == 0.0 {
        return 1.0;
    }
    upper_reg_gamma(0.5, x * x).unwrap_or(0.0)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / core::f64::consts::SQRT_2)
}

/// Regularized incomplete beta I_x(a, b) via Lentz's continued fraction,
/// switching to the symmetric form when x is past the bulk of the mass.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> Result<f64, SpecialError> {
    if !(a > 0.0) || !(b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(SpecialError::BetaDomain { a, b, x });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = log_gamma_unchecked(a + b)
        - log_gamma_unchecked(a)
        - log_gamma_unchecked(b)
        + a * libm::log(x)
        + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x)? / b)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64, SpecialError> {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(SpecialError::NoConvergence)
}

/// Two-sided p-value of a Student-t statistic with `df` degrees of freedom:
/// I_{df/(df+t^2)}(df/2, 1/2).
pub fn student_t_two_sided_p(t: f64, df: f64) -> Result<f64, SpecialError> {
    if !(df > 0.0) {
        return Err(SpecialError::BadDegreesOfFreedom(df));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Upper-tail p-value of a chi-square statistic: Q(df/2, x/2).
///
/// For df = 1 this equals erfc(sqrt(x/2)); the identity is exercised in the
/// tests rather than special-cased.
pub fn chi_square_upper_p(x: f64, df: f64) -> Result<f64, SpecialError> {
    if !(df > 0.0) {
        return Err(SpecialError::BadDegreesOfFreedom(df));
    }
    if !(x >= 0.0) {
        return Err(SpecialError::GammaDomain { a: df / 2.0, x });
    }
    upper_reg_gamma(df / 2.0, x / 2.0)
}

/// Compensated (Neumaier) summation for long accumulations where plain
/// sequential rounding would exceed the documented tolerances.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
