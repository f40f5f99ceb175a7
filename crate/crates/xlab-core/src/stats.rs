//! Hypothesis-level statistics: chi-square goodness of fit against a fixed
//! proportion, OLS of fidelity on AI-correctness, condition, and their
//! interaction, and Spearman rank correlation.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{chi_square_upper_p, student_t_two_sided_p, SpecialError};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("invalid input: {0}")]
    BadInput(&'static str),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("design matrix is rank deficient at term {term}")]
    RankDeficient { term: &'static str },
    #[error(transparent)]
    Special(#[from] SpecialError),
}

/// A scalar test statistic with its degrees of freedom and p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: f64,
    pub p: f64,
}

/// Chi-square goodness of fit of `successes`/`n` against proportion `p0`
/// (one degree of freedom).
pub fn chi_square_gof(successes: u64, n: u64, p0: f64) -> Result<TestResult, StatsError> {
    if n == 0 {
        return Err(StatsError::BadInput("n must be positive"));
    }
    if successes > n {
        return Err(StatsError::BadInput("successes exceed n"));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::BadInput("p0 must lie strictly inside (0, 1)"));
    }
    let s = successes as f64;
    let f = (n - successes) as f64;
    let es = n as f64 * p0;
    let ef = n as f64 * (1.0 - p0);
    let statistic = (s - es) * (s - es) / es + (f - ef) * (f - ef) / ef;
    let p = chi_square_upper_p(statistic, 1.0)?;
    Ok(TestResult {
        statistic,
        df: 1.0,
        p,
    })
}

/// One observation for the fidelity regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub fidelity: f64,
    pub ai_correct: bool,
    pub explanation: bool,
}

/// Term names, in design-matrix column order.
pub const REGRESSION_TERMS: [&str; 4] =
    ["intercept", "ai_correct", "explanation", "ai_correct:explanation"];

/// OLS fit of fidelity ~ ai_correct * explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub n: usize,
    pub beta: [f64; 4],
    pub se: [f64; 4],
    pub t: [f64; 4],
    pub p: [f64; 4],
    pub sigma2: f64,
    pub r2: f64,
    pub adj_r2: f64,
    /// Residuals vanished to machine precision: SEs are 0 and p-values are
    /// reported as 0 by convention.
    pub exact_fit: bool,
}

/// Fits fidelity on [1, A, E, A*E] by Householder QR.
pub fn fidelity_regression(rows: &[RegressionRow]) -> Result<RegressionFit, StatsError> {
    const K: usize = 4;
    let n = rows.len();
    if n < K + 1 {
        return Err(StatsError::TooFewRows {
            needed: K + 1,
            got: n,
        });
    }
    for r in rows {
        if !r.fidelity.is_finite() {
            return Err(StatsError::BadInput("fidelity must be finite"));
        }
    }

    // Row-major design matrix and response.
    let mut x = vec![0.0; n * K];
    let mut y = vec![0.0; n];
    for (i, r) in rows.iter().enumerate() {
        let a = r.ai_correct as u8 as f64;
        let e = r.explanation as u8 as f64;
        x[i * K] = 1.0;
        x[i * K + 1] = a;
        x[i * K + 2] = e;
        x[i * K + 3] = a * e;
        y[i] = r.fidelity;
    }

    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|&v| (v - ybar) * (v - ybar)).sum();

    // Householder QR, transforming y alongside.
    let rank_tol = 1e-10 * libm::sqrt(n as f64);
    for j in 0..K {
        let mut norm = 0.0;
        for i in j..n {
            norm += x[i * K + j] * x[i * K + j];
        }
        let norm = libm::sqrt(norm);
        if norm <= rank_tol {
            return Err(StatsError::RankDeficient {
                term: REGRESSION_TERMS[j],
            });
        }
        let alpha = if x[j * K + j] >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n - j];
        for i in j..n {
            v[i - j] = x[i * K + j];
        }
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|&w| w * w).sum();
        if vtv > 0.0 {
            for col in j..K {
                let mut dot = 0.0;
                for i in j..n {
                    dot += v[i - j] * x[i * K + col];
                }
                let scale = 2.0 * dot / vtv;
                for i in j..n {
                    x[i * K + col] -= scale * v[i - j];
                }
            }
            let mut dot = 0.0;
            for i in j..n {
                dot += v[i - j] * y[i];
            }
            let scale = 2.0 * dot / vtv;
            for i in j..n {
                y[i] -= scale * v[i - j];
            }
        }
        x[j * K + j] = alpha;
        for i in (j + 1)..n {
            x[i * K + j] = 0.0;
        }
    }

    // Back-substitution for beta.
    let mut beta = [0.0; K];
    for j in (0..K).rev() {
        let mut acc = y[j];
        for k in (j + 1)..K {
            acc -= x[j * K + k] * beta[k];
        }
        beta[j] = acc / x[j * K + j];
    }

    // Residual sum of squares = squared tail of Q^T y.
    let rss: f64 = y[K..].iter().map(|&v| v * v).sum();
    let exact_fit = rss <= tss * 1e-16 || rss < 1e-28;

    let df = (n - K) as f64;
    let sigma2 = if exact_fit { 0.0 } else { rss / df };

    // (X^T X)^{-1} = R^{-1} R^{-T}; invert the 4x4 R by back-substitution.
    let mut rinv = [[0.0; K]; K];
    for col in 0..K {
        let mut e = [0.0; K];
        e[col] = 1.0;
        for j in (0..K).rev() {
            let mut acc = e[j];
            for k in (j + 1)..K {
                acc -= x[j * K + k] * rinv[k][col];
            }
            rinv[j][col] = acc / x[j * K + j];
        }
    }

    let mut se = [0.0; K];
    let mut t = [0.0; K];
    let mut p = [0.0; K];
    for j in 0..K {
        let var_scale: f64 = (0..K).map(|k| rinv[j][k] * rinv[j][k]).sum();
        if exact_fit {
            se[j] = 0.0;
            t[j] = 0.0;
            p[j] = 0.0;
        } else {
            se[j] = libm::sqrt(sigma2 * var_scale);
            t[j] = beta[j] / se[j];
            p[j] = student_t_two_sided_p(t[j], df)?;
        }
    }

    let r2 = if tss == 0.0 { 1.0 } else { 1.0 - rss / tss };
    let r2 = if exact_fit { 1.0 } else { r2 };
    let adj_r2 = if exact_fit {
        1.0
    } else {
        1.0 - (1.0 - r2) * (n as f64 - 1.0) / df
    };

    Ok(RegressionFit {
        n,
        beta,
        se,
        t,
        p,
        sigma2,
        r2,
        adj_r2,
        exact_fit,
    })
}

/// Midranks (1-based, ties averaged).
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with a t-distributed significance test.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewRows { needed: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::BadInput("values must be finite"));
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(StatsError::BadInput("a sample is constant; ranks are degenerate"));
    }
    let rho = (cov / libm::sqrt(vx * vy)).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if rho.abs() == 1.0 {
        0.0
    } else {
        let t = rho * libm::sqrt(df / (1.0 - rho * rho));
        student_t_two_sided_p(t, df)?
    };
    Ok(TestResult {
        statistic: rho,
        df,
        p,
    })
}
