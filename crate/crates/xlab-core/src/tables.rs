//! Rendering analysis results as markdown and CSV tables.
//!
//! All formatting is centralized here so the report writer shows the same
//! numbers everywhere (values round for display only; machine-readable
//! outputs carry full precision).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use serde::{Deserialize, Serialize};

use crate::stats::{RegressionFit, REGRESSION_TERMS};

/// One row of the hypothesis summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRow {
    pub id: String,
    pub label: String,
    pub test: String,
    pub statistic: f64,
    pub p: Option<f64>,
}

/// R-style significance codes.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        ""
    }
}

/// Compact p-value display: tiny values as a bound, others to four decimals.
pub fn format_p(p: f64) -> String {
    if p < 1e-4 {
        String::from("<.0001")
    } else {
        format!("{p:.4}")
    }
}

fn format_stat(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.4}")
    }
}

/// Markdown table of the hypothesis battery.
pub fn hypothesis_table_markdown(rows: &[HypothesisRow]) -> String {
    let mut out = String::new();
    out.push_str("| # | Hypothesis | Test | Statistic | p |\n");
    out.push_str("|---|---|---|---|---|\n");
    for row in rows {
        let (p_txt, star) = match row.p {
            Some(p) => (format_p(p), stars(p)),
            None => (String::from("n/a"), ""),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} {} |",
            row.id,
            row.label,
            row.test,
            format_stat(row.statistic),
            p_txt,
            star
        );
    }
    out
}

/// Markdown regression table: coefficient (SE) per term, fit summary, and
/// the significance legend.
pub fn regression_table_markdown(title: &str, fit: &RegressionFit) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "### {title}\n");
    out.push_str("| Term | Coefficient (SE) | t | p | |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (j, term) in REGRESSION_TERMS.iter().enumerate() {
        let _ = writeln!(
            out,
            "| {} | {:.4} ({:.4}) | {} | {} | {} |",
            term,
            fit.beta[j],
            fit.se[j],
            format_stat(fit.t[j]),
            format_p(fit.p[j]),
            stars(fit.p[j]),
        );
    }
    let _ = writeln!(
        out,
        "\nn = {}, R^2 = {:.4}, adjusted R^2 = {:.4}, residual variance = {:.6}",
        fit.n, fit.r2, fit.adj_r2, fit.sigma2
    );
    if fit.exact_fit {
        out.push_str("Note: exact fit; standard errors are zero by convention.\n");
    }
    out.push_str("Significance: *** p<0.001, ** p<0.01, * p<0.05, . p<0.1\n");
    out
}

/// CSV rendering of a regression fit (full precision).
pub fn regression_table_csv(fit: &RegressionFit) -> String {
    let mut out = String::from("term,beta,se,t,p\n");
    for (j, term) in REGRESSION_TERMS.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            term, fit.beta[j], fit.se[j], fit.t[j], fit.p[j]
        );
    }
    out
}

/// Markdown table of per-variant cross-validation error.
pub fn loocv_table_markdown(rows: &[(String, f64, Option<(f64, f64)>)]) -> String {
    let mut out = String::new();
    out.push_str("| Variant | LOO-CV MSE | 95% CI |\n");
    out.push_str("|---|---|---|\n");
    for (variant, mse, ci) in rows {
        let ci_txt = match ci {
            Some((lo, hi)) => format!("[{lo:.6}, {hi:.6}]"),
            None => String::from("n/a"),
        };
        let _ = writeln!(out, "| {variant} | {mse:.6} | {ci_txt} |");
    }
    out
}

/// Splits rendered markdown rows for quick structural checks in tests.
pub fn table_body_rows(markdown: &str) -> Vec<&str> {
    markdown
        .lines()
        .skip(2)
        .filter(|l| l.starts_with('|'))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn stars_follow_r_conventions() {
        assert_eq!(stars(0.0001), "***");
        assert_eq!(stars(0.005), "**");
        assert_eq!(stars(0.03), "*");
        assert_eq!(stars(0.07), ".");
        assert_eq!(stars(0.5), "");
    }

    #[test]
    fn p_formatting() {
        assert_eq!(format_p(0.00001), "<.0001");
        assert_eq!(format_p(0.0742), "0.0742");
        assert_eq!(format_p(1.0), "1.0000");
    }

    #[test]
    fn hypothesis_table_has_one_row_per_hypothesis() {
        let rows = vec![
            HypothesisRow {
                id: "H1".to_string(),
                label: "above chance".to_string(),
                test: "chi-square GOF".to_string(),
                statistic: 802.28,
                p: Some(1e-170),
            },
            HypothesisRow {
                id: "H4".to_string(),
                label: "full beats prior-only".to_string(),
                test: "paired t".to_string(),
                statistic: 2.1,
                p: None,
            },
        ];
        let md = hypothesis_table_markdown(&rows);
        let body = table_body_rows(&md);
        assert_eq!(body.len(), 2);
        assert!(body[0].contains("<.0001"));
        assert!(body[0].contains("***"));
        assert!(body[1].contains("n/a"));
    }

    #[test]
    fn regression_table_renders_all_terms() {
        let fit = RegressionFit {
            n: 16,
            beta: [0.3, 0.3, 0.2, -0.15],
            se: [0.01, 0.02, 0.02, 0.03],
            t: [30.0, 15.0, 10.0, -5.0],
            p: [1e-10, 1e-8, 1e-6, 0.0003],
            sigma2: 0.0004,
            r2: 0.95,
            adj_r2: 0.94,
            exact_fit: false,
        };
        let md = regression_table_markdown("Empirical fidelity", &fit);
        assert!(md.contains("ai_correct:explanation"));
        assert!(md.contains("-0.1500 (0.0300)"));
        assert!(md.contains("n = 16"));
        assert!(md.contains("Significance:"));
        assert!(!md.contains("exact fit"));

        let csv = regression_table_csv(&fit);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "term,beta,se,t,p");
        assert!(lines[4].starts_with("ai_correct:explanation,-0.15,"));
    }

    #[test]
    fn exact_fit_note_appears() {
        let fit = RegressionFit {
            n: 12,
            beta: [0.3, 0.3, 0.2, -0.15],
            se: [0.0; 4],
            t: [0.0; 4],
            p: [0.0; 4],
            sigma2: 0.0,
            r2: 1.0,
            adj_r2: 1.0,
            exact_fit: true,
        };
        let md = regression_table_markdown("Model fidelity", &fit);
        assert!(md.contains("exact fit"));
    }

    #[test]
    fn loocv_table_rows() {
        let md = loocv_table_markdown(&[
            ("full".to_string(), 0.01, Some((0.005, 0.02))),
            ("prior_only".to_string(), 0.025, None),
        ]);
        let body = table_body_rows(&md);
        assert_eq!(body.len(), 2);
        assert!(body[0].contains("[0.005000, 0.020000]"));
    }
}
