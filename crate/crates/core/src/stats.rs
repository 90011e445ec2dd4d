//! Student-t inference helpers and empirical quantiles.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Above this many degrees of freedom p-values come from the normal limit
/// (difference below 1e-7); statrs loses accuracy further out.
const NORMAL_P_DF: f64 = 1e6;
/// Above this, quantiles use a Cornish-Fisher expansion around the normal
/// quantile (error below 1e-11); statrs' inverse drifts and can stall.
const EXPANSION_Q_DF: f64 = 1e4;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Two-sided p-value for a t statistic; NaN for an invalid `df`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    let tail = if df > NORMAL_P_DF {
        std_normal().sf(t.abs())
    } else {
        StudentsT::new(0.0, 1.0, df).expect("positive df").sf(t.abs())
    };
    (2.0 * tail).clamp(0.0, 1.0)
}

/// Quantile of the Student t distribution, `p` in (0, 1); NaN for an
/// invalid `df`.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability must be in (0, 1)");
    if df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if df <= EXPANSION_Q_DF {
        return StudentsT::new(0.0, 1.0, df).expect("positive df").inverse_cdf(p);
    }
    let z = std_normal().inverse_cdf(p);
    let (z3, z5) = (z.powi(3), z.powi(5));
    z + (z3 + z) / (4.0 * df) + (5.0 * z5 + 16.0 * z3 + 3.0 * z) / (96.0 * df * df)
}

/// Empirical quantile with linear interpolation between order statistics
/// (R's type 7). `sorted` must be ascending and non-empty.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Significance codes used in coefficient tables.
pub fn significance_stars(p: f64) -> &'static str {
    if p.is_nan() {
        ""
    } else if p < 0.001 {
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
