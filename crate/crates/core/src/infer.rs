//! CR2 cluster-robust covariance, Satterthwaite degrees of freedom,
//! average marginal effects and coefficient tables.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::FitResult;
use crate::panel::{CompiledDesign, Panel, Term};
use crate::stats::{significance_stars, t_quantile, t_two_sided_p};
use crate::textio::{fmt_num, nullable_f64};
use crate::types::{ClimateKind, ClimateVar};

/// Relative eigenvalue floor below which `I − H_gg` is treated as singular.
pub const PINV_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustVcov {
    pub vcov: Vec<Vec<f64>>,
    pub cluster_count: usize,
    pub adjustment: String,
    /// Satterthwaite degrees of freedom for each coefficient.
    #[serde(with = "nullable_vec")]
    pub df: Vec<f64>,
    pub warnings: Vec<String>,
}

mod nullable_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

impl RobustVcov {
    pub fn matrix(&self) -> DMatrix<f64> {
        let p = self.vcov.len();
        DMatrix::from_fn(p, p, |i, j| self.vcov[i][j])
    }

    pub fn se(&self, j: usize) -> f64 {
        self.vcov[j][j].max(0.0).sqrt()
    }
}

/// Per-cluster pieces of the CR2 sandwich kept for Satterthwaite
/// calculations on arbitrary contrasts.
#[derive(Debug, Clone)]
pub struct Cr2Parts {
    /// `(X*ᵀX*)⁻¹` on the working (whitened) scale.
    pub bread: DMatrix<f64>,
    /// Whitened cluster design blocks `X*_g`.
    pub x_blocks: Vec<DMatrix<f64>>,
    /// Adjusted blocks `A_g X*_g`.
    pub ax_blocks: Vec<DMatrix<f64>>,
}

/// Symmetric (pseudo-)inverse square root; eigenvalues at or below
/// `tol · λ_max` are treated as zero. Returns the count of such eigenvalues.
pub fn inv_sqrt_psd(m: &DMatrix<f64>, tol: f64) -> (DMatrix<f64>, usize) {
    let eig = SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut dropped = 0;
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| {
            if l > tol * lmax {
                1.0 / l.sqrt()
            } else {
                dropped += 1;
                0.0
            }
        }),
    );
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&d) * v.transpose(), dropped)
}

/// Whitened design and residuals: `H^{-1/2}X`, `H^{-1/2}(y − Xβ̂)` with
/// `H = I + Σ θ_k Z_k Z_kᵀ` (identity for least-squares fits).
pub fn whitened(fit: &FitResult, design: &CompiledDesign) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_alignment(fit, design)?;
    let resid = &design.y - &design.x * fit.beta_vec();
    if fit.theta.iter().all(|&t| t == 0.0) {
        return Ok((design.x.clone(), resid));
    }
    let n = design.n();
    let mut h = DMatrix::identity(n, n);
    for (blk, &t) in design.random.iter().zip(&fit.theta) {
        if t > 0.0 {
            h += (&blk.z * blk.z.transpose()) * t;
        }
    }
    let (w, dropped) = inv_sqrt_psd(&h, 0.0);
    if dropped > 0 {
        return Err(Error::Numerical("working covariance is singular".into()));
    }
    Ok((&w * &design.x, &w * resid))
}

fn check_alignment(fit: &FitResult, design: &CompiledDesign) -> Result<()> {
    if fit.column_names != design.column_names() || fit.theta.len() != design.random.len() {
        return Err(Error::Data("fit does not match the compiled design".into()));
    }
    Ok(())
}

/// CR2 cluster-robust covariance of β̂ with per-coefficient Satterthwaite df.
pub fn cr2_vcov(fit: &FitResult, design: &CompiledDesign) -> Result<(RobustVcov, Cr2Parts)> {
    let g_count = design.cluster_labels.len();
    if g_count < 2 {
        return Err(Error::Data("cluster-robust covariance needs at least two clusters".into()));
    }
    let (xs, es) = whitened(fit, design)?;
    let p = xs.ncols();
    let bread = (xs.transpose() * &xs)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular cross-product in CR2 bread".into()))?;
    let mut meat = DMatrix::zeros(p, p);
    let mut x_blocks = Vec::with_capacity(g_count);
    let mut ax_blocks = Vec::with_capacity(g_count);
    let mut singular = Vec::new();
    for (g, rows) in design.cluster_rows().iter().enumerate() {
        let xg = xs.select_rows(rows);
        let eg = es.select_rows(rows);
        let hgg = &xg * &bread * xg.transpose();
        let (a, dropped) = inv_sqrt_psd(&(DMatrix::identity(rows.len(), rows.len()) - hgg), PINV_TOL);
        if dropped > 0 {
            singular.push(design.cluster_labels[g].clone());
        }
        let axg = &a * &xg;
        let s = axg.transpose() * eg;
        meat += &s * s.transpose();
        x_blocks.push(xg);
        ax_blocks.push(axg);
    }
    let mut warnings = Vec::new();
    if !singular.is_empty() {
        let msg = format!(
            "I - H_gg singular for {} cluster(s) ({}); pseudo-inverse square root used",
            singular.len(),
            singular.join(",")
        );
        log::debug!("{msg}");
        warnings.push(msg);
    }
    let v = &bread * meat * &bread;
    let v = (&v + v.transpose()) * 0.5;
    let parts = Cr2Parts { bread, x_blocks, ax_blocks };
    let df = (0..p)
        .map(|j| {
            let mut c = DVector::zeros(p);
            c[j] = 1.0;
            satterthwaite_df(&parts, &c).unwrap_or(f64::NAN)
        })
        .collect();
    let robust = RobustVcov {
        vcov: (0..p).map(|i| v.row(i).iter().copied().collect()).collect(),
        cluster_count: g_count,
        adjustment: "CR2".into(),
        df,
        warnings,
    };
    Ok((robust, parts))
}

/// Satterthwaite degrees of freedom of the CR2 variance of `cᵀβ̂` under a
/// working model of independent homoskedastic whitened errors.
pub fn satterthwaite_df(parts: &Cr2Parts, contrast: &DVector<f64>) -> Result<f64> {
    if contrast.iter().all(|&c| c == 0.0) {
        return Err(Error::Config("degenerate zero contrast".into()));
    }
    let mc = &parts.bread * contrast;
    let w: Vec<DVector<f64>> = parts.ax_blocks.iter().map(|ax| ax * &mc).collect();
    let u: Vec<DVector<f64>> = parts.x_blocks.iter().zip(&w).map(|(x, w)| x.transpose() * w).collect();
    let mu: Vec<DVector<f64>> = u.iter().map(|ug| &parts.bread * ug).collect();
    let g = w.len();
    let mut trace = 0.0;
    let mut sumsq = 0.0;
    for i in 0..g {
        for j in 0..g {
            let mut gram = -u[i].dot(&mu[j]);
            if i == j {
                gram += w[i].norm_squared();
                trace += gram;
            }
            sumsq += gram * gram;
        }
    }
    if !(sumsq > 0.0) {
        return Err(Error::Numerical("zero variance in Satterthwaite approximation".into()));
    }
    Ok(trace * trace / sumsq)
}

// ---------------------------------------------------------------------------
// Marginal effects
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmeAveraging {
    /// Mean over all panel rows.
    #[default]
    Pooled,
    /// Mean within each cluster, then across clusters.
    ProvinceThenPooled,
}

impl std::str::FromStr for AmeAveraging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(AmeAveraging::Pooled),
            "province" | "province_then_pooled" => Ok(AmeAveraging::ProvinceThenPooled),
            _ => Err(Error::Config(format!("unknown averaging '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEffect {
    pub variable: String,
    pub sector: String,
    /// Effect on PCGR per °C or per percentage point.
    pub ame: f64,
    pub se: f64,
    #[serde(with = "nullable_f64")]
    pub df: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Averaged design derivative `∂x/∂var` over rows (design scale).
pub fn ame_gradient(terms: &[Term], panel: &Panel, var: ClimateVar, averaging: AmeAveraging) -> DVector<f64> {
    let p = terms.len();
    let row_grad = |climate: &[f64; 8]| {
        DVector::from_iterator(
            p,
            terms.iter().map(|t| if t.is_climate() { t.climate_derivative(var, climate) } else { 0.0 }),
        )
    };
    match averaging {
        AmeAveraging::Pooled => {
            let mut acc = DVector::zeros(p);
            for r in &panel.rows {
                acc += row_grad(&r.climate);
            }
            acc / panel.rows.len() as f64
        }
        AmeAveraging::ProvinceThenPooled => {
            let mut groups: BTreeMap<&str, (DVector<f64>, usize)> = BTreeMap::new();
            for r in &panel.rows {
                let e = groups.entry(r.cluster.as_str()).or_insert_with(|| (DVector::zeros(p), 0));
                e.0 += row_grad(&r.climate);
                e.1 += 1;
            }
            let count = groups.len() as f64;
            groups.into_values().map(|(s, m)| s / m as f64).fold(DVector::zeros(p), |a, b| a + b) / count
        }
    }
}

/// Average marginal effect of `var` in reporting units with delta-method
/// CR2 standard error and Satterthwaite t inference.
pub fn ame(
    fit: &FitResult,
    robust: &RobustVcov,
    parts: &Cr2Parts,
    panel: &Panel,
    var: ClimateVar,
    averaging: AmeAveraging,
) -> Result<MarginalEffect> {
    let involved: Vec<usize> = (0..fit.terms.len())
        .filter(|&j| fit.terms[j].is_climate() && term_involves(&fit.terms[j], var))
        .collect();
    let Some(&linear) = involved.iter().find(|&&j| fit.terms[j] == Term::Climate(var)) else {
        return Err(Error::Config(format!("{} is not in the model", var.label())));
    };
    let scale = var.report_scale();
    let grad = ame_gradient(&fit.terms, panel, var, averaging);
    let estimate = if involved.len() == 1 {
        fit.beta[linear] * scale
    } else {
        grad.dot(&fit.beta_vec()) * scale
    };
    let se = (grad.dot(&(robust.matrix() * &grad))).max(0.0).sqrt() * scale;
    let df = satterthwaite_df(parts, &grad)?;
    let (p_value, half) = if se > 0.0 {
        (t_two_sided_p(estimate / se, df), t_quantile(0.975, df) * se)
    } else {
        (f64::NAN, 0.0)
    };
    Ok(MarginalEffect {
        variable: var.label(),
        sector: String::new(),
        ame: estimate,
        se,
        df,
        p_value,
        ci_low: estimate - half,
        ci_high: estimate + half,
    })
}

fn term_involves(term: &Term, var: ClimateVar) -> bool {
    match term {
        Term::Climate(v) | Term::Square(v) => *v == var,
        Term::Interaction(s) => *s == var.season,
        _ => false,
    }
}

/// AMEs for every climate variable in the fit.
pub fn all_margins(
    fit: &FitResult,
    robust: &RobustVcov,
    parts: &Cr2Parts,
    panel: &Panel,
    averaging: AmeAveraging,
) -> Result<Vec<MarginalEffect>> {
    ClimateVar::ALL
        .iter()
        .filter(|v| fit.terms.contains(&Term::Climate(**v)))
        .map(|&v| {
            let mut m = ame(fit, robust, parts, panel, v, averaging)?;
            m.sector = panel.sector.clone();
            Ok(m)
        })
        .collect()
}

pub fn margins_rows(margins: &[MarginalEffect]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["sector", "variable", "ame", "se", "df", "p_value", "ci_low", "ci_high"];
    let rows = margins
        .iter()
        .map(|m| {
            vec![
                m.sector.clone(),
                m.variable.clone(),
                fmt_num(m.ame),
                fmt_num(m.se),
                fmt_num(m.df),
                fmt_num(m.p_value),
                fmt_num(m.ci_low),
                fmt_num(m.ci_high),
            ]
        })
        .collect();
    (header, rows)
}

// ---------------------------------------------------------------------------
// Coefficient tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefEntry {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    #[serde(with = "nullable_f64")]
    pub df: f64,
    #[serde(with = "nullable_f64")]
    pub p_value: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelColumn {
    pub model: String,
    pub coefficients: Vec<CoefEntry>,
    #[serde(with = "nullable_f64")]
    pub aic: f64,
    #[serde(with = "nullable_f64")]
    pub bic: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub columns: Vec<ModelColumn>,
    /// Row order: (block, term label).
    pub rows: Vec<(String, String)>,
    pub best_bic: Option<String>,
}

/// Display order of climate terms: temperature block (linear, squared),
/// precipitation block (linear, squared), then interactions.
fn row_order() -> Vec<(String, Term)> {
    let mut out = Vec::new();
    for (kind, block) in [(ClimateKind::Temp, "Temperature"), (ClimateKind::Precip, "Precipitation")] {
        let vars: Vec<ClimateVar> = ClimateVar::ALL.into_iter().filter(|v| v.kind == kind).collect();
        out.extend(vars.iter().map(|&v| (block.to_string(), Term::Climate(v))));
        out.extend(vars.iter().map(|&v| (block.to_string(), Term::Square(v))));
    }
    out.extend(crate::types::Season::ALL.map(|s| ("Interaction".to_string(), Term::Interaction(s))));
    out
}

/// Table of climate coefficients (reporting units) with CR2 standard
/// errors, Satterthwaite p-values, stars and fit statistics.
pub fn report_table(fits: &[(String, &FitResult, &RobustVcov)]) -> ReportTable {
    let order = row_order();
    let used: Vec<&(String, Term)> =
        order.iter().filter(|(_, t)| fits.iter().any(|(_, f, _)| f.terms.contains(t))).collect();
    let columns = fits
        .iter()
        .map(|(name, fit, robust)| {
            let coefficients = used
                .iter()
                .filter_map(|(_, t)| {
                    let j = fit.terms.iter().position(|x| x == t)?;
                    let scale = t.report_scale();
                    let est = fit.beta[j] * scale;
                    let se = robust.se(j) * scale;
                    let df = robust.df[j];
                    let p = if se > 0.0 && df.is_finite() { t_two_sided_p(est / se, df) } else { f64::NAN };
                    Some(CoefEntry {
                        term: t.name(),
                        estimate: est,
                        se,
                        df,
                        p_value: p,
                        stars: if p.is_finite() { significance_stars(p).into() } else { String::new() },
                    })
                })
                .collect();
            ModelColumn { model: name.clone(), coefficients, aic: fit.aic, bic: fit.bic, n: fit.n }
        })
        .collect::<Vec<_>>();
    let best_bic = columns
        .iter()
        .filter(|c| c.bic.is_finite())
        .min_by(|a, b| a.bic.total_cmp(&b.bic))
        .map(|c| c.model.clone());
    ReportTable { rows: used.iter().map(|(b, t)| (b.clone(), t.name())).collect(), columns, best_bic }
}

impl ReportTable {
    /// Delimited layout: one estimate row and one bracketed SE row per term,
    /// then the model-fit rows.
    pub fn to_rows(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["block".to_string(), "term".to_string(), "row".to_string()];
        header.extend(self.columns.iter().map(|c| c.model.clone()));
        let mut rows = Vec::new();
        for (block, term) in &self.rows {
            let mut est = vec![block.clone(), term.clone(), "estimate".into()];
            let mut se = vec![block.clone(), term.clone(), "se".into()];
            for c in &self.columns {
                match c.coefficients.iter().find(|e| &e.term == term) {
                    Some(e) => {
                        est.push(format!("{}{}", fmt_num(e.estimate), e.stars));
                        se.push(format!("[{}]", fmt_num(e.se)));
                    }
                    None => {
                        est.push(String::new());
                        se.push(String::new());
                    }
                }
            }
            rows.push(est);
            rows.push(se);
        }
        for (label, get) in [("AIC", (|c: &ModelColumn| c.aic) as fn(&ModelColumn) -> f64), ("BIC", |c| c.bic)] {
            let mut r = vec!["Model fit".to_string(), label.to_string(), "value".into()];
            r.extend(self.columns.iter().map(|c| fmt_num(get(c))));
            rows.push(r);
        }
        let mut r = vec!["Model fit".to_string(), "N".to_string(), "value".into()];
        r.extend(self.columns.iter().map(|c| c.n.to_string()));
        rows.push(r);
        (header, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_inverse_sqrt_of_projector_complement() {
        // I - 11ᵀ/3 has one zero eigenvalue
        let m = DMatrix::from_fn(3, 3, |i, j| f64::from(u8::from(i == j)) - 1.0 / 3.0);
        let (a, dropped) = inv_sqrt_psd(&m, PINV_TOL);
        assert_eq!(dropped, 1);
        // on a projector the pseudo-inverse square root is the projector itself
        assert!((a - m).abs().max() < 1e-12);
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (a, _) = inv_sqrt_psd(&m, PINV_TOL);
        let inv = m.try_inverse().unwrap();
        assert!((&a * &a - inv).abs().max() < 1e-12);
    }
}
