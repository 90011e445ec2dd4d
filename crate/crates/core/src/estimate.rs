//! Least squares and profiled REML fits of compiled designs.
//!
//! The mixed model is `y = Xβ + Σ_k Z_k u_k + ε` with `u_k ~ N(0, σ²θ_k I)`
//! and `ε ~ N(0, σ²I)`. For fixed θ the mixed-model equations are solved
//! through a Cholesky factor of the augmented system
//!
//! ```text
//! [ ΛZᵀZΛ + I   ΛZᵀX ]
//! [ XᵀZΛ        XᵀX  ]
//! ```
//!
//! with `Λ = diag(√θ)`, which yields the penalized residual sum of squares
//! and both log-determinants of the restricted likelihood without forming
//! the n×n covariance.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{CompiledDesign, Term};
use crate::textio::nullable_f64;

pub const THETA_MAX: f64 = 1e6;
pub const MAX_SWEEPS: usize = 200;
pub const START_VALUES: [f64; 3] = [0.01, 1.0, 100.0];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Ols,
    Reml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlupBlock {
    pub name: String,
    pub levels: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: FitMethod,
    pub column_names: Vec<String>,
    pub terms: Vec<Term>,
    pub beta: Vec<f64>,
    pub sigma2_eps: f64,
    /// Variance ratios σ²_k/σ², one per random block.
    pub theta: Vec<f64>,
    pub random_blocks: Vec<String>,
    pub blup: Vec<BlupBlock>,
    #[serde(with = "nullable_f64")]
    pub loglik_ml: f64,
    #[serde(with = "nullable_f64")]
    pub loglik_reml: f64,
    #[serde(with = "nullable_f64")]
    pub aic: f64,
    #[serde(with = "nullable_f64")]
    pub bic: f64,
    pub n: usize,
    pub p: usize,
    pub converged: bool,
    /// Exact fit: zero residual variance, likelihoods unbounded.
    pub degenerate: bool,
    pub sweeps: usize,
    /// Model-based covariance of β̂, `σ²(XᵀH⁻¹X)⁻¹`.
    pub vcov_model: Vec<Vec<f64>>,
}

impl FitResult {
    pub fn n_params(&self) -> usize {
        self.p + self.theta.len() + 1
    }

    pub fn coef(&self, term: &Term) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|j| self.beta[j])
    }

    pub fn beta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    pub fn vcov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.p, |i, j| self.vcov_model[i][j])
    }

    pub fn blup_block(&self, name: &str) -> Option<&BlupBlock> {
        self.blup.iter().find(|b| b.name == name)
    }
}

/// `(aic, bic)` from the ML log-likelihood with `p + K + 1` parameters.
pub fn information_criteria(fit: &FitResult) -> (f64, f64) {
    ic(fit.loglik_ml, fit.n_params(), fit.n)
}

fn ic(loglik_ml: f64, k: usize, n: usize) -> (f64, f64) {
    let k = k as f64;
    (-2.0 * loglik_ml + 2.0 * k, -2.0 * loglik_ml + (n as f64).ln() * k)
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn is_exact_fit(rss: f64, y: &DVector<f64>) -> bool {
    rss <= 1e-24 * y.norm_squared().max(f64::MIN_POSITIVE)
}

/// Ordinary least squares through a QR decomposition of X.
pub fn fit_ols(design: &CompiledDesign) -> Result<FitResult> {
    let (n, p) = (design.n(), design.p());
    if n <= p {
        return Err(Error::Numerical(format!("{n} rows cannot identify {p} coefficients")));
    }
    let qr = design.x.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= 1e-12 * scale) {
        return Err(Error::RankDeficient { columns: design.column_names() });
    }
    let qty = qr.q().transpose() * &design.y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let resid = &design.y - &design.x * &beta;
    let rss = resid.norm_squared();
    let degenerate = is_exact_fit(rss, &design.y);
    let df = (n - p) as f64;
    let sigma2 = rss / df;
    let logdet_xtx: f64 = 2.0 * (0..p).map(|i| r[(i, i)].abs().ln()).sum::<f64>();
    let (loglik_ml, loglik_reml) = if degenerate {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (
            -0.5 * n as f64 * (LN_2PI + (rss / n as f64).ln() + 1.0),
            -0.5 * (df * (LN_2PI + sigma2.ln() + 1.0) + logdet_xtx),
        )
    };
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let vcov = (&rinv * rinv.transpose()) * sigma2;
    let (aic, bic) = ic(loglik_ml, p + 1, n);
    Ok(FitResult {
        method: FitMethod::Ols,
        column_names: design.column_names(),
        terms: design.terms.clone(),
        beta: beta.iter().copied().collect(),
        sigma2_eps: sigma2,
        theta: Vec::new(),
        random_blocks: Vec::new(),
        blup: Vec::new(),
        loglik_ml,
        loglik_reml,
        aic,
        bic,
        n,
        p,
        converged: true,
        degenerate,
        sweeps: 0,
        vcov_model: matrix_rows(&vcov),
    })
}

/// Precomputed cross-products for repeated evaluation of the profiled
/// restricted likelihood.
pub struct RemlProblem<'a> {
    design: &'a CompiledDesign,
    z: DMatrix<f64>,
    blocks: Vec<Range<usize>>,
    block_of: Vec<usize>,
    ztz: DMatrix<f64>,
    ztx: DMatrix<f64>,
    xtx: DMatrix<f64>,
    zty: DVector<f64>,
    xty: DVector<f64>,
}

/// Profiled quantities at one θ.
pub struct RemlEval {
    pub theta: Vec<f64>,
    pub loglik_reml: f64,
    pub loglik_ml: f64,
    /// Penalized residual sum of squares.
    pub prss: f64,
    pub beta: DVector<f64>,
    /// Spherical random effects; `u = Λb`.
    pub b: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl<'a> RemlProblem<'a> {
    pub fn new(design: &'a CompiledDesign) -> Result<Self> {
        if design.random.is_empty() {
            return Err(Error::Config("REML requires at least one random block".into()));
        }
        if design.n() <= design.p() {
            return Err(Error::Numerical("too few rows for the fixed design".into()));
        }
        let z = design.z_full();
        let mut blocks = Vec::new();
        let mut block_of = Vec::new();
        let mut off = 0;
        for (k, b) in design.random.iter().enumerate() {
            blocks.push(off..off + b.z.ncols());
            block_of.extend(std::iter::repeat_n(k, b.z.ncols()));
            off += b.z.ncols();
        }
        let zt = z.transpose();
        let xt = design.x.transpose();
        Ok(RemlProblem {
            ztz: &zt * &z,
            ztx: &zt * &design.x,
            xtx: &xt * &design.x,
            zty: &zt * &design.y,
            xty: &xt * &design.y,
            z,
            blocks,
            block_of,
            design,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn eval(&self, theta: &[f64]) -> Result<RemlEval> {
        let (n, p) = (self.design.n(), self.design.p());
        let q = self.z.ncols();
        if theta.len() != self.blocks.len() || theta.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::Numerical(format!("invalid variance ratios {theta:?}")));
        }
        let s: Vec<f64> = self.block_of.iter().map(|&k| theta[k].sqrt()).collect();
        let mut a = DMatrix::zeros(q + p, q + p);
        for i in 0..q {
            for j in 0..q {
                a[(i, j)] = s[i] * s[j] * self.ztz[(i, j)];
            }
            a[(i, i)] += 1.0;
            for j in 0..p {
                let v = s[i] * self.ztx[(i, j)];
                a[(i, q + j)] = v;
                a[(q + j, i)] = v;
            }
        }
        a.view_mut((q, q), (p, p)).copy_from(&self.xtx);
        let mut rhs = DVector::zeros(q + p);
        for i in 0..q {
            rhs[i] = s[i] * self.zty[i];
        }
        rhs.rows_mut(q, p).copy_from(&self.xty);
        let chol = Cholesky::new(a)
            .ok_or_else(|| Error::Numerical("mixed-model equations are not positive definite".into()))?;
        let sol = chol.solve(&rhs);
        let b = sol.rows(0, q).into_owned();
        let beta = sol.rows(q, p).into_owned();
        let u = DVector::from_fn(q, |i, _| s[i] * b[i]);
        let resid = &self.design.y - &self.design.x * &beta - &self.z * &u;
        let prss = resid.norm_squared() + b.norm_squared();
        let l = chol.l_dirty();
        let logdet_h: f64 = 2.0 * (0..q).map(|i| l[(i, i)].ln()).sum::<f64>();
        let logdet_x: f64 = 2.0 * (q..q + p).map(|i| l[(i, i)].ln()).sum::<f64>();
        let df = (n - p) as f64;
        let (loglik_reml, loglik_ml) = if is_exact_fit(prss, &self.design.y) {
            (f64::INFINITY, f64::INFINITY)
        } else {
            (
                -0.5 * (df * (LN_2PI + (prss / df).ln() + 1.0) + logdet_h + logdet_x),
                -0.5 * (n as f64 * (LN_2PI + (prss / n as f64).ln() + 1.0) + logdet_h),
            )
        };
        if loglik_reml.is_nan() {
            return Err(Error::Numerical("restricted likelihood evaluated to NaN".into()));
        }
        Ok(RemlEval { theta: theta.to_vec(), loglik_reml, loglik_ml, prss, beta, b, chol })
    }

    /// Scaled score `g_k = q_k − tr(C_kk) − (n−p)‖b_k‖²/PRSS`, where `C` is
    /// the inverse of the augmented matrix; `∂ℓ_R/∂θ_k = −g_k/(2θ_k)`.
    fn scaled_score(&self, e: &RemlEval, k: usize) -> f64 {
        let range = self.blocks[k].clone();
        let q = self.z.ncols();
        let p = self.design.p();
        let inv = e.chol.inverse();
        let tr: f64 = range.clone().map(|i| inv[(i, i)]).sum();
        let bk: f64 = range.clone().map(|i| e.b[i] * e.b[i]).sum();
        let df = (self.design.n() - p) as f64;
        debug_assert!(inv.nrows() == q + p);
        range.len() as f64 - tr - df * bk / e.prss
    }

    fn with_coord(&self, theta: &[f64], k: usize, value: f64) -> Result<RemlEval> {
        let mut t = theta.to_vec();
        t[k] = value;
        self.eval(&t)
    }

    /// Maximizes ℓ_R over coordinate `k` with the others held fixed.
    fn maximize_coordinate(&self, current: RemlEval, k: usize, full_grid: bool) -> Result<RemlEval> {
        let theta = current.theta.clone();
        let x_max = THETA_MAX.sqrt();
        let x_now = theta[k].sqrt();
        // candidate points on the √θ scale
        let mut xs: Vec<f64> = if full_grid || x_now == 0.0 {
            (-24..=12).map(|e| 10f64.powf(f64::from(e) / 4.0)).collect()
        } else {
            (-4..=4).map(|e| x_now * 10f64.powf(f64::from(e) / 4.0)).filter(|&x| x <= x_max).collect()
        };
        xs.push(0.0);
        xs.push(x_now);
        xs.push(x_max);
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut vals = Vec::with_capacity(xs.len());
        for &x in &xs {
            vals.push(if x == x_now { current.loglik_reml } else { self.with_coord(&theta, k, x * x)?.loglik_reml });
        }
        let mut best = 0;
        for i in 1..vals.len() {
            if vals[i] > vals[best] {
                best = i;
            }
        }
        if !full_grid && x_now > 0.0 && best + 1 == xs.len() && xs[best] < x_max {
            return self.maximize_coordinate(current, k, true);
        }
        let lo = if best == 0 { 0.0 } else { xs[best - 1] };
        let hi = if best + 1 == xs.len() { xs[best] } else { xs[best + 1] };
        let (xg, fg) = golden_section(|x| Ok(self.with_coord(&theta, k, x * x)?.loglik_reml), lo, hi, xs[best], vals[best])?;
        let mut best_eval = if fg > current.loglik_reml || (fg == current.loglik_reml && xg == x_now) {
            self.with_coord(&theta, k, xg * xg)?
        } else {
            current
        };
        if best_eval.theta[k] > 0.0 && best_eval.theta[k] < 1e-10 {
            // numerically indistinguishable from the boundary
            let at_zero = self.with_coord(&theta, k, 0.0)?;
            if at_zero.loglik_reml >= best_eval.loglik_reml - 1e-12 {
                return Ok(at_zero);
            }
        }
        if best_eval.theta[k] > 0.0 && best_eval.theta[k] < THETA_MAX && best_eval.loglik_reml.is_finite() {
            if let Some(polished) = self.polish(&best_eval, k)? {
                if polished.loglik_reml >= best_eval.loglik_reml - 1e-9 {
                    best_eval = polished;
                }
            }
        }
        Ok(best_eval)
    }

    /// Root of the scaled score in θ_k near a golden-section optimum.
    fn polish(&self, e: &RemlEval, k: usize) -> Result<Option<RemlEval>> {
        let t0 = e.theta[k];
        let score = |t: f64| -> Result<(f64, RemlEval)> {
            let ev = self.with_coord(&e.theta, k, t)?;
            Ok((self.scaled_score(&ev, k), ev))
        };
        let mut width = 1e-5;
        let (mut a, mut b, mut fa, mut fb);
        loop {
            a = t0 * (1.0 - width);
            b = (t0 * (1.0 + width)).min(THETA_MAX);
            fa = score(a)?.0;
            fb = score(b)?.0;
            if fa < 0.0 && fb > 0.0 {
                break;
            }
            width *= 10.0;
            if width > 0.5 {
                return Ok(None);
            }
        }
        // Illinois variant of regula falsi
        let mut side = 0i8;
        let mut last = None;
        for _ in 0..200 {
            let c = (a * fb - b * fa) / (fb - fa);
            if !(c > a && c < b) {
                break;
            }
            let (fc, ev) = score(c)?;
            last = Some(ev);
            if fc == 0.0 || (b - a) <= 1e-15 * b {
                break;
            }
            if fc < 0.0 {
                a = c;
                fa = fc;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = c;
                fb = fc;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
            if (b - a) <= 1e-14 * b {
                break;
            }
        }
        Ok(last)
    }

    /// Coordinate sweeps from one starting point.
    fn ascend(&self, start: &[f64]) -> Result<(RemlEval, usize, bool)> {
        let mut cur = self.eval(start)?;
        for sweep in 1..=MAX_SWEEPS {
            let before_theta = cur.theta.clone();
            let before = cur.loglik_reml;
            for k in 0..self.n_blocks() {
                cur = self.maximize_coordinate(cur, k, sweep == 1)?;
            }
            let moved = before_theta
                .iter()
                .zip(&cur.theta)
                .any(|(a, b)| (a - b).abs() > 1e-8 * a.abs().max(b.abs()) + 1e-14);
            if !cur.loglik_reml.is_finite() || (cur.loglik_reml - before < 1e-10 && !moved) {
                return Ok((cur, sweep, true));
            }
        }
        Ok((cur, MAX_SWEEPS, false))
    }
}

/// Golden-section maximization of `f` on `[lo, hi]` given one interior
/// evaluation; returns the best point seen.
fn golden_section(
    mut f: impl FnMut(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    x0: f64,
    f0: f64,
) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut best = (x0, f0);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..200 {
        for (x, fx) in [(c, fc), (d, fd)] {
            if fx > best.1 {
                best = (x, fx);
            }
        }
        if (b - a) <= 1e-6 * b.max(1e-9) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    for edge in [lo, hi] {
        if edge == 0.0 || edge == THETA_MAX.sqrt() {
            let f_edge = f(edge)?;
            if f_edge >= best.1 {
                best = (edge, f_edge);
            }
        }
    }
    Ok(best)
}

fn reml_result(problem: &RemlProblem, e: &RemlEval, sweeps: usize, converged: bool) -> FitResult {
    let design = problem.design;
    let (n, p) = (design.n(), design.p());
    let q = problem.z.ncols();
    let df = (n - p) as f64;
    let sigma2 = e.prss / df;
    let inv = e.chol.inverse();
    let vcov = inv.view((q, q), (p, p)).into_owned() * sigma2;
    let blup = design
        .random
        .iter()
        .zip(&problem.blocks)
        .enumerate()
        .map(|(k, (blk, range))| BlupBlock {
            name: blk.name.clone(),
            levels: blk.levels.clone(),
            values: range.clone().map(|i| e.theta[k].sqrt() * e.b[i]).collect(),
        })
        .collect();
    let k = p + e.theta.len() + 1;
    let (aic, bic) = ic(e.loglik_ml, k, n);
    FitResult {
        method: FitMethod::Reml,
        column_names: design.column_names(),
        terms: design.terms.clone(),
        beta: e.beta.iter().copied().collect(),
        sigma2_eps: sigma2,
        theta: e.theta.clone(),
        random_blocks: design.random.iter().map(|b| b.name.clone()).collect(),
        blup,
        loglik_ml: e.loglik_ml,
        loglik_reml: e.loglik_reml,
        aic,
        bic,
        n,
        p,
        converged,
        degenerate: !e.loglik_reml.is_finite(),
        sweeps,
        vcov_model: matrix_rows(&vcov),
    }
}

/// Profiled REML fit with θ held at the given values.
pub fn fit_reml_at(design: &CompiledDesign, theta: &[f64]) -> Result<FitResult> {
    let problem = RemlProblem::new(design)?;
    let e = problem.eval(theta)?;
    Ok(reml_result(&problem, &e, 0, true))
}

/// Restricted log-likelihood profiled over β and σ² at θ.
pub fn restricted_loglik(design: &CompiledDesign, theta: &[f64]) -> Result<f64> {
    Ok(RemlProblem::new(design)?.eval(theta)?.loglik_reml)
}

/// REML fit maximizing the profiled restricted likelihood over
/// θ ∈ [0, 1e6]^K from three common starting points.
pub fn fit_reml(design: &CompiledDesign) -> Result<FitResult> {
    let problem = RemlProblem::new(design)?;
    let k = problem.n_blocks();
    let mut best: Option<(RemlEval, usize, bool)> = None;
    let mut total_sweeps = 0;
    for &s in &START_VALUES {
        let (e, sweeps, converged) = problem.ascend(&vec![s; k])?;
        total_sweeps += sweeps;
        let better = match &best {
            None => true,
            Some((b, _, _)) => e.loglik_reml > b.loglik_reml + 1e-10,
        };
        if better {
            best = Some((e, sweeps, converged));
        }
    }
    let (e, _, converged) = best.expect("at least one start");
    if !converged {
        log::warn!("REML did not converge within {MAX_SWEEPS} sweeps");
    }
    Ok(reml_result(&problem, &e, total_sweeps, converged))
}

/// OLS for purely fixed designs, REML otherwise.
pub fn fit(design: &CompiledDesign) -> Result<FitResult> {
    if design.random.is_empty() {
        fit_ols(design)
    } else {
        fit_reml(design)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{ModelSpec, RandomBlock, Term};

    fn toy(y: Vec<f64>, x: DMatrix<f64>, random: Vec<RandomBlock>, clusters: Vec<usize>) -> CompiledDesign {
        let terms = (0..x.ncols()).map(|j| if j == 0 { Term::Intercept } else { Term::Year(j as i32) }).collect();
        let g = clusters.iter().max().map_or(0, |m| m + 1);
        CompiledDesign {
            spec: ModelSpec::default(),
            y: DVector::from_vec(y),
            x,
            terms,
            random,
            clusters,
            cluster_labels: (0..g).map(|i| i.to_string()).collect(),
            reference_cluster: "0".into(),
            trend_origin: 1998,
            warnings: Vec::new(),
        }
    }

    /// Balanced one-way layout, a groups of m.
    fn one_way(values: &[Vec<f64>]) -> CompiledDesign {
        let a = values.len();
        let m = values[0].len();
        let n = a * m;
        let y: Vec<f64> = values.iter().flatten().copied().collect();
        let z = DMatrix::from_fn(n, a, |i, j| f64::from(u8::from(i / m == j)));
        let block = RandomBlock { name: "g".into(), levels: (0..a).map(|i| i.to_string()).collect(), z };
        toy(y, DMatrix::from_element(n, 1, 1.0), vec![block], (0..n).map(|i| i / m).collect())
    }

    #[test]
    fn exact_linear_response_is_degenerate() {
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y: Vec<f64> = (0..6).map(|i| 2.0 + 0.5 * i as f64).collect();
        let fit = fit_ols(&toy(y, x, Vec::new(), vec![0; 6])).unwrap();
        assert!(fit.degenerate);
        assert!(fit.loglik_ml.is_infinite());
        assert!((fit.beta[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn balanced_one_way_matches_anova() {
        let values = vec![
            vec![3.1, 2.4, 4.0, 3.3],
            vec![5.2, 6.1, 5.5, 4.9],
            vec![1.0, 2.2, 1.7, 0.8],
            vec![3.9, 4.4, 3.0, 4.1],
            vec![2.5, 3.6, 2.9, 3.3],
        ];
        let (a, m) = (values.len() as f64, values[0].len() as f64);
        let grand: f64 = values.iter().flatten().sum::<f64>() / (a * m);
        let means: Vec<f64> = values.iter().map(|g| g.iter().sum::<f64>() / m).collect();
        let msb = m * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (a - 1.0);
        let msw = values
            .iter()
            .zip(&means)
            .map(|(g, mu)| g.iter().map(|v| (v - mu).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (a * (m - 1.0));
        let sigma2_u = (msb - msw) / m;
        assert!(sigma2_u > 0.0);
        let fit = fit_reml(&one_way(&values)).unwrap();
        assert!(fit.converged);
        assert!((fit.sigma2_eps - msw).abs() < 1e-8 * msw);
        assert!((fit.theta[0] * fit.sigma2_eps - sigma2_u).abs() < 1e-8 * sigma2_u);
        assert!((fit.beta[0] - grand).abs() < 1e-10);
    }

    #[test]
    fn negative_anova_estimate_pins_theta_at_zero() {
        let values = vec![vec![1.0, 3.0, 2.0], vec![2.9, 1.1, 2.0], vec![1.5, 2.5, 2.05]];
        let fit = fit_reml(&one_way(&values)).unwrap();
        assert_eq!(fit.theta[0], 0.0);
        assert!(fit.converged);
    }

    #[test]
    fn information_criteria_penalties() {
        let (aic, bic) = ic(-100.0, 5, 190);
        assert!((bic - aic - 5.0 * (190f64.ln() - 2.0)).abs() < 1e-12);
        let (_, bic2) = ic(-100.0, 6, 190);
        assert!((bic2 - bic - 190f64.ln()).abs() < 1e-12);
    }
}
