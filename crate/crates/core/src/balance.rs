//! MAIC weight estimation by exponential tilting.
//!
//! IPD covariates are centred on the aggregate target means and the convex
//! objective `Q(alpha) = sum_i exp(xc_i' alpha)` is minimised with BFGS.
//! At the minimum `sum_i w_i xc_i = 0` with `w_i = exp(xc_i' alpha)`, so the
//! weighted IPD means reproduce the targets exactly.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::numeric::NeumaierSum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BalanceError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("need n > K >= 1 to estimate weights (n = {n}, K = {k})")]
    Underdetermined { n: usize, k: usize },
    #[error("target means lie outside the support of the IPD covariates ({0})")]
    TargetOutsideSupport(String),
    #[error("weights must be finite and positive")]
    BadWeights,
}

/// Covariates centred on the aggregate target means.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceProblem {
    pub xc: DMatrix<f64>,
    pub target_means: Vec<f64>,
    pub covariate_names: Vec<String>,
}

impl BalanceProblem {
    pub fn n(&self) -> usize {
        self.xc.nrows()
    }

    pub fn k(&self) -> usize {
        self.xc.ncols()
    }
}

pub fn center_covariates(
    x_ipd: &DMatrix<f64>,
    target_means: &[f64],
    names: &[String],
) -> Result<BalanceProblem, BalanceError> {
    if x_ipd.ncols() != target_means.len() || names.len() != target_means.len() {
        return Err(BalanceError::Dimension(format!(
            "{} IPD columns, {} target means, {} names",
            x_ipd.ncols(),
            target_means.len(),
            names.len()
        )));
    }
    let mut xc = x_ipd.clone();
    for (k, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-target_means[k]);
    }
    Ok(BalanceProblem {
        xc,
        target_means: target_means.to_vec(),
        covariate_names: names.to_vec(),
    })
}

// exp() overflows just above 709.78
const MAX_EXPONENT: f64 = 709.0;

/// `Q(alpha)` and its gradient `sum_i xc_i exp(xc_i' alpha)`.
///
/// Returns `(+inf, NaN...)` instead of overflowing; callers treat that as a
/// rejected step.
pub fn objective_and_gradient(alpha: &[f64], prob: &BalanceProblem) -> (f64, Vec<f64>) {
    let k = prob.k();
    assert_eq!(alpha.len(), k);
    // Compensated sums: at n ~ 1e5 plain accumulation error swamps the
    // gradient near the optimum.
    let mut q = NeumaierSum::default();
    let mut g = vec![NeumaierSum::default(); k];
    for i in 0..prob.n() {
        let eta: f64 = (0..k).map(|j| prob.xc[(i, j)] * alpha[j]).sum();
        if !(eta <= MAX_EXPONENT) {
            return (f64::INFINITY, vec![f64::NAN; k]);
        }
        let e = eta.exp();
        q.add(e);
        for j in 0..k {
            g[j].add(prob.xc[(i, j)] * e);
        }
    }
    (q.value(), g.iter().map(NeumaierSum::value).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerSettings {
    /// Stop once the gradient infinity-norm is at or below this.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Starting point; empty means the origin.
    pub initial_alpha: Vec<f64>,
    /// Iterates with a larger Euclidean norm and a non-vanishing gradient
    /// are reported as diverging.
    pub divergence_norm: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 500,
            initial_alpha: Vec::new(),
            divergence_norm: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    Diverged,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Objective at every accepted iterate, starting point first.
    pub trace: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with an inverse-Hessian update and backtracking (Armijo) line search.
///
/// `evaluator` maps a point to `(value, gradient)`. Non-finite values are
/// rejected by the line search. Once the objective stops resolving changes
/// (relative difference below 1e-13) a step is still accepted if it shrinks
/// the gradient, which lets the solver reach tight gradient tolerances on
/// objectives with large magnitude.
pub fn bfgs_minimize<F>(mut evaluator: F, settings: &OptimizerSettings) -> BfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const ARMIJO: f64 = 1e-4;
    const MAX_BACKTRACKS: usize = 60;
    const WOLFE_CURVATURE: f64 = 0.9;

    let k = settings.initial_alpha.len();
    let mut x = settings.initial_alpha.clone();
    let (mut f, mut g) = evaluator(&x);
    let mut trace = vec![f];
    let mut h = DMatrix::<f64>::identity(k, k);
    let mut first = true;
    let mut iterations = 0;

    let finish = |x: Vec<f64>, f: f64, g: &[f64], iterations: usize, stop: StopReason, trace: Vec<f64>| {
        let grad_norm = inf_norm(g);
        BfgsOutcome {
            x,
            value: f,
            grad_norm,
            iterations,
            converged: stop == StopReason::Converged,
            stop,
            trace,
        }
    };

    if inf_norm(&g) <= settings.grad_tol {
        return finish(x, f, &g, 0, StopReason::Converged, trace);
    }

    while iterations < settings.max_iters {
        let mut d: Vec<f64> = (0..k).map(|i| -(0..k).map(|j| h[(i, j)] * g[j]).sum::<f64>()).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h = DMatrix::identity(k, k);
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut t = if first { (1.0 / inf_norm(&d)).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            let (fc, gc) = evaluator(&cand);
            if fc.is_finite() {
                let armijo = fc <= f + ARMIJO * t * slope;
                // Below the rounding level of `f` only the directional derivative
                // is informative; require the strong Wolfe curvature condition.
                let flat = (fc - f).abs() <= 1e-13 * f.abs().max(1.0) && dot(&gc, &d).abs() <= WOLFE_CURVATURE * slope.abs();
                if armijo || flat {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            return finish(x, f, &g, iterations, StopReason::LineSearchFailed, trace);
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first {
                h *= sy / dot(&y, &y);
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..k).map(|i| (0..k).map(|j| h[(i, j)] * y[j]).sum()).collect();
            let yhy = dot(&y, &hy);
            for i in 0..k {
                for j in 0..k {
                    h[(i, j)] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        first = false;
        x = xn;
        f = fn_;
        g = gn;
        iterations += 1;
        trace.push(f);

        if inf_norm(&g) <= settings.grad_tol {
            return finish(x, f, &g, iterations, StopReason::Converged, trace);
        }
        if dot(&x, &x).sqrt() > settings.divergence_norm {
            return finish(x, f, &g, iterations, StopReason::Diverged, trace);
        }
    }
    finish(x, f, &g, iterations, StopReason::MaxIterations, trace)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaicWeights {
    pub alpha: Vec<f64>,
    /// Raw weights `exp(xc_i' alpha)`.
    pub weights: Vec<f64>,
    pub ess: f64,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
}

impl MaicWeights {
    /// Weights rescaled to sum to n (display only).
    pub fn normalized(&self) -> Vec<f64> {
        let n = self.weights.len() as f64;
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w * n / total).collect()
    }
}

/// Largest |weighted mean - target| across covariates.
pub fn max_moment_gap(prob: &BalanceProblem, w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    (0..prob.k())
        .map(|j| (0..prob.n()).map(|i| w[i] * prob.xc[(i, j)]).sum::<f64>().abs() / total)
        .fold(0.0, f64::max)
}

const MOMENT_TOL: f64 = 1e-6;

pub fn estimate_weights(prob: &BalanceProblem, settings: &OptimizerSettings) -> Result<MaicWeights, BalanceError> {
    let (n, k) = (prob.n(), prob.k());
    if k == 0 || n <= k {
        return Err(BalanceError::Underdetermined { n, k });
    }
    // The target must sit strictly inside each covariate's observed range.
    for j in 0..k {
        let col = prob.xc.column(j);
        if !(col.min() < 0.0 && col.max() > 0.0) {
            return Err(BalanceError::TargetOutsideSupport(format!(
                "`{}` target {} not strictly inside the IPD range [{}, {}]",
                prob.covariate_names.get(j).map(String::as_str).unwrap_or("?"),
                prob.target_means[j],
                col.min() + prob.target_means[j],
                col.max() + prob.target_means[j],
            )));
        }
    }

    let mut settings = settings.clone();
    if settings.initial_alpha.is_empty() {
        settings.initial_alpha = vec![0.0; k];
    } else if settings.initial_alpha.len() != k {
        return Err(BalanceError::Dimension(format!(
            "initial alpha has length {}, expected {k}",
            settings.initial_alpha.len()
        )));
    }
    let out = bfgs_minimize(|a| objective_and_gradient(a, prob), &settings);
    let weights = tilted_weights(&prob.xc, &out.x);

    if out.stop == StopReason::Diverged {
        return Err(BalanceError::TargetOutsideSupport(format!(
            "|alpha| = {:.1} with gradient norm {:.3e}",
            out.x.iter().map(|a| a * a).sum::<f64>().sqrt(),
            out.grad_norm
        )));
    }
    // A tiny raw gradient can also mean every weight collapsed towards zero.
    let gap = max_moment_gap(prob, &weights);
    if out.converged && gap > MOMENT_TOL {
        return Err(BalanceError::TargetOutsideSupport(format!(
            "weights collapsed; weighted means still {gap:.3e} from the targets"
        )));
    }

    Ok(MaicWeights {
        ess: effective_sample_size(&weights),
        alpha: out.x,
        weights,
        converged: out.converged,
        grad_norm: out.grad_norm,
        iterations: out.iterations,
    })
}

pub fn tilted_weights(xc: &DMatrix<f64>, alpha: &[f64]) -> Vec<f64> {
    (0..xc.nrows())
        .map(|i| (0..xc.ncols()).map(|j| xc[(i, j)] * alpha[j]).sum::<f64>().exp())
        .collect()
}

/// Kish effective sample size `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    s * s / s2
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub ipd_mean: f64,
    pub weighted_mean: f64,
    pub target_mean: f64,
    pub abs_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
    pub ess: f64,
    pub n: usize,
    pub ess_fraction: f64,
}

impl BalanceReport {
    pub fn max_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.abs_gap).fold(0.0, f64::max)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("covariate\tipd_mean\tweighted_mean\ttarget_mean\tabs_gap\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:e}",
                r.covariate, r.ipd_mean, r.weighted_mean, r.target_mean, r.abs_gap
            );
        }
        let _ = writeln!(out, "ESS\t{}\t{}", self.ess, self.ess_fraction);
        out
    }
}

pub fn balance_report(
    x_ipd: &DMatrix<f64>,
    w: &[f64],
    target_means: &[f64],
    names: &[String],
) -> Result<BalanceReport, BalanceError> {
    let n = x_ipd.nrows();
    if w.len() != n || x_ipd.ncols() != target_means.len() || names.len() != target_means.len() {
        return Err(BalanceError::Dimension(format!(
            "{n} rows, {} weights, {} columns, {} targets, {} names",
            w.len(),
            x_ipd.ncols(),
            target_means.len(),
            names.len()
        )));
    }
    if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(BalanceError::BadWeights);
    }
    let total: f64 = w.iter().sum();
    let rows = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = x_ipd.column(j);
            let ipd_mean = col.mean();
            let weighted_mean = col.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() / total;
            BalanceRow {
                covariate: name.clone(),
                ipd_mean,
                weighted_mean,
                target_mean: target_means[j],
                abs_gap: (weighted_mean - target_means[j]).abs(),
            }
        })
        .collect();
    let ess = effective_sample_size(w);
    Ok(BalanceReport {
        rows,
        ess,
        n,
        ess_fraction: ess / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    fn problem(rows: usize, cols: usize, data: &[f64]) -> BalanceProblem {
        center_covariates(&DMatrix::from_row_slice(rows, cols, data), &vec![0.0; cols], &names(cols)).unwrap()
    }

    #[test]
    fn centering_on_sample_means_zeroes_columns() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 10.0, 2.0, 20.0, 6.0, 60.0]);
        let means = [3.0, 30.0];
        let p = center_covariates(&x, &means, &names(2)).unwrap();
        for j in 0..2 {
            assert_eq!(p.xc.column(j).sum(), 0.0);
        }
        assert!(center_covariates(&x, &[1.0], &names(1)).is_err());
    }

    #[test]
    fn empty_problem_is_rejected_downstream() {
        let x = DMatrix::<f64>::zeros(5, 0);
        let p = center_covariates(&x, &[], &[]).unwrap();
        assert_eq!(p.k(), 0);
        assert_eq!(
            estimate_weights(&p, &OptimizerSettings::default()).unwrap_err(),
            BalanceError::Underdetermined { n: 5, k: 0 }
        );
    }

    #[test]
    fn objective_at_origin() {
        let p = problem(3, 2, &[1.0, -2.0, 0.5, 1.0, -3.0, 4.0]);
        let (q, g) = objective_and_gradient(&[0.0, 0.0], &p);
        assert_eq!(q, 3.0);
        assert_eq!(g, vec![-1.5, 3.0]);
    }

    #[test]
    fn overflow_is_infinite() {
        let p = problem(2, 1, &[1.0, -1.0]);
        let (q, _) = objective_and_gradient(&[800.0], &p);
        assert_eq!(q, f64::INFINITY);
    }

    #[test]
    fn two_point_closed_form() {
        // Q = e^{-a} + e^{2a}; Q' = 0 at e^{3a} = 1/2.
        let p = problem(2, 1, &[-1.0, 2.0]);
        let out = bfgs_minimize(
            |a| objective_and_gradient(a, &p),
            &OptimizerSettings {
                initial_alpha: vec![0.0],
                ..Default::default()
            },
        );
        assert!(out.converged);
        assert!((out.x[0] + 2f64.ln() / 3.0).abs() < 1e-6);
        assert!((out.x[0] + 0.231049).abs() < 1e-6);
    }

    #[test]
    fn quadratic_bowl() {
        let c = [3.0, -1.5, 0.25];
        let out = bfgs_minimize(
            |a| {
                let f = a.iter().zip(&c).map(|(x, c)| (x - c).powi(2)).sum();
                let g = a.iter().zip(&c).map(|(x, c)| 2.0 * (x - c)).collect();
                (f, g)
            },
            &OptimizerSettings {
                initial_alpha: vec![0.0; 3],
                ..Default::default()
            },
        );
        assert!(out.converged);
        assert!(out.iterations <= 25);
        for (x, c) in out.x.iter().zip(&c) {
            assert!((x - c).abs() < 1e-8);
        }
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let out = bfgs_minimize(
            |a| (a[0] * a[0], vec![2.0 * a[0]]),
            &OptimizerSettings {
                initial_alpha: vec![0.0],
                ..Default::default()
            },
        );
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, vec![0.0]);
        assert!(out.converged);
    }

    #[test]
    fn max_iterations_returns_best_iterate() {
        let p = problem(2, 1, &[-1.0, 2.0]);
        let out = bfgs_minimize(
            |a| objective_and_gradient(a, &p),
            &OptimizerSettings {
                initial_alpha: vec![1.0],
                max_iters: 1,
                ..Default::default()
            },
        );
        assert!(!out.converged);
        assert_eq!(out.stop, StopReason::MaxIterations);
        assert!(out.value < out.trace[0]);
    }

    #[test]
    fn self_targets_give_unit_weights() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 6.0]);
        let p = center_covariates(&x, &[3.0], &names(1)).unwrap();
        let w = estimate_weights(&p, &OptimizerSettings::default()).unwrap();
        assert_eq!(w.iterations, 0);
        assert_eq!(w.alpha, vec![0.0]);
        assert!(w.weights.iter().all(|&v| v == 1.0));
        assert_eq!(w.ess, 4.0);
    }

    #[test]
    fn binary_all_zero_target_half_is_outside_support() {
        let x = DMatrix::from_row_slice(6, 1, &[0.0; 6]);
        let p = center_covariates(&x, &[0.5], &names(1)).unwrap();
        assert!(matches!(
            estimate_weights(&p, &OptimizerSettings::default()),
            Err(BalanceError::TargetOutsideSupport(_))
        ));
    }

    #[test]
    fn joint_hull_violation_is_detected() {
        // Each marginal target is inside its range, but (0.9, 0.9) is outside
        // the hull of {(0,0), (1,0), (0,1)}.
        let x = DMatrix::from_row_slice(6, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let p = center_covariates(&x, &[0.9, 0.9], &names(2)).unwrap();
        assert!(matches!(
            estimate_weights(&p, &OptimizerSettings::default()),
            Err(BalanceError::TargetOutsideSupport(_))
        ));
    }

    #[test]
    fn ess_examples() {
        assert_eq!(effective_sample_size(&[2.0; 7]), 7.0);
        assert!((effective_sample_size(&[1.0, 2.0, 3.0]) - 36.0 / 14.0).abs() < 1e-15);
        assert!((effective_sample_size(&[1e6, 1.0, 1.0]) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn report_with_uniform_weights_matches_unweighted() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 4.0, 1.0]);
        let r = balance_report(&x, &[1.0; 3], &[2.0, 0.5], &names(2)).unwrap();
        for row in &r.rows {
            assert_eq!(row.ipd_mean, row.weighted_mean);
        }
        assert_eq!(r.ess, 3.0);
        let tsv = r.to_tsv();
        assert!(tsv.starts_with("covariate\tipd_mean\tweighted_mean\ttarget_mean\tabs_gap\n"));
        assert!(tsv.lines().last().unwrap().starts_with("ESS\t3\t1"));
    }

    #[test]
    fn empty_report() {
        let x = DMatrix::<f64>::zeros(3, 0);
        let r = balance_report(&x, &[1.0; 3], &[], &[]).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.max_gap(), 0.0);
    }
}
