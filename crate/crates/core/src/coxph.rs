//! Weighted Cox proportional-hazards regression.
//!
//! The partial likelihood uses Breslow handling of ties and treats weights
//! as case weights: subject `i` contributes `w_i` to its own event term and
//! `w_i exp(z_i' beta)` to every risk set it belongs to,
//!
//! ```text
//! l(beta) = sum_{i: event} w_i [ z_i' beta - ln sum_{j: t_j >= t_i} w_j exp(z_j' beta) ]
//! ```
//!
//! Fitting is Newton-Raphson from zero with step halving. Two covariance
//! estimates are reported: the inverse information and the Lin-Wei sandwich
//! built from per-subject score residuals.
//!
//! Internally the design is centred column-wise before any exponentials are
//! taken. Centering leaves the likelihood, score and information unchanged
//! (the shift cancels against the risk-set normaliser) and keeps `exp(eta)`
//! away from overflow when covariates sit far from zero.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numeric::NeumaierSum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoxError {
    #[error("no events in the sample")]
    NoEvents,
    #[error("information matrix is singular (constant or collinear design)")]
    SingularInformation,
    #[error("monotone likelihood: |beta| reached {0:.3} (separation)")]
    MonotoneLikelihood(f64),
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("weights must be finite and positive (subject {0})")]
    BadWeight(usize),
    #[error("times must be finite and positive (subject {0})")]
    BadTime(usize),
    #[error("design contains non-finite values")]
    NonFinite,
}

/// Time-to-event data with a regression design and case weights.
#[derive(Debug, Clone)]
pub struct SurvivalSample {
    time: Vec<f64>,
    status: Vec<bool>,
    z: DMatrix<f64>,
    w: Vec<f64>,
    // column-centred copy of z used in all computations
    zc: DMatrix<f64>,
    // subject indices grouped by tied time, groups in descending time
    groups: Vec<Vec<usize>>,
    tied_event_times: usize,
}

impl SurvivalSample {
    pub fn new(time: Vec<f64>, status: Vec<bool>, z: DMatrix<f64>, w: Vec<f64>) -> Result<Self, CoxError> {
        let n = time.len();
        if status.len() != n || z.nrows() != n || w.len() != n {
            return Err(CoxError::Dimension(format!(
                "time {n}, status {}, design rows {}, weights {}",
                status.len(),
                z.nrows(),
                w.len()
            )));
        }
        if let Some(i) = time.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(CoxError::BadTime(i));
        }
        if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CoxError::BadWeight(i));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(CoxError::NonFinite);
        }
        if !status.iter().any(|&s| s) {
            return Err(CoxError::NoEvents);
        }

        let mut zc = z.clone();
        for mut col in zc.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in order {
            match groups.last_mut() {
                Some(g) if time[g[0]] == time[i] => g.push(i),
                _ => groups.push(vec![i]),
            }
        }
        let tied_event_times = groups
            .iter()
            .filter(|g| g.iter().filter(|&&i| status[i]).count() > 1)
            .count();

        Ok(Self {
            time,
            status,
            z,
            w,
            zc,
            groups,
            tied_event_times,
        })
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.z.ncols()
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Number of distinct event times shared by two or more events.
    pub fn tied_event_times(&self) -> usize {
        self.tied_event_times
    }

    /// Same data with new case weights.
    pub fn with_weights(&self, w: Vec<f64>) -> Result<Self, CoxError> {
        Self::new(self.time.clone(), self.status.clone(), self.z.clone(), w)
    }

    /// Rows `idx` (with repetition) as a new sample.
    pub fn subset(&self, idx: &[usize]) -> Result<Self, CoxError> {
        let z = DMatrix::from_fn(idx.len(), self.z.ncols(), |i, j| self.z[(idx[i], j)]);
        Self::new(
            idx.iter().map(|&i| self.time[i]).collect(),
            idx.iter().map(|&i| self.status[i]).collect(),
            z,
            idx.iter().map(|&i| self.w[i]).collect(),
        )
    }

    fn centred_eta(&self, beta: &[f64]) -> Vec<f64> {
        let p = self.zc.ncols();
        assert_eq!(beta.len(), p, "beta has length {} but design has {p} columns", beta.len());
        (0..self.len())
            .map(|i| (0..p).map(|k| self.zc[(i, k)] * beta[k]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Convergence threshold on the infinity norm of the score.
    pub score_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Coefficients beyond this magnitude are reported as separation.
    pub max_abs_beta: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            score_tol: 1e-9,
            max_iter: 50,
            max_halvings: 10,
            max_abs_beta: 15.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub se_model: Vec<f64>,
    pub se_robust: Vec<f64>,
    pub var_model: DMatrix<f64>,
    pub var_robust: DMatrix<f64>,
    pub loglik_at_solution: f64,
    pub loglik_null: f64,
    pub iterations: usize,
    pub converged: bool,
    pub score_norm: f64,
    pub tied_event_times: usize,
}

struct Accum {
    loglik: f64,
    score: Vec<f64>,
    info: Vec<f64>,
}

/// One sweep over risk sets in descending time.
fn accumulate(beta: &[f64], data: &SurvivalSample, derivatives: bool) -> Accum {
    let p = data.n_covariates();
    let eta = data.centred_eta(beta);
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut s0 = NeumaierSum::default();
    let mut s1 = vec![NeumaierSum::default(); p];
    let mut s2 = vec![0.0; p * p];
    let mut loglik = NeumaierSum::default();
    let mut score = vec![NeumaierSum::default(); p];
    let mut info = vec![0.0; p * p];
    let mut zbar = vec![0.0; p];

    for group in &data.groups {
        for &j in group {
            let r = data.w[j] * (eta[j] - shift).exp();
            s0.add(r);
            if derivatives {
                for a in 0..p {
                    let za = data.zc[(j, a)];
                    s1[a].add(r * za);
                    for b in 0..=a {
                        s2[a * p + b] += r * za * data.zc[(j, b)];
                    }
                }
            }
        }
        let s0v = s0.value();
        let log_s0 = s0v.ln();
        if derivatives {
            for a in 0..p {
                zbar[a] = s1[a].value() / s0v;
            }
        }
        for &i in group {
            if !data.status[i] {
                continue;
            }
            let wi = data.w[i];
            loglik.add(wi * (eta[i] - shift - log_s0));
            if derivatives {
                for a in 0..p {
                    score[a].add(wi * (data.zc[(i, a)] - zbar[a]));
                    for b in 0..=a {
                        info[a * p + b] += wi * (s2[a * p + b] / s0v - zbar[a] * zbar[b]);
                    }
                }
            }
        }
    }
    let mut acc = Accum {
        loglik: loglik.value(),
        score: score.iter().map(NeumaierSum::value).collect(),
        info,
    };
    for a in 0..p {
        for b in 0..a {
            acc.info[b * p + a] = acc.info[a * p + b];
        }
    }
    acc
}

/// Weighted Breslow partial log-likelihood at `beta`.
pub fn partial_loglik(beta: &[f64], data: &SurvivalSample) -> f64 {
    accumulate(beta, data, false).loglik
}

/// Analytic score vector and observed information (negative Hessian).
pub fn score_and_information(beta: &[f64], data: &SurvivalSample) -> (Vec<f64>, DMatrix<f64>) {
    let p = data.n_covariates();
    let acc = accumulate(beta, data, true);
    (acc.score, DMatrix::from_row_slice(p, p, &acc.info))
}

// Relative precision to which a partial log-likelihood sum can be compared.
const LOGLIK_RESOLUTION: f64 = 1e-12;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Inverse of a symmetric positive-definite matrix, rejecting near-singular ones.
fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, CoxError> {
    if m.nrows() == 0 {
        return Err(CoxError::SingularInformation);
    }
    let chol = m.clone().cholesky().ok_or(CoxError::SingularInformation)?;
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..m.nrows()).map(|i| l[(i, i)] * l[(i, i)]).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12 * max) {
        return Err(CoxError::SingularInformation);
    }
    Ok(chol.inverse())
}

/// Newton-Raphson maximisation of the partial likelihood from `beta = 0`.
pub fn fit_cox(data: &SurvivalSample, settings: &SolverSettings) -> Result<CoxFit, CoxError> {
    let p = data.n_covariates();
    if p == 0 {
        return Err(CoxError::Dimension("design has no columns".into()));
    }
    let mut beta = vec![0.0; p];
    let mut cur = accumulate(&beta, data, true);
    let loglik_null = cur.loglik;
    let mut iterations = 0;

    loop {
        let info = DMatrix::from_row_slice(p, p, &cur.info);
        // Checked every pass so a singular design fails even when the score is already zero.
        let inv = spd_inverse(&info)?;
        if inf_norm(&cur.score) <= settings.score_tol || iterations >= settings.max_iter {
            break;
        }
        let step = &inv * DVector::from_column_slice(&cur.score);

        // Near the optimum the gain of a Newton step drops below the rounding
        // error of a large log-likelihood sum. A step whose log-likelihood is
        // indistinguishable from the current one is accepted if it shrinks the score.
        let noise = LOGLIK_RESOLUTION * (1.0 + cur.loglik.abs());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let next = accumulate(&cand, data, true);
            if next.loglik.is_finite() {
                let ascent = next.loglik >= cur.loglik;
                let flat = (next.loglik - cur.loglik).abs() <= noise && inf_norm(&next.score) < inf_norm(&cur.score);
                if ascent || flat {
                    accepted = Some((cand, next));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((next_beta, next)) = accepted else {
            // No ascent left at working precision.
            break;
        };
        beta = next_beta;
        iterations += 1;
        let largest = inf_norm(&beta);
        if largest > settings.max_abs_beta {
            return Err(CoxError::MonotoneLikelihood(largest));
        }
        cur = next;
    }

    let score_norm = inf_norm(&cur.score);
    let info = DMatrix::from_row_slice(p, p, &cur.info);
    let var_model = spd_inverse(&info)?;
    let var_robust = sandwich(&beta, data, &var_model);
    let se = |v: &DMatrix<f64>| (0..p).map(|k| v[(k, k)].max(0.0).sqrt()).collect::<Vec<_>>();
    Ok(CoxFit {
        se_model: se(&var_model),
        se_robust: se(&var_robust),
        beta,
        var_model,
        var_robust,
        loglik_at_solution: cur.loglik,
        loglik_null,
        iterations,
        converged: score_norm <= settings.score_tol,
        score_norm,
        tied_event_times: data.tied_event_times(),
    })
}

/// Per-subject score residuals at `beta` (n x p), including the risk-set term:
///
/// `U_i = d_i (z_i - zbar(t_i)) - exp(eta_i) sum_{k: t_k <= t_i} dL_k (z_i - zbar(t_k))`
///
/// where `dL_k` is the weighted Breslow hazard increment at event time `t_k`.
pub fn score_residuals(beta: &[f64], data: &SurvivalSample) -> DMatrix<f64> {
    let n = data.len();
    let p = data.n_covariates();
    let eta = data.centred_eta(beta);
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let risk: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();

    // Descending sweep: risk-set means and hazard increments per time group.
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut hazard = vec![0.0; data.groups.len()];
    let mut zbar = vec![vec![0.0; p]; data.groups.len()];
    for (g, group) in data.groups.iter().enumerate() {
        for &j in group {
            let r = data.w[j] * risk[j];
            s0 += r;
            for a in 0..p {
                s1[a] += r * data.zc[(j, a)];
            }
        }
        let events: f64 = group.iter().filter(|&&i| data.status[i]).map(|&i| data.w[i]).sum();
        hazard[g] = events / s0;
        for a in 0..p {
            zbar[g][a] = s1[a] / s0;
        }
    }

    // Ascending sweep: cumulative hazard and hazard-weighted means up to t_i.
    let mut resid = DMatrix::zeros(n, p);
    let mut cum_h = 0.0;
    let mut cum_hz = vec![0.0; p];
    for (g, group) in data.groups.iter().enumerate().rev() {
        cum_h += hazard[g];
        for a in 0..p {
            cum_hz[a] += hazard[g] * zbar[g][a];
        }
        for &i in group {
            for a in 0..p {
                let z = data.zc[(i, a)];
                let mut u = -risk[i] * (z * cum_h - cum_hz[a]);
                if data.status[i] {
                    u += z - zbar[g][a];
                }
                resid[(i, a)] = u;
            }
        }
    }
    resid
}

fn sandwich(beta: &[f64], data: &SurvivalSample, inv_info: &DMatrix<f64>) -> DMatrix<f64> {
    let p = data.n_covariates();
    let resid = score_residuals(beta, data);
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..data.len() {
        let w2 = data.w[i] * data.w[i];
        for a in 0..p {
            for b in 0..p {
                meat[(a, b)] += w2 * resid[(i, a)] * resid[(i, b)];
            }
        }
    }
    inv_info * meat * inv_info
}

/// Lin-Wei robust covariance `I^-1 (sum_i w_i^2 U_i U_i') I^-1` at the fitted coefficients.
pub fn robust_variance(fit: &CoxFit, data: &SurvivalSample) -> Result<DMatrix<f64>, CoxError> {
    let (_, info) = score_and_information(&fit.beta, data);
    let inv = spd_inverse(&info)?;
    Ok(sandwich(&fit.beta, data, &inv))
}
