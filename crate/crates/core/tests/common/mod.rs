#![allow(dead_code)]

use anchored_itc::cohortsim::{CovariateSpec, OutcomeModelSpec, TrialData};
use anchored_itc::coxph::SurvivalSample;
use anchored_itc::stochastic::{DistributionSpec, RandomStream};
use nalgebra::DMatrix;

/// One-sample Kolmogorov-Smirnov statistic against `cdf`.
pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic KS critical value at level alpha for effective sample size `n_eff`.
pub fn ks_critical(alpha: f64, n_eff: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / n_eff.sqrt()
}

pub fn appendix_coefs() -> [(&'static str, f64); 3] {
    [("plnen", 1.0682), ("iss", -0.6651), ("refr", 0.0825)]
}

/// Appendix population without Age.
pub fn prognostic_population(iss_p: f64) -> Vec<CovariateSpec> {
    vec![
        CovariateSpec::new("plnen", DistributionSpec::poisson(3.4).unwrap(), 1.0682),
        CovariateSpec::new("iss", DistributionSpec::bernoulli(iss_p).unwrap(), -0.6651),
        CovariateSpec::new("refr", DistributionSpec::bernoulli(0.92).unwrap(), 0.0825),
    ]
}

pub fn model(log_hr: f64, covariates: Vec<CovariateSpec>) -> OutcomeModelSpec {
    OutcomeModelSpec {
        treatment_log_hr: log_hr,
        baseline_rate: 0.5 / 365.0,
        censoring_rate: 0.1 / 365.0,
        covariates,
    }
}

/// Random small Cox instance: distinct times, mixed status, p covariates, positive weights.
pub fn random_sample(stream: &mut RandomStream, n: usize, p: usize, weighted: bool) -> SurvivalSample {
    let time: Vec<f64> = (0..n).map(|_| 0.1 + 10.0 * stream.uniform()).collect();
    let mut status: Vec<bool> = (0..n).map(|_| stream.uniform() < 0.7).collect();
    status[0] = true;
    let z = DMatrix::from_fn(n, p, |_, _| 2.0 * stream.uniform() - 1.0);
    let w: Vec<f64> = (0..n)
        .map(|_| if weighted { 0.2 + 2.0 * stream.uniform() } else { 1.0 })
        .collect();
    SurvivalSample::new(time, status, z, w).unwrap()
}

pub fn flip_treatment(trial: &TrialData) -> TrialData {
    let mut t = trial.clone();
    t.trt.iter_mut().for_each(|v| *v = !*v);
    t
}
