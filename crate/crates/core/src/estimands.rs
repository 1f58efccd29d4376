//! Marginal and conditional treatment effects and the anchored (Bucher)
//! indirect comparison.
//!
//! Hazard ratios are non-collapsible, so a treatment coefficient from a
//! covariate-adjusted Cox model estimates a different quantity than the one
//! from a univariable (possibly weighted) model. Every [`EffectEstimate`]
//! carries its [`Scale`], and combining estimates on different scales is an
//! error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohortsim::{simulate_trial, CovariateSpec, OutcomeModelSpec, SimError, TrialData};
use crate::coxph::{fit_cox, CoxError, CoxFit, SolverSettings};
use crate::stochastic::RandomStream;

/// Two-sided 95% normal quantile.
pub const Z_975: f64 = 1.959964;

/// Smallest cohort accepted for a simulation-based true marginal effect.
pub const MIN_TRUTH_COHORT: usize = 100_000;

#[derive(Debug, Error)]
pub enum EstimandError {
    #[error("cannot combine a {0} estimate with a {1} estimate")]
    ScaleMismatch(Scale, Scale),
    #[error("standard error must be finite and non-negative, got {0}")]
    BadSe(f64),
    #[error("arm `{0}` has no events")]
    NoEventsInArm(&'static str),
    #[error("weights: expected {expected}, got {got}")]
    WeightLength { expected: usize, got: usize },
    #[error("Cox fit did not converge (score norm {0:.3e})")]
    NotConverged(f64),
    #[error("true marginal effect needs at least {MIN_TRUTH_COHORT} subjects, got {0}")]
    CohortTooSmall(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Cox(#[from] CoxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Marginal,
    Conditional,
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scale::Marginal => f.write_str("marginal"),
            Scale::Conditional => f.write_str("conditional"),
        }
    }
}

/// A log hazard ratio on a stated scale for a stated population.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(from = "EffectEstimateJson")]
pub struct EffectEstimate {
    pub log_hr: f64,
    pub se: f64,
    pub scale: Scale,
    pub population: String,
    pub adjustment_set: Vec<String>,
}

impl EffectEstimate {
    /// `se` may be 0 for known (true) effects.
    pub fn new(log_hr: f64, se: f64, scale: Scale, population: impl Into<String>) -> Result<Self, EstimandError> {
        if !(se.is_finite() && se >= 0.0) {
            return Err(EstimandError::BadSe(se));
        }
        Ok(Self {
            log_hr,
            se,
            scale,
            population: population.into(),
            adjustment_set: Vec::new(),
        })
    }

    pub fn hr(&self) -> f64 {
        self.log_hr.exp()
    }

    pub fn ci95(&self) -> (f64, f64) {
        (self.log_hr - Z_975 * self.se, self.log_hr + Z_975 * self.se)
    }
}

#[derive(Serialize, Deserialize)]
struct EffectEstimateJson {
    log_hr: f64,
    #[serde(default)]
    hr: f64,
    se: f64,
    #[serde(default)]
    ci95_lo: f64,
    #[serde(default)]
    ci95_hi: f64,
    scale: Scale,
    population: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    adjustment_set: Vec<String>,
}

impl From<EffectEstimateJson> for EffectEstimate {
    fn from(j: EffectEstimateJson) -> Self {
        Self {
            log_hr: j.log_hr,
            se: j.se,
            scale: j.scale,
            population: j.population,
            adjustment_set: j.adjustment_set,
        }
    }
}

impl Serialize for EffectEstimate {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let (lo, hi) = self.ci95();
        EffectEstimateJson {
            log_hr: self.log_hr,
            hr: self.hr(),
            se: self.se,
            ci95_lo: lo,
            ci95_hi: hi,
            scale: self.scale,
            population: self.population.clone(),
            adjustment_set: self.adjustment_set.clone(),
        }
        .serialize(serializer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndirectComparison {
    pub log_hr_ab: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub ac: EffectEstimate,
    pub bc: EffectEstimate,
}

impl IndirectComparison {
    pub fn hr(&self) -> f64 {
        self.log_hr_ab.exp()
    }
}

fn check_events_per_arm(trial: &TrialData) -> Result<(), EstimandError> {
    let events = |arm: bool| trial.trt.iter().zip(&trial.status).filter(|(t, s)| **t == arm && **s).count();
    if events(true) == 0 {
        return Err(EstimandError::NoEventsInArm("treated"));
    }
    if events(false) == 0 {
        return Err(EstimandError::NoEventsInArm("control"));
    }
    Ok(())
}

fn converged(fit: CoxFit) -> Result<CoxFit, EstimandError> {
    if fit.converged {
        Ok(fit)
    } else {
        Err(EstimandError::NotConverged(fit.score_norm))
    }
}

/// Univariable Cox fit on treatment, optionally weighted.
///
/// Weighted fits report the robust sandwich SE, unweighted fits the
/// model-based SE.
pub fn marginal_effect(
    trial: &TrialData,
    weights: Option<&[f64]>,
    population: &str,
) -> Result<EffectEstimate, EstimandError> {
    check_events_per_arm(trial)?;
    if let Some(w) = weights {
        if w.len() != trial.len() {
            return Err(EstimandError::WeightLength {
                expected: trial.len(),
                got: w.len(),
            });
        }
    }
    let sample = trial.survival_sample(&[], weights)?;
    let fit = converged(fit_cox(&sample, &SolverSettings::default())?)?;
    let se = if weights.is_some() {
        fit.se_robust[0]
    } else {
        fit.se_model[0]
    };
    EffectEstimate::new(fit.beta[0], se, Scale::Marginal, population)
}

/// Treatment coefficient from a Cox fit on treatment plus `adjustment_set`.
///
/// With an empty adjustment set the model is the univariable one, and the
/// result is labelled marginal.
pub fn conditional_effect(
    trial: &TrialData,
    adjustment_set: &[String],
    population: &str,
) -> Result<EffectEstimate, EstimandError> {
    if adjustment_set.is_empty() {
        return marginal_effect(trial, None, population);
    }
    check_events_per_arm(trial)?;
    let sample = trial.survival_sample(adjustment_set, None)?;
    let fit = converged(fit_cox(&sample, &SolverSettings::default())?)?;
    let mut est = EffectEstimate::new(fit.beta[0], fit.se_model[0], Scale::Conditional, population)?;
    est.adjustment_set = adjustment_set.to_vec();
    Ok(est)
}

/// Simulation-based true marginal log-HR: the univariable Cox coefficient on
/// a cohort of `n_large` subjects drawn from `population` under `model`.
pub fn true_marginal_effect(
    population: &[CovariateSpec],
    model: &OutcomeModelSpec,
    n_large: usize,
    stream: &mut RandomStream,
) -> Result<f64, EstimandError> {
    if n_large < MIN_TRUTH_COHORT {
        return Err(EstimandError::CohortTooSmall(n_large));
    }
    let trial = simulate_trial(population, model, n_large, stream)?;
    Ok(marginal_effect(&trial, None, "truth")?.log_hr)
}

fn same_scale(a: &EffectEstimate, b: &EffectEstimate) -> Result<(), EstimandError> {
    if a.scale != b.scale {
        return Err(EstimandError::ScaleMismatch(a.scale, b.scale));
    }
    Ok(())
}

/// `d_AB = d_AC - d_BC`, `se^2 = se_AC^2 + se_BC^2`.
pub fn bucher_compare(ac: &EffectEstimate, bc: &EffectEstimate) -> Result<IndirectComparison, EstimandError> {
    same_scale(ac, bc)?;
    let log_hr_ab = ac.log_hr - bc.log_hr;
    let se = (ac.se * ac.se + bc.se * bc.se).sqrt();
    Ok(IndirectComparison {
        log_hr_ab,
        se,
        ci95: (log_hr_ab - Z_975 * se, log_hr_ab + Z_975 * se),
        ac: ac.clone(),
        bc: bc.clone(),
    })
}

/// `exp(d_AC) / exp(d_BC)`.
pub fn hr_ratio(ac: &EffectEstimate, bc: &EffectEstimate) -> Result<f64, EstimandError> {
    same_scale(ac, bc)?;
    Ok((ac.log_hr - bc.log_hr).exp())
}
