//! The simulate -> summarise -> centre -> weight -> fit -> compare pipeline.

use serde::Serialize;
use thiserror::Error;

use super::config::{ConfigError, ScenarioConfig};
use crate::balance::{balance_report, center_covariates, estimate_weights, BalanceReport, MaicWeights, OptimizerSettings};
use crate::cohortsim::{simulate_covariates, simulate_outcomes, summarize_aggregate, AggregateSummary, TrialData};
use crate::estimands::{
    bucher_compare, conditional_effect, hr_ratio, marginal_effect, EffectEstimate, IndirectComparison,
};
use crate::stochastic::RandomStream;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} failed")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxError,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, HarnessError>;
}

impl<T, E: Into<BoxError>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, HarnessError> {
        self.map_err(|e| HarnessError::Stage {
            stage,
            source: e.into(),
        })
    }
}

/// The two simulated trials of a scenario.
#[derive(Debug, Clone)]
pub struct StudyPair {
    pub a: TrialData,
    pub b: TrialData,
}

/// Simulate both studies from `cfg.seed`: covariates of A, covariates of B,
/// then outcomes of A, outcomes of B, all from one stream.
pub fn simulate_studies(cfg: &ScenarioConfig) -> Result<StudyPair, HarnessError> {
    cfg.validate()?;
    let mut stream = RandomStream::new(cfg.seed);
    let xa = simulate_covariates(&cfg.study_a.covariates, cfg.n, &mut stream);
    let xb = simulate_covariates(&cfg.study_b.covariates, cfg.n, &mut stream);
    let a = simulate_outcomes(xa, &cfg.model_for(&cfg.study_a), &mut stream).stage("simulate study A")?;
    let b = simulate_outcomes(xb, &cfg.model_for(&cfg.study_b), &mut stream).stage("simulate study B")?;
    Ok(StudyPair { a, b })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSummary {
    pub alpha: Vec<f64>,
    pub ess: f64,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
}

impl From<&MaicWeights> for WeightSummary {
    fn from(w: &MaicWeights) -> Self {
        Self {
            alpha: w.alpha.clone(),
            ess: w.ess,
            converged: w.converged,
            grad_norm: w.grad_norm,
            iterations: w.iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub name: String,
    pub seed: u64,
    pub n: usize,
    pub balance_set: Vec<String>,
    pub marginal_ac_s1: EffectEstimate,
    pub conditional_ac_s1: EffectEstimate,
    pub marginal_bc_s2: EffectEstimate,
    pub conditional_bc_s2: EffectEstimate,
    pub maic_ac_s2: EffectEstimate,
    pub ess: f64,
    pub hr_ratio_marginal: f64,
    pub hr_ratio_conditional: f64,
    pub bucher: IndirectComparison,
    pub aggregate_b: AggregateSummary,
    pub weights: WeightSummary,
    pub balance: BalanceReport,
}

/// Full analysis of an already simulated pair of studies.
pub fn analyze_scenario(cfg: &ScenarioConfig, data: &StudyPair) -> Result<(ScenarioResult, MaicWeights), HarnessError> {
    cfg.validate()?;
    let label_a = cfg.study_a.label.as_str();
    let label_b = cfg.study_b.label.as_str();

    let aggregate_b = summarize_aggregate(&data.b).stage("summarise study B")?;

    let marginal_ac_s1 = marginal_effect(&data.a, None, label_a).stage("marginal A vs. C")?;
    let conditional_ac_s1 = conditional_effect(&data.a, &cfg.adjustment_set, label_a).stage("conditional A vs. C")?;
    let marginal_bc_s2 = marginal_effect(&data.b, None, label_b).stage("marginal B vs. C")?;
    let conditional_bc_s2 = conditional_effect(&data.b, &cfg.adjustment_set, label_b).stage("conditional B vs. C")?;

    let targets: Vec<f64> = cfg
        .balance_set
        .iter()
        .map(|c| aggregate_b.mean_of(c).expect("validated balance covariate"))
        .collect();
    let x_ipd = data.a.select_columns(&cfg.balance_set).stage("centre covariates")?;
    let problem = center_covariates(&x_ipd, &targets, &cfg.balance_set).stage("centre covariates")?;
    let weights = estimate_weights(&problem, &OptimizerSettings::default()).stage("estimate weights")?;
    if !weights.converged {
        return Err(HarnessError::Stage {
            stage: "estimate weights",
            source: format!("BFGS stopped without converging (gradient norm {:.3e})", weights.grad_norm).into(),
        });
    }
    let balance = balance_report(&x_ipd, &weights.weights, &targets, &cfg.balance_set).stage("balance report")?;

    let maic_ac_s2 = marginal_effect(&data.a, Some(&weights.weights), label_b).stage("weighted A vs. C")?;
    let hr_ratio_marginal = hr_ratio(&maic_ac_s2, &marginal_bc_s2).stage("compare")?;
    let hr_ratio_conditional = hr_ratio(&conditional_ac_s1, &conditional_bc_s2).stage("compare")?;
    let bucher = bucher_compare(&maic_ac_s2, &marginal_bc_s2).stage("compare")?;

    let result = ScenarioResult {
        name: cfg.name.clone(),
        seed: cfg.seed,
        n: cfg.n,
        balance_set: cfg.balance_set.clone(),
        marginal_ac_s1,
        conditional_ac_s1,
        marginal_bc_s2,
        conditional_bc_s2,
        maic_ac_s2,
        ess: weights.ess,
        hr_ratio_marginal,
        hr_ratio_conditional,
        bucher,
        aggregate_b,
        weights: WeightSummary::from(&weights),
        balance,
    };
    Ok((result, weights))
}

/// Simulate and analyse one scenario. Deterministic given the config.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    let data = simulate_studies(cfg)?;
    Ok(analyze_scenario(cfg, &data)?.0)
}
