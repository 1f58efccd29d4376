//! Scenario configuration: a single JSON document with the appendix
//! parameterisation as defaults.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohortsim::{CovariateSpec, OutcomeModelSpec};
use crate::stochastic::DistributionSpec;

pub const DEFAULT_SEED: u64 = 555;
pub const DEFAULT_N: usize = 100_000;

pub const B_PLNEN: f64 = 1.0682;
pub const B_ISS: f64 = -0.6651;
pub const B_REFR: f64 = 0.0825;
pub const BASELINE_RATE: f64 = 0.5 / 365.0;
pub const CENSORING_RATE: f64 = 0.1 / 365.0;
pub const HR_A: f64 = 0.53;
pub const HR_B: f64 = 0.55;
pub const AGE_SD: f64 = 5.0;
pub const AGE_INTERACTION: f64 = 0.005;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// One trial: its population and outcome-generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub label: String,
    pub treatment_log_hr: f64,
    #[serde(default = "default_baseline_rate")]
    pub baseline_rate: f64,
    #[serde(default = "default_censoring_rate")]
    pub censoring_rate: f64,
    pub covariates: Vec<CovariateSpec>,
}

fn default_baseline_rate() -> f64 {
    BASELINE_RATE
}

fn default_censoring_rate() -> f64 {
    CENSORING_RATE
}

impl StudySpec {
    pub fn model(&self) -> OutcomeModelSpec {
        OutcomeModelSpec {
            treatment_log_hr: self.treatment_log_hr,
            baseline_rate: self.baseline_rate,
            censoring_rate: self.censoring_rate,
            covariates: self.covariates.clone(),
        }
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }

    /// Study A of the appendix (S=1): A vs. C.
    pub fn appendix_a() -> Self {
        Self::appendix("S1", HR_A, 69.3, 0.74)
    }

    /// Study B of the appendix (S=2): B vs. C.
    pub fn appendix_b() -> Self {
        Self::appendix("S2", HR_B, 62.1, 0.77)
    }

    fn appendix(label: &str, hr: f64, age_mean: f64, iss_p: f64) -> Self {
        let d = |r: Result<DistributionSpec, _>| r.expect("appendix parameters are valid");
        Self {
            label: label.into(),
            treatment_log_hr: hr.ln(),
            baseline_rate: BASELINE_RATE,
            censoring_rate: CENSORING_RATE,
            covariates: vec![
                CovariateSpec::new("age", d(DistributionSpec::normal(age_mean, AGE_SD)), 0.0),
                CovariateSpec::new("plnen", d(DistributionSpec::poisson(3.4)), B_PLNEN),
                CovariateSpec::new("iss", d(DistributionSpec::bernoulli(iss_p)), B_ISS),
                CovariateSpec::new("refr", d(DistributionSpec::bernoulli(0.92)), B_REFR),
            ],
        }
    }
}

/// Treatment-by-covariate term added to the outcome model of both studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interaction {
    pub covariate: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    /// Subjects per study; split 1:1 between arms.
    pub n: usize,
    /// IPD study (A vs. C), reweighted towards study B.
    pub study_a: StudySpec,
    /// ALD study (B vs. C), only its aggregate summary is used for weighting.
    pub study_b: StudySpec,
    pub balance_set: Vec<String>,
    /// Covariates for the conditional (adjusted) Cox fits.
    pub adjustment_set: Vec<String>,
    pub interaction: Option<Interaction>,
    pub outputs: Outputs,
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario-1".into(),
            seed: DEFAULT_SEED,
            n: DEFAULT_N,
            study_a: StudySpec::appendix_a(),
            study_b: StudySpec::appendix_b(),
            balance_set: names(&["plnen", "iss", "refr"]),
            adjustment_set: names(&["plnen", "iss", "refr"]),
            interaction: None,
            outputs: Outputs::default(),
        }
    }
}

impl ScenarioConfig {
    /// Appendix scenarios 1-4.
    pub fn appendix_scenario(index: u8) -> Self {
        let base = Self::default();
        let age = Some(Interaction {
            covariate: "age".into(),
            coefficient: AGE_INTERACTION,
        });
        match index {
            1 => base,
            2 => Self {
                name: "scenario-2".into(),
                balance_set: names(&["plnen"]),
                ..base
            },
            3 => Self {
                name: "scenario-3".into(),
                balance_set: names(&["plnen", "iss", "refr", "age"]),
                interaction: age,
                ..base
            },
            4 => Self {
                name: "scenario-4".into(),
                balance_set: names(&["age"]),
                interaction: age,
                ..base
            },
            _ => panic!("appendix scenarios are numbered 1 to 4"),
        }
    }

    /// Outcome model of a study with the configured interaction applied.
    pub fn model_for(&self, study: &StudySpec) -> OutcomeModelSpec {
        let model = study.model();
        match &self.interaction {
            Some(i) => model
                .with_interaction(&i.covariate, i.coefficient)
                .expect("validated config declares the interaction covariate"),
            None => model,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 2 || self.n % 2 != 0 {
            return Err(invalid("n", format!("must be a positive even number, got {}", self.n)));
        }
        for (field, study) in [("study_a", &self.study_a), ("study_b", &self.study_b)] {
            study
                .model()
                .validate()
                .map_err(|e| invalid(field, e.to_string()))?;
        }
        let a = self.study_a.covariate_names();
        let b = self.study_b.covariate_names();
        if a != b {
            return Err(invalid(
                "study_b.covariates",
                format!("must declare the same covariates as study_a in the same order ({a:?} vs {b:?})"),
            ));
        }
        if self.balance_set.is_empty() {
            return Err(invalid("balance_set", "must name at least one covariate"));
        }
        for (field, set) in [("balance_set", &self.balance_set), ("adjustment_set", &self.adjustment_set)] {
            for (i, name) in set.iter().enumerate() {
                if !a.contains(name) {
                    return Err(invalid(format!("{field}[{i}]"), format!("covariate `{name}` is not declared")));
                }
                if set[..i].contains(name) {
                    return Err(invalid(format!("{field}[{i}]"), format!("covariate `{name}` listed twice")));
                }
            }
        }
        if let Some(inter) = &self.interaction {
            if !a.contains(&inter.covariate) {
                return Err(invalid(
                    "interaction.covariate",
                    format!("covariate `{}` is not declared", inter.covariate),
                ));
            }
            if !inter.coefficient.is_finite() {
                return Err(invalid("interaction.coefficient", "must be finite"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Parse and validate a JSON config; absent fields take appendix defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let text = if text.trim().is_empty() { "{}" } else { text };
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}
