//! Trial population simulation: covariates, 1:1 allocation, exponential
//! proportional-hazards event times and exponential censoring.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coxph::{self, CoxError, SolverSettings, SurvivalSample};
use crate::stochastic::{exponential_from_uniform, DistributionSpec, UniformSource};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("design has {got} covariate columns but the outcome model declares {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("treatment vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("trial size must be a positive even number, got {0}")]
    OddTrialSize(usize),
    #[error("population covariate `{population}` does not line up with outcome model covariate `{model}`")]
    CovariateOrder { population: String, model: String },
    #[error("duplicate covariate name `{0}`")]
    DuplicateName(String),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("baseline rate must be positive, got {0}")]
    BaselineRate(f64),
    #[error("censoring rate must be non-negative, got {0}")]
    CensoringRate(f64),
    #[error("trial has no subjects")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed trial csv: {0}")]
    Format(String),
    #[error(transparent)]
    Cox(#[from] CoxError),
}

/// One baseline covariate: its marginal law and its effects on log-hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpec {
    pub name: String,
    pub distribution: DistributionSpec,
    #[serde(default)]
    pub prognostic_coef: f64,
    /// Treatment-by-covariate coefficient; zero means not an effect modifier.
    #[serde(default)]
    pub interaction_coef: f64,
}

impl CovariateSpec {
    pub fn new(name: impl Into<String>, distribution: DistributionSpec, prognostic_coef: f64) -> Self {
        Self {
            name: name.into(),
            distribution,
            prognostic_coef,
            interaction_coef: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModelSpec {
    pub treatment_log_hr: f64,
    /// Per day.
    pub baseline_rate: f64,
    /// Per day; 0 disables censoring.
    pub censoring_rate: f64,
    pub covariates: Vec<CovariateSpec>,
}

impl OutcomeModelSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.baseline_rate.is_finite() && self.baseline_rate > 0.0) {
            return Err(SimError::BaselineRate(self.baseline_rate));
        }
        if !(self.censoring_rate.is_finite() && self.censoring_rate >= 0.0) {
            return Err(SimError::CensoringRate(self.censoring_rate));
        }
        check_unique_names(&self.covariates)
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }

    /// Copy with the named covariate's interaction coefficient replaced.
    pub fn with_interaction(&self, name: &str, coef: f64) -> Result<Self, SimError> {
        let mut out = self.clone();
        let cov = out
            .covariates
            .iter_mut()
            .find(|c| c.name == name)
            .ok_or_else(|| SimError::MissingColumn(name.to_string()))?;
        cov.interaction_coef = coef;
        Ok(out)
    }
}

fn check_unique_names(specs: &[CovariateSpec]) -> Result<(), SimError> {
    for (i, a) in specs.iter().enumerate() {
        if specs[..i].iter().any(|b| b.name == a.name) {
            return Err(SimError::DuplicateName(a.name.clone()));
        }
    }
    Ok(())
}

/// Logistic trial-selection model, `logit P(S=1) = theta_age (age - age_center) + theta_iss iss`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionModelSpec {
    pub theta_age: f64,
    pub theta_iss: f64,
    pub age_center: f64,
    #[serde(default = "default_age_column")]
    pub age_column: String,
    #[serde(default = "default_iss_column")]
    pub iss_column: String,
}

fn default_age_column() -> String {
    "age".into()
}

fn default_iss_column() -> String {
    "iss".into()
}

impl Default for SelectionModelSpec {
    fn default() -> Self {
        Self {
            theta_age: 0.1,
            theta_iss: 0.1,
            age_center: 65.0,
            age_column: default_age_column(),
            iss_column: default_iss_column(),
        }
    }
}

impl SelectionModelSpec {
    pub fn probability(&self, age: f64, iss: f64) -> f64 {
        let eta = self.theta_age * (age - self.age_center) + self.theta_iss * iss;
        1.0 / (1.0 + (-eta).exp())
    }
}

/// Individual-level data from one simulated two-arm trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub subject_id: Vec<usize>,
    pub covariate_names: Vec<String>,
    /// n x K raw covariate values.
    pub x: DMatrix<f64>,
    pub trt: Vec<bool>,
    /// Follow-up in days.
    pub time: Vec<f64>,
    /// true = event, false = censored.
    pub status: Vec<bool>,
}

impl TrialData {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, SimError> {
        let k = self
            .column_index(name)
            .ok_or_else(|| SimError::MissingColumn(name.to_string()))?;
        Ok(self.x.column(k).iter().copied().collect())
    }

    /// Columns `names` in the given order, as an n x |names| matrix.
    pub fn select_columns(&self, names: &[String]) -> Result<DMatrix<f64>, SimError> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| SimError::MissingColumn(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DMatrix::from_fn(self.len(), idx.len(), |i, j| self.x[(i, idx[j])]))
    }

    pub fn trt_f64(&self) -> Vec<f64> {
        self.trt.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect()
    }

    /// Cox design with the treatment indicator first, followed by `adjust`.
    pub fn survival_sample(&self, adjust: &[String], weights: Option<&[f64]>) -> Result<SurvivalSample, SimError> {
        let n = self.len();
        let cov = self.select_columns(adjust)?;
        let z = DMatrix::from_fn(n, adjust.len() + 1, |i, j| {
            if j == 0 {
                if self.trt[i] {
                    1.0
                } else {
                    0.0
                }
            } else {
                cov[(i, j - 1)]
            }
        });
        let w = match weights {
            Some(w) => w.to_vec(),
            None => vec![1.0; n],
        };
        Ok(SurvivalSample::new(self.time.clone(), self.status.clone(), z, w)?)
    }

    /// Writes `subject_id,<covariates...>,trt,time,status`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["subject_id".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        header.extend(["trt", "time", "status"].map(String::from));
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.subject_id[i].to_string()];
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            rec.push(u8::from(self.trt[i]).to_string());
            rec.push(self.time[i].to_string());
            rec.push(u8::from(self.status[i]).to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let k = header.len().checked_sub(4).ok_or_else(|| SimError::Format("too few columns".into()))?;
        if header[0] != "subject_id" || header[k + 1] != "trt" || header[k + 2] != "time" || header[k + 3] != "status" {
            return Err(SimError::Format(format!(
                "expected header subject_id,<covariates...>,trt,time,status; got {}",
                header.join(",")
            )));
        }
        let covariate_names = header[1..=k].to_vec();

        let mut subject_id = Vec::new();
        let mut values = Vec::new();
        let mut trt = Vec::new();
        let mut time = Vec::new();
        let mut status = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |j: usize| -> Result<f64, SimError> {
                rec[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| SimError::Format(format!("row {}, column `{}`: {e}", line + 1, header[j])))
            };
            let binary = |j: usize| -> Result<bool, SimError> {
                match rec[j].trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(SimError::Format(format!(
                        "row {}, column `{}`: expected 0 or 1, got `{other}`",
                        line + 1,
                        header[j]
                    ))),
                }
            };
            subject_id.push(
                rec[0]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| SimError::Format(format!("row {}, subject_id: {e}", line + 1)))?,
            );
            for j in 1..=k {
                values.push(field(j)?);
            }
            trt.push(binary(k + 1)?);
            let t = field(k + 2)?;
            if !(t > 0.0 && t.is_finite()) {
                return Err(SimError::Format(format!("row {}: time must be positive, got {t}", line + 1)));
            }
            time.push(t);
            status.push(binary(k + 3)?);
        }
        let n = time.len();
        Ok(Self {
            subject_id,
            covariate_names,
            x: DMatrix::from_row_slice(n, k, &values),
            trt,
            time,
            status,
        })
    }
}

/// Per-study published summary ("Table 1"): covariate means and a marginal log-HR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub n: usize,
    pub covariate_names: Vec<String>,
    pub means: Vec<f64>,
    pub means_treated: Vec<f64>,
    pub means_control: Vec<f64>,
    pub log_hr: f64,
    pub se: f64,
}

impl AggregateSummary {
    pub fn mean_of(&self, name: &str) -> Option<f64> {
        self.covariate_names.iter().position(|n| n == name).map(|k| self.means[k])
    }
}

/// Draws an n x K matrix; column k is i.i.d. from `specs[k]`, filled column by column.
pub fn simulate_covariates<S: UniformSource>(specs: &[CovariateSpec], n: usize, stream: &mut S) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, specs.len());
    for (k, spec) in specs.iter().enumerate() {
        for i in 0..n {
            x[(i, k)] = spec.distribution.sample(stream);
        }
    }
    x
}

/// `LP_i = sum_k b_k x_ik + (b_T + sum_k b_int,k x_ik) trt_i`.
pub fn linear_predictor(x: &DMatrix<f64>, trt: &[bool], model: &OutcomeModelSpec) -> Result<Vec<f64>, SimError> {
    if x.ncols() != model.covariates.len() {
        return Err(SimError::DimensionMismatch {
            expected: model.covariates.len(),
            got: x.ncols(),
        });
    }
    if trt.len() != x.nrows() {
        return Err(SimError::LengthMismatch {
            expected: x.nrows(),
            got: trt.len(),
        });
    }
    let lp = (0..x.nrows())
        .map(|i| {
            let mut prog = 0.0;
            let mut effect = model.treatment_log_hr;
            for (k, c) in model.covariates.iter().enumerate() {
                prog += c.prognostic_coef * x[(i, k)];
                effect += c.interaction_coef * x[(i, k)];
            }
            if trt[i] {
                prog + effect
            } else {
                prog
            }
        })
        .collect();
    Ok(lp)
}

/// Latent times `-ln(U) / (rate e^LP)`, censoring `C ~ Exp(censoring_rate)`.
///
/// All latent uniforms are drawn first, then all censoring times. With a zero
/// censoring rate no censoring draws are made and every status is an event.
pub fn simulate_survival<S: UniformSource>(
    lp: &[f64],
    model: &OutcomeModelSpec,
    stream: &mut S,
) -> Result<(Vec<f64>, Vec<bool>), SimError> {
    model.validate()?;
    let latent: Vec<f64> = lp
        .iter()
        .map(|&eta| exponential_from_uniform(stream.next_uniform(), model.baseline_rate * eta.exp()))
        .collect();
    if model.censoring_rate == 0.0 {
        let n = latent.len();
        return Ok((latent, vec![true; n]));
    }
    let mut time = Vec::with_capacity(lp.len());
    let mut status = Vec::with_capacity(lp.len());
    for t in latent {
        let c = exponential_from_uniform(stream.next_uniform(), model.censoring_rate);
        time.push(t.min(c));
        status.push(t <= c);
    }
    Ok((time, status))
}

/// Outcomes for fixed covariates under `model`; first n/2 rows treated.
pub fn simulate_outcomes<S: UniformSource>(
    x: DMatrix<f64>,
    model: &OutcomeModelSpec,
    stream: &mut S,
) -> Result<TrialData, SimError> {
    let n = x.nrows();
    if n == 0 || n % 2 != 0 {
        return Err(SimError::OddTrialSize(n));
    }
    let trt: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    let lp = linear_predictor(&x, &trt, model)?;
    let (time, status) = simulate_survival(&lp, model, stream)?;
    Ok(TrialData {
        subject_id: (1..=n).collect(),
        covariate_names: model.covariate_names(),
        x,
        trt,
        time,
        status,
    })
}

/// Simulate a 1:1 randomised trial of size `n`.
///
/// Covariates come from the marginals in `population`; the outcome uses the
/// coefficients in `model`. Both must list the same covariates in the same order.
pub fn simulate_trial<S: UniformSource>(
    population: &[CovariateSpec],
    model: &OutcomeModelSpec,
    n: usize,
    stream: &mut S,
) -> Result<TrialData, SimError> {
    if n == 0 || n % 2 != 0 {
        return Err(SimError::OddTrialSize(n));
    }
    model.validate()?;
    check_unique_names(population)?;
    if population.len() != model.covariates.len() {
        return Err(SimError::DimensionMismatch {
            expected: model.covariates.len(),
            got: population.len(),
        });
    }
    for (p, m) in population.iter().zip(&model.covariates) {
        if p.name != m.name {
            return Err(SimError::CovariateOrder {
                population: p.name.clone(),
                model: m.name.clone(),
            });
        }
    }
    let x = simulate_covariates(population, n, stream);
    simulate_outcomes(x, model, stream)
}

/// Bernoulli(expit(theta_age (age - center) + theta_iss iss)) draw per row; true = study A.
pub fn assign_study_membership<S: UniformSource>(
    x: &DMatrix<f64>,
    names: &[String],
    sel: &SelectionModelSpec,
    stream: &mut S,
) -> Result<Vec<bool>, SimError> {
    let find = |col: &str| {
        names
            .iter()
            .position(|n| n == col)
            .ok_or_else(|| SimError::MissingColumn(col.to_string()))
    };
    let age = find(&sel.age_column)?;
    let iss = find(&sel.iss_column)?;
    Ok((0..x.nrows())
        .map(|i| stream.next_uniform() < sel.probability(x[(i, age)], x[(i, iss)]))
        .collect())
}

/// Covariate means overall and per arm, plus an unweighted univariable Cox log-HR.
pub fn summarize_aggregate(trial: &TrialData) -> Result<AggregateSummary, SimError> {
    if trial.is_empty() {
        return Err(SimError::Empty);
    }
    let k = trial.covariate_names.len();
    let mut sum = vec![0.0; k];
    let mut sum_t = vec![0.0; k];
    let mut sum_c = vec![0.0; k];
    let n_t = trial.trt.iter().filter(|&&t| t).count();
    let n_c = trial.len() - n_t;
    for i in 0..trial.len() {
        for j in 0..k {
            let v = trial.x[(i, j)];
            sum[j] += v;
            if trial.trt[i] {
                sum_t[j] += v;
            } else {
                sum_c[j] += v;
            }
        }
    }
    let div = |s: Vec<f64>, d: usize| -> Vec<f64> {
        s.into_iter()
            .map(|v| if d == 0 { f64::NAN } else { v / d as f64 })
            .collect()
    };
    let sample = trial.survival_sample(&[], None)?;
    let fit = coxph::fit_cox(&sample, &SolverSettings::default())?;
    Ok(AggregateSummary {
        n: trial.len(),
        covariate_names: trial.covariate_names.clone(),
        means: div(sum, trial.len()),
        means_treated: div(sum_t, n_t),
        means_control: div(sum_c, n_c),
        log_hr: fit.beta[0],
        se: fit.se_model[0],
    })
}
