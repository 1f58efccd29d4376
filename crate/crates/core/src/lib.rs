//! Anchored indirect treatment comparison with time-to-event outcomes.
//!
//! Two randomised trials share a common comparator C: an IPD trial of A vs. C
//! and an aggregate-data trial of B vs. C. This crate simulates both trials
//! under a proportional-hazards data-generating process, reweights the IPD
//! trial to the aggregate covariate means (matching-adjusted indirect
//! comparison), fits weighted Cox models with robust variance and combines
//! the results with the Bucher method.
//!
//! Modules, bottom-up:
//!
//! - [`stochastic`]: seedable random streams and variates
//! - [`cohortsim`]: trial simulation and the IPD CSV format
//! - [`coxph`]: weighted Cox regression with robust variance
//! - [`balance`]: MAIC weights by moment matching
//! - [`estimands`]: marginal/conditional effects and indirect comparison
//! - [`harness`]: configuration, scenario pipeline and appendix replication

pub mod balance;
pub mod cohortsim;
pub mod coxph;
pub mod estimands;
pub mod harness;
mod numeric;
pub mod stochastic;

pub use balance::{estimate_weights, BalanceProblem, MaicWeights, OptimizerSettings};
pub use cohortsim::{AggregateSummary, CovariateSpec, OutcomeModelSpec, TrialData};
pub use coxph::{fit_cox, CoxFit, SolverSettings, SurvivalSample};
pub use estimands::{bucher_compare, EffectEstimate, IndirectComparison, Scale};
pub use stochastic::{seed_stream, DistributionSpec, RandomStream};
