mod common;

use anchored_itc::balance::{center_covariates, estimate_weights, OptimizerSettings};
use anchored_itc::cohortsim::{simulate_covariates, simulate_outcomes, simulate_trial, summarize_aggregate, CovariateSpec};
use anchored_itc::estimands::{
    bucher_compare, conditional_effect, hr_ratio, marginal_effect, true_marginal_effect, EffectEstimate, EstimandError,
    Scale,
};
use anchored_itc::harness::config::AGE_INTERACTION;
use anchored_itc::harness::StudySpec;
use anchored_itc::stochastic::{DistributionSpec, RandomStream};
use common::{model, prognostic_population};
use proptest::prelude::*;

fn set(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn equal_weights_reproduce_unweighted_estimate() {
    let pop = prognostic_population(0.74);
    let trial = simulate_trial(&pop, &model(0.53f64.ln(), pop.clone()), 4000, &mut RandomStream::new(51)).unwrap();
    let plain = marginal_effect(&trial, None, "S1").unwrap();
    let weighted = marginal_effect(&trial, Some(&vec![2.5; 4000]), "S1").unwrap();
    assert!((plain.log_hr - weighted.log_hr).abs() < 1e-10);
    assert_eq!(conditional_effect(&trial, &[], "S1").unwrap(), plain);
}

#[test]
fn collapsible_when_covariates_are_not_prognostic() {
    let pop: Vec<CovariateSpec> = prognostic_population(0.74)
        .into_iter()
        .map(|mut c| {
            c.prognostic_coef = 0.0;
            c
        })
        .collect();
    let trial = simulate_trial(&pop, &model(0.53f64.ln(), pop.clone()), 100_000, &mut RandomStream::new(52)).unwrap();
    let m = marginal_effect(&trial, None, "S1").unwrap();
    let c = conditional_effect(&trial, &set(&["plnen", "iss", "refr"]), "S1").unwrap();
    let se = (m.se * m.se + c.se * c.se).sqrt();
    assert!((m.log_hr - c.log_hr).abs() < 3.0 * se);

    let truth = true_marginal_effect(&pop, &model(0.53f64.ln(), pop.clone()), 100_000, &mut RandomStream::new(53)).unwrap();
    assert!((truth - 0.53f64.ln()).abs() < 4.0 * m.se);
}

#[test]
fn marginal_and_conditional_ratios_differ() {
    // Both trials share covariates and uniforms, so their contrast is nearly noise free.
    let b = StudySpec::appendix_b();
    let names = set(&["plnen", "iss", "refr"]);
    let stream = RandomStream::new(54);
    let x = simulate_covariates(&b.covariates, 100_000, &mut stream.clone());
    let mut model_a = b.model();
    model_a.treatment_log_hr = 0.53f64.ln();
    let trial_a = simulate_outcomes(x.clone(), &model_a, &mut stream.substream(1)).unwrap();
    let trial_b = simulate_outcomes(x, &b.model(), &mut stream.substream(1)).unwrap();

    let ma = marginal_effect(&trial_a, None, "S2").unwrap();
    let mb = marginal_effect(&trial_b, None, "S2").unwrap();
    let ca = conditional_effect(&trial_a, &names, "S2").unwrap();
    let cb = conditional_effect(&trial_b, &names, "S2").unwrap();
    assert!(ma.hr() > ca.hr());
    assert!(mb.hr() > cb.hr());
    let marginal_ratio = hr_ratio(&ma, &mb).unwrap();
    let conditional_ratio = hr_ratio(&ca, &cb).unwrap();
    assert!((marginal_ratio - conditional_ratio).abs() > 0.01, "{marginal_ratio} vs {conditional_ratio}");
    assert!((marginal_ratio - 0.53 / 0.55).abs() > 0.01);
    assert!(matches!(bucher_compare(&ma, &cb), Err(EstimandError::ScaleMismatch(..))));
}

fn with_age_interaction(mut spec: StudySpec, coef: f64) -> StudySpec {
    spec.covariates[0].interaction_coef = coef;
    spec
}

/// True marginal log-HRs of A vs. C in S1 and S2 on common random numbers,
/// plus the MAIC estimate of the S2 effect from a study-A sample.
fn population_effects(interaction: f64, seed: u64) -> (f64, f64, EffectEstimate) {
    let a = with_age_interaction(StudySpec::appendix_a(), interaction);
    let b = with_age_interaction(StudySpec::appendix_b(), interaction);
    let stream = RandomStream::new(seed);
    let truth_s1 = true_marginal_effect(&a.covariates, &a.model(), 400_000, &mut stream.substream(1)).unwrap();
    let truth_s2 = true_marginal_effect(&b.covariates, &a.model(), 400_000, &mut stream.substream(1)).unwrap();

    let mut s = stream.substream(2);
    let trial_a = simulate_trial(&a.covariates, &a.model(), 100_000, &mut s).unwrap();
    let trial_b = simulate_trial(&b.covariates, &b.model(), 100_000, &mut s).unwrap();
    let balance = set(&["age", "plnen", "iss", "refr"]);
    let agg = summarize_aggregate(&trial_b).unwrap();
    let targets: Vec<f64> = balance.iter().map(|c| agg.mean_of(c).unwrap()).collect();
    let x = trial_a.select_columns(&balance).unwrap();
    let w = estimate_weights(&center_covariates(&x, &targets, &balance).unwrap(), &OptimizerSettings::default()).unwrap();
    let maic = marginal_effect(&trial_a, Some(&w.weights), "S2").unwrap();
    (truth_s1, truth_s2, maic)
}

#[test]
fn effect_modification_creates_population_specific_marginal_effects() {
    let (s1, s2, maic) = population_effects(AGE_INTERACTION, 55);
    assert!((s1 - s2).abs() > 0.01, "S1 {s1} vs S2 {s2}");
    assert!((maic.log_hr - s2).abs() < 3.0 * maic.se, "MAIC {} vs S2 truth {s2}", maic.log_hr);

    let (s1, s2, maic) = population_effects(0.0, 55);
    assert!((s1 - s2).abs() < 0.003, "S1 {s1} vs S2 {s2}");
    assert!((maic.log_hr - s1).abs() < 3.0 * maic.se);
}

#[test]
fn true_effects_agree_across_populations_without_interaction() {
    let a = StudySpec::appendix_a();
    let b = StudySpec::appendix_b();
    let s = RandomStream::new(56);
    let d1 = true_marginal_effect(&a.covariates, &a.model(), 100_000, &mut s.substream(1)).unwrap();
    let d2 = true_marginal_effect(&b.covariates, &a.model(), 100_000, &mut s.substream(1)).unwrap();
    assert!((d1 - 0.76f64.ln()).abs() < 0.015 + 0.015, "{d1}");
    assert!((d1 - d2).abs() < 0.02);
}

#[test]
fn degenerate_normal_population_needs_large_cohort() {
    let pop = vec![CovariateSpec::new("z", DistributionSpec::normal(0.0, 1.0).unwrap(), 0.0)];
    assert!(true_marginal_effect(&pop, &model(0.0, pop.clone()), 99_998, &mut RandomStream::new(1)).is_err());
}

fn estimate() -> impl Strategy<Value = EffectEstimate> {
    (-3.0..3.0f64, 0.0..1.0f64, prop_oneof![Just(Scale::Marginal), Just(Scale::Conditional)])
        .prop_map(|(l, s, sc)| EffectEstimate::new(l, s, sc, "S2").unwrap())
}

proptest! {
    #[test]
    fn bucher_is_antisymmetric(a in estimate(), b in estimate()) {
        match (bucher_compare(&a, &b), bucher_compare(&b, &a)) {
            (Ok(ab), Ok(ba)) => {
                prop_assert_eq!(ab.log_hr_ab, -ba.log_hr_ab);
                prop_assert_eq!(ab.se, ba.se);
                prop_assert_eq!(ab.log_hr_ab, a.log_hr - b.log_hr);
                prop_assert_eq!(ab.se, (a.se * a.se + b.se * b.se).sqrt());
            }
            (Err(EstimandError::ScaleMismatch(..)), Err(EstimandError::ScaleMismatch(..))) => {
                prop_assert_ne!(a.scale, b.scale);
            }
            _ => prop_assert!(false, "asymmetric outcome"),
        }
    }

    #[test]
    fn mixed_scales_always_rejected(l1 in -2.0..2.0f64, l2 in -2.0..2.0f64) {
        let m = EffectEstimate::new(l1, 0.1, Scale::Marginal, "S2").unwrap();
        let c = EffectEstimate::new(l2, 0.1, Scale::Conditional, "S2").unwrap();
        prop_assert!(matches!(hr_ratio(&m, &c), Err(EstimandError::ScaleMismatch(..))));
        prop_assert!(matches!(bucher_compare(&c, &m), Err(EstimandError::ScaleMismatch(..))));
    }
}
