use std::process::Command;

use anchored_itc::harness::{parse_config, replicate_appendix, run_scenario, simulate_studies, ScenarioConfig};

const BIN: &str = env!("CARGO_BIN_EXE_anchored-itc");

#[test]
fn same_seed_gives_byte_identical_reports() {
    let a = replicate_appendix(555).unwrap();
    let b = replicate_appendix(555).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_tsv(), b.to_tsv());
}

#[test]
fn scenario_is_deterministic_and_consistent() {
    let cfg = parse_config(r#"{"n": 20000, "seed": 9}"#).unwrap();
    let r = run_scenario(&cfg).unwrap();
    assert_eq!(r, run_scenario(&cfg).unwrap());
    assert_eq!(r.bucher.log_hr_ab, r.maic_ac_s2.log_hr - r.marginal_bc_s2.log_hr);
    assert!((r.hr_ratio_marginal - r.bucher.hr()).abs() < 1e-15);
    assert!((r.hr_ratio_conditional - (r.conditional_ac_s1.log_hr - r.conditional_bc_s2.log_hr).exp()).abs() < 1e-15);
    assert_eq!(r.ess, r.weights.ess);
}

#[test]
fn no_censoring_runs_end_to_end() {
    let cfg = parse_config(
        r#"{"n": 20000,
            "study_a": {"label": "S1", "treatment_log_hr": -0.6348782724359695, "censoring_rate": 0,
                        "covariates": [{"name": "plnen", "distribution": {"kind": "poisson", "lambda": 3.4}, "prognostic_coef": 1.0682},
                                       {"name": "iss", "distribution": {"kind": "bernoulli", "p": 0.74}, "prognostic_coef": -0.6651}]},
            "study_b": {"label": "S2", "treatment_log_hr": -0.5978370007556204, "censoring_rate": 0,
                        "covariates": [{"name": "plnen", "distribution": {"kind": "poisson", "lambda": 3.4}, "prognostic_coef": 1.0682},
                                       {"name": "iss", "distribution": {"kind": "bernoulli", "p": 0.77}, "prognostic_coef": -0.6651}]},
            "balance_set": ["plnen", "iss"], "adjustment_set": ["plnen", "iss"]}"#,
    )
    .unwrap();
    let data = simulate_studies(&cfg).unwrap();
    assert!(data.a.status.iter().chain(&data.b.status).all(|&s| s));
    let r = run_scenario(&cfg).unwrap();
    assert!(r.balance.max_gap() < 1e-6);
}

#[test]
fn ess_shrinks_as_more_covariates_are_balanced() {
    let report = replicate_appendix(555).unwrap();
    let s = &report.scenarios;
    assert!(s[1].ess >= s[0].ess);
    assert!(s[0].ess >= s[2].ess);
    for r in &s[..2] {
        let se = (r.maic_ac_s2.se.powi(2) + r.marginal_ac_s1.se.powi(2)).sqrt();
        assert!((r.maic_ac_s2.log_hr - r.marginal_ac_s1.log_hr).abs() < 3.0 * se, "{}", r.name);
    }
}

#[test]
fn config_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig::appendix_scenario(4);
    let path = dir.path().join("s4.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let back = parse_config(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, cfg);
}

fn run(args: &[&str]) -> std::process::Output {
    let out = Command::new(BIN).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn cli_simulate_weights_fit_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{"n": 4000, "seed": 3}"#).unwrap();
    run(&["simulate", "--config", d.join("cfg.json").to_str().unwrap(), "--out", d.to_str().unwrap()]);
    for f in ["study_a.csv", "study_b.csv", "targets.json", "aggregate_b.json"] {
        assert!(d.join(f).exists(), "{f}");
    }

    let out = run(&[
        "weights",
        "--ipd",
        d.join("study_a.csv").to_str().unwrap(),
        "--targets",
        d.join("targets.json").to_str().unwrap(),
        "--balance-set",
        "plnen,iss,refr",
        "--out",
        d.join("w.csv").to_str().unwrap(),
    ]);
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.starts_with("covariate\tipd_mean\tweighted_mean\ttarget_mean\tabs_gap\n"));
    assert!(report.lines().last().unwrap().starts_with("ESS\t"));

    let data = d.join("study_a.csv");
    let fit = |extra: &[&str]| {
        let mut args = vec!["fit", "--data", data.to_str().unwrap()];
        args.extend_from_slice(extra);
        let out = run(&args);
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()
    };
    let weighted = fit(&["--weights", d.join("w.csv").to_str().unwrap(), "--population", "S2"]);
    assert_eq!(weighted["scale"], "marginal");
    assert_eq!(weighted["population"], "S2");
    let adjusted = fit(&["--adjust", "plnen,iss,refr"]);
    assert_eq!(adjusted["scale"], "conditional");
    assert!(adjusted["hr"].as_f64().unwrap() < weighted["hr"].as_f64().unwrap());

    let both = Command::new(BIN)
        .args(["fit", "--data", d.join("study_a.csv").to_str().unwrap(), "--adjust", "iss"])
        .args(["--weights", d.join("w.csv").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(both.status.code(), Some(2));
}

#[test]
fn cli_rejects_bad_config_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"balance_set": ["plnen", "ecog"]}"#).unwrap();
    let out = Command::new(BIN).args(["scenario", "--config", p.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("balance_set[1]"));
}
