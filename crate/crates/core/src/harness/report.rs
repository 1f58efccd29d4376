//! Replication of the published appendix: all four MAIC scenarios, the
//! marginal and conditional fits, and the simulation-based true marginal
//! effects, each checked against a tolerance band around the printed value.

use std::fmt::Write as _;

use serde::Serialize;

use super::config::{ScenarioConfig, StudySpec, DEFAULT_N, HR_A, HR_B};
use super::scenario::{analyze_scenario, simulate_studies, HarnessError, ScenarioResult, StageExt};
use crate::estimands::true_marginal_effect;
use crate::stochastic::RandomStream;

pub const REPORT_HEADER: &str = "Appendix replication. Published values come from a single R random stream \
that cannot be reproduced here; each row passes when this implementation's value falls inside the \
tolerance band, which is sized to absorb Monte Carlo variation at n = 100000 per study.";

/// Substream index used for the true marginal effect cohorts.
const TRUTH_SUBSTREAM: u64 = 0x7275_7468;

/// Published appendix outputs.
pub mod published {
    pub const MARGINAL_AC_S1: f64 = 0.7575748;
    pub const MARGINAL_BC_S2: f64 = 0.7697989;
    pub const CONDITIONAL_AC_S1: f64 = 0.5294677;
    pub const CONDITIONAL_BC_S2: f64 = 0.5500948;
    pub const MAIC_SCENARIO_1: f64 = 0.7575572;
    pub const MAIC_SCENARIO_2: f64 = 0.7575059;
    pub const RATIO_MARGINAL: f64 = 0.9840976;
    pub const MAIC_SCENARIO_3: f64 = 0.8765244;
    pub const MAIC_SCENARIO_4: f64 = 0.8769922;
    pub const TRUE_MARGINAL_HR: f64 = 0.76;
}

/// Inclusive bounds; a missing side is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerance {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Tolerance {
    pub fn between(lo: f64, hi: f64) -> Self {
        Self {
            lo: Some(lo),
            hi: Some(hi),
        }
    }

    pub fn at_most(hi: f64) -> Self {
        Self { lo: None, hi: Some(hi) }
    }

    pub fn at_least(lo: f64) -> Self {
        Self { lo: Some(lo), hi: None }
    }

    pub fn contains(&self, v: f64) -> bool {
        v.is_finite() && self.lo.is_none_or(|lo| v >= lo) && self.hi.is_none_or(|hi| v <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub criterion: u8,
    pub quantity: String,
    pub ours: f64,
    pub paper: Option<f64>,
    pub tol: Tolerance,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueEffects {
    pub n: usize,
    /// Log-HR, A vs. C, in the study A population.
    pub delta_ac_s1: f64,
    /// Log-HR, A vs. C, in the study B population.
    pub delta_ac_s2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppendixReport {
    pub header: String,
    pub seed: u64,
    pub n: usize,
    pub rows: Vec<ReportRow>,
    pub all_pass: bool,
    pub truths: TrueEffects,
    pub scenarios: Vec<ScenarioResult>,
}

impl AppendixReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.header);
        let _ = writeln!(out, "# seed={} n={}", self.seed, self.n);
        out.push_str("criterion\tquantity\tours\tpaper\tlo\thi\tpass\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.7}\t{}\t{}\t{}\t{}",
                r.criterion,
                r.quantity,
                r.ours,
                opt(r.paper),
                opt(r.tol.lo),
                opt(r.tol.hi),
                if r.pass { "PASS" } else { "FAIL" }
            );
        }
        out
    }

    pub fn row(&self, quantity: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }
}

fn row(criterion: u8, quantity: &str, ours: f64, paper: Option<f64>, tol: Tolerance) -> ReportRow {
    ReportRow {
        criterion,
        quantity: quantity.into(),
        ours,
        paper,
        pass: tol.contains(ours),
        tol,
    }
}

/// True marginal log-HRs for A vs. C in both populations.
///
/// Both cohorts share one substream, so the difference between them reflects
/// the populations rather than independent Monte Carlo noise.
pub fn true_effects(seed: u64, n: usize) -> Result<TrueEffects, HarnessError> {
    let study_a = StudySpec::appendix_a();
    let study_b = StudySpec::appendix_b();
    let model_a = study_a.model();
    let base = RandomStream::new(seed);
    let delta_ac_s1 =
        true_marginal_effect(&study_a.covariates, &model_a, n, &mut base.substream(TRUTH_SUBSTREAM)).stage("true effect S1")?;
    let delta_ac_s2 =
        true_marginal_effect(&study_b.covariates, &model_a, n, &mut base.substream(TRUTH_SUBSTREAM)).stage("true effect S2")?;
    Ok(TrueEffects {
        n,
        delta_ac_s1,
        delta_ac_s2,
    })
}

/// Run scenarios 1-4 and the true-effect cohorts for `seed`.
///
/// Scenarios 1 and 2 share one simulated dataset (no interaction), as do 3 and 4.
pub fn replicate_appendix(seed: u64) -> Result<AppendixReport, HarnessError> {
    let cfgs: Vec<ScenarioConfig> = (1..=4)
        .map(|i| ScenarioConfig {
            seed,
            ..ScenarioConfig::appendix_scenario(i)
        })
        .collect();

    let (base, inter, truths) = std::thread::scope(|s| {
        let base = s.spawn(|| simulate_studies(&cfgs[0]));
        let inter = s.spawn(|| simulate_studies(&cfgs[2]));
        let truths = s.spawn(|| true_effects(seed, DEFAULT_N));
        (
            base.join().expect("simulation thread"),
            inter.join().expect("simulation thread"),
            truths.join().expect("truth thread"),
        )
    });
    let (base, inter, truths) = (base?, inter?, truths?);

    let scenarios = std::thread::scope(|s| {
        let handles: Vec<_> = cfgs
            .iter()
            .enumerate()
            .map(|(i, cfg)| {
                let data = if i < 2 { &base } else { &inter };
                s.spawn(move || analyze_scenario(cfg, data).map(|(r, _)| r))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread"))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let rows = build_rows(&scenarios, &truths);
    Ok(AppendixReport {
        header: REPORT_HEADER.into(),
        seed,
        n: cfgs[0].n,
        all_pass: rows.iter().all(|r| r.pass),
        rows,
        truths,
        scenarios,
    })
}

fn build_rows(sc: &[ScenarioResult], truths: &TrueEffects) -> Vec<ReportRow> {
    use published::*;
    let (s1, s2, s3, s4) = (&sc[0], &sc[1], &sc[2], &sc[3]);
    let n = s1.n as f64;
    let conditional_truth_ratio = HR_A / HR_B;
    let log_true = TRUE_MARGINAL_HR.ln();

    vec![
        row(1, "marginal HR A vs C (S1)", s1.marginal_ac_s1.hr(), Some(MARGINAL_AC_S1), Tolerance::between(0.747, 0.768)),
        row(2, "marginal HR B vs C (S2)", s1.marginal_bc_s2.hr(), Some(MARGINAL_BC_S2), Tolerance::between(0.760, 0.780)),
        row(3, "conditional HR A vs C (S1)", s1.conditional_ac_s1.hr(), Some(CONDITIONAL_AC_S1), Tolerance::between(0.522, 0.538)),
        row(3, "conditional HR B vs C (S2)", s1.conditional_bc_s2.hr(), Some(CONDITIONAL_BC_S2), Tolerance::between(0.542, 0.558)),
        row(4, "MAIC HR A vs C (S2), scenario 1", s1.maic_ac_s2.hr(), Some(MAIC_SCENARIO_1), Tolerance::between(0.747, 0.768)),
        row(4, "scenario 1 max balance gap", s1.balance.max_gap(), None, Tolerance::at_most(1e-6)),
        row(4, "scenario 1 ESS / n", s1.ess / n, None, Tolerance::at_most(1.0 - 1e-12)),
        row(5, "MAIC HR A vs C (S2), scenario 2", s2.maic_ac_s2.hr(), Some(MAIC_SCENARIO_2), Tolerance::between(0.747, 0.768)),
        row(5, "ESS scenario 2 - ESS scenario 1", s2.ess - s1.ess, None, Tolerance::at_least(0.0)),
        row(6, "ratio of marginal HRs (A vs B, S2)", s1.hr_ratio_marginal, Some(RATIO_MARGINAL), Tolerance::between(0.974, 0.994)),
        row(
            6,
            "|marginal ratio - conditional ratio 0.53/0.55|",
            (s1.hr_ratio_marginal - conditional_truth_ratio).abs(),
            Some(RATIO_MARGINAL - conditional_truth_ratio),
            Tolerance { lo: Some(0.01 + 1e-12), hi: None },
        ),
        row(7, "MAIC HR A vs C (S2), scenario 3", s3.maic_ac_s2.hr(), Some(MAIC_SCENARIO_3), Tolerance::between(0.864, 0.889)),
        row(7, "MAIC HR A vs C (S2), scenario 4", s4.maic_ac_s2.hr(), Some(MAIC_SCENARIO_4), Tolerance::between(0.864, 0.889)),
        row(
            7,
            "|scenario 3 - scenario 4|",
            (s3.maic_ac_s2.hr() - s4.maic_ac_s2.hr()).abs(),
            Some((MAIC_SCENARIO_3 - MAIC_SCENARIO_4).abs()),
            Tolerance::at_most(0.006 - 1e-12),
        ),
        row(8, "true marginal log HR A vs C (S1)", truths.delta_ac_s1, Some(log_true), Tolerance::between(log_true - 0.02, log_true + 0.02)),
        row(8, "true marginal log HR A vs C (S2)", truths.delta_ac_s2, Some(log_true), Tolerance::between(log_true - 0.02, log_true + 0.02)),
        row(
            8,
            "|true S1 - true S2|",
            (truths.delta_ac_s1 - truths.delta_ac_s2).abs(),
            Some(0.0),
            Tolerance::at_most(0.02 - 1e-12),
        ),
    ]
}
