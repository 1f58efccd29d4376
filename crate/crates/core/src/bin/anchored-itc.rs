use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use anchored_itc::balance::{balance_report, center_covariates, estimate_weights, OptimizerSettings};
use anchored_itc::cohortsim::{summarize_aggregate, TrialData};
use anchored_itc::estimands::{conditional_effect, marginal_effect};
use anchored_itc::harness::{self, parse_config, replicate_appendix, run_scenario, simulate_studies};

#[derive(Parser)]
#[command(name = "anchored-itc", version, about = "Anchored indirect comparisons with MAIC and weighted Cox models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate both studies of a scenario and write them as CSV.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate MAIC weights for an IPD file against target means.
    Weights {
        #[arg(long)]
        ipd: PathBuf,
        /// JSON object mapping covariate name to target mean.
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        balance_set: Vec<String>,
        /// Where to write `subject_id,weight`; defaults to stdout after the report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a Cox model of outcome on treatment (optionally weighted or adjusted).
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// CSV with `subject_id,weight`.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        adjust: Vec<String>,
        #[arg(long, default_value = "S1")]
        population: String,
    },
    /// Run one scenario from a JSON config and print its result as JSON.
    Scenario {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Reproduce the appendix scenarios and check them against published values.
    ReplicateAppendix {
        #[arg(long, default_value_t = harness::config::DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_config(path: Option<&Path>) -> Result<harness::ScenarioConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    Ok(parse_config(&text)?)
}

fn read_trial(path: &Path) -> Result<TrialData> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    TrialData::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn write_trial(path: &Path, trial: &TrialData) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    trial.write_csv(BufWriter::new(f))?;
    Ok(())
}

fn write_weights<W: Write>(out: W, ids: &[usize], w: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["subject_id", "weight"])?;
    for (id, w) in ids.iter().zip(w) {
        wtr.write_record([id.to_string(), w.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Weights aligned to the trial's subject order.
fn read_weights(path: &Path, trial: &TrialData) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut by_id = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id: usize = rec.get(0).context("missing subject_id")?.trim().parse()?;
        let w: f64 = rec.get(1).context("missing weight")?.trim().parse()?;
        by_id.insert(id, w);
    }
    trial
        .subject_id
        .iter()
        .map(|id| by_id.get(id).copied().with_context(|| format!("no weight for subject {id}")))
        .collect()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = read_config(config.as_deref())?;
            let data = simulate_studies(&cfg)?;
            fs::create_dir_all(&out)?;
            write_trial(&out.join("study_a.csv"), &data.a)?;
            write_trial(&out.join("study_b.csv"), &data.b)?;
            let agg = summarize_aggregate(&data.b)?;
            let targets: BTreeMap<_, _> = agg.covariate_names.iter().cloned().zip(agg.means.iter().copied()).collect();
            fs::write(out.join("targets.json"), serde_json::to_string_pretty(&targets)?)?;
            fs::write(out.join("aggregate_b.json"), serde_json::to_string_pretty(&agg)?)?;
            eprintln!("wrote study_a.csv, study_b.csv, targets.json, aggregate_b.json to {}", out.display());
        }
        Command::Weights {
            ipd,
            targets,
            balance_set,
            out,
        } => {
            let trial = read_trial(&ipd)?;
            let map: BTreeMap<String, f64> = serde_json::from_str(&fs::read_to_string(&targets)?)
                .with_context(|| format!("parsing {}", targets.display()))?;
            let means = balance_set
                .iter()
                .map(|c| map.get(c).copied().with_context(|| format!("no target mean for `{c}`")))
                .collect::<Result<Vec<_>>>()?;
            let x = trial.select_columns(&balance_set)?;
            let problem = center_covariates(&x, &means, &balance_set)?;
            let w = estimate_weights(&problem, &OptimizerSettings::default())?;
            if !w.converged {
                eprintln!("warning: BFGS did not converge (gradient norm {:.3e})", w.grad_norm);
            }
            let report = balance_report(&x, &w.weights, &means, &balance_set)?;
            print!("{}", report.to_tsv());
            match out {
                Some(p) => write_weights(File::create(&p)?, &trial.subject_id, &w.weights)?,
                None => write_weights(io::stdout().lock(), &trial.subject_id, &w.weights)?,
            }
        }
        Command::Fit {
            data,
            weights,
            adjust,
            population,
        } => {
            let trial = read_trial(&data)?;
            let est = match (weights, adjust.is_empty()) {
                (Some(_), false) => bail!("--weights and --adjust cannot be combined"),
                (Some(p), true) => {
                    let w = read_weights(&p, &trial)?;
                    marginal_effect(&trial, Some(&w), &population)?
                }
                (None, _) => conditional_effect(&trial, &adjust, &population)?,
            };
            println!("{}", serde_json::to_string_pretty(&est)?);
        }
        Command::Scenario { config } => {
            let cfg = read_config(config.as_deref())?;
            let result = run_scenario(&cfg)?;
            if let Some(dir) = &cfg.outputs.dir {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("balance.tsv"), result.balance.to_tsv())?;
                fs::write(dir.join("result.json"), serde_json::to_string_pretty(&result)?)?;
            }
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::ReplicateAppendix { seed, out } => {
            let report = replicate_appendix(seed)?;
            print!("{}", report.to_tsv());
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("report.json"), report.to_json())?;
                fs::write(dir.join("report.tsv"), report.to_tsv())?;
            }
            return Ok(report.all_pass);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
