use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use edgecache::baselines::Policy;
use edgecache::config::ExperimentConfig;
use edgecache::dl::TrainedPolicy;
use edgecache::harness::{
    evaluate_policy, learned_name, replication_seed, run_sweep, run_training_experiment, summarize, write_csv,
    write_loss_trace, ResultRow,
};
use edgecache::seed::derive_seed;
use edgecache::solver::solve_allocation;
use edgecache::special::{solve_special, SpecialScenario};
use edgecache::{CachingDecision, ScenarioSampler};

#[derive(Parser)]
#[command(name = "edgecache", version, about = "Cache placement and resource allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the allocation problem for one scenario and one decision.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Decision as a 0/1 string, one character per service.
        #[arg(long)]
        decision: Option<String>,
        /// JSON output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run reference policies over `replications` scenarios.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Comma-separated policy names; the configured list when omitted.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<Policy>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train both quantizer variants and compare them with the baselines.
    Train {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a trained checkpoint over `replications` scenarios.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-service-per-location pipeline over `replications` scenarios.
    Special {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter sweep; writes per-run rows and a summary next to them.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated policy names; the sweep's list when omitted.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<Policy>,
        /// Checkpoint for the learned policy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Per-run CSV; the summary goes to `<stem>_summary.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    if let Some(n) = common.parallelism {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Solve { common, decision, out } => {
            let cfg = load_config(&common)?;
            let sampler = ScenarioSampler::new(cfg.scenario.clone())?;
            let s = sampler.sample_seeded(replication_seed(common.seed, 0))?;
            let d: CachingDecision = match decision {
                Some(text) => text.parse()?,
                None => CachingDecision::none(s.num_services()),
            };
            if d.len() != s.num_services() {
                bail!("decision has {} entries, scenario has {} services", d.len(), s.num_services());
            }
            let r = solve_allocation(&s, &d, &cfg.solver)?;
            let doc = serde_json::json!({
                "decision": d.to_string(),
                "fits_cache": d.fits(&s),
                "status": r.status.as_str(),
                "objective_j": r.objective,
                "dual_objective_j": r.dual_objective,
                "gap": r.gap(),
                "iterations": r.iterations,
                "energy": r.energy,
                "allocation": r.allocation,
            });
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &doc)?;
            writeln!(w)?;
        }
        Command::Baseline { common, policies, out } => {
            let cfg = load_config(&common)?;
            let policies = if policies.is_empty() { cfg.policies.clone() } else { policies };
            let sampler = ScenarioSampler::new(cfg.scenario.clone())?;
            let mut rows = Vec::new();
            for r in 0..cfg.replications {
                let seed = replication_seed(common.seed, r);
                let s = sampler.sample_seeded(seed)?;
                for &p in &policies {
                    let outcome = evaluate_policy(&s, p, &cfg.solver, cfg.exhaustive_limit, None, seed);
                    rows.push(ResultRow::new("replication", r as f64, r, seed, p.as_str(), &outcome));
                }
            }
            write_csv(output(out.as_deref())?, &rows)?;
        }
        Command::Train { common, out } => {
            let cfg = load_config(&common)?;
            fs::create_dir_all(&out)?;
            let report = run_training_experiment(&cfg, common.seed)?;
            for run in &report.runs {
                let name = learned_name(run.kind);
                write_loss_trace(File::create(out.join(format!("loss_{name}.csv")))?, &run.trace)?;
                run.policy.save(&out.join(format!("{name}.json")))?;
                eprintln!(
                    "{name}: {} updates, {} unlabeled iterations",
                    run.trace.len(),
                    run.unlabeled
                );
            }
            write_csv(File::create(out.join("comparison.csv"))?, &report.comparison)?;
            write_csv(File::create(out.join("comparison_summary.csv"))?, &summarize(&report.comparison, true))?;
            eprintln!(
                "test set: {} scenarios ({} without any feasible decision)",
                report.test.len(),
                report.test.skipped
            );
        }
        Command::Infer { common, checkpoint, out } => {
            let cfg = load_config(&common)?;
            let policy = TrainedPolicy::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let sampler = ScenarioSampler::new(cfg.scenario.clone())?;
            let mut rows = Vec::new();
            for r in 0..cfg.replications {
                let seed = replication_seed(common.seed, r);
                let s = sampler.sample_seeded(seed)?;
                let infer_seed = derive_seed(common.seed, &format!("infer/{r}"));
                let outcome = evaluate_policy(&s, Policy::Learned, &cfg.solver, cfg.exhaustive_limit, Some(&policy), infer_seed);
                rows.push(ResultRow::new("replication", r as f64, r, seed, Policy::Learned.as_str(), &outcome));
            }
            write_csv(output(out.as_deref())?, &rows)?;
        }
        Command::Special { common, out } => {
            let cfg = load_config(&common)?;
            let sampler = ScenarioSampler::new(cfg.scenario.clone())?;
            let mut rows = Vec::new();
            for r in 0..cfg.replications {
                let seed = replication_seed(common.seed, r);
                let s = sampler.sample_seeded(seed)?;
                let (outcome, violations) = match SpecialScenario::new(s).and_then(|ss| solve_special(&ss, &cfg.solver)) {
                    Ok(o) => (Ok(o.result), o.deadline_violations),
                    Err(e) => (Err(e), Vec::new()),
                };
                let mut row = ResultRow::new("replication", r as f64, r, seed, Policy::Special.as_str(), &outcome);
                if !violations.is_empty() {
                    row.error = format!("fixed times overrun the deadline for services {violations:?}");
                }
                rows.push(row);
            }
            write_csv(output(out.as_deref())?, &rows)?;
        }
        Command::Sweep {
            common,
            policies,
            checkpoint,
            out,
        } => {
            let cfg = load_config(&common)?;
            let mut spec = cfg.sweep.clone();
            if !policies.is_empty() {
                spec.policies = policies;
            }
            let learned = checkpoint.as_deref().map(TrainedPolicy::load).transpose()?;
            if spec.policies.contains(&Policy::Learned) && learned.is_none() {
                bail!("the learned policy needs --checkpoint");
            }
            let rows = run_sweep(&spec, &cfg.scenario, &cfg.solver, cfg.exhaustive_limit, learned.as_ref(), common.seed)?;
            write_csv(File::create(&out)?, &rows)?;
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
            let summary_path = out.with_file_name(format!("{stem}_summary.csv"));
            write_csv(File::create(&summary_path)?, &summarize(&rows, false))?;
        }
    }
    Ok(())
}
