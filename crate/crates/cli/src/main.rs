use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ba_lambda::bench::commands::{self, ProblemSource, RunConfig};
use ba_lambda::bench::AblationKind;
use ba_lambda::policy::{PolicyKind, PolicySpec};
use ba_lambda::solver::ClassicMode;

#[derive(Parser)]
#[command(name = "ba-lambda", version, about = "Learned damping for Levenberg-Marquardt bundle adjustment")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Charge one unit of time per iteration instead of wall time.
    #[arg(long, global = true)]
    deterministic_time: bool,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic problems as BAL files.
    Generate {
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Seed of the first scene; defaults to the run seed.
        #[arg(long)]
        first_seed: Option<u64>,
    },
    /// Solve one problem with one policy.
    Solve {
        /// BAL file; a synthetic scene is generated when omitted.
        #[arg(long)]
        bal: Option<PathBuf>,
        /// Seed of the synthetic scene.
        #[arg(long)]
        scene_seed: Option<u64>,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Train the SAC agent or the zero-net baseline.
    Train {
        #[arg(long, value_enum, default_value_t = Learner::Sac)]
        learner: Learner,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Compare the configured policies on the held-out suite.
    Eval {
        /// Additional agent checkpoint to evaluate.
        #[arg(long)]
        agent: Option<PathBuf>,
        /// Additional zero-net checkpoint to evaluate.
        #[arg(long)]
        zero_net: Option<PathBuf>,
        /// Also evaluate a constant scheduler distilled from `--agent`.
        #[arg(long, requires = "agent")]
        with_scheduler: bool,
    },
    /// Performance profiles and convergence traces from evaluation runs.
    Profile {
        /// Runs file written by `eval`; defaults to `<out-dir>/eval_runs.json`.
        #[arg(long)]
        runs: Option<PathBuf>,
    },
    /// Train and evaluate an ablation suite.
    Ablate {
        #[arg(long)]
        kind: AblationKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Learner {
    Sac,
    ZeroNet,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyChoice {
    Classic,
    ClassicPaper,
    Fixed,
    Scheduler,
    Agent,
    ZeroNet,
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value_t = PolicyChoice::Classic)]
    policy: PolicyChoice,
    /// Damping factor for `fixed`.
    #[arg(long)]
    value: Option<f64>,
    /// Comma-separated damping factors for `scheduler`.
    #[arg(long, value_delimiter = ',')]
    schedule: Vec<f64>,
    /// Checkpoint for `agent` or `zero-net`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl PolicyArgs {
    fn spec(&self) -> Result<PolicySpec> {
        let checkpoint = || self.checkpoint.clone().context("--checkpoint is required for this policy");
        Ok(match self.policy {
            PolicyChoice::Classic => PolicySpec::classic(ClassicMode::Standard),
            PolicyChoice::ClassicPaper => PolicySpec::classic(ClassicMode::Paper),
            PolicyChoice::Fixed => PolicySpec::fixed(self.value.context("--value is required for fixed")?),
            PolicyChoice::Scheduler => {
                if self.schedule.is_empty() {
                    bail!("--schedule is required for scheduler");
                }
                PolicySpec::scheduler(self.schedule.clone())
            }
            PolicyChoice::Agent => PolicySpec::from_checkpoint(PolicyKind::Agent, checkpoint()?),
            PolicyChoice::ZeroNet => PolicySpec::from_checkpoint(PolicyKind::ZeroNet, checkpoint()?),
        })
    }
}

fn print_outputs(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let g = &cli.global;
    let base = match &g.config {
        Some(path) => RunConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    let mut config = base.with_overrides(g.seed, g.deterministic_time);
    let out = &g.out_dir;

    match cli.command {
        Command::Generate { count, first_seed } => {
            print_outputs(&commands::generate(&config, out, count, first_seed.unwrap_or(config.seed))?);
        }
        Command::Solve { bal, scene_seed, policy } => {
            let source = match bal {
                Some(path) => ProblemSource::Bal(path),
                None => ProblemSource::Synthetic(scene_seed.unwrap_or(config.seed)),
            };
            print_outputs(&commands::solve_one(&config, &source, &policy.spec()?, out)?);
        }
        Command::Train { learner, episodes } => {
            if let Some(n) = episodes {
                config.train.episodes = n;
            }
            let written = match learner {
                Learner::Sac => commands::train_agent_with_progress(&config, out, |e| {
                    eprintln!("episode {:>5}  iterations {:>3}  return {:>9.3}  {}", e.episode, e.iterations, e.episode_return, e.outcome);
                })?,
                Learner::ZeroNet => commands::train_zero_net(&config, out)?,
            };
            print_outputs(&written);
        }
        Command::Eval { agent, zero_net, with_scheduler } => {
            if let Some(path) = &agent {
                config.policies.push(PolicySpec::from_checkpoint(PolicyKind::Agent, path.clone()));
                if with_scheduler {
                    let schedule = commands::scheduler_from_agent(&config, &commands::resolve_path(out, path))?;
                    config.policies.push(PolicySpec::scheduler(schedule));
                }
            }
            if let Some(path) = zero_net {
                config.policies.push(PolicySpec::from_checkpoint(PolicyKind::ZeroNet, path));
            }
            let (table, written) = commands::evaluate(&config, out)?;
            print!("{}", table.aggregates_csv());
            print_outputs(&written);
        }
        Command::Profile { runs } => {
            let path = runs.unwrap_or_else(|| out.join("eval_runs.json"));
            let records = commands::load_runs(&path)?;
            print_outputs(&commands::profile(&config, &records, out)?);
        }
        Command::Ablate { kind } => {
            print_outputs(&commands::ablate(&config, kind, out)?);
        }
    }
    Ok(())
}
