use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use softmax_lsvi::env::{builtin, TabularCmdp};
use softmax_lsvi::harness::{run_experiment, write_outputs, HarnessError, Mode, RunConfig};
use softmax_lsvi::oracle::{slater_margin, solve_occupancy_lp};

#[derive(Parser)]
#[command(name = "softmax-lsvi", version, about = "Primal-dual soft-max LSVI-UCB experiments on constrained MDPs")]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded trials and write per-trial and aggregate CSVs.
    Run(RunArgs),
    /// Print the constrained optimum and Slater margin of an environment.
    Oracle(EnvArgs),
    /// Write an environment to the JSON model format.
    ExportEnv {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args, Clone)]
struct EnvArgs {
    /// Builtin environment name (job-scheduler).
    #[arg(long)]
    env: Option<String>,
    /// Tabular CMDP JSON file.
    #[arg(long)]
    env_file: Option<PathBuf>,
}

impl EnvArgs {
    fn load(&self) -> Result<TabularCmdp, HarnessError> {
        Ok(match (&self.env_file, &self.env) {
            (Some(path), _) => TabularCmdp::load_json(path)?,
            (None, Some(name)) => builtin(name)?,
            (None, None) => builtin("job-scheduler")?,
        })
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    env: EnvArgs,
    /// Number of episodes K.
    #[arg(long, short = 'k')]
    episodes: Option<usize>,
    /// Comma-separated seeds, one per trial.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Number of trials when no explicit seeds are given (seeds 0..trials).
    #[arg(long)]
    trials: Option<usize>,
    /// standard or zero_violation.
    #[arg(long)]
    mode: Option<Mode>,
    /// Constraint tightening ζ (zero_violation mode).
    #[arg(long)]
    zeta: Option<f64>,
    /// Constant in the default ζ schedule.
    #[arg(long)]
    zeta_constant: Option<f64>,
    /// Slater margin γ assumed by the agent.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    /// Ridge regularizer λ.
    #[arg(long)]
    lambda: Option<f64>,
    /// Bonus constant C₁.
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    failure_prob: Option<f64>,
    /// Output directory.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
    /// Write 0 in the wall-time column so repeated runs are byte-identical.
    #[arg(long)]
    no_wall_time: bool,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, HarnessError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.env.env {
            c.env = v;
            c.env_file = None;
        }
        if let Some(v) = self.env.env_file {
            c.env_file = Some(v);
        }
        if let Some(v) = self.episodes {
            c.episodes = v;
        }
        let seeds_unset = self.seeds.is_none();
        if let Some(v) = self.seeds {
            c.seeds = v;
        }
        if let Some(v) = self.trials {
            c.trials = v;
            if seeds_unset {
                c.seeds.clear();
            }
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if self.zeta.is_some() {
            c.zeta = self.zeta;
        }
        if let Some(v) = self.zeta_constant {
            c.zeta_constant = v;
        }
        if let Some(v) = self.gamma {
            c.agent.gamma = v;
        }
        if self.alpha.is_some() {
            c.agent.alpha = self.alpha;
        }
        if self.beta.is_some() {
            c.agent.beta = self.beta;
        }
        if self.eta.is_some() {
            c.agent.eta = self.eta;
        }
        if self.xi.is_some() {
            c.agent.xi = self.xi;
        }
        if let Some(v) = self.lambda {
            c.agent.lambda = v;
        }
        if let Some(v) = self.c1 {
            c.agent.c1 = v;
        }
        if let Some(v) = self.failure_prob {
            c.agent.failure_prob = v;
        }
        if let Some(v) = self.output {
            c.output = v;
        }
        if self.no_wall_time {
            c.record_wall_time = false;
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(args) => {
            let config = args.into_config()?;
            let result = run_experiment(&config)?;
            let written = write_outputs(&result, &config.output)?;
            let last = result.summary.rows.last().expect("at least one episode");
            println!(
                "K={} trials={} V*={:.6} regret={:.4} violation={:.4} (signed {:.4})",
                config.episodes,
                result.trials.len(),
                result.metadata.optimal_value,
                last.cumulative_regret_mean,
                last.cumulative_violation_positive_part_mean,
                last.cumulative_violation_signed_mean,
            );
            if let Some(ratio) = result.summary.halving_ratio {
                println!("Regret(K)/Regret(K/2) = {ratio:.4}");
            }
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::Oracle(env) => {
            let model = env.load()?;
            let margin = slater_margin(&model);
            println!("threshold b = {}", model.threshold);
            println!("slater margin = {margin:.9}");
            match solve_occupancy_lp(&model, model.threshold) {
                Ok(sol) => println!("constrained optimum V* = {:.9}", sol.optimal_value),
                Err(e) => println!("{e}"),
            }
        }
        Command::ExportEnv { env, output } => {
            env.load()?.save_json(&output)?;
            println!("wrote {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
