use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nwbrl::container::Container;
use nwbrl::harness::{
    ablation_configs, build_priors, eval_zero_shot, restore, run_experiment_with_text, sweep_configs, HarnessError, MetricsRow, RunConfig,
    RunOutput,
};
use nwbrl::verify;

const OUT_ROOT_ENV: &str = "NWBRL_OUT_ROOT";

#[derive(Parser)]
#[command(name = "nwbrl", version, about = "Bayesian meta-RL with Normal-Wishart task beliefs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run.
    Train(RunArgs),
    /// Zero-shot evaluation of a checkpoint on held-out tasks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of test tasks (defaults to the run's setting).
        #[arg(long)]
        tasks: Option<usize>,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Full method, known-noise arm and no-regularization arm.
    Ablate(RunArgs),
    /// Latent-dimension sensitivity grid.
    Sweep(RunArgs),
    /// Oracle and property checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to a folder under $NWBRL_OUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Outer training iterations.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    known_noise: bool,
    #[arg(long)]
    no_reg: bool,
    #[arg(long)]
    dt: Option<usize>,
    #[arg(long)]
    dr: Option<usize>,
}

fn load_config(args: &RunArgs) -> Result<(RunConfig, Option<String>), HarnessError> {
    let (mut cfg, text) = match &args.config {
        None => (RunConfig::default(), None),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            let cfg = if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
            } else {
                toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
            };
            (cfg, Some(text))
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.iterations = steps;
    }
    cfg.known_noise |= args.known_noise;
    cfg.no_regularization |= args.no_reg;
    if let Some(dt) = args.dt {
        cfg.basis.d_t = dt;
    }
    if let Some(dr) = args.dr {
        cfg.basis.d_r = dr;
    }
    Ok((cfg.resolved()?, text))
}

fn out_dir(args: &RunArgs, cfg: &RunConfig, kind: &str) -> PathBuf {
    args.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!("{kind}_{}_seed{}", cfg.family.name(), cfg.seed))
    })
}

fn last<T>(rows: &[MetricsRow], f: impl Fn(&MetricsRow) -> Option<T>) -> Option<T> {
    rows.iter().rev().find_map(f)
}

fn summary(name: &str, run: &RunOutput) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    println!(
        "{name}: test_success={} trans_l1_heldout={} reward_l1_heldout={} dir={}",
        fmt(last(&run.rows, |r| r.test_success)),
        fmt(last(&run.rows, |r| r.trans_l1_heldout)),
        fmt(last(&run.rows, |r| r.reward_l1_heldout)),
        run.dir.as_deref().map_or_else(|| "-".to_string(), |d| d.display().to_string()),
    );
}

fn run_arms(arms: Vec<(String, RunConfig)>, dir: &Path, text: Option<&str>) -> Result<(), HarnessError> {
    for (name, cfg) in arms {
        let run = run_experiment_with_text(&cfg, Some(&dir.join(&name)), text)?;
        summary(&name, &run);
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<bool, HarnessError> {
    match cmd {
        Command::Train(args) => {
            let (cfg, text) = load_config(&args)?;
            let dir = out_dir(&args, &cfg, "train");
            let run = run_experiment_with_text(&cfg, Some(&dir), text.as_deref())?;
            summary("train", &run);
            Ok(true)
        }
        Command::Eval {
            checkpoint,
            tasks,
            episodes,
            seed,
        } => {
            let restored = restore(&Container::read(&checkpoint)?)?;
            let priors = build_priors(&restored.config)?;
            let tasks = tasks.unwrap_or(restored.config.test_tasks);
            let result = eval_zero_shot(&restored.config, &restored.policy, &restored.nets, &priors, &restored.normalizer, tasks, episodes, seed)?;
            println!("{}", serde_json::to_string_pretty(&result).expect("eval result serializes"));
            Ok(true)
        }
        Command::Ablate(args) => {
            let (cfg, text) = load_config(&args)?;
            let dir = out_dir(&args, &cfg, "ablate");
            run_arms(ablation_configs(&cfg), &dir, text.as_deref())?;
            Ok(true)
        }
        Command::Sweep(args) => {
            let (cfg, text) = load_config(&args)?;
            let dir = out_dir(&args, &cfg, "sweep");
            run_arms(sweep_configs(&cfg), &dir, text.as_deref())?;
            Ok(true)
        }
        Command::Verify { seed } => {
            let results = verify::run_all(seed);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        // a failed check is a numerical failure
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
