//! `patrol`: train and evaluate energy-aware patrolling agents.
//!
//! Exit status is 0 on success, 1 when a run fails or an invariant check
//! does not hold, and 2 for bad configuration or arguments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patrol_core::docs::{generate_repro_index, repro_entries};
use patrol_core::harness::{
    cmd_eval_battery, cmd_eval_fault, cmd_eval_patrol, cmd_gradcheck, cmd_train, out_dir,
    ExperimentConfig, HarnessError,
};

#[derive(Parser)]
#[command(
    name = "patrol",
    version,
    about = "Energy-aware multi-agent patrolling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Policy checkpoint; required unless the strategy is `cr`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write its log and checkpoints.
    Train(RunArgs),
    /// Battery level at recharge and failure rate per agent count.
    EvalBattery(EvalArgs),
    /// Average and worst idleness per agent count.
    EvalPatrol(EvalArgs),
    /// Daily series under a failure and replacement schedule.
    EvalFault(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Hidden widths for the full actor and critic stacks.
        #[arg(long, value_delimiter = ',', default_value = "512,341,227")]
        hidden: Vec<usize>,
        /// Corrupt the tanh derivative; the check is then expected to fail.
        #[arg(long)]
        inject_fault: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the reproduction index for run directories under `root`.
    ReproIndex {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        /// Write the index here instead of printing it.
        #[arg(long)]
        write: Option<PathBuf>,
    },
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    let out = out_dir(&cfg, args.out.as_deref());
    Ok((cfg, out))
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| format!("{x:.4}"))
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, out) = load(&args)?;
            let s = cmd_train(&cfg, &out)?;
            if let Some(last) = s.log.last() {
                println!(
                    "trained {} rounds; last round reward {:.3}, landing battery {:.3}",
                    s.log.len(),
                    last.mean_cumulative_reward,
                    last.mean_recharge_battery
                );
            }
            println!(
                "{} checkpoint files in {}",
                s.checkpoints.len(),
                out.join("checkpoints").display()
            );
        }
        Command::EvalBattery(a) => {
            let (cfg, out) = load(&a.run)?;
            let rows = cmd_eval_battery(&cfg, a.checkpoint.as_deref(), &out)?;
            println!("n\tb_c\td_bc\tF\td_F");
            for r in rows {
                println!(
                    "{}\t{}\t{}\t{}\t{}",
                    r.n,
                    fmt(r.b_c),
                    fmt(r.d_bc),
                    fmt(r.f),
                    fmt(r.d_f)
                );
            }
        }
        Command::EvalPatrol(a) => {
            let (cfg, out) = load(&a.run)?;
            let rows = cmd_eval_patrol(&cfg, a.checkpoint.as_deref(), &out)?;
            println!("strategy\tn\tAVG\tMAXbar\treruns");
            for r in rows {
                println!(
                    "{}\t{}\t{:.2}\t{:.2}\t{}",
                    r.strategy, r.n, r.avg, r.max_bar, r.reruns
                );
            }
        }
        Command::EvalFault(a) => {
            let (cfg, out) = load(&a.run)?;
            let rep = cmd_eval_fault(&cfg, a.checkpoint.as_deref(), &out)?;
            println!("day\tagents\tAVG\tMAXbar\tlanding");
            for r in &rep.rows {
                println!(
                    "{}\t{}\t{:.2}\t{:.2}\t{}",
                    r.day,
                    r.agent_count,
                    r.avg,
                    r.max_bar,
                    fmt(r.mean_recharge_battery)
                );
            }
            println!("battery failures: {}", rep.battery_failures);
        }
        Command::Gradcheck {
            seeds,
            hidden,
            inject_fault,
            out,
        } => {
            let rep = cmd_gradcheck(seeds, &hidden, inject_fault, out.as_deref())?;
            print!("{}", rep.to_csv());
            return Ok(rep.passed());
        }
        Command::ReproIndex { root, write } => {
            let text = generate_repro_index(&repro_entries(), &root);
            match write {
                Some(path) => write_text(&path, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(true)
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
