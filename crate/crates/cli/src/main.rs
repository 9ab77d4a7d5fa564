use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use red_core::autodiff::gradcheck::{run_battery, DEFAULT_STEP, DEFAULT_TOLERANCE};
use red_core::detector::{default_lambda_grid, Decision};
use red_core::pipeline::{
    encode_rows, evaluate_checkpoint, generate_dataset, perturb_records, run_experiment, run_suite, train_on,
    ExperimentConfig, SuiteKind,
};
use red_core::signal::{read_dataset, Record, Split};
use red_core::trainer::Checkpoint;

#[derive(Parser)]
#[command(name = "red", version, about = "Rogue emitter detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Snr,
    Baselines,
    Ablation,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured dataset.
    GenData {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train on a dataset and save a checkpoint with detector centers.
    Train {
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Classify the test split as known or rogue at one λ.
    Detect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: f64,
        /// Per-record verdicts as CSV.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// AUC, silhouette and λ sweep at each test-time SNR.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,20,30")]
        snr_list: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Full pipeline into one directory.
    Run {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// SNR sweep, baseline comparison, or loss ablation.
    Suite {
        kind: Suite,
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Finite-difference check of every differentiable op.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { config, output } => {
            let cfg = load(&config)?;
            let ds = generate_dataset(&cfg, &output)?;
            println!("wrote {} records of length {} to {}", ds.records.len(), ds.length, output.display());
        }
        Command::Train { config, data, output } => {
            let cfg = load(&config)?;
            let ds = read_dataset(&data).with_context(|| format!("reading {}", data.display()))?;
            if ds.length != cfg.dataset.length {
                bail!("dataset length {} does not match config length {}", ds.length, cfg.dataset.length);
            }
            let run = train_on(&cfg, ds)?;
            run.checkpoint.save(&output)?;
            let log_path = output.with_extension("log.toml");
            fs::write(&log_path, run.log.to_toml()?)?;
            println!(
                "best epoch {} of {}; checkpoint {}",
                run.log.best_epoch,
                run.log.epochs.len(),
                output.display()
            );
        }
        Command::Detect { ckpt, data, lambda, output } => {
            let ck = Checkpoint::load(&ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
            let ds = read_dataset(&data).with_context(|| format!("reading {}", data.display()))?;
            let centers = ck.semantic.as_ref().context("checkpoint has no detector centers")?;
            let test: Vec<&Record> = ds.split(Split::Test).collect();
            let features = encode_rows(&ck.model, &perturb_records(&test, f64::INFINITY, 0, "")?)?;
            let mut csv = String::from("index,label,known,nearest_class,distance,decision\n");
            let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
            for (i, (r, z)) in test.iter().zip(&features).enumerate() {
                let v = centers.decide(z, lambda)?;
                let known = ds.is_known(r.label);
                let accepted = matches!(v.decision, Decision::Known(_));
                match (known, accepted) {
                    (true, true) => tp += 1,
                    (true, false) => fn_ += 1,
                    (false, true) => fp += 1,
                    (false, false) => tn += 1,
                }
                let d = match v.decision {
                    Decision::Known(k) => format!("known:{k}"),
                    Decision::Rogue => "rogue".into(),
                };
                csv.push_str(&format!("{i},{},{known},{},{},{d}\n", r.label, v.nearest_class, v.min_distance));
            }
            println!("lambda {lambda}: tp {tp} fn {fn_} fp {fp} tn {tn}");
            if tp + fn_ > 0 && fp + tn > 0 {
                println!(
                    "tpr {:.4} fpr {:.4}",
                    tp as f64 / (tp + fn_) as f64,
                    fp as f64 / (fp + tn) as f64
                );
            }
            if let Some(out) = output {
                fs::write(&out, csv)?;
            }
        }
        Command::Eval { ckpt, data, snr_list, seed, output } => {
            let ck = Checkpoint::load(&ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
            let ds = read_dataset(&data).with_context(|| format!("reading {}", data.display()))?;
            let report = evaluate_checkpoint(&ck, &ds, &snr_list, seed, &default_lambda_grid())?;
            fs::write(&output, report.to_toml()?)?;
            for r in &report.snr {
                println!("snr {:>5} dB: auc {:.4} silhouette {:.4}", r.snr_db, r.auc, r.silhouette);
            }
        }
        Command::Run { config, output } => {
            let cfg = load(&config)?;
            let (_, report) = run_experiment(&cfg, &output)?;
            for r in &report.snr {
                println!("snr {:>5} dB: auc {:.4} silhouette {:.4}", r.snr_db, r.auc, r.silhouette);
            }
        }
        Command::Suite { kind, config, output } => {
            let cfg = load(&config)?;
            let kind = match kind {
                Suite::Snr => SuiteKind::Snr,
                Suite::Baselines => SuiteKind::Baselines,
                Suite::Ablation => SuiteKind::Ablation,
            };
            let report = run_suite(kind, &cfg, &output)?;
            for row in &report.rows {
                match row.silhouette {
                    Some(sc) => println!("{:<9} snr {:>5} dB: auc {:.4} sc {:.4}", row.label, row.snr_db, row.auc, sc),
                    None => println!("{:<9} snr {:>5} dB: auc {:.4}", row.label, row.snr_db, row.auc),
                }
            }
        }
        Command::Gradcheck { instances, seed } => {
            let checks = run_battery(instances, seed, DEFAULT_STEP, DEFAULT_TOLERANCE)?;
            let mut failed = 0;
            for c in &checks {
                let status = if c.passed() { "ok" } else { "FAIL" };
                println!("{:<24} {:>3} instances  worst rel err {:.3e}  {status}", c.op, c.instances, c.worst_rel_error);
                failed += usize::from(!c.passed());
            }
            if failed > 0 {
                bail!("{failed} op(s) failed the gradient check");
            }
        }
    }
    Ok(())
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}
