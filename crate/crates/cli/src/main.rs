use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use m2ac_core::bounds::{masking_reduces_gap_demo, run_theory_sweeps, SweepCounts};
use m2ac_core::env::NoisePreset;
use m2ac_core::harness::{
    export_curves, run_ablation_suite, run_experiment, AblationAxis, Algorithm, ExperimentConfig,
};
use m2ac_core::model::UncertaintyEstimator;
use m2ac_core::rollout::{MaskSchedule, RolloutMode};

#[derive(Parser)]
#[command(
    name = "m2ac",
    about = "Masked model-based actor-critic: training, ablations, and exact bound verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training experiment and write metrics/checkpoints.
    Train(TrainArgs),
    /// Run a one-axis ablation grid over shared seeds.
    Ablate(AblateArgs),
    /// Randomized exact verification of the finite-MDP bounds.
    VerifyBounds(VerifyArgs),
    /// Merge seeded metrics files into a plot-ready CSV.
    ExportCurves(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    None,
    Noisy0,
    Noisy1,
    Noisy2,
}

impl From<NoiseArg> for NoisePreset {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::None => NoisePreset::None,
            NoiseArg::Noisy0 => NoisePreset::Noisy0,
            NoiseArg::Noisy1 => NoisePreset::Noisy1,
            NoiseArg::Noisy2 => NoisePreset::Noisy2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    M2ac,
    SacOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    NonStop,
    HardStop,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Ovr,
    Ova,
    NegLikelihood,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Alpha,
    Mode,
    Estimator,
    MaskingRate,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config; flags below override individual fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset when no config file is given: desk or appendix.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value = "pendulum")]
    env: String,
    #[arg(long)]
    noise: Option<NoiseArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    algorithm: Option<AlgorithmArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    env_steps_per_epoch: Option<usize>,
    #[arg(long)]
    policy_updates_per_epoch: Option<usize>,
    #[arg(long)]
    rollout_batch: Option<usize>,
    #[arg(long)]
    h_max: Option<usize>,
    /// Constant masking rate; omit to keep the decaying linear schedule.
    #[arg(long)]
    masking_rate: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    mode: Option<ModeArg>,
    #[arg(long)]
    estimator: Option<EstimatorArg>,
    #[arg(long)]
    ensemble_members: Option<usize>,
    #[arg(long)]
    real_ratio: Option<f64>,
    /// Progress-print interval in epochs (0 = silent).
    #[arg(long)]
    log_interval: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                ExperimentConfig::from_json(&text)?
            }
            None => match self.preset.as_str() {
                "desk" => ExperimentConfig::desk(&self.env, 0),
                "appendix" => ExperimentConfig::appendix(&self.env, self.h_max.unwrap_or(1), 0)?,
                other => bail!("unknown preset {other:?} (known: desk, appendix)"),
            },
        };
        if self.config.is_none() {
            cfg.env_id = self.env.clone();
        }
        if let Some(n) = self.noise {
            cfg.noise = n.into();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = self.algorithm {
            cfg.algorithm = match a {
                AlgorithmArg::M2ac => Algorithm::M2ac,
                AlgorithmArg::SacOnly => Algorithm::SacOnly,
            };
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(v) = self.env_steps_per_epoch {
            cfg.env_steps_per_epoch = v;
        }
        if let Some(v) = self.policy_updates_per_epoch {
            cfg.policy_updates_per_epoch = v;
        }
        if let Some(v) = self.rollout_batch {
            cfg.rollout_batch = v;
        }
        if let Some(h) = self.h_max {
            cfg.rollout.h_max = h;
        }
        if let Some(w) = self.masking_rate {
            cfg.rollout.schedule = MaskSchedule::Constant(w);
        }
        if let Some(a) = self.alpha {
            cfg.rollout.alpha = a;
        }
        if let Some(m) = self.mode {
            cfg.rollout.mode = match m {
                ModeArg::NonStop => RolloutMode::NonStop,
                ModeArg::HardStop => RolloutMode::HardStop,
            };
        }
        if let Some(e) = self.estimator {
            cfg.rollout.estimator = match e {
                EstimatorArg::Ovr => UncertaintyEstimator::OneVsRest,
                EstimatorArg::Ova => UncertaintyEstimator::OneVsAll,
                EstimatorArg::NegLikelihood => UncertaintyEstimator::NegLikelihood,
            };
        }
        if let Some(k) = self.ensemble_members {
            cfg.model.members = k;
        }
        if let Some(r) = self.real_ratio {
            cfg.real_ratio = r;
        }
        if let Some(l) = self.log_interval {
            cfg.log_interval = l;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for metrics.jsonl and checkpoints.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also dump collected real transitions as JSON-lines.
    #[arg(long)]
    dump_trajectories: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    axis: AxisArg,
    /// Comma-separated seed list shared across cells.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    /// Where to write the JSON comparison table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Instances per theorem family (lemma 2/3 runs at half this count).
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Crafted instances for the masking-reduces-gap demonstration.
    #[arg(long, default_value_t = 100)]
    masking_demo: usize,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// metrics.jsonl files from seeded runs of one configuration.
    #[arg(long, required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Output CSV path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = args.config.build()?;
    cfg.out_dir = args.out_dir;
    cfg.dump_trajectories = args.dump_trajectories;
    if cfg.log_interval == 0 {
        cfg.log_interval = 1;
    }
    let result = run_experiment(&cfg)?;
    let last = result
        .metrics
        .last()
        .context("run produced no metrics")?;
    println!(
        "final: epoch {} env_steps {} eval_return {:.2} (+/- {:.2})",
        last.epoch, last.env_steps, last.eval_return_mean, last.eval_return_std
    );
    if let Some(dir) = &cfg.out_dir {
        println!("metrics: {}", dir.join("metrics.jsonl").display());
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> anyhow::Result<()> {
    let base = args.config.build()?;
    let axis = match args.axis {
        AxisArg::Alpha => AblationAxis::Alpha,
        AxisArg::Mode => AblationAxis::Mode,
        AxisArg::Estimator => AblationAxis::Estimator,
        AxisArg::MaskingRate => AblationAxis::MaskingRate,
    };
    let table = run_ablation_suite(&base, axis, &args.seeds)?;
    for cell in &table.cells {
        println!(
            "{:20} {:10.2} +/- {:.2}",
            cell.label, cell.mean_final_return, cell.std_final_return
        );
    }
    if let Some(path) = args.out {
        fs::write(&path, serde_json::to_string_pretty(&table)?)?;
        println!("table: {}", path.display());
    }
    Ok(())
}

fn cmd_verify_bounds(args: VerifyArgs) -> anyhow::Result<()> {
    let counts = SweepCounts {
        lemma1: args.instances,
        lemma23: args.instances / 2,
        theorem1: args.instances,
        theorem2: args.instances,
        corollary1: args.instances,
    };
    let report = run_theory_sweeps(counts, args.seed)?;
    for fam in &report.families {
        println!(
            "{:32} instances {:5} violations {:2} min_slack {:+.3e} ({} ms)",
            fam.family, fam.instances, fam.violations, fam.min_slack, fam.elapsed_ms
        );
    }
    let demo = if args.masking_demo > 0 {
        let d = masking_reduces_gap_demo(args.masking_demo, args.seed)?;
        println!(
            "masking_reduces_gap: monotone {}/{}, gap halved {}/{}",
            d.monotone_ok, d.instances, d.gap_halved, d.instances
        );
        Some(d)
    } else {
        None
    };
    if let Some(path) = args.out {
        let payload = serde_json::json!({
            "sweeps": report,
            "masking_demo": demo,
        });
        fs::write(&path, serde_json::to_string_pretty(&payload)?)?;
        println!("report: {}", path.display());
    }
    if report.total_violations() > 0 {
        bail!("{} bound violations detected", report.total_violations());
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> anyhow::Result<()> {
    let table = export_curves(&args.inputs)?;
    let csv = table.to_csv();
    match args.out {
        Some(path) => {
            fs::write(&path, csv)?;
            println!("curves: {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::VerifyBounds(args) => cmd_verify_bounds(args),
        Command::ExportCurves(args) => cmd_export(args),
    }
}
