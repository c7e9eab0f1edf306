use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use mmlstm::datagen::{self, GeneratorConfig, Scenario, Sequence, SplitKind, SplitSpec};
use mmlstm::harness::{self, gradcheck, DecisionRule, ModalitySource, Pipeline, TrainConfig};
use mmlstm::loss::Weighting;
use mmlstm::model::Architecture;

#[derive(Parser)]
#[command(name = "mmlstm", version, about = "Multi-modal LSTM action anticipation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic driving dataset.
    Gen(GenArgs),
    /// Train a model on the training part of a split.
    Train(TrainArgs),
    /// Evaluate a saved model on the test part of a split.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite; exits 0 iff every check passes.
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Scenario preset: dm, tr, ac, pi or fci.
    #[arg(long, default_value = "dm", value_parser = parse_scenario)]
    scenario: Scenario,
    /// Defaults to the preset's class count.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 600)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Make class identity depend on appearance and motion jointly.
    #[arg(long)]
    cross_modal: bool,
    /// Appearance/motion noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
    /// Width of the appearance and motion blocks.
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Generate on one thread (output is identical either way).
    #[arg(long)]
    serial: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Mm,
    Single,
    Ms2,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingKind {
    Sigmoid,
    Linear,
    Uniform,
}

#[derive(clap::Args)]
struct SplitArgs {
    #[arg(long, value_enum, default_value = "random")]
    split: SplitArg,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Random,
    Daytime,
    Weather,
}

impl SplitArgs {
    fn spec(&self) -> SplitSpec {
        let kind = match self.split {
            SplitArg::Random => SplitKind::Random,
            SplitArg::Daytime => SplitKind::Daytime,
            SplitArg::Weather => SplitKind::Weather,
        };
        SplitSpec::of_kind(kind, self.split_seed)
    }
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, value_enum, default_value = "mm")]
    model: ModelKind,
    /// Comma-separated inputs: appearance, motion, steering, speed.
    #[arg(long, default_value = "appearance,motion,steering,speed", value_delimiter = ',', value_parser = parse_source)]
    modalities: Vec<ModalitySource>,
    #[arg(long, value_enum, default_value = "sigmoid")]
    weighting: WeightingKind,
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    #[arg(long, default_value_t = 6.0)]
    beta: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for model.mmw, model.json and train_log.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Comma-separated horizons in seconds.
    #[arg(long, default_value = "1,2,3,4,5", value_delimiter = ',')]
    horizons: Vec<f64>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Decide from the last frame alone instead of the pooled average.
    #[arg(long)]
    per_frame: bool,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    /// Random seeds per layer/loss check.
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    /// Well-conditioned instances per architecture.
    #[arg(long, default_value_t = 5)]
    model_instances: usize,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::from_tag(s).ok_or_else(|| format!("unknown scenario {s:?} (dm, tr, ac, pi, fci)"))
}

fn parse_source(s: &str) -> Result<ModalitySource, String> {
    match s.trim() {
        "appearance" => Ok(ModalitySource::Feature(0)),
        "motion" => Ok(ModalitySource::Feature(1)),
        "steering" => Ok(ModalitySource::Steering),
        "speed" => Ok(ModalitySource::Speed),
        other => Err(format!("unknown modality {other:?}")),
    }
}

fn echo(value: serde_json::Value) {
    println!("{}", serde_json::to_string(&value).expect("json"));
}

fn gen(args: GenArgs) -> Result<()> {
    let mut cfg = GeneratorConfig::for_scenario(args.scenario);
    if let Some(c) = args.classes {
        cfg.num_classes = c;
    }
    cfg.samples_per_class = args.per_class;
    cfg.seed = args.seed;
    cfg.cross_modal_coding = args.cross_modal;
    if let Some(n) = args.noise {
        cfg.noise_sigma = n;
    }
    if let Some(d) = args.feature_dim {
        cfg.appearance_dim = d;
        cfg.motion_dim = d;
    }
    echo(json!({ "command": "gen", "out": args.out, "serial": args.serial, "generator": cfg }));
    let seqs = if args.serial {
        datagen::generate_dataset(&cfg)?
    } else {
        datagen::generate_dataset_parallel(&cfg)?
    };
    datagen::write_dataset(&seqs, &args.out)?;
    log::info!("wrote {} sequences to {}", seqs.len(), args.out.display());
    Ok(())
}

/// Stage 1 takes the visual streams, stage 2 the vehicle-dynamics streams.
fn two_stage_groups(sources: &[ModalitySource]) -> Result<[Vec<usize>; 2]> {
    let (visual, vehicle): (Vec<usize>, Vec<usize>) =
        (0..sources.len()).partition(|&i| matches!(sources[i], ModalitySource::Feature(_)));
    if visual.is_empty() || vehicle.is_empty() {
        bail!("ms2 needs at least one visual and one vehicle-dynamics modality");
    }
    Ok([visual, vehicle])
}

fn train(args: TrainArgs) -> Result<()> {
    let data = datagen::read_dataset(&args.data)?;
    let mut cfg = TrainConfig {
        sources: args.modalities.clone(),
        seed: args.seed,
        ..TrainConfig::default()
    };
    cfg.architecture = match args.model {
        ModelKind::Mm => Architecture::MmLstm,
        ModelKind::Single => Architecture::SingleStream,
        ModelKind::Ms2 => Architecture::TwoStage {
            groups: two_stage_groups(&cfg.sources)?,
        },
    };
    cfg.weighting = match args.weighting {
        WeightingKind::Sigmoid => Weighting::Sigmoid {
            alpha: args.alpha,
            beta: args.beta,
        },
        WeightingKind::Linear => Weighting::Linear,
        WeightingKind::Uniform => Weighting::Uniform,
    };
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    if let Some(h) = args.hidden {
        cfg.hidden = h;
    }
    let spec = args.split.spec();
    echo(json!({ "command": "train", "data": args.data, "out": args.out, "split": spec, "train": cfg }));
    let (pipeline, log) = harness::train(&cfg, &data, &spec)?;
    pipeline.save(&args.out)?;
    let log_path = args.out.join("train_log.json");
    std::fs::write(&log_path, serde_json::to_string_pretty(&log)? + "\n")
        .with_context(|| format!("writing {}", log_path.display()))?;
    if let Some(last) = log.epochs.last() {
        log::info!(
            "{} epochs in {:.1}s, final loss {:.4}, best epoch {:?}",
            log.epochs.len(),
            log.wall_clock_s,
            last.train_loss,
            log.best_epoch
        );
    }
    Ok(())
}

fn test_part<'a>(data: &'a [Sequence], spec: &SplitSpec) -> Result<Vec<&'a Sequence>> {
    let parts = datagen::split(data, spec)?;
    Ok(parts.test.iter().map(|&i| &data[i]).collect())
}

fn eval(args: EvalArgs) -> Result<()> {
    let pipeline = Pipeline::load(&args.model)?;
    let data = datagen::read_dataset(&args.data)?;
    let spec = args.split.spec();
    let rule = if args.per_frame {
        DecisionRule::PerFrame
    } else {
        DecisionRule::Pooled
    };
    echo(json!({
        "command": "eval",
        "model": args.model,
        "data": args.data,
        "split": spec,
        "horizons": args.horizons,
        "decision": rule,
        "report_dir": args.report_dir,
    }));
    let test = test_part(&data, &spec)?;
    let report = harness::evaluate_with(&pipeline, &test, &args.horizons, rule)?;
    for (h, a) in report.horizons.iter().zip(&report.accuracy_at) {
        eprintln!("{h:>5}s  {:.2}%", 100.0 * a);
    }
    if let Some(dir) = &args.report_dir {
        harness::write_report(&report, dir)?;
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<bool> {
    echo(json!({ "command": "gradcheck", "seeds": args.seeds, "model_instances": args.model_instances }));
    let start = Instant::now();
    let suite = gradcheck::run_suite(args.seeds, args.model_instances)?;
    let mut ok = true;
    for entry in &suite {
        let status = if entry.passed { "PASS" } else { "FAIL" };
        eprintln!(
            "{status} {:<18} checks={:<4} max_rel_err={:.3e} tol={:.0e}",
            entry.name, entry.checks, entry.max_relative_error, entry.tolerance
        );
        if let Some(d) = &entry.diagnostic {
            eprintln!("     {d}");
        }
        ok &= entry.passed;
    }
    eprintln!("gradcheck finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(a) => gen(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

fn one_line(e: &anyhow::Error) -> String {
    e.chain()
        .map(|c| c.to_string().replace('\n', " "))
        .collect::<Vec<_>>()
        .join(": ")
}
