//! Command-line front end: complexity analysis, gradient checking, toy
//! training, and forward-pass benchmarking, all emitting the shared report
//! envelope in text or JSON.
//!
//! Exit codes: 0 success, 1 gradient check over tolerance, 2 configuration
//! or input error, 3 non-finite numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use emattn::attention::EmaVariant;
use emattn::{
    attach_attention, build_backbone, grad_check_attention, run_bench, train_toy,
    AttentionConfig, AttentionKind, BenchConfig, CheckTarget, Error, Report, ReportFormat,
    Result, ToyNet, TrainConfig,
};

const GRADCHECK_BATCH: usize = 2;
const GRADCHECK_CHANNELS: usize = 8;
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "emattn",
    version,
    about = "Analyze, verify, train, and time CNN attention modules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count parameters and MACs for a backbone, optionally with attention attached
    Analyze(AnalyzeArgs),
    /// Compare tape gradients of an attention module against finite differences
    Gradcheck(GradcheckArgs),
    /// Train the toy net on the synthetic quadrant task or a CIFAR-100 subset
    Train(TrainArgs),
    /// Time the EMA forward pass over backbone stage shapes
    Bench(BenchArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Report format: text or json
    #[arg(long, default_value = "text")]
    format: String,
    /// Write the report to this file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every stochastic choice the subcommand makes
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Backbone: resnet50-cifar, resnet101-cifar, or mobilenetv2
    #[arg(long, default_value = "resnet50-cifar")]
    backbone: String,
    /// Attention module to attach: none, ema, ca, or se
    #[arg(long, default_value = "none")]
    attention: String,
    /// EMA group count (default 32; only valid with --attention ema)
    #[arg(long)]
    groups: Option<usize>,
    /// CA/SE reduction ratio (defaults: ca 32, se 16)
    #[arg(long)]
    reduction: Option<usize>,
    /// Classifier width (defaults: 100 for the CIFAR ResNets, 1000 for MobileNetV2)
    #[arg(long)]
    classes: Option<usize>,
    /// Input resolution as HxW (defaults: 32x32 for the CIFAR ResNets, 224x224 for MobileNetV2)
    #[arg(long, value_name = "HxW")]
    input_hw: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Module to check: ema, ca, or se
    #[arg(long, default_value = "ema")]
    attention: String,
    /// EMA group count (only valid with --attention ema)
    #[arg(long)]
    groups: Option<usize>,
    /// CA/SE reduction ratio (only valid with --attention ca or se)
    #[arg(long)]
    reduction: Option<usize>,
    /// EMA variant: full or no_cross_spatial
    #[arg(long, default_value = "full")]
    variant: String,
    /// Check resolution as HxW; batch 2 and 8 channels are fixed
    #[arg(long, value_name = "HxW", default_value = "5x7")]
    input_hw: String,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// "synthetic" for the built-in quadrant task, or a CIFAR-100 binary path
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    /// Attention inside the toy net: none, ema, ca, or se
    #[arg(long, default_value = "ema")]
    attention: String,
    /// EMA group count (default 8; the toy trunk is 16 channels wide)
    #[arg(long)]
    groups: Option<usize>,
    /// CA/SE reduction ratio (default 4)
    #[arg(long)]
    reduction: Option<usize>,
    /// EMA variant: full or no_cross_spatial
    #[arg(long, default_value = "full")]
    variant: String,
    /// Optimizer steps
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Learning rate
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Class count (synthetic task is fixed at 4; CIFAR-100 at 100)
    #[arg(long)]
    classes: Option<usize>,
    /// Synthetic image extent as HxW
    #[arg(long, value_name = "HxW", default_value = "12x12")]
    input_hw: String,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// EMA group count shared by every timed shape
    #[arg(long, default_value_t = 32)]
    groups: usize,
    /// Spatial extent of the first stage; later stages halve it
    #[arg(long, value_name = "HxW", default_value = "32x32")]
    input_hw: String,
    /// Timing repetitions per shape (5 extra warmup calls are not timed)
    #[arg(long, default_value_t = 30)]
    steps: usize,
    #[command(flatten)]
    common: CommonArgs,
}

fn parse_hw(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::Config(format!("expected HxW, got {s:?}")))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("expected HxW with positive integers, got {s:?}")))
    };
    let (h, w) = (parse(h)?, parse(w)?);
    if h == 0 || w == 0 {
        return Err(Error::Config(format!("spatial extent must be >= 1, got {s:?}")));
    }
    Ok((h, w))
}

fn parse_attention(s: &str) -> Result<Option<AttentionKind>> {
    match s {
        "none" => Ok(None),
        "ema" => Ok(Some(AttentionKind::Ema)),
        "ca" => Ok(Some(AttentionKind::Ca)),
        "se" => Ok(Some(AttentionKind::Se)),
        other => Err(Error::Config(format!(
            "unknown attention kind {other:?}; expected none, ema, ca, or se"
        ))),
    }
}

fn parse_variant(s: &str) -> Result<EmaVariant> {
    match s {
        "full" => Ok(EmaVariant::Full),
        "no_cross_spatial" => Ok(EmaVariant::NoCrossSpatial),
        other => Err(Error::Config(format!(
            "unknown variant {other:?}; expected full or no_cross_spatial"
        ))),
    }
}

/// Resolve --groups/--reduction against the module kind: the flag that does
/// not belong to the kind must stay unset, and the one that does falls back
/// to `default` when omitted.
fn resolve_hyper(
    kind: Option<AttentionKind>,
    groups: Option<usize>,
    reduction: Option<usize>,
    default: usize,
) -> Result<Option<usize>> {
    match kind {
        None => {
            if groups.is_some() || reduction.is_some() {
                return Err(Error::Config(
                    "--groups/--reduction require an attention module".into(),
                ));
            }
            Ok(None)
        }
        Some(AttentionKind::Ema) => {
            if reduction.is_some() {
                return Err(Error::Config("--reduction does not apply to ema; use --groups".into()));
            }
            Ok(Some(groups.unwrap_or(default)))
        }
        Some(AttentionKind::Ca) | Some(AttentionKind::Se) => {
            if groups.is_some() {
                return Err(Error::Config("--groups only applies to ema; use --reduction".into()));
            }
            Ok(Some(reduction.unwrap_or(default)))
        }
    }
}

fn emit(report: &Report, common: &CommonArgs) -> Result<()> {
    let format: ReportFormat = common.format.parse()?;
    let rendered = report.render(format)?;
    match &common.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<u8> {
    let kind = parse_attention(&args.attention)?;
    let default_hyper = kind.map(AttentionKind::default_hyper).unwrap_or(0);
    let hyper = resolve_hyper(kind, args.groups, args.reduction, default_hyper)?;
    let classes = args.classes.unwrap_or(if args.backbone == "mobilenetv2" { 1000 } else { 100 });
    let base = build_backbone(&args.backbone, classes)?;
    let input_hw = match &args.input_hw {
        Some(s) => parse_hw(s)?,
        None => base.default_hw,
    };
    let graph = match (kind, hyper) {
        (Some(k), Some(h)) => attach_attention(&base, k, h)?,
        _ => base,
    };
    let complexity = graph.complexity(input_hw)?;
    let echo = json!({
        "backbone": args.backbone,
        "attention": args.attention,
        "groups": if matches!(kind, Some(AttentionKind::Ema)) { hyper } else { None },
        "reduction": if matches!(kind, Some(AttentionKind::Ca) | Some(AttentionKind::Se)) { hyper } else { None },
        "classes": classes,
        "input_hw": format!("{}x{}", input_hw.0, input_hw.1),
        "seed": args.common.seed,
        "format": args.common.format,
    });
    let report = Report::new("analyze", echo, serde_json::to_value(&complexity)
        .map_err(|e| Error::Format(format!("result serialization failed: {e}")))?);
    emit(&report, &args.common)?;
    Ok(0)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<u8> {
    let kind = parse_attention(&args.attention)?
        .ok_or_else(|| Error::Config("gradcheck needs an attention module, not none".into()))?;
    let hyper = resolve_hyper(Some(kind), args.groups, args.reduction, 4)?.unwrap_or(4);
    let variant = parse_variant(&args.variant)?;
    if kind != AttentionKind::Ema && args.variant != "full" {
        return Err(Error::Config("--variant only applies to ema".into()));
    }
    let (h, w) = parse_hw(&args.input_hw)?;
    let target = match kind {
        AttentionKind::Ema => CheckTarget::Ema { groups: hyper, variant },
        AttentionKind::Ca => CheckTarget::Ca { reduction: hyper },
        AttentionKind::Se => CheckTarget::Se { reduction: hyper },
    };
    let check = grad_check_attention(
        target,
        GRADCHECK_BATCH,
        GRADCHECK_CHANNELS,
        h,
        w,
        args.common.seed,
        GRADCHECK_STEP,
        GRADCHECK_TOLERANCE,
    )?;
    let pass = check.pass;
    let echo = json!({
        "attention": args.attention,
        "groups": if kind == AttentionKind::Ema { Some(hyper) } else { None },
        "reduction": if kind != AttentionKind::Ema { Some(hyper) } else { None },
        "variant": args.variant,
        "batch": GRADCHECK_BATCH,
        "channels": GRADCHECK_CHANNELS,
        "input_hw": format!("{h}x{w}"),
        "step": GRADCHECK_STEP,
        "tolerance": GRADCHECK_TOLERANCE,
        "seed": args.common.seed,
        "format": args.common.format,
    });
    let report = Report::new("gradcheck", echo, serde_json::to_value(&check)
        .map_err(|e| Error::Format(format!("result serialization failed: {e}")))?);
    emit(&report, &args.common)?;
    Ok(if pass { 0 } else { 1 })
}

fn cmd_train(args: &TrainArgs) -> Result<u8> {
    let kind = parse_attention(&args.attention)?;
    let hyper = resolve_hyper(kind, args.groups, args.reduction, if kind == Some(AttentionKind::Ema) { 8 } else { 4 })?;
    let variant = parse_variant(&args.variant)?;
    if kind != Some(AttentionKind::Ema) && args.variant != "full" {
        return Err(Error::Config("--variant only applies to ema".into()));
    }
    let attention = match (kind, hyper) {
        (None, _) => AttentionConfig::None,
        (Some(AttentionKind::Ema), Some(g)) => AttentionConfig::Ema { groups: g, variant },
        (Some(AttentionKind::Ca), Some(r)) => AttentionConfig::Ca { reduction: r },
        (Some(AttentionKind::Se), Some(r)) => AttentionConfig::Se { reduction: r },
        _ => unreachable!("resolve_hyper returns Some for every module kind"),
    };
    let (h, w) = parse_hw(&args.input_hw)?;
    let seed = args.common.seed;
    let (train, val, classes) = if args.dataset == "synthetic" {
        let classes = args.classes.unwrap_or(4);
        if classes != 4 {
            return Err(Error::Config("the synthetic quadrant task always has 4 classes".into()));
        }
        (
            emattn::synth_quadrant(2000, h, w, seed.wrapping_add(1))?,
            emattn::synth_quadrant(500, h, w, seed.wrapping_add(2))?,
            classes,
        )
    } else {
        let classes = args.classes.unwrap_or(100);
        if classes != 100 {
            return Err(Error::Config("CIFAR-100 fine labels always span 100 classes".into()));
        }
        (
            emattn::load_cifar100(&args.dataset, emattn::Split::Train, Some(2000))?,
            emattn::load_cifar100(&args.dataset, emattn::Split::Test, Some(500))?,
            classes,
        )
    };
    let mut net = ToyNet::build(attention, classes, seed)?;
    let cfg = TrainConfig { steps: args.steps, lr: args.lr, seed, ..TrainConfig::default() };
    let result = train_toy(&mut net, &train, &val, &cfg)?;
    let echo = json!({
        "dataset": args.dataset,
        "attention": args.attention,
        "groups": if kind == Some(AttentionKind::Ema) { hyper } else { None },
        "reduction": if matches!(kind, Some(AttentionKind::Ca) | Some(AttentionKind::Se)) { hyper } else { None },
        "variant": args.variant,
        "steps": args.steps,
        "batch": cfg.batch,
        "lr": args.lr,
        "momentum": cfg.momentum,
        "weight_decay": cfg.weight_decay,
        "classes": classes,
        "input_hw": format!("{h}x{w}"),
        "seed": seed,
        "format": args.common.format,
    });
    let report = Report::new("train", echo, serde_json::to_value(&result)
        .map_err(|e| Error::Format(format!("result serialization failed: {e}")))?);
    emit(&report, &args.common)?;
    Ok(0)
}

fn cmd_bench(args: &BenchArgs) -> Result<u8> {
    let input_hw = parse_hw(&args.input_hw)?;
    let cfg = BenchConfig {
        groups: args.groups,
        input_hw,
        reps: args.steps,
        seed: args.common.seed,
        ..BenchConfig::default()
    };
    let result = run_bench(&cfg)?;
    let echo = json!({
        "channels": cfg.channels,
        "groups": cfg.groups,
        "input_hw": format!("{}x{}", input_hw.0, input_hw.1),
        "reps": cfg.reps,
        "warmup": cfg.warmup,
        "seed": cfg.seed,
        "format": args.common.format,
    });
    let report = Report::new("bench", echo, serde_json::to_value(&result)
        .map_err(|e| Error::Format(format!("result serialization failed: {e}")))?);
    emit(&report, &args.common)?;
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Train(args) => cmd_train(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Numeric(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}
