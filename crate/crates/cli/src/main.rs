//! Command-line harness around the core library: train models, evaluate
//! checkpoints, verify gradients against finite differences, count
//! attention parameters, and benchmark block latency.
//!
//! Exit codes: 0 success, 1 verification or internal failure, 2 config
//! error, 3 data error, 4 checkpoint error.

use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use tripse_core::{
    evaluate, gradcheck_backbone, gradcheck_block, no_grad, run_training, sig6, AttentionBlock,
    AttentionKind, Error, MiniBackbone, Result, RunConfig, Tensor, DEFAULT_TOL,
};

#[derive(Parser)]
#[command(
    name = "tripse",
    version,
    about = "Train and inspect miniature CNNs with SE / triplet / TripSE attention"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train per a run-config file; trailing --key=value overrides win.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one data split.
    Eval(EvalArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Count attention parameters for a variant and width plan.
    Params(ParamsArgs),
    /// Measure forward latency of one attention block.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run-config file of `key = value` lines (# comments allowed).
    config: PathBuf,
    /// Full training checkpoint (last.tsew) to resume from. Place this flag
    /// before any overrides.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Overrides such as --attention=tripse4 --se-ratio=1, applied after
    /// the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Weight checkpoint (best.tsew, or a full last.tsew).
    checkpoint: PathBuf,
    /// Run-config file describing the data and model; defaults apply when
    /// omitted. Place flags before any overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Split to score: train, val, or test. The source CSV's own names
    /// Training, PublicTest, and PrivateTest are accepted as aliases.
    #[arg(long, default_value = "val")]
    split: String,
    /// Overrides such as --data=synth, applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Attention variant: none, se, ta, tripse1..tripse4.
    #[arg(long, default_value = "se")]
    variant: String,
    /// Gate convolution kernel size.
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    /// SE reduction ratio. The small default keeps sigmoid gates responsive
    /// at finite-difference scale.
    #[arg(long, default_value_t = 2)]
    ratio: usize,
    /// Input shape N,C,H,W for the single-block check.
    #[arg(long, default_value = "1,4,5,5")]
    shape: String,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Check a small end-to-end host network instead of a single block.
    #[arg(long)]
    backbone: bool,
    /// Negative control: falsify one analytic gradient value so the check
    /// must fail.
    #[arg(long, hide = true)]
    corrupt_backward: bool,
}

#[derive(Args)]
struct ParamsArgs {
    /// Attention variant: none, se, ta, tripse1..tripse4.
    #[arg(long, default_value = "tripse1")]
    variant: String,
    /// Four comma-separated stage widths.
    #[arg(long, default_value = "96,192,384,768")]
    widths: String,
    /// SE reduction ratio.
    #[arg(long, default_value_t = 16)]
    ratio: usize,
    /// Gate convolution kernel size.
    #[arg(long, default_value_t = 7)]
    kernel: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Attention variant: none, se, ta, tripse1..tripse4.
    #[arg(long, default_value = "ta")]
    variant: String,
    /// Input shape N,C,H,W.
    #[arg(long, default_value = "8,64,28,28")]
    shape: String,
    /// Timed iterations after the 10-iteration warmup.
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// Gate convolution kernel size.
    #[arg(long, default_value_t = 7)]
    kernel: usize,
    /// SE reduction ratio.
    #[arg(long, default_value_t = 16)]
    ratio: usize,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::DegenerateBatch => 3,
        Error::Checkpoint(_) | Error::Format(_) => 4,
        _ => 1,
    }
}

fn parse_shape4(text: &str) -> Result<(usize, usize, usize, usize)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::Config(format!(
            "shape must be N,C,H,W; got \"{text}\""
        )));
    }
    let mut dims = [0usize; 4];
    for (d, p) in dims.iter_mut().zip(&parts) {
        *d = p
            .parse()
            .map_err(|e| Error::Config(format!("shape component \"{p}\": {e}")))?;
        if *d == 0 {
            return Err(Error::Config("shape components must be >= 1".into()));
        }
    }
    Ok((dims[0], dims[1], dims[2], dims[3]))
}

fn parse_widths4(text: &str) -> Result<[usize; 4]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::Config(format!(
            "widths must be four comma-separated integers; got \"{text}\""
        )));
    }
    let mut widths = [0usize; 4];
    for (w, p) in widths.iter_mut().zip(&parts) {
        *w = p
            .parse()
            .map_err(|e| Error::Config(format!("width \"{p}\": {e}")))?;
    }
    Ok(widths)
}

fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = path {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for ov in overrides {
        cfg.apply_override(ov)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(Some(&args.config), &args.overrides)?;
    let backbone = cfg.to_backbone()?;
    let plan = cfg.to_plan()?;
    let out_dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("config.resolved"), cfg.resolved())?;
    let (train, val, _test) = cfg.load_data::<f32>()?;
    let model = MiniBackbone::<f32>::build(&backbone)?;
    let report = run_training(
        &model,
        &train,
        &val,
        &plan,
        Some(&out_dir),
        args.resume.as_deref(),
    )?;
    println!(
        "best_val_acc={} epoch={}",
        sig6(report.best_val_acc),
        report.best_epoch
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(args.config.as_ref(), &args.overrides)?;
    let model = MiniBackbone::<f32>::build(&cfg.to_backbone()?)?;
    let file = fs::File::open(&args.checkpoint).map_err(|e| {
        Error::Checkpoint(format!("cannot open {}: {e}", args.checkpoint.display()))
    })?;
    model.load_weights(&mut BufReader::new(file))?;
    let (train, val, test) = cfg.load_data::<f32>()?;
    let data = match args.split.as_str() {
        "train" | "Training" => train,
        "val" | "PublicTest" => val,
        "test" | "PrivateTest" => test,
        other => {
            return Err(Error::Config(format!(
                "unknown split \"{other}\" (expected train, val, test, Training, PublicTest, or PrivateTest)"
            )))
        }
    };
    if data.is_empty() {
        return Err(Error::Data(format!("split {} is empty", args.split)));
    }
    let report = evaluate(&model, &data, cfg.batch_size)?;
    println!("accuracy={} n={}", sig6(report.accuracy), report.n);
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let kind: AttentionKind = args.variant.parse()?;
    let report = if args.backbone {
        gradcheck_backbone(kind, args.ratio, args.kernel, args.eps, args.corrupt_backward)?
    } else {
        let shape = parse_shape4(&args.shape)?;
        gradcheck_block(
            kind,
            shape,
            args.ratio,
            args.kernel,
            args.eps,
            args.corrupt_backward,
        )?
    };
    let mut failures = 0usize;
    for (name, err) in &report {
        println!("{name} {}", sig6(*err));
        if *err > DEFAULT_TOL {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::Verification(format!(
            "{failures} of {} parameters exceed tolerance {DEFAULT_TOL:e}",
            report.len()
        )));
    }
    println!("ok: {} parameters within {DEFAULT_TOL:e}", report.len());
    Ok(())
}

/// Spatial extents per stage when counting parameters: a 224-square input
/// through a stride-4 stem and three stride-2 stages. Only variants whose
/// SE layers act on rotated tensors are sensitive to these.
const REFERENCE_SIDES: [usize; 4] = [56, 28, 14, 7];

fn cmd_params(args: ParamsArgs) -> Result<()> {
    let kind: AttentionKind = args.variant.parse()?;
    let widths = parse_widths4(&args.widths)?;
    println!("variant {kind}  ratio {}  kernel {}", args.ratio, args.kernel);
    let mut total = 0usize;
    for (i, (&width, &side)) in widths.iter().zip(&REFERENCE_SIDES).enumerate() {
        let blk: AttentionBlock<f32> =
            AttentionBlock::new(kind, (width, side, side), args.ratio, args.kernel, 0)?;
        let n = blk.param_count();
        total += n;
        println!("stage{} width {width}: {n}", i + 1);
    }
    println!("total {total} ({:.1}M)", total as f64 / 1e6);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if args.iters == 0 {
        return Err(Error::Config("iters must be >= 1".into()));
    }
    let kind: AttentionKind = args.variant.parse()?;
    let (n, c, h, w) = parse_shape4(&args.shape)?;
    let blk: AttentionBlock<f32> =
        AttentionBlock::new(kind, (c, h, w), args.ratio, args.kernel, 0)?;
    let x = Tensor::<f32>::randn(&[n, c, h, w], 0.0, 1.0, 1)?;
    println!(
        "variant {kind}  shape {n}x{c}x{h}x{w}  params {}",
        blk.param_count()
    );
    no_grad(|| -> Result<()> {
        for _ in 0..10 {
            blk.forward(&x, false)?;
        }
        let mut times = Vec::with_capacity(args.iters);
        for _ in 0..args.iters {
            let t0 = Instant::now();
            blk.forward(&x, false)?;
            times.push(t0.elapsed().as_nanos() as u64);
        }
        let mean = times.iter().sum::<u64>() as f64 / times.len() as f64;
        let min = times.iter().min().copied().unwrap_or(0);
        println!("iters {}  warmup 10", args.iters);
        println!("mean {mean:.0} ns/iter  min {min} ns/iter");
        println!("throughput {:.1} samples/s", n as f64 * 1e9 / mean);
        Ok(())
    })
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Gradcheck(args) => cmd_gradcheck(args),
        Cmd::Params(args) => cmd_params(args),
        Cmd::Bench(args) => cmd_bench(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
