use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mrestore::analysis::{count_costs, evaluate, format_eval_table, fusion_params, mean_row};
use mrestore::blocks::{FusionKind, Model, ModelConfig};
use mrestore::checkpoint;
use mrestore::config::RunConfig;
use mrestore::data::{dual_pixel_concat, load_image, load_pairs, save_image, Dataset, ImagePair, Task};
use mrestore::train::{log, train_loop, TrainState};
use mrestore::{DType, Error};

/// Multi-scale residual image restoration.
#[derive(Parser, Debug)]
#[command(name = "mrestore", version)]
struct Cli {
    /// Seed for weight init, batch sampling and synthetic data (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded, fully deterministic execution.
    #[arg(long, global = true)]
    sequential: bool,
    /// Compute in 64-bit floats.
    #[arg(long, global = true)]
    f64: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes checkpoint.erck, metrics.tsv and config.toml to the output directory.
    Train(TrainArgs),
    /// Restore one image (two for dual-pixel models).
    Infer(InferArgs),
    /// Score a model, or the degraded inputs alone, on a paired dataset.
    Eval(EvalArgs),
    /// Report parameters, FLOPs, conv and activation counts.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    config: PathBuf,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint holding training state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Suppress per-validation progress lines.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long, short)]
    checkpoint: PathBuf,
    /// Input image, or the left and right views for a dual-pixel model.
    #[arg(required = true, num_args = 1..=2)]
    inputs: Vec<PathBuf>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Denoise,
    DeblurDp,
    SrRefine,
    Enhance,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Denoise => Task::Denoise,
            TaskArg::DeblurDp => Task::DeblurDp,
            TaskArg::SrRefine => Task::SrRefine,
            TaskArg::Enhance => Task::Enhance,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Model to evaluate; without it the degraded inputs are scored directly.
    #[arg(long, short)]
    checkpoint: Option<PathBuf>,
    /// Directory with clean/ and degraded/ images paired by stem.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    data: Option<PathBuf>,
    /// Run config; its held-out split is evaluated.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pairing rule for --data (defaults from the checkpoint's input channels).
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Write the table here as well as to stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Full,
    Tiny,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Run config whose model section is analysed.
    #[arg(conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in model configuration (default: full).
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Reference size as HxW.
    #[arg(long, default_value = "256x256", value_parser = parse_size)]
    size: (usize, usize),
    /// Write the per-layer table to this file.
    #[arg(long)]
    table: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("`{s}` is not of the form HxW"))?;
    let dim = |v: &str| match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("`{v}` is not a positive integer")),
    };
    Ok((dim(h)?, dim(w)?))
}

/// Failures split by exit code: 1 for usage and configuration, 2 for everything at run time.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let is_config = e
            .chain()
            .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Config { .. })));
        if is_config {
            Failure::Usage(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn load_run_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(usage)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    cfg.validate()
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(usage)?;
    Ok(cfg)
}

fn load_model(path: &Path, f64: bool) -> anyhow::Result<(Model, Option<TrainState>)> {
    let (model, state) =
        checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if f64 && model.dtype() != DType::F64 {
        return Ok((model.cast(DType::F64)?, None));
    }
    Ok((model, state))
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), Failure> {
    let mut cfg = load_run_config(&args.config, cli.seed)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let dtype = if cli.f64 { DType::F64 } else { DType::F32 };
    let data = Dataset::from_spec(&cfg.data).context("building dataset")?;
    let (mut model, resume) = match &args.resume {
        Some(p) => {
            let (m, st) = load_model(p, cli.f64)?;
            if m.config() != &cfg.model {
                return Err(usage(anyhow!("checkpoint {} was trained with a different model config", p.display())));
            }
            let st = st.ok_or_else(|| anyhow!("checkpoint {} holds no training state", p.display()))?;
            (m, Some(st))
        }
        None => (Model::new(&cfg.model, dtype, cfg.seed)?, None),
    };

    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()).context("writing config.toml")?;
    let log_path = out.join("metrics.tsv");
    let append = resume.is_some() && log_path.is_file();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log_file = BufWriter::new(file);
    if !append {
        writeln!(log_file, "{}", log::HEADER).context("writing metrics log")?;
    }

    let started = Instant::now();
    let mut write_err = None;
    let outcome = train_loop(&mut model, &cfg.train, &data, resume, &mut |rec| {
        if let Err(e) = writeln!(log_file, "{rec}").and_then(|_| log_file.flush()) {
            write_err.get_or_insert(e);
        }
        if let (Some(v), false) = (rec.val_psnr, args.quiet) {
            eprintln!(
                "iter {:>7}  lr {:.3e}  patch {:>3}  loss {:.5}  val_psnr {:.3}  ({:.0?})",
                rec.iter,
                rec.lr,
                rec.patch,
                rec.loss,
                v,
                started.elapsed()
            );
        }
    });
    if let Some(e) = write_err {
        return Err(anyhow!(e).context("writing metrics log").into());
    }
    let outcome = outcome.context("training")?;
    let ckpt = out.join("checkpoint.erck");
    checkpoint::save(&ckpt, &model, Some(&outcome.state)).context("writing checkpoint")?;
    println!("checkpoint\t{}", ckpt.display());
    println!("metrics\t{}", log_path.display());
    if let Some(v) = outcome.records.last().and_then(|r| r.val_psnr) {
        println!("val_psnr\t{v}");
    }
    Ok(())
}

fn cmd_infer(cli: &Cli, args: &InferArgs) -> Result<(), Failure> {
    let (model, _) = load_model(&args.checkpoint, cli.f64)?;
    let want = model.config().in_channels;
    let x = match (args.inputs.as_slice(), want) {
        ([one], 3) => load_image(one)?,
        ([left, right], 6) => dual_pixel_concat(&load_image(left)?, &load_image(right)?)?,
        (inputs, _) => {
            return Err(usage(anyhow!(
                "model takes {want} input channels ({}), got {} input image(s)",
                if want == 6 { "left and right views" } else { "one RGB image" },
                inputs.len()
            )))
        }
    };
    let y = model.restore(&x).context("running the model")?;
    save_image(&y, &args.output).with_context(|| format!("writing {}", args.output.display()))?;
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<(), Failure> {
    let model = match &args.checkpoint {
        Some(p) => Some(load_model(p, cli.f64)?.0),
        None => None,
    };
    let pairs: Vec<(String, ImagePair)> = match (&args.data, &args.config) {
        (Some(root), _) => {
            let task = args.task.map(Task::from).unwrap_or(match model.as_ref().map(|m| m.config().in_channels) {
                Some(6) => Task::DeblurDp,
                _ => Task::Denoise,
            });
            load_pairs(root, task).with_context(|| format!("loading pairs from {}", root.display()))?
        }
        (None, Some(cfg_path)) => {
            let cfg = load_run_config(cfg_path, cli.seed)?;
            let data = Dataset::from_spec(&cfg.data).context("building dataset")?;
            let names = &data.names[data.names.len() - data.val.len()..];
            names.iter().cloned().zip(data.val).collect()
        }
        (None, None) => unreachable!("clap requires --data or --config"),
    };
    if pairs.is_empty() {
        return Err(Failure::Runtime(anyhow!("no image pairs to evaluate")));
    }
    let rows = evaluate(model.as_ref(), &pairs).context("evaluating")?;
    let table = format_eval_table(&rows);
    emit(&table);
    if let Some(out) = &args.output {
        std::fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
    }
    let mean = mean_row(&rows);
    eprintln!("mean psnr {:.4}  ssim {:.4}  mae {:.4}", mean.psnr, mean.ssim, mean.mae);
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), Failure> {
    let cfg = match (&args.config, args.preset) {
        (Some(p), _) => {
            let run = RunConfig::load(p).with_context(|| format!("reading config {}", p.display())).map_err(usage)?;
            run.model
        }
        (None, Some(Preset::Tiny)) => ModelConfig::tiny(),
        (None, _) => ModelConfig::full(),
    };
    let (h, w) = args.size;
    let report = count_costs(&cfg, h, w).map_err(|e| usage(anyhow!(e).context("cannot analyse this configuration")))?;
    let mut out = report.to_key_values();
    out.push_str(&format!("params_m = {:.3}\n", report.params as f64 / 1e6));
    out.push_str(&format!("flops_g = {:.3}\n", report.flops as f64 / 1e9));
    out.push_str(&format!("flops_2mac_g = {:.3}\n", report.flops_2mac() as f64 / 1e9));
    out.push_str(&format!("activations_m = {:.3}\n", report.activation_count as f64 / 1e6));
    for (label, kind) in [("skff", FusionKind::Skff), ("concat", FusionKind::Concat), ("sum", FusionKind::Sum)] {
        out.push_str(&format!("fusion.{label}.c64_n2 = {}\n", fusion_params(kind, 64, 2)?));
    }
    emit(&out);
    if let Some(path) = &args.table {
        std::fs::write(path, report.to_table()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Write to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.sequential {
        mrestore::parallel::set_sequential(true);
    }
    match &cli.command {
        Command::Train(a) => cmd_train(cli, a),
        Command::Infer(a) => cmd_infer(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Analyze(a) => cmd_analyze(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
