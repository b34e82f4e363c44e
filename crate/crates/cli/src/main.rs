//! `attrfuse`: fixture generation, training, evaluation, component
//! ablation and gradient checking from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use attrfuse_core::data::{generate_synthetic_fixture, FixtureConfig, Split};
use attrfuse_core::model::pipeline_grad_check;
use attrfuse_core::train::{
    evaluate, report, run_ablation_suite, train, Checkpoint, TrainConfig,
};

#[derive(Parser)]
#[command(name = "attrfuse", about = "Attribute-fusion VQA at desk scale", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset fixture.
    GenFixture(GenFixtureArgs),
    /// Train a model from a key=value config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a manifest.
    Eval(EvalArgs),
    /// Train and tabulate the four component-toggle combinations.
    Ablate(TrainArgs),
    /// Compare analytic gradients against central differences over every
    /// parameter of the full pipeline (f64).
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenFixtureArgs {
    /// Output directory for manifests, containers and the vocabulary.
    #[arg(long)]
    out: PathBuf,
    /// Training samples to generate.
    #[arg(long)]
    samples: usize,
    /// Held-out validation samples (0 skips the val split).
    #[arg(long, default_value_t = 0)]
    val_samples: usize,
    /// Make the answer a function of attribute embeddings only; without
    /// this flag it is a function of visual features instead.
    #[arg(long)]
    attribute_signal: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Visual objects per sample (M).
    #[arg(long, default_value_t = 6)]
    m: usize,
    /// Attribute embeddings per sample (L).
    #[arg(long, default_value_t = 8)]
    l: usize,
    #[arg(long, default_value_t = 32)]
    d_v: usize,
    #[arg(long, default_value_t = 32)]
    d_e: usize,
    #[arg(long, default_value_t = 32)]
    d_t: usize,
    /// Question / caption / knowledge token counts.
    #[arg(long, default_value_t = 6)]
    n_t: usize,
    #[arg(long, default_value_t = 3)]
    n_c: usize,
    #[arg(long, default_value_t = 4)]
    n_p: usize,
    #[arg(long, default_value_t = 10)]
    vocab_size: usize,
    /// Comma-separated knowledge stream names to emit.
    #[arg(long, default_value = "synthetic")]
    streams: String,
    /// Minimum top-1 vs top-2 label-score margin; signal features are
    /// redrawn until it holds (0 disables).
    #[arg(long, default_value_t = 1.0)]
    min_margin: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the checkpoint, metrics and logs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Manifest to evaluate against.
    #[arg(long)]
    manifest: PathBuf,
    /// Optional directory for machine-readable output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Optional config; dimensions and toggles are honored, precision is
    /// forced to f64. Defaults to a narrow check configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> attrfuse_core::Result<ExitCode> {
    match cli.command {
        Command::GenFixture(args) => gen_fixture(args),
        Command::Train(args) => train_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Ablate(args) => ablate_cmd(args),
        Command::GradCheck(args) => grad_check_cmd(args),
    }
}

fn fixture_config(args: &GenFixtureArgs, n: usize, split: Split) -> FixtureConfig {
    FixtureConfig {
        n_samples: n,
        m_objects: args.m,
        l_attributes: args.l,
        d_v: args.d_v,
        d_e: args.d_e,
        d_t: args.d_t,
        n_t: args.n_t,
        n_c: args.n_c,
        n_p: args.n_p,
        vocab_size: args.vocab_size,
        knowledge_streams: args.streams.split(',').map(|s| s.trim().to_string()).collect(),
        attribute_signal: args.attribute_signal,
        min_margin: args.min_margin,
        seed: args.seed,
        split,
    }
}

fn gen_fixture(args: GenFixtureArgs) -> attrfuse_core::Result<ExitCode> {
    let train_cfg = fixture_config(&args, args.samples, Split::Train);
    let manifest = generate_synthetic_fixture(&train_cfg, &args.out)?;
    println!(
        "wrote {} ({} samples) to {}",
        manifest.name,
        manifest.len(),
        args.out.display()
    );
    if args.val_samples > 0 {
        let val_cfg = fixture_config(&args, args.val_samples, Split::Val);
        let val = generate_synthetic_fixture(&val_cfg, &args.out)?;
        println!("wrote val split ({} samples)", val.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(args: TrainArgs) -> attrfuse_core::Result<ExitCode> {
    let config = TrainConfig::parse_file(&args.config)?;
    let outcome = train(&config)?;
    print!("{}", report::render_table(&outcome.report));

    std::fs::create_dir_all(&args.out)?;
    outcome.checkpoint.save(&args.out.join("checkpoint"))?;
    std::fs::write(
        args.out.join("metrics.tsv"),
        report::metric_lines(&outcome.report),
    )?;
    std::fs::write(
        args.out.join("loss_curves.csv"),
        report::loss_csv(&outcome.report),
    )?;
    std::fs::write(args.out.join("run.log"), outcome.run_log.join("\n") + "\n")?;
    println!("checkpoint and reports written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(args: EvalArgs) -> attrfuse_core::Result<ExitCode> {
    let mut checkpoint = Checkpoint::load(&args.ckpt)?;
    let metrics = evaluate(&mut checkpoint, &args.manifest)?;
    print!("{}", report::render_table(&metrics));
    if let Some(out) = args.out {
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("metrics.tsv"), report::metric_lines(&metrics))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn ablate_cmd(args: TrainArgs) -> attrfuse_core::Result<ExitCode> {
    let config = TrainConfig::parse_file(&args.config)?;
    let table = run_ablation_suite(&config)?;
    print!("{}", table.render());
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("ablation.txt"), table.render())?;
    std::fs::write(args.out.join("ablation.tsv"), table.metric_lines())?;
    println!("ablation table written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn grad_check_cmd(args: GradCheckArgs) -> attrfuse_core::Result<ExitCode> {
    let config = match &args.config {
        Some(p) => TrainConfig::parse_file(p)?,
        None => TrainConfig::grad_check_default(),
    };
    // Finite differences are unusable below f64.
    let model = config.model_config(4);
    let started = std::time::Instant::now();
    let report = pipeline_grad_check(&model, args.seed, config.seed, args.eps, args.tol)?;
    let secs = started.elapsed().as_secs_f64();
    println!(
        "checked {} parameter entries in {:.1}s",
        report.entries_checked, secs
    );
    println!("max_rel_error\t{:.3e}", report.max_rel_error);
    if let Some((name, idx)) = &report.worst {
        println!("worst_entry\t{name}[{idx}]");
    }
    if report.passed() {
        println!("grad-check PASS (tol {:.1e})", args.tol);
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "grad-check FAIL: {} entries over tolerance in {:?}",
            report.failing.len(),
            report.failing_names()
        );
        Ok(ExitCode::FAILURE)
    }
}
