use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ganprune_core::config::{parse_config_str, ExperimentConfig, ExperimentManifest};
use ganprune_core::engine::{run_compression, MANIFEST_FILE};
use ganprune_core::evaluation::{evaluate_checkpoint, write_record, EvaluationOptions};
use ganprune_core::experiment::{compare, CompareOptions, EVALUATION_FILE};
use ganprune_core::extractor::{default_cache_dir, extractor_path, save_extractor, train_mnist_extractor};
use ganprune_core::pruning::Granularity;
use ganprune_core::report::write_report;
use ganprune_core::strategy::RecipeId;
use ganprune_core::{Error, Result};
use tracing::info;

#[derive(Parser)]
#[command(name = "ganprune", version, about = "Prune GAN generators with self-supervised consistency losses")]
struct Cli {
    /// Log filter, e.g. `info` or `ganprune_core=debug`.
    #[arg(long, global = true, default_value = "info", env = "GANPRUNE_LOG")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dense baseline (recipe a).
    Train(RunArgs),
    /// Run a compression recipe.
    Compress(RunArgs),
    /// Compute FID (and PSNR/SSIM against the dense teacher) for a checkpoint.
    Evaluate(EvaluateArgs),
    /// Run a set of recipes over seeds against a shared dense baseline.
    Compare(CompareArgs),
    /// Emit CSV tables and SVG charts from a run or comparison directory.
    Report(ReportArgs),
    /// Train and cache the MNIST feature extractor used for FID.
    TrainExtractor(ExtractorArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task id (dcgan-mnist, dcgan-mnist-28, ring-2d).
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    baseline_steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    generator_width: Option<usize>,
    #[arg(long)]
    discriminator_width: Option<usize>,
    #[arg(long, env = "GANPRUNE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    recipe: Option<RecipeId>,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    granularity: Option<Granularity>,
    /// Dense baseline checkpoint for recipes that start from it.
    #[arg(long)]
    dense_checkpoint: Option<PathBuf>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
}

#[derive(Args)]
struct EvalCommon {
    /// Feature extractor id (mnist-mlp-v1 or identity); defaults per task.
    #[arg(long)]
    extractor: Option<String>,
    /// Generated and real samples for FID.
    #[arg(long, default_value_t = ganprune_core::evaluation::DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, env = "GANPRUNE_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
}

impl EvalCommon {
    fn options(&self, data_dir: Option<PathBuf>) -> EvaluationOptions {
        EvaluationOptions {
            n_generated: self.samples,
            n_real: self.samples,
            extractor_id: self.extractor.clone(),
            cache_dir: self.cache_dir.clone().unwrap_or_else(default_cache_dir),
            data_dir,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    eval: EvalCommon,
    #[arg(long, env = "GANPRUNE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Output record; defaults to evaluation.json beside the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_delimiter = ',', default_value = "a,b,c,d,f")]
    recipes: Vec<RecipeId>,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    sparsities: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "element")]
    granularities: Vec<Granularity>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[command(flatten)]
    eval: EvalCommon,
}

#[derive(Args)]
struct ReportArgs {
    /// A run directory or a comparison directory.
    #[arg(long)]
    run_dir: PathBuf,
    /// Defaults to `<run-dir>/report`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractorArgs {
    #[arg(long, env = "GANPRUNE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, env = "GANPRUNE_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
}

fn base_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(t) = &common.task {
        cfg.task = t.clone();
    }
    if cfg.task.is_empty() {
        return Err(Error::config("missing key \"task\" (pass --task or --config)"));
    }
    macro_rules! set {
        ($($field:ident),*) => {$(
            if common.$field.is_some() {
                cfg.$field = common.$field.clone();
            }
        )*};
    }
    set!(seed, steps, baseline_steps, batch_size, generator_width, discriminator_width, data_dir, out_dir);
    Ok(cfg)
}

fn run_config(args: &RunArgs, forced: Option<RecipeId>) -> Result<ExperimentManifest> {
    let mut cfg = base_config(&args.common)?;
    if let Some(r) = forced {
        if args.recipe.is_some_and(|x| x != r) {
            return Err(Error::config("`train` always runs recipe a; use `compress` for other recipes"));
        }
        cfg.recipe = Some(r);
    } else if let Some(r) = args.recipe {
        cfg.recipe = Some(r);
    }
    if args.sparsity.is_some() {
        cfg.sparsity = args.sparsity;
    }
    if args.granularity.is_some() {
        cfg.granularity = args.granularity;
    }
    if args.dense_checkpoint.is_some() {
        cfg.dense_checkpoint = args.dense_checkpoint.clone();
    }
    if args.checkpoint_interval.is_some() {
        cfg.checkpoint_interval = args.checkpoint_interval;
    }
    cfg.resolve()
}

fn print_json(value: serde_json::Value) {
    println!("{value:#}");
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let manifest = run_config(&args, Some(RecipeId::A))?;
            let r = run_compression(&manifest)?;
            info!(checkpoint = %r.checkpoint.display(), manifest = %manifest.out_dir.join(MANIFEST_FILE).display(), "done");
        }
        Command::Compress(args) => {
            let manifest = run_config(&args, None)?;
            let r = run_compression(&manifest)?;
            info!(checkpoint = %r.checkpoint.display(), manifest = %manifest.out_dir.join(MANIFEST_FILE).display(), "done");
        }
        Command::Evaluate(args) => {
            let record = evaluate_checkpoint(&args.checkpoint, &args.eval.options(args.data_dir.clone()))?;
            let out = args.out.clone().unwrap_or_else(|| {
                args.checkpoint.parent().unwrap_or(Path::new(".")).join(EVALUATION_FILE)
            });
            write_record(&out, &record)?;
            print_json(serde_json::to_value(&record).expect("serializable"));
        }
        Command::Compare(args) => {
            let base = base_config(&args.common)?;
            let out_dir = base.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-compare", base.task)));
            let options = CompareOptions {
                evaluation: args.eval.options(base.data_dir.clone()),
                base,
                recipes: args.recipes,
                sparsities: args.sparsities,
                granularities: args.granularities,
                seeds: args.seeds,
                out_dir,
            };
            let summary = compare(&options)?;
            print_json(serde_json::to_value(&summary.groups).expect("serializable"));
        }
        Command::Report(args) => {
            let out = args.out_dir.unwrap_or_else(|| args.run_dir.join("report"));
            for f in write_report(&args.run_dir, &out)? {
                println!("{}", out.join(f).display());
            }
        }
        Command::TrainExtractor(args) => {
            let data_dir = args.data_dir.unwrap_or_else(ganprune_core::data::default_data_dir);
            let cache = args.cache_dir.unwrap_or_else(default_cache_dir);
            std::fs::create_dir_all(&cache).map_err(|e| Error::io(&cache, e))?;
            let trained = train_mnist_extractor(&data_dir, args.epochs)?;
            let path = extractor_path(&cache);
            save_extractor(&path, &trained)?;
            println!("{} test accuracy {:.4}", path.display(), trained.test_accuracy);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
