//! Thin command-line front end for the preference-mixture pipeline.
//!
//! Exit codes: 0 success, 2 invalid input or missing file, 3 training
//! divergence, 4 lower-bound check failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use prefmix::eval::{evaluate, verify_irreducibility};
use prefmix::io;
use prefmix::population::{
    binarize_rated_corpus, ContextMode, HeadLayout, PlantedConfig, PopulationSpec, RatedItem,
};
use prefmix::routing::{run_algorithm1, subsample_budget, Stage2Config};
use prefmix::trainer::{train_stage1, Stage1Config};
use prefmix::Error;

#[derive(Parser)]
#[command(name = "prefmix", version, about = "Mixture-of-reward-heads preference learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic corpus, or binarize a rated corpus.
    Gen(GenArgs),
    /// Stage 1: train the mixture of reward heads and the router.
    Train1(Train1Args),
    /// Stage 2: adapt the router on context-annotated pairs (heads frozen).
    Train2(Train2Args),
    /// Score a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Estimate the single-model lower bound and verify it empirically.
    Bound(BoundArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of latent subpopulations.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Feature dimension for prompts and responses.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Number of preference pairs to generate.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Diversity floor on the mixing weights (rho * k must be <= 1).
    #[arg(long, default_value_t = 0.25)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output corpus path (JSONL); the population sidecar lands next to it.
    #[arg(long)]
    out: PathBuf,
    /// Scale of the planted reward heads.
    #[arg(long, default_value_t = 2.0)]
    head_scale: f64,
    /// Head geometry: random, orthogonal or opposed.
    #[arg(long, default_value = "random")]
    head_layout: String,
    /// Attach one-hot group contexts (stage-2 corpora).
    #[arg(long)]
    context: bool,
    /// Probability of announcing the wrong group in the context.
    #[arg(long, default_value_t = 0.0)]
    context_noise: f64,
    /// Independent draw stream, so train/held-out splits never overlap.
    #[arg(long, default_value_t = 0)]
    stream: u64,
    /// Reuse an existing population sidecar instead of planting a new one.
    #[arg(long)]
    population: Option<PathBuf>,
    /// Binarization mode: JSON file of rated items.
    #[arg(long)]
    rated_input: Option<PathBuf>,
    /// Attributes to binarize over (comma-separated), with --rated-input.
    #[arg(long, value_delimiter = ',')]
    attributes: Vec<String>,
    /// Drop pairs whose direction agrees across all non-tied attributes.
    #[arg(long)]
    exclude_unanimous: bool,
}

#[derive(Args)]
struct Train1Args {
    /// Training corpus (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Directory for checkpoint, training log and manifest.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 2e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 8)]
    grad_accum_steps: usize,
    #[arg(long, default_value_t = 0.05)]
    warmup_ratio: f64,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    hidden_size: usize,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
}

#[derive(Args)]
struct Train2Args {
    /// Context-annotated corpus (JSONL with context_group tags).
    #[arg(long)]
    corpus: PathBuf,
    /// Stage-1 checkpoint to adapt.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    tau: f64,
    /// Labeling budget per context group.
    #[arg(long, default_value_t = 50)]
    budget: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    router_lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional held-out corpus scored after every epoch.
    #[arg(long)]
    heldout: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Report path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    /// Population sidecar (written by gen).
    #[arg(long)]
    population: PathBuf,
    /// Monte Carlo prompt draws.
    #[arg(long, default_value_t = 20_000)]
    mc_prompts: usize,
    /// Training pairs for the single-model check.
    #[arg(long, default_value_t = 8000)]
    bt_pairs: usize,
    /// Report path (JSON).
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args, started),
        Command::Train1(args) => cmd_train1(args, started),
        Command::Train2(args) => cmd_train2(args, started),
        Command::Eval(args) => cmd_eval(args, started),
        Command::Bound(args) => cmd_bound(args, started),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Diverged { .. } => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn parse_layout(name: &str) -> Result<HeadLayout, Error> {
    match name {
        "random" => Ok(HeadLayout::Random),
        "orthogonal" => Ok(HeadLayout::Orthogonal),
        "opposed" => Ok(HeadLayout::Opposed),
        other => Err(Error::InvalidConfig(format!(
            "unknown head layout {other:?} (expected random, orthogonal or opposed)"
        ))),
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("spec.json")
}

fn cmd_gen(args: GenArgs, started: Instant) -> Result<ExitCode, Error> {
    if let Some(rated_path) = &args.rated_input {
        let data = std::fs::read_to_string(rated_path)
            .map_err(|e| Error::Io {
                path: rated_path.display().to_string(),
                source: e,
            })?;
        let items: Vec<RatedItem> = serde_json::from_str(&data).map_err(|e| Error::Json {
            path: rated_path.display().to_string(),
            source: e,
        })?;
        let pairs = binarize_rated_corpus(&items, &args.attributes, args.exclude_unanimous)?;
        io::write_corpus_jsonl(&args.out, &pairs)?;
        let manifest = io::Manifest::new(
            "gen",
            &serde_json::json!({
                "rated_input": rated_path.display().to_string(),
                "attributes": args.attributes,
                "exclude_unanimous": args.exclude_unanimous,
            }),
            args.seed,
            started.elapsed().as_secs_f64(),
        )?;
        io::write_manifest(&args.out.with_extension("manifest.json"), &manifest)?;
        println!(
            "binarized {} rated items into {} pairs across {} attributes",
            items.len(),
            pairs.len(),
            args.attributes.len()
        );
        return Ok(ExitCode::SUCCESS);
    }

    let spec = match &args.population {
        Some(path) => io::read_population_spec(path)?,
        None => {
            let mut cfg = PlantedConfig::new(args.k, args.dim, args.dim, args.rho, args.seed);
            cfg.head_scale = args.head_scale;
            cfg.head_layout = parse_layout(&args.head_layout)?;
            PopulationSpec::planted(&cfg)?
        }
    };
    let ctx = if args.context {
        ContextMode::GroupOneHot {
            noise_rate: args.context_noise,
        }
    } else {
        ContextMode::None
    };
    let corpus = spec.sample_corpus_with(args.n, ctx, args.stream)?;
    io::write_corpus_jsonl(&args.out, &corpus)?;
    io::write_population_spec(&sidecar_path(&args.out), &spec)?;

    let mut group_counts = vec![0usize; spec.k];
    for ex in &corpus {
        if let Some(g) = ex.group_id {
            group_counts[g] += 1;
        }
    }
    let freqs: Vec<String> = group_counts
        .iter()
        .map(|c| format!("{:.3}", *c as f64 / corpus.len() as f64))
        .collect();
    let manifest = io::Manifest::new(
        "gen",
        &serde_json::json!({
            "k": spec.k, "dim": args.dim, "n": args.n, "rho": spec.rho,
            "head_scale": args.head_scale, "head_layout": args.head_layout,
            "context": args.context, "context_noise": args.context_noise,
            "stream": args.stream,
        }),
        spec.seed,
        started.elapsed().as_secs_f64(),
    )?;
    io::write_manifest(&args.out.with_extension("manifest.json"), &manifest)?;
    println!(
        "generated {} pairs (k={}, rho={}) -> {}; empirical group frequencies [{}]",
        corpus.len(),
        spec.k,
        spec.rho,
        args.out.display(),
        freqs.join(", ")
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train1(args: Train1Args, started: Instant) -> Result<ExitCode, Error> {
    let corpus = io::read_corpus_jsonl(&args.corpus)?;
    let config = Stage1Config {
        alpha: args.alpha,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        grad_accum_steps: args.grad_accum_steps,
        warmup_ratio: args.warmup_ratio,
        epochs: args.epochs,
        seed: args.seed,
        k: args.k,
        hidden_size: args.hidden_size,
        weight_decay: args.weight_decay,
    };
    let (model, log) = train_stage1(&corpus, &config)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::Io {
        path: args.out_dir.display().to_string(),
        source: e,
    })?;
    let ckpt = io::Checkpoint::new(model, &config, config.seed)?;
    io::write_checkpoint(&args.out_dir.join("checkpoint.json"), &ckpt)?;
    io::write_train_log(&args.out_dir.join("train_log.csv"), &log)?;
    let manifest = io::Manifest::new("train1", &config, config.seed, started.elapsed().as_secs_f64())?;
    io::write_manifest(&args.out_dir.join("manifest.json"), &manifest)?;
    let last = log.last().expect("nonempty log");
    println!(
        "trained k={} on {} pairs: final total loss {:.4} (mle {:.4}, reg {:.4}) over {} steps",
        config.k,
        corpus.len(),
        last.total_loss,
        last.mle_loss,
        last.reg_loss,
        log.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train2(args: Train2Args, started: Instant) -> Result<ExitCode, Error> {
    let corpus = io::read_corpus_jsonl(&args.corpus)?;
    let ckpt = io::read_checkpoint(&args.checkpoint)?;
    let heldout = args
        .heldout
        .as_ref()
        .map(|p| io::read_corpus_jsonl(p))
        .transpose()?;
    let config = Stage2Config {
        tau: args.tau,
        budget_per_attribute: args.budget,
        batch_size: args.batch_size,
        epochs: args.epochs,
        recompute_weights_once_per_epoch: true,
        router_lr: args.router_lr,
        seed: args.seed,
    };
    let budgeted = subsample_budget(&corpus, config.budget_per_attribute, config.seed);
    let (adapted, log) = run_algorithm1(&ckpt.model, &budgeted, &config, heldout.as_deref())?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::Io {
        path: args.out_dir.display().to_string(),
        source: e,
    })?;
    let out_ckpt = io::Checkpoint::new(
        adapted,
        &serde_json::json!({ "stage1": ckpt.config, "stage2": config }),
        config.seed,
    )?;
    io::write_checkpoint(&args.out_dir.join("checkpoint.json"), &out_ckpt)?;
    io::write_adapt_log(&args.out_dir.join("adapt_log.csv"), &log)?;
    let manifest = io::Manifest::new("train2", &config, config.seed, started.elapsed().as_secs_f64())?;
    io::write_manifest(&args.out_dir.join("manifest.json"), &manifest)?;
    let last = log.last().expect("nonempty log");
    match last.heldout_accuracy {
        Some(acc) => println!(
            "adapted router on {} budgeted pairs: router ce {:.4}, held-out accuracy {:.4}",
            budgeted.len(),
            last.router_ce,
            acc
        ),
        None => println!(
            "adapted router on {} budgeted pairs: router ce {:.4}",
            budgeted.len(),
            last.router_ce
        ),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs, started: Instant) -> Result<ExitCode, Error> {
    let corpus = io::read_corpus_jsonl(&args.corpus)?;
    let ckpt = io::read_checkpoint(&args.checkpoint)?;
    let report = evaluate(&ckpt.model, &corpus)?;
    io::write_eval_report(&args.out, &report)?;
    let manifest = io::Manifest::new(
        "eval",
        &serde_json::json!({
            "corpus": args.corpus.display().to_string(),
            "checkpoint": args.checkpoint.display().to_string(),
        }),
        ckpt.seed,
        started.elapsed().as_secs_f64(),
    )?;
    io::write_manifest(&args.out.with_extension("manifest.json"), &manifest)?;
    println!(
        "evaluated {} examples: average accuracy {:.4}, ce {:.4}",
        report.n_examples, report.average_accuracy, report.ce_loss
    );
    for (attr, acc) in &report.per_attribute_accuracy {
        println!(
            "  {attr}: mixture {:.4}, best head {} ({:.4})",
            acc,
            report.best_head_per_attribute[attr],
            report.per_head_accuracy[attr][report.best_head_per_attribute[attr]]
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bound(args: BoundArgs, started: Instant) -> Result<ExitCode, Error> {
    let spec = io::read_population_spec(&args.population)?;
    let report = verify_irreducibility(&spec, args.mc_prompts, args.bt_pairs)?;
    io::write_bound_report(&args.out, &report)?;
    let manifest = io::Manifest::new(
        "bound",
        &serde_json::json!({
            "population": args.population.display().to_string(),
            "mc_prompts": args.mc_prompts,
            "bt_pairs": args.bt_pairs,
        }),
        spec.seed,
        started.elapsed().as_secs_f64(),
    )?;
    io::write_manifest(&args.out.with_extension("manifest.json"), &manifest)?;
    println!(
        "bound {:.5} (variance {:.5} + entropy {:.5}, mc std err {:.5}); single-model ce {:.5}; satisfied: {}",
        report.bound,
        report.variance_term,
        report.entropy_term,
        report.mc_std_error,
        report.single_bt_ce.unwrap_or(f64::NAN),
        report.satisfied.unwrap_or(false)
    );
    if report.satisfied == Some(true) {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(4))
    }
}
