//! Stage 2: adapt the router to user contexts with Hedge soft labels.
//!
//! Trains a stage-1 mixture on context-free pairs, then fine-tunes only the
//! router on a 50-example-per-group budget of context-annotated pairs and
//! reports how much routing weight lands on each example's true head.
//!
//!     cargo run --release --example adapt_router

use prefmix::eval::match_heads;
use prefmix::population::ContextMode;
use prefmix::routing::{run_algorithm1, subsample_budget, Stage2Config};
use prefmix::trainer::{train_stage1, Stage1Config};
use prefmix::{HeadLayout, PlantedConfig, PopulationSpec};

fn main() -> prefmix::Result<()> {
    let mut cfg = PlantedConfig::new(2, 8, 8, 0.25, 4242);
    cfg.head_scale = 7.0;
    cfg.head_layout = HeadLayout::Opposed;
    let spec = PopulationSpec::planted(&cfg)?;

    let stage1_corpus = spec.sample_corpus(20_000)?;
    let (model, _) = train_stage1(&stage1_corpus, &Stage1Config::new(2, 50, 1001))?;
    let matches = match_heads(&spec, &model, 10_000, 5)?;
    let mut matched = vec![0usize; spec.k];
    for m in &matches {
        matched[m.true_index] = m.learned_index;
    }

    let pool = spec.sample_corpus_with(300, ContextMode::GroupOneHot { noise_rate: 0.0 }, 1)?;
    let budgeted = subsample_budget(&pool, 50, 13);
    let heldout = spec.sample_corpus_with(2000, ContextMode::GroupOneHot { noise_rate: 0.0 }, 2)?;

    let mut config = Stage2Config::new(17);
    config.router_lr = 0.1;
    println!(
        "adapting router on {} context-annotated pairs (tau {}, {} epochs)...",
        budgeted.len(),
        config.tau,
        config.epochs
    );
    let (adapted, log) = run_algorithm1(&model, &budgeted, &config, Some(&heldout))?;
    for row in &log {
        println!(
            "  epoch {}: soft-label entropy {:.4}, router ce {:.4}, held-out accuracy {:.4}",
            row.epoch,
            row.mean_soft_label_entropy,
            row.router_ce,
            row.heldout_accuracy.unwrap_or(f64::NAN)
        );
    }

    let mut weight_before = 0.0;
    let mut weight_after = 0.0;
    for ex in &heldout {
        let true_head = matched[ex.group_id.expect("planted")];
        weight_before += model.router().forward(&ex.prompt_ctx)?[true_head];
        weight_after += adapted.router().forward(&ex.prompt_ctx)?[true_head];
    }
    println!(
        "mean routing weight on the true head: {:.4} before, {:.4} after adaptation",
        weight_before / heldout.len() as f64,
        weight_after / heldout.len() as f64
    );
    Ok(())
}
