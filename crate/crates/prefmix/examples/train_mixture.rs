//! Stage 1: fit a mixture of reward heads to a planted corpus and compare
//! against the generating population.
//!
//!     cargo run --release --example train_mixture

use prefmix::eval::match_heads;
use prefmix::population::oracle_population_ce_tagged;
use prefmix::trainer::{train_stage1, Stage1Config};
use prefmix::{HeadLayout, PlantedConfig, PopulationSpec, TruePopulation};

fn main() -> prefmix::Result<()> {
    let mut cfg = PlantedConfig::new(2, 8, 8, 0.25, 4242);
    cfg.head_scale = 7.0;
    cfg.head_layout = HeadLayout::Opposed;
    let spec = PopulationSpec::planted(&cfg)?;
    let corpus = spec.sample_corpus(20_000)?;

    let config = Stage1Config::new(2, 50, 1001);
    println!(
        "training k={} for {} epochs (alpha {}, lr {}, batch {} x {} accumulation)...",
        config.k,
        config.epochs,
        config.alpha,
        config.learning_rate,
        config.batch_size,
        config.grad_accum_steps
    );
    let (model, log) = train_stage1(&corpus, &config)?;
    for row in log.iter().step_by(log.len() / 10) {
        println!(
            "  step {:>5}: total {:.4} (mle {:.4}, reg {:.4}), router entropy {:.4}",
            row.step, row.total_loss, row.mle_loss, row.reg_loss, row.mean_router_entropy
        );
    }

    let self_ce = oracle_population_ce_tagged(&spec, &TruePopulation(&spec), 20_000, 1)?;
    let model_ce = oracle_population_ce_tagged(&spec, &model, 20_000, 2)?;
    println!(
        "population cross-entropy: model {:.5} vs true mixture {:.5} (gap {:.5} nats)",
        model_ce.value,
        self_ce.value,
        model_ce.value - self_ce.value
    );

    for m in match_heads(&spec, &model, 20_000, 3)? {
        println!(
            "true head {} <- learned head {}: pairwise agreement {:.4}",
            m.true_index, m.learned_index, m.agreement
        );
    }
    Ok(())
}
