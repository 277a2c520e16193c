//! Sweep the context-labeling budget and watch held-out accuracy rise and
//! plateau. Contexts are deliberately noisy so small budgets are unreliable.
//!
//!     cargo run --release --example budget_sweep

use std::path::Path;

use prefmix::eval::budget_sweep;
use prefmix::io::write_sweep_csv;
use prefmix::population::ContextMode;
use prefmix::routing::Stage2Config;
use prefmix::trainer::{train_stage1, Stage1Config};
use prefmix::{HeadLayout, PlantedConfig, PopulationSpec};

fn main() -> prefmix::Result<()> {
    let mut cfg = PlantedConfig::new(2, 8, 8, 0.25, 4242);
    cfg.head_scale = 7.0;
    cfg.head_layout = HeadLayout::Opposed;
    let spec = PopulationSpec::planted(&cfg)?;

    let (model, _) = train_stage1(&spec.sample_corpus(20_000)?, &Stage1Config::new(2, 50, 1001))?;
    let noisy_pool =
        spec.sample_corpus_with(600, ContextMode::GroupOneHot { noise_rate: 0.3 }, 4)?;
    let heldout = spec.sample_corpus_with(2000, ContextMode::GroupOneHot { noise_rate: 0.0 }, 2)?;

    let mut config = Stage2Config::new(77);
    config.router_lr = 0.1;
    let budgets = [5, 10, 20, 50, 100];
    println!("adapting from the same checkpoint at budgets {budgets:?}, 5 repeats each...");
    let points = budget_sweep(&model, &noisy_pool, &heldout, &budgets, &config, 5)?;
    for p in &points {
        let bar = "#".repeat((p.mean_acc * 40.0) as usize);
        println!(
            "  budget {:>4}: {:.4} +- {:.4}  {bar}",
            p.budget, p.mean_acc, p.std_acc
        );
    }
    write_sweep_csv(Path::new("budget_sweep.csv"), &points)?;
    println!("curve written to budget_sweep.csv");
    Ok(())
}
