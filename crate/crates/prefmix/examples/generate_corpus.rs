//! Plant a heterogeneous preference population and sample a corpus from it.
//!
//! Writes `corpus.jsonl` plus a `corpus.spec.json` sidecar holding the full
//! generative model (heads, mixing network, floor, seed) so later runs can
//! reuse the same ground truth.
//!
//!     cargo run --example generate_corpus

use std::path::Path;

use prefmix::io::{write_corpus_jsonl, write_population_spec};
use prefmix::{HeadLayout, PlantedConfig, PopulationSpec};

fn main() -> prefmix::Result<()> {
    let mut cfg = PlantedConfig::new(3, 8, 8, 0.2, 12345);
    cfg.head_scale = 3.0;
    cfg.head_layout = HeadLayout::Orthogonal;
    let spec = PopulationSpec::planted(&cfg)?;

    let corpus = spec.sample_corpus(5000)?;
    let out = Path::new("corpus.jsonl");
    write_corpus_jsonl(out, &corpus)?;
    write_population_spec(Path::new("corpus.spec.json"), &spec)?;

    let mut group_counts = vec![0usize; spec.k];
    for ex in &corpus {
        group_counts[ex.group_id.expect("planted corpora carry group ids")] += 1;
    }
    println!("wrote {} pairs to {}", corpus.len(), out.display());
    println!("population: k={}, rho={}, pair dim {}", spec.k, spec.rho, spec.sampler.response_dim);
    for (g, count) in group_counts.iter().enumerate() {
        println!(
            "  group {g}: {count} examples ({:.3})",
            *count as f64 / corpus.len() as f64
        );
    }
    Ok(())
}
