//! Turn absolute per-attribute ratings into binary preference pairs.
//!
//! Two responses under the same prompt yield one pair per attribute where
//! their ratings differ; ties emit nothing, and pairs on which every rated
//! attribute agrees can be excluded to keep only genuinely contested
//! comparisons.
//!
//!     cargo run --example binarize_ratings

use std::collections::BTreeMap;

use prefmix::model::FeatureVector;
use prefmix::{binarize_rated_corpus, RatedItem};

fn item(prompt: &[f64], response: &[f64], ratings: &[(&str, i64)]) -> RatedItem {
    RatedItem {
        prompt_ctx: FeatureVector::new(prompt.to_vec()).unwrap(),
        response: FeatureVector::new(response.to_vec()).unwrap(),
        ratings: ratings
            .iter()
            .map(|(name, score)| (name.to_string(), *score))
            .collect::<BTreeMap<_, _>>(),
    }
}

fn main() -> prefmix::Result<()> {
    let items = vec![
        // Prompt A: helpfulness and verbosity disagree about the winner.
        item(&[1.0, 0.0], &[0.10, 0.2], &[("helpfulness", 4), ("verbosity", 1)]),
        item(&[1.0, 0.0], &[0.35, 0.1], &[("helpfulness", 2), ("verbosity", 3)]),
        // Prompt B: one response dominates on every attribute.
        item(&[0.0, 2.0], &[0.50, 0.9], &[("helpfulness", 5), ("verbosity", 4)]),
        item(&[0.0, 2.0], &[0.65, 0.4], &[("helpfulness", 3), ("verbosity", 2)]),
        // Prompt B, third response: ties with the second on helpfulness.
        item(&[0.0, 2.0], &[0.70, 0.3], &[("helpfulness", 3), ("verbosity", 5)]),
    ];
    let attributes = vec!["helpfulness".to_string(), "verbosity".to_string()];

    for exclude_unanimous in [false, true] {
        let pairs = binarize_rated_corpus(&items, &attributes, exclude_unanimous)?;
        println!(
            "exclude_unanimous = {exclude_unanimous}: {} pairs",
            pairs.len()
        );
        for pair in &pairs {
            println!(
                "  [{}] winner {:?} beats {:?}",
                pair.attribute.as_deref().unwrap(),
                pair.winner.as_slice(),
                pair.loser.as_slice()
            );
        }
    }
    Ok(())
}
