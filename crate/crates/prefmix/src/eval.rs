//! Metrics and theory verification.
//!
//! Besides the usual per-attribute accuracy tables, this module estimates the
//! irreducible cross-entropy lower bound that any single reward model incurs
//! under a genuinely mixed population,
//!
//!   L_CE(r)  >=  2 rho K E_x Var_z[ p_bar_k(x) ]  +  H,
//!
//! where p_bar_k(x) is group k's mean win probability over response pairs and
//! H is the mean binary entropy of the true component probabilities. The
//! variance term uses a split-half product estimator so that inner-sample
//! noise does not inflate the bound, and [`verify_irreducibility`] checks the
//! bound empirically against a single-head model trained with restarts.
//!
//! Note the variance term vanishes whenever the ordered pair distribution is
//! exchangeable (i.i.d. candidates), since every p_bar_k is then exactly 1/2;
//! it only bites for samplers whose candidate ordering carries signal, such
//! as populations with a fixed response pair
//! ([`crate::population::SamplerSpec::fixed_pair`]).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bt_probability, safe_ln, MixtureModel, PreferenceExample};
use crate::par;
use crate::population::{oracle_population_ce_tagged, PopulationSpec};
use crate::rng::DetRng;
use crate::routing::{route_and_score, run_algorithm1, subsample_budget, Stage2Config};
use crate::trainer::{train_stage1, Stage1Config};

const TAG_PROMPT: u64 = 1;
const TAG_PAIR: u64 = 3;
const TAG_BOUND: u64 = 0xb0;
const TAG_BT_CORPUS: u64 = 0xb7;
const TAG_BT_CE: u64 = 0xce;
const TAG_MATCH: u64 = 0x3a;
const TAG_SWEEP: u64 = 0x5e;

const DEFAULT_PAIRS_PER_PROMPT: usize = 8;

/// Accuracy and loss summary over a tagged corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mixture accuracy per attribute (untagged examples fall under
    /// "default").
    pub per_attribute_accuracy: BTreeMap<String, f64>,
    /// Standalone accuracy of each head per attribute: attribute -> K values.
    pub per_head_accuracy: BTreeMap<String, Vec<f64>>,
    pub best_head_per_attribute: BTreeMap<String, usize>,
    /// Unweighted mean of the per-attribute mixture accuracies.
    pub average_accuracy: f64,
    /// Mean mixture negative log-likelihood over all examples.
    pub ce_loss: f64,
    pub n_examples: usize,
}

/// Scores the mixture and every standalone head, grouped by attribute.
/// Ties (p = 0.5 exactly) count as incorrect.
pub fn evaluate(model: &MixtureModel, corpus: &[PreferenceExample]) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let k = model.k();
    struct Tally {
        n: usize,
        mix_correct: usize,
        head_correct: Vec<usize>,
    }
    let mut tallies: BTreeMap<String, Tally> = BTreeMap::new();
    let mut ce = 0.0;
    for ex in corpus {
        let scored = route_and_score(model, ex)?;
        ce -= safe_ln(scored.p_mix);
        let attr = ex.attribute.clone().unwrap_or_else(|| "default".into());
        let tally = tallies.entry(attr).or_insert_with(|| Tally {
            n: 0,
            mix_correct: 0,
            head_correct: vec![0; k],
        });
        tally.n += 1;
        if scored.predicted_winner {
            tally.mix_correct += 1;
        }
        for (i, head) in model.heads().iter().enumerate() {
            if head.score_delta(ex.winner.as_slice(), ex.loser.as_slice()) > 0.0 {
                tally.head_correct[i] += 1;
            }
        }
    }

    let mut per_attribute_accuracy = BTreeMap::new();
    let mut per_head_accuracy = BTreeMap::new();
    let mut best_head_per_attribute = BTreeMap::new();
    for (attr, tally) in &tallies {
        let n = tally.n as f64;
        per_attribute_accuracy.insert(attr.clone(), tally.mix_correct as f64 / n);
        let heads: Vec<f64> = tally.head_correct.iter().map(|c| *c as f64 / n).collect();
        let best = heads
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        per_head_accuracy.insert(attr.clone(), heads);
        best_head_per_attribute.insert(attr.clone(), best);
    }
    let average_accuracy =
        per_attribute_accuracy.values().sum::<f64>() / per_attribute_accuracy.len() as f64;
    Ok(EvalReport {
        per_attribute_accuracy,
        per_head_accuracy,
        best_head_per_attribute,
        average_accuracy,
        ce_loss: ce / corpus.len() as f64,
        n_examples: corpus.len(),
    })
}

/// Lower-bound estimate, optionally with the trained single-model check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub rho: f64,
    /// 2 rho K E_x Var_z[p_bar_k(x)], clamped at zero.
    pub variance_term: f64,
    /// E_x sum_k gamma_k(x) E_pairs[binary entropy of sigma_k].
    pub entropy_term: f64,
    /// variance_term + entropy_term.
    pub bound: f64,
    pub mc_std_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single_bt_ce: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single_bt_ce_std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub satisfied: Option<bool>,
}

fn binary_entropy(p: f64) -> f64 {
    -p * safe_ln(p) - (1.0 - p) * safe_ln(1.0 - p)
}

/// Monte Carlo estimate of the lower bound over `m` prompts with eight
/// response pairs each.
///
/// Per prompt, group mean win-probabilities are estimated on two independent
/// half-samples and their product gives an unbiased estimate of
/// Var_z[p_bar_k(x)] despite inner-sample noise.
pub fn bound_estimate(spec: &PopulationSpec, m: usize) -> Result<BoundReport> {
    spec.validate()?;
    if m == 0 {
        return Err(Error::InvalidSpec("m must be positive".into()));
    }
    let pairs = DEFAULT_PAIRS_PER_PROMPT;
    let half = pairs / 2;
    let k = spec.k;
    let base = DetRng::new(spec.seed).derive(TAG_BOUND);
    let factor = 2.0 * spec.rho * k as f64;

    // Per-chunk: sum and sum of squares of the per-prompt bound sample,
    // plus separate sums of the variance and entropy pieces.
    let chunks = par::map_chunks(m, |range| {
        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64); // b, b^2, var, ent
        for i in range {
            let rng = base.derive(i as u64);
            let prompt = spec.sampler.sample_prompt(&mut rng.derive(TAG_PROMPT));
            let gamma = spec.mixing_weights(&prompt);
            let mut pair_rng = rng.derive(TAG_PAIR);
            let mut mean_a = vec![0.0; k];
            let mut mean_b = vec![0.0; k];
            let mut ent_i = 0.0;
            for j in 0..pairs {
                let (first, second) = spec.sampler.sample_pair(&mut pair_rng);
                for g in 0..k {
                    let sigma = bt_probability(spec.score_delta(g, &first, &second));
                    if j < half {
                        mean_a[g] += sigma;
                    } else {
                        mean_b[g] += sigma;
                    }
                    ent_i += gamma[g] * binary_entropy(sigma);
                }
            }
            for g in 0..k {
                mean_a[g] /= half as f64;
                mean_b[g] /= (pairs - half) as f64;
            }
            ent_i /= pairs as f64;
            // Unbiased Var_z via independent halves:
            // (1/K) sum_k A_k B_k - mean(A) mean(B).
            let cross: f64 =
                mean_a.iter().zip(&mean_b).map(|(a, b)| a * b).sum::<f64>() / k as f64;
            let avg_a: f64 = mean_a.iter().sum::<f64>() / k as f64;
            let avg_b: f64 = mean_b.iter().sum::<f64>() / k as f64;
            let var_i = cross - avg_a * avg_b;
            let b_i = factor * var_i + ent_i;
            sums.0 += b_i;
            sums.1 += b_i * b_i;
            sums.2 += var_i;
            sums.3 += ent_i;
        }
        sums
    });
    let (b_sum, b_sq, var_sum, ent_sum) = chunks
        .into_iter()
        .fold((0.0, 0.0, 0.0, 0.0), |acc, s| {
            (acc.0 + s.0, acc.1 + s.1, acc.2 + s.2, acc.3 + s.3)
        });
    let mf = m as f64;
    let mean_b = b_sum / mf;
    let var_b = (b_sq / mf - mean_b * mean_b).max(0.0);
    let variance_term = (factor * var_sum / mf).max(0.0);
    let entropy_term = ent_sum / mf;
    Ok(BoundReport {
        rho: spec.rho,
        variance_term,
        entropy_term,
        bound: variance_term + entropy_term,
        mc_std_error: (var_b / mf).sqrt(),
        single_bt_ce: None,
        single_bt_ce_std_error: None,
        satisfied: None,
    })
}

/// Training budget for the single-model irreducibility check.
const BT_RESTARTS: usize = 3;
const BT_EPOCHS: usize = 10;
const BT_LEARNING_RATE: f64 = 1e-2;

/// Trains a single-head model on a fresh corpus from `spec` (three restarts,
/// keeping the best by estimated population CE), then checks that its
/// population cross-entropy respects the lower bound within Monte Carlo
/// slack.
pub fn verify_irreducibility(
    spec: &PopulationSpec,
    m: usize,
    bt_training_budget: usize,
) -> Result<BoundReport> {
    let mut report = bound_estimate(spec, m)?;
    let corpus = spec.sample_corpus_with(
        bt_training_budget.max(64),
        crate::population::ContextMode::None,
        TAG_BT_CORPUS,
    )?;
    let seed_root = DetRng::new(spec.seed).derive(TAG_BT_CE);

    let mut best: Option<(f64, MixtureModel)> = None;
    for restart in 0..BT_RESTARTS {
        let mut config = Stage1Config::new(1, BT_EPOCHS, seed_root.derive(restart as u64).next_u64());
        config.alpha = 0.0;
        config.batch_size = 64;
        config.grad_accum_steps = 1;
        config.learning_rate = BT_LEARNING_RATE;
        config.hidden_size = 8;
        let (model, _) = train_stage1(&corpus, &config)?;
        let ce = oracle_population_ce_tagged(spec, &model, m, 100 + restart as u64)?;
        if best.as_ref().is_none_or(|(b, _)| ce.value < *b) {
            best = Some((ce.value, model));
        }
    }
    let (_, best_model) = best.expect("at least one restart");
    // Fresh draw stream for the reported estimate, independent of selection.
    let ce = oracle_population_ce_tagged(spec, &best_model, m, 999)?;
    report.single_bt_ce = Some(ce.value);
    report.single_bt_ce_std_error = Some(ce.std_error);
    report.satisfied = Some(ce.value >= report.bound - 3.0 * report.mc_std_error);
    Ok(report)
}

/// One learned-head-to-true-head assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadMatch {
    pub true_index: usize,
    pub learned_index: usize,
    /// Fraction of sampled response pairs on which the two heads order the
    /// pair the same way.
    pub agreement: f64,
}

/// Matches learned heads to the population's true heads by maximizing total
/// pairwise-preference agreement over all assignments (K <= 8).
pub fn match_heads(
    spec: &PopulationSpec,
    model: &MixtureModel,
    m_pairs: usize,
    seed: u64,
) -> Result<Vec<HeadMatch>> {
    spec.validate()?;
    let k = spec.k;
    if model.k() != k {
        return Err(Error::DimensionMismatch {
            context: "head matching",
            expected: k,
            actual: model.k(),
        });
    }
    if k > 8 {
        return Err(Error::InvalidConfig(
            "head matching enumerates permutations; k > 8 unsupported".into(),
        ));
    }
    let mut rng = DetRng::new(seed).derive(TAG_MATCH);
    let mut agree = vec![vec![0usize; k]; k];
    for _ in 0..m_pairs {
        let (first, second) = spec.sampler.sample_pair(&mut rng);
        for t in 0..k {
            let st = spec.score_delta(t, &first, &second) > 0.0;
            for l in 0..k {
                let sl = model.heads()[l].score_delta(&first, &second) > 0.0;
                if st == sl {
                    agree[t][l] += 1;
                }
            }
        }
    }

    let mut best_perm: Vec<usize> = (0..k).collect();
    let mut best_total = 0usize;
    permute(&mut (0..k).collect::<Vec<_>>(), 0, &mut |perm| {
        let total: usize = perm.iter().enumerate().map(|(t, &l)| agree[t][l]).sum();
        if total > best_total {
            best_total = total;
            best_perm = perm.to_vec();
        }
    });

    Ok(best_perm
        .iter()
        .enumerate()
        .map(|(t, &l)| HeadMatch {
            true_index: t,
            learned_index: l,
            agreement: agree[t][l] as f64 / m_pairs as f64,
        })
        .collect())
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// One point of a budget-sweep curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub budget: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub accuracies: Vec<f64>,
}

/// Adapts the router from the same checkpoint under increasing context
/// budgets, with `repeats` independent subsamples per budget, and records
/// held-out macro accuracy. Budget 0 scores the unadapted model.
pub fn budget_sweep(
    model: &MixtureModel,
    corpus: &[PreferenceExample],
    heldout: &[PreferenceExample],
    budgets: &[usize],
    config: &Stage2Config,
    repeats: usize,
) -> Result<Vec<BudgetPoint>> {
    if budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("budgets must be sorted ascending".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be positive".into()));
    }
    let mut group_sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for ex in corpus {
        let key = ex
            .context_group
            .as_deref()
            .or(ex.attribute.as_deref())
            .unwrap_or("default");
        *group_sizes.entry(key).or_insert(0) += 1;
    }
    let min_group = group_sizes.values().copied().min().unwrap_or(0);
    let seed_root = DetRng::new(config.seed).derive(TAG_SWEEP);

    let mut points = Vec::with_capacity(budgets.len());
    for (bi, &budget) in budgets.iter().enumerate() {
        if budget > min_group {
            return Err(Error::InvalidConfig(format!(
                "budget {budget} exceeds smallest context group ({min_group} examples)"
            )));
        }
        let mut accs = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let acc = if budget == 0 {
                evaluate(model, heldout)?.average_accuracy
            } else {
                let tag = (bi as u64) << 32 | r as u64;
                let sub = subsample_budget(corpus, budget, seed_root.derive(tag).next_u64());
                let mut cfg = config.clone();
                cfg.budget_per_attribute = budget;
                cfg.seed = seed_root.derive(tag ^ 0xa5a5).next_u64();
                let (adapted, _) = run_algorithm1(model, &sub, &cfg, None)?;
                evaluate(&adapted, heldout)?.average_accuracy
            };
            accs.push(acc);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let std = if accs.len() > 1 {
            (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                / (accs.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        points.push(BudgetPoint {
            budget,
            mean_acc: mean,
            std_acc: std,
            accuracies: accs,
        });
    }
    Ok(points)
}
