//! Stage-2 router adaptation under a labeling budget.
//!
//! Heads stay frozen. Each epoch computes per-example soft labels by a
//! multiplicative-weights (Hedge) update of the current router outputs,
//!
//!   omega_k  =  f_k * exp(-L_k / tau)  /  sum_j f_j * exp(-L_j / tau),
//!
//! where L_k is the k-th head's negative log-likelihood on the example. That
//! posterior is the exact minimizer of sum_k f_k L_k + tau * KL(f || omega)
//! over the simplex, so tau controls how far one update can move from the
//! router's prior. The router is then fine-tuned by gradient descent on the
//! cross-entropy between the soft labels and its own predictions.
//!
//! The router update uses plain gradient descent rather than an adaptive
//! scheme: in the tau -> infinity limit the soft labels collapse onto the
//! router's own outputs and gradients vanish, and updates must vanish with
//! them rather than being renormalized to full-size steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{entropy, safe_ln, MixtureModel, PreferenceExample};
use crate::rng::DetRng;
use crate::trainer::{router_backward, RouterGradients};

const TAG_SHUFFLE: u64 = 0x52;
const TAG_SUBSAMPLE: u64 = 0x53;

/// Stage-2 hyperparameters. Defaults follow the reference setup: batch size
/// 32, 10 epochs, soft labels recomputed once at the start of each epoch, a
/// 50-example budget per context group. `tau` defaults to the 1e-3 preset;
/// 1e-4 is the other published preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub tau: f64,
    pub budget_per_attribute: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub recompute_weights_once_per_epoch: bool,
    pub router_lr: f64,
    pub seed: u64,
}

/// Preset temperature used in the low-noise regime.
pub const TAU_PRESET_COARSE: f64 = 1e-3;
/// Preset temperature for finer-grained adaptation.
pub const TAU_PRESET_FINE: f64 = 1e-4;

impl Stage2Config {
    pub fn new(seed: u64) -> Self {
        Stage2Config {
            tau: TAU_PRESET_COARSE,
            budget_per_attribute: 50,
            batch_size: 32,
            epochs: 10,
            recompute_weights_once_per_epoch: true,
            router_lr: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::NonPositiveTau(self.tau));
        }
        if self.budget_per_attribute == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "budget, batch_size and epochs must be positive".into(),
            ));
        }
        if !(self.router_lr > 0.0) {
            return Err(Error::InvalidConfig("router_lr must be positive".into()));
        }
        Ok(())
    }
}

/// Per-head negative log-likelihoods for one example: the k-th entry is
/// -log sigma(r_k(winner) - r_k(loser)).
pub fn per_head_losses(model: &MixtureModel, ex: &PreferenceExample) -> Result<Vec<f64>> {
    let probs = model.head_probabilities(ex)?;
    Ok(probs.iter().map(|p| -safe_ln(*p)).collect())
}

/// Multiplicative-weights posterior on the simplex, computed in log space
/// with max subtraction.
pub fn hedge_update(omega: &[f64], losses: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTau(tau));
    }
    if omega.len() != losses.len() {
        return Err(Error::DimensionMismatch {
            context: "hedge update",
            expected: omega.len(),
            actual: losses.len(),
        });
    }
    let exponents: Vec<f64> = omega
        .iter()
        .zip(losses)
        .map(|(w, l)| safe_ln(*w) - l / tau)
        .collect();
    let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = exponents.iter().map(|e| (e - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / sum).collect())
}

/// Soft-label state for a budgeted corpus: one simplex vector and one
/// per-head loss vector per example.
#[derive(Debug, Clone)]
pub struct HedgeState {
    pub omega: Vec<Vec<f64>>,
    pub per_head_loss: Vec<Vec<f64>>,
}

/// Computes soft labels for every example from the model's current router.
pub fn compute_hedge_state(
    model: &MixtureModel,
    corpus: &[PreferenceExample],
    tau: f64,
) -> Result<HedgeState> {
    let mut omega = Vec::with_capacity(corpus.len());
    let mut per_head_loss = Vec::with_capacity(corpus.len());
    for ex in corpus {
        let prior = model.router().forward(&ex.prompt_ctx)?;
        let losses = per_head_losses(model, ex)?;
        omega.push(hedge_update(&prior, &losses, tau)?);
        per_head_loss.push(losses);
    }
    Ok(HedgeState {
        omega,
        per_head_loss,
    })
}

/// One row of the adaptation log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptEpochRecord {
    pub epoch: usize,
    pub mean_soft_label_entropy: f64,
    pub router_ce: f64,
    pub heldout_accuracy: Option<f64>,
}

fn budget_key(ex: &PreferenceExample) -> Option<&str> {
    ex.context_group
        .as_deref()
        .or(ex.attribute.as_deref())
}

fn check_budgets(corpus: &[PreferenceExample], budget: usize) -> Result<()> {
    let mut counts: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    for ex in corpus {
        let key = budget_key(ex).ok_or_else(|| {
            Error::InvalidCorpus(
                "stage-2 corpus requires context_group (or attribute) tags on every example"
                    .into(),
            )
        })?;
        *counts.entry(key).or_insert(0) += 1;
    }
    for (group, count) in counts {
        if count > budget {
            return Err(Error::BudgetExceeded {
                group: group.to_string(),
                count,
                budget,
            });
        }
    }
    Ok(())
}

/// Takes at most `budget` examples per context group, chosen deterministically
/// from `seed`, preserving corpus order within the selection.
pub fn subsample_budget(
    corpus: &[PreferenceExample],
    budget: usize,
    seed: u64,
) -> Vec<PreferenceExample> {
    let mut by_group: std::collections::BTreeMap<&str, Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, ex) in corpus.iter().enumerate() {
        by_group
            .entry(budget_key(ex).unwrap_or("default"))
            .or_default()
            .push(i);
    }
    let root = DetRng::new(seed).derive(TAG_SUBSAMPLE);
    let mut chosen = Vec::new();
    for (g, (_, mut indices)) in by_group.into_iter().enumerate() {
        root.derive(g as u64).shuffle(&mut indices);
        indices.truncate(budget);
        chosen.extend(indices);
    }
    chosen.sort_unstable();
    chosen.into_iter().map(|i| corpus[i].clone()).collect()
}

/// Runs the context-aware router learning loop: per epoch, Hedge soft labels
/// from the current router, then minibatch gradient steps on the router
/// minimizing cross-entropy against those labels. Heads are never touched.
///
/// `heldout`, when given, is scored after every epoch for the log.
pub fn run_algorithm1(
    model: &MixtureModel,
    corpus: &[PreferenceExample],
    config: &Stage2Config,
    heldout: Option<&[PreferenceExample]>,
) -> Result<(MixtureModel, Vec<AdaptEpochRecord>)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for ex in corpus {
        if ex.prompt_ctx.len() != model.ctx_dim() || ex.winner.len() != model.pair_dim() {
            return Err(Error::DimensionMismatch {
                context: "stage-2 corpus vs model",
                expected: model.ctx_dim(),
                actual: ex.prompt_ctx.len(),
            });
        }
    }
    check_budgets(corpus, config.budget_per_attribute)?;

    let mut adapted = model.clone();
    let shuffle_root = DetRng::new(config.seed).derive(TAG_SHUFFLE);
    let n = corpus.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut state = compute_hedge_state(&adapted, corpus, config.tau)?;
        let mean_entropy = state
            .omega
            .iter()
            .map(|w| entropy(w))
            .sum::<f64>()
            / n as f64;

        shuffle_root.derive(epoch as u64).shuffle(&mut indices);
        for batch in indices.chunks(config.batch_size) {
            if !config.recompute_weights_once_per_epoch {
                state = compute_hedge_state(&adapted, corpus, config.tau)?;
            }
            let mut grads = RouterGradients::zeros_like(adapted.router());
            for &i in batch {
                let ex = &corpus[i];
                let input = ex.prompt_ctx.as_slice();
                let hidden = adapted.router().hidden(input);
                let logits = adapted.router().logits_from_hidden(&hidden);
                let f = crate::model::softmax(&logits);
                // d(-sum omega ln f)/df_k, respecting the log clamp.
                let g: Vec<f64> = f
                    .iter()
                    .zip(&state.omega[i])
                    .map(|(fk, ok)| {
                        if *fk > crate::model::PROB_CLAMP {
                            -ok / fk
                        } else {
                            0.0
                        }
                    })
                    .collect();
                router_backward(adapted.router(), input, &hidden, &f, &g, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            sgd_router_step(&mut adapted, &grads, config.router_lr);
        }

        // Epoch-end router cross-entropy against the epoch's soft labels.
        let mut ce = 0.0;
        for (i, ex) in corpus.iter().enumerate() {
            let f = adapted.router().forward(&ex.prompt_ctx)?;
            ce -= state.omega[i]
                .iter()
                .zip(&f)
                .map(|(o, fk)| o * safe_ln(*fk))
                .sum::<f64>();
        }
        ce /= n as f64;

        let heldout_accuracy = match heldout {
            Some(h) if !h.is_empty() => {
                let correct = h
                    .iter()
                    .map(|ex| route_and_score(&adapted, ex))
                    .collect::<Result<Vec<_>>>()?
                    .iter()
                    .filter(|r| r.predicted_winner)
                    .count();
                Some(correct as f64 / h.len() as f64)
            }
            _ => None,
        };

        log.push(AdaptEpochRecord {
            epoch,
            mean_soft_label_entropy: mean_entropy,
            router_ce: ce,
            heldout_accuracy,
        });
    }

    debug_assert_eq!(model.heads(), adapted.heads());
    Ok((adapted, log))
}

fn sgd_router_step(model: &mut MixtureModel, grads: &RouterGradients, lr: f64) {
    let router = model.router_mut();
    for (row, grow) in router.hidden_weights.iter_mut().zip(&grads.hidden_weights) {
        for (p, g) in row.iter_mut().zip(grow) {
            *p -= lr * g;
        }
    }
    for (p, g) in router.hidden_bias.iter_mut().zip(&grads.hidden_bias) {
        *p -= lr * g;
    }
    for (row, grow) in router.output_weights.iter_mut().zip(&grads.output_weights) {
        for (p, g) in row.iter_mut().zip(grow) {
            *p -= lr * g;
        }
    }
    for (p, g) in router.output_bias.iter_mut().zip(&grads.output_bias) {
        *p -= lr * g;
    }
}

/// Routing decision for one example.
#[derive(Debug, Clone)]
pub struct RoutedScore {
    pub weights: Vec<f64>,
    pub p_mix: f64,
    /// True when the stored winner is predicted to win; p_mix = 0.5 exactly
    /// counts as incorrect.
    pub predicted_winner: bool,
}

/// Routes an example and scores the stored orientation.
pub fn route_and_score(model: &MixtureModel, ex: &PreferenceExample) -> Result<RoutedScore> {
    let weights = model.router().forward(&ex.prompt_ctx)?;
    let p_mix = model.mixture_probability(ex)?;
    Ok(RoutedScore {
        weights,
        p_mix,
        predicted_winner: p_mix > 0.5,
    })
}
