//! Model parameters and the pure math of preference prediction.
//!
//! A [`MixtureModel`] is K affine reward heads over pair features plus a
//! one-hidden-layer softmax router over prompt(+context) features. The
//! preference probability is the router-weighted convex combination of
//! per-head Bradley-Terry probabilities, and the training loss is the
//! negative log-likelihood of that mixture plus an entropy regularizer that
//! keeps the router from collapsing onto a single head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::DetRng;

/// Probabilities are clamped here before any logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

/// Largest representable probability strictly below 1.
const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

/// Smallest probability the logistic function reports; keeps outputs in (0,1)
/// even when the exponential underflows.
const SIGMOID_FLOOR: f64 = 1e-300;

/// ln(p) with the probability clamped at [`PROB_CLAMP`].
pub fn safe_ln(p: f64) -> f64 {
    p.max(PROB_CLAMP).ln()
}

/// Dense feature vector for an embedded (prompt, response) pair or a
/// prompt/context. Entries are finite by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "feature vector",
            });
        }
        Ok(FeatureVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Validates entries read from an external source.
    pub fn check_finite(&self) -> Result<()> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "feature vector",
            });
        }
        Ok(())
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// One subpopulation's reward function, affine in pair features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl RewardHead {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::NonFinite {
                context: "reward head",
            });
        }
        Ok(RewardHead { weights, bias })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// weights . features + bias
    pub fn reward(&self, pair_features: &FeatureVector) -> Result<f64> {
        if pair_features.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                context: "head reward",
                expected: self.weights.len(),
                actual: pair_features.len(),
            });
        }
        Ok(dot(&self.weights, pair_features.as_slice()) + self.bias)
    }

    /// Reward difference between two responses; the bias cancels.
    pub fn score_delta(&self, first: &[f64], second: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((w, a), b) in self.weights.iter().zip(first).zip(second) {
            acc += w * (a - b);
        }
        acc
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic win probability for a reward difference, computed in the
/// numerically stable branch and kept strictly inside (0, 1).
pub fn bt_probability(delta: f64) -> f64 {
    let p = if delta >= 0.0 {
        1.0 / (1.0 + (-delta).exp())
    } else {
        let e = delta.exp();
        e / (1.0 + e)
    };
    p.clamp(SIGMOID_FLOOR, ONE_MINUS)
}

/// Router network: tanh hidden layer, softmax output on the K-simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterParams {
    /// h x d_ctx
    pub hidden_weights: Vec<Vec<f64>>,
    /// h
    pub hidden_bias: Vec<f64>,
    /// K x h
    pub output_weights: Vec<Vec<f64>>,
    /// K
    pub output_bias: Vec<f64>,
}

impl RouterParams {
    /// Zero-initialized router mapping every input to the uniform vector.
    pub fn zeros(k: usize, input_dim: usize, hidden_size: usize) -> Self {
        RouterParams {
            hidden_weights: vec![vec![0.0; input_dim]; hidden_size],
            hidden_bias: vec![0.0; hidden_size],
            output_weights: vec![vec![0.0; hidden_size]; k],
            output_bias: vec![0.0; k],
        }
    }

    /// Random initialization scaled to keep hidden pre-activations O(1).
    pub fn random(k: usize, input_dim: usize, hidden_size: usize, rng: &mut DetRng) -> Self {
        let w_scale = 1.0 / (input_dim.max(1) as f64).sqrt();
        let u_scale = 1.0 / (hidden_size.max(1) as f64).sqrt();
        RouterParams {
            hidden_weights: (0..hidden_size)
                .map(|_| (0..input_dim).map(|_| w_scale * rng.normal()).collect())
                .collect(),
            hidden_bias: vec![0.0; hidden_size],
            output_weights: (0..k)
                .map(|_| (0..hidden_size).map(|_| u_scale * rng.normal()).collect())
                .collect(),
            output_bias: vec![0.0; k],
        }
    }

    pub fn num_heads(&self) -> usize {
        self.output_bias.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn input_dim(&self) -> usize {
        self.hidden_weights.first().map_or(0, |row| row.len())
    }

    /// tanh hidden activations for `input`.
    pub(crate) fn hidden(&self, input: &[f64]) -> Vec<f64> {
        self.hidden_weights
            .iter()
            .zip(&self.hidden_bias)
            .map(|(row, b)| (dot(row, input) + b).tanh())
            .collect()
    }

    pub(crate) fn logits_from_hidden(&self, hidden: &[f64]) -> Vec<f64> {
        self.output_weights
            .iter()
            .zip(&self.output_bias)
            .map(|(row, b)| dot(row, hidden) + b)
            .collect()
    }

    /// Full forward pass onto the simplex.
    pub fn forward(&self, prompt_ctx: &FeatureVector) -> Result<Vec<f64>> {
        if prompt_ctx.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "router forward",
                expected: self.input_dim(),
                actual: prompt_ctx.len(),
            });
        }
        let hidden = self.hidden(prompt_ctx.as_slice());
        Ok(softmax(&self.logits_from_hidden(&hidden)))
    }

    pub fn check_finite(&self) -> Result<()> {
        let finite = self
            .hidden_weights
            .iter()
            .flatten()
            .chain(self.hidden_bias.iter())
            .chain(self.output_weights.iter().flatten())
            .chain(self.output_bias.iter())
            .all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite { context: "router" })
        }
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Shannon entropy of a simplex vector, with clamped logs.
pub fn entropy(weights: &[f64]) -> f64 {
    -weights.iter().map(|&w| w * safe_ln(w)).sum::<f64>()
}

/// K reward heads plus their router.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    heads: Vec<RewardHead>,
    router: RouterParams,
}

impl MixtureModel {
    pub fn new(heads: Vec<RewardHead>, router: RouterParams) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one head".into()));
        }
        if heads.len() != router.num_heads() {
            return Err(Error::DimensionMismatch {
                context: "mixture model heads vs router outputs",
                expected: heads.len(),
                actual: router.num_heads(),
            });
        }
        let dim = heads[0].dim();
        if heads.iter().any(|h| h.dim() != dim) {
            return Err(Error::InvalidConfig(
                "all heads must share the same feature dimension".into(),
            ));
        }
        Ok(MixtureModel { heads, router })
    }

    pub fn k(&self) -> usize {
        self.heads.len()
    }

    pub fn heads(&self) -> &[RewardHead] {
        &self.heads
    }

    pub fn router(&self) -> &RouterParams {
        &self.router
    }

    pub(crate) fn heads_mut(&mut self) -> &mut [RewardHead] {
        &mut self.heads
    }

    pub(crate) fn router_mut(&mut self) -> &mut RouterParams {
        &mut self.router
    }

    pub fn pair_dim(&self) -> usize {
        self.heads[0].dim()
    }

    pub fn ctx_dim(&self) -> usize {
        self.router.input_dim()
    }

    pub fn check_finite(&self) -> Result<()> {
        for head in &self.heads {
            if head.weights.iter().any(|w| !w.is_finite()) || !head.bias.is_finite() {
                return Err(Error::NonFinite { context: "head" });
            }
        }
        self.router.check_finite()
    }

    fn check_example(&self, ex: &PreferenceExample) -> Result<()> {
        if ex.winner.len() != self.pair_dim() {
            return Err(Error::DimensionMismatch {
                context: "pair features vs heads",
                expected: self.pair_dim(),
                actual: ex.winner.len(),
            });
        }
        if ex.loser.len() != ex.winner.len() {
            return Err(Error::DimensionMismatch {
                context: "winner vs loser features",
                expected: ex.winner.len(),
                actual: ex.loser.len(),
            });
        }
        if ex.prompt_ctx.len() != self.ctx_dim() {
            return Err(Error::DimensionMismatch {
                context: "prompt/context features vs router",
                expected: self.ctx_dim(),
                actual: ex.prompt_ctx.len(),
            });
        }
        Ok(())
    }

    /// Per-head BT probabilities that the stored winner beats the loser.
    pub fn head_probabilities(&self, ex: &PreferenceExample) -> Result<Vec<f64>> {
        self.check_example(ex)?;
        Ok(self
            .heads
            .iter()
            .map(|h| bt_probability(h.score_delta(ex.winner.as_slice(), ex.loser.as_slice())))
            .collect())
    }

    /// Router-weighted mixture probability that the winner beats the loser.
    ///
    /// The convex combination is normalized by the actual weight sum so the
    /// K=1 case reduces bit-for-bit to the single BT probability and an
    /// all-equal-heads case returns their common value exactly.
    pub fn mixture_probability(&self, ex: &PreferenceExample) -> Result<f64> {
        let weights = self.router.forward(&ex.prompt_ctx)?;
        let probs = self.head_probabilities(ex)?;
        Ok(mix_probability(&weights, &probs))
    }

    /// Mean negative log-likelihood of the mixture over a batch.
    pub fn mle_loss(&self, batch: &[PreferenceExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut total = 0.0;
        for ex in batch {
            total -= safe_ln(self.mixture_probability(ex)?);
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean negative entropy of router outputs over a batch; in [-ln K, 0].
    pub fn reg_loss(&self, batch: &[PreferenceExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut total = 0.0;
        for ex in batch {
            let weights = self.router.forward(&ex.prompt_ctx)?;
            total -= entropy(&weights);
        }
        Ok(total / batch.len() as f64)
    }

    /// mle_loss + alpha * reg_loss
    pub fn total_loss(&self, batch: &[PreferenceExample], alpha: f64) -> Result<f64> {
        if alpha < 0.0 {
            return Err(Error::NegativeAlpha(alpha));
        }
        Ok(self.mle_loss(batch)? + alpha * self.reg_loss(batch)?)
    }
}

pub(crate) fn mix_probability(weights: &[f64], probs: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (w, p) in weights.iter().zip(probs) {
        num += w * p;
        den += w;
    }
    num / den
}

/// One pairwise comparison with optional provenance tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub prompt_ctx: FeatureVector,
    pub winner: FeatureVector,
    pub loser: FeatureVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    /// Budget-accounting tag for context-annotated corpora; falls back to
    /// `attribute` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_group: Option<String>,
}

impl PreferenceExample {
    pub fn new(
        prompt_ctx: FeatureVector,
        winner: FeatureVector,
        loser: FeatureVector,
    ) -> Result<Self> {
        if winner.len() != loser.len() {
            return Err(Error::DimensionMismatch {
                context: "winner vs loser features",
                expected: winner.len(),
                actual: loser.len(),
            });
        }
        Ok(PreferenceExample {
            prompt_ctx,
            winner,
            loser,
            group_id: None,
            attribute: None,
            context_group: None,
        })
    }

    /// A copy with winner and loser swapped.
    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        std::mem::swap(&mut out.winner, &mut out.loser);
        out
    }
}

/// Small-variance model initialization; heads N(0, 0.02^2), biases zero.
pub fn init_model(
    k: usize,
    pair_dim: usize,
    ctx_dim: usize,
    hidden_size: usize,
    rng: &mut DetRng,
) -> MixtureModel {
    let head_rng = rng.derive(0x11);
    let heads = (0..k)
        .map(|i| {
            let mut r = head_rng.derive(i as u64);
            RewardHead {
                weights: (0..pair_dim).map(|_| 0.02 * r.normal()).collect(),
                bias: 0.0,
            }
        })
        .collect();
    let mut router_rng = rng.derive(0x12);
    let router = RouterParams::random(k, ctx_dim, hidden_size, &mut router_rng);
    MixtureModel::new(heads, router).expect("constructed shapes are consistent")
}
