//! Planted synthetic populations.
//!
//! A [`PopulationSpec`] is a fully known generative model of heterogeneous
//! pairwise preferences: K latent reward heads, a prompt-conditional mixing
//! function with a diversity floor `rho`, and an isotropic Gaussian sampler
//! over prompt and response features. It doubles as the ground-truth oracle
//! for recovery experiments and for the single-model lower-bound check.
//!
//! Corpora are sampled example-by-example from per-index derived RNG streams,
//! so generation is order-deterministic and parallelizable. Rated corpora
//! (absolute per-attribute scores) can be converted into binary preference
//! pairs with [`binarize_rated_corpus`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    bt_probability, mix_probability, safe_ln, FeatureVector, MixtureModel, PreferenceExample,
    RewardHead, RouterParams,
};
use crate::par;
use crate::rng::DetRng;

const TAG_PROMPT: u64 = 1;
const TAG_GROUP: u64 = 2;
const TAG_PAIR: u64 = 3;
const TAG_LABEL: u64 = 4;
const TAG_CTX_NOISE: u64 = 5;
const TAG_EXAMPLES: u64 = 6;
const TAG_GAMMA_INIT: u64 = 7;
const TAG_HEAD_INIT: u64 = 8;

/// Feature sampler for prompts and response pairs: isotropic Gaussian with
/// stated scales, with an optional degenerate override that always returns
/// the same ordered response pair (used to engineer closed-form test
/// populations whose pair distribution is not exchangeable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub prompt_dim: usize,
    pub response_dim: usize,
    pub prompt_scale: f64,
    pub response_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_pair: Option<(Vec<f64>, Vec<f64>)>,
}

impl SamplerSpec {
    pub fn gaussian(prompt_dim: usize, response_dim: usize, scale: f64) -> Self {
        SamplerSpec {
            prompt_dim,
            response_dim,
            prompt_scale: scale,
            response_scale: scale,
            fixed_pair: None,
        }
    }

    pub(crate) fn sample_prompt(&self, rng: &mut DetRng) -> Vec<f64> {
        (0..self.prompt_dim)
            .map(|_| self.prompt_scale * rng.normal())
            .collect()
    }

    /// Ordered candidate pair (first, second).
    pub(crate) fn sample_pair(&self, rng: &mut DetRng) -> (Vec<f64>, Vec<f64>) {
        if let Some((a, b)) = &self.fixed_pair {
            return (a.clone(), b.clone());
        }
        let mut draw = || -> Vec<f64> {
            (0..self.response_dim)
                .map(|_| self.response_scale * rng.normal())
                .collect()
        };
        (draw(), draw())
    }
}

/// How context features are attached to generated examples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContextMode {
    /// Context slots are zero; the corpus carries no user-intent signal.
    None,
    /// Context slots hold a one-hot group indicator; with probability
    /// `noise_rate` the announced group is flipped to a uniformly random
    /// other group, mimicking unreliable contextual signals.
    GroupOneHot { noise_rate: f64 },
}

/// Ground-truth generative model for a heterogeneous preference population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub k: usize,
    pub true_heads: Vec<RewardHead>,
    /// Raw mixing network; its softmax output is floored at `rho` via
    /// gamma = rho + (1 - rho*K) * softmax, which satisfies the diversity
    /// floor exactly while summing to one.
    pub gamma: RouterParams,
    pub rho: f64,
    pub sampler: SamplerSpec,
    /// Extra dimensions appended to prompt features for context signals.
    /// Zero-filled for plain corpora so stage-1 and stage-2 inputs share a
    /// dimension.
    pub context_slots: usize,
    pub seed: u64,
}

/// Head geometry for planted populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadLayout {
    /// Independent Gaussian directions.
    Random,
    /// Gram-Schmidt orthogonalized directions.
    Orthogonal,
    /// Antipodal pairs (w, -w, w', -w', ...): maximally contradictory
    /// subpopulations, the regime where a single model is most wrong.
    Opposed,
}

/// Parameters for building a planted population.
#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub k: usize,
    pub prompt_dim: usize,
    pub response_dim: usize,
    pub rho: f64,
    pub head_scale: f64,
    pub head_layout: HeadLayout,
    pub context_slots: usize,
    pub seed: u64,
}

impl PlantedConfig {
    pub fn new(k: usize, prompt_dim: usize, response_dim: usize, rho: f64, seed: u64) -> Self {
        PlantedConfig {
            k,
            prompt_dim,
            response_dim,
            rho,
            head_scale: 2.0,
            head_layout: HeadLayout::Random,
            context_slots: k,
            seed,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidSpec("k must be positive".into()));
        }
        if !(self.rho > 0.0) || self.rho * self.k as f64 > 1.0 + 1e-12 {
            return Err(Error::InvalidSpec(format!(
                "rho must lie in (0, 1/K]; got rho={} with K={}",
                self.rho, self.k
            )));
        }
        if self.true_heads.len() != self.k {
            return Err(Error::InvalidSpec(format!(
                "expected {} heads, got {}",
                self.k,
                self.true_heads.len()
            )));
        }
        if self
            .true_heads
            .iter()
            .any(|h| h.dim() != self.sampler.response_dim)
        {
            return Err(Error::InvalidSpec(
                "head dimension does not match sampler response_dim".into(),
            ));
        }
        if self.gamma.input_dim() != self.sampler.prompt_dim {
            return Err(Error::InvalidSpec(
                "gamma input dimension does not match sampler prompt_dim".into(),
            ));
        }
        if self.gamma.num_heads() != self.k {
            return Err(Error::InvalidSpec(
                "gamma output dimension does not match k".into(),
            ));
        }
        Ok(())
    }

    /// Builds a planted population with randomized mixing and the requested
    /// head geometry.
    pub fn planted(cfg: &PlantedConfig) -> Result<Self> {
        let root = DetRng::new(cfg.seed);
        let head_rng = root.derive(TAG_HEAD_INIT);
        let mut directions: Vec<Vec<f64>> = Vec::with_capacity(cfg.k);
        match cfg.head_layout {
            HeadLayout::Random => {
                for i in 0..cfg.k {
                    let mut r = head_rng.derive(i as u64);
                    directions.push(unit_vector(
                        (0..cfg.response_dim).map(|_| r.normal()).collect(),
                    ));
                }
            }
            HeadLayout::Orthogonal => {
                for i in 0..cfg.k {
                    let mut r = head_rng.derive(i as u64);
                    let mut v: Vec<f64> = (0..cfg.response_dim).map(|_| r.normal()).collect();
                    for prev in &directions {
                        let proj = crate::model::dot(&v, prev);
                        for (x, p) in v.iter_mut().zip(prev) {
                            *x -= proj * p;
                        }
                    }
                    directions.push(unit_vector(v));
                }
            }
            HeadLayout::Opposed => {
                for i in 0..cfg.k {
                    if i % 2 == 1 {
                        let prev: Vec<f64> = directions[i - 1].iter().map(|x| -x).collect();
                        directions.push(prev);
                    } else {
                        let mut r = head_rng.derive(i as u64);
                        let mut v: Vec<f64> = (0..cfg.response_dim).map(|_| r.normal()).collect();
                        // Keep distinct antipodal pairs orthogonal to each other.
                        for prev in directions.iter().step_by(2) {
                            let proj = crate::model::dot(&v, prev);
                            for (x, p) in v.iter_mut().zip(prev) {
                                *x -= proj * p;
                            }
                        }
                        directions.push(unit_vector(v));
                    }
                }
            }
        }
        let true_heads = directions
            .into_iter()
            .map(|d| RewardHead {
                weights: d.into_iter().map(|x| cfg.head_scale * x).collect(),
                bias: 0.0,
            })
            .collect();
        let mut gamma_rng = root.derive(TAG_GAMMA_INIT);
        let gamma = RouterParams::random(cfg.k, cfg.prompt_dim, 16, &mut gamma_rng);
        let spec = PopulationSpec {
            k: cfg.k,
            true_heads,
            gamma,
            rho: cfg.rho,
            sampler: SamplerSpec::gaussian(cfg.prompt_dim, cfg.response_dim, 1.0),
            context_slots: cfg.context_slots,
            seed: cfg.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Floored mixing weights gamma(x): every entry is at least rho.
    pub fn mixing_weights(&self, prompt: &[f64]) -> Vec<f64> {
        let fv = FeatureVector::new(prompt.to_vec()).expect("finite prompt");
        let soft = self.gamma.forward(&fv).expect("validated dims");
        let slack = 1.0 - self.rho * self.k as f64;
        soft.iter().map(|s| self.rho + slack * s).collect()
    }

    /// True score difference of group k for an ordered response pair.
    pub fn score_delta(&self, group: usize, first: &[f64], second: &[f64]) -> f64 {
        self.true_heads[group].score_delta(first, second)
    }

    /// Dimension of generated prompt_ctx vectors.
    pub fn ctx_dim(&self) -> usize {
        self.sampler.prompt_dim + self.context_slots
    }

    fn example_rng(&self, index: usize) -> DetRng {
        DetRng::new(self.seed)
            .derive(TAG_EXAMPLES)
            .derive(index as u64)
    }

    /// Draws one example. Exposed at crate level so the label-consistency
    /// property can replay generation from stored indices.
    pub(crate) fn generate_example(&self, index: usize, ctx: ContextMode) -> PreferenceExample {
        let rng = self.example_rng(index);
        let prompt = self.sampler.sample_prompt(&mut rng.derive(TAG_PROMPT));
        let gamma = self.mixing_weights(&prompt);
        let z = rng.derive(TAG_GROUP).categorical(&gamma);
        let (first, second) = self.sampler.sample_pair(&mut rng.derive(TAG_PAIR));
        let p_first = bt_probability(self.score_delta(z, &first, &second));
        let keep_order = rng.derive(TAG_LABEL).bernoulli(p_first);
        let (winner, loser) = if keep_order {
            (first, second)
        } else {
            (second, first)
        };

        let mut prompt_ctx = prompt;
        let announced = match ctx {
            ContextMode::None => {
                prompt_ctx.resize(prompt_ctx.len() + self.context_slots, 0.0);
                None
            }
            ContextMode::GroupOneHot { noise_rate } => {
                let mut noise_rng = rng.derive(TAG_CTX_NOISE);
                let announced = if noise_rate > 0.0 && noise_rng.bernoulli(noise_rate) {
                    // Uniform over the other groups.
                    let shift = 1 + noise_rng.below(self.k.max(2) - 1);
                    (z + shift) % self.k
                } else {
                    z
                };
                for slot in 0..self.context_slots {
                    prompt_ctx.push(if slot == announced { 1.0 } else { 0.0 });
                }
                Some(announced)
            }
        };

        PreferenceExample {
            prompt_ctx: FeatureVector::new(prompt_ctx).expect("finite"),
            winner: FeatureVector::new(winner).expect("finite"),
            loser: FeatureVector::new(loser).expect("finite"),
            group_id: Some(z),
            attribute: announced.map(|g| format!("g{g}")),
            context_group: announced.map(|g| format!("g{g}")),
        }
    }

    /// Samples `n` preference examples without context signals.
    pub fn sample_corpus(&self, n: usize) -> Result<Vec<PreferenceExample>> {
        self.sample_corpus_with(n, ContextMode::None, 0)
    }

    /// Samples `n` examples under the given context mode. `stream` selects an
    /// independent draw sequence so train/held-out splits never overlap.
    pub fn sample_corpus_with(
        &self,
        n: usize,
        ctx: ContextMode,
        stream: u64,
    ) -> Result<Vec<PreferenceExample>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidSpec("corpus size must be positive".into()));
        }
        if let ContextMode::GroupOneHot { noise_rate } = ctx {
            if !(0.0..=1.0).contains(&noise_rate) {
                return Err(Error::InvalidSpec(format!(
                    "context noise rate {noise_rate} outside [0, 1]"
                )));
            }
            if self.context_slots < self.k {
                return Err(Error::InvalidSpec(
                    "context_slots must be >= k for one-hot contexts".into(),
                ));
            }
        }
        let offset = stream.wrapping_mul(0x1000_0000_0000);
        let chunks = par::map_chunks(n, |range| {
            range
                .map(|i| self.generate_example((offset as usize).wrapping_add(i), ctx))
                .collect::<Vec<_>>()
        });
        Ok(chunks.into_iter().flatten().collect())
    }
}

fn unit_vector(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Anything that predicts the probability that `first` beats `second`.
pub trait WinPredictor {
    fn win_probability(&self, prompt_ctx: &[f64], first: &[f64], second: &[f64]) -> f64;
}

impl WinPredictor for MixtureModel {
    fn win_probability(&self, prompt_ctx: &[f64], first: &[f64], second: &[f64]) -> f64 {
        let ctx = FeatureVector::new(prompt_ctx.to_vec()).expect("finite");
        let weights = self.router().forward(&ctx).expect("dims checked by caller");
        let probs: Vec<f64> = self
            .heads()
            .iter()
            .map(|h| bt_probability(h.score_delta(first, second)))
            .collect();
        mix_probability(&weights, &probs)
    }
}

/// The population's own marginal predictor: sum_k gamma_k(x) sigma_k.
pub struct TruePopulation<'a>(pub &'a PopulationSpec);

impl WinPredictor for TruePopulation<'_> {
    fn win_probability(&self, prompt_ctx: &[f64], first: &[f64], second: &[f64]) -> f64 {
        let prompt = &prompt_ctx[..self.0.sampler.prompt_dim];
        let gamma = self.0.mixing_weights(prompt);
        let probs: Vec<f64> = (0..self.0.k)
            .map(|k| bt_probability(self.0.score_delta(k, first, second)))
            .collect();
        mix_probability(&gamma, &probs)
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

const TAG_ORACLE: u64 = 0x0c_e0;

/// Monte Carlo estimate of the population cross-entropy of `predictor` under
/// the true mixture: E over (x, z, pair) of the binary cross-entropy between
/// the true component probability and the predicted one.
pub fn oracle_population_ce<P: WinPredictor + Sync>(
    spec: &PopulationSpec,
    predictor: &P,
    m: usize,
) -> Result<McEstimate> {
    oracle_population_ce_tagged(spec, predictor, m, 0)
}

/// Same as [`oracle_population_ce`] with an independent draw stream.
pub fn oracle_population_ce_tagged<P: WinPredictor + Sync>(
    spec: &PopulationSpec,
    predictor: &P,
    m: usize,
    stream: u64,
) -> Result<McEstimate> {
    spec.validate()?;
    if m == 0 {
        return Err(Error::InvalidSpec("m must be positive".into()));
    }
    let base = DetRng::new(spec.seed).derive(TAG_ORACLE).derive(stream);
    let chunks = par::map_chunks(m, |range| {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in range {
            let rng = base.derive(i as u64);
            let prompt = spec.sampler.sample_prompt(&mut rng.derive(TAG_PROMPT));
            let gamma = spec.mixing_weights(&prompt);
            let (first, second) = spec.sampler.sample_pair(&mut rng.derive(TAG_PAIR));
            let mut prompt_ctx = prompt;
            prompt_ctx.resize(prompt_ctx.len() + spec.context_slots, 0.0);
            let p_model = predictor.win_probability(&prompt_ctx, &first, &second);
            let mut ce_i = 0.0;
            for k in 0..spec.k {
                let sigma_k = bt_probability(spec.score_delta(k, &first, &second));
                ce_i -= gamma[k] * (sigma_k * safe_ln(p_model) + (1.0 - sigma_k) * safe_ln(1.0 - p_model));
            }
            sum += ce_i;
            sumsq += ce_i * ce_i;
        }
        (sum, sumsq)
    });
    let (sum, sumsq) = chunks
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (s, q)| (a + s, b + q));
    let mean = sum / m as f64;
    let var = (sumsq / m as f64 - mean * mean).max(0.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / m as f64).sqrt(),
    })
}

const TAG_BAYES: u64 = 0x0bae5;

/// Monte Carlo Bayes accuracy of the population under the tie-is-incorrect
/// convention. With `context_known` the predictor sees the true group;
/// otherwise it only knows the marginal mixture.
pub fn bayes_accuracy(spec: &PopulationSpec, m: usize, context_known: bool) -> Result<McEstimate> {
    spec.validate()?;
    if m == 0 {
        return Err(Error::InvalidSpec("m must be positive".into()));
    }
    let base = DetRng::new(spec.seed).derive(TAG_BAYES);
    let chunks = par::map_chunks(m, |range| {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in range {
            let rng = base.derive(i as u64);
            let prompt = spec.sampler.sample_prompt(&mut rng.derive(TAG_PROMPT));
            let gamma = spec.mixing_weights(&prompt);
            let (first, second) = spec.sampler.sample_pair(&mut rng.derive(TAG_PAIR));
            let acc_i = if context_known {
                (0..spec.k)
                    .map(|k| {
                        let s = bt_probability(spec.score_delta(k, &first, &second));
                        gamma[k] * s.max(1.0 - s)
                    })
                    .sum::<f64>()
            } else {
                let probs: Vec<f64> = (0..spec.k)
                    .map(|k| bt_probability(spec.score_delta(k, &first, &second)))
                    .collect();
                let p = mix_probability(&gamma, &probs);
                p.max(1.0 - p)
            };
            sum += acc_i;
            sumsq += acc_i * acc_i;
        }
        (sum, sumsq)
    });
    let (sum, sumsq) = chunks
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (s, q)| (a + s, b + q));
    let mean = sum / m as f64;
    let var = (sumsq / m as f64 - mean * mean).max(0.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / m as f64).sqrt(),
    })
}

/// One response with absolute per-attribute ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedItem {
    pub prompt_ctx: FeatureVector,
    pub response: FeatureVector,
    pub ratings: std::collections::BTreeMap<String, i64>,
}

/// Converts a rated corpus into binary preference pairs.
///
/// Responses are grouped by identical prompt features. For each attribute and
/// each response pair under the same prompt, a pair is emitted when the
/// ratings differ, with the higher-rated response as winner. Tied ratings
/// emit nothing. With `exclude_unanimous`, pairs whose preference direction
/// agrees across all non-tied attributes are dropped entirely.
pub fn binarize_rated_corpus(
    items: &[RatedItem],
    attribute_set: &[String],
    exclude_unanimous: bool,
) -> Result<Vec<PreferenceExample>> {
    if attribute_set.is_empty() {
        return Err(Error::EmptyAttributeSet);
    }
    // Group by prompt identity (bit-exact feature equality), preserving
    // first-appearance order.
    let mut groups: Vec<(&FeatureVector, Vec<&RatedItem>)> = Vec::new();
    for item in items {
        match groups.iter_mut().find(|(p, _)| *p == &item.prompt_ctx) {
            Some((_, members)) => members.push(item),
            None => groups.push((&item.prompt_ctx, vec![item])),
        }
    }

    let mut out = Vec::new();
    for (prompt, members) in &groups {
        for i in 0..members.len() {
            for j in (i + 1)..members.len() {
                let (a, b) = (members[i], members[j]);
                // Direction per attribute: +1 if a wins, -1 if b wins, 0 tie
                // or missing.
                let directions: Vec<(usize, i8)> = attribute_set
                    .iter()
                    .enumerate()
                    .filter_map(|(idx, attr)| {
                        let (ra, rb) = (a.ratings.get(attr)?, b.ratings.get(attr)?);
                        match ra.cmp(rb) {
                            std::cmp::Ordering::Greater => Some((idx, 1)),
                            std::cmp::Ordering::Less => Some((idx, -1)),
                            std::cmp::Ordering::Equal => None,
                        }
                    })
                    .collect();
                if directions.is_empty() {
                    continue;
                }
                if exclude_unanimous && directions.iter().all(|(_, d)| *d == directions[0].1) {
                    continue;
                }
                for (idx, dir) in directions {
                    let (winner, loser) = if dir > 0 {
                        (&a.response, &b.response)
                    } else {
                        (&b.response, &a.response)
                    };
                    out.push(PreferenceExample {
                        prompt_ctx: (*prompt).clone(),
                        winner: winner.clone(),
                        loser: loser.clone(),
                        group_id: None,
                        attribute: Some(attribute_set[idx].clone()),
                        context_group: None,
                    });
                }
            }
        }
    }
    Ok(out)
}
