//! Stage-1 mixture training: regularized maximum likelihood with
//! hand-derived gradients and an AdamW-style optimizer.
//!
//! Per example, with head probabilities p_k, router weights f_k and
//! p_mix = sum_k f_k p_k, the chain rule gives
//!
//!   dL_mle/d(delta_k) = -(f_k * p_k * (1 - p_k)) / p_mix
//!
//! scaled onto head weights by the winner-loser feature difference (head
//! biases cancel in the difference and receive zero gradient). Router
//! gradients flow through the softmax for both the -log p_mix term and the
//! entropy regularizer. A central-finite-difference checker validates every
//! coordinate family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    entropy, init_model, safe_ln, MixtureModel, PreferenceExample, RouterParams, PROB_CLAMP,
};
use crate::rng::DetRng;

const TAG_SHUFFLE: u64 = 0x51;

/// Stage-1 hyperparameters. Field defaults follow the reference setup:
/// alpha 0.5, learning rate 2e-3, batch size 4 with 8 gradient-accumulation
/// steps, warmup ratio 0.05, AdamW with zero decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub seed: u64,
    pub k: usize,
    pub hidden_size: usize,
    pub weight_decay: f64,
}

impl Stage1Config {
    pub fn new(k: usize, epochs: usize, seed: u64) -> Self {
        Stage1Config {
            alpha: 0.5,
            learning_rate: 2e-3,
            batch_size: 4,
            grad_accum_steps: 8,
            warmup_ratio: 0.05,
            epochs,
            seed,
            k,
            hidden_size: 128,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::NegativeAlpha(self.alpha));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.grad_accum_steps == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, grad_accum_steps and epochs must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::InvalidConfig("warmup_ratio must lie in [0, 1]".into()));
        }
        if self.k == 0 || self.hidden_size == 0 {
            return Err(Error::InvalidConfig("k and hidden_size must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Router parameter gradients, shaped exactly like [`RouterParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct RouterGradients {
    pub hidden_weights: Vec<Vec<f64>>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<Vec<f64>>,
    pub output_bias: Vec<f64>,
}

impl RouterGradients {
    pub fn zeros_like(router: &RouterParams) -> Self {
        RouterGradients {
            hidden_weights: vec![vec![0.0; router.input_dim()]; router.hidden_size()],
            hidden_bias: vec![0.0; router.hidden_size()],
            output_weights: vec![vec![0.0; router.hidden_size()]; router.num_heads()],
            output_bias: vec![0.0; router.num_heads()],
        }
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for row in &mut self.hidden_weights {
            for g in row {
                *g *= s;
            }
        }
        for g in &mut self.hidden_bias {
            *g *= s;
        }
        for row in &mut self.output_weights {
            for g in row {
                *g *= s;
            }
        }
        for g in &mut self.output_bias {
            *g *= s;
        }
    }
}

/// Exact analytic gradient of the total loss over a batch, with the loss
/// values at the evaluation point.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub head_weight_grads: Vec<Vec<f64>>,
    pub head_bias_grads: Vec<f64>,
    pub router: RouterGradients,
    pub loss: f64,
    pub mle_loss: f64,
    pub reg_loss: f64,
    pub mean_router_entropy: f64,
}

/// Accumulator for per-example gradient contributions (sums, not means).
struct GradAccum {
    head_weight: Vec<Vec<f64>>,
    head_bias: Vec<f64>,
    router: RouterGradients,
    mle_sum: f64,
    reg_sum: f64,
    entropy_sum: f64,
    count: usize,
}

impl GradAccum {
    fn zeros(model: &MixtureModel) -> Self {
        GradAccum {
            head_weight: vec![vec![0.0; model.pair_dim()]; model.k()],
            head_bias: vec![0.0; model.k()],
            router: RouterGradients::zeros_like(model.router()),
            mle_sum: 0.0,
            reg_sum: 0.0,
            entropy_sum: 0.0,
            count: 0,
        }
    }

    fn into_bundle(mut self) -> GradientBundle {
        let n = self.count.max(1) as f64;
        let inv = 1.0 / n;
        for row in &mut self.head_weight {
            for g in row.iter_mut() {
                *g *= inv;
            }
        }
        for g in &mut self.head_bias {
            *g *= inv;
        }
        self.router.scale(inv);
        let mle = self.mle_sum * inv;
        let reg = self.reg_sum * inv;
        GradientBundle {
            head_weight_grads: self.head_weight,
            head_bias_grads: self.head_bias,
            router: self.router,
            loss: f64::NAN, // caller fills with mle + alpha * reg
            mle_loss: mle,
            reg_loss: reg,
            mean_router_entropy: self.entropy_sum * inv,
        }
    }
}

/// Backpropagates dL/df (gradient w.r.t. the softmax output) through the
/// router, accumulating into `acc`.
pub(crate) fn router_backward(
    router: &RouterParams,
    input: &[f64],
    hidden: &[f64],
    weights: &[f64],
    g_weights: &[f64],
    acc: &mut RouterGradients,
) {
    let k = router.num_heads();
    let h = router.hidden_size();
    // Softmax backward: dlogit_j = f_j * (g_j - sum_k f_k g_k).
    let inner: f64 = weights.iter().zip(g_weights).map(|(f, g)| f * g).sum();
    let dlogits: Vec<f64> = (0..k)
        .map(|j| weights[j] * (g_weights[j] - inner))
        .collect();

    for j in 0..k {
        let dl = dlogits[j];
        let row = &mut acc.output_weights[j];
        for (g, t) in row.iter_mut().zip(hidden) {
            *g += dl * t;
        }
        acc.output_bias[j] += dl;
    }

    for j in 0..h {
        let mut dt = 0.0;
        for (kk, dl) in dlogits.iter().enumerate() {
            dt += router.output_weights[kk][j] * dl;
        }
        let dpre = dt * (1.0 - hidden[j] * hidden[j]);
        let row = &mut acc.hidden_weights[j];
        for (g, x) in row.iter_mut().zip(input) {
            *g += dpre * x;
        }
        acc.hidden_bias[j] += dpre;
    }
}

fn accumulate_example(
    model: &MixtureModel,
    ex: &PreferenceExample,
    alpha: f64,
    index: usize,
    acc: &mut GradAccum,
) -> Result<()> {
    let ctx = ex.prompt_ctx.as_slice();
    let hidden = model.router().hidden(ctx);
    let logits = model.router().logits_from_hidden(&hidden);
    let weights = crate::model::softmax(&logits);
    let probs = model.head_probabilities(ex)?;

    let weight_sum: f64 = weights.iter().sum();
    let p_mix: f64 = weights
        .iter()
        .zip(&probs)
        .map(|(f, p)| f * p)
        .sum::<f64>()
        / weight_sum;
    if !p_mix.is_finite() {
        return Err(Error::NonFiniteAtExample {
            index,
            what: "mixture probability",
        });
    }

    let mle = -safe_ln(p_mix);
    let ent = entropy(&weights);
    let reg = -ent;
    acc.mle_sum += mle;
    acc.reg_sum += reg;
    acc.entropy_sum += ent;

    // d(-ln max(p, eps))/dp: zero in the clamped region.
    let dmle_dp = if p_mix > PROB_CLAMP { -1.0 / p_mix } else { 0.0 };

    // Head gradients: dL/d(delta_k) scaled onto weights by (winner - loser).
    let winner = ex.winner.as_slice();
    let loser = ex.loser.as_slice();
    for k in 0..model.k() {
        let d_delta = dmle_dp * (weights[k] / weight_sum) * probs[k] * (1.0 - probs[k]);
        if d_delta != 0.0 {
            let row = &mut acc.head_weight[k];
            for ((g, w), l) in row.iter_mut().zip(winner).zip(loser) {
                *g += d_delta * (w - l);
            }
        }
        // Bias cancels in the score difference: exact zero gradient.
    }

    // Router gradients: mixture term plus entropy regularizer.
    let g_weights: Vec<f64> = (0..model.k())
        .map(|k| {
            let g_mle = dmle_dp * (probs[k] - p_mix) / weight_sum;
            let g_reg = if weights[k] > PROB_CLAMP {
                weights[k].ln() + 1.0
            } else {
                PROB_CLAMP.ln()
            };
            g_mle + alpha * g_reg
        })
        .collect();
    if g_weights.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteAtExample {
            index,
            what: "router gradient",
        });
    }
    router_backward(
        model.router(),
        ctx,
        &hidden,
        &weights,
        &g_weights,
        &mut acc.router,
    );
    acc.count += 1;
    Ok(())
}

/// Exact analytic gradient of `total_loss` over a batch.
pub fn compute_gradients(
    model: &MixtureModel,
    batch: &[PreferenceExample],
    alpha: f64,
) -> Result<GradientBundle> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if alpha < 0.0 {
        return Err(Error::NegativeAlpha(alpha));
    }
    let mut acc = GradAccum::zeros(model);
    for (i, ex) in batch.iter().enumerate() {
        accumulate_example(model, ex, alpha, i, &mut acc)?;
    }
    let mut bundle = acc.into_bundle();
    bundle.loss = bundle.mle_loss + alpha * bundle.reg_loss;
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamTensor {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamTensor {
    fn new(len: usize) -> Self {
        AdamTensor {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64, weight_decay: f64) {
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * params[i]);
        }
    }
}

struct AdamState {
    head_weight: Vec<AdamTensor>,
    head_bias: AdamTensor,
    hidden_weights: Vec<AdamTensor>,
    hidden_bias: AdamTensor,
    output_weights: Vec<AdamTensor>,
    output_bias: AdamTensor,
    t: u64,
}

impl AdamState {
    fn new(model: &MixtureModel) -> Self {
        let router = model.router();
        AdamState {
            head_weight: (0..model.k())
                .map(|_| AdamTensor::new(model.pair_dim()))
                .collect(),
            head_bias: AdamTensor::new(model.k()),
            hidden_weights: (0..router.hidden_size())
                .map(|_| AdamTensor::new(router.input_dim()))
                .collect(),
            hidden_bias: AdamTensor::new(router.hidden_size()),
            output_weights: (0..router.num_heads())
                .map(|_| AdamTensor::new(router.hidden_size()))
                .collect(),
            output_bias: AdamTensor::new(router.num_heads()),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut MixtureModel, bundle: &GradientBundle, lr: f64, wd: f64) {
        self.t += 1;
        let t = self.t;
        let k = model.k();
        {
            let heads = model.heads_mut();
            let mut biases: Vec<f64> = heads.iter().map(|h| h.bias).collect();
            for i in 0..k {
                self.head_weight[i].step(
                    &mut heads[i].weights,
                    &bundle.head_weight_grads[i],
                    lr,
                    t,
                    wd,
                );
            }
            self.head_bias
                .step(&mut biases, &bundle.head_bias_grads, lr, t, wd);
            for (head, b) in heads.iter_mut().zip(biases) {
                head.bias = b;
            }
        }
        let router = model.router_mut();
        for (j, tensor) in self.hidden_weights.iter_mut().enumerate() {
            tensor.step(
                &mut router.hidden_weights[j],
                &bundle.router.hidden_weights[j],
                lr,
                t,
                wd,
            );
        }
        self.hidden_bias.step(
            &mut router.hidden_bias,
            &bundle.router.hidden_bias,
            lr,
            t,
            wd,
        );
        for (j, tensor) in self.output_weights.iter_mut().enumerate() {
            tensor.step(
                &mut router.output_weights[j],
                &bundle.router.output_weights[j],
                lr,
                t,
                wd,
            );
        }
        self.output_bias.step(
            &mut router.output_bias,
            &bundle.router.output_bias,
            lr,
            t,
            wd,
        );
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStepRecord {
    pub step: usize,
    pub mle_loss: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
    pub mean_router_entropy: f64,
}

/// Trains a fresh mixture model on `corpus`.
pub fn train_stage1(
    corpus: &[PreferenceExample],
    config: &Stage1Config,
) -> Result<(MixtureModel, Vec<TrainStepRecord>)> {
    config.validate()?;
    if corpus.len() < config.batch_size {
        return Err(Error::InvalidCorpus(format!(
            "corpus size {} is smaller than batch size {}",
            corpus.len(),
            config.batch_size
        )));
    }
    let pair_dim = corpus[0].winner.len();
    let ctx_dim = corpus[0].prompt_ctx.len();
    let mut rng = DetRng::new(config.seed);
    let model = init_model(config.k, pair_dim, ctx_dim, config.hidden_size, &mut rng);
    train_stage1_from(model, corpus, config)
}

/// Trains from an explicit initial model. Shuffling and the optimizer are
/// driven by `config.seed`; identical inputs give identical outputs.
pub fn train_stage1_from(
    mut model: MixtureModel,
    corpus: &[PreferenceExample],
    config: &Stage1Config,
) -> Result<(MixtureModel, Vec<TrainStepRecord>)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for ex in corpus {
        if ex.winner.len() != model.pair_dim()
            || ex.loser.len() != model.pair_dim()
            || ex.prompt_ctx.len() != model.ctx_dim()
        {
            return Err(Error::DimensionMismatch {
                context: "training corpus vs model",
                expected: model.pair_dim(),
                actual: ex.winner.len(),
            });
        }
    }

    let n = corpus.len();
    let micro_per_epoch = n.div_ceil(config.batch_size);
    let steps_per_epoch = micro_per_epoch.div_ceil(config.grad_accum_steps);
    let total_steps = steps_per_epoch * config.epochs;
    let warmup_steps = ((config.warmup_ratio * total_steps as f64).round() as usize).max(1);

    let shuffle_root = DetRng::new(config.seed).derive(TAG_SHUFFLE);
    let mut adam = AdamState::new(&model);
    let mut log = Vec::with_capacity(total_steps);
    let mut last_finite = f64::NAN;
    let mut step = 0usize;

    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        shuffle_root.derive(epoch as u64).shuffle(&mut indices);
        let mut acc = GradAccum::zeros(&model);
        let mut micro_in_acc = 0usize;
        let mut seen = 0usize;
        for chunk in indices.chunks(config.batch_size) {
            for &i in chunk {
                accumulate_example(&model, &corpus[i], config.alpha, i, &mut acc)?;
            }
            micro_in_acc += 1;
            seen += chunk.len();
            if micro_in_acc == config.grad_accum_steps || seen == n {
                let mut bundle =
                    std::mem::replace(&mut acc, GradAccum::zeros(&model)).into_bundle();
                bundle.loss = bundle.mle_loss + config.alpha * bundle.reg_loss;
                if !bundle.loss.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        last_loss: last_finite,
                    });
                }
                last_finite = bundle.loss;
                let lr = if step < warmup_steps {
                    config.learning_rate * (step + 1) as f64 / warmup_steps as f64
                } else {
                    config.learning_rate
                };
                adam.step(&mut model, &bundle, lr, config.weight_decay);
                log.push(TrainStepRecord {
                    step,
                    mle_loss: bundle.mle_loss,
                    reg_loss: bundle.reg_loss,
                    total_loss: bundle.loss,
                    mean_router_entropy: bundle.mean_router_entropy,
                });
                step += 1;
                micro_in_acc = 0;
            }
        }
    }
    model.check_finite()?;
    Ok((model, log))
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// A single parameter coordinate of a mixture model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamCoord {
    HeadWeight(usize, usize),
    HeadBias(usize),
    HiddenWeight(usize, usize),
    HiddenBias(usize),
    OutputWeight(usize, usize),
    OutputBias(usize),
}

impl std::fmt::Display for ParamCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamCoord::HeadWeight(k, i) => write!(f, "head[{k}].weights[{i}]"),
            ParamCoord::HeadBias(k) => write!(f, "head[{k}].bias"),
            ParamCoord::HiddenWeight(j, d) => write!(f, "router.hidden_weights[{j}][{d}]"),
            ParamCoord::HiddenBias(j) => write!(f, "router.hidden_bias[{j}]"),
            ParamCoord::OutputWeight(k, j) => write!(f, "router.output_weights[{k}][{j}]"),
            ParamCoord::OutputBias(k) => write!(f, "router.output_bias[{k}]"),
        }
    }
}

pub(crate) fn param_mut(model: &mut MixtureModel, coord: ParamCoord) -> &mut f64 {
    match coord {
        ParamCoord::HeadWeight(k, i) => &mut model.heads_mut()[k].weights[i],
        ParamCoord::HeadBias(k) => &mut model.heads_mut()[k].bias,
        ParamCoord::HiddenWeight(j, d) => &mut model.router_mut().hidden_weights[j][d],
        ParamCoord::HiddenBias(j) => &mut model.router_mut().hidden_bias[j],
        ParamCoord::OutputWeight(k, j) => &mut model.router_mut().output_weights[k][j],
        ParamCoord::OutputBias(k) => &mut model.router_mut().output_bias[k],
    }
}

fn bundle_value(bundle: &GradientBundle, coord: ParamCoord) -> f64 {
    match coord {
        ParamCoord::HeadWeight(k, i) => bundle.head_weight_grads[k][i],
        ParamCoord::HeadBias(k) => bundle.head_bias_grads[k],
        ParamCoord::HiddenWeight(j, d) => bundle.router.hidden_weights[j][d],
        ParamCoord::HiddenBias(j) => bundle.router.hidden_bias[j],
        ParamCoord::OutputWeight(k, j) => bundle.router.output_weights[k][j],
        ParamCoord::OutputBias(k) => bundle.router.output_bias[k],
    }
}

/// Enumerates every coordinate of the model.
pub(crate) fn all_coords(model: &MixtureModel) -> Vec<ParamCoord> {
    let mut coords = Vec::new();
    for k in 0..model.k() {
        for i in 0..model.pair_dim() {
            coords.push(ParamCoord::HeadWeight(k, i));
        }
        coords.push(ParamCoord::HeadBias(k));
    }
    let router = model.router();
    for j in 0..router.hidden_size() {
        for d in 0..router.input_dim() {
            coords.push(ParamCoord::HiddenWeight(j, d));
        }
        coords.push(ParamCoord::HiddenBias(j));
    }
    for k in 0..router.num_heads() {
        for j in 0..router.hidden_size() {
            coords.push(ParamCoord::OutputWeight(k, j));
        }
        coords.push(ParamCoord::OutputBias(k));
    }
    coords
}

fn is_bias(coord: ParamCoord) -> bool {
    matches!(
        coord,
        ParamCoord::HeadBias(_) | ParamCoord::HiddenBias(_) | ParamCoord::OutputBias(_)
    )
}

/// One compared coordinate in a gradient-check report.
#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub coord: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
    pub failures: Vec<CoordCheck>,
    pub passed: bool,
    pub warning: Option<String>,
}

/// Scale floor for relative error: below this magnitude the comparison is
/// dominated by finite-difference roundoff, so errors are measured against
/// the floor instead.
const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares `compute_gradients` against central finite differences on a
/// random 5% coordinate subset plus all biases.
pub fn grad_check(
    model: &MixtureModel,
    batch: &[PreferenceExample],
    alpha: f64,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig("step must be positive".into()));
    }
    let bundle = compute_gradients(model, batch, alpha)?;
    grad_check_bundle(model, batch, alpha, &bundle, step, tolerance, seed)
}

/// Checks a caller-supplied bundle; lets tests inject faults.
pub fn grad_check_bundle(
    model: &MixtureModel,
    batch: &[PreferenceExample],
    alpha: f64,
    bundle: &GradientBundle,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let coords = all_coords(model);
    let mut rng = DetRng::new(seed).derive(0xfd);
    let selected: Vec<ParamCoord> = coords
        .iter()
        .copied()
        .filter(|c| is_bias(*c) || rng.uniform() < 0.05)
        .collect();

    let mut probe = model.clone();
    let mut max_rel_error: f64 = 0.0;
    let mut failures = Vec::new();
    for coord in &selected {
        let original = *param_mut(&mut probe, *coord);
        *param_mut(&mut probe, *coord) = original + step;
        let plus = probe.total_loss(batch, alpha)?;
        *param_mut(&mut probe, *coord) = original - step;
        let minus = probe.total_loss(batch, alpha)?;
        *param_mut(&mut probe, *coord) = original;

        let numeric = (plus - minus) / (2.0 * step);
        let analytic = bundle_value(bundle, *coord);
        let scale = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        let rel_error = (analytic - numeric).abs() / scale;
        max_rel_error = max_rel_error.max(rel_error);
        if rel_error > tolerance {
            failures.push(CoordCheck {
                coord: coord.to_string(),
                analytic,
                numeric,
                rel_error,
            });
        }
    }

    let warning = (step > 1e-3).then(|| {
        format!("step {step} is large; comparison may be discretization-dominated")
    });
    Ok(GradCheckReport {
        max_rel_error,
        coordinates_checked: selected.len(),
        passed: failures.is_empty(),
        failures,
        warning,
    })
}
