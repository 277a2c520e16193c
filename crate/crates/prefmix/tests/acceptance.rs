//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with its measured numbers (run with `--nocapture` to see
//! them). Criteria 4-6 share one planted population and one stage-1
//! checkpoint, built once.

use std::sync::OnceLock;

use prefmix::eval::{budget_sweep, evaluate, match_heads, verify_irreducibility};
use prefmix::model::{
    bt_probability, init_model, FeatureVector, MixtureModel, PreferenceExample, RouterParams,
};
use prefmix::population::{
    bayes_accuracy, oracle_population_ce_tagged, ContextMode, HeadLayout, PlantedConfig,
    PopulationSpec, TruePopulation,
};
use prefmix::rng::DetRng;
use prefmix::routing::{
    compute_hedge_state, hedge_update, route_and_score, run_algorithm1, subsample_budget,
    Stage2Config,
};
use prefmix::trainer::{compute_gradients, grad_check, train_stage1, Stage1Config};

// ---------------------------------------------------------------------------
// Shared fixture for criteria 4-6
// ---------------------------------------------------------------------------

struct Fixture {
    spec: PopulationSpec,
    model: MixtureModel,
    /// matched[true_group] = learned head index
    matched: Vec<usize>,
    agreements: Vec<f64>,
    self_ce: f64,
    model_ce: f64,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let mut cfg = PlantedConfig::new(2, 8, 8, 0.25, 4242);
        cfg.head_scale = 7.0;
        cfg.head_layout = HeadLayout::Opposed;
        let spec = PopulationSpec::planted(&cfg).expect("valid planted config");
        let corpus = spec.sample_corpus(20_000).expect("sampling");
        let config = Stage1Config::new(2, 50, 1001);
        let (model, _) = train_stage1(&corpus, &config).expect("stage-1 training");
        let matches = match_heads(&spec, &model, 20_000, 9).expect("matching");
        let mut matched = vec![0usize; spec.k];
        let mut agreements = vec![0.0; spec.k];
        for m in &matches {
            matched[m.true_index] = m.learned_index;
            agreements[m.true_index] = m.agreement;
        }
        let self_ce = oracle_population_ce_tagged(&spec, &TruePopulation(&spec), 20_000, 777)
            .expect("self ce")
            .value;
        let model_ce = oracle_population_ce_tagged(&spec, &model, 20_000, 55)
            .expect("model ce")
            .value;
        Fixture {
            spec,
            model,
            matched,
            agreements,
            self_ce,
            model_ce,
        }
    })
}

fn seeded_batch(n: usize, pair_dim: usize, ctx_dim: usize, seed: u64) -> Vec<PreferenceExample> {
    let mut rng = DetRng::new(seed);
    (0..n)
        .map(|_| {
            let mut draw = |d: usize| {
                FeatureVector::new((0..d).map(|_| rng.normal()).collect()).unwrap()
            };
            let ctx = draw(ctx_dim);
            let winner = draw(pair_dim);
            let loser = draw(pair_dim);
            PreferenceExample::new(ctx, winner, loser).unwrap()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients match central finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_oracle() {
    let ks = [1usize, 3, 5];
    let dims = [4usize, 16];
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    let mut seed = 0u64;
    'outer: for round in 0..4 {
        for &k in &ks {
            for &d in &dims {
                if cases == 20 {
                    break 'outer;
                }
                seed += 1;
                let mut rng = DetRng::new(1000 + seed + round);
                let model = init_model(k, d, d, 16, &mut rng);
                let batch = seeded_batch(8, d, d, 2000 + seed);
                let report = grad_check(&model, &batch, 0.5, 1e-5, 1e-4, seed).unwrap();
                assert!(
                    report.passed,
                    "K={k} d={d} seed={seed}: failures {:?}",
                    report.failures
                );
                worst = worst.max(report.max_rel_error);
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 20);
    assert!(worst < 1e-4, "max relative error {worst}");
    println!("criterion 1 (gradient oracle): PASS - 20 cases, max rel error {worst:.3e}");
}

// ---------------------------------------------------------------------------
// Criterion 2: Hedge closed form and KL-surrogate minimality
// ---------------------------------------------------------------------------

fn surrogate(f: &[f64], omega: &[f64], losses: &[f64], tau: f64) -> f64 {
    let linear: f64 = f.iter().zip(losses).map(|(fk, l)| fk * l).sum();
    let kl: f64 = f
        .iter()
        .zip(omega)
        .map(|(fk, ok)| if *fk > 0.0 { fk * (fk / ok).ln() } else { 0.0 })
        .sum();
    linear + tau * kl
}

#[test]
fn criterion_2_hedge_closed_form() {
    let mut rng = DetRng::new(7777);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = 2 + rng.below(5);
        let raw: Vec<f64> = (0..k).map(|_| rng.uniform() + 0.01).collect();
        let sum: f64 = raw.iter().sum();
        let omega: Vec<f64> = raw.iter().map(|r| r / sum).collect();
        let losses: Vec<f64> = (0..k).map(|_| 8.0 * rng.uniform()).collect();
        let tau = 0.05 + 10.0 * rng.uniform();
        let ours = hedge_update(&omega, &losses, tau).unwrap();
        // Direct evaluation of the multiplicative-weights ratio.
        let raw_weights: Vec<f64> = omega
            .iter()
            .zip(&losses)
            .map(|(w, l)| w * (-l / tau).exp())
            .collect();
        let z: f64 = raw_weights.iter().sum();
        for (a, b) in ours.iter().zip(&raw_weights) {
            worst = worst.max((a - b / z).abs());
        }
    }
    assert!(worst < 1e-12, "max deviation from direct form {worst}");

    // Grid-search minimality at K=3, 0.01 resolution.
    let mut grid_checked = 0;
    for _ in 0..50 {
        let raw: Vec<f64> = (0..3).map(|_| rng.uniform() + 0.05).collect();
        let sum: f64 = raw.iter().sum();
        let omega: Vec<f64> = raw.iter().map(|r| r / sum).collect();
        let losses: Vec<f64> = (0..3).map(|_| 5.0 * rng.uniform()).collect();
        let tau = 0.1 + 2.0 * rng.uniform();
        let ours = hedge_update(&omega, &losses, tau).unwrap();
        let at_ours = surrogate(&ours, &omega, &losses, tau);
        let mut grid_min = f64::INFINITY;
        for i in 0..=100 {
            for j in 0..=(100 - i) {
                let g = [
                    i as f64 / 100.0,
                    j as f64 / 100.0,
                    (100 - i - j) as f64 / 100.0,
                ];
                grid_min = grid_min.min(surrogate(&g, &omega, &losses, tau));
            }
        }
        assert!(
            at_ours <= grid_min + 1e-12,
            "closed form {at_ours} above grid minimum {grid_min}"
        );
        grid_checked += 1;
    }
    assert_eq!(grid_checked, 50);
    println!(
        "criterion 2 (hedge closed form): PASS - 1000 triples within {worst:.3e}, 50 grid minimality cases"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: irreducibility lower bound on 10 randomized populations
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_irreducibility_gate() {
    // d in {4, 8, 16}, K in {2, 3, 4}, rho in {0.1, 0.25}, mixed geometries.
    let cases: [(usize, usize, f64, HeadLayout, f64, u64); 10] = [
        (4, 2, 0.10, HeadLayout::Random, 2.0, 101),
        (4, 3, 0.25, HeadLayout::Random, 1.5, 102),
        (4, 4, 0.10, HeadLayout::Orthogonal, 2.5, 103),
        (8, 2, 0.25, HeadLayout::Opposed, 3.0, 104),
        (8, 3, 0.10, HeadLayout::Random, 2.0, 105),
        (8, 4, 0.25, HeadLayout::Orthogonal, 1.5, 106),
        (16, 2, 0.10, HeadLayout::Opposed, 2.5, 107),
        (16, 3, 0.25, HeadLayout::Random, 2.0, 108),
        (16, 4, 0.10, HeadLayout::Random, 1.0, 109),
        (8, 2, 0.10, HeadLayout::Random, 4.0, 110),
    ];
    for (d, k, rho, layout, scale, seed) in cases {
        let mut cfg = PlantedConfig::new(k, d, d, rho, seed);
        cfg.head_scale = scale;
        cfg.head_layout = layout;
        let spec = PopulationSpec::planted(&cfg).unwrap();
        let report = verify_irreducibility(&spec, 20_000, 8000).unwrap();
        let ce = report.single_bt_ce.unwrap();
        assert_eq!(
            report.satisfied,
            Some(true),
            "d={d} k={k} rho={rho}: ce {ce} below bound {} - 3*{}",
            report.bound,
            report.mc_std_error
        );
        println!(
            "  spec d={d} k={k} rho={rho}: single-model ce {ce:.5} >= bound {:.5} (- 3x{:.5})",
            report.bound, report.mc_std_error
        );
    }
    println!("criterion 3 (irreducibility gate): PASS - 10/10 planted specs satisfied");
}

// ---------------------------------------------------------------------------
// Criterion 4: stage-1 mixture recovery on the planted population
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_mixture_recovery() {
    let fx = fixture();
    let gap = fx.model_ce - fx.self_ce;
    assert!(
        gap.abs() <= 0.02,
        "population CE gap {gap} exceeds 0.02 nats (model {} vs self {})",
        fx.model_ce,
        fx.self_ce
    );
    for (g, agreement) in fx.agreements.iter().enumerate() {
        assert!(
            *agreement >= 0.95,
            "head matched to group {g} agrees on only {agreement} of pairs"
        );
    }
    println!(
        "criterion 4 (mixture recovery): PASS - ce gap {gap:.5} nats, agreements {:?}",
        fx.agreements
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: stage-2 routing with informative contexts
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_stage2_routing() {
    let fx = fixture();
    let pool = fx
        .spec
        .sample_corpus_with(300, ContextMode::GroupOneHot { noise_rate: 0.0 }, 10)
        .unwrap();
    let train = subsample_budget(&pool, 50, 77);
    let heldout = fx
        .spec
        .sample_corpus_with(2000, ContextMode::GroupOneHot { noise_rate: 0.0 }, 11)
        .unwrap();

    let mut config = Stage2Config::new(303);
    config.tau = 1e-3;
    config.router_lr = 0.1;
    let (adapted, log) = run_algorithm1(&fx.model, &train, &config, Some(&heldout)).unwrap();
    assert_eq!(log.len(), 10);

    let mut weight_on_true = 0.0;
    let mut correct = 0usize;
    for ex in &heldout {
        let weights = adapted.router().forward(&ex.prompt_ctx).unwrap();
        weight_on_true += weights[fx.matched[ex.group_id.unwrap()]];
        if route_and_score(&adapted, ex).unwrap().predicted_winner {
            correct += 1;
        }
    }
    weight_on_true /= heldout.len() as f64;
    let accuracy = correct as f64 / heldout.len() as f64;
    let bayes = bayes_accuracy(&fx.spec, 40_000, true).unwrap();
    let sigma = (bayes.value * (1.0 - bayes.value) / heldout.len() as f64).sqrt();
    assert!(
        weight_on_true >= 0.9,
        "mean routing weight on the true head {weight_on_true} below 0.9"
    );
    assert!(
        (accuracy - bayes.value).abs() <= 2.0 * sigma + 2.0 * bayes.std_error,
        "held-out accuracy {accuracy} not within 2 binomial sigma of Bayes {}",
        bayes.value
    );

    // tau -> infinity leaves routing statistically indistinguishable from the
    // stage-1 static mixture.
    let mut frozen_cfg = config.clone();
    frozen_cfg.tau = 1e9;
    let (frozen, _) = run_algorithm1(&fx.model, &train, &frozen_cfg, None).unwrap();
    let acc = |m: &MixtureModel| -> f64 {
        heldout
            .iter()
            .filter(|ex| route_and_score(m, ex).unwrap().predicted_winner)
            .count() as f64
            / heldout.len() as f64
    };
    let static_acc = acc(&fx.model);
    let frozen_acc = acc(&frozen);
    assert!(
        (static_acc - frozen_acc).abs() < 0.005,
        "tau=1e9 moved accuracy {static_acc} -> {frozen_acc}"
    );
    println!(
        "criterion 5 (stage-2 routing): PASS - weight {weight_on_true:.4}, accuracy {accuracy:.4} \
         vs bayes {:.4}, tau=1e9 delta {:.4}",
        bayes.value,
        (static_acc - frozen_acc).abs()
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: budget-sweep early-gain/plateau shape
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_budget_sweep_shape() {
    let fx = fixture();
    let noisy_pool = fx
        .spec
        .sample_corpus_with(600, ContextMode::GroupOneHot { noise_rate: 0.3 }, 12)
        .unwrap();
    let heldout = fx
        .spec
        .sample_corpus_with(2000, ContextMode::GroupOneHot { noise_rate: 0.0 }, 11)
        .unwrap();
    let mut config = Stage2Config::new(505);
    config.router_lr = 0.1;
    let budgets = [5usize, 10, 20, 50, 100];
    let points = budget_sweep(&fx.model, &noisy_pool, &heldout, &budgets, &config, 5).unwrap();
    for p in &points {
        assert_eq!(p.accuracies.len(), 5, "five runs per budget point");
    }
    let at = |b: usize| points.iter().find(|p| p.budget == b).unwrap().mean_acc;
    let early_gain = at(50) - at(5);
    let late_gain = at(100) - at(50);
    assert!(
        late_gain < early_gain / 3.0,
        "no plateau: late gain {late_gain} vs early gain {early_gain}"
    );
    assert!(
        at(100) >= at(5),
        "accuracy decreased across the sweep: {} vs {}",
        at(100),
        at(5)
    );
    let summary: Vec<String> = points
        .iter()
        .map(|p| format!("{}:{:.3}+-{:.3}", p.budget, p.mean_acc, p.std_acc))
        .collect();
    println!(
        "criterion 6 (budget sweep shape): PASS - {} | early gain {early_gain:.4}, late gain {late_gain:.4}",
        summary.join(" ")
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: degeneracy, symmetry and determinism invariants
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_degeneracy_and_invariants() {
    // K=1 bit-equality with the single BT probability.
    for seed in 0..10u64 {
        let mut rng = DetRng::new(31_000 + seed);
        let model = init_model(1, 6, 4, 16, &mut rng);
        for ex in seeded_batch(10, 6, 4, 32_000 + seed) {
            let delta =
                model.heads()[0].score_delta(ex.winner.as_slice(), ex.loser.as_slice());
            assert_eq!(
                model.mixture_probability(&ex).unwrap(),
                bt_probability(delta),
                "K=1 not bit-identical"
            );
        }
    }

    // Complement symmetry and reward shift invariance.
    for seed in 0..10u64 {
        let mut rng = DetRng::new(33_000 + seed);
        let model = init_model(3, 5, 4, 16, &mut rng);
        let batch = seeded_batch(8, 5, 4, 34_000 + seed);
        for ex in &batch {
            let p = model.mixture_probability(ex).unwrap();
            let q = model.mixture_probability(&ex.flipped()).unwrap();
            assert!((p + q - 1.0).abs() < 1e-12, "complement symmetry broke");
        }
        let before = model.total_loss(&batch, 0.5).unwrap();
        let mut heads = model.heads().to_vec();
        for (i, head) in heads.iter_mut().enumerate() {
            head.bias += 5.0 + i as f64;
        }
        let shifted = MixtureModel::new(heads, model.router().clone()).unwrap();
        let after = shifted.total_loss(&batch, 0.5).unwrap();
        assert!((before - after).abs() < 1e-12, "shift invariance broke");
    }

    // Simplex invariant across random routers and inputs.
    let mut rng = DetRng::new(35_000);
    for _ in 0..200 {
        let k = 1 + rng.below(5);
        let d = 1 + rng.below(6);
        let router = RouterParams::random(k, d, 16, &mut rng);
        let input = FeatureVector::new((0..d).map(|_| 5.0 * rng.normal()).collect()).unwrap();
        let weights = router.forward(&input).unwrap();
        let sum: f64 = weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(weights.iter().all(|w| *w > 0.0));
    }

    // Stability at extreme score differences.
    for delta in [-1e4f64, -500.0, 500.0, 1e4] {
        let p = bt_probability(delta);
        assert!(p.is_finite() && p > 0.0 && p < 1.0);
    }

    // Head-freeze in stage 2 (byte equality), determinism of generation,
    // training and adaptation under fixed seeds.
    let mut cfg = PlantedConfig::new(2, 4, 4, 0.3, 36_000);
    cfg.head_scale = 3.0;
    cfg.head_layout = HeadLayout::Opposed;
    let spec = PopulationSpec::planted(&cfg).unwrap();
    let corpus_a = spec.sample_corpus(600).unwrap();
    let corpus_b = spec.sample_corpus(600).unwrap();
    assert_eq!(corpus_a, corpus_b, "corpus generation not deterministic");

    let mut s1 = Stage1Config::new(2, 2, 71);
    s1.hidden_size = 16;
    let (m1, _) = train_stage1(&corpus_a, &s1).unwrap();
    let (m2, _) = train_stage1(&corpus_a, &s1).unwrap();
    assert_eq!(m1, m2, "stage-1 training not deterministic");

    let ctx_pool = spec
        .sample_corpus_with(200, ContextMode::GroupOneHot { noise_rate: 0.0 }, 40)
        .unwrap();
    let ctx = subsample_budget(&ctx_pool, 50, 41);
    let s2 = Stage2Config::new(72);
    let (a1, _) = run_algorithm1(&m1, &ctx, &s2, None).unwrap();
    let (a2, _) = run_algorithm1(&m1, &ctx, &s2, None).unwrap();
    assert_eq!(a1, a2, "stage-2 adaptation not deterministic");
    assert_eq!(m1.heads(), a1.heads(), "stage 2 mutated the heads");

    // Soft labels remain valid simplex points.
    let state = compute_hedge_state(&m1, &ctx, 1e-3).unwrap();
    for omega in &state.omega {
        let sum: f64 = omega.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    // Evaluation is order-invariant.
    let report = evaluate(&a1, &ctx_pool).unwrap();
    let mut reversed = ctx_pool.clone();
    reversed.reverse();
    let report_rev = evaluate(&a1, &reversed).unwrap();
    assert_eq!(
        report.per_attribute_accuracy,
        report_rev.per_attribute_accuracy
    );

    // Gradient bundle shape mirrors the model.
    let bundle = compute_gradients(&m1, &corpus_a[..16], 0.5).unwrap();
    assert_eq!(bundle.head_weight_grads.len(), 2);
    assert_eq!(bundle.head_bias_grads.len(), 2);

    println!("criterion 7 (degeneracy and invariants): PASS");
}
