//! Behavioural checks of the training pipeline on small graphs.

mod common;

use common::*;
use fairicd::adversarial::{adversarial_round, Discriminator, EncoderState, RoundInputs};
use fairicd::gnn::{stream_rng, Adam, LayerKind, Model, Propagation};
use fairicd::pipeline::train::log_to_csv;
use fairicd::pipeline::{
    evaluate, generate_synthetic, predict, run_experiment, train, ExperimentConfig, Strategy, SyntheticConfig,
};
use fairicd::unbias::{fit, UnbiasTrainConfig};
use fairicd::{Dataset, Labels, Matrix, Sensitive};
use rand::Rng;

fn small_synthetic(bias: f64, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        n: 400,
        bias_strength: bias,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn quick(strategy: Strategy) -> ExperimentConfig {
    ExperimentConfig {
        strategy,
        epochs: 40,
        seeds: vec![0, 1],
        ..Default::default()
    }
}

/// Two clusters with a feature that separates the classes.
#[test]
fn separable_fixture_is_fit_quickly() {
    let mut r = rng(5);
    let n = 40;
    let y: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
    let x = Matrix::from_vec(
        n,
        3,
        (0..n)
            .flat_map(|i| [if y[i] == 1 { 2.0 } else { -2.0 } + r.random_range(-0.3..0.3), r.random_range(-1.0..1.0), 1.0])
            .collect(),
    )
    .unwrap();
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| [(i, (i + 1) % (n / 2) + (i / (n / 2)) * (n / 2))]).collect();
    let g = graph(n, &edges);
    let prop = Propagation::new(&g);
    let labels = labels(&y);
    let train_mask = vec![true; n];
    let s = Sensitive::new((0..n).map(|i| (i % 2) as u8).collect()).unwrap();
    for kind in [LayerKind::Gcn, LayerKind::Gin, LayerKind::Sage] {
        let mut model = Model::build(kind, LayerKind::Dense, &[3, 16, 2], 0.0, &mut rng(1));
        let mut adam = Adam::new(0.05, &model.param_shapes());
        let mut drng = stream_rng(0, 2);
        let inputs = RoundInputs {
            features: &x,
            prop: &prop,
            labels: &labels,
            train_mask: &train_mask,
            sensitive: &s,
            adversary_mask: &train_mask,
        };
        let mut loss = f64::INFINITY;
        for _ in 0..50 {
            let state = EncoderState { model: &mut model, adam: &mut adam, dropout_rng: &mut drng };
            loss = adversarial_round(state, None, &inputs, 0.0).unwrap().cls;
        }
        assert!(loss < 0.1, "{kind:?}: loss {loss}");
    }
}

#[test]
fn affine_neighborhood_map_is_recovered() {
    let mut r = rng(3);
    let x = random_matrix(&mut r, 60, 3);
    let a = random_matrix(&mut r, 3, 3);
    let mut targets = x.matmul(&a).unwrap();
    targets.add_assign(&x).unwrap();
    let valid: Vec<usize> = (0..60).collect();
    let cfg = UnbiasTrainConfig { hidden: Some(0), lr: 0.05, epochs: 3000, ..Default::default() };
    let mlp = fit(&x, &targets, &valid, &cfg).unwrap();
    let last = *mlp.loss_history.last().unwrap();
    assert!(last < 1e-6, "final loss {last}");
}

#[test]
fn neighborhood_regression_loss_decreases() {
    let mut r = rng(4);
    let x = random_matrix(&mut r, 50, 4);
    let targets = random_matrix(&mut r, 50, 4);
    let valid: Vec<usize> = (0..50).step_by(2).collect();
    let cfg = UnbiasTrainConfig { lr: 0.001, epochs: 200, ..Default::default() };
    let h = fit(&x, &targets, &valid, &cfg).unwrap().loss_history;
    assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-12), "loss went up");
    assert!(h.last().unwrap() < &h[0]);
}

/// With λ = 0, no regression epochs and a zero output layer, Fair-ICD must
/// train exactly the vanilla model.
#[test]
fn zero_weight_fair_icd_is_bitwise_vanilla() {
    let ds = small_synthetic(1.0, 7);
    let fair = ExperimentConfig {
        lambda: 0.0,
        unbias: fairicd::pipeline::config::UnbiasSettings {
            epochs: 0,
            zero_init_output: true,
            ..Default::default()
        },
        ..quick(Strategy::FairIcd)
    };
    let vanilla = fair.with_strategy(Strategy::Vanilla);
    for seed in [0, 3] {
        let a = train(&ds, &fair, seed).unwrap();
        let b = train(&ds, &vanilla, seed).unwrap();
        assert!(!a.bundle.fell_back_to_vanilla);
        assert_eq!(a.bundle.encoder, b.bundle.encoder);
        assert_eq!(predict(&a.bundle, &ds).unwrap(), predict(&b.bundle, &ds).unwrap());
        assert_eq!(evaluate(&a.bundle, &ds).unwrap(), evaluate(&b.bundle, &ds).unwrap());
    }
}

#[test]
fn edge_drop_with_zero_rate_is_vanilla() {
    let ds = small_synthetic(1.0, 2);
    let cfg = ExperimentConfig { edge_drop_p: 0.0, ..quick(Strategy::EdgeDrop) };
    let a = train(&ds, &cfg, 1).unwrap();
    let b = train(&ds, &cfg.with_strategy(Strategy::Vanilla), 1).unwrap();
    assert_eq!(a.bundle.encoder, b.bundle.encoder);
}

#[test]
fn masking_every_feature_predicts_one_class() {
    let ds = small_synthetic(1.0, 2);
    let cfg = ExperimentConfig { feature_mask_p: 1.0, ..quick(Strategy::FeatureMask) };
    let run = train(&ds, &cfg, 0).unwrap();
    let pred = predict(&run.bundle, &ds).unwrap();
    assert!(pred.iter().all(|&p| p == pred[0]), "constant input must give a constant prediction");
    let m = evaluate(&run.bundle, &ds).unwrap();
    assert_eq!(m.dp, 0.0);
}

#[test]
fn unbiased_generator_gives_fair_vanilla() {
    let ds = generate_synthetic(&SyntheticConfig { n: 1000, bias_strength: 0.0, ..Default::default() }).unwrap();
    let cfg = ExperimentConfig { seeds: vec![0, 1, 2], epochs: 100, ..quick(Strategy::Vanilla) };
    let r = run_experiment(&ds, &cfg).unwrap();
    assert!(r.aggregates.dp.mean < 0.05, "DP {}", r.aggregates.dp.mean);
}

#[test]
fn runs_are_deterministic() {
    let ds = small_synthetic(1.0, 9);
    for strategy in Strategy::ALL {
        let cfg = quick(strategy);
        let a = train(&ds, &cfg, 4).unwrap();
        let b = train(&ds, &cfg, 4).unwrap();
        assert_eq!(a.bundle, b.bundle, "{strategy:?}");
        assert_eq!(log_to_csv(&a.log), log_to_csv(&b.log));
    }
    let cfg = quick(Strategy::FairIcd);
    let a = run_experiment(&ds, &cfg).unwrap().to_json().unwrap();
    let b = run_experiment(&ds, &cfg).unwrap().to_json().unwrap();
    assert_eq!(a, b);
}

#[test]
fn seeds_change_the_model() {
    let ds = small_synthetic(1.0, 9);
    let cfg = quick(Strategy::Vanilla);
    assert_ne!(train(&ds, &cfg, 0).unwrap().bundle.encoder, train(&ds, &cfg, 1).unwrap().bundle.encoder);
}

/// The discriminator step only touches the discriminator; the encoder step
/// only touches the encoder.
#[test]
fn adversary_and_encoder_parameters_are_isolated() {
    let ds = small_synthetic(1.0, 1);
    let prop = Propagation::new(&ds.graph);
    let mut model = Model::build(LayerKind::Gcn, LayerKind::Dense, &[ds.num_features(), 8, 2], 0.0, &mut rng(0));
    let frozen = model.clone();
    // a zero learning rate freezes the encoder; only the discriminator moves
    let mut adam = Adam::new(1e-300, &model.param_shapes());
    let mut drng = stream_rng(0, 2);
    let mut disc = Discriminator::new(8, 4, 0.05, 0);
    let before = disc.clone();
    let all = vec![true; ds.num_nodes()];
    let labels: Labels = ds.labels.clone();
    let inputs = RoundInputs {
        features: &ds.features,
        prop: &prop,
        labels: &labels,
        train_mask: &all,
        sensitive: &ds.sensitive,
        adversary_mask: &all,
    };
    let state = EncoderState { model: &mut model, adam: &mut adam, dropout_rng: &mut drng };
    adversarial_round(state, Some(&mut disc), &inputs, 1.0).unwrap();
    assert_ne!(disc.model, before.model);
    for (p, q) in model.params().iter().zip(frozen.params()) {
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            assert!((a - b).abs() < 1e-200);
        }
    }

    // with λ > 0 the encoder update differs from the λ = 0 one, so the
    // adversarial gradient reaches it
    let step = |lambda: f64| {
        let mut m = frozen.clone();
        let mut adam = Adam::new(0.01, &m.param_shapes());
        let mut d = before.clone();
        let mut drng = stream_rng(0, 2);
        let state = EncoderState { model: &mut m, adam: &mut adam, dropout_rng: &mut drng };
        adversarial_round(state, Some(&mut d), &inputs, lambda).unwrap();
        (m, d)
    };
    let (m0, d0) = step(0.0);
    let (m1, d1) = step(2.0);
    assert_ne!(m0, m1);
    assert_eq!(d0, d1, "the discriminator update must not depend on λ");
}

#[test]
fn negative_weight_is_rejected() {
    let ds = small_synthetic(1.0, 1);
    let cfg = ExperimentConfig { lambda: -1.0, ..quick(Strategy::FairIcd) };
    assert!(train(&ds, &cfg, 0).is_err());
}
