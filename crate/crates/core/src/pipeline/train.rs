//! Training and evaluation of a single run (one configuration, one seed).

use std::fmt::Write as _;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::adversarial::{adversarial_round, Discriminator, EncoderState, RoundInputs};
use crate::counterfactual::{augment_graph, edge_drop, feature_mask, find_counterfactuals};
use crate::dataset::{make_splits, standardize_features, Dataset, SplitMasks};
use crate::error::{Error, Result};
use crate::gnn::loss::argmax;
use crate::gnn::{stream_rng, Adam, LayerKind, Model, Propagation};
use crate::graph::Graph;
use crate::metrics::{classification_metrics, demographic_parity, BiasDiagnostics, MetricsReport};
use crate::pipeline::config::{ExperimentConfig, Strategy};
use crate::tensor::Matrix;
use crate::unbias::{debias_features, train_unbias_mlp, UnbiasMlp, UnbiasTrainConfig};

const INIT_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const EDGE_DROP_STREAM: u64 = 3;
const FEATURE_MASK_STREAM: u64 = 4;

/// Everything needed to reproduce predictions of a trained run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    /// Message-passing layers followed by the classification head.
    pub encoder: Model,
    pub discriminator: Option<Discriminator>,
    pub unbias: Option<UnbiasMlp>,
    /// Set when no counterfactual was found and the run trained as vanilla.
    pub fell_back_to_vanilla: bool,
    pub best_epoch: usize,
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_cls: f64,
    pub loss_d: Option<f64>,
    pub val_acc: f64,
    pub val_dp: Option<f64>,
}

/// Renders the log as CSV with header `epoch,L_cls,L_d,val_acc,val_dp`.
pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,L_cls,L_d,val_acc,val_dp\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for row in log {
        writeln!(
            out,
            "{},{:.6},{},{:.6},{}",
            row.epoch,
            row.loss_cls,
            opt(row.loss_d),
            row.val_acc,
            opt(row.val_dp)
        )
        .unwrap();
    }
    out
}

/// A trained run: the bundle plus its training log and, for the
/// counterfactual strategy, augmentation diagnostics.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub bundle: ModelBundle,
    pub log: Vec<EpochLog>,
    pub augmentation: Option<AugmentationSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSummary {
    pub k: usize,
    pub counterfactuals_found: usize,
    pub original: BiasDiagnostics,
    pub augmented: BiasDiagnostics,
}

/// Split masks for a run: the dataset's own, or freshly drawn from the config.
pub fn resolve_splits(ds: &Dataset, cfg: &ExperimentConfig) -> Result<SplitMasks> {
    match &ds.splits {
        Some(s) => Ok(s.clone()),
        None => make_splits(&ds.labels, cfg.split, cfg.split_seed),
    }
}

/// Standardized features; the sensitive column, if present, is left as is.
pub fn base_features(ds: &Dataset) -> Matrix {
    standardize_features(&ds.features, &ds.matching_exclusions())
}

/// Features and graph seen by the encoder for a given run.
fn model_inputs(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    unbias: Option<&UnbiasMlp>,
) -> Result<(Matrix, Graph)> {
    let x = base_features(ds);
    Ok(match cfg.strategy {
        Strategy::Vanilla => (x, ds.graph.clone()),
        Strategy::EdgeDrop => {
            let drop_seed = derived_seed(seed, EDGE_DROP_STREAM);
            (x, edge_drop(&ds.graph, cfg.edge_drop_p, drop_seed)?)
        }
        Strategy::FeatureMask => {
            let mask_seed = derived_seed(seed, FEATURE_MASK_STREAM);
            (feature_mask(&x, cfg.feature_mask_p, mask_seed)?, ds.graph.clone())
        }
        Strategy::FairIcd => match unbias {
            Some(mlp) => (debias_features(&x, mlp)?, ds.graph.clone()),
            None => (x, ds.graph.clone()),
        },
    })
}

fn derived_seed(seed: u64, stream: u64) -> u64 {
    use rand::RngCore;
    stream_rng(seed, stream).next_u64()
}

fn build_encoder(cfg: &ExperimentConfig, input_dim: usize, seed: u64) -> Model {
    let mut dims = vec![input_dim];
    dims.extend(std::iter::repeat_n(cfg.model.hidden, cfg.model.layers));
    dims.push(2);
    let mut rng = stream_rng(seed, INIT_STREAM);
    let kind = cfg.backbone.layer_kind();
    let mut layers: Vec<_> = (0..cfg.model.layers)
        .map(|k| crate::gnn::Layer::init(kind, dims[k], dims[k + 1], &mut rng))
        .collect();
    layers.push(crate::gnn::Layer::init(LayerKind::Dense, cfg.model.hidden, 2, &mut rng));
    Model::from_layers(layers, cfg.model.dropout).expect("encoder dims chain")
}

struct FitOutput {
    encoder: Model,
    discriminator: Option<Discriminator>,
    log: Vec<EpochLog>,
    best_epoch: usize,
}

/// Trains the encoder (and discriminator, if given) with early stopping on
/// validation accuracy; returns the best-validation snapshot.
fn fit_encoder(
    x: &Matrix,
    graph: &Graph,
    ds: &Dataset,
    splits: &SplitMasks,
    cfg: &ExperimentConfig,
    seed: u64,
    mut discriminator: Option<Discriminator>,
) -> Result<FitOutput> {
    let prop = Propagation::new(graph);
    let mut encoder = build_encoder(cfg, x.cols(), seed);
    let mut adam = Adam::new(cfg.lr, &encoder.param_shapes()).with_weight_decay(cfg.model.weight_decay);
    let mut dropout_rng = stream_rng(seed, DROPOUT_STREAM);
    let all_nodes = vec![true; ds.num_nodes()];
    let inputs = RoundInputs {
        features: x,
        prop: &prop,
        labels: &ds.labels,
        train_mask: &splits.train,
        sensitive: &ds.sensitive,
        adversary_mask: &all_nodes,
    };
    let has_val = splits.val.iter().any(|&v| v);

    let mut best: Option<(f64, usize, Model, Option<Discriminator>)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut since_best = 0;
    // Warm-up only applies when there is an adversary to warm up.
    let warmup = if discriminator.is_some() { cfg.discriminator.warmup } else { 0 };
    for epoch in 0..cfg.epochs {
        let lambda = if epoch < warmup { 0.0 } else { cfg.lambda };
        let losses = adversarial_round(
            EncoderState {
                model: &mut encoder,
                adam: &mut adam,
                dropout_rng: &mut dropout_rng,
            },
            discriminator.as_mut(),
            &inputs,
            lambda,
        )?;
        let (val_acc, val_dp) = if has_val {
            let pred = argmax(&encoder.predict(x, Some(&prop))?);
            let (acc, _) = classification_metrics(&pred, &ds.labels, &splits.val)?;
            (acc, demographic_parity(&pred, &ds.sensitive, &splits.val).ok())
        } else {
            (f64::NAN, None)
        };
        log.push(EpochLog {
            epoch,
            loss_cls: losses.cls,
            loss_d: losses.disc,
            val_acc,
            val_dp,
        });
        if epoch < warmup.max(cfg.select_after) {
            continue;
        }
        let improved = match &best {
            None => true,
            Some((best_acc, ..)) => has_val && val_acc > *best_acc,
        };
        if improved || !has_val {
            best = Some((val_acc, epoch, encoder.clone(), discriminator.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (encoder, best_epoch, discriminator) = match best {
        Some((_, epoch, model, disc)) => (model, epoch, disc),
        None => (encoder, 0, discriminator),
    };
    Ok(FitOutput {
        encoder,
        discriminator,
        log,
        best_epoch,
    })
}

/// Trains a vanilla, edge-dropping or feature-masking run.
pub fn train_baseline(ds: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<TrainedRun> {
    if cfg.strategy == Strategy::FairIcd {
        return Err(Error::Config("train_baseline called with the fair_icd strategy".into()));
    }
    cfg.validate()?;
    let splits = resolve_splits(ds, cfg)?;
    let (x, graph) = model_inputs(ds, cfg, seed, None)?;
    let fit = fit_encoder(&x, &graph, ds, &splits, cfg, seed, None)?;
    Ok(TrainedRun {
        bundle: ModelBundle {
            config: cfg.clone(),
            config_hash: cfg.hash(),
            seed,
            encoder: fit.encoder,
            discriminator: None,
            unbias: None,
            fell_back_to_vanilla: false,
            best_epoch: fit.best_epoch,
        },
        log: fit.log,
        augmentation: None,
    })
}

/// Two-stage training: counterfactual augmentation and neighborhood
/// regression, then adversarial training on the debiased features.
pub fn train_fair_icd(ds: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<TrainedRun> {
    if cfg.strategy != Strategy::FairIcd {
        return Err(Error::Config(format!(
            "train_fair_icd called with strategy {}",
            cfg.strategy.as_str()
        )));
    }
    cfg.validate()?;
    let splits = resolve_splits(ds, cfg)?;
    let x = base_features(ds);
    let cf = find_counterfactuals(&x, &ds.sensitive, cfg.k, &ds.matching_exclusions())?;

    let (unbias, augmentation) = if cf.num_found() == 0 {
        warn!("no counterfactual found for k = {}; training without feature debiasing", cfg.k);
        (None, None)
    } else {
        let aug = augment_graph(&ds.graph, &ds.sensitive, &cf)?;
        let summary = AugmentationSummary {
            k: cfg.k,
            counterfactuals_found: cf.num_found(),
            original: BiasDiagnostics::compute(&ds.graph, &ds.sensitive),
            augmented: BiasDiagnostics::compute(&aug, &ds.sensitive),
        };
        info!(
            "k = {}: {} counterfactuals, heterogeneous degree {:.3} -> {:.3}",
            cfg.k,
            summary.counterfactuals_found,
            summary.original.avg_heterogeneous_degree,
            summary.augmented.avg_heterogeneous_degree
        );
        let unbias_cfg = UnbiasTrainConfig {
            lr: cfg.unbias.lr,
            epochs: cfg.unbias.epochs,
            hidden: cfg.unbias.hidden,
            seed,
            zero_init_output: cfg.unbias.zero_init_output,
        };
        (Some(train_unbias_mlp(&x, &aug, &unbias_cfg)?), Some(summary))
    };
    let fell_back = unbias.is_none();

    let (features, graph) = model_inputs(ds, cfg, seed, unbias.as_ref())?;
    let mut disc = Discriminator::new(cfg.model.hidden, cfg.discriminator.hidden, cfg.discriminator.lr, seed);
    disc.steps_per_round = cfg.discriminator.steps;
    let fit = fit_encoder(&features, &graph, ds, &splits, cfg, seed, Some(disc))?;
    Ok(TrainedRun {
        bundle: ModelBundle {
            config: cfg.clone(),
            config_hash: cfg.hash(),
            seed,
            encoder: fit.encoder,
            discriminator: fit.discriminator,
            unbias,
            fell_back_to_vanilla: fell_back,
            best_epoch: fit.best_epoch,
        },
        log: fit.log,
        augmentation,
    })
}

/// Dispatches on the configured strategy.
pub fn train(ds: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<TrainedRun> {
    match cfg.strategy {
        Strategy::FairIcd => train_fair_icd(ds, cfg, seed),
        _ => train_baseline(ds, cfg, seed),
    }
}

/// Hard predictions of a bundle for every node.
pub fn predict(bundle: &ModelBundle, ds: &Dataset) -> Result<Vec<u8>> {
    let (x, graph) = model_inputs(ds, &bundle.config, bundle.seed, bundle.unbias.as_ref())?;
    let logits = bundle.encoder.predict(&x, Some(&Propagation::new(&graph)))?;
    Ok(argmax(&logits))
}

/// Test-split metrics of a bundle.
pub fn evaluate(bundle: &ModelBundle, ds: &Dataset) -> Result<MetricsReport> {
    let splits = resolve_splits(ds, &bundle.config)?;
    if !splits.test.iter().any(|&t| t) {
        return Err(Error::EmptyMask("evaluate"));
    }
    let pred = predict(bundle, ds)?;
    MetricsReport::compute(&pred, &ds.labels, &ds.sensitive, &splits.test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synthetic::{generate_synthetic, SyntheticConfig};

    fn tiny() -> Dataset {
        generate_synthetic(&SyntheticConfig { n: 120, seed: 3, ..Default::default() }).unwrap()
    }

    fn quick(strategy: Strategy) -> ExperimentConfig {
        ExperimentConfig { strategy, epochs: 20, unbias: crate::pipeline::config::UnbiasSettings { epochs: 20, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn log_csv_has_expected_header() {
        let csv = log_to_csv(&[EpochLog { epoch: 0, loss_cls: 0.5, loss_d: None, val_acc: 0.25, val_dp: Some(0.1) }]);
        assert_eq!(csv, "epoch,L_cls,L_d,val_acc,val_dp\n0,0.500000,,0.250000,0.100000\n");
    }

    #[test]
    fn strategy_mismatch_is_rejected() {
        let ds = tiny();
        assert!(train_baseline(&ds, &quick(Strategy::FairIcd), 0).is_err());
        assert!(train_fair_icd(&ds, &quick(Strategy::Vanilla), 0).is_err());
    }

    #[test]
    fn evaluate_is_deterministic() {
        let ds = tiny();
        let run = train(&ds, &quick(Strategy::FairIcd), 1).unwrap();
        assert!(run.augmentation.is_some());
        let a = evaluate(&run.bundle, &ds).unwrap();
        let b = evaluate(&run.bundle, &ds).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_group_falls_back_to_vanilla() {
        let mut ds = tiny();
        // Put everyone in one group: no counterfactual can exist. DP would be
        // undefined, so only training is exercised here.
        ds.sensitive = crate::dataset::Sensitive::new(vec![0; ds.num_nodes()]).unwrap();
        let run = train(&ds, &quick(Strategy::FairIcd), 0).unwrap();
        assert!(run.bundle.fell_back_to_vanilla);
        assert!(run.bundle.unbias.is_none());
    }
}
