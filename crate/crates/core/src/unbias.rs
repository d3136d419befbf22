//! Learns to predict, from a node's own features, the mean features of its
//! neighborhood in the counterfactually augmented graph, and adds that
//! prediction back onto the features.
//!
//! The regressor generalizes the heterogeneous-neighborhood pattern to nodes
//! whose neighborhoods could not be rewired.

use serde::{Deserialize, Serialize};

use crate::counterfactual::AugmentedGraph;
use crate::error::{Error, Result};
use crate::gnn::{stream_rng, Adam, Layer, LayerKind, Model};
use crate::graph::Neighborhoods;
use crate::tensor::Matrix;

const INIT_STREAM: u64 = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnbiasTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Hidden width; `None` uses the feature dimension and `Some(0)` drops
    /// the hidden layer, leaving an affine map.
    pub hidden: Option<usize>,
    pub seed: u64,
    /// Start the output layer at zero, so the untrained map is identically 0.
    pub zero_init_output: bool,
}

impl Default for UnbiasTrainConfig {
    fn default() -> Self {
        UnbiasTrainConfig {
            lr: 0.01,
            epochs: 200,
            hidden: None,
            seed: 0,
            zero_init_output: false,
        }
    }
}

/// `D → hidden → D` regressor with one rectified hidden layer (or a single
/// affine layer when configured without one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbiasMlp {
    pub model: Model,
    pub config: UnbiasTrainConfig,
    /// Training loss after each epoch.
    pub loss_history: Vec<f64>,
}

impl UnbiasMlp {
    pub fn init(dim: usize, cfg: &UnbiasTrainConfig) -> Self {
        let hidden = cfg.hidden.unwrap_or(dim);
        let dims: Vec<usize> = if hidden == 0 { vec![dim, dim] } else { vec![dim, hidden, dim] };
        let mut rng = stream_rng(cfg.seed, INIT_STREAM);
        let mut model = Model::build(LayerKind::Dense, LayerKind::Dense, &dims, 0.0, &mut rng);
        if cfg.zero_init_output {
            let last = model.layers.len() - 1;
            model.layers[last] = Layer::zeros(LayerKind::Dense, dims[dims.len() - 2], dim);
        }
        UnbiasMlp {
            model,
            config: cfg.clone(),
            loss_history: Vec::new(),
        }
    }

    pub fn from_model(model: Model, config: UnbiasTrainConfig) -> Result<Self> {
        if model.input_dim() != model.output_dim() {
            return Err(Error::shape(
                "UnbiasMlp",
                format!("maps {} -> {} features", model.input_dim(), model.output_dim()),
            ));
        }
        Ok(UnbiasMlp {
            model,
            config,
            loss_history: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.model.input_dim()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self.model.predict(x, None)
    }

    /// Mean squared L2 distance to the targets over `valid`, and its gradients.
    pub fn loss_and_gradients(
        &self,
        x: &Matrix,
        targets: &Matrix,
        valid: &[usize],
    ) -> Result<(f64, Vec<Matrix>)> {
        let (out, trace) = self.model.forward(x, None, None)?;
        let (loss, grad_out) = regression_loss(&out, targets, valid)?;
        let grads = trace.backward(&self.model, None, &grad_out, None, false)?;
        Ok((loss, grads.params))
    }
}

/// `(1/|valid|) Σ_{i∈valid} ‖out_i − target_i‖²` and its gradient.
pub fn regression_loss(out: &Matrix, targets: &Matrix, valid: &[usize]) -> Result<(f64, Matrix)> {
    if out.shape() != targets.shape() {
        return Err(Error::shape(
            "regression_loss",
            format!("{:?} vs {:?}", out.shape(), targets.shape()),
        ));
    }
    if valid.is_empty() {
        return Err(Error::EmptyMask("regression_loss"));
    }
    let scale = 1.0 / valid.len() as f64;
    let mut grad = Matrix::zeros(out.rows(), out.cols());
    let mut loss = 0.0;
    for &i in valid {
        for ((g, o), t) in grad.row_mut(i).iter_mut().zip(out.row(i)).zip(targets.row(i)) {
            let d = o - t;
            loss += d * d;
            *g = 2.0 * scale * d;
        }
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("regression_loss".into()));
    }
    Ok((loss, grad))
}

/// Weighted mean of neighbor features under the augmented graph. Nodes with
/// no neighbors get a zero row and are left out of `valid`.
pub fn mean_aggregate_targets(x: &Matrix, aug: &AugmentedGraph) -> Result<(Matrix, Vec<usize>)> {
    if aug.num_nodes() != x.rows() {
        return Err(Error::shape(
            "mean_aggregate_targets",
            format!("{} nodes vs {} feature rows", aug.num_nodes(), x.rows()),
        ));
    }
    let mut targets = Matrix::zeros(x.rows(), x.cols());
    let mut valid = Vec::new();
    for i in 0..x.rows() {
        let neighbors = aug.weighted_neighbors(i);
        let total: u64 = neighbors.iter().map(|&(_, w)| w).sum();
        if total == 0 {
            continue;
        }
        valid.push(i);
        let row = targets.row_mut(i);
        for &(j, w) in &neighbors {
            for (t, v) in row.iter_mut().zip(x.row(j)) {
                *t += w as f64 * v;
            }
        }
        let inv = 1.0 / total as f64;
        for t in row.iter_mut() {
            *t *= inv;
        }
    }
    Ok((targets, valid))
}

/// Fits an [`UnbiasMlp`] to the augmented-neighborhood means with full-batch Adam.
pub fn train_unbias_mlp(x: &Matrix, aug: &AugmentedGraph, cfg: &UnbiasTrainConfig) -> Result<UnbiasMlp> {
    if !(cfg.lr > 0.0) {
        return Err(Error::Config(format!("unbias learning rate {} must be positive", cfg.lr)));
    }
    let (targets, valid) = mean_aggregate_targets(x, aug)?;
    if valid.is_empty() {
        return Err(Error::Data("no node has a nonempty augmented neighborhood".into()));
    }
    fit(x, &targets, &valid, cfg)
}

/// Full-batch Adam on the regression loss against fixed targets.
pub fn fit(x: &Matrix, targets: &Matrix, valid: &[usize], cfg: &UnbiasTrainConfig) -> Result<UnbiasMlp> {
    let mut mlp = UnbiasMlp::init(x.cols(), cfg);
    let mut adam = Adam::new(cfg.lr, &mlp.model.param_shapes());
    for _ in 0..cfg.epochs {
        let (loss, grads) = mlp.loss_and_gradients(x, targets, valid)?;
        adam.step(mlp.model.params_mut(), &grads)?;
        mlp.loss_history.push(loss);
    }
    Ok(mlp)
}

/// `X + MLP(X)` for every node.
pub fn debias_features(x: &Matrix, mlp: &UnbiasMlp) -> Result<Matrix> {
    if x.cols() != mlp.dim() {
        return Err(Error::shape(
            "debias_features",
            format!("{} features vs MLP dim {}", x.cols(), mlp.dim()),
        ));
    }
    let mut out = x.clone();
    out.add_assign(&mlp.apply(x)?)?;
    out.ensure_finite("debias_features")
}
