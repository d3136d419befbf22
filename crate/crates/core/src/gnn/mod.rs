//! A small dense-feature GNN engine with hand-written reverse mode.
//!
//! A [`Model`] is a stack of layers. Every layer but the last is followed by
//! a rectifier and (in training mode) inverted dropout; the last layer emits
//! raw scores. The input to the last layer, before dropout, is the model's
//! *representation*.
//!
//! Message-passing layers read a sparse operator from [`Propagation`]:
//!
//! * `gcn`:  `Â H W + b`, `Â = D̃^{-1/2}(A+I)D̃^{-1/2}`
//! * `gin`:  `relu((A+I) H W₁ + b₁) W₂ + b₂` (sum aggregation, ε = 0)
//! * `sage`: `H W_self + (D⁻¹A H) W_neigh + b` (mean aggregation; isolated
//!   nodes get a zero neighbor mean)
//! * `dense`: `H W + b`

pub mod adam;
pub mod loss;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::{relu, relu_backward, Matrix};

pub use adam::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gcn,
    Gin,
    Sage,
    Dense,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Gcn => "gcn",
            LayerKind::Gin => "gin",
            LayerKind::Sage => "sage",
            LayerKind::Dense => "dense",
        }
    }
}

/// Sparse operators for each message-passing layer kind, built from one graph.
#[derive(Debug, Clone)]
pub struct Propagation {
    gcn: Graph,
    gin: Graph,
    sage: Graph,
}

impl Propagation {
    pub fn new(graph: &Graph) -> Self {
        Propagation {
            gcn: graph.gcn_normalize(),
            gin: graph.with_unit_self_loops(),
            sage: graph.row_mean(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.gcn.num_nodes()
    }

    fn operator(&self, kind: LayerKind) -> &Graph {
        match kind {
            LayerKind::Gcn => &self.gcn,
            LayerKind::Gin => &self.gin,
            LayerKind::Sage | LayerKind::Dense => &self.sage,
        }
    }
}

/// One layer: its kind and parameter tensors.
///
/// Parameter layout: gcn/dense `[W, b]`, gin `[W₁, b₁, W₂, b₂]`,
/// sage `[W_self, W_neigh, b]`. Biases are `1 × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    pub params: Vec<Matrix>,
}

impl Layer {
    pub fn init<R: Rng + ?Sized>(kind: LayerKind, input: usize, output: usize, rng: &mut R) -> Self {
        let bias = || Matrix::zeros(1, output);
        let params = match kind {
            LayerKind::Gcn | LayerKind::Dense => vec![Matrix::glorot(input, output, rng), bias()],
            LayerKind::Gin => vec![
                Matrix::glorot(input, output, rng),
                bias(),
                Matrix::glorot(output, output, rng),
                bias(),
            ],
            LayerKind::Sage => vec![
                Matrix::glorot(input, output, rng),
                Matrix::glorot(input, output, rng),
                bias(),
            ],
        };
        Layer { kind, params }
    }

    pub fn zeros(kind: LayerKind, input: usize, output: usize) -> Self {
        let w = || Matrix::zeros(input, output);
        let b = || Matrix::zeros(1, output);
        let params = match kind {
            LayerKind::Gcn | LayerKind::Dense => vec![w(), b()],
            LayerKind::Gin => vec![w(), b(), Matrix::zeros(output, output), b()],
            LayerKind::Sage => vec![w(), w(), b()],
        };
        Layer { kind, params }
    }

    pub fn input_dim(&self) -> usize {
        self.params[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.params.last().map_or(0, Matrix::cols)
    }

    fn check_shapes(&self) -> Result<()> {
        let (i, o) = (self.input_dim(), self.output_dim());
        let expected: Vec<(usize, usize)> = match self.kind {
            LayerKind::Gcn | LayerKind::Dense => vec![(i, o), (1, o)],
            LayerKind::Gin => vec![(i, o), (1, o), (o, o), (1, o)],
            LayerKind::Sage => vec![(i, o), (i, o), (1, o)],
        };
        let actual: Vec<_> = self.params.iter().map(Matrix::shape).collect();
        if actual != expected {
            return Err(Error::shape(
                "layer",
                format!("{} layer with parameter shapes {actual:?}", self.kind.as_str()),
            ));
        }
        Ok(())
    }

    fn forward(&self, h: &Matrix, prop: Option<&Propagation>) -> Result<(Matrix, LayerCache)> {
        let linear = |x: &Matrix, w: &Matrix, b: &Matrix| -> Result<Matrix> {
            let mut y = x.matmul(w)?;
            y.add_row_broadcast(b)?;
            Ok(y)
        };
        let aggregate = |kind: LayerKind| -> Result<Matrix> {
            let prop = prop.ok_or_else(|| {
                Error::shape("layer", format!("{} layer needs a graph", kind.as_str()))
            })?;
            prop.operator(kind).spmm(h)
        };
        let p = &self.params;
        Ok(match self.kind {
            LayerKind::Dense => (linear(h, &p[0], &p[1])?, LayerCache::None),
            LayerKind::Gcn => {
                let agg = aggregate(LayerKind::Gcn)?;
                (linear(&agg, &p[0], &p[1])?, LayerCache::Aggregated(agg))
            }
            LayerKind::Gin => {
                let agg = aggregate(LayerKind::Gin)?;
                let inner = linear(&agg, &p[0], &p[1])?;
                let out = linear(&inner.map(relu), &p[2], &p[3])?;
                (out, LayerCache::Gin { agg, inner })
            }
            LayerKind::Sage => {
                let agg = aggregate(LayerKind::Sage)?;
                let mut out = linear(h, &p[0], &p[2])?;
                out.add_assign(&agg.matmul(&p[1])?)?;
                (out, LayerCache::Aggregated(agg))
            }
        })
    }

    /// Returns parameter gradients and, if requested, the input gradient.
    fn backward(
        &self,
        input: &Matrix,
        cache: LayerCache,
        grad_out: &Matrix,
        prop: Option<&Propagation>,
        want_input: bool,
    ) -> Result<(Vec<Matrix>, Option<Matrix>)> {
        let p = &self.params;
        let op = |kind| {
            prop.map(|pr| pr.operator(kind))
                .ok_or_else(|| Error::shape("backward", "missing graph operator"))
        };
        match (self.kind, cache) {
            (LayerKind::Dense, LayerCache::None) => {
                let gw = input.t_matmul(grad_out)?;
                let gb = grad_out.column_sums();
                let gx = want_input.then(|| grad_out.matmul_t(&p[0])).transpose()?;
                Ok((vec![gw, gb], gx))
            }
            (LayerKind::Gcn, LayerCache::Aggregated(agg)) => {
                let gw = agg.t_matmul(grad_out)?;
                let gb = grad_out.column_sums();
                let gx = if want_input {
                    Some(op(LayerKind::Gcn)?.spmm_transpose(&grad_out.matmul_t(&p[0])?)?)
                } else {
                    None
                };
                Ok((vec![gw, gb], gx))
            }
            (LayerKind::Gin, LayerCache::Gin { agg, inner }) => {
                let hidden = inner.map(relu);
                let gw2 = hidden.t_matmul(grad_out)?;
                let gb2 = grad_out.column_sums();
                let g_inner = relu_backward(&inner, &grad_out.matmul_t(&p[2])?)?;
                let gw1 = agg.t_matmul(&g_inner)?;
                let gb1 = g_inner.column_sums();
                let gx = if want_input {
                    Some(op(LayerKind::Gin)?.spmm_transpose(&g_inner.matmul_t(&p[0])?)?)
                } else {
                    None
                };
                Ok((vec![gw1, gb1, gw2, gb2], gx))
            }
            (LayerKind::Sage, LayerCache::Aggregated(agg)) => {
                let g_self = input.t_matmul(grad_out)?;
                let g_neigh = agg.t_matmul(grad_out)?;
                let gb = grad_out.column_sums();
                let gx = if want_input {
                    let mut gx = grad_out.matmul_t(&p[0])?;
                    gx.add_assign(&op(LayerKind::Sage)?.spmm_transpose(&grad_out.matmul_t(&p[1])?)?)?;
                    Some(gx)
                } else {
                    None
                };
                Ok((vec![g_self, g_neigh, gb], gx))
            }
            (kind, _) => Err(Error::shape(
                "backward",
                format!("trace does not belong to a {} layer", kind.as_str()),
            )),
        }
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    None,
    Aggregated(Matrix),
    Gin { agg: Matrix, inner: Matrix },
}

/// Stack of layers with rectifiers and dropout between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub dropout: f64,
}

/// Per-layer values cached by a forward pass for [`ForwardTrace::backward`].
///
/// `backward` takes the trace by value, so a trace is consumed exactly once.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input of each layer (after dropout).
    inputs: Vec<Matrix>,
    caches: Vec<LayerCache>,
    /// Pre-activation output of each non-final layer.
    pre: Vec<Matrix>,
    /// Scaled dropout mask applied after each non-final layer.
    masks: Vec<Option<Matrix>>,
    representation: Matrix,
}

impl ForwardTrace {
    /// Input to the final layer, before dropout.
    pub fn representation(&self) -> &Matrix {
        &self.representation
    }

    /// Exact gradients of the traced computation.
    ///
    /// `grad_repr`, if given, is added to the gradient flowing into the
    /// representation. Returns parameter gradients in [`Model::params`]
    /// order and, if `want_input`, the gradient with respect to the input.
    pub fn backward(
        self,
        model: &Model,
        prop: Option<&Propagation>,
        grad_out: &Matrix,
        grad_repr: Option<&Matrix>,
        want_input: bool,
    ) -> Result<Gradients> {
        let n_layers = model.layers.len();
        if self.caches.len() != n_layers {
            return Err(Error::shape(
                "backward",
                format!("trace has {} layers, model {n_layers}", self.caches.len()),
            ));
        }
        let out_shape = (self.inputs[n_layers - 1].rows(), model.layers[n_layers - 1].output_dim());
        if grad_out.shape() != out_shape {
            return Err(Error::shape(
                "backward",
                format!("upstream gradient {:?}, output {out_shape:?}", grad_out.shape()),
            ));
        }
        if let Some(g) = grad_repr {
            if g.shape() != self.representation.shape() {
                return Err(Error::shape(
                    "backward",
                    format!("representation gradient {:?}", g.shape()),
                ));
            }
        }
        let mut per_layer: Vec<Vec<Matrix>> = vec![Vec::new(); n_layers];
        let mut grad = grad_out.clone();
        let mut input_grad = None;
        let ForwardTrace {
            inputs,
            caches,
            pre,
            masks,
            ..
        } = self;
        let mut pre = pre;
        let mut masks = masks;
        for (k, (input, cache)) in inputs.iter().zip(caches).enumerate().rev() {
            let need_input = k > 0 || want_input;
            let (grads, gx) = model.layers[k].backward(input, cache, &grad, prop, need_input)?;
            per_layer[k] = grads;
            let Some(mut gx) = gx else { break };
            if k == 0 {
                input_grad = Some(gx);
                break;
            }
            // Undo the dropout and rectifier that produced this input.
            if let Some(mask) = masks.pop().flatten() {
                gx = gx.hadamard(&mask)?;
            }
            if k == n_layers - 1 {
                if let Some(g) = grad_repr {
                    gx.add_assign(g)?;
                }
            }
            let pre_k = pre.pop().expect("one pre-activation per hidden layer");
            grad = relu_backward(&pre_k, &gx)?;
        }
        if n_layers == 1 && want_input {
            if let (Some(g), Some(gx)) = (grad_repr, input_grad.as_mut()) {
                gx.add_assign(g)?;
            }
        }
        Ok(Gradients {
            params: per_layer.into_iter().flatten().collect(),
            input: input_grad,
        })
    }
}

/// Output of [`ForwardTrace::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Matrix>,
    pub input: Option<Matrix>,
}

impl Model {
    /// Builds a stack `dims[0] → dims[1] → … → dims[L]` where every layer
    /// except the last has kind `hidden_kind` and the last has `output_kind`.
    pub fn build<R: Rng + ?Sized>(
        hidden_kind: LayerKind,
        output_kind: LayerKind,
        dims: &[usize],
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let kind = if k + 1 == n { output_kind } else { hidden_kind };
                Layer::init(kind, dims[k], dims[k + 1], rng)
            })
            .collect();
        Model { layers, dropout }
    }

    pub fn from_layers(layers: Vec<Layer>, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("model", "no layers"));
        }
        for l in &layers {
            l.check_shapes()?;
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    "model",
                    format!("layer dims {} -> {}", pair[0].output_dim(), pair[1].input_dim()),
                ));
            }
        }
        Ok(Model { layers, dropout })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_dim)
    }

    pub fn representation_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::input_dim)
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| l.params.iter()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut()).collect()
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params().iter().map(|p| p.shape()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.rows() * p.cols()).sum()
    }

    /// Runs the stack. Dropout is active only when `dropout_rng` is given.
    pub fn forward(
        &self,
        x: &Matrix,
        prop: Option<&Propagation>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Matrix, ForwardTrace)> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "forward",
                format!("input has {} columns, model expects {}", x.cols(), self.input_dim()),
            ));
        }
        if let Some(p) = prop {
            if p.num_nodes() != x.rows() {
                return Err(Error::shape(
                    "forward",
                    format!("{} feature rows for a {}-node graph", x.rows(), p.num_nodes()),
                ));
            }
        }
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut caches = Vec::with_capacity(n_layers);
        let mut pre_acts = Vec::with_capacity(n_layers.saturating_sub(1));
        let mut masks = Vec::with_capacity(n_layers.saturating_sub(1));
        let mut representation = x.clone();
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let (out, cache) = layer.forward(&h, prop)?;
            let out = out.ensure_finite(&format!("{} layer {k}", layer.kind.as_str()))?;
            inputs.push(h);
            caches.push(cache);
            if k + 1 == n_layers {
                h = out;
                break;
            }
            let act = out.map(relu);
            if k + 2 == n_layers {
                representation = act.clone();
            }
            let (next, mask) = match dropout_rng.as_deref_mut() {
                Some(rng) if self.dropout > 0.0 => {
                    let keep = 1.0 - self.dropout;
                    let mask_data = (0..act.rows() * act.cols())
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let mask = Matrix::from_vec(act.rows(), act.cols(), mask_data)?;
                    (act.hadamard(&mask)?, Some(mask))
                }
                _ => (act, None),
            };
            pre_acts.push(out);
            masks.push(mask);
            h = next;
        }
        Ok((
            h,
            ForwardTrace {
                inputs,
                caches,
                pre: pre_acts,
                masks,
                representation,
            },
        ))
    }

    /// Forward pass without dropout, discarding the trace.
    pub fn predict(&self, x: &Matrix, prop: Option<&Propagation>) -> Result<Matrix> {
        Ok(self.forward(x, prop, None)?.0)
    }
}

/// Seeded RNG for a named purpose, so that independent consumers (weight
/// init, dropout, discriminator, …) never share a stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> (Matrix, Propagation) {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
        let g = Graph::from_undirected_edges(2, &[(0, 1)]).unwrap();
        (x, Propagation::new(&g))
    }

    fn single(kind: LayerKind, params: Vec<Matrix>) -> Model {
        Model::from_layers(vec![Layer { kind, params }], 0.0).unwrap()
    }

    #[test]
    fn gcn_identity_without_edges() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0], vec![3.0, 0.0]]).unwrap();
        let prop = Propagation::new(&Graph::empty(3));
        let m = single(LayerKind::Gcn, vec![Matrix::identity(2), Matrix::zeros(1, 2)]);
        assert_eq!(m.predict(&x, Some(&prop)).unwrap(), x);
    }

    #[test]
    fn gcn_two_node_hand_values() {
        // Â = [[.5,.5],[.5,.5]] so ÂX = [[2, .5],[2, .5]]; W = [[1],[2]], b = 0.25.
        let (x, prop) = two_node();
        let m = single(
            LayerKind::Gcn,
            vec![
                Matrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap(),
                Matrix::from_vec(1, 1, vec![0.25]).unwrap(),
            ],
        );
        let out = m.predict(&x, Some(&prop)).unwrap();
        // 1/sqrt(2)·1/sqrt(2) is 0.5 only up to rounding.
        for v in out.as_slice() {
            assert!((v - 3.25).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn gin_identity_without_edges_and_pair_sums() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, 4.0]]).unwrap();
        let id = || vec![Matrix::identity(2), Matrix::zeros(1, 2), Matrix::identity(2), Matrix::zeros(1, 2)];
        let m = single(LayerKind::Gin, id());
        assert_eq!(m.predict(&x, Some(&Propagation::new(&Graph::empty(2)))).unwrap(), x);
        let (x, prop) = two_node();
        let (_, trace) = m.forward(&x, Some(&prop), None).unwrap();
        let LayerCache::Gin { agg, .. } = &trace.caches[0] else { panic!() };
        assert_eq!(agg.as_slice(), &[4.0, 1.0, 4.0, 1.0]);
    }

    #[test]
    fn sage_isolated_node_uses_self_path_only() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![5.0]]).unwrap();
        let g = Graph::from_undirected_edges(3, &[(0, 1)]).unwrap();
        let m = single(
            LayerKind::Sage,
            vec![
                Matrix::from_vec(1, 1, vec![2.0]).unwrap(),
                Matrix::from_vec(1, 1, vec![10.0]).unwrap(),
                Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            ],
        );
        let out = m.predict(&x, Some(&Propagation::new(&g))).unwrap();
        // node 0: 2*1 + 10*2 + 1; node 1: 2*2 + 10*1 + 1; node 2: 2*5 + 1
        assert_eq!(out.as_slice(), &[23.0, 15.0, 11.0]);
    }

    #[test]
    fn representation_is_penultimate_activation() {
        let mut rng = stream_rng(1, 0);
        let m = Model::build(LayerKind::Dense, LayerKind::Dense, &[3, 4, 2], 0.5, &mut rng);
        let x = Matrix::glorot(5, 3, &mut rng);
        let (_, trace) = m.forward(&x, None, Some(&mut stream_rng(1, 1))).unwrap();
        let expected = {
            let mut y = x.matmul(&m.layers[0].params[0]).unwrap();
            y.add_row_broadcast(&m.layers[0].params[1]).unwrap();
            y.map(relu)
        };
        assert_eq!(trace.representation(), &expected);
    }

    #[test]
    fn graph_layer_without_graph_is_an_error() {
        let (x, _) = two_node();
        let m = single(LayerKind::Gcn, vec![Matrix::identity(2), Matrix::zeros(1, 2)]);
        assert!(m.forward(&x, None, None).is_err());
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let a = Layer::zeros(LayerKind::Dense, 3, 4);
        let b = Layer::zeros(LayerKind::Dense, 5, 2);
        assert!(Model::from_layers(vec![a, b], 0.0).is_err());
    }

    #[test]
    fn backward_rejects_bad_upstream_shape() {
        let (x, prop) = two_node();
        let m = single(LayerKind::Gcn, vec![Matrix::identity(2), Matrix::zeros(1, 2)]);
        let (_, trace) = m.forward(&x, Some(&prop), None).unwrap();
        assert!(trace.backward(&m, Some(&prop), &Matrix::zeros(2, 3), None, false).is_err());
    }
}
