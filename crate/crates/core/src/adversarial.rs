//! Sensitive-attribute discriminator and the alternating min-max round.
//!
//! Each round runs one encoder forward pass and then
//!
//! 1. updates the discriminator to minimize its BCE on the detached
//!    representations, and
//! 2. updates the encoder/classifier to minimize `L_cls − λ·L_d`, with the
//!    discriminator term flowing back through the representations.
//!
//! With `λ = 0` step 2 is exactly a plain classification step.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Labels, Sensitive};
use crate::error::{Error, Result};
use crate::gnn::loss::{bce_with_logits, softmax_cross_entropy};
use crate::gnn::{stream_rng, Adam, LayerKind, Model, Propagation};
use crate::tensor::Matrix;

const DISCRIMINATOR_STREAM: u64 = 21;

/// One-hidden-layer MLP predicting the sensitive attribute from a representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub model: Model,
    pub adam: Adam,
    /// Discriminator updates per round, all on the same representations.
    pub steps_per_round: usize,
}

impl Discriminator {
    pub fn new(input_dim: usize, hidden: usize, lr: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, DISCRIMINATOR_STREAM);
        let model = Model::build(LayerKind::Dense, LayerKind::Dense, &[input_dim, hidden, 1], 0.0, &mut rng);
        Self::from_model(model, lr).expect("freshly built discriminator is well formed")
    }

    pub fn from_model(model: Model, lr: f64) -> Result<Self> {
        if model.output_dim() != 1 {
            return Err(Error::shape(
                "Discriminator",
                format!("emits {} logits, expected 1", model.output_dim()),
            ));
        }
        let adam = Adam::new(lr, &model.param_shapes());
        Ok(Discriminator { model, adam, steps_per_round: 1 })
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    /// One logit per node.
    pub fn forward(&self, z: &Matrix) -> Result<Matrix> {
        self.model.predict(z, None)
    }

    /// BCE against `targets` over `mask`, with gradients for the
    /// discriminator parameters and for the representations.
    pub fn loss_and_gradients(
        &self,
        z: &Matrix,
        targets: &[f64],
        mask: &[bool],
    ) -> Result<(f64, Vec<Matrix>, Matrix)> {
        let (logits, trace) = self.model.forward(z, None, None)?;
        let (loss, grad) = bce_with_logits(&logits, targets, mask)?;
        let grads = trace.backward(&self.model, None, &grad, None, true)?;
        let input = grads.input.expect("input gradient requested");
        Ok((loss, grads.params, input))
    }

    /// One Adam step on `L_d`; returns the loss before the update.
    pub fn step(&mut self, z: &Matrix, targets: &[f64], mask: &[bool]) -> Result<f64> {
        let (loss, grads, _) = self.loss_and_gradients(z, targets, mask)?;
        self.adam.step(self.model.params_mut(), &grads)?;
        Ok(loss)
    }
}

/// Encoder-side state carried across rounds.
pub struct EncoderState<'a> {
    pub model: &'a mut Model,
    pub adam: &'a mut Adam,
    pub dropout_rng: &'a mut ChaCha8Rng,
}

/// Inputs of a round that stay fixed during training.
pub struct RoundInputs<'a> {
    pub features: &'a Matrix,
    pub prop: &'a Propagation,
    pub labels: &'a Labels,
    pub train_mask: &'a [bool],
    pub sensitive: &'a Sensitive,
    /// Nodes whose sensitive value enters `L_d`.
    pub adversary_mask: &'a [bool],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundLosses {
    pub cls: f64,
    /// Discriminator loss before its update; `None` without a discriminator.
    pub disc: Option<f64>,
}

/// One training round. Without a discriminator this is a plain
/// classification step.
pub fn adversarial_round(
    encoder: EncoderState<'_>,
    discriminator: Option<&mut Discriminator>,
    inputs: &RoundInputs<'_>,
    lambda: f64,
) -> Result<RoundLosses> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("adversarial weight {lambda} must be nonnegative")));
    }
    let prop = Some(inputs.prop);
    let (logits, trace) = encoder
        .model
        .forward(inputs.features, prop, Some(encoder.dropout_rng))?;
    let (cls, grad_logits) = softmax_cross_entropy(&logits, inputs.labels, inputs.train_mask)?;

    let mut disc_loss = None;
    let mut grad_repr = None;
    if let Some(disc) = discriminator {
        let z = trace.representation();
        let targets = inputs.sensitive.as_targets();
        disc_loss = Some(disc.step(z, &targets, inputs.adversary_mask)?);
        for _ in 1..disc.steps_per_round {
            disc.step(z, &targets, inputs.adversary_mask)?;
        }
        if lambda > 0.0 {
            let (_, _, mut g) = disc.loss_and_gradients(z, &targets, inputs.adversary_mask)?;
            g.scale(-lambda);
            grad_repr = Some(g);
        }
    }

    let grads = trace.backward(encoder.model, prop, &grad_logits, grad_repr.as_ref(), false)?;
    encoder.adam.step(encoder.model.params_mut(), &grads.params)?;
    Ok(RoundLosses {
        cls,
        disc: disc_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::Layer;

    #[test]
    fn zero_weights_give_zero_logits() {
        let layers = vec![Layer::zeros(LayerKind::Dense, 3, 4), Layer::zeros(LayerKind::Dense, 4, 1)];
        let d = Discriminator::from_model(Model::from_layers(layers, 0.0).unwrap(), 0.01).unwrap();
        let z = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 5.0]]).unwrap();
        assert_eq!(d.forward(&z).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn hand_computed_logits() {
        let layers = vec![
            Layer {
                kind: LayerKind::Dense,
                params: vec![
                    Matrix::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.5]]).unwrap(),
                    Matrix::from_vec(1, 2, vec![0.0, 0.5]).unwrap(),
                ],
            },
            Layer {
                kind: LayerKind::Dense,
                params: vec![
                    Matrix::from_vec(2, 1, vec![1.5, -2.0]).unwrap(),
                    Matrix::from_vec(1, 1, vec![0.25]).unwrap(),
                ],
            },
        ];
        let d = Discriminator::from_model(Model::from_layers(layers, 0.0).unwrap(), 0.01).unwrap();
        let z = Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, 2.0]]).unwrap();
        // row 0: pre = [3, 0], hidden = [3, 0] → 4.5 + 0.25
        // row 1: pre = [3, 2.5], hidden = [3, 2.5] → 4.5 − 5 + 0.25
        assert_eq!(d.forward(&z).unwrap().as_slice(), &[4.75, -0.25]);
    }

    #[test]
    fn discriminator_must_emit_one_logit() {
        let layers = vec![Layer::zeros(LayerKind::Dense, 3, 2)];
        assert!(Discriminator::from_model(Model::from_layers(layers, 0.0).unwrap(), 0.01).is_err());
    }

    #[test]
    fn constant_representation_is_bounded_by_base_rate_entropy() {
        // With constant input the best logit is logit(p₁), achieving H(p₁).
        let z = Matrix::from_vec(8, 2, vec![0.3; 16]).unwrap();
        let s = Sensitive::new(vec![1, 1, 1, 0, 0, 0, 0, 0]).unwrap();
        let targets = s.as_targets();
        let p: f64 = 3.0 / 8.0;
        let entropy = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        let mut d = Discriminator::new(2, 8, 0.05, 3);
        let mask = [true; 8];
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            last = d.step(&z, &targets, &mask).unwrap();
            assert!(last >= entropy - 1e-12);
        }
        assert!(last - entropy < 1e-3, "converged to {last}, optimum {entropy}");
    }

    #[test]
    fn separable_coordinate_is_learned() {
        let s = Sensitive::new((0..40).map(|i| (i % 2) as u8).collect()).unwrap();
        let z = Matrix::from_vec(40, 2, (0..40).flat_map(|i| [f64::from(s.get(i)), (i as f64 * 0.37).sin()]).collect()).unwrap();
        let mut d = Discriminator::new(2, 8, 0.05, 1);
        let targets = s.as_targets();
        for _ in 0..200 {
            d.step(&z, &targets, &[true; 40]).unwrap();
        }
        let (loss, _, _) = d.loss_and_gradients(&z, &targets, &[true; 40]).unwrap();
        assert!(loss < 0.05, "loss {loss}");
    }
}
