//! Two-group stochastic block model with biased features, used as a
//! desk-scale testbed.
//!
//! * Groups: exactly `n/2` nodes have `s = 1`, assigned by a seeded shuffle.
//! * Edges: a fraction `homophily` of the expected edges falls within
//!   groups, the rest across them, at the requested average degree.
//!   Independently, a fraction `label_homophily` joins nodes of the same
//!   class, so neighborhoods carry label information as on real graphs.
//! * Labels: `y = 1[feature_signal·u + label_bias·bias_strength·(2s − 1) + label_noise·ε > 0]`,
//!   where `u` is a unit-variance projection of the latent signal features and
//!   `ε ~ N(0, 1)`.
//! * Features: the latent signal columns, `proxy_dims` columns equal to
//!   `bias_strength·(2s − 1) + N(0, 1)`, and pure-noise columns.
//!
//! With `bias_strength = 0`, labels and features are independent of `s`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Labels, Sensitive};
use crate::error::{Error, Result};
use crate::gnn::stream_rng;
use crate::graph::Graph;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    /// Fraction of edges that join nodes of the same group.
    pub homophily: f64,
    /// Fraction of edges that join nodes of the same class.
    pub label_homophily: f64,
    pub feature_signal: f64,
    /// Standard deviation of the noise in the label score.
    pub label_noise: f64,
    pub bias_strength: f64,
    /// Multiplier of `bias_strength` in the label score; the proxy columns
    /// always use `bias_strength` itself.
    pub label_bias: f64,
    pub avg_degree: f64,
    pub signal_dims: usize,
    pub proxy_dims: usize,
    pub noise_dims: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 2000,
            homophily: 0.9,
            label_homophily: 0.7,
            feature_signal: 1.0,
            label_noise: 2.0,
            bias_strength: 1.0,
            label_bias: 0.3,
            avg_degree: 10.0,
            signal_dims: 8,
            proxy_dims: 4,
            noise_dims: 4,
            seed: 0,
        }
    }
}

const GROUP_STREAM: u64 = 31;
const EDGE_STREAM: u64 = 32;
const FEATURE_STREAM: u64 = 33;

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    let SyntheticConfig {
        n,
        homophily,
        label_homophily,
        feature_signal,
        label_noise,
        bias_strength,
        label_bias,
        avg_degree,
        signal_dims,
        proxy_dims,
        noise_dims,
        seed,
    } = *cfg;
    if n < 2 {
        return Err(Error::Config("synthetic graph needs at least 2 nodes".into()));
    }
    for (name, h) in [("homophily", homophily), ("label_homophily", label_homophily)] {
        if !(0.0..=1.0).contains(&h) {
            return Err(Error::Config(format!("{name} {h} outside [0, 1]")));
        }
    }
    if !(avg_degree >= 0.0) || !feature_signal.is_finite() || !bias_strength.is_finite() || !label_bias.is_finite() || !(label_noise >= 0.0) {
        return Err(Error::Config("synthetic parameters must be finite, degree nonnegative".into()));
    }
    if signal_dims == 0 {
        return Err(Error::Config("at least one signal dimension is required".into()));
    }

    let mut rng = stream_rng(seed, GROUP_STREAM);
    let mut s: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
    s.shuffle(&mut rng);

    let mut rng = stream_rng(seed, FEATURE_STREAM);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let direction: Vec<f64> = (0..signal_dims).map(|_| normal()).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let d = signal_dims + proxy_dims + noise_dims;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for &si in &s {
        let centered = f64::from(si) * 2.0 - 1.0;
        let latent: Vec<f64> = (0..signal_dims).map(|_| normal()).collect();
        let u = latent.iter().zip(&direction).map(|(a, b)| a * b).sum::<f64>() / norm;
        let score = feature_signal * u + label_bias * bias_strength * centered + label_noise * normal();
        labels.push(u8::from(score > 0.0));
        data.extend_from_slice(&latent);
        for _ in 0..proxy_dims {
            data.push(bias_strength * centered + normal());
        }
        for _ in 0..noise_dims {
            data.push(normal());
        }
    }
    let features = Matrix::from_vec(n, d, data)?;

    // Edge probabilities per (same group, same class) block: the expected
    // edge count of each block follows the two mixing fractions.
    let mut pairs = [[0f64; 2]; 2];
    let ones_s = s.iter().filter(|&&v| v == 1).count() as f64;
    let ones_y = labels.iter().filter(|&&v| v == 1).count() as f64;
    let ones_both = s.iter().zip(&labels).filter(|&(&a, &b)| a == 1 && b == 1).count() as f64;
    let same_pairs = |k: f64| k * (k - 1.0) / 2.0;
    let n_f = n as f64;
    let all_pairs = same_pairs(n_f);
    let same_s = same_pairs(ones_s) + same_pairs(n_f - ones_s);
    let same_y = same_pairs(ones_y) + same_pairs(n_f - ones_y);
    let cells = [ones_both, ones_s - ones_both, ones_y - ones_both, n_f - ones_s - ones_y + ones_both];
    let same_both: f64 = cells.iter().map(|&c| same_pairs(c)).sum();
    pairs[1][1] = same_both;
    pairs[1][0] = same_s - same_both;
    pairs[0][1] = same_y - same_both;
    pairs[0][0] = all_pairs - same_s - same_y + same_both;
    let total_edges = n_f * avg_degree / 2.0;
    let mut prob = [[0f64; 2]; 2];
    for (a, frac_s) in [(0, 1.0 - homophily), (1, homophily)] {
        for (b, frac_y) in [(0, 1.0 - label_homophily), (1, label_homophily)] {
            if pairs[a][b] > 0.0 {
                prob[a][b] = (frac_s * frac_y * total_edges / pairs[a][b]).min(1.0);
            }
        }
    }
    let mut rng = stream_rng(seed, EDGE_STREAM);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = prob[usize::from(s[i] == s[j])][usize::from(labels[i] == labels[j])];
            if p > 0.0 && rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::from_undirected_edges(n, &edges)?;
    Dataset::new(
        graph,
        features,
        Sensitive::new(s)?,
        Labels::fully_labeled(labels)?,
        None,
    )
}
