//! Independent brute-force oracles and random fixtures shared by the
//! integration tests.
#![allow(dead_code)]

use fairicd::gnn::Model;
use fairicd::{Graph, Labels, Matrix, Sensitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random instance for metric checks: predictions, labels, sensitive
/// values and a mask, with both groups and both classes present.
#[derive(Debug, Clone)]
pub struct MetricInstance {
    pub pred: Vec<u8>,
    pub y: Vec<u8>,
    pub s: Vec<u8>,
    pub mask: Vec<bool>,
}

pub fn metric_instance(r: &mut ChaCha8Rng) -> MetricInstance {
    loop {
        let n = r.random_range(4..=50);
        let inst = MetricInstance {
            pred: (0..n).map(|_| r.random_range(0..2)).collect(),
            y: (0..n).map(|_| r.random_range(0..2)).collect(),
            s: (0..n).map(|_| r.random_range(0..2)).collect(),
            mask: (0..n).map(|_| r.random_bool(0.8)).collect(),
        };
        let has = |g: u8| (0..n).any(|i| inst.mask[i] && inst.s[i] == g && inst.y[i] == 1);
        if has(0) && has(1) {
            return inst;
        }
    }
}

/// `P(pred = 1 | s = g)` over the mask, optionally restricted to `y = 1`.
fn rate(inst: &MetricInstance, g: u8, positives_only: bool) -> f64 {
    let members: Vec<usize> = (0..inst.pred.len())
        .filter(|&i| inst.mask[i] && inst.s[i] == g && (!positives_only || inst.y[i] == 1))
        .collect();
    members.iter().filter(|&&i| inst.pred[i] == 1).count() as f64 / members.len() as f64
}

pub fn oracle_dp(inst: &MetricInstance) -> f64 {
    (rate(inst, 0, false) - rate(inst, 1, false)).abs()
}

pub fn oracle_eo(inst: &MetricInstance) -> f64 {
    (rate(inst, 0, true) - rate(inst, 1, true)).abs()
}

/// Accuracy and F1 from the confusion matrix.
pub fn oracle_acc_f1(inst: &MetricInstance) -> (f64, f64) {
    let mut m = [[0usize; 2]; 2];
    for i in 0..inst.pred.len() {
        if inst.mask[i] {
            m[inst.y[i] as usize][inst.pred[i] as usize] += 1;
        }
    }
    let total = m[0][0] + m[0][1] + m[1][0] + m[1][1];
    let acc = (m[0][0] + m[1][1]) as f64 / total as f64;
    let (tp, fp, fneg) = (m[1][1] as f64, m[0][1] as f64, m[1][0] as f64);
    let f1 = if tp == 0.0 {
        0.0
    } else {
        let precision = tp / (tp + fp);
        let recall = tp / (tp + fneg);
        2.0 * precision * recall / (precision + recall)
    };
    (acc, f1)
}

pub fn labels(y: &[u8]) -> Labels {
    Labels::fully_labeled(y.to_vec()).unwrap()
}

pub fn sensitive(s: &[u8]) -> Sensitive {
    Sensitive::new(s.to_vec()).unwrap()
}

/// Erdős–Rényi style edge list without self-loops; duplicates allowed.
pub fn random_edges(r: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Heterogeneous degree summed over the undirected edge set, each edge
/// contributing to both endpoints, divided by N.
pub fn oracle_avg_het_degree(n: usize, edges: &[(usize, usize)], s: &[u8]) -> f64 {
    let mut set: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    set.sort_unstable();
    set.dedup();
    let het = set.iter().filter(|&&(a, b)| s[a] != s[b]).count();
    if n == 0 {
        0.0
    } else {
        (2 * het) as f64 / n as f64
    }
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Features on a coarse integer lattice, so exact distance ties occur.
pub fn lattice_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| f64::from(r.random_range(-2i32..=2))).collect()).unwrap()
}

/// Exhaustive counterfactual search: rank every other node by
/// (squared distance, id), keep the first `k`, take the first one from the
/// other group.
pub fn oracle_counterfactuals(x: &Matrix, s: &[u8], k: usize) -> Vec<Option<usize>> {
    (0..x.rows())
        .map(|v| {
            let mut ranked: Vec<(f64, usize)> = (0..x.rows())
                .filter(|&u| u != v)
                .map(|u| {
                    let d = (0..x.cols()).map(|c| (x.get(v, c) - x.get(u, c)).powi(2)).sum::<f64>();
                    (d, u)
                })
                .collect();
            ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            ranked.into_iter().take(k).map(|(_, u)| u).find(|&u| s[u] != s[v])
        })
        .collect()
}

pub fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
    Graph::from_undirected_edges(n, edges).unwrap()
}

/// Central finite difference of `f` with respect to every entry of every
/// parameter of `model`, compared against `analytic`. Returns the largest
/// per-tensor relative error `‖a − n‖ / max(‖a‖ + ‖n‖, 1e-12)`.
pub fn fd_model_error(model: &Model, analytic: &[Matrix], f: impl Fn(&Model) -> f64) -> f64 {
    const H: f64 = 1e-5;
    let mut probe = model.clone();
    let n_params = model.params().len();
    assert_eq!(n_params, analytic.len());
    let mut worst = 0.0f64;
    for p in 0..n_params {
        let len = model.params()[p].as_slice().len();
        let mut numeric = vec![0.0; len];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let orig = model.params()[p].as_slice()[e];
            probe.params_mut()[p].as_mut_slice()[e] = orig + H;
            let up = f(&probe);
            probe.params_mut()[p].as_mut_slice()[e] = orig - H;
            let down = f(&probe);
            probe.params_mut()[p].as_mut_slice()[e] = orig;
            *slot = (up - down) / (2.0 * H);
        }
        worst = worst.max(relative_error(analytic[p].as_slice(), &numeric));
    }
    worst
}

/// Same check for a plain matrix argument.
pub fn fd_matrix_error(x: &Matrix, analytic: &Matrix, f: impl Fn(&Matrix) -> f64) -> f64 {
    const H: f64 = 1e-5;
    let mut probe = x.clone();
    let mut numeric = vec![0.0; x.as_slice().len()];
    for (e, slot) in numeric.iter_mut().enumerate() {
        let orig = x.as_slice()[e];
        probe.as_mut_slice()[e] = orig + H;
        let up = f(&probe);
        probe.as_mut_slice()[e] = orig - H;
        let down = f(&probe);
        probe.as_mut_slice()[e] = orig;
        *slot = (up - down) / (2.0 * H);
    }
    relative_error(analytic.as_slice(), &numeric)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

/// Replaces every parameter, biases included, with uniform noise so that
/// no rectifier input sits at its kink.
pub fn randomize(model: &mut Model, r: &mut ChaCha8Rng) {
    for p in model.params_mut() {
        for v in p.as_mut_slice() {
            *v = r.random_range(-1.0..1.0);
        }
    }
}
