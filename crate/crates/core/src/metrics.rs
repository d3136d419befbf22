//! Group-fairness and classification metrics, and structural bias
//! diagnostics of a graph with respect to the sensitive attribute.

use serde::{Deserialize, Serialize};

use crate::dataset::{Labels, Sensitive};
use crate::error::{Error, Result};
use crate::graph::Neighborhoods;

/// Evaluation of one model on one node subset. All values are fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub f1: f64,
    pub dp: f64,
    pub eo: f64,
    /// `P(Ŷ=1 | S=0)`, `P(Ŷ=1 | S=1)`.
    pub positive_rates: (f64, f64),
    /// `P(Ŷ=1 | Y=1, S=0)`, `P(Ŷ=1 | Y=1, S=1)`.
    pub true_positive_rates: (f64, f64),
}

impl MetricsReport {
    /// Computes all four metrics over `mask`.
    pub fn compute(pred: &[u8], labels: &Labels, s: &Sensitive, mask: &[bool]) -> Result<Self> {
        let (acc, f1) = classification_metrics(pred, labels, mask)?;
        let positive_rates = group_positive_rates(pred, s, mask)?;
        let true_positive_rates = group_true_positive_rates(pred, labels, s, mask)?;
        Ok(MetricsReport {
            acc,
            f1,
            dp: (positive_rates.0 - positive_rates.1).abs(),
            eo: (true_positive_rates.0 - true_positive_rates.1).abs(),
            positive_rates,
            true_positive_rates,
        })
    }

    /// One markdown row `| F1 | Acc | DP | EO |` in percent, two decimals.
    pub fn markdown_row(&self) -> String {
        format!(
            "| {:.2} | {:.2} | {:.2} | {:.2} |",
            100.0 * self.f1,
            100.0 * self.acc,
            100.0 * self.dp,
            100.0 * self.eo
        )
    }
}

fn check_lengths(n: usize, others: &[usize]) -> Result<()> {
    if others.iter().any(|&m| m != n) {
        return Err(Error::shape("metrics", format!("lengths {n} vs {others:?}")));
    }
    Ok(())
}

fn group_rate(
    pred: &[u8],
    mask: &[bool],
    s: &Sensitive,
    group: u8,
    keep: impl Fn(usize) -> bool,
    what: &str,
) -> Result<f64> {
    let (mut pos, mut total) = (0usize, 0usize);
    for i in 0..pred.len() {
        if mask[i] && s.get(i) == group && keep(i) {
            total += 1;
            pos += usize::from(pred[i] == 1);
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric(format!("{what} S={group} empty")));
    }
    Ok(pos as f64 / total as f64)
}

fn group_positive_rates(pred: &[u8], s: &Sensitive, mask: &[bool]) -> Result<(f64, f64)> {
    check_lengths(pred.len(), &[s.len(), mask.len()])?;
    Ok((
        group_rate(pred, mask, s, 0, |_| true, "group")?,
        group_rate(pred, mask, s, 1, |_| true, "group")?,
    ))
}

fn group_true_positive_rates(
    pred: &[u8],
    y: &Labels,
    s: &Sensitive,
    mask: &[bool],
) -> Result<(f64, f64)> {
    check_lengths(pred.len(), &[y.len(), s.len(), mask.len()])?;
    let positive = |i: usize| y.get(i) == Some(1);
    Ok((
        group_rate(pred, mask, s, 0, positive, "no positives in")?,
        group_rate(pred, mask, s, 1, positive, "no positives in")?,
    ))
}

/// `|P(Ŷ=1 | S=0) − P(Ŷ=1 | S=1)|` over the masked nodes.
pub fn demographic_parity(pred: &[u8], s: &Sensitive, mask: &[bool]) -> Result<f64> {
    let (a, b) = group_positive_rates(pred, s, mask)?;
    Ok((a - b).abs())
}

/// `|P(Ŷ=1 | Y=1, S=0) − P(Ŷ=1 | Y=1, S=1)|` over the masked nodes.
pub fn equality_of_opportunity(
    pred: &[u8],
    y: &Labels,
    s: &Sensitive,
    mask: &[bool],
) -> Result<f64> {
    let (a, b) = group_true_positive_rates(pred, y, s, mask)?;
    Ok((a - b).abs())
}

/// Accuracy and positive-class F1 over masked, labeled nodes.
///
/// F1 is 0 when there are no true positives.
pub fn classification_metrics(pred: &[u8], y: &Labels, mask: &[bool]) -> Result<(f64, f64)> {
    check_lengths(pred.len(), &[y.len(), mask.len()])?;
    let (mut correct, mut total) = (0usize, 0usize);
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for i in 0..pred.len() {
        let Some(truth) = y.get(i).filter(|_| mask[i]) else {
            continue;
        };
        total += 1;
        correct += usize::from(pred[i] == truth);
        match (pred[i], truth) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fneg += 1,
            _ => {}
        }
    }
    if total == 0 {
        return Err(Error::EmptyMask("classification_metrics"));
    }
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    Ok((correct as f64 / total as f64, f1))
}

/// Degree and heterogeneity statistics of a graph under a sensitive attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasDiagnostics {
    pub avg_degree: f64,
    pub avg_heterogeneous_degree: f64,
    pub nodes_without_heterogeneous_neighbors: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct DegreeCounts {
    total: u64,
    heterogeneous: u64,
    homogeneous: u64,
    without_heterogeneous: usize,
}

fn degree_counts<G: Neighborhoods + ?Sized>(g: &G, s: &Sensitive) -> DegreeCounts {
    let mut c = DegreeCounts::default();
    for i in 0..g.num_nodes() {
        let mut het = 0;
        g.for_each_neighbor(i, &mut |j, m| {
            c.total += m;
            if s.get(i) != s.get(j) {
                het += m;
            } else {
                c.homogeneous += m;
            }
        });
        c.heterogeneous += het;
        c.without_heterogeneous += usize::from(het == 0);
    }
    c
}

fn per_node(count: u64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        count as f64 / n as f64
    }
}

/// Mean number of neighbors whose sensitive value differs from the centre
/// node's, counting multiplicities.
pub fn avg_heterogeneous_degree<G: Neighborhoods + ?Sized>(g: &G, s: &Sensitive) -> f64 {
    per_node(degree_counts(g, s).heterogeneous, g.num_nodes())
}

/// Mean number of neighbors sharing the centre node's sensitive value.
pub fn avg_homogeneous_degree<G: Neighborhoods + ?Sized>(g: &G, s: &Sensitive) -> f64 {
    per_node(degree_counts(g, s).homogeneous, g.num_nodes())
}

pub fn avg_degree<G: Neighborhoods + ?Sized>(g: &G) -> f64 {
    let total: u64 = (0..g.num_nodes()).map(|i| g.degree_of(i)).sum();
    per_node(total, g.num_nodes())
}

/// Nodes none of whose neighbors differ in sensitive value; isolated nodes
/// are included.
pub fn count_nodes_without_heterogeneous_neighbors<G: Neighborhoods + ?Sized>(
    g: &G,
    s: &Sensitive,
) -> usize {
    degree_counts(g, s).without_heterogeneous
}

impl BiasDiagnostics {
    pub fn compute<G: Neighborhoods + ?Sized>(g: &G, s: &Sensitive) -> Self {
        let c = degree_counts(g, s);
        let n = g.num_nodes();
        BiasDiagnostics {
            avg_degree: per_node(c.total, n),
            avg_heterogeneous_degree: per_node(c.heterogeneous, n),
            nodes_without_heterogeneous_neighbors: c.without_heterogeneous,
        }
    }
}
