//! Fairness-aware node classification with counterfactual graph augmentation.
//!
//! The pipeline finds, for each node, a feature-space neighbor of the
//! opposite sensitive group, rewires homogeneous edges towards those
//! counterfactuals, fits an MLP that pulls features toward their augmented
//! neighborhood mean, and finally trains a GNN classifier against a
//! discriminator that tries to recover the sensitive attribute.

pub mod adversarial;
pub mod counterfactual;
pub mod dataset;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod pipeline;
pub mod tensor;
pub mod unbias;

pub use counterfactual::{
    augment_graph, edge_drop, feature_mask, find_counterfactuals, AugmentedGraph, CounterfactualMap, EdgeFlag,
};
pub use dataset::{load_dataset, Dataset, Labels, Schema, Sensitive, SplitMasks};
pub use error::{Error, ErrorClass, Result};
pub use graph::{Graph, Neighborhoods};
pub use metrics::{BiasDiagnostics, MetricsReport};
pub use tensor::Matrix;
