//! Multi-seed experiments, strategy ablations, grid sweeps and their reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{augment_graph, find_counterfactuals, AugmentedGraph, CounterfactualMap};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{BiasDiagnostics, MetricsReport};
use crate::pipeline::config::{ExperimentConfig, Strategy};
use crate::pipeline::train::{base_features, evaluate, train};

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Sample (n − 1) standard deviation; a single value gets std 0.
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Summary { mean, std: 0.0 };
        }
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        Summary { mean, std: (ss / (n - 1) as f64).sqrt() }
    }

    /// `mean±std` in percent with two decimals.
    pub fn percent(&self) -> String {
        format!("{:.2}±{:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub acc: Summary,
    pub f1: Summary,
    pub dp: Summary,
    pub eo: Summary,
}

impl Aggregates {
    pub fn from_reports(reports: &[MetricsReport]) -> Aggregates {
        let col = |f: fn(&MetricsReport) -> f64| Summary::of(&reports.iter().map(f).collect::<Vec<_>>());
        Aggregates {
            acc: col(|r| r.acc),
            f1: col(|r| r.f1),
            dp: col(|r| r.dp),
            eo: col(|r| r.eo),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub best_epoch: usize,
    pub fell_back_to_vanilla: bool,
}

/// Outcome of one configuration over all of its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub runs: Vec<SeedRun>,
    pub aggregates: Aggregates,
    /// Set when only one seed ran, in which case every std is 0.
    pub single_seed: bool,
}

impl ExperimentResult {
    pub fn from_runs(config: ExperimentConfig, runs: Vec<SeedRun>) -> Self {
        let reports: Vec<MetricsReport> = runs.iter().map(|r| r.metrics).collect();
        ExperimentResult {
            config_hash: config.hash(),
            config,
            single_seed: runs.len() == 1,
            aggregates: Aggregates::from_reports(&reports),
            runs,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Row label distinguishing configurations in merged tables.
    fn method_label(&self) -> String {
        let c = &self.config;
        match c.strategy {
            Strategy::FairIcd => format!("{} (k={}, λ={})", c.strategy.display_name(), c.k, c.lambda),
            Strategy::EdgeDrop => format!("{} (p={})", c.strategy.display_name(), c.edge_drop_p),
            Strategy::FeatureMask => format!("{} (p={})", c.strategy.display_name(), c.feature_mask_p),
            Strategy::Vanilla => c.strategy.display_name().to_string(),
        }
    }

    fn sort_key(&self) -> (u8, u8, usize, u64, String) {
        let c = &self.config;
        (
            c.backbone as u8,
            c.strategy as u8,
            c.k,
            c.lambda.to_bits(),
            self.config_hash.clone(),
        )
    }
}

/// Trains and evaluates every seed of `cfg`. Seeds run in parallel and are
/// joined in the configured order; any failing seed aborts the experiment.
pub fn run_experiment(ds: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = train(ds, cfg, seed)?;
            let metrics = evaluate(&run.bundle, ds)?;
            Ok(SeedRun {
                seed,
                metrics,
                best_epoch: run.bundle.best_epoch,
                fell_back_to_vanilla: run.bundle.fell_back_to_vanilla,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult::from_runs(cfg.clone(), runs))
}

/// Runs all four strategies with otherwise identical settings.
pub fn run_ablation(ds: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<ExperimentResult>> {
    Strategy::ALL
        .iter()
        .map(|&s| run_experiment(ds, &cfg.with_strategy(s)))
        .collect()
}

/// Fair-ICD over every `(k, λ)` cell, in row-major order of the inputs.
pub fn run_grid(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    ks: &[usize],
    lambdas: &[f64],
) -> Result<Vec<ExperimentResult>> {
    if ks.is_empty() || lambdas.is_empty() {
        return Err(Error::Config("grid needs at least one k and one lambda".into()));
    }
    let mut out = Vec::with_capacity(ks.len() * lambdas.len());
    for &k in ks {
        for &lambda in lambdas {
            let cell = ExperimentConfig {
                strategy: Strategy::FairIcd,
                k,
                lambda,
                ..cfg.clone()
            };
            out.push(run_experiment(ds, &cell)?);
        }
    }
    Ok(out)
}

/// Markdown table with columns `Backbone | Method | F1 | Acc | DP | EO`.
/// Rows keep the given order.
pub fn results_table(results: &[ExperimentResult]) -> String {
    let mut out = String::from("| Backbone | Method | F1 | Acc | DP | EO |\n|---|---|---|---|---|---|\n");
    for r in results {
        let a = &r.aggregates;
        writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            r.config.backbone.display_name(),
            r.method_label(),
            a.f1.percent(),
            a.acc.percent(),
            a.dp.percent(),
            a.eo.percent()
        )
        .unwrap();
    }
    out
}

/// Merges results from several files into one table. Rows are sorted by
/// backbone, strategy, k, λ and config hash, so the output does not depend
/// on input order. Exact duplicates collapse to one row.
pub fn merge_results(mut results: Vec<ExperimentResult>) -> String {
    results.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    results.dedup();
    results_table(&results)
}

/// Structural bias of the original and counterfactually augmented graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub k: usize,
    pub counterfactuals_found: usize,
    pub rewired_edges: u64,
    pub unresolved_edges: u64,
    pub original: BiasDiagnostics,
    pub augmented: BiasDiagnostics,
}

impl AugmentationReport {
    pub fn markdown(&self) -> String {
        let (o, a) = (&self.original, &self.augmented);
        let mut out = String::from("| Graph | Avg. degree | Avg. heterogeneous degree | Nodes w/o heterogeneous neighbors |\n|---|---|---|---|\n");
        for (name, d) in [("Original", o), ("Augmented", a)] {
            writeln!(
                out,
                "| {name} | {:.2} | {:.2} | {} |",
                d.avg_degree, d.avg_heterogeneous_degree, d.nodes_without_heterogeneous_neighbors
            )
            .unwrap();
        }
        out
    }
}

/// Counterfactual search and rewiring on standardized features.
pub fn augment_dataset(ds: &Dataset, k: usize) -> Result<(CounterfactualMap, AugmentedGraph, AugmentationReport)> {
    let x = base_features(ds);
    let cf = find_counterfactuals(&x, &ds.sensitive, k, &ds.matching_exclusions())?;
    let aug = augment_graph(&ds.graph, &ds.sensitive, &cf)?;
    let report = AugmentationReport {
        k,
        counterfactuals_found: cf.num_found(),
        rewired_edges: aug.count_flag(crate::counterfactual::EdgeFlag::Rewired),
        unresolved_edges: aug.count_flag(crate::counterfactual::EdgeFlag::Unresolved),
        original: BiasDiagnostics::compute(&ds.graph, &ds.sensitive),
        augmented: BiasDiagnostics::compute(&aug, &ds.sensitive),
    };
    Ok((cf, aug, report))
}
