//! Subcommand bodies. Each one computes everything in memory first and only
//! then writes, so a failing run leaves the output directory untouched.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fairicd::dataset::write_dataset;
use fairicd::pipeline::train::log_to_csv;
use fairicd::pipeline::{
    augment_dataset, evaluate, generate_synthetic, merge_results, results_table, run_ablation, train,
    AugmentationReport, ExperimentResult, ModelBundle,
};
use fairicd::pipeline::experiment::SeedRun;
use fairicd::{load_dataset, Dataset};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CONFIG_FILE: &str = "effective_config.toml";

/// Files staged for writing, by bare file name.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(cfg: &RunConfig) -> Self {
        let mut out = Outputs::default();
        out.add(CONFIG_FILE, cfg.to_toml());
        out
    }

    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        debug_assert!(!name.contains(['/', '\\']));
        self.files.push((name.to_string(), contents.into()));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn write(self, dir: &Path) -> Result<(), CliError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| CliError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, bytes) in self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(io(&path))?;
        }
        Ok(())
    }
}

/// Layout shared by every results file; `report` reads these back.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultsFile {
    pub config: RunConfig,
    pub results: Vec<ExperimentResult>,
}

#[derive(Debug, Serialize)]
struct DiagnosticsFile<'a> {
    config: &'a RunConfig,
    #[serde(flatten)]
    report: &'a AugmentationReport,
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
    s.push('\n');
    s
}

fn with_config(mut markdown: String, cfg: &RunConfig) -> String {
    write!(markdown, "\nEffective configuration:\n\n```toml\n{}```\n", cfg.to_toml()).unwrap();
    markdown
}

pub fn load(nodes: &Path, edges: &Path, cfg: &RunConfig) -> Result<Dataset, fairicd::Error> {
    load_dataset(nodes, edges, &cfg.schema)
}

/// Directed weighted edge list `src dst weight`, with original node ids.
fn weighted_edges(ds: &Dataset, rows: impl Fn(usize) -> Vec<(usize, u64)>) -> String {
    let mut out = String::new();
    for i in 0..ds.num_nodes() {
        for (j, w) in rows(i) {
            writeln!(out, "{} {} {w}", ds.node_ids[i], ds.node_ids[j]).unwrap();
        }
    }
    out
}

pub fn augment(cfg: &RunConfig, nodes: &Path, edges: &Path) -> Result<Outputs, CliError> {
    let ds = load(nodes, edges, cfg).map_err(CliError::Load)?;
    let (cf, aug, report) = augment_dataset(&ds, cfg.experiment.k)?;
    let ids = &ds.node_ids;

    let mut out = Outputs::new(cfg);
    out.add(
        "original_edges.txt",
        weighted_edges(&ds, |i| ds.graph.neighbors(i).iter().map(|&j| (j, 1)).collect()),
    );
    out.add("augmented_edges.txt", weighted_edges(&ds, |i| aug.weighted_neighbors(i)));
    let mut flagged = String::new();
    for i in 0..ds.num_nodes() {
        for e in aug.row(i) {
            writeln!(flagged, "{} {} {} {}", ids[i], ids[e.dst], e.weight, e.flag.as_str()).unwrap();
        }
    }
    out.add("augmented_edges_flagged.txt", flagged);
    let mut cf_csv = String::from("node,counterfactual\n");
    for (v, c) in cf.entries().iter().enumerate() {
        match c {
            Some(u) => writeln!(cf_csv, "{},{}", ids[v], ids[*u]).unwrap(),
            None => writeln!(cf_csv, "{},", ids[v]).unwrap(),
        }
    }
    out.add("counterfactuals.csv", cf_csv);
    out.add("diagnostics.json", pretty(&DiagnosticsFile { config: cfg, report: &report }));
    out.add("diagnostics.md", with_config(report.markdown(), cfg));
    Ok(out)
}

fn results_outputs(out: &mut Outputs, stem: &str, cfg: &RunConfig, results: Vec<ExperimentResult>) {
    out.add(&format!("{stem}.md"), with_config(results_table(&results), cfg));
    out.add(&format!("{stem}.json"), pretty(&ResultsFile { config: cfg.clone(), results }));
}

/// Trains every configured seed, keeping checkpoints, logs and test metrics.
pub fn train_cmd(cfg: &RunConfig, ds: &Dataset) -> Result<Outputs, CliError> {
    let exp = &cfg.experiment;
    let mut out = Outputs::new(cfg);
    let mut runs = Vec::with_capacity(exp.seeds.len());
    for &seed in &exp.seeds {
        let run = train(ds, exp, seed)?;
        let metrics = evaluate(&run.bundle, ds)?;
        out.add(&format!("checkpoint_seed{seed}.json"), pretty(&run.bundle));
        out.add(&format!("log_seed{seed}.csv"), log_to_csv(&run.log));
        runs.push(SeedRun {
            seed,
            metrics,
            best_epoch: run.bundle.best_epoch,
            fell_back_to_vanilla: run.bundle.fell_back_to_vanilla,
        });
    }
    results_outputs(&mut out, "result", cfg, vec![ExperimentResult::from_runs(exp.clone(), runs)]);
    Ok(out)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Test metrics of saved checkpoints, which must share one configuration.
pub fn evaluate_cmd(cfg: &RunConfig, ds: &Dataset, models: &[PathBuf]) -> Result<Outputs, CliError> {
    let bundles: Vec<ModelBundle> = models.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    let first = bundles
        .first()
        .ok_or_else(|| CliError::Config("at least one --model is required".into()))?;
    if bundles.iter().any(|b| b.config_hash != first.config_hash) {
        return Err(CliError::Config("checkpoints were trained with different configurations".into()));
    }
    let mut runs = Vec::with_capacity(bundles.len());
    for b in &bundles {
        runs.push(SeedRun {
            seed: b.seed,
            metrics: evaluate(b, ds)?,
            best_epoch: b.best_epoch,
            fell_back_to_vanilla: b.fell_back_to_vanilla,
        });
    }
    let effective = RunConfig {
        experiment: first.config.clone(),
        ..cfg.clone()
    };
    let mut out = Outputs::new(&effective);
    let result = ExperimentResult::from_runs(first.config.clone(), runs);
    results_outputs(&mut out, "evaluation", &effective, vec![result]);
    Ok(out)
}

pub fn ablate(cfg: &RunConfig, ds: &Dataset) -> Result<Outputs, CliError> {
    let results = run_ablation(ds, &cfg.experiment)?;
    let mut out = Outputs::new(cfg);
    results_outputs(&mut out, "ablation", cfg, results);
    Ok(out)
}

/// Merges results files into one table with a stable row order.
pub fn report(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<Outputs, CliError> {
    let mut all = Vec::new();
    for path in inputs {
        let file: ResultsFile = read_json(path)?;
        all.extend(file.results);
    }
    let mut out = Outputs::new(cfg);
    out.add("report.md", with_config(merge_results(all), cfg));
    Ok(out)
}

/// Synthetic dataset in the loader's file format.
pub fn generate(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<String>, CliError> {
    let ds = generate_synthetic(&cfg.synthetic)?;
    let out = Outputs::new(cfg);
    let mut names: Vec<String> = out.names().map(str::to_string).collect();
    out.write(out_dir)?;
    write_dataset(&ds, &out_dir.join("nodes.csv"), &out_dir.join("edges.txt"))?;
    names.extend(["nodes.csv".to_string(), "edges.txt".to_string()]);
    Ok(names)
}
