//! The run configuration file and command-line overrides.

use std::path::Path;

use fairicd::pipeline::{Backbone, ExperimentConfig, Strategy, SyntheticConfig};
use fairicd::Schema;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Top-level document of a `--config` file. Every section is optional and
/// unknown keys are rejected.
///
/// ```toml
/// [experiment]
/// k = 25
/// lambda = 2.0
///
/// [experiment.discriminator]
/// steps = 5
///
/// [schema]
/// sensitive_column = "region"
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub schema: Schema,
    pub synthetic: SyntheticConfig,
}

/// Values given on the command line; each one replaces the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backbone: Option<Backbone>,
    pub strategy: Option<Strategy>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` if given, applies the overrides and validates the result.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)?
            }
            None => RunConfig::default(),
        };
        cfg.apply(overrides);
        cfg.experiment.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let e = &mut self.experiment;
        if let Some(seed) = o.seed {
            e.seeds = vec![seed];
            self.synthetic.seed = seed;
        }
        if let Some(b) = o.backbone {
            e.backbone = b;
        }
        if let Some(s) = o.strategy {
            e.strategy = s;
        }
        if let Some(k) = o.k {
            e.k = k;
        }
        if let Some(l) = o.lambda {
            e.lambda = l;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is representable as TOML")
    }
}
