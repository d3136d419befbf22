use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::SplitRatios;
use crate::error::{Error, Result};
use crate::gnn::LayerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gcn,
    Gin,
    Sage,
}

impl Backbone {
    pub const ALL: [Backbone; 3] = [Backbone::Gcn, Backbone::Gin, Backbone::Sage];

    pub fn layer_kind(self) -> LayerKind {
        match self {
            Backbone::Gcn => LayerKind::Gcn,
            Backbone::Gin => LayerKind::Gin,
            Backbone::Sage => LayerKind::Sage,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.layer_kind().as_str()
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Backbone::Gcn => "GCN",
            Backbone::Gin => "GIN",
            Backbone::Sage => "GraphSAGE",
        }
    }
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Backbone::Gcn),
            "gin" => Ok(Backbone::Gin),
            "sage" | "graphsage" => Ok(Backbone::Sage),
            other => Err(Error::Config(format!("unknown backbone {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Vanilla,
    EdgeDrop,
    FeatureMask,
    FairIcd,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Vanilla,
        Strategy::EdgeDrop,
        Strategy::FeatureMask,
        Strategy::FairIcd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Vanilla => "vanilla",
            Strategy::EdgeDrop => "edge_drop",
            Strategy::FeatureMask => "feature_mask",
            Strategy::FairIcd => "fair_icd",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Strategy::Vanilla => "Vanilla",
            Strategy::EdgeDrop => "Edge-dropping",
            Strategy::FeatureMask => "Feature-masking",
            Strategy::FairIcd => "Fair-ICD",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "vanilla" => Ok(Strategy::Vanilla),
            "edge_drop" | "edge_dropping" => Ok(Strategy::EdgeDrop),
            "feature_mask" | "feature_masking" => Ok(Strategy::FeatureMask),
            "fair_icd" | "bias_offsetting" => Ok(Strategy::FairIcd),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Encoder architecture and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Message-passing layers; a dense classification head follows them.
    pub layers: usize,
    pub dropout: f64,
    pub weight_decay: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 16,
            layers: 2,
            dropout: 0.5,
            weight_decay: 1e-5,
        }
    }
}

/// Settings of the neighborhood regressor stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnbiasSettings {
    pub lr: f64,
    pub epochs: usize,
    pub hidden: Option<usize>,
    pub zero_init_output: bool,
}

impl Default for UnbiasSettings {
    fn default() -> Self {
        UnbiasSettings {
            lr: 0.01,
            epochs: 300,
            hidden: None,
            zero_init_output: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub hidden: usize,
    pub lr: f64,
    /// Discriminator updates per encoder update.
    pub steps: usize,
    /// Epochs trained without the adversarial term before it switches on.
    /// Checkpoint selection and early stopping only consider later epochs.
    pub warmup: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            hidden: 16,
            lr: 0.01,
            steps: 1,
            warmup: 0,
        }
    }
}

/// Everything needed to train and evaluate one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub backbone: Backbone,
    pub strategy: Strategy,
    /// Top-k for counterfactual search.
    pub k: usize,
    /// Weight of the adversarial term.
    pub lambda: f64,
    /// Encoder learning rate.
    pub lr: f64,
    pub epochs: usize,
    /// Early-stopping patience on validation accuracy.
    pub patience: usize,
    /// First epoch eligible as the returned checkpoint; earlier epochs do
    /// not count towards patience either.
    pub select_after: usize,
    pub seeds: Vec<u64>,
    pub split: SplitRatios,
    /// Seed of the train/val/test split, shared by all runs.
    pub split_seed: u64,
    pub edge_drop_p: f64,
    pub feature_mask_p: f64,
    pub model: ModelConfig,
    pub unbias: UnbiasSettings,
    pub discriminator: DiscriminatorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            backbone: Backbone::Gcn,
            strategy: Strategy::FairIcd,
            k: 10,
            lambda: 1.0,
            lr: 0.01,
            epochs: 300,
            patience: 30,
            select_after: 0,
            seeds: vec![0, 1, 2, 3, 4],
            split: SplitRatios::default(),
            split_seed: 0,
            edge_drop_p: 0.2,
            feature_mask_p: 0.2,
            model: ModelConfig::default(),
            unbias: UnbiasSettings::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

/// Top-k values searched by default.
pub const K_GRID: [usize; 4] = [3, 5, 10, 25];
/// Learning rates searched by default.
pub const LR_GRID: [f64; 3] = [0.1, 0.01, 0.001];
/// Inclusive range of the adversarial weight.
pub const LAMBDA_RANGE: (f64, f64) = (0.0, 10.0);

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda {} must be a nonnegative number", self.lambda));
        }
        for (name, lr) in [
            ("lr", self.lr),
            ("unbias.lr", self.unbias.lr),
            ("discriminator.lr", self.discriminator.lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} {lr} must be positive"));
            }
        }
        if self.select_after >= self.epochs && self.epochs > 0 {
            return fail(format!(
                "select_after {} leaves no eligible epoch out of {}",
                self.select_after, self.epochs
            ));
        }
        if self.strategy == Strategy::FairIcd && self.discriminator.warmup >= self.epochs && self.epochs > 0 {
            return fail(format!(
                "discriminator warmup {} leaves no adversarial epochs out of {}",
                self.discriminator.warmup, self.epochs
            ));
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.model.layers == 0
            || self.model.hidden == 0
            || self.discriminator.hidden == 0
            || self.discriminator.steps == 0 {
            return fail("layer counts, widths and discriminator steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.model.dropout));
        }
        for (name, p) in [("edge_drop_p", self.edge_drop_p), ("feature_mask_p", self.feature_mask_p)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} {p} outside [0, 1]"));
            }
        }
        let SplitRatios { train, val, test } = self.split;
        if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r)) || train + val + test > 1.0 + 1e-12 {
            return fail("split ratios must lie in [0, 1] and sum to at most 1".into());
        }
        Ok(())
    }

    /// Whether the configuration stays inside the default search grids.
    pub fn within_default_grid(&self) -> bool {
        K_GRID.contains(&self.k)
            && LR_GRID.contains(&self.unbias.lr)
            && (LAMBDA_RANGE.0..=LAMBDA_RANGE.1).contains(&self.lambda)
    }

    /// Parses a TOML document; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        ExperimentConfig {
            strategy,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_sit_in_grid() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert!(cfg.within_default_grid());
    }

    #[test]
    fn toml_round_trip_and_partial_documents() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml("backbone = \"gin\"\n[model]\nhidden = 8\n").unwrap();
        assert_eq!(partial.backbone, Backbone::Gin);
        assert_eq!(partial.model.hidden, 8);
        assert_eq!(partial.model.layers, 2);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = ExperimentConfig::from_toml("learning_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = ExperimentConfig::from_toml("[model]\nwidth = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml("lambda = -1.0\n").is_err());
        assert!(ExperimentConfig::from_toml("k = 0\n").is_err());
        assert!(ExperimentConfig::from_toml("seeds = []\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.k = 3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn parse_names() {
        assert_eq!("GraphSAGE".parse::<Backbone>().unwrap(), Backbone::Sage);
        assert_eq!("fair-icd".parse::<Strategy>().unwrap(), Strategy::FairIcd);
        assert!("gat".parse::<Backbone>().is_err());
    }
}
