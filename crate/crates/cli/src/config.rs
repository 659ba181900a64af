//! Layered run configuration: built-in defaults, then a TOML file, then flags.

use std::path::PathBuf;

use clap::Args;
use rfgest::fusion::FusionRule;
use rfgest::pipeline::ExperimentConfig;

use crate::error::{CliError, Result};

pub type RunConfig = ExperimentConfig;

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file layered over the built-in defaults; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    /// Capture length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Seed of the random region graphs.
    #[arg(long)]
    pub structure_seed: Option<u64>,
    /// Seed of the EM initialisation.
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// EM epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// product | average
    #[arg(long)]
    pub fusion: Option<FusionRule>,
    /// Run every stage sequentially (outputs are identical either way).
    #[arg(long)]
    pub deterministic: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.dataset.seed = v;
        }
        if let Some(v) = self.classes {
            cfg.dataset.classes = v;
        }
        if let Some(v) = self.samples_per_class {
            cfg.dataset.samples_per_class = v;
        }
        if let Some(v) = self.duration {
            cfg.dataset.duration_s = v;
        }
        if let Some(v) = self.split_seed {
            cfg.split_seed = v;
        }
        if let Some(v) = self.test_fraction {
            cfg.test_fraction = v;
        }
        if let Some(v) = self.structure_seed {
            cfg.train.structure_seed = v;
        }
        if let Some(v) = self.init_seed {
            cfg.train.em.init_seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.em.epochs = v;
        }
        if let Some(v) = self.fusion {
            cfg.fusion = v;
        }
        if self.deterministic {
            cfg.parallel = false;
        }
        cfg.train.em.parallel = cfg.parallel;
        cfg.train.em.validate()?;
        Ok(cfg)
    }
}

pub fn to_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| CliError::Invariant(format!("config does not serialize: {e}")))
}
