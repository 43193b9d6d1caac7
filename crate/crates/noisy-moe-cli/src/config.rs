//! Optional TOML configuration file.
//!
//! Every value here can also be given as a flag; flags win. Unknown keys are
//! rejected so typos fail loudly instead of being ignored.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub method: Option<String>,
    pub k: Option<String>,
    pub k_max: Option<usize>,
    pub alpha: Option<f64>,
    pub response: Option<String>,
    pub gmm_pool: Option<String>,
    pub reweight: Option<bool>,
    pub screen_radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub k: Option<usize>,
    pub p: Option<usize>,
    pub p0: Option<f64>,
    pub n_labeled: Option<usize>,
    pub n_unlabeled: Option<usize>,
    pub n_test: Option<usize>,
    pub sigma: Option<f64>,
    pub emit_latents: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub grid_p0: Option<String>,
    pub grid_n: Option<String>,
    pub p0: Option<f64>,
    pub n_labeled: Option<usize>,
    pub methods: Option<String>,
    pub reps: Option<usize>,
    pub k: Option<usize>,
    pub p: Option<usize>,
    pub sigma: Option<f64>,
    pub n_test: Option<usize>,
    pub finite_x: Option<bool>,
    pub n_unlabeled: Option<usize>,
    pub freeze_truth: Option<bool>,
    pub alpha: Option<f64>,
    pub reweight: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config file {}", p.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config file {}", p.display()))
            }
        }
    }
}
