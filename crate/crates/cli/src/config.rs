//! Optional `--config` file (YAML or JSON) carrying fit settings; explicit
//! command-line flags take precedence over file values, which take
//! precedence over the built-in defaults.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

use pstrat_core::hmc::{HmcConfig, LeapfrogSpec};
use pstrat_core::model::{PriorSpec, SlopeMode};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub iters: Option<usize>,
    pub warmup: Option<usize>,
    pub chains: Option<usize>,
    pub seed: Option<u64>,
    pub target_accept: Option<f64>,
    pub leapfrog: Option<usize>,
    pub jitter: Option<f64>,
    pub stratum_scale: Option<f64>,
    pub outcome_scale: Option<f64>,
    pub standardize: Option<bool>,
    pub slope_mode: Option<SlopeModeArg>,
}

pub fn load_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let is_yaml = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("yaml") | Some("yml")
    );
    if is_yaml {
        serde_yaml::from_str(&text).with_context(|| format!("parsing YAML {}", path.display()))
    } else {
        // JSON first, YAML as fallback for extension-less files.
        serde_json::from_str(&text)
            .or_else(|_| serde_yaml::from_str(&text))
            .with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeModeArg {
    #[default]
    Shared,
    PerModel,
}

impl From<SlopeModeArg> for SlopeMode {
    fn from(v: SlopeModeArg) -> SlopeMode {
        match v {
            SlopeModeArg::Shared => SlopeMode::Shared,
            SlopeModeArg::PerModel => SlopeMode::PerModel,
        }
    }
}

/// Effective fit settings after merging flags, config file, and defaults.
#[derive(Debug, Clone, Serialize)]
pub struct FitSettings {
    pub iters: usize,
    pub warmup: usize,
    pub chains: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub leapfrog: usize,
    pub jitter: f64,
    pub stratum_scale: f64,
    pub outcome_scale: f64,
    pub standardize: bool,
    pub slope_mode: SlopeModeArg,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            iters: 2000,
            warmup: 1000,
            chains: 4,
            seed: 0,
            target_accept: 0.8,
            leapfrog: 32,
            jitter: 0.2,
            stratum_scale: 2.5,
            outcome_scale: 2.0,
            standardize: false,
            slope_mode: SlopeModeArg::Shared,
        }
    }
}

impl FitSettings {
    /// File values fill in anything the flags left unset.
    pub fn merge(flags: FileConfig, file: FileConfig) -> FitSettings {
        let d = FitSettings::default();
        FitSettings {
            iters: flags.iters.or(file.iters).unwrap_or(d.iters),
            warmup: flags.warmup.or(file.warmup).unwrap_or(d.warmup),
            chains: flags.chains.or(file.chains).unwrap_or(d.chains),
            seed: flags.seed.or(file.seed).unwrap_or(d.seed),
            target_accept: flags.target_accept.or(file.target_accept).unwrap_or(d.target_accept),
            leapfrog: flags.leapfrog.or(file.leapfrog).unwrap_or(d.leapfrog),
            jitter: flags.jitter.or(file.jitter).unwrap_or(d.jitter),
            stratum_scale: flags.stratum_scale.or(file.stratum_scale).unwrap_or(d.stratum_scale),
            outcome_scale: flags.outcome_scale.or(file.outcome_scale).unwrap_or(d.outcome_scale),
            standardize: flags.standardize.or(file.standardize).unwrap_or(d.standardize),
            slope_mode: flags.slope_mode.or(file.slope_mode).unwrap_or(d.slope_mode),
        }
    }

    pub fn hmc_config(&self) -> HmcConfig {
        HmcConfig {
            iterations: self.iters,
            warmup: self.warmup,
            chains: self.chains,
            leapfrog: if self.jitter > 0.0 {
                LeapfrogSpec::Jittered { base: self.leapfrog, frac: self.jitter }
            } else {
                LeapfrogSpec::Fixed(self.leapfrog)
            },
            target_accept: self.target_accept,
            seed: self.seed,
            adapt_mass: true,
        }
    }

    pub fn prior(&self) -> PriorSpec {
        PriorSpec { stratum_scale: self.stratum_scale, outcome_scale: self.outcome_scale }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_precedence() {
        let flags = FileConfig { iters: Some(100), ..FileConfig::default() };
        let file = FileConfig { iters: Some(999), chains: Some(2), ..FileConfig::default() };
        let s = FitSettings::merge(flags, file);
        assert_eq!(s.iters, 100);
        assert_eq!(s.chains, 2);
        assert_eq!(s.warmup, 1000);
    }

    #[test]
    fn yaml_and_json_configs_parse() {
        let dir = tempfile::tempdir().unwrap();
        let yaml = dir.path().join("c.yaml");
        std::fs::write(&yaml, "iters: 500\nwarmup: 250\nslope_mode: per-model\n").unwrap();
        let c = load_config(&yaml).unwrap();
        assert_eq!(c.iters, Some(500));
        assert_eq!(c.slope_mode, Some(SlopeModeArg::PerModel));

        let json = dir.path().join("c.json");
        std::fs::write(&json, r#"{"chains": 3, "seed": 42}"#).unwrap();
        let c = load_config(&json).unwrap();
        assert_eq!(c.chains, Some(3));
        assert_eq!(c.seed, Some(42));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("c.json");
        std::fs::write(&json, r#"{"itters": 3}"#).unwrap();
        assert!(load_config(&json).is_err());
    }
}
