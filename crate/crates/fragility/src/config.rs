//! Run configuration, read from TOML. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use fragility_core::data::LALONDE_COVARIATES;
use fragility_core::estimators::{Caliper, TieBreak};
use fragility_core::simulation::SimConfig;
use fragility_core::{BinSpec, FitOptions, MatchSpec, Metric, TrimRule};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{SourceKey, Upstream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub support: SupportConfig,
    #[serde(default)]
    pub propensity: PropensityConfig,
    #[serde(default)]
    pub matching: MatchingConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub deciles: DecileConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controls {
    Psid,
    Cps,
}

impl Controls {
    pub fn key(self) -> SourceKey {
        match self {
            Controls::Psid => SourceKey::PsidControls,
            Controls::Cps => SourceKey::CpsControls,
        }
    }
}

pub const NSW_SAMPLE: &str = "dehejia_wahba_185";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// http(s) base URL or mirror directory, relative to the config file.
    pub source: String,
    /// Cache directory, relative to the config file.
    pub cache_dir: String,
    pub controls: Controls,
    #[serde(default = "default_nsw_sample")]
    pub nsw_sample: String,
}

fn default_nsw_sample() -> String {
    NSW_SAMPLE.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinConfig {
    pub dimension: String,
    pub edges: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportConfig {
    /// Grid behind `support_72.csv` and the overlap restriction.
    pub fine: Vec<BinConfig>,
    /// Grid behind `support_42.csv`.
    pub coarse: Vec<BinConfig>,
}

pub fn bins(cfg: &[BinConfig]) -> Result<Vec<BinSpec>> {
    cfg.iter()
        .map(|b| Ok(BinSpec::new(b.dimension.clone(), b.edges.clone())?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropensityConfig {
    pub covariates: Vec<String>,
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub histogram_bins: usize,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        let f = FitOptions::default();
        Self {
            covariates: LALONDE_COVARIATES.iter().map(|s| s.to_string()).collect(),
            ridge: f.ridge,
            tol: f.tol,
            max_iter: f.max_iter,
            histogram_bins: 20,
        }
    }
}

impl PropensityConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            ridge: self.ridge,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    LogitScore,
    Mahalanobis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub name: String,
    pub metric: MetricName,
    /// Caliper in SDs of the logit score.
    #[serde(default)]
    pub caliper_sd: Option<f64>,
    /// Caliper on the metric scale.
    #[serde(default)]
    pub caliper: Option<f64>,
    #[serde(default = "yes")]
    pub with_replacement: bool,
    #[serde(default = "one")]
    pub n_neighbors: usize,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl DesignConfig {
    pub fn spec(&self) -> Result<MatchSpec> {
        let caliper = match (self.caliper_sd, self.caliper) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(format!(
                    "design `{}` sets both caliper and caliper_sd",
                    self.name
                )))
            }
            (Some(k), None) => Some(Caliper::LogitSd(k)),
            (None, Some(c)) => Some(Caliper::Absolute(c)),
            (None, None) => None,
        };
        let spec = MatchSpec {
            metric: match self.metric {
                MetricName::LogitScore => Metric::LogitScore,
                MetricName::Mahalanobis => Metric::Mahalanobis,
            },
            caliper,
            with_replacement: self.with_replacement,
            n_neighbors: self.n_neighbors,
            tie_break: TieBreak::LowestIndex,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingConfig {
    pub trim: [f64; 2],
    pub designs: Vec<DesignConfig>,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        let design = |name: &str, metric, caliper_sd| DesignConfig {
            name: name.into(),
            metric,
            caliper_sd,
            caliper: None,
            with_replacement: true,
            n_neighbors: 1,
        };
        Self {
            trim: [0.1, 0.9],
            designs: vec![
                design("nn_logit", MetricName::LogitScore, None),
                design("logit_caliper", MetricName::LogitScore, Some(0.2)),
                design("mahalanobis", MetricName::Mahalanobis, None),
            ],
        }
    }
}

impl MatchingConfig {
    pub fn trim_rule(&self) -> Result<TrimRule> {
        Ok(TrimRule::new(self.trim[0], self.trim[1])?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub deltas: Vec<f64>,
    pub proxy_deltas: Vec<f64>,
    /// Trim rule at `delta` is `[delta / scale, 1 - delta / scale]`.
    pub proxy_scale: f64,
    pub bias_step: f64,
    /// Outcome support for the worst-case bounds; empirical when absent.
    pub outcome_support: Option<[f64; 2]>,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            deltas: (0..=40).map(|k| f64::from(k) / 20.0).collect(),
            proxy_deltas: vec![0.0, 0.5, 1.0, 1.5],
            proxy_scale: 10.0,
            bias_step: 0.5,
            outcome_support: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub refit: bool,
    /// Worker threads; all cores when absent.
    pub threads: Option<usize>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 500,
            refit: true,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecileConfig {
    pub min_per_arm: usize,
}

impl Default for DecileConfig {
    fn default() -> Self {
        Self { min_per_arm: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n: usize,
    pub type_proportions: [f64; 4],
    pub treat_prob: f64,
    pub delta_grid: Vec<f64>,
    pub epsilon: f64,
    pub witness_threshold: f64,
    pub witness_n: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            n: s.n,
            type_proportions: s.type_proportions,
            treat_prob: s.treat_prob,
            delta_grid: s.delta_grid,
            epsilon: s.epsilon,
            witness_threshold: 0.5,
            witness_n: 100_000,
        }
    }
}

impl SimulationConfig {
    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            n: self.n,
            type_proportions: self.type_proportions,
            treat_prob: self.treat_prob,
            delta_grid: self.delta_grid.clone(),
            epsilon: self.epsilon,
            seed,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.nsw_sample != NSW_SAMPLE {
            return Err(Error::Config(format!(
                "nsw_sample `{}` is not available; the shipped files hold `{NSW_SAMPLE}`",
                self.data.nsw_sample
            )));
        }
        bins(&self.support.fine)?;
        bins(&self.support.coarse)?;
        self.matching.trim_rule()?;
        for d in &self.matching.designs {
            d.spec()?;
        }
        if self.matching.designs.is_empty() {
            return Err(Error::Config("at least one matching design is required".into()));
        }
        if self.bootstrap.replicates == 0 {
            return Err(Error::Config("bootstrap.replicates must be >= 1".into()));
        }
        self.simulation.sim_config(self.seed).validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        crate::ingest::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// A parsed config with paths resolved against its own directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = RunConfig::parse(&text)?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { config, base_dir })
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.base_dir.join(&self.config.data.cache_dir)
    }

    pub fn upstream(&self) -> Upstream {
        Upstream::parse(&self.config.data.source, &self.base_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[data]
source = "mirror"
cache_dir = "cache"
controls = "psid"
[support]
fine = [{ dimension = "age", edges = [16, 30, 56] }]
coarse = [{ dimension = "age", edges = [16, 56] }]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.matching.designs.len(), 3);
        assert_eq!(c.bootstrap.replicates, 500);
        assert_eq!(c.propensity.covariates.len(), 8);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = MINIMAL.replace("seed = 7", "");
        assert!(matches!(RunConfig::parse(&text), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("controls = \"psid\"", "controls = \"psid\"\ncontrol = \"cps\"");
        assert!(RunConfig::parse(&text).is_err());
        let text = format!("{MINIMAL}\n[bootstrap]\nreplicate = 3\n");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn bad_grid_rejected() {
        let text = MINIMAL.replace("[16, 30, 56]", "[16, 16, 56]");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 8;
        assert_ne!(a.digest(), b.digest());
    }
}
