//! Run configuration: flat TOML with one section per stage. Every field has
//! a default mirroring the reference experimental setup, so an empty file is
//! a complete, runnable config.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Battery,
    Station,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    /// Root seed; every stage derives its own stream from this.
    pub seed: u64,
    pub paths: Paths,
    pub ingest: IngestSection,
    pub diffusion: DiffusionSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub evaluation: EvalSection,
    pub bidding: BiddingSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Battery,
            seed: 0,
            paths: Paths::default(),
            ingest: IngestSection::default(),
            diffusion: DiffusionSection::default(),
            network: NetworkSection::default(),
            train: TrainSection::default(),
            evaluation: EvalSection::default(),
            bidding: BiddingSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw session file consumed by `ingest`.
    pub sessions: PathBuf,
    /// Directory holding the ingested corpora.
    pub corpus_dir: PathBuf,
    /// Model checkpoint written by `train`, read by `sample`.
    pub checkpoint: PathBuf,
    /// Default output directory (overridden by --out).
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            sessions: "sessions.csv".into(),
            corpus_dir: "corpus".into(),
            checkpoint: "checkpoint.json".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Station ids, in label order (index 0 gets label 0, ...).
    pub stations: Vec<String>,
    /// "amps" or "kw".
    pub rate_unit: String,
    /// Conversion voltage when the signal is in amps.
    pub voltage: f64,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            stations: vec!["jpl".into(), "caltech".into()],
            rate_unit: "amps".into(),
            voltage: chargegen_core::ingest::DEFAULT_VOLTAGE,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        Self { steps: 50, beta_start: 1e-4, beta_end: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { hidden: 48, heads: 4, head_dim: 48 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 4, learning_rate: 1e-3, patience: 20 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub bins: usize,
    pub repeats: usize,
    pub tail_clusters: usize,
    pub acf_max_lag: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { bins: 50, repeats: 5, tail_clusters: 7, acf_max_lag: 48 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BiddingSection {
    pub price_file: PathBuf,
    /// Penalty price as a multiple of the maximum day-ahead price.
    pub penalty_factor: f64,
    pub power_cap_kw: f64,
    /// Number of representative scenarios (= EVs) after reduction;
    /// 0 keeps every scenario.
    pub reduce_to: usize,
    /// Real arrival minutes (written by `ingest`) for arrival resampling.
    pub arrivals_file: PathBuf,
}

impl Default for BiddingSection {
    fn default() -> Self {
        Self {
            price_file: "prices.csv".into(),
            penalty_factor: 0.8,
            power_cap_kw: 10.0,
            reduce_to: 0,
            arrivals_file: "corpus/arrivals.csv".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("bad config {}: {e}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.diffusion.steps < 2 {
            anyhow::bail!("diffusion.steps must be >= 2");
        }
        if !(self.diffusion.beta_start > 0.0 && self.diffusion.beta_start <= self.diffusion.beta_end && self.diffusion.beta_end < 1.0) {
            anyhow::bail!("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
        }
        if self.network.hidden == 0 || self.network.hidden % 2 != 0 {
            anyhow::bail!("network.hidden must be a positive even number");
        }
        if self.ingest.rate_unit != "amps" && self.ingest.rate_unit != "kw" {
            anyhow::bail!("ingest.rate_unit must be 'amps' or 'kw'");
        }
        if self.task == Task::Station && self.ingest.stations.is_empty() {
            anyhow::bail!("station task needs at least one station id");
        }
        Ok(())
    }

    pub fn rate_unit(&self) -> chargegen_core::ingest::RateUnit {
        match self.ingest.rate_unit.as_str() {
            "kw" => chargegen_core::ingest::RateUnit::Kilowatts,
            _ => chargegen_core::ingest::RateUnit::Amps { voltage: self.ingest.voltage },
        }
    }

    /// Maps a station name or numeric string to its label index.
    pub fn label_of(&self, raw: &str) -> anyhow::Result<usize> {
        if let Ok(idx) = raw.parse::<usize>() {
            return Ok(idx);
        }
        self.ingest
            .stations
            .iter()
            .position(|s| s == raw)
            .ok_or_else(|| anyhow::anyhow!("unknown station label '{raw}' (configured: {:?})", self.ingest.stations))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_complete_defaults() {
        let config: RunConfig = toml::from_str("").unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.diffusion.steps, 50);
        assert_eq!(config.train.epochs, 200);
        assert_eq!(config.train.batch_size, 4);
        assert_eq!(config.network.hidden, 48);
        assert_eq!(config.network.heads, 4);
    }

    #[test]
    fn round_trip_is_stable() {
        let text = "task = \"station\"\nseed = 9\n\n[train]\nepochs = 12\n";
        let parsed: RunConfig = toml::from_str(text).unwrap();
        let once = parsed.to_toml();
        let reparsed: RunConfig = toml::from_str(&once).unwrap();
        assert_eq!(parsed, reparsed);
        assert_eq!(once, reparsed.to_toml());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("quixotic = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\nnot_a_field = 2").is_err());
    }

    #[test]
    fn label_lookup() {
        let config = RunConfig::default();
        assert_eq!(config.label_of("jpl").unwrap(), 0);
        assert_eq!(config.label_of("caltech").unwrap(), 1);
        assert_eq!(config.label_of("1").unwrap(), 1);
        assert!(config.label_of("nowhere").is_err());
    }
}
