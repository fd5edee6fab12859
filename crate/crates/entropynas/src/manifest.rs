//! Run manifests: what ran, with which settings, and where the results went.

use crate::format::{from_records, to_records, BlockRecord};
use entropynas_core::{BlockType, CostReport, MsepWeights, Resolution, SearchConfig};
use serde::{Deserialize, Serialize};

/// Every resolved search setting, enough to rebuild the exact [`SearchConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSnapshot {
    pub seed: u64,
    pub iterations: usize,
    pub population: usize,
    pub max_depth: usize,
    pub fine_keep: usize,
    pub seed_population: bool,
    pub block_types: Vec<String>,
    pub batch: usize,
    pub flops_budget: u64,
    pub params_budget: Option<u64>,
    /// `[height, width]`.
    pub budget_resolution: [usize; 2],
    pub score_resolution: usize,
    pub alpha: [f64; 5],
    pub repeats: usize,
    pub initial_arch: Vec<BlockRecord>,
}

impl From<&SearchConfig> for ConfigSnapshot {
    fn from(c: &SearchConfig) -> Self {
        ConfigSnapshot {
            seed: c.seed,
            iterations: c.iterations,
            population: c.population_size,
            max_depth: c.max_depth,
            fine_keep: c.fine_keep,
            seed_population: c.seed_population,
            block_types: c.block_types.iter().map(|t| t.name().to_string()).collect(),
            batch: c.batch_size,
            flops_budget: c.flops_budget,
            params_budget: c.params_budget,
            budget_resolution: [c.budget_resolution.height, c.budget_resolution.width],
            score_resolution: c.resolution,
            alpha: c.alpha.values(),
            repeats: c.repeats,
            initial_arch: to_records(&c.initial_arch),
        }
    }
}

impl ConfigSnapshot {
    pub fn to_config(&self) -> Result<SearchConfig, String> {
        let block_types = self
            .block_types
            .iter()
            .map(|n| BlockType::from_name(n).ok_or_else(|| format!("unknown block type {n:?}")))
            .collect::<Result<_, _>>()?;
        Ok(SearchConfig {
            flops_budget: self.flops_budget,
            params_budget: self.params_budget,
            budget_resolution: Resolution::new(self.budget_resolution[0], self.budget_resolution[1]),
            max_depth: self.max_depth,
            iterations: self.iterations,
            population_size: self.population,
            alpha: MsepWeights::new(self.alpha).map_err(|e| e.to_string())?,
            resolution: self.score_resolution,
            repeats: self.repeats,
            seed: self.seed,
            initial_arch: from_records(self.initial_arch.clone()),
            block_types,
            seed_population: self.seed_population,
            fine_keep: self.fine_keep,
            batch_size: self.batch,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub best_arch: String,
    pub log: String,
    pub manifest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine_version: String,
    pub seed: u64,
    pub config: ConfigSnapshot,
    pub wall_clock_seconds: f64,
    pub initial_score: f64,
    pub best_score: f64,
    pub best_flops: u64,
    pub best_params: u64,
    pub best_depth: u64,
    pub iterations_run: usize,
    pub outputs: Outputs,
}

impl RunManifest {
    pub fn new(config: &SearchConfig, best_score: f64, best_cost: CostReport, initial_score: f64, outputs: Outputs) -> Self {
        RunManifest {
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: ConfigSnapshot::from(config),
            wall_clock_seconds: 0.0,
            initial_score,
            best_score,
            best_flops: best_cost.flops,
            best_params: best_cost.params,
            best_depth: best_cost.depth,
            iterations_run: config.iterations,
            outputs,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifests always serialize");
        text.push('\n');
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use entropynas_core::{zoo, BlockType};

    #[test]
    fn snapshot_rebuilds_the_config() {
        let config = SearchConfig {
            params_budget: Some(123),
            block_types: vec![BlockType::Mobile, BlockType::ResBlock],
            initial_arch: zoo::searched_medium(),
            batch_size: 3,
            ..SearchConfig::toy()
        };
        let snap = ConfigSnapshot::from(&config);
        let json = serde_json::to_string(&snap).unwrap();
        let back: ConfigSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_config().unwrap(), config);
    }

    #[test]
    fn manifest_round_trips() {
        let config = SearchConfig::toy();
        let outputs = Outputs { best_arch: "a".into(), log: "b".into(), manifest: "c".into() };
        let m = RunManifest::new(&config, 2.5, CostReport { flops: 1, params: 2, depth: 3 }, 1.0, outputs);
        let back: RunManifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
