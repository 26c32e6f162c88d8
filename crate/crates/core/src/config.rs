//! Run configuration: one flat TOML table holding every tunable.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context_embedding::EmbeddingWeights;
use crate::fusion::FusionParams;
use crate::gateway::GatewayConfig;
use crate::labeling::{DEFAULT_MATCH_RADIUS, DEFAULT_PROMPT_TEMPLATE};
use crate::mask_refinement::GranularitySchedule;
use crate::retrieval::RetrievalParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Read {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Parse {
        path: std::path::PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // 2D refinement
    pub levels: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub min_area: u64,
    pub margin_px: u32,
    pub dbscan_eps_px: f64,
    pub dbscan_min_pts_px: usize,

    /// mask, bbox, large, huge, surroundings
    pub weights: [f64; 5],

    // 3D fusion
    pub voxel_size: f64,
    pub gamma: f64,
    pub delta: f64,
    pub dbscan_eps_m: f64,
    pub dbscan_min_pts: usize,

    // labeling and evaluation
    pub prompt_template: String,
    pub match_radius: f64,

    // retrieval
    pub top_k: usize,
    pub dedup_overlap: f64,
    pub lambda_occ: f64,
    pub depth_tol: f64,
    pub n_bins: usize,
    pub verify: bool,

    // gateway
    pub endpoint: String,
    pub parser_model: String,
    pub vlm_model: String,
    pub reasoner_model: String,
    pub embed_model: String,
    pub embed_dim: usize,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub auth_env: String,
    pub max_in_flight: usize,
    /// Seed of the offline embedder.
    pub mock_embed_seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        let sched = GranularitySchedule::default();
        let fusion = FusionParams::default();
        let ret = RetrievalParams::default();
        let gw = GatewayConfig::default();
        Self {
            levels: sched.levels,
            thresholds: sched.thresholds,
            min_area: sched.min_area,
            margin_px: sched.margin_px,
            dbscan_eps_px: sched.dbscan_eps_px,
            dbscan_min_pts_px: sched.dbscan_min_pts,
            weights: EmbeddingWeights::default().as_array(),
            voxel_size: fusion.voxel_size,
            gamma: fusion.gamma,
            delta: fusion.delta,
            dbscan_eps_m: fusion.dbscan_eps_m,
            dbscan_min_pts: fusion.dbscan_min_pts,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.into(),
            match_radius: DEFAULT_MATCH_RADIUS,
            top_k: ret.top_k,
            dedup_overlap: ret.dedup_overlap,
            lambda_occ: ret.lambda_occ,
            depth_tol: ret.depth_tol,
            n_bins: ret.n_bins,
            verify: ret.verify,
            endpoint: gw.endpoint,
            parser_model: "gpt-5-mini".into(),
            vlm_model: "qwen2.5-vl-32b-instruct".into(),
            reasoner_model: "openai-o4-mini".into(),
            embed_model: gw.embed_model,
            embed_dim: gw.embed_dim,
            timeout_secs: gw.timeout_secs,
            max_retries: gw.max_retries,
            auth_env: gw.auth_env.unwrap_or_default(),
            max_in_flight: gw.max_in_flight,
            mock_embed_seed: 0,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex sha256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn schedule(&self) -> GranularitySchedule {
        GranularitySchedule {
            levels: self.levels.clone(),
            thresholds: self.thresholds.clone(),
            min_area: self.min_area,
            margin_px: self.margin_px,
            dbscan_eps_px: self.dbscan_eps_px,
            dbscan_min_pts: self.dbscan_min_pts_px,
        }
    }

    pub fn embedding_weights(&self) -> Result<EmbeddingWeights, ConfigError> {
        EmbeddingWeights::from_array(self.weights).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn fusion(&self) -> FusionParams {
        FusionParams {
            gamma: self.gamma,
            delta: self.delta,
            voxel_size: self.voxel_size,
            dbscan_eps_m: self.dbscan_eps_m,
            dbscan_min_pts: self.dbscan_min_pts,
        }
    }

    pub fn retrieval(&self) -> RetrievalParams {
        RetrievalParams {
            top_k: self.top_k,
            dedup_overlap: self.dedup_overlap,
            lambda_occ: self.lambda_occ,
            depth_tol: self.depth_tol,
            n_bins: self.n_bins,
            prompt_template: self.prompt_template.clone(),
            verify: self.verify,
        }
    }

    /// Gateway settings with `chat_model` set to `model`.
    pub fn gateway(&self, model: &str) -> GatewayConfig {
        GatewayConfig {
            endpoint: self.endpoint.clone(),
            chat_model: model.to_string(),
            embed_model: self.embed_model.clone(),
            embed_dim: self.embed_dim,
            timeout_secs: self.timeout_secs,
            max_retries: self.max_retries,
            auth_env: (!self.auth_env.is_empty()).then(|| self.auth_env.clone()),
            max_in_flight: self.max_in_flight,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.schedule().validate().map_err(|e| inv(&e))?;
        self.embedding_weights()?;
        self.fusion().validate().map_err(|e| inv(&e))?;
        self.retrieval().validate().map_err(|e| inv(&e))?;
        self.gateway(&self.parser_model)
            .validate()
            .map_err(|e| inv(&e))?;
        if !(self.match_radius > 0.0) {
            return Err(ConfigError::Invalid("match_radius must be positive".into()));
        }
        if self.embed_dim == 0 {
            return Err(ConfigError::Invalid("embed_dim must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = Config::default();
        c.validate().unwrap();
        let back: Config = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_file_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "gamma = 0.3\nweights = [0.5, 0.2, 0.2, 0.1, 0.1]\n").unwrap();
        let c = Config::load(&p).unwrap();
        assert_eq!(c.gamma, 0.3);
        assert_eq!(c.delta, 0.5);
        assert_ne!(c.hash(), Config::default().hash());
        std::fs::write(&p, "gama = 0.3\n").unwrap();
        assert!(matches!(Config::load(&p), Err(ConfigError::Parse { .. })));
        std::fs::write(&p, "gamma = 1.5\n").unwrap();
        assert!(matches!(Config::load(&p), Err(ConfigError::Invalid(_))));
    }
}
