//! Run configuration: a flat JSON object whose keys mirror the CLI flags.
//! Every key is optional; absent keys take the MovieLens-scale defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSchema, ItemColdRule, PrepareOptions, UserColdRule};
use crate::error::{Error, Result};
use crate::memory::MemoryHyper;
use crate::meta::MetaHyper;
use crate::model::ModelDims;

/// First second of 2000-12-03 (UTC): MovieLens users whose earliest rating
/// falls on or after this instant are cold.
pub const MOVIELENS_COLD_CUTOFF: i64 = 975_801_600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserColdRuleKind {
    /// Cold when the first record's order key is at least `user_cold_cutoff`.
    OrderKeyCutoff,
    /// The lowest `user_warm_fraction` of user ids are warm.
    IdPercentile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub embed_dim: usize,
    pub layers: usize,
    pub slots: usize,
    pub rho: f64,
    pub lambda: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub user_batch: usize,
    pub epochs: usize,
    pub support_passes: usize,
    pub split_ratio: f64,
    pub support_size: usize,
    pub record_cap: usize,
    pub ndcg_n: Vec<usize>,
    pub user_cold_rule: UserColdRuleKind,
    pub user_cold_cutoff: i64,
    pub user_warm_fraction: f64,
    pub item_warm_min_ratings: usize,
    /// Directory holding the canonical CSVs and schema.
    pub data_dir: Option<PathBuf>,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hyper = MetaHyper::default();
        let prep = PrepareOptions::default();
        Self {
            seed: 0,
            embed_dim: 100,
            layers: 2,
            slots: 3,
            rho: hyper.rho,
            lambda: hyper.lambda,
            tau: hyper.memory.tau,
            alpha: hyper.memory.alpha,
            beta: hyper.memory.beta,
            gamma: hyper.memory.gamma,
            user_batch: hyper.user_batch,
            epochs: hyper.epochs,
            support_passes: hyper.support_passes,
            split_ratio: prep.split_ratio,
            support_size: prep.support_size,
            record_cap: prep.record_cap,
            ndcg_n: vec![3],
            user_cold_rule: UserColdRuleKind::OrderKeyCutoff,
            user_cold_cutoff: MOVIELENS_COLD_CUTOFF,
            user_warm_fraction: 0.9,
            item_warm_min_ratings: 10,
            data_dir: None,
            workers: 1,
        }
    }
}

impl RunConfig {
    /// Desk-scale profile for the synthetic corpora. The warm-item
    /// threshold is raised so the popularity tail is cold.
    pub fn synthetic() -> Self {
        Self {
            embed_dim: 8,
            slots: 2,
            user_cold_rule: UserColdRuleKind::IdPercentile,
            item_warm_min_ratings: 30,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.meta_hyper().validate()?;
        for (name, v) in [("rho", self.rho), ("lambda", self.lambda)] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("layers", self.layers),
            ("slots", self.slots),
            ("support_size", self.support_size),
            ("workers", self.workers),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.record_cap <= self.support_size {
            return Err(Error::Config(format!(
                "record_cap ({}) must exceed support_size ({}) to leave a query set",
                self.record_cap, self.support_size
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio)));
        }
        if self.ndcg_n.is_empty() || self.ndcg_n.contains(&0) {
            return Err(Error::Config("ndcg_n must list positive cut-offs".into()));
        }
        self.user_rule().validate()
    }

    pub fn memory_hyper(&self) -> MemoryHyper {
        MemoryHyper {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            tau: self.tau,
        }
    }

    pub fn meta_hyper(&self) -> MetaHyper {
        MetaHyper {
            rho: self.rho,
            lambda: self.lambda,
            memory: self.memory_hyper(),
            user_batch: self.user_batch,
            epochs: self.epochs,
            support_passes: self.support_passes,
        }
    }

    pub fn user_rule(&self) -> UserColdRule {
        match self.user_cold_rule {
            UserColdRuleKind::OrderKeyCutoff => UserColdRule::FirstOrderKeyAtLeast {
                cutoff: self.user_cold_cutoff,
            },
            UserColdRuleKind::IdPercentile => UserColdRule::IdPercentile {
                warm_fraction: self.user_warm_fraction,
            },
        }
    }

    pub fn prepare_options(&self) -> PrepareOptions {
        PrepareOptions {
            support_size: self.support_size,
            record_cap: self.record_cap,
            split_ratio: self.split_ratio,
            seed: self.seed,
            item_rule: ItemColdRule {
                min_warm_ratings: self.item_warm_min_ratings,
            },
            user_rule: self.user_rule(),
        }
    }

    pub fn model_dims(&self, schema: &DatasetSchema) -> ModelDims {
        ModelDims {
            user_dim: schema.user.dim(),
            item_dim: schema.item.dim(),
            embed_dim: self.embed_dim,
            layers: self.layers,
        }
    }
}
