use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Which stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SpatialOnly,
    TemporalThenSpatial,
}

/// Per-frame selector used by the spatial stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialSelector {
    AttentionTopk,
    AttentionTopkSinkAware,
    HardPruneTopk,
    AttentionRedistribution,
    DpcKnn,
}

impl SpatialSelector {
    pub const ALL: [SpatialSelector; 5] = [
        SpatialSelector::AttentionTopk,
        SpatialSelector::AttentionTopkSinkAware,
        SpatialSelector::HardPruneTopk,
        SpatialSelector::AttentionRedistribution,
        SpatialSelector::DpcKnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpatialSelector::AttentionTopk => "attention_topk",
            SpatialSelector::AttentionTopkSinkAware => "attention_topk_sink_aware",
            SpatialSelector::HardPruneTopk => "hard_prune_topk",
            SpatialSelector::AttentionRedistribution => "attention_redistribution",
            SpatialSelector::DpcKnn => "dpc_knn",
        }
    }

    pub fn uses_k_pct(self) -> bool {
        matches!(self, SpatialSelector::HardPruneTopk | SpatialSelector::AttentionRedistribution)
    }
}

impl std::str::FromStr for SpatialSelector {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        SpatialSelector::ALL
            .into_iter()
            .find(|sel| sel.name() == s)
            .ok_or_else(|| config(format!("unknown spatial selector `{s}`")))
    }
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::SpatialOnly => "spatial_only",
            Strategy::TemporalThenSpatial => "temporal_then_spatial",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial_only" => Ok(Strategy::SpatialOnly),
            "temporal_then_spatial" => Ok(Strategy::TemporalThenSpatial),
            _ => Err(config(format!("unknown strategy `{s}`"))),
        }
    }
}

/// Full pruning configuration. Field names double as the JSON config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub retention_ratio: f64,
    pub mu_s: f64,
    pub mu_t: f64,
    pub w: f64,
    pub tau: f64,
    pub clip_len: usize,
    pub strategy: Strategy,
    pub spatial_selector: SpatialSelector,
    pub merge_pruned: bool,
    pub sink_aware_temporal: bool,
    /// Fraction of top-attention tokens discarded or redistributed per frame
    /// (`hard_prune_topk`, `attention_redistribution`).
    pub k_pct: f64,
    /// Neighbour count for `dpc_knn`.
    pub knn: usize,
    /// Apply the temporal sink bonus to each adjacent pair instead of the clip aggregate.
    pub sttp_per_pair: bool,
    /// Fold temporally pruned occurrences into the clip's kept representative.
    pub merge_temporal: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            retention_ratio: 0.1,
            mu_s: 0.3,
            mu_t: 0.07,
            w: 1.1,
            tau: 0.9,
            clip_len: 4,
            strategy: Strategy::SpatialOnly,
            spatial_selector: SpatialSelector::AttentionTopkSinkAware,
            merge_pruned: false,
            sink_aware_temporal: true,
            k_pct: 0.1,
            knn: 5,
            sttp_per_pair: false,
            merge_temporal: false,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.retention_ratio;
        if !(r > 0.0 && r <= 1.0) {
            return Err(config(format!("retention_ratio must be in (0, 1], got {r}")));
        }
        if !(self.mu_s >= 0.0 && self.mu_s.is_finite()) {
            return Err(config(format!("mu_s must be finite and >= 0, got {}", self.mu_s)));
        }
        if !(self.mu_t >= 0.0 && self.mu_t.is_finite()) {
            return Err(config(format!("mu_t must be finite and >= 0, got {}", self.mu_t)));
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(config(format!("w must be finite and > 0, got {}", self.w)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(config(format!("tau must be in (0, 1), got {}", self.tau)));
        }
        if self.clip_len < 2 {
            return Err(config(format!("clip_len must be >= 2, got {}", self.clip_len)));
        }
        if self.spatial_selector.uses_k_pct() && !(self.k_pct > 0.0 && self.k_pct < 0.5) {
            return Err(config(format!("k_pct must be in (0, 0.5), got {}", self.k_pct)));
        }
        if self.spatial_selector == SpatialSelector::DpcKnn && self.knn == 0 {
            return Err(config("knn must be >= 1"));
        }
        Ok(())
    }

    /// Sets a named numeric parameter, as used by sweeps and CLI overrides.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(config(format!("`{name}` needs a non-negative integer, got {v}")))
            }
        };
        match name {
            "retention_ratio" => self.retention_ratio = value,
            "mu_s" => self.mu_s = value,
            "mu_t" => self.mu_t = value,
            "w" => self.w = value,
            "tau" => self.tau = value,
            "k_pct" => self.k_pct = value,
            "clip_len" => self.clip_len = as_count(value)?,
            "knn" => self.knn = as_count(value)?,
            _ => return Err(config(format!("unknown sweep parameter `{name}`"))),
        }
        Ok(())
    }

    pub fn get_param(&self, name: &str) -> Option<f64> {
        Some(match name {
            "retention_ratio" => self.retention_ratio,
            "mu_s" => self.mu_s,
            "mu_t" => self.mu_t,
            "w" => self.w,
            "tau" => self.tau,
            "k_pct" => self.k_pct,
            "clip_len" => self.clip_len as f64,
            "knn" => self.knn as f64,
            _ => return None,
        })
    }
}
