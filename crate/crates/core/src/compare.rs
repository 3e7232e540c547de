//! Strategy matrix: run several pruning configurations on one video and
//! tabulate budgets, sink survival and (given ground truth) recall metrics.

use serde::{Deserialize, Serialize};

use crate::config::{PruneConfig, SpatialSelector, Strategy};
use crate::diagnostics::{identify_sink_set, occurrences, reduction_pct, selection_frequency, DEFAULT_SINK_TOP_PCT};
use crate::error::{invalid, Result};
use crate::model::{AttentionScores, TokenGrid};
use crate::par;
use crate::pipeline::run;
use crate::synth::{score, GroundTruth, Metrics};

/// K values of the naive-strategy sweep.
pub const K_SWEEP: [f64; 4] = [0.05, 0.10, 0.15, 0.20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub config: PruneConfig,
}

impl Variant {
    pub fn new(label: impl Into<String>, config: PruneConfig) -> Self {
        Self { label: label.into(), config }
    }
}

fn with(base: &PruneConfig, strategy: Strategy, selector: SpatialSelector) -> PruneConfig {
    PruneConfig { strategy, spatial_selector: selector, ..base.clone() }
}

/// The default matrix. The first entry, spatial-only attention top-k, is the
/// reference the other rows are compared against.
pub fn standard_variants(base: &PruneConfig) -> Vec<Variant> {
    use SpatialSelector::*;
    use Strategy::*;
    let mut v = vec![
        Variant::new("attention_topk", with(base, SpatialOnly, AttentionTopk)),
        Variant::new("stsp", with(base, SpatialOnly, AttentionTopkSinkAware)),
    ];
    for k in K_SWEEP {
        let pct = (k * 100.0).round();
        v.push(Variant::new(
            format!("hard_prune_k{pct}"),
            PruneConfig { k_pct: k, ..with(base, SpatialOnly, HardPruneTopk) },
        ));
    }
    for k in K_SWEEP {
        let pct = (k * 100.0).round();
        v.push(Variant::new(
            format!("redistribution_k{pct}"),
            PruneConfig { k_pct: k, ..with(base, SpatialOnly, AttentionRedistribution) },
        ));
    }
    v.push(Variant::new("dpc_knn", with(base, SpatialOnly, DpcKnn)));
    v.push(Variant::new(
        "temporal_topk",
        PruneConfig { sink_aware_temporal: false, ..with(base, TemporalThenSpatial, AttentionTopk) },
    ));
    v.push(Variant::new(
        "sttp_topk",
        PruneConfig { sink_aware_temporal: true, ..with(base, TemporalThenSpatial, AttentionTopk) },
    ));
    v.push(Variant::new(
        "sttp_stsp",
        PruneConfig { sink_aware_temporal: true, ..with(base, TemporalThenSpatial, AttentionTopkSinkAware) },
    ));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub strategy: Strategy,
    pub selector: SpatialSelector,
    pub retention_ratio: f64,
    pub mu_s: f64,
    pub mu_t: f64,
    pub k_pct: f64,
    pub budget: usize,
    pub output: usize,
    pub temporally_pruned: usize,
    pub sink_set_kept: usize,
    /// Sink-set occurrences removed relative to the reference row, in percent.
    pub sink_reduction_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Top-frequency positions of the reference row.
    pub sink_set: Vec<usize>,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(
    grid: &TokenGrid,
    scores: &AttentionScores,
    variants: &[Variant],
    truth: Option<&GroundTruth>,
) -> Result<Comparison> {
    if variants.is_empty() {
        return Err(invalid("no variants to compare"));
    }
    let results = par::map_slice(variants, |v| run(grid, scores, &v.config))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let sink_set = identify_sink_set(&selection_frequency(&results[0]), DEFAULT_SINK_TOP_PCT)?;
    let reference = occurrences(&results[0].selection, &sink_set);

    let mut rows = Vec::with_capacity(variants.len());
    for (v, r) in variants.iter().zip(&results) {
        let kept = occurrences(&r.selection, &sink_set);
        rows.push(ComparisonRow {
            label: v.label.clone(),
            strategy: v.config.strategy,
            selector: v.config.spatial_selector,
            retention_ratio: v.config.retention_ratio,
            mu_s: v.config.mu_s,
            mu_t: v.config.mu_t,
            k_pct: v.config.k_pct,
            budget: r.ledger.budget,
            output: r.ledger.output,
            temporally_pruned: r.ledger.temporally_pruned,
            sink_set_kept: kept,
            sink_reduction_pct: reduction_pct(reference, kept),
            metrics: truth.map(|t| score(r, t)).transpose()?,
        });
    }
    Ok(Comparison { sink_set, rows })
}

const BASE_COLUMNS: &str =
    "label,strategy,selector,retention_ratio,mu_s,mu_t,k_pct,budget,output,temporally_pruned,sink_set_kept,sink_reduction_pct";
const METRIC_COLUMNS: &str = ",salient_recall,sink_retention,budget_waste";

/// One header line plus one line per row; metric columns appear when every
/// row carries metrics.
pub fn to_csv(cmp: &Comparison) -> String {
    let with_metrics = cmp.rows.iter().all(|r| r.metrics.is_some());
    let mut out = String::from(BASE_COLUMNS);
    if with_metrics {
        out.push_str(METRIC_COLUMNS);
    }
    out.push('\n');
    for r in &cmp.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.strategy.name(),
            r.selector.name(),
            r.retention_ratio,
            r.mu_s,
            r.mu_t,
            r.k_pct,
            r.budget,
            r.output,
            r.temporally_pruned,
            r.sink_set_kept,
            r.sink_reduction_pct
        ));
        if let (true, Some(m)) = (with_metrics, &r.metrics) {
            out.push_str(&format!(",{},{},{}", m.salient_recall, m.sink_retention, m.budget_waste));
        }
        out.push('\n');
    }
    out
}
