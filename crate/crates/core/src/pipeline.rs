//! Stage composition under a global token budget.
//!
//! `spatial_only` spreads the budget `floor(r * T * n_v)` round-robin over
//! frames. `temporal_then_spatial` first drops temporally redundant tokens,
//! then apportions the same budget across frames in proportion to what each
//! frame has left (largest-remainder rounding) and runs the spatial selector
//! over the survivors only.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::config::{PruneConfig, SpatialSelector, Strategy};
use crate::error::{config, invalid, Result};
use crate::model::{validate, AttentionScores, SinkScores, TokenGrid, TokenId, TokenSelection};
use crate::par;
use crate::sink::sink_scores;
use crate::spatial::{self, dpc_frame_scores, hard_prune_frame, redistribute_frame, top_candidates};
use crate::temporal::{self, SinkBonus, TemporalPruneSet};
use crate::vecops::floor_fraction;

/// Version tag written into serialized results.
pub const RESULT_SCHEMA: u32 = 1;

/// Per-stage token accounting.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ledger {
    pub input_tokens: usize,
    pub budget: usize,
    pub temporally_pruned: usize,
    pub spatially_pruned: usize,
    /// Tokens folded into a kept token (never changes the kept count).
    pub merged: usize,
    pub output: usize,
    /// Fewer than `budget` tokens were available after the earlier stages.
    pub under_budget: bool,
    /// Quota moved away from frames that could not fill their share.
    pub reassigned_quota: usize,
    /// Frames where attention redistribution fell back to a uniform split.
    pub redistribution_fallback_frames: Vec<usize>,
}

impl Ledger {
    /// `output = input - temporally pruned - spatially pruned`.
    pub fn reconciles(&self) -> bool {
        self.temporally_pruned + self.spatially_pruned + self.output == self.input_tokens
            && self.output <= self.budget
            && (self.under_budget || self.output == self.budget)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    pub schema: u32,
    pub frames: usize,
    pub patches: usize,
    pub config: PruneConfig,
    pub selection: TokenSelection,
    pub temporal: TemporalPruneSet,
    /// Spatial quota granted to each frame.
    pub quotas: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sink: Option<SinkScores>,
    pub ledger: Ledger,
}

impl PruneResult {
    pub fn kept(&self) -> &[TokenId] {
        &self.selection.kept
    }
}

/// Token budget `floor(r * total)`.
pub fn budget_for(retention_ratio: f64, total_tokens: usize) -> usize {
    floor_fraction(retention_ratio, total_tokens)
}

/// `floor(B / T)` per frame plus one for the first `B mod T` frames, then any
/// quota above a frame's capacity is spilled onto later frames with room.
/// Returns the quotas and the amount spilled.
pub fn round_robin_quotas(budget: usize, capacity: &[usize]) -> (Vec<usize>, usize) {
    let frames = capacity.len();
    let total: usize = capacity.iter().sum();
    if budget >= total {
        return (capacity.to_vec(), 0);
    }
    let base = budget / frames;
    let extra = budget % frames;
    let mut quotas: Vec<usize> = (0..frames).map(|f| base + usize::from(f < extra)).collect();
    let mut excess = 0;
    for (q, &c) in quotas.iter_mut().zip(capacity) {
        if *q > c {
            excess += *q - c;
            *q = c;
        }
    }
    let spilled = excess;
    while excess > 0 {
        for (q, &c) in quotas.iter_mut().zip(capacity) {
            if excess > 0 && *q < c {
                *q += 1;
                excess -= 1;
            }
        }
    }
    (quotas, spilled)
}

/// Largest-remainder apportionment of `budget` proportional to `capacity`,
/// never exceeding a frame's capacity. Remainder ties go to the lower frame.
pub fn proportional_quotas(budget: usize, capacity: &[usize]) -> Vec<usize> {
    let total: usize = capacity.iter().sum();
    if budget >= total {
        return capacity.to_vec();
    }
    let b = budget as u128;
    let c_total = total as u128;
    let mut quotas: Vec<usize> = capacity.iter().map(|&c| (b * c as u128 / c_total) as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..capacity.len()).collect();
    order.sort_by(|&x, &y| {
        let rx = b * capacity[x] as u128 % c_total;
        let ry = b * capacity[y] as u128 % c_total;
        ry.cmp(&rx).then(x.cmp(&y))
    });
    for &f in order.iter().take(budget - assigned) {
        quotas[f] += 1;
    }
    quotas
}

/// Ranking row and eligible candidates for one frame.
struct FramePlan {
    row: Vec<f64>,
    eligible: Vec<usize>,
    fallback: bool,
}

/// Runs the configured strategy.
pub fn run(grid: &TokenGrid, scores: &AttentionScores, cfg: &PruneConfig) -> Result<PruneResult> {
    cfg.validate()?;
    let report = validate(grid, Some(scores));
    if !report.is_empty() {
        let lines: Vec<String> = report.iter().take(5).map(|v| v.to_string()).collect();
        return Err(invalid(format!("{} input violation(s): {}", report.len(), lines.join("; "))));
    }

    let (frames, n) = (grid.frames(), grid.patches());
    let input_tokens = frames * n;
    let budget = budget_for(cfg.retention_ratio, input_tokens);
    if budget == 0 {
        return Err(config(format!(
            "retention ratio {} leaves no tokens out of {input_tokens}",
            cfg.retention_ratio
        )));
    }

    let temporal_stage = cfg.strategy == Strategy::TemporalThenSpatial;
    let needs_sink = cfg.spatial_selector == SpatialSelector::AttentionTopkSinkAware
        || (temporal_stage && cfg.sink_aware_temporal);
    let sink = needs_sink.then(|| sink_scores(scores, cfg.w));

    let temporal = if temporal_stage {
        match (&sink, cfg.sink_aware_temporal) {
            (Some(sink), true) => {
                let placement = if cfg.sttp_per_pair { SinkBonus::PerPair } else { SinkBonus::Aggregate };
                temporal::clip_prune_sttp_with(grid, sink, cfg.tau, cfg.mu_t, cfg.clip_len, placement)?
            }
            _ => temporal::clip_prune(grid, cfg.tau, cfg.clip_len)?,
        }
    } else {
        TemporalPruneSet::default()
    };
    let removed = temporal.mask(frames, n);

    let work_grid: Cow<TokenGrid> = if cfg.merge_temporal && !temporal.is_empty() {
        Cow::Owned(temporal::merge_runs(grid, &temporal, cfg.clip_len))
    } else {
        Cow::Borrowed(grid)
    };

    let adjusted = match (&sink, cfg.spatial_selector) {
        (Some(sink), SpatialSelector::AttentionTopkSinkAware) => Some(spatial::adjust_stsp(scores, sink, cfg.mu_s)?),
        _ => None,
    };

    let plans: Vec<FramePlan> = par::map_indexed(frames, |t| {
        let candidates: Vec<usize> = (0..n).filter(|&i| !removed[t * n + i]).collect();
        let attn = scores.frame(t);
        match cfg.spatial_selector {
            SpatialSelector::AttentionTopk => FramePlan { row: attn.to_vec(), eligible: candidates, fallback: false },
            SpatialSelector::AttentionTopkSinkAware => {
                let adj = adjusted.as_ref().expect("sink-aware scores computed");
                FramePlan { row: adj.data()[t * n..(t + 1) * n].to_vec(), eligible: candidates, fallback: false }
            }
            SpatialSelector::HardPruneTopk => FramePlan {
                eligible: hard_prune_frame(attn, &candidates, cfg.k_pct),
                row: attn.to_vec(),
                fallback: false,
            },
            SpatialSelector::AttentionRedistribution => {
                let (row, fallback) = redistribute_frame(attn, &candidates, cfg.k_pct);
                FramePlan { row, eligible: candidates, fallback }
            }
            SpatialSelector::DpcKnn => FramePlan {
                row: dpc_frame_scores(&work_grid, t, &candidates, cfg.knn),
                eligible: candidates,
                fallback: false,
            },
        }
    });

    let capacity: Vec<usize> = plans.iter().map(|p| p.eligible.len()).collect();
    let (quotas, reassigned_quota) = if temporal_stage {
        (proportional_quotas(budget, &capacity), 0)
    } else {
        round_robin_quotas(budget, &capacity)
    };

    let per_frame: Vec<Vec<usize>> =
        par::map_indexed(frames, |t| top_candidates(&plans[t].row, &plans[t].eligible, quotas[t]));
    let kept: Vec<TokenId> = per_frame
        .iter()
        .enumerate()
        .flat_map(|(t, ps)| ps.iter().map(move |&i| TokenId::new(t, i)))
        .collect();

    let mut selection =
        TokenSelection { frames, patches: n, budget, kept, merges: Vec::new(), merged_embeddings: None };
    if cfg.merge_pruned {
        let alive: Vec<bool> = removed.iter().map(|r| !r).collect();
        selection = spatial::merge_pruned_among(&work_grid, &selection, Some(&alive))?;
    }

    let output = selection.kept.len();
    let ledger = Ledger {
        input_tokens,
        budget,
        temporally_pruned: temporal.len(),
        spatially_pruned: input_tokens - temporal.len() - output,
        merged: selection.merges.iter().map(|m| m.sources.len()).sum(),
        output,
        under_budget: output < budget,
        reassigned_quota,
        redistribution_fallback_frames: plans
            .iter()
            .enumerate()
            .filter(|(_, p)| p.fallback)
            .map(|(t, _)| t)
            .collect(),
    };

    Ok(PruneResult {
        schema: RESULT_SCHEMA,
        frames,
        patches: n,
        config: cfg.clone(),
        selection,
        temporal,
        quotas,
        sink,
        ledger,
    })
}

/// Named parameter values to sweep. Values are swept in ascending order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamGrid {
    pub params: Vec<(String, Vec<f64>)>,
}

impl ParamGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, values: &[f64]) -> Self {
        self.params.push((name.to_string(), values.to_vec()));
        self
    }

    /// Parses `name=v1,v2,...`.
    pub fn push_spec(&mut self, spec: &str) -> Result<()> {
        let (name, values) =
            spec.split_once('=').ok_or_else(|| config(format!("grid entry `{spec}` is not name=v1,v2,...")))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| config(format!("bad value `{v}` in `{spec}`"))))
            .collect::<Result<Vec<_>>>()?;
        self.params.push((name.trim().to_string(), values));
        Ok(())
    }

    fn normalized(&self) -> Result<Vec<(String, Vec<f64>)>> {
        if self.params.is_empty() {
            return Err(config("parameter grid is empty"));
        }
        let mut out = Vec::new();
        for (name, values) in &self.params {
            if PruneConfig::default().get_param(name).is_none() {
                return Err(config(format!("unknown sweep parameter `{name}`")));
            }
            if out.iter().any(|(n, _): &(String, Vec<f64>)| n == name) {
                return Err(config(format!("parameter `{name}` listed twice")));
            }
            let mut v = values.clone();
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                return Err(config(format!("parameter `{name}` needs finite values")));
            }
            v.sort_by(f64::total_cmp);
            v.dedup();
            out.push((name.clone(), v));
        }
        Ok(out)
    }

    /// All parameter tuples in lexicographic order.
    pub fn points(&self) -> Result<Vec<Vec<(String, f64)>>> {
        let params = self.normalized()?;
        let mut points: Vec<Vec<(String, f64)>> = vec![Vec::new()];
        for (name, values) in &params {
            points = points
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push((name.clone(), v));
                        p
                    })
                })
                .collect();
        }
        Ok(points)
    }
}

/// One evaluated sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub params: Vec<(String, f64)>,
    pub result: PruneResult,
}

fn config_at(base: &PruneConfig, params: &[(String, f64)]) -> Result<PruneConfig> {
    let mut cfg = base.clone();
    for (name, value) in params {
        cfg.set_param(name, *value)?;
    }
    Ok(cfg)
}

/// Cartesian sweep; points run in parallel and come back in lexicographic order.
pub fn sweep(
    grid: &TokenGrid,
    scores: &AttentionScores,
    base: &PruneConfig,
    param_grid: &ParamGrid,
) -> Result<Vec<SweepPoint>> {
    let points = param_grid.points()?;
    par::map_slice(&points, |params| {
        let cfg = config_at(base, params)?;
        Ok(SweepPoint { params: params.clone(), result: run(grid, scores, &cfg)? })
    })
    .into_iter()
    .collect()
}

/// Outcome of a coordinate-wise greedy search.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedySweep {
    /// Every evaluated point, in lexicographic parameter order, with its objective.
    pub evaluated: Vec<(SweepPoint, f64)>,
    /// Best parameter tuple found.
    pub best: Vec<(String, f64)>,
}

/// Greedy search: parameters are tuned one at a time in grid order, each at
/// the value maximizing `objective` with earlier parameters fixed at their
/// best and later ones at their first grid value. Ties keep the smaller value.
pub fn greedy_sweep<F>(
    grid: &TokenGrid,
    scores: &AttentionScores,
    base: &PruneConfig,
    param_grid: &ParamGrid,
    objective: F,
) -> Result<GreedySweep>
where
    F: Fn(&PruneResult) -> f64 + Sync,
{
    let params = param_grid.normalized()?;
    let mut current: Vec<(String, f64)> = params.iter().map(|(n, v)| (n.clone(), v[0])).collect();
    let mut evaluated: Vec<(SweepPoint, f64)> = Vec::new();

    for (slot, (_, values)) in params.iter().enumerate() {
        let candidates: Vec<Vec<(String, f64)>> = values
            .iter()
            .map(|&v| {
                let mut p = current.clone();
                p[slot].1 = v;
                p
            })
            .collect();
        let outcomes = par::map_slice(&candidates, |p| -> Result<(SweepPoint, f64)> {
            let result = run(grid, scores, &config_at(base, p)?)?;
            let score = objective(&result);
            Ok((SweepPoint { params: p.clone(), result }, score))
        });
        let mut best: Option<(usize, f64)> = None;
        for (i, outcome) in outcomes.into_iter().enumerate() {
            let (point, score) = outcome?;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
            if !evaluated.iter().any(|(e, _)| e.params == point.params) {
                evaluated.push((point, score));
            }
        }
        let (i, _) = best.expect("grid values are non-empty");
        current = candidates[i].clone();
    }

    evaluated.sort_by(|(a, _), (b, _)| {
        a.params
            .iter()
            .zip(&b.params)
            .map(|(x, y)| x.1.total_cmp(&y.1))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(GreedySweep { evaluated, best: current })
}
