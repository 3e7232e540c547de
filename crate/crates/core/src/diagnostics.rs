//! Analyses over pruning results: how often each patch position gets picked,
//! which positions behave like sinks, how many sink occurrences survive a
//! strategy, attention heatmaps, and the prefill FLOPs model.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::model::{AttentionScores, TokenSelection};
use crate::pipeline::PruneResult;
use crate::vecops::ceil_fraction;

/// Share of positions treated as sinks when none is given.
pub const DEFAULT_SINK_TOP_PCT: f64 = 0.10;

/// How many frames kept each patch position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyProfile {
    pub frames: usize,
    pub counts: Vec<usize>,
    pub total_selected: usize,
}

pub fn frequency_of(sel: &TokenSelection) -> FrequencyProfile {
    let mut counts = vec![0; sel.patches];
    for id in &sel.kept {
        counts[id.patch] += 1;
    }
    FrequencyProfile { frames: sel.frames, counts, total_selected: sel.kept.len() }
}

pub fn selection_frequency(result: &PruneResult) -> FrequencyProfile {
    frequency_of(&result.selection)
}

/// The `ceil(top_pct * n_v)` most frequently kept positions, ascending.
/// Ties go to the lower patch index.
pub fn identify_sink_set(profile: &FrequencyProfile, top_pct: f64) -> Result<Vec<usize>> {
    if !(top_pct > 0.0 && top_pct <= 1.0) {
        return Err(invalid(format!("top_pct must be in (0, 1], got {top_pct}")));
    }
    let n = profile.counts.len();
    let take = ceil_fraction(top_pct, n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| profile.counts[b].cmp(&profile.counts[a]).then(a.cmp(&b)));
    order.truncate(take);
    order.sort_unstable();
    Ok(order)
}

/// Kept occurrences of a sink set under two strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalReport {
    pub sink_set: Vec<usize>,
    pub kept_a: usize,
    pub kept_b: usize,
    /// `kept_a - kept_b`.
    pub delta: i64,
    /// `100 * (kept_a - kept_b) / kept_a`, one decimal place; 0 when `kept_a` is 0.
    pub reduction_pct: f64,
}

pub fn occurrences(sel: &TokenSelection, sink_set: &[usize]) -> usize {
    sel.kept.iter().filter(|id| sink_set.binary_search(&id.patch).is_ok()).count()
}

pub fn reduction_pct(before: usize, after: usize) -> f64 {
    if before == 0 {
        return 0.0;
    }
    let pct = 100.0 * (before as f64 - after as f64) / before as f64;
    (pct * 10.0).round() / 10.0
}

/// Compares how many occurrences of `sink_set` patches each result keeps.
pub fn sink_survival(a: &PruneResult, b: &PruneResult, sink_set: &[usize]) -> Result<SurvivalReport> {
    if a.patches != b.patches || a.frames != b.frames {
        return Err(shape(format!(
            "results cover different videos: {}x{} vs {}x{}",
            a.frames, a.patches, b.frames, b.patches
        )));
    }
    let mut set = sink_set.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.last().is_some_and(|&p| p >= a.patches) {
        return Err(invalid("sink set refers to a patch outside the frame"));
    }
    let kept_a = occurrences(&a.selection, &set);
    let kept_b = occurrences(&b.selection, &set);
    Ok(SurvivalReport {
        sink_set: set,
        kept_a,
        kept_b,
        delta: kept_a as i64 - kept_b as i64,
        reduction_pct: reduction_pct(kept_a, kept_b),
    })
}

/// LLM dimensions for the prefill cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsModel {
    pub layers: u64,
    pub hidden: u64,
    pub ffn: u64,
    pub text_tokens: u64,
}

impl FlopsModel {
    pub fn new(layers: u64, hidden: u64, ffn: u64, text_tokens: u64) -> Result<Self> {
        if layers == 0 || hidden == 0 || ffn == 0 {
            return Err(invalid("layers, hidden and ffn dimensions must be >= 1"));
        }
        Ok(Self { layers, hidden, ffn, text_tokens })
    }
}

/// Prefill FLOPs split by term, each already multiplied by the layer count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsEstimate {
    /// `2 n^2 d`
    pub attention: u128,
    /// `2 n d m`
    pub ffn: u128,
    /// `4 n d^2`
    pub projection: u128,
    pub sequence_len: u128,
    pub total: u128,
}

/// `L * (4 n d^2 + 2 n^2 d + 2 n d m)` with `n = visual_tokens + n_q`, exact.
pub fn estimate_flops(model: &FlopsModel, visual_tokens: u64) -> Result<FlopsEstimate> {
    let overflow = || invalid("FLOPs estimate exceeds 128-bit range");
    let n = visual_tokens as u128 + model.text_tokens as u128;
    let (l, d, m) = (model.layers as u128, model.hidden as u128, model.ffn as u128);
    let term = |parts: &[u128]| parts.iter().try_fold(1u128, |acc, &p| acc.checked_mul(p)).ok_or_else(overflow);
    let projection = term(&[l, 4, n, d, d])?;
    let attention = term(&[l, 2, n, n, d])?;
    let ffn = term(&[l, 2, n, d, m])?;
    let total = projection
        .checked_add(attention)
        .and_then(|s| s.checked_add(ffn))
        .ok_or_else(overflow)?;
    Ok(FlopsEstimate { sequence_len: n, projection, attention, ffn, total })
}

/// Per-frame `grid_h x grid_w` score matrices as CSV.
///
/// Header `frame,row,c0,...`; one line per frame row; values use the shortest
/// decimal form that parses back to the same `f64`.
pub fn export_heatmap(scores: &AttentionScores, grid: Option<(usize, usize)>) -> Result<String> {
    let (grid_w, grid_h) = grid.ok_or_else(|| invalid("heatmap export needs grid dimensions"))?;
    if grid_w * grid_h != scores.patches() {
        return Err(shape(format!("grid {grid_w}x{grid_h} does not cover {} patches", scores.patches())));
    }
    let mut out = String::from("frame,row");
    for c in 0..grid_w {
        out.push_str(&format!(",c{c}"));
    }
    out.push('\n');
    for t in 0..scores.frames() {
        for (r, cells) in scores.frame(t).chunks(grid_w).enumerate() {
            out.push_str(&format!("{t},{r}"));
            for v in cells {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Parses [`export_heatmap`] output back into `(grid_w, grid_h, scores)`.
pub fn parse_heatmap(csv: &str) -> Result<(usize, usize, AttentionScores)> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| invalid("empty heatmap"))?;
    let grid_w = header.split(',').count().saturating_sub(2);
    if grid_w == 0 {
        return Err(invalid("heatmap header has no columns"));
    }
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let mut fields = line.split(',');
        let mut index = || -> Result<usize> {
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| invalid(format!("bad heatmap line `{line}`")))
        };
        let (t, r) = (index()?, index()?);
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| invalid(format!("bad value `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != grid_w {
            return Err(invalid(format!("heatmap line `{line}` has {} values", values.len())));
        }
        rows.push((t, r, values));
    }
    let frames = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let grid_h = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    if rows.len() != frames * grid_h {
        return Err(invalid("heatmap rows are incomplete"));
    }
    let mut data = vec![0.0; frames * grid_h * grid_w];
    for (t, r, values) in rows {
        let start = (t * grid_h + r) * grid_w;
        data[start..start + grid_w].copy_from_slice(&values);
    }
    Ok((grid_w, grid_h, AttentionScores::new(frames, grid_w * grid_h, data)?))
}
