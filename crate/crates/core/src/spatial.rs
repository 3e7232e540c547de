//! Per-frame salient-token selection.
//!
//! All selectors rank candidates by score, highest first, and break ties by
//! the lower patch index. The frame-level functions take an explicit candidate
//! list so the pipeline can run them over the survivors of temporal pruning.

use std::cmp::Ordering;

use crate::error::{config, shape, Result};
use crate::model::{AttentionScores, MergeRecord, SinkScores, TokenGrid, TokenId, TokenSelection};
use crate::par;
use crate::vecops::{ceil_fraction, cosine, squared_distance};

/// Anything that provides a `T x n_v` table of ranking scores.
pub trait FrameScores: Sync {
    fn frames(&self) -> usize;
    fn patches(&self) -> usize;
    fn frame(&self, frame: usize) -> &[f64];
}

impl FrameScores for AttentionScores {
    fn frames(&self) -> usize {
        AttentionScores::frames(self)
    }
    fn patches(&self) -> usize {
        AttentionScores::patches(self)
    }
    fn frame(&self, frame: usize) -> &[f64] {
        AttentionScores::frame(self, frame)
    }
}

/// Where an [`AdjustedScores`] table came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    SinkAware { mu_s_bits: u64 },
    Redistributed,
    Density,
}

/// Ranking scores after an adjustment; entries may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedScores {
    frames: usize,
    patches: usize,
    data: Vec<f64>,
    pub provenance: Provenance,
}

impl AdjustedScores {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, frame: usize, patch: usize) -> f64 {
        self.data[frame * self.patches + patch]
    }
}

impl FrameScores for AdjustedScores {
    fn frames(&self) -> usize {
        self.frames
    }
    fn patches(&self) -> usize {
        self.patches
    }
    fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.patches..(frame + 1) * self.patches]
    }
}

/// Subtracts `mu_s * s_i` from every frame's score at position `i`.
pub fn adjust_stsp(scores: &AttentionScores, sink: &SinkScores, mu_s: f64) -> Result<AdjustedScores> {
    if sink.patches() != scores.patches() {
        return Err(shape(format!(
            "sink scores cover {} patches, attention covers {}",
            sink.patches(),
            scores.patches()
        )));
    }
    if !(mu_s >= 0.0 && mu_s.is_finite()) {
        return Err(config(format!("mu_s must be finite and >= 0, got {mu_s}")));
    }
    let n = scores.patches();
    let data = scores
        .data()
        .iter()
        .enumerate()
        .map(|(flat, a)| a - mu_s * sink.normalized[flat % n])
        .collect();
    Ok(AdjustedScores {
        frames: scores.frames(),
        patches: n,
        data,
        provenance: Provenance::SinkAware { mu_s_bits: mu_s.to_bits() },
    })
}

/// Score-descending, index-ascending order.
fn rank_order(row: &[f64], a: usize, b: usize) -> Ordering {
    row[b].total_cmp(&row[a]).then(a.cmp(&b))
}

/// Top `quota` of `candidates` under `row`, returned in ascending patch order.
pub fn top_candidates(row: &[f64], candidates: &[usize], quota: usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| rank_order(row, a, b));
    order.truncate(quota);
    order.sort_unstable();
    order
}

fn selection_from_frames(frames: usize, patches: usize, budget: usize, per_frame: Vec<Vec<usize>>) -> TokenSelection {
    let kept = per_frame
        .into_iter()
        .enumerate()
        .flat_map(|(t, patches)| patches.into_iter().map(move |i| TokenId::new(t, i)))
        .collect();
    TokenSelection { frames, patches, budget, kept, merges: Vec::new(), merged_embeddings: None }
}

/// Keeps the `k_per_frame` highest-scoring patches in every frame.
pub fn select_topk<S: FrameScores>(scores: &S, k_per_frame: usize) -> Result<TokenSelection> {
    let n = scores.patches();
    if k_per_frame == 0 || k_per_frame > n {
        return Err(config(format!("k_per_frame must be in [1, {n}], got {k_per_frame}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let per_frame = par::map_indexed(scores.frames(), |t| top_candidates(scores.frame(t), &all, k_per_frame));
    Ok(selection_from_frames(scores.frames(), n, scores.frames() * k_per_frame, per_frame))
}

/// Number of top-attention tokens the naive strategies act on: `ceil(k_pct * n)`, at least 1.
pub fn top_share(k_pct: f64, n: usize) -> usize {
    ceil_fraction(k_pct, n).max(1).min(n)
}

fn check_k_pct(k_pct: f64) -> Result<()> {
    if k_pct > 0.0 && k_pct < 0.5 {
        Ok(())
    } else {
        Err(config(format!("k_pct must be in (0, 0.5), got {k_pct}")))
    }
}

/// Candidates left after discarding the top `ceil(k_pct * |candidates|)` by attention.
pub fn hard_prune_frame(row: &[f64], candidates: &[usize], k_pct: f64) -> Vec<usize> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| rank_order(row, a, b));
    let mut rest = order.split_off(top_share(k_pct, candidates.len()));
    rest.sort_unstable();
    rest
}

/// Discards each frame's top `ceil(k_pct * n_v)` patches, then keeps the top
/// `k_per_frame` of the remainder.
pub fn hard_prune_topk(scores: &AttentionScores, k_pct: f64, k_per_frame: usize) -> Result<TokenSelection> {
    check_k_pct(k_pct)?;
    let n = scores.patches();
    let remaining = n - top_share(k_pct, n);
    if k_per_frame == 0 || k_per_frame > remaining {
        return Err(config(format!(
            "k_per_frame {k_per_frame} does not fit the {remaining} tokens left after hard pruning"
        )));
    }
    let all: Vec<usize> = (0..n).collect();
    let per_frame = par::map_indexed(scores.frames(), |t| {
        let row = scores.frame(t);
        top_candidates(row, &hard_prune_frame(row, &all, k_pct), k_per_frame)
    });
    Ok(selection_from_frames(scores.frames(), n, scores.frames() * k_per_frame, per_frame))
}

/// Zeroes the top `ceil(k_pct * |candidates|)` candidates and hands their mass to
/// the other candidates in proportion to their scores. Entries outside
/// `candidates` are copied unchanged. Returns `true` when the survivors had no
/// mass and the uniform fallback was used.
pub fn redistribute_frame(row: &[f64], candidates: &[usize], k_pct: f64) -> (Vec<f64>, bool) {
    let mut out = row.to_vec();
    if candidates.is_empty() {
        return (out, false);
    }
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| rank_order(row, a, b));
    let rest = order.split_off(top_share(k_pct, candidates.len()));
    let removed: f64 = order.iter().map(|&i| row[i]).sum();
    let remaining: f64 = rest.iter().map(|&i| row[i]).sum();
    for &i in &order {
        out[i] = 0.0;
    }
    if rest.is_empty() {
        return (out, false);
    }
    if remaining > 0.0 {
        let scale = (remaining + removed) / remaining;
        for &i in &rest {
            out[i] = row[i] * scale;
        }
        (out, false)
    } else {
        let share = removed / rest.len() as f64;
        for &i in &rest {
            out[i] = share;
        }
        (out, true)
    }
}

/// Result of [`attention_redistribution`].
#[derive(Debug, Clone, PartialEq)]
pub struct Redistributed {
    pub scores: AttentionScores,
    /// Frames where the survivors held no mass and received it uniformly.
    pub uniform_fallback_frames: Vec<usize>,
}

/// Moves each frame's top `ceil(k_pct * n_v)` attention mass onto the other patches.
pub fn attention_redistribution(scores: &AttentionScores, k_pct: f64) -> Result<Redistributed> {
    check_k_pct(k_pct)?;
    let n = scores.patches();
    let all: Vec<usize> = (0..n).collect();
    let rows = par::map_indexed(scores.frames(), |t| redistribute_frame(scores.frame(t), &all, k_pct));
    let uniform_fallback_frames = rows.iter().enumerate().filter(|(_, (_, fb))| *fb).map(|(t, _)| t).collect();
    let data = rows.into_iter().flat_map(|(row, _)| row).collect();
    Ok(Redistributed { scores: AttentionScores::new(scores.frames(), n, data)?, uniform_fallback_frames })
}

/// Density-peak scores (`rho * delta`) for the candidate tokens of one frame.
///
/// `rho = exp(-mean squared distance to the knn nearest candidates)`;
/// `delta` is the distance to the nearest candidate ranked denser (density
/// descending, index ascending), or the largest distance for the top-ranked one.
/// Non-candidates score `-inf`.
pub fn dpc_frame_scores(grid: &TokenGrid, frame: usize, candidates: &[usize], knn: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; grid.patches()];
    let m = candidates.len();
    if m == 0 {
        return out;
    }
    let k = knn.min(m - 1);
    let dist2: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&a| {
            candidates
                .iter()
                .map(|&b| squared_distance(grid.token(frame, a), grid.token(frame, b)))
                .collect()
        })
        .collect();

    let density: Vec<f64> = (0..m)
        .map(|a| {
            if k == 0 {
                return 1.0;
            }
            let mut others: Vec<f64> = (0..m).filter(|&b| b != a).map(|b| dist2[a][b]).collect();
            others.sort_by(f64::total_cmp);
            let mean = others[..k].iter().sum::<f64>() / k as f64;
            (-mean).exp()
        })
        .collect();

    let denser = |b: usize, a: usize| density[b] > density[a] || (density[b] == density[a] && b < a);
    for a in 0..m {
        let mut nearest = f64::INFINITY;
        let mut farthest = 0.0f64;
        for b in (0..m).filter(|&b| b != a) {
            let d = dist2[a][b];
            farthest = farthest.max(d);
            if denser(b, a) {
                nearest = nearest.min(d);
            }
        }
        let delta = if nearest.is_finite() { nearest.sqrt() } else { farthest.sqrt() };
        out[candidates[a]] = density[a] * delta;
    }
    out
}

/// Feature-based selection: keeps the `k_per_frame` tokens with the largest
/// density-peak score per frame.
pub fn dpc_knn_select(grid: &TokenGrid, k_per_frame: usize, knn: usize) -> Result<TokenSelection> {
    let n = grid.patches();
    if knn == 0 || knn >= n {
        return Err(config(format!("knn must be in [1, {}), got {knn}", n)));
    }
    if k_per_frame == 0 || k_per_frame > n {
        return Err(config(format!("k_per_frame must be in [1, {n}], got {k_per_frame}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let per_frame = par::map_indexed(grid.frames(), |t| {
        let row = dpc_frame_scores(grid, t, &all, knn);
        top_candidates(&row, &all, k_per_frame)
    });
    Ok(selection_from_frames(grid.frames(), n, grid.frames() * k_per_frame, per_frame))
}

/// Folds pruned tokens into their most cosine-similar kept token of the same
/// frame; each kept embedding becomes the mean of itself and its sources.
///
/// Frames that keep no token leave their pruned tokens unmerged.
/// `candidates` restricts which non-kept tokens count as pruned (the pipeline
/// passes the survivors of temporal pruning); `None` means every non-kept token.
pub fn merge_pruned_among(
    grid: &TokenGrid,
    sel: &TokenSelection,
    candidates: Option<&[bool]>,
) -> Result<TokenSelection> {
    let n = grid.patches();
    if sel.frames != grid.frames() || sel.patches != n {
        return Err(shape("selection does not match token grid"));
    }
    let mask = sel.mask();
    let d = grid.dim();

    let frames = par::map_indexed(grid.frames(), |t| -> Result<(Vec<MergeRecord>, Vec<f64>)> {
        let kept: Vec<usize> = sel.kept_in_frame(t).collect();
        let pruned: Vec<usize> = (0..n)
            .filter(|&i| !mask[t * n + i] && candidates.is_none_or(|c| c[t * n + i]))
            .collect();
        // nothing to merge into: the frame's pruned tokens are simply dropped
        if kept.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let mut sources: Vec<Vec<usize>> = vec![Vec::new(); kept.len()];
        for &p in &pruned {
            let x = grid.token(t, p);
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for (slot, &k) in kept.iter().enumerate() {
                let sim = cosine(x, grid.token(t, k));
                if sim > best_sim {
                    best_sim = sim;
                    best = slot;
                }
            }
            sources[best].push(p);
        }
        let mut embeddings = Vec::with_capacity(kept.len() * d);
        let mut records = Vec::new();
        for (slot, &k) in kept.iter().enumerate() {
            let mut acc = grid.token(t, k).to_vec();
            for &s in &sources[slot] {
                for (a, v) in acc.iter_mut().zip(grid.token(t, s)) {
                    *a += v;
                }
            }
            let count = (1 + sources[slot].len()) as f64;
            acc.iter_mut().for_each(|a| *a /= count);
            embeddings.extend(acc);
            if !sources[slot].is_empty() {
                records.push(MergeRecord {
                    target: TokenId::new(t, k),
                    sources: sources[slot].iter().map(|&s| TokenId::new(t, s)).collect(),
                });
            }
        }
        Ok((records, embeddings))
    });

    let mut out = sel.clone();
    let mut embeddings = Vec::with_capacity(sel.kept.len() * d);
    out.merges.clear();
    for frame in frames {
        let (records, emb) = frame?;
        out.merges.extend(records);
        embeddings.extend(emb);
    }
    out.merged_embeddings = Some(embeddings);
    Ok(out)
}

pub fn merge_pruned(grid: &TokenGrid, sel: &TokenSelection) -> Result<TokenSelection> {
    merge_pruned_among(grid, sel, None)
}
