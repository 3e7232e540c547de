//! Inter-frame redundancy pruning.
//!
//! Frames are cut into consecutive clips of `clip_len`. For every patch the
//! cosine similarities of its adjacent-frame pairs inside a clip are multiplied;
//! when the product clears `tau`, every occurrence of the patch in the clip
//! except the first is dropped. A clip in which any pair similarity is
//! non-positive is never pruned at that patch.
//!
//! The sink-aware variant adds `mu_t * s_i` before the threshold test, pushing
//! persistent-attention positions over the line.

use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Result};
use crate::model::{SinkScores, TokenGrid, TokenId};
use crate::par;
use crate::vecops::cosine;

/// Aggregated similarity of one patch within one clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipSimilarity {
    pub clip: usize,
    pub patch: usize,
    pub similarity: f64,
}

/// Tokens removed on temporal grounds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TemporalPruneSet {
    /// Sorted ascending by `(frame, patch)`.
    pub pruned: Vec<TokenId>,
    /// One entry per (clip, patch) for clips spanning at least two frames,
    /// ordered by clip then patch.
    pub per_clip_sims: Vec<ClipSimilarity>,
}

impl TemporalPruneSet {
    pub fn len(&self) -> usize {
        self.pruned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pruned.is_empty()
    }

    pub fn mask(&self, frames: usize, patches: usize) -> Vec<bool> {
        let mut mask = vec![false; frames * patches];
        for id in &self.pruned {
            mask[id.flat(patches)] = true;
        }
        mask
    }
}

/// Where the sink bonus enters the threshold test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkBonus {
    /// `prod(sim) + mu_t * s_i > tau`
    Aggregate,
    /// `prod(sim + mu_t * s_i) > tau`
    PerPair,
}

/// Cosine similarity of patch `patch` between frames `frame` and `frame + 1`.
pub fn adjacent_similarity(grid: &TokenGrid, frame: usize, patch: usize) -> f64 {
    cosine(grid.token(frame, patch), grid.token(frame + 1, patch))
}

/// `[start, end)` frame ranges of consecutive clips.
pub fn clip_bounds(frames: usize, clip_len: usize) -> Vec<(usize, usize)> {
    (0..frames).step_by(clip_len.max(1)).map(|s| (s, (s + clip_len).min(frames))).collect()
}

fn check_params(tau: f64, clip_len: usize) -> Result<()> {
    if clip_len < 2 {
        return Err(config(format!("clip_len must be >= 2, got {clip_len}")));
    }
    if !tau.is_finite() {
        return Err(config("tau must be finite"));
    }
    Ok(())
}

fn prune_impl(
    grid: &TokenGrid,
    bonus: Option<(&[f64], f64, SinkBonus)>,
    tau: f64,
    clip_len: usize,
) -> TemporalPruneSet {
    let n = grid.patches();
    let clips = clip_bounds(grid.frames(), clip_len);

    // per clip: (sims for each patch, patches pruned)
    let per_clip = par::map_slice(&clips, |&(start, end)| {
        let mut sims = Vec::with_capacity(n);
        let mut pruned = Vec::new();
        if end - start < 2 {
            return (sims, pruned);
        }
        for i in 0..n {
            let pairs: Vec<f64> = (start..end - 1).map(|t| adjacent_similarity(grid, t, i)).collect();
            let eligible = pairs.iter().all(|&s| s > 0.0);
            let aggregated: f64 = pairs.iter().product();
            sims.push(aggregated);
            let test = match bonus {
                None => aggregated,
                Some((sink, mu_t, SinkBonus::Aggregate)) => aggregated + mu_t * sink[i],
                Some((sink, mu_t, SinkBonus::PerPair)) => pairs.iter().map(|s| s + mu_t * sink[i]).product(),
            };
            if eligible && test > tau {
                pruned.push(i);
            }
        }
        (sims, pruned)
    });

    let mut out = TemporalPruneSet::default();
    for (clip, ((start, end), (sims, pruned))) in clips.iter().zip(per_clip).enumerate() {
        out.per_clip_sims.extend(
            sims.into_iter().enumerate().map(|(patch, similarity)| ClipSimilarity { clip, patch, similarity }),
        );
        for t in start + 1..*end {
            out.pruned.extend(pruned.iter().map(|&i| TokenId::new(t, i)));
        }
    }
    out.pruned.sort_unstable();
    out
}

/// Similarity-threshold pruning with per-clip product aggregation.
pub fn clip_prune(grid: &TokenGrid, tau: f64, clip_len: usize) -> Result<TemporalPruneSet> {
    check_params(tau, clip_len)?;
    Ok(prune_impl(grid, None, tau, clip_len))
}

/// Sink-aware pruning: the bonus is added to the clip aggregate.
pub fn clip_prune_sttp(
    grid: &TokenGrid,
    sink: &SinkScores,
    tau: f64,
    mu_t: f64,
    clip_len: usize,
) -> Result<TemporalPruneSet> {
    clip_prune_sttp_with(grid, sink, tau, mu_t, clip_len, SinkBonus::Aggregate)
}

pub fn clip_prune_sttp_with(
    grid: &TokenGrid,
    sink: &SinkScores,
    tau: f64,
    mu_t: f64,
    clip_len: usize,
    placement: SinkBonus,
) -> Result<TemporalPruneSet> {
    check_params(tau, clip_len)?;
    if !(mu_t >= 0.0 && mu_t.is_finite()) {
        return Err(config(format!("mu_t must be finite and >= 0, got {mu_t}")));
    }
    if sink.patches() != grid.patches() {
        return Err(shape(format!(
            "sink scores cover {} patches, tokens have {}",
            sink.patches(),
            grid.patches()
        )));
    }
    Ok(prune_impl(grid, Some((&sink.normalized, mu_t, placement)), tau, clip_len))
}

/// Copy of `grid` where each kept clip representative holds the mean of its
/// pruned run (the representative plus every pruned later occurrence).
pub fn merge_runs(grid: &TokenGrid, pruned: &TemporalPruneSet, clip_len: usize) -> TokenGrid {
    let (frames, n, d) = (grid.frames(), grid.patches(), grid.dim());
    let mask = pruned.mask(frames, n);
    let mut data = grid.data().to_vec();
    for (start, end) in clip_bounds(frames, clip_len) {
        for i in 0..n {
            let run: Vec<usize> = (start + 1..end).filter(|&t| mask[t * n + i]).collect();
            if run.is_empty() {
                continue;
            }
            let mut acc = grid.token(start, i).to_vec();
            for &t in &run {
                for (a, v) in acc.iter_mut().zip(grid.token(t, i)) {
                    *a += v;
                }
            }
            let count = (run.len() + 1) as f64;
            let base = (start * n + i) * d;
            for (slot, a) in data[base..base + d].iter_mut().zip(acc) {
                *slot = a / count;
            }
        }
    }
    let merged = TokenGrid::new(frames, n, d, data).expect("shape preserved");
    match grid.grid() {
        Some((w, h)) => merged.with_grid(w, h).expect("grid preserved"),
        None => merged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_from_frames(frames: &[Vec<[f64; 2]>]) -> TokenGrid {
        let n = frames[0].len();
        let data = frames.iter().flat_map(|f| f.iter().flatten().copied()).collect();
        TokenGrid::new(frames.len(), n, 2, data).unwrap()
    }

    /// Unit vector at `angle` radians.
    fn unit(angle: f64) -> [f64; 2] {
        [angle.cos(), angle.sin()]
    }

    #[test]
    fn adjacent_similarity_cases() {
        let g = grid_from_frames(&[
            vec![[1.0, 2.0], [1.0, 0.0], [1.0, -1.0]],
            vec![[1.0, 2.0], [0.0, 1.0], [-1.0, 1.0]],
        ]);
        assert!((adjacent_similarity(&g, 0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(adjacent_similarity(&g, 0, 1), 0.0);
        assert!((adjacent_similarity(&g, 0, 2) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_frames_keep_first_only() {
        let f = vec![[1.0, 0.5], [0.2, 0.9]];
        let g = grid_from_frames(&[f.clone(), f.clone(), f]);
        let p = clip_prune(&g, 0.9, 3).unwrap();
        let expect: Vec<TokenId> = [(1, 0), (1, 1), (2, 0), (2, 1)].iter().map(|&(t, i)| TokenId::new(t, i)).collect();
        assert_eq!(p.pruned, expect);
        assert!(p.per_clip_sims.iter().all(|c| (c.similarity - 1.0).abs() < 1e-12));
    }

    #[test]
    fn product_threshold_by_hand() {
        // patch 0: sims 0.95, 0.96 -> 0.912; patch 1: 0.95, 0.94 -> 0.893
        let a0 = 0.0;
        let a1 = 0.95f64.acos();
        let a2 = a1 + 0.96f64.acos();
        let b1 = 0.95f64.acos();
        let b2 = b1 + 0.94f64.acos();
        let g = grid_from_frames(&[
            vec![unit(a0), unit(0.0)],
            vec![unit(a1), unit(b1)],
            vec![unit(a2), unit(b2)],
        ]);
        let p = clip_prune(&g, 0.9, 3).unwrap();
        assert!((p.per_clip_sims[0].similarity - 0.912).abs() < 1e-9);
        assert!((p.per_clip_sims[1].similarity - 0.893).abs() < 1e-9);
        assert_eq!(p.pruned, vec![TokenId::new(1, 0), TokenId::new(2, 0)]);
    }

    #[test]
    fn orthogonal_change_blocks_pruning() {
        let g = grid_from_frames(&[vec![unit(0.0)], vec![unit(std::f64::consts::FRAC_PI_2)], vec![unit(std::f64::consts::FRAC_PI_2)]]);
        assert!(clip_prune(&g, 0.01, 3).unwrap().is_empty());
        // two sign flips would give a positive product without the clamp
        let g = grid_from_frames(&[vec![[1.0, 0.0]], vec![[-1.0, 0.0]], vec![[1.0, 0.0]]]);
        let p = clip_prune(&g, 0.5, 3).unwrap();
        assert!(p.is_empty());
        assert!((p.per_clip_sims[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_frame_tail_clip_prunes_nothing() {
        let f = vec![[1.0, 0.0]];
        let g = grid_from_frames(&[f.clone(), f.clone(), f]);
        let p = clip_prune(&g, 0.5, 2).unwrap();
        assert_eq!(p.pruned, vec![TokenId::new(1, 0)]);
        assert_eq!(p.per_clip_sims.len(), 1);
    }

    #[test]
    fn sttp_hand_example() {
        // aggregated similarity 0.85 over a two-frame clip
        let g = grid_from_frames(&[vec![unit(0.0)], vec![unit(0.85f64.acos())]]);
        let sink = SinkScores { raw: vec![1.0], normalized: vec![1.0], w: 1.1 };
        assert!(clip_prune(&g, 0.9, 2).unwrap().is_empty());
        let p = clip_prune_sttp(&g, &sink, 0.9, 0.07, 2).unwrap();
        assert_eq!(p.pruned, vec![TokenId::new(1, 0)]);
        assert_eq!(clip_prune_sttp(&g, &sink, 0.9, 0.0, 2).unwrap(), clip_prune(&g, 0.9, 2).unwrap());
        let zero = SinkScores { raw: vec![1.0], normalized: vec![0.0], w: 1.1 };
        assert!(clip_prune_sttp(&g, &zero, 0.9, 0.07, 2).unwrap().is_empty());
    }

    #[test]
    fn merge_runs_averages_into_representative() {
        let g = grid_from_frames(&[vec![[1.0, 0.0]], vec![[1.0, 0.1]], vec![[1.0, 0.2]]]);
        let p = clip_prune(&g, 0.9, 3).unwrap();
        assert_eq!(p.len(), 2);
        let merged = merge_runs(&g, &p, 3);
        assert!((merged.token(0, 0)[1] - 0.1).abs() < 1e-12);
        assert_eq!(merged.token(2, 0), g.token(2, 0));
    }

    fn video_strategy() -> impl Strategy<Value = (TokenGrid, Vec<f64>)> {
        (2usize..9, 1usize..6, 1usize..4).prop_flat_map(|(t, n, d)| {
            (
                proptest::collection::vec(-1.0f64..1.0, n * d),
                proptest::collection::vec(-1.0f64..1.0, t * n * d),
                0.0f64..0.6,
                proptest::collection::vec(0.0f64..1.0, n),
            )
                .prop_map(move |(base, noise, drift, sink)| {
                    let data = (0..t * n * d).map(|k| base[k % (n * d)] + drift * noise[k]).collect();
                    (TokenGrid::new(t, n, d, data).unwrap(), sink)
                })
        })
    }

    proptest! {
        #[test]
        fn sttp_is_monotone_in_mu_t((g, s) in video_strategy(), clip_len in 2usize..5, tau in 0.3f64..0.99) {
            let sink = SinkScores { raw: s.clone(), normalized: s, w: 1.0 };
            let mut prev = clip_prune(&g, tau, clip_len).unwrap().pruned;
            for mu in [0.0, 0.02, 0.05, 0.1, 0.3] {
                for placement in [SinkBonus::Aggregate, SinkBonus::PerPair] {
                    let cur = clip_prune_sttp_with(&g, &sink, tau, mu, clip_len, placement).unwrap().pruned;
                    prop_assert!(prev.iter().all(|id| cur.binary_search(id).is_ok()));
                }
                prev = clip_prune_sttp(&g, &sink, tau, mu, clip_len).unwrap().pruned;
            }
        }

        #[test]
        fn tau_is_antitone((g, _s) in video_strategy(), clip_len in 2usize..5) {
            let mut prev: Option<Vec<TokenId>> = None;
            for tau in [0.2, 0.5, 0.8, 0.95] {
                let cur = clip_prune(&g, tau, clip_len).unwrap().pruned;
                if let Some(p) = &prev {
                    prop_assert!(cur.iter().all(|id| p.binary_search(id).is_ok()));
                }
                prev = Some(cur);
            }
        }

        #[test]
        fn first_occurrence_survives((g, _s) in video_strategy(), clip_len in 2usize..5, tau in 0.0f64..0.99) {
            let p = clip_prune(&g, tau, clip_len).unwrap();
            for (start, _) in clip_bounds(g.frames(), clip_len) {
                prop_assert!(p.pruned.iter().all(|id| id.frame != start));
            }
        }
    }
}
