//! Shared domain types.
//!
//! Index convention used everywhere: frame `t` in `[0, T)`, patch `i` in
//! `[0, n_v)`, flattened id `t * n_v + i`. All tensors are stored row-major in
//! a flat `Vec<f64>`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};

/// Tolerance for "frame scores sum to one".
pub const FRAME_SUM_TOL: f64 = 1e-6;

/// A `(frame, patch)` pair. Serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct TokenId {
    pub frame: usize,
    pub patch: usize,
}

impl TokenId {
    pub fn new(frame: usize, patch: usize) -> Self {
        Self { frame, patch }
    }

    pub fn flat(self, patches: usize) -> usize {
        self.frame * patches + self.patch
    }
}

impl From<[usize; 2]> for TokenId {
    fn from([frame, patch]: [usize; 2]) -> Self {
        Self { frame, patch }
    }
}

impl From<TokenId> for [usize; 2] {
    fn from(id: TokenId) -> Self {
        [id.frame, id.patch]
    }
}

/// Per-frame visual token embeddings, `T x n_v x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    frames: usize,
    patches: usize,
    dim: usize,
    data: Vec<f64>,
    grid: Option<(usize, usize)>,
}

impl TokenGrid {
    /// Checks shape only; content (finiteness) is reported by [`validate`].
    pub fn new(frames: usize, patches: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || patches == 0 || dim == 0 {
            return Err(shape(format!(
                "token grid dimensions must be >= 1, got T={frames} n_v={patches} d={dim}"
            )));
        }
        if data.len() != frames * patches * dim {
            return Err(shape(format!(
                "token grid expects {} values for {frames}x{patches}x{dim}, got {}",
                frames * patches * dim,
                data.len()
            )));
        }
        Ok(Self { frames, patches, dim, data, grid: None })
    }

    /// Attaches spatial layout metadata (`grid_w * grid_h` must equal `n_v`).
    pub fn with_grid(mut self, grid_w: usize, grid_h: usize) -> Result<Self> {
        if grid_w * grid_h != self.patches {
            return Err(shape(format!(
                "grid {grid_w}x{grid_h} does not cover {} patches",
                self.patches
            )));
        }
        self.grid = Some((grid_w, grid_h));
        Ok(self)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_tokens(&self) -> usize {
        self.frames * self.patches
    }

    /// `(grid_w, grid_h)` when known.
    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn token(&self, frame: usize, patch: usize) -> &[f64] {
        let start = (frame * self.patches + patch) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        let width = self.patches * self.dim;
        &self.data[frame * width..(frame + 1) * width]
    }
}

/// Query and key projections of the visual tokens, each `H x T x n_v x d_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryKey {
    heads: usize,
    frames: usize,
    patches: usize,
    head_dim: usize,
    q: Vec<f64>,
    k: Vec<f64>,
}

impl QueryKey {
    pub fn new(
        heads: usize,
        frames: usize,
        patches: usize,
        head_dim: usize,
        q: Vec<f64>,
        k: Vec<f64>,
    ) -> Result<Self> {
        if heads == 0 || frames == 0 || patches == 0 || head_dim == 0 {
            return Err(shape("query/key dimensions must all be >= 1"));
        }
        let expected = heads * frames * patches * head_dim;
        if q.len() != expected || k.len() != expected {
            return Err(shape(format!(
                "query/key expect {expected} values each for \
                 {heads}x{frames}x{patches}x{head_dim}, got q={} k={}",
                q.len(),
                k.len()
            )));
        }
        if let Some(pos) = q.iter().chain(k.iter()).position(|v| !v.is_finite()) {
            return Err(crate::error::invalid(format!(
                "non-finite query/key value at flat offset {pos}"
            )));
        }
        Ok(Self { heads, frames, patches, head_dim, q, k })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    fn offset(&self, head: usize, frame: usize, patch: usize) -> usize {
        ((head * self.frames + frame) * self.patches + patch) * self.head_dim
    }

    pub fn query(&self, head: usize, frame: usize, patch: usize) -> &[f64] {
        let o = self.offset(head, frame, patch);
        &self.q[o..o + self.head_dim]
    }

    pub fn key(&self, head: usize, frame: usize, patch: usize) -> &[f64] {
        let o = self.offset(head, frame, patch);
        &self.k[o..o + self.head_dim]
    }
}

/// Per-frame, per-patch importance scores, `T x n_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    frames: usize,
    patches: usize,
    data: Vec<f64>,
}

impl AttentionScores {
    /// Checks shape only; ranges and frame sums are reported by [`validate`].
    pub fn new(frames: usize, patches: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || patches == 0 {
            return Err(shape("attention scores need T >= 1 and n_v >= 1"));
        }
        if data.len() != frames * patches {
            return Err(shape(format!(
                "attention scores expect {} values for {frames}x{patches}, got {}",
                frames * patches,
                data.len()
            )));
        }
        Ok(Self { frames, patches, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.patches..(frame + 1) * self.patches]
    }

    pub fn get(&self, frame: usize, patch: usize) -> f64 {
        self.data[frame * self.patches + patch]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Sink score per patch position; frame-invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkScores {
    /// Attention accumulated over frames.
    pub raw: Vec<f64>,
    /// Sharpened and min-max normalized, in `[0, 1]`.
    pub normalized: Vec<f64>,
    /// Sharpening exponent.
    pub w: f64,
}

impl SinkScores {
    pub fn patches(&self) -> usize {
        self.normalized.len()
    }
}

/// One contextual merge: `sources` were folded into `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub target: TokenId,
    pub sources: Vec<TokenId>,
}

/// Retained tokens, sorted ascending by `(frame, patch)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenSelection {
    pub frames: usize,
    pub patches: usize,
    pub budget: usize,
    pub kept: Vec<TokenId>,
    #[serde(default)]
    pub merges: Vec<MergeRecord>,
    /// Embeddings of the kept tokens after merging, `|kept| x d`, in `kept` order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merged_embeddings: Option<Vec<f64>>,
}

impl TokenSelection {
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Dense keep-mask indexed by flattened token id.
    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.frames * self.patches];
        for id in &self.kept {
            mask[id.flat(self.patches)] = true;
        }
        mask
    }

    pub fn kept_in_frame(&self, frame: usize) -> impl Iterator<Item = usize> + '_ {
        self.kept.iter().filter(move |id| id.frame == frame).map(|id| id.patch)
    }

    /// Checks the selection invariants: budget, uniqueness, ranges, merge disjointness.
    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.kept.len() > self.budget {
            problems.push(format!("{} kept tokens exceed budget {}", self.kept.len(), self.budget));
        }
        let mut seen = vec![false; self.frames * self.patches];
        for id in &self.kept {
            if id.frame >= self.frames || id.patch >= self.patches {
                problems.push(format!("kept token {id} out of range"));
                continue;
            }
            let flat = id.flat(self.patches);
            if seen[flat] {
                problems.push(format!("kept token {id} duplicated"));
            }
            seen[flat] = true;
        }
        for record in &self.merges {
            for src in &record.sources {
                if src.frame >= self.frames || src.patch >= self.patches {
                    problems.push(format!("merge source {src} out of range"));
                    continue;
                }
                let flat = src.flat(self.patches);
                if seen[flat] {
                    problems.push(format!("merge source {src} is kept or reused"));
                }
                seen[flat] = true;
            }
        }
        problems
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(frame {}, patch {})", self.frame, self.patch)
    }
}

/// One broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFiniteEmbedding { frame: usize, patch: usize },
    GridCoverage { grid_w: usize, grid_h: usize, patches: usize },
    ScoreShape { expected: (usize, usize), found: (usize, usize) },
    NonFiniteScore { frame: usize, patch: usize },
    ScoreOutOfRange { frame: usize, patch: usize, value: f64 },
    FrameSum { frame: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFiniteEmbedding { frame, patch } => {
                write!(f, "non-finite embedding at frame {frame}, patch {patch}")
            }
            Violation::GridCoverage { grid_w, grid_h, patches } => {
                write!(f, "grid {grid_w}x{grid_h} does not cover {patches} patches")
            }
            Violation::ScoreShape { expected, found } => write!(
                f,
                "score shape {}x{} does not match tokens {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::NonFiniteScore { frame, patch } => {
                write!(f, "non-finite score at frame {frame}, patch {patch}")
            }
            Violation::ScoreOutOfRange { frame, patch, value } => {
                write!(f, "score {value} outside [0, 1] at frame {frame}, patch {patch}")
            }
            Violation::FrameSum { frame, sum } => {
                write!(f, "frame sum != 1: frame {frame} sums to {sum}")
            }
        }
    }
}

/// Lists every invariant violation in `grid` and, optionally, `scores`.
/// An empty report means the inputs are well formed.
pub fn validate(grid: &TokenGrid, scores: Option<&AttentionScores>) -> Vec<Violation> {
    let mut report = Vec::new();
    for frame in 0..grid.frames {
        for patch in 0..grid.patches {
            if grid.token(frame, patch).iter().any(|v| !v.is_finite()) {
                report.push(Violation::NonFiniteEmbedding { frame, patch });
            }
        }
    }
    if let Some((grid_w, grid_h)) = grid.grid {
        if grid_w * grid_h != grid.patches {
            report.push(Violation::GridCoverage { grid_w, grid_h, patches: grid.patches });
        }
    }
    if let Some(scores) = scores {
        if (scores.frames, scores.patches) != (grid.frames, grid.patches) {
            report.push(Violation::ScoreShape {
                expected: (grid.frames, grid.patches),
                found: (scores.frames, scores.patches),
            });
        }
        report.extend(validate_scores(scores));
    }
    report
}

/// Range and frame-sum checks for attention scores alone.
pub fn validate_scores(scores: &AttentionScores) -> Vec<Violation> {
    let mut report = Vec::new();
    for frame in 0..scores.frames {
        let row = scores.frame(frame);
        let mut finite = true;
        for (patch, &value) in row.iter().enumerate() {
            if !value.is_finite() {
                finite = false;
                report.push(Violation::NonFiniteScore { frame, patch });
            } else if !(0.0..=1.0).contains(&value) {
                report.push(Violation::ScoreOutOfRange { frame, patch, value });
            }
        }
        if finite {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > FRAME_SUM_TOL {
                report.push(Violation::FrameSum { frame, sum });
            }
        }
    }
    report
}
