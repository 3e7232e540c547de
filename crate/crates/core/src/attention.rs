//! CLS-equivalent attention scores.
//!
//! Encoders without a CLS token get a per-token importance from the column
//! means of their softmax self-attention: a token is important when other
//! tokens in the same frame attend to it.

use crate::error::{invalid, shape, Result};
use crate::model::{AttentionScores, QueryKey};
use crate::par;

/// Frame sums further than this from 1 trigger renormalization on ingest.
pub const INGEST_RENORM_TOL: f64 = 1e-4;

/// Head-averaged, row-stochastic attention, `T x n_v x n_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    frames: usize,
    patches: usize,
    data: Vec<f64>,
}

impl AttentionMatrix {
    pub fn new(frames: usize, patches: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || patches == 0 || data.len() != frames * patches * patches {
            return Err(shape(format!(
                "attention matrix expects {frames}x{patches}x{patches} values, got {}",
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

    /// Row `query` of frame `frame`: attention from `query` to every key.
    pub fn row(&self, frame: usize, query: usize) -> &[f64] {
        let n = self.patches;
        let start = (frame * n + query) * n;
        &self.data[start..start + n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Numerically stable softmax into `out`.
fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `softmax(q k^T / sqrt(d_h))` per head and frame, averaged over heads.
pub fn compute_attention_matrix(qk: &QueryKey) -> AttentionMatrix {
    let n = qk.patches();
    let heads = qk.heads();
    let scale = 1.0 / (qk.head_dim() as f64).sqrt();

    let frames: Vec<Vec<f64>> = par::map_indexed(qk.frames(), |t| {
        let mut acc = vec![0.0; n * n];
        let mut logits = vec![0.0; n];
        let mut probs = vec![0.0; n];
        for h in 0..heads {
            for j in 0..n {
                let q = qk.query(h, t, j);
                for (i, logit) in logits.iter_mut().enumerate() {
                    let k = qk.key(h, t, i);
                    *logit = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_into(&logits, &mut probs);
                for (a, p) in acc[j * n..(j + 1) * n].iter_mut().zip(&probs) {
                    *a += p;
                }
            }
        }
        let inv = 1.0 / heads as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    });

    AttentionMatrix { frames: qk.frames(), patches: n, data: frames.concat() }
}

/// Column means of each frame's attention matrix.
pub fn column_mean_scores(attn: &AttentionMatrix) -> AttentionScores {
    let n = attn.patches;
    let rows: Vec<Vec<f64>> = par::map_indexed(attn.frames, |t| {
        let mut cols = vec![0.0; n];
        for j in 0..n {
            for (c, v) in cols.iter_mut().zip(attn.row(t, j)) {
                *c += v;
            }
        }
        let inv = 1.0 / n as f64;
        cols.iter_mut().for_each(|c| *c *= inv);
        cols
    });
    AttentionScores::new(attn.frames, n, rows.concat()).expect("shape preserved")
}

/// Convenience composition of [`compute_attention_matrix`] and [`column_mean_scores`].
pub fn scores_from_qk(qk: &QueryKey) -> AttentionScores {
    column_mean_scores(&compute_attention_matrix(qk))
}

/// Precomputed scores, possibly renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub scores: AttentionScores,
    /// Set when at least one frame had to be rescaled to sum to one.
    pub renormalized: bool,
}

/// Wraps externally computed scores, rescaling frames whose sum is off by
/// more than [`INGEST_RENORM_TOL`].
pub fn ingest_scores(frames: usize, patches: usize, raw: Vec<f64>) -> Result<Ingested> {
    let mut scores = AttentionScores::new(frames, patches, raw)?.into_data();
    if let Some(pos) = scores.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid(format!(
            "attention score {} at frame {}, patch {} must be finite and >= 0",
            scores[pos],
            pos / patches,
            pos % patches
        )));
    }
    let mut renormalized = false;
    for (t, row) in scores.chunks_mut(patches).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > INGEST_RENORM_TOL {
            if sum <= 0.0 {
                return Err(invalid(format!("frame {t} has zero attention mass")));
            }
            row.iter_mut().for_each(|v| *v /= sum);
            renormalized = true;
        }
    }
    Ok(Ingested { scores: AttentionScores::new(frames, patches, scores)?, renormalized })
}
