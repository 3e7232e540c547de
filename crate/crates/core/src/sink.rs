//! Sink scores.
//!
//! A sink is a patch position whose attention stays high in every frame.
//! Summing attention over time separates those positions from transiently
//! salient ones; raising the sums to a power `w > 1` before min-max
//! normalization concentrates the score on the strongest sinks.

use crate::model::{AttentionScores, SinkScores};

/// Sharpening exponent used when none is configured.
pub const DEFAULT_W: f64 = 1.1;

/// Attention summed over frames, per patch. Summation runs in ascending frame order.
pub fn accumulate(scores: &AttentionScores) -> Vec<f64> {
    let mut raw = vec![0.0; scores.patches()];
    for t in 0..scores.frames() {
        for (acc, v) in raw.iter_mut().zip(scores.frame(t)) {
            *acc += v;
        }
    }
    raw
}

/// Power-sharpens `raw` with exponent `w` and min-max normalizes into `[0, 1]`.
///
/// A constant input carries no persistence contrast and maps to all zeros.
pub fn normalize(raw: &[f64], w: f64) -> SinkScores {
    let powered: Vec<f64> = raw.iter().map(|v| v.powf(w)).collect();
    let (min, max) = powered
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let normalized = if max > min {
        let span = max - min;
        powered.iter().map(|v| ((v - min) / span).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; raw.len()]
    };
    SinkScores { raw: raw.to_vec(), normalized, w }
}

pub fn sink_scores(scores: &AttentionScores, w: f64) -> SinkScores {
    normalize(&accumulate(scores), w)
}
