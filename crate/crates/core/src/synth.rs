//! Synthetic videos with planted sink, salient and static positions.
//!
//! * Sinks sit at fixed coordinates (border cells first), get a share of the
//!   attention mass in every frame, and have background-like embeddings that
//!   barely change between frames.
//! * Salient events occupy one non-sink patch for `salient_span` consecutive
//!   frames; while active the patch gets extra attention and a fresh embedding
//!   every frame.
//! * Everything else is static background: near-constant embeddings, small
//!   jittered attention.
//!
//! Randomness comes from ChaCha8 seeded with `rand_core`'s `seed_from_u64`;
//! uniforms are `(next_u64() >> 11) * 2^-53`. Draw order: sink layout,
//! salient layout, event starts and strengths, base embeddings, then per
//! frame the embeddings (patch order) followed by attention (patch order).

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::model::{AttentionScores, TokenGrid, TokenId};
use crate::pipeline::PruneResult;

/// Synthetic video description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub frames: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    pub dim: usize,
    pub n_sink: usize,
    pub n_salient: usize,
    pub salient_span: usize,
    /// Per-frame attention mass shared by the sink positions, before renormalization.
    pub sink_attention_boost: f64,
    /// Extra attention mass of one active salient token, before renormalization.
    pub salient_attention_boost: f64,
    /// Relative spread of every attention component, in `[0, 1)`.
    pub attention_jitter: f64,
    /// Relative spread of the per-event salient strength, in `[0, 1)`.
    pub salient_jitter: f64,
    /// Per-frame embedding perturbation relative to the base embedding.
    pub background_drift: f64,
    pub seed: u64,
}

impl Default for Scenario {
    /// A heavy-sink video: 32 frames of 14x14 patches with sinks on about 10%
    /// of positions, strong enough to crowd salient events out of a 10% budget.
    fn default() -> Self {
        Self {
            frames: 32,
            grid_w: 14,
            grid_h: 14,
            dim: 32,
            n_sink: 20,
            n_salient: 128,
            salient_span: 4,
            sink_attention_boost: 0.9,
            salient_attention_boost: 0.03,
            attention_jitter: 0.25,
            salient_jitter: 0.6,
            background_drift: 0.05,
            seed: 0,
        }
    }
}

impl Scenario {
    pub fn patches(&self) -> usize {
        self.grid_w * self.grid_h
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.grid_w == 0 || self.grid_h == 0 || self.dim == 0 {
            return Err(invalid("scenario dimensions must be >= 1"));
        }
        if self.n_sink + self.n_salient > self.patches() {
            return Err(invalid(format!(
                "{} sinks + {} salient events exceed {} patches",
                self.n_sink,
                self.n_salient,
                self.patches()
            )));
        }
        if self.n_salient > 0 && (self.salient_span == 0 || self.salient_span > self.frames) {
            return Err(invalid(format!("salient_span must be in [1, {}]", self.frames)));
        }
        if self.n_sink > 0 && !(self.sink_attention_boost >= 0.0 && self.sink_attention_boost < 1.0) {
            return Err(invalid(format!(
                "sink_attention_boost {} leaves no attention mass for the other positions",
                self.sink_attention_boost
            )));
        }
        if !(self.salient_attention_boost >= 0.0 && self.salient_attention_boost.is_finite()) {
            return Err(invalid("salient_attention_boost must be finite and >= 0"));
        }
        if !(self.attention_jitter >= 0.0 && self.attention_jitter < 1.0) {
            return Err(invalid("attention_jitter must be in [0, 1)"));
        }
        if !(self.salient_jitter >= 0.0 && self.salient_jitter < 1.0) {
            return Err(invalid("salient_jitter must be in [0, 1)"));
        }
        if !(self.background_drift >= 0.0 && self.background_drift.is_finite()) {
            return Err(invalid("background_drift must be finite and >= 0"));
        }
        Ok(())
    }

    fn sink_mass(&self) -> f64 {
        if self.n_sink == 0 {
            0.0
        } else {
            self.sink_attention_boost
        }
    }
}

/// A salient event on `patch` over frames `start..end` (end exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SalientEvent {
    pub patch: usize,
    pub start: usize,
    pub end: usize,
}

impl SalientEvent {
    pub fn contains(&self, frame: usize) -> bool {
        (self.start..self.end).contains(&frame)
    }
}

/// Planted structure; the three position sets are disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frames: usize,
    pub patches: usize,
    pub sink_positions: Vec<usize>,
    pub salient_events: Vec<SalientEvent>,
    pub static_positions: Vec<usize>,
}

impl GroundTruth {
    /// Number of salient events active in each frame.
    pub fn active_per_frame(&self) -> Vec<usize> {
        (0..self.frames).map(|t| self.salient_events.iter().filter(|e| e.contains(t)).count()).collect()
    }

    pub fn salient_occurrences(&self) -> usize {
        self.salient_events.iter().map(|e| e.end - e.start).sum()
    }
}

/// Generated tensors plus their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub tokens: TokenGrid,
    pub scores: AttentionScores,
    pub truth: GroundTruth,
}

struct Uniform(ChaCha8Rng);

impl Uniform {
    fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// `[0, 1)`
    fn next(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `[-1, 1)`
    fn signed(&mut self) -> f64 {
        2.0 * self.next() - 1.0
    }

    /// `[0, n)`
    fn below(&mut self, n: usize) -> usize {
        ((self.next() * n as f64) as usize).min(n - 1)
    }

    fn shuffle(&mut self, items: &mut [usize]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn is_border(patch: usize, w: usize, h: usize) -> bool {
    let (r, c) = (patch / w, patch % w);
    r == 0 || c == 0 || r + 1 == h || c + 1 == w
}

pub fn generate(scn: &Scenario) -> Result<SynthVideo> {
    scn.validate()?;
    let (frames, n, d) = (scn.frames, scn.patches(), scn.dim);
    let mut rng = Uniform::new(scn.seed);

    let (mut border, mut interior): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&p| is_border(p, scn.grid_w, scn.grid_h));
    rng.shuffle(&mut border);
    rng.shuffle(&mut interior);
    let mut order = border;
    order.extend(interior);
    let mut sink_positions = order[..scn.n_sink].to_vec();
    sink_positions.sort_unstable();

    let mut rest: Vec<usize> = (0..n).filter(|p| sink_positions.binary_search(p).is_err()).collect();
    rng.shuffle(&mut rest);
    let salient_patches = rest[..scn.n_salient].to_vec();

    let mut salient_events = Vec::with_capacity(scn.n_salient);
    let mut strengths = vec![0.0; n];
    for &patch in &salient_patches {
        let start = rng.below(frames - scn.salient_span + 1);
        salient_events.push(SalientEvent { patch, start, end: start + scn.salient_span });
        strengths[patch] = scn.salient_attention_boost * (1.0 + scn.salient_jitter * rng.signed());
    }
    salient_events.sort_by_key(|e| e.patch);

    let mut static_positions = rest[scn.n_salient..].to_vec();
    static_positions.sort_unstable();

    let base: Vec<f64> = (0..n * d).map(|_| rng.signed()).collect();

    let mut is_sink = vec![false; n];
    for &p in &sink_positions {
        is_sink[p] = true;
    }
    let mut event_of = vec![None; n];
    for e in &salient_events {
        event_of[e.patch] = Some(*e);
    }

    let sink_mass = scn.sink_mass();
    let bg_each = (1.0 - sink_mass) / n as f64;
    let sink_each = if scn.n_sink > 0 { sink_mass / scn.n_sink as f64 } else { 0.0 };
    let j = scn.attention_jitter;

    let mut embeddings = Vec::with_capacity(frames * n * d);
    let mut attention = Vec::with_capacity(frames * n);
    for t in 0..frames {
        for i in 0..n {
            let active = event_of[i].is_some_and(|e| e.contains(t));
            let b = &base[i * d..(i + 1) * d];
            if active {
                embeddings.extend((0..d).map(|_| rng.signed()));
            } else {
                embeddings.extend(b.iter().map(|&v| v + scn.background_drift * rng.signed()));
            }
        }
        let row_start = attention.len();
        for i in 0..n {
            let mut a = bg_each * (1.0 + j * rng.signed());
            if is_sink[i] {
                a += sink_each * (1.0 + j * rng.signed());
            }
            if event_of[i].is_some_and(|e| e.contains(t)) {
                a += strengths[i];
            }
            attention.push(a);
        }
        let row = &mut attention[row_start..];
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|a| *a /= total);
    }

    let tokens = TokenGrid::new(frames, n, d, embeddings)?.with_grid(scn.grid_w, scn.grid_h)?;
    let scores = AttentionScores::new(frames, n, attention)?;
    let truth = GroundTruth { frames, patches: n, sink_positions, salient_events, static_positions };
    Ok(SynthVideo { tokens, scores, truth })
}

/// Smallest `sink_attention_boost` above which every sink's accumulated
/// attention provably exceeds every non-sink's, for this scenario's layout.
///
/// Worst case per frame: sinks at their jitter minimum, non-sinks at their
/// maximum with the strongest possible salient boost, frame totals at the
/// bound least favourable to the comparison. `None` when no boost below 1 works.
pub fn sink_boost_floor(scn: &Scenario, truth: &GroundTruth) -> Option<f64> {
    if scn.n_sink == 0 || scn.n_sink >= scn.patches() {
        return None;
    }
    let j = scn.attention_jitter;
    let (t, n, k) = (scn.frames as f64, scn.patches() as f64, scn.n_sink as f64);
    let span = if scn.n_salient > 0 { scn.salient_span as f64 } else { 0.0 };
    let max_active = truth.active_per_frame().into_iter().max().unwrap_or(0) as f64;
    let sal_max = scn.salient_attention_boost * (1.0 + scn.salient_jitter);
    let z_min = 1.0 - j;
    let z_max = 1.0 + j + max_active * sal_max;

    // sink side: T/z_max * (1-j) * (b/k + (1-b)/n) = a0 + a1 b
    let a0 = t / z_max * (1.0 - j) / n;
    let a1 = t / z_max * (1.0 - j) * (1.0 / k - 1.0 / n);
    // non-sink side: (T (1-b)(1+j)/n + span sal_max) / z_min = b0 - b1 b
    let b0 = (t * (1.0 + j) / n + span * sal_max) / z_min;
    let b1 = t * (1.0 + j) / n / z_min;
    let floor = ((b0 - a0) / (a1 + b1)).max(0.0);
    (floor < 1.0).then_some(floor)
}

/// Ground-truth scores of a pruning result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Kept salient occurrences over all salient occurrences (1 when there are none).
    pub salient_recall: f64,
    /// Kept sink occurrences over `n_sink * T` (0 when there are no sinks).
    pub sink_retention: f64,
    /// Share of kept tokens that are neither salient occurrences nor frame-0
    /// static representatives.
    pub budget_waste: f64,
    pub kept: usize,
    pub salient_kept: usize,
    pub salient_occurrences: usize,
    pub sink_kept: usize,
    pub sink_occurrences: usize,
    pub wasted: usize,
    pub sink_positions: usize,
    pub salient_events: usize,
    pub static_positions: usize,
}

/// Scores a kept-token list against the planted structure.
pub fn score_kept(kept: &[TokenId], frames: usize, patches: usize, truth: &GroundTruth) -> Result<Metrics> {
    if frames != truth.frames || patches != truth.patches {
        return Err(shape(format!(
            "result is {frames}x{patches}, ground truth is {}x{}",
            truth.frames, truth.patches
        )));
    }
    let mut role = vec![Role::Static; patches];
    for &p in &truth.sink_positions {
        role[p] = Role::Sink;
    }
    let mut events = vec![None; patches];
    for e in &truth.salient_events {
        events[e.patch] = Some(*e);
        role[e.patch] = Role::Salient;
    }

    let (mut salient_kept, mut sink_kept, mut wasted) = (0, 0, 0);
    for id in kept {
        match role[id.patch] {
            Role::Sink => {
                sink_kept += 1;
                wasted += 1;
            }
            Role::Salient if events[id.patch].is_some_and(|e| e.contains(id.frame)) => salient_kept += 1,
            Role::Static if id.frame == 0 => {}
            _ => wasted += 1,
        }
    }

    let salient_occurrences = truth.salient_occurrences();
    let sink_occurrences = truth.sink_positions.len() * frames;
    let ratio = |num: usize, den: usize, empty: f64| if den == 0 { empty } else { num as f64 / den as f64 };
    Ok(Metrics {
        salient_recall: ratio(salient_kept, salient_occurrences, 1.0),
        sink_retention: ratio(sink_kept, sink_occurrences, 0.0),
        budget_waste: ratio(wasted, kept.len(), 0.0),
        kept: kept.len(),
        salient_kept,
        salient_occurrences,
        sink_kept,
        sink_occurrences,
        wasted,
        sink_positions: truth.sink_positions.len(),
        salient_events: truth.salient_events.len(),
        static_positions: truth.static_positions.len(),
    })
}

pub fn score(result: &PruneResult, truth: &GroundTruth) -> Result<Metrics> {
    score_kept(&result.selection.kept, result.frames, result.patches, truth)
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Sink,
    Salient,
    Static,
}
