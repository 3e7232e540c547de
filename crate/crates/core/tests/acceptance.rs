//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! fails if any criterion fails.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use stop_core::diagnostics::{estimate_flops, identify_sink_set, occurrences, selection_frequency, FlopsModel};
use stop_core::par;
use stop_core::pipeline::run;
use stop_core::sink::sink_scores;
use stop_core::spatial::dpc_knn_select;
use stop_core::synth::{generate, score, Metrics, Scenario, SynthVideo};
use stop_core::temporal::{clip_prune, clip_prune_sttp_with, SinkBonus};
use stop_core::{AttentionScores, PruneConfig, SpatialSelector, Strategy, TokenGrid};

struct Rng(ChaCha8Rng);

impl Rng {
    fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
    fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }
    fn pick<T: Copy>(&mut self, items: &[T]) -> T {
        items[self.range(0, items.len() - 1)]
    }
}

/// Collects a fingerprint of everything a criterion produced.
#[derive(Default)]
struct Digest(DefaultHasher);

impl Digest {
    fn floats(&mut self, xs: &[f64]) {
        xs.len().hash(&mut self.0);
        for x in xs {
            x.to_bits().hash(&mut self.0);
        }
    }
    fn json<T: serde::Serialize>(&mut self, v: &T) {
        serde_json::to_string(v).unwrap().hash(&mut self.0);
    }
    fn finish(&self) -> u64 {
        self.0.finish()
    }
}

struct Outcome {
    pass: bool,
    detail: String,
    digest: u64,
}

fn random_scores(rng: &mut Rng, frames: usize, patches: usize) -> AttentionScores {
    let mut data = Vec::with_capacity(frames * patches);
    for _ in 0..frames {
        let row: Vec<f64> = (0..patches).map(|_| rng.unit().powi(3) + 1e-6).collect();
        let total: f64 = row.iter().sum();
        data.extend(row.into_iter().map(|v| v / total));
    }
    AttentionScores::new(frames, patches, data).unwrap()
}

/// Embeddings where some patches hold still and others change between frames.
fn random_video(rng: &mut Rng, frames: usize, patches: usize, dim: usize) -> TokenGrid {
    let base: Vec<f64> = (0..patches * dim).map(|_| rng.unit() * 2.0 - 1.0).collect();
    let drift: Vec<f64> = (0..patches).map(|_| rng.pick(&[0.0, 0.02, 0.1, 0.3, 2.0])).collect();
    let mut data = Vec::with_capacity(frames * patches * dim);
    for _ in 0..frames {
        for i in 0..patches {
            for c in 0..dim {
                data.push(base[i * dim + c] + drift[i] * (rng.unit() * 2.0 - 1.0));
            }
        }
    }
    TokenGrid::new(frames, patches, dim, data).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(1);
    let mut digest = Digest::default();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for trial in 0..1000 {
        let (frames, patches) = (rng.range(1, 16), rng.range(2, 64));
        let scores = if trial % 50 == 0 {
            AttentionScores::new(frames, patches, vec![1.0 / patches as f64; frames * patches]).unwrap()
        } else {
            random_scores(&mut rng, frames, patches)
        };
        let w = rng.pick(&[0.5, 1.0, 1.1, 1.5, 2.0]);
        let got = sink_scores(&scores, w);
        digest.floats(&got.normalized);

        let mut raw = vec![0.0; patches];
        for t in 0..frames {
            for (i, r) in raw.iter_mut().enumerate() {
                *r += scores.data()[t * patches + i];
            }
        }
        let powered: Vec<f64> = raw.iter().map(|v| v.powf(w)).collect();
        let lo = powered.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = powered.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expected: Vec<f64> =
            powered.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect();

        for i in 0..patches {
            let raw_err = (got.raw[i] - raw[i]).abs() / raw[i].abs().max(f64::MIN_POSITIVE);
            let norm_err = (got.normalized[i] - expected[i]).abs() / expected[i].abs().max(1.0);
            worst = worst.max(raw_err).max(norm_err);
            if raw_err > 1e-12 || norm_err > 1e-12 {
                failures += 1;
            }
        }
        if trial % 50 == 0 && got.normalized.iter().any(|&v| v != 0.0) {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: failures == 0 && elapsed < Duration::from_secs(5),
        detail: format!("1000 instances, max rel err {worst:.2e}, {failures} mismatches, {elapsed:.2?}"),
        digest: digest.finish(),
    }
}

fn criterion_2() -> Outcome {
    let mut rng = Rng::new(2);
    let mut digest = Digest::default();
    let (mut spatial_diff, mut temporal_diff) = (0, 0);
    for _ in 0..500 {
        let (frames, patches, dim) = (rng.range(2, 10), rng.range(10, 36), rng.range(2, 8));
        let grid = random_video(&mut rng, frames, patches, dim);
        let scores = random_scores(&mut rng, frames, patches);
        let strategy = rng.pick(&[Strategy::SpatialOnly, Strategy::TemporalThenSpatial]);
        let base = PruneConfig {
            retention_ratio: rng.pick(&[0.1, 0.15, 0.2, 0.5]),
            tau: rng.pick(&[0.5, 0.8, 0.9]),
            clip_len: rng.range(2, 5),
            strategy,
            sink_aware_temporal: false,
            ..Default::default()
        };
        let topk = run(&grid, &scores, &PruneConfig { spatial_selector: SpatialSelector::AttentionTopk, ..base.clone() })
            .unwrap();
        let stsp = run(
            &grid,
            &scores,
            &PruneConfig { spatial_selector: SpatialSelector::AttentionTopkSinkAware, mu_s: 0.0, ..base.clone() },
        )
        .unwrap();
        let a = serde_json::to_vec(&topk.selection).unwrap();
        let b = serde_json::to_vec(&stsp.selection).unwrap();
        if a != b {
            spatial_diff += 1;
        }
        digest.json(&stsp.selection);

        let sink = sink_scores(&scores, 1.1);
        let plain = clip_prune(&grid, base.tau, base.clip_len).unwrap();
        for placement in [SinkBonus::Aggregate, SinkBonus::PerPair] {
            let sttp = clip_prune_sttp_with(&grid, &sink, base.tau, 0.0, base.clip_len, placement).unwrap();
            if sttp.pruned != plain.pruned {
                temporal_diff += 1;
            }
        }
        digest.json(&plain.pruned);
    }
    Outcome {
        pass: spatial_diff == 0 && temporal_diff == 0,
        detail: format!("500 instances, {spatial_diff} spatial and {temporal_diff} temporal differences"),
        digest: digest.finish(),
    }
}

fn criterion_3() -> Outcome {
    const GRID: [f64; 5] = [0.0, 0.05, 0.06, 0.07, 0.08];
    let mut rng = Rng::new(3);
    let mut digest = Digest::default();
    let mut violations = 0;
    let mut grew = 0;
    for _ in 0..200 {
        let (frames, patches, dim) = (rng.range(2, 12), rng.range(2, 40), rng.range(2, 8));
        let grid = random_video(&mut rng, frames, patches, dim);
        let sink = sink_scores(&random_scores(&mut rng, frames, patches), 1.1);
        let tau = rng.pick(&[0.8, 0.9, 0.95]);
        let clip_len = rng.range(2, 5);
        for placement in [SinkBonus::Aggregate, SinkBonus::PerPair] {
            let sets: Vec<Vec<bool>> = GRID
                .iter()
                .map(|&mu| {
                    let p = clip_prune_sttp_with(&grid, &sink, tau, mu, clip_len, placement).unwrap();
                    digest.json(&p.pruned);
                    p.mask(frames, patches)
                })
                .collect();
            for pair in sets.windows(2) {
                violations += pair[0].iter().zip(&pair[1]).filter(|(&a, &b)| a && !b).count();
                if pair[0] != pair[1] {
                    grew += 1;
                }
            }
        }
    }
    Outcome {
        pass: violations == 0,
        detail: format!("200 videos x 2 bonus placements, {violations} violations, {grew} strict growths"),
        digest: digest.finish(),
    }
}

fn criterion_4() -> Outcome {
    let mut digest = Digest::default();
    let mut notes = Vec::new();

    let small = estimate_flops(&FlopsModel::new(1, 4, 8, 0).unwrap(), 10).unwrap();
    let exact = small.total == 2080;
    notes.push(format!("L=1,d=4,m=8,n=10 -> {}", small.total));

    let model = FlopsModel::new(28, 3584, 18944, 0).unwrap();
    let full = estimate_flops(&model, 6270).unwrap();
    let pruned = estimate_flops(&model, 627).unwrap();
    let ratio_ok = full.attention == 100 * pruned.attention;
    notes.push(format!("2n^2d ratio at 10% exact: {ratio_ok}"));

    let mut big_ok = true;
    for (l, d, m, nq) in [(80u64, 8192u64, 29568u64, 0u64), (126, 16384, 53248, 4096), (1, 1, 1, 0)] {
        let model = FlopsModel::new(l, d, m, nq).unwrap();
        let n = 10_000_000u64;
        let est = estimate_flops(&model, n).unwrap();
        let nn = (n + nq) as u128;
        let (l, d, m) = (l as u128, d as u128, m as u128);
        let reference = l * nn * (4 * d * d + 2 * nn * d + 2 * d * m);
        big_ok &= est.total == reference && est.sequence_len == nn;
        digest.0.write_u128(est.total);
    }
    notes.push(format!("n=1e7 exact: {big_ok}"));
    digest.0.write_u128(small.total);
    Outcome { pass: exact && ratio_ok && big_ok, detail: notes.join(", "), digest: digest.finish() }
}

fn criterion_5() -> Outcome {
    let mut rng = Rng::new(5);
    let mut digest = Digest::default();
    let (mut wrong, mut unreconciled, mut under) = (0, 0, 0);
    for _ in 0..1000 {
        let (frames, patches, dim) = (rng.range(1, 12), rng.range(10, 64), rng.range(2, 6));
        let grid = if rng.unit() < 0.2 {
            // frozen video: long clips can prune below the budget
            let first: Vec<f64> = (0..patches * dim).map(|_| rng.unit() * 2.0 - 1.0).collect();
            TokenGrid::new(frames, patches, dim, first.repeat(frames)).unwrap()
        } else {
            random_video(&mut rng, frames, patches, dim)
        };
        let scores = random_scores(&mut rng, frames, patches);
        let percent = rng.pick(&[10u64, 15, 20]);
        let cfg = PruneConfig {
            retention_ratio: percent as f64 / 100.0,
            strategy: rng.pick(&[Strategy::SpatialOnly, Strategy::TemporalThenSpatial]),
            spatial_selector: rng.pick(&SpatialSelector::ALL),
            merge_pruned: rng.unit() < 0.3,
            merge_temporal: rng.unit() < 0.3,
            sttp_per_pair: rng.unit() < 0.5,
            sink_aware_temporal: rng.unit() < 0.5,
            tau: rng.pick(&[0.5, 0.9]),
            clip_len: rng.range(2, 8),
            knn: rng.range(1, 3),
            k_pct: rng.pick(&[0.05, 0.1, 0.2]),
            ..Default::default()
        };
        let result = run(&grid, &scores, &cfg).unwrap();
        let budget = (percent * (frames * patches) as u64 / 100) as usize;
        let l = &result.ledger;
        if l.budget != budget || result.selection.kept.len() != l.output {
            wrong += 1;
        }
        if l.under_budget {
            under += 1;
            if l.output >= budget {
                wrong += 1;
            }
        } else if l.output != budget {
            wrong += 1;
        }
        if !l.reconciles() || !result.selection.check().is_empty() {
            unreconciled += 1;
        }
        digest.json(&result.selection.kept);
    }
    Outcome {
        pass: wrong == 0 && unreconciled == 0,
        detail: format!("1000 configs, {wrong} budget errors, {unreconciled} unreconciled ledgers, {under} flagged under-budget"),
        digest: digest.finish(),
    }
}

const SCENARIOS: u64 = 50;
const MU_S_SWEEP: [f64; 6] = [0.01, 0.02, 0.03, 0.04, 0.2, 0.3];
const K_SWEEP: [f64; 4] = [0.05, 0.10, 0.15, 0.20];

fn videos() -> Vec<SynthVideo> {
    par::map_indexed(SCENARIOS as usize, |s| generate(&Scenario::default().with_seed(s as u64)).unwrap())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn spatial(selector: SpatialSelector) -> PruneConfig {
    PruneConfig { strategy: Strategy::SpatialOnly, spatial_selector: selector, ..Default::default() }
}

fn metrics_for(videos: &[SynthVideo], cfg: &PruneConfig, digest: &mut Digest) -> Vec<Metrics> {
    par::map_slice(videos, |v| {
        let r = run(&v.tokens, &v.scores, cfg).unwrap();
        (score(&r, &v.truth).unwrap(), r)
    })
    .into_iter()
    .map(|(m, r)| {
        digest.json(&r.selection.kept);
        m
    })
    .collect()
}

/// The sweep value with the best median salient recall; ties go to the lower
/// median budget waste, then to the smaller value.
fn mu_s_optimum(videos: &[SynthVideo], digest: &mut Digest) -> (f64, Vec<Metrics>) {
    let mut best: Option<(f64, f64, f64, Vec<Metrics>)> = None;
    for mu in MU_S_SWEEP {
        let cfg = PruneConfig { mu_s: mu, ..spatial(SpatialSelector::AttentionTopkSinkAware) };
        let m = metrics_for(videos, &cfg, digest);
        let recall = median(m.iter().map(|m| m.salient_recall).collect());
        let waste = median(m.iter().map(|m| m.budget_waste).collect());
        let better = match &best {
            None => true,
            Some((_, r, w, _)) => recall > *r || (recall == *r && waste < *w),
        };
        if better {
            best = Some((mu, recall, waste, m));
        }
    }
    let (mu, _, _, m) = best.unwrap();
    (mu, m)
}

fn criterion_6(videos: &[SynthVideo]) -> Outcome {
    let start = Instant::now();
    let mut digest = Digest::default();
    let baseline_cfg = spatial(SpatialSelector::AttentionTopk);
    let temporal_cfg = PruneConfig {
        strategy: Strategy::TemporalThenSpatial,
        spatial_selector: SpatialSelector::AttentionTopk,
        sink_aware_temporal: false,
        ..Default::default()
    };

    let (mut profile_ok, mut reduction_ok) = (0, 0);
    let mut reductions = Vec::new();
    let mut baseline_metrics = Vec::new();
    for v in videos {
        let base = run(&v.tokens, &v.scores, &baseline_cfg).unwrap();
        let temporal = run(&v.tokens, &v.scores, &temporal_cfg).unwrap();
        digest.json(&base.selection.kept);
        digest.json(&temporal.selection.kept);
        baseline_metrics.push(score(&base, &v.truth).unwrap());

        let profile = selection_frequency(&base);
        let n_sink = v.truth.sink_positions.len();
        let min_sink = v.truth.sink_positions.iter().map(|&p| profile.counts[p]).min().unwrap();
        let max_other = (0..profile.counts.len())
            .filter(|p| v.truth.sink_positions.binary_search(p).is_err())
            .map(|p| profile.counts[p])
            .max()
            .unwrap();
        let top = identify_sink_set(&profile, n_sink as f64 / profile.counts.len() as f64).unwrap();
        if min_sink > max_other && top == v.truth.sink_positions {
            profile_ok += 1;
        }

        let sink_set = identify_sink_set(&profile, 0.10).unwrap();
        let before = occurrences(&base.selection, &sink_set);
        let after = occurrences(&temporal.selection, &sink_set);
        let reduction = if before == 0 { 0.0 } else { (before - after.min(before)) as f64 / before as f64 };
        reductions.push(reduction);
        if after <= before && reduction >= 0.5 {
            reduction_ok += 1;
        }
    }

    let (mu, stsp) = mu_s_optimum(videos, &mut digest);
    let mut stsp_ok = 0;
    let mut ratios = Vec::new();
    for (b, s) in baseline_metrics.iter().zip(&stsp) {
        let ratio = if b.sink_retention > 0.0 { s.sink_retention / b.sink_retention } else { 0.0 };
        ratios.push(ratio);
        if s.sink_retention <= 0.10 * b.sink_retention && s.salient_recall > b.salient_recall {
            stsp_ok += 1;
        }
    }
    let elapsed = start.elapsed();
    let n = videos.len();
    Outcome {
        pass: profile_ok == n && reduction_ok == n && stsp_ok == n && elapsed < Duration::from_secs(60),
        detail: format!(
            "sinks top-ranked {profile_ok}/{n}; temporal sink reduction >= 50% {reduction_ok}/{n} \
             (median {:.1}%); STSP mu_s={mu}: retention <= 10% of baseline and higher recall {stsp_ok}/{n} \
             (median retention ratio {:.3}, recall {:.3} -> {:.3}); {elapsed:.2?}",
            100.0 * median(reductions),
            median(ratios),
            median(baseline_metrics.iter().map(|m| m.salient_recall).collect()),
            median(stsp.iter().map(|m| m.salient_recall).collect()),
        ),
        digest: digest.finish(),
    }
}

fn criterion_7(videos: &[SynthVideo]) -> Outcome {
    let mut digest = Digest::default();
    let recall = |cfg: &PruneConfig, digest: &mut Digest| {
        median(metrics_for(videos, cfg, digest).iter().map(|m| m.salient_recall).collect())
    };
    let topk = recall(&spatial(SpatialSelector::AttentionTopk), &mut digest);
    let redistribution = recall(
        &PruneConfig { k_pct: 0.10, ..spatial(SpatialSelector::AttentionRedistribution) },
        &mut digest,
    );
    let hard: Vec<f64> = K_SWEEP
        .iter()
        .map(|&k| recall(&PruneConfig { k_pct: k, ..spatial(SpatialSelector::HardPruneTopk) }, &mut digest))
        .collect();
    let (_, stsp) = mu_s_optimum(videos, &mut digest);
    let stsp = median(stsp.iter().map(|m| m.salient_recall).collect());

    let hard10 = hard[1];
    let peak = (0..hard.len()).fold(0, |best, i| if hard[i] > hard[best] { i } else { best });
    let peak_near_10 = (peak as i64 - 1).abs() <= 1;
    let ordered = topk < redistribution && redistribution <= hard10 && hard10 < stsp;
    Outcome {
        pass: ordered && peak_near_10,
        detail: format!(
            "median recall topk {topk:.3} < redistribution {redistribution:.3} <= hard_prune(10%) {hard10:.3} \
             < stsp {stsp:.3}; K-sweep 5/10/15/20% = {:.3}/{:.3}/{:.3}/{:.3}, peak at {}%",
            hard[0],
            hard[1],
            hard[2],
            hard[3],
            (K_SWEEP[peak] * 100.0).round()
        ),
        digest: digest.finish(),
    }
}

/// Exhaustive density-peak reference: brute-force scores, then the unique
/// size-k subset whose members all outrank all non-members.
fn dpc_reference(points: &[Vec<f64>], k: usize, knn: usize) -> Vec<usize> {
    let n = points.len();
    let d2 = |a: usize, b: usize| points[a].iter().zip(&points[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let kk = knn.min(n - 1);
    let rho: Vec<f64> = (0..n)
        .map(|i| {
            if kk == 0 {
                return 1.0;
            }
            let mut ds: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d2(i, j)).collect();
            ds.sort_by(f64::total_cmp);
            (-(ds[..kk].iter().sum::<f64>() / kk as f64)).exp()
        })
        .collect();
    let score: Vec<f64> = (0..n)
        .map(|i| {
            let denser: Vec<f64> = (0..n)
                .filter(|&j| j != i && (rho[j] > rho[i] || (rho[j] == rho[i] && j < i)))
                .map(|j| d2(i, j))
                .collect();
            let delta = if denser.is_empty() {
                (0..n).filter(|&j| j != i).map(|j| d2(i, j)).fold(0.0, f64::max)
            } else {
                denser.into_iter().fold(f64::INFINITY, f64::min)
            };
            rho[i] * delta.sqrt()
        })
        .collect();
    let outranks = |a: usize, b: usize| score[a] > score[b] || (score[a] == score[b] && a < b);
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let inside: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let outside: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 0).collect();
        if inside.iter().all(|&a| outside.iter().all(|&b| outranks(a, b))) {
            found.push(inside);
        }
    }
    assert_eq!(found.len(), 1, "ranking must single out one subset");
    found.pop().unwrap()
}

fn criterion_8() -> Outcome {
    let mut rng = Rng::new(8);
    let mut digest = Digest::default();
    let (mut frames_checked, mut mismatches) = (0, 0);
    for _ in 0..200 {
        let (frames, patches, dim) = (rng.range(1, 4), rng.range(2, 8), rng.range(1, 4));
        let mut data: Vec<f64> = (0..frames * patches * dim).map(|_| (rng.unit() * 8.0).round() / 4.0).collect();
        if rng.unit() < 0.3 {
            // duplicated tokens force density ties
            let (a, b) = (rng.range(0, patches - 1), rng.range(0, patches - 1));
            for t in 0..frames {
                for c in 0..dim {
                    data[(t * patches + b) * dim + c] = data[(t * patches + a) * dim + c];
                }
            }
        }
        let grid = TokenGrid::new(frames, patches, dim, data).unwrap();
        let k = rng.range(1, patches);
        let knn = rng.range(1, patches - 1);
        let sel = dpc_knn_select(&grid, k, knn).unwrap();
        digest.json(&sel.kept);
        for t in 0..frames {
            let points: Vec<Vec<f64>> = (0..patches).map(|i| grid.token(t, i).to_vec()).collect();
            let expected = dpc_reference(&points, k, knn);
            let got: Vec<usize> = sel.kept_in_frame(t).collect();
            frames_checked += 1;
            if got != expected {
                mismatches += 1;
            }
        }
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("200 trials, {frames_checked} frames, {mismatches} mismatches"),
        digest: digest.finish(),
    }
}

fn run_suite() -> Vec<(&'static str, Outcome)> {
    let videos = videos();
    let mut gen = Digest::default();
    for v in &videos {
        gen.floats(v.scores.data());
        gen.floats(v.tokens.data());
    }
    let mut out = vec![
        ("1 sink score exactness", criterion_1()),
        ("2 baseline recovery", criterion_2()),
        ("3 sink-aware temporal nesting", criterion_3()),
        ("4 FLOPs model", criterion_4()),
        ("5 budget exactness", criterion_5()),
        ("6 sink mechanism on synthetic videos", criterion_6(&videos)),
        ("7 naive strategy ordering", criterion_7(&videos)),
        ("8 density-peak oracle", criterion_8()),
    ];
    out.push(("synthetic generation", Outcome { pass: true, detail: String::new(), digest: gen.finish() }));
    out
}

#[test]
fn acceptance() {
    let mut runs = Vec::new();
    for threads in ["1", "4"] {
        std::env::set_var(par::THREADS_ENV, threads);
        let results = par::with_env_threads(|| {
            assert_eq!(par::current_threads(), if cfg!(feature = "parallel") { threads.parse().unwrap() } else { 1 });
            run_suite()
        });
        runs.push(results);
    }
    std::env::remove_var(par::THREADS_ENV);

    let mut all = true;
    let criteria = runs[0].len() - 1;
    for (name, outcome) in &runs[0][..criteria] {
        all &= outcome.pass;
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {name}: {}", outcome.detail);
    }
    for (name, outcome) in &runs[1][..criteria] {
        if !outcome.pass {
            all = false;
            println!("[FAIL] {name} (4 threads): {}", outcome.detail);
        }
    }
    let differing: Vec<&str> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a.1.digest != b.1.digest)
        .map(|(a, _)| a.0)
        .collect();
    let deterministic = differing.is_empty();
    all &= deterministic;
    println!(
        "[{}] 9 determinism: STOP_THREADS=1 vs 4, {} of {} output digests differ{}",
        if deterministic { "PASS" } else { "FAIL" },
        differing.len(),
        runs[0].len(),
        if deterministic { String::new() } else { format!(" ({})", differing.join(", ")) }
    );
    assert!(all, "acceptance criteria failed");
}
