//! `stop`: command-line front end for stop-core.
//!
//! Exit codes: 0 success, 1 invalid input or config, 2 I/O failure or usage error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use stop_core::attention::scores_from_qk;
use stop_core::compare::{compare, standard_variants, to_csv};
use stop_core::diagnostics::{
    estimate_flops, export_heatmap, identify_sink_set, selection_frequency, sink_survival, FlopsModel,
    DEFAULT_SINK_TOP_PCT,
};
use stop_core::npy::{self, Tensor};
use stop_core::pipeline::{greedy_sweep, sweep, ParamGrid};
use stop_core::sink::sink_scores;
use stop_core::synth::{generate, score, GroundTruth, Scenario};
use stop_core::{par, run, AttentionScores, PruneConfig, PruneResult, SpatialSelector, Strategy, TokenGrid};

#[derive(Parser)]
#[command(name = "stop", version, about = "Sink-aware spatial and temporal token pruning for video encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attention scores from query/key tensors ([heads, T, n_v, d_h] each).
    Score(ScoreArgs),
    /// Sink scores of a [T, n_v] attention-score tensor.
    Sink(SinkArgs),
    /// Run the pruning pipeline.
    Prune(PruneArgs),
    /// Run the pipeline over a parameter grid.
    Sweep(SweepArgs),
    /// Frequency, sink-survival, heatmap and FLOPs analyses.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Generate a synthetic video with planted sinks.
    Synth(SynthArgs),
    /// Run the standard strategy matrix and emit a CSV table.
    Compare(CompareArgs),
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    keys: PathBuf,
    /// Output [T, n_v] NPY file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SinkArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = stop_core::sink::DEFAULT_W)]
    w: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Inputs {
    /// [T, n_v, d] token embeddings.
    #[arg(long)]
    tokens: PathBuf,
    /// [T, n_v] attention scores.
    #[arg(long)]
    scores: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Numeric override `name=value`, repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    selector: Option<SpatialSelector>,
    #[arg(long)]
    merge_pruned: Option<bool>,
    #[arg(long)]
    merge_temporal: Option<bool>,
    #[arg(long)]
    sink_aware_temporal: Option<bool>,
    #[arg(long)]
    sttp_per_pair: Option<bool>,
}

#[derive(Args)]
struct PruneArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    config: ConfigArgs,
    /// `name=v1,v2,...`, repeatable.
    #[arg(long = "grid", value_name = "NAME=V1,V2", required = true)]
    grids: Vec<String>,
    /// Coordinate-wise greedy search maximizing salient recall against `--truth`.
    #[arg(long, requires = "truth")]
    greedy: bool,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Analyze {
    /// Per-position selection counts and the derived sink set.
    Frequency {
        #[arg(long)]
        result: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SINK_TOP_PCT)]
        top_pct: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sink-set occurrences kept by two results; the set comes from `--a`.
    Survival {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SINK_TOP_PCT)]
        top_pct: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-frame score matrices as CSV.
    Heatmap {
        #[arg(long)]
        scores: PathBuf,
        /// Patch layout `WxH`.
        #[arg(long, value_parser = parse_grid)]
        grid: Option<(usize, usize)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prefill FLOPs for a visual token count.
    Flops {
        #[arg(long)]
        layers: u64,
        #[arg(long)]
        hidden: u64,
        #[arg(long)]
        ffn: u64,
        #[arg(long, default_value_t = 0)]
        text_tokens: u64,
        #[arg(long)]
        visual: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario JSON; missing keys take their defaults.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Receives tokens.npy, scores.npy, truth.json and scenario.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Ground truth from `synth`; adds recall columns.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let dim = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    Ok((dim(w)?, dim(h)?))
}

struct Failure {
    code: u8,
    message: String,
}

impl From<stop_core::Error> for Failure {
    fn from(e: stop_core::Error) -> Self {
        Self { code: if e.is_io() { 2 } else { 1 }, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self { code: 2, message: format!("io: {e}") }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure { code: 2, message: format!("{}: {e}", path.display()) })?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_tensor(path: &Path) -> CliResult<Tensor> {
    npy::read_tensor(path).map_err(|e| {
        let f = Failure::from(e);
        Failure { message: format!("{}: {}", path.display(), f.message), ..f }
    })
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure { code: 2, message: format!("{}: {e}", path.display()) }),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Pretty JSON with object keys sorted.
fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> CliResult {
    let value = serde_json::to_value(value).map_err(|e| invalid(e.to_string()))?;
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| invalid(e.to_string()))?;
    text.push('\n');
    emit(out, &text)
}

fn load_inputs(inputs: &Inputs) -> CliResult<(TokenGrid, AttentionScores)> {
    let grid = read_tensor(&inputs.tokens)?.into_token_grid()?;
    let ingested = read_tensor(&inputs.scores)?.into_attention_scores()?;
    if ingested.renormalized {
        eprintln!("warning: {} had frames not summing to 1; renormalized", inputs.scores.display());
    }
    Ok((grid, ingested.scores))
}

fn load_config(args: &ConfigArgs) -> CliResult<PruneConfig> {
    let mut cfg: PruneConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => PruneConfig::default(),
    };
    for spec in &args.overrides {
        let (name, value) = spec.split_once('=').ok_or_else(|| invalid(format!("override `{spec}` is not name=value")))?;
        let value: f64 = value.trim().parse().map_err(|_| invalid(format!("override `{spec}` has a non-numeric value")))?;
        cfg.set_param(name.trim(), value)?;
    }
    if let Some(s) = args.strategy {
        cfg.strategy = s;
    }
    if let Some(s) = args.selector {
        cfg.spatial_selector = s;
    }
    if let Some(v) = args.merge_pruned {
        cfg.merge_pruned = v;
    }
    if let Some(v) = args.merge_temporal {
        cfg.merge_temporal = v;
    }
    if let Some(v) = args.sink_aware_temporal {
        cfg.sink_aware_temporal = v;
    }
    if let Some(v) = args.sttp_per_pair {
        cfg.sttp_per_pair = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_score(args: &ScoreArgs) -> CliResult {
    let qk = npy::query_key(read_tensor(&args.queries)?, read_tensor(&args.keys)?)?;
    let scores = scores_from_qk(&qk);
    npy::write_tensor(&Tensor::from_scores(&scores), &args.out)?;
    Ok(())
}

fn cmd_sink(args: &SinkArgs) -> CliResult {
    if !(args.w > 0.0 && args.w.is_finite()) {
        return Err(invalid(format!("w must be finite and > 0, got {}", args.w)));
    }
    let scores = read_tensor(&args.scores)?.into_attention_scores()?.scores;
    emit_json(args.out.as_deref(), &sink_scores(&scores, args.w))
}

fn cmd_prune(args: &PruneArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    let (grid, scores) = load_inputs(&args.inputs)?;
    emit_json(args.out.as_deref(), &run(&grid, &scores, &cfg)?)
}

fn cmd_sweep(args: &SweepArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    let (grid, scores) = load_inputs(&args.inputs)?;
    let mut params = ParamGrid::new();
    for spec in &args.grids {
        params.push_spec(spec)?;
    }
    if !args.greedy {
        return emit_json(args.out.as_deref(), &sweep(&grid, &scores, &cfg, &params)?);
    }
    let truth: GroundTruth = read_json(args.truth.as_deref().expect("clap enforces --truth"))?;
    let outcome = greedy_sweep(&grid, &scores, &cfg, &params, |r| score(r, &truth).map_or(f64::NEG_INFINITY, |m| m.salient_recall))?;
    let evaluated: Vec<serde_json::Value> = outcome
        .evaluated
        .iter()
        .map(|(point, objective)| {
            serde_json::json!({ "params": point.params, "result": point.result, "objective": objective })
        })
        .collect();
    emit_json(args.out.as_deref(), &serde_json::json!({ "best": outcome.best, "evaluated": evaluated }))
}

fn cmd_analyze(what: &Analyze) -> CliResult {
    match what {
        Analyze::Frequency { result, top_pct, out } => {
            let result: PruneResult = read_json(result)?;
            let profile = selection_frequency(&result);
            let sink_set = identify_sink_set(&profile, *top_pct)?;
            emit_json(out.as_deref(), &serde_json::json!({ "profile": profile, "sink_set": sink_set }))
        }
        Analyze::Survival { a, b, top_pct, out } => {
            let a: PruneResult = read_json(a)?;
            let b: PruneResult = read_json(b)?;
            let set = identify_sink_set(&selection_frequency(&a), *top_pct)?;
            emit_json(out.as_deref(), &sink_survival(&a, &b, &set)?)
        }
        Analyze::Heatmap { scores, grid, out } => {
            let scores = read_tensor(scores)?.into_attention_scores()?.scores;
            emit(out.as_deref(), &export_heatmap(&scores, *grid)?)
        }
        Analyze::Flops { layers, hidden, ffn, text_tokens, visual, out } => {
            let model = FlopsModel::new(*layers, *hidden, *ffn, *text_tokens)?;
            let est = estimate_flops(&model, *visual)?;
            // 128-bit counts do not fit a JSON value tree; fields serialize in sorted order
            let mut text = serde_json::to_string_pretty(&est).map_err(|e| invalid(e.to_string()))?;
            text.push('\n');
            emit(out.as_deref(), &text)
        }
    }
}

fn cmd_synth(args: &SynthArgs) -> CliResult {
    let mut scn: Scenario = match &args.scenario {
        Some(path) => read_json(path)?,
        None => Scenario::default(),
    };
    if let Some(seed) = args.seed {
        scn.seed = seed;
    }
    let video = generate(&scn)?;
    fs::create_dir_all(&args.out_dir)?;
    let dir = &args.out_dir;
    npy::write_tensor(&Tensor::from_token_grid(&video.tokens), dir.join("tokens.npy"))?;
    npy::write_tensor(&Tensor::from_scores(&video.scores), dir.join("scores.npy"))?;
    emit_json(Some(&dir.join("truth.json")), &video.truth)?;
    emit_json(Some(&dir.join("scenario.json")), &scn)
}

fn cmd_compare(args: &CompareArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    let (grid, scores) = load_inputs(&args.inputs)?;
    let truth: Option<GroundTruth> = args.truth.as_deref().map(read_json).transpose()?;
    let table = compare(&grid, &scores, &standard_variants(&cfg), truth.as_ref())?;
    emit(args.out.as_deref(), &to_csv(&table))
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Score(a) => cmd_score(a),
        Command::Sink(a) => cmd_sink(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Analyze { what } => cmd_analyze(what),
        Command::Synth(a) => cmd_synth(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match par::with_env_threads(|| dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
