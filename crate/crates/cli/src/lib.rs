//! Seeded experiment runner: `run`, `compare` and the `figure2` preset.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use mose_core::drift::{self, DriftAnalysis};
use mose_core::editors::{run_sequential, EditStep, EditorSpec, RunOutcome, StepLog};
use mose_core::linalg::random_orthogonal;
use mose_core::memory::{
    build_memory_with, decode, make_edit_stream, make_eval_suite, EditBatch, EvalSuite, MemoryModel,
};
use mose_core::metrics::{evaluate, MetricsReport};
use mose_core::sampling::derive_seed;
use mose_core::stability::{self, StabilityRecord, StabilitySummary};
use serde::Serialize;

pub use config::{ExperimentConfig, Format, Start};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure at step {step}: {message}")]
    Numerical { step: usize, message: String },
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

/// Inputs shared by every editor of one experiment.
pub struct Prepared {
    pub mem: MemoryModel,
    pub stream: Vec<EditBatch>,
    pub suite: EvalSuite,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    let mut mem = build_memory_with(&cfg.memory_params(), cfg.memory.seed)
        .map_err(|e| CliError::Config(format!("memory: {e}")))?;
    if cfg.editing.start == Start::Orthogonal {
        mem.w0 = random_orthogonal(cfg.dims.d, derive_seed(cfg.memory.seed, 1)).into_matrix();
    }
    let stream = make_edit_stream(
        &mem,
        cfg.editing.n_edits,
        cfg.editing.batch_size,
        cfg.editing.stream_seed,
    )
    .map_err(|e| CliError::Config(format!("editing: {e}")))?;
    let suite = make_eval_suite(
        &mem,
        &stream,
        cfg.eval.rho,
        cfg.eval.m_neighbors,
        derive_seed(cfg.editing.stream_seed, 1),
    )
    .map_err(|e| CliError::Config(format!("eval: {e}")))?;
    Ok(Prepared { mem, stream, suite })
}

/// Everything produced by one editor's chain.
pub struct EditorRun {
    pub label: String,
    pub spec: EditorSpec,
    pub outcome: RunOutcome,
    pub logs: Vec<StepLog>,
    pub metrics: Option<MetricsReport>,
    pub drift: Option<DriftAnalysis>,
}

impl EditorRun {
    pub fn failure(&self) -> Option<CliError> {
        self.outcome.failure.as_ref().map(|f| CliError::Numerical {
            step: f.step,
            message: format!("{}: {}", self.label, f.error),
        })
    }
}

fn in_scope_reliability(
    w: &mose_core::Matrix,
    suite: &EvalSuite,
    applied: usize,
    prep: &Prepared,
) -> Option<f64> {
    let probes = &suite.in_scope[..applied.min(suite.in_scope.len())];
    if probes.is_empty() {
        return None;
    }
    let hits = probes
        .iter()
        .filter(|p| decode(w, &p.key, &prep.mem.codebook) == Some(p.expected))
        .count();
    Some(hits as f64 / probes.len() as f64)
}

pub fn run_editor(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    label: String,
    spec: EditorSpec,
) -> Result<EditorRun, CliError> {
    let n_steps = prep.stream.len();
    let every = cfg.eval.eval_every;
    let mut logs = Vec::with_capacity(n_steps);
    let mut applied = 0;
    let mut observer = |step: &EditStep, record: &StabilityRecord| {
        applied += prep.stream[step.step_index - 1].len();
        let due =
            step.step_index == n_steps || (every > 0 && step.step_index.is_multiple_of(every));
        let reliability = if due {
            in_scope_reliability(&step.w_after, &prep.suite, applied, prep)
        } else {
            None
        };
        logs.push(StepLog::new(step.update_kind, record, reliability));
        Ok(())
    };
    let outcome = run_sequential(
        &spec,
        &prep.mem,
        &prep.stream,
        &cfg.run_options(),
        &mut observer,
    )
    .map_err(|e| CliError::Config(format!("editing: {e}")))?;
    let (metrics, drift) = if outcome.is_complete() {
        let metrics = evaluate(
            &outcome.final_w,
            &prep.mem.w0,
            &prep.suite,
            &prep.mem.codebook,
        );
        let drift = drift::drift_analysis(
            &prep.mem,
            &outcome.steps,
            &prep.stream,
            cfg.eval.drift_k,
            Some(cfg.eval.drift_sample),
        )
        .map_err(|e| CliError::Numerical {
            step: n_steps,
            message: format!("{label}: drift analysis: {e}"),
        })?;
        (Some(metrics), Some(drift))
    } else {
        (None, None)
    };
    Ok(EditorRun {
        label,
        spec,
        outcome,
        logs,
        metrics,
        drift,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(io)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Write one editor's artifacts into `dir`.
pub fn write_run(cfg: &ExperimentConfig, dir: &Path, run: &EditorRun) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    if cfg.wants(Format::Csv) {
        let mut w = create(&dir.join("stability.csv"))?;
        stability::write_csv(&mut w, &run.outcome.records).map_err(io)?;
        if let Some(d) = &run.drift {
            drift::write_csv(create(&dir.join("drift.csv"))?, d).map_err(io)?;
        }
    }
    if cfg.wants(Format::Json) {
        if let Some(m) = &run.metrics {
            write_json(&dir.join("metrics.json"), m)?;
        }
    }
    if cfg.wants(Format::Jsonl) {
        let mut w = create(&dir.join("steps.jsonl"))?;
        for log in &run.logs {
            serde_json::to_writer(&mut w, log).map_err(io)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write_json(&dir.join("config.json"), cfg)
}

/// `run`: one editor, artifacts directly in the output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<EditorRun, CliError> {
    let prep = prepare(cfg)?;
    let spec = cfg.editor_spec(&cfg.editing.editor)?;
    let run = run_editor(cfg, &prep, cfg.editing.editor.clone(), spec)?;
    let dir = &cfg.output.directory;
    write_config(cfg, dir)?;
    write_run(cfg, dir, &run)?;
    match run.failure() {
        Some(e) => Err(e),
        None => Ok(run),
    }
}

/// Per-editor entry of `summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct SummaryEntry {
    pub editor: String,
    pub spec: EditorSpec,
    pub steps_completed: usize,
    pub failed_at_step: Option<usize>,
    pub metrics: Option<MetricsReport>,
    pub stability: StabilitySummary,
    pub drift_separation: Option<f64>,
}

/// Unique labels: an editor named once keeps its name, repeats get
/// `_1`, `_2`, ... in order.
pub fn editor_labels(names: &[String]) -> Vec<String> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if names.iter().filter(|m| *m == n).count() == 1 {
                n.clone()
            } else {
                let k = names[..=i].iter().filter(|m| *m == n).count();
                format!("{n}_{k}")
            }
        })
        .collect()
}

/// `compare`: every editor on the same memory, stream and seeds.
///
/// Writes `<label>/` per editor, a merged `stability.csv` with an `editor`
/// column, `summary.json` and `config.json`.
pub fn compare(cfg: &ExperimentConfig, editors: &[String]) -> Result<Vec<SummaryEntry>, CliError> {
    if editors.len() < 2 {
        return Err(CliError::Config(
            "editors: compare needs at least two editors".into(),
        ));
    }
    let specs = editors
        .iter()
        .map(|n| cfg.editor_spec(n))
        .collect::<Result<Vec<_>, _>>()?;
    let labels = editor_labels(editors);
    let prep = prepare(cfg)?;

    let runs: Vec<Result<EditorRun, CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = labels
            .iter()
            .zip(&specs)
            .map(|(label, spec)| {
                let prep = &prep;
                s.spawn(move || run_editor(cfg, prep, label.clone(), spec.clone()))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("editor thread panicked"))
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;

    let dir = &cfg.output.directory;
    write_config(cfg, dir)?;
    for r in &runs {
        write_run(cfg, &dir.join(&r.label), r)?;
    }
    if cfg.wants(Format::Csv) {
        let merged: Vec<(String, Vec<StabilityRecord>)> = runs
            .iter()
            .map(|r| (r.label.clone(), r.outcome.records.clone()))
            .collect();
        let mut w = create(&dir.join("stability.csv"))?;
        stability::write_labelled_csv(&mut w, &merged).map_err(io)?;
    }
    let summary = runs
        .iter()
        .map(|r| {
            Ok(SummaryEntry {
                editor: r.label.clone(),
                spec: r.spec.clone(),
                steps_completed: r.outcome.steps.len(),
                failed_at_step: r.outcome.failure.as_ref().map(|f| f.step),
                metrics: r.metrics,
                stability: stability::summarize(&r.outcome.records).map_err(io)?,
                drift_separation: r.drift.as_ref().map(|d| d.separation),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_json(&dir.join("summary.json"), &summary)?;
    if let Some(e) = runs.iter().find_map(EditorRun::failure) {
        return Err(e);
    }
    Ok(summary)
}

/// Editors of the `figure2` preset.
pub const FIGURE2_EDITORS: [&str; 3] = ["mose", "random_orthogonal", "random_additive"];

/// 500 chained updates at `d = p = 64` from a Haar-random orthogonal start.
pub fn figure2_config(seed: u64) -> serde_json::Value {
    serde_json::json!({
        "dims": {"d": 64, "p": 64},
        "memory": {"n_knowledge": 32, "c": 8, "seed": seed},
        "editing": {
            "editor": "random_additive",
            "n_edits": 500,
            "batch_size": 1,
            "scale": 0.05,
            "start": "orthogonal",
            "stream_seed": derive_seed(seed, 2),
            "editor_seed": derive_seed(seed, 3)
        },
        "eval": {"eval_every": 50},
        "output": {"directory": "figure2"}
    })
}
