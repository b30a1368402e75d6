//! Experiment configuration: a single JSON document plus `--a.b=value`
//! overrides.

use std::path::{Path, PathBuf};

use mose_core::editors::{EditorSpec, RunOptions};
use mose_core::memory::MemoryParams;
use mose_core::procrustes::{Anchor, EditConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Environment variable that replaces `output.directory`.
pub const OUTPUT_DIR_ENV: &str = "MOSE_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: Dims,
    pub memory: MemorySection,
    pub editing: EditingSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub d: usize,
    pub p: usize,
    /// Hidden width of layer stacks.
    #[serde(default = "default_h")]
    pub h: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySection {
    pub n_knowledge: usize,
    pub c: usize,
    pub seed: u64,
}

/// Matrix the edit chain starts from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// The memory's own `W₀`.
    #[default]
    Memory,
    /// A Haar-random orthogonal matrix drawn from the memory seed.
    Orthogonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditingSection {
    pub editor: String,
    pub n_edits: usize,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default = "one_f")]
    pub lambda: f64,
    #[serde(default)]
    pub rank_tol: f64,
    #[serde(default = "default_reortho")]
    pub reortho_interval: usize,
    #[serde(default)]
    pub anchor: Anchor,
    #[serde(default)]
    pub refresh_preserved: bool,
    /// Relative step size of `random_additive`.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub start: Start,
    pub stream_seed: u64,
    pub editor_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_neighbors")]
    pub m_neighbors: usize,
    /// Reliability is logged every this many steps; 0 logs only the end.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_drift_sample")]
    pub drift_sample: usize,
    #[serde(default = "default_drift_k")]
    pub drift_k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            rho: default_rho(),
            m_neighbors: default_neighbors(),
            eval_every: default_eval_every(),
            drift_sample: default_drift_sample(),
            drift_k: default_drift_k(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Jsonl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_dir(),
            formats: all_formats(),
        }
    }
}

fn default_h() -> usize {
    128
}
fn default_depth() -> usize {
    5
}
fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn default_reortho() -> usize {
    100
}
fn default_scale() -> f64 {
    0.05
}
fn default_rho() -> f64 {
    0.1
}
fn default_neighbors() -> usize {
    4
}
fn default_eval_every() -> usize {
    10
}
fn default_drift_sample() -> usize {
    mose_core::drift::DEFAULT_SAMPLE
}
fn default_drift_k() -> usize {
    2
}
fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn all_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Jsonl]
}

fn field(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    /// Parse, apply overrides and the output-directory variable, validate.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: invalid JSON: {e}", path.display())))?;
        Self::from_value(
            value,
            overrides,
            std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from),
        )
    }

    pub fn from_value(
        mut value: Value,
        overrides: &[String],
        out_dir: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        if let Some(dir) = out_dir {
            set_path(
                &mut value,
                "output.directory",
                Value::String(dir.display().to_string()),
            )?;
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            field(&path, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, v) in [
            ("dims.d", self.dims.d),
            ("dims.p", self.dims.p),
            ("dims.h", self.dims.h),
        ] {
            if v == 0 {
                return Err(field(name, "must be positive"));
            }
        }
        if self.dims.depth < 3 {
            return Err(field("dims.depth", "must be at least 3"));
        }
        self.memory_params()
            .validate()
            .map_err(|e| field("memory", e))?;
        let ed = &self.editing;
        if !EditorSpec::NAMES.contains(&ed.editor.as_str()) {
            return Err(field(
                "editing.editor",
                format!(
                    "unknown editor `{}`; expected one of {}",
                    ed.editor,
                    EditorSpec::NAMES.join(", ")
                ),
            ));
        }
        if ed.n_edits == 0 {
            return Err(field("editing.n_edits", "must be positive"));
        }
        if ed.batch_size == 0 {
            return Err(field("editing.batch_size", "must be positive"));
        }
        if !(ed.lambda > 0.0 && ed.lambda.is_finite()) {
            return Err(field("editing.lambda", "must be positive and finite"));
        }
        if !(ed.rank_tol >= 0.0 && ed.rank_tol.is_finite()) {
            return Err(field("editing.rank_tol", "must be non-negative"));
        }
        if !(ed.scale > 0.0 && ed.scale.is_finite()) {
            return Err(field("editing.scale", "must be positive and finite"));
        }
        if ed.start == Start::Orthogonal && self.dims.d != self.dims.p {
            return Err(field("editing.start", "an orthogonal start needs d = p"));
        }
        let ev = &self.eval;
        if !(ev.rho > 0.0 && ev.rho <= 0.5) {
            return Err(field("eval.rho", "must lie in (0, 0.5]"));
        }
        if ev.m_neighbors == 0 {
            return Err(field("eval.m_neighbors", "must be positive"));
        }
        if ev.drift_sample == 0 {
            return Err(field("eval.drift_sample", "must be positive"));
        }
        if ev.drift_k == 0 || ev.drift_k > self.dims.d {
            return Err(field(
                "eval.drift_k",
                format!("must lie in [1, {}]", self.dims.d),
            ));
        }
        if self.output.formats.is_empty() {
            return Err(field("output.formats", "must name at least one format"));
        }
        Ok(())
    }

    pub fn memory_params(&self) -> MemoryParams {
        MemoryParams::new(
            self.dims.d,
            self.dims.p,
            self.memory.n_knowledge,
            self.memory.c,
        )
    }

    pub fn edit_config(&self) -> EditConfig {
        EditConfig {
            lambda: self.editing.lambda,
            rank_tol: self.editing.rank_tol,
            anchor: self.editing.anchor,
            refresh_preserved: self.editing.refresh_preserved,
        }
    }

    pub fn editor_spec(&self, name: &str) -> Result<EditorSpec, CliError> {
        EditorSpec::from_name(
            name,
            self.edit_config(),
            self.editing.scale,
            self.editing.editor_seed,
        )
        .map_err(|e| field("editing.editor", e))
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            reortho_interval: self.editing.reortho_interval,
        }
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}

/// Apply one `--a.b.c=value` flag. The value is read as JSON when it
/// parses and as a plain string otherwise.
pub fn apply_override(root: &mut Value, flag: &str) -> Result<(), CliError> {
    let body = flag.strip_prefix("--").ok_or_else(|| {
        CliError::Config(format!("override `{flag}` must look like --key.path=value"))
    })?;
    let (path, raw) = body
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{flag}` is missing `=value`")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!(
            "override `{flag}` has an empty key"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(root, path, value)
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| field(&parts[..i].join("."), "is not an object"))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one part")
}
