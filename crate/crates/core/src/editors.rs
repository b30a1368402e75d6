//! Editing paradigms behind one interface.
//!
//! * MOSE: left-multiply by the orthogonal Procrustes solution.
//! * Additive: add the unconstrained minimiser of the same objective.
//! * Random orthogonal / random additive: stress models of the two
//!   paradigms, independent of any edit target.
//! * Identity: leaves the matrix alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, frobenius_norm, Matrix, OrthogonalMatrix, ParamMatrix};
use crate::memory::{EditBatch, MemoryModel};
use crate::procrustes::{self, Anchor, EditConfig};
use crate::sampling::{self, derive_seed};
use crate::stability::{self, StabilityRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Multiplicative,
    Additive,
    Identity,
}

/// One applied edit.
#[derive(Clone, Debug, PartialEq)]
pub struct EditStep {
    pub step_index: usize,
    pub update_kind: UpdateKind,
    /// `R` for multiplicative steps, `ΔW` for additive ones, `I` otherwise.
    pub update: Matrix,
    pub w_after: ParamMatrix,
}

/// Registered editors and their parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EditorSpec {
    Mose(EditConfig),
    Additive(EditConfig),
    RandomOrthogonal { seed: u64 },
    RandomAdditive { scale: f64, seed: u64 },
    Identity,
}

impl EditorSpec {
    pub const NAMES: [&'static str; 5] = [
        "mose",
        "additive",
        "random_orthogonal",
        "random_additive",
        "identity",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EditorSpec::Mose(_) => "mose",
            EditorSpec::Additive(_) => "additive",
            EditorSpec::RandomOrthogonal { .. } => "random_orthogonal",
            EditorSpec::RandomAdditive { .. } => "random_additive",
            EditorSpec::Identity => "identity",
        }
    }

    /// Build a registered editor by name.
    pub fn from_name(name: &str, cfg: EditConfig, scale: f64, seed: u64) -> Result<Self> {
        let spec = match name {
            "mose" => EditorSpec::Mose(cfg),
            "additive" => EditorSpec::Additive(cfg),
            "random_orthogonal" => EditorSpec::RandomOrthogonal { seed },
            "random_additive" => EditorSpec::RandomAdditive { scale, seed },
            "identity" => EditorSpec::Identity,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown editor `{other}`; expected one of {:?}",
                    Self::NAMES
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EditorSpec::Mose(cfg) | EditorSpec::Additive(cfg) => cfg.validate(),
            EditorSpec::RandomAdditive { scale, .. } if !(*scale > 0.0 && scale.is_finite()) => {
                Err(Error::InvalidArgument(format!(
                    "scale must be positive, got {scale}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn is_multiplicative(&self) -> bool {
        matches!(
            self,
            EditorSpec::Mose(_) | EditorSpec::RandomOrthogonal { .. }
        )
    }
}

fn step(kind: UpdateKind, update: Matrix, w_after: Matrix) -> EditStep {
    EditStep {
        step_index: 0,
        update_kind: kind,
        update,
        w_after,
    }
}

/// `λ‖W·K₀ − T₀‖² + ‖W·K_E − V_E‖²`.
pub fn edit_objective(
    w: &Matrix,
    k0: &Matrix,
    preserve_target: &Matrix,
    ke: &Matrix,
    ve: &Matrix,
    lambda: f64,
) -> f64 {
    let keep = frobenius_norm(&(&(w * k0) - preserve_target));
    let edit = frobenius_norm(&(&(w * ke) - ve));
    lambda * keep * keep + edit * edit
}

/// Orthogonal update preserving `W·K₀` and pulling `W·K_E` toward `V_E`.
pub fn mose_edit(
    w: &ParamMatrix,
    k0: &Matrix,
    batch: &EditBatch,
    cfg: &EditConfig,
) -> Result<EditStep> {
    let target = w.try_mul(k0, "k0")?;
    mose_edit_anchored(w, k0, &target, &batch.keys, &batch.values, cfg)
}

/// [`mose_edit`] with an explicit preservation target `T₀`.
pub fn mose_edit_anchored(
    w: &ParamMatrix,
    k0: &Matrix,
    preserve_target: &Matrix,
    ke: &Matrix,
    ve: &Matrix,
    cfg: &EditConfig,
) -> Result<EditStep> {
    let prob = procrustes::assemble_anchored(w, k0, preserve_target, ke, ve, cfg)?;
    let r = procrustes::solve(&prob)?;
    let w_after = r.matrix() * w;
    Ok(step(UpdateKind::Multiplicative, r.into_matrix(), w_after))
}

/// Additive update `ΔW` minimising the edit objective over all matrices.
///
/// `ΔW = [λ(T₀ − W·K₀)·K₀ᵀ + (V_E − W·K_E)·K_Eᵀ] · (λ·K₀K₀ᵀ + K_E·K_Eᵀ)⁺`,
/// the minimum-norm solution of the normal equations.
pub fn additive_edit(
    w: &ParamMatrix,
    k0: &Matrix,
    batch: &EditBatch,
    cfg: &EditConfig,
) -> Result<EditStep> {
    let target = w.try_mul(k0, "k0")?;
    additive_edit_anchored(w, k0, &target, &batch.keys, &batch.values, cfg)
}

pub fn additive_edit_anchored(
    w: &ParamMatrix,
    k0: &Matrix,
    preserve_target: &Matrix,
    ke: &Matrix,
    ve: &Matrix,
    cfg: &EditConfig,
) -> Result<EditStep> {
    // Shape validation shared with the multiplicative form.
    procrustes::assemble_anchored(w, k0, preserve_target, ke, ve, cfg)?;
    let lambda = cfg.lambda;
    let normal = &(k0 * &k0.transpose()).scale(lambda) + &(ke * &ke.transpose());
    let keep_resid = &(preserve_target - &(w * k0)) * &k0.transpose();
    let edit_resid = &(ve - &(w * ke)) * &ke.transpose();
    let rhs = &keep_resid.scale(lambda) + &edit_resid;
    let delta = &rhs * &linalg::pseudo_inverse(&normal, cfg.rank_tol)?;
    let w_after = w + &delta;
    Ok(step(UpdateKind::Additive, delta, w_after))
}

/// Left-multiply by a Haar-random orthogonal matrix.
pub fn random_orthogonal_edit(w: &ParamMatrix, seed: u64) -> EditStep {
    let r = linalg::random_orthogonal(w.rows(), seed);
    let w_after = r.matrix() * w;
    step(UpdateKind::Multiplicative, r.into_matrix(), w_after)
}

/// Add a Gaussian `ΔW` with `‖ΔW‖_F = scale·‖w‖_F`.
pub fn random_additive_edit(w: &ParamMatrix, scale: f64, seed: u64) -> Result<EditStep> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let mut rng = sampling::rng(seed);
    let g = sampling::gaussian_matrix(&mut rng, w.rows(), w.cols());
    let gn = frobenius_norm(&g);
    let delta = if gn > 0.0 {
        g.scale(scale * frobenius_norm(w) / gn)
    } else {
        Matrix::zeros(w.rows(), w.cols())
    };
    let w_after = w + &delta;
    Ok(step(UpdateKind::Additive, delta, w_after))
}

pub fn identity_edit(w: &ParamMatrix) -> EditStep {
    step(UpdateKind::Identity, Matrix::identity(w.rows()), w.clone())
}

/// Options for [`run_sequential`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Re-project the accumulated rotation onto the orthogonal group after
    /// this many multiplicative steps; 0 disables.
    pub reortho_interval: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            reortho_interval: 100,
        }
    }
}

/// Callback invoked after every applied step.
pub trait StepObserver {
    fn observe(&mut self, step: &EditStep, record: &StabilityRecord) -> Result<()>;
}

impl<F: FnMut(&EditStep, &StabilityRecord) -> Result<()>> StepObserver for F {
    fn observe(&mut self, step: &EditStep, record: &StabilityRecord) -> Result<()> {
        self(step, record)
    }
}

/// Observer that ignores every step.
pub struct NoObserver;

impl StepObserver for NoObserver {
    fn observe(&mut self, _: &EditStep, _: &StabilityRecord) -> Result<()> {
        Ok(())
    }
}

/// First failure of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    /// 1-based index of the step that failed.
    pub step: usize,
    pub error: Error,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub final_w: ParamMatrix,
    pub steps: Vec<EditStep>,
    /// Step 0 (the unedited matrix) followed by one record per applied step.
    pub records: Vec<StabilityRecord>,
    /// Product of all multiplicative updates, newest on the left.
    pub total_rotation: Option<OrthogonalMatrix>,
    pub failure: Option<RunFailure>,
}

impl RunOutcome {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

/// Fold `editor` over `stream` starting from `mem.w0`.
///
/// Multiplicative chains keep the running product `R_total` and set
/// `w = R_total·W₀`, which equals `R_i·w_{i−1}` while keeping `w` in the
/// exact column space of `W₀`. Every `reortho_interval` steps `R_total` is
/// replaced by its polar factor.
pub fn run_sequential(
    editor: &EditorSpec,
    mem: &MemoryModel,
    stream: &[EditBatch],
    opts: &RunOptions,
    observer: &mut dyn StepObserver,
) -> Result<RunOutcome> {
    editor.validate()?;
    if stream.is_empty() {
        return Err(Error::InvalidArgument("edit stream is empty".into()));
    }
    let w0 = &mem.w0;
    let mut w = w0.clone();
    let mut preserved = mem.preserved_keys.clone();
    let mut anchor_target = w0 * &preserved;
    let mut total = editor
        .is_multiplicative()
        .then(|| OrthogonalMatrix::identity(w0.rows()));
    let mut steps = Vec::with_capacity(stream.len());
    let mut records = Vec::with_capacity(stream.len() + 1);
    records.push(stability::record(0, w0, w0)?);

    for (i, batch) in stream.iter().enumerate() {
        let index = i + 1;
        let applied = apply(editor, &w, &preserved, &anchor_target, batch, index);
        let mut st = match applied {
            Ok(st) => st,
            Err(error) => {
                return Ok(RunOutcome {
                    final_w: w,
                    steps,
                    records,
                    total_rotation: total,
                    failure: Some(RunFailure { step: index, error }),
                })
            }
        };
        st.step_index = index;

        if let Some(t) = total.as_mut() {
            let mut next = OrthogonalMatrix::new_unchecked(&st.update * t.matrix());
            if opts.reortho_interval > 0 && index % opts.reortho_interval == 0 {
                next = match linalg::nearest_orthogonal(next.matrix()) {
                    Ok(r) => r,
                    Err(error) => {
                        return Ok(RunOutcome {
                            final_w: w,
                            steps,
                            records,
                            total_rotation: total,
                            failure: Some(RunFailure { step: index, error }),
                        })
                    }
                };
            }
            st.w_after = next.matrix() * w0;
            *t = next;
        }

        if let EditorSpec::Mose(cfg) | EditorSpec::Additive(cfg) = editor {
            if cfg.refresh_preserved {
                // Newly preserved keys are anchored at the outputs they were edited toward.
                preserved = preserved.hstack(&batch.keys)?;
                anchor_target = anchor_target.hstack(&batch.values)?;
            }
        }

        let rec = match stability::record(index, &st.w_after, w0) {
            Ok(r) => r,
            Err(error) => {
                return Ok(RunOutcome {
                    final_w: w,
                    steps,
                    records,
                    total_rotation: total,
                    failure: Some(RunFailure { step: index, error }),
                })
            }
        };
        if let Err(error) = observer.observe(&st, &rec) {
            return Ok(RunOutcome {
                final_w: st.w_after.clone(),
                steps,
                records,
                total_rotation: total,
                failure: Some(RunFailure { step: index, error }),
            });
        }
        w = st.w_after.clone();
        records.push(rec);
        steps.push(st);
    }

    Ok(RunOutcome {
        final_w: w,
        steps,
        records,
        total_rotation: total,
        failure: None,
    })
}

fn apply(
    editor: &EditorSpec,
    w: &Matrix,
    preserved: &Matrix,
    anchor_target: &Matrix,
    batch: &EditBatch,
    index: usize,
) -> Result<EditStep> {
    match editor {
        EditorSpec::Mose(cfg) => {
            let target = preservation_target(cfg, w, preserved, anchor_target);
            mose_edit_anchored(w, preserved, &target, &batch.keys, &batch.values, cfg)
        }
        EditorSpec::Additive(cfg) => {
            let target = preservation_target(cfg, w, preserved, anchor_target);
            additive_edit_anchored(w, preserved, &target, &batch.keys, &batch.values, cfg)
        }
        EditorSpec::RandomOrthogonal { seed } => {
            Ok(random_orthogonal_edit(w, derive_seed(*seed, index as u64)))
        }
        EditorSpec::RandomAdditive { scale, seed } => {
            random_additive_edit(w, *scale, derive_seed(*seed, index as u64))
        }
        EditorSpec::Identity => Ok(identity_edit(w)),
    }
}

fn preservation_target(
    cfg: &EditConfig,
    w: &Matrix,
    preserved: &Matrix,
    anchor_target: &Matrix,
) -> Matrix {
    match cfg.anchor {
        Anchor::Current => w * preserved,
        Anchor::W0 => anchor_target.clone(),
    }
}

/// One line of `steps.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub kind: UpdateKind,
    pub norm: f64,
    /// `null` when the condition number is infinite.
    pub cond: Option<f64>,
    pub deviation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability: Option<f64>,
}

impl StepLog {
    pub fn new(kind: UpdateKind, record: &StabilityRecord, reliability: Option<f64>) -> Self {
        StepLog {
            step: record.step,
            kind,
            norm: record.frob_norm,
            cond: record.cond_number.is_finite().then_some(record.cond_number),
            deviation: record.deviation,
            reliability,
        }
    }
}
