//! Orthogonal Procrustes formulation of a multiplicative edit.
//!
//! An edit asks for an orthogonal `R` minimising
//! `λ‖R·W·K₀ − T₀‖² + ‖R·W·K_E − V_E‖²`, where `T₀` is the preserved output
//! block (`W·K₀` itself unless anchored elsewhere). Stacking the two blocks
//! side by side gives `min ‖R·A − B‖_F` with
//! `A = [√λ·W·K₀ | W·K_E]` and `B = [√λ·T₀ | V_E]`, solved by `R = U·Vᵀ`
//! from the SVD of `B·Aᵀ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, frobenius_norm, Matrix, OrthogonalMatrix};

/// Which matrix the preservation block is measured against on later steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// Preserve the outputs of the matrix being edited.
    #[default]
    Current,
    /// Preserve the outputs of the unedited matrix `W₀`.
    W0,
}

/// Objective weights shared by the MOSE and additive editors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditConfig {
    /// Preservation weight λ.
    pub lambda: f64,
    /// Singular-value cutoff for pseudoinverses; 0 selects the default rule.
    #[serde(default)]
    pub rank_tol: f64,
    #[serde(default)]
    pub anchor: Anchor,
    /// Append each applied batch's keys to the preserved set.
    #[serde(default)]
    pub refresh_preserved: bool,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            lambda: 1.0,
            rank_tol: 0.0,
            anchor: Anchor::Current,
            refresh_preserved: false,
        }
    }
}

impl EditConfig {
    pub fn with_lambda(lambda: f64) -> Result<Self> {
        let cfg = EditConfig {
            lambda,
            ..EditConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        if !(self.rank_tol >= 0.0 && self.rank_tol.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rank_tol must be non-negative, got {}",
                self.rank_tol
            )));
        }
        Ok(())
    }
}

/// `min over orthogonal R of ‖R·a − b‖_F`.
///
/// The first `n_preserve` columns form the (√λ-weighted) preservation block,
/// the rest the edit block.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcrustesProblem {
    a: Matrix,
    b: Matrix,
    n_preserve: usize,
    lambda: f64,
}

impl ProcrustesProblem {
    /// A bare problem with no preservation block.
    pub fn from_blocks(a: Matrix, b: Matrix) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(Error::dims(
                "b",
                format!("{}x{}", a.rows(), a.cols()),
                format!("{}x{}", b.rows(), b.cols()),
            ));
        }
        if a.rows() == 0 {
            return Err(Error::InvalidArgument("empty Procrustes problem".into()));
        }
        Ok(ProcrustesProblem {
            a,
            b,
            n_preserve: 0,
            lambda: 1.0,
        })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn n_preserve(&self) -> usize {
        self.n_preserve
    }

    pub fn n_edit(&self) -> usize {
        self.a.cols() - self.n_preserve
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    /// Same problem with both blocks multiplied by `c`.
    pub fn scaled(&self, c: f64) -> ProcrustesProblem {
        ProcrustesProblem {
            a: self.a.scale(c),
            b: self.b.scale(c),
            ..self.clone()
        }
    }
}

fn check_shape(operand: &'static str, m: &Matrix, rows: usize, cols: Option<usize>) -> Result<()> {
    let ok = m.rows() == rows && cols.is_none_or(|c| m.cols() == c);
    if ok {
        return Ok(());
    }
    let expected = match cols {
        Some(c) => format!("{rows}x{c}"),
        None => format!("{rows} rows"),
    };
    Err(Error::dims(
        operand,
        expected,
        format!("{}x{}", m.rows(), m.cols()),
    ))
}

/// Build `A = [√λ·W·K₀ | W·K_E]`, `B = [√λ·W·K₀ | V_E]`.
pub fn assemble(
    w: &Matrix,
    k0: &Matrix,
    ke: &Matrix,
    ve: &Matrix,
    cfg: &EditConfig,
) -> Result<ProcrustesProblem> {
    check_shape("k0", k0, w.cols(), None)?;
    let preserved = w * k0;
    assemble_anchored(w, k0, &preserved, ke, ve, cfg)
}

/// As [`assemble`], with an explicit preservation target `T₀` (`d × n₀`)
/// in place of `W·K₀`.
pub fn assemble_anchored(
    w: &Matrix,
    k0: &Matrix,
    preserve_target: &Matrix,
    ke: &Matrix,
    ve: &Matrix,
    cfg: &EditConfig,
) -> Result<ProcrustesProblem> {
    cfg.validate()?;
    let (d, p) = w.shape();
    if d == 0 || p == 0 {
        return Err(Error::dims("w", "non-empty matrix", format!("{d}x{p}")));
    }
    check_shape("k0", k0, p, None)?;
    check_shape("ke", ke, p, None)?;
    if ke.cols() == 0 {
        return Err(Error::dims("ke", "at least one edit column", "0 columns"));
    }
    check_shape("ve", ve, d, Some(ke.cols()))?;
    check_shape("preserve_target", preserve_target, d, Some(k0.cols()))?;

    let root = cfg.lambda.sqrt();
    let source_keep = (w * k0).scale(root);
    let target_keep = preserve_target.scale(root);
    let a = source_keep.hstack(&(w * ke))?;
    let b = target_keep.hstack(ve)?;
    Ok(ProcrustesProblem {
        a,
        b,
        n_preserve: k0.cols(),
        lambda: cfg.lambda,
    })
}

/// Closed-form minimiser `R = U·Vᵀ` with `U·Σ·Vᵀ = svd(B·Aᵀ)`.
///
/// The result ranges over the full orthogonal group, so `det R = −1` is
/// possible. When `B·Aᵀ` is rank deficient the minimiser is not unique and
/// the representative is the one fixed by the SVD sign convention.
pub fn solve(prob: &ProcrustesProblem) -> Result<OrthogonalMatrix> {
    let m = &prob.b * &prob.a.transpose();
    let dec = linalg::svd(&m)?;
    OrthogonalMatrix::new(&dec.u * &dec.v_t)
}

/// `‖R·a − b‖²_F`, the stacked objective.
pub fn objective(prob: &ProcrustesProblem, r: &OrthogonalMatrix) -> f64 {
    let diff = &(r.matrix() * &prob.a) - &prob.b;
    frobenius_norm(&diff).powi(2)
}

/// Unweighted errors of the two objective terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residual {
    /// `‖R·W·K₀ − T₀‖_F` over the preservation block.
    pub preserve_err: f64,
    /// `‖R·W·K_E − V_E‖_F` over the edit block.
    pub edit_err: f64,
}

impl Residual {
    /// `λ·preserve_err² + edit_err²`.
    pub fn weighted(&self, lambda: f64) -> f64 {
        lambda * self.preserve_err.powi(2) + self.edit_err.powi(2)
    }
}

pub fn residual(prob: &ProcrustesProblem, r: &OrthogonalMatrix) -> Result<Residual> {
    if r.dim() != prob.dim() {
        return Err(Error::dims(
            "r",
            format!("{0}x{0}", prob.dim()),
            format!("{0}x{0}", r.dim()),
        ));
    }
    let diff = &(r.matrix() * &prob.a) - &prob.b;
    let n0 = prob.n_preserve;
    let keep = frobenius_norm(&diff.column_range(0, n0)) / prob.lambda.sqrt();
    let edit = frobenius_norm(&diff.column_range(n0, diff.cols()));
    Ok(Residual {
        preserve_err: keep,
        edit_err: edit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthogonal;
    use crate::sampling::{gaussian_matrix, rng};

    #[test]
    fn assemble_pure_edit_toward_current_outputs() {
        let w = gaussian_matrix(&mut rng(1), 5, 5);
        let k0 = Matrix::zeros(5, 0);
        let prob = assemble(&w, &k0, &Matrix::identity(5), &w, &EditConfig::default()).unwrap();
        assert_eq!(prob.a(), &w);
        assert_eq!(prob.b(), &w);
        assert_eq!(prob.n_preserve(), 0);
    }

    #[test]
    fn assemble_zero_preserved_key() {
        let mut r = rng(2);
        let w = gaussian_matrix(&mut r, 3, 4);
        let ke = gaussian_matrix(&mut r, 4, 1);
        let ve = gaussian_matrix(&mut r, 3, 1);
        let prob = assemble(&w, &Matrix::zeros(4, 1), &ke, &ve, &EditConfig::default()).unwrap();
        assert_eq!(prob.a().column(0), vec![0.0; 3]);
        assert_eq!(prob.b().column(0), vec![0.0; 3]);
        assert_eq!(prob.a().column(1), (&w * &ke).column(0));
        assert_eq!(prob.b().column(1), ve.column(0));
    }

    #[test]
    fn assemble_shapes_seed11() {
        let mut r = rng(11);
        let w = gaussian_matrix(&mut r, 4, 4);
        let k0 = gaussian_matrix(&mut r, 4, 8);
        let ke = gaussian_matrix(&mut r, 4, 2);
        let ve = gaussian_matrix(&mut r, 4, 2);
        let prob = assemble(&w, &k0, &ke, &ve, &EditConfig::default()).unwrap();
        assert_eq!(prob.a().shape(), (4, 10));
        assert_eq!(prob.b().shape(), (4, 10));
        assert_eq!(prob.a().column_range(0, 8), prob.b().column_range(0, 8));
    }

    #[test]
    fn assemble_names_bad_operand() {
        let w = Matrix::zeros(3, 4);
        let ok_k = Matrix::zeros(4, 1);
        let cfg = EditConfig::default();
        let err =
            assemble(&w, &Matrix::zeros(5, 2), &ok_k, &Matrix::zeros(3, 1), &cfg).unwrap_err();
        assert!(
            matches!(err, Error::Dimension { operand: "k0", .. }),
            "{err}"
        );
        let err =
            assemble(&w, &ok_k, &Matrix::zeros(3, 1), &Matrix::zeros(3, 1), &cfg).unwrap_err();
        assert!(
            matches!(err, Error::Dimension { operand: "ke", .. }),
            "{err}"
        );
        let err = assemble(&w, &ok_k, &ok_k, &Matrix::zeros(3, 2), &cfg).unwrap_err();
        assert!(
            matches!(err, Error::Dimension { operand: "ve", .. }),
            "{err}"
        );
        let err =
            assemble(&w, &ok_k, &Matrix::zeros(4, 0), &Matrix::zeros(3, 0), &cfg).unwrap_err();
        assert!(
            matches!(err, Error::Dimension { operand: "ke", .. }),
            "{err}"
        );
    }

    #[test]
    fn rejects_non_positive_lambda() {
        assert!(EditConfig::with_lambda(0.0).is_err());
        assert!(EditConfig::with_lambda(-1.0).is_err());
        assert!(EditConfig::with_lambda(f64::NAN).is_err());
    }

    #[test]
    fn solve_identity_when_b_equals_a() {
        let a = gaussian_matrix(&mut rng(4), 4, 9);
        let prob = ProcrustesProblem::from_blocks(a.clone(), a).unwrap();
        let r = solve(&prob).unwrap();
        assert!(r.matrix().max_abs_diff(&Matrix::identity(4)) < 1e-9);
    }

    #[test]
    fn solve_recovers_rotation() {
        let a = gaussian_matrix(&mut rng(5), 6, 10);
        let q = random_orthogonal(6, 77);
        let prob = ProcrustesProblem::from_blocks(a.clone(), q.matrix() * &a).unwrap();
        let r = solve(&prob).unwrap();
        assert!(r.matrix().max_abs_diff(q.matrix()) < 1e-8);
        let res = residual(&prob, &r).unwrap();
        assert!(res.preserve_err < 1e-8 && res.edit_err < 1e-8);
    }

    #[test]
    fn solve_rank_deficient_is_still_orthogonal() {
        let a = gaussian_matrix(&mut rng(6), 5, 1);
        let b = gaussian_matrix(&mut rng(7), 5, 1);
        let r = solve(&ProcrustesProblem::from_blocks(a.clone(), b).unwrap()).unwrap();
        assert!(r.orthogonality_error() < 1e-10);
        let zero =
            ProcrustesProblem::from_blocks(Matrix::zeros(3, 2), Matrix::zeros(3, 2)).unwrap();
        assert!(solve(&zero).unwrap().orthogonality_error() < 1e-10);
    }

    #[test]
    fn residual_at_identity() {
        let mut r = rng(8);
        let w = gaussian_matrix(&mut r, 4, 5);
        let k0 = gaussian_matrix(&mut r, 5, 3);
        let ke = gaussian_matrix(&mut r, 5, 2);
        let ve = gaussian_matrix(&mut r, 4, 2);
        let prob = assemble(&w, &k0, &ke, &ve, &EditConfig::with_lambda(2.5).unwrap()).unwrap();
        let res = residual(&prob, &OrthogonalMatrix::identity(4)).unwrap();
        assert_eq!(res.preserve_err, 0.0);
        let expect = frobenius_norm(&(&(&w * &ke) - &ve));
        assert!((res.edit_err - expect).abs() < 1e-12);
    }

    #[test]
    fn residual_decomposes_objective_seed3() {
        let mut r = rng(3);
        let w = gaussian_matrix(&mut r, 2, 3);
        let k0 = gaussian_matrix(&mut r, 3, 2);
        let ke = gaussian_matrix(&mut r, 3, 2);
        let ve = gaussian_matrix(&mut r, 2, 2);
        let cfg = EditConfig::with_lambda(0.7).unwrap();
        let prob = assemble(&w, &k0, &ke, &ve, &cfg).unwrap();
        let rot = solve(&prob).unwrap();
        let res = residual(&prob, &rot).unwrap();
        let total = objective(&prob, &rot);
        assert!((res.weighted(cfg.lambda) - total).abs() <= 1e-9 * total.max(1e-300));
    }

    #[test]
    fn anchored_preservation_uses_target() {
        let mut r = rng(12);
        let w = gaussian_matrix(&mut r, 3, 3);
        let k0 = gaussian_matrix(&mut r, 3, 2);
        let t0 = gaussian_matrix(&mut r, 3, 2);
        let ke = gaussian_matrix(&mut r, 3, 1);
        let ve = gaussian_matrix(&mut r, 3, 1);
        let cfg = EditConfig::with_lambda(4.0).unwrap();
        let prob = assemble_anchored(&w, &k0, &t0, &ke, &ve, &cfg).unwrap();
        assert!(prob.b().column_range(0, 2).max_abs_diff(&t0.scale(2.0)) < 1e-15);
        let res = residual(&prob, &OrthogonalMatrix::identity(3)).unwrap();
        let expect = frobenius_norm(&(&(&w * &k0) - &t0));
        assert!((res.preserve_err - expect).abs() < 1e-12);
    }
}
