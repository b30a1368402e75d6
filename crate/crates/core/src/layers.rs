//! Layer selection on a toy feed-forward stack.
//!
//! Each layer is `x ↦ W_proj · σ(W_fc · x)`. A layer is scored by how
//! strongly its hidden units respond to the edit prompt, and the edit
//! target is the layer whose residual `V_E − W₀·K_E`, normalised by
//! `‖W₀‖₂ · ‖σ(W_fc·x)‖₂`, is smallest. The chosen layer and its immediate
//! neighbours are then edited.

use serde::{Deserialize, Serialize};

use crate::editors::mose_edit_anchored;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, spectral_norm, Matrix};
use crate::procrustes::EditConfig;
use crate::sampling::{self, derive_seed, gaussian_matrix, norm, unit_vector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// What each layer sees when scoring a prompt.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringInput {
    /// The prompt propagated through the preceding layers.
    #[default]
    Propagate,
    /// The raw prompt at every layer.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `h × in`.
    pub w_fc: Matrix,
    /// `out × h`; the editable matrix.
    pub w_proj: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub scoring_input: ScoringInput,
}

impl LayerStack {
    pub fn new(
        layers: Vec<Layer>,
        activation: Activation,
        scoring_input: ScoringInput,
    ) -> Result<Self> {
        let stack = LayerStack {
            layers,
            activation,
            scoring_input,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "a stack needs at least 3 layers, got {}",
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.w_proj.cols() != layer.w_fc.rows() {
                return Err(Error::dims(
                    "w_proj",
                    format!("{} columns at layer {l}", layer.w_fc.rows()),
                    format!("{} columns", layer.w_proj.cols()),
                ));
            }
            if let Some(next) = self.layers.get(l + 1) {
                if next.w_fc.cols() != layer.w_proj.rows() {
                    return Err(Error::dims(
                        "w_fc",
                        format!("{} columns at layer {}", layer.w_proj.rows(), l + 1),
                        format!("{} columns", next.w_fc.cols()),
                    ));
                }
            }
            if self.scoring_input == ScoringInput::Raw
                && layer.w_fc.cols() != self.layers[0].w_fc.cols()
            {
                return Err(Error::dims(
                    "w_fc",
                    format!("{} columns for raw scoring", self.layers[0].w_fc.cols()),
                    format!("{} columns at layer {l}", layer.w_fc.cols()),
                ));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w_fc.cols()
    }

    /// `σ(W_fc · x)` for one layer.
    pub fn hidden(&self, l: usize, x: &[f64]) -> Vec<f64> {
        self.layers[l]
            .w_fc
            .apply(x)
            .into_iter()
            .map(|v| self.activation.apply(v))
            .collect()
    }

    /// The input each layer scores, per [`ScoringInput`].
    pub fn layer_inputs(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut inputs = Vec::with_capacity(self.depth());
        let mut cur = x.to_vec();
        for l in 0..self.depth() {
            match self.scoring_input {
                ScoringInput::Raw => inputs.push(x.to_vec()),
                ScoringInput::Propagate => {
                    inputs.push(cur.clone());
                    cur = self.layers[l].w_proj.apply(&self.hidden(l, &cur));
                }
            }
        }
        inputs
    }

    /// Hidden activations of `prompts` at every layer, as `h × n` key
    /// matrices.
    pub fn encode_keys(&self, prompts: &[Vec<f64>]) -> Result<Vec<Matrix>> {
        let per_prompt: Vec<Vec<Vec<f64>>> = prompts
            .iter()
            .map(|x| {
                self.layer_inputs(x)
                    .iter()
                    .enumerate()
                    .map(|(l, xl)| self.hidden(l, xl))
                    .collect()
            })
            .collect();
        (0..self.depth())
            .map(|l| {
                let cols: Vec<Vec<f64>> = per_prompt.iter().map(|p| p[l].clone()).collect();
                Matrix::from_columns(self.layers[l].w_fc.rows(), &cols)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer_index: usize,
    /// `‖σ(W_fc · x_l)‖₂`.
    pub activation_norm: f64,
    /// Normalised residual; `None` when the layer was excluded.
    pub normalized_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationScores {
    pub scores: Vec<LayerScore>,
    /// Every layer's activation is exactly zero.
    pub all_zero: bool,
}

impl ActivationScores {
    /// Layer with the strongest activation; lowest index on ties.
    pub fn strongest(&self) -> usize {
        let mut best = 0;
        for (l, s) in self.scores.iter().enumerate() {
            if s.activation_norm > self.scores[best].activation_norm {
                best = l;
            }
        }
        best
    }
}

fn check_prompt(stack: &LayerStack, x: &[f64]) -> Result<()> {
    if x.len() != stack.input_dim() {
        return Err(Error::dims(
            "x",
            format!("length {}", stack.input_dim()),
            format!("length {}", x.len()),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("prompt has non-finite entries".into()));
    }
    if norm(x) == 0.0 {
        return Err(Error::InvalidArgument("prompt must be nonzero".into()));
    }
    Ok(())
}

pub fn score_activations(stack: &LayerStack, x: &[f64]) -> Result<ActivationScores> {
    check_prompt(stack, x)?;
    let scores: Vec<LayerScore> = stack
        .layer_inputs(x)
        .iter()
        .enumerate()
        .map(|(l, xl)| LayerScore {
            layer_index: l,
            activation_norm: norm(&stack.hidden(l, xl)),
            normalized_residual: None,
        })
        .collect();
    let all_zero = scores.iter().all(|s| s.activation_norm == 0.0);
    Ok(ActivationScores { scores, all_zero })
}

/// Edit keys and target values at one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEdit {
    /// `h × n_E`.
    pub keys: Matrix,
    /// `out × n_E`.
    pub values: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSelection {
    pub layer: usize,
    pub scores: Vec<LayerScore>,
    /// Activations were zero everywhere, so only `‖W₀‖₂` normalised the
    /// residuals.
    pub residual_only: bool,
}

/// `argmin_l ‖(V_E^l − W₀^l·K_E^l) / (‖W₀^l‖₂ · ‖σ(W_fc^l·x_l)‖₂)‖_F`.
///
/// Layers with a zero denominator are skipped; ties go to the lowest index.
pub fn select_layer(
    stack: &LayerStack,
    x: &[f64],
    per_layer_edits: &[LayerEdit],
) -> Result<LayerSelection> {
    if per_layer_edits.len() != stack.depth() {
        return Err(Error::dims(
            "per_layer_edits",
            format!("{} entries", stack.depth()),
            format!("{} entries", per_layer_edits.len()),
        ));
    }
    let act = score_activations(stack, x)?;
    let mut scores = act.scores.clone();
    let mut best: Option<(usize, f64)> = None;
    for (l, (layer, edit)) in stack.layers.iter().zip(per_layer_edits).enumerate() {
        let w = &layer.w_proj;
        if edit.keys.rows() != w.cols()
            || edit.values.rows() != w.rows()
            || edit.keys.cols() != edit.values.cols()
        {
            return Err(Error::dims(
                "per_layer_edits",
                format!("keys {}xn, values {}xn at layer {l}", w.cols(), w.rows()),
                format!(
                    "keys {}x{}, values {}x{}",
                    edit.keys.rows(),
                    edit.keys.cols(),
                    edit.values.rows(),
                    edit.values.cols()
                ),
            ));
        }
        let strength = if act.all_zero {
            1.0
        } else {
            scores[l].activation_norm
        };
        let denom = spectral_norm(w)? * strength;
        if denom == 0.0 || !denom.is_finite() {
            continue;
        }
        let resid = frobenius_norm(&(&edit.values - &(w * &edit.keys))) / denom;
        scores[l].normalized_residual = Some(resid);
        if best.is_none_or(|(_, b)| resid < b) {
            best = Some((l, resid));
        }
    }
    let (layer, _) =
        best.ok_or_else(|| Error::Selection("every layer has a zero normaliser".into()))?;
    Ok(LayerSelection {
        layer,
        scores,
        residual_only: act.all_zero,
    })
}

/// `{l*−1, l*, l*+1} ∩ [0, depth)`, ascending.
pub fn neighbors(l_star: usize, depth: usize) -> Result<Vec<usize>> {
    if l_star >= depth {
        return Err(Error::InvalidArgument(format!(
            "layer {l_star} outside depth {depth}"
        )));
    }
    Ok((l_star.saturating_sub(1)..=(l_star + 1).min(depth - 1)).collect())
}

/// Per-layer MOSE edit of `w_proj`. `preserved` gives each target layer's
/// `K₀` (`h × n₀`).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerEditRequest {
    pub layer: usize,
    pub preserved: Matrix,
    pub edit: LayerEdit,
}

/// Apply an independent MOSE edit to each requested layer; all other layers
/// are copied unchanged.
pub fn edit_layers(
    stack: &LayerStack,
    requests: &[LayerEditRequest],
    cfg: &EditConfig,
) -> Result<LayerStack> {
    let mut out = stack.clone();
    for req in requests {
        let layer = out.layers.get_mut(req.layer).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "layer {} outside depth {}",
                req.layer,
                stack.depth()
            ))
        })?;
        let w = &stack.layers[req.layer].w_proj;
        let target = w.try_mul(&req.preserved, "preserved")?;
        let st = mose_edit_anchored(
            w,
            &req.preserved,
            &target,
            &req.edit.keys,
            &req.edit.values,
            cfg,
        )?;
        layer.w_proj = st.w_after;
    }
    Ok(out)
}

/// A random stack whose `planted` layer both reacts most strongly to the
/// prompt and nearly satisfies the edits already.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedCase {
    pub stack: LayerStack,
    pub prompt: Vec<f64>,
    pub prompts: Vec<Vec<f64>>,
    pub edits: Vec<LayerEdit>,
    pub planted: usize,
}

/// Parameters of [`planted_stack`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantedParams {
    pub depth: usize,
    pub width: usize,
    pub hidden: usize,
    pub n_edits: usize,
    /// Gain of the planted `W_fc` row aligned with the layer input.
    pub plant_gain: f64,
    /// Residual size at the planted layer, relative to `‖W₀·K_E‖_F`.
    pub planted_residual: f64,
    /// Range of relative residual sizes at the other layers.
    pub other_residual: (f64, f64),
}

impl Default for PlantedParams {
    fn default() -> Self {
        PlantedParams {
            depth: 5,
            width: 16,
            hidden: 32,
            n_edits: 4,
            plant_gain: 3.0,
            planted_residual: 0.1,
            other_residual: (0.5, 1.5),
        }
    }
}

pub fn planted_stack(params: &PlantedParams, planted: usize, seed: u64) -> Result<PlantedCase> {
    if planted >= params.depth {
        return Err(Error::InvalidArgument(format!(
            "planted layer {planted} outside depth {}",
            params.depth
        )));
    }
    let mut rng = sampling::rng(seed);
    let (d, h) = (params.width, params.hidden);
    let prompt = unit_vector(&mut rng, d);

    let mut layers = Vec::with_capacity(params.depth);
    let mut x = prompt.clone();
    for l in 0..params.depth {
        let mut w_fc = gaussian_matrix(&mut rng, h, d).scale(1.0 / (d as f64).sqrt());
        if l == planted {
            let nx = norm(&x);
            for (j, xj) in x.iter().enumerate() {
                w_fc.set(0, j, params.plant_gain * (d as f64).sqrt() * xj / nx);
            }
        }
        let w_proj = gaussian_matrix(&mut rng, d, h).scale(1.0 / (h as f64).sqrt());
        let layer = Layer { w_fc, w_proj };
        let hidden: Vec<f64> = layer
            .w_fc
            .apply(&x)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let next = layer.w_proj.apply(&hidden);
        let nn = norm(&next);
        x = if nn > 0.0 {
            next.iter().map(|v| v / nn).collect()
        } else {
            next
        };
        layers.push(layer);
    }
    let stack = LayerStack::new(layers, Activation::Relu, ScoringInput::Propagate)?;

    // Edit prompts cluster around the scored prompt.
    let mut prompts = vec![prompt.clone()];
    for _ in 1..params.n_edits {
        let e = unit_vector(&mut rng, d);
        let p: Vec<f64> = prompt.iter().zip(&e).map(|(a, b)| a + 0.3 * b).collect();
        let n = norm(&p);
        prompts.push(p.into_iter().map(|v| v / n).collect());
    }
    let keys = stack.encode_keys(&prompts)?;

    let mut edits = Vec::with_capacity(params.depth);
    for (l, k) in keys.into_iter().enumerate() {
        let w = &stack.layers[l].w_proj;
        let out = w * &k;
        let rel = if l == planted {
            params.planted_residual
        } else {
            let (lo, hi) = params.other_residual;
            lo + (hi - lo) * rand::Rng::random::<f64>(&mut rng)
        };
        let noise = gaussian_matrix(
            &mut sampling::rng(derive_seed(seed, l as u64)),
            d,
            params.n_edits,
        );
        let scale = rel * frobenius_norm(&out).max(1e-12) / frobenius_norm(&noise);
        let values = &out + &noise.scale(scale);
        edits.push(LayerEdit { keys: k, values });
    }

    Ok(PlantedCase {
        stack,
        prompt,
        prompts,
        edits,
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::rng;

    fn random_stack(depth: usize, seed: u64) -> LayerStack {
        let mut r = rng(seed);
        let layers = (0..depth)
            .map(|_| Layer {
                w_fc: gaussian_matrix(&mut r, 6, 4),
                w_proj: gaussian_matrix(&mut r, 4, 6),
            })
            .collect();
        LayerStack::new(layers, Activation::Relu, ScoringInput::Propagate).unwrap()
    }

    #[test]
    fn neighbors_clamp_at_edges() {
        assert_eq!(neighbors(0, 5).unwrap(), vec![0, 1]);
        assert_eq!(neighbors(2, 5).unwrap(), vec![1, 2, 3]);
        assert_eq!(neighbors(4, 5).unwrap(), vec![3, 4]);
        assert!(neighbors(5, 5).is_err());
    }

    #[test]
    fn stack_validation() {
        assert!(LayerStack::new(
            random_stack(3, 0).layers[..2].to_vec(),
            Activation::Relu,
            ScoringInput::Propagate
        )
        .is_err());
        let mut s = random_stack(3, 0);
        s.layers[1].w_fc = Matrix::zeros(6, 5);
        assert!(s.validate().is_err());
    }

    #[test]
    fn planted_row_wins_activation_scoring() {
        // Every other layer's W_fc is orthogonal to the raw prompt.
        let mut r = rng(31);
        let x = unit_vector(&mut r, 8);
        let proj_out = |m: Matrix| {
            let mut m = m;
            for i in 0..m.rows() {
                let row: Vec<f64> = (0..m.cols()).map(|j| m.get(i, j)).collect();
                let c = crate::sampling::dot(&row, &x);
                for j in 0..m.cols() {
                    m.set(i, j, row[j] - c * x[j]);
                }
            }
            m
        };
        let mut layers = Vec::new();
        for l in 0..5 {
            let mut w_fc = proj_out(gaussian_matrix(&mut r, 6, 8));
            if l == 2 {
                for (j, xj) in x.iter().enumerate() {
                    w_fc.set(0, j, *xj);
                }
            }
            layers.push(Layer {
                w_fc,
                w_proj: gaussian_matrix(&mut r, 8, 6),
            });
        }
        let stack = LayerStack::new(layers, Activation::Relu, ScoringInput::Raw).unwrap();
        let s = score_activations(&stack, &x).unwrap();
        for (l, sc) in s.scores.iter().enumerate() {
            if l != 2 {
                assert!(
                    sc.activation_norm < 1e-12,
                    "layer {l}: {}",
                    sc.activation_norm
                );
            }
        }
        assert!((s.scores[2].activation_norm - 1.0).abs() < 1e-12);
        assert_eq!(s.strongest(), 2);
        assert!(!s.all_zero);
    }

    #[test]
    fn zero_prompt_rejected() {
        let s = random_stack(3, 1);
        assert!(score_activations(&s, &[0.0; 4]).is_err());
        assert!(score_activations(&s, &[1.0; 3]).is_err());
    }

    #[test]
    fn identical_layers_tie_to_first() {
        let mut r = rng(5);
        let w = gaussian_matrix(&mut r, 4, 4);
        let layer = Layer {
            w_fc: w.clone(),
            w_proj: Matrix::identity(4),
        };
        let stack =
            LayerStack::new(vec![layer; 4], Activation::Identity, ScoringInput::Raw).unwrap();
        let x = unit_vector(&mut r, 4);
        let s = score_activations(&stack, &x).unwrap();
        assert!(s
            .scores
            .windows(2)
            .all(|p| p[0].activation_norm == p[1].activation_norm));
        let edit = LayerEdit {
            keys: gaussian_matrix(&mut r, 4, 2),
            values: gaussian_matrix(&mut r, 4, 2),
        };
        let sel = select_layer(&stack, &x, &vec![edit; 4]).unwrap();
        assert_eq!(sel.layer, 0);
    }

    #[test]
    fn satisfied_layer_is_selected() {
        let stack = random_stack(5, 3);
        let mut r = rng(4);
        let x = unit_vector(&mut r, 4);
        let edits: Vec<LayerEdit> = (0..5)
            .map(|l| {
                let keys = gaussian_matrix(&mut r, 6, 2);
                let values = if l == 3 {
                    &stack.layers[l].w_proj * &keys
                } else {
                    gaussian_matrix(&mut r, 4, 2)
                };
                LayerEdit { keys, values }
            })
            .collect();
        let sel = select_layer(&stack, &x, &edits).unwrap();
        if sel.scores[3].normalized_residual.is_some() {
            assert_eq!(sel.layer, 3);
        }
    }

    #[test]
    fn zero_activation_layers_are_skipped() {
        let mut stack = random_stack(3, 7);
        stack.scoring_input = ScoringInput::Raw;
        stack.layers[0].w_fc = Matrix::zeros(6, 4);
        let mut r = rng(8);
        let x = unit_vector(&mut r, 4);
        let edits: Vec<LayerEdit> = (0..3)
            .map(|_| LayerEdit {
                keys: Matrix::zeros(6, 1),
                values: Matrix::zeros(4, 1),
            })
            .collect();
        let sel = select_layer(&stack, &x, &edits).unwrap();
        assert_eq!(sel.scores[0].normalized_residual, None);
        assert_ne!(sel.layer, 0);
        assert!(select_layer(&stack, &x, &edits[..2]).is_err());
    }

    #[test]
    fn all_zero_activations_fall_back_to_residual() {
        let mut stack = random_stack(3, 9);
        stack.scoring_input = ScoringInput::Raw;
        for l in &mut stack.layers {
            l.w_fc = Matrix::zeros(6, 4);
        }
        let mut r = rng(10);
        let x = unit_vector(&mut r, 4);
        let edits: Vec<LayerEdit> = (0..3)
            .map(|l| LayerEdit {
                keys: Matrix::zeros(6, 1),
                values: Matrix::from_columns(4, &[vec![l as f64 + 1.0; 4]]).unwrap(),
            })
            .collect();
        let scores = score_activations(&stack, &x).unwrap();
        assert!(scores.all_zero);
        let sel = select_layer(&stack, &x, &edits).unwrap();
        assert!(sel.residual_only);
        assert!(sel.scores.iter().all(|s| s.normalized_residual.is_some()));

        let mut dead = stack.clone();
        for l in &mut dead.layers {
            l.w_proj = Matrix::zeros(4, 6);
        }
        assert!(matches!(
            select_layer(&dead, &x, &edits),
            Err(Error::Selection(_))
        ));
    }

    #[test]
    fn planted_case_selects_planted_layer() {
        let case = planted_stack(&PlantedParams::default(), 2, 13).unwrap();
        let sel = select_layer(&case.stack, &case.prompt, &case.edits).unwrap();
        assert_eq!(sel.layer, 2);
    }

    #[test]
    fn edit_layers_touches_only_targets() {
        let case = planted_stack(&PlantedParams::default(), 1, 3).unwrap();
        assert_eq!(
            edit_layers(&case.stack, &[], &EditConfig::default()).unwrap(),
            case.stack
        );
        let targets = neighbors(1, 5).unwrap();
        let reqs: Vec<LayerEditRequest> = targets
            .iter()
            .map(|&l| LayerEditRequest {
                layer: l,
                preserved: Matrix::zeros(32, 0),
                edit: case.edits[l].clone(),
            })
            .collect();
        let out = edit_layers(&case.stack, &reqs, &EditConfig::default()).unwrap();
        for l in 0..5 {
            let before = &case.stack.layers[l];
            let after = &out.layers[l];
            assert_eq!(before.w_fc.to_bytes(), after.w_fc.to_bytes());
            if targets.contains(&l) {
                let n0 = frobenius_norm(&before.w_proj);
                assert!((frobenius_norm(&after.w_proj) - n0).abs() < 1e-9 * n0);
                assert_ne!(before.w_proj, after.w_proj);
            } else {
                assert_eq!(before.w_proj.to_bytes(), after.w_proj.to_bytes());
            }
        }
    }

    #[test]
    fn zero_change_edit_keeps_edited_outputs() {
        let case = planted_stack(&PlantedParams::default(), 1, 4).unwrap();
        let w = &case.stack.layers[1].w_proj;
        let keys = case.edits[1].keys.clone();
        let req = LayerEditRequest {
            layer: 1,
            preserved: Matrix::zeros(32, 0),
            edit: LayerEdit {
                values: w * &keys,
                keys,
            },
        };
        let out = edit_layers(&case.stack, &[req], &EditConfig::default()).unwrap();
        // R is pinned only on the span of W·K_E; outputs there are unchanged.
        let before = w * &case.edits[1].keys;
        let after = &out.layers[1].w_proj * &case.edits[1].keys;
        assert!(after.max_abs_diff(&before) < 1e-8 * before.max_abs().max(1.0));
    }

    #[test]
    fn stack_json_layout() {
        let s = random_stack(3, 2);
        let v = serde_json::to_value(&s).unwrap();
        let first = &v["layers"][0];
        assert!(first.get("w_fc").is_some() && first.get("w_proj").is_some());
        let back: LayerStack = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}
