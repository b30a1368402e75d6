//! Synthetic linear associative memory.
//!
//! A memory maps unit keys to value prototypes stored as codebook columns.
//! `W₀` is fitted by ridge least squares so every knowledge key decodes to
//! its prototype; new facts arrive as [`EditBatch`]es of fresh keys.

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{pseudo_inverse, Matrix, ParamMatrix};
use crate::sampling::{self, dot, norm, unit_vector};

/// Attempts allowed when re-sampling the codebook or a key.
const MAX_RETRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub key: Vec<f64>,
    pub value_id: usize,
}

/// Construction parameters for [`build_memory_with`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryParams {
    pub d: usize,
    pub p: usize,
    pub n_knowledge: usize,
    pub c: usize,
    /// Codebook columns must have pairwise `|cos| <` this.
    #[serde(default = "default_margin")]
    pub codebook_margin: f64,
    /// Keys must have pairwise `|cos| <` this.
    #[serde(default = "default_coherence")]
    pub max_key_coherence: f64,
    /// Ridge regulariser of the `W₀` fit.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

fn default_margin() -> f64 {
    0.5
}

fn default_coherence() -> f64 {
    0.9
}

fn default_ridge() -> f64 {
    1e-6
}

impl MemoryParams {
    pub fn new(d: usize, p: usize, n_knowledge: usize, c: usize) -> Self {
        MemoryParams {
            d,
            p,
            n_knowledge,
            c,
            codebook_margin: default_margin(),
            max_key_coherence: default_coherence(),
            ridge: default_ridge(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 8 || self.p < 8 {
            return Err(Error::InvalidArgument(format!(
                "d and p must be at least 8, got d={} p={}",
                self.d, self.p
            )));
        }
        if self.c < 2 || self.c > self.d {
            return Err(Error::InvalidArgument(format!(
                "codebook size c={} must lie in 2..={}",
                self.c, self.d
            )));
        }
        if self.n_knowledge > self.p {
            return Err(Error::InvalidArgument(format!(
                "n_knowledge={} exceeds key dimension p={}",
                self.n_knowledge, self.p
            )));
        }
        if !(self.codebook_margin > 0.0 && self.codebook_margin <= 1.0) {
            return Err(Error::InvalidArgument(
                "codebook_margin must lie in (0, 1]".into(),
            ));
        }
        if !(self.max_key_coherence > 0.0 && self.max_key_coherence <= 1.0) {
            return Err(Error::InvalidArgument(
                "max_key_coherence must lie in (0, 1]".into(),
            ));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidArgument("ridge must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground-truth knowledge bank and the matrix storing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel {
    pub w0: ParamMatrix,
    pub knowledge: Vec<KnowledgeEntry>,
    /// `d × c`, unit-norm value prototypes.
    pub codebook: Matrix,
    /// `p × n₀`; the knowledge keys as columns.
    pub preserved_keys: Matrix,
}

impl MemoryModel {
    pub fn d(&self) -> usize {
        self.w0.rows()
    }

    pub fn p(&self) -> usize {
        self.w0.cols()
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook.cols()
    }

    pub fn codebook_column(&self, id: usize) -> Vec<f64> {
        self.codebook.column(id)
    }
}

pub fn build_memory(
    d: usize,
    p: usize,
    n_knowledge: usize,
    c: usize,
    seed: u64,
) -> Result<MemoryModel> {
    build_memory_with(&MemoryParams::new(d, p, n_knowledge, c), seed)
}

pub fn build_memory_with(params: &MemoryParams, seed: u64) -> Result<MemoryModel> {
    params.validate()?;
    let mut rng = sampling::rng(seed);

    let codebook = sample_codebook(&mut rng, params)?;

    let mut keys: Vec<Vec<f64>> = Vec::with_capacity(params.n_knowledge);
    for _ in 0..params.n_knowledge {
        let k = fresh_key(&mut rng, params.p, &keys, params.max_key_coherence)?;
        keys.push(k);
    }
    let ids: Vec<usize> = (0..params.n_knowledge)
        .map(|_| rand::Rng::random_range(&mut rng, 0..params.c))
        .collect();

    let preserved_keys = Matrix::from_columns(params.p, &keys)?;
    let w0 = fit_ridge(&codebook, &preserved_keys, &ids, params.ridge)?;

    let knowledge: Vec<KnowledgeEntry> = keys
        .into_iter()
        .zip(ids)
        .map(|(key, value_id)| KnowledgeEntry { key, value_id })
        .collect();

    for (i, e) in knowledge.iter().enumerate() {
        if decode(&w0, &e.key, &codebook) != Some(e.value_id) {
            return Err(Error::Construction(format!(
                "knowledge entry {i} does not decode to its value after the ridge fit"
            )));
        }
    }

    Ok(MemoryModel {
        w0,
        knowledge,
        codebook,
        preserved_keys,
    })
}

fn sample_codebook<R: rand::Rng>(rng: &mut R, params: &MemoryParams) -> Result<Matrix> {
    for _ in 0..MAX_RETRIES {
        let cols: Vec<Vec<f64>> = (0..params.c).map(|_| unit_vector(rng, params.d)).collect();
        let separated = (0..cols.len())
            .all(|i| (0..i).all(|j| dot(&cols[i], &cols[j]).abs() < params.codebook_margin));
        if separated {
            return Matrix::from_columns(params.d, &cols);
        }
    }
    Err(Error::Construction(format!(
        "no codebook of {} prototypes in {} dimensions with |cos| < {} after {MAX_RETRIES} draws",
        params.c, params.d, params.codebook_margin
    )))
}

fn fresh_key<R: rand::Rng>(
    rng: &mut R,
    p: usize,
    existing: &[Vec<f64>],
    max_coherence: f64,
) -> Result<Vec<f64>> {
    for _ in 0..MAX_RETRIES {
        let k = unit_vector(rng, p);
        if existing.iter().all(|e| dot(e, &k).abs() < max_coherence) {
            return Ok(k);
        }
    }
    Err(Error::Construction(format!(
        "could not draw a key with coherence < {max_coherence} against {} keys",
        existing.len()
    )))
}

/// `W₀ = C · S · (KᵀK + αI)⁻¹ · Kᵀ` where `S` selects each key's prototype.
///
/// Kept in factored form so `W₀` has the exact rank of the prototype set.
fn fit_ridge(codebook: &Matrix, keys: &Matrix, ids: &[usize], ridge: f64) -> Result<Matrix> {
    let (p, n) = keys.shape();
    let (d, c) = codebook.shape();
    if n == 0 {
        return Ok(Matrix::zeros(d, p));
    }
    let mut gram = &keys.transpose() * keys;
    for i in 0..n {
        gram.set(i, i, gram.get(i, i) + ridge);
    }
    let coeff = &pseudo_inverse(&gram, 0.0)? * &keys.transpose();
    let mut select = Matrix::zeros(c, n);
    for (j, &id) in ids.iter().enumerate() {
        select.set(id, j, 1.0);
    }
    Ok(codebook * &(&select * &coeff))
}

/// Index of the codebook column with the highest cosine similarity to
/// `w·key`; lowest index on ties. `None` when `w·key` is the zero vector.
pub fn decode(w: &Matrix, key: &[f64], codebook: &Matrix) -> Option<usize> {
    let y = w.apply(key);
    decode_output(&y, codebook)
}

/// Decode an output vector directly.
pub fn decode_output(y: &[f64], codebook: &Matrix) -> Option<usize> {
    let ny = norm(y);
    if ny == 0.0 || !ny.is_finite() {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for j in 0..codebook.cols() {
        let col = codebook.column(j);
        let nc = norm(&col);
        if nc == 0.0 {
            continue;
        }
        let cos = dot(&col, y) / (nc * ny);
        if best.is_none_or(|(_, b)| cos > b) {
            best = Some((j, cos));
        }
    }
    best.map(|(j, _)| j)
}

/// Keys, target prototypes and their ids for one editing step.
#[derive(Clone, Debug, PartialEq)]
pub struct EditBatch {
    /// `p × n_E`, unit-norm columns.
    pub keys: Matrix,
    pub target_value_ids: Vec<usize>,
    /// `d × n_E`; the codebook columns of the targets.
    pub values: Matrix,
}

impl EditBatch {
    /// Assemble a batch, filling `values` from the codebook.
    pub fn from_parts(
        keys: Matrix,
        target_value_ids: Vec<usize>,
        codebook: &Matrix,
    ) -> Result<Self> {
        if keys.cols() != target_value_ids.len() {
            return Err(Error::dims(
                "target_value_ids",
                format!("{} ids", keys.cols()),
                format!("{} ids", target_value_ids.len()),
            ));
        }
        if let Some(&bad) = target_value_ids.iter().find(|&&id| id >= codebook.cols()) {
            return Err(Error::InvalidArgument(format!(
                "target id {bad} outside codebook of size {}",
                codebook.cols()
            )));
        }
        let cols: Vec<Vec<f64>> = target_value_ids
            .iter()
            .map(|&id| codebook.column(id))
            .collect();
        let values = Matrix::from_columns(codebook.rows(), &cols)?;
        Ok(EditBatch {
            keys,
            target_value_ids,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn key(&self, j: usize) -> Vec<f64> {
        self.keys.column(j)
    }
}

impl Serialize for EditBatch {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("EditBatch", 2)?;
        st.serialize_field("keys", &self.keys)?;
        st.serialize_field("target_value_ids", &self.target_value_ids)?;
        st.end()
    }
}

/// Serialized form of an [`EditBatch`]; `values` are recovered from the
/// codebook via [`EditBatch::from_parts`].
#[derive(Clone, Debug, Deserialize)]
pub struct EditBatchRecord {
    pub keys: Matrix,
    pub target_value_ids: Vec<usize>,
}

impl EditBatchRecord {
    pub fn into_batch(self, codebook: &Matrix) -> Result<EditBatch> {
        EditBatch::from_parts(self.keys, self.target_value_ids, codebook)
    }
}

/// Fresh-fact edit stream: `⌈n_edits / batch_size⌉` batches of new unit
/// keys, each with a target prototype different from what `W₀` decodes.
pub fn make_edit_stream(
    mem: &MemoryModel,
    n_edits: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<EditBatch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument(
            "batch_size must be at least 1".into(),
        ));
    }
    let c = mem.codebook_size();
    if c < 2 {
        return Err(Error::InvalidArgument(
            "edits need at least two prototypes".into(),
        ));
    }
    let mut rng = sampling::rng(seed);
    let mut seen: Vec<Vec<f64>> = mem.knowledge.iter().map(|e| e.key.clone()).collect();
    let mut batches = Vec::with_capacity(n_edits.div_ceil(batch_size));
    let mut remaining = n_edits;
    while remaining > 0 {
        let width = remaining.min(batch_size);
        let mut keys = Vec::with_capacity(width);
        let mut ids = Vec::with_capacity(width);
        for _ in 0..width {
            let k = fresh_key(&mut rng, mem.p(), &seen, default_coherence())?;
            let current = decode(&mem.w0, &k, &mem.codebook);
            let target = loop {
                let t = rand::Rng::random_range(&mut rng, 0..c);
                if Some(t) != current {
                    break t;
                }
            };
            seen.push(k.clone());
            keys.push(k);
            ids.push(target);
        }
        batches.push(EditBatch::from_parts(
            Matrix::from_columns(mem.p(), &keys)?,
            ids,
            &mem.codebook,
        )?);
        remaining -= width;
    }
    Ok(batches)
}

/// A key with the prototype it should decode to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub key: Vec<f64>,
    pub expected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSuite {
    /// The edited pairs themselves.
    pub in_scope: Vec<Probe>,
    /// Perturbed copies of each edited key.
    pub neighborhood: Vec<Probe>,
    /// Original knowledge, never edited.
    pub out_of_scope: Vec<Probe>,
    pub rho: f64,
}

/// Evaluation probes for a set of applied edits.
///
/// Each neighbour is `normalize(key + noise)` where `noise` is a Gaussian
/// direction scaled to norm `rho`.
pub fn make_eval_suite(
    mem: &MemoryModel,
    applied: &[EditBatch],
    rho: f64,
    m_neighbors: usize,
    seed: u64,
) -> Result<EvalSuite> {
    if !(rho > 0.0 && rho <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "rho must lie in (0, 0.5], got {rho}"
        )));
    }
    if m_neighbors == 0 {
        return Err(Error::InvalidArgument(
            "m_neighbors must be at least 1".into(),
        ));
    }
    let mut rng = sampling::rng(seed);
    let mut in_scope = Vec::new();
    let mut neighborhood = Vec::new();
    for batch in applied {
        for j in 0..batch.len() {
            let key = batch.key(j);
            let expected = batch.target_value_ids[j];
            for _ in 0..m_neighbors {
                let dir = unit_vector(&mut rng, key.len());
                let moved: Vec<f64> = key.iter().zip(&dir).map(|(k, e)| k + rho * e).collect();
                let n = norm(&moved);
                neighborhood.push(Probe {
                    key: moved.into_iter().map(|x| x / n).collect(),
                    expected,
                });
            }
            in_scope.push(Probe { key, expected });
        }
    }
    let out_of_scope = mem
        .knowledge
        .iter()
        .map(|e| Probe {
            key: e.key.clone(),
            expected: e.value_id,
        })
        .collect();
    Ok(EvalSuite {
        in_scope,
        neighborhood,
        out_of_scope,
        rho,
    })
}
