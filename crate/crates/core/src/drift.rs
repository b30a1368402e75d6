//! Representation drift of edited values.
//!
//! For each edit `j`, compares the value produced by the matrix carrying
//! only that step's update with the value produced by the final matrix of
//! the chain, after a joint PCA projection of both clouds.

use std::io::{Read, Write};

use crate::editors::{EditStep, UpdateKind};
use crate::error::{Error, Result};
use crate::linalg::{pca_project, Matrix};
use crate::memory::{EditBatch, MemoryModel};
use crate::stability::fmt_f64;

/// Default number of edits sampled from the start of the chain.
pub const DEFAULT_SAMPLE: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct DriftAnalysis {
    /// Position of each sampled edit in the flattened stream.
    pub edit_index: Vec<usize>,
    /// `d × n`; single-update outputs.
    pub current: Matrix,
    /// `d × n`; final-matrix outputs.
    pub cumulative: Matrix,
    /// `k × 2n`; current columns first, then cumulative.
    pub projected: Matrix,
    /// Centroid distance over pooled mean radius, in the projected space.
    pub separation: f64,
}

fn single_update_matrix(step: &EditStep, w0: &Matrix) -> Matrix {
    match step.update_kind {
        UpdateKind::Multiplicative => &step.update * w0,
        UpdateKind::Additive => w0 + &step.update,
        UpdateKind::Identity => w0.clone(),
    }
}

/// Drift of the first `sample` edits (all of them when `None`).
pub fn drift_analysis(
    mem: &MemoryModel,
    steps: &[EditStep],
    stream: &[EditBatch],
    k: usize,
    sample: Option<usize>,
) -> Result<DriftAnalysis> {
    if steps.len() != stream.len() {
        return Err(Error::dims(
            "steps",
            format!("{} steps (one per batch)", stream.len()),
            format!("{} steps", steps.len()),
        ));
    }
    let last = steps
        .last()
        .ok_or_else(|| Error::InvalidArgument("drift analysis needs at least one step".into()))?;
    let limit = sample.unwrap_or(usize::MAX);
    let final_w = &last.w_after;

    let mut index = Vec::new();
    let mut current = Vec::new();
    let mut cumulative = Vec::new();
    'outer: for (step, batch) in steps.iter().zip(stream) {
        if step.w_after.shape() != mem.w0.shape() || batch.keys.rows() != mem.p() {
            return Err(Error::dims(
                "stream",
                format!("{}x{} memory", mem.d(), mem.p()),
                format!("step {} of another shape", step.step_index),
            ));
        }
        let single = single_update_matrix(step, &mem.w0);
        for j in 0..batch.len() {
            if index.len() == limit {
                break 'outer;
            }
            let key = batch.key(j);
            index.push(index.len());
            current.push(single.apply(&key));
            cumulative.push(final_w.apply(&key));
        }
    }
    let d = mem.d();
    let n = index.len();
    let current = Matrix::from_columns(d, &current)?;
    let cumulative = Matrix::from_columns(d, &cumulative)?;
    let projected = pca_project(&current.hstack(&cumulative)?, k)?;
    let separation = separation(
        &projected.column_range(0, n),
        &projected.column_range(n, 2 * n),
    );
    Ok(DriftAnalysis {
        edit_index: index,
        current,
        cumulative,
        projected,
        separation,
    })
}

fn centroid(cloud: &Matrix) -> Vec<f64> {
    let n = cloud.cols() as f64;
    (0..cloud.rows())
        .map(|i| (0..cloud.cols()).map(|j| cloud.get(i, j)).sum::<f64>() / n)
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn mean_radius(cloud: &Matrix, center: &[f64]) -> f64 {
    let total: f64 = cloud.columns().iter().map(|c| distance(c, center)).sum();
    total / cloud.cols() as f64
}

/// `‖c₁ − c₂‖ / ((r₁ + r₂) / 2)`; 0 when the centroids coincide.
pub fn separation(a: &Matrix, b: &Matrix) -> f64 {
    let ca = centroid(a);
    let cb = centroid(b);
    let gap = distance(&ca, &cb);
    if gap == 0.0 {
        return 0.0;
    }
    let pooled = (mean_radius(a, &ca) + mean_radius(b, &cb)) / 2.0;
    gap / pooled
}

/// One row of `drift.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftRow {
    pub edit_index: usize,
    pub regime: String,
    pub coords: Vec<f64>,
}

fn header(k: usize) -> Vec<String> {
    let mut h = vec!["edit_index".to_string(), "regime".to_string()];
    h.extend((1..=k).map(|i| format!("pc{i}")));
    h
}

/// `edit_index,regime,pc1,pc2[,...]`, current rows first.
pub fn write_csv<W: Write>(out: W, analysis: &DriftAnalysis) -> Result<()> {
    let k = analysis.projected.rows();
    let n = analysis.edit_index.len();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(k))?;
    for (offset, regime) in [(0, "current"), (n, "cumulative")] {
        for (j, idx) in analysis.edit_index.iter().enumerate() {
            let mut row = vec![idx.to_string(), regime.to_string()];
            row.extend((0..k).map(|c| fmt_f64(analysis.projected.get(c, offset + j))));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<DriftRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let head: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if head.len() < 3 || head != header(head.len() - 2) {
        return Err(Error::Io(format!("unexpected drift header {head:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let edit_index = rec[0]
            .parse()
            .map_err(|e| Error::Io(format!("bad edit_index `{}`: {e}", &rec[0])))?;
        let regime = rec[1].to_string();
        if regime != "current" && regime != "cumulative" {
            return Err(Error::Io(format!("unknown regime `{regime}`")));
        }
        let coords = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Io(format!("bad coordinate `{s}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(DriftRow {
            edit_index,
            regime,
            coords,
        });
    }
    Ok(rows)
}
