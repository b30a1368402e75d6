//! Per-step numerical-stability diagnostics of an edited matrix.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, frobenius_norm, Matrix};

pub const CSV_HEADER: [&str; 5] = [
    "step",
    "frob_norm",
    "spectral_norm",
    "cond_number",
    "deviation",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub step: usize,
    pub frob_norm: f64,
    /// `+inf` when the matrix is zero.
    pub cond_number: f64,
    /// `‖w − w₀‖_F`.
    pub deviation: f64,
    pub spectral_norm: f64,
}

/// Diagnostics of `w` after `step` edits, from a full SVD.
pub fn record(step: usize, w: &Matrix, w0: &Matrix) -> Result<StabilityRecord> {
    if w.shape() != w0.shape() {
        return Err(Error::dims(
            "w0",
            format!("{}x{}", w.rows(), w.cols()),
            format!("{}x{}", w0.rows(), w0.cols()),
        ));
    }
    let frob = frobenius_norm(w);
    let deviation = frobenius_norm(&(w - w0));
    if w.is_empty() || w.max_abs() == 0.0 {
        return Ok(StabilityRecord {
            step,
            frob_norm: frob,
            cond_number: f64::INFINITY,
            deviation,
            spectral_norm: 0.0,
        });
    }
    let dec = linalg::svd(w)?;
    let tol = linalg::default_rank_threshold(w.rows(), w.cols(), dec.sigma_max());
    let cond = linalg::condition_from_singular_values(&dec.singular_values, tol)?;
    Ok(StabilityRecord {
        step,
        frob_norm: frob,
        cond_number: cond,
        deviation,
        spectral_norm: dec.sigma_max(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    #[serde(rename = "final")]
    pub last: f64,
    /// `final / initial`; 1 when both are zero.
    pub ratio: f64,
    /// `max |x − initial| / |initial|` over the run.
    pub max_rel_drift: f64,
}

impl FieldSummary {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let initial = values.clone().next().unwrap_or(f64::NAN);
        let last = values.clone().last().unwrap_or(f64::NAN);
        let min = values.clone().fold(f64::INFINITY, f64::min);
        let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
        let ratio = if initial == last { 1.0 } else { last / initial };
        let max_rel_drift = values
            .map(|v| {
                if v == initial {
                    0.0
                } else {
                    (v - initial).abs() / initial.abs()
                }
            })
            .fold(0.0, f64::max);
        FieldSummary {
            initial,
            min,
            max,
            last,
            ratio,
            max_rel_drift,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub steps: usize,
    pub frob_norm: FieldSummary,
    pub spectral_norm: FieldSummary,
    pub cond_number: FieldSummary,
    pub deviation: FieldSummary,
}

pub fn summarize(records: &[StabilityRecord]) -> Result<StabilitySummary> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(
            "no stability records to summarize".into(),
        ));
    }
    let it = records.iter();
    Ok(StabilitySummary {
        steps: records.len(),
        frob_norm: FieldSummary::of(it.clone().map(|r| r.frob_norm)),
        spectral_norm: FieldSummary::of(it.clone().map(|r| r.spectral_norm)),
        cond_number: FieldSummary::of(it.clone().map(|r| r.cond_number)),
        deviation: FieldSummary::of(it.map(|r| r.deviation)),
    })
}

/// Spearman rank correlation with average ranks for ties. `NaN` when either
/// series is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "series length mismatch");
    let rx = ranks(x);
    let ry = ranks(y);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn record_fields(r: &StabilityRecord) -> [String; 5] {
    [
        r.step.to_string(),
        fmt_f64(r.frob_norm),
        fmt_f64(r.spectral_norm),
        fmt_f64(r.cond_number),
        fmt_f64(r.deviation),
    ]
}

pub fn write_csv<W: Write>(out: W, records: &[StabilityRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(record_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Merged table with a leading `editor` column.
pub fn write_labelled_csv<W: Write>(out: W, runs: &[(String, Vec<StabilityRecord>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["editor"];
    header.extend(CSV_HEADER);
    w.write_record(&header)?;
    for (label, records) in runs {
        for r in records {
            let mut row = vec![label.clone()];
            row.extend(record_fields(r));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|e| Error::Io(format!("bad number `{s}`: {e}")))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<StabilityRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Io(format!("unexpected stability header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        out.push(StabilityRecord {
            step: row[0]
                .parse()
                .map_err(|e| Error::Io(format!("bad step `{}`: {e}", &row[0])))?,
            frob_norm: parse_f64(&row[1])?,
            spectral_norm: parse_f64(&row[2])?,
            cond_number: parse_f64(&row[3])?,
            deviation: parse_f64(&row[4])?,
        });
    }
    Ok(out)
}
