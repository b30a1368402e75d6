//! Decode-based reliability, generalization and locality.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::memory::{decode, EvalSuite, Probe};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_in: usize,
    pub n_nbr: usize,
    pub n_out: usize,
}

/// Fractions of successful decodes; `None` (JSON `null`) for an empty suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub reliability: Option<f64>,
    pub generalization: Option<f64>,
    pub locality: Option<f64>,
    pub counts: Counts,
}

fn fraction(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

fn hits(w: &Matrix, probes: &[Probe], codebook: &Matrix) -> usize {
    probes
        .iter()
        .filter(|p| decode(w, &p.key, codebook) == Some(p.expected))
        .count()
}

/// Score `w` on `suite`. Locality compares against what `w_pre` decodes,
/// not against the ground-truth ids; an undecodable output never matches.
pub fn evaluate(w: &Matrix, w_pre: &Matrix, suite: &EvalSuite, codebook: &Matrix) -> MetricsReport {
    let stable = suite
        .out_of_scope
        .iter()
        .filter(|p| {
            let after = decode(w, &p.key, codebook);
            after.is_some() && after == decode(w_pre, &p.key, codebook)
        })
        .count();
    MetricsReport {
        reliability: fraction(hits(w, &suite.in_scope, codebook), suite.in_scope.len()),
        generalization: fraction(
            hits(w, &suite.neighborhood, codebook),
            suite.neighborhood.len(),
        ),
        locality: fraction(stable, suite.out_of_scope.len()),
        counts: Counts {
            n_in: suite.in_scope.len(),
            n_nbr: suite.neighborhood.len(),
            n_out: suite.out_of_scope.len(),
        },
    }
}
