//! Seeded random sources shared by the generators.
//!
//! Every generator takes an explicit `u64` seed and builds its own
//! [`ChaCha8Rng`], so outputs are reproducible across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mix a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Row-major standard-normal matrix.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_row_major(rows, cols, gaussian_vec(rng, rows * cols))
        .expect("gaussian samples are finite")
}

/// Uniform direction on the unit sphere in `dim` dimensions.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, dim);
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `d×p` matrix with singular values spread geometrically from 1 down to
/// `1/kappa`, between Haar-random orthogonal factors.
pub fn conditioned_matrix(rows: usize, cols: usize, kappa: f64, seed: u64) -> Matrix {
    let r = rows.min(cols);
    let left = crate::linalg::random_orthogonal(rows, derive_seed(seed, 1));
    let right = crate::linalg::random_orthogonal(cols, derive_seed(seed, 2));
    let ratio = if r > 1 {
        (1.0 / kappa).powf(1.0 / (r - 1) as f64)
    } else {
        1.0
    };
    let mut diag = Matrix::zeros(rows, cols);
    let mut s = 1.0;
    for i in 0..r {
        diag.set(i, i, s);
        s *= ratio;
    }
    &(left.matrix() * &diag) * right.matrix()
}
