//! Mutual information between fused latents and a scalar outcome: principal
//! component reduction followed by the first Kraskov-Stögbauer-Grassberger
//! k-nearest-neighbor estimator under the max-norm.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::rng;

/// Tie-breaking jitter, relative to unit variance.
const JITTER: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    pub method: String,
    pub k: usize,
    pub d_reduce: usize,
    pub n_samples: usize,
    /// Estimate in nats, clamped at zero.
    pub mi: f64,
}

/// Projects the rows of `x` (`n × d`) onto their top `dims` principal
/// components. Returns `n × min(dims, d)`.
pub fn pca_project(x: &DMatrix<f64>, dims: usize) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let dims = dims.min(d);
    let mean = x.row_mean();
    let mut c = x.clone();
    for mut r in c.row_iter_mut() {
        r -= &mean;
    }
    let cov = c.transpose() * &c / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let basis = DMatrix::from_fn(d, dims, |i, j| eig.eigenvectors[(i, order[j])]);
    c * basis
}

fn standardize(col: &mut [f64]) -> f64 {
    let n = col.len() as f64;
    let m = col.iter().sum::<f64>() / n;
    let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    for v in col.iter_mut() {
        *v = if sd > 0.0 { (*v - m) / sd } else { 0.0 };
    }
    sd
}

/// KSG estimator 1 for already prepared samples: `x` is `n × d`
/// row-major, `y` has `n` entries.
pub fn ksg(x: &[f64], d: usize, y: &[f64], k: usize) -> f64 {
    let n = y.len();
    let dist_x = |i: usize, j: usize| {
        let (a, b) = (&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
        a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
    };
    let mut sum = 0.0;
    let mut joint = Vec::with_capacity(n);
    for i in 0..n {
        joint.clear();
        joint.extend((0..n).filter(|&j| j != i).map(|j| dist_x(i, j).max((y[i] - y[j]).abs())));
        let (_, eps, _) = joint.select_nth_unstable_by(k - 1, f64::total_cmp);
        let eps = *eps;
        let nx = (0..n).filter(|&j| j != i && dist_x(i, j) < eps).count();
        let ny = (0..n).filter(|&j| j != i && (y[i] - y[j]).abs() < eps).count();
        sum += digamma((nx + 1) as f64) + digamma((ny + 1) as f64);
    }
    digamma(k as f64) + digamma(n as f64) - sum / n as f64
}

/// `I(z; y)` in nats. `z` holds one sample per row. Coordinates are reduced
/// to `d_reduce` principal components, every coordinate and `y` are
/// standardized, and a tiny seeded jitter breaks ties before the kNN
/// search. Negative estimates are clamped to zero.
pub fn estimate_mi(z: &[Vec<f64>], y: &[f64], k: usize, d_reduce: usize) -> Result<f64> {
    let n = y.len();
    if k == 0 || d_reduce == 0 {
        return Err(Error::InvalidArgument("k and d_reduce must be at least 1".into()));
    }
    if z.len() != n {
        return Err(Error::shape("estimate_mi samples", n, z.len()));
    }
    if n < 2 * k + 2 {
        return Err(Error::InvalidArgument(format!("need at least {} samples for k = {k}, got {n}", 2 * k + 2)));
    }
    let d = z[0].len();
    if d == 0 || z.iter().any(|r| r.len() != d) {
        return Err(Error::shape("estimate_mi latent width", d, "ragged or empty rows"));
    }
    if z.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite samples".into()));
    }
    let mut ys = y.to_vec();
    if standardize(&mut ys) < 1e-12 {
        return Err(Error::Degenerate("outcome has zero variance".into()));
    }
    let zm = DMatrix::from_fn(n, d, |i, j| z[i][j]);
    let reduced = pca_project(&zm, d_reduce);
    let dr = reduced.ncols();
    let mut cols: Vec<Vec<f64>> = (0..dr).map(|j| reduced.column(j).iter().copied().collect()).collect();
    for c in &mut cols {
        standardize(c);
    }
    let mut r = rng::stream(0, "mi.jitter");
    let mut x = vec![0.0; n * dr];
    for i in 0..n {
        for j in 0..dr {
            let e: f64 = StandardNormal.sample(&mut r);
            x[i * dr + j] = cols[j][i] + JITTER * e;
        }
    }
    for v in ys.iter_mut() {
        let e: f64 = StandardNormal.sample(&mut r);
        *v += JITTER * e;
    }
    Ok(ksg(&x, dr, &ys, k).max(0.0))
}
