//! DDPM noise schedule, forward noising and strided reverse steps.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Squared-cosine schedule over `K` steps; step `k` has noise level
/// `alpha_bar[k]`, decreasing in `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn cosine(k: usize) -> Self {
        let s = 0.008;
        let f = |t: f64| (((t / k as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let betas: Vec<f64> = (0..k).map(|i| (1.0 - f((i + 1) as f64) / f(i as f64)).min(0.999)).collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bar.push(acc);
        }
        NoiseSchedule {
            betas,
            alphas,
            alpha_bar,
        }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// `alpha_bar` at `k`, with `None` meaning the clean sample.
    pub fn alpha_bar_at(&self, k: Option<usize>) -> f64 {
        k.map_or(1.0, |k| self.alpha_bar[k])
    }

    /// Evenly spaced descending subset of `n` steps, always ending at 0.
    pub fn strided(&self, n: usize) -> Vec<usize> {
        let kmax = self.len() - 1;
        let n = n.clamp(1, self.len());
        if n == 1 {
            return vec![kmax];
        }
        let mut out: Vec<usize> = (0..n)
            .map(|i| ((i as f64) * kmax as f64 / (n - 1) as f64).round() as usize)
            .collect();
        out.dedup();
        out.reverse();
        out
    }
}

/// `sqrt(ab)·a0 + sqrt(1 − ab)·noise` at step `k`.
pub fn forward_diffuse(a0: &Array2<f64>, k: usize, noise: &Array2<f64>, sched: &NoiseSchedule) -> Result<Array2<f64>> {
    if k >= sched.len() {
        return Err(Error::InvalidArgument(format!("diffusion step {k} out of range 0..{}", sched.len())));
    }
    if a0.dim() != noise.dim() {
        return Err(Error::shape("forward_diffuse", format!("{:?}", a0.dim()), format!("{:?}", noise.dim())));
    }
    Ok(mix(a0, noise, sched.alpha_bar[k]))
}

/// `sqrt(ab)·a0 + sqrt(1 − ab)·noise` for an explicit `alpha_bar`.
pub fn mix(a0: &Array2<f64>, noise: &Array2<f64>, alpha_bar: f64) -> Array2<f64> {
    a0 * alpha_bar.sqrt() + noise * (1.0 - alpha_bar).sqrt()
}

/// Clean-sample estimate implied by a noise prediction.
pub fn predict_x0(x: &Array2<f64>, eps: &Array2<f64>, alpha_bar: f64) -> Array2<f64> {
    (x - &(eps * (1.0 - alpha_bar).sqrt())) / alpha_bar.sqrt()
}

/// Mean and variance of `q(x_prev | x_t, x0)` between two noise levels.
pub fn posterior(x: &Array2<f64>, x0: &Array2<f64>, ab_t: f64, ab_prev: f64) -> (Array2<f64>, f64) {
    let alpha = ab_t / ab_prev;
    let beta = 1.0 - alpha;
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
    let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
    (x0 * c0 + x * ct, beta * (1.0 - ab_prev) / (1.0 - ab_t))
}

/// Mean of the reverse step written directly in terms of the noise.
pub fn posterior_mean_eps(x: &Array2<f64>, eps: &Array2<f64>, ab_t: f64, ab_prev: f64) -> Array2<f64> {
    let alpha = ab_t / ab_prev;
    let beta = 1.0 - alpha;
    (x - &(eps * (beta / (1.0 - ab_t).sqrt()))) / alpha.sqrt()
}

/// One reverse step from level `k` to `prev` given a clean-sample estimate.
pub fn reverse_step<R: Rng>(x: &Array2<f64>, x0: &Array2<f64>, sched: &NoiseSchedule, k: usize, prev: Option<usize>, rng: &mut R) -> Array2<f64> {
    let (mean, var) = posterior(x, x0, sched.alpha_bar[k], sched.alpha_bar_at(prev));
    if prev.is_none() || var <= 0.0 {
        return mean;
    }
    let sd = var.sqrt();
    mean.mapv(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
}

pub fn standard_normal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}
