//! AdamW with global-norm clipping and a warmup + cosine learning rate.

use crate::autograd::Mat;
use crate::nn::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Mat> = (0..store.len()).map(|i| Mat::zeros(store.value(i).dim())).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. Gradients are clipped to global norm `clip` (skipped when
    /// `clip <= 0`). Parameters and moments are rounded to `f32` afterwards
    /// so a 32-bit checkpoint captures the state exactly. Returns the
    /// pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, mut grads: Vec<Mat>, lr: f64, clip: f64) -> f64 {
        let norm = global_norm(&grads);
        if clip > 0.0 && norm > clip {
            let c = clip / norm;
            for g in &mut grads {
                g.mapv_inplace(|x| x * c);
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, g) in grads.iter().enumerate() {
            let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let w = store.value_mut(id);
            ndarray::Zip::from(w).and(m).and(v).and(g).for_each(|w, m, v, &g| {
                *m = (b1 * *m + (1.0 - b1) * g) as f32 as f64;
                *v = (b2 * *v + (1.0 - b2) * g * g) as f32 as f64;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *w = (*w - lr * (update + wd * *w)) as f32 as f64;
            });
        }
        norm
    }
}

pub fn global_norm(grads: &[Mat]) -> f64 {
    grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Linear warmup to `base`, then cosine decay to `base * min_ratio` at
/// `total` steps.
pub fn lr_at(step: usize, base: f64, warmup: usize, total: usize, min_ratio: f64) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let p = ((step - warmup) as f64 / span as f64).min(1.0);
    let floor = base * min_ratio;
    floor + (base - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        assert!((lr_at(0, 1.0, 10, 100, 0.1) - 0.1).abs() < 1e-12);
        assert!((lr_at(9, 1.0, 10, 100, 0.1) - 1.0).abs() < 1e-12);
        assert!((lr_at(10, 1.0, 10, 100, 0.1) - 1.0).abs() < 1e-12);
        assert!((lr_at(100, 1.0, 10, 100, 0.1) - 0.1).abs() < 1e-12);
        assert!((lr_at(55, 1.0, 10, 100, 0.1) - 0.55).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::default();
        let id = store.add("x.w", Mat::from_elem((1, 2), 3.0));
        let mut opt = AdamW::new(&store, 0.0);
        for _ in 0..2000 {
            let g = store.value(id) * 2.0;
            opt.step(&mut store, vec![g], 0.01, 0.0);
        }
        assert!(store.value(id).iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn clipping_bounds_the_step() {
        let mut store = ParamStore::default();
        store.add("x.w", Mat::zeros((1, 1)));
        let mut opt = AdamW::new(&store, 0.0);
        let n = opt.step(&mut store, vec![Mat::from_elem((1, 1), 100.0)], 0.1, 1.0);
        assert_eq!(n, 100.0);
        assert!((store.value(0)[[0, 0]] + 0.1).abs() < 1e-6);
    }
}
