//! Training-set statistics: z-scores for proprioception, one global mean and
//! std for log-Mel values, and per-dimension min/max scaling of actions to
//! `[-1, 1]`.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Lower bound for every std and half-range.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub proprio_mean: Array1<f64>,
    pub proprio_std: Array1<f64>,
    pub audio_mean: f64,
    pub audio_std: f64,
    /// Midpoint of each action dimension's range.
    pub action_center: Array1<f64>,
    /// Half of each action dimension's range.
    pub action_half: Array1<f64>,
}

/// Per-column mean and floored population std.
pub fn column_stats(x: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    if x.nrows() == 0 {
        return Err(Error::Empty("normalization data"));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let std = x.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
    Ok((mean, std))
}

pub fn zscore(x: ArrayView2<f64>, mean: &Array1<f64>, std: &Array1<f64>) -> Array2<f64> {
    (&x - mean) / std
}

pub fn unzscore(x: ArrayView2<f64>, mean: &Array1<f64>, std: &Array1<f64>) -> Array2<f64> {
    &x * std + mean
}

impl NormStats {
    /// Fits from stacked proprio rows, all log-Mel values, and action rows.
    pub fn fit(proprio: ArrayView2<f64>, audio: &[f64], actions: ArrayView2<f64>) -> Result<Self> {
        let (proprio_mean, proprio_std) = column_stats(proprio)?;
        if audio.is_empty() {
            return Err(Error::Empty("audio normalization data"));
        }
        if actions.nrows() == 0 {
            return Err(Error::Empty("action normalization data"));
        }
        let n = audio.len() as f64;
        let audio_mean = audio.iter().sum::<f64>() / n;
        let audio_std = (audio.iter().map(|v| (v - audio_mean).powi(2)).sum::<f64>() / n)
            .sqrt()
            .max(STD_FLOOR);
        let lo = actions.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b));
        let hi = actions.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
        Ok(NormStats {
            proprio_mean,
            proprio_std,
            audio_mean,
            audio_std,
            action_center: (&lo + &hi) / 2.0,
            action_half: ((&hi - &lo) / 2.0).mapv(|h| h.max(STD_FLOOR)),
        })
    }

    pub fn proprio(&self, x: ArrayView2<f64>) -> Array2<f64> {
        zscore(x, &self.proprio_mean, &self.proprio_std)
    }

    pub fn proprio_inverse(&self, x: ArrayView2<f64>) -> Array2<f64> {
        unzscore(x, &self.proprio_mean, &self.proprio_std)
    }

    pub fn audio(&self, x: f64) -> f64 {
        (x - self.audio_mean) / self.audio_std
    }

    pub fn actions(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.action_center) / &self.action_half
    }

    pub fn actions_inverse(&self, x: ArrayView2<f64>) -> Array2<f64> {
        &x * &self.action_half + &self.action_center
    }

    /// Flat `[proprio_mean, proprio_std, audio_mean, audio_std, center, half]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.proprio_mean.to_vec();
        v.extend(self.proprio_std.iter());
        v.push(self.audio_mean);
        v.push(self.audio_std);
        v.extend(self.action_center.iter());
        v.extend(self.action_half.iter());
        v
    }

    pub fn from_vec(v: &[f64], proprio_dim: usize, action_dim: usize) -> Result<Self> {
        let want = 2 * proprio_dim + 2 + 2 * action_dim;
        if v.len() != want {
            return Err(Error::shape("NormStats::from_vec", want, v.len()));
        }
        let p = proprio_dim;
        let a = action_dim;
        Ok(NormStats {
            proprio_mean: Array1::from(v[..p].to_vec()),
            proprio_std: Array1::from(v[p..2 * p].to_vec()),
            audio_mean: v[2 * p],
            audio_std: v[2 * p + 1],
            action_center: Array1::from(v[2 * p + 2..2 * p + 2 + a].to_vec()),
            action_half: Array1::from(v[2 * p + 2 + a..].to_vec()),
        })
    }
}
