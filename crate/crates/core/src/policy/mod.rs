//! Conditional diffusion policy over action chunks: the full model (encoders,
//! fusion stack, denoiser), its behavior-cloning loss, sampling, training
//! and receding-horizon rollouts.

pub mod denoiser;
pub mod diffusion;
pub mod rollout;
pub mod train;

use ndarray::{Array2, Axis};
use rand::Rng;

pub use denoiser::Denoiser;
pub use diffusion::{forward_diffuse, NoiseSchedule};
pub use rollout::{rollout, Rollout};
pub use train::{TrainSet, Trainer};

use crate::autograd::{Mat, Tape, Var};
use crate::config::{Objective, RunConfig};
use crate::encoders::{Dims, Encoders, ObsBatch, Tokens};
use crate::error::{Error, Result};
use crate::fusion::{Fused, Fuser, FusionMode};
use crate::nn::{Builder, ParamStore};
use crate::pipeline::{NormStats, Observation};
use crate::rng;

/// Everything needed to act: weights, normalization and the configuration
/// that fixes their shapes.
#[derive(Clone, Debug)]
pub struct Policy {
    pub cfg: RunConfig,
    pub dims: Dims,
    pub mode: FusionMode,
    pub store: ParamStore,
    pub encoders: Encoders,
    pub fuser: Fuser,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub norm: NormStats,
}

impl Policy {
    /// Freshly initialized weights, seeded from the training seed.
    pub fn new(cfg: &RunConfig, norm: NormStats) -> Result<Self> {
        cfg.validate()?;
        let mode = FusionMode::parse(&cfg.model.fusion)?;
        let dims = Dims::from_config(cfg);
        if norm.action_center.len() != dims.action || norm.proprio_mean.len() != dims.proprio {
            return Err(Error::shape(
                "Policy::new normalization",
                format!("{} action / {} proprio dims", dims.action, dims.proprio),
                format!("{} / {}", norm.action_center.len(), norm.proprio_mean.len()),
            ));
        }
        let m = &cfg.model;
        let mut store = ParamStore::default();
        let mut b = Builder::new(&mut store, "", rng::derive_seed(cfg.train.seed, "model.init"));
        let encoders = Encoders::new(&mut b, cfg);
        let fuser = Fuser::new(&mut b, mode, dims.d, m.gate_hidden, m.heads);
        let denoiser = Denoiser::new(&mut b, dims.horizon * dims.action, 3 * dims.d, m.denoiser_hidden, m.denoiser_blocks, m.time_embed);
        Ok(Policy {
            cfg: cfg.clone(),
            dims,
            mode,
            store,
            encoders,
            fuser,
            denoiser,
            schedule: NoiseSchedule::cosine(m.diffusion_steps),
            norm,
        })
    }

    pub fn chunk_width(&self) -> usize {
        self.dims.horizon * self.dims.action
    }

    /// Encoder tokens and fused latent for a batch.
    pub fn latent(&self, t: &mut Tape, batch: &ObsBatch) -> (Tokens, Fused) {
        let tok = self.encoders.encode(t, batch);
        let fused = self.fuser.forward(t, &tok, batch.n_obs);
        (tok, fused)
    }

    /// Mean squared error of the denoiser on noised chunks: against the noise
    /// for the epsilon objective, against the clean chunk otherwise.
    pub fn loss_given(&self, t: &mut Tape, z: Var, actions: &Mat, ks: &[usize], noise: &Mat) -> Var {
        let mut noisy = Mat::zeros(actions.dim());
        for (r, &k) in ks.iter().enumerate() {
            let ab = self.schedule.alpha_bar[k];
            let row = &actions.row(r) * ab.sqrt() + &noise.row(r) * (1.0 - ab).sqrt();
            noisy.row_mut(r).assign(&row);
        }
        let x = t.constant(noisy);
        let pred = self.denoiser.forward(t, x, ks, z);
        let target = match self.cfg.model.objective {
            Objective::Epsilon => noise.clone(),
            Objective::Sample => actions.clone(),
        };
        t.mse(pred, target)
    }

    /// Uniform diffusion steps and standard normal noise for `b` chunks.
    pub fn draw_noise<R: Rng>(&self, b: usize, rng: &mut R) -> (Vec<usize>, Mat) {
        let ks = (0..b).map(|_| rng.random_range(0..self.schedule.len())).collect();
        let noise = diffusion::standard_normal(b, self.chunk_width(), rng);
        (ks, noise)
    }

    /// Behavior-cloning loss on a batch of observations and normalized,
    /// flattened expert chunks.
    pub fn bc_loss<R: Rng>(&self, batch: &ObsBatch, actions: &Mat, rng: &mut R) -> Result<f64> {
        if batch.batch == 0 || actions.nrows() != batch.batch {
            return Err(Error::Empty("behavior-cloning batch"));
        }
        let (ks, noise) = self.draw_noise(batch.batch, rng);
        let mut t = Tape::new(&self.store);
        let (_, fused) = self.latent(&mut t, batch);
        let loss = self.loss_given(&mut t, fused.z, actions, &ks, &noise);
        Ok(t.value(loss)[[0, 0]])
    }

    /// Fused latents, one row per observation.
    pub fn encode(&self, obs: &[&Observation]) -> Result<Mat> {
        let batch = ObsBatch::new(obs, Some(&self.norm))?;
        let mut t = Tape::new(&self.store);
        let (_, fused) = self.latent(&mut t, &batch);
        Ok(t.value(fused.z).clone())
    }

    /// Reverse diffusion from standard normal noise over the strided
    /// inference steps, conditioned on latents `z`. Returns normalized,
    /// flattened chunks.
    pub fn sample_normalized<R: Rng>(&self, z: &Mat, rng: &mut R) -> Mat {
        let b = z.nrows();
        let mut x = diffusion::standard_normal(b, self.chunk_width(), rng);
        let steps = self.schedule.strided(self.cfg.model.inference_steps);
        for (i, &k) in steps.iter().enumerate() {
            let prev = steps.get(i + 1).copied();
            let mut t = Tape::new(&self.store);
            let zv = t.constant(z.clone());
            let xv = t.constant(x.clone());
            let out = self.denoiser.forward(&mut t, xv, &vec![k; b], zv);
            let pred = t.value(out);
            let x0 = match self.cfg.model.objective {
                Objective::Epsilon => diffusion::predict_x0(&x, pred, self.schedule.alpha_bar[k]),
                Objective::Sample => pred.clone(),
            }
            .mapv(|v| v.clamp(-1.0, 1.0));
            x = diffusion::reverse_step(&x, &x0, &self.schedule, k, prev, rng);
        }
        x
    }

    /// Denormalized `H × D_a` chunks, one per latent row.
    pub fn sample_actions<R: Rng>(&self, z: &Mat, rng: &mut R) -> Vec<Array2<f64>> {
        let x = self.sample_normalized(z, rng);
        x.axis_iter(Axis(0))
            .map(|row| {
                let chunk = row.to_shape((self.dims.horizon, self.dims.action)).expect("chunk").to_owned();
                self.norm.actions_inverse(chunk.view())
            })
            .collect()
    }

    /// Normalized chunk flattened to one row.
    pub fn flatten_chunk(&self, chunk: &Array2<f64>) -> Vec<f64> {
        self.norm.actions(chunk.view()).iter().copied().collect()
    }
}
