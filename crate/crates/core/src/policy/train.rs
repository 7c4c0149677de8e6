//! Minibatch behavior cloning with AdamW, warmup + cosine decay and
//! optional audio-proprio autoencoder pretraining.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

use crate::autograd::{Mat, Tape};
use crate::config::RunConfig;
use crate::encoders::{pretrain_audio_proprio, AudioProprioAutoencoder, ObsBatch, PretrainSet};
use crate::error::{Error, Result};
use crate::nn::{Builder, ParamStore};
use crate::optim::{lr_at, AdamW};
use crate::pipeline::{action_chunk, observation_at, NormStats, Pipeline, ProcessedFrame};
use crate::rng;
use crate::world::Episode;

use super::Policy;

/// Processed expert episodes ready for batching.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub frames: Vec<Vec<ProcessedFrame>>,
    pub actions: Vec<Array2<f32>>,
    /// `(episode, step)` of every sample.
    pub index: Vec<(usize, usize)>,
    pub n_obs: usize,
    pub horizon: usize,
    pub task: crate::config::TaskId,
    /// Raw spectrogram values, kept for fitting audio statistics.
    spectra: Vec<f64>,
}

impl TrainSet {
    pub fn new(episodes: &[Episode], cfg: &RunConfig) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Empty("training episodes"));
        }
        let pipe = Pipeline::new(&cfg.pipeline, &cfg.world);
        let mut frames = Vec::with_capacity(episodes.len());
        let mut actions = Vec::with_capacity(episodes.len());
        let mut index = Vec::new();
        let mut spectra = Vec::new();
        for ep in episodes {
            if ep.task != cfg.world.task {
                return Err(Error::TaskMismatch {
                    expected: cfg.world.task.to_string(),
                    got: ep.task.to_string(),
                });
            }
            if ep.actions.ncols() != cfg.world.task.action_dim() {
                return Err(Error::shape("TrainSet actions", cfg.world.task.action_dim(), ep.actions.ncols()));
            }
            if ep.is_empty() {
                continue;
            }
            spectra.extend(pipe.spectrogram(ep)?.iter());
            frames.push(pipe.episode_frames(ep)?);
            actions.push(ep.actions.clone());
            index.extend((0..ep.len()).map(|i| (frames.len() - 1, i)));
        }
        if index.is_empty() {
            return Err(Error::Empty("training samples"));
        }
        Ok(TrainSet {
            frames,
            actions,
            index,
            n_obs: cfg.pipeline.frames_stacked,
            horizon: cfg.model.horizon,
            task: cfg.world.task,
            spectra,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Statistics of the whole set, rounded to 32 bits so they survive a
    /// checkpoint unchanged.
    pub fn fit_norm(&self) -> Result<NormStats> {
        let proprio: Vec<Vec<f64>> = self.frames.iter().flatten().map(|f| f.proprio.clone()).collect();
        let ds = proprio[0].len();
        let p = Array2::from_shape_fn((proprio.len(), ds), |(i, j)| proprio[i][j]);
        let acts: Vec<ArrayView2<f32>> = self.actions.iter().map(|a| a.view()).collect();
        let a = ndarray::concatenate(ndarray::Axis(0), &acts)
            .map_err(|_| Error::shape("fit_norm actions", "equal widths", "mixed"))?
            .mapv(|v| v as f64);
        let s = NormStats::fit(p.view(), &self.spectra, a.view())?;
        NormStats::from_vec(&s.to_vec().iter().map(|&v| v as f32 as f64).collect::<Vec<_>>(), ds, a.ncols())
    }

    /// Observation batch and normalized flattened chunks for sample indices.
    pub fn batch(&self, idx: &[usize], norm: &NormStats) -> Result<(ObsBatch, Mat)> {
        let mut obs = Vec::with_capacity(idx.len());
        let width = self.actions[0].ncols() * self.horizon;
        let mut acts = Mat::zeros((idx.len(), width));
        for (r, &s) in idx.iter().enumerate() {
            let (e, i) = self.index[s];
            obs.push(observation_at(&self.frames[e], i, self.n_obs)?);
            let chunk = action_chunk(self.actions[e].view(), i, self.horizon);
            let n = norm.actions(chunk.view());
            acts.row_mut(r).assign(&ndarray::Array1::from_iter(n.iter().copied()));
        }
        let refs: Vec<_> = obs.iter().collect();
        Ok((ObsBatch::new(&refs, Some(norm))?, acts))
    }

    /// Normalized (audio window, proprio) pairs of every step.
    pub fn pretrain_pairs(&self, norm: &NormStats) -> PretrainSet {
        let windows: Vec<_> = self.frames.iter().flatten().map(|f| f.audio.mapv(|v| norm.audio(v))).collect();
        let window = windows[0].nrows();
        let proprio: Vec<Vec<f64>> = self.frames.iter().flatten().map(|f| f.proprio.clone()).collect();
        let p = Array2::from_shape_fn((proprio.len(), proprio[0].len()), |(i, j)| proprio[i][j]);
        PretrainSet {
            audio: crate::encoders::stack_windows(&windows),
            proprio: norm.proprio(p.view()),
            window,
        }
    }
}

/// A policy with its optimizer state and step counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub policy: Policy,
    pub opt: AdamW,
    pub step: usize,
}

impl Trainer {
    pub fn new(policy: Policy) -> Self {
        let opt = AdamW::new(&policy.store, policy.cfg.train.weight_decay);
        Trainer { policy, opt, step: 0 }
    }

    /// Sample indices, diffusion steps and noise for a step, drawn from the
    /// step's own sub-stream so resumed runs see the same batches.
    fn draw(&self, step: usize, n: usize) -> (Vec<usize>, Vec<usize>, Mat) {
        let mut r = rng::indexed_stream(self.policy.cfg.train.seed, "train.batch", step as u64);
        let idx: Vec<usize> = (0..self.policy.cfg.train.batch).map(|_| r.random_range(0..n)).collect();
        let (ks, noise) = self.policy.draw_noise(idx.len(), &mut r);
        (idx, ks, noise)
    }

    /// Loss and parameter gradients for step `step` without updating.
    pub fn gradients(&self, data: &TrainSet, step: usize) -> Result<(f64, Vec<Mat>)> {
        let (idx, ks, noise) = self.draw(step, data.len());
        let (batch, acts) = data.batch(&idx, &self.policy.norm)?;
        let p = &self.policy;
        let mut t = Tape::new(&p.store);
        let (_, fused) = p.latent(&mut t, &batch);
        let loss = p.loss_given(&mut t, fused.z, &acts, &ks, &noise);
        Ok((t.value(loss)[[0, 0]], t.backward(loss).params()))
    }

    /// One optimizer step. Returns `(loss, lr)`.
    pub fn train_step(&mut self, data: &TrainSet) -> Result<(f64, f64)> {
        let tc = &self.policy.cfg.train;
        let lr = lr_at(self.step, tc.lr, tc.warmup, tc.steps, tc.min_lr_ratio);
        let clip = tc.grad_clip;
        let (loss, grads) = self.gradients(data, self.step)?;
        self.opt.step(&mut self.policy.store, grads, lr, clip);
        self.step += 1;
        Ok((loss, lr))
    }

    /// Trains until `cfg.train.steps`, calling `on_step(trainer, loss, lr)`
    /// after every step.
    pub fn run<F>(&mut self, data: &TrainSet, mut on_step: F) -> Result<Vec<f64>>
    where
        F: FnMut(&Trainer, f64, f64) -> Result<()>,
    {
        if data.task != self.policy.cfg.world.task {
            return Err(Error::TaskMismatch {
                expected: self.policy.cfg.world.task.to_string(),
                got: data.task.to_string(),
            });
        }
        let mut losses = Vec::new();
        while self.step < self.policy.cfg.train.steps {
            let (loss, lr) = self.train_step(data)?;
            losses.push(loss);
            on_step(self, loss, lr)?;
        }
        Ok(losses)
    }
}

/// Pretrains the audio and proprio encoders as an autoencoder and copies
/// them into `policy`. Returns the pretraining loss curve.
pub fn pretrain_encoders(policy: &mut Policy, data: &TrainSet) -> Result<Vec<f64>> {
    let cfg = policy.cfg.clone();
    let mut store = ParamStore::default();
    let ae = {
        let mut b = Builder::new(&mut store, "", rng::derive_seed(cfg.train.seed, "model.init"));
        AudioProprioAutoencoder::new(&mut b, &cfg)
    };
    let pairs = data.pretrain_pairs(&policy.norm);
    let losses = pretrain_audio_proprio(
        &mut store,
        &ae,
        &pairs,
        cfg.train.pretrain_steps,
        cfg.train.batch,
        cfg.train.pretrain_lr,
        cfg.train.lambda_p,
        cfg.train.seed,
    )?;
    policy.store.load_matching(&store);
    Ok(losses)
}

/// Builds, optionally pretrains, and trains a policy from scratch.
pub fn train_policy(data: &TrainSet, cfg: &RunConfig) -> Result<(Trainer, Vec<f64>)> {
    let norm = data.fit_norm()?;
    let mut policy = Policy::new(cfg, norm)?;
    if cfg.train.pretrain {
        pretrain_encoders(&mut policy, data)?;
    }
    let mut trainer = Trainer::new(policy);
    let losses = trainer.run(data, |_, _, _| Ok(()))?;
    Ok((trainer, losses))
}

/// Exponential moving average of a loss curve.
pub fn ema(values: &[f64], decay: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let next = match acc {
            None => v,
            Some(a) => decay * a + (1.0 - decay) * v,
        };
        acc = Some(next);
        out.push(next);
    }
    out
}
