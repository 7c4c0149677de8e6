//! Per-frame modality encoders producing one `D`-dimensional token per
//! stacked frame: a dual-path convolutional audio encoder, a shared-MLP
//! max-pooled point encoder and a two-layer proprioception MLP. Also the
//! audio-proprioception autoencoder used for optional pretraining.

use ndarray::{s, Array2, Axis};
use rand::Rng as _;

use crate::autograd::{Mat, Tape, Var};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{Builder, LayerNorm, Linear, ParamStore};
use crate::optim::AdamW;
use crate::pipeline::{NormStats, Observation};
use crate::rng;

/// Every size the model needs, fixed for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub d: usize,
    pub window: usize,
    pub mel: usize,
    pub points: usize,
    pub proprio: usize,
    pub action: usize,
    pub n_obs: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Dims {
            d: cfg.model.dim,
            window: cfg.pipeline.window_frames,
            mel: cfg.pipeline.mel_bins,
            points: cfg.pipeline.points,
            proprio: cfg.world.task.proprio_dim(),
            action: cfg.world.task.action_dim(),
            n_obs: cfg.pipeline.frames_stacked,
            horizon: cfg.model.horizon,
        }
    }
}

/// Observations flattened into the row layout the encoders consume:
/// `G = batch · n_obs` frames, each contributing `T` audio rows, `N` point
/// rows and one proprio row.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBatch {
    pub audio: Mat,
    pub points: Mat,
    pub proprio: Mat,
    pub batch: usize,
    pub n_obs: usize,
}

impl ObsBatch {
    /// Stacks observations, normalizing audio and proprio when `norm` is
    /// given. Points stay in meters.
    pub fn new(obs: &[&Observation], norm: Option<&NormStats>) -> Result<Self> {
        let first = obs.first().ok_or(Error::Empty("observation batch"))?;
        let (n_obs, t, m) = first.audio.dim();
        let n = first.points.dim().1;
        let ds = first.proprio.ncols();
        let b = obs.len();
        let mut audio = Mat::zeros((b * n_obs * t, m));
        let mut points = Mat::zeros((b * n_obs * n, 3));
        let mut proprio = Mat::zeros((b * n_obs, ds));
        for (i, o) in obs.iter().enumerate() {
            if o.audio.dim() != (n_obs, t, m) || o.points.dim() != (n_obs, n, 3) || o.proprio.dim() != (n_obs, ds) {
                return Err(Error::shape("ObsBatch", format!("{n_obs}×{t}×{m}"), format!("{:?}", o.audio.dim())));
            }
            let g = i * n_obs;
            audio
                .slice_mut(s![g * t..(g + n_obs) * t, ..])
                .assign(&o.audio.to_shape((n_obs * t, m)).expect("contiguous"));
            points
                .slice_mut(s![g * n..(g + n_obs) * n, ..])
                .assign(&o.points.to_shape((n_obs * n, 3)).expect("contiguous"));
            proprio.slice_mut(s![g..g + n_obs, ..]).assign(&o.proprio);
        }
        if let Some(ns) = norm {
            audio.mapv_inplace(|v| ns.audio(v));
            proprio = ns.proprio(proprio.view());
        }
        Ok(ObsBatch {
            audio,
            points,
            proprio,
            batch: b,
            n_obs,
        })
    }

    pub fn groups(&self) -> usize {
        self.batch * self.n_obs
    }
}

/// Tape variables for the three modality token sets, each `G × D`.
#[derive(Clone, Copy, Debug)]
pub struct Tokens {
    pub audio: Var,
    pub points: Var,
    pub proprio: Var,
}

/// Dual-path audio encoder: convolutions over time (Mel bins as channels)
/// and over frequency (frames as channels), each mean-pooled, concatenated
/// and projected with a tanh.
#[derive(Clone, Debug)]
pub struct AudioEncoder {
    time: [Linear; 2],
    freq: [Linear; 2],
    proj: Linear,
    kernel: usize,
    window: usize,
    mel: usize,
}

impl AudioEncoder {
    pub fn new(b: &mut Builder, window: usize, mel: usize, channels: usize, kernel: usize, d: usize) -> Self {
        let mut b = b.sub("audio");
        AudioEncoder {
            time: [
                b.linear("time0", kernel * mel, channels),
                b.linear("time1", kernel * channels, channels),
            ],
            freq: [
                b.linear("freq0", kernel * window, channels),
                b.linear("freq1", kernel * channels, channels),
            ],
            proj: b.linear("proj", 2 * channels, d),
            kernel,
            window,
            mel,
        }
    }

    fn conv_path(&self, t: &mut Tape, x: Var, len: usize, layers: &[Linear; 2]) -> Var {
        let mut h = x;
        for layer in layers {
            let u = t.unfold(h, len, self.kernel);
            let y = layer.forward(t, u);
            h = t.relu(y);
        }
        t.group_mean(h, len)
    }

    /// `(G·T) × M` windows to `G × D`.
    pub fn forward(&self, t: &mut Tape, audio: Var) -> Var {
        let time = self.conv_path(t, audio, self.window, &self.time);
        let swapped = t.group_transpose(audio, self.window);
        let freq = self.conv_path(t, swapped, self.mel, &self.freq);
        let both = t.concat_cols(&[time, freq]);
        let y = self.proj.forward(t, both);
        t.tanh(y)
    }
}

/// Shared per-point MLP with layer normalization, max-pooled over points
/// and projected.
#[derive(Clone, Debug)]
pub struct PointEncoder {
    layers: Vec<(Linear, LayerNorm)>,
    proj: Linear,
    points: usize,
}

impl PointEncoder {
    pub fn new(b: &mut Builder, points: usize, hidden: usize, d: usize) -> Self {
        let mut b = b.sub("points");
        let layers = vec![
            (b.linear("fc0", 3, hidden), b.layer_norm("ln0", hidden)),
            (b.linear("fc1", hidden, hidden), b.layer_norm("ln1", hidden)),
        ];
        PointEncoder {
            layers,
            proj: b.linear("proj", hidden, d),
            points,
        }
    }

    /// `(G·N) × 3` to `G × D`.
    pub fn forward(&self, t: &mut Tape, points: Var) -> Var {
        let mut h = points;
        for (fc, ln) in &self.layers {
            let y = fc.forward(t, h);
            let y = ln.forward(t, y);
            h = t.relu(y);
        }
        let pooled = t.group_max(h, self.points);
        self.proj.forward(t, pooled)
    }
}

/// Two linear layers with a ReLU between.
#[derive(Clone, Debug)]
pub struct ProprioEncoder {
    pub fc0: Linear,
    pub fc1: Linear,
}

impl ProprioEncoder {
    pub fn new(b: &mut Builder, input: usize, hidden: usize, d: usize) -> Self {
        let mut b = b.sub("proprio");
        ProprioEncoder {
            fc0: b.linear("fc0", input, hidden),
            fc1: b.linear("fc1", hidden, d),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.fc0.forward(t, x);
        let h = t.relu(h);
        self.fc1.forward(t, h)
    }
}

#[derive(Clone, Debug)]
pub struct Encoders {
    pub audio: AudioEncoder,
    pub points: PointEncoder,
    pub proprio: ProprioEncoder,
}

impl Encoders {
    pub fn new(b: &mut Builder, cfg: &RunConfig) -> Self {
        let dims = Dims::from_config(cfg);
        let m = &cfg.model;
        Encoders {
            audio: AudioEncoder::new(b, dims.window, dims.mel, m.audio_channels, m.audio_kernel, dims.d),
            points: PointEncoder::new(b, dims.points, m.point_hidden, dims.d),
            proprio: ProprioEncoder::new(b, dims.proprio, m.proprio_hidden, dims.d),
        }
    }

    pub fn forward(&self, t: &mut Tape, audio: Var, points: Var, proprio: Var) -> Tokens {
        Tokens {
            audio: self.audio.forward(t, audio),
            points: self.points.forward(t, points),
            proprio: self.proprio.forward(t, proprio),
        }
    }

    /// Encodes a batch with its inputs entered as constants.
    pub fn encode(&self, t: &mut Tape, batch: &ObsBatch) -> Tokens {
        let a = t.constant(batch.audio.clone());
        let p = t.constant(batch.points.clone());
        let s = t.constant(batch.proprio.clone());
        self.forward(t, a, p, s)
    }
}

/// Shared-latent autoencoder over concatenated audio and proprio tokens.
#[derive(Clone, Debug)]
pub struct AudioProprioAutoencoder {
    pub audio: AudioEncoder,
    pub proprio: ProprioEncoder,
    bottleneck: Linear,
    audio_dec: [Linear; 2],
    proprio_dec: [Linear; 2],
}

impl AudioProprioAutoencoder {
    /// Builds encoders under the same names and seed as [`Encoders::new`],
    /// so trained weights transfer by name.
    pub fn new(b: &mut Builder, cfg: &RunConfig) -> Self {
        let enc = Encoders::new(b, cfg);
        let dims = Dims::from_config(cfg);
        let d = dims.d;
        let hidden = cfg.model.proprio_hidden.max(d);
        let mut p = b.sub("pretrain");
        AudioProprioAutoencoder {
            audio: enc.audio,
            proprio: enc.proprio,
            bottleneck: p.linear("bottleneck", 2 * d, d),
            audio_dec: [p.linear("audio_dec0", d, hidden), p.linear("audio_dec1", hidden, dims.window * dims.mel)],
            proprio_dec: [p.linear("proprio_dec0", d, hidden), p.linear("proprio_dec1", hidden, dims.proprio)],
        }
    }

    fn decode(t: &mut Tape, z: Var, layers: &[Linear; 2]) -> Var {
        let h = layers[0].forward(t, z);
        let h = t.relu(h);
        layers[1].forward(t, h)
    }

    /// Returns `(total, audio_mse, proprio_mse)` for `G` windows given as
    /// `(G·T) × M` rows and `G × D_s` proprio rows.
    pub fn loss(&self, t: &mut Tape, audio: &Mat, proprio: &Mat, lambda_p: f64) -> (Var, Var, Var) {
        let g = proprio.nrows();
        let a = t.constant(audio.clone());
        let s = t.constant(proprio.clone());
        let xa = self.audio.forward(t, a);
        let xs = self.proprio.forward(t, s);
        let joint = t.concat_cols(&[xa, xs]);
        let z = self.bottleneck.forward(t, joint);
        let z = t.relu(z);
        let ra = Self::decode(t, z, &self.audio_dec);
        let rs = Self::decode(t, z, &self.proprio_dec);
        let target = audio.to_shape((g, audio.len() / g)).expect("contiguous").to_owned();
        let la = t.mse(ra, target);
        let ls = t.mse(rs, proprio.clone());
        let ws = t.scale(ls, lambda_p);
        let total = t.add(la, ws);
        (total, la, ls)
    }
}

/// Aligned (audio window, proprio) training pairs, already normalized.
#[derive(Clone, Debug)]
pub struct PretrainSet {
    /// `n × T × M` flattened to `(n·T) × M`.
    pub audio: Mat,
    pub proprio: Mat,
    pub window: usize,
}

impl PretrainSet {
    pub fn len(&self) -> usize {
        self.proprio.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn batch(&self, idx: &[usize]) -> (Mat, Mat) {
        let t = self.window;
        let mut a = Mat::zeros((idx.len() * t, self.audio.ncols()));
        let mut p = Mat::zeros((idx.len(), self.proprio.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            a.slice_mut(s![r * t..(r + 1) * t, ..]).assign(&self.audio.slice(s![i * t..(i + 1) * t, ..]));
            p.row_mut(r).assign(&self.proprio.row(i));
        }
        (a, p)
    }
}

/// Trains the autoencoder in `store` and returns the per-step loss.
pub fn pretrain_audio_proprio(
    store: &mut ParamStore,
    model: &AudioProprioAutoencoder,
    data: &PretrainSet,
    steps: usize,
    batch: usize,
    lr: f64,
    lambda_p: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Empty("pretraining set"));
    }
    let mut opt = AdamW::new(store, 0.0);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut r = rng::indexed_stream(seed, "pretrain.batch", step as u64);
        let idx: Vec<usize> = (0..batch).map(|_| r.random_range(0..data.len())).collect();
        let (a, p) = data.batch(&idx);
        let (loss, grads) = {
            let mut t = Tape::new(store);
            let (total, _, _) = model.loss(&mut t, &a, &p, lambda_p);
            (t.value(total)[[0, 0]], t.backward(total).params())
        };
        opt.step(store, grads, lr, 1.0);
        losses.push(loss);
    }
    Ok(losses)
}

/// Stacks per-frame audio windows into `(n·T) × M` rows.
pub fn stack_windows(windows: &[Array2<f64>]) -> Mat {
    let views: Vec<_> = windows.iter().map(|w| w.view()).collect();
    ndarray::concatenate(Axis(0), &views).unwrap_or_else(|_| Mat::zeros((0, 0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand_distr::{Distribution, StandardNormal};

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model.dim = 6;
        cfg.model.audio_channels = 4;
        cfg.model.point_hidden = 5;
        cfg.model.proprio_hidden = 5;
        cfg.pipeline.window_frames = 5;
        cfg.pipeline.mel_bins = 4;
        cfg.pipeline.points = 6;
        cfg
    }

    fn randn(r: &mut rng::Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_shape_fn((rows, cols), |_| StandardNormal.sample(r))
    }

    #[test]
    fn audio_encoder_gradients() {
        let cfg = small_cfg();
        let mut store = ParamStore::default();
        let enc = Encoders::new(&mut Builder::new(&mut store, "", 1), &cfg);
        let mut r = rng::stream(1, "x");
        let x = randn(&mut r, 2 * 5, 4);
        let res = gradcheck::check(
            &store,
            &[x],
            |t, v| {
                let y = enc.audio.forward(t, v[0]);
                t.sum_sq(y)
            },
            40,
            2,
        );
        for c in res {
            if c.name == "input0" || c.name == "audio" {
                assert!(c.max_rel < 1e-4, "{c:?}");
            }
        }
    }

    #[test]
    fn point_encoder_gradients_and_symmetry() {
        let cfg = small_cfg();
        let mut store = ParamStore::default();
        let enc = Encoders::new(&mut Builder::new(&mut store, "", 1), &cfg);
        let mut r = rng::stream(2, "x");
        let x = randn(&mut r, 12, 3);
        let res = gradcheck::check(
            &store,
            &[x.clone()],
            |t, v| {
                let y = enc.points.forward(t, v[0]);
                t.sum_sq(y)
            },
            40,
            2,
        );
        for c in res.iter().filter(|c| c.name == "input0" || c.name == "points") {
            assert!(c.max_rel < 1e-4, "{c:?}");
        }
        let mut perm = x.clone();
        for (i, j) in [(0, 5), (1, 3), (6, 11), (7, 8)] {
            let (a, b) = (perm.row(i).to_owned(), perm.row(j).to_owned());
            perm.row_mut(i).assign(&b);
            perm.row_mut(j).assign(&a);
        }
        let run = |m: &Mat| {
            let mut t = Tape::new(&store);
            let v = t.constant(m.clone());
            let y = enc.points.forward(&mut t, v);
            t.value(y).clone()
        };
        let (a, b) = (run(&x), run(&perm));
        assert!(a.iter().zip(b.iter()).all(|(p, q)| (p - q).abs() < 1e-5));
    }

    #[test]
    fn proprio_zero_and_dead_relu() {
        let cfg = small_cfg();
        let mut store = ParamStore::default();
        let enc = Encoders::new(&mut Builder::new(&mut store, "", 1), &cfg);
        let x = Mat::from_elem((1, 7), 0.3);
        let mut zeroed = store.clone();
        for id in 0..zeroed.len() {
            zeroed.value_mut(id).fill(0.0);
        }
        let mut t = Tape::new(&zeroed);
        let v = t.constant(x.clone());
        let y = enc.proprio.forward(&mut t, v);
        assert!(t.value(y).iter().all(|&v| v == 0.0));
        let mut neg = store.clone();
        neg.value_mut(enc.proprio.fc0.b).fill(-100.0);
        let mut t = Tape::new(&neg);
        let v = t.constant(x);
        let y = enc.proprio.forward(&mut t, v);
        assert_eq!(t.value(y), neg.value(enc.proprio.fc1.b));
    }

    #[test]
    fn lambda_zero_blocks_proprio_decoder() {
        let cfg = small_cfg();
        let mut store = ParamStore::default();
        let ae = AudioProprioAutoencoder::new(&mut Builder::new(&mut store, "", 1), &cfg);
        let mut r = rng::stream(3, "x");
        let a = randn(&mut r, 3 * 5, 4);
        let p = randn(&mut r, 3, 7);
        let mut t = Tape::new(&store);
        let (total, _, _) = ae.loss(&mut t, &a, &p, 0.0);
        let g = t.backward(total).params();
        for id in 0..store.len() {
            if store.name(id).contains("proprio_dec") {
                assert!(g[id].iter().all(|&v| v == 0.0), "{}", store.name(id));
            }
        }
    }

    #[test]
    fn silence_embedding_is_deterministic() {
        let cfg = small_cfg();
        let mut store = ParamStore::default();
        let enc = Encoders::new(&mut Builder::new(&mut store, "", 1), &cfg);
        let x = Mat::from_elem((5, 4), crate::pipeline::silence_level());
        let run = || {
            let mut t = Tape::new(&store);
            let v = t.constant(x.clone());
            let y = enc.audio.forward(&mut t, v);
            t.value(y).clone()
        };
        assert_eq!(run(), run());
    }
}
