//! Parameter storage and the handful of layers the encoders, fusion stack
//! and denoiser are assembled from.

use std::collections::HashMap;

use rand::Rng;

use crate::autograd::{Mat, Tape, Var};
use crate::rng;

pub const LN_EPS: f64 = 1e-5;

/// Named parameter matrices. Names are dotted paths, e.g.
/// `audio.time.conv0.w`; the first segment is the parameter group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn value(&self, id: usize) -> &Mat {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.values[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Leading segment of a parameter name.
    pub fn group(&self, id: usize) -> &str {
        self.names[id].split('.').next().unwrap_or("")
    }

    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for id in 0..self.len() {
            let g = self.group(id);
            if !out.iter().any(|x| x == g) {
                out.push(g.to_string());
            }
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Copies every parameter whose name also exists in `other` with the same
    /// shape. Returns how many were copied.
    pub fn load_matching(&mut self, other: &ParamStore) -> usize {
        let mut n = 0;
        for (name, value) in other.iter() {
            if let Some(id) = self.id(name) {
                if self.values[id].dim() == value.dim() {
                    self.values[id].assign(value);
                    n += 1;
                }
            }
        }
        n
    }

    /// Rounds every value to the nearest `f32`, so a checkpoint written in
    /// 32-bit precision restores the exact training state.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }
}

fn join(prefix: &str, leaf: &str) -> String {
    if prefix.is_empty() {
        leaf.to_string()
    } else {
        format!("{prefix}.{leaf}")
    }
}

/// Registers parameters under a name prefix with seeded initialization.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    prefix: String,
    rng: rng::Rng,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, prefix: &str, seed: u64) -> Self {
        Builder {
            store,
            prefix: prefix.to_string(),
            rng: rng::stream(seed, prefix),
        }
    }

    pub fn sub(&mut self, name: &str) -> Builder<'_> {
        let prefix = join(&self.prefix, name);
        let seed = rng::derive_seed(self.rng.random(), &prefix);
        Builder {
            store: &mut *self.store,
            prefix,
            rng: rng::stream(seed, "init"),
        }
    }

    fn name(&self, leaf: &str) -> String {
        join(&self.prefix, leaf)
    }

    /// Uniform Glorot initialization.
    pub fn glorot(&mut self, leaf: &str, fan_in: usize, fan_out: usize) -> usize {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let rng = &mut self.rng;
        let m = Mat::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit));
        let m = m.mapv(|x| x as f32 as f64);
        self.store.add(self.name(leaf), m)
    }

    pub fn zeros(&mut self, leaf: &str, rows: usize, cols: usize) -> usize {
        self.store.add(self.name(leaf), Mat::zeros((rows, cols)))
    }

    pub fn filled(&mut self, leaf: &str, rows: usize, cols: usize, value: f64) -> usize {
        self.store.add(self.name(leaf), Mat::from_elem((rows, cols), value))
    }

    pub fn identity(&mut self, leaf: &str, n: usize) -> usize {
        self.store.add(self.name(leaf), Mat::eye(n))
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let mut b = self.sub(name);
        Linear {
            w: b.glorot("w", fan_in, fan_out),
            b: b.zeros("b", 1, fan_out),
        }
    }

    pub fn linear_zero(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let mut b = self.sub(name);
        Linear {
            w: b.zeros("w", fan_in, fan_out),
            b: b.zeros("b", 1, fan_out),
        }
    }

    pub fn linear_identity(&mut self, name: &str, n: usize) -> Linear {
        let mut b = self.sub(name);
        Linear {
            w: b.identity("w", n),
            b: b.zeros("b", 1, n),
        }
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        let mut b = self.sub(name);
        LayerNorm {
            gain: b.filled("gain", 1, dim, 1.0),
            bias: b.zeros("bias", 1, dim),
        }
    }
}

/// `x W + b` with `W: in × out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }

    pub fn fan_in(&self, store: &ParamStore) -> usize {
        store.value(self.w).nrows()
    }

    pub fn fan_out(&self, store: &ParamStore) -> usize {
        store.value(self.w).ncols()
    }
}

/// Row-wise layer normalization with learned gain and bias.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: usize,
    pub bias: usize,
}

impl LayerNorm {
    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let n = t.layer_norm(x, LN_EPS);
        let g = t.param(self.gain);
        let b = t.param(self.bias);
        let y = t.mul_row(n, g);
        t.add_row(y, b)
    }
}

/// Sinusoidal embedding of a scalar step index.
pub fn sinusoidal(step: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = (step * freq).sin();
        out[half + i] = (step * freq).cos();
    }
    out
}
