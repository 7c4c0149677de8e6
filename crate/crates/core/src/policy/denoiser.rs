//! MLP denoiser over a flattened action chunk, conditioned on the diffusion
//! step and the fused latent through FiLM residual blocks.

use crate::autograd::{Mat, Tape, Var};
use crate::nn::{sinusoidal, Builder, Linear};

#[derive(Clone, Debug)]
struct Block {
    fc0: Linear,
    film: Linear,
    fc1: Linear,
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    time: Linear,
    input: Linear,
    blocks: Vec<Block>,
    out: Linear,
    time_dim: usize,
    hidden: usize,
}

impl Denoiser {
    pub fn new(b: &mut Builder, chunk: usize, latent: usize, hidden: usize, blocks: usize, time_dim: usize) -> Self {
        let mut b = b.sub("denoiser");
        let cond = time_dim + latent;
        let blocks = (0..blocks)
            .map(|i| {
                let mut bb = b.sub(&format!("block{i}"));
                Block {
                    fc0: bb.linear("fc0", hidden, hidden),
                    film: bb.linear_zero("film", cond, 2 * hidden),
                    fc1: bb.linear("fc1", hidden, hidden),
                }
            })
            .collect();
        Denoiser {
            time: b.linear("time", time_dim, time_dim),
            input: b.linear("input", chunk + cond, hidden),
            blocks,
            out: b.linear("out", hidden, chunk),
            time_dim,
            hidden,
        }
    }

    /// Sinusoidal step embeddings, one row per sample.
    pub fn step_embedding(&self, ks: &[usize]) -> Mat {
        let mut m = Mat::zeros((ks.len(), self.time_dim));
        for (r, &k) in ks.iter().enumerate() {
            m.row_mut(r).assign(&ndarray::Array1::from(sinusoidal(k as f64, self.time_dim)));
        }
        m
    }

    /// `x`: `B × chunk` noisy actions; `z`: `B × latent`. Returns `B × chunk`.
    pub fn forward(&self, t: &mut Tape, x: Var, ks: &[usize], z: Var) -> Var {
        let emb = t.constant(self.step_embedding(ks));
        let te = self.time.forward(t, emb);
        let te = t.relu(te);
        let cond = t.concat_cols(&[te, z]);
        let inp = t.concat_cols(&[x, cond]);
        let mut h = self.input.forward(t, inp);
        for blk in &self.blocks {
            let a = t.relu(h);
            let a = blk.fc0.forward(t, a);
            let gb = blk.film.forward(t, cond);
            let gamma = t.slice_cols(gb, 0, self.hidden);
            let beta = t.slice_cols(gb, self.hidden, self.hidden);
            let scaled = t.mul(a, gamma);
            let a = t.add(a, scaled);
            let a = t.add(a, beta);
            let a = t.relu(a);
            let a = blk.fc1.forward(t, a);
            h = t.add(h, a);
        }
        let h = t.relu(h);
        self.out.forward(t, h)
    }
}
