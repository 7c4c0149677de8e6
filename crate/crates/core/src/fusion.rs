//! Fusion of modality tokens into one latent: the hierarchical stack
//! (audio-gated binary branches feeding three-way cross-attention, with the
//! raw audio tokens carried past the first stage), its two ablations and
//! three baselines.

use crate::autograd::{Tape, Var};
use crate::encoders::Tokens;
use crate::error::{Error, Result};
use crate::nn::{Builder, LayerNorm, Linear};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    Hierarchical,
    BbfmOnly,
    ImmOnly,
    ConcatPs,
    ConcatAps,
    TransformerManiwav,
}

impl FusionMode {
    pub const ALL: [FusionMode; 6] = [
        FusionMode::Hierarchical,
        FusionMode::BbfmOnly,
        FusionMode::ImmOnly,
        FusionMode::ConcatPs,
        FusionMode::ConcatAps,
        FusionMode::TransformerManiwav,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Hierarchical => "hierarchical",
            FusionMode::BbfmOnly => "bbfm_only",
            FusionMode::ImmOnly => "imm_only",
            FusionMode::ConcatPs => "concat_ps",
            FusionMode::ConcatAps => "concat_aps",
            FusionMode::TransformerManiwav => "transformer_maniwav",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownMode(s.to_string()))
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scaled dot-product self-attention over groups of `len` tokens with
/// learned query, key, value and output projections.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new(b: &mut Builder, name: &str, d: usize, heads: usize) -> Self {
        let mut b = b.sub(name);
        SelfAttention {
            q: b.linear("q", d, d),
            k: b.linear("k", d, d),
            v: b.linear("v", d, d),
            o: b.linear("o", d, d),
            heads,
        }
    }

    /// Returns the output and the attention node (for its probabilities).
    pub fn forward(&self, t: &mut Tape, x: Var, len: usize) -> (Var, Var) {
        let q = self.q.forward(t, x);
        let k = self.k.forward(t, x);
        let v = self.v.forward(t, x);
        let a = t.attention(q, k, v, len, len, self.heads);
        (self.o.forward(t, a), a)
    }
}

/// Cross-attention from query tokens to key/value tokens, followed by a
/// residual connection and layer normalization.
#[derive(Clone, Debug)]
pub struct CrossAttendBlock {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub norm: LayerNorm,
    pub heads: usize,
}

impl CrossAttendBlock {
    pub fn new(b: &mut Builder, name: &str, d: usize, heads: usize) -> Self {
        let mut b = b.sub(name);
        CrossAttendBlock {
            q: b.linear("q", d, d),
            k: b.linear("k", d, d),
            v: b.linear("v", d, d),
            o: b.linear("o", d, d),
            norm: b.layer_norm("norm", d),
            heads,
        }
    }

    /// Output and the attention node.
    pub fn forward(&self, t: &mut Tape, queries: Var, lq: usize, context: Var, lk: usize) -> (Var, Var) {
        let q = self.q.forward(t, queries);
        let k = self.k.forward(t, context);
        let v = self.v.forward(t, context);
        let a = t.attention(q, k, v, lq, lk, self.heads);
        let z = self.o.forward(t, a);
        let r = t.add(z, queries);
        (self.norm.forward(t, r), a)
    }
}

/// Two-layer MLP ending in the gate `2·sigmoid(·)`; the last layer starts at
/// zero so the gate starts at one.
#[derive(Clone, Debug)]
pub struct Gate {
    pub fc0: Linear,
    pub fc1: Linear,
}

impl Gate {
    pub fn new(b: &mut Builder, name: &str, d: usize, hidden: usize) -> Self {
        let mut b = b.sub(name);
        Gate {
            fc0: b.linear("fc0", d, hidden),
            fc1: b.linear_zero("fc1", hidden, d),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.fc0.forward(t, x);
        let h = t.relu(h);
        let y = self.fc1.forward(t, h);
        let s = t.sigmoid(y);
        t.scale(s, 2.0)
    }
}

/// Intermediate tensors of the binary-branched stage, each `G × D`.
#[derive(Clone, Copy, Debug)]
pub struct BbfmVars {
    pub h_p: Var,
    pub h_s: Var,
    pub h_s_hat: Var,
    pub gamma: Var,
    pub beta: Var,
}

/// Audio gates self-attended point and proprio tokens; the gated point
/// tokens then FiLM-modulate the gated proprio tokens.
#[derive(Clone, Debug)]
pub struct Bbfm {
    pub attn_p: SelfAttention,
    pub attn_s: SelfAttention,
    pub a2p: Gate,
    pub a2s: Gate,
    pub p2s: [Linear; 2],
    d: usize,
}

impl Bbfm {
    pub fn new(b: &mut Builder, d: usize, hidden: usize, heads: usize) -> Self {
        let mut b = b.sub("bbfm");
        let attn_p = SelfAttention::new(&mut b, "attn_p", d, heads);
        let attn_s = SelfAttention::new(&mut b, "attn_s", d, heads);
        let a2p = Gate::new(&mut b, "a2p", d, hidden);
        let a2s = Gate::new(&mut b, "a2s", d, hidden);
        let p2s = [b.linear("p2s0", d, hidden), b.linear_zero("p2s1", hidden, 2 * d)];
        Bbfm {
            attn_p,
            attn_s,
            a2p,
            a2s,
            p2s,
            d,
        }
    }

    pub fn forward(&self, t: &mut Tape, x_a: Var, x_p: Var, x_s: Var, n_obs: usize) -> BbfmVars {
        let (sp, _) = self.attn_p.forward(t, x_p, n_obs);
        let gp = self.a2p.forward(t, x_a);
        let h_p = t.mul(sp, gp);
        let (ss, _) = self.attn_s.forward(t, x_s, n_obs);
        let gs = self.a2s.forward(t, x_a);
        let h_s = t.mul(ss, gs);
        let h = self.p2s[0].forward(t, h_p);
        let h = t.relu(h);
        let gb = self.p2s[1].forward(t, h);
        let gamma = t.slice_cols(gb, 0, self.d);
        let beta = t.slice_cols(gb, self.d, self.d);
        let scaled = t.mul(gamma, h_s);
        let mod_ = t.add(h_s, scaled);
        let h_s_hat = t.add(mod_, beta);
        BbfmVars {
            h_p,
            h_s,
            h_s_hat,
            gamma,
            beta,
        }
    }
}

/// Three parallel cross-attention blocks, each modality querying the other
/// two, pooled over tokens and projected to `3D`.
#[derive(Clone, Debug)]
pub struct Imm {
    pub a_ps: CrossAttendBlock,
    pub p_as: CrossAttendBlock,
    pub s_ap: CrossAttendBlock,
    pub proj: Linear,
}

impl Imm {
    pub fn new(b: &mut Builder, d: usize, heads: usize) -> Self {
        let mut b = b.sub("imm");
        Imm {
            a_ps: CrossAttendBlock::new(&mut b, "a_ps", d, heads),
            p_as: CrossAttendBlock::new(&mut b, "p_as", d, heads),
            s_ap: CrossAttendBlock::new(&mut b, "s_ap", d, heads),
            proj: b.linear_identity("proj", 3 * d),
        }
    }

    /// `(x_a, h_p, h_s)` token sets of `G × D` to `B × 3D`.
    pub fn forward(&self, t: &mut Tape, x_a: Var, h_p: Var, h_s: Var, n_obs: usize) -> Var {
        let l = n_obs;
        let kv_ps = t.concat_groups(&[(h_p, l), (h_s, l)]);
        let kv_as = t.concat_groups(&[(x_a, l), (h_s, l)]);
        let kv_ap = t.concat_groups(&[(x_a, l), (h_p, l)]);
        let (za, _) = self.a_ps.forward(t, x_a, l, kv_ps, 2 * l);
        let (zp, _) = self.p_as.forward(t, h_p, l, kv_as, 2 * l);
        let (zs, _) = self.s_ap.forward(t, h_s, l, kv_ap, 2 * l);
        let pa = t.group_mean(za, l);
        let pp = t.group_mean(zp, l);
        let ps = t.group_mean(zs, l);
        let cat = t.concat_cols(&[pa, pp, ps]);
        self.proj.forward(t, cat)
    }
}

/// Post-norm transformer encoder layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: SelfAttention,
    pub norm0: LayerNorm,
    pub ff0: Linear,
    pub ff1: Linear,
    pub norm1: LayerNorm,
}

impl EncoderLayer {
    pub fn new(b: &mut Builder, name: &str, d: usize, heads: usize) -> Self {
        let mut b = b.sub(name);
        EncoderLayer {
            attn: SelfAttention::new(&mut b, "attn", d, heads),
            norm0: b.layer_norm("norm0", d),
            ff0: b.linear("ff0", d, 2 * d),
            ff1: b.linear("ff1", 2 * d, d),
            norm1: b.layer_norm("norm1", d),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var, len: usize) -> Var {
        let (a, _) = self.attn.forward(t, x, len);
        let r = t.add(x, a);
        let h = self.norm0.forward(t, r);
        let f = self.ff0.forward(t, h);
        let f = t.relu(f);
        let f = self.ff1.forward(t, f);
        let r = t.add(h, f);
        self.norm1.forward(t, r)
    }
}

#[derive(Clone, Debug)]
enum Head {
    Hierarchical { bbfm: Bbfm, imm: Imm },
    BbfmOnly { bbfm: Bbfm, proj: Linear },
    ImmOnly { imm: Imm },
    ConcatPs { proj: Linear },
    ConcatAps { proj: Linear },
    Maniwav { layers: Vec<EncoderLayer>, fc0: Linear, fc1: Linear },
}

/// A fusion stack for one mode. Every mode maps `G × D` tokens to a
/// `B × 3D` latent.
#[derive(Clone, Debug)]
pub struct Fuser {
    pub mode: FusionMode,
    head: Head,
}

/// Latent plus the binary-branched intermediates when the mode has them.
#[derive(Clone, Copy, Debug)]
pub struct Fused {
    pub z: Var,
    pub bbfm: Option<BbfmVars>,
}

impl Fuser {
    pub fn new(b: &mut Builder, mode: FusionMode, d: usize, gate_hidden: usize, heads: usize) -> Self {
        let head = match mode {
            FusionMode::Hierarchical => Head::Hierarchical {
                bbfm: Bbfm::new(b, d, gate_hidden, heads),
                imm: Imm::new(b, d, heads),
            },
            FusionMode::BbfmOnly => Head::BbfmOnly {
                bbfm: Bbfm::new(b, d, gate_hidden, heads),
                proj: b.sub("fuse").linear("proj", 2 * d, 3 * d),
            },
            FusionMode::ImmOnly => Head::ImmOnly { imm: Imm::new(b, d, heads) },
            FusionMode::ConcatPs => Head::ConcatPs {
                proj: b.sub("fuse").linear("proj", 2 * d, 3 * d),
            },
            FusionMode::ConcatAps => Head::ConcatAps {
                proj: b.sub("fuse").linear_identity("proj", 3 * d),
            },
            FusionMode::TransformerManiwav => {
                let mut b = b.sub("maniwav");
                Head::Maniwav {
                    layers: vec![EncoderLayer::new(&mut b, "layer0", d, heads), EncoderLayer::new(&mut b, "layer1", d, heads)],
                    fc0: b.linear("fc0", 2 * d, 3 * d),
                    fc1: b.linear("fc1", 3 * d, 3 * d),
                }
            }
        };
        Fuser { mode, head }
    }

    pub fn bbfm(&self) -> Option<&Bbfm> {
        match &self.head {
            Head::Hierarchical { bbfm, .. } | Head::BbfmOnly { bbfm, .. } => Some(bbfm),
            _ => None,
        }
    }

    pub fn imm(&self) -> Option<&Imm> {
        match &self.head {
            Head::Hierarchical { imm, .. } | Head::ImmOnly { imm } => Some(imm),
            _ => None,
        }
    }

    pub fn forward(&self, t: &mut Tape, tok: &Tokens, n_obs: usize) -> Fused {
        let l = n_obs;
        match &self.head {
            Head::Hierarchical { bbfm, imm } => {
                let bv = bbfm.forward(t, tok.audio, tok.points, tok.proprio, l);
                let z = imm.forward(t, tok.audio, bv.h_p, bv.h_s_hat, l);
                Fused { z, bbfm: Some(bv) }
            }
            Head::BbfmOnly { bbfm, proj } => {
                let bv = bbfm.forward(t, tok.audio, tok.points, tok.proprio, l);
                let pp = t.group_mean(bv.h_p, l);
                let ps = t.group_mean(bv.h_s_hat, l);
                let cat = t.concat_cols(&[pp, ps]);
                Fused {
                    z: proj.forward(t, cat),
                    bbfm: Some(bv),
                }
            }
            Head::ImmOnly { imm } => Fused {
                z: imm.forward(t, tok.audio, tok.points, tok.proprio, l),
                bbfm: None,
            },
            Head::ConcatPs { proj } => {
                let pp = t.group_mean(tok.points, l);
                let ps = t.group_mean(tok.proprio, l);
                let cat = t.concat_cols(&[pp, ps]);
                Fused {
                    z: proj.forward(t, cat),
                    bbfm: None,
                }
            }
            Head::ConcatAps { proj } => {
                let pa = t.group_mean(tok.audio, l);
                let pp = t.group_mean(tok.points, l);
                let ps = t.group_mean(tok.proprio, l);
                let cat = t.concat_cols(&[pa, pp, ps]);
                Fused {
                    z: proj.forward(t, cat),
                    bbfm: None,
                }
            }
            Head::Maniwav { layers, fc0, fc1 } => {
                let mut h = t.concat_groups(&[(tok.audio, l), (tok.points, l)]);
                for layer in layers {
                    h = layer.forward(t, h, 2 * l);
                }
                let pooled = t.group_mean(h, 2 * l);
                let ps = t.group_mean(tok.proprio, l);
                let cat = t.concat_cols(&[pooled, ps]);
                let y = fc0.forward(t, cat);
                let y = t.relu(y);
                Fused {
                    z: fc1.forward(t, y),
                    bbfm: None,
                }
            }
        }
    }
}
