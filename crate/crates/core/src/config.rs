//! Run configuration: one TOML file with `[world]`, `[pipeline]`, `[model]`,
//! `[train]`, `[eval]` and `[mi]` sections. Unknown keys are rejected and
//! every range check names the offending key.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Pour,
    Latch,
}

impl TaskId {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Pour => "pour",
            TaskId::Latch => "latch",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pour" => Ok(TaskId::Pour),
            "latch" => Ok(TaskId::Latch),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }

    /// Proprioception width: end-effector pose, plus gripper for latch.
    pub fn proprio_dim(self) -> usize {
        match self {
            TaskId::Pour => 7,
            TaskId::Latch => 8,
        }
    }

    /// Action width: delta pose, plus gripper command for latch.
    pub fn action_dim(self) -> usize {
        self.proprio_dim()
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Target container geometry (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerParams {
    pub height: f64,
    pub radius_top: f64,
    pub radius_bottom: f64,
}

impl ContainerParams {
    /// Volume of the frustum.
    pub fn capacity(&self) -> f64 {
        let (r1, r2) = (self.radius_top, self.radius_bottom);
        std::f64::consts::PI * self.height * (r1 * r1 + r1 * r2 + r2 * r2) / 3.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub task: TaskId,
    pub sample_rate: u32,
    pub control_rate: u32,
    /// Step cap for expert episodes and policy rollouts.
    pub max_steps: usize,
    /// Idle steps recorded after the expert finishes.
    pub settle_steps: usize,
    pub expert_deadband: f64,
    pub expert_gain: f64,
    pub target_fill: f64,
    pub tilt_threshold: f64,
    /// Extra tilt above the threshold at full pour.
    pub max_pour_tilt: f64,
    pub max_tilt_rate: f64,
    pub max_speed: f64,
    /// Range of the hidden per-episode flow coefficient (fill fraction per
    /// second per radian above threshold, for the base container).
    pub flow_min: f64,
    pub flow_max: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub tone_amplitude: f64,
    /// Tone-to-noise ratio in dB; `inf` gives noise-free audio.
    pub snr_db: f64,
    pub container: ContainerParams,
    /// Raw rendered points per frame before cropping and sampling.
    pub raw_points: usize,
    /// Latch door travel (m).
    pub door_travel: f64,
    /// Std of the translation perturbation applied to executed expert
    /// actions during demonstration, as a fraction of the per-step speed
    /// limit. The recorded action stays the clean expert action.
    pub demo_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            task: TaskId::Pour,
            sample_rate: 16_000,
            control_rate: 10,
            max_steps: 200,
            settle_steps: 5,
            expert_deadband: 0.02,
            expert_gain: 2.5,
            target_fill: 0.99,
            tilt_threshold: 0.6,
            max_pour_tilt: 0.5,
            max_tilt_rate: 0.5,
            max_speed: 0.2,
            flow_min: 0.25,
            flow_max: 0.5,
            f_min: 300.0,
            f_max: 900.0,
            tone_amplitude: 0.1,
            snr_db: 20.0,
            container: ContainerParams {
                height: 0.10,
                radius_top: 0.04,
                radius_bottom: 0.035,
            },
            raw_points: 256,
            door_travel: 0.3,
            demo_noise: 0.0,
        }
    }
}

impl WorldConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate as f64
    }

    /// Audio samples per control step.
    pub fn block_len(&self) -> usize {
        (self.sample_rate / self.control_rate) as usize
    }

    pub fn noise_free(&self) -> bool {
        self.snr_db.is_infinite() && self.snr_db > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config {
                    key: format!("world.{key}"),
                    message: msg.to_string(),
                })
            }
        };
        check(self.control_rate > 0, "control_rate", "must be positive")?;
        check(
            self.sample_rate % self.control_rate == 0,
            "sample_rate",
            "must be a multiple of control_rate",
        )?;
        check(
            self.demo_noise.is_finite() && self.demo_noise >= 0.0,
            "demo_noise",
            "must be finite and non-negative",
        )?;
        check(self.max_steps >= 3, "max_steps", "must be at least 3")?;
        check(
            self.expert_deadband > 0.0 && self.expert_deadband < 0.5,
            "expert_deadband",
            "must lie in (0, 0.5)",
        )?;
        check(
            self.target_fill > 0.0 && self.target_fill <= 1.0,
            "target_fill",
            "must lie in (0, 1]",
        )?;
        check(self.flow_min > 0.0 && self.flow_min <= self.flow_max, "flow_min", "need 0 < flow_min <= flow_max")?;
        check(self.f_min > 0.0 && self.f_min < self.f_max, "f_min", "need 0 < f_min < f_max")?;
        check(
            self.f_max < self.sample_rate as f64 / 2.0,
            "f_max",
            "must be below Nyquist",
        )?;
        check(self.container.height > 0.0, "container.height", "must be positive")?;
        check(self.raw_points >= 1, "raw_points", "must be at least 1")?;
        check(self.max_tilt_rate > 0.0, "max_tilt_rate", "must be positive")?;
        check(self.max_speed > 0.0, "max_speed", "must be positive")?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub mel_bins: usize,
    pub window_frames: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    pub points: usize,
    pub frames_stacked: usize,
    /// Crop box; the task's default box is used when absent.
    pub crop_min: Option<[f64; 3]>,
    pub crop_max: Option<[f64; 3]>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mel_bins: 64,
            window_frames: 32,
            n_fft: 512,
            hop: 160,
            f_lo: 100.0,
            f_hi: 2000.0,
            points: 512,
            frames_stacked: 2,
            crop_min: None,
            crop_max: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecSlice {
    First,
    Last,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Noise prediction.
    Epsilon,
    /// Direct prediction of the clean action chunk.
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub fusion: String,
    pub audio_channels: usize,
    pub audio_kernel: usize,
    pub point_hidden: usize,
    pub proprio_hidden: usize,
    pub gate_hidden: usize,
    pub denoiser_hidden: usize,
    pub denoiser_blocks: usize,
    pub time_embed: usize,
    pub diffusion_steps: usize,
    pub inference_steps: usize,
    /// Chunk length H + 1.
    pub horizon: usize,
    pub exec_actions: usize,
    pub exec_slice: ExecSlice,
    pub objective: Objective,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 128,
            heads: 1,
            fusion: "hierarchical".into(),
            audio_channels: 32,
            audio_kernel: 3,
            point_hidden: 64,
            proprio_hidden: 64,
            gate_hidden: 64,
            denoiser_hidden: 256,
            denoiser_blocks: 2,
            time_embed: 32,
            diffusion_steps: 50,
            inference_steps: 10,
            horizon: 8,
            exec_actions: 4,
            exec_slice: ExecSlice::First,
            objective: Objective::Epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    pub min_lr_ratio: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub pretrain: bool,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub lambda_p: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            batch: 64,
            lr: 1e-3,
            warmup: 100,
            min_lr_ratio: 0.05,
            weight_decay: 1e-6,
            grad_clip: 1.0,
            seed: 0,
            pretrain: false,
            pretrain_steps: 500,
            pretrain_lr: 1e-3,
            lambda_p: 1.0,
            checkpoint_every: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub trials: usize,
    /// Explicit rollout seeds; derived from `seed` when empty.
    pub seeds: Vec<u64>,
    pub seed: u64,
    pub variants: Vec<u32>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            trials: 20,
            seeds: Vec::new(),
            seed: 1000,
            variants: vec![1, 2, 3, 4],
        }
    }
}

impl EvalConfig {
    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.trials as u64).map(|i| self.seed + i).collect()
        } else {
            self.seeds.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiConfig {
    pub k: usize,
    pub d_reduce: usize,
    pub rollouts: usize,
}

impl Default for MiConfig {
    fn default() -> Self {
        MiConfig {
            k: 3,
            d_reduce: 8,
            rollouts: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub mi: MiConfig,
}

fn config_error(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

/// Dotted `section.key` for a parse error: the key on the line the error
/// points at, or the back-quoted field of an unknown-field message, inside
/// the nearest preceding `[section]` header.
fn offending_key(text: &str, span: Option<std::ops::Range<usize>>, message: &str) -> String {
    let quoted = message.split('`').nth(1).map(str::to_string);
    let Some(span) = span else {
        return quoted.unwrap_or_else(|| "<document>".into());
    };
    let before = &text[..span.start.min(text.len())];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or_default().trim();
    if line.starts_with('[') {
        return line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
    }
    let key = match line.split_once('=') {
        Some((k, _)) => k.trim().to_string(),
        None => quoted.unwrap_or_else(|| line.to_string()),
    };
    let section = before[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && !l.starts_with("[["))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    match section {
        Some(sec) => format!("{sec}.{key}"),
        None => key,
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            config_error(offending_key(text, e.span(), &message), message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        let p = &self.pipeline;
        let m = &self.model;
        let need = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(config_error(key, msg))
            }
        };
        need(p.mel_bins >= 1, "pipeline.mel_bins", "must be at least 1")?;
        need(p.window_frames >= 1, "pipeline.window_frames", "must be at least 1")?;
        need(p.n_fft >= 2 && p.n_fft.is_power_of_two(), "pipeline.n_fft", "must be a power of two")?;
        need(p.hop >= 1, "pipeline.hop", "must be at least 1")?;
        need(
            self.world.block_len() % p.hop == 0,
            "pipeline.hop",
            "must divide the audio block length",
        )?;
        need(
            p.f_lo >= 0.0 && p.f_lo < p.f_hi && p.f_hi <= self.world.sample_rate as f64 / 2.0,
            "pipeline.f_hi",
            "need 0 <= f_lo < f_hi <= Nyquist",
        )?;
        need(p.points >= 1, "pipeline.points", "must be at least 1")?;
        need(p.frames_stacked >= 1, "pipeline.frames_stacked", "must be at least 1")?;
        need(
            p.crop_min.is_some() == p.crop_max.is_some(),
            "pipeline.crop_min",
            "crop_min and crop_max must be given together",
        )?;
        need(m.dim >= 2, "model.dim", "must be at least 2")?;
        need(m.heads >= 1 && m.dim % m.heads == 0, "model.heads", "must divide model.dim")?;
        crate::fusion::FusionMode::parse(&m.fusion).map_err(|_| {
            config_error("model.fusion", format!("unknown fusion mode `{}`", m.fusion))
        })?;
        need(m.audio_kernel % 2 == 1, "model.audio_kernel", "must be odd")?;
        need(m.time_embed % 2 == 0, "model.time_embed", "must be even")?;
        need(m.diffusion_steps >= 1, "model.diffusion_steps", "must be at least 1")?;
        need(
            m.inference_steps >= 1 && m.inference_steps <= m.diffusion_steps,
            "model.inference_steps",
            "must lie in 1..=model.diffusion_steps",
        )?;
        need(m.horizon >= 1, "model.horizon", "must be at least 1")?;
        need(
            m.exec_actions >= 1 && m.exec_actions <= m.horizon,
            "model.exec_actions",
            "must lie in 1..=model.horizon",
        )?;
        need(self.train.batch >= 1, "train.batch", "must be at least 1")?;
        need(self.train.lr > 0.0, "train.lr", "must be positive")?;
        need(self.train.lambda_p >= 0.0, "train.lambda_p", "must be non-negative")?;
        need(self.eval.trials >= 1, "eval.trials", "must be at least 1")?;
        need(self.mi.k >= 1, "mi.k", "must be at least 1")?;
        need(self.mi.d_reduce >= 1, "mi.d_reduce", "must be at least 1")?;
        Ok(())
    }
}
