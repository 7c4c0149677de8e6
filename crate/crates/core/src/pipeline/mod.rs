//! Raw sensor streams to model-ready observations: log-Mel windows, cropped
//! and farthest-point-sampled clouds, and proprioception, stacked over the
//! last few control steps.

pub mod mel;
pub mod norm;

use log::warn;
use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::{Rng as _, SeedableRng};

pub use mel::{log_mel, silence_level, LogMel, MelSpec, EPS_FLOOR};
pub use norm::NormStats;

use crate::config::{PipelineConfig, WorldConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::world::{self, Episode, Frame};

/// Stacked multimodal observation for one decision step.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// `N_o × T × M` log-Mel windows.
    pub audio: Array3<f64>,
    /// `N_o × N × 3` points in meters.
    pub points: Array3<f64>,
    /// `N_o × D_s`.
    pub proprio: Array2<f64>,
}

impl Observation {
    pub fn frames(&self) -> usize {
        self.proprio.nrows()
    }
}

/// One control step after processing, before stacking.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedFrame {
    /// `T × M`.
    pub audio: Array2<f64>,
    /// `N × 3`.
    pub points: Array2<f64>,
    pub proprio: Vec<f64>,
    /// The crop removed every point and the fallback was used.
    pub empty_crop: bool,
}

/// The last `window` frames ending at frame `t` (inclusive), left-padded
/// with silence frames when fewer exist.
pub fn window_audio(frames: ArrayView2<f64>, t: usize, window: usize) -> Array2<f64> {
    window_ending(frames, Some(t), window)
}

/// Like [`window_audio`], with `None` meaning no frame is available yet.
fn window_ending(frames: ArrayView2<f64>, t: Option<usize>, window: usize) -> Array2<f64> {
    let m = frames.ncols();
    let mut out = Array2::from_elem((window, m), silence_level());
    if let Some(t) = t {
        let t = t.min(frames.nrows().saturating_sub(1));
        let take = (t + 1).min(window);
        out.slice_mut(s![window - take.., ..])
            .assign(&frames.slice(s![t + 1 - take..=t, ..]));
    }
    out
}

/// Keeps the points inside `[lo, hi]` and reduces them to exactly `n` by
/// farthest point sampling, or cyclic repetition when fewer survive. The
/// flag is set when nothing survives and the box center is returned.
pub fn crop_and_fps(points: ArrayView2<f64>, lo: [f64; 3], hi: [f64; 3], n: usize, seed: u64) -> Result<(Array2<f64>, bool)> {
    if points.ncols() < 3 {
        return Err(Error::shape("crop_and_fps", "K × 3", format!("K × {}", points.ncols())));
    }
    if points.nrows() == 0 {
        return Err(Error::Empty("point cloud"));
    }
    let kept: Vec<[f64; 3]> = points
        .rows()
        .into_iter()
        .map(|r| [r[0], r[1], r[2]])
        .filter(|p| (0..3).all(|d| p[d] >= lo[d] && p[d] <= hi[d]))
        .collect();
    if kept.is_empty() {
        warn!("crop box removed every point; using the box center");
        let c = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
        return Ok((Array2::from_shape_fn((n, 3), |(_, d)| c[d]), true));
    }
    let order = if kept.len() <= n {
        (0..n).map(|i| i % kept.len()).collect()
    } else {
        let start = rng::Rng::seed_from_u64(seed).random_range(0..kept.len());
        farthest_point_sample(&kept, n, start)
    };
    Ok((Array2::from_shape_fn((n, 3), |(i, d)| kept[order[i]][d]), false))
}

/// Greedy max-min selection of `n` indices starting from `start`. Ties go to
/// the lowest index.
pub fn farthest_point_sample(points: &[[f64; 3]], n: usize, start: usize) -> Vec<usize> {
    let dist2 = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|d| (a[d] - b[d]).powi(2)).sum::<f64>();
    let mut chosen = Vec::with_capacity(n);
    let mut nearest = vec![f64::INFINITY; points.len()];
    let mut cur = start;
    for _ in 0..n.min(points.len()) {
        chosen.push(cur);
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, &points[cur]));
            if nearest[i] > best.0 {
                best = (nearest[i], i);
            }
        }
        cur = best.1;
    }
    chosen
}

/// Stacks the last `n_obs` processed frames, repeating the earliest one
/// when the history is shorter.
pub fn stack_frames(history: &[ProcessedFrame], n_obs: usize) -> Result<Observation> {
    let first = history.first().ok_or(Error::Empty("frame history"))?;
    let pick = |j: usize| -> &ProcessedFrame {
        let back = n_obs - 1 - j;
        &history[history.len().saturating_sub(1 + back)]
    };
    let (t, m) = first.audio.dim();
    let (n, _) = first.points.dim();
    let ds = first.proprio.len();
    let mut obs = Observation {
        audio: Array3::zeros((n_obs, t, m)),
        points: Array3::zeros((n_obs, n, 3)),
        proprio: Array2::zeros((n_obs, ds)),
    };
    for j in 0..n_obs {
        let f = pick(j);
        obs.audio.index_axis_mut(Axis(0), j).assign(&f.audio);
        obs.points.index_axis_mut(Axis(0), j).assign(&f.points);
        obs.proprio.row_mut(j).assign(&ndarray::ArrayView1::from(&f.proprio));
    }
    Ok(obs)
}

/// Splits an observation back into per-frame pieces.
pub fn unstack(obs: &Observation) -> Vec<(Array2<f64>, Array2<f64>, Vec<f64>)> {
    (0..obs.frames())
        .map(|j| {
            (
                obs.audio.index_axis(Axis(0), j).to_owned(),
                obs.points.index_axis(Axis(0), j).to_owned(),
                obs.proprio.row(j).to_vec(),
            )
        })
        .collect()
}

/// Observation processing bound to one run configuration.
#[derive(Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    block_len: usize,
    crop: ([f64; 3], [f64; 3]),
    mel: std::sync::Arc<LogMel>,
}

impl Pipeline {
    pub fn new(pcfg: &PipelineConfig, wcfg: &WorldConfig) -> Self {
        let (dlo, dhi) = world::default_crop(wcfg);
        let crop = (pcfg.crop_min.unwrap_or(dlo), pcfg.crop_max.unwrap_or(dhi));
        let mel = LogMel::new(MelSpec {
            sample_rate: wcfg.sample_rate,
            n_fft: pcfg.n_fft,
            hop: pcfg.hop,
            mel_bins: pcfg.mel_bins,
            f_lo: pcfg.f_lo,
            f_hi: pcfg.f_hi,
        });
        Pipeline {
            cfg: pcfg.clone(),
            block_len: wcfg.block_len(),
            crop,
            mel: std::sync::Arc::new(mel),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn crop_box(&self) -> ([f64; 3], [f64; 3]) {
        self.crop
    }

    /// Index of the last spectrogram frame complete after `step + 1` audio
    /// blocks, if any.
    pub fn last_frame(&self, step: usize) -> Option<usize> {
        let len = (step + 1) * self.block_len;
        self.mel.spec().frame_count(len).checked_sub(1)
    }

    fn process(&self, frames: ArrayView2<f64>, step: usize, points: ArrayView2<f64>, proprio: Vec<f64>, seed: u64) -> Result<ProcessedFrame> {
        let audio = window_ending(frames, self.last_frame(step), self.cfg.window_frames);
        let fps_seed = rng::derive_indexed(seed, "fps", step as u64);
        let (pts, empty_crop) = crop_and_fps(points, self.crop.0, self.crop.1, self.cfg.points, fps_seed)?;
        Ok(ProcessedFrame {
            audio,
            points: pts,
            proprio,
            empty_crop,
        })
    }

    /// Full log-Mel spectrogram of an episode's audio.
    pub fn spectrogram(&self, ep: &Episode) -> Result<Array2<f64>> {
        self.mel.frames_from(&ep.waveform_flat(), 0)
    }

    /// Processed frames for every step of a recorded episode.
    pub fn episode_frames(&self, ep: &Episode) -> Result<Vec<ProcessedFrame>> {
        let wave = ep.waveform_flat();
        let spec = self.mel.frames_from(&wave, 0)?;
        (0..ep.len())
            .map(|i| {
                let pts = ep.pointclouds.index_axis(Axis(0), i).mapv(|v| v as f64);
                let proprio = ep.proprio.row(i).iter().map(|&v| v as f64).collect();
                self.process(spec.view(), i, pts.view(), proprio, ep.seed)
            })
            .collect()
    }

    pub fn stream(&self, seed: u64) -> History {
        History {
            pipeline: self.clone(),
            seed,
            wave: Vec::new(),
            spec: Array2::zeros((0, self.cfg.mel_bins)),
            frames: Vec::new(),
        }
    }
}

/// Streaming buffer used at rollout time. Inputs are rounded to 32 bits so
/// that live observations equal those rebuilt from a recorded episode.
pub struct History {
    pipeline: Pipeline,
    seed: u64,
    wave: Vec<f64>,
    spec: Array2<f64>,
    frames: Vec<ProcessedFrame>,
}

impl History {
    pub fn push(&mut self, frame: &Frame) -> Result<()> {
        self.wave.extend(frame.audio.iter().map(|&v| v as f32 as f64));
        let have = self.spec.nrows();
        let new = self.pipeline.mel.frames_from(&self.wave, have)?;
        if new.nrows() > 0 {
            self.spec.append(Axis(0), new.view()).expect("mel widths agree");
        }
        let pts = Array2::from_shape_fn((frame.points.len(), 3), |(i, d)| frame.points[i][d] as f32 as f64);
        let proprio = frame.proprio.iter().map(|&v| v as f32 as f64).collect();
        let step = self.frames.len();
        let pf = self.pipeline.process(self.spec.view(), step, pts.view(), proprio, self.seed)?;
        self.frames.push(pf);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn observation(&self) -> Result<Observation> {
        stack_frames(&self.frames, self.pipeline.cfg.frames_stacked)
    }
}

/// Observation at step `i` of a processed episode.
pub fn observation_at(frames: &[ProcessedFrame], i: usize, n_obs: usize) -> Result<Observation> {
    stack_frames(&frames[..=i.min(frames.len().saturating_sub(1))], n_obs)
}

/// The `len`-step action chunk starting at step `i`, padded with the final
/// (hold) action.
pub fn action_chunk(actions: ArrayView2<f32>, i: usize, len: usize) -> Array2<f64> {
    let last = actions.nrows() - 1;
    Array2::from_shape_fn((len, actions.ncols()), |(h, d)| actions[[(i + h).min(last), d]] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn pf(v: f64) -> ProcessedFrame {
        ProcessedFrame {
            audio: Array2::from_elem((2, 3), v),
            points: Array2::from_elem((4, 3), v),
            proprio: vec![v; 5],
            empty_crop: false,
        }
    }

    #[test]
    fn window_at_start_is_padded() {
        let frames = Array2::from_shape_fn((10, 4), |(i, j)| (i * 4 + j) as f64);
        let w = window_audio(frames.view(), 0, 5);
        for r in 0..4 {
            assert!(w.row(r).iter().all(|&v| v == silence_level()));
        }
        assert_eq!(w.row(4), frames.row(0));
    }

    #[test]
    fn window_late_is_exact_slice() {
        let frames = Array2::from_shape_fn((10, 4), |(i, j)| (i * 4 + j) as f64);
        let w = window_audio(frames.view(), 7, 5);
        assert_eq!(w, frames.slice(s![3..=7, ..]));
    }

    #[test]
    fn fps_square_picks_opposite_corner() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert_eq!(farthest_point_sample(&pts, 2, 0), vec![0, 3]);
    }

    #[test]
    fn crop_equal_count_is_permutation() {
        let pts = array![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 0.9]];
        let (out, flag) = crop_and_fps(pts.view(), [0.0; 3], [1.0; 3], 3, 7).unwrap();
        assert!(!flag);
        let mut a: Vec<_> = out.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut b: Vec<_> = pts.rows().into_iter().map(|r| r.to_vec()).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn crop_pads_cyclically_and_falls_back() {
        let pts = array![[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [5.0, 5.0, 5.0]];
        let (out, flag) = crop_and_fps(pts.view(), [0.0; 3], [1.0; 3], 5, 1).unwrap();
        assert!(!flag);
        assert_eq!(out.row(2), pts.row(0));
        assert_eq!(out.row(3), pts.row(1));
        let (out, flag) = crop_and_fps(pts.view(), [2.0; 3], [3.0; 3], 2, 1).unwrap();
        assert!(flag);
        assert!(out.iter().all(|&v| v == 2.5));
        assert!(crop_and_fps(Array2::zeros((0, 3)).view(), [0.0; 3], [1.0; 3], 2, 1).is_err());
    }

    #[test]
    fn stacking_repeats_earliest() {
        let obs = stack_frames(&[pf(1.0)], 3).unwrap();
        assert!(obs.audio.iter().all(|&v| v == 1.0));
        let obs = stack_frames(&[pf(1.0), pf(2.0), pf(3.0), pf(4.0)], 2).unwrap();
        assert_eq!(obs.proprio.column(0).to_vec(), vec![3.0, 4.0]);
        assert!(stack_frames(&[], 2).is_err());
    }

    #[test]
    fn stack_unstack_roundtrip() {
        let hist = [pf(1.0), pf(2.0)];
        let obs = stack_frames(&hist, 2).unwrap();
        for (h, (a, p, s)) in hist.iter().zip(unstack(&obs)) {
            assert_eq!(h.audio, a);
            assert_eq!(h.points, p);
            assert_eq!(h.proprio, s);
        }
    }

    #[test]
    fn streaming_matches_recorded_episode() {
        let wcfg = WorldConfig::default();
        let pcfg = PipelineConfig {
            mel_bins: 16,
            window_frames: 8,
            n_fft: 1024,
            points: 32,
            ..PipelineConfig::default()
        };
        let pipe = Pipeline::new(&pcfg, &wcfg);
        let (ep, _) = world::expert_episode(&wcfg, 3);
        let offline = pipe.episode_frames(&ep).unwrap();
        let mut w = world::World::new(&wcfg, 3);
        let mut hist = pipe.stream(3);
        let mut frame = w.initial_frame();
        for (i, off) in offline.iter().enumerate().take(12) {
            hist.push(&frame).unwrap();
            assert_eq!(hist.frames.last().unwrap(), off, "step {i}");
            let a = w.expert_action();
            frame = w.step(&a);
        }
    }

    #[test]
    fn action_chunk_pads_with_last() {
        let acts = array![[1.0f32, 2.0], [3.0, 4.0]];
        let c = action_chunk(acts.view(), 1, 3);
        assert_eq!(c, array![[3.0, 4.0], [3.0, 4.0], [3.0, 4.0]]);
    }
}
