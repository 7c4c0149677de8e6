//! Log-Mel spectrogram on the HTK Mel scale.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Floor added to filterbank power before the logarithm.
pub const EPS_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Value of a fully silent spectrogram entry.
pub fn silence_level() -> f64 {
    EPS_FLOOR.ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MelSpec {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl MelSpec {
    /// Center frequencies (Hz) of the `mel_bins` triangular filters.
    pub fn centers(&self) -> Vec<f64> {
        let (lo, hi) = (hz_to_mel(self.f_lo), hz_to_mel(self.f_hi));
        let step = (hi - lo) / (self.mel_bins + 1) as f64;
        (1..=self.mel_bins).map(|i| mel_to_hz(lo + step * i as f64)).collect()
    }

    /// `mel_bins × (n_fft/2 + 1)` triangular weights, evaluated at each FFT
    /// bin's exact frequency.
    pub fn filterbank(&self) -> Array2<f64> {
        let (lo, hi) = (hz_to_mel(self.f_lo), hz_to_mel(self.f_hi));
        let step = (hi - lo) / (self.mel_bins + 1) as f64;
        let edges: Vec<f64> = (0..self.mel_bins + 2).map(|i| mel_to_hz(lo + step * i as f64)).collect();
        let n_freq = self.n_fft / 2 + 1;
        let bin_hz = self.sample_rate as f64 / self.n_fft as f64;
        Array2::from_shape_fn((self.mel_bins, n_freq), |(m, k)| {
            let f = k as f64 * bin_hz;
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0)
        })
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            1 + (len - self.n_fft) / self.hop
        }
    }
}

/// Reusable FFT plan, Hann window and filterbank.
pub struct LogMel {
    spec: MelSpec,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bank: Array2<f64>,
}

impl LogMel {
    pub fn new(spec: MelSpec) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(spec.n_fft);
        let n = spec.n_fft;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
            .collect();
        let bank = spec.filterbank();
        LogMel {
            spec,
            fft,
            window,
            bank,
        }
    }

    pub fn spec(&self) -> &MelSpec {
        &self.spec
    }

    /// `T' × M` log-Mel frames with `T' = 1 + (len - n_fft) / hop`.
    pub fn compute(&self, waveform: &[f64]) -> Result<Array2<f64>> {
        let n = self.spec.n_fft;
        if waveform.len() < n {
            return Err(Error::InvalidArgument(format!(
                "waveform has {} samples, need at least n_fft = {n}",
                waveform.len()
            )));
        }
        self.frames_from(waveform, 0)
    }

    /// Frames `first..` of the spectrogram of `waveform`. Frames depend only
    /// on past samples, so streaming callers can extend incrementally.
    pub fn frames_from(&self, waveform: &[f64], first: usize) -> Result<Array2<f64>> {
        let total = self.spec.frame_count(waveform.len());
        let count = total.saturating_sub(first);
        let n = self.spec.n_fft;
        let n_freq = n / 2 + 1;
        let mut out = Array2::zeros((count, self.spec.mel_bins));
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_freq];
        for (row, f) in (first..total).enumerate() {
            let start = f * self.spec.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(waveform[start + i] * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..self.spec.mel_bins {
                let e: f64 = self.bank.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
                out[[row, m]] = (e + EPS_FLOOR).ln();
            }
        }
        Ok(out)
    }
}

/// One-shot log-Mel spectrogram.
pub fn log_mel(waveform: &[f64], sr: u32, n_fft: usize, hop: usize, mel_bins: usize, f_lo: f64, f_hi: f64) -> Result<Array2<f64>> {
    LogMel::new(MelSpec {
        sample_rate: sr,
        n_fft,
        hop,
        mel_bins,
        f_lo,
        f_hi,
    })
    .compute(waveform)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> MelSpec {
        MelSpec {
            sample_rate: 16_000,
            n_fft: 1024,
            hop: 160,
            mel_bins: 32,
            f_lo: 200.0,
            f_hi: 1400.0,
        }
    }

    /// Naive DFT power spectrum projected on the same filterbank.
    fn reference(waveform: &[f64], spec: &MelSpec) -> Array2<f64> {
        let n = spec.n_fft;
        let bank = spec.filterbank();
        let frames = spec.frame_count(waveform.len());
        Array2::from_shape_fn((frames, spec.mel_bins), |(f, m)| {
            let x: Vec<f64> = (0..n)
                .map(|i| waveform[f * spec.hop + i] * (0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos()))
                .collect();
            let e: f64 = (0..=n / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, v) in x.iter().enumerate() {
                        let ang = -std::f64::consts::TAU * (k * i) as f64 / n as f64;
                        re += v * ang.cos();
                        im += v * ang.sin();
                    }
                    bank[[m, k]] * (re * re + im * im)
                })
                .sum();
            (e + EPS_FLOOR).ln()
        })
    }

    #[test]
    fn silence_is_floor() {
        let out = LogMel::new(spec()).compute(&vec![0.0; 2000]).unwrap();
        assert_eq!(out.nrows(), 1 + (2000 - 1024) / 160);
        assert!(out.iter().all(|&v| v == silence_level()));
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(LogMel::new(spec()).compute(&[0.0; 1000]).is_err());
    }

    #[test]
    fn matches_naive_dft() {
        let s = spec();
        let w: Vec<f64> = (0..1400).map(|i| (i as f64 * 0.37).sin() + 0.3 * (i as f64 * 0.11).cos()).collect();
        let fast = LogMel::new(s.clone()).compute(&w).unwrap();
        let slow = reference(&w, &s);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn sine_at_bin_center_peaks_in_that_bin() {
        let s = spec();
        let centers = s.centers();
        for j in 0..32 {
            let f = centers[j];
            let w: Vec<f64> = (0..4000).map(|i| (std::f64::consts::TAU * f * i as f64 / 16_000.0).sin()).collect();
            let fast = LogMel::new(s.clone()).compute(&w).unwrap().mean_axis(ndarray::Axis(0)).unwrap();
            let arg_fast = fast.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(arg_fast, j, "tone at {f:.1} Hz");
        }
    }

    #[test]
    fn doubling_amplitude_adds_log_four() {
        let s = spec();
        let w: Vec<f64> = (0..1500).map(|i| (i as f64 * 0.2).sin()).collect();
        let w2: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
        let lm = LogMel::new(s);
        let (a, b) = (lm.compute(&w).unwrap(), lm.compute(&w2).unwrap());
        for (x, y) in a.iter().zip(b.iter()) {
            if *x > -5.0 {
                assert!((y - x - 4f64.ln()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mel_scale_roundtrip() {
        for f in [0.0, 100.0, 700.0, 4000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }
}
