use std::f64::consts::TAU;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{MetricError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub seg_s: f64,
    pub overlap: f64,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            seg_s: 2.0,
            overlap: 0.5,
        }
    }
}

/// One-sided power spectral density, units²/Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    /// `power[c][k]` for channel `c` at `freqs[k]`.
    pub power: Vec<Vec<f64>>,
    pub fs: f64,
    pub config: WelchConfig,
}

impl PsdEstimate {
    pub fn channel_mean(&self) -> Vec<f64> {
        let c = self.power.len() as f64;
        (0..self.freqs.len())
            .map(|k| self.power.iter().map(|p| p[k]).sum::<f64>() / c)
            .collect()
    }

    pub fn df(&self) -> f64 {
        self.freqs[1] - self.freqs[0]
    }
}

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos())
        .collect()
}

pub(crate) struct Segmenter {
    pub seg: usize,
    pub step: usize,
    pub window: Vec<f64>,
    pub win_power: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl Segmenter {
    pub fn new(fs: f64, t: usize, cfg: &WelchConfig) -> Result<Self> {
        let seg = (cfg.seg_s * fs).round() as usize;
        if seg < 2 || t < seg {
            return Err(MetricError::Length(format!(
                "{t} samples, Welch segment needs {seg}"
            )));
        }
        let step = ((seg as f64 * (1.0 - cfg.overlap)).round() as usize).max(1);
        let window = hann(seg);
        let win_power = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(seg);
        Ok(Self {
            seg,
            step,
            window,
            win_power,
            fft,
        })
    }

    pub fn count(&self, t: usize) -> usize {
        (t - self.seg) / self.step + 1
    }

    pub fn bins(&self) -> usize {
        self.seg / 2 + 1
    }

    /// One-sided spectrum of segment `s` after constant detrend and windowing.
    pub fn spectrum(&self, x: &[f64], s: usize) -> Vec<Complex<f64>> {
        let part = &x[s * self.step..s * self.step + self.seg];
        let mean = part.iter().sum::<f64>() / self.seg as f64;
        let mut buf: Vec<Complex<f64>> = part
            .iter()
            .zip(&self.window)
            .map(|(v, w)| Complex::new((v - mean) * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf.truncate(self.bins());
        buf
    }

    /// Density scaling for a one-sided cross/auto spectrum bin.
    pub fn scale(&self, k: usize, fs: f64) -> f64 {
        let edge = k == 0 || (self.seg % 2 == 0 && k == self.seg / 2);
        (if edge { 1.0 } else { 2.0 }) / (fs * self.win_power)
    }
}

/// Welch estimate: mean of Hann-windowed, mean-removed periodograms.
pub fn welch_psd(x: &[Vec<f64>], fs: f64, cfg: &WelchConfig) -> Result<PsdEstimate> {
    let t = x.first().map_or(0, Vec::len);
    let sg = Segmenter::new(fs, t, cfg)?;
    let n_seg = sg.count(t);
    let bins = sg.bins();
    let power = x
        .iter()
        .map(|row| {
            let mut acc = vec![0.0; bins];
            for s in 0..n_seg {
                for (a, z) in acc.iter_mut().zip(sg.spectrum(row, s)) {
                    *a += z.norm_sqr();
                }
            }
            acc.iter()
                .enumerate()
                .map(|(k, a)| a * sg.scale(k, fs) / n_seg as f64)
                .collect()
        })
        .collect();
    let freqs = (0..bins).map(|k| k as f64 * fs / sg.seg as f64).collect();
    Ok(PsdEstimate {
        freqs,
        power,
        fs,
        config: cfg.clone(),
    })
}

/// Hann-windowed magnitude frames `[frame][bin]` of one channel.
pub fn stft_frames(x: &[f64], fs: f64, win_s: f64, hop_s: f64) -> Vec<Vec<f64>> {
    let win = (win_s * fs).round() as usize;
    let hop = ((hop_s * fs).round() as usize).max(1);
    if win == 0 || x.len() < win {
        return Vec::new();
    }
    let w = hann(win);
    let fft = FftPlanner::new().plan_fft_forward(win);
    let n_frames = (x.len() - win) / hop + 1;
    (0..n_frames)
        .map(|f| {
            let mut buf: Vec<Complex<f64>> = x[f * hop..f * hop + win]
                .iter()
                .zip(&w)
                .map(|(v, ww)| Complex::new(v * ww, 0.0))
                .collect();
            fft.process(&mut buf);
            buf[..win / 2 + 1].iter().map(|z| z.norm()).collect()
        })
        .collect()
}
