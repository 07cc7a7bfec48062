use std::f64::consts::TAU;

use diffcore::SeededRng;
use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::clean::CleanConfig;
use crate::error::{Result, SynthError};
use crate::recording::{Recording, TaskType};

/// Centre of the narrowband component added for auditory sessions.
pub const AUDITORY_BUMP_HZ: f64 = 5.0;
/// Centre of the narrowband component added for visual sessions.
pub const VISUAL_BUMP_HZ: f64 = 15.0;
const BUMP_WIDTH_HZ: f64 = 0.75;
const AM_DEPTH: f64 = 0.5;

/// Standard deviations of the oscillatory components, relative to the
/// unit-variance background.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandGains {
    pub alpha: f64,
    pub bump_5hz: f64,
    pub bump_15hz: f64,
}

impl BandGains {
    pub fn for_task(task: TaskType) -> Self {
        match task {
            TaskType::Rest => Self {
                alpha: 1.5,
                bump_5hz: 0.0,
                bump_15hz: 0.0,
            },
            TaskType::Visual => Self {
                alpha: 0.5,
                bump_5hz: 0.0,
                bump_15hz: 1.0,
            },
            TaskType::Auditory => Self {
                alpha: 1.0,
                bump_5hz: 1.0,
                bump_15hz: 0.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub session_id: String,
    pub subject_id: String,
    pub task: TaskType,
    pub channels: usize,
    pub fs: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub alpha_peak: f64,
    pub pink_slope: f64,
    pub band_gains: BandGains,
    pub mixing_seed: u64,
}

impl SessionSpec {
    /// Highest frequency deliberately placed in the signal.
    pub fn highest_component_hz(&self) -> f64 {
        self.alpha_peak.max(VISUAL_BUMP_HZ + 3.0 * BUMP_WIDTH_HZ)
    }

    pub fn validate(&self, clean: &CleanConfig) -> Result<()> {
        let bad = |m: String| Err(SynthError::Config(m));
        if !(8.0..=12.0).contains(&self.alpha_peak) {
            return bad(format!("alpha_peak {} outside [8, 12] Hz", self.alpha_peak));
        }
        if !(0.8..=1.4).contains(&self.pink_slope) {
            return bad(format!("pink_slope {} outside [0.8, 1.4]", self.pink_slope));
        }
        if self.channels < 2 {
            return bad(format!("need at least 2 channels, got {}", self.channels));
        }
        if self.fs <= 2.0 * self.highest_component_hz() {
            return bad(format!(
                "fs {} Hz does not exceed twice the highest component ({} Hz)",
                self.fs,
                self.highest_component_hz()
            ));
        }
        if self.duration_s < clean.min_segment_s {
            return bad(format!(
                "duration {} s shorter than the minimum segment {} s",
                self.duration_s, clean.min_segment_s
            ));
        }
        Ok(())
    }
}

/// Inverse real FFT of a one-sided spectrum given as `bins = n/2 + 1`
/// complex values.
fn irfft(spec: &[Complex<f64>], n: usize) -> Vec<f64> {
    let mut full = vec![Complex::new(0.0, 0.0); n];
    for (k, &v) in spec.iter().enumerate() {
        full[k] = v;
        if k > 0 && k < n - k {
            full[n - k] = v.conj();
        }
    }
    if n % 2 == 0 {
        full[n / 2].im = 0.0;
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut full);
    full.iter().map(|c| c.re / n as f64).collect()
}

fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    x.iter_mut().for_each(|v| *v = (*v - m) / sd);
}

/// Zero-mean, unit-variance noise with power spectrum ∝ f^(−β), made by
/// shaping a white Gaussian spectrum by f^(−β/2).
pub fn pink_noise(n: usize, fs: f64, beta: f64, rng: &mut SeededRng) -> Vec<f64> {
    shaped_noise(n, rng, |k| {
        let f = k as f64 * fs / n as f64;
        if k == 0 {
            0.0
        } else {
            f.powf(-beta / 2.0)
        }
    })
}

/// Zero-mean, unit-variance noise with a Gaussian spectral bump.
pub fn narrowband_noise(n: usize, fs: f64, centre: f64, width: f64, rng: &mut SeededRng) -> Vec<f64> {
    shaped_noise(n, rng, |k| {
        let f = k as f64 * fs / n as f64;
        (-(f - centre).powi(2) / (2.0 * width * width)).exp()
    })
}

fn shaped_noise(n: usize, rng: &mut SeededRng, amp: impl Fn(usize) -> f64) -> Vec<f64> {
    let bins = n / 2 + 1;
    let spec: Vec<Complex<f64>> = (0..bins)
        .map(|k| {
            let a = amp(k);
            Complex::new(rng.normal() * a, rng.normal() * a)
        })
        .collect();
    let mut x = irfft(&spec, n);
    standardize(&mut x);
    x
}

/// Seeded orthogonal matrix from the QR factorisation of a Gaussian matrix,
/// with signs fixed so the result is unique for a given draw.
fn random_orthogonal(c: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(c, c, |_, _| rng.normal());
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// The mixing matrix `0.5·I + 0.5·Q` for a given seed.
pub fn mixing_matrix(c: usize, mixing_seed: u64) -> DMatrix<f64> {
    let mut rng = SeededRng::named(mixing_seed, "megsynth/mixing");
    let q = random_orthogonal(c, &mut rng);
    DMatrix::identity(c, c) * 0.5 + q * 0.5
}

/// Generates one session: per-channel pink background, an amplitude-
/// modulated alpha rhythm on the first half of the channels, task bumps,
/// then a fixed spatial mix.
pub fn synth_session(spec: &SessionSpec, clean: &CleanConfig) -> Result<Recording> {
    spec.validate(clean)?;
    let c = spec.channels;
    let n = (spec.duration_s * spec.fs).round() as usize;
    let fs = spec.fs;
    let base = SeededRng::named(spec.seed, &format!("megsynth/session/{}", spec.session_id));
    let g = spec.band_gains;

    let mut sources = DMatrix::<f64>::zeros(c, n);
    for ch in 0..c {
        let mut rng = base.split_named(&format!("channel/{ch}"));
        let mut row = pink_noise(n, fs, spec.pink_slope, &mut rng);
        if ch < c / 2 && g.alpha > 0.0 {
            let fm = rng.uniform(0.1, 0.3);
            let (pm, pc) = (rng.uniform(0.0, TAU), rng.uniform(0.0, TAU));
            let mut alpha: Vec<f64> = (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    (1.0 + AM_DEPTH * (TAU * fm * t + pm).sin()) * (TAU * spec.alpha_peak * t + pc).sin()
                })
                .collect();
            standardize(&mut alpha);
            row.iter_mut().zip(&alpha).for_each(|(r, a)| *r += g.alpha * a);
        }
        if ch >= c / 2 && g.bump_5hz > 0.0 {
            let b = narrowband_noise(n, fs, AUDITORY_BUMP_HZ, BUMP_WIDTH_HZ, &mut rng);
            row.iter_mut().zip(&b).for_each(|(r, v)| *r += g.bump_5hz * v);
        }
        if ch < c / 4 && g.bump_15hz > 0.0 {
            let b = narrowband_noise(n, fs, VISUAL_BUMP_HZ, BUMP_WIDTH_HZ, &mut rng);
            row.iter_mut().zip(&b).for_each(|(r, v)| *r += g.bump_15hz * v);
        }
        sources.row_mut(ch).iter_mut().zip(&row).for_each(|(s, &v)| *s = v);
    }
    let mixed = mixing_matrix(c, spec.mixing_seed) * sources;
    let data = (0..c)
        .flat_map(|ch| mixed.row(ch).iter().map(|&v| v as f32).collect::<Vec<_>>())
        .collect();
    Ok(Recording {
        data,
        channels: c,
        fs: fs as f32,
        session_id: spec.session_id.clone(),
        subject_id: spec.subject_id.clone(),
        task: spec.task,
    })
}
