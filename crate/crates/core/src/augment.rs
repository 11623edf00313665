//! Pseudo-audio synthesis by pitch shifting, and the per-batch SpecAugment and
//! Mixup augmentations applied during training.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AudioClip;
use crate::dsp::MelSpectrogram;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("pitch shift of {0} semitones is outside [-12, 12]")]
    ShiftOutOfRange(f64),
    #[error("spectrogram {mels}x{frames} too small for {freq_width}x{time_width} masks")]
    SpecTooSmall {
        mels: usize,
        frames: usize,
        freq_width: usize,
        time_width: usize,
    },
    #[error("mixup needs at least two examples, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("batch shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub pitch_semitones: Vec<f64>,
    pub specaug_time_width: usize,
    pub specaug_freq_width: usize,
    pub mixup_beta_alpha: f64,
    /// Probability that a pair's coefficient comes from Uniform(0, 1) rather
    /// than Beta(alpha, alpha).
    pub mixup_uniform_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            pitch_semitones: vec![-2.0, 2.0],
            specaug_time_width: 10,
            specaug_freq_width: 10,
            mixup_beta_alpha: 0.4,
            mixup_uniform_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::InvalidConfig(m.into()));
        if let Some(&s) = self.pitch_semitones.iter().find(|s| !(s.abs() <= 12.0)) {
            return Err(AugmentError::ShiftOutOfRange(s));
        }
        if self.specaug_time_width == 0 || self.specaug_freq_width == 0 {
            return bad("SpecAugment widths must be at least 1");
        }
        if !(self.mixup_beta_alpha.is_finite() && self.mixup_beta_alpha > 0.0) {
            return bad("mixup_beta_alpha must be positive");
        }
        if !(0.0..=1.0).contains(&self.mixup_uniform_prob) {
            return bad("mixup_uniform_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

const PV_WINDOW: usize = 2048;
const PV_HOP: usize = PV_WINDOW / 8;

/// Shifts pitch by `semitones` while keeping duration: a phase-vocoder time
/// stretch by `2^(semitones/12)` followed by linear resampling back to the
/// original length.
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> Result<AudioClip, AugmentError> {
    if !(semitones.abs() <= 12.0) {
        return Err(AugmentError::ShiftOutOfRange(semitones));
    }
    if semitones == 0.0 {
        return Ok(clip.clone());
    }
    let ratio = 2f64.powf(semitones / 12.0);
    let n = clip.len();

    let mut padded = vec![0f32; n + 2 * PV_WINDOW];
    padded[PV_WINDOW..PV_WINDOW + n].copy_from_slice(clip.samples());
    let stretched = time_stretch(&padded, ratio);

    // Read the stretched signal `ratio` times faster, starting where the
    // original content begins.
    let offset = (PV_WINDOW as f64 * ratio).round() as usize;
    let body = &stretched[offset.min(stretched.len() - 1)..];
    let samples = resample_cubic(body, ratio, n);
    Ok(AudioClip::new(samples, clip.sample_rate()).expect("finite output"))
}

/// Catmull-Rom interpolation at positions `i * step`; flatter passband than
/// linear interpolation.
fn resample_cubic(input: &[f32], step: f64, out_len: usize) -> Vec<f32> {
    let at = |i: isize| -> f64 { f64::from(input[i.clamp(0, input.len() as isize - 1) as usize]) };
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let idx = pos.floor() as isize;
            let t = pos - idx as f64;
            let (p0, p1, p2, p3) = (at(idx - 1), at(idx), at(idx + 1), at(idx + 2));
            let v = p1
                + 0.5
                    * t
                    * (p2 - p0
                        + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3
                            + t * (3.0 * (p1 - p2) + p3 - p0)));
            v as f32
        })
        .collect()
}

/// Phase-vocoder time stretch producing roughly `input.len() * ratio` samples.
fn time_stretch(input: &[f32], ratio: f64) -> Vec<f32> {
    let w = PV_WINDOW;
    let window: Vec<f64> = (0..w)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / w as f64).cos())
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(w);
    let inv = planner.plan_fft_inverse(w);

    let analysis_hop = PV_HOP as f64 / ratio;
    let n_frames = ((input.len() - w) as f64 / analysis_hop).floor() as usize + 1;
    let out_len = (n_frames - 1) * PV_HOP + w;
    let mut out = vec![0f64; out_len];
    let mut norm = vec![0f64; out_len];

    let bins = w / 2 + 1;
    let mut prev_phase = vec![0f64; bins];
    let mut synth_phase = vec![0f64; bins];
    let mut prev_pos = 0usize;
    let mut prev_silent = true;
    let mut buf = vec![Complex::new(0f64, 0f64); w];

    for j in 0..n_frames {
        let pos = (j as f64 * analysis_hop).round() as usize;
        let pos = pos.min(input.len() - w);
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(f64::from(input[pos + i]) * window[i], 0.0);
        }
        fwd.process(&mut buf);

        let delta = (pos - prev_pos) as f64;
        let phases: Vec<f64> = buf[..bins].iter().map(|c| c.arg()).collect();
        let mags: Vec<f64> = buf[..bins].iter().map(|c| c.norm()).collect();
        // Phase differences against a silent frame are meaningless; restart
        // from the analysis phases.
        if prev_silent {
            synth_phase.copy_from_slice(&phases);
        } else {
            let advanced: Vec<f64> = (0..bins)
                .map(|k| {
                    let omega = 2.0 * PI * k as f64 / w as f64;
                    let deviation = wrap_phase(phases[k] - prev_phase[k] - omega * delta);
                    let true_freq = if delta > 0.0 {
                        omega + deviation / delta
                    } else {
                        omega
                    };
                    synth_phase[k] + true_freq * PV_HOP as f64
                })
                .collect();
            // Identity phase locking: each bin keeps its analysis phase offset
            // from the nearest spectral peak.
            let peaks: Vec<usize> = (1..bins - 1)
                .filter(|&k| mags[k] > mags[k - 1] && mags[k] >= mags[k + 1])
                .collect();
            if peaks.is_empty() {
                synth_phase.copy_from_slice(&advanced);
            } else {
                let mut pi = 0;
                for k in 0..bins {
                    while pi + 1 < peaks.len() && peaks[pi + 1].abs_diff(k) < peaks[pi].abs_diff(k)
                    {
                        pi += 1;
                    }
                    let p = peaks[pi];
                    synth_phase[k] = advanced[p] + phases[k] - phases[p];
                }
            }
        }
        prev_silent = mags.iter().all(|&m| m < 1e-12);
        prev_phase.copy_from_slice(&phases);
        for k in 0..bins {
            buf[k] = Complex::from_polar(mags[k], synth_phase[k]);
        }
        for k in 1..w - bins + 1 {
            buf[w - k] = buf[k].conj();
        }
        inv.process(&mut buf);

        let start = j * PV_HOP;
        for i in 0..w {
            out[start + i] += buf[i].re / w as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
        prev_pos = pos;
    }
    out.iter()
        .zip(&norm)
        .map(|(&o, &n)| if n > 1e-3 { (o / n) as f32 } else { 0.0 })
        .collect()
}

fn wrap_phase(p: f64) -> f64 {
    p - 2.0 * PI * (p / (2.0 * PI)).round()
}

/// Location of the two masks applied by [`spec_augment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskPlacement {
    pub time_start: usize,
    pub freq_start: usize,
}

/// Erases one block of `time_width` consecutive frames and one block of
/// `freq_width` consecutive mel rows, setting them to the log floor.
pub fn spec_augment(
    spec: &MelSpectrogram,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(MelSpectrogram, MaskPlacement), AugmentError> {
    let (mels, frames) = (spec.n_mels(), spec.n_frames);
    let (tw, fw) = (cfg.specaug_time_width, cfg.specaug_freq_width);
    if frames <= tw || mels <= fw || tw == 0 || fw == 0 {
        return Err(AugmentError::SpecTooSmall {
            mels,
            frames,
            freq_width: fw,
            time_width: tw,
        });
    }
    let time_start = rng.gen_range(0..=frames - tw);
    let freq_start = rng.gen_range(0..=mels - fw);
    let floor = MelSpectrogram::floor();
    let mut out = spec.clone();
    for m in 0..mels {
        let row = &mut out.values[m * frames..(m + 1) * frames];
        if (freq_start..freq_start + fw).contains(&m) {
            row.fill(floor);
        } else {
            row[time_start..time_start + tw].fill(floor);
        }
    }
    Ok((
        out,
        MaskPlacement {
            time_start,
            freq_start,
        },
    ))
}

/// Spectrograms with soft class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub specs: Vec<MelSpectrogram>,
    pub labels: Vec<Vec<f64>>,
}

impl LabeledBatch {
    pub fn one_hot(specs: Vec<MelSpectrogram>, classes: &[usize], num_classes: usize) -> Self {
        let labels = classes
            .iter()
            .map(|&c| {
                let mut v = vec![0.0; num_classes];
                v[c] = 1.0;
                v
            })
            .collect();
        Self { specs, labels }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.specs.len() != self.labels.len() {
            return Err(AugmentError::ShapeMismatch(format!(
                "{} spectrograms, {} labels",
                self.specs.len(),
                self.labels.len()
            )));
        }
        if let Some(first) = self.specs.first() {
            if self.specs.iter().any(|s| s.n_frames != first.n_frames) {
                return Err(AugmentError::ShapeMismatch("unequal frame counts".into()));
            }
        }
        for l in &self.labels {
            let sum: f64 = l.iter().sum();
            if l.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(AugmentError::ShapeMismatch(
                    "label is not a distribution".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `lambda * a + (1 - lambda) * b`, cellwise, for spectrogram values and labels.
pub fn mix_pair(
    a: (&MelSpectrogram, &[f64]),
    b: (&MelSpectrogram, &[f64]),
    lambda: f64,
) -> (MelSpectrogram, Vec<f64>) {
    let values =
        a.0.values
            .iter()
            .zip(&b.0.values)
            .map(|(&x, &y)| (lambda * f64::from(x) + (1.0 - lambda) * f64::from(y)) as f32)
            .collect();
    let label =
        a.1.iter()
            .zip(b.1)
            .map(|(&x, &y)| lambda * x + (1.0 - lambda) * y)
            .collect();
    let spec = MelSpectrogram {
        values,
        n_frames: a.0.n_frames,
        band: a.0.band,
    };
    (spec, label)
}

/// Draws one mixing coefficient.
pub fn draw_lambda(cfg: &AugmentConfig, rng: &mut impl Rng) -> f64 {
    if rng.gen_bool(cfg.mixup_uniform_prob) {
        rng.gen_range(0.0..=1.0)
    } else {
        Beta::new(cfg.mixup_beta_alpha, cfg.mixup_beta_alpha)
            .expect("validated alpha")
            .sample(rng)
    }
}

/// Mixes every example with a partner from a random permutation of the batch.
pub fn mixup(
    batch: &LabeledBatch,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<LabeledBatch, AugmentError> {
    mixup_with(batch, rng, |r| draw_lambda(cfg, r))
}

/// [`mixup`] with a caller-supplied coefficient source.
pub fn mixup_with<R: Rng>(
    batch: &LabeledBatch,
    rng: &mut R,
    mut lambda: impl FnMut(&mut R) -> f64,
) -> Result<LabeledBatch, AugmentError> {
    if batch.len() < 2 {
        return Err(AugmentError::BatchTooSmall(batch.len()));
    }
    batch.validate()?;
    let mut partner: Vec<usize> = (0..batch.len()).collect();
    partner.shuffle(rng);
    let mut specs = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for (i, &j) in partner.iter().enumerate() {
        let l = lambda(rng).clamp(0.0, 1.0);
        let (s, y) = mix_pair(
            (&batch.specs[i], &batch.labels[i]),
            (&batch.specs[j], &batch.labels[j]),
            l,
        );
        specs.push(s);
        labels.push(y);
    }
    Ok(LabeledBatch { specs, labels })
}
