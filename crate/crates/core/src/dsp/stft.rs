use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DspError, FrequencyBand, HOP, N_BINS, N_FFT};
use crate::corpus::AudioClip;

/// Magnitude STFT, stored bin-major: `mags[bin * n_frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    mags: Vec<f32>,
    n_frames: usize,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn from_parts(mags: Vec<f32>, n_frames: usize, sample_rate: u32) -> Result<Self, DspError> {
        if mags.len() != N_BINS * n_frames {
            return Err(DspError::ShapeMismatch(format!(
                "{} magnitudes for {N_BINS} x {n_frames}",
                mags.len()
            )));
        }
        if mags.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(DspError::ShapeMismatch(
                "magnitudes must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            mags,
            n_frames,
            sample_rate,
        })
    }

    pub fn n_bins(&self) -> usize {
        N_BINS
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_fft(&self) -> usize {
        N_FFT
    }

    pub fn hop(&self) -> usize {
        HOP
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn mags(&self) -> &[f32] {
        &self.mags
    }

    pub fn bin(&self, k: usize) -> &[f32] {
        &self.mags[k * self.n_frames..(k + 1) * self.n_frames]
    }

    pub fn get(&self, k: usize, frame: usize) -> f32 {
        self.mags[k * self.n_frames + frame]
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * f64::from(self.sample_rate) / N_FFT as f64
    }

    /// Index of the loudest bin in `frame`.
    pub fn argmax_bin(&self, frame: usize) -> usize {
        (0..N_BINS)
            .max_by(|&a, &b| self.get(a, frame).total_cmp(&self.get(b, frame)))
            .unwrap_or(0)
    }
}

/// Reusable STFT plan: 2048-point periodic Hann window, hop 1024, no padding.
pub struct Stft {
    fft: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("n_fft", &N_FFT)
            .field("hop", &HOP)
            .finish()
    }
}

impl Default for Stft {
    fn default() -> Self {
        Self::new()
    }
}

impl Stft {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        let window = (0..N_FFT)
            .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / N_FFT as f64).cos()) as f32)
            .collect();
        Self { fft, window }
    }

    pub fn process(&self, clip: &AudioClip) -> Result<Spectrogram, DspError> {
        let x = clip.samples();
        if x.len() < N_FFT {
            return Err(DspError::ClipTooShort {
                needed: N_FFT,
                got: x.len(),
            });
        }
        let n_frames = (x.len() - N_FFT) / HOP + 1;
        let mut mags = vec![0f32; N_BINS * n_frames];
        let mut buf = vec![Complex::new(0f32, 0f32); N_FFT];
        let mut scratch = vec![Complex::new(0f32, 0f32); self.fft.get_inplace_scratch_len()];
        for frame in 0..n_frames {
            let chunk = &x[frame * HOP..frame * HOP + N_FFT];
            for ((b, &s), &w) in buf.iter_mut().zip(chunk).zip(&self.window) {
                *b = Complex::new(s * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, c) in buf[..N_BINS].iter().enumerate() {
                mags[k * n_frames + frame] = c.norm();
            }
        }
        Ok(Spectrogram {
            mags,
            n_frames,
            sample_rate: clip.sample_rate(),
        })
    }
}

/// Magnitude STFT of `clip`.
pub fn stft(clip: &AudioClip) -> Result<Spectrogram, DspError> {
    Stft::new().process(clip)
}

/// Zeroes every bin whose center frequency lies outside `band`. In-band bins
/// are copied unchanged.
pub fn band_crop(spec: &Spectrogram, band: &FrequencyBand) -> Result<Spectrogram, DspError> {
    band.validate(spec.sample_rate)?;
    let mut out = spec.clone();
    for k in 0..N_BINS {
        if !band.contains(spec.bin_frequency(k)) {
            out.mags[k * spec.n_frames..(k + 1) * spec.n_frames].fill(0.0);
        }
    }
    Ok(out)
}

/// Energy of the whole clip's spectrum restricted to `band`, from a single
/// full-length FFT.
pub fn band_energy(clip: &AudioClip, band: &FrequencyBand) -> f64 {
    let n = clip.len();
    let mut buf: Vec<Complex<f64>> = clip
        .samples()
        .iter()
        .map(|&s| Complex::new(f64::from(s), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let sr = f64::from(clip.sample_rate());
    buf[..n / 2 + 1]
        .iter()
        .enumerate()
        .filter(|(k, _)| band.contains(*k as f64 * sr / n as f64))
        .map(|(_, c)| c.norm_sqr())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize, sr: u32) -> AudioClip {
        let samples = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / f64::from(sr)).sin() as f32)
            .collect();
        AudioClip::new(samples, sr).unwrap()
    }

    fn white_noise(n: usize) -> AudioClip {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        AudioClip::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000).unwrap()
    }

    #[test]
    fn frame_count_for_ten_seconds() {
        let spec = stft(&sine(440.0, 160_000, 16_000)).unwrap();
        assert_eq!(spec.n_frames(), 155);
        assert_eq!(spec.n_bins(), 1025);
    }

    #[test]
    fn one_khz_peaks_at_bin_128() {
        let spec = stft(&sine(1000.0, 16_000, 16_000)).unwrap();
        for f in 0..spec.n_frames() {
            assert_eq!(spec.argmax_bin(f), 128);
        }
    }

    #[test]
    fn short_clip_is_rejected() {
        assert!(matches!(
            stft(&sine(1000.0, 1000, 16_000)),
            Err(DspError::ClipTooShort {
                needed: 2048,
                got: 1000
            })
        ));
    }

    #[test]
    fn hann_concentrates_sine_energy() {
        // 1234.5 Hz falls between bins.
        let spec = stft(&sine(1234.5, 16_000, 16_000)).unwrap();
        let true_bin = 1234.5 * N_FFT as f64 / 16_000.0;
        for f in 0..spec.n_frames() {
            let total: f64 = (0..N_BINS).map(|k| f64::from(spec.get(k, f)).powi(2)).sum();
            let near: f64 = (0..N_BINS)
                .filter(|&k| (k as f64 - true_bin).abs() <= 2.0)
                .map(|k| f64::from(spec.get(k, f)).powi(2))
                .sum();
            assert!(near / total >= 0.9, "frame {f}: {}", near / total);
        }
    }

    #[test]
    fn crop_keeps_exact_bin_range() {
        let spec = stft(&white_noise(16_000)).unwrap();
        let cropped = band_crop(&spec, &FrequencyBand::new(3000.0, 6000.0)).unwrap();
        for k in 0..N_BINS {
            let kept = (384..=768).contains(&k);
            for f in 0..spec.n_frames() {
                if kept {
                    assert_eq!(cropped.get(k, f).to_bits(), spec.get(k, f).to_bits());
                } else {
                    assert_eq!(cropped.get(k, f), 0.0);
                }
            }
        }
    }

    #[test]
    fn full_band_crop_is_identity() {
        let spec = stft(&white_noise(8192)).unwrap();
        let cropped = band_crop(&spec, &FrequencyBand::full(16_000)).unwrap();
        assert_eq!(cropped, spec);
    }

    #[test]
    fn out_of_band_energy_is_zero() {
        let band = FrequencyBand::new(2000.0, 5000.0);
        let spec = stft(&white_noise(16_000)).unwrap();
        let cropped = band_crop(&spec, &band).unwrap();
        let outside: f64 = (0..N_BINS)
            .filter(|&k| !band.contains(cropped.bin_frequency(k)))
            .flat_map(|k| cropped.bin(k).iter().map(|&m| f64::from(m).powi(2)))
            .sum();
        assert_eq!(outside, 0.0);
    }

    #[test]
    fn crop_rejects_bad_band() {
        let spec = stft(&white_noise(4096)).unwrap();
        assert!(matches!(
            band_crop(&spec, &FrequencyBand::new(5000.0, 9000.0)),
            Err(DspError::InvalidBand { .. })
        ));
    }

    #[test]
    fn band_energy_sees_the_tone() {
        let c = sine(3500.0, 16_000, 16_000);
        let inside = band_energy(&c, &FrequencyBand::new(3000.0, 4000.0));
        let outside = band_energy(&c, &FrequencyBand::new(5000.0, 8000.0));
        assert!(inside > 1e6 * outside.max(1e-12));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn band_strategy() -> impl Strategy<Value = FrequencyBand> {
            (0.0..7900.0f64, 10.0..8000.0f64)
                .prop_map(|(lo, w)| FrequencyBand::new(lo, (lo + w).min(8000.0)))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn crop_is_idempotent(b in band_strategy()) {
                let spec = stft(&white_noise(6144)).unwrap();
                let once = band_crop(&spec, &b).unwrap();
                let twice = band_crop(&once, &b).unwrap();
                prop_assert!(once.mags().iter().zip(twice.mags()).all(|(a, b)| a.to_bits() == b.to_bits()));
            }

            #[test]
            fn crop_composes_as_intersection(b1 in band_strategy(), b2 in band_strategy()) {
                let spec = stft(&white_noise(6144)).unwrap();
                let seq = band_crop(&band_crop(&spec, &b1).unwrap(), &b2).unwrap();
                if let Some(both) = b1.intersect(&b2) {
                    let direct = band_crop(&spec, &both).unwrap();
                    prop_assert_eq!(seq, direct);
                } else {
                    prop_assert!(seq.mags().iter().all(|&m| m == 0.0));
                }
            }
        }
    }
}
