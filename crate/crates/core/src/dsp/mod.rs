//! Feature front end: STFT magnitudes, narrow-band cropping, log-Mel
//! projection and fixed-length segmentation.

mod cache;
mod mel;
mod stft;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AudioClip;

pub use cache::{read_grid, write_grid, GridFile};
pub use mel::{
    hz_to_mel, mel_spectrogram, mel_to_hz, MelFilterbank, MelSpectrogram, LOG_FLOOR_EPS,
};
pub use stft::{band_crop, band_energy, stft, Spectrogram, Stft};

pub const N_FFT: usize = 2048;
pub const HOP: usize = 1024;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_MELS: usize = 128;
pub const SEGMENT_SECONDS: f64 = 2.5;
/// Fraction of a segment shared with its successor.
pub const SEGMENT_OVERLAP: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("clip has {got} samples, at least {needed} are required")]
    ClipTooShort { needed: usize, got: usize },
    #[error("invalid frequency band [{f_lo}, {f_hi}] Hz for sample rate {sample_rate}")]
    InvalidBand {
        f_lo: f64,
        f_hi: f64,
        sample_rate: u32,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt spectrogram cache: {0}")]
    CorruptCache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A closed frequency interval `[f_lo, f_hi]` in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyBand {
    pub f_lo: f64,
    pub f_hi: f64,
}

impl FrequencyBand {
    pub fn new(f_lo: f64, f_hi: f64) -> Self {
        Self { f_lo, f_hi }
    }

    pub fn full(sample_rate: u32) -> Self {
        Self::new(0.0, f64::from(sample_rate) / 2.0)
    }

    /// The nine 3 kHz-wide bands of the band sweep, 0-3 kHz to 4-7 kHz in
    /// 0.5 kHz steps.
    pub fn sweep_grid() -> Vec<FrequencyBand> {
        (0..9)
            .map(|i| {
                let lo = 500.0 * i as f64;
                FrequencyBand::new(lo, lo + 3000.0)
            })
            .collect()
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), DspError> {
        let nyquist = f64::from(sample_rate) / 2.0;
        let ok = self.f_lo.is_finite()
            && self.f_hi.is_finite()
            && self.f_lo >= 0.0
            && self.f_lo < self.f_hi
            && self.f_hi <= nyquist;
        if ok {
            Ok(())
        } else {
            Err(DspError::InvalidBand {
                f_lo: self.f_lo,
                f_hi: self.f_hi,
                sample_rate,
            })
        }
    }

    pub fn is_full(&self, sample_rate: u32) -> bool {
        self.f_lo <= 0.0 && self.f_hi >= f64::from(sample_rate) / 2.0
    }

    pub fn intersect(&self, other: &FrequencyBand) -> Option<FrequencyBand> {
        let lo = self.f_lo.max(other.f_lo);
        let hi = self.f_hi.min(other.f_hi);
        (lo < hi).then_some(FrequencyBand::new(lo, hi))
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.f_lo && f <= self.f_hi
    }
}

impl std::fmt::Display for FrequencyBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}Hz", self.f_lo, self.f_hi)
    }
}

/// Segment length and hop in samples for a sample rate.
pub fn segment_geometry(sample_rate: u32) -> (usize, usize) {
    let len = (SEGMENT_SECONDS * f64::from(sample_rate)).round() as usize;
    let hop = (len as f64 * (1.0 - SEGMENT_OVERLAP)).round() as usize;
    (len, hop)
}

/// Splits a clip into 2.5 s windows with 50 % overlap. A trailing remainder
/// shorter than one hop is dropped.
pub fn segment_clip(clip: &AudioClip) -> Result<Vec<AudioClip>, DspError> {
    let (len, hop) = segment_geometry(clip.sample_rate());
    if clip.len() < len {
        return Err(DspError::ClipTooShort {
            needed: len,
            got: clip.len(),
        });
    }
    let count = (clip.len() - len) / hop + 1;
    Ok((0..count)
        .map(|i| {
            let start = i * hop;
            AudioClip::new(
                clip.samples()[start..start + len].to_vec(),
                clip.sample_rate(),
            )
            .expect("slice of a valid clip is valid")
        })
        .collect())
}

/// Clip to log-Mel features under an optional band restriction.
#[derive(Debug)]
pub struct FeatureExtractor {
    stft: Stft,
    filterbank: MelFilterbank,
    band: Option<FrequencyBand>,
    sample_rate: u32,
}

impl FeatureExtractor {
    pub fn new(sample_rate: u32, band: Option<FrequencyBand>) -> Result<Self, DspError> {
        if let Some(b) = &band {
            b.validate(sample_rate)?;
        }
        Ok(Self {
            stft: Stft::new(),
            filterbank: MelFilterbank::new(sample_rate),
            band,
            sample_rate,
        })
    }

    pub fn band(&self) -> Option<FrequencyBand> {
        self.band
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<MelSpectrogram, DspError> {
        let mut spec = self.stft.process(clip)?;
        if let Some(band) = &self.band {
            spec = band_crop(&spec, band)?;
        }
        let mut mel = mel_spectrogram(&spec, &self.filterbank)?;
        mel.band = self.band;
        Ok(mel)
    }

    /// Features of each 2.5 s segment, or of the whole clip when `segmenting`
    /// is off.
    pub fn extract_all(
        &self,
        clip: &AudioClip,
        segmenting: bool,
    ) -> Result<Vec<MelSpectrogram>, DspError> {
        if segmenting {
            segment_clip(clip)?
                .iter()
                .map(|s| self.extract(s))
                .collect()
        } else {
            Ok(vec![self.extract(clip)?])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(n: usize) -> AudioClip {
        AudioClip::new(
            (0..n).map(|i| (i as f32 * 0.01).sin() * 0.5).collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn ten_seconds_gives_seven_segments() {
        let c = clip(160_000);
        let segs = segment_clip(&c).unwrap();
        assert_eq!(segs.len(), 7);
        for (i, s) in segs.iter().enumerate() {
            assert_eq!(s.len(), 40_000);
            assert_eq!(s.samples()[0], c.samples()[i * 20_000]);
        }
        assert_eq!(segs[6].samples()[0], c.samples()[120_000]);
    }

    #[test]
    fn exact_segment_is_identity() {
        let c = clip(40_000);
        let segs = segment_clip(&c).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0], c);
    }

    #[test]
    fn short_clip_cannot_be_segmented() {
        assert!(matches!(
            segment_clip(&clip(32_000)),
            Err(DspError::ClipTooShort { .. })
        ));
    }

    #[test]
    fn segments_cover_every_sample_at_most_twice() {
        for n in [40_000, 59_999, 60_000, 123_457, 160_000] {
            let c = clip(n);
            let segs = segment_clip(&c).unwrap();
            let end = (segs.len() - 1) * 20_000 + 40_000;
            let mut cover = vec![0u8; end];
            for i in 0..segs.len() {
                for c in &mut cover[i * 20_000..i * 20_000 + 40_000] {
                    *c += 1;
                }
            }
            assert!(cover.iter().all(|&c| (1..=2).contains(&c)), "n = {n}");
        }
    }

    #[test]
    fn sweep_grid_matches_band_list() {
        let grid = FrequencyBand::sweep_grid();
        assert_eq!(grid.len(), 9);
        assert_eq!(grid[0], FrequencyBand::new(0.0, 3000.0));
        assert_eq!(grid[1], FrequencyBand::new(500.0, 3500.0));
        assert_eq!(grid[4], FrequencyBand::new(2000.0, 5000.0));
        assert_eq!(grid[8], FrequencyBand::new(4000.0, 7000.0));
        assert!(grid.iter().all(|b| b.validate(16_000).is_ok()));
    }

    #[test]
    fn band_validation() {
        assert!(FrequencyBand::new(3000.0, 3000.0).validate(16_000).is_err());
        assert!(FrequencyBand::new(-1.0, 3000.0).validate(16_000).is_err());
        assert!(FrequencyBand::new(0.0, 8001.0).validate(16_000).is_err());
        assert!(FrequencyBand::full(16_000).validate(16_000).is_ok());
    }
}
