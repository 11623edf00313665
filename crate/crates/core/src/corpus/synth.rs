//! Synthetic machine-sound corpus.
//!
//! Each section is a machine "operating condition" made of a loud hum outside
//! the anomaly band plus quieter signature tones inside it. Anomalous clips add
//! one extra tone confined to the anomaly band. Hum amplitude wanders from
//! clip to clip and the target domain shifts the hum frequencies, so the only
//! stable, section-specific evidence lives in the anomaly band.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    scan_dataset, write_wav, AudioClip, CorpusError, Domain, Label, MachineType, Manifest, Split,
};
use crate::seed::derive_seed;

/// Minimum distance between a random anomaly tone and any in-band section
/// tone, and between the tone and the band edges.
const ANOMALY_TONE_GUARD_HZ: f64 = 150.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionTones {
    pub section: u8,
    /// Out-of-band hum partials.
    pub hum_hz: Vec<f64>,
    /// Signature tones inside the anomaly band.
    pub tones_hz: Vec<f64>,
}

/// Clip counts per section. Test counts are per domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCounts {
    pub train_source: usize,
    pub train_target: usize,
    pub test_normal: usize,
    pub test_anomaly: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub machine: MachineType,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub sections: Vec<SectionTones>,
    pub hum_amp: f64,
    /// Per-clip hum amplitude is drawn uniformly from `hum_amp * (1 ± hum_jitter)`.
    pub hum_jitter: f64,
    pub tone_amp: f64,
    /// Standard deviation of the white Gaussian noise floor.
    pub noise_level: f64,
    pub anomaly_band: [f64; 2],
    pub anomaly_amp: f64,
    /// Fixed anomaly tone frequency; drawn per clip inside the band when absent.
    pub anomaly_tone_hz: Option<f64>,
    /// Multiplier applied to hum frequencies in the target domain.
    pub target_hum_shift: f64,
    pub counts: SynthCounts,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            machine: MachineType::Slider,
            sample_rate: super::PIPELINE_SAMPLE_RATE,
            duration_s: 10.0,
            sections: vec![
                SectionTones {
                    section: 0,
                    hum_hz: vec![350.0, 1150.0, 6300.0],
                    tones_hz: vec![2400.0, 3700.0],
                },
                SectionTones {
                    section: 1,
                    hum_hz: vec![500.0, 1500.0, 6900.0],
                    tones_hz: vec![2900.0, 4400.0],
                },
            ],
            hum_amp: 0.2,
            hum_jitter: 0.3,
            tone_amp: 0.04,
            noise_level: 0.01,
            anomaly_band: [2000.0, 5000.0],
            anomaly_amp: 0.04,
            anomaly_tone_hz: None,
            target_hum_shift: 1.08,
            counts: SynthCounts {
                train_source: 95,
                train_target: 5,
                test_normal: 5,
                test_anomaly: 5,
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidConfig(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration_s must be positive".into());
        }
        let [lo, hi] = self.anomaly_band;
        if !(lo >= 0.0 && lo < hi) {
            return bad(format!("anomaly band [{lo}, {hi}] is empty"));
        }
        if hi > nyquist {
            return bad(format!(
                "anomaly band upper edge {hi} Hz exceeds Nyquist {nyquist} Hz"
            ));
        }
        if self.sections.is_empty() {
            return bad("at least one section is required".into());
        }
        let mut ids: Vec<u8> = self.sections.iter().map(|s| s.section).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.sections.len() || ids.iter().any(|&s| s > 2) {
            return bad("sections must be unique ids in 0..=2".into());
        }
        for s in &self.sections {
            let shift = self.target_hum_shift.max(1.0);
            if let Some(f) = s.hum_hz.iter().find(|&&f| f <= 0.0 || f * shift >= nyquist) {
                return bad(format!("hum partial {f} Hz is outside (0, Nyquist)"));
            }
            if let Some(f) = s.tones_hz.iter().find(|&&f| f < lo || f > hi) {
                return bad(format!("section tone {f} Hz lies outside the anomaly band"));
            }
        }
        if let Some(f) = self.anomaly_tone_hz {
            if f < lo || f > hi {
                return bad(format!("anomaly tone {f} Hz lies outside the anomaly band"));
            }
        } else if hi - lo <= 2.0 * ANOMALY_TONE_GUARD_HZ {
            return bad("anomaly band too narrow for random tones".into());
        }
        let peak = self.hum_amp * (1.0 + self.hum_jitter) * 3.0
            + self.tone_amp * 3.0
            + self.anomaly_amp
            + 4.0 * self.noise_level;
        if [
            self.hum_amp,
            self.tone_amp,
            self.noise_level,
            self.anomaly_amp,
        ]
        .iter()
        .any(|a| !(a.is_finite() && *a >= 0.0))
            || !(0.0..1.0).contains(&self.hum_jitter)
        {
            return bad("amplitudes must be finite and non-negative, jitter in [0, 1)".into());
        }
        if peak >= 1.0 {
            log::warn!("synthetic mix may clip (worst-case peak {peak:.2})");
        }
        if !(self.target_hum_shift.is_finite() && self.target_hum_shift > 0.0) {
            return bad("target_hum_shift must be positive".into());
        }
        Ok(())
    }

    fn samples_per_clip(&self) -> usize {
        (self.duration_s * f64::from(self.sample_rate)).round() as usize
    }

    /// Synthesizes one clip. The caller owns the generator so that clips are
    /// reproducible individually.
    pub fn synthesize_clip(
        &self,
        section: &SectionTones,
        domain: Domain,
        anomalous: bool,
        rng: &mut impl Rng,
    ) -> AudioClip {
        let sr = f64::from(self.sample_rate);
        let n = self.samples_per_clip();
        let mut partials: Vec<(f64, f64, f64)> = Vec::new();

        let shift = match domain {
            Domain::Source => 1.0,
            Domain::Target => self.target_hum_shift,
        };
        let hum_scale = self.hum_amp * rng.gen_range(1.0 - self.hum_jitter..=1.0 + self.hum_jitter);
        for (i, &f) in section.hum_hz.iter().enumerate() {
            // Higher partials fall off as 1/(i+1).
            let amp = hum_scale / (i as f64 + 1.0);
            partials.push((f * shift, amp, rng.gen_range(0.0..2.0 * PI)));
        }
        for &f in &section.tones_hz {
            partials.push((f, self.tone_amp, rng.gen_range(0.0..2.0 * PI)));
        }
        if anomalous {
            let f = self
                .anomaly_tone_hz
                .unwrap_or_else(|| self.draw_anomaly_frequency(&section.tones_hz, rng));
            partials.push((f, self.anomaly_amp, rng.gen_range(0.0..2.0 * PI)));
        }

        let noise = Normal::new(0.0, self.noise_level.max(0.0)).expect("non-negative std");
        let samples: Vec<f32> = (0..n)
            .map(|t| {
                let time = t as f64 / sr;
                let tonal: f64 = partials
                    .iter()
                    .map(|&(f, a, ph)| a * (2.0 * PI * f * time + ph).sin())
                    .sum();
                (tonal + noise.sample(rng)).clamp(-1.0, 1.0) as f32
            })
            .collect();
        AudioClip::new(samples, self.sample_rate).expect("synthetic samples are finite")
    }

    fn draw_anomaly_frequency(&self, tones: &[f64], rng: &mut impl Rng) -> f64 {
        let [lo, hi] = self.anomaly_band;
        let (lo, hi) = (lo + ANOMALY_TONE_GUARD_HZ, hi - ANOMALY_TONE_GUARD_HZ);
        for _ in 0..1000 {
            let f = rng.gen_range(lo..hi);
            if tones
                .iter()
                .all(|&t| (t - f).abs() >= ANOMALY_TONE_GUARD_HZ)
            {
                return f;
            }
        }
        (lo + hi) / 2.0
    }
}

/// Writes a DCASE-shaped corpus under `<out_root>/<machine>/{train,test}` and
/// returns its manifest. Output is byte-identical for a given `(cfg, seed)`.
pub fn generate_synthetic_corpus(
    cfg: &SynthConfig,
    seed: u64,
    out_root: impl AsRef<Path>,
) -> Result<Manifest, CorpusError> {
    cfg.validate()?;
    let out_root = out_root.as_ref();
    let machine_dir = out_root.join(cfg.machine.dir_name());
    for split in [Split::Train, Split::Test] {
        fs::create_dir_all(machine_dir.join(split.as_str()))?;
    }

    let mut stream = 0u64;
    let mut emit =
        |section: &SectionTones, domain: Domain, split: Split, label: Label, index: usize| {
            stream += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
            let clip = cfg.synthesize_clip(section, domain, label == Label::Anomaly, &mut rng);
            let name = format!(
                "section_{:02}_{}_{}_{}_{:04}.wav",
                section.section,
                domain.as_str(),
                split.as_str(),
                label.as_str(),
                index
            );
            write_wav(machine_dir.join(split.as_str()).join(name), &clip)
        };

    let c = cfg.counts;
    for section in &cfg.sections {
        for i in 0..c.train_source {
            emit(section, Domain::Source, Split::Train, Label::Normal, i)?;
        }
        for i in 0..c.train_target {
            emit(section, Domain::Target, Split::Train, Label::Normal, i)?;
        }
        for domain in [Domain::Source, Domain::Target] {
            for i in 0..c.test_normal {
                emit(section, domain, Split::Test, Label::Normal, i)?;
            }
            for i in 0..c.test_anomaly {
                emit(
                    section,
                    domain,
                    Split::Test,
                    Label::Anomaly,
                    c.test_normal + i,
                )?;
            }
        }
    }
    scan_dataset(out_root, cfg.machine)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_above_nyquist_is_invalid() {
        let cfg = SynthConfig {
            anomaly_band: [9000.0, 12000.0],
            ..SynthConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(CorpusError::InvalidConfig(_))));
    }

    #[test]
    fn default_config_is_valid_and_sized() {
        let cfg = SynthConfig::default();
        cfg.validate().unwrap();
        let per_section = cfg.counts.train_source + cfg.counts.train_target;
        assert_eq!(per_section * cfg.sections.len(), 200);
        let test = 2 * (cfg.counts.test_normal + cfg.counts.test_anomaly);
        assert_eq!(test * cfg.sections.len(), 40);
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let err = serde_json::from_str::<SynthConfig>(r#"{"bogus": 1}"#);
        assert!(err.is_err());
        let ok: SynthConfig = serde_json::from_str(r#"{"anomaly_amp": 0.1}"#).unwrap();
        assert_eq!(ok.anomaly_amp, 0.1);
    }

    #[test]
    fn random_anomaly_tone_avoids_section_tones() {
        let cfg = SynthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let f = cfg.draw_anomaly_frequency(&[2500.0, 3000.0], &mut rng);
            assert!((2150.0..4850.0).contains(&f));
            assert!((f - 2500.0).abs() >= 150.0 && (f - 3000.0).abs() >= 150.0);
        }
    }
}
