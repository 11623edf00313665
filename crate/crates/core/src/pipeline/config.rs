use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::anomaly::{Metric, Reducer};
use crate::augment::AugmentConfig;
use crate::corpus::{MachineType, PIPELINE_SAMPLE_RATE};
use crate::dsp::{
    FeatureExtractor, FrequencyBand, HOP, N_FFT, N_MELS, SEGMENT_OVERLAP, SEGMENT_SECONDS,
};
use crate::metrics::{DEFAULT_PAUC_P, DEFAULT_Q_GRID};
use crate::net::{EmbeddingLayer, ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftSection {
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for StftSection {
    fn default() -> Self {
        Self {
            n_fft: N_FFT,
            hop: HOP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentSection {
    pub len_s: f64,
    pub overlap: f64,
}

impl Default for SegmentSection {
    fn default() -> Self {
        Self {
            len_s: SEGMENT_SECONDS,
            overlap: SEGMENT_OVERLAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    /// Adds the pitch-shifted copies as one extra class.
    pub pseudo_audio: bool,
    pub spec_augment: bool,
    pub mixup: bool,
    pub params: AugmentConfig,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            pseudo_audio: true,
            spec_augment: true,
            mixup: true,
            params: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            lr: t.lr,
            batch_size: t.batch_size,
            checkpoint_every: t.checkpoint_every,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalySection {
    pub metric: Metric,
    pub q: f64,
    pub reducer: Reducer,
    pub embedding: EmbeddingLayer,
}

impl Default for AnomalySection {
    fn default() -> Self {
        Self {
            metric: Metric::default(),
            q: 0.9,
            reducer: Reducer::default(),
            embedding: EmbeddingLayer::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub pauc_p: f64,
    pub q_grid: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            pauc_p: DEFAULT_PAUC_P,
            q_grid: DEFAULT_Q_GRID.to_vec(),
        }
    }
}

/// Every setting of a pipeline run. Defaults reproduce the published setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub dataset_root: PathBuf,
    pub machine: MachineType,
    pub sample_rate: u32,
    pub stft: StftSection,
    pub n_mels: usize,
    /// STFT band kept before the Mel projection; the full band when absent.
    pub band: Option<FrequencyBand>,
    pub segmenting: bool,
    pub segment: SegmentSection,
    pub augment: AugmentSection,
    /// `num_classes` is derived from the data and overwritten at train time.
    pub model: ModelConfig,
    pub train: TrainSection,
    pub anomaly: AnomalySection,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset_root: PathBuf::from("data"),
            machine: MachineType::Slider,
            sample_rate: PIPELINE_SAMPLE_RATE,
            stft: StftSection::default(),
            n_mels: N_MELS,
            band: None,
            segmenting: true,
            segment: SegmentSection::default(),
            augment: AugmentSection::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            anomaly: AnomalySection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(s: &str) -> Result<Self, PipelineError> {
        let cfg: Self =
            serde_json::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.sample_rate != PIPELINE_SAMPLE_RATE {
            return bad(format!(
                "sample_rate must be {PIPELINE_SAMPLE_RATE}, got {}",
                self.sample_rate
            ));
        }
        if self.stft != StftSection::default() {
            return bad(format!("stft must be n_fft {N_FFT}, hop {HOP}"));
        }
        if self.n_mels != N_MELS || self.model.input_mels != N_MELS {
            return bad(format!("n_mels and model.input_mels must be {N_MELS}"));
        }
        if self.segment != SegmentSection::default() {
            return bad(format!(
                "segment must be {SEGMENT_SECONDS} s with overlap {SEGMENT_OVERLAP}"
            ));
        }
        if let Some(b) = &self.band {
            b.validate(self.sample_rate)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        self.augment
            .params
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let mut model = self.model.clone();
        model.num_classes = model.num_classes.max(2);
        model
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.train.epochs == 0 {
            return bad("train.epochs must be positive".into());
        }
        if !(self.anomaly.q > 0.0 && self.anomaly.q < 1.0) {
            return bad(format!(
                "anomaly.q must lie in (0, 1), got {}",
                self.anomaly.q
            ));
        }
        if !(self.eval.pauc_p > 0.0 && self.eval.pauc_p <= 1.0) {
            return bad(format!(
                "eval.pauc_p must lie in (0, 1], got {}",
                self.eval.pauc_p
            ));
        }
        crate::metrics::validate_grid(&self.eval.q_grid)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            checkpoint_every: self.train.checkpoint_every,
            seed: self.train.seed,
            spec_augment: self.augment.spec_augment,
            mixup: self.augment.mixup,
        }
    }

    pub fn extractor(&self) -> Result<FeatureExtractor, PipelineError> {
        Ok(FeatureExtractor::new(self.sample_rate, self.band)?)
    }

    /// The configured band, or 0 to Nyquist.
    pub fn effective_band(&self) -> FrequencyBand {
        self.band
            .unwrap_or_else(|| FrequencyBand::full(self.sample_rate))
    }

    /// Pitch shifts in use; empty when pseudo audio is off.
    pub fn pseudo_shifts(&self) -> &[f64] {
        if self.augment.pseudo_audio {
            &self.augment.params.pitch_semitones
        } else {
            &[]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(cfg.train.epochs, 30);
        assert_eq!(cfg.train.checkpoint_every, 20);
        assert_eq!(cfg.anomaly.q, 0.9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            PipelineConfig::from_json(r#"{"train": {"epoch": 3}}"#),
            Err(PipelineError::Config(_))
        ));
        assert!(PipelineConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = PipelineConfig::from_json(
            r#"{"band": {"f_lo": 2000, "f_hi": 5000}, "train": {"epochs": 60}}"#,
        )
        .unwrap();
        assert_eq!(cfg.band, Some(FrequencyBand::new(2000.0, 5000.0)));
        assert_eq!(cfg.train.epochs, 60);
        assert_eq!(cfg.train.lr, 1e-4);
    }

    #[test]
    fn preconditions_are_checked() {
        for json in [
            r#"{"band": {"f_lo": 5000, "f_hi": 2000}}"#,
            r#"{"band": {"f_lo": 0, "f_hi": 9000}}"#,
            r#"{"anomaly": {"q": 1.0}}"#,
            r#"{"eval": {"pauc_p": 0}}"#,
            r#"{"eval": {"q_grid": [0.9, 1.2]}}"#,
            r#"{"train": {"batch_size": 0}}"#,
            r#"{"stft": {"n_fft": 1024}}"#,
            r#"{"sample_rate": 44100}"#,
            r#"{"model": {"width_mult": 0}}"#,
            r#"{"augment": {"params": {"pitch_semitones": [13]}}}"#,
        ] {
            assert!(
                matches!(
                    PipelineConfig::from_json(json),
                    Err(PipelineError::Config(_))
                ),
                "{json}"
            );
        }
    }
}
