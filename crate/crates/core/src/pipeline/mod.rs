//! End-to-end flow: features, classifier training, embeddings, per-section
//! reference models, clip scores and the evaluation report.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{
    AnomalySection, AugmentSection, EvalSection, PipelineConfig, SegmentSection, StftSection,
    TrainSection,
};

use crate::anomaly::{decide, fit_reference, reduce, AnomalyError, AnomalyScore, ReferenceModel};
use crate::augment::{AugmentError, LabeledBatch};
use crate::corpus::{read_wav, ClipMeta, CorpusError, Label, Manifest, Split};
use crate::dsp::{DspError, FeatureExtractor, MelSpectrogram};
use crate::metrics::{evaluate_scores, EvalReport, MetricsError};
use crate::net::{
    build_model, embed_specs, load_checkpoint, save_checkpoint, train, EmbeddingLayer, Model,
    NetError, TrainingLog,
};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        use ErrorKind::*;
        match self {
            PipelineError::Config(_) => Config,
            PipelineError::Net(NetError::InvalidConfig(_)) => Config,
            PipelineError::Augment(
                AugmentError::InvalidConfig(_) | AugmentError::ShiftOutOfRange(_),
            ) => Config,
            PipelineError::Corpus(CorpusError::InvalidConfig(_)) => Config,
            PipelineError::Dsp(DspError::InvalidBand { .. }) => Config,
            PipelineError::Net(
                NetError::DivergedLoss { .. } | NetError::NonFiniteActivation(_),
            ) => Numeric,
            PipelineError::Anomaly(
                AnomalyError::SingularCovariance
                | AnomalyError::DegenerateSample
                | AnomalyError::InvalidGamma { .. }
                | AnomalyError::InvalidSample(_),
            ) => Numeric,
            _ => Data,
        }
    }
}

/// Produces the spectrograms of a clip. Implementations may cache.
pub trait FeatureSource {
    fn features(
        &mut self,
        clip: &ClipMeta,
        extractor: &FeatureExtractor,
        segmenting: bool,
    ) -> Result<Vec<MelSpectrogram>, PipelineError>;
}

/// Reads and extracts on every call.
#[derive(Debug, Default, Clone, Copy)]
pub struct DirectFeatures;

impl FeatureSource for DirectFeatures {
    fn features(
        &mut self,
        clip: &ClipMeta,
        extractor: &FeatureExtractor,
        segmenting: bool,
    ) -> Result<Vec<MelSpectrogram>, PipelineError> {
        extract_clip(clip, extractor, segmenting)
    }
}

/// Reads a clip, resamples it to the extractor's rate if needed and extracts.
pub fn extract_clip(
    clip: &ClipMeta,
    extractor: &FeatureExtractor,
    segmenting: bool,
) -> Result<Vec<MelSpectrogram>, PipelineError> {
    let audio = read_wav(&clip.path)?;
    let audio = if audio.sample_rate() == extractor.sample_rate() {
        audio
    } else {
        audio.resampled(extractor.sample_rate())
    };
    Ok(extractor.extract_all(&audio, segmenting)?)
}

/// Class ids: one per train section in ascending order, then the pseudo class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassLayout {
    pub sections: Vec<u8>,
    pub pseudo: bool,
}

impl ClassLayout {
    pub fn new(manifest: &Manifest, pseudo: bool) -> Self {
        Self {
            sections: manifest.train_sections(),
            pseudo,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.sections.len() + usize::from(self.pseudo)
    }

    pub fn section_class(&self, section: u8) -> Option<usize> {
        self.sections.iter().position(|&s| s == section)
    }

    pub fn pseudo_class(&self) -> Option<usize> {
        self.pseudo.then_some(self.sections.len())
    }
}

/// One-hot labelled segments of the normal train clips plus the pseudo clips.
pub fn training_set(
    layout: &ClassLayout,
    train: &[ClipMeta],
    pseudo: &[ClipMeta],
    extractor: &FeatureExtractor,
    segmenting: bool,
    src: &mut dyn FeatureSource,
) -> Result<LabeledBatch, PipelineError> {
    let mut specs = Vec::new();
    let mut classes = Vec::new();
    for clip in train {
        let c = layout
            .section_class(clip.section)
            .ok_or_else(|| PipelineError::Data(format!("section {} has no class", clip.section)))?;
        for s in src.features(clip, extractor, segmenting)? {
            specs.push(s);
            classes.push(c);
        }
    }
    if let Some(c) = layout.pseudo_class() {
        for clip in pseudo {
            for s in src.features(clip, extractor, segmenting)? {
                specs.push(s);
                classes.push(c);
            }
        }
    }
    if specs.is_empty() {
        return Err(PipelineError::Net(NetError::EmptyDataset));
    }
    Ok(LabeledBatch::one_hot(specs, &classes, layout.num_classes()))
}

/// Normal train clips of the manifest.
pub fn train_clips(manifest: &Manifest) -> Vec<ClipMeta> {
    manifest
        .split(Split::Train)
        .filter(|c| c.label != Label::Anomaly)
        .cloned()
        .collect()
}

pub fn test_clips(manifest: &Manifest) -> Vec<ClipMeta> {
    manifest.split(Split::Test).cloned().collect()
}

/// Trains a fresh classifier. Checkpoints land in `checkpoint_dir` every
/// `checkpoint_every` epochs, and the final epoch is always saved.
pub fn train_model(
    cfg: &PipelineConfig,
    layout: &ClassLayout,
    data: &LabeledBatch,
    checkpoint_dir: Option<&Path>,
) -> Result<(Model, TrainingLog), PipelineError> {
    let mut model_cfg = cfg.model.clone();
    if model_cfg.num_classes != layout.num_classes() {
        log::info!(
            "model.num_classes set to {} ({} sections{})",
            layout.num_classes(),
            layout.sections.len(),
            if layout.pseudo { " + pseudo" } else { "" }
        );
        model_cfg.num_classes = layout.num_classes();
    }
    let mut model = build_model(&model_cfg, derive_seed(cfg.train.seed, 0x5EED))?;
    let tc = cfg.train_config();
    let mut log = train(&mut model, data, &tc, &cfg.augment.params, checkpoint_dir)?;
    if let Some(dir) = checkpoint_dir {
        let last = checkpoint_path(dir, tc.epochs);
        if log.checkpoints.last() != Some(&last) {
            std::fs::create_dir_all(dir)?;
            save_checkpoint(&model, &last)?;
            log.checkpoints.push(last);
        }
    }
    Ok((model, log))
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.aadm"))
}

/// Per-segment embeddings of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipEmbeddings {
    pub clip: ClipMeta,
    pub segments: Vec<Vec<f64>>,
}

pub fn embed_clips(
    model: &Model,
    clips: &[ClipMeta],
    extractor: &FeatureExtractor,
    segmenting: bool,
    layer: EmbeddingLayer,
    src: &mut dyn FeatureSource,
) -> Result<Vec<ClipEmbeddings>, PipelineError> {
    clips
        .iter()
        .map(|clip| {
            let specs = src.features(clip, extractor, segmenting)?;
            Ok(ClipEmbeddings {
                clip: clip.clone(),
                segments: embed_specs(model, &specs, layer)?,
            })
        })
        .collect()
}

/// One reference per section, fitted on every segment embedding of that
/// section's train clips (all checkpoints pooled).
pub fn fit_section_references(
    embeddings: &[ClipEmbeddings],
    cfg: &PipelineConfig,
) -> Result<BTreeMap<u8, ReferenceModel>, PipelineError> {
    let mut by_section: BTreeMap<u8, Vec<Vec<f64>>> = BTreeMap::new();
    for e in embeddings {
        by_section
            .entry(e.clip.section)
            .or_default()
            .extend(e.segments.iter().cloned());
    }
    let band = cfg.effective_band();
    by_section
        .into_iter()
        .map(|(section, vecs)| {
            let mut r = fit_reference(&vecs, cfg.anomaly.metric)?;
            r.provenance
                .insert("machine".into(), cfg.machine.to_string());
            r.provenance.insert("section".into(), section.to_string());
            r.provenance
                .insert("band_lo_hz".into(), band.f_lo.to_string());
            r.provenance
                .insert("band_hi_hz".into(), band.f_hi.to_string());
            r.provenance
                .insert("seed".into(), cfg.train.seed.to_string());
            log::info!(
                "section {section}: {} embeddings, gamma shape {:.4} scale {:.4}",
                vecs.len(),
                r.gamma.shape,
                r.gamma.scale
            );
            Ok((section, r))
        })
        .collect()
}

/// Clip scores and decisions against the reference of each clip's section.
pub fn score_clips(
    references: &BTreeMap<u8, ReferenceModel>,
    test: &[ClipEmbeddings],
    cfg: &PipelineConfig,
) -> Result<Vec<AnomalyScore>, PipelineError> {
    test.iter()
        .map(|e| {
            let r = references.get(&e.clip.section).ok_or_else(|| {
                PipelineError::Data(format!("no reference for section {}", e.clip.section))
            })?;
            if e.segments.is_empty() {
                return Err(AnomalyError::EmptyInput.into());
            }
            let d = e
                .segments
                .iter()
                .map(|s| r.distance(s))
                .collect::<Result<Vec<_>, _>>()?;
            let score = reduce(&d, cfg.anomaly.reducer);
            let (decision, threshold_used) = decide(score, r, cfg.anomaly.q)?;
            Ok(AnomalyScore {
                clip: e.clip.clone(),
                score,
                decision,
                threshold_used,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub log: TrainingLog,
    pub references: BTreeMap<u8, ReferenceModel>,
    pub scores: Vec<AnomalyScore>,
    pub report: EvalReport,
}

/// Train, embed, fit and score in one go. Checkpoints are written under
/// `workdir/checkpoints`.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    manifest: &Manifest,
    pseudo: &[ClipMeta],
    src: &mut dyn FeatureSource,
    workdir: &Path,
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let extractor = cfg.extractor()?;
    let pseudo = if cfg.augment.pseudo_audio {
        pseudo
    } else {
        &[]
    };
    let layout = ClassLayout::new(manifest, !pseudo.is_empty());
    let train = train_clips(manifest);
    let data = training_set(&layout, &train, pseudo, &extractor, cfg.segmenting, src)?;
    log::info!(
        "training on {} examples, {} classes, band {}",
        data.len(),
        layout.num_classes(),
        cfg.effective_band()
    );
    let ckpt_dir = workdir.join("checkpoints");
    let (model, log) = train_model(cfg, &layout, &data, Some(&ckpt_dir))?;
    drop(data);

    let references = fit_pooled(cfg, &log.checkpoints, &train, &extractor, src)?;
    let test = embed_clips(
        &model,
        &test_clips(manifest),
        &extractor,
        cfg.segmenting,
        cfg.anomaly.embedding,
        src,
    )?;
    let scores = score_clips(&references, &test, cfg)?;
    let report = evaluate_scores(
        &scores,
        cfg.effective_band(),
        cfg.anomaly.q,
        cfg.eval.pauc_p,
    );
    Ok(PipelineOutput {
        log,
        references,
        scores,
        report,
    })
}

/// Embeds the train clips with every checkpoint and fits the references on
/// the pooled embeddings.
pub fn fit_pooled(
    cfg: &PipelineConfig,
    checkpoints: &[PathBuf],
    train: &[ClipMeta],
    extractor: &FeatureExtractor,
    src: &mut dyn FeatureSource,
) -> Result<BTreeMap<u8, ReferenceModel>, PipelineError> {
    let mut pooled = Vec::new();
    for path in checkpoints {
        let m = load_checkpoint(path)?;
        pooled.extend(embed_clips(
            &m,
            train,
            extractor,
            cfg.segmenting,
            cfg.anomaly.embedding,
            src,
        )?);
    }
    fit_section_references(&pooled, cfg)
}
