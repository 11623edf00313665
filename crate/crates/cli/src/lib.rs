//! The `aad` command line: each pipeline stage as a subcommand, with artifacts
//! under `--out` and a content-addressed feature cache.

pub mod cache;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use aad_core::anomaly::{
    read_embeddings_csv, write_embeddings_csv, AnomalyScore, Decision, EmbeddingRow, ReferenceModel,
};
use aad_core::augment::pitch_shift;
use aad_core::corpus::{
    generate_synthetic_corpus, read_wav, scan_dataset, scan_pseudo, write_wav, ClipMeta, Domain,
    Label, MachineType, Manifest, Split, SynthConfig,
};
use aad_core::dsp::FrequencyBand;
use aad_core::metrics::{
    emit_report, evaluate_scores, run_band_sweep, run_threshold_sweep, EvalReport, ReportFormat,
};
use aad_core::net::load_checkpoint;
use aad_core::pipeline::{
    embed_clips, fit_section_references, score_clips, test_clips, train_clips, train_model,
    training_set, ClassLayout, ClipEmbeddings, ErrorKind, PipelineConfig, PipelineError,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use cache::{sha256_hex, DirLock, FeatureCache};

#[derive(Debug, Parser)]
#[command(
    name = "aad",
    version,
    about = "Band-focused anomaly detection for machine sounds"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON pipeline configuration; flags below override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for training and the synthetic corpus.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Machine type, e.g. `slider` or `fan`.
    #[arg(long, global = true)]
    pub machine: Option<String>,
    /// Dataset root holding `<machine>/{train,test}`.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Report format: csv, markdown or plotdata.
    #[arg(long, global = true, default_value = "csv")]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Scan the dataset and write manifest.json.
    Ingest,
    /// Generate the synthetic corpus under the dataset root.
    SynthCorpus {
        /// JSON synthetic corpus settings.
        #[arg(long)]
        synth_config: Option<PathBuf>,
    },
    /// Write pitch-shifted copies of the train clips under `<machine>/pseudo`.
    SynthPseudo,
    /// Extract and cache features for every clip.
    Features,
    /// Train the classifier, saving checkpoints and the loss log.
    Train,
    /// Embed train clips with every checkpoint and test clips with the last.
    Embed,
    /// Fit one reference model per section.
    Fit,
    /// Score test clips and write scores.csv with the Gamma decisions.
    Score,
    /// Write the AUC/pAUC report, building missing stages first.
    Evaluate,
    /// Rerun the pipeline per frequency band; the full band is always included.
    BandSweep {
        /// Comma-separated `lo:hi` bands in Hz; the nine 3 kHz bands by default.
        #[arg(long)]
        bands: Option<String>,
    },
    /// Decision metrics of the Gamma threshold across a grid of q values.
    ThresholdSweep {
        /// Comma-separated q values; 0.85 to 0.95 in 0.01 steps by default.
        #[arg(long)]
        grid: Option<String>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("configuration error: {0}")]
    Config(String),
}

impl CliError {
    /// 2 for configuration, 3 for data and I/O, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Pipeline(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Pipeline(e.into())
    }
}

macro_rules! pipeline_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Pipeline(e.into())
            }
        }
    )*};
}
pipeline_from!(
    aad_core::corpus::CorpusError,
    aad_core::anomaly::AnomalyError,
    aad_core::metrics::MetricsError,
    aad_core::net::NetError,
    aad_core::augment::AugmentError
);

/// Reads the config file, applies flag overrides and validates.
pub fn resolve_config(g: &GlobalArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.train.seed = s;
    }
    if let Some(m) = &g.machine {
        cfg.machine = m
            .parse()
            .map_err(|e: aad_core::corpus::CorpusError| CliError::Config(e.to_string()))?;
    }
    if let Some(d) = &g.dataset {
        cfg.dataset_root = d.clone();
    }
    cfg.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

/// `"2000:5000,0:3000"` to bands.
pub fn parse_bands(s: &str) -> Result<Vec<FrequencyBand>, CliError> {
    s.split(',')
        .map(|part| {
            let (lo, hi) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("band {part:?} is not lo:hi")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("band {part:?} has a bad number")))
            };
            Ok(FrequencyBand::new(num(lo)?, num(hi)?))
        })
        .collect()
}

pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad q value {v:?}")))
        })
        .collect()
}

/// Shared state of one invocation.
pub struct Session {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub format: ReportFormat,
    pub cache: FeatureCache,
    _lock: DirLock,
}

impl Session {
    pub fn open(cfg: PipelineConfig, out: &Path, format: ReportFormat) -> Result<Self, CliError> {
        fs::create_dir_all(out)?;
        let cache_dir =
            std::env::var_os("AAD_CACHE_DIR").map_or_else(|| out.join("cache"), PathBuf::from);
        let lock = DirLock::acquire(&cache_dir)?;
        Ok(Self {
            cfg,
            out: out.to_path_buf(),
            format,
            cache: FeatureCache::new(cache_dir.join("features")),
            _lock: lock,
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn manifest(&self) -> Result<Manifest, CliError> {
        Ok(scan_dataset(&self.cfg.dataset_root, self.cfg.machine)?)
    }

    fn pseudo(&self) -> Result<Vec<ClipMeta>, CliError> {
        if self.cfg.pseudo_shifts().is_empty() {
            return Ok(Vec::new());
        }
        let clips = scan_pseudo(&self.cfg.dataset_root, self.cfg.machine)?;
        if clips.is_empty() {
            log::warn!("pseudo audio is enabled but no pseudo clips exist; run synth-pseudo first");
        }
        Ok(clips)
    }

    fn write_report(&self, stem: &str, report: &EvalReport) -> Result<PathBuf, CliError> {
        let path = self.path(&format!("{stem}.{}", self.format.extension()));
        let mut w = BufWriter::new(File::create(&path)?);
        emit_report(report, self.format, &mut w)?;
        w.flush()?;
        Ok(path)
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global)?;
    let mut s = Session::open(cfg, &cli.global.out, cli.global.format)?;
    fs::write(s.path("config.resolved.json"), s.cfg.to_json() + "\n")?;
    match cli.command {
        Command::Ingest => cmd_ingest(&s),
        Command::SynthCorpus { synth_config } => cmd_synth_corpus(&s, synth_config.as_deref()),
        Command::SynthPseudo => cmd_synth_pseudo(&s).map(|_| ()),
        Command::Features => cmd_features(&mut s),
        Command::Train => cmd_train(&mut s),
        Command::Embed => cmd_embed(&mut s),
        Command::Fit => cmd_fit(&s).map(|_| ()),
        Command::Score => cmd_score(&s).map(|_| ()),
        Command::Evaluate => cmd_evaluate(&mut s).map(|_| ()),
        Command::BandSweep { bands } => {
            let bands = match bands {
                Some(b) => parse_bands(&b)?,
                None => FrequencyBand::sweep_grid(),
            };
            cmd_band_sweep(&mut s, &bands).map(|_| ())
        }
        Command::ThresholdSweep { grid } => {
            let grid = match grid {
                Some(g) => parse_grid(&g)?,
                None => s.cfg.eval.q_grid.clone(),
            };
            cmd_threshold_sweep(&mut s, &grid).map(|_| ())
        }
    }
}

pub fn cmd_ingest(s: &Session) -> Result<(), CliError> {
    let m = s.manifest()?;
    fs::write(
        s.path("manifest.json"),
        m.to_json().map_err(|e| CliError::Config(e.to_string()))? + "\n",
    )?;
    log::info!(
        "{} clips ({} train, {} test), {} skipped",
        m.entries.len(),
        m.split(Split::Train).count(),
        m.split(Split::Test).count(),
        m.skipped.len()
    );
    Ok(())
}

pub fn cmd_synth_corpus(s: &Session, synth_config: Option<&Path>) -> Result<(), CliError> {
    let mut sc = match synth_config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| CliError::Config(e.to_string()))?,
        None => SynthConfig::default(),
    };
    sc.machine = s.cfg.machine;
    sc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let m = generate_synthetic_corpus(&sc, s.cfg.train.seed, &s.cfg.dataset_root)?;
    log::info!(
        "wrote {} clips under {}",
        m.entries.len(),
        s.cfg.dataset_root.display()
    );
    Ok(())
}

fn shift_tag(semitones: f64) -> String {
    format!("{semitones:+}")
}

/// Writes one pitch-shifted copy per (train clip, shift). Files whose
/// recorded source hash matches are skipped. Returns the number written.
pub fn cmd_synth_pseudo(s: &Session) -> Result<usize, CliError> {
    let shifts = s.cfg.augment.params.pitch_semitones.clone();
    if shifts.is_empty() {
        log::warn!("no pitch shifts configured; nothing to do");
        return Ok(0);
    }
    let manifest = s.manifest()?;
    let dir = s
        .cfg
        .dataset_root
        .join(s.cfg.machine.dir_name())
        .join("pseudo");
    fs::create_dir_all(&dir)?;
    let index_path = dir.join("hashes.json");
    let mut index: BTreeMap<String, String> = match fs::read_to_string(&index_path) {
        Ok(t) => serde_json::from_str(&t).unwrap_or_default(),
        Err(_) => BTreeMap::new(),
    };
    let (mut written, mut skipped) = (0, 0);
    for clip in train_clips(&manifest) {
        let bytes = fs::read(&clip.path)?;
        let stem = clip
            .path
            .file_stem()
            .and_then(|x| x.to_str())
            .ok_or_else(|| PipelineError::Data(format!("bad clip name {}", clip.path.display())))?
            .to_string();
        for &st in &shifts {
            let name = format!("{stem}_pitch_{}.wav", shift_tag(st));
            let hash = sha256_hex(&[&bytes, &st.to_le_bytes()]);
            let target = dir.join(&name);
            if target.is_file() && index.get(&name) == Some(&hash) {
                skipped += 1;
                continue;
            }
            let audio = read_wav(&clip.path)?;
            write_wav(&target, &pitch_shift(&audio, st)?)?;
            index.insert(name, hash);
            written += 1;
        }
    }
    fs::write(
        &index_path,
        serde_json::to_string_pretty(&index).expect("map serializes") + "\n",
    )?;
    log::info!("pseudo audio: {written} written, {skipped} up to date");
    Ok(written)
}

pub fn cmd_features(s: &mut Session) -> Result<(), CliError> {
    let m = s.manifest()?;
    let pseudo = s.pseudo()?;
    let ex = s.cfg.extractor()?;
    for clip in m.entries.iter().chain(&pseudo) {
        aad_core::pipeline::FeatureSource::features(&mut s.cache, clip, &ex, s.cfg.segmenting)?;
    }
    log::info!(
        "features: {} cached, {} extracted",
        s.cache.hits,
        s.cache.misses
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TrainRecord {
    sections: Vec<u8>,
    pseudo: bool,
    checkpoints: Vec<String>,
}

pub fn cmd_train(s: &mut Session) -> Result<(), CliError> {
    let m = s.manifest()?;
    let pseudo = s.pseudo()?;
    let ex = s.cfg.extractor()?;
    let layout = ClassLayout::new(&m, !pseudo.is_empty());
    let data = training_set(
        &layout,
        &train_clips(&m),
        &pseudo,
        &ex,
        s.cfg.segmenting,
        &mut s.cache,
    )?;
    let dir = s.path("checkpoints");
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    let (_, log) = train_model(&s.cfg, &layout, &data, Some(&dir))?;
    fs::write(s.path("train_log.csv"), log.to_csv())?;
    let record = TrainRecord {
        sections: layout.sections,
        pseudo: layout.pseudo,
        checkpoints: log
            .checkpoints
            .iter()
            .map(|p| {
                p.file_name()
                    .expect("checkpoint file")
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
    };
    fs::write(
        s.path("train.json"),
        serde_json::to_string_pretty(&record).expect("serializes") + "\n",
    )?;
    Ok(())
}

fn read_train_record(s: &Session) -> Result<TrainRecord, CliError> {
    let p = s.path("train.json");
    let t = fs::read_to_string(&p)
        .map_err(|_| PipelineError::Data(format!("{} missing; run train", p.display())))?;
    serde_json::from_str(&t)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", p.display())).into())
}

fn rows_of(embs: &[ClipEmbeddings]) -> Vec<EmbeddingRow> {
    embs.iter()
        .flat_map(|e| {
            e.segments.iter().enumerate().map(|(i, v)| EmbeddingRow {
                clip_path: e.clip.path.to_string_lossy().into_owned(),
                segment_index: i,
                values: v.clone(),
            })
        })
        .collect()
}

fn write_rows(path: &Path, rows: &[EmbeddingRow]) -> Result<(), CliError> {
    fs::create_dir_all(path.parent().expect("has parent"))?;
    let mut w = BufWriter::new(File::create(path)?);
    write_embeddings_csv(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

/// Regroups embedding rows into clips using the manifest.
fn clips_of(rows: Vec<EmbeddingRow>, manifest: &Manifest) -> Result<Vec<ClipEmbeddings>, CliError> {
    let by_path: HashMap<String, &ClipMeta> = manifest
        .entries
        .iter()
        .map(|c| (c.path.to_string_lossy().into_owned(), c))
        .collect();
    let mut out: Vec<ClipEmbeddings> = Vec::new();
    for r in rows {
        let meta = by_path.get(&r.clip_path).ok_or_else(|| {
            PipelineError::Data(format!("embedding for unknown clip {}", r.clip_path))
        })?;
        match out.last_mut() {
            Some(last) if last.clip.path == meta.path && r.segment_index == last.segments.len() => {
                last.segments.push(r.values)
            }
            _ if r.segment_index == 0 => out.push(ClipEmbeddings {
                clip: (*meta).clone(),
                segments: vec![r.values],
            }),
            _ => {
                return Err(PipelineError::Data(format!(
                    "segments of {} out of order",
                    r.clip_path
                ))
                .into())
            }
        }
    }
    Ok(out)
}

pub fn cmd_embed(s: &mut Session) -> Result<(), CliError> {
    let rec = read_train_record(s)?;
    let m = s.manifest()?;
    let ex = s.cfg.extractor()?;
    let train = train_clips(&m);
    let dir = s.path("embeddings");
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    let mut last = None;
    for name in &rec.checkpoints {
        let model = load_checkpoint(s.path("checkpoints").join(name))?;
        let embs = embed_clips(
            &model,
            &train,
            &ex,
            s.cfg.segmenting,
            s.cfg.anomaly.embedding,
            &mut s.cache,
        )?;
        let stem = name.trim_end_matches(".aadm");
        write_rows(&dir.join(format!("train_{stem}.csv")), &rows_of(&embs))?;
        last = Some(model);
    }
    let model =
        last.ok_or_else(|| PipelineError::Data("train.json lists no checkpoints".into()))?;
    let test = embed_clips(
        &model,
        &test_clips(&m),
        &ex,
        s.cfg.segmenting,
        s.cfg.anomaly.embedding,
        &mut s.cache,
    )?;
    write_rows(&dir.join("test.csv"), &rows_of(&test))?;
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<EmbeddingRow>, CliError> {
    Ok(read_embeddings_csv(BufReader::new(
        File::open(path)
            .map_err(|e| PipelineError::Data(format!("{}: {e}; run embed", path.display())))?,
    ))?)
}

pub fn cmd_fit(s: &Session) -> Result<BTreeMap<u8, ReferenceModel>, CliError> {
    let rec = read_train_record(s)?;
    let m = s.manifest()?;
    let mut pooled = Vec::new();
    for name in &rec.checkpoints {
        let stem = name.trim_end_matches(".aadm");
        pooled.extend(clips_of(
            read_rows(&s.path(&format!("embeddings/train_{stem}.csv")))?,
            &m,
        )?);
    }
    let refs = fit_section_references(&pooled, &s.cfg)?;
    let dir = s.path("references");
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    for (section, r) in &refs {
        r.save(dir.join(format!("section_{section:02}.json")))?;
    }
    Ok(refs)
}

fn load_references(s: &Session) -> Result<BTreeMap<u8, ReferenceModel>, CliError> {
    let dir = s.path("references");
    let mut refs = BTreeMap::new();
    let entries = fs::read_dir(&dir)
        .map_err(|e| PipelineError::Data(format!("{}: {e}; run fit", dir.display())))?;
    for entry in entries {
        let p = entry?.path();
        let Some(section) = p.file_name().and_then(|n| n.to_str()).and_then(|n| {
            n.strip_prefix("section_")?
                .strip_suffix(".json")?
                .parse::<u8>()
                .ok()
        }) else {
            continue;
        };
        refs.insert(section, ReferenceModel::load(&p)?);
    }
    if refs.is_empty() {
        return Err(
            PipelineError::Data(format!("no reference models in {}", dir.display())).into(),
        );
    }
    Ok(refs)
}

const SCORE_HEADER: [&str; 9] = [
    "machine",
    "section",
    "domain",
    "label",
    "clip_path",
    "score",
    "threshold",
    "decision",
    "split",
];

pub fn cmd_score(s: &Session) -> Result<Vec<AnomalyScore>, CliError> {
    let refs = load_references(s)?;
    let m = s.manifest()?;
    let test = clips_of(read_rows(&s.path("embeddings/test.csv"))?, &m)?;
    let scores = score_clips(&refs, &test, &s.cfg)?;
    let mut w = csv::Writer::from_path(s.path("scores.csv"))
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    let csv_err = |e: csv::Error| CliError::from(PipelineError::Data(e.to_string()));
    w.write_record(SCORE_HEADER).map_err(csv_err)?;
    for sc in &scores {
        let c = &sc.clip;
        w.write_record([
            c.machine.to_string(),
            c.section.to_string(),
            c.domain.as_str().to_string(),
            c.label.as_str().to_string(),
            c.path.to_string_lossy().into_owned(),
            sc.score.to_string(),
            sc.threshold_used.to_string(),
            match sc.decision {
                Decision::Normal => "normal".to_string(),
                Decision::Anomaly => "anomaly".to_string(),
            },
            c.split.as_str().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(scores)
}

fn read_scores(path: &Path) -> Result<Vec<AnomalyScore>, CliError> {
    let bad = |m: String| CliError::from(PipelineError::Data(format!("{}: {m}", path.display())));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("bad {}", SCORE_HEADER[i])))
        };
        let machine: MachineType = rec[0].parse().map_err(|_| bad("bad machine".into()))?;
        let domain = match &rec[2] {
            "source" => Domain::Source,
            "target" => Domain::Target,
            _ => return Err(bad("bad domain".into())),
        };
        let label = match &rec[3] {
            "normal" => Label::Normal,
            "anomaly" => Label::Anomaly,
            _ => Label::Unknown,
        };
        out.push(AnomalyScore {
            clip: ClipMeta {
                machine,
                section: rec[1].parse().map_err(|_| bad("bad section".into()))?,
                domain,
                split: if &rec[8] == "train" {
                    Split::Train
                } else {
                    Split::Test
                },
                label,
                path: PathBuf::from(&rec[4]),
            },
            score: num(5)?,
            threshold_used: num(6)?,
            decision: if &rec[7] == "anomaly" {
                Decision::Anomaly
            } else {
                Decision::Normal
            },
        });
    }
    Ok(out)
}

/// Runs whichever of train, embed, fit and score have no output yet.
fn ensure_scores(
    s: &mut Session,
) -> Result<(BTreeMap<u8, ReferenceModel>, Vec<AnomalyScore>), CliError> {
    if !s.path("train.json").is_file() {
        cmd_train(s)?;
    }
    if !s.path("embeddings/test.csv").is_file() {
        cmd_embed(s)?;
    }
    let refs = if s.path("references").is_dir() {
        load_references(s)?
    } else {
        cmd_fit(s)?
    };
    let scores = if s.path("scores.csv").is_file() {
        read_scores(&s.path("scores.csv"))?
    } else {
        cmd_score(s)?
    };
    Ok((refs, scores))
}

pub fn cmd_evaluate(s: &mut Session) -> Result<EvalReport, CliError> {
    let (_, scores) = ensure_scores(s)?;
    let report = evaluate_scores(
        &scores,
        s.cfg.effective_band(),
        s.cfg.anomaly.q,
        s.cfg.eval.pauc_p,
    );
    let path = s.write_report("report", &report)?;
    log::info!("report written to {}", path.display());
    Ok(report)
}

pub fn cmd_band_sweep(s: &mut Session, bands: &[FrequencyBand]) -> Result<EvalReport, CliError> {
    let m = s.manifest()?;
    let pseudo = s.pseudo()?;
    let work = s.path("band_sweep");
    let (out, format) = (s.out.clone(), s.format);
    let flush = |r: &EvalReport| -> Result<(), PipelineError> {
        let path = out.join(format!("band_sweep.{}", format.extension()));
        let mut w = BufWriter::new(File::create(path)?);
        emit_report(r, format, &mut w)?;
        w.flush()?;
        Ok(())
    };
    Ok(run_band_sweep(
        &s.cfg,
        &m,
        &pseudo,
        bands,
        &mut s.cache,
        &work,
        flush,
    )?)
}

pub fn cmd_threshold_sweep(s: &mut Session, grid: &[f64]) -> Result<EvalReport, CliError> {
    let (refs, scores) = ensure_scores(s)?;
    let report = run_threshold_sweep(&refs, &scores, grid, s.cfg.effective_band())?;
    s.write_report("threshold_sweep", &report)?;
    Ok(report)
}
