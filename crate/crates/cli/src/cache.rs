//! Content-addressed feature cache and the directory lock that guards it.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use aad_core::corpus::ClipMeta;
use aad_core::dsp::{read_grid, write_grid, FeatureExtractor, GridFile, MelSpectrogram};
use aad_core::pipeline::{extract_clip, FeatureSource, PipelineError};
use sha2::{Digest, Sha256};

const KEY_VERSION: &str = "features-v1";

pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Held for the lifetime of a command; removed on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let owner = fs::read_to_string(&path).unwrap_or_default();
                    let pid = owner.trim();
                    if !pid.is_empty() && !Path::new("/proc").join(pid).exists() {
                        log::warn!("removing stale cache lock left by process {pid}");
                        fs::remove_file(&path)?;
                        continue;
                    }
                    return Err(PipelineError::Data(format!(
                        "cache {} is locked by process {pid}",
                        dir.display()
                    )));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(PipelineError::Data(format!(
            "cannot lock cache {}",
            dir.display()
        )))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Features keyed by the hash of the audio bytes and the extraction settings.
#[derive(Debug)]
pub struct FeatureCache {
    dir: PathBuf,
    pub hits: usize,
    pub misses: usize,
}

impl FeatureCache {
    pub fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            hits: 0,
            misses: 0,
        }
    }

    fn key(&self, audio: &[u8], extractor: &FeatureExtractor, segmenting: bool) -> String {
        let settings = format!(
            "{KEY_VERSION}|{}|{:?}|{segmenting}",
            extractor.sample_rate(),
            extractor
                .band()
                .map(|b| (b.f_lo.to_bits(), b.f_hi.to_bits()))
        );
        sha256_hex(&[audio, settings.as_bytes()])
    }

    fn load(&self, path: &Path, extractor: &FeatureExtractor) -> Option<Vec<MelSpectrogram>> {
        let grid = read_grid(BufReader::new(File::open(path).ok()?)).ok()?;
        let n_mels = aad_core::dsp::N_MELS;
        if grid.n_rows == 0 || grid.n_rows % n_mels != 0 {
            return None;
        }
        let per = n_mels * grid.n_cols;
        grid.values
            .chunks_exact(per)
            .map(|c| {
                let mut m = MelSpectrogram::new(c.to_vec(), grid.n_cols).ok()?;
                m.band = extractor.band();
                Some(m)
            })
            .collect()
    }

    fn store(
        &self,
        path: &Path,
        specs: &[MelSpectrogram],
        sample_rate: u32,
    ) -> Result<(), PipelineError> {
        let Some(first) = specs.first() else {
            return Ok(());
        };
        if specs.iter().any(|s| s.n_frames != first.n_frames) {
            return Ok(());
        }
        fs::create_dir_all(path.parent().expect("cache file has a parent"))?;
        let grid = GridFile {
            n_rows: specs.len() * first.n_mels(),
            n_cols: first.n_frames,
            sample_rate,
            values: specs
                .iter()
                .flat_map(|s| s.values.iter().copied())
                .collect(),
        };
        // Write then rename so readers never see a partial file.
        let tmp = path.with_extension("tmp");
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_grid(&mut w, &grid)?;
        w.flush()?;
        drop(w);
        fs::rename(tmp, path)?;
        Ok(())
    }
}

impl FeatureSource for FeatureCache {
    fn features(
        &mut self,
        clip: &ClipMeta,
        extractor: &FeatureExtractor,
        segmenting: bool,
    ) -> Result<Vec<MelSpectrogram>, PipelineError> {
        let audio = fs::read(&clip.path)?;
        let key = self.key(&audio, extractor, segmenting);
        let path = self.dir.join(&key[..2]).join(format!("{key}.grid"));
        if let Some(specs) = self.load(&path, extractor) {
            self.hits += 1;
            return Ok(specs);
        }
        self.misses += 1;
        let specs = extract_clip(clip, extractor, segmenting)?;
        self.store(&path, &specs, extractor.sample_rate())?;
        Ok(specs)
    }
}
