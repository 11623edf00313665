use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClipMeta, CorpusError, Domain, Label, MachineType, Split};

/// The clips of one machine type, sorted by path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ClipMeta>,
    /// Files found in the split directories that were not WAV clips.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(root: PathBuf, mut entries: Vec<ClipMeta>) -> Self {
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        entries.dedup_by(|a, b| a.path == b.path);
        Self {
            root,
            entries,
            skipped: Vec::new(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipMeta> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split, domain: Domain) -> usize {
        self.split(split).filter(|e| e.domain == domain).count()
    }

    /// Sorted, de-duplicated section ids of the train split.
    pub fn train_sections(&self) -> Vec<u8> {
        let mut s: Vec<u8> = self.split(Split::Train).map(|e| e.section).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// JSON array of clip records.
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(&self.entries)
    }
}

/// Parses `section_<NN>_<domain>_<split>_<label>_<index>[_attrs...].wav`.
/// Evaluation-style names without a label token yield [`Label::Unknown`].
pub fn parse_clip_name(file_name: &str) -> Result<(u8, Domain, Split, Label), CorpusError> {
    let ambiguous = || CorpusError::AmbiguousFilename(file_name.to_string());
    let stem = file_name
        .strip_suffix(".wav")
        .or_else(|| file_name.strip_suffix(".WAV"))
        .ok_or_else(ambiguous)?;
    let tokens: Vec<&str> = stem.split('_').collect();
    if tokens.len() < 5 || tokens[0] != "section" {
        return Err(ambiguous());
    }
    let section: u8 = tokens[1].parse().map_err(|_| ambiguous())?;
    if section > 2 {
        return Err(ambiguous());
    }
    let domain = match tokens[2] {
        "source" => Domain::Source,
        "target" => Domain::Target,
        _ => return Err(ambiguous()),
    };
    let split = match tokens[3] {
        "train" => Split::Train,
        "test" => Split::Test,
        _ => return Err(ambiguous()),
    };
    let label = match tokens[4] {
        "normal" => Label::Normal,
        "anomaly" => Label::Anomaly,
        t if t.bytes().all(|b| b.is_ascii_digit()) => Label::Unknown,
        _ => return Err(ambiguous()),
    };
    if split == Split::Train && label == Label::Anomaly {
        return Err(ambiguous());
    }
    let label = if split == Split::Train {
        Label::Normal
    } else {
        label
    };
    Ok((section, domain, split, label))
}

fn scan_dir(
    dir: &Path,
    machine: MachineType,
) -> Result<(Vec<ClipMeta>, Vec<PathBuf>), CorpusError> {
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for item in fs::read_dir(dir)? {
        let path = item?.path();
        if !path.is_file() {
            continue;
        }
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if !is_wav {
            log::warn!("skipping non-wav file {}", path.display());
            skipped.push(path);
            continue;
        }
        let (section, domain, split, label) = parse_clip_name(name)?;
        entries.push(ClipMeta {
            machine,
            section,
            domain,
            split,
            label,
            path,
        });
    }
    Ok((entries, skipped))
}

/// Scans `<root>/<machine>/{train,test}`.
pub fn scan_dataset(root: impl AsRef<Path>, machine: MachineType) -> Result<Manifest, CorpusError> {
    let root = root.as_ref();
    let machine_dir = root.join(machine.dir_name());
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for split in [Split::Train, Split::Test] {
        let dir = machine_dir.join(split.as_str());
        if !dir.is_dir() {
            return Err(CorpusError::EmptyDataset(dir));
        }
        let (e, s) = scan_dir(&dir, machine)?;
        if let Some(bad) = e.iter().find(|c| c.split != split) {
            return Err(CorpusError::AmbiguousFilename(format!(
                "{} (found under {}/)",
                bad.path.display(),
                split.as_str()
            )));
        }
        entries.extend(e);
        skipped.extend(s);
    }
    if entries.is_empty() {
        return Err(CorpusError::EmptyDataset(machine_dir));
    }
    let mut manifest = Manifest::new(root.to_path_buf(), entries);
    skipped.sort();
    manifest.skipped = skipped;
    Ok(manifest)
}

/// Scans the pitch-shifted copies under `<root>/<machine>/pseudo`. Returns an
/// empty list when the directory does not exist.
pub fn scan_pseudo(
    root: impl AsRef<Path>,
    machine: MachineType,
) -> Result<Vec<ClipMeta>, CorpusError> {
    let dir = root.as_ref().join(machine.dir_name()).join("pseudo");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let (mut entries, _) = scan_dir(&dir, machine)?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dev_set_name() {
        let got = parse_clip_name("section_00_source_train_normal_0042_x.wav").unwrap();
        assert_eq!(got, (0, Domain::Source, Split::Train, Label::Normal));
        let got = parse_clip_name("section_02_target_test_anomaly_0003_vel_6_loc_A.wav").unwrap();
        assert_eq!(got, (2, Domain::Target, Split::Test, Label::Anomaly));
    }

    #[test]
    fn unlabeled_test_clip_is_unknown() {
        let got = parse_clip_name("section_01_target_test_0007.wav").unwrap();
        assert_eq!(got.3, Label::Unknown);
    }

    #[test]
    fn missing_tokens_are_ambiguous() {
        for bad in [
            "section_00_source.wav",
            "sec_00_source_train_normal_0001.wav",
            "section_05_source_train_normal_0001.wav",
            "section_00_middle_train_normal_0001.wav",
            "section_00_source_train_broken_0001.wav",
        ] {
            assert!(
                matches!(parse_clip_name(bad), Err(CorpusError::AmbiguousFilename(_))),
                "{bad}"
            );
        }
    }

    fn touch(dir: &Path, name: &str) {
        std::fs::write(dir.join(name), b"").unwrap();
    }

    #[test]
    fn scan_counts_domains_and_skips_non_wav() {
        let tmp = tempfile::tempdir().unwrap();
        let train = tmp.path().join("fan/train");
        let test = tmp.path().join("fan/test");
        std::fs::create_dir_all(&train).unwrap();
        std::fs::create_dir_all(&test).unwrap();
        for i in 0..990 {
            touch(
                &train,
                &format!("section_00_source_train_normal_{i:04}_a.wav"),
            );
        }
        for i in 0..10 {
            touch(
                &train,
                &format!("section_00_target_train_normal_{i:04}_a.wav"),
            );
        }
        touch(&train, "readme.txt");
        touch(&test, "section_00_source_test_anomaly_0000.wav");

        let m = scan_dataset(tmp.path(), MachineType::Fan).unwrap();
        assert_eq!(m.count(Split::Train, Domain::Source), 990);
        assert_eq!(m.count(Split::Train, Domain::Target), 10);
        assert_eq!(m.count(Split::Test, Domain::Source), 1);
        assert_eq!(m.skipped.len(), 1);
        assert!(m.entries.windows(2).all(|w| w[0].path < w[1].path));

        let again = scan_dataset(tmp.path(), MachineType::Fan).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn missing_split_dir_is_empty_dataset() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(tmp.path().join("fan/train")).unwrap();
        assert!(matches!(
            scan_dataset(tmp.path(), MachineType::Fan),
            Err(CorpusError::EmptyDataset(_))
        ));
    }

    #[test]
    fn manifest_json_is_an_array() {
        let m = Manifest::new(
            PathBuf::from("/d"),
            vec![ClipMeta {
                machine: MachineType::ToyCar,
                section: 1,
                domain: Domain::Target,
                split: Split::Test,
                label: Label::Unknown,
                path: PathBuf::from("/d/x.wav"),
            }],
        );
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(v[0]["machine"], "ToyCar");
        assert_eq!(v[0]["domain"], "target");
        assert_eq!(v[0]["label"], "unknown");
    }
}
