//! Three-way scene taxonomy, directory manifests, and the synthetic stand-in corpus.

mod synth;

pub use synth::{synth_clip, synth_dataset, synth_samples};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::features::{load_wav, log_mel, FeatureError, LogMelConfig, MelSpectrogram};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SceneClass {
    Indoor = 0,
    Outdoor = 1,
    Transportation = 2,
}

impl SceneClass {
    pub const ALL: [SceneClass; 3] = [SceneClass::Indoor, SceneClass::Outdoor, SceneClass::Transportation];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Directory / manifest spelling.
    pub fn name(self) -> &'static str {
        match self {
            SceneClass::Indoor => "indoor",
            SceneClass::Outdoor => "outdoor",
            SceneClass::Transportation => "transportation",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn title(self) -> &'static str {
        match self {
            SceneClass::Indoor => "Indoor",
            SceneClass::Outdoor => "Outdoor",
            SceneClass::Transportation => "Transportation",
        }
    }
}

impl fmt::Display for SceneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unknown class directory {name:?} (expected indoor, outdoor, transportation)")]
    UnknownClass { path: String, name: String },
    #[error("{path}: class directory contains no .wav files")]
    EmptyClass { path: String },
    #[error("{root}: missing class directory {name:?}")]
    MissingClass { root: String, name: String },
    #[error("{path}:{line}: {msg}")]
    Manifest { path: String, line: usize, msg: String },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid dataset request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest root.
    pub path: PathBuf,
    pub class: SceneClass,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn class_names(&self) -> [&'static str; 3] {
        SceneClass::ALL.map(SceneClass::name)
    }

    pub fn split(&self, which: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == which)
    }
}

pub const VAL_FRACTION: f64 = 0.2;

/// Seeded stratified assignment: in each class, `round(n · val_fraction)` items go to
/// validation (at least one when the class has two or more, never all of them).
pub fn stratified_split(labels: &[SceneClass], val_fraction: f64, seed: u64) -> Vec<Split> {
    let mut rng = stream(seed, Stream::Split);
    let mut out = vec![Split::Train; labels.len()];
    for class in SceneClass::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n = idx.len();
        if n < 2 {
            continue;
        }
        let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
        idx.shuffle(&mut rng);
        for &i in &idx[..n_val] {
            out[i] = Split::Val;
        }
    }
    out
}

fn path_key(p: &Path) -> &[u8] {
    p.as_os_str().as_encoded_bytes()
}

/// Builds a manifest from `<root>/{indoor,outdoor,transportation}/*.wav`, or from
/// `<root>/manifest.csv` (columns `path,class,split`) when that file exists.
pub fn scan_directory(root: impl AsRef<Path>, split_seed: u64) -> Result<DatasetManifest, DatasetError> {
    let root = root.as_ref();
    let csv_path = root.join("manifest.csv");
    if csv_path.is_file() {
        return read_manifest_csv(root, &csv_path);
    }

    let mut found: Vec<(PathBuf, SceneClass)> = Vec::new();
    let mut seen = [false; 3];
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let class = SceneClass::from_name(&name).ok_or_else(|| DatasetError::UnknownClass {
            path: path.display().to_string(),
            name: name.clone(),
        })?;
        seen[class.index()] = true;
        let before = found.len();
        for file in fs::read_dir(&path).map_err(io_err(&path))? {
            let file = file.map_err(io_err(&path))?.path();
            let is_wav = file
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
            if file.is_file() && is_wav {
                let rel = file.strip_prefix(root).expect("child of root").to_path_buf();
                found.push((rel, class));
            }
        }
        if found.len() == before {
            return Err(DatasetError::EmptyClass {
                path: path.display().to_string(),
            });
        }
    }
    if let Some(missing) = SceneClass::ALL.into_iter().find(|c| !seen[c.index()]) {
        return Err(DatasetError::MissingClass {
            root: root.display().to_string(),
            name: missing.name().to_string(),
        });
    }

    found.sort_by(|a, b| path_key(&a.0).cmp(path_key(&b.0)));
    let labels: Vec<SceneClass> = found.iter().map(|e| e.1).collect();
    let splits = stratified_split(&labels, VAL_FRACTION, split_seed);
    let entries = found
        .into_iter()
        .zip(splits)
        .map(|((path, class), split)| ManifestEntry { path, class, split })
        .collect();
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        entries,
    })
}

fn read_manifest_csv(root: &Path, csv_path: &Path) -> Result<DatasetManifest, DatasetError> {
    let shown = csv_path.display().to_string();
    let bad = |line: usize, msg: String| DatasetError::Manifest {
        path: shown.clone(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| bad(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "class", "split"] {
        return Err(bad(1, format!("expected header path,class,split, got {}", headers.iter().collect::<Vec<_>>().join(","))));
    }

    let mut entries = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| bad(line, e.to_string()))?;
        let (path, class, split) = (&record[0], &record[1], &record[2]);
        let class = SceneClass::from_name(class).ok_or_else(|| bad(line, format!("unknown class {class:?}")))?;
        let split = match split {
            "train" => Split::Train,
            "val" => Split::Val,
            other => return Err(bad(line, format!("unknown split {other:?} (train or val)"))),
        };
        let path = PathBuf::from(path);
        if !root.join(&path).is_file() {
            return Err(bad(line, format!("{} does not exist", root.join(&path).display())));
        }
        entries.push(ManifestEntry { path, class, split });
    }
    if entries.is_empty() {
        return Err(DatasetError::Empty);
    }
    entries.sort_by(|a, b| path_key(&a.path).cmp(path_key(&b.path)));
    if let Some(w) = entries.windows(2).find(|w| w[0].path == w[1].path) {
        return Err(bad(0, format!("{} listed more than once", w[0].path.display())));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        entries,
    })
}

/// One network input with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: MelSpectrogram,
    pub label: SceneClass,
    pub source: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    pub fn from_split(samples: Vec<Sample>, splits: &[Split]) -> Self {
        let mut ds = Dataset::default();
        for (s, &which) in samples.into_iter().zip(splits) {
            match which {
                Split::Train => ds.train.push(s),
                Split::Val => ds.val.push(s),
            }
        }
        ds
    }

    pub fn stratified(samples: Vec<Sample>, val_fraction: f64, seed: u64) -> Self {
        let labels: Vec<SceneClass> = samples.iter().map(|s| s.label).collect();
        let splits = stratified_split(&labels, val_fraction, seed);
        Self::from_split(samples, &splits)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Decodes and featurizes every manifest entry (in parallel), keeping the manifest split.
pub fn load_dataset(manifest: &DatasetManifest, cfg: &LogMelConfig) -> Result<Dataset, DatasetError> {
    if manifest.entries.is_empty() {
        return Err(DatasetError::Empty);
    }
    let samples = manifest
        .entries
        .par_iter()
        .map(|e| {
            let mut clip = load_wav(manifest.root.join(&e.path))?;
            clip.label = Some(e.class);
            Ok(Sample {
                features: log_mel(&clip, cfg)?,
                label: e.class,
                source: clip.source_path,
            })
        })
        .collect::<Result<Vec<_>, FeatureError>>()?;
    let splits: Vec<Split> = manifest.entries.iter().map(|e| e.split).collect();
    Ok(Dataset::from_split(samples, &splits))
}
