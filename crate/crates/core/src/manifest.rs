//! On-disk formats.
//!
//! Every manifest is JSON Lines: one serialized record per line, written in
//! input order. A corpus directory holds, for each split:
//!
//! * `{split}.jsonl`: one [`CorpusRecord`] per utterance.
//! * `{split}.features.bin`: every utterance's feature matrix as
//!   little-endian f64, row-major (frame by frame), concatenated.
//! * `{split}.features.idx.jsonl`: one [`FeatureIndexEntry`] per utterance
//!   giving its offset (in f64 elements) and shape within the `.bin` file.
//!
//! plus `corpus.json` with the generating config and the alphabet.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusConfig, Split, SyntheticUtterance, UtteranceInfo};
use crate::ctc::{Alphabet, LabelSequence};
use crate::model::FeatureMatrix;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("feature index {path} disagrees with its data: {message}")]
    Index { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), ManifestError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| ManifestError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a JSON Lines file; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ManifestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| ManifestError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ManifestError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ManifestError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureIndexEntry {
    pub id: String,
    pub offset: usize,
    pub frames: usize,
    pub dim: usize,
}

/// Writes `items` to `bin` and its index sidecar `idx`.
pub fn write_features<'a>(
    bin: &Path,
    idx: &Path,
    items: impl IntoIterator<Item = (&'a str, &'a FeatureMatrix)>,
) -> Result<(), ManifestError> {
    let file = File::create(bin).map_err(io_err(bin))?;
    let mut w = BufWriter::new(file);
    let mut index = Vec::new();
    let mut offset = 0;
    for (id, m) in items {
        for v in m.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err(bin))?;
        }
        index.push(FeatureIndexEntry {
            id: id.to_string(),
            offset,
            frames: m.frames(),
            dim: m.dim(),
        });
        offset += m.data().len();
    }
    w.flush().map_err(io_err(bin))?;
    write_jsonl(idx, &index)
}

pub fn read_features(bin: &Path, idx: &Path) -> Result<Vec<(String, FeatureMatrix)>, ManifestError> {
    let bytes = std::fs::read(bin).map_err(io_err(bin))?;
    if bytes.len() % 8 != 0 {
        return Err(ManifestError::Index {
            path: idx.to_path_buf(),
            message: format!("data file size {} is not a multiple of 8", bytes.len()),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let index: Vec<FeatureIndexEntry> = read_jsonl(idx)?;
    let mut out = Vec::with_capacity(index.len());
    for e in index {
        let end = e.offset + e.frames * e.dim;
        let bad = |message: String| ManifestError::Index {
            path: idx.to_path_buf(),
            message,
        };
        let slice = values
            .get(e.offset..end)
            .ok_or_else(|| bad(format!("entry {} runs past the end of the data", e.id)))?;
        let m = FeatureMatrix::new(e.frames, e.dim, slice.to_vec()).map_err(|err| bad(format!("entry {}: {err}", e.id)))?;
        out.push((e.id, m));
    }
    Ok(out)
}

/// One line of a split manifest. `reference` is present for every split; for
/// the unlabelled split it is the hidden ground truth used only for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    #[serde(flatten)]
    pub info: UtteranceInfo,
    pub frames: usize,
    pub reference: LabelSequence,
    pub frame_labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub config: CorpusConfig,
    pub labels: Vec<String>,
    pub blank: usize,
    pub domains: Vec<String>,
}

pub fn split_manifest_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.jsonl", split.name()))
}

pub fn split_features_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{}.features.bin", split.name())),
        dir.join(format!("{}.features.idx.jsonl", split.name())),
    )
}

pub fn write_corpus(dir: &Path, config: &CorpusConfig, corpus: &Corpus) -> Result<(), ManifestError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(
        &dir.join("corpus.json"),
        &CorpusHeader {
            config: config.clone(),
            labels: corpus.alphabet.labels().to_vec(),
            blank: corpus.alphabet.blank(),
            domains: corpus.domains.clone(),
        },
    )?;
    for split in Split::ALL {
        let utts = corpus.split(split);
        let records: Vec<CorpusRecord> = utts
            .iter()
            .map(|u| CorpusRecord {
                info: u.info.clone(),
                frames: u.features.frames(),
                reference: u.reference.clone(),
                frame_labels: u.frame_labels.clone(),
            })
            .collect();
        write_jsonl(&split_manifest_path(dir, split), &records)?;
        let (bin, idx) = split_features_paths(dir, split);
        write_features(&bin, &idx, utts.iter().map(|u| (u.id(), &u.features)))?;
    }
    Ok(())
}

pub fn read_split(dir: &Path, split: Split) -> Result<Vec<SyntheticUtterance>, ManifestError> {
    let path = split_manifest_path(dir, split);
    let records: Vec<CorpusRecord> = read_jsonl(&path)?;
    let (bin, idx) = split_features_paths(dir, split);
    let features = read_features(&bin, &idx)?;
    if features.len() != records.len() {
        return Err(ManifestError::Index {
            path: idx,
            message: format!("{} feature entries for {} records", features.len(), records.len()),
        });
    }
    records
        .into_iter()
        .zip(features)
        .map(|(r, (id, f))| {
            if id != r.info.id || f.frames() != r.frames {
                return Err(ManifestError::Index {
                    path: idx.clone(),
                    message: format!("entry {id} does not line up with record {}", r.info.id),
                });
            }
            Ok(SyntheticUtterance {
                info: r.info,
                features: f,
                reference: r.reference,
                frame_labels: r.frame_labels,
            })
        })
        .collect()
}

pub fn read_corpus(dir: &Path) -> Result<(CorpusHeader, Corpus), ManifestError> {
    let header_path = dir.join("corpus.json");
    let header: CorpusHeader = read_json(&header_path)?;
    let alphabet = Alphabet::new(header.labels.clone(), header.blank).map_err(|e| ManifestError::Parse {
        path: header_path,
        line: 0,
        message: e.to_string(),
    })?;
    let corpus = Corpus {
        alphabet,
        domains: header.domains.clone(),
        labelled: read_split(dir, Split::Labelled)?,
        unlabelled: read_split(dir, Split::Unlabelled)?,
        eval: read_split(dir, Split::Eval)?,
        calibration: read_split(dir, Split::Calibration)?,
    };
    Ok((header, corpus))
}
