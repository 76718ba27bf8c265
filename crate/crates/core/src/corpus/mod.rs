//! Episode persistence, train/validation/test splits and corpus statistics.
//!
//! Corpora are JSONL, one episode per line, with field order fixed by the
//! type definitions so re-serialization is byte-stable. Paths ending in
//! `.gz` are read and written gzip-compressed.

pub mod release;
mod split;
mod stats;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::episode_pipeline::Episode;

pub use split::{split_corpus, split_indices, write_splits, Split, SplitSpec, SPLIT_FILE_NAMES};
pub use stats::{compute_stats, CorpusStats};

/// A line that failed to load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based.
    pub line: usize,
    /// Path of the first failing field, e.g. `sessions[2].turns[0].text`.
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: field `{}`: {}", self.line, self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Line(LineError),
    #[error("invalid split spec: {0}")]
    Spec(String),
    #[error("corpus is empty")]
    Empty,
    #[error("episode {id}: {detail}")]
    Shim { id: String, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Opens `path` for line reading, decompressing `.gz`.
pub fn open_lines(path: &Path) -> Result<Box<dyn BufRead>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let inner: Box<dyn Read> = if is_gzip(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(inner)))
}

/// Writes `items` as JSONL, gzip-compressed for `.gz` paths.
pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    if is_gzip(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        write_jsonl_to(items, &mut enc).map_err(io_err(path))?;
        enc.finish().and_then(|mut w| w.flush()).map_err(io_err(path))
    } else {
        let mut w = BufWriter::new(file);
        write_jsonl_to(items, &mut w).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))
    }
}

pub fn write_jsonl_to<T: Serialize, W: Write>(items: &[T], out: &mut W) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Deserializes one JSON line, reporting the first failing field.
pub fn parse_line<T: DeserializeOwned>(text: &str, line: usize) -> Result<T, LineError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| LineError {
        line,
        field: field_path(e.path()),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| LineError {
        line,
        field: ".".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

fn field_path(path: &serde_path_to_error::Path) -> String {
    let text = path.to_string();
    if text.is_empty() {
        ".".into()
    } else {
        text
    }
}

/// Episodes that loaded and the lines that did not.
#[derive(Debug, Default)]
pub struct CorpusRead {
    pub episodes: Vec<Episode>,
    pub errors: Vec<LineError>,
}

pub fn write_corpus(episodes: &[Episode], path: &Path) -> Result<(), CorpusError> {
    write_jsonl(episodes, path)
}

/// Reads a corpus. In strict mode the first bad line is an error; otherwise
/// bad lines are collected and the remaining episodes still returned.
pub fn read_corpus(path: &Path, strict: bool) -> Result<CorpusRead, CorpusError> {
    read_corpus_from(open_lines(path)?, strict).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_corpus_from<R: BufRead>(reader: R, strict: bool) -> Result<CorpusRead, CorpusError> {
    let mut out = CorpusRead::default();
    for (idx, line) in reader.lines().enumerate() {
        let text = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let loaded = parse_line::<Episode>(&text, idx + 1).and_then(|ep| {
            ep.validate().map(|_| ep).map_err(|e| LineError {
                line: idx + 1,
                field: e.field,
                message: e.detail,
            })
        });
        match loaded {
            Ok(ep) => out.episodes.push(ep),
            Err(e) if strict => return Err(CorpusError::Line(e)),
            Err(e) => {
                log::warn!("skipping {e}");
                out.errors.push(e);
            }
        }
    }
    Ok(out)
}

/// Reads any JSONL file strictly.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in open_lines(path)?.lines().enumerate() {
        let text = line.map_err(io_err(path))?;
        if text.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&text, idx + 1).map_err(CorpusError::Line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chronology::Relationship;
    use crate::episode_pipeline::fixtures::episode;

    fn corpus(n: usize) -> Vec<Episode> {
        (0..n)
            .map(|i| {
                let mut ep = episode(&format!("ep{i}"), Relationship::ALL[i % 10], 2 + i % 5, 1 + i % 7);
                ep.sessions[1].summary = Some(format!("Summary {i}."));
                ep
            })
            .collect()
    }

    #[test]
    fn round_trip_and_byte_stability() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["c.jsonl", "c.jsonl.gz"] {
            let path = dir.path().join(name);
            let eps = corpus(10);
            write_corpus(&eps, &path).unwrap();
            let back = read_corpus(&path, true).unwrap();
            assert_eq!(back.episodes, eps);
            assert!(back.errors.is_empty());
        }
        let first = dir.path().join("a.jsonl");
        let second = dir.path().join("b.jsonl");
        write_corpus(&corpus(10), &first).unwrap();
        let loaded = read_corpus(&first, true).unwrap().episodes;
        write_corpus(&loaded, &second).unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    }

    #[test]
    fn canonical_key_order() {
        let mut buf = Vec::new();
        write_jsonl_to(&corpus(1), &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert!(line.starts_with(r#"{"id":"ep0","relationship":"Classmates","sessions":[{"index":1,"event":{"id":"ep0-ev1","text":"Event 1 of ep0."},"interval":null,"turns":[{"speaker":"A","role":"Classmate A","text":"word"}"#));
        assert!(line
            .trim_end()
            .ends_with(r#""provenance":{"backend":"fixture","seed":0}}"#));
    }

    #[test]
    fn truncated_line() {
        let mut buf = Vec::new();
        write_jsonl_to(&corpus(3), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let broken = format!(
            "{}\n{}\n{}\n",
            lines[0],
            &lines[1][..lines[1].len() / 2],
            lines[2]
        );

        let err = read_corpus_from(broken.as_bytes(), true).unwrap_err();
        assert!(
            matches!(err, CorpusError::Line(LineError { line: 2, .. })),
            "{err}"
        );

        let lenient = read_corpus_from(broken.as_bytes(), false).unwrap();
        assert_eq!(lenient.episodes.len(), 2);
        assert_eq!(lenient.errors.len(), 1);
        assert_eq!(lenient.errors[0].line, 2);
    }

    #[test]
    fn first_failing_field_is_named() {
        let mut value = serde_json::to_value(&corpus(1)[0]).unwrap();
        value["sessions"][2]["turns"][1]["speaker"] = "C".into();
        let err = read_corpus_from(format!("{value}\n").as_bytes(), true).unwrap_err();
        match err {
            CorpusError::Line(e) => assert_eq!(e.field, "sessions[2].turns[1].speaker"),
            other => panic!("{other}"),
        }

        let mut value = serde_json::to_value(&corpus(1)[0]).unwrap();
        value["sessions"][3]["interval"] = serde_json::Value::Null;
        match read_corpus_from(format!("{value}\n").as_bytes(), true).unwrap_err() {
            CorpusError::Line(e) => assert_eq!(e.field, "sessions[3].interval"),
            other => panic!("{other}"),
        }
    }
}
