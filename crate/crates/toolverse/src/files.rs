//! On-disk formats: spec corpora, JSON lines, the edge cache, the review
//! queue, persisted embedding indexes and trace files.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use toolverse_core::datagen::review::ReviewQueue;
use toolverse_core::graph::{EdgeCache, EdgeRecord};
use toolverse_core::llm::EmbeddingVector;
use toolverse_core::registry::RegistryError;
use toolverse_core::spec::{validate_spec, ValidationReport};
use toolverse_core::toolrag::{EmbeddingIndex, IndexError, IndexManifest};
use toolverse_core::{Registry, ReasoningTrace, ToolSpec};

/// Name of the corpus index inside a spec directory.
pub const INDEX_FILE: &str = "index.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VECTORS_FILE: &str = "vectors.f32";

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path} line {line}: {source}")]
    JsonLine {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Registry { path: PathBuf, source: RegistryError },
    #[error("{path}: {source}")]
    Index { path: PathBuf, source: IndexError },
    #[error("{path}: vector file holds {got} bytes, expected {expected}")]
    VectorSize { path: PathBuf, expected: usize, got: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FileError + '_ {
    move |source| FileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String, FileError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FileError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| FileError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_parent(path: &Path) -> Result<(), FileError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FileError> {
    ensure_parent(path)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), FileError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| FileError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FileError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| FileError::JsonLine {
            path: path.to_path_buf(),
            line: n + 1,
            source,
        })?);
    }
    Ok(out)
}

fn jsonl_bytes<T: Serialize>(path: &Path, items: &[T]) -> Result<Vec<u8>, FileError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|source| FileError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FileError> {
    write_atomic(path, &jsonl_bytes(path, items)?)
}

pub fn append_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FileError> {
    ensure_parent(path)?;
    let bytes = jsonl_bytes(path, items)?;
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))
}

// ---- spec corpus ----

pub fn read_spec(path: &Path) -> Result<ToolSpec, FileError> {
    read_json(path)
}

/// Spec paths listed by an index file, resolved against its directory.
pub fn index_paths(index: &Path) -> Result<Vec<PathBuf>, FileError> {
    let rel: Vec<PathBuf> = read_json(index)?;
    let base = index.parent().unwrap_or(Path::new("."));
    Ok(rel.into_iter().map(|p| base.join(p)).collect())
}

/// Registry of the Special tools plus every listed spec, validated.
pub fn load_registry(paths: &[PathBuf]) -> Result<Registry, FileError> {
    let mut registry = Registry::new();
    for p in paths {
        let spec = read_spec(p)?;
        registry.insert(spec).map_err(|source| FileError::Registry { path: p.clone(), source })?;
    }
    Ok(registry)
}

/// Loads `dir/index.json`.
pub fn load_registry_dir(dir: &Path) -> Result<Registry, FileError> {
    load_registry(&index_paths(&dir.join(INDEX_FILE))?)
}

/// Outcome of validating a corpus file by file.
#[derive(Debug, Default)]
pub struct CorpusReport {
    /// Tools in the resulting registry, Special tools included.
    pub valid: usize,
    pub problems: Vec<(PathBuf, String)>,
}

/// Checks every file of a corpus and collects all problems rather than
/// stopping at the first.
pub fn validate_corpus(dir: &Path) -> Result<CorpusReport, FileError> {
    let paths = index_paths(&dir.join(INDEX_FILE))?;
    let mut registry = Registry::new();
    let mut report = CorpusReport::default();
    for p in paths {
        let spec = match read_spec(&p) {
            Ok(s) => s,
            Err(e) => {
                report.problems.push((p, e.to_string()));
                continue;
            }
        };
        let ValidationReport { violations, .. } = validate_spec(&spec);
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
            report.problems.push((p, text.join("; ")));
            continue;
        }
        if let Err(e) = registry.insert(spec) {
            report.problems.push((p, e.to_string()));
        }
    }
    report.valid = registry.len();
    Ok(report)
}

/// Writes the API tools of `registry` as one file each plus an index.
pub fn save_registry_dir(registry: &Registry, dir: &Path) -> Result<(), FileError> {
    let mut index = Vec::new();
    for spec in registry.api_tools() {
        let rel = format!("{}.json", spec.name);
        write_json(&dir.join(&rel), spec)?;
        index.push(rel);
    }
    write_json(&dir.join(INDEX_FILE), &index)
}

// ---- edge cache ----

/// A missing cache file is an empty cache.
pub fn load_edge_cache(path: &Path) -> Result<EdgeCache, FileError> {
    if !path.exists() {
        return Ok(EdgeCache::new());
    }
    Ok(EdgeCache::from_records(read_jsonl::<EdgeRecord>(path)?))
}

pub fn append_edges(path: &Path, records: &[EdgeRecord]) -> Result<(), FileError> {
    if records.is_empty() {
        return Ok(());
    }
    append_jsonl(path, records)
}

// ---- review queue ----

pub fn load_review_queue(path: &Path) -> Result<ReviewQueue, FileError> {
    if !path.exists() {
        return Ok(ReviewQueue::default());
    }
    read_json(path)
}

pub fn save_review_queue(path: &Path, queue: &ReviewQueue) -> Result<(), FileError> {
    write_json(path, queue)
}

// ---- embedding index ----

/// `manifest.json` plus `vectors.f32`, row-major little-endian f32.
pub fn save_index(index: &EmbeddingIndex, dir: &Path) -> Result<(), FileError> {
    let mut bytes = Vec::with_capacity(index.len() * index.dimension() * 4);
    for v in index.vectors() {
        for x in v.values() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_atomic(&dir.join(VECTORS_FILE), &bytes)?;
    write_json(&dir.join(MANIFEST_FILE), &index.manifest())
}

pub fn load_index(dir: &Path) -> Result<EmbeddingIndex, FileError> {
    let manifest: IndexManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let path = dir.join(VECTORS_FILE);
    let mut bytes = Vec::new();
    File::open(&path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(&path))?;
    let expected = manifest.names.len() * manifest.dimension * 4;
    if bytes.len() != expected {
        return Err(FileError::VectorSize {
            path,
            expected,
            got: bytes.len(),
        });
    }
    let vectors: Vec<EmbeddingVector> = if manifest.dimension == 0 {
        Vec::new()
    } else {
        bytes
            .chunks_exact(manifest.dimension * 4)
            .map(|row| {
                EmbeddingVector(
                    row.chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect(),
                )
            })
            .collect()
    };
    EmbeddingIndex::from_parts(manifest.names, vectors, manifest.fingerprint).map_err(|source| FileError::Index {
        path: dir.to_path_buf(),
        source,
    })
}

// ---- traces ----

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `dir/<trace id>.json` and returns the path.
pub fn write_trace(dir: &Path, trace: &ReasoningTrace) -> Result<PathBuf, FileError> {
    let stem = if trace.trace_id.is_empty() { "trace".to_string() } else { file_stem(&trace.trace_id) };
    let path = dir.join(format!("{stem}.json"));
    write_atomic(&path, trace.to_json().as_bytes())?;
    Ok(path)
}

pub fn read_trace(path: &Path) -> Result<ReasoningTrace, FileError> {
    read_json(path)
}

/// Append-only JSON-lines output split across workers. Each worker writes
/// its own part file; [`ShardedJsonl::merge`] concatenates them into the
/// final file ordered by a key and removes the parts.
pub struct ShardedJsonl {
    target: PathBuf,
    parts: Vec<PathBuf>,
}

impl ShardedJsonl {
    pub fn new(target: &Path, workers: usize) -> Result<ShardedJsonl, FileError> {
        ensure_parent(target)?;
        let parts: Vec<PathBuf> = (0..workers.max(1))
            .map(|w| {
                let mut p = target.as_os_str().to_owned();
                p.push(format!(".part{w}"));
                PathBuf::from(p)
            })
            .collect();
        for p in &parts {
            File::create(p).map_err(io_err(p))?;
        }
        Ok(ShardedJsonl {
            target: target.to_path_buf(),
            parts,
        })
    }

    pub fn writer(&self, worker: usize) -> Result<PartWriter, FileError> {
        let path = self.parts[worker % self.parts.len()].clone();
        let f = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        Ok(PartWriter {
            path,
            out: BufWriter::new(f),
        })
    }

    pub fn merge<T, K, F>(self, key: F) -> Result<Vec<T>, FileError>
    where
        T: Serialize + DeserializeOwned,
        K: Ord,
        F: Fn(&T) -> K,
    {
        let mut all: Vec<T> = Vec::new();
        for p in &self.parts {
            all.extend(read_jsonl::<T>(p)?);
        }
        all.sort_by_key(|t| key(t));
        write_jsonl(&self.target, &all)?;
        for p in &self.parts {
            fs::remove_file(p).map_err(io_err(p))?;
        }
        Ok(all)
    }
}

pub struct PartWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl PartWriter {
    pub fn append<T: Serialize>(&mut self, item: &T) -> Result<(), FileError> {
        serde_json::to_writer(&mut self.out, item).map_err(|source| FileError::Json {
            path: self.path.clone(),
            source,
        })?;
        self.out.write_all(b"\n").map_err(io_err(&self.path))?;
        self.out.flush().map_err(io_err(&self.path))
    }
}
