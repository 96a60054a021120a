//! On-disk persistence for datasets, trained models, sweep manifests and
//! remedy results.
//!
//! Layout under the store root:
//!
//! ```text
//! datasets/{dataset_id}/schema.json
//! datasets/{dataset_id}/data.csv
//! datasets/{dataset_id}/sensitive/{tag}.json
//! models/{record_id}.model.json
//! models/{record_id}.meta.json
//! sweeps/{sweep_id}.json
//! remedies/{remedy_id}.json
//! themis/{themis_id}.json
//! ```
//!
//! Model files are canonical JSON (sorted keys, every float written with 17
//! significant digits) and record ids start with a prefix of the SHA-256 of
//! the model together with its lineage, so identical content always lands on
//! the same id. Every write goes to a temporary file that is then renamed
//! into place.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audit::ThemisRun;
use crate::dataset::{load_dataset, Dataset, DatasetError, DatasetSchema, MaskSpec, SensitiveSpec};
use crate::models::{ModelKind, TrainedModel};
use crate::remedy::RemedyResult;
use crate::sweep::{ModelRecord, SweepManifest};

/// Hex characters of the content hash kept in a record id.
pub const HASH_PREFIX_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("record `{id}` is corrupt: {reason}")]
    CorruptRecord { id: String, reason: String },
    #[error("invalid id `{0}`")]
    InvalidId(String),
    #[error("a remedy for `{0}` is already running")]
    Busy(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Json { path: PathBuf, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Serializes `value` as canonical JSON: object keys sorted, no whitespace,
/// integers verbatim and floats in `{:.16e}` form.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("model types serialize to JSON");
    let mut out = String::new();
    write_canonical(&v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let f = n.as_f64().expect("f64 number");
                let _ = write!(out, "{f:.16e}");
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
    }
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Where a model came from: the record it was remedied from and the mask
/// that was applied, both absent for models trained on raw data.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Lineage<'a> {
    pub parent: Option<&'a str>,
    pub mask: Option<&'a MaskSpec>,
}

/// Full SHA-256 over the canonical form of the model and its provenance.
pub fn content_hash(
    dataset_id: &str,
    sensitive: &str,
    lineage: &Lineage<'_>,
    model: &TrainedModel,
) -> String {
    let body = serde_json::json!({
        "dataset_id": dataset_id,
        "sensitive": sensitive,
        "lineage": lineage,
        "model": model,
    });
    sha256_hex(canonical_json(&body).as_bytes())
}

/// `{hash prefix}-{kind}-{dataset}`, with the dataset id reduced to file-safe
/// characters.
pub fn record_id(hash: &str, kind: ModelKind, dataset_id: &str) -> String {
    let ds: String = dataset_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    format!("{}-{}-{}", &hash[..HASH_PREFIX_LEN], kind.short(), ds)
}

/// Record id a model would get when saved with this provenance.
pub fn id_for(record: &ModelRecord, model: &TrainedModel) -> String {
    let hash = content_hash(
        &record.dataset_id,
        &record.sensitive,
        &record.lineage(),
        model,
    );
    record_id(&hash, model.kind(), &record.dataset_id)
}

fn check_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

/// Filter for [`Store::list_records`]; `None` fields match anything.
#[derive(Debug, Clone, Default)]
pub struct RecordFilter {
    pub dataset: Option<String>,
    pub kind: Option<ModelKind>,
    pub sensitive: Option<String>,
}

impl RecordFilter {
    fn matches(&self, r: &ModelRecord) -> bool {
        self.dataset.as_ref().is_none_or(|d| *d == r.dataset_id)
            && self.kind.is_none_or(|k| k == r.kind)
            && self.sensitive.as_ref().is_none_or(|s| *s == r.sensitive)
    }
}

/// Handle on a store directory. Cheap to clone; clones share the remedy
/// guard set.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    running: Arc<Mutex<HashSet<String>>>,
}

/// Held while a remedy of `id` runs; releases the slot on drop.
#[derive(Debug)]
pub struct RemedyGuard {
    id: String,
    running: Arc<Mutex<HashSet<String>>>,
}

impl Drop for RemedyGuard {
    fn drop(&mut self) {
        self.running
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(&self.id);
    }
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["datasets", "models", "sweeps", "remedies", "themis"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|source| StoreError::Io { path: p, source })?;
        }
        Ok(Self {
            root,
            running: Arc::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_atomic(&self, path: &Path, contents: &[u8]) -> Result<(), StoreError> {
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let dir = path.parent().expect("store paths have a parent");
        fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(contents).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    fn read(&self, path: &Path, kind: &'static str, id: &str) -> Result<String, StoreError> {
        fs::read_to_string(path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                StoreError::NotFound {
                    kind,
                    id: id.to_string(),
                }
            } else {
                StoreError::Io {
                    path: path.to_path_buf(),
                    source,
                }
            }
        })
    }

    fn read_json<T: DeserializeOwned>(
        &self,
        path: &Path,
        kind: &'static str,
        id: &str,
    ) -> Result<T, StoreError> {
        let text = self.read(path, kind, id)?;
        serde_json::from_str(&text).map_err(|e| StoreError::Json {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    fn write_json<T: Serialize + ?Sized>(&self, path: &Path, v: &T) -> Result<(), StoreError> {
        let text = serde_json::to_string_pretty(v).expect("store types serialize to JSON");
        self.write_atomic(path, text.as_bytes())
    }

    fn list_dir(&self, sub: &str, suffix: &str) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join(sub);
        let entries = fs::read_dir(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                if suffix.is_empty() {
                    e.file_type().ok()?.is_dir().then_some(name)
                } else {
                    name.strip_suffix(suffix).map(str::to_string)
                }
            })
            .collect();
        ids.sort();
        Ok(ids)
    }

    // datasets

    fn dataset_dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        check_id(id)?;
        Ok(self.root.join("datasets").join(id))
    }

    pub fn save_dataset(&self, ds: &Dataset) -> Result<(), StoreError> {
        let dir = self.dataset_dir(ds.id())?;
        self.write_json(&dir.join("schema.json"), ds.schema())?;
        self.write_atomic(&dir.join("data.csv"), ds.to_csv().as_bytes())
    }

    pub fn load_schema(&self, id: &str) -> Result<DatasetSchema, StoreError> {
        let dir = self.dataset_dir(id)?;
        self.read_json(&dir.join("schema.json"), "dataset", id)
    }

    pub fn load_dataset(&self, id: &str) -> Result<Dataset, StoreError> {
        let schema = self.load_schema(id)?;
        let dir = self.dataset_dir(id)?;
        let csv = self.read(&dir.join("data.csv"), "dataset", id)?;
        Ok(load_dataset(&csv, schema)?)
    }

    pub fn list_datasets(&self) -> Result<Vec<String>, StoreError> {
        self.list_dir("datasets", "")
    }

    /// Saves a sensitive spec under `tag` (conventionally the feature name).
    pub fn save_sensitive(
        &self,
        dataset_id: &str,
        tag: &str,
        spec: &SensitiveSpec,
    ) -> Result<(), StoreError> {
        check_id(tag)?;
        let dir = self.dataset_dir(dataset_id)?;
        self.write_json(&dir.join("sensitive").join(format!("{tag}.json")), spec)
    }

    pub fn load_sensitive(&self, dataset_id: &str, tag: &str) -> Result<SensitiveSpec, StoreError> {
        check_id(tag)?;
        let dir = self.dataset_dir(dataset_id)?;
        let path = dir.join("sensitive").join(format!("{tag}.json"));
        self.read_json(&path, "sensitive spec", &format!("{dataset_id}/{tag}"))
    }

    pub fn list_sensitive(&self, dataset_id: &str) -> Result<Vec<String>, StoreError> {
        let dir = self.dataset_dir(dataset_id)?.join("sensitive");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let rel = dir.strip_prefix(&self.root).expect("under root");
        self.list_dir(rel.to_str().expect("utf-8 store path"), ".json")
    }

    // models

    fn model_paths(&self, id: &str) -> Result<(PathBuf, PathBuf), StoreError> {
        check_id(id)?;
        let dir = self.root.join("models");
        Ok((
            dir.join(format!("{id}.model.json")),
            dir.join(format!("{id}.meta.json")),
        ))
    }

    /// Persists a model and its metadata. The record id is recomputed from
    /// the content, written into the stored metadata and returned.
    pub fn save_record(
        &self,
        record: &ModelRecord,
        model: &TrainedModel,
    ) -> Result<String, StoreError> {
        let id = id_for(record, model);
        let meta = ModelRecord {
            record_id: id.clone(),
            ..record.clone()
        };
        let (model_path, meta_path) = self.model_paths(&id)?;
        self.write_atomic(&model_path, canonical_json(model).as_bytes())?;
        self.write_atomic(&meta_path, canonical_json(&meta).as_bytes())?;
        Ok(id)
    }

    /// Loads a record and its model, verifying the content hash.
    pub fn load_record(&self, id: &str) -> Result<(ModelRecord, TrainedModel), StoreError> {
        let (model_path, meta_path) = self.model_paths(id)?;
        let record: ModelRecord = self.read_json(&meta_path, "model", id)?;
        let model: TrainedModel = self.read_json(&model_path, "model", id)?;
        let corrupt = |reason: String| StoreError::CorruptRecord {
            id: id.to_string(),
            reason,
        };
        if record.record_id != id {
            return Err(corrupt(format!("metadata names `{}`", record.record_id)));
        }
        let expected = id_for(&record, &model);
        if expected != id {
            return Err(corrupt(format!("content hashes to `{expected}`")));
        }
        Ok((record, model))
    }

    pub fn load_meta(&self, id: &str) -> Result<ModelRecord, StoreError> {
        let (_, meta_path) = self.model_paths(id)?;
        self.read_json(&meta_path, "model", id)
    }

    pub fn has_record(&self, id: &str) -> bool {
        self.model_paths(id).is_ok_and(|(m, _)| m.is_file())
    }

    /// Metadata of every stored record matching `filter`, ordered by id.
    pub fn list_records(&self, filter: &RecordFilter) -> Result<Vec<ModelRecord>, StoreError> {
        let mut out = Vec::new();
        for id in self.list_dir("models", ".meta.json")? {
            let r = self.load_meta(&id)?;
            if filter.matches(&r) {
                out.push(r);
            }
        }
        Ok(out)
    }

    // sweeps and remedies

    pub fn save_sweep(&self, manifest: &SweepManifest) -> Result<(), StoreError> {
        check_id(&manifest.sweep_id)?;
        let path = self
            .root
            .join("sweeps")
            .join(format!("{}.json", manifest.sweep_id));
        self.write_json(&path, manifest)
    }

    pub fn load_sweep(&self, id: &str) -> Result<SweepManifest, StoreError> {
        check_id(id)?;
        self.read_json(&self.root.join("sweeps").join(format!("{id}.json")), "sweep", id)
    }

    pub fn list_sweeps(&self) -> Result<Vec<String>, StoreError> {
        self.list_dir("sweeps", ".json")
    }

    pub fn save_remedy(&self, result: &RemedyResult) -> Result<(), StoreError> {
        check_id(&result.remedy_id)?;
        let path = self
            .root
            .join("remedies")
            .join(format!("{}.json", result.remedy_id));
        self.write_json(&path, result)
    }

    pub fn load_remedy(&self, id: &str) -> Result<RemedyResult, StoreError> {
        check_id(id)?;
        self.read_json(
            &self.root.join("remedies").join(format!("{id}.json")),
            "remedy",
            id,
        )
    }

    pub fn save_themis(&self, run: &ThemisRun) -> Result<(), StoreError> {
        check_id(&run.themis_id)?;
        let path = self.root.join("themis").join(format!("{}.json", run.themis_id));
        self.write_json(&path, run)
    }

    pub fn load_themis(&self, id: &str) -> Result<ThemisRun, StoreError> {
        check_id(id)?;
        self.read_json(&self.root.join("themis").join(format!("{id}.json")), "themis run", id)
    }

    /// Claims the remedy slot of a base record; fails with `Busy` while
    /// another remedy of the same record holds it.
    pub fn begin_remedy(&self, base_id: &str) -> Result<RemedyGuard, StoreError> {
        let mut running = self.running.lock().unwrap_or_else(|e| e.into_inner());
        if !running.insert(base_id.to_string()) {
            return Err(StoreError::Busy(base_id.to_string()));
        }
        Ok(RemedyGuard {
            id: base_id.to_string(),
            running: Arc::clone(&self.running),
        })
    }
}
