//! Dataset manifests: labeled image corpora with generator/family taxonomy.
//!
//! A manifest is a UTF-8 JSON Lines file. The first line is a header object
//! `{"name":…,"schema_version":1}`; every following non-blank line is one
//! [`ImageRecord`]. Record paths are relative to the manifest root (the
//! directory containing the manifest file), so a corpus can be moved as a
//! unit.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Ground-truth class. `Fake` is the positive class throughout the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: String,
    pub label: Label,
    pub generator: String,
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub root: PathBuf,
    pub records: Vec<ImageRecord>,
    pub schema_version: u32,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("missing header")]
    MissingHeader,
    #[error("malformed JSON at line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("missing required field `{field}` at line {line}")]
    MissingField { line: usize, field: &'static str },
    #[error("field `{field}` at line {line} must be a string")]
    FieldType { line: usize, field: &'static str },
    #[error("unknown label `{value}` at line {line}")]
    UnknownLabel { line: usize, value: String },
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    UnsupportedSchema { found: i64 },
    #[error("duplicate path at line {line}: {path}")]
    DuplicatePath { line: usize, path: String },
    #[error("invalid path at line {line}: {path} ({reason})")]
    InvalidPath {
        line: usize,
        path: String,
        reason: &'static str,
    },
    #[error("real record at line {line} must have generator \"none\" (found {generator:?})")]
    RealWithGenerator { line: usize, generator: String },
    #[error("manifest has no records")]
    NoRecords,
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DatasetManifest {
    pub fn n_real(&self) -> usize {
        self.records.iter().filter(|r| r.label == Label::Real).count()
    }

    pub fn n_fake(&self) -> usize {
        self.records.iter().filter(|r| r.label == Label::Fake).count()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &ImageRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    /// The family of the fake records when they all share one, `"mixed"` when
    /// they do not, and `"real"` for a corpus without fakes.
    pub fn dominant_family(&self) -> String {
        let families: std::collections::BTreeSet<&str> = self
            .records
            .iter()
            .filter(|r| r.label == Label::Fake)
            .map(|r| r.family.as_str())
            .collect();
        match families.len() {
            0 => "real".to_string(),
            1 => families.into_iter().next().unwrap_or_default().to_string(),
            _ => "mixed".to_string(),
        }
    }

    /// Serializes back to the JSONL wire form. Records keep file order.
    pub fn to_jsonl(&self) -> String {
        let header = serde_json::json!({"name": self.name, "schema_version": self.schema_version});
        let mut out = String::new();
        out.push_str(&header.to_string());
        out.push('\n');
        for record in &self.records {
            // ImageRecord serialization cannot fail: all fields are strings.
            out.push_str(&serde_json::to_string(record).unwrap_or_default());
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_jsonl())
    }
}

/// Parses a manifest from raw bytes. `root` is the directory record paths are
/// relative to.
pub fn parse_manifest(bytes: &[u8], root: impl Into<PathBuf>) -> Result<DatasetManifest, ManifestError> {
    let text = String::from_utf8_lossy(bytes);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (header_line, header_text) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or(ManifestError::MissingHeader)?;
    let header = parse_object(header_line, header_text)?;
    let name = string_field(&header, header_line, "name")?;
    let schema_version = match header.get("schema_version") {
        None => {
            return Err(ManifestError::MissingField {
                line: header_line,
                field: "schema_version",
            })
        }
        Some(v) => v.as_i64().ok_or(ManifestError::UnsupportedSchema { found: -1 })?,
    };
    if schema_version != i64::from(SCHEMA_VERSION) {
        return Err(ManifestError::UnsupportedSchema {
            found: schema_version,
        });
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let obj = parse_object(line, raw)?;
        let record = record_from_object(&obj, line)?;
        if !seen.insert(record.path.clone()) {
            return Err(ManifestError::DuplicatePath {
                line,
                path: record.path,
            });
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(ManifestError::NoRecords);
    }

    Ok(DatasetManifest {
        name,
        root: root.into(),
        records,
        schema_version: SCHEMA_VERSION,
    })
}

/// Reads a manifest file; its parent directory becomes the root.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let bytes = fs::read(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    parse_manifest(&bytes, root)
}

fn parse_object(line: usize, text: &str) -> Result<serde_json::Map<String, Value>, ManifestError> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(ManifestError::Json {
            line,
            message: "expected a JSON object".to_string(),
        }),
        Err(e) => Err(ManifestError::Json {
            line,
            message: e.to_string(),
        }),
    }
}

fn string_field(
    obj: &serde_json::Map<String, Value>,
    line: usize,
    field: &'static str,
) -> Result<String, ManifestError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(ManifestError::MissingField { line, field }),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ManifestError::FieldType { line, field }),
    }
}

fn record_from_object(obj: &serde_json::Map<String, Value>, line: usize) -> Result<ImageRecord, ManifestError> {
    let path = string_field(obj, line, "path")?;
    let label_text = string_field(obj, line, "label")?;
    let generator = string_field(obj, line, "generator")?;
    let family = string_field(obj, line, "family")?;
    let source = match obj.get("source") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            return Err(ManifestError::FieldType {
                line,
                field: "source",
            })
        }
    };

    let label = label_text
        .parse::<Label>()
        .map_err(|value| ManifestError::UnknownLabel { line, value })?;
    if let Err(reason) = check_relative_path(&path) {
        return Err(ManifestError::InvalidPath { line, path, reason });
    }
    if label == Label::Real && generator != "none" {
        return Err(ManifestError::RealWithGenerator { line, generator });
    }

    Ok(ImageRecord {
        path,
        label,
        generator,
        family,
        source,
    })
}

fn check_relative_path(path: &str) -> Result<(), &'static str> {
    if path.is_empty() {
        return Err("empty path");
    }
    let p = Path::new(path);
    for component in p.components() {
        match component {
            Component::ParentDir => return Err("parent-directory traversal"),
            Component::RootDir | Component::Prefix(_) => return Err("absolute path"),
            Component::CurDir | Component::Normal(_) => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IssueKind {
    Missing,
    Unreadable,
    Undecodable,
}

impl fmt::Display for IssueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IssueKind::Missing => "missing",
            IssueKind::Unreadable => "unreadable",
            IssueKind::Undecodable => "undecodable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationIssue {
    pub path: String,
    pub issue: IssueKind,
}

/// Checks that every record's file exists and decodes as PNG or JPEG.
/// Issues come back in record order; an empty report means the corpus is
/// fully usable.
pub fn validate_files(manifest: &DatasetManifest) -> Vec<ValidationIssue> {
    manifest
        .records
        .par_iter()
        .filter_map(|record| {
            check_file(&manifest.resolve(record)).map(|issue| ValidationIssue {
                path: record.path.clone(),
                issue,
            })
        })
        .collect()
}

fn check_file(path: &Path) -> Option<IssueKind> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Some(IssueKind::Missing),
        Err(_) => return Some(IssueKind::Unreadable),
    };
    match image::guess_format(&bytes) {
        Ok(image::ImageFormat::Png) | Ok(image::ImageFormat::Jpeg) => {}
        _ => return Some(IssueKind::Undecodable),
    }
    match image::load_from_memory(&bytes) {
        Ok(_) => None,
        Err(_) => Some(IssueKind::Undecodable),
    }
}

/// Partitions records by family, preserving record order inside each group.
/// Sub-manifests keep the parent's name and root.
pub fn group_by_family(manifest: &DatasetManifest) -> BTreeMap<String, DatasetManifest> {
    let mut groups: BTreeMap<String, DatasetManifest> = BTreeMap::new();
    for record in &manifest.records {
        groups
            .entry(record.family.clone())
            .or_insert_with(|| DatasetManifest {
                name: manifest.name.clone(),
                root: manifest.root.clone(),
                records: Vec::new(),
                schema_version: manifest.schema_version,
            })
            .records
            .push(record.clone());
    }
    groups
}
