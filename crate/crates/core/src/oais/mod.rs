//! Submission, archival and dissemination packages.
//!
//! Package directory layout:
//!
//! ```text
//! <aip>/objects/<payload path>
//! <aip>/metadata/aip.json
//! <aip>/metadata/context/<entry id>.json
//! <aip>/manifest-sha256.txt
//! ```
//!
//! The manifest lists every other file of the package as
//! `<lowercase sha-256>  <path>` lines sorted by path.

mod closure;
mod dip;
mod ingest;
mod verify;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::fixity::{sha256_file, slash_path, write_atomic};
use crate::ident::{IdentificationResult, StepHeader};
use crate::model::{ContextEntry, ContextKind, RecordId};
use crate::registry::StoreError;
use crate::report::VerificationReport;

pub use closure::{compute_ri_closure, RequirementEdge, RequirementGraph, RiClosure};
pub use dip::{
    build_dip, render_record, DipObject, DisseminationPackage, ObjectSelection, RiExcerpt,
    DIP_METADATA,
};
pub use ingest::{attach_significant_properties, ingest, IngestOptions};
pub use verify::{
    verify_aip, AipVerification, CHECK_FIXITY, CHECK_MANIFEST_COMPLETENESS, CHECK_MANIFEST_DIGESTS,
    CHECK_MANIFEST_FORMAT, CHECK_METADATA, CHECK_PROVENANCE, CHECK_RI_LINKS,
};

pub const MANIFEST: &str = "manifest-sha256.txt";
pub const OBJECTS_DIR: &str = "objects";
pub const METADATA_DIR: &str = "metadata";
pub const AIP_METADATA: &str = "metadata/aip.json";
pub const CONTEXT_DIR: &str = "metadata/context";
pub const SIP_METADATA: &str = "sip.json";
pub const SIP_PAYLOAD_DIR: &str = "payload";
pub const DIGEST_ALGORITHM: &str = "sha256";

pub const AGENT: &str = concat!("bimcore ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum PackageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("cannot read payload file {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("submission package {0} has no payload files")]
    EmptyPayload(PathBuf),
    #[error("unsupported file name {0:?}")]
    InvalidPath(PathBuf),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{0} already exists")]
    AlreadyExists(PathBuf),
    #[error("archival package failed verification ({} failed checks)", .0.failures().count())]
    NotVerified(VerificationReport),
    #[error("bad package manifest: {0}")]
    BadManifest(String),
    #[error("selection matches no objects")]
    EmptySelection,
    #[error("digest of {path} differs from the archival fixity record")]
    FixityMismatch { path: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T, E = PackageError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PackageError + '_ {
    move |source| PackageError::Io {
        path: path.to_owned(),
        source,
    }
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| PackageError::Json {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("package metadata serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

/// A context entry declared by the producer: either a reference to an entry
/// held in the registry or a project-specific entry carried inline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeclaredContext {
    Inline(ContextEntry),
    Reference { entry_id: RecordId },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct SipMetadata {
    #[serde(default)]
    sip_id: Option<String>,
    #[serde(default)]
    producer_metadata: BTreeMap<String, String>,
    #[serde(default)]
    declared_context: Vec<DeclaredContext>,
}

/// A submission package read from a directory.
///
/// If the directory has a `payload/` subdirectory, that is the payload;
/// otherwise every file except `sip.json` is. `sip.json` optionally carries
/// `sip_id`, `producer_metadata` and `declared_context`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmissionPackage {
    pub sip_id: String,
    pub payload_root: PathBuf,
    /// Payload files as `/`-separated paths relative to `payload_root`, sorted.
    pub payload: Vec<String>,
    pub producer_metadata: BTreeMap<String, String>,
    pub declared_context: Vec<DeclaredContext>,
}

fn valid_package_path(rel: &Path) -> Option<String> {
    let s = rel.to_str()?;
    if s.is_empty() || s.contains(['\n', '\r']) {
        return None;
    }
    Some(slash_path(rel))
}

/// Regular files below `root` as sorted `/`-separated relative paths.
pub(crate) fn list_files(root: &Path, skip: impl Fn(&str) -> bool) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_owned();
            PackageError::Unreadable {
                path,
                source: e
                    .into_io_error()
                    .unwrap_or_else(|| io::Error::other("filesystem loop")),
            }
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walk stays below root");
        let rel = valid_package_path(rel)
            .ok_or_else(|| PackageError::InvalidPath(entry.path().to_owned()))?;
        if !skip(&rel) {
            out.push(rel);
        }
    }
    out.sort();
    Ok(out)
}

impl SubmissionPackage {
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(SIP_METADATA);
        let meta: SipMetadata = if meta_path.is_file() {
            read_json(&meta_path)?
        } else {
            SipMetadata::default()
        };
        let nested = dir.join(SIP_PAYLOAD_DIR);
        let (payload_root, payload) = if nested.is_dir() {
            let files = list_files(&nested, |_| false)?;
            (nested, files)
        } else {
            let files = list_files(dir, |p| p == SIP_METADATA)?;
            (dir.to_owned(), files)
        };
        if payload.is_empty() {
            return Err(PackageError::EmptyPayload(dir.to_owned()));
        }
        let sip_id = meta.sip_id.unwrap_or_else(|| {
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "sip".to_owned())
        });
        Ok(Self {
            sip_id,
            payload_root,
            payload,
            producer_metadata: meta.producer_metadata,
            declared_context: meta.declared_context,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkedRecord {
    pub record_id: RecordId,
    pub version: u64,
    pub format_name: String,
    pub format_version_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordRef {
    pub record_id: RecordId,
    pub version: u64,
}

/// One data object of an archival package with its representation
/// information.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentInformation {
    /// Path below `objects/`.
    pub path: String,
    pub identification: IdentificationResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_header: Option<StepHeader>,
    /// Records describing the object's format directly.
    pub linked_records: Vec<LinkedRecord>,
    /// Every registry record reached from the linked records.
    pub ri_references: Vec<RecordRef>,
    pub closure: RiClosure,
    /// Set when no record could be linked or the closure has unresolved
    /// members.
    #[serde(rename = "unresolved-RI")]
    pub unresolved_ri: bool,
}

impl ContentInformation {
    /// Format name of the best identification match.
    pub fn format_name(&self) -> Option<&str> {
        self.identification.best().map(|m| m.format_name.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Ingest,
    AttachSignificantProperty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEvent {
    pub event: EventKind,
    pub timestamp: DateTime<Utc>,
    pub agent: String,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextLocation {
    /// Held in the registry and referenced by id.
    Registry,
    /// Copied into the package under `metadata/context/`.
    Inline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextLink {
    pub entry_id: RecordId,
    pub kind: ContextKind,
    pub location: ContextLocation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectIdentifier {
    pub path: String,
    pub identifier: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceInformation {
    pub aip_id: String,
    pub objects: Vec<ObjectIdentifier>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixityRecord {
    /// Path relative to the package root.
    pub path: String,
    pub algorithm: String,
    pub digest: String,
    pub size: u64,
}

/// Preservation description information.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreservationDescription {
    pub provenance: Vec<ProvenanceEvent>,
    pub context: Vec<ContextLink>,
    pub reference: ReferenceInformation,
    pub fixity: Vec<FixityRecord>,
}

/// Contents of `metadata/aip.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchivalPackage {
    pub aip_id: String,
    pub sip_id: String,
    pub created: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub producer_metadata: BTreeMap<String, String>,
    pub content_information: Vec<ContentInformation>,
    pub pdi: PreservationDescription,
    /// File holding the package inventory.
    pub packaging_manifest: String,
    pub significant_property_links: Vec<RecordId>,
}

impl ArchivalPackage {
    pub fn load(aip_dir: &Path) -> Result<Self> {
        read_json(&aip_dir.join(AIP_METADATA))
    }

    pub fn object(&self, path: &str) -> Option<&ContentInformation> {
        self.content_information.iter().find(|c| c.path == path)
    }

    pub fn fixity_for(&self, package_path: &str) -> Option<&FixityRecord> {
        self.pdi.fixity.iter().find(|f| f.path == package_path)
    }
}

pub(crate) fn object_path(rel: &str) -> String {
    format!("{OBJECTS_DIR}/{rel}")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestLine {
    pub digest: String,
    pub path: String,
}

pub fn format_manifest(lines: &[ManifestLine]) -> String {
    lines
        .iter()
        .map(|l| format!("{}  {}\n", l.digest, l.path))
        .collect()
}

/// Parses manifest text, rejecting anything but sorted, unique
/// `<64 lowercase hex>  <path>` lines terminated by LF.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestLine>, String> {
    if !text.is_empty() && !text.ends_with('\n') {
        return Err("missing final line feed".to_owned());
    }
    let mut out: Vec<ManifestLine> = Vec::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        let n = i + 1;
        if line.contains('\r') {
            return Err(format!("line {n}: carriage return"));
        }
        let (digest, path) = line
            .split_once("  ")
            .ok_or_else(|| format!("line {n}: expected '<digest>  <path>'"))?;
        if digest.len() != 64
            || !digest
                .bytes()
                .all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
        {
            return Err(format!("line {n}: digest is not 64 lowercase hex digits"));
        }
        if path.is_empty() {
            return Err(format!("line {n}: empty path"));
        }
        if let Some(prev) = out.last() {
            if prev.path.as_str() >= path {
                return Err(format!("line {n}: paths not sorted or duplicated"));
            }
        }
        out.push(ManifestLine {
            digest: digest.to_owned(),
            path: path.to_owned(),
        });
    }
    Ok(out)
}

/// Hashes every file of the package except the manifest and writes the
/// manifest.
pub(crate) fn write_manifest(root: &Path) -> Result<Vec<ManifestLine>> {
    let files = list_files(root, |p| p == MANIFEST)?;
    let mut lines = Vec::with_capacity(files.len());
    for rel in files {
        let path = root.join(&rel);
        let digest = sha256_file(&path).map_err(io_err(&path))?;
        lines.push(ManifestLine { digest, path: rel });
    }
    let path = root.join(MANIFEST);
    write_atomic(&path, format_manifest(&lines).as_bytes()).map_err(io_err(&path))?;
    Ok(lines)
}
