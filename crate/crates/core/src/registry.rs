//! Filesystem-backed registry of RI records, significant properties and
//! context entries.
//!
//! Layout under the store root:
//!
//! ```text
//! records/<record_id>/<version>.json   one file per record version
//! properties/<property_id>.json
//! contexts/<entry_id>.json
//! audit.log                            one JSON object per line
//! .lock                                advisory single-writer lock
//! ```
//!
//! The in-memory index is rebuilt from these files on open, so the data
//! stays readable without this software.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixity::{sha256_hex, slash_path, write_atomic};
use crate::model::{
    builtin_element_defs, validate_record, BimcoreCategory, ContextEntry, Payload, PropertyTarget,
    RecordId, RecordStatus, RelatedRecord, Relation, RiRecord, SignificantProperty,
    ValidationReport,
};

pub const EXPORT_MANIFEST: &str = "export-manifest.json";
const RECORDS_DIR: &str = "records";
const PROPERTIES_DIR: &str = "properties";
const CONTEXTS_DIR: &str = "contexts";
const AUDIT_LOG: &str = "audit.log";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum StoreError {
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
    #[error("record rejected:\n{0}")]
    Validation(ValidationReport),
    #[error("significant property rejected: {}", .0.join("; "))]
    InvalidProperty(Vec<String>),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("store {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("store is open read-only")]
    ReadOnly,
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("checksum mismatch for {path}")]
    ChecksumMismatch { path: String },
    #[error("bad export manifest: {0}")]
    BadManifest(String),
    #[error("store is not healthy ({} issues)", .0.issues.len())]
    Unhealthy(IntegrityReport),
}

type Result<T, E = StoreError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| StoreError::Json {
        path: path.to_owned(),
        source,
    })
}

/// The five repository roles, each with the content elements it reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Producer,
    Consumer,
    ArchiveManagement,
    ComputerExpert,
    Historian,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Self::Producer,
        Self::Consumer,
        Self::ArchiveManagement,
        Self::ComputerExpert,
        Self::Historian,
    ];

    pub fn element_ids(self) -> &'static [u8] {
        match self {
            Self::Producer => &[1, 2, 3, 4, 5, 14],
            Self::Consumer => &[7, 8, 9, 10, 11, 12, 13, 14, 15, 18, 19, 20, 21, 22],
            Self::ArchiveManagement => &[4, 5, 6, 16, 17, 22],
            Self::ComputerExpert => &[6, 7, 8, 9, 10, 13, 15, 16, 17, 18],
            Self::Historian => &[15, 19, 23],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Producer => "producer",
            Self::Consumer => "consumer",
            Self::ArchiveManagement => "archive-management",
            Self::ComputerExpert => "computer-expert",
            Self::Historian => "historian",
        }
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|r| r.as_str()).collect();
                format!("unknown role {s:?}; expected one of {}", names.join(", "))
            })
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Additional conjunctive constraints on a view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryFilter {
    Category(BimcoreCategory),
    Elements(Vec<u8>),
    HasRelation(Relation),
    Status(RecordStatus),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryView {
    pub role: Role,
    #[serde(default)]
    pub filters: Vec<QueryFilter>,
}

impl From<Role> for QueryView {
    fn from(role: Role) -> Self {
        Self {
            role,
            filters: Vec::new(),
        }
    }
}

impl QueryView {
    /// Elements a record must have a value for to show up in this view.
    pub fn element_scope(&self) -> BTreeSet<u8> {
        let mut scope: BTreeSet<u8> = self.role.element_ids().iter().copied().collect();
        for f in &self.filters {
            match f {
                QueryFilter::Category(c) => scope.retain(|id| c.element_ids().contains(id)),
                QueryFilter::Elements(ids) => scope.retain(|id| ids.contains(id)),
                _ => {}
            }
        }
        scope
    }

    /// Evaluates the view against a full record. Returns the matched
    /// element ids, or `None` when the record is not in the view.
    pub fn matches_record(&self, record: &RiRecord, terms: &[String]) -> Option<Vec<u8>> {
        for f in &self.filters {
            match f {
                QueryFilter::HasRelation(rel)
                    if !record.related_records.iter().any(|r| r.relation == *rel) =>
                {
                    return None
                }
                QueryFilter::Status(s) if record.status != *s => return None,
                _ => {}
            }
        }
        let scope = self.element_scope();
        let matched: BTreeSet<u8> = record
            .elements
            .iter()
            .map(|v| v.element_id)
            .filter(|id| scope.contains(id))
            .collect();
        if matched.is_empty() {
            return None;
        }
        let mut haystack =
            format!("{}\n{}", record.format_name, record.format_version_label).to_lowercase();
        for v in record
            .elements
            .iter()
            .filter(|v| scope.contains(&v.element_id))
        {
            for t in v.payload.texts() {
                haystack.push('\n');
                haystack.push_str(&t.to_lowercase());
            }
        }
        terms
            .iter()
            .all(|t| haystack.contains(t.as_str()))
            .then(|| matched.into_iter().collect())
    }
}

/// Splits free text into lowercase search terms.
pub fn search_terms(text: Option<&str>) -> Vec<String> {
    text.map(|t| t.split_whitespace().map(str::to_lowercase).collect())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub record_id: RecordId,
    pub format_name: String,
    pub format_version_label: String,
    pub version: u64,
    pub status: RecordStatus,
    pub matched_elements: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp: DateTime<Utc>,
    pub actor: String,
    pub action: String,
    pub record_id: RecordId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "kebab-case")]
pub enum IntegrityIssue {
    DanglingRelation {
        record_id: RecordId,
        version: u64,
        relation: Relation,
        target: RecordId,
    },
    OrphanedProperty {
        property_id: RecordId,
        missing_record: RecordId,
    },
    IndexMismatch {
        record_id: String,
        detail: String,
    },
    UnreadableFile {
        path: String,
        detail: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub issues: Vec<IntegrityIssue>,
}

impl IntegrityReport {
    pub fn is_healthy(&self) -> bool {
        self.issues.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Cached view of a record's latest version, used by queries and RI
/// closure traversal without touching the disk.
#[derive(Debug, Clone)]
struct IndexEntry {
    versions: Vec<u64>,
    latest_published: Option<u64>,
    status: RecordStatus,
    format_name: String,
    format_version_label: String,
    self_describing: bool,
    related: Vec<RelatedRecord>,
    /// Lowercased text per element id.
    texts: BTreeMap<u8, String>,
    signature_ids: BTreeSet<String>,
}

impl IndexEntry {
    fn latest(&self) -> u64 {
        *self
            .versions
            .last()
            .expect("index entries always hold a version")
    }

    fn refresh_from(&mut self, record: &RiRecord) {
        self.status = record.status;
        self.format_name = record.format_name.clone();
        self.format_version_label = record.format_version_label.clone();
        self.self_describing = record.self_describing;
        self.related = record.related_records.clone();
        self.texts.clear();
        self.signature_ids.clear();
        for v in &record.elements {
            let text = self.texts.entry(v.element_id).or_default();
            for t in v.payload.texts() {
                text.push('\n');
                text.push_str(&t.to_lowercase());
            }
            if let (16, Payload::ToolDescription(tool)) = (v.element_id, &v.payload) {
                self.signature_ids
                    .extend(tool.signature_ids.iter().cloned());
            }
        }
    }
}

#[derive(Debug)]
pub struct RegistryStore {
    root: PathBuf,
    index: BTreeMap<RecordId, IndexEntry>,
    properties: BTreeMap<RecordId, SignificantProperty>,
    contexts: BTreeMap<RecordId, ContextEntry>,
    /// Held for the lifetime of a writable store.
    lock: Option<File>,
}

/// One record version file found while scanning the records directory.
struct ScannedVersion {
    record_dir: String,
    version: u64,
    path: PathBuf,
}

fn scan_record_files(root: &Path) -> Result<(Vec<ScannedVersion>, Vec<IntegrityIssue>)> {
    let dir = root.join(RECORDS_DIR);
    let mut found = Vec::new();
    let mut problems = Vec::new();
    if !dir.exists() {
        return Ok((found, problems));
    }
    let mut record_dirs: Vec<_> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .collect::<io::Result<_>>()
        .map_err(io_err(&dir))?;
    record_dirs.sort_by_key(|e| e.file_name());
    for rd in record_dirs {
        let name = rd.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        let path = rd.path();
        if !path.is_dir() {
            problems.push(IntegrityIssue::UnreadableFile {
                path: format!("{RECORDS_DIR}/{name}"),
                detail: "expected a record directory".into(),
            });
            continue;
        }
        for vf in fs::read_dir(&path).map_err(io_err(&path))? {
            let vf = vf.map_err(io_err(&path))?;
            let file = vf.file_name().to_string_lossy().into_owned();
            if file.starts_with('.') {
                continue;
            }
            match file
                .strip_suffix(".json")
                .and_then(|v| v.parse::<u64>().ok())
            {
                Some(version) if version > 0 => found.push(ScannedVersion {
                    record_dir: name.clone(),
                    version,
                    path: vf.path(),
                }),
                _ => problems.push(IntegrityIssue::UnreadableFile {
                    path: format!("{RECORDS_DIR}/{name}/{file}"),
                    detail: "not a <version>.json file".into(),
                }),
            }
        }
    }
    found.sort_by(|a, b| (&a.record_dir, a.version).cmp(&(&b.record_dir, b.version)));
    Ok((found, problems))
}

impl RegistryStore {
    /// Opens (creating if needed) a store for reading and writing. Only one
    /// writer may hold a store at a time.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_owned();
        for sub in [RECORDS_DIR, PROPERTIES_DIR, CONTEXTS_DIR] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let lock_path = root.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(root)),
            Err(fs::TryLockError::Error(e)) => return Err(io_err(&lock_path)(e)),
        }
        let mut store = Self {
            root,
            index: BTreeMap::new(),
            properties: BTreeMap::new(),
            contexts: BTreeMap::new(),
            lock: Some(lock),
        };
        store.refresh()?;
        Ok(store)
    }

    /// Opens a store without taking the writer lock. Mutating calls fail
    /// with [`StoreError::ReadOnly`].
    pub fn open_read_only(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_owned();
        if !root.is_dir() {
            return Err(StoreError::NotFound(format!(
                "store root {}",
                root.display()
            )));
        }
        let mut store = Self {
            root,
            index: BTreeMap::new(),
            properties: BTreeMap::new(),
            contexts: BTreeMap::new(),
            lock: None,
        };
        store.refresh()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn is_writable(&self) -> bool {
        self.lock.is_some()
    }

    /// Rebuilds the in-memory index from disk. Files that cannot be read are
    /// skipped here and reported by [`integrity_check`](Self::integrity_check).
    pub fn refresh(&mut self) -> Result<()> {
        let (scanned, _) = scan_record_files(&self.root)?;
        let mut versions: BTreeMap<RecordId, Vec<(u64, PathBuf)>> = BTreeMap::new();
        for s in scanned {
            if let Ok(id) = RecordId::new(s.record_dir) {
                versions.entry(id).or_default().push((s.version, s.path));
            }
        }
        let mut index = BTreeMap::new();
        for (id, list) in versions {
            let mut entry: Option<IndexEntry> = None;
            let mut latest_published = None;
            let mut good_versions = Vec::new();
            for (version, path) in &list {
                let Ok(record) = read_json::<RiRecord>(path) else {
                    continue;
                };
                if record.record_id != id || record.version != *version {
                    continue;
                }
                good_versions.push(*version);
                if record.status == RecordStatus::Published {
                    latest_published = Some(*version);
                }
                let e = entry.get_or_insert_with(|| IndexEntry {
                    versions: Vec::new(),
                    latest_published: None,
                    status: record.status,
                    format_name: String::new(),
                    format_version_label: String::new(),
                    self_describing: false,
                    related: Vec::new(),
                    texts: BTreeMap::new(),
                    signature_ids: BTreeSet::new(),
                });
                e.refresh_from(&record);
            }
            if let Some(mut e) = entry {
                e.versions = good_versions;
                e.latest_published = latest_published;
                index.insert(id, e);
            }
        }
        self.index = index;
        self.properties =
            self.load_dir::<SignificantProperty>(PROPERTIES_DIR, |p| &p.property_id)?;
        self.contexts = self.load_dir::<ContextEntry>(CONTEXTS_DIR, |c| &c.entry_id)?;
        Ok(())
    }

    fn load_dir<T: for<'de> Deserialize<'de>>(
        &self,
        sub: &str,
        key: impl Fn(&T) -> &RecordId,
    ) -> Result<BTreeMap<RecordId, T>> {
        let dir = self.root.join(sub);
        let mut out = BTreeMap::new();
        if !dir.exists() {
            return Ok(out);
        }
        for e in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let e = e.map_err(io_err(&dir))?;
            let name = e.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || !name.ends_with(".json") {
                continue;
            }
            if let Ok(item) = read_json::<T>(&e.path()) {
                out.insert(key(&item).clone(), item);
            }
        }
        Ok(out)
    }

    fn require_writable(&self) -> Result<()> {
        if self.is_writable() {
            Ok(())
        } else {
            Err(StoreError::ReadOnly)
        }
    }

    fn record_path(&self, id: &RecordId, version: u64) -> PathBuf {
        self.root
            .join(RECORDS_DIR)
            .join(id.as_str())
            .join(format!("{version}.json"))
    }

    pub fn record_ids(&self) -> BTreeSet<RecordId> {
        self.index.keys().cloned().collect()
    }

    pub fn record_count(&self) -> usize {
        self.index.len()
    }

    pub fn contains(&self, id: &RecordId) -> bool {
        self.index.contains_key(id)
    }

    pub fn versions(&self, id: &RecordId) -> Option<&[u64]> {
        self.index.get(id).map(|e| e.versions.as_slice())
    }

    pub fn latest_version(&self, id: &RecordId) -> Option<u64> {
        self.index.get(id).map(IndexEntry::latest)
    }

    pub fn latest_published_version(&self, id: &RecordId) -> Option<u64> {
        self.index.get(id).and_then(|e| e.latest_published)
    }

    /// `requires-ri` targets of the latest version of `id`.
    pub fn required_ri(&self, id: &RecordId) -> Option<Vec<RecordId>> {
        self.index.get(id).map(|e| {
            e.related
                .iter()
                .filter(|r| r.relation == Relation::RequiresRi)
                .map(|r| r.record_id.clone())
                .collect()
        })
    }

    /// Records whose latest version is tagged self-describing.
    pub fn default_baseline(&self) -> BTreeSet<RecordId> {
        self.index
            .iter()
            .filter(|(_, e)| e.self_describing)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Records with a published version whose element 16 lists `signature_id`.
    pub fn records_for_signature(&self, signature_id: &str) -> Vec<RecordId> {
        self.index
            .iter()
            .filter(|(_, e)| e.latest_published.is_some() && e.signature_ids.contains(signature_id))
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Records with a published version whose version label equals `label`
    /// (ASCII case-insensitive).
    pub fn records_with_version_label(&self, label: &str) -> Vec<RecordId> {
        self.index
            .iter()
            .filter(|(_, e)| {
                e.latest_published.is_some() && e.format_version_label.eq_ignore_ascii_case(label)
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Persists a new version of `record` and returns the assigned version.
    pub fn put_record(&mut self, mut record: RiRecord, actor: &str) -> Result<(RecordId, u64)> {
        self.require_writable()?;
        let existing = self.record_ids();
        let report = validate_record(&record, builtin_element_defs(), &existing);
        if !report.is_valid() {
            return Err(StoreError::Validation(report));
        }
        let id = record.record_id.clone();
        let version = match self.index.get(&id) {
            Some(e) => {
                let previous = self.get_record(&id, Some(e.latest()))?;
                record.created = previous.created;
                e.latest() + 1
            }
            None => 1,
        };
        record.version = version;
        record.modified = Utc::now();

        let dir = self.root.join(RECORDS_DIR).join(id.as_str());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = self.record_path(&id, version);
        if path.exists() {
            return Err(StoreError::Conflict(format!(
                "{id} version {version} already on disk"
            )));
        }
        let json = serde_json::to_vec_pretty(&record).expect("records always serialize");
        write_atomic(&path, &json).map_err(io_err(&path))?;
        if let Err(e) = self.append_audit(actor, "put-record", &id, Some(version)) {
            let _ = fs::remove_file(&path);
            return Err(e);
        }
        tracing::debug!(record = %id, version, "record stored");

        let entry = self.index.entry(id.clone()).or_insert_with(|| IndexEntry {
            versions: Vec::new(),
            latest_published: None,
            status: record.status,
            format_name: String::new(),
            format_version_label: String::new(),
            self_describing: false,
            related: Vec::new(),
            texts: BTreeMap::new(),
            signature_ids: BTreeSet::new(),
        });
        entry.versions.push(version);
        if record.status == RecordStatus::Published {
            entry.latest_published = Some(version);
        }
        entry.refresh_from(&record);
        Ok((id, version))
    }

    /// Reads a record version from disk; the latest when `version` is `None`.
    pub fn get_record(&self, id: &RecordId, version: Option<u64>) -> Result<RiRecord> {
        let version = match version {
            Some(v) => v,
            None => self.latest_on_disk(id)?,
        };
        let path = self.record_path(id, version);
        if !path.is_file() {
            return Err(StoreError::NotFound(format!(
                "record {id} version {version}"
            )));
        }
        read_json(&path)
    }

    /// Latest version as currently on disk, which may be newer than the
    /// index when another process is writing.
    fn latest_on_disk(&self, id: &RecordId) -> Result<u64> {
        let dir = self.root.join(RECORDS_DIR).join(id.as_str());
        let not_found = || StoreError::NotFound(format!("record {id}"));
        let entries = fs::read_dir(&dir).map_err(|_| not_found())?;
        entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_suffix(".json")?.parse::<u64>().ok()
            })
            .max()
            .ok_or_else(not_found)
    }

    pub fn get_latest_published(&self, id: &RecordId) -> Result<RiRecord> {
        let v = self
            .latest_published_version(id)
            .ok_or_else(|| StoreError::NotFound(format!("published version of {id}")))?;
        self.get_record(id, Some(v))
    }

    /// Summaries of the latest version of every record.
    pub fn list(&self) -> Vec<RecordSummary> {
        let mut out: Vec<RecordSummary> = self
            .index
            .iter()
            .map(|(id, e)| RecordSummary {
                record_id: id.clone(),
                format_name: e.format_name.clone(),
                format_version_label: e.format_version_label.clone(),
                version: e.latest(),
                status: e.status,
                matched_elements: e.texts.keys().copied().collect(),
            })
            .collect();
        sort_summaries(&mut out);
        out
    }

    /// Runs a role view over the latest version of every record.
    pub fn query(&self, view: &QueryView, text_terms: Option<&str>) -> Vec<RecordSummary> {
        let terms = search_terms(text_terms);
        let scope = view.element_scope();
        let mut out = Vec::new();
        'records: for (id, e) in &self.index {
            for f in &view.filters {
                match f {
                    QueryFilter::HasRelation(rel)
                        if !e.related.iter().any(|r| r.relation == *rel) =>
                    {
                        continue 'records
                    }
                    QueryFilter::Status(s) if e.status != *s => continue 'records,
                    _ => {}
                }
            }
            let matched: Vec<u8> = e
                .texts
                .keys()
                .copied()
                .filter(|k| scope.contains(k))
                .collect();
            if matched.is_empty() {
                continue;
            }
            let head = format!("{}\n{}", e.format_name, e.format_version_label).to_lowercase();
            let hit = terms.iter().all(|t| {
                head.contains(t.as_str()) || matched.iter().any(|k| e.texts[k].contains(t.as_str()))
            });
            if hit {
                out.push(RecordSummary {
                    record_id: id.clone(),
                    format_name: e.format_name.clone(),
                    format_version_label: e.format_version_label.clone(),
                    version: e.latest(),
                    status: e.status,
                    matched_elements: matched,
                });
            }
        }
        sort_summaries(&mut out);
        out
    }

    pub fn put_property(&mut self, property: SignificantProperty, actor: &str) -> Result<()> {
        self.require_writable()?;
        let problems = property.validate();
        if !problems.is_empty() {
            return Err(StoreError::InvalidProperty(problems));
        }
        let path = self
            .root
            .join(PROPERTIES_DIR)
            .join(format!("{}.json", property.property_id));
        let json = serde_json::to_vec_pretty(&property).expect("properties always serialize");
        write_atomic(&path, &json).map_err(io_err(&path))?;
        self.append_audit(actor, "put-property", &property.property_id, None)?;
        self.properties
            .insert(property.property_id.clone(), property);
        Ok(())
    }

    pub fn get_property(&self, id: &RecordId) -> Result<&SignificantProperty> {
        self.properties
            .get(id)
            .ok_or_else(|| StoreError::NotFound(format!("significant property {id}")))
    }

    pub fn properties(&self) -> impl Iterator<Item = &SignificantProperty> {
        self.properties.values()
    }

    pub fn put_context(&mut self, entry: ContextEntry, actor: &str) -> Result<()> {
        self.require_writable()?;
        let path = self
            .root
            .join(CONTEXTS_DIR)
            .join(format!("{}.json", entry.entry_id));
        let json = serde_json::to_vec_pretty(&entry).expect("context entries always serialize");
        write_atomic(&path, &json).map_err(io_err(&path))?;
        self.append_audit(actor, "put-context", &entry.entry_id, None)?;
        self.contexts.insert(entry.entry_id.clone(), entry);
        Ok(())
    }

    pub fn get_context(&self, id: &RecordId) -> Result<&ContextEntry> {
        self.contexts
            .get(id)
            .ok_or_else(|| StoreError::NotFound(format!("context entry {id}")))
    }

    pub fn contexts(&self) -> impl Iterator<Item = &ContextEntry> {
        self.contexts.values()
    }

    fn append_audit(
        &self,
        actor: &str,
        action: &str,
        id: &RecordId,
        version: Option<u64>,
    ) -> Result<()> {
        let entry = AuditEntry {
            timestamp: Utc::now(),
            actor: actor.to_owned(),
            action: action.to_owned(),
            record_id: id.clone(),
            version,
        };
        let path = self.root.join(AUDIT_LOG);
        let mut line = serde_json::to_string(&entry).expect("audit entries always serialize");
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))
    }

    pub fn audit_log(&self) -> Result<Vec<AuditEntry>> {
        let path = self.root.join(AUDIT_LOG);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let file = File::open(&path).map_err(io_err(&path))?;
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line).map_err(|source| StoreError::Json {
                    path: path.clone(),
                    source,
                })?,
            );
        }
        Ok(out)
    }

    /// Rescans the disk and compares it with the index, and checks
    /// referential integrity of published records and properties.
    pub fn integrity_check(&self) -> IntegrityReport {
        let mut issues = Vec::new();
        let (scanned, problems) = match scan_record_files(&self.root) {
            Ok(s) => s,
            Err(e) => {
                issues.push(IntegrityIssue::UnreadableFile {
                    path: RECORDS_DIR.into(),
                    detail: e.to_string(),
                });
                return IntegrityReport { issues };
            }
        };
        issues.extend(problems);

        let mut on_disk: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        let mut latest: BTreeMap<String, RiRecord> = BTreeMap::new();
        for s in &scanned {
            let rel = format!("{RECORDS_DIR}/{}/{}.json", s.record_dir, s.version);
            match read_json::<RiRecord>(&s.path) {
                Ok(rec) if rec.record_id.as_str() == s.record_dir && rec.version == s.version => {
                    on_disk
                        .entry(s.record_dir.clone())
                        .or_default()
                        .push(s.version);
                    latest.insert(s.record_dir.clone(), rec);
                }
                Ok(_) => issues.push(IntegrityIssue::UnreadableFile {
                    path: rel,
                    detail: "record_id or version does not match file location".into(),
                }),
                Err(e) => issues.push(IntegrityIssue::UnreadableFile {
                    path: rel,
                    detail: e.to_string(),
                }),
            }
        }

        for (id, e) in &self.index {
            match on_disk.get(id.as_str()) {
                None => issues.push(IntegrityIssue::IndexMismatch {
                    record_id: id.to_string(),
                    detail: "indexed but missing on disk".into(),
                }),
                Some(v) if *v != e.versions => issues.push(IntegrityIssue::IndexMismatch {
                    record_id: id.to_string(),
                    detail: format!("index has versions {:?}, disk has {:?}", e.versions, v),
                }),
                Some(_) => {}
            }
        }
        for id in on_disk.keys() {
            if !self.index.keys().any(|k| k.as_str() == id) {
                issues.push(IntegrityIssue::IndexMismatch {
                    record_id: id.clone(),
                    detail: "on disk but not indexed".into(),
                });
            }
        }

        for rec in latest.values().filter(|r| r.status != RecordStatus::Draft) {
            for rel in &rec.related_records {
                if !on_disk.contains_key(rel.record_id.as_str()) {
                    issues.push(IntegrityIssue::DanglingRelation {
                        record_id: rec.record_id.clone(),
                        version: rec.version,
                        relation: rel.relation,
                        target: rel.record_id.clone(),
                    });
                }
            }
        }

        for prop in self.properties.values() {
            for target in &prop.applies_to {
                if let PropertyTarget::Record { record_id } = target {
                    if !on_disk.contains_key(record_id.as_str()) {
                        issues.push(IntegrityIssue::OrphanedProperty {
                            property_id: prop.property_id.clone(),
                            missing_record: record_id.clone(),
                        });
                    }
                }
            }
        }
        IntegrityReport { issues }
    }

    /// Copies every record version, property and context entry to `dest`
    /// together with a checksum manifest.
    pub fn export_all(&self, dest: &Path) -> Result<ExportManifest> {
        let report = self.integrity_check();
        if !report.is_healthy() {
            return Err(StoreError::Unhealthy(report));
        }
        if dest.exists() && fs::read_dir(dest).map_err(io_err(dest))?.next().is_some() {
            return Err(StoreError::Conflict(format!(
                "export target {} is not empty",
                dest.display()
            )));
        }
        let mut files = Vec::new();
        for sub in [RECORDS_DIR, PROPERTIES_DIR, CONTEXTS_DIR] {
            let base = self.root.join(sub);
            if !base.exists() {
                continue;
            }
            for e in walkdir::WalkDir::new(&base).sort_by_file_name() {
                let e = e.map_err(|err| StoreError::Io {
                    path: base.clone(),
                    source: err.into(),
                })?;
                let hidden = e.file_name().to_string_lossy().starts_with('.');
                if e.file_type().is_file() && !hidden {
                    let rel = e
                        .path()
                        .strip_prefix(&self.root)
                        .expect("walk stays under root");
                    files.push(rel.to_owned());
                }
            }
        }
        let mut manifest = ExportManifest::default();
        for rel in files {
            let data = fs::read(self.root.join(&rel)).map_err(io_err(&rel))?;
            let target = dest.join(&rel);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::write(&target, &data).map_err(io_err(&target))?;
            manifest.entries.push(ManifestEntry {
                path: slash_path(&rel),
                sha256: sha256_hex(&data),
            });
        }
        manifest.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let mpath = dest.join(EXPORT_MANIFEST);
        fs::create_dir_all(dest).map_err(io_err(dest))?;
        let json = serde_json::to_vec_pretty(&manifest).expect("manifests always serialize");
        write_atomic(&mpath, &json).map_err(io_err(&mpath))?;
        Ok(manifest)
    }

    /// Imports an export produced by [`export_all`](Self::export_all).
    /// Every checksum is verified before anything is written; returns the
    /// number of records imported.
    pub fn import_all(&mut self, src: &Path, actor: &str) -> Result<usize> {
        self.require_writable()?;
        let manifest: ExportManifest = read_json(&src.join(EXPORT_MANIFEST))?;

        let mut records: Vec<(RiRecord, Vec<u8>)> = Vec::new();
        let mut properties = Vec::new();
        let mut contexts = Vec::new();
        for entry in &manifest.entries {
            let rel = Path::new(&entry.path);
            if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
                return Err(StoreError::BadManifest(format!(
                    "unsafe path {}",
                    entry.path
                )));
            }
            let path = src.join(rel);
            let data = fs::read(&path).map_err(io_err(&path))?;
            if sha256_hex(&data) != entry.sha256 {
                return Err(StoreError::ChecksumMismatch {
                    path: entry.path.clone(),
                });
            }
            let parse_err = |source| StoreError::Json {
                path: path.clone(),
                source,
            };
            let parts: Vec<&str> = entry.path.split('/').collect();
            match parts.as_slice() {
                [RECORDS_DIR, dir, file] => {
                    let record: RiRecord = serde_json::from_slice(&data).map_err(parse_err)?;
                    if record.record_id.as_str() != *dir
                        || format!("{}.json", record.version) != *file
                    {
                        return Err(StoreError::BadManifest(format!(
                            "{} does not match its content",
                            entry.path
                        )));
                    }
                    records.push((record, data));
                }
                [PROPERTIES_DIR, _] => properties
                    .push(serde_json::from_slice::<SignificantProperty>(&data).map_err(parse_err)?),
                [CONTEXTS_DIR, _] => {
                    contexts.push(serde_json::from_slice::<ContextEntry>(&data).map_err(parse_err)?)
                }
                _ => {
                    return Err(StoreError::BadManifest(format!(
                        "unexpected entry {}",
                        entry.path
                    )))
                }
            }
        }

        for (r, _) in &records {
            if self.record_path(&r.record_id, r.version).exists() {
                return Err(StoreError::Conflict(format!(
                    "{} version {} already exists",
                    r.record_id, r.version
                )));
            }
        }

        let mut imported = BTreeSet::new();
        for (r, data) in &records {
            let dir = self.root.join(RECORDS_DIR).join(r.record_id.as_str());
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let path = self.record_path(&r.record_id, r.version);
            write_atomic(&path, data).map_err(io_err(&path))?;
            self.append_audit(actor, "import-record", &r.record_id, Some(r.version))?;
            imported.insert(r.record_id.clone());
        }
        for p in properties {
            self.put_property(p, actor)?;
        }
        for c in contexts {
            self.put_context(c, actor)?;
        }
        self.refresh()?;
        Ok(imported.len())
    }
}

fn sort_summaries(out: &mut [RecordSummary]) {
    out.sort_by(|a, b| {
        a.format_name
            .cmp(&b.format_name)
            .then(b.version.cmp(&a.version))
            .then(a.record_id.cmp(&b.record_id))
    });
}
