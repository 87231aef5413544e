use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::fixity::{copy_hashed, sha256_file, write_atomic};
use crate::model::{element_def, RecordId, RiRecord};
use crate::registry::RegistryStore;

use super::{
    io_err, object_path, verify_aip, write_json, write_manifest, ArchivalPackage,
    ContentInformation, FixityRecord, PackageError, Result, DIGEST_ALGORITHM, OBJECTS_DIR,
};

pub const DIP_METADATA: &str = "metadata/dip.json";
pub const RI_DIR: &str = "ri";

/// Elements bundled for consumers of a dissemination package.
pub const CONSUMER_ELEMENTS: [u8; 7] = [1, 2, 7, 11, 18, 19, 20];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "select", rename_all = "kebab-case")]
pub enum ObjectSelection {
    All,
    /// Case-insensitive match on the identified format name, a linked
    /// record's format name, or its version label.
    Format {
        format: String,
    },
    Paths {
        paths: Vec<String>,
    },
}

impl ObjectSelection {
    pub fn matches(&self, object: &ContentInformation) -> bool {
        match self {
            Self::All => true,
            Self::Format { format } => {
                object
                    .format_name()
                    .is_some_and(|f| f.eq_ignore_ascii_case(format))
                    || object.linked_records.iter().any(|r| {
                        r.format_name.eq_ignore_ascii_case(format)
                            || r.format_version_label.eq_ignore_ascii_case(format)
                    })
            }
            Self::Paths { paths } => paths.contains(&object.path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiExcerpt {
    pub record_id: RecordId,
    pub version: u64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DipObject {
    /// Path below `objects/`.
    pub path: String,
    pub sha256: String,
    pub size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_name: Option<String>,
    /// Paths of the renderings describing this object's formats.
    pub ri_excerpts: Vec<String>,
}

/// Contents of `metadata/dip.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisseminationPackage {
    pub dip_id: String,
    pub source_aip_id: String,
    pub created: DateTime<Utc>,
    pub selection: ObjectSelection,
    pub objects: Vec<DipObject>,
    pub ri_excerpts: Vec<RiExcerpt>,
    pub fixity: Vec<FixityRecord>,
}

impl DisseminationPackage {
    pub fn load(dip_dir: &Path) -> Result<Self> {
        super::read_json(&dip_dir.join(DIP_METADATA))
    }
}

/// Plain-text rendering of the consumer-facing elements of `record`.
pub fn render_record(record: &RiRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} (record {}, version {})",
        record.format_name, record.format_version_label, record.record_id, record.version
    );
    let _ = writeln!(out, "status: {}", record.status.as_str());
    for id in CONSUMER_ELEMENTS {
        let values: Vec<_> = record.values_for(id).collect();
        if values.is_empty() {
            continue;
        }
        let name = element_def(id).map(|d| d.name).unwrap_or("unknown element");
        let _ = writeln!(out, "\n[{id}] {name}");
        for v in values {
            let _ = write!(out, "  - {}", v.payload.texts().join(" | "));
            if let Some(lang) = &v.language {
                let _ = write!(out, " ({lang})");
            }
            out.push('\n');
        }
    }
    out
}

/// Exports the selected objects of a verified archival package together
/// with renderings of their linked records. `dip_dir` must not exist.
pub fn build_dip(
    aip_dir: &Path,
    selection: &ObjectSelection,
    store: &RegistryStore,
    dip_dir: &Path,
) -> Result<DisseminationPackage> {
    let verification = verify_aip(aip_dir);
    if !verification.passed() {
        return Err(PackageError::NotVerified(verification.report));
    }
    let aip = ArchivalPackage::load(aip_dir)?;
    let selected: Vec<&ContentInformation> = aip
        .content_information
        .iter()
        .filter(|c| selection.matches(c))
        .collect();
    if selected.is_empty() {
        return Err(PackageError::EmptySelection);
    }

    // records are resolved before anything is written
    let mut records: BTreeMap<(RecordId, u64), RiRecord> = BTreeMap::new();
    for obj in &selected {
        for l in &obj.linked_records {
            let key = (l.record_id.clone(), l.version);
            if let std::collections::btree_map::Entry::Vacant(e) = records.entry(key) {
                let r = store.get_record(&l.record_id, Some(l.version))?;
                e.insert(r);
            }
        }
    }

    if let Some(parent) = dip_dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    match fs::create_dir(dip_dir) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
            return Err(PackageError::AlreadyExists(dip_dir.to_owned()))
        }
        Err(e) => return Err(io_err(dip_dir)(e)),
    }
    let result = write_dip(&aip, aip_dir, &selected, &records, selection, dip_dir);
    if result.is_err() {
        let _ = fs::remove_dir_all(dip_dir);
    }
    result
}

fn write_dip(
    aip: &ArchivalPackage,
    aip_dir: &Path,
    selected: &[&ContentInformation],
    records: &BTreeMap<(RecordId, u64), RiRecord>,
    selection: &ObjectSelection,
    dip_dir: &Path,
) -> Result<DisseminationPackage> {
    let mut fixity = Vec::new();
    let mut excerpts = Vec::with_capacity(records.len());
    let ri_dir = dip_dir.join(RI_DIR);
    if !records.is_empty() {
        fs::create_dir_all(&ri_dir).map_err(io_err(&ri_dir))?;
    }
    for ((id, version), record) in records {
        let rel = format!("{RI_DIR}/{id}-v{version}.txt");
        let path = dip_dir.join(&rel);
        let text = render_record(record);
        write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
        fixity.push(FixityRecord {
            path: rel.clone(),
            algorithm: DIGEST_ALGORITHM.to_owned(),
            digest: sha256_file(&path).map_err(io_err(&path))?,
            size: text.len() as u64,
        });
        excerpts.push(RiExcerpt {
            record_id: id.clone(),
            version: *version,
            path: rel,
        });
    }

    let mut objects = Vec::with_capacity(selected.len());
    for obj in selected {
        let rel = object_path(&obj.path);
        let expected = aip
            .fixity_for(&rel)
            .ok_or_else(|| PackageError::FixityMismatch { path: rel.clone() })?;
        let dst = dip_dir.join(OBJECTS_DIR).join(&obj.path);
        let parent = dst.parent().expect("object path has a parent");
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let src = aip_dir.join(&rel);
        let (digest, size) = copy_hashed(&src, &dst).map_err(io_err(&src))?;
        if digest != expected.digest {
            return Err(PackageError::FixityMismatch { path: rel });
        }
        fixity.push(FixityRecord {
            path: rel,
            algorithm: DIGEST_ALGORITHM.to_owned(),
            digest: digest.clone(),
            size,
        });
        objects.push(DipObject {
            path: obj.path.clone(),
            sha256: digest,
            size,
            format_name: obj.format_name().map(str::to_owned),
            ri_excerpts: obj
                .linked_records
                .iter()
                .map(|l| format!("{RI_DIR}/{}-v{}.txt", l.record_id, l.version))
                .collect(),
        });
    }
    fixity.sort_by(|a, b| a.path.cmp(&b.path));

    let dip = DisseminationPackage {
        dip_id: Uuid::new_v4().to_string(),
        source_aip_id: aip.aip_id.clone(),
        created: Utc::now(),
        selection: selection.clone(),
        objects,
        ri_excerpts: excerpts,
        fixity,
    };
    let meta = dip_dir.join(DIP_METADATA);
    fs::create_dir_all(meta.parent().expect("metadata dir")).map_err(io_err(dip_dir))?;
    write_json(&meta, &dip)?;
    write_manifest(dip_dir)?;
    Ok(dip)
}
