use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, Read};
use std::path::Path;

use chrono::Utc;
use tracing::{debug, info};
use uuid::Uuid;

use crate::fixity::{copy_hashed, write_atomic};
use crate::ident::{
    identify_file, parse_step_header, IdentificationResult, SignatureSet, StepHeader, Verdict,
    STEP_SIGNATURE_ID,
};
use crate::model::{ContextEntry, RecordId};
use crate::registry::{RegistryStore, StoreError};

use super::{
    compute_ri_closure, format_manifest, io_err, object_path, parse_manifest, write_json,
    write_manifest, ArchivalPackage, ContentInformation, ContextLink, ContextLocation,
    DeclaredContext, EventKind, FixityRecord, LinkedRecord, ManifestLine, ObjectIdentifier,
    PackageError, PreservationDescription, ProvenanceEvent, RecordRef, ReferenceInformation,
    Result, RiClosure, SubmissionPackage, AGENT, AIP_METADATA, CONTEXT_DIR, DIGEST_ALGORITHM,
    MANIFEST, OBJECTS_DIR,
};

/// Upper bound on bytes read when looking for a STEP header.
const HEADER_PROBE: u64 = 1024 * 1024;

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Closure terminators; defaults to the store's self-describing records.
    pub baseline: Option<BTreeSet<RecordId>>,
    pub agent: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            baseline: None,
            agent: AGENT.to_owned(),
        }
    }
}

fn read_prefix(reader: impl Read) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    reader.take(HEADER_PROBE).read_to_end(&mut buf)?;
    Ok(buf)
}

/// STEP header of a plain STEP file or of the STEP member of a zip container.
fn probe_step_header(path: &Path, result: &IdentificationResult) -> Option<StepHeader> {
    let best = result.conclusive().next()?;
    let bytes = if best.signature_id == STEP_SIGNATURE_ID {
        read_prefix(File::open(path).ok()?).ok()?
    } else {
        let inner = best.evidence.inner_item.as_deref()?;
        let mut archive = zip::ZipArchive::new(File::open(path).ok()?).ok()?;
        let entry = archive.by_name(inner).ok()?;
        read_prefix(entry).ok()?
    };
    parse_step_header(&bytes).ok()
}

fn link_records(
    store: &RegistryStore,
    signatures: &SignatureSet,
    result: &IdentificationResult,
    header: Option<&StepHeader>,
) -> Result<Vec<LinkedRecord>> {
    if result.verdict != Verdict::Identified {
        return Ok(Vec::new());
    }
    let mut ids: BTreeSet<RecordId> = header
        .into_iter()
        .flat_map(|h| h.file_schema.iter())
        .flat_map(|schema| store.records_with_version_label(schema))
        .collect();
    if ids.is_empty() {
        if let Some(best) = result.conclusive().next() {
            ids.extend(store.records_for_signature(&best.signature_id));
            let target = signatures
                .get(&best.signature_id)
                .and_then(|s| s.target_record_id.clone());
            if let Some(t) = target.filter(|t| store.latest_published_version(t).is_some()) {
                ids.insert(t);
            }
        }
    }
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let version = store
            .latest_published_version(&id)
            .ok_or_else(|| PackageError::NotFound(format!("published version of {id}")))?;
        let record = store.get_record(&id, Some(version))?;
        out.push(LinkedRecord {
            record_id: id,
            version,
            format_name: record.format_name,
            format_version_label: record.format_version_label,
        });
    }
    Ok(out)
}

fn resolve_context(
    store: &RegistryStore,
    declared: &[DeclaredContext],
) -> Result<Vec<(ContextEntry, ContextLocation)>> {
    let mut out: Vec<(ContextEntry, ContextLocation)> = Vec::new();
    for d in declared {
        let (entry, loc) = match d {
            DeclaredContext::Inline(e) => (e.clone(), ContextLocation::Inline),
            DeclaredContext::Reference { entry_id } => {
                let e = store
                    .get_context(entry_id)
                    .map_err(|_| PackageError::NotFound(format!("context entry {entry_id}")))?;
                (e.clone(), ContextLocation::Registry)
            }
        };
        if out.iter().any(|(e, _)| e.entry_id == entry.entry_id) {
            continue;
        }
        out.push((entry, loc));
    }
    Ok(out)
}

/// Converts a submission package into an archival package written to
/// `aip_dir`, which must not exist yet.
///
/// Files of unknown format are archived with the `unresolved-RI` flag.
pub fn ingest(
    sip: &SubmissionPackage,
    store: &RegistryStore,
    signatures: &SignatureSet,
    aip_dir: &Path,
    options: &IngestOptions,
) -> Result<ArchivalPackage> {
    if sip.payload.is_empty() {
        return Err(PackageError::EmptyPayload(sip.payload_root.clone()));
    }
    let health = store.integrity_check();
    if !health.is_healthy() {
        return Err(StoreError::Unhealthy(health).into());
    }
    let context = resolve_context(store, &sip.declared_context)?;
    for rel in &sip.payload {
        let src = sip.payload_root.join(rel);
        File::open(&src).map_err(|source| PackageError::Unreadable { path: src, source })?;
    }

    if let Some(parent) = aip_dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    match fs::create_dir(aip_dir) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
            return Err(PackageError::AlreadyExists(aip_dir.to_owned()))
        }
        Err(e) => return Err(io_err(aip_dir)(e)),
    }
    let result = write_aip(sip, store, signatures, aip_dir, options, &context);
    if result.is_err() {
        let _ = fs::remove_dir_all(aip_dir);
    }
    result
}

fn write_aip(
    sip: &SubmissionPackage,
    store: &RegistryStore,
    signatures: &SignatureSet,
    aip_dir: &Path,
    options: &IngestOptions,
    context: &[(ContextEntry, ContextLocation)],
) -> Result<ArchivalPackage> {
    let aip_id = Uuid::new_v4().to_string();
    let baseline = options
        .baseline
        .clone()
        .unwrap_or_else(|| store.default_baseline());
    let mut content_information = Vec::with_capacity(sip.payload.len());
    let mut fixity = Vec::with_capacity(sip.payload.len());
    let mut objects = Vec::with_capacity(sip.payload.len());

    for rel in &sip.payload {
        let src = sip.payload_root.join(rel);
        let dst = aip_dir.join(OBJECTS_DIR).join(rel);
        let parent = dst.parent().expect("object path has a parent");
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let (digest, size) =
            copy_hashed(&src, &dst).map_err(|source| PackageError::Unreadable {
                path: src.clone(),
                source,
            })?;
        let identification = identify_file(&dst, signatures).map_err(io_err(&dst))?;
        let step_header = probe_step_header(&dst, &identification);
        let linked_records =
            link_records(store, signatures, &identification, step_header.as_ref())?;
        let roots: Vec<RecordId> = linked_records.iter().map(|l| l.record_id.clone()).collect();
        let closure = if roots.is_empty() {
            RiClosure::default()
        } else {
            compute_ri_closure(&roots, store, &baseline)?
        };
        let ri_references = closure
            .nodes
            .iter()
            .filter_map(|id| {
                let version = store
                    .latest_published_version(id)
                    .or_else(|| store.latest_version(id))?;
                Some(RecordRef {
                    record_id: id.clone(),
                    version,
                })
            })
            .collect();
        let unresolved_ri = linked_records.is_empty() || !closure.unresolved.is_empty();
        debug!(object = %rel, verdict = ?identification.verdict, linked = linked_records.len(), unresolved_ri, "ingested object");

        fixity.push(FixityRecord {
            path: object_path(rel),
            algorithm: DIGEST_ALGORITHM.to_owned(),
            digest,
            size,
        });
        objects.push(ObjectIdentifier {
            path: rel.clone(),
            identifier: format!("urn:uuid:{}", Uuid::new_v4()),
        });
        content_information.push(ContentInformation {
            path: rel.clone(),
            identification,
            step_header,
            linked_records,
            ri_references,
            closure,
            unresolved_ri,
        });
    }

    let mut links = Vec::with_capacity(context.len());
    for (entry, location) in context {
        let path = match location {
            ContextLocation::Inline => {
                let rel = format!("{CONTEXT_DIR}/{}.json", entry.entry_id);
                let full = aip_dir.join(&rel);
                let dir = full.parent().expect("context path has a parent");
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                write_json(&full, entry)?;
                Some(rel)
            }
            ContextLocation::Registry => None,
        };
        links.push(ContextLink {
            entry_id: entry.entry_id.clone(),
            kind: entry.kind,
            location: *location,
            path,
        });
    }

    let unresolved = content_information
        .iter()
        .filter(|c| c.unresolved_ri)
        .count();
    let aip = ArchivalPackage {
        aip_id: aip_id.clone(),
        sip_id: sip.sip_id.clone(),
        created: Utc::now(),
        producer_metadata: sip.producer_metadata.clone(),
        content_information,
        pdi: PreservationDescription {
            provenance: vec![ProvenanceEvent {
                event: EventKind::Ingest,
                timestamp: Utc::now(),
                agent: options.agent.clone(),
                detail: format!(
                    "ingested {} objects from submission {} ({unresolved} with unresolved representation information)",
                    sip.payload.len(),
                    sip.sip_id
                ),
            }],
            context: links,
            reference: ReferenceInformation { aip_id, objects },
            fixity,
        },
        packaging_manifest: MANIFEST.to_owned(),
        significant_property_links: Vec::new(),
    };
    let meta = aip_dir.join(AIP_METADATA);
    fs::create_dir_all(meta.parent().expect("metadata dir")).map_err(io_err(aip_dir))?;
    write_json(&meta, &aip)?;
    write_manifest(aip_dir)?;
    info!(aip_id = %aip.aip_id, objects = aip.content_information.len(), "archival package written");
    Ok(aip)
}

/// Links significant properties held in `store` to the package. Ids that
/// are already linked are ignored, so repeating a call changes nothing. If
/// any id is unknown the package is left untouched.
pub fn attach_significant_properties(
    aip_dir: &Path,
    property_ids: &[RecordId],
    store: &RegistryStore,
    agent: &str,
) -> Result<ArchivalPackage> {
    let mut aip = ArchivalPackage::load(aip_dir)?;
    for id in property_ids {
        store
            .get_property(id)
            .map_err(|_| PackageError::NotFound(format!("significant property {id}")))?;
    }
    let mut new: Vec<RecordId> = property_ids
        .iter()
        .filter(|id| !aip.significant_property_links.contains(id))
        .cloned()
        .collect();
    new.sort();
    new.dedup();
    if new.is_empty() {
        return Ok(aip);
    }

    let manifest_path = aip_dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut lines: Vec<ManifestLine> = parse_manifest(&text)
        .map_err(|e| PackageError::BadManifest(format!("{}: {e}", manifest_path.display())))?;

    aip.significant_property_links.extend(new.iter().cloned());
    aip.significant_property_links.sort();
    let names: Vec<&str> = new.iter().map(RecordId::as_str).collect();
    aip.pdi.provenance.push(ProvenanceEvent {
        event: EventKind::AttachSignificantProperty,
        timestamp: Utc::now(),
        agent: agent.to_owned(),
        detail: format!("linked significant properties {}", names.join(", ")),
    });
    let meta = aip_dir.join(AIP_METADATA);
    write_json(&meta, &aip)?;

    // only the metadata line changes; other digests are kept as recorded
    let digest = crate::fixity::sha256_file(&meta).map_err(io_err(&meta))?;
    match lines.iter_mut().find(|l| l.path == AIP_METADATA) {
        Some(line) => line.digest = digest,
        None => {
            lines.push(ManifestLine {
                digest,
                path: AIP_METADATA.to_owned(),
            });
            lines.sort_by(|a, b| a.path.cmp(&b.path));
        }
    }
    write_atomic(&manifest_path, format_manifest(&lines).as_bytes())
        .map_err(io_err(&manifest_path))?;
    Ok(aip)
}
