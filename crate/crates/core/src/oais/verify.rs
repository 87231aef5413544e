use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fixity::sha256_file;
use crate::model::RecordId;
use crate::report::{CheckOutcome, VerificationReport};

use super::{
    list_files, object_path, parse_manifest, ArchivalPackage, EventKind, AIP_METADATA, MANIFEST,
    OBJECTS_DIR,
};

pub const CHECK_METADATA: &str = "metadata";
pub const CHECK_MANIFEST_FORMAT: &str = "manifest-format";
pub const CHECK_MANIFEST_COMPLETENESS: &str = "manifest-completeness";
pub const CHECK_MANIFEST_DIGESTS: &str = "manifest-digests";
pub const CHECK_FIXITY: &str = "fixity";
pub const CHECK_RI_LINKS: &str = "ri-links";
pub const CHECK_PROVENANCE: &str = "provenance";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AipVerification {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aip_id: Option<String>,
    pub report: VerificationReport,
    pub significant_property_links: Vec<RecordId>,
}

impl AipVerification {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn skipped(check: &str, because: &str) -> CheckOutcome {
    CheckOutcome::fail(check, format!("not checked: {because} failed"))
}

fn digest_or_error(root: &Path, rel: &str) -> Result<String, String> {
    sha256_file(&root.join(rel)).map_err(|e| e.to_string())
}

/// Recomputes every digest of the package at `aip_dir` and checks its
/// metadata. Problems are reported as failed checks, never as errors.
pub fn verify_aip(aip_dir: &Path) -> AipVerification {
    let mut checks = Vec::with_capacity(7);
    let files = list_files(aip_dir, |p| p == MANIFEST);

    let aip = ArchivalPackage::load(aip_dir);
    checks.push(match &aip {
        Ok(_) => CheckOutcome::pass(CHECK_METADATA),
        Err(e) => CheckOutcome::fail(CHECK_METADATA, e.to_string())
            .with_paths(vec![AIP_METADATA.to_owned()]),
    });

    // manifest
    let manifest = fs::read_to_string(aip_dir.join(MANIFEST))
        .map_err(|e| e.to_string())
        .and_then(|t| parse_manifest(&t));
    checks.push(match &manifest {
        Ok(_) => CheckOutcome::pass(CHECK_MANIFEST_FORMAT),
        Err(e) => CheckOutcome::fail(CHECK_MANIFEST_FORMAT, e.clone())
            .with_paths(vec![MANIFEST.to_owned()]),
    });
    match (&manifest, &files) {
        (Ok(lines), Ok(files)) => {
            let listed: BTreeSet<&str> = lines.iter().map(|l| l.path.as_str()).collect();
            let present: BTreeSet<&str> = files.iter().map(String::as_str).collect();
            let extra: Vec<String> = present.difference(&listed).map(|s| s.to_string()).collect();
            let missing: Vec<String> = listed.difference(&present).map(|s| s.to_string()).collect();
            checks.push(if extra.is_empty() && missing.is_empty() {
                CheckOutcome::pass(CHECK_MANIFEST_COMPLETENESS)
            } else {
                let mut paths = extra.clone();
                paths.extend(missing.iter().cloned());
                paths.sort();
                CheckOutcome::fail(
                    CHECK_MANIFEST_COMPLETENESS,
                    format!(
                        "{} files not in manifest, {} manifest entries without file",
                        extra.len(),
                        missing.len()
                    ),
                )
                .with_paths(paths)
            });
            let mismatched: Vec<String> = lines
                .iter()
                .filter(|l| present.contains(l.path.as_str()))
                .filter(|l| digest_or_error(aip_dir, &l.path).as_deref() != Ok(l.digest.as_str()))
                .map(|l| l.path.clone())
                .collect();
            checks.push(if mismatched.is_empty() {
                CheckOutcome::pass(CHECK_MANIFEST_DIGESTS)
            } else {
                CheckOutcome::fail(
                    CHECK_MANIFEST_DIGESTS,
                    format!("{} digests differ", mismatched.len()),
                )
                .with_paths(mismatched)
            });
        }
        (Err(_), _) => {
            checks.push(skipped(CHECK_MANIFEST_COMPLETENESS, CHECK_MANIFEST_FORMAT));
            checks.push(skipped(CHECK_MANIFEST_DIGESTS, CHECK_MANIFEST_FORMAT));
        }
        (_, Err(e)) => {
            checks.push(CheckOutcome::fail(
                CHECK_MANIFEST_COMPLETENESS,
                e.to_string(),
            ));
            checks.push(skipped(CHECK_MANIFEST_DIGESTS, CHECK_MANIFEST_COMPLETENESS));
        }
    }

    let Ok(aip) = aip else {
        for c in [CHECK_FIXITY, CHECK_RI_LINKS, CHECK_PROVENANCE] {
            checks.push(skipped(c, CHECK_METADATA));
        }
        return AipVerification {
            aip_id: None,
            report: VerificationReport::from_checks(checks),
            significant_property_links: Vec::new(),
        };
    };

    // fixity records against the objects on disk
    let recorded: BTreeMap<&str, &str> = aip
        .pdi
        .fixity
        .iter()
        .map(|f| (f.path.as_str(), f.digest.as_str()))
        .collect();
    let prefix = format!("{OBJECTS_DIR}/");
    let mut bad: BTreeSet<String> = BTreeSet::new();
    if let Ok(files) = &files {
        for f in files.iter().filter(|f| f.starts_with(&prefix)) {
            if !recorded.contains_key(f.as_str()) {
                bad.insert(f.clone());
            }
        }
    }
    for (path, digest) in &recorded {
        if digest_or_error(aip_dir, path).as_deref() != Ok(*digest) {
            bad.insert(path.to_string());
        }
    }
    for c in &aip.content_information {
        let p = object_path(&c.path);
        if !recorded.contains_key(p.as_str()) {
            bad.insert(p);
        }
    }
    checks.push(if bad.is_empty() {
        CheckOutcome::pass(CHECK_FIXITY)
    } else {
        CheckOutcome::fail(CHECK_FIXITY, format!("{} objects fail fixity", bad.len()))
            .with_paths(bad.into_iter().collect())
    });

    let unlinked: Vec<String> = aip
        .content_information
        .iter()
        .filter(|c| c.ri_references.is_empty() && !c.unresolved_ri)
        .map(|c| object_path(&c.path))
        .collect();
    checks.push(if unlinked.is_empty() {
        CheckOutcome::pass(CHECK_RI_LINKS)
    } else {
        CheckOutcome::fail(
            CHECK_RI_LINKS,
            "objects with neither representation information nor unresolved flag",
        )
        .with_paths(unlinked)
    });

    checks.push(
        if aip
            .pdi
            .provenance
            .iter()
            .any(|e| e.event == EventKind::Ingest)
        {
            CheckOutcome::pass(CHECK_PROVENANCE)
        } else {
            CheckOutcome::fail(CHECK_PROVENANCE, "no ingest event recorded")
        },
    );

    AipVerification {
        aip_id: Some(aip.aip_id),
        report: VerificationReport::from_checks(checks),
        significant_property_links: aip.significant_property_links,
    }
}
