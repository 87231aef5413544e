#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use bimcore::model::{ContextEntry, RiRecord, SignificantProperty};
use bimcore::registry::RegistryStore;

/// Fixture records in an order where every relation target exists first.
pub const FIXTURE_RECORDS: [&str; 8] = [
    "plain-text",
    "pdf",
    "xml",
    "step-spf",
    "tiff",
    "ifc2x3",
    "ifc4",
    "ifcxml",
];

pub fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn fixture_record(name: &str) -> RiRecord {
    let path = corpus().join(format!("registry/records/{name}.json"));
    RiRecord::from_json(&fs::read_to_string(path).unwrap()).unwrap()
}

pub fn fixture_property() -> SignificantProperty {
    let path = corpus().join("registry/properties/fire-escape-widths.json");
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A writable store at `root` holding every fixture record, property and
/// context entry.
pub fn fixture_store(root: &Path) -> RegistryStore {
    let mut store = RegistryStore::open(root).unwrap();
    for name in FIXTURE_RECORDS {
        store.put_record(fixture_record(name), "fixture").unwrap();
    }
    store.put_property(fixture_property(), "fixture").unwrap();
    for e in fs::read_dir(corpus().join("registry/contexts")).unwrap() {
        let entry: ContextEntry =
            serde_json::from_str(&fs::read_to_string(e.unwrap().path()).unwrap()).unwrap();
        store.put_context(entry, "fixture").unwrap();
    }
    store
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the CLI in-process.
pub fn cli(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("bimcore").chain(args.iter().copied());
    let code = bimcore_cli::run(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}
