#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use bimcore::model::{
    ContentElementValue, ContextBody, ContextEntry, ContextKind, Payload, RecordId, RecordStatus,
    RiRecord, SignificantProperty, ToolDescription,
};
use bimcore::registry::RegistryStore;
use proptest::prelude::*;

pub fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn id(s: &str) -> RecordId {
    RecordId::new(s).unwrap()
}

/// Registry records in an order where every relation target precedes its
/// source.
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

pub fn fixture_record(name: &str) -> RiRecord {
    let path = corpus()
        .join("registry/records")
        .join(format!("{name}.json"));
    RiRecord::from_json(&fs::read_to_string(&path).unwrap()).unwrap()
}

/// Opens a writable store at `root` holding the registry fixtures.
pub fn fixture_store(root: &Path) -> RegistryStore {
    let mut store = RegistryStore::open(root).unwrap();
    for name in FIXTURE_RECORDS {
        store.put_record(fixture_record(name), "fixture").unwrap();
    }
    for entry in fs::read_dir(corpus().join("registry/contexts")).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        let ctx: ContextEntry = serde_json::from_str(&text).unwrap();
        store.put_context(ctx, "fixture").unwrap();
    }
    for entry in fs::read_dir(corpus().join("registry/properties")).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        let prop: SignificantProperty = serde_json::from_str(&text).unwrap();
        store.put_property(prop, "fixture").unwrap();
    }
    store
}

fn words() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[A-Za-z0-9 ,.'()\u{e4}\u{df}-]{1,24}").unwrap()
}

fn language() -> impl Strategy<Value = Option<String>> {
    prop_oneof![
        Just(None),
        Just(Some("en".to_owned())),
        Just(Some("de-CH".to_owned()))
    ]
}

fn payload_for(element_id: u8) -> BoxedStrategy<Payload> {
    match element_id {
        1..=2 | 4..=9 | 11 | 12 => words().prop_map(|text| Payload::Text { text }).boxed(),
        3 | 10 | 21 | 23 => ("[a-z]{1,8}", proptest::option::of(words()))
            .prop_map(|(host, title)| Payload::ExternalLink {
                uri: format!("https://{host}.example/spec"),
                title,
            })
            .boxed(),
        13..=15 => (words(), words())
            .prop_map(|(target, description)| Payload::StructuredReference {
                target,
                description,
            })
            .boxed(),
        16..=18 => (
            words(),
            proptest::option::of("[0-9]\\.[0-9]"),
            words(),
            proptest::collection::vec("[a-z]{2,6}", 0..3),
        )
            .prop_map(|(tool_name, tool_version, purpose, signature_ids)| {
                Payload::ToolDescription(ToolDescription {
                    tool_name,
                    tool_version,
                    purpose,
                    signature_ids,
                    evidence: Vec::new(),
                })
            })
            .boxed(),
        _ => ("[a-z][a-z0-9-]{0,10}", words(), any::<bool>())
            .prop_map(move |(entry_id, body, link)| {
                Payload::ContextEntry(ContextEntry {
                    entry_id: RecordId::new(entry_id).unwrap(),
                    kind: ContextKind::for_element(element_id).unwrap(),
                    body: if link {
                        ContextBody::ExternalLink(format!("https://example.org/{}", body.len()))
                    } else {
                        ContextBody::Text(body)
                    },
                    provenance_note: None,
                })
            })
            .boxed(),
    }
}

/// A structurally valid value for a random element.
pub fn element_value() -> impl Strategy<Value = ContentElementValue> {
    (1u8..=23)
        .prop_flat_map(|element_id| (Just(element_id), payload_for(element_id), language()))
        .prop_map(|(element_id, payload, language)| ContentElementValue {
            element_id,
            payload,
            language,
            source_citation: None,
        })
}

/// A record that passes validation against a store without other records.
pub fn valid_record() -> impl Strategy<Value = RiRecord> {
    (
        "[a-z][a-z0-9-]{0,15}",
        words(),
        "[A-Z0-9.]{0,6}",
        any::<bool>(),
        proptest::collection::vec(element_value(), 0..12),
        any::<bool>(),
    )
        .prop_map(
            |(rid, format_name, label, publish, values, self_describing)| {
                let mut r = RiRecord::new_draft(RecordId::new(rid).unwrap(), format_name.clone());
                r.format_version_label = label;
                r.self_describing = self_describing;
                let mut seen = [false; 24];
                for v in values {
                    let once = matches!(v.element_id, 1 | 2 | 5);
                    if once && seen[v.element_id as usize] {
                        continue;
                    }
                    seen[v.element_id as usize] = true;
                    r.elements.push(v);
                }
                if publish {
                    r.status = RecordStatus::Published;
                    if !seen[1] {
                        r.elements.push(ContentElementValue::text(1, format_name));
                    }
                }
                r.ri_subtype_tags = r.derived_subtypes();
                // second precision survives every serializer
                let t = chrono::DateTime::from_timestamp(1_700_000_000, 0).unwrap();
                r.created = t;
                r.modified = t;
                r
            },
        )
}
