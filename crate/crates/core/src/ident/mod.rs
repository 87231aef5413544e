//! Format identification.
//!
//! Files are matched against a [`SignatureSet`]: byte signatures at fixed or
//! end-relative offsets, extension hints, and one level of container sniffing
//! (ZIP entries, XML root elements) for the packaged IFC variants.
//! Identification never reads more than the first and last
//! [`READ_WINDOW`] bytes of a file, plus the ZIP central directory and the
//! head of each inspected entry.

pub mod step;

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ContentElementValue, Payload, RecordId, RiRecord, ToolDescription};
pub use step::{
    parse_step_header, verify_step, FileDescription, FileName, StepError, StepErrorKind, StepHeader,
};

/// Bytes read from each end of a file during identification.
pub const READ_WINDOW: usize = 64 * 1024;
/// Upper bound on ZIP entries inspected by a container rule.
const MAX_CONTAINER_ENTRIES: usize = 256;

pub const STEP_SIGNATURE_ID: &str = "step-spf";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignatureError {
    #[error("signature {0}: mask length differs from magic length")]
    MaskLength(String),
    #[error("signatures {0} and {1} share a magic prefix at the same offset and priority")]
    AmbiguousPriority(String, String),
    #[error("duplicate signature id {0}")]
    DuplicateId(String),
    #[error("signature {0}: container rule references unknown signature {1}")]
    UnknownInner(String, String),
    #[error("malformed signature file: {0}")]
    Parse(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdentError {
    #[error("cannot suggest a record for an unidentified file")]
    UnknownVerdict,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode_upper(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text.replace(' ', "")).map_err(serde::de::Error::custom)
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(bytes: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
            match bytes {
                Some(b) => super::serialize(b, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
            Option::<String>::deserialize(d)?
                .map(|t| hex::decode(t.replace(' ', "")).map_err(serde::de::Error::custom))
                .transpose()
        }
    }
}

/// Where a signature's magic sits: a byte position from the start, or a
/// distance back from the end of the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SignatureOffset {
    Start(u64),
    FromEnd { from_end: u64 },
}

impl Default for SignatureOffset {
    fn default() -> Self {
        Self::Start(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerKind {
    Zip,
    Xml,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerMatcher {
    /// The first ZIP entry matching this signature qualifies the container.
    Signature(String),
    /// Accepted local names of the XML root element.
    XmlRoot(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerRule {
    pub container: ContainerKind,
    pub inner: InnerMatcher,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatSignature {
    pub signature_id: String,
    pub format_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_record_id: Option<RecordId>,
    #[serde(with = "hex_bytes")]
    pub magic: Vec<u8>,
    #[serde(default)]
    pub offset: SignatureOffset,
    #[serde(
        default,
        with = "hex_bytes::opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub mask: Option<Vec<u8>>,
    #[serde(default)]
    pub extension_hints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container_rule: Option<ContainerRule>,
    pub priority: i32,
    /// Heuristic signatures only ever produce tentative matches, and only
    /// when the extension agrees as well.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub heuristic: bool,
}

impl FormatSignature {
    fn simple(id: &str, name: &str, magic: &[u8], exts: &[&str], priority: i32) -> Self {
        Self {
            signature_id: id.to_owned(),
            format_name: name.to_owned(),
            target_record_id: None,
            magic: magic.to_vec(),
            offset: SignatureOffset::Start(0),
            mask: None,
            extension_hints: exts.iter().map(|s| (*s).to_owned()).collect(),
            container_rule: None,
            priority,
            heuristic: false,
        }
    }

    fn with_container(mut self, container: ContainerKind, inner: InnerMatcher) -> Self {
        self.container_rule = Some(ContainerRule { container, inner });
        self
    }

    fn magic_matches_at(&self, window: &[u8]) -> bool {
        window.len() >= self.magic.len()
            && match &self.mask {
                Some(mask) => self
                    .magic
                    .iter()
                    .zip(mask)
                    .zip(window)
                    .all(|((m, k), b)| m & k == b & k),
                None => window[..self.magic.len()] == self.magic[..],
            }
    }

    /// Absolute start of the magic when it matches inside the window.
    fn match_magic(&self, w: &Window<'_>) -> Option<u64> {
        if self.magic.is_empty() {
            return None;
        }
        let len = self.magic.len() as u64;
        match self.offset {
            SignatureOffset::Start(off) => {
                let end = off.checked_add(len)?;
                if end > w.head.len() as u64 {
                    return None;
                }
                self.magic_matches_at(&w.head[off as usize..])
                    .then_some(off)
            }
            SignatureOffset::FromEnd { from_end } => {
                if from_end < len || from_end > w.tail.len() as u64 {
                    return None;
                }
                let start_in_tail = w.tail.len() - from_end as usize;
                self.magic_matches_at(&w.tail[start_in_tail..])
                    .then_some(w.len - from_end)
            }
        }
    }
}

/// The built-in signatures: STEP physical files, TIFF (both byte orders),
/// PDF, ZIP and XML with their IFC container variants, and a tentative
/// HP-GL plot-file heuristic.
pub fn builtin_signatures() -> Vec<FormatSignature> {
    vec![
        FormatSignature::simple(
            STEP_SIGNATURE_ID,
            "STEP-SPF",
            b"ISO-10303-21;",
            &["ifc", "stp", "step", "p21"],
            100,
        ),
        FormatSignature::simple(
            "tiff-le",
            "TIFF (little-endian)",
            &[0x49, 0x49, 0x2A, 0x00],
            &["tif", "tiff"],
            100,
        ),
        FormatSignature::simple(
            "tiff-be",
            "TIFF (big-endian)",
            &[0x4D, 0x4D, 0x00, 0x2A],
            &["tif", "tiff"],
            100,
        ),
        FormatSignature::simple("pdf", "PDF", b"%PDF-", &["pdf"], 100),
        FormatSignature::simple(
            "zip",
            "ZIP archive",
            &[0x50, 0x4B, 0x03, 0x04],
            &["zip"],
            100,
        ),
        FormatSignature::simple(
            "ifczip",
            "ifcZIP (zipped IFC)",
            &[0x50, 0x4B, 0x03, 0x04],
            &["ifczip"],
            200,
        )
        .with_container(
            ContainerKind::Zip,
            InnerMatcher::Signature(STEP_SIGNATURE_ID.into()),
        ),
        FormatSignature::simple("xml", "XML document", b"<?xml", &["xml"], 100),
        FormatSignature::simple("ifcxml", "ifcXML", b"<?xml", &["ifcxml"], 200).with_container(
            ContainerKind::Xml,
            InnerMatcher::XmlRoot(vec!["ifcXML".into(), "iso_10303_28".into()]),
        ),
        FormatSignature {
            heuristic: true,
            ..FormatSignature::simple(
                "hpgl",
                "HP-GL plot file",
                b"IN;",
                &["plt", "hpgl", "hgl"],
                100,
            )
        },
    ]
}

/// Validated, priority-ordered signature list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureSet {
    signatures: Vec<FormatSignature>,
}

impl SignatureSet {
    pub fn new(mut signatures: Vec<FormatSignature>) -> Result<Self, SignatureError> {
        let mut ids = BTreeSet::new();
        for s in &signatures {
            if !ids.insert(s.signature_id.as_str()) {
                return Err(SignatureError::DuplicateId(s.signature_id.clone()));
            }
            if s.mask.as_ref().is_some_and(|m| m.len() != s.magic.len()) {
                return Err(SignatureError::MaskLength(s.signature_id.clone()));
            }
        }
        for s in &signatures {
            if let Some(ContainerRule {
                inner: InnerMatcher::Signature(inner),
                ..
            }) = &s.container_rule
            {
                if !ids.contains(inner.as_str()) {
                    return Err(SignatureError::UnknownInner(
                        s.signature_id.clone(),
                        inner.clone(),
                    ));
                }
            }
        }
        for (i, a) in signatures.iter().enumerate() {
            for b in &signatures[i + 1..] {
                let overlap = !a.magic.is_empty()
                    && !b.magic.is_empty()
                    && a.offset == b.offset
                    && (a.magic.starts_with(&b.magic) || b.magic.starts_with(&a.magic));
                if overlap && a.priority == b.priority {
                    return Err(SignatureError::AmbiguousPriority(
                        a.signature_id.clone(),
                        b.signature_id.clone(),
                    ));
                }
            }
        }
        signatures.sort_by(|a, b| {
            b.priority
                .cmp(&a.priority)
                .then(a.signature_id.cmp(&b.signature_id))
        });
        Ok(Self { signatures })
    }

    pub fn builtin() -> Self {
        Self::new(builtin_signatures()).expect("built-in signatures are consistent")
    }

    /// Builtins plus signatures from a JSON signature file; entries with an
    /// existing id replace the builtin.
    pub fn builtin_with(extra: Vec<FormatSignature>) -> Result<Self, SignatureError> {
        let mut all: BTreeMap<String, FormatSignature> = builtin_signatures()
            .into_iter()
            .map(|s| (s.signature_id.clone(), s))
            .collect();
        for s in extra {
            all.insert(s.signature_id.clone(), s);
        }
        Self::new(all.into_values().collect())
    }

    pub fn parse_json(text: &str) -> Result<Vec<FormatSignature>, SignatureError> {
        serde_json::from_str(text).map_err(|e| SignatureError::Parse(e.to_string()))
    }

    pub fn get(&self, id: &str) -> Option<&FormatSignature> {
        self.signatures.iter().find(|s| s.signature_id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FormatSignature> {
        self.signatures.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Identified,
    Tentative,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchKind {
    Magic,
    /// Magic matched and the container rule found a qualifying inner item.
    Container,
    ExtensionOnly,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteRange {
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub kind: MatchKind,
    pub byte_ranges: Vec<ByteRange>,
    pub extension_agrees: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_item: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureMatch {
    pub signature_id: String,
    pub format_name: String,
    pub priority: i32,
    pub evidence: Evidence,
}

impl SignatureMatch {
    pub fn is_conclusive(&self) -> bool {
        matches!(self.evidence.kind, MatchKind::Magic | MatchKind::Container)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub verdict: Verdict,
    pub matches: Vec<SignatureMatch>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl IdentificationResult {
    /// Highest-priority conclusive match, or the first tentative one.
    pub fn best(&self) -> Option<&SignatureMatch> {
        self.matches
            .iter()
            .find(|m| m.is_conclusive())
            .or_else(|| self.matches.first())
    }

    pub fn conclusive(&self) -> impl Iterator<Item = &SignatureMatch> {
        self.matches.iter().filter(|m| m.is_conclusive())
    }

    pub fn matched(&self, signature_id: &str) -> bool {
        self.conclusive().any(|m| m.signature_id == signature_id)
    }
}

struct Window<'a> {
    head: Cow<'a, [u8]>,
    tail: Cow<'a, [u8]>,
    len: u64,
}

impl<'a> Window<'a> {
    fn of_slice(data: &'a [u8]) -> Self {
        let n = data.len().min(READ_WINDOW);
        Self {
            head: Cow::Borrowed(&data[..n]),
            tail: Cow::Borrowed(&data[data.len() - n..]),
            len: data.len() as u64,
        }
    }
}

fn extension_of(name: &str) -> Option<String> {
    let file = name.rsplit(['/', '\\']).next()?;
    let (stem, ext) = file.rsplit_once('.')?;
    (!stem.is_empty() && !ext.is_empty()).then(|| ext.to_ascii_lowercase())
}

/// Local name of the first element in an XML document, skipping the
/// prolog, comments, processing instructions and doctype.
fn xml_root_name(head: &[u8]) -> Option<String> {
    let text = String::from_utf8_lossy(head);
    let mut rest = text.trim_start_matches('\u{feff}');
    loop {
        rest = rest.trim_start();
        if let Some(r) = rest.strip_prefix("<?") {
            rest = &r[r.find("?>")? + 2..];
        } else if let Some(r) = rest.strip_prefix("<!--") {
            rest = &r[r.find("-->")? + 3..];
        } else if let Some(r) = rest.strip_prefix("<!") {
            rest = &r[r.find('>')? + 1..];
        } else {
            let r = rest.strip_prefix('<')?;
            let end = r.find(|c: char| c.is_whitespace() || c == '>' || c == '/')?;
            let qname = &r[..end];
            let local = qname.rsplit(':').next().unwrap_or(qname);
            return (!local.is_empty()).then(|| local.to_owned());
        }
    }
}

/// Finds the first ZIP entry whose head matches `inner`.
fn zip_inner_match<R: Read + Seek>(
    reader: R,
    inner: &FormatSignature,
) -> Result<Option<String>, String> {
    let mut archive =
        zip::ZipArchive::new(reader).map_err(|e| format!("unreadable ZIP container: {e}"))?;
    for i in 0..archive.len().min(MAX_CONTAINER_ENTRIES) {
        let Ok(entry) = archive.by_index(i) else {
            continue;
        };
        if entry.is_dir() {
            continue;
        }
        let name = entry.name().to_owned();
        let mut head = Vec::new();
        if entry
            .take(READ_WINDOW as u64)
            .read_to_end(&mut head)
            .is_err()
        {
            continue;
        }
        if inner.match_magic(&Window::of_slice(&head)).is_some() {
            return Ok(Some(name));
        }
    }
    Ok(None)
}

fn identify_window<R, F>(
    w: &Window<'_>,
    name_hint: Option<&str>,
    signatures: &SignatureSet,
    mut open: F,
) -> IdentificationResult
where
    R: Read + Seek,
    F: FnMut() -> io::Result<R>,
{
    let ext = name_hint.and_then(extension_of);
    let mut matches = Vec::new();
    let mut warnings = Vec::new();
    let mut zip_failed = false;

    for sig in signatures.iter() {
        let ext_agrees = ext
            .as_ref()
            .is_some_and(|e| sig.extension_hints.iter().any(|h| h == e));
        let magic_at = sig.match_magic(w);
        let mut inner_item = None;

        let magic_ok = match (magic_at, &sig.container_rule) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(_), Some(rule)) => match (&rule.container, &rule.inner) {
                (ContainerKind::Zip, InnerMatcher::Signature(inner_id)) => {
                    let inner = signatures
                        .get(inner_id)
                        .expect("validated in SignatureSet::new");
                    if zip_failed {
                        false
                    } else {
                        let found = open()
                            .map_err(|e| format!("unreadable ZIP container: {e}"))
                            .and_then(|r| zip_inner_match(r, inner));
                        match found {
                            Ok(item) => {
                                inner_item = item;
                                inner_item.is_some()
                            }
                            Err(msg) => {
                                zip_failed = true;
                                warnings.push(format!(
                                    "{}: container rule skipped: {msg}",
                                    sig.signature_id
                                ));
                                false
                            }
                        }
                    }
                }
                (ContainerKind::Xml, InnerMatcher::XmlRoot(names)) => {
                    match xml_root_name(&w.head) {
                        Some(root) if names.contains(&root) => {
                            inner_item = Some(root);
                            true
                        }
                        _ => false,
                    }
                }
                (kind, inner) => {
                    warnings.push(format!(
                        "{}: container rule {kind:?} cannot use matcher {inner:?}",
                        sig.signature_id
                    ));
                    false
                }
            },
        };

        let kind = match (sig.heuristic, magic_ok, ext_agrees) {
            (true, true, true) => Some(MatchKind::Heuristic),
            (false, true, _) if sig.container_rule.is_some() => Some(MatchKind::Container),
            (false, true, _) => Some(MatchKind::Magic),
            (_, _, true) => Some(MatchKind::ExtensionOnly),
            _ => None,
        };
        let Some(kind) = kind else { continue };
        let byte_ranges = match (kind, magic_at) {
            (MatchKind::ExtensionOnly, _) | (_, None) => Vec::new(),
            (_, Some(start)) => vec![ByteRange {
                start,
                end: start + sig.magic.len() as u64,
            }],
        };
        matches.push(SignatureMatch {
            signature_id: sig.signature_id.clone(),
            format_name: sig.format_name.clone(),
            priority: sig.priority,
            evidence: Evidence {
                kind,
                byte_ranges,
                extension_agrees: ext_agrees,
                inner_item,
            },
        });
    }

    let verdict = if matches.iter().any(SignatureMatch::is_conclusive) {
        Verdict::Identified
    } else if matches.is_empty() {
        Verdict::Unknown
    } else {
        Verdict::Tentative
    };
    IdentificationResult {
        verdict,
        matches,
        warnings,
    }
}

/// Identifies an in-memory byte sequence. Only the first and last
/// [`READ_WINDOW`] bytes take part in magic matching.
pub fn identify_bytes(
    data: &[u8],
    name_hint: Option<&str>,
    signatures: &SignatureSet,
) -> IdentificationResult {
    let window = Window::of_slice(data);
    identify_window(&window, name_hint, signatures, || Ok(io::Cursor::new(data)))
}

/// Identifies a file on disk with bounded reads.
pub fn identify_file(path: &Path, signatures: &SignatureSet) -> io::Result<IdentificationResult> {
    let mut file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut head = Vec::new();
    (&mut file)
        .take(READ_WINDOW as u64)
        .read_to_end(&mut head)?;
    let tail = if len as usize <= READ_WINDOW {
        head.clone()
    } else {
        let mut tail = Vec::new();
        file.seek(SeekFrom::Start(len - READ_WINDOW as u64))?;
        (&mut file)
            .take(READ_WINDOW as u64)
            .read_to_end(&mut tail)?;
        tail
    };
    let window = Window {
        head: Cow::Owned(head),
        tail: Cow::Owned(tail),
        len,
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned());
    Ok(identify_window(
        &window,
        name.as_deref(),
        signatures,
        || File::open(path),
    ))
}

fn stub_id(signature_id: &str, label: &str) -> RecordId {
    let raw = if label.is_empty() {
        format!("draft-{signature_id}")
    } else {
        format!("draft-{signature_id}-{label}")
    };
    let cleaned: String = raw
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .take(128)
        .collect();
    RecordId::new(cleaned)
        .unwrap_or_else(|_| RecordId::new("draft-record").expect("static id is valid"))
}

/// Builds a draft registry record from an identification: element 1 from
/// the matched signature, element 2 from the STEP schema when a header is
/// available, and element 16 carrying the match evidence.
pub fn suggest_record_stub(
    result: &IdentificationResult,
    header: Option<&StepHeader>,
) -> Result<RiRecord, IdentError> {
    if result.verdict == Verdict::Unknown {
        return Err(IdentError::UnknownVerdict);
    }
    let best = result.best().ok_or(IdentError::UnknownVerdict)?;
    let label = header.map(|h| h.file_schema.join(",")).unwrap_or_default();
    let mut record = RiRecord::new_draft(
        stub_id(&best.signature_id, &label),
        best.format_name.clone(),
    );
    record.format_version_label = label.clone();
    record
        .elements
        .push(ContentElementValue::text(1, best.format_name.clone()));
    if !label.is_empty() {
        record.elements.push(ContentElementValue::text(2, label));
    }
    let evidence = result
        .matches
        .iter()
        .map(|m| {
            let ranges: Vec<String> = m
                .evidence
                .byte_ranges
                .iter()
                .map(|r| format!("{}..{}", r.start, r.end))
                .collect();
            format!(
                "{} ({:?}{}{}) bytes [{}]",
                m.signature_id,
                m.evidence.kind,
                if m.evidence.extension_agrees {
                    ", extension agrees"
                } else {
                    ""
                },
                m.evidence
                    .inner_item
                    .as_ref()
                    .map(|i| format!(", inner {i}"))
                    .unwrap_or_default(),
                ranges.join(", ")
            )
        })
        .collect();
    record.elements.push(ContentElementValue {
        element_id: 16,
        payload: Payload::ToolDescription(ToolDescription {
            tool_name: "bimcore format identification".into(),
            tool_version: Some(env!("CARGO_PKG_VERSION").into()),
            purpose: "recognition of formats by byte signature".into(),
            signature_ids: vec![best.signature_id.clone()],
            evidence,
        }),
        language: None,
        source_citation: None,
    });
    record.ri_subtype_tags = record.derived_subtypes();
    Ok(record)
}
