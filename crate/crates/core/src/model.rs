//! BIMcore record schema.
//!
//! A registry entry ([`RiRecord`]) describes one format, or one tailoring of a
//! format, through values for the 23 BIMcore content elements. The elements
//! fall into three categories: structural/semantic features (1-15), tools for
//! format handling (16-18) and contexts (19-23). Elements that carry
//! representation information are mapped onto the OAIS subtypes by
//! [`classify_ri_subtype`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of BIMcore content elements.
pub const ELEMENT_COUNT: u8 = 23;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown content element {0} (valid ids are 1..=23)")]
    UnknownElement(u8),
    #[error(
        "invalid identifier {0:?}: use 1-128 characters from [A-Za-z0-9._-], not starting with '.'"
    )]
    InvalidId(String),
}

/// Identifier for records, properties and context entries.
///
/// Identifiers double as directory and file names in the store, so the
/// character set is restricted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RecordId(String);

impl RecordId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        let valid = !id.is_empty()
            && id.len() <= 128
            && !id.starts_with('.')
            && id
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
        if valid {
            Ok(Self(id))
        } else {
            Err(ModelError::InvalidId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for RecordId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<RecordId> for String {
    fn from(value: RecordId) -> Self {
        value.0
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for RecordId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BimcoreCategory {
    StructuralSemantic,
    Tooling,
    Context,
}

impl BimcoreCategory {
    pub fn of(element_id: u8) -> Result<Self, ModelError> {
        match element_id {
            1..=15 => Ok(Self::StructuralSemantic),
            16..=18 => Ok(Self::Tooling),
            19..=23 => Ok(Self::Context),
            other => Err(ModelError::UnknownElement(other)),
        }
    }

    pub fn element_ids(self) -> std::ops::RangeInclusive<u8> {
        match self {
            Self::StructuralSemantic => 1..=15,
            Self::Tooling => 16..=18,
            Self::Context => 19..=23,
        }
    }
}

/// Kind of payload an element accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueKind {
    Text,
    StructuredReference,
    ExternalLink,
    ToolDescription,
    ContextEntry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContentElementDef {
    pub id: u8,
    pub category: BimcoreCategory,
    pub name: &'static str,
    pub value_kind: ValueKind,
    pub repeatable: bool,
    pub required_for_publication: bool,
}

const fn def(
    id: u8,
    category: BimcoreCategory,
    name: &'static str,
    value_kind: ValueKind,
) -> ContentElementDef {
    ContentElementDef {
        id,
        category,
        name,
        value_kind,
        // one canonical name, version and openness statement per format
        repeatable: !matches!(id, 1 | 2 | 5),
        required_for_publication: id == 1,
    }
}

static ELEMENT_DEFS: [ContentElementDef; 23] = {
    use BimcoreCategory::*;
    use ValueKind::*;
    [
        def(
            1,
            StructuralSemantic,
            "name, identifier and classifications of the format",
            Text,
        ),
        def(
            2,
            StructuralSemantic,
            "version of the format or reference to other versions",
            Text,
        ),
        def(
            3,
            StructuralSemantic,
            "references to existing repositories or registries",
            ExternalLink,
        ),
        def(
            4,
            StructuralSemantic,
            "forward and backward compatibility issues",
            Text,
        ),
        def(
            5,
            StructuralSemantic,
            "openness of the format and availability of specifications",
            Text,
        ),
        def(
            6,
            StructuralSemantic,
            "rights, intellectual property and reengineering tools",
            Text,
        ),
        def(
            7,
            StructuralSemantic,
            "syntax (formal structure) and semantics",
            Text,
        ),
        def(
            8,
            StructuralSemantic,
            "encoding of fundamental elements (numbers, texts, colors)",
            Text,
        ),
        def(
            9,
            StructuralSemantic,
            "compression, data reduction and encryption",
            Text,
        ),
        def(
            10,
            StructuralSemantic,
            "external standards or documents used by the specification",
            ExternalLink,
        ),
        def(
            11,
            StructuralSemantic,
            "self-documentation capabilities",
            Text,
        ),
        def(
            12,
            StructuralSemantic,
            "resolvability of external references (materialization)",
            Text,
        ),
        def(
            13,
            StructuralSemantic,
            "dependencies on software and hardware",
            StructuredReference,
        ),
        def(
            14,
            StructuralSemantic,
            "options for tailoring the format to purposes or contexts",
            StructuredReference,
        ),
        def(
            15,
            StructuralSemantic,
            "background and fundamentals (other representation information)",
            StructuredReference,
        ),
        def(
            16,
            Tooling,
            "software tools for the recognition of formats",
            ToolDescription,
        ),
        def(
            17,
            Tooling,
            "software tools for the verification of formats and tailored versions",
            ToolDescription,
        ),
        def(
            18,
            Tooling,
            "software tools for inspection and (simplified) presentation",
            ToolDescription,
        ),
        def(
            19,
            Context,
            "typical contexts of origin and significant properties",
            ContextEntry,
        ),
        def(
            20,
            Context,
            "building-specific context information",
            ContextEntry,
        ),
        def(
            21,
            Context,
            "repositories of use cases or significant properties",
            ExternalLink,
        ),
        def(
            22,
            Context,
            "acceptance and frequency of use within a context",
            ContextEntry,
        ),
        def(
            23,
            Context,
            "sources of background and fundamentals",
            ExternalLink,
        ),
    ]
};

/// The fixed BIMcore schema, ordered by element id.
pub fn builtin_element_defs() -> &'static [ContentElementDef] {
    &ELEMENT_DEFS
}

pub fn element_def(element_id: u8) -> Result<&'static ContentElementDef, ModelError> {
    match element_id {
        1..=ELEMENT_COUNT => Ok(&ELEMENT_DEFS[usize::from(element_id) - 1]),
        other => Err(ModelError::UnknownElement(other)),
    }
}

/// OAIS representation-information subtypes plus the two special types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiSubtype {
    StructureInformation,
    SemanticInformation,
    OtherRepresentationInformation,
    RepresentationRenderingSoftware,
    AccessSoftware,
}

impl RiSubtype {
    pub const ALL: [RiSubtype; 5] = [
        Self::StructureInformation,
        Self::SemanticInformation,
        Self::OtherRepresentationInformation,
        Self::RepresentationRenderingSoftware,
        Self::AccessSoftware,
    ];
}

/// RI subtypes an element contributes to. Identification metadata, rights
/// and context elements contribute nothing.
pub fn classify_element(element_id: u8) -> Result<BTreeSet<RiSubtype>, ModelError> {
    use RiSubtype::*;
    let subtypes: &[RiSubtype] = match element_id {
        7 => &[StructureInformation, SemanticInformation],
        8 | 9 => &[StructureInformation],
        12 => &[SemanticInformation],
        15..=17 => &[OtherRepresentationInformation],
        18 => &[AccessSoftware],
        1..=ELEMENT_COUNT => &[],
        other => return Err(ModelError::UnknownElement(other)),
    };
    Ok(subtypes.iter().copied().collect())
}

pub fn classify_ri_subtype(value: &ContentElementValue) -> Result<BTreeSet<RiSubtype>, ModelError> {
    classify_element(value.element_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Draft,
    Published,
    Superseded,
    Withdrawn,
}

impl RecordStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Draft => "draft",
            Self::Published => "published",
            Self::Superseded => "superseded",
            Self::Withdrawn => "withdrawn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    PreviousVersionOf,
    TailoringOf,
    ContainerMemberOf,
    Supersedes,
    RequiresRi,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Self::PreviousVersionOf,
        Self::TailoringOf,
        Self::ContainerMemberOf,
        Self::Supersedes,
        Self::RequiresRi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PreviousVersionOf => "previous-version-of",
            Self::TailoringOf => "tailoring-of",
            Self::ContainerMemberOf => "container-member-of",
            Self::Supersedes => "supersedes",
            Self::RequiresRi => "requires-ri",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelatedRecord {
    pub relation: Relation,
    pub record_id: RecordId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextKind {
    OriginContext,
    BuildingSpecific,
    ExternalUseCaseRepo,
    AcceptanceProfile,
    Background,
}

impl ContextKind {
    /// The context element (19-23) this kind belongs to.
    pub fn element_id(self) -> u8 {
        match self {
            Self::OriginContext => 19,
            Self::BuildingSpecific => 20,
            Self::ExternalUseCaseRepo => 21,
            Self::AcceptanceProfile => 22,
            Self::Background => 23,
        }
    }

    pub fn for_element(element_id: u8) -> Option<Self> {
        match element_id {
            19 => Some(Self::OriginContext),
            20 => Some(Self::BuildingSpecific),
            21 => Some(Self::ExternalUseCaseRepo),
            22 => Some(Self::AcceptanceProfile),
            23 => Some(Self::Background),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextBody {
    Text(String),
    ExternalLink(String),
}

impl ContextBody {
    pub fn as_str(&self) -> &str {
        match self {
            Self::Text(s) | Self::ExternalLink(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub entry_id: RecordId,
    pub kind: ContextKind,
    pub body: ContextBody,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance_note: Option<String>,
}

/// Description of a software tool (elements 16-18).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescription {
    pub tool_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
    pub purpose: String,
    /// Identification signatures the tool applies; ingest links files
    /// matched by these signatures to the record.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signature_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "value_kind", rename_all = "kebab-case")]
pub enum Payload {
    Text {
        text: String,
    },
    StructuredReference {
        target: String,
        description: String,
    },
    ExternalLink {
        uri: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        title: Option<String>,
    },
    ToolDescription(ToolDescription),
    ContextEntry(ContextEntry),
}

impl Payload {
    pub fn kind(&self) -> ValueKind {
        match self {
            Self::Text { .. } => ValueKind::Text,
            Self::StructuredReference { .. } => ValueKind::StructuredReference,
            Self::ExternalLink { .. } => ValueKind::ExternalLink,
            Self::ToolDescription(_) => ValueKind::ToolDescription,
            Self::ContextEntry(_) => ValueKind::ContextEntry,
        }
    }

    /// Every human-readable string in the payload, in field order.
    pub fn texts(&self) -> Vec<&str> {
        match self {
            Self::Text { text } => vec![text],
            Self::StructuredReference {
                target,
                description,
            } => vec![target, description],
            Self::ExternalLink { uri, title } => {
                let mut out = vec![uri.as_str()];
                out.extend(title.as_deref());
                out
            }
            Self::ToolDescription(tool) => {
                let mut out = vec![tool.tool_name.as_str()];
                out.extend(tool.tool_version.as_deref());
                out.push(&tool.purpose);
                out.extend(tool.signature_ids.iter().map(String::as_str));
                out.extend(tool.evidence.iter().map(String::as_str));
                out
            }
            Self::ContextEntry(entry) => {
                let mut out = vec![entry.body.as_str()];
                out.extend(entry.provenance_note.as_deref());
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentElementValue {
    pub element_id: u8,
    pub payload: Payload,
    /// BCP-47 tag for textual payloads.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_citation: Option<String>,
}

impl ContentElementValue {
    pub fn text(element_id: u8, text: impl Into<String>) -> Self {
        Self {
            element_id,
            payload: Payload::Text { text: text.into() },
            language: None,
            source_citation: None,
        }
    }

    pub fn with_language(mut self, tag: impl Into<String>) -> Self {
        self.language = Some(tag.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiRecord {
    pub record_id: RecordId,
    pub version: u64,
    pub status: RecordStatus,
    pub format_name: String,
    pub format_version_label: String,
    pub ri_subtype_tags: BTreeSet<RiSubtype>,
    pub elements: Vec<ContentElementValue>,
    pub related_records: Vec<RelatedRecord>,
    pub created: DateTime<Utc>,
    pub modified: DateTime<Utc>,
    /// Marks a format that needs no further representation information
    /// (for example plain text); such records terminate RI closures.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub self_describing: bool,
}

impl RiRecord {
    pub fn new_draft(record_id: RecordId, format_name: impl Into<String>) -> Self {
        let now = Utc::now();
        Self {
            record_id,
            version: 0,
            status: RecordStatus::Draft,
            format_name: format_name.into(),
            format_version_label: String::new(),
            ri_subtype_tags: BTreeSet::new(),
            elements: Vec::new(),
            related_records: Vec::new(),
            created: now,
            modified: now,
            self_describing: false,
        }
    }

    pub fn values_for(&self, element_id: u8) -> impl Iterator<Item = &ContentElementValue> {
        self.elements
            .iter()
            .filter(move |v| v.element_id == element_id)
    }

    pub fn has_element(&self, element_id: u8) -> bool {
        self.values_for(element_id).next().is_some()
    }

    /// Targets of `requires-ri` relations, in declaration order.
    pub fn required_ri(&self) -> impl Iterator<Item = &RecordId> {
        self.related_records
            .iter()
            .filter(|r| r.relation == Relation::RequiresRi)
            .map(|r| &r.record_id)
    }

    /// Union of the RI subtypes contributed by the record's element values.
    pub fn derived_subtypes(&self) -> BTreeSet<RiSubtype> {
        self.elements
            .iter()
            .filter_map(|v| classify_element(v.element_id).ok())
            .flatten()
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// A characteristic of an information object that must be kept intact
/// across migrations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignificantProperty {
    pub property_id: RecordId,
    pub name: String,
    pub statement: String,
    pub assessment_hint: String,
    pub applies_to: Vec<PropertyTarget>,
    pub status: RecordStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PropertyTarget {
    Record { record_id: RecordId },
    Object { identifier: String },
}

impl SignificantProperty {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.statement.trim().is_empty() {
            problems.push("statement is empty".to_owned());
        }
        if self.status == RecordStatus::Published && self.applies_to.is_empty() {
            problems
                .push("published property must apply to at least one record or object".to_owned());
        }
        problems
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "on", rename_all = "kebab-case")]
pub enum ViolationTarget {
    Element {
        element_id: u8,
    },
    Relation {
        relation: Relation,
        record_id: RecordId,
    },
    Field {
        field: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(flatten)]
    pub target: ViolationTarget,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, target: ViolationTarget, message: impl Into<String>) {
        self.violations.push(Violation {
            target,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            match &v.target {
                ViolationTarget::Element { element_id } => {
                    writeln!(f, "element {element_id}: {}", v.message)?
                }
                ViolationTarget::Relation {
                    relation,
                    record_id,
                } => writeln!(f, "{} -> {record_id}: {}", relation.as_str(), v.message)?,
                ViolationTarget::Field { field } => writeln!(f, "{field}: {}", v.message)?,
            }
        }
        Ok(())
    }
}

/// Loose BCP-47 shape check: alphanumeric subtags of 1-8 characters, the
/// first purely alphabetic.
fn is_language_tag(tag: &str) -> bool {
    let mut parts = tag.split('-');
    let Some(primary) = parts.next() else {
        return false;
    };
    let subtag_ok =
        |s: &str| (1..=8).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_alphanumeric());
    subtag_ok(primary) && primary.bytes().all(|b| b.is_ascii_alphabetic()) && parts.all(subtag_ok)
}

/// Checks a record against the element definitions.
///
/// Structural checks (known element ids, payload kinds, cardinality,
/// language tags) apply at every status. Element 1 and referential
/// integrity of `related_records` are only required for published records.
pub fn validate_record(
    record: &RiRecord,
    defs: &[ContentElementDef],
    existing_ids: &BTreeSet<RecordId>,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let by_id: BTreeMap<u8, &ContentElementDef> = defs.iter().map(|d| (d.id, d)).collect();
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();

    for value in &record.elements {
        let target = ViolationTarget::Element {
            element_id: value.element_id,
        };
        let Some(def) = by_id.get(&value.element_id) else {
            report.push(target, "unknown content element");
            continue;
        };
        *counts.entry(value.element_id).or_default() += 1;

        let kind = value.payload.kind();
        if kind != def.value_kind {
            report.push(
                target.clone(),
                format!(
                    "payload kind {kind:?} does not match element kind {:?}",
                    def.value_kind
                ),
            );
        }
        if let Payload::ContextEntry(entry) = &value.payload {
            if entry.kind.element_id() != value.element_id {
                report.push(
                    target.clone(),
                    format!(
                        "context kind {:?} belongs to element {}",
                        entry.kind,
                        entry.kind.element_id()
                    ),
                );
            }
        }
        if let Some(tag) = &value.language {
            if !is_language_tag(tag) {
                report.push(target, format!("malformed language tag {tag:?}"));
            }
        }
    }

    for (&element_id, &n) in &counts {
        if n > 1 && !by_id[&element_id].repeatable {
            report.push(
                ViolationTarget::Element { element_id },
                format!("element is not repeatable but has {n} values"),
            );
        }
    }

    if record.status == RecordStatus::Published {
        for def in defs.iter().filter(|d| d.required_for_publication) {
            if counts.get(&def.id).copied().unwrap_or(0) == 0 {
                report.push(
                    ViolationTarget::Element { element_id: def.id },
                    "required for publication but missing",
                );
            }
        }
        for rel in &record.related_records {
            if !existing_ids.contains(&rel.record_id) {
                report.push(
                    ViolationTarget::Relation {
                        relation: rel.relation,
                        record_id: rel.record_id.clone(),
                    },
                    "related record does not exist",
                );
            }
        }
    }

    report
}
