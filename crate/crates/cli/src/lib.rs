//! Operator surface for the bimcore registry: the `bimcore` command line and
//! a read-only JSON query endpoint.
//!
//! Both surfaces build query views through [`ViewParams`], so a query typed
//! on the command line and the same query sent over HTTP select the same
//! records.

pub mod api;
pub mod cli;

use std::str::FromStr;

use bimcore::model::{BimcoreCategory, RecordStatus, Relation};
use bimcore::registry::{QueryFilter, QueryView, Role};

pub use cli::run;

/// Role view plus the optional filters shared by `query` and `GET /records`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewParams {
    pub role: Role,
    pub category: Option<BimcoreCategory>,
    pub elements: Vec<u8>,
    pub relation: Option<Relation>,
    pub status: Option<RecordStatus>,
}

impl ViewParams {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            category: None,
            elements: Vec::new(),
            relation: None,
            status: None,
        }
    }

    pub fn to_view(&self) -> QueryView {
        let mut filters = Vec::new();
        if let Some(c) = self.category {
            filters.push(QueryFilter::Category(c));
        }
        if !self.elements.is_empty() {
            filters.push(QueryFilter::Elements(self.elements.clone()));
        }
        if let Some(r) = self.relation {
            filters.push(QueryFilter::HasRelation(r));
        }
        if let Some(s) = self.status {
            filters.push(QueryFilter::Status(s));
        }
        QueryView {
            role: self.role,
            filters,
        }
    }
}

pub fn parse_role(s: &str) -> Result<Role, String> {
    Role::from_str(s)
}

pub fn parse_category(s: &str) -> Result<BimcoreCategory, String> {
    match s {
        "structural-semantic" => Ok(BimcoreCategory::StructuralSemantic),
        "tooling" => Ok(BimcoreCategory::Tooling),
        "context" => Ok(BimcoreCategory::Context),
        other => Err(format!(
            "unknown category {other:?}; expected structural-semantic, tooling or context"
        )),
    }
}

pub fn parse_relation(s: &str) -> Result<Relation, String> {
    Relation::ALL
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| {
            let names: Vec<_> = Relation::ALL.iter().map(|r| r.as_str()).collect();
            format!(
                "unknown relation {s:?}; expected one of {}",
                names.join(", ")
            )
        })
}

pub fn parse_status(s: &str) -> Result<RecordStatus, String> {
    [
        RecordStatus::Draft,
        RecordStatus::Published,
        RecordStatus::Superseded,
        RecordStatus::Withdrawn,
    ]
    .into_iter()
    .find(|st| st.as_str() == s)
    .ok_or_else(|| {
        format!("unknown status {s:?}; expected draft, published, superseded or withdrawn")
    })
}

/// Parses a content element id in 1..=23.
pub fn parse_element(s: &str) -> Result<u8, String> {
    match s.trim().parse::<u8>() {
        Ok(id @ 1..=23) => Ok(id),
        _ => Err(format!("element id {s:?} is not in 1..=23")),
    }
}

/// Parses a comma-separated list of element ids.
pub fn parse_element_list(s: &str) -> Result<Vec<u8>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(parse_element)
        .collect()
}
