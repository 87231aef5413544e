use serde::{Deserialize, Serialize};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: String,
    pub passed: bool,
    /// Byte offset of the failure, for checks over a byte stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<u64>,
    /// Files implicated in the failure.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckOutcome {
    pub fn pass(check: &str) -> Self {
        Self {
            check: check.to_owned(),
            passed: true,
            offset: None,
            paths: Vec::new(),
            detail: None,
        }
    }

    pub fn fail(check: &str, detail: impl Into<String>) -> Self {
        Self {
            check: check.to_owned(),
            passed: false,
            offset: None,
            paths: Vec::new(),
            detail: Some(detail.into()),
        }
    }

    pub fn at(mut self, offset: u64) -> Self {
        self.offset = Some(offset);
        self
    }

    pub fn with_paths(mut self, paths: Vec<String>) -> Self {
        self.paths = paths;
        self
    }
}

/// Pass/fail list produced by the format and package verifiers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckOutcome>,
    /// Smallest offset among failed checks that carry one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failure_offset: Option<u64>,
}

impl VerificationReport {
    pub fn from_checks(checks: Vec<CheckOutcome>) -> Self {
        let first_failure_offset = checks
            .iter()
            .filter(|c| !c.passed)
            .filter_map(|c| c.offset)
            .min();
        Self {
            checks,
            first_failure_offset,
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.check == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}
