//! Records of things set aside or worth a second look.

use serde::{Deserialize, Serialize};

/// Something a stage could not process and set aside instead of dropping
/// silently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quarantined {
    pub stage: String,
    pub subject: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub raw_response: String,
}

/// Informational note attached to a stage's output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditNote {
    pub stage: String,
    pub subject: String,
    pub note: String,
}

impl AuditNote {
    pub fn new(stage: &str, subject: impl Into<String>, note: impl Into<String>) -> Self {
        Self { stage: stage.to_string(), subject: subject.into(), note: note.into() }
    }
}
