//! Six-attribute text annotations and their validation.
//!
//! Every anomalous sample can carry a record with six attributes: location,
//! color, shape, area_size, quantity, reason. Fields are optional at the type
//! level so that incomplete records can be represented and reported; the
//! validator is what decides validity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imgio::{self, MaskBuffer};

use super::grid::{grid_location, LOCATION_VOCABULARY};
use super::{DatasetManifest, Label};

/// Location is one descriptor or a list, one per defect instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LocationField {
    One(String),
    Many(Vec<String>),
}

impl LocationField {
    pub fn tokens(&self) -> Vec<&str> {
        match self {
            LocationField::One(s) => vec![s.as_str()],
            LocationField::Many(v) => v.iter().map(String::as_str).collect(),
        }
    }

    pub fn from_tokens(mut tokens: Vec<String>) -> Self {
        if tokens.len() == 1 {
            LocationField::One(tokens.remove(0))
        } else {
            LocationField::Many(tokens)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotationRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<LocationField>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub area_size: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantity: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub severity: Severity,
    pub message: String,
}

fn error(msg: impl Into<String>) -> Violation {
    Violation {
        severity: Severity::Error,
        message: msg.into(),
    }
}

fn warning(msg: impl Into<String>) -> Violation {
    Violation {
        severity: Severity::Warning,
        message: msg.into(),
    }
}

/// Checks the six-field schema, the location vocabulary, quantity and string
/// contents. When the paired mask is available, the declared location is
/// cross-checked against the mask's grid cells; a mismatch is a warning, not
/// an error. An empty result means the record is fully valid.
pub fn validate_annotation(record: &AnnotationRecord, mask: Option<&MaskBuffer>) -> Vec<Violation> {
    let mut out = Vec::new();

    if record.location.is_none() {
        out.push(error("missing: location"));
    }
    for (name, field) in [
        ("color", &record.color),
        ("shape", &record.shape),
        ("area_size", &record.area_size),
        ("reason", &record.reason),
    ] {
        match field {
            None => out.push(error(format!("missing: {name}"))),
            Some(s) if s.trim().is_empty() => out.push(error(format!("empty: {name}"))),
            Some(_) => {}
        }
    }
    match record.quantity {
        None => out.push(error("missing: quantity")),
        Some(0) => out.push(error("quantity must be at least 1")),
        Some(_) => {}
    }

    if let Some(loc) = &record.location {
        let tokens = loc.tokens();
        if tokens.is_empty() {
            out.push(error("empty: location"));
        }
        for token in &tokens {
            if !LOCATION_VOCABULARY.contains(token) {
                out.push(error(format!("unknown location token {token:?}")));
            }
        }
        if let Some(mask) = mask {
            if let Ok(cells) = grid_location(mask) {
                let declared_ok = tokens.iter().any(|t| cells.iter().any(|c| c == t));
                if !declared_ok {
                    out.push(warning(format!(
                        "location {:?} disagrees with the mask (grid cells {:?})",
                        tokens, cells
                    )));
                }
            }
        }
    }
    out
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct AnnotateSummary {
    pub annotated: usize,
    pub skipped: usize,
    pub failures: Vec<String>,
}

/// Computes 3x3 grid locations from each anomalous sample's mask and writes
/// them into the manifest's annotation records (new records start with only
/// the location; the other five attributes come from an external source).
pub fn annotate_locations(manifest: &mut DatasetManifest, root: &Path) -> Result<AnnotateSummary> {
    let mut summary = AnnotateSummary::default();
    for cat in &mut manifest.categories {
        for sample in &mut cat.samples {
            if sample.label != Label::Anomalous {
                continue;
            }
            let Some(mask_rel) = &sample.mask else {
                summary.skipped += 1;
                continue;
            };
            let mask_path = root.join(mask_rel);
            let mask = match imgio::load_mask(&mask_path) {
                Ok(mask) => mask,
                Err(e) => {
                    summary.failures.push(format!("{mask_rel}: {e}"));
                    continue;
                }
            };
            match grid_location(&mask) {
                Ok(cells) => {
                    let record = sample
                        .annotation
                        .get_or_insert_with(AnnotationRecord::default);
                    record.location = Some(LocationField::from_tokens(cells));
                    summary.annotated += 1;
                }
                Err(e) => summary.failures.push(format!("{mask_rel}: {e}")),
            }
        }
    }
    Ok(summary)
}
