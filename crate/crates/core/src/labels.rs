//! Canonical label list and the uncertainty-resolution policy.
//!
//! Raw CheXpert labels carry four states: positive, negative, uncertain and
//! blank (not mentioned in the report). Training needs a binary target per
//! slot, so every uncertain label is mapped either to positive ("u-one") or
//! negative ("u-zero") depending on the label, and blanks are mapped to a
//! configured value.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_LABELS: usize = 14;

pub const LABEL_NAMES: [&str; N_LABELS] = [
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
];

/// The 14 observation names in canonical order.
pub fn label_names() -> Vec<String> {
    LABEL_NAMES.iter().map(|s| s.to_string()).collect()
}

pub fn label_index(name: &str) -> Option<usize> {
    LABEL_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RawLabel {
    Positive,
    Negative,
    Uncertain,
    Blank,
}

impl RawLabel {
    pub const ALL: [RawLabel; 4] = [
        RawLabel::Positive,
        RawLabel::Negative,
        RawLabel::Uncertain,
        RawLabel::Blank,
    ];

    /// Parses a manifest cell. Accepts any numeric spelling of 1, 0 and -1.
    pub fn parse_cell(cell: &str) -> Option<RawLabel> {
        let cell = cell.trim();
        if cell.is_empty() {
            return Some(RawLabel::Blank);
        }
        let value: f64 = cell.parse().ok()?;
        if value == 1.0 {
            Some(RawLabel::Positive)
        } else if value == 0.0 {
            Some(RawLabel::Negative)
        } else if value == -1.0 {
            Some(RawLabel::Uncertain)
        } else {
            None
        }
    }

    /// Cell text in the CheXpert spelling.
    pub fn as_cell(self) -> &'static str {
        match self {
            RawLabel::Positive => "1.0",
            RawLabel::Negative => "0.0",
            RawLabel::Uncertain => "-1.0",
            RawLabel::Blank => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawLabelVector(pub [RawLabel; N_LABELS]);

impl RawLabelVector {
    pub fn blank() -> Self {
        RawLabelVector([RawLabel::Blank; N_LABELS])
    }

    pub fn get(&self, index: usize) -> RawLabel {
        self.0[index]
    }
}

/// Binary training target, one entry per canonical label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TargetVector(pub [u8; N_LABELS]);

impl TargetVector {
    pub fn as_f32(&self) -> [f32; N_LABELS] {
        self.0.map(f32::from)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Labels whose uncertain value is treated as positive.
    #[serde(default = "default_u_one")]
    pub u_one_labels: Vec<String>,
    /// Target assigned to blank cells.
    #[serde(default)]
    pub blank_as: u8,
    /// Exclude blank slots from the loss instead of assigning `blank_as`.
    #[serde(default)]
    pub mask_blanks: bool,
}

fn default_u_one() -> Vec<String> {
    vec!["Atelectasis".to_string(), "Edema".to_string()]
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            u_one_labels: default_u_one(),
            blank_as: 0,
            mask_blanks: false,
        }
    }
}

impl PolicyConfig {
    pub fn all_u_one() -> Self {
        PolicyConfig {
            u_one_labels: label_names(),
            ..Default::default()
        }
    }

    pub fn all_u_zero() -> Self {
        PolicyConfig {
            u_one_labels: Vec::new(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for name in &self.u_one_labels {
            if label_index(name).is_none() {
                return Err(Error::Config(format!("unknown u-one label `{name}`")));
            }
        }
        if self.blank_as > 1 {
            return Err(Error::Config(format!(
                "blank_as must be 0 or 1, got {}",
                self.blank_as
            )));
        }
        Ok(())
    }

    fn u_one_mask(&self) -> [bool; N_LABELS] {
        let set: BTreeSet<&str> = self.u_one_labels.iter().map(String::as_str).collect();
        LABEL_NAMES.map(|name| set.contains(name))
    }
}

pub fn resolve_targets(raw: &RawLabelVector, policy: &PolicyConfig) -> TargetVector {
    let u_one = policy.u_one_mask();
    let mut out = [0u8; N_LABELS];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = match raw.0[k] {
            RawLabel::Positive => 1,
            RawLabel::Negative => 0,
            RawLabel::Uncertain => u8::from(u_one[k]),
            RawLabel::Blank => policy.blank_as,
        };
    }
    TargetVector(out)
}

/// Per-slot loss weights: 0 for blanks when the policy masks them, else 1.
pub fn loss_mask(raw: &RawLabelVector, policy: &PolicyConfig) -> [f32; N_LABELS] {
    raw.0.map(|v| {
        if policy.mask_blanks && v == RawLabel::Blank {
            0.0
        } else {
            1.0
        }
    })
}

impl fmt::Display for RawLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RawLabel::Positive => "positive",
            RawLabel::Negative => "negative",
            RawLabel::Uncertain => "uncertain",
            RawLabel::Blank => "blank",
        })
    }
}
