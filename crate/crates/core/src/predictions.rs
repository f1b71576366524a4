//! The shared predictions JSONL format.
//!
//! Perspectivist rows carry `annotator_id` + `label`, soft rows carry
//! `distribution`. Multi-binary distributions are written as per-label
//! yes-probabilities.

use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{Label, LabelSpace, SoftLabel};
use crate::error::{Error, Result};

/// `(item_id, annotator_id)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub item_id: String,
    pub annotator_id: String,
}

impl PairKey {
    pub fn new(item_id: impl Into<String>, annotator_id: impl Into<String>) -> Self {
        PairKey {
            item_id: item_id.into(),
            annotator_id: annotator_id.into(),
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.item_id, self.annotator_id)
    }
}

/// Where a perspectivist label came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Model,
    Fallback,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    /// Task A: item → soft label.
    pub soft: IndexMap<String, SoftLabel>,
    /// Task B: (item, annotator) → label.
    pub perspectivist: IndexMap<PairKey, Label>,
    pub provenance: IndexMap<PairKey, Provenance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotator_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distribution: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

impl Predictions {
    pub fn to_jsonl(&self, space: &LabelSpace) -> String {
        let mut out = String::new();
        for (item_id, soft) in &self.soft {
            let row = Row {
                item_id: item_id.clone(),
                annotator_id: None,
                label: None,
                distribution: Some(soft.to_vec()),
                provenance: None,
            };
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
        for (key, label) in &self.perspectivist {
            let row = Row {
                item_id: key.item_id.clone(),
                annotator_id: Some(key.annotator_id.clone()),
                label: Some(space.label_to_json(label)),
                distribution: None,
                provenance: self.provenance.get(key).copied(),
            };
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, space: &LabelSpace, file: &str) -> Result<Self> {
        let schema = |line: usize, field: &str, message: String| Error::Schema {
            file: file.to_string(),
            line,
            field: field.to_string(),
            message,
        };
        let mut preds = Predictions::default();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(line)
                .map_err(|e| schema(line_no, "<row>", e.to_string()))?;
            match (row.annotator_id, row.label, row.distribution) {
                (Some(annotator_id), Some(label), None) => {
                    let label = space
                        .label_from_json(&label)
                        .map_err(|m| schema(line_no, "label", m))?;
                    let key = PairKey::new(row.item_id, annotator_id);
                    if let Some(p) = row.provenance {
                        preds.provenance.insert(key.clone(), p);
                    }
                    if preds.perspectivist.insert(key.clone(), label).is_some() {
                        return Err(schema(line_no, "annotator_id", format!("duplicate row for {key}")));
                    }
                }
                (None, None, Some(dist)) => {
                    let soft = SoftLabel::from_vec(space, dist)
                        .map_err(|e| schema(line_no, "distribution", e.to_string()))?;
                    if preds.soft.insert(row.item_id.clone(), soft).is_some() {
                        return Err(schema(
                            line_no,
                            "item_id",
                            format!("duplicate distribution for item `{}`", row.item_id),
                        ));
                    }
                }
                _ => {
                    return Err(schema(
                        line_no,
                        "<row>",
                        "row must carry either annotator_id+label or distribution".into(),
                    ))
                }
            }
        }
        Ok(preds)
    }

    pub fn load(path: impl AsRef<Path>, space: &LabelSpace) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, space, &path.display().to_string())
    }

    pub fn write(&self, path: impl AsRef<Path>, space: &LabelSpace) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl(space)).map_err(|e| Error::io(path, e))
    }

    /// Merge `other` into `self`; rows in `other` win.
    pub fn extend(&mut self, other: Predictions) {
        self.soft.extend(other.soft);
        self.perspectivist.extend(other.perspectivist);
        self.provenance.extend(other.provenance);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Distribution;

    #[test]
    fn rows_round_trip() {
        let space = LabelSpace::ordinal(1, 3).unwrap();
        let mut p = Predictions::default();
        p.soft.insert(
            "i1".into(),
            SoftLabel::Single(Distribution::new(vec![0.25, 0.25, 0.5]).unwrap()),
        );
        p.perspectivist.insert(PairKey::new("i1", "a"), Label::Class(2));
        p.provenance.insert(PairKey::new("i1", "a"), Provenance::Fallback);
        let text = p.to_jsonl(&space);
        assert!(text.contains(r#"{"item_id":"i1","annotator_id":"a","label":3,"provenance":"fallback"}"#));
        assert_eq!(Predictions::parse(&text, &space, "p").unwrap(), p);
    }

    #[test]
    fn malformed_rows_rejected() {
        let space = LabelSpace::ordinal(1, 3).unwrap();
        assert!(Predictions::parse(r#"{"item_id":"i","label":2}"#, &space, "p").is_err());
        assert!(Predictions::parse(r#"{"item_id":"i","annotator_id":"a","label":9}"#, &space, "p").is_err());
        assert!(Predictions::parse(r#"{"item_id":"i","distribution":[0.5,0.6,0]}"#, &space, "p").is_err());
    }
}
