//! Label spaces, distributions and the unaggregated annotation dataset.
//!
//! A dataset file is JSONL: the first line is a header declaring the dataset
//! name and its label space, every following line is one item with its split,
//! named text segments and the raw per-annotator annotations.
//!
//! ```text
//! {"name":"csc","label_space":{"kind":"ordinal","labels":["1",...,"6"],"likert_min":1,"likert_max":6}}
//! {"item_id":"i1","split":"train","text_fields":{"context":"...","response":"..."},
//!  "annotations":[{"annotator_id":"a1","label":3,"explanation":"..."}]}
//! ```
//!
//! Label encoding on disk depends on the space: ordinal labels are Likert
//! integers, categorical labels are label names, multi-binary labels are the
//! array of base-label names the annotator marked as applying.

use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Sum-to-one tolerance for probability vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Categorical,
    #[serde(alias = "ordinal_likert")]
    Ordinal,
    MultiBinary,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LabelKind::Categorical => "categorical",
            LabelKind::Ordinal => "ordinal",
            LabelKind::MultiBinary => "multi-binary",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub kind: LabelKind,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likert_min: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likert_max: Option<i64>,
}

impl LabelSpace {
    pub fn categorical<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let space = LabelSpace {
            kind: LabelKind::Categorical,
            labels: labels.into_iter().map(Into::into).collect(),
            likert_min: None,
            likert_max: None,
        };
        space.validate()?;
        Ok(space)
    }

    /// Likert scale `min..=max`; label names are the integer values.
    pub fn ordinal(likert_min: i64, likert_max: i64) -> Result<Self> {
        if likert_max <= likert_min {
            return Err(Error::LabelSpace(format!(
                "likert_max ({likert_max}) must exceed likert_min ({likert_min})"
            )));
        }
        let space = LabelSpace {
            kind: LabelKind::Ordinal,
            labels: (likert_min..=likert_max).map(|v| v.to_string()).collect(),
            likert_min: Some(likert_min),
            likert_max: Some(likert_max),
        };
        space.validate()?;
        Ok(space)
    }

    pub fn multi_binary<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let space = LabelSpace {
            kind: LabelKind::MultiBinary,
            labels: labels.into_iter().map(Into::into).collect(),
            likert_min: None,
            likert_max: None,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::LabelSpace("labels must be non-empty".into()));
        }
        let unique: IndexSet<&str> = self.labels.iter().map(String::as_str).collect();
        if unique.len() != self.labels.len() {
            return Err(Error::LabelSpace("labels must be unique".into()));
        }
        match self.kind {
            LabelKind::Ordinal => {
                let (Some(lo), Some(hi)) = (self.likert_min, self.likert_max) else {
                    return Err(Error::LabelSpace(
                        "ordinal spaces need likert_min and likert_max".into(),
                    ));
                };
                if hi <= lo {
                    return Err(Error::LabelSpace(format!(
                        "likert_max ({hi}) must exceed likert_min ({lo})"
                    )));
                }
                if (hi - lo + 1) as usize != self.labels.len() {
                    return Err(Error::LabelSpace(format!(
                        "ordinal space {lo}..={hi} needs {} labels, found {}",
                        hi - lo + 1,
                        self.labels.len()
                    )));
                }
            }
            LabelKind::Categorical | LabelKind::MultiBinary => {
                if self.likert_min.is_some() || self.likert_max.is_some() {
                    return Err(Error::LabelSpace(format!(
                        "likert bounds are only valid for ordinal spaces, not {}",
                        self.kind
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of classes (categorical/ordinal) or base labels (multi-binary).
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_ordinal(&self) -> bool {
        self.kind == LabelKind::Ordinal
    }

    /// `likert_max - likert_min`, the span used by ANAD.
    pub fn likert_range(&self) -> Option<i64> {
        Some(self.likert_max? - self.likert_min?)
    }

    /// Likert integer for a 0-based ordinal index.
    pub fn ordinal_value(&self, index: usize) -> Option<i64> {
        let lo = self.likert_min?;
        (index < self.len()).then(|| lo + index as i64)
    }

    pub fn ordinal_index(&self, value: i64) -> Option<usize> {
        let (lo, hi) = (self.likert_min?, self.likert_max?);
        (lo..=hi).contains(&value).then(|| (value - lo) as usize)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    /// Decode an on-disk label value.
    pub fn label_from_json(&self, value: &Value) -> std::result::Result<Label, String> {
        match self.kind {
            LabelKind::Ordinal => {
                let v = value
                    .as_i64()
                    .ok_or_else(|| format!("expected an integer Likert value, got {value}"))?;
                self.ordinal_index(v).map(Label::Class).ok_or_else(|| {
                    format!(
                        "label {v} outside Likert range {}..={}",
                        self.likert_min.unwrap_or_default(),
                        self.likert_max.unwrap_or_default()
                    )
                })
            }
            LabelKind::Categorical => {
                let name = value
                    .as_str()
                    .ok_or_else(|| format!("expected a label name, got {value}"))?;
                self.class_index(name)
                    .map(Label::Class)
                    .ok_or_else(|| format!("label `{name}` is not in the label space"))
            }
            LabelKind::MultiBinary => {
                let names = value
                    .as_array()
                    .ok_or_else(|| format!("expected an array of label names, got {value}"))?;
                let mut flags = vec![false; self.len()];
                for name in names {
                    let name = name
                        .as_str()
                        .ok_or_else(|| format!("expected a label name, got {name}"))?;
                    let idx = self
                        .class_index(name)
                        .ok_or_else(|| format!("label `{name}` is not in the label space"))?;
                    flags[idx] = true;
                }
                Ok(Label::Multi(flags))
            }
        }
    }

    pub fn label_to_json(&self, label: &Label) -> Value {
        match (self.kind, label) {
            (LabelKind::Ordinal, Label::Class(i)) => Value::from(self.ordinal_value(*i).unwrap()),
            (LabelKind::Categorical, Label::Class(i)) => Value::from(self.labels[*i].clone()),
            (LabelKind::MultiBinary, Label::Multi(flags)) => Value::Array(
                flags
                    .iter()
                    .zip(&self.labels)
                    .filter(|(on, _)| **on)
                    .map(|(_, name)| Value::from(name.clone()))
                    .collect(),
            ),
            _ => Value::Null,
        }
    }

    /// Human-readable label text as it appears in prompts.
    pub fn label_text(&self, label: &Label) -> String {
        match label {
            Label::Class(i) => match self.kind {
                LabelKind::Ordinal => self.ordinal_value(*i).unwrap().to_string(),
                _ => self.labels[*i].clone(),
            },
            Label::Multi(flags) => flags
                .iter()
                .zip(&self.labels)
                .filter(|(on, _)| **on)
                .map(|(_, name)| name.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        }
    }

    pub fn contains(&self, label: &Label) -> bool {
        match (self.kind, label) {
            (LabelKind::MultiBinary, Label::Multi(flags)) => flags.len() == self.len(),
            (LabelKind::Categorical | LabelKind::Ordinal, Label::Class(i)) => *i < self.len(),
            _ => false,
        }
    }
}

/// A label value, already mapped onto its space.
///
/// Categorical and ordinal labels are 0-based class indices; multi-binary
/// labels carry one yes/no flag per base label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Class(usize),
    Multi(Vec<bool>),
}

/// Probability vector over the classes of a label space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Distribution("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Distribution(format!("entry {p} is negative or non-finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Distribution(format!("entries sum to {total}, not 1")));
        }
        Ok(Distribution(probs))
    }

    /// Wraps a vector known to be on the simplex (softmax output, averages).
    pub(crate) fn from_simplex(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        Distribution(probs)
    }

    pub fn uniform(n: usize) -> Self {
        Distribution(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Distribution(probs)
    }

    /// Bernoulli pair `[yes, no]`.
    pub fn bernoulli(yes: f64) -> Result<Self> {
        Distribution::new(vec![yes, 1.0 - yes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Distribution::new(v)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.0
    }
}

/// Task A soft label: one distribution for categorical/ordinal spaces, one
/// `[yes, no]` Bernoulli pair per base label for multi-binary spaces.
#[derive(Clone, Debug, PartialEq)]
pub enum SoftLabel {
    Single(Distribution),
    PerLabel(Vec<Distribution>),
}

impl SoftLabel {
    /// Flat on-disk form: the distribution, or per-label yes-probabilities.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            SoftLabel::Single(d) => d.probs().to_vec(),
            SoftLabel::PerLabel(pairs) => pairs.iter().map(|d| d.probs()[0]).collect(),
        }
    }

    pub fn from_vec(space: &LabelSpace, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::DimensionMismatch {
                expected: space.len(),
                actual: values.len(),
            });
        }
        match space.kind {
            LabelKind::MultiBinary => values
                .into_iter()
                .map(|yes| {
                    if !(0.0..=1.0).contains(&yes) {
                        return Err(Error::Distribution(format!(
                            "yes-probability {yes} outside [0, 1]"
                        )));
                    }
                    Distribution::bernoulli(yes)
                })
                .collect::<Result<Vec<_>>>()
                .map(SoftLabel::PerLabel),
            _ => Distribution::new(values).map(SoftLabel::Single),
        }
    }

    /// Uniform soft label for a space.
    pub fn uniform(space: &LabelSpace) -> Self {
        match space.kind {
            LabelKind::MultiBinary => {
                SoftLabel::PerLabel(vec![Distribution::uniform(2); space.len()])
            }
            _ => SoftLabel::Single(Distribution::uniform(space.len())),
        }
    }

    /// Degenerate soft label putting all mass on `label`.
    pub fn point_mass(space: &LabelSpace, label: &Label) -> Self {
        match label {
            Label::Class(i) => SoftLabel::Single(Distribution::one_hot(space.len(), *i)),
            Label::Multi(flags) => SoftLabel::PerLabel(
                flags
                    .iter()
                    .map(|on| Distribution::one_hot(2, if *on { 0 } else { 1 }))
                    .collect(),
            ),
        }
    }

    pub fn as_single(&self) -> Option<&Distribution> {
        match self {
            SoftLabel::Single(d) => Some(d),
            SoftLabel::PerLabel(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub annotator_id: String,
    pub label: Label,
    pub explanation: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub item_id: String,
    pub text_fields: IndexMap<String, String>,
    pub annotations: Vec<AnnotationRecord>,
}

impl Item {
    /// Text segments joined in schema order; used as embedding input.
    pub fn joined_text(&self) -> String {
        self.text_fields
            .values()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn annotation_by(&self, annotator_id: &str) -> Option<&AnnotationRecord> {
        self.annotations.iter().find(|a| a.annotator_id == annotator_id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub label_space: LabelSpace,
    pub splits: IndexMap<String, Vec<Item>>,
    pub annotator_ids: IndexSet<String>,
}

/// One entry of an annotator's labelled history.
#[derive(Clone, Copy, Debug)]
pub struct HistoryEntry<'a> {
    pub item: &'a Item,
    pub label: &'a Label,
    pub explanation: Option<&'a str>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&[Item]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownSplit(name.to_string()))
    }

    pub fn find_item(&self, item_id: &str) -> Option<&Item> {
        self.splits
            .values()
            .flat_map(|items| items.iter())
            .find(|item| item.item_id == item_id)
    }

    /// All of an annotator's records in `split`, in file order.
    pub fn annotator_history(&self, annotator_id: &str, split: &str) -> Result<Vec<HistoryEntry<'_>>> {
        if !self.annotator_ids.contains(annotator_id) {
            return Err(Error::UnknownAnnotator(annotator_id.to_string()));
        }
        Ok(self
            .split(split)?
            .iter()
            .filter_map(|item| {
                item.annotation_by(annotator_id).map(|rec| HistoryEntry {
                    item,
                    label: &rec.label,
                    explanation: rec.explanation.as_deref(),
                })
            })
            .collect())
    }

    /// `(item_id, annotator_id)` pairs of a split, in file order.
    pub fn pairs(&self, split: &str) -> Result<Vec<(String, String)>> {
        Ok(self
            .split(split)?
            .iter()
            .flat_map(|item| {
                item.annotations
                    .iter()
                    .map(|a| (item.item_id.clone(), a.annotator_id.clone()))
            })
            .collect())
    }

    /// Serialize back to the JSONL dataset format, splits in order.
    pub fn to_jsonl(&self) -> String {
        let header = RawHeader {
            name: self.name.clone(),
            label_space: self.label_space.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for (split, items) in &self.splits {
            for item in items {
                let raw = RawItem {
                    item_id: item.item_id.clone(),
                    split: split.clone(),
                    text_fields: item.text_fields.clone(),
                    annotations: item
                        .annotations
                        .iter()
                        .map(|a| RawAnnotation {
                            annotator_id: a.annotator_id.clone(),
                            label: self.label_space.label_to_json(&a.label),
                            explanation: a.explanation.clone(),
                        })
                        .collect(),
                };
                out.push_str(&serde_json::to_string(&raw).expect("item serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawHeader {
    name: String,
    label_space: LabelSpace,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawItem {
    item_id: String,
    split: String,
    text_fields: IndexMap<String, String>,
    annotations: Vec<RawAnnotation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawAnnotation {
    annotator_id: String,
    label: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    explanation: Option<String>,
}

fn parse_line<T: serde::de::DeserializeOwned>(file: &str, line_no: usize, line: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(line);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        Error::Schema {
            file: file.to_string(),
            line: line_no,
            field: if path == "." { "<root>".into() } else { path },
            message: err.into_inner().to_string(),
        }
    })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

/// Parse and validate dataset JSONL. `file` is only used in error messages.
pub fn parse_dataset(text: &str, file: &str) -> Result<Dataset> {
    let schema = |line: usize, field: &str, message: String| Error::Schema {
        file: file.to_string(),
        line,
        field: field.to_string(),
        message,
    };

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (header_line, header) = lines
        .next()
        .ok_or_else(|| schema(1, "<header>", "file is empty".into()))?;
    let header: RawHeader = parse_line(file, header_line, header)?;
    header
        .label_space
        .validate()
        .map_err(|e| schema(header_line, "label_space", e.to_string()))?;
    let space = header.label_space;

    let mut splits: IndexMap<String, Vec<Item>> = IndexMap::new();
    let mut annotator_ids = IndexSet::new();
    let mut seen_items = IndexSet::new();

    for (line_no, line) in lines {
        let raw: RawItem = parse_line(file, line_no, line)?;
        if raw.text_fields.is_empty() {
            return Err(schema(line_no, "text_fields", "must contain at least one segment".into()));
        }
        if !seen_items.insert(raw.item_id.clone()) {
            return Err(schema(
                line_no,
                "item_id",
                format!("duplicate item id `{}`", raw.item_id),
            ));
        }
        let mut annotators = IndexSet::new();
        let mut annotations = Vec::with_capacity(raw.annotations.len());
        for (idx, ann) in raw.annotations.into_iter().enumerate() {
            let label = space.label_from_json(&ann.label).map_err(|msg| {
                schema(
                    line_no,
                    &format!("annotations[{idx}].label"),
                    format!("{msg} (item `{}`, annotator `{}`)", raw.item_id, ann.annotator_id),
                )
            })?;
            if !annotators.insert(ann.annotator_id.clone()) {
                return Err(Error::DuplicateAnnotation {
                    file: file.to_string(),
                    line: line_no,
                    item_id: raw.item_id.clone(),
                    annotator_id: ann.annotator_id,
                });
            }
            annotator_ids.insert(ann.annotator_id.clone());
            annotations.push(AnnotationRecord {
                item_id: raw.item_id.clone(),
                annotator_id: ann.annotator_id,
                label,
                explanation: ann.explanation,
            });
        }
        splits.entry(raw.split).or_default().push(Item {
            item_id: raw.item_id,
            text_fields: raw.text_fields,
            annotations,
        });
    }

    Ok(Dataset {
        name: header.name,
        label_space: space,
        splits,
        annotator_ids,
    })
}

/// Normalized vote histogram of an item's annotations.
pub fn empirical_soft_label(item: &Item, space: &LabelSpace) -> Result<SoftLabel> {
    let labels: Vec<&Label> = item.annotations.iter().map(|a| &a.label).collect();
    soft_label_from_votes(&labels, space).map_err(|e| match e {
        Error::Empty(_) => Error::NoAnnotations(item.item_id.clone()),
        other => other,
    })
}

/// Counts votes into a soft label; shared by ground-truth construction and
/// prediction aggregation.
pub fn soft_label_from_votes(labels: &[&Label], space: &LabelSpace) -> Result<SoftLabel> {
    if labels.is_empty() {
        return Err(Error::Empty("no votes to aggregate".into()));
    }
    let total = labels.len() as f64;
    match space.kind {
        LabelKind::MultiBinary => {
            let mut yes = vec![0usize; space.len()];
            for label in labels {
                let Label::Multi(flags) = label else {
                    return Err(Error::LabelSpace("expected a multi-binary label".into()));
                };
                if flags.len() != space.len() {
                    return Err(Error::DimensionMismatch {
                        expected: space.len(),
                        actual: flags.len(),
                    });
                }
                for (count, on) in yes.iter_mut().zip(flags) {
                    *count += usize::from(*on);
                }
            }
            Ok(SoftLabel::PerLabel(
                yes.into_iter()
                    .map(|c| {
                        let p = c as f64 / total;
                        Distribution::from_simplex(vec![p, 1.0 - p])
                    })
                    .collect(),
            ))
        }
        _ => {
            let mut counts = vec![0usize; space.len()];
            for label in labels {
                match label {
                    Label::Class(i) if *i < space.len() => counts[*i] += 1,
                    _ => return Err(Error::LabelSpace(format!("label {label:?} not in space"))),
                }
            }
            Ok(SoftLabel::Single(Distribution::from_simplex(
                counts.into_iter().map(|c| c as f64 / total).collect(),
            )))
        }
    }
}
