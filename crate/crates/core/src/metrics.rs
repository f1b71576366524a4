//! Soft-label (Task A) and perspectivist (Task B) evaluation metrics, plus the
//! random and most-frequent baselines.
//!
//! | label space  | Task A      | Task B |
//! |--------------|-------------|--------|
//! | ordinal      | Wasserstein | ANAD   |
//! | categorical  | Manhattan   | ER     |
//! | multi-binary | MAMD        | MER    |
//!
//! Lower is better everywhere; 0 is a perfect match.

use std::collections::HashMap;
use std::fmt::Write as _;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{Dataset, Distribution, Label, LabelKind, LabelSpace, SoftLabel};
use crate::error::{Error, Result};
use crate::predictions::{PairKey, Predictions};

fn check_dims(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(())
}

/// L1 distance between two distributions.
pub fn manhattan(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_dims(p.probs(), q.probs())?;
    Ok(p.probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Mean Manhattan distance over the base labels of a multi-binary soft label.
pub fn mamd(p: &[Distribution], q: &[Distribution]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::KeyMismatch(format!(
            "base-label sets differ: {} vs {} labels",
            p.len(),
            q.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::Empty("no base labels".into()));
    }
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        total += manhattan(a, b)?;
    }
    Ok(total / p.len() as f64)
}

/// Earth mover's distance between two distributions on an ordered scale with
/// unit spacing: the L1 distance between their CDFs.
pub fn wasserstein_1d(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_dims(p.probs(), q.probs())?;
    let mut cdf_p = 0.0;
    let mut cdf_q = 0.0;
    let mut total = 0.0;
    for (a, b) in p.probs().iter().zip(q.probs()) {
        cdf_p += a;
        cdf_q += b;
        total += (cdf_p - cdf_q).abs();
    }
    Ok(total)
}

fn check_keys<V, W>(pred: &IndexMap<PairKey, V>, target: &IndexMap<PairKey, W>) -> Result<()> {
    let missing: Vec<String> = target
        .keys()
        .filter(|k| !pred.contains_key(*k))
        .map(ToString::to_string)
        .collect();
    let extra: Vec<String> = pred
        .keys()
        .filter(|k| !target.contains_key(*k))
        .map(ToString::to_string)
        .collect();
    if missing.is_empty() && extra.is_empty() {
        return Ok(());
    }
    let mut msg = String::new();
    if !missing.is_empty() {
        let _ = write!(msg, "missing predictions for {}", missing.join(", "));
    }
    if !extra.is_empty() {
        if !msg.is_empty() {
            msg.push_str("; ");
        }
        let _ = write!(msg, "unexpected predictions for {}", extra.join(", "));
    }
    Err(Error::KeyMismatch(msg))
}

fn per_pair_mean(scores: &IndexMap<PairKey, f64>) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("no (item, annotator) pairs".into()));
    }
    Ok(scores.values().sum::<f64>() / scores.len() as f64)
}

fn er_scores(
    pred: &IndexMap<PairKey, Label>,
    target: &IndexMap<PairKey, Label>,
) -> Result<IndexMap<PairKey, f64>> {
    check_keys(pred, target)?;
    Ok(target
        .iter()
        .map(|(k, t)| (k.clone(), if pred[k] == *t { 0.0 } else { 1.0 }))
        .collect())
}

/// Fraction of (item, annotator) pairs whose predicted label differs.
pub fn error_rate(pred: &IndexMap<PairKey, Label>, target: &IndexMap<PairKey, Label>) -> Result<f64> {
    per_pair_mean(&er_scores(pred, target)?)
}

fn mer_scores(
    pred: &IndexMap<PairKey, Label>,
    target: &IndexMap<PairKey, Label>,
) -> Result<IndexMap<PairKey, f64>> {
    check_keys(pred, target)?;
    target
        .iter()
        .map(|(k, t)| {
            let (Label::Multi(tf), Label::Multi(pf)) = (t, &pred[k]) else {
                return Err(Error::MetricSpace {
                    metric: "MER",
                    kind: "single-label".into(),
                });
            };
            if tf.len() != pf.len() || tf.is_empty() {
                return Err(Error::KeyMismatch(format!(
                    "base-label sets differ for {k}: {} vs {}",
                    pf.len(),
                    tf.len()
                )));
            }
            let wrong = tf.iter().zip(pf).filter(|(a, b)| a != b).count();
            Ok((k.clone(), wrong as f64 / tf.len() as f64))
        })
        .collect()
}

/// Error rate per base label, averaged over base labels.
pub fn multi_label_error_rate(
    pred: &IndexMap<PairKey, Label>,
    target: &IndexMap<PairKey, Label>,
) -> Result<f64> {
    per_pair_mean(&mer_scores(pred, target)?)
}

/// Denominator used by ANAD.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnadNormalization {
    /// `likert_max - likert_min`
    #[default]
    Range,
    /// Number of scale points, `likert_max - likert_min + 1`.
    ScalePoints,
}

fn anad_scores(
    pred: &IndexMap<PairKey, Label>,
    target: &IndexMap<PairKey, Label>,
    space: &LabelSpace,
    norm: AnadNormalization,
) -> Result<IndexMap<PairKey, f64>> {
    if space.kind != LabelKind::Ordinal {
        return Err(Error::MetricSpace {
            metric: "ANAD",
            kind: space.kind.to_string(),
        });
    }
    check_keys(pred, target)?;
    let range = space.likert_range().expect("validated ordinal space") as f64;
    let denom = match norm {
        AnadNormalization::Range => range,
        AnadNormalization::ScalePoints => range + 1.0,
    };
    target
        .iter()
        .map(|(k, t)| match (t, &pred[k]) {
            (Label::Class(a), Label::Class(b)) => {
                Ok((k.clone(), (*a as f64 - *b as f64).abs() / denom))
            }
            _ => Err(Error::MetricSpace {
                metric: "ANAD",
                kind: "multi-binary".into(),
            }),
        })
        .collect()
}

/// Mean absolute Likert difference, normalized by the scale span.
pub fn anad(
    pred: &IndexMap<PairKey, Label>,
    target: &IndexMap<PairKey, Label>,
    space: &LabelSpace,
    norm: AnadNormalization,
) -> Result<f64> {
    per_pair_mean(&anad_scores(pred, target, space, norm)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskAMetric {
    Wasserstein,
    Manhattan,
    Mamd,
}

impl TaskAMetric {
    pub fn for_space(space: &LabelSpace) -> Self {
        match space.kind {
            LabelKind::Ordinal => TaskAMetric::Wasserstein,
            LabelKind::Categorical => TaskAMetric::Manhattan,
            LabelKind::MultiBinary => TaskAMetric::Mamd,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskAMetric::Wasserstein => "wasserstein",
            TaskAMetric::Manhattan => "manhattan",
            TaskAMetric::Mamd => "mamd",
        }
    }

    pub fn score(self, space: &LabelSpace, pred: &SoftLabel, target: &SoftLabel) -> Result<f64> {
        match (self, pred, target) {
            (TaskAMetric::Wasserstein, SoftLabel::Single(p), SoftLabel::Single(q))
                if space.kind == LabelKind::Ordinal =>
            {
                wasserstein_1d(p, q)
            }
            (TaskAMetric::Manhattan, SoftLabel::Single(p), SoftLabel::Single(q))
                if space.kind != LabelKind::MultiBinary =>
            {
                manhattan(p, q)
            }
            (TaskAMetric::Mamd, SoftLabel::PerLabel(p), SoftLabel::PerLabel(q)) => mamd(p, q),
            _ => Err(Error::MetricSpace {
                metric: self.name(),
                kind: space.kind.to_string(),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskBMetric {
    Anad,
    ErrorRate,
    MultiLabelErrorRate,
}

impl TaskBMetric {
    pub fn for_space(space: &LabelSpace) -> Self {
        match space.kind {
            LabelKind::Ordinal => TaskBMetric::Anad,
            LabelKind::Categorical => TaskBMetric::ErrorRate,
            LabelKind::MultiBinary => TaskBMetric::MultiLabelErrorRate,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskBMetric::Anad => "anad",
            TaskBMetric::ErrorRate => "error_rate",
            TaskBMetric::MultiLabelErrorRate => "multi_label_error_rate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskAReport {
    pub metric: TaskAMetric,
    pub per_item: IndexMap<String, f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskBReport {
    pub metric: TaskBMetric,
    pub per_pair: IndexMap<PairKey, f64>,
    pub mean: f64,
}

/// Score soft predictions against targets with the metric the space calls for.
/// Every target item must have a prediction and vice versa.
pub fn task_a_report(
    space: &LabelSpace,
    pred: &IndexMap<String, SoftLabel>,
    target: &IndexMap<String, SoftLabel>,
) -> Result<TaskAReport> {
    let missing: Vec<&str> = target
        .keys()
        .filter(|k| !pred.contains_key(*k))
        .map(String::as_str)
        .collect();
    let extra: Vec<&str> = pred
        .keys()
        .filter(|k| !target.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::KeyMismatch(format!(
            "missing soft labels for items [{}]; unexpected items [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    if target.is_empty() {
        return Err(Error::Empty("no items to score".into()));
    }
    let metric = TaskAMetric::for_space(space);
    let per_item = target
        .iter()
        .map(|(id, t)| Ok((id.clone(), metric.score(space, &pred[id], t)?)))
        .collect::<Result<IndexMap<_, _>>>()?;
    let mean = per_item.values().sum::<f64>() / per_item.len() as f64;
    Ok(TaskAReport {
        metric,
        per_item,
        mean,
    })
}

pub fn task_b_report(
    space: &LabelSpace,
    pred: &IndexMap<PairKey, Label>,
    target: &IndexMap<PairKey, Label>,
    anad_norm: AnadNormalization,
) -> Result<TaskBReport> {
    let metric = TaskBMetric::for_space(space);
    let per_pair = match metric {
        TaskBMetric::Anad => anad_scores(pred, target, space, anad_norm)?,
        TaskBMetric::ErrorRate => er_scores(pred, target)?,
        TaskBMetric::MultiLabelErrorRate => mer_scores(pred, target)?,
    };
    let mean = per_pair_mean(&per_pair)?;
    Ok(TaskBReport {
        metric,
        per_pair,
        mean,
    })
}

impl TaskAReport {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "metric": self.metric.name(),
            "mean": self.mean,
            "per_item": self.per_item,
        })
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<(String, f64)> = self.per_item.iter().map(|(k, v)| (k.clone(), *v)).collect();
        render_table(&["item_id"], self.metric.name(), &rows_to_cells(rows), self.mean)
    }
}

impl TaskBReport {
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<_> = self
            .per_pair
            .iter()
            .map(|(k, v)| json!({"item_id": k.item_id, "annotator_id": k.annotator_id, "score": v}))
            .collect();
        json!({
            "metric": self.metric.name(),
            "mean": self.mean,
            "per_pair": rows,
        })
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<(Vec<String>, f64)> = self
            .per_pair
            .iter()
            .map(|(k, v)| (vec![k.item_id.clone(), k.annotator_id.clone()], *v))
            .collect();
        render_table(&["item_id", "annotator_id"], self.metric.name(), &rows, self.mean)
    }
}

fn rows_to_cells(rows: Vec<(String, f64)>) -> Vec<(Vec<String>, f64)> {
    rows.into_iter().map(|(k, v)| (vec![k], v)).collect()
}

fn render_table(key_headers: &[&str], metric: &str, rows: &[(Vec<String>, f64)], mean: f64) -> String {
    let mut widths: Vec<usize> = key_headers.iter().map(|h| h.len()).collect();
    for (keys, _) in rows {
        for (w, k) in widths.iter_mut().zip(keys) {
            *w = (*w).max(k.chars().count());
        }
    }
    widths[0] = widths[0].max("mean".len());
    let score_w = metric.len().max(8);
    let mut out = String::new();
    for (h, w) in key_headers.iter().zip(&widths) {
        let _ = write!(out, "{h:<w$}  ");
    }
    let _ = writeln!(out, "{metric:>score_w$}");
    for (keys, v) in rows {
        for (k, w) in keys.iter().zip(&widths) {
            let _ = write!(out, "{k:<w$}  ");
        }
        let _ = writeln!(out, "{v:>score_w$.4}");
    }
    let _ = write!(out, "{:<w$}  ", "mean", w = widths[0]);
    for w in &widths[1..] {
        let _ = write!(out, "{:<w$}  ", "");
    }
    let _ = writeln!(out, "{mean:>score_w$.4}");
    out
}

/// Ground-truth soft labels and perspectivist labels for a split.
pub fn split_targets(
    dataset: &Dataset,
    split: &str,
) -> Result<(IndexMap<String, SoftLabel>, IndexMap<PairKey, Label>)> {
    let items = dataset.split(split)?;
    let mut soft = IndexMap::new();
    let mut pairs = IndexMap::new();
    for item in items {
        soft.insert(
            item.item_id.clone(),
            crate::data::empirical_soft_label(item, &dataset.label_space)?,
        );
        for a in &item.annotations {
            pairs.insert(PairKey::new(&item.item_id, &a.annotator_id), a.label.clone());
        }
    }
    Ok((soft, pairs))
}

/// Uniformly random label per (item, annotator); uniform soft label per item.
pub fn baseline_random(dataset: &Dataset, split: &str, seed: u64) -> Result<Predictions> {
    let items = dataset.split(split)?;
    if items.is_empty() {
        return Err(Error::Empty(format!("split `{split}` has no items")));
    }
    let space = &dataset.label_space;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut preds = Predictions::default();
    for item in items {
        preds
            .soft
            .insert(item.item_id.clone(), SoftLabel::uniform(space));
        for a in &item.annotations {
            let label = match space.kind {
                LabelKind::MultiBinary => {
                    Label::Multi((0..space.len()).map(|_| rng.gen_bool(0.5)).collect())
                }
                _ => Label::Class(rng.gen_range(0..space.len())),
            };
            preds
                .perspectivist
                .insert(PairKey::new(&item.item_id, &a.annotator_id), label);
        }
    }
    Ok(preds)
}

/// Whether the most-frequent baseline uses each annotator's own mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeScope {
    #[default]
    PerAnnotator,
    Global,
}

/// Modal label; class ties go to the lower index. Multi-binary labels take the
/// per-base-label majority, ties resolving to "no".
pub(crate) fn modal_label(labels: &[&Label], space: &LabelSpace) -> Option<Label> {
    if labels.is_empty() {
        return None;
    }
    match space.kind {
        LabelKind::MultiBinary => {
            let mut yes = vec![0usize; space.len()];
            for l in labels {
                if let Label::Multi(flags) = l {
                    for (c, on) in yes.iter_mut().zip(flags) {
                        *c += usize::from(*on);
                    }
                }
            }
            Some(Label::Multi(
                yes.into_iter().map(|c| 2 * c > labels.len()).collect(),
            ))
        }
        _ => {
            let mut counts = vec![0usize; space.len()];
            for l in labels {
                if let Label::Class(i) = l {
                    counts[*i] += 1;
                }
            }
            let mut best = 0;
            for (i, c) in counts.iter().enumerate() {
                if *c > counts[best] {
                    best = i;
                }
            }
            Some(Label::Class(best))
        }
    }
}

/// Predicts each annotator's most frequent training label (the global mode
/// for annotators without training data); the soft label is a point mass on
/// the mode of the item's annotator predictions.
pub fn baseline_most_frequent(
    dataset: &Dataset,
    split: &str,
    train_split: &str,
    scope: ModeScope,
) -> Result<Predictions> {
    let space = &dataset.label_space;
    let train = dataset.split(train_split)?;
    let mut by_annotator: HashMap<&str, Vec<&Label>> = HashMap::new();
    let mut all = Vec::new();
    for item in train {
        for a in &item.annotations {
            by_annotator.entry(&a.annotator_id).or_default().push(&a.label);
            all.push(&a.label);
        }
    }
    let global = modal_label(&all, space)
        .ok_or_else(|| Error::Empty(format!("training split `{train_split}` has no annotations")))?;
    let modes: HashMap<&str, Label> = by_annotator
        .iter()
        .filter_map(|(k, v)| Some((*k, modal_label(v, space)?)))
        .collect();

    let items = dataset.split(split)?;
    if items.is_empty() {
        return Err(Error::Empty(format!("split `{split}` has no items")));
    }
    let mut preds = Predictions::default();
    for item in items {
        let mut item_labels = Vec::with_capacity(item.annotations.len());
        for a in &item.annotations {
            let label = match scope {
                ModeScope::PerAnnotator => modes.get(a.annotator_id.as_str()).unwrap_or(&global),
                ModeScope::Global => &global,
            };
            item_labels.push(label);
            preds
                .perspectivist
                .insert(PairKey::new(&item.item_id, &a.annotator_id), label.clone());
        }
        let soft = match modal_label(&item_labels, space) {
            Some(mode) => SoftLabel::point_mass(space, &mode),
            None => SoftLabel::point_mass(space, &global),
        };
        preds.soft.insert(item.item_id.clone(), soft);
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_dataset, Distribution};

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    fn pairs(labels: &[usize]) -> IndexMap<PairKey, Label> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| (PairKey::new(format!("i{i}"), "a"), Label::Class(*l)))
            .collect()
    }

    #[test]
    fn manhattan_examples() {
        let p = d(&[0.3, 0.7]);
        assert_eq!(manhattan(&p, &p).unwrap(), 0.0);
        assert_eq!(manhattan(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(manhattan(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap(), 2.0);
        assert!(matches!(
            manhattan(&d(&[1.0, 0.0]), &d(&[0.0, 0.0, 1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mamd_examples() {
        let same = vec![d(&[0.5, 0.5]), d(&[1.0, 0.0]), d(&[0.0, 1.0])];
        assert_eq!(mamd(&same, &same).unwrap(), 0.0);
        // per-label distances 0, 1, 2
        let q = vec![d(&[0.5, 0.5]), d(&[0.5, 0.5]), d(&[1.0, 0.0])];
        assert_eq!(mamd(&same, &q).unwrap(), 1.0);
        assert_eq!(
            mamd(&same[1..2], &q[1..2]).unwrap(),
            manhattan(&same[1], &q[1]).unwrap()
        );
        assert!(matches!(mamd(&same, &q[..2]), Err(Error::KeyMismatch(_))));
    }

    #[test]
    fn wasserstein_examples() {
        let p = d(&[0.2, 0.3, 0.5]);
        assert_eq!(wasserstein_1d(&p, &p).unwrap(), 0.0);
        assert_eq!(
            wasserstein_1d(&d(&[1.0, 0.0, 0.0]), &d(&[0.0, 0.0, 1.0])).unwrap(),
            2.0
        );
    }

    #[test]
    fn error_rate_examples() {
        let t = pairs(&[0, 1, 1, 0]);
        assert_eq!(error_rate(&t, &t).unwrap(), 0.0);
        assert_eq!(error_rate(&pairs(&[0, 1, 1, 1]), &t).unwrap(), 0.25);
        assert_eq!(error_rate(&pairs(&[1, 0, 0, 1]), &t).unwrap(), 1.0);
        assert!(matches!(error_rate(&pairs(&[0, 1]), &t), Err(Error::KeyMismatch(_))));
    }

    #[test]
    fn mer_examples() {
        let key = |i: usize| PairKey::new(format!("i{i}"), "a");
        let target: IndexMap<_, _> = (0..2)
            .map(|i| (key(i), Label::Multi(vec![true, false])))
            .collect();
        // label 0 always right, label 1 wrong on one of two pairs: ERs 0 and 0.5
        let pred: IndexMap<_, _> = [
            (key(0), Label::Multi(vec![true, true])),
            (key(1), Label::Multi(vec![true, false])),
        ]
        .into_iter()
        .collect();
        assert_eq!(multi_label_error_rate(&pred, &target).unwrap(), 0.25);
        assert_eq!(multi_label_error_rate(&target, &target).unwrap(), 0.0);

        let single: IndexMap<_, _> = (0..4)
            .map(|i| (key(i), Label::Multi(vec![i % 2 == 0])))
            .collect();
        let single_pred: IndexMap<_, _> = (0..4).map(|i| (key(i), Label::Multi(vec![i < 3]))).collect();
        let as_class = |m: &IndexMap<PairKey, Label>| -> IndexMap<PairKey, Label> {
            m.iter()
                .map(|(k, l)| match l {
                    Label::Multi(f) => (k.clone(), Label::Class(usize::from(f[0]))),
                    _ => unreachable!(),
                })
                .collect()
        };
        assert_eq!(
            multi_label_error_rate(&single_pred, &single).unwrap(),
            error_rate(&as_class(&single_pred), &as_class(&single)).unwrap()
        );
    }

    #[test]
    fn anad_examples() {
        let space = LabelSpace::ordinal(1, 6).unwrap();
        let t = pairs(&[5, 5]);
        assert_eq!(anad(&t, &t, &space, AnadNormalization::Range).unwrap(), 0.0);
        // Likert pairs (1,6) and (6,6)
        assert_eq!(anad(&pairs(&[0, 5]), &t, &space, AnadNormalization::Range).unwrap(), 0.5);
        assert_eq!(anad(&pairs(&[0, 0]), &t, &space, AnadNormalization::Range).unwrap(), 1.0);
        assert!((anad(&pairs(&[0, 5]), &t, &space, AnadNormalization::ScalePoints).unwrap() - 5.0 / 12.0).abs() < 1e-15);
        let cat = LabelSpace::categorical(["a", "b"]).unwrap();
        assert!(matches!(
            anad(&t, &t, &cat, AnadNormalization::Range),
            Err(Error::MetricSpace { .. })
        ));
    }

    const BASELINE_FIXTURE: &str = r#"{"name":"b","label_space":{"kind":"ordinal","labels":["1","2","3","4","5","6"],"likert_min":1,"likert_max":6}}
{"item_id":"t1","split":"train","text_fields":{"x":"1"},"annotations":[{"annotator_id":"a","label":2},{"annotator_id":"b","label":4},{"annotator_id":"c","label":1}]}
{"item_id":"t2","split":"train","text_fields":{"x":"2"},"annotations":[{"annotator_id":"a","label":2},{"annotator_id":"b","label":3},{"annotator_id":"c","label":4}]}
{"item_id":"t3","split":"train","text_fields":{"x":"3"},"annotations":[{"annotator_id":"a","label":5},{"annotator_id":"b","label":4}]}
{"item_id":"d1","split":"dev","text_fields":{"x":"4"},"annotations":[{"annotator_id":"a","label":1},{"annotator_id":"b","label":1},{"annotator_id":"z","label":1}]}
"#;

    #[test]
    fn most_frequent_baseline() {
        let mut text = BASELINE_FIXTURE.to_string();
        text.push_str(r#"{"item_id":"t4","split":"train","text_fields":{"x":"5"},"annotations":[{"annotator_id":"z","label":6}]}"#);
        let ds = parse_dataset(&text, "b").unwrap();
        let p = baseline_most_frequent(&ds, "dev", "train", ModeScope::PerAnnotator).unwrap();
        let label = |ann: &str| p.perspectivist[&PairKey::new("d1", ann)].clone();
        // a: [2,2,5] → 2
        assert_eq!(label("a"), Label::Class(1));
        // b: [4,3,4] → 4
        assert_eq!(label("b"), Label::Class(3));
        // c has a tie between 1 and 4 → lower index (1); z is known: [6]
        assert_eq!(label("z"), Label::Class(5));
        // item mode over predictions [2, 4, 6] is a three-way tie → 2
        assert_eq!(
            p.soft["d1"],
            SoftLabel::Single(Distribution::one_hot(6, 1))
        );
        let g = baseline_most_frequent(&ds, "dev", "train", ModeScope::Global).unwrap();
        // global train labels: 2,4,1,2,3,4,5,4,6 → 4
        assert!(g.perspectivist.values().all(|l| *l == Label::Class(3)));
    }

    #[test]
    fn most_frequent_ties_and_unseen() {
        let ds = parse_dataset(BASELINE_FIXTURE, "b").unwrap();
        let space = &ds.label_space;
        let one = Label::Class(0);
        let four = Label::Class(3);
        assert_eq!(modal_label(&[&four, &one], space), Some(one.clone()));
        let p = baseline_most_frequent(&ds, "dev", "train", ModeScope::PerAnnotator).unwrap();
        // z never annotated train → global mode (4)
        assert_eq!(p.perspectivist[&PairKey::new("d1", "z")], four);
    }

    #[test]
    fn random_baseline_is_uniform_and_seeded() {
        let ds = parse_dataset(BASELINE_FIXTURE, "b").unwrap();
        let a = baseline_random(&ds, "train", 7).unwrap();
        let b = baseline_random(&ds, "train", 7).unwrap();
        assert_eq!(a, b);
        for soft in a.soft.values() {
            assert_eq!(soft, &SoftLabel::Single(Distribution::uniform(6)));
        }
        assert!(matches!(baseline_random(&ds, "test", 7), Err(Error::UnknownSplit(_))));
    }

    #[test]
    fn reports_and_tables() {
        let space = LabelSpace::ordinal(1, 3).unwrap();
        let target: IndexMap<String, SoftLabel> = [
            ("x".to_string(), SoftLabel::Single(d(&[1.0, 0.0, 0.0]))),
            ("y".to_string(), SoftLabel::Single(d(&[0.0, 1.0, 0.0]))),
        ]
        .into_iter()
        .collect();
        let mut pred = target.clone();
        pred["y"] = SoftLabel::Single(d(&[0.0, 0.0, 1.0]));
        let r = task_a_report(&space, &pred, &target).unwrap();
        assert_eq!(r.metric, TaskAMetric::Wasserstein);
        assert_eq!(r.per_item["y"], 1.0);
        assert_eq!(r.mean, 0.5);
        assert_eq!(r.to_json()["mean"], 0.5);
        let table = r.to_table();
        assert!(table.lines().last().unwrap().starts_with("mean"));
        pred.shift_remove("x");
        assert!(matches!(task_a_report(&space, &pred, &target), Err(Error::KeyMismatch(_))));
    }
}
