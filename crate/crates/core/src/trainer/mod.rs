//! Soft-label training over precomputed feature vectors.
//!
//! The model is a softmax regression head, optionally preceded by a shared
//! tanh layer, with an optional second head that classifies each item's
//! soft-label cluster. Training minimizes
//!
//! ```text
//! L_total = L_soft + α · L_cluster
//! ```
//!
//! with plain full-batch or mini-batch gradient descent.

mod kmeans;

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Distribution, LabelSpace};
use crate::error::{Error, Result};
use crate::losses::{loss_with_grad, softmax, LossKind};

pub use kmeans::{inertia, kmeans_soft_labels, ClusterAssignment, MAX_ITERATIONS};

/// Upper bound on the number of soft-label clusters.
pub const MAX_CLUSTERS: usize = 5;

/// Item id → feature vector, uniform dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    rows: IndexMap<String, Vec<f64>>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct FeatureRow {
    item_id: String,
    features: Vec<f64>,
}

impl FeatureTable {
    pub fn new(rows: IndexMap<String, Vec<f64>>) -> Result<Self> {
        let dim = rows
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::Empty("feature table has no rows".into()))?;
        for (id, row) in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("features of item `{id}`")));
            }
        }
        Ok(FeatureTable { rows, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&[f64]> {
        self.rows.get(item_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.rows.iter()
    }

    /// Rows restricted to `ids`, in that order.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a String>) -> Result<FeatureTable> {
        let rows = ids
            .into_iter()
            .map(|id| {
                self.rows
                    .get(id)
                    .map(|r| (id.clone(), r.clone()))
                    .ok_or_else(|| Error::KeyMismatch(format!("no features for item `{id}`")))
            })
            .collect::<Result<IndexMap<_, _>>>()?;
        FeatureTable::new(rows)
    }

    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut rows = IndexMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: FeatureRow = serde_json::from_str(line).map_err(|e| Error::Schema {
                file: file.to_string(),
                line: idx + 1,
                field: "<row>".into(),
                message: e.to_string(),
            })?;
            if rows.insert(row.item_id.clone(), row.features).is_some() {
                return Err(Error::Schema {
                    file: file.to_string(),
                    line: idx + 1,
                    field: "item_id".into(),
                    message: format!("duplicate item `{}`", row.item_id),
                });
            }
        }
        FeatureTable::new(rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, features) in &self.rows {
            let row = FeatureRow {
                item_id: id.clone(),
                features: features.clone(),
            };
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterLossKind {
    CrossEntropy,
    Kl,
    Wasserstein,
    Cjs,
    Cad,
}

impl std::str::FromStr for ClusterLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cross_entropy" | "ce" => Ok(ClusterLossKind::CrossEntropy),
            "kl" => Ok(ClusterLossKind::Kl),
            "wasserstein" => Ok(ClusterLossKind::Wasserstein),
            "cjs" => Ok(ClusterLossKind::Cjs),
            "cad" => Ok(ClusterLossKind::Cad),
            other => Err(Error::Config(format!("unknown cluster loss `{other}`"))),
        }
    }
}

impl ClusterLossKind {
    /// Cluster losses over one-hot targets. KL(q‖p) = CE(q, p) − H(q), and
    /// the 1-D Wasserstein distance is CAD.
    fn eval(self, logits: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (kind, offset) = match self {
            ClusterLossKind::CrossEntropy => (LossKind::CrossEntropy, 0.0),
            ClusterLossKind::Kl => {
                let entropy: f64 = target.iter().filter(|q| **q > 0.0).map(|q| -q * q.ln()).sum();
                (LossKind::CrossEntropy, entropy)
            }
            ClusterLossKind::Wasserstein | ClusterLossKind::Cad => (LossKind::Cad, 0.0),
            ClusterLossKind::Cjs => (LossKind::Cjs, 0.0),
        };
        let out = loss_with_grad(kind, logits, target)?;
        Ok((out.value - offset, out.grad))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub cluster_loss_kind: ClusterLossKind,
    pub alpha: f64,
    pub k_clusters: usize,
    /// Width of the shared tanh layer; 0 trains the heads directly on the features.
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::Cad,
            cluster_loss_kind: ClusterLossKind::CrossEntropy,
            alpha: 1.0,
            k_clusters: 3,
            hidden_dim: 0,
            learning_rate: 0.5,
            epochs: 200,
            batch_size: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(1..=MAX_CLUSTERS).contains(&self.k_clusters) {
            return Err(Error::Config(format!(
                "k_clusters must be in 1..={MAX_CLUSTERS}, got {}",
                self.k_clusters
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether [`train`] attaches a cluster head.
    pub fn uses_clusters(&self) -> bool {
        self.alpha > 0.0 && self.k_clusters > 1
    }
}

/// Fully connected layer; `weights` is row-major `outputs × inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn uniform(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (inputs as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| rng.gen_range(-scale..scale))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
            .collect()
    }

    /// Accumulates `scale · g xᵀ` into `grad` and returns `Wᵀ g`.
    fn backward(&self, x: &[f64], g: &[f64], scale: f64, grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, go) in g.iter().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += scale * go * x[i];
                dx[i] += row[i] * go;
            }
            grad.bias[o] += scale * go;
        }
        dx
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub label_space: LabelSpace,
    pub input_dim: usize,
    pub shared: Option<Dense>,
    pub soft_head: Dense,
    pub cluster_head: Option<Dense>,
    pub config: TrainConfig,
}

/// Per-step loss record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub l_soft: f64,
    pub l_cluster: f64,
    pub l_total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: LinearModel,
    pub trace: Vec<LossRecord>,
    pub clusters: Option<ClusterAssignment>,
}

impl TrainOutcome {
    /// Mean `L_total` per epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let epochs = self.trace.last().map_or(0, |r| r.epoch + 1);
        let mut sums = vec![(0.0, 0usize); epochs];
        for r in &self.trace {
            sums[r.epoch].0 += r.l_total;
            sums[r.epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n as f64).collect()
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,batch,l_soft,l_cluster,l_total\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.batch, r.l_soft, r.l_cluster, r.l_total
            ));
        }
        out
    }
}

/// One training example as seen by the loss.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub soft_target: &'a [f64],
    pub cluster: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_soft: f64,
    pub l_cluster: f64,
    pub l_total: f64,
}

impl LinearModel {
    fn init(
        space: &LabelSpace,
        input_dim: usize,
        n_clusters: Option<usize>,
        config: &TrainConfig,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let shared = (config.hidden_dim > 0)
            .then(|| Dense::uniform(input_dim, config.hidden_dim, &mut rng));
        let head_in = if config.hidden_dim > 0 { config.hidden_dim } else { input_dim };
        LinearModel {
            label_space: space.clone(),
            input_dim,
            shared,
            soft_head: Dense::zeros(head_in, space.len()),
            cluster_head: n_clusters.map(|k| Dense::zeros(head_in, k)),
            config: config.clone(),
        }
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        match &self.shared {
            Some(layer) => layer.forward(x).into_iter().map(f64::tanh).collect(),
            None => x.to_vec(),
        }
    }

    pub fn soft_logits(&self, x: &[f64]) -> Vec<f64> {
        self.soft_head.forward(&self.hidden(x))
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Distribution> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(Distribution::from_simplex(softmax(&self.soft_logits(x))))
    }

    /// Composite loss over a batch (means over examples) and its gradient,
    /// laid out like [`LinearModel::params`].
    pub fn loss_and_grad(&self, batch: &[Example<'_>]) -> Result<(LossBreakdown, Vec<f64>)> {
        let alpha = self.config.alpha;
        let scale = 1.0 / batch.len() as f64;
        let mut g_shared = self.shared.as_ref().map(|l| Dense::zeros(l.inputs, l.outputs));
        let mut g_soft = Dense::zeros(self.soft_head.inputs, self.soft_head.outputs);
        let mut g_cluster = self
            .cluster_head
            .as_ref()
            .map(|l| Dense::zeros(l.inputs, l.outputs));
        let mut losses = LossBreakdown::default();

        for ex in batch {
            let h = self.hidden(ex.features);
            let soft = loss_with_grad(
                self.config.loss_kind,
                &self.soft_head.forward(&h),
                ex.soft_target,
            )?;
            losses.l_soft += scale * soft.value;
            let mut dh = self.soft_head.backward(&h, &soft.grad, scale, &mut g_soft);

            if let (Some(head), Some(grad), Some(cluster)) =
                (&self.cluster_head, g_cluster.as_mut(), ex.cluster)
            {
                let mut target = vec![0.0; head.outputs];
                target[cluster] = 1.0;
                let (value, g) = self
                    .config
                    .cluster_loss_kind
                    .eval(&head.forward(&h), &target)?;
                losses.l_cluster += scale * value;
                let weighted: Vec<f64> = g.iter().map(|x| alpha * x).collect();
                let dh_cluster = head.backward(&h, &weighted, scale, grad);
                // α = 0 leaves the shared layer untouched, bit for bit.
                if alpha != 0.0 {
                    for (a, b) in dh.iter_mut().zip(dh_cluster) {
                        *a += b;
                    }
                }
            }

            if let (Some(layer), Some(grad)) = (&self.shared, g_shared.as_mut()) {
                for (d, hi) in dh.iter_mut().zip(&h) {
                    *d *= 1.0 - hi * hi;
                }
                layer.backward(ex.features, &dh, scale, grad);
            }
        }
        losses.l_total = losses.l_soft + alpha * losses.l_cluster;

        let grad = g_shared
            .iter()
            .flat_map(Dense::params)
            .chain(g_soft.params())
            .chain(g_cluster.iter().flat_map(Dense::params))
            .copied()
            .collect();
        Ok((losses, grad))
    }

    /// All trainable parameters: shared layer, soft head, cluster head.
    pub fn params(&self) -> Vec<f64> {
        self.shared
            .iter()
            .flat_map(Dense::params)
            .chain(self.soft_head.params())
            .chain(self.cluster_head.iter().flat_map(Dense::params))
            .copied()
            .collect()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        let n = self.params().len();
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        let slots = self
            .shared
            .iter_mut()
            .flat_map(Dense::params_mut)
            .chain(self.soft_head.params_mut())
            .chain(self.cluster_head.iter_mut().flat_map(Dense::params_mut));
        for (slot, v) in slots.zip(values) {
            *slot = *v;
        }
        Ok(())
    }

    fn apply_gradient(&mut self, grad: &[f64], lr: f64) {
        let slots = self
            .shared
            .iter_mut()
            .flat_map(Dense::params_mut)
            .chain(self.soft_head.params_mut())
            .chain(self.cluster_head.iter_mut().flat_map(Dense::params_mut));
        for (slot, g) in slots.zip(grad) {
            *slot -= lr * g;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn check_targets(
    features: &FeatureTable,
    targets: &IndexMap<String, Distribution>,
    space: &LabelSpace,
) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::Empty("no training targets".into()));
    }
    let missing: Vec<&str> = targets
        .keys()
        .filter(|k| features.get(k).is_none())
        .map(String::as_str)
        .collect();
    let extra: Vec<&str> = features
        .iter()
        .map(|(k, _)| k.as_str())
        .filter(|k| !targets.contains_key(*k))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::KeyMismatch(format!(
            "targets without features [{}]; features without targets [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    if let Some(t) = targets.values().find(|t| t.len() != space.len()) {
        return Err(Error::DimensionMismatch {
            expected: space.len(),
            actual: t.len(),
        });
    }
    Ok(())
}

/// Trains the soft-label model. When `alpha > 0` and `k_clusters > 1` the
/// targets are first clustered with k-means and a cluster head is trained
/// jointly; otherwise the cluster term is absent.
pub fn train(
    features: &FeatureTable,
    targets: &IndexMap<String, Distribution>,
    space: &LabelSpace,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_targets(features, targets, space)?;
    if config.uses_clusters() {
        let clusters = kmeans_soft_labels(targets, config.k_clusters, config.seed)?
            .ordered_by_expectation();
        train_with_clusters(features, targets, space, &clusters, config)
    } else {
        run(features, targets, space, None, config)
    }
}

/// Trains with a cluster head for the given assignment, whatever `alpha` is.
pub fn train_with_clusters(
    features: &FeatureTable,
    targets: &IndexMap<String, Distribution>,
    space: &LabelSpace,
    clusters: &ClusterAssignment,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_targets(features, targets, space)?;
    if let Some(id) = targets.keys().find(|id| !clusters.assignments.contains_key(*id)) {
        return Err(Error::KeyMismatch(format!("item `{id}` has no cluster assignment")));
    }
    run(features, targets, space, Some(clusters), config)
}

fn run(
    features: &FeatureTable,
    targets: &IndexMap<String, Distribution>,
    space: &LabelSpace,
    clusters: Option<&ClusterAssignment>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut model = LinearModel::init(space, features.dim(), clusters.map(ClusterAssignment::k), config);
    let examples: Vec<Example<'_>> = targets
        .iter()
        .map(|(id, t)| Example {
            features: features.get(id).expect("checked"),
            soft_target: t.probs(),
            cluster: clusters.map(|c| c.assignments[id]),
        })
        .collect();

    let n = examples.len();
    let batch_size = if config.batch_size == 0 { n } else { config.batch_size.min(n) };
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut trace = Vec::with_capacity(config.epochs * n.div_ceil(batch_size));

    for epoch in 0..config.epochs {
        if batch_size < n {
            order.shuffle(&mut rng);
        }
        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<Example<'_>> = chunk.iter().map(|i| examples[*i]).collect();
            let (losses, grad) = model.loss_and_grad(&batch)?;
            if !losses.l_total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            trace.push(LossRecord {
                epoch,
                batch: batch_idx,
                l_soft: losses.l_soft,
                l_cluster: losses.l_cluster,
                l_total: losses.l_total,
            });
            model.apply_gradient(&grad, config.learning_rate);
        }
    }

    Ok(TrainOutcome {
        model,
        trace,
        clusters: clusters.cloned(),
    })
}

/// Softmax of the soft head for every item.
pub fn predict(model: &LinearModel, features: &FeatureTable) -> Result<IndexMap<String, Distribution>> {
    if features.dim() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            actual: features.dim(),
        });
    }
    features
        .iter()
        .map(|(id, x)| Ok((id.clone(), model.predict_one(x)?)))
        .collect()
}

/// Elementwise mean of two prediction sets.
pub fn ensemble_average(
    a: &IndexMap<String, Distribution>,
    b: &IndexMap<String, Distribution>,
) -> Result<IndexMap<String, Distribution>> {
    if a.len() != b.len() || a.keys().any(|k| !b.contains_key(k)) {
        return Err(Error::KeyMismatch("ensemble members cover different items".into()));
    }
    a.iter()
        .map(|(id, p)| {
            let q = &b[id];
            if p.len() != q.len() {
                return Err(Error::DimensionMismatch {
                    expected: p.len(),
                    actual: q.len(),
                });
            }
            let avg = p.probs().iter().zip(q.probs()).map(|(x, y)| 0.5 * (x + y)).collect();
            Ok((id.clone(), Distribution::from_simplex(avg)))
        })
        .collect()
}
