//! Seeded synthetic datasets for desk-scale experiments.

use indexmap::{IndexMap, IndexSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, StandardNormal};

use crate::data::{empirical_soft_label, AnnotationRecord, Dataset, Distribution, Item, Label, LabelSpace};
use crate::error::{Error, Result};
use crate::trainer::FeatureTable;

/// Weights of the feature → distribution map. Fixed so that every seed
/// draws from the same task.
const MAP_SEED: u64 = 0x005e_ed0f_1ab5;

#[derive(Clone, Debug, PartialEq)]
pub struct OrdinalTaskConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub likert_min: i64,
    pub likert_max: i64,
    pub annotator_pool: usize,
    pub annotators_per_item: usize,
    /// Standard deviation of each annotator's fixed offset on the scale.
    pub annotator_bias: f64,
    pub seed: u64,
}

impl Default for OrdinalTaskConfig {
    fn default() -> Self {
        OrdinalTaskConfig {
            n_train: 600,
            n_test: 200,
            dim: 8,
            likert_min: 1,
            likert_max: 6,
            annotator_pool: 40,
            annotators_per_item: 8,
            annotator_bias: 0.4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub dataset: Dataset,
    pub features: FeatureTable,
}

impl SyntheticTask {
    /// Empirical soft labels of a split, as single distributions.
    pub fn targets(&self, split: &str) -> Result<IndexMap<String, Distribution>> {
        self.dataset
            .split(split)?
            .iter()
            .map(|item| {
                let soft = empirical_soft_label(item, &self.dataset.label_space)?;
                let dist = soft
                    .as_single()
                    .cloned()
                    .ok_or_else(|| Error::LabelSpace("synthetic targets are single distributions".into()))?;
                Ok((item.item_id.clone(), dist))
            })
            .collect()
    }

    pub fn split_features(&self, split: &str) -> Result<FeatureTable> {
        let ids: Vec<String> = self.dataset.split(split)?.iter().map(|i| i.item_id.clone()).collect();
        self.features.subset(ids.iter())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Ordinal rating task. Each item has Gaussian features; its latent rating
/// has mean `mid + half·tanh(w·x)` and a feature-dependent spread, and each
/// annotator adds a personal offset before rounding onto the scale.
pub fn ordinal_task(config: &OrdinalTaskConfig) -> Result<SyntheticTask> {
    if config.likert_max <= config.likert_min {
        return Err(Error::Config("likert_max must exceed likert_min".into()));
    }
    if config.annotators_per_item == 0 || config.annotators_per_item > config.annotator_pool {
        return Err(Error::Config("annotators_per_item must be in 1..=annotator_pool".into()));
    }
    if config.dim == 0 {
        return Err(Error::Config("dim must be positive".into()));
    }
    let space = LabelSpace::ordinal(config.likert_min, config.likert_max)?;
    let lo = config.likert_min as f64;
    let hi = config.likert_max as f64;
    let mid = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0;
    let scale = (config.dim as f64).sqrt();

    let mut map_rng = ChaCha8Rng::seed_from_u64(MAP_SEED);
    let w: Vec<f64> = (0..config.dim).map(|_| map_rng.sample(StandardNormal)).collect();
    let v: Vec<f64> = (0..config.dim).map(|_| map_rng.sample(StandardNormal)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bias = Normal::new(0.0, config.annotator_bias).map_err(|e| Error::Config(e.to_string()))?;
    let annotators: Vec<(String, f64)> = (0..config.annotator_pool)
        .map(|a| (format!("ann{a:03}"), bias.sample(&mut rng)))
        .collect();

    let mut splits: IndexMap<String, Vec<Item>> = IndexMap::new();
    let mut features = IndexMap::new();
    for (split, n) in [("train", config.n_train), ("test", config.n_test)] {
        let mut items = Vec::with_capacity(n);
        for i in 0..n {
            let item_id = format!("{split}-{i:04}");
            let x: Vec<f64> = (0..config.dim).map(|_| rng.sample(StandardNormal)).collect();
            let wx: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / scale;
            let vx: f64 = v.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / scale;
            let mu = mid + 1.2 * half * wx.tanh();
            let sigma = 0.4 + 1.2 * sigmoid(vx);

            let chosen = rand::seq::index::sample(&mut rng, config.annotator_pool, config.annotators_per_item);
            let mut chosen = chosen.into_vec();
            chosen.sort_unstable();
            let annotations = chosen
                .into_iter()
                .map(|a| {
                    let (annotator_id, offset) = &annotators[a];
                    let z: f64 = rng.sample(StandardNormal);
                    let value = (mu + offset + sigma * z).round().clamp(lo, hi) as i64;
                    AnnotationRecord {
                        item_id: item_id.clone(),
                        annotator_id: annotator_id.clone(),
                        label: Label::Class(space.ordinal_index(value).expect("clamped onto the scale")),
                        explanation: None,
                    }
                })
                .collect();
            let mut text_fields = IndexMap::new();
            text_fields.insert("text".to_string(), format!("synthetic item {item_id}"));
            features.insert(item_id.clone(), x);
            items.push(Item {
                item_id,
                text_fields,
                annotations,
            });
        }
        splits.insert(split.to_string(), items);
    }

    let annotator_ids: IndexSet<String> = annotators.into_iter().map(|(id, _)| id).collect();
    Ok(SyntheticTask {
        dataset: Dataset {
            name: "synthetic-ordinal".into(),
            label_space: space,
            splits,
            annotator_ids,
        },
        features: FeatureTable::new(features)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryTaskConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub annotator_pool: usize,
    pub annotators_per_item: usize,
    pub seed: u64,
}

impl Default for BinaryTaskConfig {
    fn default() -> Self {
        BinaryTaskConfig {
            n_train: 400,
            n_test: 400,
            annotator_pool: 20,
            annotators_per_item: 5,
            seed: 0,
        }
    }
}

/// Binary task with random labels and no signal in the text. Each annotator
/// has a personal rate for label "1" drawn uniformly from [0, 1]; every
/// label is an independent draw at that rate.
pub fn binary_random_dataset(config: &BinaryTaskConfig) -> Result<Dataset> {
    if config.annotators_per_item == 0 || config.annotators_per_item > config.annotator_pool {
        return Err(Error::Config("annotators_per_item must be in 1..=annotator_pool".into()));
    }
    let space = LabelSpace::categorical(["0", "1"])?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rates: Vec<(String, f64)> = (0..config.annotator_pool)
        .map(|a| (format!("ann{a:03}"), rng.gen::<f64>()))
        .collect();
    let mut splits = IndexMap::new();
    for (split, n) in [("train", config.n_train), ("test", config.n_test)] {
        let mut items = Vec::with_capacity(n);
        for i in 0..n {
            let item_id = format!("{split}-{i:04}");
            let mut chosen = rand::seq::index::sample(&mut rng, config.annotator_pool, config.annotators_per_item).into_vec();
            chosen.sort_unstable();
            let annotations = chosen
                .into_iter()
                .map(|a| AnnotationRecord {
                    item_id: item_id.clone(),
                    annotator_id: rates[a].0.clone(),
                    label: Label::Class(usize::from(rng.gen::<f64>() < rates[a].1)),
                    explanation: None,
                })
                .collect();
            let mut text_fields = IndexMap::new();
            text_fields.insert("text".to_string(), format!("random item {item_id}"));
            items.push(Item {
                item_id,
                text_fields,
                annotations,
            });
        }
        splits.insert(split.to_string(), items);
    }
    Ok(Dataset {
        name: "synthetic-binary".into(),
        label_space: space,
        splits,
        annotator_ids: rates.into_iter().map(|(id, _)| id).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_dataset;

    #[test]
    fn ordinal_task_shape_and_determinism() {
        let cfg = OrdinalTaskConfig {
            seed: 4,
            ..Default::default()
        };
        let a = ordinal_task(&cfg).unwrap();
        let b = ordinal_task(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.dataset.split("train").unwrap().len(), 600);
        assert_eq!(a.dataset.split("test").unwrap().len(), 200);
        assert_eq!(a.features.dim(), 8);
        let t = a.targets("train").unwrap();
        assert!(t.values().all(|d| d.len() == 6));
        // the map should spread items across the scale
        let means: Vec<f64> = t
            .values()
            .map(|d| d.probs().iter().enumerate().map(|(i, p)| i as f64 * p).sum())
            .collect();
        let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo > 3.0, "{lo}..{hi}");
    }

    #[test]
    fn synthetic_datasets_round_trip_through_jsonl() {
        let ds = binary_random_dataset(&BinaryTaskConfig::default()).unwrap();
        let back = parse_dataset(&ds.to_jsonl(), "mem").unwrap();
        assert_eq!(ds, back);
    }
}
