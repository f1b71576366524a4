//! Demonstration selection from a single annotator's labelled history.
//!
//! Two strategies:
//!
//! * **Similarity (MMR)**: greedily add the candidate maximizing
//!   `λ·s(q, x) − (1 − λ)·max_{x'∈S} s(x, x')`, with `s` the cosine similarity
//!   of sentence embeddings and the redundancy term taken as 0 while `S` is
//!   empty.
//! * **Stratified**: drop labels seen fewer than `min_label_count` times,
//!   build a label-proportional subsample by largest-remainder quotas, then
//!   draw `k` uniformly from it.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{HistoryEntry, Label};
use crate::error::{Error, Result};

/// Item id → embedding vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: IndexMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingHeader {
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRow {
    item_id: String,
    vector: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: IndexMap<String, Vec<f64>>) -> Result<Self> {
        for (id, v) in &vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of `{id}`")));
            }
            if v.iter().all(|x| *x == 0.0) {
                return Err(Error::ZeroNorm);
            }
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, item_id: &str) -> Result<&[f64]> {
        self.vectors
            .get(item_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(item_id.to_string()))
    }

    /// Header line `{"dim": d}` then one `{"item_id", "vector"}` row per item.
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let schema = |line: usize, message: String| Error::Schema {
            file: file.to_string(),
            line,
            field: "<row>".into(),
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| schema(1, "empty embedding file".into()))?;
        let header: EmbeddingHeader =
            serde_json::from_str(header).map_err(|e| schema(1, e.to_string()))?;
        let mut vectors = IndexMap::new();
        for (idx, line) in lines {
            let row: EmbeddingRow =
                serde_json::from_str(line).map_err(|e| schema(idx + 1, e.to_string()))?;
            if row.vector.len() != header.dim {
                return Err(schema(
                    idx + 1,
                    format!("vector of `{}` has dimension {}, header says {}", row.item_id, row.vector.len(), header.dim),
                ));
            }
            vectors.insert(row.item_id, row.vector);
        }
        EmbeddingTable::new(header.dim, vectors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&EmbeddingHeader { dim: self.dim }).unwrap();
        out.push('\n');
        for (id, v) in &self.vectors {
            let row = EmbeddingRow {
                item_id: id.clone(),
                vector: v.clone(),
            };
            out.push_str(&serde_json::to_string(&row).unwrap());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Number of demonstrations.
    pub k: usize,
    /// Relevance/diversity trade-off for MMR.
    pub lambda: f64,
    /// Labels occurring fewer times than this are dropped before stratifying.
    pub min_label_count: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            k: 10,
            lambda: 0.7,
            min_label_count: 2,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if self.min_label_count < 2 {
            return Err(Error::Config("min_label_count must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Similarity,
    Stratified,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "similarity" | "sim" | "mmr" => Ok(Strategy::Similarity),
            "stratified" | "strat" => Ok(Strategy::Stratified),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// MMR selection. Returns indices into `history` in selection order; ties go
/// to the earlier history entry. Entries for the query item itself are never
/// selected.
pub fn select_mmr(
    query_id: &str,
    history: &[HistoryEntry<'_>],
    embeddings: &EmbeddingTable,
    config: &SelectionConfig,
) -> Result<Vec<usize>> {
    config.validate()?;
    let q = embeddings.get(query_id)?;
    let candidates: Vec<usize> = (0..history.len())
        .filter(|i| history[*i].item.item_id != query_id)
        .collect();
    let vectors: Vec<&[f64]> = candidates
        .iter()
        .map(|i| embeddings.get(&history[*i].item.item_id))
        .collect::<Result<_>>()?;
    let relevance: Vec<f64> = vectors
        .iter()
        .map(|v| cosine_similarity(q, v))
        .collect::<Result<_>>()?;

    let target = config.k.min(candidates.len());
    let mut chosen: Vec<usize> = Vec::with_capacity(target);
    // max similarity of each candidate to anything already chosen
    let mut redundancy: Vec<Option<f64>> = vec![None; candidates.len()];
    let mut taken = vec![false; candidates.len()];
    while chosen.len() < target {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..candidates.len() {
            if taken[c] {
                continue;
            }
            let score = config.lambda * relevance[c] - (1.0 - config.lambda) * redundancy[c].unwrap_or(0.0);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        let (pick, _) = best.expect("target <= candidates");
        taken[pick] = true;
        chosen.push(pick);
        for c in 0..candidates.len() {
            if !taken[c] {
                let s = cosine_similarity(vectors[c], vectors[pick])?;
                redundancy[c] = Some(redundancy[c].map_or(s, |r| r.max(s)));
            }
        }
    }
    Ok(chosen.into_iter().map(|c| candidates[c]).collect())
}

/// Label-proportional subsample plan for a pool.
#[derive(Clone, Debug, PartialEq)]
pub struct StratifiedPlan {
    /// Surviving label → number of pool records carrying it.
    pub pool_counts: IndexMap<Label, usize>,
    /// Surviving label → records drawn into the subsample.
    pub quotas: IndexMap<Label, usize>,
}

/// Largest-remainder apportionment of `size` seats over `counts`, every label
/// receiving at least one seat. Remainder ties go to the earlier label.
pub fn largest_remainder_quotas(counts: &IndexMap<Label, usize>, size: usize) -> IndexMap<Label, usize> {
    let total: usize = counts.values().sum();
    let labels: Vec<&Label> = counts.keys().collect();
    let mut quotas: Vec<usize> = counts.values().map(|c| c * size / total).collect();
    let mut remainders: Vec<(usize, usize)> = counts
        .values()
        .enumerate()
        .map(|(i, c)| (i, c * size % total))
        .collect();
    remainders.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut left = size - quotas.iter().sum::<usize>();
    for (i, _) in &remainders {
        if left == 0 {
            break;
        }
        quotas[*i] += 1;
        left -= 1;
    }
    // One seat per label, taken from the most over-allocated label.
    let exact: Vec<usize> = counts.values().map(|c| c * size).collect();
    for i in 0..quotas.len() {
        if quotas[i] > 0 {
            continue;
        }
        let surplus = |j: usize| (quotas[j] * total) as i128 - exact[j] as i128;
        let donor = (0..quotas.len())
            .filter(|j| quotas[*j] > 1)
            .max_by(|a, b| surplus(*a).cmp(&surplus(*b)).then(b.cmp(a)));
        if let Some(donor) = donor {
            quotas[donor] -= 1;
            quotas[i] = 1;
        }
    }
    labels.into_iter().cloned().zip(quotas).collect()
}

/// Size of the stratified subsample: `2k`, raised where needed so that the
/// rarest surviving label's proportional share is at least one seat, capped
/// at the pool size. With that size plain largest-remainder rounding gives
/// every label a seat while staying within one seat of its exact share.
pub fn subsample_size(pool_counts: &IndexMap<Label, usize>, k: usize) -> usize {
    let pool: usize = pool_counts.values().sum();
    let rarest = pool_counts.values().copied().min().unwrap_or(pool).max(1);
    (2 * k).max(pool.div_ceil(rarest)).min(pool)
}

/// Outcome of stratified selection: chosen history indices plus the
/// subsample they were drawn from (absent when the uniform fallback ran).
#[derive(Clone, Debug, PartialEq)]
pub struct StratifiedSelection {
    pub selected: Vec<usize>,
    pub subsample: Option<Vec<usize>>,
    pub plan: Option<StratifiedPlan>,
}

pub fn select_stratified(history: &[HistoryEntry<'_>], config: &SelectionConfig) -> Result<StratifiedSelection> {
    config.validate()?;
    if history.is_empty() {
        return Err(Error::Empty("annotator history is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut counts: IndexMap<&Label, usize> = IndexMap::new();
    for h in history {
        *counts.entry(h.label).or_default() += 1;
    }
    let distinct = counts.len();
    let surviving: IndexMap<Label, usize> = counts
        .iter()
        .filter(|(_, c)| **c >= config.min_label_count)
        .map(|(l, c)| ((*l).clone(), *c))
        .collect();
    let threshold = distinct.max(config.k);

    if history.len() <= threshold || surviving.len() <= 1 {
        let n = config.k.min(history.len());
        let selected = sample(&mut rng, history.len(), n).into_vec();
        return Ok(StratifiedSelection {
            selected,
            subsample: None,
            plan: None,
        });
    }

    let size = subsample_size(&surviving, config.k);
    let quotas = largest_remainder_quotas(&surviving, size);
    let mut subsample = Vec::with_capacity(size);
    for (label, quota) in &quotas {
        let members: Vec<usize> = (0..history.len()).filter(|i| history[*i].label == label).collect();
        for j in sample(&mut rng, members.len(), *quota).into_iter() {
            subsample.push(members[j]);
        }
    }
    subsample.sort_unstable();
    let n = config.k.min(subsample.len());
    let selected = sample(&mut rng, subsample.len(), n)
        .into_iter()
        .map(|j| subsample[j])
        .collect();
    Ok(StratifiedSelection {
        selected,
        subsample: Some(subsample),
        plan: Some(StratifiedPlan {
            pool_counts: surviving,
            quotas,
        }),
    })
}
