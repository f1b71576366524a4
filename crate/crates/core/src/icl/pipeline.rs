use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{soft_label_from_votes, Dataset, HistoryEntry, Label, LabelSpace, SoftLabel};
use crate::error::{Error, Result};
use crate::metrics::modal_label;
use crate::predictions::{PairKey, Predictions, Provenance};
use crate::selection::{select_mmr, select_stratified, EmbeddingTable, SelectionConfig, Strategy};

use super::backend::{complete, Backend, CompletionRequest, CompletionResult, ResponseCache, RetryPolicy};
use super::prompt::{render_prompt, Demonstration, PromptProfile, PromptSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub model: String,
    pub max_tokens: u32,
    pub strategy: Strategy,
    pub selection: SelectionConfig,
    pub include_explanations: bool,
    /// Split that supplies demonstrations and the fallback mode.
    pub train_split: String,
    /// Upper bound on requests in flight.
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: "gpt-4o".into(),
            max_tokens: 16,
            strategy: Strategy::Stratified,
            selection: SelectionConfig::default(),
            include_explanations: false,
            train_split: "train".into(),
            concurrency: 4,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PerspectivistPrediction {
    pub item_id: String,
    pub annotator_id: String,
    pub label: Label,
    pub provenance: Provenance,
}

/// Demonstrations chosen for one (item, annotator) pair, by item id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub item_id: String,
    pub annotator_id: String,
    pub demonstrations: Vec<String>,
}

/// A rendered prompt ready to send.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptJob {
    pub item_id: String,
    pub annotator_id: String,
    pub demonstrations: Vec<String>,
    pub prompt: String,
}

/// Seed for one pair, independent of the order pairs are processed in.
pub fn pair_seed(seed: u64, item_id: &str, annotator_id: &str) -> u64 {
    let material = serde_json::json!([seed, item_id, annotator_id]).to_string();
    let digest = Sha256::digest(material.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

fn train_history<'a>(dataset: &'a Dataset, annotator_id: &str, split: &str) -> Result<Vec<HistoryEntry<'a>>> {
    let history = dataset.annotator_history(annotator_id, split)?;
    if history.is_empty() {
        return Err(Error::MissingHistory(annotator_id.to_owned()));
    }
    Ok(history)
}

/// Picks demonstrations from the annotator's own training history, never
/// including the query item. Short histories yield fewer demonstrations.
pub fn select_demonstrations(
    dataset: &Dataset,
    item_id: &str,
    annotator_id: &str,
    config: &PipelineConfig,
    embeddings: Option<&EmbeddingTable>,
) -> Result<Selection> {
    let mut history = train_history(dataset, annotator_id, &config.train_split)?;
    history.retain(|h| h.item.item_id != item_id);
    let chosen: Vec<usize> = if history.is_empty() {
        Vec::new()
    } else {
        match config.strategy {
            Strategy::Similarity => {
                let table = embeddings
                    .ok_or_else(|| Error::Config("similarity selection needs an embedding table".into()))?;
                select_mmr(item_id, &history, table, &config.selection)?
            }
            Strategy::Stratified => {
                let selection = SelectionConfig {
                    seed: pair_seed(config.selection.seed, item_id, annotator_id),
                    ..config.selection.clone()
                };
                select_stratified(&history, &selection)?.selected
            }
        }
    };
    Ok(Selection {
        item_id: item_id.to_owned(),
        annotator_id: annotator_id.to_owned(),
        demonstrations: chosen.into_iter().map(|i| history[i].item.item_id.clone()).collect(),
    })
}

/// Renders the prompt for a selection. Each demonstration must be an item
/// the annotator labelled.
pub fn render_selection(
    dataset: &Dataset,
    profile: &PromptProfile,
    selection: &Selection,
    include_explanations: bool,
) -> Result<PromptJob> {
    let query = dataset
        .find_item(&selection.item_id)
        .ok_or_else(|| Error::KeyMismatch(format!("unknown item `{}`", selection.item_id)))?;
    let examples = selection
        .demonstrations
        .iter()
        .map(|id| {
            let item = dataset
                .find_item(id)
                .ok_or_else(|| Error::KeyMismatch(format!("unknown demonstration item `{id}`")))?;
            let ann = item.annotation_by(&selection.annotator_id).ok_or_else(|| {
                Error::KeyMismatch(format!(
                    "demonstration item `{id}` was not labelled by `{}`",
                    selection.annotator_id
                ))
            })?;
            Ok(Demonstration {
                segments: item.text_fields.clone(),
                label: dataset.label_space.label_text(&ann.label),
                explanation: ann.explanation.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = PromptSpec {
        profile: profile.clone(),
        include_explanations,
        examples,
        query: query.text_fields.clone(),
    };
    Ok(PromptJob {
        item_id: selection.item_id.clone(),
        annotator_id: selection.annotator_id.clone(),
        demonstrations: selection.demonstrations.clone(),
        prompt: render_prompt(&spec)?,
    })
}

pub fn prepare_job(
    dataset: &Dataset,
    profile: &PromptProfile,
    item_id: &str,
    annotator_id: &str,
    config: &PipelineConfig,
    embeddings: Option<&EmbeddingTable>,
) -> Result<PromptJob> {
    let selection = select_demonstrations(dataset, item_id, annotator_id, config, embeddings)?;
    render_selection(dataset, profile, &selection, config.include_explanations)
}

/// The annotator's most frequent training label.
pub fn fallback_label(dataset: &Dataset, annotator_id: &str, train_split: &str) -> Result<Label> {
    let history = train_history(dataset, annotator_id, train_split)?;
    let labels: Vec<&Label> = history.iter().map(|h| h.label).collect();
    Ok(modal_label(&labels, &dataset.label_space).expect("history is non-empty"))
}

/// Parses a completion, falling back to the annotator's training mode.
pub fn resolve(
    dataset: &Dataset,
    job: &PromptJob,
    completion: &CompletionResult,
    train_split: &str,
) -> Result<PerspectivistPrediction> {
    let (label, provenance) = match completion.parsed(&dataset.label_space) {
        Some(label) => (label, Provenance::Model),
        None => (fallback_label(dataset, &job.annotator_id, train_split)?, Provenance::Fallback),
    };
    Ok(PerspectivistPrediction {
        item_id: job.item_id.clone(),
        annotator_id: job.annotator_id.clone(),
        label,
        provenance,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn predict_annotator(
    dataset: &Dataset,
    profile: &PromptProfile,
    item_id: &str,
    annotator_id: &str,
    config: &PipelineConfig,
    embeddings: Option<&EmbeddingTable>,
    backend: &dyn Backend,
    cache: Option<&ResponseCache>,
) -> Result<PerspectivistPrediction> {
    let job = prepare_job(dataset, profile, item_id, annotator_id, config, embeddings)?;
    let request = CompletionRequest::new(&config.model, &job.prompt, config.max_tokens);
    let completion = complete(&request, backend, cache, &config.retry)?;
    resolve(dataset, &job, &completion, &config.train_split)
}

/// Sends every job with at most `concurrency` requests in flight. Results
/// come back in job order; the first failing job (by position) wins.
pub fn complete_jobs(
    jobs: &[PromptJob],
    config: &PipelineConfig,
    backend: &dyn Backend,
    cache: Option<&ResponseCache>,
) -> Result<Vec<CompletionResult>> {
    let workers = config.concurrency.max(1).min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<CompletionResult>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let request = CompletionRequest::new(&config.model, &jobs[i].prompt, config.max_tokens);
                let out = complete(&request, backend, cache, &config.retry).map_err(|e| match e {
                    Error::RetriesExhausted { .. } | Error::Auth(_) | Error::MalformedResponse(_) | Error::Rejected { .. } => {
                        Error::Pair {
                            item_id: jobs[i].item_id.clone(),
                            annotator_id: jobs[i].annotator_id.clone(),
                            source: Box::new(e),
                        }
                    }
                    other => other,
                });
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every job index is claimed"))
        .collect()
}

/// Normalized counts of one item's predictions (per-label yes-fractions for
/// multi-binary spaces).
pub fn aggregate_soft(preds: &[PerspectivistPrediction], space: &LabelSpace) -> Result<SoftLabel> {
    if preds.is_empty() {
        return Err(Error::Empty("no predictions to aggregate".into()));
    }
    let labels: Vec<&Label> = preds.iter().map(|p| &p.label).collect();
    soft_label_from_votes(&labels, space)
}

/// Task A soft labels from Task B predictions, one per split item, over
/// exactly the annotators assigned to that item.
pub fn aggregate_split(
    dataset: &Dataset,
    split: &str,
    perspectivist: &IndexMap<PairKey, Label>,
) -> Result<IndexMap<String, SoftLabel>> {
    let mut out = IndexMap::new();
    for item in dataset.split(split)? {
        let mut labels = Vec::with_capacity(item.annotations.len());
        for ann in &item.annotations {
            let key = PairKey::new(&item.item_id, &ann.annotator_id);
            let label = perspectivist
                .get(&key)
                .ok_or_else(|| Error::KeyMismatch(format!("no prediction for {key}")))?;
            labels.push(label);
        }
        if labels.is_empty() {
            return Err(Error::NoAnnotations(item.item_id.clone()));
        }
        out.insert(item.item_id.clone(), soft_label_from_votes(&labels, &dataset.label_space)?);
    }
    Ok(out)
}

/// Selection, prompting, completion, parsing and aggregation for every
/// (item, annotator) pair of `split`.
pub fn run_pipeline(
    dataset: &Dataset,
    split: &str,
    profile: &PromptProfile,
    config: &PipelineConfig,
    embeddings: Option<&EmbeddingTable>,
    backend: &dyn Backend,
    cache: Option<&ResponseCache>,
) -> Result<Predictions> {
    config.selection.validate()?;
    let jobs = dataset
        .pairs(split)?
        .iter()
        .map(|(item, annotator)| prepare_job(dataset, profile, item, annotator, config, embeddings))
        .collect::<Result<Vec<_>>>()?;
    let completions = complete_jobs(&jobs, config, backend, cache)?;
    let preds = jobs
        .iter()
        .zip(&completions)
        .map(|(job, c)| resolve(dataset, job, c, &config.train_split))
        .collect::<Result<Vec<_>>>()?;
    assemble(dataset, split, preds)
}

/// Builds the predictions file content from per-pair predictions.
pub fn assemble(dataset: &Dataset, split: &str, preds: Vec<PerspectivistPrediction>) -> Result<Predictions> {
    let mut out = Predictions::default();
    for p in preds {
        let key = PairKey::new(p.item_id, p.annotator_id);
        out.provenance.insert(key.clone(), p.provenance);
        out.perspectivist.insert(key, p.label);
    }
    out.soft = aggregate_split(dataset, split, &out.perspectivist)?;
    Ok(out)
}
