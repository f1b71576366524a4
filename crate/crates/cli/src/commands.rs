use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use indexmap::IndexMap;
use lewidi_core::icl::{
    complete_jobs, hashed_bag_of_words, render_selection, resolve, run_pipeline, select_demonstrations, Backend,
    HttpBackend, HttpEmbedder, MockBackend, PromptJob, ResponseCache, Selection, API_KEY_ENV,
};
use lewidi_core::metrics::{baseline_most_frequent, baseline_random, split_targets, task_a_report, task_b_report};
use lewidi_core::selection::{EmbeddingTable, Strategy};
use lewidi_core::trainer::{
    kmeans_soft_labels, predict as predict_soft, train as fit, train_with_clusters, ClusterAssignment, FeatureTable,
};
use lewidi_core::{load_dataset, Dataset, Distribution, PairKey, Predictions, Provenance, SoftLabel};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::config::{BackendKind, BaselineKind, EmbeddingSource, RunConfig};
use crate::plot;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    write_text(path, &out)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}: malformed row", path.display(), n + 1)))
        .collect()
}

fn output_path(cfg: &RunConfig, output: Option<PathBuf>, default: &str) -> PathBuf {
    output.unwrap_or_else(|| cfg.out_dir.join(default))
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.dataset_path()?;
    load_dataset(path).with_context(|| format!("cannot load dataset {}", path.display()))
}

/// Per-item empirical distributions of a split with a single-distribution space.
fn single_targets(ds: &Dataset, split: &str) -> Result<IndexMap<String, Distribution>> {
    let (soft, _) = split_targets(ds, split)?;
    soft.into_iter()
        .map(|(id, s)| match s {
            SoftLabel::Single(d) => Ok((id, d)),
            SoftLabel::PerLabel(_) => bail!("training and clustering need an ordinal or categorical label space"),
        })
        .collect()
}

fn embeddings(cfg: &RunConfig, ds: &Dataset) -> Result<Option<EmbeddingTable>> {
    if cfg.pipeline.strategy != Strategy::Similarity {
        return Ok(None);
    }
    let e = &cfg.embeddings;
    let table = match e.source {
        EmbeddingSource::Hashed => hashed_bag_of_words(ds, e.dim)?,
        EmbeddingSource::File => {
            let path = e.path.as_deref().context("embeddings.source = \"file\" needs embeddings.path")?;
            EmbeddingTable::load(path)?
        }
        EmbeddingSource::Http => HttpEmbedder::new(
            &e.endpoint,
            &e.model,
            std::env::var(API_KEY_ENV).ok(),
            Duration::from_secs(cfg.backend.timeout_secs),
        )
        .embed_dataset(ds)?,
    };
    Ok(Some(table))
}

fn backend(cfg: &RunConfig) -> Result<Box<dyn Backend>> {
    let b = &cfg.backend;
    Ok(match b.kind {
        BackendKind::Mock => {
            let mock = match &b.script {
                Some(path) => MockBackend::from_file(path)?,
                None if b.default_completion.is_some() => MockBackend::default(),
                None => bail!("the mock backend needs --script or backend.default_completion"),
            };
            match &b.default_completion {
                Some(d) => Box::new(mock.with_default(d.clone())),
                None => Box::new(mock),
            }
        }
        BackendKind::Http => Box::new(HttpBackend::from_env(&b.endpoint, Duration::from_secs(b.timeout_secs))),
    })
}

fn cache(cfg: &RunConfig) -> Result<Option<ResponseCache>> {
    cfg.cache_dir.as_ref().map(ResponseCache::open).transpose().map_err(Into::into)
}

fn selections(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<Selection>> {
    let table = embeddings(cfg, ds)?;
    ds.pairs(&cfg.split)?
        .iter()
        .map(|(item, annotator)| {
            select_demonstrations(ds, item, annotator, &cfg.pipeline, table.as_ref())
                .with_context(|| format!("pair ({item}, {annotator})"))
        })
        .collect()
}

pub fn evaluate(cfg: &RunConfig, predictions: &Path) -> Result<()> {
    let ds = dataset(cfg)?;
    let space = &ds.label_space;
    let preds = Predictions::load(predictions, space)?;
    let (soft_targets, pair_targets) = split_targets(&ds, &cfg.split)?;

    let task_a = cfg
        .task
        .soft()
        .then(|| task_a_report(space, &preds.soft, &soft_targets).context("task A (soft labels)"));
    let task_b = cfg.task.perspectivist().then(|| {
        task_b_report(space, &preds.perspectivist, &pair_targets, cfg.anad_normalization)
            .context("task B (perspectivist labels)")
    });
    let problems: Vec<String> = [
        task_a.as_ref().and_then(|r| r.as_ref().err()),
        task_b.as_ref().and_then(|r| r.as_ref().err()),
    ]
    .into_iter()
    .flatten()
    .map(|e| format!("{e:#}"))
    .collect();
    if !problems.is_empty() {
        bail!("predictions in {} do not match split `{}`:\n  {}", predictions.display(), cfg.split, problems.join("\n  "));
    }
    let task_a = task_a.transpose()?;
    let task_b = task_b.transpose()?;

    let mut report = json!({"dataset": ds.name, "split": cfg.split});
    let mut text = format!("dataset {} / split {}\n", ds.name, cfg.split);
    if let Some(r) = &task_a {
        report["task_a"] = r.to_json();
        text.push_str("\n[task A]\n");
        text.push_str(&r.to_table());
    }
    if let Some(r) = &task_b {
        report["task_b"] = r.to_json();
        let fallbacks = r
            .per_pair
            .keys()
            .filter(|k| preds.provenance.get(*k) == Some(&Provenance::Fallback))
            .count();
        report["task_b"]["fallback_pairs"] = json!(fallbacks);
        text.push_str("\n[task B]\n");
        text.push_str(&r.to_table());
        text.push_str(&format!("fallback pairs: {fallbacks}\n"));
    }
    write_text(&cfg.out_dir.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_text(&cfg.out_dir.join("report.txt"), &text)?;
    if cfg.plot {
        if let Some(r) = &task_a {
            let values: Vec<f64> = r.per_item.values().copied().collect();
            let svg = plot::histogram(&format!("task A {}", r.metric.name()), "per-item score", &values, 20);
            write_text(&cfg.out_dir.join("task_a_scores.svg"), &svg)?;
        }
        if let Some(r) = &task_b {
            let values: Vec<f64> = r.per_pair.values().copied().collect();
            let svg = plot::histogram(&format!("task B {}", r.metric.name()), "per-pair score", &values, 20);
            write_text(&cfg.out_dir.join("task_b_scores.svg"), &svg)?;
        }
    }
    print!("{text}");
    Ok(())
}

pub fn baseline(cfg: &RunConfig, output: Option<PathBuf>) -> Result<()> {
    let ds = dataset(cfg)?;
    let preds = match cfg.baseline.kind {
        BaselineKind::Random => baseline_random(&ds, &cfg.split, cfg.seed)?,
        BaselineKind::MostFrequent => {
            baseline_most_frequent(&ds, &cfg.split, &cfg.pipeline.train_split, cfg.baseline.scope)?
        }
    };
    let path = output_path(cfg, output, "predictions.jsonl");
    preds.write(&path, &ds.label_space)?;
    eprintln!("wrote {} soft and {} perspectivist rows to {}", preds.soft.len(), preds.perspectivist.len(), path.display());
    Ok(())
}

pub fn select(cfg: &RunConfig, output: Option<PathBuf>) -> Result<()> {
    let ds = dataset(cfg)?;
    let rows = selections(cfg, &ds)?;
    let path = output_path(cfg, output, "selections.jsonl");
    write_jsonl(&path, &rows)?;
    eprintln!("wrote {} selections to {}", rows.len(), path.display());
    Ok(())
}

fn jobs(cfg: &RunConfig, ds: &Dataset, selections_file: Option<&Path>) -> Result<Vec<PromptJob>> {
    let profile = cfg.prompt_profile(&ds.name)?;
    let rows = match selections_file {
        Some(path) => read_jsonl::<Selection>(path)?,
        None => selections(cfg, ds)?,
    };
    rows.iter()
        .map(|s| {
            render_selection(ds, &profile, s, cfg.pipeline.include_explanations)
                .with_context(|| format!("pair ({}, {})", s.item_id, s.annotator_id))
        })
        .collect()
}

pub fn prompt(cfg: &RunConfig, selections_file: Option<&Path>, dry_run: bool, output: Option<PathBuf>) -> Result<()> {
    let ds = dataset(cfg)?;
    let jobs = jobs(cfg, &ds, selections_file)?;
    if dry_run {
        for job in &jobs {
            println!("### ({}, {})\n{}\n", job.item_id, job.annotator_id, job.prompt);
        }
        return Ok(());
    }
    let path = output_path(cfg, output, "prompts.jsonl");
    write_jsonl(&path, &jobs)?;
    eprintln!("wrote {} prompts to {}", jobs.len(), path.display());
    Ok(())
}

pub fn predict(cfg: &RunConfig, prompts: Option<&Path>, output: Option<PathBuf>) -> Result<()> {
    let ds = dataset(cfg)?;
    let backend = backend(cfg)?;
    let cache = cache(cfg)?;
    let preds = match prompts {
        None => {
            let profile = cfg.prompt_profile(&ds.name)?;
            let table = embeddings(cfg, &ds)?;
            run_pipeline(&ds, &cfg.split, &profile, &cfg.pipeline, table.as_ref(), backend.as_ref(), cache.as_ref())?
        }
        Some(path) => {
            let jobs: Vec<PromptJob> = read_jsonl(path)?;
            let completions = complete_jobs(&jobs, &cfg.pipeline, backend.as_ref(), cache.as_ref())?;
            let mut preds = Predictions::default();
            for (job, c) in jobs.iter().zip(&completions) {
                let p = resolve(&ds, job, c, &cfg.pipeline.train_split)?;
                let key = PairKey::new(p.item_id, p.annotator_id);
                preds.provenance.insert(key.clone(), p.provenance);
                preds.perspectivist.insert(key, p.label);
            }
            preds
        }
    };
    let path = output_path(cfg, output, "predictions.jsonl");
    preds.write(&path, &ds.label_space)?;
    let fallbacks = preds.provenance.values().filter(|p| **p == Provenance::Fallback).count();
    eprintln!(
        "wrote {} perspectivist predictions ({fallbacks} fallback) to {}",
        preds.perspectivist.len(),
        path.display()
    );
    Ok(())
}

pub fn aggregate(cfg: &RunConfig, predictions: &Path, output: Option<PathBuf>) -> Result<()> {
    let ds = dataset(cfg)?;
    let mut preds = Predictions::load(predictions, &ds.label_space)?;
    preds.soft = lewidi_core::icl::aggregate_split(&ds, &cfg.split, &preds.perspectivist)?;
    let path = output_path(cfg, output, "aggregated.jsonl");
    preds.write(&path, &ds.label_space)?;
    eprintln!("wrote {} soft labels to {}", preds.soft.len(), path.display());
    Ok(())
}

pub fn train(
    cfg: &RunConfig,
    features: &Path,
    train_split: &str,
    clusters: Option<&Path>,
    predict_split: Option<&str>,
) -> Result<()> {
    let ds = dataset(cfg)?;
    let table = FeatureTable::load(features)?;
    let targets = single_targets(&ds, train_split)?;
    let train_features = table.subset(targets.keys())?;
    let outcome = match clusters {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let assignment: ClusterAssignment =
                serde_json::from_str(&text).with_context(|| format!("malformed cluster file {}", path.display()))?;
            train_with_clusters(&train_features, &targets, &ds.label_space, &assignment, &cfg.trainer)?
        }
        None => fit(&train_features, &targets, &ds.label_space, &cfg.trainer)?,
    };
    write_text(&cfg.out_dir.join("model.json"), &outcome.model.to_json())?;
    write_text(&cfg.out_dir.join("loss_trace.csv"), &outcome.trace_csv())?;
    if let (None, Some(c)) = (clusters, &outcome.clusters) {
        write_text(&cfg.out_dir.join("clusters.json"), &serde_json::to_string_pretty(c)?)?;
    }
    let epochs = outcome.epoch_losses();
    if cfg.plot {
        let svg = plot::line("training loss", "epoch", "mean L_total", &epochs);
        write_text(&cfg.out_dir.join("loss.svg"), &svg)?;
    }
    if let Some(split) = predict_split {
        let ids: Vec<String> = ds.split(split)?.iter().map(|i| i.item_id.clone()).collect();
        let dists = predict_soft(&outcome.model, &table.subset(ids.iter())?)?;
        let preds = Predictions {
            soft: dists.into_iter().map(|(id, d)| (id, SoftLabel::Single(d))).collect(),
            ..Default::default()
        };
        preds.write(cfg.out_dir.join(format!("{split}_predictions.jsonl")), &ds.label_space)?;
    }
    eprintln!(
        "trained {} epochs; final mean loss {:.6}; model in {}",
        epochs.len(),
        epochs.last().copied().unwrap_or(f64::NAN),
        cfg.out_dir.join("model.json").display()
    );
    Ok(())
}

pub fn cluster(cfg: &RunConfig, output: Option<PathBuf>) -> Result<()> {
    let ds = dataset(cfg)?;
    let targets = single_targets(&ds, &cfg.split)?;
    let fit = kmeans_soft_labels(&targets, cfg.trainer.k_clusters, cfg.seed)?.ordered_by_expectation();
    let path = output_path(cfg, output, "clusters.json");
    write_text(&path, &serde_json::to_string_pretty(&fit)?)?;
    let mut sizes = vec![0usize; fit.centroids.len()];
    for c in fit.assignments.values() {
        sizes[*c] += 1;
    }
    eprintln!("cluster sizes {sizes:?}; written to {}", path.display());
    Ok(())
}
