use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::time::Duration;

use lewidi_core::icl::{
    complete, hashed_bag_of_words, prepare_job, render_selection, run_pipeline, select_demonstrations,
    CompletionRequest, HttpBackend, MockBackend, PipelineConfig, PromptProfile, ResponseCache, RetryPolicy, Selection,
};
use lewidi_core::metrics::{split_targets, task_a_report, task_b_report, AnadNormalization};
use lewidi_core::selection::Strategy;
use lewidi_core::{load_dataset, Dataset, Error, Label, PairKey, Provenance};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn csc() -> Dataset {
    load_dataset(fixture("csc_fixture.jsonl")).unwrap()
}

fn fixture_selection() -> Selection {
    let text = std::fs::read_to_string(fixture("csc_fixture_selection.jsonl")).unwrap();
    serde_json::from_str(text.lines().next().unwrap()).unwrap()
}

fn no_wait() -> RetryPolicy {
    RetryPolicy {
        max_retries: 2,
        base_delay: Duration::ZERO,
    }
}

#[test]
fn csc_prompt_matches_published_excerpt() {
    let ds = csc();
    let job = render_selection(&ds, &PromptProfile::builtin("csc").unwrap(), &fixture_selection(), false).unwrap();
    let head = std::fs::read_to_string(fixture("csc_excerpt_head.txt")).unwrap();
    let tail = std::fs::read_to_string(fixture("csc_excerpt_tail.txt")).unwrap();
    assert!(job.prompt.starts_with(&head), "head differs:\n{}", job.prompt);
    assert!(job.prompt.ends_with(&tail), "tail differs:\n{}", job.prompt);
    assert_eq!(job.prompt.matches("\nExample ").count(), 10);
}

/// Lines of `b` not matched by an in-order walk through `a`.
fn inserted_lines<'a>(a: &str, b: &'a str) -> Vec<&'a str> {
    let mut a_lines = a.lines().peekable();
    let mut extra = Vec::new();
    for line in b.lines() {
        if a_lines.peek() == Some(&line) {
            a_lines.next();
        } else {
            extra.push(line);
        }
    }
    assert!(a_lines.next().is_none(), "lines were removed, not only added");
    extra
}

#[test]
fn explanations_toggle_adds_only_explanation_lines() {
    let ds = load_dataset(fixture("par_fixture.jsonl")).unwrap();
    let profile = PromptProfile::builtin("par").unwrap();
    let history: Vec<String> = ds
        .annotator_history("Ann1", "train")
        .unwrap()
        .iter()
        .map(|h| h.item.item_id.clone())
        .collect();
    let sel = Selection {
        item_id: "Par-test-08".into(),
        annotator_id: "Ann1".into(),
        demonstrations: history.clone(),
    };
    let plain = render_selection(&ds, &profile, &sel, false).unwrap().prompt;
    let with = render_selection(&ds, &profile, &sel, true).unwrap().prompt;
    let extra = inserted_lines(&plain, &with);
    let expected: Vec<String> = history
        .iter()
        .map(|id| {
            let item = ds.find_item(id).unwrap();
            format!("[Explanation]: {}", item.annotation_by("Ann1").unwrap().explanation.as_deref().unwrap())
        })
        .collect();
    assert_eq!(extra, expected);
    // each explanation directly follows its example's label line
    let lines: Vec<&str> = with.lines().collect();
    for (i, l) in lines.iter().enumerate() {
        if l.starts_with("[Explanation]:") {
            assert!(lines[i - 1].starts_with("[Label]: "));
        }
    }
}

fn demo_block(prompt: &str) -> &str {
    let start = prompt.find("Example 0:").unwrap_or_else(|| prompt.find("\n[/INST]").unwrap());
    let end = prompt.find("\n[/INST]").unwrap();
    &prompt[start..end]
}

#[test]
fn strategy_switch_changes_only_demonstrations() {
    let ds = csc();
    let profile = PromptProfile::builtin("csc").unwrap();
    let emb = hashed_bag_of_words(&ds, 64).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.selection.k = 4;
    let strat = prepare_job(&ds, &profile, "CSC-test-2143", "Ann743", &cfg, Some(&emb)).unwrap();
    cfg.strategy = Strategy::Similarity;
    let sim = prepare_job(&ds, &profile, "CSC-test-2143", "Ann743", &cfg, Some(&emb)).unwrap();
    let (a, b) = (demo_block(&strat.prompt), demo_block(&sim.prompt));
    assert_eq!(strat.prompt.replacen(a, "", 1), sim.prompt.replacen(b, "", 1));
    assert_eq!(strat.demonstrations.len(), 4);
    assert_eq!(sim.demonstrations.len(), 4);
}

#[test]
fn demonstrations_come_from_own_history_only() {
    let ds = csc();
    let emb = hashed_bag_of_words(&ds, 64).unwrap();
    for strategy in [Strategy::Stratified, Strategy::Similarity] {
        let cfg = PipelineConfig {
            strategy,
            ..Default::default()
        };
        for (item, annotator) in ds.pairs("dev").unwrap().iter().chain(ds.pairs("test").unwrap().iter()) {
            let sel = select_demonstrations(&ds, item, annotator, &cfg, Some(&emb)).unwrap();
            assert!(!sel.demonstrations.contains(item));
            for d in &sel.demonstrations {
                let it = ds.split("train").unwrap().iter().find(|i| &i.item_id == d).expect("train item");
                assert!(it.annotation_by(annotator).is_some());
            }
        }
    }
}

#[test]
fn missing_history_is_an_error() {
    let mut ds = csc();
    ds.annotator_ids.insert("Ann999".into());
    let err = select_demonstrations(&ds, "CSC-test-2143", "Ann999", &PipelineConfig::default(), None).unwrap_err();
    assert!(matches!(err, Error::MissingHistory(_)));
}

/// Mock answering every pair of `split` with the annotator's true label.
fn oracle_mock(ds: &Dataset, split: &str, cfg: &PipelineConfig, profile: &PromptProfile) -> MockBackend {
    let mut mock = MockBackend::default();
    for item in ds.split(split).unwrap() {
        for ann in &item.annotations {
            let job = prepare_job(ds, profile, &item.item_id, &ann.annotator_id, cfg, None).unwrap();
            mock.insert_prompt(&job.prompt, format!("[Label]: {}", ds.label_space.label_text(&ann.label)));
        }
    }
    mock
}

#[test]
fn oracle_backend_reproduces_dev_labels() {
    let ds = csc();
    let profile = PromptProfile::builtin("csc").unwrap();
    let cfg = PipelineConfig::default();
    let mock = oracle_mock(&ds, "dev", &cfg, &profile);
    let preds = run_pipeline(&ds, "dev", &profile, &cfg, None, &mock, None).unwrap();
    let (soft, hard) = split_targets(&ds, "dev").unwrap();
    assert_eq!(preds.perspectivist, hard);
    assert_eq!(preds.soft, soft);
    let b = task_b_report(&ds.label_space, &preds.perspectivist, &hard, AnadNormalization::Range).unwrap();
    assert_eq!(b.mean, 0.0);
    assert!(preds.provenance.values().all(|p| *p == Provenance::Model));
}

#[test]
fn unparseable_output_falls_back_to_train_mode() {
    let ds = csc();
    let profile = PromptProfile::builtin("csc").unwrap();
    let mock = MockBackend::default().with_default("no idea");
    let preds = run_pipeline(&ds, "dev", &profile, &PipelineConfig::default(), None, &mock, None).unwrap();
    // Ann743's train labels [2,2,5,6,4,5,6,3,1,5,6,1]: 5 and 6 tie, lower index wins
    assert_eq!(preds.perspectivist[&PairKey::new("CSC-dev-301", "Ann743")], Label::Class(4));
    assert!(preds.provenance.values().all(|p| *p == Provenance::Fallback));
}

/// Deterministic pseudo-noisy answers keyed on the prompt text.
fn noisy(req: &CompletionRequest) -> Result<String, lewidi_core::icl::BackendError> {
    let h = lewidi_core::icl::sha256_hex(&req.prompt);
    let v = u8::from_str_radix(&h[..2], 16).unwrap();
    Ok(match v % 4 {
        0 => "hmm".to_string(),
        r => format!("I'd say {}", 1 + (v as usize / 4 + r as usize) % 6),
    })
}

#[test]
fn cache_and_concurrency_do_not_change_results() {
    let ds = csc();
    let profile = PromptProfile::builtin("csc").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::open(dir.path()).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.concurrency = 1;
    let cold = run_pipeline(&ds, "test", &profile, &cfg, None, &noisy, Some(&cache)).unwrap();
    cfg.concurrency = 7;
    let counting = MockBackend::default();
    let warm = run_pipeline(&ds, "test", &profile, &cfg, None, &counting, Some(&cache)).unwrap();
    assert_eq!(counting.calls(), 0, "warm run must be served from cache");
    let uncached = run_pipeline(&ds, "test", &profile, &cfg, None, &noisy, None).unwrap();
    assert_eq!(cold, warm);
    assert_eq!(cold, uncached);
    let (soft, _) = split_targets(&ds, "test").unwrap();
    let a1 = task_a_report(&ds.label_space, &cold.soft, &soft).unwrap();
    let a2 = task_a_report(&ds.label_space, &warm.soft, &soft).unwrap();
    assert_eq!(a1.to_json(), a2.to_json());
}

/// Serves one canned HTTP response per connection, recording request bodies.
fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            bodies.push(String::from_utf8(buf).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn http_backend_retries_then_succeeds() {
    let (url, server) = serve(vec![(503, "{}".into()), (200, ok_body("[Label]: 3"))]);
    let backend = HttpBackend::new(url, Some("k".into()), Duration::from_secs(5));
    let out = complete(&CompletionRequest::new("m", "hello", 8), &backend, None, &no_wait()).unwrap();
    assert_eq!(out.raw, "[Label]: 3");
    let bodies = server.join().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
    assert_eq!(sent["temperature"], 0.0);
    assert_eq!(sent["messages"][0]["content"], "hello");
    assert_eq!(sent["max_tokens"], 8);
}

#[test]
fn http_failures_exhaust_retries() {
    let (url, server) = serve(vec![(500, "{}".into()), (502, "{}".into()), (503, "{}".into())]);
    let backend = HttpBackend::new(url, None, Duration::from_secs(5));
    let err = complete(&CompletionRequest::new("m", "p", 8), &backend, None, &no_wait()).unwrap_err();
    assert!(matches!(err, Error::RetriesExhausted { attempts: 3, .. }), "{err}");
    assert_eq!(server.join().unwrap().len(), 3);
}

#[test]
fn http_auth_and_malformed_are_distinct() {
    let (url, server) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
    let backend = HttpBackend::new(url, Some("wrong".into()), Duration::from_secs(5));
    let err = complete(&CompletionRequest::new("m", "p", 8), &backend, None, &no_wait()).unwrap_err();
    assert!(matches!(err, Error::Auth(_)), "{err}");
    server.join().unwrap();

    let (url, server) = serve(vec![(200, "{\"choices\": []}".into())]);
    let backend = HttpBackend::new(url, None, Duration::from_secs(5));
    let err = complete(&CompletionRequest::new("m", "p", 8), &backend, None, &no_wait()).unwrap_err();
    assert!(matches!(err, Error::MalformedResponse(_)), "{err}");
    server.join().unwrap();
}

#[test]
fn pipeline_errors_name_the_pair() {
    let ds = csc();
    let profile = PromptProfile::builtin("csc").unwrap();
    let auth = |_: &CompletionRequest| Err(lewidi_core::icl::BackendError::Auth("401".into()));
    let err = run_pipeline(&ds, "dev", &profile, &PipelineConfig::default(), None, &auth, None).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("CSC-dev-301") && msg.contains("Ann743"), "{msg}");
}

