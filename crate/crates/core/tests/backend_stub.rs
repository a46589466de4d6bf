use std::path::Path;
use std::time::Duration;

use engage_core::backend::stub::{Route, StubScript, StubServer};
use engage_core::backend::{
    poll_job, submit_finetune, BackendError, FineTuneJob, JobLedger, RemoteClient, RemoteConfig,
};
use engage_core::dataset::{write_jsonl, DatasetError};
use engage_core::{
    classify_batch, BaselineModel, BatchOptions, CompletionParams, JobStatus, Label, LabeledExample, PredictionOutcome,
    RetryPolicy, Task,
};

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 5,
        base: Duration::from_millis(5),
        factor: 2,
    }
}

fn client(stub: &StubServer, key_env: &str, key: Option<&str>) -> RemoteClient {
    match key {
        Some(k) => std::env::set_var(key_env, k),
        None => std::env::remove_var(key_env),
    }
    let mut cfg = RemoteConfig::new(stub.endpoint());
    cfg.api_key_env = key_env.into();
    cfg.timeout_secs = 5;
    RemoteClient::new(&cfg).unwrap()
}

fn write_training(dir: &Path, name: &str, n: usize) -> std::path::PathBuf {
    let rows: Vec<LabeledExample> = (0..n)
        .map(|i| LabeledExample::new(format!("frase {i}"), Label::from_u8((i % 2) as u8).unwrap(), None))
        .collect();
    let path = dir.join(name);
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &rows, Task::Identification).unwrap();
    std::fs::write(&path, buf).unwrap();
    path
}

fn job() -> FineTuneJob {
    FineTuneJob::new(Task::Identification, "base-model", "train.jsonl", "val.jsonl")
}

#[test]
fn submission_returns_pending_job_with_id() {
    let stub = StubServer::start("127.0.0.1:0", StubScript::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ledger = JobLedger::new(dir.path().join("jobs.jsonl"));
    let c = client(&stub, "ENGAGE_TEST_KEY_SUBMIT", None);
    let train = write_training(dir.path(), "train.jsonl", 10);
    let val = write_training(dir.path(), "val.jsonl", 4);

    let job = submit_finetune(&c, &train, &val, job(), &ledger, &fast_retry()).unwrap();
    assert_eq!(job.status, JobStatus::Pending);
    let id = job.job_id.clone().unwrap();
    assert!(!id.is_empty());
    let entries = ledger.entries().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(
        (entries[0].job_id.as_str(), entries[0].status, entries[0].attempt),
        (id.as_str(), JobStatus::Pending, 1)
    );
}

#[test]
fn malformed_training_file_names_the_line() {
    let stub = StubServer::start("127.0.0.1:0", StubScript::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ledger = JobLedger::new(dir.path().join("jobs.jsonl"));
    let c = client(&stub, "ENGAGE_TEST_KEY_MALFORMED", None);
    let train = write_training(dir.path(), "train.jsonl", 3);
    let mut content = std::fs::read_to_string(&train).unwrap();
    content.push_str("{\"prompt\":\"sin separador\",\"completion\":\" 1\"}\n");
    std::fs::write(&train, content).unwrap();
    let val = write_training(dir.path(), "val.jsonl", 2);

    let err = submit_finetune(&c, &train, &val, job(), &ledger, &fast_retry()).unwrap_err();
    match &err {
        BackendError::InvalidFile { source, .. } => {
            assert!(matches!(source, DatasetError::Jsonl { line: 4, .. }), "{source}")
        }
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().contains("train.jsonl"), "{err}");
    assert!(stub.transcript().is_empty(), "nothing should be sent");
    assert!(ledger.entries().unwrap().is_empty());
}

#[test]
fn transient_job_creation_failures_are_retried_and_counted() {
    let stub = StubServer::start("127.0.0.1:0", StubScript::default().failing(Route::CreateJob, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ledger = JobLedger::new(dir.path().join("jobs.jsonl"));
    let c = client(&stub, "ENGAGE_TEST_KEY_RETRY", None);
    let train = write_training(dir.path(), "train.jsonl", 6);
    let val = write_training(dir.path(), "val.jsonl", 2);

    let job = submit_finetune(&c, &train, &val, job(), &ledger, &fast_retry()).unwrap();
    let entries = ledger.entries().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].attempt, 3);
    assert_eq!(entries[0].job_id, job.job_id.unwrap());
    let statuses: Vec<u16> = stub
        .transcript()
        .iter()
        .filter(|r| r.route == Route::CreateJob)
        .map(|r| r.status)
        .collect();
    assert_eq!(statuses, [503, 503, 200]);
}

#[test]
fn polling_walks_to_a_sticky_terminal_status() {
    let stub = StubServer::start("127.0.0.1:0", StubScript::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ledger = JobLedger::new(dir.path().join("jobs.jsonl"));
    let c = client(&stub, "ENGAGE_TEST_KEY_POLL", None);
    let train = write_training(dir.path(), "train.jsonl", 6);
    let val = write_training(dir.path(), "val.jsonl", 2);
    let id = submit_finetune(&c, &train, &val, job(), &ledger, &fast_retry())
        .unwrap()
        .job_id
        .unwrap();

    let first = poll_job(&c, &ledger, &id, &fast_retry()).unwrap();
    assert_eq!(first.status, JobStatus::Running);
    let second = poll_job(&c, &ledger, &id, &fast_retry()).unwrap();
    assert_eq!(second.status, JobStatus::Succeeded);
    assert!(second.fine_tuned_model.is_some());

    let requests = stub.transcript().len();
    let third = poll_job(&c, &ledger, &id, &fast_retry()).unwrap();
    assert_eq!(third.status, JobStatus::Succeeded);
    assert_eq!(
        stub.transcript().len(),
        requests,
        "terminal status must not be re-polled"
    );

    let seq: Vec<JobStatus> = ledger.entries().unwrap().iter().map(|e| e.status).collect();
    assert_eq!(seq, [JobStatus::Pending, JobStatus::Running, JobStatus::Succeeded]);
    let times: Vec<_> = ledger.entries().unwrap().iter().map(|e| e.time().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn polling_unknown_job_is_an_error() {
    let stub = StubServer::start("127.0.0.1:0", StubScript::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ledger = JobLedger::new(dir.path().join("jobs.jsonl"));
    let c = client(&stub, "ENGAGE_TEST_KEY_UNKNOWN", None);
    let err = poll_job(&c, &ledger, "ftjob-nope", &fast_retry()).unwrap_err();
    assert!(
        matches!(err, BackendError::UnknownJob(ref id) if id == "ftjob-nope"),
        "{err}"
    );
}

fn items(n: usize) -> Vec<(String, String)> {
    (0..n)
        .map(|i| (format!("l:{i}:0"), format!("frase número {i}")))
        .collect()
}

#[test]
fn completions_over_http_keep_order_and_mark_parse_errors() {
    let script = StubScript::default().with_completion(|text| {
        if text.ends_with(" 3") {
            "yes".into()
        } else if text.ends_with(" 4") {
            " 0\n".into()
        } else {
            " 1".into()
        }
    });
    let stub = StubServer::start("127.0.0.1:0", script).unwrap();
    let c = client(&stub, "ENGAGE_TEST_KEY_COMPLETE", None);
    let opts = BatchOptions {
        parallelism: 3,
        retry: fast_retry(),
    };
    let preds = classify_batch(&c.completer("ft-model"), &items(8), &CompletionParams::default(), &opts).unwrap();
    assert_eq!(preds.len(), 8);
    for (i, p) in preds.iter().enumerate() {
        assert_eq!(p.id, format!("l:{i}:0"));
        let want = match i {
            3 => PredictionOutcome::ParseError("yes".into()),
            4 => PredictionOutcome::Label(Label::Negative),
            _ => PredictionOutcome::Label(Label::Positive),
        };
        assert_eq!(p.outcome, want, "item {i}");
    }
}

#[test]
fn bad_credentials_abort_the_batch() {
    let stub = StubServer::start("127.0.0.1:0", StubScript::default().with_api_key("right")).unwrap();
    let c = client(&stub, "ENGAGE_TEST_KEY_AUTH", Some("wrong"));
    let opts = BatchOptions {
        parallelism: 2,
        retry: fast_retry(),
    };
    let err = classify_batch(&c.completer("m"), &items(20), &CompletionParams::default(), &opts).unwrap_err();
    assert!(matches!(err, BackendError::Aborted(_)), "{err}");
    // no retries on an auth failure, and the batch stops early
    assert!(stub.transcript().iter().all(|r| r.status == 401));
    assert!(stub.transcript().len() <= 2);

    let ok = client(&stub, "ENGAGE_TEST_KEY_AUTH2", Some("right"));
    assert_eq!(
        classify_batch(&ok.completer("m"), &items(3), &CompletionParams::default(), &opts)
            .unwrap()
            .len(),
        3
    );
}

#[test]
fn exhausted_retries_become_transport_markers() {
    let stub = StubServer::start("127.0.0.1:0", StubScript::default().failing(Route::Completions, 100)).unwrap();
    let c = client(&stub, "ENGAGE_TEST_KEY_EXHAUST", None);
    let opts = BatchOptions {
        parallelism: 2,
        retry: RetryPolicy {
            max_attempts: 3,
            base: Duration::from_millis(1),
            factor: 2,
        },
    };
    let preds = classify_batch(&c.completer("m"), &items(4), &CompletionParams::default(), &opts).unwrap();
    assert_eq!(preds.len(), 4);
    assert!(preds
        .iter()
        .all(|p| matches!(p.outcome, PredictionOutcome::TransportFailure(_))));
    assert_eq!(stub.transcript().len(), 12);
}

#[test]
fn stub_can_answer_with_a_baseline_model() {
    let train = [
        LabeledExample::new("estudiad para el examen", Label::Positive, None),
        LabeledExample::new("si aprobáis iréis a la universidad", Label::Positive, None),
        LabeledExample::new("abrid la ventana", Label::Negative, None),
        LabeledExample::new("hoy hace sol", Label::Negative, None),
    ];
    let model = BaselineModel::train(&train).unwrap();
    let stub = StubServer::start("127.0.0.1:0", StubScript::default().with_baseline(model.clone())).unwrap();
    let c = client(&stub, "ENGAGE_TEST_KEY_BASELINE", None);
    let batch = vec![
        ("a".to_owned(), "el examen es importante".to_owned()),
        ("b".to_owned(), "cerrad la ventana".to_owned()),
    ];
    let opts = BatchOptions {
        parallelism: 1,
        retry: fast_retry(),
    };
    let remote = classify_batch(&c.completer("m"), &batch, &CompletionParams::default(), &opts).unwrap();
    let local = classify_batch(&model, &batch, &CompletionParams::default(), &opts).unwrap();
    assert_eq!(remote, local);
    assert_eq!(remote[0].outcome.label(), Some(Label::Positive));
    assert_eq!(remote[1].outcome.label(), Some(Label::Negative));
}
