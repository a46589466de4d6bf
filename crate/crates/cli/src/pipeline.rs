//! Pipeline stages. Each stage reads earlier stages' artifacts from the
//! output directory, writes its own, and records both in `run.json`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use engage_core::analytics::{self, census_from_groups, AnalyticsError, ReportFormat};
use engage_core::backend::{
    poll_job, submit_finetune, BackendError, FineTuneJob, JobLedger, ModelHandle, RemoteClient, RemoteConfig,
};
use engage_core::corpus::{self, load_manifest, CorpusError};
use engage_core::dataset::{self, DatasetError};
use engage_core::eval::{self, EvalError, GoldLabel};
use engage_core::filter::{self, FilterError};
use engage_core::review::{self, LogLock, ReviewError, SystemClock};
use engage_core::{
    classify_batch, AgreementReport, BaselineModel, BatchOptions, ClassifierModel, CompletionParams, Corpus,
    DecisionLog, ExampleDataset, Frame, JobStatus, KeywordList, Label, LabeledExample, MessageObservation,
    MetricsReport, Prediction, PredictionOutcome, ReviewLabel, SentenceRef, SplitAssignment, SplitPart, Task,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BackendKind, ConfigError, Overrides, PipelineConfig};
use crate::manifest::{display_path, sha256_bytes, sha256_file, RunManifest, StageRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("`{stage}` needs the output of `{needs}` first (missing {})", .path.display())]
    MissingStage {
        stage: &'static str,
        needs: String,
        path: PathBuf,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", .path.display())]
    Input { path: PathBuf, message: String },
}

impl PipelineError {
    /// Process exit status: 2 for a missing prior stage, 3 for an invalid
    /// config, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::MissingStage { .. } => 2,
            PipelineError::Config(_) => 3,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn input_err(path: &Path, message: impl Into<String>) -> PipelineError {
    PipelineError::Input {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| input_err(path, e.to_string()))?;
    out.write_all(b"\n").map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| input_err(path, e.to_string()))
}

/// Row of a gold file: `ref,label[,text]`. A non-empty `text` is a
/// corrected copy of the sentence and is used in place of the corpus text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldRow {
    #[serde(rename = "ref", default)]
    pub reference: String,
    pub label: Label,
    #[serde(default)]
    pub text: Option<String>,
}

/// One classifiable item of a split: `id,text,label`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ItemRow {
    id: String,
    text: String,
    label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ClassifyTarget {
    /// The held-out test split of the task's dataset.
    #[default]
    Test,
    /// Every keyword candidate from the filter stage.
    Candidates,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    config_sha256: String,
}

impl Pipeline {
    pub fn open(config_path: &Path, overrides: &Overrides) -> Result<Self> {
        let config = PipelineConfig::load(config_path, overrides)?;
        let bytes = std::fs::read(config_path).map_err(io_err(config_path))?;
        Ok(Self {
            config,
            config_sha256: sha256_bytes(&bytes),
        })
    }

    pub fn out_dir(&self) -> &Path {
        self.config.out_dir()
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out_dir().join(rel)
    }

    fn task_path(&self, task: Task, rel: &str) -> PathBuf {
        self.out_dir().join(task.as_str()).join(rel)
    }

    fn require(&self, stage: &'static str, needs: impl Into<String>, path: PathBuf) -> Result<PathBuf> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(PipelineError::MissingStage {
                stage,
                needs: needs.into(),
                path,
            })
        }
    }

    fn record(&self, stage: &str, inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
        let out_dir = self.out_dir();
        let digest = |paths: &[&Path]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| {
                    Ok((
                        display_path(p, out_dir, &self.config.base_dir),
                        sha256_file(p).map_err(io_err(p))?,
                    ))
                })
                .collect()
        };
        let mut manifest = RunManifest::load(out_dir).map_err(io_err(out_dir))?.unwrap_or_default();
        manifest.config_sha256 = self.config_sha256.clone();
        manifest.seed = self.config.seed();
        manifest.stages.insert(
            stage.to_owned(),
            StageRecord {
                inputs: digest(inputs)?,
                outputs: digest(outputs)?,
            },
        );
        manifest.save(out_dir).map_err(io_err(out_dir))?;
        Ok(())
    }

    fn corpus(&self, stage: &'static str) -> Result<Corpus> {
        let path = self.require(stage, "ingest", self.path("ingest/corpus.json"))?;
        read_json(&path)
    }

    /// Reads the manifest and every transcript into `ingest/corpus.json`.
    pub fn ingest(&self) -> Result<corpus::CorpusStats> {
        let manifest = &self.config.corpus.manifest;
        let load = load_manifest(manifest)?;
        for s in &load.skipped {
            log::warn!("lesson {} skipped: {}", s.lesson_id, s.reason);
        }
        let stats = corpus::corpus_stats(&load.corpus);
        let corpus_path = self.path("ingest/corpus.json");
        let stats_path = self.path("ingest/stats.json");
        write_json(&corpus_path, &load.corpus)?;
        write_json(
            &stats_path,
            &serde_json::json!({ "stats": stats, "skipped": load.skipped }),
        )?;

        let mut inputs: Vec<PathBuf> = vec![manifest.clone()];
        let mut transcripts = transcript_paths(manifest)?;
        inputs.append(&mut transcripts);
        let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        self.record("ingest", &inputs, &[&corpus_path, &stats_path])?;
        log::info!(
            "ingested {} lessons, {} lines, {} sentences",
            stats.lessons,
            stats.lines,
            stats.sentences
        );
        Ok(stats)
    }

    /// Segments the corpus and keeps keyword candidates.
    pub fn filter(&self) -> Result<usize> {
        let corpus = self.corpus("filter")?;
        let policy = self.config.filter.match_policy;
        let keywords = match &self.config.filter.keywords {
            Some(p) => KeywordList::parse(&std::fs::read_to_string(p).map_err(io_err(p))?, policy),
            None => {
                let mut k = KeywordList::default_list();
                k.match_policy = policy;
                k
            }
        };
        let candidates = filter::keyword_filter(&corpus.sentences(), &keywords);
        let out = self.path("filter/candidates.csv");
        let mut w = create(&out)?;
        filter::write_candidates(&mut w, &candidates)?;
        w.flush().map_err(io_err(&out))?;

        let corpus_path = self.path("ingest/corpus.json");
        let mut inputs: Vec<&Path> = vec![&corpus_path];
        if let Some(k) = &self.config.filter.keywords {
            inputs.push(k);
        }
        self.record("filter", &inputs, &[&out])?;
        log::info!("{} candidate sentences", candidates.len());
        Ok(candidates.len())
    }

    fn gold_path(&self, task: Task) -> Result<PathBuf> {
        self.config.gold.for_task(task).cloned().ok_or_else(|| {
            ConfigError::new(
                format!("gold.{}", task.as_str()),
                "a gold label file is required for this stage",
            )
            .into()
        })
    }

    fn gold_examples(&self, task: Task, corpus: &Corpus) -> Result<Vec<LabeledExample>> {
        let path = self.gold_path(task)?;
        let mut reader = csv::Reader::from_reader(open(&path)?);
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (i, row) in reader.deserialize::<GoldRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| input_err(&path, format!("line {line}: {e}")))?;
            let reference = match row.reference.trim() {
                "" => None,
                r => Some(
                    r.parse::<SentenceRef>()
                        .map_err(|e| input_err(&path, format!("line {line}: {e}")))?,
                ),
            };
            if let Some(r) = &reference {
                if !seen.insert(r.clone()) {
                    return Err(input_err(&path, format!("line {line}: duplicate ref {r}")));
                }
            }
            let text = match (row.text.filter(|t| !t.trim().is_empty()), &reference) {
                (Some(t), _) => t,
                (None, Some(r)) => {
                    corpus
                        .sentence(r)
                        .ok_or_else(|| input_err(&path, format!("line {line}: ref {r} is not in the corpus")))?
                        .text
                }
                (None, None) => return Err(input_err(&path, format!("line {line}: needs a ref or a text"))),
            };
            out.push(LabeledExample::new(text, row.label, reference));
        }
        Ok(out)
    }

    /// Assembles, splits and exports the task's dataset.
    pub fn build_dataset(&self, task: Task) -> Result<ExampleDataset> {
        let corpus = self.corpus("build-dataset")?;
        let gold = self.gold_examples(task, &corpus)?;
        let config = self.config.dataset_config();
        let mut ds = match task {
            Task::Identification => {
                let positives: Vec<LabeledExample> = gold.into_iter().filter(|e| e.label == Label::Positive).collect();
                let positive_refs: HashSet<&SentenceRef> =
                    positives.iter().filter_map(|e| e.reference.as_ref()).collect();
                let pool: Vec<LabeledExample> = corpus
                    .sentences()
                    .into_iter()
                    .filter(|s| !positive_refs.contains(&s.reference))
                    .map(|s| LabeledExample::new(s.text, Label::Negative, Some(s.reference)))
                    .collect();
                dataset::build_examples(&positives, &pool, &config)?
            }
            Task::Frame => dataset::build_labeled(&gold, &config)?,
        };
        let gold_path = self.gold_path(task)?;
        ds.provenance.sources = vec![
            display_path(&self.path("ingest/corpus.json"), self.out_dir(), &self.config.base_dir),
            display_path(&gold_path, self.out_dir(), &self.config.base_dir),
        ];
        let assignment = dataset::split(&ds)?;

        let dir = self.task_path(task, "dataset");
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut outputs = vec![dir.join("dataset.json"), dir.join("split.json")];
        write_json(&outputs[0], &ds)?;
        write_json(&outputs[1], &assignment)?;
        for part in SplitPart::ALL {
            let subset = assignment.subset(&ds, part);
            let csv_path = dir.join(format!("{}.csv", part.as_str()));
            let jsonl_path = dir.join(format!("{}.jsonl", part.as_str()));
            dataset::export_csv(&csv_path, subset.iter().copied())?;
            dataset::export_jsonl(&jsonl_path, subset.iter().copied(), task)?;
            outputs.push(csv_path);
            outputs.push(jsonl_path);
        }
        let items_path = dir.join("test_items.csv");
        write_items(&items_path, &ds, &assignment, SplitPart::Test)?;
        outputs.push(items_path);

        let corpus_path = self.path("ingest/corpus.json");
        let outputs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
        self.record(
            &format!("build-dataset:{}", task.as_str()),
            &[&corpus_path, &gold_path],
            &outputs,
        )?;
        log::info!(
            "{} dataset: {} positive, {} negative; train {} / val {} / test {}",
            task.as_str(),
            ds.count(Label::Positive),
            ds.count(Label::Negative),
            assignment.count(SplitPart::Train),
            assignment.count(SplitPart::Val),
            assignment.count(SplitPart::Test)
        );
        Ok(ds)
    }

    fn remote_client(&self) -> Result<RemoteClient> {
        let b = &self.config.backend;
        let mut rc = RemoteConfig::new(b.endpoint.clone().unwrap_or_default());
        rc.api_key_env = b.api_key_env.clone();
        rc.timeout_secs = b.timeout_secs;
        Ok(RemoteClient::new(&rc)?)
    }

    /// Trains the baseline locally, or submits and polls a remote job.
    pub fn finetune(&self, task: Task) -> Result<ClassifierModel> {
        let dir = self.task_path(task, "dataset");
        let needs = format!("build-dataset --task {}", task.as_str());
        let ds_path = self.require("finetune", needs.clone(), dir.join("dataset.json"))?;
        let split_path = self.require("finetune", needs.clone(), dir.join("split.json"))?;
        let model_path = self.task_path(task, "model/model.json");

        let (model, inputs) = match self.config.backend.kind {
            BackendKind::Baseline => {
                let ds: ExampleDataset = read_json(&ds_path)?;
                let assignment: SplitAssignment = read_json(&split_path)?;
                let baseline = BaselineModel::train(assignment.subset(&ds, SplitPart::Train))?;
                let model = ClassifierModel {
                    task,
                    handle: ModelHandle::Baseline(baseline),
                };
                (model, vec![ds_path, split_path])
            }
            BackendKind::Remote => {
                let train = self.require("finetune", needs.clone(), dir.join("train.jsonl"))?;
                let val = self.require("finetune", needs, dir.join("val.jsonl"))?;
                let model = self.finetune_remote(task, &train, &val)?;
                (model, vec![train, val])
            }
        };
        write_json(&model_path, &model)?;
        let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        self.record(&format!("finetune:{}", task.as_str()), &inputs, &[&model_path])?;
        Ok(model)
    }

    fn finetune_remote(&self, task: Task, train: &Path, val: &Path) -> Result<ClassifierModel> {
        let b = &self.config.backend;
        let client = self.remote_client()?;
        let ledger = JobLedger::new(self.task_path(task, "model/jobs.jsonl"));
        if let Some(dir) = ledger.path().parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let job = FineTuneJob::new(
            task,
            b.base_model.clone().unwrap_or_default(),
            train.display().to_string(),
            val.display().to_string(),
        );
        let retry = b.retry();
        let mut job = submit_finetune(&client, train, val, job, &ledger, &retry)?;
        let id = job.job_id.clone().expect("submitted job has an id");
        log::info!("fine-tuning job {id} submitted");
        for poll in 0..b.max_polls {
            if poll > 0 {
                std::thread::sleep(Duration::from_millis(b.poll_interval_ms));
            }
            let entry = poll_job(&client, &ledger, &id, &retry)?;
            job.status = entry.status;
            log::info!("job {id}: {:?}", entry.status);
            match entry.status {
                JobStatus::Succeeded => {
                    let name = entry
                        .fine_tuned_model
                        .ok_or_else(|| BackendError::Rejected(format!("job {id} succeeded without a model name")))?;
                    job.fine_tuned_model = Some(name.clone());
                    write_json(&self.task_path(task, "model/job.json"), &job)?;
                    return Ok(ClassifierModel::remote(task, name)?);
                }
                JobStatus::Failed => {
                    write_json(&self.task_path(task, "model/job.json"), &job)?;
                    return Err(BackendError::Rejected(format!("fine-tuning job {id} failed")).into());
                }
                _ => {}
            }
        }
        write_json(&self.task_path(task, "model/job.json"), &job)?;
        Err(BackendError::Rejected(format!("job {id} still {:?} after {} polls", job.status, b.max_polls)).into())
    }

    fn predictions_path(&self, task: Task, target: ClassifyTarget) -> PathBuf {
        match target {
            ClassifyTarget::Test => self.task_path(task, "classify/predictions.csv"),
            ClassifyTarget::Candidates => self.task_path(task, "classify/candidate_predictions.csv"),
        }
    }

    /// Runs the task's model over the test split or the candidates.
    pub fn classify(&self, task: Task, target: ClassifyTarget) -> Result<Vec<Prediction>> {
        let model_path = self.require(
            "classify",
            format!("finetune --task {}", task.as_str()),
            self.task_path(task, "model/model.json"),
        )?;
        let model: ClassifierModel = read_json(&model_path)?;
        if model.task != task {
            return Err(input_err(
                &model_path,
                format!("model is for the {} task", model.task.as_str()),
            ));
        }
        let (items_path, items) = match target {
            ClassifyTarget::Test => {
                let p = self.require(
                    "classify",
                    format!("build-dataset --task {}", task.as_str()),
                    self.task_path(task, "dataset/test_items.csv"),
                )?;
                let items = read_items(&p)?.into_iter().map(|r| (r.id, r.text)).collect::<Vec<_>>();
                (p, items)
            }
            ClassifyTarget::Candidates => {
                let p = self.require("classify", "filter", self.path("filter/candidates.csv"))?;
                let items = filter::read_candidates(open(&p)?)?
                    .into_iter()
                    .map(|c| (c.sentence.reference.to_string(), c.sentence.text))
                    .collect::<Vec<_>>();
                (p, items)
            }
        };
        let b = &self.config.backend;
        let options = BatchOptions {
            parallelism: b.parallelism,
            retry: b.retry(),
        };
        let params = CompletionParams::default();
        let predictions = match &model.handle {
            ModelHandle::Baseline(m) => classify_batch(m, &items, &params, &options)?,
            ModelHandle::Remote { model } => {
                let client = self.remote_client()?;
                let completer = client.completer(model);
                classify_batch(&completer, &items, &params, &options)?
            }
        };
        let failed = predictions.iter().filter(|p| p.outcome.label().is_none()).count();
        if failed > 0 {
            log::warn!("{failed} of {} item(s) have no label", predictions.len());
        }

        let out = self.predictions_path(task, target);
        let mut w = create(&out)?;
        eval::write_predictions_csv(&mut w, &predictions)?;
        w.flush().map_err(io_err(&out))?;
        let stage = match target {
            ClassifyTarget::Test => format!("classify:{}", task.as_str()),
            ClassifyTarget::Candidates => format!("classify-candidates:{}", task.as_str()),
        };
        self.record(&stage, &[&model_path, &items_path], &[&out])?;
        Ok(predictions)
    }

    /// Scores test-split predictions; writes `eval/metrics.json`.
    pub fn evaluate(&self, task: Task) -> Result<MetricsReport> {
        let preds_path = self.require(
            "evaluate",
            format!("classify --task {}", task.as_str()),
            self.predictions_path(task, ClassifyTarget::Test),
        )?;
        let items_path = self.require(
            "evaluate",
            format!("build-dataset --task {}", task.as_str()),
            self.task_path(task, "dataset/test_items.csv"),
        )?;
        let predictions = eval::read_predictions_csv(open(&preds_path)?)?;
        let gold: Vec<GoldLabel> = read_items(&items_path)?
            .into_iter()
            .map(|r| GoldLabel {
                id: r.id,
                label: r.label,
            })
            .collect();
        let mut report = eval::evaluate(&predictions, &gold)?;
        if let Some(reference) = self.config.reference(task) {
            report.note_discrepancies(&reference);
        }
        for note in &report.notes {
            log::warn!("{note}");
        }
        let out = self.task_path(task, "eval/metrics.json");
        write_json(&out, &report)?;
        self.record(
            &format!("evaluate:{}", task.as_str()),
            &[&preds_path, &items_path],
            &[&out],
        )?;
        Ok(report)
    }

    /// Frame distribution report over the frame gold labels.
    pub fn report(&self) -> Result<analytics::AggregateReport> {
        let corpus = self.corpus("report")?;
        let gold_path = self.gold_path(Task::Frame)?;
        let gold = self.gold_examples(Task::Frame, &corpus)?;
        let mut observations = Vec::new();
        for e in gold {
            let Some(r) = &e.reference else {
                log::warn!("frame label without a ref left out of the report: {:?}", e.text);
                continue;
            };
            let meta = corpus
                .metadata(&r.lesson_id)
                .expect("gold refs are checked against the corpus");
            observations.push(MessageObservation {
                text: e.text,
                frame: if e.label == Label::Positive {
                    Frame::Gain
                } else {
                    Frame::Loss
                },
                grade: meta.grade,
                trimester: Some(meta.trimester),
                group_id: meta.group_id.clone(),
                reference: Some(r.clone()),
            });
        }
        let census = match self.config.census() {
            Some(c) => c,
            None => census_from_groups(
                corpus
                    .lessons()
                    .map(|l| (l.metadata.grade, l.metadata.group_id.as_str())),
            ),
        };
        let report = analytics::aggregate(&observations, &census)?;
        let dir = self.path("report");
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let csv_path = analytics::emit_report(&report, ReportFormat::Csv, &dir)?;
        let json_path = analytics::emit_report(&report, ReportFormat::Json, &dir)?;
        let corpus_path = self.path("ingest/corpus.json");
        self.record("report", &[&corpus_path, &gold_path], &[&csv_path, &json_path])?;
        Ok(report)
    }

    fn candidates_for_review(&self, candidates: Option<&Path>) -> Result<(PathBuf, Vec<filter::CandidateSentence>)> {
        let path = match candidates {
            Some(p) => p.to_path_buf(),
            None => self.require("review", "filter", self.path("filter/candidates.csv"))?,
        };
        let list = filter::read_candidates(open(&path)?)?;
        Ok((path, list))
    }

    pub fn review_log_path(&self, task: Task) -> PathBuf {
        self.path(&format!("review/{}.jsonl", task.as_str()))
    }

    /// Interactive review over `input`/`output`; decisions are appended to
    /// `review/<task>.jsonl` as they are made.
    pub fn review<R: BufRead, W: Write>(
        &self,
        task: Task,
        coder_id: &str,
        candidates: Option<&Path>,
        input: R,
        output: W,
    ) -> Result<review::SessionSummary> {
        if coder_id.trim().is_empty() {
            return Err(ConfigError::new("--coder-id", "a coder id is required").into());
        }
        let (_, list) = self.candidates_for_review(candidates)?;
        let log_path = self.review_log_path(task);
        if let Some(dir) = log_path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let _lock = LogLock::acquire(&log_path)?;
        let mut log = DecisionLog::open(&log_path)?;
        Ok(review::review_session(
            &list,
            coder_id,
            task,
            &mut log,
            &SystemClock,
            input,
            output,
        )?)
    }

    /// Refs both coders decided, in candidate order.
    fn shared_order(
        &self,
        log: &DecisionLog,
        list: &[filter::CandidateSentence],
        a: &str,
        b: &str,
    ) -> Vec<SentenceRef> {
        let da = log.decided_by(a);
        let db = log.decided_by(b);
        let only_one = list
            .iter()
            .filter(|c| da.contains(&c.sentence.reference) != db.contains(&c.sentence.reference))
            .count();
        if only_one > 0 {
            log::warn!("{only_one} candidate(s) decided by only one coder are left out");
        }
        list.iter()
            .map(|c| c.sentence.reference.clone())
            .filter(|r| da.contains(r) && db.contains(r))
            .collect()
    }

    /// Percent agreement between two coders' decisions.
    pub fn agree(&self, task: Task, a: &str, b: &str, candidates: Option<&Path>) -> Result<AgreementReport> {
        let (cand_path, list) = self.candidates_for_review(candidates)?;
        let log_path = self.require(
            "agree",
            format!("review --task {}", task.as_str()),
            self.review_log_path(task),
        )?;
        let log = DecisionLog::open(&log_path)?;
        let order = self.shared_order(&log, &list, a, b);
        let report = eval::agreement(&log.coded(a, &order), &log.coded(b, &order))?;
        let out = self.path(&format!("review/{}_agreement.json", task.as_str()));
        write_json(&out, &report)?;
        self.record(&format!("agree:{}", task.as_str()), &[&cand_path, &log_path], &[&out])?;
        Ok(report)
    }

    /// Merges two coders' decisions with consensus resolutions into a gold
    /// file `review/<task>_gold.csv` (`ref,label,text`; `text` holds a
    /// coder's corrected copy when there is one).
    pub fn adjudicate(
        &self,
        task: Task,
        a: &str,
        b: &str,
        resolutions_path: &Path,
        candidates: Option<&Path>,
    ) -> Result<PathBuf> {
        let (cand_path, list) = self.candidates_for_review(candidates)?;
        let log_path = self.require(
            "adjudicate",
            format!("review --task {}", task.as_str()),
            self.review_log_path(task),
        )?;
        let log = DecisionLog::open(&log_path)?;
        let order = self.shared_order(&log, &list, a, b);

        #[derive(Deserialize)]
        struct Resolution {
            #[serde(rename = "ref")]
            reference: String,
            label: ReviewLabel,
        }
        let mut resolutions = BTreeMap::new();
        for (i, row) in csv::Reader::from_reader(open(resolutions_path)?)
            .deserialize::<Resolution>()
            .enumerate()
        {
            let row = row.map_err(|e| input_err(resolutions_path, format!("line {}: {e}", i + 2)))?;
            resolutions.insert(row.reference, row.label);
        }
        let merged = eval::adjudicate(&log.coded(a, &order), &log.coded(b, &order), &resolutions)?;

        let fa = log.final_decisions(a);
        let fb = log.final_decisions(b);
        let out = self.path(&format!("review/{}_gold.csv", task.as_str()));
        let mut w = csv::Writer::from_writer(create(&out)?);
        for (r, (id, label)) in order.iter().zip(&merged) {
            let Some(binary) = label.for_task(task) else {
                continue;
            };
            let correction = [fa.get(r), fb.get(r)]
                .into_iter()
                .flatten()
                .find(|d| d.label == *label && d.corrected_text.is_some())
                .and_then(|d| d.corrected_text.clone());
            w.serialize(GoldRow {
                reference: id.clone(),
                label: binary,
                text: correction,
            })
            .map_err(|e| input_err(&out, e.to_string()))?;
        }
        w.flush().map_err(io_err(&out))?;
        drop(w);
        self.record(
            &format!("adjudicate:{}", task.as_str()),
            &[&cand_path, &log_path, resolutions_path],
            &[&out],
        )?;
        Ok(out)
    }
}

fn transcript_paths(manifest: &Path) -> Result<Vec<PathBuf>> {
    #[derive(Deserialize)]
    struct Row {
        #[serde(default)]
        path: String,
    }
    let base = manifest.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(open(manifest)?).deserialize::<Row>() {
        let row = row.map_err(|e| input_err(manifest, e.to_string()))?;
        if !row.path.trim().is_empty() {
            out.push(base.join(row.path.trim()));
        }
    }
    Ok(out)
}

fn item_id(e: &LabeledExample, index: usize) -> String {
    match &e.reference {
        Some(r) => r.to_string(),
        None => format!("item-{index}"),
    }
}

fn write_items(path: &Path, ds: &ExampleDataset, assignment: &SplitAssignment, part: SplitPart) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut seen = HashMap::new();
    for (i, (e, p)) in ds.examples.iter().zip(&assignment.parts).enumerate() {
        if *p != part {
            continue;
        }
        let id = item_id(e, i);
        if seen.insert(id.clone(), ()).is_some() {
            return Err(input_err(path, format!("duplicate item id {id}")));
        }
        w.serialize(ItemRow {
            id,
            text: e.text.clone(),
            label: e.label,
        })
        .map_err(|e| input_err(path, e.to_string()))?;
    }
    if seen.is_empty() {
        w.write_record(["id", "text", "label"])
            .map_err(|e| input_err(path, e.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_items(path: &Path) -> Result<Vec<ItemRow>> {
    csv::Reader::from_reader(open(path)?)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| input_err(path, format!("line {}: {e}", i + 2))))
        .collect()
}

/// Count of items per outcome kind, for summaries.
pub fn outcome_counts(predictions: &[Prediction]) -> (usize, usize, usize) {
    predictions.iter().fold((0, 0, 0), |(l, p, t), x| match x.outcome {
        PredictionOutcome::Label(_) => (l + 1, p, t),
        PredictionOutcome::ParseError(_) => (l, p + 1, t),
        PredictionOutcome::TransportFailure(_) => (l, p, t + 1),
    })
}
