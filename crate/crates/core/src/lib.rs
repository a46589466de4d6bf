//! Core library for mining engaging teacher messages from lesson
//! transcripts: corpus ingestion, keyword pre-filtering, fine-tuning
//! dataset assembly, classifier backends, evaluation, coder review and
//! descriptive reporting.

pub mod analytics;
pub mod backend;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod filter;
pub mod label;
pub mod review;
pub mod text;

pub use analytics::{AggregateReport, Frame, GroupCensus, MessageObservation};
pub use backend::{
    classify_batch, BaselineModel, BatchOptions, ClassifierModel, CompletionParams, FineTuneJob, JobStatus, Prediction,
    PredictionOutcome, RetryPolicy,
};
pub use corpus::{Corpus, CorpusStats, LessonMetadata, LessonRecord, SentenceRef};
pub use dataset::{DatasetConfig, ExampleDataset, LabeledExample, SplitAssignment, SplitPart};
pub use eval::{AgreementReport, ConfusionMatrix, MetricsReport};
pub use filter::{CandidateSentence, KeywordList, MatchPolicy, Sentence};
pub use label::{Label, Task};
pub use review::{DecisionLog, ReviewDecision, ReviewLabel};
