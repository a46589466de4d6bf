//! The pipeline config file (TOML). Relative paths resolve against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use engage_core::dataset::SplitFractions;
use engage_core::eval::{ReferenceMetrics, ReportedValue};
use engage_core::{DatasetConfig, MatchPolicy, RetryPolicy, Task};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("config {key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Baseline,
    Remote,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    /// Keyword file; the built-in list when absent.
    pub keywords: Option<PathBuf>,
    #[serde(default)]
    pub match_policy: MatchPolicy,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub positive_fraction: Option<f64>,
    pub split: Option<[f64; 3]>,
    pub seed: Option<u64>,
    pub stratified: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldSection {
    /// `ref,label[,text]` with label 1 for engaging messages.
    pub identification: Option<PathBuf>,
    /// `ref,label[,text]` with label 1 for gain, 0 for loss.
    pub frame: Option<PathBuf>,
}

impl GoldSection {
    pub fn for_task(&self, task: Task) -> Option<&PathBuf> {
        match task {
            Task::Identification => self.identification.as_ref(),
            Task::Frame => self.frame.as_ref(),
        }
    }
}

fn default_api_key_env() -> String {
    "ENGAGE_API_KEY".into()
}

fn default_parallelism() -> usize {
    4
}

fn default_max_attempts() -> u32 {
    5
}

fn default_backoff_base_ms() -> u64 {
    1000
}

fn default_backoff_factor() -> u32 {
    2
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_poll_interval_ms() -> u64 {
    30_000
}

fn default_max_polls() -> u32 {
    2880
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default)]
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    /// Model the remote service fine-tunes from.
    pub base_model: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_factor")]
    pub backoff_factor: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_poll_interval_ms")]
    pub poll_interval_ms: u64,
    #[serde(default = "default_max_polls")]
    pub max_polls: u32,
}

impl Default for BackendSection {
    fn default() -> Self {
        toml::from_str("").expect("all backend keys have defaults")
    }
}

impl BackendSection {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            base: Duration::from_millis(self.backoff_base_ms),
            factor: self.backoff_factor,
        }
    }
}

/// Printed reference values to compare computed metrics against, e.g.
/// `sensitivity = "84.31%"` or `f1 = ".73"`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub sensitivity: Option<String>,
    pub specificity: Option<String>,
    pub precision: Option<String>,
    pub f1: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub identification: Option<ReferenceSection>,
    pub frame: Option<ReferenceSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Groups per grade; counted from the manifest's group ids when absent.
    pub census: Option<BTreeMap<String, u32>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusSection,
    #[serde(default)]
    pub filter: FilterSection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub gold: GoldSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory relative paths were resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub backend: Option<BackendKind>,
}

fn toml_key(err: &toml::de::Error, source: &str) -> String {
    // toml reports a byte span; the enclosing `[section]` and key on that
    // line make a usable key path.
    let Some(span) = err.span() else {
        return "<file>".into();
    };
    let before = &source[..span.start.min(source.len())];
    let section = before
        .lines()
        .rev()
        .find_map(|l| {
            let l = l.trim();
            l.strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .map(|s| s.trim_matches(|c| c == '[' || c == ']').to_owned())
        })
        .unwrap_or_default();
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = source[line_start..].lines().next().unwrap_or_default();
    let key = line.split('=').next().unwrap_or_default().trim();
    match (section.is_empty(), key.is_empty() || key.starts_with('[')) {
        (true, _) => key.to_owned(),
        (false, true) => section,
        (false, false) => format!("{section}.{key}"),
    }
}

impl PipelineConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&source)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve(&base);
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        toml::from_str(source).map_err(|e| ConfigError::new(toml_key(&e, source), e.message().trim().to_owned()))
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.corpus.manifest);
        self.filter.keywords.as_mut().map(join);
        self.gold.identification.as_mut().map(join);
        self.gold.frame.as_mut().map(join);
        self.output.dir.as_mut().map(join);
        self.base_dir = base.to_path_buf();
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.dataset.seed = Some(seed);
        }
        if let Some(dir) = &o.out_dir {
            self.output.dir = Some(dir.clone());
        }
        if let Some(kind) = o.backend {
            self.backend.kind = kind;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let must_exist = |key: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(ConfigError::new(key, format!("file not found: {}", p.display())))
            }
        };
        must_exist("corpus.manifest", &self.corpus.manifest)?;
        if let Some(p) = &self.filter.keywords {
            must_exist("filter.keywords", p)?;
        }
        if let Some(p) = &self.gold.identification {
            must_exist("gold.identification", p)?;
        }
        if let Some(p) = &self.gold.frame {
            must_exist("gold.frame", p)?;
        }
        if self.dataset.seed.is_none() {
            return Err(ConfigError::new("dataset.seed", "a seed is required (or pass --seed)"));
        }
        self.dataset_config()
            .validate()
            .map_err(|e| ConfigError::new("dataset", e.to_string()))?;
        if self.output.dir.is_none() {
            return Err(ConfigError::new(
                "output.dir",
                "an output directory is required (or pass --out-dir)",
            ));
        }
        let b = &self.backend;
        if b.parallelism == 0 {
            return Err(ConfigError::new("backend.parallelism", "must be at least 1"));
        }
        if b.max_attempts == 0 {
            return Err(ConfigError::new("backend.max_attempts", "must be at least 1"));
        }
        if b.backoff_factor == 0 {
            return Err(ConfigError::new("backend.backoff_factor", "must be at least 1"));
        }
        if b.kind == BackendKind::Remote {
            if b.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                return Err(ConfigError::new("backend.endpoint", "required for the remote backend"));
            }
            if b.base_model.as_deref().is_none_or(|m| m.trim().is_empty()) {
                return Err(ConfigError::new(
                    "backend.base_model",
                    "required for the remote backend",
                ));
            }
        }
        for (task, section) in [
            ("identification", &self.eval.identification),
            ("frame", &self.eval.frame),
        ] {
            if let Some(s) = section {
                reference_metrics(s).map_err(|(k, m)| ConfigError::new(format!("eval.{task}.{k}"), m))?;
            }
        }
        if let Some(census) = &self.report.census {
            for (grade, groups) in census {
                if grade.parse::<u8>().is_err() {
                    return Err(ConfigError::new(
                        format!("report.census.{grade}"),
                        "grade must be an integer",
                    ));
                }
                if *groups == 0 {
                    return Err(ConfigError::new(
                        format!("report.census.{grade}"),
                        "group count must be positive",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.dataset.seed.expect("validated")
    }

    pub fn out_dir(&self) -> &Path {
        self.output.dir.as_deref().expect("validated")
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        let mut c = DatasetConfig::new(self.dataset.seed.unwrap_or_default());
        if let Some(f) = self.dataset.positive_fraction {
            c.positive_fraction = f;
        }
        if let Some(s) = self.dataset.split {
            c.split = SplitFractions::from(s);
        }
        if let Some(s) = self.dataset.stratified {
            c.stratified = s;
        }
        c
    }

    pub fn reference(&self, task: Task) -> Option<ReferenceMetrics> {
        let section = match task {
            Task::Identification => self.eval.identification.as_ref(),
            Task::Frame => self.eval.frame.as_ref(),
        }?;
        reference_metrics(section).ok()
    }

    pub fn census(&self) -> Option<BTreeMap<u8, u32>> {
        self.report
            .census
            .as_ref()
            .map(|c| c.iter().filter_map(|(g, n)| Some((g.parse().ok()?, *n))).collect())
    }
}

fn reported(value: &str) -> Option<ReportedValue> {
    if value.trim().ends_with('%') {
        ReportedValue::percent(value)
    } else {
        ReportedValue::fraction(value)
    }
}

fn reference_metrics(s: &ReferenceSection) -> Result<ReferenceMetrics, (&'static str, String)> {
    let one = |key: &'static str, v: &Option<String>| match v {
        None => Ok(None),
        Some(v) => reported(v)
            .map(Some)
            .ok_or_else(|| (key, format!("`{v}` is not a number or percentage"))),
    };
    Ok(ReferenceMetrics {
        sensitivity: one("sensitivity", &s.sensitivity)?,
        specificity: one("specificity", &s.specificity)?,
        precision: one("precision", &s.precision)?,
        f1: one("f1", &s.f1)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[corpus]\nmanifest = \"m.csv\"\n[dataset]\nseed = 3\n";

    #[test]
    fn parse_minimal_with_defaults() {
        let c = PipelineConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.backend.kind, BackendKind::Baseline);
        assert_eq!(c.backend.parallelism, 4);
        assert_eq!(c.backend.retry(), RetryPolicy::default());
        assert_eq!(c.dataset_config(), DatasetConfig::new(3));
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = PipelineConfig::parse("[corpus]\nmanifest = \"m.csv\"\n[dataset]\nseed = \"abc\"\n").unwrap_err();
        assert_eq!(err.key, "dataset.seed", "{err}");
        let err =
            PipelineConfig::parse("[corpus]\nmanifest = \"m.csv\"\n[dataset]\nseed = 1\n[backend]\nparalelism = 2\n")
                .unwrap_err();
        assert!(err.key.starts_with("backend"), "{err}");
        assert!(err.message.contains("paralelism"), "{err}");
    }

    #[test]
    fn validation_reports_key_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("m.csv"), "").unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "[corpus]\nmanifest = \"m.csv\"\n[dataset]\n[output]\ndir = \"out\"\n",
        )
        .unwrap();
        assert_eq!(
            PipelineConfig::load(&path, &Overrides::default()).unwrap_err().key,
            "dataset.seed"
        );

        let with_seed = Overrides {
            seed: Some(9),
            ..Default::default()
        };
        let c = PipelineConfig::load(&path, &with_seed).unwrap();
        assert_eq!(c.seed(), 9);
        assert_eq!(c.out_dir(), dir.path().join("out"));

        std::fs::write(&path, "[corpus]\nmanifest = \"gone.csv\"\n[dataset]\nseed = 1\n").unwrap();
        assert_eq!(
            PipelineConfig::load(&path, &Overrides::default()).unwrap_err().key,
            "corpus.manifest"
        );

        std::fs::write(
            &path,
            "[corpus]\nmanifest = \"m.csv\"\n[dataset]\nseed = 1\nsplit = [0.5, 0.5, 0.5]\n[output]\ndir = \"o\"\n",
        )
        .unwrap();
        assert_eq!(
            PipelineConfig::load(&path, &Overrides::default()).unwrap_err().key,
            "dataset"
        );

        std::fs::write(
            &path,
            "[corpus]\nmanifest = \"m.csv\"\n[dataset]\nseed = 1\n[backend]\nkind = \"remote\"\n[output]\ndir = \"o\"\n",
        )
        .unwrap();
        assert_eq!(
            PipelineConfig::load(&path, &Overrides::default()).unwrap_err().key,
            "backend.endpoint"
        );
    }

    #[test]
    fn reference_values_parse_both_styles() {
        let src = format!("{MINIMAL}[eval.identification]\nsensitivity = \"84.31%\"\nf1 = \".73\"\n");
        let c = PipelineConfig::parse(&src).unwrap();
        let r = c.reference(Task::Identification).unwrap();
        assert!((r.sensitivity.unwrap().value - 0.8431).abs() < 1e-12);
        assert!((r.f1.unwrap().value - 0.73).abs() < 1e-12);
        assert!(c.reference(Task::Frame).is_none());
    }
}
