//! Run manifests and experiment execution: sample, render, complete, parse, score.
//!
//! A run writes, under its output directory:
//!
//! ```text
//! manifest.json
//! report.json          aggregated EvalReport (no timestamps, byte-stable)
//! report.txt           the same as a fixed-width table
//! cache/completions.jsonl
//! seed-<n>/demos.jsonl, contexts.jsonl, completions.jsonl, outcomes.jsonl, report.json
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendHandle, Completion, CompletionBackend, CompletionCache, DecodingConfig, OracleBackend, Perturbation, RetryPolicy};
use crate::corpus::{load_dataset, load_schema, open_dataset, sample_k_shot, CorpusError, Dataset, ShotSpec};
use crate::eval::{aggregate_seeds, conditional_perplexity, format_table, score_split, EvalReport, MetricError, PplNormalizer};
use crate::model::{IESample, PromptDesign};
use crate::parse::{parse_completion_for_schema, ParseOutcome};
use crate::prompt::{assemble_context, render_pair, CounterKind, RenderError, RenderedPair, RenderedPrompt, DEFAULT_BUDGET};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest: {0}")]
    Config(String),
    #[error("manifests cannot be compared: {0}")]
    MismatchedManifests(String),
}

impl RunError {
    /// Process exit code: 3 for backend failures, 2 for everything data-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Backend(_) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Echo the gold completion of each test sample, optionally degraded.
    Oracle {
        #[serde(default)]
        perturbation: Perturbation,
    },
    /// OpenAI-style completions endpoint; the key comes from `CODEIE_API_KEY`.
    Http {
        /// Falls back to `CODEIE_ENDPOINT` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
        model: String,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default)]
        tokens_per_minute: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    60
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Oracle {
            perturbation: Perturbation::None,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

fn default_eval_split() -> String {
    "test".into()
}

fn default_true() -> bool {
    true
}

fn default_workers() -> usize {
    4
}

/// Everything needed to reproduce a run, given the completion cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Directory holding `train.jsonl`, `val.jsonl`, `test.jsonl`.
    pub dataset: PathBuf,
    /// Schema file; defaults to `schema.json` inside the dataset directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    pub design: PromptDesign,
    pub k: usize,
    #[serde(default = "default_true")]
    pub include_empty_class: bool,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default)]
    pub decoding: DecodingConfig,
    /// Model context window; the generation budget is reserved out of it.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub counter: CounterKind,
    #[serde(default)]
    pub ppl_normalizer: PplNormalizer,
    #[serde(default = "default_eval_split")]
    pub eval_split: String,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Size of the worker pool feeding the backend within one seed.
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// `git describe` of the harness that produced the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harness_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
}

impl RunManifest {
    pub fn new(dataset: impl Into<PathBuf>, design: PromptDesign, k: usize, output_dir: impl Into<PathBuf>) -> Self {
        RunManifest {
            dataset: dataset.into(),
            schema: None,
            design,
            k,
            include_empty_class: true,
            seeds: default_seeds(),
            backend: BackendSpec::default(),
            decoding: DecodingConfig::default(),
            budget: DEFAULT_BUDGET,
            counter: CounterKind::default(),
            ppl_normalizer: PplNormalizer::default(),
            eval_split: default_eval_split(),
            retry: RetryPolicy::default(),
            workers: default_workers(),
            output_dir: output_dir.into(),
            cache_dir: None,
            harness_version: None,
            created_at: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache"))
            .join("completions.jsonl")
    }

    pub fn load_dataset(&self) -> Result<Dataset, RunError> {
        let ds = match &self.schema {
            Some(p) => load_dataset(&self.dataset, &load_schema(p)?)?,
            None => open_dataset(&self.dataset)?,
        };
        Ok(ds)
    }

    fn prompt_budget(&self) -> usize {
        self.budget.saturating_sub(self.decoding.max_new_tokens)
    }
}

/// A manifest bound to its dataset and backend, ready to run.
pub struct Experiment {
    manifest: RunManifest,
    dataset: Dataset,
    backend: BackendHandle,
}

impl Experiment {
    /// Loads the dataset and builds the backend named by the manifest.
    pub fn prepare(manifest: RunManifest) -> Result<Self, RunError> {
        let dataset = manifest.load_dataset()?;
        let backend: Arc<dyn CompletionBackend> = match &manifest.backend {
            BackendSpec::Oracle { perturbation } => {
                Arc::new(OracleBackend::new(&dataset, manifest.design, *perturbation))
            }
            BackendSpec::Http { .. } => http_backend(&manifest.backend)?,
        };
        Self::with_backend(manifest, dataset, backend)
    }

    /// Uses `backend` instead of the one the manifest names.
    pub fn with_backend(
        manifest: RunManifest,
        dataset: Dataset,
        backend: Arc<dyn CompletionBackend>,
    ) -> Result<Self, RunError> {
        if manifest.seeds.is_empty() {
            return Err(RunError::Config("no seeds".into()));
        }
        if manifest.k == 0 {
            return Err(RunError::Config("k must be at least 1".into()));
        }
        for split in ["train", manifest.eval_split.as_str()] {
            if dataset.split(split).is_none() {
                return Err(RunError::Config(format!("dataset has no {split:?} split")));
            }
        }
        let cache = Arc::new(CompletionCache::open(&manifest.cache_path())?);
        let backend = BackendHandle::new(backend)
            .with_cache(cache)
            .with_retry(manifest.retry);
        Ok(Experiment {
            manifest,
            dataset,
            backend,
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn backend(&self) -> &BackendHandle {
        &self.backend
    }

    /// Runs every seed and writes artifacts and the aggregated report.
    pub fn run(&self) -> Result<EvalReport, RunError> {
        let m = &self.manifest;
        let out = &m.output_dir;
        fs::create_dir_all(out).map_err(io_err(out))?;
        write_file(&out.join("manifest.json"), &m.to_json())?;

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(m.workers.max(1))
            .build()
            .map_err(|e| RunError::Config(e.to_string()))?;
        let mut seed_reports = Vec::with_capacity(m.seeds.len());
        for &seed in &m.seeds {
            log::info!("{}: seed {seed}", m.design);
            seed_reports.push(pool.install(|| self.run_seed(seed))?);
        }
        let report = aggregate_seeds(self.dataset.schema.task(), Some(m.design), &seed_reports)?;
        write_file(&out.join("report.json"), &to_pretty(&report))?;
        write_file(
            &out.join("report.txt"),
            &format_table(&[(m.design.to_string(), &report)]),
        )?;
        Ok(report)
    }

    fn run_seed(&self, seed: u64) -> Result<crate::eval::SeedReport, RunError> {
        let m = &self.manifest;
        let schema = &self.dataset.schema;
        let task = schema.task();
        let train = self.dataset.split("train").unwrap_or_default();
        let test = self.dataset.split(&m.eval_split).unwrap_or_default();

        let selection = sample_k_shot(train, schema, ShotSpec::new(m.k, m.include_empty_class, seed));
        for s in &selection.shortfalls {
            log::warn!(
                "seed {seed}: class {:?} has {} training samples, wanted {}",
                s.class,
                s.available,
                s.wanted
            );
        }
        let demos: Vec<RenderedPair> = selection
            .samples
            .iter()
            .map(|s| render_pair(s, m.design, task))
            .collect::<Result<_, _>>()?;

        let counter = m.counter.counter();
        let results: Vec<(RenderedPrompt, Completion)> = test
            .par_iter()
            .map(|s| {
                let pair = render_pair(s, m.design, task)?;
                let prompt = assemble_context(&demos, &pair, m.prompt_budget(), counter)?;
                let completion = self.backend.complete(&prompt, &m.decoding)?;
                Ok((prompt, completion))
            })
            .collect::<Result<_, RunError>>()?;

        let outcomes: Vec<ParseOutcome> = results
            .iter()
            .map(|(_, c)| parse_completion_for_schema(&c.text, m.design, schema))
            .collect();
        let mut report = score_split(seed, test, &outcomes, schema)?;
        report.perplexity = self.mean_perplexity(&results)?;

        let dir = m.output_dir.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_jsonl(&dir.join("demos.jsonl"), selection.samples.iter().map(|s| serde_json::json!({"id": s.id})))?;
        write_jsonl(&dir.join("contexts.jsonl"), results.iter().map(|(p, _)| p))?;
        write_jsonl(
            &dir.join("completions.jsonl"),
            test.iter()
                .zip(&results)
                .map(|(s, (_, c))| serde_json::json!({"sample_id": s.id, "completion": c})),
        )?;
        write_jsonl(
            &dir.join("outcomes.jsonl"),
            test.iter()
                .zip(&outcomes)
                .map(|(s, o)| serde_json::json!({"sample_id": s.id, "outcome": o})),
        )?;
        write_file(&dir.join("report.json"), &to_pretty(&report))?;
        Ok(report)
    }

    /// Mean per-sample perplexity over completions that carry log-probabilities.
    fn mean_perplexity(&self, results: &[(RenderedPrompt, Completion)]) -> Result<Option<f64>, RunError> {
        let mut ppls = Vec::new();
        for (prompt, c) in results {
            let Some(lps) = c.token_logprobs.as_ref().filter(|l| !l.is_empty()) else {
                continue;
            };
            let values: Vec<f64> = lps.iter().map(|t| t.logprob).collect();
            let norm = match self.manifest.ppl_normalizer {
                PplNormalizer::Output => values.len(),
                PplNormalizer::Input => self.manifest.counter.counter().count(&prompt.context).max(1),
            };
            ppls.push(conditional_perplexity(&values, norm)?);
        }
        Ok((!ppls.is_empty()).then(|| ppls.iter().sum::<f64>() / ppls.len() as f64))
    }
}

#[cfg(feature = "http")]
fn http_backend(spec: &BackendSpec) -> Result<Arc<dyn CompletionBackend>, RunError> {
    use crate::backend::{HttpBackend, HttpConfig, ENDPOINT_ENV};
    let BackendSpec::Http {
        endpoint,
        model,
        max_in_flight,
        tokens_per_minute,
        timeout_secs,
    } = spec
    else {
        unreachable!("called with a non-http spec")
    };
    let endpoint = match endpoint {
        Some(e) => e.clone(),
        None => std::env::var(ENDPOINT_ENV)
            .map_err(|_| RunError::Config(format!("no endpoint given and {ENDPOINT_ENV} is not set")))?,
    };
    let config = HttpConfig {
        endpoint,
        model: model.clone(),
        max_in_flight: *max_in_flight,
        tokens_per_minute: *tokens_per_minute,
        timeout_secs: *timeout_secs,
    };
    Ok(Arc::new(HttpBackend::from_env(config)?))
}

#[cfg(not(feature = "http"))]
fn http_backend(_: &BackendSpec) -> Result<Arc<dyn CompletionBackend>, RunError> {
    Err(RunError::Config("built without HTTP backend support".into()))
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serialises") + "\n"
}

fn write_file(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), RunError> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, &r).expect("row serialises");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

/// Runs one manifest end to end.
pub fn run_experiment(manifest: &RunManifest) -> Result<EvalReport, RunError> {
    Experiment::prepare(manifest.clone())?.run()
}

/// One row per manifest, ordered by design name.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<(String, EvalReport)>,
}

impl Comparison {
    pub fn table(&self) -> String {
        let rows: Vec<(String, &EvalReport)> = self.rows.iter().map(|(n, r)| (n.clone(), r)).collect();
        format_table(&rows)
    }
}

/// Runs each manifest and tabulates the results. All manifests must share
/// the dataset, eval split and seeds.
pub fn compare_designs(manifests: &[RunManifest]) -> Result<Comparison, RunError> {
    let first = manifests
        .first()
        .ok_or_else(|| RunError::MismatchedManifests("no manifests given".into()))?;
    for m in &manifests[1..] {
        if m.dataset != first.dataset || m.schema != first.schema || m.eval_split != first.eval_split {
            return Err(RunError::MismatchedManifests(format!(
                "{} and {} use different data",
                first.dataset.display(),
                m.dataset.display()
            )));
        }
        if m.seeds != first.seeds {
            return Err(RunError::MismatchedManifests(format!(
                "seeds {:?} and {:?} differ",
                first.seeds, m.seeds
            )));
        }
    }
    let mut order: Vec<&RunManifest> = manifests.iter().collect();
    order.sort_by(|a, b| a.design.name().cmp(b.design.name()).then(a.output_dir.cmp(&b.output_dir)));
    let mut rows = Vec::with_capacity(order.len());
    for m in order {
        let report = run_experiment(m)?;
        let clashes = manifests.iter().filter(|o| o.design == m.design).count() > 1;
        let label = if clashes {
            format!("{} ({})", m.design, m.output_dir.file_name().unwrap_or_default().to_string_lossy())
        } else {
            m.design.to_string()
        };
        rows.push((label, report));
    }
    Ok(Comparison { rows })
}

/// Renders the context for one test sample exactly as a run would.
pub fn render_for(
    manifest: &RunManifest,
    dataset: &Dataset,
    seed: u64,
    sample: &IESample,
) -> Result<RenderedPrompt, RunError> {
    if manifest.k == 0 {
        return Err(RunError::Config("k must be at least 1".into()));
    }
    let task = dataset.schema.task();
    let train = dataset.split("train").unwrap_or_default();
    let selection = sample_k_shot(train, &dataset.schema, ShotSpec::new(manifest.k, manifest.include_empty_class, seed));
    let demos: Vec<RenderedPair> = selection
        .samples
        .iter()
        .map(|s| render_pair(s, manifest.design, task))
        .collect::<Result<_, _>>()?;
    let pair = render_pair(sample, manifest.design, task)?;
    Ok(assemble_context(&demos, &pair, manifest.prompt_budget(), manifest.counter.counter())?)
}
