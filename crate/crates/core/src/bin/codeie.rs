use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use codeie_core::backend::Perturbation;
use codeie_core::corpus::{generate_fixture, open_dataset, sample_k_shot, ShotSpec};
use codeie_core::eval::{aggregate_seeds, format_table, score_split};
use codeie_core::orchestrator::{compare_designs, render_for, BackendSpec, RunError, RunManifest};
use codeie_core::parse::{parse_completion, ParseOutcome};
use codeie_core::{PromptDesign, Schema, TaskKind, HARNESS_VERSION};

#[derive(Parser)]
#[command(name = "codeie", version = HARNESS_VERSION, about = "Few-shot NER/RE with code-style prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Oracle,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (schema.json plus train/val/test JSONL).
    Fixture {
        #[arg(long, env = "CODEIE_TASK", default_value = "ner")]
        task: TaskKind,
        /// Comma-separated entity types.
        #[arg(long, env = "CODEIE_ENTITY_TYPES", value_delimiter = ',', required = true)]
        entity_types: Vec<String>,
        /// Comma-separated relation types (RE only).
        #[arg(long, env = "CODEIE_RELATION_TYPES", value_delimiter = ',')]
        relation_types: Vec<String>,
        /// Samples per split.
        #[arg(long, env = "CODEIE_N", default_value_t = 100)]
        n: usize,
        #[arg(long, env = "CODEIE_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "CODEIE_OUT")]
        out: PathBuf,
    },
    /// Print the ids of a k-shot demonstration draw.
    Sample {
        #[arg(long, env = "CODEIE_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "CODEIE_K")]
        k: usize,
        #[arg(long, env = "CODEIE_SEED", default_value_t = 1)]
        seed: u64,
        /// Do not add k empty-target samples.
        #[arg(long, env = "CODEIE_NO_EMPTY")]
        no_empty: bool,
    },
    /// Print the full context a run would send for one test sample.
    Render {
        #[arg(long, env = "CODEIE_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "CODEIE_DESIGN")]
        design: PromptDesign,
        #[arg(long, env = "CODEIE_K")]
        k: usize,
        #[arg(long, env = "CODEIE_SEED", default_value_t = 1)]
        seed: u64,
        #[arg(long, env = "CODEIE_BUDGET")]
        budget: Option<usize>,
        /// Test sample id; defaults to the first test sample.
        #[arg(long, env = "CODEIE_SAMPLE_ID")]
        sample_id: Option<String>,
    },
    /// Run an experiment from a manifest or from flags.
    Run {
        #[arg(long, env = "CODEIE_MANIFEST")]
        manifest: Option<PathBuf>,
        #[arg(long, env = "CODEIE_DATASET", required_unless_present = "manifest")]
        dataset: Option<PathBuf>,
        #[arg(long, env = "CODEIE_DESIGN", required_unless_present = "manifest")]
        design: Option<PromptDesign>,
        #[arg(long, env = "CODEIE_K", required_unless_present = "manifest")]
        k: Option<usize>,
        #[arg(long, env = "CODEIE_SEEDS", value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, env = "CODEIE_OUT", required_unless_present = "manifest")]
        out: Option<PathBuf>,
        #[arg(long, env = "CODEIE_BACKEND")]
        backend: Option<BackendArg>,
        /// Model id for the HTTP backend.
        #[arg(long, env = "CODEIE_MODEL")]
        model: Option<String>,
        #[arg(long, env = "CODEIE_BUDGET")]
        budget: Option<usize>,
        #[arg(long, env = "CODEIE_PPL_NORMALIZER")]
        ppl_normalizer: Option<codeie_core::eval::PplNormalizer>,
    },
    /// Parse one completion and print the outcome as JSON.
    Parse {
        #[arg(long, env = "CODEIE_DESIGN")]
        design: PromptDesign,
        #[arg(long, env = "CODEIE_TASK", default_value = "ner")]
        task: TaskKind,
        /// File holding the completion; stdin when absent.
        input: Option<PathBuf>,
    },
    /// Score outcome files (one per seed) against a dataset split.
    Eval {
        #[arg(long, env = "CODEIE_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "CODEIE_SPLIT", default_value = "test")]
        split: String,
        /// `outcomes.jsonl` files, one per seed.
        #[arg(long = "outcomes", env = "CODEIE_OUTCOMES", value_delimiter = ',', required = true)]
        outcomes: Vec<PathBuf>,
        #[arg(long, env = "CODEIE_OUT")]
        out: Option<PathBuf>,
    },
    /// Run several manifests and print one row per design.
    Compare {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
}

fn now() -> String {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_default()
}

fn stamp(mut m: RunManifest) -> RunManifest {
    m.harness_version.get_or_insert_with(|| HARNESS_VERSION.to_string());
    m.created_at = Some(now());
    m
}

fn data_err(e: impl std::fmt::Display) -> RunError {
    RunError::Config(e.to_string())
}

fn read_outcomes(path: &Path) -> Result<HashMap<String, ParseOutcome>, RunError> {
    #[derive(serde::Deserialize)]
    struct Row {
        sample_id: String,
        outcome: ParseOutcome,
    }
    let text = fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: Row = serde_json::from_str(l).map_err(|e| data_err(format!("{}:{}: {e}", path.display(), i + 1)))?;
            Ok((r.sample_id, r.outcome))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Fixture {
            task,
            entity_types,
            relation_types,
            n,
            seed,
            out,
        } => {
            let rels = if task == TaskKind::Ner { Vec::new() } else { relation_types };
            let schema = Schema::new(task, entity_types, rels).map_err(data_err)?;
            generate_fixture(&schema, n, seed).write(&out)?;
            println!("{}", out.display());
        }
        Command::Sample {
            dataset,
            k,
            seed,
            no_empty,
        } => {
            let ds = open_dataset(&dataset)?;
            let train = ds.split("train").ok_or_else(|| data_err("dataset has no train split"))?;
            if k == 0 {
                return Err(data_err("k must be at least 1"));
            }
            let sel = sample_k_shot(train, &ds.schema, ShotSpec::new(k, !no_empty, seed));
            for s in &sel.shortfalls {
                log::warn!("class {:?}: {} available, {} wanted", s.class, s.available, s.wanted);
            }
            for s in &sel.samples {
                println!("{}", s.id);
            }
        }
        Command::Render {
            dataset,
            design,
            k,
            seed,
            budget,
            sample_id,
        } => {
            let ds = open_dataset(&dataset)?;
            let mut m = RunManifest::new(&dataset, design, k, ".");
            if let Some(b) = budget {
                m.budget = b;
            }
            let test = ds.split("test").unwrap_or_default();
            let sample = match &sample_id {
                Some(id) => test.iter().find(|s| &s.id == id),
                None => test.first(),
            }
            .ok_or_else(|| data_err("no such test sample"))?;
            let prompt = render_for(&m, &ds, seed, sample)?;
            eprintln!("# {} demonstrations", prompt.demo_count);
            print!("{}", prompt.context);
        }
        Command::Run {
            manifest,
            dataset,
            design,
            k,
            seeds,
            out,
            backend,
            model,
            budget,
            ppl_normalizer,
        } => {
            let mut m = match manifest {
                Some(p) => RunManifest::load(&p)?,
                None => RunManifest::new(
                    dataset.expect("required by clap"),
                    design.expect("required by clap"),
                    k.expect("required by clap"),
                    out.clone().expect("required by clap"),
                ),
            };
            if !seeds.is_empty() {
                m.seeds = seeds;
            }
            if let Some(b) = budget {
                m.budget = b;
            }
            if let Some(p) = ppl_normalizer {
                m.ppl_normalizer = p;
            }
            if let Some(BackendArg::Http) = backend {
                m.backend = BackendSpec::Http {
                    endpoint: None,
                    model: model.ok_or_else(|| data_err("--model is required for the http backend"))?,
                    max_in_flight: 4,
                    tokens_per_minute: 0,
                    timeout_secs: 60,
                };
                m.decoding.want_logprobs = true;
            } else if let Some(BackendArg::Oracle) = backend {
                m.backend = BackendSpec::Oracle {
                    perturbation: Perturbation::None,
                };
            }
            let report = codeie_core::orchestrator::run_experiment(&stamp(m.clone()))?;
            print!("{}", format_table(&[(m.design.to_string(), &report)]));
        }
        Command::Parse { design, task, input } => {
            let text = match input {
                Some(p) => fs::read_to_string(&p).map_err(|source| RunError::Io { path: p, source })?,
                None => {
                    let mut s = String::new();
                    std::io::stdin()
                        .read_to_string(&mut s)
                        .map_err(|source| RunError::Io {
                            path: "-".into(),
                            source,
                        })?;
                    s
                }
            };
            let outcome = parse_completion(&text, design, task);
            println!("{}", serde_json::to_string_pretty(&outcome).expect("outcome serialises"));
        }
        Command::Eval {
            dataset,
            split,
            outcomes,
            out,
        } => {
            let ds = open_dataset(&dataset)?;
            let gold = ds.split(&split).ok_or_else(|| data_err(format!("no {split:?} split")))?;
            let mut reports = Vec::new();
            for (i, path) in outcomes.iter().enumerate() {
                let mut by_id = read_outcomes(path)?;
                let aligned: Vec<ParseOutcome> = gold
                    .iter()
                    .map(|s| {
                        by_id
                            .remove(&s.id)
                            .ok_or_else(|| data_err(format!("{}: no outcome for {}", path.display(), s.id)))
                    })
                    .collect::<Result<_, _>>()?;
                reports.push(score_split(i as u64 + 1, gold, &aligned, &ds.schema)?);
            }
            let report = aggregate_seeds(ds.schema.task(), None, &reports)?;
            let table = format_table(&[("eval".to_string(), &report)]);
            if let Some(dir) = out {
                fs::create_dir_all(&dir).map_err(|source| RunError::Io { path: dir.clone(), source })?;
                let json = serde_json::to_string_pretty(&report).expect("report serialises") + "\n";
                for (name, body) in [("report.json", json.as_str()), ("report.txt", table.as_str())] {
                    let p = dir.join(name);
                    fs::write(&p, body).map_err(|source| RunError::Io { path: p, source })?;
                }
            }
            print!("{table}");
        }
        Command::Compare { manifests } => {
            let ms = manifests
                .iter()
                .map(|p| RunManifest::load(p).map(stamp))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", compare_designs(&ms)?.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
