//! Dataset loading, synthetic fixtures and stratified k-shot sampling.
//!
//! On disk a dataset is a directory with `schema.json` plus up to three JSONL
//! split files (`train.jsonl`, `val.jsonl`, `test.jsonl`), one record per line:
//!
//! ```json
//! {"id": "s1", "tokens": ["Steve", "became"], "entities": [{"type": "person", "start": 0, "end": 1}], "relations": []}
//! ```
//!
//! Relation `head`/`tail` index into the record's `entities`; `end` is exclusive.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    canonical_type, validate_sample, EntityMention, IESample, ModelError, RelationTriple, Schema,
    SchemaViolation, TaskKind, TokenSpan,
};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const SCHEMA_FILE: &str = "schema.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line_no}: malformed record: {reason}")]
    MalformedRecord { line_no: usize, reason: String },
    #[error("sample {sample_id} violates the schema: {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    SchemaViolation {
        sample_id: String,
        violations: Vec<SchemaViolation>,
    },
    #[error("duplicate sample id {id:?} in split {split}")]
    DuplicateId { split: String, id: String },
    #[error("invalid schema: {0}")]
    Schema(#[from] ModelError),
    #[error("schema file {path}: {reason}")]
    BadSchemaFile { path: PathBuf, reason: String },
    #[error("no split files found in {0}")]
    NoSplits(PathBuf),
    #[error("sample {sample_id}: relation argument {text:?} is not among the sample's entities")]
    DanglingRelationArgument { sample_id: String, text: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct EntityRecord {
    #[serde(rename = "type")]
    etype: String,
    start: usize,
    end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RelationRecord {
    #[serde(rename = "type")]
    rtype: String,
    head: usize,
    tail: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    tokens: Vec<String>,
    entities: Vec<EntityRecord>,
    relations: Vec<RelationRecord>,
}

/// Parses one JSONL record. `line_no` is 1-based and only used for error reporting.
pub fn decode_sample(line: &str, line_no: usize) -> Result<IESample, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedRecord { line_no, reason };
    let rec: SampleRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    if rec.tokens.iter().any(|t| t.is_empty() || t.contains(char::is_whitespace)) {
        return Err(malformed("tokens must be non-empty and contain no whitespace".into()));
    }
    let mut entities = Vec::with_capacity(rec.entities.len());
    for (i, e) in rec.entities.iter().enumerate() {
        if e.end <= e.start || e.end > rec.tokens.len() {
            return Err(malformed(format!(
                "entity {i} has range [{},{}) outside {} tokens",
                e.start,
                e.end,
                rec.tokens.len()
            )));
        }
        entities.push(EntityMention::gold(
            rec.tokens[e.start..e.end].join(" "),
            e.etype.clone(),
            TokenSpan::new(e.start, e.end),
        ));
    }
    let mut relations = Vec::with_capacity(rec.relations.len());
    for (i, r) in rec.relations.iter().enumerate() {
        let (Some(head), Some(tail)) = (entities.get(r.head), entities.get(r.tail)) else {
            return Err(malformed(format!(
                "relation {i} references entity {} / {} of {}",
                r.head,
                r.tail,
                entities.len()
            )));
        };
        relations.push(RelationTriple::new(r.rtype.clone(), head.clone(), tail.clone()));
    }
    Ok(IESample::from_tokens(rec.id, rec.tokens, entities, relations))
}

/// Serialises a sample as one JSONL record (no trailing newline).
pub fn encode_sample(sample: &IESample) -> Result<String, CorpusError> {
    let mut entities: Vec<EntityRecord> = Vec::new();
    let mut index_of = |m: &EntityMention| -> Result<usize, CorpusError> {
        let offset = m.offset.ok_or_else(|| CorpusError::DanglingRelationArgument {
            sample_id: sample.id.clone(),
            text: m.text.clone(),
        })?;
        let rec = EntityRecord {
            etype: m.etype.clone(),
            start: offset.start,
            end: offset.end,
        };
        Ok(match entities.iter().position(|e| *e == rec) {
            Some(i) => i,
            None => {
                entities.push(rec);
                entities.len() - 1
            }
        })
    };
    for e in &sample.entities {
        index_of(e)?;
    }
    let n_declared = sample.entities.len();
    let mut relations = Vec::with_capacity(sample.relations.len());
    for r in &sample.relations {
        let head = index_of(&r.head)?;
        let tail = index_of(&r.tail)?;
        relations.push(RelationRecord {
            rtype: r.rel_type.clone(),
            head,
            tail,
        });
    }
    if entities.len() > n_declared {
        let missing = &entities[n_declared];
        return Err(CorpusError::DanglingRelationArgument {
            sample_id: sample.id.clone(),
            text: sample.tokens[missing.start..missing.end].join(" "),
        });
    }
    let rec = SampleRecord {
        id: sample.id.clone(),
        tokens: sample.tokens.clone(),
        entities,
        relations,
    };
    Ok(serde_json::to_string(&rec).expect("sample records always serialise"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub splits: BTreeMap<String, Vec<IESample>>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[IESample]> {
        self.splits.get(name).map(Vec::as_slice)
    }

    /// Checks that every sample validates and ids are unique per split.
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (split, samples) in &self.splits {
            let mut seen = HashSet::new();
            for s in samples {
                if !seen.insert(s.id.as_str()) {
                    return Err(CorpusError::DuplicateId {
                        split: split.clone(),
                        id: s.id.clone(),
                    });
                }
                let violations = validate_sample(s, &self.schema);
                if !violations.is_empty() {
                    return Err(CorpusError::SchemaViolation {
                        sample_id: s.id.clone(),
                        violations,
                    });
                }
            }
        }
        Ok(())
    }

    /// Writes `schema.json` and one JSONL file per split into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let schema_path = dir.join(SCHEMA_FILE);
        let schema_json = serde_json::to_string_pretty(&self.schema).expect("schema serialises");
        fs::write(&schema_path, schema_json + "\n").map_err(io_err(&schema_path))?;
        for (split, samples) in &self.splits {
            let path = dir.join(format!("{split}.jsonl"));
            let mut f = fs::File::create(&path).map_err(io_err(&path))?;
            for s in samples {
                writeln!(f, "{}", encode_sample(s)?).map_err(io_err(&path))?;
            }
        }
        Ok(())
    }
}

pub fn load_schema(path: &Path) -> Result<Schema, CorpusError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&raw).map_err(|e| CorpusError::BadSchemaFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads one JSONL split file and validates every record against `schema`.
pub fn load_split(path: &Path, schema: &Schema) -> Result<Vec<IESample>, CorpusError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = decode_sample(&line, i + 1)?;
        let violations = validate_sample(&sample, schema);
        if !violations.is_empty() {
            return Err(CorpusError::SchemaViolation {
                sample_id: sample.id,
                violations,
            });
        }
        out.push(sample);
    }
    Ok(out)
}

/// Loads every split file present in `dir` under the given schema.
pub fn load_dataset(dir: &Path, schema: &Schema) -> Result<Dataset, CorpusError> {
    let mut splits = BTreeMap::new();
    for name in SPLITS {
        let path = dir.join(format!("{name}.jsonl"));
        if path.is_file() {
            splits.insert(name.to_string(), load_split(&path, schema)?);
        }
    }
    if splits.is_empty() {
        return Err(CorpusError::NoSplits(dir.to_path_buf()));
    }
    let ds = Dataset {
        schema: schema.clone(),
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

/// Loads a dataset directory using its own `schema.json`.
pub fn open_dataset(dir: &Path) -> Result<Dataset, CorpusError> {
    let schema = load_schema(&dir.join(SCHEMA_FILE))?;
    load_dataset(dir, &schema)
}

const FILLER: &[&str] = &[
    "the", "a", "report", "said", "on", "during", "meeting", "with", "new", "plan", "after",
    "talks", "in", "visited", "announced", "near", "yesterday", "and", "for", "officials",
    "market", "deal", "by", "at", "from", "over", "week", "early", "statement", "group",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "su", "tor", "vel", "an", "dri", "bo", "ne", "qua", "zel", "fi",
    "mar", "os", "pel", "ti", "gru", "ha", "ix", "jon", "ul", "wen",
];

fn name_token(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    let mut s: String = (0..n)
        .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
        .collect();
    s[..1].make_ascii_uppercase();
    s
}

fn fresh_name(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> Vec<String> {
    let len = rng.random_range(1..=2);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let t = name_token(rng);
        if used.insert(t.clone()) {
            out.push(t);
        }
    }
    out
}

fn filler(rng: &mut ChaCha8Rng, tokens: &mut Vec<String>, min: usize) {
    for _ in 0..rng.random_range(min..=3) {
        tokens.push(FILLER[rng.random_range(0..FILLER.len())].to_string());
    }
}

fn fixture_sample(schema: &Schema, id: String, force_empty: bool, rng: &mut ChaCha8Rng) -> IESample {
    let (n_entities, n_relations) = match (schema.task(), force_empty) {
        (TaskKind::Ner, true) => (0, 0),
        (TaskKind::Ner, false) => (rng.random_range(0..=3), 0),
        (TaskKind::Re, true) => (rng.random_range(0..=1), 0),
        (TaskKind::Re, false) => {
            let r = rng.random_range(0..=2);
            let e = if r == 0 { rng.random_range(0..=3) } else { rng.random_range(2..=3) };
            (e, r)
        }
    };

    // Name tokens are unique within a sentence so every span occurs exactly once.
    let mut used = HashSet::new();
    let mut tokens = Vec::new();
    let mut entities = Vec::with_capacity(n_entities);
    filler(rng, &mut tokens, 0);
    for _ in 0..n_entities {
        let name = fresh_name(rng, &mut used);
        let start = tokens.len();
        tokens.extend(name.iter().cloned());
        let etype = &schema.entity_types()[rng.random_range(0..schema.entity_types().len())];
        entities.push(EntityMention::gold(
            name.join(" "),
            etype.clone(),
            TokenSpan::new(start, tokens.len()),
        ));
        filler(rng, &mut tokens, 1);
    }
    tokens.push(".".to_string());

    let mut relations: Vec<RelationTriple> = Vec::with_capacity(n_relations);
    while relations.len() < n_relations {
        let h = rng.random_range(0..entities.len());
        let mut t = rng.random_range(0..entities.len() - 1);
        if t >= h {
            t += 1;
        }
        let rel = &schema.relation_types()[rng.random_range(0..schema.relation_types().len())];
        let triple = RelationTriple::new(rel.clone(), entities[h].clone(), entities[t].clone());
        if !relations.contains(&triple) {
            relations.push(triple);
        }
    }
    IESample::from_tokens(id, tokens, entities, relations)
}

/// Deterministic synthetic dataset with `n` samples in each of the train, val and
/// test splits. Every tenth sample of a split (starting with the first) has an
/// empty target, so each split holds at least `ceil(n / 10)` empty-target samples.
/// No two samples in the dataset share a sentence, so no two prompts coincide.
pub fn generate_fixture(schema: &Schema, n: usize, seed: u64) -> Dataset {
    let mut splits = BTreeMap::new();
    let mut seen = HashSet::new();
    for (split_idx, split) in SPLITS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((split_idx as u64 + 1) << 56));
        let samples = (0..n)
            .map(|i| {
                let id = format!("{split}-{i:05}");
                let mut s = fixture_sample(schema, id.clone(), i % 10 == 0, &mut rng);
                for _ in 0..100 {
                    if !seen.contains(&s.text) {
                        break;
                    }
                    s = fixture_sample(schema, id.clone(), i % 10 == 0, &mut rng);
                }
                // Short filler-only sentences can run out; lengthen before the final period.
                while seen.contains(&s.text) {
                    let at = s.tokens.len() - 1;
                    s.tokens.insert(at, FILLER[rng.random_range(0..FILLER.len())].to_string());
                    s.text = s.tokens.join(" ");
                }
                seen.insert(s.text.clone());
                s
            })
            .collect();
        splits.insert(split.to_string(), samples);
    }
    Dataset {
        schema: schema.clone(),
        splits,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSpec {
    pub k: usize,
    #[serde(default = "default_true")]
    pub include_empty_class: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl ShotSpec {
    pub fn new(k: usize, include_empty_class: bool, seed: u64) -> Self {
        assert!(k >= 1, "k must be at least 1");
        ShotSpec {
            k,
            include_empty_class,
            seed,
        }
    }
}

/// Label used for the extra empty-target class in shortfall reports.
pub const EMPTY_CLASS: &str = "<empty>";

/// A class that could not contribute `k` samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsufficientClassSamples {
    pub class: String,
    pub available: usize,
    pub wanted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShotSelection {
    pub samples: Vec<IESample>,
    pub shortfalls: Vec<InsufficientClassSamples>,
}

/// Draws a stratified k-shot demonstration set.
///
/// Classes are filled rarest first. A candidate is only taken if none of the
/// classes it carries has already reached `k`, so no class is ever represented
/// by more than `k` selected samples and no sample is chosen twice.
pub fn sample_k_shot(train: &[IESample], schema: &Schema, spec: ShotSpec) -> ShotSelection {
    let task = schema.task();
    let k = spec.k;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let classes: Vec<String> = schema.target_classes().iter().map(|c| canonical_type(c)).collect();
    let sample_classes: Vec<Vec<String>> = train.iter().map(|s| s.target_classes(task)).collect();
    let mut candidates: HashMap<&str, Vec<usize>> = classes.iter().map(|c| (c.as_str(), Vec::new())).collect();
    for (i, cs) in sample_classes.iter().enumerate() {
        for c in cs {
            if let Some(v) = candidates.get_mut(c.as_str()) {
                v.push(i);
            }
        }
    }

    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by_key(|&i| (candidates[classes[i].as_str()].len(), i));

    let mut count: HashMap<&str, usize> = HashMap::new();
    let mut chosen: Vec<usize> = Vec::new();
    let mut taken = vec![false; train.len()];
    let mut shortfalls = Vec::new();

    for ci in order {
        let class = classes[ci].as_str();
        let mut pool = candidates[class].clone();
        pool.shuffle(&mut rng);
        for idx in pool {
            if count.get(class).copied().unwrap_or(0) >= k {
                break;
            }
            if taken[idx] {
                continue;
            }
            let saturated = sample_classes[idx]
                .iter()
                .any(|c| count.get(c.as_str()).copied().unwrap_or(0) >= k);
            if saturated {
                continue;
            }
            taken[idx] = true;
            chosen.push(idx);
            for c in &sample_classes[idx] {
                if let Some(key) = classes.iter().find(|x| *x == c) {
                    *count.entry(key.as_str()).or_insert(0) += 1;
                }
            }
        }
        let got = count.get(class).copied().unwrap_or(0);
        if got < k {
            log::warn!("class {class:?}: only {got} of {k} samples available");
            shortfalls.push(InsufficientClassSamples {
                class: class.to_string(),
                available: got,
                wanted: k,
            });
        }
    }

    if spec.include_empty_class {
        let mut pool: Vec<usize> = (0..train.len())
            .filter(|&i| train[i].is_empty_target(task))
            .collect();
        pool.shuffle(&mut rng);
        let picked: Vec<usize> = pool.into_iter().take(k).collect();
        if picked.len() < k {
            log::warn!("empty class: only {} of {k} samples available", picked.len());
            shortfalls.push(InsufficientClassSamples {
                class: EMPTY_CLASS.to_string(),
                available: picked.len(),
                wanted: k,
            });
        }
        chosen.extend(picked);
    }

    chosen.shuffle(&mut rng);
    ShotSelection {
        samples: chosen.into_iter().map(|i| train[i].clone()).collect(),
        shortfalls,
    }
}
