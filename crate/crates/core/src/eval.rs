//! Scoring: span grounding, Entity F1 / Relation Strict F1, semantic audit,
//! structure error rate, conditional perplexity and seed aggregation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{canonical_type, EntityMention, IESample, PromptDesign, RelationTriple, Schema, TaskKind, TokenSpan};
use crate::parse::{Extraction, ParseOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no outcomes to score")]
    EmptyInput,
    #[error("log-probability {0} is positive")]
    DomainError(f64),
    #[error("normaliser must be at least 1")]
    ZeroNormalizer,
    #[error("{outcomes} outcomes for {samples} samples")]
    Misaligned { outcomes: usize, samples: usize },
}

/// First occurrence of `span_text` (as a run of whole tokens, whitespace
/// normalised) whose range is not in `claimed`.
pub fn ground_span(span_text: &str, tokens: &[String], claimed: &HashSet<TokenSpan>) -> Option<TokenSpan> {
    let needle: Vec<&str> = span_text.split_whitespace().collect();
    if needle.is_empty() || needle.len() > tokens.len() {
        return None;
    }
    (0..=tokens.len() - needle.len())
        .map(|i| TokenSpan::new(i, i + needle.len()))
        .find(|s| {
            !claimed.contains(s) && tokens[s.start..s.end].iter().zip(&needle).all(|(t, n)| t == n)
        })
}

/// Matching counts; precision/recall/F1 derive from them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Self {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Entity F1 counts for one sentence.
///
/// Predictions are grounded left to right; a grounded prediction is a true
/// positive when an unconsumed gold mention has the same range and canonical
/// type. A range is claimed for a type once every gold mention of that type at
/// that range is consumed. A repeated prediction of one gold mention therefore
/// grounds at a later occurrence (or nowhere) and counts as a false positive,
/// while a range annotated with two types can still match one prediction per type.
pub fn entity_f1(preds: &[EntityMention], golds: &[EntityMention], tokens: &[String]) -> Counts {
    let gold_types: Vec<String> = golds.iter().map(|g| canonical_type(&g.etype)).collect();
    let mut consumed = vec![false; golds.len()];
    let mut tp = 0;
    for p in preds {
        let ptype = canonical_type(&p.etype);
        let open = |span: TokenSpan, consumed: &[bool]| {
            golds
                .iter()
                .zip(&gold_types)
                .zip(consumed)
                .position(|((g, t), &c)| !c && g.offset == Some(span) && *t == ptype)
        };
        let claimed: HashSet<TokenSpan> = golds
            .iter()
            .zip(&gold_types)
            .filter(|(_, t)| **t == ptype)
            .filter_map(|(g, _)| g.offset)
            .filter(|&span| open(span, &consumed).is_none())
            .collect();
        let Some(span) = ground_span(&p.text, tokens, &claimed) else { continue };
        if let Some(i) = open(span, &consumed) {
            consumed[i] = true;
            tp += 1;
        }
    }
    Counts {
        tp,
        fp: preds.len() - tp,
        fn_: golds.len() - tp,
    }
}

/// Relation Strict F1 counts for one sentence: relation type, both argument
/// ranges and both argument types must match an unconsumed gold triple.
/// Arguments are grounded independently to their first occurrence.
pub fn relation_strict_f1(preds: &[RelationTriple], golds: &[RelationTriple], tokens: &[String]) -> Counts {
    let none = HashSet::new();
    let mut consumed = vec![false; golds.len()];
    let mut tp = 0;
    for p in preds {
        let (Some(h), Some(t)) = (ground_span(&p.head.text, tokens, &none), ground_span(&p.tail.text, tokens, &none))
        else {
            continue;
        };
        let (rel, ht, tt) = (canonical_type(&p.rel_type), canonical_type(&p.head.etype), canonical_type(&p.tail.etype));
        let hit = golds.iter().enumerate().position(|(i, g)| {
            !consumed[i]
                && canonical_type(&g.rel_type) == rel
                && g.head.offset == Some(h)
                && g.tail.offset == Some(t)
                && canonical_type(&g.head.etype) == ht
                && canonical_type(&g.tail.etype) == tt
        });
        if let Some(i) = hit {
            consumed[i] = true;
            tp += 1;
        }
    }
    Counts {
        tp,
        fp: preds.len() - tp,
        fn_: golds.len() - tp,
    }
}

/// Predictions that repeat an earlier prediction of the same sentence verbatim
/// (after type canonicalisation).
pub fn count_duplicates(structures: &Extraction) -> usize {
    fn dupes<T, K: std::hash::Hash + Eq>(items: &[T], key: impl Fn(&T) -> K) -> usize {
        let mut seen = HashSet::new();
        items.iter().filter(|i| !seen.insert(key(i))).count()
    }
    match structures {
        Extraction::Entities(v) => dupes(v, |e| (e.text.clone(), canonical_type(&e.etype))),
        Extraction::Relations(v) => dupes(v, |r| {
            (
                canonical_type(&r.rel_type),
                r.head.text.clone(),
                canonical_type(&r.head.etype),
                r.tail.text.clone(),
                canonical_type(&r.tail.etype),
            )
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticErrorCategory {
    EntityTypeNotInSet,
    EntitySpanNotInText,
    RelationTypeNotInSet,
    Ent1TypeNotInSet,
    Ent1SpanNotInText,
}

impl SemanticErrorCategory {
    pub fn for_task(task: TaskKind) -> &'static [SemanticErrorCategory] {
        use SemanticErrorCategory::*;
        match task {
            TaskKind::Ner => &[EntityTypeNotInSet, EntitySpanNotInText],
            TaskKind::Re => &[Ent1TypeNotInSet, Ent1SpanNotInText, RelationTypeNotInSet],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SemanticErrorCategory::EntityTypeNotInSet => "ent-type",
            SemanticErrorCategory::EntitySpanNotInText => "ent-span",
            SemanticErrorCategory::RelationTypeNotInSet => "rel-type",
            SemanticErrorCategory::Ent1TypeNotInSet => "ent1-type",
            SemanticErrorCategory::Ent1SpanNotInText => "ent1-span",
        }
    }
}

/// A zeroed counter map holding every category relevant to `task`.
pub fn empty_semantic_counts(task: TaskKind) -> BTreeMap<SemanticErrorCategory, usize> {
    SemanticErrorCategory::for_task(task).iter().map(|&c| (c, 0)).collect()
}

/// Counts predictions that break the task contract: labels outside the schema
/// or spans that do not occur in their own input. One unit per offending prediction.
pub fn semantic_audit(
    outcomes: &[ParseOutcome],
    samples: &[IESample],
    schema: &Schema,
) -> Result<BTreeMap<SemanticErrorCategory, usize>, MetricError> {
    if outcomes.len() != samples.len() {
        return Err(MetricError::Misaligned {
            outcomes: outcomes.len(),
            samples: samples.len(),
        });
    }
    let mut counts = empty_semantic_counts(schema.task());
    let none = HashSet::new();
    let mut bump = |c| *counts.entry(c).or_insert(0) += 1;
    for (o, s) in outcomes.iter().zip(samples) {
        match o.structures() {
            Some(Extraction::Entities(es)) => {
                for e in es {
                    if !schema.has_entity_type(&e.etype) {
                        bump(SemanticErrorCategory::EntityTypeNotInSet);
                    }
                    if ground_span(&e.text, &s.tokens, &none).is_none() {
                        bump(SemanticErrorCategory::EntitySpanNotInText);
                    }
                }
            }
            Some(Extraction::Relations(rs)) => {
                for r in rs {
                    if !schema.has_relation_type(&r.rel_type) {
                        bump(SemanticErrorCategory::RelationTypeNotInSet);
                    }
                    if !schema.has_entity_type(&r.head.etype) {
                        bump(SemanticErrorCategory::Ent1TypeNotInSet);
                    }
                    if ground_span(&r.head.text, &s.tokens, &none).is_none() {
                        bump(SemanticErrorCategory::Ent1SpanNotInText);
                    }
                }
            }
            None => {}
        }
    }
    Ok(counts)
}

/// Fraction of outcomes that are structural errors.
pub fn structure_error_rate(outcomes: &[ParseOutcome]) -> Result<f64, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let errors = outcomes.iter().filter(|o| o.is_error()).count();
    Ok(errors as f64 / outcomes.len() as f64)
}

/// `exp(-(1/normalizer) * sum(logprobs))`.
pub fn conditional_perplexity(token_logprobs: &[f64], normalizer: usize) -> Result<f64, MetricError> {
    if normalizer == 0 {
        return Err(MetricError::ZeroNormalizer);
    }
    if let Some(&bad) = token_logprobs.iter().find(|&&lp| lp > 0.0 || lp.is_nan()) {
        return Err(MetricError::DomainError(bad));
    }
    let sum: f64 = token_logprobs.iter().sum();
    Ok((-sum / normalizer as f64).exp())
}

/// Which length divides the summed log-probability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PplNormalizer {
    /// Number of input tokens.
    Input,
    /// Number of generated tokens.
    #[default]
    Output,
}

impl std::str::FromStr for PplNormalizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "input" => Ok(PplNormalizer::Input),
            "output" => Ok(PplNormalizer::Output),
            other => Err(format!("unknown normaliser {other:?} (expected input or output)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }

    /// `82.32±0.37` style, scaled to percent.
    pub fn percent(&self) -> String {
        format!("{:.2}±{:.2}", self.mean * 100.0, self.std * 100.0)
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

/// Scores of one seed over one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub samples: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Counts,
    pub structure_error_rate: f64,
    pub trailing_garbage: usize,
    pub duplicates: usize,
    pub semantic_errors: BTreeMap<SemanticErrorCategory, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
}

/// Scores a split: `outcomes[i]` is the parse of the completion for `samples[i]`.
/// Structural errors count as empty predictions.
pub fn score_split(
    seed: u64,
    samples: &[IESample],
    outcomes: &[ParseOutcome],
    schema: &Schema,
) -> Result<SeedReport, MetricError> {
    if outcomes.len() != samples.len() {
        return Err(MetricError::Misaligned {
            outcomes: outcomes.len(),
            samples: samples.len(),
        });
    }
    let mut counts = Counts::default();
    let mut trailing = 0;
    let mut duplicates = 0;
    for (o, s) in outcomes.iter().zip(samples) {
        if let ParseOutcome::Parsed { trailing_garbage: true, .. } = o {
            trailing += 1;
        }
        if let Some(x) = o.structures() {
            duplicates += count_duplicates(x);
        }
        counts += match (schema.task(), o.structures()) {
            (TaskKind::Ner, Some(Extraction::Entities(p))) => entity_f1(p, &s.entities, &s.tokens),
            (TaskKind::Re, Some(Extraction::Relations(p))) => relation_strict_f1(p, &s.relations, &s.tokens),
            (TaskKind::Ner, _) => entity_f1(&[], &s.entities, &s.tokens),
            (TaskKind::Re, _) => relation_strict_f1(&[], &s.relations, &s.tokens),
        };
    }
    Ok(SeedReport {
        seed,
        samples: samples.len(),
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        counts,
        structure_error_rate: structure_error_rate(outcomes)?,
        trailing_garbage: trailing,
        duplicates,
        semantic_errors: semantic_audit(outcomes, samples, schema)?,
        perplexity: None,
    })
}

/// Per-seed reports with mean ± std for each metric and counters summed across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<PromptDesign>,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub structure_error_rate: MeanStd,
    #[serde(flatten)]
    pub counts: Counts,
    pub trailing_garbage: usize,
    pub duplicates: usize,
    pub semantic_errors: BTreeMap<SemanticErrorCategory, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<MeanStd>,
    pub per_seed: Vec<SeedReport>,
}

pub fn aggregate_seeds(
    task: TaskKind,
    design: Option<PromptDesign>,
    reports: &[SeedReport],
) -> Result<EvalReport, MetricError> {
    let stat = |f: fn(&SeedReport) -> f64| {
        MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>()).ok_or(MetricError::EmptyInput)
    };
    let mut semantic = empty_semantic_counts(task);
    for r in reports {
        for (k, v) in &r.semantic_errors {
            *semantic.entry(*k).or_insert(0) += v;
        }
    }
    let ppl: Vec<f64> = reports.iter().filter_map(|r| r.perplexity).collect();
    Ok(EvalReport {
        task,
        design,
        precision: stat(|r| r.precision)?,
        recall: stat(|r| r.recall)?,
        f1: stat(|r| r.f1)?,
        structure_error_rate: stat(|r| r.structure_error_rate)?,
        counts: reports.iter().map(|r| r.counts).sum(),
        trailing_garbage: reports.iter().map(|r| r.trailing_garbage).sum(),
        duplicates: reports.iter().map(|r| r.duplicates).sum(),
        semantic_errors: semantic,
        perplexity: MeanStd::of(&ppl),
        per_seed: reports.to_vec(),
    })
}

/// Fixed-width table, one row per report, metrics as percent mean±std.
pub fn format_table(rows: &[(String, &EvalReport)]) -> String {
    let mut cats: Vec<SemanticErrorCategory> = rows
        .iter()
        .flat_map(|(_, r)| r.semantic_errors.keys().copied())
        .collect();
    cats.sort();
    cats.dedup();
    let name_w = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<name_w$}  {:>13}  {:>13}  {:>13}  {:>13}",
        "design", "precision", "recall", "f1", "struct-err"
    );
    for c in &cats {
        out.push_str(&format!("  {:>9}", c.label()));
    }
    out.push('\n');
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<name_w$}  {:>13}  {:>13}  {:>13}  {:>13}",
            name,
            r.precision.percent(),
            r.recall.percent(),
            r.f1.percent(),
            r.structure_error_rate.percent()
        ));
        for c in &cats {
            out.push_str(&format!("  {:>9}", r.semantic_errors.get(c).copied().unwrap_or(0)));
        }
        out.push('\n');
    }
    out
}
