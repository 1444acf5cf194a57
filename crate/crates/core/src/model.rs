//! Domain types shared by every stage of the pipeline.
//!
//! Everything here is a plain value type with no I/O. Type strings (entity and
//! relation labels) are compared through [`canonical_type`] everywhere in the
//! harness, so `"Person "` and `"person"` name the same class.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Case-folds and trims a type label.
pub fn canonical_type(label: &str) -> String {
    label.trim().to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Ner,
    Re,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Ner => "ner",
            TaskKind::Re => "re",
        })
    }
}

impl FromStr for TaskKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ner" => Ok(TaskKind::Ner),
            "re" => Ok(TaskKind::Re),
            other => Err(ModelError::UnknownTask(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("schema has no entity types")]
    NoEntityTypes,
    #[error("relation extraction schema has no relation types")]
    NoRelationTypes,
    #[error("duplicate type label {0:?}")]
    DuplicateType(String),
    #[error("unknown task {0:?} (expected \"ner\" or \"re\")")]
    UnknownTask(String),
    #[error("unknown prompt design {0:?}")]
    UnknownDesign(String),
}

/// The label universe of a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct Schema {
    task: TaskKind,
    entity_types: Vec<String>,
    relation_types: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    task: TaskKind,
    entity_types: Vec<String>,
    #[serde(default)]
    relation_types: Vec<String>,
}

impl TryFrom<SchemaRepr> for Schema {
    type Error = ModelError;

    fn try_from(r: SchemaRepr) -> Result<Self, Self::Error> {
        Schema::new(r.task, r.entity_types, r.relation_types)
    }
}

impl From<Schema> for SchemaRepr {
    fn from(s: Schema) -> Self {
        SchemaRepr {
            task: s.task,
            entity_types: s.entity_types,
            relation_types: s.relation_types,
        }
    }
}

fn check_unique(labels: &[String]) -> Result<(), ModelError> {
    let mut seen = std::collections::HashSet::new();
    for l in labels {
        if !seen.insert(canonical_type(l)) {
            return Err(ModelError::DuplicateType(l.clone()));
        }
    }
    Ok(())
}

impl Schema {
    pub fn new<E, R>(task: TaskKind, entity_types: E, relation_types: R) -> Result<Self, ModelError>
    where
        E: IntoIterator,
        E::Item: Into<String>,
        R: IntoIterator,
        R::Item: Into<String>,
    {
        let entity_types: Vec<String> = entity_types.into_iter().map(Into::into).collect();
        let relation_types: Vec<String> = relation_types.into_iter().map(Into::into).collect();
        if entity_types.is_empty() {
            return Err(ModelError::NoEntityTypes);
        }
        check_unique(&entity_types)?;
        if task == TaskKind::Re && relation_types.is_empty() {
            return Err(ModelError::NoRelationTypes);
        }
        check_unique(&relation_types)?;
        Ok(Schema {
            task,
            entity_types,
            relation_types,
        })
    }

    pub fn ner<E>(entity_types: E) -> Result<Self, ModelError>
    where
        E: IntoIterator,
        E::Item: Into<String>,
    {
        Schema::new(TaskKind::Ner, entity_types, Vec::<String>::new())
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn relation_types(&self) -> &[String] {
        &self.relation_types
    }

    /// The classes few-shot sampling stratifies over: entity types for NER,
    /// relation types for RE.
    pub fn target_classes(&self) -> &[String] {
        match self.task {
            TaskKind::Ner => &self.entity_types,
            TaskKind::Re => &self.relation_types,
        }
    }

    pub fn has_entity_type(&self, label: &str) -> bool {
        let c = canonical_type(label);
        self.entity_types.iter().any(|t| canonical_type(t) == c)
    }

    pub fn has_relation_type(&self, label: &str) -> bool {
        let c = canonical_type(label);
        self.relation_types.iter().any(|t| canonical_type(t) == c)
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(end > start, "empty token span");
        TokenSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl fmt::Display for TokenSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionSource {
    Gold,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityMention {
    pub text: String,
    #[serde(rename = "type")]
    pub etype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<TokenSpan>,
    pub source: MentionSource,
}

impl EntityMention {
    pub fn gold(text: impl Into<String>, etype: impl Into<String>, offset: TokenSpan) -> Self {
        EntityMention {
            text: text.into(),
            etype: etype.into(),
            offset: Some(offset),
            source: MentionSource::Gold,
        }
    }

    pub fn predicted(text: impl Into<String>, etype: impl Into<String>) -> Self {
        EntityMention {
            text: text.into(),
            etype: etype.into(),
            offset: None,
            source: MentionSource::Predicted,
        }
    }

    /// Same surface text and canonical type, ignoring offsets and provenance.
    pub fn same_content(&self, other: &EntityMention) -> bool {
        self.text == other.text && canonical_type(&self.etype) == canonical_type(&other.etype)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationTriple {
    pub rel_type: String,
    pub head: EntityMention,
    pub tail: EntityMention,
}

impl RelationTriple {
    pub fn new(rel_type: impl Into<String>, head: EntityMention, tail: EntityMention) -> Self {
        RelationTriple {
            rel_type: rel_type.into(),
            head,
            tail,
        }
    }

    pub fn same_content(&self, other: &RelationTriple) -> bool {
        canonical_type(&self.rel_type) == canonical_type(&other.rel_type)
            && self.head.same_content(&other.head)
            && self.tail.same_content(&other.tail)
    }
}

/// One annotated sentence. `text` is always the single-space join of `tokens`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IESample {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub entities: Vec<EntityMention>,
    pub relations: Vec<RelationTriple>,
}

impl IESample {
    pub fn from_tokens(
        id: impl Into<String>,
        tokens: Vec<String>,
        entities: Vec<EntityMention>,
        relations: Vec<RelationTriple>,
    ) -> Self {
        IESample {
            id: id.into(),
            text: tokens.join(" "),
            tokens,
            entities,
            relations,
        }
    }

    /// Surface text of a token range, or `None` when out of bounds.
    pub fn span_text(&self, span: TokenSpan) -> Option<String> {
        if span.is_empty() || span.end > self.tokens.len() {
            return None;
        }
        Some(self.tokens[span.start..span.end].join(" "))
    }

    /// Whether the sample has no target structures for `task`.
    pub fn is_empty_target(&self, task: TaskKind) -> bool {
        match task {
            TaskKind::Ner => self.entities.is_empty(),
            TaskKind::Re => self.relations.is_empty(),
        }
    }

    /// Canonical class labels this sample carries for `task`, deduplicated.
    pub fn target_classes(&self, task: TaskKind) -> Vec<String> {
        let mut out: Vec<String> = match task {
            TaskKind::Ner => self.entities.iter().map(|e| canonical_type(&e.etype)).collect(),
            TaskKind::Re => self.relations.iter().map(|r| canonical_type(&r.rel_type)).collect(),
        };
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptStyle {
    Code,
    Text,
}

/// The six prompt formats the harness can render and parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptDesign {
    FuncDef,
    ClassInit,
    FuncExec,
    FuncInitPerturbed,
    StructLang,
    NaturalLang,
}

impl PromptDesign {
    pub const ALL: [PromptDesign; 6] = [
        PromptDesign::FuncDef,
        PromptDesign::ClassInit,
        PromptDesign::FuncExec,
        PromptDesign::FuncInitPerturbed,
        PromptDesign::StructLang,
        PromptDesign::NaturalLang,
    ];

    pub fn style(self) -> PromptStyle {
        match self {
            PromptDesign::FuncDef
            | PromptDesign::ClassInit
            | PromptDesign::FuncExec
            | PromptDesign::FuncInitPerturbed => PromptStyle::Code,
            PromptDesign::StructLang | PromptDesign::NaturalLang => PromptStyle::Text,
        }
    }

    /// Command-line name.
    pub fn name(self) -> &'static str {
        match self {
            PromptDesign::FuncDef => "func-def",
            PromptDesign::ClassInit => "class-init",
            PromptDesign::FuncExec => "func-exec",
            PromptDesign::FuncInitPerturbed => "func-init-perturbed",
            PromptDesign::StructLang => "struct-lang",
            PromptDesign::NaturalLang => "natural-lang",
        }
    }
}

impl fmt::Display for PromptDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptDesign {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        PromptDesign::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| ModelError::UnknownDesign(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemaViolation {
    TypeNotInSchema { etype: String },
    RelationTypeNotInSchema { rel_type: String },
    SpanNotInText { text: String },
    OffsetOutOfRange { text: String, offset: TokenSpan },
    OffsetTextMismatch { text: String, offset: TokenSpan },
    TextTokenMismatch,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaViolation::TypeNotInSchema { etype } => {
                write!(f, "entity type {etype:?} not in schema")
            }
            SchemaViolation::RelationTypeNotInSchema { rel_type } => {
                write!(f, "relation type {rel_type:?} not in schema")
            }
            SchemaViolation::SpanNotInText { text } => write!(f, "span {text:?} not in text"),
            SchemaViolation::OffsetOutOfRange { text, offset } => {
                write!(f, "offset {offset} of {text:?} out of range")
            }
            SchemaViolation::OffsetTextMismatch { text, offset } => {
                write!(f, "tokens at {offset} do not spell {text:?}")
            }
            SchemaViolation::TextTokenMismatch => f.write_str("text is not the space-join of tokens"),
        }
    }
}

fn check_mention(
    m: &EntityMention,
    sample: &IESample,
    schema: &Schema,
    out: &mut Vec<SchemaViolation>,
) {
    if !schema.has_entity_type(&m.etype) {
        out.push(SchemaViolation::TypeNotInSchema {
            etype: m.etype.clone(),
        });
    }
    if m.text.is_empty() || !sample.text.contains(m.text.as_str()) {
        out.push(SchemaViolation::SpanNotInText {
            text: m.text.clone(),
        });
    }
    if let Some(offset) = m.offset {
        match sample.span_text(offset) {
            None => out.push(SchemaViolation::OffsetOutOfRange {
                text: m.text.clone(),
                offset,
            }),
            Some(t) if t != m.text => out.push(SchemaViolation::OffsetTextMismatch {
                text: m.text.clone(),
                offset,
            }),
            Some(_) => {}
        }
    }
}

/// Lists every way `sample` breaks `schema`. An empty list means the sample is usable as gold data.
pub fn validate_sample(sample: &IESample, schema: &Schema) -> Vec<SchemaViolation> {
    let mut out = Vec::new();
    if sample.tokens.join(" ") != sample.text {
        out.push(SchemaViolation::TextTokenMismatch);
    }
    for e in &sample.entities {
        check_mention(e, sample, schema, &mut out);
    }
    for r in &sample.relations {
        if !schema.has_relation_type(&r.rel_type) {
            out.push(SchemaViolation::RelationTypeNotInSchema {
                rel_type: r.rel_type.clone(),
            });
        }
        check_mention(&r.head, sample, schema, &mut out);
        check_mention(&r.tail, sample, schema, &mut out);
    }
    out
}
