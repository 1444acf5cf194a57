//! Renders samples into (prompt, completion) pairs for each prompt design and
//! assembles in-context demonstrations under a token budget.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EntityMention, IESample, PromptDesign, PromptStyle, RelationTriple, TaskKind};

/// Default generation budget per completion.
pub const DEFAULT_MAX_NEW_TOKENS: usize = 280;
/// Default context budget, in counted tokens.
pub const DEFAULT_BUDGET: usize = 4097;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("sample {id}: {reason}")]
    UnrenderableSample { id: String, reason: String },
    #[error("demonstrations mix designs ({expected} vs {found})")]
    MixedDesigns {
        expected: PromptDesign,
        found: PromptDesign,
    },
    #[error("test prompt alone needs {needed} tokens, budget is {budget}")]
    BudgetExhausted { needed: usize, budget: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    /// Backslash-escape string-literal delimiters inside rendered literals.
    pub escape_literals: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            escape_literals: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPair {
    pub sample_id: String,
    pub design: PromptDesign,
    pub task: TaskKind,
    pub prompt_part: String,
    pub completion_part: String,
}

impl RenderedPair {
    /// Text appended after the completion to separate demonstrations by one blank line.
    pub fn terminator(&self) -> &'static str {
        match self.design.style() {
            PromptStyle::Code => "\n",
            PromptStyle::Text => "\n\n",
        }
    }

    /// Full demonstration text: prompt, completion and terminator.
    pub fn demonstration(&self) -> String {
        let mut s = String::with_capacity(
            self.prompt_part.len() + self.completion_part.len() + 2,
        );
        s.push_str(&self.prompt_part);
        s.push_str(&self.completion_part);
        s.push_str(self.terminator());
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub context: String,
    pub stop_sequences: Vec<String>,
    pub max_new_tokens: usize,
    pub demo_count: usize,
    pub design: PromptDesign,
    pub task: TaskKind,
    /// Id of the sample whose prompt closes the context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_id: Option<String>,
}

/// Stop sequences for a design: code prompts stop at a blank line followed by
/// the next definition, text prompts at the end of the line.
pub fn stop_sequences(design: PromptDesign) -> Vec<String> {
    let keyword = match design {
        PromptDesign::FuncDef | PromptDesign::FuncInitPerturbed => "def ",
        PromptDesign::ClassInit => "class ",
        PromptDesign::FuncExec => "# extract",
        PromptDesign::StructLang | PromptDesign::NaturalLang => return vec!["\n".to_string()],
    };
    vec![format!("\n\n{keyword}")]
}

pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

impl<F> TokenCounter for F
where
    F: Fn(&str) -> usize + Send + Sync,
{
    fn count(&self, text: &str) -> usize {
        self(text)
    }
}

/// Counts whitespace-separated words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Counts runs of word characters plus every punctuation character on its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctCounter;

impl TokenCounter for WordPunctCounter {
    fn count(&self, text: &str) -> usize {
        let mut n = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_alphanumeric() || c == '_' {
                if !in_word {
                    n += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Serializable choice of counter, used by run manifests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CounterKind {
    Whitespace,
    #[default]
    WordPunct,
}

impl CounterKind {
    pub fn counter(self) -> &'static dyn TokenCounter {
        match self {
            CounterKind::Whitespace => &WhitespaceCounter,
            CounterKind::WordPunct => &WordPunctCounter,
        }
    }
}

/// Token count under the default word-plus-punctuation counter.
pub fn count_tokens(text: &str) -> usize {
    WordPunctCounter.count(text)
}

/// Python-style double-quoted literal.
pub(crate) fn quote_literal(s: &str, escape: bool) -> Option<String> {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' | '\\' | '\n' | '\r' | '\t' if !escape => return None,
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    Some(out)
}

/// SEL atoms are written bare unless they contain structure characters.
fn sel_atom(s: &str, escape: bool) -> Option<String> {
    let needs_quotes = s.is_empty()
        || s.trim() != s
        || s.contains(['(', ')', ':', '"', '\\', '\n', '\r', '\t', '“', '”']);
    if needs_quotes {
        quote_literal(s, escape)
    } else {
        Some(s.to_string())
    }
}

struct CodeFrame {
    header: &'static [&'static str],
    literal_prefix: &'static str,
    trailer: &'static [&'static str],
    body_indent: &'static str,
    /// `Some(list)` for `list.append(...)` statements, `None` for `# {...}` comments.
    list_name: Option<&'static str>,
}

fn code_frame(design: PromptDesign, task: TaskKind) -> CodeFrame {
    use PromptDesign::*;
    use TaskKind::*;
    const NER_FN: &[&str] = &[
        "def named_entity_recognition(input_text):",
        "    \"\"\" extract named entities from the input_text . \"\"\"",
    ];
    const RE_FN: &[&str] = &[
        "def relation_extraction(input_text):",
        "    \"\"\" extract the relations of named entities from the input_text . \"\"\"",
    ];
    match (design, task) {
        (FuncDef, Ner) => CodeFrame {
            header: NER_FN,
            literal_prefix: "    input_text = ",
            trailer: &["    entity_list = []", "    # extracted named entities"],
            body_indent: "    ",
            list_name: Some("entity_list"),
        },
        (FuncDef, Re) => CodeFrame {
            header: RE_FN,
            literal_prefix: "    input_text = ",
            trailer: &["    entity_relation_list = []", "    # extacted relations"],
            body_indent: "    ",
            list_name: Some("entity_relation_list"),
        },
        (ClassInit, Ner) => CodeFrame {
            header: &[
                "class NamedEntityRecognition:",
                "    \"\"\" extract named entities from the input_text . \"\"\"",
                "    def __init__(self, input_text):",
            ],
            literal_prefix: "        self.input_text = ",
            trailer: &["        entity_list = []", "        # extracted named entities"],
            body_indent: "        ",
            list_name: Some("entity_list"),
        },
        (ClassInit, Re) => CodeFrame {
            header: &[
                "class RelationExtraction:",
                "    \"\"\" extract the relations of named entities from the input_text . \"\"\"",
                "    def __init__(self, input_text):",
            ],
            literal_prefix: "        self.input_text = ",
            trailer: &["        entity_relation_list = []", "        # extacted relations"],
            body_indent: "        ",
            list_name: Some("entity_relation_list"),
        },
        (FuncExec, Ner) => CodeFrame {
            header: &["# extract named entities from a sentence ."],
            literal_prefix: "input_text = ",
            trailer: &["output = named_entity_recognition(input_text)", "# the output is"],
            body_indent: "",
            list_name: None,
        },
        (FuncExec, Re) => CodeFrame {
            header: &["# extract the relations of named entities from from a sentence ."],
            literal_prefix: "input_text = ",
            trailer: &["output = relation_extraction(input_text)", "# the output is"],
            body_indent: "",
            list_name: None,
        },
        // Perturbed: each task wears the other task's function frame.
        (FuncInitPerturbed, Ner) => CodeFrame {
            header: RE_FN,
            literal_prefix: "    input_text = ",
            trailer: &["    entity_relation_list = []", "    # extracted relations"],
            body_indent: "    ",
            list_name: Some("entity_relation_list"),
        },
        (FuncInitPerturbed, Re) => CodeFrame {
            header: NER_FN,
            literal_prefix: "    input_text = ",
            trailer: &["    entity_list = []", "    # extacted named entities"],
            body_indent: "    ",
            list_name: Some("entity_list"),
        },
        (StructLang | NaturalLang, _) => unreachable!("text designs have no code frame"),
    }
}

fn unrenderable(sample: &IESample, what: &str) -> RenderError {
    RenderError::UnrenderableSample {
        id: sample.id.clone(),
        reason: format!("{what} contains a string delimiter and escaping is disabled"),
    }
}

fn entity_dict(e: &EntityMention, escape: bool) -> Option<String> {
    Some(format!(
        "{{\"text\": {}, \"type\": {}}}",
        quote_literal(&e.text, escape)?,
        quote_literal(&e.etype, escape)?
    ))
}

fn relation_dict(r: &RelationTriple, escape: bool) -> Option<String> {
    Some(format!(
        "{{\"rel_type\": {}, \"ent1_type\": {}, \"ent1_text\": {}, \"ent2_type\": {}, \"ent2_text\": {}}}",
        quote_literal(&r.rel_type, escape)?,
        quote_literal(&r.head.etype, escape)?,
        quote_literal(&r.head.text, escape)?,
        quote_literal(&r.tail.etype, escape)?,
        quote_literal(&r.tail.text, escape)?
    ))
}

fn render_code(
    sample: &IESample,
    design: PromptDesign,
    task: TaskKind,
    opts: RenderOptions,
) -> Result<(String, String), RenderError> {
    let frame = code_frame(design, task);
    let literal =
        quote_literal(&sample.text, opts.escape_literals).ok_or_else(|| unrenderable(sample, "input text"))?;
    let mut prompt = String::new();
    for line in frame.header {
        prompt.push_str(line);
        prompt.push('\n');
    }
    prompt.push_str(frame.literal_prefix);
    prompt.push_str(&literal);
    prompt.push('\n');
    for line in frame.trailer {
        prompt.push_str(line);
        prompt.push('\n');
    }

    let dicts: Vec<String> = match task {
        TaskKind::Ner => sample
            .entities
            .iter()
            .map(|e| entity_dict(e, opts.escape_literals))
            .collect::<Option<_>>(),
        TaskKind::Re => sample
            .relations
            .iter()
            .map(|r| relation_dict(r, opts.escape_literals))
            .collect::<Option<_>>(),
    }
    .ok_or_else(|| unrenderable(sample, "a target string"))?;

    let mut completion = String::new();
    for d in dicts {
        completion.push_str(frame.body_indent);
        match frame.list_name {
            Some(list) => {
                let _ = writeln!(completion, "{list}.append({d})");
            }
            None => {
                let _ = writeln!(completion, "# {d}");
            }
        }
    }
    Ok((prompt, completion))
}

fn text_prompt(sample: &IESample, task: TaskKind) -> String {
    match task {
        TaskKind::Ner => format!("The text is \"{}\". The named entities in the text: ", sample.text),
        TaskKind::Re => format!(
            "The text is \"{}\". The relations of named entities in the text: ",
            sample.text
        ),
    }
}

/// Builds the structured-extraction-language target.
pub fn render_sel(sample: &IESample, task: TaskKind, escape: bool) -> Option<String> {
    let mut out = String::from("(");
    match task {
        TaskKind::Ner => {
            for e in &sample.entities {
                let _ = write!(out, "({}: {})", sel_atom(&e.etype, escape)?, sel_atom(&e.text, escape)?);
            }
        }
        TaskKind::Re => {
            // Consecutive triples sharing a head share one record; every tail that
            // never heads a record gets a bare declaration at the end.
            let mut records: Vec<(&EntityMention, Vec<&RelationTriple>)> = Vec::new();
            for r in &sample.relations {
                match records.last_mut() {
                    Some((head, rels)) if head.same_content(&r.head) => rels.push(r),
                    _ => records.push((&r.head, vec![r])),
                }
            }
            let mut tails: Vec<&EntityMention> = Vec::new();
            for r in &sample.relations {
                let declared = records.iter().any(|(h, _)| h.same_content(&r.tail))
                    || tails.iter().any(|t| t.same_content(&r.tail));
                if !declared {
                    tails.push(&r.tail);
                }
            }
            let mut parts = Vec::with_capacity(records.len() + tails.len());
            for (head, rels) in &records {
                let mut rec = format!("({}: {}", sel_atom(&head.etype, escape)?, sel_atom(&head.text, escape)?);
                for r in rels {
                    let _ = write!(rec, " ({}: {})", sel_atom(&r.rel_type, escape)?, sel_atom(&r.tail.text, escape)?);
                }
                rec.push(')');
                parts.push(rec);
            }
            for t in tails {
                parts.push(format!("({}: {})", sel_atom(&t.etype, escape)?, sel_atom(&t.text, escape)?));
            }
            out.push_str(&parts.join(" "));
        }
    }
    out.push(')');
    Some(out)
}

fn bare_label(s: &str) -> Option<&str> {
    let ok = !s.trim().is_empty() && s.trim() == s && !s.contains(['"', '“', '”', '.', '\n']);
    ok.then_some(s)
}

/// Builds the natural-language target.
pub fn render_natural(sample: &IESample, task: TaskKind, escape: bool) -> Option<String> {
    let sentences: Vec<String> = match task {
        TaskKind::Ner => sample
            .entities
            .iter()
            .map(|e| {
                Some(format!(
                    "{} is {}.",
                    quote_literal(&e.text, escape)?,
                    quote_literal(&e.etype, escape)?
                ))
            })
            .collect::<Option<_>>()?,
        TaskKind::Re => sample
            .relations
            .iter()
            .map(|r| {
                Some(format!(
                    "{} {} {} {} {}.",
                    bare_label(&r.head.etype)?,
                    quote_literal(&r.head.text, escape)?,
                    bare_label(&r.rel_type)?,
                    bare_label(&r.tail.etype)?,
                    quote_literal(&r.tail.text, escape)?
                ))
            })
            .collect::<Option<_>>()?,
    };
    Some(sentences.join(" "))
}

/// Renders `sample` as a prompt/completion pair with default options.
pub fn render_pair(sample: &IESample, design: PromptDesign, task: TaskKind) -> Result<RenderedPair, RenderError> {
    render_pair_with(sample, design, task, RenderOptions::default())
}

pub fn render_pair_with(
    sample: &IESample,
    design: PromptDesign,
    task: TaskKind,
    opts: RenderOptions,
) -> Result<RenderedPair, RenderError> {
    let (prompt_part, completion_part) = match design {
        PromptDesign::StructLang => (
            text_prompt(sample, task),
            render_sel(sample, task, opts.escape_literals)
                .ok_or_else(|| unrenderable(sample, "a target string"))?,
        ),
        PromptDesign::NaturalLang => (
            text_prompt(sample, task),
            render_natural(sample, task, opts.escape_literals).ok_or_else(|| {
                RenderError::UnrenderableSample {
                    id: sample.id.clone(),
                    reason: "a label cannot be written as a bare natural-language word run".into(),
                }
            })?,
        ),
        _ => render_code(sample, design, task, opts)?,
    };
    Ok(RenderedPair {
        sample_id: sample.id.clone(),
        design,
        task,
        prompt_part,
        completion_part,
    })
}

/// Concatenates demonstrations and the test prompt, dropping the oldest
/// demonstrations until the counted length fits `budget`.
pub fn assemble_context(
    demos: &[RenderedPair],
    test: &RenderedPair,
    budget: usize,
    counter: &dyn TokenCounter,
) -> Result<RenderedPrompt, RenderError> {
    if let Some(d) = demos.iter().find(|d| d.design != test.design) {
        return Err(RenderError::MixedDesigns {
            expected: test.design,
            found: d.design,
        });
    }
    let rendered: Vec<String> = demos.iter().map(RenderedPair::demonstration).collect();
    for first in 0..=rendered.len() {
        let mut context: String = rendered[first..].concat();
        context.push_str(&test.prompt_part);
        if counter.count(&context) <= budget {
            return Ok(RenderedPrompt {
                context,
                stop_sequences: stop_sequences(test.design),
                max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
                demo_count: rendered.len() - first,
                design: test.design,
                task: test.task,
                test_id: Some(test.sample_id.clone()),
            });
        }
    }
    Err(RenderError::BudgetExhausted {
        needed: counter.count(&test.prompt_part),
        budget,
    })
}
