//! Turns raw completions back into entity/relation structures.
//!
//! Parsing is total: every input yields a [`ParseOutcome`], either the parsed
//! structures or a [`StructuralError`] tagged with one [`ErrorClass`]. Only syntax
//! and key sets are checked here; whether types belong to the schema and spans
//! occur in the input is audited by [`crate::eval::semantic_audit`].
//!
//! A completion whose first statement parses but which continues with text that
//! does not is `Parsed` with `trailing_garbage = true`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{canonical_type, EntityMention, PromptDesign, RelationTriple, Schema, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    UnbalancedBrackets,
    BadKeySet,
    NonStringValue,
    MalformedStatement,
    UnterminatedLiteral,
    EmptyOutputMalformed,
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorClass::UnbalancedBrackets => "unbalanced brackets",
            ErrorClass::BadKeySet => "bad key set",
            ErrorClass::NonStringValue => "non-string value",
            ErrorClass::MalformedStatement => "malformed statement",
            ErrorClass::UnterminatedLiteral => "unterminated literal",
            ErrorClass::EmptyOutputMalformed => "empty output",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralError {
    pub class: ErrorClass,
    /// Byte offset into the completion.
    pub position: usize,
    pub message: String,
}

impl fmt::Display for StructuralError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at byte {}: {}", self.class, self.position, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    Entities(Vec<EntityMention>),
    Relations(Vec<RelationTriple>),
}

impl Extraction {
    pub fn empty(task: TaskKind) -> Self {
        match task {
            TaskKind::Ner => Extraction::Entities(Vec::new()),
            TaskKind::Re => Extraction::Relations(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Extraction::Entities(v) => v.len(),
            Extraction::Relations(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ParseOutcome {
    Parsed {
        structures: Extraction,
        trailing_garbage: bool,
    },
    StructuralError(StructuralError),
}

impl ParseOutcome {
    pub fn is_error(&self) -> bool {
        matches!(self, ParseOutcome::StructuralError(_))
    }

    pub fn structures(&self) -> Option<&Extraction> {
        match self {
            ParseOutcome::Parsed { structures, .. } => Some(structures),
            ParseOutcome::StructuralError(_) => None,
        }
    }

    pub fn error(&self) -> Option<&StructuralError> {
        match self {
            ParseOutcome::StructuralError(e) => Some(e),
            ParseOutcome::Parsed { .. } => None,
        }
    }

    fn error_at(class: ErrorClass, position: usize, message: impl Into<String>) -> Self {
        ParseOutcome::StructuralError(StructuralError {
            class,
            position,
            message: message.into(),
        })
    }
}

/// Parses a completion for `design`/`task`. Natural-language relation outputs
/// split the relation label from the tail type at the last word.
pub fn parse_completion(text: &str, design: PromptDesign, task: TaskKind) -> ParseOutcome {
    parse_with_types(text, design, task, &[])
}

/// Like [`parse_completion`], but uses the schema's entity types to split
/// natural-language relation statements whose tail type spans several words.
pub fn parse_completion_for_schema(text: &str, design: PromptDesign, schema: &Schema) -> ParseOutcome {
    parse_with_types(text, design, schema.task(), schema.entity_types())
}

fn parse_with_types(text: &str, design: PromptDesign, task: TaskKind, entity_types: &[String]) -> ParseOutcome {
    let body = truncate_at_stop(text, design);
    match design {
        PromptDesign::FuncDef | PromptDesign::ClassInit | PromptDesign::FuncInitPerturbed => {
            parse_code(body, task, StatementForm::Append)
        }
        PromptDesign::FuncExec => parse_code(body, task, StatementForm::Comment),
        PromptDesign::StructLang => parse_sel(body, task),
        PromptDesign::NaturalLang => parse_natural(body, task, entity_types),
    }
}

/// Cuts a completion at the first stop boundary: a blank line followed by a
/// definition keyword for code designs, the end of the first line for text designs.
pub fn truncate_at_stop(text: &str, design: PromptDesign) -> &str {
    match design {
        PromptDesign::StructLang | PromptDesign::NaturalLang => {
            let start = text.len() - text.trim_start().len();
            match text[start..].find('\n') {
                Some(i) => &text[..start + i],
                None => text,
            }
        }
        _ => {
            let mut from = 0;
            while let Some(i) = text[from..].find("\n\n") {
                let at = from + i;
                let rest = text[at..].trim_start();
                if ["def ", "class ", "# extract"].iter().any(|k| rest.starts_with(k)) {
                    return &text[..at];
                }
                from = at + 1;
            }
            text
        }
    }
}

/// Parses `IDENT(.IDENT)*.append({...})` statements for NER.
pub fn parse_code_ner(text: &str) -> ParseOutcome {
    parse_code(text, TaskKind::Ner, StatementForm::Append)
}

/// Parses `IDENT(.IDENT)*.append({...})` statements for RE.
pub fn parse_code_re(text: &str) -> ParseOutcome {
    parse_code(text, TaskKind::Re, StatementForm::Append)
}

pub fn parse_sel(text: &str, task: TaskKind) -> ParseOutcome {
    SelParser::parse(text, task)
}

pub fn parse_natural_lang(text: &str, task: TaskKind) -> ParseOutcome {
    parse_natural(text, task, &[])
}

#[derive(Debug)]
struct Fail {
    class: ErrorClass,
    pos: usize,
    msg: String,
}

fn fail<T>(class: ErrorClass, pos: usize, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail {
        class,
        pos,
        msg: msg.into(),
    })
}

fn is_open_quote(c: char) -> bool {
    matches!(c, '"' | '“' | '”')
}

fn closes(open: char, c: char) -> bool {
    match open {
        '"' => c == '"',
        _ => matches!(c, '”' | '“'),
    }
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Cursor { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        let r = self.rest();
        self.pos += r.len() - r.trim_start().len();
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    /// Reads a quoted literal starting at the current (quote) character.
    fn string(&mut self) -> Result<String, Fail> {
        let start = self.pos;
        let open = self.bump().expect("caller checked for a quote");
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return fail(ErrorClass::UnterminatedLiteral, start, "string literal never closes"),
                Some(c) if closes(open, c) => return Ok(out),
                Some('\\') => match self.bump() {
                    None => return fail(ErrorClass::UnterminatedLiteral, start, "string literal never closes"),
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some(c @ ('"' | '\\' | '\'' | '“' | '”')) => out.push(c),
                    Some(c) => {
                        out.push('\\');
                        out.push(c);
                    }
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn ident(&mut self) -> Option<&'a str> {
        let r = self.rest();
        let mut chars = r.char_indices();
        match chars.next() {
            Some((_, c)) if c.is_alphabetic() || c == '_' => {}
            _ => return None,
        }
        let end = chars
            .find(|&(_, c)| !(c.is_alphanumeric() || c == '_'))
            .map_or(r.len(), |(i, _)| i);
        self.pos += end;
        Some(&r[..end])
    }
}

/// Bracket balance over `()[]{}` outside string literals. `Err` for an
/// unterminated literal, `Ok(false)` when unbalanced.
fn brackets_balanced(text: &str) -> Result<bool, Fail> {
    let mut stack = Vec::new();
    let mut cur = Cursor::new(text);
    while let Some(c) = cur.peek() {
        if is_open_quote(c) {
            cur.string()?;
            continue;
        }
        cur.bump();
        match c {
            '(' | '[' | '{' => stack.push(c),
            ')' | ']' | '}' => {
                let want = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                if stack.pop() != Some(want) {
                    return Ok(false);
                }
            }
            _ => {}
        }
    }
    Ok(stack.is_empty())
}

/// Reclassifies a first-statement failure: literal errors win, then bracket
/// imbalance anywhere in the completion, then the parser's own diagnosis.
fn classify(text: &str, f: Fail) -> ParseOutcome {
    if f.class == ErrorClass::UnterminatedLiteral {
        return ParseOutcome::error_at(f.class, f.pos, f.msg);
    }
    match brackets_balanced(text) {
        Err(lit) => ParseOutcome::error_at(lit.class, lit.pos, lit.msg),
        Ok(false) => ParseOutcome::error_at(ErrorClass::UnbalancedBrackets, f.pos, f.msg),
        Ok(true) => ParseOutcome::error_at(f.class, f.pos, f.msg),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum StatementForm {
    /// `entity_list.append({...})`
    Append,
    /// `# {...}`
    Comment,
}

const NER_KEYS: [&str; 2] = ["text", "type"];
const RE_KEYS: [&str; 5] = ["rel_type", "ent1_type", "ent1_text", "ent2_type", "ent2_text"];

fn expect(cur: &mut Cursor, c: char, what: &str) -> Result<(), Fail> {
    cur.skip_ws();
    if cur.eat(c) {
        Ok(())
    } else {
        let class = match c {
            ')' | '}' | '(' | '{' => ErrorClass::UnbalancedBrackets,
            _ => ErrorClass::MalformedStatement,
        };
        let found = cur.peek().map_or("end of input".to_string(), |c| format!("{c:?}"));
        fail(class, cur.pos, format!("expected {what}, found {found}"))
    }
}

fn dict(cur: &mut Cursor, keys: &[&str]) -> Result<Vec<String>, Fail> {
    let open = cur.pos;
    expect(cur, '{', "'{'")?;
    let mut entries: Vec<(String, String)> = Vec::new();
    loop {
        cur.skip_ws();
        if cur.eat('}') {
            break;
        }
        match cur.peek() {
            Some(c) if is_open_quote(c) => {}
            None => return fail(ErrorClass::UnbalancedBrackets, cur.pos, "dictionary never closes"),
            Some(c) => return fail(ErrorClass::MalformedStatement, cur.pos, format!("expected a string key, found {c:?}")),
        }
        let key = cur.string()?;
        expect(cur, ':', "':' after key")?;
        cur.skip_ws();
        let value_pos = cur.pos;
        match cur.peek() {
            Some(c) if is_open_quote(c) => {
                let v = cur.string()?;
                entries.push((key, v));
            }
            None => return fail(ErrorClass::UnbalancedBrackets, cur.pos, "dictionary never closes"),
            Some(_) => {
                return fail(
                    ErrorClass::NonStringValue,
                    value_pos,
                    format!("value of {key:?} is not a string literal"),
                )
            }
        }
        cur.skip_ws();
        if cur.eat(',') {
            continue;
        }
        if cur.eat('}') {
            break;
        }
        let found = cur.peek().map_or("end of input".to_string(), |c| format!("{c:?}"));
        let class = if cur.at_end() { ErrorClass::UnbalancedBrackets } else { ErrorClass::MalformedStatement };
        return fail(class, cur.pos, format!("expected ',' or '}}', found {found}"));
    }
    let mut values = Vec::with_capacity(keys.len());
    for k in keys {
        match entries.iter().find(|(key, _)| key == k) {
            Some((_, v)) => values.push(v.clone()),
            None => return fail(ErrorClass::BadKeySet, open, format!("missing key {k:?}")),
        }
    }
    if entries.len() != keys.len() {
        let extra: Vec<&str> = entries
            .iter()
            .map(|(k, _)| k.as_str())
            .filter(|k| !keys.contains(k))
            .collect();
        let msg = if extra.is_empty() {
            "duplicate key".to_string()
        } else {
            format!("unexpected keys {extra:?}")
        };
        return fail(ErrorClass::BadKeySet, open, msg);
    }
    Ok(values)
}

enum Item {
    Entity(EntityMention),
    Relation(RelationTriple),
}

fn code_statement(cur: &mut Cursor, task: TaskKind, form: StatementForm) -> Result<Item, Fail> {
    let start = cur.pos;
    match form {
        StatementForm::Comment => {
            if !cur.eat('#') {
                return fail(ErrorClass::MalformedStatement, start, "expected '# {...}'");
            }
        }
        StatementForm::Append => {
            let Some(first) = cur.ident() else {
                return fail(ErrorClass::MalformedStatement, start, "expected a list name");
            };
            let mut last = first;
            let mut segments = 1;
            loop {
                cur.skip_ws();
                if !cur.eat('.') {
                    break;
                }
                cur.skip_ws();
                last = cur
                    .ident()
                    .ok_or(())
                    .or_else(|_| fail(ErrorClass::MalformedStatement, cur.pos, "expected a name after '.'"))?;
                segments += 1;
            }
            if segments < 2 || last != "append" {
                return fail(ErrorClass::MalformedStatement, start, "expected '<list>.append(...)'");
            }
            expect(cur, '(', "'('")?;
        }
    }
    let keys: &[&str] = match task {
        TaskKind::Ner => &NER_KEYS,
        TaskKind::Re => &RE_KEYS,
    };
    let v = dict(cur, keys)?;
    if form == StatementForm::Append {
        expect(cur, ')', "')'")?;
    }
    Ok(match task {
        TaskKind::Ner => Item::Entity(EntityMention::predicted(&v[0], &v[1])),
        TaskKind::Re => Item::Relation(RelationTriple::new(
            &v[0],
            EntityMention::predicted(&v[2], &v[1]),
            EntityMention::predicted(&v[4], &v[3]),
        )),
    })
}

fn collect(task: TaskKind, items: Vec<Item>) -> Extraction {
    match task {
        TaskKind::Ner => Extraction::Entities(
            items
                .into_iter()
                .filter_map(|i| match i {
                    Item::Entity(e) => Some(e),
                    Item::Relation(_) => None,
                })
                .collect(),
        ),
        TaskKind::Re => Extraction::Relations(
            items
                .into_iter()
                .filter_map(|i| match i {
                    Item::Relation(r) => Some(r),
                    Item::Entity(_) => None,
                })
                .collect(),
        ),
    }
}

fn parse_code(text: &str, task: TaskKind, form: StatementForm) -> ParseOutcome {
    let mut cur = Cursor::new(text);
    let mut items = Vec::new();
    loop {
        cur.skip_ws();
        if cur.at_end() {
            break;
        }
        match code_statement(&mut cur, task, form) {
            Ok(item) => items.push(item),
            Err(f) if items.is_empty() => return classify(text, f),
            Err(_) => {
                return ParseOutcome::Parsed {
                    structures: collect(task, items),
                    trailing_garbage: true,
                }
            }
        }
    }
    ParseOutcome::Parsed {
        structures: collect(task, items),
        trailing_garbage: false,
    }
}

struct SelRecord {
    etype: String,
    span: String,
    relations: Vec<(String, String)>,
}

struct SelParser<'a> {
    cur: Cursor<'a>,
    task: TaskKind,
}

impl<'a> SelParser<'a> {
    fn parse(text: &'a str, task: TaskKind) -> ParseOutcome {
        if text.trim().is_empty() {
            return ParseOutcome::error_at(ErrorClass::EmptyOutputMalformed, 0, "empty structure output");
        }
        let mut p = SelParser {
            cur: Cursor::new(text),
            task,
        };
        match p.document() {
            Err(f) => classify(text, f),
            Ok(records) => {
                p.cur.skip_ws();
                let trailing_garbage = !p.cur.at_end();
                ParseOutcome::Parsed {
                    structures: Self::to_extraction(records, task),
                    trailing_garbage,
                }
            }
        }
    }

    fn to_extraction(records: Vec<SelRecord>, task: TaskKind) -> Extraction {
        match task {
            TaskKind::Ner => Extraction::Entities(
                records
                    .into_iter()
                    .map(|r| EntityMention::predicted(r.span, r.etype))
                    .collect(),
            ),
            TaskKind::Re => {
                let mut out = Vec::new();
                for r in &records {
                    for (rel, tail) in &r.relations {
                        let tail_type = records
                            .iter()
                            .find(|d| &d.span == tail)
                            .map_or(String::new(), |d| d.etype.clone());
                        out.push(RelationTriple::new(
                            rel.clone(),
                            EntityMention::predicted(r.span.clone(), r.etype.clone()),
                            EntityMention::predicted(tail.clone(), tail_type),
                        ));
                    }
                }
                Extraction::Relations(out)
            }
        }
    }

    fn document(&mut self) -> Result<Vec<SelRecord>, Fail> {
        self.cur.skip_ws();
        if !self.cur.eat('(') {
            return fail(ErrorClass::MalformedStatement, self.cur.pos, "structure must start with '('");
        }
        let mut records = Vec::new();
        loop {
            self.cur.skip_ws();
            match self.cur.peek() {
                Some(')') => {
                    self.cur.bump();
                    return Ok(records);
                }
                Some('(') => records.push(self.record()?),
                None => return fail(ErrorClass::UnbalancedBrackets, self.cur.pos, "structure never closes"),
                Some(c) => {
                    return fail(ErrorClass::MalformedStatement, self.cur.pos, format!("expected a record, found {c:?}"))
                }
            }
        }
    }

    /// `( LABEL : SPAN )`, optionally with nested relation records for RE.
    fn record(&mut self) -> Result<SelRecord, Fail> {
        let (etype, span) = self.pair()?;
        let mut relations = Vec::new();
        loop {
            self.cur.skip_ws();
            match self.cur.peek() {
                Some(')') => {
                    self.cur.bump();
                    break;
                }
                Some('(') if self.task == TaskKind::Re => {
                    let (rel, tail) = self.pair()?;
                    self.cur.skip_ws();
                    if !self.cur.eat(')') {
                        return fail(ErrorClass::MalformedStatement, self.cur.pos, "relation record must close after its span");
                    }
                    relations.push((rel, tail));
                }
                None => return fail(ErrorClass::UnbalancedBrackets, self.cur.pos, "record never closes"),
                Some(c) => {
                    return fail(ErrorClass::MalformedStatement, self.cur.pos, format!("unexpected {c:?} in record"))
                }
            }
        }
        Ok(SelRecord {
            etype,
            span,
            relations,
        })
    }

    /// Consumes `( LABEL : SPAN` and leaves the cursor before whatever follows the span.
    fn pair(&mut self) -> Result<(String, String), Fail> {
        self.cur.skip_ws();
        if !self.cur.eat('(') {
            return fail(ErrorClass::MalformedStatement, self.cur.pos, "expected '('");
        }
        let label = self.atom("label")?;
        self.cur.skip_ws();
        if !self.cur.eat(':') {
            let class = if self.cur.at_end() { ErrorClass::UnbalancedBrackets } else { ErrorClass::MalformedStatement };
            return fail(class, self.cur.pos, "expected ':' after label");
        }
        let span = self.atom("span")?;
        Ok((label, span))
    }

    /// Quoted literal or maximal bare run up to `(`, `)`, `:` or a quote.
    fn atom(&mut self, what: &str) -> Result<String, Fail> {
        self.cur.skip_ws();
        let start = self.cur.pos;
        if self.cur.peek().is_some_and(is_open_quote) {
            let s = self.cur.string()?;
            self.cur.skip_ws();
            return match self.cur.peek() {
                None | Some('(' | ')' | ':') => Ok(s),
                Some(c) => fail(ErrorClass::MalformedStatement, self.cur.pos, format!("unexpected {c:?} after quoted {what}")),
            };
        }
        let rest = self.cur.rest();
        let end = rest
            .find(|c: char| matches!(c, '(' | ')' | ':') || is_open_quote(c))
            .unwrap_or(rest.len());
        self.cur.pos += end;
        let s = rest[..end].trim();
        if s.is_empty() {
            return fail(ErrorClass::MalformedStatement, start, format!("empty {what}"));
        }
        if self.cur.peek().is_some_and(is_open_quote) {
            return fail(ErrorClass::MalformedStatement, self.cur.pos, format!("quote inside bare {what}"));
        }
        Ok(s.to_string())
    }
}

#[derive(Debug)]
enum NlToken {
    Quoted(String),
    Word(String),
    Period,
}

fn nl_statement(cur: &mut Cursor) -> Result<Vec<NlToken>, Fail> {
    let mut toks = Vec::new();
    loop {
        cur.skip_ws();
        match cur.peek() {
            None => return fail(ErrorClass::MalformedStatement, cur.pos, "statement does not end with '.'"),
            Some('.') => {
                cur.bump();
                toks.push(NlToken::Period);
                return Ok(toks);
            }
            Some(c) if is_open_quote(c) => toks.push(NlToken::Quoted(cur.string()?)),
            Some(_) => {
                let rest = cur.rest();
                let end = rest
                    .find(|c: char| c.is_whitespace() || c == '.' || is_open_quote(c))
                    .unwrap_or(rest.len());
                cur.pos += end;
                toks.push(NlToken::Word(rest[..end].to_string()));
            }
        }
    }
}

fn words_then(toks: &[NlToken]) -> (Vec<&str>, &[NlToken]) {
    let mut words = Vec::new();
    let mut i = 0;
    while let Some(NlToken::Word(w)) = toks.get(i) {
        words.push(w.as_str());
        i += 1;
    }
    (words, &toks[i..])
}

/// Splits `work for organization` into (`work for`, `organization`), preferring the
/// longest suffix that names a known entity type.
fn split_relation_words(words: &[&str], entity_types: &[String]) -> Option<(String, String)> {
    if words.len() < 2 {
        return None;
    }
    for cut in 1..words.len() {
        let tail = words[cut..].join(" ");
        if entity_types.iter().any(|t| canonical_type(t) == canonical_type(&tail)) {
            return Some((words[..cut].join(" "), tail));
        }
    }
    let n = words.len();
    Some((words[..n - 1].join(" "), words[n - 1].to_string()))
}

fn nl_item(toks: &[NlToken], task: TaskKind, entity_types: &[String]) -> Option<Item> {
    match task {
        TaskKind::Ner => match toks {
            [NlToken::Quoted(span), NlToken::Word(is), NlToken::Quoted(ty), NlToken::Period] if is == "is" => {
                Some(Item::Entity(EntityMention::predicted(span, ty)))
            }
            _ => None,
        },
        TaskKind::Re => {
            let (t1, rest) = words_then(toks);
            let [NlToken::Quoted(s1), rest @ ..] = rest else { return None };
            let (mid, rest) = words_then(rest);
            let [NlToken::Quoted(s2), NlToken::Period] = rest else { return None };
            if t1.is_empty() {
                return None;
            }
            let (rel, t2) = split_relation_words(&mid, entity_types)?;
            Some(Item::Relation(RelationTriple::new(
                rel,
                EntityMention::predicted(s1, t1.join(" ")),
                EntityMention::predicted(s2, t2),
            )))
        }
    }
}

fn parse_natural(text: &str, task: TaskKind, entity_types: &[String]) -> ParseOutcome {
    let mut cur = Cursor::new(text);
    let mut items = Vec::new();
    loop {
        cur.skip_ws();
        if cur.at_end() {
            break;
        }
        let start = cur.pos;
        let result = nl_statement(&mut cur).and_then(|toks| {
            nl_item(&toks, task, entity_types)
                .ok_or(())
                .or_else(|_| fail(ErrorClass::MalformedStatement, start, "sentence does not match the expected pattern"))
        });
        match result {
            Ok(item) => items.push(item),
            Err(f) if items.is_empty() => return ParseOutcome::error_at(f.class, f.pos, f.msg),
            Err(_) => {
                return ParseOutcome::Parsed {
                    structures: collect(task, items),
                    trailing_garbage: true,
                }
            }
        }
    }
    ParseOutcome::Parsed {
        structures: collect(task, items),
        trailing_garbage: false,
    }
}
