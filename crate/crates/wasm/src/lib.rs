//! Browser bindings for the demo page in `www/`.
//!
//! Each export has a plain-Rust twin returning `Result<String, String>` so the
//! logic is testable without a JS host.

use std::collections::HashSet;

use codeie_core::eval::{entity_f1, ground_span, relation_strict_f1, Counts};
use codeie_core::parse::{parse_completion, Extraction, ParseOutcome};
use codeie_core::prompt::render_pair;
use codeie_core::{IESample, PromptDesign, TaskKind, TokenSpan};
use wasm_bindgen::prelude::*;

fn tokens_of(sentence: &str) -> Vec<String> {
    sentence.split_whitespace().map(str::to_string).collect()
}

fn design_task(design: &str, task: &str) -> Result<(PromptDesign, TaskKind), String> {
    let design = design.parse::<PromptDesign>().map_err(|e| e.to_string())?;
    let task = task.parse::<TaskKind>().map_err(|e| e.to_string())?;
    Ok((design, task))
}

/// The prompt a model would be asked to continue for `sentence`.
pub fn render_prompt_text(sentence: &str, design: &str, task: &str) -> Result<String, String> {
    let (design, task) = design_task(design, task)?;
    let tokens = tokens_of(sentence);
    if tokens.is_empty() {
        return Err("the sentence is empty".into());
    }
    let sample = IESample::from_tokens("input", tokens, Vec::new(), Vec::new());
    render_pair(&sample, design, task)
        .map(|p| p.prompt_part)
        .map_err(|e| e.to_string())
}

/// Parse outcome as pretty JSON.
pub fn parse_completion_json(completion: &str, design: &str, task: &str) -> Result<String, String> {
    let (design, task) = design_task(design, task)?;
    let outcome = parse_completion(completion, design, task);
    serde_json::to_string_pretty(&outcome).map_err(|e| e.to_string())
}

/// Gives parsed gold structures offsets in `tokens`. Entities claim their
/// ranges so repeated mentions land on successive occurrences.
fn ground_gold(x: Extraction, tokens: &[String]) -> Result<Extraction, String> {
    let place = |text: &str, claimed: &HashSet<TokenSpan>| {
        ground_span(text, tokens, claimed).ok_or_else(|| format!("gold span {text:?} is not in the sentence"))
    };
    Ok(match x {
        Extraction::Entities(mut es) => {
            let mut claimed = HashSet::new();
            for e in &mut es {
                let span = place(&e.text, &claimed)?;
                claimed.insert(span);
                e.offset = Some(span);
            }
            Extraction::Entities(es)
        }
        Extraction::Relations(mut rs) => {
            let none = HashSet::new();
            for r in &mut rs {
                r.head.offset = Some(place(&r.head.text, &none)?);
                r.tail.offset = Some(place(&r.tail.text, &none)?);
            }
            Extraction::Relations(rs)
        }
    })
}

fn parsed(text: &str, design: PromptDesign, task: TaskKind, what: &str) -> Result<Extraction, String> {
    match parse_completion(text, design, task) {
        ParseOutcome::Parsed { structures, .. } => Ok(structures),
        ParseOutcome::StructuralError(e) => Err(format!("{what}: {e}")),
    }
}

/// Strict scores of `predicted` against `gold`, both written in `design`.
/// A prediction that fails to parse scores as an empty prediction.
pub fn score_json(sentence: &str, gold: &str, predicted: &str, design: &str, task: &str) -> Result<String, String> {
    let (design, task) = design_task(design, task)?;
    let tokens = tokens_of(sentence);
    let gold = ground_gold(parsed(gold, design, task, "gold")?, &tokens)?;
    let outcome = parse_completion(predicted, design, task);
    let counts: Counts = match (&gold, outcome.structures()) {
        (Extraction::Entities(g), Some(Extraction::Entities(p))) => entity_f1(p, g, &tokens),
        (Extraction::Entities(g), _) => entity_f1(&[], g, &tokens),
        (Extraction::Relations(g), Some(Extraction::Relations(p))) => relation_strict_f1(p, g, &tokens),
        (Extraction::Relations(g), _) => relation_strict_f1(&[], g, &tokens),
    };
    let value = serde_json::json!({
        "precision": counts.precision(),
        "recall": counts.recall(),
        "f1": counts.f1(),
        "tp": counts.tp,
        "fp": counts.fp,
        "fn": counts.fn_,
        "structural_error": outcome.error(),
    });
    serde_json::to_string_pretty(&value).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn render_prompt(sentence: &str, design: &str, task: &str) -> Result<String, JsError> {
    render_prompt_text(sentence, design, task).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = parseCompletion)]
pub fn parse_completion_js(completion: &str, design: &str, task: &str) -> Result<String, JsError> {
    parse_completion_json(completion, design, task).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn score(sentence: &str, gold: &str, predicted: &str, design: &str, task: &str) -> Result<String, JsError> {
    score_json(sentence, gold, predicted, design, task).map_err(|e| JsError::new(&e))
}

/// Names accepted by the `design` arguments, for populating the page's selector.
#[wasm_bindgen]
pub fn designs() -> Vec<String> {
    PromptDesign::ALL.iter().map(|d| d.name().to_string()).collect()
}
