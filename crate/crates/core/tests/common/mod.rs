#![allow(dead_code)]

use codeie_core::parse::{Extraction, ParseOutcome};
use codeie_core::{IESample, Schema, TaskKind};

pub fn ner_schema() -> Schema {
    Schema::ner(["person", "organization", "location", "miscellaneous"]).unwrap()
}

pub fn re_schema() -> Schema {
    Schema::new(
        TaskKind::Re,
        ["person", "organization", "location", "other"],
        ["work for", "live in", "located in", "organization based in", "kill"],
    )
    .unwrap()
}

/// Whether `outcome` parsed to exactly the gold structures of `sample`, in order.
pub fn recovers(outcome: &ParseOutcome, sample: &IESample, task: TaskKind) -> bool {
    match (outcome, task) {
        (
            ParseOutcome::Parsed {
                structures: Extraction::Entities(es),
                trailing_garbage: false,
            },
            TaskKind::Ner,
        ) => es.len() == sample.entities.len() && es.iter().zip(&sample.entities).all(|(p, g)| p.same_content(g)),
        (
            ParseOutcome::Parsed {
                structures: Extraction::Relations(rs),
                trailing_garbage: false,
            },
            TaskKind::Re,
        ) => rs.len() == sample.relations.len() && rs.iter().zip(&sample.relations).all(|(p, g)| p.same_content(g)),
        _ => false,
    }
}
