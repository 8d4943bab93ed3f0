//! Shared corpus types: sequence labels, template ids and the parsed-event
//! file that carries grouped sequences between pipeline stages.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Whether a sequence comes from a normal run or an anomalous one.
/// Anomalous sequences never enter training; they are reserved for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn is_normal(self) -> bool {
        matches!(self, Label::Normal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }

    pub fn parse(s: &str) -> Result<Label> {
        match s {
            "normal" => Ok(Label::Normal),
            "anomalous" => Ok(Label::Anomalous),
            other => Err(Error::Contract(format!("unknown label {other:?}"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifier of a parsed log template, assigned in first-seen order
/// starting at 1. Ids are never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TemplateId(pub u32);

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One execution trace (block, node, run) as an ordered list of template ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSequence {
    pub seq_id: String,
    pub label: Label,
    pub template_ids: Vec<TemplateId>,
}

/// Render sequences in the parsed-event format:
/// `seq_key<TAB>label<TAB>space-separated template ids`, one per line.
pub fn render_parsed_events(seqs: &[ParsedSequence]) -> String {
    let mut out = String::new();
    for seq in seqs {
        out.push_str(&seq.seq_id);
        out.push('\t');
        out.push_str(seq.label.as_str());
        out.push('\t');
        for (i, tid) in seq.template_ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&tid.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn write_parsed_events(path: &Path, seqs: &[ParsedSequence]) -> Result<()> {
    fs::write(path, render_parsed_events(seqs)).map_err(|e| Error::io(path, e))
}

pub fn read_parsed_events(path: &Path) -> Result<Vec<ParsedSequence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_parsed_events(&text)
}

pub fn parse_parsed_events(text: &str) -> Result<Vec<ParsedSequence>> {
    let mut seqs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (seq_id, label, ids) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::Contract(format!(
                    "parsed-event line {}: expected 3 tab-separated fields",
                    lineno + 1
                )))
            }
        };
        let label = Label::parse(label)?;
        let mut template_ids = Vec::new();
        for tok in ids.split_whitespace() {
            let id: u32 = tok.parse().map_err(|_| {
                Error::Contract(format!(
                    "parsed-event line {}: bad template id {tok:?}",
                    lineno + 1
                ))
            })?;
            template_ids.push(TemplateId(id));
        }
        seqs.push(ParsedSequence {
            seq_id: seq_id.to_string(),
            label,
            template_ids,
        });
    }
    Ok(seqs)
}
