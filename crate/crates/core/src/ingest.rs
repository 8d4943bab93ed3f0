//! Raw log ingestion: strip per-line headers, extract grouping keys, and
//! partition lines into labeled sequences per a loader config.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::Deserialize;

use crate::corpus::{Label, ParsedSequence};
use crate::drain::{preprocess_masks, tokenize, DrainParams, MaskRules, ParseTree};
use crate::error::{Error, Result};

/// One log line after header stripping. A line may name several grouping
/// keys (e.g. an HDFS line touching two blocks); it joins every named group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLogRecord {
    /// 1-based position in the source file.
    pub line_no: usize,
    /// Free-form message part, header fields removed.
    pub content: String,
    /// Grouping keys found in the raw line, in order, deduplicated.
    pub seq_keys: Vec<String>,
    /// Label tag extracted by the header pattern, if it has a `label` group.
    pub label_hint: Option<String>,
}

#[derive(Debug, Clone)]
pub enum Grouping {
    /// Keys extracted from each raw line by this pattern.
    Key(Regex),
    /// The whole file is one sequence keyed by its file name.
    PerFile,
}

#[derive(Debug, Clone)]
pub enum LabelRule {
    AllNormal,
    /// A sequence is anomalous iff any of its records carries a label hint
    /// different from `normal_tag` (BGL convention: "-" means non-alert).
    RecordTag { normal_tag: String },
    /// A sequence is anomalous iff its key appears in the listed set.
    KeyList { anomalous: HashSet<String> },
    /// A sequence is anomalous iff its key matches the pattern.
    KeyPattern(Regex),
}

impl LabelRule {
    fn label_for(&self, seq_key: &str, records: &[RawLogRecord]) -> Label {
        let anomalous = match self {
            LabelRule::AllNormal => false,
            LabelRule::RecordTag { normal_tag } => records
                .iter()
                .any(|r| r.label_hint.as_deref().is_some_and(|t| t != normal_tag)),
            LabelRule::KeyList { anomalous } => anomalous.contains(seq_key),
            LabelRule::KeyPattern(re) => re.is_match(seq_key),
        };
        if anomalous {
            Label::Anomalous
        } else {
            Label::Normal
        }
    }
}

/// Drain settings carried alongside the loader so one config file describes
/// a whole dataset.
#[derive(Debug, Clone, Default)]
pub struct ParserSettings {
    pub params: DrainParams,
    pub mask_patterns: Vec<String>,
}

impl ParserSettings {
    pub fn mask_rules(&self) -> Result<MaskRules> {
        MaskRules::new(&self.mask_patterns)
    }
}

#[derive(Debug, Clone)]
pub struct LoaderConfig {
    /// Pattern splitting header fields from content. Must define a named
    /// group `content`; may define `label`. Absent → the whole line is
    /// content.
    pub header: Option<Regex>,
    pub grouping: Grouping,
    pub labels: LabelRule,
    pub parser: ParserSettings,
}

impl LoaderConfig {
    pub fn per_file_all_normal() -> LoaderConfig {
        LoaderConfig {
            header: None,
            grouping: Grouping::PerFile,
            labels: LabelRule::AllNormal,
            parser: ParserSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub records: usize,
    /// Lines kept whole because the header pattern did not match.
    pub unmatched_header: usize,
    /// Lines skipped because nothing remained after header stripping.
    pub skipped_empty: usize,
}

#[derive(Debug)]
pub struct LoadedLog {
    pub records: Vec<RawLogRecord>,
    pub stats: LoadStats,
}

/// Extract grouping keys from a raw line: every match of the pattern, using
/// capture group 1 when present, deduplicated preserving first occurrence.
fn extract_keys(re: &Regex, line: &str) -> Vec<String> {
    let mut keys = Vec::new();
    for caps in re.captures_iter(line) {
        let m = caps.get(1).or_else(|| caps.get(0)).unwrap();
        let key = m.as_str();
        if !keys.iter().any(|k| k == key) {
            keys.push(key.to_string());
        }
    }
    keys
}

/// Ingest one file's text under `cfg`. `source_name` keys the sequence in
/// per-file mode (callers pass the file name).
pub fn load_raw_text(source_name: &str, text: &str, cfg: &LoaderConfig) -> LoadedLog {
    let mut records = Vec::new();
    let mut stats = LoadStats::default();
    for (idx, line) in text.lines().enumerate() {
        stats.lines += 1;
        if line.trim().is_empty() {
            stats.skipped_empty += 1;
            continue;
        }
        let (content, label_hint) = match &cfg.header {
            Some(re) => match re.captures(line) {
                Some(caps) => {
                    let content = caps
                        .name("content")
                        .map(|m| m.as_str().trim().to_string())
                        .unwrap_or_default();
                    let hint = caps.name("label").map(|m| m.as_str().to_string());
                    (content, hint)
                }
                None => {
                    stats.unmatched_header += 1;
                    (line.trim().to_string(), None)
                }
            },
            None => (line.trim().to_string(), None),
        };
        if content.is_empty() {
            stats.skipped_empty += 1;
            continue;
        }
        let seq_keys = match &cfg.grouping {
            Grouping::Key(re) => extract_keys(re, line),
            Grouping::PerFile => vec![source_name.to_string()],
        };
        records.push(RawLogRecord {
            line_no: idx + 1,
            content,
            seq_keys,
            label_hint,
        });
        stats.records += 1;
    }
    LoadedLog { records, stats }
}

/// Read a log file (invalid UTF-8 replaced) and ingest it.
pub fn load_raw_log(path: &Path, cfg: &LoaderConfig) -> Result<LoadedLog> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(load_raw_text(&name, &text, cfg))
}

/// One grouped, labeled sequence of raw records in file order.
#[derive(Debug, Clone)]
pub struct GroupedSequence {
    pub seq_key: String,
    pub records: Vec<RawLogRecord>,
    pub label: Label,
}

#[derive(Debug)]
pub struct GroupingOutcome {
    /// Sequences in first-appearance order of their keys.
    pub sequences: Vec<GroupedSequence>,
    /// Keyed mode only: records naming no key. Reported, never silently
    /// dropped.
    pub rejected: Vec<RawLogRecord>,
}

/// Partition records by sequence key, preserving relative order, and label
/// each group. A record naming several keys is appended to every group.
pub fn group_sequences(records: &[RawLogRecord], cfg: &LoaderConfig) -> GroupingOutcome {
    let mut order: Vec<String> = Vec::new();
    let mut by_key: HashMap<String, Vec<RawLogRecord>> = HashMap::new();
    let mut rejected = Vec::new();
    for rec in records {
        if rec.seq_keys.is_empty() {
            rejected.push(rec.clone());
            continue;
        }
        for key in &rec.seq_keys {
            let bucket = by_key.entry(key.clone()).or_insert_with(|| {
                order.push(key.clone());
                Vec::new()
            });
            bucket.push(rec.clone());
        }
    }
    let sequences = order
        .into_iter()
        .map(|key| {
            let records = by_key.remove(&key).unwrap();
            let label = cfg.labels.label_for(&key, &records);
            GroupedSequence {
                seq_key: key,
                records,
                label,
            }
        })
        .collect();
    GroupingOutcome {
        sequences,
        rejected,
    }
}

/// Grouped-log summary: `seq_key<TAB>label<TAB>raw-line-count`, one per
/// sequence.
pub fn render_grouped_summary(groups: &[GroupedSequence]) -> String {
    let mut out = String::new();
    for g in groups {
        out.push_str(&format!("{}\t{}\t{}\n", g.seq_key, g.label, g.records.len()));
    }
    out
}

/// Mine templates from grouped records and emit parsed sequences. This is
/// the parse step of the pipeline: one shared tree across all sequences,
/// records visited in group order.
pub fn parse_grouped(
    groups: &[GroupedSequence],
    settings: &ParserSettings,
) -> Result<(ParseTree, Vec<ParsedSequence>)> {
    let rules = settings.mask_rules()?;
    let mut tree = ParseTree::new(settings.params.clone())?;
    let mut parsed = Vec::with_capacity(groups.len());
    for g in groups {
        let mut template_ids = Vec::with_capacity(g.records.len());
        for rec in &g.records {
            let tokens = preprocess_masks(tokenize(&rec.content), &rules);
            if tokens.is_empty() {
                continue;
            }
            template_ids.push(tree.parse_line(&tokens));
        }
        parsed.push(ParsedSequence {
            seq_id: g.seq_key.clone(),
            label: g.label,
            template_ids,
        });
    }
    Ok((tree, parsed))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoaderConfigFile {
    header: Option<String>,
    grouping: GroupingSection,
    #[serde(default)]
    labels: LabelsSection,
    #[serde(default)]
    parser: ParserSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupingSection {
    mode: String,
    pattern: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsSection {
    rule: Option<String>,
    normal_tag: Option<String>,
    file: Option<String>,
    pattern: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParserSection {
    depth: Option<usize>,
    sim_threshold: Option<f64>,
    max_children: Option<usize>,
    masks: Option<Vec<String>>,
}

fn compile_regex(what: &str, pattern: &str) -> Result<Regex> {
    Regex::new(pattern).map_err(|e| Error::Config(format!("bad {what} pattern {pattern:?}: {e}")))
}

/// Parse a loader config. `base_dir` resolves relative paths named inside
/// the config (the key-list file).
pub fn parse_loader_config(text: &str, base_dir: &Path) -> Result<LoaderConfig> {
    let file: LoaderConfigFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("loader config: {e}")))?;

    let header = match &file.header {
        Some(p) => {
            let re = compile_regex("header", p)?;
            if !re.capture_names().flatten().any(|n| n == "content") {
                return Err(Error::Config(
                    "header pattern must define a named group `content`".into(),
                ));
            }
            Some(re)
        }
        None => None,
    };

    let grouping = match file.grouping.mode.as_str() {
        "key" => {
            let p = file.grouping.pattern.as_deref().ok_or_else(|| {
                Error::Config("grouping mode `key` requires `pattern`".into())
            })?;
            Grouping::Key(compile_regex("grouping", p)?)
        }
        "per-file" => {
            if file.grouping.pattern.is_some() {
                return Err(Error::Config(
                    "grouping mode `per-file` takes no pattern".into(),
                ));
            }
            Grouping::PerFile
        }
        other => {
            return Err(Error::Config(format!(
                "grouping mode must be `key` or `per-file`, got {other:?}"
            )))
        }
    };

    let labels = match file.labels.rule.as_deref().unwrap_or("all-normal") {
        "all-normal" => LabelRule::AllNormal,
        "record-tag" => LabelRule::RecordTag {
            normal_tag: file
                .labels
                .normal_tag
                .clone()
                .ok_or_else(|| Error::Config("label rule `record-tag` requires `normal_tag`".into()))?,
        },
        "key-list" => {
            let rel = file.labels.file.as_deref().ok_or_else(|| {
                Error::Config("label rule `key-list` requires `file`".into())
            })?;
            let path = base_dir.join(rel);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let anomalous = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect();
            LabelRule::KeyList { anomalous }
        }
        "key-pattern" => {
            let p = file.labels.pattern.as_deref().ok_or_else(|| {
                Error::Config("label rule `key-pattern` requires `pattern`".into())
            })?;
            LabelRule::KeyPattern(compile_regex("label", p)?)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown label rule {other:?} (expected all-normal, record-tag, key-list, key-pattern)"
            )))
        }
    };

    let defaults = DrainParams::default();
    let parser = ParserSettings {
        params: DrainParams {
            depth: file.parser.depth.unwrap_or(defaults.depth),
            sim_threshold: file.parser.sim_threshold.unwrap_or(defaults.sim_threshold),
            max_children: file.parser.max_children.unwrap_or(defaults.max_children),
        },
        mask_patterns: file.parser.masks.unwrap_or_default(),
    };
    parser.mask_rules()?;

    Ok(LoaderConfig {
        header,
        grouping,
        labels,
        parser,
    })
}

pub fn read_loader_config(path: &Path) -> Result<LoaderConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_loader_config(&text, base)
}
