//! Drain-style log template mining: a fixed-depth parse tree that routes
//! lines by token count and leading tokens, then merges similar lines into
//! templates whose variable positions become wildcard slots.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use regex::Regex;

use crate::corpus::TemplateId;
use crate::error::{Error, Result};

/// Token standing in for a variable slot in a template.
pub const WILDCARD: &str = "<*>";

/// Tree parameters. Routing consumes the token count plus up to `depth - 1`
/// leading tokens before reaching a leaf group.
#[derive(Debug, Clone)]
pub struct DrainParams {
    pub depth: usize,
    pub sim_threshold: f64,
    pub max_children: usize,
}

impl Default for DrainParams {
    fn default() -> Self {
        DrainParams {
            depth: 4,
            sim_threshold: 0.5,
            max_children: 100,
        }
    }
}

impl DrainParams {
    fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config("drain depth must be >= 2".into()));
        }
        if !(self.sim_threshold > 0.0 && self.sim_threshold <= 1.0) {
            return Err(Error::Config("sim_threshold must be in (0, 1]".into()));
        }
        if self.max_children < 1 {
            return Err(Error::Config("max_children must be >= 1".into()));
        }
        Ok(())
    }
}

/// A mined event type: token list with wildcard slots plus how many lines
/// matched it so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogTemplate {
    pub template_id: TemplateId,
    pub tokens: Vec<String>,
    pub support_count: u64,
}

impl LogTemplate {
    pub fn rendered(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Split on runs of whitespace; tokens keep their original characters.
pub fn tokenize(content: &str) -> Vec<String> {
    content.split_whitespace().map(str::to_string).collect()
}

/// Ordered token-masking rules applied before parsing. A token fully
/// matching a rule is replaced by the wildcard; the first matching rule wins.
#[derive(Debug, Clone, Default)]
pub struct MaskRules {
    rules: Vec<Regex>,
}

impl MaskRules {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<MaskRules> {
        let mut rules = Vec::with_capacity(patterns.len());
        for p in patterns {
            let anchored = format!("^(?:{})$", p.as_ref());
            let re = Regex::new(&anchored)
                .map_err(|e| Error::Config(format!("bad mask pattern {:?}: {e}", p.as_ref())))?;
            rules.push(re);
        }
        Ok(MaskRules { rules })
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Replace any token fully matching a rule with the wildcard token.
pub fn preprocess_masks(tokens: Vec<String>, rules: &MaskRules) -> Vec<String> {
    if rules.is_empty() {
        return tokens;
    }
    tokens
        .into_iter()
        .map(|tok| {
            if rules.rules.iter().any(|re| re.is_match(&tok)) {
                WILDCARD.to_string()
            } else {
                tok
            }
        })
        .collect()
}

/// Fraction of positions where the tokens agree and the template token is
/// not a wildcard. Both lists must have the same length.
pub fn seq_similarity(template_tokens: &[String], line_tokens: &[String]) -> Result<f64> {
    if template_tokens.len() != line_tokens.len() {
        return Err(Error::Contract(format!(
            "seq_similarity on unequal lengths {} vs {}",
            template_tokens.len(),
            line_tokens.len()
        )));
    }
    if template_tokens.is_empty() {
        return Ok(1.0);
    }
    let matches = template_tokens
        .iter()
        .zip(line_tokens)
        .filter(|(t, l)| t.as_str() != WILDCARD && t == l)
        .count();
    Ok(matches as f64 / template_tokens.len() as f64)
}

fn has_digit(token: &str) -> bool {
    token.chars().any(|c| c.is_ascii_digit())
}

/// Routing key for one token at an internal node. Variable-looking tokens
/// collapse onto the catch-all child to keep the tree narrow.
fn route_key(token: &str) -> &str {
    if token == WILDCARD || has_digit(token) {
        WILDCARD
    } else {
        token
    }
}

#[derive(Debug, Default)]
struct Node {
    children: HashMap<String, Node>,
    /// Template ids gathered at this node's leaf group.
    group: Vec<u32>,
}

impl Node {
    /// Descend one level while inserting, respecting the max_children cap:
    /// excess distinct tokens are routed to the catch-all child.
    fn child_for_insert(&mut self, key: &str, max_children: usize) -> &mut Node {
        if key == WILDCARD || self.children.contains_key(key) {
            return self.children.entry(key.to_string()).or_default();
        }
        if self.children.contains_key(WILDCARD) {
            if self.children.len() < max_children {
                self.children.entry(key.to_string()).or_default()
            } else {
                self.children.get_mut(WILDCARD).unwrap()
            }
        } else if self.children.len() + 1 < max_children {
            self.children.entry(key.to_string()).or_default()
        } else {
            // Last slot is reserved for the catch-all child.
            self.children.entry(WILDCARD.to_string()).or_default()
        }
    }

    fn child_for_lookup(&self, key: &str) -> Option<&Node> {
        self.children
            .get(key)
            .or_else(|| self.children.get(WILDCARD))
    }
}

/// Fixed-depth parse tree. `parse_line` mutates the tree (single writer);
/// once parsing is done the tree can serve read-only lookups via
/// `match_line`.
#[derive(Debug)]
pub struct ParseTree {
    params: DrainParams,
    by_len: HashMap<usize, Node>,
    templates: Vec<LogTemplate>,
}

impl ParseTree {
    pub fn new(params: DrainParams) -> Result<ParseTree> {
        params.validate()?;
        Ok(ParseTree {
            params,
            by_len: HashMap::new(),
            templates: Vec::new(),
        })
    }

    pub fn params(&self) -> &DrainParams {
        &self.params
    }

    pub fn template_count(&self) -> usize {
        self.templates.len()
    }

    pub fn template(&self, id: TemplateId) -> Option<&LogTemplate> {
        self.templates.get(id.0 as usize - 1)
    }

    fn route_levels(&self, tokens: &[String]) -> usize {
        tokens.len().min(self.params.depth - 1)
    }

    /// Parse one preprocessed token list, creating or merging a template.
    /// Returns the id of the template the line now belongs to.
    pub fn parse_line(&mut self, tokens: &[String]) -> TemplateId {
        let levels = self.route_levels(tokens);
        let max_children = self.params.max_children;
        let mut node = self.by_len.entry(tokens.len()).or_default();
        for tok in &tokens[..levels] {
            node = node.child_for_insert(route_key(tok), max_children);
        }

        let mut best: Option<(u32, f64)> = None;
        for &id in &node.group {
            let tpl = &self.templates[id as usize - 1];
            let sim = seq_similarity(&tpl.tokens, tokens).expect("leaf groups are length-pure");
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((id, sim));
            }
        }

        if let Some((id, sim)) = best {
            if sim >= self.params.sim_threshold {
                let tpl = &mut self.templates[id as usize - 1];
                for (slot, tok) in tpl.tokens.iter_mut().zip(tokens) {
                    if slot != tok {
                        *slot = WILDCARD.to_string();
                    }
                }
                tpl.support_count += 1;
                return TemplateId(id);
            }
        }

        let id = self.templates.len() as u32 + 1;
        self.templates.push(LogTemplate {
            template_id: TemplateId(id),
            tokens: tokens.to_vec(),
            support_count: 1,
        });
        node.group.push(id);
        TemplateId(id)
    }

    /// Read-only lookup for a frozen tree: route and match without creating
    /// templates. Lines matching no template return None (callers map this
    /// to the UNK event).
    pub fn match_line(&self, tokens: &[String]) -> Option<TemplateId> {
        let levels = self.route_levels(tokens);
        let mut node = self.by_len.get(&tokens.len())?;
        for tok in &tokens[..levels] {
            node = node.child_for_lookup(route_key(tok))?;
        }
        let mut best: Option<(u32, f64)> = None;
        for &id in &node.group {
            let tpl = &self.templates[id as usize - 1];
            let sim = seq_similarity(&tpl.tokens, tokens).expect("leaf groups are length-pure");
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((id, sim));
            }
        }
        match best {
            Some((id, sim)) if sim >= self.params.sim_threshold => Some(TemplateId(id)),
            _ => None,
        }
    }

    /// All templates in id order.
    pub fn export_templates(&self) -> Vec<LogTemplate> {
        self.templates.clone()
    }

    /// Rebuild a tree from exported templates. Lines already covered by the
    /// exported templates match the same ids in the rebuilt tree.
    pub fn from_templates(params: DrainParams, templates: Vec<LogTemplate>) -> Result<ParseTree> {
        let mut sorted = templates;
        sorted.sort_by_key(|t| t.template_id);
        for (i, t) in sorted.iter().enumerate() {
            if t.template_id.0 as usize != i + 1 {
                return Err(Error::ModelFormat(format!(
                    "template ids must be dense from 1; got {} at position {}",
                    t.template_id, i
                )));
            }
        }
        let mut tree = ParseTree::new(params)?;
        for tpl in &sorted {
            let levels = tree.route_levels(&tpl.tokens);
            let max_children = tree.params.max_children;
            let mut node = tree.by_len.entry(tpl.tokens.len()).or_default();
            for tok in &tpl.tokens[..levels] {
                node = node.child_for_insert(route_key(tok), max_children);
            }
            node.group.push(tpl.template_id.0);
        }
        tree.templates = sorted;
        Ok(tree)
    }
}

/// Template export format: `template_id<TAB>support_count<TAB>tokens joined
/// by single spaces`, one per line, in id order.
pub fn render_templates(templates: &[LogTemplate]) -> String {
    let mut out = String::new();
    for t in templates {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            t.template_id,
            t.support_count,
            t.rendered()
        ));
    }
    out
}

pub fn write_templates(path: &Path, templates: &[LogTemplate]) -> Result<()> {
    fs::write(path, render_templates(templates)).map_err(|e| Error::io(path, e))
}

pub fn read_templates(path: &Path) -> Result<Vec<LogTemplate>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut templates = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (id, support, toks) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::ModelFormat(format!(
                    "template line {}: expected 3 tab-separated fields",
                    lineno + 1
                )))
            }
        };
        let template_id = TemplateId(id.parse().map_err(|_| {
            Error::ModelFormat(format!("template line {}: bad id {id:?}", lineno + 1))
        })?);
        let support_count = support.parse().map_err(|_| {
            Error::ModelFormat(format!("template line {}: bad count {support:?}", lineno + 1))
        })?;
        templates.push(LogTemplate {
            template_id,
            tokens: tokenize(toks),
            support_count,
        });
    }
    Ok(templates)
}
