//! Count-based masked-event predictor with deterministic backoff. Counts
//! are unsmoothed maximum-likelihood; unseen contexts fall back level by
//! level, dropping the position farthest from the masked slot first, down
//! to the global event frequency at level 0.

use std::cmp::Reverse;
use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::predictor::{MaskedPredictor, Prediction};
use crate::window::{EventId, MaskedSample};

/// Context positions kept at backoff level `k` for geometry (n, m), sorted
/// ascending. Dropping proceeds from the full context (level n−1) down to
/// the empty context (level 0), removing the position with the largest
/// index distance to the masked slot first; at equal distance the left
/// side goes first.
pub fn kept_positions(n: usize, m: usize, k: usize) -> Vec<usize> {
    let left = n - 1 - m;
    let offset = |i: usize| -> isize {
        if i < left {
            i as isize - left as isize
        } else {
            i as isize - left as isize + 1
        }
    };
    let mut drop_order: Vec<usize> = (0..n - 1).collect();
    drop_order.sort_by_key(|&i| (Reverse(offset(i).abs()), offset(i)));
    let mut kept: Vec<usize> = drop_order[(n - 1 - k)..].to_vec();
    kept.sort_unstable();
    kept
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct CountMap {
    total: u64,
    counts: HashMap<EventId, u64>,
}

impl CountMap {
    fn bump(&mut self, event: EventId) {
        self.total += 1;
        *self.counts.entry(event).or_insert(0) += 1;
    }
}

/// Hierarchical context→event count tables, one map per backoff level.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramTable {
    n: usize,
    m: usize,
    /// levels[k]: context of the k kept positions → target counts.
    /// levels[0] has the single empty-context entry, the global frequency.
    levels: Vec<HashMap<Vec<EventId>, CountMap>>,
    kept: Vec<Vec<usize>>,
}

impl NgramTable {
    /// Accumulate counts for all backoff levels over the training samples.
    pub fn fit(samples: &[MaskedSample], n: usize, m: usize) -> Result<NgramTable> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("no training samples for n-gram fit".into()));
        }
        if n < 2 || m > n - 1 {
            return Err(Error::Config(format!("invalid n-gram geometry n={n} m={m}")));
        }
        let kept: Vec<Vec<usize>> = (0..n).map(|k| kept_positions(n, m, k)).collect();
        let mut levels: Vec<HashMap<Vec<EventId>, CountMap>> = vec![HashMap::new(); n];
        for s in samples {
            if s.context.len() != n - 1 || s.mask_pos != m {
                return Err(Error::Contract(format!(
                    "sample geometry ({}, {}) does not match fit geometry ({}, {})",
                    s.context.len() + 1,
                    s.mask_pos,
                    n,
                    m
                )));
            }
            for k in 0..n {
                let key: Vec<EventId> = kept[k].iter().map(|&i| s.context[i]).collect();
                levels[k].entry(key).or_default().bump(s.target);
            }
        }
        Ok(NgramTable { n, m, levels, kept })
    }

    pub fn window_size(&self) -> usize {
        self.n
    }

    pub fn mask_pos(&self) -> usize {
        self.m
    }

    fn global(&self) -> &CountMap {
        self.levels[0]
            .get(&[] as &[EventId])
            .expect("fit guarantees level 0")
    }

    fn global_count(&self, event: EventId) -> u64 {
        self.global().counts.get(&event).copied().unwrap_or(0)
    }

    /// Highest level whose projected context exists, with its count map.
    /// Level 0 always exists after fit.
    fn lookup(&self, context: &[EventId]) -> (usize, &CountMap) {
        assert_eq!(
            context.len(),
            self.n - 1,
            "context length must be n-1 = {}",
            self.n - 1
        );
        for k in (0..self.n).rev() {
            let key: Vec<EventId> = self.kept[k].iter().map(|&i| context[i]).collect();
            if let Some(cm) = self.levels[k].get(&key) {
                return (k, cm);
            }
        }
        unreachable!("level 0 is always populated")
    }

    /// Best event for the context: highest count at the backoff level used,
    /// ties broken by global frequency then smaller event id. Returns the
    /// event, its count ratio, and the level used.
    pub fn predict(&self, context: &[EventId]) -> (EventId, f64, usize) {
        let (level, cm) = self.lookup(context);
        let (&event, &count) = cm
            .counts
            .iter()
            .max_by_key(|&(&e, &c)| (c, self.global_count(e), Reverse(e)))
            .expect("count maps are never empty");
        (event, count as f64 / cm.total as f64, level)
    }

    /// Probability of `event` at the level predict would use; 0 if unseen
    /// there.
    pub fn prob_of_event(&self, context: &[EventId], event: EventId) -> f64 {
        let (_, cm) = self.lookup(context);
        cm.counts.get(&event).copied().unwrap_or(0) as f64 / cm.total as f64
    }

    pub fn level_used(&self, context: &[EventId]) -> usize {
        self.lookup(context).0
    }

    /// Serialized form: a versioned header then one row per (level,
    /// context, event, count), sorted for byte-stable output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ngram v1");
        let _ = writeln!(out, "n={}", self.n);
        let _ = writeln!(out, "m={}", self.m);
        for (k, level) in self.levels.iter().enumerate() {
            let mut rows: Vec<(&Vec<EventId>, &CountMap)> = level.iter().collect();
            rows.sort_by(|a, b| a.0.cmp(b.0));
            for (ctx, cm) in rows {
                let key = ctx
                    .iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                let mut events: Vec<(&EventId, &u64)> = cm.counts.iter().collect();
                events.sort_by_key(|(&e, _)| e);
                for (&event, &count) in events {
                    let _ = writeln!(out, "{k}\t{key}\t{event}\t{count}");
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<NgramTable> {
        let mut lines = text.lines();
        let bad = |msg: &str| Error::ModelFormat(format!("ngram model: {msg}"));
        if lines.next() != Some("ngram v1") {
            return Err(bad("missing `ngram v1` header"));
        }
        let field = |line: Option<&str>, name: &str| -> Result<usize> {
            let line = line.ok_or_else(|| bad("truncated header"))?;
            let value = line
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| bad(&format!("expected `{name}=`")))?;
            value
                .parse()
                .map_err(|_| bad(&format!("bad {name} value {value:?}")))
        };
        let n = field(lines.next(), "n")?;
        let m = field(lines.next(), "m")?;
        if n < 2 || m > n - 1 {
            return Err(bad(&format!("invalid geometry n={n} m={m}")));
        }
        let kept: Vec<Vec<usize>> = (0..n).map(|k| kept_positions(n, m, k)).collect();
        let mut levels: Vec<HashMap<Vec<EventId>, CountMap>> = vec![HashMap::new(); n];
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(bad(&format!("row {line:?} is not 4 fields")));
            }
            let k: usize = parts[0].parse().map_err(|_| bad("bad level"))?;
            if k >= n {
                return Err(bad(&format!("level {k} out of range")));
            }
            let ctx: Vec<EventId> = if parts[1].is_empty() {
                Vec::new()
            } else {
                parts[1]
                    .split(',')
                    .map(|p| p.parse().map_err(|_| bad("bad context id")))
                    .collect::<Result<_>>()?
            };
            if ctx.len() != kept[k].len() {
                return Err(bad(&format!("level {k} context has wrong arity")));
            }
            let event: EventId = parts[2].parse().map_err(|_| bad("bad event id"))?;
            let count: u64 = parts[3].parse().map_err(|_| bad("bad count"))?;
            let cm = levels[k].entry(ctx).or_default();
            cm.total += count;
            if cm.counts.insert(event, count).is_some() {
                return Err(bad("duplicate (level, context, event) row"));
            }
        }
        if !levels[0].contains_key(&[] as &[EventId]) {
            return Err(bad("missing global frequency rows"));
        }
        Ok(NgramTable { n, m, levels, kept })
    }
}

impl MaskedPredictor for NgramTable {
    fn distribution(&self, context: &[EventId]) -> Vec<Prediction> {
        let (_, cm) = self.lookup(context);
        let mut entries: Vec<(EventId, u64)> = cm.counts.iter().map(|(&e, &c)| (e, c)).collect();
        entries.sort_by_key(|&(e, c)| (Reverse(c), Reverse(self.global_count(e)), e));
        entries
            .into_iter()
            .map(|(event, count)| Prediction {
                event,
                prob: count as f64 / cm.total as f64,
            })
            .collect()
    }

    fn context_len(&self) -> usize {
        self.n - 1
    }

    fn name(&self) -> &'static str {
        "ngram"
    }
}
