//! Sequence encoding and masked-window extraction: training vocabulary,
//! train/test split, unique filtering, SoS/EoS padding.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Label, ParsedSequence, TemplateId};
use crate::error::{Error, Result};

/// Dense event id: templates first (0..n_templates), then the reserved ids.
pub type EventId = u32;

/// Bijection between training template ids and dense event ids, plus the
/// three reserved events: start padding, end padding, unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    to_event: HashMap<TemplateId, EventId>,
    to_template: Vec<TemplateId>,
}

impl Vocabulary {
    /// Dense ids in first-occurrence order over the training sequences.
    pub fn build<'a, I>(train: I) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = &'a ParsedSequence>,
    {
        let mut to_event = HashMap::new();
        let mut to_template = Vec::new();
        for seq in train {
            for &tid in &seq.template_ids {
                to_event.entry(tid).or_insert_with(|| {
                    to_template.push(tid);
                    (to_template.len() - 1) as EventId
                });
            }
        }
        if to_template.is_empty() {
            return Err(Error::EmptyInput(
                "training corpus has no events; cannot build a vocabulary".into(),
            ));
        }
        Ok(Vocabulary {
            to_event,
            to_template,
        })
    }

    /// Rebuild from the template-id list in event-id order (deserialization).
    pub fn from_template_order(order: Vec<TemplateId>) -> Result<Vocabulary> {
        let mut to_event = HashMap::new();
        for (i, &tid) in order.iter().enumerate() {
            if to_event.insert(tid, i as EventId).is_some() {
                return Err(Error::ModelFormat(format!(
                    "duplicate template id {tid} in vocabulary"
                )));
            }
        }
        if order.is_empty() {
            return Err(Error::ModelFormat("empty vocabulary".into()));
        }
        Ok(Vocabulary {
            to_event,
            to_template: order,
        })
    }

    pub fn n_templates(&self) -> usize {
        self.to_template.len()
    }

    /// Total event ids including the reserved three.
    pub fn size(&self) -> usize {
        self.to_template.len() + 3
    }

    pub fn pad_sos(&self) -> EventId {
        self.to_template.len() as EventId
    }

    pub fn pad_eos(&self) -> EventId {
        self.to_template.len() as EventId + 1
    }

    pub fn unk(&self) -> EventId {
        self.to_template.len() as EventId + 2
    }

    pub fn event_for(&self, template: TemplateId) -> Option<EventId> {
        self.to_event.get(&template).copied()
    }

    pub fn template_for(&self, event: EventId) -> Option<TemplateId> {
        self.to_template.get(event as usize).copied()
    }

    /// Template ids in event-id order (serialization).
    pub fn template_order(&self) -> &[TemplateId] {
        &self.to_template
    }
}

/// One execution unit as encoded events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSequence {
    pub seq_id: String,
    pub events: Vec<EventId>,
    pub label: Label,
}

/// Map template ids through the vocabulary; unseen templates become UNK.
pub fn encode(seq: &ParsedSequence, vocab: &Vocabulary) -> EventSequence {
    let events = seq
        .template_ids
        .iter()
        .map(|&tid| vocab.event_for(tid).unwrap_or_else(|| vocab.unk()))
        .collect();
    EventSequence {
        seq_id: seq.seq_id.clone(),
        events,
        label: seq.label,
    }
}

/// Train/test split parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub unique_only: bool,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must be in (0,1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Round half up: the train-side size for fraction `p` over `n` sequences.
pub fn split_size(p: f64, n: usize) -> usize {
    (p * n as f64 + 0.5).floor() as usize
}

/// Seeded index permutation split. Returned index lists are sorted
/// ascending, so each side preserves corpus order.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let k = split_size(spec.train_fraction, n);
    if k == 0 || k == n {
        return Err(Error::DegenerateSplit(format!(
            "train fraction {} of {} sequences leaves {} for training",
            spec.train_fraction, n, k
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    idx.shuffle(&mut rng);
    let mut train: Vec<usize> = idx[..k].to_vec();
    let mut test: Vec<usize> = idx[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Split normal sequences into train and held-out test sets. Anomalous
/// sequences must be filtered out beforehand; they are scoring targets, not
/// training or accuracy material.
pub fn split_train_test(
    sequences: &[EventSequence],
    spec: &SplitSpec,
) -> Result<(Vec<EventSequence>, Vec<EventSequence>)> {
    if let Some(seq) = sequences.iter().find(|s| !s.label.is_normal()) {
        return Err(Error::Contract(format!(
            "split_train_test received anomalous sequence {:?}",
            seq.seq_id
        )));
    }
    let (train_idx, test_idx) = split_indices(sequences.len(), spec)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| sequences[i].clone()).collect();
    Ok((pick(&train_idx), pick(&test_idx)))
}

pub fn partition_by_label(sequences: Vec<EventSequence>) -> (Vec<EventSequence>, Vec<EventSequence>) {
    sequences.into_iter().partition(|s| s.label.is_normal())
}

/// Keep the first occurrence of each distinct event list, preserving order.
pub fn dedup_sequences(sequences: &[EventSequence]) -> Vec<EventSequence> {
    let mut seen: HashSet<&[EventId]> = HashSet::new();
    let mut out = Vec::new();
    for seq in sequences {
        if seen.insert(&seq.events) {
            out.push(seq.clone());
        }
    }
    out
}

/// Window geometry: `n` events per window including the masked slot, mask
/// at distance `m` from the window's last position (m = 0 predicts the next
/// event from the preceding n−1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    n: usize,
    m: usize,
}

impl WindowSpec {
    pub fn new(window_size: usize, mask_pos: usize) -> Result<WindowSpec> {
        if window_size < 2 {
            return Err(Error::Config(format!(
                "window size must be >= 2, got {window_size}"
            )));
        }
        if mask_pos > window_size - 1 {
            return Err(Error::Config(format!(
                "mask position {mask_pos} does not fit a window of {window_size}"
            )));
        }
        Ok(WindowSpec {
            n: window_size,
            m: mask_pos,
        })
    }

    pub fn window_size(&self) -> usize {
        self.n
    }

    pub fn mask_pos(&self) -> usize {
        self.m
    }

    pub fn context_len(&self) -> usize {
        self.n - 1
    }
}

/// One fixed-length context with its masked target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSample {
    pub seq_id: Arc<str>,
    /// Target index within the sequence; `t = L` is the EoS slot.
    pub t: usize,
    pub context: Vec<EventId>,
    pub target: EventId,
    pub mask_pos: usize,
}

impl MaskedSample {
    pub fn window_size(&self) -> usize {
        self.context.len() + 1
    }
}

/// Emit one sample per target index t in [0, L]. The window covers indices
/// t−(n−1−m) ..= t+m; positions below 0 read SoS, positions at or beyond L
/// read EoS; the target at t = L is EoS itself.
pub fn pad_and_window(seq: &EventSequence, spec: WindowSpec, vocab: &Vocabulary) -> Vec<MaskedSample> {
    let l = seq.events.len();
    let seq_id: Arc<str> = Arc::from(seq.seq_id.as_str());
    let at = |i: isize| -> EventId {
        if i < 0 {
            vocab.pad_sos()
        } else if i as usize >= l {
            vocab.pad_eos()
        } else {
            seq.events[i as usize]
        }
    };
    let left = (spec.n - 1 - spec.m) as isize;
    let right = spec.m as isize;
    let mut samples = Vec::with_capacity(l + 1);
    for t in 0..=l {
        let ti = t as isize;
        let mut context = Vec::with_capacity(spec.n - 1);
        for i in (ti - left)..=(ti + right) {
            if i != ti {
                context.push(at(i));
            }
        }
        samples.push(MaskedSample {
            seq_id: Arc::clone(&seq_id),
            t,
            context,
            target: at(ti),
            mask_pos: spec.m,
        });
    }
    samples
}

/// Windows for a whole corpus, sequence order preserved.
pub fn windows_for_corpus(
    sequences: &[EventSequence],
    spec: WindowSpec,
    vocab: &Vocabulary,
) -> Vec<MaskedSample> {
    sequences
        .iter()
        .flat_map(|s| pad_and_window(s, spec, vocab))
        .collect()
}

/// Debug dump: `seq_id<TAB>t<TAB>context ids comma-separated<TAB>target`.
pub fn render_samples(samples: &[MaskedSample]) -> String {
    let mut out = String::new();
    for s in samples {
        let ctx = s
            .context
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(out, "{}\t{}\t{}\t{}", s.seq_id, s.t, ctx, s.target);
    }
    out
}

pub fn write_samples(path: &Path, samples: &[MaskedSample]) -> Result<()> {
    fs::write(path, render_samples(samples)).map_err(|e| Error::io(path, e))
}
