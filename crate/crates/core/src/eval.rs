//! Held-out accuracy evaluation and per-event suspiciousness scoring.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::predictor::MaskedPredictor;
use crate::window::{pad_and_window, EventSequence, EventId, Vocabulary, WindowSpec};

/// Aggregate masked-prediction quality over a test corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalReport {
    pub n_samples: usize,
    pub hits_top1: usize,
    pub hits_top3: usize,
    pub hits_top5: usize,
    /// Samples whose target was outside the training vocabulary; always
    /// misses.
    pub unk_target_count: usize,
}

impl EvalReport {
    pub fn top1_accuracy(&self) -> f64 {
        self.hits_top1 as f64 / self.n_samples as f64
    }

    pub fn top3_accuracy(&self) -> f64 {
        self.hits_top3 as f64 / self.n_samples as f64
    }

    pub fn top5_accuracy(&self) -> f64 {
        self.hits_top5 as f64 / self.n_samples as f64
    }

    fn add(mut self, other: EvalReport) -> EvalReport {
        self.n_samples += other.n_samples;
        self.hits_top1 += other.hits_top1;
        self.hits_top3 += other.hits_top3;
        self.hits_top5 += other.hits_top5;
        self.unk_target_count += other.unk_target_count;
        self
    }

    /// Key-value report file body.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_samples={}", self.n_samples);
        let _ = writeln!(out, "top1_accuracy={}", self.top1_accuracy());
        let _ = writeln!(out, "top3_accuracy={}", self.top3_accuracy());
        let _ = writeln!(out, "top5_accuracy={}", self.top5_accuracy());
        let _ = writeln!(out, "unk_target_count={}", self.unk_target_count);
        out
    }
}

fn eval_one(
    predictor: &(impl MaskedPredictor + Sync + ?Sized),
    seq: &EventSequence,
    spec: WindowSpec,
    vocab: &Vocabulary,
) -> EvalReport {
    let mut report = EvalReport::default();
    for sample in pad_and_window(seq, spec, vocab) {
        report.n_samples += 1;
        if sample.target == vocab.unk() {
            report.unk_target_count += 1;
            continue;
        }
        let dist = predictor.distribution(&sample.context);
        if let Some(pos) = dist.iter().position(|p| p.event == sample.target) {
            if pos == 0 {
                report.hits_top1 += 1;
            }
            if pos < 3 {
                report.hits_top3 += 1;
            }
            if pos < 5 {
                report.hits_top5 += 1;
            }
        }
    }
    report
}

/// Top-1/3/5 accuracy over every masked sample of the test sequences.
/// Callers pass held-out normal sequences; anomalous sequences belong to
/// `score_sequence`. Hit counts reduce by integer addition, so the parallel
/// evaluation is exactly reproducible.
pub fn evaluate_accuracy<P>(
    predictor: &P,
    test: &[EventSequence],
    spec: WindowSpec,
    vocab: &Vocabulary,
) -> Result<EvalReport>
where
    P: MaskedPredictor + Sync + ?Sized,
{
    if test.is_empty() {
        return Err(Error::EmptyInput("empty test set".into()));
    }
    if predictor.context_len() != spec.context_len() {
        return Err(Error::Contract(format!(
            "predictor expects a context of {}, window spec provides {}",
            predictor.context_len(),
            spec.context_len()
        )));
    }
    Ok(test
        .par_iter()
        .map(|seq| eval_one(predictor, seq, spec, vocab))
        .reduce(EvalReport::default, EvalReport::add))
}

/// One scored event position.
#[derive(Debug, Clone, PartialEq)]
pub struct EventScore {
    pub seq_id: String,
    pub t: usize,
    pub actual: EventId,
    pub predicted: EventId,
    pub p_actual: f64,
    /// 1 − p_actual: high values flag anomaly candidates.
    pub suspiciousness: f64,
    /// 1-based position of the actual event in the model's ranked
    /// distribution; events absent from it rank one past the end.
    pub rank: usize,
}

/// Score every target position of one sequence against the predictor's
/// distribution.
pub fn score_sequence<P>(
    predictor: &P,
    seq: &EventSequence,
    spec: WindowSpec,
    vocab: &Vocabulary,
) -> Result<Vec<EventScore>>
where
    P: MaskedPredictor + ?Sized,
{
    if predictor.context_len() != spec.context_len() {
        return Err(Error::Contract(format!(
            "predictor expects a context of {}, window spec provides {}",
            predictor.context_len(),
            spec.context_len()
        )));
    }
    let mut scores = Vec::with_capacity(seq.events.len() + 1);
    for sample in pad_and_window(seq, spec, vocab) {
        let dist = predictor.distribution(&sample.context);
        let pos = dist.iter().position(|p| p.event == sample.target);
        let p_actual = pos.map_or(0.0, |i| dist[i].prob);
        scores.push(EventScore {
            seq_id: seq.seq_id.clone(),
            t: sample.t,
            actual: sample.target,
            predicted: dist[0].event,
            p_actual,
            suspiciousness: 1.0 - p_actual,
            rank: pos.map_or(dist.len() + 1, |i| i + 1),
        });
    }
    Ok(scores)
}

/// The k most suspicious scores: suspiciousness descending, ties by
/// (seq_id, t) ascending. k beyond the input returns everything.
pub fn topk_suspicious(scores: &[EventScore], k: usize) -> Vec<EventScore> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| {
        b.suspiciousness
            .total_cmp(&a.suspiciousness)
            .then_with(|| a.seq_id.cmp(&b.seq_id))
            .then(a.t.cmp(&b.t))
    });
    sorted.truncate(k);
    sorted
}

/// Scores file: `seq_id<TAB>t<TAB>actual<TAB>predicted<TAB>p_actual<TAB>
/// suspiciousness<TAB>rank`.
pub fn render_scores(scores: &[EventScore]) -> String {
    let mut out = String::new();
    for s in scores {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.seq_id, s.t, s.actual, s.predicted, s.p_actual, s.suspiciousness, s.rank
        );
    }
    out
}

pub fn write_scores(path: &Path, scores: &[EventScore]) -> Result<()> {
    fs::write(path, render_scores(scores)).map_err(|e| Error::io(path, e))
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    fs::write(path, report.render()).map_err(|e| Error::io(path, e))
}
