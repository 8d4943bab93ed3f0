//! Synthetic order-k Markov corpus generator with a known transition table,
//! the desk-scale stand-in for the huge public datasets. The true table
//! yields a Bayes-optimal accuracy oracle for acceptance checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Label, ParsedSequence, TemplateId};
use crate::error::{Error, Result};
use crate::seeds::{fnv1a, mix_seed};

/// Generator parameters. Template ids run 1..=vocab; id 0 stands for the
/// start-of-sequence state in transition contexts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub vocab: u32,
    pub order: usize,
    pub sequences: usize,
    pub seed: u64,
    /// Probability mass of the context's single dominant successor.
    pub dominant_prob: f64,
    /// Probability of ending the sequence at each eligible step.
    pub end_prob: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl SynthSpec {
    pub fn new(vocab: u32, order: usize, sequences: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            vocab,
            order,
            sequences,
            seed,
            dominant_prob: 0.7,
            end_prob: 0.05,
            min_len: 1,
            max_len: 200,
        }
    }

    fn others_share(&self) -> f64 {
        (1.0 - self.dominant_prob - self.end_prob) / (self.vocab - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.vocab < 2 {
            return bad(format!("synthetic vocabulary must be >= 2, got {}", self.vocab));
        }
        if self.order == 0 {
            return bad("markov order must be >= 1".into());
        }
        if self.sequences == 0 {
            return bad("need at least one sequence".into());
        }
        if !(self.dominant_prob > 0.0 && self.dominant_prob <= 1.0) {
            return bad(format!("dominant_prob {} outside (0,1]", self.dominant_prob));
        }
        if !(self.end_prob >= 0.0 && self.end_prob < 1.0) {
            return bad(format!("end_prob {} outside [0,1)", self.end_prob));
        }
        if self.dominant_prob + self.end_prob > 1.0 {
            return bad("dominant_prob + end_prob exceed 1".into());
        }
        // The Bayes oracle assumes the dominant event is the strict argmax
        // of every transition row.
        if self.dominant_prob <= self.others_share() || self.dominant_prob <= self.end_prob {
            return bad("dominant_prob must strictly dominate the other outcomes".into());
        }
        if self.max_len < 1 || self.max_len < self.min_len {
            return bad(format!(
                "length bounds [{}, {}] are invalid",
                self.min_len, self.max_len
            ));
        }
        Ok(())
    }
}

/// The dominant successor of a context (last `order` template ids, 0 for
/// pre-start slots); lazily defined by a stable hash so the full table
/// never materializes.
pub fn dominant_event(spec: &SynthSpec, ctx: &[u32]) -> u32 {
    debug_assert_eq!(ctx.len(), spec.order);
    1 + (fnv1a(spec.seed, ctx) % spec.vocab as u64) as u32
}

enum SynthSymbol {
    Event(u32),
    End,
}

/// The id of the `idx`-th non-dominant event, ascending.
fn nth_other(spec: &SynthSpec, dominant: u32, idx: usize) -> u32 {
    let idx = idx.min(spec.vocab as usize - 2);
    let id = idx as u32 + 1;
    if id >= dominant {
        id + 1
    } else {
        id
    }
}

fn sample_next(
    spec: &SynthSpec,
    ctx: &[u32],
    rng: &mut ChaCha8Rng,
    allow_end: bool,
) -> SynthSymbol {
    let dominant = dominant_event(spec, ctx);
    let u: f64 = rng.random_range(0.0..1.0);
    // Row layout: dominant mass first, End next (when allowed), then the
    // remaining events ascending. Suppressing End renormalizes the rest.
    let renorm = if allow_end { 1.0 } else { 1.0 - spec.end_prob };
    let d = spec.dominant_prob / renorm;
    if u < d {
        return SynthSymbol::Event(dominant);
    }
    let mut rest = u - d;
    if allow_end {
        if rest < spec.end_prob {
            return SynthSymbol::End;
        }
        rest -= spec.end_prob;
    }
    let share = spec.others_share() / renorm;
    if share <= 0.0 {
        return SynthSymbol::Event(dominant);
    }
    SynthSymbol::Event(nth_other(spec, dominant, (rest / share) as usize))
}

/// Generate the corpus. Each sequence has its own derived RNG stream, so
/// corpora are reproducible and order-independent.
pub fn generate(spec: &SynthSpec) -> Result<Vec<ParsedSequence>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.sequences);
    for i in 0..spec.sequences {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, i as u64));
        let mut ctx: Vec<u32> = vec![0; spec.order];
        let mut template_ids = Vec::new();
        while template_ids.len() < spec.max_len {
            let allow_end = template_ids.len() >= spec.min_len;
            match sample_next(spec, &ctx, &mut rng, allow_end) {
                SynthSymbol::End => break,
                SynthSymbol::Event(id) => {
                    template_ids.push(TemplateId(id));
                    ctx.rotate_left(1);
                    *ctx.last_mut().unwrap() = id;
                }
            }
        }
        out.push(ParsedSequence {
            seq_id: format!("s{i:05}"),
            label: Label::Normal,
            template_ids,
        });
    }
    Ok(out)
}

/// Accuracy of the Bayes-optimal predictor (argmax of the true transition
/// row) over the given sequences, counted exactly like the evaluation
/// harness: one prediction per target index including the end-of-sequence
/// slot, which the oracle always misses since End never dominates a row.
pub fn bayes_accuracy(spec: &SynthSpec, sequences: &[ParsedSequence]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for seq in sequences {
        let mut ctx: Vec<u32> = vec![0; spec.order];
        for tid in &seq.template_ids {
            total += 1;
            if dominant_event(spec, &ctx) == tid.0 {
                hits += 1;
            }
            ctx.rotate_left(1);
            *ctx.last_mut().unwrap() = tid.0;
        }
        total += 1; // the EoS slot
    }
    hits as f64 / total as f64
}
