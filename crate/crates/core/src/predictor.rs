//! Common interface for masked-event predictors.

use crate::window::EventId;

/// One entry of a model's ranked output distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub event: EventId,
    pub prob: f64,
}

/// A trained model answering masked-window queries. Implementations must be
/// deterministic: the distribution is totally ordered (probability
/// descending, model-specific tie rules) and stable across calls.
pub trait MaskedPredictor {
    /// Ranked distribution for a context of exactly `context_len` events.
    /// N-Gram models list only events seen at the backoff level used;
    /// neural models list the whole vocabulary.
    fn distribution(&self, context: &[EventId]) -> Vec<Prediction>;

    fn context_len(&self) -> usize;

    fn name(&self) -> &'static str;

    /// Best prediction: the distribution's first entry.
    fn predict_one(&self, context: &[EventId]) -> Prediction {
        self.distribution(context)[0]
    }

    /// Probability the model assigns to `event`; 0 when the event is absent
    /// from the distribution.
    fn prob_of(&self, context: &[EventId], event: EventId) -> f64 {
        self.distribution(context)
            .iter()
            .find(|p| p.event == event)
            .map_or(0.0, |p| p.prob)
    }
}
