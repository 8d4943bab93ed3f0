//! Log anomaly detection through masked event prediction.
//!
//! The pipeline: raw logs are parsed into event templates ([`drain`]),
//! grouped into per-identifier sequences ([`ingest`]), encoded and cut into
//! fixed-size windows with one masked slot ([`window`]), and a predictor
//! (counting [`ngram`] or convolutional [`neural`]) learns to fill the
//! mask from normal runs only. At inspection time the predictor's accuracy
//! summarizes model quality ([`eval`]) and per-event prediction failures
//! point at suspicious log lines. [`experiment`] sweeps the window, mask,
//! split and deduplication settings over a dataset and tabulates the
//! results; [`synth`] makes Markov corpora with a known best achievable
//! accuracy for end-to-end checks.
//!
//! Every run is deterministic given its seeds: all randomness flows through
//! seeded ChaCha streams, ties break by fixed total orders, and parallel
//! reductions only use order-free arithmetic.

pub mod corpus;
pub mod drain;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod ingest;
pub mod model_store;
pub mod neural;
pub mod ngram;
pub mod predictor;
pub mod seeds;
pub mod synth;
pub mod window;

pub use corpus::{Label, ParsedSequence, TemplateId};
pub use error::{Error, Result};
pub use eval::{evaluate_accuracy, score_sequence, topk_suspicious, EvalReport, EventScore};
pub use experiment::{
    expand_grid, run_experiment, run_sweep, ExperimentConfig, ModelKind, PreparedDataset,
    ResultRow, SweepSpec,
};
pub use model_store::{train_bundle, AnyModel, ModelBundle, TrainSummary};
pub use neural::{CnnModel, CnnParams};
pub use ngram::NgramTable;
pub use predictor::{MaskedPredictor, Prediction};
pub use window::{EventId, EventSequence, MaskedSample, SplitSpec, Vocabulary, WindowSpec};
