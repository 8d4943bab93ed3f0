//! Self-contained model bundles. A trained predictor is only usable
//! together with the vocabulary it was encoded against and the window
//! geometry it was fit for, so the three travel in one versioned text file
//! along with the split that produced the training set.

use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::corpus::{ParsedSequence, TemplateId};
use crate::error::{Error, Result};
use crate::experiment::{CnnSettings, ModelKind, TrainBudget};
use crate::neural::{calibrate_epochs, train, CnnModel};
use crate::ngram::NgramTable;
use crate::predictor::MaskedPredictor;
use crate::window::{
    encode, split_indices, windows_for_corpus, SplitSpec, Vocabulary, WindowSpec,
};

const BUNDLE_HEADER: &str = "bundle v1";

/// Either trained model behind one door.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Ngram(NgramTable),
    Cnn(Box<CnnModel>),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Ngram(_) => ModelKind::Ngram,
            AnyModel::Cnn(_) => ModelKind::Cnn,
        }
    }

    pub fn as_predictor(&self) -> &(dyn MaskedPredictor + Sync) {
        match self {
            AnyModel::Ngram(t) => t,
            AnyModel::Cnn(m) => m.as_ref(),
        }
    }

    fn window_size(&self) -> usize {
        match self {
            AnyModel::Ngram(t) => t.window_size(),
            AnyModel::Cnn(m) => m.window_size(),
        }
    }

    fn mask_pos(&self) -> usize {
        match self {
            AnyModel::Ngram(t) => t.mask_pos(),
            AnyModel::Cnn(m) => m.mask_pos(),
        }
    }

    fn render(&self) -> String {
        match self {
            AnyModel::Ngram(t) => t.render(),
            AnyModel::Cnn(m) => m.render(),
        }
    }

    fn parse(kind: ModelKind, text: &str) -> Result<AnyModel> {
        match kind {
            ModelKind::Ngram => Ok(AnyModel::Ngram(NgramTable::parse(text)?)),
            ModelKind::Cnn => Ok(AnyModel::Cnn(Box::new(CnnModel::parse(text)?))),
        }
    }
}

/// Everything needed to reproduce predictions: the model, the template
/// order behind the event ids, the window geometry, and the split that
/// selected the training sequences.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: AnyModel,
    pub vocab: Vocabulary,
    pub window: WindowSpec,
    pub split: SplitSpec,
}

impl ModelBundle {
    pub fn new(
        model: AnyModel,
        vocab: Vocabulary,
        window: WindowSpec,
        split: SplitSpec,
    ) -> Result<ModelBundle> {
        let bundle = ModelBundle {
            model,
            vocab,
            window,
            split,
        };
        bundle.check_consistency()?;
        Ok(bundle)
    }

    pub fn predictor(&self) -> &(dyn MaskedPredictor + Sync) {
        self.model.as_predictor()
    }

    fn check_consistency(&self) -> Result<()> {
        if self.model.window_size() != self.window.window_size()
            || self.model.mask_pos() != self.window.mask_pos()
        {
            return Err(Error::Contract(format!(
                "model was fit for window {} mask {}, bundle says window {} mask {}",
                self.model.window_size(),
                self.model.mask_pos(),
                self.window.window_size(),
                self.window.mask_pos()
            )));
        }
        if let AnyModel::Cnn(m) = &self.model {
            if m.vocab_size() != self.vocab.size() {
                return Err(Error::Contract(format!(
                    "model has {} input ids, vocabulary provides {}",
                    m.vocab_size(),
                    self.vocab.size()
                )));
            }
        }
        self.split.validate()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(BUNDLE_HEADER);
        out.push('\n');
        out.push_str(&format!("model={}\n", self.model.kind()));
        out.push_str(&format!("window={}\n", self.window.window_size()));
        out.push_str(&format!("mask={}\n", self.window.mask_pos()));
        out.push_str(&format!("split={}\n", self.split.train_fraction));
        out.push_str(&format!("seed={}\n", self.split.seed));
        out.push_str(&format!("unique={}\n", self.split.unique_only));
        let order = self.vocab.template_order();
        out.push_str(&format!("templates={}\n", order.len()));
        let ids: Vec<String> = order.iter().map(|t| t.to_string()).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
        out.push_str(&self.model.render());
        out
    }

    pub fn parse(text: &str) -> Result<ModelBundle> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::ModelFormat(format!("bundle ends before {what}")))
        };
        let header = next("the header")?;
        if header != BUNDLE_HEADER {
            return Err(Error::ModelFormat(format!(
                "expected {BUNDLE_HEADER:?}, found {header:?}"
            )));
        }
        let field = |line: &str, key: &str| -> Result<String> {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ModelFormat(format!("expected {key}=..., found {line:?}")))?;
            if k != key {
                return Err(Error::ModelFormat(format!(
                    "expected the {key} field, found {k:?}"
                )));
            }
            Ok(v.to_string())
        };
        let kind: ModelKind = field(next("the model field")?, "model")?.parse()?;
        let window: usize = field(next("the window field")?, "window")?
            .parse()
            .map_err(|_| Error::ModelFormat("window is not an integer".into()))?;
        let mask: usize = field(next("the mask field")?, "mask")?
            .parse()
            .map_err(|_| Error::ModelFormat("mask is not an integer".into()))?;
        let split: f64 = field(next("the split field")?, "split")?
            .parse()
            .map_err(|_| Error::ModelFormat("split is not a number".into()))?;
        let seed: u64 = field(next("the seed field")?, "seed")?
            .parse()
            .map_err(|_| Error::ModelFormat("seed is not an integer".into()))?;
        let unique: bool = field(next("the unique field")?, "unique")?
            .parse()
            .map_err(|_| Error::ModelFormat("unique is not a bool".into()))?;
        let n_templates: usize = field(next("the templates field")?, "templates")?
            .parse()
            .map_err(|_| Error::ModelFormat("templates is not an integer".into()))?;
        let id_line = next("the template order")?;
        let order: Vec<TemplateId> = id_line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<u32>()
                    .map(TemplateId)
                    .map_err(|_| Error::ModelFormat(format!("bad template id {tok:?}")))
            })
            .collect::<Result<_>>()?;
        if order.len() != n_templates {
            return Err(Error::ModelFormat(format!(
                "header promises {n_templates} templates, found {}",
                order.len()
            )));
        }
        let model_text: Vec<&str> = lines.collect();
        let model = AnyModel::parse(kind, &model_text.join("\n"))?;
        let wspec = WindowSpec::new(window, mask).map_err(|e| Error::ModelFormat(e.to_string()))?;
        let bundle = ModelBundle::new(
            model,
            Vocabulary::from_template_order(order)?,
            wspec,
            SplitSpec {
                train_fraction: split,
                seed,
                unique_only: unique,
            },
        )
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
        Ok(bundle)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<ModelBundle> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelBundle::parse(&text)
    }
}

/// Byproduct counters from [`train_bundle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    pub n_sequences: usize,
    pub n_normal: usize,
    pub n_train_seq: usize,
    pub n_unique_train_seq: usize,
    pub vocab_size: usize,
    pub n_train_samples: usize,
    pub train_seconds: f64,
    pub epochs_run: usize,
}

/// Split the normal sequences, fit the chosen model on the training side,
/// and package it. The split seed also seeds the model. Mirrors the
/// experiment pipeline but keeps the trained artifact.
pub fn train_bundle(
    sequences: &[ParsedSequence],
    kind: ModelKind,
    window: WindowSpec,
    split: SplitSpec,
    cnn: CnnSettings,
) -> Result<(ModelBundle, TrainSummary)> {
    let normals: Vec<&ParsedSequence> = sequences.iter().filter(|s| s.label.is_normal()).collect();
    let (train_idx, _) = split_indices(normals.len(), &split)?;
    let train_parsed: Vec<&ParsedSequence> = train_idx.iter().map(|&i| normals[i]).collect();
    let mut seen = std::collections::HashSet::new();
    let unique_train: Vec<&ParsedSequence> = train_parsed
        .iter()
        .filter(|s| seen.insert(&s.template_ids))
        .copied()
        .collect();
    let effective: &[&ParsedSequence] = if split.unique_only {
        &unique_train
    } else {
        &train_parsed
    };
    let vocab = Vocabulary::build(effective.iter().copied())?;
    let encoded: Vec<_> = effective.iter().map(|&s| encode(s, &vocab)).collect();
    let samples = windows_for_corpus(&encoded, window, &vocab);

    let started = Instant::now();
    let (model, epochs_run) = match kind {
        ModelKind::Ngram => (
            AnyModel::Ngram(NgramTable::fit(
                &samples,
                window.window_size(),
                window.mask_pos(),
            )?),
            0,
        ),
        ModelKind::Cnn => {
            let mut m = CnnModel::init(vocab.size(), window, cnn.params, split.seed)?;
            let epochs = match cnn.budget {
                TrainBudget::Epochs(k) => k,
                TrainBudget::TimeBudget(b) => {
                    calibrate_epochs(&m, &samples, b, cnn.params.batch_size)?
                }
            };
            train(&mut m, &samples, epochs)?;
            (AnyModel::Cnn(Box::new(m)), epochs)
        }
    };
    let summary = TrainSummary {
        n_sequences: sequences.len(),
        n_normal: normals.len(),
        n_train_seq: train_parsed.len(),
        n_unique_train_seq: unique_train.len(),
        vocab_size: vocab.size(),
        n_train_samples: samples.len(),
        train_seconds: started.elapsed().as_secs_f64(),
        epochs_run,
    };
    Ok((ModelBundle::new(model, vocab, window, split)?, summary))
}
