//! Configuration-grid experiments: one-factor-at-a-time expansion over
//! window/mask/split/unique, parallel execution with per-config seeds, and
//! CSV emission. A failed run becomes an error row; it never aborts a sweep.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;

use crate::corpus::{ParsedSequence, read_parsed_events};
use crate::error::{Error, Result};
use crate::eval::evaluate_accuracy;
use crate::neural::{calibrate_epochs, train, CnnModel, CnnParams};
use crate::ngram::NgramTable;
use crate::predictor::MaskedPredictor;
use crate::window::{
    encode, split_indices, windows_for_corpus, SplitSpec, Vocabulary, WindowSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Ngram,
    Cnn,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Ngram => "ngram",
            ModelKind::Cnn => "cnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelKind> {
        match s {
            "ngram" => Ok(ModelKind::Ngram),
            "cnn" => Ok(ModelKind::Cnn),
            other => Err(Error::Config(format!(
                "unknown model {other:?} (expected ngram or cnn)"
            ))),
        }
    }
}

/// How long to train the neural model: a fixed epoch count or a wall-clock
/// budget converted by a timed calibration epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainBudget {
    Epochs(usize),
    TimeBudget(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnnSettings {
    pub params: CnnParams,
    pub budget: TrainBudget,
}

impl Default for CnnSettings {
    fn default() -> Self {
        CnnSettings {
            params: CnnParams::default(),
            budget: TrainBudget::Epochs(10),
        }
    }
}

/// One point in the configuration grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub model: ModelKind,
    pub window: usize,
    pub mask: usize,
    pub split: f64,
    pub unique: bool,
    pub seed: u64,
    pub cnn: CnnSettings,
}

/// Measured outcome of one configuration. `accuracy` is absent iff `error`
/// explains the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub model: ModelKind,
    pub window: usize,
    pub mask: usize,
    pub split: f64,
    pub unique: bool,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub n_train_seq: usize,
    pub n_unique_train_seq: usize,
    pub n_test_samples: usize,
    pub train_seconds: f64,
    pub epochs_run: usize,
    pub error: Option<String>,
}

impl ResultRow {
    fn from_config(cfg: &ExperimentConfig) -> ResultRow {
        ResultRow {
            dataset: cfg.dataset.clone(),
            model: cfg.model,
            window: cfg.window,
            mask: cfg.mask,
            split: cfg.split,
            unique: cfg.unique,
            seed: cfg.seed,
            accuracy: None,
            n_train_seq: 0,
            n_unique_train_seq: 0,
            n_test_samples: 0,
            train_seconds: 0.0,
            epochs_run: 0,
            error: None,
        }
    }

    /// Copy with the wall-clock column zeroed, for byte-for-byte
    /// reproducibility comparisons.
    pub fn with_zeroed_timing(&self) -> ResultRow {
        ResultRow {
            train_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// A parsed dataset ready for experiments.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub name: String,
    pub sequences: Vec<ParsedSequence>,
}

impl PreparedDataset {
    pub fn new(name: impl Into<String>, sequences: Vec<ParsedSequence>) -> PreparedDataset {
        PreparedDataset {
            name: name.into(),
            sequences,
        }
    }

    /// Load from a parsed-event file; the dataset name defaults to the file
    /// stem.
    pub fn read(path: &Path, name: Option<&str>) -> Result<PreparedDataset> {
        let sequences = read_parsed_events(path)?;
        let name = name.map(str::to_string).unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".to_string())
        });
        Ok(PreparedDataset { name, sequences })
    }
}

fn dedup_parsed<'a>(sequences: &[&'a ParsedSequence]) -> Vec<&'a ParsedSequence> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for &seq in sequences {
        if seen.insert(&seq.template_ids) {
            out.push(seq);
        }
    }
    out
}

fn run_inner(cfg: &ExperimentConfig, data: &PreparedDataset, row: &mut ResultRow) -> Result<()> {
    let wspec = WindowSpec::new(cfg.window, cfg.mask)?;
    let normals: Vec<&ParsedSequence> = data
        .sequences
        .iter()
        .filter(|s| s.label.is_normal())
        .collect();
    let split = SplitSpec {
        train_fraction: cfg.split,
        seed: cfg.seed,
        unique_only: cfg.unique,
    };
    let (train_idx, test_idx) = split_indices(normals.len(), &split)?;
    let train_parsed: Vec<&ParsedSequence> = train_idx.iter().map(|&i| normals[i]).collect();
    row.n_train_seq = train_parsed.len();
    let unique_train = dedup_parsed(&train_parsed);
    row.n_unique_train_seq = unique_train.len();
    let effective: &[&ParsedSequence] = if cfg.unique { &unique_train } else { &train_parsed };

    let vocab = Vocabulary::build(effective.iter().copied())?;
    let train_enc: Vec<_> = effective.iter().map(|&s| encode(s, &vocab)).collect();
    let test_enc: Vec<_> = test_idx.iter().map(|&i| encode(normals[i], &vocab)).collect();
    let train_samples = windows_for_corpus(&train_enc, wspec, &vocab);

    let started = Instant::now();
    let (predictor, epochs_run): (Box<dyn MaskedPredictor + Sync>, usize) = match cfg.model {
        ModelKind::Ngram => (
            Box::new(NgramTable::fit(&train_samples, cfg.window, cfg.mask)?),
            0,
        ),
        ModelKind::Cnn => {
            let mut model = CnnModel::init(vocab.size(), wspec, cfg.cnn.params, cfg.seed)?;
            let epochs = match cfg.cnn.budget {
                TrainBudget::Epochs(k) => k,
                TrainBudget::TimeBudget(b) => {
                    calibrate_epochs(&model, &train_samples, b, cfg.cnn.params.batch_size)?
                }
            };
            train(&mut model, &train_samples, epochs)?;
            (Box::new(model), epochs)
        }
    };
    row.train_seconds = started.elapsed().as_secs_f64();
    row.epochs_run = epochs_run;

    let report = evaluate_accuracy(predictor.as_ref(), &test_enc, wspec, &vocab)?;
    row.accuracy = Some(report.top1_accuracy());
    row.n_test_samples = report.n_samples;
    Ok(())
}

/// Full pipeline for one configuration: split, optional dedup, vocabulary,
/// windows, fit or train, evaluate on the held-out normals. Failures are
/// reported in the row, never raised.
pub fn run_experiment(cfg: &ExperimentConfig, data: &PreparedDataset) -> ResultRow {
    let mut row = ResultRow::from_config(cfg);
    if let Err(e) = run_inner(cfg, data, &mut row) {
        row.accuracy = None;
        row.error = Some(e.to_string());
    }
    row
}

/// Execute configurations in parallel; rows come back in config order
/// regardless of completion order. `workers = 0` uses the default pool.
pub fn run_sweep(
    configs: &[ExperimentConfig],
    data: &PreparedDataset,
    workers: usize,
) -> Result<Vec<ResultRow>> {
    let run = || {
        configs
            .par_iter()
            .map(|cfg| run_experiment(cfg, data))
            .collect::<Vec<_>>()
    };
    if workers == 0 {
        Ok(run())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build a {workers}-thread pool: {e}")))?;
        Ok(pool.install(run))
    }
}

/// The four swept settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knobs {
    pub window: usize,
    pub mask: usize,
    pub split: f64,
    pub unique: bool,
}

/// Per-setting value lists for the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Axes {
    pub window: Vec<usize>,
    pub mask: Vec<usize>,
    pub split: Vec<f64>,
    pub unique: Vec<bool>,
}

/// Grid defaults: window 5, next-event mask, half split, total data.
pub fn default_knobs() -> Knobs {
    Knobs {
        window: 5,
        mask: 0,
        split: 0.5,
        unique: false,
    }
}

/// The standard sweep ranges: window {2,5,10,15,20}, mask {0..4}, split
/// {0.1,0.25,0.5,0.75,0.9}, total vs unique data.
pub fn default_axes() -> Axes {
    Axes {
        window: vec![2, 5, 10, 15, 20],
        mask: vec![0, 1, 2, 3, 4],
        split: vec![0.1, 0.25, 0.5, 0.75, 0.9],
        unique: vec![false, true],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub name: String,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub replicates: usize,
    pub full_factorial: bool,
    pub defaults: Knobs,
    pub axes: Axes,
    pub extras: Vec<Knobs>,
    pub cnn: CnnSettings,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            name: "sweep".to_string(),
            models: vec![ModelKind::Ngram, ModelKind::Cnn],
            seed: 42,
            replicates: 1,
            full_factorial: false,
            defaults: default_knobs(),
            axes: default_axes(),
            extras: Vec::new(),
            cnn: CnnSettings::default(),
        }
    }
}

fn knob_key(k: &Knobs) -> (usize, usize, u64, bool) {
    (k.window, k.mask, k.split.to_bits(), k.unique)
}

/// Expand the grid: one factor varied at a time with the rest at defaults
/// (or the full cross product when `full_factorial`), extras appended,
/// duplicates dropped keeping the first, mask positions that do not fit
/// their window dropped with a warning.
pub fn expand_grid(spec: &SweepSpec, dataset: &str) -> (Vec<ExperimentConfig>, Vec<String>) {
    let d = spec.defaults;
    let mut knob_list: Vec<Knobs> = Vec::new();
    if spec.full_factorial {
        for &window in &spec.axes.window {
            for &mask in &spec.axes.mask {
                for &split in &spec.axes.split {
                    for &unique in &spec.axes.unique {
                        knob_list.push(Knobs {
                            window,
                            mask,
                            split,
                            unique,
                        });
                    }
                }
            }
        }
    } else {
        knob_list.extend(spec.axes.window.iter().map(|&window| Knobs { window, ..d }));
        knob_list.extend(spec.axes.mask.iter().map(|&mask| Knobs { mask, ..d }));
        knob_list.extend(spec.axes.split.iter().map(|&split| Knobs { split, ..d }));
        knob_list.extend(spec.axes.unique.iter().map(|&unique| Knobs { unique, ..d }));
    }
    knob_list.extend(spec.extras.iter().copied());

    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    let mut valid: Vec<Knobs> = Vec::new();
    for k in knob_list {
        if k.mask > k.window.saturating_sub(1) {
            warnings.push(format!(
                "dropping window={} mask={}: the mask does not fit the window",
                k.window, k.mask
            ));
            continue;
        }
        if seen.insert(knob_key(&k)) {
            valid.push(k);
        }
    }

    let mut configs = Vec::new();
    for &model in &spec.models {
        for k in &valid {
            for r in 0..spec.replicates.max(1) {
                configs.push(ExperimentConfig {
                    dataset: dataset.to_string(),
                    model,
                    window: k.window,
                    mask: k.mask,
                    split: k.split,
                    unique: k.unique,
                    seed: spec.seed + r as u64,
                    cnn: spec.cnn,
                });
            }
        }
    }
    (configs, warnings)
}

/// Default settings (window 5, mask 0) against the suggested baseline
/// (window 10, mask second to last), same seed and split for both.
#[derive(Debug, Clone)]
pub struct BaselineComparison {
    pub model: ModelKind,
    pub default_row: ResultRow,
    pub baseline_row: ResultRow,
}

pub fn baseline_vs_default(
    data: &PreparedDataset,
    models: &[ModelKind],
    seed: u64,
    cnn: CnnSettings,
) -> Vec<BaselineComparison> {
    models
        .iter()
        .map(|&model| {
            let mk = |window, mask| ExperimentConfig {
                dataset: data.name.clone(),
                model,
                window,
                mask,
                split: 0.5,
                unique: false,
                seed,
                cnn,
            };
            BaselineComparison {
                model,
                default_row: run_experiment(&mk(5, 0), data),
                baseline_row: run_experiment(&mk(10, 1), data),
            }
        })
        .collect()
}

pub const RESULT_COLUMNS: [&str; 14] = [
    "dataset",
    "model",
    "window",
    "mask",
    "split",
    "unique",
    "seed",
    "accuracy",
    "n_train_seq",
    "n_unique_train_seq",
    "n_test_samples",
    "train_seconds",
    "epochs_run",
    "error",
];

/// Render rows as CSV with the pinned column order.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_COLUMNS).expect("csv to memory");
    for r in rows {
        w.write_record(&[
            r.dataset.clone(),
            r.model.to_string(),
            r.window.to_string(),
            r.mask.to_string(),
            r.split.to_string(),
            r.unique.to_string(),
            r.seed.to_string(),
            r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
            r.n_train_seq.to_string(),
            r.n_unique_train_seq.to_string(),
            r.n_test_samples.to_string(),
            r.train_seconds.to_string(),
            r.epochs_run.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .expect("csv to memory");
    }
    String::from_utf8(w.into_inner().expect("csv to memory")).expect("csv is utf-8")
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    fs::write(path, results_csv(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSpecFile {
    name: Option<String>,
    models: Option<Vec<String>>,
    seed: Option<u64>,
    replicates: Option<usize>,
    full_factorial: Option<bool>,
    defaults: Option<KnobsSection>,
    axes: Option<AxesSection>,
    extra: Option<Vec<KnobsSection>>,
    cnn: Option<CnnSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct KnobsSection {
    window: Option<usize>,
    mask: Option<usize>,
    split: Option<f64>,
    unique: Option<bool>,
}

impl KnobsSection {
    fn over(&self, base: Knobs) -> Knobs {
        Knobs {
            window: self.window.unwrap_or(base.window),
            mask: self.mask.unwrap_or(base.mask),
            split: self.split.unwrap_or(base.split),
            unique: self.unique.unwrap_or(base.unique),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxesSection {
    window: Option<Vec<usize>>,
    mask: Option<Vec<usize>>,
    split: Option<Vec<f64>>,
    unique: Option<Vec<bool>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CnnSection {
    d_emb: Option<usize>,
    n_filters: Option<usize>,
    filter_width: Option<usize>,
    hidden: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    time_budget: Option<f64>,
}

/// Parse a sweep spec. Missing sections fall back to the standard grid.
pub fn parse_sweep_spec(text: &str) -> Result<SweepSpec> {
    let file: SweepSpecFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("sweep spec: {e}")))?;
    let mut spec = SweepSpec::default();
    if let Some(name) = file.name {
        spec.name = name;
    }
    if let Some(models) = file.models {
        if models.is_empty() {
            return Err(Error::Config("sweep spec lists no models".into()));
        }
        spec.models = models
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(seed) = file.seed {
        spec.seed = seed;
    }
    if let Some(replicates) = file.replicates {
        if replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        spec.replicates = replicates;
    }
    if let Some(ff) = file.full_factorial {
        spec.full_factorial = ff;
    }
    if let Some(defaults) = &file.defaults {
        spec.defaults = defaults.over(spec.defaults);
    }
    if let Some(axes) = file.axes {
        if let Some(w) = axes.window {
            spec.axes.window = w;
        }
        if let Some(m) = axes.mask {
            spec.axes.mask = m;
        }
        if let Some(s) = axes.split {
            spec.axes.split = s;
        }
        if let Some(u) = axes.unique {
            spec.axes.unique = u;
        }
        if spec.axes.window.is_empty()
            || spec.axes.mask.is_empty()
            || spec.axes.split.is_empty()
            || spec.axes.unique.is_empty()
        {
            return Err(Error::Config("axis value lists must be nonempty".into()));
        }
    }
    if let Some(extras) = &file.extra {
        spec.extras = extras.iter().map(|e| e.over(spec.defaults)).collect();
    }
    if let Some(cnn) = file.cnn {
        let p = CnnParams::default();
        spec.cnn.params = CnnParams {
            d_emb: cnn.d_emb.unwrap_or(p.d_emb),
            n_filters: cnn.n_filters.unwrap_or(p.n_filters),
            filter_width: cnn.filter_width.unwrap_or(p.filter_width),
            hidden: cnn.hidden.unwrap_or(p.hidden),
            learning_rate: cnn.learning_rate.unwrap_or(p.learning_rate),
            batch_size: cnn.batch_size.unwrap_or(p.batch_size),
        };
        spec.cnn.budget = match (cnn.epochs, cnn.time_budget) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "set exactly one of cnn.epochs and cnn.time_budget".into(),
                ))
            }
            (Some(k), None) => TrainBudget::Epochs(k),
            (None, Some(b)) => TrainBudget::TimeBudget(b),
            (None, None) => spec.cnn.budget,
        };
    }
    Ok(spec)
}

pub fn read_sweep_spec(path: &Path) -> Result<SweepSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sweep_spec(&text)
}
