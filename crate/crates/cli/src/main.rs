//! `logmask`: parse logs, train masked-event predictors, evaluate, score,
//! and sweep setting grids. Output artifacts are files; standard output is
//! line-oriented key=value. Exit codes: 0 success, 1 degraded (some sweep
//! rows errored), 2 usage or input error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use logmask_core::corpus::{read_parsed_events, write_parsed_events, ParsedSequence};
use logmask_core::drain::write_templates;
use logmask_core::error::{Error, Result};
use logmask_core::eval::{
    evaluate_accuracy, score_sequence, topk_suspicious, write_report, write_scores, EventScore,
};
use logmask_core::experiment::{
    expand_grid, read_sweep_spec, run_sweep, write_results_csv, CnnSettings, ModelKind,
    PreparedDataset, ResultRow, SweepSpec, TrainBudget,
};
use logmask_core::ingest::{
    group_sequences, load_raw_log, parse_grouped, read_loader_config, render_grouped_summary,
    LoaderConfig,
};
use logmask_core::model_store::{train_bundle, ModelBundle};
use logmask_core::synth::{bayes_accuracy, generate, SynthSpec};
use logmask_core::window::{
    encode, split_indices, windows_for_corpus, write_samples, EventId, EventSequence, SplitSpec,
    Vocabulary, WindowSpec,
};

#[derive(Parser)]
#[command(
    name = "logmask",
    version,
    about = "Log anomaly detection through masked event prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw log into event templates and per-sequence event ids
    Parse(ParseArgs),
    /// Cut parsed sequences into masked windows (inspection aid)
    Prep(PrepArgs),
    /// Fit a predictor on the training split and save it as a bundle
    Train(TrainArgs),
    /// Measure masked-prediction accuracy of a saved model
    Eval(EvalArgs),
    /// Rank events of a log by suspiciousness under a saved model
    Score(ScoreArgs),
    /// Run a configuration grid and tabulate the results as CSV
    Sweep(SweepArgs),
    /// Generate a synthetic Markov corpus with a known accuracy oracle
    GenSynth(GenSynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ngram,
    Cnn,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> ModelKind {
        match m {
            ModelArg::Ngram => ModelKind::Ngram,
            ModelArg::Cnn => ModelKind::Cnn,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    /// Held-out sequences under the bundle's recorded split
    Test,
    /// The training side of that split
    Train,
    /// Every normal sequence in the input
    All,
}

#[derive(Args)]
struct ParseArgs {
    /// Raw log file
    #[arg(long)]
    input: PathBuf,
    /// Loader config (TOML); without it the file is one normal sequence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output: parsed events, one sequence per line
    #[arg(long)]
    out_events: PathBuf,
    /// Output: template table
    #[arg(long)]
    out_templates: PathBuf,
    /// Output: per-sequence record counts
    #[arg(long)]
    out_groups: Option<PathBuf>,
}

#[derive(Args)]
struct PrepArgs {
    /// Parsed-event file
    #[arg(long)]
    input: PathBuf,
    /// Window size n (the masked slot included)
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Mask distance m from the last window event (0 = next-event)
    #[arg(long, default_value_t = 0)]
    mask_position: usize,
    /// Output: one masked sample per line
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CnnArgs {
    /// Embedding width (cnn)
    #[arg(long)]
    d_emb: Option<usize>,
    /// Convolution filter count (cnn)
    #[arg(long)]
    n_filters: Option<usize>,
    /// Convolution filter width (cnn)
    #[arg(long)]
    filter_width: Option<usize>,
    /// Hidden dense layer width (cnn)
    #[arg(long)]
    hidden: Option<usize>,
    /// Adam learning rate (cnn)
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Mini-batch size (cnn)
    #[arg(long)]
    batch_size: Option<usize>,
    /// Train for a fixed number of epochs (cnn)
    #[arg(long, conflicts_with = "time_budget")]
    epochs: Option<usize>,
    /// Derive the epoch count from a wall-clock budget in seconds (cnn)
    #[arg(long)]
    time_budget: Option<f64>,
}

impl CnnArgs {
    fn settings(&self) -> CnnSettings {
        let mut s = CnnSettings::default();
        if let Some(v) = self.d_emb {
            s.params.d_emb = v;
        }
        if let Some(v) = self.n_filters {
            s.params.n_filters = v;
        }
        if let Some(v) = self.filter_width {
            s.params.filter_width = v;
        }
        if let Some(v) = self.hidden {
            s.params.hidden = v;
        }
        if let Some(v) = self.learning_rate {
            s.params.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            s.params.batch_size = v;
        }
        s.budget = match (self.epochs, self.time_budget) {
            (Some(k), _) => TrainBudget::Epochs(k),
            (None, Some(b)) => TrainBudget::TimeBudget(b),
            (None, None) => s.budget,
        };
        s
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Parsed-event file
    #[arg(long)]
    input: PathBuf,
    /// Predictor to fit
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Window size n (the masked slot included)
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Mask distance m from the last window event (0 = next-event)
    #[arg(long, default_value_t = 0)]
    mask_position: usize,
    /// Training fraction of the normal sequences
    #[arg(long, default_value_t = 0.5)]
    split: f64,
    /// Seed for the split shuffle and the model initialization
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Drop duplicate training sequences before fitting
    #[arg(long)]
    unique: bool,
    /// Output: model bundle
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cnn: CnnArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Model bundle written by `train`
    #[arg(long)]
    model: PathBuf,
    /// Parsed-event file
    #[arg(long)]
    input: PathBuf,
    /// Which normal sequences to evaluate
    #[arg(long, value_enum, default_value_t = ScopeArg::Test)]
    scope: ScopeArg,
    /// Optional report file (same key=value lines as standard output)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Model bundle written by `train`
    #[arg(long)]
    model: PathBuf,
    /// Parsed-event file
    #[arg(long)]
    input: PathBuf,
    /// How many top-suspicious events to list
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Score only sequences labeled anomalous
    #[arg(long)]
    only_anomalous: bool,
    /// Optional per-event score table
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Parsed-event file
    #[arg(long)]
    input: PathBuf,
    /// Sweep spec (TOML); without it the standard grid runs
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 picks the default pool
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Dataset name for the CSV; defaults to the input file stem
    #[arg(long)]
    name: Option<String>,
    /// Keep wall-clock training times in the CSV (off by default so reruns
    /// are byte-identical)
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct GenSynthArgs {
    /// Distinct event templates
    #[arg(long, default_value_t = 10)]
    vocab: u32,
    /// Markov order of the transition table
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// Number of sequences
    #[arg(long, default_value_t = 1000)]
    sequences: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Probability of the dominant successor
    #[arg(long, default_value_t = 0.7)]
    dominant_prob: f64,
    /// Probability of ending a sequence at each eligible step
    #[arg(long, default_value_t = 0.05)]
    end_prob: f64,
    #[arg(long, default_value_t = 1)]
    min_len: usize,
    #[arg(long, default_value_t = 200)]
    max_len: usize,
    /// Output: parsed-event file
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Parse(args) => cmd_parse(args),
        Command::Prep(args) => cmd_prep(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Score(args) => cmd_score(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::GenSynth(args) => cmd_gen_synth(args),
    }
}

fn cmd_parse(args: ParseArgs) -> Result<u8> {
    let cfg = match &args.config {
        Some(path) => read_loader_config(path)?,
        None => LoaderConfig::per_file_all_normal(),
    };
    let loaded = load_raw_log(&args.input, &cfg)?;
    let grouped = group_sequences(&loaded.records, &cfg);
    let (tree, parsed) = parse_grouped(&grouped.sequences, &cfg.parser)?;
    write_templates(&args.out_templates, &tree.export_templates())?;
    write_parsed_events(&args.out_events, &parsed)?;
    if let Some(path) = &args.out_groups {
        fs::write(path, render_grouped_summary(&grouped.sequences))
            .map_err(|e| Error::io(path, e))?;
    }
    println!("lines={}", loaded.stats.lines);
    println!("records={}", loaded.stats.records);
    println!("unmatched_header={}", loaded.stats.unmatched_header);
    println!("skipped_empty={}", loaded.stats.skipped_empty);
    println!("sequences={}", grouped.sequences.len());
    println!("rejected_records={}", grouped.rejected.len());
    println!("templates={}", tree.template_count());
    Ok(0)
}

fn cmd_prep(args: PrepArgs) -> Result<u8> {
    let seqs = read_parsed_events(&args.input)?;
    let spec = WindowSpec::new(args.window, args.mask_position)?;
    let vocab = Vocabulary::build(&seqs)?;
    let encoded: Vec<EventSequence> = seqs.iter().map(|s| encode(s, &vocab)).collect();
    let samples = windows_for_corpus(&encoded, spec, &vocab);
    write_samples(&args.out, &samples)?;
    println!("sequences={}", seqs.len());
    println!("vocab_size={}", vocab.size());
    println!("samples={}", samples.len());
    Ok(0)
}

fn cmd_train(args: TrainArgs) -> Result<u8> {
    let seqs = read_parsed_events(&args.input)?;
    let window = WindowSpec::new(args.window, args.mask_position)?;
    let split = SplitSpec {
        train_fraction: args.split,
        seed: args.seed,
        unique_only: args.unique,
    };
    let kind: ModelKind = args.model.into();
    let (bundle, summary) = train_bundle(&seqs, kind, window, split, args.cnn.settings())?;
    bundle.write(&args.out)?;
    println!("model={kind}");
    println!("window={}", args.window);
    println!("mask_position={}", args.mask_position);
    println!("split={}", args.split);
    println!("unique={}", args.unique);
    println!("seed={}", args.seed);
    println!("n_sequences={}", summary.n_sequences);
    println!("n_normal={}", summary.n_normal);
    println!("n_train_seq={}", summary.n_train_seq);
    println!("n_unique_train_seq={}", summary.n_unique_train_seq);
    println!("vocab_size={}", summary.vocab_size);
    println!("n_train_samples={}", summary.n_train_samples);
    println!("train_seconds={}", summary.train_seconds);
    println!("epochs_run={}", summary.epochs_run);
    Ok(0)
}

fn select_scope<'a>(
    normals: &[&'a ParsedSequence],
    split: &SplitSpec,
    scope: ScopeArg,
) -> Result<Vec<&'a ParsedSequence>> {
    let idx = match scope {
        ScopeArg::All => (0..normals.len()).collect::<Vec<_>>(),
        ScopeArg::Test => split_indices(normals.len(), split)?.1,
        ScopeArg::Train => split_indices(normals.len(), split)?.0,
    };
    Ok(idx.into_iter().map(|i| normals[i]).collect())
}

fn cmd_eval(args: EvalArgs) -> Result<u8> {
    let bundle = ModelBundle::read(&args.model)?;
    let seqs = read_parsed_events(&args.input)?;
    let normals: Vec<&ParsedSequence> = seqs.iter().filter(|s| s.label.is_normal()).collect();
    let chosen = select_scope(&normals, &bundle.split, args.scope)?;
    let encoded: Vec<EventSequence> = chosen
        .iter()
        .map(|&s| encode(s, &bundle.vocab))
        .collect();
    let report = evaluate_accuracy(bundle.predictor(), &encoded, bundle.window, &bundle.vocab)?;
    println!("n_sequences={}", encoded.len());
    print!("{}", report.render());
    if let Some(path) = &args.out {
        write_report(path, &report)?;
    }
    Ok(0)
}

fn event_name(vocab: &Vocabulary, e: EventId) -> String {
    if let Some(t) = vocab.template_for(e) {
        t.to_string()
    } else if e == vocab.pad_sos() {
        "<sos>".to_string()
    } else if e == vocab.pad_eos() {
        "<eos>".to_string()
    } else {
        "<unk>".to_string()
    }
}

fn cmd_score(args: ScoreArgs) -> Result<u8> {
    let bundle = ModelBundle::read(&args.model)?;
    let seqs = read_parsed_events(&args.input)?;
    let mut scores: Vec<EventScore> = Vec::new();
    let mut scored_sequences = 0usize;
    for seq in &seqs {
        if args.only_anomalous && seq.label.is_normal() {
            continue;
        }
        let encoded = encode(seq, &bundle.vocab);
        scores.extend(score_sequence(
            bundle.predictor(),
            &encoded,
            bundle.window,
            &bundle.vocab,
        )?);
        scored_sequences += 1;
    }
    if let Some(path) = &args.out {
        write_scores(path, &scores)?;
    }
    println!("scored_sequences={scored_sequences}");
    println!("scored_events={}", scores.len());
    for (i, s) in topk_suspicious(&scores, args.top).iter().enumerate() {
        println!(
            "suspect rank={} seq_id={} t={} suspiciousness={} actual={} predicted={} p_actual={} actual_rank={}",
            i + 1,
            s.seq_id,
            s.t,
            s.suspiciousness,
            event_name(&bundle.vocab, s.actual),
            event_name(&bundle.vocab, s.predicted),
            s.p_actual,
            s.rank
        );
    }
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<u8> {
    let data = PreparedDataset::read(&args.input, args.name.as_deref())?;
    let spec = match &args.spec {
        Some(path) => read_sweep_spec(path)?,
        None => SweepSpec::default(),
    };
    let (configs, warnings) = expand_grid(&spec, &data.name);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let mut rows = run_sweep(&configs, &data, args.workers)?;
    if !args.timing {
        rows = rows.iter().map(ResultRow::with_zeroed_timing).collect();
    }
    write_results_csv(&args.out, &rows)?;
    let errors = rows.iter().filter(|r| r.error.is_some()).count();
    println!("configs={}", configs.len());
    println!("rows={}", rows.len());
    println!("errors={errors}");
    println!("out={}", args.out.display());
    Ok(if errors > 0 { 1 } else { 0 })
}

fn cmd_gen_synth(args: GenSynthArgs) -> Result<u8> {
    let spec = SynthSpec {
        dominant_prob: args.dominant_prob,
        end_prob: args.end_prob,
        min_len: args.min_len,
        max_len: args.max_len,
        ..SynthSpec::new(args.vocab, args.order, args.sequences, args.seed)
    };
    let seqs = generate(&spec)?;
    write_parsed_events(&args.out, &seqs)?;
    let events: usize = seqs.iter().map(|s| s.template_ids.len()).sum();
    println!("sequences={}", seqs.len());
    println!("events={events}");
    println!("bayes_accuracy={}", bayes_accuracy(&spec, &seqs));
    println!("out={}", args.out.display());
    Ok(0)
}
