//! Acceptance gate: one test per release criterion, each printing a
//! `criterion N: pass` line (visible with `--nocapture`). Oracles here are
//! written independently of the library internals they judge.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use logmask_core::corpus::{Label, ParsedSequence, TemplateId};
use logmask_core::eval::{evaluate_accuracy, score_sequence, topk_suspicious};
use logmask_core::experiment::{
    expand_grid, results_csv, run_experiment, run_sweep, Axes, CnnSettings, ExperimentConfig,
    Knobs, ModelKind, PreparedDataset, ResultRow, SweepSpec, TrainBudget,
};
use logmask_core::neural::{gradient_check, train, CnnModel, CnnParams};
use logmask_core::ngram::NgramTable;
use logmask_core::synth::{bayes_accuracy, generate, SynthSpec};
use logmask_core::window::{
    dedup_sequences, encode, pad_and_window, split_indices, windows_for_corpus, EventId,
    EventSequence, MaskedSample, SplitSpec, Vocabulary, WindowSpec,
};

fn sample(context: Vec<EventId>, target: EventId, mask_pos: usize) -> MaskedSample {
    MaskedSample {
        seq_id: Arc::from("q"),
        t: 0,
        context,
        target,
        mask_pos,
    }
}

/// Brute-force reference for the backoff predictor: scan every training
/// sample at every level, keeping the context positions that survive the
/// drop order "farthest from the mask first, left first on distance ties".
struct CountScanOracle<'a> {
    samples: &'a [MaskedSample],
    n: usize,
    m: usize,
    global: HashMap<EventId, u64>,
}

impl<'a> CountScanOracle<'a> {
    fn new(samples: &'a [MaskedSample], n: usize, m: usize) -> Self {
        let mut global = HashMap::new();
        for s in samples {
            *global.entry(s.target).or_insert(0) += 1;
        }
        CountScanOracle {
            samples,
            n,
            m,
            global,
        }
    }

    fn drop_order(&self) -> Vec<usize> {
        // The mask occupies window slot q; context position i sits at window
        // slot i (left of the mask) or i+1 (right of it).
        let q = self.n - 1 - self.m;
        let offset = |i: usize| -> i64 {
            let slot = if i < q { i } else { i + 1 };
            slot as i64 - q as i64
        };
        let mut pos: Vec<usize> = (0..self.n - 1).collect();
        pos.sort_by_key(|&i| (std::cmp::Reverse(offset(i).abs()), offset(i)));
        pos
    }

    fn predict(&self, ctx: &[EventId]) -> (EventId, f64, usize) {
        let order = self.drop_order();
        for level in (0..self.n).rev() {
            let kept = &order[(self.n - 1 - level)..];
            let mut counts: BTreeMap<EventId, u64> = BTreeMap::new();
            let mut total = 0u64;
            for s in self.samples {
                if kept.iter().all(|&i| s.context[i] == ctx[i]) {
                    *counts.entry(s.target).or_insert(0) += 1;
                    total += 1;
                }
            }
            if total == 0 {
                continue;
            }
            let (&event, &count) = counts
                .iter()
                .max_by(|(e1, c1), (e2, c2)| {
                    c1.cmp(c2)
                        .then_with(|| self.global[e1].cmp(&self.global[e2]))
                        .then_with(|| e2.cmp(e1))
                })
                .unwrap();
            return (event, count as f64 / total as f64, level);
        }
        unreachable!("level 0 matches every training sample");
    }

    fn prob_of(&self, ctx: &[EventId], event: EventId) -> f64 {
        let order = self.drop_order();
        for level in (0..self.n).rev() {
            let kept = &order[(self.n - 1 - level)..];
            let mut hit = 0u64;
            let mut total = 0u64;
            for s in self.samples {
                if kept.iter().all(|&i| s.context[i] == ctx[i]) {
                    total += 1;
                    if s.target == event {
                        hit += 1;
                    }
                }
            }
            if total > 0 {
                return hit as f64 / total as f64;
            }
        }
        unreachable!("level 0 matches every training sample");
    }
}

#[test]
fn criterion_1_ngram_matches_count_scan_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(901);
    let mut queries = 0usize;
    for corpus_idx in 0..200u64 {
        let n = *[2usize, 3, 5].choose(&mut rng).unwrap();
        let m = *[0usize, 1, n - 1].choose(&mut rng).unwrap();
        let vocab = rng.random_range(4..=20u32);
        let n_samples = rng.random_range(1..=1000usize);
        let samples: Vec<MaskedSample> = (0..n_samples)
            .map(|_| {
                let ctx: Vec<EventId> =
                    (0..n - 1).map(|_| rng.random_range(0..vocab)).collect();
                sample(ctx, rng.random_range(0..vocab), m)
            })
            .collect();
        let table = NgramTable::fit(&samples, n, m).unwrap();
        let oracle = CountScanOracle::new(&samples, n, m);

        for q in 0..50 {
            // Half the queries revisit training contexts, half are fresh and
            // mostly unseen, exercising every backoff level.
            let ctx: Vec<EventId> = if q % 2 == 0 {
                samples[rng.random_range(0..n_samples)].context.clone()
            } else {
                (0..n - 1).map(|_| rng.random_range(0..vocab)).collect()
            };
            let got = table.predict(&ctx);
            let want = oracle.predict(&ctx);
            assert_eq!(got, want, "corpus {corpus_idx}, context {ctx:?}");
            let e = rng.random_range(0..vocab);
            assert_eq!(
                table.prob_of_event(&ctx, e),
                oracle.prob_of(&ctx, e),
                "corpus {corpus_idx}, context {ctx:?}, event {e}"
            );
            queries += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "oracle comparison took {elapsed:.1}s");
    println!("criterion 1 (n-gram oracle equivalence, {queries} queries, {elapsed:.1}s): pass");
}

#[test]
fn criterion_2_windowing_count_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(902);
    let vocab = {
        let seqs = vec![ParsedSequence {
            seq_id: "all".into(),
            label: Label::Normal,
            template_ids: (1..=30).map(TemplateId).collect(),
        }];
        Vocabulary::build(&seqs).unwrap()
    };
    let sequences: Vec<EventSequence> = (0..1000)
        .map(|i| {
            let len = rng.random_range(0..=40usize);
            EventSequence {
                seq_id: format!("s{i}"),
                events: (0..len).map(|_| rng.random_range(0..30u32)).collect(),
                label: Label::Normal,
            }
        })
        .collect();

    let mut checked = 0usize;
    for n in [2usize, 5, 10, 15, 20] {
        for m in 0..=4usize {
            if m > n - 1 {
                continue;
            }
            let spec = WindowSpec::new(n, m).unwrap();
            for seq in &sequences {
                let samples = pad_and_window(seq, spec, &vocab);
                assert_eq!(
                    samples.len(),
                    seq.events.len() + 1,
                    "n={n} m={m} seq len {}",
                    seq.events.len()
                );
                for s in &samples {
                    assert_eq!(s.context.len(), n - 1, "n={n} m={m}");
                }
                checked += samples.len();
            }
        }
    }
    println!("criterion 2 (windowing count law, {checked} samples, zero violations): pass");
}

#[test]
fn criterion_3_gradient_check() {
    let params = CnnParams {
        d_emb: 6,
        n_filters: 4,
        filter_width: 3,
        hidden: 8,
        learning_rate: 1e-3,
        batch_size: 5,
    };
    let mut model = CnnModel::init(12, WindowSpec::new(5, 0).unwrap(), params, 42).unwrap();
    let batch: Vec<MaskedSample> = vec![
        sample(vec![0, 1, 2, 3], 4, 0),
        sample(vec![4, 5, 6, 7], 8, 0),
        sample(vec![8, 9, 0, 1], 2, 0),
        sample(vec![2, 2, 2, 2], 0, 0),
        sample(vec![11, 10, 9, 8], 7, 0),
    ];
    // Move off the raw init point first: there the ReLU pre-activations sit
    // within epsilon of zero and central differences straddle kinks where
    // no derivative exists.
    train(&mut model, &batch, 40).unwrap();
    let worst = gradient_check(&model, &batch, 1e-4).unwrap();
    assert!(worst < 1e-4, "max relative error {worst}");
    println!("criterion 3 (gradient check, max relative error {worst:.3e}): pass");
}

fn chain_corpus(copies: usize, chain: &[u32]) -> Vec<ParsedSequence> {
    (0..copies)
        .map(|i| ParsedSequence {
            seq_id: format!("s{i}"),
            label: Label::Normal,
            template_ids: chain.iter().copied().map(TemplateId).collect(),
        })
        .collect()
}

#[test]
fn criterion_4_memorization_capacity() {
    let started = Instant::now();
    let chain: Vec<u32> = (1..=10).collect();
    let seqs = chain_corpus(50, &chain);
    let vocab = Vocabulary::build(&seqs).unwrap();
    let wspec = WindowSpec::new(5, 0).unwrap();
    let encoded: Vec<EventSequence> = seqs.iter().map(|s| encode(s, &vocab)).collect();
    let samples = windows_for_corpus(&encoded, wspec, &vocab);

    let table = NgramTable::fit(&samples, 5, 0).unwrap();
    let ngram_acc = evaluate_accuracy(&table, &encoded, wspec, &vocab)
        .unwrap()
        .top1_accuracy();
    assert_eq!(ngram_acc, 1.0, "n-gram must memorize immediately");

    let params = CnnParams {
        d_emb: 8,
        n_filters: 16,
        filter_width: 3,
        hidden: 24,
        learning_rate: 0.05,
        batch_size: 64,
    };
    let mut model = CnnModel::init(vocab.size(), wspec, params, 7).unwrap();
    let mut cnn_acc = 0.0;
    let mut epochs = 0usize;
    while epochs < 200 {
        train(&mut model, &samples, 20).unwrap();
        epochs += 20;
        cnn_acc = evaluate_accuracy(&model, &encoded, wspec, &vocab)
            .unwrap()
            .top1_accuracy();
        if cnn_acc == 1.0 {
            break;
        }
    }
    assert_eq!(cnn_acc, 1.0, "cnn did not memorize within {epochs} epochs");
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "memorization took {elapsed:.1}s");
    println!(
        "criterion 4 (memorization, n-gram 1.0, cnn 1.0 after {epochs} epochs, {elapsed:.1}s): pass"
    );
}

#[test]
fn criterion_5_bayes_consistency_on_markov_corpus() {
    let spec = SynthSpec::new(10, 1, 5000, 20250814);
    let seqs = generate(&spec).unwrap();
    let split = SplitSpec {
        train_fraction: 0.5,
        seed: 1,
        unique_only: false,
    };
    let (train_idx, test_idx) = split_indices(seqs.len(), &split).unwrap();
    let train_parsed: Vec<&ParsedSequence> = train_idx.iter().map(|&i| &seqs[i]).collect();
    let test_parsed: Vec<ParsedSequence> = test_idx.iter().map(|&i| seqs[i].clone()).collect();

    let vocab = Vocabulary::build(train_parsed.iter().copied()).unwrap();
    let wspec = WindowSpec::new(3, 0).unwrap();
    let train_enc: Vec<EventSequence> =
        train_parsed.iter().map(|&s| encode(s, &vocab)).collect();
    let test_enc: Vec<EventSequence> = test_parsed.iter().map(|s| encode(s, &vocab)).collect();
    let table = NgramTable::fit(&windows_for_corpus(&train_enc, wspec, &vocab), 3, 0).unwrap();
    let acc = evaluate_accuracy(&table, &test_enc, wspec, &vocab)
        .unwrap()
        .top1_accuracy();
    let bayes = bayes_accuracy(&spec, &test_parsed);
    let gap = (acc - bayes).abs();
    assert!(
        gap < 0.02,
        "model accuracy {acc:.4} vs bayes rate {bayes:.4}, gap {gap:.4}"
    );
    println!(
        "criterion 5 (bayes consistency, model {acc:.4}, bayes {bayes:.4}, gap {gap:.4}): pass"
    );
}

#[test]
fn criterion_6_split_and_dedup_laws() {
    let mut rng = ChaCha8Rng::seed_from_u64(906);

    for trial in 0..500 {
        let n = rng.random_range(2..=1000usize);
        let p = rng.random_range(0.05..0.95f64);
        let spec = SplitSpec {
            train_fraction: p,
            seed: trial,
            unique_only: false,
        };
        let k = (p * n as f64).round() as usize;
        match split_indices(n, &spec) {
            Ok((train, test)) => {
                assert_eq!(train.len(), k, "n={n} p={p}");
                assert_eq!(train.len() + test.len(), n);
                let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..n).collect::<Vec<_>>(), "not a partition");
            }
            Err(_) => assert!(k == 0 || k == n, "split failed for usable n={n} p={p}"),
        }
    }

    for trial in 0..500 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial);
        let seqs: Vec<EventSequence> = (0..rng.random_range(0..=20usize))
            .map(|i| EventSequence {
                seq_id: format!("s{i}"),
                events: (0..rng.random_range(1..=4usize))
                    .map(|_| rng.random_range(0..3u32))
                    .collect(),
                label: Label::Normal,
            })
            .collect();
        let deduped = dedup_sequences(&seqs);
        let out: HashSet<&[EventId]> = deduped.iter().map(|s| s.events.as_slice()).collect();
        assert_eq!(out.len(), deduped.len(), "duplicates in dedup output");
        let distinct: HashSet<&[EventId]> = seqs.iter().map(|s| s.events.as_slice()).collect();
        assert_eq!(out, distinct, "dedup output not set-equal to input");
    }

    // On all-distinct data unique_only must not change the outcome.
    let distinct: Vec<ParsedSequence> = (0..60u32)
        .map(|i| ParsedSequence {
            seq_id: format!("s{i}"),
            label: Label::Normal,
            template_ids: vec![i + 1, 1, 2, 3, 4].into_iter().map(TemplateId).collect(),
        })
        .collect();
    let data = PreparedDataset::new("distinct", distinct);
    let cfg = ExperimentConfig {
        dataset: "distinct".into(),
        model: ModelKind::Ngram,
        window: 3,
        mask: 0,
        split: 0.5,
        unique: false,
        seed: 11,
        cnn: CnnSettings::default(),
    };
    let total = run_experiment(&cfg, &data);
    let unique = run_experiment(
        &ExperimentConfig {
            unique: true,
            ..cfg
        },
        &data,
    );
    assert_eq!(total.error, None);
    assert_eq!(total.accuracy, unique.accuracy, "unique_only changed accuracy");
    println!("criterion 6 (split and dedup laws, 500 trials each): pass");
}

#[test]
fn criterion_7_bitwise_determinism_across_worker_counts() {
    let seqs = generate(&SynthSpec {
        max_len: 40,
        ..SynthSpec::new(8, 1, 80, 21)
    })
    .unwrap();
    let data = PreparedDataset::new("synth", seqs);
    let spec = SweepSpec {
        models: vec![ModelKind::Ngram, ModelKind::Cnn],
        defaults: Knobs {
            window: 5,
            mask: 0,
            split: 0.5,
            unique: false,
        },
        axes: Axes {
            window: vec![2, 5],
            mask: vec![0, 1],
            split: vec![0.5],
            unique: vec![false, true],
        },
        cnn: CnnSettings {
            params: CnnParams {
                d_emb: 8,
                n_filters: 8,
                filter_width: 3,
                hidden: 16,
                learning_rate: 0.01,
                batch_size: 128,
            },
            budget: TrainBudget::Epochs(2),
        },
        ..SweepSpec::default()
    };
    let (configs, _) = expand_grid(&spec, "synth");
    assert_eq!(configs.len(), 8, "4 one-factor configs per model");

    // Wall-clock time is the one legitimately nondeterministic column, so
    // comparisons zero it out.
    let canonical = |rows: &[ResultRow]| {
        results_csv(&rows.iter().map(ResultRow::with_zeroed_timing).collect::<Vec<_>>())
    };
    let a = canonical(&run_sweep(&configs, &data, 1).unwrap());
    let b = canonical(&run_sweep(&configs, &data, 4).unwrap());
    let c = canonical(&run_sweep(&configs, &data, 0).unwrap());
    assert_eq!(a, b, "1-worker and 4-worker sweeps differ");
    assert_eq!(a, c, "rerun on the default pool differs");
    // The window-2 cnn config must fail identically, not disappear.
    assert!(a.contains("the filter width"), "expected one error row");
    println!("criterion 7 (bitwise determinism across worker counts): pass");
}

#[test]
fn criterion_8_pinpoints_injected_events() {
    let mut hits = 0usize;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + trial);
        let mut chain: Vec<u32> = (1..=10).collect();
        chain.shuffle(&mut rng);
        let seqs = chain_corpus(10, &chain);
        let vocab = Vocabulary::build(&seqs).unwrap();
        let wspec = WindowSpec::new(3, 0).unwrap();
        let encoded: Vec<EventSequence> = seqs.iter().map(|s| encode(s, &vocab)).collect();
        let table = NgramTable::fit(&windows_for_corpus(&encoded, wspec, &vocab), 3, 0).unwrap();

        let t_inj = rng.random_range(0..chain.len());
        let mut probe_ids = chain.clone();
        probe_ids[t_inj] = 99; // never seen in training, encodes as unknown
        let probe = encode(
            &ParsedSequence {
                seq_id: "probe".into(),
                label: Label::Anomalous,
                template_ids: probe_ids.into_iter().map(TemplateId).collect(),
            },
            &vocab,
        );
        let scores = score_sequence(&table, &probe, wspec, &vocab).unwrap();
        let top = &topk_suspicious(&scores, 1)[0];
        if top.t == t_inj {
            hits += 1;
        }
    }
    assert!(hits >= 99, "pinpointed {hits}/100 injected events");
    println!("criterion 8 (pinpointing, {hits}/100 trials): pass");
}

/// Full-data check against the public HDFS log set. Needs
/// `LOGMASK_HDFS_DIR` pointing at a directory containing `HDFS.log` and
/// `anomaly_label.csv`; runs for a long time on the full 11M-line log.
/// Accuracy deviations are reported, not failed, because parsing settings
/// and sessionization details shift the numbers.
#[test]
#[ignore = "multi-GB dataset: set LOGMASK_HDFS_DIR and run with --ignored"]
fn criterion_9_optional_hdfs_accuracy() {
    let Ok(dir) = std::env::var("LOGMASK_HDFS_DIR") else {
        println!("criterion 9 (optional hdfs): skipped, LOGMASK_HDFS_DIR not set");
        return;
    };
    let dir = std::path::PathBuf::from(dir);

    let mut anomalous = HashSet::new();
    let mut reader = csv::Reader::from_path(dir.join("anomaly_label.csv")).unwrap();
    for record in reader.records() {
        let record = record.unwrap();
        if record.get(1).map(str::trim) != Some("Normal") {
            anomalous.insert(record.get(0).unwrap().trim().to_string());
        }
    }

    let cfg = logmask_core::ingest::LoaderConfig {
        header: Some(
            regex::Regex::new(r"^\d{6} \d{6} \d+ \w+ \S+: (?P<content>.*)$").unwrap(),
        ),
        grouping: logmask_core::ingest::Grouping::Key(
            regex::Regex::new(r"blk_-?\d+").unwrap(),
        ),
        labels: logmask_core::ingest::LabelRule::KeyList { anomalous },
        parser: logmask_core::ingest::ParserSettings {
            params: Default::default(),
            mask_patterns: vec![
                r"blk_-?\d+".to_string(),
                r"(\d{1,3}\.){3}\d{1,3}(:\d+)?".to_string(),
            ],
        },
    };
    let loaded = logmask_core::ingest::load_raw_log(&dir.join("HDFS.log"), &cfg).unwrap();
    let grouped = logmask_core::ingest::group_sequences(&loaded.records, &cfg);
    let (_, parsed) = logmask_core::ingest::parse_grouped(&grouped.sequences, &cfg.parser).unwrap();
    let data = PreparedDataset::new("hdfs", parsed);

    let mk = |window, mask| ExperimentConfig {
        dataset: "hdfs".into(),
        model: ModelKind::Ngram,
        window,
        mask,
        split: 0.5,
        unique: false,
        seed: 42,
        cnn: CnnSettings::default(),
    };
    let default_row = run_experiment(&mk(5, 0), &data);
    let baseline_row = run_experiment(&mk(10, 1), &data);
    let report = |name: &str, row: &ResultRow, expected: f64| {
        let acc = row.accuracy.unwrap_or(f64::NAN);
        let within = (acc - expected).abs() <= 0.03;
        println!(
            "criterion 9 {name}: accuracy={acc:.4} expected={expected:.3}±0.03 within={within}"
        );
    };
    report("default(n=5,m=0)", &default_row, 0.848);
    report("baseline(n=10,m=1)", &baseline_row, 0.954);
    assert!(default_row.error.is_none() && baseline_row.error.is_none());
    println!("criterion 9 (optional hdfs, reported above): pass");
}
