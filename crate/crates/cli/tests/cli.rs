use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn logmask(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_logmask"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to launch the binary")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout was not utf-8")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr was not utf-8")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "unexpected exit\nstdout:\n{}\nstderr:\n{}",
        stdout_of(out),
        stderr_of(out)
    );
}

fn kv(out: &str, key: &str) -> String {
    let prefix = format!("{key}=");
    out.lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no `{key}=` line in:\n{out}"))
        .to_string()
}

fn write_chain_corpus(path: &Path, copies: usize) {
    let mut text = String::new();
    for i in 0..copies {
        text.push_str(&format!("chain{i:02}\tnormal\t1 2 3 4 5\n"));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn parse_handles_an_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.log"), "").unwrap();
    let out = logmask(
        dir.path(),
        &[
            "parse",
            "--input",
            "empty.log",
            "--out-events",
            "e.events",
            "--out-templates",
            "e.templates",
        ],
    );
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    assert_eq!(kv(&text, "lines"), "0");
    assert_eq!(kv(&text, "sequences"), "0");
    assert_eq!(kv(&text, "templates"), "0");
    assert_eq!(fs::read_to_string(dir.path().join("e.events")).unwrap(), "");
    assert_eq!(
        fs::read_to_string(dir.path().join("e.templates")).unwrap(),
        ""
    );
}

#[test]
fn parse_collapses_parameters_into_templates() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("six.log"),
        "Connection from 10.0.0.1 port 5000\n\
         Connection from 10.0.0.2 port 5001\n\
         Disk full on /dev/sda1\n\
         Connection from 10.0.0.3 port 5002\n\
         Disk full on /dev/sdb2\n\
         Connection from 10.0.0.4 port 5003\n",
    )
    .unwrap();
    let out = logmask(
        dir.path(),
        &[
            "parse",
            "--input",
            "six.log",
            "--out-events",
            "s.events",
            "--out-templates",
            "s.templates",
        ],
    );
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    assert_eq!(kv(&text, "lines"), "6");
    assert_eq!(kv(&text, "records"), "6");
    assert_eq!(kv(&text, "sequences"), "1");
    assert_eq!(kv(&text, "templates"), "2");
    let templates = fs::read_to_string(dir.path().join("s.templates")).unwrap();
    assert_eq!(templates.lines().count(), 2);
    assert!(templates.contains("Connection from <*> port <*>"));
    assert!(templates.contains("Disk full on <*>"));
    let events = fs::read_to_string(dir.path().join("s.events")).unwrap();
    assert_eq!(events, "six.log\tnormal\t1 1 2 1 2 1\n");
}

#[test]
fn parse_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("in.log"),
        "job 17 started by user alice\njob 18 started by user bob\njob 17 finished after 3 seconds\n",
    )
    .unwrap();
    for run in ["a", "b"] {
        let out = logmask(
            dir.path(),
            &[
                "parse",
                "--input",
                "in.log",
                "--out-events",
                &format!("{run}.events"),
                "--out-templates",
                &format!("{run}.templates"),
            ],
        );
        assert_exit(&out, 0);
    }
    assert_eq!(
        fs::read(dir.path().join("a.events")).unwrap(),
        fs::read(dir.path().join("b.events")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("a.templates")).unwrap(),
        fs::read(dir.path().join("b.templates")).unwrap()
    );
}

#[test]
fn synth_train_eval_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = logmask(
        dir.path(),
        &[
            "gen-synth",
            "--vocab",
            "8",
            "--sequences",
            "60",
            "--seed",
            "5",
            "--max-len",
            "30",
            "--out",
            "synth.events",
        ],
    );
    assert_exit(&out, 0);
    assert_eq!(kv(&stdout_of(&out), "sequences"), "60");

    let out = logmask(
        dir.path(),
        &[
            "train",
            "--input",
            "synth.events",
            "--model",
            "ngram",
            "--window",
            "3",
            "--split",
            "0.5",
            "--seed",
            "9",
            "--out",
            "ng.model",
        ],
    );
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    assert_eq!(kv(&text, "n_train_seq"), "30");
    assert_eq!(kv(&text, "epochs_run"), "0");

    let out = logmask(
        dir.path(),
        &[
            "eval",
            "--model",
            "ng.model",
            "--input",
            "synth.events",
            "--out",
            "report.txt",
        ],
    );
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    assert_eq!(kv(&text, "n_sequences"), "30");
    let acc: f64 = kv(&text, "top1_accuracy").parse().unwrap();
    assert!(acc > 0.5, "held-out accuracy {acc} too low for synth data");
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("top1_accuracy="));

    let out = logmask(
        dir.path(),
        &[
            "score",
            "--model",
            "ng.model",
            "--input",
            "synth.events",
            "--top",
            "3",
            "--out",
            "scores.tsv",
        ],
    );
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    assert_eq!(kv(&text, "scored_sequences"), "60");
    assert_eq!(text.matches("suspect rank=").count(), 3);
    assert!(dir.path().join("scores.tsv").exists());
}

#[test]
fn eval_scopes_partition_the_normals() {
    let dir = tempfile::tempdir().unwrap();
    logmask(
        dir.path(),
        &[
            "gen-synth",
            "--vocab",
            "6",
            "--sequences",
            "40",
            "--seed",
            "2",
            "--max-len",
            "20",
            "--out",
            "synth.events",
        ],
    );
    let out = logmask(
        dir.path(),
        &[
            "train",
            "--input",
            "synth.events",
            "--model",
            "ngram",
            "--window",
            "3",
            "--split",
            "0.25",
            "--out",
            "m.model",
        ],
    );
    assert_exit(&out, 0);
    let mut seen = Vec::new();
    for scope in ["train", "test", "all"] {
        let out = logmask(
            dir.path(),
            &[
                "eval",
                "--model",
                "m.model",
                "--input",
                "synth.events",
                "--scope",
                scope,
            ],
        );
        assert_exit(&out, 0);
        seen.push(kv(&stdout_of(&out), "n_sequences").parse::<usize>().unwrap());
    }
    assert_eq!(seen[0], 10);
    assert_eq!(seen[1], 30);
    assert_eq!(seen[2], 40);
}

#[test]
fn cnn_training_writes_identical_bundles_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    logmask(
        dir.path(),
        &[
            "gen-synth",
            "--vocab",
            "8",
            "--sequences",
            "40",
            "--seed",
            "5",
            "--max-len",
            "25",
            "--out",
            "synth.events",
        ],
    );
    let train = |out: &str| {
        logmask(
            dir.path(),
            &[
                "train",
                "--input",
                "synth.events",
                "--model",
                "cnn",
                "--window",
                "5",
                "--split",
                "0.5",
                "--seed",
                "9",
                "--d-emb",
                "8",
                "--n-filters",
                "8",
                "--hidden",
                "16",
                "--epochs",
                "2",
                "--out",
                out,
            ],
        )
    };
    let out = train("a.model");
    assert_exit(&out, 0);
    assert_eq!(kv(&stdout_of(&out), "epochs_run"), "2");
    let out = train("b.model");
    assert_exit(&out, 0);
    assert_eq!(
        fs::read(dir.path().join("a.model")).unwrap(),
        fs::read(dir.path().join("b.model")).unwrap()
    );
}

#[test]
fn memorized_corpus_scores_zero_suspiciousness() {
    let dir = tempfile::tempdir().unwrap();
    write_chain_corpus(&dir.path().join("chains.events"), 20);
    let out = logmask(
        dir.path(),
        &[
            "train",
            "--input",
            "chains.events",
            "--model",
            "ngram",
            "--window",
            "3",
            "--split",
            "0.5",
            "--seed",
            "4",
            "--out",
            "chain.model",
        ],
    );
    assert_exit(&out, 0);
    let out = logmask(
        dir.path(),
        &[
            "score",
            "--model",
            "chain.model",
            "--input",
            "chains.events",
            "--top",
            "5",
        ],
    );
    assert_exit(&out, 0);
    for line in stdout_of(&out).lines().filter(|l| l.starts_with("suspect ")) {
        assert!(
            line.contains("suspiciousness=0 "),
            "memorized event scored as suspicious: {line}"
        );
    }
}

#[test]
fn injected_event_is_pinpointed() {
    let dir = tempfile::tempdir().unwrap();
    write_chain_corpus(&dir.path().join("chains.events"), 20);
    logmask(
        dir.path(),
        &[
            "train",
            "--input",
            "chains.events",
            "--model",
            "ngram",
            "--window",
            "3",
            "--split",
            "0.5",
            "--seed",
            "4",
            "--out",
            "chain.model",
        ],
    );
    fs::write(dir.path().join("probe.events"), "probe\tnormal\t1 2 99 4 5\n").unwrap();
    let out = logmask(
        dir.path(),
        &[
            "score",
            "--model",
            "chain.model",
            "--input",
            "probe.events",
            "--top",
            "1",
        ],
    );
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    let suspects: Vec<&str> = text.lines().filter(|l| l.starts_with("suspect ")).collect();
    assert_eq!(suspects.len(), 1);
    assert!(suspects[0].contains("seq_id=probe "), "{}", suspects[0]);
    assert!(suspects[0].contains(" t=2 "), "{}", suspects[0]);

    // Asking for more suspects than there are events lists every event.
    let out = logmask(
        dir.path(),
        &[
            "score",
            "--model",
            "chain.model",
            "--input",
            "probe.events",
            "--top",
            "100",
        ],
    );
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    assert_eq!(kv(&text, "scored_events"), "6");
    assert_eq!(text.matches("suspect rank=").count(), 6);
}

#[test]
fn sweep_output_is_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    logmask(
        dir.path(),
        &[
            "gen-synth",
            "--vocab",
            "8",
            "--sequences",
            "50",
            "--seed",
            "5",
            "--max-len",
            "25",
            "--out",
            "synth.events",
        ],
    );
    fs::write(
        dir.path().join("mini.toml"),
        "name = \"mini\"\nmodels = [\"ngram\"]\nseed = 3\n\n[axes]\nwindow = [2, 3]\nmask = [0]\nsplit = [0.5]\nunique = [false]\n",
    )
    .unwrap();
    let sweep = |workers: &str, out: &str| {
        logmask(
            dir.path(),
            &[
                "sweep",
                "--input",
                "synth.events",
                "--spec",
                "mini.toml",
                "--out",
                out,
                "--workers",
                workers,
            ],
        )
    };
    let out = sweep("1", "w1.csv");
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    assert_eq!(kv(&text, "configs"), "3");
    assert_eq!(kv(&text, "errors"), "0");
    let out = sweep("4", "w4.csv");
    assert_exit(&out, 0);
    let w1 = fs::read(dir.path().join("w1.csv")).unwrap();
    let w4 = fs::read(dir.path().join("w4.csv")).unwrap();
    assert_eq!(w1, w4);
    let csv = String::from_utf8(w1).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("dataset,model,window,"));
    // Rerun with the same worker count is byte-identical too.
    let out = sweep("1", "w1b.csv");
    assert_exit(&out, 0);
    assert_eq!(
        fs::read(dir.path().join("w1.csv")).unwrap(),
        fs::read(dir.path().join("w1b.csv")).unwrap()
    );
}

#[test]
fn sweep_with_failing_rows_exits_degraded() {
    let dir = tempfile::tempdir().unwrap();
    logmask(
        dir.path(),
        &[
            "gen-synth",
            "--vocab",
            "6",
            "--sequences",
            "30",
            "--seed",
            "8",
            "--max-len",
            "20",
            "--out",
            "synth.events",
        ],
    );
    // Window 3 leaves a context of 2, narrower than the filter width 3:
    // that row fails while the default-knob row still trains.
    fs::write(
        dir.path().join("spec.toml"),
        "models = [\"cnn\"]\n\n[axes]\nwindow = [3]\n\n[cnn]\nd_emb = 6\nn_filters = 4\nhidden = 8\nepochs = 1\n",
    )
    .unwrap();
    let out = logmask(
        dir.path(),
        &[
            "sweep",
            "--input",
            "synth.events",
            "--spec",
            "spec.toml",
            "--out",
            "rows.csv",
        ],
    );
    assert_exit(&out, 1);
    let text = stdout_of(&out);
    assert_eq!(kv(&text, "errors"), "1");
    let csv = fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    assert!(csv.contains("the filter width"));
}

#[test]
fn invalid_sweep_spec_exits_2_without_a_csv() {
    let dir = tempfile::tempdir().unwrap();
    logmask(
        dir.path(),
        &[
            "gen-synth",
            "--vocab",
            "6",
            "--sequences",
            "20",
            "--seed",
            "8",
            "--out",
            "synth.events",
        ],
    );
    fs::write(dir.path().join("bad.toml"), "models = []\n").unwrap();
    let out = logmask(
        dir.path(),
        &[
            "sweep",
            "--input",
            "synth.events",
            "--spec",
            "bad.toml",
            "--out",
            "never.csv",
        ],
    );
    assert_exit(&out, 2);
    assert!(stderr_of(&out).starts_with("error: "));
    assert!(!dir.path().join("never.csv").exists());
}

#[test]
fn corrupt_bundle_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_chain_corpus(&dir.path().join("chains.events"), 10);
    logmask(
        dir.path(),
        &[
            "train",
            "--input",
            "chains.events",
            "--model",
            "ngram",
            "--window",
            "3",
            "--split",
            "0.5",
            "--out",
            "m.model",
        ],
    );
    let path = dir.path().join("m.model");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("bundle v1", "bundle v9", 1)).unwrap();
    let out = logmask(
        dir.path(),
        &["eval", "--model", "m.model", "--input", "chains.events"],
    );
    assert_exit(&out, 2);
    assert!(stderr_of(&out).starts_with("error: "));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = logmask(dir.path(), &["train", "--no-such-flag"]);
    assert_exit(&out, 2);
    let out = logmask(
        dir.path(),
        &[
            "train",
            "--input",
            "x.events",
            "--model",
            "cnn",
            "--out",
            "m",
            "--epochs",
            "2",
            "--time-budget",
            "1.5",
        ],
    );
    assert_exit(&out, 2);
    let out = logmask(dir.path(), &["eval", "--model", "missing.model", "--input", "x.events"]);
    assert_exit(&out, 2);
}

#[test]
fn prep_reports_the_sample_count_law() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("in.events"),
        "a\tnormal\t1 2 3\nb\tnormal\t1\nc\tnormal\t2 2 2 2\n",
    )
    .unwrap();
    let out = logmask(
        dir.path(),
        &[
            "prep",
            "--input",
            "in.events",
            "--window",
            "3",
            "--mask-position",
            "1",
            "--out",
            "samples.tsv",
        ],
    );
    assert_exit(&out, 0);
    let text = stdout_of(&out);
    assert_eq!(kv(&text, "sequences"), "3");
    // Each length-L sequence yields L+1 samples: 4 + 2 + 5.
    assert_eq!(kv(&text, "samples"), "11");
    let body = fs::read_to_string(dir.path().join("samples.tsv")).unwrap();
    assert_eq!(body.lines().count(), 11);
}
