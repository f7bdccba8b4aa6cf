//! End-to-end checks of the installed binary: every artifact is produced by
//! spawning the real executable, and every assertion reads files back the
//! way a user would. The determinism test prints the same [PASS]/[FAIL]
//! line style as the library acceptance suite.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aescore"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().expect("spawn aescore");
    assert!(
        out.status.success(),
        "aescore {args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn run_err(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = bin().current_dir(dir).args(args).output().expect("spawn aescore");
    assert!(!out.status.success(), "aescore {args:?} unexpectedly succeeded");
    (out.status.code().expect("exit code"), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// One small trained setup shared by the read-only tests: 24 balanced
/// synthetic images and a single-epoch B4 checkpoint.
struct Fixture {
    #[allow(dead_code)]
    keep: tempfile::TempDir,
    data: PathBuf,
    ckpt: PathBuf,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let keep = tempfile::tempdir().expect("tempdir");
        let root = keep.path().to_path_buf();
        run_in(&root, &["synth", "--out", "data", "--count", "32", "--resolution", "64", "--seed", "3"]);
        run_in(
            &root,
            &["train", "--data", "data", "--out", "run", "--variant", "B4", "--epochs", "1", "--batch-size", "4", "--seed", "1"],
        );
        Fixture { data: root.join("data"), ckpt: root.join("run").join("model.ckpt"), keep }
    })
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn train_writes_checkpoint_loss_trace_and_config() {
    let fx = fixture();
    let run = fx.ckpt.parent().unwrap();
    assert!(fx.ckpt.is_file(), "checkpoint missing");
    let losses = read(&run.join("loss.csv"));
    assert_eq!(losses.lines().count(), 1, "one epoch, one loss row");
    let effective = read(&run.join("effective-config.txt"));
    for line in ["command=train", "variant=B4", "epochs=1", "seed=1"] {
        assert!(effective.contains(line), "effective config lacks {line:?}:\n{effective}");
    }
}

#[test]
fn missing_labels_is_a_data_failure_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stderr) = run_err(dir.path(), &["train", "--data", "no-such-dir"]);
    assert_eq!(code, 3, "stderr: {stderr}");
    assert!(stderr.contains("no-such-dir"), "stderr does not name the path: {stderr}");
}

#[test]
fn config_file_merges_under_flags_and_rejects_unknown_keys() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");

    // Flags win over the file: epochs comes from the flag, seed from the file.
    std::fs::write(&conf, "epochs=9\nseed=6\nbatch-size=4\n").unwrap();
    run_in(
        dir.path(),
        &[
            "train",
            "--config",
            conf.to_str().unwrap(),
            "--data",
            fx.data.to_str().unwrap(),
            "--out",
            "merged",
            "--epochs",
            "1",
        ],
    );
    let effective = read(&dir.path().join("merged").join("effective-config.txt"));
    assert!(effective.contains("epochs=1"), "{effective}");
    assert!(effective.contains("seed=6"), "{effective}");

    std::fs::write(&conf, "epohcs=2\n").unwrap();
    let (code, stderr) = run_err(dir.path(), &["train", "--config", conf.to_str().unwrap(), "--data", "x"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("epohcs"), "{stderr}");
}

fn parse_probability_file(text: &str) -> BTreeMap<String, [f64; 8]> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id,p2,p3,p4,p5,p6,p7,p8,p9"));
    let mut rows = BTreeMap::new();
    for line in lines {
        let mut fields = line.split(',');
        let id = fields.next().unwrap().to_string();
        let probs: Vec<f64> = fields.map(|f| f.parse().unwrap()).collect();
        assert_eq!(probs.len(), 8, "row {id}");
        rows.insert(id, probs.try_into().unwrap());
    }
    rows
}

fn argmax_score(row: &[f64; 8]) -> u8 {
    let mut best = 0;
    for k in 1..8 {
        if row[k] > row[best] {
            best = k;
        }
    }
    best as u8 + 2
}

#[test]
fn predict_emits_valid_probabilities_and_matching_scores() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &["predict", "--model", fx.ckpt.to_str().unwrap(), "--data", fx.data.to_str().unwrap(), "--out", "pred"],
    );

    let prob_path = dir.path().join("pred").join("probabilities.csv");
    // The written table must survive the strict importer.
    let table = aescore::ensemble::import_probabilities(&prob_path).expect("exported table fails import");
    assert_eq!(table.len(), 32, "one row per input image");

    // Scores must be recomputable from the probability file alone.
    let rows = parse_probability_file(&read(&prob_path));
    let scores = read(&dir.path().join("pred").join("scores.csv"));
    let mut score_lines = scores.lines();
    assert_eq!(score_lines.next(), Some("path,score"));
    let mut seen = 0;
    for line in score_lines {
        let (id, score) = line.split_once(',').expect("path,score row");
        let score: u8 = score.parse().unwrap();
        assert_eq!(score, argmax_score(&rows[id]), "score for {id} does not match its probabilities");
        seen += 1;
    }
    assert_eq!(seen, 32);
}

#[test]
fn rsrl_zero_rounds_reproduces_the_input_checkpoint() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &[
            "rsrl",
            "--data",
            fx.data.to_str().unwrap(),
            "--val-fraction",
            "0.25",
            "--init",
            fx.ckpt.to_str().unwrap(),
            "--iterations",
            "0",
            "--out",
            "rb",
        ],
    );
    let best = std::fs::read(dir.path().join("rb").join("best.ckpt")).unwrap();
    let init = std::fs::read(&fx.ckpt).unwrap();
    assert_eq!(best, init, "zero rounds must keep the starting checkpoint byte for byte");
    let trace = aescore::trainer::parse_trace(&read(&dir.path().join("rb").join("trace.log"))).unwrap();
    assert!(trace.iterations.is_empty());
    assert_eq!(trace.best_iteration, None);
}

#[test]
fn rsrl_balanced_data_drops_nothing() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &[
            "rsrl",
            "--data",
            fx.data.to_str().unwrap(),
            "--val-fraction",
            "0.25",
            "--init",
            fx.ckpt.to_str().unwrap(),
            "--iterations",
            "1",
            "--epochs",
            "1",
            "--batch-size",
            "4",
            "--out",
            "rb",
        ],
    );
    let trace = aescore::trainer::parse_trace(&read(&dir.path().join("rb").join("trace.log"))).unwrap();
    assert_eq!(trace.iterations.len(), 1);
    assert!(trace.iterations[0].dropped.is_empty(), "balanced classes have nothing over-represented");
}

#[test]
fn rsrl_skewed_data_drops_only_the_heavy_class() {
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &["synth", "--out", "skew", "--count", "48", "--resolution", "64", "--seed", "9", "--imbalance", "5:0.75"],
    );
    run_in(
        dir.path(),
        &[
            "rsrl",
            "--data",
            "skew",
            "--val-fraction",
            "0.25",
            "--variant",
            "B4",
            "--iterations",
            "1",
            "--epochs",
            "1",
            "--batch-size",
            "4",
            "--seed",
            "2",
            "--out",
            "rb",
        ],
    );
    let trace = aescore::trainer::parse_trace(&read(&dir.path().join("rb").join("trace.log"))).unwrap();
    assert_eq!(trace.iterations.len(), 1);
    let dropped = &trace.iterations[0].dropped;
    assert!(!dropped.is_empty(), "the over-represented class must shed samples");
    assert!(dropped.iter().all(|d| d.score == 5), "dropped scores: {:?}", dropped.iter().map(|d| d.score).collect::<Vec<_>>());
}

#[test]
fn sweep_grid_matches_a_file_level_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    // Two fixed tables over four ids, disagreeing enough that the ends of
    // the grid score differently.
    let a = "id,p2,p3,p4,p5,p6,p7,p8,p9\n\
             w.png,0.65,0.05,0.05,0.05,0.05,0.05,0.05,0.05\n\
             x.png,0.05,0.65,0.05,0.05,0.05,0.05,0.05,0.05\n\
             y.png,0.05,0.05,0.65,0.05,0.05,0.05,0.05,0.05\n\
             z.png,0.05,0.05,0.05,0.05,0.05,0.05,0.65,0.05\n";
    let b = "id,p2,p3,p4,p5,p6,p7,p8,p9\n\
             w.png,0.05,0.65,0.05,0.05,0.05,0.05,0.05,0.05\n\
             x.png,0.05,0.65,0.05,0.05,0.05,0.05,0.05,0.05\n\
             y.png,0.05,0.05,0.05,0.65,0.05,0.05,0.05,0.05\n\
             z.png,0.05,0.05,0.05,0.05,0.05,0.05,0.05,0.65\n";
    let truth = "path,score\nw.png,2\nx.png,3\ny.png,4\nz.png,8\n";
    std::fs::write(dir.path().join("a.csv"), a).unwrap();
    std::fs::write(dir.path().join("b.csv"), b).unwrap();
    std::fs::write(dir.path().join("truth.csv"), truth).unwrap();
    run_in(
        dir.path(),
        &["ensemble-sweep", "--table-a", "a.csv", "--table-b", "b.csv", "--truth", "truth.csv", "--out", "sw"],
    );

    let table_a = parse_probability_file(a);
    let table_b = parse_probability_file(b);
    let truth: BTreeMap<&str, u8> = [("w.png", 2), ("x.png", 3), ("y.png", 4), ("z.png", 8)].into();

    // Recompute every grid row from the input files alone.
    let sweep = read(&dir.path().join("sw").join("sweep.csv"));
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows.len(), 11, "step 0.1 grid");
    let mut best_w1 = f64::NAN;
    let mut best_f1 = f64::NEG_INFINITY;
    for (i, row) in rows.iter().enumerate() {
        let fields: Vec<f64> = row.split(',').map(|f| f.parse().unwrap()).collect();
        let (w1, w2, got_f1) = (fields[0], fields[1], fields[2]);
        assert_eq!(w1, i as f64 / 10.0);
        assert!((w1 + w2 - 1.0).abs() < 1e-12);

        // Macro F1 over all eight classes, written from scratch.
        let mut tp = [0usize; 8];
        let mut fp = [0usize; 8];
        let mut fn_ = [0usize; 8];
        for (id, &t) in &truth {
            let pa = &table_a[*id];
            let pb = &table_b[*id];
            let fused: Vec<f64> = (0..8).map(|k| w1 * pa[k] + w2 * pb[k]).collect();
            let mut best = 0;
            for k in 1..8 {
                if fused[k] > fused[best] {
                    best = k;
                }
            }
            let p = best as u8 + 2;
            if p == t {
                tp[(t - 2) as usize] += 1;
            } else {
                fp[(p - 2) as usize] += 1;
                fn_[(t - 2) as usize] += 1;
            }
        }
        let mut f1_sum = 0.0;
        for k in 0..8 {
            let prec = if tp[k] + fp[k] == 0 { 0.0 } else { tp[k] as f64 / (tp[k] + fp[k]) as f64 };
            let rec = if tp[k] + fn_[k] == 0 { 0.0 } else { tp[k] as f64 / (tp[k] + fn_[k]) as f64 };
            f1_sum += if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
        }
        let want_f1 = f1_sum / 8.0;
        assert!((got_f1 - want_f1).abs() < 1e-12, "w1={w1}: file says {got_f1}, brute force says {want_f1}");
        if want_f1 > best_f1 {
            best_f1 = want_f1;
            best_w1 = w1;
        }
    }

    let summary = read(&dir.path().join("sw").join("summary.txt"));
    assert!(summary.contains(&format!("best_w1={best_w1}")), "{summary}");

    // Identical tables give a flat F1 column.
    run_in(
        dir.path(),
        &["ensemble-sweep", "--table-a", "a.csv", "--table-b", "a.csv", "--truth", "truth.csv", "--out", "flat"],
    );
    let flat = read(&dir.path().join("flat").join("sweep.csv"));
    let f1s: Vec<&str> = flat.lines().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert!(f1s.windows(2).all(|w| w[0] == w[1]), "identical tables must sweep flat: {f1s:?}");
}

#[test]
fn eval_binarize_splits_scores_at_five() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("truth.csv"), "path,score\na.png,4\nb.png,5\nc.png,2\nd.png,9\n").unwrap();
    std::fs::write(dir.path().join("pred.csv"), "path,score\na.png,5\nb.png,5\nc.png,2\nd.png,8\n").unwrap();
    let out = run_in(
        dir.path(),
        &["eval", "--truth", "truth.csv", "--pred", "pred.csv", "--binarize", "--out", "ev"],
    );
    let text = String::from_utf8_lossy(&out.stdout);
    // Truth splits 4,2 -> low and 5,9 -> high; prediction turns the 4 into
    // a high. low: tp 1, fn 1; high: tp 2, fp 1.
    assert!(text.contains("low"), "{text}");
    assert!(text.contains("accuracy   0.7500"), "{text}");
    let report = read(&dir.path().join("ev").join("report.txt"));
    assert!(text.starts_with(&report), "stdout and written report disagree:\n{text}\n---\n{report}");

    // Mismatched id sets are data errors.
    std::fs::write(dir.path().join("short.csv"), "path,score\na.png,5\n").unwrap();
    let (code, stderr) = run_err(dir.path(), &["eval", "--truth", "truth.csv", "--pred", "short.csv"]);
    assert_eq!(code, 3, "{stderr}");
}

#[test]
fn attention_emits_overlays_dumps_and_auditable_metadata() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    run_in(
        dir.path(),
        &["attention", "--model", fx.ckpt.to_str().unwrap(), "--data", fx.data.to_str().unwrap(), "--out", "att"],
    );
    let att = dir.path().join("att");

    let meta = read(&att.join("attention.csv"));
    let mut lines = meta.lines();
    assert_eq!(lines.next(), Some("path,selected_channel,source_resolution,selector"));
    let mut audited = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let (id, channel, selector) = (fields[0], fields[1].parse::<usize>().unwrap(), fields[3]);
        assert_eq!(fields[2], "6", "B4 reduces to 6x6 maps");
        assert_eq!(selector, "mean");
        let stem = id.replace('/', "__");

        // Two overlays per input at the network resolution.
        for kind in ["ffp", "air"] {
            let img = image::open(att.join(format!("{stem}.{kind}.png"))).expect("overlay decodes");
            assert_eq!((img.width(), img.height()), (192, 192));
        }

        // Dumped final maps stay inside [0, 1].
        for kind in ["ffp", "air"] {
            let dump = read(&att.join(format!("{stem}.{kind}.txt")));
            for v in dump.split_whitespace() {
                let v: f64 = v.parse().unwrap();
                assert!((0.0..=1.0).contains(&v), "{kind} value {v} outside [0, 1]");
            }
        }

        // The recorded channel choice must be recomputable from the raw
        // channel dump: highest mean, ties to the lowest index.
        let channels = read(&att.join(format!("{stem}.channels.txt")));
        let means: Vec<f64> = channels
            .lines()
            .map(|l| {
                let vals: Vec<f64> = l.split_whitespace().map(|v| v.parse().unwrap()).collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            })
            .collect();
        assert_eq!(means.len(), 96);
        let mut oracle = 0;
        for (c, m) in means.iter().enumerate() {
            if *m > means[oracle] {
                oracle = c;
            }
        }
        assert_eq!(channel, oracle, "{id}: metadata channel vs dump recomputation");
        audited += 1;
    }
    assert_eq!(audited, 32);
}

/// The whole pipeline, run twice from scratch in different directories with
/// identical flags, must be byte-identical file for file.
#[test]
fn identical_invocations_produce_byte_identical_artifacts() {
    let name = "command determinism";
    let result = std::panic::catch_unwind(|| {
        let pipeline = |root: &Path| {
            run_in(root, &["synth", "--out", "data", "--count", "24", "--resolution", "64", "--seed", "5"]);
            run_in(
                root,
                &["train", "--data", "data", "--out", "run", "--variant", "B4", "--epochs", "2", "--batch-size", "4", "--seed", "5"],
            );
            run_in(root, &["predict", "--model", "run/model.ckpt", "--data", "data", "--out", "pred"]);
            run_in(
                root,
                &["ensemble-sweep", "--table-a", "pred/probabilities.csv", "--table-b", "pred/probabilities.csv", "--truth", "data/labels.csv", "--out", "sw"],
            );
            run_in(root, &["attention", "--model", "run/model.ckpt", "--data", "data", "--out", "att"]);
            run_in(root, &["eval", "--truth", "data/labels.csv", "--pred", "pred/scores.csv", "--out", "ev"]);
        };
        let first = tempfile::tempdir().unwrap();
        let second = tempfile::tempdir().unwrap();
        pipeline(first.path());
        pipeline(second.path());

        fn walk(dir: &Path, prefix: &Path, files: &mut Vec<PathBuf>) {
            for entry in std::fs::read_dir(dir).unwrap() {
                let entry = entry.unwrap();
                let rel = prefix.join(entry.file_name());
                if entry.path().is_dir() {
                    walk(&entry.path(), &rel, files);
                } else {
                    files.push(rel);
                }
            }
        }
        let mut first_files = Vec::new();
        walk(first.path(), Path::new(""), &mut first_files);
        first_files.sort();
        let mut second_files = Vec::new();
        walk(second.path(), Path::new(""), &mut second_files);
        second_files.sort();
        assert_eq!(first_files, second_files, "the two runs produced different file sets");
        assert!(first_files.len() > 100, "expected images, maps and reports, found {}", first_files.len());
        for rel in &first_files {
            let a = std::fs::read(first.path().join(rel)).unwrap();
            let b = std::fs::read(second.path().join(rel)).unwrap();
            assert_eq!(a, b, "{} differs between identical invocations", rel.display());
        }
        first_files.len()
    });
    match result {
        Ok(count) => println!("[PASS] {name}: two full pipeline runs agree on all {count} files"),
        Err(cause) => {
            println!("[FAIL] {name}: reruns diverged");
            std::panic::resume_unwind(cause);
        }
    }
}
