//! End-to-end command tests against synthetic datasets written in the real
//! on-disk formats.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bdnn::checkpoint::{self, TrainState};
use bdnn::data::{mnist, synthetic};
use bdnn::network::{Network, StructureId};
use bdnn::training::init_weights;

fn bdnn_bin() -> &'static str {
    env!("CARGO_BIN_EXE_bdnn")
}

fn run(args: &[&str]) -> Output {
    Command::new(bdnn_bin())
        .args(args)
        .output()
        .expect("spawn bdnn")
}

fn stdout_value(out: &Output, key: &str) -> String {
    let text = String::from_utf8_lossy(&out.stdout);
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("missing {key}= in output:\n{text}"))
}

/// Writes a small IDX-format dataset pair and returns the four paths.
fn write_idx_dataset(dir: &Path, train_n: usize, test_n: usize, seed: u64) -> [PathBuf; 4] {
    let train = synthetic::gray_prototypes(train_n, 28, 28, 10, 0.08, seed);
    let test = synthetic::gray_prototypes(test_n, 28, 28, 10, 0.08, seed.wrapping_add(1));
    let paths = [
        dir.join("train-images"),
        dir.join("train-labels"),
        dir.join("test-images"),
        dir.join("test-labels"),
    ];
    fs::write(&paths[0], mnist::write_images(&train)).unwrap();
    fs::write(&paths[1], mnist::write_labels(&train.labels)).unwrap();
    fs::write(&paths[2], mnist::write_images(&test)).unwrap();
    fs::write(&paths[3], mnist::write_labels(&test.labels)).unwrap();
    paths
}

fn small_spec_file(dir: &Path) -> PathBuf {
    let path = dir.join("net.spec");
    fs::write(&path, "input flat 785\nclasses 10\ndense 785 51\ndense 51 10\n").unwrap();
    path
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn train_eval_roundtrip_and_zero_lr_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let [ti, tl, si, sl] = write_idx_dataset(dir.path(), 120, 60, 3);
    let spec = small_spec_file(dir.path());
    let config = write_config(
        dir.path(),
        "train.cfg",
        &format!(
            "structure={}\ntrain_images={}\ntrain_labels={}\ntest_images={}\ntest_labels={}\n\
             epochs=1\nlr=0\nseed=9\ntiming=off\n",
            spec.display(),
            ti.display(),
            tl.display(),
            si.display(),
            sl.display()
        ),
    );
    let model = dir.path().join("model.bdnn");
    let metrics = dir.path().join("metrics.csv");
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out-model",
        model.to_str().unwrap(),
        "--out-metrics",
        metrics.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // One epoch, one CSV row.
    let csv = fs::read_to_string(&metrics).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], "epoch,train_err_pct,test_err_pct,seconds");

    // lr=0 training reports the untrained network's error, and eval on the
    // same data prints the same number the metrics row recorded.
    let recorded_test_err: f64 = rows[1].split(',').nth(2).unwrap().parse().unwrap();
    let out = run(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--images",
        si.to_str().unwrap(),
        "--labels",
        sl.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval_err: f64 = stdout_value(&out, "test_err_pct").parse().unwrap();
    assert!((eval_err - recorded_test_err).abs() < 0.005);

    // Evaluating twice prints identical output.
    let again = run(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--images",
        si.to_str().unwrap(),
        "--labels",
        sl.to_str().unwrap(),
    ]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn same_seed_gives_identical_csv_and_model_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let [ti, tl, si, sl] = write_idx_dataset(dir.path(), 100, 40, 5);
    let spec = small_spec_file(dir.path());
    let config = write_config(
        dir.path(),
        "train.cfg",
        &format!(
            "structure={}\ntrain_images={}\ntrain_labels={}\ntest_images={}\ntest_labels={}\n\
             epochs=3\nlr=0.01\nseed=1234\ntiming=off\n",
            spec.display(),
            ti.display(),
            tl.display(),
            si.display(),
            sl.display()
        ),
    );
    let mut outputs = Vec::new();
    for i in 0..2 {
        let model = dir.path().join(format!("m{i}.bdnn"));
        let metrics = dir.path().join(format!("m{i}.csv"));
        let out = run(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out-model",
            model.to_str().unwrap(),
            "--out-metrics",
            metrics.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((fs::read(&model).unwrap(), fs::read(&metrics).unwrap()));
    }
    assert_eq!(outputs[0].1, outputs[1].1, "metrics CSV bytes differ");
    assert_eq!(outputs[0].0, outputs[1].0, "model bytes differ");
}

#[test]
fn unknown_config_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "bad.cfg", "structure=A\nlerning_rate=0.1\n");
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out-model",
        dir.path().join("m").to_str().unwrap(),
        "--out-metrics",
        dir.path().join("c").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error="), "{stderr}");
    assert!(stderr.contains("lerning_rate"), "{stderr}");
}

fn saved_model(dir: &Path, id: StructureId, seed: u64) -> PathBuf {
    let mut net = Network::structure(id);
    init_weights(&mut net, seed);
    let path = dir.join("model.bdnn");
    checkpoint::save_file(&path, &net, &TrainState::default(), "test", true).unwrap();
    path
}

#[test]
fn bench_reports_speedup_and_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let model = saved_model(dir.path(), StructureId::A, 42);
    let out = run(&["bench", "--model", model.to_str().unwrap(), "--repeats", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let speedup: f64 = stdout_value(&out, "speedup").parse().unwrap();
    assert!(speedup > 1.0, "packed path should beat the naive path, got {speedup}");
    assert_eq!(stdout_value(&out, "prediction_agreement"), "1.0");

    let out = run(&["bench", "--model", model.to_str().unwrap(), "--repeats", "0"]);
    assert!(!out.status.success());
}

#[test]
fn inspect_reports_balanced_fresh_weights() {
    let dir = tempfile::tempdir().unwrap();
    let model = saved_model(dir.path(), StructureId::A, 7);
    let out = run(&["inspect", "--model", model.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let mut layer_lines = 0;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("layer=") {
            layer_lines += 1;
            let plus: f64 = rest
                .split_whitespace()
                .find_map(|f| f.strip_prefix("plus_fraction="))
                .unwrap()
                .parse()
                .unwrap();
            assert!((plus - 0.5).abs() < 0.02, "unbalanced init: {plus}");
        }
    }
    assert_eq!(layer_lines, 2);

    // Corrupted magic is rejected.
    let mut bytes = fs::read(&model).unwrap();
    bytes[0] = b'Z';
    let bad = dir.path().join("bad.bdnn");
    fs::write(&bad, bytes).unwrap();
    let out = run(&["inspect", "--model", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error="));
}

#[test]
fn corrupted_packed_section_is_mirror_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let model = saved_model(dir.path(), StructureId::A, 8);
    let mut bytes = fs::read(&model).unwrap();
    // Flip a bit in the packed section (it ends right before the 20-byte
    // train state and the 4-byte empty-metadata length... metadata "test" is
    // 4 bytes, so offset from the end is 4 + 4 + 20 + a few packed words).
    let idx = bytes.len() - 4 - 4 - 20 - 11;
    bytes[idx] ^= 0x01;
    let bad = dir.path().join("bad.bdnn");
    fs::write(&bad, bytes).unwrap();
    let out = run(&["eval", "--model", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mirror mismatch"), "{stderr}");
}

#[test]
fn export_packed_only_shrinks_and_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let [_, _, si, sl] = write_idx_dataset(dir.path(), 10, 50, 11);
    let model = saved_model(dir.path(), StructureId::A, 12);
    let packed = dir.path().join("packed.bdnn");
    let out = run(&[
        "export",
        "--model",
        model.to_str().unwrap(),
        "--out",
        packed.to_str().unwrap(),
        "--packed-only",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let full_size = fs::metadata(&model).unwrap().len();
    let packed_size = fs::metadata(&packed).unwrap().len();
    assert!(packed_size * 8 < full_size, "{packed_size} vs {full_size}");

    // Predictions agree between the full and packed-only models.
    let eval = |m: &Path| -> String {
        let out = run(&[
            "eval",
            "--model",
            m.to_str().unwrap(),
            "--images",
            si.to_str().unwrap(),
            "--labels",
            sl.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        stdout_value(&out, "test_err_pct")
    };
    assert_eq!(eval(&model), eval(&packed));
}
