use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tenet_core::data::{load_dataset, read_pnm, write_pgm, write_pnm, Image};
use tenet_core::metrics::dice;
use tenet_core::training::load_checkpoint;

const CONFIG: &str = r#"{
    "dims": 2, "patch_size": 4, "bond_dim": 4,
    "feature_map": {"kind": "binomial-sinusoidal", "d": 4},
    "channels": 1, "max_epochs": 3, "seed": 5
}"#;

fn tenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tenet"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("spawn tenet")
}

fn ok(args: &[&str]) -> Output {
    let out = tenet(args);
    assert!(
        out.status.success(),
        "tenet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic dataset and a model trained on it.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let f = Self { dir };
        ok(&[
            "gen-synth",
            "--out",
            s(&f.data()),
            "--n",
            "10",
            "--size",
            "32",
            "--seed",
            "3",
        ]);
        fs::write(f.path("config.json"), CONFIG).unwrap();
        ok(&[
            "--threads",
            "1",
            "train",
            "--config",
            s(&f.path("config.json")),
            "--data",
            s(&f.data()),
            "--out",
            s(&f.model()),
        ]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn model(&self) -> PathBuf {
        self.path("model.stnt")
    }

    fn image(&self, stem: &str) -> PathBuf {
        self.data().join("images").join(format!("{stem}.pgm"))
    }
}

fn count_files(dir: &Path) -> usize {
    fs::read_dir(dir).unwrap().count()
}

#[test]
fn gen_synth_writes_pairs_reproducibly() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "gen-synth",
            "--out",
            s(out),
            "--n",
            "12",
            "--size",
            "32",
            "--seed",
            "42",
        ]);
    }
    assert_eq!(count_files(&a.join("images")), 12);
    assert_eq!(count_files(&a.join("masks")), 12);
    for sub in ["images", "masks"] {
        for entry in fs::read_dir(a.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            let twin = b.join(sub).join(path.file_name().unwrap());
            assert_eq!(fs::read(&path).unwrap(), fs::read(twin).unwrap());
        }
    }
}

#[test]
fn gen_synth_volumes() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "gen-synth",
        "--out",
        s(dir.path()),
        "--n",
        "2",
        "--size",
        "16",
        "--seed",
        "1",
        "--dims",
        "3",
    ]);
    let samples = load_dataset(dir.path()).unwrap();
    assert_eq!(samples.len(), 2);
    assert_eq!(samples[0].image.dims(), &[16, 16, 16]);
}

#[test]
fn gen_synth_into_unwritable_location_fails() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = tenet(&[
        "gen-synth",
        "--out",
        s(&blocker.join("sub")),
        "--n",
        "2",
        "--size",
        "16",
        "--seed",
        "1",
    ]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_rejects_missing_key_by_name() {
    let f = Fixture::new();
    let cfg = f.path("bad.json");
    fs::write(&cfg, CONFIG.replace("\"bond_dim\": 4,", "")).unwrap();
    let out = tenet(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&f.data()),
        "--out",
        s(&f.path("m")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bond_dim"));
}

#[test]
fn train_rejects_dims_mismatch() {
    let f = Fixture::new();
    let out = tenet(&[
        "train",
        "--config",
        s(&f.path("config.json")),
        "--data",
        s(&f.data()),
        "--out",
        s(&f.path("m")),
        "--dims",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!f.path("m").exists());
}

#[test]
fn train_reports_numeric_failure() {
    let f = Fixture::new();
    let out = tenet(&[
        "train",
        "--config",
        s(&f.path("config.json")),
        "--data",
        s(&f.data()),
        "--out",
        s(&f.path("m")),
        "--lr",
        "1e300",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_writes_history_and_reproducible_checkpoint() {
    let f = Fixture::new();
    let again = f.path("again.stnt");
    let history = f.path("history.csv");
    ok(&[
        "--threads",
        "1",
        "train",
        "--config",
        s(&f.path("config.json")),
        "--data",
        s(&f.data()),
        "--out",
        s(&again),
        "--history",
        s(&history),
    ]);
    assert_eq!(fs::read(f.model()).unwrap(), fs::read(&again).unwrap());
    let csv = fs::read_to_string(history).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,val_dice");
    assert_eq!(lines.len(), 4);
    let ckpt = load_checkpoint(&f.model()).unwrap();
    assert_eq!(ckpt.model.config().patch_size, 4);
    assert_eq!(ckpt.train.unwrap().max_epochs, 3);
}

#[test]
fn predict_writes_binary_and_soft_masks() {
    let f = Fixture::new();
    let (mask, soft) = (f.path("mask.pgm"), f.path("soft.pgm"));
    ok(&[
        "predict",
        "--model",
        s(&f.model()),
        "--input",
        s(&f.image("synth_0000")),
        "--output",
        s(&mask),
        "--soft",
        s(&soft),
    ]);
    let bytes = fs::read(&mask).unwrap();
    assert!(bytes.starts_with(b"P5\n32 32\n255\n"));
    assert!(bytes[13..].iter().all(|&b| b == 0 || b == 255));
    assert_eq!(bytes.len(), 13 + 32 * 32);

    let soft_bytes = fs::read(&soft).unwrap();
    assert!(soft_bytes.starts_with(b"P5\n32 32\n65535\n"));
    let soft_img = read_pnm(&soft_bytes).unwrap();
    assert_eq!(soft_img.bit_depth(), Some(16));
    assert_eq!(soft_img.dims(), &[32, 32]);
    // The binary mask is the soft map thresholded at one half.
    let mask_img = read_pnm(&bytes).unwrap();
    for (m, p) in mask_img.data().iter().zip(soft_img.data()) {
        if (p - 0.5).abs() > 1e-4 {
            assert_eq!(*m == 1.0, *p > 0.5);
        }
    }
}

#[test]
fn predict_is_byte_identical_across_runs() {
    let f = Fixture::new();
    let outputs: Vec<Vec<u8>> = ["1", "4"]
        .iter()
        .map(|threads| {
            let out = f.path(&format!("soft{threads}.pgm"));
            ok(&[
                "--threads",
                threads,
                "predict",
                "--model",
                s(&f.model()),
                "--input",
                s(&f.image("synth_0001")),
                "--output",
                s(&f.path("mask.pgm")),
                "--soft",
                s(&out),
            ]);
            fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn predict_rejects_channel_mismatch() {
    let f = Fixture::new();
    let rgb = f.path("rgb.ppm");
    write_pnm(&rgb, &Image::zeros(vec![8, 8], 3).unwrap(), 255).unwrap();
    let out = tenet(&[
        "predict",
        "--model",
        s(&f.model()),
        "--input",
        s(&rgb),
        "--output",
        s(&f.path("o.pgm")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_rejects_corrupt_inputs() {
    let f = Fixture::new();
    let junk = f.path("junk.pgm");
    fs::write(&junk, b"P5\n4 4\n255\n").unwrap();
    let out = tenet(&[
        "predict",
        "--model",
        s(&f.model()),
        "--input",
        s(&junk),
        "--output",
        s(&f.path("o.pgm")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let out = tenet(&[
        "predict",
        "--model",
        s(&junk),
        "--input",
        s(&f.image("synth_0000")),
        "--output",
        s(&f.path("o.pgm")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

/// Per-image `(id, dice)` rows and `(key, value)` summary rows.
type Report = (Vec<(String, f64)>, Vec<(String, String)>);

fn read_report(path: &Path) -> Report {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("image,dice"));
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for line in lines {
        let (k, v) = line.split_once(',').unwrap();
        if ["mean_dice", "std_dice", "prauc"].contains(&k) {
            summary.push((k.to_string(), v.to_string()));
        } else {
            rows.push((k.to_string(), v.parse().unwrap()));
        }
    }
    (rows, summary)
}

#[test]
fn eval_report_matches_external_dice() {
    let f = Fixture::new();
    let report = f.path("report.csv");
    ok(&[
        "eval",
        "--model",
        s(&f.model()),
        "--data",
        s(&f.data()),
        "--report",
        s(&report),
    ]);
    let (rows, summary) = read_report(&report);
    assert_eq!(rows.len(), 10);
    let keys: Vec<&str> = summary.iter().map(|(k, _)| k.as_str()).collect();
    assert_eq!(keys, ["mean_dice", "std_dice", "prauc"]);

    let model = load_checkpoint(&f.model()).unwrap().model;
    let samples = load_dataset(&f.data()).unwrap();
    let mut total = 0.0;
    for (sample, (id, reported)) in samples.iter().zip(&rows) {
        assert_eq!(&sample.id, id);
        let probs = model.predict_soft(&sample.image.normalized()).unwrap();
        let d = dice(probs.data(), sample.mask.data(), 0.5).unwrap();
        assert_eq!(d, *reported);
        total += d;
    }
    let mean: f64 = summary[0].1.parse().unwrap();
    assert!((mean - total / samples.len() as f64).abs() <= 1e-12);
}

#[test]
fn eval_on_own_predictions_scores_one() {
    let f = Fixture::new();
    let own = f.path("own");
    fs::create_dir_all(own.join("images")).unwrap();
    fs::create_dir_all(own.join("masks")).unwrap();
    for stem in ["synth_0000", "synth_0001", "synth_0002"] {
        let image = own.join("images").join(format!("{stem}.pgm"));
        fs::copy(f.image(stem), &image).unwrap();
        ok(&[
            "predict",
            "--model",
            s(&f.model()),
            "--input",
            s(&image),
            "--output",
            s(&own.join("masks").join(format!("{stem}.pgm"))),
        ]);
    }
    let report = f.path("own.csv");
    ok(&[
        "eval",
        "--model",
        s(&f.model()),
        "--data",
        s(&own),
        "--report",
        s(&report),
    ]);
    let (rows, summary) = read_report(&report);
    assert!(rows.iter().all(|(_, d)| *d == 1.0));
    assert_eq!(summary[0].1, "1");
}

#[test]
fn eval_on_empty_dir_is_config_error() {
    let f = Fixture::new();
    let empty = f.path("empty");
    fs::create_dir_all(empty.join("images")).unwrap();
    let out = tenet(&[
        "eval",
        "--model",
        s(&f.model()),
        "--data",
        s(&empty),
        "--report",
        s(&f.path("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = tenet(&[
        "eval",
        "--model",
        s(&f.model()),
        "--data",
        s(&f.path("nowhere")),
        "--report",
        s(&f.path("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_of_all_background_leaves_prauc_empty() {
    let f = Fixture::new();
    let bg = f.path("bg");
    fs::create_dir_all(bg.join("images")).unwrap();
    fs::create_dir_all(bg.join("masks")).unwrap();
    fs::copy(f.image("synth_0000"), bg.join("images/a.pgm")).unwrap();
    write_pgm(&bg.join("masks/a.pgm"), &Image::zeros(vec![32, 32], 1).unwrap(), 255).unwrap();
    let report = f.path("bg.csv");
    ok(&[
        "eval",
        "--model",
        s(&f.model()),
        "--data",
        s(&bg),
        "--report",
        s(&report),
    ]);
    let (_, summary) = read_report(&report);
    assert_eq!(summary[2], ("prauc".to_string(), String::new()));
}
