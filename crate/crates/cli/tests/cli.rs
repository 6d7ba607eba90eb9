use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rockhunt::dataset::{encode_png, read_manifest, Raster, Split, CLASS_NAMES};
use rockhunt::fixtures::{planted_corpus, rock_classifier, rock_detector, tile_corpus};
use rockhunt::format::{parse_model, serialize_model, ModelGraph};
use rockhunt::tensor::Tensor;
use tempfile::TempDir;

fn rockhunt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rockhunt"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = rockhunt(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn save_png(path: &Path, t: &Tensor) {
    fs::write(path, encode_png(&Raster::from_tensor(t).unwrap()).unwrap()).unwrap();
}

fn save_model(path: &Path, g: &ModelGraph) {
    fs::write(path, serialize_model(g)).unwrap();
}

/// Synthetic tiles in `dir/<class>/`.
fn class_folders(dir: &Path, n: usize, seed: u64) {
    for t in tile_corpus(n, seed) {
        let sub = dir.join(CLASS_NAMES[t.label]);
        fs::create_dir_all(&sub).unwrap();
        save_png(&sub.join(format!("{}.png", t.id)), &t.image);
    }
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn help_and_usage_errors() {
    let help = rockhunt(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8(help.stdout).unwrap();
    for sub in ["chip", "quantize", "infer", "detect", "eval", "bench"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert_eq!(rockhunt(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(rockhunt(&["bench", "--bogus"]).status.code(), Some(2));
    assert_eq!(rockhunt(&[]).status.code(), Some(2));
    assert_eq!(
        rockhunt(&["bench", "--model", "/no/such/model.rglm"]).status.code(),
        Some(2)
    );

    let dir = TempDir::new().unwrap();
    let m = dir.path().join("m.rglm");
    save_model(&m, &rock_classifier());
    let usage = |args: &[&str]| rockhunt(args).status.code();
    assert_eq!(usage(&["bench", "--model", s(&m), "--reps", "2"]), Some(2));
    assert_eq!(
        usage(&[
            "detect",
            "--model",
            s(&m),
            "--tiles",
            s(dir.path()),
            "--conf",
            "1.5",
            "--out",
            "x"
        ]),
        Some(2)
    );
    assert_eq!(usage(&["chip", "--image", s(&m), "--tile", "0", "--out", "x"]), Some(2));
}

#[test]
fn domain_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.rglm");
    fs::write(&bad, b"RGLM\x01").unwrap();
    let out = rockhunt(&["bench", "--model", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.rglm"));

    let not_png = dir.path().join("x.png");
    fs::write(&not_png, b"not a png").unwrap();
    let out = rockhunt(&["chip", "--image", s(&not_png), "--out", s(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(1));
}

/// 2000 x 590 with 28-pixel tiles has the same 72 x 22 pad_edge grid as a
/// 16000 x 4721 panorama with 224-pixel tiles.
#[test]
fn chip_scaled_panorama() {
    let dir = TempDir::new().unwrap();
    let (w, h, t) = (2000usize, 590usize, 28usize);
    assert_eq!((w.div_ceil(t), h.div_ceil(t), w / t, h / t), (72, 22, 71, 21));
    let mut r = Raster::new(w, h);
    for (i, px) in r.data.iter_mut().enumerate() {
        *px = (i * 7 % 251) as u8;
    }
    let pano = dir.path().join("pano.png");
    fs::write(&pano, encode_png(&r).unwrap()).unwrap();

    let tiles = dir.path().join("tiles");
    let out = ok(&[
        "chip",
        "--image",
        s(&pano),
        "--tile",
        "28",
        "--stride",
        "28",
        "--policy",
        "pad_edge",
        "--out",
        s(&tiles),
    ]);
    assert!(out.contains("1584 tiles"), "{out}");
    let m = read_manifest(tiles.join("manifest.tsv")).unwrap();
    assert_eq!(m.len(), 1584);
    let count = |sp| m.iter().filter(|e| e.split == Some(sp)).count();
    // floor rule on 1584: 70% and 15% rounded down, the rest to test
    assert_eq!(
        [count(Split::Train), count(Split::Val), count(Split::Test)],
        [1108, 237, 239]
    );
    assert_eq!(files(&tiles).len(), 1585);
    // the last tile in the bottom-right corner is padded with zeros
    let last = m.last().unwrap();
    assert_eq!((last.x, last.y), (71 * 28, 21 * 28));
    let tile = rockhunt::dataset::read_raster(tiles.join(format!("{}.png", last.id))).unwrap();
    assert_eq!((tile.width, tile.height), (28, 28));
    assert_eq!(tile.pixel(27, 27), [0, 0, 0]);
    assert_eq!(tile.pixel(0, 0), r.pixel(last.x, last.y));

    let drop = dir.path().join("drop");
    let out = ok(&[
        "chip",
        "--image",
        s(&pano),
        "--tile",
        "28",
        "--policy",
        "drop-partial",
        "--out",
        s(&drop),
    ]);
    assert!(out.contains("1491 tiles"), "{out}");

    // same seed, same bytes; another seed reshuffles the splits
    let again = dir.path().join("again");
    ok(&["chip", "--image", s(&pano), "--tile", "28", "--out", s(&again)]);
    assert_eq!(
        fs::read(tiles.join("manifest.tsv")).unwrap(),
        fs::read(again.join("manifest.tsv")).unwrap()
    );
    let other = dir.path().join("other");
    ok(&[
        "chip",
        "--image",
        s(&pano),
        "--tile",
        "28",
        "--seed",
        "9",
        "--out",
        s(&other),
    ]);
    assert_ne!(
        fs::read(tiles.join("manifest.tsv")).unwrap(),
        fs::read(other.join("manifest.tsv")).unwrap()
    );
}

#[test]
fn quantize_infer_eval_bench() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("tiles");
    class_folders(&data, 60, 3);
    let float = dir.path().join("float.rglm");
    save_model(&float, &rock_classifier());
    let int8 = dir.path().join("int8.rglm");
    let out = ok(&["quantize", "--model", s(&float), "--calib", s(&data), "--out", s(&int8)]);
    assert!(out.contains("calibrated on 60 images"), "{out}");
    assert!(parse_model(&fs::read(&int8).unwrap()).unwrap().is_quantized());
    // quantizing twice is a domain error
    let twice = rockhunt(&[
        "quantize",
        "--model",
        s(&int8),
        "--calib",
        s(&data),
        "--out",
        s(&dir.path().join("q2")),
    ]);
    assert_eq!(twice.status.code(), Some(1));

    let pred = ok(&["infer", "--model", s(&float), "--input", s(&data.join("rock"))]);
    let lines: Vec<&str> = pred.lines().collect();
    assert!(!lines.is_empty());
    for l in &lines {
        let f: Vec<&str> = l.split('\t').collect();
        assert_eq!(f.len(), 3);
        assert!(CLASS_NAMES.contains(&f[1]));
    }
    let plan = ok(&[
        "infer",
        "--model",
        s(&int8),
        "--input",
        s(&data.join("rock")),
        "--dump-plan",
        "--out",
        s(&dir.path().join("pred")),
    ]);
    assert!(plan.contains("peak") && plan.contains("offset"), "{plan}");
    assert_eq!(
        fs::read_to_string(dir.path().join("pred/predictions.tsv"))
            .unwrap()
            .lines()
            .count(),
        lines.len()
    );

    let ev = ok(&["eval", "--model", s(&float), "--eval", s(&data)]);
    assert!(ev.contains("accuracy 1.0000"), "{ev}");

    let table = ok(&[
        "bench",
        "--model",
        s(&float),
        "--model",
        s(&int8),
        "--eval",
        s(&data),
        "--reps",
        "3",
    ]);
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].contains("Inference Time (ms)") && lines[0].contains("Peak RAM (K)"));
    assert!(lines[2].starts_with("Float"), "{table}");
    assert!(lines[3].starts_with("Quantized"), "{table}");
    let tsv = ok(&[
        "bench",
        "--model",
        s(&float),
        "--model",
        s(&int8),
        "--reps",
        "3",
        "--tsv",
    ]);
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    let ram: Vec<usize> = rows[1..].iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(ram[1] < ram[0]);
}

#[test]
fn quantize_calibrates_on_train_split_only() {
    let dir = TempDir::new().unwrap();
    let calib = dir.path().join("calib");
    fs::create_dir_all(&calib).unwrap();
    let mut manifest = String::new();
    for (i, t) in tile_corpus(30, 8).iter().enumerate() {
        let split = ["train", "val", "test"][i % 3];
        // only train tiles exist on disk
        if split == "train" {
            save_png(&calib.join(format!("t{i:02}.png")), &t.image);
        }
        manifest.push_str(&format!("t{i:02}\tsrc\t0\t0\t{split}\t-\n"));
    }
    fs::write(calib.join("manifest.tsv"), manifest).unwrap();
    let float = dir.path().join("f.rglm");
    save_model(&float, &rock_classifier());
    let out = ok(&[
        "quantize",
        "--model",
        s(&float),
        "--calib",
        s(&calib),
        "--out",
        s(&dir.path().join("q.rglm")),
    ]);
    assert!(out.contains("calibrated on 10 images"), "{out}");
    let out = ok(&[
        "quantize",
        "--model",
        s(&float),
        "--calib",
        s(&calib),
        "--limit",
        "4",
        "--out",
        s(&dir.path().join("q4.rglm")),
    ]);
    assert!(out.contains("calibrated on 4 images"), "{out}");
}

#[test]
fn detect_counts_and_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let tiles = dir.path().join("frames");
    fs::create_dir_all(&tiles).unwrap();
    let counts = [0, 1, 5, 12, 34];
    for f in planted_corpus(&counts, 21) {
        save_png(&tiles.join(format!("{}.png", f.id)), &f.image);
    }
    let model = dir.path().join("det.rglm");
    save_model(&model, &rock_detector());
    let run = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "detect",
            "--model",
            s(&model),
            "--tiles",
            s(&tiles),
            "--conf",
            "0.25",
            "--iou",
            "0.45",
            "--out",
            s(out),
        ];
        args.extend_from_slice(extra);
        ok(&args)
    };
    let a = dir.path().join("a");
    let summary = run(&a, &[]);
    assert!(summary.contains("min 0, max 34"), "{summary}");
    let got: Vec<usize> = fs::read_to_string(a.join("counts.tsv"))
        .unwrap()
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(got, counts);
    let dets = fs::read_to_string(a.join("detections.tsv")).unwrap();
    assert_eq!(dets.lines().count(), counts.iter().sum::<usize>());
    assert!(dets.lines().all(|l| l.split('\t').nth(1) == Some("rock")));
    for i in 0..counts.len() {
        assert!(a.join(format!("f{i:03}_det.png")).is_file());
    }

    let b = dir.path().join("b");
    run(&b, &["--jobs", "1"]);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
    // nothing was written next to the inputs
    assert_eq!(files(&tiles).len(), counts.len());
}
