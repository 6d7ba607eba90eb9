use std::error::Error;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rockhunt::dataset::{
    encode_png, load_classification_dir, read_manifest, read_png, read_raster, shuffle, split_dataset, tile_grid,
    write_manifest, ManifestEntry, Split, TilePolicy, CLASS_NAMES, DEFAULT_RATIOS,
};
use rockhunt::detect::{count_rocks, decode, emit_overlay, nms, AnchorSet, BBox, DecodeConfig, OverlayOptions};
use rockhunt::engine::{argmax, prepare_input, Interpreter};
use rockhunt::eval::{benchmark, default_model_name, report_table, report_tsv, score};
use rockhunt::format::{parse_model, rom_size, serialize_model, ModelGraph};
use rockhunt::planner::plan_arena;
use rockhunt::quantizer::{calibrate, quantize_model};
use rockhunt::tensor::Tensor;

use crate::{Command, Global};

pub type Result<T> = std::result::Result<T, Box<dyn Error + Send + Sync>>;

pub const MANIFEST: &str = "manifest.tsv";

pub fn run(cmd: Command, global: &Global) -> Result<()> {
    match cmd {
        Command::Chip {
            image,
            tile,
            stride,
            policy,
            out,
        } => chip(&image, tile, stride.unwrap_or(tile), policy.into(), &out, global.seed),
        Command::Quantize {
            model,
            calib,
            limit,
            out,
        } => quantize(&model, &calib, limit, &out, global.seed),
        Command::Infer {
            model,
            input,
            out,
            classes,
            dump_plan,
        } => infer(&model, &input, out.as_deref(), classes, dump_plan),
        Command::Detect {
            model,
            tiles,
            conf,
            iou,
            classes,
            labels,
            out,
        } => detect(&model, &tiles, conf, iou, classes, labels, &out),
        Command::Eval {
            model,
            eval,
            split,
            classes,
        } => evaluate(&model, &eval, split.as_deref(), classes),
        Command::Bench {
            model,
            eval,
            split,
            reps,
            classes,
            tsv,
            dump_plan,
        } => bench(&model, eval.as_deref(), split.as_deref(), reps, classes, tsv, dump_plan),
    }
}

fn load_model(path: &Path) -> Result<ModelGraph> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_model(&bytes).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()).into())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn stem(p: &Path) -> String {
    p.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

/// PNG files directly inside `dir`, sorted by name.
fn pngs_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let p = e?.path();
        if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            v.push(p);
        }
    }
    v.sort();
    Ok(v)
}

fn read_images(paths: &[PathBuf]) -> Result<Vec<Tensor>> {
    paths.par_iter().map(|p| Ok(read_png(p)?)).collect()
}

fn class_names(classes: &Option<Vec<String>>) -> Vec<&str> {
    match classes {
        Some(c) => c.iter().map(String::as_str).collect(),
        None => CLASS_NAMES.to_vec(),
    }
}

fn manifest_entries(dir: &Path) -> Result<Option<Vec<ManifestEntry>>> {
    let path = dir.join(MANIFEST);
    if path.is_file() {
        Ok(Some(read_manifest(&path)?))
    } else {
        Ok(None)
    }
}

/// Labeled images from a manifest (entries with a label, optionally of one
/// split) or, without one, from `dir/<class>/*.png`.
fn labeled_paths(dir: &Path, split: Option<&str>, names: &[&str]) -> Result<Vec<(PathBuf, usize)>> {
    let split: Option<Split> = split.map(str::parse).transpose()?;
    let Some(entries) = manifest_entries(dir)? else {
        return Ok(load_classification_dir(dir, names)?
            .into_iter()
            .map(|l| (l.path, l.label))
            .collect());
    };
    let mut out = Vec::new();
    for e in entries {
        if split.is_some() && e.split != split {
            continue;
        }
        let Some(label) = e.label else { continue };
        let idx = names
            .iter()
            .position(|n| *n == label)
            .ok_or_else(|| format!("{}: unknown class {label:?}", e.id))?;
        out.push((dir.join(format!("{}.png", e.id)), idx));
    }
    Ok(out)
}

fn labeled_set(dir: &Path, split: Option<&str>, names: &[&str]) -> Result<Vec<(Tensor, usize)>> {
    let paths = labeled_paths(dir, split, names)?;
    if paths.is_empty() {
        return Err(format!("{}: no labeled images", dir.display()).into());
    }
    let files: Vec<PathBuf> = paths.iter().map(|(p, _)| p.clone()).collect();
    Ok(read_images(&files)?
        .into_iter()
        .zip(paths.into_iter().map(|(_, l)| l))
        .collect())
}

fn chip(image: &Path, tile: usize, stride: usize, policy: TilePolicy, out: &Path, seed: u64) -> Result<()> {
    let raster = read_raster(image)?;
    let grid = tile_grid(raster.width, raster.height, tile, stride, policy)?;
    let source = stem(image);
    let ids: Vec<String> = (0..grid.len())
        .map(|i| format!("{source}_{:03}_{:03}", i / grid.columns(), i % grid.columns()))
        .collect();
    create_dir(out)?;
    (0..grid.len()).into_par_iter().try_for_each(|i| {
        let (x, y) = grid.origin(i);
        write(
            &out.join(format!("{}.png", ids[i])),
            encode_png(&raster.crop(x, y, tile))?,
        )
    })?;
    let splits = if ids.is_empty() {
        None
    } else {
        Some(split_dataset(&ids, DEFAULT_RATIOS, seed)?)
    };
    let entries: Vec<ManifestEntry> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let (x, y) = grid.origin(i);
            ManifestEntry {
                id: id.clone(),
                source: source.clone(),
                x,
                y,
                split: splits.as_ref().and_then(|s| s.get(id)),
                label: None,
            }
        })
        .collect();
    write_manifest(out.join(MANIFEST), &entries)?;
    let [train, val, test] = splits.map_or([0; 3], |s| s.counts());
    println!(
        "{} tiles ({} x {}, {}) in {}; train {train}, val {val}, test {test}",
        grid.len(),
        grid.columns(),
        grid.rows(),
        policy.name(),
        out.display()
    );
    Ok(())
}

/// Train-split tiles when the directory has a manifest with splits, every
/// manifest tile when it has none, otherwise all PNGs in it and in its
/// class folders.
fn calibration_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    if let Some(entries) = manifest_entries(dir)? {
        let has_splits = entries.iter().any(|e| e.split.is_some());
        return Ok(entries
            .iter()
            .filter(|e| !has_splits || e.split == Some(Split::Train))
            .map(|e| dir.join(format!("{}.png", e.id)))
            .collect());
    }
    let mut paths = pngs_in(dir)?;
    paths.extend(load_classification_dir(dir, &CLASS_NAMES)?.into_iter().map(|l| l.path));
    Ok(paths)
}

fn quantize(model: &Path, calib: &Path, limit: Option<usize>, out: &Path, seed: u64) -> Result<()> {
    let g = load_model(model)?;
    let mut paths = calibration_paths(calib)?;
    if let Some(n) = limit {
        shuffle(&mut paths, seed);
        paths.truncate(n);
        paths.sort();
    }
    let images = read_images(&paths)?;
    let q = quantize_model(&g, &calibrate(&g, &images)?)?;
    write(out, serialize_model(&q))?;
    println!(
        "calibrated on {} images; ROM {} -> {} bytes ({:.3}x)",
        images.len(),
        rom_size(&g),
        rom_size(&q),
        rom_size(&q) as f64 / rom_size(&g) as f64
    );
    Ok(())
}

fn infer(model: &Path, input: &Path, out: Option<&Path>, classes: Option<Vec<String>>, dump_plan: bool) -> Result<()> {
    let g = load_model(model)?;
    if dump_plan {
        print!("{}", plan_arena(&g).dump());
    }
    let paths = if input.is_dir() {
        pngs_in(input)?
    } else {
        vec![input.to_path_buf()]
    };
    let interp = Interpreter::new(&g);
    let rows: Vec<(usize, f32)> = paths
        .par_iter()
        .map(|p| -> Result<(usize, f32)> {
            let x = prepare_input(&g, &read_png(p)?)?;
            let (outs, _) = interp.invoke(&[x])?;
            let v = outs.first().ok_or("model has no outputs")?;
            let k = argmax(v).ok_or("empty output")?;
            Ok((k, v.to_f32_vec()[k]))
        })
        .collect::<Result<_>>()?;
    let names = class_names(&classes);
    let mut text = String::new();
    for (p, (k, conf)) in paths.iter().zip(rows) {
        let name = names.get(k).map_or_else(|| format!("class{k}"), |n| n.to_string());
        let _ = writeln!(text, "{}\t{name}\t{conf:.3}", stem(p));
    }
    match out {
        Some(dir) => {
            create_dir(dir)?;
            write(&dir.join("predictions.tsv"), text)?;
            println!("{} predictions in {}", paths.len(), dir.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn detect_tile(
    g: &ModelGraph,
    interp: &Interpreter,
    path: &Path,
    conf: f64,
    iou: f64,
    opts: &OverlayOptions,
) -> Result<(Vec<BBox>, Vec<u8>, Vec<String>)> {
    let raster = read_raster(path)?;
    let x = prepare_input(g, &raster.to_tensor())?;
    let (outs, _) = interp.invoke(&[x])?;
    let (gh, gw) = match outs.first().map(Tensor::shape) {
        Some([1, h, w, _] | [h, w, _]) => (*h, *w),
        other => return Err(format!("detector output shape {other:?} is not a grid").into()),
    };
    let (fw, fh) = (raster.width as f64, raster.height as f64);
    let cfg = DecodeConfig {
        num_classes: opts.class_names.len(),
        conf_thresh: conf,
        ..DecodeConfig::new(fw, fh)
    };
    let boxes = nms(&decode(&outs[..1], &AnchorSet::cell_sized(gw, gh, fw, fh), &cfg)?, iou);
    let overlay = emit_overlay(&raster, &stem(path), &boxes, opts)?;
    Ok((boxes, overlay.png, overlay.records))
}

fn detect(
    model: &Path,
    tiles: &Path,
    conf: f64,
    iou: f64,
    classes: Vec<String>,
    labels: bool,
    out: &Path,
) -> Result<()> {
    let g = load_model(model)?;
    let paths: Vec<PathBuf> = pngs_in(tiles)?
        .into_iter()
        .filter(|p| !stem(p).ends_with("_det"))
        .collect();
    let opts = OverlayOptions {
        class_names: classes,
        draw_labels: labels,
    };
    let interp = Interpreter::new(&g);
    create_dir(out)?;
    let results: Vec<(Vec<BBox>, Vec<String>)> = paths
        .par_iter()
        .map(|p| {
            let (boxes, png, records) = detect_tile(&g, &interp, p, conf, iou, &opts)?;
            write(&out.join(format!("{}_det.png", stem(p))), png)?;
            Ok((boxes, records))
        })
        .collect::<Result<_>>()?;
    let mut dets = String::new();
    let mut counts = String::new();
    let summary = count_rocks(&results.iter().map(|(b, _)| b.clone()).collect::<Vec<_>>(), 0);
    for ((p, (_, records)), n) in paths.iter().zip(&results).zip(&summary.per_frame) {
        for r in records {
            let _ = writeln!(dets, "{r}");
        }
        let _ = writeln!(counts, "{}\t{n}", stem(p));
    }
    write(&out.join("detections.tsv"), dets)?;
    write(&out.join("counts.tsv"), counts)?;
    println!(
        "{} tiles, {} detections; {} per tile: min {}, max {}, mean {:.2}",
        paths.len(),
        summary.per_frame.iter().sum::<usize>(),
        opts.class_names.first().map_or("class0", String::as_str),
        summary.min,
        summary.max,
        summary.mean
    );
    Ok(())
}

fn evaluate(model: &Path, dir: &Path, split: Option<&str>, classes: Option<Vec<String>>) -> Result<()> {
    let g = load_model(model)?;
    let names = class_names(&classes);
    let set = labeled_set(dir, split, &names)?;
    let cm = score(&g, &set, &names)?;
    print!("{}", cm.render());
    println!("accuracy {:.4}", cm.accuracy()?);
    println!("balanced accuracy {:.4}", cm.balanced_accuracy()?);
    Ok(())
}

fn bench(
    models: &[PathBuf],
    eval: Option<&Path>,
    split: Option<&str>,
    reps: usize,
    classes: Option<Vec<String>>,
    tsv: bool,
    dump_plan: bool,
) -> Result<()> {
    let names = class_names(&classes);
    let set = match eval {
        Some(dir) => labeled_set(dir, split, &names)?,
        None => Vec::new(),
    };
    let mut reports = Vec::new();
    for path in models {
        let g = load_model(path)?;
        if dump_plan {
            println!("# {}", path.display());
            print!("{}", plan_arena(&g).dump());
        }
        let mut name = default_model_name(&g).to_string();
        if reports
            .iter()
            .any(|r: &rockhunt::eval::BenchReport| r.model_name == name)
        {
            name = stem(path);
        }
        reports.push(benchmark(&name, &g, &set, &names, reps)?);
    }
    print!(
        "{}",
        if tsv {
            report_tsv(&reports)
        } else {
            report_table(&reports)
        }
    );
    Ok(())
}
