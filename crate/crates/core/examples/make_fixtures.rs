//! Writes the fixture models and synthetic corpora used in the README walk
//! through: `cargo run --release --example make_fixtures -- [OUT_DIR]`.

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};

use rockhunt::dataset::{encode_png, Raster, CLASS_NAMES};
use rockhunt::fixtures::{mobilenet_like, planted_corpus, random_images, rock_classifier, rock_detector, tile_corpus};
use rockhunt::format::{serialize_model, ModelGraph};
use rockhunt::quantizer::{calibrate, quantize_model};
use rockhunt::tensor::Tensor;

fn save_png(path: &Path, t: &Tensor) -> Result<(), Box<dyn Error>> {
    fs::write(path, encode_png(&Raster::from_tensor(t)?)?)?;
    Ok(())
}

fn save_model(path: &Path, g: &ModelGraph) -> Result<(), Box<dyn Error>> {
    fs::write(path, serialize_model(g))?;
    println!("{} ({} parameters)", path.display(), g.parameter_count());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    fs::create_dir_all(&out)?;
    save_model(&out.join("classifier.rglm"), &rock_classifier())?;
    let mobile = mobilenet_like(1);
    save_model(&out.join("mobilenet.rglm"), &mobile)?;
    // its 96x96 input does not match the tiles, so calibrate on noise images
    let shape = mobile.tensor(mobile.inputs[0]).shape.clone();
    let stats = calibrate(&mobile, &random_images(&shape, 16, 2))?;
    save_model(&out.join("mobilenet_int8.rglm"), &quantize_model(&mobile, &stats)?)?;
    save_model(&out.join("detector.rglm"), &rock_detector())?;

    let tiles = out.join("tiles");
    for name in CLASS_NAMES {
        fs::create_dir_all(tiles.join(name))?;
    }
    let corpus = tile_corpus(600, 1);
    for t in &corpus {
        save_png(
            &tiles.join(CLASS_NAMES[t.label]).join(format!("{}.png", t.id)),
            &t.image,
        )?;
    }
    println!("{}: {} tiles in class folders", tiles.display(), corpus.len());

    // one frame per rock count from 0 to 34, with label files beside them
    let frames = out.join("frames");
    fs::create_dir_all(&frames)?;
    let counts: Vec<usize> = (0..=34).collect();
    for f in planted_corpus(&counts, 77) {
        save_png(&frames.join(format!("{}.png", f.id)), &f.image)?;
        let labels: String = f.boxes.iter().map(|b| b.to_line() + "\n").collect();
        fs::write(frames.join(format!("{}.txt", f.id)), labels)?;
    }
    println!("{}: {} frames", frames.display(), counts.len());
    Ok(())
}
