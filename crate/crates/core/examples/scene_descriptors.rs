//! Builds the twelve scene descriptors from base-word vectors, trains the
//! embedders briefly on synthetic images and classifies a held-out image.
//!
//! `cargo run --release --example scene_descriptors`

use onerestore::degrade::procedural_scene;
use onerestore::descriptor::{EmbedderConfig, WordVectors};
use onerestore::pipeline::{embedder_samples, fit_embedder, Embedder, SamplePack, TrainConfig};
use onerestore::scene::Scene;

fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f32]| v.iter().map(|x| x * x).sum::<f32>().sqrt();
    dot / (n(a) * n(b))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let words = WordVectors::fallback();
    let cfg = EmbedderConfig {
        input_size: 48,
        widths: [8, 16, 16, 32],
        head_channels: 64,
        ..EmbedderConfig::desk()
    };
    let mut emb = Embedder::<f32>::new(cfg, &words, 0)?;

    let table = emb.text_table()?;
    let row = |s: Scene| &table.data()[s.index() * 324..(s.index() + 1) * 324];
    println!("cos(low+haze, low)  = {:.3}", cosine(row(Scene::LowHaze), row(Scene::Low)));
    println!("cos(low+haze, snow) = {:.3}", cosine(row(Scene::LowHaze), row(Scene::Snow)));

    let mut items = Vec::new();
    for i in 0..12 {
        let pack = SamplePack::synthesize(format!("s{i}"), procedural_scene(48, 48, i), None, i)?;
        for &s in Scene::degraded() {
            items.push((pack.input(s).clone(), s));
        }
        items.push((pack.clear.clone(), Scene::Clear));
    }
    let samples = embedder_samples::<f32>(&items, 48)?;
    let train = TrainConfig {
        epochs: 10,
        ..TrainConfig::embedder_desk()
    };
    for log in fit_embedder(&mut emb, &samples, &train, None)? {
        println!("epoch {:>2}  loss {:.3}  train accuracy {:.2}", log.epoch, log.loss, log.train_accuracy);
    }

    let probe = SamplePack::synthesize("probe".into(), procedural_scene(48, 48, 99), None, 99)?;
    let c = emb.classify(probe.input(Scene::HazeRain))?;
    println!("held-out haze+rain image classified as {} (p = {:.2})", c.scene, c.probabilities[c.scene.index()]);
    Ok(())
}
