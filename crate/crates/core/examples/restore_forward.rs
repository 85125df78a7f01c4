//! Runs the desk restorer on an odd-sized image in manual mode under every
//! scene descriptor and in automatic mode, and shows that the descriptor
//! steers the output.
//!
//! `cargo run --release --example restore_forward`

use onerestore::degrade::procedural_scene;
use onerestore::descriptor::{EmbedderConfig, WordVectors};
use onerestore::network::NetConfig;
use onerestore::pipeline::{Embedder, Mode, Restorer, SamplePack};
use onerestore::scene::Scene;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let embedder = Embedder::<f32>::new(EmbedderConfig::desk(), &WordVectors::fallback(), 0)?;
    let mut restorer = Restorer::new(NetConfig::desk(), embedder.text_table()?, 0)?;
    // A fresh network has a zero output projection and returns its input;
    // perturb it so the descriptor's influence is visible.
    let ids: Vec<_> = restorer.store.ids().collect();
    for id in ids {
        let p = restorer.store.get_mut(id);
        if p.name.starts_with("tail") {
            p.value = p.value.map(|_| 0.01);
        }
    }

    let pack = SamplePack::synthesize("demo".into(), procedural_scene(45, 70, 3), None, 3)?;
    let img = pack.input(Scene::LowHaze);
    let reference = restorer.restore(img, Mode::Manual(Scene::LowHaze))?;
    for &s in &Scene::ALL {
        let out = restorer.restore(img, Mode::Manual(s))?;
        println!("{:<16} mean |out - out(low+haze)| = {:.2e}", s.label(), out.image.mean_abs_diff(&reference.image));
    }
    let auto = restorer.restore(img, Mode::Automatic(&embedder))?;
    println!(
        "automatic mode picked {} ({}x{} output)",
        auto.scene,
        auto.image.height(),
        auto.image.width()
    );
    Ok(())
}
