//! Renders every degraded category of a few procedural scenes, prints the
//! sampled parameters and writes a small paired dataset.
//!
//! `cargo run --release --example synthesize_degradations -- [out_dir]`

use onerestore::degrade::{
    compose, read_manifest, synthesize_dataset, write_procedural_scenes, DegradationSpec, DepthMap, SynthesisOptions,
    MANIFEST_FILE,
};
use onerestore::degrade::procedural_scene;
use onerestore::scene::Scene;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/onerestore-demo".into());
    let out = std::path::Path::new(&out);

    let clear = procedural_scene(96, 128, 7);
    let depth = DepthMap::vertical_ramp(96, 128);
    for &scene in Scene::degraded() {
        let spec = DegradationSpec::sample(scene, 7, &mut ChaCha8Rng::seed_from_u64(7));
        let (img, m) = compose(&clear, &spec, &depth)?;
        println!(
            "{:<16} mean |I-J| {:.3}  gamma {:?}  beta {:?}  A {:?}",
            scene.label(),
            img.mean_abs_diff(&clear),
            m.gamma.map(|g| (g * 100.0).round() / 100.0),
            m.beta.map(|b| (b * 100.0).round() / 100.0),
            m.airlight.map(|a| (a * 100.0).round() / 100.0),
        );
    }

    let sources = out.join("source");
    write_procedural_scenes(&sources, 3, 96, 96, 1)?;
    let mut opts = SynthesisOptions::new(&sources, out.join("pairs"));
    opts.size = Some((64, 64));
    opts.seed = 1;
    let records = synthesize_dataset(&opts)?;
    let back = read_manifest(&opts.out_dir.join(MANIFEST_FILE))?;
    assert_eq!(back, records);
    println!("{} pairs and {} under {}", records.len(), MANIFEST_FILE, opts.out_dir.display());
    Ok(())
}
