//! Evaluates the three restoration loss terms on a synthetic pack and walks
//! the anchor from the degraded input to the clear target.
//!
//! `cargo run --release --example loss_terms`

use onerestore::degrade::procedural_scene;
use onerestore::loss::{total_loss, ContrastTargets, FeatureExtractor, LossWeights, EXTRACTOR_SEED};
use onerestore::numerics::{Graph, Tensor};
use onerestore::pipeline::SamplePack;
use onerestore::scene::Scene;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pack = SamplePack::synthesize("demo".into(), procedural_scene(48, 48, 5), None, 5)?;
    let input = Scene::HazeRain;
    let clear: Tensor<f64> = pack.clear.to_tensor();
    let x: Tensor<f64> = pack.input(input).to_tensor();
    let others: Vec<Tensor<f64>> = pack.others(input).iter().map(|i| i.to_tensor()).collect();

    let fe = FeatureExtractor::seeded(EXTRACTOR_SEED);
    let targets = ContrastTargets::new(&fe, &clear, &x, &others)?;
    let w = LossWeights::default();

    println!(" t     total    smooth_l1  1-ms_ssim  cdrl");
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let anchor = Tensor::new(
            clear.shape(),
            x.data().iter().zip(clear.data()).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
        )?;
        let mut g = Graph::inference();
        let a = g.constant(anchor)?;
        let c = g.constant(clear.clone())?;
        let v = total_loss(&mut g, &fe, a, c, &targets, &w)?.values(&g);
        println!("{t:.2}  {:.5}  {:.5}    {:.5}    {:.5}", v.total, v.smooth_l1, v.ms_ssim, v.cdrl);
    }
    Ok(())
}
