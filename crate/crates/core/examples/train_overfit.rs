//! Overfits the desk restorer on eight fixed 64×64 pairs and reports the
//! PSNR gain over the degraded inputs.
//!
//! `cargo run --release --example train_overfit -- [steps] [lr] [halve-every] [log.jsonl]`

use onerestore::degrade::procedural_scene;
use onerestore::descriptor::{EmbedderConfig, WordVectors};
use onerestore::network::NetConfig;
use onerestore::numerics::Adam;
use onerestore::pipeline::{smooth, train_restorer_on, Embedder, PatchEntry, Restorer, RunOptions, SamplePack, TrainConfig};
use onerestore::scene::Scene;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().map_or(Ok(600), |s| s.parse())?;
    let lr: f64 = args.get(1).map_or(Ok(1e-3), |s| s.parse())?;
    let halve_every: usize = args.get(2).map_or(Ok(85), |s| s.parse())?;
    let log = args.get(3).map(Into::into);

    let packs = (0..8)
        .map(|i| SamplePack::synthesize(format!("scene{i}"), procedural_scene(64, 64, 100 + i), None, i))
        .collect::<Result<Vec<_>, _>>()?;
    let index: Vec<PatchEntry> = (0..8)
        .map(|i| PatchEntry {
            pack: i,
            input: Scene::degraded()[i],
            top: 0,
            left: 0,
        })
        .collect();

    let table = Embedder::<f32>::new(EmbedderConfig::desk(), &WordVectors::fallback(), 0)?.text_table()?;
    let mut restorer = Restorer::new(NetConfig::desk(), table, 0)?;
    let cfg = TrainConfig {
        epochs: steps,
        max_steps: steps,
        initial_lr: lr,
        lr_decay_interval_epochs: halve_every,
        batch_size: 8,
        patch_size: 64,
        patch_stride: 64,
        augment: false,
        ..TrainConfig::restorer()
    };
    let opts = RunOptions {
        log,
        cache_negatives: true,
        ..RunOptions::default()
    };
    let logs = train_restorer_on(&mut restorer, &mut Adam::new(0.9, 0.999), &packs, &index, &cfg, &opts)?;
    for l in logs.iter().step_by(100.max(steps / 20)) {
        println!(
            "step {:>5}  loss {:.5}  psnr {:.2} dB  ({:.0}s)",
            l.step, l.loss.total, l.psnr, l.wall_time
        );
    }
    let (first, last) = (&logs[0], logs.last().unwrap());
    let totals: Vec<f64> = logs.iter().map(|l| l.loss.total).collect();
    let s = smooth(&totals, 20);
    let rises = s.windows(2).filter(|w| w[1] > w[0]).count();
    println!("input psnr {:.2} dB, restored psnr {:.2} dB, gain {:.2} dB", first.input_psnr, last.psnr, last.psnr - first.input_psnr);
    println!("smoothed loss rises at {rises} of {} points; {:.0}s total", s.len().saturating_sub(1), last.wall_time);
    Ok(())
}
