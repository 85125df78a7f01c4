//! PSNR/SSIM on analytic cases, then a full evaluation report over a small
//! synthesized split with an untrained restorer.
//!
//! `cargo run --release --example evaluate_metrics -- [work_dir]`

use onerestore::degrade::{synthesize_dataset, write_procedural_scenes, Image, SynthesisOptions};
use onerestore::descriptor::{EmbedderConfig, WordVectors};
use onerestore::network::NetConfig;
use onerestore::pipeline::{evaluate, psnr, ssim, Embedder, Restorer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = Image::from_fn(32, 32, |y, x| [0.2 + 0.01 * (y % 7) as f32, 0.5, 0.3 + 0.01 * (x % 5) as f32])?;
    let b = Image::from_fn(32, 32, |y, x| {
        let p = a.pixel(y, x);
        [p[0] + 0.1, p[1] + 0.1, p[2] + 0.1]
    })?;
    println!("offset 0.1: psnr {:.4} dB, ssim {:.4}", psnr(&a, &b)?, ssim(&a, &b)?);
    println!("identical:  psnr {:.1} dB, ssim {:.4}", psnr(&a, &a)?, ssim(&a, &a)?);

    let work = std::env::args().nth(1).unwrap_or_else(|| "target/onerestore-eval".into());
    let work = std::path::Path::new(&work);
    write_procedural_scenes(&work.join("source"), 2, 64, 64, 4)?;
    let mut opts = SynthesisOptions::new(work.join("source"), work.join("test"));
    opts.size = Some((48, 48));
    synthesize_dataset(&opts)?;

    let embedder = Embedder::<f32>::new(EmbedderConfig::desk(), &WordVectors::fallback(), 0)?;
    let restorer = Restorer::new(NetConfig::desk(), embedder.text_table()?, 0)?;
    let report = evaluate(&opts.out_dir, &restorer, None)?;
    for (scene, row) in &report.categories {
        println!(
            "{:<16} input {:>6.2} dB / {:.3}   restored {:>6.2} dB / {:.3}",
            scene.label(),
            row.input_psnr,
            row.input_ssim,
            row.restored_psnr,
            row.restored_ssim
        );
    }
    println!("overall over {} pairs: input {:.2} dB, restored {:.2} dB", report.overall.count, report.overall.input_psnr, report.overall.restored_psnr);
    Ok(())
}
