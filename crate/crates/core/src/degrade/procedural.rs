use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stages::blur_plane;
use super::Image;

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] * (1.0 - t) + b[i] * t)
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(lo..hi))
}

/// A synthetic outdoor-like clear scene: sky gradient, textured ground,
/// blocky buildings with windows and a few round shapes.
///
/// Used when no real clear images are available; deterministic per seed.
pub fn procedural_scene(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let horizon = rng.random_range(0.35..0.65) * h;
    let sky_top = [rng.random_range(0.2..0.5), rng.random_range(0.4..0.7), rng.random_range(0.7..0.95)];
    let sky_low = lerp3(sky_top, [0.9, 0.9, 0.88], rng.random_range(0.3..0.8));
    let ground_a = random_color(&mut rng, 0.15, 0.55);
    let ground_b = random_color(&mut rng, 0.2, 0.6);

    let noise: Vec<f64> = (0..height * width).map(|_| rng.random::<f64>()).collect();
    let texture = blur_plane(&noise, height, width, 2.0);
    let coarse = blur_plane(&noise, height, width, 6.0);

    let mut px: Vec<[f64; 3]> = (0..height * width)
        .map(|i| {
            let (y, x) = ((i / width) as f64, (i % width) as f64);
            if y < horizon {
                lerp3(sky_top, sky_low, y / horizon)
            } else {
                let t = ((coarse[i] - 0.5) * 8.0 + 0.5).clamp(0.0, 1.0);
                let c = lerp3(ground_a, ground_b, t);
                let shade = 0.85 + 0.3 * (texture[i] - 0.5) * 4.0 + 0.1 * (x / w);
                c.map(|v| v * shade)
            }
        })
        .collect();

    let buildings = rng.random_range(2..7);
    for _ in 0..buildings {
        let bw = rng.random_range(0.08..0.25) * w;
        let bh = rng.random_range(0.15..0.5) * h;
        let x0 = rng.random_range(0.0..w - bw.min(w - 1.0));
        let base = horizon + rng.random_range(0.0..0.15) * h;
        let y0 = (base - bh).max(0.0);
        let wall = random_color(&mut rng, 0.25, 0.85);
        let window = random_color(&mut rng, 0.05, 0.4);
        let pitch = rng.random_range(4.0..9.0);
        for y in y0 as usize..(base as usize).min(height) {
            for x in x0 as usize..((x0 + bw) as usize).min(width) {
                let (ly, lx) = (y as f64 - y0, x as f64 - x0);
                let is_window = (ly % pitch) > pitch * 0.45 && (lx % pitch) > pitch * 0.45;
                px[y * width + x] = if is_window { window } else { wall };
            }
        }
    }

    let blobs = rng.random_range(1..5);
    for _ in 0..blobs {
        let cy = rng.random_range(0.0..h);
        let cx = rng.random_range(0.0..w);
        let r = rng.random_range(0.04..0.12) * w.min(h);
        let color = random_color(&mut rng, 0.1, 0.9);
        for y in ((cy - r).max(0.0) as usize)..((cy + r).ceil() as usize).min(height) {
            for x in ((cx - r).max(0.0) as usize)..((cx + r).ceil() as usize).min(width) {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                if d <= r {
                    px[y * width + x] = lerp3(color, px[y * width + x], (d / r).powi(4));
                }
            }
        }
    }

    let data = px
        .into_iter()
        .flat_map(|p| p.map(|v| v.clamp(0.02, 0.98) as f32))
        .collect();
    Image::new(height, width, data).expect("clamped values")
}
