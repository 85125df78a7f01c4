use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{dim_err, Result};
use crate::numerics::{r, Graph, Real, Var};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const C1: f64 = 1e-4;
const C2: f64 = 9e-4;
/// Per-scale terms are floored here before the fractional powers.
const FLOOR: f64 = 1e-6;

static WARNED: AtomicBool = AtomicBool::new(false);

pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Number of scales usable for an `h×w` image (at most 5).
pub fn usable_scales(h: usize, w: usize) -> usize {
    let mut side = h.min(w);
    let mut n = 0;
    while n < SCALE_WEIGHTS.len() && side >= WINDOW {
        n += 1;
        side = side.div_ceil(2);
    }
    n
}

/// Scale weights for `n` scales, renormalized to sum to one.
pub fn scale_weights(n: usize) -> Vec<f64> {
    let w = &SCALE_WEIGHTS[..n];
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Per-(image, channel) SSIM and contrast-structure means, both `[N,C,1,1]`.
fn ssim_terms<T: Real>(g: &mut Graph<T>, x: Var, y: Var, win: &[T]) -> Result<(Var, Var)> {
    let mx = g.filter(x, win)?;
    let my = g.filter(y, win)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let sxx = g.filter(xx, win)?;
    let syy = g.filter(yy, win)?;
    let sxy = g.filter(xy, win)?;
    let mx2 = g.mul(mx, mx)?;
    let my2 = g.mul(my, my)?;
    let mxy = g.mul(mx, my)?;
    let vx = g.sub(sxx, mx2)?;
    let vy = g.sub(syy, my2)?;
    let cov = g.sub(sxy, mxy)?;

    let cs_num = g.mul_scalar(cov, r(2.0))?;
    let cs_num = g.add_scalar(cs_num, r(C2))?;
    let cs_den = g.add(vx, vy)?;
    let cs_den = g.add_scalar(cs_den, r(C2))?;
    let cs = g.div(cs_num, cs_den)?;

    let l_num = g.mul_scalar(mxy, r(2.0))?;
    let l_num = g.add_scalar(l_num, r(C1))?;
    let l_den = g.add(mx2, my2)?;
    let l_den = g.add_scalar(l_den, r(C1))?;
    let l = g.div(l_num, l_den)?;

    let map = g.mul(l, cs)?;
    Ok((g.global_avg_pool(map)?, g.global_avg_pool(cs)?))
}

/// Multi-scale SSIM of `[N,C,H,W]` images in `[0,1]`, averaged over images
/// and channels. Uses fewer scales (with renormalized weights) when the image
/// is too small for five.
pub fn ms_ssim<T: Real>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    if g.shape(x) != g.shape(y) || g.shape(x).len() != 4 {
        return Err(dim_err!("ms_ssim needs equal NCHW shapes, got {:?} and {:?}", g.shape(x), g.shape(y)));
    }
    let (h, w) = (g.shape(x)[2], g.shape(x)[3]);
    let n = usable_scales(h, w);
    if n == 0 {
        return Err(dim_err!("ms_ssim needs images of at least {WINDOW}x{WINDOW}, got {h}x{w}"));
    }
    if n < SCALE_WEIGHTS.len() && !WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("ms_ssim: {h}x{w} input supports only {n} of 5 scales; weights renormalized");
    }
    let weights = scale_weights(n);
    let win: Vec<T> = gaussian_window(WINDOW, SIGMA).into_iter().map(r).collect();
    let (mut a, mut b) = (x, y);
    let mut acc: Option<Var> = None;
    for (i, &wt) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_terms(g, a, b, &win)?;
        let term = if i + 1 == n { ssim } else { cs };
        let term = g.clamp_min(term, r(FLOOR))?;
        let term = g.powf(term, r(wt))?;
        acc = Some(match acc {
            Some(p) => g.mul(p, term)?,
            None => term,
        });
        if i + 1 < n {
            a = g.avgpool2(a)?;
            b = g.avgpool2(b)?;
        }
    }
    g.mean(acc.expect("at least one scale"))
}
