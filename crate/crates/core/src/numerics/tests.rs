use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check, CheckOptions};
use super::kernels::{self, ConvGeom};
use super::*;

fn rand_tensor<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
}

fn positive_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(0.5..1.5))
}

fn close(a: &[f32], b: &[f32], tol: f32) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * y.abs().max(1.0))
}

// ------------------------------------------------------------ loop oracles

fn naive_matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, ta: bool, tb: bool) -> Vec<f32> {
    let mut c = vec![0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0f64;
            for p in 0..k {
                let av = if ta { a[p * m + i] } else { a[i * k + p] };
                let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                s += av as f64 * bv as f64;
            }
            c[i * n + j] = s as f32;
        }
    }
    c
}

fn naive_conv(x: &Tensor<f32>, w: &Tensor<f32>, b: &[f32], g: ConvGeom) -> Vec<f32> {
    let (n, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (cout, cpg, k) = (w.dim(0), w.dim(1), w.dim(2));
    let ho = (h + 2 * g.pad - k) / g.stride + 1;
    let wo = (wd + 2 * g.pad - k) / g.stride + 1;
    let opg = cout / g.groups;
    let mut out = vec![0f32; n * cout * ho * wo];
    for bi in 0..n {
        for co in 0..cout {
            let grp = co / opg;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b[co] as f64;
                    for ci in 0..cpg {
                        let cx = grp * cpg + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((bi * cin + cx) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cpg + ci) * k + ky) * k + kx];
                                s += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((bi * cout + co) * ho + oy) * wo + ox] = s as f32;
                }
            }
        }
    }
    out
}

fn naive_maxpool(x: &Tensor<f32>, k: usize, s: usize) -> Vec<f32> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let pad = (k - 1) / 2;
    let ho = (h + 2 * pad - k) / s + 1;
    let wo = (w + 2 * pad - k) / s + 1;
    let mut out = Vec::new();
    for p in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * s + ky) as isize - pad as isize;
                        let ix = (ox * s + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            m = m.max(x.data()[p * h * w + iy as usize * w + ix as usize]);
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

// ------------------------------------------------------------ forward cases

#[test]
fn matmul_small_cases() {
    let a = Tensor::<f32>::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
    let b = Tensor::<f32>::new(&[2, 2], vec![5., 6., 7., 8.]).unwrap();
    let c = kernels::matmul(&a, &b, false, false).unwrap();
    assert_eq!(c.data(), &[19., 22., 43., 50.]);
    let eye = Tensor::<f32>::new(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
    assert_eq!(kernels::matmul(&a, &eye, false, false).unwrap().data(), a.data());
    let bad = Tensor::<f32>::zeros(&[3, 2]);
    assert!(kernels::matmul(&a, &bad, false, false).is_err());
}

#[test]
fn matmul_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..24 {
        let (m, k, n) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..9));
        let (ta, tb) = (trial % 2 == 1, trial % 4 >= 2);
        let batch = rng.random_range(1..4);
        let shared = trial % 3 == 0;
        let a_shape = if ta { [batch, k, m] } else { [batch, m, k] };
        let a = rand_tensor::<f32>(&a_shape, trial);
        let b: Tensor<f32> = if shared {
            rand_tensor(&if tb { [n, k] } else { [k, n] }, 100 + trial)
        } else {
            rand_tensor(&if tb { [batch, n, k] } else { [batch, k, n] }, 100 + trial)
        };
        let c = kernels::matmul(&a, &b, ta, tb).unwrap();
        assert_eq!(c.shape(), &[batch, m, n]);
        for i in 0..batch {
            let ai = &a.data()[i * m * k..(i + 1) * m * k];
            let bi = if shared { b.data() } else { &b.data()[i * k * n..(i + 1) * k * n] };
            let want = naive_matmul(ai, bi, m, k, n, ta, tb);
            assert!(close(&c.data()[i * m * n..(i + 1) * m * n], &want, 1e-6));
        }
    }
}

#[test]
fn conv2d_identity_and_average() {
    let x = rand_tensor::<f32>(&[1, 1, 4, 4], 1);
    let mut w = Tensor::zeros(&[1, 1, 3, 3]);
    w.data_mut()[4] = 1.0;
    let y = kernels::conv2d(&x, &w, None, ConvGeom::new(1, 1, 1)).unwrap();
    assert_eq!(y.data(), x.data());

    let ones = Tensor::<f32>::ones(&[1, 1, 3, 3]);
    let avg = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
    let y = kernels::conv2d(&ones, &avg, None, ConvGeom::new(1, 0, 1)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert!((y.item() - 1.0).abs() < 1e-6);
}

#[test]
fn conv2d_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..30 {
        let groups = [1, 2, 4][trial % 3];
        let depthwise = trial % 5 == 0;
        let cin = if depthwise { 4 } else { groups * rng.random_range(1..3) };
        let (cout, groups) = if depthwise {
            (cin, cin)
        } else {
            (groups * rng.random_range(1..3), groups)
        };
        let k = [1, 3][trial % 2];
        let stride = rng.random_range(1..3);
        let pad = if k == 3 { rng.random_range(0..2) } else { 0 };
        let (h, w) = (rng.random_range(3..9), rng.random_range(3..9));
        let n = rng.random_range(1..3);
        let x = rand_tensor::<f32>(&[n, cin, h, w], trial as u64);
        let wt = rand_tensor::<f32>(&[cout, cin / groups, k, k], 50 + trial as u64);
        let b = rand_tensor::<f32>(&[cout], 90 + trial as u64);
        let g = ConvGeom::new(stride, pad, groups);
        let y = kernels::conv2d(&x, &wt, Some(&b), g).unwrap();
        let want = naive_conv(&x, &wt, b.data(), g);
        assert!(close(y.data(), &want, 1e-6), "trial {trial}");
    }
}

#[test]
fn maxpool_cases() {
    let c = Tensor::<f32>::full(&[1, 1, 6, 6], 0.3);
    let (y, _) = kernels::maxpool2d(&c, 3, 2).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert!(y.data().iter().all(|&v| v == 0.3));

    let ramp = Tensor::<f32>::from_fn(&[1, 1, 8, 8], |i| i as f32);
    let (y, _) = kernels::maxpool2d(&ramp, 2, 2).unwrap();
    for oy in 0..4 {
        for ox in 0..4 {
            let br = ((2 * oy + 1) * 8 + 2 * ox + 1) as f32;
            assert_eq!(y.data()[oy * 4 + ox], br);
        }
    }

    let x = rand_tensor::<f32>(&[1, 8, 8, 8], 3);
    let (y, _) = kernels::maxpool2d(&x, 3, 2).unwrap();
    assert_eq!(y.shape(), &[1, 8, 4, 4]);
    assert_eq!(y.data(), naive_maxpool(&x, 3, 2).as_slice());
}

#[test]
fn softmax_cases() {
    let s = |v: Vec<f64>| {
        let n = v.len();
        kernels::softmax(&Tensor::new(&[n], v).unwrap(), 0).unwrap().into_data()
    };
    for p in s(vec![0., 0., 0.]) {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }
    let p = s(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]);
    for (got, want) in p.iter().zip([1. / 6., 2. / 6., 3. / 6.]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert_eq!(s(vec![1000., 1000.]), vec![0.5, 0.5]);
}

fn bilinear_oracle(src: &[f64], out: usize) -> Vec<f64> {
    let n = src.len();
    (0..out)
        .map(|x| {
            let pos = ((x as f64 + 0.5) * n as f64 / out as f64 - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let t = pos - i0 as f64;
            src[i0] * (1.0 - t) + src[i1] * t
        })
        .collect()
}

#[test]
fn bilinear_cases() {
    let x = rand_tensor::<f32>(&[1, 2, 5, 3], 4);
    assert_eq!(kernels::bilinear_resize(&x, 5, 3).unwrap().data(), x.data());

    let c = Tensor::<f32>::full(&[1, 1, 3, 3], 0.7);
    let y = kernels::bilinear_resize(&c, 7, 2).unwrap();
    assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));

    let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![0., 1., 0., 1.]).unwrap();
    let y = kernels::bilinear_resize(&x, 2, 4).unwrap();
    let row = bilinear_oracle(&[0., 1.], 4);
    assert_eq!(row, vec![0.0, 0.25, 0.75, 1.0]);
    for r in 0..2 {
        for (a, b) in y.data()[r * 4..r * 4 + 4].iter().zip(&row) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn layer_norm_cases() {
    let ln = |v: Vec<f64>| {
        let n = v.len();
        let x = Tensor::new(&[n], v).unwrap();
        let (y, _) = kernels::layer_norm(&x, 0, &Tensor::ones(&[n]), &Tensor::zeros(&[n]), 1e-6).unwrap();
        y.into_data()
    };
    assert!(ln(vec![2.0; 5]).iter().all(|&v| v == 0.0));
    let y = ln(vec![1.0, -1.0]);
    assert!((y[0] - 1.0).abs() < 1e-5 && (y[1] + 1.0).abs() < 1e-5);
    let v = rand_tensor::<f64>(&[64], 5).into_data();
    let y = ln(v);
    let mean = y.iter().sum::<f64>() / 64.0;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
    assert!(mean.abs() <= 1e-6);
    assert!((var - 1.0).abs() <= 1e-4);
}

// ------------------------------------------------------------ graph

#[test]
fn backward_sum_and_square() {
    let mut store = ParamStore::<f64>::new();
    let w0 = rand_tensor::<f64>(&[3, 2], 8);
    let id = store.add("w", w0.clone()).unwrap();

    let mut g = Graph::new();
    let w = g.param(&store, id).unwrap();
    let l = g.sum(w).unwrap();
    g.backward_into(l, &mut store).unwrap();
    assert!(store.get(id).grad.data().iter().all(|&v| v == 1.0));

    store.zero_grad();
    let mut g = Graph::new();
    let w = g.param(&store, id).unwrap();
    let sq = g.mul(w, w).unwrap();
    let l = g.sum(sq).unwrap();
    g.backward_into(l, &mut store).unwrap();
    for (gv, wv) in store.get(id).grad.data().iter().zip(w0.data()) {
        assert_eq!(*gv, 2.0 * wv);
    }

    // repeated backward accumulates
    g.backward_into(l, &mut store).unwrap();
    for (gv, wv) in store.get(id).grad.data().iter().zip(w0.data()) {
        assert_eq!(*gv, 4.0 * wv);
    }
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::ones(&[2])).unwrap();
    assert!(matches!(g.backward(x), Err(crate::error::Error::Contract(_))));
}

#[test]
fn non_finite_is_reported() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::zeros(&[2])).unwrap();
    assert!(matches!(g.recip(x), Err(crate::error::Error::NonFinite("recip"))));
}

#[test]
fn frozen_parameters_get_no_gradient() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add_buffer("stat", Tensor::ones(&[2])).unwrap();
    let mut g = Graph::new();
    let w = g.param(&store, id).unwrap();
    let x = g.input(Tensor::ones(&[2])).unwrap();
    let y = g.mul(w, x).unwrap();
    let l = g.sum(y).unwrap();
    let grads = g.backward_into(l, &mut store).unwrap();
    assert!(store.get(id).grad.data().iter().all(|&v| v == 0.0));
    assert!(grads.get(x).is_some());
}

// ------------------------------------------------------------ adam

#[test]
fn adam_zero_gradient_is_noop() {
    let mut store = ParamStore::<f32>::new();
    let id = store.add("w", Tensor::full(&[3], 0.5)).unwrap();
    let mut opt = Adam::new(0.9, 0.999);
    opt.step(&mut store, 0.1);
    assert_eq!(store.value(id).data(), &[0.5; 3]);
    assert_eq!(opt.step_count(), 1);
}

#[test]
fn adam_first_step_is_lr() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::scalar(1.0)).unwrap();
    store.get_mut(id).grad = Tensor::scalar(1.0);
    let mut opt = Adam::new(0.9, 0.999);
    opt.step(&mut store, 0.1);
    assert!((store.value(id).item() - 0.9).abs() < 1e-6);
}

#[test]
fn adam_converges_on_quadratic() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::scalar(0.0)).unwrap();
    let mut opt = Adam::new(0.9, 0.999);
    for _ in 0..200 {
        store.zero_grad();
        let mut g = Graph::new();
        let w = g.param(&store, id).unwrap();
        let d = g.add_scalar(w, -3.0).unwrap();
        let sq = g.mul(d, d).unwrap();
        let l = g.sum(sq).unwrap();
        g.backward_into(l, &mut store).unwrap();
        opt.step(&mut store, 0.1);
    }
    assert!((store.value(id).item() - 3.0).abs() < 1e-2, "{}", store.value(id).item());
}

// ------------------------------------------------------------ finite differences

fn fd<F>(inputs: Vec<Tensor<f64>>, f: F)
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> crate::error::Result<Var>,
{
    let mut store = ParamStore::new();
    let report = check(&mut store, &inputs, CheckOptions::default(), f).unwrap();
    assert!(report.passes(1e-5), "{report:?}");
}

/// Random projection to a scalar so every output coordinate matters.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> crate::error::Result<Var> {
    let w = rand_tensor::<f64>(g.shape(y), seed);
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

#[test]
fn fd_elementwise_ops() {
    let a = rand_tensor::<f64>(&[3, 4], 1);
    let b = positive_tensor(&[3, 4], 2);
    fd(vec![a.clone(), b.clone()], |g, _, v| {
        let s = g.add(v[0], v[1])?;
        let d = g.sub(s, v[1])?;
        let m = g.mul(d, v[1])?;
        let q = g.div(m, v[1])?;
        let r = g.recip(v[1])?;
        let e = g.mul(q, r)?;
        let p = g.powf(v[1], 1.7)?;
        let e = g.add(e, p)?;
        let e = g.mul_scalar(e, 0.3)?;
        let e = g.add_scalar(e, 2.0)?;
        project(g, e, 3)
    });
    fd(vec![a.clone()], |g, _, v| {
        let x = g.abs(v[0])?;
        let y = g.relu(v[0])?;
        let z = g.gelu(v[0])?;
        let w = g.clamp_min(v[0], 0.1)?;
        let s = g.smooth_l1(v[0], 0.5)?;
        let t = g.add(x, y)?;
        let t = g.add(t, z)?;
        let t = g.add(t, w)?;
        let t = g.add(t, s)?;
        project(g, t, 4)
    });
    fd(vec![a, Tensor::scalar(0.7), rand_tensor(&[4], 5)], |g, _, v| {
        let x = g.scale_by(v[0], v[1])?;
        let y = g.scale_axis(x, v[2], 1)?;
        let m = g.mean(y)?;
        let r = g.reshape(y, &[12])?;
        let s = project(g, r, 6)?;
        g.add(s, m)
    });
}

#[test]
fn fd_matmul_and_linear() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = rand_tensor::<f64>(&if ta { [2, 4, 3] } else { [2, 3, 4] }, 1);
        let b = rand_tensor::<f64>(&if tb { [2, 5, 4] } else { [2, 4, 5] }, 2);
        fd(vec![a, b], move |g, _, v| {
            let c = g.matmul(v[0], v[1], ta, tb)?;
            project(g, c, 3)
        });
    }
    let a = rand_tensor::<f64>(&[2, 3, 4], 1);
    let b = rand_tensor::<f64>(&[4, 5], 2);
    fd(vec![a, b], |g, _, v| {
        let c = g.matmul(v[0], v[1], false, false)?;
        project(g, c, 3)
    });
    let x = rand_tensor::<f64>(&[2, 3, 4], 4);
    let w = rand_tensor::<f64>(&[5, 4], 5);
    let b = rand_tensor::<f64>(&[5], 6);
    fd(vec![x, w, b], |g, _, v| {
        let y = g.linear(v[0], v[1], Some(v[2]))?;
        project(g, y, 7)
    });
}

#[test]
fn fd_conv2d() {
    for (groups, k, stride, pad) in [(1, 3, 1, 1), (2, 3, 2, 1), (4, 3, 1, 1), (4, 3, 2, 1), (4, 3, 2, 0), (1, 3, 2, 0), (1, 1, 1, 0), (2, 1, 1, 0)] {
        let x = rand_tensor::<f64>(&[2, 4, 5, 5], 1);
        let w = rand_tensor::<f64>(&[4, 4 / groups, k, k], 2);
        let b = rand_tensor::<f64>(&[4], 3);
        fd(vec![x, w, b], move |g, _, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), ConvGeom::new(stride, pad, groups))?;
            project(g, y, 4)
        });
    }
}

#[test]
fn fd_pooling_and_resize() {
    let x = rand_tensor::<f64>(&[1, 2, 6, 5], 1);
    fd(vec![x.clone()], |g, _, v| {
        let y = g.maxpool2d(v[0], 3, 2)?;
        project(g, y, 2)
    });
    fd(vec![x.clone()], |g, _, v| {
        let y = g.avgpool2(v[0])?;
        project(g, y, 3)
    });
    fd(vec![x.clone()], |g, _, v| {
        let y = g.global_avg_pool(v[0])?;
        project(g, y, 4)
    });
    for (oh, ow) in [(3, 3), (12, 10), (4, 7)] {
        fd(vec![x.clone()], move |g, _, v| {
            let y = g.resize(v[0], oh, ow)?;
            project(g, y, 5)
        });
    }
}

#[test]
fn fd_normalizations() {
    let x = rand_tensor::<f64>(&[2, 3, 4], 1);
    for axis in 0..3 {
        fd(vec![x.clone()], move |g, _, v| {
            let y = g.softmax(v[0], axis)?;
            project(g, y, 2)
        });
        fd(vec![x.clone()], move |g, _, v| {
            let y = g.l2_normalize(v[0], axis, 1e-12)?;
            project(g, y, 3)
        });
    }
    let len = 3;
    fd(
        vec![x.clone(), rand_tensor(&[len], 4), rand_tensor(&[len], 5)],
        |g, _, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1, 1e-6)?;
            project(g, y, 6)
        },
    );
    let x4 = rand_tensor::<f64>(&[2, 3, 3, 2], 7);
    for train in [true, false] {
        fd(
            vec![x4.clone(), positive_tensor(&[3], 8), rand_tensor(&[3], 9)],
            move |g, _, v| {
                let y = if train {
                    g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0
                } else {
                    g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 0.9], 1e-5)?
                };
                project(g, y, 10)
            },
        );
    }
}

#[test]
fn fd_filter_narrow_cross_entropy() {
    let x = rand_tensor::<f64>(&[1, 2, 7, 6], 1);
    let k: Vec<f64> = kernels::gaussian_kernel(3, 1.0);
    fd(vec![x.clone()], move |g, _, v| {
        let y = g.filter(v[0], &k)?;
        project(g, y, 2)
    });
    fd(vec![x], |g, _, v| {
        let y = g.narrow(v[0], 2, 2, 3)?;
        project(g, y, 3)
    });
    let logits = rand_tensor::<f64>(&[4, 5], 4);
    fd(vec![logits], |g, _, v| g.cross_entropy(v[0], &[0, 3, 4, 3]));
}

#[test]
fn fd_through_parameters() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    store.add("w", init::trunc_normal(&[4, 3], 0.5, &mut rng)).unwrap();
    store.add("b", init::trunc_normal(&[4], 0.5, &mut rng)).unwrap();
    let x = rand_tensor::<f64>(&[2, 3], 4);
    let report = check(&mut store, &[x], CheckOptions::default(), |g, s, v| {
        let w = g.param(s, s.id("w").unwrap())?;
        let b = g.param(s, s.id("b").unwrap())?;
        let y = g.linear(v[0], w, Some(b))?;
        let y = g.gelu(y)?;
        project(g, y, 5)
    })
    .unwrap();
    assert!(report.passes(1e-5), "{report:?}");
    assert_eq!(report.checked, 6 + 12 + 4);
}

#[test]
fn ops_are_deterministic() {
    let run = || {
        let x = rand_tensor::<f32>(&[1, 4, 9, 9], 1);
        let w = rand_tensor::<f32>(&[8, 4, 3, 3], 2);
        let y = kernels::conv2d(&x, &w, None, ConvGeom::new(1, 1, 1)).unwrap();
        let y = kernels::bilinear_resize(&y, 5, 5).unwrap();
        kernels::softmax(&y, 1).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

proptest! {
    #[test]
    fn softmax_normalized_and_shift_invariant(
        v in prop::collection::vec(-20.0f64..20.0, 1..16),
        shift in -50.0f64..50.0,
    ) {
        let n = v.len();
        let x = Tensor::new(&[n], v.clone()).unwrap();
        let p = kernels::softmax(&x, 0).unwrap();
        prop_assert!((p.sum() - 1.0).abs() <= 1e-5);
        let xs = Tensor::new(&[n], v.iter().map(|e| e + shift).collect()).unwrap();
        let q = kernels::softmax(&xs, 0).unwrap();
        prop_assert!(p.max_abs_diff(&q) <= 1e-6);
    }

    #[test]
    fn resize_of_constant_is_constant(c in 0.0f64..1.0, h in 1usize..7, w in 1usize..7, oh in 1usize..9, ow in 1usize..9) {
        let x = Tensor::full(&[1, 1, h, w], c);
        let y = kernels::bilinear_resize(&x, oh, ow).unwrap();
        prop_assert!(y.data().iter().all(|v| (v - c).abs() < 1e-12));
    }
}
