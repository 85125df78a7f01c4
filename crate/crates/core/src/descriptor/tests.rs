use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::degrade::Image;
use crate::network::DESCRIPTOR_DIM;
use crate::numerics::gradcheck::{check, CheckOptions};
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::scene::Scene;

fn tiny_cfg() -> EmbedderConfig {
    EmbedderConfig {
        input_size: 32,
        widths: [2, 3, 4, 4],
        head_channels: 6,
        ..EmbedderConfig::desk()
    }
}

fn rand_img(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
}

#[test]
fn composite_vectors_are_means() {
    let wv = WordVectors::fallback();
    for s in Scene::ALL {
        let parts = s.components();
        let raw = wv.raw(s);
        for (i, v) in raw.iter().enumerate() {
            let want = parts.iter().map(|&p| wv.vectors[p][i]).sum::<f64>() / parts.len() as f64;
            assert_eq!(*v, want);
        }
    }
    let lh = wv.raw(Scene::LowHaze);
    let (l, h) = (wv.raw(Scene::Low), wv.raw(Scene::Haze));
    for i in 0..WORD_DIM {
        assert_eq!(lh[i], (l[i] + h[i]) / 2.0);
    }
}

#[test]
fn fallback_vectors_are_unit_and_stable() {
    let a = WordVectors::fallback();
    assert_eq!(a, WordVectors::fallback());
    for v in &a.vectors {
        assert_eq!(v.len(), WORD_DIM);
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert_ne!(a.vectors[0], a.vectors[1]);
}

#[test]
fn word_file_parsing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vec.txt");
    let row = |w: &str, x: f64| format!("{w} {}\n", vec![format!("{x}"); WORD_DIM].join(" "));
    let mut text = row("the", 9.0);
    for (i, w) in crate::scene::BASE_WORDS.iter().enumerate() {
        text += &row(w, i as f64 + 0.5);
    }
    std::fs::write(&path, &text).unwrap();
    let wv = WordVectors::from_file(&path).unwrap();
    assert_eq!(wv.vectors[3][7], 3.5);

    std::fs::write(&path, row("clear", 1.0) + &row("low", 1.0)).unwrap();
    assert!(WordVectors::from_file(&path).is_err());
    std::fs::write(&path, "clear 1 2 3\n").unwrap();
    assert!(WordVectors::from_file(&path).is_err());
}

#[test]
fn identity_mlp_passes_raw_vectors_through() {
    let mut store = ParamStore::<f64>::new();
    let m = SceneEmbedder::new(tiny_cfg(), &mut store, 0).unwrap();
    store
        .set_value(m.text.w, Tensor::from_fn(&[DESCRIPTOR_DIM, WORD_DIM], |i| {
            f64::from(u8::from(i / WORD_DIM == i % WORD_DIM))
        }))
        .unwrap();
    let mut wv = WordVectors::fallback();
    for v in &mut wv.vectors {
        v.iter_mut().for_each(|x| *x = x.abs() + 0.01);
    }
    let table = m.text_table(&store, &wv).unwrap();
    for (k, s) in Scene::ALL.iter().enumerate() {
        let raw = wv.raw(*s);
        let row = &table.data()[k * DESCRIPTOR_DIM..(k + 1) * DESCRIPTOR_DIM];
        assert_eq!(&row[..WORD_DIM], &raw[..]);
        assert!(row[WORD_DIM..].iter().all(|v| *v == 0.0));
    }
}

#[test]
fn similarity_analytic_cases() {
    let mut text = vec![vec![0.0; 12]; 12];
    for (i, t) in text.iter_mut().enumerate() {
        t[i] = 1.0;
    }
    let mut ev = vec![0.0; 12];
    ev[4] = 2.5;
    let p = similarity_scores(&ev, &text, 1.0).unwrap();
    let want = std::f64::consts::E / (std::f64::consts::E + 11.0);
    assert!((p[4] - want).abs() < 1e-12);
    assert!((p[4] - 0.198).abs() < 1e-3);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let text: Vec<Vec<f64>> = (0..12).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ev: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = similarity_scores(&ev, &text, 3.0).unwrap();
    let b = similarity_scores(&ev.iter().map(|v| v * 7.5).collect::<Vec<_>>(), &text, 3.0).unwrap();
    for i in 0..12 {
        assert!((a[i] - b[i]).abs() < 1e-12);
    }
    let hot = similarity_scores(&ev, &text, 1e4).unwrap();
    assert!(hot.iter().cloned().fold(0.0, f64::max) > 1.0 - 1e-9);
    let am = |p: &[f64; 12]| Classification::from_probs(*p).scene;
    assert_eq!(am(&a), am(&hot));

    assert!(similarity_scores(&vec![0.0; 8], &text, 1.0).is_err());
    let mut bad = text.clone();
    bad[3] = vec![0.0; 8];
    assert!(similarity_scores(&ev, &bad, 1.0).is_err());
}

#[test]
fn ties_go_to_earlier_label() {
    let c = Classification::from_probs([1.0 / 12.0; 12]);
    assert_eq!(c.scene, Scene::Clear);
    let mut p = [0.0; 12];
    p[5] = 0.5;
    p[9] = 0.5;
    assert_eq!(Classification::from_probs(p).scene, Scene::LowHaze);
}

#[test]
fn visual_embedding_properties() {
    let mut store = ParamStore::<f32>::new();
    let m = SceneEmbedder::new(EmbedderConfig::desk(), &mut store, 3).unwrap();
    let img = rand_img(50, 70, 1);
    let a = m.embed_image(&store, &img).unwrap();
    let b = m.embed_image(&store, &img).unwrap();
    assert_eq!(a.len(), DESCRIPTOR_DIM);
    assert_eq!(a, b);
    assert_eq!(m.embed_image(&store, &rand_img(128, 96, 2)).unwrap().len(), DESCRIPTOR_DIM);
    let zero = m.embed_image(&store, &Image::filled(96, 96, [0.0; 3]).unwrap()).unwrap();
    assert!(zero.iter().all(|v| v.is_finite()));
}

#[test]
fn classify_agrees_with_graph_probabilities() {
    let mut store = ParamStore::<f64>::new();
    let m = SceneEmbedder::new(tiny_cfg(), &mut store, 4).unwrap();
    let wv = WordVectors::fallback();
    let text = m.text_table(&store, &wv).unwrap();
    let img = rand_img(32, 32, 5);
    let c = m.classify(&store, &text, &img).unwrap();

    let mut g = Graph::inference();
    let x = g.constant(img.to_tensor()).unwrap();
    let (ev, _) = m.visual(&mut g, &store, x, None).unwrap();
    let et = g.constant(text).unwrap();
    let logits = m.logits(&mut g, &store, ev, et).unwrap();
    let soft = g.softmax(logits, 1).unwrap();
    for (a, b) in c.probabilities.iter().zip(g.value(soft).data()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    let best = (0..12).fold(0, |b, i| if c.probabilities[i] > c.probabilities[b] { i } else { b });
    assert_eq!(c.scene.index(), best);
}

#[test]
fn running_stats_follow_momentum() {
    let mut store = ParamStore::<f64>::new();
    let m = SceneEmbedder::new(tiny_cfg(), &mut store, 0).unwrap();
    let stats = BatchStats {
        mean: vec![1.0; 6],
        var: vec![3.0; 6],
        count: 4,
    };
    m.update_running_stats(&mut store, &stats);
    assert!((store.value(m.bn_mean).data()[0] - 0.1).abs() < 1e-12);
    assert!((store.value(m.bn_var).data()[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-12);
}

fn color_set(n_per: usize, classes: &[Scene]) -> Vec<Sample<f32>> {
    let mut out = Vec::new();
    for (k, s) in classes.iter().enumerate() {
        let hue = k as f32 / classes.len() as f32;
        for j in 0..n_per {
            let rgb = [hue, 1.0 - hue, (0.3 + 0.1 * j as f32).min(1.0) * (k % 2) as f32];
            out.push((Image::filled(32, 32, rgb).unwrap().to_tensor(), *s));
        }
    }
    out
}

#[test]
fn zero_epochs_leave_weights_untouched() {
    let mut store = ParamStore::<f32>::new();
    let m = SceneEmbedder::new(tiny_cfg(), &mut store, 0).unwrap();
    let before: Vec<_> = store.iter().map(|(_, p)| p.value.clone()).collect();
    let cfg = EmbedTrainConfig {
        epochs: 0,
        ..EmbedTrainConfig::desk()
    };
    let logs = train_embedders(&m, &mut store, &WordVectors::fallback(), &color_set(1, &Scene::ALL), &cfg, |_| {}).unwrap();
    assert!(logs.is_empty());
    for ((_, p), b) in store.iter().zip(&before) {
        assert_eq!(p.value.data(), b.data());
    }
}

#[test]
fn separable_colors_are_learned() {
    let mut store = ParamStore::<f32>::new();
    let m = SceneEmbedder::new(tiny_cfg(), &mut store, 0).unwrap();
    let classes = &Scene::ALL[..6];
    let data = color_set(4, classes);
    let cfg = EmbedTrainConfig {
        epochs: 120,
        lr: 1e-2,
        lr_step_epochs: 60,
        batch_size: 24,
        ..EmbedTrainConfig::desk()
    };
    let logs = train_embedders(&m, &mut store, &WordVectors::fallback(), &data, &cfg, |_| {}).unwrap();
    let first = logs[0].first_batch_loss;
    assert!((first - 12f64.ln()).abs() <= 0.3, "first loss {first}");
    let (acc, _) = evaluate_classifier(&m, &store, &WordVectors::fallback(), &data).unwrap();
    assert_eq!(acc, 1.0, "final log {:?}", logs.last());
}

#[test]
fn fd_cross_entropy_over_all_embedder_parameters() {
    let mut store = ParamStore::<f64>::new();
    let m = SceneEmbedder::new(tiny_cfg(), &mut store, 9).unwrap();
    let raw = WordVectors::fallback().raw_matrix::<f64>();
    let x = Tensor::cat0(&[rand_img(32, 32, 1).to_tensor(), rand_img(32, 32, 2).to_tensor()]).unwrap();
    let report = check(&mut store, &[x], CheckOptions::default(), |g, s, v| {
        let rv = g.constant(raw.clone())?;
        let et = m.text_embeddings(g, s, rv)?;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (ev, _) = m.visual(g, s, v[0], Some(&mut rng))?;
        let logits = m.logits(g, s, ev, et)?;
        g.cross_entropy(logits, &[3, 10])
    })
    .unwrap();
    assert!(report.passes(1e-5), "{report:?}");
    assert!(report.checked > 0);
}
