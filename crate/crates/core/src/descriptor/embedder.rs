use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{WordVectors, WORD_DIM};
use crate::degrade::Image;
use crate::error::{contract_err, dim_err, Result};
use crate::network::{Conv, ConvSpec, Linear, DESCRIPTOR_DIM};
use crate::numerics::{r, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::scene::Scene;

const BN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

/// Sizes of the text and visual embedders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    /// Images are resized to `input_size × input_size` before the backbone.
    pub input_size: usize,
    /// Output widths of the four backbone stages (a stride-2 and a stride-1 conv each).
    pub widths: [usize; 4],
    pub head_channels: usize,
    pub dropout: f64,
    pub delta_init: f64,
    pub bn_momentum: f64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EmbedderConfig {
    pub fn desk() -> Self {
        Self {
            input_size: 96,
            widths: [16, 32, 64, 128],
            head_channels: 1024,
            dropout: 0.35,
            delta_init: 10.0,
            bn_momentum: 0.1,
        }
    }

    /// 224 px input and ResNet-18 stage widths.
    pub fn paper() -> Self {
        Self {
            input_size: 224,
            widths: [64, 128, 256, 512],
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }
}

/// Batch-norm statistics observed on one training batch.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per channel that produced the statistics.
    pub count: usize,
}

/// Text MLP plus visual CNN sharing one 324-d embedding space, and the
/// learnable temperature δ of the cosine softmax.
#[derive(Clone, Debug)]
pub struct SceneEmbedder {
    pub cfg: EmbedderConfig,
    pub text: Linear,
    pub backbone: Vec<Conv>,
    pub head_conv: Conv,
    pub bn_gain: ParamId,
    pub bn_bias: ParamId,
    pub bn_mean: ParamId,
    pub bn_var: ParamId,
    pub head_linear: Linear,
    pub delta: ParamId,
}

impl SceneEmbedder {
    pub fn new<T: Real>(cfg: EmbedderConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        if cfg.input_size < 16 || !(0.0..1.0).contains(&cfg.dropout) {
            return Err(contract_err!(
                "embedder input_size must be >= 16 and dropout in [0,1), got {} and {}",
                cfg.input_size,
                cfg.dropout
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = Linear::new_he(store, "text.mlp", WORD_DIM, DESCRIPTOR_DIM, &mut rng)?;
        let mut cin = 3;
        let mut backbone = Vec::new();
        for (i, &c) in cfg.widths.iter().enumerate() {
            for (j, stride) in [2, 1].into_iter().enumerate() {
                let spec = ConvSpec {
                    cin,
                    cout: c,
                    k: 3,
                    stride,
                    groups: 1,
                    bias: true,
                };
                let name = format!("visual.stage{}.conv{}", i + 1, j + 1);
                backbone.push(Conv::new_he(store, &name, spec, &mut rng)?);
                cin = c;
            }
        }
        let hc = cfg.head_channels;
        let head_conv = Conv::new_he(store, "visual.head.conv", ConvSpec::pointwise(cin, hc), &mut rng)?;
        let bn_gain = store.add("visual.head.bn.gain", Tensor::ones(&[hc]))?;
        let bn_bias = store.add("visual.head.bn.bias", Tensor::zeros(&[hc]))?;
        let bn_mean = store.add_buffer("visual.head.bn.running_mean", Tensor::zeros(&[hc]))?;
        let bn_var = store.add_buffer("visual.head.bn.running_var", Tensor::ones(&[hc]))?;
        let head_linear = Linear::new(store, "visual.head.linear", hc, DESCRIPTOR_DIM, &mut rng)?;
        let delta = store.add("delta", Tensor::full(&[1], T::from_f64_lossy(cfg.delta_init)))?;
        Ok(Self {
            cfg,
            text,
            backbone,
            head_conv,
            bn_gain,
            bn_bias,
            bn_mean,
            bn_var,
            head_linear,
            delta,
        })
    }

    /// Refined text embeddings `[12, 324]` from raw `[12, 300]` vectors.
    pub fn text_embeddings<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, raw: Var) -> Result<Var> {
        let h = self.text.forward(g, s, raw)?;
        g.relu(h)
    }

    /// Refined text embeddings as a plain tensor.
    pub fn text_table<T: Real>(&self, s: &ParamStore<T>, words: &WordVectors) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let raw = g.constant(words.raw_matrix())?;
        let e = self.text_embeddings(&mut g, s, raw)?;
        Ok(g.value(e).clone())
    }

    /// Visual embeddings `[N, 324]`. With `train` set, batch statistics and
    /// dropout (drawn from the given RNG) are used and the statistics returned.
    pub fn visual<T: Real>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
        train: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(dim_err!("visual embedder input must be [N,3,H,W], got {shape:?}"));
        }
        let n = self.cfg.input_size;
        let mut h = if shape[2] == n && shape[3] == n { x } else { g.resize(x, n, n)? };
        for conv in &self.backbone {
            h = conv.forward(g, s, h)?;
            h = g.relu(h)?;
        }
        h = self.head_conv.forward(g, s, h)?;
        let gain = g.param(s, self.bn_gain)?;
        let bias = g.param(s, self.bn_bias)?;
        let mut stats = None;
        h = match train {
            Some(rng) => {
                let (out, mean, var) = g.batch_norm_train(h, gain, bias, r(BN_EPS))?;
                let sh = g.shape(out);
                stats = Some(BatchStats {
                    mean,
                    var,
                    count: sh[0] * sh[2] * sh[3],
                });
                let out = g.relu(out)?;
                self.dropout(g, out, rng)?
            }
            None => {
                let (m, v) = (s.value(self.bn_mean).data().to_vec(), s.value(self.bn_var).data().to_vec());
                let out = g.batch_norm_eval(h, gain, bias, &m, &v, r(BN_EPS))?;
                g.relu(out)?
            }
        };
        let pooled = g.global_avg_pool(h)?;
        let pooled = g.reshape(pooled, &[shape[0], self.cfg.head_channels])?;
        Ok((self.head_linear.forward(g, s, pooled)?, stats))
    }

    fn dropout<T: Real>(&self, g: &mut Graph<T>, x: Var, rng: &mut dyn rand::RngCore) -> Result<Var> {
        let p = self.cfg.dropout;
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let mask = Tensor::from_fn(g.shape(x), |_| if rng.random::<f64>() < p { T::zero() } else { keep });
        let m = g.constant(mask)?;
        g.mul(x, m)
    }

    /// Cosine-similarity logits `δ·cos(e_v, e_t)`, shape `[N, 12]`.
    pub fn logits<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, ev: Var, et: Var) -> Result<Var> {
        let a = g.l2_normalize(ev, 1, r(NORM_EPS))?;
        let b = g.l2_normalize(et, 1, r(NORM_EPS))?;
        let cos = g.matmul(a, b, false, true)?;
        let delta = g.param(s, self.delta)?;
        g.scale_by(cos, delta)
    }

    /// Folds one batch's statistics into the running estimates (unbiased variance).
    pub fn update_running_stats<T: Real>(&self, s: &mut ParamStore<T>, stats: &BatchStats<T>) {
        let m = T::from_f64_lossy(self.cfg.bn_momentum);
        let keep = T::one() - m;
        let corr = if stats.count > 1 {
            T::from_f64_lossy(stats.count as f64 / (stats.count - 1) as f64)
        } else {
            T::one()
        };
        for (r, &b) in s.get_mut(self.bn_mean).value.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in s.get_mut(self.bn_var).value.data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + m * b * corr;
        }
    }

    /// Inference-mode visual embedding of one image.
    pub fn embed_image<T: Real>(&self, s: &ParamStore<T>, img: &Image) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let x = g.constant(img.to_tensor())?;
        let (e, _) = self.visual(&mut g, s, x, None)?;
        Ok(g.value(e).data().iter().map(|v| v.to_f64_lossy()).collect())
    }

    pub fn delta_value<T: Real>(&self, s: &ParamStore<T>) -> f64 {
        s.value(self.delta).data()[0].to_f64_lossy()
    }

    /// Label with the highest similarity and all twelve probabilities.
    pub fn classify<T: Real>(&self, s: &ParamStore<T>, text: &Tensor<T>, img: &Image) -> Result<Classification> {
        let ev = self.embed_image(s, img)?;
        let rows = table_rows(text)?;
        let probs = similarity_scores(&ev, &rows, self.delta_value(s))?;
        Ok(Classification::from_probs(probs))
    }
}

fn table_rows<T: Real>(text: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
    if text.shape() != [12, DESCRIPTOR_DIM] {
        return Err(dim_err!("text table must be [12, {DESCRIPTOR_DIM}], got {:?}", text.shape()));
    }
    Ok(text
        .data()
        .chunks(DESCRIPTOR_DIM)
        .map(|c| c.iter().map(|v| v.to_f64_lossy()).collect())
        .collect())
}

/// Softmax over `δ·cos(e_v, e_t)` for every text embedding.
pub fn similarity_scores(ev: &[f64], text: &[Vec<f64>], delta: f64) -> Result<[f64; 12]> {
    if text.len() != 12 {
        return Err(dim_err!("expected 12 text embeddings, got {}", text.len()));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = norm(ev);
    if nv == 0.0 {
        return Err(contract_err!("visual embedding has zero norm"));
    }
    let mut logits = [0.0; 12];
    for (l, t) in logits.iter_mut().zip(text) {
        if t.len() != ev.len() {
            return Err(dim_err!("embedding lengths differ: {} vs {}", t.len(), ev.len()));
        }
        let nt = norm(t);
        if nt == 0.0 {
            return Err(contract_err!("text embedding has zero norm"));
        }
        *l = delta * ev.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() / (nv * nt);
    }
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = logits.map(|l| (l - mx).exp());
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    Ok(probs)
}

/// Outcome of scene classification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub scene: Scene,
    pub probabilities: [f64; 12],
}

impl Classification {
    /// Argmax with ties resolved toward the earlier label.
    pub fn from_probs(probabilities: [f64; 12]) -> Self {
        let mut best = 0;
        for (i, &p) in probabilities.iter().enumerate() {
            if p > probabilities[best] {
                best = i;
            }
        }
        Self {
            scene: Scene::ALL[best],
            probabilities,
        }
    }
}
