use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{BlockConfig, Sdtb};
use super::layers::{Conv, ConvSpec};
use crate::error::{dim_err, Result};
use crate::numerics::{Graph, ParamStore, Real, Tensor, Var};

pub const DESCRIPTOR_DIM: usize = 324;

/// Width and attention settings of the restoration network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Channel widths of the four resolution levels.
    pub widths: [usize; 4],
    pub heads: usize,
    pub query_tokens: usize,
    pub descriptor_dim: usize,
    pub ffn_expansion: f64,
}

impl NetConfig {
    /// Full-size configuration (32/64/128/256, 8 heads, 8×8 key grid).
    pub fn paper() -> Self {
        Self {
            widths: [32, 64, 128, 256],
            heads: 8,
            query_tokens: 64,
            descriptor_dim: DESCRIPTOR_DIM,
            ffn_expansion: 2.66,
        }
    }

    /// Small configuration for CPU experiments (8/16/32/64, 4 heads, 4×4 key grid).
    pub fn desk() -> Self {
        Self {
            widths: [8, 16, 32, 64],
            heads: 4,
            query_tokens: 16,
            descriptor_dim: DESCRIPTOR_DIM,
            ffn_expansion: 2.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    fn block(&self, level: usize) -> BlockConfig {
        BlockConfig {
            channels: self.widths[level],
            heads: self.heads,
            descriptor_dim: self.descriptor_dim,
            query_tokens: self.query_tokens,
            ffn_expansion: self.ffn_expansion,
        }
    }
}

/// Encoder–decoder of ten descriptor-guided transformer blocks with three
/// skip additions, a bottleneck addition and a global residual.
#[derive(Clone, Debug)]
pub struct RestoreNet {
    pub cfg: NetConfig,
    pub stem: Conv,
    /// Blocks in execution order; levels 0,1,2,3,3,3,3,2,1,0.
    pub blocks: Vec<Sdtb>,
    pub down: Vec<Conv>,
    pub up: Vec<Conv>,
    pub tail: Conv,
}

/// Resolution level of each of the ten blocks.
pub const BLOCK_LEVELS: [usize; 10] = [0, 1, 2, 3, 3, 3, 3, 2, 1, 0];

impl RestoreNet {
    /// Registers all parameters in `store`; the tail starts at zero so the
    /// untrained network is the identity map.
    pub fn new<T: Real>(cfg: NetConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = cfg.widths;
        let stem = Conv::new(store, "stem", ConvSpec::pointwise(3, w[0]).with_bias(), &mut rng)?;
        let mut blocks = Vec::with_capacity(10);
        for (i, &lvl) in BLOCK_LEVELS.iter().enumerate() {
            blocks.push(Sdtb::new(store, &format!("sdtb{}", i + 1), cfg.block(lvl), &mut rng)?);
        }
        let mut down = Vec::new();
        let mut up = Vec::new();
        for l in 0..3 {
            down.push(Conv::new(
                store,
                &format!("down{}", l + 1),
                ConvSpec::pointwise(w[l], w[l + 1]).with_bias(),
                &mut rng,
            )?);
        }
        for l in (0..3).rev() {
            up.push(Conv::new(
                store,
                &format!("up{}", 3 - l),
                ConvSpec::pointwise(w[l + 1], w[l]).with_bias(),
                &mut rng,
            )?);
        }
        let tail = Conv::new(store, "tail", ConvSpec::pointwise(w[0], 3).with_bias(), &mut rng)?;
        let tail_w = store.value(tail.w).shape().to_vec();
        store.set_value(tail.w, Tensor::zeros(&tail_w))?;
        Ok(Self {
            cfg,
            stem,
            blocks,
            down,
            up,
            tail,
        })
    }

    /// `x`: `[N,3,H,W]` with `H` and `W` divisible by 8; `desc`: `[N, 324]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, desc: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(dim_err!("restorer input must be [N,3,H,W], got {shape:?}"));
        }
        if shape[2] % 8 != 0 || shape[3] % 8 != 0 {
            return Err(dim_err!(
                "spatial size {}x{} must be divisible by 8; pad the input first",
                shape[2],
                shape[3]
            ));
        }
        let b = &self.blocks;
        let f = self.stem.forward(g, s, x)?;
        let e1 = b[0].forward(g, s, f, desc)?;
        let d1 = self.downsample(g, s, e1, 0)?;
        let e2 = b[1].forward(g, s, d1, desc)?;
        let d2 = self.downsample(g, s, e2, 1)?;
        let e3 = b[2].forward(g, s, d2, desc)?;
        let d3 = self.downsample(g, s, e3, 2)?;
        let m = b[3].forward(g, s, d3, desc)?;
        let m = b[4].forward(g, s, m, desc)?;
        let m = b[5].forward(g, s, m, desc)?;
        let m = g.add(d3, m)?;
        let m = b[6].forward(g, s, m, desc)?;
        let u = self.upsample(g, s, m, e3, 0)?;
        let u = b[7].forward(g, s, u, desc)?;
        let u = self.upsample(g, s, u, e2, 1)?;
        let u = b[8].forward(g, s, u, desc)?;
        let u = self.upsample(g, s, u, e1, 2)?;
        let u = b[9].forward(g, s, u, desc)?;
        let out = self.tail.forward(g, s, u)?;
        g.add(out, x)
    }

    fn downsample<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, i: usize) -> Result<Var> {
        let p = g.maxpool2d(x, 3, 2)?;
        self.down[i].forward(g, s, p)
    }

    fn upsample<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, skip: Var, i: usize) -> Result<Var> {
        let (h, w) = (g.shape(skip)[2], g.shape(skip)[3]);
        let r = g.resize(x, h, w)?;
        let c = self.up[i].forward(g, s, r)?;
        g.add(c, skip)
    }
}

/// Trainable parameter counts grouped by top-level module name.
pub fn param_breakdown<T: Real>(store: &ParamStore<T>) -> Vec<(String, usize)> {
    let mut groups: Vec<(String, usize)> = Vec::new();
    for (_, p) in store.iter().filter(|(_, p)| p.trainable) {
        let head = p.name.split('.').next().unwrap_or("").to_string();
        match groups.iter_mut().find(|(n, _)| *n == head) {
            Some((_, c)) => *c += p.value.numel(),
            None => groups.push((head, p.value.numel())),
        }
    }
    groups
}
