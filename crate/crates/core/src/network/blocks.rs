use rand::Rng;

use super::layers::{ChannelNorm, Conv, ConvSpec, Linear};
use crate::error::{contract_err, dim_err, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Hyper-parameters of one transformer block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockConfig {
    pub channels: usize,
    pub heads: usize,
    pub descriptor_dim: usize,
    pub query_tokens: usize,
    pub ffn_expansion: f64,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(contract_err!(
                "channels {} not divisible by heads {}",
                self.channels,
                self.heads
            ));
        }
        let side = self.grid_side();
        if side * side != self.query_tokens || side == 0 {
            return Err(contract_err!("query_tokens {} is not a perfect square", self.query_tokens));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn grid_side(&self) -> usize {
        (self.query_tokens as f64).sqrt().round() as usize
    }

    pub fn ffn_hidden(&self) -> usize {
        (self.channels as f64 * self.ffn_expansion).floor() as usize
    }
}

fn nchw(g: &Graph<impl Real>, x: Var) -> Result<(usize, usize, usize, usize)> {
    match *g.shape(x) {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(dim_err!("expected NCHW features, got {s:?}")),
    }
}

/// Scales `[N·heads, d, d]` logits by `1/λ_head`.
fn temperature<T: Real>(
    g: &mut Graph<T>,
    s: &ParamStore<T>,
    logits: Var,
    lambda: ParamId,
    n: usize,
    heads: usize,
) -> Result<Var> {
    let d2 = g.value(logits).numel() / (n * heads);
    let per_head = g.reshape(logits, &[n, heads, d2])?;
    let lam = g.param(s, lambda)?;
    let inv = g.recip(lam)?;
    let scaled = g.scale_axis(per_head, inv, 1)?;
    let shape = g.shape(logits).to_vec();
    g.reshape(scaled, &shape)
}

/// Descriptor-guided cross attention.
///
/// The descriptor is projected to one value per channel and broadcast over
/// the key tokens; keys come from features resized to a fixed square grid,
/// values from the full-resolution features. Attention is over channels.
#[derive(Clone, Debug)]
pub struct Sdca {
    pub cfg: BlockConfig,
    pub norm: ChannelNorm,
    pub q: Linear,
    pub k_point: Conv,
    pub k_dw: Conv,
    pub v_point: Conv,
    pub v_dw: Conv,
    pub proj: Conv,
    pub lambda: ParamId,
}

impl Sdca {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        Ok(Self {
            cfg,
            norm: ChannelNorm::new(store, &format!("{name}.norm"), c)?,
            q: Linear::new(store, &format!("{name}.q"), cfg.descriptor_dim, c, rng)?,
            k_point: Conv::new(store, &format!("{name}.k1"), ConvSpec::pointwise(c, c), rng)?,
            k_dw: Conv::new(store, &format!("{name}.k_dw"), ConvSpec::depthwise(c), rng)?,
            v_point: Conv::new(store, &format!("{name}.v1"), ConvSpec::pointwise(c, c), rng)?,
            v_dw: Conv::new(store, &format!("{name}.v_dw"), ConvSpec::depthwise(c), rng)?,
            proj: Conv::new(store, &format!("{name}.proj"), ConvSpec::pointwise(c, c), rng)?,
            lambda: store.add(
                &format!("{name}.lambda"),
                Tensor::full(&[cfg.heads], T::from_f64_lossy((cfg.query_tokens as f64).sqrt())),
            )?,
        })
    }

    /// Output and the `[N·heads, d, d]` attention map.
    pub fn forward_with_attention<T: Real>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
        desc: Var,
    ) -> Result<(Var, Var)> {
        let (n, c, h, w) = nchw(g, x)?;
        if c != self.cfg.channels {
            return Err(dim_err!("SDCA expects {} channels, got {c}", self.cfg.channels));
        }
        if g.shape(desc) != [n, self.cfg.descriptor_dim] {
            return Err(dim_err!(
                "descriptor must be [{n}, {}], got {:?}",
                self.cfg.descriptor_dim,
                g.shape(desc)
            ));
        }
        let (heads, d, t) = (self.cfg.heads, self.cfg.head_dim(), self.cfg.query_tokens);
        let side = self.cfg.grid_side();
        let xn = self.norm.forward(g, s, x)?;

        let qv = self.q.forward(g, s, desc)?;
        let qv = g.reshape(qv, &[n * heads, d, 1])?;
        let ones = g.constant(Tensor::ones(&[1, t]))?;
        let q = g.matmul(qv, ones, false, false)?;

        let small = g.resize(xn, side, side)?;
        let k = self.k_point.forward(g, s, small)?;
        let k = self.k_dw.forward(g, s, k)?;
        let k = g.reshape(k, &[n * heads, d, t])?;

        let v = self.v_point.forward(g, s, xn)?;
        let v = self.v_dw.forward(g, s, v)?;
        let v = g.reshape(v, &[n * heads, d, h * w])?;

        let logits = g.matmul(q, k, false, true)?;
        let logits = temperature(g, s, logits, self.lambda, n, heads)?;
        let attn = g.softmax(logits, 2)?;
        let out = g.matmul(attn, v, false, false)?;
        let out = g.reshape(out, &[n, c, h, w])?;
        let out = self.proj.forward(g, s, out)?;
        Ok((g.add(out, x)?, attn))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, desc: Var) -> Result<Var> {
        Ok(self.forward_with_attention(g, s, x, desc)?.0)
    }
}

/// Channel-wise (transposed) multi-head self attention.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub cfg: BlockConfig,
    pub norm: ChannelNorm,
    pub qkv_point: Conv,
    pub qkv_dw: Conv,
    pub proj: Conv,
    pub lambda: ParamId,
}

impl SelfAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        Ok(Self {
            cfg,
            norm: ChannelNorm::new(store, &format!("{name}.norm"), c)?,
            qkv_point: Conv::new(store, &format!("{name}.qkv1"), ConvSpec::pointwise(c, 3 * c), rng)?,
            qkv_dw: Conv::new(store, &format!("{name}.qkv_dw"), ConvSpec::depthwise(3 * c), rng)?,
            proj: Conv::new(store, &format!("{name}.proj"), ConvSpec::pointwise(c, c), rng)?,
            lambda: store.add(&format!("{name}.lambda"), Tensor::ones(&[cfg.heads]))?,
        })
    }

    pub fn forward_with_attention<T: Real>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
    ) -> Result<(Var, Var)> {
        let (n, c, h, w) = nchw(g, x)?;
        if c != self.cfg.channels {
            return Err(dim_err!("SA expects {} channels, got {c}", self.cfg.channels));
        }
        let (heads, d) = (self.cfg.heads, self.cfg.head_dim());
        let xn = self.norm.forward(g, s, x)?;
        let qkv = self.qkv_point.forward(g, s, xn)?;
        let qkv = self.qkv_dw.forward(g, s, qkv)?;
        let mut parts = [None; 3];
        for (i, p) in parts.iter_mut().enumerate() {
            let t = g.narrow(qkv, 1, i * c, c)?;
            *p = Some(g.reshape(t, &[n * heads, d, h * w])?);
        }
        let [q, k, v] = parts.map(|p| p.expect("filled"));
        let eps = T::from_f64_lossy(1e-12);
        let q = g.l2_normalize(q, 2, eps)?;
        let k = g.l2_normalize(k, 2, eps)?;
        let logits = g.matmul(q, k, false, true)?;
        let logits = temperature(g, s, logits, self.lambda, n, heads)?;
        let attn = g.softmax(logits, 2)?;
        let out = g.matmul(attn, v, false, false)?;
        let out = g.reshape(out, &[n, c, h, w])?;
        let out = self.proj.forward(g, s, out)?;
        Ok((g.add(out, x)?, attn))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.forward_with_attention(g, s, x)?.0)
    }
}

/// Gated depthwise feed-forward network.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub hidden: usize,
    pub norm: ChannelNorm,
    pub expand: Conv,
    pub dw: Conv,
    pub proj: Conv,
}

impl Ffn {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (c, hid) = (cfg.channels, cfg.ffn_hidden());
        Ok(Self {
            hidden: hid,
            norm: ChannelNorm::new(store, &format!("{name}.norm"), c)?,
            expand: Conv::new(store, &format!("{name}.expand"), ConvSpec::pointwise(c, 2 * hid), rng)?,
            dw: Conv::new(store, &format!("{name}.dw"), ConvSpec::depthwise(2 * hid), rng)?,
            proj: Conv::new(store, &format!("{name}.proj"), ConvSpec::pointwise(hid, c), rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let xn = self.norm.forward(g, s, x)?;
        let h = self.expand.forward(g, s, xn)?;
        let h = self.dw.forward(g, s, h)?;
        let a = g.narrow(h, 1, 0, self.hidden)?;
        let b = g.narrow(h, 1, self.hidden, self.hidden)?;
        let a = g.gelu(a)?;
        let gated = g.mul(a, b)?;
        let out = self.proj.forward(g, s, gated)?;
        g.add(out, x)
    }
}

/// SDCA → SA → FFN, each pre-normalized with its own residual.
#[derive(Clone, Debug)]
pub struct Sdtb {
    pub sdca: Sdca,
    pub sa: SelfAttention,
    pub ffn: Ffn,
}

impl Sdtb {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            sdca: Sdca::new(store, &format!("{name}.sdca"), cfg, rng)?,
            sa: SelfAttention::new(store, &format!("{name}.sa"), cfg, rng)?,
            ffn: Ffn::new(store, &format!("{name}.ffn"), cfg, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, desc: Var) -> Result<Var> {
        let x = self.sdca.forward(g, s, x, desc)?;
        let x = self.sa.forward(g, s, x)?;
        self.ffn.forward(g, s, x)
    }

    /// Output projections of the three sub-blocks.
    pub fn projections(&self) -> [ParamId; 3] {
        [self.sdca.proj.w, self.sa.proj.w, self.ffn.proj.w]
    }
}
