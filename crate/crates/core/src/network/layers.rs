use rand::Rng;

use crate::error::Result;
use crate::numerics::kernels::ConvGeom;
use crate::numerics::{init, r, Graph, ParamId, ParamStore, Real, Tensor, Var};

pub(crate) const INIT_STD: f64 = 0.02;
pub(crate) const LN_EPS: f64 = 1e-6;

/// Square-kernel convolution with optional bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub geom: ConvGeom,
}

/// Shape and initializer choices for [`Conv::new`].
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn pointwise(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            k: 1,
            stride: 1,
            groups: 1,
            bias: false,
        }
    }

    pub fn depthwise(c: usize) -> Self {
        Self {
            cin: c,
            cout: c,
            k: 3,
            stride: 1,
            groups: c,
            bias: false,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }
}

impl Conv {
    /// Truncated-normal weights (std 0.02), zero bias, "same" padding.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = [spec.cout, spec.cin / spec.groups, spec.k, spec.k];
        let w = store.add(&format!("{name}.w"), init::trunc_normal(&shape, INIT_STD, rng))?;
        Self::finish(store, name, spec, w)
    }

    /// He-normal weights, for ReLU stacks.
    pub fn new_he<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = [spec.cout, spec.cin / spec.groups, spec.k, spec.k];
        let fan_in = shape[1] * spec.k * spec.k;
        let w = store.add(&format!("{name}.w"), init::he_normal(&shape, fan_in, rng))?;
        Self::finish(store, name, spec, w)
    }

    fn finish<T: Real>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec, w: ParamId) -> Result<Self> {
        let b = if spec.bias {
            Some(store.add(&format!("{name}.b"), Tensor::zeros(&[spec.cout]))?)
        } else {
            None
        };
        Ok(Self {
            w,
            b,
            geom: ConvGeom::new(spec.stride, (spec.k - 1) / 2, spec.groups),
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(s, self.w)?;
        let b = self.b.map(|b| g.param(s, b)).transpose()?;
        g.conv2d(x, w, b, self.geom)
    }
}

/// Fully connected layer over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(&format!("{name}.w"), init::trunc_normal(&[fan_out, fan_in], INIT_STD, rng))?,
            b: store.add(&format!("{name}.b"), Tensor::zeros(&[fan_out]))?,
        })
    }

    pub fn new_he<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(&format!("{name}.w"), init::he_normal(&[fan_out, fan_in], fan_in, rng))?,
            b: store.add(&format!("{name}.b"), Tensor::zeros(&[fan_out]))?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(s, self.w)?;
        let b = g.param(s, self.b)?;
        g.linear(x, w, Some(b))
    }
}

/// Layer normalization across the channel axis of an NCHW tensor.
#[derive(Clone, Debug)]
pub struct ChannelNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl ChannelNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(&format!("{name}.gain"), Tensor::ones(&[channels]))?,
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[channels]))?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let gain = g.param(s, self.gain)?;
        let bias = g.param(s, self.bias)?;
        g.layer_norm(x, gain, bias, 1, r(LN_EPS))
    }
}
