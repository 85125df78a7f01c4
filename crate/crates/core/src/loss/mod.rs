//! Training objective of the restorer.
//!
//! `total = α1·smooth_l1 + α2·(1 − ms_ssim) + α3·cdrl`, where the contrastive
//! term compares the restored image against the clear target (positive), its
//! own degraded input and the other degraded renditions of the same scene
//! (negatives) in the activation space of a frozen [`FeatureExtractor`].

mod features;
mod msssim;

use serde::{Deserialize, Serialize};

pub use features::{FeatureExtractor, Taps, DEFAULT_SEED as EXTRACTOR_SEED, TAPS, WIDTHS as EXTRACTOR_WIDTHS};
pub use msssim::{gaussian_window, ms_ssim, scale_weights, usable_scales, SCALE_WEIGHTS, SIGMA, WINDOW};

use crate::error::{contract_err, dim_err, Result};
use crate::numerics::{r, Graph, Real, Tensor, Var};

pub const DENOMINATOR_FLOOR: f64 = 1e-7;

/// Penalty coefficients and contrastive weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Per-tap weights, shallow to deep.
    pub xi_k: [f64; 3],
    /// Weight of the restored-vs-own-input distance.
    pub xi_c: f64,
    /// Weight of each restored-vs-other-degradation distance.
    pub xi_o: f64,
    /// Number of other degraded renditions.
    pub others: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 0.4,
            alpha3: 0.05,
            xi_k: [1.0 / 3.0; 3],
            xi_c: 1.0 / 11.0,
            xi_o: 1.0 / 11.0,
            others: 10,
        }
    }
}

/// Mean smooth-L1 (Huber with threshold 1) between equal-shape tensors.
pub fn smooth_l1<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let e = g.smooth_l1(d, T::one())?;
    g.mean(e)
}

fn mean_l1<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    g.mean(d)
}

/// Cached extractor activations of the positive and negative images.
#[derive(Clone, Debug)]
pub struct ContrastTargets<T: Real> {
    pub positive: Taps<T>,
    pub input: Taps<T>,
    pub others: Vec<Taps<T>>,
}

impl<T: Real> ContrastTargets<T> {
    /// Placeholder for runs whose contrastive weight is zero.
    pub fn empty() -> Self {
        let z = || [Tensor::zeros(&[0]), Tensor::zeros(&[0]), Tensor::zeros(&[0])];
        Self {
            positive: z(),
            input: z(),
            others: Vec::new(),
        }
    }

    /// Stacks per-sample targets along the batch axis.
    pub fn cat(parts: &[&ContrastTargets<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| contract_err!("no contrast targets to stack"))?;
        let stack = |f: &dyn Fn(&ContrastTargets<T>) -> &Taps<T>| -> Result<Taps<T>> {
            let tap = |k: usize| Tensor::cat0(&parts.iter().map(|p| f(p)[k].clone()).collect::<Vec<_>>());
            Ok([tap(0)?, tap(1)?, tap(2)?])
        };
        if parts.iter().any(|p| p.others.len() != first.others.len()) {
            return Err(contract_err!("contrast targets differ in negative count"));
        }
        Ok(Self {
            positive: stack(&|p| &p.positive)?,
            input: stack(&|p| &p.input)?,
            others: (0..first.others.len())
                .map(|o| stack(&|p| &p.others[o]))
                .collect::<Result<_>>()?,
        })
    }

    pub fn new(fe: &FeatureExtractor<T>, positive: &Tensor<T>, input: &Tensor<T>, others: &[Tensor<T>]) -> Result<Self> {
        for t in std::iter::once(input).chain(others) {
            if t.shape() != positive.shape() {
                return Err(dim_err!("contrast images differ in shape: {:?} vs {:?}", t.shape(), positive.shape()));
            }
        }
        Ok(Self {
            positive: fe.taps(positive)?,
            input: fe.taps(input)?,
            others: others.iter().map(|o| fe.taps(o)).collect::<Result<_>>()?,
        })
    }
}

/// Contrastive ratio from anchor tap activations and cached targets.
pub fn cdrl_from_taps<T: Real>(
    g: &mut Graph<T>,
    anchor: [Var; 3],
    targets: &ContrastTargets<T>,
    w: &LossWeights,
) -> Result<Var> {
    if targets.others.len() != w.others {
        return Err(contract_err!(
            "expected {} other negatives, got {}",
            w.others,
            targets.others.len()
        ));
    }
    let mut total: Option<Var> = None;
    for k in 0..3 {
        let pos = g.constant(targets.positive[k].clone())?;
        let num = mean_l1(g, anchor[k], pos)?;
        let inp = g.constant(targets.input[k].clone())?;
        let d_in = mean_l1(g, anchor[k], inp)?;
        let mut den = g.mul_scalar(d_in, r(w.xi_c))?;
        for o in &targets.others {
            let ov = g.constant(o[k].clone())?;
            let d = mean_l1(g, ov, anchor[k])?;
            let d = g.mul_scalar(d, r(w.xi_o))?;
            den = g.add(den, d)?;
        }
        let den = g.clamp_min(den, r(DENOMINATOR_FLOOR))?;
        let ratio = g.div(num, den)?;
        let ratio = g.mul_scalar(ratio, r(w.xi_k[k]))?;
        total = Some(match total {
            Some(t) => g.add(t, ratio)?,
            None => ratio,
        });
    }
    Ok(total.expect("three taps"))
}

/// Contrastive loss of `anchor` (restored) against a clear positive, the
/// degraded input and the other degraded renditions.
pub fn cdrl<T: Real>(
    g: &mut Graph<T>,
    fe: &FeatureExtractor<T>,
    anchor: Var,
    targets: &ContrastTargets<T>,
    w: &LossWeights,
) -> Result<Var> {
    let taps = fe.forward(g, anchor)?;
    cdrl_from_taps(g, taps, targets, w)
}

/// The three loss terms (unweighted) and their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub smooth_l1: Var,
    /// `1 − ms_ssim`.
    pub ms_ssim: Var,
    pub cdrl: Var,
}

/// Scalar values of [`LossTerms`] for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub smooth_l1: f64,
    pub ms_ssim: f64,
    pub cdrl: f64,
}

impl LossTerms {
    pub fn values<T: Real>(&self, g: &Graph<T>) -> LossValues {
        let f = |v: Var| g.value(v).item().to_f64_lossy();
        LossValues {
            total: f(self.total),
            smooth_l1: f(self.smooth_l1),
            ms_ssim: f(self.ms_ssim),
            cdrl: f(self.cdrl),
        }
    }
}

/// Weighted objective for a restored batch. A zero `alpha3` skips the
/// extractor pass and reports a zero contrastive term.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    fe: &FeatureExtractor<T>,
    restored: Var,
    clear: Var,
    targets: &ContrastTargets<T>,
    w: &LossWeights,
) -> Result<LossTerms> {
    if g.shape(restored) != g.shape(clear) {
        return Err(dim_err!("restored {:?} and clear {:?} differ", g.shape(restored), g.shape(clear)));
    }
    let s = smooth_l1(g, restored, clear)?;
    let m = ms_ssim(g, restored, clear)?;
    let m = g.mul_scalar(m, -T::one())?;
    let m = g.add_scalar(m, T::one())?;
    let c = if w.alpha3 != 0.0 {
        cdrl(g, fe, restored, targets, w)?
    } else {
        g.constant(Tensor::scalar(T::zero()))?
    };
    let ws = g.mul_scalar(s, r(w.alpha1))?;
    let wm = g.mul_scalar(m, r(w.alpha2))?;
    let wc = g.mul_scalar(c, r(w.alpha3))?;
    let total = g.add(ws, wm)?;
    let total = g.add(total, wc)?;
    Ok(LossTerms {
        total,
        smooth_l1: s,
        ms_ssim: m,
        cdrl: c,
    })
}
