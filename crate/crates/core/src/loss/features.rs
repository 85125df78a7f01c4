use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract_err, Result};
use crate::numerics::kernels::ConvGeom;
use crate::numerics::{init, Graph, Real, Tensor, Var};

/// Output widths of the six 3×3 layers.
pub const WIDTHS: [usize; 6] = [16, 16, 32, 32, 64, 64];
/// Layers (0-based) with stride 2.
const STRIDED: [usize; 2] = [2, 4];
/// Layers (0-based) whose ReLU output is tapped.
pub const TAPS: [usize; 3] = [1, 3, 5];
pub const DEFAULT_SEED: u64 = 0x5eed_f00d;

/// Frozen conv stack whose intermediate activations serve as a perceptual space.
///
/// Weights never enter a [`ParamStore`](crate::numerics::ParamStore); they are
/// inserted into graphs as constants, so no optimizer can reach them.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T: Real> {
    layers: Vec<(Tensor<T>, Tensor<T>)>,
}

/// Activations at the three taps, shallow to deep.
pub type Taps<T> = [Tensor<T>; 3];

impl<T: Real> FeatureExtractor<T> {
    /// He-normal weights from a fixed seed, zero biases.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let layers = WIDTHS
            .iter()
            .map(|&cout| {
                let w = init::he_normal(&[cout, cin, 3, 3], cin * 9, &mut rng);
                cin = cout;
                (w, Tensor::zeros(&[cout]))
            })
            .collect();
        Self { layers }
    }

    /// Builds from externally supplied `(weight, bias)` pairs with the standard shapes.
    pub fn from_layers(layers: Vec<(Tensor<T>, Tensor<T>)>) -> Result<Self> {
        if layers.len() != WIDTHS.len() {
            return Err(contract_err!("feature extractor needs {} layers, got {}", WIDTHS.len(), layers.len()));
        }
        let mut cin = 3;
        for (i, ((w, b), &cout)) in layers.iter().zip(&WIDTHS).enumerate() {
            if w.shape() != [cout, cin, 3, 3] || b.shape() != [cout] {
                return Err(contract_err!(
                    "feature layer {i}: expected [{cout},{cin},3,3] and [{cout}], got {:?} and {:?}",
                    w.shape(),
                    b.shape()
                ));
            }
            cin = cout;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[(Tensor<T>, Tensor<T>)] {
        &self.layers
    }

    pub fn cast<U: Real>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            layers: self.layers.iter().map(|(w, b)| (w.cast(), b.cast())).collect(),
        }
    }

    /// Tap activations of `[N,3,H,W]` input, recorded in `g`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<[Var; 3]> {
        let mut taps = Vec::with_capacity(3);
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let w = g.constant(w.clone())?;
            let b = g.constant(b.clone())?;
            let stride = if STRIDED.contains(&i) { 2 } else { 1 };
            h = g.conv2d(h, w, Some(b), ConvGeom::new(stride, 1, 1))?;
            h = g.relu(h)?;
            if TAPS.contains(&i) {
                taps.push(h);
            }
        }
        Ok([taps[0], taps[1], taps[2]])
    }

    /// Tap activations as plain tensors, for targets that need no gradient.
    pub fn taps(&self, x: &Tensor<T>) -> Result<Taps<T>> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone())?;
        let t = self.forward(&mut g, xv)?;
        Ok(t.map(|v| g.value(v).clone()))
    }
}
