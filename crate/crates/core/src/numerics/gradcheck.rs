//! Central finite-difference verification of recorded gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

/// Outcome of a gradient check over every input and trainable parameter.
#[derive(Clone, Debug)]
pub struct CheckReport {
    /// Worst per-tensor relative error.
    pub max_rel_err: f64,
    /// Name of the tensor with the worst error.
    pub worst: String,
    /// Number of perturbed coordinates.
    pub checked: usize,
}

impl CheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Settings for [`check`].
#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub h: f64,
    /// Coordinates sampled per tensor when it is larger than this.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_coords: 64,
            seed: 0,
        }
    }
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-10, f64::max);
    diff / scale
}

fn coords(numel: usize, opts: &CheckOptions, salt: u64) -> Vec<usize> {
    if numel <= opts.max_coords {
        return (0..numel).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut idx = sample(&mut rng, numel, opts.max_coords).into_vec();
    idx.sort_unstable();
    idx
}

/// Compares the reverse-mode gradient of `loss` against central differences.
///
/// `loss` must rebuild the whole computation on the graph it is given and
/// must be deterministic (fix any dropout masks outside the closure).
pub fn check<F>(
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    opts: CheckOptions,
    loss: F,
) -> Result<CheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::inference();
        let vars = inputs
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let l = loss(&mut g, store, &vars)?;
        Ok(g.value(l).item())
    };

    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let l = loss(&mut g, store, &vars)?;
    let grads = g.backward(l)?;
    store.zero_grad();
    grads.accumulate_into(store);

    let mut report = CheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |name: String, a: Vec<f64>, n: Vec<f64>| {
        let e = rel_err(&a, &n);
        report.checked += a.len();
        if e >= report.max_rel_err {
            report.max_rel_err = e;
            report.worst = name;
        }
    };

    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[k].shape());
        let analytic = grads.get(*v).unwrap_or(&zeros);
        let idx = coords(inputs[k].numel(), &opts, k as u64);
        let mut a = Vec::with_capacity(idx.len());
        let mut n = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + opts.h;
            let plus = eval(store, &work)?;
            work[k].data_mut()[i] = orig - opts.h;
            let minus = eval(store, &work)?;
            work[k].data_mut()[i] = orig;
            a.push(analytic.data()[i]);
            n.push((plus - minus) / (2.0 * opts.h));
        }
        record(format!("input{k}"), a, n);
    }

    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).trainable).collect();
    for (salt, id) in ids.into_iter().enumerate() {
        let name = store.get(id).name.clone();
        let analytic = store.get(id).grad.clone();
        let idx = coords(analytic.numel(), &opts, 1000 + salt as u64);
        let mut a = Vec::with_capacity(idx.len());
        let mut n = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.h;
            let plus = eval(store, inputs)?;
            store.get_mut(id).value.data_mut()[i] = orig - opts.h;
            let minus = eval(store, inputs)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            a.push(analytic.data()[i]);
            n.push((plus - minus) / (2.0 * opts.h));
        }
        record(name, a, n);
    }
    Ok(report)
}
