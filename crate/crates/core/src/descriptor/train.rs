use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedder::SceneEmbedder;
use super::vocab::WordVectors;
use crate::degrade::derive_seed;
use crate::error::{contract_err, Result};
use crate::numerics::{Adam, Graph, ParamStore, Real, Tensor};
use crate::scene::Scene;

/// Optimization settings for the embedders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// The learning rate halves every this many epochs.
    pub lr_step_epochs: usize,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Mirror each training image left-right with probability 1/2.
    pub hflip: bool,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-4,
            lr_step_epochs: 50,
            lr_decay: 0.5,
            batch_size: 256,
            seed: 0,
            hflip: true,
        }
    }
}

impl EmbedTrainConfig {
    /// Short schedule for small synthetic sets.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            lr_step_epochs: 10,
            batch_size: 32,
            ..Self::default()
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_step_epochs.max(1)) as i32)
    }
}

/// Per-epoch training summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    /// Loss of the very first batch of the epoch.
    pub first_batch_loss: f64,
}

/// One labelled image as a `[1, 3, H, W]` tensor.
pub type Sample<T> = (Tensor<T>, Scene);

/// Jointly trains the text MLP and the visual embedder with cross-entropy
/// over cosine logits. Batch order comes from a seeded shuffle per epoch.
pub fn train_embedders<T: Real>(
    model: &SceneEmbedder,
    store: &mut ParamStore<T>,
    words: &WordVectors,
    data: &[Sample<T>],
    cfg: &EmbedTrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if cfg.epochs > 0 && data.is_empty() {
        return Err(contract_err!("no training samples"));
    }
    if cfg.batch_size == 0 {
        return Err(contract_err!("batch_size must be positive"));
    }
    let raw = words.raw_matrix::<T>();
    let mut adam = Adam::new(0.9, 0.999);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64])));
        let lr = cfg.lr_at(epoch);
        let (mut loss_sum, mut correct, mut first) = (0.0, 0usize, f64::NAN);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64, b as u64, 1]));
            let images: Vec<Tensor<T>> = chunk
                .iter()
                .map(|&i| if cfg.hflip && rng.random_bool(0.5) { mirror(&data[i].0) } else { data[i].0.clone() })
                .collect();
            let x = Tensor::cat0(&images)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data[i].1.index()).collect();
            let mut g = Graph::new();
            let rv = g.constant(raw.clone())?;
            let et = model.text_embeddings(&mut g, store, rv)?;
            let xv = g.constant(x)?;
            let (ev, stats) = model.visual(&mut g, store, xv, Some(&mut rng))?;
            let logits = model.logits(&mut g, store, ev, et)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let lv = g.value(loss).item().to_f64_lossy();
            if b == 0 {
                first = lv;
            }
            loss_sum += lv * chunk.len() as f64;
            correct += count_correct(g.value(logits), &labels);
            store.zero_grad();
            g.backward_into(loss, store)?;
            adam.step(store, lr);
            if let Some(st) = stats {
                model.update_running_stats(store, &st);
            }
        }
        let log = EpochLog {
            epoch,
            lr,
            loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
            first_batch_loss: first,
        };
        log::info!(
            "embedder epoch {epoch}: loss {:.4} acc {:.3} lr {lr:.2e}",
            log.loss,
            log.train_accuracy
        );
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Reverses the last axis.
fn mirror<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let w = x.dim(x.ndim() - 1);
    Tensor::from_fn(x.shape(), |i| x.data()[i - i % w + (w - 1 - i % w)])
}

fn count_correct<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    logits
        .data()
        .chunks(12)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode accuracy and a 12×12 confusion matrix (rows: truth).
pub fn evaluate_classifier<T: Real>(
    model: &SceneEmbedder,
    store: &ParamStore<T>,
    words: &WordVectors,
    data: &[Sample<T>],
) -> Result<(f64, [[usize; 12]; 12])> {
    let text = model.text_table(store, words)?;
    let mut confusion = [[0usize; 12]; 12];
    let mut correct = 0;
    for chunk in data.chunks(32) {
        let x = Tensor::cat0(&chunk.iter().map(|d| d.0.clone()).collect::<Vec<_>>())?;
        let mut g = Graph::inference();
        let xv = g.constant(x)?;
        let (ev, _) = model.visual(&mut g, store, xv, None)?;
        let et = g.constant(text.clone())?;
        let logits = model.logits(&mut g, store, ev, et)?;
        for (row, (_, truth)) in g.value(logits).data().chunks(12).zip(chunk) {
            let p = argmax(row);
            confusion[truth.index()][p] += 1;
            correct += usize::from(p == truth.index());
        }
    }
    Ok((correct as f64 / data.len().max(1) as f64, confusion))
}
