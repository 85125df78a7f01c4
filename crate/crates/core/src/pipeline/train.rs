use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::collections::HashMap;
use std::sync::mpsc::sync_channel;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::config::TrainConfig;
use super::data::{load_patch, make_patches, PatchEntry, SamplePack};
use super::models::{Embedder, Restorer};
use crate::degrade::derive_seed;
use crate::descriptor::{train_embedders, EmbedTrainConfig, EpochLog, Sample};
use crate::error::{contract_err, Error, Result};
use crate::loss::{total_loss, ContrastTargets, FeatureExtractor, LossValues, EXTRACTOR_SEED, EXTRACTOR_WIDTHS};
use crate::numerics::{Adam, Graph, Real, Tensor};
use crate::scene::Scene;

/// Worker count: `ONERESTORE_THREADS` if set, else the machine's parallelism.
pub fn thread_count() -> usize {
    std::env::var("ONERESTORE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Appends one JSON object per line.
pub struct JsonlWriter {
    out: Option<BufWriter<File>>,
}

impl JsonlWriter {
    pub fn create(path: Option<&Path>) -> Result<Self> {
        let out = match path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                Some(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?))
            }
            None => None,
        };
        Ok(Self { out })
    }

    pub fn write<S: Serialize>(&mut self, row: &S) -> Result<()> {
        if let Some(w) = &mut self.out {
            serde_json::to_writer(&mut *w, row)?;
            w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io("<log>", e))?;
        }
        Ok(())
    }
}

// ------------------------------------------------------------ embedder

/// Images resized to the embedder input and converted to tensors.
pub fn embedder_samples<T: Real>(items: &[(crate::degrade::Image, Scene)], size: usize) -> Result<Vec<Sample<T>>> {
    items
        .par_iter()
        .map(|(img, s)| {
            let im = if img.height() == size && img.width() == size { img.clone() } else { img.resize(size, size)? };
            Ok((im.to_tensor(), *s))
        })
        .collect()
}

/// Trains both embedders on labelled samples, logging each epoch.
pub fn fit_embedder<T: Real>(
    embedder: &mut Embedder<T>,
    samples: &[Sample<T>],
    cfg: &TrainConfig,
    log: Option<&Path>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let tc = EmbedTrainConfig {
        epochs: cfg.epochs,
        lr: cfg.initial_lr,
        lr_step_epochs: cfg.lr_decay_interval_epochs,
        lr_decay: cfg.lr_decay_factor,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        hflip: cfg.augment,
    };
    let mut writer = JsonlWriter::create(log)?;
    let words = embedder.words();
    let mut write_err = None;
    let logs = train_embedders(&embedder.model, &mut embedder.store, &words, samples, &tc, |row| {
        if let Err(e) = writer.write(row) {
            write_err.get_or_insert(e);
        }
    })?;
    write_err.map_or(Ok(logs), Err)
}

// ------------------------------------------------------------ restorer

/// One restorer optimization step as written to the JSON-lines log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossValues,
    /// Mean PSNR of the clipped network output against the clear patches.
    pub psnr: f64,
    /// Mean PSNR of the degraded input patches.
    pub input_psnr: f64,
    pub wall_time: f64,
}

/// Where a restorer run writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub log: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Data-preparation workers; `None` uses [`thread_count`].
    pub threads: Option<usize>,
    /// Keep the extractor activations of every (sample, rotation) in memory.
    /// Only sensible for small fixed sets.
    pub cache_negatives: bool,
}

struct Batch<T: Real> {
    step: u64,
    epoch: usize,
    x: Tensor<T>,
    clear: Tensor<T>,
    labels: Vec<Scene>,
    targets: ContrastTargets<T>,
}

/// The frozen extractor named by the config, or the seeded surrogate.
pub fn feature_extractor<T: Real>(cfg: &TrainConfig) -> Result<FeatureExtractor<T>> {
    if cfg.feature_weights.is_empty() {
        return Ok(FeatureExtractor::seeded(EXTRACTOR_SEED));
    }
    let ck = Checkpoint::<T>::load(&cfg.feature_weights)?;
    let layers = (0..EXTRACTOR_WIDTHS.len())
        .map(|i| {
            let get = |s: &str| {
                ck.get(&format!("param/features.conv{}.{s}", i + 1))
                    .cloned()
                    .ok_or_else(|| Error::Checkpoint(format!("feature weights lack conv{} {s}", i + 1)))
            };
            Ok((get("w")?, get("b")?))
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureExtractor::from_layers(layers)
}

fn batch_psnr<T: Real>(pred: &Tensor<T>, clear: &Tensor<T>) -> f64 {
    let n = pred.dim(0);
    let per = pred.numel() / n;
    (0..n)
        .map(|i| {
            let r = i * per..(i + 1) * per;
            let mse = pred.data()[r.clone()]
                .iter()
                .zip(&clear.data()[r])
                .map(|(a, b)| {
                    let a = a.to_f64_lossy().clamp(0.0, 1.0);
                    (a - b.to_f64_lossy()).powi(2)
                })
                .sum::<f64>()
                / per as f64;
            if mse == 0.0 {
                super::metrics::PSNR_CAP
            } else {
                (10.0 * (1.0 / mse).log10()).min(super::metrics::PSNR_CAP)
            }
        })
        .sum::<f64>()
        / n as f64
}

type TargetCache<T> = Mutex<HashMap<(usize, usize), Arc<ContrastTargets<T>>>>;

fn prepare<T: Real>(
    packs: &[SamplePack],
    entries: &[(usize, PatchEntry)],
    cfg: &TrainConfig,
    epoch: usize,
    fe: &FeatureExtractor<T>,
    cache: Option<&TargetCache<T>>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<Scene>, ContrastTargets<T>)> {
    let contrast = cfg.loss.alpha3 != 0.0;
    let items = entries
        .par_iter()
        .map(|(id, e)| {
            let k = if cfg.augment {
                (derive_seed(&[cfg.seed, epoch as u64, *id as u64]) % 4) as usize
            } else {
                0
            };
            let (clear, input, others) = load_patch::<T>(&packs[e.pack], e, cfg.patch_size, k)?;
            let targets = if !contrast {
                None
            } else if let Some(t) = cache.and_then(|c| c.lock().expect("cache lock").get(&(*id, k)).cloned()) {
                Some(t)
            } else {
                let t = Arc::new(ContrastTargets::new(fe, &clear, &input, &others)?);
                if let Some(c) = cache {
                    c.lock().expect("cache lock").insert((*id, k), t.clone());
                }
                Some(t)
            };
            Ok((clear, input, targets))
        })
        .collect::<Result<Vec<_>>>()?;
    let clear = Tensor::cat0(&items.iter().map(|i| i.0.clone()).collect::<Vec<_>>())?;
    let x = Tensor::cat0(&items.iter().map(|i| i.1.clone()).collect::<Vec<_>>())?;
    let labels = entries.iter().map(|(_, e)| e.input).collect();
    let targets = if contrast {
        ContrastTargets::cat(&items.iter().map(|i| i.2.as_deref().expect("targets")).collect::<Vec<_>>())?
    } else {
        ContrastTargets::empty()
    };
    Ok((x, clear, labels, targets))
}

/// Trains the restorer on crops of `packs`. Resumes from `adam`'s step count.
///
/// A producer thread prepares batches (crops, rotations, negative features)
/// one step ahead through a bounded channel. All sample randomness is a
/// function of `(seed, epoch, sample id)`, so results do not depend on the
/// number of workers.
pub fn train_restorer<T: Real>(
    restorer: &mut Restorer<T>,
    adam: &mut Adam<T>,
    packs: &[SamplePack],
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    let mut index = make_patches(packs, cfg.patch_size, cfg.patch_stride);
    if cfg.max_pairs > 0 {
        index.truncate(cfg.max_pairs);
    }
    train_restorer_on(restorer, adam, packs, &index, cfg, opts)
}

/// [`train_restorer`] over an explicit patch index.
pub fn train_restorer_on<T: Real>(
    restorer: &mut Restorer<T>,
    adam: &mut Adam<T>,
    packs: &[SamplePack],
    index: &[PatchEntry],
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if let Some(e) = index.iter().find(|e| e.pack >= packs.len()) {
        return Err(contract_err!("patch entry refers to pack {} of {}", e.pack, packs.len()));
    }
    if index.is_empty() && cfg.epochs > 0 {
        return Err(Error::EmptyDataset("no training patches fit the patch size".into()));
    }
    if cfg.loss.alpha3 != 0.0 && cfg.loss.others != 10 {
        return Err(contract_err!("sample packs provide 10 other negatives, config asks for {}", cfg.loss.others));
    }
    let fe = feature_extractor::<T>(cfg)?;
    let per_epoch = index.len().div_ceil(cfg.batch_size) as u64;
    let start = adam.step_count();
    let limit = if cfg.max_steps > 0 { cfg.max_steps as u64 } else { u64::MAX };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or_else(thread_count))
        .build()
        .map_err(|e| contract_err!("thread pool: {e}"))?;
    let mut writer = JsonlWriter::create(opts.log.as_deref())?;
    let clock = Instant::now();
    let mut logs = Vec::new();
    let mut last_epoch = 0usize;

    let cache: Option<TargetCache<T>> = opts.cache_negatives.then(Default::default);
    std::thread::scope(|sc| -> Result<()> {
        let (tx, rx) = sync_channel::<Result<Batch<T>>>(2);
        let fe_ref = &fe;
        let cache = &cache;
        let pool = &pool;
        sc.spawn(move || {
            for epoch in 0..cfg.epochs {
                let mut order: Vec<usize> = (0..index.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64])));
                for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                    let step = epoch as u64 * per_epoch + b as u64;
                    if step < start {
                        continue;
                    }
                    if step >= limit {
                        return;
                    }
                    let entries: Vec<(usize, PatchEntry)> = chunk.iter().map(|&i| (i, index[i])).collect();
                    let msg = pool.install(|| prepare(packs, &entries, cfg, epoch, fe_ref, cache.as_ref())).map(
                        |(x, clear, labels, targets)| Batch {
                            step,
                            epoch,
                            x,
                            clear,
                            labels,
                            targets,
                        },
                    );
                    let failed = msg.is_err();
                    if tx.send(msg).is_err() || failed {
                        return;
                    }
                }
            }
        });

        for msg in rx {
            let batch = msg?;
            let lr = cfg.lr_at(batch.epoch);
            let mut g = Graph::new();
            let xv = g.constant(batch.x.clone())?;
            let dv = g.constant(restorer.descriptors(&batch.labels))?;
            let y = restorer.net.forward(&mut g, &restorer.store, xv, dv)?;
            let cv = g.constant(batch.clear.clone())?;
            let terms = total_loss(&mut g, &fe, y, cv, &batch.targets, &cfg.loss)?;
            restorer.store.zero_grad();
            g.backward_into(terms.total, &mut restorer.store)?;
            adam.step(&mut restorer.store, lr);
            let row = StepLog {
                step: batch.step + 1,
                epoch: batch.epoch,
                lr,
                loss: terms.values(&g),
                psnr: batch_psnr(g.value(y), &batch.clear),
                input_psnr: batch_psnr(&batch.x, &batch.clear),
                wall_time: clock.elapsed().as_secs_f64(),
            };
            writer.write(&row)?;
            log::debug!("step {} loss {:.5} psnr {:.2}", row.step, row.loss.total, row.psnr);
            last_epoch = batch.epoch;
            if let Some(path) = &opts.checkpoint {
                if cfg.checkpoint_every > 0 && row.step % cfg.checkpoint_every as u64 == 0 {
                    save_restorer(restorer, adam, cfg, last_epoch, path)?;
                }
            }
            logs.push(row);
        }
        Ok(())
    })?;

    if let Some(path) = &opts.checkpoint {
        save_restorer(restorer, adam, cfg, last_epoch, path)?;
    }
    Ok(logs)
}

/// Writes a restorer checkpoint with optimizer state and config snapshot.
pub fn save_restorer<T: Real>(
    restorer: &Restorer<T>,
    adam: &Adam<T>,
    cfg: &TrainConfig,
    epoch: usize,
    path: &Path,
) -> Result<()> {
    let mut meta = CheckpointMeta::new("restorer", cfg.seed, restorer.snapshot(cfg));
    meta.epoch = epoch as u64;
    restorer.to_checkpoint(meta, Some(adam)).save(path)
}

/// Moving average over `window` values (shorter at the start).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    values
        .windows(w.min(values.len()).max(1))
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect()
}
