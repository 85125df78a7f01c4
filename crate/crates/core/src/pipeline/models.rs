use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta};
use crate::degrade::Image;
use crate::descriptor::{Classification, EmbedderConfig, SceneEmbedder, WordVectors, WORD_DIM};
use crate::error::{Error, Result};
use crate::network::{NetConfig, RestoreNet, DESCRIPTOR_DIM};
use crate::numerics::{Adam, Graph, ParamId, ParamStore, Real, Tensor};
use crate::scene::Scene;

const RAW_BUFFER: &str = "vocab.raw";
const TABLE_BUFFER: &str = "descriptor.table";

fn config_of<C: serde::de::DeserializeOwned>(ck_config: &serde_json::Value, key: &str) -> Result<C> {
    let v = ck_config
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("config snapshot lacks '{key}'")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("config '{key}': {e}")))
}

/// Text and visual embedders with the raw word vectors they were trained on.
#[derive(Clone, Debug)]
pub struct Embedder<T: Real> {
    pub model: SceneEmbedder,
    pub store: ParamStore<T>,
    raw: ParamId,
}

impl<T: Real> Embedder<T> {
    pub fn new(cfg: EmbedderConfig, words: &WordVectors, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = SceneEmbedder::new(cfg, &mut store, seed)?;
        let raw = store.add_buffer(RAW_BUFFER, words.raw_matrix())?;
        Ok(Self { model, store, raw })
    }

    /// Base-word vectors recovered from the stored raw table.
    pub fn words(&self) -> WordVectors {
        let raw = self.store.value(self.raw);
        let row = |k: usize| raw.data()[k * WORD_DIM..(k + 1) * WORD_DIM].iter().map(|v| v.to_f64_lossy()).collect();
        WordVectors {
            vectors: std::array::from_fn(row),
        }
    }

    /// The twelve refined text embeddings `[12, 324]`.
    pub fn text_table(&self) -> Result<Tensor<T>> {
        self.model.text_table(&self.store, &self.words())
    }

    pub fn classify(&self, img: &Image) -> Result<Classification> {
        self.model.classify(&self.store, &self.text_table()?, img)
    }

    pub fn to_checkpoint(&self, seed: u64, extra: serde_json::Value, adam: Option<&Adam<T>>) -> Checkpoint<T> {
        let config = serde_json::json!({ "embedder": self.model.cfg, "train": extra });
        Checkpoint::capture(CheckpointMeta::new("embedder", seed, config), &self.store, adam)
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        ck.expect_kind("embedder")?;
        let cfg: EmbedderConfig = config_of(&ck.meta.config, "embedder")?;
        let mut store = ParamStore::new();
        let model = SceneEmbedder::new(cfg, &mut store, 0)?;
        let raw = store.add_buffer(RAW_BUFFER, Tensor::zeros(&[12, WORD_DIM]))?;
        ck.load_into(&mut store)?;
        Ok(Self { model, store, raw })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// How the scene descriptor is chosen at inference time.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a, T: Real> {
    /// The user names the scene.
    Manual(Scene),
    /// The visual embedder picks the most similar text embedding.
    Automatic(&'a Embedder<T>),
}

/// Outcome of one restoration.
#[derive(Clone, Debug)]
pub struct Restored {
    pub image: Image,
    pub scene: Scene,
    pub classification: Option<Classification>,
}

/// The restoration network plus the frozen descriptor table it was trained with.
#[derive(Clone, Debug)]
pub struct Restorer<T: Real> {
    pub net: RestoreNet,
    pub store: ParamStore<T>,
    table: ParamId,
}

#[derive(Serialize, Deserialize)]
struct RestorerSnapshot {
    net: NetConfig,
}

impl<T: Real> Restorer<T> {
    /// Fresh network; `table` holds the twelve text embeddings `[12, 324]`.
    pub fn new(cfg: NetConfig, table: Tensor<T>, seed: u64) -> Result<Self> {
        if table.shape() != [12, DESCRIPTOR_DIM] {
            return Err(Error::Dimension(format!(
                "descriptor table must be [12, {DESCRIPTOR_DIM}], got {:?}",
                table.shape()
            )));
        }
        let mut store = ParamStore::new();
        let net = RestoreNet::new(cfg, &mut store, seed)?;
        let table = store.add_buffer(TABLE_BUFFER, table)?;
        Ok(Self { net, store, table })
    }

    pub fn table(&self) -> &Tensor<T> {
        self.store.value(self.table)
    }

    /// Stacked descriptors `[N, 324]` for the given scenes.
    pub fn descriptors(&self, scenes: &[Scene]) -> Tensor<T> {
        let t = self.table().data();
        let data = scenes
            .iter()
            .flat_map(|s| t[s.index() * DESCRIPTOR_DIM..(s.index() + 1) * DESCRIPTOR_DIM].iter().copied())
            .collect();
        Tensor::new(&[scenes.len(), DESCRIPTOR_DIM], data).expect("consistent shape")
    }

    /// Network output for `[N,3,H,W]` input (sizes divisible by 8).
    pub fn forward_tensor(&self, x: &Tensor<T>, scenes: &[Scene]) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone())?;
        let dv = g.constant(self.descriptors(scenes))?;
        let y = self.net.forward(&mut g, &self.store, xv, dv)?;
        Ok(g.value(y).clone())
    }

    /// Restores an image of any size with the descriptor for `scene`:
    /// reflect-pad to a multiple of 8, forward, crop, clip to `[0,1]`.
    pub fn restore_as(&self, img: &Image, scene: Scene) -> Result<Image> {
        let padded = img.reflect_pad_to_multiple(8);
        let y = self.forward_tensor(&padded.to_tensor(), &[scene])?;
        Image::from_tensor(&y)?.crop(0, 0, img.height(), img.width())
    }

    pub fn restore(&self, img: &Image, mode: Mode<'_, T>) -> Result<Restored> {
        let (scene, classification) = match mode {
            Mode::Manual(s) => (s, None),
            Mode::Automatic(e) => {
                let c = e.classify(img)?;
                (c.scene, Some(c))
            }
        };
        Ok(Restored {
            image: self.restore_as(img, scene)?,
            scene,
            classification,
        })
    }

    pub fn to_checkpoint(&self, meta: CheckpointMeta, adam: Option<&Adam<T>>) -> Checkpoint<T> {
        Checkpoint::capture(meta, &self.store, adam)
    }

    /// Config snapshot stored with restorer checkpoints.
    pub fn snapshot(&self, train: &impl Serialize) -> serde_json::Value {
        serde_json::json!({ "net": self.net.cfg, "train": train })
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        ck.expect_kind("restorer")?;
        let snap: RestorerSnapshot = serde_json::from_value(ck.meta.config.clone())
            .map_err(|e| Error::Checkpoint(format!("restorer config: {e}")))?;
        let mut r = Self::new(snap.net, Tensor::zeros(&[12, DESCRIPTOR_DIM]), 0)?;
        ck.load_into(&mut r.store)?;
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
