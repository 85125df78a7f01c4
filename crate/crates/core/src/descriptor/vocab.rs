use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::scene::{Scene, BASE_WORDS};

pub const WORD_DIM: usize = 300;

/// Word vectors for the five base words.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    /// Rows in [`BASE_WORDS`] order.
    pub vectors: [Vec<f64>; 5],
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Unit-norm pseudo-random vector seeded by a hash of `word`.
pub fn hashed_vector(word: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(word.as_bytes()));
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl WordVectors {
    /// Deterministic vectors that need no external file.
    pub fn fallback() -> Self {
        Self {
            vectors: BASE_WORDS.map(|w| hashed_vector(w, WORD_DIM)),
        }
    }

    /// Reads `word v1 … v300` rows (GloVe text format), keeping the base words.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut found: HashMap<&str, Vec<f64>> = HashMap::new();
        for (ln, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let Some(&base) = BASE_WORDS.iter().find(|b| **b == word) else {
                continue;
            };
            let v: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("{}:{}: bad number: {e}", path.display(), ln + 1)))?;
            if v.len() != WORD_DIM {
                return Err(Error::Config(format!(
                    "{}:{}: '{word}' has {} values, expected {WORD_DIM}",
                    path.display(),
                    ln + 1,
                    v.len()
                )));
            }
            found.entry(base).or_insert(v);
        }
        let mut vectors: [Vec<f64>; 5] = Default::default();
        for (slot, word) in vectors.iter_mut().zip(BASE_WORDS) {
            *slot = found
                .remove(word)
                .ok_or_else(|| Error::Config(format!("{}: no vector for base word '{word}'", path.display())))?;
        }
        Ok(Self { vectors })
    }

    /// Raw 300-d vector of a scene: its base word, or the element-wise mean of
    /// its constituents for composites.
    pub fn raw(&self, scene: Scene) -> Vec<f64> {
        let parts = scene.components();
        let mut out = vec![0.0; WORD_DIM];
        for &p in &parts {
            for (o, v) in out.iter_mut().zip(&self.vectors[p]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= parts.len() as f64);
        out
    }

    /// `[12, 300]` raw vectors in label order.
    pub fn raw_matrix<T: Real>(&self) -> Tensor<T> {
        let rows: Vec<f64> = Scene::ALL.iter().flat_map(|&s| self.raw(s)).collect();
        Tensor::from_fn(&[12, WORD_DIM], |i| T::from_f64_lossy(rows[i]))
    }
}
