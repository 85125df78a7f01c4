use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compose::derive_seed;
use super::{compose, procedural_scene, DegradationSpec, DepthMap, Image, StreakParams};
use crate::error::{contract_err, Error, Result};
use crate::scene::Scene;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One degraded/clear pair. Paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub clear_path: String,
    pub degraded_path: String,
    pub category: Scene,
    pub gamma: Option<f64>,
    pub noise_var: Option<f64>,
    pub beta: Option<f64>,
    #[serde(rename = "A")]
    pub airlight: Option<f64>,
    pub streak_params: Option<StreakParams>,
    pub seed: u64,
}

/// Inputs to [`synthesize_dataset`].
#[derive(Clone, Debug)]
pub struct SynthesisOptions {
    pub clear_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Degraded categories to emit; defaults to all eleven.
    pub categories: Vec<Scene>,
    pub per_image_count: usize,
    pub seed: u64,
    /// Working resolution `(height, width)`; `None` keeps the input size.
    pub size: Option<(usize, usize)>,
    /// Optional directory of grayscale depth images matched by file stem.
    pub depth_dir: Option<PathBuf>,
}

impl SynthesisOptions {
    pub fn new(clear_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            clear_dir: clear_dir.into(),
            out_dir: out_dir.into(),
            categories: Scene::degraded().to_vec(),
            per_image_count: 1,
            seed: 0,
            size: Some((256, 256)),
            depth_dir: None,
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn find_depth(depth_dir: &Path, stem: &str, h: usize, w: usize) -> Option<DepthMap> {
    let path = sorted_files(depth_dir)
        .ok()?
        .into_iter()
        .find(|p| p.file_stem().and_then(|s| s.to_str()) == Some(stem))?;
    match Image::load(&path).and_then(|img| img.resize(h, w)) {
        Ok(img) => Some(DepthMap::from_gray_image(&img)),
        Err(e) => {
            log::warn!("ignoring depth map {}: {e}", path.display());
            None
        }
    }
}

struct Source {
    stem: String,
    image: Image,
    depth: DepthMap,
}

/// Writes `clear/<stem>.png`, `<category>/<stem>.png` and `manifest.jsonl`
/// under `out_dir`. Unreadable inputs are skipped with a warning.
pub fn synthesize_dataset(opts: &SynthesisOptions) -> Result<Vec<PairRecord>> {
    if opts.categories.contains(&Scene::Clear) {
        return Err(contract_err!("'clear' is not a degraded category"));
    }
    if opts.per_image_count == 0 {
        return Err(contract_err!("per_image_count must be at least 1"));
    }
    let files = sorted_files(&opts.clear_dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDataset(format!("no files in {}", opts.clear_dir.display())));
    }
    let mut sources = Vec::new();
    for path in files {
        let image = match Image::load(&path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping unreadable input: {e}");
                continue;
            }
        };
        let image = match opts.size {
            Some((h, w)) => image.resize(h, w)?,
            None => image,
        };
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let (h, w) = (image.height(), image.width());
        let depth = opts
            .depth_dir
            .as_deref()
            .and_then(|d| find_depth(d, &stem, h, w))
            .unwrap_or_else(|| DepthMap::vertical_ramp(h, w));
        sources.push(Source { stem, image, depth });
    }
    if sources.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no decodable images in {}",
            opts.clear_dir.display()
        )));
    }

    create_dir(&opts.out_dir.join("clear"))?;
    for cat in &opts.categories {
        create_dir(&opts.out_dir.join(cat.label()))?;
    }
    sources.par_iter().try_for_each(|s| {
        s.image
            .save(opts.out_dir.join("clear").join(format!("{}.png", s.stem)))
    })?;

    let items: Vec<(usize, usize, usize)> = (0..sources.len())
        .flat_map(|i| {
            (0..opts.categories.len()).flat_map(move |c| (0..opts.per_image_count).map(move |k| (i, c, k)))
        })
        .collect();
    let records = items
        .par_iter()
        .map(|&(i, c, k)| {
            let src = &sources[i];
            let category = opts.categories[c];
            let seed = derive_seed(&[opts.seed, i as u64, category.index() as u64, k as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = DegradationSpec::sample(category, seed, &mut rng);
            let (degraded, m) = compose(&src.image, &spec, &src.depth)?;
            let name = if opts.per_image_count > 1 {
                format!("{}_{k}.png", src.stem)
            } else {
                format!("{}.png", src.stem)
            };
            let rel = format!("{}/{name}", category.label());
            degraded.save(opts.out_dir.join(&rel))?;
            Ok(PairRecord {
                clear_path: format!("clear/{}.png", src.stem),
                degraded_path: rel,
                category,
                gamma: m.gamma,
                noise_var: m.noise_var,
                beta: m.beta,
                airlight: m.airlight,
                streak_params: m.streak_params,
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    write_manifest(&opts.out_dir.join(MANIFEST_FILE), &records)?;
    log::info!(
        "synthesized {} pairs from {} clear images into {}",
        records.len(),
        sources.len(),
        opts.out_dir.display()
    );
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[PairRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok(records)
}

/// Writes `count` procedural clear scenes as `scene_NNNN.png` into `dir`.
pub fn write_procedural_scenes(dir: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let path = dir.join(format!("scene_{i:04}.png"));
            procedural_scene(height, width, derive_seed(&[seed, i as u64])).save(&path)?;
            Ok(path)
        })
        .collect()
}
