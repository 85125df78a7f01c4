use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::degrade::{compose, derive_seed, read_manifest, DegradationSpec, DepthMap, Image, PairRecord, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::scene::Scene;

/// A clear image together with all eleven degraded renditions of it.
#[derive(Clone, Debug)]
pub struct SamplePack {
    /// Clear-image path and rendition file name, for diagnostics.
    pub key: String,
    pub clear: Image,
    /// Indexed like [`Scene::degraded`].
    pub degraded: Vec<Image>,
}

fn degraded_slot(s: Scene) -> usize {
    s.index() - 1
}

impl SamplePack {
    pub fn new(key: String, clear: Image, degraded: Vec<Image>) -> Result<Self> {
        if degraded.len() != 11 {
            return Err(Error::Contract(format!("pack '{key}' has {} renditions, expected 11", degraded.len())));
        }
        for d in &degraded {
            if d.height() != clear.height() || d.width() != clear.width() {
                return Err(Error::Dimension(format!("pack '{key}': renditions differ in size from the clear image")));
            }
        }
        Ok(Self { key, clear, degraded })
    }

    /// Renders all eleven renditions of `clear` in memory, seeded like the
    /// dataset synthesizer with `(seed, category)`. Depth defaults to a
    /// vertical ramp.
    pub fn synthesize(key: String, clear: Image, depth: Option<&DepthMap>, seed: u64) -> Result<Self> {
        let ramp;
        let depth = match depth {
            Some(d) => d,
            None => {
                ramp = DepthMap::vertical_ramp(clear.height(), clear.width());
                &ramp
            }
        };
        let degraded = Scene::degraded()
            .par_iter()
            .map(|&cat| {
                let s = derive_seed(&[seed, cat.index() as u64]);
                let spec = DegradationSpec::sample(cat, s, &mut ChaCha8Rng::seed_from_u64(s));
                Ok(compose(&clear, &spec, depth)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(key, clear, degraded)
    }

    pub fn height(&self) -> usize {
        self.clear.height()
    }

    pub fn width(&self) -> usize {
        self.clear.width()
    }

    pub fn input(&self, category: Scene) -> &Image {
        &self.degraded[degraded_slot(category)]
    }

    /// The ten renditions other than `category`, in label order.
    pub fn others(&self, category: Scene) -> Vec<&Image> {
        Scene::degraded()
            .iter()
            .filter(|&&s| s != category)
            .map(|&s| self.input(s))
            .collect()
    }
}

/// Groups manifest rows into packs keyed by clear image and rendition file
/// name. Groups missing any category are skipped with a warning.
pub fn group_records(records: &[PairRecord]) -> Vec<(String, String, [PathBuf; 11])> {
    let mut groups: BTreeMap<(String, String), BTreeMap<Scene, String>> = BTreeMap::new();
    for r in records {
        let file = Path::new(&r.degraded_path)
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        groups
            .entry((r.clear_path.clone(), file))
            .or_default()
            .insert(r.category, r.degraded_path.clone());
    }
    let mut out = Vec::new();
    for ((clear, file), cats) in groups {
        if cats.len() != 11 {
            log::warn!("{clear} ({file}): only {} of 11 categories present; skipped as a pack", cats.len());
            continue;
        }
        let paths: Vec<PathBuf> = Scene::degraded().iter().map(|s| PathBuf::from(&cats[s])).collect();
        out.push((clear, file, paths.try_into().expect("eleven paths")));
    }
    out
}

/// Loads every complete pack of the dataset at `root`.
pub fn load_packs(root: &Path) -> Result<Vec<SamplePack>> {
    let records = read_manifest(&root.join(MANIFEST_FILE))?;
    let groups = group_records(&records);
    if groups.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{}: no clear image has all 11 degraded renditions",
            root.display()
        )));
    }
    groups
        .par_iter()
        .map(|(clear, file, paths)| {
            let c = Image::load(root.join(clear))?;
            let d = paths.iter().map(|p| Image::load(root.join(p))).collect::<Result<Vec<_>>>()?;
            SamplePack::new(format!("{clear}:{file}"), c, d)
        })
        .collect()
}

/// Labelled images for embedder training: every degraded image, plus each
/// distinct clear image under `clear` when `include_clear` is set.
pub fn load_labelled(root: &Path, include_clear: bool) -> Result<Vec<(Image, Scene, String)>> {
    let records = read_manifest(&root.join(MANIFEST_FILE))?;
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!("{}: manifest has no rows", root.display())));
    }
    let mut items: Vec<(String, Scene)> = records.iter().map(|r| (r.degraded_path.clone(), r.category)).collect();
    if include_clear {
        let mut seen = std::collections::BTreeSet::new();
        for r in &records {
            if seen.insert(r.clear_path.clone()) {
                items.push((r.clear_path.clone(), Scene::Clear));
            }
        }
    }
    items
        .par_iter()
        .map(|(p, s)| Ok((Image::load(root.join(p))?, *s, p.clone())))
        .collect()
}

/// Offsets of `patch`-long windows at `stride` that fit in `len`.
pub fn crop_positions(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    if patch > len {
        return Vec::new();
    }
    (0..=(len - patch) / stride.max(1)).map(|i| i * stride).collect()
}

/// One training sample: a crop of one pack with one input category.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchEntry {
    pub pack: usize,
    pub input: Scene,
    pub top: usize,
    pub left: usize,
}

/// Every aligned crop of every pack, once per degraded category. Packs
/// smaller than the patch are skipped with a warning.
pub fn make_patches(packs: &[SamplePack], patch: usize, stride: usize) -> Vec<PatchEntry> {
    let mut out = Vec::new();
    for (i, p) in packs.iter().enumerate() {
        let rows = crop_positions(p.height(), patch, stride);
        let cols = crop_positions(p.width(), patch, stride);
        if rows.is_empty() || cols.is_empty() {
            log::warn!("{}: {}x{} is smaller than patch {patch}; skipped", p.key, p.height(), p.width());
            continue;
        }
        for &cat in Scene::degraded() {
            for &top in &rows {
                for &left in &cols {
                    out.push(PatchEntry {
                        pack: i,
                        input: cat,
                        top,
                        left,
                    });
                }
            }
        }
    }
    out
}

/// Crops (and rotates by `quarter_turns`) the clear image, the input and the
/// ten other renditions of a patch entry as `[1,3,P,P]` tensors.
pub fn load_patch<T: Real>(
    pack: &SamplePack,
    e: &PatchEntry,
    patch: usize,
    quarter_turns: usize,
) -> Result<(Tensor<T>, Tensor<T>, Vec<Tensor<T>>)> {
    let cut = |img: &Image| -> Result<Tensor<T>> { Ok(img.crop(e.top, e.left, patch, patch)?.rot90(quarter_turns).to_tensor()) };
    let others = pack.others(e.input).into_iter().map(cut).collect::<Result<Vec<_>>>()?;
    Ok((cut(&pack.clear)?, cut(pack.input(e.input))?, others))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_arithmetic() {
        assert_eq!(crop_positions(256, 256, 200), vec![0]);
        assert_eq!(crop_positions(456, 256, 200), vec![0, 200]);
        assert_eq!(crop_positions(200, 256, 200), Vec::<usize>::new());
        assert_eq!(crop_positions(64, 32, 16), vec![0, 16, 32]);
    }

    fn pack(h: usize, w: usize) -> SamplePack {
        let mk = |v: f32| Image::from_fn(h, w, |y, x| [v, y as f32 / h as f32, x as f32 / w as f32]).unwrap();
        SamplePack::new("p".into(), mk(0.0), (1..=11).map(|i| mk(i as f32 / 11.0)).collect()).unwrap()
    }

    #[test]
    fn patches_cover_categories_and_windows() {
        let packs = vec![pack(456, 456), pack(100, 100), pack(256, 256)];
        let idx = make_patches(&packs, 256, 200);
        assert_eq!(idx.len(), 11 * 4 + 11);
        assert!(idx.iter().all(|e| e.pack != 1));
    }

    #[test]
    fn others_exclude_input() {
        let p = pack(8, 8);
        for &c in Scene::degraded() {
            let others = p.others(c);
            assert_eq!(others.len(), 10);
            assert!(others.iter().all(|o| !std::ptr::eq(*o, p.input(c))));
        }
    }

    #[test]
    fn rotation_is_applied_to_every_member() {
        let p = pack(16, 16);
        let e = PatchEntry {
            pack: 0,
            input: Scene::Rain,
            top: 4,
            left: 2,
        };
        let (c0, i0, o0) = load_patch::<f32>(&p, &e, 8, 0).unwrap();
        let (c2, i2, o2) = load_patch::<f32>(&p, &e, 8, 2).unwrap();
        let back = |t: &Tensor<f32>| Image::from_tensor(t).unwrap().rot90(2).to_tensor::<f32>();
        assert_eq!(back(&c2).data(), c0.data());
        assert_eq!(back(&i2).data(), i0.data());
        for (a, b) in o0.iter().zip(&o2) {
            assert_eq!(back(b).data(), a.data());
        }
        assert_ne!(c2.data(), c0.data());
    }
}
