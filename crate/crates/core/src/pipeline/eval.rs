use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{psnr, ssim};
use super::models::{Embedder, Mode, Restorer};
use crate::degrade::{read_manifest, Image, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::scene::Scene;

/// Mean metrics over a group of pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub count: usize,
    pub input_psnr: f64,
    pub input_ssim: f64,
    pub restored_psnr: f64,
    pub restored_ssim: f64,
}

impl MetricRow {
    fn accumulate(&mut self, other: &MetricRow) {
        let n = (self.count + other.count) as f64;
        let (a, b) = (self.count as f64 / n, other.count as f64 / n);
        self.input_psnr = a * self.input_psnr + b * other.input_psnr;
        self.input_ssim = a * self.input_ssim + b * other.input_ssim;
        self.restored_psnr = a * self.restored_psnr + b * other.restored_psnr;
        self.restored_ssim = a * self.restored_ssim + b * other.restored_ssim;
        self.count += other.count;
    }
}

/// Per-pair outcome, kept for CSV export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub degraded_path: String,
    pub category: Scene,
    /// Scene whose descriptor conditioned the restorer.
    pub used: Scene,
    #[serde(flatten)]
    pub metrics: MetricRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Count-weighted mean over all pairs.
    pub overall: MetricRow,
    pub categories: BTreeMap<Scene, MetricRow>,
    /// Fraction of pairs whose descriptor matched the ground-truth label.
    pub routing_accuracy: f64,
    #[serde(skip)]
    pub pairs: Vec<PairResult>,
}

impl EvalReport {
    pub fn from_pairs(pairs: Vec<PairResult>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset("nothing to evaluate".into()));
        }
        let mut categories: BTreeMap<Scene, MetricRow> = BTreeMap::new();
        for p in &pairs {
            categories.entry(p.category).or_default().accumulate(&p.metrics);
        }
        let mut overall = MetricRow::default();
        for row in categories.values() {
            overall.accumulate(row);
        }
        let hits = pairs.iter().filter(|p| p.used == p.category).count();
        Ok(Self {
            overall,
            categories,
            routing_accuracy: hits as f64 / pairs.len() as f64,
            pairs,
        })
    }

    /// One line per pair followed by one per category and `overall`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("item,category,used,input_psnr,input_ssim,restored_psnr,restored_ssim\n");
        let mut line = |item: &str, cat: &str, used: &str, m: &MetricRow| {
            s.push_str(&format!(
                "{item},{cat},{used},{:.6},{:.6},{:.6},{:.6}\n",
                m.input_psnr, m.input_ssim, m.restored_psnr, m.restored_ssim
            ));
        };
        for p in &self.pairs {
            line(&p.degraded_path, p.category.label(), p.used.label(), &p.metrics);
        }
        for (c, m) in &self.categories {
            line("mean", c.label(), "", m);
        }
        line("mean", "overall", "", &self.overall);
        s
    }
}

/// Scores degraded inputs and restorations against their clear images for
/// every row of the dataset at `root`. Without an embedder the ground-truth
/// label selects the descriptor; with one, the automatic mode does.
pub fn evaluate<T: Real>(root: &Path, restorer: &Restorer<T>, embedder: Option<&Embedder<T>>) -> Result<EvalReport> {
    let records = read_manifest(&root.join(MANIFEST_FILE))?;
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!("{}: manifest has no rows", root.display())));
    }
    let pairs = records
        .par_iter()
        .map(|r| {
            let clear = Image::load(root.join(&r.clear_path))?;
            let degraded = Image::load(root.join(&r.degraded_path))?;
            let mode = embedder.map_or(Mode::Manual(r.category), Mode::Automatic);
            let out = restorer.restore(&degraded, mode)?;
            Ok(PairResult {
                degraded_path: r.degraded_path.clone(),
                category: r.category,
                used: out.scene,
                metrics: MetricRow {
                    count: 1,
                    input_psnr: psnr(&degraded, &clear)?,
                    input_ssim: ssim(&degraded, &clear)?,
                    restored_psnr: psnr(&out.image, &clear)?,
                    restored_ssim: ssim(&out.image, &clear)?,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_pairs(pairs)
}
