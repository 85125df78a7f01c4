use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    apply_haze, apply_low_light, apply_rain, apply_snow, estimate_illumination, generate_streaks, DepthMap,
    Image, StreakKind, StreakParams,
};
use crate::error::{contract_err, Result};
use crate::scene::Scene;

/// Which stages to apply and with which physical parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub low: bool,
    pub haze: bool,
    pub rain: bool,
    pub snow: bool,
    pub gamma: f64,
    pub noise_var: f64,
    pub beta: f64,
    pub airlight: f64,
    pub streak: StreakParams,
    pub seed: u64,
}

impl DegradationSpec {
    /// A spec with every stage off and mid-range parameters.
    pub fn clear(seed: u64) -> Self {
        Self {
            low: false,
            haze: false,
            rain: false,
            snow: false,
            gamma: 2.5,
            noise_var: 0.05,
            beta: 1.5,
            airlight: 0.75,
            streak: StreakParams::default(),
            seed,
        }
    }

    /// Draws parameters uniformly from the synthesis ranges for `scene`.
    pub fn sample<R: Rng + ?Sized>(scene: Scene, seed: u64, rng: &mut R) -> Self {
        let kind = if scene.has_snow() { StreakKind::Snow } else { StreakKind::Rain };
        Self {
            low: scene.has_low(),
            haze: scene.has_haze(),
            rain: scene.has_rain(),
            snow: scene.has_snow(),
            gamma: rng.random_range(2.0..=3.0),
            noise_var: rng.random_range(0.03..=0.08),
            beta: rng.random_range(1.0..=2.0),
            airlight: rng.random_range(0.6..=0.9),
            streak: StreakParams::sample(kind, rng),
            seed,
        }
    }

    pub fn scene(&self) -> Scene {
        let words: Vec<&str> = [
            (self.low, "low"),
            (self.haze, "haze"),
            (self.rain, "rain"),
            (self.snow, "snow"),
        ]
        .into_iter()
        .filter_map(|(on, w)| on.then_some(w))
        .collect();
        if words.is_empty() {
            Scene::Clear
        } else {
            words.join("+").parse().expect("validated flags form a scene")
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rain && self.snow {
            return Err(contract_err!("rain and snow cannot be combined"));
        }
        if self.low {
            if !(2.0..=3.0).contains(&self.gamma) {
                return Err(contract_err!("gamma {} outside [2, 3]", self.gamma));
            }
            if !(0.03..=0.08).contains(&self.noise_var) {
                return Err(contract_err!("noise variance {} outside [0.03, 0.08]", self.noise_var));
            }
        }
        if self.haze {
            if !(1.0..=2.0).contains(&self.beta) {
                return Err(contract_err!("beta {} outside [1, 2]", self.beta));
            }
            if !(0.6..=0.9).contains(&self.airlight) {
                return Err(contract_err!("airlight {} outside [0.6, 0.9]", self.airlight));
            }
        }
        if self.rain || self.snow {
            self.streak.validate()?;
        }
        Ok(())
    }
}

/// Parameters of the stages that were actually applied.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub gamma: Option<f64>,
    pub noise_var: Option<f64>,
    pub beta: Option<f64>,
    #[serde(rename = "A")]
    pub airlight: Option<f64>,
    pub streak_kind: Option<StreakKind>,
    pub streak_params: Option<StreakParams>,
    pub seed: u64,
}

impl Manifest {
    pub fn is_empty(&self) -> bool {
        self.gamma.is_none() && self.beta.is_none() && self.streak_params.is_none()
    }
}

/// Stage index used to derive independent per-stage seeds.
#[derive(Clone, Copy, Debug)]
pub enum Stage {
    LowLight = 0,
    Streak = 1,
    Haze = 2,
}

/// SplitMix64 finalizer; a well-mixed 64-bit hash.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a sequence of keys into one seed.
pub fn derive_seed(keys: &[u64]) -> u64 {
    keys.iter().fold(0x6a09_e667_f3bc_c908, |acc, &k| mix64(acc ^ mix64(k)))
}

pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    derive_seed(&[seed, stage as u64])
}

/// Applies the flagged stages in the order low light → rain/snow → haze.
pub fn compose(img: &Image, spec: &DegradationSpec, depth: &DepthMap) -> Result<(Image, Manifest)> {
    spec.validate()?;
    let mut out = img.clone();
    let mut manifest = Manifest {
        seed: spec.seed,
        ..Manifest::default()
    };
    if spec.low {
        let l = estimate_illumination(&out);
        out = apply_low_light(&out, &l, spec.gamma, spec.noise_var, stage_seed(spec.seed, Stage::LowLight))?;
        manifest.gamma = Some(spec.gamma);
        manifest.noise_var = Some(spec.noise_var);
    }
    if spec.rain || spec.snow {
        let kind = if spec.rain { StreakKind::Rain } else { StreakKind::Snow };
        let layer = generate_streaks(
            kind,
            &spec.streak,
            out.height(),
            out.width(),
            stage_seed(spec.seed, Stage::Streak),
        )?;
        out = match kind {
            StreakKind::Rain => apply_rain(&out, &layer)?,
            StreakKind::Snow => apply_snow(&out, &layer)?,
        };
        manifest.streak_kind = Some(kind);
        manifest.streak_params = Some(spec.streak);
    }
    if spec.haze {
        out = apply_haze(&out, depth, spec.beta, spec.airlight)?;
        manifest.beta = Some(spec.beta);
        manifest.airlight = Some(spec.airlight);
    }
    Ok((out, manifest))
}
