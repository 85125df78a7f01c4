//! The twelve scene labels shared by synthesis, the descriptor and the CLI.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A degradation scene: the clear state, four single degradations and seven
/// composites. Rain and snow never appear together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scene {
    Clear,
    Low,
    Haze,
    Rain,
    Snow,
    LowHaze,
    LowRain,
    LowSnow,
    HazeRain,
    HazeSnow,
    LowHazeRain,
    LowHazeSnow,
}

/// Base words whose vectors seed the scene text embeddings.
pub const BASE_WORDS: [&str; 5] = ["clear", "low", "haze", "rain", "snow"];

impl Scene {
    /// All labels in their fixed serialization order.
    pub const ALL: [Scene; 12] = [
        Scene::Clear,
        Scene::Low,
        Scene::Haze,
        Scene::Rain,
        Scene::Snow,
        Scene::LowHaze,
        Scene::LowRain,
        Scene::LowSnow,
        Scene::HazeRain,
        Scene::HazeSnow,
        Scene::LowHazeRain,
        Scene::LowHazeSnow,
    ];

    /// The eleven degraded categories (everything but `Clear`).
    pub fn degraded() -> &'static [Scene] {
        &Self::ALL[1..]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Scene> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Scene::Clear => "clear",
            Scene::Low => "low",
            Scene::Haze => "haze",
            Scene::Rain => "rain",
            Scene::Snow => "snow",
            Scene::LowHaze => "low+haze",
            Scene::LowRain => "low+rain",
            Scene::LowSnow => "low+snow",
            Scene::HazeRain => "haze+rain",
            Scene::HazeSnow => "haze+snow",
            Scene::LowHazeRain => "low+haze+rain",
            Scene::LowHazeSnow => "low+haze+snow",
        }
    }

    pub fn has_low(self) -> bool {
        self.label().split('+').any(|w| w == "low")
    }

    pub fn has_haze(self) -> bool {
        self.label().split('+').any(|w| w == "haze")
    }

    pub fn has_rain(self) -> bool {
        self.label().split('+').any(|w| w == "rain")
    }

    pub fn has_snow(self) -> bool {
        self.label().split('+').any(|w| w == "snow")
    }

    /// Indices into [`BASE_WORDS`] of the words composing this label.
    pub fn components(self) -> Vec<usize> {
        self.label()
            .split('+')
            .map(|w| BASE_WORDS.iter().position(|b| *b == w).expect("base word"))
            .collect()
    }

    fn from_flags(low: bool, haze: bool, rain: bool, snow: bool) -> Option<Scene> {
        Self::ALL.into_iter().find(|s| {
            *s != Scene::Clear
                && s.has_low() == low
                && s.has_haze() == haze
                && s.has_rain() == rain
                && s.has_snow() == snow
        })
    }

    fn valid_labels() -> String {
        Self::ALL.map(|s| s.label()).join(", ")
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scene {
    type Err = Error;

    /// Accepts any `+`-joined ordering of the base words, case-insensitive.
    fn from_str(text: &str) -> Result<Self, Error> {
        let unknown = || Error::UnknownScene {
            text: text.to_string(),
            valid: Self::valid_labels(),
        };
        let norm = text.trim().to_ascii_lowercase();
        if norm == "clear" {
            return Ok(Scene::Clear);
        }
        let mut flags = [false; 4];
        for word in norm.split('+').map(str::trim) {
            let slot = match word {
                "low" => 0,
                "haze" => 1,
                "rain" => 2,
                "snow" => 3,
                _ => return Err(unknown()),
            };
            if flags[slot] {
                return Err(unknown());
            }
            flags[slot] = true;
        }
        Scene::from_flags(flags[0], flags[1], flags[2], flags[3]).ok_or_else(unknown)
    }
}

impl TryFrom<String> for Scene {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<Scene> for String {
    fn from(s: Scene) -> String {
        s.label().to_string()
    }
}
