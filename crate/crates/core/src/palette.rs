//! The 12-odorant palette every composition is expressed over.
//!
//! A palette is loaded once from a JSON document and is immutable afterwards.
//! Odorants are kept in ascending channel order, which is also the order used
//! whenever the palette is rendered into a prompt.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of base odorants (and hardware channels).
pub const PALETTE_SIZE: usize = 12;

/// Default dispensing cycle length.
pub const DEFAULT_CYCLE_SECONDS: u32 = 60;

const BUNDLED_PALETTE: &str = include_str!("../assets/palette.json");

#[derive(Debug, Error)]
pub enum PaletteError {
    #[error("malformed palette document: {0}")]
    Malformed(String),
    #[error("palette must contain exactly {PALETTE_SIZE} odorants (found {0})")]
    Count(usize),
    #[error("duplicate name: {0}")]
    DuplicateName(String),
    #[error("duplicate channel: {0}")]
    DuplicateChannel(u8),
    #[error("channel {channel} of {name} is outside 0..{PALETTE_SIZE}")]
    ChannelRange { name: String, channel: u8 },
    #[error("volatility {volatility} of {name} is outside 1..=10")]
    VolatilityRange { name: String, volatility: u8 },
    #[error("odorant name must not be empty")]
    EmptyName,
    #[error("cycle_seconds must be positive")]
    CycleLength,
    #[error("unknown odorant: {0:?}")]
    UnknownName(String),
}

/// Perceptual category shown as a colour swatch next to each odorant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Sweet,
    Savory,
    Sour,
    BurntSmoked,
    Fresh,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Sweet,
        Category::Savory,
        Category::Sour,
        Category::BurntSmoked,
        Category::Fresh,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Sweet => "sweet",
            Category::Savory => "savory",
            Category::Sour => "sour",
            Category::BurntSmoked => "burnt_smoked",
            Category::Fresh => "fresh",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Odorant {
    pub name: String,
    pub volatility: u8,
    #[serde(rename = "note")]
    pub notes: String,
    #[serde(default)]
    pub categories: BTreeSet<Category>,
    #[serde(rename = "location")]
    pub channel: u8,
}

/// A validated palette. Construct through [`Palette::load`] or
/// [`Palette::from_odorants`]; the fields are never mutated afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    odorants: Vec<Odorant>,
    cycle_seconds: u32,
}

#[derive(Deserialize)]
struct PaletteDocument {
    #[serde(default = "default_cycle")]
    cycle_seconds: u32,
    odorants: Vec<Odorant>,
}

fn default_cycle() -> u32 {
    DEFAULT_CYCLE_SECONDS
}

/// Field order of this struct is the key order of the prompt fragment.
#[derive(Serialize)]
struct FragmentOdorant<'a> {
    name: &'a str,
    volatility: u8,
    note: &'a str,
    location: u8,
}

#[derive(Serialize)]
struct FragmentDocument<'a> {
    odorants: Vec<FragmentOdorant<'a>>,
}

impl Palette {
    /// Reads and validates a palette document.
    pub fn load<R: Read>(mut source: R) -> Result<Self, PaletteError> {
        let mut text = String::new();
        source
            .read_to_string(&mut text)
            .map_err(|e| PaletteError::Malformed(e.to_string()))?;
        text.parse()
    }

    /// The palette shipped with the crate.
    pub fn bundled() -> Self {
        BUNDLED_PALETTE.parse().expect("bundled palette is valid")
    }

    pub fn from_odorants(
        mut odorants: Vec<Odorant>,
        cycle_seconds: u32,
    ) -> Result<Self, PaletteError> {
        if odorants.len() != PALETTE_SIZE {
            return Err(PaletteError::Count(odorants.len()));
        }
        if cycle_seconds == 0 {
            return Err(PaletteError::CycleLength);
        }
        let mut names = BTreeSet::new();
        let mut channels = BTreeSet::new();
        for o in &odorants {
            if o.name.is_empty() {
                return Err(PaletteError::EmptyName);
            }
            if !(1..=10).contains(&o.volatility) {
                return Err(PaletteError::VolatilityRange {
                    name: o.name.clone(),
                    volatility: o.volatility,
                });
            }
            if usize::from(o.channel) >= PALETTE_SIZE {
                return Err(PaletteError::ChannelRange {
                    name: o.name.clone(),
                    channel: o.channel,
                });
            }
            if !names.insert(o.name.as_str()) {
                return Err(PaletteError::DuplicateName(o.name.clone()));
            }
            if !channels.insert(o.channel) {
                return Err(PaletteError::DuplicateChannel(o.channel));
            }
        }
        odorants.sort_by_key(|o| o.channel);
        Ok(Self {
            odorants,
            cycle_seconds,
        })
    }

    /// Odorants in ascending channel order.
    pub fn odorants(&self) -> &[Odorant] {
        &self.odorants
    }

    pub fn cycle_seconds(&self) -> u32 {
        self.cycle_seconds
    }

    pub fn cycle_ms(&self) -> u64 {
        u64::from(self.cycle_seconds) * 1000
    }

    /// Case-sensitive exact lookup.
    pub fn odorant_by_name(&self, name: &str) -> Result<&Odorant, PaletteError> {
        self.odorants
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| PaletteError::UnknownName(name.to_owned()))
    }

    /// Position of `name` in canonical order (equal to its channel).
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.odorants.iter().position(|o| o.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.odorants.iter().map(|o| o.name.as_str())
    }

    /// Canonical JSON substituted for `{{ scents_json }}` in the prompts.
    ///
    /// Only the attributes the prompts describe are emitted. The output is a
    /// valid palette document, so it loads back to a palette that renders to
    /// the same bytes.
    pub fn prompt_fragment(&self) -> String {
        let doc = FragmentDocument {
            odorants: self
                .odorants
                .iter()
                .map(|o| FragmentOdorant {
                    name: &o.name,
                    volatility: o.volatility,
                    note: &o.notes,
                    location: o.channel,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("fragment serializes")
    }

    /// Full palette document including categories and cycle length.
    pub fn to_document(&self) -> serde_json::Value {
        serde_json::json!({
            "cycle_seconds": self.cycle_seconds,
            "odorants": self.odorants,
        })
    }
}

impl FromStr for Palette {
    type Err = PaletteError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let doc: PaletteDocument =
            serde_json::from_str(s).map_err(|e| PaletteError::Malformed(e.to_string()))?;
        Self::from_odorants(doc.odorants, doc.cycle_seconds)
    }
}
