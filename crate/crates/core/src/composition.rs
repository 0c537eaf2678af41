//! Ratio vectors over the palette and their conversion to dispense schedules.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::ops::RangeInclusive;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::palette::{Palette, PALETTE_SIZE};
use crate::scalar::{self, Scalar};

/// Units a ratio vector is apportioned over (two decimal places).
pub const HUNDREDTHS: u32 = 100;

/// Active-odorant count the generation prompt asks for.
pub const ACTIVE_BAND: RangeInclusive<usize> = 3..=6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompositionError {
    #[error("unknown odorant: {0}")]
    UnknownOdorant(String),
    #[error("missing odorant: {0}")]
    MissingOdorant(String),
    #[error("odorant listed twice: {0}")]
    DuplicateOdorant(String),
    #[error("ratio for {0} is not a finite number")]
    NonFinite(String),
    #[error("ratio for {name} is not a two-decimal value in [0, 1]: {value}")]
    NotHundredths { name: String, value: String },
    #[error("ratios sum to {0} hundredths, expected 100")]
    BadSum(u32),
    #[error("degenerate composition: no positive ratios")]
    Degenerate,
}

/// A ratio in integer hundredths (`33` is `0.33`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hundredths(pub u32);

impl Hundredths {
    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / f64::from(HUNDREDTHS)
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Parses a decimal string with at most two fractional digits in `[0, 1]`.
    pub fn parse(text: &str) -> Option<Self> {
        let exact = scalar::parse_decimal(text)?;
        let scaled = exact * scalar::Exact::from_integer(HUNDREDTHS.into());
        if !scaled.is_integer() {
            return None;
        }
        let units: u32 = scaled.to_integer().try_into().ok()?;
        (units <= HUNDREDTHS).then_some(Hundredths(units))
    }
}

impl fmt::Display for Hundredths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / HUNDREDTHS, self.0 % HUNDREDTHS)
    }
}

impl Serialize for Hundredths {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatioEntry {
    pub name: String,
    pub channel: u8,
    pub ratio: Hundredths,
}

/// A convex combination over the full palette, held as integer hundredths.
///
/// Always has one entry per palette odorant in channel order, and the
/// entries sum to exactly 100 hundredths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatioVector {
    entries: Vec<RatioEntry>,
}

impl RatioVector {
    /// Builds a vector from exact hundredths. Names absent from `values` are
    /// zero; any other violation is an error (no repair is attempted).
    pub fn from_hundredths<'a>(
        palette: &Palette,
        values: impl IntoIterator<Item = (&'a str, u32)>,
    ) -> Result<Self, CompositionError> {
        let mut units = [0u32; PALETTE_SIZE];
        let mut seen = HashSet::new();
        for (name, h) in values {
            let idx = palette
                .index_of(name)
                .ok_or_else(|| CompositionError::UnknownOdorant(name.to_owned()))?;
            if !seen.insert(idx) {
                return Err(CompositionError::DuplicateOdorant(name.to_owned()));
            }
            units[idx] = h;
        }
        Self::from_units(palette, &units)
    }

    /// Strictly parses a `name -> "0.25"` map such as the session log writes.
    /// All palette names must be present.
    pub fn from_decimal_strings(
        palette: &Palette,
        map: &BTreeMap<String, String>,
    ) -> Result<Self, CompositionError> {
        for name in palette.names() {
            if !map.contains_key(name) {
                return Err(CompositionError::MissingOdorant(name.to_owned()));
            }
        }
        let mut values = Vec::with_capacity(map.len());
        for (name, text) in map {
            let h = Hundredths::parse(text).ok_or_else(|| CompositionError::NotHundredths {
                name: name.clone(),
                value: text.clone(),
            })?;
            values.push((name.as_str(), h.0));
        }
        Self::from_hundredths(palette, values)
    }

    fn from_units(
        palette: &Palette,
        units: &[u32; PALETTE_SIZE],
    ) -> Result<Self, CompositionError> {
        let sum: u32 = units.iter().sum();
        if sum != HUNDREDTHS {
            return Err(CompositionError::BadSum(sum));
        }
        let entries = palette
            .odorants()
            .iter()
            .zip(units)
            .map(|(o, &h)| RatioEntry {
                name: o.name.clone(),
                channel: o.channel,
                ratio: Hundredths(h),
            })
            .collect();
        Ok(Self { entries })
    }

    /// Entries in channel order, zeros included.
    pub fn entries(&self) -> &[RatioEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<Hundredths> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.ratio)
    }

    /// `(name, ratio)` pairs with a positive ratio, ratio descending then
    /// channel ascending.
    pub fn active_odorants(&self) -> Vec<(&str, Hundredths)> {
        let mut active: Vec<&RatioEntry> =
            self.entries.iter().filter(|e| !e.ratio.is_zero()).collect();
        active.sort_by(|a, b| b.ratio.cmp(&a.ratio).then(a.channel.cmp(&b.channel)));
        active
            .into_iter()
            .map(|e| (e.name.as_str(), e.ratio))
            .collect()
    }

    /// Warning when the active count falls outside [`ACTIVE_BAND`].
    pub fn active_band_warning(&self) -> Option<ConstraintWarning> {
        let count = self.entries.iter().filter(|e| !e.ratio.is_zero()).count();
        (!ACTIVE_BAND.contains(&count)).then_some(ConstraintWarning::ActiveCount { count })
    }

    /// `name -> "0.25"`, keyed by name.
    pub fn to_decimal_strings(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.ratio.to_string()))
            .collect()
    }

    /// The model-facing JSON object: numeric ratios in channel order.
    pub fn to_json_numbers(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .entries
            .iter()
            .map(|e| (e.name.clone(), serde_json::json!(e.ratio.as_f64())))
            .collect();
        serde_json::Value::Object(map)
    }
}

/// Serializes as a `name -> "0.25"` map in channel order.
impl Serialize for RatioVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.entries.len()))?;
        for e in &self.entries {
            map.serialize_entry(&e.name, &e.ratio)?;
        }
        map.end()
    }
}

/// Soft constraint violations that are reported but not rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintWarning {
    /// Number of active odorants outside [`ACTIVE_BAND`].
    ActiveCount { count: usize },
}

impl fmt::Display for ConstraintWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintWarning::ActiveCount { count: n } => write!(
                f,
                "{n} active odorants, outside the {}-{} band",
                ACTIVE_BAND.start(),
                ACTIVE_BAND.end()
            ),
        }
    }
}

/// Result of [`repair_ratios_traced`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repair {
    pub ratios: RatioVector,
    /// False when the input already was a valid vector (missing keys aside).
    pub modified: bool,
}

/// Coerces raw model output into a valid [`RatioVector`].
///
/// Missing palette names become zero, negatives are clamped to zero, and the
/// rest is renormalized and apportioned to hundredths by largest remainder
/// (ties go to the lower channel). Unknown names are rejected.
pub fn repair_ratios<T, K>(
    raw: impl IntoIterator<Item = (K, T)>,
    palette: &Palette,
) -> Result<RatioVector, CompositionError>
where
    T: Scalar,
    K: AsRef<str>,
{
    repair_ratios_traced(raw, palette).map(|r| r.ratios)
}

pub fn repair_ratios_traced<T, K>(
    raw: impl IntoIterator<Item = (K, T)>,
    palette: &Palette,
) -> Result<Repair, CompositionError>
where
    T: Scalar,
    K: AsRef<str>,
{
    let mut weights: Vec<T> = vec![T::zero(); PALETTE_SIZE];
    let mut seen = HashSet::new();
    let mut clamped = false;
    for (key, value) in raw {
        let name = key.as_ref();
        let idx = palette
            .index_of(name)
            .ok_or_else(|| CompositionError::UnknownOdorant(name.to_owned()))?;
        if !seen.insert(idx) {
            return Err(CompositionError::DuplicateOdorant(name.to_owned()));
        }
        if !value.is_finite_value() {
            return Err(CompositionError::NonFinite(name.to_owned()));
        }
        if scalar::is_positive(&value) {
            weights[idx] = value;
        } else if value != T::zero() {
            clamped = true;
        }
    }
    if weights.iter().all(|w| *w == T::zero()) {
        return Err(CompositionError::Degenerate);
    }

    let units = largest_remainder(&weights, HUNDREDTHS);
    let modified = clamped || !reproduces(&weights, &units);
    let mut fixed = [0u32; PALETTE_SIZE];
    fixed.copy_from_slice(&units);
    let ratios = RatioVector::from_units(palette, &fixed)?;
    Ok(Repair { ratios, modified })
}

/// True when each weight equals its apportioned units / 100.
fn reproduces<T: Scalar>(weights: &[T], units: &[u32]) -> bool {
    let scale = T::from_u32(HUNDREDTHS).expect("scalar holds 100");
    weights.iter().zip(units).all(|(w, &u)| {
        let target = T::from_u32(u).expect("scalar holds small integers");
        w.clone() * scale.clone() == target
    })
}

/// Hamilton apportionment of `units` proportional to `weights`.
///
/// Weights must be non-negative with a positive sum. Equal remainders are
/// resolved in favour of the lower index.
pub fn largest_remainder<T: Scalar>(weights: &[T], units: u32) -> Vec<u32> {
    let total = weights.iter().cloned().fold(T::zero(), |acc, w| acc + w);
    let scale = T::from_u32(units).expect("scalar holds unit count");
    let mut floors = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    for w in weights {
        let share = w.clone() * scale.clone() / total.clone();
        let floor = share.floor_value();
        floors.push(floor.to_u32().unwrap_or(0));
        remainders.push(share - floor);
    }
    let assigned: u32 = floors.iter().sum();
    let leftover = units.saturating_sub(assigned) as usize;

    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        remainders[b]
            .partial_cmp(&remainders[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(leftover) {
        floors[i] += 1;
    }
    floors
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub channel: u8,
    pub odorant: String,
    pub volatility: u8,
    pub duration_ms: u64,
}

/// Sequential release plan for one dispensing cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispenseSchedule {
    pub steps: Vec<ScheduleStep>,
    pub total_ms: u64,
}

/// Converts ratios into a volatility-descending schedule filling the cycle.
///
/// Each active odorant gets `round(ratio * cycle)` milliseconds; any rounding
/// drift lands on the final step so the total is exact.
pub fn to_schedule(
    ratios: &RatioVector,
    palette: &Palette,
) -> Result<DispenseSchedule, CompositionError> {
    let total_ms = palette.cycle_ms();
    let mut steps = Vec::new();
    for e in ratios.entries().iter().filter(|e| !e.ratio.is_zero()) {
        let odorant = palette
            .odorant_by_name(&e.name)
            .map_err(|_| CompositionError::UnknownOdorant(e.name.clone()))?;
        let scaled = u64::from(e.ratio.0) * total_ms;
        let hundred = u64::from(HUNDREDTHS);
        let duration_ms = (2 * scaled + hundred) / (2 * hundred);
        steps.push(ScheduleStep {
            channel: odorant.channel,
            odorant: odorant.name.clone(),
            volatility: odorant.volatility,
            duration_ms,
        });
    }
    if steps.is_empty() {
        return Err(CompositionError::Degenerate);
    }
    steps.sort_by(|a, b| {
        b.volatility
            .cmp(&a.volatility)
            .then(a.channel.cmp(&b.channel))
    });
    let assigned: u64 = steps.iter().map(|s| s.duration_ms).sum();
    let last = steps.last_mut().expect("non-empty");
    last.duration_ms = (last.duration_ms + total_ms).saturating_sub(assigned);
    Ok(DispenseSchedule { steps, total_ms })
}
