//! Offline stand-in for a language model.
//!
//! Generation matches keywords in the request against a small table of
//! canned blends. Revision reads the current ratios and latest feedback back
//! out of the rendered prompt and applies "less X" / "more X" edits, where X
//! is a category word or an odorant name. Everything is integer arithmetic in
//! hundredths, so replies always satisfy the ratio contract.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::prompt::{CURRENT_RATIOS, LATEST_FEEDBACK, PRIOR_HISTORY};
use super::provider::{Provider, ProviderError};
use crate::composition::{Hundredths, HUNDREDTHS};
use crate::palette::{Category, Palette};

/// Keywords and the blend (in hundredths) they trigger.
type Canned = (&'static [&'static str], &'static [(&'static str, u32)]);

const CANNED: &[Canned] = &[
    (
        &["pizza"],
        &[
            ("Onion", 30),
            ("Isovaleric Acid", 20),
            ("Thyme", 20),
            ("Cumin", 15),
            ("Sage", 15),
        ],
    ),
    (
        &["salad", "vegetable", "greens"],
        &[
            ("Red Clover", 35),
            ("Thyme", 25),
            ("Strawberry", 20),
            ("Eucalyptus", 20),
        ],
    ),
    (
        &["chai", "latte", "tea"],
        &[
            ("Cinnamon", 30),
            ("Sichuan Oil", 30),
            ("Ylang Ylang", 25),
            ("Cumin", 15),
        ],
    ),
    (
        &["coffee", "espresso"],
        &[("Cinnamon", 40), ("Cumin", 30), ("Sichuan Oil", 30)],
    ),
    (
        &["cheese", "cheesy"],
        &[("Isovaleric Acid", 50), ("Onion", 25), ("Strawberry", 25)],
    ),
    (
        &["strawberr", "berry", "fruit", "cake", "dessert"],
        &[("Strawberry", 50), ("Ylang Ylang", 25), ("Cinnamon", 25)],
    ),
    (
        &["soup", "broth", "hotpot", "noodle", "ramen"],
        &[
            ("Sichuan Oil", 35),
            ("Onion", 30),
            ("Cumin", 20),
            ("Thyme", 15),
        ],
    ),
    (
        &["mint", "herbal", "spa"],
        &[("Eucalyptus", 40), ("Red Clover", 30), ("Sage", 30)],
    ),
];

const DEFAULT_BLEND: &[(&str, u32)] =
    &[("Onion", 30), ("Thyme", 25), ("Cinnamon", 25), ("Sage", 20)];

const CATEGORY_WORDS: &[(&str, Category)] = &[
    ("sweet", Category::Sweet),
    ("savory", Category::Savory),
    ("savoury", Category::Savory),
    ("umami", Category::Savory),
    ("sour", Category::Sour),
    ("acidic", Category::Sour),
    ("tangy", Category::Sour),
    ("smoky", Category::BurntSmoked),
    ("smoked", Category::BurntSmoked),
    ("burnt", Category::BurntSmoked),
    ("fresh", Category::Fresh),
    ("green", Category::Fresh),
    ("grass", Category::Fresh),
    ("grassy", Category::Fresh),
    ("herbal", Category::Fresh),
];

const DECREASE: &[&str] = &["less", "too", "reduce", "remove", "without", "no"];
const INCREASE: &[&str] = &["more", "add", "some", "extra", "stronger", "need"];

/// Step used by "more X" edits.
const BOOST: u32 = 10;

#[derive(Debug, Clone)]
pub struct MockProvider {
    palette: Palette,
}

impl MockProvider {
    pub fn new(palette: Palette) -> Self {
        Self { palette }
    }

    fn blend_for(&self, request: &str) -> (String, Vec<u32>) {
        let lower = request.to_lowercase();
        let (label, blend) = CANNED
            .iter()
            .find_map(|(keys, blend)| {
                keys.iter()
                    .find(|k| lower.contains(*k))
                    .map(|k| (k.to_string(), *blend))
            })
            .unwrap_or_else(|| ("general food".into(), DEFAULT_BLEND));
        let mut units = vec![0u32; self.palette.odorants().len()];
        let mut placed = 0;
        for (name, h) in blend {
            if let Some(i) = self.palette.index_of(name) {
                units[i] = *h;
                placed += h;
            }
        }
        if placed != HUNDREDTHS {
            // Custom palette without the canned names: split over the four
            // most volatile odorants.
            units.iter_mut().for_each(|u| *u = 0);
            for i in self.by_volatility().into_iter().take(4) {
                units[i] = HUNDREDTHS / 4;
            }
        }
        (label, units)
    }

    /// Palette indices, volatility descending then channel ascending.
    fn by_volatility(&self) -> Vec<usize> {
        let odorants = self.palette.odorants();
        let mut idx: Vec<usize> = (0..odorants.len()).collect();
        idx.sort_by(|&a, &b| {
            odorants[b]
                .volatility
                .cmp(&odorants[a].volatility)
                .then(a.cmp(&b))
        });
        idx
    }

    fn generation_reply(&self, user: &str) -> String {
        let (label, units) = self.blend_for(user);
        let active: Vec<String> = self
            .palette
            .odorants()
            .iter()
            .zip(&units)
            .filter(|(_, h)| **h > 0)
            .map(|(o, h)| format!("{} {}", o.name, Hundredths(*h)))
            .collect();
        let justification = format!("Food beats: {label}. Allocation: {}.", active.join(", "));
        self.reply(&units, &justification, None)
    }

    fn revision_reply(&self, user: &str) -> Result<String, ProviderError> {
        let mut units = self.current_ratios(user)?;
        let feedback = user
            .rsplit_once(LATEST_FEEDBACK)
            .map(|(_, f)| f.trim().to_lowercase())
            .unwrap_or_default();
        let before = units.clone();

        for (direction, targets) in self.edits(&feedback) {
            match direction {
                Direction::Decrease => self.decrease(&mut units, &targets),
                Direction::Increase => self.increase(&mut units, &targets),
            }
        }

        let mut changes = String::new();
        for (i, o) in self.palette.odorants().iter().enumerate() {
            let (old, new) = (before[i], units[i]);
            if old == new {
                continue;
            }
            let verb = match (old, new) {
                (_, 0) => "zeroed",
                (0, _) => "introduced",
                (o, n) if n > o => "increased",
                _ => "decreased",
            };
            if !changes.is_empty() {
                changes.push_str("; ");
            }
            let _ = write!(
                changes,
                "{} {verb} {}->{}",
                o.name,
                Hundredths(old),
                Hundredths(new)
            );
        }
        if changes.is_empty() {
            changes = "No changes: the feedback named nothing to adjust.".into();
        }
        let justification = format!("Addressed feedback \"{feedback}\" while anchoring the rest.");
        Ok(self.reply(&units, &justification, Some(&changes)))
    }

    fn current_ratios(&self, user: &str) -> Result<Vec<u32>, ProviderError> {
        let block = user
            .split_once(CURRENT_RATIOS)
            .and_then(|(_, rest)| rest.split_once(PRIOR_HISTORY))
            .map(|(block, _)| block)
            .ok_or_else(|| {
                ProviderError::Protocol("revision prompt lacks current ratios".into())
            })?;
        let mut units = vec![0u32; self.palette.odorants().len()];
        for line in block.lines() {
            let Some((name, value)) = line.trim().trim_end_matches(',').split_once(':') else {
                continue;
            };
            let name = name.trim().trim_matches('"');
            if let (Some(i), Some(h)) = (self.palette.index_of(name), Hundredths::parse(value)) {
                units[i] = h.0;
            }
        }
        if units.iter().sum::<u32>() != HUNDREDTHS {
            return Err(ProviderError::Protocol(
                "current ratios do not sum to 1.00".into(),
            ));
        }
        Ok(units)
    }

    /// Requested edits in the order their cue words appear.
    fn edits(&self, feedback: &str) -> Vec<(Direction, BTreeSet<usize>)> {
        let words: Vec<&str> = feedback
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let mut edits = Vec::new();
        for (pos, w) in words.iter().enumerate() {
            let direction = if DECREASE.contains(w) {
                Direction::Decrease
            } else if INCREASE.contains(w) {
                Direction::Increase
            } else {
                continue;
            };
            // The target is the first recognised term within the next three words.
            let target = words[pos + 1..]
                .iter()
                .take(3)
                .find_map(|t| self.targets_for(t));
            if let Some(targets) = target {
                edits.push((direction, targets));
            }
        }
        edits
    }

    fn targets_for(&self, word: &str) -> Option<BTreeSet<usize>> {
        if let Some((_, cat)) = CATEGORY_WORDS.iter().find(|(w, _)| *w == word) {
            let set: BTreeSet<usize> = self
                .palette
                .odorants()
                .iter()
                .enumerate()
                .filter(|(_, o)| o.categories.contains(cat))
                .map(|(i, _)| i)
                .collect();
            return (!set.is_empty()).then_some(set);
        }
        let singular = word.trim_end_matches('s');
        self.palette
            .odorants()
            .iter()
            .position(|o| {
                let name = o.name.to_lowercase();
                name == word
                    || name.split_whitespace().next() == Some(word)
                    || (singular.len() > 3 && name.starts_with(singular))
            })
            .map(|i| BTreeSet::from([i]))
    }

    /// Halves every active target; the freed share goes to the largest
    /// untargeted active odorant.
    fn decrease(&self, units: &mut [u32], targets: &BTreeSet<usize>) {
        let mut freed = 0;
        for &i in targets {
            let cut = units[i].div_ceil(2);
            units[i] -= cut;
            freed += cut;
        }
        if freed == 0 {
            return;
        }
        let receiver = self.largest_active(units, targets).or_else(|| {
            self.by_volatility()
                .into_iter()
                .find(|i| !targets.contains(i))
        });
        match receiver {
            Some(r) => units[r] += freed,
            None => {
                // Every odorant targeted: undo.
                let first = *targets.iter().next().expect("non-empty");
                units[first] += freed;
            }
        }
    }

    /// Adds up to [`BOOST`] to the largest active target (or introduces the
    /// most volatile target), taken from the largest untargeted odorant.
    fn increase(&self, units: &mut [u32], targets: &BTreeSet<usize>) {
        let Some(donor) = self.largest_active(units, targets) else {
            return;
        };
        let amount = BOOST.min(units[donor].saturating_sub(1));
        if amount == 0 {
            return;
        }
        let receiver = targets
            .iter()
            .copied()
            .filter(|&i| units[i] > 0)
            .max_by(|&a, &b| units[a].cmp(&units[b]).then(b.cmp(&a)))
            .or_else(|| {
                self.by_volatility()
                    .into_iter()
                    .find(|i| targets.contains(i))
            });
        if let Some(r) = receiver {
            units[donor] -= amount;
            units[r] += amount;
        }
    }

    fn largest_active(&self, units: &[u32], exclude: &BTreeSet<usize>) -> Option<usize> {
        (0..units.len())
            .filter(|i| units[*i] > 0 && !exclude.contains(i))
            .max_by(|&a, &b| units[a].cmp(&units[b]).then(b.cmp(&a)))
    }

    fn reply(&self, units: &[u32], justification: &str, changes: Option<&str>) -> String {
        let mut out = String::from("{\n  \"scent_ratios\": {\n");
        let last = units.len() - 1;
        for (i, (o, h)) in self.palette.odorants().iter().zip(units).enumerate() {
            let comma = if i == last { "" } else { "," };
            let _ = writeln!(out, "    \"{}\": {}{comma}", o.name, Hundredths(*h));
        }
        let _ = write!(
            out,
            "  }},\n  \"justification\": {}",
            json_string(justification)
        );
        if let Some(c) = changes {
            let _ = write!(out, ",\n  \"changes_made\": {}", json_string(c));
        }
        out.push_str("\n}");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Decrease,
    Increase,
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

impl Provider for MockProvider {
    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError> {
        if system.contains("REVISION mode") {
            self.revision_reply(user)
        } else {
            Ok(self.generation_reply(user))
        }
    }

    fn describe_image(&self, image: &[u8]) -> Result<String, ProviderError> {
        Ok(match std::str::from_utf8(image) {
            Ok(text) if !text.trim().is_empty() => format!("Photo of {}", text.trim()),
            _ => format!("Photo of an unidentified dish ({} bytes)", image.len()),
        })
    }

    fn transcribe(&self, audio: &[u8]) -> Result<String, ProviderError> {
        Ok(String::from_utf8_lossy(audio).trim().to_owned())
    }
}
