use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::AnalysisError;

pub const DESCRIPTORS: [&str; 6] = [
    "sweet",
    "savory",
    "sour",
    "burnt_smoked",
    "fresh",
    "chemical_artificial",
];

/// A 1 to 10 Likert rating on each semantic dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawRating", into = "RawRating")]
pub struct DescriptorRating([u8; 6]);

#[derive(Serialize, Deserialize)]
struct RawRating {
    sweet: u8,
    savory: u8,
    sour: u8,
    burnt_smoked: u8,
    fresh: u8,
    chemical_artificial: u8,
}

impl TryFrom<RawRating> for DescriptorRating {
    type Error = AnalysisError;
    fn try_from(r: RawRating) -> Result<Self, Self::Error> {
        Self::new([
            r.sweet,
            r.savory,
            r.sour,
            r.burnt_smoked,
            r.fresh,
            r.chemical_artificial,
        ])
    }
}

impl From<DescriptorRating> for RawRating {
    fn from(d: DescriptorRating) -> Self {
        let [sweet, savory, sour, burnt_smoked, fresh, chemical_artificial] = d.0;
        RawRating {
            sweet,
            savory,
            sour,
            burnt_smoked,
            fresh,
            chemical_artificial,
        }
    }
}

impl DescriptorRating {
    /// Values in [`DESCRIPTORS`] order.
    pub fn new(values: [u8; 6]) -> Result<Self, AnalysisError> {
        for (dimension, &value) in DESCRIPTORS.iter().zip(&values) {
            if !(1..=10).contains(&value) {
                return Err(AnalysisError::RatingRange { dimension, value });
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> [u8; 6] {
        self.0
    }

    pub fn get(&self, dimension: &str) -> Option<u8> {
        DESCRIPTORS
            .iter()
            .position(|d| *d == dimension)
            .map(|i| self.0[i])
    }
}

/// Euclidean distance between two ratings.
pub fn descriptor_distance<T: Float>(a: &DescriptorRating, b: &DescriptorRating) -> T {
    let sq: u32 =
        a.0.iter()
            .zip(&b.0)
            .map(|(&x, &y)| u32::from(x.abs_diff(y)).pow(2))
            .sum();
    T::from(sq).expect("small integer").sqrt()
}

/// Euclidean distance between equal-length vectors.
pub fn euclidean<T: Float>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "dimension mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt()
}
