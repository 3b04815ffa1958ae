//! The nine rated visual attributes and their ordinal scales.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of scored attributes.
pub const ATTRIBUTE_COUNT: usize = 9;

/// Visual attribute of a nodule, in the fixed scoring order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Subtlety,
    InternalStructure,
    Calcification,
    Sphericity,
    Margin,
    Lobulation,
    Spiculation,
    Texture,
    Malignancy,
}

impl Attribute {
    pub const ALL: [Attribute; ATTRIBUTE_COUNT] = [
        Attribute::Subtlety,
        Attribute::InternalStructure,
        Attribute::Calcification,
        Attribute::Sphericity,
        Attribute::Margin,
        Attribute::Lobulation,
        Attribute::Spiculation,
        Attribute::Texture,
        Attribute::Malignancy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Subtlety => "subtlety",
            Attribute::InternalStructure => "internal_structure",
            Attribute::Calcification => "calcification",
            Attribute::Sphericity => "sphericity",
            Attribute::Margin => "margin",
            Attribute::Lobulation => "lobulation",
            Attribute::Spiculation => "spiculation",
            Attribute::Texture => "texture",
            Attribute::Malignancy => "malignancy",
        }
    }

    pub fn from_name(name: &str) -> Option<Attribute> {
        Attribute::ALL.iter().copied().find(|a| a.name() == name)
    }

    pub fn index(self) -> usize {
        Attribute::ALL.iter().position(|a| *a == self).unwrap()
    }

    /// Rating scale `(min, max)`. All attributes run 1–5 except internal
    /// structure (1–4) and calcification (1–6).
    pub fn scale(self) -> (f64, f64) {
        match self {
            Attribute::InternalStructure => (1.0, 4.0),
            Attribute::Calcification => (1.0, 6.0),
            _ => (1.0, 5.0),
        }
    }

    pub fn spec(self) -> AttributeSpec {
        let (lo, hi) = self.scale();
        AttributeSpec {
            name: self.name().to_string(),
            scale_min: lo as i32,
            scale_max: hi as i32,
        }
    }
}

/// Serializable description of one attribute's scale, as stored in
/// checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub scale_min: i32,
    pub scale_max: i32,
}

/// All nine specs in scoring order.
pub fn attribute_specs() -> Vec<AttributeSpec> {
    Attribute::ALL.iter().map(|a| a.spec()).collect()
}

#[derive(Debug, Error)]
#[error("rating {value} for {attribute} outside scale [{lo}, {hi}]")]
pub struct RatingOutOfScale {
    pub attribute: &'static str,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Map an original-scale rating into `[0, 1]`.
pub fn normalize_rating(attribute: Attribute, rating: f64) -> Result<f64, RatingOutOfScale> {
    let (lo, hi) = attribute.scale();
    if !(lo..=hi).contains(&rating) || !rating.is_finite() {
        return Err(RatingOutOfScale {
            attribute: attribute.name(),
            value: rating,
            lo,
            hi,
        });
    }
    Ok((rating - lo) / (hi - lo))
}

/// Inverse of [`normalize_rating`]; accepts any real and maps it affinely
/// back onto the attribute's original scale.
pub fn denormalize_score(attribute: Attribute, normalized: f64) -> f64 {
    let (lo, hi) = attribute.scale();
    normalized * (hi - lo) + lo
}

/// Normalize a full 9-vector of ratings given in scoring order.
pub fn normalize_ratings(ratings: &[f64; ATTRIBUTE_COUNT]) -> Result<[f64; ATTRIBUTE_COUNT], RatingOutOfScale> {
    let mut out = [0.0; ATTRIBUTE_COUNT];
    for (i, attr) in Attribute::ALL.iter().enumerate() {
        out[i] = normalize_rating(*attr, ratings[i])?;
    }
    Ok(out)
}
