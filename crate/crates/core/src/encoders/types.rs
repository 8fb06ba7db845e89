use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-dimension real vector with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f32>,
    pub dim: usize,
    /// Encoder id (which fixes the embedding space).
    pub source: String,
}

impl Embedding {
    pub fn new(values: Vec<f32>, source: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("embedding has non-finite values".into()));
        }
        Ok(Self { dim: values.len(), values, source: source.into() })
    }
}

/// One embedding per visual region of a sticker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEmbeddings {
    pub regions: Vec<Vec<f32>>,
    pub dim: usize,
    pub source: String,
}

impl RegionEmbeddings {
    pub fn new(regions: Vec<Vec<f32>>, source: impl Into<String>) -> Result<Self> {
        let dim = regions.first().map_or(0, Vec::len);
        if regions.is_empty() || dim == 0 {
            return Err(Error::Shape("a sticker needs at least one non-empty region".into()));
        }
        if regions.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("regions have differing dimensions".into()));
        }
        if regions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Shape("region embedding has non-finite values".into()));
        }
        Ok(Self { regions, dim, source: source.into() })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

/// The four descriptive axes of a sticker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attribute {
    #[serde(rename = "G")]
    Gesture,
    #[serde(rename = "P")]
    Posture,
    #[serde(rename = "F")]
    FacialExpression,
    #[serde(rename = "V")]
    Verbal,
}

impl Attribute {
    pub const ALL: [Attribute; 4] =
        [Attribute::Gesture, Attribute::Posture, Attribute::FacialExpression, Attribute::Verbal];

    /// Word substituted into the description prompt.
    pub fn prompt_word(self) -> &'static str {
        match self {
            Attribute::Gesture => "gesture",
            Attribute::Posture => "posture",
            Attribute::FacialExpression => "facial expression",
            Attribute::Verbal => "verbal",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Attribute::Gesture => 'G',
            Attribute::Posture => 'P',
            Attribute::FacialExpression => 'F',
            Attribute::Verbal => 'V',
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "G" | "gesture" => Ok(Attribute::Gesture),
            "P" | "posture" => Ok(Attribute::Posture),
            "F" | "facial expression" | "facial_expression" => Ok(Attribute::FacialExpression),
            "V" | "verbal" => Ok(Attribute::Verbal),
            other => Err(Error::Config(format!("unknown attribute `{other}`"))),
        }
    }
}

/// Parses a comma-separated attribute list such as `G,P,F`.
pub fn parse_attribute_list(s: &str) -> Result<Vec<Attribute>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut out: Vec<Attribute> = s.split(',').map(str::parse).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDescriptions {
    pub gesture: String,
    pub posture: String,
    pub facial_expression: String,
    pub verbal: String,
}

impl AttributeDescriptions {
    pub fn get(&self, attribute: Attribute) -> &str {
        match attribute {
            Attribute::Gesture => &self.gesture,
            Attribute::Posture => &self.posture,
            Attribute::FacialExpression => &self.facial_expression,
            Attribute::Verbal => &self.verbal,
        }
    }
}

/// Raw sticker asset handed to visual backends.
#[derive(Debug, Clone)]
pub struct StickerAsset {
    pub id: String,
    pub bytes: Vec<u8>,
    pub verbal_text: Option<String>,
    pub origin: String,
}

impl StickerAsset {
    pub fn load(sticker: &crate::dataset::Sticker) -> Result<Self> {
        let bytes = std::fs::read(&sticker.image_ref).map_err(|e| Error::Asset {
            path: sticker.image_ref.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self {
            id: sticker.id.clone(),
            bytes,
            verbal_text: sticker.verbal_text.clone(),
            origin: sticker.image_ref.display().to_string(),
        })
    }

    pub fn decode(&self) -> Result<image::DynamicImage> {
        image::load_from_memory(&self.bytes).map_err(|e| Error::Asset { path: self.origin.clone(), message: e.to_string() })
    }
}
