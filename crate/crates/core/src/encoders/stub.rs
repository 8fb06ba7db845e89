//! Deterministic stand-ins for the pretrained models. Every output is a pure
//! function of (input bytes, seed).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::types::{Attribute, Embedding, RegionEmbeddings, StickerAsset};
use super::{AttributeDescriber, TextEncoder, TextEncoding, VisualEncoder};
use crate::error::Result;
use crate::text::tokenize;

pub const STUB_DIM: usize = 64;
pub const STUB_REGIONS: usize = 4;

fn seed_bytes(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Unit vector drawn from an isotropic Gaussian seeded by `seed`.
pub fn unit_vector(seed: [u8; 32], dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Bag-of-tokens hash embedder: each token maps to a seeded random unit
/// vector, the text embedding is the normalized sum over its (at most
/// `max_len`) tokens. Texts without word tokens hash as a whole.
#[derive(Debug, Clone)]
pub struct StubTextEncoder {
    id: String,
    seed: u64,
    dim: usize,
    max_len: usize,
}

impl StubTextEncoder {
    pub fn new(seed: u64, dim: usize, max_len: usize) -> Self {
        Self { id: format!("stub-text/d={dim}/seed={seed}"), seed, dim, max_len }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        unit_vector(seed_bytes(&[b"tok", &self.seed.to_le_bytes(), token.as_bytes()]), self.dim)
    }
}

impl TextEncoder for StubTextEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_len(&self) -> Option<usize> {
        Some(self.max_len)
    }

    fn encode(&self, text: &str) -> Result<TextEncoding> {
        let tokens = tokenize(text);
        let truncated = tokens.len() > self.max_len;
        let mut acc = vec![0.0f64; self.dim];
        if tokens.is_empty() {
            acc = unit_vector(seed_bytes(&[b"raw", &self.seed.to_le_bytes(), text.as_bytes()]), self.dim);
        } else {
            for t in tokens.iter().take(self.max_len) {
                for (a, v) in acc.iter_mut().zip(self.token_vector(t)) {
                    *a += v;
                }
            }
        }
        let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        let values = acc.iter().map(|x| (x / n) as f32).collect();
        Ok(TextEncoding { embedding: Embedding::new(values, &self.id)?, truncated })
    }
}

/// Hashes the decoded pixels into `regions` seeded unit vectors.
#[derive(Debug, Clone)]
pub struct StubVisualEncoder {
    id: String,
    seed: u64,
    dim: usize,
    regions: usize,
}

impl StubVisualEncoder {
    pub fn new(seed: u64, dim: usize, regions: usize) -> Self {
        Self { id: format!("stub-visual/d={dim}/r={regions}/seed={seed}"), seed, dim, regions }
    }
}

impl VisualEncoder for StubVisualEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, asset: &StickerAsset) -> Result<RegionEmbeddings> {
        let img = asset.decode()?.to_rgba8();
        let (w, h) = img.dimensions();
        let pixel_seed = seed_bytes(&[&w.to_le_bytes(), &h.to_le_bytes(), img.as_raw()]);
        let regions = (0..self.regions)
            .map(|r| {
                let s = seed_bytes(&[b"region", &self.seed.to_le_bytes(), &pixel_seed, &(r as u64).to_le_bytes()]);
                unit_vector(s, self.dim).into_iter().map(|x| x as f32).collect()
            })
            .collect();
        RegionEmbeddings::new(regions, &self.id)
    }
}

const GESTURES: &[&str] = &["waving hand", "thumbs up", "covering face", "pointing", "clapping", "hands on hips", "holding chopsticks", "shrugging"];
const POSTURES: &[&str] = &["standing", "sitting", "lying down", "leaning forward", "jumping", "crouching", "bowing"];
const FACES: &[&str] = &["smiling", "crying", "angry", "surprised", "neutral", "embarrassed", "laughing", "sleepy"];

/// Keyword templates picked by hashing the sticker; the verbal axis echoes the
/// sticker's caption.
#[derive(Debug, Clone)]
pub struct StubDescriber {
    id: String,
    seed: u64,
}

impl StubDescriber {
    pub fn new(seed: u64) -> Self {
        Self { id: format!("stub-describer/seed={seed}"), seed }
    }
}

impl AttributeDescriber for StubDescriber {
    fn id(&self) -> &str {
        &self.id
    }

    fn describe(&self, asset: &StickerAsset, attribute: Attribute, _prompt: &str) -> Result<String> {
        let table = match attribute {
            Attribute::Gesture => GESTURES,
            Attribute::Posture => POSTURES,
            Attribute::FacialExpression => FACES,
            Attribute::Verbal => {
                return Ok(match asset.verbal_text.as_deref().map(str::trim) {
                    Some(t) if !t.is_empty() => format!("text: {t}"),
                    _ => crate::context::EMPTY_INFERENCE.to_string(),
                })
            }
        };
        let s = seed_bytes(&[b"describe", &self.seed.to_le_bytes(), &asset.bytes, &[attribute.letter() as u8]]);
        let a = table[s[0] as usize % table.len()];
        let b = table[s[1] as usize % table.len()];
        Ok(if a == b { a.to_string() } else { format!("{a}, {b}") })
    }
}
