//! Uniform interfaces over the text encoder, the visual region encoder and
//! the attribute describer, with deterministic stubs, HTTP clients, and
//! cache wrappers.

mod http;
mod stub;
mod types;

use std::sync::Arc;

pub use http::{HttpDescriber, HttpTextEncoder, HttpVisualEncoder};
pub use stub::{unit_vector, StubDescriber, StubTextEncoder, StubVisualEncoder, STUB_DIM, STUB_REGIONS};
pub use types::{
    parse_attribute_list, Attribute, AttributeDescriptions, Embedding, RegionEmbeddings, StickerAsset,
};

use crate::cache::{bytes_key, content_key, EmbeddingCache, StringCache};
use crate::dataset::Sticker;
use crate::error::{Error, Result};
use crate::text::count_tokens;

pub const DEFAULT_PROMPT_TEMPLATE: &str =
    "This is a sticker used in conversation, please provide several keywords to describe the {attribute}.";

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoding {
    pub embedding: Embedding,
    /// Input exceeded the encoder's maximum length and was cut.
    pub truncated: bool,
}

pub trait TextEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn max_len(&self) -> Option<usize> {
        None
    }
    fn encode(&self, text: &str) -> Result<TextEncoding>;
}

pub trait VisualEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, asset: &StickerAsset) -> Result<RegionEmbeddings>;
}

pub trait AttributeDescriber: Send + Sync {
    fn id(&self) -> &str;
    fn describe(&self, asset: &StickerAsset, attribute: Attribute, prompt: &str) -> Result<String>;
}

/// Encodes `text`, reporting truncation through the log.
pub fn encode_text(text: &str, encoder: &dyn TextEncoder) -> Result<TextEncoding> {
    let out = encoder.encode(text)?;
    if out.truncated {
        log::warn!("{}: input of {} tokens truncated to the encoder maximum", encoder.id(), count_tokens(text));
    }
    if out.embedding.dim != encoder.dim() {
        return Err(Error::Shape(format!("{} produced dim {}, declared {}", encoder.id(), out.embedding.dim, encoder.dim())));
    }
    Ok(out)
}

pub fn encode_sticker(sticker: &Sticker, encoder: &dyn VisualEncoder) -> Result<RegionEmbeddings> {
    encoder.encode(&StickerAsset::load(sticker)?)
}

pub fn render_prompt(template: &str, attribute: Attribute) -> String {
    template.replace("{attribute}", attribute.prompt_word())
}

/// Asks the describer once per attribute. Failures name the attribute prompt.
pub fn describe_attributes(
    asset: &StickerAsset,
    describer: &dyn AttributeDescriber,
    template: &str,
) -> Result<AttributeDescriptions> {
    let mut out = Vec::with_capacity(4);
    for a in Attribute::ALL {
        let prompt = render_prompt(template, a);
        let text = describer.describe(asset, a, &prompt).map_err(|e| match e {
            Error::Backend { backend, message, .. } => Error::Backend { backend, operation: a.prompt_word().into(), message },
            other => Error::backend(describer.id(), a.prompt_word(), other),
        })?;
        let text = text.trim();
        out.push(if text.is_empty() { crate::context::EMPTY_INFERENCE.to_string() } else { text.to_string() });
    }
    let mut it = out.into_iter();
    Ok(AttributeDescriptions {
        gesture: it.next().unwrap(),
        posture: it.next().unwrap(),
        facial_expression: it.next().unwrap(),
        verbal: it.next().unwrap(),
    })
}

/// Text encoder memoized in a versioned embedding store.
pub struct CachedTextEncoder {
    inner: Arc<dyn TextEncoder>,
    cache: Arc<EmbeddingCache>,
}

impl CachedTextEncoder {
    pub fn new(inner: Arc<dyn TextEncoder>, cache: Arc<EmbeddingCache>) -> Result<Self> {
        if cache.encoder_id() != inner.id() {
            return Err(Error::Version { expected: inner.id().into(), found: cache.encoder_id().into() });
        }
        Ok(Self { inner, cache })
    }
}

impl TextEncoder for CachedTextEncoder {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn max_len(&self) -> Option<usize> {
        self.inner.max_len()
    }

    fn encode(&self, text: &str) -> Result<TextEncoding> {
        let key = content_key(&[text]);
        if let Some(values) = self.cache.get(&key) {
            let truncated = self.max_len().is_some_and(|m| count_tokens(text) > m);
            return Ok(TextEncoding { embedding: Embedding::new(values, self.id())?, truncated });
        }
        let out = self.inner.encode(text)?;
        self.cache.insert(&key, &out.embedding.values)?;
        Ok(out)
    }
}

/// Visual encoder memoized per image content; each region is one record
/// (`<hash>#<i>`) plus a count record (`<hash>#n`).
pub struct CachedVisualEncoder {
    inner: Arc<dyn VisualEncoder>,
    cache: Arc<EmbeddingCache>,
}

impl CachedVisualEncoder {
    pub fn new(inner: Arc<dyn VisualEncoder>, cache: Arc<EmbeddingCache>) -> Result<Self> {
        if cache.encoder_id() != inner.id() {
            return Err(Error::Version { expected: inner.id().into(), found: cache.encoder_id().into() });
        }
        Ok(Self { inner, cache })
    }

    fn lookup(&self, key: &str) -> Option<Vec<Vec<f32>>> {
        let n = *self.cache.get(&format!("{key}#n"))?.first()? as usize;
        (0..n).map(|i| self.cache.get(&format!("{key}#{i}"))).collect()
    }
}

impl VisualEncoder for CachedVisualEncoder {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn encode(&self, asset: &StickerAsset) -> Result<RegionEmbeddings> {
        let key = bytes_key(&asset.bytes);
        if let Some(regions) = self.lookup(&key) {
            return RegionEmbeddings::new(regions, self.id());
        }
        let out = self.inner.encode(asset)?;
        for (i, r) in out.regions.iter().enumerate() {
            self.cache.insert(&format!("{key}#{i}"), r)?;
        }
        self.cache.insert(&format!("{key}#n"), &[out.regions.len() as f32])?;
        Ok(out)
    }
}

/// Describer memoized on (describer id, sticker id, image hash, prompt).
pub struct CachedDescriber {
    inner: Arc<dyn AttributeDescriber>,
    cache: Arc<StringCache>,
}

impl CachedDescriber {
    pub fn new(inner: Arc<dyn AttributeDescriber>, cache: Arc<StringCache>) -> Self {
        Self { inner, cache }
    }
}

impl AttributeDescriber for CachedDescriber {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn describe(&self, asset: &StickerAsset, attribute: Attribute, prompt: &str) -> Result<String> {
        let key = content_key(&[self.inner.id(), &asset.id, &bytes_key(&asset.bytes), prompt]);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let out = self.inner.describe(asset, attribute, prompt)?;
        self.cache.insert(&key, &out)?;
        Ok(out)
    }
}
