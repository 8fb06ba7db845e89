//! Model-server clients. Each endpoint takes and returns JSON:
//!
//! * text: `{"text"}` → `{"vector", "truncated"?}` (classifier-token pooled)
//! * visual: `{"image": base64}` → `{"regions": [[..], ..]}`
//! * describer: `{"image": base64, "prompt"}` → `{"text"}`

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::types::{Attribute, Embedding, RegionEmbeddings, StickerAsset};
use super::{AttributeDescriber, TextEncoder, TextEncoding, VisualEncoder};
use crate::error::{Error, Result};
use crate::remote::JsonClient;

pub struct HttpTextEncoder {
    id: String,
    dim: usize,
    max_len: Option<usize>,
    client: JsonClient,
}

impl HttpTextEncoder {
    pub fn new(id: impl Into<String>, url: impl Into<String>, dim: usize, max_len: Option<usize>) -> Self {
        Self { id: id.into(), dim, max_len, client: JsonClient::new("text-encoder", url) }
    }
}

#[derive(Serialize)]
struct TextRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct TextResponse {
    vector: Vec<f32>,
    #[serde(default)]
    truncated: bool,
}

impl TextEncoder for HttpTextEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_len(&self) -> Option<usize> {
        self.max_len
    }

    fn encode(&self, text: &str) -> Result<TextEncoding> {
        let resp: TextResponse = self.client.post(&TextRequest { text }, "encode text")?;
        if resp.vector.len() != self.dim {
            return Err(Error::Shape(format!("{} returned dim {}, expected {}", self.id, resp.vector.len(), self.dim)));
        }
        Ok(TextEncoding { embedding: Embedding::new(resp.vector, &self.id)?, truncated: resp.truncated })
    }
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub struct HttpVisualEncoder {
    id: String,
    dim: usize,
    client: JsonClient,
}

impl HttpVisualEncoder {
    pub fn new(id: impl Into<String>, url: impl Into<String>, dim: usize) -> Self {
        Self { id: id.into(), dim, client: JsonClient::new("visual-encoder", url) }
    }
}

#[derive(Serialize)]
struct ImageRequest {
    image: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
}

#[derive(Deserialize)]
struct RegionsResponse {
    regions: Vec<Vec<f32>>,
}

impl VisualEncoder for HttpVisualEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, asset: &StickerAsset) -> Result<RegionEmbeddings> {
        asset.decode()?;
        let resp: RegionsResponse =
            self.client.post(&ImageRequest { image: b64(&asset.bytes), prompt: None }, "encode sticker")?;
        let regions = RegionEmbeddings::new(resp.regions, &self.id)?;
        if regions.dim != self.dim {
            return Err(Error::Shape(format!("{} returned dim {}, expected {}", self.id, regions.dim, self.dim)));
        }
        Ok(regions)
    }
}

pub struct HttpDescriber {
    id: String,
    client: JsonClient,
}

impl HttpDescriber {
    pub fn new(id: impl Into<String>, url: impl Into<String>) -> Self {
        Self { id: id.into(), client: JsonClient::new("describer", url) }
    }
}

#[derive(Deserialize)]
struct DescribeResponse {
    text: String,
}

impl AttributeDescriber for HttpDescriber {
    fn id(&self) -> &str {
        &self.id
    }

    fn describe(&self, asset: &StickerAsset, attribute: Attribute, prompt: &str) -> Result<String> {
        let resp: DescribeResponse = self.client.post(
            &ImageRequest { image: b64(&asset.bytes), prompt: Some(prompt.to_string()) },
            attribute.prompt_word(),
        )?;
        Ok(resp.text)
    }
}
