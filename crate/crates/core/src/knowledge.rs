//! Commonsense inferences over a dialogue context and their assembly into a
//! single knowledge string.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cache::{content_key, StringCache};
use crate::context::{QueryContext, EMPTY_INFERENCE};
use crate::error::{Error, Result};
use crate::remote::JsonClient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "xIntent")]
    XIntent,
    #[serde(rename = "xNeed")]
    XNeed,
    #[serde(rename = "xWant")]
    XWant,
    #[serde(rename = "xEffect")]
    XEffect,
    #[serde(rename = "xReact")]
    XReact,
}

impl Relation {
    /// Canonical order used for assembly.
    pub const ALL: [Relation; 5] =
        [Relation::XIntent, Relation::XNeed, Relation::XWant, Relation::XEffect, Relation::XReact];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::XIntent => "xIntent",
            Relation::XNeed => "xNeed",
            Relation::XWant => "xWant",
            Relation::XEffect => "xEffect",
            Relation::XReact => "xReact",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown relation `{s}`")))
    }
}

pub trait CommonsenseGenerator: Send + Sync {
    /// Identity of the generator, part of every cache key.
    fn id(&self) -> &str;
    fn generate(&self, text: &str, relation: Relation) -> Result<String>;
}

impl<G: CommonsenseGenerator + ?Sized> CommonsenseGenerator for Arc<G> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn generate(&self, text: &str, relation: Relation) -> Result<String> {
        (**self).generate(text, relation)
    }
}

const PHRASES: [&[&str]; 5] = [
    &["to express feelings", "to be friendly", "to get attention", "to share news", "to be polite", "to make a joke", "to comfort someone", "to vent"],
    &["to read the message", "to think of a reply", "to pick up the phone", "to know the situation", "to find the right words", "to have time"],
    &["to get a response", "to keep chatting", "to cheer up", "to change the topic", "to be understood", "to rest"],
    &["gets a reply", "feels closer", "laughs", "gets rejected", "is ignored", "gets comforted"],
    &["happy", "sad", "awkward", "relieved", "excited", "annoyed", "grateful", "surprised"],
];

/// Deterministic hash-seeded template generator for tests and offline runs.
#[derive(Debug, Clone)]
pub struct StubGenerator {
    id: String,
    seed: u64,
}

impl StubGenerator {
    pub fn new(seed: u64) -> Self {
        Self { id: format!("stub-commonsense/seed={seed}"), seed }
    }
}

impl CommonsenseGenerator for StubGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, text: &str, relation: Relation) -> Result<String> {
        let key = content_key(&[&self.seed.to_string(), relation.as_str(), text]);
        let bytes = hex::decode(&key[..8]).expect("hex");
        let table = PHRASES[Relation::ALL.iter().position(|r| *r == relation).unwrap()];
        let a = table[bytes[0] as usize % table.len()];
        let b = table[bytes[1] as usize % table.len()];
        Ok(if a == b { a.to_string() } else { format!("{a}, {b}") })
    }
}

/// Client for a model server answering `POST {"text", "relation"}` with `{"inference"}`.
pub struct HttpGenerator {
    id: String,
    client: JsonClient,
}

impl HttpGenerator {
    pub fn new(id: impl Into<String>, url: impl Into<String>) -> Self {
        Self { id: id.into(), client: JsonClient::new("commonsense", url) }
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    text: &'a str,
    relation: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    inference: String,
}

impl CommonsenseGenerator for HttpGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, text: &str, relation: Relation) -> Result<String> {
        let resp: GenerateResponse =
            self.client.post(&GenerateRequest { text, relation: relation.as_str() }, relation.as_str())?;
        Ok(resp.inference)
    }
}

/// Memoizes a generator behind a content-addressed store keyed on
/// (context text, relation, generator id).
pub struct CachedGenerator<G> {
    inner: G,
    cache: Arc<StringCache>,
}

impl<G: CommonsenseGenerator> CachedGenerator<G> {
    pub fn new(inner: G, cache: Arc<StringCache>) -> Self {
        Self { inner, cache }
    }

    pub fn cache(&self) -> &StringCache {
        &self.cache
    }
}

impl<G: CommonsenseGenerator> CommonsenseGenerator for CachedGenerator<G> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, text: &str, relation: Relation) -> Result<String> {
        let key = content_key(&[self.inner.id(), relation.as_str(), text]);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let value = self.inner.generate(text, relation)?;
        self.cache.insert(&key, &value)?;
        Ok(value)
    }
}

/// One relation's inference for a context. Empty contexts yield `<none>`
/// without touching the backend; an empty backend answer is also mapped to `<none>`.
pub fn infer_relation(context: &QueryContext, relation: Relation, generator: &dyn CommonsenseGenerator) -> Result<String> {
    infer_text(&context.plain_text(), relation, generator)
}

pub fn infer_text(text: &str, relation: Relation, generator: &dyn CommonsenseGenerator) -> Result<String> {
    if text.trim().is_empty() {
        return Ok(EMPTY_INFERENCE.to_string());
    }
    let out = generator.generate(text, relation).map_err(|e| match e {
        Error::Backend { backend, message, .. } => Error::Backend { backend, operation: relation.to_string(), message },
        other => Error::backend(generator.id(), relation.as_str(), other),
    })?;
    let out = out.trim();
    Ok(if out.is_empty() { EMPTY_INFERENCE.to_string() } else { out.to_string() })
}

/// `xIntent: a; xNeed: b; xWant: c; xEffect: d; xReact: e`, always in canonical order.
pub fn assemble_knowledge(per_relation: &BTreeMap<Relation, String>) -> Result<String> {
    if per_relation.len() != Relation::ALL.len() {
        return Err(Error::Arity { expected: Relation::ALL.len(), actual: per_relation.len() });
    }
    Ok(Relation::ALL
        .iter()
        .map(|r| format!("{r}: {}", per_relation[r]))
        .collect::<Vec<_>>()
        .join("; "))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonsenseBundle {
    pub per_relation: BTreeMap<Relation, String>,
    pub assembled: String,
}

pub fn commonsense_bundle(context: &QueryContext, generator: &dyn CommonsenseGenerator) -> Result<CommonsenseBundle> {
    let text = context.plain_text();
    let mut per_relation = BTreeMap::new();
    for r in Relation::ALL {
        per_relation.insert(r, infer_text(&text, r, generator)?);
    }
    let assembled = assemble_knowledge(&per_relation)?;
    Ok(CommonsenseBundle { per_relation, assembled })
}
