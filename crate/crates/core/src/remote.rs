//! Blocking JSON-over-HTTP client shared by the model-backed backends.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub struct JsonClient {
    backend: &'static str,
    url: String,
    agent: ureq::Agent,
}

impl JsonClient {
    pub fn new(backend: &'static str, url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self { backend, url: url.into(), agent }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// POSTs `body` and decodes the JSON answer; any failure becomes a
    /// backend error tagged with `operation`.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req, operation: &str) -> Result<Resp> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| Error::backend(self.backend, operation, e))?;
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| Error::backend(self.backend, operation, e))
    }
}
