//! TOML run configuration.
//!
//! ```toml
//! prompt_template = "... describe the {attribute}."
//! cache_dir = "cache"
//!
//! [training]
//! learning_rate = 1e-4
//! batch_size = 4
//!
//! [model]
//! dim = 64
//! heads = 4
//! attributes = ["G", "P", "F", "V"]
//!
//! [backends.text]
//! kind = "stub"
//! seed = 0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::{DEFAULT_PROMPT_TEMPLATE, STUB_DIM, STUB_REGIONS};
use crate::error::{Error, Result};
use crate::matcher::{ModelSettings, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TextBackend {
    Stub {
        #[serde(default)]
        seed: u64,
        #[serde(default = "stub_dim")]
        dim: usize,
        #[serde(default = "max_len")]
        max_len: usize,
    },
    Http {
        id: String,
        url: String,
        dim: usize,
        #[serde(default)]
        max_len: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VisualBackend {
    Stub {
        #[serde(default)]
        seed: u64,
        #[serde(default = "stub_dim")]
        dim: usize,
        #[serde(default = "stub_regions")]
        regions: usize,
    },
    Http { id: String, url: String, dim: usize },
}

/// Backend shape shared by the describer and the commonsense generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GenerativeBackend {
    Stub {
        #[serde(default)]
        seed: u64,
    },
    Http { id: String, url: String },
}

fn stub_dim() -> usize {
    STUB_DIM
}

fn stub_regions() -> usize {
    STUB_REGIONS
}

fn max_len() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub text: TextBackend,
    pub visual: VisualBackend,
    pub describer: GenerativeBackend,
    pub generator: GenerativeBackend,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            text: TextBackend::Stub { seed: 0, dim: STUB_DIM, max_len: max_len() },
            visual: VisualBackend::Stub { seed: 0, dim: STUB_DIM, regions: STUB_REGIONS },
            describer: GenerativeBackend::Stub { seed: 0 },
            generator: GenerativeBackend::Stub { seed: 0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub training: TrainingConfig,
    pub model: ModelSettings,
    pub backends: BackendsConfig,
    /// Must contain `{attribute}`.
    pub prompt_template: String,
    /// Newline-separated label list replacing the corpus taxonomy.
    pub taxonomy_path: Option<PathBuf>,
    /// Directory for the embedding, description and inference caches.
    pub cache_dir: Option<PathBuf>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::default(),
            model: ModelSettings::default(),
            backends: BackendsConfig::default(),
            prompt_template: DEFAULT_PROMPT_TEMPLATE.to_string(),
            taxonomy_path: None,
            cache_dir: None,
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.taxonomy_path, &mut cfg.cache_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        crate::fusion::check_heads(self.model.dim, self.model.heads)?;
        if !self.prompt_template.contains("{attribute}") {
            return Err(Error::Config("prompt_template must contain `{attribute}`".into()));
        }
        let mut attrs = self.model.attributes.clone();
        attrs.sort();
        attrs.dedup();
        if attrs != self.model.attributes {
            return Err(Error::Config("model.attributes must be sorted G, P, F, V without repeats".into()));
        }
        Ok(())
    }

    /// Taxonomy override, if configured.
    pub fn taxonomy(&self) -> Result<Option<Vec<String>>> {
        let Some(path) = &self.taxonomy_path else { return Ok(None) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        let labels: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        if labels.is_empty() {
            return Err(Error::Config(format!("taxonomy file {} is empty", path.display())));
        }
        Ok(Some(labels))
    }
}
