//! Corpus loading and saving.
//!
//! On-disk layout:
//!
//! ```text
//! <root>/manifest.json      name, format, taxonomy, sticker manifest, split files
//! <root>/stickers.jsonl     {"id", "file", "verbal_text"?} per line
//! <root>/stickers/          image assets
//! <root>/<split>.jsonl      one conversation per line
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::types::{is_anonymized_speaker, Conversation, Corpus, Scenario, Split, Sticker, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Stickerint,
    Mod,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stickerint" => Ok(Self::Stickerint),
            "mod" => Ok(Self::Mod),
            other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    #[serde(default)]
    pub format: CorpusFormat,
    pub taxonomy: Vec<String>,
    pub stickers: String,
    #[serde(default = "default_sticker_dir")]
    pub sticker_dir: String,
    pub splits: BTreeMap<Split, String>,
}

fn default_sticker_dir() -> String {
    "stickers".into()
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::load(path, e))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = read_text(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path, line: e.line(), message: e.to_string() })
}

fn jsonl_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::load(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::load(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn load_stickers(root: &Path, manifest: &Manifest) -> Result<(PathBuf, BTreeMap<String, Sticker>)> {
    let sticker_dir = root.join(&manifest.sticker_dir);
    let records: Vec<Sticker> = jsonl_records(&root.join(&manifest.stickers))?;
    let mut stickers = BTreeMap::new();
    for mut s in records {
        s.image_ref = sticker_dir.join(&s.file);
        if !s.image_ref.is_file() {
            return Err(Error::load(
                &s.image_ref,
                std::io::Error::new(std::io::ErrorKind::NotFound, "sticker asset missing"),
            ));
        }
        let id = s.id.clone();
        if stickers.insert(id.clone(), s).is_some() {
            return Err(Error::Schema(format!("duplicate sticker id `{id}`")));
        }
    }
    Ok((sticker_dir, stickers))
}

/// Stored conversation line; `split` may be omitted and is then taken from the file's split key.
#[derive(Deserialize)]
struct ConversationRecord {
    id: String,
    utterances: Vec<Utterance>,
    target_speaker: String,
    gold_sticker_id: String,
    intention_label: String,
    scenario: Scenario,
    #[serde(default)]
    split: Option<Split>,
}

/// Loads and validates a corpus directory. Conversations keep file order,
/// splits are read in train/valid/test order.
pub fn load_corpus(root: &Path, format: CorpusFormat) -> Result<Corpus> {
    let manifest = read_manifest(root)?;
    let (sticker_dir, stickers) = load_stickers(root, &manifest)?;
    let mut conversations = Vec::new();
    for (&split, file) in &manifest.splits {
        let path = root.join(file);
        match format {
            CorpusFormat::Stickerint => {
                for rec in jsonl_records::<ConversationRecord>(&path)? {
                    if rec.split.is_some_and(|s| s != split) {
                        return Err(Error::Schema(format!(
                            "conversation {} is listed in the {split} file but tagged {}",
                            rec.id,
                            rec.split.unwrap()
                        )));
                    }
                    conversations.push(Conversation {
                        id: rec.id,
                        utterances: rec.utterances,
                        target_speaker: rec.target_speaker,
                        gold_sticker_id: rec.gold_sticker_id,
                        intention_label: rec.intention_label,
                        scenario: rec.scenario,
                        split,
                    });
                }
            }
            CorpusFormat::Mod => {
                conversations.extend(mod_adapter::read_split(&path, split, &manifest.taxonomy)?);
            }
        }
    }
    let corpus = Corpus {
        name: manifest.name,
        conversations,
        stickers,
        taxonomy: manifest.taxonomy,
        sticker_dir,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Writes `corpus` as a stickerint directory at `root`. Sticker assets are not
/// copied; the manifest points at the corpus's existing sticker directory.
pub fn save_corpus(corpus: &Corpus, root: &Path) -> Result<()> {
    fs::create_dir_all(root)?;
    let sticker_dir = fs::canonicalize(&corpus.sticker_dir).unwrap_or_else(|_| corpus.sticker_dir.clone());
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let file = format!("{split}.jsonl");
        let mut out = fs::File::create(root.join(&file))?;
        for c in corpus.split(split) {
            serde_json::to_writer(&mut out, c)?;
            out.write_all(b"\n")?;
        }
        splits.insert(split, file);
    }
    let mut out = fs::File::create(root.join("stickers.jsonl"))?;
    for s in corpus.stickers.values() {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    let manifest = Manifest {
        name: corpus.name.clone(),
        format: CorpusFormat::Stickerint,
        taxonomy: corpus.taxonomy.clone(),
        stickers: "stickers.jsonl".into(),
        sticker_dir: sticker_dir.to_string_lossy().into_owned(),
        splits,
    };
    fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Adapter for MOD-style meme dialogue records.
///
/// A split file is either a JSON array or JSON lines of
/// `{"dialog": [{"speaker_id", "txt", "img_id"?, "emotion_id"?}, ...]}`.
/// Every turn carrying a meme becomes one retrieval sample whose context is
/// the dialogue up to and including that turn. The scenario is SR when the
/// meme turn also carries text, DR otherwise; the intention label is
/// `taxonomy[emotion_id]`.
pub mod mod_adapter {
    use super::*;

    #[derive(Debug, Deserialize)]
    pub struct ModRecord {
        pub dialog: Vec<ModTurn>,
    }

    #[derive(Debug, Deserialize)]
    pub struct ModTurn {
        pub speaker_id: String,
        #[serde(default)]
        pub txt: String,
        #[serde(default, deserialize_with = "string_or_number")]
        pub img_id: Option<String>,
        #[serde(default)]
        pub emotion_id: Option<usize>,
    }

    fn string_or_number<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
        let v: Option<serde_json::Value> = Option::deserialize(d)?;
        Ok(match v {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) if s.is_empty() => None,
            Some(serde_json::Value::String(s)) => Some(s),
            Some(other) => Some(other.to_string()),
        })
    }

    /// `[speaker3]`, `speaker3`, `3` → `User_3`; already anonymized ids pass through.
    pub fn normalize_speaker(raw: &str) -> Result<String> {
        if is_anonymized_speaker(raw) {
            return Ok(raw.to_string());
        }
        let digits: String = raw.chars().filter(char::is_ascii_digit).collect();
        if digits.is_empty() {
            return Err(Error::Schema(format!("cannot anonymize MOD speaker `{raw}`")));
        }
        Ok(format!("User_{}", digits.trim_start_matches('0').max("0")))
    }

    pub fn read_split(path: &Path, split: Split, taxonomy: &[String]) -> Result<Vec<Conversation>> {
        let text = read_text(path)?;
        let records: Vec<ModRecord> = if text.trim_start().starts_with('[') {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })?
        } else {
            jsonl_records(path)?
        };
        let mut out = Vec::new();
        for (ri, rec) in records.iter().enumerate() {
            let mut turns = Vec::with_capacity(rec.dialog.len());
            for (ti, t) in rec.dialog.iter().enumerate() {
                turns.push(Utterance {
                    index: ti,
                    speaker_id: normalize_speaker(&t.speaker_id)?,
                    text: t.txt.trim().to_string(),
                    sticker_id: t.img_id.clone(),
                });
            }
            for (ti, t) in rec.dialog.iter().enumerate() {
                let Some(img) = &t.img_id else { continue };
                let id = format!("{split}-{ri}-{ti}");
                let label = t
                    .emotion_id
                    .and_then(|e| taxonomy.get(e))
                    .ok_or_else(|| Error::Taxonomy(format!("{id}: emotion_id {:?}", t.emotion_id)))?;
                let reply = &turns[ti];
                out.push(Conversation {
                    id,
                    utterances: turns[..=ti].to_vec(),
                    target_speaker: reply.speaker_id.clone(),
                    gold_sticker_id: img.clone(),
                    intention_label: label.clone(),
                    scenario: if reply.has_text() { Scenario::SR } else { Scenario::DR },
                    split,
                });
            }
        }
        Ok(out)
    }
}
