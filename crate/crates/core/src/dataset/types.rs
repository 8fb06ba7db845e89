use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// Sticker sent together with the speaker's own text.
    SR,
    /// Sticker sent as a standalone reply.
    DR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Schema(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: usize,
    pub speaker_id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sticker_id: Option<String>,
}

impl Utterance {
    pub fn has_text(&self) -> bool {
        !self.text.trim().is_empty()
    }

    /// Checks the per-turn invariants: text or sticker present, anonymized speaker.
    pub fn validate(&self) -> Result<()> {
        if !self.has_text() && self.sticker_id.is_none() {
            return Err(Error::Schema(format!(
                "utterance {} carries neither text nor a sticker",
                self.index
            )));
        }
        if !is_anonymized_speaker(&self.speaker_id) {
            return Err(Error::Schema(format!(
                "speaker id `{}` is not an anonymized token (User_<k>)",
                self.speaker_id
            )));
        }
        Ok(())
    }
}

/// `User_<k>` with a decimal `k`.
pub fn is_anonymized_speaker(id: &str) -> bool {
    id.strip_prefix("User_")
        .is_some_and(|k| !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub target_speaker: String,
    pub gold_sticker_id: String,
    pub intention_label: String,
    pub scenario: Scenario,
    pub split: Split,
}

impl Conversation {
    /// The target speaker's reply turn, which carries (or is replaced by) the gold sticker.
    pub fn reply_turn(&self) -> Option<&Utterance> {
        self.utterances.last()
    }

    /// Structural invariants that do not need the sticker set or taxonomy.
    pub fn validate_shape(&self) -> Result<()> {
        let ctx = |msg: String| Error::Schema(format!("conversation {}: {msg}", self.id));
        if self.utterances.is_empty() {
            return Err(ctx("no utterances".into()));
        }
        for (pos, u) in self.utterances.iter().enumerate() {
            if u.index != pos {
                return Err(ctx(format!("utterance index {} at position {pos}", u.index)));
            }
            u.validate().map_err(|e| ctx(e.to_string()))?;
        }
        if !is_anonymized_speaker(&self.target_speaker) {
            return Err(ctx(format!("target speaker `{}` is not anonymized", self.target_speaker)));
        }
        let reply = self.reply_turn().expect("non-empty");
        if reply.speaker_id != self.target_speaker {
            return Err(ctx("last turn is not by the target speaker".into()));
        }
        if let Some(s) = &reply.sticker_id {
            if s != &self.gold_sticker_id {
                return Err(ctx("reply turn sticker differs from the gold sticker".into()));
            }
        }
        match (self.scenario, reply.has_text()) {
            (Scenario::DR, true) => Err(ctx("DR reply turn must not carry text".into())),
            (Scenario::SR, false) => Err(ctx("SR reply turn must carry text".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sticker {
    pub id: String,
    /// File name relative to the corpus sticker directory.
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbal_text: Option<String>,
    /// Resolved asset path; filled in at load time.
    #[serde(skip)]
    pub image_ref: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub conversations: Vec<Conversation>,
    pub stickers: BTreeMap<String, Sticker>,
    pub taxonomy: Vec<String>,
    pub sticker_dir: PathBuf,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Conversation> {
        self.conversations.iter().filter(move |c| c.split == split)
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.taxonomy
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Taxonomy(label.to_string()))
    }

    pub fn sticker(&self, id: &str) -> Result<&Sticker> {
        self.stickers.get(id).ok_or_else(|| Error::NotFound(format!("sticker `{id}`")))
    }

    /// Sticker id → intention labels under which it is the gold sticker anywhere in the corpus.
    pub fn sticker_labels(&self) -> BTreeMap<String, std::collections::BTreeSet<String>> {
        let mut out: BTreeMap<_, std::collections::BTreeSet<String>> = BTreeMap::new();
        for c in &self.conversations {
            out.entry(c.gold_sticker_id.clone())
                .or_default()
                .insert(c.intention_label.clone());
        }
        out
    }

    /// Checks every corpus-level invariant.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for c in &self.conversations {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::Schema(format!("duplicate conversation id `{}`", c.id)));
            }
            c.validate_shape()?;
        }
        let dangling: Vec<String> = self
            .conversations
            .iter()
            .filter(|c| {
                !self.stickers.contains_key(&c.gold_sticker_id)
                    || c.utterances.iter().any(|u| {
                        u.sticker_id.as_ref().is_some_and(|s| !self.stickers.contains_key(s))
                    })
            })
            .map(|c| c.id.clone())
            .collect();
        if !dangling.is_empty() {
            return Err(Error::Integrity { conversation_ids: dangling });
        }
        for c in &self.conversations {
            self.label_index(&c.intention_label)?;
        }
        Ok(())
    }
}
