//! The visible dialogue context a retrieval query is made from.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Conversation, Scenario, Sticker, Utterance};

/// Placeholder for a prior sticker turn inside the text pipeline.
pub const STICKER_TOKEN: &str = "<sticker>";
/// Joins the serialized context and the assembled commonsense string.
pub const KNOWLEDGE_SEPARATOR: &str = " [SEP] ";
/// Inference used when there is no text to reason about.
pub const EMPTY_INFERENCE: &str = "<none>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryContext {
    pub utterances: Vec<Utterance>,
}

impl QueryContext {
    /// Context of a labelled conversation: the gold sticker is removed from the
    /// reply turn, and a DR reply (sticker only) is dropped entirely.
    pub fn from_conversation(c: &Conversation) -> Self {
        let mut utterances = c.utterances.clone();
        if let Some(last) = utterances.last_mut() {
            if c.scenario == Scenario::DR && !last.has_text() {
                utterances.pop();
            } else if last.sticker_id.as_deref() == Some(c.gold_sticker_id.as_str()) {
                last.sticker_id = None;
            }
        }
        Self { utterances }
    }

    pub fn from_turns(utterances: Vec<Utterance>) -> Self {
        Self { utterances }
    }

    /// Keeps the `n` most recent turns (`n ≥ 1`).
    pub fn window(&self, n: usize) -> Self {
        let start = self.utterances.len().saturating_sub(n.max(1));
        Self { utterances: self.utterances[start..].to_vec() }
    }

    /// `speaker: utterance` lines; sticker turns contribute the sticker token
    /// followed by the sticker's caption when it has one.
    pub fn render(&self, stickers: &BTreeMap<String, Sticker>) -> String {
        let mut lines = Vec::with_capacity(self.utterances.len());
        for u in &self.utterances {
            let mut parts: Vec<&str> = Vec::new();
            if u.has_text() {
                parts.push(u.text.trim());
            }
            if let Some(id) = &u.sticker_id {
                parts.push(STICKER_TOKEN);
                if let Some(caption) = stickers.get(id).and_then(|s| s.verbal_text.as_deref()) {
                    if !caption.trim().is_empty() {
                        parts.push(caption.trim());
                    }
                }
            }
            lines.push(format!("{}: {}", u.speaker_id, parts.join(" ")));
        }
        lines.join("\n")
    }

    /// Text that commonsense inference runs on: the utterance texts only.
    pub fn plain_text(&self) -> String {
        self.utterances
            .iter()
            .filter(|u| u.has_text())
            .map(|u| u.text.trim())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn with_knowledge(rendered_context: &str, knowledge: &str) -> String {
    format!("{rendered_context}{KNOWLEDGE_SEPARATOR}{knowledge}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;

    fn u(index: usize, speaker: &str, text: &str, sticker: Option<&str>) -> Utterance {
        Utterance { index, speaker_id: speaker.into(), text: text.into(), sticker_id: sticker.map(Into::into) }
    }

    fn conv(scenario: Scenario, last_text: &str) -> Conversation {
        Conversation {
            id: "c1".into(),
            utterances: vec![
                u(0, "User_1", "I lost my campus card", None),
                u(1, "User_2", "", Some("s2")),
                u(2, "User_1", last_text, Some("s1")),
            ],
            target_speaker: "User_1".into(),
            gold_sticker_id: "s1".into(),
            intention_label: "sadness".into(),
            scenario,
            split: Split::Train,
        }
    }

    fn stickers() -> BTreeMap<String, Sticker> {
        let s = Sticker { id: "s2".into(), file: "s2.png".into(), verbal_text: Some("哈哈".into()), image_ref: Default::default() };
        [("s2".to_string(), s)].into_iter().collect()
    }

    #[test]
    fn dr_reply_is_dropped_and_sr_reply_is_masked() {
        let dr = QueryContext::from_conversation(&conv(Scenario::DR, ""));
        assert_eq!(dr.utterances.len(), 2);
        let sr = QueryContext::from_conversation(&conv(Scenario::SR, "so sad"));
        assert_eq!(sr.utterances.len(), 3);
        assert_eq!(sr.utterances[2].sticker_id, None);
        assert_eq!(
            sr.render(&stickers()),
            "User_1: I lost my campus card\nUser_2: <sticker> 哈哈\nUser_1: so sad"
        );
    }

    #[test]
    fn window_keeps_most_recent_turns() {
        let c = QueryContext::from_conversation(&conv(Scenario::SR, "so sad"));
        assert_eq!(c.window(2).utterances[0].index, 1);
        assert_eq!(c.window(10), c);
    }
}
