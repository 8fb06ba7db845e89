use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::types::{Conversation, Corpus, Scenario, Split};
use crate::text::count_tokens;

/// Per-split dataset statistics, with the same definitions as the usual
/// corpus summary table: stickers and users are distinct ids within the group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub conversations: usize,
    pub sr: usize,
    pub dr: usize,
    pub utterances: usize,
    pub tokens: usize,
    pub stickers: usize,
    pub users: usize,
    pub avg_utterances_per_conversation: f64,
    pub avg_users_per_conversation: f64,
    pub avg_tokens_per_utterance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub overall: SplitStats,
    pub splits: BTreeMap<Split, SplitStats>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn split_stats<'a>(conversations: impl IntoIterator<Item = &'a Conversation>) -> SplitStats {
    let mut s = SplitStats::default();
    let mut stickers = BTreeSet::new();
    let mut users = BTreeSet::new();
    let mut users_per_conv = 0usize;
    for c in conversations {
        s.conversations += 1;
        match c.scenario {
            Scenario::SR => s.sr += 1,
            Scenario::DR => s.dr += 1,
        }
        s.utterances += c.utterances.len();
        stickers.insert(c.gold_sticker_id.as_str());
        let mut speakers = BTreeSet::new();
        for u in &c.utterances {
            s.tokens += count_tokens(&u.text);
            speakers.insert(u.speaker_id.as_str());
            if let Some(id) = &u.sticker_id {
                stickers.insert(id.as_str());
            }
        }
        users_per_conv += speakers.len();
        users.extend(speakers);
    }
    s.stickers = stickers.len();
    s.users = users.len();
    s.avg_utterances_per_conversation = ratio(s.utterances, s.conversations);
    s.avg_users_per_conversation = ratio(users_per_conv, s.conversations);
    s.avg_tokens_per_utterance = ratio(s.tokens, s.utterances);
    s
}

pub fn corpus_stats(corpus: &Corpus) -> StatsReport {
    StatsReport {
        overall: split_stats(&corpus.conversations),
        splits: Split::ALL.iter().map(|&sp| (sp, split_stats(corpus.split(sp)))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::types::Utterance;

    fn utt(index: usize, speaker: &str, text: &str) -> Utterance {
        Utterance { index, speaker_id: speaker.into(), text: text.into(), sticker_id: None }
    }

    #[test]
    fn four_turns_two_speakers() {
        let mut last = utt(3, "User_1", "");
        last.sticker_id = Some("s1".into());
        let c = Conversation {
            id: "c".into(),
            utterances: vec![utt(0, "User_1", "hi there"), utt(1, "User_2", "你好"), utt(2, "User_2", "ok"), last],
            target_speaker: "User_1".into(),
            gold_sticker_id: "s1".into(),
            intention_label: "joy".into(),
            scenario: Scenario::DR,
            split: Split::Train,
        };
        let s = split_stats([&c]);
        assert_eq!(s.avg_utterances_per_conversation, 4.0);
        assert_eq!(s.avg_users_per_conversation, 2.0);
        assert_eq!(s.tokens, 5);
        assert_eq!((s.sr, s.dr, s.stickers, s.users), (0, 1, 1, 2));
    }

    #[test]
    fn empty_input_yields_zeros() {
        let s = split_stats(std::iter::empty());
        assert_eq!(s, SplitStats::default());
    }
}
