//! Retrieval evaluation: P@N and mAP under the intention-label-match rule,
//! Rₙ@k over sampled candidate lists, and the paired t-test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{Conversation, Scenario};
use crate::error::{Error, Result};

/// Stated in every report.
pub const CORRECTNESS_RULE: &str =
    "a retrieved sticker is correct if it is the gold sticker or shares the gold intention label";

/// Ordered `(sticker_id, score)` list for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub ranked: Vec<(String, f64)>,
}

impl RankedResult {
    /// Sorts by descending score, ties by ascending sticker id.
    pub fn from_scores(query_id: impl Into<String>, mut scores: Vec<(String, f64)>) -> Self {
        // Adding 0.0 folds -0.0 into 0.0 so signed zeros tie and fall to the id order.
        scores.sort_by(|a, b| (b.1 + 0.0).total_cmp(&(a.1 + 0.0)).then_with(|| a.0.cmp(&b.0)));
        Self { query_id: query_id.into(), ranked: scores }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|(id, _)| id.as_str())
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    /// 1-based rank of `sticker_id`.
    pub fn rank_of(&self, sticker_id: &str) -> Option<usize> {
        self.ids().position(|id| id == sticker_id).map(|p| p + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub query_id: String,
    pub gold_sticker_id: String,
    pub gold_intention_label: String,
    /// Always contains the gold sticker.
    pub relevant: BTreeSet<String>,
}

impl RelevanceJudgment {
    pub fn new(
        query_id: impl Into<String>,
        gold_sticker_id: impl Into<String>,
        gold_intention_label: impl Into<String>,
        relevant: impl IntoIterator<Item = String>,
    ) -> Self {
        let gold_sticker_id = gold_sticker_id.into();
        let mut relevant: BTreeSet<String> = relevant.into_iter().collect();
        relevant.insert(gold_sticker_id.clone());
        Self { query_id: query_id.into(), gold_sticker_id, gold_intention_label: gold_intention_label.into(), relevant }
    }

    /// Relevant stickers are those gold under the conversation's label anywhere
    /// in `sticker_labels` (see `Corpus::sticker_labels`).
    pub fn for_conversation(conv: &Conversation, sticker_labels: &BTreeMap<String, BTreeSet<String>>) -> Self {
        let relevant = sticker_labels
            .iter()
            .filter(|(_, labels)| labels.contains(&conv.intention_label))
            .map(|(id, _)| id.clone());
        Self::new(&conv.id, &conv.gold_sticker_id, &conv.intention_label, relevant)
    }

    pub fn is_relevant(&self, sticker_id: &str) -> bool {
        self.relevant.contains(sticker_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrecisionOutcome {
    pub hit: bool,
    /// Cutoff actually applied.
    pub evaluated_at: usize,
    /// The requested cutoff exceeded the ranking length.
    pub clamped: bool,
}

/// Top-`n` hit under the intention-match rule.
pub fn precision_at_n(ranking: &RankedResult, judgment: &RelevanceJudgment, n: usize) -> Result<PrecisionOutcome> {
    if n == 0 {
        return Err(Error::Domain("P@N needs N ≥ 1".into()));
    }
    let clamped = n > ranking.len();
    if clamped {
        log::warn!("P@{n} requested on a ranking of {} for {}; evaluating at full length", ranking.len(), ranking.query_id);
    }
    let evaluated_at = n.min(ranking.len());
    let hit = ranking.ids().take(evaluated_at).any(|id| judgment.is_relevant(id));
    Ok(PrecisionOutcome { hit, evaluated_at, clamped })
}

/// Mean of `i / rank(r_i)` over the relevant set; relevant stickers missing
/// from the ranking contribute zero.
pub fn average_precision(ranking: &RankedResult, judgment: &RelevanceJudgment) -> f64 {
    let mut found = 0usize;
    let mut total = 0.0;
    for (pos, id) in ranking.ids().enumerate() {
        if judgment.is_relevant(id) {
            found += 1;
            total += found as f64 / (pos + 1) as f64;
        }
    }
    total / judgment.relevant.len() as f64
}

pub fn mean_average_precision(rankings: &[RankedResult], judgments: &BTreeMap<String, RelevanceJudgment>) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::Evaluation("no queries to evaluate".into()));
    }
    let mut sum = 0.0;
    for r in rankings {
        let j = judgments
            .get(&r.query_id)
            .ok_or_else(|| Error::Evaluation(format!("query `{}` has no relevance judgment", r.query_id)))?;
        sum += average_precision(r, j);
    }
    Ok(sum / rankings.len() as f64)
}

/// 1 iff `positive` ranks within the top `k` of the candidate list.
pub fn recall_k_of_n(candidates: &RankedResult, positive: &str, k: usize) -> Result<bool> {
    let rank = candidates.rank_of(positive).ok_or_else(|| {
        Error::Evaluation(format!("positive `{positive}` absent from the candidates of `{}`", candidates.query_id))
    })?;
    Ok(rank <= k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Two-tailed paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Domain(format!("paired t-test needs two equal lists of ≥ 2 values, got {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = a.len() - 1;
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(TTest { t: 0.0, p: 1.0, df });
    }
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(Error::Degenerate("differences have zero variance; p is undefined".into()));
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Domain(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest { t, p, df })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub query_id: String,
    pub scenario: Option<Scenario>,
    pub gold_sticker_id: String,
    pub gold_intention_label: String,
    pub predicted_intention_label: Option<String>,
    pub gold_rank: Option<usize>,
    pub average_precision: f64,
    pub top: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub queries: usize,
    pub map: f64,
    /// Keyed by N.
    pub precision: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallTable {
    pub candidates: usize,
    /// Keyed by k.
    pub recall: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rule: String,
    pub overall: GroupSummary,
    pub by_scenario: BTreeMap<Scenario, GroupSummary>,
    pub recall: Option<RecallTable>,
    pub per_query: Vec<QueryTrace>,
    pub config: serde_json::Value,
}

/// One evaluated query.
#[derive(Debug, Clone)]
pub struct QueryInput {
    pub ranking: RankedResult,
    pub judgment: RelevanceJudgment,
    pub scenario: Option<Scenario>,
    pub predicted_intention_label: Option<String>,
}

fn summarize(queries: &[&QueryInput], ns: &[usize]) -> Result<GroupSummary> {
    let mut precision = BTreeMap::new();
    for &n in ns {
        let mut hits = 0usize;
        for q in queries {
            hits += precision_at_n(&q.ranking, &q.judgment, n)?.hit as usize;
        }
        precision.insert(n, if queries.is_empty() { 0.0 } else { hits as f64 / queries.len() as f64 });
    }
    let map = if queries.is_empty() {
        0.0
    } else {
        queries.iter().map(|q| average_precision(&q.ranking, &q.judgment)).sum::<f64>() / queries.len() as f64
    };
    Ok(GroupSummary { queries: queries.len(), map, precision })
}

impl MetricsReport {
    pub fn build(
        queries: &[QueryInput],
        ns: &[usize],
        recall: Option<RecallTable>,
        config: serde_json::Value,
    ) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Evaluation("no queries to evaluate".into()));
        }
        let all: Vec<&QueryInput> = queries.iter().collect();
        let overall = summarize(&all, ns)?;
        let mut by_scenario = BTreeMap::new();
        for s in [Scenario::SR, Scenario::DR] {
            let group: Vec<&QueryInput> = queries.iter().filter(|q| q.scenario == Some(s)).collect();
            if !group.is_empty() {
                by_scenario.insert(s, summarize(&group, ns)?);
            }
        }
        let per_query = queries
            .iter()
            .map(|q| QueryTrace {
                query_id: q.ranking.query_id.clone(),
                scenario: q.scenario,
                gold_sticker_id: q.judgment.gold_sticker_id.clone(),
                gold_intention_label: q.judgment.gold_intention_label.clone(),
                predicted_intention_label: q.predicted_intention_label.clone(),
                gold_rank: q.ranking.rank_of(&q.judgment.gold_sticker_id),
                average_precision: average_precision(&q.ranking, &q.judgment),
                top: q.ranking.ids().take(5).map(str::to_string).collect(),
            })
            .collect();
        Ok(Self { rule: CORRECTNESS_RULE.into(), overall, by_scenario, recall, per_query, config })
    }

    /// `group,metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,metric,value\n");
        let mut group = |name: &str, g: &GroupSummary| {
            let _ = writeln!(out, "{name},queries,{}", g.queries);
            let _ = writeln!(out, "{name},mAP,{:.6}", g.map);
            for (n, p) in &g.precision {
                let _ = writeln!(out, "{name},P@{n},{p:.6}");
            }
        };
        group("all", &self.overall);
        for (s, g) in &self.by_scenario {
            group(&format!("{s:?}"), g);
        }
        if let Some(r) = &self.recall {
            for (k, v) in &r.recall {
                let _ = writeln!(out, "all,R{}@{k},{v:.6}", r.candidates);
            }
        }
        out
    }
}
