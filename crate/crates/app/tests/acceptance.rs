//! Acceptance criteria of the retrieval pipeline. Each criterion prints one
//! `PASS`, `FAIL` or `SKIPPED` line; any `FAIL` makes the target fail.

#[path = "../../core/tests/support/mod.rs"]
mod support;

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sticker_app::commands::{evaluate_run, load_dataset, EvalRequest};
use sticker_app::service::router;
use sticker_core::dataset::{corpus_stats, similarity_report, CorpusFormat, Scenario, Split};
use sticker_core::encoders::Attribute;
use sticker_core::fusion::FuseMode;
use sticker_core::linalg::mean_rows;
use sticker_core::matcher::{build_index, retrieval_loss, retrieve, train, LossForm, MatchMode, Model, StickerIndex, TrainingData};
use sticker_core::metrics::{
    average_precision, mean_average_precision, precision_at_n, recall_k_of_n, MetricsReport, QueryInput, RankedResult,
    RelevanceJudgment,
};
use sticker_core::pipeline::{
    evaluate, feature_space, featurize_conversation, featurize_split, select_attributes, Ablation, Backends, EvalOptions,
};
use sticker_core::synthetic::{planted_config, write_planted_corpus, PlantedSpec, PLANTED_LABELS};
use sticker_core::QueryFeatures;

const METRIC_CASES: usize = 200;
const METRIC_TOLERANCE: f64 = 1e-9;
const METRIC_BUDGET: Duration = Duration::from_secs(10);

const GRADIENT_INSTANCES: usize = 20;
const GRADIENT_TOLERANCE: f64 = 1e-4;
const GRADIENT_BUDGET: Duration = Duration::from_secs(30);

const LEARN_TRAIN_P1: f64 = 0.9;
const LEARN_TEST_P1: f64 = 0.8;
const LEARN_MAX_EPOCHS: usize = 50;
const LEARN_BUDGET: Duration = Duration::from_secs(120);

const INVARIANCE_QUERIES: usize = 100;

const LOSS_TOLERANCE: f64 = 1e-12;
const LOSS_PAIRS: usize = 1000;

const TABLE_CONVERSATIONS: [(Split, usize, usize, usize); 3] =
    [(Split::Train, 1269, 816, 453), (Split::Valid, 155, 102, 53), (Split::Test, 154, 99, 55)];
/// Average utterances, users and tokens per utterance for train, valid, test.
const TABLE_AVERAGES: [(Split, f64, f64, f64); 3] =
    [(Split::Train, 6.89, 2.91, 5.48), (Split::Valid, 7.13, 2.71, 5.39), (Split::Test, 7.90, 2.78, 4.75)];
const TABLE_AVERAGE_TOLERANCE: f64 = 0.10;
const SSIM_MEAN: f64 = 0.4016;
const SSIM_TOLERANCE: f64 = 0.01;

const SWEEP: std::ops::RangeInclusive<usize> = 2..=10;
const EQUIVALENCE_SESSIONS: usize = 50;

enum Verdict {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- metrics

/// Reference ranking: selection by (score desc, id asc), written without
/// the library's sort.
fn reference_order(scores: &[(String, f64)]) -> Vec<String> {
    let mut left: Vec<&(String, f64)> = scores.iter().collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (a, b) = (left[i], left[best]);
            if a.1 > b.1 || (a.1 == b.1 && a.0 < b.0) {
                best = i;
            }
        }
        out.push(left.remove(best).0.clone());
    }
    out
}

fn reference_ap(order: &[String], relevant: &BTreeSet<String>) -> f64 {
    let mut ranks: Vec<usize> = relevant.iter().filter_map(|r| order.iter().position(|o| o == r).map(|p| p + 1)).collect();
    ranks.sort();
    ranks.iter().enumerate().map(|(i, &rank)| (i + 1) as f64 / rank as f64).sum::<f64>() / relevant.len() as f64
}

fn reference_hit(order: &[String], relevant: &BTreeSet<String>, n: usize) -> bool {
    order.iter().take(n.min(order.len())).any(|id| relevant.contains(id))
}

fn metric_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    let mut mismatches = Vec::new();
    for case in 0..METRIC_CASES {
        let stickers = rng.random_range(2..=20usize);
        let queries = rng.random_range(1..=10usize);
        let labels: Vec<String> = (0..rng.random_range(1..=4usize)).map(|l| format!("l{l}")).collect();
        let ids: Vec<String> = (0..stickers).map(|i| format!("s{i:02}")).collect();
        let sticker_labels: Vec<BTreeSet<String>> = ids
            .iter()
            .map(|_| (0..rng.random_range(1..=2usize)).map(|_| labels[rng.random_range(0..labels.len())].clone()).collect())
            .collect();
        let mut inputs = Vec::new();
        let mut judgments = BTreeMap::new();
        let mut rankings = Vec::new();
        let mut ref_aps = Vec::new();
        let mut ref_hits: BTreeMap<usize, usize> = BTreeMap::new();
        for q in 0..queries {
            let qid = format!("q{q}");
            // Coarse scores produce ties that exercise the id tie-break.
            let coarse = rng.random_bool(0.3);
            let scores: Vec<(String, f64)> = ids
                .iter()
                .map(|id| {
                    let s: f64 = rng.random_range(-1.0..1.0);
                    (id.clone(), if coarse { (s * 4.0).round() / 4.0 } else { s })
                })
                .collect();
            let gold = rng.random_range(0..stickers);
            let gold_labels: Vec<&String> = sticker_labels[gold].iter().collect();
            let label = gold_labels[rng.random_range(0..gold_labels.len())].clone();
            let mut relevant: BTreeSet<String> =
                ids.iter().zip(&sticker_labels).filter(|(_, ls)| ls.contains(&label)).map(|(id, _)| id.clone()).collect();
            relevant.insert(ids[gold].clone());
            let ranking = RankedResult::from_scores(&qid, scores.clone());
            let judgment = RelevanceJudgment::new(&qid, ids[gold].clone(), label.clone(), relevant.clone());
            let order = reference_order(&scores);
            if ranking.ids().collect::<Vec<_>>() != order.iter().map(String::as_str).collect::<Vec<_>>() {
                mismatches.push(format!("case {case} {qid}: ranking order"));
            }
            let ap = average_precision(&ranking, &judgment);
            let ref_ap = reference_ap(&order, &relevant);
            worst = worst.max((ap - ref_ap).abs());
            ref_aps.push(ref_ap);
            for n in [1, 3, 5] {
                let lib = precision_at_n(&ranking, &judgment, n).unwrap().hit;
                let reference = reference_hit(&order, &relevant, n);
                if lib != reference {
                    mismatches.push(format!("case {case} {qid}: P@{n}"));
                }
                *ref_hits.entry(n).or_default() += reference as usize;
            }
            // R_n@k over a candidate list containing the positive.
            let n = rng.random_range(1..=stickers);
            let mut candidates: Vec<usize> = sample(&mut rng, stickers, n).into_iter().collect();
            if !candidates.contains(&gold) {
                candidates[0] = gold;
            }
            let cand_scores: Vec<(String, f64)> = candidates.iter().map(|&i| scores[i].clone()).collect();
            let cand = RankedResult::from_scores(&qid, cand_scores.clone());
            let better = cand_scores
                .iter()
                .filter(|(id, s)| *s > scores[gold].1 || (*s == scores[gold].1 && id < &ids[gold]))
                .count();
            for k in 1..=n {
                if recall_k_of_n(&cand, &ids[gold], k).unwrap() != (better < k) {
                    mismatches.push(format!("case {case} {qid}: R{n}@{k}"));
                }
            }
            judgments.insert(qid.clone(), judgment.clone());
            rankings.push(ranking.clone());
            inputs.push(QueryInput {
                ranking,
                judgment,
                scenario: Some(if q % 2 == 0 { Scenario::SR } else { Scenario::DR }),
                predicted_intention_label: None,
            });
        }
        let ref_map = ref_aps.iter().sum::<f64>() / queries as f64;
        let map = mean_average_precision(&rankings, &judgments).unwrap();
        worst = worst.max((map - ref_map).abs());
        let report = MetricsReport::build(&inputs, &[1, 3, 5], None, serde_json::Value::Null).unwrap();
        worst = worst.max((report.overall.map - ref_map).abs());
        for (n, hits) in &ref_hits {
            worst = worst.max((report.overall.precision[n] - *hits as f64 / queries as f64).abs());
        }
    }
    let elapsed = start.elapsed();
    let ok = mismatches.is_empty() && worst <= METRIC_TOLERANCE && elapsed < METRIC_BUDGET;
    let mut detail = format!("{METRIC_CASES} cases, max |Δ| {worst:.1e} (tol {METRIC_TOLERANCE:e}), {elapsed:.2?}");
    if !mismatches.is_empty() {
        detail += &format!(", {} mismatches, first: {}", mismatches.len(), mismatches[0]);
    }
    verdict(ok, detail)
}

// -------------------------------------------------------------- gradients

fn gradient_fidelity() -> Verdict {
    use support::gradient::check;
    let start = Instant::now();
    let configs = [
        ("weighted", FuseMode::PerRegionWeighted, MatchMode::Intention, LossForm::ClampedStandard),
        ("literal", FuseMode::LiteralScalar, MatchMode::Intention, LossForm::ClampedStandard),
        ("context+intention/paper_literal", FuseMode::PerRegionWeighted, MatchMode::ContextAndIntention, LossForm::PaperLiteral),
    ];
    let mut parts = Vec::new();
    for (name, fuse, mode, form) in configs {
        match check(fuse, mode, form, GRADIENT_INSTANCES, GRADIENT_TOLERANCE) {
            Ok(worst) => parts.push(format!("{name} {worst:.1e}")),
            Err(e) => return Verdict::Fail(format!("{name}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    verdict(
        elapsed < GRADIENT_BUDGET,
        format!("{GRADIENT_INSTANCES} instances each, worst relative error {} (tol {GRADIENT_TOLERANCE:e}), {elapsed:.2?}", parts.join(", ")),
    )
}

// ----------------------------------------------------------- learnability

fn learnability() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_planted_corpus(dir.path(), &PlantedSpec::default()).unwrap();
    let cfg = planted_config();
    let backends = Backends::from_config(&cfg).unwrap();
    let space = select_attributes(&feature_space::<f64>(&corpus, &backends).unwrap(), &cfg.model.attributes);
    let window = cfg.training.context_window;
    let p1 = |model: &sticker_core::Model, split| {
        let opts = EvalOptions { split, context_window: window, ..Default::default() };
        evaluate(&corpus, &space, &backends, model, &opts, serde_json::Value::Null).unwrap().report.overall.precision[&1]
    };
    let hand = support::planted::hand_built(&corpus, &cfg, &space);
    let (hand_train, hand_test) = (p1(&hand, Split::Train), p1(&hand, Split::Test));
    if hand_train != 1.0 || hand_test != 1.0 {
        return Verdict::Fail(format!("hand-built P@1 train {hand_train} test {hand_test}; the planted corpus is not solvable"));
    }
    let train_q = featurize_split::<f64>(&corpus, Split::Train, &backends, true, window).unwrap();
    let valid_q = featurize_split::<f64>(&corpus, Split::Valid, &backends, true, window).unwrap();
    let init = Model::random(cfg.model.clone(), space.text_dim(), space.visual_dim(), PLANTED_LABELS.len(), cfg.training.seed).unwrap();
    assert!(cfg.training.epochs <= LEARN_MAX_EPOCHS);
    let outcome = train(init, &TrainingData { space: &space, train: &train_q, valid: &valid_q }, &cfg.training).unwrap();
    let (train_p1, test_p1) = (p1(&outcome.last, Split::Train), p1(&outcome.last, Split::Test));
    let elapsed = start.elapsed();
    verdict(
        train_p1 >= LEARN_TRAIN_P1 && test_p1 >= LEARN_TEST_P1 && elapsed < LEARN_BUDGET,
        format!(
            "hand-built P@1 1.0/1.0; trained {} epochs: train P@1 {train_p1:.2} (≥ {LEARN_TRAIN_P1}), test P@1 {test_p1:.2} (≥ {LEARN_TEST_P1}), {elapsed:.2?}",
            cfg.training.epochs
        ),
    )
}

// ------------------------------------------------------ cosine invariance

fn random_queries(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<QueryFeatures> {
    (0..n)
        .map(|i| QueryFeatures {
            id: format!("q{i}"),
            context: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            gold_label: None,
            gold_sticker: None,
            scenario: None,
        })
        .collect()
}

fn ranked_ids(model: &sticker_core::Model, index: &StickerIndex, labels: &[Vec<f64>], q: &QueryFeatures) -> Vec<String> {
    retrieve(model, index, labels, q, index.len()).unwrap().ranking.ids().map(String::from).collect()
}

fn cosine_invariance(f: &common::Fixture) -> Verdict {
    let backends = Backends::from_config(&f.cfg).unwrap();
    let space = feature_space::<f64>(&f.corpus, &backends).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let model = &f.checkpoint.model;
    // Context matching makes every query vector distinct.
    let mut ctx_model = model.clone();
    ctx_model.settings.match_mode = MatchMode::Context;
    let queries = random_queries(&mut rng, INVARIANCE_QUERIES, space.text_dim());
    let index = build_index(model, &space).unwrap();
    let mut scaled_failures = 0;
    let mut constants = Vec::new();
    for q in &queries {
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        constants.push(c);
        let mut scaled = index.clone();
        scaled.entries.iter_mut().for_each(|e| e.vector.iter_mut().for_each(|v| *v *= c));
        for m in [model, &ctx_model] {
            let mut idx = index.clone();
            let mut sc = scaled.clone();
            idx.model_version = m.version();
            sc.model_version = m.version();
            if ranked_ids(m, &idx, &space.label_vectors, q) != ranked_ids(m, &sc, &space.label_vectors, q) {
                scaled_failures += 1;
            }
        }
    }
    // Literal fusion: M·mean(regions) against mean(regions).
    let mut literal = model.clone();
    literal.settings.fuse_mode = FuseMode::LiteralScalar;
    let lit_space = select_attributes(&space, &literal.settings.attributes);
    let lit_index = build_index(&literal, &lit_space).unwrap();
    let mut unit = lit_index.clone();
    let mut min_m = f64::INFINITY;
    for (e, s) in unit.entries.iter_mut().zip(&lit_space.stickers) {
        let fwd = literal.sticker(s).unwrap();
        min_m = min_m.min(fwd.score.as_ref().map_or(1.0, |r| r.pooled));
        e.vector = mean_rows(&fwd.projected_regions);
    }
    let mut literal_ctx = literal.clone();
    literal_ctx.settings.match_mode = MatchMode::Context;
    let mut literal_failures = 0;
    for q in &queries {
        for m in [&literal, &literal_ctx] {
            let (mut a, mut b) = (lit_index.clone(), unit.clone());
            a.model_version = m.version();
            b.model_version = m.version();
            if ranked_ids(m, &a, &lit_space.label_vectors, q) != ranked_ids(m, &b, &lit_space.label_vectors, q) {
                literal_failures += 1;
            }
        }
    }
    let (lo, hi) = constants.iter().fold((f64::INFINITY, 0f64), |(lo, hi), c| (lo.min(*c), hi.max(*c)));
    verdict(
        scaled_failures == 0 && literal_failures == 0 && min_m > 0.0,
        format!(
            "{INVARIANCE_QUERIES} queries × 2 match modes: scaling by c ∈ [{lo:.1e}, {hi:.1e}] changed {scaled_failures} rankings; \
             literal M (min {min_m:.3}) vs M = 1 changed {literal_failures}"
        ),
    )
}

// ------------------------------------------------------------------ loss

fn loss_fidelity() -> Verdict {
    let examples: [(f64, f64, f64, LossForm, f64); 3] = [
        (0.9, 0.1, 0.2, LossForm::ClampedStandard, 0.0),
        (0.3, 0.6, 0.2, LossForm::ClampedStandard, 0.5),
        (0.9, 0.1, 0.2, LossForm::PaperLiteral, 0.2),
    ];
    let mut worst: f64 = 0.0;
    for (sp, sn, m, form, expected) in examples {
        let l = retrieval_loss(&[sp], &[sn], m, form).unwrap();
        worst = worst.max((l - expected).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut disagreements = 0;
    let mut separated = 0;
    for i in 0..LOSS_PAIRS {
        // Every tenth pair sits exactly on the margin (dyadic values).
        let (sp, sn, m): (f64, f64, f64) = if i % 10 == 0 {
            let m = rng.random_range(1..8) as f64 / 8.0;
            let sn = rng.random_range(-8..0) as f64 / 8.0;
            (sn + m, sn, m)
        } else {
            (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.01..1.0))
        };
        let l = retrieval_loss(&[sp], &[sn], m, LossForm::ClampedStandard).unwrap();
        let holds = sp - sn >= m;
        separated += holds as usize;
        if (l == 0.0) != holds {
            disagreements += 1;
        }
    }
    verdict(
        worst <= LOSS_TOLERANCE && disagreements == 0,
        format!(
            "worked examples max |Δ| {worst:.1e} (tol {LOSS_TOLERANCE:e}); zero-iff-separated on {LOSS_PAIRS} pairs ({separated} separated): {disagreements} disagreements"
        ),
    )
}

// --------------------------------------------------------------- dataset

fn dataset_fidelity() -> Verdict {
    let Some(root) = std::env::var_os("STICKERINT_DIR") else {
        return Verdict::Skipped("STICKERINT_DIR is not set; the released corpus is required".into());
    };
    let corpus = match load_dataset(std::path::Path::new(&root), CorpusFormat::Stickerint, &Default::default()) {
        Ok(c) => c,
        Err(e) => return Verdict::Fail(format!("cannot load {}: {e}", root.to_string_lossy())),
    };
    let stats = corpus_stats(&corpus);
    let mut problems = Vec::new();
    for (split, conv, sr, dr) in TABLE_CONVERSATIONS {
        let s = &stats.splits[&split];
        if (s.conversations, s.sr, s.dr) != (conv, sr, dr) {
            problems.push(format!("{split}: {}/{}/{} vs {conv}/{sr}/{dr}", s.conversations, s.sr, s.dr));
        }
    }
    for (split, utt, users, tokens) in TABLE_AVERAGES {
        let s = &stats.splits[&split];
        for (name, got, want) in [
            ("utterances/conversation", s.avg_utterances_per_conversation, utt),
            ("users/conversation", s.avg_users_per_conversation, users),
            ("tokens/utterance", s.avg_tokens_per_utterance, tokens),
        ] {
            if (got - want).abs() > TABLE_AVERAGE_TOLERANCE * want {
                problems.push(format!("{split} {name}: {got:.2} vs {want}"));
            }
        }
    }
    let ssim = similarity_report(corpus.stickers.values(), 20).map(|r| r.mean);
    match ssim {
        Ok(mean) if (mean - SSIM_MEAN).abs() <= SSIM_TOLERANCE => {}
        Ok(mean) => problems.push(format!("mean SSIM {mean:.4} vs {SSIM_MEAN} ± {SSIM_TOLERANCE}")),
        Err(e) => problems.push(format!("SSIM: {e}")),
    }
    let ok = problems.is_empty();
    verdict(ok, if ok { "split counts exact, averages within 10%, SSIM within 0.01".into() } else { problems.join("; ") })
}

// ------------------------------------------------------------- ablations

fn ablation_plumbing(f: &common::Fixture) -> Verdict {
    let all = Attribute::ALL;
    let mut runs: Vec<(String, Vec<Ablation>)> = vec![
        ("w/o attribute".into(), vec!["attribute".parse().unwrap()]),
        ("w/o intention".into(), vec!["intention".parse().unwrap()]),
        ("w/o knowledge".into(), vec!["knowledge".parse().unwrap()]),
    ];
    for mask in 0..16u32 {
        let subset: Vec<Attribute> = all.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, a)| *a).collect();
        let name = format!("attributes={}", subset.iter().map(|a| a.letter().to_string()).collect::<Vec<_>>().join(","));
        runs.push((name, vec![Ablation::Attributes(subset)]));
    }
    let mut echoes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut configurations = BTreeSet::new();
    for (name, ablations) in &runs {
        let req = EvalRequest { ablations: ablations.clone(), ..Default::default() };
        match evaluate_run(&f.corpus, &f.cfg, &f.checkpoint, &req) {
            Ok(out) => {
                let mut m = f.checkpoint.model.clone();
                ablations.iter().for_each(|a| a.apply(&mut m));
                configurations.insert(serde_json::to_string(&m.settings).unwrap());
                echoes.entry(out.report.config.to_string()).or_default().push(name.clone());
            }
            Err(e) => return Verdict::Fail(format!("{name}: {e}")),
        }
    }
    let shared: Vec<String> = echoes.values().filter(|v| v.len() > 1).map(|v| v.join(" = ")).collect();
    verdict(
        echoes.len() == configurations.len(),
        format!(
            "{} runs completed, {} distinct configurations, {} distinct echoes{}",
            runs.len(),
            configurations.len(),
            echoes.len(),
            if shared.is_empty() { String::new() } else { format!(" (same configuration: {})", shared.join("; ")) }
        ),
    )
}

// ---------------------------------------------------------------- sweep

fn context_window_sweep(f: &common::Fixture) -> Verdict {
    let mut lines = Vec::new();
    let mut reports = BTreeMap::new();
    for n in SWEEP {
        let req = EvalRequest { context_window: Some(n), ..Default::default() };
        match evaluate_run(&f.corpus, &f.cfg, &f.checkpoint, &req) {
            Ok(out) => {
                lines.push(format!("N={n} mAP {:.3}", out.report.overall.map));
                reports.insert(n, out);
            }
            Err(e) => return Verdict::Fail(format!("N={n}: {e}")),
        }
    }
    let full = evaluate_run(&f.corpus, &f.cfg, &f.checkpoint, &EvalRequest { context_window: Some(usize::MAX), ..Default::default() })
        .unwrap();
    let test: Vec<_> = f.corpus.split(Split::Test).collect();
    let longest = test.iter().map(|c| sticker_core::context::QueryContext::from_conversation(c).utterances.len()).max().unwrap();
    let at_length = &reports[&longest.max(*SWEEP.start())];
    let same_report = at_length.rankings == full.rankings
        && at_length.report.overall == full.report.overall
        && at_length.report.per_query == full.report.per_query;
    // Per conversation: a window equal to its own length is a no-op.
    let backends = Backends::from_config(&f.cfg).unwrap();
    let mut per_conversation = 0;
    for c in &test {
        let len = sticker_core::context::QueryContext::from_conversation(c).utterances.len();
        let a = featurize_conversation::<f64>(c, &f.corpus, &backends, true, len).unwrap();
        let b = featurize_conversation::<f64>(c, &f.corpus, &backends, true, usize::MAX).unwrap();
        per_conversation += (a == b) as usize;
    }
    verdict(
        same_report && per_conversation == test.len(),
        format!(
            "{}; N={longest} (longest context) reproduces untruncated: {same_report}; per-conversation N = length identical {per_conversation}/{}",
            lines.join(", "),
            test.len()
        ),
    )
}

// ----------------------------------------------------------- equivalence

fn cli_service_equivalence(f: &common::Fixture) -> Verdict {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let app = router(f.manager());
    let words: Vec<&str> = ["haha", "sigh", "ugh", "thanks", "wow", "today", "we", "dinner", "my", "friend", "tomorrow", "omg", "lonely"]
        .to_vec();
    let sticker_ids: Vec<String> = f.corpus.stickers.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let mut mismatches = Vec::new();
    for i in 0..EQUIVALENCE_SESSIONS {
        let (_, session) = rt.block_on(common::call(&app, "POST", "/sessions", None));
        let id = session["id"].as_str().unwrap().to_string();
        let turns = rng.random_range(1..=9);
        for t in 0..turns {
            if t > 0 && rng.random_bool(0.25) {
                let sticker = &sticker_ids[rng.random_range(0..sticker_ids.len())];
                rt.block_on(common::call(&app, "POST", &format!("/sessions/{id}/sticker"), Some(json!({ "sticker_id": sticker }))));
            } else {
                let n = rng.random_range(1..=6);
                let text: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
                let speaker = format!("User_{}", rng.random_range(1..=3));
                rt.block_on(common::call(
                    &app,
                    "POST",
                    &format!("/sessions/{id}/messages"),
                    Some(json!({ "speaker_id": speaker, "text": text.join(" ") })),
                ));
            }
        }
        let k = rng.random_range(1..=12);
        let (status, served) = rt.block_on(common::call(&app, "GET", &format!("/sessions/{id}/suggestions?k={k}"), None));
        assert!(status.is_success(), "session {i}: {served}");
        let (_, dump) = rt.block_on(common::call(&app, "GET", &format!("/sessions/{id}"), None));
        let conv = f.path().join(format!("equivalence-{i}.json"));
        std::fs::write(&conv, serde_json::to_vec(&dump["conversation"]).unwrap()).unwrap();
        let out = Command::new(env!("CARGO_BIN_EXE_stickerctl"))
            .args(["retrieve", f.dataset.to_str().unwrap(), "--checkpoint", f.checkpoint_path.to_str().unwrap()])
            .args(["--index", f.index_path.to_str().unwrap(), "--conversation", conv.to_str().unwrap(), "-k", &k.to_string()])
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        if !out.status.success() {
            return Verdict::Fail(format!("session {i}: retrieve failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
        let cli: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        // Bit-level score comparison on top of whole-document equality.
        let bits = |v: &serde_json::Value| -> Vec<u64> {
            v["suggestions"].as_array().unwrap().iter().map(|s| s["score"].as_f64().unwrap().to_bits()).collect()
        };
        if cli != served || bits(&cli) != bits(&served) {
            mismatches.push(i);
        }
    }
    verdict(
        mismatches.is_empty(),
        format!("{EQUIVALENCE_SESSIONS} random sessions, identical suggestion documents in {}", EQUIVALENCE_SESSIONS - mismatches.len()),
    )
}

fn run(name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Verdict::Fail(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = start.elapsed().as_secs_f64();
    match v {
        Verdict::Pass(d) => {
            println!("PASS     {name}: {d} [{secs:.1}s]");
            true
        }
        Verdict::Skipped(d) => {
            println!("SKIPPED  {name}: {d}");
            true
        }
        Verdict::Fail(d) => {
            println!("FAIL     {name}: {d} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    // `cargo test -- --list` expects no output from a harness-free target.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let fixture = common::Fixture::new(10);
    let results = [
        run("metric oracle equivalence", metric_oracle),
        run("gradient fidelity", gradient_fidelity),
        run("learnability oracle", learnability),
        run("cosine invariance", || cosine_invariance(&fixture)),
        run("loss-form fidelity", loss_fidelity),
        run("dataset fidelity", dataset_fidelity),
        run("ablation plumbing", || ablation_plumbing(&fixture)),
        run("context-window sweep", || context_window_sweep(&fixture)),
        run("CLI/service equivalence", || cli_service_equivalence(&fixture)),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} criteria, {failed} failed", results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
