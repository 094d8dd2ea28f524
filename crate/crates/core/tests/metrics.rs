//! Ranking metrics against a brute-force oracle, and evaluation plumbing.

mod common;

use common::{graph_of, random_graph};
use hire_core::data::{make_split, Scenario, SplitOptions};
use hire_core::eval::{
    build_eval_set, evaluate, evaluate_set, format_csv, rank_metrics, relevance_threshold, EvalConfig, GroundTruth,
    Popularity, Predictor,
};
use hire_core::sampler::PredictionContext;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Position of each item in the ranking: the number of items placed ahead
/// of it (higher score, or equal score and lower index).
fn positions(pred: &[f64]) -> Vec<usize> {
    (0..pred.len())
        .map(|a| (0..pred.len()).filter(|&b| pred[b] > pred[a] || (pred[b] == pred[a] && b < a)).count())
        .collect()
}

fn oracle(truth: &[f64], pred: &[f64], k: usize, thr: f64) -> (f64, f64, f64) {
    let k = k.min(truth.len());
    let pos = positions(pred);
    let top: Vec<usize> = (0..truth.len()).filter(|&a| pos[a] < k).collect();
    let rel = |a: usize| truth[a] >= thr;
    let precision = top.iter().filter(|&&a| rel(a)).count() as f64 / k as f64;
    let dcg: f64 = top.iter().map(|&a| truth[a] / (pos[a] as f64 + 2.0).log2()).sum();
    let mut best = truth.to_vec();
    best.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = best.iter().take(k).enumerate().map(|(r, g)| g / (r as f64 + 2.0).log2()).sum();
    let ndcg = if idcg > 0.0 { dcg / idcg } else { 0.0 };
    let mut ap = 0.0;
    for &a in top.iter().filter(|&&a| rel(a)) {
        let hits_upto = top.iter().filter(|&&b| rel(b) && pos[b] <= pos[a]).count();
        ap += hits_upto as f64 / (pos[a] + 1) as f64;
    }
    let n_rel = truth.iter().filter(|&&t| t >= thr).count();
    let denom = k.min(n_rel);
    (precision, ndcg, if denom == 0 { 0.0 } else { ap / denom as f64 })
}

fn agrees(truth: &[f64], pred: &[f64], k: usize) -> bool {
    let got = rank_metrics(truth, pred, k, 4.0).unwrap();
    let (p, n, a) = oracle(truth, pred, k, 4.0);
    (got.precision - p).abs() < 1e-12 && (got.ndcg - n).abs() < 1e-12 && (got.ap - a).abs() < 1e-12
}

#[test]
fn metrics_match_the_oracle_on_random_lists() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let len = rng.gen_range(1..=8);
        let truth: Vec<f64> = (0..len).map(|_| rng.gen_range(1..=5) as f64).collect();
        // Coarse scores so ties occur often.
        let pred: Vec<f64> = (0..len).map(|_| rng.gen_range(0..4) as f64 * 0.5).collect();
        for k in [1, 3, 5, 7, 10] {
            assert!(agrees(&truth, &pred, k), "{truth:?} {pred:?} k={k}");
        }
    }
}

#[test]
fn metrics_match_the_oracle_on_every_order_of_four() {
    let truth = [5.0, 2.0, 4.0, 1.0];
    let mut perms = vec![vec![]];
    for _ in 0..4 {
        perms = perms
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..4)
                    .filter(|x| !p.contains(x))
                    .map(|x| [p.clone(), vec![x]].concat())
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    assert_eq!(perms.len(), 24);
    for p in perms {
        let pred: Vec<f64> = p.iter().map(|&r| -(r as f64)).collect();
        for k in 1..=5 {
            assert!(agrees(&truth, &pred, k), "{p:?} k={k}");
        }
    }
}

#[test]
fn perfect_order_scores_one() {
    let truth = [5.0, 4.0, 1.0];
    let r = rank_metrics(&truth, &truth, 2, relevance_threshold(5)).unwrap();
    assert_eq!((r.precision, r.ndcg, r.ap), (1.0, 1.0, 1.0));
    assert_eq!(relevance_threshold(5), 4.0);
    assert!(rank_metrics(&truth, &truth, 5, 4.0).unwrap().truncated);
    assert!(rank_metrics(&truth, &truth[..2], 1, 4.0).is_err());
    assert!(rank_metrics(&truth, &truth, 0, 4.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn relabelling_items_changes_nothing(
        truth in prop::collection::vec(1u32..=5, 1..9),
        seed in any::<u64>(),
        k in 1usize..10,
    ) {
        use rand::seq::SliceRandom;
        let truth: Vec<f64> = truth.into_iter().map(f64::from).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Distinct scores so the order does not depend on position.
        let mut pred: Vec<f64> = (0..truth.len()).map(|k| k as f64).collect();
        pred.shuffle(&mut rng);
        let mut perm: Vec<usize> = (0..truth.len()).collect();
        perm.shuffle(&mut rng);
        let t2: Vec<f64> = perm.iter().map(|&a| truth[a]).collect();
        let p2: Vec<f64> = perm.iter().map(|&a| pred[a]).collect();
        let a = rank_metrics(&truth, &pred, k, 4.0).unwrap();
        let b = rank_metrics(&t2, &p2, k, 4.0).unwrap();
        prop_assert!((a.precision - b.precision).abs() < 1e-12);
        prop_assert!((a.ndcg - b.ndcg).abs() < 1e-12);
        prop_assert!((a.ap - b.ap).abs() < 1e-12);
    }
}

fn context_over(g: &hire_core::RatingGraph) -> PredictionContext {
    PredictionContext::from_entities(g, (0..g.n_users() as u32).collect(), (0..g.n_items() as u32).collect())
}

#[test]
fn popularity_scores_follow_degree() {
    let one = graph_of(2, 1, &[(0, 0, 3.0)]);
    assert_eq!(Popularity::fit(&one).unwrap().scores, vec![1.0]);

    let g = graph_of(4, 2, &[(0, 0, 1.0), (1, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0), (2, 1, 1.0), (3, 1, 1.0)]);
    let pop = Popularity::fit(&g).unwrap();
    assert_eq!(pop.scores, vec![0.5, 1.0]);
    let s = pop.predict(&g, &context_over(&g)).unwrap();
    assert_eq!(s.len(), 8);
    assert!(s.chunks(2).all(|row| row == [0.5, 1.0]));

    // Equal degrees tie and the ranking falls back to item order.
    let tied = graph_of(1, 3, &[(0, 0, 1.0), (0, 1, 5.0), (0, 2, 3.0)]);
    let pop = Popularity::fit(&tied).unwrap();
    assert_eq!(pop.scores, vec![1.0; 3]);
    assert_eq!(hire_core::eval::ranking_order(&pop.scores), vec![0, 1, 2]);
}

fn uc_setup() -> (hire_core::RatingGraph, hire_core::data::ScenarioSplit, EvalConfig) {
    let g = random_graph(11, 60, 40, 0.4, &[3], &[4]);
    let split = make_split(&g, Scenario::UserCold, &SplitOptions::default(), 2).unwrap();
    let cfg = EvalConfig {
        n_contexts: 12,
        n: 8,
        m: 8,
        seed: 4,
        ..EvalConfig::default()
    };
    (g, split, cfg)
}

#[test]
fn ground_truth_ranks_perfectly() {
    let (g, split, cfg) = uc_setup();
    let rep = evaluate(&GroundTruth, &g, &split, &cfg).unwrap();
    assert!(rep.n_contexts > 0);
    for m in &rep.per_k {
        assert!((m.ndcg.mean - 1.0).abs() < 1e-12 && m.ndcg.std < 1e-12, "{m:?}");
    }
}

#[test]
fn evaluation_is_reproducible() {
    let (g, split, cfg) = uc_setup();
    let pop = Popularity::fit(&split.training_graph(&g)).unwrap();
    let a = evaluate(&pop, &g, &split, &cfg).unwrap();
    let b = evaluate(&pop, &g, &split, &cfg).unwrap();
    assert_eq!(a, b);
    let set = build_eval_set(&g, &split, &cfg).unwrap();
    assert_eq!(evaluate_set(&pop, &set, &cfg.ks, 4.0).unwrap(), a);
}

#[test]
fn report_csv_has_nine_metric_columns() {
    let (g, split, cfg) = uc_setup();
    let rep = evaluate(&GroundTruth, &g, &split, &cfg).unwrap();
    let csv = format_csv(&[rep]);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let means: Vec<&&str> = header.iter().filter(|h| h.contains('@') && !h.ends_with("_std")).collect();
    assert_eq!(means.len(), 9);
    assert_eq!(header.len(), 3 + 18);
    assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), header.len());
}
