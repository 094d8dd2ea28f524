//! Ranking metrics, the popularity baseline and scenario evaluation.

use std::fmt::Write as _;

use hire_tensor::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Part, RatingGraph, Role, Scenario, ScenarioSplit};
use crate::embedding::ContextInput;
use crate::model::HireModel;
use crate::sampler::{assign_eval_masks, sample, EntityPool, PredictionContext, SamplerKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankMetrics {
    pub precision: f64,
    pub ndcg: f64,
    pub ap: f64,
    /// `k` exceeded the list length and the full list was used.
    pub truncated: bool,
}

/// Smallest rating counted as relevant: `⌈0.8·r_max⌉`.
pub fn relevance_threshold(r_max: u32) -> f64 {
    (0.8 * r_max as f64).ceil()
}

/// Positions sorted by descending score; equal scores keep ascending
/// position.
pub fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 2) as f64).log2()
}

/// Precision, NDCG and average precision at `k` for one ranked list.
///
/// Items are ranked by `pred` (ties by list position). NDCG uses the true
/// rating as gain with discount `1/log₂(1 + rank)`, normalised by the best
/// possible ordering. An item is relevant when its true rating reaches
/// `threshold`. Average precision divides by `min(k, relevant items)`.
/// Lists without gain or without relevant items score 0.
pub fn rank_metrics(truth: &[f64], pred: &[f64], k: usize, threshold: f64) -> Result<RankMetrics> {
    if truth.is_empty() || truth.len() != pred.len() || k == 0 {
        return Err(Error::Config(format!(
            "ranking needs equal non-empty lists and k ≥ 1 (got {}, {}, k={k})",
            truth.len(),
            pred.len()
        )));
    }
    let n = truth.len();
    let k_eff = k.min(n);
    let order = ranking_order(pred);
    let mut ideal = truth.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let (mut dcg, mut idcg) = (0.0, 0.0);
    for r in 0..k_eff {
        dcg += truth[order[r]] * discount(r);
        idcg += ideal[r] * discount(r);
    }
    let ndcg = if idcg > 0.0 { dcg / idcg } else { 0.0 };
    let relevant = |x: f64| x >= threshold;
    let total_rel = truth.iter().filter(|&&x| relevant(x)).count();
    let (mut hits, mut ap_sum) = (0usize, 0.0);
    for (r, &idx) in order.iter().take(k_eff).enumerate() {
        if relevant(truth[idx]) {
            hits += 1;
            ap_sum += hits as f64 / (r + 1) as f64;
        }
    }
    let denom = k_eff.min(total_rel);
    Ok(RankMetrics {
        precision: hits as f64 / k_eff as f64,
        ndcg,
        ap: if denom == 0 { 0.0 } else { ap_sum / denom as f64 },
        truncated: k > n,
    })
}

/// Anything that scores the cells of a context.
pub trait Predictor: Sync {
    fn name(&self) -> String;
    /// Row-major `n × m` scores.
    fn predict(&self, g: &RatingGraph, ctx: &PredictionContext) -> Result<Vec<f64>>;
}

impl<T: Scalar> Predictor for HireModel<T> {
    fn name(&self) -> String {
        "HIRE".into()
    }

    fn predict(&self, g: &RatingGraph, ctx: &PredictionContext) -> Result<Vec<f64>> {
        let input = ContextInput::new(g, ctx);
        let y = HireModel::predict(self, &input)?;
        Ok(y.data().iter().map(|v| v.as_f64()).collect())
    }
}

/// Item score `degree / max degree`, the same for every user.
#[derive(Debug, Clone, PartialEq)]
pub struct Popularity {
    pub scores: Vec<f64>,
}

impl Popularity {
    pub fn fit(g: &RatingGraph) -> Result<Self> {
        if g.n_items() == 0 {
            return Err(Error::EmptyGraph("items"));
        }
        let deg: Vec<usize> = (0..g.n_items() as u32).map(|i| g.item_degree(i)).collect();
        let max = *deg.iter().max().expect("non-empty");
        let scores = deg
            .iter()
            .map(|&d| if max == 0 { 1.0 } else { d as f64 / max as f64 })
            .collect();
        Ok(Popularity { scores })
    }
}

impl Predictor for Popularity {
    fn name(&self) -> String {
        "Popularity".into()
    }

    fn predict(&self, _g: &RatingGraph, ctx: &PredictionContext) -> Result<Vec<f64>> {
        let m = ctx.m();
        Ok((0..ctx.n() * m).map(|c| self.scores[ctx.item_ids[c % m] as usize]).collect())
    }
}

/// Predicts the true rating of every known cell.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruth;

impl Predictor for GroundTruth {
    fn name(&self) -> String {
        "GroundTruth".into()
    }

    fn predict(&self, _g: &RatingGraph, ctx: &PredictionContext) -> Result<Vec<f64>> {
        Ok(ctx.truth.iter().map(|t| t.unwrap_or(0.0) as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub n_contexts: usize,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub p_support: f64,
    /// Relevance threshold; `⌈0.8·r_max⌉` when unset.
    pub threshold: Option<f64>,
    pub sampler: SamplerKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![5, 7, 10],
            n_contexts: 100,
            seed: 0,
            n: 32,
            m: 32,
            p_support: 0.1,
            threshold: None,
            sampler: SamplerKind::Neighborhood,
        }
    }
}

/// Test contexts and the graph they were cut from.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub scenario: Scenario,
    pub graph: RatingGraph,
    pub visible: RatingGraph,
    pub contexts: Vec<PredictionContext>,
}

/// Builds test contexts seeded by cold entities.
///
/// Each context starts from one test entity and up to half a budget of its
/// held-out and observable partners, then grows with the configured
/// sampler. Held-out ratings become the query.
pub fn build_eval_set(g: &RatingGraph, split: &ScenarioSplit, cfg: &EvalConfig) -> Result<EvalSet> {
    if cfg.n == 0 || cfg.m == 0 || cfg.n_contexts == 0 {
        return Err(Error::Config("evaluation needs a positive budget and context count".into()));
    }
    let graph = split.eval_graph(g);
    let visible = split.visible_graph(g);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let item_side = split.scenario == Scenario::ItemCold;
    // Cold entities with something to predict, and their partners.
    let mut anchors: Vec<(u32, Vec<u32>, Vec<u32>)> = Vec::new();
    if item_side {
        for i in split.test_items() {
            let idx = g.item_rating_indices(i);
            let held: Vec<u32> = idx.iter().filter(|&&k| split.roles[k as usize] == Role::Held).map(|&k| g.ratings()[k as usize].user).collect();
            let obs: Vec<u32> = idx.iter().filter(|&&k| split.roles[k as usize] == Role::Observable).map(|&k| g.ratings()[k as usize].user).collect();
            if !held.is_empty() {
                anchors.push((i, held, obs));
            }
        }
    } else {
        for u in split.test_users() {
            let range = g.user_rating_range(u);
            let held: Vec<u32> = range.clone().filter(|&k| split.roles[k] == Role::Held).map(|k| g.ratings()[k].item).collect();
            let obs: Vec<u32> = range.filter(|&k| split.roles[k] == Role::Observable).map(|k| g.ratings()[k].item).collect();
            if !held.is_empty() {
                anchors.push((u, held, obs));
            }
        }
    }
    if anchors.is_empty() {
        return Err(Error::IncompatibleScenario {
            scenario: split.scenario,
            reason: "no test entity has held-out ratings".into(),
        });
    }
    let merge = |a: Vec<u32>, b: Vec<u32>| {
        let mut v: Vec<u32> = a.into_iter().chain(b).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let pool = EntityPool {
        users: merge(split.train_users(), split.test_users()),
        items: merge(split.train_items(), split.test_items()),
    };
    let mut order: Vec<usize> = (0..anchors.len()).collect();
    order.shuffle(&mut rng);
    let mut contexts = Vec::with_capacity(cfg.n_contexts);
    let mut attempts = 0;
    while contexts.len() < cfg.n_contexts && attempts < cfg.n_contexts * 10 {
        let (anchor, held, obs) = &anchors[order[attempts % order.len()]];
        attempts += 1;
        let half = if item_side { cfg.n / 2 } else { cfg.m / 2 };
        let mut partners: Vec<u32> = held.choose_multiple(&mut rng, half.max(1)).copied().collect();
        let room = half.saturating_sub(partners.len());
        partners.extend(obs.iter().copied().take(room));
        let seeds: Vec<(u32, u32)> = partners
            .iter()
            .map(|&p| if item_side { (p, *anchor) } else { (*anchor, p) })
            .collect();
        let ctx = sample(cfg.sampler, &graph, &pool, &seeds, cfg.n, cfg.m, &mut rng)?;
        let ctx = assign_eval_masks(ctx, g, split, cfg.p_support, &mut rng);
        if ctx.query_count() > 0 {
            contexts.push(ctx);
        }
    }
    Ok(EvalSet {
        scenario: split.scenario,
        graph,
        visible,
        contexts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation.
    pub fn of(xs: &[f64]) -> Stat {
        if xs.is_empty() {
            return Stat::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMetrics {
    pub k: usize,
    pub precision: Stat,
    pub ndcg: Stat,
    pub map: Stat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub predictor: String,
    pub n_contexts: usize,
    pub per_k: Vec<KMetrics>,
    /// Per-user lists shorter than the largest `k`.
    pub truncated_lists: usize,
}

impl EvalReport {
    pub fn metric(&self, k: usize) -> Option<&KMetrics> {
        self.per_k.iter().find(|m| m.k == k)
    }
}

/// Per-user metrics averaged within a context, for each `k`:
/// `[k][precision, ndcg, ap]`. `None` when no user has a query cell.
fn context_metrics(ctx: &PredictionContext, scores: &[f64], ks: &[usize], threshold: f64) -> Result<Option<(Vec<[f64; 3]>, usize)>> {
    let m = ctx.m();
    let mut sums = vec![[0.0; 3]; ks.len()];
    let mut users = 0usize;
    let mut truncated = 0usize;
    for k_row in 0..ctx.n() {
        let mut cells: Vec<(u32, f64, f64)> = (0..m)
            .map(|j| k_row * m + j)
            .filter(|&c| ctx.query[c])
            .map(|c| (ctx.item_ids[c % m], ctx.truth[c].expect("query cell has truth") as f64, scores[c]))
            .collect();
        if cells.is_empty() {
            continue;
        }
        cells.sort_by_key(|c| c.0);
        let truth: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let pred: Vec<f64> = cells.iter().map(|c| c.2).collect();
        users += 1;
        for (s, &k) in sums.iter_mut().zip(ks) {
            let r = rank_metrics(&truth, &pred, k, threshold)?;
            s[0] += r.precision;
            s[1] += r.ndcg;
            s[2] += r.ap;
        }
        if ks.iter().any(|&k| k > truth.len()) {
            truncated += 1;
        }
    }
    if users == 0 {
        return Ok(None);
    }
    for s in &mut sums {
        s.iter_mut().for_each(|x| *x /= users as f64);
    }
    Ok(Some((sums, truncated)))
}

/// Scores prepared contexts with one predictor.
pub fn evaluate_set(pred: &dyn Predictor, set: &EvalSet, ks: &[usize], threshold: f64) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("k values must be positive".into()));
    }
    let per_ctx = set
        .contexts
        .par_iter()
        .map(|ctx| {
            let scores = pred.predict(&set.graph, ctx)?;
            context_metrics(ctx, &scores, ks, threshold)
        })
        .collect::<Vec<_>>();
    let mut vals: Vec<Vec<[f64; 3]>> = Vec::new();
    let mut truncated_lists = 0;
    for r in per_ctx {
        if let Some((v, t)) = r? {
            vals.push(v);
            truncated_lists += t;
        }
    }
    let per_k = ks
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let col = |mi: usize| Stat::of(&vals.iter().map(|v| v[ki][mi]).collect::<Vec<_>>());
            KMetrics {
                k,
                precision: col(0),
                ndcg: col(1),
                map: col(2),
            }
        })
        .collect();
    Ok(EvalReport {
        scenario: set.scenario,
        predictor: pred.name(),
        n_contexts: vals.len(),
        per_k,
        truncated_lists,
    })
}

/// Builds test contexts for `split` and scores them with `pred`.
pub fn evaluate(pred: &dyn Predictor, g: &RatingGraph, split: &ScenarioSplit, cfg: &EvalConfig) -> Result<EvalReport> {
    let set = build_eval_set(g, split, cfg)?;
    let threshold = cfg.threshold.unwrap_or_else(|| relevance_threshold(g.r_max()));
    evaluate_set(pred, &set, &cfg.ks, threshold)
}

fn headers(ks: &[usize]) -> Vec<String> {
    let mut h = Vec::new();
    for &k in ks {
        h.push(format!("P@{k}"));
        h.push(format!("NDCG@{k}"));
        h.push(format!("MAP@{k}"));
    }
    h
}

/// Aligned text table, one row per report, metric means in percent with
/// the standard deviation after `±`.
pub fn format_table(reports: &[EvalReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let ks: Vec<usize> = first.per_k.iter().map(|m| m.k).collect();
    let mut rows = vec![{
        let mut r = vec!["model".to_string(), "scenario".to_string(), "contexts".to_string()];
        r.extend(headers(&ks));
        r
    }];
    for rep in reports {
        let mut r = vec![rep.predictor.clone(), rep.scenario.to_string(), rep.n_contexts.to_string()];
        for m in &rep.per_k {
            for s in [m.precision, m.ndcg, m.map] {
                r.push(format!("{:.2}±{:.2}", 100.0 * s.mean, 100.0 * s.std));
            }
        }
        rows.push(r);
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// CSV with mean and std columns for every metric.
pub fn format_csv(reports: &[EvalReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let ks: Vec<usize> = first.per_k.iter().map(|m| m.k).collect();
    let mut out = String::from("model,scenario,contexts");
    for h in headers(&ks) {
        let _ = write!(out, ",{h},{h}_std");
    }
    out.push('\n');
    for rep in reports {
        let _ = write!(out, "{},{},{}", rep.predictor, rep.scenario, rep.n_contexts);
        for m in &rep.per_k {
            for s in [m.precision, m.ndcg, m.map] {
                let _ = write!(out, ",{},{}", s.mean, s.std);
            }
        }
        out.push('\n');
    }
    out
}

/// Whether an entity may appear in test contexts.
pub fn is_test(parts: &[Part], e: u32) -> bool {
    parts[e as usize] == Part::Test
}
