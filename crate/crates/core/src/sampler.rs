//! Prediction contexts: which users and items share one model input, and
//! which of their ratings are shown or hidden.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{RatingGraph, Role, ScenarioSplit};
use crate::{Error, Result};

/// What the model sees in one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatingState {
    Observed(f32),
    /// A known rating hidden from the model.
    MaskedTarget,
    /// No rating exists (or none is available).
    Unobserved,
}

/// An `n × m` block of users and items. Cell `(k, j)` is at `k·m + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionContext {
    pub user_ids: Vec<u32>,
    pub item_ids: Vec<u32>,
    pub states: Vec<RatingState>,
    /// Ground-truth rating of each cell when one exists.
    pub truth: Vec<Option<f32>>,
    pub support: Vec<bool>,
    /// Cells scored by the loss or the metrics.
    pub query: Vec<bool>,
}

impl PredictionContext {
    /// Context over the given entities with every known rating observed.
    pub fn from_entities(g: &RatingGraph, user_ids: Vec<u32>, item_ids: Vec<u32>) -> Self {
        let (n, m) = (user_ids.len(), item_ids.len());
        let mut truth = Vec::with_capacity(n * m);
        for &u in &user_ids {
            for &i in &item_ids {
                truth.push(g.rating(u, i));
            }
        }
        let states = truth
            .iter()
            .map(|t| t.map_or(RatingState::Unobserved, RatingState::Observed))
            .collect();
        PredictionContext {
            user_ids,
            item_ids,
            states,
            truth,
            support: vec![false; n * m],
            query: vec![false; n * m],
        }
    }

    pub fn n(&self) -> usize {
        self.user_ids.len()
    }

    pub fn m(&self) -> usize {
        self.item_ids.len()
    }

    pub fn cell(&self, k: usize, j: usize) -> usize {
        k * self.m() + j
    }

    pub fn query_count(&self) -> usize {
        self.query.iter().filter(|q| **q).count()
    }

    /// Reorders users and items: new user `k` is old user `pu[k]`.
    pub fn permuted(&self, pu: &[usize], pi: &[usize]) -> Self {
        let m = self.m();
        let remap = |src: usize| {
            let (k, j) = (src / m, src % m);
            pu[k] * m + pi[j]
        };
        let cells = self.n() * m;
        PredictionContext {
            user_ids: pu.iter().map(|&k| self.user_ids[k]).collect(),
            item_ids: pi.iter().map(|&j| self.item_ids[j]).collect(),
            states: (0..cells).map(|c| self.states[remap(c)]).collect(),
            truth: (0..cells).map(|c| self.truth[remap(c)]).collect(),
            support: (0..cells).map(|c| self.support[remap(c)]).collect(),
            query: (0..cells).map(|c| self.query[remap(c)]).collect(),
        }
    }

    fn check_invariants(&self) {
        debug_assert!(self
            .support
            .iter()
            .zip(&self.query)
            .zip(&self.truth)
            .all(|((s, q), t)| !(*s && *q) && (!(*s || *q) || t.is_some())));
    }
}

/// Entities a sampler may draw beyond the seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityPool {
    pub users: Vec<u32>,
    pub items: Vec<u32>,
}

impl EntityPool {
    pub fn all(g: &RatingGraph) -> Self {
        EntityPool {
            users: (0..g.n_users() as u32).collect(),
            items: (0..g.n_items() as u32).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplerKind {
    #[default]
    Neighborhood,
    Random,
    FeatSim,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "neighborhood" => Ok(SamplerKind::Neighborhood),
            "random" => Ok(SamplerKind::Random),
            "featsim" => Ok(SamplerKind::FeatSim),
            _ => Err(Error::Config(format!(
                "unknown sampler `{s}` (expected neighborhood, random or featsim)"
            ))),
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Neighborhood => "neighborhood",
            SamplerKind::Random => "random",
            SamplerKind::FeatSim => "featsim",
        })
    }
}

fn dedup_in_order(xs: impl Iterator<Item = u32>) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::new();
    for x in xs {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

struct Seeds {
    users: Vec<u32>,
    items: Vec<u32>,
}

fn check_seeds(g: &RatingGraph, seeds: &[(u32, u32)], n: usize, m: usize) -> Result<Seeds> {
    if g.n_users() == 0 || g.n_items() == 0 {
        return Err(Error::EmptyGraph("users or items"));
    }
    if seeds.is_empty() {
        return Err(Error::Config("sampler needs at least one seed".into()));
    }
    let users = dedup_in_order(seeds.iter().map(|s| s.0));
    let items = dedup_in_order(seeds.iter().map(|s| s.1));
    if users.iter().any(|&u| u as usize >= g.n_users()) || items.iter().any(|&i| i as usize >= g.n_items()) {
        return Err(Error::Config("seed outside the graph".into()));
    }
    if users.len() > n || items.len() > m {
        return Err(Error::Config(format!(
            "{} seed users and {} seed items exceed the {n}×{m} budget",
            users.len(),
            items.len()
        )));
    }
    Ok(Seeds { users, items })
}

/// Takes up to `budget` entities from `cands` (sorted, unselected), uniformly
/// when there are more candidates than room.
fn take_uniform<R: Rng + ?Sized>(mut cands: Vec<u32>, budget: usize, rng: &mut R) -> Vec<u32> {
    if cands.len() > budget {
        let mut picked: Vec<u32> = cands.choose_multiple(rng, budget).copied().collect();
        picked.sort_unstable();
        cands = picked;
    }
    cands
}

fn fill_uniform<R: Rng + ?Sized>(selected: &mut Vec<u32>, chosen: &mut [bool], pool: &[u32], budget: usize, rng: &mut R) {
    if selected.len() >= budget {
        return;
    }
    let rest: Vec<u32> = pool.iter().copied().filter(|&e| !chosen[e as usize]).collect();
    for e in take_uniform(rest, budget - selected.len(), rng) {
        chosen[e as usize] = true;
        selected.push(e);
    }
}

/// Breadth-first context growth over the rating graph.
///
/// Hops alternate: users adjacent to the newest items, then items adjacent
/// to the newest users, starting from the seeds. A hop with more candidates
/// than the remaining budget keeps a uniform subset. When the reachable part
/// of the graph runs out, the remaining slots are filled uniformly from the
/// pool.
pub fn sample_neighborhood<R: Rng + ?Sized>(
    g: &RatingGraph,
    pool: &EntityPool,
    seeds: &[(u32, u32)],
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<PredictionContext> {
    let Seeds { mut users, mut items } = check_seeds(g, seeds, n, m)?;
    let mut in_pool_u = vec![false; g.n_users()];
    pool.users.iter().for_each(|&u| in_pool_u[u as usize] = true);
    let mut in_pool_i = vec![false; g.n_items()];
    pool.items.iter().for_each(|&i| in_pool_i[i as usize] = true);
    let mut chosen_u = vec![false; g.n_users()];
    users.iter().for_each(|&u| chosen_u[u as usize] = true);
    let mut chosen_i = vec![false; g.n_items()];
    items.iter().for_each(|&i| chosen_i[i as usize] = true);

    let mut frontier_u = users.clone();
    let mut frontier_i = items.clone();
    loop {
        let mut grew = false;
        // users adjacent to the newest items
        let mut cands: Vec<u32> = frontier_i
            .iter()
            .flat_map(|&i| g.item_users(i).iter().copied())
            .filter(|&u| in_pool_u[u as usize] && !chosen_u[u as usize])
            .collect();
        cands.sort_unstable();
        cands.dedup();
        frontier_i.clear();
        for u in take_uniform(cands, n - users.len(), rng) {
            chosen_u[u as usize] = true;
            users.push(u);
            frontier_u.push(u);
            grew = true;
        }
        // items adjacent to the newest users
        let mut cands: Vec<u32> = frontier_u
            .iter()
            .flat_map(|&u| g.user_items(u))
            .filter(|&i| in_pool_i[i as usize] && !chosen_i[i as usize])
            .collect();
        cands.sort_unstable();
        cands.dedup();
        frontier_u.clear();
        for i in take_uniform(cands, m - items.len(), rng) {
            chosen_i[i as usize] = true;
            items.push(i);
            frontier_i.push(i);
            grew = true;
        }
        if !grew || (users.len() == n && items.len() == m) {
            break;
        }
    }
    fill_uniform(&mut users, &mut chosen_u, &pool.users, n, rng);
    fill_uniform(&mut items, &mut chosen_i, &pool.items, m, rng);
    Ok(PredictionContext::from_entities(g, users, items))
}

/// Seeds plus a uniform draw without replacement from the pool.
pub fn sample_random<R: Rng + ?Sized>(
    g: &RatingGraph,
    pool: &EntityPool,
    seeds: &[(u32, u32)],
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<PredictionContext> {
    let Seeds { mut users, mut items } = check_seeds(g, seeds, n, m)?;
    let mut chosen_u = vec![false; g.n_users()];
    users.iter().for_each(|&u| chosen_u[u as usize] = true);
    let mut chosen_i = vec![false; g.n_items()];
    items.iter().for_each(|&i| chosen_i[i as usize] = true);
    fill_uniform(&mut users, &mut chosen_u, &pool.users, n, rng);
    fill_uniform(&mut items, &mut chosen_i, &pool.items, m, rng);
    Ok(PredictionContext::from_entities(g, users, items))
}

/// Cosine similarity of two one-hot attribute encodings: the fraction of
/// slots with equal categories.
fn attr_cosine(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

fn top_similar(attrs: &[Vec<u32>], seeds: &[u32], pool: &[u32], chosen: &[bool], budget: usize) -> Vec<u32> {
    let mut scored: Vec<(f64, u32)> = pool
        .iter()
        .copied()
        .filter(|&e| !chosen[e as usize])
        .map(|e| {
            let s = seeds
                .iter()
                .map(|&s| attr_cosine(&attrs[s as usize], &attrs[e as usize]))
                .fold(0.0, f64::max);
            (s, e)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(budget).map(|(_, e)| e).collect()
}

/// Seeds plus the pool entities whose attributes best match a seed of the
/// same kind. Ties go to the smaller id.
pub fn sample_featsim(
    g: &RatingGraph,
    pool: &EntityPool,
    seeds: &[(u32, u32)],
    n: usize,
    m: usize,
) -> Result<PredictionContext> {
    let Seeds { mut users, mut items } = check_seeds(g, seeds, n, m)?;
    let mut chosen_u = vec![false; g.n_users()];
    users.iter().for_each(|&u| chosen_u[u as usize] = true);
    let mut chosen_i = vec![false; g.n_items()];
    items.iter().for_each(|&i| chosen_i[i as usize] = true);
    let extra_u = top_similar(&g.users().attrs, &users, &pool.users, &chosen_u, n - users.len());
    let extra_i = top_similar(&g.items().attrs, &items, &pool.items, &chosen_i, m - items.len());
    users.extend(extra_u);
    items.extend(extra_i);
    Ok(PredictionContext::from_entities(g, users, items))
}

pub fn sample<R: Rng + ?Sized>(
    kind: SamplerKind,
    g: &RatingGraph,
    pool: &EntityPool,
    seeds: &[(u32, u32)],
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<PredictionContext> {
    match kind {
        SamplerKind::Neighborhood => sample_neighborhood(g, pool, seeds, n, m, rng),
        SamplerKind::Random => sample_random(g, pool, seeds, n, m, rng),
        SamplerKind::FeatSim => sample_featsim(g, pool, seeds, n, m),
    }
}

/// Splits every cell with a known rating into support (probability
/// `p_support`) or query. Query cells are shown as masked targets; cells
/// without a rating are unobserved. One draw per known cell, row-major.
pub fn assign_masks<R: Rng + ?Sized>(mut ctx: PredictionContext, p_support: f64, rng: &mut R) -> PredictionContext {
    let p = p_support.clamp(0.0, 1.0);
    for c in 0..ctx.truth.len() {
        match ctx.truth[c] {
            Some(r) => {
                let s = rng.gen_bool(p);
                ctx.support[c] = s;
                ctx.query[c] = !s;
                ctx.states[c] = if s { RatingState::Observed(r) } else { RatingState::MaskedTarget };
            }
            None => {
                ctx.support[c] = false;
                ctx.query[c] = false;
                ctx.states[c] = RatingState::Unobserved;
            }
        }
    }
    ctx.check_invariants();
    ctx
}

/// Masks for an evaluation context: held-out ratings are the query,
/// observable ratings are support, and training ratings are shown with
/// probability `p_support` and otherwise masked without being scored.
pub fn assign_eval_masks<R: Rng + ?Sized>(
    mut ctx: PredictionContext,
    g: &RatingGraph,
    split: &ScenarioSplit,
    p_support: f64,
    rng: &mut R,
) -> PredictionContext {
    let p = p_support.clamp(0.0, 1.0);
    let m = ctx.m();
    for c in 0..ctx.truth.len() {
        let (u, i) = (ctx.user_ids[c / m], ctx.item_ids[c % m]);
        let role = ctx.truth[c].and_then(|_| split.role_of(g, u, i));
        let (state, support, query) = match (role, ctx.truth[c]) {
            (Some(Role::Held), Some(_)) => (RatingState::MaskedTarget, false, true),
            (Some(Role::Observable), Some(r)) => (RatingState::Observed(r), true, false),
            (Some(Role::Train), Some(r)) => {
                if rng.gen_bool(p) {
                    (RatingState::Observed(r), true, false)
                } else {
                    (RatingState::MaskedTarget, false, false)
                }
            }
            _ => (RatingState::Unobserved, false, false),
        };
        if state == RatingState::Unobserved {
            ctx.truth[c] = None;
        }
        ctx.states[c] = state;
        ctx.support[c] = support;
        ctx.query[c] = query;
    }
    ctx.check_invariants();
    ctx
}

/// Draws training contexts from a graph of training ratings.
#[derive(Debug, Clone)]
pub struct TrainingSampler {
    pub graph: RatingGraph,
    pub pool: EntityPool,
    pub kind: SamplerKind,
    pub n: usize,
    pub m: usize,
    pub p_support: f64,
}

impl TrainingSampler {
    /// Contexts seeded by one uniformly drawn rating of `graph`; entities
    /// are restricted to `pool`.
    pub fn new(graph: RatingGraph, pool: EntityPool, kind: SamplerKind, n: usize, m: usize, p_support: f64) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Config("context budget must be positive".into()));
        }
        if graph.ratings().is_empty() {
            return Err(Error::EmptyGraph("training ratings"));
        }
        Ok(TrainingSampler {
            graph,
            pool,
            kind,
            n,
            m,
            p_support,
        })
    }

    /// Sampler over the training side of a split.
    pub fn from_split(g: &RatingGraph, split: &ScenarioSplit, kind: SamplerKind, n: usize, m: usize, p_support: f64) -> Result<Self> {
        let graph = split.training_graph(g);
        let pool = EntityPool {
            users: split.train_users(),
            items: split.train_items(),
        };
        TrainingSampler::new(graph, pool, kind, n, m, p_support)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PredictionContext> {
        let r = self.graph.ratings()[rng.gen_range(0..self.graph.ratings().len())];
        let ctx = sample(self.kind, &self.graph, &self.pool, &[(r.user, r.item)], self.n, self.m, rng)?;
        Ok(assign_masks(ctx, self.p_support, rng))
    }
}
