//! Graph builders shared by the integration tests.
#![allow(dead_code)]

use hire_core::data::{EntitySet, Rating, Slot};
use hire_core::RatingGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

/// Entities with `cards.len()` attribute slots filled at random.
pub fn entities(prefix: &str, n: usize, cards: &[usize], rng: &mut ChaCha8Rng) -> EntitySet {
    if cards.is_empty() {
        return EntitySet::id_only(ids(prefix, n));
    }
    EntitySet {
        raw_ids: ids(prefix, n),
        slots: cards
            .iter()
            .enumerate()
            .map(|(s, &c)| Slot::new(format!("s{s}"), ids("c", c)))
            .collect(),
        attrs: (0..n).map(|_| cards.iter().map(|&c| rng.gen_range(0..c as u32)).collect()).collect(),
        years: None,
    }
}

/// Random integer ratings in `1..=5` with the given density.
pub fn random_graph(seed: u64, n_users: usize, n_items: usize, density: f64, user_cards: &[usize], item_cards: &[usize]) -> RatingGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = entities("u", n_users, user_cards, &mut rng);
    let items = entities("i", n_items, item_cards, &mut rng);
    let mut ratings = Vec::new();
    for u in 0..n_users as u32 {
        for i in 0..n_items as u32 {
            if rng.gen_bool(density) {
                ratings.push(Rating {
                    user: u,
                    item: i,
                    value: rng.gen_range(1..=5) as f32,
                });
            }
        }
    }
    RatingGraph::new(5, users, items, ratings).unwrap()
}

/// Graph from explicit `(user, item, rating)` triples with identity attributes.
pub fn graph_of(n_users: usize, n_items: usize, triples: &[(u32, u32, f32)]) -> RatingGraph {
    let ratings = triples
        .iter()
        .map(|&(user, item, value)| Rating { user, item, value })
        .collect();
    RatingGraph::new(5, EntitySet::id_only(ids("u", n_users)), EntitySet::id_only(ids("i", n_items)), ratings).unwrap()
}

/// Random categorical input for a context of `n × m` cells; about a third of
/// the cells are masked targets.
pub fn random_input(rng: &mut ChaCha8Rng, s: &hire_core::embedding::Schema, n: usize, m: usize) -> hire_core::embedding::ContextInput {
    hire_core::embedding::ContextInput {
        n,
        m,
        user_attrs: (0..n).map(|_| s.user_cards.iter().map(|&c| rng.gen_range(0..c as u32)).collect()).collect(),
        item_attrs: (0..m).map(|_| s.item_cards.iter().map(|&c| rng.gen_range(0..c as u32)).collect()).collect(),
        rating_rows: (0..n * m)
            .map(|_| match rng.gen_range(0..3) {
                0 => None,
                _ => Some(rng.gen_range(0..=s.r_max as usize)),
            })
            .collect(),
    }
}

/// The input with users reordered by `pu` and items by `pi`
/// (new position `k` holds old `pu[k]`).
pub fn permute_input(x: &hire_core::embedding::ContextInput, pu: &[usize], pi: &[usize]) -> hire_core::embedding::ContextInput {
    let m = x.m;
    hire_core::embedding::ContextInput {
        n: x.n,
        m,
        user_attrs: pu.iter().map(|&k| x.user_attrs[k].clone()).collect(),
        item_attrs: pi.iter().map(|&j| x.item_attrs[j].clone()).collect(),
        rating_rows: (0..x.n * m).map(|c| x.rating_rows[pu[c / m] * m + pi[c % m]]).collect(),
    }
}

/// The 8 × 8 rank-1 table `a_u·b_i` with identity attributes, and one full
/// context over it with a fixed 10% support mask.
pub fn rank_one_problem(mask_seed: u64) -> hire_core::train::FixedContexts {
    let a: Vec<f32> = (0..8).map(|k| 1.0 + 0.17 * k as f32).collect();
    let b: Vec<f32> = (0..8).map(|k| 1.0 + 0.15 * ((k * 5) % 8) as f32).collect();
    let triples: Vec<(u32, u32, f32)> = (0..8u32)
        .flat_map(|u| (0..8u32).map(move |i| (u, i)))
        .map(|(u, i)| (u, i, a[u as usize] * b[i as usize]))
        .collect();
    let g = graph_of(8, 8, &triples);
    let ctx = hire_core::sampler::PredictionContext::from_entities(&g, (0..8).collect(), (0..8).collect());
    let ctx = hire_core::sampler::assign_masks(ctx, 0.1, &mut ChaCha8Rng::seed_from_u64(mask_seed));
    hire_core::train::FixedContexts {
        graph: g,
        contexts: vec![ctx],
        redraw_support: None,
    }
}
