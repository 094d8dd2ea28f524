//! Bipartite rating graph, dataset parsers and cold-start splits.

mod cache;
mod csv_ingest;
mod movielens;
mod split;
mod synthetic;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

pub use cache::{load_graph, save_graph};
pub use csv_ingest::{parse_csv, CsvOptions};
pub use movielens::parse_movielens;
pub use synthetic::{write_movielens_like, SyntheticSpec};
pub use split::{make_split, observable_count, ItemSplit, Part, Role, ScenarioSplit, SplitOptions, SplitRatios};

use crate::{Error, Result};

/// One categorical attribute slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    /// Category labels; a category index points into this list.
    pub labels: Vec<String>,
}

impl Slot {
    pub fn new(name: impl Into<String>, labels: Vec<String>) -> Self {
        Slot {
            name: name.into(),
            labels,
        }
    }

    pub fn card(&self) -> usize {
        self.labels.len()
    }
}

/// Users or items with their categorical attributes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntitySet {
    pub raw_ids: Vec<String>,
    pub slots: Vec<Slot>,
    /// `attrs[e][s]` is the category of entity `e` in slot `s`.
    pub attrs: Vec<Vec<u32>>,
    /// Release year per entity, when the source provides one.
    pub years: Option<Vec<i32>>,
}

impl EntitySet {
    pub fn len(&self) -> usize {
        self.raw_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_ids.is_empty()
    }

    pub fn cards(&self) -> Vec<usize> {
        self.slots.iter().map(Slot::card).collect()
    }

    /// Entities whose only attribute is their own identity.
    pub fn id_only(raw_ids: Vec<String>) -> Self {
        let attrs = (0..raw_ids.len() as u32).map(|i| vec![i]).collect();
        EntitySet {
            slots: vec![Slot::new("id", raw_ids.clone())],
            raw_ids,
            attrs,
            years: None,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.attrs.len() != self.raw_ids.len() {
            return Err(Error::InvalidGraph(format!("{what}: attribute rows do not match entity count")));
        }
        if let Some(y) = &self.years {
            if y.len() != self.raw_ids.len() {
                return Err(Error::InvalidGraph(format!("{what}: year count does not match entity count")));
            }
        }
        for (e, row) in self.attrs.iter().enumerate() {
            if row.len() != self.slots.len() {
                return Err(Error::InvalidGraph(format!(
                    "{what} {}: {} attributes for {} slots",
                    self.raw_ids[e],
                    row.len(),
                    self.slots.len()
                )));
            }
            for (s, &c) in row.iter().enumerate() {
                if c as usize >= self.slots[s].card() {
                    return Err(Error::CategoryOutOfRange {
                        slot: format!("{what}.{}", self.slots[s].name),
                        index: c as usize,
                        card: self.slots[s].card(),
                    });
                }
            }
        }
        Ok(())
    }

    fn select(&self, keep: &[u32]) -> EntitySet {
        EntitySet {
            raw_ids: keep.iter().map(|&e| self.raw_ids[e as usize].clone()).collect(),
            slots: self.slots.clone(),
            attrs: keep.iter().map(|&e| self.attrs[e as usize].clone()).collect(),
            years: self.years.as_ref().map(|y| keep.iter().map(|&e| y[e as usize]).collect()),
        }
    }
}

/// Parser output with counters for skipped and overridden lines.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub graph: RatingGraph,
    pub malformed: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub value: f32,
}

/// Users, items and the observed ratings between them.
///
/// Ratings are kept sorted by `(user, item)` with no duplicates, so each
/// user's ratings form one contiguous run.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingGraph {
    r_max: u32,
    users: EntitySet,
    items: EntitySet,
    ratings: Vec<Rating>,
    user_offsets: Vec<usize>,
    item_users: Vec<Vec<u32>>,
    item_rating_idx: Vec<Vec<u32>>,
}

impl RatingGraph {
    /// Validates and indexes a graph. Ratings may arrive in any order but
    /// must not repeat a `(user, item)` pair.
    pub fn new(r_max: u32, users: EntitySet, items: EntitySet, mut ratings: Vec<Rating>) -> Result<Self> {
        if r_max == 0 {
            return Err(Error::InvalidGraph("r_max must be positive".into()));
        }
        users.validate("user")?;
        items.validate("item")?;
        for r in &ratings {
            if r.user as usize >= users.len() || r.item as usize >= items.len() {
                return Err(Error::InvalidGraph(format!(
                    "rating ({}, {}) references a missing entity",
                    r.user, r.item
                )));
            }
            if !(r.value >= 1.0 && r.value <= r_max as f32) {
                return Err(Error::InvalidGraph(format!(
                    "rating {} outside [1, {r_max}]",
                    r.value
                )));
            }
        }
        ratings.sort_by_key(|r| (r.user, r.item));
        if let Some(w) = ratings.windows(2).find(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item)) {
            return Err(Error::InvalidGraph(format!(
                "duplicate rating ({}, {})",
                w[0].user, w[0].item
            )));
        }
        let mut user_offsets = vec![0usize; users.len() + 1];
        for r in &ratings {
            user_offsets[r.user as usize + 1] += 1;
        }
        for u in 0..users.len() {
            user_offsets[u + 1] += user_offsets[u];
        }
        let mut item_users = vec![Vec::new(); items.len()];
        let mut item_rating_idx = vec![Vec::new(); items.len()];
        for (idx, r) in ratings.iter().enumerate() {
            item_users[r.item as usize].push(r.user);
            item_rating_idx[r.item as usize].push(idx as u32);
        }
        Ok(RatingGraph {
            r_max,
            users,
            items,
            ratings,
            user_offsets,
            item_users,
            item_rating_idx,
        })
    }

    pub fn r_max(&self) -> u32 {
        self.r_max
    }

    pub fn users(&self) -> &EntitySet {
        &self.users
    }

    pub fn items(&self) -> &EntitySet {
        &self.items
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn h_u(&self) -> usize {
        self.users.slots.len()
    }

    pub fn h_i(&self) -> usize {
        self.items.slots.len()
    }

    /// Ratings of user `u`, sorted by item.
    pub fn user_ratings(&self, u: u32) -> &[Rating] {
        let u = u as usize;
        &self.ratings[self.user_offsets[u]..self.user_offsets[u + 1]]
    }

    /// Indices into [`ratings`](Self::ratings) of user `u`'s ratings.
    pub fn user_rating_range(&self, u: u32) -> std::ops::Range<usize> {
        self.user_offsets[u as usize]..self.user_offsets[u as usize + 1]
    }

    pub fn user_items(&self, u: u32) -> impl Iterator<Item = u32> + '_ {
        self.user_ratings(u).iter().map(|r| r.item)
    }

    /// Users who rated item `i`, sorted.
    pub fn item_users(&self, i: u32) -> &[u32] {
        &self.item_users[i as usize]
    }

    /// Indices into [`ratings`](Self::ratings) of item `i`'s ratings.
    pub fn item_rating_indices(&self, i: u32) -> &[u32] {
        &self.item_rating_idx[i as usize]
    }

    pub fn user_degree(&self, u: u32) -> usize {
        self.user_offsets[u as usize + 1] - self.user_offsets[u as usize]
    }

    pub fn item_degree(&self, i: u32) -> usize {
        self.item_users[i as usize].len()
    }

    pub fn rating_index(&self, u: u32, i: u32) -> Option<usize> {
        let range = self.user_rating_range(u);
        let start = range.start;
        self.ratings[range].binary_search_by_key(&i, |r| r.item).ok().map(|k| start + k)
    }

    pub fn rating(&self, u: u32, i: u32) -> Option<f32> {
        self.rating_index(u, i).map(|k| self.ratings[k].value)
    }

    /// Same entities, keeping only the ratings for which `keep` holds.
    pub fn filter_ratings(&self, mut keep: impl FnMut(usize, &Rating) -> bool) -> RatingGraph {
        let ratings = self
            .ratings
            .iter()
            .enumerate()
            .filter(|(k, r)| keep(*k, r))
            .map(|(_, r)| *r)
            .collect();
        RatingGraph::new(self.r_max, self.users.clone(), self.items.clone(), ratings)
            .expect("subset of a valid graph is valid")
    }

    /// Induced subgraph on the given users and items, re-indexed in the
    /// order given.
    pub fn subgraph(&self, users: &[u32], items: &[u32]) -> RatingGraph {
        let mut umap = vec![u32::MAX; self.n_users()];
        for (k, &u) in users.iter().enumerate() {
            umap[u as usize] = k as u32;
        }
        let mut imap = vec![u32::MAX; self.n_items()];
        for (k, &i) in items.iter().enumerate() {
            imap[i as usize] = k as u32;
        }
        let ratings = self
            .ratings
            .iter()
            .filter(|r| umap[r.user as usize] != u32::MAX && imap[r.item as usize] != u32::MAX)
            .map(|r| Rating {
                user: umap[r.user as usize],
                item: imap[r.item as usize],
                value: r.value,
            })
            .collect();
        RatingGraph::new(self.r_max, self.users.select(users), self.items.select(items), ratings)
            .expect("induced subgraph of a valid graph is valid")
    }

    /// Induced subgraph on `users` random users and `items` random items
    /// (all of a side when the count exceeds it), entities without ratings
    /// removed.
    pub fn random_subset(&self, users: usize, items: usize, seed: u64) -> RatingGraph {
        use rand::seq::index::sample;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pick = |total: usize, k: usize| {
            let mut v: Vec<u32> = sample(&mut rng, total, k.min(total)).into_iter().map(|x| x as u32).collect();
            v.sort_unstable();
            v
        };
        let (u, i) = (pick(self.n_users(), users), pick(self.n_items(), items));
        self.subgraph(&u, &i).drop_unrated()
    }

    /// Drops users and items without any rating.
    pub fn drop_unrated(&self) -> RatingGraph {
        let users: Vec<u32> = (0..self.n_users() as u32).filter(|&u| self.user_degree(u) > 0).collect();
        let items: Vec<u32> = (0..self.n_items() as u32).filter(|&i| self.item_degree(i) > 0).collect();
        self.subgraph(&users, &items)
    }
}

/// Builds per-slot vocabularies with labels in sorted order.
pub(crate) struct Vocab {
    values: Vec<BTreeSet<String>>,
}

impl Vocab {
    pub(crate) fn new(slots: usize) -> Self {
        Vocab {
            values: vec![BTreeSet::new(); slots],
        }
    }

    pub(crate) fn observe(&mut self, slot: usize, value: &str) {
        if !self.values[slot].contains(value) {
            self.values[slot].insert(value.to_string());
        }
    }

    /// Encodes raw per-entity values against the collected vocabularies.
    pub(crate) fn encode(self, names: &[&str], raw: &[Vec<String>]) -> (Vec<Slot>, Vec<Vec<u32>>) {
        let labels: Vec<Vec<String>> = self.values.into_iter().map(|s| s.into_iter().collect()).collect();
        let attrs = raw
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(s, v)| labels[s].binary_search(v).expect("value observed") as u32)
                    .collect()
            })
            .collect();
        let slots = names.iter().zip(labels).map(|(n, l)| Slot::new(*n, l)).collect();
        (slots, attrs)
    }
}

/// Cold-start scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Cold users, warm items.
    UserCold,
    /// Warm users, cold items.
    ItemCold,
    /// Cold users rating cold items.
    UserItemCold,
    /// Held-out ratings of users that also appear in training.
    Warm,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::UserCold,
        Scenario::ItemCold,
        Scenario::UserItemCold,
        Scenario::Warm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::UserCold => "uc",
            Scenario::ItemCold => "ic",
            Scenario::UserItemCold => "uic",
            Scenario::Warm => "warm",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}` (expected uc, ic, uic or warm)")))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Three users, three items, ids as the only attribute.
    pub(crate) fn tiny() -> RatingGraph {
        let ids = |p: &str| (0..3).map(|k| format!("{p}{k}")).collect();
        let r = |user, item, value| Rating { user, item, value };
        RatingGraph::new(
            5,
            EntitySet::id_only(ids("u")),
            EntitySet::id_only(ids("i")),
            vec![r(2, 1, 4.0), r(0, 0, 5.0), r(0, 2, 1.0), r(1, 2, 3.0)],
        )
        .unwrap()
    }

    #[test]
    fn adjacency_is_rating_support() {
        let g = tiny();
        assert_eq!(g.user_items(0).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(g.item_users(2), &[0, 1]);
        assert_eq!(g.rating(2, 1), Some(4.0));
        assert_eq!(g.rating(1, 1), None);
        let total: usize = (0..3).map(|i| g.item_degree(i)).sum();
        assert_eq!(total, g.ratings().len());
        for (k, r) in g.ratings().iter().enumerate() {
            assert_eq!(g.rating_index(r.user, r.item), Some(k));
            assert!(g.item_rating_indices(r.item).contains(&(k as u32)));
        }
    }

    #[test]
    fn invalid_graphs_rejected() {
        let r = |user, item, value| Rating { user, item, value };
        let e = || EntitySet::id_only(vec!["a".into()]);
        assert!(RatingGraph::new(5, e(), e(), vec![r(0, 1, 3.0)]).is_err());
        assert!(RatingGraph::new(5, e(), e(), vec![r(0, 0, 6.0)]).is_err());
        assert!(RatingGraph::new(5, e(), e(), vec![r(0, 0, 3.0), r(0, 0, 2.0)]).is_err());
        let mut bad = e();
        bad.attrs[0][0] = 1;
        assert!(matches!(
            RatingGraph::new(5, bad, e(), vec![]),
            Err(Error::CategoryOutOfRange { .. })
        ));
    }

    #[test]
    fn drop_unrated_reindexes() {
        let g = tiny().filter_ratings(|_, r| r.user != 1);
        let d = g.drop_unrated();
        assert_eq!(d.n_users(), 2);
        assert_eq!(d.users().raw_ids, vec!["u0", "u2"]);
        assert_eq!(d.rating(1, 1), Some(4.0));
        assert_eq!(d.ratings().len(), 3);
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.as_str().parse::<Scenario>().unwrap(), s);
        }
        assert!("both".parse::<Scenario>().is_err());
    }
}
