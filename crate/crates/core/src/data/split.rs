//! Cold-start train/validation/test splits.
//!
//! Entities on the cold side are partitioned by ratio. Each test entity
//! reveals a few of its ratings (10%, at most 3) as observable context; the
//! rest are held out for evaluation. Ratings of validation entities are kept
//! out of training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{RatingGraph, Scenario};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ItemSplit {
    #[default]
    Random,
    /// Items released in or after `cutoff` are cold.
    Year { cutoff: i32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOptions {
    pub ratios: SplitRatios,
    pub item_split: ItemSplit,
    pub observable_fraction: f64,
    pub observable_cap: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            ratios: SplitRatios::default(),
            item_split: ItemSplit::Random,
            observable_fraction: 0.1,
            observable_cap: 3,
        }
    }
}

/// Which partition an entity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Valid,
    Test,
}

/// What a rating may be used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Valid,
    /// Revealed to the model for a test entity.
    Observable,
    /// Evaluation target.
    Held,
    /// Crosses partitions in a way no stage uses.
    Excluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSplit {
    pub scenario: Scenario,
    pub user_part: Vec<Part>,
    pub item_part: Vec<Part>,
    /// Aligned with [`RatingGraph::ratings`].
    pub roles: Vec<Role>,
}

fn members(parts: &[Part], want: Part) -> Vec<u32> {
    (0..parts.len() as u32).filter(|&k| parts[k as usize] == want).collect()
}

impl ScenarioSplit {
    pub fn train_users(&self) -> Vec<u32> {
        if self.scenario == Scenario::Warm {
            // Warm test users keep their place in training.
            return (0..self.user_part.len() as u32)
                .filter(|&u| self.user_part[u as usize] != Part::Valid)
                .collect();
        }
        members(&self.user_part, Part::Train)
    }

    pub fn valid_users(&self) -> Vec<u32> {
        members(&self.user_part, Part::Valid)
    }

    pub fn test_users(&self) -> Vec<u32> {
        members(&self.user_part, Part::Test)
    }

    pub fn train_items(&self) -> Vec<u32> {
        members(&self.item_part, Part::Train)
    }

    pub fn valid_items(&self) -> Vec<u32> {
        members(&self.item_part, Part::Valid)
    }

    pub fn test_items(&self) -> Vec<u32> {
        members(&self.item_part, Part::Test)
    }

    pub fn role_of(&self, g: &RatingGraph, u: u32, i: u32) -> Option<Role> {
        g.rating_index(u, i).map(|k| self.roles[k])
    }

    /// Ratings the trainer may see.
    pub fn training_graph(&self, g: &RatingGraph) -> RatingGraph {
        let warm = self.scenario == Scenario::Warm;
        g.filter_ratings(|k, _| match self.roles[k] {
            Role::Train => true,
            Role::Observable => warm,
            _ => false,
        })
    }

    /// Ratings available when evaluating: training ratings, observable
    /// context and held-out targets.
    pub fn eval_graph(&self, g: &RatingGraph) -> RatingGraph {
        g.filter_ratings(|k, _| matches!(self.roles[k], Role::Train | Role::Observable | Role::Held))
    }

    /// Ratings visible at test time (everything except held-out targets).
    pub fn visible_graph(&self, g: &RatingGraph) -> RatingGraph {
        g.filter_ratings(|k, _| matches!(self.roles[k], Role::Train | Role::Observable))
    }

    pub fn count(&self, role: Role) -> usize {
        self.roles.iter().filter(|r| **r == role).count()
    }
}

fn check_ratios(r: &SplitRatios) -> Result<()> {
    let parts = [r.train, r.valid, r.test];
    if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || parts.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must lie in [0, 1] and sum to at most 1, got {parts:?}"
        )));
    }
    Ok(())
}

/// Shuffles `0..n` and assigns parts by ratio. When the ratios sum to one the
/// test part takes every entity left after rounding.
fn partition(n: usize, r: &SplitRatios, rng: &mut ChaCha8Rng) -> Vec<Part> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = ((r.train * n as f64).round() as usize).min(n);
    let n_valid = ((r.valid * n as f64).round() as usize).min(n - n_train);
    let rest = n - n_train - n_valid;
    let n_test = if (r.train + r.valid + r.test - 1.0).abs() < 1e-9 {
        rest
    } else {
        ((r.test * n as f64).round() as usize).min(rest)
    };
    // Entities outside all three ratios are treated as validation-only.
    let mut parts = vec![Part::Valid; n];
    for (k, &e) in order.iter().enumerate() {
        parts[e] = if k < n_train {
            Part::Train
        } else if k < n_train + n_valid {
            Part::Valid
        } else if k < n_train + n_valid + n_test {
            Part::Test
        } else {
            Part::Valid
        };
    }
    parts
}

fn year_partition(g: &RatingGraph, cutoff: i32, r: &SplitRatios, rng: &mut ChaCha8Rng) -> Result<Vec<Part>> {
    let years = g
        .items()
        .years
        .as_ref()
        .ok_or_else(|| Error::Config("year item split needs item release years".into()))?;
    let mut parts = vec![Part::Test; years.len()];
    let old: Vec<usize> = (0..years.len()).filter(|&i| years[i] < cutoff).collect();
    let warm_share = r.train + r.valid;
    let inner = if warm_share > 0.0 {
        SplitRatios {
            train: r.train / warm_share,
            valid: r.valid / warm_share,
            test: 0.0,
        }
    } else {
        SplitRatios {
            train: 1.0,
            valid: 0.0,
            test: 0.0,
        }
    };
    let sub = partition(old.len(), &inner, rng);
    for (k, &i) in old.iter().enumerate() {
        parts[i] = if sub[k] == Part::Train { Part::Train } else { Part::Valid };
    }
    Ok(parts)
}

/// Number of ratings a test entity with `degree` candidate ratings reveals.
pub fn observable_count(degree: usize, fraction: f64, cap: usize) -> usize {
    ((fraction * degree as f64).round() as usize).min(cap).min(degree)
}

pub fn make_split(g: &RatingGraph, scenario: Scenario, opts: &SplitOptions, seed: u64) -> Result<ScenarioSplit> {
    check_ratios(&opts.ratios)?;
    if !(0.0..=1.0).contains(&opts.observable_fraction) {
        return Err(Error::Config("observable fraction must lie in [0, 1]".into()));
    }
    if g.n_users() == 0 || g.n_items() == 0 {
        return Err(Error::EmptyGraph("users or items"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let incompatible = |reason: &str| Error::IncompatibleScenario {
        scenario,
        reason: reason.to_string(),
    };
    let all_train = |n| vec![Part::Train; n];
    let cold_users = matches!(scenario, Scenario::UserCold | Scenario::UserItemCold | Scenario::Warm);
    let cold_items = matches!(scenario, Scenario::ItemCold | Scenario::UserItemCold);
    let user_part = if cold_users {
        partition(g.n_users(), &opts.ratios, &mut rng)
    } else {
        all_train(g.n_users())
    };
    let item_part = if cold_items {
        match opts.item_split {
            ItemSplit::Random => partition(g.n_items(), &opts.ratios, &mut rng),
            ItemSplit::Year { cutoff } => year_partition(g, cutoff, &opts.ratios, &mut rng)?,
        }
    } else {
        all_train(g.n_items())
    };
    if cold_users && !user_part.contains(&Part::Test) {
        return Err(incompatible("no test users"));
    }
    if cold_items && !item_part.contains(&Part::Test) {
        return Err(incompatible("no test items"));
    }

    // Base roles, then the cold candidates of each test entity.
    let mut roles = Vec::with_capacity(g.ratings().len());
    for r in g.ratings() {
        let up = user_part[r.user as usize];
        let ip = item_part[r.item as usize];
        let role = match scenario {
            Scenario::UserCold | Scenario::Warm => match up {
                Part::Train => Role::Train,
                Part::Valid => Role::Valid,
                Part::Test => Role::Held,
            },
            Scenario::ItemCold => match ip {
                Part::Train => Role::Train,
                Part::Valid => Role::Valid,
                Part::Test => Role::Held,
            },
            Scenario::UserItemCold => match (up, ip) {
                (Part::Train, Part::Train) => Role::Train,
                (Part::Test, Part::Test) => Role::Held,
                (Part::Valid, Part::Valid) | (Part::Valid, Part::Train) | (Part::Train, Part::Valid) => Role::Valid,
                _ => Role::Excluded,
            },
        };
        roles.push(role);
    }

    // Each test entity reveals a few of its held ratings.
    let owners: Vec<Vec<usize>> = if scenario == Scenario::ItemCold {
        (0..g.n_items() as u32)
            .filter(|&i| item_part[i as usize] == Part::Test)
            .map(|i| g.item_rating_indices(i).iter().map(|&k| k as usize).collect())
            .collect()
    } else {
        (0..g.n_users() as u32)
            .filter(|&u| user_part[u as usize] == Part::Test)
            .map(|u| g.user_rating_range(u).collect())
            .collect()
    };
    for owned in owners {
        let mut cands: Vec<usize> = owned.into_iter().filter(|&k| roles[k] == Role::Held).collect();
        let n_obs = observable_count(cands.len(), opts.observable_fraction, opts.observable_cap);
        cands.shuffle(&mut rng);
        for &k in &cands[..n_obs] {
            roles[k] = Role::Observable;
        }
    }

    if !roles.contains(&Role::Held) {
        return Err(incompatible(match scenario {
            Scenario::UserItemCold => "no ratings between test users and test items",
            Scenario::Warm => "no test user keeps a rating beyond its observable ones",
            _ => "test entities have no ratings to hold out",
        }));
    }
    Ok(ScenarioSplit {
        scenario,
        user_part,
        item_part,
        roles,
    })
}
