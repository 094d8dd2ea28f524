//! Synthetic rating data in the MovieLens file layout.
//!
//! Users carry gender, age bracket, occupation and zip code; movies carry a
//! genre list, release year, rate, director and actors. A rating is
//! `3.3 + quality + director effect + taste(user profile, genre) +
//! rate preference(age) + noise`, rounded and clamped to 1–5. Taste is the
//! sum of age, gender and occupation effects per genre, so users with the
//! same profile agree. Which movies a user rates is drawn in proportion to a
//! popularity weight that grows with quality and an independent exposure
//! term.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::{Error, Result};

const GENRES: [&str; 18] = [
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];
const AGES: [u32; 7] = [1, 18, 25, 35, 45, 50, 56];
const RATES: [&str; 5] = ["G", "PG", "PG-13", "R", "NC-17"];
const OCCUPATIONS: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub users: usize,
    pub movies: usize,
    /// Median ratings per user; the count is log-normal around it.
    pub median_ratings: f64,
    pub directors: usize,
    pub actors: usize,
    /// Standard deviation of the rating noise.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 1500,
            movies: 1200,
            median_ratings: 120.0,
            directors: 150,
            actors: 300,
            noise: 0.5,
        }
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("positive standard deviation")
}

fn effects(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Vec<Vec<f64>> {
    let d = normal(sd);
    (0..rows).map(|_| (0..cols).map(|_| d.sample(rng)).collect()).collect()
}

/// Writes `users.dat`, `movies.dat`, `movies_extra.dat` and `ratings.dat`
/// into `dir`.
pub fn write_movielens_like(dir: &Path, spec: &SyntheticSpec, seed: u64) -> Result<()> {
    if spec.users == 0 || spec.movies == 0 || spec.directors == 0 || spec.actors == 0 {
        return Err(Error::Config("synthetic data needs users, movies, directors and actors".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = GENRES.len();
    let age_taste = effects(&mut rng, AGES.len(), g, 0.6);
    let gender_taste = effects(&mut rng, 2, g, 0.5);
    let occ_taste = effects(&mut rng, OCCUPATIONS, g, 0.4);
    let age_rate = effects(&mut rng, AGES.len(), RATES.len(), 0.4);
    let director_effect: Vec<f64> = (0..spec.directors).map(|_| normal(0.3).sample(&mut rng)).collect();

    let mut users_dat = String::new();
    let mut profiles = Vec::with_capacity(spec.users);
    for u in 0..spec.users {
        let (gender, age, occ) = (rng.gen_range(0..2), rng.gen_range(0..AGES.len()), rng.gen_range(0..OCCUPATIONS));
        let zip = rng.gen_range(10000..99999);
        let _ = writeln!(users_dat, "{}::{}::{}::{}::{}", u + 1, ["F", "M"][gender], AGES[age], occ, zip);
        profiles.push((gender, age, occ));
    }

    let mut movies_dat = String::new();
    let mut extra_dat = String::new();
    let mut movies = Vec::with_capacity(spec.movies);
    let quality = normal(0.6);
    for i in 0..spec.movies {
        let genre = rng.gen_range(0..g);
        let second = rng.gen_range(0..g);
        let rate = rng.gen_range(0..RATES.len());
        let director = rng.gen_range(0..spec.directors);
        let (a1, a2) = (rng.gen_range(0..spec.actors), rng.gen_range(0..spec.actors));
        let year = rng.gen_range(1930..2001);
        let q = quality.sample(&mut rng);
        let _ = writeln!(movies_dat, "{}::Movie {} ({year})::{}|{}", i + 1, i + 1, GENRES[genre], GENRES[second]);
        let _ = writeln!(extra_dat, "{}::{}::Director {director}::Actor {a1}|Actor {a2}", i + 1, RATES[rate]);
        movies.push((genre, rate, director, q));
    }

    let exposure = normal(0.8);
    let weights: Vec<f64> = movies.iter().map(|m| (0.8 * m.3 + exposure.sample(&mut rng)).exp()).collect();
    let index: Vec<usize> = (0..spec.movies).collect();
    let activity = LogNormal::new(spec.median_ratings.max(1.0).ln(), 0.6).map_err(|e| Error::Config(e.to_string()))?;
    let noise = normal(spec.noise.max(1e-9));
    let mut ratings_dat = String::new();
    for (u, &(gender, age, occ)) in profiles.iter().enumerate() {
        let count = (activity.sample(&mut rng).round() as usize).clamp(20, spec.movies);
        let chosen = index
            .choose_multiple_weighted(&mut rng, count, |&i| weights[i])
            .map_err(|e| Error::Config(e.to_string()))?
            .copied()
            .collect::<Vec<_>>();
        for i in chosen {
            let (genre, rate, director, q) = movies[i];
            let taste = age_taste[age][genre] + gender_taste[gender][genre] + occ_taste[occ][genre];
            let score = 3.3 + q + director_effect[director] + taste + age_rate[age][rate] + noise.sample(&mut rng);
            let r = score.round().clamp(1.0, 5.0) as u32;
            let _ = writeln!(ratings_dat, "{}::{}::{r}::{}", u + 1, i + 1, 978_300_000 + u * 1000 + i);
        }
    }

    for (name, body) in [
        ("users.dat", users_dat),
        ("movies.dat", movies_dat),
        ("movies_extra.dat", extra_dat),
        ("ratings.dat", ratings_dat),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn files_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            users: 30,
            movies: 40,
            median_ratings: 25.0,
            ..SyntheticSpec::default()
        };
        write_movielens_like(dir.path(), &spec, 3).unwrap();
        let p = crate::data::parse_movielens(dir.path()).unwrap();
        assert_eq!(p.malformed, 0);
        assert_eq!(p.graph.n_users(), 30);
        assert!(p.graph.ratings().len() >= 30 * 20);
        assert_eq!(p.graph.h_u(), 4);
        assert_eq!(p.graph.h_i(), 4);
    }

    #[test]
    fn deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = SyntheticSpec {
            users: 10,
            movies: 25,
            median_ratings: 20.0,
            ..SyntheticSpec::default()
        };
        write_movielens_like(a.path(), &spec, 9).unwrap();
        write_movielens_like(b.path(), &spec, 9).unwrap();
        for f in ["users.dat", "movies.dat", "ratings.dat", "movies_extra.dat"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
    }
}
