//! MovieLens `::`-delimited files.
//!
//! Reads `users.dat`, `movies.dat` and `ratings.dat` from one directory.
//! An optional `movies_extra.dat` with lines `MovieID::Rate::Director::Actors`
//! (actors `|`-separated) fills the rate, director and actor slots; without
//! it those slots hold the single category `unknown`.

use std::collections::HashMap;
use std::path::Path;

use super::{EntitySet, Parsed, Rating, RatingGraph, Vocab};
use crate::{Error, Result};

const R_MAX: u32 = 5;
const USER_SLOTS: [&str; 4] = ["age", "occupation", "gender", "zip"];
const ITEM_SLOTS: [&str; 4] = ["rate", "genre", "director", "actor"];
const UNKNOWN: &str = "unknown";

fn read_lines(path: &Path) -> Result<Vec<String>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    // The original files are Latin-1; titles are not used, so lossy decoding is harmless.
    Ok(String::from_utf8_lossy(&bytes)
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

struct Malformed<'a> {
    path: &'a Path,
    count: usize,
}

impl Malformed<'_> {
    fn report(&mut self, line: usize, msg: &str) {
        self.count += 1;
        log::warn!("{}:{}: {msg}; line skipped", self.path.display(), line);
    }
}

fn first_of(list: &str) -> String {
    list.split('|').map(str::trim).find(|s| !s.is_empty()).unwrap_or(UNKNOWN).to_string()
}

fn zip_prefix(zip: &str) -> String {
    match zip.chars().next() {
        Some(c) if c.is_ascii_digit() => c.to_string(),
        _ => "other".to_string(),
    }
}

fn title_year(title: &str) -> Option<i32> {
    let t = title.trim_end();
    let inner = t.strip_suffix(')')?;
    let open = inner.rfind('(')?;
    inner[open + 1..].parse().ok()
}

/// Parses a MovieLens-1M style directory.
///
/// Malformed lines (wrong field count, bad numbers, ratings outside 1–5,
/// ratings of unknown entities) are skipped and counted. A repeated
/// `(user, movie)` pair keeps its last rating. Users and movies without any
/// rating are dropped.
pub fn parse_movielens(dir: &Path) -> Result<Parsed> {
    let users_path = dir.join("users.dat");
    let movies_path = dir.join("movies.dat");
    let ratings_path = dir.join("ratings.dat");
    let extra_path = dir.join("movies_extra.dat");
    let mut malformed = 0;

    // users
    let lines = read_lines(&users_path)?;
    let mut bad = Malformed {
        path: &users_path,
        count: 0,
    };
    let mut user_ids = Vec::new();
    let mut user_raw = Vec::new();
    let mut user_index = HashMap::new();
    let mut vocab = Vocab::new(USER_SLOTS.len());
    for (ln, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split("::").collect();
        if f.len() != 5 {
            bad.report(ln + 1, "expected 5 fields");
            continue;
        }
        let id = f[0].trim();
        if id.parse::<u64>().is_err() || user_index.contains_key(id) {
            bad.report(ln + 1, "bad or repeated user id");
            continue;
        }
        let row = vec![f[2].trim().to_string(), f[3].trim().to_string(), f[1].trim().to_string(), zip_prefix(f[4].trim())];
        for (s, v) in row.iter().enumerate() {
            vocab.observe(s, v);
        }
        user_index.insert(id.to_string(), user_ids.len() as u32);
        user_ids.push(id.to_string());
        user_raw.push(row);
    }
    malformed += bad.count;
    let (slots, attrs) = vocab.encode(&USER_SLOTS, &user_raw);
    let users = EntitySet {
        raw_ids: user_ids,
        slots,
        attrs,
        years: None,
    };

    // optional movie extras
    let mut extra: HashMap<String, [String; 3]> = HashMap::new();
    if extra_path.is_file() {
        let mut bad = Malformed {
            path: &extra_path,
            count: 0,
        };
        for (ln, line) in read_lines(&extra_path)?.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split("::").collect();
            if f.len() != 4 {
                bad.report(ln + 1, "expected 4 fields");
                continue;
            }
            let nonempty = |s: &str| {
                let s = s.trim();
                if s.is_empty() { UNKNOWN.to_string() } else { s.to_string() }
            };
            extra.insert(f[0].trim().to_string(), [nonempty(f[1]), first_of(f[2]), first_of(f[3])]);
        }
        malformed += bad.count;
    }

    // movies
    let mut bad = Malformed {
        path: &movies_path,
        count: 0,
    };
    let mut item_ids = Vec::new();
    let mut item_raw = Vec::new();
    let mut years = Vec::new();
    let mut item_index = HashMap::new();
    let mut vocab = Vocab::new(ITEM_SLOTS.len());
    for (ln, line) in read_lines(&movies_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split("::").collect();
        if f.len() != 3 {
            bad.report(ln + 1, "expected 3 fields");
            continue;
        }
        let id = f[0].trim();
        if id.parse::<u64>().is_err() || item_index.contains_key(id) {
            bad.report(ln + 1, "bad or repeated movie id");
            continue;
        }
        let [rate, director, actor] = extra
            .get(id)
            .cloned()
            .unwrap_or_else(|| [UNKNOWN.to_string(), UNKNOWN.to_string(), UNKNOWN.to_string()]);
        let row = vec![rate, first_of(f[2]), director, actor];
        for (s, v) in row.iter().enumerate() {
            vocab.observe(s, v);
        }
        item_index.insert(id.to_string(), item_ids.len() as u32);
        item_ids.push(id.to_string());
        item_raw.push(row);
        years.push(title_year(f[1]).unwrap_or(0));
    }
    malformed += bad.count;
    let (slots, attrs) = vocab.encode(&ITEM_SLOTS, &item_raw);
    let items = EntitySet {
        raw_ids: item_ids,
        slots,
        attrs,
        years: Some(years),
    };

    // ratings
    let mut bad = Malformed {
        path: &ratings_path,
        count: 0,
    };
    let mut cells: HashMap<(u32, u32), f32> = HashMap::new();
    let mut order = Vec::new();
    let mut duplicates = 0;
    for (ln, line) in read_lines(&ratings_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split("::").collect();
        if f.len() != 4 {
            bad.report(ln + 1, "expected 4 fields");
            continue;
        }
        let (Some(&u), Some(&i)) = (user_index.get(f[0].trim()), item_index.get(f[1].trim())) else {
            bad.report(ln + 1, "unknown user or movie");
            continue;
        };
        let value = match f[2].trim().parse::<u32>() {
            Ok(v) if (1..=R_MAX).contains(&v) => v as f32,
            _ => {
                bad.report(ln + 1, "rating outside 1-5");
                continue;
            }
        };
        if cells.insert((u, i), value).is_some() {
            duplicates += 1;
        } else {
            order.push((u, i));
        }
    }
    malformed += bad.count;
    let ratings = order
        .into_iter()
        .map(|(user, item)| Rating {
            user,
            item,
            value: cells[&(user, item)],
        })
        .collect();
    let graph = RatingGraph::new(R_MAX, users, items, ratings)?.drop_unrated();
    Ok(Parsed {
        graph,
        malformed,
        duplicates,
    })
}
