//! Generic rating CSV with a header row.
//!
//! Required columns are `user`, `item` and `rating`. Attribute columns are
//! named `user.<slot>` or `item.<slot>`. An entity keeps the attribute values
//! of its first row. A side without attribute columns gets a single `id`
//! slot holding the entity's own index.

use std::collections::HashMap;
use std::path::Path;

use super::{EntitySet, Parsed, Rating, RatingGraph, Vocab};
use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    /// Rating ceiling; inferred as the ceiling of the largest rating when unset.
    pub r_max: Option<u32>,
}

enum Column {
    User,
    Item,
    Rating,
    UserAttr(usize),
    ItemAttr(usize),
}

struct Side {
    ids: Vec<String>,
    index: HashMap<String, u32>,
    raw: Vec<Vec<String>>,
}

impl Side {
    fn new() -> Self {
        Side {
            ids: Vec::new(),
            index: HashMap::new(),
            raw: Vec::new(),
        }
    }

    fn intern(&mut self, id: &str, attrs: Vec<String>) -> u32 {
        if let Some(&k) = self.index.get(id) {
            return k;
        }
        let k = self.ids.len() as u32;
        self.index.insert(id.to_string(), k);
        self.ids.push(id.to_string());
        self.raw.push(attrs);
        k
    }

    fn finish(self, names: &[String]) -> EntitySet {
        if names.is_empty() {
            return EntitySet::id_only(self.ids);
        }
        let mut vocab = Vocab::new(names.len());
        for row in &self.raw {
            for (s, v) in row.iter().enumerate() {
                vocab.observe(s, v);
            }
        }
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let (slots, attrs) = vocab.encode(&names, &self.raw);
        EntitySet {
            raw_ids: self.ids,
            slots,
            attrs,
            years: None,
        }
    }
}

/// Parses a rating CSV. A repeated `(user, item)` pair keeps its last rating
/// and increments the duplicate counter.
pub fn parse_csv(path: &Path, opts: &CsvOptions) -> Result<Parsed> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e))?;
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e))?.clone();
    let mut columns = Vec::new();
    let (mut user_names, mut item_names) = (Vec::new(), Vec::new());
    for h in headers.iter() {
        let col = match h {
            "user" => Column::User,
            "item" => Column::Item,
            "rating" => Column::Rating,
            _ => {
                if let Some(name) = h.strip_prefix("user.").filter(|s| !s.is_empty()) {
                    user_names.push(name.to_string());
                    Column::UserAttr(user_names.len() - 1)
                } else if let Some(name) = h.strip_prefix("item.").filter(|s| !s.is_empty()) {
                    item_names.push(name.to_string());
                    Column::ItemAttr(item_names.len() - 1)
                } else {
                    return Err(Error::UnknownColumn(h.to_string()));
                }
            }
        };
        columns.push(col);
    }
    for need in ["user", "item", "rating"] {
        if !headers.iter().any(|h| h == need) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("missing `{need}` column"),
            });
        }
    }

    let (mut users, mut items) = (Side::new(), Side::new());
    let mut cells: HashMap<(u32, u32), f32> = HashMap::new();
    let mut order = Vec::new();
    let mut duplicates = 0;
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e))?;
        let (mut uid, mut iid, mut rating) = ("", "", "");
        let mut uattr = vec![String::new(); user_names.len()];
        let mut iattr = vec![String::new(); item_names.len()];
        for (col, field) in columns.iter().zip(rec.iter()) {
            match col {
                Column::User => uid = field,
                Column::Item => iid = field,
                Column::Rating => rating = field,
                Column::UserAttr(s) => uattr[*s] = field.to_string(),
                Column::ItemAttr(s) => iattr[*s] = field.to_string(),
            }
        }
        let value: f32 = rating.parse().ok().filter(|v: &f32| v.is_finite()).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("non-numeric rating `{rating}`"),
        })?;
        let u = users.intern(uid, uattr);
        let i = items.intern(iid, iattr);
        if cells.insert((u, i), value).is_some() {
            duplicates += 1;
        } else {
            order.push((u, i));
        }
    }

    let max = cells.values().fold(1.0f32, |a, &b| a.max(b));
    let r_max = opts.r_max.unwrap_or(max.ceil() as u32);
    let mut ratings = Vec::with_capacity(order.len());
    for (user, item) in order {
        let value = cells[&(user, item)];
        if !(1.0..=r_max as f32).contains(&value) {
            return Err(Error::InvalidGraph(format!(
                "rating {value} for ({}, {}) outside [1, {r_max}]",
                users.ids[user as usize], items.ids[item as usize]
            )));
        }
        ratings.push(Rating { user, item, value });
    }
    let graph = RatingGraph::new(r_max, users.finish(&user_names), items.finish(&item_names), ratings)?;
    Ok(Parsed {
        graph,
        malformed: 0,
        duplicates,
    })
}

fn parse_err(path: &Path, line: usize, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(body: &str) -> Result<Parsed> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, body).unwrap();
        parse_csv(&p, &CsvOptions::default())
    }

    #[test]
    fn three_rows_three_ratings_with_id_slots() {
        let p = parse("user,item,rating\na,x,1\nb,x,2\nb,y,5\n").unwrap();
        let g = p.graph;
        assert_eq!(g.ratings().len(), 3);
        assert_eq!((g.h_u(), g.h_i()), (1, 1));
        assert_eq!(g.users().slots[0].card(), 2);
        assert_eq!(g.items().attrs, vec![vec![0], vec![1]]);
        assert_eq!(g.r_max(), 5);
    }

    #[test]
    fn duplicate_keeps_last() {
        let p = parse("user,item,rating\na,x,1\na,x,4\n").unwrap();
        assert_eq!(p.duplicates, 1);
        assert_eq!(p.graph.ratings().len(), 1);
        assert_eq!(p.graph.rating(0, 0), Some(4.0));
    }

    #[test]
    fn attribute_columns_become_slots() {
        let p = parse("item,user,rating,user.age,item.genre\nx,a,3,young,drama\ny,b,2,old,comedy\nx,b,1,old,drama\n")
            .unwrap();
        let g = p.graph;
        assert_eq!(g.users().slots[0].name, "age");
        assert_eq!(g.users().slots[0].labels, vec!["old", "young"]);
        assert_eq!(g.items().attrs, vec![vec![1], vec![0]]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse("user,item,rating,colour\na,b,1,red\n"),
            Err(Error::UnknownColumn(c)) if c == "colour"
        ));
        assert!(matches!(
            parse("user,item,rating\na,b,good\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse("user,rating\na,1\n").is_err());
    }
}
