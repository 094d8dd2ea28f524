//! Binary graph cache.
//!
//! Layout, all integers little-endian, strings as `u32` length plus UTF-8:
//! magic `HIRG`, `u32` version, `u32` r_max, the user section, the item
//! section, then `u64` rating count and `(u32 user, u32 item, f32 value)`
//! triples. An entity section is `u32` count, `u32` slot count, each slot as
//! name plus `u32` label count and labels, each entity as raw id plus one
//! `u32` category per slot, and a `u8` year flag followed by `i32` years.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::{EntitySet, Rating, RatingGraph, Slot};
use crate::binio::{Reader, Writer};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"HIRG";
const VERSION: u32 = 1;

fn write_entities<W: std::io::Write>(w: &mut Writer<W>, e: &EntitySet) -> std::io::Result<()> {
    w.len(e.len())?;
    w.len(e.slots.len())?;
    for s in &e.slots {
        w.str(&s.name)?;
        w.len(s.labels.len())?;
        for l in &s.labels {
            w.str(l)?;
        }
    }
    for (id, attrs) in e.raw_ids.iter().zip(&e.attrs) {
        w.str(id)?;
        for &a in attrs {
            w.u32(a)?;
        }
    }
    match &e.years {
        Some(years) => {
            w.u8(1)?;
            for &y in years {
                w.i32(y)?;
            }
        }
        None => w.u8(0)?,
    }
    Ok(())
}

fn read_entities(r: &mut Reader<'_>) -> Result<EntitySet> {
    let count = r.len()?;
    let n_slots = r.len()?;
    let mut slots = Vec::with_capacity(n_slots);
    for _ in 0..n_slots {
        let name = r.str()?;
        let n = r.len()?;
        let labels = (0..n).map(|_| r.str()).collect::<Result<_>>()?;
        slots.push(Slot { name, labels });
    }
    let mut raw_ids = Vec::with_capacity(count);
    let mut attrs = Vec::with_capacity(count);
    for _ in 0..count {
        raw_ids.push(r.str()?);
        attrs.push((0..n_slots).map(|_| r.u32()).collect::<Result<_>>()?);
    }
    let years = match r.u8()? {
        0 => None,
        1 => Some((0..count).map(|_| r.i32()).collect::<Result<_>>()?),
        f => return Err(Error::Format(format!("bad year flag {f}"))),
    };
    Ok(EntitySet {
        raw_ids,
        slots,
        attrs,
        years,
    })
}

pub fn save_graph(g: &RatingGraph, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer::new(BufWriter::new(file));
    let io = (|| -> std::io::Result<()> {
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(g.r_max())?;
        write_entities(&mut w, g.users())?;
        write_entities(&mut w, g.items())?;
        w.u64(g.ratings().len() as u64)?;
        for r in g.ratings() {
            w.u32(r.user)?;
            w.u32(r.item)?;
            w.f32(r.value)?;
        }
        Ok(())
    })();
    io.and_then(|_| w.finish().map(drop)).map_err(|e| Error::io(path, e))
}

pub fn load_graph(path: &Path) -> Result<RatingGraph> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&buf);
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a graph cache (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported graph cache version {version}")));
    }
    let r_max = r.u32()?;
    let users = read_entities(&mut r)?;
    let items = read_entities(&mut r)?;
    let n = r.u64()? as usize;
    let mut ratings = Vec::with_capacity(n.min(buf.len() / 12));
    for _ in 0..n {
        ratings.push(Rating {
            user: r.u32()?,
            item: r.u32()?,
            value: r.f32()?,
        });
    }
    r.expect_end()?;
    RatingGraph::new(r_max, users, items, ratings)
}
