//! Context tensor construction.
//!
//! Every attribute slot has its own linear map from a one-hot category to an
//! `f`-wide vector, shared by all entities. A one-hot input selects one row
//! of the map's weight matrix, so the maps are stored as `card × f` tables
//! and applied by row lookup. Ratings use one more table with `r_max + 1`
//! rows: rows `0..r_max` encode observed ratings and the last row marks an
//! unobserved cell. A masked target uses the all-zero input and therefore
//! the zero vector.

use hire_tensor::{Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::data::RatingGraph;
use crate::sampler::{PredictionContext, RatingState};
use crate::{Error, Result};

/// Attribute arity and rating range a model is built for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub user_cards: Vec<usize>,
    pub item_cards: Vec<usize>,
    pub r_max: u32,
}

impl Schema {
    pub fn from_graph(g: &RatingGraph) -> Self {
        Schema {
            user_cards: g.users().cards(),
            item_cards: g.items().cards(),
            r_max: g.r_max(),
        }
    }

    pub fn h_u(&self) -> usize {
        self.user_cards.len()
    }

    pub fn h_i(&self) -> usize {
        self.item_cards.len()
    }

    /// Tokens per cell: user slots, item slots and the rating.
    pub fn h(&self) -> usize {
        self.h_u() + self.h_i() + 1
    }

    /// Errors unless `g` can be encoded by a model built for `self`.
    pub fn check_compatible(&self, g: &RatingGraph) -> Result<()> {
        let other = Schema::from_graph(g);
        if self.user_cards.len() != other.user_cards.len()
            || self.item_cards.len() != other.item_cards.len()
            || self.r_max != other.r_max
        {
            return Err(Error::SchemaMismatch {
                expected: self.describe(),
                found: other.describe(),
            });
        }
        for (side, mine, theirs) in [("user", &self.user_cards, &other.user_cards), ("item", &self.item_cards, &other.item_cards)] {
            for (s, (a, b)) in mine.iter().zip(theirs).enumerate() {
                if b > a {
                    return Err(Error::SchemaMismatch {
                        expected: format!("{side} slot {s} with at most {a} categories"),
                        found: format!("{b} categories"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "user slots {:?}, item slots {:?}, r_max {}",
            self.user_cards, self.item_cards, self.r_max
        )
    }
}

/// Row of the rating table for a cell state; `None` is the zero input.
pub fn rating_row(state: RatingState, r_max: u32) -> Option<usize> {
    match state {
        RatingState::Observed(r) => Some((r.round().clamp(1.0, r_max as f32) as usize) - 1),
        RatingState::MaskedTarget => None,
        RatingState::Unobserved => Some(r_max as usize),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub f: usize,
    pub user: Vec<Tensor<T>>,
    pub item: Vec<Tensor<T>>,
    pub rating: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub user: Vec<Var>,
    pub item: Vec<Var>,
    pub rating: Var,
}

impl<T: Scalar> EncoderParams<T> {
    /// Tables drawn from `Uniform(±1/√card)`.
    pub fn init<R: Rng + ?Sized>(schema: &Schema, f: usize, rng: &mut R) -> Result<Self> {
        let table = |card: usize, rng: &mut R| Tensor::uniform(&[card, f], 1.0 / (card as f64).sqrt(), rng);
        let user = schema.user_cards.iter().map(|&c| table(c, rng)).collect::<hire_tensor::Result<_>>()?;
        let item = schema.item_cards.iter().map(|&c| table(c, rng)).collect::<hire_tensor::Result<_>>()?;
        let rating = table(schema.r_max as usize + 1, rng)?;
        Ok(EncoderParams { f, user, item, rating })
    }

    /// Width of one context cell, `(h_u + h_i + 1)·f`.
    pub fn e(&self) -> usize {
        (self.user.len() + self.item.len() + 1) * self.f
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> EncoderVars {
        let mut put = |t: &Tensor<T>| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        EncoderVars {
            user: self.user.iter().map(&mut put).collect(),
            item: self.item.iter().map(&mut put).collect(),
            rating: put(&self.rating),
        }
    }
}

/// Categorical inputs of one context.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextInput {
    pub n: usize,
    pub m: usize,
    pub user_attrs: Vec<Vec<u32>>,
    pub item_attrs: Vec<Vec<u32>>,
    /// Rating-table row per cell; `None` for masked targets.
    pub rating_rows: Vec<Option<usize>>,
}

impl ContextInput {
    pub fn new(g: &RatingGraph, ctx: &PredictionContext) -> Self {
        ContextInput {
            n: ctx.n(),
            m: ctx.m(),
            user_attrs: ctx.user_ids.iter().map(|&u| g.users().attrs[u as usize].clone()).collect(),
            item_attrs: ctx.item_ids.iter().map(|&i| g.items().attrs[i as usize].clone()).collect(),
            rating_rows: ctx.states.iter().map(|&s| rating_row(s, g.r_max())).collect(),
        }
    }

    pub fn check(&self, schema: &Schema) -> Result<()> {
        let side = |name: &str, attrs: &[Vec<u32>], cards: &[usize]| -> Result<()> {
            for a in attrs {
                if a.len() != cards.len() {
                    return Err(Error::SchemaMismatch {
                        expected: format!("{} {name} slots", cards.len()),
                        found: format!("{} slots", a.len()),
                    });
                }
                for (s, (&c, &card)) in a.iter().zip(cards).enumerate() {
                    if c as usize >= card {
                        return Err(Error::CategoryOutOfRange {
                            slot: format!("{name}.{s}"),
                            index: c as usize,
                            card,
                        });
                    }
                }
            }
            Ok(())
        };
        side("user", &self.user_attrs, &schema.user_cards)?;
        side("item", &self.item_attrs, &schema.item_cards)?;
        let rows = schema.r_max as usize + 1;
        if self.rating_rows.len() != self.n * self.m {
            return Err(Error::Config("rating states do not cover the context".into()));
        }
        if let Some(&r) = self.rating_rows.iter().flatten().find(|&&r| r >= rows) {
            return Err(Error::CategoryOutOfRange {
                slot: "rating".into(),
                index: r,
                card: rows,
            });
        }
        Ok(())
    }
}

fn encode_slots<T: Scalar>(tape: &mut Tape<T>, tables: &[Var], attrs: &[u32]) -> Result<Var> {
    let parts = tables
        .iter()
        .zip(attrs)
        .map(|(&t, &c)| tape.gather_rows(t, &[Some(c as usize)]))
        .collect::<hire_tensor::Result<Vec<_>>>()?;
    let cat = tape.concat_last(&parts)?;
    let w = tape.shape(cat)[1];
    Ok(tape.reshape(cat, &[w])?)
}

/// User feature vector `[h_u·f]`.
pub fn encode_user<T: Scalar>(tape: &mut Tape<T>, enc: &EncoderVars, attrs: &[u32]) -> Result<Var> {
    encode_slots(tape, &enc.user, attrs)
}

/// Item feature vector `[h_i·f]`.
pub fn encode_item<T: Scalar>(tape: &mut Tape<T>, enc: &EncoderVars, attrs: &[u32]) -> Result<Var> {
    encode_slots(tape, &enc.item, attrs)
}

/// The `n × m × e` input tensor: cell `(k, j)` is user `k`'s features, then
/// item `j`'s features, then the rating-state features.
pub fn build_context_tensor<T: Scalar>(tape: &mut Tape<T>, enc: &EncoderVars, input: &ContextInput) -> Result<Var> {
    let (n, m) = (input.n, input.m);
    let mut parts = Vec::with_capacity(enc.user.len() + enc.item.len() + 1);
    for (s, &table) in enc.user.iter().enumerate() {
        let rows: Vec<Option<usize>> = (0..n * m).map(|c| Some(input.user_attrs[c / m][s] as usize)).collect();
        parts.push(tape.gather_rows(table, &rows)?);
    }
    for (s, &table) in enc.item.iter().enumerate() {
        let rows: Vec<Option<usize>> = (0..n * m).map(|c| Some(input.item_attrs[c % m][s] as usize)).collect();
        parts.push(tape.gather_rows(table, &rows)?);
    }
    parts.push(tape.gather_rows(enc.rating, &input.rating_rows)?);
    let flat = tape.concat_last(&parts)?;
    let e = tape.shape(flat)[1];
    Ok(tape.reshape(flat, &[n, m, e])?)
}
