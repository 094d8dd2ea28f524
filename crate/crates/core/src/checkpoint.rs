//! Checkpoint files.
//!
//! Layout, integers little-endian, strings as `u32` length plus UTF-8:
//! magic `HIRE`, `u32` version, `u32` entry count and `key=value` string
//! pairs holding hyperparameters, then `u32` tensor count and for each
//! tensor its name, `u32` rank, `u32` dims and an `f32` payload.
//! Optimizer state is stored in the same container under `opt.` names.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use hire_tensor::{Scalar, Tensor};

use crate::attention::MhsaParams;
use crate::binio::{Reader, Writer};
use crate::embedding::{EncoderParams, Schema};
use crate::model::{HimBlock, HireModel, ModelConfig};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"HIRE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Writer::new(BufWriter::new(file));
        let io = (|| -> std::io::Result<()> {
            w.bytes(MAGIC)?;
            w.u32(VERSION)?;
            w.len(self.meta.len())?;
            for (k, v) in &self.meta {
                w.str(k)?;
                w.str(v)?;
            }
            w.len(self.tensors.len())?;
            for (name, t) in &self.tensors {
                w.str(name)?;
                w.len(t.rank())?;
                for &d in t.shape() {
                    w.len(d)?;
                }
                for &x in t.data() {
                    w.f32(x)?;
                }
            }
            Ok(())
        })();
        io.and_then(|_| w.finish().map(drop)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(&buf);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.len()? {
            let k = r.str()?;
            meta.insert(k, r.str()?);
        }
        let count = r.len()?;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.str()?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            if numel * 4 > buf.len() {
                return Err(Error::Format(format!("tensor `{name}` larger than the file")));
            }
            let data = (0..numel).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        r.expect_end()?;
        Ok(Checkpoint { meta, tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks `{key}`")))
    }

    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let s = self.meta_str(key)?;
        s.parse().map_err(|_| Error::Format(format!("checkpoint `{key}` has bad value `{s}`")))
    }
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn split_list(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.parse().map_err(|_| Error::Format(format!("bad list `{s}`"))))
        .collect()
}

/// Hyperparameters and weights of `model`, stored as `f32`.
pub fn model_checkpoint<T: Scalar>(model: &HireModel<T>) -> Checkpoint {
    let c = &model.config;
    let mut meta = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        meta.insert(k.to_string(), v);
    };
    put("model.feat_dim", c.feat_dim.to_string());
    put("model.blocks", c.blocks.to_string());
    put("model.heads", c.heads.to_string());
    put("model.head_dim", c.head_dim.to_string());
    put("model.mba_heads", c.mba_heads.to_string());
    put("model.mba_head_dim", c.mba_head_dim.to_string());
    put("model.residual", c.residual.to_string());
    put("model.alpha", format!("{:?}", model.alpha));
    put("schema.r_max", model.schema.r_max.to_string());
    put("schema.user_cards", join(&model.schema.user_cards));
    put("schema.item_cards", join(&model.schema.item_cards));
    let tensors = model.named_params().into_iter().map(|(n, t)| (n, t.cast::<f32>())).collect();
    Checkpoint { meta, tensors }
}

pub fn save_model<T: Scalar>(model: &HireModel<T>, path: &Path) -> Result<()> {
    model_checkpoint(model).write(path)
}

/// Rebuilds a model from a checkpoint.
pub fn model_from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<HireModel<T>> {
    let config = ModelConfig {
        feat_dim: ck.meta_parse("model.feat_dim")?,
        blocks: ck.meta_parse("model.blocks")?,
        heads: ck.meta_parse("model.heads")?,
        head_dim: ck.meta_parse("model.head_dim")?,
        mba_heads: ck.meta_parse("model.mba_heads")?,
        mba_head_dim: ck.meta_parse("model.mba_head_dim")?,
        residual: ck.meta_parse("model.residual")?,
    };
    config.validate()?;
    let schema = Schema {
        user_cards: split_list(ck.meta_str("schema.user_cards")?)?,
        item_cards: split_list(ck.meta_str("schema.item_cards")?)?,
        r_max: ck.meta_parse("schema.r_max")?,
    };
    let alpha: f64 = ck.meta_parse("model.alpha")?;
    let f = config.feat_dim;
    let e = (schema.h_u() + schema.h_i() + 1) * f;
    let take = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
        let t = ck.get(name).ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
        if t.shape() != shape {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t.cast())
    };
    let user = schema
        .user_cards
        .iter()
        .enumerate()
        .map(|(s, &c)| take(&format!("enc.user.{s}"), &[c, f]))
        .collect::<Result<_>>()?;
    let item = schema
        .item_cards
        .iter()
        .enumerate()
        .map(|(s, &c)| take(&format!("enc.item.{s}"), &[c, f]))
        .collect::<Result<_>>()?;
    let rating = take("enc.rating", &[schema.r_max as usize + 1, f])?;
    let layer = |b: usize, name: &str, d: usize, heads: usize, dh: usize| -> Result<MhsaParams<T>> {
        let p = format!("block.{b}.{name}");
        MhsaParams::from_weights(
            heads,
            dh,
            dh,
            take(&format!("{p}.w_q"), &[d, heads * dh])?,
            take(&format!("{p}.w_k"), &[d, heads * dh])?,
            take(&format!("{p}.w_v"), &[d, heads * dh])?,
            take(&format!("{p}.w_o"), &[heads * dh, d])?,
        )
    };
    let blocks = (0..config.blocks)
        .map(|b| {
            Ok(HimBlock {
                mbu: layer(b, "mbu", e, config.heads, config.head_dim)?,
                mbi: layer(b, "mbi", e, config.heads, config.head_dim)?,
                mba: layer(b, "mba", f, config.mba_heads, config.mba_head_dim)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(HireModel {
        enc: EncoderParams { f, user, item, rating },
        blocks,
        dec_w: take("dec.w", &[e, 1])?,
        dec_b: take("dec.b", &[1])?,
        alpha,
        config,
        schema,
    })
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<HireModel<T>> {
    model_from_checkpoint(&Checkpoint::read(path)?)
}
