//! The rating model: stacked attention blocks over the context tensor and a
//! per-cell rating decoder.
//!
//! Each block attends between users (per item column), then between items
//! (per user row), then between the attribute tokens of each cell. The
//! decoder maps each cell to `α·sigmoid(w·x + b)` with `α = r_max`.

use hire_tensor::{Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{mhsa, MhsaParams, MhsaVars};
use crate::embedding::{build_context_tensor, ContextInput, EncoderParams, EncoderVars, Schema};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Head count of the attribute layer, whose tokens are only `feat_dim` wide.
    pub mba_heads: usize,
    pub mba_head_dim: usize,
    /// Adds the layer input to each attention output. Without it the
    /// stacked attention layers collapse every cell to the same vector.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feat_dim: 16,
            blocks: 3,
            heads: 8,
            head_dim: 16,
            mba_heads: 4,
            mba_head_dim: 4,
            residual: true,
        }
    }
}

impl ModelConfig {
    /// Attribute-layer geometry for a feature width: four heads splitting
    /// the width when it divides evenly, else one full-width head.
    pub fn mba_geometry(feat_dim: usize) -> (usize, usize) {
        if feat_dim.is_multiple_of(4) && feat_dim >= 4 {
            (4, feat_dim / 4)
        } else {
            (1, feat_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("blocks", self.blocks),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("feat_dim", self.feat_dim),
            ("mba_heads", self.mba_heads),
            ("mba_head_dim", self.mba_head_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HimBlock<T> {
    pub mbu: MhsaParams<T>,
    pub mbi: MhsaParams<T>,
    pub mba: MhsaParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HireModel<T> {
    pub config: ModelConfig,
    pub schema: Schema,
    pub enc: EncoderParams<T>,
    pub blocks: Vec<HimBlock<T>>,
    /// Decoder weight `[e × 1]`.
    pub dec_w: Tensor<T>,
    /// Decoder bias `[1]`.
    pub dec_b: Tensor<T>,
    pub alpha: f64,
}

/// Parameters recorded on a tape for one forward pass.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub enc: EncoderVars,
    pub blocks: Vec<[MhsaVars; 3]>,
    pub dec_w: Var,
    pub dec_b: Var,
}

impl BoundModel {
    /// Handles in [`HireModel::named_params`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = Vec::new();
        v.extend(&self.enc.user);
        v.extend(&self.enc.item);
        v.push(self.enc.rating);
        for b in &self.blocks {
            for l in b {
                v.extend([l.w_q, l.w_k, l.w_v, l.w_o]);
            }
        }
        v.push(self.dec_w);
        v.push(self.dec_b);
        v
    }
}

/// Attention weights of every layer, as `[batch, heads, t, t]` tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAttention<T> {
    /// `[m, heads, n, n]`: user-to-user weights per item column.
    pub mbu: Tensor<T>,
    /// `[n, heads, m, m]`: item-to-item weights per user row.
    pub mbi: Tensor<T>,
    /// `[n·m, heads, h, h]`: token-to-token weights per cell.
    pub mba: Tensor<T>,
}

pub const LAYER_NAMES: [&str; 3] = ["mbu", "mbi", "mba"];

fn maybe_residual<T: Scalar>(tape: &mut Tape<T>, x: Var, y: Var, residual: bool) -> Result<Var> {
    if residual {
        Ok(tape.add(x, y)?)
    } else {
        Ok(y)
    }
}

/// Attention between the users of each item column of `h[n × m × e]`.
pub fn mbu_forward<T: Scalar>(
    tape: &mut Tape<T>,
    h: Var,
    p: &MhsaVars,
    capture: Option<&mut Vec<Tensor<T>>>,
) -> Result<Var> {
    let cols = tape.permute(h, &[1, 0, 2])?;
    let y = mhsa(tape, cols, p, capture)?;
    Ok(tape.permute(y, &[1, 0, 2])?)
}

/// Attention between the items of each user row of `h[n × m × e]`.
pub fn mbi_forward<T: Scalar>(
    tape: &mut Tape<T>,
    h: Var,
    p: &MhsaVars,
    capture: Option<&mut Vec<Tensor<T>>>,
) -> Result<Var> {
    mhsa(tape, h, p, capture)
}

/// Attention between the `e / f` feature tokens of each cell.
pub fn mba_forward<T: Scalar>(
    tape: &mut Tape<T>,
    h: Var,
    p: &MhsaVars,
    f: usize,
    capture: Option<&mut Vec<Tensor<T>>>,
) -> Result<Var> {
    let shape = tape.shape(h).to_vec();
    let [n, m, e] = shape[..] else {
        return Err(hire_tensor::TensorError::Rank {
            op: "mba",
            expected: 3,
            shape,
        }
        .into());
    };
    if f == 0 || e % f != 0 {
        return Err(Error::Config(format!("cell width {e} is not a multiple of feature width {f}")));
    }
    let tokens = tape.reshape(h, &[n * m, e / f, f])?;
    let y = mhsa(tape, tokens, p, capture)?;
    Ok(tape.reshape(y, &[n, m, e])?)
}

impl<T: Scalar> HireModel<T> {
    pub fn new(config: ModelConfig, schema: Schema, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = EncoderParams::init(&schema, config.feat_dim, &mut rng)?;
        let e = enc.e();
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            blocks.push(HimBlock {
                mbu: MhsaParams::init(e, config.heads, config.head_dim, config.head_dim, &mut rng)?,
                mbi: MhsaParams::init(e, config.heads, config.head_dim, config.head_dim, &mut rng)?,
                mba: MhsaParams::init(config.feat_dim, config.mba_heads, config.mba_head_dim, config.mba_head_dim, &mut rng)?,
            });
        }
        let bound = 1.0 / (e as f64).sqrt();
        let dec_w = Tensor::uniform(&[e, 1], bound, &mut rng)?;
        let dec_b = Tensor::uniform(&[1], bound, &mut rng)?;
        let alpha = schema.r_max as f64;
        Ok(HireModel {
            config,
            schema,
            enc,
            blocks,
            dec_w,
            dec_b,
            alpha,
        })
    }

    pub fn e(&self) -> usize {
        self.enc.e()
    }

    /// Parameter names and values in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (s, t) in self.enc.user.iter().enumerate() {
            out.push((format!("enc.user.{s}"), t));
        }
        for (s, t) in self.enc.item.iter().enumerate() {
            out.push((format!("enc.item.{s}"), t));
        }
        out.push(("enc.rating".to_string(), &self.enc.rating));
        for (b, block) in self.blocks.iter().enumerate() {
            for (layer, p) in LAYER_NAMES.iter().zip([&block.mbu, &block.mbi, &block.mba]) {
                for (w, t) in ["w_q", "w_k", "w_v", "w_o"].iter().zip(p.tensors()) {
                    out.push((format!("block.{b}.{layer}.{w}"), t));
                }
            }
        }
        out.push(("dec.w".to_string(), &self.dec_w));
        out.push(("dec.b".to_string(), &self.dec_b));
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }

    /// Mutable parameters in [`named_params`](Self::named_params) order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        out.extend(self.enc.user.iter_mut());
        out.extend(self.enc.item.iter_mut());
        out.push(&mut self.enc.rating);
        for block in &mut self.blocks {
            for p in [&mut block.mbu, &mut block.mbi, &mut block.mba] {
                out.extend(p.tensors_mut());
            }
        }
        out.push(&mut self.dec_w);
        out.push(&mut self.dec_b);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundModel {
        let enc = self.enc.bind(tape, trainable);
        let blocks = self
            .blocks
            .iter()
            .map(|b| [b.mbu.bind(tape, trainable), b.mbi.bind(tape, trainable), b.mba.bind(tape, trainable)])
            .collect();
        let mut put = |t: &Tensor<T>| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        let dec_w = put(&self.dec_w);
        let dec_b = put(&self.dec_b);
        BoundModel {
            enc,
            blocks,
            dec_w,
            dec_b,
        }
    }

    /// Runs the attention blocks on an already built `[n × m × e]` tensor
    /// and decodes `[n × m]` predictions.
    pub fn forward_tensor(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        h0: Var,
        mut capture: Option<&mut Vec<BlockAttention<T>>>,
    ) -> Result<Var> {
        let shape = tape.shape(h0).to_vec();
        let (n, m, e) = (shape[0], shape[1], shape[2]);
        if e != self.e() {
            return Err(Error::SchemaMismatch {
                expected: format!("cell width {}", self.e()),
                found: format!("{e}"),
            });
        }
        let res = self.config.residual;
        let mut h = h0;
        for vars in &bound.blocks {
            let mut caps: Vec<Tensor<T>> = Vec::new();
            let want = capture.is_some();
            let y = mbu_forward(tape, h, &vars[0], want.then_some(&mut caps))?;
            h = maybe_residual(tape, h, y, res)?;
            let y = mbi_forward(tape, h, &vars[1], want.then_some(&mut caps))?;
            h = maybe_residual(tape, h, y, res)?;
            let y = mba_forward(tape, h, &vars[2], self.config.feat_dim, want.then_some(&mut caps))?;
            h = maybe_residual(tape, h, y, res)?;
            if let Some(out) = capture.as_deref_mut() {
                let mut it = caps.into_iter();
                let (mbu, mbi, mba) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
                out.push(BlockAttention { mbu, mbi, mba });
            }
        }
        let flat = tape.reshape(h, &[n * m, e])?;
        let logits = tape.linear(flat, bound.dec_w, Some(bound.dec_b))?;
        let s = tape.sigmoid(logits);
        let r = tape.scale(s, T::from_f64(self.alpha));
        Ok(tape.reshape(r, &[n, m])?)
    }

    /// Full forward pass from categorical inputs to `[n × m]` predictions.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        input: &ContextInput,
        capture: Option<&mut Vec<BlockAttention<T>>>,
    ) -> Result<Var> {
        input.check(&self.schema)?;
        let h0 = build_context_tensor(tape, &bound.enc, input)?;
        self.forward_tensor(tape, bound, h0, capture)
    }

    /// Predicted ratings `[n × m]`, without recording gradients.
    pub fn predict(&self, input: &ContextInput) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let y = self.forward(&mut tape, &bound, input, None)?;
        Ok(tape.value(y).clone())
    }

    /// Masked MSE over `query` cells and its gradient for every parameter,
    /// in [`named_params`](Self::named_params) order. `None` when the
    /// context has no query cell.
    pub fn loss_and_grads(&self, input: &ContextInput, truth: &[T], query: &[bool]) -> Result<Option<(f64, Vec<Vec<T>>)>> {
        if !query.iter().any(|q| *q) {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let y = self.forward(&mut tape, &bound, input, None)?;
        let loss = tape.masked_mse(y, truth, query)?;
        tape.backward(loss)?;
        let grads = bound
            .vars()
            .into_iter()
            .map(|v| match tape.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); tape.value(v).numel()],
            })
            .collect();
        Ok(Some((tape.value(loss).item()?.as_f64(), grads)))
    }

    /// Attention weights of every block for one context.
    pub fn dump_attention(&self, input: &ContextInput) -> Result<Vec<BlockAttention<T>>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let mut out = Vec::new();
        self.forward(&mut tape, &bound, input, Some(&mut out))?;
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> HireModel<U> {
        let c = |p: &MhsaParams<T>| MhsaParams {
            heads: p.heads,
            d_k: p.d_k,
            d_v: p.d_v,
            w_q: p.w_q.cast(),
            w_k: p.w_k.cast(),
            w_v: p.w_v.cast(),
            w_o: p.w_o.cast(),
        };
        HireModel {
            config: self.config.clone(),
            schema: self.schema.clone(),
            enc: EncoderParams {
                f: self.enc.f,
                user: self.enc.user.iter().map(Tensor::cast).collect(),
                item: self.enc.item.iter().map(Tensor::cast).collect(),
                rating: self.enc.rating.cast(),
            },
            blocks: self
                .blocks
                .iter()
                .map(|b| HimBlock {
                    mbu: c(&b.mbu),
                    mbi: c(&b.mbi),
                    mba: c(&b.mba),
                })
                .collect(),
            dec_w: self.dec_w.cast(),
            dec_b: self.dec_b.cast(),
            alpha: self.alpha,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema {
            user_cards: vec![3, 2],
            item_cards: vec![4, 2],
            r_max: 5,
        }
    }

    fn input(n: usize, m: usize) -> ContextInput {
        ContextInput {
            n,
            m,
            user_attrs: (0..n).map(|k| vec![(k % 3) as u32, (k % 2) as u32]).collect(),
            item_attrs: (0..m).map(|j| vec![(j % 4) as u32, ((j + 1) % 2) as u32]).collect(),
            rating_rows: (0..n * m).map(|c| if c % 3 == 0 { None } else { Some(c % 6) }).collect(),
        }
    }

    #[test]
    fn names_and_mutable_params_align() {
        let mut model = HireModel::<f32>::new(ModelConfig::default(), schema(), 1).unwrap();
        let shapes: Vec<Vec<usize>> = model.named_params().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let names = model.param_names();
        assert_eq!(names.len(), 2 + 2 + 1 + 3 * 12 + 2);
        let mut_shapes: Vec<Vec<usize>> = model.params_mut().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, mut_shapes);
        let mut tape = Tape::new();
        assert_eq!(model.bind(&mut tape, true).vars().len(), names.len());
    }

    #[test]
    fn zero_decoder_predicts_half_alpha() {
        let mut model = HireModel::<f64>::new(ModelConfig::default(), schema(), 2).unwrap();
        model.dec_w = Tensor::zeros(&[model.e(), 1]).unwrap();
        model.dec_b = Tensor::zeros(&[1]).unwrap();
        let y = model.predict(&input(3, 4)).unwrap();
        assert_eq!(y.shape(), &[3, 4]);
        assert!(y.data().iter().all(|v| *v == 2.5));
    }

    #[test]
    fn attention_dump_shapes() {
        let model = HireModel::<f64>::new(ModelConfig::default(), schema(), 3).unwrap();
        let dump = model.dump_attention(&input(3, 4)).unwrap();
        assert_eq!(dump.len(), 3);
        assert_eq!(dump[0].mbu.shape(), &[4, 8, 3, 3]);
        assert_eq!(dump[0].mbi.shape(), &[3, 8, 4, 4]);
        assert_eq!(dump[0].mba.shape(), &[12, 4, 5, 5]);
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig {
            blocks: 0,
            ..ModelConfig::default()
        };
        assert!(HireModel::<f32>::new(bad, schema(), 0).is_err());
        assert_eq!(ModelConfig::mba_geometry(16), (4, 4));
        assert_eq!(ModelConfig::mba_geometry(6), (1, 6));
    }
}
