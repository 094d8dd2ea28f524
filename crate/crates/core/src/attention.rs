//! Scaled dot-product self-attention and its multi-head form.
//!
//! Head weights are stored fused: `w_q` is `d × (heads·d_k)` and head `h`
//! owns columns `h·d_k .. (h+1)·d_k`. The output projection maps the
//! concatenated heads back to the input width so layers stack.

use hire_tensor::{Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct MhsaParams<T> {
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_o: Tensor<T>,
}

/// Tape handles for one [`MhsaParams`].
#[derive(Debug, Clone, Copy)]
pub struct MhsaVars {
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
}

impl<T: Scalar> MhsaParams<T> {
    /// Weights drawn from `Uniform(±1/√fan_in)`.
    pub fn init<R: Rng + ?Sized>(d: usize, heads: usize, d_k: usize, d_v: usize, rng: &mut R) -> Result<Self> {
        let b_in = 1.0 / (d as f64).sqrt();
        let b_out = 1.0 / ((heads * d_v) as f64).sqrt();
        Ok(MhsaParams {
            heads,
            d_k,
            d_v,
            w_q: Tensor::uniform(&[d, heads * d_k], b_in, rng)?,
            w_k: Tensor::uniform(&[d, heads * d_k], b_in, rng)?,
            w_v: Tensor::uniform(&[d, heads * d_v], b_in, rng)?,
            w_o: Tensor::uniform(&[heads * d_v, d], b_out, rng)?,
        })
    }

    /// Builds parameters from explicit matrices, checking head geometry.
    pub fn from_weights(
        heads: usize,
        d_k: usize,
        d_v: usize,
        w_q: Tensor<T>,
        w_k: Tensor<T>,
        w_v: Tensor<T>,
        w_o: Tensor<T>,
    ) -> Result<Self> {
        let d = w_q.shape()[0];
        let ok = w_q.shape() == [d, heads * d_k]
            && w_k.shape() == [d, heads * d_k]
            && w_v.shape() == [d, heads * d_v]
            && w_o.shape() == [heads * d_v, d];
        if !ok {
            return Err(crate::Error::Config(format!(
                "attention weights do not match {heads} heads of ({d_k}, {d_v}): q {:?} k {:?} v {:?} o {:?}",
                w_q.shape(),
                w_k.shape(),
                w_v.shape(),
                w_o.shape()
            )));
        }
        Ok(MhsaParams {
            heads,
            d_k,
            d_v,
            w_q,
            w_k,
            w_v,
            w_o,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn tensors(&self) -> [&Tensor<T>; 4] {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]
    }

    /// Records the weights on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> MhsaVars {
        let mut put = |t: &Tensor<T>| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        MhsaVars {
            heads: self.heads,
            d_k: self.d_k,
            d_v: self.d_v,
            w_q: put(&self.w_q),
            w_k: put(&self.w_k),
            w_v: put(&self.w_v),
            w_o: put(&self.w_o),
        }
    }
}

/// One attention head: `softmax(Q·Kᵀ/√d_k)·X·W_V` with `Q = X·W_Q`, `K = X·W_K`.
pub fn self_attention<T: Scalar>(tape: &mut Tape<T>, x: Var, w_q: Var, w_k: Var, w_v: Var) -> Result<Var> {
    let q = tape.matmul(x, w_q)?;
    let k = tape.matmul(x, w_k)?;
    let d_k = tape.shape(w_q)[1];
    let kt = tape.transpose(k)?;
    let s = tape.matmul(q, kt)?;
    let s = tape.scale(s, T::from_f64(1.0 / (d_k as f64).sqrt()));
    let a = tape.softmax_rows(s)?;
    let ax = tape.matmul(a, x)?;
    Ok(tape.matmul(ax, w_v)?)
}

/// Multi-head self-attention over the token axis of `x`.
///
/// `x` is `[t, d]` or a batch `[b, t, d]`; each batch entry attends
/// independently with shared weights. When `capture` is given, the attention
/// weights are appended to it as one `[b, heads, t, t]` tensor.
pub fn mhsa<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    p: &MhsaVars,
    capture: Option<&mut Vec<Tensor<T>>>,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (b, t, d) = match shape.as_slice() {
        [t, d] => (1, *t, *d),
        [b, t, d] => (*b, *t, *d),
        _ => {
            return Err(hire_tensor::TensorError::Rank {
                op: "mhsa",
                expected: 3,
                shape,
            }
            .into())
        }
    };
    let x3 = tape.reshape(x, &[b, t, d])?;
    let heads = p.heads;
    let split = |tape: &mut Tape<T>, w: Var, dh: usize| -> Result<Var> {
        let y = tape.linear(x3, w, None)?;
        let y = tape.reshape(y, &[b, t, heads, dh])?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        Ok(tape.reshape(y, &[b * heads, t, dh])?)
    };
    let q = split(tape, p.w_q, p.d_k)?;
    let k = split(tape, p.w_k, p.d_k)?;
    let v = split(tape, p.w_v, p.d_v)?;
    let s = tape.batch_matmul(q, k, true, T::from_f64(1.0 / (p.d_k as f64).sqrt()))?;
    let a = tape.softmax_rows(s)?;
    if let Some(out) = capture {
        out.push(tape.value(a).clone().reshape(&[b, heads, t, t])?);
    }
    let o = tape.batch_matmul(a, v, false, T::one())?;
    let o = tape.reshape(o, &[b, heads, t, p.d_v])?;
    let o = tape.permute(o, &[0, 2, 1, 3])?;
    let o = tape.reshape(o, &[b, t, heads * p.d_v])?;
    let y = tape.linear(o, p.w_o, None)?;
    Ok(tape.reshape(y, &shape)?)
}
