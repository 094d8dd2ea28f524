//! Central-difference gradient oracle.
//!
//! The reported error for one coordinate is
//! `|analytic − numeric| / max(1, |analytic|)` with
//! `numeric = (f(x + ε) − f(x − ε)) / 2ε`.

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

/// Which coordinates of each input are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordSelection {
    All,
    /// At most `per_tensor` coordinates per input, drawn without replacement.
    Sample { per_tensor: usize, seed: u64 },
}

fn evaluate<T, F>(f: &F, inputs: &[Tensor<T>]) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item()?.as_f64())
}

/// Maximum relative gradient error for each input of a scalar function.
pub fn check_gradients<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    eps: f64,
    selection: CoordSelection,
) -> Result<Vec<f64>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(TensorError::NotScalar(tape.shape(out).to_vec()));
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| match tape.grad(*v) {
            Some(g) => g.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.numel()],
        })
        .collect();
    drop(tape);

    let mut rng = match selection {
        CoordSelection::Sample { seed, .. } => Some(StdRng::seed_from_u64(seed)),
        CoordSelection::All => None,
    };
    let mut work = inputs.to_vec();
    let mut errors = Vec::with_capacity(inputs.len());
    for idx in 0..inputs.len() {
        let n = inputs[idx].numel();
        let coords: Vec<usize> = match (selection, rng.as_mut()) {
            (CoordSelection::Sample { per_tensor, .. }, Some(r)) if per_tensor < n => {
                rand::seq::index::sample(r, n, per_tensor).into_vec()
            }
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for c in coords {
            let orig = work[idx].data()[c];
            work[idx].data_mut()[c] = T::from_f64(orig.as_f64() + eps);
            let up = evaluate(&f, &work)?;
            work[idx].data_mut()[c] = T::from_f64(orig.as_f64() - eps);
            let down = evaluate(&f, &work)?;
            work[idx].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[idx][c];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
        errors.push(worst);
    }
    Ok(errors)
}

/// Maximum relative error of the analytic gradient of `f` at `x`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let errs = check_gradients(
        |tape: &mut Tape<T>, vars: &[Var]| f(tape, vars[0]),
        std::slice::from_ref(x),
        eps,
        CoordSelection::All,
    )?;
    Ok(errs[0])
}
