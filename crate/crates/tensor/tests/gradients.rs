//! Every differentiable op checked against central differences.

use hire_tensor::{check_gradients, grad_check, CoordSelection, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: u64 = 20;
const TOL: f64 = 1e-6;
const EPS: f64 = 1e-6;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng).unwrap()
}

/// Weighted readout so every output coordinate carries a distinct cotangent.
fn readout(tape: &mut Tape<f64>, y: Var, rng: &mut ChaCha8Rng) -> Var {
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0)).unwrap());
    let p = tape.mul(y, w).unwrap();
    tape.sum_all(p)
}

fn check<F>(name: &str, shapes: &[&[usize]], build: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
        let readout_seed = rng.gen::<u64>();
        let errs = check_gradients(
            |tape: &mut Tape<f64>, vars: &[Var]| {
                let y = build(tape, vars);
                let mut r = ChaCha8Rng::seed_from_u64(readout_seed);
                Ok(readout(tape, y, &mut r))
            },
            &inputs,
            EPS,
            CoordSelection::All,
        )
        .unwrap();
        for (i, e) in errs.iter().enumerate() {
            assert!(*e < TOL, "{name} trial {trial} input {i}: rel err {e}");
        }
    }
}

#[test]
fn sum_gradient_is_ones() {
    let x = Tensor::<f64>::from_fn(&[3, 4], |i| i as f64 - 5.0).unwrap();
    let err = grad_check(|tape, v| Ok(tape.sum_all(v)), &x, 1e-4).unwrap();
    assert!(err < 1e-10, "{err}");
    let mut tape = Tape::new();
    let v = tape.leaf(x);
    let s = tape.sum_all(v);
    tape.backward(s).unwrap();
    assert!(tape.grad(v).unwrap().iter().all(|g| *g == 1.0));
}

#[test]
fn softmax_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[4, 6]);
    let c = rand_tensor(&mut rng, &[4, 6]);
    let err = grad_check(
        |tape, v| {
            let s = tape.softmax_rows(v)?;
            let cv = tape.constant(c.clone());
            let p = tape.mul(s, cv)?;
            Ok(tape.sum_all(p))
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn non_scalar_output_is_rejected() {
    let x = Tensor::<f64>::zeros(&[2, 2]).unwrap();
    assert!(grad_check(|tape, v| Ok(tape.scale(v, 2.0)), &x, 1e-6).is_err());
}

#[test]
fn matmul_grad() {
    check("matmul", &[&[3, 4], &[4, 5]], |t, v| t.matmul(v[0], v[1]).unwrap());
}

#[test]
fn batch_matmul_grad() {
    check("bmm", &[&[2, 3, 4], &[2, 4, 5]], |t, v| {
        t.batch_matmul(v[0], v[1], false, 0.7).unwrap()
    });
    check("bmm_t", &[&[2, 3, 4], &[2, 5, 4]], |t, v| {
        t.batch_matmul(v[0], v[1], true, 0.5).unwrap()
    });
}

#[test]
fn linear_grad() {
    check("linear", &[&[2, 3, 4], &[4, 3], &[3]], |t, v| {
        t.linear(v[0], v[1], Some(v[2])).unwrap()
    });
}

#[test]
fn elementwise_grads() {
    check("add", &[&[3, 2], &[3, 2]], |t, v| t.add(v[0], v[1]).unwrap());
    check("sub", &[&[3, 2], &[3, 2]], |t, v| t.sub(v[0], v[1]).unwrap());
    check("mul", &[&[3, 2], &[3, 2]], |t, v| t.mul(v[0], v[1]).unwrap());
    check("scale", &[&[3, 2]], |t, v| t.scale(v[0], -1.7));
    check("sigmoid", &[&[3, 5]], |t, v| t.sigmoid(v[0]));
    check("softmax", &[&[4, 5]], |t, v| t.softmax_rows(v[0]).unwrap());
}

#[test]
fn structural_grads() {
    check("permute", &[&[2, 3, 4]], |t, v| t.permute(v[0], &[2, 0, 1]).unwrap());
    check("reshape", &[&[2, 6]], |t, v| t.reshape(v[0], &[3, 4]).unwrap());
    check("concat", &[&[2, 3], &[2, 2]], |t, v| t.concat_last(&[v[0], v[1]]).unwrap());
    check("slice", &[&[3, 5]], |t, v| t.slice_last(v[0], 1, 3).unwrap());
    check("stack", &[&[2, 3], &[2, 3], &[2, 3]], |t, v| t.stack(v, 1).unwrap());
    check("gather", &[&[4, 3]], |t, v| {
        t.gather_rows(v[0], &[Some(1), None, Some(3), Some(1)]).unwrap()
    });
    check("add_bias", &[&[3, 4], &[4]], |t, v| t.add_bias(v[0], v[1]).unwrap());
}

#[test]
fn masked_mse_grad() {
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let p = rand_tensor(&mut rng, &[3, 3]);
        let target: Vec<f64> = (0..9).map(|_| rng.gen_range(1.0..5.0)).collect();
        let mut mask: Vec<bool> = (0..9).map(|_| rng.gen_bool(0.5)).collect();
        mask[0] = true;
        let err = grad_check(|t, v| t.masked_mse(v, &target, &mask), &p, EPS).unwrap();
        assert!(err < TOL, "trial {trial}: {err}");
    }
}
