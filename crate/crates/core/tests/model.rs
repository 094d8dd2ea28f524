//! Attention blocks and the end-to-end rating model.

mod common;

use common::{permute_input, random_input};
use hire_core::attention::MhsaParams;
use hire_core::embedding::Schema;
use hire_core::model::{mba_forward, mbi_forward, mbu_forward, HireModel, ModelConfig};
use hire_tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_config() -> ModelConfig {
    ModelConfig {
        feat_dim: 4,
        blocks: 2,
        heads: 2,
        head_dim: 3,
        mba_heads: 2,
        mba_head_dim: 2,
        residual: true,
    }
}

fn schema() -> Schema {
    Schema {
        user_cards: vec![3, 2],
        item_cards: vec![4],
        r_max: 5,
    }
}

type Layer = fn(&mut Tape<f64>, hire_tensor::Var, &hire_core::attention::MhsaVars) -> hire_core::Result<hire_tensor::Var>;

fn apply(layer: Layer, p: &MhsaParams<f64>, h: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(h.clone());
    let vars = p.bind(&mut tape, false);
    let y = layer(&mut tape, x, &vars).unwrap();
    tape.value(y).clone()
}

fn mbu(t: &mut Tape<f64>, x: hire_tensor::Var, p: &hire_core::attention::MhsaVars) -> hire_core::Result<hire_tensor::Var> {
    mbu_forward(t, x, p, None)
}

fn mbi(t: &mut Tape<f64>, x: hire_tensor::Var, p: &hire_core::attention::MhsaVars) -> hire_core::Result<hire_tensor::Var> {
    mbi_forward(t, x, p, None)
}

fn mba4(t: &mut Tape<f64>, x: hire_tensor::Var, p: &hire_core::attention::MhsaVars) -> hire_core::Result<hire_tensor::Var> {
    mba_forward(t, x, p, 4, None)
}

fn mba16(t: &mut Tape<f64>, x: hire_tensor::Var, p: &hire_core::attention::MhsaVars) -> hire_core::Result<hire_tensor::Var> {
    mba_forward(t, x, p, 16, None)
}

/// `x·W_V·W_O` per cell, the output of attention over a single token.
fn value_output(p: &MhsaParams<f64>, h: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let d = *h.shape().last().unwrap();
    let x = tape.constant(h.clone().reshape(&[h.numel() / d, d]).unwrap());
    let (wv, wo) = (tape.constant(p.w_v.clone()), tape.constant(p.w_o.clone()));
    let v = tape.matmul(x, wv).unwrap();
    let y = tape.matmul(v, wo).unwrap();
    tape.value(y).clone().reshape(h.shape()).unwrap()
}

fn transpose_nm(h: &Tensor<f64>) -> Tensor<f64> {
    let (n, m, e) = (h.shape()[0], h.shape()[1], h.shape()[2]);
    Tensor::from_fn(&[m, n, e], |c| {
        let (j, k, x) = (c / (n * e), (c / e) % n, c % e);
        h.data()[(k * m + j) * e + x]
    })
    .unwrap()
}

#[test]
fn single_user_column_attention_is_a_per_cell_map() {
    let mut r = rng(1);
    let p = MhsaParams::init(8, 2, 3, 3, &mut r).unwrap();
    let h = Tensor::uniform(&[1, 5, 8], 1.0, &mut r).unwrap();
    assert!(apply(mbu, &p, &h).max_abs_diff(&value_output(&p, &h)) < 1e-12);
}

#[test]
fn single_item_row_attention_is_a_per_cell_map() {
    let mut r = rng(2);
    let p = MhsaParams::init(8, 2, 3, 3, &mut r).unwrap();
    let h = Tensor::uniform(&[4, 1, 8], 1.0, &mut r).unwrap();
    assert!(apply(mbi, &p, &h).max_abs_diff(&value_output(&p, &h)) < 1e-12);
}

#[test]
fn single_token_cell_attention_is_a_per_cell_map() {
    let mut r = rng(3);
    let p = MhsaParams::init(4, 2, 2, 2, &mut r).unwrap();
    let h = Tensor::uniform(&[3, 2, 4], 1.0, &mut r).unwrap();
    assert!(apply(mba4, &p, &h).max_abs_diff(&value_output(&p, &h)) < 1e-12);
}

#[test]
fn item_attention_is_user_attention_on_the_transpose() {
    let mut r = rng(4);
    let p = MhsaParams::init(6, 2, 3, 2, &mut r).unwrap();
    let h = Tensor::uniform(&[3, 4, 6], 1.0, &mut r).unwrap();
    let lhs = apply(mbi, &p, &transpose_nm(&h));
    let rhs = transpose_nm(&apply(mbu, &p, &h));
    assert!(lhs.max_abs_diff(&rhs) < 1e-12);
}

#[test]
fn identical_item_columns_stay_identical() {
    let mut r = rng(5);
    let p = MhsaParams::init(6, 2, 3, 3, &mut r).unwrap();
    let mut h = Tensor::uniform(&[3, 3, 6], 1.0, &mut r).unwrap();
    for k in 0..3 {
        for x in 0..6 {
            let v = h.data()[(k * 3) * 6 + x];
            h.data_mut()[(k * 3 + 2) * 6 + x] = v;
        }
    }
    let y = apply(mbu, &p, &h);
    for k in 0..3 {
        for x in 0..6 {
            assert_eq!(y.data()[(k * 3) * 6 + x], y.data()[(k * 3 + 2) * 6 + x]);
        }
    }
}

#[test]
fn cell_attention_is_local_to_each_cell() {
    let mut r = rng(6);
    let p = MhsaParams::init(16, 4, 4, 4, &mut r).unwrap();
    let h = Tensor::uniform(&[2, 2, 80], 1.0, &mut r).unwrap();
    let y = apply(mba16, &p, &h);
    assert_eq!(y.shape(), &[2, 2, 80]);
    let mut h2 = h.clone();
    h2.data_mut()[..80].iter_mut().for_each(|v| *v += 0.5);
    let y2 = apply(mba16, &p, &h2);
    assert!(y.data()[..80] != y2.data()[..80]);
    assert_eq!(&y.data()[80..], &y2.data()[80..]);
}

#[test]
fn width_not_a_multiple_of_the_feature_size_is_rejected() {
    let mut r = rng(7);
    let p = MhsaParams::<f64>::init(16, 4, 4, 4, &mut r).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 2, 70]).unwrap());
    let vars = p.bind(&mut tape, false);
    assert!(mba_forward(&mut tape, x, &vars, 16, None).is_err());
}

#[test]
fn zero_decoder_predicts_half_the_range() {
    let mut model = HireModel::<f64>::new(small_config(), schema(), 1).unwrap();
    model.dec_w.data_mut().fill(0.0);
    model.dec_b.data_mut().fill(0.0);
    let input = random_input(&mut rng(8), &model.schema, 3, 4);
    let y = model.predict(&input).unwrap();
    assert!(y.data().iter().all(|&v| v == 2.5));
}

#[test]
fn attention_dump_rows_are_distributions() {
    let cfg = ModelConfig {
        blocks: 3,
        heads: 8,
        head_dim: 4,
        ..small_config()
    };
    let model = HireModel::<f64>::new(cfg, schema(), 2).unwrap();
    let (n, m) = (5, 6);
    let input = random_input(&mut rng(9), &model.schema, n, m);
    let dump = model.dump_attention(&input).unwrap();
    assert_eq!(dump.len(), 3);
    let mbu_matrices: usize = dump.iter().map(|b| b.mbu.shape()[0] * b.mbu.shape()[1]).sum();
    assert_eq!(mbu_matrices, 3 * 8 * m);
    let h = model.schema.h();
    let mut asymmetric = false;
    for b in &dump {
        assert_eq!(b.mbu.shape(), &[m, 8, n, n]);
        assert_eq!(b.mbi.shape(), &[n, 8, m, m]);
        assert_eq!(b.mba.shape(), &[n * m, 2, h, h]);
        for (t, w) in [(&b.mbu, n), (&b.mbi, m), (&b.mba, h)] {
            for row in t.data().chunks(w) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        asymmetric |= (0..n).any(|i| (0..n).any(|j| (b.mbu.get(&[0, 0, i, j]) - b.mbu.get(&[0, 0, j, i])).abs() > 1e-9));
    }
    assert!(asymmetric);
}

#[test]
fn incompatible_inputs_are_rejected() {
    let model = HireModel::<f64>::new(small_config(), schema(), 3).unwrap();
    let mut input = random_input(&mut rng(10), &model.schema, 2, 2);
    input.user_attrs[0][0] = 3;
    assert!(matches!(model.predict(&input), Err(hire_core::Error::CategoryOutOfRange { .. })));
    input.user_attrs[0] = vec![0];
    assert!(matches!(model.predict(&input), Err(hire_core::Error::SchemaMismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn joint_permutation_permutes_predictions(seed in any::<u64>(), n in 1usize..6, m in 1usize..6, residual in any::<bool>()) {
        let model = HireModel::<f64>::new(ModelConfig { residual, ..small_config() }, schema(), seed).unwrap();
        let mut r = rng(seed ^ 0x5eed);
        let input = random_input(&mut r, &model.schema, n, m);
        let mut pu: Vec<usize> = (0..n).collect();
        let mut pi: Vec<usize> = (0..m).collect();
        pu.shuffle(&mut r);
        pi.shuffle(&mut r);
        let y = model.predict(&input).unwrap();
        let yp = model.predict(&permute_input(&input, &pu, &pi)).unwrap();
        for c in 0..n * m {
            let src = pu[c / m] * m + pi[c % m];
            prop_assert!((yp.data()[c] - y.data()[src]).abs() < 1e-10);
        }
    }

    #[test]
    fn predictions_lie_inside_the_rating_range(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut model = HireModel::<f64>::new(small_config(), schema(), seed).unwrap();
        model.dec_w.data_mut().iter_mut().for_each(|w| *w *= scale);
        let input = random_input(&mut rng(seed), &model.schema, 3, 3);
        let y = model.predict(&input).unwrap();
        prop_assert!(y.data().iter().all(|&v| v > 0.0 && v < 5.0));
    }
}
