//! Context tensor construction.

mod common;

use hire_core::embedding::{build_context_tensor, encode_user, ContextInput, EncoderParams, Schema};
use common::random_input;
use hire_tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn schema(user_cards: Vec<usize>, item_cards: Vec<usize>) -> Schema {
    Schema {
        user_cards,
        item_cards,
        r_max: 5,
    }
}

fn build(p: &EncoderParams<f64>, input: &ContextInput) -> Tensor<f64> {
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape, false);
    let h = build_context_tensor(&mut tape, &vars, input).unwrap();
    tape.value(h).clone()
}

#[test]
fn two_by_two_context_with_two_attributes_each_is_80_wide() {
    let s = schema(vec![2, 3], vec![4, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = EncoderParams::init(&s, 16, &mut rng).unwrap();
    assert_eq!(p.e(), 80);
    let h = build(&p, &random_input(&mut rng, &s, 2, 2));
    assert_eq!(h.shape(), &[2, 2, 80]);
}

#[test]
fn zero_weights_give_a_zero_user_vector() {
    let s = schema(vec![3, 2], vec![2]);
    let mut p = EncoderParams::<f64>::init(&s, 16, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    p.user.iter_mut().for_each(|t| t.data_mut().fill(0.0));
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape, false);
    let v = encode_user(&mut tape, &vars, &[1, 1]).unwrap();
    assert_eq!(tape.value(v).data(), &[0.0; 32][..]);
}

#[test]
fn identical_items_give_identical_columns() {
    let s = schema(vec![3], vec![4, 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = EncoderParams::init(&s, 8, &mut rng).unwrap();
    let mut input = random_input(&mut rng, &s, 3, 3);
    input.item_attrs[2] = input.item_attrs[0].clone();
    for k in 0..3 {
        input.rating_rows[k * 3 + 2] = input.rating_rows[k * 3];
    }
    let h = build(&p, &input);
    let e = p.e();
    for k in 0..3 {
        let cell = |j: usize| &h.data()[(k * 3 + j) * e..(k * 3 + j + 1) * e];
        assert_eq!(cell(0), cell(2));
    }
}

#[test]
fn masked_target_rating_block_is_zero() {
    let s = schema(vec![2], vec![2]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = EncoderParams::init(&s, 16, &mut rng).unwrap();
    let mut input = random_input(&mut rng, &s, 2, 2);
    input.rating_rows = vec![None, Some(2), Some(5), Some(0)];
    let h = build(&p, &input);
    let e = p.e();
    assert!(h.data()[e - 16..e].iter().all(|&x| x == 0.0));
    assert_eq!(&h.data()[2 * e - 16..2 * e], &p.rating.data()[2 * 16..3 * 16]);
    // the unobserved sentinel is the extra last row
    assert_eq!(&h.data()[3 * e - 16..3 * e], &p.rating.data()[5 * 16..6 * 16]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn swapping_entities_only_permutes_cells(seed in any::<u64>(), n in 2usize..5, m in 2usize..5) {
        let s = schema(vec![3, 2], vec![4]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = EncoderParams::init(&s, 4, &mut rng).unwrap();
        let input = random_input(&mut rng, &s, n, m);
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..m));
        let mut swapped = input.clone();
        swapped.user_attrs.swap(0, a);
        swapped.item_attrs.swap(0, b);
        let pu: Vec<usize> = (0..n).map(|k| if k == 0 { a } else if k == a { 0 } else { k }).collect();
        let pi: Vec<usize> = (0..m).map(|j| if j == 0 { b } else if j == b { 0 } else { j }).collect();
        swapped.rating_rows = (0..n * m).map(|c| input.rating_rows[pu[c / m] * m + pi[c % m]]).collect();
        let (h, hs) = (build(&p, &input), build(&p, &swapped));
        let e = p.e();
        prop_assert_eq!(hs.shape(), h.shape());
        for c in 0..n * m {
            let src = pu[c / m] * m + pi[c % m];
            prop_assert_eq!(&hs.data()[c * e..(c + 1) * e], &h.data()[src * e..(src + 1) * e]);
        }
    }
}
