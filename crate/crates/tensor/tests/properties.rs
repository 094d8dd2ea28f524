use hire_tensor::{Tape, Tensor};
use proptest::prelude::*;

fn sorted_bits(v: &[f64]) -> Vec<u64> {
    let mut b: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
    b.sort_unstable();
    b
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..5,
        cols in 1usize..9,
        seed in proptest::collection::vec(-1.0e4f64..1.0e4, 40),
    ) {
        let data: Vec<f64> = (0..rows * cols).map(|i| seed[i % seed.len()]).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[rows, cols], data).unwrap());
        let y = tape.softmax_rows(x).unwrap();
        for row in tape.value(y).data().chunks(cols) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn structural_ops_preserve_elements(
        dims in proptest::collection::vec(1usize..5, 3),
        values in proptest::collection::vec(-10.0f64..10.0, 64),
    ) {
        let n: usize = dims.iter().product();
        let data: Vec<f64> = (0..n).map(|i| values[i % values.len()] + i as f64).collect();
        let expected = sorted_bits(&data);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&dims, data).unwrap());
        let p = tape.permute(x, &[1, 2, 0]).unwrap();
        prop_assert_eq!(sorted_bits(tape.value(p).data()), expected.clone());
        let r = tape.reshape(x, &[n]).unwrap();
        prop_assert_eq!(sorted_bits(tape.value(r).data()), expected.clone());
        let s = tape.stack(&[x, x], 2).unwrap();
        let mut doubled = expected.clone();
        doubled.extend(expected.iter().copied());
        doubled.sort_unstable();
        prop_assert_eq!(sorted_bits(tape.value(s).data()), doubled);
    }
}
