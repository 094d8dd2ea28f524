//! Optimizer, schedule and training loop.

mod common;

use common::{random_graph, rank_one_problem};
use hire_core::checkpoint::Checkpoint;
use hire_core::data::{make_split, Scenario, SplitOptions};
use hire_core::embedding::Schema;
use hire_core::model::{HireModel, ModelConfig};
use hire_core::sampler::{SamplerKind, TrainingSampler};
use hire_core::train::{lr_at, ConvergenceRule, Lamb, OptimizerConfig, TrainConfig, Trainer};
use hire_core::Error;
use hire_tensor::Tensor;

fn small_config() -> ModelConfig {
    ModelConfig {
        feat_dim: 8,
        blocks: 2,
        heads: 2,
        head_dim: 4,
        mba_heads: 2,
        mba_head_dim: 4,
        residual: true,
    }
}

fn sampler() -> TrainingSampler {
    let g = random_graph(5, 30, 25, 0.3, &[3, 4], &[5]);
    let split = make_split(&g, Scenario::UserCold, &SplitOptions::default(), 1).unwrap();
    TrainingSampler::from_split(&g, &split, SamplerKind::Neighborhood, 6, 5, 0.1).unwrap()
}

fn trainer(src: &TrainingSampler, steps: usize, seed: u64) -> Trainer<f32> {
    let model = HireModel::new(small_config(), Schema::from_graph(&src.graph), 4).unwrap();
    let cfg = TrainConfig {
        total_steps: steps,
        batch_size: 3,
        seed,
        convergence: None,
        ..TrainConfig::default()
    };
    Trainer::new(model, cfg).unwrap()
}

#[test]
fn lamb_minimises_a_scalar_quadratic() {
    let cfg = OptimizerConfig {
        base_lr: 0.05,
        ..OptimizerConfig::default()
    };
    let mut w = Tensor::new(&[1], vec![0.5f64]).unwrap();
    let mut lamb = Lamb::new(&[1]);
    let names = vec!["w".to_string()];
    for step in 0..500 {
        let g = 2.0 * (w.data()[0] - 3.0);
        lamb.step(&mut [&mut w], &[vec![g]], lr_at(step, 500, &cfg), &cfg, &names).unwrap();
    }
    assert!((w.data()[0] - 3.0).abs() < 1e-2, "w = {}", w.data()[0]);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let src = sampler();
    let mut a = trainer(&src, 12, 9);
    let mut b = trainer(&src, 12, 9);
    a.run(&src).unwrap();
    b.run(&src).unwrap();
    let bits = |t: &Trainer<f32>| t.trace.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.model, b.model);
    let mut c = trainer(&src, 12, 10);
    c.run(&src).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn restored_state_continues_the_same_trajectory() {
    let src = sampler();
    let mut full = trainer(&src, 20, 3);
    full.run(&src).unwrap();

    let mut first = trainer(&src, 20, 3);
    for _ in 0..9 {
        first.train_step(&src).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    first.checkpoint().write(&path).unwrap();
    let mut resumed = Trainer::<f32>::from_checkpoint(&Checkpoint::read(&path).unwrap(), first.cfg.clone()).unwrap();
    assert_eq!(resumed.step, 9);
    resumed.run(&src).unwrap();
    let tail: Vec<u64> = full.trace[9..].iter().map(|r| r.loss.to_bits()).collect();
    let rest: Vec<u64> = resumed.trace.iter().map(|r| r.loss.to_bits()).collect();
    assert_eq!(tail, rest);
    assert_eq!(full.model, resumed.model);
    assert_eq!(full.lamb, resumed.lamb);
    assert_eq!(full.lookahead, resumed.lookahead);
}

#[test]
fn overfit_loss_settles_window_by_window() {
    let src = rank_one_problem(1);
    let model = HireModel::<f32>::new(ModelConfig::default(), Schema::from_graph(&src.graph), 3).unwrap();
    let cfg = TrainConfig {
        total_steps: 200,
        batch_size: 1,
        seed: 2,
        convergence: None,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(model, cfg).unwrap();
    tr.run(&src).unwrap();
    let losses: Vec<f64> = tr.trace.iter().map(|r| r.loss).collect();
    let means: Vec<f64> = losses[50..].chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for pair in means.windows(2) {
        assert!(pair[1] <= 1.05 * pair[0], "window means {means:?}");
    }
}

#[test]
fn non_finite_loss_stops_without_touching_the_model() {
    let src = sampler();
    let mut tr = trainer(&src, 5, 1);
    tr.model.dec_b.data_mut()[0] = f32::NAN;
    let before = tr.model.clone();
    assert!(matches!(tr.train_step(&src), Err(Error::Diverged { step: 0, .. })));
    assert_eq!(tr.step, 0);
    assert_eq!(format!("{:?}", tr.model), format!("{before:?}"));
}

#[test]
fn convergence_rule_ends_a_flat_run() {
    let src = rank_one_problem(2);
    let model = HireModel::<f32>::new(small_config(), Schema::from_graph(&src.graph), 1).unwrap();
    let cfg = TrainConfig {
        opt: OptimizerConfig {
            base_lr: 0.0,
            ..OptimizerConfig::default()
        },
        total_steps: 50,
        batch_size: 1,
        seed: 0,
        convergence: Some(ConvergenceRule {
            window: 5,
            tolerance: 1e-4,
        }),
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(model, cfg).unwrap();
    let summary = tr.run(&src).unwrap();
    assert!(summary.converged);
    assert_eq!(summary.steps, 10);
}

#[test]
fn trace_csv_has_the_documented_columns() {
    let src = sampler();
    let mut tr = trainer(&src, 3, 1);
    tr.run(&src).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("trace.csv");
    hire_core::train::write_trace_csv(&p, &tr.trace).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,lr,loss");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,"));
}

proptest::proptest! {
    #[test]
    fn clipped_norm_never_exceeds_the_bound(
        g in proptest::collection::vec(proptest::collection::vec(-1e3f32..1e3, 1..30), 1..5),
        bound in 0.01f64..10.0,
    ) {
        let mut g = g;
        let before = hire_core::train::clip_global_norm(&mut g, bound);
        let after = hire_core::train::global_norm(&g);
        proptest::prop_assert!(after <= bound);
        if before <= bound {
            proptest::prop_assert_eq!(after, before);
        } else {
            proptest::prop_assert!(after > bound * (1.0 - 1e-5));
        }
    }
}
