//! Masked-MSE training with LAMB, Lookahead, a flat-then-cosine learning
//! rate and global gradient clipping.

use std::io::Write;
use std::path::Path;

use hire_tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::{model_checkpoint, model_from_checkpoint, Checkpoint};
use crate::data::RatingGraph;
use crate::embedding::ContextInput;
use crate::model::HireModel;
use crate::sampler::{assign_masks, PredictionContext, TrainingSampler};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lookahead_alpha: f64,
    pub lookahead_k: usize,
    pub clip_norm: f64,
    pub flat_fraction: f64,
    /// Upper bound of the LAMB trust ratio.
    pub max_trust: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            lookahead_alpha: 0.5,
            lookahead_k: 6,
            clip_norm: 1.0,
            flat_fraction: 0.7,
            max_trust: 10.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad("learning rate must be a non-negative number");
        }
        if !(self.flat_fraction > 0.0 && self.flat_fraction < 1.0) {
            return bad("flat fraction must lie in (0, 1)");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip norm must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lookahead_alpha) || self.lookahead_k == 0 {
            return bad("lookahead alpha must lie in [0, 1] and k must be positive");
        }
        if [self.eps, self.max_trust].iter().any(|v| v.is_nan() || *v <= 0.0) {
            return bad("eps and trust bound must be positive");
        }
        Ok(())
    }
}

/// Learning rate before update `step` of `total`: flat for the first
/// `flat_fraction` of the run, then a half cosine down to zero.
pub fn lr_at(step: usize, total: usize, cfg: &OptimizerConfig) -> f64 {
    if step >= total {
        return 0.0;
    }
    let flat = cfg.flat_fraction * total as f64;
    let s = step as f64;
    if s <= flat {
        return cfg.base_lr;
    }
    let progress = (s - flat) / (total as f64 - flat);
    cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

pub fn global_norm<T: Scalar>(grads: &[Vec<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| {
            let v = x.as_f64();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        scale_all(grads, T::from_f64(max_norm / norm));
        // Rounding can leave the norm a few ulps above the bound.
        let mut shrink = f64::EPSILON;
        while global_norm(grads) > max_norm && shrink < 1e-3 {
            scale_all(grads, T::from_f64(1.0 - shrink));
            shrink *= 2.0;
        }
    }
    norm
}

fn scale_all<T: Scalar>(grads: &mut [Vec<T>], c: T) {
    grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|x| *x = *x * c);
}

/// Mean squared error over masked cells; `None` when the mask is empty.
pub fn masked_mse(pred: &[f64], truth: &[f64], mask: &[bool]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((p, t), m) in pred.iter().zip(truth).zip(mask) {
        if *m {
            sum += (p - t) * (p - t);
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Batch loss: the mean of per-context losses.
pub fn batch_loss(per_context: &[f64]) -> Result<f64> {
    if per_context.is_empty() {
        return Err(Error::EmptyQuery);
    }
    Ok(per_context.iter().sum::<f64>() / per_context.len() as f64)
}

/// LAMB moment state.
#[derive(Debug, Clone, PartialEq)]
pub struct Lamb<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Updates applied so far.
    pub t: u64,
}

impl<T: Scalar> Lamb<T> {
    pub fn new(shapes: &[usize]) -> Self {
        Lamb {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    /// One layer-wise adaptive update.
    ///
    /// Each tensor moves by `lr·trust·u`, where `u` is the bias-corrected
    /// Adam direction and `trust = ‖w‖/‖u‖` clamped to `[0, max_trust]`
    /// (1 when either norm is zero).
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Vec<T>], lr: f64, cfg: &OptimizerConfig, names: &[String]) -> Result<()> {
        for (k, g) in grads.iter().enumerate() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(names.get(k).cloned().unwrap_or_else(|| k.to_string())));
            }
        }
        self.t += 1;
        let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
        let one = T::one();
        let c1 = T::from_f64(1.0 - cfg.beta1.powi(self.t as i32));
        let c2 = T::from_f64(1.0 - cfg.beta2.powi(self.t as i32));
        let eps = T::from_f64(cfg.eps);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            let mut u = Vec::with_capacity(g.len());
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                u.push(mh / (vh.sqrt() + eps));
            }
            let w_norm = p.sq_norm().sqrt();
            let u_norm = u.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
            let trust = if w_norm == 0.0 || u_norm == 0.0 {
                1.0
            } else {
                (w_norm / u_norm).clamp(0.0, cfg.max_trust)
            };
            let scale = T::from_f64(lr * trust);
            for (w, du) in p.data_mut().iter_mut().zip(&u) {
                *w = *w - scale * *du;
            }
        }
        Ok(())
    }
}

/// Every `k` steps: `slow += alpha·(fast − slow)`, then `fast = slow`.
/// Returns whether a sync happened at `step` (counted from 1).
pub fn lookahead_sync<T: Scalar>(fast: &mut [T], slow: &mut [T], alpha: f64, k: usize, step: usize) -> bool {
    if k == 0 || step == 0 || !step.is_multiple_of(k) {
        return false;
    }
    let a = T::from_f64(alpha);
    for (f, s) in fast.iter_mut().zip(slow.iter_mut()) {
        *s = *s + a * (*f - *s);
        *f = *s;
    }
    true
}

/// Slow weights of the Lookahead wrapper.
#[derive(Debug, Clone, PartialEq)]
pub struct Lookahead<T> {
    pub slow: Vec<Vec<T>>,
}

impl<T: Scalar> Lookahead<T> {
    pub fn new(params: &[&mut Tensor<T>]) -> Self {
        Lookahead {
            slow: params.iter().map(|p| p.data().to_vec()).collect(),
        }
    }

    pub fn after_step(&mut self, params: &mut [&mut Tensor<T>], alpha: f64, k: usize, step: usize) -> bool {
        let mut synced = false;
        for (p, s) in params.iter_mut().zip(self.slow.iter_mut()) {
            synced |= lookahead_sync(p.data_mut(), s, alpha, k, step);
        }
        synced
    }
}

/// Supplies training contexts.
pub trait ContextSource: Sync {
    fn graph(&self) -> &RatingGraph;
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<PredictionContext>;
}

impl ContextSource for TrainingSampler {
    fn graph(&self) -> &RatingGraph {
        &self.graph
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<PredictionContext> {
        self.sample(rng)
    }
}

/// Cycles through fixed contexts, optionally re-drawing their masks.
#[derive(Debug, Clone)]
pub struct FixedContexts {
    pub graph: RatingGraph,
    pub contexts: Vec<PredictionContext>,
    /// When set, masks are re-drawn with this support fraction on each draw.
    pub redraw_support: Option<f64>,
}

impl ContextSource for FixedContexts {
    fn graph(&self) -> &RatingGraph {
        &self.graph
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<PredictionContext> {
        use rand::Rng;
        if self.contexts.is_empty() {
            return Err(Error::Config("no fixed contexts".into()));
        }
        let ctx = self.contexts[rng.gen_range(0..self.contexts.len())].clone();
        Ok(match self.redraw_support {
            Some(p) => assign_masks(ctx, p, rng),
            None => ctx,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRule {
    pub window: usize,
    pub tolerance: f64,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        ConvergenceRule {
            window: 100,
            tolerance: 1e-4,
        }
    }
}

impl ConvergenceRule {
    /// Relative change between the last two non-overlapping windows of the
    /// loss trace, checked when the trace length is a multiple of `window`.
    pub fn converged(&self, losses: &[f64]) -> bool {
        let w = self.window;
        let s = losses.len();
        if w == 0 || s < 2 * w || !s.is_multiple_of(w) {
            return false;
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let recent = mean(&losses[s - w..]);
        let before = mean(&losses[s - 2 * w..s - w]);
        (recent - before).abs() / before.abs().max(f64::MIN_POSITIVE) < self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub opt: OptimizerConfig,
    pub total_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub convergence: Option<ConvergenceRule>,
    /// Attempts to draw a context with at least one query cell.
    pub max_draws: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            opt: OptimizerConfig::default(),
            total_steps: 3000,
            batch_size: 4,
            seed: 0,
            convergence: Some(ConvergenceRule::default()),
            max_draws: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.opt.validate()?;
        if self.total_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut out = String::from("step,lr,loss\n");
    for r in trace {
        out.push_str(&format!("{},{:e},{}\n", r.step, r.lr, r.loss));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub converged: bool,
    pub final_loss: f64,
}

/// Per-step random stream: step `s` always sees the same contexts.
fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

fn draw_with_query(source: &dyn ContextSource, rng: &mut ChaCha8Rng, max_draws: usize) -> Result<PredictionContext> {
    for _ in 0..max_draws.max(1) {
        let ctx = source.draw(rng)?;
        if ctx.query_count() > 0 {
            return Ok(ctx);
        }
    }
    Err(Error::EmptyQuery)
}

/// Model plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: HireModel<T>,
    pub cfg: TrainConfig,
    pub lamb: Lamb<T>,
    pub lookahead: Lookahead<T>,
    /// Completed optimizer steps.
    pub step: usize,
    pub trace: Vec<TraceRow>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(mut model: HireModel<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = model.params_mut();
        let sizes: Vec<usize> = params.iter().map(|p| p.numel()).collect();
        let lookahead = Lookahead::new(&params);
        Ok(Trainer {
            model,
            cfg,
            lamb: Lamb::new(&sizes),
            lookahead,
            step: 0,
            trace: Vec::new(),
        })
    }

    /// Batch loss and averaged gradients for the contexts of step `step`.
    pub fn batch_gradients(&self, source: &dyn ContextSource, step: usize) -> Result<(f64, Vec<Vec<T>>)> {
        let mut rng = step_rng(self.cfg.seed, step);
        let contexts = (0..self.cfg.batch_size)
            .map(|_| draw_with_query(source, &mut rng, self.cfg.max_draws))
            .collect::<Result<Vec<_>>>()?;
        let g = source.graph();
        let results = contexts
            .par_iter()
            .map(|ctx| {
                let input = ContextInput::new(g, ctx);
                let truth: Vec<T> = ctx.truth.iter().map(|t| T::from_f64(t.unwrap_or(0.0) as f64)).collect();
                self.model.loss_and_grads(&input, &truth, &ctx.query)
            })
            .collect::<Vec<_>>();
        let mut losses = Vec::new();
        let mut total: Option<Vec<Vec<T>>> = None;
        for r in results {
            let Some((loss, grads)) = r? else { continue };
            losses.push(loss);
            match &mut total {
                None => total = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.iter_mut().zip(g).for_each(|(x, y)| *x = *x + *y);
                    }
                }
            }
        }
        let loss = batch_loss(&losses)?;
        let mut grads = total.ok_or(Error::EmptyQuery)?;
        let inv = T::from_f64(1.0 / losses.len() as f64);
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|x| *x = *x * inv);
        Ok((loss, grads))
    }

    /// One optimizer step. On a non-finite loss or gradient the model is
    /// left at its last good state and an error is returned.
    pub fn train_step(&mut self, source: &dyn ContextSource) -> Result<TraceRow> {
        let step = self.step;
        let lr = lr_at(step, self.cfg.total_steps, &self.cfg.opt);
        let (loss, mut grads) = self.batch_gradients(source, step)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let grad_norm = clip_global_norm(&mut grads, self.cfg.opt.clip_norm);
        let backup = (self.model.clone(), self.lamb.clone(), self.lookahead.clone());
        let names = self.model.param_names();
        let outcome = {
            let mut params = self.model.params_mut();
            self.lamb
                .step(&mut params, &grads, lr, &self.cfg.opt, &names)
                .map(|_| {
                    self.lookahead
                        .after_step(&mut params, self.cfg.opt.lookahead_alpha, self.cfg.opt.lookahead_k, step + 1);
                    params.iter().all(|p| p.is_finite())
                })
        };
        match outcome {
            Ok(true) => {}
            Ok(false) => {
                (self.model, self.lamb, self.lookahead) = backup;
                return Err(Error::Diverged { step, loss: f64::NAN });
            }
            Err(e) => {
                (self.model, self.lamb, self.lookahead) = backup;
                return Err(e);
            }
        }
        self.step += 1;
        let row = TraceRow {
            step,
            lr,
            loss,
            grad_norm,
        };
        self.trace.push(row);
        Ok(row)
    }

    /// Trains until `total_steps` or convergence.
    pub fn run(&mut self, source: &dyn ContextSource) -> Result<TrainSummary> {
        let mut converged = false;
        while self.step < self.cfg.total_steps {
            let row = self.train_step(source)?;
            if row.step % 100 == 0 {
                log::info!("step {} lr {:.2e} loss {:.5} |g| {:.3}", row.step, row.lr, row.loss, row.grad_norm);
            }
            if let Some(rule) = &self.cfg.convergence {
                let losses: Vec<f64> = self.trace.iter().map(|r| r.loss).collect();
                if rule.converged(&losses) {
                    log::info!("converged after {} steps", self.step);
                    converged = true;
                    break;
                }
            }
        }
        Ok(TrainSummary {
            steps: self.step,
            converged,
            final_loss: self.trace.last().map_or(f64::NAN, |r| r.loss),
        })
    }

    /// Model weights plus optimizer state in one container.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = model_checkpoint(&self.model);
        ck.meta.insert("opt.step".into(), self.step.to_string());
        ck.meta.insert("opt.lamb_t".into(), self.lamb.t.to_string());
        let named = self.model.named_params();
        for (k, (name, p)) in named.iter().enumerate() {
            let shape = p.shape();
            for (tag, data) in [("m", &self.lamb.m[k]), ("v", &self.lamb.v[k]), ("slow", &self.lookahead.slow[k])] {
                let t = Tensor::new(shape, data.clone()).expect("state matches parameter shape");
                ck.tensors.push((format!("opt.{tag}.{name}"), t.cast()));
            }
        }
        ck
    }

    /// Restores a trainer saved with [`checkpoint`](Self::checkpoint).
    pub fn from_checkpoint(ck: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let model: HireModel<T> = model_from_checkpoint(ck)?;
        let mut tr = Trainer::new(model, cfg)?;
        tr.step = ck.meta_parse("opt.step")?;
        tr.lamb.t = ck.meta_parse("opt.lamb_t")?;
        let names = tr.model.param_names();
        for (k, name) in names.iter().enumerate() {
            for tag in ["m", "v", "slow"] {
                let key = format!("opt.{tag}.{name}");
                let t = ck.get(&key).ok_or_else(|| Error::Format(format!("checkpoint lacks `{key}`")))?;
                let data: Vec<T> = t.cast::<T>().into_data();
                let slot = match tag {
                    "m" => &mut tr.lamb.m[k],
                    "v" => &mut tr.lamb.v[k],
                    _ => &mut tr.lookahead.slow[k],
                };
                if data.len() != slot.len() {
                    return Err(Error::Format(format!("`{key}` has the wrong size")));
                }
                *slot = data;
            }
        }
        Ok(tr)
    }
}
