//! Shape-prior learning: the gradient-descent inner loop, the Adam outer
//! loop over the initialization, and the plain pretraining baseline.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::loss::{self, LossConfig};
use crate::math;
use crate::siren::{self, NetSpec};
use crate::tensor::{ParamVector, Tape, Tensor, Var};
use crate::volume::{self, make_task, ObservationSet, SamplerConfig, Task, VolumeGrid};

/// Smallest admissible learned inner step size.
pub const ALPHA_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaConfig {
    pub net: NetSpec,
    /// Inner gradient steps `L`.
    pub inner_steps: usize,
    /// Initial inner step size.
    pub alpha0: f64,
    /// Outer (Adam) learning rate.
    pub beta: f64,
    /// Passes over the training shapes.
    pub epochs: usize,
    /// Tasks averaged per outer step.
    pub meta_batch: usize,
    /// Differentiate through the inner trajectory.
    pub second_order: bool,
    /// Meta-learn the per-parameter inner step sizes.
    pub learn_alpha: bool,
    /// Adam learning rate of the step sizes.
    pub alpha_lr: f64,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            net: NetSpec::default(),
            inner_steps: 5,
            alpha0: 1e-5,
            beta: 1e-5,
            epochs: 2500,
            meta_batch: 1,
            second_order: true,
            learn_alpha: false,
            alpha_lr: 1e-5,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.loss.validate()?;
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::contract("alpha0 must be positive"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::contract("beta must be positive"));
        }
        if !(self.alpha_lr > 0.0 && self.alpha_lr.is_finite()) {
            return Err(Error::contract("alpha_lr must be positive"));
        }
        if self.meta_batch == 0 {
            return Err(Error::contract("meta_batch must be at least 1"));
        }
        Ok(())
    }
}

/// Adam moments for one parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(layout: &ParamVector) -> Self {
        AdamState {
            m: layout.zeros_like(),
            v: layout.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam step `θ ← θ − lr·m̂/(√v̂ + ε)`.
    pub fn update(&mut self, params: &mut ParamVector, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - math::pow(self.beta1, t);
        let c2 = 1.0 - math::pow(self.beta2, t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads)
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (((pi, &gi), mi), vi) in p
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (math::sqrt(vhat) + eps);
            }
        }
    }
}

/// The meta-learned initialization with its inner step sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaState {
    pub spec: NetSpec,
    pub theta0: ParamVector,
    /// Per-parameter inner step sizes.
    pub alpha: ParamVector,
    pub outer_opt: AdamState,
    pub alpha_opt: AdamState,
    /// Completed epochs.
    pub epoch: u32,
}

impl MetaState {
    pub fn new(spec: NetSpec, theta0: ParamVector, alpha0: f64) -> Self {
        let alpha = theta0.full_like(alpha0);
        MetaState {
            spec,
            outer_opt: AdamState::new(&theta0),
            alpha_opt: AdamState::new(&theta0),
            alpha,
            theta0,
            epoch: 0,
        }
    }

    pub fn init(cfg: &MetaConfig) -> Result<Self> {
        cfg.validate()?;
        let net = siren::init_siren(cfg.net, cfg.seed)?;
        Ok(MetaState::new(cfg.net, net.params, cfg.alpha0))
    }
}

fn check_finite(t: &Tensor, step: usize, detail: &'static str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step, detail })
    }
}

/// `steps` updates `θ ← θ − α ⊙ ∇θ loss(θ)` for an arbitrary loss.
///
/// With `track_graph` the gradients are recorded so the result stays
/// differentiable through the whole trajectory; otherwise each gradient is a
/// constant and the result depends on the inputs only through the identity
/// path (and on `alpha` through the step).
pub fn inner_adapt_with<'t, F>(
    theta: &[Var<'t>],
    alpha: &[Var<'t>],
    steps: usize,
    track_graph: bool,
    loss_fn: F,
) -> Result<Vec<Var<'t>>>
where
    F: Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    if theta.len() != alpha.len() {
        return Err(Error::contract("alpha must match the parameter layout"));
    }
    let mut current: Vec<Var<'t>> = theta.to_vec();
    for step in 0..steps {
        let tape = match current.first() {
            Some(v) => v.tape(),
            None => return Ok(current),
        };
        let loss = loss_fn(&current)?;
        check_finite(&loss.value(), step, "inner loss")?;
        let grads: Vec<Var<'t>> = if track_graph {
            tape.grad_graph(loss, &current)?
        } else {
            tape.grad(loss, &current)?
                .into_iter()
                .map(|g| tape.constant(g))
                .collect()
        };
        let mut next = Vec::with_capacity(current.len());
        for ((p, g), a) in current.iter().zip(&grads).zip(alpha) {
            check_finite(&g.value(), step, "inner gradient")?;
            next.push(p.sub(a.mul(*g)?)?);
        }
        current = next;
    }
    Ok(current)
}

/// Inner loop on the occupancy objective over `context`.
pub fn inner_adapt<'t>(
    spec: &NetSpec,
    theta: &[Var<'t>],
    alpha: &[Var<'t>],
    context: &ObservationSet,
    steps: usize,
    cfg: &LossConfig,
    track_graph: bool,
) -> Result<Vec<Var<'t>>> {
    inner_adapt_with(theta, alpha, steps, track_graph, |p| {
        loss::total_loss(spec, p, context, cfg)
    })
}

/// Outer-loss value and its gradients with respect to the initialization
/// (and the step sizes, when requested).
#[derive(Clone, Debug)]
pub struct MetaGradient {
    pub loss: f64,
    pub theta: Vec<Tensor>,
    pub alpha: Option<Vec<Tensor>>,
}

/// Differentiates `outer(inner_adapt(θ₀))` with respect to `θ₀` (and `α`).
///
/// The closures receive the current parameters on a fresh tape.
pub fn meta_gradient_with<I, O>(
    theta0: &[Tensor],
    alpha: &[Tensor],
    steps: usize,
    second_order: bool,
    learn_alpha: bool,
    inner: I,
    outer: O,
) -> Result<MetaGradient>
where
    I: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
    O: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let theta: Vec<Var> = theta0.iter().map(|t| tape.param(t.clone())).collect();
    let alpha_vars: Vec<Var> = alpha
        .iter()
        .map(|a| {
            if learn_alpha {
                tape.param(a.clone())
            } else {
                tape.constant(a.clone())
            }
        })
        .collect();
    let adapted = inner_adapt_with(&theta, &alpha_vars, steps, second_order, &inner)?;
    let loss = outer(&adapted)?;
    let value = loss.value().item();
    if !value.is_finite() {
        return Err(Error::Divergence {
            step: steps,
            detail: "outer loss",
        });
    }
    let mut wrt = theta.clone();
    if learn_alpha {
        wrt.extend_from_slice(&alpha_vars);
    }
    let mut grads = tape.grad(loss, &wrt)?;
    for g in &grads {
        check_finite(g, steps, "outer gradient")?;
    }
    let alpha_grads = learn_alpha.then(|| grads.split_off(theta.len()));
    Ok(MetaGradient {
        loss: value,
        theta: grads,
        alpha: alpha_grads,
    })
}

/// Meta-gradient of one task: adapt on the context, score on the target.
pub fn task_meta_gradient(
    state: &MetaState,
    task: &Task,
    cfg: &MetaConfig,
) -> Result<MetaGradient> {
    let spec = state.spec;
    let theta: Vec<Tensor> = state.theta0.tensors().cloned().collect();
    let alpha: Vec<Tensor> = state.alpha.tensors().cloned().collect();
    meta_gradient_with(
        &theta,
        &alpha,
        cfg.inner_steps,
        cfg.second_order,
        cfg.learn_alpha,
        |p| loss::total_loss(&spec, p, &task.context, &cfg.loss),
        |p| loss::total_loss(&spec, p, &task.target, &cfg.loss),
    )
}

fn accumulate(acc: &mut Option<Vec<Tensor>>, grads: Vec<Tensor>) {
    match acc {
        None => *acc = Some(grads),
        Some(a) => {
            for (x, g) in a.iter_mut().zip(grads) {
                for (xi, gi) in x.data_mut().iter_mut().zip(g.data()) {
                    *xi += gi;
                }
            }
        }
    }
}

fn scale_all(grads: &mut [Tensor], s: f64) {
    for g in grads {
        for v in g.data_mut() {
            *v *= s;
        }
    }
}

/// Averages the meta-gradients of `tasks` and applies one Adam step to `θ₀`
/// (and to `α` when learned). Returns the mean outer loss. The state is left
/// untouched on error.
pub fn outer_step(state: &mut MetaState, tasks: &[Task], cfg: &MetaConfig) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::contract("outer step needs at least one task"));
    }
    let mut theta_acc = None;
    let mut alpha_acc = None;
    let mut loss_sum = 0.0;
    for task in tasks {
        let g = task_meta_gradient(state, task, cfg)?;
        loss_sum += g.loss;
        accumulate(&mut theta_acc, g.theta);
        if let Some(a) = g.alpha {
            accumulate(&mut alpha_acc, a);
        }
    }
    let k = tasks.len() as f64;
    let mut theta_grad = theta_acc.expect("nonempty");
    scale_all(&mut theta_grad, 1.0 / k);
    apply_update(
        state,
        &theta_grad,
        alpha_acc.map(|mut a| {
            scale_all(&mut a, 1.0 / k);
            a
        }),
        cfg,
    )?;
    Ok(loss_sum / k)
}

/// Applies precomputed (already averaged) gradients.
pub fn apply_update(
    state: &mut MetaState,
    theta_grad: &[Tensor],
    alpha_grad: Option<Vec<Tensor>>,
    cfg: &MetaConfig,
) -> Result<()> {
    let mut next = state.clone();
    next.outer_opt
        .update(&mut next.theta0, theta_grad, cfg.beta);
    if let Some(ag) = alpha_grad {
        next.alpha_opt.update(&mut next.alpha, &ag, cfg.alpha_lr);
        for t in next.alpha.tensors_mut() {
            for v in t.data_mut() {
                *v = v.max(ALPHA_FLOOR);
            }
        }
    }
    if !next.theta0.is_finite() || !next.alpha.is_finite() {
        return Err(Error::Divergence {
            step: next.outer_opt.step as usize,
            detail: "initialization after outer update",
        });
    }
    *state = next;
    Ok(())
}

/// Mean outer loss of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub outer_loss: f64,
    pub wall_seconds: f64,
}

/// Result of an aborted training run: the error and the last finite state.
#[derive(Clone, Debug)]
pub struct TrainFailure<S> {
    pub error: Error,
    pub last_state: S,
    pub log: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub state: S,
    pub log: Vec<EpochRecord>,
}

fn shuffled_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Data stream of one epoch, separate from the parameter-initialization
/// stream, so a resumed run draws exactly what an uninterrupted one would.
fn epoch_rng(seed: u64, epoch: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    rng
}

/// Runs `cfg.epochs` passes over `dataset`; each pass visits the shapes in a
/// fresh random order, `meta_batch` tasks per outer step.
pub fn meta_train(
    dataset: &[VolumeGrid],
    sampler: &SamplerConfig,
    cfg: &MetaConfig,
    clock: &dyn Clock,
    on_epoch: &mut dyn FnMut(&EpochRecord, &MetaState),
) -> core::result::Result<TrainOutcome<MetaState>, TrainFailure<MetaState>> {
    let init = MetaState::init(cfg).and_then(|s| {
        if dataset.is_empty() {
            Err(Error::contract("training set is empty"))
        } else {
            Ok(s)
        }
    });
    let state = match init {
        Ok(s) => s,
        Err(error) => {
            return Err(TrainFailure {
                error,
                last_state: MetaState::new(cfg.net, siren::zero_params(&cfg.net), cfg.alpha0),
                log: Vec::new(),
            })
        }
    };
    meta_train_from(state, dataset, sampler, cfg, clock, on_epoch)
}

/// Continues meta-training from an existing state.
pub fn meta_train_from(
    mut state: MetaState,
    dataset: &[VolumeGrid],
    sampler: &SamplerConfig,
    cfg: &MetaConfig,
    clock: &dyn Clock,
    on_epoch: &mut dyn FnMut(&EpochRecord, &MetaState),
) -> core::result::Result<TrainOutcome<MetaState>, TrainFailure<MetaState>> {
    let mut log = Vec::new();
    let fail = |error, state: &MetaState, log: &Vec<EpochRecord>| TrainFailure {
        error,
        last_state: state.clone(),
        log: log.clone(),
    };
    if dataset.is_empty() {
        return Err(fail(Error::contract("training set is empty"), &state, &log));
    }
    if let Err(e) = cfg.validate() {
        return Err(fail(e, &state, &log));
    }
    while (state.epoch as usize) < cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, state.epoch);
        let order = shuffled_order(dataset.len(), &mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for batch in order.chunks(cfg.meta_batch) {
            let tasks: Result<Vec<Task>> = batch
                .iter()
                .map(|&i| make_task(&dataset[i], sampler, i, &mut rng))
                .collect();
            let tasks = match tasks {
                Ok(t) => t,
                Err(e) => return Err(fail(e, &state, &log)),
            };
            match outer_step(&mut state, &tasks, cfg) {
                Ok(l) => loss_sum += l,
                Err(e) => return Err(fail(e, &state, &log)),
            }
            steps += 1;
        }
        state.epoch += 1;
        let rec = EpochRecord {
            epoch: state.epoch,
            outer_loss: loss_sum / steps as f64,
            wall_seconds: clock.seconds(),
        };
        on_epoch(&rec, &state);
        log.push(rec);
    }
    Ok(TrainOutcome { state, log })
}

/// Plain Adam training of a single network on the objective over uniform
/// batches of every training shape's full grid: one step per shape per
/// epoch, `sampler.n_target` points per batch.
pub fn pretrain_baseline(
    dataset: &[VolumeGrid],
    sampler: &SamplerConfig,
    cfg: &MetaConfig,
    clock: &dyn Clock,
    on_epoch: &mut dyn FnMut(&EpochRecord, &ParamVector),
) -> core::result::Result<TrainOutcome<ParamVector>, TrainFailure<ParamVector>> {
    let mut params = match siren::init_siren(cfg.net, cfg.seed) {
        Ok(n) => n.params,
        Err(error) => {
            return Err(TrainFailure {
                error,
                last_state: siren::zero_params(&cfg.net),
                log: Vec::new(),
            })
        }
    };
    let mut log = Vec::new();
    let fail = |error, p: &ParamVector, log: &Vec<EpochRecord>| TrainFailure {
        error,
        last_state: p.clone(),
        log: log.clone(),
    };
    if dataset.is_empty() {
        return Err(fail(
            Error::contract("training set is empty"),
            &params,
            &log,
        ));
    }
    if let Err(e) = cfg.validate() {
        return Err(fail(e, &params, &log));
    }
    let mut opt = AdamState::new(&params);
    for epoch in 0..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch as u32);
        let order = shuffled_order(dataset.len(), &mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let step = (|| -> Result<(f64, Vec<Tensor>)> {
                let batch = volume::sample_uniform(&dataset[i], sampler.n_target, &mut rng)?;
                let tape = Tape::new();
                let vars = params.to_params(&tape);
                let l = loss::total_loss(&cfg.net, &vars, &batch, &cfg.loss)?;
                let v = l.value().item();
                let g = tape.grad(l, &vars)?;
                if !v.is_finite() || !g.iter().all(Tensor::is_finite) {
                    return Err(Error::Divergence {
                        step: opt.step as usize,
                        detail: "pretraining loss",
                    });
                }
                Ok((v, g))
            })();
            match step {
                Ok((v, g)) => {
                    let mut next = params.clone();
                    opt.update(&mut next, &g, cfg.beta);
                    if !next.is_finite() {
                        return Err(fail(
                            Error::Divergence {
                                step: opt.step as usize,
                                detail: "pretrained parameters",
                            },
                            &params,
                            &log,
                        ));
                    }
                    params = next;
                    loss_sum += v;
                }
                Err(e) => return Err(fail(e, &params, &log)),
            }
        }
        let rec = EpochRecord {
            epoch: epoch as u32 + 1,
            outer_loss: loss_sum / dataset.len() as f64,
            wall_seconds: clock.seconds(),
        };
        on_epoch(&rec, &params);
        log.push(rec);
    }
    Ok(TrainOutcome { state: params, log })
}
