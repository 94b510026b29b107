//! Test-time reconstruction: adapt an initialization to sparse observations,
//! evaluate the adapted network on the full grid and threshold it.

use alloc::vec::Vec;

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::loss::{self, LossConfig};
use crate::meta::AdamState;
use crate::metrics::{self, MetricsRecord};
use crate::siren::{self, NetSpec};
use crate::tensor::{ParamVector, Shape, Tape, Tensor};
use crate::volume::{normalize_axis, ObservationSet, VolumeGrid};

/// Minimum decrease of the context loss that counts as progress.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateRule {
    /// `θ ← θ − α ⊙ ∇L`, the inner-loop rule.
    InnerSgd,
    Adam,
}

impl UpdateRule {
    pub fn name(self) -> &'static str {
        match self {
            UpdateRule::InnerSgd => "inner-sgd",
            UpdateRule::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<UpdateRule> {
        match s {
            "inner-sgd" => Some(UpdateRule::InnerSgd),
            "adam" => Some(UpdateRule::Adam),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    pub max_steps: usize,
    pub update_rule: UpdateRule,
    /// Adam learning rate, or the inner-sgd step when no per-parameter
    /// step sizes are supplied.
    pub step_size: f64,
    pub patience: usize,
    pub threshold: f64,
    /// Steps whose parameters are kept; the stopping step is always kept.
    pub record_steps: Vec<usize>,
    pub loss: LossConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            max_steps: 100,
            update_rule: UpdateRule::InnerSgd,
            step_size: 1e-5,
            patience: 10,
            threshold: 0.5,
            record_steps: alloc::vec![1, 50, 100],
            loss: LossConfig::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::contract("patience must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::contract("threshold must lie in (0, 1)"));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::contract("step_size must be finite and non-negative"));
        }
        self.loss.validate()
    }
}

/// Parameters kept at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub context_loss: f64,
    pub params: ParamVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adaptation {
    /// Context loss after each step, index 0 being the initialization.
    pub losses: Vec<f64>,
    /// Clock reading after each step, index 0 at the start.
    pub seconds: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub converged_at: usize,
}

impl Adaptation {
    pub fn snapshot(&self, step: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.step == step)
    }

    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots
            .last()
            .expect("the stopping step is always recorded")
    }
}

/// Partial trajectory of an adaptation that hit a non-finite loss.
#[derive(Clone, Debug)]
pub struct AdaptFailure {
    pub error: Error,
    pub partial: Adaptation,
}

impl From<AdaptFailure> for Error {
    fn from(f: AdaptFailure) -> Error {
        f.error
    }
}

/// Whether the last `patience` steps failed to beat the best earlier loss.
pub fn stalled(losses: &[f64], patience: usize) -> bool {
    if losses.len() <= patience {
        return false;
    }
    let split = losses.len() - patience;
    let best_before = losses[..split]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    losses[split..]
        .iter()
        .all(|&l| l >= best_before - MIN_IMPROVEMENT)
}

/// Runs the update rule on the context loss until `max_steps` or until the
/// loss stalls for `patience` consecutive steps. `on_step` sees the
/// parameters after every step (step 0 is the initialization) and may end
/// the run early by returning `false`.
pub fn adapt(
    spec: &NetSpec,
    init: &ParamVector,
    obs: &ObservationSet,
    cfg: &AdaptConfig,
    alpha: Option<&ParamVector>,
    clock: &dyn Clock,
    on_step: &mut dyn FnMut(usize, &ParamVector, f64) -> bool,
) -> core::result::Result<Adaptation, AdaptFailure> {
    let mut out = Adaptation {
        losses: Vec::new(),
        seconds: alloc::vec![clock.seconds()],
        snapshots: Vec::new(),
        converged_at: 0,
    };
    let fail = |error, out: Adaptation| {
        Err(AdaptFailure {
            error,
            partial: out,
        })
    };
    if let Err(e) = cfg.validate() {
        return fail(e, out);
    }
    if let Some(a) = alpha {
        if !a.same_layout(init) {
            return fail(
                Error::contract("alpha must match the parameter layout"),
                out,
            );
        }
    }
    let mut params = init.clone();
    let mut opt = AdamState::new(init);
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut step = 0usize;
    loop {
        let last = step == cfg.max_steps;
        let (value, grads) = match loss_and_grad(spec, &params, obs, &cfg.loss, !last) {
            Ok(v) => v,
            Err(e) => return fail(e, out),
        };
        if !value.is_finite() {
            return fail(
                Error::Divergence {
                    step,
                    detail: "context loss",
                },
                out,
            );
        }
        out.losses.push(value);
        if step > 0 {
            out.seconds.push(clock.seconds());
        }
        if value < best - MIN_IMPROVEMENT {
            best = value;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let keep_going = on_step(step, &params, value);
        let stop = last || since_best >= cfg.patience || !keep_going;
        if stop || cfg.record_steps.contains(&step) {
            out.snapshots.push(Snapshot {
                step,
                context_loss: value,
                params: params.clone(),
            });
        }
        if stop {
            out.converged_at = step;
            return Ok(out);
        }
        match cfg.update_rule {
            UpdateRule::InnerSgd => {
                for (i, (p, g)) in params.tensors_mut().zip(&grads).enumerate() {
                    let a = alpha.map(|a| a.entries()[i].1.data());
                    for (j, (pi, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let step_size = a.map_or(cfg.step_size, |a| a[j]);
                        *pi -= step_size * gi;
                    }
                }
            }
            UpdateRule::Adam => opt.update(&mut params, &grads, cfg.step_size),
        }
        step += 1;
    }
}

fn loss_and_grad(
    spec: &NetSpec,
    params: &ParamVector,
    obs: &ObservationSet,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let vars = params.to_params(&tape);
    let l = loss::total_loss(spec, &vars, obs, cfg)?;
    let v = l.value().item();
    if !with_grad || !v.is_finite() {
        return Ok((v, Vec::new()));
    }
    Ok((v, tape.grad(l, &vars)?))
}

/// Occupancy probabilities at every voxel centre, `chunk` voxels per
/// forward pass.
pub fn evaluate_grid(
    spec: &NetSpec,
    params: &ParamVector,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    chunk: usize,
) -> Result<VolumeGrid> {
    let mut grid = VolumeGrid::zeros(dims, spacing_mm)?;
    let n = grid.len();
    let chunk = chunk.max(1);
    let mut start = 0;
    let mut coords = Vec::with_capacity(3 * chunk.min(n));
    while start < n {
        let end = (start + chunk).min(n);
        coords.clear();
        for flat in start..end {
            let idx = grid.unflat_index(flat);
            for a in 0..3 {
                coords.push(normalize_axis(idx[a], dims[a]));
            }
        }
        let x = Tensor::new(Shape::matrix(end - start, 3), coords.clone())?;
        let p = siren::predict(spec, params, &x)?;
        grid.values_mut()[start..end].copy_from_slice(p.data());
        start = end;
    }
    Ok(grid)
}

/// Binary mask of voxels with probability strictly above `threshold`.
pub fn binarize(probs: &VolumeGrid, threshold: f64) -> VolumeGrid {
    let mut out = probs.clone();
    for v in out.values_mut() {
        *v = (*v > threshold) as u8 as f64;
    }
    out
}

/// Default number of voxels per forward pass in grid evaluation.
pub const EVAL_CHUNK: usize = 4096;

/// Source of the reference mask, read only when metrics are computed.
pub trait GroundTruth {
    fn mask(&self) -> &VolumeGrid;
}

impl GroundTruth for VolumeGrid {
    fn mask(&self) -> &VolumeGrid {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub context_loss: f64,
    /// Adaptation time up to this step plus the grid evaluation.
    pub wall_seconds: f64,
    pub metrics: Option<MetricsRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconResult {
    /// Mask at the stopping step.
    pub mask: VolumeGrid,
    pub per_step: Vec<StepRecord>,
    pub converged_at: usize,
    /// Context loss after every step.
    pub losses: Vec<f64>,
}

impl ReconResult {
    pub fn at(&self, step: usize) -> Option<&StepRecord> {
        self.per_step.iter().find(|r| r.step == step)
    }
}

/// Output geometry of a reconstruction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
}

/// Adapts on `obs`, then evaluates and thresholds every snapshot. The ground
/// truth, when given, is consulted only after adaptation has finished.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    spec: &NetSpec,
    init: &ParamVector,
    alpha: Option<&ParamVector>,
    obs: &ObservationSet,
    geometry: GridGeometry,
    cfg: &AdaptConfig,
    ground_truth: Option<&dyn GroundTruth>,
    clock: &dyn Clock,
) -> Result<ReconResult> {
    let start = clock.seconds();
    let adaptation = adapt(spec, init, obs, cfg, alpha, clock, &mut |_, _, _| true)?;
    let mut masks = Vec::with_capacity(adaptation.snapshots.len());
    let mut times = Vec::with_capacity(adaptation.snapshots.len());
    for snap in &adaptation.snapshots {
        let t0 = clock.seconds();
        let probs = evaluate_grid(
            spec,
            &snap.params,
            geometry.dims,
            geometry.spacing_mm,
            EVAL_CHUNK,
        )?;
        masks.push(binarize(&probs, cfg.threshold));
        let eval = clock.seconds() - t0;
        times.push(adaptation.seconds[snap.step] - start + eval);
    }
    let mut per_step = Vec::with_capacity(masks.len());
    let mut wall = 0.0f64;
    for ((snap, mask), t) in adaptation.snapshots.iter().zip(&masks).zip(times) {
        let metrics = match ground_truth {
            Some(gt) => Some(metrics::evaluate(mask, gt.mask())?),
            None => None,
        };
        wall = wall.max(t);
        per_step.push(StepRecord {
            step: snap.step,
            context_loss: snap.context_loss,
            wall_seconds: wall,
            metrics,
        });
    }
    Ok(ReconResult {
        mask: masks.pop().expect("at least one snapshot"),
        per_step,
        converged_at: adaptation.converged_at,
        losses: adaptation.losses,
    })
}

/// First step in `1..=max_steps` whose thresholded prediction reaches
/// `target` DSC against `truth`, or `None` if none does. The loss stalling
/// does not end the search early.
#[allow(clippy::too_many_arguments)]
pub fn iters_to_target(
    spec: &NetSpec,
    init: &ParamVector,
    alpha: Option<&ParamVector>,
    obs: &ObservationSet,
    truth: &dyn GroundTruth,
    cfg: &AdaptConfig,
    target: f64,
    max_steps: usize,
) -> Result<Option<usize>> {
    let search = AdaptConfig {
        max_steps,
        patience: usize::MAX,
        record_steps: Vec::new(),
        ..cfg.clone()
    };
    let mut found = None;
    let mut failure = None;
    let truth_mask = truth.mask();
    let result = adapt(
        spec,
        init,
        obs,
        &search,
        alpha,
        &crate::clock::NoClock,
        &mut |step, params, _| {
            if step == 0 {
                return true;
            }
            let eval = evaluate_grid(
                spec,
                params,
                truth_mask.dims(),
                truth_mask.spacing_mm(),
                EVAL_CHUNK,
            )
            .and_then(|p| metrics::dsc_binary(&binarize(&p, cfg.threshold), truth_mask));
            match eval {
                Ok(d) if d >= target => found = Some(step),
                Ok(_) => return true,
                Err(e) => failure = Some(e),
            }
            false
        },
    );
    if let Some(e) = failure {
        return Err(e);
    }
    result?;
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::NoClock;
    use crate::volume::{sample_slices, Axis};
    use alloc::vec;
    use core::cell::{Cell, RefCell};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64) -> (NetSpec, ParamVector) {
        let spec = NetSpec {
            hidden_dim: 8,
            n_linear_layers: 3,
            ..NetSpec::default()
        };
        (spec, siren::init_siren(spec, seed).unwrap().params)
    }

    fn ball(dims: [usize; 3]) -> VolumeGrid {
        let mut g = VolumeGrid::zeros(dims, [1.0; 3]).unwrap();
        let c = dims.map(|d| (d as f64 - 1.0) / 2.0);
        let r = dims.iter().copied().min().unwrap() as f64 / 3.0;
        for f in 0..g.len() {
            let idx = g.unflat_index(f);
            let d2: f64 = (0..3).map(|a| (idx[a] as f64 - c[a]).powi(2)).sum();
            if d2 <= r * r {
                g.values_mut()[f] = 1.0;
            }
        }
        g
    }

    fn obs_for(grid: &VolumeGrid) -> ObservationSet {
        sample_slices(grid, Axis::Sagittal, 2, 0).unwrap()
    }

    fn cfg(rule: UpdateRule, step_size: f64, max_steps: usize) -> AdaptConfig {
        AdaptConfig {
            max_steps,
            update_rule: rule,
            step_size,
            record_steps: vec![1, 5],
            ..AdaptConfig::default()
        }
    }

    fn run(
        spec: &NetSpec,
        init: &ParamVector,
        obs: &ObservationSet,
        cfg: &AdaptConfig,
    ) -> Adaptation {
        adapt(spec, init, obs, cfg, None, &NoClock, &mut |_, _, _| true).unwrap()
    }

    #[test]
    fn zero_steps_returns_init() {
        let (spec, init) = small_net(1);
        let grid = ball([8, 8, 8]);
        let a = run(
            &spec,
            &init,
            &obs_for(&grid),
            &cfg(UpdateRule::Adam, 1e-3, 0),
        );
        assert_eq!(a.converged_at, 0);
        assert_eq!(a.losses.len(), 1);
        assert_eq!(a.final_snapshot().params, init);
        let geometry = GridGeometry {
            dims: grid.dims(),
            spacing_mm: grid.spacing_mm(),
        };
        let r = reconstruct(
            &spec,
            &init,
            None,
            &obs_for(&grid),
            geometry,
            &cfg(UpdateRule::Adam, 1e-3, 0),
            None,
            &NoClock,
        )
        .unwrap();
        let prior = binarize(
            &evaluate_grid(&spec, &init, grid.dims(), [1.0; 3], 64).unwrap(),
            0.5,
        );
        assert_eq!(r.mask, prior);
    }

    #[test]
    fn zero_step_size_keeps_trajectory_constant() {
        let (spec, init) = small_net(2);
        let grid = ball([8, 8, 8]);
        let c = cfg(UpdateRule::InnerSgd, 0.0, 50);
        let mut seen = Vec::new();
        let a = adapt(
            &spec,
            &init,
            &obs_for(&grid),
            &c,
            None,
            &NoClock,
            &mut |_, p, _| {
                seen.push(p.clone());
                true
            },
        )
        .unwrap();
        assert!(a.losses.iter().all(|&l| l == a.losses[0]));
        assert!(seen.iter().all(|p| *p == init));
        assert_eq!(a.converged_at, c.patience);
    }

    #[test]
    fn zero_alpha_keeps_trajectory_constant() {
        let (spec, init) = small_net(3);
        let grid = ball([8, 8, 8]);
        let alpha = init.full_like(0.0);
        let c = cfg(UpdateRule::InnerSgd, 1.0, 20);
        let a = adapt(
            &spec,
            &init,
            &obs_for(&grid),
            &c,
            Some(&alpha),
            &NoClock,
            &mut |_, _, _| true,
        )
        .unwrap();
        assert_eq!(a.final_snapshot().params, init);
    }

    #[test]
    fn grid_evaluation_is_chunk_invariant() {
        let (spec, init) = small_net(4);
        let dims = [7, 5, 6];
        let a = evaluate_grid(&spec, &init, dims, [1.0, 2.0, 0.5], 1).unwrap();
        let b = evaluate_grid(&spec, &init, dims, [1.0, 2.0, 0.5], EVAL_CHUNK).unwrap();
        let c = evaluate_grid(&spec, &init, dims, [1.0, 2.0, 0.5], 13).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.values(), c.values());
        assert!(a.values().iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(a.spacing_mm(), [1.0, 2.0, 0.5]);
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let (spec, _) = small_net(5);
        let zero = siren::zero_params(&spec);
        let p = evaluate_grid(&spec, &zero, [4, 4, 4], [1.0; 3], 10).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.5));
        assert_eq!(binarize(&p, 0.5).foreground_count(), 0);
    }

    #[test]
    fn binarize_rules() {
        let (spec, init) = small_net(6);
        let p = evaluate_grid(&spec, &init, [5, 5, 5], [1.0; 3], 32).unwrap();
        assert_eq!(binarize(&p, 0.0).foreground_count(), p.len());
        let once = binarize(&p, 0.5);
        assert!(once.is_binary());
        assert_eq!(binarize(&once, 0.5), once);
        for (m, v) in once.values().iter().zip(p.values()) {
            assert_eq!(*m == 1.0, *v > 0.5);
        }
    }

    #[test]
    fn early_stop_window_holds() {
        let grid = ball([10, 10, 10]);
        let obs = obs_for(&grid);
        for seed in 0..6u64 {
            let (spec, init) = small_net(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = AdaptConfig {
                patience: rng.gen_range(1..6),
                ..cfg(UpdateRule::Adam, 10f64.powf(rng.gen_range(-3.0..-0.5)), 150)
            };
            let a = run(&spec, &init, &obs, &c);
            let n = a.converged_at;
            assert!(n <= c.max_steps);
            assert_eq!(a.losses.len(), n + 1);
            if n < c.max_steps {
                assert!(stalled(&a.losses, c.patience));
                assert!(!(1..=n).any(|k| stalled(&a.losses[..k], c.patience)));
                let best = a.losses[..=n - c.patience]
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                assert!(a.losses[n + 1 - c.patience..]
                    .iter()
                    .all(|&l| l > best - MIN_IMPROVEMENT));
            }
            assert_eq!(a.final_snapshot().step, n);
        }
    }

    #[test]
    fn stalled_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let n = rng.gen_range(0..12);
            let losses: Vec<f64> = (0..n).map(|_| rng.gen_range(0..4) as f64).collect();
            let p = rng.gen_range(1..5);
            let expect = n > p && {
                let best = losses[..n - p]
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                losses[n - p..]
                    .iter()
                    .all(|&l| !(l < best - MIN_IMPROVEMENT))
            };
            assert_eq!(stalled(&losses, p), expect);
        }
    }

    #[test]
    fn snapshots_at_requested_steps() {
        let (spec, init) = small_net(7);
        let grid = ball([8, 8, 8]);
        let c = AdaptConfig {
            patience: 1000,
            ..cfg(UpdateRule::Adam, 1e-3, 8)
        };
        let a = run(&spec, &init, &obs_for(&grid), &c);
        let steps: Vec<usize> = a.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![1, 5, 8]);
        for s in &a.snapshots {
            assert_eq!(s.context_loss, a.losses[s.step]);
        }
    }

    #[test]
    fn non_finite_loss_reports_divergence_with_partial_trajectory() {
        let (spec, init) = small_net(8);
        let grid = ball([8, 8, 8]);
        let c = cfg(UpdateRule::InnerSgd, 1e300, 5);
        let err = adapt(
            &spec,
            &init,
            &obs_for(&grid),
            &c,
            None,
            &NoClock,
            &mut |_, _, _| true,
        )
        .unwrap_err();
        assert!(matches!(err.error, Error::Divergence { .. }));
        assert!(!err.partial.losses.is_empty());
    }

    #[test]
    fn invalid_config_rejected() {
        let (spec, init) = small_net(9);
        let obs = obs_for(&ball([8, 8, 8]));
        for bad in [
            AdaptConfig {
                patience: 0,
                ..AdaptConfig::default()
            },
            AdaptConfig {
                threshold: 1.0,
                ..AdaptConfig::default()
            },
            AdaptConfig {
                step_size: f64::NAN,
                ..AdaptConfig::default()
            },
        ] {
            assert!(
                adapt(&spec, &init, &obs, &bad, None, &NoClock, &mut |_, _, _| {
                    true
                })
                .is_err()
            );
        }
        let other = NetSpec {
            hidden_dim: 4,
            ..spec
        };
        let wrong_alpha = siren::zero_params(&other);
        let default = AdaptConfig::default();
        let r = adapt(
            &spec,
            &init,
            &obs,
            &default,
            Some(&wrong_alpha),
            &NoClock,
            &mut |_, _, _| true,
        );
        assert!(r.is_err());
    }

    /// Shared event log of clock reads and ground-truth reads.
    struct Events<'a>(&'a RefCell<Vec<&'static str>>, Cell<f64>);

    impl Clock for Events<'_> {
        fn seconds(&self) -> f64 {
            self.0.borrow_mut().push("clock");
            self.1.set(self.1.get() + 0.25);
            self.1.get()
        }
    }

    struct Watched<'a>(&'a RefCell<Vec<&'static str>>, VolumeGrid);

    impl GroundTruth for Watched<'_> {
        fn mask(&self) -> &VolumeGrid {
            self.0.borrow_mut().push("truth");
            &self.1
        }
    }

    #[test]
    fn ground_truth_read_only_after_adaptation_and_evaluation() {
        let (spec, init) = small_net(10);
        let grid = ball([8, 8, 8]);
        let obs = obs_for(&grid);
        let log = RefCell::new(Vec::new());
        let clock = Events(&log, Cell::new(0.0));
        let truth = Watched(&log, grid.clone());
        let c = AdaptConfig {
            patience: 1000,
            ..cfg(UpdateRule::Adam, 1e-3, 6)
        };
        let geometry = GridGeometry {
            dims: grid.dims(),
            spacing_mm: grid.spacing_mm(),
        };
        let r = reconstruct(&spec, &init, None, &obs, geometry, &c, Some(&truth), &clock).unwrap();
        let log = log.into_inner();
        let first_truth = log.iter().position(|&e| e == "truth").unwrap();
        let last_clock = log.iter().rposition(|&e| e == "clock").unwrap();
        assert!(last_clock < first_truth);
        assert!(r.per_step.iter().all(|s| s.metrics.is_some()));
        assert!(r
            .per_step
            .windows(2)
            .all(|w| w[0].wall_seconds <= w[1].wall_seconds));
        assert!(r.per_step.windows(2).all(|w| w[0].step < w[1].step));
    }

    #[test]
    fn reconstruction_is_deterministic() {
        let (spec, init) = small_net(11);
        let grid = ball([8, 8, 8]);
        let obs = obs_for(&grid);
        let c = cfg(UpdateRule::Adam, 1e-2, 20);
        let geometry = GridGeometry {
            dims: grid.dims(),
            spacing_mm: grid.spacing_mm(),
        };
        let go = || {
            reconstruct(
                &spec,
                &init,
                None,
                &obs,
                geometry,
                &c,
                Some(&grid),
                &NoClock,
            )
            .unwrap()
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn iters_to_target_self_target_is_one() {
        let (spec, init) = small_net(12);
        let grid = ball([8, 8, 8]);
        let obs = obs_for(&grid);
        let c = cfg(UpdateRule::Adam, 1e-2, 20);
        let a = run(&spec, &init, &obs, &c);
        let p = evaluate_grid(
            &spec,
            &a.snapshot(1).unwrap().params,
            grid.dims(),
            [1.0; 3],
            64,
        )
        .unwrap();
        let d1 = metrics::dsc_binary(&binarize(&p, 0.5), &grid).unwrap();
        assert_eq!(
            iters_to_target(&spec, &init, None, &obs, &grid, &c, d1, 5).unwrap(),
            Some(1)
        );
        assert_eq!(
            iters_to_target(&spec, &init, None, &obs, &grid, &c, 1.5, 3).unwrap(),
            None
        );
    }
}
