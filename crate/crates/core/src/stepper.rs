//! Picard linearization, EBATS time stepping and the mass ledger.

use crate::assembly::{assemble, boundary_fluxes, BoundaryCondition, FieldState, LocalDomain, ResolvedBc};
use crate::error::{Error, Result};
use crate::exchange::{local_reduce, Communicator, ReduceKind};
use crate::linsolve::{pcg_solve, StencilMatrix, DEFAULT_MAX_ITER};
use crate::scalar::Real;

pub const DEFAULT_MAX_PICARD: usize = 8;
pub const DEFAULT_DT_MIN: f64 = 1e-3;
pub const DEFAULT_GROW_FACTOR: f64 = 1.3;
pub const DEFAULT_QUICK_ITERS: usize = 3;
pub const DEFAULT_STREAK: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig<T> {
    /// Head-change tolerance [m].
    pub tol_picard: T,
    pub max_picard_iters: usize,
    /// Linear tolerance on `max |r_i / diag_i|` [m].
    pub pcg_tol: T,
    pub pcg_max_iter: usize,
}

impl<T: Real> PicardConfig<T> {
    pub fn new(tol_picard: T, pcg_tol: T) -> Self {
        PicardConfig { tol_picard, max_picard_iters: DEFAULT_MAX_PICARD, pcg_tol, pcg_max_iter: DEFAULT_MAX_ITER }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pcg_tol > T::zero()) || !(self.tol_picard > self.pcg_tol) {
            return Err(Error::Config(format!(
                "need 0 < pcg_tol < tol_picard (got pcg_tol {}, tol_picard {})",
                self.pcg_tol, self.tol_picard
            )));
        }
        if self.max_picard_iters == 0 || self.pcg_max_iter == 0 {
            return Err(Error::Config("iteration caps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeControlConfig {
    pub dt_init: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub grow_factor: f64,
    pub quick_iters: usize,
    pub streak_needed: usize,
}

impl TimeControlConfig {
    pub fn new(dt_init: f64, dt_max: f64) -> Self {
        TimeControlConfig {
            dt_init,
            dt_max,
            dt_min: DEFAULT_DT_MIN,
            grow_factor: DEFAULT_GROW_FACTOR,
            quick_iters: DEFAULT_QUICK_ITERS,
            streak_needed: DEFAULT_STREAK,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min <= self.dt_init
            && self.dt_init <= self.dt_max
            && self.dt_max.is_finite()
            && self.grow_factor > 1.0
            && self.streak_needed >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "need 0 < dt_min <= dt_init <= dt_max, grow_factor > 1, streak >= 1 (got {self:?})"
            )))
        }
    }
}

/// Result of one attempted step, as seen by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Converged { picard_iters: usize },
    Failed,
}

/// EBATS state machine.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeController {
    pub cfg: TimeControlConfig,
    pub dt: f64,
    pub good_streak: usize,
}

impl TimeController {
    pub fn new(cfg: TimeControlConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(TimeController { cfg, dt: cfg.dt_init, good_streak: 0 })
    }

    /// Applies an outcome; returns whether the step is accepted. A rejected
    /// step must be rerun to the same target with the new `dt`. `t` is only
    /// used in diagnostics.
    pub fn advance(&mut self, outcome: StepOutcome, t: f64) -> Result<bool> {
        match outcome {
            StepOutcome::Failed => {
                if self.dt <= self.cfg.dt_min {
                    return Err(Error::Unrecoverable { t, dt_min: self.cfg.dt_min });
                }
                self.dt = (self.dt / self.cfg.grow_factor).max(self.cfg.dt_min);
                self.good_streak = 0;
                Ok(false)
            }
            StepOutcome::Converged { picard_iters } => {
                if picard_iters <= self.cfg.quick_iters {
                    self.good_streak += 1;
                } else {
                    self.good_streak = 0;
                }
                if self.good_streak >= self.cfg.streak_needed {
                    self.dt = (self.dt * self.cfg.grow_factor).min(self.cfg.dt_max);
                    self.good_streak = 0;
                }
                Ok(true)
            }
        }
    }

    /// Lowers `dt` to a clipped step length before that step is retried.
    pub fn clip_to(&mut self, dt: f64) {
        if dt < self.dt {
            self.dt = dt;
            self.good_streak = 0;
        }
    }
}

/// Iteration counts of a converged Picard loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardStats<T> {
    pub iterations: usize,
    pub pcg_iterations: usize,
    /// Last global head change [m].
    pub delta: T,
}

/// Reusable per-worker buffers.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    pub matrix: StencilMatrix<T>,
    x: Vec<T>,
}

impl<T: Real> Workspace<T> {
    pub fn new(dom: &LocalDomain<T>) -> Self {
        Workspace { matrix: StencilMatrix::new(&dom.layout), x: vec![T::zero(); dom.len()] }
    }
}

/// Solves one time step from `state.h_old` (with `state.h_iter` as the first
/// iterate) and leaves the converged head, halos included, in
/// `state.h_iter`. `pcg_count` accumulates PCG iterations, including those
/// of a failed attempt.
#[allow(clippy::too_many_arguments)]
pub fn picard_step<T, C>(
    dom: &LocalDomain<T>,
    state: &mut FieldState<T>,
    bcs: &[ResolvedBc<T>],
    dt: T,
    t_new: f64,
    cfg: &PicardConfig<T>,
    comm: &mut C,
    ws: &mut Workspace<T>,
    pcg_count: &mut usize,
) -> Result<PicardStats<T>>
where
    T: Real,
    C: Communicator<T> + ?Sized,
{
    let start = *pcg_count;
    let mut delta = T::infinity();
    for it in 1..=cfg.max_picard_iters {
        state.refresh_iterate(dom);
        assemble(dom, state, bcs, dt, &mut ws.matrix)?;
        ws.x.copy_from_slice(&state.h_iter);
        match pcg_solve(&ws.matrix, &mut ws.x, cfg.pcg_tol, cfg.pcg_max_iter, comm, &dom.halo) {
            Ok(s) => *pcg_count += s.iterations,
            Err(e) => {
                if let Error::NoConvergence { iters, .. } = e {
                    *pcg_count += iters;
                }
                return Err(e);
            }
        }
        let local = local_reduce(ReduceKind::Max, dom.layout.owned.iter().map(|&e| (ws.x[e] - state.h_iter[e]).abs()));
        delta = comm.global_reduce(ReduceKind::Max, local)?;
        if !delta.is_finite() {
            return Err(Error::Blowup { t: t_new });
        }
        for &e in &dom.layout.owned {
            state.h_iter[e] = ws.x[e];
        }
        comm.halo_exchange(&mut state.h_iter, &dom.halo)?;
        if delta <= cfg.tol_picard {
            return Ok(PicardStats { iterations: it, pcg_iterations: *pcg_count - start, delta });
        }
    }
    Err(Error::PicardFailure { iters: cfg.max_picard_iters, delta: delta.as_f64() })
}

/// Global water balance, accumulated in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct MassLedger {
    pub initial_storage: f64,
    /// Current total water volume [m^3].
    pub storage: f64,
    /// Signed volume that left through each patch [m^3] (negative = inflow).
    pub cumulative_boundary: Vec<f64>,
    /// `|storage change - net inflow|` [m^3].
    pub cumulative_error: f64,
}

impl MassLedger {
    pub fn new(storage: f64, n_patches: usize) -> Self {
        MassLedger { initial_storage: storage, storage, cumulative_boundary: vec![0.0; n_patches], cumulative_error: 0.0 }
    }

    /// Net inflow since the start [m^3].
    pub fn net_inflow(&self) -> f64 {
        -self.cumulative_boundary.iter().sum::<f64>()
    }

    /// Records an accepted step: new total storage and per-patch outward
    /// fluxes [m^3/s] over `dt`.
    pub fn update(&mut self, storage: f64, patch_fluxes: &[f64], dt: f64) {
        self.storage = storage;
        for (c, q) in self.cumulative_boundary.iter_mut().zip(patch_fluxes) {
            *c += q * dt;
        }
        self.cumulative_error = (self.storage - self.initial_storage - self.net_inflow()).abs();
    }

    /// Error relative to the initial storage.
    pub fn relative_error(&self) -> f64 {
        self.cumulative_error / self.initial_storage
    }
}

/// Global storage `sum theta V` of the part fields.
pub fn global_storage<T, C>(dom: &LocalDomain<T>, theta: &[T], comm: &mut C) -> Result<f64>
where
    T: Real,
    C: Communicator<T> + ?Sized,
{
    let local = local_reduce(ReduceKind::Sum, dom.layout.owned.iter().map(|&e| theta[e])) * dom.volume;
    Ok(comm.global_reduce(ReduceKind::Sum, local)?.as_f64())
}

/// Global per-patch outward fluxes [m^3/s].
pub fn global_patch_fluxes<T, C>(
    dom: &LocalDomain<T>,
    bcs: &[ResolvedBc<T>],
    h: &[T],
    k: &[T],
    comm: &mut C,
) -> Result<Vec<f64>>
where
    T: Real,
    C: Communicator<T> + ?Sized,
{
    boundary_fluxes(dom, bcs, h, k)
        .into_iter()
        .map(|q| Ok(comm.global_reduce(ReduceKind::Sum, q)?.as_f64()))
        .collect()
}

/// One accepted step of the run log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub picard_iters: usize,
    pub pcg_iters: usize,
    pub mass_error: f64,
}

pub const RUN_LOG_HEADER: &str = "t,dt,picard_iters,pcg_iters_total,mass_error";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    /// Outward flux of every patch after each accepted step [m^3/s].
    pub patch_fluxes: Vec<Vec<f64>>,
    pub rejected_steps: usize,
    pub rejected_picard_iters: usize,
    pub rejected_pcg_iters: usize,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(RUN_LOG_HEADER);
        s.push('\n');
        for r in &self.steps {
            s.push_str(&format!("{},{},{},{},{:e}\n", r.t, r.dt, r.picard_iters, r.pcg_iters, r.mass_error));
        }
        s
    }

    /// PCG iterations of accepted and rejected attempts.
    pub fn total_pcg_iters(&self) -> usize {
        self.steps.iter().map(|r| r.pcg_iters).sum::<usize>() + self.rejected_pcg_iters
    }

    pub fn accepted_picard_iters(&self) -> usize {
        self.steps.iter().map(|r| r.picard_iters).sum()
    }

    /// `(dt, picard_iters)` of every accepted step.
    pub fn step_sequence(&self) -> Vec<(f64, usize)> {
        self.steps.iter().map(|r| (r.dt, r.picard_iters)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientConfig<T> {
    pub t_end: f64,
    /// Times (in `[0, t_end]`) at which observers fire; `t_end` is implied.
    pub output_times: Vec<f64>,
    pub picard: PicardConfig<T>,
    pub time: TimeControlConfig,
}

impl<T: Real> TransientConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be positive (got {})", self.t_end)));
        }
        self.picard.validate()?;
        self.time.validate()
    }
}

/// Receives the state at output times on the worker that owns the outputs.
pub trait Observer<T> {
    /// `h` and `theta` are gathered per part (see [`LocalDomain`] ordering).
    fn observe(&mut self, t: f64, h: &[Vec<T>], theta: &[Vec<T>]) -> Result<()>;
}

/// Outcome of a transient run on one worker.
#[derive(Debug)]
pub struct TransientRun {
    pub log: RunLog,
    pub ledger: MassLedger,
    /// Time reached by the last accepted step.
    pub t: f64,
    pub result: Result<()>,
}

/// Owned-cell values in local lexicographic order.
pub fn owned_values<T: Real>(dom: &LocalDomain<T>, field: &[T]) -> Vec<T> {
    dom.layout.owned.iter().map(|&e| field[e]).collect()
}

fn observe_collective<T, C>(
    dom: &LocalDomain<T>,
    state: &FieldState<T>,
    t: f64,
    comm: &mut C,
    observer: &mut Option<&mut dyn Observer<T>>,
) -> Result<()>
where
    T: Real,
    C: Communicator<T> + ?Sized,
{
    let h = comm.gather(&owned_values(dom, &state.h_old))?;
    let theta = comm.gather(&owned_values(dom, &state.theta_old))?;
    let mut res = Ok(());
    if let (Some(h), Some(theta), Some(obs)) = (h, theta, observer.as_mut()) {
        res = obs.observe(t, &h, &theta);
    }
    let failed = comm.global_reduce(ReduceKind::Max, if res.is_err() { T::one() } else { T::zero() })?;
    match res {
        Err(e) => Err(e),
        Ok(()) if failed > T::zero() => Err(Error::Contract("output failed on another part".into())),
        Ok(()) => Ok(()),
    }
}

/// Stop times: outputs, flux-series breakpoints and `t_end`, sorted.
fn stop_times<T: Real>(cfg: &TransientConfig<T>, bcs: &[BoundaryCondition<T>]) -> Vec<f64> {
    let mut stops: Vec<f64> = cfg.output_times.iter().copied().filter(|&t| t > 0.0 && t < cfg.t_end).collect();
    for bc in bcs {
        if let BoundaryCondition::FluxSeries(s) = bc {
            stops.extend(s.breakpoints().iter().copied().filter(|&t| t > 0.0 && t < cfg.t_end));
        }
    }
    stops.push(cfg.t_end);
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    stops
}

/// Marches one worker's part from `t = 0` to `t_end`. All workers of a
/// group must call this with identical configuration; `observer` is only
/// consulted on part 0.
pub fn run_transient<T, C>(
    dom: &LocalDomain<T>,
    state: &mut FieldState<T>,
    bcs: &[BoundaryCondition<T>],
    cfg: &TransientConfig<T>,
    comm: &mut C,
    mut observer: Option<&mut dyn Observer<T>>,
) -> TransientRun
where
    T: Real,
    C: Communicator<T> + ?Sized,
{
    let mut log = RunLog::default();
    let mut ledger = MassLedger::new(0.0, dom.n_patches);
    let mut t = 0.0;
    let result = (|| -> Result<()> {
        cfg.validate()?;
        for bc in bcs {
            bc.validate()?;
        }
        if bcs.len() != dom.n_patches {
            return Err(Error::Config(format!("{} patches but {} boundary conditions", dom.n_patches, bcs.len())));
        }
        comm.halo_exchange(&mut state.h_old, &dom.halo)?;
        state.reset_iterate();
        state.accept(dom);
        ledger = MassLedger::new(global_storage(dom, &state.theta_old, comm)?, dom.n_patches);
        if cfg.output_times.contains(&0.0) {
            observe_collective(dom, state, 0.0, comm, &mut observer)?;
        }
        let stops = stop_times(cfg, bcs);
        let is_output = |s: f64| s == cfg.t_end || cfg.output_times.contains(&s);
        let mut ctrl = TimeController::new(cfg.time)?;
        let mut ws = Workspace::new(dom);
        let mut next = 0;
        while t < cfg.t_end {
            while stops[next] <= t {
                next += 1;
            }
            let stop = stops[next];
            let (t_new, hit) = if t + ctrl.dt >= stop { (stop, true) } else { (t + ctrl.dt, false) };
            let dt = t_new - t;
            let resolved: Vec<ResolvedBc<T>> = bcs.iter().map(|b| b.resolve(t, t_new)).collect::<Result<_>>()?;
            state.reset_iterate();
            let mut pcg = 0;
            let attempt = picard_step(dom, state, &resolved, T::of(dt), t_new, &cfg.picard, comm, &mut ws, &mut pcg);
            match attempt {
                Ok(stats) => {
                    let fluxes = global_patch_fluxes(dom, &resolved, &state.h_iter, &state.k_iter, comm)?;
                    state.accept(dom);
                    let storage = global_storage(dom, &state.theta_old, comm)?;
                    ledger.update(storage, &fluxes, dt);
                    ctrl.advance(StepOutcome::Converged { picard_iters: stats.iterations }, t_new)?;
                    t = t_new;
                    log.steps.push(StepRecord {
                        t,
                        dt,
                        picard_iters: stats.iterations,
                        pcg_iters: stats.pcg_iterations,
                        mass_error: ledger.cumulative_error,
                    });
                    log.patch_fluxes.push(fluxes);
                    if hit && is_output(stop) {
                        observe_collective(dom, state, t, comm, &mut observer)?;
                    }
                }
                Err(e) if e.is_step_failure() => {
                    log.rejected_steps += 1;
                    log.rejected_picard_iters += match e {
                        Error::PicardFailure { iters, .. } => iters,
                        _ => 0,
                    };
                    log.rejected_pcg_iters += pcg;
                    ctrl.clip_to(dt);
                    ctrl.advance(StepOutcome::Failed, t_new)?;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    })();
    TransientRun { log, ledger, t, result }
}
