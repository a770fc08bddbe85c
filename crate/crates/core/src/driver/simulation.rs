//! Turning a case into a partitioned run and collecting its results.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::assembly::{BoundaryCondition, FieldState, LocalDomain};
use crate::constitutive::{fill_water_content, SoilModel};
use crate::driver::case::{build_patch_set, parse_case, zone_of_cells, CaseSpec, ConditionSpec, InitialCondition};
use crate::driver::flux::FluxSeries;
use crate::driver::lognormal::{lognormal_ks_field, LognormalSpec};
use crate::driver::output::{probe_header, write_probes, write_snapshot, CellField};
use crate::error::{Error, Result};
use crate::exchange::{run_spmd, CommCounters, Communicator, DEFAULT_TIMEOUT};
use crate::grid::{auto_cuts, build_grid, halo_topology, partition_simple, Grid, PartitionMap, PatchSet};
use crate::stepper::{run_transient, MassLedger, Observer, RunLog, TransientConfig};

/// A fully resolved problem: per-cell soils, initial head and patch conditions.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Grid,
    pub soils: Vec<SoilModel<f64>>,
    pub h0: Vec<f64>,
    pub patches: PatchSet,
    pub bcs: Vec<BoundaryCondition<f64>>,
    pub config: TransientConfig<f64>,
    /// `(name, global cell index)`.
    pub probes: Vec<(String, usize)>,
    pub snapshots: bool,
}

impl Problem {
    /// Resolves `spec`; relative file paths are taken from `base_dir`.
    pub fn from_case(spec: &CaseSpec, base_dir: &Path) -> Result<Self> {
        let grid = build_grid(&spec.grid.to_spec())?;
        let n = grid.n_cells();
        let zone = zone_of_cells(&spec.grid, &spec.soils).map_err(|p| Error::InvalidSpec(p.join("; ")))?;
        let mut soils: Vec<SoilModel<f64>> = zone.iter().map(|&z| spec.soils[z].model).collect();
        if let Some(rf) = &spec.random {
            let zi = spec
                .soils
                .iter()
                .position(|s| s.name == rf.zone)
                .ok_or_else(|| Error::InvalidSpec(format!("unknown soil zone '{}'", rf.zone)))?;
            let ls = LognormalSpec { geo_mean: rf.geo_mean, sigma_log10: rf.sigma_log10, clamp: rf.clamp, seed: rf.seed };
            let ks = lognormal_ks_field(n, &ls)?;
            for c in 0..n {
                if zone[c] == zi {
                    soils[c] = soils[c].with_ks(ks[c]);
                }
            }
        }
        let h0 = match &spec.initial {
            InitialCondition::Uniform { head } => vec![*head; n],
            InitialCondition::Hydrostatic { water_table } => (0..n).map(|c| water_table - grid.elevation(c)).collect(),
            InitialCondition::File { path } => read_head_file(&base_dir.join(path), n)?,
        };
        let patches = build_patch_set(&grid, &spec.patches, spec.default_patch.as_deref())?;
        let bcs = spec
            .patches
            .iter()
            .map(|p| {
                Ok(match &p.condition {
                    ConditionSpec::Dirichlet { head } => BoundaryCondition::Dirichlet { h_b: *head },
                    ConditionSpec::Flux { q } => BoundaryCondition::NeumannFlux { q: *q },
                    ConditionSpec::FreeDrainage => BoundaryCondition::FreeDrainage,
                    ConditionSpec::FluxSeries { path, end } => {
                        let file = base_dir.join(path);
                        let text = std::fs::read_to_string(&file)
                            .map_err(|e| Error::InvalidInput(format!("cannot read flux series {}: {e}", file.display())))?;
                        let series = FluxSeries::parse_csv(&text, *end)?;
                        if series.start() > 0.0 || series.end() < spec.t_end {
                            return Err(Error::InvalidSpec(format!(
                                "flux series {} covers [{}, {}] s but the run needs [0, {}] s",
                                file.display(),
                                series.start(),
                                series.end(),
                                spec.t_end
                            )));
                        }
                        BoundaryCondition::FluxSeries(Arc::new(series))
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let config = TransientConfig {
            t_end: spec.t_end,
            output_times: spec.output_times(),
            picard: spec.numerics.picard,
            time: spec.numerics.time,
        };
        config.validate()?;
        let probes = spec.probes.iter().map(|p| (p.name.clone(), grid.index(p.cell))).collect();
        Ok(Problem { grid, soils, h0, patches, bcs, config, probes, snapshots: spec.output.snapshots })
    }

    /// Reads and resolves a case file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec = parse_case(&text)?;
        Self::from_case(&spec, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    /// Outward area of every patch [m^2].
    pub fn patch_areas(&self) -> Vec<f64> {
        let mut areas = vec![0.0; self.patches.len()];
        for f in crate::grid::Face::ALL {
            let d = self.grid.face_dims(f);
            let a = self.grid.face_area(f.axis());
            for j in 0..d[1] {
                for i in 0..d[0] {
                    areas[self.patches.patch_at(f, [i, j])] += a;
                }
            }
        }
        areas
    }

    pub fn patch_names(&self) -> Vec<&str> {
        self.patches.patches().iter().map(|p| p.name.as_str()).collect()
    }

    pub fn water_content(&self, h: &[f64]) -> Vec<f64> {
        let mut th = vec![0.0; h.len()];
        fill_water_content(&self.soils, h, &mut th);
        th
    }
}

fn read_head_file(path: &Path, n: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read initial head file {}: {e}", path.display())))?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad head value '{t}' in {}", path.display()))))
        .collect::<Result<_>>()?;
    if values.len() != n || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "initial head file {} must hold {n} finite values (found {})",
            path.display(),
            values.len()
        )));
    }
    Ok(values)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub parts: usize,
    pub timeout: Duration,
    /// Directory for snapshots, probes and the run log; nothing is written when `None`.
    pub output_dir: Option<PathBuf>,
    /// Keep every output-time head field in memory.
    pub keep_history: bool,
}

impl RunOptions {
    pub fn parts(parts: usize) -> Self {
        RunOptions { parts, timeout: DEFAULT_TIMEOUT, output_dir: None, keep_history: false }
    }
}

/// Result of a run, assembled on the calling thread.
#[derive(Debug)]
pub struct RunSummary {
    pub parts: usize,
    pub cuts: [usize; 3],
    pub log: RunLog,
    pub ledger: MassLedger,
    /// Time reached by the last accepted step.
    pub t: f64,
    /// Final head in global cell order (empty if it could not be collected).
    pub h: Vec<f64>,
    /// `(t, head)` at each output time when history was requested.
    pub history: Vec<(f64, Vec<f64>)>,
    pub counters: Vec<CommCounters>,
    pub wall: Duration,
    pub result: Result<()>,
}

impl RunSummary {
    pub fn succeeded(&self) -> bool {
        self.result.is_ok()
    }
}

/// Collects gathered part fields into global order and writes outputs.
struct GlobalObserver<'a> {
    problem: &'a Problem,
    owned: &'a [Vec<usize>],
    dir: Option<&'a Path>,
    keep_history: bool,
    history: Vec<(f64, Vec<f64>)>,
    count: usize,
}

impl GlobalObserver<'_> {
    fn globalize(&self, per_part: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.problem.n_cells()];
        for (cells, vals) in self.owned.iter().zip(per_part) {
            for (&c, &v) in cells.iter().zip(vals) {
                out[c] = v;
            }
        }
        out
    }
}

impl Observer<f64> for GlobalObserver<'_> {
    fn observe(&mut self, t: f64, h: &[Vec<f64>], theta: &[Vec<f64>]) -> Result<()> {
        let h = self.globalize(h);
        let theta = self.globalize(theta);
        if let Some(dir) = self.dir {
            if self.problem.snapshots {
                let fields = [CellField { name: "h", values: &h }, CellField { name: "theta", values: &theta }];
                write_snapshot(&self.problem.grid, &format!("t = {t} s"), &fields, &dir.join(format!("snapshot_{:05}.vtk", self.count)))?;
            }
            if !self.problem.probes.is_empty() {
                let cells: Vec<usize> = self.problem.probes.iter().map(|p| p.1).collect();
                write_probes(&cells, t, &theta, &h, &dir.join("probes.csv"))?;
            }
        }
        self.count += 1;
        if self.keep_history {
            self.history.push((t, h));
        }
        Ok(())
    }
}

/// Run log with per-patch fluxes per unit area [m/s] appended.
pub fn run_log_csv(problem: &Problem, log: &RunLog) -> String {
    let names = problem.patch_names();
    let areas = problem.patch_areas();
    let mut s = String::from(crate::stepper::RUN_LOG_HEADER);
    for n in &names {
        s.push_str(&format!(",q_{n}"));
    }
    s.push('\n');
    for (r, q) in log.steps.iter().zip(&log.patch_fluxes) {
        s.push_str(&format!("{},{},{},{},{:e}", r.t, r.dt, r.picard_iters, r.pcg_iters, r.mass_error));
        for (q, a) in q.iter().zip(&areas) {
            s.push_str(&format!(",{:e}", q / a));
        }
        s.push('\n');
    }
    s
}

pub fn partition(grid: &Grid, parts: usize) -> Result<PartitionMap> {
    partition_simple(grid, parts, auto_cuts(grid, parts)?)
}

struct WorkerResult {
    log: RunLog,
    ledger: MassLedger,
    t: f64,
    h: Option<Vec<Vec<f64>>>,
    history: Vec<(f64, Vec<f64>)>,
    counters: CommCounters,
    result: Result<()>,
}

/// Runs the problem on `opts.parts` workers. The run log is written to the
/// output directory even when the run fails.
pub fn run(problem: &Problem, opts: &RunOptions) -> Result<RunSummary> {
    let map = partition(&problem.grid, opts.parts)?;
    let halo = halo_topology(&map);
    let owned: Vec<Vec<usize>> = (0..map.parts()).map(|p| map.local_layout(p).global_of_owned).collect();
    let dir = opts.output_dir.as_deref();
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        if !problem.probes.is_empty() {
            let names: Vec<&str> = problem.probes.iter().map(|p| p.0.as_str()).collect();
            std::fs::write(d.join("probes.csv"), probe_header(&names) + "\n")?;
        }
    }
    let dims = problem.grid.dims();
    let start = Instant::now();
    let results = run_spmd::<f64, WorkerResult, _>(map.parts(), opts.timeout, |comm: &mut dyn Communicator<f64>| {
        let part = comm.rank();
        let dom = LocalDomain::new(&problem.grid, &map, &halo, part, &problem.soils, &problem.patches);
        let h: Vec<f64> = (0..dom.len())
            .map(|e| {
                let g = dom.layout.global_ijk(e);
                let c: [usize; 3] = std::array::from_fn(|a| g[a].clamp(0, dims[a] as i64 - 1) as usize);
                problem.h0[problem.grid.index(c)]
            })
            .collect();
        let mut state = FieldState::new(&dom, h);
        let mut obs = GlobalObserver { problem, owned: &owned, dir, keep_history: opts.keep_history, history: Vec::new(), count: 0 };
        let observer: Option<&mut dyn Observer<f64>> = if part == 0 { Some(&mut obs) } else { None };
        let run = run_transient(&dom, &mut state, &problem.bcs, &problem.config, comm, observer);
        let collective_ok = !matches!(run.result, Err(Error::Deadlock { .. }) | Err(Error::Contract(_)));
        let h = if collective_ok {
            comm.gather(&crate::stepper::owned_values(&dom, &state.h_old)).ok().flatten()
        } else {
            None
        };
        WorkerResult {
            log: run.log,
            ledger: run.ledger,
            t: run.t,
            h,
            history: obs.history,
            counters: comm.counters(),
            result: run.result,
        }
    });
    let wall = start.elapsed();
    let counters = results.iter().map(|r| r.counters).collect();
    let mut results = results.into_iter();
    let first = results.next().expect("at least one part");
    // report the first failure of any part
    let mut result = first.result;
    for r in results {
        if result.is_ok() {
            result = r.result;
        }
    }
    let h = first.h.map(|per_part| {
        let mut out = vec![0.0; problem.n_cells()];
        for (cells, vals) in owned.iter().zip(&per_part) {
            for (&c, &v) in cells.iter().zip(vals) {
                out[c] = v;
            }
        }
        out
    });
    if let Some(d) = dir {
        std::fs::write(d.join("run_log.csv"), run_log_csv(problem, &first.log))?;
    }
    Ok(RunSummary {
        parts: map.parts(),
        cuts: map.cuts(),
        log: first.log,
        ledger: first.ledger,
        t: first.t,
        h: h.unwrap_or_default(),
        history: first.history,
        counters,
        wall,
        result,
    })
}

/// Outcome of running one problem under several partitionings.
#[derive(Debug)]
pub struct PartitionReport {
    pub runs: Vec<RunSummary>,
    /// Largest |h_p - h_1| over cells and partitionings [m].
    pub max_discrepancy: f64,
    pub sequences_identical: bool,
}

impl PartitionReport {
    pub fn all_succeeded(&self) -> bool {
        self.runs.iter().all(|r| r.succeeded())
    }
}

pub fn partition_check(problem: &Problem, parts: &[usize], timeout: Duration) -> Result<PartitionReport> {
    if parts.is_empty() {
        return Err(Error::InvalidInput("partition check needs at least one part count".into()));
    }
    let runs = parts
        .iter()
        .map(|&p| run(problem, &RunOptions { timeout, ..RunOptions::parts(p) }))
        .collect::<Result<Vec<_>>>()?;
    let reference = &runs[0];
    let mut max_discrepancy: f64 = 0.0;
    let mut sequences_identical = true;
    for r in &runs[1..] {
        if r.h.len() != reference.h.len() {
            max_discrepancy = f64::INFINITY;
        } else {
            for (a, b) in r.h.iter().zip(&reference.h) {
                let d = (a - b).abs();
                max_discrepancy = if d.is_nan() { f64::INFINITY } else { max_discrepancy.max(d) };
            }
        }
        sequences_identical &= r.log.step_sequence() == reference.log.step_sequence();
    }
    Ok(PartitionReport { runs, max_discrepancy, sequences_identical })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingMode {
    /// Same problem on every part count.
    Strong,
    /// Grid extended along x in proportion to the part count.
    Weak,
}

pub const SCALING_HEADER: &str = "parts,cells,wall_s,speedup,efficiency";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub parts: usize,
    pub cells: usize,
    pub wall_s: f64,
    /// Strong: `T_1 / T_P`. Weak: scaled speedup `P T_1 / T_P`.
    pub speedup: f64,
    pub efficiency: f64,
}

impl ScalingRow {
    /// Wall time per cell per worker [s].
    pub fn wall_per_cell(&self) -> f64 {
        self.wall_s * self.parts as f64 / self.cells as f64
    }
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut s = format!("{SCALING_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.parts, r.cells, r.wall_s, r.speedup, r.efficiency));
    }
    s
}

/// Times one run per part count. Speedups are relative to the first entry
/// of `parts` (normally 1).
pub fn scaling_study(
    spec: &CaseSpec,
    base_dir: &Path,
    parts: &[usize],
    mode: ScalingMode,
    timeout: Duration,
) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    let mut first: Option<(usize, f64)> = None;
    for &p in parts {
        let mut s = spec.clone();
        if mode == ScalingMode::Weak {
            s.grid.cells[0] *= p;
        }
        let problem = Problem::from_case(&s, base_dir)?;
        let summary = run(&problem, &RunOptions { timeout, ..RunOptions::parts(p) })?;
        summary.result?;
        let wall = summary.wall.as_secs_f64();
        let (p0, w0) = *first.get_or_insert((p, wall));
        let ratio = p as f64 / p0 as f64;
        let (speedup, efficiency) = match mode {
            ScalingMode::Strong => (w0 / wall, w0 / wall / ratio),
            ScalingMode::Weak => (ratio * w0 / wall, w0 / wall),
        };
        rows.push(ScalingRow { parts: p, cells: problem.n_cells(), wall_s: wall, speedup, efficiency });
    }
    Ok(rows)
}
