//! Steady vertical flow in a Gardner soil above a water table.
//!
//! With `K = Ks exp(alpha h)` the Kirchhoff transform linearizes the steady
//! equation `d/dz (K dh/dz) + dK/dz = 0`, giving a closed-form head profile.
//! In these formulas `q` is the flux density entering the column at the top
//! (positive downward). The solver's patch fluxes are positive outward, so a
//! solver flux `q_out` on the top face corresponds to `q = -q_out`.

use std::path::Path;
use std::time::Duration;

use crate::constitutive::{SoilModel, DEFAULT_STORATIVITY};
use crate::driver::case::{
    CaseGrid, CaseSpec, ConditionSpec, InitialCondition, Numerics, OutputSpec, PatchSpec, Region, SoilZone,
};
use crate::driver::simulation::{run, Problem, RunOptions};
use crate::error::{Error, Result};
use crate::grid::{Axis, Face};
use crate::stepper::{PicardConfig, TimeControlConfig};

pub const KS: f64 = 1e-6;
pub const ALPHA: f64 = 0.06;
pub const HEIGHT: f64 = 1.0;

/// Error bound for nonzero fluxes [m].
pub const TOL_FLUX: f64 = 5e-3;
/// Error bound for the hydrostatic profile [m].
pub const TOL_HYDROSTATIC: f64 = 1e-6;

/// Argument of the logarithm in the analytic profile.
fn log_argument(ks: f64, alpha: f64, q: f64, z: f64) -> f64 {
    (q + (ks - q) * (-alpha * z).exp()) / ks
}

/// Head at height `z` above the water table.
pub fn gardner_analytic_h(ks: f64, alpha: f64, q: f64, z: f64) -> Result<f64> {
    let arg = log_argument(ks, alpha, q, z);
    if !(arg > 0.0) || !arg.is_finite() {
        return Err(Error::Validity(format!(
            "log argument {arg} is not positive at z = {z} m for q = {q} m/s (Ks = {ks}, alpha = {alpha})"
        )));
    }
    Ok(arg.ln() / alpha)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FluxBound {
    Bounded(f64),
    /// The bound diverges (`alpha * height -> 0`): every flux is admissible.
    Unbounded,
}

/// `Ks e^{-aL} / (e^{-aL} - 1)` for a column of height `L`.
pub fn gardner_flux_bound(ks: f64, alpha: f64, height: f64) -> FluxBound {
    let e = (-alpha * height).exp();
    let denom = e - 1.0;
    let b = ks * e / denom;
    if denom == 0.0 || !b.is_finite() || denom.abs() < 1e-12 {
        FluxBound::Unbounded
    } else {
        FluxBound::Bounded(b)
    }
}

/// Checks `q` against the bound and the log argument over the whole column.
/// The log argument stays positive exactly when `q` exceeds the bound.
pub fn check_gardner_flux(ks: f64, alpha: f64, height: f64, q: f64) -> Result<()> {
    if q == 0.0 {
        return Ok(());
    }
    if let FluxBound::Bounded(b) = gardner_flux_bound(ks, alpha, height) {
        if !(q > b) {
            return Err(Error::Validity(format!("flux {q} m/s is outside the admissible range (bound {b:e} m/s)")));
        }
    }
    // the argument is monotone in z, so the ends of the column suffice
    for z in [0.0, height] {
        gardner_analytic_h(ks, alpha, q, z)?;
    }
    Ok(())
}

/// A vertical column whose bottom face sits on the water table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GardnerColumn {
    pub ks: f64,
    pub alpha: f64,
    pub height: f64,
    pub cells: usize,
    /// Simulated time allowed to reach steady state [s].
    pub t_end: f64,
}

impl GardnerColumn {
    /// The reference column: 1 m, `Ks = 1e-6` m/s, `alpha = 0.06` 1/m.
    pub fn reference(cells: usize) -> Self {
        GardnerColumn { ks: KS, alpha: ALPHA, height: HEIGHT, cells, t_end: 10.0 * 86_400.0 }
    }

    /// Case with outward top flux `q_out`, hydrostatic start, closed sides.
    pub fn case(&self, q_out: f64) -> CaseSpec {
        let dz = self.height / self.cells as f64;
        CaseSpec {
            grid: CaseGrid {
                cells: [1, 1, self.cells],
                spacing: [0.01, 0.01, dz],
                origin: [0.0; 3],
                vertical: Axis::Z,
                slope_deg: [0.0; 2],
            },
            soils: vec![SoilZone {
                name: "gardner".into(),
                model: SoilModel::gardner(self.ks, self.alpha, 0.45, 0.05, DEFAULT_STORATIVITY).expect("valid soil"),
                region: Region::All,
            }],
            random: None,
            initial: InitialCondition::Hydrostatic { water_table: 0.0 },
            patches: vec![
                PatchSpec { name: "top".into(), face: Some(Face::ZMax), region: None, condition: ConditionSpec::Flux { q: q_out } },
                PatchSpec {
                    name: "water_table".into(),
                    face: Some(Face::ZMin),
                    region: None,
                    condition: ConditionSpec::Dirichlet { head: 0.0 },
                },
                PatchSpec { name: "sides".into(), face: None, region: None, condition: ConditionSpec::Flux { q: 0.0 } },
            ],
            default_patch: Some("sides".into()),
            numerics: Numerics { picard: PicardConfig::new(1e-8, 1e-10), time: TimeControlConfig::new(1.0, 3600.0) },
            t_end: self.t_end,
            output: OutputSpec { interval: None, snapshots: false },
            probes: Vec::new(),
        }
    }

    /// Runs to steady state and compares with the analytic profile.
    pub fn validate(&self, q_out: f64) -> Result<GardnerReport> {
        let q = -q_out;
        check_gardner_flux(self.ks, self.alpha, self.height, q)?;
        let problem = Problem::from_case(&self.case(q_out), Path::new("."))?;
        let summary = run(&problem, &RunOptions { timeout: Duration::from_secs(120), ..RunOptions::parts(1) })?;
        summary.result?;
        let mut max_error: f64 = 0.0;
        for (c, h) in summary.h.iter().enumerate() {
            let z = problem.grid.elevation(c);
            max_error = max_error.max((h - gardner_analytic_h(self.ks, self.alpha, q, z)?).abs());
        }
        let tolerance = if q_out == 0.0 { TOL_HYDROSTATIC } else { TOL_FLUX };
        Ok(GardnerReport { q_out, cells: self.cells, max_error, tolerance, steps: summary.log.steps.len() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GardnerReport {
    /// Outward top flux [m/s].
    pub q_out: f64,
    pub cells: usize,
    /// Max |h_num - h_analytic| over cell centres [m].
    pub max_error: f64,
    pub tolerance: f64,
    pub steps: usize,
}

impl GardnerReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

/// Reference column with `cells` cells and outward top flux `q_out`.
pub fn validate_gardner(cells: usize, q_out: f64) -> Result<GardnerReport> {
    GardnerColumn::reference(cells).validate(q_out)
}

/// Default outward fluxes: zero plus two of each sign.
pub const DEFAULT_FLUXES: [f64; 5] = [0.0, 2e-7, 5e-7, -2e-7, -5e-7];
