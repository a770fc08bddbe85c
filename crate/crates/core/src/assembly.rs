//! Finite-volume discretization for one Picard iteration.
//!
//! Backward Euler in time, two-point fluxes with arithmetic-mean face
//! conductivity, implicit capillary term and explicit gravity term using
//! the conductivity of the previous iterate.

use std::sync::Arc;

use crate::constitutive::{fill_water_content, fill_water_content_and_conductivity, SoilModel};
use crate::driver::flux::FluxSeries;
use crate::error::{Error, Result};
use crate::grid::{Axis, CellKind, Face, Grid, HaloDescriptor, LocalLayout, PartitionMap, PatchSet};
use crate::linsolve::StencilMatrix;
use crate::scalar::Real;

/// Condition applied on a patch. Fluxes are positive outward.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryCondition<T> {
    Dirichlet { h_b: T },
    NeumannFlux { q: T },
    FreeDrainage,
    FluxSeries(Arc<FluxSeries>),
}

impl<T: Real> BoundaryCondition<T> {
    pub fn no_flux() -> Self {
        BoundaryCondition::NeumannFlux { q: T::zero() }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BoundaryCondition::Dirichlet { h_b } if !h_b.is_finite() => {
                Err(Error::Config(format!("Dirichlet head must be finite (got {h_b})")))
            }
            BoundaryCondition::NeumannFlux { q } if !q.is_finite() => {
                Err(Error::Config(format!("Neumann flux must be finite (got {q})")))
            }
            _ => Ok(()),
        }
    }

    /// Value used over the step `(t0, t1]`. Flux series are sampled at the
    /// step midpoint; the caller keeps steps inside one record.
    pub fn resolve(&self, t0: f64, t1: f64) -> Result<ResolvedBc<T>> {
        Ok(match self {
            BoundaryCondition::Dirichlet { h_b } => ResolvedBc::Dirichlet(*h_b),
            BoundaryCondition::NeumannFlux { q } => ResolvedBc::Flux(*q),
            BoundaryCondition::FreeDrainage => ResolvedBc::FreeDrainage,
            BoundaryCondition::FluxSeries(s) => {
                s.flux_at(t1)?;
                ResolvedBc::Flux(T::of(s.flux_at(0.5 * (t0 + t1))?))
            }
        })
    }
}

/// Boundary condition with its value fixed for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedBc<T> {
    Dirichlet(T),
    Flux(T),
    FreeDrainage,
}

/// Arithmetic-mean conductivity of the face between two cells.
#[inline]
pub fn face_conductivity<T: Real>(k_p: T, k_n: T) -> T {
    (k_p + k_n) * T::of(0.5)
}

/// An exterior face of an owned cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFace<T> {
    /// Ext index of the owning cell.
    pub e: usize,
    pub face: Face,
    pub patch: usize,
    pub area: T,
    /// Cell centre to face distance.
    pub half: T,
    /// Face elevation minus cell elevation.
    pub dz: T,
    /// Downward component of the outward normal.
    pub downward: T,
}

/// Everything one part needs to assemble its rows.
#[derive(Debug, Clone)]
pub struct LocalDomain<T> {
    pub layout: LocalLayout,
    pub halo: HaloDescriptor,
    /// Soil of every ext slot (outside slots repeat a neighbour's soil).
    pub soils: Vec<SoilModel<T>>,
    pub elevation: Vec<T>,
    pub volume: T,
    pub area: [T; 3],
    pub spacing: [T; 3],
    pub boundary: Vec<BoundaryFace<T>>,
    pub n_patches: usize,
}

impl<T: Real> LocalDomain<T> {
    /// Builds part `part` from global per-cell soils.
    pub fn new(
        grid: &Grid,
        map: &PartitionMap,
        halo: &[HaloDescriptor],
        part: usize,
        soils: &[SoilModel<T>],
        patches: &PatchSet,
    ) -> Self {
        assert_eq!(soils.len(), grid.n_cells());
        let layout = map.local_layout(part);
        let dims = grid.dims();
        let n = layout.len();
        let mut local_soils = Vec::with_capacity(n);
        let mut elevation = Vec::with_capacity(n);
        for e in 0..n {
            let g = layout.global_ijk(e);
            let clamped: [usize; 3] = std::array::from_fn(|a| g[a].clamp(0, dims[a] as i64 - 1) as usize);
            local_soils.push(soils[grid.index(clamped)]);
            elevation.push(T::of(grid.elevation_at(grid.center_of(g))));
        }
        let mut boundary = Vec::new();
        for (&e, &c) in layout.owned.iter().zip(&layout.global_of_owned) {
            let ijk = grid.ijk(c);
            for f in Face::ALL {
                if grid.on_face(ijk, f) {
                    let axis = f.axis();
                    boundary.push(BoundaryFace {
                        e,
                        face: f,
                        patch: patches.patch_at(f, grid.face_coords(ijk, f)),
                        area: T::of(grid.face_area(axis)),
                        half: T::of(0.5 * grid.spacing(axis)),
                        dz: T::of(grid.face_elevation(c, f) - grid.elevation(c)),
                        downward: T::of(grid.downward_component(f)),
                    });
                }
            }
        }
        LocalDomain {
            halo: halo[part].clone(),
            soils: local_soils,
            elevation,
            volume: T::of(grid.cell_volume()),
            area: Axis::ALL.map(|a| T::of(grid.face_area(a))),
            spacing: Axis::ALL.map(|a| T::of(grid.spacing(a))),
            boundary,
            n_patches: patches.len(),
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    /// Per-face transmissibility factor `A / d` along each axis.
    fn geometric(&self) -> [T; 3] {
        std::array::from_fn(|a| self.area[a] / self.spacing[a])
    }
}

/// Head, water content and conductivity fields of one part (ext-sized).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState<T> {
    pub h_old: Vec<T>,
    pub h_iter: Vec<T>,
    pub theta_old: Vec<T>,
    pub theta_iter: Vec<T>,
    pub k_iter: Vec<T>,
}

impl<T: Real> FieldState<T> {
    /// `h` must already carry current halo values.
    pub fn new(dom: &LocalDomain<T>, h: Vec<T>) -> Self {
        assert_eq!(h.len(), dom.len());
        let n = h.len();
        let mut st = FieldState { h_old: h.clone(), h_iter: h, theta_old: vec![T::zero(); n], theta_iter: vec![T::zero(); n], k_iter: vec![T::zero(); n] };
        st.refresh_iterate(dom);
        st.theta_old.copy_from_slice(&st.theta_iter);
        st
    }

    /// Recomputes `theta_iter` and `k_iter` from `h_iter` on every slot
    /// (halos included).
    pub fn refresh_iterate(&mut self, dom: &LocalDomain<T>) {
        fill_water_content_and_conductivity(&dom.soils, &self.h_iter, &mut self.theta_iter, &mut self.k_iter);
    }

    /// Makes `h_iter` the new time level.
    pub fn accept(&mut self, dom: &LocalDomain<T>) {
        self.h_old.copy_from_slice(&self.h_iter);
        fill_water_content(&dom.soils, &self.h_old, &mut self.theta_old);
    }

    /// Restarts the Picard sequence from the old time level.
    pub fn reset_iterate(&mut self) {
        self.h_iter.copy_from_slice(&self.h_old);
    }
}

/// Storage coefficient `C` of ext slot `e`: chord slope, floored at S.
#[inline]
pub fn storage_capacity<T: Real>(dom: &LocalDomain<T>, state: &FieldState<T>, e: usize) -> T {
    let s = &dom.soils[e];
    s.chord_capacity_with(state.h_iter[e], state.h_old[e], state.theta_iter[e], state.theta_old[e]).max(s.storativity())
}

/// Assembles the linear system for `h_new` on the owned cells of one part.
/// `bcs` is indexed by patch id.
pub fn assemble<T: Real>(
    dom: &LocalDomain<T>,
    state: &FieldState<T>,
    bcs: &[ResolvedBc<T>],
    dt: T,
    mat: &mut StencilMatrix<T>,
) -> Result<()> {
    if bcs.len() != dom.n_patches {
        return Err(Error::Config(format!("{} patches but {} boundary conditions", dom.n_patches, bcs.len())));
    }
    if !(dt > T::zero()) {
        return Err(Error::Config(format!("time step must be positive (got {dt})")));
    }
    mat.clear();
    let strides = mat.strides();
    let geo = dom.geometric();
    let kinds = &dom.layout.kinds;
    let k = &state.k_iter;
    let z = &dom.elevation;
    let storage_scale = dom.volume / dt;
    for &e in &dom.layout.owned {
        let c = storage_capacity(dom, state, e) * storage_scale;
        let mut diag = c;
        let mut rhs = c * state.h_old[e];
        for a in 0..3 {
            let s = strides[a];
            let hi = e + s;
            if kinds[hi] != CellKind::Outside {
                let t = face_conductivity(k[e], k[hi]) * geo[a];
                mat.off[a][e] = -t;
                diag = diag + t;
                rhs = rhs + t * (z[hi] - z[e]);
            }
            let lo = e - s;
            if kinds[lo] != CellKind::Outside {
                let t = face_conductivity(k[lo], k[e]) * geo[a];
                mat.off[a][lo] = -t;
                diag = diag + t;
                rhs = rhs + t * (z[lo] - z[e]);
            }
        }
        mat.diag[e] = diag;
        mat.rhs[e] = rhs;
    }
    for bf in &dom.boundary {
        let e = bf.e;
        match bcs[bf.patch] {
            ResolvedBc::Dirichlet(h_b) => {
                let k_b = face_conductivity(k[e], dom.soils[e].conductivity(h_b));
                let t = k_b * bf.area / bf.half;
                mat.diag[e] = mat.diag[e] + t;
                mat.rhs[e] = mat.rhs[e] + t * h_b + t * bf.dz;
            }
            ResolvedBc::Flux(q) => {
                mat.rhs[e] = mat.rhs[e] - q * bf.area;
            }
            ResolvedBc::FreeDrainage => {
                if !(bf.downward > T::zero()) {
                    return Err(Error::Config(format!(
                        "free drainage on face {} which does not point downward",
                        bf.face.name()
                    )));
                }
                mat.rhs[e] = mat.rhs[e] - k[e] * bf.area * bf.downward;
            }
        }
    }
    Ok(())
}

/// Outward volumetric flux [m^3/s] through one boundary face for head `h`
/// and the conductivity `k` used in assembly.
#[inline]
pub fn boundary_face_flux<T: Real>(dom: &LocalDomain<T>, bf: &BoundaryFace<T>, bc: ResolvedBc<T>, h: &[T], k: &[T]) -> T {
    let e = bf.e;
    match bc {
        ResolvedBc::Dirichlet(h_b) => {
            let k_b = face_conductivity(k[e], dom.soils[e].conductivity(h_b));
            let t = k_b * bf.area / bf.half;
            -(t * (h_b - h[e]) + t * bf.dz)
        }
        ResolvedBc::Flux(q) => q * bf.area,
        ResolvedBc::FreeDrainage => k[e] * bf.area * bf.downward,
    }
}

/// Local per-patch outward flux [m^3/s], indexed by patch id.
pub fn boundary_fluxes<T: Real>(dom: &LocalDomain<T>, bcs: &[ResolvedBc<T>], h: &[T], k: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); dom.n_patches];
    for bf in &dom.boundary {
        out[bf.patch] = out[bf.patch] + boundary_face_flux(dom, bf, bcs[bf.patch], h, k);
    }
    out
}

/// Darcy flux [m^3/s] through the high-side face of every owned cell along
/// each axis, positive in the +axis direction. Faces on the domain boundary
/// are reported as zero (see [`boundary_fluxes`]). `h` and `k` need halos.
pub fn darcy_flux<T: Real>(dom: &LocalDomain<T>, h: &[T], k: &[T]) -> [Vec<T>; 3] {
    let n = dom.len();
    let ext = dom.layout.ext;
    let strides = [1, ext[0], ext[0] * ext[1]];
    let geo = dom.geometric();
    let z = &dom.elevation;
    let mut out = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
    for &e in &dom.layout.owned {
        for a in 0..3 {
            let nb = e + strides[a];
            if dom.layout.kinds[nb] != CellKind::Outside {
                let t = face_conductivity(k[e], k[nb]) * geo[a];
                out[a][e] = -t * ((h[nb] - h[e]) + (z[nb] - z[e]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::hydraulic_conductivity;
    fn loam() -> SoilModel<f64> {
        SoilModel::loam()
    }
    use crate::exchange::SerialComm;
    use crate::grid::{build_grid, halo_topology, partition_simple, GridSpec, Patch};
    use crate::linsolve::pcg_solve;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn serial_domain(grid: &Grid, soils: &[SoilModel<f64>], patches: &PatchSet) -> LocalDomain<f64> {
        let map = partition_simple(grid, 1, [1, 1, 1]).unwrap();
        LocalDomain::new(grid, &map, &halo_topology(&map), 0, soils, patches)
    }

    fn ext_field(dom: &LocalDomain<f64>, f: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut h = vec![0.0; dom.len()];
        for (&e, &c) in dom.layout.owned.iter().zip(&dom.layout.global_of_owned) {
            h[e] = f(c);
        }
        h
    }

    fn solve(dom: &LocalDomain<f64>, mat: &StencilMatrix<f64>, tol: f64) -> Vec<f64> {
        let mut x = vec![0.0; dom.len()];
        pcg_solve(mat, &mut x, tol, 10_000, &mut SerialComm::new(), &dom.halo).unwrap();
        x
    }

    #[test]
    fn face_conductivity_examples() {
        assert_relative_eq!(face_conductivity(2e-6, 4e-6), 3e-6, max_relative = 1e-15);
        assert_eq!(face_conductivity(1.7e-7, 1.7e-7), 1.7e-7);
        let k1 = hydraulic_conductivity(&loam(), -1.0).unwrap();
        assert_relative_eq!(face_conductivity(2.89e-6, k1), (2.89e-6 + k1) / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn single_closed_cell_keeps_its_head() {
        let g = build_grid(&GridSpec::new([1, 1, 1], [0.3, 0.2, 0.1])).unwrap();
        let patches = PatchSet::new(&g, vec![Patch::whole("all", Face::ZMax)], Some(0)).unwrap();
        let dom = serial_domain(&g, &[loam()], &patches);
        for (h0, dt) in [(-0.7, 1.0), (0.4, 1e5), (-30.0, 1e-3)] {
            let st = FieldState::new(&dom, ext_field(&dom, |_| h0));
            let mut m = StencilMatrix::new(&dom.layout);
            assemble(&dom, &st, &[ResolvedBc::Flux(0.0)], dt, &mut m).unwrap();
            let x = solve(&dom, &m, 1e-14);
            assert_relative_eq!(x[dom.layout.owned[0]], h0, max_relative = 1e-14);
        }
    }

    fn column(n: usize, dz: f64) -> (Grid, PatchSet) {
        let g = build_grid(&GridSpec::new([1, 1, n], [1.0, 1.0, dz]).with_origin([0.0, 0.0, 0.5 * dz])).unwrap();
        let p = PatchSet::new(
            &g,
            vec![Patch::whole("top", Face::ZMax), Patch::whole("bottom", Face::ZMin), Patch::whole("sides", Face::XMin)],
            Some(2),
        )
        .unwrap();
        (g, p)
    }

    #[test]
    fn hydrostatic_column_is_stationary() {
        let (g, p) = column(50, 0.02);
        let soils = vec![loam(); 50];
        let dom = serial_domain(&g, &soils, &p);
        let h0 = ext_field(&dom, |c| -g.elevation(c));
        let st = FieldState::new(&dom, h0.clone());
        let bcs = [ResolvedBc::Flux(0.0), ResolvedBc::Dirichlet(0.0), ResolvedBc::Flux(0.0)];
        let mut m = StencilMatrix::new(&dom.layout);
        assemble(&dom, &st, &bcs, 3600.0, &mut m).unwrap();
        let mut r = vec![0.0; dom.len()];
        m.residual(&h0, &mut r);
        assert!(m.scaled_residual_local(&r) < 1e-12);
        let x = solve(&dom, &m, 1e-12);
        for &e in &dom.layout.owned {
            assert!((x[e] - h0[e]).abs() < 1e-10);
        }
        let fl = darcy_flux(&dom, &h0, &st.k_iter);
        assert!(fl.iter().flatten().all(|v| v.abs() < 1e-20));
        assert!(boundary_fluxes(&dom, &bcs, &h0, &st.k_iter).iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn uniform_head_horizontal_has_no_flux() {
        let g = build_grid(&GridSpec::new([5, 4, 1], [1.0, 1.0, 1.0])).unwrap();
        let p = PatchSet::new(&g, vec![Patch::whole("b", Face::ZMin)], Some(0)).unwrap();
        let soils = vec![loam(); 20];
        let dom = serial_domain(&g, &soils, &p);
        let st = FieldState::new(&dom, ext_field(&dom, |_| -0.3));
        let fl = darcy_flux(&dom, &st.h_iter, &st.k_iter);
        for a in 0..2 {
            assert!(fl[a].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn two_saturated_cells_interpolate() {
        let g = build_grid(&GridSpec::new([2, 1, 1], [1.0, 1.0, 1.0])).unwrap();
        let p = PatchSet::new(
            &g,
            vec![Patch::whole("left", Face::XMin), Patch::whole("right", Face::XMax), Patch::whole("rest", Face::ZMin)],
            Some(2),
        )
        .unwrap();
        let ks = 1e-5;
        let soil = SoilModel::van_genuchten(ks, 3.6, 1.56, 0.43, 0.078, 1e-5).unwrap();
        let dom = serial_domain(&g, &[soil; 2], &p);
        let st = FieldState::new(&dom, ext_field(&dom, |_| 0.5));
        let mut m = StencilMatrix::new(&dom.layout);
        let bcs = [ResolvedBc::Dirichlet(1.0), ResolvedBc::Dirichlet(0.0), ResolvedBc::Flux(0.0)];
        assemble(&dom, &st, &bcs, 1e30, &mut m).unwrap();
        // dense oracle: [[3K, -K], [-K, 3K]] h = [2K, 0]
        let (a, b, c, d, r0, r1) = (3.0 * ks, -ks, -ks, 3.0 * ks, 2.0 * ks, 0.0);
        let det = a * d - b * c;
        let oracle = [(r0 * d - b * r1) / det, (a * r1 - c * r0) / det];
        let x = solve(&dom, &m, 1e-14);
        let o = &dom.layout.owned;
        assert_relative_eq!(x[o[0]], oracle[0], max_relative = 1e-12);
        assert_relative_eq!(x[o[1]], oracle[1], max_relative = 1e-12);
        assert_relative_eq!(x[o[0]], 0.75, max_relative = 1e-12);
        assert_relative_eq!(x[o[1]], 0.25, max_relative = 1e-12);
    }

    #[test]
    fn free_drainage_on_top_is_rejected() {
        let (g, p) = column(3, 0.1);
        let dom = serial_domain(&g, &[loam(); 3], &p);
        let st = FieldState::new(&dom, ext_field(&dom, |_| -1.0));
        let mut m = StencilMatrix::new(&dom.layout);
        let none = ResolvedBc::Flux(0.0);
        let r = assemble(&dom, &st, &[ResolvedBc::FreeDrainage, none, none], 1.0, &mut m);
        assert!(matches!(r, Err(Error::Config(_))));
        let r = assemble(&dom, &st, &[none, none, ResolvedBc::FreeDrainage], 1.0, &mut m);
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(assemble(&dom, &st, &[none, ResolvedBc::FreeDrainage, none], 1.0, &mut m).is_ok());
    }

    /// Dense assembly written directly from the discrete balance, cell by
    /// cell over global indices.
    fn dense_oracle(
        g: &Grid,
        soils: &[SoilModel<f64>],
        patches: &PatchSet,
        bcs: &[ResolvedBc<f64>],
        h_old: &[f64],
        h_iter: &[f64],
        dt: f64,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = g.n_cells();
        let kf: Vec<f64> = (0..n).map(|c| soils[c].conductivity(h_iter[c])).collect();
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        let v = g.cell_volume();
        for c in 0..n {
            let cap = soils[c].chord_capacity(h_iter[c], h_old[c]).max(soils[c].storativity());
            a[c][c] += cap * v / dt;
            b[c] += cap * v / dt * h_old[c];
            let ijk = g.ijk(c);
            for f in Face::ALL {
                let ax = f.axis();
                let (area, d) = (g.face_area(ax), g.spacing(ax));
                if g.on_face(ijk, f) {
                    let pid = patches.patch_at(f, g.face_coords(ijk, f));
                    let dz = g.face_elevation(c, f) - g.elevation(c);
                    match bcs[pid] {
                        ResolvedBc::Dirichlet(hb) => {
                            let t = 0.5 * (kf[c] + soils[c].conductivity(hb)) * area / (0.5 * d);
                            a[c][c] += t;
                            b[c] += t * (hb + dz);
                        }
                        ResolvedBc::Flux(q) => b[c] -= q * area,
                        ResolvedBc::FreeDrainage => b[c] -= kf[c] * area * g.downward_component(f),
                    }
                } else {
                    let mut nj = ijk;
                    if f.is_max() {
                        nj[ax.index()] += 1;
                    } else {
                        nj[ax.index()] -= 1;
                    }
                    let nc = g.index(nj);
                    let t = 0.5 * (kf[c] + kf[nc]) * area / d;
                    a[c][c] += t;
                    a[c][nc] -= t;
                    b[c] += t * (g.elevation(nc) - g.elevation(c));
                }
            }
        }
        (a, b)
    }

    fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for p in 0..n {
            let piv = (p..n).max_by(|&i, &j| a[i][p].abs().total_cmp(&a[j][p].abs())).unwrap();
            a.swap(p, piv);
            b.swap(p, piv);
            for i in p + 1..n {
                let f = a[i][p] / a[p][p];
                for j in p..n {
                    a[i][j] -= f * a[p][j];
                }
                b[i] -= f * b[p];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    fn random_case(dims: [usize; 3], slope: [f64; 2], seed: u64) -> (Grid, Vec<SoilModel<f64>>, PatchSet, Vec<ResolvedBc<f64>>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spacing = [rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0), rng.gen_range(0.05..0.5)];
        let g = build_grid(&GridSpec::new(dims, spacing).with_slope(slope)).unwrap();
        let n = g.n_cells();
        let soils: Vec<SoilModel<f64>> = (0..n)
            .map(|_| {
                SoilModel::van_genuchten(
                    10f64.powf(rng.gen_range(-7.0..-4.0)),
                    rng.gen_range(0.5..5.0),
                    rng.gen_range(1.1..2.5),
                    rng.gen_range(0.35..0.5),
                    rng.gen_range(0.0..0.2),
                    1e-5,
                )
                .unwrap()
            })
            .collect();
        let patches = PatchSet::new(
            &g,
            vec![Patch::whole("top", Face::ZMax), Patch::whole("bottom", Face::ZMin), Patch::whole("x-", Face::XMin), Patch::whole("rest", Face::XMax)],
            Some(3),
        )
        .unwrap();
        let bottom = if g.downward_component(Face::ZMin) > 0.0 && rng.gen_bool(0.5) {
            ResolvedBc::FreeDrainage
        } else {
            ResolvedBc::Dirichlet(rng.gen_range(-1.0..0.5))
        };
        let bcs = vec![
            ResolvedBc::Flux(rng.gen_range(-1e-5..1e-5)),
            bottom,
            ResolvedBc::Dirichlet(rng.gen_range(-2.0..0.2)),
            ResolvedBc::Flux(0.0),
        ];
        let h_old: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..0.3)).collect();
        let h_iter: Vec<f64> = h_old.iter().map(|h| h + rng.gen_range(-0.5..0.5)).collect();
        (g, soils, patches, bcs, h_old, h_iter)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Matches a dense oracle, and the solved step conserves mass:
        /// storage change equals net boundary inflow.
        #[test]
        fn telescoping_conservation(nx in 1usize..3, ny in 1usize..3, nz in 1usize..3,
                                    a in -20.0f64..20.0, b in -5.0f64..5.0, seed in 0u64..10_000) {
            let (g, soils, patches, bcs, h_old, h_iter) = random_case([nx, ny, nz], [a, b], seed);
            let dom = serial_domain(&g, &soils, &patches);
            let mut st = FieldState::new(&dom, ext_field(&dom, |c| h_old[c]));
            st.h_iter = ext_field(&dom, |c| h_iter[c]);
            st.refresh_iterate(&dom);
            let dt = 600.0;
            let mut m = StencilMatrix::new(&dom.layout);
            assemble(&dom, &st, &bcs, dt, &mut m).unwrap();

            let (da, db) = dense_oracle(&g, &soils, &patches, &bcs, &h_old, &h_iter, dt);
            let x_dense = gauss(da.clone(), db.clone());
            for (&e, &c) in dom.layout.owned.iter().zip(&dom.layout.global_of_owned) {
                prop_assert!((m.diag[e] - da[c][c]).abs() <= 1e-12 * da[c][c].abs());
                prop_assert!((m.rhs[e] - db[c]).abs() <= 1e-12 * (db[c].abs() + da[c][c]));
            }

            let x = solve(&dom, &m, 1e-13);
            let scale = x_dense.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            for (&e, &c) in dom.layout.owned.iter().zip(&dom.layout.global_of_owned) {
                prop_assert!((x[e] - x_dense[c]).abs() <= 1e-9 * scale);
            }

            let storage: f64 = dom.layout.owned.iter()
                .map(|&e| storage_capacity(&dom, &st, e) * dom.volume * (x[e] - st.h_old[e]))
                .sum();
            let out: f64 = boundary_fluxes(&dom, &bcs, &x, &st.k_iter).iter().sum();
            let terms: f64 = dom.layout.owned.iter().map(|&e| m.diag[e] * dt * 1e-13).sum();
            prop_assert!((storage + out * dt).abs() <= terms + 1e-12 * storage.abs(),
                "storage {} outflow {}", storage, out * dt);
        }

        #[test]
        fn m_matrix(nx in 1usize..5, ny in 1usize..5, nz in 1usize..5, seed in 0u64..10_000) {
            let (g, soils, patches, bcs, h_old, h_iter) = random_case([nx, ny, nz], [0.0, 0.0], seed);
            let dom = serial_domain(&g, &soils, &patches);
            let mut st = FieldState::new(&dom, ext_field(&dom, |c| h_old[c]));
            st.h_iter = ext_field(&dom, |c| h_iter[c]);
            st.refresh_iterate(&dom);
            let mut m = StencilMatrix::new(&dom.layout);
            assemble(&dom, &st, &bcs, 60.0, &mut m).unwrap();
            let s = m.strides();
            for &e in &dom.layout.owned {
                let mut off = 0.0;
                for a in 0..3 {
                    prop_assert!(m.off[a][e] <= 0.0 && m.off[a][e - s[a]] <= 0.0);
                    off += m.off[a][e].abs() + m.off[a][e - s[a]].abs();
                }
                let storage = storage_capacity(&dom, &st, e) * dom.volume / 60.0;
                prop_assert!(storage > 0.0);
                prop_assert!(m.diag[e] >= off + storage * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn assembly_is_partition_independent() {
        let (g, soils, patches, bcs, h_old, h_iter) = random_case([6, 4, 4], [12.0, -3.0], 77);
        let serial = serial_domain(&g, &soils, &patches);
        let mut st = FieldState::new(&serial, ext_field(&serial, |c| h_old[c]));
        st.h_iter = ext_field(&serial, |c| h_iter[c]);
        st.refresh_iterate(&serial);
        let mut m1 = StencilMatrix::new(&serial.layout);
        assemble(&serial, &st, &bcs, 100.0, &mut m1).unwrap();

        let map = partition_simple(&g, 4, [2, 1, 2]).unwrap();
        let halo = halo_topology(&map);
        for p in 0..4 {
            let dom = LocalDomain::new(&g, &map, &halo, p, &soils, &patches);
            // fill owned and halo slots directly from the global fields
            let fill = |v: &[f64]| {
                let mut out = vec![0.0; dom.len()];
                for e in 0..dom.len() {
                    if dom.layout.kinds[e] != CellKind::Outside {
                        let gi = dom.layout.global_ijk(e).map(|x| x as usize);
                        out[e] = v[g.index(gi)];
                    }
                }
                out
            };
            let mut sp = FieldState::new(&dom, fill(&h_old));
            sp.h_iter = fill(&h_iter);
            sp.refresh_iterate(&dom);
            let mut mp = StencilMatrix::new(&dom.layout);
            assemble(&dom, &sp, &bcs, 100.0, &mut mp).unwrap();
            for (&e, &c) in dom.layout.owned.iter().zip(&dom.layout.global_of_owned) {
                let e1 = serial.layout.ext_of_global(c).unwrap();
                assert_eq!(mp.diag[e].to_bits(), m1.diag[e1].to_bits());
                assert_eq!(mp.rhs[e].to_bits(), m1.rhs[e1].to_bits());
            }
        }
    }
}
