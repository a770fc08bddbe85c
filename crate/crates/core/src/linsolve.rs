//! Symmetric 7-point stencil systems, the DIC preconditioner and PCG.
//!
//! Vectors and coefficients live in the ext layout of a part (owned block
//! plus one ghost layer, x fastest). Off-diagonal `off[a][e]` couples slot
//! `e` with `e + stride[a]`, so the low-side faces of a block sit at ghost
//! slots. Coefficients of faces on the physical boundary are zero.

use crate::error::{Error, Result};
use crate::exchange::{local_reduce, Communicator, ReduceKind};
use crate::grid::{HaloDescriptor, LocalLayout};
use crate::scalar::Real;

/// Default PCG iteration cap per linear solve.
pub const DEFAULT_MAX_ITER: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct StencilMatrix<T> {
    ext: [usize; 3],
    strides: [usize; 3],
    pub diag: Vec<T>,
    pub off: [Vec<T>; 3],
    pub rhs: Vec<T>,
}

/// Calls `f(row_start, j, k)` for each x-row of owned cells; the row covers
/// ext slots `row_start..row_start + nx`.
#[inline]
fn for_rows(ext: [usize; 3], mut f: impl FnMut(usize, usize, usize)) {
    let (ex, exy) = (ext[0], ext[0] * ext[1]);
    for k in 1..ext[2] - 1 {
        for j in 1..ext[1] - 1 {
            f(1 + j * ex + k * exy, j, k);
        }
    }
}

/// Same traversal in reverse order (backward sweeps).
#[inline]
fn for_rows_rev(ext: [usize; 3], mut f: impl FnMut(usize, usize, usize)) {
    let (ex, exy) = (ext[0], ext[0] * ext[1]);
    for k in (1..ext[2] - 1).rev() {
        for j in (1..ext[1] - 1).rev() {
            f(1 + j * ex + k * exy, j, k);
        }
    }
}

impl<T: Real> StencilMatrix<T> {
    /// Zero system shaped for `layout`.
    pub fn new(layout: &LocalLayout) -> Self {
        Self::with_ext(layout.ext)
    }

    pub fn with_ext(ext: [usize; 3]) -> Self {
        assert!(ext.iter().all(|&n| n >= 3), "ext dims include one ghost layer per side");
        let n = ext[0] * ext[1] * ext[2];
        StencilMatrix {
            ext,
            strides: [1, ext[0], ext[0] * ext[1]],
            diag: vec![T::zero(); n],
            off: [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]],
            rhs: vec![T::zero(); n],
        }
    }

    pub fn ext(&self) -> [usize; 3] {
        self.ext
    }

    pub fn strides(&self) -> [usize; 3] {
        self.strides
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn n_owned(&self) -> usize {
        (self.ext[0] - 2) * (self.ext[1] - 2) * (self.ext[2] - 2)
    }

    pub fn clear(&mut self) {
        let [ox, oy, oz] = &mut self.off;
        for v in [&mut self.diag, &mut self.rhs, ox, oy, oz] {
            v.fill(T::zero());
        }
    }

    /// `y = A x` on owned cells. `x` must carry current halo values and zero
    /// (or finite) values elsewhere.
    pub fn apply(&self, x: &[T], y: &mut [T]) {
        let [sx, sy, sz] = self.strides;
        let nx = self.ext[0] - 2;
        let [ox, oy, oz] = &self.off;
        let d = &self.diag;
        for_rows(self.ext, |r0, _, _| {
            for e in r0..r0 + nx {
                y[e] = d[e] * x[e]
                    + ox[e] * x[e + sx]
                    + ox[e - sx] * x[e - sx]
                    + oy[e] * x[e + sy]
                    + oy[e - sy] * x[e - sy]
                    + oz[e] * x[e + sz]
                    + oz[e - sz] * x[e - sz];
            }
        });
    }

    /// Owned-cell values of `b - A x`.
    pub fn residual(&self, x: &[T], r: &mut [T]) {
        self.apply(x, r);
        let nx = self.ext[0] - 2;
        for_rows(self.ext, |r0, _, _| {
            for e in r0..r0 + nx {
                r[e] = self.rhs[e] - r[e];
            }
        });
    }

    /// Local part of `max_i |r_i / diag_i|`.
    pub fn scaled_residual_local(&self, r: &[T]) -> T {
        let nx = self.ext[0] - 2;
        let mut m = T::zero();
        let mut bad = false;
        for_rows(self.ext, |r0, _, _| {
            for e in r0..r0 + nx {
                let v = (r[e] / self.diag[e]).abs();
                if v.is_nan() {
                    bad = true;
                } else if v > m {
                    m = v;
                }
            }
        });
        if bad {
            T::nan()
        } else {
            m
        }
    }

    /// Calls `f(e)` for each owned ext slot in lexicographic order.
    pub fn for_each_owned(&self, mut f: impl FnMut(usize)) {
        let nx = self.ext[0] - 2;
        for_rows(self.ext, |r0, _, _| (r0..r0 + nx).for_each(&mut f));
    }
}

/// Modified diagonal of the IC(0) factor and its reciprocal.
#[derive(Debug, Clone, PartialEq)]
pub struct DicFactor<T> {
    dtilde: Vec<T>,
    inv_dtilde: Vec<T>,
}

impl<T: Real> DicFactor<T> {
    /// Modified diagonal at ext slot `e` (owned cells only).
    pub fn dtilde(&self, e: usize) -> T {
        self.dtilde[e]
    }
}

/// IC(0) factorization restricted to the part's owned cells.
pub fn dic_factor<T: Real>(a: &StencilMatrix<T>) -> Result<DicFactor<T>> {
    let [sx, sy, sz] = a.strides;
    let nx = a.ext[0] - 2;
    let mut dt = vec![T::zero(); a.len()];
    let mut inv = vec![T::zero(); a.len()];
    let mut failure = None;
    for_rows(a.ext, |r0, j, k| {
        if failure.is_some() {
            return;
        }
        for (i, e) in (r0..r0 + nx).enumerate() {
            let mut d = a.diag[e];
            if i > 0 {
                d = d - a.off[0][e - sx] * a.off[0][e - sx] * inv[e - sx];
            }
            if j > 1 {
                d = d - a.off[1][e - sy] * a.off[1][e - sy] * inv[e - sy];
            }
            if k > 1 {
                d = d - a.off[2][e - sz] * a.off[2][e - sz] * inv[e - sz];
            }
            if !(d > T::zero()) || !d.is_finite() {
                failure = Some((e, d.as_f64()));
                return;
            }
            dt[e] = d;
            inv[e] = T::one() / d;
        }
    });
    match failure {
        Some((cell, value)) => Err(Error::Breakdown { cell, value }),
        None => Ok(DicFactor { dtilde: dt, inv_dtilde: inv }),
    }
}

/// Solves `(D + L) D^-1 (D + L^T) z = r` on the owned cells of one part.
pub fn dic_apply<T: Real>(f: &DicFactor<T>, a: &StencilMatrix<T>, r: &[T], z: &mut [T]) {
    let [sx, sy, sz] = a.strides;
    let nx = a.ext[0] - 2;
    let inv = &f.inv_dtilde;
    let [ox, oy, oz] = &a.off;
    for_rows(a.ext, |r0, j, k| {
        for (i, e) in (r0..r0 + nx).enumerate() {
            let mut s = r[e];
            if i > 0 {
                s = s - ox[e - sx] * z[e - sx];
            }
            if j > 1 {
                s = s - oy[e - sy] * z[e - sy];
            }
            if k > 1 {
                s = s - oz[e - sz] * z[e - sz];
            }
            z[e] = s * inv[e];
        }
    });
    let (ny, nz) = (a.ext[1] - 2, a.ext[2] - 2);
    for_rows_rev(a.ext, |r0, j, k| {
        for (i, e) in (r0..r0 + nx).enumerate().rev() {
            let mut s = T::zero();
            if i + 1 < nx {
                s = s + ox[e] * z[e + sx];
            }
            if j < ny {
                s = s + oy[e] * z[e + sy];
            }
            if k < nz {
                s = s + oz[e] * z[e + sz];
            }
            z[e] = z[e] - s * inv[e];
        }
    });
}

/// Outcome of a converged solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats<T> {
    pub iterations: usize,
    /// Final `max_i |r_i / diag_i|` over all parts.
    pub residual: T,
}

fn dot<T: Real>(a: &StencilMatrix<T>, x: &[T], y: &[T]) -> T {
    let nx = a.ext[0] - 2;
    let mut s = T::zero();
    for_rows(a.ext, |r0, _, _| {
        s = s + local_reduce(ReduceKind::Sum, (r0..r0 + nx).map(|e| x[e] * y[e]));
    });
    s
}

/// Preconditioned conjugate gradient for one part of a distributed system.
///
/// `x` holds the initial guess on owned cells and receives the solution.
/// Stops when the global `max_i |r_i / diag_i|` is at most `tol`.
pub fn pcg_solve<T, C>(
    a: &StencilMatrix<T>,
    x: &mut [T],
    tol: T,
    max_iter: usize,
    comm: &mut C,
    halo: &HaloDescriptor,
) -> Result<SolveStats<T>>
where
    T: Real,
    C: Communicator<T> + ?Sized,
{
    assert_eq!(x.len(), a.len());
    let factor = dic_factor(a);
    let failed = comm.global_reduce(ReduceKind::Max, if factor.is_err() { T::one() } else { T::zero() })?;
    let factor = match factor {
        Err(e) => return Err(e),
        Ok(_) if failed > T::zero() => {
            return Err(Error::Breakdown { cell: usize::MAX, value: f64::NAN });
        }
        Ok(f) => f,
    };

    let n = a.len();
    let nx = a.ext[0] - 2;
    let mut r = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    let mut p = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];

    comm.halo_exchange(x, halo)?;
    a.residual(x, &mut r);
    let mut res = comm.global_reduce(ReduceKind::Max, a.scaled_residual_local(&r))?;
    if res <= tol {
        return Ok(SolveStats { iterations: 0, residual: res });
    }
    dic_apply(&factor, a, &r, &mut z);
    p.copy_from_slice(&z);
    let mut rz = comm.global_reduce(ReduceKind::Sum, dot(a, &r, &z))?;

    for it in 1..=max_iter {
        comm.halo_exchange(&mut p, halo)?;
        a.apply(&p, &mut q);
        let pq = comm.global_reduce(ReduceKind::Sum, dot(a, &p, &q))?;
        if !(pq > T::zero()) || !rz.is_finite() {
            return Err(Error::NoConvergence { iters: it, residual: res.as_f64() });
        }
        let alpha = rz / pq;
        for_rows(a.ext, |r0, _, _| {
            for e in r0..r0 + nx {
                x[e] = x[e] + alpha * p[e];
                r[e] = r[e] - alpha * q[e];
            }
        });
        res = comm.global_reduce(ReduceKind::Max, a.scaled_residual_local(&r))?;
        if res <= tol {
            return Ok(SolveStats { iterations: it, residual: res });
        }
        if !res.is_finite() {
            return Err(Error::NoConvergence { iters: it, residual: res.as_f64() });
        }
        dic_apply(&factor, a, &r, &mut z);
        let rz_new = comm.global_reduce(ReduceKind::Sum, dot(a, &r, &z))?;
        let beta = rz_new / rz;
        rz = rz_new;
        for_rows(a.ext, |r0, _, _| {
            for e in r0..r0 + nx {
                p[e] = z[e] + beta * p[e];
            }
        });
    }
    Err(Error::NoConvergence { iters: max_iter, residual: res.as_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exchange::{run_spmd, SerialComm};
    use crate::grid::{build_grid, halo_topology, partition_simple, CellKind, GridSpec, PartitionMap};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::time::Duration;

    /// Global stencil system defined by per-cell diagonal, per-face coupling
    /// (face on the high side of a cell along each axis) and rhs.
    struct GlobalSystem {
        dims: [usize; 3],
        diag: Vec<f64>,
        off: [Vec<f64>; 3],
        rhs: Vec<f64>,
    }

    impl GlobalSystem {
        fn random(dims: [usize; 3], seed: u64) -> Self {
            let n = dims.iter().product();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut off: [Vec<f64>; 3] = Default::default();
            for (a, o) in off.iter_mut().enumerate() {
                *o = (0..n)
                    .map(|c| {
                        let ijk = [c % dims[0], (c / dims[0]) % dims[1], c / (dims[0] * dims[1])];
                        if ijk[a] + 1 < dims[a] {
                            -rng.gen_range(0.1..1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
            let mut diag = vec![0.0; n];
            let s = [1, dims[0], dims[0] * dims[1]];
            for c in 0..n {
                let ijk = [c % dims[0], (c / dims[0]) % dims[1], c / (dims[0] * dims[1])];
                let mut d = rng.gen_range(0.05..0.5);
                for a in 0..3 {
                    d -= off[a][c];
                    if ijk[a] > 0 {
                        d -= off[a][c - s[a]];
                    }
                }
                diag[c] = d;
            }
            let rhs = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            GlobalSystem { dims, diag, off, rhs }
        }

        fn n(&self) -> usize {
            self.diag.len()
        }

        fn matvec(&self, x: &[f64]) -> Vec<f64> {
            let s = [1, self.dims[0], self.dims[0] * self.dims[1]];
            let mut y: Vec<f64> = (0..self.n()).map(|c| self.diag[c] * x[c]).collect();
            for a in 0..3 {
                for c in 0..self.n() {
                    let o = self.off[a][c];
                    if o != 0.0 {
                        y[c] += o * x[c + s[a]];
                        y[c + s[a]] += o * x[c];
                    }
                }
            }
            y
        }

        fn local(&self, map: &PartitionMap, part: usize) -> (StencilMatrix<f64>, crate::grid::LocalLayout) {
            let l = map.local_layout(part);
            let mut m = StencilMatrix::new(&l);
            for e in 0..l.len() {
                let g = l.global_ijk(e);
                if g.iter().zip(self.dims).any(|(&v, d)| v < 0 || v >= d as i64) {
                    continue;
                }
                let c = g[0] as usize + self.dims[0] * (g[1] as usize + self.dims[1] * g[2] as usize);
                for a in 0..3 {
                    m.off[a][e] = self.off[a][c];
                }
                if l.kinds[e] == CellKind::Owned {
                    m.diag[e] = self.diag[c];
                    m.rhs[e] = self.rhs[c];
                }
            }
            // faces leaving the ext box on the high side are never read
            (m, l)
        }

        fn solve_parts(&self, parts: usize, cuts: [usize; 3], tol: f64) -> (Vec<f64>, usize) {
            let g = build_grid(&GridSpec::new(self.dims, [1.0; 3])).unwrap();
            let map = partition_simple(&g, parts, cuts).unwrap();
            let halo = halo_topology(&map);
            let out = run_spmd(parts, Duration::from_secs(60), |c| {
                let p = c.rank();
                let (m, l) = self.local(&map, p);
                let mut x = vec![0.0; l.len()];
                let st = pcg_solve(&m, &mut x, tol, 10 * self.n(), c, &halo[p]).unwrap();
                let vals: Vec<(usize, f64)> = l.owned.iter().zip(&l.global_of_owned).map(|(&e, &gc)| (gc, x[e])).collect();
                (vals, st.iterations)
            });
            let mut x = vec![f64::NAN; self.n()];
            for (vals, _) in &out {
                for &(gc, v) in vals {
                    x[gc] = v;
                }
            }
            (x, out[0].1)
        }
    }

    fn two_by_two() -> StencilMatrix<f64> {
        let mut m = StencilMatrix::with_ext([4, 3, 3]);
        let (e0, e1) = (1 + 4 + 12, 2 + 4 + 12);
        m.diag[e0] = 4.0;
        m.diag[e1] = 3.0;
        m.off[0][e0] = -1.0;
        m.rhs[e0] = 1.0;
        m.rhs[e1] = 2.0;
        m
    }

    #[test]
    fn dic_two_by_two() {
        let m = two_by_two();
        let f = dic_factor(&m).unwrap();
        assert_eq!(f.dtilde(17), 4.0);
        assert_eq!(f.dtilde(18), 2.75);
        let mut r = vec![0.0; m.len()];
        r[17] = 1.0;
        let mut z = vec![0.0; m.len()];
        dic_apply(&f, &m, &r, &mut z);
        // full pattern: IC(0) is exact, z = A^-1 (1, 0) = (3, 1) / 11
        assert_relative_eq!(z[17], 3.0 / 11.0, max_relative = 1e-15);
        assert_relative_eq!(z[18], 1.0 / 11.0, max_relative = 1e-15);
    }

    #[test]
    fn pcg_two_by_two() {
        let m = two_by_two();
        let mut x = vec![0.0; m.len()];
        let st = pcg_solve(&m, &mut x, 1e-14, 10, &mut SerialComm::new(), &HaloDescriptor::default()).unwrap();
        assert!(st.iterations <= 2);
        assert_relative_eq!(x[17], 5.0 / 11.0, max_relative = 1e-13);
        assert_relative_eq!(x[18], 9.0 / 11.0, max_relative = 1e-13);
    }

    #[test]
    fn diagonal_system() {
        let mut m = StencilMatrix::with_ext([5, 4, 3]);
        let mut r = vec![0.0; m.len()];
        let mut k = 0.0;
        let owned: Vec<usize> = {
            let mut v = Vec::new();
            m.for_each_owned(|e| v.push(e));
            v
        };
        for &e in &owned {
            k += 1.0;
            m.diag[e] = k;
            m.rhs[e] = 3.0 * k - 1.0;
            r[e] = k * k;
        }
        let f = dic_factor(&m).unwrap();
        let mut z = vec![0.0; m.len()];
        dic_apply(&f, &m, &r, &mut z);
        for &e in &owned {
            assert_eq!(f.dtilde(e), m.diag[e]);
            assert_relative_eq!(z[e], r[e] / m.diag[e], max_relative = 1e-15);
        }
        dic_apply(&f, &m, &vec![0.0; m.len()], &mut z);
        assert!(owned.iter().all(|&e| z[e] == 0.0));

        let mut x = vec![0.0; m.len()];
        let st = pcg_solve(&m, &mut x, 1e-12, 10, &mut SerialComm::new(), &HaloDescriptor::default()).unwrap();
        assert!(st.iterations <= 1);
        for &e in &owned {
            assert_relative_eq!(x[e], m.rhs[e] / m.diag[e], max_relative = 1e-14);
        }
    }

    #[test]
    fn first_cell_keeps_its_diagonal() {
        let sys = GlobalSystem::random([6, 4, 4], 3);
        let g = build_grid(&GridSpec::new(sys.dims, [1.0; 3])).unwrap();
        let map = partition_simple(&g, 4, [2, 2, 1]).unwrap();
        for p in 0..4 {
            let (m, l) = sys.local(&map, p);
            let f = dic_factor(&m).unwrap();
            assert_eq!(f.dtilde(l.owned[0]), m.diag[l.owned[0]]);
            for &e in &l.owned {
                assert!(f.dtilde(e) > 0.0);
            }
        }
    }

    #[test]
    fn breakdown_is_reported() {
        let mut m = two_by_two();
        m.diag[18] = 0.25;
        assert!(matches!(dic_factor(&m), Err(Error::Breakdown { cell: 18, .. })));
        let mut x = vec![0.0; m.len()];
        let r = pcg_solve(&m, &mut x, 1e-10, 10, &mut SerialComm::new(), &HaloDescriptor::default());
        assert!(matches!(r, Err(Error::Breakdown { .. })));
    }

    #[test]
    fn iteration_cap_is_no_convergence() {
        let sys = GlobalSystem::random([10, 10, 10], 9);
        let g = build_grid(&GridSpec::new(sys.dims, [1.0; 3])).unwrap();
        let map = partition_simple(&g, 1, [1, 1, 1]).unwrap();
        let (m, l) = sys.local(&map, 0);
        let mut x = vec![0.0; l.len()];
        let r = pcg_solve(&m, &mut x, 1e-14, 2, &mut SerialComm::new(), &HaloDescriptor::default());
        match r {
            Err(e @ Error::NoConvergence { iters: 2, .. }) => assert!(e.is_step_failure()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manufactured_solution() {
        let mut sys = GlobalSystem::random([12, 9, 7], 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let exact: Vec<f64> = (0..sys.n()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        sys.rhs = sys.matvec(&exact);
        let (x, _) = sys.solve_parts(1, [1, 1, 1], 1e-12);
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in x.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn partition_invariance() {
        let sys = GlobalSystem::random([12, 10, 8], 21);
        let tol = 1e-9;
        let (x1, _) = sys.solve_parts(1, [1, 1, 1], tol);
        for (parts, cuts) in [(2, [2, 1, 1]), (4, [2, 2, 1]), (8, [2, 2, 2])] {
            let (xp, _) = sys.solve_parts(parts, cuts, tol);
            let d = x1.iter().zip(&xp).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(d <= 10.0 * tol, "{parts} parts: max diff {d}");
            // every residual at exit is below tol
            let ax = sys.matvec(&xp);
            for c in 0..sys.n() {
                assert!(((sys.rhs[c] - ax[c]) / sys.diag[c]).abs() <= tol);
            }
        }
    }

    #[test]
    fn single_precision_solve() {
        let mut m = StencilMatrix::<f32>::with_ext([4, 3, 3]);
        m.diag[17] = 4.0;
        m.diag[18] = 3.0;
        m.off[0][17] = -1.0;
        m.rhs[17] = 1.0;
        m.rhs[18] = 2.0;
        let mut x = vec![0.0f32; m.len()];
        pcg_solve(&m, &mut x, 1e-6, 10, &mut SerialComm::new(), &HaloDescriptor::default()).unwrap();
        assert!((x[17] - 5.0 / 11.0).abs() < 1e-6);
        assert!((x[18] - 9.0 / 11.0).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn converges_within_two_n(nx in 1usize..11, ny in 1usize..11, nz in 1usize..11, seed in 0u64..1000) {
            let sys = GlobalSystem::random([nx, ny, nz], seed);
            prop_assume!(sys.n() <= 1000);
            let g = build_grid(&GridSpec::new(sys.dims, [1.0; 3])).unwrap();
            let map = partition_simple(&g, 1, [1, 1, 1]).unwrap();
            let (m, l) = sys.local(&map, 0);
            let mut x = vec![0.0; l.len()];
            let st = pcg_solve(&m, &mut x, 1e-12, 2 * sys.n(), &mut SerialComm::new(), &HaloDescriptor::default()).unwrap();
            prop_assert!(st.iterations <= 2 * sys.n());
            prop_assert!(st.residual <= 1e-12);
        }

        #[test]
        fn preconditioner_is_positive(seed in 0u64..1000) {
            let sys = GlobalSystem::random([7, 5, 4], seed);
            let g = build_grid(&GridSpec::new(sys.dims, [1.0; 3])).unwrap();
            let map = partition_simple(&g, 1, [1, 1, 1]).unwrap();
            let (m, l) = sys.local(&map, 0);
            let f = dic_factor(&m).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let mut r = vec![0.0; l.len()];
            let mut r2 = vec![0.0; l.len()];
            for &e in &l.owned {
                r[e] = rng.gen_range(-1.0..1.0);
                r2[e] = rng.gen_range(-1.0..1.0);
            }
            let mut z = vec![0.0; l.len()];
            let mut z2 = vec![0.0; l.len()];
            dic_apply(&f, &m, &r, &mut z);
            dic_apply(&f, &m, &r2, &mut z2);
            let zr: f64 = l.owned.iter().map(|&e| z[e] * r[e]).sum();
            prop_assert!(zr > 0.0);
            // symmetry: r2 . M^-1 r == r . M^-1 r2
            let a: f64 = l.owned.iter().map(|&e| r2[e] * z[e]).sum();
            let b: f64 = l.owned.iter().map(|&e| r[e] * z2[e]).sum();
            prop_assert!((a - b).abs() <= 1e-12 * (a.abs() + b.abs() + 1.0));
        }
    }
}
