//! Soil hydraulic closures: retention curve, capillary capacity and hydraulic
//! conductivity for the van Genuchten/Mualem and Gardner models.
//!
//! Pressure head `h` is in metres (negative when unsaturated), conductivities
//! in m/s, capacities in 1/m. The `theta`/`capacity`/`conductivity` methods
//! are the unchecked kernels used inside the solver loops; the free functions
//! validate their inputs.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Head differences below this switch the chord slope to the analytic slope.
pub const CHORD_EPSILON: f64 = 1e-9;

/// Specific storativity used when a case does not provide one [1/m].
pub const DEFAULT_STORATIVITY: f64 = 1e-5;

/// Constitutive parameter set for one soil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SoilModel<T> {
    /// van Genuchten retention with Mualem conductivity.
    VanGenuchten {
        /// Saturated hydraulic conductivity [m/s].
        ks: T,
        /// Inverse capillary length [1/m].
        alpha: T,
        /// Shape exponent [-]; `m = 1 - 1/n` is derived.
        n: T,
        theta_s: T,
        theta_r: T,
        /// Specific storativity under positive pressure [1/m].
        storativity: T,
    },
    /// Exponential (Gardner) conductivity `K = Ks exp(alpha h)`. Retention
    /// follows the matching exponential form `theta_r + (theta_s - theta_r) exp(alpha h)`
    /// so that transient runs have a storage term.
    Gardner {
        ks: T,
        alpha: T,
        theta_s: T,
        theta_r: T,
        storativity: T,
    },
}

fn check_common<T: Real>(ks: T, alpha: T, theta_s: T, theta_r: T, s: T) -> Result<()> {
    let mut bad = Vec::new();
    if !(ks > T::zero() && ks.is_finite()) {
        bad.push(format!("Ks must be > 0 (got {ks})"));
    }
    if !(alpha > T::zero() && alpha.is_finite()) {
        bad.push(format!("alpha must be > 0 (got {alpha})"));
    }
    if !(theta_r >= T::zero() && theta_r < theta_s && theta_s <= T::one()) {
        bad.push(format!(
            "water contents must satisfy 0 <= theta_r < theta_s <= 1 (got theta_r = {theta_r}, theta_s = {theta_s})"
        ));
    }
    if !(s >= T::zero() && s.is_finite()) {
        bad.push(format!("storativity must be >= 0 (got {s})"));
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(bad.join("; ")))
    }
}

impl<T: Real> SoilModel<T> {
    pub fn van_genuchten(ks: T, alpha: T, n: T, theta_s: T, theta_r: T, storativity: T) -> Result<Self> {
        check_common(ks, alpha, theta_s, theta_r, storativity)?;
        if !(n > T::one() && n.is_finite()) {
            return Err(Error::InvalidSpec(format!("n must be > 1 (got {n})")));
        }
        Ok(SoilModel::VanGenuchten { ks, alpha, n, theta_s, theta_r, storativity })
    }

    pub fn gardner(ks: T, alpha: T, theta_s: T, theta_r: T, storativity: T) -> Result<Self> {
        check_common(ks, alpha, theta_s, theta_r, storativity)?;
        Ok(SoilModel::Gardner { ks, alpha, theta_s, theta_r, storativity })
    }

    /// The loam column used for the 1D infiltration benchmark.
    pub fn loam() -> Self {
        SoilModel::VanGenuchten {
            ks: T::of(2.89e-6),
            alpha: T::of(3.6),
            n: T::of(1.56),
            theta_s: T::of(0.43),
            theta_r: T::of(0.078),
            storativity: T::of(DEFAULT_STORATIVITY),
        }
    }

    pub fn ks(&self) -> T {
        match *self {
            SoilModel::VanGenuchten { ks, .. } | SoilModel::Gardner { ks, .. } => ks,
        }
    }

    pub fn theta_s(&self) -> T {
        match *self {
            SoilModel::VanGenuchten { theta_s, .. } | SoilModel::Gardner { theta_s, .. } => theta_s,
        }
    }

    pub fn theta_r(&self) -> T {
        match *self {
            SoilModel::VanGenuchten { theta_r, .. } | SoilModel::Gardner { theta_r, .. } => theta_r,
        }
    }

    pub fn storativity(&self) -> T {
        match *self {
            SoilModel::VanGenuchten { storativity, .. } | SoilModel::Gardner { storativity, .. } => {
                storativity
            }
        }
    }

    /// Same soil with a different saturated conductivity.
    pub fn with_ks(mut self, new_ks: T) -> Self {
        match &mut self {
            SoilModel::VanGenuchten { ks, .. } | SoilModel::Gardner { ks, .. } => *ks = new_ks,
        }
        self
    }

    /// Converts the parameters to another scalar type.
    pub fn cast<U: Real>(&self) -> SoilModel<U> {
        let c = |x: T| U::of(x.as_f64());
        match *self {
            SoilModel::VanGenuchten { ks, alpha, n, theta_s, theta_r, storativity } => {
                SoilModel::VanGenuchten {
                    ks: c(ks),
                    alpha: c(alpha),
                    n: c(n),
                    theta_s: c(theta_s),
                    theta_r: c(theta_r),
                    storativity: c(storativity),
                }
            }
            SoilModel::Gardner { ks, alpha, theta_s, theta_r, storativity } => SoilModel::Gardner {
                ks: c(ks),
                alpha: c(alpha),
                theta_s: c(theta_s),
                theta_r: c(theta_r),
                storativity: c(storativity),
            },
        }
    }

    /// Volumetric water content [-].
    #[inline]
    pub fn theta(&self, h: T) -> T {
        if h >= T::zero() {
            return self.theta_s();
        }
        self.theta_unsat(h)
    }

    /// Capillary capacity d(theta)/dh, `S` in the saturated branch [1/m].
    #[inline]
    pub fn capacity(&self, h: T) -> T {
        if h >= T::zero() {
            return self.storativity();
        }
        self.capacity_unsat(h)
    }

    /// Hydraulic conductivity [m/s].
    #[inline]
    pub fn conductivity(&self, h: T) -> T {
        match *self {
            SoilModel::VanGenuchten { ks, .. } if h >= T::zero() => ks,
            SoilModel::Gardner { ks, .. } if h > T::zero() => ks,
            _ => self.conductivity_unsat(h),
        }
    }

    /// Secant capacity between the previous time level and the current
    /// Picard iterate. See [`chord_slope_capacity`] for the branch rules.
    #[inline]
    pub fn chord_capacity(&self, h_iter: T, h_old: T) -> T {
        self.chord_capacity_with(h_iter, h_old, self.theta(h_iter), self.theta(h_old))
    }

    /// [`Self::chord_capacity`] with both water contents already known.
    #[inline]
    pub fn chord_capacity_with(&self, h_iter: T, h_old: T, theta_iter: T, theta_old: T) -> T {
        let dh = h_iter - h_old;
        if dh.abs() <= T::of(CHORD_EPSILON) {
            return self.capacity(h_iter);
        }
        let wet_iter = h_iter >= T::zero();
        let wet_old = h_old >= T::zero();
        match (wet_iter, wet_old) {
            (true, true) => self.storativity(),
            (false, false) => (theta_iter - theta_old) / dh,
            _ => (theta_iter - theta_old) / dh + self.storativity(),
        }
    }

    // Unsaturated-branch expressions. They are finite at h = 0 as well, which
    // the blended field kernels rely on.

    #[inline]
    fn theta_unsat(&self, h: T) -> T {
        match *self {
            SoilModel::VanGenuchten { alpha, n, theta_s, theta_r, .. } => {
                let m = T::one() - n.recip();
                let se = (T::one() + (-alpha * h).powf(n)).powf(-m);
                (theta_s - theta_r) * se + theta_r
            }
            SoilModel::Gardner { alpha, theta_s, theta_r, .. } => {
                (theta_s - theta_r) * (alpha * h).exp() + theta_r
            }
        }
    }

    #[inline]
    fn capacity_unsat(&self, h: T) -> T {
        match *self {
            SoilModel::VanGenuchten { alpha, n, theta_s, theta_r, .. } => {
                let m = T::one() - n.recip();
                let x = -alpha * h;
                (theta_s - theta_r) * alpha * n * m * x.powf(n - T::one())
                    * (T::one() + x.powf(n)).powf(-(T::one() + m))
            }
            SoilModel::Gardner { alpha, theta_s, theta_r, .. } => {
                (theta_s - theta_r) * alpha * (alpha * h).exp()
            }
        }
    }

    /// Water content and conductivity sharing one evaluation of `se`.
    #[inline]
    fn theta_conductivity_unsat(&self, h: T) -> (T, T) {
        match *self {
            SoilModel::VanGenuchten { ks, alpha, n, theta_s, theta_r, .. } => {
                let m = T::one() - n.recip();
                let y = (-alpha * h).powf(n);
                let se = (T::one() + y).powf(-m);
                let inner = -(m * (-(T::one() + y).recip()).ln_1p()).exp_m1();
                ((theta_s - theta_r) * se + theta_r, ks * se.sqrt() * inner * inner)
            }
            SoilModel::Gardner { .. } => (self.theta_unsat(h), self.conductivity_unsat(h)),
        }
    }

    #[inline]
    fn conductivity_unsat(&self, h: T) -> T {
        match *self {
            SoilModel::VanGenuchten { ks, alpha, n, .. } => {
                let m = T::one() - n.recip();
                let y = (-alpha * h).powf(n);
                let se = (T::one() + y).powf(-m);
                // 1 - (1 - se^(1/m))^m with se^(1/m) = 1/(1+y), written to
                // avoid cancellation when dry
                let inner = -(m * (-(T::one() + y).recip()).ln_1p()).exp_m1();
                ks * se.sqrt() * inner * inner
            }
            SoilModel::Gardner { ks, alpha, .. } => ks * (alpha * h).exp(),
        }
    }
}

fn finite<T: Real>(h: T) -> Result<()> {
    if h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("pressure head must be finite (got {h})")))
    }
}

/// Retention curve: `theta_s` for `h >= 0`, van Genuchten (or exponential for
/// Gardner soils) below.
pub fn water_content<T: Real>(soil: &SoilModel<T>, h: T) -> Result<T> {
    finite(h)?;
    Ok(soil.theta(h))
}

/// Capillary capacity `C(h) = dtheta/dh`, equal to the storativity `S` when
/// saturated.
pub fn capillary_capacity<T: Real>(soil: &SoilModel<T>, h: T) -> Result<T> {
    finite(h)?;
    Ok(soil.capacity(h))
}

/// Mualem conductivity for van Genuchten soils, `Ks exp(alpha h)` for Gardner
/// soils; `Ks` when saturated.
pub fn hydraulic_conductivity<T: Real>(soil: &SoilModel<T>, h: T) -> Result<T> {
    finite(h)?;
    Ok(soil.conductivity(h))
}

/// Chord-slope capacity `(theta(h_iter) - theta(h_old)) / (h_iter - h_old)`.
///
/// Falls back to the analytic capacity when the heads differ by less than
/// [`CHORD_EPSILON`]. A chord between two saturated heads returns `S`; a
/// chord crossing `h = 0` returns the raw chord plus `S` so the storage
/// coefficient stays strictly positive.
pub fn chord_slope_capacity<T: Real>(soil: &SoilModel<T>, h_iter: T, h_old: T) -> Result<T> {
    finite(h_iter)?;
    finite(h_old)?;
    Ok(soil.chord_capacity(h_iter, h_old))
}

/// Blended (branch-free) evaluation of the water content over a field.
pub fn fill_water_content<T: Real>(soils: &[SoilModel<T>], h: &[T], out: &mut [T]) {
    for ((o, s), &h) in out.iter_mut().zip(soils).zip(h) {
        let sat = T::step(h);
        let unsat = s.theta_unsat(h.min(T::zero()));
        *o = sat * s.theta_s() + (T::one() - sat) * unsat;
    }
}

/// Blended (branch-free) evaluation of the capillary capacity over a field.
pub fn fill_capacity<T: Real>(soils: &[SoilModel<T>], h: &[T], out: &mut [T]) {
    for ((o, s), &h) in out.iter_mut().zip(soils).zip(h) {
        let sat = T::step(h);
        let unsat = s.capacity_unsat(h.min(T::zero()));
        *o = sat * s.storativity() + (T::one() - sat) * unsat;
    }
}

/// Blended (branch-free) evaluation of the conductivity over a field.
pub fn fill_conductivity<T: Real>(soils: &[SoilModel<T>], h: &[T], out: &mut [T]) {
    for ((o, s), &h) in out.iter_mut().zip(soils).zip(h) {
        // Gardner switches on h > 0, but both branches give Ks at h = 0
        let sat = T::step(h);
        let unsat = s.conductivity_unsat(h.min(T::zero()));
        *o = sat * s.ks() + (T::one() - sat) * unsat;
    }
}

/// [`fill_water_content`] and [`fill_conductivity`] in one pass.
pub fn fill_water_content_and_conductivity<T: Real>(soils: &[SoilModel<T>], h: &[T], theta: &mut [T], k: &mut [T]) {
    for (((t, k), s), &h) in theta.iter_mut().zip(k.iter_mut()).zip(soils).zip(h) {
        let sat = T::step(h);
        let (tu, ku) = s.theta_conductivity_unsat(h.min(T::zero()));
        *t = sat * s.theta_s() + (T::one() - sat) * tu;
        *k = sat * s.ks() + (T::one() - sat) * ku;
    }
}
