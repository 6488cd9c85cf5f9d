//! Desk-scale diffusion models: 1-D multi-surface models and the 2-D normal form on a circle.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::scalar::{count, lit, Real};

/// Trigonometric polynomial on the unit circle:
/// `mean + Σ_k cos[k-1]·cos(2πky) + sin[k-1]·sin(2πky)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicFn<T> {
    pub mean: T,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

impl<T: Real> PeriodicFn<T> {
    pub fn constant(c: T) -> Self {
        Self { mean: c, cos: Vec::new(), sin: Vec::new() }
    }

    pub fn zero() -> Self {
        Self::constant(T::zero())
    }

    pub fn is_constant(&self) -> bool {
        self.cos.iter().chain(&self.sin).all(|c| *c == T::zero())
    }

    pub fn eval(&self, y: T) -> T {
        let w = lit::<T>(std::f64::consts::TAU) * y;
        let mut v = self.mean;
        for (k, c) in self.cos.iter().enumerate() {
            v += *c * (count::<T>(k + 1) * w).cos();
        }
        for (k, s) in self.sin.iter().enumerate() {
            v += *s * (count::<T>(k + 1) * w).sin();
        }
        v
    }

    pub fn derivative(&self, y: T) -> T {
        let tau = lit::<T>(std::f64::consts::TAU);
        let w = tau * y;
        let mut v = T::zero();
        for (k, c) in self.cos.iter().enumerate() {
            let f = count::<T>(k + 1) * tau;
            v -= *c * f * (count::<T>(k + 1) * w).sin();
        }
        for (k, s) in self.sin.iter().enumerate() {
            let f = count::<T>(k + 1) * tau;
            v += *s * f * (count::<T>(k + 1) * w).cos();
        }
        v
    }

    /// Values at the `n` equispaced points `i/n`.
    pub fn sample(&self, n: usize) -> Vec<T> {
        (0..n).map(|i| self.eval(count::<T>(i) / count::<T>(n))).collect()
    }

    /// Lower bound of the function estimated on a fine grid.
    pub fn min_on_circle(&self) -> T {
        let n = 64 * (1 + self.cos.len().max(self.sin.len()));
        self.sample(n).into_iter().fold(T::infinity(), T::min)
    }
}

/// Local normal-form coefficients of one surface.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceLocal<T> {
    pub alpha: T,
    pub beta: T,
    pub dy_coeff: PeriodicFn<T>,
    pub alpha_fn: Option<PeriodicFn<T>>,
    pub beta_fn: Option<PeriodicFn<T>>,
}

impl<T: Real> SurfaceLocal<T> {
    /// Constant coefficients, as used by 1-D surfaces.
    pub fn constant(alpha: T, beta: T) -> Self {
        Self { alpha, beta, dy_coeff: PeriodicFn::zero(), alpha_fn: None, beta_fn: None }
    }

    pub fn alpha_at(&self, y: T) -> T {
        self.alpha_fn.as_ref().map_or(self.alpha, |f| f.eval(y))
    }

    pub fn beta_at(&self, y: T) -> T {
        self.beta_fn.as_ref().map_or(self.beta, |f| f.eval(y))
    }

    pub fn dy_at(&self, y: T) -> T {
        self.dy_coeff.eval(y)
    }

    fn validate(&self) -> Result<()> {
        let amin = self.alpha_fn.as_ref().map_or(self.alpha, |f| f.min_on_circle());
        if !(amin > T::zero()) {
            return Err(invalid(format!("alpha must be positive, got minimum {amin}")));
        }
        Ok(())
    }
}

/// Input description of one surface of a 1-D model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceSpec<T> {
    pub position: T,
    pub alpha: T,
    pub beta: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Surface1D<T> {
    pub position: T,
    pub local: SurfaceLocal<T>,
}

/// Blend band widths on the left and right of a surface core.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bands<T> {
    left: T,
    right: T,
}

/// One-dimensional diffusion with point surfaces, assembled from exact normal-form cores,
/// cubic Hermite blends, constant mid-domain diffusion and a confining drift near the bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Model1D<T> {
    surfaces: Vec<Surface1D<T>>,
    core_radius: T,
    domain_bounds: (T, T),
    confine_strength: T,
    #[serde(skip)]
    bands: Vec<Bands<T>>,
    #[serde(skip)]
    bulk_diffusion: T,
}

/// Fraction of the span at which the confining ramp starts, measured from each bound.
const CONFINE_START: f64 = 0.15;
/// Width of the ramp as a fraction of the span; full strength is reached at 10% from the bound.
const CONFINE_RAMP: f64 = 0.05;

impl<T: Real> Model1D<T> {
    pub fn build(specs: &[SurfaceSpec<T>], bounds: (T, T), core_radius: T, confine_strength: T) -> Result<Self> {
        let (lo, hi) = bounds;
        if !(lo < hi) {
            return Err(invalid("domain bounds must satisfy lo < hi"));
        }
        if !(core_radius > T::zero()) {
            return Err(invalid("core_radius must be positive"));
        }
        if !(confine_strength > T::zero()) {
            return Err(invalid("confine_strength must be positive"));
        }
        for (k, s) in specs.iter().enumerate() {
            if !(s.alpha > T::zero()) {
                return Err(invalid(format!("surface {k}: alpha must be positive, got {}", s.alpha)));
            }
            if !s.position.is_finite() || !s.beta.is_finite() {
                return Err(invalid(format!("surface {k}: non-finite coefficient")));
            }
        }
        for (k, w) in specs.windows(2).enumerate() {
            if !(w[1].position > w[0].position) {
                return Err(invalid(format!("surface positions must be strictly increasing (surfaces {k}, {})", k + 1)));
            }
            if !(w[1].position - w[0].position > lit::<T>(2.0) * core_radius) {
                return Err(invalid(format!(
                    "cores of surfaces {k} and {} overlap: gap {} is not larger than 2·core_radius",
                    k + 1,
                    w[1].position - w[0].position
                )));
            }
        }
        let half = core_radius / lit(2.0);
        let mut bands: Vec<Bands<T>> = vec![Bands { left: half, right: half }; specs.len()];
        for k in 1..specs.len() {
            let gap = specs[k].position - specs[k - 1].position;
            let w = half.min((gap - lit::<T>(2.0) * core_radius) / lit(2.0));
            bands[k - 1].right = w;
            bands[k].left = w;
        }
        let span = hi - lo;
        let inner_lo = lo + lit::<T>(CONFINE_START) * span;
        let inner_hi = hi - lit::<T>(CONFINE_START) * span;
        for (k, (s, b)) in specs.iter().zip(&bands).enumerate() {
            if s.position - core_radius - b.left < inner_lo || s.position + core_radius + b.right > inner_hi {
                return Err(invalid(format!(
                    "surface {k}: core and blend band must lie inside the unconfined zone [{inner_lo}, {inner_hi}]"
                )));
            }
        }
        let bulk_diffusion = specs
            .iter()
            .map(|s| s.alpha * core_radius * core_radius)
            .fold(T::infinity(), T::min);
        let bulk_diffusion = if bulk_diffusion.is_finite() { bulk_diffusion } else { core_radius * core_radius };
        let surfaces = specs
            .iter()
            .map(|s| Surface1D { position: s.position, local: SurfaceLocal::constant(s.alpha, s.beta) })
            .collect();
        Ok(Self { surfaces, core_radius, domain_bounds: bounds, confine_strength, bands, bulk_diffusion })
    }

    pub fn surfaces(&self) -> &[Surface1D<T>] {
        &self.surfaces
    }

    pub fn core_radius(&self) -> T {
        self.core_radius
    }

    pub fn bounds(&self) -> (T, T) {
        self.domain_bounds
    }

    pub fn confine_strength(&self) -> T {
        self.confine_strength
    }

    /// Constant diffusion used away from the surfaces.
    pub fn bulk_diffusion(&self) -> T {
        self.bulk_diffusion
    }

    pub fn num_domains(&self) -> usize {
        self.surfaces.len() + 1
    }

    /// Characteristic exponent of surface `k`.
    pub fn gamma(&self, k: usize) -> Result<T> {
        let s = self.surfaces.get(k).ok_or_else(|| invalid(format!("no surface {k}")))?;
        gamma_constant(s.local.alpha, s.local.beta)
    }

    /// Nearest surface and the signed offset `x − s_k`.
    pub fn nearest_surface(&self, x: T) -> Option<(usize, T)> {
        let idx = self.surfaces.partition_point(|s| s.position < x);
        let mut best: Option<(usize, T)> = None;
        for k in [idx.wrapping_sub(1), idx] {
            if let Some(s) = self.surfaces.get(k) {
                let u = x - s.position;
                if best.is_none_or(|(_, b)| u.abs() < b.abs()) {
                    best = Some((k, u));
                }
            }
        }
        best
    }

    /// Distance to the surface set (infinite when there are no surfaces).
    pub fn dist_to_surfaces(&self, x: T) -> T {
        self.nearest_surface(x).map_or(T::infinity(), |(_, u)| u.abs())
    }

    /// Index of the domain containing `x`: the number of surfaces strictly below `x`.
    pub fn domain_of(&self, x: T) -> usize {
        self.surfaces.partition_point(|s| s.position < x)
    }

    /// Compact `K_i`: points of domain `i` at distance at least `kappa0` from its surfaces.
    pub fn compact_interval(&self, i: usize, kappa0: T) -> Result<(T, T)> {
        if i >= self.num_domains() {
            return Err(invalid(format!("no domain {i}")));
        }
        let lo = if i == 0 { T::neg_infinity() } else { self.surfaces[i - 1].position + kappa0 };
        let hi = if i == self.surfaces.len() { T::infinity() } else { self.surfaces[i].position - kappa0 };
        if !(lo < hi) {
            return Err(invalid(format!("compact of domain {i} is empty at kappa0 = {kappa0}")));
        }
        Ok((lo, hi))
    }

    /// A representative interior point of domain `i`.
    pub fn domain_center(&self, i: usize) -> Result<T> {
        let (blo, bhi) = self.domain_bounds;
        let m = self.surfaces.len();
        if i > m {
            return Err(invalid(format!("no domain {i}")));
        }
        let left = if i == 0 { blo } else { self.surfaces[i - 1].position };
        let right = if i == m { bhi } else { self.surfaces[i].position };
        Ok((left + right) / lit(2.0))
    }

    fn hermite(t: T) -> (T, T, T) {
        let t2 = t * t;
        let t3 = t2 * t;
        let two = lit::<T>(2.0);
        let three = lit::<T>(3.0);
        (two * t3 - three * t2 + T::one(), t3 - two * t2 + t, three * t2 - two * t3)
    }

    /// Core, blend or bulk contribution at `x`: (a, b without confinement).
    fn local_coefficients(&self, x: T) -> (T, T) {
        let Some((k, u)) = self.nearest_surface(x) else {
            return (self.bulk_diffusion, T::zero());
        };
        let local = &self.surfaces[k].local;
        let r = u.abs();
        let z0 = self.core_radius;
        if r <= z0 {
            return (local.alpha * u * u, local.beta * u);
        }
        let w = if u < T::zero() { self.bands[k].left } else { self.bands[k].right };
        if r >= z0 + w {
            return (self.bulk_diffusion, T::zero());
        }
        let t = (r - z0) / w;
        let (h00, h10, h01) = Self::hermite(t);
        let a = h00 * local.alpha * z0 * z0 + h10 * lit::<T>(2.0) * local.alpha * z0 * w + h01 * self.bulk_diffusion;
        let b_mag = h00 * local.beta * z0 + h10 * local.beta * w;
        (a, if u < T::zero() { -b_mag } else { b_mag })
    }

    fn confinement(&self, x: T) -> T {
        let (lo, hi) = self.domain_bounds;
        let span = hi - lo;
        let start = lit::<T>(CONFINE_START) * span;
        let ramp = lit::<T>(CONFINE_RAMP) * span;
        let f = |u: T| {
            if u <= T::zero() {
                T::zero()
            } else if u < T::one() {
                u * u * (lit::<T>(2.0) - u)
            } else {
                u
            }
        };
        let upper = f((x - (hi - start)) / ramp);
        let lower = f(((lo + start) - x) / ramp);
        self.confine_strength * (lower - upper)
    }

    /// Diffusion coefficient `a(x) = σ(x)²/2`.
    pub fn diffusion(&self, x: T) -> T {
        self.local_coefficients(x).0
    }

    /// Itô drift `b(x)`.
    pub fn drift(&self, x: T) -> T {
        self.local_coefficients(x).1 + self.confinement(x)
    }

    /// `min a(x)/min(dist(x,S)², 1)` over `n` equispaced points spanning the domain.
    pub fn ellipticity_margin(&self, n: usize) -> T {
        let (lo, hi) = self.domain_bounds;
        (0..=n)
            .map(|i| {
                let x = lo + (hi - lo) * count::<T>(i) / count::<T>(n);
                let d = self.dist_to_surfaces(x);
                let scale = (d * d).min(T::one());
                if scale > T::zero() {
                    self.diffusion(x) / scale
                } else {
                    T::infinity()
                }
            })
            .fold(T::infinity(), T::min)
    }
}

/// Normal-form model near a single surface `S = circle`, coordinates `(y, z)` with
/// `z ∈ (−z_max, z_max)` and generator
/// `L_y + z²α(y)∂_zz + zβ(y)∂_z + z·d(y)∂_y∂_z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Model2DNormalForm<T> {
    pub grid_size: usize,
    pub ly_diffusion: PeriodicFn<T>,
    pub ly_drift: PeriodicFn<T>,
    pub local: SurfaceLocal<T>,
    pub z_max: T,
}

impl<T: Real> Model2DNormalForm<T> {
    pub fn new(
        grid_size: usize,
        ly_diffusion: PeriodicFn<T>,
        ly_drift: PeriodicFn<T>,
        local: SurfaceLocal<T>,
        z_max: T,
    ) -> Result<Self> {
        if grid_size < 8 {
            return Err(invalid(format!("surface grid needs at least 8 points, got {grid_size}")));
        }
        if !(ly_diffusion.min_on_circle() > T::zero()) {
            return Err(invalid("ly_diffusion must be positive on the whole circle"));
        }
        local.validate()?;
        if !(z_max > T::zero()) {
            return Err(invalid("z_max must be positive"));
        }
        let m = Self { grid_size, ly_diffusion, ly_drift, local, z_max };
        let n = 512.max(grid_size);
        for i in 0..n {
            let y = count::<T>(i) / count::<T>(n);
            let d = m.local.dy_at(y);
            if lit::<T>(4.0) * m.ly_diffusion.eval(y) * m.local.alpha_at(y) < d * d {
                return Err(invalid(format!("diffusion matrix not positive semidefinite at y = {y}: 4·a_y·α < d²")));
            }
        }
        Ok(m)
    }

    /// Grid points `i/N_y`.
    pub fn grid(&self) -> Vec<T> {
        (0..self.grid_size).map(|i| count::<T>(i) / count::<T>(self.grid_size)).collect()
    }

    pub fn with_grid(&self, grid_size: usize) -> Result<Self> {
        Self::new(grid_size, self.ly_diffusion.clone(), self.ly_drift.clone(), self.local.clone(), self.z_max)
    }
}

/// Small random perturbation `ε²L̃` with constant coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationSpec<T> {
    pub epsilon: T,
    pub tilde_diffusion: T,
    pub tilde_drift: T,
}

impl<T: Real> PerturbationSpec<T> {
    pub fn new(epsilon: T, tilde_diffusion: T, tilde_drift: T) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(tilde_diffusion > T::zero()) {
            return Err(invalid(format!("tilde_diffusion must be positive, got {tilde_diffusion}")));
        }
        if !tilde_drift.is_finite() {
            return Err(invalid("tilde_drift must be finite"));
        }
        Ok(Self { epsilon, tilde_diffusion, tilde_drift })
    }

    pub fn with_epsilon(&self, epsilon: T) -> Result<Self> {
        Self::new(epsilon, self.tilde_diffusion, self.tilde_drift)
    }
}

/// A model of either kind.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model<T> {
    OneD(Model1D<T>),
    NormalForm2d(Model2DNormalForm<T>),
}

/// `γ = 1 − β/α` for constant coefficients.
pub fn gamma_constant<T: Real>(alpha: T, beta: T) -> Result<T> {
    if !(alpha > T::zero()) {
        return Err(invalid("alpha must be positive"));
    }
    if beta == alpha {
        return Err(invalid("γ = 0 excluded"));
    }
    Ok(T::one() - beta / alpha)
}

/// A diffusion field `σ` with its derivative, for drift conversion.
pub struct DiffusionField<'a, T> {
    pub sigma: &'a dyn Fn(T) -> T,
    pub derivative: Option<&'a dyn Fn(T) -> T>,
}

/// Converts a Stratonovich drift into the Itô drift `b + σσ'/2`.
pub fn strat_to_ito<'a, T: Real>(
    strat_drift: &'a dyn Fn(T) -> T,
    field: DiffusionField<'a, T>,
) -> Result<impl Fn(T) -> T + 'a> {
    let d = field.derivative.ok_or_else(|| invalid("diffusion field must be supplied with its derivative"))?;
    let sigma = field.sigma;
    Ok(move |x: T| strat_drift(x) + sigma(x) * d(x) / lit(2.0))
}

/// Canonical JSON text: object keys sorted, no insignificant whitespace.
pub fn canonical_json<S: Serialize>(value: &S) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Internal(format!("serialization failed: {e}")))?;
    serde_json::to_string(&v).map_err(|e| Error::Internal(format!("serialization failed: {e}")))
}

/// SHA-256 hex digest of any serializable value in canonical form.
pub fn digest<S: Serialize>(value: &S) -> Result<String> {
    Ok(sha256_hex(canonical_json(value)?.as_bytes()))
}

/// Lower-case hex SHA-256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable digest of a model together with its perturbation.
pub fn model_hash<M: Serialize, T: Real>(model: &M, perturbation: Option<&PerturbationSpec<T>>) -> Result<String> {
    #[derive(Serialize)]
    struct Keyed<'a, M, P> {
        model: &'a M,
        perturbation: Option<&'a P>,
    }
    digest(&Keyed { model, perturbation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_surface() -> Model1D<f64> {
        Model1D::build(
            &[
                SurfaceSpec { position: -0.5, alpha: 1.0, beta: 2.0 },
                SurfaceSpec { position: 0.5, alpha: 1.0, beta: 3.0 },
            ],
            (-2.0, 2.0),
            0.25,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn single_surface_core_is_exact() {
        let m = Model1D::build(&[SurfaceSpec { position: 0.0, alpha: 1.0, beta: 2.0 }], (-1.0, 1.0), 0.25, 1.0).unwrap();
        for i in 0..=50 {
            let x = -0.25 + 0.5 * i as f64 / 50.0;
            assert!((m.diffusion(x) - x * x).abs() < 1e-15);
            assert!((m.drift(x) - 2.0 * x).abs() < 1e-15);
        }
        assert_eq!(m.gamma(0).unwrap(), -1.0);
    }

    #[test]
    fn two_surface_cores_match_normal_form_pointwise() {
        let m = two_surface();
        for (s, beta) in [(-0.5, 2.0), (0.5, 3.0)] {
            for i in 0..=40 {
                let u = -0.25 + 0.5 * i as f64 / 40.0;
                let x = s + u;
                assert!((m.diffusion(x) - u * u).abs() < 1e-14, "a at {x}");
                assert!((m.drift(x) - beta * u).abs() < 1e-14, "b at {x}");
            }
        }
    }

    #[test]
    fn zero_surfaces_is_uniformly_elliptic() {
        let m = Model1D::<f64>::build(&[], (-1.0, 1.0), 0.25, 1.0).unwrap();
        assert!(m.diffusion(0.3) > 0.0);
        assert!(m.ellipticity_margin(1000) > 0.0);
        assert_eq!(m.num_domains(), 1);
    }

    #[test]
    fn overlapping_cores_rejected() {
        let err = Model1D::build(
            &[SurfaceSpec { position: 0.0, alpha: 1.0, beta: 2.0 }, SurfaceSpec { position: 0.4, alpha: 1.0, beta: 2.0 }],
            (-3.0, 3.0),
            0.25,
            1.0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("surfaces 0 and 1 overlap"), "{err}");
        assert!(Model1D::build(&[SurfaceSpec { position: 0.0, alpha: 0.0, beta: 2.0 }], (-1.0, 1.0), 0.25, 1.0).is_err());
    }

    #[test]
    fn derivatives_at_surfaces() {
        let m = two_surface();
        let h = 1e-4;
        for (k, s) in m.surfaces().iter().enumerate() {
            let x = s.position;
            let a = |x| m.diffusion(x);
            let b = |x| m.drift(x);
            assert_eq!(a(x), 0.0);
            assert_eq!(b(x), 0.0);
            assert!(((a(x + h) - a(x - h)) / (2.0 * h)).abs() < 1e-10);
            assert!(((a(x + h) - 2.0 * a(x) + a(x - h)) / (h * h) - 2.0 * s.local.alpha).abs() < 1e-6);
            assert!(((b(x + h) - b(x - h)) / (2.0 * h) - s.local.beta).abs() < 1e-9, "surface {k}");
        }
    }

    #[test]
    fn coefficients_are_continuously_differentiable() {
        let m = two_surface();
        let h = 1e-7;
        let (lo, hi) = m.bounds();
        for i in 1..2000 {
            let x = lo + (hi - lo) * i as f64 / 2000.0;
            for f in [&|x| m.diffusion(x) as f64, &|x| m.drift(x) as f64] as [&dyn Fn(f64) -> f64; 2] {
                let left = (f(x) - f(x - h)) / h;
                let right = (f(x + h) - f(x)) / h;
                assert!((left - right).abs() < 1e-4, "kink at {x}: {left} vs {right}");
            }
        }
    }

    #[test]
    fn ellipticity_margin_positive() {
        assert!(two_surface().ellipticity_margin(20_000) > 1e-3);
    }

    #[test]
    fn confinement_points_inward_on_outer_tenth() {
        let m = two_surface();
        let (lo, hi) = m.bounds();
        let mid = (lo + hi) / 2.0;
        for i in 0..=100 {
            let t = i as f64 / 100.0 * 0.1;
            for x in [lo + t * (hi - lo), hi - t * (hi - lo)] {
                assert!(m.drift(x) * (x - mid).signum() < 0.0, "x = {x}");
            }
        }
    }

    #[test]
    fn domains_and_compacts() {
        let m = two_surface();
        assert_eq!(m.domain_of(-1.0), 0);
        assert_eq!(m.domain_of(0.0), 1);
        assert_eq!(m.domain_of(1.0), 2);
        assert_eq!(m.compact_interval(1, 0.25).unwrap(), (-0.25, 0.25));
        assert_eq!(m.domain_center(1).unwrap(), 0.0);
    }

    #[test]
    fn gamma_constant_examples() {
        assert_eq!(gamma_constant(1.0, 2.0).unwrap(), -1.0);
        assert_eq!(gamma_constant(1.0, 3.0).unwrap(), -2.0);
        assert!(gamma_constant(2.0, 2.0).unwrap_err().to_string().contains("γ = 0 excluded"));
    }

    #[test]
    fn strat_to_ito_examples() {
        let zero = |_x: f64| 0.0;
        let one = |_x: f64| 1.0;
        let c = |_x: f64| 0.7;
        let id = |x: f64| x;
        let sin = |x: f64| x.sin();
        let cos = |x: f64| x.cos();
        let f = strat_to_ito(&zero, DiffusionField { sigma: &c, derivative: Some(&zero) }).unwrap();
        assert_eq!(f(1.3), 0.0);
        let f = strat_to_ito(&zero, DiffusionField { sigma: &id, derivative: Some(&one) }).unwrap();
        assert!((f(0.8) - 0.4).abs() < 1e-15);
        let f = strat_to_ito(&one, DiffusionField { sigma: &sin, derivative: Some(&cos) }).unwrap();
        assert!((f(0.3) - (1.0 + 0.3f64.sin() * 0.3f64.cos() / 2.0)).abs() < 1e-15);
        assert!(strat_to_ito(&one, DiffusionField { sigma: &sin, derivative: None }).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let m = two_surface();
        let p1 = PerturbationSpec::new(0.01, 1.0, 0.0).unwrap();
        let p2 = PerturbationSpec::new(0.02, 1.0, 0.0).unwrap();
        let h1 = model_hash(&m, Some(&p1)).unwrap();
        assert_eq!(h1, model_hash(&m, Some(&p1)).unwrap());
        assert_ne!(h1, model_hash(&m, Some(&p2)).unwrap());
        assert_eq!(h1.len(), 64);
    }

    #[test]
    fn normal_form_rejects_indefinite_matrix() {
        let local = SurfaceLocal {
            alpha: 1.0,
            beta: 2.0,
            dy_coeff: PeriodicFn::constant(3.0),
            alpha_fn: None,
            beta_fn: None,
        };
        let err = Model2DNormalForm::new(64, PeriodicFn::constant(1.0), PeriodicFn::zero(), local, 1.0).unwrap_err();
        assert!(err.to_string().contains("semidefinite"));
    }

    #[test]
    fn periodic_fn_derivative_matches_difference() {
        let f = PeriodicFn::<f64> { mean: 2.0, cos: vec![0.3, -0.1], sin: vec![1.0] };
        let h = 1e-6;
        for y in [0.0, 0.17, 0.5, 0.93] {
            let fd = (f.eval(y + h) - f.eval(y - h)) / (2.0 * h);
            assert!((fd - f.derivative(y)).abs() < 1e-6);
        }
        assert!((f.eval(0.0) - f.eval(1.0)).abs() < 1e-12);
    }
}
