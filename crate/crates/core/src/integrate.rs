//! Euler–Maruyama trajectories with adaptive steps and first-hitting detection.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exponents::GammaSolution;
use crate::model::{Model1D, Model2DNormalForm, PerturbationSpec};
use crate::scalar::{lit, Real};
use crate::stats::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign<T: Real>(self) -> T {
        match self {
            Side::Plus => T::one(),
            Side::Minus => -T::one(),
        }
    }
}

/// Layer `Γ_κ` around surface `k`. In 1-D a side selects one of the two points; in 2-D the
/// layer is `{φ(y)^{1/γ}|z| = κ}` and the side is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerGeometry<T> {
    pub surface: usize,
    pub kappa: T,
    pub side: Option<Side>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StopTarget<T> {
    Layer(LayerGeometry<T>),
    Surface(usize),
    /// Points of domain `domain` at distance at least `kappa0` from its surfaces.
    Compact { domain: usize, kappa0: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopSet<T> {
    pub targets: Vec<StopTarget<T>>,
    pub time_budget: Option<T>,
}

impl<T: Real> StopSet<T> {
    pub fn new(targets: Vec<StopTarget<T>>) -> Self {
        Self { targets, time_budget: None }
    }

    pub fn with_budget(mut self, budget: T) -> Self {
        self.time_budget = Some(budget);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EventKind<T> {
    HitLayer(LayerGeometry<T>),
    HitSurface(usize),
    HitCompact(usize),
    TimeOut,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEvent<T, S> {
    pub kind: EventKind<T>,
    /// Index of the triggering target in the stop set; `None` for time-outs.
    pub target: Option<usize>,
    pub time: T,
    pub position: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome<T, S> {
    pub event: PathEvent<T, S>,
    pub elapsed: T,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepPolicy<T> {
    pub theta: T,
    pub dt_max: T,
    pub dt_min: T,
    pub max_steps: u64,
}

impl<T: Real> Default for StepPolicy<T> {
    fn default() -> Self {
        Self { theta: lit(0.1), dt_max: lit(1e-2), dt_min: lit(1e-10), max_steps: 200_000_000 }
    }
}

impl<T: Real> StepPolicy<T> {
    pub fn with_theta(theta: T) -> Result<Self> {
        let p = Self { theta, ..Self::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > T::zero() && self.theta <= lit(0.5)) {
            return Err(invalid(format!("theta_step must lie in (0, 0.5], got {}", self.theta)));
        }
        if !(self.dt_min > T::zero() && self.dt_min < self.dt_max) {
            return Err(invalid("step policy needs 0 < dt_min < dt_max"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be positive"));
        }
        Ok(())
    }
}

/// `clamp(θ²m²/(2a + 2ε²ã + |b|m), dt_min, dt_max)` with `m = max(dist, ε)`.
pub fn step_size_formula<T: Real>(dist: T, a: T, b: T, eps: T, tilde_a: T, policy: &StepPolicy<T>) -> T {
    let m = dist.max(eps);
    if !m.is_finite() {
        return policy.dt_max;
    }
    let denom = lit::<T>(2.0) * a + lit::<T>(2.0) * eps * eps * tilde_a + b.abs() * m;
    if !(denom > T::zero()) {
        return policy.dt_max;
    }
    let dt = policy.theta * policy.theta * m * m / denom;
    dt.max(policy.dt_min).min(policy.dt_max)
}

/// One Euler–Maruyama step of `dx = (b + ε²b̃)dt + √(2a)dW₁ + ε√(2ã)dW₂`.
#[allow(clippy::too_many_arguments)]
pub fn euler_step_1d<T: Real>(x: T, a: T, b: T, pert: Option<&PerturbationSpec<T>>, dt: T, xi1: T, xi2: T) -> T {
    let sdt = dt.sqrt();
    let two = lit::<T>(2.0);
    let mut next = x + b * dt + (two * a).sqrt() * xi1 * sdt;
    if let Some(p) = pert {
        next += p.epsilon * p.epsilon * p.tilde_drift * dt + p.epsilon * (two * p.tilde_diffusion).sqrt() * xi2 * sdt;
    }
    next
}

/// Draws a standard normal in `T`.
#[inline]
pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let v: f64 = StandardNormal.sample(rng);
    lit(v)
}

/// A simulatable diffusion with its stop-target geometry.
pub trait Dynamics<T: Real>: Sync {
    type State: Copy + std::fmt::Debug + Send + Sync;
    /// Normals consumed by every step.
    const NOISE_DIM: usize;

    fn step(&self, s: &Self::State, dt: T, noise: &[T]) -> Self::State;
    fn adaptive_dt(&self, s: &Self::State, policy: &StepPolicy<T>) -> T;
    /// Signed level function of a target; the target is hit where it vanishes.
    /// Region targets (compacts) are non-positive inside.
    fn level(&self, target: &StopTarget<T>, s: &Self::State) -> Result<T>;
    fn lerp(&self, a: &Self::State, b: &Self::State, frac: T) -> Self::State;
    fn is_finite(&self, s: &Self::State) -> bool;
    /// Surface whose sign changed between two consecutive states, if any.
    fn surface_crossing(&self, a: &Self::State, b: &Self::State) -> Option<usize>;
    fn perturbed(&self) -> bool;
}

fn event_kind<T: Real>(target: &StopTarget<T>) -> EventKind<T> {
    match *target {
        StopTarget::Layer(l) => EventKind::HitLayer(l),
        StopTarget::Surface(k) => EventKind::HitSurface(k),
        StopTarget::Compact { domain, .. } => EventKind::HitCompact(domain),
    }
}

/// Runs until the first event of `stop`, calling `observe(state, dt)` before every step.
pub fn run_observed<T, D, R, F>(
    dynamics: &D,
    start: D::State,
    stop: &StopSet<T>,
    policy: &StepPolicy<T>,
    rng: &mut R,
    mut observe: F,
) -> Result<RunOutcome<T, D::State>>
where
    T: Real,
    D: Dynamics<T>,
    R: Rng + ?Sized,
    F: FnMut(&D::State, T),
{
    if !dynamics.is_finite(&start) {
        return Err(invalid("start state is not finite"));
    }
    let mut levels = Vec::with_capacity(stop.targets.len());
    for (idx, target) in stop.targets.iter().enumerate() {
        if let StopTarget::Surface(_) = target {
            if !dynamics.perturbed() {
                return Err(invalid("surface targets are unreachable without a perturbation"));
            }
        }
        let g = dynamics.level(target, &start)?;
        let region = matches!(target, StopTarget::Compact { .. });
        if g == T::zero() || (region && g < T::zero()) {
            let event = PathEvent { kind: event_kind(target), target: Some(idx), time: T::zero(), position: start };
            return Ok(RunOutcome { event, elapsed: T::zero(), steps: 0 });
        }
        levels.push(g);
    }
    let mut state = start;
    let mut clock = CompensatedSum::new();
    let mut noise = [T::zero(); 8];
    let noise = &mut noise[..D::NOISE_DIM];
    let mut steps = 0u64;
    loop {
        let now = clock.value();
        if steps >= policy.max_steps {
            let event = PathEvent { kind: EventKind::TimeOut, target: None, time: now, position: state };
            return Ok(RunOutcome { event, elapsed: now, steps });
        }
        let mut dt = dynamics.adaptive_dt(&state, policy);
        let mut last = false;
        if let Some(budget) = stop.time_budget {
            if now + dt >= budget {
                dt = budget - now;
                last = true;
            }
        }
        for v in noise.iter_mut() {
            *v = normal(rng);
        }
        if dt <= T::zero() {
            let event = PathEvent { kind: EventKind::TimeOut, target: None, time: now, position: state };
            return Ok(RunOutcome { event, elapsed: now, steps });
        }
        observe(&state, dt);
        let next = dynamics.step(&state, dt, noise);
        steps += 1;
        if !dynamics.is_finite(&next) {
            return Err(Error::NumericalFailure(format!("non-finite state after step {steps}")));
        }
        if !dynamics.perturbed() {
            if let Some(k) = dynamics.surface_crossing(&state, &next) {
                return Err(Error::NumericalFailure(format!(
                    "unperturbed trajectory crossed surface {k} at step {steps}; reduce theta_step"
                )));
            }
        }
        let mut first: Option<(usize, T)> = None;
        for (idx, target) in stop.targets.iter().enumerate() {
            let g_new = dynamics.level(target, &next)?;
            let g_old = levels[idx];
            if g_new == T::zero() || (g_new < T::zero()) != (g_old < T::zero()) {
                let frac = (g_old / (g_old - g_new)).max(T::zero()).min(T::one());
                if first.is_none_or(|(_, f)| frac < f) {
                    first = Some((idx, frac));
                }
            }
            levels[idx] = g_new;
        }
        if let Some((idx, frac)) = first {
            let time = now + frac * dt;
            clock.add(dt);
            let position = dynamics.lerp(&state, &next, frac);
            let event = PathEvent { kind: event_kind(&stop.targets[idx]), target: Some(idx), time, position };
            return Ok(RunOutcome { event, elapsed: time, steps });
        }
        clock.add(dt);
        state = next;
        if last {
            let elapsed = stop.time_budget.unwrap_or(now + dt);
            let event = PathEvent { kind: EventKind::TimeOut, target: None, time: elapsed, position: state };
            return Ok(RunOutcome { event, elapsed, steps });
        }
    }
}

/// Runs until the first event of `stop`.
pub fn run_until<T, D, R>(
    dynamics: &D,
    start: D::State,
    stop: &StopSet<T>,
    policy: &StepPolicy<T>,
    rng: &mut R,
) -> Result<RunOutcome<T, D::State>>
where
    T: Real,
    D: Dynamics<T>,
    R: Rng + ?Sized,
{
    run_observed(dynamics, start, stop, policy, rng, |_, _| {})
}

/// Coefficients and surface geometry of a 1-D diffusion.
pub trait Field1D<T: Real>: Sync {
    fn diffusion(&self, x: T) -> T;
    fn drift(&self, x: T) -> T;
    /// Ordered surface positions.
    fn surface_positions(&self) -> Vec<T>;
}

impl<T: Real> Field1D<T> for Model1D<T> {
    fn diffusion(&self, x: T) -> T {
        Model1D::diffusion(self, x)
    }
    fn drift(&self, x: T) -> T {
        Model1D::drift(self, x)
    }
    fn surface_positions(&self) -> Vec<T> {
        self.surfaces().iter().map(|s| s.position).collect()
    }
}

/// Closure-defined 1-D field, for synthetic tests.
pub struct FnField1D<A, B, T> {
    pub diffusion: A,
    pub drift: B,
    pub surfaces: Vec<T>,
}

impl<T: Real, A: Fn(T) -> T + Sync, B: Fn(T) -> T + Sync> Field1D<T> for FnField1D<A, B, T> {
    fn diffusion(&self, x: T) -> T {
        (self.diffusion)(x)
    }
    fn drift(&self, x: T) -> T {
        (self.drift)(x)
    }
    fn surface_positions(&self) -> Vec<T> {
        self.surfaces.clone()
    }
}

/// 1-D simulator over any [`Field1D`].
pub struct Sim1D<'a, T, F: ?Sized> {
    field: &'a F,
    surfaces: Vec<T>,
    perturbation: Option<PerturbationSpec<T>>,
}

impl<'a, T: Real, F: Field1D<T> + ?Sized> Sim1D<'a, T, F> {
    pub fn new(field: &'a F, perturbation: Option<PerturbationSpec<T>>) -> Self {
        Self { surfaces: field.surface_positions(), field, perturbation }
    }

    pub fn perturbation(&self) -> Option<&PerturbationSpec<T>> {
        self.perturbation.as_ref()
    }

    pub fn field(&self) -> &F {
        self.field
    }

    fn dist(&self, x: T) -> T {
        let idx = self.surfaces.partition_point(|&s| s < x);
        let mut d = T::infinity();
        if idx > 0 {
            d = d.min(x - self.surfaces[idx - 1]);
        }
        if idx < self.surfaces.len() {
            d = d.min(self.surfaces[idx] - x);
        }
        d
    }

    fn surface(&self, k: usize) -> Result<T> {
        self.surfaces.get(k).copied().ok_or_else(|| invalid(format!("no surface {k}")))
    }
}

impl<T: Real, F: Field1D<T> + ?Sized> Dynamics<T> for Sim1D<'_, T, F> {
    type State = T;
    const NOISE_DIM: usize = 2;

    fn step(&self, &x: &T, dt: T, noise: &[T]) -> T {
        let a = self.field.diffusion(x);
        let b = self.field.drift(x);
        euler_step_1d(x, a, b, self.perturbation.as_ref(), dt, noise[0], noise[1])
    }

    fn adaptive_dt(&self, &x: &T, policy: &StepPolicy<T>) -> T {
        let (eps, ta) = self.perturbation.map_or((T::zero(), T::zero()), |p| (p.epsilon, p.tilde_diffusion));
        step_size_formula(self.dist(x), self.field.diffusion(x), self.field.drift(x), eps, ta, policy)
    }

    fn level(&self, target: &StopTarget<T>, &x: &T) -> Result<T> {
        match *target {
            StopTarget::Layer(l) => {
                let s = self.surface(l.surface)?;
                Ok(match l.side {
                    Some(side) => side.sign::<T>() * (x - s) - l.kappa,
                    None => (x - s).abs() - l.kappa,
                })
            }
            StopTarget::Surface(k) => Ok(x - self.surface(k)?),
            StopTarget::Compact { domain, kappa0 } => {
                let m = self.surfaces.len();
                if domain > m {
                    return Err(invalid(format!("no domain {domain}")));
                }
                let lo = if domain == 0 { T::neg_infinity() } else { self.surfaces[domain - 1] + kappa0 };
                let hi = if domain == m { T::infinity() } else { self.surfaces[domain] - kappa0 };
                if !(lo < hi) {
                    return Err(invalid(format!("compact of domain {domain} is empty")));
                }
                Ok((lo - x).max(x - hi))
            }
        }
    }

    fn lerp(&self, a: &T, b: &T, frac: T) -> T {
        *a + (*b - *a) * frac
    }

    fn is_finite(&self, s: &T) -> bool {
        s.is_finite()
    }

    fn surface_crossing(&self, &a: &T, &b: &T) -> Option<usize> {
        let lo = self.surfaces.partition_point(|&s| s < a.min(b));
        let hi = self.surfaces.partition_point(|&s| s <= a.max(b));
        (lo < hi).then_some(lo)
    }

    fn perturbed(&self) -> bool {
        self.perturbation.is_some()
    }
}

/// State of the 2-D normal form: `y` on the unit circle, `z` the signed surface coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct State2<T> {
    pub y: T,
    pub z: T,
}

/// Simulator of the 2-D normal form. Layers use `φ` and `γ` of the supplied solution.
/// `|z|` is reflected at `z_max` in logarithmic coordinates to keep the box recurrent.
pub struct Sim2D<'a, T> {
    model: &'a Model2DNormalForm<T>,
    solution: &'a GammaSolution<T>,
    perturbation: Option<PerturbationSpec<T>>,
}

impl<'a, T: Real> Sim2D<'a, T> {
    pub fn new(
        model: &'a Model2DNormalForm<T>,
        solution: &'a GammaSolution<T>,
        perturbation: Option<PerturbationSpec<T>>,
    ) -> Self {
        Self { model, solution, perturbation }
    }

    pub fn model(&self) -> &Model2DNormalForm<T> {
        self.model
    }

    pub fn solution(&self) -> &GammaSolution<T> {
        self.solution
    }

    pub fn perturbation(&self) -> Option<&PerturbationSpec<T>> {
        self.perturbation.as_ref()
    }

    /// Scaled layer coordinate `φ(y)^{1/γ}|z|`.
    pub fn layer_coordinate(&self, s: &State2<T>) -> T {
        self.solution.phi_at(s.y).powf(T::one() / self.solution.gamma) * s.z.abs()
    }

    /// Point of `Γ_κ` above `y`.
    pub fn on_layer(&self, y: T, kappa: T) -> State2<T> {
        State2 { y, z: kappa * self.solution.phi_at(y).powf(-T::one() / self.solution.gamma) }
    }
}

impl<T: Real> Dynamics<T> for Sim2D<'_, T> {
    type State = State2<T>;
    const NOISE_DIM: usize = 4;

    fn step(&self, s: &State2<T>, dt: T, noise: &[T]) -> State2<T> {
        let m = self.model;
        let two = lit::<T>(2.0);
        let sdt = dt.sqrt();
        let ay = m.ly_diffusion.eval(s.y);
        let c = m.ly_drift.eval(s.y);
        let alpha = m.local.alpha_at(s.y);
        let beta = m.local.beta_at(s.y);
        let d = m.local.dy_at(s.y);
        let l11 = (two * ay).sqrt();
        let l21 = d / l11;
        let l22 = (two * alpha - d * d / (two * ay)).max(T::zero()).sqrt();
        let (w1, w2) = (noise[0] * sdt, noise[1] * sdt);
        let mut y = s.y + c * dt + l11 * w1;
        let mut z = s.z + beta * s.z * dt + s.z * (l21 * w1 + l22 * w2);
        if let Some(p) = &self.perturbation {
            let amp = p.epsilon * (two * p.tilde_diffusion).sqrt();
            y += amp * noise[2] * sdt;
            z += p.epsilon * p.epsilon * p.tilde_drift * dt + amp * noise[3] * sdt;
        }
        let zmax = m.z_max;
        if z.abs() > zmax {
            z = z.signum() * zmax * zmax / z.abs();
        }
        State2 { y: y - y.floor(), z }
    }

    fn adaptive_dt(&self, s: &State2<T>, policy: &StepPolicy<T>) -> T {
        let (eps, ta) = self.perturbation.map_or((T::zero(), T::zero()), |p| (p.epsilon, p.tilde_diffusion));
        let a = self.model.local.alpha_at(s.y) * s.z * s.z;
        let b = self.model.local.beta_at(s.y) * s.z;
        step_size_formula(s.z.abs(), a, b, eps, ta, policy)
    }

    fn level(&self, target: &StopTarget<T>, s: &State2<T>) -> Result<T> {
        match *target {
            StopTarget::Layer(l) if l.surface == 0 && l.side.is_none() => Ok(self.layer_coordinate(s) - l.kappa),
            StopTarget::Layer(_) => Err(invalid("the normal-form model has one surface and one-sided layers")),
            StopTarget::Surface(0) => Ok(s.z),
            StopTarget::Surface(k) => Err(invalid(format!("no surface {k}"))),
            StopTarget::Compact { .. } => Err(invalid("compacts are not defined for the normal-form model")),
        }
    }

    fn lerp(&self, a: &State2<T>, b: &State2<T>, frac: T) -> State2<T> {
        let half = lit::<T>(0.5);
        let mut dy = b.y - a.y;
        if dy > half {
            dy -= T::one();
        } else if dy < -half {
            dy += T::one();
        }
        let y = a.y + dy * frac;
        State2 { y: y - y.floor(), z: a.z + (b.z - a.z) * frac }
    }

    fn is_finite(&self, s: &State2<T>) -> bool {
        s.y.is_finite() && s.z.is_finite()
    }

    fn surface_crossing(&self, a: &State2<T>, b: &State2<T>) -> Option<usize> {
        ((a.z < T::zero()) != (b.z < T::zero()) || b.z == T::zero()).then_some(0)
    }

    fn perturbed(&self) -> bool {
        self.perturbation.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SurfaceSpec;
    use crate::rng::path_rng;

    fn single() -> Model1D<f64> {
        Model1D::build(&[SurfaceSpec { position: 0.0, alpha: 1.0, beta: 2.0 }], (-1.0, 1.0), 0.25, 1.0).unwrap()
    }

    #[test]
    fn null_and_pure_drift_steps() {
        assert_eq!(euler_step_1d(0.3, 0.0, 0.0, None, 0.7, 1.2, -0.4), 0.3);
        assert_eq!(euler_step_1d(0.3, 0.0, 1.0, None, 0.5, 1.2, -0.4), 0.8);
    }

    #[test]
    fn single_step_moments() {
        let m = single();
        let sim = Sim1D::new(&m, None);
        let dt = 1e-3;
        let n = 100_000;
        let mut rng = path_rng(3, 0);
        let incs: Vec<f64> = (0..n)
            .map(|_| {
                let noise = [normal::<f64, _>(&mut rng), normal(&mut rng)];
                sim.step(&0.1, dt, &noise) - 0.1
            })
            .collect();
        let (mean, se) = crate::stats::mean_and_se(&incs);
        assert!((mean - 0.2 * dt).abs() < 3.0 * se);
        let sd_expected = (2.0 * 0.01 * dt).sqrt();
        let var: f64 = incs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let var_se = sd_expected.powi(2) * (2.0 / n as f64).sqrt();
        assert!((var - sd_expected.powi(2)).abs() < 3.0 * var_se);
    }

    #[test]
    fn adaptive_dt_cases() {
        let policy = StepPolicy::<f64>::default();
        let m = single();
        let sim = Sim1D::new(&m, None);
        // Bulk: large distance, bounded coefficients.
        assert_eq!(sim.adaptive_dt(&0.6, &policy), policy.dt_max);
        // On the surface without noise: frozen state.
        assert_eq!(sim.step(&0.0, sim.adaptive_dt(&0.0, &policy), &[1.0, 1.0]), 0.0);
        // Unit drift, no diffusion: dt proportional to distance.
        let eps = 1e-3;
        let f = |d: f64| step_size_formula(d, 0.0, 1.0, eps, 1.0, &StepPolicy { dt_min: 1e-14, ..policy });
        let ratio = f(10.0 * eps) / f(5.0 * eps);
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn immediate_event_on_layer() {
        let m = single();
        let sim = Sim1D::new(&m, None);
        let layer = LayerGeometry { surface: 0, kappa: 0.2, side: Some(Side::Plus) };
        let stop = StopSet::new(vec![StopTarget::Layer(layer)]);
        let out = run_until(&sim, 0.2, &stop, &StepPolicy::default(), &mut path_rng(1, 0)).unwrap();
        assert_eq!(out.event.time, 0.0);
        assert_eq!(out.steps, 0);
        assert_eq!(out.event.kind, EventKind::HitLayer(layer));
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let m = single();
        let p = PerturbationSpec::new(1e-2, 1.0, 0.0).unwrap();
        let sim = Sim1D::new(&m, Some(p));
        let stop = StopSet::new(vec![
            StopTarget::Surface(0),
            StopTarget::Layer(LayerGeometry { surface: 0, kappa: 0.2, side: Some(Side::Plus) }),
        ]);
        let a = run_until(&sim, 0.05, &stop, &StepPolicy::default(), &mut path_rng(9, 4)).unwrap();
        let b = run_until(&sim, 0.05, &stop, &StepPolicy::default(), &mut path_rng(9, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unperturbed_paths_stay_in_their_domain() {
        let m = single();
        let sim = Sim1D::new(&m, None);
        let stop = StopSet::new(vec![]).with_budget(2.0);
        for i in 0..50 {
            let mut ok = true;
            let out = run_observed(&sim, 0.05, &stop, &StepPolicy::default(), &mut path_rng(2, i), |x, _| {
                ok &= *x > 0.0;
            })
            .unwrap();
            assert!(ok);
            assert_eq!(out.event.kind, EventKind::TimeOut);
            assert!((out.elapsed - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn max_steps_yields_timeout() {
        let m = single();
        let sim = Sim1D::new(&m, None);
        let stop = StopSet::new(vec![StopTarget::Layer(LayerGeometry { surface: 0, kappa: 0.9, side: Some(Side::Plus) })]);
        let policy = StepPolicy { max_steps: 10, ..StepPolicy::default() };
        let out = run_until(&sim, 0.05, &stop, &policy, &mut path_rng(2, 0)).unwrap();
        assert_eq!(out.event.kind, EventKind::TimeOut);
        assert_eq!(out.steps, 10);
    }

    #[test]
    fn surface_target_requires_perturbation() {
        let m = single();
        let sim = Sim1D::new(&m, None);
        let stop = StopSet::new(vec![StopTarget::Surface(0)]);
        assert!(run_until(&sim, 0.05, &stop, &StepPolicy::default(), &mut path_rng(2, 0)).is_err());
    }

    #[test]
    fn compact_start_inside_is_immediate() {
        let m = single();
        let sim = Sim1D::new(&m, None);
        let stop = StopSet::new(vec![StopTarget::Compact { domain: 1, kappa0: 0.25 }]);
        let out = run_until(&sim, 0.5, &stop, &StepPolicy::default(), &mut path_rng(2, 0)).unwrap();
        assert_eq!(out.event.kind, EventKind::HitCompact(1));
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn pure_drift_hits_wall_at_deterministic_time() {
        let field = FnField1D { diffusion: |_x: f64| 0.0, drift: |_x: f64| 1.0, surfaces: vec![-10.0] };
        let sim = Sim1D::new(&field, None);
        let stop = StopSet::new(vec![StopTarget::Layer(LayerGeometry { surface: 0, kappa: 11.0, side: Some(Side::Plus) })]);
        let out = run_until(&sim, 0.0, &stop, &StepPolicy::default(), &mut path_rng(0, 0)).unwrap();
        assert!((out.event.time - 1.0).abs() < 1e-9);
        assert!((out.event.position - 1.0).abs() < 1e-9);
    }

    #[test]
    fn step_size_sanity() {
        let m = single();
        let sim = Sim1D::new(&m, None);
        let policy = StepPolicy::default();
        let mut rng = path_rng(8, 0);
        let mut x = 0.05;
        let mut big = 0usize;
        let n = 200_000;
        for _ in 0..n {
            let dt = sim.adaptive_dt(&x, &policy);
            let noise = [normal::<f64, _>(&mut rng), normal(&mut rng)];
            let next = sim.step(&x, dt, &noise);
            if (next - x).abs() > 5.0 * policy.theta * sim.dist(x) {
                big += 1;
            }
            x = next;
        }
        assert!((big as f64) < 1e-4 * n as f64, "{big}");
    }
}
