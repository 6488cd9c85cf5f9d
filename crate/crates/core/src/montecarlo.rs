//! Monte Carlo estimators with confidence intervals.
//!
//! Every estimator fans paths out over the rayon pool. Path `i` always draws from stream
//! `i` of the supplied seed, results are collected in path order and reduced with fixed
//! pairwise sums, so outputs do not depend on the number of workers.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exponents::GammaSolution;
use crate::integrate::{
    run_observed, run_until, Dynamics, EventKind, LayerGeometry, RunOutcome, Side, Sim1D, Sim2D, State2, StepPolicy,
    StopSet, StopTarget,
};
use crate::model::{model_hash, Model1D, Model2DNormalForm};
use crate::rng::{derive_seed, path_rng, PathRng};
use crate::scalar::{count, lit, to_f64, Real};
use crate::stats::{self, fit_line, fit_loglog, ks_exponential, mean_and_se, pairwise_sum, wilson, SlopeFit, Z95};

/// Point estimate with a 95% interval and provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult<T> {
    pub point: T,
    pub ci_low: T,
    pub ci_high: T,
    pub n_samples: usize,
    pub n_timeouts: usize,
    pub seed: u64,
    pub model_digest: String,
    /// Set when timeouts exceed the spoil threshold or the estimator could not resolve the quantity.
    pub flagged: bool,
}

impl<T: Real> EstimateResult<T> {
    /// Wilson interval for `successes` among the `n_samples − n_timeouts` resolved paths.
    pub fn proportion(successes: usize, n_samples: usize, n_timeouts: usize, meta: &Provenance, spoil: f64) -> Self {
        let resolved = n_samples - n_timeouts;
        let point = if resolved == 0 { T::nan() } else { count::<T>(successes) / count::<T>(resolved) };
        let (ci_low, ci_high) = wilson(successes, resolved, lit(Z95));
        Self {
            point,
            ci_low,
            ci_high,
            n_samples,
            n_timeouts,
            seed: meta.seed,
            model_digest: meta.digest.clone(),
            flagged: resolved == 0 || spoiled(n_timeouts, n_samples, spoil),
        }
    }

    /// Normal-approximation interval for the mean of `samples`.
    pub fn mean_of(samples: &[T], n_samples: usize, n_timeouts: usize, meta: &Provenance, spoil: f64) -> Self {
        let (m, se) = mean_and_se(samples);
        let h = lit::<T>(Z95) * se;
        Self {
            point: m,
            ci_low: m - h,
            ci_high: m + h,
            n_samples,
            n_timeouts,
            seed: meta.seed,
            model_digest: meta.digest.clone(),
            flagged: samples.len() < 2 || spoiled(n_timeouts, n_samples, spoil),
        }
    }

    /// Exactly known value (deterministic outcome).
    pub fn exact(value: T, n_samples: usize, meta: &Provenance) -> Self {
        Self {
            point: value,
            ci_low: value,
            ci_high: value,
            n_samples,
            n_timeouts: 0,
            seed: meta.seed,
            model_digest: meta.digest.clone(),
            flagged: false,
        }
    }

    pub fn covers(&self, v: T) -> bool {
        self.ci_low <= v && v <= self.ci_high
    }

    pub fn width(&self) -> T {
        self.ci_high - self.ci_low
    }

    /// Standard error implied by the interval half-width.
    pub fn stderr(&self) -> T {
        self.width() / lit::<T>(2.0 * Z95)
    }

    pub fn usable(&self) -> bool {
        !self.flagged
    }
}

fn spoiled(timeouts: usize, n: usize, spoil: f64) -> bool {
    n > 0 && timeouts as f64 > spoil * n as f64
}

/// Seed and model digest attached to every estimate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub digest: String,
}

/// Shared Monte Carlo controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions<T> {
    pub paths: usize,
    pub seed: u64,
    /// Largest tolerated fraction of timed-out paths.
    pub spoil: f64,
    pub policy: StepPolicy<T>,
}

impl<T: Real> McOptions<T> {
    pub fn new(paths: usize, seed: u64) -> Self {
        Self { paths, seed, spoil: 0.01, policy: StepPolicy::default() }
    }

    pub fn with_theta(mut self, theta: T) -> Self {
        self.policy.theta = theta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(invalid("number of paths must be positive"));
        }
        self.policy.validate()
    }
}

/// Runs `f(i, rng_i)` for `i in 0..n` on the rayon pool, results in index order.
pub fn par_paths<R, F>(n: usize, seed: u64, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64, &mut PathRng) -> Result<R> + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            f(i, &mut rng)
        })
        .collect()
}

/// A dynamics with surfaces, layers and a characteristic exponent per surface.
pub trait Layered<T: Real>: Dynamics<T> {
    fn gamma(&self, k: usize) -> Result<T>;
    /// Largest admissible layer value around surface `k`, i.e. the layers must fit in the core.
    fn core_limit(&self, k: usize) -> Result<T>;
    fn layer(&self, k: usize, side: Side, kappa: T) -> LayerGeometry<T>;
    /// A start point on `Γ_ζ` (ζ = 0 gives a point of the surface).
    fn start_on_layer(&self, k: usize, side: Side, zeta: T, rng: &mut PathRng) -> Self::State;
    /// Layer coordinate relative to surface `k` on `side`; `None` on the other side.
    fn layer_coordinate(&self, k: usize, side: Side, s: &Self::State) -> Option<T>;
    /// Position along the surface, for models with a non-trivial surface.
    fn surface_coordinate(&self, _s: &Self::State) -> Option<T> {
        None
    }
    fn epsilon(&self) -> Option<T>;
    fn digest(&self) -> String;
}

impl<T: Real> Layered<T> for Sim1D<'_, T, Model1D<T>> {
    fn gamma(&self, k: usize) -> Result<T> {
        self.field().gamma(k)
    }

    fn core_limit(&self, k: usize) -> Result<T> {
        if k >= self.field().surfaces().len() {
            return Err(invalid(format!("no surface {k}")));
        }
        Ok(self.field().core_radius())
    }

    fn layer(&self, k: usize, side: Side, kappa: T) -> LayerGeometry<T> {
        LayerGeometry { surface: k, kappa, side: Some(side) }
    }

    fn start_on_layer(&self, k: usize, side: Side, zeta: T, _rng: &mut PathRng) -> T {
        self.field().surfaces()[k].position + side.sign::<T>() * zeta
    }

    fn layer_coordinate(&self, k: usize, side: Side, &x: &T) -> Option<T> {
        let u = side.sign::<T>() * (x - self.field().surfaces()[k].position);
        (u >= T::zero()).then_some(u)
    }

    fn epsilon(&self) -> Option<T> {
        self.perturbation().map(|p| p.epsilon)
    }

    fn digest(&self) -> String {
        model_hash(self.field(), self.perturbation()).unwrap_or_default()
    }
}

impl<T: Real> Layered<T> for Sim2D<'_, T> {
    fn gamma(&self, k: usize) -> Result<T> {
        if k != 0 {
            return Err(invalid(format!("no surface {k}")));
        }
        Ok(self.solution().gamma)
    }

    fn core_limit(&self, k: usize) -> Result<T> {
        if k != 0 {
            return Err(invalid(format!("no surface {k}")));
        }
        let sol = self.solution();
        let worst = sol.phi_min().powf(-T::one() / sol.gamma).max(sol.phi_max().powf(-T::one() / sol.gamma));
        Ok(self.model().z_max / worst)
    }

    fn layer(&self, k: usize, _side: Side, kappa: T) -> LayerGeometry<T> {
        LayerGeometry { surface: k, kappa, side: None }
    }

    fn start_on_layer(&self, _k: usize, side: Side, zeta: T, rng: &mut PathRng) -> State2<T> {
        use rand::Rng;
        let y: T = lit(rng.random::<f64>());
        let p = self.on_layer(y, zeta);
        State2 { y, z: side.sign::<T>() * p.z }
    }

    fn layer_coordinate(&self, _k: usize, side: Side, s: &State2<T>) -> Option<T> {
        (side.sign::<T>() * s.z >= T::zero()).then(|| self.layer_coordinate(s))
    }

    fn surface_coordinate(&self, s: &State2<T>) -> Option<T> {
        Some(s.y)
    }

    fn epsilon(&self) -> Option<T> {
        self.perturbation().map(|p| p.epsilon)
    }

    fn digest(&self) -> String {
        model_hash(self.model(), self.perturbation()).unwrap_or_default()
    }
}

fn provenance<T: Real, D: Layered<T>>(d: &D, seed: u64) -> Provenance {
    Provenance { seed, digest: d.digest() }
}

/// `(ζ^γ − κ1^γ)/(κ2^γ − κ1^γ)`.
pub fn transition_formula<T: Real>(zeta: T, kappa1: T, kappa2: T, gamma: T) -> Result<T> {
    if !(kappa1 > T::zero() && kappa1 < kappa2 && kappa1 <= zeta && zeta <= kappa2) {
        return Err(invalid(format!("need 0 < κ1 ≤ ζ ≤ κ2 and κ1 < κ2, got κ1={kappa1}, ζ={zeta}, κ2={kappa2}")));
    }
    if gamma == T::zero() {
        return Err(invalid("γ = 0 excluded"));
    }
    let (a, b, c) = (zeta.powf(gamma), kappa1.powf(gamma), kappa2.powf(gamma));
    Ok(((a - b) / (c - b)).max(T::zero()).min(T::one()))
}

/// Interval `[(1±η)ζ^γ − κ1^γ]/(κ2^γ − κ1^γ)` ordered so that `lo ≤ hi`.
pub fn transition_bracket<T: Real>(zeta: T, kappa1: T, kappa2: T, gamma: T, eta: T) -> Result<(T, T)> {
    transition_formula(zeta, kappa1, kappa2, gamma)?;
    let (a, b, c) = (zeta.powf(gamma), kappa1.powf(gamma), kappa2.powf(gamma));
    let f = |s: T| (s * a - b) / (c - b);
    let (u, v) = (f(T::one() + eta), f(T::one() - eta));
    Ok((u.min(v), u.max(v)))
}

/// Admissible window for surface-hit starts: `s1·ε ≤ ζ ≤ s2·κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceBand<T> {
    pub s1: T,
    pub s2: T,
}

impl<T: Real> Default for SurfaceBand<T> {
    fn default() -> Self {
        Self { s1: lit(20.0), s2: lit(0.1) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionEstimate<T> {
    pub zeta: T,
    pub kappa1: T,
    pub kappa2: T,
    pub estimate: EstimateResult<T>,
    pub successes: usize,
    pub formula: T,
}

/// Frequency of reaching `Γ_{κ2}` before `Γ_{κ1}` (and before the surface when perturbed)
/// from `Γ_ζ` on the given side of surface `k`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_transition<T: Real, D: Layered<T>>(
    dynamics: &D,
    k: usize,
    side: Side,
    zeta: T,
    kappa1: T,
    kappa2: T,
    opts: &McOptions<T>,
) -> Result<TransitionEstimate<T>> {
    opts.validate()?;
    let gamma = dynamics.gamma(k)?;
    let formula = transition_formula(zeta, kappa1, kappa2, gamma)?;
    if !(kappa2 < dynamics.core_limit(k)?) {
        return Err(invalid(format!("layer κ2 = {kappa2} does not fit inside the core")));
    }
    if let Some(eps) = dynamics.epsilon() {
        let r = SurfaceBand::<T>::default().s1;
        if kappa1 < r * eps {
            return Err(invalid(format!("perturbed transitions need κ1 ≥ {r}·ε")));
        }
    }
    let meta = provenance(dynamics, opts.seed);
    if zeta == kappa1 || zeta == kappa2 {
        let v = if zeta == kappa2 { T::one() } else { T::zero() };
        return Ok(TransitionEstimate {
            zeta,
            kappa1,
            kappa2,
            estimate: EstimateResult::exact(v, opts.paths, &meta),
            successes: if zeta == kappa2 { opts.paths } else { 0 },
            formula,
        });
    }
    let mut targets = vec![
        StopTarget::Layer(dynamics.layer(k, side, kappa1)),
        StopTarget::Layer(dynamics.layer(k, side, kappa2)),
    ];
    if dynamics.perturbed() {
        targets.push(StopTarget::Surface(k));
    }
    let stop = StopSet::new(targets);
    let outcomes = par_paths(opts.paths, opts.seed, |_, rng| {
        let start = dynamics.start_on_layer(k, side, zeta, rng);
        let out = run_until(dynamics, start, &stop, &opts.policy, rng)?;
        Ok(out.event.target)
    })?;
    let timeouts = outcomes.iter().filter(|t| t.is_none()).count();
    let successes = outcomes.iter().filter(|t| **t == Some(1)).count();
    Ok(TransitionEstimate {
        zeta,
        kappa1,
        kappa2,
        estimate: EstimateResult::proportion(successes, opts.paths, timeouts, &meta, opts.spoil),
        successes,
        formula,
    })
}

/// Maximum-likelihood exponent from binomial transition counts, with a Wald 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaFit<T> {
    pub gamma: T,
    pub stderr: T,
    pub ci_low: T,
    pub ci_high: T,
}

impl<T: Real> GammaFit<T> {
    pub fn covers(&self, g: T) -> bool {
        self.ci_low <= g && g <= self.ci_high
    }
}

/// Fits `γ` in `(lo, hi)` (an interval not containing 0) to transition estimates sharing one band.
pub fn fit_gamma_from_transitions<T: Real>(points: &[TransitionEstimate<T>], lo: T, hi: T) -> Result<GammaFit<T>> {
    if points.is_empty() {
        return Err(invalid("no transition estimates to fit"));
    }
    if !(lo < hi) || (lo <= T::zero() && hi >= T::zero()) {
        return Err(invalid("γ search interval must exclude 0"));
    }
    let loglik = |g: T| -> T {
        let terms: Vec<T> = points
            .iter()
            .map(|p| {
                let n = count::<T>(p.estimate.n_samples - p.estimate.n_timeouts);
                let s = count::<T>(p.successes);
                let q = transition_formula(p.zeta, p.kappa1, p.kappa2, g)
                    .unwrap_or(T::nan())
                    .max(lit(1e-300))
                    .min(T::one() - lit(1e-16));
                s * q.ln() + (n - s) * (T::one() - q).ln()
            })
            .collect();
        pairwise_sum(&terms)
    };
    // Golden-section search; the log-likelihood is unimodal in γ on one side of zero.
    let phi = lit::<T>(0.5 * (5f64.sqrt() - 1.0));
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (loglik(c), loglik(d));
    for _ in 0..200 {
        if (b - a).abs() < lit(1e-10) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = loglik(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = loglik(d);
        }
    }
    let g = (a + b) / lit(2.0);
    let h = lit::<T>(1e-4) * (T::one() + g.abs());
    let curv = (loglik(g + h) - lit::<T>(2.0) * loglik(g) + loglik(g - h)) / (h * h);
    if !(curv < T::zero()) {
        return Err(Error::NumericalFailure("transition likelihood is flat at its maximum".into()));
    }
    let se = (-T::one() / curv).sqrt();
    let w = lit::<T>(Z95) * se;
    Ok(GammaFit { gamma: g, stderr: se, ci_low: g - w, ci_high: g + w })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceHitPoint<T> {
    pub zeta: T,
    pub epsilon: T,
    pub estimate: EstimateResult<T>,
    pub successes: usize,
    /// `P̂·(ε/ζ)^γ` with the interval mapped from the Wilson bounds.
    pub rho_hat: EstimateResult<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceHitResult<T> {
    /// Fit of `ln P̂` against `ln ζ` (or `ln ε` for ε sweeps); `None` when fewer than 4 points survive.
    pub fit: Option<SlopeFit<T>>,
    pub points: Vec<SurfaceHitPoint<T>>,
    pub warnings: Vec<String>,
}

/// Minimum number of surface hits for a point to enter a fit.
pub const MIN_SUCCESSES: usize = 50;

/// Surface-hit probability from `Γ_ζ` before `Γ_κ` for one perturbed dynamics.
pub fn surface_hit_point<T: Real, D: Layered<T>>(
    dynamics: &D,
    k: usize,
    side: Side,
    zeta: T,
    kappa: T,
    band: SurfaceBand<T>,
    opts: &McOptions<T>,
) -> Result<SurfaceHitPoint<T>> {
    opts.validate()?;
    let eps = dynamics.epsilon().ok_or_else(|| invalid("surface-hit estimates need a perturbation"))?;
    if zeta < band.s1 * eps || zeta > band.s2 * kappa {
        return Err(invalid(format!(
            "ζ = {zeta} outside the admissible band [{}, {}]",
            band.s1 * eps,
            band.s2 * kappa
        )));
    }
    if !(kappa < dynamics.core_limit(k)?) {
        return Err(invalid(format!("layer κ = {kappa} does not fit inside the core")));
    }
    let gamma = dynamics.gamma(k)?;
    let stop = StopSet::new(vec![StopTarget::Surface(k), StopTarget::Layer(dynamics.layer(k, side, kappa))]);
    let outcomes = par_paths(opts.paths, opts.seed, |_, rng| {
        let start = dynamics.start_on_layer(k, side, zeta, rng);
        Ok(run_until(dynamics, start, &stop, &opts.policy, rng)?.event.target)
    })?;
    let timeouts = outcomes.iter().filter(|t| t.is_none()).count();
    let successes = outcomes.iter().filter(|t| **t == Some(0)).count();
    let meta = provenance(dynamics, opts.seed);
    let estimate = EstimateResult::proportion(successes, opts.paths, timeouts, &meta, opts.spoil);
    let scale = (eps / zeta).powf(gamma);
    let rho_hat = EstimateResult {
        point: estimate.point * scale,
        ci_low: estimate.ci_low * scale,
        ci_high: estimate.ci_high * scale,
        ..estimate.clone()
    };
    Ok(SurfaceHitPoint { zeta, epsilon: eps, estimate, successes, rho_hat })
}

fn hit_fit<T: Real>(points: &[SurfaceHitPoint<T>], abscissa: impl Fn(&SurfaceHitPoint<T>) -> T) -> SurfaceHitResult<T> {
    let mut warnings = Vec::new();
    let mut support = Vec::new();
    for p in points {
        if p.successes < MIN_SUCCESSES {
            warnings.push(format!(
                "dropped point ζ = {}, ε = {}: only {} surface hits",
                p.zeta, p.epsilon, p.successes
            ));
        } else {
            support.push((abscissa(p), p.estimate.point));
        }
    }
    let fit = match fit_loglog(&support) {
        Ok(f) => {
            if !f.meets_support_rule() {
                warnings.push(format!("fit support spans only {} decades", f.span));
            }
            Some(f)
        }
        Err(e) => {
            warnings.push(e.to_string());
            None
        }
    };
    SurfaceHitResult { fit, points: points.to_vec(), warnings }
}

/// Sweep over starting layers at fixed ε; the log-log slope estimates `γ`.
pub fn estimate_surface_hit<T: Real, D: Layered<T>>(
    dynamics: &D,
    k: usize,
    side: Side,
    zetas: &[T],
    kappa: T,
    band: SurfaceBand<T>,
    opts: &McOptions<T>,
) -> Result<SurfaceHitResult<T>> {
    let points = zetas
        .iter()
        .enumerate()
        .map(|(j, &z)| surface_hit_point(dynamics, k, side, z, kappa, band, &opts.with_seed(derive_seed(opts.seed, j as u64))))
        .collect::<Result<Vec<_>>>()?;
    Ok(hit_fit(&points, |p| p.zeta))
}

/// Sweep over ε at a fixed starting layer; the log-log slope estimates `−γ`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_surface_hit_eps<T: Real, D: Layered<T>, F: Fn(T) -> Result<D>>(
    make: F,
    epsilons: &[T],
    k: usize,
    side: Side,
    zeta: T,
    kappa: T,
    band: SurfaceBand<T>,
    opts: &McOptions<T>,
) -> Result<SurfaceHitResult<T>> {
    let points = epsilons
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            let d = make(e)?;
            surface_hit_point(&d, k, side, zeta, kappa, band, &opts.with_seed(derive_seed(opts.seed, j as u64)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hit_fit(&points, |p| p.epsilon))
}

/// Conditional exit statistics towards one target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetStats<T> {
    pub target: usize,
    pub split: EstimateResult<T>,
    pub count: usize,
    pub mean: Option<EstimateResult<T>>,
    pub second_moment: Option<EstimateResult<T>>,
    pub ratio: Option<T>,
    pub ks_to_exponential: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitStats<T> {
    pub mean: EstimateResult<T>,
    pub second_moment: EstimateResult<T>,
    /// `E T² / (E T)²`.
    pub ratio: T,
    pub ks_to_exponential: T,
    pub per_target: Vec<TargetStats<T>>,
}

fn moment_block<T: Real>(times: &[T], n: usize, timeouts: usize, meta: &Provenance, spoil: f64) -> (EstimateResult<T>, EstimateResult<T>, T, T) {
    let mean = EstimateResult::mean_of(times, n, timeouts, meta, spoil);
    let squares: Vec<T> = times.iter().map(|&t| t * t).collect();
    let second = EstimateResult::mean_of(&squares, n, timeouts, meta, spoil);
    let ratio = second.point / (mean.point * mean.point);
    let normalized: Vec<T> = times.iter().map(|&t| t / mean.point).collect();
    (mean, second, ratio, ks_exponential(&normalized))
}

/// Exit-time moments, exponential-law distance and per-target splits.
pub fn estimate_exit_stats<T, D, S>(dynamics: &D, start: S, stop: &StopSet<T>, opts: &McOptions<T>, digest: &str) -> Result<ExitStats<T>>
where
    T: Real,
    D: Dynamics<T>,
    S: Fn(&mut PathRng) -> D::State + Sync,
{
    opts.validate()?;
    if stop.targets.is_empty() {
        return Err(invalid("stop set must not be empty"));
    }
    let outcomes: Vec<RunOutcome<T, D::State>> =
        par_paths(opts.paths, opts.seed, |_, rng| run_until(dynamics, start(rng), stop, &opts.policy, rng))?;
    let meta = Provenance { seed: opts.seed, digest: digest.to_string() };
    let n = opts.paths;
    let timeouts = outcomes.iter().filter(|o| o.event.kind == EventKind::TimeOut).count();
    let times: Vec<T> = outcomes.iter().filter(|o| o.event.target.is_some()).map(|o| o.event.time).collect();
    let (mean, second_moment, ratio, ks) = moment_block(&times, n, timeouts, &meta, opts.spoil);
    let per_target = (0..stop.targets.len())
        .map(|idx| {
            let t: Vec<T> = outcomes.iter().filter(|o| o.event.target == Some(idx)).map(|o| o.event.time).collect();
            let split = EstimateResult::proportion(t.len(), n, timeouts, &meta, opts.spoil);
            if t.len() < 2 {
                return TargetStats {
                    target: idx,
                    split,
                    count: t.len(),
                    mean: None,
                    second_moment: None,
                    ratio: None,
                    ks_to_exponential: None,
                };
            }
            let (m, s, r, k) = moment_block(&t, t.len() + timeouts, timeouts, &meta, opts.spoil);
            TargetStats { target: idx, split, count: t.len(), mean: Some(m), second_moment: Some(s), ratio: Some(r), ks_to_exponential: Some(k) }
        })
        .collect();
    Ok(ExitStats { mean, second_moment, ratio, ks_to_exponential: ks, per_target })
}

/// Occupation-histogram request around one side of a surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupationSpec<T> {
    pub surface: usize,
    pub side: Side,
    pub z_lo: T,
    pub kappa: T,
    pub bins: usize,
    /// Total post-burn-in time, split evenly over the chains.
    pub t_total: T,
    /// Per-chain burn-in; `None` measures ten mean excursion times in a pilot run.
    pub burn_in: Option<T>,
    pub chains: usize,
    /// Number of bins along the surface coordinate (2-D models only).
    pub surface_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationResult<T> {
    pub edges: Vec<T>,
    /// Time spent in each bin.
    pub masses: Vec<T>,
    /// Mass divided by elapsed time and bin width.
    pub density: Vec<T>,
    /// Time spent outside all bins.
    pub outside: T,
    pub elapsed: T,
    pub burn_in: T,
    pub excursions: usize,
    pub fit: SlopeFit<T>,
    /// Per surface-bin occupation (2-D) and its cosine similarity to `ψ·π`.
    pub surface_marginal: Option<Vec<T>>,
    pub surface_cosine: Option<T>,
    pub flagged: bool,
}

/// Minimum number of excursions for an unflagged histogram.
pub const MIN_EXCURSIONS: usize = 1000;

struct ChainTally<T> {
    masses: Vec<T>,
    marginal: Vec<T>,
    outside: T,
    elapsed: T,
    excursions: usize,
}

fn excursion_pilot<T: Real, D: Layered<T>>(d: &D, spec: &OccupationSpec<T>, policy: &StepPolicy<T>, seed: u64) -> Result<T> {
    // Mean time per excursion (below κ/2 after visiting above κ), measured over a fixed
    // stretch of ~10³ excursion-scale time units.
    let mut rng = path_rng(seed, u64::MAX);
    let start = d.start_on_layer(spec.surface, spec.side, spec.kappa, &mut rng);
    let horizon = lit::<T>(200.0);
    let stop = StopSet::new(vec![]).with_budget(horizon);
    let mut above = true;
    let mut n = 0usize;
    run_observed(d, start, &stop, policy, &mut rng, |s, _| {
        if let Some(u) = d.layer_coordinate(spec.surface, spec.side, s) {
            if above && u < spec.kappa / lit(2.0) {
                above = false;
                n += 1;
            } else if !above && u > spec.kappa {
                above = true;
            }
        }
    })?;
    Ok(horizon / count::<T>(n.max(1)))
}

/// Time-averaged occupation of log-spaced bins over `(z_lo, κ)` for the unperturbed process.
pub fn occupation_histogram<T: Real, D: Layered<T>>(
    dynamics: &D,
    spec: &OccupationSpec<T>,
    opts: &McOptions<T>,
    psi_pi: Option<&dyn Fn(T) -> T>,
) -> Result<OccupationResult<T>> {
    if dynamics.perturbed() {
        return Err(invalid("occupation histograms use the unperturbed process"));
    }
    if !(spec.t_total > T::zero()) {
        return Err(invalid("T_total must be positive"));
    }
    if !(spec.z_lo > T::zero() && spec.z_lo < spec.kappa) || spec.bins < 4 || spec.chains == 0 {
        return Err(invalid("occupation bins need 0 < z_lo < κ, at least 4 bins and one chain"));
    }
    opts.policy.validate()?;
    dynamics.gamma(spec.surface)?;
    let burn_in = match spec.burn_in {
        Some(b) => b,
        None => lit::<T>(10.0) * excursion_pilot(dynamics, spec, &opts.policy, opts.seed)?,
    };
    let (llo, lhi) = (spec.z_lo.ln(), spec.kappa.ln());
    let nb: T = count(spec.bins);
    let edges: Vec<T> = (0..=spec.bins).map(|i| (llo + (lhi - llo) * count::<T>(i) / nb).exp()).collect();
    let per_chain = spec.t_total / count::<T>(spec.chains);
    let sbins = spec.surface_bins.max(1);
    let tallies = par_paths(spec.chains, opts.seed, |_, rng| {
        let start = dynamics.start_on_layer(spec.surface, spec.side, spec.kappa, rng);
        let stop = StopSet::new(vec![]).with_budget(burn_in + per_chain);
        let mut masses = vec![stats::CompensatedSum::<T>::new(); spec.bins];
        let mut marginal = vec![stats::CompensatedSum::<T>::new(); sbins];
        let mut outside = stats::CompensatedSum::<T>::new();
        let mut clock = stats::CompensatedSum::<T>::new();
        let mut counted = stats::CompensatedSum::<T>::new();
        let mut above = true;
        let mut excursions = 0usize;
        run_observed(dynamics, start, &stop, &opts.policy, rng, |s, dt| {
            let now = clock.value();
            clock.add(dt);
            if now < burn_in {
                return;
            }
            counted.add(dt);
            let u = dynamics.layer_coordinate(spec.surface, spec.side, s);
            if let Some(u) = u {
                if above && u < spec.kappa / lit(2.0) {
                    above = false;
                    excursions += 1;
                } else if !above && u > spec.kappa {
                    above = true;
                }
            }
            match u {
                Some(u) if u > spec.z_lo && u < spec.kappa => {
                    let b = ((u.ln() - llo) / (lhi - llo) * nb).floor().to_usize().unwrap_or(0).min(spec.bins - 1);
                    masses[b].add(dt);
                    if let Some(y) = dynamics.surface_coordinate(s) {
                        let j = (y * count::<T>(sbins)).floor().to_usize().unwrap_or(0).min(sbins - 1);
                        marginal[j].add(dt);
                    }
                }
                _ => outside.add(dt),
            }
        })?;
        Ok(ChainTally {
            masses: masses.iter().map(|m| m.value()).collect(),
            marginal: marginal.iter().map(|m| m.value()).collect(),
            outside: outside.value(),
            elapsed: counted.value(),
            excursions,
        })
    })?;
    let sum_over = |f: &dyn Fn(&ChainTally<T>) -> T| pairwise_sum(&tallies.iter().map(f).collect::<Vec<_>>());
    let masses: Vec<T> = (0..spec.bins).map(|b| sum_over(&|c| c.masses[b])).collect();
    let marginal: Vec<T> = (0..sbins).map(|b| sum_over(&|c| c.marginal[b])).collect();
    let outside = sum_over(&|c| c.outside);
    let elapsed = sum_over(&|c| c.elapsed);
    let excursions: usize = tallies.iter().map(|c| c.excursions).sum();
    let density: Vec<T> = masses
        .iter()
        .enumerate()
        .map(|(b, &m)| m / (elapsed * (edges[b + 1] - edges[b])))
        .collect();
    let support: Vec<(T, T)> = density
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > T::zero())
        .map(|(b, &d)| ((edges[b] * edges[b + 1]).sqrt(), d))
        .collect();
    let fit = fit_loglog(&support)?;
    let (surface_marginal, surface_cosine) = match (dynamics.surface_coordinate(&dynamics.start_on_layer(
        spec.surface,
        spec.side,
        spec.kappa,
        &mut path_rng(0, 0),
    )), psi_pi)
    {
        (Some(_), Some(w)) => {
            let reference: Vec<T> = (0..sbins).map(|j| w((count::<T>(j) + lit(0.5)) / count::<T>(sbins))).collect();
            let dot = pairwise_sum(&marginal.iter().zip(&reference).map(|(a, b)| *a * *b).collect::<Vec<_>>());
            let na = pairwise_sum(&marginal.iter().map(|a| *a * *a).collect::<Vec<_>>()).sqrt();
            let nb = pairwise_sum(&reference.iter().map(|a| *a * *a).collect::<Vec<_>>()).sqrt();
            (Some(marginal), Some(dot / (na * nb)))
        }
        (Some(_), None) => (Some(marginal), None),
        _ => (None, None),
    };
    Ok(OccupationResult {
        edges,
        masses,
        density,
        outside,
        elapsed,
        burn_in,
        excursions,
        flagged: excursions < MIN_EXCURSIONS || !fit.meets_support_rule(),
        fit,
        surface_marginal,
        surface_cosine,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitSplit<T> {
    pub epsilon: T,
    /// Frequency of reaching the plus-side layer first.
    pub split: EstimateResult<T>,
    pub decision_time: EstimateResult<T>,
}

/// From a point of surface `k`, frequency of reaching `Γ⁺_{κ₀}` before `Γ⁻_{κ₀}`.
pub fn estimate_surface_exit_split<T: Real, D: Layered<T>>(
    dynamics: &D,
    k: usize,
    kappa0: T,
    opts: &McOptions<T>,
) -> Result<ExitSplit<T>> {
    opts.validate()?;
    let eps = dynamics.epsilon().ok_or_else(|| invalid("surface exit needs a perturbation"))?;
    let plus = dynamics.layer(k, Side::Plus, kappa0);
    let minus = dynamics.layer(k, Side::Minus, kappa0);
    if plus.side.is_none() {
        return Err(invalid("surface exit split needs a two-sided model"));
    }
    let stop = StopSet::new(vec![StopTarget::Layer(plus), StopTarget::Layer(minus)]);
    let outcomes = par_paths(opts.paths, opts.seed, |_, rng| {
        let start = dynamics.start_on_layer(k, Side::Plus, T::zero(), rng);
        let out = run_until(dynamics, start, &stop, &opts.policy, rng)?;
        Ok((out.event.target, out.event.time))
    })?;
    let meta = provenance(dynamics, opts.seed);
    let timeouts = outcomes.iter().filter(|o| o.0.is_none()).count();
    let plus_hits = outcomes.iter().filter(|o| o.0 == Some(0)).count();
    let times: Vec<T> = outcomes.iter().filter(|o| o.0.is_some()).map(|o| o.1).collect();
    Ok(ExitSplit {
        epsilon: eps,
        split: EstimateResult::proportion(plus_hits, opts.paths, timeouts, &meta, opts.spoil),
        decision_time: EstimateResult::mean_of(&times, opts.paths, timeouts, &meta, opts.spoil),
    })
}

/// Linear regression of mean decision time on `|ln ε|`.
pub fn decision_time_regression<T: Real>(splits: &[ExitSplit<T>]) -> Result<SlopeFit<T>> {
    let pts: Vec<(T, T)> = splits.iter().map(|s| (s.epsilon.ln().abs(), s.decision_time.point)).collect();
    fit_line(&pts)
}

/// Exit statistics of one compact at one ε.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainExitFit<T> {
    pub domain: usize,
    pub epsilon: T,
    pub theta_hat: EstimateResult<T>,
    /// (surface index, split estimate) for each adjacent surface.
    pub q_hat: Vec<(usize, EstimateResult<T>)>,
}

/// Fitted constants of one directed edge `domain → through surface`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeFit<T> {
    pub domain: usize,
    pub surface: usize,
    /// `−slope` of `ln(q̂/θ̂)` against `ln ε`; needs two usable ε values.
    pub gamma_hat: Option<T>,
    pub flagged: bool,
}

/// Two-sided surface-hit prefactors of one surface and their ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoFit<T> {
    pub surface: usize,
    pub rho_minus: EstimateResult<T>,
    pub rho_plus: EstimateResult<T>,
    pub ratio: T,
    pub ratio_ci: (T, T),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeConstants<T> {
    pub domains: Vec<DomainExitFit<T>>,
    pub edges: Vec<EdgeFit<T>>,
    pub rho: Vec<RhoFit<T>>,
}

/// Controls for [`fit_edge_constants`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFitSpec<T> {
    /// Layer used for the two-sided `ρ` estimates.
    pub kappa: T,
    /// Starting layer of the `ρ` estimates, as a multiple of ε.
    pub zeta_over_eps: T,
    pub rho_paths: usize,
}

/// Exit splits and times from each compact, fitted edge exponents and the two-sided `ρ` check.
pub fn fit_edge_constants<T: Real>(
    model: &Model1D<T>,
    perturbations: &[crate::model::PerturbationSpec<T>],
    spec: &EdgeFitSpec<T>,
    opts: &McOptions<T>,
) -> Result<EdgeConstants<T>> {
    let m = model.surfaces().len();
    if m == 0 {
        return Err(invalid("edge constants need at least one surface"));
    }
    if perturbations.is_empty() {
        return Err(invalid("at least one ε is required"));
    }
    let mut domains = Vec::new();
    for (pi, p) in perturbations.iter().enumerate() {
        let sim = Sim1D::new(model, Some(*p));
        let digest = sim.digest();
        for i in 0..model.num_domains() {
            let adjacent: Vec<usize> = [i.checked_sub(1), (i < m).then_some(i)].into_iter().flatten().collect();
            let stop = StopSet::new(adjacent.iter().map(|&s| StopTarget::Surface(s)).collect());
            let center = model.domain_center(i)?;
            let o = opts.with_seed(derive_seed(opts.seed, (pi * 1000 + i) as u64));
            let st = estimate_exit_stats(&sim, |_| center, &stop, &o, &digest)?;
            let q_hat = adjacent.iter().zip(&st.per_target).map(|(&s, t)| (s, t.split.clone())).collect();
            domains.push(DomainExitFit { domain: i, epsilon: p.epsilon, theta_hat: st.mean, q_hat });
        }
    }
    let mut edges = Vec::new();
    for i in 0..model.num_domains() {
        let adjacent: Vec<usize> = [i.checked_sub(1), (i < m).then_some(i)].into_iter().flatten().collect();
        for &s in &adjacent {
            let mut pts = Vec::new();
            let mut flagged = false;
            for d in domains.iter().filter(|d| d.domain == i) {
                let q = &d.q_hat.iter().find(|(k, _)| *k == s).expect("adjacent surface").1;
                let hits = (to_f64(q.point) * (q.n_samples - q.n_timeouts) as f64).round() as usize;
                if hits < MIN_SUCCESSES || q.flagged || d.theta_hat.flagged {
                    flagged = true;
                    continue;
                }
                pts.push((d.epsilon.ln(), (q.point / d.theta_hat.point).ln()));
            }
            let gamma_hat = if pts.len() >= 2 { Some(-fit_line(&pts)?.slope) } else { None };
            edges.push(EdgeFit { domain: i, surface: s, gamma_hat, flagged: flagged || gamma_hat.is_none() && perturbations.len() >= 2 });
        }
    }
    let p0 = perturbations[0];
    let sim = Sim1D::new(model, Some(p0));
    let zeta = spec.zeta_over_eps * p0.epsilon;
    let band = SurfaceBand { s1: spec.zeta_over_eps.min(SurfaceBand::<T>::default().s1), s2: T::one() };
    let mut rho = Vec::new();
    for s in 0..m {
        let o = McOptions { paths: spec.rho_paths, ..opts.with_seed(derive_seed(opts.seed, 7_000 + s as u64)) };
        let minus = surface_hit_point(&sim, s, Side::Minus, zeta, spec.kappa, band, &o)?;
        let plus = surface_hit_point(&sim, s, Side::Plus, zeta, spec.kappa, band, &o.with_seed(derive_seed(o.seed, 1)))?;
        let ratio = plus.rho_hat.point / minus.rho_hat.point;
        let var = |p: &SurfaceHitPoint<T>| {
            let n = count::<T>(p.estimate.n_samples - p.estimate.n_timeouts);
            (T::one() - p.estimate.point) / (n * p.estimate.point)
        };
        let h = lit::<T>(Z95) * (var(&plus) + var(&minus)).sqrt();
        rho.push(RhoFit {
            surface: s,
            rho_minus: minus.rho_hat,
            rho_plus: plus.rho_hat,
            ratio,
            ratio_ci: (ratio * (-h).exp(), ratio * h.exp()),
        });
    }
    Ok(EdgeConstants { domains, edges, rho })
}

/// Mean-time sanity: ratio of mean exit times between two ε values.
pub fn mean_ratio<T: Real>(a: &EstimateResult<T>, b: &EstimateResult<T>) -> (T, T) {
    let r = a.point / b.point;
    let rel = ((a.stderr() / a.point).powi(2) + (b.stderr() / b.point).powi(2)).sqrt();
    (r, r * rel)
}

/// Convenience: exact-core 2-D normal form simulator bound to a solved exponent.
pub fn sim2d<'a, T: Real>(
    model: &'a Model2DNormalForm<T>,
    solution: &'a GammaSolution<T>,
    perturbation: Option<crate::model::PerturbationSpec<T>>,
) -> Sim2D<'a, T> {
    Sim2D::new(model, solution, perturbation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::FnField1D;
    use crate::model::{PerturbationSpec, SurfaceSpec};

    fn single(alpha: f64, beta: f64) -> Model1D<f64> {
        Model1D::build(&[SurfaceSpec { position: 0.0, alpha, beta }], (-3.0, 3.0), 0.5, 1.0).unwrap()
    }

    #[test]
    fn formula_examples() {
        assert_eq!(transition_formula(0.4, 0.1, 0.4, -1.0).unwrap(), 1.0);
        assert_eq!(transition_formula(0.1, 0.1, 0.4, -1.0).unwrap(), 0.0);
        assert!((transition_formula::<f64>(0.2, 0.1, 0.4, -1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(transition_formula(0.5, 0.1, 0.4, -1.0).is_err());
    }

    #[test]
    fn formula_is_increasing_in_zeta() {
        let mut prev = 0.0;
        for i in 1..50 {
            let z = 0.1 + 0.3 * i as f64 / 50.0;
            let v = transition_formula(z, 0.1, 0.4, -1.3).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn bracket_contains_formula() {
        let (lo, hi) = transition_bracket(0.2, 0.1, 0.4, -1.0, 0.1).unwrap();
        let f = transition_formula(0.2, 0.1, 0.4, -1.0).unwrap();
        assert!(lo < f && f < hi);
    }

    #[test]
    fn boundary_start_is_exact() {
        let m = single(1.0, 2.0);
        let sim = Sim1D::new(&m, None);
        let r = estimate_transition(&sim, 0, Side::Plus, 0.2, 0.1, 0.2, &McOptions::new(100, 1)).unwrap();
        assert_eq!(r.estimate.point, 1.0);
        assert_eq!(r.estimate.width(), 0.0);
    }

    #[test]
    fn unperturbed_transition_covers_formula() {
        let m = single(1.0, 2.0);
        let sim = Sim1D::new(&m, None);
        let opts = McOptions::new(10_000, 17).with_theta(0.05);
        let r = estimate_transition(&sim, 0, Side::Plus, 0.2, 0.1, 0.2 * 2.0, &opts).unwrap();
        let f = 2.0 / 3.0;
        assert!((r.estimate.point - f).abs() < 0.05 + 2.0 * r.estimate.stderr(), "{:?}", r.estimate);
    }

    #[test]
    fn attracting_transition_covers_formula() {
        let m = single(1.0, 0.5);
        let sim = Sim1D::new(&m, None);
        let opts = McOptions::new(10_000, 5).with_theta(0.05);
        let r = estimate_transition(&sim, 0, Side::Minus, 0.2, 0.1, 0.2 * 2.0, &opts).unwrap();
        let f = (0.2f64.sqrt() - 0.1f64.sqrt()) / (0.4f64.sqrt() - 0.1f64.sqrt());
        assert!((r.estimate.point - f).abs() < 0.05 + 2.0 * r.estimate.stderr(), "{:?} vs {f}", r.estimate);
    }

    #[test]
    fn estimators_are_bitwise_reproducible() {
        let m = single(1.0, 2.0);
        let sim = Sim1D::new(&m, None);
        let opts = McOptions::new(500, 3);
        let a = estimate_transition(&sim, 0, Side::Plus, 0.2, 0.1, 0.2, &opts).unwrap();
        let b = estimate_transition(&sim, 0, Side::Plus, 0.2, 0.1, 0.2, &opts).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| estimate_transition(&sim, 0, Side::Plus, 0.15, 0.1, 0.2, &opts)).unwrap();
        let d = estimate_transition(&sim, 0, Side::Plus, 0.15, 0.1, 0.2, &opts).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn surface_band_enforced() {
        let m = single(1.0, 2.0);
        let sim = Sim1D::new(&m, Some(PerturbationSpec::new(1e-3, 1.0, 0.0).unwrap()));
        let err = surface_hit_point(&sim, 0, Side::Plus, 0.01, 0.2, SurfaceBand::default(), &McOptions::new(10, 0));
        assert!(err.is_err());
    }

    #[test]
    fn deterministic_exit_is_not_exponential() {
        let field = FnField1D { diffusion: |_x: f64| 0.0, drift: |_x: f64| 1.0, surfaces: vec![-10.0] };
        let sim = Sim1D::new(&field, None);
        let stop = StopSet::new(vec![StopTarget::Layer(LayerGeometry { surface: 0, kappa: 11.0, side: Some(Side::Plus) })]);
        let st = estimate_exit_stats(&sim, |_| 0.0, &stop, &McOptions::new(50, 0), "wall").unwrap();
        assert!((st.ratio - 1.0).abs() < 1e-9);
        assert!((st.ks_to_exponential - (1.0 - (-1.0f64).exp())).abs() < 1e-6);
        assert_eq!(st.per_target[0].count, 50);
    }

    #[test]
    fn empty_occupation_rejected() {
        let m = single(1.0, 2.0);
        let sim = Sim1D::new(&m, None);
        let spec = OccupationSpec {
            surface: 0,
            side: Side::Plus,
            z_lo: 0.02,
            kappa: 0.2,
            bins: 8,
            t_total: 0.0,
            burn_in: Some(1.0),
            chains: 1,
            surface_bins: 1,
        };
        assert!(occupation_histogram(&sim, &spec, &McOptions::new(1, 0), None).is_err());
    }

    #[test]
    fn occupation_mass_balances_elapsed_time() {
        let m = single(1.0, 2.0);
        let sim = Sim1D::new(&m, None);
        let spec = OccupationSpec {
            surface: 0,
            side: Side::Plus,
            z_lo: 0.02,
            kappa: 0.2,
            bins: 8,
            t_total: 20.0,
            burn_in: Some(1.0),
            chains: 2,
            surface_bins: 1,
        };
        let r = occupation_histogram(&sim, &spec, &McOptions::new(1, 4), None).unwrap();
        let total: f64 = r.masses.iter().sum::<f64>() + r.outside;
        assert!((total - r.elapsed).abs() < 1e-9 * r.elapsed);
        assert!((r.elapsed - 20.0).abs() < 0.05);
    }
}
