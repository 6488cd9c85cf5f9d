//! Characteristic exponent `γ` and the surface eigenfunctions `φ`, `ψ`, `π`.
//!
//! The surface operator `L_y + γd∂_y + αγ(γ−1) + βγ` is discretized by periodic central
//! differences. Its principal eigenvalue `λ(γ)` is convex with `λ(0) = 0`; the exponent is
//! the other root.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linalg::{left_null_probability, perron, DenseMatrix};
use crate::model::Model2DNormalForm;
use crate::scalar::{count, lit, Real};

/// Coefficients of a normal-form model sampled on its surface grid.
#[derive(Debug, Clone)]
pub struct SurfaceOperator<T> {
    pub n: usize,
    diffusion: Vec<T>,
    drift: Vec<T>,
    alpha: Vec<T>,
    beta: Vec<T>,
    dy: Vec<T>,
}

impl<T: Real> SurfaceOperator<T> {
    pub fn new(model: &Model2DNormalForm<T>) -> Self {
        let grid = model.grid();
        Self {
            n: model.grid_size,
            diffusion: grid.iter().map(|&y| model.ly_diffusion.eval(y)).collect(),
            drift: grid.iter().map(|&y| model.ly_drift.eval(y)).collect(),
            alpha: grid.iter().map(|&y| model.local.alpha_at(y)).collect(),
            beta: grid.iter().map(|&y| model.local.beta_at(y)).collect(),
            dy: grid.iter().map(|&y| model.local.dy_at(y)).collect(),
        }
    }

    /// Discretized `L_y + γ d ∂_y + diag(αγ(γ−1) + βγ)`.
    pub fn assemble(&self, gamma: T) -> Result<DenseMatrix<T>> {
        let n = self.n;
        let h = T::one() / count::<T>(n);
        let two = lit::<T>(2.0);
        let mut m = DenseMatrix::zeros(n);
        for i in 0..n {
            let diff = self.diffusion[i] / (h * h);
            let adv = (self.drift[i] + gamma * self.dy[i]) / (two * h);
            let (up, down) = (diff + adv, diff - adv);
            if !(up > T::zero() && down > T::zero()) {
                return Err(invalid(format!(
                    "grid too coarse: N_y = {n} gives a non-positive off-diagonal at node {i} for γ = {gamma}"
                )));
            }
            m[(i, (i + 1) % n)] += up;
            m[(i, (i + n - 1) % n)] += down;
            let potential = self.alpha[i] * gamma * (gamma - T::one()) + self.beta[i] * gamma;
            m[(i, i)] += -two * diff + potential;
        }
        Ok(m)
    }
}

/// Solver controls.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions<T> {
    /// Bisection stops when the bracket is shorter than this.
    pub gamma_tol: T,
    /// Collatz–Wielandt bracket tolerance of the eigenvalue iteration.
    pub eig_tol: T,
    pub max_iter: usize,
    /// Half-width of the excluded band around the trivial root.
    pub exclusion: T,
    /// Largest acceptable eigen-residual at the solved exponent.
    pub residual_tol: T,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            gamma_tol: lit(1e-12),
            eig_tol: lit(1e-13),
            max_iter: 500,
            exclusion: lit(1e-3),
            residual_tol: lit(1e-8),
        }
    }
}

/// Search interval for the exponent.
#[derive(Debug, Clone, Copy)]
pub struct SearchBounds<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Default for SearchBounds<T> {
    fn default() -> Self {
        Self { lo: lit(-64.0), hi: lit(64.0) }
    }
}

/// Principal eigenpair of the discretized operator and its adjoint at one `γ`.
#[derive(Debug, Clone)]
pub struct SpectralPoint<T> {
    pub lambda: T,
    pub lambda_adjoint: T,
    /// Right Perron vector, unit sum.
    pub right: Vec<T>,
    /// Left Perron vector, unit sum.
    pub left: Vec<T>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSolution<T> {
    pub gamma: T,
    pub phi: Vec<T>,
    pub psi: Vec<T>,
    pub pi: Vec<T>,
    /// (forward, adjoint) residual norms `‖A_γ v‖_∞/‖v‖_∞`.
    pub residuals: (T, T),
    pub grid_size: usize,
    pub avg_alpha: T,
    pub avg_beta: T,
}

impl<T: Real> GammaSolution<T> {
    /// Solution for constant coefficients: `φ ≡ ψ ≡ 1`.
    pub fn constant(alpha: T, beta: T) -> Result<Self> {
        let gamma = crate::model::gamma_constant(alpha, beta)?;
        Ok(Self {
            gamma,
            phi: vec![T::one()],
            psi: vec![T::one()],
            pi: vec![T::one()],
            residuals: (T::zero(), T::zero()),
            grid_size: 1,
            avg_alpha: alpha,
            avg_beta: beta,
        })
    }

    /// Periodic cubic (Catmull–Rom) interpolation of `φ`.
    pub fn phi_at(&self, y: T) -> T {
        periodic_interp(&self.phi, y)
    }

    pub fn psi_at(&self, y: T) -> T {
        periodic_interp(&self.psi, y)
    }

    pub fn phi_min(&self) -> T {
        self.phi.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn phi_max(&self) -> T {
        self.phi.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// Catmull–Rom interpolation of samples at `i/n` on the unit circle.
pub fn periodic_interp<T: Real>(v: &[T], y: T) -> T {
    let n = v.len();
    if n == 1 {
        return v[0];
    }
    let s = (y - y.floor()) * count::<T>(n);
    let i = s.floor().to_usize().unwrap_or(0).min(n - 1);
    let t = s - count::<T>(i);
    let p0 = v[(i + n - 1) % n];
    let p1 = v[i];
    let p2 = v[(i + 1) % n];
    let p3 = v[(i + 2) % n];
    let half = lit::<T>(0.5);
    let t2 = t * t;
    let t3 = t2 * t;
    half * (lit::<T>(2.0) * p1
        + (p2 - p0) * t
        + (lit::<T>(2.0) * p0 - lit::<T>(5.0) * p1 + lit::<T>(4.0) * p2 - p3) * t2
        + (lit::<T>(3.0) * (p1 - p2) + p3 - p0) * t3)
}

/// Invariant probability vector of the discretized `L_y`.
pub fn surface_invariant_measure<T: Real>(model: &Model2DNormalForm<T>) -> Result<Vec<T>> {
    let op = SurfaceOperator::new(model);
    invariant_measure_of(&op)
}

fn invariant_measure_of<T: Real>(op: &SurfaceOperator<T>) -> Result<Vec<T>> {
    let ly = op.assemble(T::zero())?;
    let pi = left_null_probability(&ly).map_err(|_| {
        Error::NumericalFailure(format!("L_y discretization at N_y = {} has a kernel of dimension other than 1", op.n))
    })?;
    if pi.iter().any(|p| !(*p > T::zero())) {
        return Err(Error::NumericalFailure(format!("invariant measure at N_y = {} is not positive", op.n)));
    }
    Ok(pi)
}

fn spectral_point<T: Real>(op: &SurfaceOperator<T>, gamma: T, opts: &SolveOptions<T>) -> Result<SpectralPoint<T>> {
    let a = op.assemble(gamma)?;
    let fwd = perron(&a, opts.eig_tol, opts.max_iter)?;
    let adj = perron(&a.transpose(), opts.eig_tol, opts.max_iter)?;
    Ok(SpectralPoint {
        lambda: fwd.value,
        lambda_adjoint: adj.value,
        right: fwd.vector,
        left: adj.vector,
        iterations: fwd.iterations.max(adj.iterations),
    })
}

/// Principal eigenvalue `λ(γ)` with its Perron vectors.
pub fn principal_eigenvalue<T: Real>(model: &Model2DNormalForm<T>, gamma: T) -> Result<SpectralPoint<T>> {
    spectral_point(&SurfaceOperator::new(model), gamma, &SolveOptions::default())
}

fn lambda_only<T: Real>(op: &SurfaceOperator<T>, gamma: T, opts: &SolveOptions<T>) -> Result<T> {
    Ok(perron(&op.assemble(gamma)?, opts.eig_tol, opts.max_iter)?.value)
}

fn residual<T: Real>(a: &DenseMatrix<T>, v: &[T]) -> T {
    let r = a.matvec(v).into_iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let s = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    r / s
}

/// Non-zero root of `λ(γ)` with the sign fixed by `avg α − avg β`, and its eigenfunctions.
pub fn solve_gamma<T: Real>(
    model: &Model2DNormalForm<T>,
    bounds: SearchBounds<T>,
    opts: SolveOptions<T>,
) -> Result<GammaSolution<T>> {
    let op = SurfaceOperator::new(model);
    let pi = invariant_measure_of(&op)?;
    let avg = |v: &[T]| v.iter().zip(&pi).fold(T::zero(), |s, (&a, &p)| s + a * p);
    let avg_alpha = avg(&op.alpha);
    let avg_beta = avg(&op.beta);
    if (avg_alpha - avg_beta).abs() < opts.gamma_tol.max(lit(1e-12)) {
        return Err(invalid("γ = 0 case excluded: averaged alpha equals averaged beta"));
    }
    let repelling = avg_beta > avg_alpha;
    // `near` is inside the exclusion band edge where λ < 0; `far` is expanded until λ > 0.
    let sign = if repelling { -T::one() } else { T::one() };
    let limit = if repelling { bounds.lo } else { bounds.hi };
    if !(limit * sign > opts.exclusion) {
        return Err(invalid("search bounds do not reach beyond the exclusion band"));
    }
    let mut near = sign * opts.exclusion;
    if !(lambda_only(&op, near, &opts)? < T::zero()) {
        return Err(Error::NoSignChange { lo: crate::scalar::to_f64(near), hi: crate::scalar::to_f64(near) });
    }
    let mut far = sign;
    loop {
        if far * sign > limit * sign {
            far = limit;
        }
        if lambda_only(&op, far, &opts)? > T::zero() {
            break;
        }
        if far == limit {
            let (lo, hi) = if repelling { (limit, near) } else { (near, limit) };
            return Err(Error::NoSignChange { lo: crate::scalar::to_f64(lo), hi: crate::scalar::to_f64(hi) });
        }
        near = far;
        far = far * lit(2.0);
    }
    let mut iterations = 0usize;
    while (far - near).abs() > opts.gamma_tol {
        let mid = (near + far) / lit(2.0);
        if mid == near || mid == far {
            break;
        }
        if lambda_only(&op, mid, &opts)? > T::zero() {
            far = mid;
        } else {
            near = mid;
        }
        iterations += 1;
        if iterations > 4 * opts.max_iter {
            return Err(Error::NonConvergence { what: "exponent bisection".into(), iterations });
        }
    }
    let gamma = (near + far) / lit(2.0);
    let sp = spectral_point(&op, gamma, &opts)?;
    let a = op.assemble(gamma)?;
    let phi_norm = sp.right.iter().zip(&pi).fold(T::zero(), |s, (&f, &p)| s + f * p);
    let phi: Vec<T> = sp.right.iter().map(|&f| f / phi_norm).collect();
    let psi: Vec<T> = sp.left.iter().zip(&pi).map(|(&w, &p)| w / p).collect();
    let residuals = (residual(&a, &phi), residual(&a.transpose(), &sp.left));
    if residuals.0 > opts.residual_tol || residuals.1 > opts.residual_tol {
        return Err(Error::NonConvergence { what: format!("eigen-residual at γ = {gamma}"), iterations: sp.iterations });
    }
    if phi.iter().chain(&psi).any(|v| !(*v > T::zero())) {
        return Err(Error::Internal("Perron vectors are not positive at the solved exponent".into()));
    }
    Ok(GammaSolution { gamma, phi, psi, pi, residuals, grid_size: op.n, avg_alpha, avg_beta })
}
