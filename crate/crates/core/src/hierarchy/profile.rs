//! Metastable profiles, time windows and perturbation invariance.

use rand::Rng;
use serde::Serialize;

use super::cluster::{distribute_with, ladder_values, scale_ladder, Diagnostics, Scale};
use super::powerlaw::{format_exponent, Exponent};
use super::tree::DomainTree;
use crate::error::{invalid, Error, Result};
use crate::rng::path_rng;
use crate::scalar::{lit, Real};

/// Coefficients `c_·(i, n)` valid for `ε^{upper} ≪ t ≪ ε^{lower}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Window<T> {
    pub n: usize,
    pub upper: Scale,
    pub lower: Scale,
    pub members: Vec<usize>,
    pub c: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetastableProfile<T> {
    pub start: usize,
    pub ladder: Vec<Scale>,
    pub windows: Vec<Window<T>>,
}

impl<T: Real> Window<T> {
    /// A representative exponent inside the window: the midpoint, or a quarter unit past
    /// `upper` for the unbounded last window. Deeper points mix better but the number of
    /// skeleton jumps grows like `ε^{-offset}`.
    pub fn mid_exponent(&self) -> Exponent {
        let up = self.upper.finite().expect("windows start at a finite scale");
        match self.lower {
            Scale::Finite(lo) => (up + lo) / Exponent::from_integer(2),
            Scale::NegInf => up - Exponent::new(1, 4),
        }
    }
}

pub fn metastable_profile<T: Real>(tree: &DomainTree<T>, i: usize) -> Result<MetastableProfile<T>> {
    profile_with(tree, i, &mut Diagnostics::default())
}

pub(crate) fn profile_with<T: Real>(tree: &DomainTree<T>, i: usize, diag: &mut Diagnostics<T>) -> Result<MetastableProfile<T>> {
    let clusters = scale_ladder(tree, i)?;
    let ladder = ladder_values(&clusters);
    let windows = clusters
        .iter()
        .enumerate()
        .map(|(k, c)| {
            Ok(Window { n: k + 1, upper: ladder[k], lower: ladder[k + 1], members: c.members.clone(), c: distribute_with(tree, c, diag)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetastableProfile { start: i, ladder, windows })
}

/// Window `n` with `γ_{n−1} > τ > γ_n` for the time scale `t = ε^τ`.
pub fn window_index(tau: Exponent, ladder: &[Scale]) -> Result<usize> {
    let t = Scale::Finite(tau);
    if ladder.contains(&t) {
        return Err(invalid(format!("critical time scale ε^{}: no limit guaranteed by the theory", format_exponent(&tau))));
    }
    if ladder.first() != Some(&Scale::zero()) || tau > Exponent::from_integer(0) {
        return Err(invalid("time exponent must be negative (time scales beyond order one)"));
    }
    (1..ladder.len())
        .find(|&n| ladder[n - 1] > t && t > ladder[n])
        .ok_or_else(|| invalid("time exponent outside the ladder"))
}

/// All profiles of a tree, one per start domain.
pub fn all_profiles<T: Real>(tree: &DomainTree<T>) -> Result<Vec<MetastableProfile<T>>> {
    (0..tree.len()).map(|i| metastable_profile(tree, i)).collect()
}

fn max_profile_change<T: Real>(a: &[MetastableProfile<T>], b: &[MetastableProfile<T>]) -> Result<T> {
    let mut worst = T::zero();
    for (pa, pb) in a.iter().zip(b) {
        if pa.ladder != pb.ladder {
            return Err(Error::Internal("ladder changed under a prefactor change".into()));
        }
        for (wa, wb) in pa.windows.iter().zip(&pb.windows) {
            for (x, y) in wa.c.iter().zip(&wb.c) {
                worst = worst.max((*x - *y).abs());
            }
        }
    }
    Ok(worst)
}

/// Largest change of any coefficient when each surface's `ρ` is multiplied by a random factor in `[0.1, 10]`.
pub fn rho_invariance_check<T: Real>(tree: &DomainTree<T>, trials: usize, seed: u64) -> Result<T> {
    let base = all_profiles(tree)?;
    let mut worst = T::zero();
    for trial in 0..trials {
        let mut rng = path_rng(seed, trial as u64);
        let factors: Vec<T> = (0..tree.edges().len()).map(|_| lit(10f64.powf(rng.random_range(-1.0..=1.0)))).collect();
        let scaled = all_profiles(&tree.scale_rho(&factors))?;
        worst = worst.max(max_profile_change(&base, &scaled)?);
    }
    Ok(worst)
}

/// Largest coefficient change when a single `C_i` is doubled, maximized over `i`.
pub fn c_sensitivity<T: Real>(tree: &DomainTree<T>) -> Result<T> {
    let base = all_profiles(tree)?;
    let mut worst = T::zero();
    for i in 0..tree.len() {
        worst = worst.max(max_profile_change(&base, &all_profiles(&tree.scale_domain_c(i, lit(2.0)))?)?);
    }
    Ok(worst)
}

/// Results of the structural self-checks on one tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Audit<T> {
    pub ladders_nested: bool,
    pub support_law: bool,
    pub probability_vectors: bool,
    pub first_window_indicator: bool,
    /// Largest spread of the last-window vectors across start domains.
    pub last_window_gap: T,
    pub diagnostics: Diagnostics<T>,
}

impl<T: Real> Audit<T> {
    pub fn passed(&self, tol: T) -> bool {
        self.ladders_nested
            && self.support_law
            && self.probability_vectors
            && self.first_window_indicator
            && self.last_window_gap <= tol
            && self.diagnostics.balance_residual <= tol
            && self.diagnostics.stationarity_residual <= tol
    }
}

/// Evaluates every profile and checks nesting, support, normalization and start independence.
/// Exponent postconditions are enforced during evaluation and surface as errors.
pub fn audit<T: Real>(tree: &DomainTree<T>) -> Result<Audit<T>> {
    let mut diag = Diagnostics::default();
    let profiles = (0..tree.len()).map(|i| profile_with(tree, i, &mut diag)).collect::<Result<Vec<_>>>()?;
    let tol = lit::<T>(1e-12);
    let mut nested = true;
    let mut support = true;
    let mut prob = true;
    let mut first = true;
    for p in &profiles {
        let w = &p.windows;
        nested &= w.windows(2).all(|pair| {
            pair[1].members.len() > pair[0].members.len() && pair[0].members.iter().all(|m| pair[1].members.contains(m))
        });
        nested &= w.last().is_some_and(|l| l.members.len() == tree.len());
        nested &= p.ladder.windows(2).all(|s| s[0] > s[1]) && p.ladder.last() == Some(&Scale::NegInf);
        for win in w {
            let total = win.c.iter().fold(T::zero(), |a, &b| a + b);
            prob &= (total - T::one()).abs() <= tol && win.c.iter().all(|&c| c >= T::zero());
            support &= (0..tree.len()).all(|j| (win.c[j] > T::zero()) == win.members.contains(&j));
        }
        first &= w[0].c.iter().enumerate().all(|(j, &c)| c == if j == p.start { T::one() } else { T::zero() });
    }
    let last0 = &profiles[0].windows.last().expect("non-empty profile").c;
    let mut gap = T::zero();
    for p in &profiles[1..] {
        for (a, b) in p.windows.last().expect("non-empty profile").c.iter().zip(last0) {
            gap = gap.max((*a - *b).abs());
        }
    }
    Ok(Audit { ladders_nested: nested, support_law: support, probability_vectors: prob, first_window_indicator: first, last_window_gap: gap, diagnostics: diag })
}
