//! Discrete-event simulation of the semi-Markov skeleton on the domain tree.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::hierarchy::{format_exponent, singleton_exit_stats, DomainTree};
use crate::montecarlo::par_paths;
use crate::scalar::{count, lit, Real};
use crate::stats::{wilson, Z95};

/// Finite-ε holding means and jump probabilities of each domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkeletonLaw<T> {
    pub epsilon: T,
    pub theta: Vec<T>,
    /// `(target domain, probability)` for each adjacent domain, normalized per row.
    pub jumps: Vec<Vec<(usize, T)>>,
}

/// Evaluates the singleton power laws of every domain at `ε`.
pub fn evaluate_skeleton<T: Real>(tree: &DomainTree<T>, epsilon: T) -> Result<SkeletonLaw<T>> {
    if !(epsilon > T::zero() && epsilon < T::one()) {
        return Err(invalid(format!("ε must lie in (0, 1), got {epsilon}")));
    }
    if tree.len() == 1 {
        return Ok(SkeletonLaw { epsilon, theta: vec![T::infinity()], jumps: vec![Vec::new()] });
    }
    let mut theta = Vec::with_capacity(tree.len());
    let mut jumps = Vec::with_capacity(tree.len());
    for k in 0..tree.len() {
        let s = singleton_exit_stats(tree, k)?;
        let mut row = Vec::new();
        for x in &s.exits {
            let p = x.p.eval(epsilon);
            if p > T::one() {
                let d = tree.domains();
                return Err(invalid(format!(
                    "ε = {epsilon} is outside the asymptotic range: jump {} → {} (γ = {}) evaluates to {p} > 1",
                    d[x.from].id,
                    d[x.to].id,
                    format_exponent(&tree.edge(x.edge).gamma)
                )));
            }
            row.push((x.to, p));
        }
        let total = row.iter().fold(T::zero(), |a, r| a + r.1);
        for r in &mut row {
            r.1 /= total;
        }
        theta.push(s.theta.eval(epsilon));
        jumps.push(row);
    }
    Ok(SkeletonLaw { epsilon, theta, jumps })
}

/// Holding-time law of the skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Holding {
    #[default]
    Exponential,
    /// Holding times equal to their means.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainFrequency<T> {
    pub domain: usize,
    pub frequency: T,
    pub ci_low: T,
    pub ci_high: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkeletonRun<T> {
    pub start: usize,
    pub horizon: T,
    pub runs: usize,
    pub seed: u64,
    pub distribution: Vec<DomainFrequency<T>>,
    /// Observed jump counts `counts[i][j]` from `i` to `j`.
    pub jump_counts: Vec<Vec<u64>>,
    /// Largest relative gap between the horizon and the accumulated holding time at the recorded state.
    pub bookkeeping_error: T,
    pub warnings: Vec<String>,
}

struct Trace {
    state: usize,
    jumps: Vec<u64>,
    /// (time of last jump, end of current holding) bracketing the horizon.
    bracket: (f64, f64),
}

/// Runs `runs` independent copies of the skeleton from `start` and records the domain at `horizon`.
pub fn simulate_skeleton<T: Real>(
    law: &SkeletonLaw<T>,
    start: usize,
    horizon: T,
    runs: usize,
    seed: u64,
    holding: Holding,
) -> Result<SkeletonRun<T>> {
    let n = law.theta.len();
    if start >= n {
        return Err(invalid(format!("start domain {start} out of range")));
    }
    if !(horizon >= T::zero() && horizon.is_finite()) || runs == 0 {
        return Err(invalid("horizon must be finite and non-negative, runs positive"));
    }
    let mut warnings = Vec::new();
    if horizon < law.theta[start] {
        warnings.push(format!("horizon {horizon} is shorter than the mean holding time {} of the start", law.theta[start]));
    }
    let theta: Vec<f64> = law.theta.iter().map(|t| t.to_f64().unwrap_or(f64::INFINITY)).collect();
    let jumps: Vec<Vec<(usize, f64)>> = law.jumps.iter().map(|r| r.iter().map(|&(j, p)| (j, p.to_f64().unwrap_or(0.0))).collect()).collect();
    let h = horizon.to_f64().unwrap_or(0.0);
    let traces = par_paths(runs, seed, |_, rng| {
        let mut state = start;
        let mut now = 0.0f64;
        let mut counts = vec![0u64; n * n];
        loop {
            let hold = match holding {
                Holding::Exponential => {
                    let e: f64 = Exp1.sample(rng);
                    theta[state] * e
                }
                Holding::Deterministic => theta[state],
            };
            if now + hold > h || !hold.is_finite() {
                return Ok(Trace { state, jumps: counts, bracket: (now, now + hold) });
            }
            now += hold;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let row = &jumps[state];
            let mut next = row.last().map(|r| r.0).unwrap_or(state);
            for &(j, p) in row {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            counts[state * n + next] += 1;
            state = next;
        }
    })?;
    let mut hits = vec![0usize; n];
    let mut jump_counts = vec![vec![0u64; n]; n];
    let mut book = 0.0f64;
    for t in &traces {
        hits[t.state] += 1;
        for i in 0..n {
            for j in 0..n {
                jump_counts[i][j] += t.jumps[i * n + j];
            }
        }
        if h > 0.0 && !(t.bracket.0 <= h && h < t.bracket.1) {
            book = book.max((t.bracket.0 - h).abs().min((t.bracket.1 - h).abs()) / h);
        }
    }
    let distribution = hits
        .iter()
        .enumerate()
        .map(|(d, &k)| {
            let (lo, hi) = wilson(k, runs, lit(Z95));
            DomainFrequency { domain: d, frequency: count::<T>(k) / count::<T>(runs), ci_low: lo, ci_high: hi }
        })
        .collect();
    Ok(SkeletonRun { start, horizon, runs, seed, distribution, jump_counts, bookkeeping_error: lit(book), warnings })
}

impl<T: Real> SkeletonRun<T> {
    /// Largest absolute deviation of the empirical distribution from `reference`.
    pub fn max_deviation(&self, reference: &[T]) -> T {
        self.distribution.iter().zip(reference).fold(T::zero(), |m, (d, &r)| m.max((d.frequency - r).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{parse_exponent, Domain, SurfaceEdge};

    fn tree(gammas: &[&str]) -> DomainTree<f64> {
        let domains = (0..=gammas.len()).map(|i| Domain { id: (i + 1).to_string(), c: 1.0 }).collect();
        let edges = gammas
            .iter()
            .enumerate()
            .map(|(k, g)| SurfaceEdge { u: k, v: k + 1, gamma: parse_exponent(g).unwrap(), rho: 1.0, c_uv: 1.0, c_vu: 1.0 })
            .collect();
        DomainTree::new(domains, edges).unwrap()
    }

    #[test]
    fn symmetric_two_domain_law() {
        let law = evaluate_skeleton(&tree(&["-1"]), 1e-3).unwrap();
        assert!((law.theta[0] - 1000.0).abs() < 1e-9);
        assert_eq!(law.jumps[0], vec![(1, 1.0)]);
    }

    #[test]
    fn chain_law_at_finite_eps() {
        let eps: f64 = 1e-3;
        let law = evaluate_skeleton(&tree(&["-1", "-2"]), eps).unwrap();
        assert!((law.jumps[1][0].1 - 1.0 / (1.0 + eps)).abs() < 1e-15);
        assert!((law.jumps[1][1].1 - eps / (1.0 + eps)).abs() < 1e-15);
        let err = evaluate_skeleton(&tree(&["-1", "-2"]), 2.0).unwrap_err();
        assert!(err.to_string().contains("(0, 1)"));
        let err = evaluate_skeleton(&tree(&["-1", "-2"]), 0.999).unwrap();
        assert_eq!(err.jumps.len(), 3);
    }

    #[test]
    fn zero_horizon_is_indicator() {
        let law = evaluate_skeleton(&tree(&["-1"]), 1e-2).unwrap();
        let r = simulate_skeleton(&law, 1, 0.0, 100, 1, Holding::Exponential).unwrap();
        assert_eq!(r.distribution[1].frequency, 1.0);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn symmetric_mixing() {
        let law = evaluate_skeleton(&tree(&["-1"]), 1e-2).unwrap();
        let r = simulate_skeleton(&law, 0, 100.0 * 100.0, 20_000, 2, Holding::Exponential).unwrap();
        let d = &r.distribution[0];
        assert!(d.ci_low <= 0.5 && 0.5 <= d.ci_high, "{d:?}");
        assert!(r.bookkeeping_error == 0.0);
    }

    #[test]
    fn jump_frequencies_match_law() {
        let eps = 0.05;
        let law = evaluate_skeleton(&tree(&["-1", "-1.5"]), eps).unwrap();
        let r = simulate_skeleton(&law, 1, 2000.0, 4000, 3, Holding::Exponential).unwrap();
        let out: u64 = r.jump_counts[1].iter().sum();
        let (lo, hi) = wilson::<f64>(r.jump_counts[1][2] as usize, out as usize, Z95);
        let p = law.jumps[1][1].1;
        assert!(lo <= p && p <= hi, "{lo} {p} {hi}");
    }

    #[test]
    fn deterministic_holding() {
        let law = evaluate_skeleton(&tree(&["-1"]), 1e-1).unwrap();
        let r = simulate_skeleton(&law, 0, 25.0, 10, 0, Holding::Deterministic).unwrap();
        assert_eq!(r.distribution[0].frequency, 1.0);
        let r = simulate_skeleton(&law, 0, 15.0, 10, 0, Holding::Deterministic).unwrap();
        assert_eq!(r.distribution[1].frequency, 1.0);
    }
}
