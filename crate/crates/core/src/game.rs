//! The abstract die-and-coin renewal game.
//!
//! Each round draws a prize type `J ~ q` and a duration `s`, then flips a coin with success
//! probability `p_J`. On success the game ends with prize `J`; otherwise a second duration `t`
//! accrues and the next round starts.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::montecarlo::par_paths;
use crate::rng::{derive_seed, PathRng};
use crate::scalar::{count, lit, to_f64, Real};
use crate::stats::{correlation, ks_exponential, mean_and_se, wilson, Z95};

/// Non-negative holding-time law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum HoldingLaw<T> {
    Zero,
    Constant { mean: T },
    Exponential { mean: T },
    Lognormal { mean: T, sigma: T },
}

impl<T: Real> HoldingLaw<T> {
    pub fn mean(&self) -> T {
        match *self {
            HoldingLaw::Zero => T::zero(),
            HoldingLaw::Constant { mean } | HoldingLaw::Exponential { mean } | HoldingLaw::Lognormal { mean, .. } => mean,
        }
    }

    pub fn sample(&self, rng: &mut PathRng) -> T {
        match *self {
            HoldingLaw::Zero => T::zero(),
            HoldingLaw::Constant { mean } => mean,
            HoldingLaw::Exponential { mean } => {
                let e: f64 = Exp1.sample(rng);
                mean * lit(e)
            }
            HoldingLaw::Lognormal { mean, sigma } => {
                let n: f64 = StandardNormal.sample(rng);
                let mu = mean.ln() - sigma * sigma / lit(2.0);
                (mu + sigma * lit(n)).exp()
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            HoldingLaw::Zero => true,
            HoldingLaw::Constant { mean } => mean >= T::zero() && mean.is_finite(),
            HoldingLaw::Exponential { mean } => mean > T::zero() && mean.is_finite(),
            HoldingLaw::Lognormal { mean, sigma } => mean > T::zero() && mean.is_finite() && sigma >= T::zero() && sigma.is_finite(),
        };
        if ok { Ok(()) } else { Err(invalid(format!("{name} law has an invalid mean or shape"))) }
    }
}

/// Bounded Markov modulation of the success probabilities, for stress runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Modulation<T> {
    /// Multiplier of every `p_i` in each modulation state.
    pub factors: Vec<T>,
    /// Per-round probability of jumping to a uniformly chosen other state.
    pub switch_prob: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameConfig<T> {
    pub epsilon: T,
    pub q: Vec<T>,
    pub p: Vec<T>,
    pub s_law: HoldingLaw<T>,
    pub t_law: HoldingLaw<T>,
    pub modulation: Option<Modulation<T>>,
}

/// Ratio `p(ε)/q_i(ε)` above which a configuration is reported as far from the small-`p` regime.
pub const SMALL_P_WARNING: f64 = 0.05;

impl<T: Real> GameConfig<T> {
    pub fn new(epsilon: T, q: Vec<T>, p: Vec<T>, s_law: HoldingLaw<T>, t_law: HoldingLaw<T>) -> Result<Self> {
        let c = Self { epsilon, q, p, s_law, t_law, modulation: None };
        c.validate()?;
        Ok(c)
    }

    pub fn with_modulation(mut self, m: Modulation<T>) -> Result<Self> {
        self.modulation = Some(m);
        self.validate()?;
        Ok(self)
    }

    pub fn types(&self) -> usize {
        self.q.len()
    }

    /// `p(ε) = Σ q_i p_i`.
    pub fn total_success(&self) -> T {
        self.q.iter().zip(&self.p).fold(T::zero(), |s, (&q, &p)| s + q * p)
    }

    /// `ξ(ε)`, the mean of `s`.
    pub fn xi(&self) -> T {
        self.s_law.mean()
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.is_empty() || self.q.len() != self.p.len() {
            return Err(invalid("q and p must be non-empty and of equal length"));
        }
        if self.q.iter().any(|&q| !(q > T::zero())) {
            return Err(invalid("die probabilities must be positive"));
        }
        let total = self.q.iter().fold(T::zero(), |s, &q| s + q);
        if (total - T::one()).abs() > lit(1e-9) {
            return Err(invalid(format!("die probabilities must sum to 1, got {total}")));
        }
        if self.p.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
            return Err(invalid("success probabilities must lie in [0, 1]"));
        }
        if !(self.total_success() > T::zero()) {
            return Err(invalid("at least one prize must be winnable"));
        }
        self.s_law.validate("s")?;
        self.t_law.validate("t")?;
        if !(self.xi() > T::zero()) {
            return Err(invalid("s must have a positive mean"));
        }
        if let Some(m) = &self.modulation {
            if m.factors.is_empty() || m.factors.iter().any(|&f| !(f > T::zero())) {
                return Err(invalid("modulation factors must be positive"));
            }
            let pmax = self.p.iter().fold(T::zero(), |a, &b| a.max(b));
            let fmax = m.factors.iter().fold(T::zero(), |a, &b| a.max(b));
            if pmax * fmax > T::one() {
                return Err(invalid("modulated success probability exceeds 1"));
            }
            if !(m.switch_prob >= T::zero() && m.switch_prob <= T::one()) {
                return Err(invalid("switch probability must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Types whose `p(ε)/q_i` exceeds [`SMALL_P_WARNING`].
    pub fn warnings(&self) -> Vec<String> {
        let p = self.total_success();
        self.q
            .iter()
            .enumerate()
            .filter(|(_, &q)| to_f64(p / q) > SMALL_P_WARNING)
            .map(|(i, &q)| format!("type {i}: p(ε)/q_i = {} is not small", p / q))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GameOutcome<T> {
    pub prize: usize,
    pub rounds: u64,
    pub time: T,
}

fn draw_type<T: Real>(q: &[T], rng: &mut PathRng) -> usize {
    let u: T = lit(rng.random::<f64>());
    let mut acc = T::zero();
    for (i, &qi) in q.iter().enumerate() {
        acc += qi;
        if u < acc {
            return i;
        }
    }
    q.len() - 1
}

/// Plays one game to completion.
pub fn play<T: Real>(config: &GameConfig<T>, rng: &mut PathRng) -> GameOutcome<T> {
    let mut time = T::zero();
    let mut rounds = 0u64;
    let mut state = 0usize;
    loop {
        rounds += 1;
        let j = draw_type(&config.q, rng);
        time += config.s_law.sample(rng);
        let factor = match &config.modulation {
            Some(m) => m.factors[state],
            None => T::one(),
        };
        let coin: T = lit(rng.random::<f64>());
        if coin < config.p[j] * factor {
            return GameOutcome { prize: j, rounds, time };
        }
        time += config.t_law.sample(rng);
        if let Some(m) = &config.modulation {
            let k = m.factors.len();
            if k > 1 && lit::<T>(rng.random::<f64>()) < m.switch_prob {
                state = (state + 1 + rng.random_range(0..k - 1)) % k;
            }
        }
    }
}

/// Limit statistics of one (ε, prize type) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitCell<T> {
    pub epsilon: T,
    pub prize: usize,
    pub n_wins: usize,
    /// Empirical `E T_i · p(ε)/ξ(ε)`.
    pub mean_ratio: T,
    pub mean_ratio_se: T,
    /// KS distance of `p(ε)/ξ(ε)·T_i` to the unit exponential.
    pub ks: T,
    /// Observed frequency of type `i` with its Wilson interval.
    pub win_freq: T,
    pub win_ci: (T, T),
    /// `q_i p_i / Σ q_j p_j`.
    pub win_expected: T,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitReport<T> {
    pub cells: Vec<LimitCell<T>>,
    /// Per ε: correlation between the number of rounds and the prize type index.
    pub round_type_correlation: Vec<(T, T)>,
    pub warnings: Vec<String>,
}

impl<T: Real> LimitReport<T> {
    pub fn cells_at(&self, epsilon: T) -> impl Iterator<Item = &LimitCell<T>> {
        self.cells.iter().filter(move |c| c.epsilon == epsilon)
    }
}

/// Plays `replications` games per configuration; configurations are listed by decreasing ε.
pub fn verify_limits<T: Real>(family: &[GameConfig<T>], replications: usize, seed: u64) -> Result<LimitReport<T>> {
    if family.is_empty() || replications == 0 {
        return Err(invalid("need at least one configuration and one replication"));
    }
    if family.windows(2).any(|w| !(w[0].epsilon > w[1].epsilon)) {
        return Err(invalid("ε-list must be strictly decreasing"));
    }
    let mut cells = Vec::new();
    let mut corr = Vec::new();
    let mut warnings = Vec::new();
    for (ci, config) in family.iter().enumerate() {
        config.validate()?;
        warnings.extend(config.warnings().into_iter().map(|w| format!("ε = {}: {w}", config.epsilon)));
        let outcomes = par_paths(replications, derive_seed(seed, ci as u64), |_, rng| Ok(play(config, rng)))?;
        let scale = config.total_success() / config.xi();
        for prize in 0..config.types() {
            let t: Vec<T> = outcomes.iter().filter(|o| o.prize == prize).map(|o| o.time * scale).collect();
            let (win_lo, win_hi) = wilson(t.len(), replications, lit(Z95));
            let expected = config.q[prize] * config.p[prize] / config.total_success();
            let (m, se) = if t.len() >= 2 { mean_and_se(&t) } else { (T::nan(), T::nan()) };
            cells.push(LimitCell {
                epsilon: config.epsilon,
                prize,
                n_wins: t.len(),
                mean_ratio: m,
                mean_ratio_se: se,
                ks: if t.is_empty() { T::nan() } else { ks_exponential(&t) },
                win_freq: count::<T>(t.len()) / count::<T>(replications),
                win_ci: (win_lo, win_hi),
                win_expected: expected,
                flagged: t.len() < 2,
            });
        }
        let xs: Vec<T> = outcomes.iter().map(|o| count::<T>(o.rounds as usize)).collect();
        let ys: Vec<T> = outcomes.iter().map(|o| count::<T>(o.prize)).collect();
        corr.push((config.epsilon, if config.types() > 1 { correlation(&xs, &ys) } else { T::zero() }));
    }
    Ok(LimitReport { cells, round_type_correlation: corr, warnings })
}

/// Whether two cells' mean ratios agree within their joint 95% interval.
pub fn same_time_law<T: Real>(a: &LimitCell<T>, b: &LimitCell<T>) -> bool {
    let joint = lit::<T>(Z95) * (a.mean_ratio_se * a.mean_ratio_se + b.mean_ratio_se * b.mean_ratio_se).sqrt();
    (a.mean_ratio - b.mean_ratio).abs() <= joint
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::path_rng;

    fn single(eps: f64, s: HoldingLaw<f64>) -> GameConfig<f64> {
        GameConfig::new(eps, vec![1.0], vec![eps], s, HoldingLaw::Zero).unwrap()
    }

    #[test]
    fn certain_success_ends_in_one_round() {
        let c = GameConfig::new(0.5, vec![1.0], vec![1.0], HoldingLaw::Constant { mean: 1.0 }, HoldingLaw::Zero).unwrap();
        for i in 0..100 {
            let o = play(&c, &mut path_rng(1, i));
            assert_eq!(o.rounds, 1);
            assert_eq!(o.time, 1.0);
        }
    }

    #[test]
    fn geometric_rounds() {
        let eps = 0.05;
        let c = single(eps, HoldingLaw::Constant { mean: 1.0 });
        let n = 20_000;
        let r: Vec<f64> = (0..n).map(|i| play(&c, &mut path_rng(2, i)).rounds as f64).collect();
        let (m, se) = mean_and_se(&r);
        assert!((m - 1.0 / eps).abs() < 3.0 * se, "{m} ± {se}");
        let var = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let target = (1.0 - eps) / (eps * eps);
        // Variance of the sample variance for a geometric law is ≈ 2σ⁴/n for moderate skew; use a loose 5%.
        assert!((var - target).abs() < 0.05 * target, "{var} vs {target}");
    }

    #[test]
    fn two_type_race() {
        let eps: f64 = 1e-2;
        let c = GameConfig::new(eps, vec![0.7, 0.3], vec![eps, eps * eps], HoldingLaw::Constant { mean: 1.0 }, HoldingLaw::Zero)
            .unwrap();
        let rep = verify_limits(&[c], 40_000, 3).unwrap();
        let expected = 0.3 * eps * eps / (0.7 * eps + 0.3 * eps * eps);
        let cell = &rep.cells[1];
        assert!((cell.win_expected - expected).abs() < 1e-15);
        assert!(cell.win_ci.0 <= expected && expected <= cell.win_ci.1, "{:?}", cell);
    }

    #[test]
    fn validation() {
        assert!(GameConfig::new(0.1, vec![0.5, 0.6], vec![0.1, 0.1], HoldingLaw::Zero, HoldingLaw::Zero).is_err());
        assert!(GameConfig::new(0.1, vec![1.0], vec![0.0], HoldingLaw::Constant { mean: 1.0 }, HoldingLaw::Zero).is_err());
        let c = GameConfig::new(0.5, vec![1.0], vec![0.5], HoldingLaw::Constant { mean: 1.0 }, HoldingLaw::Zero).unwrap();
        assert_eq!(c.warnings().len(), 1);
    }

    #[test]
    fn lognormal_mean() {
        let law = HoldingLaw::Lognormal { mean: 2.0, sigma: 0.5 };
        let xs: Vec<f64> = (0..50_000).map(|i| law.sample(&mut path_rng(4, i))).collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - 2.0).abs() < 4.0 * se);
    }

    #[test]
    fn modulation_switches_state() {
        let c = GameConfig::<f64>::new(0.01, vec![1.0], vec![0.01], HoldingLaw::Constant { mean: 1.0 }, HoldingLaw::Zero)
            .unwrap()
            .with_modulation(Modulation { factors: vec![0.5, 1.5], switch_prob: 0.5 })
            .unwrap();
        let rep = verify_limits(&[c], 5_000, 5).unwrap();
        assert!((rep.cells[0].mean_ratio - 1.0).abs() < 0.1);
    }
}
