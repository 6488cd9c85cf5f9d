//! Small statistical toolkit: compensated sums, interval estimates, KS distance, line fits.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::scalar::{count, lit, Real};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum<T> {
    sum: T,
    comp: T,
}

impl<T: Real> CompensatedSum<T> {
    pub fn new() -> Self {
        Self { sum: T::zero(), comp: T::zero() }
    }

    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

/// Pairwise sum with a fixed association order, independent of how the slice was produced.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut acc = CompensatedSum::new();
        for &x in xs {
            acc.add(x);
        }
        return acc.value();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    pairwise_sum(xs) / count(xs.len())
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se<T: Real>(xs: &[T]) -> (T, T) {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return (m, T::infinity());
    }
    let dev: Vec<T> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&dev) / count(n - 1);
    (m, (var / count(n)).sqrt())
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson<T: Real>(successes: usize, n: usize, z: T) -> (T, T) {
    if n == 0 {
        return (T::zero(), T::one());
    }
    let nf: T = count(n);
    let p = count::<T>(successes) / nf;
    let z2 = z * z;
    let denom = T::one() + z2 / nf;
    let center = (p + z2 / (lit::<T>(2.0) * nf)) / denom;
    let half = z * (p * (T::one() - p) / nf + z2 / (lit::<T>(4.0) * nf * nf)).sqrt() / denom;
    let lo = (center - half).max(T::zero()).min(p);
    let hi = (center + half).min(T::one()).max(p);
    (lo, hi)
}

/// Kolmogorov–Smirnov distance between the empirical law of `xs` and Exp(1).
pub fn ks_exponential<T: Real>(xs: &[T]) -> T {
    ks_distance(xs, |x| if x <= T::zero() { T::zero() } else { T::one() - (-x).exp() })
}

/// Kolmogorov–Smirnov distance against a continuous CDF.
pub fn ks_distance<T: Real, F: Fn(T) -> T>(xs: &[T], cdf: F) -> T {
    if xs.is_empty() {
        return T::one();
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n: T = count(v.len());
    let mut d = T::zero();
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        let above = count::<T>(i + 1) / n - f;
        let below = f - count::<T>(i) / n;
        d = d.max(above).max(below);
    }
    d
}

/// Asymptotic 5% critical value of the one-sample KS statistic.
pub fn ks_critical_5pct<T: Real>(n: usize) -> T {
    lit::<T>(1.358) / count::<T>(n).sqrt()
}

/// Pearson correlation coefficient.
pub fn correlation<T: Real>(xs: &[T], ys: &[T]) -> T {
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: Vec<T> = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).collect();
    let sxx: Vec<T> = xs.iter().map(|&x| (x - mx) * (x - mx)).collect();
    let syy: Vec<T> = ys.iter().map(|&y| (y - my) * (y - my)).collect();
    pairwise_sum(&sxy) / (pairwise_sum(&sxx) * pairwise_sum(&syy)).sqrt()
}

/// Ordinary least-squares line through a set of points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit<T> {
    pub slope: T,
    pub intercept: T,
    pub slope_stderr: T,
    pub r_squared: T,
    /// Points used in the fit. For log-log fits these are (ln x, ln y).
    pub support: Vec<(T, T)>,
    /// Abscissa span in decades (log-log fits) or raw units (linear fits).
    pub span: T,
}

impl<T: Real> SlopeFit<T> {
    /// 95% interval for the slope.
    pub fn slope_ci(&self) -> (T, T) {
        let h = lit::<T>(Z95) * self.slope_stderr;
        (self.slope - h, self.slope + h)
    }

    /// At least four points over at least one decade.
    pub fn meets_support_rule(&self) -> bool {
        self.support.len() >= 4 && self.span >= T::one()
    }
}

/// Least-squares line `y = intercept + slope·x`. Needs at least two distinct abscissae.
pub fn fit_line<T: Real>(points: &[(T, T)]) -> Result<SlopeFit<T>> {
    let n = points.len();
    if n < 2 {
        return Err(invalid(format!("line fit needs at least 2 points, got {n}")));
    }
    let xs: Vec<T> = points.iter().map(|p| p.0).collect();
    let ys: Vec<T> = points.iter().map(|p| p.1).collect();
    let mx = mean(&xs);
    let my = mean(&ys);
    let sxx = pairwise_sum(&xs.iter().map(|&x| (x - mx) * (x - mx)).collect::<Vec<_>>());
    if !(sxx > T::zero()) {
        return Err(invalid("line fit needs distinct abscissae"));
    }
    let sxy = pairwise_sum(&points.iter().map(|&(x, y)| (x - mx) * (y - my)).collect::<Vec<_>>());
    let syy = pairwise_sum(&ys.iter().map(|&y| (y - my) * (y - my)).collect::<Vec<_>>());
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = pairwise_sum(
        &points
            .iter()
            .map(|&(x, y)| {
                let r = y - intercept - slope * x;
                r * r
            })
            .collect::<Vec<_>>(),
    );
    let slope_stderr = if n > 2 { (sse / count::<T>(n - 2) / sxx).sqrt() } else { T::infinity() };
    let r_squared = if syy > T::zero() { T::one() - sse / syy } else { T::one() };
    let (lo, hi) = xs.iter().fold((T::infinity(), T::neg_infinity()), |(l, h), &x| (l.min(x), h.max(x)));
    Ok(SlopeFit { slope, intercept, slope_stderr, r_squared, support: points.to_vec(), span: hi - lo })
}

/// Least-squares fit of `ln y` against `ln x`. Requires at least four positive points.
///
/// The returned `span` is measured in decades of `x`; callers check
/// [`SlopeFit::meets_support_rule`] before trusting the slope.
pub fn fit_loglog<T: Real>(points: &[(T, T)]) -> Result<SlopeFit<T>> {
    if points.len() < 4 {
        return Err(invalid(format!("log-log fit needs at least 4 points, got {}", points.len())));
    }
    if points.iter().any(|&(x, y)| !(x > T::zero() && y > T::zero())) {
        return Err(invalid("log-log fit needs positive coordinates"));
    }
    let logs: Vec<(T, T)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mut fit = fit_line(&logs)?;
    fit.span = fit.span / lit::<T>(std::f64::consts::LN_10);
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::path_rng;
    use rand::Rng;
    use rand_distr::{Distribution, Exp1};

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::<f64>::new();
        acc.add(1.0);
        for _ in 0..10_000 {
            acc.add(1e-16);
        }
        assert!((acc.value() - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn wilson_contains_point_and_is_clamped() {
        let (lo, hi) = wilson::<f64>(0, 10, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.35);
        let (lo, hi) = wilson::<f64>(10, 10, Z95);
        assert_eq!(hi, 1.0);
        assert!(lo > 0.65);
    }

    #[test]
    fn wilson_coverage_on_bernoulli_streams() {
        let p = 0.3;
        let mut covered = 0;
        for rep in 0..500u64 {
            let mut r = path_rng(11, rep);
            let k = (0..200).filter(|_| r.random::<f64>() < p).count();
            let (lo, hi) = wilson::<f64>(k, 200, Z95);
            if lo <= p && p <= hi {
                covered += 1;
            }
        }
        assert!(covered >= 465, "coverage {covered}/500");
    }

    #[test]
    fn ks_of_exact_exponentials_passes_critical_value() {
        let n = 500;
        let crit = ks_critical_5pct::<f64>(n);
        let mut pass = 0;
        for rep in 0..200u64 {
            let mut r = path_rng(5, rep);
            let xs: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut r)).collect();
            if ks_exponential(&xs) < crit {
                pass += 1;
            }
        }
        assert!(pass >= 180, "{pass}/200");
    }

    #[test]
    fn ks_of_point_mass_at_one() {
        let d = ks_exponential(&[1.0f64; 100]);
        assert!((d - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn exact_line_fit() {
        let pts: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        let f = fit_line(&pts).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12);
        assert!((f.intercept - 3.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loglog_fit_reports_decades() {
        let pts: Vec<(f64, f64)> = [0.02, 0.04, 0.08, 0.16, 0.32].iter().map(|&x| (x, 5.0 / x)).collect();
        let f = fit_loglog(&pts).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!((f.span - 16f64.log10()).abs() < 1e-12);
        assert!(f.meets_support_rule());
        assert!(fit_loglog(&pts[..3]).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }
}
