//! Dense linear algebra for the small surface eigenproblems.

use crate::error::{invalid, Error, Result};
use crate::scalar::{count, lit, Real};

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("matrix rows must form a square array"));
        }
        Ok(Self { n, data: rows.iter().flatten().copied().collect() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                row.iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> T {
        (0..self.n)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].iter().fold(T::zero(), |a, &x| a + x.abs()))
            .fold(T::zero(), T::max)
    }

    pub fn add_diagonal(&mut self, shift: T) {
        for i in 0..self.n {
            self[(i, i)] += shift;
        }
    }

    /// Whether every off-diagonal entry is non-negative.
    pub fn is_metzler(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| i == j || self[(i, j)] >= T::zero()))
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: DenseMatrix<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub fn factor(a: &DenseMatrix<T>) -> Result<Self> {
        let n = a.dim();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.norm_inf().max(T::min_positive_value());
        for k in 0..n {
            let (p, pmax) = (k..n).map(|i| (i, lu[(i, k)].abs())).fold((k, -T::one()), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
            if !(pmax > scale * T::epsilon() * T::epsilon()) {
                return Err(Error::NumericalFailure(format!("singular matrix at column {k} of {n}")));
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        let v = lu[(k, j)];
                        lu[(i, j)] -= f * v;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.dim();
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }
}

pub fn solve<T: Real>(a: &DenseMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    Ok(Lu::factor(a)?.solve(b))
}

/// Principal eigenpair of an irreducible Metzler matrix.
#[derive(Debug, Clone)]
pub struct PerronPair<T> {
    pub value: T,
    /// Positive eigenvector with unit sum.
    pub vector: Vec<T>,
    pub iterations: usize,
    /// Width of the final Collatz–Wielandt bracket.
    pub bracket: T,
}

/// Collatz–Wielandt ratios `(Ax)_i / x_i`.
fn cw_bounds<T: Real>(a: &DenseMatrix<T>, x: &[T]) -> (T, T) {
    let ax = a.matvec(x);
    ax.iter().zip(x).fold((T::infinity(), T::neg_infinity()), |(lo, hi), (&v, &xi)| {
        let r = v / xi;
        (lo.min(r), hi.max(r))
    })
}

/// Eigenvalue of maximal real part of a Metzler matrix and its positive eigenvector,
/// by Noda's inverse iteration with Collatz–Wielandt stopping.
pub fn perron<T: Real>(a: &DenseMatrix<T>, tol: T, max_iter: usize) -> Result<PerronPair<T>> {
    let n = a.dim();
    if n == 0 {
        return Err(invalid("empty matrix"));
    }
    if !a.is_metzler() {
        return Err(invalid("Perron iteration needs non-negative off-diagonal entries"));
    }
    let floor = lit::<T>(64.0) * T::epsilon() * a.norm_inf();
    let stop = tol.max(floor);
    let mut x = vec![T::one() / count::<T>(n); n];
    let (_, hi) = cw_bounds(a, &x);
    let mut upper = hi + stop.max(lit::<T>(1e-3) * (T::one() + hi.abs()));
    for it in 1..=max_iter {
        let mut shifted = a.clone();
        for v in shifted.data.iter_mut() {
            *v = -*v;
        }
        shifted.add_diagonal(upper);
        let y = match Lu::factor(&shifted) {
            Ok(lu) => lu.solve(&x),
            // The shift landed on the spectrum to working precision: x is the eigenvector.
            Err(_) => x.clone(),
        };
        if y.iter().any(|v| !v.is_finite() || *v <= T::zero()) {
            return Err(Error::NumericalFailure(format!(
                "Perron iterate lost positivity at iteration {it}; matrix may be reducible"
            )));
        }
        let min_ratio = x.iter().zip(&y).fold(T::infinity(), |m, (&xi, &yi)| m.min(xi / yi));
        let total = y.iter().fold(T::zero(), |s, &v| s + v);
        x = y.into_iter().map(|v| v / total).collect();
        upper -= min_ratio;
        let (lo, hi) = cw_bounds(a, &x);
        if hi - lo <= stop {
            return Ok(PerronPair { value: (lo + hi) / lit(2.0), vector: x, iterations: it, bracket: hi - lo });
        }
        if upper < hi {
            upper = hi + stop;
        }
    }
    Err(Error::NonConvergence { what: "Perron eigenvalue iteration".into(), iterations: max_iter })
}

/// Solves `x Q = 0`, `Σx = 1` for a generator (or `P − I`) with a one-dimensional left kernel.
pub fn left_null_probability<T: Real>(q: &DenseMatrix<T>) -> Result<Vec<T>> {
    let n = q.dim();
    let mut m = q.transpose();
    for j in 0..n {
        m[(n - 1, j)] = T::one();
    }
    let mut rhs = vec![T::zero(); n];
    rhs[n - 1] = T::one();
    solve(&m, &rhs).map_err(|_| Error::NumericalFailure(format!("stationarity system of size {n} is rank deficient")))
}
