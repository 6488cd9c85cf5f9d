//! Domain adjacency trees with per-edge exponents and prefactors.

use std::collections::HashSet;

use rand::Rng;
use serde::Serialize;

use super::powerlaw::{format_exponent, Exponent};
use crate::error::{invalid, Result};
use crate::rng::PathRng;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Domain<T> {
    pub id: String,
    /// Prefactor `C_i` of the mean exit time.
    pub c: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceEdge<T> {
    pub u: usize,
    pub v: usize,
    #[serde(serialize_with = "ser_exponent")]
    pub gamma: Exponent,
    pub rho: T,
    pub c_uv: T,
    pub c_vu: T,
}

fn ser_exponent<S: serde::Serializer>(e: &Exponent, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_exponent(e))
}

impl<T: Real> SurfaceEdge<T> {
    pub fn other(&self, from: usize) -> usize {
        if from == self.u { self.v } else { self.u }
    }

    /// Directional prefactor `C_{from, other}`.
    pub fn c_from(&self, from: usize) -> T {
        if from == self.u { self.c_uv } else { self.c_vu }
    }

    pub fn touches(&self, i: usize) -> bool {
        self.u == i || self.v == i
    }
}

/// Validated tree of domains and repelling surfaces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainTree<T> {
    domains: Vec<Domain<T>>,
    edges: Vec<SurfaceEdge<T>>,
    #[serde(skip)]
    incident: Vec<Vec<usize>>,
}

impl<T: Real> DomainTree<T> {
    pub fn new(domains: Vec<Domain<T>>, edges: Vec<SurfaceEdge<T>>) -> Result<Self> {
        let n = domains.len();
        if n == 0 {
            return Err(invalid("a domain tree needs at least one domain"));
        }
        let mut seen = HashSet::new();
        for d in &domains {
            if !seen.insert(d.id.as_str()) {
                return Err(invalid(format!("duplicate domain id {:?}", d.id)));
            }
            if !(d.c > T::zero() && d.c.is_finite()) {
                return Err(invalid(format!("domain {:?}: C must be positive", d.id)));
            }
        }
        let mut incident = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            if e.u >= n || e.v >= n || e.u == e.v {
                return Err(invalid(format!("edge {k} has invalid endpoints ({}, {})", e.u, e.v)));
            }
            if e.gamma >= Exponent::from_integer(0) {
                return Err(invalid(format!("edge {k}: gamma must be negative (repelling surfaces only)")));
            }
            for (name, x) in [("rho", e.rho), ("C_uv", e.c_uv), ("C_vu", e.c_vu)] {
                if !(x > T::zero() && x.is_finite()) {
                    return Err(invalid(format!("edge {k}: {name} must be positive")));
                }
            }
            incident[e.u].push(k);
            incident[e.v].push(k);
        }
        let tree = Self { domains, edges, incident };
        if tree.edges.len() + 1 != n || tree.component(0, |_| true).len() != n {
            return Err(invalid("adjacency graph must be a tree"));
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn domains(&self) -> &[Domain<T>] {
        &self.domains
    }

    pub fn edges(&self) -> &[SurfaceEdge<T>] {
        &self.edges
    }

    pub fn edge(&self, k: usize) -> &SurfaceEdge<T> {
        &self.edges[k]
    }

    pub fn incident(&self, i: usize) -> &[usize] {
        &self.incident[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.id == id)
    }

    /// `γ_i^*`, the largest exponent among the edges at `i`.
    pub fn gamma_star(&self, i: usize) -> Option<Exponent> {
        self.incident[i].iter().map(|&k| self.edges[k].gamma).max()
    }

    /// Sorted vertex set reachable from `start` along edges accepted by `keep`.
    pub fn component(&self, start: usize, keep: impl Fn(&SurfaceEdge<T>) -> bool) -> Vec<usize> {
        let mut on = vec![false; self.len()];
        let mut stack = vec![start];
        on[start] = true;
        while let Some(x) = stack.pop() {
            for &k in &self.incident[x] {
                let e = &self.edges[k];
                let y = e.other(x);
                if !on[y] && keep(e) {
                    on[y] = true;
                    stack.push(y);
                }
            }
        }
        (0..self.len()).filter(|&i| on[i]).collect()
    }

    /// Copy with every surface prefactor multiplied by `factors[k]`.
    pub fn scale_rho(&self, factors: &[T]) -> Self {
        let mut t = self.clone();
        for (e, &f) in t.edges.iter_mut().zip(factors) {
            e.rho *= f;
        }
        t
    }

    /// Copy with domain `i`'s prefactor `C_i` multiplied by `factor`.
    pub fn scale_domain_c(&self, i: usize, factor: T) -> Self {
        let mut t = self.clone();
        t.domains[i].c *= factor;
        t
    }
}

/// Random tree on `n` domains with exponents drawn from `palette` and prefactors log-uniform in `[0.5, 2]`.
pub fn random_tree<T: Real>(n: usize, palette: &[Exponent], rng: &mut PathRng) -> Result<DomainTree<T>> {
    if n == 0 || palette.is_empty() {
        return Err(invalid("random tree needs n ≥ 1 and a non-empty palette"));
    }
    let mut pref = || lit::<T>(2f64.powf(rng.random_range(-1.0..1.0)));
    let domains: Vec<Domain<T>> = (0..n).map(|i| Domain { id: (i + 1).to_string(), c: pref() }).collect();
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        let gamma = palette[rng.random_range(0..palette.len())];
        let mut pref = || lit::<T>(2f64.powf(rng.random_range(-1.0..1.0)));
        edges.push(SurfaceEdge { u, v, gamma, rho: pref(), c_uv: pref(), c_vu: pref() });
    }
    DomainTree::new(domains, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn edge(u: usize, v: usize, g: i64) -> SurfaceEdge<f64> {
        SurfaceEdge { u, v, gamma: Ratio::from_integer(g), rho: 1.0, c_uv: 1.0, c_vu: 1.0 }
    }

    fn doms(n: usize) -> Vec<Domain<f64>> {
        (0..n).map(|i| Domain { id: format!("{}", i + 1), c: 1.0 }).collect()
    }

    #[test]
    fn rejects_cycles_and_forests() {
        let err = DomainTree::new(doms(3), vec![edge(0, 1, -1), edge(1, 2, -1), edge(2, 0, -1)]).unwrap_err();
        assert!(err.to_string().contains("adjacency graph must be a tree"));
        assert!(DomainTree::new(doms(4), vec![edge(0, 1, -1), edge(0, 1, -1), edge(2, 3, -1)]).is_err());
    }

    #[test]
    fn rejects_attracting_edges() {
        assert!(DomainTree::new(doms(2), vec![edge(0, 1, 1)]).is_err());
        assert!(DomainTree::new(doms(2), vec![edge(0, 1, 0)]).is_err());
    }

    #[test]
    fn gamma_star_and_components() {
        let t = DomainTree::new(doms(3), vec![edge(0, 1, -1), edge(1, 2, -2)]).unwrap();
        assert_eq!(t.gamma_star(1), Some(Ratio::from_integer(-1)));
        assert_eq!(t.component(2, |e| e.gamma > Ratio::from_integer(-2)), vec![2]);
        assert_eq!(t.component(0, |e| e.gamma > Ratio::from_integer(-2)), vec![0, 1]);
    }
}
