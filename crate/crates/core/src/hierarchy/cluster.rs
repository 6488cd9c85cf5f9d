//! Clusters, scale ladders and the leading-order exit statistics of clusters.

use std::fmt;

use serde::{Serialize, Serializer};

use super::powerlaw::{format_exponent, Exponent, PowerLaw};
use super::tree::DomainTree;
use crate::error::{invalid, Error, Result};
use crate::scalar::{lit, Real};

/// A critical value: finite exponent or `−∞` (the whole tree).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scale {
    NegInf,
    Finite(Exponent),
}

impl Scale {
    pub fn zero() -> Self {
        Scale::Finite(Exponent::from_integer(0))
    }

    pub fn finite(&self) -> Option<Exponent> {
        match self {
            Scale::Finite(e) => Some(*e),
            Scale::NegInf => None,
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scale::NegInf => write!(f, "-inf"),
            Scale::Finite(e) => write!(f, "{}", format_exponent(e)),
        }
    }
}

impl Serialize for Scale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Connected vertex set with its defining scale (largest boundary exponent).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cluster {
    pub members: Vec<usize>,
    pub scale: Scale,
    pub boundary: Vec<usize>,
}

impl Cluster {
    /// Builds the cluster on `members`, which must induce a connected subtree.
    pub fn of<T: Real>(tree: &DomainTree<T>, members: Vec<usize>) -> Result<Self> {
        let mut members = members;
        members.sort_unstable();
        members.dedup();
        if members.is_empty() || members.iter().any(|&m| m >= tree.len()) {
            return Err(invalid("cluster members must be valid, non-empty domain indices"));
        }
        let inside = membership(tree.len(), &members);
        let reach = tree.component(members[0], |e| inside[e.u] && inside[e.v]);
        if reach != members {
            return Err(invalid("cluster members must induce a connected subtree"));
        }
        let boundary: Vec<usize> = (0..tree.edges().len())
            .filter(|&k| {
                let e = tree.edge(k);
                inside[e.u] != inside[e.v]
            })
            .collect();
        let scale = boundary.iter().map(|&k| Scale::Finite(tree.edge(k).gamma)).max().unwrap_or(Scale::NegInf);
        Ok(Self { members, scale, boundary })
    }

    pub fn singleton<T: Real>(tree: &DomainTree<T>, i: usize) -> Result<Self> {
        Self::of(tree, vec![i])
    }

    pub fn whole<T: Real>(tree: &DomainTree<T>) -> Self {
        Self { members: (0..tree.len()).collect(), scale: Scale::NegInf, boundary: Vec::new() }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    pub fn internal_edges<T: Real>(&self, tree: &DomainTree<T>) -> Vec<usize> {
        (0..tree.edges().len()).filter(|&k| self.contains(tree.edge(k).u) && self.contains(tree.edge(k).v)).collect()
    }
}

fn membership(n: usize, members: &[usize]) -> Vec<bool> {
    let mut v = vec![false; n];
    for &m in members {
        v[m] = true;
    }
    v
}

/// Nested clusters `G^{γ_1}(i) ⊂ G^{γ_2}(i) ⊂ … ⊂ G` containing domain `i`.
pub fn scale_ladder<T: Real>(tree: &DomainTree<T>, i: usize) -> Result<Vec<Cluster>> {
    if i >= tree.len() {
        return Err(invalid(format!("no domain with index {i}")));
    }
    let mut ladder = vec![Cluster::singleton(tree, i)?];
    loop {
        let last = ladder.last().expect("non-empty ladder");
        let Scale::Finite(g) = last.scale else { break };
        let next = Cluster::of(tree, tree.component(i, |e| e.gamma >= g))?;
        debug_assert!(next.members.len() > last.members.len());
        ladder.push(next);
    }
    Ok(ladder)
}

/// The ladder values `Ξ(i) = {0 = γ_0 > γ_1 > … > γ_{n(i)} = −∞}`.
pub fn ladder_values(clusters: &[Cluster]) -> Vec<Scale> {
    std::iter::once(Scale::zero()).chain(clusters.iter().map(|c| c.scale)).collect()
}

/// One way out of a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Exit<T> {
    pub edge: usize,
    /// Endpoint inside the cluster.
    pub from: usize,
    pub to: usize,
    pub p: PowerLaw<T>,
}

/// Mean exit time and exit-edge probabilities of a cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitLaw<T> {
    pub theta: PowerLaw<T>,
    pub exits: Vec<Exit<T>>,
}

impl<T: Real> ExitLaw<T> {
    pub fn exit_through(&self, edge: usize) -> Option<&Exit<T>> {
        self.exits.iter().find(|x| x.edge == edge)
    }
}

/// Exit statistics of a single domain.
pub fn singleton_exit_stats<T: Real>(tree: &DomainTree<T>, k: usize) -> Result<ExitLaw<T>> {
    let star = tree.gamma_star(k).ok_or_else(|| invalid(format!("domain {} has no adjacent surface", tree.domains()[k].id)))?;
    let dominant = tree.incident(k).iter().map(|&e| tree.edge(e)).filter(|e| e.gamma == star);
    let den = dominant.fold(T::zero(), |s, e| s + e.c_from(k) * e.rho);
    let theta = PowerLaw::new(tree.domains()[k].c / den, star)?;
    let exits = tree
        .incident(k)
        .iter()
        .map(|&e| {
            let edge = tree.edge(e);
            Ok(Exit { edge: e, from: k, to: edge.other(k), p: PowerLaw::new(edge.c_from(k) * edge.rho / den, star - edge.gamma)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExitLaw { theta, exits })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    #[serde(serialize_with = "ser_exp")]
    pub gamma_prime: Exponent,
    pub subclusters: Vec<Cluster>,
    pub chain_edges: Vec<usize>,
}

fn ser_exp<S: Serializer>(e: &Exponent, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_exponent(e))
}

/// Splits a cluster along its weakest internal edges.
pub fn partition_cluster<T: Real>(tree: &DomainTree<T>, cluster: &Cluster) -> Result<Partition> {
    if cluster.members.len() < 2 {
        return Err(invalid("cannot partition a singleton cluster"));
    }
    let internal = cluster.internal_edges(tree);
    let gamma_prime = internal.iter().map(|&k| tree.edge(k).gamma).min().expect("connected cluster with ≥ 2 members");
    let mut assigned = vec![usize::MAX; tree.len()];
    let mut subclusters = Vec::new();
    for &m in &cluster.members {
        if assigned[m] != usize::MAX {
            continue;
        }
        let comp = tree.component(m, |e| cluster.contains(e.u) && cluster.contains(e.v) && e.gamma > gamma_prime);
        for &c in &comp {
            assigned[c] = subclusters.len();
        }
        subclusters.push(Cluster::of(tree, comp)?);
    }
    let chain_edges: Vec<usize> = internal.into_iter().filter(|&k| tree.edge(k).gamma == gamma_prime).collect();
    if chain_edges.len() + 1 != subclusters.len() {
        return Err(Error::Internal("subcluster quotient graph is not a tree".into()));
    }
    Ok(Partition { gamma_prime, subclusters, chain_edges })
}

/// Leading-order jump probability between two subclusters of a partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainLink<T> {
    pub from: usize,
    pub to: usize,
    pub q: PowerLaw<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStationary<T> {
    pub lambda: Vec<T>,
    /// Largest relative violation of `λ_k q_kl = λ_l q_lk`.
    pub balance_residual: T,
    /// Largest violation of `Σ_k λ_k q_kl = λ_l Σ_k q_lk`.
    pub stationarity_residual: T,
}

/// Tolerance for the detailed-balance and stationarity residuals.
pub const BALANCE_TOL: f64 = 1e-12;

/// Stationary law of a tree-shaped reversible jump chain, by propagating edge ratios from state 0.
pub fn chain_stationary<T: Real>(states: usize, links: &[ChainLink<T>]) -> Result<ChainStationary<T>> {
    if states == 0 {
        return Err(invalid("chain needs at least one state"));
    }
    let zero = Exponent::from_integer(0);
    let mut q = vec![vec![None::<T>; states]; states];
    for l in links {
        if l.from >= states || l.to >= states || l.from == l.to {
            return Err(invalid("chain link endpoints out of range"));
        }
        if l.q.expo() != Some(zero) || !(l.q.coeff() > T::zero()) {
            return Err(invalid("chain transitions must be positive leading terms of exponent 0"));
        }
        q[l.from][l.to] = Some(l.q.coeff());
    }
    let mut lambda = vec![T::zero(); states];
    let mut done = vec![false; states];
    lambda[0] = T::one();
    done[0] = true;
    let mut stack = vec![0usize];
    let mut pairs = 0usize;
    while let Some(s) = stack.pop() {
        for t in 0..states {
            if done[t] {
                continue;
            }
            match (q[s][t], q[t][s]) {
                (Some(st), Some(ts)) => {
                    lambda[t] = lambda[s] * st / ts;
                    done[t] = true;
                    pairs += 1;
                    stack.push(t);
                }
                (None, None) => {}
                _ => return Err(invalid(format!("chain link between {s} and {t} is one-directional"))),
            }
        }
    }
    let undirected = (0..states).flat_map(|s| (s + 1..states).map(move |t| (s, t))).filter(|&(s, t)| q[s][t].is_some() || q[t][s].is_some()).count();
    if pairs + 1 != states || undirected + 1 != states {
        return Err(invalid("chain graph must be a tree"));
    }
    let total = lambda.iter().fold(T::zero(), |a, &b| a + b);
    for l in &mut lambda {
        *l /= total;
    }
    let mut balance = T::zero();
    let mut stat = T::zero();
    for s in 0..states {
        let mut inflow = T::zero();
        let mut outrate = T::zero();
        for t in 0..states {
            if let (Some(st), Some(ts)) = (q[s][t], q[t][s]) {
                let (a, b) = (lambda[s] * st, lambda[t] * ts);
                balance = balance.max((a - b).abs() / a.max(b));
            }
            if let Some(ts) = q[t][s] {
                inflow += lambda[t] * ts;
            }
            if let Some(st) = q[s][t] {
                outrate += st;
            }
        }
        stat = stat.max((inflow - lambda[s] * outrate).abs());
    }
    Ok(ChainStationary { lambda, balance_residual: balance, stationarity_residual: stat })
}

/// Worst residuals met while evaluating clusters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Diagnostics<T> {
    pub balance_residual: T,
    pub stationarity_residual: T,
}

impl<T: Real> Diagnostics<T> {
    fn record(&mut self, c: &ChainStationary<T>) {
        self.balance_residual = self.balance_residual.max(c.balance_residual);
        self.stationarity_residual = self.stationarity_residual.max(c.stationarity_residual);
    }
}

/// Partition of a cluster with its subcluster exit laws and the stationary weights of the jump chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition<T> {
    pub partition: Partition,
    pub stats: Vec<ExitLaw<T>>,
    pub lambda: Vec<T>,
}

pub(crate) fn decompose<T: Real>(tree: &DomainTree<T>, cluster: &Cluster, diag: &mut Diagnostics<T>) -> Result<Decomposition<T>> {
    let partition = partition_cluster(tree, cluster)?;
    let stats = partition
        .subclusters
        .iter()
        .map(|s| exit_stats_with(tree, s, diag))
        .collect::<Result<Vec<_>>>()?;
    let owner = |v: usize| partition.subclusters.iter().position(|s| s.contains(v)).expect("member of some subcluster");
    let mut links = Vec::new();
    for &e in &partition.chain_edges {
        let edge = tree.edge(e);
        for (a, b) in [(edge.u, edge.v), (edge.v, edge.u)] {
            let s = owner(a);
            let x = stats[s]
                .exit_through(e)
                .ok_or_else(|| Error::Internal(format!("subcluster {s} has no exit through chain edge {e}")))?;
            links.push(ChainLink { from: s, to: owner(b), q: x.p });
        }
    }
    let chain = chain_stationary(partition.subclusters.len(), &links).map_err(|e| Error::Internal(format!("jump chain: {e}")))?;
    diag.record(&chain);
    let tol = lit::<T>(BALANCE_TOL);
    if chain.balance_residual > tol || chain.stationarity_residual > tol {
        return Err(Error::Internal(format!(
            "detailed balance residual {} / stationarity residual {} above tolerance",
            chain.balance_residual, chain.stationarity_residual
        )));
    }
    Ok(Decomposition { partition, stats, lambda: chain.lambda })
}

/// Exit statistics of any cluster with a non-empty boundary.
pub fn cluster_exit_stats<T: Real>(tree: &DomainTree<T>, cluster: &Cluster) -> Result<ExitLaw<T>> {
    exit_stats_with(tree, cluster, &mut Diagnostics::default())
}

pub(crate) fn exit_stats_with<T: Real>(tree: &DomainTree<T>, cluster: &Cluster, diag: &mut Diagnostics<T>) -> Result<ExitLaw<T>> {
    let Scale::Finite(gamma) = cluster.scale else {
        return Err(invalid("the whole tree has no exit"));
    };
    let law = if cluster.members.len() == 1 {
        singleton_exit_stats(tree, cluster.members[0])?
    } else {
        let d = decompose(tree, cluster, diag)?;
        let leaving = |x: &Exit<T>| cluster.boundary.contains(&x.edge);
        let denom: PowerLaw<T> = d
            .stats
            .iter()
            .zip(&d.lambda)
            .map(|(s, &l)| s.exits.iter().filter(|x| leaving(x)).map(|x| x.p).sum::<PowerLaw<T>>().scale(l))
            .sum();
        let held: PowerLaw<T> = d.stats.iter().zip(&d.lambda).map(|(s, &l)| s.theta.scale(l)).sum();
        let theta = held.checked_div(denom).ok_or_else(|| Error::Internal("cluster has no exit".into()))?;
        let exits = d
            .stats
            .iter()
            .zip(&d.lambda)
            .flat_map(|(s, &l)| s.exits.iter().filter(|x| leaving(x)).map(move |x| (x, l)))
            .map(|(x, l)| Ok(Exit { p: x.p.scale(l).checked_div(denom).ok_or_else(|| Error::Internal("cluster has no exit".into()))?, ..*x }))
            .collect::<Result<Vec<_>>>()?;
        ExitLaw { theta, exits }
    };
    check_exponents(tree, cluster, gamma, &law)?;
    Ok(law)
}

fn check_exponents<T: Real>(tree: &DomainTree<T>, cluster: &Cluster, gamma: Exponent, law: &ExitLaw<T>) -> Result<()> {
    if law.theta.expo() != Some(gamma) {
        return Err(Error::Internal(format!(
            "cluster {:?}: exit-time exponent {:?} differs from its scale {}",
            cluster.members,
            law.theta.expo(),
            format_exponent(&gamma)
        )));
    }
    let mut leading = T::zero();
    for x in &law.exits {
        let want = gamma - tree.edge(x.edge).gamma;
        if x.p.expo() != Some(want) {
            return Err(Error::Internal(format!("cluster {:?}: exit exponent through edge {} is wrong", cluster.members, x.edge)));
        }
        if want == Exponent::from_integer(0) {
            leading += x.p.coeff();
        }
    }
    if law.exits.len() != cluster.boundary.len() || (leading - T::one()).abs() > lit(BALANCE_TOL) {
        return Err(Error::Internal(format!("cluster {:?}: leading exit probabilities sum to {leading}", cluster.members)));
    }
    Ok(())
}

/// Limiting distribution over all domains for a process started in `cluster` at its own time scale.
pub fn distribute<T: Real>(tree: &DomainTree<T>, cluster: &Cluster) -> Result<Vec<T>> {
    distribute_with(tree, cluster, &mut Diagnostics::default())
}

pub(crate) fn distribute_with<T: Real>(tree: &DomainTree<T>, cluster: &Cluster, diag: &mut Diagnostics<T>) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); tree.len()];
    if cluster.members.len() == 1 {
        out[cluster.members[0]] = T::one();
        return Ok(out);
    }
    let d = decompose(tree, cluster, diag)?;
    let expo = Some(d.partition.gamma_prime);
    if d.stats.iter().any(|s| s.theta.expo() != expo) {
        return Err(Error::Internal(format!("subclusters of {:?} have mismatched exit-time exponents", cluster.members)));
    }
    let w: Vec<T> = d.stats.iter().zip(&d.lambda).map(|(s, &l)| l * s.theta.coeff()).collect();
    let total = w.iter().fold(T::zero(), |a, &b| a + b);
    for (sub, &ws) in d.partition.subclusters.iter().zip(&w) {
        for (o, v) in out.iter_mut().zip(distribute_with(tree, sub, diag)?) {
            *o += ws / total * v;
        }
    }
    Ok(out)
}
