use metastable_core::hierarchy::*;
use metastable_core::rng::path_rng;
use num_rational::Ratio;
use proptest::prelude::*;

fn ex(n: i64) -> Exponent {
    Ratio::from_integer(n)
}

fn doms(cs: &[f64]) -> Vec<Domain<f64>> {
    cs.iter().enumerate().map(|(i, &c)| Domain { id: (i + 1).to_string(), c }).collect()
}

fn edge(u: usize, v: usize, g: &str, rho: f64, c_uv: f64, c_vu: f64) -> SurfaceEdge<f64> {
    SurfaceEdge { u, v, gamma: parse_exponent(g).unwrap(), rho, c_uv, c_vu }
}

fn two_domain() -> DomainTree<f64> {
    DomainTree::new(doms(&[1.0, 1.0]), vec![edge(0, 1, "-1", 1.0, 1.0, 1.0)]).unwrap()
}

fn chain3() -> DomainTree<f64> {
    DomainTree::new(doms(&[1.0, 1.0, 1.0]), vec![edge(0, 1, "-1", 1.0, 1.0, 1.0), edge(1, 2, "-2", 1.0, 1.0, 1.0)]).unwrap()
}

fn members(cs: &[Cluster]) -> Vec<Vec<usize>> {
    cs.iter().map(|c| c.members.clone()).collect()
}

#[test]
fn ladder_single_edge() {
    let t = two_domain();
    let l = scale_ladder(&t, 0).unwrap();
    assert_eq!(members(&l), vec![vec![0], vec![0, 1]]);
    assert_eq!(ladder_values(&l), vec![Scale::zero(), Scale::Finite(ex(-1)), Scale::NegInf]);
}

#[test]
fn ladder_chain_from_both_ends() {
    let t = chain3();
    let l1 = scale_ladder(&t, 0).unwrap();
    assert_eq!(members(&l1), vec![vec![0], vec![0, 1], vec![0, 1, 2]]);
    assert_eq!(ladder_values(&l1), vec![Scale::zero(), Scale::Finite(ex(-1)), Scale::Finite(ex(-2)), Scale::NegInf]);
    let l3 = scale_ladder(&t, 2).unwrap();
    assert_eq!(members(&l3), vec![vec![2], vec![0, 1, 2]]);
    assert_eq!(ladder_values(&l3), vec![Scale::zero(), Scale::Finite(ex(-2)), Scale::NegInf]);
}

/// Brute-force ladder: for every candidate γ among edge values, the component of `i` retaining
/// edges `> γ` is a ladder cluster exactly when γ is its largest boundary value.
fn brute_ladder(t: &DomainTree<f64>, i: usize) -> Vec<Vec<usize>> {
    let mut values: Vec<Exponent> = t.edges().iter().map(|e| e.gamma).collect();
    values.sort();
    values.dedup();
    let mut out = Vec::new();
    for &g in values.iter().rev() {
        let comp = t.component(i, |e| e.gamma > g);
        let c = Cluster::of(t, comp.clone()).unwrap();
        if c.scale == Scale::Finite(g) && out.last() != Some(&comp) {
            out.push(comp);
        }
    }
    out.push((0..t.len()).collect());
    out
}

#[test]
fn ladder_matches_definition_on_random_trees() {
    let palette: Vec<Exponent> = ["-0.5", "-1", "-1.5", "-2", "-3"].iter().map(|s| parse_exponent(s).unwrap()).collect();
    for s in 0..100 {
        let t: DomainTree<f64> = random_tree(2 + s % 7, &palette, &mut path_rng(11, s as u64)).unwrap();
        for i in 0..t.len() {
            assert_eq!(members(&scale_ladder(&t, i).unwrap()), brute_ladder(&t, i), "tree {s} start {i}");
        }
    }
}

#[test]
fn singleton_leaf() {
    let t = two_domain();
    let s = singleton_exit_stats(&t, 0).unwrap();
    assert_eq!(s.theta, PowerLaw::new(1.0, ex(-1)).unwrap());
    assert_eq!(s.exits[0].p, PowerLaw::new(1.0, ex(0)).unwrap());
}

#[test]
fn singleton_star_center() {
    let t = DomainTree::new(
        doms(&[3.0, 1.0, 1.0, 1.0]),
        vec![edge(0, 1, "-1", 2.0, 1.0, 1.0), edge(0, 2, "-1", 1.0, 1.0, 1.0), edge(0, 3, "-2", 1.0, 5.0, 1.0)],
    )
    .unwrap();
    let s = singleton_exit_stats(&t, 0).unwrap();
    assert_eq!(s.theta.expo(), Some(ex(-1)));
    assert!((s.theta.coeff() - 1.0).abs() < 1e-15);
    let p: Vec<_> = s.exits.iter().map(|x| (x.p.coeff(), x.p.expo().unwrap())).collect();
    assert!((p[0].0 - 2.0 / 3.0).abs() < 1e-15 && p[0].1 == ex(0));
    assert!((p[1].0 - 1.0 / 3.0).abs() < 1e-15 && p[1].1 == ex(0));
    assert!((p[2].0 - 5.0 / 3.0).abs() < 1e-15 && p[2].1 == ex(1));
}

#[test]
fn partitions() {
    let t = two_domain();
    let p = partition_cluster(&t, &Cluster::whole(&t)).unwrap();
    assert_eq!(members(&p.subclusters), vec![vec![0], vec![1]]);
    assert_eq!(p.chain_edges, vec![0]);
    let c = chain3();
    let p = partition_cluster(&c, &Cluster::whole(&c)).unwrap();
    assert_eq!(members(&p.subclusters), vec![vec![0, 1], vec![2]]);
    assert_eq!(p.chain_edges, vec![1]);
    let star = DomainTree::new(doms(&[1.0; 4]), (1..4).map(|v| edge(0, v, "-1", 1.0, 1.0, 1.0)).collect()).unwrap();
    let p = partition_cluster(&star, &Cluster::whole(&star)).unwrap();
    assert_eq!(p.subclusters.len(), 4);
    assert_eq!(p.chain_edges.len(), 3);
    assert!(partition_cluster(&c, &Cluster::singleton(&c, 0).unwrap()).is_err());
}

fn link(from: usize, to: usize, q: f64) -> ChainLink<f64> {
    ChainLink { from, to, q: PowerLaw::new(q, ex(0)).unwrap() }
}

#[test]
fn chain_stationary_examples() {
    let s = chain_stationary(2, &[link(0, 1, 1.0), link(1, 0, 1.0)]).unwrap();
    assert_eq!(s.lambda, vec![0.5, 0.5]);
    let q = [0.2, 0.3, 0.5];
    let mut links = Vec::new();
    for (k, &qk) in q.iter().enumerate() {
        links.push(link(0, k + 1, qk));
        links.push(link(k + 1, 0, 1.0));
    }
    let s = chain_stationary(4, &links).unwrap();
    let z = 1.0 + q.iter().sum::<f64>();
    for (k, &qk) in q.iter().enumerate() {
        assert!((s.lambda[k + 1] - qk / z).abs() < 1e-15);
    }
    assert!(s.balance_residual < BALANCE_TOL && s.stationarity_residual < BALANCE_TOL);
    assert!(chain_stationary(2, &[link(0, 1, 1.0)]).is_err());
    assert!(chain_stationary(2, &[ChainLink { from: 0, to: 1, q: PowerLaw::new(1.0, ex(1)).unwrap() }, link(1, 0, 1.0)]).is_err());
}

#[test]
fn chain_stationary_matches_dense_eigenvector() {
    let s = chain_stationary(3, &[link(0, 1, 1.0), link(1, 0, 0.7), link(1, 2, 0.3), link(2, 1, 1.0)]).unwrap();
    let p = nalgebra::DMatrix::<f64>::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.7, 0.0, 0.3, 0.0, 1.0, 0.0]);
    let eig = p.transpose().complex_eigenvalues();
    let (k, _) = eig.iter().enumerate().min_by(|a, b| (a.1 - 1.0).norm().partial_cmp(&(b.1 - 1.0).norm()).unwrap()).unwrap();
    // Null vector of Pᵀ − I by solving with the last equation replaced by normalization.
    let mut a = p.transpose() - nalgebra::DMatrix::identity(3, 3);
    for j in 0..3 {
        a[(2, j)] = 1.0;
    }
    let x = a.lu().solve(&nalgebra::DVector::from_row_slice(&[0.0, 0.0, 1.0])).unwrap();
    assert!((eig[k].re - 1.0).abs() < 1e-12);
    for j in 0..3 {
        assert!((s.lambda[j] - x[j]).abs() < 1e-12, "{:?} vs {x}", s.lambda);
    }
}

#[test]
fn cluster_of_worked_chain() {
    let t = chain3();
    let c = Cluster::of(&t, vec![0, 1]).unwrap();
    assert_eq!(c.scale, Scale::Finite(ex(-2)));
    let s = cluster_exit_stats(&t, &c).unwrap();
    assert_eq!(s.theta.expo(), Some(ex(-2)));
    assert!((s.theta.coeff() - 2.0).abs() < 1e-14);
    assert_eq!(s.exits.len(), 1);
    assert_eq!((s.exits[0].to, s.exits[0].p.expo()), (2, Some(ex(0))));
    assert!((s.exits[0].p.coeff() - 1.0).abs() < 1e-14);
    assert!(cluster_exit_stats(&t, &Cluster::whole(&t)).is_err());
}

#[test]
fn doubling_rho_halves_theta() {
    let palette: Vec<Exponent> = ["-0.5", "-1", "-2"].iter().map(|s| parse_exponent(s).unwrap()).collect();
    for s in 0..30 {
        let t: DomainTree<f64> = random_tree(5, &palette, &mut path_rng(3, s)).unwrap();
        let t2 = t.scale_rho(&vec![2.0; t.edges().len()]);
        for i in 0..t.len() {
            for c in scale_ladder(&t, i).unwrap().iter().filter(|c| c.scale != Scale::NegInf) {
                let (a, b) = (cluster_exit_stats(&t, c).unwrap(), cluster_exit_stats(&t2, c).unwrap());
                assert!((b.theta.coeff() * 2.0 / a.theta.coeff() - 1.0).abs() < 1e-12);
                for (x, y) in a.exits.iter().zip(&b.exits) {
                    if x.p.expo() == Some(ex(0)) {
                        assert!((x.p.coeff() - y.p.coeff()).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn distribute_examples() {
    let t = two_domain();
    assert_eq!(distribute(&t, &Cluster::whole(&t)).unwrap(), vec![0.5, 0.5]);
    let t = DomainTree::new(doms(&[2.0, 1.0]), vec![edge(0, 1, "-1", 1.0, 1.0, 1.0)]).unwrap();
    let d = distribute(&t, &Cluster::whole(&t)).unwrap();
    assert!((d[0] - 2.0 / 3.0).abs() < 1e-15 && (d[1] - 1.0 / 3.0).abs() < 1e-15);
    let d = distribute(&chain3(), &Cluster::whole(&chain3())).unwrap();
    for x in d {
        assert!((x - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn profiles() {
    let p = metastable_profile(&two_domain(), 0).unwrap();
    assert_eq!(p.windows.len(), 2);
    assert_eq!(p.windows[0].c, vec![1.0, 0.0]);
    assert_eq!(p.windows[1].c, vec![0.5, 0.5]);
    let t = chain3();
    let p3 = metastable_profile(&t, 2).unwrap();
    assert_eq!(p3.windows.len(), 2);
    assert_eq!(p3.windows[0].c, vec![0.0, 0.0, 1.0]);
    let p1 = metastable_profile(&t, 0).unwrap();
    let p2 = metastable_profile(&t, 1).unwrap();
    assert_eq!(p1.windows[1].c, vec![0.5, 0.5, 0.0]);
    for (a, b) in p1.windows.last().unwrap().c.iter().zip(&p2.windows.last().unwrap().c) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn window_lookup() {
    let l = vec![Scale::zero(), Scale::Finite(ex(-1)), Scale::NegInf];
    assert_eq!(window_index(Ratio::new(-1, 2), &l).unwrap(), 1);
    let l = vec![Scale::zero(), Scale::Finite(ex(-1)), Scale::Finite(ex(-2)), Scale::NegInf];
    assert_eq!(window_index(Ratio::new(-3, 2), &l).unwrap(), 2);
    assert_eq!(window_index(ex(-7), &l).unwrap(), 3);
    let err = window_index(ex(-1), &l).unwrap_err();
    assert!(err.to_string().contains("critical time scale"));
    assert!(window_index(ex(0), &l).is_err());
    assert!(window_index(ex(1), &l).is_err());
}

#[test]
fn rho_invariance_and_sensitivity() {
    let t = two_domain();
    assert_eq!(rho_invariance_check(&t, 20, 1).unwrap(), 0.0);
    assert!(rho_invariance_check(&chain3(), 100, 2).unwrap() < 1e-12);
    assert!(c_sensitivity(&chain3()).unwrap() > 1e-3);
}

#[test]
fn decimal_ties_are_exact() {
    let t = DomainTree::new(doms(&[1.0, 1.0, 1.0]), vec![edge(0, 1, "-1.0", 1.0, 1.0, 1.0), edge(1, 2, "-1", 1.0, 1.0, 1.0)]).unwrap();
    let p = partition_cluster(&t, &Cluster::whole(&t)).unwrap();
    assert_eq!(p.subclusters.len(), 3);
}

fn palette() -> Vec<Exponent> {
    ["-0.5", "-1", "-1.5", "-2", "-3"].iter().map(|s| parse_exponent(s).unwrap()).collect()
}

fn arb_powerlaw() -> impl Strategy<Value = PowerLaw<f64>> {
    prop_oneof![
        1 => Just(PowerLaw::zero()),
        6 => (1i64..64, -8i64..8, 1i64..5).prop_map(|(c, n, d)| PowerLaw::new(c as f64 / 8.0, Ratio::new(n, d)).unwrap()),
    ]
}

proptest! {
    #[test]
    fn powerlaw_mul_laws(a in arb_powerlaw(), b in arb_powerlaw(), c in arb_powerlaw()) {
        prop_assert_eq!(a * b, b * a);
        let (l, r) = ((a * b) * c, a * (b * c));
        prop_assert_eq!(l.expo(), r.expo());
        prop_assert!((l.coeff() - r.coeff()).abs() <= 1e-12 * l.coeff().abs().max(1.0));
    }

    #[test]
    fn powerlaw_add_dominates(a in arb_powerlaw(), b in arb_powerlaw()) {
        let s = a + b;
        prop_assert_eq!(s, b + a);
        match (a.expo(), b.expo()) {
            (Some(x), Some(y)) => {
                prop_assert_eq!(s.expo(), Some(x.min(y)));
                if x == y { prop_assert_eq!(s.coeff(), a.coeff() + b.coeff()); }
            }
            (None, _) => prop_assert_eq!(s, b),
            (_, None) => prop_assert_eq!(s, a),
        }
    }

    #[test]
    fn random_trees_pass_audit(n in 1usize..=8, seed in any::<u64>()) {
        let t: DomainTree<f64> = random_tree(n, &palette(), &mut path_rng(seed, 0)).unwrap();
        let a = audit(&t).unwrap();
        prop_assert!(a.passed(1e-12), "{:?}", a);
    }

    #[test]
    fn random_trees_are_rho_invariant(n in 2usize..=6, seed in any::<u64>()) {
        let t: DomainTree<f64> = random_tree(n, &palette(), &mut path_rng(seed, 1)).unwrap();
        prop_assert!(rho_invariance_check(&t, 5, seed).unwrap() < 1e-12);
    }
}
