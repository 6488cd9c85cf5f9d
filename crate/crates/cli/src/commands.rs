//! One function per subcommand; each returns a [`Report`] and never touches the filesystem
//! except to read its inputs.

use metastable_core::config::{load_game, load_model, load_tree, LoadedModel};
use metastable_core::exponents::{periodic_interp, solve_gamma, SearchBounds, SolveOptions};
use metastable_core::game::{same_time_law, verify_limits};
use metastable_core::hierarchy::{format_exponent, metastable_profile, parse_exponent, scale_ladder, audit, window_index, Exponent};
use metastable_core::integrate::{Side, Sim1D, Sim2D, StopSet, StopTarget};
use metastable_core::model::{digest, Model};
use metastable_core::montecarlo::{
    decision_time_regression, estimate_exit_stats, estimate_surface_exit_split, estimate_surface_hit, estimate_surface_hit_eps,
    estimate_transition, fit_edge_constants, fit_gamma_from_transitions, mean_ratio, occupation_histogram, transition_bracket,
    EdgeFitSpec, Layered, McOptions, OccupationSpec, SurfaceBand, SurfaceHitResult,
};
use metastable_core::rng::derive_seed;
use metastable_core::semimarkov::{evaluate_skeleton, simulate_skeleton};
use metastable_core::{Error, Gamma, Perturbation, Tree};
use serde_json::json;

use crate::error::CliError;
use crate::report::{num, Report, Table};
use crate::{
    DensityArgs, ExitSplitArgs, ExitStatsArgs, FitConstantsArgs, GameArgs, GammaArgs, HierarchyArgs, ModelArgs, SemimarkovArgs,
    SurfaceHitArgs, TransitionArgs, UntilArg,
};

type Result<T> = std::result::Result<T, CliError>;

/// A model file with its exponent solved up front for 2-D models.
pub struct Loaded {
    pub file: LoadedModel<f64>,
    pub solution: Option<Gamma>,
    pub digest: String,
}

impl Loaded {
    pub fn from_model(mut file: LoadedModel<f64>, grid: Option<usize>) -> Result<Self> {
        if let (Some(n), Model::NormalForm2d(m)) = (grid, &file.model) {
            file.model = Model::NormalForm2d(m.with_grid(n)?);
        }
        let solution = match &file.model {
            Model::NormalForm2d(m) => Some(solve_gamma(m, SearchBounds::default(), SolveOptions::default())?),
            Model::OneD(_) => None,
        };
        let digest = file.digest()?;
        Ok(Self { file, solution, digest })
    }

    pub fn open(a: &ModelArgs) -> Result<Self> {
        Self::from_model(load_model(&a.config)?, a.grid)
    }

    /// The configured perturbation with its ε replaced.
    pub fn perturbation_at(&self, eps: f64) -> Result<Perturbation> {
        Ok(match &self.file.perturbation {
            Some(p) => p.with_epsilon(eps)?,
            None => Perturbation::new(eps, 1.0, 0.0)?,
        })
    }

    /// `--eps` values, or the model's own ε.
    pub fn eps_list(&self, eps: &[f64]) -> Result<Vec<f64>> {
        if !eps.is_empty() {
            return Ok(eps.to_vec());
        }
        self.file
            .perturbation
            .map(|p| vec![p.epsilon])
            .ok_or_else(|| CliError::Usage("the model has no perturbation; pass --eps".into()))
    }
}

/// Binds `$d` to the simulator of `$loaded` and evaluates `$body` for either model kind.
macro_rules! with_dynamics {
    ($loaded:expr, $pert:expr, |$d:ident| $body:expr) => {
        match &$loaded.file.model {
            Model::OneD(m) => {
                let $d = &Sim1D::new(m, $pert);
                $body
            }
            Model::NormalForm2d(m) => {
                let sol = $loaded.solution.as_ref().expect("2-D models are solved on load");
                let $d = &Sim2D::new(m, sol, $pert);
                $body
            }
        }
    };
}
pub(crate) use with_dynamics;

fn opts(paths: usize, seed: u64, theta: f64) -> McOptions<f64> {
    McOptions::new(paths, seed).with_theta(theta)
}

pub fn gamma(a: &GammaArgs) -> Result<Report> {
    let l = Loaded::open(&a.model)?;
    match (&l.file.model, &l.solution) {
        (Model::NormalForm2d(m), Some(s)) => {
            let summary = json!({
                "gamma": s.gamma,
                "avg_alpha": s.avg_alpha,
                "avg_beta": s.avg_beta,
                "residuals": [s.residuals.0, s.residuals.1],
                "N_y": s.grid_size,
                "phi_min": s.phi_min(),
                "phi_max": s.phi_max(),
            });
            let mut r = Report::new("gamma", l.digest.clone(), &summary)?;
            let mut t = Table::new("gamma", &["y", "phi", "psi", "pi"]);
            for (j, y) in m.grid().into_iter().enumerate() {
                t.push(vec![num(y), num(s.phi[j]), num(s.psi[j]), num(s.pi[j])]);
            }
            r.tables.push(t);
            Ok(r)
        }
        (Model::OneD(m), _) => {
            let mut t = Table::new("gamma", &["surface", "position", "alpha", "beta", "gamma"]);
            let mut rows = Vec::new();
            for (k, s) in m.surfaces().iter().enumerate() {
                let g = m.gamma(k)?;
                rows.push(json!({"surface": k, "position": s.position, "alpha": s.local.alpha, "beta": s.local.beta, "gamma": g}));
                t.push(vec![k.to_string(), num(s.position), num(s.local.alpha), num(s.local.beta), num(g)]);
            }
            let mut r = Report::new("gamma", l.digest.clone(), &json!({ "surfaces": rows }))?;
            r.tables.push(t);
            Ok(r)
        }
        _ => Err(CliError::Internal("2-D model without a solved exponent".into())),
    }
}

pub fn transition(a: &TransitionArgs, seed: u64) -> Result<Report> {
    let l = Loaded::open(&a.model)?;
    let pert = a.eps.map(|e| l.perturbation_at(e)).transpose()?;
    let side: Side = a.side.into();
    let o = opts(a.paths, seed, a.theta);
    let (gamma, points) = with_dynamics!(l, pert, |d| {
        let points = a
            .zeta
            .iter()
            .enumerate()
            .map(|(j, &z)| estimate_transition(d, a.surface, side, z, a.kappa1, a.kappa2, &o.with_seed(derive_seed(seed, j as u64))))
            .collect::<std::result::Result<Vec<_>, Error>>()?;
        (d.gamma(a.surface)?, points)
    });
    let mut t = Table::new("transition", &["zeta", "estimate", "ci_low", "ci_high", "formula_value"]);
    let mut brackets = Vec::new();
    for p in &points {
        t.push(vec![num(p.zeta), num(p.estimate.point), num(p.estimate.ci_low), num(p.estimate.ci_high), num(p.formula)]);
        let (lo, hi) = transition_bracket(p.zeta, a.kappa1, a.kappa2, gamma, a.eta)?;
        brackets.push(json!({"zeta": p.zeta, "low": lo, "high": hi, "inside": lo <= p.estimate.point && p.estimate.point <= hi}));
    }
    let fit = if a.fit_gamma {
        let (lo, hi) = if gamma < 0.0 { (-20.0, -1e-3) } else { (1e-3, 20.0) };
        Some(fit_gamma_from_transitions(&points, lo, hi)?)
    } else {
        None
    };
    let flagged = points.iter().any(|p| p.estimate.flagged);
    let summary = json!({
        "gamma": gamma,
        "surface": a.surface,
        "kappa1": a.kappa1,
        "kappa2": a.kappa2,
        "epsilon": a.eps,
        "theta": a.theta,
        "eta": a.eta,
        "points": points,
        "brackets": brackets,
        "gamma_fit": fit,
        "flagged": flagged,
    });
    let mut r = Report::new("transition", l.digest.clone(), &summary)?;
    r.tables.push(t);
    r.flagged = flagged;
    Ok(r)
}

pub fn surface_hit(a: &SurfaceHitArgs, seed: u64) -> Result<Report> {
    let l = Loaded::open(&a.model)?;
    let eps = l.eps_list(&a.eps)?;
    let side: Side = a.side.into();
    let o = opts(a.paths, seed, a.theta);
    let band = SurfaceBand::default();
    let (sweep, result): (&str, SurfaceHitResult<f64>) = if eps.len() == 1 {
        let p = l.perturbation_at(eps[0])?;
        ("zeta", with_dynamics!(l, Some(p), |d| estimate_surface_hit(d, a.surface, side, &a.zeta, a.kappa, band, &o)?))
    } else {
        if a.zeta.len() != 1 {
            return Err(CliError::Usage("an ε sweep needs exactly one --zeta".into()));
        }
        let z = a.zeta[0];
        let r = match &l.file.model {
            Model::OneD(m) => {
                estimate_surface_hit_eps(|e| Ok(Sim1D::new(m, Some(l.perturbation_at(e).map_err(core)?))), &eps, a.surface, side, z, a.kappa, band, &o)?
            }
            Model::NormalForm2d(m) => {
                let sol = l.solution.as_ref().expect("2-D models are solved on load");
                estimate_surface_hit_eps(|e| Ok(Sim2D::new(m, sol, Some(l.perturbation_at(e).map_err(core)?))), &eps, a.surface, side, z, a.kappa, band, &o)?
            }
        };
        ("epsilon", r)
    };
    let mut t = Table::new("surface_hit", &["zeta", "epsilon", "estimate", "ci_low", "ci_high", "rho_hat", "successes"]);
    for p in &result.points {
        t.push(vec![
            num(p.zeta),
            num(p.epsilon),
            num(p.estimate.point),
            num(p.estimate.ci_low),
            num(p.estimate.ci_high),
            num(p.rho_hat.point),
            p.successes.to_string(),
        ]);
    }
    let gamma = with_dynamics!(l, None, |d| d.gamma(a.surface)?);
    let slope_ci = result.fit.as_ref().map(|f| f.slope_ci());
    let flagged = result.fit.as_ref().is_none_or(|f| !f.meets_support_rule()) || result.points.iter().any(|p| p.estimate.flagged);
    let expected = if sweep == "zeta" { gamma } else { -gamma };
    let summary = json!({
        "sweep": sweep,
        "gamma": gamma,
        "expected_slope": expected,
        "fit": result.fit,
        "slope_ci": slope_ci,
        "points": result.points,
        "warnings": result.warnings,
        "flagged": flagged,
    });
    let mut r = Report::new("surface-hit", l.digest.clone(), &summary)?;
    r.tables.push(t);
    r.flagged = flagged;
    Ok(r)
}

fn core(e: CliError) -> Error {
    match e {
        CliError::Core(e) => e,
        other => Error::InvalidInput(other.to_string()),
    }
}

pub fn density(a: &DensityArgs, seed: u64) -> Result<Report> {
    let l = Loaded::open(&a.model)?;
    let spec = OccupationSpec {
        surface: a.surface,
        side: a.side.into(),
        z_lo: a.z_lo,
        kappa: a.kappa,
        bins: a.bins,
        t_total: a.t_total,
        burn_in: a.burn_in,
        chains: a.chains,
        surface_bins: a.surface_bins,
    };
    let o = opts(1, seed, a.theta);
    // Near-surface marginal in layer coordinates: ψ·π per unit y, times φ from the change to
    // the scaled distance.
    let weight = l.solution.as_ref().map(|s| move |y: f64| s.psi_at(y) * periodic_interp(&s.pi, y) * s.phi_at(y));
    let (gamma, res) = with_dynamics!(l, None, |d| {
        let w = weight.as_ref().map(|f| f as &dyn Fn(f64) -> f64);
        (d.gamma(a.surface)?, occupation_histogram(d, &spec, &o, w)?)
    });
    let mut t = Table::new("density", &["z_left", "z_right", "density"]);
    for (b, &dens) in res.density.iter().enumerate() {
        t.push(vec![num(res.edges[b]), num(res.edges[b + 1]), num(dens)]);
    }
    let mut r = Report::new(
        "density",
        l.digest.clone(),
        &json!({
            "gamma": gamma,
            "expected_slope": -gamma - 1.0,
            "fit": res.fit,
            "slope_ci": res.fit.slope_ci(),
            "excursions": res.excursions,
            "burn_in": res.burn_in,
            "elapsed": res.elapsed,
            "outside": res.outside,
            "masses": res.masses,
            "surface_cosine": res.surface_cosine,
            "flagged": res.flagged,
        }),
    )?;
    r.tables.push(t);
    if let (Some(marg), Some(w)) = (&res.surface_marginal, &weight) {
        let n = marg.len();
        let total: f64 = marg.iter().sum();
        let refs: Vec<f64> = (0..n).map(|j| w((j as f64 + 0.5) / n as f64)).collect();
        let rtotal: f64 = refs.iter().sum();
        let mut m = Table::new("surface_marginal", &["y", "occupation", "reference"]);
        for j in 0..n {
            m.push(vec![num((j as f64 + 0.5) / n as f64), num(marg[j] / total), num(refs[j] / rtotal)]);
        }
        r.tables.push(m);
    }
    r.flagged = res.flagged;
    Ok(r)
}

pub fn exit_stats(a: &ExitStatsArgs, seed: u64) -> Result<Report> {
    let l = Loaded::open(&a.model)?;
    let Model::OneD(m) = &l.file.model else {
        return Err(CliError::Core(Error::InvalidInput("exit-stats needs a one_d model".into())));
    };
    let i = a.start_domain;
    if i >= m.num_domains() {
        return Err(CliError::Core(Error::InvalidInput(format!("start domain {i} out of range (model has {})", m.num_domains()))));
    }
    let ns = m.surfaces().len();
    let (targets, labels): (Vec<StopTarget<f64>>, Vec<String>) = match a.until {
        UntilArg::Surfaces => [i.checked_sub(1), (i < ns).then_some(i)]
            .into_iter()
            .flatten()
            .map(|s| (StopTarget::Surface(s), format!("surface:{s}")))
            .unzip(),
        UntilArg::Compacts => [i.checked_sub(1), (i + 1 < m.num_domains()).then_some(i + 1)]
            .into_iter()
            .flatten()
            .map(|j| (StopTarget::Compact { domain: j, kappa0: a.kappa0 }, format!("domain:{j}")))
            .unzip(),
    };
    let mut stop = StopSet::new(targets);
    if let Some(b) = a.budget {
        stop = stop.with_budget(b);
    }
    let center = m.domain_center(i)?;
    let mut t = Table::new("exit_stats", &["epsilon", "target", "split", "count", "mean", "second_moment", "ratio", "ks"]);
    let mut runs = Vec::new();
    let mut flagged = false;
    for (k, &eps) in l.eps_list(&a.eps)?.iter().enumerate() {
        let sim = Sim1D::new(m, Some(l.perturbation_at(eps)?));
        let st = estimate_exit_stats(&sim, |_| center, &stop, &opts(a.paths, derive_seed(seed, k as u64), a.theta), &sim.digest())?;
        flagged |= st.mean.flagged;
        t.push(vec![num(eps), "all".into(), "1".into(), st.mean.n_samples.saturating_sub(st.mean.n_timeouts).to_string(), num(st.mean.point), num(st.second_moment.point), num(st.ratio), num(st.ks_to_exponential)]);
        for ts in &st.per_target {
            let opt = |v: &Option<f64>| v.map(num).unwrap_or_default();
            t.push(vec![
                num(eps),
                labels[ts.target].clone(),
                num(ts.split.point),
                ts.count.to_string(),
                opt(&ts.mean.as_ref().map(|m| m.point)),
                opt(&ts.second_moment.as_ref().map(|m| m.point)),
                opt(&ts.ratio),
                opt(&ts.ks_to_exponential),
            ]);
        }
        runs.push((eps, st));
    }
    let ratios: Vec<_> = runs
        .windows(2)
        .map(|w| {
            let (r, se) = mean_ratio(&w[1].1.mean, &w[0].1.mean);
            json!({"epsilon_from": w[0].0, "epsilon_to": w[1].0, "mean_ratio": r, "stderr": se})
        })
        .collect();
    let summary = json!({
        "start_domain": i,
        "targets": labels,
        "runs": runs.iter().map(|(e, s)| json!({"epsilon": e, "stats": s})).collect::<Vec<_>>(),
        "mean_ratios": ratios,
        "flagged": flagged,
    });
    let mut r = Report::new("exit-stats", l.digest.clone(), &summary)?;
    r.tables.push(t);
    r.flagged = flagged;
    Ok(r)
}

pub fn exit_split(a: &ExitSplitArgs, seed: u64) -> Result<Report> {
    let l = Loaded::open(&a.model)?;
    let mut splits = Vec::new();
    for (k, &eps) in l.eps_list(&a.eps)?.iter().enumerate() {
        let p = l.perturbation_at(eps)?;
        let o = opts(a.paths, derive_seed(seed, k as u64), a.theta);
        splits.push(with_dynamics!(l, Some(p), |d| estimate_surface_exit_split(d, a.surface, a.kappa0, &o)?));
    }
    let mut t = Table::new("exit_split", &["epsilon", "split", "ci_low", "ci_high", "decision_time", "decision_ci_low", "decision_ci_high"]);
    for s in &splits {
        t.push(vec![
            num(s.epsilon),
            num(s.split.point),
            num(s.split.ci_low),
            num(s.split.ci_high),
            num(s.decision_time.point),
            num(s.decision_time.ci_low),
            num(s.decision_time.ci_high),
        ]);
    }
    let regression = if splits.len() >= 2 { Some(decision_time_regression(&splits)?) } else { None };
    let flagged = splits.iter().any(|s| s.split.flagged || s.decision_time.flagged);
    let mut r = Report::new("exit-split", l.digest.clone(), &json!({"splits": splits, "decision_regression": regression, "flagged": flagged}))?;
    r.tables.push(t);
    r.flagged = flagged;
    Ok(r)
}

pub fn fit_constants(a: &FitConstantsArgs, seed: u64) -> Result<Report> {
    let l = Loaded::open(&a.model)?;
    let Model::OneD(m) = &l.file.model else {
        return Err(CliError::Core(Error::InvalidInput("fit-constants needs a one_d model".into())));
    };
    let perts = l.eps_list(&a.eps)?.iter().map(|&e| l.perturbation_at(e)).collect::<Result<Vec<_>>>()?;
    let spec = EdgeFitSpec { kappa: a.kappa, zeta_over_eps: a.zeta_over_eps, rho_paths: a.rho_paths };
    let fit = fit_edge_constants(m, &perts, &spec, &opts(a.paths, seed, a.theta))?;
    let mut domains = Table::new("domains", &["epsilon", "domain", "theta_hat", "ci_low", "ci_high", "flagged"]);
    for d in &fit.domains {
        domains.push(vec![num(d.epsilon), d.domain.to_string(), num(d.theta_hat.point), num(d.theta_hat.ci_low), num(d.theta_hat.ci_high), d.theta_hat.flagged.to_string()]);
    }
    let mut edges = Table::new("edges", &["domain", "surface", "gamma_hat", "flagged"]);
    for e in &fit.edges {
        edges.push(vec![e.domain.to_string(), e.surface.to_string(), e.gamma_hat.map(num).unwrap_or_default(), e.flagged.to_string()]);
    }
    let mut rho = Table::new("rho", &["surface", "rho_minus", "rho_plus", "ratio", "ratio_ci_low", "ratio_ci_high"]);
    for x in &fit.rho {
        rho.push(vec![x.surface.to_string(), num(x.rho_minus.point), num(x.rho_plus.point), num(x.ratio), num(x.ratio_ci.0), num(x.ratio_ci.1)]);
    }
    let flagged = fit.edges.iter().any(|e| e.flagged) || fit.domains.iter().any(|d| d.theta_hat.flagged);
    let mut r = Report::new("fit-constants", l.digest.clone(), &json!({"constants": fit, "flagged": flagged}))?;
    r.tables.extend([domains, edges, rho]);
    r.flagged = flagged;
    Ok(r)
}

pub fn game(a: &GameArgs, seed: u64) -> Result<Report> {
    let family = load_game(&a.config)?;
    let mut eps = if a.eps.is_empty() { family.epsilons.clone() } else { a.eps.clone() };
    if eps.is_empty() {
        return Err(CliError::Usage("no ε values: pass --eps or list `epsilons` in the game file".into()));
    }
    eps.sort_by(|x, y| y.total_cmp(x));
    eps.dedup();
    let configs = eps.iter().map(|&e| family.config_at::<f64>(e)).collect::<std::result::Result<Vec<_>, Error>>()?;
    let report = verify_limits(&configs, a.paths, seed)?;
    let mut t = Table::new("game", &["epsilon", "type", "mean_ratio", "ks", "n_wins"]);
    for c in &report.cells {
        t.push(vec![num(c.epsilon), c.prize.to_string(), num(c.mean_ratio), num(c.ks), c.n_wins.to_string()]);
    }
    let shared: Vec<_> = eps
        .iter()
        .map(|&e| {
            let cells: Vec<_> = report.cells_at(e).collect();
            let ok = cells.iter().all(|a| cells.iter().all(|b| same_time_law(a, b)));
            json!({"epsilon": e, "same_time_law": ok})
        })
        .collect();
    let flagged = report.cells.iter().any(|c| c.flagged);
    let mut r = Report::new("game", digest(&family)?, &json!({"report": report, "shared_time_law": shared, "flagged": flagged}))?;
    r.tables.push(t);
    r.flagged = flagged;
    Ok(r)
}

fn start_indices(tree: &Tree, start: &Option<String>) -> Result<Vec<usize>> {
    match start {
        None => Ok((0..tree.len()).collect()),
        Some(id) => tree
            .index_of(id)
            .map(|i| vec![i])
            .ok_or_else(|| CliError::Core(Error::InvalidInput(format!("unknown start domain {id:?}")))),
    }
}

pub fn hierarchy(a: &HierarchyArgs) -> Result<Report> {
    let loaded = load_tree::<f64>(&a.tree)?;
    let tree = &loaded.tree;
    let ids: Vec<String> = tree.domains().iter().map(|d| d.id.clone()).collect();
    let mut ladder_t = Table::new("ladder", &["start", "level", "gamma", "cluster_size"]);
    let mut headers: Vec<String> = ["start", "window", "gamma_lo", "gamma_hi"].iter().map(|s| s.to_string()).collect();
    headers.extend(ids.iter().cloned());
    let mut profile_t = Table::with_headers("profile", headers);
    let mut profiles = Vec::new();
    for i in start_indices(tree, &a.start)? {
        let p = metastable_profile(tree, i)?;
        let clusters = scale_ladder(tree, i)?;
        for (lvl, (g, c)) in p.ladder.iter().zip(clusters.iter().map(Some).chain(std::iter::once(None))).enumerate() {
            ladder_t.push(vec![ids[i].clone(), lvl.to_string(), g.to_string(), c.map(|c| c.members.len().to_string()).unwrap_or_default()]);
        }
        for w in &p.windows {
            let mut row = vec![ids[i].clone(), w.n.to_string(), w.lower.to_string(), w.upper.to_string()];
            row.extend(w.c.iter().map(|&c| num(c)));
            profile_t.push(row);
        }
        profiles.push(json!({"start": ids[i], "profile": p}));
    }
    let audit = audit(tree)?;
    let mut r = Report::new("hierarchy", loaded.digest.clone(), &json!({"domains": ids, "profiles": profiles, "audit": audit}))?;
    r.tables.extend([ladder_t, profile_t]);
    Ok(r)
}

fn exponent_value(e: &Exponent) -> f64 {
    *e.numer() as f64 / *e.denom() as f64
}

pub fn semimarkov(a: &SemimarkovArgs, seed: u64) -> Result<Report> {
    let loaded = load_tree::<f64>(&a.tree)?;
    let tree = &loaded.tree;
    let ids: Vec<String> = tree.domains().iter().map(|d| d.id.clone()).collect();
    let law = evaluate_skeleton(tree, a.eps)?;
    let taus = a.tau.iter().map(|s| parse_exponent(s)).collect::<std::result::Result<Vec<_>, Error>>()?;
    let mut t = Table::new("semimarkov", &["domain", "frequency", "ci_low", "ci_high", "hierarchy", "start", "window", "tau"]);
    let mut runs = Vec::new();
    let mut worst = 0.0f64;
    let mut k = 0u64;
    for i in start_indices(tree, &a.start)? {
        let p = metastable_profile(tree, i)?;
        let points: Vec<(usize, Exponent)> = if taus.is_empty() {
            p.windows.iter().map(|w| (w.n, w.mid_exponent())).collect()
        } else {
            taus.iter().map(|&tau| Ok((window_index(tau, &p.ladder)?, tau))).collect::<std::result::Result<Vec<_>, Error>>()?
        };
        for (n, tau) in points {
            let reference = &p.windows[n - 1].c;
            let horizon = a.eps.powf(exponent_value(&tau));
            let run = simulate_skeleton(&law, i, horizon, a.paths, derive_seed(seed, k), a.holding.into())?;
            k += 1;
            let dev = run.max_deviation(reference);
            worst = worst.max(dev);
            for f in &run.distribution {
                t.push(vec![
                    ids[f.domain].clone(),
                    num(f.frequency),
                    num(f.ci_low),
                    num(f.ci_high),
                    num(reference[f.domain]),
                    ids[i].clone(),
                    n.to_string(),
                    format_exponent(&tau),
                ]);
            }
            runs.push(json!({
                "start": ids[i],
                "window": n,
                "tau": format_exponent(&tau),
                "horizon": horizon,
                "max_deviation": dev,
                "bookkeeping_error": run.bookkeeping_error,
                "jumps": run.jump_counts.iter().flatten().sum::<u64>(),
                "warnings": run.warnings,
            }));
        }
    }
    let mut r = Report::new(
        "semimarkov",
        loaded.digest.clone(),
        &json!({"epsilon": a.eps, "law": law, "runs": runs, "max_deviation": worst}),
    )?;
    r.tables.push(t);
    Ok(r)
}
