//! Built-in self-check suites over the shipped configurations.
//!
//! Every check is seeded from the global seed and its position in the suite, so the suite
//! output depends only on (suite, seed).

use metastable_core::config::{parse_game, parse_model, parse_tree};
use metastable_core::hierarchy::{all_profiles, audit, rho_invariance_check};
use metastable_core::integrate::Side;
use metastable_core::model::sha256_hex;
use metastable_core::montecarlo::{
    estimate_surface_exit_split, estimate_surface_hit, estimate_transition, occupation_histogram, transition_bracket, McOptions,
    OccupationSpec, SurfaceBand,
};
use metastable_core::game::verify_limits;
use metastable_core::rng::derive_seed;
use metastable_core::semimarkov::{evaluate_skeleton, simulate_skeleton, Holding};
use metastable_core::Tree;
use serde::Serialize;
use serde_json::json;

use crate::commands::{with_dynamics, Loaded};
use crate::error::CliError;
use crate::report::{num, Report, Table};
use crate::Suite;

use metastable_core::integrate::{Sim1D, Sim2D};
use metastable_core::model::Model;

pub const SURFACE_12: &str = include_str!("../../../configs/models/surface_12.json");
pub const SURFACE_13: &str = include_str!("../../../configs/models/surface_13.json");
pub const SURFACE_HIT: &str = include_str!("../../../configs/models/surface_hit.json");
pub const NORMAL_CONSTANT: &str = include_str!("../../../configs/models/normal_form_constant.json");
pub const NORMAL_SINE: &str = include_str!("../../../configs/models/normal_form_sine.json");
pub const GAME_TWO: &str = include_str!("../../../configs/games/two_types.json");
pub const TREES: [(&str, &str); 3] = [
    ("two_domain", include_str!("../../../configs/trees/two_domain.json")),
    ("chain3", include_str!("../../../configs/trees/chain3.json")),
    ("star5", include_str!("../../../configs/trees/star5.json")),
];

#[derive(Debug, Clone, Serialize)]
struct Check {
    name: String,
    value: f64,
    threshold: String,
    passed: bool,
}

struct Checks {
    seed: u64,
    scale: usize,
    checks: Vec<Check>,
}

impl Checks {
    fn seed(&self) -> u64 {
        derive_seed(self.seed, self.checks.len() as u64)
    }

    fn push(&mut self, name: &str, value: f64, threshold: impl Into<String>, passed: bool) {
        self.checks.push(Check { name: name.into(), value, threshold: threshold.into(), passed });
    }
}

fn model(text: &str, grid: Option<usize>) -> Result<Loaded, CliError> {
    Loaded::from_model(parse_model(text)?, grid)
}

fn trees() -> Result<Vec<(&'static str, Tree)>, CliError> {
    TREES.iter().map(|(n, t)| Ok((*n, parse_tree::<f64>(t)?.tree))).collect()
}

pub fn run(suite: Suite, seed: u64) -> Result<Report, CliError> {
    let scale = if suite == Suite::Full { 10 } else { 1 };
    let mut s = Checks { seed, scale, checks: Vec::new() };

    let c = model(NORMAL_CONSTANT, Some(64))?;
    let g = c.solution.as_ref().expect("2-D model").gamma;
    s.push("gamma_constant_closed_form", g, "|gamma + 1| <= 1e-6", (g + 1.0).abs() <= 1e-6);

    let sine = model(NORMAL_SINE, Some(64))?;
    let sol = sine.solution.as_ref().expect("2-D model");
    let res = sol.residuals.0.max(sol.residuals.1);
    s.push("gamma_sine_residual", res, "<= 1e-8", res <= 1e-8 && sol.gamma < 0.0);

    let m12 = model(SURFACE_12, None)?;
    let (zeta, k1, k2) = (0.2, 0.1, 0.4);
    let o = McOptions::new(2_000 * s.scale, s.seed()).with_theta(0.02);
    let est = with_dynamics!(m12, None, |d| estimate_transition(d, 0, Side::Plus, zeta, k1, k2, &o)?);
    let (lo, hi) = transition_bracket(zeta, k1, k2, -1.0, 0.1)?;
    s.push("transition_in_bracket", est.estimate.point, format!("[{lo}, {hi}]"), lo <= est.estimate.point && est.estimate.point <= hi);

    let o = McOptions::new(1_000 * s.scale, s.seed());
    let p = m12.perturbation_at(1e-3)?;
    let split = with_dynamics!(m12, Some(p), |d| estimate_surface_exit_split(d, 0, 0.1, &o)?);
    s.push("exit_split_covers_half", split.split.point, "CI covers 0.5", split.split.covers(0.5));

    let family = parse_game(GAME_TWO)?;
    let configs = [family.config_at::<f64>(1e-2)?];
    let rep = verify_limits(&configs, 20_000 * s.scale, s.seed())?;
    let worst = rep.cells.iter().map(|c| (c.mean_ratio - 1.0).abs()).fold(0.0, f64::max);
    s.push("game_mean_ratio", worst, "max |ratio - 1| <= 0.1", worst <= 0.1);

    let ts = trees()?;
    for (name, tree) in &ts {
        let a = audit(tree)?;
        s.push(&format!("audit_{name}"), a.last_window_gap, "all structural checks", a.passed(1e-12));
    }
    for (name, tree) in &ts {
        let seed = s.seed();
        let dev: f64 = rho_invariance_check(tree, 10 * s.scale, seed)?;
        s.push(&format!("rho_invariance_{name}"), dev, "< 1e-12", dev < 1e-12);
    }

    let (_, star) = &ts[2];
    let law = evaluate_skeleton(star, 1e-3)?;
    let mut worst = 0.0f64;
    for (i, p) in all_profiles(star)?.iter().enumerate() {
        for w in &p.windows {
            let tau = w.mid_exponent();
            let h = 1e-3f64.powf(*tau.numer() as f64 / *tau.denom() as f64);
            let run = simulate_skeleton(&law, i, h, 2_000 * s.scale, derive_seed(s.seed(), (i * 16 + w.n) as u64), Holding::Exponential)?;
            worst = worst.max(run.max_deviation(&w.c));
        }
    }
    s.push("semimarkov_star5", worst, "< 0.05", worst < 0.05);

    if suite == Suite::Full {
        full_checks(&mut s)?;
    }

    let mut t = Table::new("validate", &["check", "value", "threshold", "passed"]);
    for c in &s.checks {
        t.push(vec![c.name.clone(), num(c.value), c.threshold.clone(), c.passed.to_string()]);
    }
    let all = s.checks.iter().all(|c| c.passed);
    let name = if suite == Suite::Full { "full" } else { "quick" };
    let inputs: String = [SURFACE_12, SURFACE_13, SURFACE_HIT, NORMAL_CONSTANT, NORMAL_SINE, GAME_TWO]
        .into_iter()
        .chain(TREES.iter().map(|t| t.1))
        .collect();
    let mut r = Report::new("validate", sha256_hex(inputs.as_bytes()), &json!({"suite": name, "seed": seed, "checks": s.checks, "all_passed": all}))?;
    r.tables.push(t);
    r.flagged = !all;
    Ok(r)
}

fn full_checks(s: &mut Checks) -> Result<(), CliError> {
    let hit = model(SURFACE_HIT, None)?;
    let p = hit.perturbation_at(1e-3)?;
    let o = McOptions::new(2_000 * s.scale, s.seed());
    let zetas = [0.02, 0.04, 0.08, 0.16, 0.32];
    let r = with_dynamics!(hit, Some(p), |d| estimate_surface_hit(d, 0, Side::Plus, &zetas, 4.0, SurfaceBand::default(), &o)?);
    let slope = r.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN);
    s.push("surface_hit_slope_zeta", slope, "within -1 +- 0.1", (slope + 1.0).abs() <= 0.1);

    for (name, text, expected) in [("density_slope_gamma_-1", SURFACE_12, 0.0), ("density_slope_gamma_-2", SURFACE_13, 1.0)] {
        let m = model(text, None)?;
        let spec = OccupationSpec {
            surface: 0,
            side: Side::Plus,
            z_lo: 0.03,
            kappa: 0.4,
            bins: 10,
            t_total: 40_000.0,
            burn_in: None,
            chains: 4,
            surface_bins: 1,
        };
        let o = McOptions::new(1, s.seed());
        let res = with_dynamics!(m, None, |d| occupation_histogram(d, &spec, &o, None)?);
        s.push(name, res.fit.slope, format!("within {expected} +- 0.1"), (res.fit.slope - expected).abs() <= 0.1 && !res.flagged);
    }
    Ok(())
}
