//! JSON configuration files for models, domain trees and game families.
//!
//! Unknown keys are rejected. Errors carry a JSON-pointer location.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::game::{GameConfig, HoldingLaw};
use crate::hierarchy::{parse_exponent, Domain, DomainTree, SurfaceEdge};
use crate::model::{digest, model_hash, Model, Model1D, Model2DNormalForm, PerturbationSpec, PeriodicFn, SurfaceLocal, SurfaceSpec};
use crate::scalar::{lit, Real};

fn config_error(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { pointer: pointer.into(), message: message.into() }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => s.push_str(&format!("/{index}")),
            Segment::Map { key } => s.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => s.push_str(&format!("/{variant}")),
            Segment::Unknown => s.push_str("/?"),
        }
    }
    if s.is_empty() { "/".into() } else { s }
}

fn typed<D: DeserializeOwned>(value: Value) -> Result<D> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let pointer = pointer_of(e.path());
        config_error(pointer, e.into_inner().to_string())
    })
}

fn parse_text(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| config_error("/", format!("malformed JSON at line {}, column {}: {e}", e.line(), e.column())))
}

/// Reads a file, mapping I/O failures to configuration errors.
pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| config_error("/", format!("cannot read {}: {e}", path.display())))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerturbationEntry {
    epsilon: f64,
    #[serde(default = "one")]
    tilde_diffusion: f64,
    #[serde(default)]
    tilde_drift: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurfaceEntry {
    position: f64,
    alpha: f64,
    beta: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OneDFile {
    #[allow(dead_code)]
    kind: String,
    surfaces: Vec<SurfaceEntry>,
    bounds: [f64; 2],
    core_radius: f64,
    confine_strength: f64,
    perturbation: Option<PerturbationEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum PeriodicEntry {
    Constant(f64),
    Series {
        mean: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
}

impl PeriodicEntry {
    fn build<T: Real>(&self) -> PeriodicFn<T> {
        match self {
            PeriodicEntry::Constant(c) => PeriodicFn::constant(lit(*c)),
            PeriodicEntry::Series { mean, cos, sin } => PeriodicFn {
                mean: lit(*mean),
                cos: cos.iter().map(|&c| lit(c)).collect(),
                sin: sin.iter().map(|&s| lit(s)).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocalEntry {
    alpha: PeriodicEntry,
    beta: PeriodicEntry,
    #[serde(default)]
    dy_coeff: Option<PeriodicEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalFormFile {
    #[allow(dead_code)]
    kind: String,
    #[serde(default = "default_grid")]
    grid_size: usize,
    ly_diffusion: PeriodicEntry,
    #[serde(default)]
    ly_drift: Option<PeriodicEntry>,
    local: LocalEntry,
    z_max: f64,
    perturbation: Option<PerturbationEntry>,
}

fn default_grid() -> usize {
    128
}

/// A model file after validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadedModel<T> {
    pub model: Model<T>,
    pub perturbation: Option<PerturbationSpec<T>>,
}

impl<T: Real> LoadedModel<T> {
    pub fn digest(&self) -> Result<String> {
        model_hash(&self.model, self.perturbation.as_ref())
    }

    pub fn one_d(&self) -> Option<&Model1D<T>> {
        match &self.model {
            Model::OneD(m) => Some(m),
            Model::NormalForm2d(_) => None,
        }
    }

    pub fn normal_form(&self) -> Option<&Model2DNormalForm<T>> {
        match &self.model {
            Model::NormalForm2d(m) => Some(m),
            Model::OneD(_) => None,
        }
    }
}

fn perturbation<T: Real>(p: &Option<PerturbationEntry>) -> Result<Option<PerturbationSpec<T>>> {
    p.as_ref()
        .map(|p| {
            PerturbationSpec::new(lit(p.epsilon), lit(p.tilde_diffusion), lit(p.tilde_drift))
                .map_err(|e| config_error("/perturbation", e.to_string()))
        })
        .transpose()
}

/// Parses a model document (`kind` = `one_d` or `normal_form_2d`).
pub fn parse_model<T: Real>(text: &str) -> Result<LoadedModel<T>> {
    let value = parse_text(text)?;
    let kind = value.get("kind").and_then(Value::as_str).ok_or_else(|| config_error("/kind", "missing model kind"))?;
    match kind {
        "one_d" => {
            let f: OneDFile = typed(value)?;
            let specs: Vec<SurfaceSpec<T>> =
                f.surfaces.iter().map(|s| SurfaceSpec { position: lit(s.position), alpha: lit(s.alpha), beta: lit(s.beta) }).collect();
            let model = Model1D::build(&specs, (lit(f.bounds[0]), lit(f.bounds[1])), lit(f.core_radius), lit(f.confine_strength))
                .map_err(|e| config_error("/surfaces", e.to_string()))?;
            Ok(LoadedModel { model: Model::OneD(model), perturbation: perturbation(&f.perturbation)? })
        }
        "normal_form_2d" => {
            let f: NormalFormFile = typed(value)?;
            let alpha_fn = f.local.alpha.build::<T>();
            let beta_fn = f.local.beta.build::<T>();
            let local = SurfaceLocal {
                alpha: alpha_fn.mean,
                beta: beta_fn.mean,
                dy_coeff: f.local.dy_coeff.as_ref().map(PeriodicEntry::build).unwrap_or_else(PeriodicFn::zero),
                alpha_fn: (!alpha_fn.is_constant()).then_some(alpha_fn),
                beta_fn: (!beta_fn.is_constant()).then_some(beta_fn),
            };
            let model = Model2DNormalForm::new(
                f.grid_size,
                f.ly_diffusion.build(),
                f.ly_drift.as_ref().map(PeriodicEntry::build).unwrap_or_else(PeriodicFn::zero),
                local,
                lit(f.z_max),
            )
            .map_err(|e| config_error("/", e.to_string()))?;
            Ok(LoadedModel { model: Model::NormalForm2d(model), perturbation: perturbation(&f.perturbation)? })
        }
        other => Err(config_error("/kind", format!("unknown model kind {other:?}; expected one_d or normal_form_2d"))),
    }
}

pub fn load_model<T: Real>(path: &Path) -> Result<LoadedModel<T>> {
    parse_model(&read_file(path)?)
}

#[derive(Debug, Clone, Deserialize, PartialEq, Eq)]
#[serde(untagged)]
enum NodeId {
    Int(u64),
    Str(String),
}

impl NodeId {
    fn text(&self) -> String {
        match self {
            NodeId::Int(i) => i.to_string(),
            NodeId::Str(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: NodeId,
    #[serde(rename = "C")]
    c: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeEntry {
    u: NodeId,
    v: NodeId,
    gamma: String,
    rho: f64,
    #[serde(rename = "C_uv")]
    c_uv: f64,
    #[serde(rename = "C_vu")]
    c_vu: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    nodes: Vec<NodeEntry>,
    edges: Vec<EdgeEntry>,
}

/// A tree file after validation, with the digest of its canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTree<T> {
    pub tree: DomainTree<T>,
    pub digest: String,
}

pub fn parse_tree<T: Real>(text: &str) -> Result<LoadedTree<T>> {
    let f: TreeFile = typed(parse_text(text)?)?;
    let domains: Vec<Domain<T>> = f.nodes.iter().map(|n| Domain { id: n.id.text(), c: lit(n.c) }).collect();
    let index = |id: &NodeId, at: String| {
        let t = id.text();
        domains.iter().position(|d| d.id == t).ok_or_else(|| config_error(at, format!("unknown node id {t:?}")))
    };
    let mut edges = Vec::with_capacity(f.edges.len());
    for (k, e) in f.edges.iter().enumerate() {
        edges.push(SurfaceEdge {
            u: index(&e.u, format!("/edges/{k}/u"))?,
            v: index(&e.v, format!("/edges/{k}/v"))?,
            gamma: parse_exponent(&e.gamma).map_err(|err| config_error(format!("/edges/{k}/gamma"), err.to_string()))?,
            rho: lit(e.rho),
            c_uv: lit(e.c_uv),
            c_vu: lit(e.c_vu),
        });
    }
    let tree = DomainTree::new(domains, edges).map_err(|e| {
        let msg = match e {
            Error::InvalidInput(m) => m,
            other => other.to_string(),
        };
        config_error("/edges", msg)
    })?;
    let digest = digest(&tree)?;
    Ok(LoadedTree { tree, digest })
}

pub fn load_tree<T: Real>(path: &Path) -> Result<LoadedTree<T>> {
    parse_tree(&read_file(path)?)
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PowerTerm {
    pub coeff: f64,
    pub expo: f64,
}

impl PowerTerm {
    fn at(&self, eps: f64) -> f64 {
        self.coeff * eps.powf(self.expo)
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "law", rename_all = "snake_case")]
pub enum LawEntry {
    Zero,
    Constant { mean: PowerTerm },
    Exponential { mean: PowerTerm },
    Lognormal { mean: PowerTerm, sigma: f64 },
}

impl LawEntry {
    fn at<T: Real>(&self, eps: f64) -> HoldingLaw<T> {
        match self {
            LawEntry::Zero => HoldingLaw::Zero,
            LawEntry::Constant { mean } => HoldingLaw::Constant { mean: lit(mean.at(eps)) },
            LawEntry::Exponential { mean } => HoldingLaw::Exponential { mean: lit(mean.at(eps)) },
            LawEntry::Lognormal { mean, sigma } => HoldingLaw::Lognormal { mean: lit(mean.at(eps)), sigma: lit(*sigma) },
        }
    }
}

/// A game whose success probabilities and holding means are power laws in ε.
#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GameFamily {
    pub q: Vec<f64>,
    pub p: Vec<PowerTerm>,
    pub s: LawEntry,
    pub t: LawEntry,
    #[serde(default)]
    pub epsilons: Vec<f64>,
}

impl GameFamily {
    pub fn config_at<T: Real>(&self, eps: f64) -> Result<GameConfig<T>> {
        GameConfig::new(
            lit(eps),
            self.q.iter().map(|&q| lit(q)).collect(),
            self.p.iter().map(|p| lit(p.at(eps))).collect(),
            self.s.at(eps),
            self.t.at(eps),
        )
    }
}

pub fn parse_game(text: &str) -> Result<GameFamily> {
    typed(parse_text(text)?)
}

pub fn load_game(path: &Path) -> Result<GameFamily> {
    parse_game(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_D: &str = r#"{"kind":"one_d","surfaces":[{"position":0.0,"alpha":1.0,"beta":2.0}],
        "bounds":[-1.0,1.0],"core_radius":0.25,"confine_strength":1.0,
        "perturbation":{"epsilon":0.01,"tilde_diffusion":1.0}}"#;

    #[test]
    fn one_d_roundtrip_and_digest_order() {
        let a = parse_model::<f64>(ONE_D).unwrap();
        let permuted = r#"{"confine_strength":1.0,"core_radius":0.25,"bounds":[-1.0,1.0],
            "perturbation":{"tilde_diffusion":1.0,"epsilon":0.01},
            "surfaces":[{"beta":2.0,"alpha":1.0,"position":0.0}],"kind":"one_d"}"#;
        let b = parse_model::<f64>(permuted).unwrap();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        let c = parse_model::<f64>(&ONE_D.replace("0.01", "0.02")).unwrap();
        assert_ne!(a.digest().unwrap(), c.digest().unwrap());
    }

    #[test]
    fn unknown_key_has_pointer() {
        let text = ONE_D.replace("\"alpha\":1.0", "\"alpha\":1.0,\"alhpa\":2");
        match parse_model::<f64>(&text).unwrap_err() {
            Error::Config { pointer, message } => {
                assert_eq!(pointer, "/surfaces/0/alhpa");
                assert!(message.contains("alhpa"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn type_mismatch_has_pointer() {
        let err = parse_model::<f64>(&ONE_D.replace("\"core_radius\":0.25", "\"core_radius\":\"wide\"")).unwrap_err();
        assert!(matches!(err, Error::Config { ref pointer, .. } if pointer == "/core_radius"), "{err}");
    }

    #[test]
    fn normal_form() {
        let text = r#"{"kind":"normal_form_2d","grid_size":64,"ly_diffusion":1.0,
            "local":{"alpha":1.0,"beta":{"mean":2.0,"sin":[1.0]}},"z_max":1.0}"#;
        let m = parse_model::<f64>(text).unwrap();
        let nf = m.normal_form().unwrap();
        assert!(nf.local.beta_fn.is_some() && nf.local.alpha_fn.is_none());
        assert_eq!(nf.grid_size, 64);
    }

    const CHAIN: &str = r#"{"nodes":[{"id":1,"C":1},{"id":2,"C":1},{"id":3,"C":1}],
        "edges":[{"u":1,"v":2,"gamma":"-1.0","rho":1,"C_uv":1,"C_vu":1},
                 {"u":2,"v":3,"gamma":"-2","rho":1,"C_uv":1,"C_vu":1}]}"#;

    #[test]
    fn tree_parses() {
        let t = parse_tree::<f64>(CHAIN).unwrap();
        assert_eq!(t.tree.len(), 3);
        assert_eq!(t.tree.index_of("2"), Some(1));
    }

    #[test]
    fn tree_cycle_rejected() {
        let text = CHAIN.replace(
            r#"{"u":2,"v":3,"gamma":"-2","rho":1,"C_uv":1,"C_vu":1}"#,
            r#"{"u":2,"v":3,"gamma":"-2","rho":1,"C_uv":1,"C_vu":1},{"u":3,"v":1,"gamma":"-2","rho":1,"C_uv":1,"C_vu":1}"#,
        );
        let err = parse_tree::<f64>(&text).unwrap_err();
        assert!(err.to_string().contains("adjacency graph must be a tree"), "{err}");
    }

    #[test]
    fn tree_bad_gamma_pointer() {
        let err = parse_tree::<f64>(&CHAIN.replace("\"-2\"", "\"-2x\"")).unwrap_err();
        assert!(matches!(err, Error::Config { ref pointer, .. } if pointer == "/edges/1/gamma"), "{err}");
    }

    #[test]
    fn canonical_decimal_gammas_are_equal() {
        let t = parse_tree::<f64>(&CHAIN.replace("\"-2\"", "\"-1\"")).unwrap();
        assert_eq!(t.tree.edge(0).gamma, t.tree.edge(1).gamma);
    }

    #[test]
    fn game_family() {
        let text = r#"{"q":[0.5,0.5],"p":[{"coeff":1,"expo":1},{"coeff":0.2,"expo":1}],
            "s":{"law":"exponential","mean":{"coeff":1,"expo":0}},"t":{"law":"zero"},"epsilons":[0.01,0.001]}"#;
        let f = parse_game(text).unwrap();
        let c = f.config_at::<f64>(1e-3).unwrap();
        assert!((c.p[1] - 2e-4).abs() < 1e-18);
    }
}
