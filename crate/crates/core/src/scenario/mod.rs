//! Scenario files: TOML documents naming systems, transformation families,
//! infinitesimal generators and a list of checks to run against them.
//!
//! Loading parses every expression up front, so a scenario that loads can
//! only fail at run time for numerical reasons.

mod bundled;
mod run;

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::expr::{Expr, ParseError, Parser};
use crate::mechanics::{Lagrangian, MechanicsError};
use crate::symmetry::{InfGen, PointFamily, SymmetryError};

pub use bundled::{bundled, bundled_names, Bundled, BUNDLED};
pub use run::{run_scenario, CheckOutcome, Report, RunOptions, Status};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 0x5eed;

/// Human-readable description of the scenario format.
pub const SCHEMA_DOC: &str = include_str!("../../scenarios/SCHEMA.md");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("{context}: {source}")]
    Expr { context: String, source: ParseError },
    #[error("{context}: {message}")]
    Invalid { context: String, message: String },
}

impl ScenarioError {
    fn invalid(context: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid {
            context: context.into(),
            message: message.into(),
        }
    }
}

fn default_t() -> String {
    "t".into()
}

fn zero() -> String {
    "0".into()
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_hbar() -> f64 {
    1.0
}

fn default_order() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema: u32,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default)]
    systems: BTreeMap<String, RawSystem>,
    #[serde(default)]
    families: BTreeMap<String, RawFamily>,
    #[serde(default)]
    generators: BTreeMap<String, RawGenerator>,
    #[serde(default)]
    checks: Vec<CheckSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n_dof: usize,
    lagrangian: String,
    #[serde(default)]
    constants: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFamily {
    q: Vec<String>,
    #[serde(default = "default_t")]
    t: String,
    #[serde(default)]
    param: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenerator {
    #[serde(default = "zero")]
    xi: String,
    eta: Vec<String>,
    #[serde(default = "zero")]
    gauge_rate: String,
}

#[derive(Debug, Clone, Copy, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub xmin: f64,
    pub xmax: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct PacketSpec {
    #[serde(default)]
    pub center: f64,
    pub width: f64,
    #[serde(default)]
    pub momentum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosedForm {
    Free,
    Linear,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelRef {
    pub closed_form: ClosedForm,
    pub m: f64,
    #[serde(default)]
    pub g: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub dts: Vec<f64>,
    #[serde(default)]
    pub t0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureName {
    #[default]
    BandLimited,
    Trapezoid,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorText {
    #[serde(default = "zero")]
    pub alpha: String,
    #[serde(default = "zero")]
    pub beta: String,
    #[serde(default = "zero")]
    pub gamma: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryCheck {
    pub name: Option<String>,
    pub system: String,
    pub family: String,
    pub expected_gauge: Option<String>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfinitesimalCheck {
    pub name: Option<String>,
    pub system: String,
    pub generator: String,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoetherCheck {
    pub name: Option<String>,
    pub system: String,
    pub generator: String,
    pub q0: Vec<f64>,
    pub v0: Vec<f64>,
    #[serde(default)]
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
    pub expected_charge: Option<String>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceCheck {
    pub name: Option<String>,
    pub system: String,
    pub target: String,
    pub family: String,
    pub expected_gauge: Option<String>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCompareCheck {
    pub name: Option<String>,
    pub system: String,
    pub reference: KernelRef,
    pub grid: GridSpec,
    #[serde(default)]
    pub t0: f64,
    pub t1: f64,
    pub slices: usize,
    pub packet: PacketSpec,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    #[serde(default)]
    pub quadrature: QuadratureName,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FundamCheck {
    pub name: Option<String>,
    pub primed: KernelRef,
    pub unprimed: KernelRef,
    pub family: String,
    pub param_value: Option<f64>,
    pub gauge: String,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    pub samples: SampleSpec,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConservedOpCheck {
    pub name: Option<String>,
    pub system: String,
    pub operator: OperatorText,
    pub grid: GridSpec,
    pub packet: PacketSpec,
    #[serde(default)]
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    #[serde(default = "default_order")]
    pub stencil_order: usize,
    pub tolerance: Option<f64>,
    /// Grid size for the additional dense `A(t1)U = UA(t0)` check.
    pub matrix_n: Option<usize>,
    pub matrix_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryOpCheck {
    pub name: Option<String>,
    pub system: String,
    /// `φ(x, t)` in `q1`, `t`, the system constants and `V`.
    pub phase: String,
    /// Velocity in grid spacings per unit time.
    pub velocity_cells: i64,
    pub grid: GridSpec,
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    #[serde(default = "default_order")]
    pub stencil_order: usize,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CheckSpec {
    Symmetry(SymmetryCheck),
    Infinitesimal(InfinitesimalCheck),
    Noether(NoetherCheck),
    Equivalence(EquivalenceCheck),
    KernelCompare(KernelCompareCheck),
    Fundam(FundamCheck),
    ConservedOp(ConservedOpCheck),
    SymmetryOp(SymmetryOpCheck),
}

impl CheckSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            CheckSpec::Symmetry(_) => "symmetry",
            CheckSpec::Infinitesimal(_) => "infinitesimal",
            CheckSpec::Noether(_) => "noether",
            CheckSpec::Equivalence(_) => "equivalence",
            CheckSpec::KernelCompare(_) => "kernel-compare",
            CheckSpec::Fundam(_) => "fundam",
            CheckSpec::ConservedOp(_) => "conserved-op",
            CheckSpec::SymmetryOp(_) => "symmetry-op",
        }
    }

    fn explicit_name(&self) -> Option<&str> {
        match self {
            CheckSpec::Symmetry(c) => c.name.as_deref(),
            CheckSpec::Infinitesimal(c) => c.name.as_deref(),
            CheckSpec::Noether(c) => c.name.as_deref(),
            CheckSpec::Equivalence(c) => c.name.as_deref(),
            CheckSpec::KernelCompare(c) => c.name.as_deref(),
            CheckSpec::Fundam(c) => c.name.as_deref(),
            CheckSpec::ConservedOp(c) => c.name.as_deref(),
            CheckSpec::SymmetryOp(c) => c.name.as_deref(),
        }
    }

    fn tolerances(&self) -> Vec<Option<f64>> {
        match self {
            CheckSpec::Symmetry(c) => vec![c.tolerance],
            CheckSpec::Infinitesimal(c) => vec![c.tolerance],
            CheckSpec::Noether(c) => vec![c.tolerance],
            CheckSpec::Equivalence(c) => vec![c.tolerance],
            CheckSpec::KernelCompare(c) => vec![c.tolerance],
            CheckSpec::Fundam(c) => vec![c.tolerance],
            CheckSpec::ConservedOp(c) => vec![c.tolerance, c.matrix_tolerance],
            CheckSpec::SymmetryOp(c) => vec![c.tolerance],
        }
    }
}

/// A check together with its resolved name and its table as written.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub spec: CheckSpec,
    pub settings: serde_json::Value,
    /// Expressions parsed at load time, keyed by field name.
    pub exprs: BTreeMap<&'static str, Expr>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub systems: BTreeMap<String, Lagrangian>,
    pub families: BTreeMap<String, PointFamily>,
    pub generators: BTreeMap<String, (usize, InfGen)>,
    pub checks: Vec<Check>,
}

fn expr_err(context: impl Into<String>) -> impl FnOnce(ParseError) -> ScenarioError {
    let context = context.into();
    move |source| ScenarioError::Expr { context, source }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        Self::parse(&text, stem)
    }

    /// Parses scenario text; `fallback_name` is used when the file has no
    /// `name` key.
    pub fn parse(text: &str, fallback_name: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text)?;
        if raw.schema != SCHEMA_VERSION {
            return Err(ScenarioError::Schema { found: raw.schema });
        }
        let table: toml::Table = toml::from_str(text)?;
        let echoes: Vec<serde_json::Value> = match table.get("checks") {
            Some(toml::Value::Array(items)) => items
                .iter()
                .map(|v| serde_json::to_value(v).unwrap_or(serde_json::Value::Null))
                .collect(),
            _ => Vec::new(),
        };

        let mut constant_names: Vec<String> = Vec::new();
        let mut systems = BTreeMap::new();
        for (name, sys) in &raw.systems {
            let context = format!("systems.{name}");
            let parser = Parser::new(sys.n_dof).with_constants(sys.constants.keys().cloned());
            let expr = parser.parse(&sys.lagrangian).map_err(expr_err(format!("{context}.lagrangian")))?;
            let l = Lagrangian::new(sys.n_dof, expr, sys.constants.clone()).map_err(|e| match e {
                MechanicsError::Parse(source) => ScenarioError::Expr {
                    context: context.clone(),
                    source,
                },
                other => ScenarioError::invalid(&context, other.to_string()),
            })?;
            constant_names.extend(sys.constants.keys().cloned());
            systems.insert(name.clone(), l);
        }

        let mut families = BTreeMap::new();
        for (name, fam) in &raw.families {
            let context = format!("families.{name}");
            let mut parser = Parser::new(fam.q.len()).with_constants(constant_names.iter().cloned());
            if let Some(p) = &fam.param {
                parser = parser.with_param(p);
            }
            let q = fam
                .q
                .iter()
                .enumerate()
                .map(|(i, s)| parser.parse(s).map_err(expr_err(format!("{context}.q[{i}]"))))
                .collect::<Result<Vec<_>, _>>()?;
            let t = parser.parse(&fam.t).map_err(expr_err(format!("{context}.t")))?;
            let built = match &fam.param {
                Some(p) => PointFamily::new(q, t, p),
                None => PointFamily::transform(q, t),
            };
            let built = built.map_err(|e| match e {
                SymmetryError::Parse(source) => ScenarioError::Expr {
                    context: context.clone(),
                    source,
                },
                other => ScenarioError::invalid(&context, other.to_string()),
            })?;
            families.insert(name.clone(), built);
        }

        let mut generators = BTreeMap::new();
        for (name, gen) in &raw.generators {
            let context = format!("generators.{name}");
            let n = gen.eta.len();
            let parser = Parser::new(n).with_constants(constant_names.iter().cloned());
            let xi = parser.parse(&gen.xi).map_err(expr_err(format!("{context}.xi")))?;
            let eta = gen
                .eta
                .iter()
                .enumerate()
                .map(|(i, s)| parser.parse(s).map_err(expr_err(format!("{context}.eta[{i}]"))))
                .collect::<Result<Vec<_>, _>>()?;
            let g = parser.parse(&gen.gauge_rate).map_err(expr_err(format!("{context}.gauge_rate")))?;
            generators.insert(name.clone(), (n, InfGen::new(xi, eta, g)));
        }

        let mut checks = Vec::new();
        for (i, spec) in raw.checks.into_iter().enumerate() {
            let name = spec
                .explicit_name()
                .map(str::to_string)
                .unwrap_or_else(|| format!("{:02}-{}", i + 1, spec.kind()));
            let context = format!("checks[{i}] ({name})");
            for tol in spec.tolerances().into_iter().flatten() {
                if !(tol > 0.0) {
                    return Err(ScenarioError::invalid(&context, "tolerances must be positive"));
                }
            }
            let exprs = resolve(&spec, &context, &systems, &families, &generators)?;
            checks.push(Check {
                name,
                spec,
                settings: echoes.get(i).cloned().unwrap_or(serde_json::Value::Null),
                exprs,
            });
        }

        Ok(Scenario {
            name: raw.name.unwrap_or_else(|| fallback_name.to_string()),
            description: raw.description.unwrap_or_default(),
            seed: raw.seed,
            systems,
            families,
            generators,
            checks,
        })
    }
}

/// Checks references and parses per-check expressions.
fn resolve(
    spec: &CheckSpec,
    context: &str,
    systems: &BTreeMap<String, Lagrangian>,
    families: &BTreeMap<String, PointFamily>,
    generators: &BTreeMap<String, (usize, InfGen)>,
) -> Result<BTreeMap<&'static str, Expr>, ScenarioError> {
    let system = |name: &str| {
        systems
            .get(name)
            .ok_or_else(|| ScenarioError::invalid(context, format!("unknown system `{name}`")))
    };
    let family = |name: &str| {
        families
            .get(name)
            .ok_or_else(|| ScenarioError::invalid(context, format!("unknown family `{name}`")))
    };
    let generator = |name: &str| {
        generators
            .get(name)
            .ok_or_else(|| ScenarioError::invalid(context, format!("unknown generator `{name}`")))
    };
    let same_dof = |a: usize, b: usize, what: &str| {
        if a == b {
            Ok(())
        } else {
            Err(ScenarioError::invalid(context, format!("{what} has {b} degrees of freedom, system has {a}")))
        }
    };
    let constants_of = |l: &Lagrangian| l.constants().keys().cloned().collect::<Vec<_>>();
    let grid_ok = |g: &GridSpec| {
        if g.n < 2 || !(g.xmax > g.xmin) {
            Err(ScenarioError::invalid(context, "grid needs n >= 2 and xmax > xmin"))
        } else {
            Ok(())
        }
    };
    let mut exprs = BTreeMap::new();
    match spec {
        CheckSpec::Symmetry(c) => {
            let sys = system(&c.system)?;
            let fam = family(&c.family)?;
            same_dof(sys.n_dof(), fam.n_dof(), "family")?;
            if let Some(text) = &c.expected_gauge {
                let parser = Parser::new(sys.n_dof())
                    .with_param(fam.param_name())
                    .with_constants(constants_of(sys));
                exprs.insert("expected_gauge", parser.parse(text).map_err(expr_err(format!("{context}.expected_gauge")))?);
            }
        }
        CheckSpec::Infinitesimal(c) => {
            let sys = system(&c.system)?;
            same_dof(sys.n_dof(), generator(&c.generator)?.0, "generator")?;
        }
        CheckSpec::Noether(c) => {
            let sys = system(&c.system)?;
            same_dof(sys.n_dof(), generator(&c.generator)?.0, "generator")?;
            if c.q0.len() != sys.n_dof() || c.v0.len() != sys.n_dof() {
                return Err(ScenarioError::invalid(context, "q0 and v0 must have one entry per degree of freedom"));
            }
            if c.steps == 0 {
                return Err(ScenarioError::invalid(context, "steps must be at least one"));
            }
            if let Some(text) = &c.expected_charge {
                let parser = Parser::new(sys.n_dof()).with_constants(constants_of(sys));
                exprs.insert("expected_charge", parser.parse(text).map_err(expr_err(format!("{context}.expected_charge")))?);
            }
        }
        CheckSpec::Equivalence(c) => {
            let sys = system(&c.system)?;
            let target = system(&c.target)?;
            let fam = family(&c.family)?;
            same_dof(sys.n_dof(), target.n_dof(), "target system")?;
            same_dof(sys.n_dof(), fam.n_dof(), "family")?;
            if let Some(text) = &c.expected_gauge {
                let parser = Parser::new(sys.n_dof())
                    .with_param(fam.param_name())
                    .with_constants(constants_of(sys))
                    .with_constants(constants_of(target));
                exprs.insert("expected_gauge", parser.parse(text).map_err(expr_err(format!("{context}.expected_gauge")))?);
            }
        }
        CheckSpec::KernelCompare(c) => {
            system(&c.system)?;
            grid_ok(&c.grid)?;
            if c.slices == 0 {
                return Err(ScenarioError::invalid(context, "slices must be at least one"));
            }
        }
        CheckSpec::Fundam(c) => {
            let fam = family(&c.family)?;
            if fam.n_dof() != 1 {
                return Err(ScenarioError::invalid(context, "kernel checks need a one-dimensional family"));
            }
            if fam.param().is_some() != c.param_value.is_some() {
                return Err(ScenarioError::invalid(context, "param_value must be given exactly when the family has a parameter"));
            }
            let parser = Parser::new(1)
                .with_param(fam.param_name())
                .with_constants(c.constants.keys().cloned());
            exprs.insert("gauge", parser.parse(&c.gauge).map_err(expr_err(format!("{context}.gauge")))?);
            if c.samples.n == 0 || c.samples.dts.is_empty() {
                return Err(ScenarioError::invalid(context, "samples need n >= 1 and at least one interval"));
            }
        }
        CheckSpec::ConservedOp(c) => {
            let sys = system(&c.system)?;
            grid_ok(&c.grid)?;
            let parser = Parser::new(1).with_constants(constants_of(sys));
            for (key, text) in [("alpha", &c.operator.alpha), ("beta", &c.operator.beta), ("gamma", &c.operator.gamma)] {
                exprs.insert(key, parser.parse(text).map_err(expr_err(format!("{context}.operator.{key}")))?);
            }
        }
        CheckSpec::SymmetryOp(c) => {
            let sys = system(&c.system)?;
            grid_ok(&c.grid)?;
            let parser = Parser::new(1).with_constants(constants_of(sys)).with_constants(["V"]);
            exprs.insert("phase", parser.parse(&c.phase).map_err(expr_err(format!("{context}.phase")))?);
        }
    }
    Ok(exprs)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema = 1
name = "minimal"

[systems.gravity]
n_dof = 1
lagrangian = "m/2*v1^2 - m*g*q1"
constants = { m = 1.0, g = 1.0 }

[families.boost]
q = ["q1 - V*t"]
param = "V"

[[checks]]
kind = "symmetry"
system = "gravity"
family = "boost"
"#;

    #[test]
    fn loads_minimal_scenario() {
        let s = Scenario::parse(MINIMAL, "x").unwrap();
        assert_eq!(s.name, "minimal");
        assert_eq!(s.seed, DEFAULT_SEED);
        assert_eq!(s.checks.len(), 1);
        assert_eq!(s.checks[0].name, "01-symmetry");
        assert_eq!(s.checks[0].settings["family"], "boost");
    }

    #[test]
    fn rejects_unknown_references_and_fields() {
        let bad = MINIMAL.replace("family = \"boost\"", "family = \"nope\"");
        assert!(matches!(Scenario::parse(&bad, "x"), Err(ScenarioError::Invalid { .. })));
        let bad = MINIMAL.replace("param = \"V\"", "param = \"V\"\nspeed = 3");
        let err = Scenario::parse(&bad, "x").unwrap_err();
        assert!(err.to_string().contains("speed"), "{err}");
    }

    #[test]
    fn expression_errors_carry_positions() {
        let bad = MINIMAL.replace("m/2*v1^2 - m*g*q1", "m/2*v1^2 - m*g*q9");
        let err = Scenario::parse(&bad, "x").unwrap_err();
        assert!(matches!(err, ScenarioError::Expr { .. }));
        assert!(err.to_string().contains("systems.gravity"));
    }

    #[test]
    fn syntax_errors_report_lines() {
        let err = Scenario::parse("schema = 1\n[systems.a\n", "x").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = Scenario::parse("schema = 2\n", "x").unwrap_err();
        assert!(matches!(err, ScenarioError::Schema { found: 2 }));
    }

    #[test]
    fn tolerances_must_be_positive() {
        let bad = format!("{MINIMAL}tolerance = -1.0\n");
        assert!(matches!(Scenario::parse(&bad, "x"), Err(ScenarioError::Invalid { .. })));
    }
}
