//! Point-transformation families, variational-symmetry certificates, gauge
//! extraction and equivalence of Lagrangians.
//!
//! A family `q'(q, t, s)`, `t'(q, t, s)` is a symmetry of `L` when the
//! pulled-back Lagrangian differs from `L` by a total time derivative
//! `dF/dt`. The group parameter is kept symbolic and treated as an inert
//! constant; numeric spot checks at a few parameter values back the result.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{
    eval, max_abs_residual, max_relative_deviation, Atom, Bindings, Expr, Monomial, ParseError,
    Parser, Poly, Rational, Sampler, SamplingError, Symbol, Var,
};
use crate::mechanics::{conjugate_momenta, Lagrangian};

/// Parameter values used for per-`s` spot checks.
pub const SPOT_CHECK_PARAMS: [(i64, i64); 4] = [(1, 10), (-1, 10), (1, 1), (-1, 1)];

#[derive(Debug, Error)]
pub enum SymmetryError {
    #[error("family has {found} components, system has {n_dof} degrees of freedom")]
    DofMismatch { found: usize, n_dof: usize },
    #[error("transformation must not depend on velocities")]
    VelocityDependent,
    #[error("component {component} does not reduce to the identity at zero parameter")]
    NotIdentityAtZero { component: String },
    #[error("dt'/dt is not positive at t = {t}")]
    VanishingTimeRate { t: f64 },
    #[error("transformation is not unimodular (Jacobian deviation {jacobian}, dt'/dt deviation {time_rate})")]
    NotUnimodular { jacobian: f64, time_rate: f64 },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaugeError {
    #[error("residual is not affine in the velocities (obstruction {norm:.3e})")]
    NonlinearInVelocity { norm: f64 },
    #[error("velocity coefficients are not a closed form (defect {norm:.3e})")]
    NotClosed { norm: f64 },
    #[error("gauge reconstruction needs polynomial dependence: {0}")]
    NonPolynomial(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// `q'_i(q, t, s)`, `t'(q, t, s)`. Without a parameter the family is a single
/// fixed transformation.
#[derive(Debug, Clone)]
pub struct PointFamily {
    n_dof: usize,
    pub qprime: Vec<Expr>,
    pub tprime: Expr,
    param: Option<String>,
}

impl PointFamily {
    /// A one-parameter family; must reduce to the identity at `s = 0`.
    pub fn new(qprime: Vec<Expr>, tprime: Expr, param: &str) -> Result<Self, SymmetryError> {
        let fam = Self::build(qprime, tprime, Some(param.to_string()))?;
        let zero = Expr::zero();
        let at_zero = |e: &Expr| e.substitute_one(&Symbol::param(), &zero);
        let sampler = Sampler::default();
        for (i, q) in fam.qprime.iter().enumerate() {
            if max_relative_deviation(&at_zero(q), &Expr::q(i), &sampler)? > sampler.tol {
                return Err(SymmetryError::NotIdentityAtZero {
                    component: format!("q{}'", i + 1),
                });
            }
        }
        if max_relative_deviation(&at_zero(&fam.tprime), &Expr::t(), &sampler)? > sampler.tol {
            return Err(SymmetryError::NotIdentityAtZero {
                component: "t'".into(),
            });
        }
        Ok(fam)
    }

    /// A fixed coordinate transformation (no group parameter).
    pub fn transform(qprime: Vec<Expr>, tprime: Expr) -> Result<Self, SymmetryError> {
        Self::build(qprime, tprime, None)
    }

    pub fn identity(n_dof: usize) -> Self {
        Self {
            n_dof,
            qprime: (0..n_dof).map(Expr::q).collect(),
            tprime: Expr::t(),
            param: None,
        }
    }

    fn build(qprime: Vec<Expr>, tprime: Expr, param: Option<String>) -> Result<Self, SymmetryError> {
        let n_dof = qprime.len();
        let all = qprime.iter().chain(std::iter::once(&tprime));
        for e in all {
            if e.contains_any(&|s: &Symbol| matches!(s, Symbol::Var(Var::Vel(_)))) {
                return Err(SymmetryError::VelocityDependent);
            }
            if e.max_dof_index() > n_dof {
                return Err(SymmetryError::DofMismatch {
                    found: e.max_dof_index(),
                    n_dof,
                });
            }
        }
        Ok(Self {
            n_dof,
            qprime,
            tprime,
            param,
        })
    }

    /// Parses component texts. `param` names the group parameter, `None` for
    /// a fixed transformation.
    pub fn parse(
        qprime: &[&str],
        tprime: &str,
        param: Option<&str>,
        extra_constants: &[&str],
    ) -> Result<Self, SymmetryError> {
        let n = qprime.len();
        let mut parser = Parser::new(n).with_constants(extra_constants.iter().copied());
        if let Some(p) = param {
            parser = parser.with_param(p);
        }
        let q = qprime
            .iter()
            .map(|s| parser.parse(s))
            .collect::<Result<Vec<_>, _>>()?;
        let t = parser.parse(tprime)?;
        match param {
            Some(p) => Self::new(q, t, p),
            None => Self::transform(q, t),
        }
    }

    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    pub fn param(&self) -> Option<&str> {
        self.param.as_deref()
    }

    /// Display name for the parameter symbol.
    pub fn param_name(&self) -> &str {
        self.param.as_deref().unwrap_or("s")
    }

    /// The member at a fixed parameter value.
    pub fn at(&self, value: &Expr) -> PointFamily {
        let fix = |e: &Expr| e.substitute_one(&Symbol::param(), value);
        PointFamily {
            n_dof: self.n_dof,
            qprime: self.qprime.iter().map(fix).collect(),
            tprime: fix(&self.tprime),
            param: None,
        }
    }

    pub fn at_f64(&self, value: f64) -> PointFamily {
        self.at(&Expr::from_f64(value))
    }

    /// Primed velocities by the chain rule and `dt'/dt`.
    pub fn primed_velocities(&self) -> (Vec<Expr>, Expr) {
        let dt = total_derivative(&self.tprime, self.n_dof);
        let vs = self
            .qprime
            .iter()
            .map(|q| total_derivative(q, self.n_dof) / &dt)
            .collect();
        (vs, dt)
    }

    /// Checks `det(∂q'/∂q) = 1` and `dt'/dt = 1` at sample points.
    pub fn check_unimodular(&self, sampler: &Sampler) -> Result<(), SymmetryError> {
        let n = self.n_dof;
        let mut exprs: Vec<Expr> = Vec::with_capacity(n * n + 1);
        for q in &self.qprime {
            for j in 0..n {
                exprs.push(q.diff(&Symbol::q(j)));
            }
        }
        exprs.push(total_derivative(&self.tprime, n));
        let refs: Vec<&Expr> = exprs.iter().collect();
        let mut jacobian: f64 = 0.0;
        let mut time_rate: f64 = 0.0;
        sampler.for_each_point(&refs, |_, values| {
            let m = DMatrix::from_row_slice(n, n, &values[..n * n]);
            jacobian = jacobian.max((m.determinant() - 1.0).abs());
            time_rate = time_rate.max((values[n * n] - 1.0).abs());
        })?;
        if jacobian > sampler.tol || time_rate > sampler.tol {
            return Err(SymmetryError::NotUnimodular { jacobian, time_rate });
        }
        Ok(())
    }
}

/// Infinitesimal generator `(ξ, η_i)` together with the gauge rate `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfGen {
    pub xi: Expr,
    pub eta: Vec<Expr>,
    pub gauge_rate: Expr,
}

impl InfGen {
    pub fn new(xi: Expr, eta: Vec<Expr>, gauge_rate: Expr) -> Self {
        Self { xi, eta, gauge_rate }
    }

    pub fn with_gauge_rate(mut self, g: Expr) -> Self {
        self.gauge_rate = g;
        self
    }
}

/// `dX/dt = ∂X/∂t + Σ v_i ∂X/∂q_i`.
pub fn total_derivative(x: &Expr, n_dof: usize) -> Expr {
    let mut terms = vec![x.diff(&Symbol::t())];
    for i in 0..n_dof {
        terms.push(Expr::v(i) * x.diff(&Symbol::q(i)));
    }
    Expr::add(terms)
}

fn at_zero_param(e: &Expr) -> Expr {
    e.substitute_one(&Symbol::param(), &Expr::zero()).expand()
}

/// `ξ = ∂t'/∂s|₀`, `η_i = ∂q'_i/∂s|₀`, with `G = 0`.
pub fn infinitesimal_of(fam: &PointFamily) -> InfGen {
    let s = Symbol::param();
    InfGen {
        xi: at_zero_param(&fam.tprime.diff(&s)),
        eta: fam.qprime.iter().map(|q| at_zero_param(&q.diff(&s))).collect(),
        gauge_rate: Expr::zero(),
    }
}

/// `G = ∂F/∂s|₀` for a family-level gauge function.
pub fn gauge_rate_of(gauge: &Expr) -> Expr {
    at_zero_param(&gauge.diff(&Symbol::param()))
}

/// `L(q', q̇', t') dt'/dt`.
pub fn pullback_lagrangian(sys: &Lagrangian, fam: &PointFamily) -> Result<Expr, SymmetryError> {
    if fam.n_dof != sys.n_dof() {
        return Err(SymmetryError::DofMismatch {
            found: fam.n_dof,
            n_dof: sys.n_dof(),
        });
    }
    let (vprime, dt) = fam.primed_velocities();
    let sampler = Sampler::default().with_fixed(sys.bindings());
    let mut bad = None;
    sampler.for_each_point(&[&dt], |point, v| {
        if v[0] <= 0.0 {
            bad = Some(point.get(&Symbol::t()).unwrap_or(f64::NAN));
        }
    })?;
    if let Some(t) = bad {
        return Err(SymmetryError::VanishingTimeRate { t });
    }
    let mut map: HashMap<Symbol, Expr> = HashMap::new();
    for (i, (q, v)) in fam.qprime.iter().zip(vprime).enumerate() {
        map.insert(Symbol::q(i), q.clone());
        map.insert(Symbol::v(i), v);
    }
    map.insert(Symbol::t(), fam.tprime.clone());
    Ok(sys.expr().substitute(&map) * dt)
}

fn kinematic(a: &Atom) -> bool {
    a.depends_on(&|s: &Symbol| s.is_kinematic())
}

fn velocity_atom(a: &Atom) -> bool {
    a.depends_on(&|s: &Symbol| matches!(s, Symbol::Var(Var::Vel(_))))
}

/// Drops groups of terms sharing a kinematic monomial whose combined
/// coefficient vanishes numerically (e.g. when bound constants satisfy a
/// relation the symbolic form does not know about).
fn prune_numeric_zeros(poly: &Poly, sampler: &Sampler) -> Result<Poly, SamplingError> {
    let mut groups: BTreeMap<Monomial, Vec<(Monomial, Rational)>> = BTreeMap::new();
    for (mono, c) in poly.terms() {
        let (kin, rest) = mono.split(kinematic);
        groups.entry(kin).or_default().push((rest, c.clone()));
    }
    let mut out = Poly::zero();
    for (kin, parts) in groups {
        let exprs: Vec<Expr> = parts
            .iter()
            .map(|(m, c)| Expr::mul([Expr::Num(c.clone()), m.to_expr()]))
            .collect();
        let refs: Vec<&Expr> = exprs.iter().collect();
        let mut vanishes = true;
        sampler.for_each_point(&refs, |_, v| {
            let sum: f64 = v.iter().sum();
            let scale: f64 = v.iter().map(|x| x.abs()).sum();
            if sum.abs() > sampler.tol * (1.0 + scale) {
                vanishes = false;
            }
        })?;
        if !vanishes {
            for (rest, c) in parts {
                out.add_term(kin.mul(&rest), c);
            }
        }
    }
    Ok(out)
}

/// Normal form used throughout: expanded, Pythagorean-reduced, with
/// numerically vanishing coefficient groups removed.
fn normalize(e: &Expr, sampler: &Sampler) -> Result<Poly, SamplingError> {
    prune_numeric_zeros(&Poly::from_expr(e).reduce_trig(), sampler)
}

/// Integrates the τ-polynomial part over `[0, 1]` (radial line integral) or
/// the `t` part over `[0, t]`.
fn integrate_monomials(poly: &Poly, var: &Symbol, upper_is_var: bool) -> Result<Poly, GaugeError> {
    let mut out = Poly::zero();
    for (mono, c) in poly.terms() {
        let (own, rest) = mono.split(|a| a.symbol() == Some(var));
        if rest.factors().iter().any(|(a, _)| a.depends_on(&|s: &Symbol| s == var)) {
            return Err(GaugeError::NonPolynomial(format!(
                "`{var}` appears inside `{}`",
                rest.to_expr()
            )));
        }
        let k = own.exponent_of(var);
        if k < 0 {
            return Err(GaugeError::NonPolynomial(format!("negative power of `{var}`")));
        }
        let coeff = c / Rational::from_integer((k + 1).into());
        let mono = if upper_is_var {
            rest.mul(&Monomial::atom(Atom::Sym(var.clone()), k + 1))
        } else {
            rest
        };
        out.add_term(mono, coeff);
    }
    Ok(out)
}

fn singular_zero_atom(poly: &Poly) -> bool {
    poly.terms().any(|(m, _)| {
        m.factors()
            .iter()
            .any(|(a, k)| *k < 0 && matches!(a, Atom::Opaque(e) if e.is_zero()))
    })
}

/// Finds `F(q, t)` with `dF/dt` equal to `residual`, normalized to
/// `F(0, 0) = 0`. `sampler` should hold the bound constants fixed.
pub fn extract_gauge(residual: &Expr, n_dof: usize, sampler: &Sampler) -> Result<Expr, GaugeError> {
    let poly = normalize(residual, sampler)?;

    // Split into Σ a_i v_i + b.
    let mut a = vec![Poly::zero(); n_dof];
    let mut b = Poly::zero();
    let mut nonlinear = Poly::zero();
    for (mono, c) in poly.terms() {
        let degree: i64 = (0..n_dof).map(|i| mono.exponent_of(&Symbol::v(i))).sum();
        let hidden = mono
            .factors()
            .iter()
            .any(|(atom, _)| atom.symbol().is_none() && velocity_atom(atom));
        if hidden || degree > 1 || degree < 0 {
            nonlinear.add_term(mono.clone(), c.clone());
        } else if degree == 1 {
            let i = (0..n_dof).find(|&i| mono.exponent_of(&Symbol::v(i)) == 1).unwrap();
            let (_, rest) = mono.split(|at| at.symbol() == Some(&Symbol::v(i)));
            a[i].add_term(rest, c.clone());
        } else {
            b.add_term(mono.clone(), c.clone());
        }
    }
    if !nonlinear.is_zero() {
        let norm = max_abs_residual(&nonlinear.to_expr(), sampler)?;
        return Err(GaugeError::NonlinearInVelocity { norm });
    }

    let a_expr: Vec<Expr> = a.iter().map(Poly::to_expr).collect();
    let b_expr = b.to_expr();

    // Closedness of the one-form Σ a_i dq_i + b dt.
    let mut defect: f64 = 0.0;
    for i in 0..n_dof {
        for j in (i + 1)..n_dof {
            let d = a_expr[i].diff(&Symbol::q(j)) - a_expr[j].diff(&Symbol::q(i));
            defect = defect.max(max_abs_residual(&d, sampler)?);
        }
        let d = a_expr[i].diff(&Symbol::t()) - b_expr.diff(&Symbol::q(i));
        defect = defect.max(max_abs_residual(&d, sampler)?);
    }
    if defect > sampler.tol {
        return Err(GaugeError::NotClosed { norm: defect });
    }

    // F = ∫₀¹ Σ a_i(τq, t) q_i dτ + ∫₀ᵗ b(0, τ) dτ.
    let tau = Symbol::constant("τ");
    let scaled: HashMap<Symbol, Expr> = (0..n_dof)
        .map(|i| (Symbol::q(i), Expr::Sym(tau.clone()) * Expr::q(i)))
        .collect();
    let radial = Expr::add(
        a_expr
            .iter()
            .enumerate()
            .map(|(i, ai)| ai.substitute(&scaled) * Expr::q(i)),
    );
    let radial = Poly::from_expr(&radial).reduce_trig();
    let spatial = integrate_monomials(&radial, &tau, false)?;

    let origin: HashMap<Symbol, Expr> = (0..n_dof).map(|i| (Symbol::q(i), Expr::zero())).collect();
    let b0 = Poly::from_expr(&b_expr.substitute(&origin)).reduce_trig();
    if singular_zero_atom(&b0) {
        return Err(GaugeError::NonPolynomial("singular at the origin".into()));
    }
    let temporal = integrate_monomials(&b0, &Symbol::t(), true)?;

    let gauge = spatial.add(&temporal).to_expr();
    let check = total_derivative(&gauge, n_dof) - residual;
    let norm = max_abs_residual(&check, sampler)?;
    let scale = 1.0 + max_abs_residual(residual, sampler)?;
    if norm > sampler.tol * scale {
        return Err(GaugeError::NotClosed { norm });
    }
    Ok(gauge)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateKind {
    ExactSymmetry,
    Equivalence,
    Failure,
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryCertificate {
    pub kind: CertificateKind,
    #[serde(serialize_with = "serialize_gauge")]
    pub gauge: Option<Expr>,
    pub residual_norm: f64,
    pub samples: usize,
    pub seed: u64,
    pub diagnostics: Vec<String>,
}

fn serialize_gauge<S: serde::Serializer>(g: &Option<Expr>, s: S) -> Result<S::Ok, S::Error> {
    match g {
        Some(e) => s.serialize_some(&e.to_string()),
        None => s.serialize_none(),
    }
}

impl SymmetryCertificate {
    pub fn passed(&self) -> bool {
        self.kind != CertificateKind::Failure
    }

    fn failure(sampler: &Sampler, residual_norm: f64, diagnostics: Vec<String>) -> Self {
        Self {
            kind: CertificateKind::Failure,
            gauge: None,
            residual_norm,
            samples: sampler.trials,
            seed: sampler.seed,
            diagnostics,
        }
    }
}

fn fixed_sampler(sampler: &Sampler, constants: &Bindings) -> Sampler {
    let mut fixed = sampler.fixed.clone();
    fixed.extend(constants);
    sampler.clone().with_fixed(fixed)
}

/// Max of `|residual − dF/dt|` and whether it is within tolerance relative to
/// the residual's own size.
fn gauge_defect(residual: &Expr, gauge: &Expr, n_dof: usize, sampler: &Sampler) -> Result<(f64, bool), SamplingError> {
    let d_gauge = total_derivative(gauge, n_dof);
    let norm = max_abs_residual(&(residual - &d_gauge), sampler)?;
    let ok = max_relative_deviation(residual, &d_gauge, sampler)? <= sampler.tol;
    Ok((norm, ok))
}

fn certify(
    residual: Expr,
    n_dof: usize,
    param: Option<&str>,
    family: Option<&PointFamily>,
    success: CertificateKind,
    sampler: &Sampler,
    spot_pullback: &dyn Fn(&PointFamily) -> Result<Expr, SymmetryError>,
) -> Result<SymmetryCertificate, SymmetryError> {
    let gauge = match extract_gauge(&residual, n_dof, sampler) {
        Ok(g) => g,
        Err(GaugeError::Sampling(e)) => return Err(e.into()),
        Err(err) => {
            let norm = match &err {
                GaugeError::NonlinearInVelocity { norm } | GaugeError::NotClosed { norm } => *norm,
                _ => max_abs_residual(&residual, sampler)?,
            };
            return Ok(SymmetryCertificate::failure(sampler, norm, vec![err.to_string()]));
        }
    };
    let (residual_norm, ok) = gauge_defect(&residual, &gauge, n_dof, sampler)?;
    let mut diagnostics = Vec::new();
    let mut all_ok = ok;
    if let (Some(fam), Some(name)) = (family, param) {
        for (n, d) in SPOT_CHECK_PARAMS {
            let value = Expr::ratio(n, d);
            let member = fam.at(&value);
            let pulled = spot_pullback(&member)?;
            let gauge_s = gauge.substitute_one(&Symbol::param(), &value);
            let (norm, ok) = gauge_defect(&pulled, &gauge_s, n_dof, sampler)?;
            let s_value = n as f64 / d as f64;
            if !ok {
                all_ok = false;
                diagnostics.push(format!("spot check {name} = {s_value} failed (defect {norm:.3e})"));
            }
        }
    }
    Ok(SymmetryCertificate {
        kind: if all_ok { success } else { CertificateKind::Failure },
        gauge: Some(gauge),
        residual_norm,
        samples: sampler.trials,
        seed: sampler.seed,
        diagnostics,
    })
}

/// Certifies `L(q', q̇', t') dt'/dt − L = dF/dt` with `F(q, t, s)`.
pub fn check_variational_symmetry(
    sys: &Lagrangian,
    fam: &PointFamily,
    sampler: &Sampler,
) -> Result<SymmetryCertificate, SymmetryError> {
    let sampler = fixed_sampler(sampler, &sys.bindings());
    let residual = pullback_lagrangian(sys, fam)? - sys.expr();
    certify(
        residual,
        sys.n_dof(),
        fam.param(),
        Some(fam),
        CertificateKind::ExactSymmetry,
        &sampler,
        &|member| Ok(pullback_lagrangian(sys, member)? - sys.expr()),
    )
}

/// Checks a user-supplied `F` against the same condition, for residuals
/// outside the reach of [`extract_gauge`].
pub fn check_with_gauge(
    sys: &Lagrangian,
    fam: &PointFamily,
    gauge: &Expr,
    sampler: &Sampler,
) -> Result<SymmetryCertificate, SymmetryError> {
    let sampler = fixed_sampler(sampler, &sys.bindings());
    let residual = pullback_lagrangian(sys, fam)? - sys.expr();
    let (residual_norm, ok) = gauge_defect(&residual, gauge, sys.n_dof(), &sampler)?;
    Ok(SymmetryCertificate {
        kind: if ok {
            CertificateKind::ExactSymmetry
        } else {
            CertificateKind::Failure
        },
        gauge: Some(gauge.clone()),
        residual_norm,
        samples: sampler.trials,
        seed: sampler.seed,
        diagnostics: vec!["gauge supplied by caller".into()],
    })
}

/// Rund–Trautman residual
/// `Σ ∂L/∂q_i η_i + Σ ∂L/∂v_i (dη_i/dt − v_i dξ/dt) + ∂L/∂t ξ + L dξ/dt − dG/dt`.
pub fn rund_trautman(sys: &Lagrangian, gen: &InfGen) -> Result<Expr, SymmetryError> {
    let n = sys.n_dof();
    if gen.eta.len() != n {
        return Err(SymmetryError::DofMismatch {
            found: gen.eta.len(),
            n_dof: n,
        });
    }
    let l = sys.expr();
    let momenta = conjugate_momenta(sys);
    let d_xi = total_derivative(&gen.xi, n);
    let mut terms = Vec::new();
    for i in 0..n {
        terms.push(l.diff(&Symbol::q(i)) * &gen.eta[i]);
        terms.push(&momenta[i] * (total_derivative(&gen.eta[i], n) - Expr::v(i) * &d_xi));
    }
    terms.push(l.diff(&Symbol::t()) * &gen.xi);
    terms.push(l * &d_xi);
    terms.push(-total_derivative(&gen.gauge_rate, n));
    Ok(Expr::add(terms))
}

/// Max sampled `|Rund–Trautman residual|`, bound constants held fixed.
pub fn check_infinitesimal(sys: &Lagrangian, gen: &InfGen, sampler: &Sampler) -> Result<f64, SymmetryError> {
    let residual = rund_trautman(sys, gen)?;
    let sampler = fixed_sampler(sampler, &sys.bindings());
    Ok(max_abs_residual(&residual, &sampler)?)
}

/// Certifies `L_a(q', q̇', t') dt'/dt = L_b + dF/dt`.
pub fn check_equivalence(
    sys_a: &Lagrangian,
    sys_b: &Lagrangian,
    fam: &PointFamily,
    sampler: &Sampler,
) -> Result<SymmetryCertificate, SymmetryError> {
    if sys_a.n_dof() != sys_b.n_dof() {
        return Err(SymmetryError::DofMismatch {
            found: sys_b.n_dof(),
            n_dof: sys_a.n_dof(),
        });
    }
    let mut constants = sys_b.bindings();
    constants.extend(&sys_a.bindings());
    let mut conflicts = Vec::new();
    for (name, va) in sys_a.constants() {
        if let Some(vb) = sys_b.constants().get(name) {
            if va != vb {
                conflicts.push(format!("constant `{name}` differs ({va} vs {vb}); using {va}"));
            }
        }
    }
    let sampler = fixed_sampler(sampler, &constants);
    let residual = pullback_lagrangian(sys_a, fam)? - sys_b.expr();
    let mut cert = certify(
        residual,
        sys_a.n_dof(),
        fam.param(),
        Some(fam),
        CertificateKind::Equivalence,
        &sampler,
        &|member| Ok(pullback_lagrangian(sys_a, member)? - sys_b.expr()),
    )?;
    cert.diagnostics.extend(conflicts);
    Ok(cert)
}

/// Evaluates `F` at a point, for callers outside the symbolic layer.
pub fn eval_gauge(gauge: &Expr, x: &[f64], t: f64, constants: &Bindings) -> Option<f64> {
    let mut b = constants.clone();
    b.set_state(x, &[], t);
    eval(gauge, &b).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{equal_numeric, parse_expr};

    fn gravity() -> Lagrangian {
        Lagrangian::parse("m/2*v1^2 - m*g*q1", 1, &[]).unwrap()
    }

    fn gravity_2d() -> Lagrangian {
        Lagrangian::parse("m/2*(v1^2 + v2^2) - m*g*q2", 2, &[]).unwrap()
    }

    fn galilean() -> PointFamily {
        PointFamily::parse(&["q1 - V*t"], "t", Some("V"), &[]).unwrap()
    }

    fn rotation_gravity() -> PointFamily {
        PointFamily::parse(
            &[
                "q1*cos(s) + q2*sin(s) + g*t^2/2*sin(s)",
                "-q1*sin(s) + q2*cos(s) + g*t^2/2*(cos(s) - 1)",
            ],
            "t",
            Some("s"),
            &[],
        )
        .unwrap()
    }

    fn same(a: &Expr, b: &Expr) -> bool {
        equal_numeric(a, b, &Sampler::default()).unwrap()
    }

    fn parse_with(param: &str, text: &str, n: usize) -> Expr {
        Parser::new(n).with_param(param).parse(text).unwrap()
    }

    #[test]
    fn infinitesimals() {
        let gen = infinitesimal_of(&galilean());
        assert!(gen.xi.is_zero());
        assert!(same(&gen.eta[0], &parse_expr("-t", 1).unwrap()));

        let gen = infinitesimal_of(&rotation_gravity());
        assert!(gen.xi.is_zero());
        assert!(same(&gen.eta[0], &parse_expr("q2 + g*t^2/2", 2).unwrap()));
        assert!(same(&gen.eta[1], &parse_expr("-q1", 2).unwrap()));

        let gen = infinitesimal_of(&PointFamily::identity(2));
        assert!(gen.xi.is_zero() && gen.eta.iter().all(Expr::is_zero));
    }

    #[test]
    fn family_must_start_at_identity() {
        let err = PointFamily::parse(&["q1 + 1 + s"], "t", Some("s"), &[]).unwrap_err();
        assert!(matches!(err, SymmetryError::NotIdentityAtZero { .. }));
        let err = PointFamily::parse(&["q1 + s*v1"], "t", Some("s"), &[]).unwrap_err();
        assert!(matches!(err, SymmetryError::VelocityDependent));
    }

    #[test]
    fn pullbacks() {
        let pulled = pullback_lagrangian(&gravity(), &galilean()).unwrap();
        let expected = parse_with("V", "m/2*(v1 - V)^2 - m*g*(q1 - V*t)", 1);
        assert!(same(&pulled, &expected));

        let pulled = pullback_lagrangian(&gravity(), &PointFamily::identity(1)).unwrap();
        assert!(same(&pulled, gravity().expr()));

        let free = Lagrangian::parse("m/2*v1^2", 1, &[]).unwrap();
        let accel = PointFamily::parse(&["q1 + g*t^2/2"], "t", None, &[]).unwrap();
        let pulled = pullback_lagrangian(&free, &accel).unwrap();
        assert!(same(&pulled, &parse_expr("m/2*(v1 + g*t)^2", 1).unwrap()));
    }

    #[test]
    fn reversed_time_is_rejected() {
        let fam = PointFamily::parse(&["q1"], "-t", None, &[]).unwrap();
        assert!(matches!(
            pullback_lagrangian(&gravity(), &fam),
            Err(SymmetryError::VanishingTimeRate { .. })
        ));
    }

    #[test]
    fn gauge_extraction_examples() {
        let s = Sampler::default();
        let r = parse_with("V", "-m*V*v1 + m*V^2/2 + m*g*V*t", 1);
        let f = extract_gauge(&r, 1, &s).unwrap();
        assert!(same(&f, &parse_with("V", "-m*V*q1 + m*V^2*t/2 + m*g*V*t^2/2", 1)));

        assert!(extract_gauge(&Expr::zero(), 1, &s).unwrap().is_zero());

        let r = parse_expr("m*g*t*v1 + m*g*q1 + m*g^2*t^2/2", 1).unwrap();
        let f = extract_gauge(&r, 1, &s).unwrap();
        assert!(same(&f, &parse_expr("m*g*t*q1 + m*g^2*t^3/6", 1).unwrap()));
    }

    #[test]
    fn gauge_extraction_failures() {
        let s = Sampler::default();
        let r = parse_expr("m*v1^2", 1).unwrap();
        assert!(matches!(extract_gauge(&r, 1, &s), Err(GaugeError::NonlinearInVelocity { .. })));
        let r = parse_expr("q2*v1", 2).unwrap();
        assert!(matches!(extract_gauge(&r, 2, &s), Err(GaugeError::NotClosed { .. })));
        let r = parse_expr("cos(q1)*v1", 1).unwrap();
        assert!(matches!(extract_gauge(&r, 1, &s), Err(GaugeError::NonPolynomial(_))));
    }

    #[test]
    fn gauge_normalized_at_origin() {
        let r = parse_expr("2*q1*v1 + 3*t^2 + q2*v1 + q1*v2", 2).unwrap();
        let f = extract_gauge(&r, 2, &Sampler::default()).unwrap();
        let b = Bindings::new()
            .with(Symbol::q(0), 0.0)
            .with(Symbol::q(1), 0.0)
            .with(Symbol::t(), 0.0);
        assert_eq!(eval(&f, &b).unwrap(), 0.0);
    }

    #[test]
    fn galilean_symmetry_certificate() {
        let cert = check_variational_symmetry(&gravity(), &galilean(), &Sampler::default()).unwrap();
        assert_eq!(cert.kind, CertificateKind::ExactSymmetry);
        let expected = parse_with("V", "-m*V*q1 + m*V^2*t/2 + m*g*V*t^2/2", 1);
        assert!(same(cert.gauge.as_ref().unwrap(), &expected));
    }

    #[test]
    fn rotation_gravity_certificate() {
        let cert = check_variational_symmetry(&gravity_2d(), &rotation_gravity(), &Sampler::default()).unwrap();
        assert_eq!(cert.kind, CertificateKind::ExactSymmetry, "{:?}", cert.diagnostics);
        let expected = parse_expr("m*g*(t*q2*(1 - cos(s)) + t*q1*sin(s) + g*t^3/2*(1 - cos(s)))", 2).unwrap();
        assert!(same(cert.gauge.as_ref().unwrap(), &expected));

        let gen = infinitesimal_of(&rotation_gravity()).with_gauge_rate(gauge_rate_of(cert.gauge.as_ref().unwrap()));
        assert!(same(&gen.gauge_rate, &parse_expr("m*g*t*q1", 2).unwrap()));
        assert!(check_infinitesimal(&gravity_2d(), &gen, &Sampler::default()).unwrap() < 1e-10);
    }

    #[test]
    fn free_rotation_has_zero_gauge() {
        let free = Lagrangian::parse("m/2*(v1^2 + v2^2)", 2, &[]).unwrap();
        let rot = PointFamily::parse(&["q1*cos(s) - q2*sin(s)", "q1*sin(s) + q2*cos(s)"], "t", Some("s"), &[]).unwrap();
        let cert = check_variational_symmetry(&free, &rot, &Sampler::default()).unwrap();
        assert_eq!(cert.kind, CertificateKind::ExactSymmetry);
        assert!(cert.gauge.unwrap().is_zero());
    }

    #[test]
    fn scaling_is_not_a_symmetry() {
        let free = Lagrangian::parse("m/2*v1^2", 1, &[]).unwrap();
        let fam = PointFamily::parse(&["q1*exp(s)"], "t", Some("s"), &[]).unwrap();
        let cert = check_variational_symmetry(&free, &fam, &Sampler::default()).unwrap();
        assert_eq!(cert.kind, CertificateKind::Failure);
        assert!(cert.residual_norm > 0.0);

        let gen = InfGen::new(Expr::zero(), vec![Expr::q(0)], Expr::zero());
        assert!(check_infinitesimal(&free, &gen, &Sampler::default()).unwrap() > 1e-3);
    }

    #[test]
    fn rund_trautman_examples() {
        let gen = InfGen::new(Expr::zero(), vec![parse_expr("-t", 1).unwrap()], parse_expr("-m*q1 + m*g*t^2/2", 1).unwrap());
        assert!(check_infinitesimal(&gravity(), &gen, &Sampler::default()).unwrap() < 1e-12);
        let gen = InfGen::new(
            Expr::zero(),
            vec![parse_expr("q2 + g*t^2/2", 2).unwrap(), parse_expr("-q1", 2).unwrap()],
            parse_expr("m*g*t*q1", 2).unwrap(),
        );
        assert!(check_infinitesimal(&gravity_2d(), &gen, &Sampler::default()).unwrap() < 1e-12);
        let free = Lagrangian::parse("m/2*v1^2", 1, &[]).unwrap();
        let time = InfGen::new(Expr::one(), vec![Expr::zero()], Expr::zero());
        assert!(check_infinitesimal(&free, &time, &Sampler::default()).unwrap() < 1e-12);
    }

    #[test]
    fn equivalences() {
        let free = Lagrangian::parse("m/2*v1^2", 1, &[]).unwrap();
        let accel = PointFamily::parse(&["q1 + g*t^2/2"], "t", None, &[]).unwrap();
        let cert = check_equivalence(&free, &gravity(), &accel, &Sampler::default()).unwrap();
        assert_eq!(cert.kind, CertificateKind::Equivalence);
        assert!(same(cert.gauge.as_ref().unwrap(), &parse_expr("m*g*t*q1 + m*g^2*t^3/6", 1).unwrap()));

        let cert = check_equivalence(&gravity(), &gravity(), &PointFamily::identity(1), &Sampler::default()).unwrap();
        assert!(cert.gauge.unwrap().is_zero());
    }

    fn oscillator_pair(omega: f64) -> (Lagrangian, Lagrangian) {
        let osc = Lagrangian::parse(
            "m/2*(v1^2 + v2^2) - m*omega^2/2*(q1^2 + q2^2)",
            2,
            &[("m", 1.0), ("omega", omega)],
        )
        .unwrap();
        let mag = Lagrangian::parse(
            "m/2*(v1^2 + v2^2) + e*B0/(2*c)*(q1*v2 - q2*v1)",
            2,
            &[("m", 1.0), ("e", 1.0), ("c", 1.0), ("B0", 2.0)],
        )
        .unwrap();
        (osc, mag)
    }

    fn rotating_frame() -> PointFamily {
        PointFamily::parse(
            &["q1*cos(omega*t) - q2*sin(omega*t)", "q1*sin(omega*t) + q2*cos(omega*t)"],
            "t",
            None,
            &[],
        )
        .unwrap()
    }

    #[test]
    fn oscillator_magnetic_equivalence_and_detuning() {
        let (osc, mag) = oscillator_pair(1.0);
        let cert = check_equivalence(&osc, &mag, &rotating_frame(), &Sampler::default()).unwrap();
        assert_eq!(cert.kind, CertificateKind::Equivalence, "{:?}", cert.diagnostics);
        assert!(cert.gauge.unwrap().is_zero());

        let (osc, mag) = oscillator_pair(1.1);
        let cert = check_equivalence(&osc, &mag, &rotating_frame(), &Sampler::default()).unwrap();
        assert_eq!(cert.kind, CertificateKind::Failure);
        assert!(cert.residual_norm > 1e-3);
    }

    #[test]
    fn unimodular_gate() {
        let s = Sampler::default();
        assert!(galilean().at_f64(0.7).check_unimodular(&s).is_ok());
        assert!(rotation_gravity().at_f64(0.3).check_unimodular(&s).is_ok());
        let scale = PointFamily::parse(&["2*q1"], "t", None, &[]).unwrap();
        assert!(matches!(scale.check_unimodular(&s), Err(SymmetryError::NotUnimodular { .. })));
        let dilate = PointFamily::parse(&["q1"], "2*t", None, &[]).unwrap();
        assert!(matches!(dilate.check_unimodular(&s), Err(SymmetryError::NotUnimodular { .. })));
    }
}
