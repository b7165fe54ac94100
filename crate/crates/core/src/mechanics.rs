//! Lagrangian systems: conjugate momenta, Euler–Lagrange accelerations, RK4
//! trajectories and Noether charges.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{
    equal_numeric, eval, Bindings, EvalError, Expr, ParseError, Parser, Sampler, SamplingError,
    Symbol,
};
use crate::symmetry::InfGen;

#[derive(Debug, Error)]
pub enum MechanicsError {
    #[error("Lagrangian must not depend on the group parameter")]
    ContainsParameter,
    #[error("expression refers to degree of freedom {index} but the system has {n_dof}")]
    DofMismatch { index: usize, n_dof: usize },
    #[error("velocity Hessian is singular at t = {t}")]
    SingularHessian { t: f64 },
    #[error("generator has {found} components, system has {n_dof} degrees of freedom")]
    GeneratorShape { found: usize, n_dof: usize },
    #[error("trajectory needs at least one step")]
    NoSteps,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// A Lagrangian `L(q, v, t)` with optional numeric constant values.
#[derive(Debug, Clone)]
pub struct Lagrangian {
    n_dof: usize,
    expr: Expr,
    constants: BTreeMap<String, f64>,
}

impl Lagrangian {
    pub fn new(
        n_dof: usize,
        expr: Expr,
        constants: BTreeMap<String, f64>,
    ) -> Result<Self, MechanicsError> {
        if expr.contains(&Symbol::param()) {
            return Err(MechanicsError::ContainsParameter);
        }
        let index = expr.max_dof_index();
        if index > n_dof {
            return Err(MechanicsError::DofMismatch { index, n_dof });
        }
        Ok(Self { n_dof, expr, constants })
    }

    /// Parses `text`; constant names in `constants` are admitted alongside
    /// the defaults.
    pub fn parse(
        text: &str,
        n_dof: usize,
        constants: &[(&str, f64)],
    ) -> Result<Self, MechanicsError> {
        let constants: BTreeMap<String, f64> =
            constants.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let parser = Parser::new(n_dof).with_constants(constants.keys().cloned());
        let expr = parser.parse(text)?;
        Self::new(n_dof, expr, constants)
    }

    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }

    pub fn bindings(&self) -> Bindings {
        Bindings::with_constants(&self.constants)
    }

    /// `∂²L/∂v_i∂v_j`.
    pub fn velocity_hessian(&self) -> Vec<Vec<Expr>> {
        let momenta = conjugate_momenta(self);
        momenta
            .iter()
            .map(|p| (0..self.n_dof).map(|j| p.diff(&Symbol::v(j))).collect())
            .collect()
    }

    /// Checks that the velocity Hessian is invertible at random points.
    pub fn check_regular(&self, sampler: &Sampler) -> Result<(), MechanicsError> {
        let hessian = self.velocity_hessian();
        let flat: Vec<&Expr> = hessian.iter().flatten().collect();
        let sampler = sampler.clone().with_fixed(self.bindings());
        let n = self.n_dof;
        let mut singular_at = None;
        sampler.for_each_point(&flat, |point, values| {
            let m = DMatrix::from_row_slice(n, n, values);
            if m.determinant().abs() < 1e-12 {
                singular_at = Some(point.get(&Symbol::t()).unwrap_or(f64::NAN));
            }
        })?;
        match singular_at {
            Some(t) => Err(MechanicsError::SingularHessian { t }),
            None => Ok(()),
        }
    }
}

/// `p_i = ∂L/∂v_i`.
pub fn conjugate_momenta(sys: &Lagrangian) -> Vec<Expr> {
    (0..sys.n_dof).map(|i| sys.expr.diff(&Symbol::v(i))).collect()
}

/// Accelerations `a(q, v, t)` from the Euler–Lagrange equations
/// `W a = ∂L/∂q − (∂²L/∂v∂q) v − ∂²L/∂v∂t`, `W = ∂²L/∂v∂v`.
#[derive(Debug, Clone)]
pub enum Accelerations {
    /// Constant diagonal `W`: closed-form expressions.
    Explicit(Vec<Expr>),
    /// General `W`: solved per evaluation point.
    Implicit {
        hessian: Vec<Vec<Expr>>,
        rhs: Vec<Expr>,
    },
}

impl Accelerations {
    pub fn explicit(&self) -> Option<&[Expr]> {
        match self {
            Accelerations::Explicit(a) => Some(a),
            Accelerations::Implicit { .. } => None,
        }
    }

    pub fn eval(&self, bindings: &Bindings) -> Result<Vec<f64>, MechanicsError> {
        match self {
            Accelerations::Explicit(a) => a
                .iter()
                .map(|e| eval(e, bindings).map_err(MechanicsError::from))
                .collect(),
            Accelerations::Implicit { hessian, rhs } => {
                let n = rhs.len();
                let mut w = DMatrix::zeros(n, n);
                for (i, row) in hessian.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        w[(i, j)] = eval(e, bindings)?;
                    }
                }
                let b = DVector::from_iterator(
                    n,
                    rhs.iter()
                        .map(|e| eval(e, bindings))
                        .collect::<Result<Vec<_>, _>>()?,
                );
                let t = bindings.get(&Symbol::t()).unwrap_or(f64::NAN);
                let solution = w.lu().solve(&b).ok_or(MechanicsError::SingularHessian { t })?;
                Ok(solution.iter().copied().collect())
            }
        }
    }
}

fn is_kinematic_free(e: &Expr) -> bool {
    !e.contains_any(&|s: &Symbol| s.is_kinematic())
}

pub fn euler_lagrange(sys: &Lagrangian) -> Result<Accelerations, MechanicsError> {
    let n = sys.n_dof;
    let momenta = conjugate_momenta(sys);
    let hessian = sys.velocity_hessian();
    let rhs: Vec<Expr> = (0..n)
        .map(|i| {
            let mut terms = vec![sys.expr.diff(&Symbol::q(i))];
            for j in 0..n {
                terms.push(-(momenta[i].diff(&Symbol::q(j)) * Expr::v(j)));
            }
            terms.push(-momenta[i].diff(&Symbol::t()));
            Expr::add(terms).expand()
        })
        .collect();

    let constant_diagonal = hessian.iter().enumerate().all(|(i, row)| {
        row.iter().enumerate().all(|(j, w)| {
            let w = w.expand();
            if i == j {
                is_kinematic_free(&w) && !w.is_zero()
            } else {
                w.is_zero()
            }
        })
    });
    if constant_diagonal {
        let acc = rhs
            .iter()
            .enumerate()
            .map(|(i, r)| (r / &hessian[i][i]).expand())
            .collect();
        return Ok(Accelerations::Explicit(acc));
    }
    sys.check_regular(&Sampler::default())?;
    Ok(Accelerations::Implicit { hessian, rhs })
}

/// Phase-space point `(q, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub step: f64,
    pub integrator: &'static str,
}

impl Trajectory {
    pub fn n_dof(&self) -> usize {
        self.states.first().map_or(0, |s| s.q.len())
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// CSV with header `t,q1..qn,v1..vn`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.n_dof();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("q{i}")));
        header.extend((1..=n).map(|i| format!("v{i}")));
        writeln!(out, "{}", header.join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let mut row = vec![t.to_string()];
            row.extend(s.q.iter().map(f64::to_string));
            row.extend(s.v.iter().map(f64::to_string));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Classical fourth-order Runge–Kutta with `steps` uniform steps.
pub fn integrate_trajectory(
    sys: &Lagrangian,
    q0: &[f64],
    v0: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<Trajectory, MechanicsError> {
    let n = sys.n_dof;
    if steps == 0 {
        return Err(MechanicsError::NoSteps);
    }
    for len in [q0.len(), v0.len()] {
        if len != n {
            return Err(MechanicsError::DofMismatch { index: len, n_dof: n });
        }
    }
    let acc = euler_lagrange(sys)?;
    let mut bindings = sys.bindings();
    let mut deriv = |q: &[f64], v: &[f64], t: f64| -> Result<Vec<f64>, MechanicsError> {
        bindings.set_state(q, v, t);
        acc.eval(&bindings)
    };

    let h = (t1 - t0) / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut q = q0.to_vec();
    let mut v = v0.to_vec();
    times.push(t0);
    states.push(State { q: q.clone(), v: v.clone() });
    let axpy = |x: &[f64], k: &[f64], c: f64| -> Vec<f64> {
        x.iter().zip(k).map(|(a, b)| a + c * b).collect()
    };
    for step in 0..steps {
        let t = t0 + step as f64 * h;
        let k1q = v.clone();
        let k1v = deriv(&q, &v, t)?;
        let (q2, v2) = (axpy(&q, &k1q, h / 2.0), axpy(&v, &k1v, h / 2.0));
        let k2q = v2.clone();
        let k2v = deriv(&q2, &v2, t + h / 2.0)?;
        let (q3, v3) = (axpy(&q, &k2q, h / 2.0), axpy(&v, &k2v, h / 2.0));
        let k3q = v3.clone();
        let k3v = deriv(&q3, &v3, t + h / 2.0)?;
        let (q4, v4) = (axpy(&q, &k3q, h), axpy(&v, &k3v, h));
        let k4q = v4.clone();
        let k4v = deriv(&q4, &v4, t + h)?;
        for i in 0..n {
            q[i] += h / 6.0 * (k1q[i] + 2.0 * k2q[i] + 2.0 * k3q[i] + k4q[i]);
            v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        times.push(t0 + (step + 1) as f64 * h);
        states.push(State { q: q.clone(), v: v.clone() });
    }
    Ok(Trajectory {
        times,
        states,
        step: h,
        integrator: "rk4",
    })
}

/// `Σ p_i η_i + ξ (L − Σ p_i v_i) − G`.
pub fn noether_charge(sys: &Lagrangian, gen: &InfGen) -> Result<Expr, MechanicsError> {
    if gen.eta.len() != sys.n_dof {
        return Err(MechanicsError::GeneratorShape {
            found: gen.eta.len(),
            n_dof: sys.n_dof,
        });
    }
    let momenta = conjugate_momenta(sys);
    let p_dot_v = Expr::add(momenta.iter().enumerate().map(|(i, p)| p * Expr::v(i)));
    let mut terms: Vec<Expr> = momenta.iter().zip(&gen.eta).map(|(p, eta)| p * eta).collect();
    terms.push(&gen.xi * (sys.expr.clone() - p_dot_v));
    terms.push(-gen.gauge_rate.clone());
    Ok(Expr::add(terms).expand())
}

/// Max over the trajectory of `|C(t) − C(t0)| / (1 + |C(t0)|)`.
pub fn check_charge_conserved(
    sys: &Lagrangian,
    charge: &Expr,
    traj: &Trajectory,
) -> Result<f64, MechanicsError> {
    let mut bindings = sys.bindings();
    let mut values = traj.times.iter().zip(&traj.states).map(|(t, s)| {
        bindings.set_state(&s.q, &s.v, *t);
        eval(charge, &bindings)
    });
    let c0 = match values.next() {
        Some(v) => v?,
        None => return Ok(0.0),
    };
    let mut drift: f64 = 0.0;
    for v in values {
        drift = drift.max((v? - c0).abs() / (1.0 + c0.abs()));
    }
    Ok(drift)
}

/// Angular momentum `m (q1 v2 − q2 v1)` for planar systems.
pub fn planar_angular_momentum(mass: &Expr) -> Expr {
    mass * (Expr::q(0) * Expr::v(1) - Expr::q(1) * Expr::v(0))
}

/// Equality of two charges as expressions, constants sampled unless bound.
pub fn charges_agree(sys: &Lagrangian, a: &Expr, b: &Expr, sampler: &Sampler) -> Result<bool, MechanicsError> {
    let sampler = sampler.clone().with_fixed(sys.bindings());
    Ok(equal_numeric(a, b, &sampler)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn gravity() -> Lagrangian {
        Lagrangian::parse("m/2*v1^2 - m*g*q1", 1, &[("m", 1.0), ("g", 1.0)]).unwrap()
    }

    fn same(a: &Expr, b: &str, n: usize) -> bool {
        equal_numeric(a, &parse_expr(b, n).unwrap(), &Sampler::default()).unwrap()
    }

    #[test]
    fn momenta() {
        let p = conjugate_momenta(&gravity());
        assert!(same(&p[0], "m*v1", 1));
        let sys = Lagrangian::parse("m/2*(v1^2 + v2^2) - m*g*q2", 2, &[]).unwrap();
        let p = conjugate_momenta(&sys);
        assert!(same(&p[0], "m*v1", 2) && same(&p[1], "m*v2", 2));
        let sys = Lagrangian::parse("m/2*(v1^2 + v2^2) + e*B0/(2*c)*(q1*v2 - q2*v1)", 2, &[]).unwrap();
        let p = conjugate_momenta(&sys);
        assert!(same(&p[0], "m*v1 - e*B0/(2*c)*q2", 2));
        assert!(same(&p[1], "m*v2 + e*B0/(2*c)*q1", 2));
    }

    #[test]
    fn accelerations() {
        let acc = euler_lagrange(&gravity()).unwrap();
        assert!(same(&acc.explicit().unwrap()[0], "-g", 1));
        let free = Lagrangian::parse("m/2*v1^2", 1, &[]).unwrap();
        assert!(euler_lagrange(&free).unwrap().explicit().unwrap()[0].is_zero());
        let osc = Lagrangian::parse("m/2*(v1^2 + v2^2) - m*omega^2/2*(q1^2 + q2^2)", 2, &[]).unwrap();
        let acc = euler_lagrange(&osc).unwrap();
        let a = acc.explicit().unwrap();
        assert!(same(&a[0], "-omega^2*q1", 2) && same(&a[1], "-omega^2*q2", 2));
    }

    #[test]
    fn position_dependent_mass_uses_pointwise_solve() {
        let sys = Lagrangian::parse("(2 + q1^2)*v1^2/2", 1, &[]).unwrap();
        let acc = euler_lagrange(&sys).unwrap();
        assert!(acc.explicit().is_none());
        // (2 + q^2) a + q v^2 = 0  =>  a = -q v^2 / (2 + q^2)
        let b = Bindings::new().with(Symbol::q(0), 1.0).with(Symbol::v(0), 2.0).with(Symbol::t(), 0.0);
        let a = acc.eval(&b).unwrap()[0];
        assert!((a + 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_hessian_is_reported() {
        let sys = Lagrangian::parse("q1*v1 - q1^2", 1, &[]).unwrap();
        assert!(matches!(euler_lagrange(&sys), Err(MechanicsError::SingularHessian { .. })));
    }

    #[test]
    fn rejects_parameter_and_bad_indices() {
        let e = parse_expr("s*v1^2", 1).unwrap();
        assert!(matches!(
            Lagrangian::new(1, e, BTreeMap::new()),
            Err(MechanicsError::ContainsParameter)
        ));
        let e = parse_expr("v2^2", 2).unwrap();
        assert!(matches!(
            Lagrangian::new(1, e, BTreeMap::new()),
            Err(MechanicsError::DofMismatch { .. })
        ));
    }

    #[test]
    fn rk4_closed_form_cases() {
        let free = Lagrangian::parse("m/2*v1^2", 1, &[("m", 1.0)]).unwrap();
        let tr = integrate_trajectory(&free, &[0.0], &[1.0], 0.0, 1.0, 100).unwrap();
        assert!((tr.last().q[0] - 1.0).abs() < 1e-10);

        let tr = integrate_trajectory(&gravity(), &[0.0], &[0.0], 0.0, 1.0, 100).unwrap();
        assert!((tr.last().q[0] + 0.5).abs() < 1e-8);

        let osc = Lagrangian::parse("m/2*v1^2 - m*omega^2/2*q1^2", 1, &[("m", 1.0), ("omega", 1.0)]).unwrap();
        let tr = integrate_trajectory(&osc, &[1.0], &[0.0], 0.0, std::f64::consts::PI, 1000).unwrap();
        assert!((tr.last().q[0] + 1.0).abs() < 1e-6);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rk4_is_fourth_order() {
        let osc = Lagrangian::parse("v1^2/2 - q1^2/2", 1, &[]).unwrap();
        let err = |steps| {
            let tr = integrate_trajectory(&osc, &[1.0], &[0.0], 0.0, 2.0, steps).unwrap();
            (tr.last().q[0] - 2.0f64.cos()).abs()
        };
        let ratio = err(20) / err(40);
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(matches!(
            integrate_trajectory(&gravity(), &[0.0], &[0.0], 0.0, 1.0, 0),
            Err(MechanicsError::NoSteps)
        ));
    }

    #[test]
    fn time_translation_charge_is_minus_energy() {
        let free = Lagrangian::parse("m/2*v1^2", 1, &[]).unwrap();
        let gen = InfGen::new(Expr::one(), vec![Expr::zero()], Expr::zero());
        let c = noether_charge(&free, &gen).unwrap();
        assert!(same(&c, "-m*v1^2/2", 1));
    }

    #[test]
    fn galilean_charge() {
        let parser = Parser::new(1);
        let gen = InfGen::new(
            Expr::zero(),
            vec![parser.parse("-t").unwrap()],
            parser.parse("-m*q1 + m*g*t^2/2").unwrap(),
        );
        let c = noether_charge(&gravity(), &gen).unwrap();
        assert!(same(&c, "-m*v1*t + m*q1 - m*g*t^2/2", 1));
        let tr = integrate_trajectory(&gravity(), &[0.3], &[-0.7], 0.0, 2.0, 1000).unwrap();
        assert!(check_charge_conserved(&gravity(), &c, &tr).unwrap() < 1e-8);
    }

    #[test]
    fn momentum_drift_on_free_particle() {
        let free = Lagrangian::parse("m/2*v1^2", 1, &[("m", 2.0)]).unwrap();
        let tr = integrate_trajectory(&free, &[0.1], &[0.5], 0.0, 3.0, 50).unwrap();
        let p = parse_expr("m*v1", 1).unwrap();
        assert!(check_charge_conserved(&free, &p, &tr).unwrap() < 1e-12);
    }

    #[test]
    fn csv_header() {
        let sys = Lagrangian::parse("m/2*(v1^2 + v2^2) - m*g*q2", 2, &[("m", 1.0), ("g", 1.0)]).unwrap();
        let tr = integrate_trajectory(&sys, &[0.0, 0.0], &[1.0, 0.0], 0.0, 1.0, 4).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,q1,q2,v1,v2\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
