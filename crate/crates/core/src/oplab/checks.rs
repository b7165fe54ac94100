use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{build_operator, crank_nicolson_evolve, evolution_matrix, Hamiltonian, OpLabError, OperatorSpec};
use crate::expr::{eval, Bindings, Expr, Symbol};
use crate::propagator::{Grid1D, Wavepacket};

const EDGE_POINTS: usize = 5;
const EDGE_TOLERANCE: f64 = 1e-8;
const POWER_ITERATIONS: usize = 50;
const POWER_SEED: u64 = 0x0b5e_55ed;

fn norm(psi: &[Complex64], dx: f64) -> f64 {
    (psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * dx).sqrt()
}

fn sub(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn edge_weight(psi: &[Complex64], dx: f64) -> f64 {
    let n = psi.len();
    let k = EDGE_POINTS.min(n / 2);
    psi[..k].iter().chain(&psi[n - k..]).map(|z| z.norm_sqr()).sum::<f64>() * dx
}

/// Unit Gaussians (σ = 1) at five centres across the middle 60% of the
/// grid, each with momenta −1, 0, 1. Used to measure operator identities
/// away from the Dirichlet edges.
pub fn gaussian_probes(grid: Grid1D, hbar: f64) -> Vec<Wavepacket> {
    let mid = 0.5 * (grid.xmin + grid.xmax);
    let half = 0.5 * (grid.xmax - grid.xmin);
    let mut out = Vec::new();
    for i in 0..5 {
        let c = mid - 0.3 * half + 0.15 * half * i as f64;
        for p in [-1.0, 0.0, 1.0] {
            out.push(Wavepacket::gaussian(grid, c, 1.0, p, hbar));
        }
    }
    out
}

/// Largest singular value of `M` by power iteration on `M†M`.
pub fn operator_norm(
    n: usize,
    apply: impl Fn(&[Complex64]) -> Vec<Complex64>,
    adjoint: impl Fn(&[Complex64]) -> Vec<Complex64>,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let len = norm(&v, 1.0);
        if len == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|z| *z /= len);
        let mv = apply(&v);
        sigma = norm(&mv, 1.0);
        v = adjoint(&mv);
    }
    sigma
}

#[derive(Debug, Clone)]
pub struct ConservedReport {
    /// `(t, Re⟨ψ(t)|A(t)|ψ(t)⟩)` at every step.
    pub series: Vec<(f64, f64)>,
    pub initial: f64,
    /// `max |⟨A⟩(t) − ⟨A⟩(t0)| / (1 + |⟨A⟩(t0)|)`.
    pub max_drift: f64,
    pub max_norm_drift: f64,
    /// Set when more than `1e-8` of the norm sits within five points of an edge.
    pub boundary_warning: bool,
}

/// Tracks `⟨A(t)⟩` along a Crank–Nicolson trajectory.
pub fn check_conserved(
    spec: &OperatorSpec,
    h: &Hamiltonian,
    psi0: &Wavepacket,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<ConservedReport, OpLabError> {
    let traj = crank_nicolson_evolve(h, psi0, t0, t1, steps)?;
    let grid = traj.grid;
    let dx = grid.dx();
    let series = traj
        .times
        .par_iter()
        .zip(&traj.states)
        .map(|(&t, psi)| {
            let a = build_operator(spec, grid, t, h.hbar, h.order)?;
            Ok((t, a.expectation(psi).re))
        })
        .collect::<Result<Vec<_>, OpLabError>>()?;
    let initial = series[0].1;
    let scale = 1.0 + initial.abs();
    let max_drift = series.iter().map(|(_, a)| (a - initial).abs() / scale).fold(0.0, f64::max);
    let boundary_warning = traj.states.iter().any(|psi| edge_weight(psi, dx) > EDGE_TOLERANCE);
    Ok(ConservedReport {
        series,
        initial,
        max_drift,
        max_norm_drift: traj.max_step_norm_drift,
        boundary_warning,
    })
}

#[derive(Debug, Clone)]
pub struct MatrixReport {
    pub n: usize,
    /// Worst probe ratio `‖(X(t1)U − U Y(t0))ψ‖ / ‖reference ψ‖`.
    pub probe_deviation: f64,
    /// Same identity as an operator norm ratio over the whole grid.
    pub full_norm_ratio: f64,
}

/// `A(t1)U = U A(t0)` on the dense evolution matrix.
pub fn check_conserved_matrix(
    spec: &OperatorSpec,
    h: &Hamiltonian,
    grid: Grid1D,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<MatrixReport, OpLabError> {
    let u = evolution_matrix(h, grid, t0, t1, steps)?;
    let a0 = build_operator(spec, grid, t0, h.hbar, h.order)?;
    let a1 = build_operator(spec, grid, t1, h.hbar, h.order)?;
    let dx = grid.dx();
    let commutator = |psi: &[Complex64]| sub(&a1.apply(&u.apply(psi)), &u.apply(&a0.apply(psi)));
    let commutator_adj = |psi: &[Complex64]| sub(&u.apply_adjoint(&a1.apply(psi)), &a0.apply(&u.apply_adjoint(psi)));
    let probe_deviation = gaussian_probes(grid, h.hbar)
        .iter()
        .map(|p| norm(&commutator(&p.values), dx) / norm(&a0.apply(&p.values), dx))
        .fold(0.0, f64::max);
    let a0_norm = operator_norm(grid.n, |v| a0.apply(v), |v| a0.apply(v));
    let full = operator_norm(grid.n, commutator, commutator_adj);
    Ok(MatrixReport {
        n: grid.n,
        probe_deviation,
        full_norm_ratio: full / a0_norm,
    })
}

/// `(T(t)ψ)(x) = exp[(i/ħ) φ(x, t)] ψ(x − Vt)`, with the translation realized
/// as an exact shift by whole grid points (zero fill at the edges).
#[derive(Debug, Clone)]
pub struct PhaseShiftOperator {
    /// `φ` as an expression in `q1`, `t` and constants.
    pub phase: Expr,
    pub velocity: f64,
    pub hbar: f64,
    pub constants: Bindings,
}

impl PhaseShiftOperator {
    pub fn new(phase: Expr, velocity: f64, hbar: f64, constants: Bindings) -> Self {
        Self {
            phase,
            velocity,
            hbar,
            constants,
        }
    }

    fn shift(&self, grid: Grid1D, t: f64) -> Result<isize, OpLabError> {
        let s = self.velocity * t / grid.dx();
        let r = s.round();
        if (s - r).abs() > 1e-9 {
            return Err(OpLabError::NonIntegerShift { shift: s, t });
        }
        Ok(r as isize)
    }

    fn phases(&self, grid: Grid1D, t: f64) -> Result<Vec<Complex64>, OpLabError> {
        let mut b = self.constants.clone().with(Symbol::t(), t);
        grid.points()
            .into_iter()
            .map(|x| {
                b.set(Symbol::q(0), x);
                Ok(Complex64::from_polar(1.0, eval(&self.phase, &b)? / self.hbar))
            })
            .collect()
    }

    pub fn apply(&self, grid: Grid1D, t: f64, psi: &[Complex64]) -> Result<Vec<Complex64>, OpLabError> {
        let s = self.shift(grid, t)?;
        let phases = self.phases(grid, t)?;
        let n = grid.n as isize;
        Ok((0..n)
            .map(|j| {
                let src = j - s;
                if (0..n).contains(&src) {
                    phases[j as usize] * psi[src as usize]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect())
    }

    pub fn apply_adjoint(&self, grid: Grid1D, t: f64, psi: &[Complex64]) -> Result<Vec<Complex64>, OpLabError> {
        let s = self.shift(grid, t)?;
        let phases = self.phases(grid, t)?;
        let n = grid.n as isize;
        Ok((0..n)
            .map(|k| {
                let dst = k + s;
                if (0..n).contains(&dst) {
                    phases[dst as usize].conj() * psi[dst as usize]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct SymmetryReport {
    pub n: usize,
    /// Worst probe ratio `‖(T(t1)U − U T(t0))ψ‖ / ‖Uψ‖`.
    pub deviation: f64,
    /// `‖T(t1)U − U T(t0)‖ / ‖U‖` over the whole grid, edge effects included.
    pub full_norm_ratio: f64,
}

/// `T(t1)U(t1, t0) = U(t1, t0)T(t0)` on the dense evolution matrix.
pub fn check_symmetry_operator(
    op: &PhaseShiftOperator,
    h: &Hamiltonian,
    grid: Grid1D,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<SymmetryReport, OpLabError> {
    op.shift(grid, t0)?;
    op.shift(grid, t1)?;
    let u = evolution_matrix(h, grid, t0, t1, steps)?;
    let dx = grid.dx();
    let defect = |psi: &[Complex64]| -> Vec<Complex64> {
        let left = op.apply(grid, t1, &u.apply(psi)).expect("shift checked");
        let right = u.apply(&op.apply(grid, t0, psi).expect("shift checked"));
        sub(&left, &right)
    };
    let defect_adj = |psi: &[Complex64]| -> Vec<Complex64> {
        let left = u.apply_adjoint(&op.apply_adjoint(grid, t1, psi).expect("shift checked"));
        let right = op.apply_adjoint(grid, t0, &u.apply_adjoint(psi)).expect("shift checked");
        sub(&left, &right)
    };
    let deviation = gaussian_probes(grid, h.hbar)
        .iter()
        .map(|p| norm(&defect(&p.values), dx) / norm(&u.apply(&p.values), dx))
        .fold(0.0, f64::max);
    let u_norm = operator_norm(grid.n, |v| u.apply(v), |v| u.apply_adjoint(v));
    let full = operator_norm(grid.n, defect, defect_adj);
    Ok(SymmetryReport {
        n: grid.n,
        deviation,
        full_norm_ratio: full / u_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Parser;

    fn gravity(order: usize) -> Hamiltonian {
        let c = Bindings::new().with(Symbol::constant("m"), 1.0).with(Symbol::constant("g"), 1.0);
        let v = Parser::new(1).with_constants(["m", "g"]).parse("m*g*q1").unwrap();
        Hamiltonian::new(1.0, 1.0, v, c, order).unwrap()
    }

    fn constants() -> Bindings {
        Bindings::new().with(Symbol::constant("m"), 1.0).with(Symbol::constant("g"), 1.0)
    }

    fn boost(v: f64, with_gravity_term: bool) -> PhaseShiftOperator {
        let text = if with_gravity_term {
            format!("m*{v}*q1 - m*{v}^2*t/2 - m*g*{v}*t^2/2")
        } else {
            format!("m*{v}*q1 - m*{v}^2*t/2")
        };
        let phase = Parser::new(1).with_constants(["m", "g"]).parse(&text).unwrap();
        PhaseShiftOperator::new(phase, v, 1.0, constants())
    }

    #[test]
    fn shift_and_adjoint_are_consistent() {
        let g = Grid1D::new(-5.0, 5.0, 21).unwrap();
        let op = boost(0.5, true);
        let a: Vec<Complex64> = (0..21).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let b: Vec<Complex64> = (0..21).map(|i| Complex64::new(1.0, -(i as f64).sin())).collect();
        let ta = op.apply(g, 2.0, &a).unwrap();
        let tdb = op.apply_adjoint(g, 2.0, &b).unwrap();
        let lhs: Complex64 = b.iter().zip(&ta).map(|(x, y)| x.conj() * y).sum();
        let rhs: Complex64 = tdb.iter().zip(&a).map(|(x, y)| x.conj() * y).sum();
        assert!((lhs - rhs).norm() < 1e-12);
        assert!(matches!(op.apply(g, 0.3, &a), Err(OpLabError::NonIntegerShift { .. })));
    }

    #[test]
    fn zero_velocity_is_identity() {
        let g = Grid1D::new(-10.0, 10.0, 64).unwrap();
        let r = check_symmetry_operator(&boost(0.0, true), &gravity(2), g, 0.0, 0.5, 20).unwrap();
        assert_eq!(r.deviation, 0.0);
        assert_eq!(r.full_norm_ratio, 0.0);
    }

    #[test]
    fn galilean_boost_commutes_with_gravity_evolution() {
        let g = Grid1D::new(-20.0, 20.0, 128).unwrap();
        let v = 2.0 * g.dx();
        let good = check_symmetry_operator(&boost(v, true), &gravity(2), g, 1.0, 2.0, 200).unwrap();
        let bad = check_symmetry_operator(&boost(v, false), &gravity(2), g, 1.0, 2.0, 200).unwrap();
        assert!(good.deviation * 10.0 < bad.deviation, "{} vs {}", good.deviation, bad.deviation);
    }

    #[test]
    fn conserved_generator_versus_momentum() {
        let g = Grid1D::new(-20.0, 20.0, 512).unwrap();
        let psi = Wavepacket::gaussian(g, 0.0, 1.0, 1.0, 1.0);
        let a = OperatorSpec::parse("-m", "t", "m*g*t^2/2", constants()).unwrap();
        let p = OperatorSpec::parse("0", "1", "0", constants()).unwrap();
        let good = check_conserved(&a, &gravity(8), &psi, 0.0, 1.0, 500).unwrap();
        let bad = check_conserved(&p, &gravity(8), &psi, 0.0, 1.0, 500).unwrap();
        assert!(good.max_drift < 1e-3, "{}", good.max_drift);
        assert!(bad.max_drift > 0.4);
        assert!(!good.boundary_warning);
        assert!(good.max_norm_drift < 1e-10);
    }

    #[test]
    fn boundary_warning_fires_near_edge() {
        let g = Grid1D::new(-5.0, 5.0, 200).unwrap();
        let psi = Wavepacket::gaussian(g, 4.0, 1.0, 0.0, 1.0);
        let p = OperatorSpec::parse("0", "1", "0", constants()).unwrap();
        assert!(check_conserved(&p, &gravity(2), &psi, 0.0, 0.1, 10).unwrap().boundary_warning);
    }

    #[test]
    fn matrix_form_separates_generator_from_momentum() {
        let g = Grid1D::new(-20.0, 20.0, 200).unwrap();
        let a = OperatorSpec::parse("-m", "t", "m*g*t^2/2", constants()).unwrap();
        let p = OperatorSpec::parse("0", "1", "0", constants()).unwrap();
        let good = check_conserved_matrix(&a, &gravity(8), g, 0.0, 1.0, 200).unwrap();
        let bad = check_conserved_matrix(&p, &gravity(8), g, 0.0, 1.0, 200).unwrap();
        assert!(good.probe_deviation * 10.0 < bad.probe_deviation, "{} vs {}", good.probe_deviation, bad.probe_deviation);
    }

    #[test]
    fn power_iteration_recovers_diagonal_norm() {
        let d = [1.0, -3.0, 2.0];
        let f = |v: &[Complex64]| v.iter().zip(d).map(|(z, s)| z * s).collect::<Vec<_>>();
        assert!((operator_norm(3, f, f) - 3.0).abs() < 1e-6);
    }
}
