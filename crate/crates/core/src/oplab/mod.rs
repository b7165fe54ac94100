//! Grid operators and Crank–Nicolson evolution for checking conserved
//! operators (`A(t₁)U = UA(t₀)`) and symmetry operators (`T(t₁)U = UT(t₀)`).
//!
//! Operators are banded: `x̂` is diagonal, derivatives use symmetric central
//! stencils of even order with Dirichlet truncation. Inner products use
//! uniform `dx` weights, under which every built operator is Hermitian.

mod checks;
mod evolve;

use num_complex::Complex64;
use thiserror::Error;

use crate::expr::{eval, Bindings, EvalError, Expr, ParseError, Parser, Symbol};
use crate::mechanics::Lagrangian;
use crate::propagator::{Grid1D, PropagatorError};

pub use checks::{
    check_conserved, check_conserved_matrix, check_symmetry_operator, gaussian_probes, operator_norm,
    ConservedReport, MatrixReport, PhaseShiftOperator, SymmetryReport,
};
pub use evolve::{crank_nicolson_evolve, evolution_matrix, BandLu, CnTrajectory, EvolutionMatrix};

#[derive(Debug, Error)]
pub enum OpLabError {
    #[error("stencil order must be one of 2, 4, 6, 8 (got {0})")]
    StencilOrder(usize),
    #[error("operator coefficients may depend on t and constants only")]
    CoefficientSymbols,
    #[error("linear solve failed: zero pivot at row {0}")]
    ZeroPivot(usize),
    #[error("step count must be at least one")]
    NoSteps,
    #[error("shift of {shift} grid spacings at t = {t} is not an integer")]
    NonIntegerShift { shift: f64, t: f64 },
    #[error("dense evolution matrices are limited to N <= {max} (got {n})")]
    GridTooLarge { n: usize, max: usize },
    #[error("wavefunction and operator live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
}

/// Largest grid for which dense evolution matrices are composed.
pub const MAX_DENSE_N: usize = 256;

/// Central second-derivative weights `[c0, c1, .., cr]` of the given order.
pub fn laplacian_stencil(order: usize) -> Result<Vec<f64>, OpLabError> {
    Ok(match order {
        2 => vec![-2.0, 1.0],
        4 => vec![-5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0],
        6 => vec![-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0],
        8 => vec![-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0],
        other => return Err(OpLabError::StencilOrder(other)),
    })
}

/// Banded `N × N` complex matrix; `bands[l + r][j] = M[j, j + l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOperator {
    pub grid: Grid1D,
    pub t: f64,
    r: usize,
    bands: Vec<Vec<Complex64>>,
}

impl GridOperator {
    pub fn zeros(grid: Grid1D, t: f64, r: usize) -> Self {
        Self {
            grid,
            t,
            r,
            bands: vec![vec![Complex64::new(0.0, 0.0); grid.n]; 2 * r + 1],
        }
    }

    pub fn bandwidth(&self) -> usize {
        self.r
    }

    pub fn get(&self, j: usize, k: usize) -> Complex64 {
        let l = k as isize - j as isize;
        if l.unsigned_abs() > self.r {
            Complex64::new(0.0, 0.0)
        } else {
            self.bands[(l + self.r as isize) as usize][j]
        }
    }

    fn set(&mut self, j: usize, k: usize, v: Complex64) {
        let l = k as isize - j as isize;
        self.bands[(l + self.r as isize) as usize][j] = v;
    }

    fn widen(&self, r: usize) -> GridOperator {
        let mut out = GridOperator::zeros(self.grid, self.t, r.max(self.r));
        let n = self.grid.n;
        for j in 0..n {
            for k in j.saturating_sub(self.r)..(j + self.r + 1).min(n) {
                out.set(j, k, self.get(j, k));
            }
        }
        out
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: Complex64, other: &GridOperator, b: Complex64) -> GridOperator {
        let r = self.r.max(other.r);
        let (x, y) = (self.widen(r), other.widen(r));
        let mut out = x.clone();
        for (band, (bx, by)) in out.bands.iter_mut().zip(x.bands.iter().zip(&y.bands)) {
            for (o, (u, v)) in band.iter_mut().zip(bx.iter().zip(by)) {
                *o = a * u + b * v;
            }
        }
        out
    }

    pub fn apply(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let n = self.grid.n;
        (0..n)
            .map(|j| {
                let lo = j.saturating_sub(self.r);
                let hi = (j + self.r + 1).min(n);
                (lo..hi).map(|k| self.get(j, k) * psi[k]).sum()
            })
            .collect()
    }

    /// Max entrywise `|M − M†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.grid.n;
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for k in j..(j + self.r + 1).min(n) {
                worst = worst.max((self.get(j, k) - self.get(k, j).conj()).norm());
            }
        }
        worst
    }

    /// `⟨ψ|M|ψ⟩` with uniform `dx` weights.
    pub fn expectation(&self, psi: &[Complex64]) -> Complex64 {
        let dx = self.grid.dx();
        self.apply(psi)
            .iter()
            .zip(psi)
            .map(|(a, p)| p.conj() * a)
            .sum::<Complex64>()
            * dx
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let n = self.grid.n;
        nalgebra::DMatrix::from_fn(n, n, |j, k| self.get(j, k))
    }
}

/// Diagonal multiplication by `f(x)`.
pub fn multiplication_operator(grid: Grid1D, t: f64, f: impl Fn(f64) -> f64) -> GridOperator {
    let mut op = GridOperator::zeros(grid, t, 0);
    for j in 0..grid.n {
        op.set(j, j, Complex64::new(f(grid.x(j)), 0.0));
    }
    op
}

/// `p̂ = −(iħ/2) Σ_l l c_l (S^l − S^{−l}) / dx`, the momentum consistent with
/// the Laplacian of the same order (`p̂ = (im/ħ)[Ĥ, x̂]` for `Ĥ = p̂²/2m + V`
/// built from that Laplacian).
pub fn momentum_operator(grid: Grid1D, t: f64, hbar: f64, order: usize) -> Result<GridOperator, OpLabError> {
    let c = laplacian_stencil(order)?;
    let r = c.len() - 1;
    let dx = grid.dx();
    let mut op = GridOperator::zeros(grid, t, r);
    let n = grid.n;
    for (l, cl) in c.iter().enumerate().skip(1) {
        let w = Complex64::new(0.0, -hbar * l as f64 * cl / (2.0 * dx));
        for j in 0..n {
            if j + l < n {
                op.set(j, j + l, w);
            }
            if j >= l {
                op.set(j, j - l, -w);
            }
        }
    }
    Ok(op)
}

/// `−(ħ²/2m) ∂²` with the central stencil of the given order.
pub fn kinetic_operator(grid: Grid1D, t: f64, mass: f64, hbar: f64, order: usize) -> Result<GridOperator, OpLabError> {
    let c = laplacian_stencil(order)?;
    let r = c.len() - 1;
    let dx = grid.dx();
    let scale = -hbar * hbar / (2.0 * mass * dx * dx);
    let mut op = GridOperator::zeros(grid, t, r);
    let n = grid.n;
    for j in 0..n {
        for (l, cl) in c.iter().enumerate() {
            let v = Complex64::new(scale * cl, 0.0);
            if j + l < n {
                op.set(j, j + l, v);
            }
            if l > 0 && j >= l {
                op.set(j, j - l, v);
            }
        }
    }
    Ok(op)
}

/// `A(t) = α(t) x̂ + β(t) p̂ + γ(t)`.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    pub alpha: Expr,
    pub beta: Expr,
    pub gamma: Expr,
    pub constants: Bindings,
}

impl OperatorSpec {
    pub fn new(alpha: Expr, beta: Expr, gamma: Expr, constants: Bindings) -> Result<Self, OpLabError> {
        for e in [&alpha, &beta, &gamma] {
            let bad = e.contains_any(&|s: &Symbol| s.is_kinematic() && *s != Symbol::t() || *s == Symbol::param());
            if bad {
                return Err(OpLabError::CoefficientSymbols);
            }
        }
        Ok(Self {
            alpha,
            beta,
            gamma,
            constants,
        })
    }

    pub fn parse(alpha: &str, beta: &str, gamma: &str, constants: Bindings) -> Result<Self, OpLabError> {
        let parser = Parser::new(1);
        Self::new(parser.parse(alpha)?, parser.parse(beta)?, parser.parse(gamma)?, constants)
    }

    pub fn coefficients(&self, t: f64) -> Result<(f64, f64, f64), OpLabError> {
        let b = self.constants.clone().with(Symbol::t(), t);
        Ok((eval(&self.alpha, &b)?, eval(&self.beta, &b)?, eval(&self.gamma, &b)?))
    }
}

pub fn build_operator(
    spec: &OperatorSpec,
    grid: Grid1D,
    t: f64,
    hbar: f64,
    order: usize,
) -> Result<GridOperator, OpLabError> {
    let (a, b, c) = spec.coefficients(t)?;
    let diag = multiplication_operator(grid, t, |x| a * x + c);
    let p = momentum_operator(grid, t, hbar, order)?;
    Ok(diag.combine(Complex64::new(1.0, 0.0), &p, Complex64::new(b, 0.0)))
}

/// `Ĥ(t) = p̂²/2m + V(x, t)` on a grid.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    pub mass: f64,
    pub hbar: f64,
    pub potential: Expr,
    pub constants: Bindings,
    pub order: usize,
}

impl Hamiltonian {
    pub fn new(mass: f64, hbar: f64, potential: Expr, constants: Bindings, order: usize) -> Result<Self, OpLabError> {
        laplacian_stencil(order)?;
        Ok(Self {
            mass,
            hbar,
            potential,
            constants,
            order,
        })
    }

    pub fn from_lagrangian(sys: &Lagrangian, hbar: f64, order: usize) -> Result<Self, OpLabError> {
        let (mass, potential) = crate::propagator::slicer::standard_form(sys)?;
        Self::new(mass, hbar, potential, sys.bindings(), order)
    }

    pub fn is_static(&self) -> bool {
        !self.potential.contains(&Symbol::t())
    }

    pub fn at(&self, grid: Grid1D, t: f64) -> Result<GridOperator, OpLabError> {
        build_hamiltonian(self.mass, self.hbar, &self.potential, &self.constants, grid, t, self.order)
    }
}

pub fn build_hamiltonian(
    mass: f64,
    hbar: f64,
    potential: &Expr,
    constants: &Bindings,
    grid: Grid1D,
    t: f64,
    order: usize,
) -> Result<GridOperator, OpLabError> {
    let mut b = constants.clone().with(Symbol::t(), t);
    let mut values = Vec::with_capacity(grid.n);
    for x in grid.points() {
        b.set(Symbol::q(0), x);
        values.push(eval(potential, &b)?);
    }
    let mut v = GridOperator::zeros(grid, t, 0);
    for (j, value) in values.into_iter().enumerate() {
        v.set(j, j, Complex64::new(value, 0.0));
    }
    let k = kinetic_operator(grid, t, mass, hbar, order)?;
    Ok(k.combine(Complex64::new(1.0, 0.0), &v, Complex64::new(1.0, 0.0)))
}

/// Lowest eigenvalue by a dense Hermitian eigensolve (real embedding).
pub fn lowest_eigenvalue(op: &GridOperator) -> f64 {
    let n = op.grid.n;
    let m = nalgebra::DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = op.get(i % n, j % n);
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    nalgebra::SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::propagator::Wavepacket;

    fn grid(n: usize) -> Grid1D {
        Grid1D::new(-20.0, 20.0, n).unwrap()
    }

    #[test]
    fn position_operator_is_the_grid() {
        let g = grid(16);
        let spec = OperatorSpec::parse("1", "0", "0", Bindings::new()).unwrap();
        let op = build_operator(&spec, g, 0.0, 1.0, 2).unwrap();
        for j in 0..16 {
            assert_eq!(op.get(j, j), Complex64::new(g.x(j), 0.0));
        }
        assert_eq!(op.get(0, 1), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn momentum_expectation() {
        // The 2-point difference sees sin(p dx)/dx, so it needs a finer grid.
        for (order, n) in [(2, 4096), (4, 512), (8, 512)] {
            let g = grid(n);
            let psi = Wavepacket::gaussian(g, 0.0, 1.0, 1.5, 1.0);
            let p = momentum_operator(g, 0.0, 1.0, order).unwrap();
            let mean = p.expectation(&psi.values);
            assert!((mean.re - 1.5).abs() < 1e-3, "order {order}: {mean}");
            assert!(mean.im.abs() < 1e-12);
        }
    }

    #[test]
    fn galilean_generator_at_zero_time() {
        let g = grid(32);
        let consts = Bindings::new().with(Symbol::constant("m"), 2.0).with(Symbol::constant("g"), 1.0);
        let spec = OperatorSpec::parse("-m", "t", "m*g*t^2/2", consts).unwrap();
        let op = build_operator(&spec, g, 0.0, 1.0, 2).unwrap();
        let expected = multiplication_operator(g, 0.0, |x| -2.0 * x);
        for j in 0..32 {
            for k in 0..32 {
                assert!((op.get(j, k) - expected.get(j, k)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn coefficient_symbols_are_checked() {
        assert!(matches!(
            OperatorSpec::parse("q1", "0", "0", Bindings::new()),
            Err(OpLabError::CoefficientSymbols)
        ));
    }

    #[test]
    fn operators_are_hermitian() {
        let g = grid(128);
        let v = parse_expr("q1^2/2 + sin(q1)*t", 1).unwrap();
        for order in [2, 4, 6, 8] {
            let h = build_hamiltonian(1.0, 1.0, &v, &Bindings::new(), g, 0.3, order).unwrap();
            assert!(h.hermiticity_defect() < 1e-12);
            let p = momentum_operator(g, 0.0, 1.0, order).unwrap();
            assert!(p.hermiticity_defect() < 1e-12);
            let dense = p.to_dense();
            assert!((dense.adjoint() - &dense).iter().all(|z| z.norm() < 1e-12));
        }
        assert!(matches!(laplacian_stencil(3), Err(OpLabError::StencilOrder(3))));
    }

    #[test]
    fn stencils_annihilate_low_polynomials() {
        for order in [2, 4, 6, 8] {
            let c = laplacian_stencil(order).unwrap();
            let sum: f64 = c[0] + 2.0 * c[1..].iter().sum::<f64>();
            assert!(sum.abs() < 1e-14);
            let second: f64 = c.iter().enumerate().map(|(l, cl)| cl * (l * l) as f64).sum();
            assert!((second - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn free_energy_of_gaussian() {
        let g = grid(1024);
        let (sigma, p0) = (2.0, 0.7);
        let psi = Wavepacket::gaussian(g, 0.0, sigma, p0, 1.0);
        let h = build_hamiltonian(1.0, 1.0, &Expr::zero(), &Bindings::new(), g, 0.0, 2).unwrap();
        let e = h.expectation(&psi.values).re;
        // σ is the position spread of |ψ|², so ⟨p²⟩ = ħ²/(4σ²).
        let expected = 1.0 / (8.0 * sigma * sigma) + p0 * p0 / 2.0;
        assert!((e - expected).abs() < 1e-3, "{e} vs {expected}");
    }

    #[test]
    fn oscillator_ground_state() {
        let g = Grid1D::new(-10.0, 10.0, 400).unwrap();
        let v = parse_expr("m*omega^2*q1^2/2", 1).unwrap();
        let consts = Bindings::new().with(Symbol::constant("m"), 1.0).with(Symbol::constant("omega"), 1.0);
        let h = build_hamiltonian(1.0, 1.0, &v, &consts, g, 0.0, 2).unwrap();
        let e0 = lowest_eigenvalue(&h);
        assert!((e0 - 0.5).abs() < 1e-3, "{e0}");
    }

    #[test]
    fn momentum_is_commutator_with_hamiltonian() {
        // p = (im/ħ)[H, x] for the matching stencil.
        let g = grid(64);
        for order in [2, 8] {
            let h = build_hamiltonian(1.5, 0.8, &Expr::zero(), &Bindings::new(), g, 0.0, order).unwrap().to_dense();
            let x = multiplication_operator(g, 0.0, |x| x).to_dense();
            let comm = (&h * &x - &x * &h) * Complex64::new(0.0, 1.5 / 0.8);
            let p = momentum_operator(g, 0.0, 0.8, order).unwrap().to_dense();
            assert!((comm - p).iter().all(|z| z.norm() < 1e-9));
        }
    }
}
