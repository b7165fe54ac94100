use num_complex::Complex64;
use rayon::prelude::*;

use super::{GridOperator, Hamiltonian, OpLabError, MAX_DENSE_N};
use crate::propagator::{Grid1D, Wavepacket};

/// LU factors of `I + c·M` for banded `M`, without pivoting. For Hermitian
/// `M` and imaginary `c` the Hermitian part is the identity, so elimination
/// is stable without row exchanges.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    r: usize,
    /// `lu[j][l + r]` holds entry `(j, j + l)`.
    lu: Vec<Vec<Complex64>>,
}

impl BandLu {
    pub fn new(op: &GridOperator, c: Complex64) -> Result<Self, OpLabError> {
        let n = op.grid.n;
        let r = op.bandwidth();
        let mut lu = vec![vec![Complex64::new(0.0, 0.0); 2 * r + 1]; n];
        for (j, row) in lu.iter_mut().enumerate() {
            for (idx, slot) in row.iter_mut().enumerate() {
                let k = j as isize + idx as isize - r as isize;
                if k >= 0 && (k as usize) < n {
                    let k = k as usize;
                    *slot = c * op.get(j, k) + if j == k { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
                }
            }
        }
        for k in 0..n {
            let pivot = lu[k][r];
            if pivot.norm() == 0.0 {
                return Err(OpLabError::ZeroPivot(k));
            }
            for i in (k + 1)..(k + r + 1).min(n) {
                let f = lu[i][k + r - i] / pivot;
                lu[i][k + r - i] = f;
                for j in (k + 1)..(k + r + 1).min(n) {
                    let ukj = lu[k][j + r - k];
                    lu[i][j + r - i] -= f * ukj;
                }
            }
        }
        Ok(Self { n, r, lu })
    }

    pub fn solve(&self, b: &mut [Complex64]) {
        let (n, r) = (self.n, self.r);
        for i in 0..n {
            let mut acc = b[i];
            for k in i.saturating_sub(r)..i {
                acc -= self.lu[i][k + r - i] * b[k];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for k in (i + 1)..(i + r + 1).min(n) {
                acc -= self.lu[i][k + r - i] * b[k];
            }
            b[i] = acc / self.lu[i][r];
        }
    }
}

/// One Crank–Nicolson step operator at a fixed Hamiltonian.
struct CnStep {
    h: GridOperator,
    c: Complex64,
    lu: BandLu,
}

impl CnStep {
    fn new(h: GridOperator, dt: f64, hbar: f64) -> Result<Self, OpLabError> {
        let c = Complex64::new(0.0, dt / (2.0 * hbar));
        let lu = BandLu::new(&h, c)?;
        Ok(Self { h, c, lu })
    }

    fn apply(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let hpsi = self.h.apply(psi);
        let mut rhs: Vec<Complex64> = psi.iter().zip(&hpsi).map(|(p, hp)| p - self.c * hp).collect();
        self.lu.solve(&mut rhs);
        rhs
    }
}

/// Step operators for `[t0, t1]`, one shared factorization when `H` is
/// static, otherwise refactored at each midpoint time.
struct Stepper<'a> {
    h: &'a Hamiltonian,
    grid: Grid1D,
    t0: f64,
    dt: f64,
    fixed: Option<CnStep>,
}

impl<'a> Stepper<'a> {
    fn new(h: &'a Hamiltonian, grid: Grid1D, t0: f64, t1: f64, steps: usize) -> Result<Self, OpLabError> {
        if steps == 0 {
            return Err(OpLabError::NoSteps);
        }
        let dt = (t1 - t0) / steps as f64;
        let fixed = if h.is_static() {
            Some(CnStep::new(h.at(grid, t0)?, dt, h.hbar)?)
        } else {
            None
        };
        Ok(Self { h, grid, t0, dt, fixed })
    }

    fn with_step<R>(&self, k: usize, f: impl FnOnce(&CnStep) -> R) -> Result<R, OpLabError> {
        match &self.fixed {
            Some(s) => Ok(f(s)),
            None => {
                let mid = self.t0 + (k as f64 + 0.5) * self.dt;
                let s = CnStep::new(self.h.at(self.grid, mid)?, self.dt, self.h.hbar)?;
                Ok(f(&s))
            }
        }
    }
}

fn uniform_norm(psi: &[Complex64], dx: f64) -> f64 {
    (psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * dx).sqrt()
}

/// States at `t0, t0 + Δt, .., t1`.
#[derive(Debug, Clone)]
pub struct CnTrajectory {
    pub grid: Grid1D,
    pub times: Vec<f64>,
    pub states: Vec<Vec<Complex64>>,
    /// Largest relative norm change over a single step.
    pub max_step_norm_drift: f64,
}

impl CnTrajectory {
    pub fn last(&self) -> Wavepacket {
        Wavepacket {
            grid: self.grid,
            values: self.states.last().cloned().unwrap_or_default(),
            meta: None,
        }
    }
}

/// Solves `(1 + iΔt H/2ħ) ψ_{k+1} = (1 − iΔt H/2ħ) ψ_k` with `H` at the
/// midpoint time of each step.
pub fn crank_nicolson_evolve(
    h: &Hamiltonian,
    psi0: &Wavepacket,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<CnTrajectory, OpLabError> {
    let grid = psi0.grid;
    let stepper = Stepper::new(h, grid, t0, t1, steps)?;
    let dx = grid.dx();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut psi = psi0.values.clone();
    let mut drift: f64 = 0.0;
    times.push(t0);
    states.push(psi.clone());
    for k in 0..steps {
        let before = uniform_norm(&psi, dx);
        psi = stepper.with_step(k, |s| s.apply(&psi))?;
        let after = uniform_norm(&psi, dx);
        if before > 0.0 {
            drift = drift.max((after - before).abs() / before);
        }
        times.push(t0 + (k + 1) as f64 * stepper.dt);
        states.push(psi.clone());
    }
    Ok(CnTrajectory {
        grid,
        times,
        states,
        max_step_norm_drift: drift,
    })
}

/// Dense `U(t1, t0)` composed from Crank–Nicolson steps.
#[derive(Debug, Clone)]
pub struct EvolutionMatrix {
    pub grid: Grid1D,
    pub t0: f64,
    pub t1: f64,
    pub matrix: nalgebra::DMatrix<Complex64>,
}

impl EvolutionMatrix {
    pub fn apply(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let v = nalgebra::DVector::from_column_slice(psi);
        (&self.matrix * v).iter().copied().collect()
    }

    pub fn apply_adjoint(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let v = nalgebra::DVector::from_column_slice(psi);
        (self.matrix.adjoint() * v).iter().copied().collect()
    }
}

pub fn evolution_matrix(h: &Hamiltonian, grid: Grid1D, t0: f64, t1: f64, steps: usize) -> Result<EvolutionMatrix, OpLabError> {
    let n = grid.n;
    if n > MAX_DENSE_N {
        return Err(OpLabError::GridTooLarge { n, max: MAX_DENSE_N });
    }
    let stepper = Stepper::new(h, grid, t0, t1, steps)?;
    let mut columns: Vec<Vec<Complex64>> = (0..n)
        .map(|k| {
            let mut e = vec![Complex64::new(0.0, 0.0); n];
            e[k] = Complex64::new(1.0, 0.0);
            e
        })
        .collect();
    for k in 0..steps {
        stepper.with_step(k, |s| {
            columns.par_iter_mut().for_each(|col| *col = s.apply(col));
        })?;
    }
    let matrix = nalgebra::DMatrix::from_fn(n, n, |j, k| columns[k][j]);
    Ok(EvolutionMatrix { grid, t0, t1, matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, Bindings, Expr, Symbol};

    fn free(order: usize) -> Hamiltonian {
        Hamiltonian::new(1.0, 1.0, Expr::zero(), Bindings::new(), order).unwrap()
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        let g = Grid1D::new(-5.0, 5.0, 40).unwrap();
        let v = parse_expr("q1^2", 1).unwrap();
        let h = crate::oplab::build_hamiltonian(1.0, 1.0, &v, &Bindings::new(), g, 0.0, 4).unwrap();
        let c = Complex64::new(0.0, 0.37);
        let lu = BandLu::new(&h, c).unwrap();
        let b: Vec<Complex64> = (0..40).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut x = b.clone();
        lu.solve(&mut x);
        let a = nalgebra::DMatrix::identity(40, 40) + h.to_dense() * c;
        let residual = a * nalgebra::DVector::from_column_slice(&x) - nalgebra::DVector::from_column_slice(&b);
        assert!(residual.norm() < 1e-12);
    }

    #[test]
    fn free_packet_spreads_as_predicted() {
        let g = Grid1D::new(-30.0, 30.0, 1200).unwrap();
        let sigma = 1.0;
        let psi = Wavepacket::gaussian(g, 0.0, sigma, 0.0, 1.0);
        let traj = crank_nicolson_evolve(&free(2), &psi, 0.0, 2.0, 2000).unwrap();
        let out = traj.last();
        let dx = g.dx();
        let var: f64 = out.values.iter().enumerate().map(|(j, z)| g.x(j).powi(2) * z.norm_sqr()).sum::<f64>() * dx;
        let expected = sigma * (1.0 + (2.0 / (2.0 * sigma * sigma)).powi(2)).sqrt();
        assert!((var.sqrt() - expected).abs() < 1e-3, "{} vs {expected}", var.sqrt());
        assert!(traj.max_step_norm_drift < 1e-10);
    }

    #[test]
    fn ehrenfest_parabola() {
        let g = Grid1D::new(-20.0, 20.0, 800).unwrap();
        let h = Hamiltonian::new(1.0, 1.0, parse_expr("m*g*q1", 1).unwrap(), Bindings::new().with(Symbol::constant("m"), 1.0).with(Symbol::constant("g"), 1.0), 2).unwrap();
        let psi = Wavepacket::gaussian(g, 0.0, 1.0, 1.0, 1.0);
        let traj = crank_nicolson_evolve(&h, &psi, 0.0, 1.0, 1000).unwrap();
        for (t, state) in traj.times.iter().zip(&traj.states).step_by(250) {
            let wp = Wavepacket { grid: g, values: state.clone(), meta: None };
            let expected = t - 0.5 * t * t;
            assert!((wp.mean_position() - expected).abs() < 1e-3, "t = {t}");
        }
    }

    #[test]
    fn zero_interval_is_identity() {
        let g = Grid1D::new(-5.0, 5.0, 50).unwrap();
        let psi = Wavepacket::gaussian(g, 0.0, 1.0, 1.0, 1.0);
        let traj = crank_nicolson_evolve(&free(2), &psi, 1.0, 1.0, 3).unwrap();
        assert_eq!(traj.last().values, psi.values);
        assert!(matches!(crank_nicolson_evolve(&free(2), &psi, 0.0, 1.0, 0), Err(OpLabError::NoSteps)));
    }

    #[test]
    fn dense_matrix_matches_vector_evolution() {
        let g = Grid1D::new(-10.0, 10.0, 64).unwrap();
        let h = Hamiltonian::new(1.0, 1.0, parse_expr("t*q1", 1).unwrap(), Bindings::new(), 2).unwrap();
        let u = evolution_matrix(&h, g, 0.0, 0.5, 50).unwrap();
        let psi = Wavepacket::gaussian(g, 0.5, 1.0, 0.3, 1.0);
        let a = u.apply(&psi.values);
        let b = crank_nicolson_evolve(&h, &psi, 0.0, 0.5, 50).unwrap().last().values;
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
        let big = Grid1D::new(-10.0, 10.0, 300).unwrap();
        assert!(matches!(evolution_matrix(&h, big, 0.0, 0.5, 5), Err(OpLabError::GridTooLarge { .. })));
    }
}
