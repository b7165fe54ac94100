//! Time-sliced kernels: products of short-time kernels
//! `K_ε(x', x) = sqrt(m / 2πiħε) exp{(i/ħ)[m(x' − x)²/2ε − ε V((x' + x)/2, t_mid)]}`.
//!
//! On a grid the sampled short-time chirp aliases as soon as `ħε/(m dx²)` is
//! not large, so the default [`SliceQuadrature::BandLimited`] rule replaces the
//! free factor by its projection onto grid-band-limited functions,
//! `c_n / dx` with `c_n = (1/2π) ∫_{-π}^{π} e^{inθ − iβθ²} dθ`,
//! `β = ħε / (2m dx²)`, `n = (x' − x)/dx`. The potential phase is kept at the
//! midpoint. [`SliceQuadrature::Trapezoid`] samples `K_ε` directly.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::{Grid1D, KernelMatrix, PropagatorError, Quadrature, Wavepacket};
use crate::expr::{eval, Bindings, Expr, Symbol, Var};
use crate::mechanics::Lagrangian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SliceQuadrature {
    #[default]
    BandLimited,
    Trapezoid,
}

#[derive(Debug, Clone, Copy)]
pub struct SliceSettings {
    pub grid: Grid1D,
    pub t0: f64,
    pub t1: f64,
    pub slices: usize,
    pub quadrature: SliceQuadrature,
}

/// Lazily applied product of short-time kernels.
#[derive(Debug, Clone)]
pub struct TimeSlicedKernel {
    settings: SliceSettings,
    mass: f64,
    hbar: f64,
    potential: Expr,
    constants: Bindings,
    static_potential: bool,
    /// Band-limited free factor indexed by `n + N − 1`, `n = j − k`; empty
    /// for the trapezoid rule, which samples `K_ε` at the grid points.
    free: Vec<Complex64>,
}

/// Band-limited free coefficients `c_n`, `|n| < n_max`, by a midpoint rule of
/// `M` nodes evaluated with one inverse FFT, plus the leading
/// Euler–Maclaurin endpoint correction.
pub fn band_limited_coefficients(beta: f64, n_max: usize) -> Vec<Complex64> {
    let m = (64 * n_max).max(4096).next_power_of_two();
    let h = 2.0 * PI / m as f64;
    let theta = |j: usize| -PI + (j as f64 + 0.5) * h;
    let mut w: Vec<Complex64> = (0..m)
        .map(|j| Complex64::from_polar(1.0, -beta * theta(j).powi(2)))
        .collect();
    FftPlanner::new().plan_fft_inverse(m).process(&mut w);
    let w_edge = Complex64::from_polar(1.0, -beta * PI * PI);
    let correction = Complex64::new(0.0, -h * h * beta / 12.0) * w_edge;
    let len = 2 * n_max - 1;
    (0..len)
        .map(|idx| {
            let n = idx as i64 - (n_max as i64 - 1);
            let shift = Complex64::from_polar(1.0 / m as f64, n as f64 * (-PI + h / 2.0));
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            shift * w[n.rem_euclid(m as i64) as usize] + correction * sign
        })
        .collect()
}

/// Splits `L = m v²/2 − V(q, t)` into `(m, V)`.
pub fn standard_form(sys: &Lagrangian) -> Result<(f64, Expr), PropagatorError> {
    if sys.n_dof() != 1 {
        return Err(PropagatorError::NonStandardLagrangian("more than one degree of freedom".into()));
    }
    let v = Symbol::v(0);
    let l = sys.expr();
    let mass_expr = l.diff(&v).diff(&v).expand();
    if mass_expr.contains_any(&|s: &Symbol| s.is_kinematic()) {
        return Err(PropagatorError::NonStandardLagrangian("position- or velocity-dependent mass".into()));
    }
    let mass = eval(&mass_expr, &sys.bindings())?;
    let potential = (mass_expr.clone() * Expr::v(0).powi(2) / Expr::int(2) - l).expand();
    if potential.contains(&v) {
        return Err(PropagatorError::NonStandardLagrangian("velocity-coupled terms".into()));
    }
    Ok((mass, potential))
}

impl TimeSlicedKernel {
    pub fn new(
        mass: f64,
        hbar: f64,
        potential: &Expr,
        constants: &Bindings,
        settings: SliceSettings,
    ) -> Result<Self, PropagatorError> {
        if settings.slices == 0 {
            return Err(PropagatorError::NoSlices);
        }
        if settings.t1 == settings.t0 {
            return Err(PropagatorError::ZeroInterval);
        }
        if potential.contains_any(&|s: &Symbol| matches!(s, Symbol::Var(Var::Vel(_)) | Symbol::Var(Var::Param)))
            || potential.max_dof_index() > 1
        {
            return Err(PropagatorError::NonStandardLagrangian("potential must depend on q1 and t only".into()));
        }
        let grid = settings.grid;
        let n = grid.n;
        let eps = (settings.t1 - settings.t0) / settings.slices as f64;
        let dx = grid.dx();
        let free = match settings.quadrature {
            SliceQuadrature::BandLimited => {
                let beta = hbar * eps / (2.0 * mass * dx * dx);
                band_limited_coefficients(beta, n)
                    .into_iter()
                    .map(|c| c / dx)
                    .collect()
            }
            SliceQuadrature::Trapezoid => {
                super::free_kernel(mass, hbar, 0.0, eps, 0.0, 0.0)?;
                Vec::new()
            }
        };
        let kernel = Self {
            settings,
            mass,
            hbar,
            potential: potential.clone(),
            constants: constants.clone(),
            static_potential: !potential.contains(&Symbol::t()),
            free,
        };
        kernel.potential_phases(settings.t0)?;
        Ok(kernel)
    }

    pub fn from_lagrangian(sys: &Lagrangian, hbar: f64, settings: SliceSettings) -> Result<Self, PropagatorError> {
        let (mass, potential) = standard_form(sys)?;
        Self::new(mass, hbar, &potential, &sys.bindings(), settings)
    }

    pub fn settings(&self) -> &SliceSettings {
        &self.settings
    }

    fn eps(&self) -> f64 {
        (self.settings.t1 - self.settings.t0) / self.settings.slices as f64
    }

    /// `exp(−iεV(x_mid, t)/ħ)` indexed by `j + k`.
    fn potential_phases(&self, t: f64) -> Result<Vec<Complex64>, PropagatorError> {
        let grid = self.settings.grid;
        let half = grid.dx() / 2.0;
        let eps = self.eps();
        let mut b = self.constants.clone();
        b.set(Symbol::t(), t);
        (0..2 * grid.n - 1)
            .map(|idx| {
                b.set(Symbol::q(0), grid.xmin + idx as f64 * half);
                let v = eval(&self.potential, &b)?;
                Ok(Complex64::from_polar(1.0, -eps * v / self.hbar))
            })
            .collect()
    }

    fn weights(&self) -> Vec<f64> {
        match self.settings.quadrature {
            SliceQuadrature::BandLimited => vec![self.settings.grid.dx(); self.settings.grid.n],
            SliceQuadrature::Trapezoid => self.settings.grid.trapezoid_weights(),
        }
    }

    fn slice_times(&self) -> impl Iterator<Item = f64> + '_ {
        let eps = self.eps();
        (0..self.settings.slices).map(move |s| self.settings.t0 + (s as f64 + 0.5) * eps)
    }

    fn free_factor(&self, j: usize, k: usize) -> Complex64 {
        match self.settings.quadrature {
            SliceQuadrature::BandLimited => self.free[j + self.settings.grid.n - 1 - k],
            SliceQuadrature::Trapezoid => {
                let grid = &self.settings.grid;
                let (m, hbar, eps) = (self.mass, self.hbar, self.eps());
                super::free_kernel(m, hbar, grid.x(j), eps, grid.x(k), 0.0).unwrap_or_default()
            }
        }
    }

    fn apply_slice(&self, phases: &[Complex64], weights: &[f64], psi: &[Complex64]) -> Vec<Complex64> {
        let n = psi.len();
        let weighted: Vec<Complex64> = psi.iter().zip(weights).map(|(p, w)| p * w).collect();
        (0..n)
            .into_par_iter()
            .map(|j| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, wk) in weighted.iter().enumerate() {
                    acc += self.free_factor(j, k) * phases[j + k] * wk;
                }
                acc
            })
            .collect()
    }

    fn phase_schedule(&self) -> Result<Vec<Vec<Complex64>>, PropagatorError> {
        if self.static_potential {
            Ok(vec![self.potential_phases(self.settings.t0)?])
        } else {
            self.slice_times().map(|t| self.potential_phases(t)).collect()
        }
    }

    fn run(&self, mut values: Vec<Complex64>, skip_first: bool) -> Result<Vec<Complex64>, PropagatorError> {
        let schedule = self.phase_schedule()?;
        let weights = self.weights();
        for s in usize::from(skip_first)..self.settings.slices {
            let phases = &schedule[if self.static_potential { 0 } else { s }];
            values = self.apply_slice(phases, &weights, &values);
        }
        Ok(values)
    }

    /// Evolves a wavefunction through all slices.
    pub fn apply(&self, psi: &Wavepacket) -> Result<Wavepacket, PropagatorError> {
        if psi.grid != self.settings.grid {
            return Err(PropagatorError::GridMismatch);
        }
        Ok(Wavepacket {
            grid: psi.grid,
            values: self.run(psi.values.clone(), false)?,
            meta: None,
        })
    }

    /// Dense composed kernel, column by column. Cost is `O(N³ · slices)`;
    /// intended for small grids.
    pub fn kernel(&self) -> Result<KernelMatrix, PropagatorError> {
        let grid = self.settings.grid;
        let n = grid.n;
        let first = self.potential_phases(self.slice_times().next().unwrap_or(self.settings.t0))?;
        let mut columns = Vec::with_capacity(n);
        for k in 0..n {
            let column: Vec<Complex64> = (0..n).map(|j| self.free_factor(j, k) * first[j + k]).collect();
            columns.push(self.run(column, true)?);
        }
        let mut entries = vec![Complex64::new(0.0, 0.0); n * n];
        for (k, col) in columns.iter().enumerate() {
            for (j, v) in col.iter().enumerate() {
                entries[j * n + k] = *v;
            }
        }
        let quadrature = match self.settings.quadrature {
            SliceQuadrature::BandLimited => Quadrature::Uniform,
            SliceQuadrature::Trapezoid => Quadrature::Trapezoid,
        };
        Ok(KernelMatrix::from_entries(grid, self.settings.t0, self.settings.t1, entries, quadrature))
    }
}

/// `timesliced_kernel` for `V(q1, t)` with mass `m`.
pub fn timesliced_kernel(
    mass: f64,
    hbar: f64,
    potential: &Expr,
    constants: &Bindings,
    settings: SliceSettings,
) -> Result<TimeSlicedKernel, PropagatorError> {
    TimeSlicedKernel::new(mass, hbar, potential, constants, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::propagator::{closed_form_matrix, fidelity, propagate, FreeKernel, LinearPotentialKernel};

    fn settings(grid: Grid1D, t1: f64, slices: usize, quadrature: SliceQuadrature) -> SliceSettings {
        SliceSettings {
            grid,
            t0: 0.0,
            t1,
            slices,
            quadrature,
        }
    }

    fn gravity_constants() -> Bindings {
        Bindings::new()
            .with(Symbol::constant("m"), 1.0)
            .with(Symbol::constant("g"), 1.0)
    }

    #[test]
    fn coefficients_match_direct_quadrature() {
        let beta = 0.8;
        let c = band_limited_coefficients(beta, 8);
        // Composite Simpson on a fine mesh as an independent reference.
        let steps = 200_000;
        let h = 2.0 * PI / steps as f64;
        for n in [-7i64, -2, 0, 3, 7] {
            let f = |th: f64| Complex64::from_polar(1.0, n as f64 * th - beta * th * th);
            let mut acc = f(-PI) + f(PI);
            for i in 1..steps {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += f(-PI + i as f64 * h) * w;
            }
            let reference = acc * h / 3.0 / (2.0 * PI);
            assert!((c[(n + 7) as usize] - reference).norm() < 1e-10, "n = {n}");
        }
    }

    #[test]
    fn single_trapezoid_slice_is_the_free_kernel() {
        let grid = Grid1D::new(-3.0, 3.0, 31).unwrap();
        let k = timesliced_kernel(1.0, 1.0, &Expr::zero(), &Bindings::new(), settings(grid, 0.7, 1, SliceQuadrature::Trapezoid))
            .unwrap()
            .kernel()
            .unwrap();
        for j in [0, 5, 30] {
            for kk in [0, 17, 30] {
                let exact = crate::propagator::free_kernel(1.0, 1.0, grid.x(j), 0.7, grid.x(kk), 0.0).unwrap();
                assert_eq!(k.get(j, kk), exact);
            }
        }
    }

    #[test]
    fn rejects_velocity_coupling() {
        let sys = Lagrangian::parse("m/2*v1^2 + q1*v1", 1, &[("m", 1.0)]).unwrap();
        let grid = Grid1D::new(-1.0, 1.0, 8).unwrap();
        let s = settings(grid, 1.0, 1, SliceQuadrature::BandLimited);
        assert!(matches!(
            TimeSlicedKernel::from_lagrangian(&sys, 1.0, s),
            Err(PropagatorError::NonStandardLagrangian(_))
        ));
        let (m, v) = standard_form(&Lagrangian::parse("m/2*v1^2 - m*g*q1", 1, &[("m", 2.0)]).unwrap()).unwrap();
        assert_eq!(m, 2.0);
        assert!(crate::expr::equal_numeric(&v, &parse_expr("m*g*q1", 1).unwrap(), &Default::default()).unwrap());
    }

    #[test]
    fn moderate_grid_fidelity() {
        let grid = Grid1D::new(-15.0, 15.0, 256).unwrap();
        let psi = Wavepacket::gaussian(grid, 0.0, 1.0, 1.0, 1.0);
        let potential = parse_expr("m*g*q1", 1).unwrap();
        let ts = timesliced_kernel(1.0, 1.0, &potential, &gravity_constants(), settings(grid, 0.5, 40, SliceQuadrature::BandLimited)).unwrap();
        let reference = propagate(&closed_form_matrix(&LinearPotentialKernel::new(1.0, 1.0, 1.0), grid, 0.0, 0.5).unwrap(), &psi).unwrap();
        let f = fidelity(&ts.apply(&psi).unwrap(), &reference);
        assert!(f > 0.999, "{f}");
    }

    #[test]
    fn convergence_in_slices() {
        let grid = Grid1D::new(-15.0, 15.0, 200).unwrap();
        let psi = Wavepacket::gaussian(grid, 0.0, 1.0, 1.0, 1.0);
        let potential = parse_expr("q1^2/2", 1).unwrap();
        let fine = timesliced_kernel(1.0, 1.0, &potential, &Bindings::new(), settings(grid, 0.5, 160, SliceQuadrature::BandLimited))
            .unwrap()
            .apply(&psi)
            .unwrap();
        let errors: Vec<f64> = [5, 10, 20]
            .iter()
            .map(|&s| {
                let k = timesliced_kernel(1.0, 1.0, &potential, &Bindings::new(), settings(grid, 0.5, s, SliceQuadrature::BandLimited)).unwrap();
                1.0 - fidelity(&k.apply(&psi).unwrap(), &fine)
            })
            .collect();
        assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    }

    #[test]
    fn composition_matches_single_run() {
        let grid = Grid1D::new(-10.0, 10.0, 128).unwrap();
        let psi = Wavepacket::gaussian(grid, -1.0, 1.0, 0.5, 1.0);
        let potential = parse_expr("t*q1", 1).unwrap();
        let whole = timesliced_kernel(1.0, 1.0, &potential, &Bindings::new(), settings(grid, 1.0, 20, SliceQuadrature::BandLimited)).unwrap();
        let first = timesliced_kernel(1.0, 1.0, &potential, &Bindings::new(), settings(grid, 0.5, 10, SliceQuadrature::BandLimited)).unwrap();
        let second = timesliced_kernel(
            1.0,
            1.0,
            &potential,
            &Bindings::new(),
            SliceSettings {
                t0: 0.5,
                ..settings(grid, 1.0, 10, SliceQuadrature::BandLimited)
            },
        )
        .unwrap();
        let a = whole.apply(&psi).unwrap();
        let b = second.apply(&first.apply(&psi).unwrap()).unwrap();
        assert!((1.0 - fidelity(&a, &b)) < 1e-12);

        // Dense composition agrees with lazy application.
        let dense = propagate(&whole.kernel().unwrap(), &psi).unwrap();
        let diff: f64 = dense.values.iter().zip(&a.values).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn free_evolution_is_unitary_and_moves() {
        let grid = Grid1D::new(-20.0, 20.0, 400).unwrap();
        let psi = Wavepacket::gaussian(grid, 0.0, 1.0, 2.0, 1.0);
        let k = timesliced_kernel(1.0, 1.0, &Expr::zero(), &Bindings::new(), settings(grid, 1.0, 10, SliceQuadrature::BandLimited)).unwrap();
        let out = k.apply(&psi).unwrap();
        assert!((out.norm() - 1.0).abs() < 1e-6);
        assert!((out.mean_position() - 2.0).abs() < 1e-3);
        let reference = propagate(&closed_form_matrix(&FreeKernel::new(1.0, 1.0), grid, 0.0, 1.0).unwrap(), &psi).unwrap();
        assert!(fidelity(&out, &reference) > 0.9999);
    }
}
