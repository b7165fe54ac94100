use std::f64::consts::{FRAC_PI_4, PI};
use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use super::{Grid1D, KernelMatrix, PropagatorError, Quadrature};
use crate::expr::{eval, Bindings, Expr, Sampler, Symbol};
use crate::symmetry::PointFamily;

/// Pointwise access to `K(x1, t1; x0, t0)`.
pub trait KernelProvider: Sync {
    fn kernel(&self, x1: f64, t1: f64, x0: f64, t0: f64) -> Result<Complex64, PropagatorError>;
}

/// `sqrt(m / (2π i ħ Δt))` with `sqrt(i) = e^{iπ/4}`.
fn prefactor(m: f64, hbar: f64, dt: f64) -> Complex64 {
    let amplitude = (m / (2.0 * PI * hbar * dt.abs())).sqrt();
    Complex64::from_polar(amplitude, -FRAC_PI_4 * dt.signum())
}

pub fn free_kernel(m: f64, hbar: f64, x1: f64, t1: f64, x0: f64, t0: f64) -> Result<Complex64, PropagatorError> {
    let dt = t1 - t0;
    if dt == 0.0 {
        return Err(PropagatorError::ZeroInterval);
    }
    let d = x1 - x0;
    Ok(prefactor(m, hbar, dt) * Complex64::from_polar(1.0, m * d * d / (2.0 * hbar * dt)))
}

/// Kernel for `V = m g x`.
pub fn linear_potential_kernel(
    m: f64,
    g: f64,
    hbar: f64,
    x1: f64,
    t1: f64,
    x0: f64,
    t0: f64,
) -> Result<Complex64, PropagatorError> {
    let dt = t1 - t0;
    if dt == 0.0 {
        return Err(PropagatorError::ZeroInterval);
    }
    let d = x1 - x0;
    let dt2 = dt * dt;
    let bracket = d * d - g * (x1 + x0) * dt2 - g * g * dt2 * dt2 / 12.0;
    Ok(prefactor(m, hbar, dt) * Complex64::from_polar(1.0, m * bracket / (2.0 * hbar * dt)))
}

#[derive(Debug, Clone, Copy)]
pub struct FreeKernel {
    pub m: f64,
    pub hbar: f64,
}

impl FreeKernel {
    pub fn new(m: f64, hbar: f64) -> Self {
        Self { m, hbar }
    }
}

impl KernelProvider for FreeKernel {
    fn kernel(&self, x1: f64, t1: f64, x0: f64, t0: f64) -> Result<Complex64, PropagatorError> {
        free_kernel(self.m, self.hbar, x1, t1, x0, t0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearPotentialKernel {
    pub m: f64,
    pub g: f64,
    pub hbar: f64,
}

impl LinearPotentialKernel {
    pub fn new(m: f64, g: f64, hbar: f64) -> Self {
        Self { m, g, hbar }
    }
}

impl KernelProvider for LinearPotentialKernel {
    fn kernel(&self, x1: f64, t1: f64, x0: f64, t0: f64) -> Result<Complex64, PropagatorError> {
        linear_potential_kernel(self.m, self.g, self.hbar, x1, t1, x0, t0)
    }
}

/// Which side of `K'(x'₁; x'₀) = K(x₁; x₀) e^{i[F(x₁,t₁) − F(x₀,t₀)]/ħ}` the
/// wrapped kernel supplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Wrapped kernel is `K'`; returns `K(x₁; x₀)` using the forward map.
    Pullback,
    /// Wrapped kernel is `K`; returns `K'(x'₁; x'₀)` by inverting the map.
    Pushforward,
}

/// A one-dimensional unimodular point map with its gauge function, evaluated
/// numerically.
struct PointMap {
    map: Expr,
    slope: Expr,
    time_shift: f64,
    gauge: Expr,
    constants: Bindings,
}

impl PointMap {
    fn new(fam: &PointFamily, gauge: &Expr, constants: &Bindings) -> Result<Self, PropagatorError> {
        if fam.n_dof() != 1 || fam.param().is_some() || gauge.contains(&Symbol::param()) {
            return Err(PropagatorError::FamilyShape);
        }
        let sampler = Sampler::default().with_fixed(constants.clone());
        fam.check_unimodular(&sampler)?;
        let map = fam.qprime[0].clone();
        let slope = map.diff(&Symbol::q(0));
        let mut b = constants.clone();
        b.set_state(&[0.0], &[0.0], 0.0);
        let time_shift = eval(&fam.tprime, &b)?;
        Ok(Self {
            map,
            slope,
            time_shift,
            gauge: gauge.clone(),
            constants: constants.clone(),
        })
    }

    fn at(&self, x: f64, t: f64) -> Bindings {
        let mut b = self.constants.clone();
        b.set_state(&[x], &[0.0], t);
        b
    }

    fn forward(&self, x: f64, t: f64) -> Result<f64, PropagatorError> {
        Ok(eval(&self.map, &self.at(x, t))?)
    }

    fn gauge(&self, x: f64, t: f64) -> Result<f64, PropagatorError> {
        Ok(eval(&self.gauge, &self.at(x, t))?)
    }

    /// Solves `map(x, t) = y` by Newton iteration from `x = y`.
    fn inverse(&self, y: f64, t: f64) -> Result<f64, PropagatorError> {
        let mut x = y;
        for _ in 0..60 {
            let r = self.forward(x, t)? - y;
            if r.abs() <= 1e-14 * (1.0 + y.abs()) {
                return Ok(x);
            }
            let s = eval(&self.slope, &self.at(x, t))?;
            if s.abs() < 1e-300 {
                return Err(PropagatorError::NonInvertible { x });
            }
            x -= r / s;
        }
        if (self.forward(x, t)? - y).abs() <= 1e-10 * (1.0 + y.abs()) {
            Ok(x)
        } else {
            Err(PropagatorError::NonInvertible { x })
        }
    }
}

/// A kernel transformed by a unimodular point map and gauge phase.
pub struct TransformedKernel<'a> {
    inner: &'a dyn KernelProvider,
    map: PointMap,
    hbar: f64,
    direction: Direction,
}

impl KernelProvider for TransformedKernel<'_> {
    fn kernel(&self, x1: f64, t1: f64, x0: f64, t0: f64) -> Result<Complex64, PropagatorError> {
        let m = &self.map;
        match self.direction {
            Direction::Pullback => {
                let k = self.inner.kernel(
                    m.forward(x1, t1)?,
                    t1 + m.time_shift,
                    m.forward(x0, t0)?,
                    t0 + m.time_shift,
                )?;
                let phase = (m.gauge(x1, t1)? - m.gauge(x0, t0)?) / self.hbar;
                Ok(k * Complex64::from_polar(1.0, -phase))
            }
            Direction::Pushforward => {
                let (s1, s0) = (t1 - m.time_shift, t0 - m.time_shift);
                let (y1, y0) = (m.inverse(x1, s1)?, m.inverse(x0, s0)?);
                let k = self.inner.kernel(y1, s1, y0, s0)?;
                let phase = (m.gauge(y1, s1)? - m.gauge(y0, s0)?) / self.hbar;
                Ok(k * Complex64::from_polar(1.0, phase))
            }
        }
    }
}

/// Wraps `inner` according to `direction`; the family must be
/// one-dimensional, parameter-free and unimodular.
pub fn transform_kernel<'a>(
    inner: &'a dyn KernelProvider,
    fam: &PointFamily,
    gauge: &Expr,
    constants: &Bindings,
    hbar: f64,
    direction: Direction,
) -> Result<TransformedKernel<'a>, PropagatorError> {
    Ok(TransformedKernel {
        inner,
        map: PointMap::new(fam, gauge, constants)?,
        hbar,
        direction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamSample {
    pub x1: f64,
    pub t1: f64,
    pub x0: f64,
    pub t0: f64,
}

impl FundamSample {
    /// `n × n` positions in `[lo, hi]²` for each interval in `dts`, starting
    /// at `t0`.
    pub fn lattice(lo: f64, hi: f64, n: usize, dts: &[f64], t0: f64) -> Vec<FundamSample> {
        let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
        let mut out = Vec::with_capacity(n * n * dts.len());
        for &dt in dts {
            for i in 0..n {
                for j in 0..n {
                    out.push(FundamSample {
                        x1: lo + i as f64 * step,
                        t1: t0 + dt,
                        x0: lo + j as f64 * step,
                        t0,
                    });
                }
            }
        }
        out
    }
}

/// Max over samples of
/// `|K'(x'₁, t'₁; x'₀, t'₀) − K(x₁, t₁; x₀, t₀) e^{i[F(x₁,t₁) − F(x₀,t₀)]/ħ}|`.
pub fn check_fundam(
    primed: &dyn KernelProvider,
    unprimed: &dyn KernelProvider,
    fam: &PointFamily,
    gauge: &Expr,
    constants: &Bindings,
    hbar: f64,
    samples: &[FundamSample],
) -> Result<f64, PropagatorError> {
    let map = PointMap::new(fam, gauge, constants)?;
    let deviations = samples
        .par_iter()
        .map(|s| {
            let lhs = primed.kernel(
                map.forward(s.x1, s.t1)?,
                s.t1 + map.time_shift,
                map.forward(s.x0, s.t0)?,
                s.t0 + map.time_shift,
            )?;
            let phase = (map.gauge(s.x1, s.t1)? - map.gauge(s.x0, s.t0)?) / hbar;
            let rhs = unprimed.kernel(s.x1, s.t1, s.x0, s.t0)? * Complex64::from_polar(1.0, phase);
            Ok((lhs - rhs).norm())
        })
        .collect::<Result<Vec<f64>, PropagatorError>>()?;
    Ok(deviations.into_iter().fold(0.0, f64::max))
}

/// Samples a provider on the grid with trapezoid weights for propagation.
pub fn closed_form_matrix(
    provider: &dyn KernelProvider,
    grid: Grid1D,
    t0: f64,
    t1: f64,
) -> Result<KernelMatrix, PropagatorError> {
    let n = grid.n;
    let xs = grid.points();
    let rows = (0..n)
        .into_par_iter()
        .map(|j| {
            xs.iter()
                .map(|&x0| provider.kernel(xs[j], t1, x0, t0))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(KernelMatrix::from_entries(
        grid,
        t0,
        t1,
        rows.into_iter().flatten().collect(),
        Quadrature::Trapezoid,
    ))
}

/// Writes `x1,x0,re,im` rows on a subsampled grid of at most `max_points`
/// points per axis.
pub fn write_kernel_samples<W: Write>(
    provider: &dyn KernelProvider,
    grid: Grid1D,
    t0: f64,
    t1: f64,
    max_points: usize,
    mut out: W,
) -> io::Result<()> {
    let stride = grid.n.div_ceil(max_points.max(1)).max(1);
    let idx: Vec<usize> = (0..grid.n).step_by(stride).collect();
    writeln!(out, "x1,x0,re,im")?;
    for &j in &idx {
        for &k in &idx {
            let (x1, x0) = (grid.x(j), grid.x(k));
            let v = provider
                .kernel(x1, t1, x0, t0)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
            writeln!(out, "{x1},{x0},{},{}", v.re, v.im)?;
        }
    }
    Ok(())
}
