//! One-dimensional propagators on a uniform grid.
//!
//! Closed-form kernels are evaluated pointwise through [`KernelProvider`];
//! time-sliced kernels are applied lazily to wavefunctions (see
//! [`slicer`]). Kernels are compared through their action on Gaussian packets
//! with [`fidelity`].

mod closed_form;
pub mod slicer;

use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{EvalError, SamplingError};
use crate::symmetry::SymmetryError;

pub use closed_form::{
    check_fundam, closed_form_matrix, free_kernel, linear_potential_kernel, transform_kernel,
    write_kernel_samples, Direction, FreeKernel, FundamSample, KernelProvider, LinearPotentialKernel,
    TransformedKernel,
};
pub use slicer::{timesliced_kernel, SliceQuadrature, TimeSlicedKernel};

#[derive(Debug, Error)]
pub enum PropagatorError {
    #[error("grid needs at least two points and xmax > xmin")]
    InvalidGrid,
    #[error("kernel requested at equal times")]
    ZeroInterval,
    #[error("wavefunction and kernel live on different grids")]
    GridMismatch,
    #[error("slice count must be at least one")]
    NoSlices,
    #[error("time-sliced kernels need L = m v^2/2 - V(q, t) in one dimension: {0}")]
    NonStandardLagrangian(String),
    #[error("point x = {x} is not on the kernel grid")]
    OffGrid { x: f64 },
    #[error("transformation is not invertible near x = {x}")]
    NonInvertible { x: f64 },
    #[error("transformation must be one-dimensional with its parameter fixed")]
    FamilyShape,
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// Uniform grid `x_i = xmin + i dx`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub xmin: f64,
    pub xmax: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(xmin: f64, xmax: f64, n: usize) -> Result<Self, PropagatorError> {
        if n < 2 || !(xmax > xmin) || !xmin.is_finite() || !xmax.is_finite() {
            return Err(PropagatorError::InvalidGrid);
        }
        Ok(Self { xmin, xmax, n })
    }

    pub fn dx(&self) -> f64 {
        (self.xmax - self.xmin) / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.xmin + i as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dx = self.dx();
        let mut w = vec![dx; self.n];
        w[0] = dx / 2.0;
        w[self.n - 1] = dx / 2.0;
        w
    }

    /// Index of `x` when it sits on a grid point (to `1e-9 dx`).
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let r = (x - self.xmin) / self.dx();
        let i = r.round();
        if (r - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < self.n {
            Some(i as usize)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMeta {
    pub center: f64,
    pub width: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct Wavepacket {
    pub grid: Grid1D,
    pub values: Vec<Complex64>,
    pub meta: Option<GaussianMeta>,
}

impl Wavepacket {
    pub fn zeros(grid: Grid1D) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.n],
            meta: None,
        }
    }

    /// `(2πσ²)^(-1/4) exp(-(x-x0)²/(4σ²) + i p0 x/ħ)`.
    pub fn gaussian(grid: Grid1D, center: f64, width: f64, momentum: f64, hbar: f64) -> Self {
        let norm = (2.0 * std::f64::consts::PI * width * width).powf(-0.25);
        let values = grid
            .points()
            .into_iter()
            .map(|x| {
                let d = x - center;
                let envelope = norm * (-d * d / (4.0 * width * width)).exp();
                Complex64::from_polar(envelope, momentum * x / hbar)
            })
            .collect();
        Self {
            grid,
            values,
            meta: Some(GaussianMeta {
                center,
                width,
                momentum,
            }),
        }
    }

    /// Trapezoid-rule inner product `⟨self|other⟩`.
    pub fn inner(&self, other: &Wavepacket) -> Complex64 {
        let w = self.grid.trapezoid_weights();
        self.values
            .iter()
            .zip(&other.values)
            .zip(w)
            .map(|((a, b), w)| a.conj() * b * w)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).re.sqrt()
    }

    pub fn mean_position(&self) -> f64 {
        let w = self.grid.trapezoid_weights();
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, (psi, w)) in self.values.iter().zip(w).enumerate() {
            let p = psi.norm_sqr() * w;
            num += self.grid.x(i) * p;
            den += p;
        }
        num / den
    }

    /// CSV with header `x,re,im,abs2`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,re,im,abs2")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{},{},{}", self.grid.x(i), v.re, v.im, v.norm_sqr())?;
        }
        Ok(())
    }
}

/// `|⟨a|b⟩| / (‖a‖ ‖b‖)`.
pub fn fidelity(a: &Wavepacket, b: &Wavepacket) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.inner(b).norm() / (na * nb)
}

/// How the kernel integral `∫ K(x, x') ψ(x') dx'` is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    Trapezoid,
    Uniform,
}

/// Dense `K(x_j, t1; x_k, t0)` on a grid.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub grid: Grid1D,
    pub t0: f64,
    pub t1: f64,
    entries: Vec<Complex64>,
    pub quadrature: Quadrature,
}

impl KernelMatrix {
    pub fn from_entries(grid: Grid1D, t0: f64, t1: f64, entries: Vec<Complex64>, quadrature: Quadrature) -> Self {
        assert_eq!(entries.len(), grid.n * grid.n);
        Self {
            grid,
            t0,
            t1,
            entries,
            quadrature,
        }
    }

    pub fn get(&self, j: usize, k: usize) -> Complex64 {
        self.entries[j * self.grid.n + k]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn weights(&self) -> Vec<f64> {
        match self.quadrature {
            Quadrature::Trapezoid => self.grid.trapezoid_weights(),
            Quadrature::Uniform => vec![self.grid.dx(); self.grid.n],
        }
    }

    /// CSV with header `x1,x0,re,im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x1,x0,re,im")?;
        let n = self.grid.n;
        for j in 0..n {
            for k in 0..n {
                let v = self.get(j, k);
                writeln!(out, "{},{},{},{}", self.grid.x(j), self.grid.x(k), v.re, v.im)?;
            }
        }
        Ok(())
    }
}

impl KernelProvider for KernelMatrix {
    fn kernel(&self, x1: f64, t1: f64, x0: f64, t0: f64) -> Result<Complex64, PropagatorError> {
        if (t1 - self.t1).abs() > 1e-12 || (t0 - self.t0).abs() > 1e-12 {
            return Err(PropagatorError::GridMismatch);
        }
        let j = self.grid.index_of(x1).ok_or(PropagatorError::OffGrid { x: x1 })?;
        let k = self.grid.index_of(x0).ok_or(PropagatorError::OffGrid { x: x0 })?;
        Ok(self.get(j, k))
    }
}

/// `ψ'(x_j) = Σ_k K(j, k) w_k ψ(x_k)`.
pub fn propagate(kernel: &KernelMatrix, psi: &Wavepacket) -> Result<Wavepacket, PropagatorError> {
    if kernel.grid != psi.grid {
        return Err(PropagatorError::GridMismatch);
    }
    let n = kernel.grid.n;
    let weighted: Vec<Complex64> = psi
        .values
        .iter()
        .zip(kernel.weights())
        .map(|(v, w)| v * w)
        .collect();
    let values = (0..n)
        .into_par_iter()
        .map(|j| {
            kernel.entries[j * n..(j + 1) * n]
                .iter()
                .zip(&weighted)
                .map(|(k, v)| k * v)
                .sum()
        })
        .collect();
    Ok(Wavepacket {
        grid: psi.grid,
        values,
        meta: None,
    })
}
