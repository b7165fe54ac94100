//! Randomized identity testing.
//!
//! Free symbols are drawn independently and uniformly from `[-2, 2]` using a
//! ChaCha8 stream seeded from [`Sampler::seed`]. A draw is rejected when
//! either side fails to evaluate or a negative power meets a base with
//! magnitude below [`SINGULAR_GUARD`]; after [`Sampler::max_rejections`]
//! consecutive rejections the comparison errors out.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{eval_guarded, Bindings, EvalError, Expr, Symbol};

pub const SINGULAR_GUARD: f64 = 1e-3;
pub const SAMPLE_HALF_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("no admissible sample point after {rejections} rejections (last: {last})")]
    Exhausted { rejections: usize, last: EvalError },
}

/// Settings for randomized comparisons.
#[derive(Debug, Clone)]
pub struct Sampler {
    pub trials: usize,
    pub tol: f64,
    pub seed: u64,
    pub max_rejections: usize,
    /// Symbols held at fixed values instead of being sampled.
    pub fixed: Bindings,
}

impl Default for Sampler {
    fn default() -> Self {
        Self {
            trials: 24,
            tol: 1e-10,
            seed: 0x5eed,
            max_rejections: 1000,
            fixed: Bindings::new(),
        }
    }
}

impl Sampler {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials.max(1);
        self
    }

    pub fn with_fixed(mut self, fixed: Bindings) -> Self {
        self.fixed = fixed;
        self
    }

    /// Evaluates every expression at `trials` admissible random points and
    /// hands each vector of values to `visit`.
    pub fn for_each_point(
        &self,
        exprs: &[&Expr],
        mut visit: impl FnMut(&Bindings, &[f64]),
    ) -> Result<(), SamplingError> {
        let mut free: Vec<Symbol> = Vec::new();
        for e in exprs {
            for s in e.symbols() {
                if !self.fixed.contains(&s) && !free.contains(&s) {
                    free.push(s);
                }
            }
        }
        free.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut values = vec![0.0; exprs.len()];
        let mut accepted = 0;
        let mut rejections = 0;
        while accepted < self.trials {
            let mut point = self.fixed.clone();
            for s in &free {
                point.set(s.clone(), rng.gen_range(-SAMPLE_HALF_WIDTH..=SAMPLE_HALF_WIDTH));
            }
            let mut failure = None;
            for (slot, e) in values.iter_mut().zip(exprs) {
                match eval_guarded(e, &point, SINGULAR_GUARD) {
                    Ok(x) => *slot = x,
                    Err(err) => {
                        failure = Some(err);
                        break;
                    }
                }
            }
            match failure {
                None => {
                    visit(&point, &values);
                    accepted += 1;
                    rejections = 0;
                }
                Some(last) => {
                    rejections += 1;
                    if rejections >= self.max_rejections {
                        return Err(SamplingError::Exhausted { rejections, last });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Largest `|a - b| / (1 + |a| + |b|)` over the sample points.
pub fn max_relative_deviation(a: &Expr, b: &Expr, sampler: &Sampler) -> Result<f64, SamplingError> {
    let mut worst: f64 = 0.0;
    sampler.for_each_point(&[a, b], |_, v| {
        worst = worst.max((v[0] - v[1]).abs() / (1.0 + v[0].abs() + v[1].abs()));
    })?;
    Ok(worst)
}

/// Probabilistic equality: the relative deviation stays within `sampler.tol`
/// at every sample point.
pub fn equal_numeric(a: &Expr, b: &Expr, sampler: &Sampler) -> Result<bool, SamplingError> {
    Ok(max_relative_deviation(a, b, sampler)? <= sampler.tol)
}

/// Largest absolute value of `e` over the sample points.
pub fn max_abs_residual(e: &Expr, sampler: &Sampler) -> Result<f64, SamplingError> {
    let mut worst: f64 = 0.0;
    sampler.for_each_point(&[e], |_, v| worst = worst.max(v[0].abs()))?;
    Ok(worst)
}
