use std::collections::{BTreeMap, HashMap};

use num_traits::Signed;
use thiserror::Error;

use super::{rat_to_f64, Expr, Func, Symbol};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no binding for symbol `{0}`")]
    MissingBinding(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Numeric values for symbols.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    values: HashMap<Symbol, f64>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_constants(constants: &BTreeMap<String, f64>) -> Self {
        let mut b = Self::new();
        for (k, v) in constants {
            b.set(Symbol::Const(k.clone()), *v);
        }
        b
    }

    pub fn set(&mut self, sym: Symbol, value: f64) -> &mut Self {
        self.values.insert(sym, value);
        self
    }

    pub fn with(mut self, sym: Symbol, value: f64) -> Self {
        self.values.insert(sym, value);
        self
    }

    pub fn get(&self, sym: &Symbol) -> Option<f64> {
        self.values.get(sym).copied()
    }

    pub fn contains(&self, sym: &Symbol) -> bool {
        self.values.contains_key(sym)
    }

    /// Binds `q_i`, `v_i` and `t` from a state vector.
    pub fn set_state(&mut self, q: &[f64], v: &[f64], t: f64) -> &mut Self {
        for (i, x) in q.iter().enumerate() {
            self.set(Symbol::q(i), *x);
        }
        for (i, x) in v.iter().enumerate() {
            self.set(Symbol::v(i), *x);
        }
        self.set(Symbol::t(), t)
    }

    pub fn extend(&mut self, other: &Bindings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), *v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Symbol, &f64)> {
        self.values.iter()
    }
}

/// Evaluates `e` in IEEE double precision.
pub fn eval(e: &Expr, bindings: &Bindings) -> Result<f64, EvalError> {
    eval_guarded(e, bindings, 0.0)
}

/// Like [`eval`], but additionally treats negative powers of bases with
/// magnitude at or below `guard` as singular.
pub fn eval_guarded(e: &Expr, bindings: &Bindings, guard: f64) -> Result<f64, EvalError> {
    let value = eval_inner(e, bindings, guard)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EvalError::Domain(format!("non-finite value in `{e}`")))
    }
}

fn eval_inner(e: &Expr, b: &Bindings, guard: f64) -> Result<f64, EvalError> {
    Ok(match e {
        Expr::Num(r) => rat_to_f64(r),
        Expr::Sym(s) => b
            .get(s)
            .ok_or_else(|| EvalError::MissingBinding(s.to_string()))?,
        Expr::Add(xs) => {
            let mut acc = 0.0;
            for x in xs {
                acc += eval_inner(x, b, guard)?;
            }
            acc
        }
        Expr::Mul(xs) => {
            let mut acc = 1.0;
            for x in xs {
                acc *= eval_inner(x, b, guard)?;
            }
            acc
        }
        Expr::Pow(base, k) => {
            let x = eval_inner(base, b, guard)?;
            if k.is_negative() && x.abs() <= guard {
                return Err(EvalError::Domain(format!("singular power of `{base}`")));
            }
            if k.is_integer() {
                let n = rat_to_f64(k) as i32;
                x.powi(n)
            } else {
                if x < 0.0 {
                    return Err(EvalError::Domain(format!("fractional power of negative `{base}`")));
                }
                x.powf(rat_to_f64(k))
            }
        }
        Expr::Func(f, arg) => {
            let x = eval_inner(arg, b, guard)?;
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
                Func::Sqrt => {
                    if x < 0.0 {
                        return Err(EvalError::Domain(format!("sqrt of negative `{arg}`")));
                    }
                    x.sqrt()
                }
            }
        }
    })
}
