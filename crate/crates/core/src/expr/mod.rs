//! Symbolic expressions over generalized coordinates `q1..qn`, velocities
//! `v1..vn`, time `t`, a group parameter and named constants.
//!
//! Expressions are immutable trees built through normalizing constructors
//! ([`Expr::add`], [`Expr::mul`], [`Expr::pow`]) that flatten nested sums and
//! products and fold numeric literals. There is no general simplifier: identity
//! questions are answered by randomized evaluation ([`equal_numeric`]) and
//! polynomial bookkeeping goes through [`Poly`].

mod eval;
mod parse;
mod poly;
mod print;
mod sample;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub use eval::{eval, eval_guarded, Bindings, EvalError};
pub use parse::{parse_expr, ParseError, Parser, DEFAULT_CONSTANTS};
pub use poly::{Atom, Monomial, Poly};
pub use sample::{equal_numeric, max_abs_residual, max_relative_deviation, Sampler, SamplingError};

/// Exact rational literal type.
pub type Rational = BigRational;

/// A variable slot of a mechanical system. Indices are zero-based; the DSL
/// spells them one-based (`q1`, `v1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Coord(usize),
    Vel(usize),
    Time,
    Param,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Var(Var),
    Const(String),
}

impl Symbol {
    pub fn q(i: usize) -> Self {
        Symbol::Var(Var::Coord(i))
    }
    pub fn v(i: usize) -> Self {
        Symbol::Var(Var::Vel(i))
    }
    pub fn t() -> Self {
        Symbol::Var(Var::Time)
    }
    pub fn param() -> Self {
        Symbol::Var(Var::Param)
    }
    pub fn constant(name: &str) -> Self {
        Symbol::Const(name.to_string())
    }

    /// True for `q_i`, `v_i` and `t`: the symbols a trajectory binds.
    pub fn is_kinematic(&self) -> bool {
        matches!(self, Symbol::Var(Var::Coord(_) | Var::Vel(_) | Var::Time))
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Var(Var::Coord(i)) => write!(f, "q{}", i + 1),
            Symbol::Var(Var::Vel(i)) => write!(f, "v{}", i + 1),
            Symbol::Var(Var::Time) => f.write_str("t"),
            // The printer substitutes the family's parameter name when known.
            Symbol::Var(Var::Param) => f.write_str("s"),
            Symbol::Const(name) => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }
}

/// Expression tree. Subtraction is `a + (-1)*b`, division is `a * b^-1`.
/// Exponents are integers or half-integers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Num(Rational),
    Sym(Symbol),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Pow(Box<Expr>, Rational),
    Func(Func, Box<Expr>),
}

pub(crate) fn rat(n: i64, d: i64) -> Rational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub(crate) fn rat_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

impl Expr {
    pub fn zero() -> Self {
        Expr::Num(Rational::zero())
    }
    pub fn one() -> Self {
        Expr::Num(Rational::one())
    }
    pub fn int(n: i64) -> Self {
        Expr::Num(rat(n, 1))
    }
    pub fn ratio(n: i64, d: i64) -> Self {
        Expr::Num(rat(n, d))
    }
    /// The exact binary value of `x` (zero for non-finite input).
    pub fn from_f64(x: f64) -> Self {
        Expr::Num(BigRational::from_float(x).unwrap_or_else(Rational::zero))
    }
    pub fn q(i: usize) -> Self {
        Expr::Sym(Symbol::q(i))
    }
    pub fn v(i: usize) -> Self {
        Expr::Sym(Symbol::v(i))
    }
    pub fn t() -> Self {
        Expr::Sym(Symbol::t())
    }
    pub fn param() -> Self {
        Expr::Sym(Symbol::param())
    }
    pub fn constant(name: &str) -> Self {
        Expr::Sym(Symbol::constant(name))
    }

    pub fn as_num(&self) -> Option<&Rational> {
        match self {
            Expr::Num(r) => Some(r),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(r) if r.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Num(r) if r.is_one())
    }

    /// Flattening sum with literal folding.
    pub fn add(terms: impl IntoIterator<Item = Expr>) -> Self {
        let mut acc = Rational::zero();
        let mut out = Vec::new();
        for term in terms {
            match term {
                Expr::Num(r) => acc += r,
                Expr::Add(inner) => {
                    for t in inner {
                        match t {
                            Expr::Num(r) => acc += r,
                            other => out.push(other),
                        }
                    }
                }
                other => out.push(other),
            }
        }
        if !acc.is_zero() {
            out.insert(0, Expr::Num(acc));
        }
        match out.len() {
            0 => Expr::zero(),
            1 => out.pop().unwrap(),
            _ => Expr::Add(out),
        }
    }

    /// Flattening product with literal folding; any zero factor collapses it.
    pub fn mul(factors: impl IntoIterator<Item = Expr>) -> Self {
        let mut acc = Rational::one();
        let mut out = Vec::new();
        for factor in factors {
            match factor {
                Expr::Num(r) => acc *= r,
                Expr::Mul(inner) => {
                    for f in inner {
                        match f {
                            Expr::Num(r) => acc *= r,
                            other => out.push(other),
                        }
                    }
                }
                other => out.push(other),
            }
        }
        if acc.is_zero() {
            return Expr::zero();
        }
        if !acc.is_one() || out.is_empty() {
            out.insert(0, Expr::Num(acc));
        }
        match out.len() {
            1 => out.pop().unwrap(),
            _ => Expr::Mul(out),
        }
    }

    pub fn pow(base: Expr, exp: Rational) -> Self {
        if exp.is_zero() {
            return Expr::one();
        }
        if exp.is_one() {
            return base;
        }
        match base {
            Expr::Num(ref b) if exp.is_integer() => {
                let k = exp.to_integer();
                if b.is_zero() && k.is_negative() {
                    // Leave the singular literal in place; evaluation reports it.
                    return Expr::Pow(Box::new(base), exp);
                }
                match k.to_i32() {
                    Some(k) if k.abs() <= 64 => Expr::Num(num_traits::pow::Pow::pow(b.clone(), k)),
                    _ => Expr::Pow(Box::new(base), exp),
                }
            }
            Expr::Pow(inner, e1) if e1.is_integer() && exp.is_integer() => {
                Expr::pow(*inner, e1 * exp)
            }
            Expr::Mul(factors) if exp.is_integer() => {
                Expr::mul(factors.into_iter().map(|f| Expr::pow(f, exp.clone())))
            }
            other => Expr::Pow(Box::new(other), exp),
        }
    }

    pub fn powi(self, k: i64) -> Self {
        Expr::pow(self, rat(k, 1))
    }

    pub fn recip(self) -> Self {
        self.powi(-1)
    }

    pub fn func(f: Func, arg: Expr) -> Self {
        if let Expr::Num(r) = &arg {
            if r.is_zero() {
                match f {
                    Func::Sin | Func::Sqrt => return Expr::zero(),
                    Func::Cos | Func::Exp => return Expr::one(),
                }
            }
        }
        Expr::Func(f, Box::new(arg))
    }

    pub fn sin(self) -> Self {
        Expr::func(Func::Sin, self)
    }
    pub fn cos(self) -> Self {
        Expr::func(Func::Cos, self)
    }
    pub fn exp(self) -> Self {
        Expr::func(Func::Exp, self)
    }
    pub fn sqrt(self) -> Self {
        Expr::func(Func::Sqrt, self)
    }

    /// Visits every symbol occurrence.
    pub fn for_each_symbol(&self, f: &mut impl FnMut(&Symbol)) {
        match self {
            Expr::Num(_) => {}
            Expr::Sym(s) => f(s),
            Expr::Add(xs) | Expr::Mul(xs) => xs.iter().for_each(|x| x.for_each_symbol(f)),
            Expr::Pow(b, _) => b.for_each_symbol(f),
            Expr::Func(_, a) => a.for_each_symbol(f),
        }
    }

    pub fn symbols(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        self.for_each_symbol(&mut |s| {
            out.insert(s.clone());
        });
        out
    }

    pub fn contains(&self, sym: &Symbol) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Sym(s) => s == sym,
            Expr::Add(xs) | Expr::Mul(xs) => xs.iter().any(|x| x.contains(sym)),
            Expr::Pow(b, _) => b.contains(sym),
            Expr::Func(_, a) => a.contains(sym),
        }
    }

    pub fn contains_any(&self, pred: &impl Fn(&Symbol) -> bool) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Sym(s) => pred(s),
            Expr::Add(xs) | Expr::Mul(xs) => xs.iter().any(|x| x.contains_any(pred)),
            Expr::Pow(b, _) => b.contains_any(pred),
            Expr::Func(_, a) => a.contains_any(pred),
        }
    }

    /// Exact partial derivative, treating every symbol as independent.
    pub fn diff(&self, var: &Symbol) -> Expr {
        if !self.contains(var) {
            return Expr::zero();
        }
        match self {
            Expr::Num(_) => Expr::zero(),
            Expr::Sym(s) => {
                if s == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Add(terms) => Expr::add(terms.iter().map(|t| t.diff(var))),
            Expr::Mul(factors) => {
                let mut terms = Vec::new();
                for (i, f) in factors.iter().enumerate() {
                    if !f.contains(var) {
                        continue;
                    }
                    let mut prod = Vec::with_capacity(factors.len());
                    for (j, g) in factors.iter().enumerate() {
                        if i == j {
                            prod.push(f.diff(var));
                        } else {
                            prod.push(g.clone());
                        }
                    }
                    terms.push(Expr::mul(prod));
                }
                Expr::add(terms)
            }
            Expr::Pow(base, k) => Expr::mul([
                Expr::Num(k.clone()),
                Expr::pow((**base).clone(), k - Rational::one()),
                base.diff(var),
            ]),
            Expr::Func(f, arg) => {
                let inner = arg.diff(var);
                let a = (**arg).clone();
                let outer = match f {
                    Func::Sin => a.cos(),
                    Func::Cos => -a.sin(),
                    Func::Exp => a.exp(),
                    Func::Sqrt => Expr::mul([Expr::ratio(1, 2), a.sqrt().recip()]),
                };
                Expr::mul([outer, inner])
            }
        }
    }

    /// Simultaneous substitution: replacements are not themselves rewritten.
    pub fn substitute(&self, map: &HashMap<Symbol, Expr>) -> Expr {
        if map.is_empty() {
            return self.clone();
        }
        match self {
            Expr::Num(_) => self.clone(),
            Expr::Sym(s) => map.get(s).cloned().unwrap_or_else(|| self.clone()),
            Expr::Add(xs) => Expr::add(xs.iter().map(|x| x.substitute(map))),
            Expr::Mul(xs) => Expr::mul(xs.iter().map(|x| x.substitute(map))),
            Expr::Pow(b, k) => Expr::pow(b.substitute(map), k.clone()),
            Expr::Func(f, a) => Expr::func(*f, a.substitute(map)),
        }
    }

    pub fn substitute_one(&self, sym: &Symbol, value: &Expr) -> Expr {
        let mut map = HashMap::new();
        map.insert(sym.clone(), value.clone());
        self.substitute(&map)
    }

    /// Polynomial normal form: expands products and powers of sums and
    /// collects like terms over exact rationals. Non-polynomial pieces
    /// (`sin(..)`, `sqrt(..)`, reciprocals of sums) become opaque atoms with
    /// normalized arguments.
    pub fn expand(&self) -> Expr {
        Poly::from_expr(self).to_expr()
    }

    /// Highest velocity / coordinate index + 1 appearing in the expression.
    pub fn max_dof_index(&self) -> usize {
        let mut n = 0;
        self.for_each_symbol(&mut |s| match s {
            Symbol::Var(Var::Coord(i) | Var::Vel(i)) => n = n.max(i + 1),
            _ => {}
        });
        n
    }

    /// Replaces named constants with numeric literals where a value is given.
    pub fn bind_constants(&self, values: &BTreeMap<String, f64>) -> Expr {
        let map: HashMap<Symbol, Expr> = values
            .iter()
            .filter_map(|(k, v)| {
                BigRational::from_float(*v).map(|r| (Symbol::Const(k.clone()), Expr::Num(r)))
            })
            .collect();
        self.substitute(&map)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print::to_dsl(self, "s"))
    }
}

impl Expr {
    /// Prints in the DSL grammar, spelling the group parameter as `param`.
    pub fn to_dsl(&self, param: &str) -> String {
        print::to_dsl(self, param)
    }
}

impl From<i64> for Expr {
    fn from(n: i64) -> Self {
        Expr::int(n)
    }
}

impl From<Symbol> for Expr {
    fn from(s: Symbol) -> Self {
        Expr::Sym(s)
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::mul([Expr::int(-1), self])
    }
}

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -self.clone()
    }
}

macro_rules! bin_op {
    ($tr:ident, $method:ident, $body:expr) => {
        impl ops::$tr<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $body(self, rhs)
            }
        }
        impl ops::$tr<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $body(self, rhs.clone())
            }
        }
        impl ops::$tr<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $body(self.clone(), rhs)
            }
        }
        impl ops::$tr<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $body(self.clone(), rhs.clone())
            }
        }
    };
}

bin_op!(Add, add, |a, b| Expr::add([a, b]));
bin_op!(Sub, sub, |a, b: Expr| Expr::add([a, -b]));
bin_op!(Mul, mul, |a, b| Expr::mul([a, b]));
bin_op!(Div, div, |a, b: Expr| Expr::mul([a, b.recip()]));
