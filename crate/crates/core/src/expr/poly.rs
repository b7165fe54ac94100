//! Sparse Laurent polynomials with exact rational coefficients over atoms.
//!
//! An atom is either a symbol or an opaque subexpression (`sin(..)`,
//! `sqrt(..)`, a reciprocal of a sum) whose argument has itself been brought
//! to normal form. Identities that only hold through function relations
//! (`sin^2 + cos^2 = 1`) are not detected here.

use std::collections::BTreeMap;

use num_traits::{One, Signed, ToPrimitive, Zero};

use super::{Expr, Func, Rational, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Sym(Symbol),
    Opaque(Box<Expr>),
}

impl Atom {
    pub fn depends_on(&self, pred: &impl Fn(&Symbol) -> bool) -> bool {
        match self {
            Atom::Sym(s) => pred(s),
            Atom::Opaque(e) => e.contains_any(pred),
        }
    }

    pub fn symbol(&self) -> Option<&Symbol> {
        match self {
            Atom::Sym(s) => Some(s),
            Atom::Opaque(_) => None,
        }
    }

    fn to_expr(&self) -> Expr {
        match self {
            Atom::Sym(s) => Expr::Sym(s.clone()),
            Atom::Opaque(e) => (**e).clone(),
        }
    }
}

/// Product of atoms raised to non-zero integer powers, sorted by atom.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(Vec<(Atom, i64)>);

impl Monomial {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn atom(atom: Atom, exp: i64) -> Self {
        if exp == 0 {
            Self::one()
        } else {
            Monomial(vec![(atom, exp)])
        }
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn factors(&self) -> &[(Atom, i64)] {
        &self.0
    }

    pub fn exponent_of(&self, sym: &Symbol) -> i64 {
        self.0
            .iter()
            .find(|(a, _)| a.symbol() == Some(sym))
            .map_or(0, |(_, k)| *k)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut merged: BTreeMap<Atom, i64> = BTreeMap::new();
        for (a, k) in self.0.iter().chain(other.0.iter()) {
            *merged.entry(a.clone()).or_insert(0) += k;
        }
        Monomial(merged.into_iter().filter(|(_, k)| *k != 0).collect())
    }

    pub fn powi(&self, k: i64) -> Monomial {
        Monomial(self.0.iter().map(|(a, e)| (a.clone(), e * k)).filter(|(_, e)| *e != 0).collect())
    }

    /// Splits into (atoms satisfying `pred`, the rest).
    pub fn split(&self, pred: impl Fn(&Atom) -> bool) -> (Monomial, Monomial) {
        let (yes, no): (Vec<_>, Vec<_>) = self.0.iter().cloned().partition(|(a, _)| pred(a));
        (Monomial(yes), Monomial(no))
    }

    pub fn to_expr(&self) -> Expr {
        Expr::mul(self.0.iter().map(|(a, k)| a.to_expr().powi(*k)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Poly {
    terms: BTreeMap<Monomial, Rational>,
}

impl Poly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Rational) -> Self {
        Self::term(Monomial::one(), c)
    }

    pub fn term(mono: Monomial, coeff: Rational) -> Self {
        let mut p = Self::zero();
        p.add_term(mono, coeff);
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rational)> {
        self.terms.iter()
    }

    pub fn add_term(&mut self, mono: Monomial, coeff: Rational) {
        if coeff.is_zero() {
            return;
        }
        let entry = self.terms.entry(mono).or_insert_with(Rational::zero);
        *entry += coeff;
        if entry.is_zero() {
            self.terms.retain(|_, c| !c.is_zero());
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                out.add_term(m1.mul(m2), c1 * c2);
            }
        }
        out
    }

    pub fn scale(&self, c: &Rational) -> Poly {
        let mut out = Poly::zero();
        for (m, k) in &self.terms {
            out.add_term(m.clone(), k * c);
        }
        out
    }

    fn powi(&self, k: u32) -> Poly {
        let mut out = Poly::constant(Rational::one());
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    fn single_term(&self) -> Option<(&Monomial, &Rational)> {
        if self.terms.len() == 1 {
            self.terms.iter().next()
        } else {
            None
        }
    }

    pub fn from_expr(e: &Expr) -> Poly {
        match e {
            Expr::Num(r) => Poly::constant(r.clone()),
            Expr::Sym(s) => Poly::term(Monomial::atom(Atom::Sym(s.clone()), 1), Rational::one()),
            Expr::Add(xs) => xs
                .iter()
                .fold(Poly::zero(), |acc, x| acc.add(&Poly::from_expr(x))),
            Expr::Mul(xs) => xs
                .iter()
                .fold(Poly::constant(Rational::one()), |acc, x| acc.mul(&Poly::from_expr(x))),
            Expr::Pow(base, k) => {
                let pb = Poly::from_expr(base);
                if k.is_integer() {
                    let k = k.to_integer().to_i64().unwrap_or(i64::MAX);
                    if (0..=32).contains(&k) {
                        return pb.powi(k as u32);
                    }
                    if pb.is_zero() {
                        return Poly::term(Monomial::atom(Atom::Opaque(Box::new(Expr::zero())), k), Rational::one());
                    }
                    if let Some((mono, c)) = pb.single_term() {
                        if k.abs() <= 64 {
                            let coeff = num_traits::pow::Pow::pow(c.clone(), k as i32);
                            return Poly::term(mono.powi(k), coeff);
                        }
                    }
                    Poly::term(Monomial::atom(Atom::Opaque(Box::new(pb.to_expr())), k), Rational::one())
                } else {
                    // Half-integer: (sqrt(b))^(2k).
                    let twice = (k * Rational::from_integer(2.into())).to_integer();
                    let root = Expr::Func(Func::Sqrt, Box::new(pb.to_expr()));
                    Poly::term(
                        Monomial::atom(Atom::Opaque(Box::new(root)), twice.to_i64().unwrap_or(1)),
                        Rational::one(),
                    )
                }
            }
            Expr::Func(f, arg) => {
                let normalized = Poly::from_expr(arg).to_expr();
                let atom = Atom::Opaque(Box::new(Expr::Func(*f, Box::new(normalized))));
                Poly::term(Monomial::atom(atom, 1), Rational::one())
            }
        }
    }

    /// Rewrites `sin(u)^k`, `k >= 2`, as `sin(u)^(k-2) * (1 - cos(u)^2)` until
    /// every sine has degree at most one, so `sin^2 + cos^2` collapses.
    pub fn reduce_trig(&self) -> Poly {
        let mut current = self.clone();
        loop {
            let mut changed = false;
            let mut next = Poly::zero();
            for (mono, c) in &current.terms {
                let square = mono.0.iter().find_map(|(a, k)| match a {
                    Atom::Opaque(e) if *k >= 2 => match &**e {
                        Expr::Func(Func::Sin, arg) => Some((a.clone(), (**arg).clone())),
                        _ => None,
                    },
                    _ => None,
                });
                match square {
                    Some((sin_atom, arg)) => {
                        changed = true;
                        let reduced = mono.mul(&Monomial::atom(sin_atom, -2));
                        let cos_atom = Atom::Opaque(Box::new(Expr::Func(Func::Cos, Box::new(arg))));
                        next.add_term(reduced.clone(), c.clone());
                        next.add_term(reduced.mul(&Monomial::atom(cos_atom, 2)), -c.clone());
                    }
                    None => next.add_term(mono.clone(), c.clone()),
                }
            }
            current = next;
            if !changed {
                return current;
            }
        }
    }

    pub fn to_expr(&self) -> Expr {
        // Positive-coefficient terms first reads better once printed.
        let mut terms: Vec<(&Monomial, &Rational)> = self.terms.iter().collect();
        terms.sort_by_key(|(_, c)| c.is_negative());
        Expr::add(
            terms
                .into_iter()
                .map(|(m, c)| Expr::mul([Expr::Num(c.clone()), m.to_expr()])),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    #[test]
    fn collects_like_terms() {
        let p = Poly::from_expr(&parse_expr("(q1 + 1)^2 - q1^2", 1).unwrap());
        assert_eq!(p.to_expr(), parse_expr("2*q1 + 1", 1).unwrap().expand());
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn reciprocal_monomials() {
        let p = Poly::from_expr(&parse_expr("m*q1/m", 1).unwrap());
        assert_eq!(p.to_expr(), Expr::q(0));
        let p = Poly::from_expr(&parse_expr("e*B0/(2*c)", 1).unwrap());
        let mono = p.terms().next().unwrap().0;
        assert_eq!(mono.exponent_of(&Symbol::constant("c")), -1);
    }

    #[test]
    fn opaque_atoms_have_normalized_arguments() {
        let a = Poly::from_expr(&parse_expr("sin(q1 + q1)", 1).unwrap());
        let b = Poly::from_expr(&parse_expr("sin(2*q1)", 1).unwrap());
        assert_eq!(a, b);
        let c = Poly::from_expr(&parse_expr("1/(q1+t) - 1/(t+q1)", 1).unwrap());
        assert!(c.is_zero());
    }

    #[test]
    fn pythagorean_reduction() {
        let p = Poly::from_expr(&parse_expr("v1^2*sin(omega*t)^2 + v1^2*cos(omega*t)^2 - v1^2", 1).unwrap());
        assert!(!p.is_zero());
        assert!(p.reduce_trig().is_zero());
        let p = Poly::from_expr(&parse_expr("sin(s)^3 + sin(s)*cos(s)^2 - sin(s)", 1).unwrap());
        assert!(p.reduce_trig().is_zero());
    }

    #[test]
    fn half_powers_share_the_sqrt_atom() {
        let p = Poly::from_expr(&parse_expr("sqrt(q1)^3 - q1^(3/2)", 1).unwrap());
        assert!(p.is_zero());
    }
}
