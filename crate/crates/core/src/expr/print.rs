//! Printer emitting the parser's grammar.

use num_traits::{One, Signed};

use super::{Expr, Rational, Symbol, Var};

const ADD: u8 = 1;
const MUL: u8 = 2;
const NEG: u8 = 3;
const POW: u8 = 4;
const ATOM: u8 = 5;

pub(super) fn to_dsl(e: &Expr, param: &str) -> String {
    Printer { param }.show(e).0
}

struct Printer<'a> {
    param: &'a str,
}

impl Printer<'_> {
    fn wrap(&self, e: &Expr, min: u8) -> String {
        let (s, prec) = self.show(e);
        if prec < min {
            format!("({s})")
        } else {
            s
        }
    }

    fn show(&self, e: &Expr) -> (String, u8) {
        match e {
            Expr::Num(r) => show_rational(r),
            Expr::Sym(Symbol::Var(Var::Param)) => (self.param.to_string(), ATOM),
            Expr::Sym(s) => (s.to_string(), ATOM),
            Expr::Func(f, arg) => (format!("{}({})", f.name(), self.show(arg).0), ATOM),
            Expr::Add(terms) => {
                let mut out = String::new();
                for (i, term) in terms.iter().enumerate() {
                    let (negated, is_neg) = negate_if_negative(term);
                    if i == 0 {
                        if is_neg {
                            out.push('-');
                            out.push_str(&self.wrap(&negated, MUL));
                        } else {
                            out.push_str(&self.wrap(term, ADD));
                        }
                    } else if is_neg {
                        out.push_str(" - ");
                        out.push_str(&self.wrap(&negated, MUL));
                    } else {
                        out.push_str(" + ");
                        out.push_str(&self.wrap(term, MUL));
                    }
                }
                (out, ADD)
            }
            Expr::Mul(_) | Expr::Pow(..) => self.show_product(e),
        }
    }

    fn show_product(&self, e: &Expr) -> (String, u8) {
        let factors: Vec<Expr> = match e {
            Expr::Mul(fs) => fs.clone(),
            other => vec![other.clone()],
        };
        let mut coeff = Rational::one();
        let mut numer = Vec::new();
        let mut denom = Vec::new();
        for f in factors {
            match f {
                Expr::Num(r) => coeff *= r,
                Expr::Pow(base, k) if k.is_negative() => denom.push(Expr::pow(*base, -k)),
                other => numer.push(other),
            }
        }
        if numer.is_empty() && denom.is_empty() {
            return show_rational(&coeff);
        }
        if numer.len() == 1 && denom.is_empty() && coeff.is_one() {
            if let Expr::Pow(base, k) = &numer[0] {
                let exp = if k.is_integer() {
                    k.to_string()
                } else {
                    format!("({k})")
                };
                return (format!("{}^{}", self.wrap(base, ATOM), exp), POW);
            }
        }
        let negative = coeff.is_negative();
        let coeff = coeff.abs();
        let num_int = Rational::from_integer(coeff.numer().clone());
        let den_int = Rational::from_integer(coeff.denom().clone());
        let mut parts: Vec<String> = Vec::new();
        if !num_int.is_one() || numer.is_empty() {
            parts.push(show_rational(&num_int).0);
        }
        parts.extend(numer.iter().map(|f| self.wrap(f, NEG)));
        let mut out = parts.join("*");
        let mut den_parts: Vec<String> = Vec::new();
        if !den_int.is_one() {
            den_parts.push(show_rational(&den_int).0);
        }
        den_parts.extend(denom.iter().map(|f| self.wrap(f, NEG)));
        match den_parts.len() {
            0 => {}
            1 => {
                out.push('/');
                out.push_str(&den_parts[0]);
            }
            _ => {
                out.push_str("/(");
                out.push_str(&den_parts.join("*"));
                out.push(')');
            }
        }
        if negative {
            (format!("-{out}"), NEG)
        } else {
            (out, MUL)
        }
    }
}

fn show_rational(r: &Rational) -> (String, u8) {
    let prec = if r.is_negative() {
        NEG
    } else if r.is_integer() {
        ATOM
    } else {
        MUL
    };
    if r.is_integer() {
        (r.numer().to_string(), prec)
    } else {
        (format!("{}/{}", r.numer(), r.denom()), prec)
    }
}

/// Returns (-term, true) when the term carries a negative leading literal.
fn negate_if_negative(term: &Expr) -> (Expr, bool) {
    match term {
        Expr::Num(r) if r.is_negative() => (Expr::Num(-r.clone()), true),
        Expr::Mul(fs) => match fs.first() {
            Some(Expr::Num(r)) if r.is_negative() => {
                let mut rest = fs.clone();
                rest[0] = Expr::Num(-r.clone());
                (Expr::mul(rest), true)
            }
            _ => (term.clone(), false),
        },
        _ => (term.clone(), false),
    }
}
