//! Branch expressions: sums of constants, shifted polynomial monomials
//! `a*(x - c)^k` and signed power laws `a*|x - c|^p`.
//!
//! The grammar is deliberately small so that first and second derivatives are
//! exact and the order of a critical point can be read off the exponents.
//!
//! ```text
//! expr   := ['+'|'-'] term (('+'|'-') term)*
//! term   := number ['*' atom] | atom
//! atom   := 'x' ['^' uint]
//!         | '(' 'x' ('+'|'-') number ')' '^' uint
//!         | '|' 'x' [('+'|'-') number] '|' '^' number
//! ```

use std::fmt;

use crate::dd::Dd;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Term {
    Const(f64),
    /// `coef * (x - center)^power`
    Poly { coef: f64, center: f64, power: u32 },
    /// `coef * |x - center|^exponent`
    AbsPow { coef: f64, center: f64, exponent: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    pub terms: Vec<Term>,
}

impl Term {
    fn eval(&self, x: f64) -> f64 {
        match *self {
            Term::Const(a) => a,
            Term::Poly { coef, center, power } => coef * (x - center).powi(power as i32),
            Term::AbsPow {
                coef,
                center,
                exponent,
            } => coef * (x - center).abs().powf(exponent),
        }
    }

    fn eval_dd(&self, x: Dd) -> Dd {
        match *self {
            Term::Const(a) => Dd::new(a),
            Term::Poly { coef, center, power } => (x - Dd::new(center)).powi(power).mul_f64(coef),
            Term::AbsPow {
                coef,
                center,
                exponent,
            } => (x - Dd::new(center)).abs().powf(exponent).mul_f64(coef),
        }
    }

    fn center(&self) -> f64 {
        match *self {
            Term::Const(_) => 0.0,
            Term::Poly { center, .. } | Term::AbsPow { center, .. } => center,
        }
    }

    /// Derivative as a function of the offset `d = x - center`.
    fn deriv_offset(&self, d: f64) -> f64 {
        match *self {
            Term::Const(_) | Term::Poly { power: 0, .. } => 0.0,
            Term::Poly { coef, power, .. } => coef * power as f64 * d.powi(power as i32 - 1),
            Term::AbsPow { coef, exponent, .. } => {
                coef * exponent * d.abs().powf(exponent - 1.0) * d.signum()
            }
        }
    }

    fn deriv2_offset(&self, d: f64) -> f64 {
        match *self {
            Term::Const(_) | Term::Poly { power: 0 | 1, .. } => 0.0,
            Term::Poly { coef, power, .. } => {
                let k = power as f64;
                coef * k * (k - 1.0) * d.powi(power as i32 - 2)
            }
            Term::AbsPow { coef, exponent, .. } => {
                coef * exponent * (exponent - 1.0) * d.abs().powf(exponent - 2.0)
            }
        }
    }
}

impl Expr {
    pub fn constant(a: f64) -> Expr {
        Expr {
            terms: vec![Term::Const(a)],
        }
    }

    pub fn parse(src: &str) -> Result<Expr> {
        Parser::new(src).parse_expr()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    pub fn eval_dd(&self, x: Dd) -> Dd {
        self.terms.iter().fold(Dd::ZERO, |acc, t| acc + t.eval_dd(x))
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.deriv_offset(x - t.center())).sum()
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.deriv2_offset(x - t.center())).sum()
    }

    /// Derivative at a double-double point; offsets from term centers are
    /// formed before rounding so points very close to a center keep their
    /// relative precision.
    pub fn deriv_dd(&self, x: Dd) -> f64 {
        self.terms
            .iter()
            .map(|t| t.deriv_offset((x - Dd::new(t.center())).to_f64()))
            .sum()
    }

    /// Solves `self(x) = y` on `[lo, hi]`, where the expression is strictly
    /// monotone. Targets outside the image clamp to the nearer end.
    pub fn invert_dd(&self, y: Dd, lo: f64, hi: f64) -> Dd {
        if let Some(x) = self.closed_form_dd(y, lo, hi) {
            return x;
        }
        let (dlo, dhi) = (Dd::new(lo), Dd::new(hi));
        let (glo, ghi) = (self.eval_dd(dlo), self.eval_dd(dhi));
        let increasing = ghi > glo;
        let (gmin, gmax) = if increasing { (glo, ghi) } else { (ghi, glo) };
        if y <= gmin {
            return if increasing { dlo } else { dhi };
        }
        if y >= gmax {
            return if increasing { dhi } else { dlo };
        }
        // bracket [a, b] with g(a) <= y <= g(b) in the increasing sense
        let (mut a, mut b) = (dlo, dhi);
        let mut x = match self.closed_form_guess(y, lo, hi) {
            Some(g) if g > lo && g < hi => Dd::new(g),
            _ => Dd::mid(a, b),
        };
        let tiny = 1e-300;
        for _ in 0..200 {
            let r = self.eval_dd(x) - y;
            if r.hi == 0.0 {
                return x;
            }
            if (r.hi < 0.0) == increasing {
                a = x;
            } else {
                b = x;
            }
            let d = self.deriv_dd(x);
            let mut xn = if d != 0.0 && d.is_finite() {
                x - r / Dd::new(d)
            } else {
                Dd::mid(a, b)
            };
            if !(xn > a && xn < b) {
                xn = Dd::mid(a, b);
            }
            let scale = x.hi.abs().max(tiny);
            let moved = (xn - x).abs().to_f64();
            x = xn;
            if moved <= 1e-32 * scale || (b - a).to_f64() <= 1e-32 * scale {
                break;
            }
        }
        x
    }

    /// Exact inverse for `const + one term` when the root lies strictly
    /// inside `(lo, hi)`.
    fn closed_form_dd(&self, y: Dd, lo: f64, hi: f64) -> Option<Dd> {
        let mut shift = Dd::ZERO;
        let mut term = None;
        for t in &self.terms {
            match t {
                Term::Const(a) => shift += Dd::new(*a),
                other if term.is_none() => term = Some(*other),
                _ => return None,
            }
        }
        let mid = 0.5 * (lo + hi);
        let x = match term? {
            Term::Poly { coef, center, power: 1 } => Dd::new(center) + (y - shift) / Dd::new(coef),
            Term::Poly { coef, center, power: 2 } => {
                let u = (y - shift) / Dd::new(coef);
                if u.hi < 0.0 {
                    return None;
                }
                let root = u.powf(0.5);
                if mid >= center {
                    Dd::new(center) + root
                } else {
                    Dd::new(center) - root
                }
            }
            Term::AbsPow { coef, center, exponent } => {
                let u = (y - shift) / Dd::new(coef);
                if u.hi < 0.0 {
                    return None;
                }
                // 1/exponent is not exact in f64; divide in double-double
                let root = if u.hi == 0.0 { Dd::ZERO } else { (u.ln() / Dd::new(exponent)).exp() };
                if mid >= center {
                    Dd::new(center) + root
                } else {
                    Dd::new(center) - root
                }
            }
            _ => return None,
        };
        (x > Dd::new(lo) && x < Dd::new(hi)).then_some(x)
    }

    /// f64 inverse for `const + one term`, used to seed Newton.
    fn closed_form_guess(&self, y: Dd, lo: f64, hi: f64) -> Option<f64> {
        let mut shift = 0.0;
        let mut term = None;
        for t in &self.terms {
            match t {
                Term::Const(a) => shift += a,
                other if term.is_none() => term = Some(other),
                _ => return None,
            }
        }
        let mid = 0.5 * (lo + hi);
        let u = ((y - Dd::new(shift)).to_f64()) / match *term? {
            Term::Poly { coef, .. } | Term::AbsPow { coef, .. } => coef,
            Term::Const(_) => unreachable!(),
        };
        let (center, root) = match *term? {
            Term::Poly { center, power, .. } => {
                if power == 0 {
                    return None;
                }
                let side = if power % 2 == 1 { u.signum() } else { (mid - center).signum() };
                (center, side * u.abs().powf(1.0 / power as f64))
            }
            Term::AbsPow { center, exponent, .. } => {
                (center, (mid - center).signum() * u.max(0.0).powf(1.0 / exponent))
            }
            Term::Const(_) => unreachable!(),
        };
        Some(center + root)
    }

    /// Centers of `|x - c|^p` terms with non-integer or sub-quadratic exponent,
    /// i.e. places where the expression is not C^2.
    pub fn singular_centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.terms.iter().filter_map(|t| match *t {
            Term::AbsPow {
                center, exponent, ..
            } if exponent.fract() != 0.0 || exponent < 2.0 => Some(center),
            _ => None,
        })
    }
}

fn fmt_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        write!(f, "{}", v as i64)
    } else {
        write!(f, "{v}")
    }
}

fn fmt_shift(f: &mut fmt::Formatter<'_>, center: f64) -> fmt::Result {
    if center > 0.0 {
        write!(f, " - ")?;
        fmt_num(f, center)
    } else if center < 0.0 {
        write!(f, " + ")?;
        fmt_num(f, -center)
    } else {
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.terms.iter().enumerate() {
            let coef = match *t {
                Term::Const(a) => a,
                Term::Poly { coef, .. } | Term::AbsPow { coef, .. } => coef,
            };
            let mag = coef.abs();
            if i == 0 {
                if coef < 0.0 {
                    write!(f, "-")?;
                }
            } else if coef < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            match *t {
                Term::Const(_) => fmt_num(f, mag)?,
                Term::Poly { center, power, .. } => {
                    fmt_num(f, mag)?;
                    if center == 0.0 {
                        write!(f, "*x^{power}")?;
                    } else {
                        write!(f, "*(x")?;
                        fmt_shift(f, center)?;
                        write!(f, ")^{power}")?;
                    }
                }
                Term::AbsPow {
                    center, exponent, ..
                } => {
                    fmt_num(f, mag)?;
                    write!(f, "*|x")?;
                    fmt_shift(f, center)?;
                    write!(f, "|^{exponent}")?;
                }
            }
        }
        Ok(())
    }
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<char>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            chars: src.chars().filter(|c| !c.is_whitespace()).collect(),
            pos: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            input: self.src.to_string(),
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{c}' at offset {}", self.pos)))
        }
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            let exp_sign = (c == '-' || c == '+')
                && self.pos > start
                && matches!(self.chars[self.pos - 1], 'e' | 'E');
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse::<f64>()
            .map_err(|_| self.err(format!("bad number '{s}'")))
    }

    fn uint(&mut self) -> Result<u32> {
        let v = self.number()?;
        if v < 0.0 || v.fract() != 0.0 || v > 64.0 {
            return Err(self.err(format!("polynomial power must be an integer in 0..=64, got {v}")));
        }
        Ok(v as u32)
    }

    /// Parses `x [(+|-) number]` and returns the center `c` of `x - c`.
    fn shifted_x(&mut self) -> Result<f64> {
        self.expect('x')?;
        if self.eat('-') {
            Ok(self.number()?)
        } else if self.eat('+') {
            Ok(-self.number()?)
        } else {
            Ok(0.0)
        }
    }

    fn atom(&mut self, coef: f64) -> Result<Term> {
        match self.peek() {
            Some('x') => {
                self.pos += 1;
                let power = if self.eat('^') { self.uint()? } else { 1 };
                Ok(Term::Poly {
                    coef,
                    center: 0.0,
                    power,
                })
            }
            Some('(') => {
                self.pos += 1;
                let center = self.shifted_x()?;
                self.expect(')')?;
                let power = if self.eat('^') { self.uint()? } else { 1 };
                Ok(Term::Poly {
                    coef,
                    center,
                    power,
                })
            }
            Some('|') => {
                self.pos += 1;
                let center = self.shifted_x()?;
                self.expect('|')?;
                self.expect('^')?;
                let exponent = self.number()?;
                if !(exponent > 0.0) {
                    return Err(self.err("power-law exponent must be positive"));
                }
                Ok(Term::AbsPow {
                    coef,
                    center,
                    exponent,
                })
            }
            _ => Err(self.err(format!("expected a term at offset {}", self.pos))),
        }
    }

    fn term(&mut self, sign: f64) -> Result<Term> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let a = sign * self.number()?;
                if self.eat('*') {
                    self.atom(a)
                } else {
                    Ok(Term::Const(a))
                }
            }
            _ => self.atom(sign),
        }
    }

    fn parse_expr(&mut self) -> Result<Expr> {
        let mut terms = Vec::new();
        let mut sign = if self.eat('-') {
            -1.0
        } else {
            self.eat('+');
            1.0
        };
        loop {
            terms.push(self.term(sign)?);
            if self.eat('+') {
                sign = 1.0;
            } else if self.eat('-') {
                sign = -1.0;
            } else {
                break;
            }
        }
        if self.pos != self.chars.len() {
            return Err(self.err(format!("trailing input at offset {}", self.pos)));
        }
        Ok(Expr { terms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_chebyshev() {
        let e = Expr::parse("1 - 2*x^2").unwrap();
        assert_eq!(e.eval(0.5), 0.5);
        assert_eq!(e.deriv(0.25), -1.0);
        assert_eq!(e.deriv2(0.7), -4.0);
    }

    #[test]
    fn parses_power_laws_and_shifts() {
        let e = Expr::parse("-1 + 2*|x|^0.6").unwrap();
        assert!((e.eval(1.0) - 1.0).abs() < 1e-15);
        assert!((e.deriv(1.0) - 1.2).abs() < 1e-15);
        let e = Expr::parse("3*(x - 0.5)^2 + |x + 1|^1.5 - x").unwrap();
        let x = 0.2;
        let expect = 3.0 * (x - 0.5f64).powi(2) + (x + 1.0f64).powf(1.5) - x;
        assert!((e.eval(x) - expect).abs() < 1e-15);
        assert_eq!(e.singular_centers().collect::<Vec<_>>(), vec![-1.0]);
    }

    #[test]
    fn scientific_notation() {
        let e = Expr::parse("1e-3*x + 2.5E+1").unwrap();
        assert!((e.eval(2.0) - 25.002).abs() < 1e-12);
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "2*y", "x^0.5", "|x|", "1 +", "|x|^-1", "x x"] {
            assert!(Expr::parse(bad).is_err(), "{bad:?} should fail");
        }
    }

    #[test]
    fn display_round_trips() {
        for src in ["1 - 2*x^2", "-1 + 2*|x|^0.6", "3*(x - 0.5)^2 - 0.25*|x + 1|^1.5 + 7"] {
            let e = Expr::parse(src).unwrap();
            let again = Expr::parse(&e.to_string()).unwrap();
            assert_eq!(e, again, "{src} -> {e}");
        }
    }

    #[test]
    fn inversion() {
        let cheb = Expr::parse("1 - 2*x^2").unwrap();
        for &y in &[0.3, -0.999, 1.0 - 1e-20] {
            let x = cheb.invert_dd(Dd::new(y), 0.0, 1.0);
            assert!((cheb.eval_dd(x) - Dd::new(y)).abs().to_f64() < 1e-31, "y = {y}");
            assert!(x.hi >= 0.0);
        }
        let left = cheb.invert_dd(Dd::new(0.5), -1.0, 0.0);
        assert!((left.to_f64() + 0.5).abs() < 1e-16);
        let lor = Expr::parse("1 - 2*|x|^0.6").unwrap();
        let x = lor.invert_dd(Dd::new(0.2), -1.0, 0.0);
        assert!((lor.eval_dd(x) - Dd::new(0.2)).abs().to_f64() < 1e-31);
        // two-term expression falls back to safeguarded Newton
        let comb = Expr::parse("-1 + 4*|x|^0.6 - 1.2*x").unwrap();
        let x = comb.invert_dd(Dd::new(0.1), 0.0, 0.5);
        assert!((comb.eval_dd(x) - Dd::new(0.1)).abs().to_f64() < 1e-30);
        // clamping
        assert_eq!(cheb.invert_dd(Dd::new(2.0), 0.0, 1.0), Dd::ZERO);
    }

    #[test]
    fn dd_matches_f64() {
        let e = Expr::parse("-1 + 2*|x|^0.6 - 0.3*(x-0.2)^3").unwrap();
        for &x in &[0.01, 0.3, 0.9] {
            assert!((e.eval_dd(Dd::new(x)).to_f64() - e.eval(x)).abs() < 1e-14);
        }
    }
}
