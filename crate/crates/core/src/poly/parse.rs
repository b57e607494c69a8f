//! Text form of polynomials: `3*x1^2*x2 - 0.5`.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary ('*' unary)*
//! unary   := ('+' | '-') unary | power
//! power   := primary ('^' integer)?
//! primary := number | 'x' index | '(' expr ')'
//! ```
//!
//! Variables are one-based (`x1` .. `xn`). Rendering writes terms from the
//! highest graded-lex monomial down and prints coefficients in shortest
//! round-trip form, so `parse(render(f)) == f` exactly.

use std::fmt;

use super::{Monomial, Polynomial};
use crate::error::{Error, Result};

/// Parse failure with a one-based position inside the input string.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct PolyParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Var(usize),
    Int(u32),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    chars: Vec<(usize, char)>,
    src: &'a str,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            chars: src.char_indices().collect(),
            src,
        }
    }

    fn position(&self, char_idx: usize) -> (usize, usize) {
        let byte = self
            .chars
            .get(char_idx)
            .map_or(self.src.len(), |&(b, _)| b);
        let before = &self.src[..byte];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
        (line, column)
    }

    fn error(&self, char_idx: usize, message: impl Into<String>) -> PolyParseError {
        let (line, column) = self.position(char_idx);
        PolyParseError {
            line,
            column,
            message: message.into(),
        }
    }

    fn tokens(&self) -> std::result::Result<Vec<(usize, Tok)>, PolyParseError> {
        let mut out = Vec::new();
        let mut i = 0;
        let n = self.chars.len();
        while i < n {
            let c = self.chars[i].1;
            let start = i;
            match c {
                ' ' | '\t' | '\n' | '\r' => {
                    i += 1;
                    continue;
                }
                '+' => out.push((start, Tok::Plus)),
                '-' => out.push((start, Tok::Minus)),
                '*' => out.push((start, Tok::Star)),
                '^' => out.push((start, Tok::Caret)),
                '(' => out.push((start, Tok::LParen)),
                ')' => out.push((start, Tok::RParen)),
                'x' => {
                    let mut j = i + 1;
                    while j < n && self.chars[j].1.is_ascii_digit() {
                        j += 1;
                    }
                    let digits: String = self.chars[i + 1..j].iter().map(|&(_, c)| c).collect();
                    let idx: usize = digits
                        .parse()
                        .map_err(|_| self.error(start, "expected variable index after 'x'"))?;
                    if idx == 0 {
                        return Err(self.error(start, "variables are numbered from x1"));
                    }
                    out.push((start, Tok::Var(idx - 1)));
                    i = j;
                    continue;
                }
                c if c.is_ascii_digit() || c == '.' => {
                    let mut j = i;
                    let mut is_int = true;
                    while j < n && (self.chars[j].1.is_ascii_digit() || self.chars[j].1 == '.') {
                        if self.chars[j].1 == '.' {
                            is_int = false;
                        }
                        j += 1;
                    }
                    if j < n && matches!(self.chars[j].1, 'e' | 'E') {
                        let mut k = j + 1;
                        if k < n && matches!(self.chars[k].1, '+' | '-') {
                            k += 1;
                        }
                        if k < n && self.chars[k].1.is_ascii_digit() {
                            while k < n && self.chars[k].1.is_ascii_digit() {
                                k += 1;
                            }
                            is_int = false;
                            j = k;
                        }
                    }
                    let text: String = self.chars[i..j].iter().map(|&(_, c)| c).collect();
                    let value: f64 = text
                        .parse()
                        .map_err(|_| self.error(start, format!("malformed number '{text}'")))?;
                    if is_int && value <= u32::MAX as f64 {
                        out.push((start, Tok::Int(value as u32)));
                    } else {
                        out.push((start, Tok::Num(value)));
                    }
                    i = j;
                    continue;
                }
                other => return Err(self.error(start, format!("unexpected character '{other}'"))),
            }
            i += 1;
        }
        Ok(out)
    }
}

struct Parser<'a> {
    lexer: &'a Lexer<'a>,
    toks: Vec<(usize, Tok)>,
    pos: usize,
    n_vars: usize,
}

type PResult<T> = std::result::Result<T, PolyParseError>;

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks
            .get(self.pos)
            .map_or(self.lexer.chars.len(), |&(i, _)| i)
    }

    fn err<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(self.lexer.error(self.here(), message))
    }

    fn wrap(&self, at: usize, r: Result<Polynomial>) -> PResult<Polynomial> {
        r.map_err(|e| self.lexer.error(at, e.to_string()))
    }

    fn expr(&mut self) -> PResult<Polynomial> {
        let mut acc = self.term()?;
        loop {
            let at = self.here();
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = self.wrap(at, acc.try_add(&rhs))?;
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = self.wrap(at, acc.try_sub(&rhs))?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> PResult<Polynomial> {
        let mut acc = self.unary()?;
        while let Some(Tok::Star) = self.peek() {
            let at = self.here();
            self.pos += 1;
            let rhs = self.unary()?;
            acc = self.wrap(at, acc.try_mul(&rhs))?;
        }
        Ok(acc)
    }

    fn unary(&mut self) -> PResult<Polynomial> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(self.unary()?.scale(-1.0))
            }
            Some(Tok::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> PResult<Polynomial> {
        let base = self.primary()?;
        if let Some(Tok::Caret) = self.peek() {
            let at = self.here();
            self.pos += 1;
            match self.peek().cloned() {
                Some(Tok::Int(k)) => {
                    self.pos += 1;
                    return self.wrap(at, base.pow(k));
                }
                _ => return self.err("expected a nonnegative integer exponent"),
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> PResult<Polynomial> {
        let n = self.n_vars;
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Polynomial::constant(n, v))
            }
            Some(Tok::Int(v)) => {
                self.pos += 1;
                Ok(Polynomial::constant(n, v as f64))
            }
            Some(Tok::Var(i)) => {
                if i >= n {
                    return self.err(format!("variable x{} exceeds dimension {n}", i + 1));
                }
                self.pos += 1;
                Ok(Polynomial::var(n, i))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => self.err("expected ')'"),
                }
            }
            Some(_) => self.err("expected a number, variable or '('"),
            None => self.err("unexpected end of input"),
        }
    }
}

impl Polynomial {
    /// Parses the text form in `n_vars` variables.
    pub fn parse(src: &str, n_vars: usize) -> Result<Polynomial> {
        Self::parse_detailed(src, n_vars).map_err(Error::Parse)
    }

    /// Like [`Polynomial::parse`] but returns the positioned error directly.
    pub fn parse_detailed(src: &str, n_vars: usize) -> std::result::Result<Polynomial, PolyParseError> {
        let lexer = Lexer::new(src);
        let toks = lexer.tokens()?;
        if toks.is_empty() {
            return Err(lexer.error(0, "empty polynomial"));
        }
        let mut parser = Parser {
            lexer: &lexer,
            toks,
            pos: 0,
            n_vars,
        };
        let poly = parser.expr()?;
        if parser.pos != parser.toks.len() {
            return parser.err("unexpected trailing input");
        }
        Ok(poly)
    }
}

/// Shortest round-trip decimal; exponent form outside a readable range.
pub(crate) fn fmt_coeff(c: f64) -> String {
    let a = c.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{c}")
    } else {
        format!("{c:e}")
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        for (k, (m, c)) in self.terms().rev().enumerate() {
            let sign = c.is_sign_negative();
            match (k, sign) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            let a = c.abs();
            if m.is_one() {
                f.write_str(&fmt_coeff(a))?;
            } else if a == 1.0 {
                write!(f, "{m}")?;
            } else {
                write!(f, "{}*{m}", fmt_coeff(a))?;
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for Monomial {
    type Err = PolyParseError;

    /// Parses a product of powers such as `x1^2*x3`; `1` is the unit monomial.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s == "1" {
            return Ok(Monomial::one());
        }
        let mut pairs = Vec::new();
        for (k, factor) in s.split('*').enumerate() {
            let bad = || PolyParseError {
                line: 1,
                column: k + 1,
                message: format!("malformed monomial factor '{factor}'"),
            };
            let factor = factor.trim();
            let rest = factor.strip_prefix('x').ok_or_else(bad)?;
            let (idx, exp) = match rest.split_once('^') {
                Some((i, e)) => (i, e.parse::<u32>().map_err(|_| bad())?),
                None => (rest, 1),
            };
            let idx: usize = idx.parse().map_err(|_| bad())?;
            if idx == 0 {
                return Err(bad());
            }
            pairs.push((idx - 1, exp));
        }
        Ok(Monomial::from_pairs(pairs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_canonically() {
        let f = Polynomial::parse("-0.5 + 3*x2*x1^2", 2).unwrap();
        assert_eq!(f.to_string(), "3*x1^2*x2 - 0.5");
        assert_eq!(Polynomial::parse("-x1^2 + x2", 2).unwrap().to_string(), "-x1^2 + x2");
        assert_eq!(Polynomial::zero(3).to_string(), "0");
        let tiny = Polynomial::parse("1e-12*x1", 1).unwrap();
        assert_eq!(tiny.to_string(), "1e-12*x1");
    }

    #[test]
    fn parses_grouping_and_powers() {
        let f = Polynomial::parse("100*(x1 - 0.1)^2 + 100*x2^2", 2).unwrap();
        assert!((f.eval(&[0.1, 0.0]).unwrap()).abs() < 1e-12);
        assert!((f.eval(&[0.0, 0.1]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(
            Polynomial::parse("-x1^2", 1).unwrap(),
            Polynomial::parse("-(x1^2)", 1).unwrap()
        );
    }

    #[test]
    fn errors_carry_positions() {
        let e = Polynomial::parse_detailed("3*x1 + * 2", 1).unwrap_err();
        assert_eq!((e.line, e.column), (1, 8));
        let e = Polynomial::parse_detailed("x3", 2).unwrap_err();
        assert_eq!(e.column, 1);
        let e = Polynomial::parse_detailed("x1 ^ 0.5", 1).unwrap_err();
        assert_eq!(e.column, 6);
        assert!(Polynomial::parse_detailed("(x1 + 1", 1).is_err());
        assert!(Polynomial::parse_detailed("", 1).is_err());
        assert!(Polynomial::parse_detailed("x1 $ 2", 1).is_err());
        assert!(Polynomial::parse_detailed("x0", 1).is_err());
    }

    #[test]
    fn monomial_from_str() {
        let m: Monomial = "x1^2*x3".parse().unwrap();
        assert_eq!(m, Monomial::from_exponents(&[2, 0, 1]));
        assert_eq!("1".parse::<Monomial>().unwrap(), Monomial::one());
        assert_eq!(m.to_string().parse::<Monomial>().unwrap(), m);
        assert!("y2".parse::<Monomial>().is_err());
    }

    fn arb_poly(n: usize) -> impl Strategy<Value = Polynomial> {
        let term = (
            proptest::collection::vec(0u32..4, n),
            prop_oneof![-1e6..1e6f64, -1e-9..1e-9f64, (-20i32..20).prop_map(f64::from)],
        );
        proptest::collection::vec(term, 0..8).prop_map(move |ts| {
            Polynomial::from_terms(n, ts.into_iter().map(|(e, c)| (Monomial::from_exponents(&e), c)))
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(f in arb_poly(3)) {
            let text = f.to_string();
            let back = Polynomial::parse(&text, 3).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
