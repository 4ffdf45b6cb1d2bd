//! Arithmetic expressions: grammar, exact evaluation and canonical answer
//! formatting.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | '(' expr ')'
//! number  := digit+ ('.' digit+)? '%'?
//! ```
//!
//! `×` and `÷` are accepted as aliases of `*` and `/`. All arithmetic is on
//! arbitrary-precision rationals.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub const MAX_DEPTH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Num(BigRational),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn int(v: i64) -> Self {
        Expr::Num(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn bin(op: BinOp, l: Expr, r: Expr) -> Self {
        Expr::Bin(op, Box::new(l), Box::new(r))
    }

    pub fn neg(e: Expr) -> Self {
        Expr::Neg(Box::new(e))
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Num(_) => 1,
            Expr::Neg(e) => 1 + e.depth(),
            Expr::Bin(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Literal operands in left-to-right order.
    pub fn literals(&self) -> Vec<&BigRational> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a BigRational>) {
            match e {
                Expr::Num(v) => out.push(v),
                Expr::Neg(x) => walk(x, out),
                Expr::Bin(_, l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.precedence(),
            Expr::Neg(_) => 3,
            Expr::Num(v) if !is_terminating_decimal(v) => 2,
            Expr::Num(v) if v.is_negative() => 3,
            Expr::Num(_) => 4,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum CalcError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("division by zero")]
    DivisionByZero,
}

/// How a trailing `%` on a number is interpreted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PercentMode {
    /// `42%` is the number 42.
    #[default]
    Strip,
    /// `42%` is 42/100.
    Fraction,
}

pub fn parse(text: &str) -> Result<Expr, CalcError> {
    parse_with(text, PercentMode::Strip)
}

pub fn parse_with(text: &str, percent: PercentMode) -> Result<Expr, CalcError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        nesting: 0,
        percent,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    if e.depth() > MAX_DEPTH {
        return Err(CalcError::Parse {
            offset: 0,
            message: format!("expression deeper than {MAX_DEPTH}"),
        });
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    nesting: usize,
    percent: PercentMode,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> CalcError {
        CalcError::Parse {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek_op(&mut self) -> Option<(BinOp, usize)> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        match rest.first()? {
            b'+' => Some((BinOp::Add, 1)),
            b'-' => Some((BinOp::Sub, 1)),
            b'*' => Some((BinOp::Mul, 1)),
            b'/' => Some((BinOp::Div, 1)),
            _ if rest.starts_with("×".as_bytes()) => Some((BinOp::Mul, 2)),
            _ if rest.starts_with("÷".as_bytes()) => Some((BinOp::Div, 2)),
            _ => None,
        }
    }

    fn enter(&mut self) -> Result<(), CalcError> {
        self.nesting += 1;
        if self.nesting > MAX_DEPTH {
            return Err(self.error("nesting too deep"));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, CalcError> {
        self.enter()?;
        let mut lhs = self.term()?;
        while let Some((op, len)) = self.peek_op() {
            if op.precedence() != 1 {
                break;
            }
            self.pos += len;
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        self.nesting -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, CalcError> {
        let mut lhs = self.unary()?;
        while let Some((op, len)) = self.peek_op() {
            if op.precedence() != 2 {
                break;
            }
            self.pos += len;
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, CalcError> {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&b'-') {
            self.pos += 1;
            self.enter()?;
            let inner = self.unary()?;
            self.nesting -= 1;
            return Ok(Expr::neg(inner));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, CalcError> {
        self.skip_ws();
        match self.src.get(self.pos) {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.skip_ws();
                if self.src.get(self.pos) != Some(&b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(_) => Err(self.error("expected a number or '('")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, CalcError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let int_part = &self.src[start..self.pos];
        let mut frac_part: &[u8] = &[];
        if self.src.get(self.pos) == Some(&b'.') {
            let dot = self.pos;
            self.pos += 1;
            let fs = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if fs == self.pos {
                self.pos = dot;
                return Err(self.error("expected digits after '.'"));
            }
            frac_part = &self.src[fs..self.pos];
        }
        let mut digits = String::with_capacity(int_part.len() + frac_part.len());
        digits.push_str(std::str::from_utf8(int_part).expect("ascii digits"));
        digits.push_str(std::str::from_utf8(frac_part).expect("ascii digits"));
        let numer: BigInt = digits.parse().expect("ascii digits");
        let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
        let mut value = BigRational::new(numer, denom);
        let save = self.pos;
        self.skip_ws();
        if self.src.get(self.pos) == Some(&b'%') {
            self.pos += 1;
            if self.percent == PercentMode::Fraction {
                value /= BigRational::from_integer(BigInt::from(100));
            }
        } else {
            self.pos = save;
        }
        Ok(Expr::Num(value))
    }
}

/// Exact value of an expression.
pub fn eval_exact(e: &Expr) -> Result<BigRational, CalcError> {
    match e {
        Expr::Num(v) => Ok(v.clone()),
        Expr::Neg(x) => Ok(-eval_exact(x)?),
        Expr::Bin(op, l, r) => {
            let a = eval_exact(l)?;
            let b = eval_exact(r)?;
            match op {
                BinOp::Add => Ok(a + b),
                BinOp::Sub => Ok(a - b),
                BinOp::Mul => Ok(a * b),
                BinOp::Div => {
                    if b.is_zero() {
                        Err(CalcError::DivisionByZero)
                    } else {
                        Ok(a / b)
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NumericAnswer {
    pub value: BigRational,
    pub text: String,
}

impl fmt::Display for NumericAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

pub fn evaluate(e: &Expr) -> Result<NumericAnswer, CalcError> {
    let value = eval_exact(e)?;
    let text = format_value(&value);
    Ok(NumericAnswer { value, text })
}

/// Parse and evaluate in one go, returning the formatted answer.
pub fn calculate(text: &str) -> Result<String, CalcError> {
    Ok(evaluate(&parse(text)?)?.text)
}

/// Integers print as-is; other values are rounded half away from zero to two
/// decimals with trailing zeros (and a trailing dot) removed.
pub fn format_value(v: &BigRational) -> String {
    if v.is_integer() {
        return v.to_integer().to_string();
    }
    let hundred = BigInt::from(100);
    let scaled = v.abs() * BigRational::from_integer(hundred.clone());
    // floor(x + 1/2) on the magnitude
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let rounded = (scaled + half).floor().to_integer();
    if rounded.is_zero() {
        return "0".to_string();
    }
    let int_part = &rounded / &hundred;
    let frac = (&rounded % &hundred).to_u32().expect("remainder below 100");
    let mut s = if v.is_negative() {
        format!("-{int_part}")
    } else {
        int_part.to_string()
    };
    if frac != 0 {
        let f = format!("{frac:02}");
        s.push('.');
        s.push_str(f.trim_end_matches('0'));
    }
    s
}

fn is_terminating_decimal(v: &BigRational) -> bool {
    let mut d = v.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    while (&d % &two).is_zero() {
        d /= &two;
    }
    while (&d % &five).is_zero() {
        d /= &five;
    }
    d.is_one()
}

/// Exact decimal text for a literal whose denominator divides a power of ten.
fn format_literal(v: &BigRational) -> String {
    if v.is_integer() {
        return v.to_integer().to_string();
    }
    if !is_terminating_decimal(v) {
        return format!("{} / {}", v.numer(), v.denom());
    }
    let mut places = 0u32;
    let ten = BigInt::from(10);
    let mut scaled = v.clone();
    while !scaled.is_integer() {
        scaled *= BigRational::from_integer(ten.clone());
        places += 1;
    }
    let n = scaled.to_integer();
    let neg = n.is_negative();
    let digits = n.abs().to_string();
    let places = places as usize;
    let padded = if digits.len() <= places {
        format!("{}{}", "0".repeat(places + 1 - digits.len()), digits)
    } else {
        digits
    };
    let split = padded.len() - places;
    format!(
        "{}{}.{}",
        if neg { "-" } else { "" },
        &padded[..split],
        &padded[split..]
    )
}

/// Canonical surface form: single spaces around binary operators, no spaces
/// inside parentheses, and only the parentheses needed to keep the value.
pub fn format_canonical(e: &Expr) -> String {
    match e {
        Expr::Num(v) => format_literal(v),
        Expr::Neg(x) => {
            if x.precedence() < 3 {
                format!("-({})", format_canonical(x))
            } else {
                format!("-{}", format_canonical(x))
            }
        }
        Expr::Bin(op, l, r) => {
            let p = op.precedence();
            let left = if l.precedence() < p {
                format!("({})", format_canonical(l))
            } else {
                format_canonical(l)
            };
            let rp = r.precedence();
            let wrap_right = rp < p || (rp == p && matches!(op, BinOp::Sub | BinOp::Div));
            let right = if wrap_right {
                format!("({})", format_canonical(r))
            } else {
                format_canonical(r)
            };
            format!("{left} {} {right}", op.symbol())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(a: i64, b: i64) -> Expr {
        Expr::bin(BinOp::Sub, Expr::int(a), Expr::int(b))
    }

    #[test]
    fn parses_subtraction_example() {
        assert_eq!(parse("30 - 28").unwrap(), sub(30, 28));
        assert_eq!(calculate("30 - 28").unwrap(), "2");
    }

    #[test]
    fn precedence_and_parentheses() {
        let e = parse("2 + 3 * 4").unwrap();
        assert_eq!(
            e,
            Expr::bin(
                BinOp::Add,
                Expr::int(2),
                Expr::bin(BinOp::Mul, Expr::int(3), Expr::int(4))
            )
        );
        assert_eq!(evaluate(&e).unwrap().text, "14");
        assert_eq!(calculate("(2 + 3) * 4").unwrap(), "20");
        assert_eq!(calculate("10 - 4 - 3").unwrap(), "3");
        assert_eq!(calculate("2 × 3 ÷ 4").unwrap(), "1.5");
    }

    #[test]
    fn rounding_and_division_by_zero() {
        assert_eq!(calculate("1 / 3").unwrap(), "0.33");
        assert_eq!(calculate("2 / 3").unwrap(), "0.67");
        assert_eq!(calculate("1 / 8").unwrap(), "0.13");
        assert_eq!(calculate("-1 / 8").unwrap(), "-0.13");
        assert_eq!(calculate("1 / 2").unwrap(), "0.5");
        assert_eq!(calculate("1 / 1000").unwrap(), "0");
        assert_eq!(calculate("5 / 0"), Err(CalcError::DivisionByZero));
        assert_eq!(
            evaluate(&Expr::bin(BinOp::Div, Expr::int(5), Expr::int(0))),
            Err(CalcError::DivisionByZero)
        );
    }

    #[test]
    fn percent_modes() {
        assert_eq!(calculate("12% - 11%").unwrap(), "1");
        let e = parse_with("50 %", PercentMode::Fraction).unwrap();
        assert_eq!(evaluate(&e).unwrap().text, "0.5");
    }

    #[test]
    fn decimals_parse_exactly() {
        assert_eq!(calculate("0.1 + 0.2").unwrap(), "0.3");
        assert_eq!(format_canonical(&parse("0.05 * 2").unwrap()), "0.05 * 2");
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match parse("30 - ") {
            Err(CalcError::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("(1 + 2"), Err(CalcError::Parse { offset: 6, .. })));
        assert!(matches!(parse("1 + x"), Err(CalcError::Parse { offset: 4, .. })));
        assert!(parse("").is_err());
        assert!(parse("1.").is_err());
        assert!(parse(&"(".repeat(100)).is_err());
        assert!(parse(&"-".repeat(100)).is_err());
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(format_canonical(&sub(30, 28)), "30 - 28");
        assert_eq!(format_canonical(&parse("2+3*4").unwrap()), "2 + 3 * 4");
        assert_eq!(format_canonical(&parse("( 2 + 3 ) * 4").unwrap()), "(2 + 3) * 4");
        assert_eq!(format_canonical(&parse("1 - (2 - 3)").unwrap()), "1 - (2 - 3)");
        assert_eq!(format_canonical(&parse("1 - (2 + 3)").unwrap()), "1 - (2 + 3)");
        assert_eq!(format_canonical(&parse("1 + (2 - 3)").unwrap()), "1 + 2 - 3");
        assert_eq!(format_canonical(&parse("8 / (4 / 2)").unwrap()), "8 / (4 / 2)");
        assert_eq!(format_canonical(&parse("-(2 + 3)").unwrap()), "-(2 + 3)");
        assert_eq!(format_canonical(&Expr::int(-5)), "-5");
        assert_eq!(
            format_canonical(&Expr::bin(BinOp::Sub, Expr::int(1), Expr::int(-5))),
            "1 - -5"
        );
    }
}
