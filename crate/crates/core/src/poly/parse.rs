//! Infix polynomial parser over variables `u1..uN`.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '·' | '/') unary)*
//! unary  := ('+' | '-') unary | power
//! power  := atom ('^' integer)?
//! atom   := decimal | 'u' index | '(' expr ')'
//! ```
//!
//! Division is accepted only by a nonzero constant, so the result is always a
//! polynomial. Decimal literals (with optional exponent) are read exactly.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use thiserror::Error;

use super::Polynomial;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unexpected character {found:?} at offset {offset}")]
    UnexpectedChar { offset: usize, found: char },
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("variable u{index} at offset {offset} is outside u1..u{nvars}")]
    UnknownVariable {
        offset: usize,
        index: usize,
        nvars: usize,
    },
    #[error("exponent at offset {offset} must be a non-negative integer")]
    BadExponent { offset: usize },
    #[error("division by a non-constant or zero expression at offset {offset}")]
    NonPolynomialDivision { offset: usize },
    #[error("malformed number at offset {offset}")]
    BadNumber { offset: usize },
}

pub fn parse_polynomial(src: &str, nvars: usize) -> Result<Polynomial, ParseError> {
    let mut p = Parser {
        chars: src.char_indices().collect(),
        pos: 0,
        nvars,
    };
    let poly = p.expr()?;
    p.skip_ws();
    if let Some(&(offset, found)) = p.chars.get(p.pos) {
        return Err(ParseError::UnexpectedChar { offset, found });
    }
    Ok(poly)
}

struct Parser {
    chars: Vec<(usize, char)>,
    pos: usize,
    nvars: usize,
}

impl Parser {
    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|(_, c)| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn offset(&self) -> usize {
        self.chars
            .get(self.pos)
            .map_or_else(|| self.chars.last().map_or(0, |(o, _)| o + 1), |&(o, _)| o)
    }

    fn expr(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.term()?;
        while let Some(c) = self.peek() {
            match c {
                '+' | '-' | '−' => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = if c == '+' { &acc + &rhs } else { &acc - &rhs };
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.unary()?;
        while let Some(c) = self.peek() {
            match c {
                '*' | '·' => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = &acc * &rhs;
                }
                '/' => {
                    let offset = self.offset();
                    self.pos += 1;
                    let rhs = self.unary()?;
                    match rhs.as_constant() {
                        Some(c) if !c.is_zero() => acc = acc.scale(&c.recip()),
                        _ => return Err(ParseError::NonPolynomialDivision { offset }),
                    }
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Polynomial, ParseError> {
        match self.peek() {
            Some('-') | Some('−') => {
                self.pos += 1;
                Ok(-&self.unary()?)
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Polynomial, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            self.skip_ws();
            let offset = self.offset();
            let digits = self.take_while(|c| c.is_ascii_digit());
            if digits.is_empty() {
                return Err(ParseError::BadExponent { offset });
            }
            // a fractional exponent would leave trailing '.digits'
            if self.peek() == Some('.') {
                return Err(ParseError::BadExponent { offset });
            }
            let exp: u32 = digits.parse().map_err(|_| ParseError::BadExponent { offset })?;
            return Ok(base.pow(exp));
        }
        Ok(base)
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> String {
        let mut s = String::new();
        while let Some(&(_, c)) = self.chars.get(self.pos) {
            if !pred(c) {
                break;
            }
            s.push(c);
            self.pos += 1;
        }
        s
    }

    fn atom(&mut self) -> Result<Polynomial, ParseError> {
        let c = self.peek().ok_or(ParseError::UnexpectedEnd)?;
        let offset = self.offset();
        if c == '(' {
            self.pos += 1;
            let inner = self.expr()?;
            return match self.peek() {
                Some(')') => {
                    self.pos += 1;
                    Ok(inner)
                }
                Some(found) => Err(ParseError::UnexpectedChar {
                    offset: self.offset(),
                    found,
                }),
                None => Err(ParseError::UnexpectedEnd),
            };
        }
        if c == 'u' {
            self.pos += 1;
            let digits = self.take_while(|c| c.is_ascii_digit());
            let index: usize = digits
                .parse()
                .map_err(|_| ParseError::UnexpectedChar { offset, found: 'u' })?;
            if index == 0 || index > self.nvars {
                return Err(ParseError::UnknownVariable {
                    offset,
                    index,
                    nvars: self.nvars,
                });
            }
            return Ok(Polynomial::var(self.nvars, index - 1));
        }
        if c.is_ascii_digit() || c == '.' {
            let value = self.number(offset)?;
            return Ok(Polynomial::constant(self.nvars, value));
        }
        Err(ParseError::UnexpectedChar { offset, found: c })
    }

    fn number(&mut self, offset: usize) -> Result<BigRational, ParseError> {
        let int_part = self.take_while(|c| c.is_ascii_digit());
        let mut frac_part = String::new();
        if self.chars.get(self.pos).map(|&(_, c)| c) == Some('.') {
            self.pos += 1;
            frac_part = self.take_while(|c| c.is_ascii_digit());
        }
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(ParseError::BadNumber { offset });
        }
        let mut exp10: i64 = -(frac_part.len() as i64);
        if matches!(self.chars.get(self.pos).map(|&(_, c)| c), Some('e') | Some('E')) {
            self.pos += 1;
            let mut sign = 1i64;
            match self.chars.get(self.pos).map(|&(_, c)| c) {
                Some('-') => {
                    sign = -1;
                    self.pos += 1;
                }
                Some('+') => self.pos += 1,
                _ => {}
            }
            let digits = self.take_while(|c| c.is_ascii_digit());
            let e: i64 = digits.parse().map_err(|_| ParseError::BadNumber { offset })?;
            exp10 += sign * e;
        }
        let mantissa: BigInt = format!("{int_part}{frac_part}")
            .trim_start_matches('0')
            .parse()
            .unwrap_or_else(|_| BigInt::zero());
        let ten = BigInt::from(10);
        let scale = num_traits::pow(ten, exp10.unsigned_abs() as usize);
        Ok(if exp10 >= 0 {
            BigRational::from_integer(mantissa * scale)
        } else {
            BigRational::new(mantissa, scale)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn parses_cubic_with_decimal() {
        let p = parse_polynomial("u1 + 0.1*u1^3", 3).unwrap();
        assert_eq!(p.coefficient(&[3, 0, 0]), q(1, 10));
        assert_eq!(p.coefficient(&[1, 0, 0]), q(1, 1));
        let same = parse_polynomial("u1 + u1^3/10", 3).unwrap();
        assert_eq!(p, same);
    }

    #[test]
    fn precedence_and_parentheses() {
        let p = parse_polynomial("-(u1 - 2)^2 · u2 + 3e-1", 2).unwrap();
        // -(u1^2 - 4u1 + 4) u2 + 3/10
        assert_eq!(p.coefficient(&[2, 1]), q(-1, 1));
        assert_eq!(p.coefficient(&[1, 1]), q(4, 1));
        assert_eq!(p.coefficient(&[0, 1]), q(-4, 1));
        assert_eq!(p.coefficient(&[0, 0]), q(3, 10));
    }

    #[test]
    fn rejects_non_polynomial_input() {
        assert!(matches!(
            parse_polynomial("1/u1", 1),
            Err(ParseError::NonPolynomialDivision { .. })
        ));
        assert!(matches!(
            parse_polynomial("u1^0.5", 1),
            Err(ParseError::BadExponent { .. })
        ));
        assert!(matches!(
            parse_polynomial("u1^-1", 1),
            Err(ParseError::BadExponent { .. })
        ));
        assert!(matches!(
            parse_polynomial("sin(u1)", 1),
            Err(ParseError::UnexpectedChar { .. })
        ));
        assert!(matches!(
            parse_polynomial("u4", 3),
            Err(ParseError::UnknownVariable { index: 4, .. })
        ));
        assert!(parse_polynomial("u1 +", 1).is_err());
        assert!(parse_polynomial("(u1", 1).is_err());
    }

    #[test]
    fn zero_and_constants() {
        assert!(parse_polynomial("0", 2).unwrap().is_zero());
        assert!(parse_polynomial("u1 - u1", 2).unwrap().is_zero());
        assert_eq!(parse_polynomial(".5", 1).unwrap().as_constant(), Some(q(1, 2)));
    }
}
