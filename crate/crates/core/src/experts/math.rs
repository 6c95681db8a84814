//! Exact arithmetic for the math expert.
//!
//! Grammar (whitespace is insignificant between tokens):
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := ("-" | "+") unary | primary
//! primary := number | "(" expr ")"
//! number  := digit+ ("." digit*)? | "." digit+
//! ```
//!
//! `×`, `÷` and `−` (U+2212) are accepted as aliases. Values are exact
//! rationals; the decimal rendering is the only place rounding happens.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

/// Significant digits in rendered results.
pub const SIGNIFICANT_DIGITS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MathError {
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("division by zero")]
    DivisionByZero,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(BigRational),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn tokenize(input: &str) -> Result<Vec<(usize, Token)>, MathError> {
    let mut tokens = Vec::new();
    let mut chars = input.char_indices().peekable();
    while let Some(&(offset, c)) = chars.peek() {
        let token = match c {
            c if c.is_whitespace() => {
                chars.next();
                continue;
            }
            '+' => Token::Plus,
            '-' | '\u{2212}' => Token::Minus,
            '*' | '\u{00d7}' => Token::Star,
            '/' | '\u{00f7}' => Token::Slash,
            '(' => Token::LParen,
            ')' => Token::RParen,
            '0'..='9' | '.' => {
                let mut int_digits = String::new();
                let mut frac_digits = String::new();
                let mut seen_dot = false;
                while let Some(&(_, d)) = chars.peek() {
                    match d {
                        '0'..='9' if seen_dot => frac_digits.push(d),
                        '0'..='9' => int_digits.push(d),
                        '.' if !seen_dot => seen_dot = true,
                        _ => break,
                    }
                    chars.next();
                }
                if int_digits.is_empty() && frac_digits.is_empty() {
                    return Err(MathError::Parse {
                        offset,
                        message: "expected digits".into(),
                    });
                }
                tokens.push((offset, Token::Number(decimal_to_rational(&int_digits, &frac_digits))));
                continue;
            }
            other => {
                return Err(MathError::Parse {
                    offset,
                    message: format!("unexpected character {other:?}"),
                })
            }
        };
        chars.next();
        tokens.push((offset, token));
    }
    Ok(tokens)
}

fn decimal_to_rational(int_digits: &str, frac_digits: &str) -> BigRational {
    let digits = format!("{int_digits}{frac_digits}");
    let numer: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().expect("ascii digits")
    };
    let denom = num_traits::pow(BigInt::from(10), frac_digits.len());
    BigRational::new(numer, denom)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn error(&self, message: impl Into<String>) -> MathError {
        MathError::Parse {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn expr(&mut self) -> Result<BigRational, MathError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    acc += self.term()?;
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    acc -= self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<BigRational, MathError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    acc *= self.unary()?;
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    if rhs.is_zero() {
                        return Err(MathError::DivisionByZero);
                    }
                    acc /= rhs;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<BigRational, MathError> {
        match self.peek() {
            Some(Token::Minus) => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some(Token::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<BigRational, MathError> {
        match self.peek().cloned() {
            Some(Token::Number(n)) => {
                self.pos += 1;
                Ok(n)
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(self.error("expected ')'")),
                }
            }
            Some(_) => Err(self.error("expected a number or '('")),
            None => Err(self.error("unexpected end of expression")),
        }
    }
}

/// Evaluate an arithmetic expression exactly.
pub fn evaluate(expression: &str) -> Result<BigRational, MathError> {
    let tokens = tokenize(expression)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: expression.len(),
    };
    let value = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(value)
}

/// Evaluate and render with up to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn eval_math(expression: &str) -> Result<String, MathError> {
    evaluate(expression).map(|v| format_decimal(&v, SIGNIFICANT_DIGITS))
}

/// Render a rational as a plain decimal string: no exponent, no thousands
/// separators, trailing zeros trimmed. Fractional digits are limited so the
/// result carries at most `significant` significant digits, rounding half
/// away from zero; the integer part is never rounded.
pub fn format_decimal(value: &BigRational, significant: usize) -> String {
    if value.is_zero() {
        return "0".to_string();
    }
    let negative = value.is_negative();
    let magnitude = value.abs();
    let ten = BigInt::from(10);

    let int_part = magnitude.to_integer();
    let frac_digits = if !int_part.is_zero() {
        significant.saturating_sub(int_part.to_string().len())
    } else {
        // count zeros between the point and the first significant digit
        let mut leading_zeros = 0usize;
        let mut scaled = magnitude.clone() * BigRational::from_integer(ten.clone());
        while scaled < BigRational::one() {
            leading_zeros += 1;
            scaled *= BigRational::from_integer(ten.clone());
        }
        leading_zeros + significant
    };

    let scale = num_traits::pow(ten, frac_digits);
    let scaled = magnitude * BigRational::from_integer(scale.clone());
    // round half away from zero on a non-negative value
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let rounded = (scaled + half).floor().to_integer();

    let digits = rounded.to_string();
    let mut text = if frac_digits == 0 {
        digits
    } else {
        let padded = format!("{digits:0>width$}", width = frac_digits + 1);
        let (int_str, frac_str) = padded.split_at(padded.len() - frac_digits);
        let frac_trimmed = frac_str.trim_end_matches('0');
        if frac_trimmed.is_empty() {
            int_str.to_string()
        } else {
            format!("{int_str}.{frac_trimmed}")
        }
    };
    if negative && text.chars().any(|c| c != '0' && c != '.') {
        text.insert(0, '-');
    }
    text
}
