//! Signal literal syntax used in scenario files and CLI arguments.
//!
//! A literal is a sum of terms, each either a constant or a cosine:
//!
//! ```text
//! signal := ['-'] term (('+' | '-') term)*
//! term   := number | [number '*'] 'cos' '(' number '*' 't' [('+' | '-') number] ')'
//! ```
//!
//! e.g. `2 + 0.5*cos(3*t + 1.0)`. Whitespace is insignificant; numbers may
//! use decimal or scientific notation. Formatting uses Rust's
//! shortest-round-trip float representation, so parse → format → parse is
//! value-exact.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::trajectory::QuasiPeriodicSignal;

#[derive(Debug, Error, PartialEq)]
pub enum SignalParseError {
    #[error("empty signal literal")]
    Empty,
    #[error("invalid number {0:?}")]
    InvalidNumber(String),
    #[error("expected {expected} at byte {at}")]
    Expected { expected: &'static str, at: usize },
    #[error("trailing input at byte {0}")]
    Trailing(usize),
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(input: &'a str) -> Self {
        Self { bytes: input.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, byte: u8) -> bool {
        if self.peek() == Some(byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, byte: u8, what: &'static str) -> Result<(), SignalParseError> {
        if self.eat(byte) {
            Ok(())
        } else {
            Err(SignalParseError::Expected { expected: what, at: self.pos })
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        self.skip_ws();
        if self.bytes[self.pos..].starts_with(kw.as_bytes()) {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    /// Unsigned number: digits with optional fraction and exponent.
    fn number(&mut self) -> Result<f64, SignalParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit() || *b == b'.') {
            self.pos += 1;
        }
        if self.bytes.get(self.pos).is_some_and(|b| *b == b'e' || *b == b'E') {
            self.pos += 1;
            if self.bytes.get(self.pos).is_some_and(|b| *b == b'+' || *b == b'-') {
                self.pos += 1;
            }
            while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if self.pos == start {
            return Err(SignalParseError::Expected { expected: "number", at: start });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii slice");
        text.parse::<f64>().map_err(|_| SignalParseError::InvalidNumber(text.to_owned()))
    }

    /// `number ['*' cos(...)]` or bare `cos(...)`, sign already consumed.
    fn term(&mut self, sign: f64, signal: &mut QuasiPeriodicSignal) -> Result<(), SignalParseError> {
        if self.peek() == Some(b'c') {
            return self.cosine(sign, signal);
        }
        let value = self.number()?;
        if self.eat(b'*') {
            self.cosine(sign * value, signal)
        } else {
            signal.offset += sign * value;
            Ok(())
        }
    }

    /// `cos ( number * t [±number] )`; `amplitude` carries the term sign.
    fn cosine(&mut self, amplitude: f64, signal: &mut QuasiPeriodicSignal) -> Result<(), SignalParseError> {
        if !self.eat_keyword("cos") {
            return Err(SignalParseError::Expected { expected: "cos", at: self.pos });
        }
        self.expect(b'(', "'('")?;
        let omega = self.number()?;
        self.expect(b'*', "'*'")?;
        if !self.eat_keyword("t") {
            return Err(SignalParseError::Expected { expected: "t", at: self.pos });
        }
        let phase = if self.eat(b'+') {
            self.number()?
        } else if self.eat(b'-') {
            -self.number()?
        } else {
            0.0
        };
        self.expect(b')', "')'")?;
        *signal = std::mem::take(signal).with_component(amplitude, omega, phase);
        Ok(())
    }

    fn signal(&mut self) -> Result<QuasiPeriodicSignal, SignalParseError> {
        if self.peek().is_none() {
            return Err(SignalParseError::Empty);
        }
        let mut out = QuasiPeriodicSignal::zero();
        let mut sign = if self.eat(b'-') { -1.0 } else { 1.0 };
        loop {
            self.term(sign, &mut out)?;
            sign = if self.eat(b'+') {
                1.0
            } else if self.eat(b'-') {
                -1.0
            } else {
                break;
            };
        }
        self.skip_ws();
        if self.pos != self.bytes.len() {
            return Err(SignalParseError::Trailing(self.pos));
        }
        Ok(out)
    }
}

pub fn parse_signal(input: &str) -> Result<QuasiPeriodicSignal, SignalParseError> {
    Parser::new(input).signal()
}

pub fn format_signal(signal: &QuasiPeriodicSignal) -> String {
    let mut out = String::new();
    if signal.offset != 0.0 || signal.components.is_empty() {
        out.push_str(&signal.offset.to_string());
    }
    for c in &signal.components {
        if out.is_empty() {
            if c.amplitude < 0.0 {
                out.push_str("- ");
            }
        } else {
            out.push_str(if c.amplitude < 0.0 { " - " } else { " + " });
        }
        out.push_str(&c.amplitude.abs().to_string());
        out.push_str("*cos(");
        out.push_str(&c.angular_frequency.abs().to_string());
        out.push_str("*t");
        // cos(-ωt + φ) = cos(ωt - φ): fold a negative frequency into the phase.
        let phase = if c.angular_frequency < 0.0 { -c.phase } else { c.phase };
        if phase != 0.0 {
            out.push_str(if phase < 0.0 { " - " } else { " + " });
            out.push_str(&phase.abs().to_string());
        }
        out.push(')');
    }
    out
}

impl fmt::Display for QuasiPeriodicSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_signal(self))
    }
}

impl FromStr for QuasiPeriodicSignal {
    type Err = SignalParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_signal(s)
    }
}

impl Serialize for QuasiPeriodicSignal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_signal(self))
    }
}

impl<'de> Deserialize<'de> for QuasiPeriodicSignal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_signal(&text).map_err(D::Error::custom)
    }
}
