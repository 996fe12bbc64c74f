//! Scalar abstraction so the interpolation engine runs over both real and
//! complex tables with one code path.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;

/// Field marker carried by tables and serialized payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldTag {
    Real,
    Complex,
}

impl FieldTag {
    pub fn name(self) -> &'static str {
        match self {
            FieldTag::Real => "real",
            FieldTag::Complex => "complex",
        }
    }

    pub fn from_name(s: &str) -> Option<FieldTag> {
        match s {
            "real" => Some(FieldTag::Real),
            "complex" => Some(FieldTag::Complex),
            _ => None,
        }
    }

    /// Raw doubles per value when flattened for storage.
    pub fn components(self) -> usize {
        match self {
            FieldTag::Real => 1,
            FieldTag::Complex => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseScalarError {
    pub token: String,
}

impl std::fmt::Display for ParseScalarError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cannot parse scalar from {:?}", self.token)
    }
}

impl std::error::Error for ParseScalarError {}

/// Closed set of element types the dense kernel supports: f64 and Complex64.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const FIELD: FieldTag;
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    /// Build from parts; returns None when the imaginary part cannot be
    /// represented (real field, im != 0).
    fn from_parts(re: f64, im: f64) -> Option<Self>;
    fn re(self) -> f64;
    fn im(self) -> f64;
    fn conj(self) -> Self;
    fn abs(self) -> f64;
    /// Squared modulus, cheaper than abs() and exact for accumulation.
    fn abs_sq(self) -> f64;
    fn is_finite(self) -> bool;
    /// Multiply by a real factor.
    fn scale(self, c: f64) -> Self;

    /// 17-significant-digit text form that round-trips bit-exactly.
    fn fmt_exact(self) -> String;
    fn parse(token: &str) -> Result<Self, ParseScalarError>;
}

pub fn fmt_f64_exact(x: f64) -> String {
    format!("{:.16e}", x)
}

impl Scalar for f64 {
    const FIELD: FieldTag = FieldTag::Real;
    const ZERO: f64 = 0.0;
    const ONE: f64 = 1.0;

    fn from_f64(x: f64) -> f64 {
        x
    }

    fn from_parts(re: f64, im: f64) -> Option<f64> {
        if im == 0.0 {
            Some(re)
        } else {
            None
        }
    }

    fn re(self) -> f64 {
        self
    }

    fn im(self) -> f64 {
        0.0
    }

    fn conj(self) -> f64 {
        self
    }

    fn abs(self) -> f64 {
        f64::abs(self)
    }

    fn abs_sq(self) -> f64 {
        self * self
    }

    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }

    fn scale(self, c: f64) -> f64 {
        self * c
    }

    fn fmt_exact(self) -> String {
        fmt_f64_exact(self)
    }

    fn parse(token: &str) -> Result<f64, ParseScalarError> {
        token.trim().parse::<f64>().map_err(|_| ParseScalarError {
            token: token.to_string(),
        })
    }
}

impl Scalar for Complex64 {
    const FIELD: FieldTag = FieldTag::Complex;
    const ZERO: Complex64 = Complex64::new(0.0, 0.0);
    const ONE: Complex64 = Complex64::new(1.0, 0.0);

    fn from_f64(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn from_parts(re: f64, im: f64) -> Option<Complex64> {
        Some(Complex64::new(re, im))
    }

    fn re(self) -> f64 {
        self.re
    }

    fn im(self) -> f64 {
        self.im
    }

    fn conj(self) -> Complex64 {
        Complex64::new(self.re, -self.im)
    }

    fn abs(self) -> f64 {
        self.norm()
    }

    fn abs_sq(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    fn scale(self, c: f64) -> Complex64 {
        Complex64::new(self.re * c, self.im * c)
    }

    fn fmt_exact(self) -> String {
        format!("{:.16e}{:+.16e}j", self.re, self.im)
    }

    fn parse(token: &str) -> Result<Complex64, ParseScalarError> {
        let t = token.trim();
        let err = || ParseScalarError {
            token: token.to_string(),
        };
        let body = t.strip_suffix('j').or_else(|| t.strip_suffix('J'));
        match body {
            None => {
                // Plain real literal.
                let re = t.parse::<f64>().map_err(|_| err())?;
                Ok(Complex64::new(re, 0.0))
            }
            Some(body) => {
                // Split at the sign that starts the imaginary part. The first
                // character and exponent signs do not count.
                let bytes = body.as_bytes();
                let mut split = None;
                for i in (1..bytes.len()).rev() {
                    let c = bytes[i];
                    if (c == b'+' || c == b'-')
                        && bytes[i - 1] != b'e'
                        && bytes[i - 1] != b'E'
                    {
                        split = Some(i);
                        break;
                    }
                }
                let i = split.ok_or_else(err)?;
                let re = body[..i].parse::<f64>().map_err(|_| err())?;
                let im = body[i..].parse::<f64>().map_err(|_| err())?;
                Ok(Complex64::new(re, im))
            }
        }
    }
}
