//! Unit-ball volumes `ω_μ = π^{μ/2} / Γ(μ/2 + 1)`, in floating point and as
//! exact rational multiples of integer powers of π.

use std::fmt;
use std::ops::{Div, Mul};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::poly::rational_to_f64;

/// Which family of constants plays the role of `ω_μ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Euclidean unit-ball volume.
    #[default]
    UnitBall,
    /// `2^μ`, the volume of the unit cube `[-1, 1]^μ`; kept only for
    /// sensitivity comparisons.
    Dyadic,
}

impl Normalization {
    pub fn omega(self, mu: u32) -> f64 {
        match self {
            Normalization::UnitBall => omega(mu),
            Normalization::Dyadic => 2f64.powi(mu as i32),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Normalization::UnitBall => "unit-ball-volume",
            Normalization::Dyadic => "dyadic",
        }
    }
}

/// `ω_μ` in double precision; `ω_0 = 1`.
pub fn omega(mu: u32) -> f64 {
    omega_exact(mu).to_f64()
}

/// `q · π^p` with rational `q` and integer `p`.
#[derive(Clone, PartialEq, Eq, Serialize)]
pub struct PiMonomial {
    #[serde(serialize_with = "ser_rational")]
    pub coeff: BigRational,
    pub pi_power: i64,
}

fn ser_rational<S: serde::Serializer>(q: &BigRational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&q.to_string())
}

impl PiMonomial {
    pub fn new(coeff: BigRational, pi_power: i64) -> Self {
        Self { coeff, pi_power }
    }

    pub fn rational(coeff: BigRational) -> Self {
        Self::new(coeff, 0)
    }

    pub fn integer(n: i64) -> Self {
        Self::rational(BigRational::from_integer(n.into()))
    }

    pub fn one() -> Self {
        Self::integer(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeff.is_zero()
    }

    pub fn to_f64(&self) -> f64 {
        rational_to_f64(&self.coeff) * std::f64::consts::PI.powi(self.pi_power as i32)
    }

    pub fn recip(&self) -> Self {
        Self::new(self.coeff.recip(), -self.pi_power)
    }
}

impl fmt::Debug for PiMonomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for PiMonomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pi_power {
            0 => write!(f, "{}", self.coeff),
            1 => write!(f, "({})·π", self.coeff),
            p => write!(f, "({})·π^{p}", self.coeff),
        }
    }
}

impl Mul for &PiMonomial {
    type Output = PiMonomial;
    fn mul(self, rhs: &PiMonomial) -> PiMonomial {
        PiMonomial::new(&self.coeff * &rhs.coeff, self.pi_power + rhs.pi_power)
    }
}

impl Div for &PiMonomial {
    type Output = PiMonomial;
    fn div(self, rhs: &PiMonomial) -> PiMonomial {
        self * &rhs.recip()
    }
}

impl Mul for PiMonomial {
    type Output = PiMonomial;
    fn mul(self, rhs: PiMonomial) -> PiMonomial {
        &self * &rhs
    }
}

impl Div for PiMonomial {
    type Output = PiMonomial;
    fn div(self, rhs: PiMonomial) -> PiMonomial {
        &self / &rhs
    }
}

fn factorial(n: u32) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * k)
}

/// Exact `ω_μ`: `π^m / m!` for `μ = 2m`, and
/// `2^{2m+1} m! π^m / (2m+1)!` for `μ = 2m+1`.
pub fn omega_exact(mu: u32) -> PiMonomial {
    let m = mu / 2;
    let coeff = if mu % 2 == 0 {
        BigRational::new(BigInt::one(), factorial(m))
    } else {
        BigRational::new(
            (BigInt::one() << (2 * m + 1) as usize) * factorial(m),
            factorial(2 * m + 1),
        )
    };
    PiMonomial::new(coeff, m as i64)
}

/// `∏ ω_{μ_k}` over the given dimensions.
pub fn omega_product_exact(dims: impl IntoIterator<Item = u32>) -> PiMonomial {
    dims.into_iter()
        .fold(PiMonomial::one(), |acc, mu| &acc * &omega_exact(mu))
}
