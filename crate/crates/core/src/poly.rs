//! Sparse multivariate polynomials with exact rational coefficients.
//!
//! Symbolic work (BCH tables, frame fields, map Jacobians) is done on
//! [`Polynomial`]; hot loops evaluate a [`CompiledPolynomial`] in `f64`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

mod parse;

pub use parse::{parse_polynomial, ParseError};

/// Exponent vector of a monomial, one entry per variable.
pub type Exponents = Vec<u32>;

/// Converts an `f64` into the rational it represents exactly.
///
/// Panics on non-finite input; callers validate finiteness first.
pub fn rational_from_f64(value: f64) -> BigRational {
    BigRational::from_float(value).expect("finite float")
}

pub fn rational_to_f64(value: &BigRational) -> f64 {
    value.to_f64().unwrap_or_else(|| {
        // numerator/denominator too large for a direct conversion
        let n = value.numer().to_f64().unwrap_or(f64::NAN);
        let d = value.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

#[derive(Clone, PartialEq, Eq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Exponents, BigRational>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, value: BigRational) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], value);
        p
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, BigRational::one())
    }

    /// The coordinate function `x_var`.
    pub fn var(nvars: usize, var: usize) -> Self {
        assert!(var < nvars, "variable {var} out of range for {nvars} variables");
        let mut exps = vec![0; nvars];
        exps[var] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(exps, BigRational::one());
        p
    }

    pub fn monomial(exps: Exponents, coeff: BigRational) -> Self {
        let mut p = Self::zero(exps.len());
        p.add_term(exps, coeff);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, &BigRational)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Returns the constant value if the polynomial has no variable terms.
    pub fn as_constant(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => {
                let (exps, c) = self.terms.iter().next().unwrap();
                exps.iter().all(|&e| e == 0).then(|| c.clone())
            }
            _ => None,
        }
    }

    pub fn coefficient(&self, exps: &[u32]) -> BigRational {
        self.terms.get(exps).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn add_term(&mut self, exps: Exponents, coeff: BigRational) {
        debug_assert_eq!(exps.len(), self.nvars);
        if coeff.is_zero() {
            return;
        }
        match self.terms.entry(exps) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coeff);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += coeff;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn scale(&self, factor: &BigRational) -> Self {
        if factor.is_zero() {
            return Self::zero(self.nvars);
        }
        Self {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(e, c)| (e.clone(), c * factor))
                .collect(),
        }
    }

    pub fn pow(&self, exp: u32) -> Self {
        let mut result = Self::one(self.nvars);
        let mut base = self.clone();
        let mut e = exp;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        result
    }

    /// Total (ordinary) degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|e| e.iter().sum()).max()
    }

    pub fn derivative(&self, var: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (exps, c) in &self.terms {
            let k = exps[var];
            if k == 0 {
                continue;
            }
            let mut e = exps.clone();
            e[var] -= 1;
            out.add_term(e, c * BigRational::from_integer(BigInt::from(k)));
        }
        out
    }

    /// Drops every monomial that involves a variable in `vars`, i.e. sets
    /// those variables to zero.
    pub fn set_zero(&self, vars: std::ops::Range<usize>) -> Self {
        Self {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| vars.clone().all(|v| e[v] == 0))
                .map(|(e, c)| (e.clone(), c.clone()))
                .collect(),
        }
    }

    /// Keeps variables `range` and drops the others, which must not occur.
    pub fn project_vars(&self, range: std::ops::Range<usize>) -> Self {
        let mut out = Self::zero(range.len());
        for (e, c) in &self.terms {
            debug_assert!(e
                .iter()
                .enumerate()
                .all(|(i, &k)| range.contains(&i) || k == 0));
            out.add_term(e[range.clone()].to_vec(), c.clone());
        }
        out
    }

    /// Re-embeds the polynomial into `nvars` variables, shifting variable
    /// `i` to `i + offset`.
    pub fn embed(&self, nvars: usize, offset: usize) -> Self {
        assert!(offset + self.nvars <= nvars);
        let mut out = Self::zero(nvars);
        for (e, c) in &self.terms {
            let mut ne = vec![0; nvars];
            ne[offset..offset + self.nvars].copy_from_slice(e);
            out.add_term(ne, c.clone());
        }
        out
    }

    /// Substitutes polynomial `subs[i]` for variable `i`.
    pub fn compose(&self, subs: &[Polynomial]) -> Polynomial {
        assert_eq!(subs.len(), self.nvars, "one substitution per variable");
        let target_vars = subs.first().map_or(0, |p| p.nvars);
        let mut powers: Vec<Vec<Polynomial>> = subs
            .iter()
            .map(|s| vec![Polynomial::one(target_vars), s.clone()])
            .collect();
        let mut out = Polynomial::zero(target_vars);
        for (exps, c) in &self.terms {
            let mut term = Polynomial::constant(target_vars, c.clone());
            for (v, &k) in exps.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                while powers[v].len() <= k as usize {
                    let next = &powers[v][powers[v].len() - 1] * &subs[v];
                    powers[v].push(next);
                }
                term = &term * &powers[v][k as usize];
            }
            out = &out + &term;
        }
        out
    }

    /// Evaluates at a point with exact rational arithmetic.
    pub fn evaluate_exact(&self, point: &[BigRational]) -> BigRational {
        let mut acc = BigRational::zero();
        for (exps, c) in &self.terms {
            let mut term = c.clone();
            for (v, &k) in exps.iter().enumerate() {
                for _ in 0..k {
                    term *= &point[v];
                }
            }
            acc += term;
        }
        acc
    }

    pub fn evaluate(&self, point: &[f64]) -> f64 {
        self.compile().evaluate(point)
    }

    pub fn compile(&self) -> CompiledPolynomial {
        CompiledPolynomial {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(exps, c)| CompiledTerm {
                    coeff: rational_to_f64(c),
                    factors: exps
                        .iter()
                        .enumerate()
                        .filter(|(_, &k)| k > 0)
                        .map(|(v, &k)| (v, k as i32))
                        .collect(),
                })
                .collect(),
        }
    }

    /// Weighted degree `Σ_i w_i e_i` of every monomial.
    pub fn weighted_degrees<'a>(&'a self, weights: &'a [u32]) -> impl Iterator<Item = u32> + 'a {
        self.terms
            .keys()
            .map(move |e| e.iter().zip(weights).map(|(k, w)| k * w).sum())
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (n, (exps, c)) in self.terms.iter().enumerate() {
            let negative = c.is_negative();
            if n == 0 {
                if negative {
                    write!(f, "-")?;
                }
            } else if negative {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let abs = c.abs();
            let is_const = exps.iter().all(|&k| k == 0);
            let mut first = true;
            if !abs.is_one() || is_const {
                write!(f, "{abs}")?;
                first = false;
            }
            for (v, &k) in exps.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                if !first {
                    write!(f, "*")?;
                }
                first = false;
                write!(f, "u{}", v + 1)?;
                if k > 1 {
                    write!(f, "^{k}")?;
                }
            }
        }
        Ok(())
    }
}

impl<'a> Add<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &'a Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }
}

impl<'a> Sub<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &'a Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), -c.clone());
        }
        out
    }
}

impl<'a> Mul<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &'a Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = Polynomial::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let e: Exponents = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(&-BigRational::one())
    }
}

#[derive(Clone, Debug)]
struct CompiledTerm {
    coeff: f64,
    factors: Vec<(usize, i32)>,
}

/// Floating-point evaluator for a [`Polynomial`].
#[derive(Clone, Debug)]
pub struct CompiledPolynomial {
    nvars: usize,
    terms: Vec<CompiledTerm>,
}

impl CompiledPolynomial {
    pub fn nvars(&self) -> usize {
        self.nvars
    }

    #[inline]
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        debug_assert!(x.len() >= self.nvars);
        let mut acc = 0.0;
        for t in &self.terms {
            let mut v = t.coeff;
            for &(var, k) in &t.factors {
                v *= if k == 1 { x[var] } else { x[var].powi(k) };
            }
            acc += v;
        }
        acc
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}
