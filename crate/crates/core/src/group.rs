//! Carnot group arithmetic in coordinates of the first kind.
//!
//! The exponential map is the identity in these coordinates, so the group law
//! is the Baker–Campbell–Hausdorff series of the algebra. Nilpotency makes the
//! series finite: brackets of more than `M` elements vanish, and truncating the
//! Dynkin expansion at word length `M` is exact.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::algebra::GradedNilpotentAlgebra;
use crate::poly::{rational_from_f64, CompiledPolynomial, Polynomial};

/// Largest supported depth.
pub const MAX_DEPTH: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("depth {depth} exceeds the supported maximum {cap}")]
    UnsupportedDepth { depth: usize, cap: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coordinates must be finite")]
    NonFinite,
    #[error("dilation factor must be positive, got {0}")]
    NonPositiveFactor(f64),
}

/// A group element in coordinates of the first kind; the identity is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupPoint(Vec<f64>);

impl GroupPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self, GroupError> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GroupError::NonFinite);
        }
        Ok(Self(coords))
    }

    pub fn identity(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }
}

impl From<GroupPoint> for Vec<f64> {
    fn from(p: GroupPoint) -> Self {
        p.0
    }
}

/// The group law as `N` polynomials in `2N` variables `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BchTable {
    dim: usize,
    components: Vec<Polynomial>,
}

impl BchTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Output coordinate `i` of `x·y`.
    pub fn component(&self, i: usize) -> &Polynomial {
        &self.components[i]
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    /// Every monomial `x^μ y^β` of coordinate `i` has homogeneous norm
    /// `|μ+β|_h = deg_i`. Returns the offending `(i, norm)` pairs.
    pub fn homogeneity_violations(&self, alg: &GradedNilpotentAlgebra) -> Vec<(usize, u32)> {
        let weights: Vec<u32> = alg.degrees().iter().chain(alg.degrees()).copied().collect();
        let mut bad = Vec::new();
        for (i, p) in self.components.iter().enumerate() {
            for w in p.weighted_degrees(&weights) {
                if w != alg.degree(i) {
                    bad.push((i, w));
                }
            }
        }
        bad
    }
}

type Element = Vec<Polynomial>;

fn bracket_elements(alg: &GradedNilpotentAlgebra, consts: &[(usize, usize, usize, BigRational)], a: &Element, b: &Element) -> Element {
    let nvars = a[0].nvars();
    let mut out = vec![Polynomial::zero(nvars); alg.dim()];
    for (i, j, k, c) in consts {
        if a[*i].is_zero() && a[*j].is_zero() {
            continue;
        }
        let term = &(&a[*i] * &b[*j]) - &(&a[*j] * &b[*i]);
        if !term.is_zero() {
            out[*k] = &out[*k] + &term.scale(c);
        }
    }
    out
}

fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// Coefficients of Dynkin's expansion of `log(e^X e^Y)` grouped by the word of
/// its right-nested bracket; `false` is `X`, `true` is `Y`.
fn dynkin_word_coefficients(max_len: usize) -> HashMap<Vec<bool>, BigRational> {
    fn recurse(
        max_len: usize,
        pairs: &mut Vec<(usize, usize)>,
        len: usize,
        out: &mut HashMap<Vec<bool>, BigRational>,
    ) {
        if !pairs.is_empty() {
            let n = pairs.len();
            let mut denom = BigInt::from(n) * BigInt::from(len);
            let mut word = Vec::with_capacity(len);
            for &(r, s) in pairs.iter() {
                denom *= factorial(r) * factorial(s);
                word.extend(std::iter::repeat_n(false, r));
                word.extend(std::iter::repeat_n(true, s));
            }
            let sign = if n % 2 == 1 { BigInt::one() } else { -BigInt::one() };
            let coeff = BigRational::new(sign, denom);
            *out.entry(word).or_insert_with(BigRational::zero) += coeff;
        }
        for r in 0..=max_len - len {
            for s in 0..=max_len - len - r {
                if r + s == 0 {
                    continue;
                }
                pairs.push((r, s));
                recurse(max_len, pairs, len + r + s, out);
                pairs.pop();
            }
        }
    }
    let mut out = HashMap::new();
    recurse(max_len, &mut Vec::new(), 0, &mut out);
    out.retain(|_, c| !c.is_zero());
    out
}

/// Builds the group law of `alg` via the graded Dynkin series.
pub fn build_bch_table(alg: &GradedNilpotentAlgebra) -> Result<BchTable, GroupError> {
    let depth = alg.depth();
    if depth > MAX_DEPTH {
        return Err(GroupError::UnsupportedDepth {
            depth,
            cap: MAX_DEPTH,
        });
    }
    let n = alg.dim();
    let nvars = 2 * n;
    let consts: Vec<(usize, usize, usize, BigRational)> = alg
        .constants()
        .iter()
        .map(|(&(i, j, k), &c)| (i, j, k, rational_from_f64(c)))
        .collect();
    let x: Element = (0..n).map(|i| Polynomial::var(nvars, i)).collect();
    let y: Element = (0..n).map(|i| Polynomial::var(nvars, n + i)).collect();
    let mut components: Element = (0..n).map(|i| &x[i] + &y[i]).collect();
    if !alg.is_abelian() {
        let words = dynkin_word_coefficients(depth);
        let mut memo: HashMap<Vec<bool>, Element> = HashMap::new();
        let mut sorted: Vec<(&Vec<bool>, &BigRational)> = words.iter().filter(|(w, _)| w.len() >= 2).collect();
        sorted.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then(a.0.cmp(b.0)));
        for (word, coeff) in sorted {
            let nested = nested_bracket(alg, &consts, word, &x, &y, &mut memo);
            for k in 0..n {
                if !nested[k].is_zero() {
                    components[k] = &components[k] + &nested[k].scale(coeff);
                }
            }
        }
    }
    Ok(BchTable { dim: n, components })
}

fn nested_bracket(
    alg: &GradedNilpotentAlgebra,
    consts: &[(usize, usize, usize, BigRational)],
    word: &[bool],
    x: &Element,
    y: &Element,
    memo: &mut HashMap<Vec<bool>, Element>,
) -> Element {
    if word.len() == 1 {
        return if word[0] { y.clone() } else { x.clone() };
    }
    if let Some(e) = memo.get(word) {
        return e.clone();
    }
    let tail = nested_bracket(alg, consts, &word[1..], x, y, memo);
    let head = if word[0] { y } else { x };
    let result = if tail.iter().all(Polynomial::is_zero) {
        tail
    } else {
        bracket_elements(alg, consts, head, &tail)
    };
    memo.insert(word.to_vec(), result.clone());
    result
}

/// A Carnot group: its algebra, group law and left-invariant frame.
#[derive(Debug, Clone)]
pub struct CarnotGroup {
    alg: GradedNilpotentAlgebra,
    bch: BchTable,
    product: Vec<CompiledPolynomial>,
    /// `frame[k][i]`: coordinate `k` of `X_i`, a polynomial in `x`.
    frame: Vec<Vec<Polynomial>>,
    frame_eval: Vec<Vec<CompiledPolynomial>>,
    /// `d(x·w)_k / dw_i` as polynomials in `(x, w)`.
    translation_jacobian: Vec<Vec<CompiledPolynomial>>,
}

impl CarnotGroup {
    pub fn new(alg: GradedNilpotentAlgebra) -> Result<Self, GroupError> {
        let bch = build_bch_table(&alg)?;
        let n = alg.dim();
        let product = bch.components.iter().map(Polynomial::compile).collect();
        let dy: Vec<Vec<Polynomial>> = (0..n)
            .map(|k| (0..n).map(|i| bch.components[k].derivative(n + i)).collect())
            .collect();
        let frame: Vec<Vec<Polynomial>> = dy
            .iter()
            .map(|row| row.iter().map(|p| p.set_zero(n..2 * n).project_vars(0..n)).collect())
            .collect();
        let frame_eval = frame
            .iter()
            .map(|row| row.iter().map(Polynomial::compile).collect())
            .collect();
        let translation_jacobian = dy
            .iter()
            .map(|row| row.iter().map(Polynomial::compile).collect())
            .collect();
        Ok(Self {
            alg,
            bch,
            product,
            frame,
            frame_eval,
            translation_jacobian,
        })
    }

    pub fn algebra(&self) -> &GradedNilpotentAlgebra {
        &self.alg
    }

    pub fn bch_table(&self) -> &BchTable {
        &self.bch
    }

    pub fn dim(&self) -> usize {
        self.alg.dim()
    }

    fn check(&self, p: &GroupPoint) -> Result<(), GroupError> {
        if p.dim() != self.dim() {
            return Err(GroupError::DimensionMismatch {
                expected: self.dim(),
                got: p.dim(),
            });
        }
        Ok(())
    }

    pub fn point(&self, coords: Vec<f64>) -> Result<GroupPoint, GroupError> {
        let p = GroupPoint::new(coords)?;
        self.check(&p)?;
        Ok(p)
    }

    pub fn product(&self, x: &GroupPoint, y: &GroupPoint) -> Result<GroupPoint, GroupError> {
        self.check(x)?;
        self.check(y)?;
        let mut out = vec![0.0; self.dim()];
        self.product_into(x.coords(), y.coords(), &mut out);
        Ok(GroupPoint(out))
    }

    /// `out = x·y` on raw coordinate slices.
    pub fn product_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let mut xy = [0.0f64; 32];
        let buf: &mut [f64] = if 2 * n <= xy.len() {
            &mut xy[..2 * n]
        } else {
            return self.product_into_alloc(x, y, out);
        };
        buf[..n].copy_from_slice(x);
        buf[n..].copy_from_slice(y);
        for (o, p) in out.iter_mut().zip(&self.product) {
            *o = p.evaluate(buf);
        }
    }

    fn product_into_alloc(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let buf: Vec<f64> = x.iter().chain(y).copied().collect();
        for (o, p) in out.iter_mut().zip(&self.product) {
            *o = p.evaluate(&buf);
        }
    }

    pub fn product_vec(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.product_into(x, y, &mut out);
        out
    }

    pub fn inverse(&self, x: &GroupPoint) -> GroupPoint {
        GroupPoint(x.0.iter().map(|c| -c).collect())
    }

    pub fn dilation(&self, x: &GroupPoint, r: f64) -> Result<GroupPoint, GroupError> {
        self.check(x)?;
        if !(r > 0.0) {
            return Err(GroupError::NonPositiveFactor(r));
        }
        Ok(GroupPoint(self.dilate_vec(x.coords(), r)))
    }

    pub fn dilate_vec(&self, x: &[f64], r: f64) -> Vec<f64> {
        x.iter()
            .zip(self.alg.degrees())
            .map(|(c, &d)| c * r.powi(d as i32))
            .collect()
    }

    /// Matrix whose column `i` is `X_i(x)` in coordinates.
    pub fn left_invariant_frame(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |k, i| self.frame_eval[k][i].evaluate(x))
    }

    /// Row-major `N×N` frame at `x` written into `out`.
    ///
    /// The matrix is unit lower triangular: `X_i` has no components of
    /// degree below `deg_i`, and within its own layer it is `∂/∂x_i`.
    pub fn frame_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for k in 0..n {
            for i in 0..n {
                out[k * n + i] = self.frame_eval[k][i].evaluate(x);
            }
        }
    }

    /// Symbolic frame: `frame_fields()[k][i]` is coordinate `k` of `X_i`.
    pub fn frame_fields(&self) -> &[Vec<Polynomial>] {
        &self.frame
    }

    /// Jacobian of `w ↦ x·w` at `w`.
    pub fn translation_jacobian(&self, x: &[f64], w: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let buf: Vec<f64> = x.iter().chain(w).copied().collect();
        DMatrix::from_fn(n, n, |k, i| self.translation_jacobian[k][i].evaluate(&buf))
    }

    /// Left translation `w ↦ x·w` as polynomials in `w` with exact
    /// coefficients.
    pub fn left_translation_polys(&self, x: &[f64]) -> Vec<Polynomial> {
        let n = self.dim();
        let mut subs: Vec<Polynomial> = x
            .iter()
            .map(|&c| Polynomial::constant(n, rational_from_f64(c)))
            .collect();
        subs.extend((0..n).map(|i| Polynomial::var(n, i)));
        self.bch.components.iter().map(|p| p.compose(&subs)).collect()
    }

    /// Coordinate `m` of the vector-field bracket `[X_i, X_j]`, computed
    /// symbolically, minus `Σ_k c_ijk X_k`. Identically zero for a correct
    /// table.
    pub fn frame_bracket_defect(&self, i: usize, j: usize) -> Vec<Polynomial> {
        let n = self.dim();
        (0..n)
            .map(|m| {
                let mut acc = Polynomial::zero(n);
                for l in 0..n {
                    acc = &acc + &(&self.frame[l][i] * &self.frame[m][j].derivative(l));
                    acc = &acc - &(&self.frame[l][j] * &self.frame[m][i].derivative(l));
                }
                for k in 0..n {
                    let c = self.alg.structure_constant(i, j, k);
                    if c != 0.0 {
                        acc = &acc - &self.frame[m][k].scale(&rational_from_f64(c));
                    }
                }
                acc
            })
            .collect()
    }
}

/// Outcome of the invariant suite run by [`selftest`].
#[derive(Debug, Clone, Serialize)]
pub struct SelfTestReport {
    pub algebra: String,
    pub dim: usize,
    pub depth: usize,
    pub seed: u64,
    pub samples: usize,
    pub associativity_residual: f64,
    pub inverse_residual: f64,
    pub identity_residual: f64,
    pub dilation_residual: f64,
    pub frame_identity_at_origin: bool,
    pub frame_bracket_residual: f64,
    pub homogeneity_violations: usize,
    pub passed: bool,
}

/// Associativity, inverse, identity, dilation-homomorphism, frame and
/// homogeneity checks on random points with coordinates in `[-2, 2]`.
pub fn selftest(group: &CarnotGroup, samples: usize, seed: u64) -> SelfTestReport {
    let n = group.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect() };
    let max_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let zero = vec![0.0; n];
    let (mut assoc, mut inv, mut ident, mut dil) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let (x, y, z) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let left = group.product_vec(&group.product_vec(&x, &y), &z);
        let right = group.product_vec(&x, &group.product_vec(&y, &z));
        assoc = assoc.max(max_diff(&left, &right));
        let neg: Vec<f64> = x.iter().map(|c| -c).collect();
        inv = inv.max(max_diff(&group.product_vec(&x, &neg), &zero));
        ident = ident
            .max(max_diff(&group.product_vec(&x, &zero), &x))
            .max(max_diff(&group.product_vec(&zero, &x), &x));
        let r: f64 = rng.gen_range(0.1..3.0);
        let lhs = group.dilate_vec(&group.product_vec(&x, &y), r);
        let rhs = group.product_vec(&group.dilate_vec(&x, r), &group.dilate_vec(&y, r));
        dil = dil.max(max_diff(&lhs, &rhs) / (1.0 + lhs.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    }
    let frame_identity_at_origin = group.left_invariant_frame(&zero) == DMatrix::identity(n, n);
    let mut frame_res = 0.0f64;
    let defects: Vec<Vec<CompiledPolynomial>> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| group.frame_bracket_defect(i, j).iter().map(Polynomial::compile).collect())
        .collect();
    for _ in 0..10 {
        let x = draw(&mut rng);
        for d in &defects {
            for p in d {
                frame_res = frame_res.max(p.evaluate(&x).abs());
            }
        }
    }
    let homogeneity_violations = group.bch.homogeneity_violations(group.algebra()).len();
    let passed = assoc <= 1e-9
        && inv <= 1e-12
        && ident <= 1e-12
        && dil <= 1e-12
        && frame_identity_at_origin
        && frame_res <= 1e-10
        && homogeneity_violations == 0;
    SelfTestReport {
        algebra: group.algebra().name().to_string(),
        dim: n,
        depth: group.algebra().depth(),
        seed,
        samples,
        associativity_residual: assoc,
        inverse_residual: inv,
        identity_residual: ident,
        dilation_residual: dil,
        frame_identity_at_origin,
        frame_bracket_residual: frame_res,
        homogeneity_violations,
        passed,
    }
}
