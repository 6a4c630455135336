//! Polynomial maps between Carnot groups, their differentials in the
//! left-invariant frames, and contactness checks.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::group::{CarnotGroup, GroupError, GroupPoint};
use crate::poly::{parse_polynomial, CompiledPolynomial, ParseError, Polynomial};

pub use crate::linalg::{gram_col, gram_row, GramError};

/// Entries below the layer diagonal of `Dφ` larger than this (relative to
/// `max(1, max|Dφ|)`) make a map non-contact.
pub const CONTACT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("component {index} does not parse: {source}")]
    Parse { index: usize, source: ParseError },
    #[error("map has {got} components but the target has dimension {expected}")]
    ComponentCount { expected: usize, got: usize },
    #[error("component {index} has {got} variables, expected {expected}")]
    VariableCount { index: usize, expected: usize, got: usize },
    #[error("source dimension {source_dim} is smaller than target dimension {target_dim}")]
    DimensionOrder { source_dim: usize, target_dim: usize },
    #[error("map is not contact: |Dφ[{row},{col}]| = {residual:e} with deg~ {row_degree} > deg {col_degree}")]
    NotContact {
        row: usize,
        col: usize,
        row_degree: u32,
        col_degree: u32,
        residual: f64,
    },
    #[error("target frame is singular at φ(x)")]
    SingularTargetFrame,
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// `φ: 𝔾 → 𝔾̃` with polynomial components in the source's first-kind
/// coordinates.
#[derive(Debug, Clone)]
pub struct PolynomialContactMap {
    name: String,
    source: Arc<CarnotGroup>,
    target: Arc<CarnotGroup>,
    components: Vec<Polynomial>,
    compiled: Vec<CompiledPolynomial>,
    /// `jacobian[j][i] = ∂φ_j/∂x_i`.
    jacobian: Vec<Vec<CompiledPolynomial>>,
}

impl PolynomialContactMap {
    pub fn new(
        name: impl Into<String>,
        source: Arc<CarnotGroup>,
        target: Arc<CarnotGroup>,
        components: Vec<Polynomial>,
    ) -> Result<Self, MapError> {
        let (n, nt) = (source.dim(), target.dim());
        if components.len() != nt {
            return Err(MapError::ComponentCount {
                expected: nt,
                got: components.len(),
            });
        }
        if let Some((index, p)) = components.iter().enumerate().find(|(_, p)| p.nvars() != n) {
            return Err(MapError::VariableCount {
                index,
                expected: n,
                got: p.nvars(),
            });
        }
        if n < nt {
            return Err(MapError::DimensionOrder {
                source_dim: n,
                target_dim: nt,
            });
        }
        let compiled = components.iter().map(Polynomial::compile).collect();
        let jacobian = components
            .iter()
            .map(|p| (0..n).map(|i| p.derivative(i).compile()).collect())
            .collect();
        Ok(Self {
            name: name.into(),
            source,
            target,
            components,
            compiled,
            jacobian,
        })
    }

    /// Parses components written over `u1..uN`.
    pub fn parse(
        name: impl Into<String>,
        source: Arc<CarnotGroup>,
        target: Arc<CarnotGroup>,
        components: &[impl AsRef<str>],
    ) -> Result<Self, MapError> {
        let n = source.dim();
        let polys = components
            .iter()
            .enumerate()
            .map(|(index, s)| {
                parse_polynomial(s.as_ref(), n).map_err(|source| MapError::Parse { index, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(name, source, target, polys)
    }

    /// The zero map `𝔾 → 𝔾̃`.
    pub fn zero(name: impl Into<String>, source: Arc<CarnotGroup>, target: Arc<CarnotGroup>) -> Result<Self, MapError> {
        let polys = vec![Polynomial::zero(source.dim()); target.dim()];
        Self::new(name, source, target, polys)
    }

    /// `w ↦ φ(c·w)`, with exact coefficients.
    pub fn translated(&self, c: &[f64]) -> Self {
        let subs = self.source.left_translation_polys(c);
        let comps = self.components.iter().map(|p| p.compose(&subs)).collect();
        Self::new(self.name.clone(), self.source.clone(), self.target.clone(), comps)
            .expect("translation preserves shapes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &CarnotGroup {
        &self.source
    }

    pub fn target(&self) -> &CarnotGroup {
        &self.target
    }

    pub fn source_arc(&self) -> &Arc<CarnotGroup> {
        &self.source
    }

    pub fn target_arc(&self) -> &Arc<CarnotGroup> {
        &self.target
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Polynomial::is_zero)
    }

    /// Whether `n_k >= ñ_k` holds layer by layer.
    pub fn layers_dominate(&self) -> bool {
        let (s, t) = (self.source.algebra().layer_dims(), self.target.algebra().layer_dims());
        t.iter().enumerate().all(|(k, &nt)| s.get(k).copied().unwrap_or(0) >= nt)
    }

    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.compiled) {
            *o = p.evaluate(x);
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.target.dim()];
        self.evaluate_into(x, &mut out);
        out
    }

    /// Coordinate Jacobian entry `∂φ_j/∂x_i`.
    #[inline]
    pub fn jacobian_entry(&self, j: usize, i: usize, x: &[f64]) -> f64 {
        self.jacobian[j][i].evaluate(x)
    }

    /// Coordinate Jacobian `Jφ(x)`, `Ñ × N`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.target.dim(), self.source.dim(), |j, i| self.jacobian[j][i].evaluate(x))
    }
}

/// `Dφ(x)` in the frames together with its graded part.
#[derive(Debug, Clone)]
pub struct DifferentialPair {
    pub point: GroupPoint,
    /// `Ñ × N` matrix of `Dφ(x)` in `{X_i}`, `{X̃_j}`.
    pub full: DMatrix<f64>,
    /// `𝒱_k`, of shape `ñ_k × n_k`, for `k = 1..max(M, M̃)`; a layer missing
    /// on one side contributes an empty dimension.
    pub blocks: Vec<DMatrix<f64>>,
    /// `D̂φ(x)`: the blocks in place, zeros elsewhere.
    pub hc: DMatrix<f64>,
    /// Largest entry that contactness requires to vanish.
    pub contact_residual: f64,
}

/// `Dφ(x) = F̃(φ(x))⁻¹ · Jφ(x) · F(x)`.
pub fn riemannian_differential(map: &PolynomialContactMap, x: &[f64]) -> Result<DMatrix<f64>, MapError> {
    let jf = map.jacobian(x) * map.source.left_invariant_frame(x);
    if map.target.algebra().is_abelian() {
        return Ok(jf);
    }
    let ft = map.target.left_invariant_frame(&map.evaluate(x));
    ft.lu().solve(&jf).ok_or(MapError::SingularTargetFrame)
}

fn layer_ranges(degrees: &[u32], depth: usize) -> Vec<std::ops::Range<usize>> {
    (1..=depth as u32)
        .map(|k| {
            let start = degrees.iter().position(|&d| d >= k).unwrap_or(degrees.len());
            let end = degrees.iter().position(|&d| d > k).unwrap_or(degrees.len());
            start..end
        })
        .collect()
}

fn contact_residual(map: &PolynomialContactMap, full: &DMatrix<f64>) -> (f64, usize, usize) {
    let (ds, dt) = (map.source.algebra().degrees(), map.target.algebra().degrees());
    let mut worst = (0.0, 0, 0);
    for r in 0..full.nrows() {
        for c in 0..full.ncols() {
            if dt[r] > ds[c] && full[(r, c)].abs() > worst.0 {
                worst = (full[(r, c)].abs(), r, c);
            }
        }
    }
    worst
}

/// Splits `Dφ` into its diagonal blocks without checking contactness.
pub fn graded_part(map: &PolynomialContactMap, full: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let (sa, ta) = (map.source.algebra(), map.target.algebra());
    let depth = sa.depth().max(ta.depth());
    let rs = layer_ranges(ta.degrees(), depth);
    let cs = layer_ranges(sa.degrees(), depth);
    let mut hc = DMatrix::zeros(full.nrows(), full.ncols());
    let blocks = rs
        .iter()
        .zip(&cs)
        .map(|(r, c)| {
            let b = full.view((r.start, c.start), (r.len(), c.len())).into_owned();
            hc.view_mut((r.start, c.start), (r.len(), c.len())).copy_from(&b);
            b
        })
        .collect();
    (blocks, hc)
}

pub fn differential_pair(map: &PolynomialContactMap, x: &[f64]) -> Result<DifferentialPair, MapError> {
    let full = riemannian_differential(map, x)?;
    let (residual, row, col) = contact_residual(map, &full);
    let scale = full.amax().max(1.0);
    if residual > CONTACT_TOL * scale {
        return Err(MapError::NotContact {
            row,
            col,
            row_degree: map.target.algebra().degree(row),
            col_degree: map.source.algebra().degree(col),
            residual,
        });
    }
    let (blocks, hc) = graded_part(map, &full);
    Ok(DifferentialPair {
        point: GroupPoint::new(x.to_vec())?,
        full,
        blocks,
        hc,
        contact_residual: residual,
    })
}

/// The blocks `𝒱_k(x)` of `D̂φ(x)`.
pub fn hc_differential(map: &PolynomialContactMap, x: &[f64]) -> Result<Vec<DMatrix<f64>>, MapError> {
    Ok(differential_pair(map, x)?.blocks)
}

/// Allocation-free evaluation of `Dφ(x)` and its Gram determinants for
/// quadrature loops.
#[derive(Debug, Clone)]
pub struct DifferentialEvaluator<'a> {
    map: &'a PolynomialContactMap,
    frame: Vec<f64>,
    target_frame: Vec<f64>,
    jac: Vec<f64>,
    full: Vec<f64>,
    hc: Vec<f64>,
    value: Vec<f64>,
    col: Vec<f64>,
    scratch: Vec<f64>,
    /// `hc_mask[r * N + c]`: entry lies in a diagonal block.
    hc_mask: Vec<bool>,
}

impl<'a> DifferentialEvaluator<'a> {
    pub fn new(map: &'a PolynomialContactMap) -> Self {
        let (n, nt) = (map.source.dim(), map.target.dim());
        let (ds, dt) = (map.source.algebra().degrees(), map.target.algebra().degrees());
        let hc_mask = (0..nt * n).map(|e| dt[e / n] == ds[e % n]).collect();
        Self {
            map,
            frame: vec![0.0; n * n],
            target_frame: vec![0.0; nt * nt],
            jac: vec![0.0; nt * n],
            full: vec![0.0; nt * n],
            hc: vec![0.0; nt * n],
            value: vec![0.0; nt],
            col: vec![0.0; nt],
            scratch: vec![0.0; nt * nt],
            hc_mask,
        }
    }

    /// Recomputes `Dφ(x)` (row-major `Ñ×N`) and `D̂φ(x)`.
    pub fn eval(&mut self, x: &[f64]) {
        let m = self.map;
        let (n, nt) = (m.source.dim(), m.target.dim());
        m.source.frame_into(x, &mut self.frame);
        for j in 0..nt {
            for i in 0..n {
                self.jac[j * n + i] = m.jacobian[j][i].evaluate(x);
            }
        }
        // Jφ·F, using that F is unit lower triangular
        for j in 0..nt {
            for i in 0..n {
                let mut v = self.jac[j * n + i];
                for k in i + 1..n {
                    v += self.jac[j * n + k] * self.frame[k * n + i];
                }
                self.full[j * n + i] = v;
            }
        }
        if !m.target.algebra().is_abelian() {
            m.evaluate_into(x, &mut self.value);
            m.target.frame_into(&self.value, &mut self.target_frame);
            for i in 0..n {
                for j in 0..nt {
                    self.col[j] = self.full[j * n + i];
                }
                crate::linalg::solve_unit_lower(&self.target_frame, nt, &mut self.col);
                for j in 0..nt {
                    self.full[j * n + i] = self.col[j];
                }
            }
        }
        for (e, (h, f)) in self.hc.iter_mut().zip(&self.full).enumerate() {
            *h = if self.hc_mask[e] { *f } else { 0.0 };
        }
    }

    pub fn full(&self) -> &[f64] {
        &self.full
    }

    /// `𝒟(Dφ(x))`.
    pub fn gram_full(&mut self) -> f64 {
        let (n, nt) = (self.map.source.dim(), self.map.target.dim());
        crate::linalg::gram_row_slice(&self.full, nt, n, &mut self.scratch)
    }

    /// `𝒟(D̂φ(x))`.
    pub fn gram_hc(&mut self) -> f64 {
        let (n, nt) = (self.map.source.dim(), self.map.target.dim());
        crate::linalg::gram_row_slice(&self.hc, nt, n, &mut self.scratch)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContactnessReport {
    pub passed: bool,
    pub max_residual: f64,
    pub worst_point: Option<Vec<f64>>,
    pub points_checked: usize,
}

pub fn contactness_check(map: &PolynomialContactMap, points: &[Vec<f64>], tol: f64) -> Result<ContactnessReport, MapError> {
    let mut max_residual = 0.0f64;
    let mut worst_point = None;
    for p in points {
        let full = riemannian_differential(map, p)?;
        let (res, _, _) = contact_residual(map, &full);
        if res > max_residual {
            max_residual = res;
            worst_point = Some(p.clone());
        }
    }
    Ok(ContactnessReport {
        passed: max_residual <= tol,
        max_residual,
        worst_point,
        points_checked: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::GradedNilpotentAlgebra;

    fn group(alg: GradedNilpotentAlgebra) -> Arc<CarnotGroup> {
        Arc::new(CarnotGroup::new(alg).unwrap())
    }

    fn h1_to_r(expr: &str) -> PolynomialContactMap {
        let h = group(GradedNilpotentAlgebra::heisenberg(1));
        let r = group(GradedNilpotentAlgebra::abelian(1));
        PolynomialContactMap::parse("phi", h, r, &[expr]).unwrap()
    }

    fn row(m: &DMatrix<f64>) -> Vec<f64> {
        m.iter().copied().collect()
    }

    #[test]
    fn h1_coordinate_functions() {
        let x1 = h1_to_r("u1");
        for p in [[0.0, 0.0, 0.0], [0.4, -1.2, 2.0]] {
            assert_eq!(row(&riemannian_differential(&x1, &p).unwrap()), vec![1.0, 0.0, 0.0]);
        }
        let x3 = h1_to_r("u3");
        assert_eq!(row(&riemannian_differential(&x3, &[0.0; 3]).unwrap()), vec![0.0, 0.0, 1.0]);
        assert_eq!(
            row(&riemannian_differential(&x3, &[1.0, 0.0, 0.0]).unwrap()),
            vec![0.0, 0.5, 1.0]
        );
    }

    #[test]
    fn blocks_follow_target_layers() {
        let x1 = h1_to_r("u1");
        let blocks = hc_differential(&x1, &[0.2, 0.3, 0.4]).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(row(&blocks[0]), vec![1.0, 0.0]);
        // ℝ has no second layer: 𝒱₂ is 0×1
        assert_eq!(blocks[1].shape(), (0, 1));
        let sq = h1_to_r("u1^2");
        let b = hc_differential(&sq, &[0.7, 0.0, 0.0]).unwrap();
        assert!((b[0][(0, 0)] - 1.4).abs() < 1e-15 && b[0][(0, 1)] == 0.0);
    }

    #[test]
    fn coordinate_projection_h2_to_h1_is_contact_only_at_the_origin() {
        let h2 = group(GradedNilpotentAlgebra::heisenberg(2));
        let h1 = group(GradedNilpotentAlgebra::heisenberg(1));
        // basis of H²: x1, x2, y1, y2, t
        let p = PolynomialContactMap::parse("proj", h2, h1, &["u1", "u3", "u5"]).unwrap();
        let at_origin = differential_pair(&p, &[0.0; 5]).unwrap();
        let selector = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(at_origin.blocks[0], selector);
        assert_eq!(row(&at_origin.blocks[1]), vec![1.0]);
        // [X₂, Y₂] = T is sent to 0 but T is not, so this is no homomorphism:
        // X₂ and Y₂ acquire vertical components away from the origin.
        assert!(matches!(
            differential_pair(&p, &[0.0, 0.0, 0.0, 1.0, 0.0]),
            Err(MapError::NotContact { row: 2, col: 1, .. })
        ));
    }

    #[test]
    fn homomorphism_differential_is_constant() {
        let h2 = group(GradedNilpotentAlgebra::heisenberg(2));
        let r2 = group(GradedNilpotentAlgebra::abelian(2));
        let p = PolynomialContactMap::parse("hom", h2, r2, &["u1 + 2*u4", "u2 - u3"]).unwrap();
        let first = differential_pair(&p, &[0.0; 5]).unwrap();
        for x in [[0.3, -1.0, 2.0, 0.5, -0.7], [1.0, 1.0, 1.0, 1.0, 1.0]] {
            let d = differential_pair(&p, &x).unwrap();
            assert!((&d.full - &first.full).amax() <= 1e-12);
        }
    }

    #[test]
    fn contactness() {
        let h = group(GradedNilpotentAlgebra::heisenberg(1));
        let id = PolynomialContactMap::parse("id", h.clone(), h.clone(), &["u1", "u2", "u3"]).unwrap();
        let pts = vec![vec![0.1, 0.2, 0.3], vec![-1.0, 2.0, 0.5]];
        let rep = contactness_check(&id, &pts, 1e-10).unwrap();
        assert!(rep.passed && rep.max_residual <= 1e-15);
        let swap = PolynomialContactMap::parse("swap", h.clone(), h, &["u3", "u2", "u1"]).unwrap();
        assert!(!contactness_check(&swap, &pts, 1e-10).unwrap().passed);
        assert!(matches!(
            differential_pair(&swap, &[0.0; 3]),
            Err(MapError::NotContact { .. })
        ));
    }

    #[test]
    fn evaluator_matches_matrix_route() {
        let h = group(GradedNilpotentAlgebra::heisenberg(1));
        let e = group(GradedNilpotentAlgebra::engel());
        let m = PolynomialContactMap::parse("m", e, h, &["u1", "u2", "u3 + u1*u2/2"]).unwrap();
        let mut ev = DifferentialEvaluator::new(&m);
        for x in [[0.3, -0.4, 0.8, 1.2], [-1.0, 0.5, 0.25, -0.75]] {
            ev.eval(&x);
            let full = riemannian_differential(&m, &x).unwrap();
            let rows: Vec<f64> = full.transpose().iter().copied().collect();
            for (a, b) in ev.full().iter().zip(&rows) {
                assert!((a - b).abs() < 1e-12);
            }
            let (_, hc) = graded_part(&m, &full);
            assert!((ev.gram_full() - gram_row(&full).unwrap()).abs() < 1e-12);
            assert!((ev.gram_hc() - gram_row(&hc).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_pullback_matches_coordinate_pushforward() {
        use rand::{Rng, SeedableRng};
        let e = group(GradedNilpotentAlgebra::engel());
        let h = group(GradedNilpotentAlgebra::heisenberg(1));
        let m = PolynomialContactMap::parse("m", e.clone(), h.clone(), &["u1", "u2", "u3 + u1*u2/2"]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // tangent vector Σ a_i X_i(x) in coordinates, pushed forward by Jφ
            let v = e.left_invariant_frame(&x) * nalgebra::DVector::from_vec(a.clone());
            let pushed = m.jacobian(&x) * v;
            let in_target_frame = h.left_invariant_frame(&m.evaluate(&x)).lu().solve(&pushed).unwrap();
            let via_full = riemannian_differential(&m, &x).unwrap() * nalgebra::DVector::from_vec(a);
            assert!((in_target_frame - via_full).amax() < 1e-10);
        }
    }

    #[test]
    fn construction_errors() {
        let h = group(GradedNilpotentAlgebra::heisenberg(1));
        let r = group(GradedNilpotentAlgebra::abelian(1));
        assert!(matches!(
            PolynomialContactMap::parse("bad", h.clone(), r.clone(), &["u1/u2"]),
            Err(MapError::Parse { index: 0, .. })
        ));
        assert!(matches!(
            PolynomialContactMap::parse("bad", h.clone(), r.clone(), &["u1", "u2"]),
            Err(MapError::ComponentCount { .. })
        ));
        assert!(matches!(
            PolynomialContactMap::parse("bad", r, h, &["u1", "u1", "u1"]),
            Err(MapError::DimensionOrder { .. })
        ));
    }

    #[test]
    fn translation_composes_with_group_law() {
        let m = h1_to_r("u3 + u1*u2");
        let c = [0.5, -0.25, 1.0];
        let t = m.translated(&c);
        let w = [0.3, 0.7, -0.2];
        let cw = m.source().product_vec(&c, &w);
        assert!((t.evaluate(&w)[0] - m.evaluate(&cw)[0]).abs() < 1e-14);
    }
}
