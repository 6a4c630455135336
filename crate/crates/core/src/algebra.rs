//! Graded nilpotent Lie algebras given by structure constants
//! `[X_i, X_j] = Σ_k c_ijk X_k`.
//!
//! Indices are 0-based in this API; configuration documents use 1-based
//! indices and are translated by [`crate::config`].

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::numerical_rank;

/// Absolute tolerance for antisymmetry and Jacobi residuals.
pub const STRUCTURE_TOL: f64 = 1e-12;

/// One structure-constant record `c_ijk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub c: f64,
}

impl BracketEntry {
    pub fn new(i: usize, j: usize, k: usize, c: f64) -> Self {
        Self { i, j, k, c }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("malformed dimension data: {0}")]
    MalformedDimensions(String),
    #[error("bracket index ({i},{j},{k}) outside 0..{n}")]
    IndexOutOfRange { i: usize, j: usize, k: usize, n: usize },
    #[error("non-finite structure constant at ({i},{j},{k})")]
    NonFinite { i: usize, j: usize, k: usize },
    #[error("invalid algebra: {0}")]
    Invalid(ValidationReport),
    #[error("inadmissible constants: {violation}")]
    Inadmissible { violation: Violation },
    #[error("nilpotentized constants fail the Jacobi identity (residual {residual:e})")]
    JacobiFailure { residual: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Antisymmetry {
        i: usize,
        j: usize,
        k: usize,
        residual: f64,
    },
    Grading {
        i: usize,
        j: usize,
        k: usize,
        value: f64,
    },
    Jacobi {
        i: usize,
        j: usize,
        l: usize,
        residual: f64,
    },
    /// Layer `layer + 1` is not spanned by brackets of layer 1 with layer `layer`.
    NotBracketGenerating {
        layer: usize,
        rank: usize,
        expected: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Antisymmetry { i, j, k, residual } => write!(
                f,
                "antisymmetry violated at ({},{},{}): |c_ijk + c_jik| = {residual:e}",
                i + 1,
                j + 1,
                k + 1
            ),
            Violation::Grading { i, j, k, value } => write!(
                f,
                "grading violated at ({},{},{}): c = {value} but deg_k != deg_i + deg_j",
                i + 1,
                j + 1,
                k + 1
            ),
            Violation::Jacobi { i, j, l, residual } => write!(
                f,
                "Jacobi identity violated for ({},{},{}): residual {residual:e}",
                i + 1,
                j + 1,
                l + 1
            ),
            Violation::NotBracketGenerating {
                layer,
                rank,
                expected,
            } => write!(
                f,
                "[V_1, V_{layer}] spans rank {rank} of layer {} (dimension {expected})",
                layer + 1
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// A graded nilpotent Lie algebra in a basis adapted to its layers.
///
/// Constants are held canonically with `i < j`; the other half follows from
/// antisymmetry. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedNilpotentAlgebra {
    name: String,
    layer_dims: Vec<usize>,
    degrees: Vec<u32>,
    constants: BTreeMap<(usize, usize, usize), f64>,
}

fn degrees_from_layers(layer_dims: &[usize]) -> Vec<u32> {
    layer_dims
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| std::iter::repeat_n(k as u32 + 1, n))
        .collect()
}

fn check_layer_dims(layer_dims: &[usize]) -> Result<(), AlgebraError> {
    if layer_dims.is_empty() {
        return Err(AlgebraError::MalformedDimensions("no layers given".into()));
    }
    if let Some(k) = layer_dims.iter().position(|&n| n == 0) {
        return Err(AlgebraError::MalformedDimensions(format!(
            "layer {} has dimension 0",
            k + 1
        )));
    }
    Ok(())
}

/// Layer dimensions implied by a degree sequence; rejects decreasing or gappy
/// sequences.
pub fn layers_from_degrees(degrees: &[u32]) -> Result<Vec<usize>, AlgebraError> {
    if degrees.is_empty() {
        return Err(AlgebraError::MalformedDimensions("empty degree sequence".into()));
    }
    if degrees[0] != 1 {
        return Err(AlgebraError::MalformedDimensions(
            "the first basis vector must have degree 1".into(),
        ));
    }
    let mut dims = vec![0usize];
    let mut prev = 1;
    for (idx, &d) in degrees.iter().enumerate() {
        if d < prev {
            return Err(AlgebraError::MalformedDimensions(format!(
                "degrees must be nondecreasing; deg_{} = {d} < {prev}",
                idx + 1
            )));
        }
        if d > prev + 1 {
            return Err(AlgebraError::MalformedDimensions(format!(
                "degree sequence skips layer {}",
                prev + 1
            )));
        }
        if d == prev + 1 {
            dims.push(0);
            prev = d;
        }
        *dims.last_mut().unwrap() += 1;
    }
    Ok(dims)
}

/// Checks raw, possibly redundant, constants against every invariant.
///
/// Both `(i,j,k)` and `(j,i,k)` may be supplied; they must cancel. Explicit
/// entries with `i == j` must be zero.
pub fn validate_definition(
    layer_dims: &[usize],
    entries: &[BracketEntry],
) -> Result<ValidationReport, AlgebraError> {
    check_layer_dims(layer_dims)?;
    let degrees = degrees_from_layers(layer_dims);
    let n = degrees.len();
    let mut raw: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for e in entries {
        if e.i >= n || e.j >= n || e.k >= n {
            return Err(AlgebraError::IndexOutOfRange {
                i: e.i,
                j: e.j,
                k: e.k,
                n,
            });
        }
        if !e.c.is_finite() {
            return Err(AlgebraError::NonFinite {
                i: e.i,
                j: e.j,
                k: e.k,
            });
        }
        *raw.entry((e.i, e.j, e.k)).or_insert(0.0) += e.c;
    }
    let mut report = ValidationReport::default();
    let mut canonical = BTreeMap::new();
    for (&(i, j, k), &c) in &raw {
        if i == j {
            if c.abs() > STRUCTURE_TOL {
                report.violations.push(Violation::Antisymmetry {
                    i,
                    j,
                    k,
                    residual: 2.0 * c.abs(),
                });
            }
            continue;
        }
        if let Some(&mirror) = raw.get(&(j, i, k)) {
            if i < j && (c + mirror).abs() > STRUCTURE_TOL {
                report.violations.push(Violation::Antisymmetry {
                    i,
                    j,
                    k,
                    residual: (c + mirror).abs(),
                });
            }
        }
        let (a, b, s) = if i < j { (i, j, c) } else { (j, i, -c) };
        // when both halves are present the canonical one wins
        if i < j || !raw.contains_key(&(j, i, k)) {
            canonical.insert((a, b, k), s);
        }
    }
    let alg = GradedNilpotentAlgebra {
        name: String::new(),
        layer_dims: layer_dims.to_vec(),
        degrees,
        constants: canonical.into_iter().filter(|(_, c)| *c != 0.0).collect(),
    };
    report.violations.extend(alg.validate().violations);
    Ok(report)
}

impl GradedNilpotentAlgebra {
    /// Builds and validates an algebra; any violation is an error.
    pub fn new(
        name: impl Into<String>,
        layer_dims: &[usize],
        entries: &[BracketEntry],
    ) -> Result<Self, AlgebraError> {
        let report = validate_definition(layer_dims, entries)?;
        if !report.is_valid() {
            return Err(AlgebraError::Invalid(report));
        }
        let mut constants = BTreeMap::new();
        for e in entries {
            if e.i == e.j {
                continue;
            }
            let (a, b, s) = if e.i < e.j {
                (e.i, e.j, e.c)
            } else {
                (e.j, e.i, -e.c)
            };
            constants.insert((a, b, e.k), s);
        }
        constants.retain(|_, c| *c != 0.0);
        Ok(Self {
            name: name.into(),
            layer_dims: layer_dims.to_vec(),
            degrees: degrees_from_layers(layer_dims),
            constants,
        })
    }

    /// Commutative algebra `ℝ^n` (depth 1).
    pub fn abelian(n: usize) -> Self {
        Self::new(format!("R{n}"), &[n], &[]).expect("abelian algebra is valid")
    }

    /// Heisenberg algebra `H^n`: basis `x_1..x_n, y_1..y_n, t` with
    /// `[x_a, y_a] = t`.
    pub fn heisenberg(n: usize) -> Self {
        let t = 2 * n;
        let entries: Vec<BracketEntry> = (0..n).map(|a| BracketEntry::new(a, n + a, t, 1.0)).collect();
        Self::new(format!("H{n}"), &[2 * n, 1], &entries).expect("Heisenberg algebra is valid")
    }

    /// Engel algebra: `[X1,X2] = X3`, `[X1,X3] = X4`.
    pub fn engel() -> Self {
        Self::new(
            "Engel",
            &[2, 1, 1],
            &[BracketEntry::new(0, 1, 2, 1.0), BracketEntry::new(0, 2, 3, 1.0)],
        )
        .expect("Engel algebra is valid")
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Topological dimension `N`.
    pub fn dim(&self) -> usize {
        self.degrees.len()
    }

    /// Depth `M`.
    pub fn depth(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn degree(&self, i: usize) -> u32 {
        self.degrees[i]
    }

    /// Basis indices of layer `k` (1-based layer number).
    pub fn layer_range(&self, k: usize) -> std::ops::Range<usize> {
        let start: usize = self.layer_dims[..k - 1].iter().sum();
        start..start + self.layer_dims[k - 1]
    }

    /// Hausdorff dimension `ν = Σ_k k n_k`.
    pub fn hausdorff_dimension(&self) -> u32 {
        self.layer_dims
            .iter()
            .enumerate()
            .map(|(k, &n)| (k as u32 + 1) * n as u32)
            .sum()
    }

    /// `ν` again, summed over the degree sequence.
    pub fn hausdorff_dimension_from_degrees(&self) -> u32 {
        self.degrees.iter().sum()
    }

    /// Canonical constants `(i, j, k) -> c_ijk` with `i < j`.
    pub fn constants(&self) -> &BTreeMap<(usize, usize, usize), f64> {
        &self.constants
    }

    /// `c_ijk` for any index order.
    pub fn structure_constant(&self, i: usize, j: usize, k: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.constants.get(&(i, j, k)).copied().unwrap_or(0.0),
            std::cmp::Ordering::Greater => -self.constants.get(&(j, i, k)).copied().unwrap_or(0.0),
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    /// All nonzero constants in both index orders.
    pub fn entries(&self) -> impl Iterator<Item = BracketEntry> + '_ {
        self.constants.iter().flat_map(|(&(i, j, k), &c)| {
            [BracketEntry::new(i, j, k, c), BracketEntry::new(j, i, k, -c)]
        })
    }

    pub fn is_abelian(&self) -> bool {
        self.constants.is_empty()
    }

    /// Lie bracket of two coefficient vectors.
    pub fn bracket(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        assert_eq!(y.len(), self.dim(), "dimension mismatch");
        let mut out = vec![0.0; self.dim()];
        for (&(i, j, k), &c) in &self.constants {
            out[k] += c * (x[i] * y[j] - x[j] * y[i]);
        }
        out
    }

    /// Homogeneous norm `Σ_i μ_i deg_i` of a multi-index.
    pub fn homogeneous_multiindex_norm(&self, mu: &[u32]) -> u32 {
        assert_eq!(mu.len(), self.dim(), "dimension mismatch");
        mu.iter().zip(&self.degrees).map(|(m, d)| m * d).sum()
    }

    /// Grading, Jacobi and bracket-generation checks.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let n = self.dim();
        for (&(i, j, k), &c) in &self.constants {
            if self.degrees[k] != self.degrees[i] + self.degrees[j] && c.abs() > STRUCTURE_TOL {
                report.violations.push(Violation::Grading { i, j, k, value: c });
            }
        }
        let basis = |i: usize| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v
        };
        for i in 0..n {
            for j in i + 1..n {
                for l in j + 1..n {
                    let (ei, ej, el) = (basis(i), basis(j), basis(l));
                    let a = self.bracket(&ei, &self.bracket(&ej, &el));
                    let b = self.bracket(&ej, &self.bracket(&el, &ei));
                    let c = self.bracket(&el, &self.bracket(&ei, &ej));
                    let residual = (0..n).map(|m| (a[m] + b[m] + c[m]).abs()).fold(0.0, f64::max);
                    if residual > STRUCTURE_TOL {
                        report.violations.push(Violation::Jacobi { i, j, l, residual });
                    }
                }
            }
        }
        for layer in 1..self.depth() {
            let next = self.layer_range(layer + 1);
            let mut cols = Vec::new();
            for a in self.layer_range(1) {
                for b in self.layer_range(layer) {
                    let v = self.bracket(&basis(a), &basis(b));
                    cols.push(next.clone().map(|m| v[m]).collect::<Vec<_>>());
                }
            }
            let m = DMatrix::from_fn(next.len(), cols.len(), |r, c| cols[c][r]);
            let rank = numerical_rank(&m);
            if rank < next.len() {
                report.violations.push(Violation::NotBracketGenerating {
                    layer,
                    rank,
                    expected: next.len(),
                });
            }
        }
        report
    }
}

/// Projects raw constants onto their graded part: keeps `c_ijk` when
/// `deg_k = deg_i + deg_j`, zeroes it otherwise.
pub fn nilpotentize(
    raw: &BTreeMap<(usize, usize, usize), f64>,
    degrees: &[u32],
) -> Result<GradedNilpotentAlgebra, AlgebraError> {
    let layer_dims = layers_from_degrees(degrees)?;
    let n = degrees.len();
    for (&(i, j, k), &c) in raw {
        if i >= n || j >= n || k >= n {
            return Err(AlgebraError::IndexOutOfRange { i, j, k, n });
        }
        let mirror = if i == j { c } else { raw.get(&(j, i, k)).map_or(-c, |&m| m) };
        if (c + mirror).abs() > STRUCTURE_TOL {
            return Err(AlgebraError::Inadmissible {
                violation: Violation::Antisymmetry {
                    i,
                    j,
                    k,
                    residual: (c + mirror).abs(),
                },
            });
        }
        if degrees[k] > degrees[i] + degrees[j] && c.abs() > STRUCTURE_TOL {
            return Err(AlgebraError::Inadmissible {
                violation: Violation::Grading { i, j, k, value: c },
            });
        }
    }
    let mut constants = BTreeMap::new();
    for (&(i, j, k), &c) in raw {
        if i < j && degrees[k] == degrees[i] + degrees[j] && c != 0.0 {
            constants.insert((i, j, k), c);
        } else if i > j && degrees[k] == degrees[i] + degrees[j] && c != 0.0 && !raw.contains_key(&(j, i, k)) {
            constants.insert((j, i, k), -c);
        }
    }
    let alg = GradedNilpotentAlgebra {
        name: String::new(),
        layer_dims,
        degrees: degrees.to_vec(),
        constants,
    };
    let report = alg.validate();
    let jacobi = report
        .violations
        .iter()
        .filter_map(|v| match v {
            Violation::Jacobi { residual, .. } => Some(*residual),
            _ => None,
        })
        .fold(0.0, f64::max);
    if jacobi > 0.0 {
        return Err(AlgebraError::JacobiFailure { residual: jacobi });
    }
    if !report.is_valid() {
        return Err(AlgebraError::Invalid(report));
    }
    Ok(alg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heisenberg_is_valid() {
        let report = validate_definition(
            &[2, 1],
            &[BracketEntry::new(0, 1, 2, 1.0), BracketEntry::new(1, 0, 2, -1.0)],
        )
        .unwrap();
        assert!(report.is_valid(), "{report}");
        let h = GradedNilpotentAlgebra::heisenberg(1);
        assert_eq!(h.bracket(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), vec![0.0, 0.0, 1.0]);
        assert_eq!(h.hausdorff_dimension(), 4);
    }

    #[test]
    fn abelian_is_valid() {
        let report = validate_definition(&[3], &[]).unwrap();
        assert!(report.is_valid());
        assert!(GradedNilpotentAlgebra::abelian(3).is_abelian());
    }

    #[test]
    fn antisymmetry_violation_reported_with_indices() {
        let report = validate_definition(
            &[2, 1],
            &[BracketEntry::new(0, 1, 2, 1.0), BracketEntry::new(1, 0, 2, 0.0)],
        )
        .unwrap();
        assert!(matches!(
            report.violations[0],
            Violation::Antisymmetry { i: 0, j: 1, k: 2, .. }
        ));
        assert!(report.to_string().contains("(1,2,3)"));
    }

    #[test]
    fn diagonal_bracket_must_vanish() {
        let report = validate_definition(&[2, 1], &[BracketEntry::new(0, 0, 2, 1.0)]).unwrap();
        assert!(!report.is_valid());
    }

    #[test]
    fn grading_and_generation_violations() {
        // [X1, X2] = X1 breaks the grading; layer 2 is then not generated
        let report = validate_definition(&[2, 1], &[BracketEntry::new(0, 1, 0, 1.0)]).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Grading { .. })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NotBracketGenerating { layer: 1, .. })));
    }

    #[test]
    fn malformed_dimensions_rejected() {
        assert!(matches!(
            validate_definition(&[], &[]),
            Err(AlgebraError::MalformedDimensions(_))
        ));
        assert!(matches!(
            validate_definition(&[2, 0, 1], &[]),
            Err(AlgebraError::MalformedDimensions(_))
        ));
        assert!(matches!(
            validate_definition(&[2, 1], &[BracketEntry::new(0, 1, 5, 1.0)]),
            Err(AlgebraError::IndexOutOfRange { .. })
        ));
        assert!(layers_from_degrees(&[1, 2, 1]).is_err());
        assert!(layers_from_degrees(&[1, 3]).is_err());
        assert_eq!(layers_from_degrees(&[1, 1, 2, 3]).unwrap(), vec![2, 1, 1]);
    }

    #[test]
    fn nilpotentize_drops_lower_order_terms() {
        let mut raw = BTreeMap::new();
        raw.insert((0, 1, 2), 1.0);
        raw.insert((1, 0, 2), -1.0);
        raw.insert((0, 1, 0), 0.5);
        raw.insert((1, 0, 0), -0.5);
        let alg = nilpotentize(&raw, &[1, 1, 2]).unwrap();
        assert_eq!(alg.structure_constant(0, 1, 0), 0.0);
        assert_eq!(alg.structure_constant(0, 1, 2), 1.0);
        assert_eq!(alg.structure_constant(1, 0, 2), -1.0);
        assert!(alg.validate().is_valid());
    }

    #[test]
    fn nilpotentize_fixed_point_and_zero() {
        let h = GradedNilpotentAlgebra::heisenberg(1);
        let alg = nilpotentize(h.constants(), h.degrees()).unwrap();
        assert_eq!(alg.constants(), h.constants());
        let zero = nilpotentize(&BTreeMap::new(), &[1, 1, 1]).unwrap();
        assert!(zero.is_abelian());
    }

    #[test]
    fn nilpotentize_rejects_inadmissible_input() {
        let mut raw = BTreeMap::new();
        raw.insert((0, 1, 2), 1.0);
        raw.insert((1, 0, 2), 1.0);
        assert!(matches!(
            nilpotentize(&raw, &[1, 1, 2]),
            Err(AlgebraError::Inadmissible { .. })
        ));
    }

    #[test]
    fn nilpotentize_reports_jacobi_residual() {
        // layers (3,3,1): [X1,X2]=Y3, [X2,X3]=Y1, [X3,X1]=Y2, [X1,Y1]=Z.
        // The cyclic sum for (X1,X2,X3) is [X1,Y1] = Z, so Jacobi fails by 1.
        let mut raw = BTreeMap::new();
        raw.insert((0, 1, 5), 1.0);
        raw.insert((1, 2, 3), 1.0);
        raw.insert((2, 0, 4), 1.0);
        raw.insert((0, 3, 6), 1.0);
        match nilpotentize(&raw, &[1, 1, 1, 2, 2, 2, 3]) {
            Err(AlgebraError::JacobiFailure { residual }) => assert!((residual - 1.0).abs() < 1e-15),
            other => panic!("expected Jacobi failure, got {other:?}"),
        }
    }

    #[test]
    fn multiindex_norms() {
        let h = GradedNilpotentAlgebra::heisenberg(1);
        assert_eq!(h.homogeneous_multiindex_norm(&[1, 1, 0]), 2);
        assert_eq!(h.homogeneous_multiindex_norm(&[0, 0, 2]), 4);
        let e = GradedNilpotentAlgebra::engel();
        assert_eq!(e.homogeneous_multiindex_norm(&[1, 0, 0, 1]), 4);
        assert_eq!(e.bracket(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn hausdorff_dimension_two_ways() {
        for alg in [
            GradedNilpotentAlgebra::heisenberg(2),
            GradedNilpotentAlgebra::engel(),
            GradedNilpotentAlgebra::abelian(4),
        ] {
            assert_eq!(alg.hausdorff_dimension(), alg.hausdorff_dimension_from_degrees());
        }
        assert_eq!(GradedNilpotentAlgebra::engel().hausdorff_dimension(), 7);
    }
}
