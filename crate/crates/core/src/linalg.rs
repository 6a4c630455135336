//! Small dense linear-algebra helpers: thresholded ranks, Gram determinants,
//! maximal-minor column selection.

use nalgebra::DMatrix;

/// Relative singular-value threshold shared by every rank decision.
pub const RANK_RTOL: f64 = 1e-8;

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Number of singular values strictly above `threshold`.
pub fn rank_above(a: &DMatrix<f64>, threshold: f64) -> usize {
    singular_values(a).into_iter().filter(|&s| s > threshold).count()
}

/// Rank with the relative threshold `RANK_RTOL * σ_max`.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let s = singular_values(a);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&x| x > RANK_RTOL * smax).count(),
        _ => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum GramError {
    #[error("gram_row needs rows <= cols, got {rows}x{cols}")]
    RowShape { rows: usize, cols: usize },
    #[error("gram_col needs cols <= rows, got {rows}x{cols}")]
    ColShape { rows: usize, cols: usize },
}

/// `sqrt(det(A Aᵀ))` for a `p×q` matrix with `p <= q`.
pub fn gram_row(a: &DMatrix<f64>) -> Result<f64, GramError> {
    if a.nrows() > a.ncols() {
        return Err(GramError::RowShape {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(sqrt_det_psd(&(a * a.transpose())))
}

/// `sqrt(det(Bᵀ B))` for a `p×q` matrix with `q <= p`.
pub fn gram_col(b: &DMatrix<f64>) -> Result<f64, GramError> {
    if b.ncols() > b.nrows() {
        return Err(GramError::ColShape {
            rows: b.nrows(),
            cols: b.ncols(),
        });
    }
    Ok(sqrt_det_psd(&(b.transpose() * b)))
}

fn sqrt_det_psd(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let det = match m.nrows() {
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => m.clone().determinant(),
    };
    det.max(0.0).sqrt()
}

/// Iterates all `k`-subsets of `0..n` in lexicographic order.
pub fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize]) -> bool) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if !f(&idx) {
            return;
        }
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

pub fn select_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])])
}

/// Chooses `a.nrows()` columns maximizing `|det|` of the square minor after
/// scaling column `j` by `col_scale[j]`. Returns `None` when every minor
/// vanishes.
pub fn maximal_minor_columns(a: &DMatrix<f64>, col_scale: &[f64]) -> Option<Vec<usize>> {
    let rows = a.nrows();
    let scaled = DMatrix::from_fn(rows, a.ncols(), |r, c| a[(r, c)] * col_scale[c]);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_subset(a.ncols(), rows, |cols| {
        let m = select_columns(&scaled, cols);
        let d = if rows == 0 { 1.0 } else { m.determinant().abs() };
        if d > 0.0 && best.as_ref().is_none_or(|(b, _)| d > *b) {
            best = Some((d, cols.to_vec()));
        }
        true
    });
    best.map(|(_, c)| c)
}

/// Solves `F y = b` in place for a row-major unit lower-triangular `F`.
#[inline]
pub fn solve_unit_lower(f: &[f64], n: usize, b: &mut [f64]) {
    for k in 0..n {
        let mut v = b[k];
        for i in 0..k {
            v -= f[k * n + i] * b[i];
        }
        b[k] = v;
    }
}

/// Determinant of a row-major `n×n` matrix by Gaussian elimination with
/// partial pivoting; `a` is overwritten.
pub fn det_in_place(a: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs()))
            .unwrap_or(c);
        if a[p * n + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for j in 0..n {
                a.swap(p * n + j, c * n + j);
            }
            det = -det;
        }
        let piv = a[c * n + c];
        det *= piv;
        for r in c + 1..n {
            let f = a[r * n + c] / piv;
            if f != 0.0 {
                for j in c..n {
                    a[r * n + j] -= f * a[c * n + j];
                }
            }
        }
    }
    det
}

/// Solves `A X = B` in place (`A` row-major `n×n`, `B` row-major `n×m`).
/// Returns false when `A` is exactly singular.
pub fn solve_in_place(a: &mut [f64], n: usize, b: &mut [f64], m: usize) -> bool {
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs()))
            .unwrap_or(c);
        if a[p * n + c] == 0.0 {
            return false;
        }
        if p != c {
            for j in 0..n {
                a.swap(p * n + j, c * n + j);
            }
            for j in 0..m {
                b.swap(p * m + j, c * m + j);
            }
        }
        let piv = a[c * n + c];
        for r in 0..n {
            if r == c {
                continue;
            }
            let f = a[r * n + c] / piv;
            if f != 0.0 {
                for j in c..n {
                    a[r * n + j] -= f * a[c * n + j];
                }
                for j in 0..m {
                    b[r * m + j] -= f * b[c * m + j];
                }
            }
        }
    }
    for r in 0..n {
        let piv = a[r * n + r];
        for j in 0..m {
            b[r * m + j] /= piv;
        }
    }
    true
}

/// `sqrt(det(A Aᵀ))` for row-major `p×q` `A`, `p <= q`, using `scratch` of
/// length `p²`.
pub fn gram_row_slice(a: &[f64], p: usize, q: usize, scratch: &mut [f64]) -> f64 {
    for i in 0..p {
        for j in 0..=i {
            let v: f64 = (0..q).map(|k| a[i * q + k] * a[j * q + k]).sum();
            scratch[i * p + j] = v;
            scratch[j * p + i] = v;
        }
    }
    match p {
        0 => 1.0,
        1 => scratch[0].max(0.0).sqrt(),
        _ => det_in_place(&mut scratch[..p * p], p).max(0.0).sqrt(),
    }
}

/// `sqrt(det(Bᵀ B))` for row-major `p×q` `B`, `q <= p`, using `scratch` of
/// length `q²`.
pub fn gram_col_slice(b: &[f64], p: usize, q: usize, scratch: &mut [f64]) -> f64 {
    for i in 0..q {
        for j in 0..=i {
            let v: f64 = (0..p).map(|k| b[k * q + i] * b[k * q + j]).sum();
            scratch[i * q + j] = v;
            scratch[j * q + i] = v;
        }
    }
    match q {
        0 => 1.0,
        1 => scratch[0].max(0.0).sqrt(),
        _ => det_in_place(&mut scratch[..q * q], q).max(0.0).sqrt(),
    }
}

/// Neumaier-compensated running sum; deterministic for a fixed input order.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_examples() {
        assert_eq!(gram_row(&DMatrix::identity(2, 2)).unwrap(), 1.0);
        let row = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        assert_eq!(gram_row(&row).unwrap(), 1.0);
        let dup = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(gram_row(&dup).unwrap(), 0.0);
        assert!(gram_row(&DMatrix::<f64>::zeros(3, 2)).is_err());
        assert!(gram_col(&DMatrix::<f64>::zeros(2, 3)).is_err());
        let col = DMatrix::from_column_slice(3, 1, &[3.0, 4.0, 0.0]);
        assert!((gram_col(&col).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn subsets_enumerate_binomially() {
        for n in 0..7 {
            for k in 0..=n {
                let mut count = 0u128;
                let mut last: Option<Vec<usize>> = None;
                for_each_subset(n, k, |s| {
                    if let Some(l) = &last {
                        assert!(l.as_slice() < s);
                    }
                    last = Some(s.to_vec());
                    count += 1;
                    true
                });
                assert_eq!(count, binomial(n, k), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn rank_threshold() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-12]);
        assert_eq!(numerical_rank(&a), 1);
        assert_eq!(numerical_rank(&DMatrix::<f64>::zeros(2, 2)), 0);
    }

    #[test]
    fn slice_helpers_match_nalgebra() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, 4.0, 1.0, -3.0, 0.0, 2.0, 1.0]);
        let mut buf: Vec<f64> = a.transpose().iter().copied().collect();
        assert!((det_in_place(&mut buf, 3) - a.determinant()).abs() < 1e-12);

        let mut lhs: Vec<f64> = a.transpose().iter().copied().collect();
        let mut rhs = vec![1.0, 0.0, 2.0];
        assert!(solve_in_place(&mut lhs, 3, &mut rhs, 1));
        let x = nalgebra::DVector::from_vec(rhs);
        assert!((&a * x - nalgebra::DVector::from_vec(vec![1.0, 0.0, 2.0])).amax() < 1e-12);

        let b = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let row: Vec<f64> = b.transpose().iter().copied().collect();
        let mut s = vec![0.0; 9];
        assert!((gram_row_slice(&row, 2, 3, &mut s) - gram_row(&b).unwrap()).abs() < 1e-12);
        let bt = b.transpose();
        let col: Vec<f64> = bt.transpose().iter().copied().collect();
        assert!((gram_col_slice(&col, 3, 2, &mut s) - gram_col(&bt).unwrap()).abs() < 1e-12);

        let f = [1.0, 0.0, 0.0, 0.5, 1.0, 0.0, -2.0, 3.0, 1.0];
        let mut y = vec![1.0, 1.0, 1.0];
        solve_unit_lower(&f, 3, &mut y);
        assert_eq!(y, vec![1.0, 0.5, 1.5]);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::new();
        s.add(1e16);
        for _ in 0..10 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 10.0);
    }
}
