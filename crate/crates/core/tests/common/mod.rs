//! Independent oracles shared by integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use carnot_core::config::{load_config, RunConfig};
use nalgebra::Matrix4;
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    load_config(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn uniform_point(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-half_width..half_width)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `ω_m` as `(q, p)` with `ω_m = q·π^p`, from `ω_0 = 1`, `ω_1 = 2` and
/// `ω_m = (2π/m)·ω_{m−2}`.
pub fn omega_by_recurrence(m: u32) -> (BigRational, i64) {
    if m == 0 {
        return (BigRational::from_integer(1.into()), 0);
    }
    if m == 1 {
        return (BigRational::from_integer(2.into()), 0);
    }
    let (q, p) = omega_by_recurrence(m - 2);
    (q * BigRational::new(BigInt::from(2), BigInt::from(m)), p + 1)
}

/// Product of `ω_m^{e}` over `(m, e)` pairs.
pub fn omega_monomial(factors: &[(u32, i32)]) -> (BigRational, i64) {
    let mut q = BigRational::from_integer(1.into());
    let mut p = 0i64;
    for &(m, e) in factors {
        let (qm, pm) = omega_by_recurrence(m);
        for _ in 0..e.abs() {
            if e > 0 {
                q *= &qm;
                p += pm;
            } else {
                q /= &qm;
                p -= pm;
            }
        }
    }
    (q, p)
}

/// H¹ in first-kind coordinates through the unipotent 3×3 representation
/// `(a, b, c) ↦ exp([[0,a,c],[0,0,b],[0,0,0]]) = [[1,a,c+ab/2],[0,1,b],[0,0,1]]`.
pub fn heisenberg_matrix_product(x: &[f64], y: &[f64]) -> Vec<f64> {
    let m = |v: &[f64]| [[1.0, v[0], v[2] + v[0] * v[1] / 2.0], [0.0, 1.0, v[1]], [0.0, 0.0, 1.0]];
    let (a, b) = (m(x), m(y));
    let mut p = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            p[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    let (u, v) = (p[0][1], p[1][2]);
    vec![u, v, p[0][2] - u * v / 2.0]
}

/// Engel algebra as 4×4 nilpotent matrices:
/// `X1 = E12 + E23 + E34`, `X2 = E34`, `X3 = E24`, `X4 = E14`.
fn engel_matrix(v: &[f64]) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m[(0, 1)] = v[0];
    m[(1, 2)] = v[0];
    m[(2, 3)] = v[0] + v[1];
    m[(1, 3)] = v[2];
    m[(0, 3)] = v[3];
    m
}

fn engel_coords(m: &Matrix4<f64>) -> Vec<f64> {
    let a = m[(0, 1)];
    vec![a, m[(2, 3)] - a, m[(1, 3)], m[(0, 3)]]
}

/// Strictly upper triangular 4×4 matrices satisfy `A⁴ = 0`.
fn nilpotent_exp(a: &Matrix4<f64>) -> Matrix4<f64> {
    let a2 = a * a;
    let a3 = a2 * a;
    Matrix4::identity() + a + a2 / 2.0 + a3 / 6.0
}

fn unipotent_log(m: &Matrix4<f64>) -> Matrix4<f64> {
    let n = m - Matrix4::identity();
    let n2 = n * n;
    let n3 = n2 * n;
    n - n2 / 2.0 + n3 / 3.0
}

/// Engel product by flowing the left-invariant field of `y` from `exp(x)`:
/// `M' = M·Y`, `M(0) = exp(x)`, integrated with classical RK4 over `[0, 1]`,
/// then read back through the matrix logarithm.
pub fn engel_flow_product(x: &[f64], y: &[f64], steps: usize) -> Vec<f64> {
    let ym = engel_matrix(y);
    let mut m = nilpotent_exp(&engel_matrix(x));
    let h = 1.0 / steps as f64;
    for _ in 0..steps {
        let k1 = m * ym;
        let k2 = (m + k1 * (h / 2.0)) * ym;
        let k3 = (m + k2 * (h / 2.0)) * ym;
        let k4 = (m + k3 * h) * ym;
        m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    engel_coords(&unipotent_log(&m))
}

/// Brackets of the 4×4 representation, read back as coordinates.
pub fn engel_matrix_bracket(x: &[f64], y: &[f64]) -> Vec<f64> {
    let (a, b) = (engel_matrix(x), engel_matrix(y));
    engel_coords(&(a * b - b * a))
}
