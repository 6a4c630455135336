//! Midpoint-rule quadrature on axis-aligned boxes with grid doubling.
//!
//! Integrands here carry ball indicators, which defeat high-order rules; the
//! midpoint rule refined until successive estimates settle is robust.

use rayon::prelude::*;
use serde::Serialize;

use crate::linalg::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureSettings {
    /// Stop once successive estimates differ by less than this fraction.
    pub rel_tol: f64,
    /// Largest admissible total node count.
    pub max_nodes: u64,
    /// Nodes per axis on the first level.
    pub start: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            rel_tol: 5e-3,
            max_nodes: 1 << 24,
            start: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureResult {
    pub value: f64,
    /// Larger of the last two changes between levels.
    pub error: f64,
    pub nodes_per_axis: usize,
    pub nodes: u64,
    pub converged: bool,
    pub history: Vec<(usize, f64)>,
}

/// Runs `eval(n)` for `n = start, 2·start, …` while `n^dims <= max_nodes`,
/// stopping once two successive relative changes are below `rel_tol`.
/// Integrands with indicator factors can repeat a value by coincidence, so a
/// single small change is not trusted.
pub fn refine<E>(
    dims: usize,
    settings: &QuadratureSettings,
    mut eval: impl FnMut(usize) -> Result<f64, E>,
) -> Result<QuadratureResult, E> {
    let mut n = settings.start.max(1);
    let mut history: Vec<(usize, f64)> = Vec::new();
    loop {
        let value = eval(n)?;
        history.push((n, value));
        if let [.., (_, older), (_, prev), (_, cur)] = history.as_slice() {
            let settled = |a: f64, b: f64| (a - b).abs() <= settings.rel_tol * cur.abs() || (a == 0.0 && b == 0.0);
            if settled(*cur, *prev) && settled(*prev, *older) {
                return Ok(finish(history, dims, true));
            }
        }
        let next = next_level(n);
        if dims > 0 && (next as u64).checked_pow(dims as u32).is_none_or(|c| c > settings.max_nodes) {
            return Ok(finish(history, dims, false));
        }
        if dims == 0 {
            return Ok(finish(history, dims, true));
        }
        n = next;
    }
}

/// Successor in the level sequence 1, 2, 3, 4, 6, 8, 12, 16, 24, …: powers of
/// two and three times powers of two, so a cap admits several levels even in
/// five dimensions. Other counts double.
pub fn next_level(n: usize) -> usize {
    if n <= 2 {
        n + 1
    } else if n.is_power_of_two() {
        n + n / 2
    } else if n % 3 == 0 && (n / 3).is_power_of_two() {
        n / 3 * 4
    } else {
        2 * n
    }
}

fn finish(history: Vec<(usize, f64)>, dims: usize, converged: bool) -> QuadratureResult {
    let (n, value) = *history.last().expect("at least one level");
    let len = history.len();
    let error = match len {
        1 => value.abs(),
        2 => (value - history[0].1).abs(),
        _ => (value - history[len - 2].1).abs().max((history[len - 2].1 - history[len - 3].1).abs()),
    };
    QuadratureResult {
        value,
        error,
        nodes_per_axis: n,
        nodes: (n as u64).pow(dims as u32),
        converged,
        history,
    }
}

/// Uniform midpoint grid with `n` cells per axis on `∏ [lo_i, hi_i]`.
#[derive(Debug, Clone)]
pub struct MidpointGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: usize,
}

impl MidpointGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n: usize) -> Self {
        assert_eq!(lo.len(), hi.len());
        Self { lo, hi, n }
    }

    /// Symmetric box `∏ [-b_i, b_i]`.
    pub fn symmetric(bounds: &[f64], n: usize) -> Self {
        Self::new(bounds.iter().map(|b| -b).collect(), bounds.to_vec(), n)
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dims()).map(|i| self.spacing(i)).product()
    }

    #[inline]
    pub fn coordinate(&self, axis: usize, j: usize) -> f64 {
        self.lo[axis] + (j as f64 + 0.5) * self.spacing(axis)
    }

    /// Compensated sum of `f(node)` times the cell volume. Work is split by
    /// the first axis; partial sums are combined in index order, so the result
    /// does not depend on the thread count.
    pub fn integrate<S: Send>(
        &self,
        init: impl Fn() -> S + Sync,
        f: impl Fn(&mut S, &[f64]) -> f64 + Sync,
    ) -> f64 {
        let d = self.dims();
        if d == 0 {
            let mut s = init();
            return f(&mut s, &[]);
        }
        let partials: Vec<f64> = (0..self.n)
            .into_par_iter()
            .map(|j0| {
                let mut state = init();
                let mut acc = CompensatedSum::new();
                let mut idx = vec![0usize; d];
                idx[0] = j0;
                let mut x: Vec<f64> = (0..d).map(|a| self.coordinate(a, idx[a])).collect();
                loop {
                    acc.add(f(&mut state, &x));
                    // odometer over axes 1..d, last axis fastest
                    let mut a = d - 1;
                    loop {
                        if a == 0 {
                            return acc.value();
                        }
                        idx[a] += 1;
                        if idx[a] < self.n {
                            x[a] = self.coordinate(a, idx[a]);
                            break;
                        }
                        idx[a] = 0;
                        x[a] = self.coordinate(a, 0);
                        a -= 1;
                    }
                }
            })
            .collect();
        let mut total = CompensatedSum::new();
        for p in partials {
            total.add(p);
        }
        total.value() * self.cell_volume()
    }
}

/// Fractions of the left and right half of each midpoint cell on a line
/// where all `m` constraints hold.
///
/// `g[j * m + c]` is constraint `c` at the `j`-th cell midpoint: a smooth
/// function, negative inside, `+∞` where unknown. Each constraint is
/// interpolated by the quadratic through three neighbouring nodes (centered
/// where possible), so crossings of quadratic constraints are located
/// exactly and the boundary treatment along the line is third order. With
/// fewer known neighbours the rule degrades to linear interpolation and then
/// to the node indicator.
pub fn half_cell_fractions(g: &[f64], m: usize, out: &mut [(f64, f64)]) {
    let n = out.len();
    debug_assert_eq!(g.len(), n * m);
    let known = |j: isize, c: usize| -> Option<f64> {
        (j >= 0 && (j as usize) < n).then(|| g[j as usize * m + c]).filter(|v| v.is_finite())
    };
    // q(τ) = a τ² + b τ + f₀ with τ ∈ [0, 1] spanning the half cell from the
    // node outward; neighbouring nodes sit at τ = ±2
    let model = |j: usize, c: usize, d: isize| -> Option<(f64, f64, f64)> {
        let j = j as isize;
        let f0 = known(j, c)?;
        let fit = |k1: isize, k2: isize| -> Option<(f64, f64, f64)> {
            let (f1, f2) = (known(j + d * k1, c)?, known(j + d * k2, c)?);
            let (t1, t2) = (2.0 * k1 as f64, 2.0 * k2 as f64);
            // divided differences through (0, f0), (t1, f1), (t2, f2)
            let d1 = (f1 - f0) / t1;
            let d2 = ((f2 - f0) / t2 - d1) / (t2 - t1);
            Some((d2, d1 - d2 * t1, f0))
        };
        fit(-1, 1)
            .or_else(|| fit(1, 2))
            .or_else(|| fit(-1, -2))
            .or_else(|| known(j + d, c).map(|f1| (0.0, (f1 - f0) / 2.0, f0)))
            .or_else(|| known(j - d, c).map(|f1| (0.0, (f0 - f1) / 2.0, f0)))
    };
    let mut cuts: Vec<f64> = Vec::with_capacity(2 * m + 2);
    let mut models: Vec<(f64, f64, f64)> = Vec::with_capacity(m);
    for (j, o) in out.iter_mut().enumerate() {
        let mut sides = [0.0; 2];
        for (side, d) in [(0usize, -1isize), (1, 1)] {
            cuts.clear();
            models.clear();
            cuts.extend([0.0, 1.0]);
            let mut empty = false;
            for c in 0..m {
                match model(j, c, d) {
                    Some(q) => {
                        push_roots(q, &mut cuts);
                        models.push(q);
                    }
                    None if g[j * m + c] < 0.0 => {}
                    None => empty = true,
                }
            }
            if empty {
                continue;
            }
            cuts.sort_by(f64::total_cmp);
            let mut inside = 0.0;
            for w in cuts.windows(2) {
                let t = 0.5 * (w[0] + w[1]);
                if models.iter().all(|&(a, b, c)| (a * t + b) * t + c < 0.0) {
                    inside += w[1] - w[0];
                }
            }
            sides[side] = inside;
        }
        *o = (sides[0], sides[1]);
    }
}

/// Appends the roots of `a τ² + b τ + c` lying in `(0, 1)`.
fn push_roots((a, b, c): (f64, f64, f64), out: &mut Vec<f64>) {
    let mut push = |t: f64| {
        if t > 0.0 && t < 1.0 {
            out.push(t);
        }
    };
    if a.abs() <= 1e-14 * (b.abs() + c.abs()) {
        if b != 0.0 {
            push(-c / b);
        }
        return;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return;
    }
    // stable form
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    push(q / a);
    if q != 0.0 {
        push(c / q);
    }
}

/// Tensor rule on a product of Euclidean balls `∏ B^{m_k}(b_k)` in polar
/// coordinates: midpoint nodes in the radius and every angle, weighted by the
/// polar Jacobian. The domain needs no indicator, so the error is smooth
/// `O(n^{-2})` rather than lattice-point noise.
#[derive(Debug, Clone)]
pub struct BallProductGrid {
    layers: Vec<LayerRule>,
    dim: usize,
}

#[derive(Debug, Clone)]
struct LayerRule {
    offset: usize,
    dim: usize,
    /// Flattened `dim`-vectors.
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl LayerRule {
    fn new(offset: usize, dim: usize, radius: f64, n: usize) -> Self {
        let mid = |j: usize, lo: f64, hi: f64| lo + (j as f64 + 0.5) * (hi - lo) / n as f64;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        if dim == 1 {
            for j in 0..n {
                nodes.push(mid(j, -radius, radius));
                weights.push(2.0 * radius / n as f64);
            }
            return Self { offset, dim, nodes, weights };
        }
        let pi = std::f64::consts::PI;
        // (ρ, θ_1, …, θ_{m−2}, φ)
        let cell = (radius / n as f64) * (pi / n as f64).powi(dim as i32 - 2) * (2.0 * pi / n as f64);
        let total = n.pow(dim as u32);
        let mut idx = vec![0usize; dim];
        let mut x = vec![0.0; dim];
        for _ in 0..total {
            let rho = mid(idx[0], 0.0, radius);
            let mut w = cell * rho.powi(dim as i32 - 1);
            let mut prod = rho;
            for a in 1..dim - 1 {
                let th = mid(idx[a], 0.0, pi);
                x[a - 1] = prod * th.cos();
                prod *= th.sin();
                w *= th.sin().powi((dim - 1 - a) as i32);
            }
            let ph = mid(idx[dim - 1], 0.0, 2.0 * pi);
            x[dim - 2] = prod * ph.cos();
            x[dim - 1] = prod * ph.sin();
            nodes.extend_from_slice(&x);
            weights.push(w);
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < n {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self { offset, dim, nodes, weights }
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn write(&self, j: usize, out: &mut [f64]) {
        out[self.offset..self.offset + self.dim].copy_from_slice(&self.nodes[j * self.dim..(j + 1) * self.dim]);
    }
}

impl BallProductGrid {
    /// `layers[k] = (m_k, b_k)`; `n` cells on every polar axis.
    pub fn new(layers: &[(usize, f64)], n: usize) -> Self {
        let mut offset = 0;
        let layers = layers
            .iter()
            .filter(|(m, _)| *m > 0)
            .map(|&(m, b)| {
                let rule = LayerRule::new(offset, m, b, n);
                offset += m;
                rule
            })
            .collect();
        Self { layers, dim: offset }
    }

    pub fn dims(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> u64 {
        self.layers.iter().map(|l| l.len() as u64).product()
    }

    /// `Σ weight · f(node)`, split by the nodes of the first layer and
    /// combined in index order.
    pub fn integrate<S: Send>(
        &self,
        init: impl Fn() -> S + Sync,
        f: impl Fn(&mut S, &[f64]) -> f64 + Sync,
    ) -> f64 {
        let Some(first) = self.layers.first() else {
            let mut s = init();
            return f(&mut s, &[]);
        };
        let rest = &self.layers[1..];
        let partials: Vec<f64> = (0..first.len())
            .into_par_iter()
            .map(|j0| {
                let mut state = init();
                let mut acc = CompensatedSum::new();
                let mut x = vec![0.0; self.dim];
                first.write(j0, &mut x);
                let mut idx = vec![0usize; rest.len()];
                for (l, layer) in rest.iter().enumerate() {
                    layer.write(0, &mut x);
                    idx[l] = 0;
                }
                loop {
                    let w: f64 = first.weights[j0] * rest.iter().zip(&idx).map(|(l, &j)| l.weights[j]).product::<f64>();
                    acc.add(w * f(&mut state, &x));
                    let mut a = rest.len();
                    loop {
                        if a == 0 {
                            return acc.value();
                        }
                        a -= 1;
                        idx[a] += 1;
                        if idx[a] < rest[a].len() {
                            rest[a].write(idx[a], &mut x);
                            break;
                        }
                        idx[a] = 0;
                        rest[a].write(0, &mut x);
                    }
                }
            })
            .collect();
        let mut total = CompensatedSum::new();
        for p in partials {
            total.add(p);
        }
        total.value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_integrand() {
        let g = MidpointGrid::new(vec![0.0, 0.0], vec![1.0, 2.0], 64);
        let v = g.integrate(|| (), |_, x| x[0] * x[1]);
        assert!((v - 1.0).abs() < 1e-3);
    }

    #[test]
    fn disc_area_converges() {
        let settings = QuadratureSettings::default();
        let res = refine(2, &settings, |n| {
            let g = MidpointGrid::symmetric(&[1.0, 1.0], n);
            Ok::<_, Infallible>(g.integrate(|| (), |_, x| (x[0] * x[0] + x[1] * x[1] < 1.0) as u8 as f64))
        })
        .unwrap();
        assert!(res.converged);
        assert!((res.value - PI).abs() / PI < 0.01);
        assert_eq!(res.nodes, (res.nodes_per_axis as u64).pow(2));
    }

    #[test]
    fn half_cells_locate_a_linear_boundary() {
        // g = x − 0.3 on midpoints of [0, 1] with 10 cells: inside is [0, 0.3)
        let g: Vec<f64> = (0..10).map(|j| (j as f64 + 0.5) / 10.0 - 0.3).collect();
        let mut f = vec![(0.0, 0.0); 10];
        half_cell_fractions(&g, 1, &mut f);
        let length: f64 = f.iter().map(|(l, r)| 0.05 * (l + r)).sum();
        assert!((length - 0.3).abs() < 1e-12);
        // two constraints: x > 0.42 and x < 0.77
        let g: Vec<f64> = (0..10)
            .flat_map(|j| {
                let x = (j as f64 + 0.5) / 10.0;
                [0.42 - x, x - 0.77]
            })
            .collect();
        half_cell_fractions(&g, 2, &mut f);
        let length: f64 = f.iter().map(|(l, r)| 0.05 * (l + r)).sum();
        assert!((length - 0.35).abs() < 1e-12);
        // chord of the unit disc at height 0.6: x² − 0.64 < 0
        let g: Vec<f64> = (0..10).map(|j| (-1.0 + (j as f64 + 0.5) / 5.0).powi(2) - 0.64).collect();
        half_cell_fractions(&g, 1, &mut f);
        let length: f64 = f.iter().map(|(l, r)| 0.1 * (l + r)).sum();
        assert!((length - 1.6).abs() < 1e-12, "{length}");
        let g = [-1.0, f64::INFINITY];
        half_cell_fractions(&g, 1, &mut f[..2]);
        assert_eq!(&f[..2], &[(1.0, 1.0), (0.0, 0.0)]);
    }

    #[test]
    fn ball_product_volumes() {
        // B²(1) × B¹(1), B⁴(1) × B¹(1), B²(0.5) × B¹(0.25) × B¹(0.125)
        for (layers, exact) in [
            (vec![(2, 1.0), (1, 1.0)], 2.0 * PI),
            (vec![(4, 1.0), (1, 1.0)], PI * PI),
            (vec![(2, 0.5), (1, 0.25), (1, 0.125)], PI * 0.25 * 0.5 * 0.25),
        ] {
            let g = BallProductGrid::new(&layers, 16);
            let v = g.integrate(|| (), |_, _| 1.0);
            assert!((v / exact - 1.0).abs() < 5e-3, "{layers:?}: {v} vs {exact}");
        }
    }

    #[test]
    fn ball_product_moments() {
        // ∫_{B³} x₃² = 4π/15, ∫_{B²×B¹} (x₁² + x₃) = π/4 · 2
        let g = BallProductGrid::new(&[(3, 1.0)], 24);
        let v = g.integrate(|| (), |_, x| x[2] * x[2]);
        assert!((v - 4.0 * PI / 15.0).abs() < 1e-2);
        let g = BallProductGrid::new(&[(2, 1.0), (1, 1.0)], 24);
        let v = g.integrate(|| (), |_, x| x[0] * x[0] + x[2]);
        assert!((v - PI / 2.0).abs() < 1e-2);
    }

    #[test]
    fn level_sequence() {
        let mut n = 1;
        let mut seen = vec![n];
        while n < 64 {
            n = next_level(n);
            seen.push(n);
        }
        assert_eq!(seen, [1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64]);
        assert_eq!(next_level(10), 20);
    }

    #[test]
    fn cap_stops_refinement() {
        let settings = QuadratureSettings {
            rel_tol: 0.0,
            max_nodes: 1000,
            start: 4,
        };
        let mut flip = 0.0;
        let res = refine(3, &settings, |_| {
            flip += 1.0;
            Ok::<_, Infallible>(flip)
        })
        .unwrap();
        assert!(!res.converged);
        assert_eq!(res.nodes_per_axis, 8);
    }
}
