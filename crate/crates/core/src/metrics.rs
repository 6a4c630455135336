//! The `d₂` and `ρ` quasimetrics, `Box₂` balls and a spatial index for
//! `d₂`-ball queries.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::algebra::GradedNilpotentAlgebra;
use crate::group::{CarnotGroup, GroupError, GroupPoint};
use crate::omega::Normalization;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// `max_k |w^{(k)}|^{1/k}` over the layer blocks of `w`.
pub fn homogeneous_norm(alg: &GradedNilpotentAlgebra, w: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for k in 1..=alg.depth() {
        let sq: f64 = w[alg.layer_range(k)].iter().map(|v| v * v).sum();
        let norm = if k == 1 { sq.sqrt() } else { sq.powf(0.5 / k as f64) };
        best = best.max(norm);
    }
    best
}

/// `g⁻¹·x`, the position of `x` relative to `g`.
pub fn relative(group: &CarnotGroup, x: &[f64], g: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = g.iter().map(|c| -c).collect();
    group.product_vec(&neg, x)
}

pub fn d2_raw(group: &CarnotGroup, x: &[f64], g: &[f64]) -> f64 {
    homogeneous_norm(group.algebra(), &relative(group, x, g))
}

pub fn d2(group: &CarnotGroup, x: &GroupPoint, g: &GroupPoint) -> Result<f64, GroupError> {
    group.product(&group.inverse(g), x)?;
    Ok(d2_raw(group, x.coords(), g.coords()))
}

pub fn rho(group: &CarnotGroup, x: &GroupPoint, g: &GroupPoint) -> Result<f64, GroupError> {
    let w = group.product(&group.inverse(g), x)?;
    Ok(w.coords().iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Open `d₂`-ball; in coordinates relative to its center it is the product of
/// Euclidean balls `B^{n_k}(r^k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Box2Ball {
    center: GroupPoint,
    radius: f64,
}

impl Box2Ball {
    pub fn new(center: GroupPoint, radius: f64) -> Result<Self, MetricError> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(MetricError::NonPositiveRadius(radius));
        }
        Ok(Self { center, radius })
    }

    pub fn centered(dim: usize, radius: f64) -> Result<Self, MetricError> {
        Self::new(GroupPoint::identity(dim), radius)
    }

    pub fn center(&self) -> &GroupPoint {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Coordinate-wise bounds `r^{deg_i}` of the relative box.
    pub fn relative_bounds(&self, alg: &GradedNilpotentAlgebra) -> Vec<f64> {
        alg.degrees()
            .iter()
            .map(|&d| self.radius.powi(d as i32))
            .collect()
    }
}

/// Strict membership: `d₂(p, center) < radius`.
pub fn box2_contains(group: &CarnotGroup, ball: &Box2Ball, p: &GroupPoint) -> bool {
    d2_raw(group, p.coords(), ball.center.coords()) < ball.radius
}

/// Membership of a point given relative to the ball's center.
pub fn relative_in_ball(alg: &GradedNilpotentAlgebra, w: &[f64], radius: f64) -> bool {
    (1..=alg.depth()).all(|k| {
        let sq: f64 = w[alg.layer_range(k)].iter().map(|v| v * v).sum();
        let rk = radius.powi(k as i32);
        sq < rk * rk
    })
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, out: &mut [f64], radius: f64) {
    let n = out.len();
    if n == 1 {
        out[0] = radius * (2.0 * rng.gen::<f64>() - 1.0);
        return;
    }
    let mut norm = 0.0;
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
        norm += *v * *v;
    }
    let scale = radius * rng.gen::<f64>().powf(1.0 / n as f64) / norm.sqrt();
    for v in out.iter_mut() {
        *v *= scale;
    }
}

/// Deterministic stream of points uniform (w.r.t. Lebesgue measure in relative
/// coordinates) in a `Box₂` ball.
pub struct Box2Sampler<'a> {
    group: &'a CarnotGroup,
    ball: &'a Box2Ball,
    rng: ChaCha8Rng,
}

impl<'a> Box2Sampler<'a> {
    pub fn new(group: &'a CarnotGroup, ball: &'a Box2Ball, seed: u64) -> Self {
        Self {
            group,
            ball,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Next point relative to the ball's center.
    pub fn next_relative(&mut self) -> Vec<f64> {
        let alg = self.group.algebra();
        let mut w = vec![0.0; alg.dim()];
        for k in 1..=alg.depth() {
            let r = self.ball.radius.powi(k as i32);
            uniform_in_ball(&mut self.rng, &mut w[alg.layer_range(k)], r);
        }
        w
    }
}

impl Iterator for Box2Sampler<'_> {
    type Item = GroupPoint;

    fn next(&mut self) -> Option<GroupPoint> {
        let w = self.next_relative();
        let x = self.group.product_vec(self.ball.center.coords(), &w);
        Some(GroupPoint::new(x).expect("finite sample"))
    }
}

pub fn box2_sample(group: &CarnotGroup, ball: &Box2Ball, seed: u64) -> GroupPoint {
    Box2Sampler::new(group, ball, seed).next().expect("infinite stream")
}

pub fn box2_samples(group: &CarnotGroup, ball: &Box2Ball, count: usize, seed: u64) -> Vec<GroupPoint> {
    Box2Sampler::new(group, ball, seed).take(count).collect()
}

/// `∏_k ω_{n_k} · r^ν`.
pub fn box2_lebesgue_volume(alg: &GradedNilpotentAlgebra, r: f64) -> Result<f64, MetricError> {
    box2_lebesgue_volume_with(alg, r, Normalization::UnitBall)
}

pub fn box2_lebesgue_volume_with(
    alg: &GradedNilpotentAlgebra,
    r: f64,
    norm: Normalization,
) -> Result<f64, MetricError> {
    if !(r > 0.0) {
        return Err(MetricError::NonPositiveRadius(r));
    }
    let prod: f64 = alg.layer_dims().iter().map(|&n| norm.omega(n as u32)).product();
    Ok(prod * r.powi(alg.hausdorff_dimension() as i32))
}

#[derive(Debug, Clone, Serialize)]
pub struct TriangleProbe {
    pub c_estimate: f64,
    pub samples: usize,
    pub seed: u64,
    pub r0: f64,
}

/// Lower bound for the constant `C` in `Box₂(x, ξ) ⊂ Box₂(v, r + Cξ)` for
/// `x ∈ Box₂(v, r)`: the running maximum of `(d₂(v,z) − r)/ξ`, clamped below
/// at 1. By left invariance `v = 0`.
pub fn quasi_triangle_probe(
    group: &CarnotGroup,
    r0: f64,
    sample_count: usize,
    seed: u64,
) -> Result<TriangleProbe, MetricError> {
    let trace = quasi_triangle_trace(group, r0, sample_count, seed)?;
    Ok(TriangleProbe {
        c_estimate: trace.last().copied().unwrap_or(1.0),
        samples: sample_count,
        seed,
        r0,
    })
}

/// Running estimates after each sample.
pub fn quasi_triangle_trace(
    group: &CarnotGroup,
    r0: f64,
    sample_count: usize,
    seed: u64,
) -> Result<Vec<f64>, MetricError> {
    if !(r0 > 0.0) {
        return Err(MetricError::NonPositiveRadius(r0));
    }
    let alg = group.algebra();
    let n = alg.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 1.0f64;
    let mut trace = Vec::with_capacity(sample_count);
    let mut w = vec![0.0; n];
    let mut u = vec![0.0; n];
    for _ in 0..sample_count {
        // (0, r0]: 1 - U with U ∈ [0, 1)
        let r = r0 * (1.0 - rng.gen::<f64>());
        let xi = r0 * (1.0 - rng.gen::<f64>());
        for k in 1..=alg.depth() {
            uniform_in_ball(&mut rng, &mut w[alg.layer_range(k)], r.powi(k as i32));
            uniform_in_ball(&mut rng, &mut u[alg.layer_range(k)], xi.powi(k as i32));
        }
        let z = group.product_vec(&w, &u);
        let c = (homogeneous_norm(alg, &z) - r) / xi;
        best = best.max(c);
        trace.push(best);
    }
    Ok(trace)
}

/// Hash grid answering "which stored points lie within `d₂`-distance `δ` of a
/// query" for a fixed `δ`.
///
/// Cell widths `b_i` bound `|(p·w)_i − p_i|` over stored points `p` and
/// `|w^{(k)}| ≤ δ^k`, so every hit lies in a neighbouring cell.
#[derive(Debug, Clone)]
pub struct D2Index {
    delta: f64,
    cell: Vec<f64>,
    points: Vec<Vec<f64>>,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

impl D2Index {
    pub fn new(group: &CarnotGroup, points: Vec<Vec<f64>>, delta: f64) -> Self {
        let alg = group.algebra();
        let n = alg.dim();
        let mut pmax = vec![0.0f64; n];
        for p in &points {
            for (m, v) in pmax.iter_mut().zip(p) {
                *m = m.max(v.abs());
            }
        }
        let wmax: Vec<f64> = alg.degrees().iter().map(|&d| delta.powi(d as i32)).collect();
        let cell: Vec<f64> = group
            .bch_table()
            .components()
            .iter()
            .map(|poly| {
                let mut b = 0.0;
                for (exps, c) in poly.terms() {
                    let (xe, we) = exps.split_at(n);
                    if we.iter().all(|&e| e == 0) {
                        continue; // the `p_i` term itself
                    }
                    let mut term = crate::poly::rational_to_f64(c).abs();
                    for j in 0..n {
                        term *= pmax[j].powi(xe[j] as i32) * wmax[j].powi(we[j] as i32);
                    }
                    b += term;
                }
                b.max(f64::MIN_POSITIVE)
            })
            .collect();
        let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (idx, p) in points.iter().enumerate() {
            buckets.entry(Self::key(&cell, p)).or_default().push(idx);
        }
        Self {
            delta,
            cell,
            points,
            buckets,
        }
    }

    fn key(cell: &[f64], p: &[f64]) -> Vec<i64> {
        p.iter().zip(cell).map(|(v, b)| (v / b).floor() as i64).collect()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Per-coordinate bound on `|(p·w)_i − p_i|` for `|w| <= δ`.
    pub fn reach(&self) -> &[f64] {
        &self.cell
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Calls `f(index, distance)` for every stored point with
    /// `d₂(point, q) <= radius`, `radius <= δ`. Stops early when `f` returns
    /// false.
    pub fn for_each_within(
        &self,
        group: &CarnotGroup,
        q: &[f64],
        radius: f64,
        mut f: impl FnMut(usize, f64) -> bool,
    ) {
        debug_assert!(radius <= self.delta * (1.0 + 1e-9));
        let base = Self::key(&self.cell, q);
        let n = base.len();
        let mut offset = vec![-1i64; n];
        let mut key = base.clone();
        let mut neg = vec![0.0; n];
        let mut w = vec![0.0; n];
        loop {
            for i in 0..n {
                key[i] = base[i] + offset[i];
            }
            if let Some(bucket) = self.buckets.get(&key) {
                for &idx in bucket {
                    let p = &self.points[idx];
                    for (m, v) in neg.iter_mut().zip(p) {
                        *m = -v;
                    }
                    group.product_into(&neg, q, &mut w);
                    let d = homogeneous_norm(group.algebra(), &w);
                    if d <= radius && !f(idx, d) {
                        return;
                    }
                }
            }
            // odometer over {-1, 0, 1}^n
            let mut i = 0;
            loop {
                if i == n {
                    return;
                }
                if offset[i] < 1 {
                    offset[i] += 1;
                    break;
                }
                offset[i] = -1;
                i += 1;
            }
        }
    }

    /// Whether some stored point lies at `d₂`-distance `< radius` from `q`.
    pub fn any_within_open(&self, group: &CarnotGroup, q: &[f64], radius: f64) -> bool {
        let mut hit = false;
        self.for_each_within(group, q, radius, |_, d| {
            if d < radius {
                hit = true;
                false
            } else {
                true
            }
        });
        hit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn h1() -> CarnotGroup {
        CarnotGroup::new(GradedNilpotentAlgebra::heisenberg(1)).unwrap()
    }

    fn pt(g: &CarnotGroup, c: &[f64]) -> GroupPoint {
        g.point(c.to_vec()).unwrap()
    }

    #[test]
    fn d2_and_rho_examples() {
        let g = h1();
        let o = pt(&g, &[0.0; 3]);
        assert!((d2(&g, &o, &pt(&g, &[3.0, 4.0, 9.0])).unwrap() - 5.0).abs() < 1e-12);
        assert!((d2(&g, &o, &pt(&g, &[0.0, 0.0, 9.0])).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(rho(&g, &o, &pt(&g, &[3.0, 4.0, 9.0])).unwrap(), 9.0);
        let p = pt(&g, &[0.1, 0.0, 0.5]);
        assert_eq!(rho(&g, &o, &p).unwrap(), 0.5);
        assert!((d2(&g, &o, &p).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(rho(&g, &p, &p).unwrap(), 0.0);
    }

    #[test]
    fn ball_membership_is_strict() {
        let g = h1();
        let ball = Box2Ball::centered(3, 1.0).unwrap();
        assert!(box2_contains(&g, &ball, &pt(&g, &[0.5, 0.0, 0.0])));
        assert!(!box2_contains(&g, &ball, &pt(&g, &[1.0, 0.0, 0.0])));
        assert!(!box2_contains(&g, &ball, &pt(&g, &[0.0, 0.0, 1.0001])));
        assert!(Box2Ball::centered(3, 0.0).is_err());
    }

    #[test]
    fn volumes() {
        let h = GradedNilpotentAlgebra::heisenberg(1);
        assert!((box2_lebesgue_volume(&h, 1.0).unwrap() - 2.0 * PI).abs() < 1e-12);
        let v1 = box2_lebesgue_volume(&h, 0.7).unwrap();
        let v2 = box2_lebesgue_volume(&h, 1.4).unwrap();
        assert!((v2 / v1 - 16.0).abs() < 1e-12);
        let r2 = GradedNilpotentAlgebra::abelian(2);
        assert!((box2_lebesgue_volume(&r2, 1.0).unwrap() - PI).abs() < 1e-15);
    }

    #[test]
    fn samples_are_deterministic_and_inside() {
        let g = h1();
        let ball = Box2Ball::new(pt(&g, &[0.3, -0.2, 0.1]), 0.5).unwrap();
        let a = box2_samples(&g, &ball, 500, 9);
        let b = box2_samples(&g, &ball, 500, 9);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| box2_contains(&g, &ball, p)));
    }

    #[test]
    fn abelian_probe_is_one() {
        let g = CarnotGroup::new(GradedNilpotentAlgebra::abelian(3)).unwrap();
        let probe = quasi_triangle_probe(&g, 1.0, 2000, 1).unwrap();
        assert!(probe.c_estimate <= 1.0 + 1e-12);
    }

    #[test]
    fn probe_trace_is_monotone_and_prefix_stable() {
        let g = h1();
        let long = quasi_triangle_trace(&g, 1.0, 400, 5).unwrap();
        let short = quasi_triangle_trace(&g, 1.0, 200, 5).unwrap();
        assert_eq!(&long[..200], &short[..]);
        assert!(long.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn index_agrees_with_brute_force() {
        let g = h1();
        let ball = Box2Ball::centered(3, 1.0).unwrap();
        let mut sampler = Box2Sampler::new(&g, &ball, 3);
        let pts: Vec<Vec<f64>> = (0..400).map(|_| sampler.next_relative()).collect();
        let delta = 0.3;
        let index = D2Index::new(&g, pts.clone(), delta);
        for q in pts.iter().take(50) {
            let mut hits = Vec::new();
            index.for_each_within(&g, q, delta, |i, _| {
                hits.push(i);
                true
            });
            hits.sort_unstable();
            let brute: Vec<usize> = (0..pts.len()).filter(|&i| d2_raw(&g, q, &pts[i]) <= delta).collect();
            assert_eq!(hits, brute);
        }
    }
}
