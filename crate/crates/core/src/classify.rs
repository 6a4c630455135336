//! `ν₀(x)` and the split of the source into degenerate, characteristic and
//! regular points.
//!
//! Two independent routes decide "characteristic": surjectivity of the graded
//! morphism `D̂φ(x)` (every block `𝒱_k` onto its target layer) and the degree
//! count `ν₀(x) > ν̃`. Both are computed at every point and must agree.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{binomial, for_each_subset, select_columns, singular_values, RANK_RTOL};
use crate::maps::{differential_pair, DifferentialPair, MapError, PolynomialContactMap};
use crate::metrics::{relative_in_ball, Box2Ball};

/// Above this many column subsets `ν₀` switches to the layer-greedy basis.
pub const SUBSET_ENUMERATION_CAP: u128 = 1_000_000;

/// Singular values within this factor of the threshold mark a point marginal.
pub const MARGINAL_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PointKind {
    Degenerate,
    Characteristic,
    Regular,
}

impl PointKind {
    pub fn label(self) -> &'static str {
        match self {
            PointKind::Degenerate => "degenerate",
            PointKind::Characteristic => "characteristic",
            PointKind::Regular => "regular",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointClass {
    pub kind: PointKind,
    /// `None` exactly at degenerate points.
    pub nu0: Option<u32>,
    pub rank_full: usize,
    /// `Σ_k rank 𝒱_k`; equals `Ñ` iff `D̂φ(x)` is onto.
    pub rank_hc: usize,
    /// Columns realizing `ν₀`.
    pub witness: Option<Vec<usize>>,
    pub marginal: bool,
    /// Whether the `ν₀` route reached the same verdict as the rank route.
    pub routes_agree: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("rank route says {by_rank:?} but ν₀ = {nu0:?} (ν~ = {nu_target}) at {point:?}")]
    RouteDisagreement {
        point: Vec<f64>,
        by_rank: PointKind,
        nu0: Option<u32>,
        nu_target: u32,
    },
    #[error("resolution must be at least 2, got {0}")]
    Resolution(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nu0Search {
    /// Start at level `ν̃`; lower sums cannot be full rank.
    Pruned,
    /// Test every level, so that the lower bound itself can be checked.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nu0 {
    pub value: Option<u32>,
    pub witness: Option<Vec<usize>>,
    /// Some tested minor had its smallest singular value near the threshold.
    pub marginal: bool,
}

fn near_threshold(s: f64, thr: f64) -> bool {
    thr > 0.0 && s > thr / MARGINAL_FACTOR && s < thr * MARGINAL_FACTOR
}

fn smallest_singular(m: &DMatrix<f64>) -> f64 {
    singular_values(m).last().copied().unwrap_or(f64::INFINITY)
}

/// `ν₀` of a frame differential `full` (`Ñ × N`) with source degrees.
///
/// `threshold` is the absolute singular-value cutoff shared with the rank
/// route.
pub fn nu0_of(full: &DMatrix<f64>, degrees: &[u32], nu_target: u32, threshold: f64, search: Nu0Search) -> Nu0 {
    let (rows, cols) = full.shape();
    if rows == 0 {
        return Nu0 {
            value: Some(0),
            witness: Some(Vec::new()),
            marginal: false,
        };
    }
    if binomial(cols, rows) > SUBSET_ENUMERATION_CAP {
        return nu0_greedy(full, degrees, threshold);
    }
    let mut subsets: Vec<(u32, Vec<usize>)> = Vec::new();
    for_each_subset(cols, rows, |s| {
        let sum: u32 = s.iter().map(|&i| degrees[i]).sum();
        if search == Nu0Search::Exhaustive || sum >= nu_target {
            subsets.push((sum, s.to_vec()));
        }
        true
    });
    subsets.sort_by_key(|(sum, _)| *sum);
    let mut marginal = false;
    let mut found: Option<u32> = None;
    let mut witness = None;
    for (sum, s) in &subsets {
        if found.is_some_and(|f| *sum > f) {
            break;
        }
        let smin = smallest_singular(&select_columns(full, s));
        marginal |= near_threshold(smin, threshold);
        if smin > threshold && found.is_none() {
            found = Some(*sum);
            witness = Some(s.clone());
        }
    }
    Nu0 {
        value: found,
        witness,
        marginal,
    }
}

/// Minimum-degree basis by the matroid greedy rule: scan columns by
/// ascending degree and keep those that raise the rank.
fn nu0_greedy(full: &DMatrix<f64>, degrees: &[u32], threshold: f64) -> Nu0 {
    let mut order: Vec<usize> = (0..full.ncols()).collect();
    order.sort_by_key(|&i| degrees[i]);
    let mut chosen: Vec<usize> = Vec::new();
    let mut marginal = false;
    for i in order {
        if chosen.len() == full.nrows() {
            break;
        }
        let mut trial = chosen.clone();
        trial.push(i);
        let smin = smallest_singular(&select_columns(full, &trial));
        marginal |= near_threshold(smin, threshold);
        if smin > threshold {
            chosen = trial;
        }
    }
    if chosen.len() < full.nrows() {
        return Nu0 {
            value: None,
            witness: None,
            marginal,
        };
    }
    chosen.sort_unstable();
    Nu0 {
        value: Some(chosen.iter().map(|&i| degrees[i]).sum()),
        witness: Some(chosen),
        marginal,
    }
}

/// Absolute rank cutoff `RANK_RTOL · σ_max(Dφ)`.
pub fn rank_threshold(full: &DMatrix<f64>) -> f64 {
    singular_values(full).first().copied().unwrap_or(0.0) * RANK_RTOL
}

pub fn nu0(map: &PolynomialContactMap, x: &[f64]) -> Result<Option<u32>, MapError> {
    let pair = differential_pair(map, x)?;
    let thr = rank_threshold(&pair.full);
    let nt = map.target().algebra().hausdorff_dimension();
    Ok(nu0_of(&pair.full, map.source().algebra().degrees(), nt, thr, Nu0Search::Pruned).value)
}

pub fn classify_differential(map: &PolynomialContactMap, pair: &DifferentialPair, search: Nu0Search) -> PointClass {
    let n_target = map.target().dim();
    let nu_target = map.target().algebra().hausdorff_dimension();
    let thr = rank_threshold(&pair.full);
    let count = |m: &DMatrix<f64>, marginal: &mut bool| {
        let s = singular_values(m);
        *marginal |= s.iter().any(|&v| near_threshold(v, thr));
        s.iter().filter(|&&v| v > thr).count()
    };
    let mut marginal = false;
    let rank_full = count(&pair.full, &mut marginal);
    let rank_hc: usize = pair.blocks.iter().map(|b| count(b, &mut marginal)).sum();
    let nu = nu0_of(&pair.full, map.source().algebra().degrees(), nu_target, thr, search);
    marginal |= nu.marginal;

    let by_rank = if rank_full < n_target {
        PointKind::Degenerate
    } else if rank_hc < n_target {
        PointKind::Characteristic
    } else {
        PointKind::Regular
    };
    let by_nu0 = match nu.value {
        None => PointKind::Degenerate,
        Some(v) if v > nu_target => PointKind::Characteristic,
        Some(_) => PointKind::Regular,
    };
    PointClass {
        kind: by_rank,
        nu0: nu.value,
        rank_full,
        rank_hc,
        witness: nu.witness,
        marginal,
        routes_agree: by_rank == by_nu0,
    }
}

/// Classifies `x`; a route disagreement away from marginal points is an
/// error.
pub fn classify_point(map: &PolynomialContactMap, x: &[f64]) -> Result<PointClass, ClassifyError> {
    let pair = differential_pair(map, x)?;
    let class = classify_differential(map, &pair, Nu0Search::Pruned);
    check_routes(map, x, &class)?;
    Ok(class)
}

fn check_routes(map: &PolynomialContactMap, x: &[f64], class: &PointClass) -> Result<(), ClassifyError> {
    if class.routes_agree || class.marginal {
        return Ok(());
    }
    Err(ClassifyError::RouteDisagreement {
        point: x.to_vec(),
        by_rank: class.kind,
        nu0: class.nu0,
        nu_target: map.target().algebra().hausdorff_dimension(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Census {
    pub nodes: usize,
    pub degenerate: usize,
    pub characteristic: usize,
    pub regular: usize,
    pub marginal: usize,
    /// Route disagreements, all at marginal points.
    pub disagreements: usize,
    /// Non-degenerate points with `ν₀ < ν̃`.
    pub nu0_below_target: usize,
    /// Points with `ν₀ = ν̃` whose witness uses a column of degree above `M̃`.
    pub witness_above_target_depth: usize,
    #[serde(skip)]
    pub characteristic_points: Vec<Vec<f64>>,
    #[serde(skip)]
    pub degenerate_points: Vec<Vec<f64>>,
    #[serde(skip)]
    pub points: Vec<(Vec<f64>, PointClass)>,
}

/// Lattice `resolution^N` over the relative bounding box `|w_i| <= r^{deg_i}`,
/// restricted to the open ball, in coordinates relative to the center.
pub fn ball_lattice(map: &PolynomialContactMap, ball: &Box2Ball, resolution: usize) -> Vec<Vec<f64>> {
    let alg = map.source().algebra();
    let bounds = ball.relative_bounds(alg);
    let n = bounds.len();
    let total = resolution.pow(n as u32);
    let step = |i: usize, b: f64| -b + 2.0 * b * i as f64 / (resolution - 1) as f64;
    (0..total)
        .filter_map(|mut idx| {
            let mut w = vec![0.0; n];
            for (i, wi) in w.iter_mut().enumerate().rev() {
                *wi = step(idx % resolution, bounds[i]);
                idx /= resolution;
            }
            relative_in_ball(alg, &w, ball.radius()).then_some(w)
        })
        .collect()
}

/// Classifies every lattice point of `ball` (see [`ball_lattice`]); the
/// exhaustive `ν₀` search is used so the lower bound `ν₀ ≥ ν̃` is tested.
pub fn scan_grid(map: &PolynomialContactMap, ball: &Box2Ball, resolution: usize) -> Result<Census, ClassifyError> {
    if resolution < 2 {
        return Err(ClassifyError::Resolution(resolution));
    }
    let group = map.source();
    let center = ball.center().coords();
    let lattice = ball_lattice(map, ball, resolution);
    let classes: Vec<Result<(Vec<f64>, PointClass), ClassifyError>> = lattice
        .par_iter()
        .map(|w| {
            let x = group.product_vec(center, w);
            let pair = differential_pair(map, &x)?;
            let class = classify_differential(map, &pair, Nu0Search::Exhaustive);
            check_routes(map, &x, &class)?;
            Ok((x, class))
        })
        .collect();
    let nu_target = map.target().algebra().hausdorff_dimension();
    let depth_target = map.target().algebra().depth() as u32;
    let degrees = group.algebra().degrees();
    let mut census = Census::default();
    for item in classes {
        let (x, class) = item?;
        census.nodes += 1;
        census.marginal += class.marginal as usize;
        census.disagreements += !class.routes_agree as usize;
        match class.kind {
            PointKind::Degenerate => {
                census.degenerate += 1;
                census.degenerate_points.push(x.clone());
            }
            PointKind::Characteristic => {
                census.characteristic += 1;
                census.characteristic_points.push(x.clone());
            }
            PointKind::Regular => census.regular += 1,
        }
        if let Some(v) = class.nu0 {
            census.nu0_below_target += (v < nu_target) as usize;
            if v == nu_target {
                let deep = class
                    .witness
                    .as_ref()
                    .is_some_and(|w| w.iter().any(|&i| degrees[i] > depth_target));
                census.witness_above_target_depth += deep as usize;
            }
        }
        census.points.push((x, class));
    }
    Ok(census)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::GradedNilpotentAlgebra;
    use crate::group::CarnotGroup;
    use std::sync::Arc;

    fn group(alg: GradedNilpotentAlgebra) -> Arc<CarnotGroup> {
        Arc::new(CarnotGroup::new(alg).unwrap())
    }

    fn h1_to_r(expr: &str) -> PolynomialContactMap {
        let h = group(GradedNilpotentAlgebra::heisenberg(1));
        let r = group(GradedNilpotentAlgebra::abelian(1));
        PolynomialContactMap::parse("phi", h, r, &[expr]).unwrap()
    }

    #[test]
    fn nu0_examples() {
        let x3 = h1_to_r("u3");
        assert_eq!(nu0(&x3, &[0.0; 3]).unwrap(), Some(2));
        assert_eq!(nu0(&x3, &[1.0, 0.0, 0.0]).unwrap(), Some(1));
        assert_eq!(nu0(&h1_to_r("0"), &[0.3, 0.1, 0.0]).unwrap(), None);
    }

    #[test]
    fn point_classes() {
        let x3 = h1_to_r("u3");
        let c = classify_point(&x3, &[0.0; 3]).unwrap();
        assert_eq!(c.kind, PointKind::Characteristic);
        assert_eq!((c.rank_full, c.rank_hc, c.nu0), (1, 0, Some(2)));
        let c = classify_point(&x3, &[2.0, 0.0, 0.0]).unwrap();
        assert_eq!(c.kind, PointKind::Regular);
        let z = classify_point(&h1_to_r("0"), &[0.0; 3]).unwrap();
        assert_eq!((z.kind, z.nu0), (PointKind::Degenerate, None));
    }

    #[test]
    fn submersion_onto_the_plane_is_regular() {
        let h2 = group(GradedNilpotentAlgebra::heisenberg(2));
        let r2 = group(GradedNilpotentAlgebra::abelian(2));
        let p = PolynomialContactMap::parse("phi", h2, r2, &["u1 + u4^2/10", "u2"]).unwrap();
        let c = classify_point(&p, &[0.4, -0.3, 0.2, 0.9, -1.0]).unwrap();
        assert_eq!((c.kind, c.nu0), (PointKind::Regular, Some(2)));
        let ball = Box2Ball::centered(5, 1.0).unwrap();
        let census = scan_grid(&p, &ball, 5).unwrap();
        assert_eq!((census.characteristic, census.degenerate), (0, 0));
        assert_eq!(census.regular, census.nodes);
    }

    #[test]
    fn greedy_matches_enumeration() {
        let degrees = [1, 1, 1, 2, 2, 3];
        let full = DMatrix::from_row_slice(
            2,
            6,
            &[0.0, 0.0, 0.0, 1.0, 0.5, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0],
        );
        let thr = rank_threshold(&full);
        let e = nu0_of(&full, &degrees, 2, thr, Nu0Search::Exhaustive);
        let g = nu0_greedy(&full, &degrees, thr);
        assert_eq!(e.value, Some(5));
        assert_eq!(e.value, g.value);
    }

    #[test]
    fn scan_finds_the_characteristic_axis() {
        let x3 = h1_to_r("u3");
        let ball = Box2Ball::centered(3, 1.0).unwrap();
        let census = scan_grid(&x3, &ball, 21).unwrap();
        assert!(census.characteristic > 0);
        assert!(census
            .characteristic_points
            .iter()
            .all(|p| p[0] == 0.0 && p[1] == 0.0));
        let axis = census
            .points
            .iter()
            .filter(|(p, _)| p[0] == 0.0 && p[1] == 0.0)
            .count();
        assert_eq!(axis, census.characteristic);
        let zero = scan_grid(&h1_to_r("0"), &ball, 7).unwrap();
        assert_eq!(zero.degenerate, zero.nodes);
    }
}
