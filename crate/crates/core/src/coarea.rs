//! End-to-end numerical check of the sub-Riemannian coarea formula and of the
//! negligibility of characteristic and degenerate points.
//!
//! All integrals run in coordinates relative to the domain center through the
//! left-translated map `ψ(w) = φ(c·w)`, whose frame differential at `w` is
//! `Dφ(c·w)`; left translations preserve Lebesgue measure and `d₂`.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::classify::{classify_differential, scan_grid, ClassifyError, Nu0Search, PointKind};
use crate::group::CarnotGroup;
use crate::linalg::{det_in_place, for_each_subset, CompensatedSum};
use crate::maps::{differential_pair, DifferentialEvaluator, MapError, PolynomialContactMap};
use crate::measures::{
    density_constant, kappa, sr_constant, LevelSetChart, MeasureConvention, MeasureError, Newton, G_CONVENTION,
};
use crate::metrics::{box2_lebesgue_volume, homogeneous_norm, relative_in_ball, Box2Ball, Box2Sampler, D2Index};
use crate::omega::Normalization;
use crate::quadrature::{half_cell_fractions, refine, BallProductGrid, MidpointGrid, QuadratureSettings};

/// Samples used to bracket the image of the domain.
pub const IMAGE_SAMPLES: usize = 4096;
/// Padding of the sampled image range, as a fraction of its width.
pub const IMAGE_PADDING: f64 = 0.05;
/// Largest excised fraction of the domain's Lebesgue measure.
pub const EXCISION_LIMIT: f64 = 0.05;
/// Band for `|rhs/lhs − 1|` under the balanced convention.
pub const BALANCE_TOL: f64 = 0.01;
/// Lattice nodes targeted by the default census resolution.
const CENSUS_NODES: f64 = 2e5;

#[derive(Debug, Error)]
pub enum CoareaError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("{side} quadrature did not reach relative tolerance {tol} (last change {change:e} of {value:e})")]
    NotConverged {
        side: &'static str,
        tol: f64,
        change: f64,
        value: f64,
    },
    #[error("excised χ∪Z neighbourhood holds {fraction:.3} of the domain (limit {limit}); the slice integral would not be trustworthy")]
    ExcisionTooLarge { fraction: f64, limit: f64 },
    #[error("no {0} pivot columns: the map's coordinate Jacobian vanishes on the domain samples")]
    NoPivot(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoareaSettings {
    pub rel_tol: f64,
    pub max_nodes: u64,
    /// First grid level; `None` picks one leaving room for three levels.
    pub start: Option<usize>,
    /// Census lattice resolution per axis; `None` targets about 2·10⁵ nodes.
    pub census_resolution: Option<usize>,
}

impl Default for CoareaSettings {
    fn default() -> Self {
        let q = QuadratureSettings::default();
        Self {
            rel_tol: q.rel_tol,
            max_nodes: q.max_nodes,
            start: None,
            census_resolution: None,
        }
    }
}

impl CoareaSettings {
    pub fn quadrature(&self, dims: usize) -> QuadratureSettings {
        let start = self.start.unwrap_or_else(|| {
            let per_axis = (self.max_nodes as f64).powf(1.0 / dims.max(1) as f64);
            ((per_axis / 4.0).floor() as usize).clamp(4, 16)
        });
        QuadratureSettings {
            rel_tol: self.rel_tol,
            max_nodes: self.max_nodes,
            start,
        }
    }

    pub fn census_resolution(&self, dims: usize) -> usize {
        self.census_resolution.unwrap_or_else(|| {
            let r = CENSUS_NODES.powf(1.0 / dims.max(1) as f64).floor() as usize;
            let r = r.clamp(5, 101);
            r - (r % 2 == 0) as usize
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralEstimate {
    pub value: f64,
    pub error: f64,
    pub nodes_per_axis: usize,
    pub nodes: u64,
}

/// One row of the per-slice table: inner integrals over `φ^{-1}(t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceRecord {
    pub t: Vec<f64>,
    /// `H^{ν−ν̃}(φ^{-1}(t) ∩ domain)`, i.e. `∫ α dH^{N−Ñ}`.
    pub level_measure_sr: f64,
    /// Riemannian `(N−Ñ)`-measure of the same set.
    pub level_measure_riem: f64,
    /// Lebesgue measure excised from this slice's slab.
    pub excised_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhsResult {
    pub estimate: IntegralEstimate,
    #[serde(skip)]
    pub slices: Vec<SliceRecord>,
    pub pivot: Vec<usize>,
    pub t_lo: Vec<f64>,
    pub t_hi: Vec<f64>,
    pub excision_radius: f64,
    pub excision_samples: usize,
    pub excised_mass: f64,
    pub excised_fraction: f64,
    /// Nodes where Newton neither converged nor left the search region;
    /// counted as outside the level set.
    pub unresolved_nodes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub tool_version: String,
    pub map: String,
    pub source: String,
    pub target: String,
    pub domain_center: Vec<f64>,
    pub domain_radius: f64,
    pub convention: String,
    pub omega_normalization: String,
    pub hausdorff_metric: String,
    pub g_convention: String,
    pub seed: u64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub lhs_error: f64,
    pub rhs_error: f64,
    /// `κ̃ ∫ 𝒥_Ñ α dLeb`, the classical coarea route to the right side.
    pub rhs_fubini: f64,
    pub rhs_fubini_error: f64,
    pub lhs_nodes: u64,
    pub rhs_nodes: u64,
    pub excised_mass: f64,
    pub excised_fraction: f64,
    pub unresolved_nodes: u64,
    pub census: CensusSummary,
    /// `|ratio − 1|` against `max(combined relative error, BALANCE_TOL)`;
    /// only asserted under the balanced convention.
    pub balance_tolerance: f64,
    pub balanced: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CensusSummary {
    pub resolution: usize,
    pub nodes: usize,
    pub regular: usize,
    pub characteristic: usize,
    pub degenerate: usize,
    pub marginal: usize,
}

fn bounds(alg: &crate::algebra::GradedNilpotentAlgebra, r: f64) -> Vec<f64> {
    alg.degrees().iter().map(|&d| r.powi(d as i32)).collect()
}

fn layer_balls(group: &CarnotGroup, r: f64) -> Vec<(usize, f64)> {
    let alg = group.algebra();
    alg.layer_dims()
        .iter()
        .enumerate()
        .map(|(k, &m)| (m, r.powi(k as i32 + 1)))
        .collect()
}

fn translated(map: &PolynomialContactMap, domain: &Box2Ball) -> PolynomialContactMap {
    map.translated(domain.center().coords())
}

/// `∫_domain f(Dψ) dLeb` on the polar ball-product rule with refinement.
fn ball_integral(
    psi: &PolynomialContactMap,
    radius: f64,
    settings: &CoareaSettings,
    side: &'static str,
    f: impl Fn(&mut DifferentialEvaluator) -> f64 + Sync,
) -> Result<IntegralEstimate, CoareaError> {
    let group = psi.source();
    let layers = layer_balls(group, radius);
    let q = settings.quadrature(group.dim());
    let res = refine(group.dim(), &q, |n| {
        let grid = BallProductGrid::new(&layers, n);
        Ok::<_, std::convert::Infallible>(grid.integrate(
            || DifferentialEvaluator::new(psi),
            |ev, w| {
                ev.eval(w);
                f(ev)
            },
        ))
    })
    .unwrap_or_else(|e| match e {});
    if !res.converged {
        return Err(CoareaError::NotConverged {
            side,
            tol: q.rel_tol,
            change: res.error,
            value: res.value,
        });
    }
    Ok(IntegralEstimate {
        value: res.value,
        error: res.error,
        nodes_per_axis: res.nodes_per_axis,
        nodes: res.nodes,
    })
}

/// `∫ J^SR dH^ν = κ · ∫ J^SR dLeb` over the domain.
pub fn lhs_integral(
    map: &PolynomialContactMap,
    domain: &Box2Ball,
    convention: MeasureConvention,
    settings: &CoareaSettings,
) -> Result<IntegralEstimate, CoareaError> {
    let psi = translated(map, domain);
    let (sa, ta) = (map.source().algebra(), map.target().algebra());
    let scale = kappa(sa, convention.normalization) * sr_constant(sa, ta, convention)?;
    // 𝒟(D̂φ) vanishes exactly where D̂φ is rank deficient
    let mut est = ball_integral(&psi, domain.radius(), settings, "lhs", |ev| ev.gram_hc())?;
    est.value *= scale;
    est.error *= scale;
    Ok(est)
}

/// `κ̃ ∫ 𝒥_Ñ α dLeb`: the right side through the classical coarea formula.
pub fn rhs_fubini(
    map: &PolynomialContactMap,
    domain: &Box2Ball,
    norm: Normalization,
    settings: &CoareaSettings,
) -> Result<IntegralEstimate, CoareaError> {
    let psi = translated(map, domain);
    let (sa, ta) = (map.source().algebra(), map.target().algebra());
    let c_alpha = density_constant(sa, ta, norm)?;
    let scale = kappa(ta, norm);
    let mut est = ball_integral(&psi, domain.radius(), settings, "fubini", |ev| {
        let full = ev.gram_full();
        if full > 0.0 {
            full * (c_alpha * ev.gram_hc() / full)
        } else {
            0.0
        }
    })?;
    est.value *= scale;
    est.error *= scale;
    Ok(est)
}

/// Where a solved node lies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Outside,
    Inside,
    Excised,
}

/// Box in `(t, s)` coordinates plus the chart solving for `w_P`.
struct SliceSetup<'a> {
    psi: &'a PolynomialContactMap,
    chart: LevelSetChart<'a>,
    t_lo: Vec<f64>,
    t_hi: Vec<f64>,
    s_lo: Vec<f64>,
    s_hi: Vec<f64>,
    c_alpha: f64,
}

struct SlicePass {
    /// `Σ_t level_measure_sr(t) · Δt`.
    value: f64,
    slices: Vec<SliceRecord>,
    excised: f64,
    unresolved: u64,
}

impl SliceSetup<'_> {
    /// One level of the `(t, s)` grid. Lines run along the last target
    /// coordinate: there the indicator is replaced by half-cell fractions of
    /// the `m` constraint functions that `region` writes for each solved
    /// node, which also resolves the ends of the image range. Work is split
    /// by the first remaining axis and per-`t` sums are combined in index
    /// order.
    fn pass(&self, n: usize, m: usize, region: &(dyn Fn(&[f64], &mut [f64]) -> Region + Sync)) -> SlicePass {
        let nt = self.t_lo.len();
        let n_dim = self.psi.source().dim();
        let t_grid = MidpointGrid::new(self.t_lo.clone(), self.t_hi.clone(), n);
        let s_grid = MidpointGrid::new(self.s_lo.clone(), self.s_hi.clone(), n);
        let (dt, ds) = (t_grid.cell_volume(), s_grid.cell_volume());
        let nf = s_grid.dims();
        let t_count = n.pow(nt as u32);
        // outer axes: t_0..t_{Ñ−2}, then s_0..s_{nf−1}; index < nt − 1 means t
        let outer = nt - 1 + nf;
        let rest = n.pow(outer.saturating_sub(1) as u32);
        let tasks = if outer == 0 { 1 } else { n };
        let unresolved = Mutex::new(0u64);
        let partials: Vec<Vec<[f64; 3]>> = (0..tasks)
            .into_par_iter()
            .map(|task| {
                let mut sc = self.chart.scratch();
                let mut ev = DifferentialEvaluator::new(self.psi);
                let mut w = vec![0.0; n_dim];
                let mut warm = false;
                let mut sums = vec![[CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new()]; t_count];
                let mut missed = 0u64;
                let mut idx = vec![0usize; outer];
                let mut t = vec![0.0; nt];
                let mut s = vec![0.0; nf];
                let mut g = vec![f64::INFINITY; n * m];
                let mut vals: Vec<Option<(f64, f64)>> = vec![None; n];
                let mut cut = vec![0.0; n];
                let mut frac = vec![(0.0, 0.0); n];
                for r in 0..rest.max(1) {
                    if outer > 0 {
                        idx[0] = task;
                        let mut rem = r;
                        for a in (1..outer).rev() {
                            idx[a] = rem % n;
                            rem /= n;
                        }
                    }
                    for a in 0..nt - 1 {
                        t[a] = t_grid.coordinate(a, idx[a]);
                    }
                    for a in 0..nf {
                        s[a] = s_grid.coordinate(a, idx[nt - 1 + a]);
                    }
                    let t_base = (0..nt - 1).fold(0, |acc, a| acc * n + idx[a]) * n;
                    for j in 0..n {
                        t[nt - 1] = t_grid.coordinate(nt - 1, j);
                        let gj = &mut g[j * m..(j + 1) * m];
                        gj.fill(f64::INFINITY);
                        vals[j] = None;
                        cut[j] = 0.0;
                        if !warm {
                            self.chart.predict(&s, &t, &mut w);
                        }
                        let mut outcome = self.chart.solve(&mut sc, &s, &t, &mut w);
                        if matches!(outcome, Newton::Failed { .. }) && warm {
                            self.chart.predict(&s, &t, &mut w);
                            outcome = self.chart.solve(&mut sc, &s, &t, &mut w);
                        }
                        match outcome {
                            Newton::Converged => warm = true,
                            Newton::Escaped => {
                                warm = false;
                                continue;
                            }
                            Newton::Failed { .. } => {
                                warm = false;
                                missed += 1;
                                continue;
                            }
                        }
                        match region(&w, gj) {
                            Region::Outside => {}
                            Region::Excised => {
                                gj.fill(f64::INFINITY);
                                let det = self.chart.pivot_jacobian(&mut sc, &w);
                                if det > 0.0 {
                                    cut[j] = 1.0 / det;
                                }
                            }
                            Region::Inside => {
                                if let Some(area) = self.chart.surface_element(&mut sc, &w) {
                                    ev.eval(&w);
                                    let full = ev.gram_full();
                                    let alpha = if full > 0.0 { self.c_alpha * ev.gram_hc() / full } else { 0.0 };
                                    vals[j] = Some((alpha * area, area));
                                } else {
                                    gj.fill(f64::INFINITY);
                                }
                            }
                        }
                    }
                    half_cell_fractions(&g, m, &mut frac);
                    for j in 0..n {
                        let (l, r) = frac[j];
                        // an outside node's inside part takes the neighbour's value
                        let left = vals[j].or(if j > 0 { vals[j - 1] } else { None });
                        let right = vals[j].or(vals.get(j + 1).copied().flatten());
                        let acc = &mut sums[t_base + j];
                        for (f, v) in [(l, left), (r, right)] {
                            if let Some((a, b)) = v {
                                acc[0].add(0.5 * f * a);
                                acc[1].add(0.5 * f * b);
                            }
                        }
                        acc[2].add(cut[j]);
                    }
                }
                if missed > 0 {
                    *unresolved.lock().unwrap() += missed;
                }
                sums.iter().map(|c| [c[0].value(), c[1].value(), c[2].value()]).collect()
            })
            .collect();
        let slices: Vec<SliceRecord> = (0..t_count)
            .map(|ti| {
                let mut acc = [CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new()];
                for p in &partials {
                    for (a, v) in acc.iter_mut().zip(p[ti]) {
                        a.add(v);
                    }
                }
                SliceRecord {
                    t: (0..nt)
                        .map(|a| t_grid.coordinate(a, (ti / n.pow((nt - 1 - a) as u32)) % n))
                        .collect(),
                    level_measure_sr: acc[0].value() * ds,
                    level_measure_riem: acc[1].value() * ds,
                    excised_mass: acc[2].value() * ds * dt,
                }
            })
            .collect();
        let mut value = CompensatedSum::new();
        let mut excised = CompensatedSum::new();
        for s in &slices {
            value.add(s.level_measure_sr);
            excised.add(s.excised_mass);
        }
        SlicePass {
            value: value.value() * dt,
            slices,
            excised: excised.value(),
            unresolved: unresolved.into_inner().unwrap(),
        }
    }
}

/// Writes `|w_k|² − r^{2k}` for every layer into `g`; true if all are
/// negative, i.e. `w` lies in the open ball.
fn ball_constraints(alg: &crate::algebra::GradedNilpotentAlgebra, w: &[f64], r: f64, g: &mut [f64]) -> bool {
    let mut inside = true;
    for (k, gk) in g.iter_mut().enumerate() {
        let sq: f64 = w[alg.layer_range(k + 1)].iter().map(|v| v * v).sum();
        *gk = sq - r.powi(2 * (k as i32 + 1));
        inside &= *gk < 0.0;
    }
    inside
}

/// Pivot columns for the global slicing chart: maximal scaled minor at the
/// center, or summed over `samples` if every minor vanishes there.
fn global_pivot(psi: &PolynomialContactMap, radius: f64, samples: &[Vec<f64>]) -> Option<Vec<usize>> {
    let alg = psi.source().algebra();
    let scale = bounds(alg, radius);
    let n = alg.dim();
    if let Some(p) = crate::linalg::maximal_minor_columns(&psi.jacobian(&vec![0.0; n]), &scale) {
        return Some(p);
    }
    let nt = psi.target().dim();
    let jacobians: Vec<_> = samples.iter().take(256).map(|w| psi.jacobian(w)).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_subset(n, nt, |cols| {
        let mut total = 0.0;
        for j in &jacobians {
            let mut m: Vec<f64> = (0..nt * nt).map(|e| j[(e / nt, cols[e % nt])] * scale[cols[e % nt]]).collect();
            total += det_in_place(&mut m, nt).abs();
        }
        if total > 0.0 && best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, cols.to_vec()));
        }
        true
    });
    best.map(|(_, c)| c)
}

/// Sampled range of `ψ` over `points`, padded; `None` if some component is
/// constant (the image is then `H^ν̃`-null).
fn image_range(psi: &PolynomialContactMap, points: &[Vec<f64>]) -> Option<(Vec<f64>, Vec<f64>)> {
    let nt = psi.target().dim();
    let mut lo = vec![f64::INFINITY; nt];
    let mut hi = vec![f64::NEG_INFINITY; nt];
    let mut v = vec![0.0; nt];
    for w in points {
        psi.evaluate_into(w, &mut v);
        for i in 0..nt {
            lo[i] = lo[i].min(v[i]);
            hi[i] = hi[i].max(v[i]);
        }
    }
    for i in 0..nt {
        let width = hi[i] - lo[i];
        if !(width > 0.0) {
            return None;
        }
        lo[i] -= IMAGE_PADDING * width;
        hi[i] += IMAGE_PADDING * width;
    }
    Some((lo, hi))
}

fn census_summary(resolution: usize, c: &crate::classify::Census) -> CensusSummary {
    CensusSummary {
        resolution,
        nodes: c.nodes,
        regular: c.regular,
        characteristic: c.characteristic,
        degenerate: c.degenerate,
        marginal: c.marginal,
    }
}

/// `∫ dH^ν̃(t) H^{ν−ν̃}(φ^{-1}(t) ∩ domain)` by slicing: `κ̃·Lebesgue` outside,
/// `∫ α dH^{N−Ñ}` on each level through a global graph chart inside.
/// Nodes within `2h` (`h` the grid spacing) of census χ∪Z points are excised
/// and their Lebesgue mass reported.
pub fn rhs_integral(
    map: &PolynomialContactMap,
    domain: &Box2Ball,
    norm: Normalization,
    settings: &CoareaSettings,
    seed: u64,
) -> Result<(RhsResult, CensusSummary), CoareaError> {
    let psi = translated(map, domain);
    let group = psi.source();
    let alg = group.algebra();
    let n = alg.dim();
    let nt = psi.target().dim();
    let r = domain.radius();
    let centered = Box2Ball::centered(n, r).expect("positive radius");
    let resolution = settings.census_resolution(n);
    let census = scan_grid(&psi, &centered, resolution)?;
    let summary = census_summary(resolution, &census);
    let mut sampler = Box2Sampler::new(group, &centered, seed);
    let samples: Vec<Vec<f64>> = (0..IMAGE_SAMPLES).map(|_| sampler.next_relative()).collect();
    let empty = |pivot: Vec<usize>| RhsResult {
        estimate: IntegralEstimate {
            value: 0.0,
            error: 0.0,
            nodes_per_axis: 0,
            nodes: 0,
        },
        slices: Vec::new(),
        pivot,
        t_lo: Vec::new(),
        t_hi: Vec::new(),
        excision_radius: 0.0,
        excision_samples: 0,
        excised_mass: 0.0,
        excised_fraction: 0.0,
        unresolved_nodes: 0,
    };
    let Some((t_lo, t_hi)) = image_range(&psi, &samples) else {
        return Ok((empty(Vec::new()), summary));
    };
    let pivot = global_pivot(&psi, r, &samples).ok_or(CoareaError::NoPivot(nt))?;
    let chart = LevelSetChart::with_pivot(&psi, pivot.clone(), r).ok_or(CoareaError::NoPivot(nt))?;
    let b = bounds(alg, r);
    let s_hi: Vec<f64> = chart.free.iter().map(|&i| b[i]).collect();
    let c_alpha = density_constant(alg, psi.target().algebra(), norm)?;
    let setup = SliceSetup {
        psi: &psi,
        chart,
        t_lo: t_lo.clone(),
        t_hi: t_hi.clone(),
        s_lo: s_hi.iter().map(|v| -v).collect(),
        s_hi,
        c_alpha,
    };

    let bad: Vec<Vec<f64>> = census
        .characteristic_points
        .iter()
        .chain(&census.degenerate_points)
        .cloned()
        .collect();
    let excision_samples = bad.len();
    let volume = box2_lebesgue_volume(alg, r).expect("positive radius");
    let q = settings.quadrature(n);
    let mut last: Option<(SlicePass, f64)> = None;
    let res = refine(n, &q, |level| {
        let cut = 4.0 * r / level as f64;
        let index = (!bad.is_empty()).then(|| D2Index::new(group, bad.clone(), cut));
        let region = |w: &[f64], g: &mut [f64]| {
            if !ball_constraints(alg, w, r, g) {
                Region::Outside
            } else if index.as_ref().is_some_and(|ix| ix.any_within_open(group, w, cut)) {
                Region::Excised
            } else {
                Region::Inside
            }
        };
        let pass = setup.pass(level, alg.depth(), &region);
        if pass.excised > EXCISION_LIMIT * volume {
            return Err(CoareaError::ExcisionTooLarge {
                fraction: pass.excised / volume,
                limit: EXCISION_LIMIT,
            });
        }
        let value = pass.value;
        last = Some((pass, cut));
        Ok(value)
    })?;
    if !res.converged {
        return Err(CoareaError::NotConverged {
            side: "rhs",
            tol: q.rel_tol,
            change: res.error,
            value: res.value,
        });
    }
    let (pass, cut) = last.expect("at least one level");
    let scale = kappa(psi.target().algebra(), norm);
    Ok((
        RhsResult {
            estimate: IntegralEstimate {
                value: res.value * scale,
                error: res.error * scale,
                nodes_per_axis: res.nodes_per_axis,
                nodes: res.nodes,
            },
            slices: pass.slices,
            pivot,
            t_lo,
            t_hi,
            excision_radius: cut,
            excision_samples,
            excised_mass: pass.excised,
            excised_fraction: pass.excised / volume,
            unresolved_nodes: pass.unresolved,
        },
        summary,
    ))
}

/// Runs both sides and the Fubini route. Returns the report and the final
/// level's per-slice table.
pub fn verify(
    map: &PolynomialContactMap,
    domain: &Box2Ball,
    convention: MeasureConvention,
    seed: u64,
    settings: &CoareaSettings,
) -> Result<(VerificationReport, Vec<SliceRecord>), CoareaError> {
    let lhs = lhs_integral(map, domain, convention, settings)?;
    let (rhs, census) = rhs_integral(map, domain, convention.normalization, settings, seed)?;
    let fubini = rhs_fubini(map, domain, convention.normalization, settings)?;
    let ratio = if lhs.value == 0.0 && rhs.estimate.value == 0.0 {
        1.0
    } else {
        rhs.estimate.value / lhs.value
    };
    let rel = |e: &IntegralEstimate| if e.value != 0.0 { e.error / e.value.abs() } else { 0.0 };
    let tolerance = (rel(&lhs) + rel(&rhs.estimate)).max(BALANCE_TOL);
    let balanced = (convention.mode == crate::measures::ConventionMode::Balanced).then(|| (ratio - 1.0).abs() <= tolerance);
    let report = VerificationReport {
        tool_version: crate::VERSION.to_string(),
        map: map.name().to_string(),
        source: map.source().algebra().name().to_string(),
        target: map.target().algebra().name().to_string(),
        domain_center: domain.center().coords().to_vec(),
        domain_radius: domain.radius(),
        convention: convention.mode.tag().to_string(),
        omega_normalization: convention.normalization.tag().to_string(),
        hausdorff_metric: convention.hausdorff_metric().to_string(),
        g_convention: G_CONVENTION.to_string(),
        seed,
        lhs: lhs.value,
        rhs: rhs.estimate.value,
        ratio,
        lhs_error: lhs.error,
        rhs_error: rhs.estimate.error,
        rhs_fubini: fubini.value,
        rhs_fubini_error: fubini.error,
        lhs_nodes: lhs.nodes,
        rhs_nodes: rhs.estimate.nodes,
        excised_mass: rhs.excised_mass,
        excised_fraction: rhs.excised_fraction,
        unresolved_nodes: rhs.unresolved_nodes,
        census,
        balance_tolerance: tolerance,
        balanced,
    };
    Ok((report, rhs.slices))
}

/// Characteristic points near the census lattice, refined along lattice
/// edges whose endpoints are both characteristic until neighbouring samples
/// are within `gap` in `d₂`. Coordinates are relative to the domain center.
pub fn characteristic_samples(
    map: &PolynomialContactMap,
    domain: &Box2Ball,
    resolution: usize,
    gap: f64,
) -> Result<Vec<Vec<f64>>, CoareaError> {
    let psi = translated(map, domain);
    let group = psi.source();
    let alg = group.algebra();
    let n = alg.dim();
    let r = domain.radius();
    let centered = Box2Ball::centered(n, r).expect("positive radius");
    let census = scan_grid(&psi, &centered, resolution)?;
    let b = bounds(alg, r);
    let mut step: Vec<f64> = b.iter().map(|v| 2.0 * v / (resolution - 1) as f64).collect();
    let coord = |key: &[i64], step: &[f64]| -> Vec<f64> { (0..n).map(|i| -b[i] + key[i] as f64 * step[i]).collect() };
    let mut points: HashMap<Vec<i64>, Vec<f64>> = census
        .characteristic_points
        .iter()
        .map(|w| {
            let key: Vec<i64> = (0..n).map(|i| ((w[i] + b[i]) / step[i]).round() as i64).collect();
            (key, w.clone())
        })
        .collect();
    let is_char = |w: &[f64]| -> Result<bool, CoareaError> {
        let pair = differential_pair(&psi, w)?;
        Ok(classify_differential(&psi, &pair, Nu0Search::Pruned).kind == PointKind::Characteristic)
    };
    let mut neg = vec![0.0; n];
    let mut rel = vec![0.0; n];
    for _ in 0..24 {
        let mut edges = Vec::new();
        let mut widest = 0.0f64;
        for (key, p) in &points {
            for i in 0..n {
                let mut other = key.clone();
                other[i] += 1;
                if let Some(q) = points.get(&other) {
                    for (m, v) in neg.iter_mut().zip(p) {
                        *m = -v;
                    }
                    group.product_into(&neg, q, &mut rel);
                    widest = widest.max(homogeneous_norm(alg, &rel));
                    edges.push((key.clone(), i));
                }
            }
        }
        if edges.is_empty() || widest <= gap {
            break;
        }
        for s in step.iter_mut() {
            *s /= 2.0;
        }
        points = points.into_iter().map(|(k, p)| (k.iter().map(|v| 2 * v).collect(), p)).collect();
        edges.sort();
        let found: Vec<(Vec<i64>, Vec<f64>)> = edges
            .par_iter()
            .map(|(key, i)| {
                let mut mid: Vec<i64> = key.iter().map(|v| 2 * v).collect();
                mid[*i] += 1;
                let w = coord(&mid, &step);
                Ok(is_char(&w)?.then_some((mid, w)))
            })
            .collect::<Result<Vec<_>, CoareaError>>()?
            .into_iter()
            .flatten()
            .collect();
        points.extend(found);
    }
    let mut out: Vec<(Vec<i64>, Vec<f64>)> = points.into_iter().collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out.into_iter().map(|(_, w)| w).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeMass {
    pub epsilon: f64,
    pub lhs_mass: f64,
    pub rhs_mass: f64,
    pub lhs_error: f64,
    pub rhs_error: f64,
    pub samples: usize,
}

/// Both sides restricted to `{w : d₂(χ-samples, w) < ε}` for each `ε`, with
/// χ sampled until lattice neighbours are within `ε/2` of each other.
pub fn characteristic_contribution(
    map: &PolynomialContactMap,
    domain: &Box2Ball,
    epsilons: &[f64],
    convention: MeasureConvention,
    settings: &CoareaSettings,
    seed: u64,
) -> Result<Vec<TubeMass>, CoareaError> {
    let psi = translated(map, domain);
    let group = psi.source();
    let alg = group.algebra();
    let n = alg.dim();
    let r = domain.radius();
    let resolution = settings.census_resolution(n);
    let zero = |epsilon| TubeMass {
        epsilon,
        lhs_mass: 0.0,
        rhs_mass: 0.0,
        lhs_error: 0.0,
        rhs_error: 0.0,
        samples: 0,
    };
    let (sa, ta) = (alg, psi.target().algebra());
    let lhs_scale = kappa(sa, convention.normalization) * sr_constant(sa, ta, convention)?;
    let c_alpha = density_constant(sa, ta, convention.normalization)?;
    let rhs_scale = kappa(ta, convention.normalization);
    let b = bounds(alg, r);
    let q = settings.quadrature(n);
    let mut out = Vec::new();
    for &eps in epsilons {
        // samples at gap ε/2 keep the number of samples per ball independent of ε
        let chi = characteristic_samples(map, domain, resolution, eps / 2.0)?;
        if chi.is_empty() {
            out.push(zero(eps));
            continue;
        }
        let index = D2Index::new(group, chi.clone(), eps);
        let reach = index.reach();
        let lo: Vec<f64> = (0..n)
            .map(|i| (chi.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min) - reach[i]).max(-b[i]))
            .collect();
        let hi: Vec<f64> = (0..n)
            .map(|i| (chi.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max) + reach[i]).min(b[i]))
            .collect();
        let inside = |w: &[f64]| relative_in_ball(alg, w, r) && index.any_within_open(group, w, eps);

        let lhs = refine(n, &q, |level| {
            let grid = MidpointGrid::new(lo.clone(), hi.clone(), level);
            Ok::<_, std::convert::Infallible>(grid.integrate(
                || DifferentialEvaluator::new(&psi),
                |ev, w| {
                    if inside(w) {
                        ev.eval(w);
                        ev.gram_hc()
                    } else {
                        0.0
                    }
                },
            ))
        })
        .unwrap_or_else(|e| match e {});

        let mut hits: Vec<Vec<f64>> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..IMAGE_SAMPLES {
            let w: Vec<f64> = (0..n).map(|i| rng.gen_range(lo[i]..=hi[i])).collect();
            if inside(&w) {
                hits.push(w);
            }
        }
        hits.extend(chi.iter().cloned());
        let rhs = match image_range(&psi, &hits) {
            None => None,
            Some((t_lo, t_hi)) => {
                let pivot = global_pivot(&psi, r, &hits).ok_or(CoareaError::NoPivot(psi.target().dim()))?;
                let chart = LevelSetChart::with_pivot(&psi, pivot, r).ok_or(CoareaError::NoPivot(psi.target().dim()))?;
                let (s_lo, s_hi) = (
                    chart.free.iter().map(|&i| lo[i]).collect(),
                    chart.free.iter().map(|&i| hi[i]).collect(),
                );
                let setup = SliceSetup {
                    psi: &psi,
                    chart,
                    t_lo,
                    t_hi,
                    s_lo,
                    s_hi,
                    c_alpha,
                };
                // the tube boundary has no level function; only the ball's is used
                let region = |w: &[f64], g: &mut [f64]| {
                    if !ball_constraints(alg, w, r, g) {
                        Region::Outside
                    } else if index.any_within_open(group, w, eps) {
                        Region::Inside
                    } else {
                        g.fill(f64::INFINITY);
                        Region::Outside
                    }
                };
                Some(
                    refine(n, &q, |level| {
                        Ok::<_, std::convert::Infallible>(setup.pass(level, alg.depth(), &region).value)
                    })
                    .unwrap_or_else(|e| match e {}),
                )
            }
        };
        out.push(TubeMass {
            epsilon: eps,
            lhs_mass: lhs.value * lhs_scale,
            lhs_error: lhs.error * lhs_scale,
            rhs_mass: rhs.as_ref().map_or(0.0, |r| r.value * rhs_scale),
            rhs_error: rhs.as_ref().map_or(0.0, |r| r.error * rhs_scale),
            samples: chi.len(),
        });
    }
    Ok(out)
}
