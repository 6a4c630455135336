//! Coarea factors, the level-set measure density, intersection measures with
//! `Box₂` balls, power-law fits and a covering estimate of spherical Hausdorff
//! measure.
//!
//! Riemannian quantities use the metric that makes the left-invariant frames
//! orthonormal; sub-Riemannian ones use `d₂`-spherical Hausdorff measures.

use std::convert::Infallible;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::algebra::GradedNilpotentAlgebra;
use crate::classify::{classify_differential, rank_threshold, Nu0Search, PointKind};
use crate::group::CarnotGroup;
use crate::linalg::{gram_col_slice, maximal_minor_columns, numerical_rank, solve_in_place, solve_unit_lower};
use crate::maps::{differential_pair, gram_row, MapError, PolynomialContactMap};
use crate::metrics::{relative_in_ball, D2Index};
use crate::omega::{omega_exact, omega_product_exact, Normalization, PiMonomial};
use crate::quadrature::{refine, MidpointGrid, QuadratureResult, QuadratureSettings};

/// Tag for the metric behind every sub-Riemannian Hausdorff measure.
pub const HAUSDORFF_METRIC: &str = "d2-spherical";
/// Tag for the Riemannian metric on source and target.
pub const G_CONVENTION: &str = "frames-orthonormal";

/// Newton residual target for level-set solves.
pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConventionMode {
    /// The coarea-factor constant exactly as defined.
    #[default]
    PaperLiteral,
    /// `ω_N/ω_Ñ` replaced by `∏ω_{n_k}/∏ω_{ñ_k}`.
    Balanced,
}

impl ConventionMode {
    pub fn tag(self) -> &'static str {
        match self {
            ConventionMode::PaperLiteral => "paper",
            ConventionMode::Balanced => "balanced",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MeasureConvention {
    pub mode: ConventionMode,
    pub normalization: Normalization,
}

impl MeasureConvention {
    pub fn new(mode: ConventionMode) -> Self {
        Self {
            mode,
            normalization: Normalization::UnitBall,
        }
    }

    pub fn hausdorff_metric(&self) -> &'static str {
        HAUSDORFF_METRIC
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("target layer {layer} has dimension {target_dim} > source dimension {source_dim}")]
    LayerDeficit { layer: usize, source_dim: usize, target_dim: usize },
    #[error("point is {kind:?}; the density is defined only at regular points")]
    NotRegular { kind: PointKind },
    #[error("Dφ(x) is rank deficient; no tangent plane of the expected dimension")]
    Degenerate,
    #[error("Newton did not converge at node {node:?} (residual {residual:e}); the radius may be too large for a graph chart")]
    NewtonFailure { node: Vec<f64>, residual: f64 },
    #[error("quadrature did not reach relative tolerance {tol} (last change {change:e} of {value:e})")]
    NotConverged { tol: f64, change: f64, value: f64 },
    #[error("exponent fit needs at least 4 radii, got {0}")]
    TooFewRadii(usize),
    #[error("exponent fit needs radii spanning a factor of at least 8, got {0}")]
    NarrowRadii(f64),
    #[error("exponent fit needs positive radii and values, got ({r}, {value})")]
    NonPositive { r: f64, value: f64 },
    #[error("empty point cloud")]
    EmptyCloud,
}

/// `n_k − ñ_k` for every layer of the deeper algebra.
pub fn layer_codims(source: &GradedNilpotentAlgebra, target: &GradedNilpotentAlgebra) -> Result<Vec<u32>, MeasureError> {
    let depth = source.depth().max(target.depth());
    (0..depth)
        .map(|k| {
            let s = source.layer_dims().get(k).copied().unwrap_or(0);
            let t = target.layer_dims().get(k).copied().unwrap_or(0);
            if t > s {
                Err(MeasureError::LayerDeficit {
                    layer: k + 1,
                    source_dim: s,
                    target_dim: t,
                })
            } else {
                Ok((s - t) as u32)
            }
        })
        .collect()
}

fn dims_u32(alg: &GradedNilpotentAlgebra) -> impl Iterator<Item = u32> + '_ {
    alg.layer_dims().iter().map(|&n| n as u32)
}

/// `κ = ω_ν / ∏ω_{n_k}`: density of `d₂`-spherical `H^ν` against Lebesgue
/// measure in first-kind coordinates.
pub fn kappa_exact(alg: &GradedNilpotentAlgebra) -> PiMonomial {
    &omega_exact(alg.hausdorff_dimension()) / &omega_product_exact(dims_u32(alg))
}

/// `ω_{ν−ν̃} / ∏ω_{n_k−ñ_k}`, the constant part of the density `α`.
pub fn density_constant_exact(
    source: &GradedNilpotentAlgebra,
    target: &GradedNilpotentAlgebra,
) -> Result<PiMonomial, MeasureError> {
    let codims = layer_codims(source, target)?;
    let nu = source.hausdorff_dimension() - target.hausdorff_dimension();
    Ok(&omega_exact(nu) / &omega_product_exact(codims))
}

/// The constant multiplying `𝒟(D̂φ)` in the sub-Riemannian coarea factor.
pub fn sr_constant_exact(
    source: &GradedNilpotentAlgebra,
    target: &GradedNilpotentAlgebra,
    mode: ConventionMode,
) -> Result<PiMonomial, MeasureError> {
    let (n, nt) = (source.dim() as u32, target.dim() as u32);
    let (nu, nut) = (source.hausdorff_dimension(), target.hausdorff_dimension());
    let outer = match mode {
        ConventionMode::PaperLiteral => &omega_exact(n) / &omega_exact(nt),
        ConventionMode::Balanced => &omega_product_exact(dims_u32(source)) / &omega_product_exact(dims_u32(target)),
    };
    let ratio = &omega_exact(nut) / &omega_exact(nu);
    Ok(&(&outer * &ratio) * &density_constant_exact(source, target)?)
}

fn omega_prod(norm: Normalization, dims: impl IntoIterator<Item = u32>) -> f64 {
    dims.into_iter().map(|m| norm.omega(m)).product()
}

pub fn kappa(alg: &GradedNilpotentAlgebra, norm: Normalization) -> f64 {
    norm.omega(alg.hausdorff_dimension()) / omega_prod(norm, dims_u32(alg))
}

pub fn density_constant(
    source: &GradedNilpotentAlgebra,
    target: &GradedNilpotentAlgebra,
    norm: Normalization,
) -> Result<f64, MeasureError> {
    let codims = layer_codims(source, target)?;
    let nu = source.hausdorff_dimension() - target.hausdorff_dimension();
    Ok(norm.omega(nu) / omega_prod(norm, codims))
}

pub fn sr_constant(
    source: &GradedNilpotentAlgebra,
    target: &GradedNilpotentAlgebra,
    convention: MeasureConvention,
) -> Result<f64, MeasureError> {
    let w = convention.normalization;
    let (n, nt) = (source.dim() as u32, target.dim() as u32);
    let outer = match convention.mode {
        ConventionMode::PaperLiteral => w.omega(n) / w.omega(nt),
        ConventionMode::Balanced => omega_prod(w, dims_u32(source)) / omega_prod(w, dims_u32(target)),
    };
    let ratio = w.omega(target.hausdorff_dimension()) / w.omega(source.hausdorff_dimension());
    Ok(outer * ratio * density_constant(source, target, w)?)
}

/// `J^SR(φ, x) = 𝒟(D̂φ(x)) · C`; zero where `D̂φ(x)` is rank deficient.
pub fn coarea_factor_sr(map: &PolynomialContactMap, x: &[f64], convention: MeasureConvention) -> Result<f64, MeasureError> {
    let pair = differential_pair(map, x)?;
    let c = sr_constant(map.source().algebra(), map.target().algebra(), convention)?;
    let class = classify_differential(map, &pair, Nu0Search::Pruned);
    if class.rank_hc < map.target().dim() {
        return Ok(0.0);
    }
    Ok(c * gram_row(&pair.hc).expect("Ñ <= N"))
}

/// `𝒥_Ñ(φ, x) = 𝒟(Dφ(x))`; zero where `Dφ(x)` is rank deficient.
pub fn coarea_factor_riemannian(map: &PolynomialContactMap, x: &[f64]) -> Result<f64, MeasureError> {
    let pair = differential_pair(map, x)?;
    if numerical_rank(&pair.full) < map.target().dim() {
        return Ok(0.0);
    }
    Ok(gram_row(&pair.full).expect("Ñ <= N"))
}

/// Density of `H^{ν−ν̃}` against the Riemannian surface measure on the level
/// set through a regular `x`.
pub fn measure_density_alpha(map: &PolynomialContactMap, x: &[f64]) -> Result<f64, MeasureError> {
    let pair = differential_pair(map, x)?;
    let class = classify_differential(map, &pair, Nu0Search::Pruned);
    if class.kind != PointKind::Regular {
        return Err(MeasureError::NotRegular { kind: class.kind });
    }
    let c = density_constant(map.source().algebra(), map.target().algebra(), Normalization::UnitBall)?;
    Ok(c * gram_row(&pair.hc).expect("Ñ <= N") / gram_row(&pair.full).expect("Ñ <= N"))
}

fn radius_bounds(alg: &GradedNilpotentAlgebra, r: f64) -> Vec<f64> {
    alg.degrees().iter().map(|&d| r.powi(d as i32)).collect()
}

/// Pivot columns maximizing the minor of `A·diag(r^{deg})`.
fn scaled_pivot(a: &DMatrix<f64>, alg: &GradedNilpotentAlgebra, r: f64) -> Option<(Vec<usize>, Vec<usize>)> {
    let pivot = maximal_minor_columns(a, &radius_bounds(alg, r))?;
    let free = (0..a.ncols()).filter(|i| !pivot.contains(i)).collect();
    Some((pivot, free))
}

fn converge(res: QuadratureResult, settings: &QuadratureSettings) -> Result<QuadratureResult, MeasureError> {
    if res.converged {
        Ok(res)
    } else {
        Err(MeasureError::NotConverged {
            tol: settings.rel_tol,
            change: res.error,
            value: res.value,
        })
    }
}

/// `(N−Ñ)`-dimensional Lebesgue measure of `ker Dφ(x) ∩ Box₂(0, r)`, in frame
/// coordinates at `x`.
pub fn tangent_plane_box_measure(
    map: &PolynomialContactMap,
    x: &[f64],
    r: f64,
    settings: &QuadratureSettings,
) -> Result<QuadratureResult, MeasureError> {
    let pair = differential_pair(map, x)?;
    let alg = map.source().algebra();
    let nt = map.target().dim();
    if numerical_rank(&pair.full) < nt {
        return Err(MeasureError::Degenerate);
    }
    let (pivot, free) = scaled_pivot(&pair.full, alg, r).ok_or(MeasureError::Degenerate)?;
    // v_P = G v_F with G = −A_P⁻¹ A_F
    let a_p = crate::linalg::select_columns(&pair.full, &pivot);
    let a_f = crate::linalg::select_columns(&pair.full, &free);
    let g = -(a_p.lu().solve(&a_f).ok_or(MeasureError::Degenerate)?);
    let jac = {
        let mut t = DMatrix::zeros(alg.dim(), free.len());
        for (c, &f) in free.iter().enumerate() {
            t[(f, c)] = 1.0;
            for (rp, &p) in pivot.iter().enumerate() {
                t[(p, c)] = g[(rp, c)];
            }
        }
        crate::linalg::gram_col(&t).expect("tall")
    };
    let bounds = radius_bounds(alg, r);
    let free_bounds: Vec<f64> = free.iter().map(|&i| bounds[i]).collect();
    let n = alg.dim();
    let res = refine(free.len(), settings, |cells| {
        let grid = MidpointGrid::symmetric(&free_bounds, cells);
        Ok::<_, Infallible>(grid.integrate(
            || vec![0.0; n],
            |v, s| {
                for (c, &f) in free.iter().enumerate() {
                    v[f] = s[c];
                }
                for (rp, &p) in pivot.iter().enumerate() {
                    v[p] = (0..free.len()).map(|c| g[(rp, c)] * s[c]).sum();
                }
                if relative_in_ball(alg, v, r) {
                    jac
                } else {
                    0.0
                }
            },
        ))
    })
    .unwrap_or_else(|e| match e {});
    converge(res, settings)
}

/// Outcome of a Newton solve for the pivot coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Newton {
    Converged,
    /// Iterates left the search region: no point of the level set there.
    Escaped,
    Failed { residual: f64 },
}

/// Graph chart of level sets of `ψ` over the free coordinates
/// `w_F = s`, solving `ψ(w) = t` for the pivot coordinates `w_P`.
#[derive(Debug, Clone)]
pub struct LevelSetChart<'a> {
    psi: &'a PolynomialContactMap,
    pub pivot: Vec<usize>,
    pub free: Vec<usize>,
    /// Iterates with `|w_p| > escape[p]` are abandoned.
    escape: Vec<f64>,
    /// `J_P(0)⁻¹` and `J_P(0)⁻¹ J_F(0)` for the linear predictor, with `ψ(0)`.
    predictor: (Vec<f64>, Vec<f64>, Vec<f64>),
}

/// Per-thread buffers for [`LevelSetChart`].
#[derive(Debug, Clone)]
pub struct ChartScratch {
    value: Vec<f64>,
    jp: Vec<f64>,
    jf: Vec<f64>,
    rhs: Vec<f64>,
    trial: Vec<f64>,
    frame: Vec<f64>,
    tangent: Vec<f64>,
    col: Vec<f64>,
    gram: Vec<f64>,
}

impl<'a> LevelSetChart<'a> {
    /// Pivot chosen from `Jψ(0)·diag(r^{deg})`, or `None` if every minor
    /// vanishes at the origin.
    pub fn at_origin(psi: &'a PolynomialContactMap, r: f64) -> Option<Self> {
        let n = psi.source().dim();
        let j0 = psi.jacobian(&vec![0.0; n]);
        let (pivot, _) = scaled_pivot(&j0, psi.source().algebra(), r)?;
        Self::with_pivot(psi, pivot, r)
    }

    pub fn with_pivot(psi: &'a PolynomialContactMap, pivot: Vec<usize>, r: f64) -> Option<Self> {
        let alg = psi.source().algebra();
        let n = alg.dim();
        let nt = pivot.len();
        let free: Vec<usize> = (0..n).filter(|i| !pivot.contains(i)).collect();
        let escape = radius_bounds(alg, r).iter().map(|b| 4.0 * b + 1e-300).collect();
        let zero = vec![0.0; n];
        let j0 = psi.jacobian(&zero);
        let mut jp: Vec<f64> = (0..nt * nt).map(|e| j0[(e / nt, pivot[e % nt])]).collect();
        let mut inv: Vec<f64> = (0..nt * nt).map(|e| (e / nt == e % nt) as u8 as f64).collect();
        let predictor = if solve_in_place(&mut jp.clone(), nt, &mut inv, nt) {
            let mut jf: Vec<f64> = (0..nt * free.len())
                .map(|e| j0[(e / free.len(), free[e % free.len()])])
                .collect();
            if !solve_in_place(&mut jp, nt, &mut jf, free.len()) {
                return None;
            }
            (inv, jf, psi.evaluate(&zero))
        } else {
            (vec![0.0; nt * nt], vec![0.0; nt * free.len()], psi.evaluate(&zero))
        };
        Some(Self {
            psi,
            pivot,
            free,
            escape,
            predictor,
        })
    }

    pub fn scratch(&self) -> ChartScratch {
        let n = self.psi.source().dim();
        let nt = self.pivot.len();
        let nf = self.free.len();
        ChartScratch {
            value: vec![0.0; nt],
            jp: vec![0.0; nt * nt],
            jf: vec![0.0; nt * nf.max(1)],
            rhs: vec![0.0; nt],
            trial: vec![0.0; n],
            frame: vec![0.0; n * n],
            tangent: vec![0.0; n * nf.max(1)],
            col: vec![0.0; n],
            gram: vec![0.0; nf * nf.max(1)],
        }
    }

    /// Linear prediction of `w_P` from the tangent plane at the origin.
    pub fn predict(&self, s: &[f64], t: &[f64], w: &mut [f64]) {
        let nt = self.pivot.len();
        let nf = self.free.len();
        let (inv, g, psi0) = &self.predictor;
        for (c, &f) in self.free.iter().enumerate() {
            w[f] = s[c];
        }
        for (r, &p) in self.pivot.iter().enumerate() {
            let mut v = 0.0;
            for k in 0..nt {
                v += inv[r * nt + k] * (t[k] - psi0[k]);
            }
            for c in 0..nf {
                v -= g[r * nf + c] * s[c];
            }
            w[p] = v;
        }
    }

    fn residual(&self, sc: &mut ChartScratch, w: &[f64], t: &[f64]) -> f64 {
        self.psi.evaluate_into(w, &mut sc.value);
        let mut m = 0.0f64;
        for (v, ti) in sc.value.iter_mut().zip(t) {
            *v -= ti;
            m = m.max(v.abs());
        }
        m
    }

    /// Solves `ψ(w) = t` for `w_P` with `w_F = s`, starting from `w`'s pivot
    /// entries. Steps are halved while they fail to reduce the residual.
    pub fn solve(&self, sc: &mut ChartScratch, s: &[f64], t: &[f64], w: &mut [f64]) -> Newton {
        let nt = self.pivot.len();
        for (c, &f) in self.free.iter().enumerate() {
            w[f] = s[c];
        }
        let scale = t.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut res = self.residual(sc, w, t);
        for _ in 0..NEWTON_MAX_ITER {
            if res <= NEWTON_TOL * scale {
                return Newton::Converged;
            }
            for r in 0..nt {
                for (c, &p) in self.pivot.iter().enumerate() {
                    sc.jp[r * nt + c] = self.psi.jacobian_entry(r, p, w);
                }
            }
            sc.rhs.copy_from_slice(&sc.value);
            if !solve_in_place(&mut sc.jp, nt, &mut sc.rhs, 1) {
                return Newton::Failed { residual: res };
            }
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                sc.trial.copy_from_slice(w);
                for (r, &p) in self.pivot.iter().enumerate() {
                    sc.trial[p] -= lambda * sc.rhs[r];
                }
                let trial_res = self.residual(sc, &sc.trial.clone(), t);
                if trial_res < res || trial_res <= NEWTON_TOL * scale {
                    w.copy_from_slice(&sc.trial);
                    res = trial_res;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if self.pivot.iter().any(|&p| w[p].abs() > self.escape[p]) {
                return Newton::Escaped;
            }
            if !accepted {
                return Newton::Failed { residual: res };
            }
        }
        if res <= NEWTON_TOL * scale {
            Newton::Converged
        } else {
            Newton::Failed { residual: res }
        }
    }

    /// Riemannian surface element `sqrt(det(BᵀB))`, `B = F(w)⁻¹ ∂w/∂s`, at a
    /// solved `w`. Returns `None` where `∂ψ/∂w_P` is singular.
    pub fn surface_element(&self, sc: &mut ChartScratch, w: &[f64]) -> Option<f64> {
        let alg = self.psi.source();
        let n = alg.dim();
        let nt = self.pivot.len();
        let nf = self.free.len();
        if nf == 0 {
            return Some(1.0);
        }
        for r in 0..nt {
            for (c, &p) in self.pivot.iter().enumerate() {
                sc.jp[r * nt + c] = self.psi.jacobian_entry(r, p, w);
            }
            for (c, &f) in self.free.iter().enumerate() {
                sc.jf[r * nf + c] = self.psi.jacobian_entry(r, f, w);
            }
        }
        if !solve_in_place(&mut sc.jp, nt, &mut sc.jf, nf) {
            return None;
        }
        alg.frame_into(w, &mut sc.frame);
        for c in 0..nf {
            sc.col.iter_mut().for_each(|v| *v = 0.0);
            sc.col[self.free[c]] = 1.0;
            for (r, &p) in self.pivot.iter().enumerate() {
                sc.col[p] = -sc.jf[r * nf + c];
            }
            solve_unit_lower(&sc.frame, n, &mut sc.col);
            for k in 0..n {
                sc.tangent[k * nf + c] = sc.col[k];
            }
        }
        Some(gram_col_slice(&sc.tangent, n, nf, &mut sc.gram))
    }

    /// `|det ∂ψ/∂w_P|` at `w`, the Jacobian of `w ↦ (ψ(w), w_F)`.
    pub fn pivot_jacobian(&self, sc: &mut ChartScratch, w: &[f64]) -> f64 {
        let nt = self.pivot.len();
        for r in 0..nt {
            for (c, &p) in self.pivot.iter().enumerate() {
                sc.jp[r * nt + c] = self.psi.jacobian_entry(r, p, w);
            }
        }
        crate::linalg::det_in_place(&mut sc.jp, nt).abs()
    }
}

/// Riemannian `(N−Ñ)`-measure of `φ^{-1}(φ(x)) ∩ Box₂(x, r)` for regular `x`.
pub fn level_set_box_measure(
    map: &PolynomialContactMap,
    x: &[f64],
    r: f64,
    settings: &QuadratureSettings,
) -> Result<QuadratureResult, MeasureError> {
    let pair = differential_pair(map, x)?;
    let class = classify_differential(map, &pair, Nu0Search::Pruned);
    if class.kind != PointKind::Regular {
        return Err(MeasureError::NotRegular { kind: class.kind });
    }
    let psi = map.translated(x);
    let chart = LevelSetChart::at_origin(&psi, r).ok_or(MeasureError::Degenerate)?;
    let alg = map.source().algebra();
    let n = alg.dim();
    let t = psi.evaluate(&vec![0.0; n]);
    let bounds = radius_bounds(alg, r);
    let free_bounds: Vec<f64> = chart.free.iter().map(|&i| bounds[i]).collect();
    let res = refine(chart.free.len(), settings, |cells| {
        let grid = MidpointGrid::symmetric(&free_bounds, cells);
        let failure = std::sync::Mutex::new(None);
        let v = grid.integrate(
            || (chart.scratch(), vec![0.0; n], false),
            |(sc, w, warm), s| {
                if !*warm {
                    chart.predict(s, &t, w);
                }
                match chart.solve(sc, s, &t, w) {
                    Newton::Converged => {
                        *warm = true;
                        if !relative_in_ball(alg, w, r) {
                            return 0.0;
                        }
                        chart.surface_element(sc, w).unwrap_or(0.0)
                    }
                    Newton::Escaped => {
                        *warm = false;
                        0.0
                    }
                    Newton::Failed { residual } => {
                        *warm = false;
                        // retry once from the linear prediction
                        chart.predict(s, &t, w);
                        if chart.solve(sc, s, &t, w) == Newton::Converged {
                            *warm = true;
                            return if relative_in_ball(alg, w, r) {
                                chart.surface_element(sc, w).unwrap_or(0.0)
                            } else {
                                0.0
                            };
                        }
                        failure.lock().unwrap().get_or_insert((s.to_vec(), residual));
                        0.0
                    }
                }
            },
        );
        match failure.into_inner().unwrap() {
            Some((node, residual)) => Err(MeasureError::NewtonFailure { node, residual }),
            None => Ok(v),
        }
    })?;
    converge(res, settings)
}

/// `∏ω_{n_k−ñ_k} · 𝒟(Dφ(x))/𝒟(D̂φ(x)) · r^{ν−ν̃}` with the metric restricted
/// to `ker Dφ(x)` orthonormal in frames.
pub fn level_set_prediction(map: &PolynomialContactMap, x: &[f64], r: f64) -> Result<f64, MeasureError> {
    let (sa, ta) = (map.source().algebra(), map.target().algebra());
    let pair = differential_pair(map, x)?;
    let class = classify_differential(map, &pair, Nu0Search::Pruned);
    if class.kind != PointKind::Regular {
        return Err(MeasureError::NotRegular { kind: class.kind });
    }
    let codims = layer_codims(sa, ta)?;
    let constant: f64 = codims.iter().map(|&m| crate::omega::omega(m)).product();
    let ratio = gram_row(&pair.full).expect("Ñ <= N") / gram_row(&pair.hc).expect("Ñ <= N");
    let nu = sa.hausdorff_dimension() - ta.hausdorff_dimension();
    Ok(constant * ratio * r.powi(nu as i32))
}

/// Least-squares fit `log v = log C + e·log r`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticFit {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub exponent: f64,
    pub constant: f64,
    pub r2: f64,
}

pub fn exponent_fit(samples: &[(f64, f64)]) -> Result<AsymptoticFit, MeasureError> {
    if samples.len() < 4 {
        return Err(MeasureError::TooFewRadii(samples.len()));
    }
    if let Some(&(r, value)) = samples.iter().find(|(r, v)| !(*r > 0.0 && *v > 0.0)) {
        return Err(MeasureError::NonPositive { r, value });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let span = sorted[0].0 / sorted[sorted.len() - 1].0;
    if span < 8.0 - 1e-12 {
        return Err(MeasureError::NarrowRadii(span));
    }
    let xs: Vec<f64> = sorted.iter().map(|(r, _)| r.ln()).collect();
    let ys: Vec<f64> = sorted.iter().map(|(_, v)| v.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(AsymptoticFit {
        radii: sorted.iter().map(|s| s.0).collect(),
        values: sorted.iter().map(|s| s.1).collect(),
        exponent,
        constant: intercept.exp(),
        r2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoveringEstimate {
    pub estimate: f64,
    pub balls: usize,
    pub delta: f64,
    pub alpha: u32,
    pub seed: u64,
}

/// `ω_α · (#balls) · δ^α` for a greedy cover of `cloud` by closed
/// `d₂`-balls of radius `δ` centred at cloud points.
///
/// The cloud is scanned in lexicographic order (the seed only breaks exact
/// ties). Each lex-smallest uncovered point selects, among the cloud points
/// within `δ` of it, the lex-largest as the centre of the next ball, so balls
/// extend forward into uncovered territory instead of straddling what is
/// already covered.
pub fn covering_hausdorff_estimate(
    group: &CarnotGroup,
    cloud: &[Vec<f64>],
    alpha: u32,
    delta: f64,
    seed: u64,
) -> Result<CoveringEstimate, MeasureError> {
    if cloud.is_empty() {
        return Err(MeasureError::EmptyCloud);
    }
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let lex = |a: &Vec<f64>, b: &Vec<f64>| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    order.sort_by(|&i, &j| lex(&cloud[i], &cloud[j]));
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| cloud[i].clone()).collect();
    let radius = delta * (1.0 + 1e-9);
    let index = D2Index::new(group, sorted, radius);
    let mut covered = vec![false; index.len()];
    let mut balls = 0usize;
    for pivot in 0..index.len() {
        if covered[pivot] {
            continue;
        }
        // indices follow lexicographic order, so the largest index wins
        let mut center = pivot;
        index.for_each_within(group, &index.points()[pivot], radius, |i, _| {
            center = center.max(i);
            true
        });
        let c = index.points()[center].clone();
        index.for_each_within(group, &c, radius, |i, _| {
            covered[i] = true;
            true
        });
        covered[pivot] = true;
        balls += 1;
    }
    let estimate = crate::omega::omega(alpha) * balls as f64 * delta.powi(alpha as i32);
    Ok(CoveringEstimate {
        estimate,
        balls,
        delta,
        alpha,
        seed,
    })
}

/// Rank of `D̂φ` below `Ñ` at a quadrature node, by the shared threshold.
pub fn hc_rank_deficient(map: &PolynomialContactMap, x: &[f64]) -> Result<bool, MeasureError> {
    let pair = differential_pair(map, x)?;
    let thr = rank_threshold(&pair.full);
    Ok(crate::linalg::rank_above(&pair.hc, thr) < map.target().dim())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn group(alg: GradedNilpotentAlgebra) -> Arc<CarnotGroup> {
        Arc::new(CarnotGroup::new(alg).unwrap())
    }

    fn h1_to_r(expr: &str) -> PolynomialContactMap {
        let h = group(GradedNilpotentAlgebra::heisenberg(1));
        let r = group(GradedNilpotentAlgebra::abelian(1));
        PolynomialContactMap::parse("phi", h, r, &[expr]).unwrap()
    }

    fn paper() -> MeasureConvention {
        MeasureConvention::new(ConventionMode::PaperLiteral)
    }

    #[test]
    fn literal_constant_for_h1_is_eight_ninths() {
        let h = GradedNilpotentAlgebra::heisenberg(1);
        let r = GradedNilpotentAlgebra::abelian(1);
        let c = sr_constant_exact(&h, &r, ConventionMode::PaperLiteral).unwrap();
        assert_eq!(c, PiMonomial::rational(BigRational::new(8.into(), 9.into())));
        let m = h1_to_r("u1");
        assert!((coarea_factor_sr(&m, &[0.2, 0.1, -0.3], paper()).unwrap() - 8.0 / 9.0).abs() < 1e-14);
        assert_eq!(coarea_factor_sr(&h1_to_r("0"), &[0.0; 3], paper()).unwrap(), 0.0);
    }

    #[test]
    fn balanced_constant_balances_densities() {
        for (s, t) in [
            (GradedNilpotentAlgebra::heisenberg(1), GradedNilpotentAlgebra::abelian(1)),
            (GradedNilpotentAlgebra::heisenberg(2), GradedNilpotentAlgebra::abelian(2)),
            (GradedNilpotentAlgebra::engel(), GradedNilpotentAlgebra::abelian(1)),
        ] {
            let lhs = &kappa_exact(&s) * &sr_constant_exact(&s, &t, ConventionMode::Balanced).unwrap();
            let rhs = &kappa_exact(&t) * &density_constant_exact(&s, &t).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn riemannian_factor_and_alpha() {
        assert_eq!(coarea_factor_riemannian(&h1_to_r("u1"), &[0.0; 3]).unwrap(), 1.0);
        let x3 = h1_to_r("u3");
        assert!((coarea_factor_riemannian(&x3, &[1.0, 0.0, 0.0]).unwrap() - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(coarea_factor_riemannian(&h1_to_r("0"), &[0.0; 3]).unwrap(), 0.0);
        let a = measure_density_alpha(&h1_to_r("u1"), &[0.5, -0.5, 0.1]).unwrap();
        assert!((a - PI / 3.0).abs() < 1e-14);
        assert!(matches!(
            measure_density_alpha(&x3, &[0.0; 3]),
            Err(MeasureError::NotRegular { kind: PointKind::Characteristic })
        ));
    }

    #[test]
    fn remark_identity_at_regular_points() {
        // J^SR = 𝒥_Ñ · α · (ω_N/ω_ν)(ω_ν̃/ω_Ñ)
        let m = h1_to_r("u3 + u1^2");
        let x = [0.7, 0.3, -0.2];
        let factor = crate::omega::omega(3) / crate::omega::omega(4);
        let j = coarea_factor_riemannian(&m, &x).unwrap() * measure_density_alpha(&m, &x).unwrap() * factor;
        assert!((coarea_factor_sr(&m, &x, paper()).unwrap() - j).abs() < 1e-12);
    }

    #[test]
    fn tangent_measures() {
        let s = QuadratureSettings::default();
        let r = 0.3;
        let disc = tangent_plane_box_measure(&h1_to_r("u3"), &[0.0; 3], r, &s).unwrap();
        assert!((disc.value / (PI * r * r) - 1.0).abs() < 0.01);
        let rect = tangent_plane_box_measure(&h1_to_r("u1"), &[0.0; 3], r, &s).unwrap();
        assert!((rect.value / (4.0 * r.powi(3)) - 1.0).abs() < 0.01);
        assert!(matches!(
            tangent_plane_box_measure(&h1_to_r("0"), &[0.0; 3], r, &s),
            Err(MeasureError::Degenerate)
        ));
    }

    #[test]
    fn flat_level_set_is_a_rectangle() {
        let s = QuadratureSettings::default();
        for x in [[0.0; 3], [0.4, -0.3, 0.2]] {
            let v = level_set_box_measure(&h1_to_r("u1"), &x, 0.2, &s).unwrap();
            assert!((v.value / (4.0 * 0.2f64.powi(3)) - 1.0).abs() < 0.01, "{x:?}: {}", v.value);
        }
        let p = level_set_prediction(&h1_to_r("u1"), &[0.0; 3], 0.2).unwrap();
        assert!((p - 4.0 * 0.008).abs() < 1e-15);
    }

    #[test]
    fn exact_power_law_fit() {
        let samples: Vec<(f64, f64)> = [0.4, 0.2, 0.1, 0.05].iter().map(|&r| (r, 3.0 * r * r)).collect();
        let fit = exponent_fit(&samples).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-12);
        assert!((fit.constant - 3.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(matches!(
            exponent_fit(&samples[..3]),
            Err(MeasureError::TooFewRadii(3))
        ));
        let narrow: Vec<(f64, f64)> = [0.4, 0.3, 0.2, 0.1].iter().map(|&r| (r, r)).collect();
        assert!(matches!(exponent_fit(&narrow), Err(MeasureError::NarrowRadii(_))));
    }

    #[test]
    fn covering_a_segment() {
        let line = group(GradedNilpotentAlgebra::abelian(1));
        let cloud: Vec<Vec<f64>> = (0..=10_000).map(|i| vec![i as f64 / 10_000.0]).collect();
        let est = covering_hausdorff_estimate(&line, &cloud, 1, 0.01, 0).unwrap();
        assert!((est.estimate - 1.0).abs() < 0.1, "{est:?}");
        assert!(covering_hausdorff_estimate(&line, &[], 1, 0.01, 0).is_err());
    }
}
