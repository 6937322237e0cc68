//! Scaled energies of unfolded corrector fields and h-sweeps towards the
//! homogenized limit.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{CellDiscretization, CorrectorField, Regime, RegimeSpec};
use crate::error::{Error, Result};
use crate::geometry::{macro_strain_field, CrossSection, MacroStrain, TriangleGeometry, TRI_RULE_2, TRI_RULE_5};
use crate::material::{quadratic_energy, svk_energy, NonlinearLaw};
use crate::microstructure::MicrostructureRealization;
use crate::rod::RodSolution;

const GAUSS2: [(f64, f64); 2] = [(-0.577_350_269_189_625_8, 1.0), (0.577_350_269_189_625_8, 1.0)];
const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub h: f64,
    pub epsilon: f64,
    pub scaled_energy: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub limit_value: f64,
    /// Least-squares slope of `log abs_error` against `log h`; `None` when
    /// fewer than two rows have a nonzero error.
    pub fitted_rate: Option<f64>,
}

fn finite_gamma(regime: &RegimeSpec) -> Result<f64> {
    match regime.regime {
        Regime::GammaFinite { gamma } => Ok(gamma),
        r => Err(Error::RegimeMismatch(format!("verification needs gamma_finite, got {}", r.name()))),
    }
}

fn check_pair(regime: &RegimeSpec, corrector: &CorrectorField) -> Result<f64> {
    let gamma = finite_gamma(regime)?;
    if corrector.regime.regime != regime.regime {
        return Err(Error::RegimeMismatch(format!(
            "corrector is {}, requested {}",
            corrector.regime.regime.name(),
            regime.regime.name()
        )));
    }
    Ok(gamma)
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("h must be positive, got {h}")));
    }
    Ok(())
}

/// Pairwise sum in a fixed order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Least-squares slope of `log y` against `log x` over the pairs with `y > 0`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Constant-phase pieces of one cell `[0, ℓ)`, further split at the axial
/// element boundaries of the corrector.
fn cell_pieces(corrector: &CorrectorField, micro: &MicrostructureRealization) -> Vec<(f64, f64, usize)> {
    let ell = corrector.cell_length;
    let n = corrector.layout.n_axial;
    let d = ell / n as f64;
    let mut out = Vec::new();
    for seg in micro.segments(0.0, ell) {
        let mut a = seg.start;
        let mut k = (a / d).floor() as usize + 1;
        while a < seg.end {
            let b = (k as f64 * d).min(seg.end);
            if b - a > 1e-14 * ell {
                out.push((a, b, seg.phase));
            }
            a = b;
            k += 1;
        }
    }
    out
}

/// Pieces `[x_a, x_b)` of `(0, L)` on which both the unfolded coefficients
/// and the corrector polynomial are smooth.
fn axial_pieces(corrector: &CorrectorField, micro: &MicrostructureRealization, eps: f64, length: f64) -> Vec<(f64, f64, usize)> {
    let ell = corrector.cell_length;
    let pieces = cell_pieces(corrector, micro);
    let copies = (length / (eps * ell)).ceil() as usize;
    let mut out = Vec::new();
    for j in 0..copies {
        let off = j as f64 * ell;
        for &(a, b, p) in &pieces {
            let xa = eps * (off + a);
            let xb = (eps * (off + b)).min(length);
            if xb > xa {
                out.push((xa, xb, p));
            }
        }
    }
    out
}

fn scaled_gradient(grad: &Matrix3<f64>, gamma: f64) -> Matrix3<f64> {
    let mut g = *grad;
    for k in 0..3 {
        g[(k, 1)] /= gamma;
        g[(k, 2)] /= gamma;
    }
    g
}

fn unfolded_at(
    corrector: &CorrectorField,
    ms: &MacroStrain,
    gamma: f64,
    g: &TriangleGeometry,
    s: f64,
    bary: &[f64; 3],
) -> Result<Matrix3<f64>> {
    let (_, grad) = corrector.evaluate_finite(g, s, bary)?;
    let mut m = scaled_gradient(&grad, gamma);
    let col = macro_strain_field(ms, g.point(bary));
    for k in 0..3 {
        m[(k, 0)] += col[k];
    }
    Ok(0.5 * (m + m.transpose()))
}

/// `sym ι(m(x′)) + sym(D₁ϑ | γ⁻¹∇′ϑ)` at the unfolded coordinate `s = x₁/ε`.
pub fn unfolded_strain(
    h: f64,
    regime: &RegimeSpec,
    corrector: &CorrectorField,
    ms: &MacroStrain,
    x: [f64; 3],
    cs: &CrossSection,
) -> Result<Matrix3<f64>> {
    check_h(h)?;
    let gamma = check_pair(regime, corrector)?;
    let (t, bary) = cs
        .locate([x[1], x[2]])
        .ok_or_else(|| Error::InvalidParameter(format!("point ({}, {}) lies outside the section", x[1], x[2])))?;
    let eps = h / gamma;
    unfolded_at(corrector, ms, gamma, &cs.triangle(t), x[0] / eps, &bary)
}

/// `∫₀ᴸ∫_ω Q(C(x₁/ε), unfolded strain)` with segment-aligned axial Gauss
/// quadrature, exact for the discrete fields.
pub fn scaled_quadratic_energy(
    h: f64,
    regime: &RegimeSpec,
    corrector: &CorrectorField,
    ms: &MacroStrain,
    cs: &CrossSection,
    micro: &MicrostructureRealization,
    length: f64,
) -> Result<f64> {
    check_h(h)?;
    let gamma = check_pair(regime, corrector)?;
    if !(length > 0.0) {
        return Err(Error::InvalidParameter(format!("length must be positive, got {length}")));
    }
    let eps = h / gamma;
    let geo = cs.geometries();
    let parts: Vec<f64> = axial_pieces(corrector, micro, eps, length)
        .par_iter()
        .map(|&(xa, xb, p)| {
            let c = micro.tensor(p);
            let half = 0.5 * (xb - xa);
            let mut acc = 0.0;
            for (xi, wx) in GAUSS2 {
                let s = (0.5 * (xa + xb) + half * xi) / eps;
                for g in &geo {
                    for (bary, wt) in TRI_RULE_2 {
                        let e = unfolded_at(corrector, ms, gamma, g, s, &bary)?;
                        acc += wx * half * wt * g.area * quadratic_energy(c, &e);
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&parts))
}

/// Sweeps `h_list` at fixed macro strain; the limit is `L·½vᵀa0v`.
pub fn convergence_sweep(
    h_list: &[f64],
    regime: &RegimeSpec,
    cs: &CrossSection,
    micro: &MicrostructureRealization,
    ms: &MacroStrain,
    length: f64,
) -> Result<SweepResult> {
    if h_list.is_empty() {
        return Err(Error::InvalidParameter("h_list is empty".into()));
    }
    if h_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter("h_list must be strictly decreasing".into()));
    }
    let gamma = finite_gamma(regime)?;
    let disc = CellDiscretization::new(regime, cs, micro)?;
    let eff = disc.effective_form()?;
    let corrector = disc.solve(ms)?;
    let v = Vector4::from(ms.as_vector());
    let limit_value = length * 0.5 * v.dot(&(eff.a0 * v));
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let e = scaled_quadratic_energy(h, regime, &corrector, ms, cs, micro, length)?;
        rows.push(SweepRow { h, epsilon: h / gamma, scaled_energy: e, abs_error: (e - limit_value).abs() });
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.abs_error).collect();
    Ok(SweepResult { fitted_rate: loglog_slope(&hs, &errs), rows, limit_value })
}

/// Rod fields needed by the ansatz, linearly interpolated in `x₁`.
struct RodFields<'a> {
    sol: &'a RodSolution,
    kappa_p: Vec<Vector3<f64>>,
    stretch_p: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct RodPoint {
    up: f64,
    vp: [f64; 2],
    w: f64,
    /// `(ρ, κ)` and its `x₁`-derivative.
    coeff: [f64; 4],
    coeff_p: [f64; 4],
}

fn nodal_derivative(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            (y[b] - y[a]) / (x[b] - x[a])
        })
        .collect()
}

impl<'a> RodFields<'a> {
    fn new(sol: &'a RodSolution) -> Result<Self> {
        let n = sol.grid.len();
        if n < 2 {
            return Err(Error::InvalidParameter("rod solution needs at least two nodes".into()));
        }
        let kap: Vec<Vector3<f64>> = (0..n).map(|i| sol.kappa(i)).collect();
        let comp = |k: usize| nodal_derivative(&sol.grid, &kap.iter().map(|v| v[k]).collect::<Vec<_>>());
        let (k0, k1, k2) = (comp(0), comp(1), comp(2));
        let kappa_p = (0..n).map(|i| Vector3::new(k0[i], k1[i], k2[i])).collect();
        let st: Vec<f64> = (0..n).map(|i| sol.stretch(i)).collect();
        Ok(Self { sol, kappa_p, stretch_p: nodal_derivative(&sol.grid, &st) })
    }

    fn at(&self, x: f64) -> RodPoint {
        let g = &self.sol.grid;
        let n = g.len();
        let i = g.partition_point(|&t| t <= x).clamp(1, n - 1) - 1;
        let t = ((x - g[i]) / (g[i + 1] - g[i])).clamp(0.0, 1.0);
        let lerp = |y: &[f64]| (1.0 - t) * y[i] + t * y[i + 1];
        let s = self.sol;
        let (v2p, v3p) = (lerp(&s.v2p), lerp(&s.v3p));
        let up = lerp(&s.up);
        let kappa = [lerp(&s.wp), -lerp(&s.v3pp), lerp(&s.v2pp)];
        let kp = (1.0 - t) * self.kappa_p[i] + t * self.kappa_p[i + 1];
        RodPoint {
            up,
            vp: [v2p, v3p],
            w: lerp(&s.w),
            coeff: [up + 0.5 * (v2p * v2p + v3p * v3p), kappa[0], kappa[1], kappa[2]],
            coeff_p: [lerp(&self.stretch_p), kp[0], kp[1], kp[2]],
        }
    }
}

fn skew_a(w: f64, v2p: f64, v3p: f64) -> Matrix3<f64> {
    Matrix3::new(0.0, -v2p, -v3p, v2p, 0.0, -w, v3p, w, 0.0)
}

/// `exp(hA)` and its `x₁`-derivative from the block exponential.
fn rotation_and_derivative(h: f64, a: &Matrix3<f64>, ap: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let mut b = Matrix6::zeros();
    b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(h * a));
    b.fixed_view_mut::<3, 3>(3, 3).copy_from(&(h * a));
    b.fixed_view_mut::<3, 3>(0, 3).copy_from(&(h * ap));
    let e = b.exp();
    (e.fixed_view::<3, 3>(0, 0).into_owned(), e.fixed_view::<3, 3>(0, 3).into_owned())
}

/// `h⁻⁴∫₀ᴸ∫_ω W(C(x₁/ε), ∇_hŷʰ)` for the recovery ansatz built from the rod
/// fields in `sol`, the rotation `exp(hA)` and the unit-strain correctors
/// combined with the local `(ρ, κ)`.
#[allow(clippy::too_many_arguments)]
pub fn ansatz_energy_nonlinear(
    h: f64,
    sol: &RodSolution,
    correctors: &[CorrectorField; 4],
    laws: &[NonlinearLaw],
    cs: &CrossSection,
    micro: &MicrostructureRealization,
    regime: &RegimeSpec,
) -> Result<f64> {
    check_h(h)?;
    let mut gamma = 0.0;
    for c in correctors {
        gamma = check_pair(regime, c)?;
    }
    if laws.len() != micro.n_phases() {
        return Err(Error::ShapeMismatch(format!("{} laws for {} phases", laws.len(), micro.n_phases())));
    }
    let length = *sol.grid.last().expect("non-empty grid") - sol.grid[0];
    let x0 = sol.grid[0];
    let eps = h / gamma;
    let fields = RodFields::new(sol)?;
    let geo = cs.geometries();
    let max_piece = length / 64.0;
    let pieces: Vec<(f64, f64, usize)> = axial_pieces(&correctors[0], micro, eps, length)
        .into_iter()
        .flat_map(|(a, b, p)| {
            let m = ((b - a) / max_piece).ceil().max(1.0) as usize;
            (0..m).map(move |k| (a + (b - a) * k as f64 / m as f64, a + (b - a) * (k + 1) as f64 / m as f64, p))
        })
        .collect();
    let parts: Vec<f64> = pieces
        .par_iter()
        .map(|&(xa, xb, p)| {
            let law = &laws[p];
            let half = 0.5 * (xb - xa);
            let mut acc = 0.0;
            for (xi, wx) in GAUSS3 {
                let x1 = 0.5 * (xa + xb) + half * xi;
                let rp = fields.at(x0 + x1);
                let a = skew_a(rp.w, rp.vp[0], rp.vp[1]);
                let ap = skew_a(rp.coeff[1], rp.coeff[3], -rp.coeff[2]);
                let (r, rd) = rotation_and_derivative(h, &a, &ap);
                let s = x1 / eps;
                for g in &geo {
                    for (bary, wt) in TRI_RULE_5 {
                        let [x2, x3] = g.point(&bary);
                        let mut th = Vector3::zeros();
                        let mut dth = Matrix3::zeros();
                        let mut thp = Vector3::zeros();
                        for (i, c) in correctors.iter().enumerate() {
                            let (val, grad) = c.evaluate_finite(g, s, &bary)?;
                            th += rp.coeff[i] * val;
                            dth += rp.coeff[i] * grad;
                            thp += rp.coeff_p[i] * val;
                        }
                        // β = (h/γ)Θ(x₁/ε, x′): ∂₁β = D₁Θ + (h/γ)∂ₓΘ, ∂ⱼβ = (h/γ)∂ⱼΘ
                        let d1b = dth.column(0) + (h / gamma) * thp;
                        let djb = |j: usize, k: usize| (h / gamma) * dth[(k, j)];
                        let xperp = [0.0, -x3, x2];
                        let h2 = h * h;
                        let mut f = Matrix3::identity();
                        f[(0, 0)] += h2 * (rp.up - x2 * rd[(1, 0)] / h - x3 * rd[(2, 0)] / h) + h2 * d1b[0];
                        for j in 1..3 {
                            f[(0, j)] = -r[(j, 0)] + h * djb(j, 0);
                        }
                        for i in 1..3 {
                            f[(i, 0)] = h * rp.vp[i - 1] + h2 * rp.coeff[1] * xperp[i] + h2 * d1b[i];
                        }
                        // ∂ⱼx^⊥ᵢ: ∂₃x₂^⊥ = −1, ∂₂x₃^⊥ = 1
                        f[(1, 2)] += -h * rp.w;
                        f[(2, 1)] += h * rp.w;
                        for i in 1..3 {
                            for j in 1..3 {
                                f[(i, j)] += h * djb(j, i);
                            }
                        }
                        acc += wx * half * wt * g.area * svk_energy(law, &f);
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&parts) / h.powi(4))
}
