//! Corrector (cell) problems for the three scale regimes, the effective 4×4
//! form and its reduction.
//!
//! The axial cell `[0, ℓ)` is split into `N` periodic P1 elements; the section
//! carries P1 triangles. Strains are written in the orthonormal Voigt basis.
//!
//! * `gamma_finite`: `ϑ¹(s, x′)` is P1⊗P1, enriched on components 2 and 3 by one
//!   quadratic axial bubble per element. Strain `ι(m) + (D₁ϑ¹ | γ⁻¹∇′ϑ¹)`.
//! * `gamma_zero`: `Ψ¹(s)`, `ϑ¹(s)` P1 in `s`; `ϑ²` P1 in `x′` and constant on
//!   each axial element. Strain `ι(m + (D₁Ψ¹)p) + (D₁ϑ¹ | ∇′ϑ²)`.
//! * `gamma_infinite`: `ϑ¹(s, x′)` P1⊗P1 seen only through `D₁`; `ϑ²(x′)`.
//!   Strain `ι(m) + (D₁ϑ¹ | ∇′ϑ²)`.
//!
//! Gauge fixing is done by orthogonal projection onto the constraint space
//! inside a preconditioned conjugate gradient iteration.

use nalgebra::{DMatrix, Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::geometry::{macro_strain_field, CrossSection, MacroStrain, TriangleGeometry, TRI_RULE_2};
use crate::material::{ElasticityTensor, SQRT_2};
use crate::microstructure::MicrostructureRealization;

pub const PCG_TOLERANCE: f64 = 1e-10;
pub const PCG_MAX_ITER: usize = 100_000;

/// Scale regime `γ = lim h/ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    GammaZero,
    GammaFinite { gamma: f64 },
    GammaInfinite,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::GammaZero => "gamma_zero",
            Regime::GammaFinite { .. } => "gamma_finite",
            Regime::GammaInfinite => "gamma_infinite",
        }
    }
}

/// Regime plus axial discretization of the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    #[serde(flatten)]
    pub regime: Regime,
    /// Number of axial nodes `N` on the periodic cell.
    pub n_axial: usize,
    /// RVE window length `T`; defaults to the period for periodic layouts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
}

impl RegimeSpec {
    pub fn gamma_finite(gamma: f64, n_axial: usize) -> Self {
        Self { regime: Regime::GammaFinite { gamma }, n_axial, window: None }
    }

    pub fn gamma_zero(n_axial: usize) -> Self {
        Self { regime: Regime::GammaZero, n_axial, window: None }
    }

    pub fn gamma_infinite(n_axial: usize) -> Self {
        Self { regime: Regime::GammaInfinite, n_axial, window: None }
    }

    pub fn with_window(mut self, window: f64) -> Self {
        self.window = Some(window);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Regime::GammaFinite { gamma } = self.regime {
            if !(gamma > 0.0) || !gamma.is_finite() {
                return Err(Error::InvalidParameter(format!("gamma must be positive and finite (got {gamma})")));
            }
        }
        if self.n_axial < 2 {
            return Err(Error::InvalidParameter(format!("n_axial must be at least 2 (got {})", self.n_axial)));
        }
        if let Some(t) = self.window {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::InvalidParameter(format!("window must be positive (got {t})")));
            }
        }
        Ok(())
    }

    /// Length `ℓ` of the axial cell.
    pub fn cell_length(&self, micro: &MicrostructureRealization) -> Result<f64> {
        match (self.window, micro.period()) {
            (Some(t), Some(p)) => {
                let k = (t / p).round();
                if k < 1.0 || (t - k * p).abs() > 1e-12 * t {
                    return Err(Error::InvalidParameter(format!(
                        "window {t} is not a multiple of the period {p}"
                    )));
                }
                Ok(t)
            }
            (Some(t), None) => Ok(t),
            (None, Some(p)) => Ok(p),
            (None, None) => Err(Error::InvalidParameter(
                "non-periodic microstructure needs an RVE window length".into(),
            )),
        }
    }

    fn inv_gamma(&self) -> f64 {
        match self.regime {
            Regime::GammaFinite { gamma } => 1.0 / gamma,
            _ => 0.0,
        }
    }
}

/// Index map from unknowns to positions in the flat coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofLayout {
    kind: Kind,
    pub n_axial: usize,
    pub n_vertices: usize,
    /// `gamma_finite` only: explicit skew corrector `Ψ¹` next to `ϑ¹`.
    pub skew_block: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Zero,
    Finite,
    Infinite,
}

impl DofLayout {
    fn new(regime: &Regime, n_axial: usize, n_vertices: usize, skew_block: bool) -> Self {
        let kind = match regime {
            Regime::GammaZero => Kind::Zero,
            Regime::GammaFinite { .. } => Kind::Finite,
            Regime::GammaInfinite => Kind::Infinite,
        };
        Self { kind, n_axial, n_vertices, skew_block }
    }

    fn nodal_len(&self) -> usize {
        3 * self.n_axial * self.n_vertices
    }

    /// Nodal value of component `k` at axial node `a`, vertex `v`
    /// (`ϑ¹` for `gamma_finite` and `gamma_infinite`).
    pub fn theta(&self, a: usize, v: usize, k: usize) -> usize {
        debug_assert!(self.kind != Kind::Zero);
        (a * self.n_vertices + v) * 3 + k
    }

    /// Axial bubble on element `e`, component `k ∈ {1, 2}` (`gamma_finite`).
    pub fn bubble(&self, e: usize, k: usize) -> usize {
        debug_assert!(self.kind == Kind::Finite && (k == 1 || k == 2));
        self.nodal_len() + 2 * e + (k - 1)
    }

    /// Axial-vector component `j` of `Ψ¹` at node `a`.
    pub fn psi(&self, a: usize, j: usize) -> usize {
        match self.kind {
            Kind::Zero => 3 * a + j,
            _ => self.nodal_len() + 2 * self.n_axial + 3 * a + j,
        }
    }

    /// `ϑ¹(s)` component `k` at node `a` (`gamma_zero`).
    pub fn theta1_axial(&self, a: usize, k: usize) -> usize {
        debug_assert!(self.kind == Kind::Zero);
        3 * self.n_axial + 3 * a + k
    }

    /// `ϑ²` at vertex `v`, component `k`; `e` is the axial element for
    /// `gamma_zero` and ignored for `gamma_infinite`.
    pub fn theta2(&self, e: usize, v: usize, k: usize) -> usize {
        match self.kind {
            Kind::Zero => 6 * self.n_axial + (e * self.n_vertices + v) * 3 + k,
            _ => self.nodal_len() + 3 * v + k,
        }
    }

    pub fn len(&self) -> usize {
        match self.kind {
            Kind::Zero => 6 * self.n_axial + self.nodal_len(),
            Kind::Finite => self.nodal_len() + 2 * self.n_axial + if self.skew_block { 3 * self.n_axial } else { 0 },
            Kind::Infinite => self.nodal_len() + 3 * self.n_vertices,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Discrete corrector: coefficients in a [`DofLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorField {
    pub regime: RegimeSpec,
    pub layout: DofLayout,
    pub cell_length: f64,
    pub values: Vec<f64>,
    pub stats: SolveStats,
}

impl CorrectorField {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Value and unscaled gradient `[D₁ϑ | ∂₂ϑ | ∂₃ϑ]` of a `gamma_finite`
    /// corrector at axial coordinate `s` (wrapped into the cell) and a point of
    /// triangle `g`.
    pub fn evaluate_finite(&self, g: &TriangleGeometry, s: f64, bary: &[f64; 3]) -> Result<(Vector3<f64>, Matrix3<f64>)> {
        if self.layout.kind != Kind::Finite || self.layout.skew_block {
            return Err(Error::RegimeMismatch(format!("expected a plain gamma_finite corrector, got {}", self.regime.regime.name())));
        }
        let l = &self.layout;
        let n = l.n_axial;
        let d = self.cell_length / n as f64;
        let sw = s.rem_euclid(self.cell_length);
        let e = ((sw / d).floor() as usize).min(n - 1);
        let t = (sw / d - e as f64).clamp(0.0, 1.0);
        let (a, b) = (e, (e + 1) % n);
        let x = &self.values;
        let mut val = Vector3::zeros();
        let mut grad = Matrix3::zeros();
        for j in 0..3 {
            let v = g.nodes[j];
            for k in 0..3 {
                let (ua, ub) = (x[l.theta(a, v, k)], x[l.theta(b, v, k)]);
                let u = (1.0 - t) * ua + t * ub;
                val[k] += bary[j] * u;
                grad[(k, 0)] += bary[j] * (ub - ua) / d;
                grad[(k, 1)] += u * g.grads[j][0];
                grad[(k, 2)] += u * g.grads[j][1];
            }
        }
        for k in 1..3 {
            let c = x[l.bubble(e, k)];
            val[k] += c * 4.0 * t * (1.0 - t);
            grad[(k, 0)] += c * (4.0 - 8.0 * t) / d;
        }
        Ok((val, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Quadrature point of the cell integral `ℓ⁻¹∫₀^ℓ∫_ω`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellQuadPoint {
    pub elem: usize,
    /// Local axial coordinate in `[0, 1]`.
    pub t: f64,
    pub s: f64,
    pub tri: usize,
    pub bary: [f64; 3],
    pub xp: [f64; 2],
    pub weight: f64,
    pub phase: usize,
}

/// Linear constraints on a set of unknowns disjoint from all other groups.
#[derive(Debug, Clone)]
pub struct GaugeGroup {
    pub indices: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    gram_inv: DMatrix<f64>,
}

impl GaugeGroup {
    fn new(indices: Vec<usize>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        assert!(m <= 4);
        let gram = DMatrix::from_fn(m, m, |i, j| rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum());
        let gram_inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Singular("gauge constraints are linearly dependent".into()))?;
        Ok(Self { indices, rows, gram_inv })
    }

    fn apply(&self, row: usize, x: &[f64]) -> f64 {
        self.indices.iter().zip(&self.rows[row]).map(|(&i, c)| c * x[i]).sum()
    }

    fn project(&self, x: &mut [f64]) {
        let m = self.rows.len();
        let mut y = [0.0; 4];
        for (r, yr) in y.iter_mut().enumerate().take(m) {
            *yr = self.apply(r, x);
        }
        let mut z = [0.0; 4];
        for r in 0..m {
            for q in 0..m {
                z[r] += self.gram_inv[(r, q)] * y[q];
            }
        }
        for (p, &i) in self.indices.iter().enumerate() {
            let mut d = 0.0;
            for r in 0..m {
                d += self.rows[r][p] * z[r];
            }
            x[i] -= d;
        }
    }
}

/// Assembled quadratic functional `J(x) = ½xᵀKx − fᵀx + ½ vᵀMv` for macro
/// strain `v = (ρ, κ)`: `f = Σ vᵢ fᵢ`.
#[derive(Debug, Clone)]
pub struct CellSystem {
    pub stiffness: CsMat<f64>,
    pub rhs: [Vec<f64>; 4],
    /// Gram matrix of the four unit macro strains (zero corrector).
    pub gram: Matrix4<f64>,
}

/// Geometry, coefficients and unknown layout of one cell problem.
#[derive(Debug, Clone)]
pub struct CellDiscretization {
    pub regime: RegimeSpec,
    pub layout: DofLayout,
    pub cell_length: f64,
    geo: Vec<TriangleGeometry>,
    tensors: Vec<ElasticityTensor>,
    /// Per axial element: phase pieces `(t₀, t₁, phase)` in local coordinates.
    pieces: Vec<Vec<(f64, f64, usize)>>,
    mass: Vec<f64>,
    mom2: Vec<f64>,
    mom3: Vec<f64>,
    area: f64,
    first2: f64,
    first3: f64,
}

#[inline]
fn sym_unit(r: usize, c: usize, val: f64) -> Vector6<f64> {
    let mut v = Vector6::zeros();
    if r == c {
        v[r] = val;
    } else {
        let idx = match (r.min(c), r.max(c)) {
            (1, 2) => 3,
            (0, 2) => 4,
            _ => 5,
        };
        v[idx] = val / SQRT_2;
    }
    v
}

/// Voigt coordinates of `sym ι(w) = sym(w ⊗ e₁)`.
#[inline]
fn iota(w: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(w[0], 0.0, 0.0, 0.0, w[2] / SQRT_2, w[1] / SQRT_2)
}

fn unit_macro_column(i: usize, xp: [f64; 2]) -> Vector3<f64> {
    macro_strain_field(&MacroStrain::unit(i), xp)
}

fn skew_column(psi: [f64; 3], xp: [f64; 2]) -> Vector3<f64> {
    macro_strain_field(&MacroStrain::new(0.0, psi), xp)
}

const GAUSS2: [f64; 2] = [0.5 - 0.288_675_134_594_812_9, 0.5 + 0.288_675_134_594_812_9];

impl CellDiscretization {
    pub fn new(regime: &RegimeSpec, cs: &CrossSection, micro: &MicrostructureRealization) -> Result<Self> {
        Self::build(regime, cs, micro, false)
    }

    /// `gamma_finite` space augmented with an explicit `Ψ¹` block.
    pub fn with_skew_block(regime: &RegimeSpec, cs: &CrossSection, micro: &MicrostructureRealization) -> Result<Self> {
        if !matches!(regime.regime, Regime::GammaFinite { .. }) {
            return Err(Error::RegimeMismatch("skew block is only defined for gamma_finite".into()));
        }
        Self::build(regime, cs, micro, true)
    }

    fn build(regime: &RegimeSpec, cs: &CrossSection, micro: &MicrostructureRealization, skew: bool) -> Result<Self> {
        regime.validate()?;
        cs.validate()?;
        let cell_length = regime.cell_length(micro)?;
        let n = regime.n_axial;
        let d = cell_length / n as f64;
        let pieces = (0..n)
            .map(|e| {
                let s0 = e as f64 * d;
                micro
                    .segments(s0, s0 + d)
                    .into_iter()
                    .map(|sg| (((sg.start - s0) / d).max(0.0), ((sg.end - s0) / d).min(1.0), sg.phase))
                    .filter(|p| p.1 > p.0)
                    .collect()
            })
            .collect();
        let geo = cs.geometries();
        let nv = cs.n_vertices();
        let (mut mass, mut mom2, mut mom3) = (vec![0.0; nv], vec![0.0; nv], vec![0.0; nv]);
        let (mut area, mut first2, mut first3) = (0.0, 0.0, 0.0);
        for g in &geo {
            let sx: f64 = g.corners.iter().map(|c| c[0]).sum();
            let sy: f64 = g.corners.iter().map(|c| c[1]).sum();
            area += g.area;
            first2 += g.area * sx / 3.0;
            first3 += g.area * sy / 3.0;
            for (j, &v) in g.nodes.iter().enumerate() {
                mass[v] += g.area / 3.0;
                mom2[v] += g.area / 12.0 * (sx + g.corners[j][0]);
                mom3[v] += g.area / 12.0 * (sy + g.corners[j][1]);
            }
        }
        let tensors = (0..micro.n_phases()).map(|p| *micro.tensor(p)).collect();
        Ok(Self {
            regime: *regime,
            layout: DofLayout::new(&regime.regime, n, nv, skew),
            cell_length,
            geo,
            tensors,
            pieces,
            mass,
            mom2,
            mom3,
            area,
            first2,
            first3,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.layout.len()
    }

    fn h_axial(&self) -> f64 {
        self.cell_length / self.layout.n_axial as f64
    }

    fn nodes(&self, e: usize) -> (usize, usize) {
        (e, (e + 1) % self.layout.n_axial)
    }

    pub fn zero_field(&self) -> CorrectorField {
        self.field(vec![0.0; self.n_dofs()], SolveStats::default())
    }

    pub fn field(&self, values: Vec<f64>, stats: SolveStats) -> CorrectorField {
        CorrectorField { regime: self.regime, layout: self.layout, cell_length: self.cell_length, values, stats }
    }

    /// Quadrature exact for every integrand of the discrete functional.
    pub fn quadrature_points(&self) -> Vec<CellQuadPoint> {
        let d = self.h_axial();
        let scale = d / self.cell_length;
        let finite = self.layout.kind == Kind::Finite;
        let mut out = Vec::new();
        for (e, pieces) in self.pieces.iter().enumerate() {
            for &(t0, t1, phase) in pieces {
                let axial: Vec<(f64, f64)> = if finite {
                    GAUSS2.iter().map(|g| (t0 + (t1 - t0) * g, 0.5 * (t1 - t0) * scale)).collect()
                } else {
                    vec![(0.5 * (t0 + t1), (t1 - t0) * scale)]
                };
                for (t, ws) in axial {
                    for (tri, g) in self.geo.iter().enumerate() {
                        for (bary, wq) in TRI_RULE_2 {
                            out.push(CellQuadPoint {
                                elem: e,
                                t,
                                s: (e as f64 + t) * d,
                                tri,
                                bary,
                                xp: g.point(&bary),
                                weight: ws * wq * g.area,
                                phase,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Symmetric strain of `values` under macro strain `ms` at a quadrature
    /// point, evaluated directly from the field representation.
    pub fn strain_at(&self, values: &[f64], ms: &MacroStrain, qp: &CellQuadPoint) -> Matrix3<f64> {
        let l = &self.layout;
        let d = self.h_axial();
        let (a, b) = self.nodes(qp.elem);
        let g = &self.geo[qp.tri];
        let lam = qp.bary;
        let t = qp.t;
        let mut h = Matrix3::zeros();
        let col0 = macro_strain_field(ms, qp.xp);
        for k in 0..3 {
            h[(k, 0)] = col0[k];
        }
        match l.kind {
            Kind::Finite => {
                let c = self.regime.inv_gamma();
                for j in 0..3 {
                    let v = g.nodes[j];
                    for k in 0..3 {
                        let (ua, ub) = (values[l.theta(a, v, k)], values[l.theta(b, v, k)]);
                        let u = (1.0 - t) * ua + t * ub;
                        h[(k, 0)] += lam[j] * (ub - ua) / d;
                        h[(k, 1)] += c * u * g.grads[j][0];
                        h[(k, 2)] += c * u * g.grads[j][1];
                    }
                }
                for k in 1..3 {
                    h[(k, 0)] += values[l.bubble(qp.elem, k)] * (4.0 - 8.0 * t) / d;
                }
                if l.skew_block {
                    let dpsi = std::array::from_fn(|j| (values[l.psi(b, j)] - values[l.psi(a, j)]) / d);
                    let w = skew_column(dpsi, qp.xp);
                    for k in 0..3 {
                        h[(k, 0)] += w[k];
                    }
                }
            }
            Kind::Zero => {
                let dpsi = std::array::from_fn(|j| (values[l.psi(b, j)] - values[l.psi(a, j)]) / d);
                let w = skew_column(dpsi, qp.xp);
                for k in 0..3 {
                    h[(k, 0)] += w[k] + (values[l.theta1_axial(b, k)] - values[l.theta1_axial(a, k)]) / d;
                }
                for j in 0..3 {
                    let v = g.nodes[j];
                    for k in 0..3 {
                        let u = values[l.theta2(qp.elem, v, k)];
                        h[(k, 1)] += u * g.grads[j][0];
                        h[(k, 2)] += u * g.grads[j][1];
                    }
                }
            }
            Kind::Infinite => {
                for j in 0..3 {
                    let v = g.nodes[j];
                    for k in 0..3 {
                        h[(k, 0)] += lam[j] * (values[l.theta(b, v, k)] - values[l.theta(a, v, k)]) / d;
                        let u = values[l.theta2(0, v, k)];
                        h[(k, 1)] += u * g.grads[j][0];
                        h[(k, 2)] += u * g.grads[j][1];
                    }
                }
            }
        }
        0.5 * (h + h.transpose())
    }

    /// `ℓ⁻¹∫∫ Q(strain)` by direct quadrature.
    pub fn energy(&self, values: &[f64], ms: &MacroStrain) -> f64 {
        self.quadrature_points()
            .iter()
            .map(|qp| {
                let v = crate::material::sym_coords(&self.strain_at(values, ms, qp));
                qp.weight * self.tensors[qp.phase].energy_coords(&v)
            })
            .sum()
    }

    pub fn tensor(&self, phase: usize) -> &ElasticityTensor {
        &self.tensors[phase]
    }

    /// Unknowns touched by axial element `e` and triangle `tri`, in the
    /// order used by [`Self::local_strains`].
    fn local_dofs(&self, e: usize, tri: usize) -> Vec<usize> {
        let l = &self.layout;
        let (a, b) = self.nodes(e);
        let verts = self.geo[tri].nodes;
        let mut out = Vec::with_capacity(27);
        match l.kind {
            Kind::Finite => {
                for node in [a, b] {
                    for v in verts {
                        for k in 0..3 {
                            out.push(l.theta(node, v, k));
                        }
                    }
                }
                out.extend([l.bubble(e, 1), l.bubble(e, 2)]);
                if l.skew_block {
                    for node in [a, b] {
                        for j in 0..3 {
                            out.push(l.psi(node, j));
                        }
                    }
                }
            }
            Kind::Zero => {
                for node in [a, b] {
                    for j in 0..3 {
                        out.push(l.psi(node, j));
                    }
                }
                for node in [a, b] {
                    for k in 0..3 {
                        out.push(l.theta1_axial(node, k));
                    }
                }
                for v in verts {
                    for k in 0..3 {
                        out.push(l.theta2(e, v, k));
                    }
                }
            }
            Kind::Infinite => {
                for node in [a, b] {
                    for v in verts {
                        for k in 0..3 {
                            out.push(l.theta(node, v, k));
                        }
                    }
                }
                for v in verts {
                    for k in 0..3 {
                        out.push(l.theta2(0, v, k));
                    }
                }
            }
        }
        out
    }

    /// Strain of each local basis function at `(t, bary)`.
    fn local_strains(&self, t: f64, g: &TriangleGeometry, bary: &[f64; 3], xp: [f64; 2], out: &mut Vec<Vector6<f64>>) {
        out.clear();
        let d = self.h_axial();
        let phi = [1.0 - t, t];
        let dphi = [-1.0 / d, 1.0 / d];
        match self.layout.kind {
            Kind::Finite => {
                let c = self.regime.inv_gamma();
                for i in 0..2 {
                    for j in 0..3 {
                        for k in 0..3 {
                            out.push(
                                sym_unit(k, 0, dphi[i] * bary[j])
                                    + sym_unit(k, 1, c * phi[i] * g.grads[j][0])
                                    + sym_unit(k, 2, c * phi[i] * g.grads[j][1]),
                            );
                        }
                    }
                }
                for k in 1..3 {
                    out.push(sym_unit(k, 0, (4.0 - 8.0 * t) / d));
                }
                if self.layout.skew_block {
                    for ds in dphi {
                        for j in 0..3 {
                            let mut psi = [0.0; 3];
                            psi[j] = ds;
                            out.push(iota(&skew_column(psi, xp)));
                        }
                    }
                }
            }
            Kind::Zero => {
                for ds in dphi {
                    for j in 0..3 {
                        let mut psi = [0.0; 3];
                        psi[j] = ds;
                        out.push(iota(&skew_column(psi, xp)));
                    }
                }
                for ds in dphi {
                    for k in 0..3 {
                        out.push(sym_unit(k, 0, ds));
                    }
                }
                for j in 0..3 {
                    for k in 0..3 {
                        out.push(sym_unit(k, 1, g.grads[j][0]) + sym_unit(k, 2, g.grads[j][1]));
                    }
                }
            }
            Kind::Infinite => {
                for ds in dphi {
                    for j in 0..3 {
                        for k in 0..3 {
                            out.push(sym_unit(k, 0, ds * bary[j]));
                        }
                    }
                }
                for j in 0..3 {
                    for k in 0..3 {
                        out.push(sym_unit(k, 1, g.grads[j][0]) + sym_unit(k, 2, g.grads[j][1]));
                    }
                }
            }
        }
    }

    /// Axial sample points `(t, weight, stiffness)` of element `e`.
    fn axial_points(&self, e: usize) -> Vec<(f64, f64, Matrix6<f64>)> {
        let scale = self.h_axial() / self.cell_length;
        if self.layout.kind == Kind::Finite {
            self.pieces[e]
                .iter()
                .flat_map(|&(t0, t1, p)| {
                    let m = *self.tensors[p].matrix();
                    GAUSS2.map(move |g| (t0 + (t1 - t0) * g, 0.5 * (t1 - t0) * scale, m))
                })
                .collect()
        } else {
            // strain is constant along the element: average the coefficients
            let parts: Vec<(f64, &ElasticityTensor)> =
                self.pieces[e].iter().map(|&(t0, t1, p)| (t1 - t0, &self.tensors[p])).collect();
            vec![(0.5, scale, ElasticityTensor::weighted_sum(&parts))]
        }
    }

    pub fn assemble(&self) -> CellSystem {
        let n = self.n_dofs();
        let mut trip = TriMat::new((n, n));
        let mut rhs: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        let mut gram = Matrix4::zeros();
        let mut basis = Vec::with_capacity(27);
        let mut cb: Vec<Vector6<f64>> = Vec::with_capacity(27);
        for e in 0..self.layout.n_axial {
            let axial = self.axial_points(e);
            for (tri, g) in self.geo.iter().enumerate() {
                let dofs = self.local_dofs(e, tri);
                let m = dofs.len();
                let mut kloc = DMatrix::<f64>::zeros(m, m);
                let mut floc = [[0.0f64; 27]; 4];
                for (t, ws, c) in &axial {
                    for (bary, wq) in TRI_RULE_2 {
                        let w = ws * wq * g.area;
                        let xp = g.point(&bary);
                        self.local_strains(*t, g, &bary, xp, &mut basis);
                        cb.clear();
                        cb.extend(basis.iter().map(|b| c * b));
                        let gm: [Vector6<f64>; 4] = std::array::from_fn(|i| iota(&unit_macro_column(i, xp)));
                        for i in 0..m {
                            for j in i..m {
                                kloc[(i, j)] += w * basis[i].dot(&cb[j]);
                            }
                            for (r, gr) in gm.iter().enumerate() {
                                floc[r][i] -= w * gr.dot(&cb[i]);
                            }
                        }
                        for r in 0..4 {
                            let cg = c * gm[r];
                            for q in r..4 {
                                gram[(r, q)] += w * gm[q].dot(&cg);
                            }
                        }
                    }
                }
                for i in 0..m {
                    for j in i..m {
                        let v = kloc[(i, j)];
                        trip.add_triplet(dofs[i], dofs[j], v);
                        if i != j {
                            trip.add_triplet(dofs[j], dofs[i], v);
                        }
                    }
                    for r in 0..4 {
                        rhs[r][dofs[i]] += floc[r][i];
                    }
                }
            }
        }
        for r in 0..4 {
            for q in 0..r {
                gram[(r, q)] = gram[(q, r)];
            }
        }
        CellSystem { stiffness: trip.to_csr(), rhs, gram }
    }

    /// Constraint groups fixing the strain-free kernel.
    pub fn gauge_groups(&self) -> Result<Vec<GaugeGroup>> {
        let l = &self.layout;
        let (n, nv) = (l.n_axial, l.n_vertices);
        let wa = 1.0 / n as f64;
        let mut groups = Vec::new();
        // mean of each component and mean twist ∫(x₂ϑ₃ − x₃ϑ₂) of a field on ω
        let section_group = |indices: &dyn Fn(usize, usize) -> usize, weight: f64, extra: &mut Vec<(usize, [f64; 4])>| {
            let mut idx = Vec::with_capacity(3 * nv);
            let mut rows = vec![Vec::with_capacity(3 * nv); 4];
            for v in 0..nv {
                for k in 0..3 {
                    idx.push(indices(v, k));
                    for (r, row) in rows.iter_mut().enumerate() {
                        let c = match (r, k) {
                            (r, k) if r == k => self.mass[v],
                            (3, 2) => self.mom2[v],
                            (3, 1) => -self.mom3[v],
                            _ => 0.0,
                        };
                        row.push(weight * c);
                    }
                }
            }
            for (i, c) in extra.drain(..) {
                idx.push(i);
                for r in 0..4 {
                    rows[r].push(c[r]);
                }
            }
            (idx, rows)
        };
        match l.kind {
            Kind::Finite => {
                let (mut idx, mut rows) = (Vec::new(), vec![Vec::new(); 4]);
                for a in 0..n {
                    let mut extra = Vec::new();
                    if a == 0 {
                        let bw = wa * 2.0 / 3.0;
                        for e in 0..n {
                            extra.push((l.bubble(e, 1), [0.0, bw * self.area, 0.0, -bw * self.first3]));
                            extra.push((l.bubble(e, 2), [0.0, 0.0, bw * self.area, bw * self.first2]));
                        }
                    }
                    let (i, r) = section_group(&|v, k| l.theta(a, v, k), wa, &mut extra);
                    idx.extend(i);
                    for q in 0..4 {
                        rows[q].extend_from_slice(&r[q]);
                    }
                }
                groups.push(GaugeGroup::new(idx, rows)?);
                if l.skew_block {
                    groups.push(axial_mean_group(n, |a, j| l.psi(a, j))?);
                }
            }
            Kind::Zero => {
                groups.push(axial_mean_group(n, |a, j| l.psi(a, j))?);
                // ϑ¹₂, ϑ¹₃ are reproduced exactly by ϑ²₁ = −(ϑ¹₂)′x₂ − (ϑ¹₃)′x₃, so
                // they are pinned to zero; only the axial component is gauged
                let idx: Vec<usize> = (0..n).map(|a| l.theta1_axial(a, 0)).collect();
                groups.push(GaugeGroup::new(idx, vec![vec![1.0; n]])?);
                for a in 0..n {
                    for k in 1..3 {
                        groups.push(GaugeGroup::new(vec![l.theta1_axial(a, k)], vec![vec![1.0]])?);
                    }
                }
                for e in 0..n {
                    let (i, r) = section_group(&|v, k| l.theta2(e, v, k), 1.0, &mut Vec::new());
                    groups.push(GaugeGroup::new(i, r)?);
                }
            }
            Kind::Infinite => {
                for v in 0..nv {
                    for k in 0..3 {
                        let idx: Vec<usize> = (0..n).map(|a| l.theta(a, v, k)).collect();
                        groups.push(GaugeGroup::new(idx, vec![vec![1.0; n]])?);
                    }
                }
                let (i, r) = section_group(&|v, k| l.theta2(0, v, k), 1.0, &mut Vec::new());
                groups.push(GaugeGroup::new(i, r)?);
            }
        }
        Ok(groups)
    }

    /// Orthogonal projection onto the gauge-constrained subspace.
    pub fn project_gauge(&self, values: &mut [f64]) -> Result<()> {
        for g in self.gauge_groups()? {
            g.project(values);
        }
        Ok(())
    }

    /// Largest absolute violation of the gauge constraints.
    pub fn gauge_residual(&self, values: &[f64]) -> Result<f64> {
        Ok(self
            .gauge_groups()?
            .iter()
            .flat_map(|g| (0..g.rows.len()).map(move |r| g.apply(r, values).abs()))
            .fold(0.0, f64::max))
    }

    /// Gauge-free kernel directions, for invariance checks: constants and the
    /// in-plane infinitesimal rotation added to the section field.
    pub fn add_rigid(&self, values: &mut [f64], shift: [f64; 3], rotation: f64, cs: &CrossSection) {
        let l = &self.layout;
        let rigid = |v: usize, k: usize| {
            let [x2, x3] = cs.vertices[v];
            shift[k] + rotation * [0.0, -x3, x2][k]
        };
        match l.kind {
            Kind::Finite => {
                for a in 0..l.n_axial {
                    for v in 0..l.n_vertices {
                        for k in 0..3 {
                            values[l.theta(a, v, k)] += rigid(v, k);
                        }
                    }
                }
            }
            Kind::Zero => {
                for e in 0..l.n_axial {
                    for v in 0..l.n_vertices {
                        for k in 0..3 {
                            values[l.theta2(e, v, k)] += rigid(v, k);
                        }
                    }
                }
                for a in 0..l.n_axial {
                    for k in 0..3 {
                        values[l.theta1_axial(a, k)] += shift[k];
                    }
                }
            }
            Kind::Infinite => {
                for v in 0..l.n_vertices {
                    for k in 0..3 {
                        values[l.theta2(0, v, k)] += rigid(v, k);
                        for a in 0..l.n_axial {
                            values[l.theta(a, v, k)] += shift[k];
                        }
                    }
                }
            }
        }
    }

    fn solve_system(&self, sys: &CellSystem, groups: &[GaugeGroup], f: &[f64], floor: f64) -> Result<CorrectorField> {
        let project = |x: &mut [f64]| groups.iter().for_each(|g| g.project(x));
        let (x, stats) = projected_pcg(&sys.stiffness, f, &project, PCG_TOLERANCE, floor, PCG_MAX_ITER)?;
        Ok(self.field(x, stats))
    }

    /// Discrete minimizer for macro strain `ms`.
    pub fn solve(&self, ms: &MacroStrain) -> Result<CorrectorField> {
        let sys = self.assemble();
        let groups = self.gauge_groups()?;
        let v = ms.as_vector();
        let f: Vec<f64> = (0..self.n_dofs()).map(|i| (0..4).map(|r| v[r] * sys.rhs[r][i]).sum()).collect();
        let floor = rhs_floor(&sys, &groups);
        self.solve_system(&sys, &groups, &f, floor)
    }

    /// Effective form from the four unit-strain correctors.
    pub fn effective_form(&self) -> Result<EffectiveForm> {
        Ok(self.effective_form_with_correctors()?.0)
    }

    /// Effective form together with the correctors of the unit strains
    /// `(ρ, κ₁, κ₂, κ₃)`.
    pub fn effective_form_with_correctors(&self) -> Result<(EffectiveForm, [CorrectorField; 4])> {
        let sys = self.assemble();
        let groups = self.gauge_groups()?;
        let floor = rhs_floor(&sys, &groups);
        let fields: Vec<CorrectorField> = (0..4)
            .into_par_iter()
            .map(|i| self.solve_system(&sys, &groups, &sys.rhs[i], floor))
            .collect::<Result<_>>()?;
        let kx: Vec<Vec<f64>> = fields.iter().map(|fl| spmv(&sys.stiffness, &fl.values)).collect();
        let mut a0 = Matrix4::zeros();
        for i in 0..4 {
            for j in i..4 {
                let (xi, xj) = (&fields[i].values, &fields[j].values);
                a0[(i, j)] = sys.gram[(i, j)] - dot(&sys.rhs[i], xj) - dot(xi, &sys.rhs[j]) + dot(xi, &kx[j]);
                a0[(j, i)] = a0[(i, j)];
            }
        }
        let mut eff = EffectiveForm::from_a0(a0)?;
        eff.diagnostics = Some(CellDiagnostics {
            regime: self.regime,
            n_dofs: self.n_dofs(),
            residuals: std::array::from_fn(|i| fields[i].stats.residual),
            iterations: std::array::from_fn(|i| fields[i].stats.iterations),
            gram: sys.gram,
        });
        let fields: [CorrectorField; 4] = fields.try_into().expect("four unit correctors");
        Ok((eff, fields))
    }
}

fn axial_mean_group(n: usize, idx: impl Fn(usize, usize) -> usize) -> Result<GaugeGroup> {
    let mut indices = Vec::with_capacity(3 * n);
    let mut rows = vec![Vec::with_capacity(3 * n); 3];
    for a in 0..n {
        for j in 0..3 {
            indices.push(idx(a, j));
            for (r, row) in rows.iter_mut().enumerate() {
                row.push(if r == j { 1.0 } else { 0.0 });
            }
        }
    }
    GaugeGroup::new(indices, rows)
}

fn rhs_floor(sys: &CellSystem, groups: &[GaugeGroup]) -> f64 {
    sys.rhs
        .iter()
        .map(|f| {
            let mut r = f.clone();
            groups.iter().for_each(|g| g.project(&mut r));
            norm(&r)
        })
        .fold(0.0, f64::max)
        * 1e-8
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `K x` for a CSR matrix, fixed summation order.
pub fn spmv(k: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; k.rows()];
    if k.is_csr() {
        for (i, row) in k.outer_iterator().enumerate() {
            y[i] = row.iter().map(|(j, v)| v * x[j]).sum();
        }
    } else {
        for (j, col) in k.outer_iterator().enumerate() {
            for (i, v) in col.iter() {
                y[i] += v * x[j];
            }
        }
    }
    y
}

/// Preconditioned conjugate gradients on the range of the orthogonal
/// projector `project`, Jacobi preconditioner. Stops once the projected
/// residual drops below `tol · max(‖P f‖, floor)`; the reported residual is
/// relative to that same scale.
pub fn projected_pcg(
    k: &CsMat<f64>,
    f: &[f64],
    project: &dyn Fn(&mut [f64]),
    tol: f64,
    floor: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = f.len();
    if k.rows() != n || k.cols() != n {
        return Err(Error::ShapeMismatch(format!("matrix {}×{} vs rhs {}", k.rows(), k.cols(), n)));
    }
    let mut dinv = vec![1.0; n];
    for (i, row) in k.outer_iterator().enumerate() {
        if let Some(&d) = row.get(i) {
            if d > 0.0 {
                dinv[i] = 1.0 / d;
            }
        }
    }
    let mut x = vec![0.0; n];
    let mut r = f.to_vec();
    project(&mut r);
    let r0 = norm(&r);
    if r0 == 0.0 {
        return Ok((x, SolveStats::default()));
    }
    let scale = r0.max(floor);
    let target = tol * scale;
    let precondition = |r: &[f64]| {
        let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, b)| a * b).collect();
        project(&mut z);
        z
    };
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rn = r0;
    for it in 1..=max_iter {
        let mut q = spmv(k, &p);
        project(&mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            // search direction fell into the kernel of a semidefinite system
            if rn <= 1e-6 * scale {
                return Ok((x, SolveStats { iterations: it, residual: rn / scale }));
            }
            return Err(Error::Singular(format!("non-positive curvature {pq:e} at iteration {it}")));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rn = norm(&r);
        if rn <= target {
            return Ok((x, SolveStats { iterations: it, residual: rn / scale }));
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged { iterations: max_iter, residual: rn / scale })
}

/// Solver diagnostics attached to a computed effective form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellDiagnostics {
    pub regime: RegimeSpec,
    pub n_dofs: usize,
    pub residuals: [f64; 4],
    pub iterations: [usize; 4],
    /// Zero-corrector Gram matrix; `a0 ≤ gram` in the Loewner order.
    pub gram: Matrix4<f64>,
}

/// `Q⁰(ρ, κ) = ½ vᵀ a0 v` with `v = (ρ, κ₁, κ₂, κ₃)`, its reduction
/// `Q⁰₁(κ) = ½ κᵀ a0_1 κ` and the optimal stretch `ρ₀(κ) = c·κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveForm {
    pub a0: Matrix4<f64>,
    pub a0_1: Matrix3<f64>,
    pub rho0_coeffs: Vector3<f64>,
    pub diagnostics: Option<CellDiagnostics>,
}

impl EffectiveForm {
    pub fn from_a0(a0: Matrix4<f64>) -> Result<Self> {
        let (a0_1, rho0_coeffs) = reduce_form(&a0)?;
        Ok(Self { a0, a0_1, rho0_coeffs, diagnostics: None })
    }

    pub fn q0(&self, rho: f64, kappa: &Vector3<f64>) -> f64 {
        let v = nalgebra::Vector4::new(rho, kappa[0], kappa[1], kappa[2]);
        0.5 * v.dot(&(self.a0 * v))
    }

    pub fn q0_1(&self, kappa: &Vector3<f64>) -> f64 {
        0.5 * kappa.dot(&(self.a0_1 * kappa))
    }

    pub fn rho0(&self, kappa: &Vector3<f64>) -> f64 {
        self.rho0_coeffs.dot(kappa)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.a0.symmetric_eigenvalues().min()
    }
}

/// Schur complement `a0_1 = C − bbᵀ/a`, `ρ₀ = −b/a` of `a0 = [[a, bᵀ], [b, C]]`.
pub fn reduce_form(a0: &Matrix4<f64>) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let a = a0[(0, 0)];
    if !(a > 0.0) {
        return Err(Error::Singular(format!("stretch stiffness a0[0][0] = {a:e} is not positive")));
    }
    let b = Vector3::new(a0[(1, 0)], a0[(2, 0)], a0[(3, 0)]);
    let c = a0.fixed_view::<3, 3>(1, 1).into_owned();
    Ok((c - b * b.transpose() / a, -b / a))
}

pub fn solve_corrector(
    regime: &RegimeSpec,
    cs: &CrossSection,
    micro: &MicrostructureRealization,
    ms: &MacroStrain,
) -> Result<CorrectorField> {
    CellDiscretization::new(regime, cs, micro)?.solve(ms)
}

pub fn effective_form(regime: &RegimeSpec, cs: &CrossSection, micro: &MicrostructureRealization) -> Result<EffectiveForm> {
    CellDiscretization::new(regime, cs, micro)?.effective_form()
}

/// Value of the cell functional at `corrector`.
pub fn cell_energy(
    corrector: &CorrectorField,
    regime: &RegimeSpec,
    cs: &CrossSection,
    micro: &MicrostructureRealization,
    ms: &MacroStrain,
) -> Result<f64> {
    if corrector.regime.regime != regime.regime {
        return Err(Error::RegimeMismatch(format!(
            "corrector is {}, requested {}",
            corrector.regime.regime.name(),
            regime.regime.name()
        )));
    }
    let disc = if corrector.layout.skew_block {
        CellDiscretization::with_skew_block(regime, cs, micro)?
    } else {
        CellDiscretization::new(regime, cs, micro)?
    };
    if disc.layout != corrector.layout || corrector.values.len() != disc.n_dofs() {
        return Err(Error::ShapeMismatch(format!(
            "corrector has {} unknowns, discretization needs {}",
            corrector.values.len(),
            disc.n_dofs()
        )));
    }
    Ok(disc.energy(&corrector.values, ms))
}
