//! Cross-section meshes, normalization to centred principal axes, section
//! moments and the macroscopic strain field `m(ρ, Ψ) = ρe₁ + Ψp(x′)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Degree-2 rule on the reference triangle: (barycentric coordinates, weight
/// relative to the triangle area).
pub const TRI_RULE_2: [([f64; 3], f64); 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

const D5_A1: f64 = 0.059_715_871_789_770;
const D5_B1: f64 = 0.470_142_064_105_115;
const D5_W1: f64 = 0.132_394_152_788_506;
const D5_A2: f64 = 0.797_426_985_353_087;
const D5_B2: f64 = 0.101_286_507_323_456;
const D5_W2: f64 = 0.125_939_180_544_827;

/// Seven-point degree-5 rule.
pub const TRI_RULE_5: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    ([D5_A1, D5_B1, D5_B1], D5_W1),
    ([D5_B1, D5_A1, D5_B1], D5_W1),
    ([D5_B1, D5_B1, D5_A1], D5_W1),
    ([D5_A2, D5_B2, D5_B2], D5_W2),
    ([D5_B2, D5_A2, D5_B2], D5_W2),
    ([D5_B2, D5_B2, D5_A2], D5_W2),
];

/// Triangulated cross-section ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

fn default_quad_order() -> usize {
    2
}

/// Precomputed P1 data of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct TriangleGeometry {
    pub nodes: [usize; 3],
    pub area: f64,
    /// Constant gradients of the three barycentric shape functions.
    pub grads: [[f64; 2]; 3],
    pub corners: [[f64; 2]; 3],
}

impl TriangleGeometry {
    pub fn point(&self, bary: &[f64; 3]) -> [f64; 2] {
        let c = &self.corners;
        [
            bary[0] * c[0][0] + bary[1] * c[1][0] + bary[2] * c[2][0],
            bary[0] * c[0][1] + bary[1] * c[1][1] + bary[2] * c[2][1],
        ]
    }

    /// Barycentric coordinates of `p` (may be outside `[0, 1]`).
    pub fn barycentric(&self, p: [f64; 2]) -> [f64; 3] {
        let c = &self.corners;
        let l1 = 1.0 / 3.0 + self.grads[1][0] * (p[0] - centroid(c)[0]) + self.grads[1][1] * (p[1] - centroid(c)[1]);
        let l2 = 1.0 / 3.0 + self.grads[2][0] * (p[0] - centroid(c)[0]) + self.grads[2][1] * (p[1] - centroid(c)[1]);
        [1.0 - l1 - l2, l1, l2]
    }
}

fn centroid(c: &[[f64; 2]; 3]) -> [f64; 2] {
    [(c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0]
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl CrossSection {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle(&self, t: usize) -> TriangleGeometry {
        let nodes = self.triangles[t];
        let corners = nodes.map(|i| self.vertices[i]);
        let area = signed_area(corners[0], corners[1], corners[2]);
        let inv = 1.0 / (2.0 * area);
        let mut grads = [[0.0; 2]; 3];
        for i in 0..3 {
            let b = corners[(i + 1) % 3];
            let c = corners[(i + 2) % 3];
            grads[i] = [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv];
        }
        TriangleGeometry { nodes, area, grads, corners }
    }

    pub fn geometries(&self) -> Vec<TriangleGeometry> {
        (0..self.triangles.len()).map(|t| self.triangle(t)).collect()
    }

    fn bbox_diag2(&self) -> f64 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)
    }

    /// Positive orientation and non-degeneracy of every triangle.
    pub fn validate(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::DegenerateGeometry("mesh has no triangles".into()));
        }
        let tol = 1e-14 * self.bbox_diag2();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= self.vertices.len()) {
                return Err(Error::DegenerateGeometry(format!("triangle {t} references a missing vertex")));
            }
            let a = signed_area(self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]);
            if !(a > tol) {
                return Err(Error::DegenerateGeometry(format!("triangle {t} has area {a:e}")));
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.geometries().iter().map(|g| g.area).sum()
    }

    pub fn max_edge(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| (0..3).map(move |i| (t[i], t[(i + 1) % 3])))
            .map(|(a, b)| dist(self.vertices[a], self.vertices[b]))
            .fold(0.0, f64::max)
    }

    /// Exact integral of a polynomial of degree ≤ 2 (edge-midpoint rule).
    pub fn integrate_quadratic(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.geometries()
            .iter()
            .map(|g| {
                let c = g.corners;
                let mids = [(0, 1), (1, 2), (2, 0)]
                    .map(|(i, j)| [0.5 * (c[i][0] + c[j][0]), 0.5 * (c[i][1] + c[j][1])]);
                g.area / 3.0 * mids.iter().map(|m| f(m[0], m[1])).sum::<f64>()
            })
            .sum()
    }

    /// Integrals of the P1 basis functions, `∫ N_i dx′`.
    pub fn lumped_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.vertices.len()];
        for g in self.geometries() {
            for &i in &g.nodes {
                w[i] += g.area / 3.0;
            }
        }
        w
    }

    /// Triangle containing `p`, with its barycentric coordinates.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let tol = -1e-12;
        self.geometries().iter().enumerate().find_map(|(t, g)| {
            let b = g.barycentric(p);
            (b.iter().all(|x| *x >= tol)).then_some((t, b))
        })
    }

    pub fn stats(&self) -> MeshStats {
        MeshStats {
            vertices: self.vertices.len(),
            triangles: self.triangles.len(),
            max_edge: self.max_edge(),
            area: self.area(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshStats {
    pub vertices: usize,
    pub triangles: usize,
    pub max_edge: f64,
    pub area: f64,
}

/// Section outline.
#[derive(Debug, Clone, PartialEq)]
pub enum SectionShape {
    Disk { radius: f64 },
    Rectangle { width: f64, height: f64 },
    Polygon { points: Vec<[f64; 2]> },
}

/// Conforming triangulation with maximal edge length `≤ target_h`.
pub fn build_section(shape: &SectionShape, target_h: f64) -> Result<CrossSection> {
    if !(target_h > 0.0) || !target_h.is_finite() {
        return Err(Error::InvalidParameter(format!("target_h must be positive (got {target_h})")));
    }
    let cs = match shape {
        SectionShape::Disk { radius } => {
            if !(*radius > 0.0) {
                return Err(Error::DegenerateGeometry(format!("disk radius {radius}")));
            }
            let mut rings = (radius / target_h).ceil().max(1.0) as usize;
            loop {
                let cs = disk_mesh(*radius, rings);
                if cs.max_edge() <= target_h {
                    break cs;
                }
                rings += 1;
            }
        }
        SectionShape::Rectangle { width, height } => {
            if !(*width > 0.0 && *height > 0.0) {
                return Err(Error::DegenerateGeometry(format!("rectangle {width}×{height}")));
            }
            let cells = |len: f64| {
                let n = (len * std::f64::consts::SQRT_2 / target_h).ceil().max(2.0) as usize;
                n + n % 2
            };
            rect_mesh(*width, *height, cells(*width), cells(*height))
        }
        SectionShape::Polygon { points } => {
            let mut cs = polygon_mesh(points)?;
            while cs.max_edge() > target_h {
                cs = refine_uniform(&cs);
            }
            cs
        }
    };
    cs.validate()?;
    Ok(cs)
}

/// Concentric rings with `6k` vertices on ring `k`.
fn disk_mesh(radius: f64, rings: usize) -> CrossSection {
    let mut vertices = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize];
    for k in 1..=rings {
        ring_start.push(vertices.len());
        let n = 6 * k;
        let r = radius * k as f64 / rings as f64;
        for j in 0..n {
            let th = std::f64::consts::TAU * j as f64 / n as f64;
            vertices.push([r * th.cos(), r * th.sin()]);
        }
    }
    let mut triangles = Vec::with_capacity(6 * rings * rings);
    for k in 1..=rings {
        let n_out = 6 * k;
        let n_in = if k == 1 { 1 } else { 6 * (k - 1) };
        let out = |j: usize| ring_start[k] + j % n_out;
        let inn = |j: usize| if k == 1 { 0 } else { ring_start[k - 1] + j % n_in };
        if k == 1 {
            for j in 0..n_out {
                triangles.push([0, out(j), out(j + 1)]);
            }
            continue;
        }
        // merge the two rings by angle
        let (mut i, mut o) = (0usize, 0usize);
        while i < n_in || o < n_out {
            let next_in = (i + 1) as f64 / n_in as f64;
            let next_out = (o + 1) as f64 / n_out as f64;
            if o < n_out && (i >= n_in || next_out <= next_in) {
                triangles.push([inn(i), out(o), out(o + 1)]);
                o += 1;
            } else {
                triangles.push([inn(i), out(o), inn(i + 1)]);
                i += 1;
            }
        }
    }
    orient(CrossSection { vertices, triangles, quad_order: 2 })
}

/// Rectangle centred at the origin, alternating diagonals.
fn rect_mesh(width: f64, height: f64, nx: usize, ny: usize) -> CrossSection {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([-0.5 * width + width * i as f64 / nx as f64, -0.5 * height + height * j as f64 / ny as f64]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    CrossSection { vertices, triangles, quad_order: 2 }
}

fn orient(mut cs: CrossSection) -> CrossSection {
    for t in cs.triangles.iter_mut() {
        if signed_area(cs.vertices[t[0]], cs.vertices[t[1]], cs.vertices[t[2]]) < 0.0 {
            t.swap(1, 2);
        }
    }
    cs
}

fn segments_cross(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = signed_area(q1, q2, p1);
    let d2 = signed_area(q1, q2, p2);
    let d3 = signed_area(p1, p2, q1);
    let d4 = signed_area(p1, p2, q2);
    ((d1 > 0.0) != (d2 > 0.0)) && ((d3 > 0.0) != (d4 > 0.0)) && d1 != 0.0 && d2 != 0.0 && d3 != 0.0 && d4 != 0.0
}

/// Ear-clipping triangulation of a simple polygon.
fn polygon_mesh(points: &[[f64; 2]]) -> Result<CrossSection> {
    let n = points.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry("polygon needs at least 3 vertices".into()));
    }
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        if dist(a, b) == 0.0 {
            return Err(Error::DegenerateGeometry(format!("repeated polygon vertex {i}")));
        }
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, points[j], points[(j + 1) % n]) {
                return Err(Error::DegenerateGeometry(format!("polygon edges {i} and {j} intersect")));
            }
        }
    }
    let area: f64 = (0..n).map(|i| signed_area([0.0, 0.0], points[i], points[(i + 1) % n])).sum();
    if area.abs() < 1e-14 {
        return Err(Error::DegenerateGeometry("polygon has zero area".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if area < 0.0 {
        idx.reverse();
    }
    let mut triangles = Vec::with_capacity(n - 2);
    while idx.len() > 3 {
        let m = idx.len();
        let ear = (0..m).find(|&k| {
            let (ia, ib, ic) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let (a, b, c) = (points[ia], points[ib], points[ic]);
            if signed_area(a, b, c) <= 0.0 {
                return false;
            }
            idx.iter().all(|&j| {
                if j == ia || j == ib || j == ic {
                    return true;
                }
                let p = points[j];
                !(signed_area(a, b, p) >= 0.0 && signed_area(b, c, p) >= 0.0 && signed_area(c, a, p) >= 0.0)
            })
        });
        let Some(k) = ear else {
            return Err(Error::DegenerateGeometry("ear clipping failed (polygon not simple?)".into()));
        };
        triangles.push([idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]]);
        idx.remove(k);
    }
    triangles.push([idx[0], idx[1], idx[2]]);
    Ok(CrossSection { vertices: points.to_vec(), triangles, quad_order: 2 })
}

/// Splits every triangle into four through its edge midpoints. Existing
/// vertices keep their indices, so P1 spaces are nested.
pub fn refine_uniform(cs: &CrossSection) -> CrossSection {
    let mut vertices = cs.vertices.clone();
    let mut mid = std::collections::HashMap::new();
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| {
        *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
            let (p, q) = (vertices[a], vertices[b]);
            vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * cs.triangles.len());
    for &[a, b, c] in &cs.triangles {
        let ab = midpoint(a, b, &mut vertices);
        let bc = midpoint(b, c, &mut vertices);
        let ca = midpoint(c, a, &mut vertices);
        triangles.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    CrossSection { vertices, triangles, quad_order: cs.quad_order }
}

/// Similarity transform applied by [`normalize_section`]:
/// `x ↦ scale · R(−angle) (x − translation)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeTransform {
    pub translation: [f64; 2],
    pub angle: f64,
    pub scale: f64,
}

/// Centres the section, rotates it to principal axes and scales it to unit area.
pub fn normalize_section(cs: &CrossSection) -> Result<(CrossSection, NormalizeTransform)> {
    cs.validate()?;
    let area = cs.area();
    if !(area > 0.0) {
        return Err(Error::DegenerateGeometry("zero-area mesh".into()));
    }
    let cx = cs.integrate_quadratic(|x, _| x) / area;
    let cy = cs.integrate_quadratic(|_, y| y) / area;
    let j22 = cs.integrate_quadratic(|x, _| (x - cx).powi(2));
    let j33 = cs.integrate_quadratic(|_, y| (y - cy).powi(2));
    let j23 = cs.integrate_quadratic(|x, y| (x - cx) * (y - cy));
    let spread = ((j22 - j33).powi(2) + 4.0 * j23 * j23).sqrt();
    let angle = if spread <= 1e-12 * (j22 + j33) { 0.0 } else { 0.5 * (2.0 * j23).atan2(j22 - j33) };
    let (sn, cn) = angle.sin_cos();
    let scale = 1.0 / area.sqrt();
    let vertices = cs
        .vertices
        .iter()
        .map(|v| {
            let (dx, dy) = (v[0] - cx, v[1] - cy);
            [scale * (cn * dx + sn * dy), scale * (-sn * dx + cn * dy)]
        })
        .collect();
    let out = CrossSection { vertices, triangles: cs.triangles.clone(), quad_order: cs.quad_order };
    Ok((out, NormalizeTransform { translation: [cx, cy], angle, scale }))
}

/// Second moments of a (normalized) section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionProperties {
    pub area: f64,
    /// ∫x₂²
    pub i2: f64,
    /// ∫x₃²
    pub i3: f64,
    /// ∫(x₂² + x₃²)
    pub mu_omega: f64,
}

pub fn section_properties(cs: &CrossSection) -> SectionProperties {
    let area = cs.area();
    let i2 = cs.integrate_quadratic(|x, _| x * x);
    let i3 = cs.integrate_quadratic(|_, y| y * y);
    SectionProperties { area, i2, i3, mu_omega: i2 + i3 }
}

/// Macroscopic strain `(ρ, axl Ψ)` with `κ = (κ₁, κ₂, κ₃) = (Ψ₃₂, Ψ₁₃, Ψ₂₁)`.
/// On a rod, `κ = axl A′ = (w′, −v₃″, v₂″)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MacroStrain {
    pub rho: f64,
    pub kappa: [f64; 3],
}

impl MacroStrain {
    pub fn new(rho: f64, kappa: [f64; 3]) -> Self {
        Self { rho, kappa }
    }

    /// The k-th unit strain in the ordering (ρ, κ₁, κ₂, κ₃).
    pub fn unit(k: usize) -> Self {
        let mut v = [0.0; 4];
        v[k] = 1.0;
        Self::from_vector(v)
    }

    pub fn from_vector(v: [f64; 4]) -> Self {
        Self { rho: v[0], kappa: [v[1], v[2], v[3]] }
    }

    pub fn as_vector(&self) -> [f64; 4] {
        [self.rho, self.kappa[0], self.kappa[1], self.kappa[2]]
    }

    pub fn skew(&self) -> Matrix3<f64> {
        let [k1, k2, k3] = self.kappa;
        Matrix3::new(0.0, -k3, k2, k3, 0.0, -k1, -k2, k1, 0.0)
    }

    pub fn from_skew(rho: f64, psi: &Matrix3<f64>) -> Self {
        Self { rho, kappa: axl(psi) }
    }
}

/// Axial vector `(A₃₂, A₁₃, A₂₁)`.
pub fn axl(a: &Matrix3<f64>) -> [f64; 3] {
    [a[(2, 1)], a[(0, 2)], a[(1, 0)]]
}

/// `m(x′) = ρe₁ + Ψ(0, x₂, x₃)ᵀ = (ρ − κ₃x₂ + κ₂x₃, −κ₁x₃, κ₁x₂)`.
pub fn macro_strain_field(ms: &MacroStrain, xp: [f64; 2]) -> Vector3<f64> {
    let [k1, k2, k3] = ms.kappa;
    let (x2, x3) = (xp[0], xp[1]);
    Vector3::new(ms.rho - k3 * x2 + k2 * x3, -k1 * x3, k1 * x2)
}

/// JSON section block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionBlock {
    pub shape: String,
    #[serde(default)]
    pub params: serde_json::Value,
    pub mesh_h: f64,
    /// Extra uniform refinements applied after meshing.
    #[serde(default)]
    pub refine: usize,
}

impl SectionBlock {
    pub fn shape(&self) -> Result<SectionShape> {
        let num = |key: &str, default: f64| -> Result<f64> {
            match self.params.get(key) {
                None => Ok(default),
                Some(v) => v
                    .as_f64()
                    .ok_or_else(|| Error::InvalidParameter(format!("section.params.{key} must be a number"))),
            }
        };
        match self.shape.as_str() {
            "disk" => Ok(SectionShape::Disk { radius: num("radius", 1.0)? }),
            "rect" | "rectangle" => {
                Ok(SectionShape::Rectangle { width: num("width", 1.0)?, height: num("height", 1.0)? })
            }
            "polygon" => {
                let points: Vec<[f64; 2]> = serde_json::from_value(
                    self.params.get("points").cloned().unwrap_or(serde_json::Value::Null),
                )
                .map_err(|e| Error::InvalidParameter(format!("section.params.points: {e}")))?;
                Ok(SectionShape::Polygon { points })
            }
            other => Err(Error::InvalidParameter(format!("unknown section shape '{other}'"))),
        }
    }

    /// Meshes, refines and normalizes the section.
    pub fn build(&self) -> Result<CrossSection> {
        let mut cs = build_section(&self.shape()?, self.mesh_h)?;
        for _ in 0..self.refine {
            cs = refine_uniform(&cs);
        }
        Ok(normalize_section(&cs)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_square(h: f64) -> CrossSection {
        build_section(&SectionShape::Rectangle { width: 1.0, height: 1.0 }, h).unwrap()
    }

    #[test]
    fn square_mesh_counts_and_area() {
        let cs = unit_square(0.1);
        assert!(cs.n_triangles() >= 200);
        assert!(cs.max_edge() <= 0.1);
        assert_relative_eq!(cs.area(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn disk_area_converges_quadratically() {
        let errs: Vec<f64> = [0.4, 0.2, 0.1, 0.05]
            .iter()
            .map(|&h| {
                let cs = build_section(&SectionShape::Disk { radius: 1.0 }, h).unwrap();
                assert!(cs.max_edge() <= h);
                (cs.area() - std::f64::consts::PI).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
        }
    }

    #[test]
    fn self_intersecting_polygon_rejected() {
        let bow = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(build_section(&SectionShape::Polygon { points: bow }, 0.5), Err(Error::DegenerateGeometry(_))));
        let line = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        assert!(build_section(&SectionShape::Polygon { points: line }, 0.5).is_err());
    }

    #[test]
    fn l_shaped_polygon_meshes() {
        let l = vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]];
        let cs = build_section(&SectionShape::Polygon { points: l }, 0.3).unwrap();
        assert_relative_eq!(cs.area(), 3.0, epsilon = 1e-12);
        assert!(cs.max_edge() <= 0.3);
    }

    #[test]
    fn normalize_square_is_identity() {
        let cs = unit_square(0.2);
        let (n, tr) = normalize_section(&cs).unwrap();
        assert_eq!(tr.angle, 0.0);
        for (a, b) in cs.vertices.iter().zip(&n.vertices) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_shifted_square() {
        let pts = vec![[4.0, 4.0], [6.0, 4.0], [6.0, 6.0], [4.0, 6.0]];
        let cs = build_section(&SectionShape::Polygon { points: pts }, 0.5).unwrap();
        let (n, tr) = normalize_section(&cs).unwrap();
        assert_relative_eq!(tr.scale, 0.5, epsilon = 1e-14);
        assert_relative_eq!(n.area(), 1.0, epsilon = 1e-12);
        let p = section_properties(&n);
        assert_relative_eq!(p.i2, 1.0 / 12.0, epsilon = 1e-12);
        for v in &n.vertices {
            assert!(v[0].abs() <= 0.5 + 1e-12 && v[1].abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn normalize_tilted_ellipse() {
        let (a, b, tilt) = (2.0, 0.7, 30f64.to_radians());
        let pts: Vec<[f64; 2]> = (0..48)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 48.0;
                let (x, y) = (a * t.cos(), b * t.sin());
                [3.0 + x * tilt.cos() - y * tilt.sin(), -1.0 + x * tilt.sin() + y * tilt.cos()]
            })
            .collect();
        let cs = build_section(&SectionShape::Polygon { points: pts }, 0.3).unwrap();
        let (n, tr) = normalize_section(&cs).unwrap();
        // independent moment integrals with the interior degree-2 rule
        let mut m = [0.0; 4];
        for g in n.geometries() {
            for (bary, w) in TRI_RULE_2 {
                let [x, y] = g.point(&bary);
                let wa = w * g.area;
                m[0] += wa;
                m[1] += wa * x;
                m[2] += wa * y;
                m[3] += wa * x * y;
            }
        }
        assert!((m[0] - 1.0).abs() <= 1e-10);
        assert!(m[1].abs() + m[2].abs() + m[3].abs() <= 1e-10);
        assert!((tr.angle.abs() - tilt).abs() < 1e-2);
        let (again, _) = normalize_section(&n).unwrap();
        for (p, q) in n.vertices.iter().zip(&again.vertices) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_square_moments() {
        let p = section_properties(&unit_square(0.25));
        assert_relative_eq!(p.i2, 1.0 / 12.0, epsilon = 1e-14);
        assert_relative_eq!(p.i3, 1.0 / 12.0, epsilon = 1e-14);
        assert_relative_eq!(p.mu_omega, 1.0 / 6.0, epsilon = 1e-14);
        assert_eq!(p.mu_omega, p.i2 + p.i3);
    }

    #[test]
    fn unit_area_disk_moments() {
        let cs = build_section(&SectionShape::Disk { radius: 1.0 }, 0.03).unwrap();
        let (n, _) = normalize_section(&cs).unwrap();
        let p = section_properties(&n);
        let target = 1.0 / (4.0 * std::f64::consts::PI);
        assert!((p.i2 / target - 1.0).abs() < 5e-3);
        assert!((p.i3 / target - 1.0).abs() < 5e-3);
        assert!((p.mu_omega / (2.0 * target) - 1.0).abs() < 5e-3);
    }

    #[test]
    fn refinement_is_nested() {
        let coarse = normalize_section(&unit_square(0.5)).unwrap().0;
        let fine = refine_uniform(&coarse);
        assert_eq!(&fine.vertices[..coarse.n_vertices()], &coarse.vertices[..]);
        assert_eq!(fine.n_triangles(), 4 * coarse.n_triangles());
        // every fine vertex lies in a coarse triangle, so coarse P1 functions
        // interpolate exactly onto the fine mesh
        for v in &fine.vertices {
            assert!(coarse.locate(*v).is_some());
        }
        // and each fine triangle sits inside a single coarse triangle
        for g in fine.geometries() {
            let c = centroid(&g.corners);
            let (t, _) = coarse.locate(c).unwrap();
            let cg = coarse.triangle(t);
            for corner in g.corners {
                assert!(cg.barycentric(corner).iter().all(|b| *b >= -1e-12));
            }
        }
        assert_relative_eq!(fine.area(), coarse.area(), epsilon = 1e-14);
    }

    #[test]
    fn macro_strain_examples() {
        let xp = [0.3, -0.7];
        assert_eq!(macro_strain_field(&MacroStrain::new(1.0, [0.0; 3]), xp), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(macro_strain_field(&MacroStrain::new(0.0, [1.0, 0.0, 0.0]), xp), Vector3::new(0.0, 0.7, 0.3));
        assert_eq!(macro_strain_field(&MacroStrain::new(0.0, [0.0, 0.0, 1.0]), [1.0, 0.0]), Vector3::new(-1.0, 0.0, 0.0));
        let ms = MacroStrain::new(0.4, [1.5, -2.0, 0.25]);
        assert_eq!(MacroStrain::from_skew(ms.rho, &ms.skew()), ms);
        let p = Vector3::new(0.0, xp[0], xp[1]);
        let direct = Vector3::new(ms.rho, 0.0, 0.0) + ms.skew() * p;
        assert!((direct - macro_strain_field(&ms, xp)).norm() < 1e-15);
    }

    #[test]
    fn section_block_builds_normalized() {
        let block: SectionBlock =
            serde_json::from_str(r#"{"shape":"rect","params":{"width":2,"height":1},"mesh_h":0.3}"#).unwrap();
        let cs = block.build().unwrap();
        assert_relative_eq!(cs.area(), 1.0, epsilon = 1e-12);
        let bad: SectionBlock = serde_json::from_str(r#"{"shape":"hexagon","mesh_h":0.3}"#).unwrap();
        assert!(bad.build().is_err());
    }

    proptest::proptest! {
        #[test]
        fn macro_strain_is_linear(a in proptest::array::uniform4(-3.0f64..3.0), b in proptest::array::uniform4(-3.0f64..3.0),
                                  s in -2.0f64..2.0, x2 in -1.0f64..1.0, x3 in -1.0f64..1.0) {
            let ma = MacroStrain::from_vector(a);
            let mb = MacroStrain::from_vector(b);
            let mc = MacroStrain::from_vector(std::array::from_fn(|k| a[k] + s * b[k]));
            let lhs = macro_strain_field(&mc, [x2, x3]);
            let rhs = macro_strain_field(&ma, [x2, x3]) + s * macro_strain_field(&mb, [x2, x3]);
            proptest::prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
        }
    }
}
