#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Vector6};
use vkrod::cell::CellDiscretization;
use vkrod::geometry::{build_section, normalize_section, CrossSection, MacroStrain, SectionShape};
use vkrod::material::{isotropic_tensor, sym_coords};
use vkrod::microstructure::{realize, MicrostructureRealization, MicrostructureSpec};

pub fn square(h: f64) -> CrossSection {
    normalize_section(&build_section(&SectionShape::Rectangle { width: 1.0, height: 1.0 }, h).unwrap())
        .unwrap()
        .0
}

pub fn unit_disk(h: f64) -> CrossSection {
    normalize_section(&build_section(&SectionShape::Disk { radius: 1.0 }, h).unwrap()).unwrap().0
}

pub fn homogeneous(lambda: f64, mu: f64) -> MicrostructureRealization {
    realize(&MicrostructureSpec::homogeneous(isotropic_tensor(lambda, mu).unwrap())).unwrap()
}

pub fn laminate(fractions: [f64; 2]) -> MicrostructureRealization {
    let phases = vec![isotropic_tensor(1.0, 1.0).unwrap(), isotropic_tensor(5.0, 4.0).unwrap()];
    realize(&MicrostructureSpec::periodic(phases, &fractions)).unwrap()
}

/// Minimum of the gamma_finite cell functional obtained by dense assembly
/// from unit-field strains and a dense Cholesky solve. The four rigid
/// kernel directions (constants and in-plane rotation) are penalized, which
/// leaves the minimum value unchanged.
pub fn dense_cell_minimum(disc: &CellDiscretization, cs: &CrossSection, ms: &MacroStrain) -> f64 {
    let l = disc.layout;
    let n = disc.n_dofs();
    let zero = MacroStrain::default();
    let mut k = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let mut c0 = 0.0;
    let mut unit = vec![0.0; n];
    let empty = vec![0.0; n];
    for qp in disc.quadrature_points() {
        let c = disc.tensor(qp.phase).matrix();
        let tri = cs.triangles[qp.tri];
        let nb = (qp.elem + 1) % l.n_axial;
        let mut dofs = Vec::with_capacity(20);
        for a in [qp.elem, nb] {
            for &v in &tri {
                for comp in 0..3 {
                    dofs.push(l.theta(a, v, comp));
                }
            }
        }
        for comp in 1..3 {
            dofs.push(l.bubble(qp.elem, comp));
        }
        dofs.sort_unstable();
        dofs.dedup();
        let sm: Vector6<f64> = sym_coords(&disc.strain_at(&empty, ms, &qp));
        let cols: Vec<Vector6<f64>> = dofs
            .iter()
            .map(|&d| {
                unit[d] = 1.0;
                let s: Matrix3<f64> = disc.strain_at(&unit, &zero, &qp);
                unit[d] = 0.0;
                sym_coords(&s)
            })
            .collect();
        c0 += qp.weight * 0.5 * sm.dot(&(c * sm));
        for (i, &di) in dofs.iter().enumerate() {
            let ci = c * cols[i];
            b[di] += qp.weight * ci.dot(&sm);
            for (j, &dj) in dofs.iter().enumerate() {
                k[(di, dj)] += qp.weight * ci.dot(&cols[j]);
            }
        }
    }
    let scale = k.diagonal().amax();
    let mut kernel = vec![vec![0.0; n]; 4];
    for a in 0..l.n_axial {
        for v in 0..l.n_vertices {
            let [x2, x3] = cs.vertices[v];
            for comp in 0..3 {
                kernel[comp][l.theta(a, v, comp)] = 1.0;
            }
            kernel[3][l.theta(a, v, 1)] = -x3;
            kernel[3][l.theta(a, v, 2)] = x2;
        }
    }
    for r in &kernel {
        let rv = DVector::from_column_slice(r);
        let nrm = rv.norm_squared();
        k += (scale / nrm) * &rv * rv.transpose();
    }
    let chol = k.cholesky().expect("penalized cell matrix is SPD");
    let x = chol.solve(&b);
    c0 - 0.5 * b.dot(&x)
}

/// Saint-Venant torsion constant of a normalized section: P1 warping
/// function `∫∇φ·∇ψ = ∫(x₃∂₂ψ − x₂∂₃ψ)`, `J = ∫|x′|² − ∫|∇φ|²`, solved densely.
pub fn warping_torsion_constant(cs: &CrossSection) -> f64 {
    let nv = cs.n_vertices();
    let mut k = DMatrix::<f64>::zeros(nv + 1, nv + 1);
    let mut f = DVector::<f64>::zeros(nv + 1);
    let mut polar = 0.0;
    for t in 0..cs.n_triangles() {
        let g = cs.triangle(t);
        let c = g.corners;
        let (cx2, cx3) = ((c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0);
        // ∫x₂², ∫x₃² exact on the triangle
        let m2: f64 = g.area / 12.0 * (c.iter().map(|p| p[0] * p[0]).sum::<f64>() + 9.0 * cx2 * cx2);
        let m3: f64 = g.area / 12.0 * (c.iter().map(|p| p[1] * p[1]).sum::<f64>() + 9.0 * cx3 * cx3);
        polar += m2 + m3;
        for i in 0..3 {
            let gi = g.grads[i];
            f[g.nodes[i]] += g.area * (cx3 * gi[0] - cx2 * gi[1]);
            for j in 0..3 {
                let gj = g.grads[j];
                k[(g.nodes[i], g.nodes[j])] += g.area * (gi[0] * gj[0] + gi[1] * gj[1]);
            }
        }
    }
    // mean-zero constraint through a bordered system
    for (v, w) in cs.lumped_weights().iter().enumerate() {
        k[(nv, v)] = *w;
        k[(v, nv)] = *w;
    }
    let phi = k.lu().solve(&f).expect("bordered warping system is regular");
    let mut grad2 = 0.0;
    for t in 0..cs.n_triangles() {
        let g = cs.triangle(t);
        let mut gr = [0.0; 2];
        for i in 0..3 {
            gr[0] += phi[g.nodes[i]] * g.grads[i][0];
            gr[1] += phi[g.nodes[i]] * g.grads[i][1];
        }
        grad2 += g.area * (gr[0] * gr[0] + gr[1] * gr[1]);
    }
    polar - grad2
}
