//! Linear and nonlinear material laws.
//!
//! Symmetric strains are stored as 6-vectors in the orthonormal basis
//!
//! ```text
//! B1 = e1⊗e1, B2 = e2⊗e2, B3 = e3⊗e3,
//! B4 = (e2⊗e3 + e3⊗e2)/√2, B5 = (e1⊗e3 + e3⊗e1)/√2, B6 = (e1⊗e2 + e2⊗e1)/√2
//! ```
//!
//! so the Frobenius norm of a symmetric matrix equals the Euclidean norm of
//! its coordinates and the eigenvalues of the 6×6 stiffness are exactly the
//! coercivity/boundedness constants of the quadratic form.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Coordinates of `sym g` in the orthonormal symmetric basis.
#[inline]
pub fn sym_coords(g: &Matrix3<f64>) -> Vector6<f64> {
    let h = 0.5 * SQRT_2;
    Vector6::new(
        g[(0, 0)],
        g[(1, 1)],
        g[(2, 2)],
        h * (g[(1, 2)] + g[(2, 1)]),
        h * (g[(0, 2)] + g[(2, 0)]),
        h * (g[(0, 1)] + g[(1, 0)]),
    )
}

/// Symmetric matrix with the given orthonormal coordinates.
pub fn sym_from_coords(v: &Vector6<f64>) -> Matrix3<f64> {
    let h = v / SQRT_2;
    Matrix3::new(v[0], h[5], h[4], h[5], v[1], h[3], h[4], h[3], v[2])
}

/// Symmetric 6×6 stiffness acting on symmetric strains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticityTensor {
    matrix: Matrix6<f64>,
}

impl ElasticityTensor {
    /// Wraps a 6×6 matrix given in the orthonormal basis. The matrix must be
    /// symmetric to machine precision; it is symmetrized exactly afterwards.
    pub fn from_matrix(matrix: Matrix6<f64>) -> Result<Self> {
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (matrix - matrix.transpose()).amax();
        if !matrix.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("stiffness has non-finite entries".into()));
        }
        if asym > 1e-12 * scale {
            return Err(Error::InvalidParameter(format!(
                "stiffness matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(Self { matrix: 0.5 * (matrix + matrix.transpose()) })
    }

    pub fn from_rows(rows: &[[f64; 6]; 6]) -> Result<Self> {
        Self::from_matrix(Matrix6::from_fn(|i, j| rows[i][j]))
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.matrix
    }

    /// Stress coordinates `𝔸 sym g`.
    #[inline]
    pub fn apply(&self, strain: &Vector6<f64>) -> Vector6<f64> {
        self.matrix * strain
    }

    /// `½ 𝔸 v : v` for strain coordinates `v`.
    #[inline]
    pub fn energy_coords(&self, v: &Vector6<f64>) -> f64 {
        0.5 * v.dot(&(self.matrix * v))
    }

    /// Weighted sum of tensors, e.g. an exact average over a segment.
    pub fn weighted_sum(parts: &[(f64, &ElasticityTensor)]) -> Matrix6<f64> {
        parts.iter().fold(Matrix6::zeros(), |acc, (w, t)| acc + t.matrix * *w)
    }
}

/// Isotropic stiffness `2μ Id + λ I⊗I`.
pub fn isotropic_tensor(lame_lambda: f64, lame_mu: f64) -> Result<ElasticityTensor> {
    if !(lame_mu > 0.0) || !(lame_lambda >= 0.0) || !lame_lambda.is_finite() || !lame_mu.is_finite()
    {
        return Err(Error::InvalidParameter(format!(
            "isotropic law needs mu > 0 and lambda >= 0 (got lambda={lame_lambda}, mu={lame_mu})"
        )));
    }
    let mut m = Matrix6::identity() * (2.0 * lame_mu);
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] += lame_lambda;
        }
    }
    Ok(ElasticityTensor { matrix: m })
}

/// Quadratic form `Q(G) = ½ 𝔸 sym G : sym G`.
pub fn quadratic_energy(tensor: &ElasticityTensor, g: &Matrix3<f64>) -> f64 {
    tensor.energy_coords(&sym_coords(g))
}

/// Smallest and largest eigenvalue of the stiffness; fails when the form is
/// not coercive.
pub fn admissibility_bounds(tensor: &ElasticityTensor) -> Result<(f64, f64)> {
    let eig = SymmetricEigen::new(tensor.matrix);
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if lo <= 0.0 {
        return Err(Error::Inadmissible { min_eig: lo });
    }
    Ok((lo, hi))
}

/// Checks the computed bounds against caller-supplied class constants
/// `alpha ≤ λ_min`, `λ_max ≤ beta`.
pub fn check_class(tensor: &ElasticityTensor, alpha: f64, beta: f64) -> Result<()> {
    let (lo, hi) = admissibility_bounds(tensor)?;
    if !(0.0 < alpha && alpha <= beta) {
        return Err(Error::InvalidParameter(format!("class bounds need 0 < alpha <= beta (got {alpha}, {beta})")));
    }
    if lo < alpha || hi > beta {
        return Err(Error::InvalidParameter(format!(
            "eigenvalues [{lo}, {hi}] outside class bounds [{alpha}, {beta}]"
        )));
    }
    Ok(())
}

/// St. Venant–Kirchhoff density parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearLaw {
    pub lame_lambda: f64,
    pub lame_mu: f64,
}

impl NonlinearLaw {
    pub fn new(lame_lambda: f64, lame_mu: f64) -> Result<Self> {
        isotropic_tensor(lame_lambda, lame_mu)?;
        Ok(Self { lame_lambda, lame_mu })
    }

    /// The stiffness of its quadratic expansion at the identity.
    pub fn linearization(&self) -> ElasticityTensor {
        isotropic_tensor(self.lame_lambda, self.lame_mu).expect("validated on construction")
    }
}

/// `W(F) = λ/2 (tr E)² + μ |E|²` with Green–Lagrange strain `E = (FᵀF − I)/2`.
pub fn svk_energy(law: &NonlinearLaw, f: &Matrix3<f64>) -> f64 {
    let e = 0.5 * (f.transpose() * f - Matrix3::identity());
    let tr = e.trace();
    0.5 * law.lame_lambda * tr * tr + law.lame_mu * e.norm_squared()
}

/// Young's modulus of an isotropic law.
pub fn young_modulus(lame_lambda: f64, lame_mu: f64) -> f64 {
    lame_mu * (3.0 * lame_lambda + 2.0 * lame_mu) / (lame_lambda + lame_mu)
}

/// JSON material block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MaterialBlock {
    Isotropic { lambda: f64, mu: f64 },
    Matrix6 { rows: [[f64; 6]; 6] },
}

impl MaterialBlock {
    pub fn tensor(&self) -> Result<ElasticityTensor> {
        let t = match self {
            MaterialBlock::Isotropic { lambda, mu } => isotropic_tensor(*lambda, *mu)?,
            MaterialBlock::Matrix6 { rows } => ElasticityTensor::from_rows(rows)?,
        };
        admissibility_bounds(&t)?;
        Ok(t)
    }

    /// Nonlinear law for isotropic blocks; anisotropic blocks have none.
    pub fn nonlinear_law(&self) -> Option<NonlinearLaw> {
        match self {
            MaterialBlock::Isotropic { lambda, mu } => NonlinearLaw::new(*lambda, *mu).ok(),
            MaterialBlock::Matrix6 { .. } => None,
        }
    }
}
