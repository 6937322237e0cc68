//! The limit rod equations: moment boundary-value problems, pointwise
//! constitutive inversion `a0_1 κ = (−m_t, Ê₁₁, −Ẽ₁₁)` with
//! `κ = (w′, −v₃″, v₂″)`, kinematic integration and axial recovery
//! `u′ = ρ₀(κ) − ½(v₂′² + v₃′²)`. A Legendre–Galerkin energy minimizer provides
//! an independent second path.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cell::EffectiveForm;
use crate::error::{Error, Result};

/// A normal load density on `[0, L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadFn {
    /// `Σ cₖ x₁ᵏ`
    Poly(Vec<f64>),
    /// Values on a uniform grid over `[0, L]`, linearly interpolated.
    Table(Vec<f64>),
}

impl Default for LoadFn {
    fn default() -> Self {
        LoadFn::Poly(Vec::new())
    }
}

impl LoadFn {
    pub fn zero() -> Self {
        LoadFn::Poly(Vec::new())
    }

    pub fn eval(&self, x: f64, length: f64) -> f64 {
        match self {
            LoadFn::Poly(c) => c.iter().rev().fold(0.0, |acc, ck| acc * x + ck),
            LoadFn::Table(v) => match v.len() {
                0 => 0.0,
                1 => v[0],
                n => {
                    let pos = (x / length * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
                    let i = (pos.floor() as usize).min(n - 2);
                    let t = pos - i as f64;
                    (1.0 - t) * v[i] + t * v[i + 1]
                }
            },
        }
    }

    /// Points where the function is not smooth.
    fn knots(&self, length: f64) -> Vec<f64> {
        match self {
            LoadFn::Table(v) if v.len() > 2 => (1..v.len() - 1).map(|i| length * i as f64 / (v.len() - 1) as f64).collect(),
            _ => Vec::new(),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let vals = match self {
            LoadFn::Poly(c) => c,
            LoadFn::Table(v) => v,
        };
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("load {name} has non-finite entries")));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            LoadFn::Poly(c) => LoadFn::Poly(c.iter().map(|v| s * v).collect()),
            LoadFn::Table(c) => LoadFn::Table(c.iter().map(|v| s * v).collect()),
        }
    }
}

/// Normal loads `f = f₂e₂ + f₃e₃` on a rod of length `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub length: f64,
    #[serde(default)]
    pub f2: LoadFn,
    #[serde(default)]
    pub f3: LoadFn,
}

impl LoadSpec {
    pub fn new(length: f64, f2: LoadFn, f3: LoadFn) -> Self {
        Self { length, f2, f3 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(Error::InvalidParameter(format!("rod length must be positive (got {})", self.length)));
        }
        self.f2.validate("f2")?;
        self.f3.validate("f3")
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { length: self.length, f2: self.f2.scaled(s), f3: self.f3.scaled(s) }
    }
}

/// Boundary-condition variant for the deflections `v₂, v₃`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// `vᵢ(0) = vᵢ′(0) = 0`
    #[default]
    ClampedLeft,
    /// `vᵢ(0) = vᵢ′(L) = 0`
    PaperLiteral,
}

/// First-order moments on the uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentFields {
    pub grid: Vec<f64>,
    pub e11_tilde: Vec<f64>,
    pub e11_tilde_prime: Vec<f64>,
    pub e11_hat: Vec<f64>,
    pub e11_hat_prime: Vec<f64>,
    /// `Ê₁₂ − Ẽ₁₃`
    pub m_torsion: Vec<f64>,
}

impl MomentFields {
    pub fn max_abs(&self) -> f64 {
        self.e11_tilde
            .iter()
            .chain(&self.e11_hat)
            .chain(&self.m_torsion)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Effective form sampled per grid node, or one form for the whole rod.
#[derive(Debug, Clone, PartialEq)]
pub enum FormProfile {
    Constant(EffectiveForm),
    Table(Vec<EffectiveForm>),
}

impl From<EffectiveForm> for FormProfile {
    fn from(e: EffectiveForm) -> Self {
        FormProfile::Constant(e)
    }
}

impl FormProfile {
    fn check(&self, n: usize) -> Result<()> {
        if let FormProfile::Table(t) = self {
            if t.len() != n {
                return Err(Error::ShapeMismatch(format!("form table has {} entries for {} nodes", t.len(), n)));
            }
        }
        Ok(())
    }

    pub fn at(&self, i: usize) -> &EffectiveForm {
        match self {
            FormProfile::Constant(e) => e,
            FormProfile::Table(t) => &t[i],
        }
    }

    /// `(a0_1, ρ₀ coefficients)` at `x`, linear between table nodes.
    fn interpolate(&self, x: f64, length: f64) -> (Matrix3<f64>, Vector3<f64>) {
        match self {
            FormProfile::Constant(e) => (e.a0_1, e.rho0_coeffs),
            FormProfile::Table(t) => {
                let n = t.len();
                if n == 1 {
                    return (t[0].a0_1, t[0].rho0_coeffs);
                }
                let pos = (x / length * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
                let i = (pos.floor() as usize).min(n - 2);
                let s = pos - i as f64;
                (
                    t[i].a0_1 * (1.0 - s) + t[i + 1].a0_1 * s,
                    t[i].rho0_coeffs * (1.0 - s) + t[i + 1].rho0_coeffs * s,
                )
            }
        }
    }
}

/// Nodal rod fields.
#[derive(Debug, Clone, PartialEq)]
pub struct RodSolution {
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    pub up: Vec<f64>,
    pub v2: Vec<f64>,
    pub v3: Vec<f64>,
    pub w: Vec<f64>,
    pub wp: Vec<f64>,
    pub v2p: Vec<f64>,
    pub v3p: Vec<f64>,
    pub v2pp: Vec<f64>,
    pub v3pp: Vec<f64>,
    pub moments: MomentFields,
    pub energy: f64,
}

impl RodSolution {
    /// `κ = (w′, −v₃″, v₂″)` at node `i`.
    pub fn kappa(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.wp[i], -self.v3pp[i], self.v2pp[i])
    }

    /// Stretch `a = u′ + ½(v₂′² + v₃′²)` at node `i`.
    pub fn stretch(&self, i: usize) -> f64 {
        self.up[i] + 0.5 * (self.v2p[i].powi(2) + self.v3p[i].powi(2))
    }
}

pub fn uniform_grid(length: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| length * i as f64 / (n - 1) as f64).collect()
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

const GAUSS5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// `∫_a^b g` by Gauss rule `rule`, split at `knots`.
fn integrate_split(a: f64, b: f64, knots: &[f64], rule: &[(f64, f64)], g: impl Fn(f64) -> f64) -> f64 {
    let mut pts = vec![a];
    pts.extend(knots.iter().copied().filter(|k| *k > a && *k < b));
    pts.push(b);
    pts.windows(2)
        .map(|w| {
            let (c, r) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            r * rule.iter().map(|(x, wt)| wt * g(c + r * x)).sum::<f64>()
        })
        .sum()
}

/// `(M, M′)` with `M(x) = −∫ₓᴸ (t − x) f(t) dt`, so `M″ = −f`, `M(L) = M′(L) = 0`.
fn moment_of(f: &LoadFn, grid: &[f64], length: f64) -> (Vec<f64>, Vec<f64>) {
    let n = grid.len();
    let knots = f.knots(length);
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for k in 0..n - 1 {
        a[k] = integrate_split(grid[k], grid[k + 1], &knots, &GAUSS3, |t| f.eval(t, length));
        b[k] = integrate_split(grid[k], grid[k + 1], &knots, &GAUSS3, |t| (t - grid[k]) * f.eval(t, length));
    }
    // suffix sums of ∫f and ∫(t − xᵢ)f
    let mut m = vec![0.0; n];
    let mut mp = vec![0.0; n];
    let (mut sa, mut sb) = (0.0, 0.0);
    for i in (0..n - 1).rev() {
        let h = grid[i + 1] - grid[i];
        // shift the accumulated first moment from x_{i+1} to x_i
        sb += b[i] + h * sa;
        sa += a[i];
        m[i] = -sb;
        mp[i] = sa;
    }
    (m, mp)
}

pub fn compute_moments(load: &LoadSpec, n_nodes: usize) -> Result<MomentFields> {
    load.validate()?;
    if n_nodes < 3 {
        return Err(Error::InvalidParameter(format!("n_nodes must be at least 3 (got {n_nodes})")));
    }
    let grid = uniform_grid(load.length, n_nodes);
    let (e11_tilde, e11_tilde_prime) = moment_of(&load.f2, &grid, load.length);
    let (e11_hat, e11_hat_prime) = moment_of(&load.f3, &grid, load.length);
    Ok(MomentFields { m_torsion: vec![0.0; n_nodes], grid, e11_tilde, e11_tilde_prime, e11_hat, e11_hat_prime })
}

/// Cumulative `∫₀^{xᵢ} y` with piecewise-quadratic interpolation (exact for
/// quadratics) on a uniform grid.
pub fn cumulative_integral(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n];
    for i in 0..n - 1 {
        let piece = if n < 3 {
            0.5 * h * (y[i] + y[i + 1])
        } else if i + 2 < n {
            h / 12.0 * (5.0 * y[i] + 8.0 * y[i + 1] - y[i + 2])
        } else {
            h / 12.0 * (-y[i - 1] + 8.0 * y[i] + 5.0 * y[i + 1])
        };
        out[i + 1] = out[i] + piece;
    }
    out
}

fn integral(y: &[f64], h: f64) -> f64 {
    *cumulative_integral(y, h).last().unwrap_or(&0.0)
}

/// Kinematic fields from pointwise constitutive inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub grid: Vec<f64>,
    pub kappa: Vec<Vector3<f64>>,
    pub w: Vec<f64>,
    pub v2: Vec<f64>,
    pub v3: Vec<f64>,
    pub v2p: Vec<f64>,
    pub v3p: Vec<f64>,
}

fn integrate_deflection(second: &[f64], h: f64, bc: BoundaryCondition) -> (Vec<f64>, Vec<f64>) {
    let mut first = cumulative_integral(second, h);
    if bc == BoundaryCondition::PaperLiteral {
        let end = *first.last().unwrap();
        first.iter_mut().for_each(|v| *v -= end);
    }
    let value = cumulative_integral(&first, h);
    (value, first)
}

pub fn solve_kinematics(eff: &FormProfile, moments: &MomentFields, bc: BoundaryCondition) -> Result<Kinematics> {
    let n = moments.grid.len();
    eff.check(n)?;
    let h = moments.grid[1] - moments.grid[0];
    let mut kappa = Vec::with_capacity(n);
    let mut chol = None;
    for i in 0..n {
        let form = eff.at(i);
        if i == 0 || matches!(eff, FormProfile::Table(_)) {
            chol = Some(
                Cholesky::new(form.a0_1)
                    .ok_or_else(|| Error::Singular(format!("a0_1 is not positive definite at node {i}")))?,
            );
        }
        let rhs = Vector3::new(-moments.m_torsion[i], moments.e11_hat[i], -moments.e11_tilde[i]);
        kappa.push(chol.as_ref().unwrap().solve(&rhs));
    }
    let wp: Vec<f64> = kappa.iter().map(|k| k[0]).collect();
    let v3pp: Vec<f64> = kappa.iter().map(|k| -k[1]).collect();
    let v2pp: Vec<f64> = kappa.iter().map(|k| k[2]).collect();
    let w = cumulative_integral(&wp, h);
    let (v2, v2p) = integrate_deflection(&v2pp, h, bc);
    let (v3, v3p) = integrate_deflection(&v3pp, h, bc);
    Ok(Kinematics { grid: moments.grid.clone(), kappa, w, v2, v3, v2p, v3p })
}

/// `u(x) = ∫₀ˣ ρ₀(κ) − ½(v₂′² + v₃′²)`; also returns `u′` at the nodes.
pub fn recover_axial(eff: &FormProfile, kin: &Kinematics) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = kin.grid.len();
    eff.check(n)?;
    let h = kin.grid[1] - kin.grid[0];
    let up: Vec<f64> = (0..n)
        .map(|i| eff.at(i).rho0(&kin.kappa[i]) - 0.5 * (kin.v2p[i].powi(2) + kin.v3p[i].powi(2)))
        .collect();
    Ok((cumulative_integral(&up, h), up))
}

fn assemble_solution(
    eff: &FormProfile,
    load: &LoadSpec,
    kin: Kinematics,
    moments: MomentFields,
) -> Result<RodSolution> {
    let (u, up) = recover_axial(eff, &kin)?;
    let mut sol = RodSolution {
        wp: kin.kappa.iter().map(|k| k[0]).collect(),
        v3pp: kin.kappa.iter().map(|k| -k[1]).collect(),
        v2pp: kin.kappa.iter().map(|k| k[2]).collect(),
        grid: kin.grid,
        u,
        up,
        v2: kin.v2,
        v3: kin.v3,
        w: kin.w,
        v2p: kin.v2p,
        v3p: kin.v3p,
        moments,
        energy: 0.0,
    };
    sol.energy = total_energy(eff, &sol, load)?;
    Ok(sol)
}

pub fn solve_rod(eff: &FormProfile, load: &LoadSpec, bc: BoundaryCondition, n_nodes: usize) -> Result<RodSolution> {
    let moments = compute_moments(load, n_nodes)?;
    let kin = solve_kinematics(eff, &moments, bc)?;
    assemble_solution(eff, load, kin, moments)
}

/// Elastic and load parts of `ℰ⁰`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParts {
    pub elastic: f64,
    pub work: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.elastic - self.work
    }
}

pub fn energy_parts(eff: &FormProfile, sol: &RodSolution, load: &LoadSpec) -> Result<EnergyParts> {
    let n = sol.grid.len();
    eff.check(n)?;
    let h = sol.grid[1] - sol.grid[0];
    let dens: Vec<f64> = (0..n).map(|i| eff.at(i).q0(sol.stretch(i), &sol.kappa(i))).collect();
    let work: Vec<f64> = (0..n)
        .map(|i| {
            let x = sol.grid[i];
            load.f2.eval(x, load.length) * sol.v2[i] + load.f3.eval(x, load.length) * sol.v3[i]
        })
        .collect();
    Ok(EnergyParts { elastic: integral(&dens, h), work: integral(&work, h) })
}

/// `∫ Q⁰(a, κ) − ∫(f₂v₂ + f₃v₃)`.
pub fn total_energy(eff: &FormProfile, sol: &RodSolution, load: &LoadSpec) -> Result<f64> {
    Ok(energy_parts(eff, sol, load)?.total())
}

/// `P₀(ξ), …, P_m(ξ)`.
fn legendre_values(m: usize, xi: f64) -> Vec<f64> {
    let mut p = vec![0.0; m + 1];
    p[0] = 1.0;
    if m >= 1 {
        p[1] = xi;
    }
    for k in 1..m {
        p[k + 1] = ((2 * k + 1) as f64 * xi * p[k] - k as f64 * p[k - 1]) / (k + 1) as f64;
    }
    p
}

/// Legendre coefficients of `∫₋₁^ξ g` for `g = Σ cₖPₖ`.
fn legendre_primitive(c: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; c.len() + 1];
    for (k, &ck) in c.iter().enumerate() {
        if k == 0 {
            out[0] += ck;
            out[1] += ck;
        } else {
            let s = ck / (2 * k + 1) as f64;
            out[k + 1] += s;
            out[k - 1] -= s;
        }
    }
    out
}

fn legendre_eval(c: &[f64], p: &[f64]) -> f64 {
    c.iter().zip(p).map(|(a, b)| a * b).sum()
}

/// Modal shapes on `[0, L]` of one unknown whose highest derivative is `P̃ⱼ`.
struct Modes {
    n: usize,
    length: f64,
    /// Legendre coefficients of the first and second primitives per mode.
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    /// First primitive at ξ = 1.
    first_end: Vec<f64>,
}

impl Modes {
    fn new(n: usize, length: f64) -> Self {
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        let mut first_end = Vec::with_capacity(n);
        for j in 0..n {
            let mut c = vec![0.0; j + 1];
            c[j] = 1.0;
            let f1 = legendre_primitive(&c);
            first_end.push(legendre_eval(&f1, &legendre_values(f1.len() - 1, 1.0)));
            second.push(legendre_primitive(&f1));
            first.push(f1);
        }
        Self { n, length, first, second, first_end }
    }

    /// `(g, g′, g″)` of mode `j` at `x`, `g″ = P̃ⱼ`, `g(0) = 0` and
    /// `g′(0) = 0` (clamped) or `g′(L) = 0` (paper_literal).
    fn deflection(&self, j: usize, x: f64, bc: BoundaryCondition) -> (f64, f64, f64) {
        let half = 0.5 * self.length;
        let xi = 2.0 * x / self.length - 1.0;
        let p = legendre_values(self.n + 2, xi);
        let mut d1 = legendre_eval(&self.first[j], &p);
        let mut d0 = legendre_eval(&self.second[j], &p);
        if bc == BoundaryCondition::PaperLiteral {
            d1 -= self.first_end[j];
            d0 -= (xi + 1.0) * self.first_end[j];
        }
        (half * half * d0, half * d1, p[j])
    }

    /// `(g, g′)` with `g′ = P̃ⱼ`, `g(0) = 0`.
    fn rotation(&self, j: usize, x: f64) -> (f64, f64) {
        let xi = 2.0 * x / self.length - 1.0;
        let p = legendre_values(self.n + 1, xi);
        (0.5 * self.length * legendre_eval(&self.first[j], &p), p[j])
    }
}

/// Minimizes the reduced energy `∫ ½κᵀa0_1κ − ∫(f₂v₂ + f₃v₃)` over
/// `n_modes` Legendre modes per unknown, then recovers `u` on an
/// `n_nodes` grid.
pub fn galerkin_solve(
    eff: &FormProfile,
    load: &LoadSpec,
    bc: BoundaryCondition,
    n_modes: usize,
    n_nodes: usize,
) -> Result<RodSolution> {
    load.validate()?;
    if n_modes < 4 {
        return Err(Error::InvalidParameter(format!("n_modes must be at least 4 (got {n_modes})")));
    }
    let length = load.length;
    let modes = Modes::new(n_modes, length);
    let m = n_modes;
    let dim = 3 * m;
    // unknown blocks: w′ = Σ dⱼP̃ⱼ, v₃″ = Σ eⱼP̃ⱼ, v₂″ = Σ cⱼP̃ⱼ
    let mut knots: Vec<f64> = load.f2.knots(length);
    knots.extend(load.f3.knots(length));
    let n_int = 64.max(2 * n_modes);
    knots.extend((1..n_int).map(|i| length * i as f64 / n_int as f64));
    knots.sort_by(f64::total_cmp);
    let mut pts = vec![0.0];
    pts.extend(knots);
    pts.push(length);
    pts.dedup();
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for win in pts.windows(2) {
        let (c, r) = (0.5 * (win[0] + win[1]), 0.5 * (win[1] - win[0]));
        if r <= 0.0 {
            continue;
        }
        for (gx, gw) in GAUSS5 {
            let x = c + r * gx;
            let wt = r * gw;
            let (a1, _) = eff.interpolate(x, length);
            let (f2, f3) = (load.f2.eval(x, length), load.f3.eval(x, length));
            // κ = B q
            let mut b = DMatrix::<f64>::zeros(3, dim);
            for j in 0..m {
                let (_, wpj) = modes.rotation(j, x);
                let (vj, _, ppj) = modes.deflection(j, x, bc);
                b[(0, j)] = wpj;
                b[(1, m + j)] = -ppj;
                b[(2, 2 * m + j)] = ppj;
                rhs[m + j] += wt * f3 * vj;
                rhs[2 * m + j] += wt * f2 * vj;
            }
            let a = DMatrix::from_fn(3, 3, |i, j| a1[(i, j)]);
            gram += wt * b.transpose() * a * &b;
        }
    }
    let q = Cholesky::new(gram)
        .ok_or_else(|| Error::Singular("Galerkin Gram matrix is not positive definite".into()))?
        .solve(&rhs);
    let moments = compute_moments(load, n_nodes)?;
    let grid = moments.grid.clone();
    let n = grid.len();
    let mut kin = Kinematics {
        grid: grid.clone(),
        kappa: Vec::with_capacity(n),
        w: vec![0.0; n],
        v2: vec![0.0; n],
        v3: vec![0.0; n],
        v2p: vec![0.0; n],
        v3p: vec![0.0; n],
    };
    for (i, &x) in grid.iter().enumerate() {
        let mut k = Vector3::zeros();
        for j in 0..m {
            let (wj, wpj) = modes.rotation(j, x);
            let (vj, vpj, ppj) = modes.deflection(j, x, bc);
            kin.w[i] += q[j] * wj;
            k[0] += q[j] * wpj;
            kin.v3[i] += q[m + j] * vj;
            kin.v3p[i] += q[m + j] * vpj;
            k[1] -= q[m + j] * ppj;
            kin.v2[i] += q[2 * m + j] * vj;
            kin.v2p[i] += q[2 * m + j] * vpj;
            k[2] += q[2 * m + j] * ppj;
        }
        kin.kappa.push(k);
    }
    assemble_solution(eff, load, kin, moments)
}
