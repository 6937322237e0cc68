//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vkrod::cell::*;
use vkrod::geometry::{build_section, normalize_section, refine_uniform, MacroStrain, SectionShape};
use vkrod::material::{isotropic_tensor, quadratic_energy, svk_energy, young_modulus, NonlinearLaw};
use vkrod::microstructure::{birkhoff_average, realize, Layout, MicrostructureSpec};
use vkrod::rod::*;
use vkrod::verify::{convergence_sweep, loglog_slope};

const DISK_TOL: f64 = 0.01;
const SQUARE_TORSION: f64 = 0.14058;
const SQUARE_TOL: f64 = 0.02;
const SECTION_BUDGET: Duration = Duration::from_secs(60);
const DENSE_TOL: f64 = 1e-9;
const DENSE_BUDGET: Duration = Duration::from_secs(10);
const SCHUR_TOL: f64 = 1e-8;
const SCHUR_CASES: usize = 100;
const GRID_POINTS: usize = 10_000;
const CANTILEVER_TOL: f64 = 1e-6;
const DUAL_PATH_TOL: f64 = 1e-4;
const SWEEP_TOL: f64 = 1e-10;
const SWEEP_RATE: f64 = 0.8;
const SWEEP_BUDGET: Duration = Duration::from_secs(60);
const SVK_SLOPE: (f64, f64) = (3.0, 0.1);
const BIRKHOFF_SLOPE: (f64, f64) = (-0.5, 0.15);
const INVARIANT_TOL: f64 = 1e-8;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn disk_and_square() -> Outcome {
    let mut notes = Vec::new();
    let (lambda, mu) = (1.0, 1.0);
    let micro = homogeneous(lambda, mu);
    let e = young_modulus(lambda, mu);
    let regime = RegimeSpec::gamma_finite(1.0, 2);

    let t0 = Instant::now();
    let disk = build_section(&SectionShape::Disk { radius: 1.0 / PI.sqrt() }, 0.034).map_err(|e| e.to_string())?;
    let disk = normalize_section(&disk).map_err(|e| e.to_string())?.0;
    let a0 = effective_form(&regime, &disk, &micro).map_err(|e| e.to_string())?.a0;
    let dt = t0.elapsed();
    let (bend, tors) = (e / (4.0 * PI), mu / (2.0 * PI));
    notes.push(format!(
        "disk {} tris: bending {:.3e}/{:.3e}, torsion {:.3e} rel, {:.1}s",
        disk.n_triangles(),
        rel(a0[(2, 2)], bend),
        rel(a0[(3, 3)], bend),
        rel(a0[(1, 1)], tors),
        dt.as_secs_f64()
    ));
    ensure(rel(a0[(2, 2)], bend) <= DISK_TOL && rel(a0[(3, 3)], bend) <= DISK_TOL, "disk bending")?;
    ensure(rel(a0[(1, 1)], tors) <= DISK_TOL, "disk torsion")?;
    ensure(dt < SECTION_BUDGET, "disk runtime")?;

    let t0 = Instant::now();
    let sq = square(0.028);
    let a0 = effective_form(&regime, &sq, &micro).map_err(|e| e.to_string())?.a0;
    let dt = t0.elapsed();
    let j = SQUARE_TORSION * mu;
    notes.push(format!(
        "square {} tris: torsion {:.3e} rel, {:.1}s",
        sq.n_triangles(),
        rel(a0[(1, 1)], j),
        dt.as_secs_f64()
    ));
    ensure(rel(a0[(1, 1)], j) <= SQUARE_TOL, format!("square torsion {}", a0[(1, 1)]))?;
    // the independent warping-Laplace solve on the same mesh
    let jw = warping_torsion_constant(&sq) * mu;
    ensure(rel(jw, j) <= SQUARE_TOL, format!("warping oracle {jw}"))?;
    ensure(dt < SECTION_BUDGET, "square runtime")?;
    Ok(notes.join("; "))
}

fn dense_oracle() -> Outcome {
    let cs = square(0.142);
    let micro = laminate([0.37, 0.63]);
    let regime = RegimeSpec::gamma_finite(1.0, 8);
    let ms = MacroStrain::new(1.0, [0.3, -0.5, 0.7]);
    let t0 = Instant::now();
    let disc = CellDiscretization::new(&regime, &cs, &micro).map_err(|e| e.to_string())?;
    let c = disc.solve(&ms).map_err(|e| e.to_string())?;
    let iterative = cell_energy(&c, &regime, &cs, &micro, &ms).map_err(|e| e.to_string())?;
    let dt_iter = t0.elapsed();
    let dense = dense_cell_minimum(&disc, &cs, &ms);
    let dt = t0.elapsed();
    let r = rel(iterative, dense);
    let note = format!(
        "{} tris, {} dofs: rel diff {r:.2e}, iterative {:.2}s, total {:.2}s",
        cs.n_triangles(),
        disc.n_dofs(),
        dt_iter.as_secs_f64(),
        dt.as_secs_f64()
    );
    ensure(r <= DENSE_TOL, note.clone())?;
    ensure(dt < DENSE_BUDGET, note.clone())?;
    Ok(note)
}

fn schur_grid_search() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..SCHUR_CASES {
        let m = Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let a0 = m * m.transpose() + Matrix4::identity() * 0.1;
        let eff = EffectiveForm::from_a0(a0).map_err(|e| e.to_string())?;
        let k = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let q = |z: f64| {
            let v = Vector4::new(z, k[0], k[1], k[2]);
            0.5 * v.dot(&(a0 * v))
        };
        // bracket |z*| ≤ |b||κ|/a, then a coarse and a fine pass
        let b = Vector3::new(a0[(1, 0)], a0[(2, 0)], a0[(3, 0)]);
        let r = b.norm() * k.norm() / a0[(0, 0)] + 1.0;
        let half = GRID_POINTS / 2;
        let scan = |lo: f64, hi: f64| {
            (0..half)
                .map(|i| lo + (hi - lo) * i as f64 / (half - 1) as f64)
                .map(|z| (z, q(z)))
                .fold((0.0, f64::INFINITY), |best, p| if p.1 < best.1 { p } else { best })
        };
        let (zc, _) = scan(-r, r);
        let d = 2.0 * r / (half - 1) as f64;
        let (_, qmin) = scan(zc - d, zc + d);
        let target = eff.q0_1(&k);
        let err = (qmin - target).abs() / target.max(1.0);
        worst = worst.max(err);
    }
    let note = format!("{SCHUR_CASES} cases, worst {worst:.2e}");
    ensure(worst <= SCHUR_TOL, note.clone())?;
    Ok(note)
}

fn cantilever() -> Outcome {
    let eff: FormProfile = EffectiveForm::from_a0(Matrix4::identity()).map_err(|e| e.to_string())?.into();
    let load = LoadSpec::new(1.0, LoadFn::Poly(vec![1.0]), LoadFn::zero());
    let sol = solve_rod(&eff, &load, BoundaryCondition::ClampedLeft, 1001).map_err(|e| e.to_string())?;
    let last = sol.grid.len() - 1;
    let (ev, eu) = ((sol.v2[last] - 0.125).abs(), (sol.u[last] + 1.0 / 112.0).abs());
    let note = format!("v2(1) err {ev:.2e}, u(1) err {eu:.2e}");
    ensure(ev <= CANTILEVER_TOL && eu <= CANTILEVER_TOL, note.clone())?;
    ensure(sol.w.iter().all(|v| *v == 0.0), "w not identically zero")?;
    Ok(note)
}

fn linf_rel(a: &RodSolution, b: &RodSolution) -> f64 {
    [(&a.u, &b.u), (&a.v2, &b.v2), (&a.v3, &b.v3), (&a.w, &b.w)]
        .iter()
        .map(|(x, y)| {
            let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if scale == 0.0 {
                return y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            }
            x.iter().zip(y.iter()).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())) / scale
        })
        .fold(0.0, f64::max)
}

fn dual_path() -> Outcome {
    let mut notes = Vec::new();
    let mut coupled = Matrix4::from_diagonal(&Vector4::new(3.0, 1.2, 2.0, 1.5));
    for (i, j, v) in [(0, 1, 0.4), (0, 2, -0.3), (0, 3, 0.2), (1, 2, 0.15), (1, 3, -0.1), (2, 3, 0.25)] {
        coupled[(i, j)] = v;
        coupled[(j, i)] = v;
    }
    let cases = [
        ("cantilever", Matrix4::identity(), LoadSpec::new(1.0, LoadFn::Poly(vec![1.0]), LoadFn::zero())),
        ("coupled", coupled, LoadSpec::new(1.5, LoadFn::Poly(vec![1.0, 0.5, -0.8]), LoadFn::Poly(vec![-0.3, 0.2]))),
    ];
    for (name, a0, load) in cases {
        let eff: FormProfile = EffectiveForm::from_a0(a0).map_err(|e| e.to_string())?.into();
        let direct = solve_rod(&eff, &load, BoundaryCondition::ClampedLeft, 1001).map_err(|e| e.to_string())?;
        let modal = galerkin_solve(&eff, &load, BoundaryCondition::ClampedLeft, 16, 1001).map_err(|e| e.to_string())?;
        let err = linf_rel(&direct, &modal);
        notes.push(format!("{name} {err:.2e}"));
        ensure(err <= DUAL_PATH_TOL, notes.join(", "))?;
    }
    Ok(notes.join(", "))
}

fn gamma_sweep() -> Outcome {
    let cs = square(0.1);
    let micro = laminate([0.37, 0.63]);
    let regime = RegimeSpec::gamma_finite(1.0, 8);
    let ms = MacroStrain::new(1.0, [0.3, -0.5, 0.7]);
    let t0 = Instant::now();
    let comm = convergence_sweep(&[0.1, 0.05, 0.025, 0.0125], &regime, &cs, &micro, &ms, 1.0).map_err(|e| e.to_string())?;
    let dt_comm = t0.elapsed();
    let worst = comm.rows.iter().map(|r| r.abs_error / comm.limit_value).fold(0.0, f64::max);
    let t1 = Instant::now();
    let hs: Vec<f64> = [10.5, 20.5, 40.5, 80.5].iter().map(|n| 1.0 / n).collect();
    let inc = convergence_sweep(&hs, &regime, &cs, &micro, &ms, 1.0).map_err(|e| e.to_string())?;
    let dt_inc = t1.elapsed();
    let rate = inc.fitted_rate.unwrap_or(f64::NAN);
    let note = format!(
        "commensurate worst {worst:.2e} ({:.1}s), incommensurate rate {rate:.3} ({:.1}s)",
        dt_comm.as_secs_f64(),
        dt_inc.as_secs_f64()
    );
    ensure(worst <= SWEEP_TOL && rate >= SWEEP_RATE, note.clone())?;
    ensure(dt_comm < SWEEP_BUDGET && dt_inc < SWEEP_BUDGET, note.clone())?;
    Ok(note)
}

fn svk_defect() -> Outcome {
    let law = NonlinearLaw::new(1.0, 1.0).map_err(|e| e.to_string())?;
    let t = isotropic_tensor(1.0, 1.0).map_err(|e| e.to_string())?;
    let g = Matrix3::new(0.3, -0.2, 0.5, 0.1, 0.4, -0.6, 0.2, 0.7, -0.1);
    let deltas = [1e-1, 1e-2, 1e-3, 1e-4];
    let defects: Vec<f64> = deltas
        .iter()
        .map(|d| (svk_energy(&law, &(Matrix3::identity() + *d * g)) - quadratic_energy(&t, &(*d * g))).abs())
        .collect();
    let slope = loglog_slope(&deltas, &defects).ok_or("slope fit failed")?;
    let note = format!("slope {slope:.4}");
    ensure((slope - SVK_SLOPE.0).abs() <= SVK_SLOPE.1, note.clone())?;
    Ok(note)
}

fn birkhoff_rate() -> Outcome {
    let phases = vec![isotropic_tensor(1.0, 1.0).unwrap(), isotropic_tensor(5.0, 4.0).unwrap()];
    let g = [young_modulus(1.0, 1.0), young_modulus(5.0, 4.0)];
    let windows = [1e2, 1e3, 1e4];
    let mut errs = vec![0.0; windows.len()];
    let mut mean = 0.0;
    for seed in 1..=16u64 {
        let spec = MicrostructureSpec { phases: phases.clone(), layout: Layout::Renewal { mean_lengths: vec![1.0, 2.0] }, seed };
        let r = realize(&spec).map_err(|e| e.to_string())?;
        mean = r.ensemble_mean(&g);
        for (k, &t) in windows.iter().enumerate() {
            errs[k] += (birkhoff_average(&r, &g, t).map_err(|e| e.to_string())? - mean).abs() / 16.0;
        }
    }
    let slope = loglog_slope(&windows, &errs).ok_or("slope fit failed")?;
    let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
    let note = format!("mean {mean:.4}, errors [{}], slope {slope:.3}", shown.join(", "));
    ensure((slope - BIRKHOFF_SLOPE.0).abs() <= BIRKHOFF_SLOPE.1, note.clone())?;
    Ok(note)
}

fn invariants() -> Outcome {
    let err = |e: vkrod::Error| e.to_string();
    let cs = square(0.3);
    let lam = laminate([0.37, 0.63]);
    let regimes = [RegimeSpec::gamma_zero(4), RegimeSpec::gamma_finite(1.0, 4), RegimeSpec::gamma_infinite(4)];
    let mut min_eig = f64::INFINITY;
    for r in &regimes {
        min_eig = min_eig.min(effective_form(r, &cs, &lam).map_err(err)?.min_eigenvalue());
    }
    ensure(min_eig > 0.0, format!("a0 not SPD: {min_eig}"))?;

    let coarse = square(0.5);
    let fine = refine_uniform(&coarse);
    let half = laminate([0.5, 0.5]);
    let a = effective_form(&RegimeSpec::gamma_finite(1.0, 4), &coarse, &half).map_err(err)?.a0;
    let b = effective_form(&RegimeSpec::gamma_finite(1.0, 8), &fine, &half).map_err(err)?.a0;
    ensure((0..4).all(|i| b[(i, i)] <= a[(i, i)] * (1.0 + 1e-10)), "refinement raised a diagonal entry")?;

    let ms = MacroStrain::new(0.3, [1.0, -0.5, 0.25]);
    let mut gauge = 0.0f64;
    for r in &regimes {
        let disc = CellDiscretization::new(r, &cs, &lam).map_err(err)?;
        let c = disc.solve(&ms).map_err(err)?;
        let e0 = cell_energy(&c, r, &cs, &lam, &ms).map_err(err)?;
        let mut moved = c.clone();
        disc.add_rigid(&mut moved.values, [0.7, -1.2, 3.0], 0.9, &cs);
        gauge = gauge.max(rel(cell_energy(&moved, r, &cs, &lam, &ms).map_err(err)?, e0));
    }
    ensure(gauge <= 1e-12, format!("gauge shift changed energy by {gauge:e}"))?;

    let hom = homogeneous(0.5, 1.5);
    let forms: Vec<Matrix4<f64>> =
        regimes.iter().map(|r| effective_form(r, &cs, &hom).map(|f| f.a0)).collect::<Result<_, _>>().map_err(err)?;
    let spread = forms.iter().map(|f| (f - forms[0]).amax()).fold(0.0, f64::max) / forms[0].amax();
    ensure(spread <= INVARIANT_TOL, format!("regime spread {spread:e}"))?;
    Ok(format!("min eig {min_eig:.3e}, gauge {gauge:.1e}, regime spread {spread:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("classical rod recovery", disk_and_square),
        ("cell oracle equivalence", dense_oracle),
        ("schur reduction", schur_grid_search),
        ("cantilever closed forms", cantilever),
        ("dual-path agreement", dual_path),
        ("gamma-limit sweep", gamma_sweep),
        ("nonlinear expansion defect", svk_defect),
        ("birkhoff rate", birkhoff_rate),
        ("structural invariants", invariants),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(note) => println!("PASS {} {name}: {note}", i + 1),
            Err(note) => {
                failed += 1;
                println!("FAIL {} {name}: {note}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
