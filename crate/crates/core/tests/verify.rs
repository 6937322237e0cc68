mod common;

use common::*;
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vkrod::cell::{CellDiscretization, RegimeSpec};
use vkrod::geometry::{macro_strain_field, MacroStrain};
use vkrod::material::{young_modulus, NonlinearLaw};
use vkrod::rod::*;
use vkrod::verify::*;

fn sym_iota(ms: &MacroStrain, x2: f64, x3: f64) -> Matrix3<f64> {
    let col = macro_strain_field(ms, [x2, x3]);
    let mut m = Matrix3::zeros();
    for k in 0..3 {
        m[(k, 0)] = col[k];
    }
    0.5 * (m + m.transpose())
}

fn straight_rod(n: usize, rho: f64) -> RodSolution {
    let grid = uniform_grid(1.0, n);
    let z = vec![0.0; n];
    let load = LoadSpec::new(1.0, LoadFn::zero(), LoadFn::zero());
    RodSolution {
        u: grid.iter().map(|x| rho * x).collect(),
        up: vec![rho; n],
        grid,
        v2: z.clone(),
        v3: z.clone(),
        w: z.clone(),
        wp: z.clone(),
        v2p: z.clone(),
        v3p: z.clone(),
        v2pp: z.clone(),
        v3pp: z,
        moments: compute_moments(&load, n).unwrap(),
        energy: 0.0,
    }
}

#[test]
fn zero_corrector_strain_is_macro_strain() {
    let cs = square(0.3);
    let micro = laminate([0.37, 0.63]);
    let r = RegimeSpec::gamma_finite(1.0, 4);
    let disc = CellDiscretization::new(&r, &cs, &micro).unwrap();
    let ms = MacroStrain::new(0.5, [1.0, -2.0, 0.3]);
    for x in [[0.1, 0.2, -0.1], [3.7, -0.4, 0.45], [0.0, 0.0, 0.0]] {
        let e = unfolded_strain(0.05, &r, &disc.zero_field(), &ms, x, &cs).unwrap();
        assert!((e - sym_iota(&ms, x[1], x[2])).amax() < 1e-15);
    }
    assert!(unfolded_strain(0.05, &r, &disc.zero_field(), &ms, [0.0, 3.0, 0.0], &cs).is_err());
}

#[test]
fn homogeneous_stretch_strain_is_axially_constant() {
    let cs = square(0.3);
    let micro = homogeneous(1.0, 1.0);
    let r = RegimeSpec::gamma_finite(1.0, 4);
    let c = CellDiscretization::new(&r, &cs, &micro).unwrap().solve(&MacroStrain::unit(0)).unwrap();
    let base = unfolded_strain(0.1, &r, &c, &MacroStrain::unit(0), [0.0, 0.1, 0.2], &cs).unwrap();
    for x1 in [0.013, 0.25, 0.77, 5.1] {
        let e = unfolded_strain(0.1, &r, &c, &MacroStrain::unit(0), [x1, 0.1, 0.2], &cs).unwrap();
        assert!((e - base).amax() < 1e-12);
    }
}

#[test]
fn laminate_strain_is_periodic() {
    let cs = square(0.3);
    let micro = laminate([0.37, 0.63]);
    let r = RegimeSpec::gamma_finite(2.0, 6);
    let ms = MacroStrain::new(1.0, [0.3, -0.5, 0.7]);
    let c = CellDiscretization::new(&r, &cs, &micro).unwrap().solve(&ms).unwrap();
    let h = 0.1;
    let eps = h / 2.0;
    for x1 in [0.0123, 0.3, 0.71] {
        let a = unfolded_strain(h, &r, &c, &ms, [x1, -0.2, 0.1], &cs).unwrap();
        let b = unfolded_strain(h, &r, &c, &ms, [x1 + eps, -0.2, 0.1], &cs).unwrap();
        assert!((a - b).amax() < 1e-10);
    }
}

#[test]
fn zero_corrector_unit_stretch_energy() {
    let cs = square(0.3);
    let micro = homogeneous(0.0, 1.0);
    let r = RegimeSpec::gamma_finite(1.0, 2);
    let disc = CellDiscretization::new(&r, &cs, &micro).unwrap();
    for h in [0.3, 0.1, 0.037] {
        let e = scaled_quadratic_energy(h, &r, &disc.zero_field(), &MacroStrain::unit(0), &cs, &micro, 1.0).unwrap();
        assert!((e - 1.0).abs() < 1e-13);
    }
}

#[test]
fn homogeneous_sweep_is_flat() {
    let cs = square(0.3);
    let micro = homogeneous(0.7, 1.3);
    let r = RegimeSpec::gamma_finite(1.0, 2);
    let ms = MacroStrain::new(0.4, [1.0, 0.2, -0.6]);
    let sweep = convergence_sweep(&[0.1, 0.0731, 0.05], &r, &cs, &micro, &ms, 1.0).unwrap();
    for row in &sweep.rows {
        assert!(row.abs_error <= 1e-10 * sweep.limit_value);
        assert_eq!(row.abs_error, (row.scaled_energy - sweep.limit_value).abs());
        assert_eq!(row.epsilon, row.h);
    }
}

#[test]
fn commensurate_laminate_sweep_is_exact() {
    let cs = square(0.3);
    let micro = laminate([0.37, 0.63]);
    let r = RegimeSpec::gamma_finite(2.0, 6);
    let ms = MacroStrain::new(1.0, [0.3, -0.5, 0.7]);
    let sweep = convergence_sweep(&[0.1, 0.05, 0.025], &r, &cs, &micro, &ms, 1.0).unwrap();
    for row in &sweep.rows {
        assert!(row.abs_error <= 1e-10 * sweep.limit_value, "{row:?}");
        assert_eq!(row.epsilon, row.h / 2.0);
    }
}

#[test]
fn incommensurate_laminate_sweep_converges_linearly() {
    let cs = square(0.3);
    let micro = laminate([0.37, 0.63]);
    let r = RegimeSpec::gamma_finite(1.0, 6);
    let ms = MacroStrain::new(1.0, [0.3, -0.5, 0.7]);
    let hs: Vec<f64> = [10.5, 20.5, 40.5, 80.5].iter().map(|n| 1.0 / n).collect();
    let sweep = convergence_sweep(&hs, &r, &cs, &micro, &ms, 1.0).unwrap();
    let rate = sweep.fitted_rate.unwrap();
    assert!(rate >= 0.8, "rate {rate}");
    for w in sweep.rows.windows(2) {
        assert!(w[1].abs_error < w[0].abs_error);
    }
}

#[test]
fn cell_minimizer_minimizes_scaled_energy() {
    let cs = square(0.3);
    let micro = laminate([0.37, 0.63]);
    let r = RegimeSpec::gamma_finite(1.0, 4);
    let disc = CellDiscretization::new(&r, &cs, &micro).unwrap();
    let ms = MacroStrain::new(0.6, [0.3, 1.0, -0.2]);
    let c = disc.solve(&ms).unwrap();
    let e0 = scaled_quadratic_energy(0.05, &r, &c, &ms, &cs, &micro, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let mut vals: Vec<f64> = c.values.iter().map(|v| v + 0.05 * rng.random_range(-1.0..1.0)).collect();
        disc.project_gauge(&mut vals).unwrap();
        let other = disc.field(vals, c.stats);
        let e = scaled_quadratic_energy(0.05, &r, &other, &ms, &cs, &micro, 1.0).unwrap();
        assert!(e >= e0, "{e} < {e0}");
    }
}

#[test]
fn quadratic_energy_is_thread_count_independent() {
    let cs = square(0.3);
    let micro = laminate([0.37, 0.63]);
    let r = RegimeSpec::gamma_finite(1.0, 4);
    let ms = MacroStrain::new(1.0, [0.3, -0.5, 0.7]);
    let c = CellDiscretization::new(&r, &cs, &micro).unwrap().solve(&ms).unwrap();
    let run = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| scaled_quadratic_energy(1.0 / 40.5, &r, &c, &ms, &cs, &micro, 1.0).unwrap())
    };
    assert_eq!(run(1).to_bits(), run(3).to_bits());
}

#[test]
fn other_regimes_are_rejected() {
    let cs = square(0.5);
    let micro = homogeneous(1.0, 1.0);
    let r = RegimeSpec::gamma_zero(2);
    let c = CellDiscretization::new(&r, &cs, &micro).unwrap().zero_field();
    assert!(scaled_quadratic_energy(0.1, &r, &c, &MacroStrain::unit(0), &cs, &micro, 1.0).is_err());
    assert!(convergence_sweep(&[0.1], &RegimeSpec::gamma_infinite(2), &cs, &micro, &MacroStrain::unit(0), 1.0).is_err());
    let fin = RegimeSpec::gamma_finite(1.0, 2);
    assert!(convergence_sweep(&[], &fin, &cs, &micro, &MacroStrain::unit(0), 1.0).is_err());
    assert!(convergence_sweep(&[0.05, 0.1], &fin, &cs, &micro, &MacroStrain::unit(0), 1.0).is_err());
}

#[test]
fn ansatz_of_zero_solution_is_rigid() {
    let cs = square(0.5);
    let micro = homogeneous(1.0, 1.0);
    let r = RegimeSpec::gamma_finite(1.0, 2);
    let (_, corr) = CellDiscretization::new(&r, &cs, &micro).unwrap().effective_form_with_correctors().unwrap();
    let law = NonlinearLaw::new(1.0, 1.0).unwrap();
    for h in [0.1, 0.01] {
        assert_eq!(ansatz_energy_nonlinear(h, &straight_rod(11, 0.0), &corr, &[law], &cs, &micro, &r).unwrap(), 0.0);
    }
    let two = [law, law];
    assert!(ansatz_energy_nonlinear(0.1, &straight_rod(11, 0.0), &corr, &two, &cs, &micro, &r).is_err());
}

#[test]
fn ansatz_stretch_matches_young_modulus() {
    let cs = square(0.3);
    let micro = homogeneous(1.0, 1.0);
    let r = RegimeSpec::gamma_finite(1.0, 2);
    let (_, corr) = CellDiscretization::new(&r, &cs, &micro).unwrap().effective_form_with_correctors().unwrap();
    let law = NonlinearLaw::new(1.0, 1.0).unwrap();
    let rho = 0.01;
    let target = 0.5 * young_modulus(1.0, 1.0) * rho * rho;
    let e = ansatz_energy_nonlinear(0.0125, &straight_rod(11, rho), &corr, &[law], &cs, &micro, &r).unwrap();
    assert!((e - target).abs() <= 0.05 * target, "{e} vs {target}");
}

#[test]
fn ansatz_stretch_approaches_quadratic_energy() {
    let cs = square(0.3);
    let micro = laminate([0.37, 0.63]);
    let r = RegimeSpec::gamma_finite(1.0, 4);
    let (_, corr) = CellDiscretization::new(&r, &cs, &micro).unwrap().effective_form_with_correctors().unwrap();
    let laws = [NonlinearLaw::new(1.0, 1.0).unwrap(), NonlinearLaw::new(5.0, 4.0).unwrap()];
    let rho = 0.01;
    let ms = MacroStrain::new(rho, [0.0; 3]);
    let rod = straight_rod(11, rho);
    let hs = [0.1, 0.05, 0.025];
    let gaps: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let nl = ansatz_energy_nonlinear(h, &rod, &corr, &laws, &cs, &micro, &r).unwrap();
            let mut c = corr[0].clone();
            c.values.iter_mut().for_each(|v| *v *= rho);
            let q = scaled_quadratic_energy(h, &r, &c, &ms, &cs, &micro, 1.0).unwrap();
            (nl - q).abs()
        })
        .collect();
    let slope = loglog_slope(&hs, &gaps).unwrap();
    assert!(slope >= 0.9, "slope {slope}, gaps {gaps:?}");
}

#[test]
fn ansatz_cantilever_tracks_limit_energy() {
    let cs = square(0.3);
    let micro = homogeneous(1.0, 1.0);
    let r = RegimeSpec::gamma_finite(1.0, 2);
    let disc = CellDiscretization::new(&r, &cs, &micro).unwrap();
    let (eff, corr) = disc.effective_form_with_correctors().unwrap();
    let load = LoadSpec::new(1.0, LoadFn::Poly(vec![0.01]), LoadFn::Poly(vec![0.005]));
    let prof = FormProfile::from(eff);
    let sol = solve_rod(&prof, &load, BoundaryCondition::ClampedLeft, 801).unwrap();
    let elastic = energy_parts(&prof, &sol, &load).unwrap().elastic;
    let law = NonlinearLaw::new(1.0, 1.0).unwrap();
    let diffs: Vec<f64> = [0.1, 0.05, 0.025, 0.0125]
        .iter()
        .map(|&h| (ansatz_energy_nonlinear(h, &sol, &corr, &[law], &cs, &micro, &r).unwrap() - elastic).abs())
        .collect();
    assert!(diffs[3] <= 0.05 * elastic, "{diffs:?}");
    for w in diffs.windows(2) {
        assert!(w[1] < w[0], "{diffs:?}");
    }
}

#[test]
fn pairwise_sum_and_slope_helpers() {
    let v: Vec<f64> = (0..1000).map(|i| 1.0 / (1.0 + i as f64)).collect();
    let naive: f64 = v.iter().sum();
    assert!((pairwise_sum(&v) - naive).abs() < 1e-12);
    assert_eq!(pairwise_sum(&[]), 0.0);
    let x = [1.0, 2.0, 4.0, 8.0];
    let y: Vec<f64> = x.iter().map(|t: &f64| 3.0 * t.powf(1.5)).collect();
    assert!((loglog_slope(&x, &y).unwrap() - 1.5).abs() < 1e-12);
    assert_eq!(loglog_slope(&[1.0], &[1.0]), None);
}
