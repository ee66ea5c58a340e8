use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::*;
use crate::features::EnvelopeSpec;
use crate::reference::analytic_ground_state;
use crate::rng::{streams, RngHandle};
use crate::sampling::{
    all_subsets, default_s1, default_s2, gauss_hermite_collocation, sample_collocation,
    sample_dimension_subset_with, sample_weights_agnostic, DimensionSubset, SubsetScheme,
};

fn build(problem: &GpeProblem, neurons: usize, nodes: usize, alpha: f64, seed: u64) -> Discretization {
    let d = problem.dim();
    let points = if d == 1 {
        gauss_hermite_collocation(1, nodes, alpha, 2.0).unwrap()
    } else {
        sample_collocation(d, nodes, alpha, 2.0, None, RngHandle::new(seed, streams::COLLOCATION)).unwrap()
    };
    let bank = sample_weights_agnostic(
        &points,
        neurons,
        default_s1(),
        default_s2(),
        RngHandle::new(seed, streams::WEIGHTS),
    )
    .unwrap();
    Discretization::new(
        problem,
        bank,
        points,
        EnvelopeSpec::gaussian(alpha),
        DiscretizationOptions::default(),
    )
    .unwrap()
}

fn grid_1d(n: usize, half_width: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |i, _| -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64)
}

fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn random_state(r: usize, seed: u64) -> CoefficientState {
    use rand::Rng;
    let mut g = RngHandle::new(seed, 99).generator();
    CoefficientState {
        c_re: DVector::from_fn(r, |_, _| g.random_range(-1.0..1.0)),
        c_im: DVector::from_fn(r, |_, _| g.random_range(-1.0..1.0)),
        t: 0.0,
    }
}

#[test]
fn reduced_interaction_matches_hand_value() {
    // β = 2, γ = (1, 2π, 8π): only axes 2 and 3 are integrated out.
    let tau = 2.0 * std::f64::consts::PI;
    let b = reduced_interaction(2.0, &[1.0, tau, 4.0 * tau], 1);
    assert!((b - 4.0).abs() < 1e-14);
}

#[test]
fn ground_state_energy_splits_evenly() {
    let p = GpeProblem::ground_state_start(vec![1.0], 0.0).unwrap();
    let disc = build(&p, 40, 48, 0.5, 1);
    let c0 = initial_coefficients(&p, &disc, DEFAULT_FIT_CAP).unwrap();
    let e = discrete_energy(&c0, &p, &disc);
    let tol = 5.0 / (48f64).sqrt();
    assert!((e.total - 0.5).abs() < tol * 1e-3, "{e:?}");
    assert!((e.kinetic - 0.25).abs() < 1e-6, "{e:?}");
    assert!((e.potential - 0.25).abs() < 1e-6, "{e:?}");
    assert_eq!(e.interaction, 0.0);
}

#[test]
fn gradient_energy_matches_explicit_derivatives() {
    // Independent check of the Gram-matrix assembly in d = 3.
    let p = GpeProblem::ground_state_start(vec![1.0, 1.5, 0.7], 3.0).unwrap();
    let disc = build(&p, 30, 200, 0.4, 2);
    let state = random_state(disc.rank(), 3);
    let e = discrete_energy(&state, &p, &disc);
    let cr = &disc.basis.v_r * &state.c_re;
    let ci = &disc.basis.v_r * &state.c_im;
    let w = disc.bank.weights();
    let mut kin = 0.0;
    for n in 0..disc.points.len() {
        let x = disc.points.point(n);
        let rho = disc.env.rho[n];
        let mut u = Complex64::new(0.0, 0.0);
        for k in 0..=disc.bank.neurons() {
            u += Complex64::new(cr[k], ci[k]) * disc.tables.psi[(k, n)];
        }
        let mut g2 = 0.0;
        for j in 0..3 {
            let mut du = Complex64::new(0.0, 0.0);
            for k in 0..disc.bank.neurons() {
                let t = disc.tables.psi[(k, n)];
                du += Complex64::new(cr[k], ci[k]) * (1.0 - t * t) * w[(k, j)];
            }
            // ∂_j(ρu) = ρ(∂_j u − 2α x_j u)
            g2 += (rho * (du - 2.0 * 0.4 * x[j] * u)).norm_sqr();
        }
        kin += disc.points.quad_weights[n] * 0.5 * g2;
    }
    assert!((e.kinetic - kin).abs() < 1e-10 * kin.abs().max(1.0), "{} vs {kin}", e.kinetic);
}

#[test]
fn stochastic_rhs_is_exactly_unbiased() {
    let p = GpeProblem::ground_state_start(vec![1.0; 4], 2.0).unwrap();
    let disc = build(&p, 25, 150, 0.5, 4);
    let state = random_state(disc.rank(), 5);
    let (fr, fi) = rhs_full(&state, &p, &disc).unwrap();
    let subsets = all_subsets(4, 2);
    let mut mr = DVector::zeros(fr.len());
    let mut mi = DVector::zeros(fi.len());
    for s in &subsets {
        let (r, i) = rhs_stochastic(&state, &p, &disc, s).unwrap();
        mr += r;
        mi += i;
    }
    mr /= subsets.len() as f64;
    mi /= subsets.len() as f64;
    let scale = fr.amax().max(fi.amax());
    assert!((&mr - &fr).amax() < 1e-12 * scale.max(1.0));
    assert!((&mi - &fi).amax() < 1e-12 * scale.max(1.0));
}

#[test]
fn larger_subsets_reduce_variance() {
    let p = GpeProblem::ground_state_start(vec![1.0; 6], 0.0).unwrap();
    let disc = build(&p, 25, 150, 0.5, 6);
    let state = random_state(disc.rank(), 7);
    let (fr, fi) = rhs_full(&state, &p, &disc).unwrap();
    let variance = |m: usize| {
        let mut g = RngHandle::new(8, streams::SUBSETS).generator();
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let s = sample_dimension_subset_with(6, m, &SubsetScheme::Uniform, &mut g).unwrap();
            let (r, i) = rhs_stochastic(&state, &p, &disc, &s).unwrap();
            acc += (&r - &fr).norm_squared() + (&i - &fi).norm_squared();
        }
        acc / draws as f64
    };
    let v1 = variance(1);
    let v3 = variance(3);
    assert!(v3 < v1, "var m=3 {v3} >= var m=1 {v1}");
}

#[test]
fn full_subset_matches_full_rhs() {
    let p = GpeProblem::ground_state_start(vec![1.0; 3], 1.0).unwrap();
    let disc = build(&p, 20, 100, 0.5, 9);
    let state = random_state(disc.rank(), 10);
    let a = rhs_full(&state, &p, &disc).unwrap();
    let b = rhs_stochastic(&state, &p, &disc, &DimensionSubset::full(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn field_agrees_with_collocation_rhs() {
    let p = GpeProblem::ground_state_start(vec![1.0, 2.0], 4.0).unwrap();
    let disc = build(&p, 20, 120, 0.5, 11);
    let state = random_state(disc.rank(), 12);
    let (fr, fi) = rhs_full(&state, &p, &disc).unwrap();
    let field = CoefficientField::new(&disc, &p, None);
    let z = field.eval(0.0, &state.stacked()).unwrap();
    let r = disc.rank();
    let scale = z.amax().max(1.0);
    assert!((z.rows(0, r) - &fr).amax() < 1e-10 * scale);
    assert!((z.rows(r, r) - &fi).amax() < 1e-10 * scale);

    let subset = DimensionSubset::from_indices(2, vec![1]).unwrap();
    let (sr, si) = rhs_stochastic(&state, &p, &disc, &subset).unwrap();
    let zs = CoefficientField::new(&disc, &p, Some(&subset)).eval(0.0, &state.stacked()).unwrap();
    assert!((zs.rows(0, r) - &sr).amax() < 1e-10 * scale);
    assert!((zs.rows(r, r) - &si).amax() < 1e-10 * scale);
}

#[test]
fn linear_rhs_superposes() {
    let p = GpeProblem::ground_state_start(vec![1.0, 1.0], 0.0).unwrap();
    let disc = build(&p, 20, 100, 0.5, 13);
    let a = random_state(disc.rank(), 14);
    let b = random_state(disc.rank(), 15);
    let sum = CoefficientState {
        c_re: &a.c_re + &b.c_re,
        c_im: &a.c_im + &b.c_im,
        t: 0.0,
    };
    let (ar, ai) = rhs_full(&a, &p, &disc).unwrap();
    let (br, bi) = rhs_full(&b, &p, &disc).unwrap();
    let (sr, si) = rhs_full(&sum, &p, &disc).unwrap();
    let scale = sr.amax().max(si.amax()).max(1.0);
    assert!((sr - ar - br).amax() < 1e-12 * scale);
    assert!((si - ai - bi).amax() < 1e-12 * scale);
}

#[test]
fn rhs_is_locally_lipschitz() {
    // |F(c1) − F(c2)| ≤ L |c1 − c2| with L from the operator norm plus the
    // cubic bound 3 β_d max ρ² |Ψ_r|² |P| R² on the ball |c| ≤ R.
    let p = GpeProblem::ground_state_start(vec![1.0], 5.0).unwrap();
    let disc = build(&p, 20, 40, 0.5, 16);
    let field = CoefficientField::new(&disc, &p, None);
    let lin_norm = field.linear_matrix().norm();
    let col_max = (0..disc.points.len())
        .map(|n| disc.env.rho_sq[n] * disc.basis.psi_r.column(n).norm_squared())
        .fold(0.0, f64::max);
    let radius = 1.0;
    let lip = lin_norm + 3.0 * p.beta_d * col_max * disc.basis.pinv_psi_r.norm() * radius * radius * 2.0;
    for seed in 0..20 {
        let mut a = random_state(disc.rank(), 100 + seed).stacked();
        let mut b = random_state(disc.rank(), 200 + seed).stacked();
        a /= a.norm() / radius;
        b *= 0.5 * radius / b.norm();
        let fa = field.eval(0.0, &a).unwrap();
        let fb = field.eval(0.0, &b).unwrap();
        assert!((fa - fb).norm() <= lip * (&a - &b).norm());
    }
}

#[test]
fn zero_initial_data_is_rejected() {
    let p = GpeProblem::new(
        vec![1.0],
        0.0,
        std::sync::Arc::new(|_: &[f64]| Complex64::new(0.0, 0.0)),
    )
    .unwrap();
    let disc = build(&p, 20, 40, 0.5, 17);
    assert!(matches!(
        initial_coefficients(&p, &disc, DEFAULT_FIT_CAP),
        Err(crate::Error::ZeroState { .. })
    ));
}

#[test]
fn unrepresentable_initial_data_is_rejected() {
    let p = GpeProblem::new(
        vec![1.0],
        0.0,
        std::sync::Arc::new(|x: &[f64]| Complex64::new((40.0 * x[0]).sin() * (-x[0] * x[0]).exp(), 0.0)),
    )
    .unwrap();
    let disc = build(&p, 10, 60, 0.5, 18);
    assert!(matches!(
        initial_coefficients(&p, &disc, DEFAULT_FIT_CAP),
        Err(crate::Error::RepresentationFailure { .. })
    ));
}

#[test]
fn reconstruction_decays_with_envelope() {
    let p = GpeProblem::ground_state_start(vec![1.0], 0.0).unwrap();
    let disc = build(&p, 30, 40, 0.5, 19);
    let state = random_state(disc.rank(), 20);
    let far = DMatrix::from_row_slice(2, 1, &[10.0, -10.0]);
    let vals = reconstruct(&state, &disc, &far).unwrap();
    let grid = grid_1d(256, 12.0);
    let u_max = reconstruct(&state, &disc, &grid)
        .unwrap()
        .iter()
        .zip(grid.iter())
        .map(|(v, x)| v.norm() / disc.envelope.rho(&[*x]))
        .fold(0.0, f64::max);
    for v in vals {
        assert!(v.norm() <= (-50.0f64).exp() * u_max * (1.0 + 1e-12));
    }
}

#[test]
fn mass_projection_normalizes() {
    let p = GpeProblem::ground_state_start(vec![1.0], 0.0).unwrap();
    let disc = build(&p, 20, 40, 0.5, 21);
    let s = mass_project(&random_state(disc.rank(), 22), &disc.gram).unwrap();
    assert!((discrete_mass(&s, &disc.gram) - 1.0).abs() < 1e-14);
    assert!(matches!(
        mass_project(&CoefficientState::zeros(disc.rank()), &disc.gram),
        Err(crate::Error::ZeroState { .. })
    ));
}

fn ground_state_run(config: &IntegratorConfig, t_final: f64) -> (Vec<Complex64>, Vec<Complex64>, Trajectory) {
    let p = GpeProblem::ground_state_start(vec![1.0], 0.0).unwrap();
    let disc = build(&p, 40, 48, 0.5, 23);
    let c0 = initial_coefficients(&p, &disc, DEFAULT_FIT_CAP).unwrap();
    let traj = evolve(&p, &disc, &c0, config, t_final, &[], RngHandle::new(0, 0)).unwrap();
    let grid = grid_1d(256, 6.0);
    let got = reconstruct(traj.snapshots.last().unwrap(), &disc, &grid).unwrap();
    let exact: Vec<Complex64> = grid.iter().map(|x| analytic_ground_state(&[1.0], &[*x], t_final)).collect();
    (got, exact, traj)
}

#[test]
fn adaptive_ground_state_rotates_in_phase() {
    let (got, exact, traj) = ground_state_run(&IntegratorConfig::default(), 1.0);
    assert!(rel_l2(&got, &exact) < 1e-6, "err {}", rel_l2(&got, &exact));
    for (g, e) in got.iter().zip(&exact) {
        assert!((g.norm() - e.norm()).abs() < 1e-6);
    }
    assert!(traj.stats.max_norm <= traj.stats.bound + 1e-9);
}

#[test]
fn adaptive_meets_tolerance_and_tightens() {
    let err = |tol: f64| {
        let cfg = IntegratorConfig {
            rtol: tol,
            atol: tol,
            project_mass: false,
            ..Default::default()
        };
        let (got, exact, _) = ground_state_run(&cfg, 1.0);
        rel_l2(&got, &exact)
    };
    let e1 = err(1e-6);
    let e2 = err(5e-7);
    assert!(e1 < 10.0 * 1e-6, "{e1}");
    assert!(e2 * 2.0 <= e1 || e2 < 1e-9, "{e1} -> {e2}");
}

#[test]
fn midpoint_linear_conserves_energy() {
    let cfg = IntegratorConfig {
        scheme: Scheme::ImplicitMidpoint,
        dt: 0.01,
        ..Default::default()
    };
    let p = GpeProblem::ground_state_start(vec![1.0], 0.0).unwrap();
    let disc = build(&p, 40, 48, 0.5, 23);
    let c0 = initial_coefficients(&p, &disc, DEFAULT_FIT_CAP).unwrap();
    let times: Vec<f64> = (0..=10).map(|k| k as f64).collect();
    let traj = evolve(&p, &disc, &c0, &cfg, 10.0, &times, RngHandle::new(0, 0)).unwrap();
    assert!(traj.ledger.relative_energy_drift() < 1e-8, "{}", traj.ledger.relative_energy_drift());
    assert!(traj.stats.max_mass_error < 1e-12);
}

#[test]
fn midpoint_is_second_order() {
    let p = GpeProblem::ground_state_start(vec![1.0], 3.0).unwrap();
    let disc = build(&p, 30, 40, 0.5, 24);
    let c0 = initial_coefficients(&p, &disc, DEFAULT_FIT_CAP).unwrap();
    let run = |scheme: Scheme, dt: f64| {
        let cfg = IntegratorConfig {
            scheme,
            dt,
            rtol: 1e-12,
            atol: 1e-12,
            project_mass: false,
            ..Default::default()
        };
        let traj = evolve(&p, &disc, &c0, &cfg, 0.4, &[], RngHandle::new(0, 0)).unwrap();
        traj.snapshots.last().unwrap().stacked()
    };
    let reference = run(Scheme::Dopri5, 0.0 + 1.0);
    let errs: Vec<f64> = [0.04, 0.02, 0.01, 0.005]
        .iter()
        .map(|&dt| (run(Scheme::ImplicitMidpoint, dt) - &reference).norm())
        .collect();
    for w in errs.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!((slope - 2.0).abs() < 0.2, "errors {errs:?}");
    }
}

#[test]
fn fixed_and_per_stage_subsets_run() {
    let p = GpeProblem::ground_state_start(vec![1.0; 3], 1.0).unwrap();
    let disc = build(&p, 20, 150, 0.5, 25);
    let c0 = initial_coefficients(&p, &disc, 1e-2).unwrap();
    for policy in [SubsetPolicy::Fixed, SubsetPolicy::ResamplePerStage, SubsetPolicy::ResamplePerStep] {
        for scheme in [Scheme::Dopri5, Scheme::ImplicitMidpoint] {
            let cfg = IntegratorConfig {
                scheme,
                subset_size: Some(1),
                subset_policy: policy,
                rtol: 1e-6,
                atol: 1e-6,
                ..Default::default()
            };
            let a = evolve(&p, &disc, &c0, &cfg, 0.05, &[], RngHandle::new(3, 0)).unwrap();
            let b = evolve(&p, &disc, &c0, &cfg, 0.05, &[], RngHandle::new(3, 0)).unwrap();
            assert_eq!(a.snapshots, b.snapshots, "{policy:?} {scheme:?}");
            assert!(a.stats.max_mass_error < 1e-12);
        }
    }
}

#[test]
fn invalid_integrator_config_lists_every_field() {
    let cfg = IntegratorConfig {
        rtol: 0.0,
        dt: -1.0,
        subset_size: Some(9),
        ..Default::default()
    };
    let msg = cfg.validate(3).unwrap_err().to_string();
    assert!(msg.contains("rtol") && msg.contains("dt must") && msg.contains("subset_size"));
}
