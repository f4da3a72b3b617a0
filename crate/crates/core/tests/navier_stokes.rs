use std::sync::{Arc, OnceLock};

use mixed_ns::basis::{compute_eigenbasis, EigenBasis};
use mixed_ns::evolution::*;
use mixed_ns::fem::assemble;
use mixed_ns::mesh::{build_channel_mesh, ChannelParams};
use mixed_ns::navier_stokes::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn basis(nx: usize, ny: usize, modes: usize) -> EigenBasis {
    let mesh = build_channel_mesh(&ChannelParams::new(3.0, 1.0, nx, ny)).unwrap();
    compute_eigenbasis(Arc::new(assemble(Arc::new(mesh)).unwrap()), modes).unwrap()
}

/// An 8-mode basis on 24x8 with a coarse time grid, shared by the cheaper tests.
fn setup() -> &'static (ModalSpace, ConvectionTensor) {
    static S: OnceLock<(ModalSpace, ConvectionTensor)> = OnceLock::new();
    S.get_or_init(|| {
        let b = basis(24, 8, 8);
        let space = ModalSpace::from_basis(&b, TimeGrid::uniform(1.0, 16, 4).unwrap()).unwrap();
        (space, ConvectionTensor::from_basis(&b))
    })
}

fn random_field(space: &ModalSpace, seed: u64, norm: f64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = solve_stokes_evolution(space, &DataPair::random(space, &mut rng, 0.5)).unwrap();
    u.scale(norm / x_norm(space, &u))
}

#[test]
fn tensor_matches_trilinear_form() {
    let b = basis(12, 4, 4);
    let t = ConvectionTensor::from_basis(&b);
    let s = &b.spaces;
    for (l, m, k) in [(0, 0, 0), (0, 1, 2), (3, 2, 1), (1, 1, 3)] {
        let direct = s.trilinear_b(&b.modes[l], &b.modes[m], &b.modes[k]).unwrap();
        assert!((t.get(l, m, k) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }
    // Linear in each slot.
    let u = [0.3, -1.0, 0.5, 2.0];
    let w = [1.0, 0.2, -0.7, 0.1];
    let a = t.apply(&u, &w);
    let a2 = t.apply(&u.map(|v| 2.0 * v), &w);
    assert!(a.iter().zip(&a2).all(|(x, y)| (2.0 * x - y).abs() <= 1e-13 * y.abs().max(1.0)));
    assert!(t.apply(&[0.0; 4], &w).iter().all(|v| *v == 0.0));
}

#[test]
fn convection_data_examples() {
    let (space, t) = setup();
    let u = random_field(space, 1, 1.0);
    let zero = SpectralField::zero(space);
    assert_eq!(convection_data(space, t, &u, &zero), DataPair::zero(space));

    // u = w = φ₁ at every time: the data is (b(φ₁, φ₁, φ_k))_k, constant in t.
    let ones = DataPair::from_fn(space, |_, _| 0.0, |k| if k == 0 { 1.0 } else { 0.0 });
    let lam = space.lambdas[0];
    let phi1 = solve_stokes_evolution(space, &ones.add(&DataPair::from_fn(space, |k, _| if k == 0 { lam } else { 0.0 }, |_| 0.0)))
        .unwrap();
    let c = convection_data(space, t, &phi1, &phi1);
    for k in 0..space.n_modes() {
        assert!(c.mu[k].iter().all(|v| (v - t.get(0, 0, k)).abs() <= 1e-12));
        assert_eq!(c.a[k], 0.0);
    }
}

#[test]
fn operator_identities() {
    let (space, t) = setup();
    let zero = SpectralField::zero(space);
    assert_eq!(apply_n(space, t, &zero), DataPair::zero(space));
    let u = random_field(space, 2, 3.0);
    let w = random_field(space, 3, 2.0);
    assert_eq!(apply_b_u(space, t, &u, &zero), DataPair::zero(space));
    assert_eq!(apply_b_u(space, t, &zero, &w), DataPair::zero(space));
    let diff = apply_n(space, t, &u).sub(&apply_s(space, &u));
    assert!(diff.a.iter().all(|v| *v == 0.0));
    assert!(diff.sub(&convection_data(space, t, &u, &u)).norm(space) <= 1e-12 * diff.norm(space));

    // Manufactured right-hand side: 𝒩(ū) = d reproduces ū through the identity.
    let d = apply_n(space, t, &u);
    let r = d.sub(&apply_s(space, &u)).sub(&convection_data(space, t, &u, &u));
    assert!(r.norm(space) <= 1e-12 * d.norm(space));
}

#[test]
fn frechet_remainder_is_exactly_quadratic() {
    let (space, t) = setup();
    for seed in 0..10 {
        let u = random_field(space, 10 + seed, 5.0);
        let w = random_field(space, 100 + seed, 0.5 + seed as f64);
        let (defect, quad) = frechet_defect(space, t, &u, &w);
        let scale = apply_n(space, t, &u.add(&w)).norm(space);
        assert!(defect <= 1e-10 * scale.max(1.0), "defect {defect}");
        assert!(quad > 0.0);
    }
}

/// `sup ‖[b(w, w, ·); 0]‖_Y / ‖w‖_X²` over fixed modal coefficient draws, on two meshes.
#[test]
fn quadratic_bound_is_stable_under_refinement() {
    let modes = 6;
    let grid = TimeGrid::uniform(1.0, 16, 4).unwrap();
    let estimate = |nx, ny| {
        let b = basis(nx, ny, modes);
        let space = ModalSpace::from_basis(&b, grid.clone()).unwrap();
        let t = ConvectionTensor::from_basis(&b);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        (0..10)
            .map(|_| {
                let d = DataPair::random(&space, &mut ChaCha8Rng::seed_from_u64(rand::Rng::random(&mut rng)), 0.0);
                // Same modal data on both meshes; only λ_k and the tensor differ.
                let w = solve_stokes_evolution(&space, &d).unwrap();
                let (_, quad) = frechet_defect(&space, &t, &SpectralField::zero(&space), &w);
                quad / x_norm(&space, &w).powi(2)
            })
            .fold(0.0, f64::max)
    };
    let (c1, c2) = (estimate(24, 8), estimate(48, 16));
    println!("C on 24x8 {c1:.4e}, on 48x16 {c2:.4e}");
    assert!(c1 / c2 <= 2.0 && c2 / c1 <= 2.0);
}

#[test]
fn linearized_solves() {
    let (space, t) = setup();
    let tol = NewtonOptions::default().linear_tol;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rhs = DataPair::random(space, &mut rng, 1.0);
    let zero = SpectralField::zero(space);
    let w = solve_linearized(space, t, &zero, &rhs, tol).unwrap();
    let stokes = solve_stokes_evolution(space, &rhs).unwrap();
    assert!(x_norm(space, &w.sub(&stokes)) <= 1e-10 * x_norm(space, &stokes));

    let u = random_field(space, 7, 5.0);
    let w0 = solve_linearized(space, t, &u, &DataPair::zero(space), tol);
    // Zero data: either zero or refused as a zero-norm problem, never a nonzero field.
    if let Ok(w0) = w0 {
        assert_eq!(x_norm(space, &w0), 0.0);
    }
    let w = solve_linearized(space, t, &u, &rhs, tol).unwrap();
    assert!(apply_g(space, t, &u, &w).sub(&rhs).norm(space) <= tol * rhs.norm(space));
}

#[test]
fn small_data_converges_fast_and_zero_data_gives_zero() {
    let (space, t) = setup();
    let opts = NewtonOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = scale_to_stokes_norm(space, &DataPair::random(space, &mut rng, 1.0), 0.1).unwrap();
    let out = solve_navier_stokes(space, t, &d, &opts, None).unwrap();
    assert!(out.report.converged && out.report.newton_iterations <= 5, "{:?}", out.report);
    assert!(out.report.final_residual <= opts.abs_tol);

    let out = solve_navier_stokes(space, t, &DataPair::zero(space), &opts, None).unwrap();
    assert!(out.report.converged);
    assert_eq!(x_norm(space, &out.solution), 0.0);
}

#[test]
fn two_guesses_reach_the_same_solution() {
    let (space, t) = setup();
    let opts = NewtonOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = scale_to_stokes_norm(space, &DataPair::random(space, &mut rng, 1.0), 1.0).unwrap();
    let a = solve_navier_stokes(space, t, &d, &opts, None).unwrap();
    let guess = a.solution.add(&random_field(space, 13, 0.2));
    let b = solve_navier_stokes(space, t, &d, &opts, Some(&guess)).unwrap();
    assert!(a.report.converged && b.report.converged);
    assert!(x_norm(space, &a.solution.sub(&b.solution)) <= 1e-7);
}

#[test]
fn perturbation_shifts_follow_the_linearization() {
    let (space, t) = setup();
    let opts = NewtonOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let d = scale_to_stokes_norm(space, &DataPair::random(space, &mut rng, 1.0), 0.1).unwrap();
    let res = perturbation_experiment(space, t, &d, &[0.0, 1e-3, 1e-2], 4, 3, &opts).unwrap();
    assert_eq!(res.trials.len(), 12);
    for tr in &res.trials {
        assert!(tr.report.converged);
        if tr.scale == 0.0 {
            assert_eq!(tr.report.solution_shift, 0.0);
        } else {
            let rel = (tr.shift_ratio - tr.linear_prediction).abs() / tr.linear_prediction;
            assert!(rel <= 0.2, "trial {} at {}: {rel}", tr.trial, tr.scale);
        }
    }
    assert!(res.summaries.iter().all(|s| s.failures == 0));
}

#[test]
fn manufactured_newton_is_quadratic_on_a_small_basis() {
    let (space, t) = setup();
    let rep = run_manufactured(space, t, MANUFACTURED_NORM, MANUFACTURED_SEED, &NewtonOptions::default()).unwrap();
    println!("errors {:?}", rep.errors);
    assert!(rep.report.converged);
    assert!(rep.final_error <= 1e-8);
    assert!(rep.errors.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn invalid_options_are_rejected() {
    let (space, t) = setup();
    let d = DataPair::zero(space);
    for bad in [
        NewtonOptions { max_iters: 0, ..Default::default() },
        NewtonOptions { abs_tol: 0.0, ..Default::default() },
        NewtonOptions { damping: 1.5, ..Default::default() },
    ] {
        assert!(solve_navier_stokes(space, t, &d, &bad, None).is_err());
    }
    assert!(manufactured_solution(space, -1.0, 1).is_err());
    assert!(scale_to_stokes_norm(space, &d, 1.0).is_err());
}
