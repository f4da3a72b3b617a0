use std::f64::consts::PI;
use std::sync::Arc;

use mixed_ns::basis::*;
use mixed_ns::fem::{assemble, inner_l2, inner_v, DiscreteSpaces};
use mixed_ns::mesh::{build_channel_mesh, ChannelParams};
use mixed_ns::sparse;
use mixed_ns::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn channel(nx: usize, ny: usize) -> Arc<DiscreteSpaces> {
    Arc::new(assemble(Arc::new(build_channel_mesh(&ChannelParams::new(3.0, 1.0, nx, ny)).unwrap())).unwrap())
}

/// Smooth forcing from a handful of random trigonometric coefficients.
fn smooth_forcing(s: &DiscreteSpaces, c: &[f64; 6]) -> Vec<f64> {
    s.interpolate_velocity(|x| {
        [
            c[0] + c[1] * (PI * x[1]).sin() + c[2] * (x[0] * x[1]),
            c[3] * (PI * x[0] / 3.0).cos() + c[4] * x[1] * x[1] + c[5],
        ]
    })
}

fn v_norm(s: &DiscreteSpaces, u: &[f64]) -> f64 {
    inner_v(s, u, u).unwrap().sqrt()
}

#[test]
fn zero_forcing_gives_zero() {
    let s = channel(6, 2);
    let sol = solve_steady_stokes(s.clone(), &vec![0.0; s.ndof_v]).unwrap();
    assert!(sol.velocity.iter().chain(&sol.pressure).all(|v| *v == 0.0));
}

#[test]
fn gradient_forcing_is_absorbed_by_pressure() {
    // ψ vanishes on the do-nothing ends, so (ϑ, q) = (0, ψ) solves the continuous problem.
    let psi = |x: [f64; 2]| (PI * x[0] / 3.0).sin() * (PI * x[1]).cos();
    let grad = |x: [f64; 2]| {
        [
            PI / 3.0 * (PI * x[0] / 3.0).cos() * (PI * x[1]).cos(),
            -PI * (PI * x[0] / 3.0).sin() * (PI * x[1]).sin(),
        ]
    };
    let mut vel = Vec::new();
    let mut pres = Vec::new();
    for n in [4, 8, 16] {
        let s = channel(3 * n, n);
        let sol = solve_steady_stokes(s.clone(), &s.interpolate_velocity(grad)).unwrap();
        assert!(sol.residual < 1e-10);
        vel.push(v_norm(&s, &sol.velocity));
        let e: Vec<f64> = sol.pressure.iter().zip(s.interpolate_pressure(psi)).map(|(a, b)| a - b).collect();
        pres.push(sparse::bilinear(&s.pressure_mass, &e, &e).sqrt());
        for &d in &s.dirichlet_dofs {
            assert_eq!(sol.velocity[d], 0.0);
        }
    }
    println!("velocity {vel:?}, pressure L2 error {pres:?}");
    for k in 0..2 {
        assert!(vel[k] / vel[k + 1] > 3.0 && pres[k] / pres[k + 1] > 3.0);
    }
    assert!(vel[2] < 1e-3 && pres[2] < 5e-3);
}

/// Energy seminorm of `u` over the quadrature points accepted by `keep`.
fn local_energy(s: &DiscreteSpaces, u: &[f64], keep: impl Fn([f64; 2]) -> bool) -> f64 {
    let (_, g) = s.field_at_quadrature(u);
    g.iter()
        .enumerate()
        .filter(|(k, _)| keep(s.quad.coords[*k]))
        .map(|(k, gk)| s.quad.weights[k] * gk.iter().flatten().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Away from the corners the energy error of quadratic elements is O(h²);
/// the global figure is reported, its rate is reduced by the corner singularity.
#[test]
fn steady_self_convergence_in_energy() {
    let c = [0.7, -1.2, 0.4, 0.9, -0.3, 0.5];
    let levels: Vec<(Arc<DiscreteSpaces>, Vec<f64>)> = [4, 8, 16, 32]
        .iter()
        .map(|&n| {
            let s = channel(3 * n, n);
            let u = solve_steady_stokes(s.clone(), &smooth_forcing(&s, &c)).unwrap().velocity;
            (s, u)
        })
        .collect();
    let (mut global, mut interior) = (Vec::new(), Vec::new());
    for w in levels.windows(2) {
        let coarse_on_fine = w[0].0.transfer_velocity(&w[0].1, &w[1].0).unwrap();
        let d: Vec<f64> = coarse_on_fine.iter().zip(&w[1].1).map(|(a, b)| a - b).collect();
        global.push(local_energy(&w[1].0, &d, |_| true));
        interior.push(local_energy(&w[1].0, &d, |x| x[0] > 0.75 && x[0] < 2.25));
    }
    let factor = |v: &[f64]| -> Vec<f64> { v.windows(2).map(|d| d[0] / d[1]).collect() };
    println!("global factors {:?}, interior factors {:?}", factor(&global), factor(&interior));
    for f in factor(&interior) {
        assert!((3.5..=4.5).contains(&f), "interior reduction factor {f}");
    }
    assert!(factor(&global).iter().all(|f| *f > 1.0));
}

#[test]
fn stability_ratio_is_stable_across_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let draws: Vec<[f64; 6]> = (0..20).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    let maxima: Vec<f64> = [(12, 4), (24, 8)]
        .iter()
        .map(|&(nx, ny)| {
            let solver = SteadyStokes::new(channel(nx, ny)).unwrap();
            let s = channel(nx, ny);
            draws
                .iter()
                .map(|c| solver.solve(&smooth_forcing(&s, c)).unwrap().stability_ratio)
                .fold(0.0, f64::max)
        })
        .collect();
    println!("max stability ratio per level {maxima:?}");
    assert!(maxima.iter().all(|m| m.is_finite() && *m > 0.0));
    assert!(maxima[0] / maxima[1] <= 2.0 && maxima[1] / maxima[0] <= 2.0);
}

#[test]
fn first_eigenvalue_is_the_rayleigh_minimum() {
    let s = channel(12, 4);
    let b = compute_eigenbasis(s.clone(), 1).unwrap();
    let l1 = b.lambdas[0];
    assert!(l1 > 0.0);
    let solver = SteadyStokes::new(s.clone()).unwrap();
    // Inverse iteration through the steady solver stays in the constrained
    // space and its Rayleigh quotients decrease to the minimum from above.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut u = solver
        .solve(&smooth_forcing(&s, &std::array::from_fn(|_| rng.random_range(-1.0..1.0))))
        .unwrap()
        .velocity;
    let mut last = f64::INFINITY;
    for _ in 0..40 {
        let rq = inner_v(&s, &u, &u).unwrap() / inner_l2(&s, &u, &u).unwrap();
        assert!(rq >= l1 * (1.0 - 1e-10) && rq <= last * (1.0 + 1e-12));
        last = rq;
        u = solver.solve(&u).unwrap().velocity;
        let n = inner_l2(&s, &u, &u).unwrap().sqrt();
        u.iter_mut().for_each(|v| *v /= n);
    }
    assert!((last - l1).abs() <= 1e-8 * l1, "{last} vs {l1}");
}

#[test]
fn low_eigenvalues_change_little_under_refinement() {
    let coarse = compute_eigenbasis(channel(48, 16), 5).unwrap();
    let fine = compute_eigenbasis(channel(96, 32), 5).unwrap();
    for (a, b) in coarse.lambdas.iter().zip(&fine.lambdas) {
        assert!((a - b).abs() / b < 0.02, "{a} vs {b}");
    }
}

#[test]
fn basis_contract_and_errors() {
    let s = channel(12, 4);
    let b = compute_eigenbasis(s.clone(), 8).unwrap();
    let rep = b.orthogonality();
    assert!(rep.passes(), "{rep:?}");
    assert!(rep.max_relative_residual <= 1e-8);
    assert!(b.lambdas.windows(2).all(|w| w[0] <= w[1]) && b.lambdas[0] > 0.0);
    for phi in &b.modes {
        assert!(sparse::norm2(&sparse::matvec(&s.divergence, phi)) <= 1e-8 * sparse::norm2(phi));
    }
    let dim = s.divergence_free_dimension();
    assert!(matches!(compute_eigenbasis(s.clone(), dim + 1), Err(Error::TooManyModes { .. })));
    assert!(compute_eigenbasis(s, 0).is_err());
}

#[test]
fn full_basis_is_complete() {
    let s = channel(3, 1);
    let dim = s.divergence_free_dimension();
    let b = compute_eigenbasis(s.clone(), dim).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sigma: Vec<f64> = (0..s.ndof_v).map(|_| rng.random_range(-1.0..1.0)).collect();
    let u = solve_steady_stokes(s.clone(), &sigma).unwrap().velocity;
    let back = b.reconstruct(&b.project(&u).unwrap()).unwrap();
    let err = u.iter().zip(&back).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
    let scale = u.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(err <= 1e-10 * scale.max(1.0), "error {err}");
}

#[test]
fn export_import_round_trip() {
    let s = channel(6, 2);
    let b = compute_eigenbasis(s.clone(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    b.export(dir.path()).unwrap();
    let back = EigenBasis::import(s.clone(), dir.path()).unwrap();
    assert_eq!(back.lambdas, b.lambdas);
    assert_eq!(back.modes, b.modes);
    let other = channel(12, 4);
    assert!(EigenBasis::import(other, dir.path()).is_err());
}

#[test]
fn norm_examples() {
    let l = [3.0, 7.5, 12.0];
    assert_eq!(norm_d(&[1.0, 0.0, 0.0], &l), 3.0);
    assert_eq!(norm_d(&[0.0; 3], &l), 0.0);
}

proptest! {
    #[test]
    fn d_norm_dominates_scaled_v_norm(
        a in prop::collection::vec(-5.0f64..5.0, 6),
        gaps in prop::collection::vec(0.0f64..20.0, 6),
        l1 in 0.1f64..30.0,
    ) {
        let mut lambdas = vec![l1];
        for g in &gaps[1..] {
            let next = lambdas.last().unwrap() + g;
            lambdas.push(next);
        }
        prop_assert!(norm_d(&a, &lambdas) >= l1.sqrt() * norm_v(&a, &lambdas) * (1.0 - 1e-14));
    }
}
