use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use mixed_ns::basis::SteadyStokes;
use mixed_ns::corner::*;
use mixed_ns::fem::assemble;
use mixed_ns::mesh::{build_channel_mesh, ChannelParams};
use mixed_ns::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cx(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn close3(a: [Complex64; 3], b: [f64; 3], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - cx(y, 0.0)).norm() <= tol)
}

#[test]
fn general_solution_spot_values() {
    let e3 = [cx(0.0, 0.0), cx(0.0, 0.0), cx(1.0, 0.0), cx(0.0, 0.0)];
    for omega in [0.0, 0.3, 1.1, FRAC_PI_2] {
        assert!(close3(general_solution(cx(0.0, 0.0), e3, omega), [1.0, 0.0, 0.0], 0.0));
    }
    let e1 = [cx(1.0, 0.0), cx(0.0, 0.0), cx(0.0, 0.0), cx(0.0, 0.0)];
    assert!(close3(general_solution(cx(0.0, -1.0), e1, 0.0), [1.0, 0.0, 0.0], 1e-15));
}

/// Sixth-order central differences in ω.
fn fd(f: impl Fn(f64) -> [Complex64; 3], omega: f64, h: f64) -> ([Complex64; 3], [Complex64; 3]) {
    let c1 = [(1, 3.0 / 4.0), (2, -3.0 / 20.0), (3, 1.0 / 60.0)];
    let c2 = [(1, 3.0 / 2.0), (2, -3.0 / 20.0), (3, 1.0 / 90.0)];
    let f0 = f(omega);
    let mut d1 = [cx(0.0, 0.0); 3];
    let mut d2 = [cx(0.0, 0.0); 3];
    for k in 0..3 {
        d2[k] = f0[k] * (-49.0 / 18.0);
    }
    for ((j, a), (_, b)) in c1.iter().zip(c2) {
        let fp = f(omega + *j as f64 * h);
        let fm = f(omega - *j as f64 * h);
        for k in 0..3 {
            d1[k] += (fp[k] - fm[k]) * *a;
            d2[k] += (fp[k] + fm[k]) * b;
        }
    }
    for k in 0..3 {
        d1[k] /= h;
        d2[k] /= h * h;
    }
    (d1, d2)
}

#[test]
fn general_solution_satisfies_the_ode_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut lambdas: Vec<Complex64> = (0..20)
        .map(|_| cx(rng.random_range(-2.0..2.0), rng.random_range(-2.5..0.5)))
        .collect();
    lambdas[0] = cx(0.0, 0.0);
    for lam in lambdas {
        let c: [Complex64; 4] = std::array::from_fn(|_| cx(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let omega = rng.random_range(0.0..FRAC_PI_2);
        // The system is linear in C; normalise so the solution is O(1) at ω.
        let size = general_solution(lam, c, omega).iter().map(|v| v.norm()).fold(1e-300, f64::max);
        let c = c.map(|v| v / size);
        let (d1, d2) = fd(|w| general_solution(lam, c, w), omega, 1e-2);
        let exact_d1 = general_solution_derivative(lam, c, omega);
        for k in 0..3 {
            assert!((d1[k] - exact_d1[k]).norm() < 1e-10, "derivative at λ={lam}: {} vs {}", d1[k], exact_d1[k]);
        }
        let r = ode_residual(lam, omega, general_solution(lam, c, omega), d1, d2);
        for v in r {
            assert!(v.norm() <= 1e-10, "ODE residual {v} at λ={lam}, ω={omega}");
        }
    }
}

#[test]
fn pencil_first_row_at_minus_i_and_zero_rejected() {
    let m = pencil_matrix(cx(0.0, -1.0)).unwrap();
    assert_eq!(m[0], [cx(0.0, 0.0), cx(3.0, 0.0), cx(0.0, 0.0), cx(-1.0, 0.0)]);
    assert!(matches!(pencil_matrix(cx(0.0, 0.0)), Err(Error::ZeroLambda)));
    assert!(matches!(characteristic_determinant(cx(0.0, 0.0)), Err(Error::ZeroLambda)));
}

#[test]
fn double_construction_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pts = vec![cx(0.0, -2.0), cx(0.0, -1.0)];
    pts.extend((0..20).map(|_| cx(rng.random_range(-4.0..4.0), rng.random_range(-3.0..1.0))));
    for lam in pts {
        let a = pencil_matrix(lam).unwrap();
        let b = pencil_matrix_from_boundary(lam).unwrap();
        let scale = a.iter().flatten().map(|v| v.norm()).fold(1.0, f64::max);
        for i in 0..4 {
            for j in 0..4 {
                assert!((a[i][j] - b[i][j]).norm() <= 1e-12 * scale, "entry ({i},{j}) at λ={lam}");
            }
        }
    }
}

#[test]
fn determinant_ratio_is_constant_away_from_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut ratios = Vec::new();
    while ratios.len() < 50 {
        let lam = cx(rng.random_range(-3.0..3.0), rng.random_range(-3.0..2.0));
        let s = PencilSample::at(lam).unwrap();
        if s.det_reduced.norm() < 1e-2 {
            continue;
        }
        ratios.push(s.ratio());
    }
    let mean = ratios.iter().sum::<Complex64>() / ratios.len() as f64;
    let spread = ratios.iter().map(|r| (r - mean).norm()).fold(0.0, f64::max) / mean.norm();
    assert!(spread <= 1e-8, "relative spread {spread}");
    assert!((mean - cx(DETERMINANT_FACTOR, 0.0)).norm() < 1e-9);
}

#[test]
fn reduced_characteristic_values() {
    assert!(reduced_characteristic(cx(0.0, -1.0)).norm() <= 1e-14);
    assert_eq!(reduced_characteristic(cx(0.0, 0.0)), cx(-4.0, 0.0));
    assert_eq!(reduced_characteristic(cx(0.0, 0.0)).norm(), 4.0);
    assert!(reduced_characteristic(cx(0.0, -2.0)).norm() <= 1e-13);
}

#[test]
fn real_imag_split_examples() {
    let (r1, r2) = real_imag_system(0.0, -1.0);
    assert!(r1.abs() < 1e-15 && r2.abs() < 1e-15);
    let (r1, _) = real_imag_system(0.0, -0.5);
    assert!((r1 + 2.25).abs() < 1e-15);
}

#[test]
fn real_imag_split_matches_characteristic() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0));
        let f = reduced_characteristic(cx(a, b));
        let (r1, r2) = real_imag_system(a, b);
        assert!((r1 - f.re).abs() <= 1e-12 && (r2 - f.im).abs() <= 1e-12, "({a},{b})");
    }
}

proptest! {
    #[test]
    fn characteristic_is_conjugate_symmetric(a in -6.0f64..6.0, b in -4.0f64..4.0) {
        let f = reduced_characteristic(cx(a, b));
        let g = reduced_characteristic(cx(-a, b));
        prop_assert!((f - g.conj()).norm() <= 1e-12 * f.norm().max(1.0));
    }

    #[test]
    fn derivative_matches_difference_quotient(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let z = cx(a, b);
        let h = 1e-6;
        let fd = (reduced_characteristic(z + h) - reduced_characteristic(z - h)) / (2.0 * h);
        let d = reduced_characteristic_derivative(z);
        prop_assert!((fd - d).norm() <= 1e-6 * d.norm().max(1.0));
    }
}

#[test]
fn winding_counts() {
    let count = |re: [f64; 2], im: [f64; 2]| count_roots(&Rect::new(re, im).unwrap(), 8).unwrap().count;
    assert_eq!(count([-10.0, 10.0], [-1.05, -0.95]), 1);
    assert_eq!(count([-10.0, 10.0], [-0.9, -0.1]), 0);
    assert!(count([-10.0, 10.0], [-2.05, -1.95]) >= 1);
    assert_eq!(count([-20.0, 20.0], [-1.05, -0.005]), 1);
    let w = count_roots(&Rect::default_strip(), 8).unwrap();
    assert!((w.raw - 1.0).abs() < WINDING_DEFECT_TOL);
}

#[test]
fn contour_through_a_root_is_refused() {
    let r = Rect::new([-1.0, 1.0], [-1.0, -0.5]).unwrap();
    assert!(matches!(count_roots(&r, 4), Err(Error::ContourNearRoot { .. })));
    assert!(Rect::new([1.0, -1.0], [0.0, 1.0]).is_err());
    assert!(count_roots(&Rect::default_strip(), 0).is_err());
}

#[test]
fn newton_roots() {
    let r = find_root(cx(0.0, -0.9)).unwrap();
    assert!((Complex64::from(r.root) - cx(0.0, -1.0)).norm() <= 1e-10);
    assert!(r.residual <= 1e-12 && r.simple && r.simplicity > SIMPLICITY_THRESHOLD);
    let r2 = find_root(cx(0.0, -1.9)).unwrap();
    assert!((Complex64::from(r2.root) - cx(0.0, -2.0)).norm() <= 1e-10);
    if let Ok(r3) = find_root(cx(5.0, -0.5)) {
        assert!(!(r3.root.im > -1.0 && r3.root.im < 0.0), "root {:?} inside the strip", r3.root);
    }
}

#[test]
fn located_roots_match_winding_and_full_determinant() {
    let rep = locate_roots(&Rect::default_strip(), 8).unwrap();
    assert_eq!(rep.winding_count, 1);
    assert!(rep.consistent);
    assert_eq!(rep.roots.len(), 1);
    assert!((Complex64::from(rep.roots[0].root) - cx(0.0, -1.0)).norm() < 1e-10);
    assert!(rep.det_full_at_roots.iter().all(|d| *d <= 1e-8));
}

/// Roots of the 4×4 determinant found by secant iteration are roots of the
/// reduced characteristic, and vice versa.
#[test]
fn full_and_reduced_roots_coincide() {
    let d = |z: Complex64| characteristic_determinant(z).unwrap();
    for guess in [cx(0.0, -0.85), cx(0.05, -1.1), cx(0.0, -1.8), cx(0.1, -2.2), cx(0.0, -1.3)] {
        let (mut z0, mut z1) = (guess, guess + cx(1e-3, 1e-3));
        for _ in 0..60 {
            let (f0, f1) = (d(z0), d(z1));
            if f1 == f0 {
                break;
            }
            let z2 = z1 - f1 * (z1 - z0) / (f1 - f0);
            z0 = z1;
            z1 = z2;
            if (z1 - z0).norm() < 1e-14 {
                break;
            }
        }
        assert!(d(z1).norm() < 1e-10);
        assert!(reduced_characteristic(z1).norm() <= 1e-8, "secant root {z1}");
    }
    for guess in [cx(0.0, -0.9), cx(0.0, -1.9), cx(0.0, -1.3)] {
        let r = find_root(guess).unwrap();
        assert!(characteristic_determinant(r.root.into()).unwrap().norm() <= 1e-8);
    }
}

#[test]
fn singular_fields_as_printed() {
    for (r, w) in [(0.3, 0.2), (1.0, 1.3), (2.5, 0.0)] {
        assert_eq!(singular_basis(r, w)[2][2], -4.0);
    }
    assert_eq!(singular_basis(0.7, 0.0)[0], [0.7, 0.0, 0.0]);
}

/// Cartesian evaluation `x₁ = r cos ω`, `x₂ = r sin ω`.
fn field_xy(k: usize, x1: f64, x2: f64) -> [f64; 3] {
    singular_basis(x1.hypot(x2), x2.atan2(x1))[k]
}

#[test]
fn singular_fields_are_divergence_free_and_eigenfield_meets_boundary_conditions() {
    let h = 1e-5;
    for k in 0..4 {
        for (x1, x2) in [(0.3, 0.4), (0.8, 0.1), (0.2, 0.9)] {
            let du1 = (field_xy(k, x1 + h, x2)[0] - field_xy(k, x1 - h, x2)[0]) / (2.0 * h);
            let du2 = (field_xy(k, x1, x2 + h)[1] - field_xy(k, x1, x2 - h)[1]) / (2.0 * h);
            assert!((du1 + du2).abs() < 1e-8, "field {k}");
        }
    }
    // The combination field₂ + field₄ is the kernel field at λ₀ = −i:
    // no slip on x₁ = 0 (ω = π/2), do-nothing on x₂ = 0 (ω = 0).
    let comb = |x1: f64, x2: f64| {
        let (a, b) = (field_xy(1, x1, x2), field_xy(3, x1, x2));
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    };
    for x2 in [0.1, 0.5, 0.9] {
        let u = comb(1e-300, x2);
        assert!(u[0].abs() < 1e-8 && u[1].abs() < 1e-8);
    }
    for x1 in [0.1, 0.5, 0.9] {
        // ∂u₁/∂ω = −r ∂u₁/∂x₂ on ω = 0, and ∂u₂/∂ω − r q = r(∂u₂/∂x₂ − q).
        let d1 = (comb(x1, h)[0] - comb(x1, -h)[0]) / (2.0 * h);
        let d2 = (comb(x1, h)[1] - comb(x1, -h)[1]) / (2.0 * h);
        let q = comb(x1, 0.0)[2];
        assert!(d1.abs() < 1e-8 && (d2 - q).abs() < 1e-8);
    }
}

fn manufactured(delta: f64, c: [f64; 4]) -> Vec<CornerSample> {
    sector_points(delta, 10, 10)
        .into_iter()
        .map(|(r, omega)| {
            let b = singular_basis(r, omega);
            let (x1, x2) = (r * omega.cos(), r * omega.sin());
            let reg = [0.7 * x1 * x1 - 0.3 * x1 * x2, -1.1 * x2 * x2, 0.9 * x1 - 0.25 * x2];
            let f = |k: usize| (0..4).map(|j| c[j] * b[j][k]).sum::<f64>() + reg[k];
            CornerSample {
                r,
                omega,
                velocity: [f(0), f(1)],
                pressure: f(2),
            }
        })
        .collect()
}

#[test]
fn manufactured_fit_recovers_intensities() {
    let fit = fit_singular_expansion(&manufactured(0.2, [2.0, 0.0, 0.5, 0.0]), 0.2).unwrap();
    for (a, b) in fit.c.iter().zip([2.0, 0.0, 0.5, 0.0]) {
        assert!((a - b).abs() <= 1e-6, "{:?}", fit.c);
    }
    assert!(fit.regular_residual <= 1e-10);
}

#[test]
fn zero_field_fits_to_zero() {
    let samples: Vec<CornerSample> = sector_points(0.5, 6, 6)
        .into_iter()
        .map(|(r, omega)| CornerSample {
            r,
            omega,
            velocity: [0.0; 2],
            pressure: 0.0,
        })
        .collect();
    let fit = fit_singular_expansion(&samples, 0.5).unwrap();
    assert_eq!(fit.c, [0.0; 4]);
    assert_eq!(fit.regular_residual, 0.0);
}

#[test]
fn too_few_samples_is_rank_deficient() {
    let s = manufactured(0.2, [1.0, 0.0, 0.0, 0.0]);
    assert!(matches!(fit_singular_expansion(&s[..3], 0.2), Err(Error::RankDeficientFit { .. })));
    // All samples on one ray cannot separate the fields.
    let ray: Vec<CornerSample> = s.iter().filter(|p| p.omega == s[0].omega).copied().collect();
    assert!(matches!(fit_singular_expansion(&ray, 0.2), Err(Error::RankDeficientFit { .. })));
}

#[test]
fn steady_stokes_corner_fit_is_finite_across_refinement() {
    let mut last = f64::INFINITY;
    for n in [8, 16] {
        let mesh = build_channel_mesh(&ChannelParams::new(3.0, 1.0, 3 * n, n)).unwrap();
        let spaces = Arc::new(assemble(Arc::new(mesh)).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coef: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let sigma = spaces.interpolate_velocity(|x| [coef[0] + coef[1] * x[1], coef[2] + coef[3] * x[0]]);
        let sol = SteadyStokes::new(spaces.clone()).unwrap().solve(&sigma).unwrap();
        let corner = *spaces
            .mesh
            .corner_points
            .iter()
            .find(|&&v| spaces.mesh.vertices[v] == [0.0, 0.0])
            .unwrap();
        let s = sample_corner_field(&spaces, &sol.velocity, &sol.pressure, corner, 0.25, 10, 10).unwrap();
        assert_eq!(s.len(), 100);
        let fit = fit_singular_expansion(&s, 0.25).unwrap();
        assert!(fit.c.iter().all(|v| v.is_finite()));
        println!("n = {n}: c = {:?}, residual = {:.3e}", fit.c, fit.regular_residual);
        last = last.min(fit.regular_residual);
    }
    assert!(last.is_finite());
}

#[test]
fn corner_frame_orients_along_edges() {
    let mesh = build_channel_mesh(&ChannelParams::new(3.0, 1.0, 6, 2)).unwrap();
    let spaces = assemble(Arc::new(mesh)).unwrap();
    for &c in &spaces.mesh.corner_points {
        let (_, e1, e2) = corner_frame(&spaces, c).unwrap();
        assert!((e1[0] * e2[0] + e1[1] * e2[1]).abs() < 1e-14);
        // The do-nothing edges are vertical, the walls horizontal.
        assert!(e1[0].abs() < 1e-14 && e2[1].abs() < 1e-14);
    }
    assert!(corner_frame(&spaces, 1).is_err());
}

#[test]
fn grid_samples_and_csv() {
    let g = sample_grid(&Rect::default_strip(), 5, 3).unwrap();
    assert_eq!(g.len(), 15);
    let csv = String::from_utf8(grid_csv(&g)).unwrap();
    assert_eq!(csv.lines().count(), 16);
    assert!(csv.starts_with("re,im,abs_det_full"));
}
