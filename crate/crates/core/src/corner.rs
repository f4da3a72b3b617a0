//! Operator-pencil analysis at a corner where a Dirichlet wall meets a
//! do-nothing edge at a right angle.
//!
//! After localizing at the corner, passing to `r = e^ξ` and Fourier
//! transforming in ξ, the steady Stokes system becomes an ODE system in the
//! angle ω ∈ (0, π/2) depending on a complex parameter λ. Throughout,
//! `z = iλ`. The do-nothing conditions sit at ω = 0 and the no-slip
//! conditions at ω = π/2.

use std::f64::consts::{FRAC_PI_2, PI};

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::DiscreteSpaces;
use crate::mesh::BoundaryTag;
use crate::quadrature::gauss_legendre;

pub type Matrix4 = [[Complex64; 4]; 4];

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// The four fundamental columns `(ê₁, ê₂, ê_q)` at angle ω, and their
/// ω-derivatives. λ = 0 switches to the degenerate fundamental system.
fn fundamental_columns(lambda: Complex64, omega: f64) -> ([[Complex64; 3]; 4], [[Complex64; 3]; 4]) {
    if lambda == Complex64::new(0.0, 0.0) {
        let (s1, c1) = omega.sin_cos();
        let (s2, c2) = (2.0 * omega).sin_cos();
        let vals = [
            [c(c2), c(s2 - 2.0 * omega), c(4.0 * c1)],
            [c(-s2 - 2.0 * omega), c(c2), c(-4.0 * s1)],
            [c(1.0), c(0.0), c(0.0)],
            [c(0.0), c(1.0), c(0.0)],
        ];
        let ders = [
            [c(-2.0 * s2), c(2.0 * c2 - 2.0), c(-4.0 * s1)],
            [c(-2.0 * c2 - 2.0), c(-2.0 * s2), c(-4.0 * c1)],
            [c(0.0); 3],
            [c(0.0); 3],
        ];
        return (vals, ders);
    }
    let z = I * lambda;
    let h = z / 2.0;
    let w = c(omega);
    let (s0, c0) = ((z * w).sin(), (z * w).cos());
    let (s2, c2) = (((z - 2.0) * w).sin(), ((z - 2.0) * w).cos());
    let (s1, c1) = (((z - 1.0) * w).sin(), ((z - 1.0) * w).cos());
    let vals = [
        [c0, -s0, c(0.0)],
        [s0, c0, c(0.0)],
        [-h * c2, s0 + h * s2, -2.0 * z * c1],
        [h * s2, c0 + h * c2, 2.0 * z * s1],
    ];
    let zm2 = z - 2.0;
    let zm1 = z - 1.0;
    let ders = [
        [-z * s0, -z * c0, c(0.0)],
        [z * c0, -z * s0, c(0.0)],
        [h * zm2 * s2, z * c0 + h * zm2 * c2, 2.0 * z * zm1 * s1],
        [h * zm2 * c2, -z * s0 - h * zm2 * s2, 2.0 * z * zm1 * c1],
    ];
    (vals, ders)
}

/// `C₁·col₁ + … + C₄·col₄` of the homogeneous transformed system at angle ω,
/// returned as `(ê₁, ê₂, ê_q)`.
pub fn general_solution(lambda: Complex64, coeffs: [Complex64; 4], omega: f64) -> [Complex64; 3] {
    combine(&fundamental_columns(lambda, omega).0, coeffs)
}

/// ω-derivative of [`general_solution`].
pub fn general_solution_derivative(lambda: Complex64, coeffs: [Complex64; 4], omega: f64) -> [Complex64; 3] {
    combine(&fundamental_columns(lambda, omega).1, coeffs)
}

fn combine(cols: &[[Complex64; 3]; 4], coeffs: [Complex64; 4]) -> [Complex64; 3] {
    let mut out = [c(0.0); 3];
    for (col, a) in cols.iter().zip(coeffs) {
        for k in 0..3 {
            out[k] += a * col[k];
        }
    }
    out
}

/// Residual of the homogeneous transformed ODE system for a triple of
/// callables giving value, first and second ω-derivatives.
pub fn ode_residual(
    lambda: Complex64,
    omega: f64,
    value: [Complex64; 3],
    first: [Complex64; 3],
    second: [Complex64; 3],
) -> [Complex64; 3] {
    let z = I * lambda;
    let (s, co) = omega.sin_cos();
    let [w1, w2, q] = value;
    let [d1, d2, dq] = first;
    [
        -second[0] - z * z * w1 + (z - 1.0) * q * co - dq * s,
        -second[1] - z * z * w2 + (z - 1.0) * q * s + dq * co,
        z * w1 * co - d1 * s + z * w2 * s + d2 * co,
    ]
}

/// Boundary operators applied to the raw fundamental columns: rows are
/// `∂ω ê₁(0)`, `∂ω ê₂(0) − ê_q(0)`, `ê₁(π/2)`, `ê₂(π/2)`. Defined for every λ.
pub fn boundary_matrix(lambda: Complex64) -> Matrix4 {
    let (_, d0) = fundamental_columns(lambda, 0.0);
    let (v0, _) = fundamental_columns(lambda, 0.0);
    let (vh, _) = fundamental_columns(lambda, FRAC_PI_2);
    let mut m = [[c(0.0); 4]; 4];
    for j in 0..4 {
        m[0][j] = d0[j][0];
        m[1][j] = d0[j][1] - v0[j][2];
        m[2][j] = vh[j][0];
        m[3][j] = vh[j][1];
    }
    m
}

/// The characteristic matrix with the closed-form entries: constant-row
/// pattern `(0, 4−z, 0, z−2)`, `(2+z, 0, 4+z, 0)` and the trigonometric
/// entries at ω = π/2.
pub fn pencil_matrix(lambda: Complex64) -> Result<Matrix4> {
    if lambda == c(0.0) {
        return Err(Error::ZeroLambda);
    }
    let z = I * lambda;
    let h = z / 2.0;
    let a = z * FRAC_PI_2;
    let b = (z - 2.0) * FRAC_PI_2;
    let (sa, ca) = (a.sin(), a.cos());
    let (sb, cb) = (b.sin(), b.cos());
    Ok([
        [c(0.0), 4.0 - z, c(0.0), z - 2.0],
        [2.0 + z, c(0.0), 4.0 + z, c(0.0)],
        [ca - h * cb, sa - h * sb, -h * cb, h * sb],
        [h * sb, -h * cb, sa + h * sb, ca + h * cb],
    ])
}

/// The characteristic matrix rebuilt from [`boundary_matrix`]: columns
/// recombined as `(c₁+c₃, c₂−c₄, c₃, c₄)` and the two ω = 0 rows scaled by `2/z`.
pub fn pencil_matrix_from_boundary(lambda: Complex64) -> Result<Matrix4> {
    if lambda == c(0.0) {
        return Err(Error::ZeroLambda);
    }
    let raw = boundary_matrix(lambda);
    let scale = 2.0 / (I * lambda);
    let mut m = [[c(0.0); 4]; 4];
    for (i, row) in raw.iter().enumerate() {
        let s = if i < 2 { scale } else { c(1.0) };
        m[i] = [
            s * (row[0] + row[2]),
            s * (row[1] - row[3]),
            s * row[2],
            s * row[3],
        ];
    }
    Ok(m)
}

/// Determinant of a 4×4 complex matrix by partial-pivot elimination.
pub fn det4(m: &Matrix4) -> Complex64 {
    let mut a = *m;
    let mut det = c(1.0);
    for k in 0..4 {
        let p = (k..4)
            .max_by(|&i, &j| a[i][k].norm().total_cmp(&a[j][k].norm()))
            .expect("non-empty range");
        if a[p][k] == c(0.0) {
            return c(0.0);
        }
        if p != k {
            a.swap(p, k);
            det = -det;
        }
        det *= a[k][k];
        for i in k + 1..4 {
            let f = a[i][k] / a[k][k];
            for j in k..4 {
                let v = a[k][j];
                a[i][j] -= f * v;
            }
        }
    }
    det
}

/// `D(λ) = det pencil_matrix(λ)`.
pub fn characteristic_determinant(lambda: Complex64) -> Result<Complex64> {
    Ok(det4(&pencil_matrix(lambda)?))
}

/// Constant factor between the 4×4 determinant and the reduced
/// characteristic: `D(λ) = −4·f(λ)`.
pub const DETERMINANT_FACTOR: f64 = -4.0;

/// `f(λ) = z² − 4cos²(zπ/2) − sin²(zπ/2)`, evaluated in the double-angle
/// form `z² − 5/2 − (3/2)cos(πz)` which avoids cancellation between the
/// squared terms for large |Re λ|.
pub fn reduced_characteristic(lambda: Complex64) -> Complex64 {
    let z = I * lambda;
    z * z - 2.5 - 1.5 * (z * PI).cos()
}

/// `df/dλ = i(2z + (3π/2) sin(πz))`.
pub fn reduced_characteristic_derivative(lambda: Complex64) -> Complex64 {
    let z = I * lambda;
    I * (2.0 * z + 1.5 * PI * (z * PI).sin())
}

/// Real and imaginary residuals for `λ = a + ib`:
/// `(b²−a²) − 5/2 − (3/4)cos(πb)(e^{πa}+e^{−πa})` and
/// `−2ab − (3/4)sin(πb)(e^{πa}−e^{−πa})`.
/// They coincide with `Re f` and `Im f` (rearrangement factor 1).
pub fn real_imag_system(a: f64, b: f64) -> (f64, f64) {
    let (ep, em) = ((PI * a).exp(), (-PI * a).exp());
    (
        (b * b - a * a) - 2.5 - 0.75 * (PI * b).cos() * (ep + em),
        -2.0 * a * b - 0.75 * (PI * b).sin() * (ep - em),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for ComplexValue {
    fn from(v: Complex64) -> Self {
        ComplexValue { re: v.re, im: v.im }
    }
}

impl From<ComplexValue> for Complex64 {
    fn from(v: ComplexValue) -> Self {
        Complex64::new(v.re, v.im)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PencilSample {
    pub lambda: Complex64,
    pub det_full: Complex64,
    pub det_reduced: Complex64,
}

impl PencilSample {
    pub fn at(lambda: Complex64) -> Result<Self> {
        Ok(PencilSample {
            lambda,
            det_full: characteristic_determinant(lambda)?,
            det_reduced: reduced_characteristic(lambda),
        })
    }

    /// `D(λ)/f(λ)`.
    pub fn ratio(&self) -> Complex64 {
        self.det_full / self.det_reduced
    }
}

/// Axis-aligned rectangle in the λ-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Rect {
    pub fn new(re: [f64; 2], im: [f64; 2]) -> Result<Self> {
        let r = Rect {
            re_min: re[0],
            re_max: re[1],
            im_min: im[0],
            im_max: im[1],
        };
        if !(r.re_min < r.re_max && r.im_min < r.im_max) || ![re, im].concat().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!("degenerate rectangle {r:?}")));
        }
        Ok(r)
    }

    /// `Re ∈ [−K, K]`, `Im ∈ [−1−ε, −η]` with K = 20, ε = 0.05, η = 0.005.
    pub fn default_strip() -> Self {
        Rect {
            re_min: -20.0,
            re_max: 20.0,
            im_min: -1.05,
            im_max: -0.005,
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        z.re >= self.re_min && z.re <= self.re_max && z.im >= self.im_min && z.im <= self.im_max
    }

    /// Corners in counter-clockwise order starting bottom-left.
    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.re_min, self.im_min),
            Complex64::new(self.re_max, self.im_min),
            Complex64::new(self.re_max, self.im_max),
            Complex64::new(self.re_min, self.im_max),
        ]
    }
}

/// Sample `|D|`, `|f|` on a `n_re × n_im` grid covering `rect`.
pub fn sample_grid(rect: &Rect, n_re: usize, n_im: usize) -> Result<Vec<PencilSample>> {
    if n_re < 2 || n_im < 2 {
        return Err(Error::InvalidParameter("grid needs at least 2 points per axis".into()));
    }
    let mut out = Vec::with_capacity(n_re * n_im);
    for j in 0..n_im {
        let y = rect.im_min + (rect.im_max - rect.im_min) * j as f64 / (n_im - 1) as f64;
        for i in 0..n_re {
            let x = rect.re_min + (rect.re_max - rect.re_min) * i as f64 / (n_re - 1) as f64;
            out.push(PencilSample::at(Complex64::new(x, y))?);
        }
    }
    Ok(out)
}

pub fn grid_csv(samples: &[PencilSample]) -> Vec<u8> {
    let header: Vec<String> = ["re", "im", "abs_det_full", "abs_det_reduced", "log10_abs_det_reduced"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    crate::io::csv_table(
        &header,
        samples.iter().map(|s| {
            vec![
                s.lambda.re,
                s.lambda.im,
                s.det_full.norm(),
                s.det_reduced.norm(),
                s.det_reduced.norm().log10(),
            ]
        }),
    )
}

/// Contour integrals below this modulus are refused.
pub const MIN_CONTOUR_MODULUS: f64 = 1e-8;
/// Evaluation budget of the adaptive contour quadrature. It is only exhausted
/// when the contour grazes a root, where `f'/f` is not integrable.
pub const MAX_CONTOUR_EVALUATIONS: usize = 2_000_000;
/// Allowed distance of the argument-principle integral from an integer.
pub const WINDING_DEFECT_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindingCount {
    pub count: i64,
    /// Raw value of `(1/2πi)∮ f'/f` (real part).
    pub raw: f64,
    /// Imaginary part of the raw integral; zero in exact arithmetic.
    pub raw_imag: f64,
    pub min_modulus: f64,
    pub evaluations: usize,
}

struct ContourIntegrator {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    min_modulus: f64,
    argmin: Complex64,
    evaluations: usize,
}

impl ContourIntegrator {
    fn new() -> Self {
        let (nodes, weights) = gauss_legendre(10);
        ContourIntegrator {
            nodes,
            weights,
            min_modulus: f64::INFINITY,
            argmin: c(0.0),
            evaluations: 0,
        }
    }

    fn panel(&mut self, a: Complex64, b: Complex64) -> Complex64 {
        let mid = (a + b) / 2.0;
        let half = (b - a) / 2.0;
        let mut sum = c(0.0);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let z = mid + half * *x;
            let f = reduced_characteristic(z);
            let m = f.norm();
            if m < self.min_modulus {
                self.min_modulus = m;
                self.argmin = z;
            }
            self.evaluations += 1;
            sum += reduced_characteristic_derivative(z) / f * *w;
        }
        sum * half
    }

    fn adaptive(&mut self, a: Complex64, b: Complex64, whole: Complex64, tol: f64, depth: usize) -> Complex64 {
        let m = (a + b) / 2.0;
        let left = self.panel(a, m);
        let right = self.panel(m, b);
        let refined = left + right;
        if (refined - whole).norm() <= tol
            || depth == 0
            || self.min_modulus < MIN_CONTOUR_MODULUS
            || self.evaluations > MAX_CONTOUR_EVALUATIONS
        {
            return refined;
        }
        self.adaptive(a, m, left, tol / 2.0, depth - 1) + self.adaptive(m, b, right, tol / 2.0, depth - 1)
    }
}

/// Number of zeros of `f` inside `rect` by the argument principle, with each
/// side split into `n_contour` panels refined adaptively.
pub fn count_roots(rect: &Rect, n_contour: usize) -> Result<WindingCount> {
    if n_contour == 0 {
        return Err(Error::InvalidParameter("n_contour must be positive".into()));
    }
    let corners = rect.corners();
    let mut integ = ContourIntegrator::new();
    let mut total = c(0.0);
    for k in 0..4 {
        let (a, b) = (corners[k], corners[(k + 1) % 4]);
        for p in 0..n_contour {
            let pa = a + (b - a) * (p as f64 / n_contour as f64);
            let pb = a + (b - a) * ((p + 1) as f64 / n_contour as f64);
            let whole = integ.panel(pa, pb);
            total += integ.adaptive(pa, pb, whole, 1e-10 / n_contour as f64, 30);
        }
    }
    if integ.min_modulus < MIN_CONTOUR_MODULUS || integ.evaluations > MAX_CONTOUR_EVALUATIONS {
        return Err(Error::ContourNearRoot {
            min_modulus: integ.min_modulus,
            location: format!("{}", integ.argmin),
        });
    }
    let value = total / (2.0 * PI * I);
    let count = value.re.round();
    if (value.re - count).abs() > WINDING_DEFECT_TOL || value.im.abs() > WINDING_DEFECT_TOL {
        return Err(Error::NonIntegerWinding { value: value.re });
    }
    Ok(WindingCount {
        count: count as i64,
        raw: value.re,
        raw_imag: value.im,
        min_modulus: integ.min_modulus,
        evaluations: integ.evaluations,
    })
}

/// Flag threshold for `|f'(λ₀)|`; a proxy for simplicity of the pencil eigenvalue.
pub const SIMPLICITY_THRESHOLD: f64 = 1e-6;
pub const NEWTON_MAX_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootEstimate {
    pub root: ComplexValue,
    /// `|f(root)|`.
    pub residual: f64,
    /// `|f'(root)|`.
    pub simplicity: f64,
    pub simple: bool,
    pub iterations: usize,
}

/// Complex Newton iteration on `f` from `guess`.
pub fn find_root(guess: Complex64) -> Result<RootEstimate> {
    let mut z = guess;
    for it in 1..=NEWTON_MAX_ITERS {
        let f = reduced_characteristic(z);
        let df = reduced_characteristic_derivative(z);
        let step = f / df;
        if !step.is_finite() {
            break;
        }
        z -= step;
        if z.norm() > 1e6 {
            break;
        }
        if step.norm() <= 1e-15 * z.norm().max(1.0) {
            return Ok(estimate(z, it));
        }
        // Quadratic convergence overshoots the step test by far; accept a
        // settled residual as well.
        let r = reduced_characteristic(z).norm();
        if r <= 1e-14 * z.norm().max(1.0).powi(2) && step.norm() <= 1e-8 * z.norm().max(1.0) {
            return Ok(estimate(z, it));
        }
    }
    Err(Error::RootDivergence {
        guess: format!("{guess}"),
        iterations: NEWTON_MAX_ITERS,
    })
}

fn estimate(z: Complex64, iterations: usize) -> RootEstimate {
    let simplicity = reduced_characteristic_derivative(z).norm();
    RootEstimate {
        root: z.into(),
        residual: reduced_characteristic(z).norm(),
        simplicity,
        simple: simplicity > SIMPLICITY_THRESHOLD,
        iterations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootReport {
    pub schema_version: u32,
    pub strip: Rect,
    pub winding_count: i64,
    pub winding_raw: f64,
    pub contour_min_modulus: f64,
    pub roots: Vec<RootEstimate>,
    /// Simplicity is judged by `|f'| > 1e-6`, a proxy for the pencil notion.
    pub simplicity_is_proxy: bool,
    /// Winding count equals the number of located roots counted with multiplicity.
    pub consistent: bool,
    /// `|D(λ)|` of the 4×4 determinant at each located root.
    pub det_full_at_roots: Vec<f64>,
}

/// Winding count over `rect` plus Newton-located roots seeded on a grid.
pub fn locate_roots(rect: &Rect, n_contour: usize) -> Result<RootReport> {
    let winding = count_roots(rect, n_contour)?;
    let mut roots: Vec<RootEstimate> = Vec::new();
    let (nre, nim) = (41, 5);
    for j in 0..nim {
        for i in 0..nre {
            let x = rect.re_min + (rect.re_max - rect.re_min) * (i as f64 + 0.5) / nre as f64;
            let y = rect.im_min + (rect.im_max - rect.im_min) * (j as f64 + 0.5) / nim as f64;
            let Ok(r) = find_root(Complex64::new(x, y)) else {
                continue;
            };
            let z: Complex64 = r.root.into();
            if !rect.contains(z) {
                continue;
            }
            if roots.iter().all(|o| (Complex64::from(o.root) - z).norm() > 1e-8 * z.norm().max(1.0)) {
                roots.push(r);
            }
        }
    }
    roots.sort_by(|a, b| b.root.im.total_cmp(&a.root.im).then(a.root.re.total_cmp(&b.root.re)));
    let multiplicity: i64 = roots.iter().map(|r| if r.simple { 1 } else { 2 }).sum();
    let det_full_at_roots = roots
        .iter()
        .map(|r| characteristic_determinant(r.root.into()).map(|d| d.norm()).unwrap_or(0.0))
        .collect();
    Ok(RootReport {
        schema_version: 1,
        strip: *rect,
        winding_count: winding.count,
        winding_raw: winding.raw,
        contour_min_modulus: winding.min_modulus,
        consistent: multiplicity == winding.count,
        roots,
        simplicity_is_proxy: true,
        det_full_at_roots,
    })
}

/// The four singular fields at the root λ₀ = −i in the local corner frame,
/// each as `(w₁, w₂, q)`:
/// `(r cos ω, −r sin ω, 0)`, `(r sin ω, r cos ω, 0)`, `(−r cos ω, r sin ω, −4)`,
/// `(−r sin ω, 3r cos ω, 0)`.
pub fn singular_basis(r: f64, omega: f64) -> [[f64; 3]; 4] {
    let (s, co) = omega.sin_cos();
    [
        [r * co, -r * s, 0.0],
        [r * s, r * co, 0.0],
        [-r * co, r * s, -4.0],
        [-r * s, 3.0 * r * co, 0.0],
    ]
}

/// One sample of a velocity/pressure field in the local corner frame:
/// `x₁` along the do-nothing edge (ω = 0), `x₂` along the wall (ω = π/2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerSample {
    pub r: f64,
    pub omega: f64,
    pub velocity: [f64; 2],
    pub pressure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularExpansion {
    pub schema_version: u32,
    pub c: [f64; 4],
    /// Coefficients of the regular part: velocity `x₁², x₁x₂, x₂²` per
    /// component, then pressure `x₁, x₂`.
    pub regular_coefficients: Vec<f64>,
    /// RMS misfit of the least-squares fit over the samples used.
    pub regular_residual: f64,
    /// RMS of the samples after subtracting the singular part.
    pub regular_norm: f64,
    pub delta: f64,
    pub n_samples: usize,
}

const N_REGULAR: usize = 8;

fn regular_terms(x1: f64, x2: f64) -> [[f64; 3]; N_REGULAR] {
    let m = [x1 * x1, x1 * x2, x2 * x2];
    let mut out = [[0.0; 3]; N_REGULAR];
    for k in 0..3 {
        out[k][0] = m[k];
        out[3 + k][1] = m[k];
    }
    out[6][2] = x1;
    out[7][2] = x2;
    out
}

/// Least-squares fit of samples with `r ∈ [δ/4, δ]` against the four
/// singular fields plus a polynomial regular part.
///
/// The singular fields are linear in `(x₁, x₂)` and the third carries the
/// only constant pressure, so the regular part is restricted to quadratic
/// velocity and linear pressure terms to keep the system identifiable.
pub fn fit_singular_expansion(samples: &[CornerSample], delta: f64) -> Result<SingularExpansion> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("fit radius must be positive, got {delta}")));
    }
    let used: Vec<&CornerSample> = samples
        .iter()
        .filter(|s| s.r >= 0.25 * delta * (1.0 - 1e-12) && s.r <= delta * (1.0 + 1e-12))
        .collect();
    let unknowns = 4 + N_REGULAR;
    let rows = 3 * used.len();
    if rows < unknowns {
        return Err(Error::RankDeficientFit {
            samples: used.len(),
            unknowns,
        });
    }
    let mut a = Mat::<f64>::zeros(rows, unknowns);
    let mut b = Mat::<f64>::zeros(rows, 1);
    for (k, s) in used.iter().enumerate() {
        let sing = singular_basis(s.r, s.omega);
        let (x1, x2) = (s.r * s.omega.cos(), s.r * s.omega.sin());
        let reg = regular_terms(x1, x2);
        let target = [s.velocity[0], s.velocity[1], s.pressure];
        for comp in 0..3 {
            let row = 3 * k + comp;
            for j in 0..4 {
                a[(row, j)] = sing[j][comp];
            }
            for j in 0..N_REGULAR {
                a[(row, 4 + j)] = reg[j][comp];
            }
            b[(row, 0)] = target[comp];
        }
    }
    // Column equilibration before the rank test and solve.
    let scales: Vec<f64> = (0..unknowns)
        .map(|j| {
            let n = (0..rows).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    for j in 0..unknowns {
        for i in 0..rows {
            a[(i, j)] /= scales[j];
        }
    }
    let sv = a
        .singular_values()
        .map_err(|e| Error::InvalidParameter(format!("SVD of fit system failed: {e:?}")))?;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > 1e-10 * smax) {
        return Err(Error::RankDeficientFit {
            samples: used.len(),
            unknowns,
        });
    }
    let x = a.qr().solve_lstsq(&b);
    let coef: Vec<f64> = (0..unknowns).map(|j| x[(j, 0)] / scales[j]).collect();
    let mut misfit = 0.0;
    let mut regular = 0.0;
    for i in 0..rows {
        let mut fit = 0.0;
        let mut sing = 0.0;
        for j in 0..unknowns {
            let t = a[(i, j)] * scales[j] * coef[j];
            fit += t;
            if j < 4 {
                sing += t;
            }
        }
        misfit += (b[(i, 0)] - fit).powi(2);
        regular += (b[(i, 0)] - sing).powi(2);
    }
    Ok(SingularExpansion {
        schema_version: 1,
        c: [coef[0], coef[1], coef[2], coef[3]],
        regular_coefficients: coef[4..].to_vec(),
        regular_residual: (misfit / rows as f64).sqrt(),
        regular_norm: (regular / rows as f64).sqrt(),
        delta,
        n_samples: used.len(),
    })
}

/// Polar sample points covering the annular sector `r ∈ [δ/4, δ]`,
/// `ω ∈ (0, π/2)`.
pub fn sector_points(delta: f64, n_r: usize, n_omega: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n_r * n_omega);
    for i in 0..n_r {
        let t = if n_r == 1 { 0.5 } else { i as f64 / (n_r - 1) as f64 };
        let r = delta * (0.25 + 0.75 * t);
        for j in 0..n_omega {
            let omega = FRAC_PI_2 * (j as f64 + 0.5) / n_omega as f64;
            out.push((r, omega));
        }
    }
    out
}

/// Local frame at a mesh corner: `(origin, e₁ along the do-nothing edge, e₂ along the wall)`.
pub fn corner_frame(spaces: &DiscreteSpaces, corner: usize) -> Result<([f64; 2], [f64; 2], [f64; 2])> {
    let mesh = &spaces.mesh;
    if !mesh.corner_points.contains(&corner) {
        return Err(Error::InvalidParameter(format!("vertex {corner} is not a corner point")));
    }
    let origin = mesh.vertices[corner];
    let dir = |tag: BoundaryTag| -> Result<[f64; 2]> {
        let e = mesh
            .boundary_edges
            .iter()
            .find(|e| e.tag == tag && e.vertices.contains(&corner))
            .ok_or_else(|| Error::Tagging(format!("corner {corner} lacks a {tag:?} edge")))?;
        let other = if e.vertices[0] == corner { e.vertices[1] } else { e.vertices[0] };
        let p = mesh.vertices[other];
        let (dx, dy) = (p[0] - origin[0], p[1] - origin[1]);
        let n = dx.hypot(dy);
        Ok([dx / n, dy / n])
    };
    Ok((origin, dir(BoundaryTag::Neumann)?, dir(BoundaryTag::Dirichlet)?))
}

/// Sample a finite-element velocity/pressure pair near `corner` on the
/// polar grid of [`sector_points`], expressed in the local corner frame.
pub fn sample_corner_field(
    spaces: &DiscreteSpaces,
    velocity: &[f64],
    pressure: &[f64],
    corner: usize,
    delta: f64,
    n_r: usize,
    n_omega: usize,
) -> Result<Vec<CornerSample>> {
    let (o, e1, e2) = corner_frame(spaces, corner)?;
    let mut out = Vec::new();
    for (r, omega) in sector_points(delta, n_r, n_omega) {
        let (s, co) = omega.sin_cos();
        let x = [
            o[0] + r * (co * e1[0] + s * e2[0]),
            o[1] + r * (co * e1[1] + s * e2[1]),
        ];
        let (Some(u), Some(p)) = (spaces.evaluate_velocity(velocity, x), spaces.evaluate_pressure(pressure, x)) else {
            continue;
        };
        out.push(CornerSample {
            r,
            omega,
            velocity: [u[0] * e1[0] + u[1] * e1[1], u[0] * e2[0] + u[1] * e2[1]],
            pressure: p,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_characteristic_landmarks() {
        assert!(reduced_characteristic(Complex64::new(0.0, -1.0)).norm() <= 1e-14);
        assert_eq!(reduced_characteristic(c(0.0)), c(-4.0));
        assert!(reduced_characteristic(Complex64::new(0.0, -2.0)).norm() <= 1e-13);
    }

    #[test]
    fn first_pencil_row_at_minus_i() {
        let m = pencil_matrix(Complex64::new(0.0, -1.0)).unwrap();
        let expect = [0.0, 3.0, 0.0, -1.0];
        for j in 0..4 {
            assert!((m[0][j] - c(expect[j])).norm() < 1e-15);
        }
        assert!(matches!(pencil_matrix(c(0.0)), Err(Error::ZeroLambda)));
    }

    #[test]
    fn determinant_is_minus_four_times_reduced() {
        for lam in [Complex64::new(0.3, -0.4), Complex64::new(-2.0, 1.5), Complex64::new(5.0, -0.7)] {
            let r = characteristic_determinant(lam).unwrap() / reduced_characteristic(lam);
            assert!((r - c(DETERMINANT_FACTOR)).norm() < 1e-10, "{r}");
        }
    }

    #[test]
    fn newton_finds_minus_i() {
        let r = find_root(Complex64::new(0.0, -0.9)).unwrap();
        assert!((Complex64::from(r.root) - Complex64::new(0.0, -1.0)).norm() < 1e-10);
        assert!(r.simple);
    }

    #[test]
    fn eigenfield_combination_matches_kernel() {
        // At λ₀ = −i the kernel is C = (0, 1, 0, 2) of the raw boundary matrix.
        let m = boundary_matrix(Complex64::new(0.0, -1.0));
        let v = [c(0.0), c(1.0), c(0.0), c(2.0)];
        for row in m {
            let s: Complex64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            assert!(s.norm() < 1e-14);
        }
    }
}
