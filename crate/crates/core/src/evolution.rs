//! Modal Stokes evolution: the spaces X and Y, the operator 𝒮 and its exact inverse.
//!
//! A field in X is stored per mode by its values at the grid nodes and at the
//! Gauss collocation points of every interval, together with ϑ' at the
//! collocation points. Within an interval the forcing `p = ϑ' + λϑ` is the
//! degree `G − 1` polynomial through its collocation values, and ϑ is the exact
//! variation-of-constants solution driven by it:
//!
//! `ϑ(t_n + τ) = e^{−λτ} ϑ(t_n) + ∫_0^τ e^{−λ(τ−s)} p(s) ds`.
//!
//! The convolution is evaluated in closed form through the φ-functions
//! `φ_k(z) = Σ_m z^m / (m + k)!`.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::Mat;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::EigenBasis;
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_unit;
use crate::sparse;

pub const DEFAULT_T_END: f64 = 1.0;
pub const DEFAULT_INTERVALS: usize = 64;
pub const DEFAULT_GAUSS_POINTS: usize = 4;
/// Points per interval of the rule used for X-norms and energy integrals.
pub const NORM_POINTS: usize = 24;

/// Uniform time grid on `[0, T]` with a Gauss rule per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub nodes: Vec<f64>,
    /// Gauss nodes on `[0, 1]`.
    pub gauss_nodes: Vec<f64>,
    /// Gauss weights on `[0, 1]` (they sum to one).
    pub gauss_weights: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(t_end: f64, intervals: usize, gauss_points: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidParameter(format!("final time must be positive, got {t_end}")));
        }
        if intervals == 0 {
            return Err(Error::InvalidParameter("need at least one time interval".into()));
        }
        if gauss_points == 0 {
            return Err(Error::InvalidParameter("need at least one Gauss point".into()));
        }
        let nodes = (0..=intervals)
            .map(|n| t_end * n as f64 / intervals as f64)
            .collect();
        let (gauss_nodes, gauss_weights) = gauss_legendre_unit(gauss_points);
        Ok(TimeGrid {
            t_end,
            nodes,
            gauss_nodes,
            gauss_weights,
        })
    }

    pub fn default_grid() -> Self {
        Self::uniform(DEFAULT_T_END, DEFAULT_INTERVALS, DEFAULT_GAUSS_POINTS).expect("valid defaults")
    }

    pub fn n_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn n_gauss(&self) -> usize {
        self.gauss_nodes.len()
    }

    /// Number of collocation samples per mode.
    pub fn n_samples(&self) -> usize {
        self.n_intervals() * self.n_gauss()
    }

    pub fn step(&self) -> f64 {
        self.t_end / self.n_intervals() as f64
    }

    /// Collocation times, interval-major.
    pub fn collocation_times(&self) -> Vec<f64> {
        let h = self.step();
        let mut t = Vec::with_capacity(self.n_samples());
        for n in 0..self.n_intervals() {
            for &xi in &self.gauss_nodes {
                t.push(self.nodes[n] + h * xi);
            }
        }
        t
    }

    /// Quadrature weights matching [`TimeGrid::collocation_times`].
    pub fn collocation_weights(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.n_intervals())
            .flat_map(|_| self.gauss_weights.iter().map(move |w| h * w))
            .collect()
    }

    /// Same final time and Gauss rule with twice as many intervals.
    pub fn halved(&self) -> Self {
        Self::uniform(self.t_end, 2 * self.n_intervals(), self.n_gauss()).expect("valid grid")
    }
}

/// `φ_0(z), …, φ_kmax(z)`.
pub fn phi_functions(z: f64, kmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; kmax + 1];
    if z.abs() < 1.0 {
        for (k, slot) in out.iter_mut().enumerate() {
            // Σ z^m / (m+k)!
            let mut term = 1.0 / factorial(k);
            let mut sum = term;
            for m in 1..200 {
                term *= z / (m + k) as f64;
                sum += term;
                if term.abs() <= 1e-18 * sum.abs() {
                    break;
                }
            }
            *slot = sum;
        }
    } else {
        out[0] = z.exp();
        for k in 1..=kmax {
            out[k] = (out[k - 1] - 1.0 / factorial(k - 1)) / z;
        }
    }
    out
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Exponential-integral weights for one eigenvalue on one interval length.
#[derive(Debug, Clone)]
pub struct ModeKernel {
    pub lambda: f64,
    /// `e^{−λh}`
    pub decay_end: f64,
    /// `∫_0^h e^{−λ(h−s)} ℓ_j(s) ds` for the Lagrange basis ℓ_j on the Gauss nodes.
    pub w_end: Vec<f64>,
    pub decay_col: Vec<f64>,
    /// `w_col[g][j] = ∫_0^{τ_g} e^{−λ(τ_g−s)} ℓ_j(s) ds`
    pub w_col: Vec<Vec<f64>>,
    pub decay_eval: Vec<f64>,
    pub w_eval: Vec<Vec<f64>>,
}

impl ModeKernel {
    fn new(lambda: f64, h: f64, gauss: &[f64], vinv: &[Vec<f64>], eval: &[f64]) -> Self {
        let g = gauss.len();
        let weights_at = |tau: f64| -> Vec<f64> {
            // J_i(τ) = ∫_0^τ e^{−λ(τ−s)} (s/h)^i ds = τ^{i+1} / h^i · i! · φ_{i+1}(−λτ)
            let phi = phi_functions(-lambda * tau, g);
            let j: Vec<f64> = (0..g)
                .map(|i| tau.powi(i as i32 + 1) / h.powi(i as i32) * factorial(i) * phi[i + 1])
                .collect();
            (0..g).map(|l| (0..g).map(|i| vinv[i][l] * j[i]).sum()).collect()
        };
        ModeKernel {
            lambda,
            decay_end: (-lambda * h).exp(),
            w_end: weights_at(h),
            decay_col: gauss.iter().map(|x| (-lambda * h * x).exp()).collect(),
            w_col: gauss.iter().map(|x| weights_at(h * x)).collect(),
            decay_eval: eval.iter().map(|x| (-lambda * h * x).exp()).collect(),
            w_eval: eval.iter().map(|x| weights_at(h * x)).collect(),
        }
    }
}

/// Eigenvalues, time grid and the precomputed kernels they determine.
#[derive(Debug, Clone)]
pub struct ModalSpace {
    pub lambdas: Vec<f64>,
    pub grid: TimeGrid,
    pub kernels: Vec<ModeKernel>,
    /// Norm-quadrature nodes and weights on `[0, 1]`.
    pub eval_nodes: Vec<f64>,
    pub eval_weights: Vec<f64>,
    /// Lagrange basis on the Gauss nodes evaluated at `eval_nodes`.
    pub lagrange_eval: Vec<Vec<f64>>,
    /// Inverse Vandermonde matrix, monomials `(s/h)^i` to Lagrange values.
    vinv: Vec<Vec<f64>>,
}

impl ModalSpace {
    pub fn new(lambdas: Vec<f64>, grid: TimeGrid) -> Result<Self> {
        if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidParameter(format!("eigenvalues must be non-negative, got {l}")));
        }
        let g = grid.n_gauss();
        let v = Mat::<f64>::from_fn(g, g, |r, c| grid.gauss_nodes[r].powi(c as i32));
        let inv = v.partial_piv_lu().solve(Mat::<f64>::identity(g, g));
        let vinv: Vec<Vec<f64>> = (0..g).map(|i| (0..g).map(|j| inv[(i, j)]).collect()).collect();
        let (eval_nodes, eval_weights) = gauss_legendre_unit(NORM_POINTS);
        let lagrange_eval = eval_nodes
            .iter()
            .map(|&x| (0..g).map(|j| (0..g).map(|i| vinv[i][j] * x.powi(i as i32)).sum()).collect())
            .collect();
        let h = grid.step();
        let kernels = lambdas
            .iter()
            .map(|&l| ModeKernel::new(l, h, &grid.gauss_nodes, &vinv, &eval_nodes))
            .collect();
        Ok(ModalSpace {
            lambdas,
            grid,
            kernels,
            eval_nodes,
            eval_weights,
            lagrange_eval,
            vinv,
        })
    }

    pub fn from_basis(basis: &EigenBasis, grid: TimeGrid) -> Result<Self> {
        Self::new(basis.lambdas.clone(), grid)
    }

    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    /// Kernel for a single eigenvalue on this grid.
    pub fn kernel_for(&self, lambda: f64) -> ModeKernel {
        ModeKernel::new(
            lambda,
            self.grid.step(),
            &self.grid.gauss_nodes,
            &self.vinv,
            &self.eval_nodes,
        )
    }

    /// ϑ and ϑ' of mode `k` at an arbitrary time.
    pub fn mode_value_at(&self, k: usize, traj: &ModeTrajectory, t: f64) -> (f64, f64) {
        let grid = &self.grid;
        let h = grid.step();
        let g = grid.n_gauss();
        let n = ((t / h).floor() as usize).min(grid.n_intervals() - 1);
        let tau = (t - grid.nodes[n]).clamp(0.0, h);
        let lambda = self.lambdas[k];
        let p = traj.interval_forcing(lambda, n, g);
        let phi = phi_functions(-lambda * tau, g);
        let mut theta = (-lambda * tau).exp() * traj.nodes[n];
        let mut forcing = 0.0;
        for l in 0..g {
            let mut w = 0.0;
            let mut lag = 0.0;
            for i in 0..g {
                let ji = tau.powi(i as i32 + 1) / h.powi(i as i32) * factorial(i) * phi[i + 1];
                w += self.vinv[i][l] * ji;
                lag += self.vinv[i][l] * (tau / h).powi(i as i32);
            }
            theta += w * p[l];
            forcing += lag * p[l];
        }
        (theta, forcing - lambda * theta)
    }
}

/// One mode of a field in X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTrajectory {
    /// ϑ at the grid nodes.
    pub nodes: Vec<f64>,
    /// ϑ at the collocation points.
    pub theta: Vec<f64>,
    /// ϑ' at the collocation points.
    pub theta_prime: Vec<f64>,
}

impl ModeTrajectory {
    fn zero(grid: &TimeGrid) -> Self {
        ModeTrajectory {
            nodes: vec![0.0; grid.n_intervals() + 1],
            theta: vec![0.0; grid.n_samples()],
            theta_prime: vec![0.0; grid.n_samples()],
        }
    }

    /// `p = ϑ' + λϑ` at the collocation points of interval `n`.
    pub fn interval_forcing(&self, lambda: f64, n: usize, g: usize) -> Vec<f64> {
        (0..g)
            .map(|j| self.theta_prime[n * g + j] + lambda * self.theta[n * g + j])
            .collect()
    }

    /// ϑ and ϑ' at the norm-quadrature points of interval `n`.
    pub fn eval_interval(&self, space: &ModalSpace, k: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
        let kern = &space.kernels[k];
        let g = space.grid.n_gauss();
        let p = self.interval_forcing(kern.lambda, n, g);
        let mut vals = Vec::with_capacity(NORM_POINTS);
        let mut ders = Vec::with_capacity(NORM_POINTS);
        for q in 0..space.eval_nodes.len() {
            let theta = kern.decay_eval[q] * self.nodes[n] + sparse::dot(&kern.w_eval[q], &p);
            let forcing = sparse::dot(&space.lagrange_eval[q], &p);
            vals.push(theta);
            ders.push(forcing - kern.lambda * theta);
        }
        (vals, ders)
    }
}

/// Exact solution of `ϑ' + λϑ = μ`, `ϑ(0) = a` for μ given at the collocation points.
pub fn solve_mode_ode(kernel: &ModeKernel, grid: &TimeGrid, mu: &[f64], a: f64) -> Result<ModeTrajectory> {
    if mu.len() != grid.n_samples() {
        return Err(Error::DimensionMismatch {
            expected: grid.n_samples(),
            got: mu.len(),
        });
    }
    let g = grid.n_gauss();
    let mut traj = ModeTrajectory::zero(grid);
    traj.nodes[0] = a;
    for n in 0..grid.n_intervals() {
        let p = &mu[n * g..(n + 1) * g];
        let start = traj.nodes[n];
        for c in 0..g {
            let theta = kernel.decay_col[c] * start + sparse::dot(&kernel.w_col[c], p);
            traj.theta[n * g + c] = theta;
            traj.theta_prime[n * g + c] = p[c] - kernel.lambda * theta;
        }
        traj.nodes[n + 1] = kernel.decay_end * start + sparse::dot(&kernel.w_end, p);
    }
    Ok(traj)
}

/// An element of X, one trajectory per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    pub modes: Vec<ModeTrajectory>,
}

impl SpectralField {
    pub fn zero(space: &ModalSpace) -> Self {
        SpectralField {
            modes: (0..space.n_modes()).map(|_| ModeTrajectory::zero(&space.grid)).collect(),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let comb = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect();
        SpectralField {
            modes: self
                .modes
                .iter()
                .zip(&other.modes)
                .map(|(a, b)| ModeTrajectory {
                    nodes: comb(&a.nodes, &b.nodes),
                    theta: comb(&a.theta, &b.theta),
                    theta_prime: comb(&a.theta_prime, &b.theta_prime),
                })
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + s · other`
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + s * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.zip_with(self, |a, _| s * a)
    }

    /// Mode amplitudes at collocation sample `i`.
    pub fn sample(&self, i: usize) -> Vec<f64> {
        self.modes.iter().map(|m| m.theta[i]).collect()
    }

    /// Mode amplitudes at an arbitrary time.
    pub fn coefficients_at(&self, space: &ModalSpace, t: f64) -> Vec<f64> {
        self.modes
            .iter()
            .enumerate()
            .map(|(k, m)| space.mode_value_at(k, m, t).0)
            .collect()
    }

    pub fn norms(&self, space: &ModalSpace) -> XNorms {
        x_norms(space, self)
    }

    /// CSV with columns `t, theta_1, theta_prime_1, …` at the collocation times.
    pub fn to_csv(&self, space: &ModalSpace) -> Vec<u8> {
        let mut header = vec!["t".to_string()];
        for k in 1..=self.n_modes() {
            header.push(format!("theta_{k}"));
            header.push(format!("theta_prime_{k}"));
        }
        let times = space.grid.collocation_times();
        let rows = times.iter().enumerate().map(|(i, &t)| {
            let mut row = vec![t];
            for m in &self.modes {
                row.push(m.theta[i]);
                row.push(m.theta_prime[i]);
            }
            row
        });
        crate::io::csv_table(&header, rows)
    }
}

/// An element of Y: forcing amplitudes at the collocation points and initial amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPair {
    pub mu: Vec<Vec<f64>>,
    pub a: Vec<f64>,
}

impl DataPair {
    pub fn zero(space: &ModalSpace) -> Self {
        DataPair {
            mu: vec![vec![0.0; space.grid.n_samples()]; space.n_modes()],
            a: vec![0.0; space.n_modes()],
        }
    }

    /// Modal data from closed-form amplitudes `μ_k(t)` and `a_k`.
    pub fn from_fn(space: &ModalSpace, mu: impl Fn(usize, f64) -> f64, a: impl Fn(usize) -> f64) -> Self {
        let times = space.grid.collocation_times();
        DataPair {
            mu: (0..space.n_modes())
                .map(|k| times.iter().map(|&t| mu(k, t)).collect())
                .collect(),
            a: (0..space.n_modes()).map(a).collect(),
        }
    }

    /// Independent standard normal samples scaled by `λ_k^{−decay}`.
    pub fn random(space: &ModalSpace, rng: &mut impl Rng, decay: f64) -> Self {
        let mut d = Self::zero(space);
        for k in 0..space.n_modes() {
            let s = space.lambdas[k].powf(-decay);
            for v in d.mu[k].iter_mut() {
                let x: f64 = StandardNormal.sample(rng);
                *v = s * x;
            }
            let x: f64 = StandardNormal.sample(rng);
            d.a[k] = s * x;
        }
        d
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        DataPair {
            mu: self
                .mu
                .iter()
                .zip(&other.mu)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
                .collect(),
            a: self.a.iter().zip(&other.a).map(|(x, y)| f(*x, *y)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + s * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.zip_with(self, |a, _| s * a)
    }

    /// `(Σ_k ∫ μ_k²)^{1/2}`, exact for the piecewise-polynomial forcing.
    pub fn forcing_norm(&self, space: &ModalSpace) -> f64 {
        let w = space.grid.collocation_weights();
        self.mu
            .iter()
            .map(|m| m.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// `(Σ_k λ_k a_k²)^{1/2}`
    pub fn initial_norm(&self, space: &ModalSpace) -> f64 {
        crate::basis::norm_v(&self.a, &space.lambdas)
    }

    /// `‖[f; u₀]‖_Y`
    pub fn norm(&self, space: &ModalSpace) -> f64 {
        self.forcing_norm(space) + self.initial_norm(space)
    }
}

/// `f = Σ μ_k φ_k`, `u₀ = Σ a_k φ_k` with `μ_k(t) = (f(t), φ_k)` at the collocation times.
pub fn expand_data(
    basis: &EigenBasis,
    grid: &TimeGrid,
    f: impl Fn(f64) -> Vec<f64>,
    u0: &[f64],
) -> Result<DataPair> {
    let times = grid.collocation_times();
    let mut mu = vec![vec![0.0; times.len()]; basis.n_modes()];
    for (i, &t) in times.iter().enumerate() {
        let c = basis.project(&f(t))?;
        for (k, v) in c.into_iter().enumerate() {
            mu[k][i] = v;
        }
    }
    Ok(DataPair {
        mu,
        a: basis.project(u0)?,
    })
}

/// `𝒮⁻¹ [f; u₀]`, mode by mode.
pub fn solve_stokes_evolution(space: &ModalSpace, data: &DataPair) -> Result<SpectralField> {
    check_data(space, data)?;
    let modes = space
        .kernels
        .iter()
        .enumerate()
        .map(|(k, kern)| solve_mode_ode(kern, &space.grid, &data.mu[k], data.a[k]))
        .collect::<Result<_>>()?;
    Ok(SpectralField { modes })
}

pub(crate) fn check_data(space: &ModalSpace, data: &DataPair) -> Result<()> {
    if data.a.len() != space.n_modes() || data.mu.len() != space.n_modes() {
        return Err(Error::DimensionMismatch {
            expected: space.n_modes(),
            got: data.a.len().min(data.mu.len()),
        });
    }
    if let Some(m) = data.mu.iter().find(|m| m.len() != space.grid.n_samples()) {
        return Err(Error::DimensionMismatch {
            expected: space.grid.n_samples(),
            got: m.len(),
        });
    }
    Ok(())
}

/// `𝒮(u) = [ϑ' + λϑ; ϑ(0)]`
pub fn apply_s(space: &ModalSpace, u: &SpectralField) -> DataPair {
    DataPair {
        mu: u
            .modes
            .iter()
            .zip(&space.lambdas)
            .map(|(m, l)| m.theta_prime.iter().zip(&m.theta).map(|(d, v)| d + l * v).collect())
            .collect(),
        a: u.modes.iter().map(|m| m.nodes[0]).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XNorms {
    /// `(Σ λ_k² ∫ ϑ_k²)^{1/2}`
    pub l2_d: f64,
    /// `(Σ ∫ ϑ_k'²)^{1/2}`
    pub derivative_l2: f64,
    /// `sup_t (Σ λ_k ϑ_k²(t))^{1/2}` over nodes and quadrature points.
    pub linf_v: f64,
    /// `sup_t (Σ ϑ_k²(t))^{1/2}`
    pub linf_l2: f64,
    /// `(Σ λ_k ∫ ϑ_k²)^{1/2}`
    pub l2_v: f64,
}

impl XNorms {
    /// `‖u‖_X`
    pub fn x(&self) -> f64 {
        self.l2_d + self.derivative_l2
    }
}

pub fn x_norms(space: &ModalSpace, u: &SpectralField) -> XNorms {
    let h = space.grid.step();
    let nq = space.eval_nodes.len();
    let n_int = space.grid.n_intervals();
    let mut d2 = 0.0;
    let mut der2 = 0.0;
    let mut v2 = 0.0;
    // Σ_k λ_k ϑ_k² and Σ_k ϑ_k² at every evaluation point
    let mut energy = vec![0.0; n_int * nq];
    let mut mass = vec![0.0; n_int * nq];
    for (k, m) in u.modes.iter().enumerate() {
        let l = space.lambdas[k];
        for n in 0..n_int {
            let (vals, ders) = m.eval_interval(space, k, n);
            for q in 0..nq {
                let w = h * space.eval_weights[q];
                d2 += w * l * l * vals[q] * vals[q];
                v2 += w * l * vals[q] * vals[q];
                der2 += w * ders[q] * ders[q];
                energy[n * nq + q] += l * vals[q] * vals[q];
                mass[n * nq + q] += vals[q] * vals[q];
            }
        }
    }
    let mut linf_v = energy.iter().copied().fold(0.0, f64::max);
    let mut linf_l2 = mass.iter().copied().fold(0.0, f64::max);
    for n in 0..=n_int {
        let e: f64 = u.modes.iter().zip(&space.lambdas).map(|(m, l)| l * m.nodes[n].powi(2)).sum();
        let s: f64 = u.modes.iter().map(|m| m.nodes[n].powi(2)).sum();
        linf_v = linf_v.max(e);
        linf_l2 = linf_l2.max(s);
    }
    XNorms {
        l2_d: d2.sqrt(),
        derivative_l2: der2.sqrt(),
        linf_v: linf_v.sqrt(),
        linf_l2: linf_l2.sqrt(),
        l2_v: v2.sqrt(),
    }
}

/// `‖u‖_X`
pub fn x_norm(space: &ModalSpace, u: &SpectralField) -> f64 {
    x_norms(space, u).x()
}

/// `‖w(T)‖²_{L²} + ∫_0^T ‖w‖²_V`, which vanishes for the difference of two solutions with equal data.
pub fn energy_defect(space: &ModalSpace, w: &SpectralField) -> f64 {
    let end = space.grid.n_intervals();
    let terminal: f64 = w.modes.iter().map(|m| m.nodes[end].powi(2)).sum();
    terminal + x_norms(space, w).l2_v.powi(2)
}

/// Largest deviation of `∫_I ϑ'` from the endpoint difference over all intervals and modes.
pub fn derivative_consistency(space: &ModalSpace, u: &SpectralField) -> f64 {
    let h = space.grid.step();
    let mut worst: f64 = 0.0;
    for (k, m) in u.modes.iter().enumerate() {
        for n in 0..space.grid.n_intervals() {
            let (_, ders) = m.eval_interval(space, k, n);
            let integral: f64 = ders.iter().zip(&space.eval_weights).map(|(d, w)| h * w * d).sum();
            worst = worst.max((integral - (m.nodes[n + 1] - m.nodes[n])).abs());
        }
    }
    worst
}

/// Largest `|ϑ'_k + λ_k ϑ_k − μ_k|` at the collocation points.
pub fn weak_form_residual(space: &ModalSpace, u: &SpectralField, data: &DataPair) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, m) in u.modes.iter().enumerate() {
        for i in 0..m.theta.len() {
            let r = m.theta_prime[i] + space.lambdas[k] * m.theta[i] - data.mu[k][i];
            worst = worst.max(r.abs());
        }
        worst = worst.max((m.nodes[0] - data.a[k]).abs());
    }
    worst
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    pub tolerance: f64,
    /// Largest `LHS − RHS` of the mode-wise energy inequality over all modes and nodes.
    pub mode_max_violation: f64,
    /// Largest `LHS − RHS` of the summed inequality with constants (2, 2), squared form.
    pub summed_max_violation: f64,
    /// Norm form: `‖u‖_{L∞V} + ‖u'‖_{L²L²} ≤ 2‖f‖ + 2‖u₀‖_V`.
    pub linf_bound_lhs: f64,
    pub linf_bound_rhs: f64,
    /// `Σ λ_k² ∫ϑ_k² ≤ 6 Σ∫μ_k² + 4 Σ λ_k a_k²`
    pub d_bound_lhs: f64,
    pub d_bound_rhs: f64,
    /// `sup_t Σλϑ² ≤ Σλϑ²(0) + 2 (Σλ²∫ϑ²)^{1/2} (Σ∫ϑ'²)^{1/2}`
    pub embedding_lhs: f64,
    pub embedding_rhs: f64,
    /// `(‖u‖_{L²D} + ‖u‖_{L∞V} + ‖u'‖_{L²L²}) / (‖f‖ + ‖u₀‖_V)`; measured constant.
    pub estimate_ratio: f64,
    pub passed: bool,
}

/// Check the mode-wise and summed a-priori energy bounds of the Stokes evolution.
pub fn verify_energy_inequalities(space: &ModalSpace, u: &SpectralField, data: &DataPair) -> EnergyReport {
    let tol = 1e-9;
    let h = space.grid.step();
    let n_int = space.grid.n_intervals();
    let g = space.grid.n_gauss();
    let wcol = &space.grid.gauss_weights;

    let mut mode_max = f64::NEG_INFINITY;
    // per-node sums over modes of LHS and of ∫μ², for the summed form
    let mut sum_der = vec![0.0; n_int + 1];
    let mut sum_energy = vec![0.0; n_int + 1];
    for (k, m) in u.modes.iter().enumerate() {
        let l = space.lambdas[k];
        let start = l * m.nodes[0].powi(2);
        let mut int_der = 0.0;
        let mut int_mu = 0.0;
        for n in 0..=n_int {
            if n > 0 {
                let (_, ders) = m.eval_interval(space, k, n - 1);
                int_der += ders
                    .iter()
                    .zip(&space.eval_weights)
                    .map(|(d, w)| h * w * d * d)
                    .sum::<f64>();
                int_mu += (0..g).map(|j| h * wcol[j] * data.mu[k][(n - 1) * g + j].powi(2)).sum::<f64>();
            }
            let lhs = int_der + l * m.nodes[n].powi(2);
            let rhs = start + int_mu;
            mode_max = mode_max.max(lhs - rhs);
            sum_der[n] += int_der;
            sum_energy[n] += l * m.nodes[n].powi(2);
        }
    }
    let norms = x_norms(space, u);
    let f_norm = data.forcing_norm(space);
    let u0_norm = data.initial_norm(space);
    let total_der = sum_der[n_int];
    let mut summed_max = f64::NEG_INFINITY;
    for n in 0..=n_int {
        let lhs = total_der + sum_energy[n];
        let rhs = 2.0 * u0_norm.powi(2) + 2.0 * f_norm.powi(2);
        summed_max = summed_max.max(lhs - rhs);
    }
    let linf_bound_lhs = norms.linf_v + norms.derivative_l2;
    let linf_bound_rhs = 2.0 * f_norm + 2.0 * u0_norm;
    let d_bound_lhs = norms.l2_d.powi(2);
    let d_bound_rhs = 6.0 * f_norm.powi(2) + 4.0 * u0_norm.powi(2);
    let v0: f64 = u
        .modes
        .iter()
        .zip(&space.lambdas)
        .map(|(m, l)| l * m.nodes[0].powi(2))
        .sum();
    let embedding_lhs = norms.linf_v.powi(2);
    let embedding_rhs = v0 + 2.0 * norms.l2_d * norms.derivative_l2;
    let denom = f_norm + u0_norm;
    let estimate_ratio = if denom > 0.0 {
        (norms.l2_d + norms.linf_v + norms.derivative_l2) / denom
    } else {
        0.0
    };
    let slack = |lhs: f64, rhs: f64| lhs <= rhs + tol * (1.0 + rhs.abs());
    let passed = mode_max <= tol
        && summed_max <= tol
        && slack(linf_bound_lhs, linf_bound_rhs)
        && slack(d_bound_lhs, d_bound_rhs)
        && slack(embedding_lhs, embedding_rhs);
    EnergyReport {
        tolerance: tol,
        mode_max_violation: mode_max,
        summed_max_violation: summed_max,
        linf_bound_lhs,
        linf_bound_rhs,
        d_bound_lhs,
        d_bound_rhs,
        embedding_lhs,
        embedding_rhs,
        estimate_ratio,
        passed,
    }
}

/// Reconstruct the velocity field `Σ ϑ_k(t) φ_k`.
pub fn reconstruct_at(basis: &EigenBasis, space: &ModalSpace, u: &SpectralField, t: f64) -> Result<Vec<f64>> {
    basis.reconstruct(&u.coefficients_at(space, t))
}

/// Write a field's trajectories to CSV.
pub fn write_trajectories(space: &ModalSpace, u: &SpectralField, out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(&u.to_csv(space))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(lambda: f64) -> ModalSpace {
        ModalSpace::new(vec![lambda], TimeGrid::default_grid()).unwrap()
    }

    #[test]
    fn phi_functions_agree_across_branches() {
        for &z in &[-0.999, -1.001, -4.999, -5.001, -0.3, 0.0, -12.0] {
            let p = phi_functions(z, 5);
            // φ_k(z) = z φ_{k+1}(z) + 1/k!
            for k in 0..5 {
                let lhs = p[k];
                let rhs = z * p[k + 1] + 1.0 / factorial(k);
                assert!((lhs - rhs).abs() < 1e-14 * lhs.abs().max(1.0), "z={z} k={k}");
            }
        }
        assert!((phi_functions(-1.0, 1)[1] - (1.0 - (-1f64).exp())).abs() < 1e-16);
    }

    #[test]
    fn constant_forcing_unit_lambda() {
        let s = single(1.0);
        let d = DataPair::from_fn(&s, |_, _| 1.0, |_| 0.0);
        let u = solve_stokes_evolution(&s, &d).unwrap();
        let end = s.grid.n_intervals();
        assert!((u.modes[0].nodes[end] - (1.0 - (-1f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn homogeneous_decay() {
        let s = single(2.0);
        let d = DataPair::from_fn(&s, |_, _| 0.0, |_| 3.0);
        let u = solve_stokes_evolution(&s, &d).unwrap();
        for (n, &t) in s.grid.nodes.iter().enumerate() {
            assert!((u.modes[0].nodes[n] - 3.0 * (-2.0 * t).exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn resonant_forcing() {
        let s = single(1.0);
        let d = DataPair::from_fn(&s, |_, t| (-t).exp(), |_| 0.0);
        let u = solve_stokes_evolution(&s, &d).unwrap();
        for (n, &t) in s.grid.nodes.iter().enumerate() {
            assert!((u.modes[0].nodes[n] - t * (-t).exp()).abs() < 1e-10);
        }
        for &t in &[0.1234, 0.5, 0.987] {
            let (v, dv) = s.mode_value_at(0, &u.modes[0], t);
            assert!((v - t * (-t).exp()).abs() < 1e-10);
            assert!((dv - (1.0 - t) * (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let s = ModalSpace::new(vec![1.0, 10.0, 150.0, 3000.0], TimeGrid::default_grid()).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let d = DataPair::random(&s, &mut rng, 0.0);
        let u = solve_stokes_evolution(&s, &d).unwrap();
        let back = apply_s(&s, &u);
        assert!(back.sub(&d).norm(&s) <= 1e-12 * d.norm(&s));
        assert!(derivative_consistency(&s, &u) < 1e-10);
        assert!(verify_energy_inequalities(&s, &u, &d).passed);
    }
}
