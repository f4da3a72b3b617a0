//! The nonlinear operator 𝒩, its linearization 𝒢_u = 𝒮 + ℬ_u and Newton's method.
//!
//! Convection is projected onto the modes through the tensor
//! `T[l, m, k] = b(φ_l, φ_m, φ_k)` and evaluated at the collocation points, so
//! 𝒩 maps the discrete X into the discrete Y without further approximation.

use faer::linalg::solvers::Solve;
use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::EigenBasis;
use crate::error::{Error, Result};
use crate::evolution::{apply_s, check_data, solve_stokes_evolution, x_norm, DataPair, ModalSpace, SpectralField};

/// `T[l, m, k] = b(φ_l, φ_m, φ_k)`, stored at `(l * M + m) * M + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvectionTensor {
    pub n_modes: usize,
    pub data: Vec<f64>,
}

impl ConvectionTensor {
    pub fn from_basis(basis: &EigenBasis) -> Self {
        let s = &basis.spaces;
        let m = basis.n_modes();
        let fields: Vec<_> = basis.modes.iter().map(|p| s.field_at_quadrature(p)).collect();
        let w = &s.quad.weights;
        let nq = w.len();
        let mut data = vec![0.0; m * m * m];
        let mut adv = vec![[0.0; 2]; nq];
        for l in 0..m {
            let theta = &fields[l].0;
            for mm in 0..m {
                let grad = &fields[mm].1;
                for q in 0..nq {
                    for i in 0..2 {
                        adv[q][i] = w[q] * (theta[q][0] * grad[q][i][0] + theta[q][1] * grad[q][i][1]);
                    }
                }
                for k in 0..m {
                    let phi = &fields[k].0;
                    data[(l * m + mm) * m + k] = adv
                        .iter()
                        .zip(phi)
                        .map(|(a, p)| a[0] * p[0] + a[1] * p[1])
                        .sum();
                }
            }
        }
        ConvectionTensor { n_modes: m, data }
    }

    #[inline]
    pub fn get(&self, l: usize, m: usize, k: usize) -> f64 {
        self.data[(l * self.n_modes + m) * self.n_modes + k]
    }

    /// `(b(Σ u_l φ_l, Σ w_m φ_m, φ_k))_k`
    pub fn apply(&self, u: &[f64], w: &[f64]) -> Vec<f64> {
        let m = self.n_modes;
        let mut out = vec![0.0; m];
        for (l, &ul) in u.iter().enumerate() {
            if ul == 0.0 {
                continue;
            }
            for (mm, &wm) in w.iter().enumerate() {
                let c = ul * wm;
                if c == 0.0 {
                    continue;
                }
                let row = &self.data[(l * m + mm) * m..(l * m + mm + 1) * m];
                for (o, t) in out.iter_mut().zip(row) {
                    *o += c * t;
                }
            }
        }
        out
    }

    /// Matrix of `w ↦ b(u, w, ·) + b(w, u, ·)`, as `mat[k][j]`.
    pub fn linearization(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let m = self.n_modes;
        let mut mat = vec![vec![0.0; m]; m];
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            for j in 0..m {
                for (k, row) in mat.iter_mut().enumerate() {
                    row[j] += ui * (self.get(i, j, k) + self.get(j, i, k));
                }
            }
        }
        mat
    }
}

/// `[b(u(t), w(t), φ_k)]_k` at every collocation point; zero initial slot.
pub fn convection_data(space: &ModalSpace, tensor: &ConvectionTensor, u: &SpectralField, w: &SpectralField) -> DataPair {
    let mut d = DataPair::zero(space);
    for i in 0..space.grid.n_samples() {
        let c = tensor.apply(&u.sample(i), &w.sample(i));
        for (k, v) in c.into_iter().enumerate() {
            d.mu[k][i] = v;
        }
    }
    d
}

/// `𝒩(u) = 𝒮(u) + [b(u, u, ·); 0]`
pub fn apply_n(space: &ModalSpace, tensor: &ConvectionTensor, u: &SpectralField) -> DataPair {
    apply_s(space, u).add(&convection_data(space, tensor, u, u))
}

/// `ℬ_u(w) = [b(u, w, ·) + b(w, u, ·); 0]`
pub fn apply_b_u(space: &ModalSpace, tensor: &ConvectionTensor, u: &SpectralField, w: &SpectralField) -> DataPair {
    convection_data(space, tensor, u, w).add(&convection_data(space, tensor, w, u))
}

/// `𝒢_u(w) = 𝒮(w) + ℬ_u(w)`
pub fn apply_g(space: &ModalSpace, tensor: &ConvectionTensor, u: &SpectralField, w: &SpectralField) -> DataPair {
    apply_s(space, w).add(&apply_b_u(space, tensor, u, w))
}

/// `‖𝒩(u + w) − 𝒩(u) − 𝒢_u(w) − [b(w, w, ·); 0]‖_Y` and `‖[b(w, w, ·); 0]‖_Y`.
pub fn frechet_defect(space: &ModalSpace, tensor: &ConvectionTensor, u: &SpectralField, w: &SpectralField) -> (f64, f64) {
    let quad = convection_data(space, tensor, w, w);
    let defect = apply_n(space, tensor, &u.add(w))
        .sub(&apply_n(space, tensor, u))
        .sub(&apply_g(space, tensor, u, w))
        .sub(&quad);
    (defect.norm(space), quad.norm(space))
}

/// Solve `𝒢_u(w) = rhs` interval by interval.
///
/// On each interval the unknowns are the collocation values of `p = w' + λw`
/// for every mode; `w` at the collocation points is affine in them through the
/// exact exponential kernels, which gives a dense `(G·M)²` system.
pub fn solve_linearized(
    space: &ModalSpace,
    tensor: &ConvectionTensor,
    u: &SpectralField,
    rhs: &DataPair,
    linear_tol: f64,
) -> Result<SpectralField> {
    check_data(space, rhs)?;
    let m = space.n_modes();
    let g = space.grid.n_gauss();
    let n_int = space.grid.n_intervals();
    let dim = g * m;
    let mut w = SpectralField::zero(space);
    for (k, mode) in w.modes.iter_mut().enumerate() {
        mode.nodes[0] = rhs.a[k];
    }
    for n in 0..n_int {
        let lin: Vec<Vec<Vec<f64>>> = (0..g).map(|c| tensor.linearization(&u.sample(n * g + c))).collect();
        let start: Vec<f64> = w.modes.iter().map(|md| md.nodes[n]).collect();
        let mut a = Mat::<f64>::zeros(dim, dim);
        let mut b = Mat::<f64>::zeros(dim, 1);
        for c in 0..g {
            for k in 0..m {
                let row = c * m + k;
                a[(row, row)] += 1.0;
                let mut r = rhs.mu[k][n * g + c];
                for l in 0..m {
                    let coef = lin[c][k][l];
                    if coef == 0.0 {
                        continue;
                    }
                    let kern = &space.kernels[l];
                    r -= coef * kern.decay_col[c] * start[l];
                    for j in 0..g {
                        a[(row, j * m + l)] += coef * kern.w_col[c][j];
                    }
                }
                b[(row, 0)] = r;
            }
        }
        let p = a.partial_piv_lu().solve(&b);
        if (0..dim).any(|i| !p[(i, 0)].is_finite()) {
            return Err(Error::LinearBreakdown {
                step: n,
                reason: "non-finite solution of the step system".into(),
            });
        }
        let ap = &a * &p;
        let mut res: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..dim {
            res = res.max((ap[(i, 0)] - b[(i, 0)]).abs());
            scale = scale.max(b[(i, 0)].abs()).max(p[(i, 0)].abs());
        }
        if res > 1e-9 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::LinearBreakdown {
                step: n,
                reason: format!("near-singular step matrix (residual {res:.3e})"),
            });
        }
        for (l, mode) in w.modes.iter_mut().enumerate() {
            let kern = &space.kernels[l];
            let pl: Vec<f64> = (0..g).map(|j| p[(j * m + l, 0)]).collect();
            for c in 0..g {
                let theta = kern.decay_col[c] * start[l] + crate::sparse::dot(&kern.w_col[c], &pl);
                mode.theta[n * g + c] = theta;
                mode.theta_prime[n * g + c] = pl[c] - kern.lambda * theta;
            }
            mode.nodes[n + 1] = kern.decay_end * start[l] + crate::sparse::dot(&kern.w_end, &pl);
        }
    }
    let residual = apply_g(space, tensor, u, &w).sub(rhs).norm(space);
    let rhs_norm = rhs.norm(space);
    if !(residual <= linear_tol * rhs_norm.max(f64::MIN_POSITIVE)) {
        return Err(Error::LinearBreakdown {
            step: n_int,
            reason: format!("global residual {residual:.3e} exceeds tolerance relative to {rhs_norm:.3e}"),
        });
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Stop when `‖𝒩(u) − d‖_Y ≤ abs_tol`.
    pub abs_tol: f64,
    /// Initial step fraction for backtracking.
    pub damping: f64,
    /// Relative residual tolerance for the 𝒢_u solves.
    pub linear_tol: f64,
    /// Keep every iterate in the outcome.
    #[serde(default)]
    pub record_iterates: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iters: 20,
            abs_tol: 1e-11,
            damping: 1.0,
            linear_tol: 1e-9,
            record_iterates: false,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.abs_tol > 0.0) || !(self.linear_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonStep {
    pub iteration: usize,
    pub residual: f64,
    /// `‖α δ‖_X` of the accepted step (zero for the initial guess).
    pub step_norm: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationReport {
    /// Residual `‖𝒩(u₀) − d‖_Y` of the initial guess.
    pub base_residual: f64,
    pub final_residual: f64,
    /// `‖d̃ − d‖_Y`; zero outside perturbation runs.
    pub perturbation_norm: f64,
    /// `‖ũ − u‖_X`; zero outside perturbation runs.
    pub solution_shift: f64,
    pub newton_iterations: usize,
    pub converged: bool,
    /// `s_{n+1} / s_n²` for consecutive full Newton steps `s_n = ‖δ_n‖_X`.
    pub quadratic_ratios: Vec<f64>,
    pub history: Vec<NewtonStep>,
    #[serde(default)]
    pub failure: Option<String>,
}

impl ContinuationReport {
    /// CSV of the residual history.
    pub fn history_csv(&self) -> Vec<u8> {
        let header = ["iteration", "residual", "step_norm", "damping"].map(String::from);
        crate::io::csv_table(
            &header,
            self.history
                .iter()
                .map(|h| vec![h.iteration as f64, h.residual, h.step_norm, h.damping]),
        )
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    /// Final iterate if converged, otherwise the iterate with the smallest residual.
    pub solution: SpectralField,
    pub report: ContinuationReport,
    pub iterates: Vec<SpectralField>,
}

/// `s_{n+1} / s_n²` over consecutive full steps, ignoring steps at round-off level.
pub fn quadratic_ratios(errors: &[f64], floor: f64) -> Vec<f64> {
    errors
        .windows(2)
        .take_while(|w| w[1] > floor)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / (w[0] * w[0]))
        .collect()
}

/// Newton's method for `𝒩(u) = data`, started at `initial_guess` or at the Stokes solution.
pub fn solve_navier_stokes(
    space: &ModalSpace,
    tensor: &ConvectionTensor,
    data: &DataPair,
    opts: &NewtonOptions,
    initial_guess: Option<&SpectralField>,
) -> Result<NewtonOutcome> {
    opts.validate()?;
    check_data(space, data)?;
    let mut u = match initial_guess {
        Some(g) => g.clone(),
        None => solve_stokes_evolution(space, data)?,
    };
    let mut r = data.sub(&apply_n(space, tensor, &u));
    let mut res = r.norm(space);
    let base_residual = res;
    let mut history = vec![NewtonStep {
        iteration: 0,
        residual: res,
        step_norm: 0.0,
        damping: 0.0,
    }];
    let mut iterates = Vec::new();
    if opts.record_iterates {
        iterates.push(u.clone());
    }
    let mut best = (res, u.clone());
    let mut steps = Vec::new();
    let mut full_steps = true;
    let mut failure = None;
    let mut iterations = 0;
    while res > opts.abs_tol && iterations < opts.max_iters {
        if !res.is_finite() {
            failure = Some("residual is not finite".to_string());
            break;
        }
        let delta = solve_linearized(space, tensor, &u, &r, opts.linear_tol)?;
        let delta_norm = x_norm(space, &delta);
        let mut alpha = opts.damping;
        let accepted = loop {
            let trial = u.axpy(alpha, &delta);
            let tr = data.sub(&apply_n(space, tensor, &trial));
            let tres = tr.norm(space);
            if tres.is_finite() && tres < (1.0 - 1e-4 * alpha) * res {
                break Some((trial, tr, tres));
            }
            alpha *= 0.5;
            if alpha < 1.0 / 1024.0 {
                break None;
            }
        };
        iterations += 1;
        let Some((trial, tr, tres)) = accepted else {
            failure = Some(format!("no residual decrease along the Newton direction at iteration {iterations}"));
            break;
        };
        if alpha < 1.0 {
            full_steps = false;
        }
        u = trial;
        r = tr;
        res = tres;
        history.push(NewtonStep {
            iteration: iterations,
            residual: res,
            step_norm: alpha * delta_norm,
            damping: alpha,
        });
        if full_steps {
            steps.push(delta_norm);
        }
        if opts.record_iterates {
            iterates.push(u.clone());
        }
        if res < best.0 {
            best = (res, u.clone());
        }
    }
    let converged = res <= opts.abs_tol;
    if !converged && failure.is_none() {
        failure = Some(format!("residual {res:.3e} above tolerance after {iterations} iterations"));
    }
    let scale = x_norm(space, &u).max(1.0);
    let report = ContinuationReport {
        base_residual,
        final_residual: if converged { res } else { best.0 },
        perturbation_norm: 0.0,
        solution_shift: 0.0,
        newton_iterations: iterations,
        converged,
        quadratic_ratios: quadratic_ratios(&steps, 1e-12 * scale),
        history,
        failure,
    };
    Ok(NewtonOutcome {
        solution: if converged { u } else { best.1 },
        report,
        iterates,
    })
}

/// Random data with mode-wise decay `λ_k⁻¹`, normalized to `‖·‖_Y = 1`.
pub fn random_perturbation(space: &ModalSpace, rng: &mut ChaCha8Rng) -> DataPair {
    let d = DataPair::random(space, rng, 1.0);
    let n = d.norm(space);
    d.scale(1.0 / n)
}

/// Scale `data` so that its Stokes solution has `‖u‖_X = target`.
pub fn scale_to_stokes_norm(space: &ModalSpace, data: &DataPair, target: f64) -> Result<DataPair> {
    let n = x_norm(space, &solve_stokes_evolution(space, data)?);
    if !(n > 0.0) {
        return Err(Error::InvalidParameter("cannot rescale zero data".into()));
    }
    Ok(data.scale(target / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub scale: f64,
    pub trial: usize,
    /// `‖𝒢_u⁻¹ p‖_X`, the limit of `shift / ε` as ε → 0.
    pub linear_prediction: f64,
    /// `shift / ε`; zero when ε = 0.
    pub shift_ratio: f64,
    pub report: ContinuationReport,
}

/// Per-scale summary in the CLI report schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub scale: f64,
    pub trials: usize,
    pub mean_shift_ratio: f64,
    pub max_iterations: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResult {
    pub base_residual: f64,
    pub base_solution_norm: f64,
    pub summaries: Vec<ScaleSummary>,
    pub trials: Vec<TrialReport>,
}

/// Re-solve with `data + ε p` for random unit directions `p`, starting from the base solution.
/// The same directions are reused for every scale.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_experiment(
    space: &ModalSpace,
    tensor: &ConvectionTensor,
    base_data: &DataPair,
    scales: &[f64],
    trials: usize,
    seed: u64,
    opts: &NewtonOptions,
) -> Result<PerturbationResult> {
    let base = solve_navier_stokes(space, tensor, base_data, opts, None)?;
    if !base.report.converged {
        return Err(Error::InvalidParameter(format!(
            "base problem did not converge: {}",
            base.report.failure.clone().unwrap_or_default()
        )));
    }
    let u = base.solution;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<DataPair> = (0..trials).map(|_| random_perturbation(space, &mut rng)).collect();
    let predictions: Vec<f64> = directions
        .iter()
        .map(|p| solve_linearized(space, tensor, &u, p, opts.linear_tol).map(|w| x_norm(space, &w)))
        .collect::<Result<_>>()?;
    let mut all = Vec::new();
    let mut summaries = Vec::new();
    for &eps in scales {
        let mut ratios = Vec::new();
        let mut max_iterations = 0;
        let mut failures = 0;
        for (t, p) in directions.iter().enumerate() {
            let data = base_data.axpy(eps, p);
            let report = match solve_navier_stokes(space, tensor, &data, opts, Some(&u)) {
                Ok(out) => {
                    let mut rep = out.report;
                    rep.perturbation_norm = data.sub(base_data).norm(space);
                    rep.solution_shift = x_norm(space, &out.solution.sub(&u));
                    rep
                }
                Err(e) => ContinuationReport {
                    base_residual: f64::NAN,
                    final_residual: f64::NAN,
                    perturbation_norm: eps.abs(),
                    solution_shift: f64::NAN,
                    newton_iterations: 0,
                    converged: false,
                    quadratic_ratios: vec![],
                    history: vec![],
                    failure: Some(e.to_string()),
                },
            };
            max_iterations = max_iterations.max(report.newton_iterations);
            let shift_ratio = if eps != 0.0 { report.solution_shift / eps.abs() } else { 0.0 };
            if report.converged {
                ratios.push(shift_ratio);
            } else {
                failures += 1;
            }
            all.push(TrialReport {
                scale: eps,
                trial: t,
                linear_prediction: predictions[t],
                shift_ratio,
                report,
            });
        }
        let mean_shift_ratio = if ratios.is_empty() {
            f64::NAN
        } else {
            ratios.iter().sum::<f64>() / ratios.len() as f64
        };
        summaries.push(ScaleSummary {
            scale: eps,
            trials,
            mean_shift_ratio,
            max_iterations,
            failures,
        });
    }
    Ok(PerturbationResult {
        base_residual: base.report.final_residual,
        base_solution_norm: x_norm(space, &u),
        summaries,
        trials: all,
    })
}

/// Default `‖ū‖_X` of the manufactured Newton problem. Smaller amplitudes make
/// the convection so weak that Newton converges in two steps, leaving no
/// quadratic ratios to observe.
pub const MANUFACTURED_NORM: f64 = 400.0;
pub const MANUFACTURED_SEED: u64 = 5;

/// `ū = 𝒮⁻¹ d` for random data `d` without modal decay, scaled to `‖ū‖_X = target`.
pub fn manufactured_solution(space: &ModalSpace, target: f64, seed: u64) -> Result<SpectralField> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidParameter(format!("manufactured norm must be positive, got {target}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = DataPair::random(space, &mut rng, 0.0);
    let u = solve_stokes_evolution(space, &d)?;
    let n = x_norm(space, &u);
    Ok(u.scale(target / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedReport {
    pub target_norm: f64,
    /// `‖u_n − ū‖_X` for every Newton iterate, starting with the Stokes guess.
    pub errors: Vec<f64>,
    /// `e_{n+1} / e_n²` while `e_{n+1}` is above round-off.
    pub error_ratios: Vec<f64>,
    pub final_error: f64,
    pub report: ContinuationReport,
}

impl ManufacturedReport {
    /// Quadratic convergence: at least three ratios, spread no more than a factor 100.
    pub fn quadratic(&self) -> bool {
        let r = &self.error_ratios;
        let (lo, hi) = r
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        r.len() >= 3 && r.iter().all(|v| v.is_finite()) && hi <= 100.0 * lo
    }
}

/// Solve `𝒩(u) = 𝒩(ū)` by Newton from the Stokes guess and track the true error.
pub fn run_manufactured(
    space: &ModalSpace,
    tensor: &ConvectionTensor,
    target: f64,
    seed: u64,
    opts: &NewtonOptions,
) -> Result<ManufacturedReport> {
    let exact = manufactured_solution(space, target, seed)?;
    let data = apply_n(space, tensor, &exact);
    let opts = NewtonOptions {
        record_iterates: true,
        ..opts.clone()
    };
    let out = solve_navier_stokes(space, tensor, &data, &opts, None)?;
    let errors: Vec<f64> = out
        .iterates
        .iter()
        .map(|u| x_norm(space, &u.sub(&exact)))
        .collect();
    let error_ratios = quadratic_ratios(&errors, 1e-12 * target.max(1.0));
    Ok(ManufacturedReport {
        target_norm: target,
        final_error: x_norm(space, &out.solution.sub(&exact)),
        errors,
        error_ratios,
        report: out.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::TimeGrid;

    /// A small synthetic tensor, enough to exercise the algebra without a mesh.
    fn toy(m: usize) -> (ModalSpace, ConvectionTensor) {
        let lambdas: Vec<f64> = (1..=m).map(|k| 3.0 * k as f64).collect();
        let space = ModalSpace::new(lambdas, TimeGrid::uniform(1.0, 16, 4).unwrap()).unwrap();
        let mut data = vec![0.0; m * m * m];
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i * 37 % 17) as f64 - 8.0) / 8.0;
        }
        (space, ConvectionTensor { n_modes: m, data })
    }

    #[test]
    fn linearization_matches_difference_quotient() {
        let (space, t) = toy(3);
        let u = [0.3, -0.2, 0.5];
        let w = [0.1, 0.4, -0.7];
        let lin = t.linearization(&u);
        let direct: Vec<f64> = t.apply(&u, &w).iter().zip(t.apply(&w, &u)).map(|(a, b)| a + b).collect();
        for k in 0..3 {
            let v: f64 = (0..3).map(|j| lin[k][j] * w[j]).sum();
            assert!((v - direct[k]).abs() < 1e-14);
        }
        let _ = space;
    }

    #[test]
    fn linear_solve_round_trip_and_injectivity() {
        let (space, t) = toy(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = solve_stokes_evolution(&space, &DataPair::random(&space, &mut rng, 0.0)).unwrap();
        let rhs = DataPair::random(&space, &mut rng, 0.0);
        let w = solve_linearized(&space, &t, &u, &rhs, 1e-10).unwrap();
        assert!(apply_g(&space, &t, &u, &w).sub(&rhs).norm(&space) < 1e-10 * rhs.norm(&space));
        let zero = solve_linearized(&space, &t, &u, &DataPair::zero(&space), 1e-10).unwrap();
        assert_eq!(x_norm(&space, &zero), 0.0);
    }

    #[test]
    fn newton_on_zero_data_returns_zero() {
        let (space, t) = toy(2);
        let out = solve_navier_stokes(&space, &t, &DataPair::zero(&space), &NewtonOptions::default(), None).unwrap();
        assert!(out.report.converged);
        assert_eq!(out.report.newton_iterations, 0);
        assert_eq!(x_norm(&space, &out.solution), 0.0);
    }

    #[test]
    fn options_are_validated() {
        let bad = NewtonOptions {
            damping: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
