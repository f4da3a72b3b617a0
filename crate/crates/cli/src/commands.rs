use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use mixed_ns::basis::{self, EigenBasis, OrthogonalityReport, SteadyStokes};
use mixed_ns::corner::{self, CornerSample, Rect, RootEstimate, RootReport, SingularExpansion};
use mixed_ns::evolution::{self, DataPair, EnergyReport, ModalSpace, TimeGrid, XNorms};
use mixed_ns::fem::{self, DiscreteSpaces};
use mixed_ns::io::write_atomic;
use mixed_ns::mesh::{self, ChannelMesh, ChannelParams, VtkPointData};
use mixed_ns::navier_stokes::{
    self, ContinuationReport, ConvectionTensor, ManufacturedReport, NewtonOptions, PerturbationResult,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{DataKind, NsPreset, RunConfig};
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Outcome of a command: whether every check in its report passed.
pub type Outcome = Result<bool, CliError>;

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(mixed_ns::Error::from)?;
    text.push('\n');
    write_atomic(&dir.join(name), text.as_bytes())?;
    Ok(())
}

fn progress(msg: &str, start: Instant) {
    eprintln!("[{:>8.2}s] {msg}", start.elapsed().as_secs_f64());
}

pub fn build_mesh(cfg: &RunConfig) -> Result<ChannelMesh, CliError> {
    let g = &cfg.geometry;
    let mut params = ChannelParams::new(g.length, g.height, g.nx, g.ny);
    if g.grading != 1.0 {
        params = params.with_grading(g.grading);
    }
    let mut m = mesh::build_channel_mesh(&params)?;
    for _ in 0..g.refine {
        m = m.refine()?;
    }
    Ok(m)
}

fn build_spaces(cfg: &RunConfig) -> Result<Arc<DiscreteSpaces>, CliError> {
    Ok(Arc::new(fem::assemble(Arc::new(build_mesh(cfg)?))?))
}

fn time_grid(cfg: &RunConfig) -> Result<TimeGrid, CliError> {
    let t = &cfg.time;
    Ok(TimeGrid::uniform(t.t_end, t.intervals, t.gauss_points)?)
}

fn newton_options(cfg: &RunConfig) -> NewtonOptions {
    let n = &cfg.newton;
    NewtonOptions {
        max_iters: n.max_iters,
        abs_tol: n.abs_tol,
        damping: n.damping,
        linear_tol: n.linear_tol,
        record_iterates: false,
    }
}

struct Setup {
    basis: EigenBasis,
    space: ModalSpace,
}

fn setup(cfg: &RunConfig, start: Instant) -> Result<Setup, CliError> {
    let spaces = build_spaces(cfg)?;
    progress(&format!("assembled {} free velocity dofs", spaces.n_free()), start);
    let basis = basis::compute_eigenbasis(spaces, cfg.basis.n_modes)?;
    progress(&format!("computed {} Stokes modes", basis.n_modes()), start);
    let space = ModalSpace::from_basis(&basis, time_grid(cfg)?)?;
    Ok(Setup { basis, space })
}

/// Data smooth in time: `μ_k(t) = λ_k^{−decay}(α_k + β_k cos(πt/T) + γ_k sin(2πt/T))`,
/// `a_k = λ_k^{−decay} δ_k` with coefficients uniform in [−1, 1].
pub fn smooth_random_data(space: &ModalSpace, rng: &mut ChaCha8Rng, decay: f64, forcing: bool, initial: bool) -> DataPair {
    let m = space.n_modes();
    let mut draw = || -> Vec<f64> { (0..m).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let (al, be, ga, de) = (draw(), draw(), draw(), draw());
    let scale: Vec<f64> = space.lambdas.iter().map(|l| l.powf(-decay)).collect();
    let t_end = space.grid.t_end;
    let pi = std::f64::consts::PI;
    DataPair::from_fn(
        space,
        |k, t| {
            if forcing {
                scale[k] * (al[k] + be[k] * (pi * t / t_end).cos() + ga[k] * (2.0 * pi * t / t_end).sin())
            } else {
                0.0
            }
        },
        |k| if initial { scale[k] * de[k] } else { 0.0 },
    )
}

#[derive(Serialize)]
struct MeshReport {
    schema_version: u32,
    n_vertices: usize,
    n_triangles: usize,
    h: f64,
    area: f64,
    corner_points: Vec<[f64; 2]>,
    n_dirichlet_edges: usize,
    n_neumann_edges: usize,
}

pub fn cmd_mesh(cfg: &RunConfig, out: &Path) -> Outcome {
    let m = build_mesh(cfg)?;
    write_atomic(&out.join("mesh.json"), m.to_json()?.as_bytes())?;
    let mut vtk = Vec::new();
    m.write_vtk(&mut vtk, &[]).map_err(|e| CliError::Io(out.join("mesh.vtk"), e))?;
    write_atomic(&out.join("mesh.vtk"), &vtk)?;
    let count = |t| m.boundary_edges.iter().filter(|e| e.tag == t).count();
    let report = MeshReport {
        schema_version: SCHEMA_VERSION,
        n_vertices: m.n_vertices(),
        n_triangles: m.n_triangles(),
        h: m.h,
        area: m.total_area(),
        corner_points: m.corner_points.iter().map(|&v| m.vertices[v]).collect(),
        n_dirichlet_edges: count(mesh::BoundaryTag::Dirichlet),
        n_neumann_edges: count(mesh::BoundaryTag::Neumann),
    };
    write_json(out, "mesh_report.json", &report)?;
    Ok(true)
}

#[derive(Serialize)]
struct EigReport {
    schema_version: u32,
    n_modes: usize,
    n_free_dofs: usize,
    lambdas: Vec<f64>,
    orthogonality: OrthogonalityReport,
    passed: bool,
}

pub fn cmd_eig(cfg: &RunConfig, out: &Path) -> Outcome {
    let start = Instant::now();
    let spaces = build_spaces(cfg)?;
    let b = basis::compute_eigenbasis(spaces.clone(), cfg.basis.n_modes)?;
    progress(&format!("computed {} Stokes modes", b.n_modes()), start);
    b.export(out)?;
    let orth = b.orthogonality();
    let passed = orth.passes();
    let report = EigReport {
        schema_version: SCHEMA_VERSION,
        n_modes: b.n_modes(),
        n_free_dofs: spaces.n_free(),
        lambdas: b.lambdas.clone(),
        orthogonality: orth,
        passed,
    };
    write_json(out, "eig_report.json", &report)?;
    Ok(passed)
}

#[derive(Serialize)]
struct SteadyReport {
    schema_version: u32,
    residual: f64,
    stability_ratio: f64,
    velocity_l2: f64,
    inf_sup_constant: Option<f64>,
    passed: bool,
}

fn vertex_velocity(spaces: &DiscreteSpaces, u: &[f64]) -> Vec<[f64; 2]> {
    (0..spaces.mesh.n_vertices())
        .map(|v| [u[v], u[spaces.n_nodes + v]])
        .collect()
}

pub fn cmd_steady(cfg: &RunConfig, out: &Path) -> Outcome {
    let spaces = build_spaces(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sigma: Vec<f64> = (0..spaces.ndof_v)
        .map(|_| cfg.steady.amplitude * rng.random_range(-1.0..1.0))
        .collect();
    let sol = SteadyStokes::new(spaces.clone())?.solve(&sigma)?;
    let inf_sup = if cfg.steady.inf_sup {
        Some(fem::inf_sup_constant(&spaces)?)
    } else {
        None
    };
    let vel = vertex_velocity(&spaces, &sol.velocity);
    let pressure: Vec<f64> = sol.pressure[..spaces.mesh.n_vertices()].to_vec();
    let mut vtk = Vec::new();
    spaces
        .mesh
        .write_vtk(
            &mut vtk,
            &[
                VtkPointData::Vector {
                    name: "velocity",
                    values: &vel,
                },
                VtkPointData::Scalar {
                    name: "pressure",
                    values: &pressure,
                },
            ],
        )
        .map_err(|e| CliError::Io(out.join("steady.vtk"), e))?;
    write_atomic(&out.join("steady.vtk"), &vtk)?;
    let passed = sol.residual <= 1e-8 && inf_sup.is_none_or(|b| b > 0.1);
    let report = SteadyReport {
        schema_version: SCHEMA_VERSION,
        residual: sol.residual,
        stability_ratio: sol.stability_ratio,
        velocity_l2: fem::inner_l2(&spaces, &sol.velocity, &sol.velocity)?.sqrt(),
        inf_sup_constant: inf_sup,
        passed,
    };
    write_json(out, "steady_report.json", &report)?;
    Ok(passed)
}

#[derive(Serialize)]
struct StokesReport {
    schema_version: u32,
    forcing_norm: f64,
    initial_norm: f64,
    norms: XNorms,
    x_norm: f64,
    round_trip_defect: f64,
    energy: EnergyReport,
    halving_change: Option<f64>,
    passed: bool,
}

pub fn cmd_stokes(cfg: &RunConfig, out: &Path) -> Outcome {
    let start = Instant::now();
    let s = setup(cfg, start)?;
    let sc = &cfg.stokes;
    let make = |space: &ModalSpace| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        smooth_random_data(space, &mut rng, sc.decay, sc.forcing == DataKind::Random, sc.initial == DataKind::Random)
    };
    let data = make(&s.space);
    let u = evolution::solve_stokes_evolution(&s.space, &data)?;
    let back = evolution::apply_s(&s.space, &u);
    let round_trip_defect = back.sub(&data).norm(&s.space);
    let energy = evolution::verify_energy_inequalities(&s.space, &u, &data);
    let norms = evolution::x_norms(&s.space, &u);
    let x = norms.x();
    let halving_change = if sc.halving_check {
        let fine = ModalSpace::from_basis(&s.basis, s.space.grid.halved())?;
        let uf = evolution::solve_stokes_evolution(&fine, &make(&fine))?;
        Some((evolution::x_norm(&fine, &uf) - x).abs())
    } else {
        None
    };
    let mut csv = Vec::new();
    evolution::write_trajectories(&s.space, &u, &mut csv).map_err(|e| CliError::Io(out.join("trajectories.csv"), e))?;
    write_atomic(&out.join("trajectories.csv"), &csv)?;
    let passed = energy.passed && round_trip_defect <= 1e-9 * data.norm(&s.space).max(1.0) && halving_change.is_none_or(|d| d < 1e-8);
    let report = StokesReport {
        schema_version: SCHEMA_VERSION,
        forcing_norm: data.forcing_norm(&s.space),
        initial_norm: data.initial_norm(&s.space),
        norms,
        x_norm: x,
        round_trip_defect,
        energy,
        halving_change,
        passed,
    };
    write_json(out, "stokes_report.json", &report)?;
    Ok(passed)
}

#[derive(Serialize)]
struct NsReport {
    schema_version: u32,
    preset: NsPreset,
    data_norm: f64,
    solution_norm: f64,
    manufactured: Option<ManufacturedReport>,
    report: ContinuationReport,
    passed: bool,
}

fn failed_report(msg: String) -> ContinuationReport {
    ContinuationReport {
        base_residual: f64::NAN,
        final_residual: f64::NAN,
        perturbation_norm: 0.0,
        solution_shift: 0.0,
        newton_iterations: 0,
        converged: false,
        quadratic_ratios: vec![],
        history: vec![],
        failure: Some(msg),
    }
}

pub fn cmd_ns(cfg: &RunConfig, out: &Path) -> Outcome {
    let start = Instant::now();
    let s = setup(cfg, start)?;
    let tensor = ConvectionTensor::from_basis(&s.basis);
    progress("built convection tensor", start);
    let opts = newton_options(cfg);
    let ns = &cfg.ns;
    let report = match ns.preset {
        NsPreset::Manufactured => {
            let m = navier_stokes::run_manufactured(&s.space, &tensor, ns.manufactured_norm, cfg.seed, &opts)?;
            let passed = m.report.converged && m.final_error <= ns.error_tol;
            NsReport {
                schema_version: SCHEMA_VERSION,
                preset: ns.preset,
                data_norm: f64::NAN,
                solution_norm: ns.manufactured_norm,
                report: m.report.clone(),
                manufactured: Some(m),
                passed,
            }
        }
        NsPreset::Forcing => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let d = smooth_random_data(&s.space, &mut rng, ns.decay, true, true);
            let data = d.scale(ns.amplitude / d.norm(&s.space));
            let (rep, norm) = match navier_stokes::solve_navier_stokes(&s.space, &tensor, &data, &opts, None) {
                Ok(o) => (o.report, evolution::x_norm(&s.space, &o.solution)),
                Err(e) => (failed_report(e.to_string()), f64::NAN),
            };
            NsReport {
                schema_version: SCHEMA_VERSION,
                preset: ns.preset,
                data_norm: data.norm(&s.space),
                solution_norm: norm,
                passed: rep.converged,
                report: rep,
                manufactured: None,
            }
        }
    };
    progress(&format!("Newton finished after {} iterations", report.report.newton_iterations), start);
    write_atomic(&out.join("newton_history.csv"), &report.report.history_csv())?;
    write_json(out, "ns_report.json", &report)?;
    Ok(report.passed)
}

#[derive(Serialize)]
struct PerturbReport {
    schema_version: u32,
    base_data_norm: f64,
    /// Largest relative spread of shift/ε across scales, per direction.
    max_ratio_spread: f64,
    result: PerturbationResult,
    passed: bool,
}

/// Largest `(max − min) / max` of the per-direction shift ratios across scales.
pub fn ratio_spread(result: &PerturbationResult) -> f64 {
    let n = result.trials.iter().map(|t| t.trial + 1).max().unwrap_or(0);
    (0..n)
        .map(|i| {
            let r: Vec<f64> = result
                .trials
                .iter()
                .filter(|t| t.trial == i)
                .map(|t| t.shift_ratio)
                .collect();
            let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
            if hi > 0.0 {
                (hi - lo) / hi
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

pub fn cmd_perturb(cfg: &RunConfig, out: &Path) -> Outcome {
    let start = Instant::now();
    let s = setup(cfg, start)?;
    let tensor = ConvectionTensor::from_basis(&s.basis);
    let p = &cfg.perturb;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = smooth_random_data(&s.space, &mut rng, p.decay, true, true);
    let base = navier_stokes::scale_to_stokes_norm(&s.space, &d, p.base_stokes_norm)?;
    let result = navier_stokes::perturbation_experiment(
        &s.space,
        &tensor,
        &base,
        &p.scales,
        p.trials,
        cfg.seed.wrapping_add(1),
        &newton_options(cfg),
    )?;
    progress("perturbation trials finished", start);
    let spread = ratio_spread(&result);
    let failures: usize = result.summaries.iter().map(|s| s.failures).sum();
    let passed = failures == 0 && spread <= p.ratio_tol;
    let mut csv = Vec::new();
    for t in &result.trials {
        let text = String::from_utf8(t.report.history_csv()).expect("ascii csv");
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if csv.is_empty() {
                    csv.extend_from_slice(format!("scale,trial,{line}\n").as_bytes());
                }
            } else {
                csv.extend_from_slice(format!("{},{},{line}\n", mixed_ns::io::fmt_f64(t.scale), t.trial).as_bytes());
            }
        }
    }
    write_atomic(&out.join("newton_history.csv"), &csv)?;
    let report = PerturbReport {
        schema_version: SCHEMA_VERSION,
        base_data_norm: base.norm(&s.space),
        max_ratio_spread: spread,
        result,
        passed,
    };
    write_json(out, "perturb_report.json", &report)?;
    Ok(passed)
}

#[derive(Serialize)]
struct FitLevel {
    nx: usize,
    ny: usize,
    h: f64,
    n_samples: usize,
    expansion: SingularExpansion,
}

#[derive(Serialize)]
struct CornerReport {
    schema_version: u32,
    determinant_factor: f64,
    newton: Option<RootEstimate>,
    newton_failure: Option<String>,
    manufactured_fit: SingularExpansion,
    manufactured_fit_error: f64,
    /// Fits of steady Stokes solutions near the corner at the origin on successively refined meshes.
    finite_element_fits: Vec<FitLevel>,
    passed: bool,
}

/// Manufactured corner field `2·field₁ + 0.5·field₃` plus a quadratic regular part.
pub fn manufactured_corner_samples(delta: f64, n_r: usize, n_omega: usize) -> Vec<CornerSample> {
    corner::sector_points(delta, n_r, n_omega)
        .into_iter()
        .map(|(r, omega)| {
            let b = corner::singular_basis(r, omega);
            let (x1, x2) = (r * omega.cos(), r * omega.sin());
            let reg = [
                0.7 * x1 * x1 - 0.3 * x1 * x2,
                -1.1 * x2 * x2 + 0.4 * x1 * x1,
                0.9 * x1 - 0.25 * x2,
            ];
            let f = |k: usize| 2.0 * b[0][k] + 0.5 * b[2][k] + reg[k];
            CornerSample {
                r,
                omega,
                velocity: [f(0), f(1)],
                pressure: f(2),
            }
        })
        .collect()
}

pub fn cmd_corner(cfg: &RunConfig, out: &Path) -> Outcome {
    let start = Instant::now();
    let c = &cfg.corner;
    let rect = Rect::new(c.re, c.im)?;
    let grid = corner::sample_grid(&rect, c.grid_re, c.grid_im)?;
    write_atomic(&out.join("det_grid.csv"), &corner::grid_csv(&grid))?;
    let roots: RootReport = match corner::locate_roots(&rect, c.n_contour) {
        Ok(r) => r,
        Err(e @ mixed_ns::Error::ContourNearRoot { .. }) => {
            return Err(CliError::Numerical(format!(
                "{e}; shift the window edges (corner.re / corner.im) slightly away from the root"
            )))
        }
        Err(e) => return Err(e.into()),
    };
    write_json(out, "root_report.json", &roots)?;
    progress(&format!("winding count {}", roots.winding_count), start);
    let (newton, newton_failure) = match corner::find_root(Complex64::new(c.guess[0], c.guess[1])) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let samples = manufactured_corner_samples(c.fit_delta, c.fit_nr, c.fit_nomega);
    let manufactured_fit = corner::fit_singular_expansion(&samples, c.fit_delta)?;
    let expect = [2.0, 0.0, 0.5, 0.0];
    let manufactured_fit_error = manufactured_fit
        .c
        .iter()
        .zip(expect)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut fits = Vec::new();
    let mut mcfg = cfg.clone();
    for level in 0..c.fit_levels {
        if level > 0 {
            mcfg.geometry.nx *= 2;
            mcfg.geometry.ny *= 2;
        }
        let spaces = build_spaces(&mcfg)?;
        let sigma = spaces.interpolate_velocity(|x| [1.0 + x[1], 0.5 * x[0]]);
        let sol = SteadyStokes::new(spaces.clone())?.solve(&sigma)?;
        let origin = spaces
            .mesh
            .corner_points
            .iter()
            .copied()
            .find(|&v| spaces.mesh.vertices[v] == [0.0, 0.0])
            .ok_or_else(|| CliError::Numerical("no corner point at the origin".into()))?;
        let s = corner::sample_corner_field(&spaces, &sol.velocity, &sol.pressure, origin, c.fit_delta, c.fit_nr, c.fit_nomega)?;
        let expansion = corner::fit_singular_expansion(&s, c.fit_delta)?;
        fits.push(FitLevel {
            nx: mcfg.geometry.nx,
            ny: mcfg.geometry.ny,
            h: spaces.mesh.h,
            n_samples: s.len(),
            expansion,
        });
        progress(&format!("corner fit on level {level}"), start);
    }
    let passed = roots.consistent && manufactured_fit_error <= 1e-6;
    let report = CornerReport {
        schema_version: SCHEMA_VERSION,
        determinant_factor: corner::DETERMINANT_FACTOR,
        newton,
        newton_failure,
        manufactured_fit,
        manufactured_fit_error,
        finite_element_fits: fits,
        passed,
    };
    write_json(out, "singular_expansion.json", &report)?;
    Ok(passed)
}
