//! Steady Stokes solves and the discrete Stokes eigenbasis.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::eigen::{saddle_matrix, ConstrainedPencil, EigenOptions};
use crate::error::{Error, Result};
use crate::fem::DiscreteSpaces;
use crate::sparse::{self, SparseLu, SparseMatrix};

pub const DEFAULT_N_MODES: usize = 24;

/// Divergence rows used as constraints; the first pressure row is dropped when
/// the pressure is only determined up to a constant.
pub fn constraint_rows(spaces: &DiscreteSpaces) -> SparseMatrix {
    let start = usize::from(spaces.pressure_has_constant_mode());
    let rows: Vec<usize> = (start..spaces.ndof_p).collect();
    let cols: Vec<usize> = (0..spaces.n_free()).collect();
    sparse::submatrix(&spaces.divergence_free, &rows, &cols)
}

/// Discrete Stokes eigenpairs, L²-orthonormal, ascending.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub lambdas: Vec<f64>,
    /// Full-length velocity vectors (Γ_D dofs are zero).
    pub modes: Vec<Vec<f64>>,
    pub spaces: Arc<DiscreteSpaces>,
    /// Constrained eigen-relation residuals in the M⁻¹ norm.
    pub residuals: Vec<f64>,
}

impl EigenBasis {
    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    /// `a_k = (u, φ_k)`
    pub fn project(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.spaces.ndof_v {
            return Err(Error::DimensionMismatch {
                expected: self.spaces.ndof_v,
                got: u.len(),
            });
        }
        let mu = sparse::matvec(&self.spaces.mass, u);
        Ok(self.modes.iter().map(|phi| sparse::dot(phi, &mu)).collect())
    }

    /// `Σ a_k φ_k`
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.n_modes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes(),
                got: coeffs.len(),
            });
        }
        let mut u = vec![0.0; self.spaces.ndof_v];
        for (a, phi) in coeffs.iter().zip(&self.modes) {
            for (ui, pi) in u.iter_mut().zip(phi) {
                *ui += a * pi;
            }
        }
        Ok(u)
    }

    /// Largest deviations of the Gram matrices from δ_jk and λ_k δ_jk (the latter relative to λ_k).
    pub fn orthogonality(&self) -> OrthogonalityReport {
        let s = &self.spaces;
        let mphi: Vec<Vec<f64>> = self.modes.iter().map(|p| sparse::matvec(&s.mass, p)).collect();
        let kphi: Vec<Vec<f64>> = self.modes.iter().map(|p| sparse::matvec(&s.stiffness, p)).collect();
        let mut mass_dev: f64 = 0.0;
        let mut stiff_dev: f64 = 0.0;
        for j in 0..self.n_modes() {
            for k in 0..self.n_modes() {
                let delta = if j == k { 1.0 } else { 0.0 };
                mass_dev = mass_dev.max((sparse::dot(&self.modes[j], &mphi[k]) - delta).abs());
                let lk = self.lambdas[k];
                stiff_dev = stiff_dev.max((sparse::dot(&self.modes[j], &kphi[k]) - lk * delta).abs() / lk);
            }
        }
        let divergence = self
            .modes
            .iter()
            .map(|p| sparse::norm2(&sparse::matvec(&s.divergence, p)) / sparse::norm2(p))
            .fold(0.0, f64::max);
        let residual = self
            .residuals
            .iter()
            .zip(&self.lambdas)
            .map(|(r, l)| r / l)
            .fold(0.0, f64::max);
        OrthogonalityReport {
            mass_gram_deviation: mass_dev,
            stiffness_gram_relative_deviation: stiff_dev,
            max_relative_divergence: divergence,
            max_relative_residual: residual,
        }
    }

    pub fn to_file(&self) -> BasisFile {
        BasisFile {
            schema_version: BASIS_SCHEMA_VERSION,
            ndof_v: self.spaces.ndof_v,
            lambdas: self.lambdas.clone(),
            residuals: self.residuals.clone(),
        }
    }

    /// Write `basis.json` (eigenvalues) and `modes.csv` (one column per mode) into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_file())?;
        crate::io::write_atomic(&dir.join("basis.json"), json.as_bytes())?;
        let mut buf = Vec::new();
        let header: Vec<String> = std::iter::once("dof".to_string())
            .chain((1..=self.n_modes()).map(|k| format!("mode_{k}")))
            .collect();
        writeln!(buf, "{}", header.join(",")).expect("write to Vec");
        for d in 0..self.spaces.ndof_v {
            let row: Vec<String> = std::iter::once(d.to_string())
                .chain(self.modes.iter().map(|m| crate::io::fmt_f64(m[d])))
                .collect();
            writeln!(buf, "{}", row.join(",")).expect("write to Vec");
        }
        crate::io::write_atomic(&dir.join("modes.csv"), &buf)
    }

    /// Inverse of [`EigenBasis::export`]; `spaces` must match the exported run.
    pub fn import(spaces: Arc<DiscreteSpaces>, dir: &Path) -> Result<Self> {
        let path = dir.join("basis.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: BasisFile = serde_json::from_str(&text)?;
        if file.ndof_v != spaces.ndof_v {
            return Err(Error::DimensionMismatch {
                expected: spaces.ndof_v,
                got: file.ndof_v,
            });
        }
        let path = dir.join("modes.csv");
        let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let n = file.lambdas.len();
        let mut modes = vec![vec![0.0; spaces.ndof_v]; n];
        let mut rows = 0;
        for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if i == 0 {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n + 1 {
                return Err(Error::Format(format!("modes.csv line {}: expected {} fields", i + 1, n + 1)));
            }
            let d: usize = fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("modes.csv line {}: bad dof index", i + 1)))?;
            if d >= spaces.ndof_v {
                return Err(Error::Format(format!("modes.csv line {}: dof {d} out of range", i + 1)));
            }
            for k in 0..n {
                modes[k][d] = fields[k + 1]
                    .parse()
                    .map_err(|_| Error::Format(format!("modes.csv line {}: bad value", i + 1)))?;
            }
            rows += 1;
        }
        if rows != spaces.ndof_v {
            return Err(Error::DimensionMismatch {
                expected: spaces.ndof_v,
                got: rows,
            });
        }
        Ok(EigenBasis {
            lambdas: file.lambdas,
            modes,
            spaces,
            residuals: file.residuals,
        })
    }
}

pub const BASIS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisFile {
    pub schema_version: u32,
    pub ndof_v: usize,
    pub lambdas: Vec<f64>,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct OrthogonalityReport {
    pub mass_gram_deviation: f64,
    pub stiffness_gram_relative_deviation: f64,
    pub max_relative_divergence: f64,
    pub max_relative_residual: f64,
}

impl OrthogonalityReport {
    pub fn passes(&self) -> bool {
        self.mass_gram_deviation <= 1e-8
            && self.stiffness_gram_relative_deviation <= 1e-6
            && self.max_relative_divergence <= 1e-8
            && self.max_relative_residual <= 1e-8
    }
}

/// The `n_modes` smallest constrained eigenpairs of `(K, M)` on the divergence-free space.
pub fn compute_eigenbasis(spaces: Arc<DiscreteSpaces>, n_modes: usize) -> Result<EigenBasis> {
    compute_eigenbasis_with(spaces, n_modes, &EigenOptions::default())
}

pub fn compute_eigenbasis_with(
    spaces: Arc<DiscreteSpaces>,
    n_modes: usize,
    opts: &EigenOptions,
) -> Result<EigenBasis> {
    if n_modes == 0 {
        return Err(Error::InvalidParameter("n_modes must be positive".into()));
    }
    let available = spaces.divergence_free_dimension();
    if n_modes > available {
        return Err(Error::TooManyModes {
            requested: n_modes,
            available,
        });
    }
    let c = constraint_rows(&spaces);
    let pencil = ConstrainedPencil::new(&spaces.stiffness_free, &spaces.mass_free, Some(&c))?;
    let res = pencil.smallest(n_modes, available, opts)?;
    if let Some(l) = res.values.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::EigenNonConvergence(format!("non-positive eigenvalue {l}")));
    }
    // Fix the sign of each mode against a generic smooth field so that runs on
    // different meshes produce comparable coefficient vectors.
    let reference = spaces.interpolate_velocity(|x| [1.0 + 0.37 * x[0] + x[1] * x[1], 0.21 + x[0] * x[1]]);
    let mref = sparse::matvec(&spaces.mass, &reference);
    let modes = res
        .vectors
        .iter()
        .map(|v| {
            let mut m = spaces.extend(v);
            if sparse::dot(&m, &mref) < 0.0 {
                m.iter_mut().for_each(|x| *x = -*x);
            }
            m
        })
        .collect();
    Ok(EigenBasis {
        lambdas: res.values,
        modes,
        residuals: res.residuals,
        spaces,
    })
}

/// Smallest eigenvalues of the scalar P2 Laplacian with Dirichlet conditions on Γ_D.
pub fn scalar_laplace_eigenvalues(spaces: &DiscreteSpaces, count: usize) -> Result<Vec<f64>> {
    let k = sparse::submatrix(&spaces.scalar_stiffness, &spaces.free_nodes, &spaces.free_nodes);
    let m = sparse::submatrix(&spaces.scalar_mass, &spaces.free_nodes, &spaces.free_nodes);
    let pencil = ConstrainedPencil::new(&k, &m, None)?;
    Ok(pencil
        .smallest(count, spaces.free_nodes.len(), &EigenOptions::default())?
        .values)
}

/// `(Σ λ_k² a_k²)^{1/2}`
pub fn norm_d(coeffs: &[f64], lambdas: &[f64]) -> f64 {
    coeffs
        .iter()
        .zip(lambdas)
        .map(|(a, l)| (l * a).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `(Σ λ_k a_k²)^{1/2}`
pub fn norm_v(coeffs: &[f64], lambdas: &[f64]) -> f64 {
    coeffs
        .iter()
        .zip(lambdas)
        .map(|(a, l)| l * a * a)
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct SteadySolution {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    /// Relative residual of the assembled saddle-point system.
    pub residual: f64,
    /// `(‖ϑ‖_V + ‖q‖_{L²}) / ‖σ‖_{L²}`; zero for zero forcing.
    pub stability_ratio: f64,
}

/// Reusable factorization of the steady Stokes saddle-point system.
pub struct SteadyStokes {
    spaces: Arc<DiscreteSpaces>,
    constraint: SparseMatrix,
    system: SparseMatrix,
    lu: SparseLu,
}

impl std::fmt::Debug for SteadyStokes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SteadyStokes").field("n", &self.lu.dim()).finish()
    }
}

impl SteadyStokes {
    pub fn new(spaces: Arc<DiscreteSpaces>) -> Result<Self> {
        let constraint = constraint_rows(&spaces);
        let system = saddle_matrix(&spaces.stiffness_free, Some(&constraint));
        let lu = SparseLu::new(&system).map_err(|e| Error::SingularSaddlePoint(e.to_string()))?;
        Ok(SteadyStokes {
            spaces,
            constraint,
            system,
            lu,
        })
    }

    /// Solve `((ϑ, v)) − (q, div v) = (σ, v)`, `(div ϑ, ψ) = 0` for a velocity-space forcing σ.
    pub fn solve(&self, sigma: &[f64]) -> Result<SteadySolution> {
        let s = &self.spaces;
        if sigma.len() != s.ndof_v {
            return Err(Error::DimensionMismatch {
                expected: s.ndof_v,
                got: sigma.len(),
            });
        }
        let nf = s.n_free();
        let load = s.restrict(&sparse::matvec(&s.mass, sigma));
        let mut rhs = load.clone();
        rhs.resize(nf + self.constraint.nrows(), 0.0);
        let x = self.lu.solve(&rhs);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSaddlePoint("non-finite solution".into()));
        }
        let ax = sparse::matvec(&self.system, &x);
        let diff: Vec<f64> = ax.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let rhs_norm = sparse::norm2(&rhs);
        let residual = if rhs_norm > 0.0 {
            sparse::norm2(&diff) / rhs_norm
        } else {
            sparse::norm2(&diff)
        };

        let velocity = s.extend(&x[..nf]);
        let mut pressure = vec![0.0; s.ndof_p];
        let offset = usize::from(s.pressure_has_constant_mode());
        pressure[offset..].copy_from_slice(&x[nf..]);
        if offset == 1 {
            let ones = vec![1.0; s.ndof_p];
            let area = sparse::bilinear(&s.pressure_mass, &ones, &ones);
            let mean = sparse::bilinear(&s.pressure_mass, &ones, &pressure) / area;
            pressure.iter_mut().for_each(|p| *p -= mean);
        }
        let sigma_norm = sparse::bilinear(&s.mass, sigma, sigma).sqrt();
        let stability_ratio = if sigma_norm > 0.0 {
            (sparse::bilinear(&s.stiffness, &velocity, &velocity).sqrt()
                + sparse::bilinear(&s.pressure_mass, &pressure, &pressure).sqrt())
                / sigma_norm
        } else {
            0.0
        };
        Ok(SteadySolution {
            velocity,
            pressure,
            residual,
            stability_ratio,
        })
    }
}

pub fn solve_steady_stokes(spaces: Arc<DiscreteSpaces>, sigma: &[f64]) -> Result<SteadySolution> {
    SteadyStokes::new(spaces)?.solve(sigma)
}
