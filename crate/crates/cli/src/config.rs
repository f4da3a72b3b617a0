use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: Geometry,
    pub basis: BasisConfig,
    pub time: TimeConfig,
    pub newton: NewtonConfig,
    pub steady: SteadyConfig,
    pub stokes: StokesConfig,
    pub ns: NsConfig,
    pub perturb: PerturbConfig,
    pub corner: CornerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub length: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    /// Geometric grading ratio toward the in/outflow ends; 1 means uniform.
    pub grading: f64,
    /// Uniform refinements applied after meshing.
    pub refine: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub n_modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    pub intervals: usize,
    pub gauss_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    pub max_iters: usize,
    pub abs_tol: f64,
    pub damping: f64,
    pub linear_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Zero,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadyConfig {
    /// Amplitude of the random nodal forcing.
    pub amplitude: f64,
    /// Also compute the discrete inf-sup constant (dense, slow on fine meshes).
    pub inf_sup: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StokesConfig {
    pub forcing: DataKind,
    pub initial: DataKind,
    /// Modal decay exponent of the random data.
    pub decay: f64,
    /// Re-solve on the time grid with halved steps and report the change in ‖u‖_X.
    pub halving_check: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NsPreset {
    Manufactured,
    Forcing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NsConfig {
    pub preset: NsPreset,
    /// ‖ū‖_X of the manufactured solution.
    pub manufactured_norm: f64,
    /// ‖d‖_Y of the random data for the forcing preset.
    pub amplitude: f64,
    pub decay: f64,
    /// Largest admissible ‖u − ū‖_X for the manufactured preset.
    pub error_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub scales: Vec<f64>,
    pub trials: usize,
    /// ‖u‖_X of the Stokes solution for the base data.
    pub base_stokes_norm: f64,
    pub decay: f64,
    /// Largest admissible relative spread of shift/ε across scales.
    pub ratio_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CornerConfig {
    pub re: [f64; 2],
    pub im: [f64; 2],
    pub n_contour: usize,
    pub grid_re: usize,
    pub grid_im: usize,
    /// Newton starting point `[re, im]`.
    pub guess: [f64; 2],
    /// Fit radius around the corner at the origin.
    pub fit_delta: f64,
    pub fit_nr: usize,
    pub fit_nomega: usize,
    /// Number of mesh levels in the finite-element fit study.
    pub fit_levels: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            geometry: Geometry::default(),
            basis: BasisConfig::default(),
            time: TimeConfig::default(),
            newton: NewtonConfig::default(),
            steady: SteadyConfig::default(),
            stokes: StokesConfig::default(),
            ns: NsConfig::default(),
            perturb: PerturbConfig::default(),
            corner: CornerConfig::default(),
        }
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            length: 3.0,
            height: 1.0,
            nx: 48,
            ny: 16,
            grading: 1.0,
            refine: 0,
        }
    }
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            n_modes: mixed_ns::basis::DEFAULT_N_MODES,
        }
    }
}

impl Default for TimeConfig {
    fn default() -> Self {
        use mixed_ns::evolution::*;
        TimeConfig {
            t_end: DEFAULT_T_END,
            intervals: DEFAULT_INTERVALS,
            gauss_points: DEFAULT_GAUSS_POINTS,
        }
    }
}

impl Default for NewtonConfig {
    fn default() -> Self {
        let d = mixed_ns::navier_stokes::NewtonOptions::default();
        NewtonConfig {
            max_iters: d.max_iters,
            abs_tol: d.abs_tol,
            damping: d.damping,
            linear_tol: d.linear_tol,
        }
    }
}

impl Default for SteadyConfig {
    fn default() -> Self {
        SteadyConfig {
            amplitude: 1.0,
            inf_sup: false,
        }
    }
}

impl Default for StokesConfig {
    fn default() -> Self {
        StokesConfig {
            forcing: DataKind::Random,
            initial: DataKind::Random,
            decay: 1.0,
            halving_check: false,
        }
    }
}

impl Default for NsConfig {
    fn default() -> Self {
        NsConfig {
            preset: NsPreset::Manufactured,
            manufactured_norm: mixed_ns::navier_stokes::MANUFACTURED_NORM,
            amplitude: 1.0,
            decay: 1.0,
            error_tol: 1e-8,
        }
    }
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            scales: vec![1e-3, 1e-2],
            trials: 10,
            base_stokes_norm: 0.1,
            decay: 1.0,
            ratio_tol: 0.2,
        }
    }
}

impl Default for CornerConfig {
    fn default() -> Self {
        CornerConfig {
            re: [-20.0, 20.0],
            im: [-1.05, -0.005],
            n_contour: 8,
            grid_re: 201,
            grid_im: 41,
            guess: [0.0, -0.9],
            fit_delta: 0.25,
            fit_nr: 12,
            fit_nomega: 12,
            fit_levels: 2,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.geometry;
        check(positive(g.length) && positive(g.height), || {
            format!("geometry: length and height must be positive, got {} x {}", g.length, g.height)
        })?;
        check(g.nx >= 1 && g.ny >= 1, || format!("geometry: nx and ny must be at least 1, got {} x {}", g.nx, g.ny))?;
        check(positive(g.grading), || format!("geometry: grading must be positive, got {}", g.grading))?;
        check(g.refine <= 4, || format!("geometry: refine must be at most 4, got {}", g.refine))?;
        check(self.basis.n_modes >= 1, || "basis: n_modes must be at least 1".into())?;
        let t = &self.time;
        check(positive(t.t_end), || format!("time: t_end must be positive, got {}", t.t_end))?;
        check(t.intervals >= 1, || "time: intervals must be at least 1".into())?;
        check((1..=12).contains(&t.gauss_points), || {
            format!("time: gauss_points must lie in 1..=12, got {}", t.gauss_points)
        })?;
        let n = &self.newton;
        check(n.max_iters >= 1, || "newton: max_iters must be at least 1".into())?;
        check(positive(n.abs_tol) && positive(n.linear_tol), || "newton: tolerances must be positive".into())?;
        check(n.damping > 0.0 && n.damping <= 1.0, || format!("newton: damping must lie in (0, 1], got {}", n.damping))?;
        check(self.steady.amplitude.is_finite(), || "steady: amplitude must be finite".into())?;
        check(self.stokes.decay.is_finite(), || "stokes: decay must be finite".into())?;
        let ns = &self.ns;
        check(positive(ns.manufactured_norm), || "ns: manufactured_norm must be positive".into())?;
        check(positive(ns.amplitude), || "ns: amplitude must be positive".into())?;
        check(positive(ns.error_tol), || "ns: error_tol must be positive".into())?;
        let p = &self.perturb;
        check(!p.scales.is_empty() && p.scales.iter().all(|s| positive(*s)), || {
            "perturb: scales must be a non-empty list of positive numbers".into()
        })?;
        check(p.trials >= 1, || "perturb: trials must be at least 1".into())?;
        check(positive(p.base_stokes_norm), || "perturb: base_stokes_norm must be positive".into())?;
        check(positive(p.ratio_tol), || "perturb: ratio_tol must be positive".into())?;
        let c = &self.corner;
        check(c.re[0] < c.re[1] && c.im[0] < c.im[1], || "corner: window bounds must be increasing".into())?;
        check(c.n_contour >= 1, || "corner: n_contour must be at least 1".into())?;
        check(c.grid_re >= 2 && c.grid_im >= 2, || "corner: grid needs at least 2 points per axis".into())?;
        check(positive(c.fit_delta), || "corner: fit_delta must be positive".into())?;
        check(c.fit_nr >= 2 && c.fit_nomega >= 2, || "corner: fit grid needs at least 2 points per axis".into())?;
        check((1..=4).contains(&c.fit_levels), || "corner: fit_levels must lie in 1..=4".into())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml("seed = 3\n[geometry]\nnx = 12\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.geometry.nx, 12);
        assert_eq!(c.geometry.ny, 16);
    }

    #[test]
    fn rejects_zero_cells_and_unknown_keys() {
        assert!(RunConfig::from_toml("[geometry]\nnx = 0\n").is_err());
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
    }
}
