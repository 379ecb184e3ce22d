//! JSON run configuration. Every optional knob is filled in by
//! [`RunConfig::materialize`] so that `run_meta.json` echoes the values
//! actually used.

use std::fmt;
use std::path::{Path, PathBuf};

use dkam::attractor::default_box_bound;
use dkam::model::SystemParams;
use dkam::value::VelocitySearch;
use dkam::System;
use serde::{Deserialize, Serialize};

/// Invalid or unreadable configuration; the message names the field.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{field}: {msg}"))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub aubry: AubryConfig,
    #[serde(default)]
    pub attractor: AttractorConfig,
    #[serde(default)]
    pub measures: MeasuresConfig,
    #[serde(default)]
    pub limits: LimitsConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    pub params: SystemParams,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Nodes per axis; 512 in 1D, 64 in 2D.
    pub resolution: Option<usize>,
    /// Lax–Oleinik step; 0.01 in 1D, 0.05 in 2D.
    pub h: Option<f64>,
    pub velocity_samples: Option<usize>,
    pub search: Option<VelocitySearch>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 100_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKindConfig {
    Hamiltonian,
    Lagrangian,
}

/// Explicit start; `y` is a momentum or a velocity depending on the kind.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartConfig {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub dt: f64,
    /// Times at which end states are reported; trajectories run to the largest.
    pub horizons: Vec<f64>,
    pub kind: FlowKindConfig,
    pub starts: Vec<StartConfig>,
    /// Extra starts drawn from `rng_seed`, uniform in `[0, 2π)ⁿ × [−y_max, y_max]ⁿ`.
    pub random_starts: usize,
    pub y_max: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizons: vec![20.0],
            kind: FlowKindConfig::Hamiltonian,
            starts: Vec::new(),
            random_starts: 4,
            y_max: 2.0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AubryConfig {
    pub sigma_eps: Option<f64>,
    /// Backward horizon; `8/λ`.
    pub t_back: Option<f64>,
    pub sigma_dt: Option<f64>,
    pub t_fwd: Option<f64>,
    /// Trapping slack; two value-grid cells.
    pub eps_graph: Option<f64>,
    pub trap_dt: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttractorConfig {
    /// Momentum box half-width `P`.
    pub p_max: Option<f64>,
    /// Cells per axis; 256 in 1D, 32 in 2D.
    pub cells: Option<usize>,
    pub tau: Option<f64>,
    pub dt: Option<f64>,
    /// Z⁰ thickness; twice the value-solve consistency residual when absent.
    pub eps0: Option<f64>,
    pub max_refine: Option<usize>,
    pub omega_starts: Option<usize>,
    pub omega_transient: Option<f64>,
    pub omega_obs: Option<f64>,
    pub cluster_eps: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasuresConfig {
    pub t_burn: Option<f64>,
    pub t_obs: Option<f64>,
    pub dt: Option<f64>,
    pub tol_min: Option<f64>,
    /// Explicit tangent-side seeds, added to the Aubry seeds.
    pub seeds: Vec<StartConfig>,
    pub max_aubry_seeds: Option<usize>,
    /// Velocity box half-width.
    pub v_max: Option<f64>,
    /// Cells per axis; 64 in 1D, 32 in 2D.
    pub cells: Option<usize>,
    /// Push-forward time of the invariance residual.
    pub tau: Option<f64>,
    /// Measures with invariance residual at most this count as invariant.
    pub invariance_tol: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsConfig {
    /// Strictly decreasing discount rates.
    pub lambdas: Vec<f64>,
    /// Value grid of every run; the main grid when absent.
    pub resolution: Option<usize>,
    pub h: Option<f64>,
    /// Point at which `ū_λ` of each run is reported.
    pub probe: Option<Vec<f64>>,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        Self { lambdas: vec![0.4, 0.2, 0.1, 0.05], resolution: None, h: None, probe: None }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(&path.display().to_string(), e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        cfg.validate_system()?;
        Ok(cfg)
    }

    fn validate_system(&self) -> Result<(), ConfigError> {
        let lambda = self.system.params.lambda;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(bad("system.params.lambda", format!("must be positive and finite, got {lambda}")));
        }
        Ok(())
    }

    /// Fills every absent knob from the system and checks ranges.
    pub fn materialize(&mut self, sys: &System) -> Result<(), ConfigError> {
        let dim = sys.dim();
        let lambda = sys.lambda;
        let one_d = dim == 1;

        let g = &mut self.grid;
        let resolution = *g.resolution.get_or_insert(if one_d { 512 } else { 64 });
        let h = *g.h.get_or_insert(if one_d { 0.01 } else { 0.05 });
        g.velocity_samples.get_or_insert(12);
        g.search.get_or_insert(VelocitySearch::Exact);
        positive("grid.h", h)?;
        if resolution < 16 {
            return Err(bad("grid.resolution", format!("must be at least 16, got {resolution}")));
        }
        positive("solver.tol", self.solver.tol)?;
        if self.solver.max_iter == 0 {
            return Err(bad("solver.max_iter", "must be positive"));
        }

        positive("flow.dt", self.flow.dt)?;
        if self.flow.horizons.is_empty() {
            return Err(bad("flow.horizons", "needs at least one horizon"));
        }
        for t in &self.flow.horizons {
            positive("flow.horizons", *t)?;
        }
        positive("flow.y_max", self.flow.y_max)?;
        for (k, s) in self.flow.starts.iter().enumerate() {
            start_dims(&format!("flow.starts[{k}]"), s, dim)?;
        }

        let spacing = std::f64::consts::TAU / resolution as f64;
        let a = &mut self.aubry;
        positive("aubry.sigma_eps", *a.sigma_eps.get_or_insert(2e-2))?;
        positive("aubry.t_back", *a.t_back.get_or_insert(8.0 / lambda))?;
        positive("aubry.sigma_dt", *a.sigma_dt.get_or_insert(0.01))?;
        non_negative("aubry.t_fwd", *a.t_fwd.get_or_insert(50.0))?;
        positive("aubry.eps_graph", *a.eps_graph.get_or_insert(2.0 * spacing))?;
        positive("aubry.trap_dt", *a.trap_dt.get_or_insert(0.01))?;

        let at = &mut self.attractor;
        positive("attractor.p_max", *at.p_max.get_or_insert(default_box_bound(sys)))?;
        let cells = *at.cells.get_or_insert(if one_d { 256 } else { 32 });
        if cells < dkam::attractor::MIN_CELLS {
            return Err(bad(
                "attractor.cells",
                format!("must be at least {}, got {cells}", dkam::attractor::MIN_CELLS),
            ));
        }
        positive("attractor.tau", *at.tau.get_or_insert(5.0))?;
        positive("attractor.dt", *at.dt.get_or_insert(0.05))?;
        if let Some(e) = at.eps0 {
            non_negative("attractor.eps0", e)?;
        }
        at.max_refine.get_or_insert(8);
        at.omega_starts.get_or_insert(50);
        let transient = *at.omega_transient.get_or_insert((30.0 / lambda).max(5.0 / lambda));
        if transient < 5.0 / lambda {
            return Err(bad("attractor.omega_transient", format!("must be at least 5/lambda = {}", 5.0 / lambda)));
        }
        non_negative("attractor.omega_obs", *at.omega_obs.get_or_insert(5.0))?;
        positive("attractor.cluster_eps", *at.cluster_eps.get_or_insert(1e-3))?;

        let m = &mut self.measures;
        let t_burn = *m.t_burn.get_or_insert(10.0 / lambda);
        let t_obs = *m.t_obs.get_or_insert(20.0 / lambda);
        if t_burn < 5.0 / lambda * (1.0 - 1e-12) {
            return Err(bad("measures.t_burn", format!("must be at least 5/lambda = {}", 5.0 / lambda)));
        }
        if t_obs < 20.0 / lambda * (1.0 - 1e-12) {
            return Err(bad("measures.t_obs", format!("must be at least 20/lambda = {}", 20.0 / lambda)));
        }
        positive("measures.dt", *m.dt.get_or_insert(0.01))?;
        positive("measures.tol_min", *m.tol_min.get_or_insert(1e-2))?;
        m.max_aubry_seeds.get_or_insert(16);
        positive("measures.v_max", *m.v_max.get_or_insert(3.0))?;
        let mcells = *m.cells.get_or_insert(if one_d { 64 } else { 32 });
        if mcells < dkam::attractor::MIN_CELLS {
            return Err(bad(
                "measures.cells",
                format!("must be at least {}, got {mcells}", dkam::attractor::MIN_CELLS),
            ));
        }
        let tau = *m.tau.get_or_insert(1.0_f64.min(t_obs / 10.0));
        if !(tau > 0.0 && tau <= t_obs / 10.0) {
            return Err(bad("measures.tau", format!("must lie in (0, t_obs/10], got {tau}")));
        }
        positive("measures.invariance_tol", *m.invariance_tol.get_or_insert(0.15))?;
        for (k, s) in m.seeds.iter().enumerate() {
            start_dims(&format!("measures.seeds[{k}]"), s, dim)?;
        }

        let l = &mut self.limits;
        if l.lambdas.is_empty() || !l.lambdas.iter().all(|x| *x > 0.0 && x.is_finite()) {
            return Err(bad("limits.lambdas", "needs positive rates"));
        }
        if !l.lambdas.windows(2).all(|w| w[1] < w[0]) {
            return Err(bad("limits.lambdas", "must be strictly decreasing"));
        }
        l.resolution.get_or_insert(resolution);
        positive("limits.h", *l.h.get_or_insert(h))?;
        if let Some(p) = &l.probe {
            if p.len() != dim {
                return Err(bad("limits.probe", format!("needs {dim} coordinates")));
            }
        }
        Ok(())
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be non-negative and finite, got {v}")))
    }
}

fn start_dims(field: &str, s: &StartConfig, dim: usize) -> Result<(), ConfigError> {
    if s.x.len() != dim || s.y.len() != dim {
        return Err(bad(field, format!("needs {dim} coordinates in x and y")));
    }
    Ok(())
}
