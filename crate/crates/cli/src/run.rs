//! Pipelines behind each subcommand. Every stage writes its CSV/JSON output
//! as soon as it is available, so a late failure keeps the earlier files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context as _, Result};
use dkam::attractor::*;
use dkam::aubry::*;
use dkam::export;
use dkam::flow::{integrate_hamiltonian, integrate_lagrangian};
use dkam::measures::*;
use dkam::model::{builtin, cohomology_shift, PhasePoint, TangentPoint};
use dkam::rng::StartSampler;
use dkam::value::*;
use dkam::{Field, Orbit, System};
use serde::Serialize;
use serde_json::json;

use crate::config::{ConfigError, FlowKindConfig, RunConfig, StartConfig};

/// Builds the system of the configuration at rate `lambda`. Systems with a
/// drift are solved in the cohomology-shifted coordinates, where the drift
/// is absorbed into the momentum.
pub fn build_system(cfg: &RunConfig, lambda: f64) -> dkam::Result<System> {
    let mut params = cfg.system.params.clone();
    params.lambda = lambda;
    let sys = builtin(&cfg.system.name, &params)?;
    if sys.drift.is_some() {
        cohomology_shift(&sys)
    } else {
        Ok(sys)
    }
}

pub struct Run {
    pub cfg: RunConfig,
    pub sys: System,
    pub out: PathBuf,
    pub files: Vec<String>,
}

pub struct Solved {
    pub u: Field,
    pub report: SolveReport,
}

#[derive(Serialize)]
struct ValueMeta {
    system: String,
    lambda: f64,
    grid: Vec<usize>,
    h: f64,
    tol: f64,
    converged: bool,
    iterations: usize,
    final_residual: f64,
    guaranteed_error: f64,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let sys = build_system(&cfg, cfg.system.params.lambda).map_err(|e| match e {
            dkam::Error::Config(msg) => anyhow::Error::new(ConfigError(format!("system: {msg}"))),
            other => other.into(),
        })?;
        let mut cfg = cfg;
        cfg.materialize(&sys)?;
        let out = cfg.output_dir.clone();
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { cfg, sys, out, files: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        let mut w = self.create(name)?;
        write(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {name}"))
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn grid(&self) -> Result<Grid> {
        Ok(TorusGrid::new(self.sys.dim(), &[self.cfg.grid.resolution.unwrap()])?)
    }

    fn cell_grid(&self) -> Result<BoxGrid<f64>> {
        let a = &self.cfg.attractor;
        let cells = [a.cells.unwrap()];
        Ok(BoxGrid::new(self.sys.dim(), a.p_max.unwrap(), &cells, &cells)?)
    }

    fn measure_grid(&self) -> Result<BoxGrid<f64>> {
        let m = &self.cfg.measures;
        let cells = [m.cells.unwrap()];
        Ok(BoxGrid::new(self.sys.dim(), m.v_max.unwrap(), &cells, &cells)?)
    }

    fn sampler(&self, stream: u64) -> StartSampler {
        // independent streams per stage, so adding starts in one stage does
        // not move the starts of another
        StartSampler::new(self.cfg.rng_seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    pub fn value(&mut self) -> Result<Solved> {
        let g = &self.cfg.grid;
        let mut opts = SolveOptions::new(g.h.unwrap(), self.cfg.solver.tol, self.cfg.solver.max_iter);
        opts.step.search = g.search.unwrap();
        opts.step.velocity_samples = g.velocity_samples.unwrap();
        let grid = self.grid()?;
        let result = solve_value_with(&self.sys, &grid, &opts);
        let report = match &result {
            Ok((_, r)) => r.clone(),
            Err(dkam::Error::NonConvergence(r)) => r.clone(),
            Err(_) => SolveReport::default(),
        };
        let meta = ValueMeta {
            system: self.cfg.system.name.clone(),
            lambda: self.sys.lambda,
            grid: grid.n[..grid.dim].to_vec(),
            h: opts.h,
            tol: opts.tol,
            converged: result.is_ok(),
            iterations: report.iterations,
            final_residual: report.final_residual,
            guaranteed_error: report.guaranteed_error,
        };
        self.json("value_meta.json", &meta)?;
        let (u, report) = result?;
        let du = gradient_field(&u);
        self.csv("value.csv", |w| export::write_value(w, &u))?;
        self.csv("gradient.csv", |w| export::write_gradient(w, &du))?;
        Ok(Solved { u, report })
    }

    pub fn flow(&mut self) -> Result<()> {
        let f = self.cfg.flow.clone();
        let dim = self.sys.dim();
        let mut starts: Vec<StartConfig> = f.starts.clone();
        let mut rng = self.sampler(1);
        for _ in 0..f.random_starts {
            let pp = rng.phase_point::<f64>(dim, f.y_max);
            starts.push(StartConfig { x: pp.x[..dim].to_vec(), y: pp.p[..dim].to_vec() });
        }
        let t_end = f.horizons.iter().copied().fold(0.0, f64::max);
        let orbits: Vec<Orbit> = starts
            .iter()
            .map(|s| match f.kind {
                FlowKindConfig::Hamiltonian => {
                    integrate_hamiltonian(&self.sys, &PhasePoint::new(dim, &s.x, &s.y), 0.0, t_end, f.dt)
                }
                FlowKindConfig::Lagrangian => {
                    integrate_lagrangian(&self.sys, &TangentPoint::new(dim, &s.x, &s.y), 0.0, t_end, f.dt)
                }
            })
            .collect::<dkam::Result<_>>()?;
        for (k, orbit) in orbits.iter().enumerate() {
            self.csv(&format!("trajectory_{k:03}.csv"), |w| export::write_trajectory(w, orbit))?;
        }
        let y = if f.kind == FlowKindConfig::Lagrangian { "v" } else { "p" };
        self.csv("flow_endpoints.csv", |w| {
            let mut cols = vec!["start".to_string(), "t".to_string()];
            cols.extend((0..dim).map(|i| format!("x{i}")));
            cols.extend((0..dim).map(|i| format!("{y}{i}")));
            writeln!(w, "{}", cols.join(","))?;
            for (k, orbit) in orbits.iter().enumerate() {
                for &t in &f.horizons {
                    let i = orbit.times.partition_point(|s| *s < t - 0.5 * orbit.dt).min(orbit.len() - 1);
                    let vals: Vec<String> = std::iter::once(&orbit.times[i])
                        .chain(&orbit.x[i][..dim])
                        .chain(&orbit.y[i][..dim])
                        .map(|v| format!("{v:.16e}"))
                        .collect();
                    writeln!(w, "{k},{}", vals.join(","))?;
                }
            }
            Ok(())
        })
    }

    pub fn aubry(&mut self, solved: &Solved) -> Result<AubryApprox<f64>> {
        let a = self.cfg.aubry.clone();
        let du = gradient_field(&solved.u);
        let sigma_opts = SigmaOptions { eps: a.sigma_eps.unwrap(), t_back: a.t_back.unwrap(), dt: a.sigma_dt.unwrap() };
        let (sigma, tail) = sigma_set(&self.sys, &solved.u, &du, &sigma_opts)?;
        let dim = self.sys.dim();
        self.csv("sigma.csv", |w| export::write_sigma(w, dim, &sigma))?;
        let grid = self.grid()?;
        let mut trap = TrapOptions::for_grid(&grid);
        trap.eps_graph = a.eps_graph.unwrap();
        trap.t_fwd = a.t_fwd.unwrap();
        trap.dt = a.trap_dt.unwrap();
        let approx = aubry_set(&self.sys, &grid, &sigma, sigma_opts.eps, tail, &trap)?;
        self.csv("aubry.csv", |w| export::write_aubry(w, dim, &approx.points))?;
        Ok(approx)
    }

    pub fn attractor(&mut self, solved: &Solved) -> Result<(CellSet<f64>, Attractor<f64>)> {
        let eps0 = *self.cfg.attractor.eps0.get_or_insert_with(|| default_eps0(&self.sys, &solved.u));
        let boxes = self.cell_grid()?;
        let z = z_partition(&self.sys, &solved.u, &boxes, eps0)?;
        self.csv("zsets.csv", |w| export::write_zsets(w, &z))?;
        let a = self.cfg.attractor.clone();
        let mut opts = CellMapOptions::new(a.tau.unwrap(), a.dt.unwrap());
        opts.max_refine = a.max_refine.unwrap();
        let att = maximal_attractor(&self.sys, &z, &opts)?;
        self.csv("attractor.csv", |w| export::write_cells(w, &att.cells))?;

        let dim = self.sys.dim();
        let starts = self.sampler(2).phase_points::<f64>(a.omega_starts.unwrap(), dim, a.p_max.unwrap());
        let omega_opts = OmegaOptions {
            t_transient: a.omega_transient.unwrap(),
            t_obs: a.omega_obs.unwrap(),
            cluster_eps: a.cluster_eps.unwrap(),
            dt: 0.01,
            momentum_only: false,
        };
        let reps = omega_limit(&self.sys, &starts, &omega_opts)?;
        self.csv("omega.csv", |w| export::write_points(w, dim, &reps))?;
        Ok((z, att))
    }

    pub fn measures(&mut self, solved: &Solved, aubry: &AubryApprox<f64>) -> Result<Vec<MeasureRecord>> {
        let m = self.cfg.measures.clone();
        let dim = self.sys.dim();
        let mut seeds = aubry_seeds(&self.sys, aubry, m.max_aubry_seeds.unwrap());
        seeds.extend(m.seeds.iter().map(|s| TangentPoint::new(dim, &s.x, &s.y)));
        let opts = MeasureOptions {
            t_burn: m.t_burn.unwrap(),
            t_obs: m.t_obs.unwrap(),
            dt: m.dt.unwrap(),
            tol_min: m.tol_min.unwrap(),
            ..MeasureOptions::for_lambda(self.sys.lambda)
        };
        let boxes = self.measure_grid()?;
        let measures = seeded_measures(&self.sys, &solved.u, &seeds, &boxes, &opts)?;
        let mut records = Vec::with_capacity(measures.len());
        let mut mather = CellSet::empty(boxes);
        for (k, sm) in measures.iter().enumerate() {
            self.csv(&format!("measure_{k:03}.csv"), |w| export::write_measure(w, &sm.measure))?;
            let tv = invariance_residual(&self.sys, &sm.measure, m.tau.unwrap(), 0.01)?;
            let minimizing = sm.functionals.action_defect <= opts.tol_min;
            if minimizing {
                for c in &sm.measure.cells {
                    mather.members[c.cell] = true;
                }
            }
            records.push(MeasureRecord {
                seed_x: sm.seed.x[..dim].to_vec(),
                seed_v: sm.seed.v[..dim].to_vec(),
                support_cells: sm.measure.cells.len(),
                functionals: sm.functionals,
                invariance_residual: tv,
                invariant: tv <= m.invariance_tol.unwrap(),
                minimizing,
            });
        }
        self.csv("mather.csv", |w| export::write_cells(w, &mather))?;
        let alpha_hat = 0.0 - records.iter().map(|r| r.functionals.action).fold(f64::INFINITY, f64::min);
        self.json(
            "measures.json",
            &json!({ "alpha_hat": alpha_hat, "mather_cells": mather.count(), "measures": &records }),
        )?;
        Ok(records)
    }

    pub fn limits(&mut self) -> Result<Vec<LimitStudyRow>> {
        let l = self.cfg.limits.clone();
        let m = &self.cfg.measures;
        let a = &self.cfg.aubry;
        let dim = self.sys.dim();
        let cells = [m.cells.unwrap()];
        let opts = LimitOptions {
            grid: TorusGrid::new(dim, &[l.resolution.unwrap()])?,
            h: l.h.unwrap(),
            tol: self.cfg.solver.tol,
            max_iter: self.cfg.solver.max_iter,
            measure_box: BoxGrid::new(dim, m.v_max.unwrap(), &cells, &cells)?,
            extra_seeds: m.seeds.iter().map(|s| TangentPoint::new(dim, &s.x, &s.y)).collect(),
            sigma_eps: a.sigma_eps.unwrap(),
            sigma_dt: a.sigma_dt.unwrap(),
            trap_dt: a.trap_dt.unwrap(),
            probe: l.probe.as_ref().map(|p| {
                let mut v = [0.0; dkam::MAX_DIM];
                v[..dim].copy_from_slice(p);
                v
            }),
        };
        let cfg = self.cfg.clone();
        let rows = limit_study(|lambda| build_system(&cfg, lambda), &l.lambdas, &opts)?;
        self.csv("limits.csv", |w| export::write_limits(w, &rows))?;
        self.json("limits.json", &rows)?;
        Ok(rows)
    }

    pub fn write_meta(
        &mut self,
        subcommand: &str,
        wall_time: f64,
        exit_code: i32,
        error: Option<String>,
    ) -> Result<()> {
        let meta = json!({
            "subcommand": subcommand,
            "config": &self.cfg,
            "versions": { "dkam": dkam::VERSION, "dkam-cli": env!("CARGO_PKG_VERSION") },
            "threads": rayon::current_num_threads(),
            "wall_time_seconds": wall_time,
            "exit_code": exit_code,
            "error": error,
            "outputs": &self.files,
        });
        let path = self.out.join("run_meta.json");
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        serde_json::to_writer_pretty(&mut w, &meta)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

type Grid = TorusGrid<f64>;

/// One seeded measure as reported in `measures.json`.
#[derive(Clone, Debug, Serialize)]
pub struct MeasureRecord {
    pub seed_x: Vec<f64>,
    pub seed_v: Vec<f64>,
    pub support_cells: usize,
    pub functionals: MeasureFunctionals<f64>,
    pub invariance_residual: f64,
    pub invariant: bool,
    pub minimizing: bool,
}
