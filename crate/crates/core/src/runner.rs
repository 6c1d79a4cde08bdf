//! Subcommand implementations shared by the binary and the examples.
//!
//! Every command writes into `output.dir` only: the canonical config echo,
//! a JSON report carrying the config and its hash, and CSV series.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::config::LoadedConfig;
use crate::diagnostics::{estimate_lhs, estimate_rhs, write_series_csv};
use crate::dynamics::solve;
use crate::error::{Error, Result};
use crate::experiments::{
    consistency_experiment, existence_sweep, fit_exponent, uniqueness_experiment, ExponentFit, SweepReport,
};
use crate::mass::{regularize, resolving_grid, write_norm_table, NormRow};
use crate::selftest::{run_battery, CriterionOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Sweep,
    Uniqueness,
    Consistency,
    Mollifier,
    Selftest,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::Uniqueness => "uniqueness",
            Command::Consistency => "consistency",
            Command::Mollifier => "mollifier",
            Command::Selftest => "selftest",
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: String,
    /// False when a verdict failed or the run aborted part way.
    pub success: bool,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config_hash: &'a str,
    config: toml::Table,
    report: &'a T,
}

struct Output<'a> {
    dir: PathBuf,
    loaded: &'a LoadedConfig,
    command: Command,
    artifacts: Vec<PathBuf>,
}

impl<'a> Output<'a> {
    fn open(loaded: &'a LoadedConfig, command: Command) -> Result<Self> {
        let dir = loaded.config.output.dir.clone();
        std::fs::create_dir_all(&dir)?;
        let mut out = Self { dir, loaded, command, artifacts: Vec::new() };
        let echo = format!("# config_hash = {}\n{}", loaded.hash, loaded.canonical);
        out.write_text("config.toml", &echo)?;
        Ok(out)
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(format!("{}_{name}", self.command.name()));
        self.artifacts.push(p.clone());
        p
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.dir.join(name);
        std::fs::write(&p, text)?;
        self.artifacts.push(p);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, report: &T) -> Result<()> {
        let config: toml::Table = self.loaded.canonical.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let env = Envelope { command: self.command.name(), config_hash: &self.loaded.hash, config, report };
        let text = serde_json::to_string_pretty(&env)?;
        let p = self.path("report.json");
        std::fs::write(p, text)?;
        Ok(())
    }

    fn finish(self, summary: String, success: bool) -> RunOutcome {
        let mut summary = summary;
        summary.push_str(&format!("config hash {}\noutputs in {}\n", self.loaded.hash, self.dir.display()));
        RunOutcome { summary, success, artifacts: self.artifacts }
    }
}

pub fn run(command: Command, loaded: &LoadedConfig) -> Result<RunOutcome> {
    match command {
        Command::Solve => run_solve(loaded),
        Command::Sweep | Command::Uniqueness | Command::Consistency => run_sweep(command, loaded),
        Command::Mollifier => run_mollifier(loaded),
        Command::Selftest => run_selftest(loaded),
    }
}

#[derive(Debug, Serialize)]
struct SolveReport {
    epsilon: f64,
    grid: String,
    dt: f64,
    steps: usize,
    snapshots: usize,
    relative_energy_drift: f64,
    max_estimate_ratio: Vec<(String, f64)>,
}

fn run_solve(loaded: &LoadedConfig) -> Result<RunOutcome> {
    let cfg = &loaded.config;
    let setup = cfg.setup()?;
    let solver = cfg.solver()?;
    let eps = cfg.solve.epsilon;
    let mut out = Output::open(loaded, Command::Solve)?;
    let grid = Arc::new(resolving_grid(&setup.grid, eps, solver.max_count)?);
    let (u0, u1) = setup.data.sample(&grid)?;
    let m = regularize(&cfg.mass, eps, &grid, &setup.psi)?;
    let traj = solve(&u0, &u1, m.field(), &setup.op, solver.t_final, solver.time_step, solver.stride)?;
    traj.write_energy_csv(out.path("energy.csv"))?;
    traj.final_state().u.write_csv(out.path("u_final.csv"))?;

    let mut maxima = Vec::new();
    for flavor in cfg.flavors()? {
        let rhs = estimate_rhs(&u0, &u1, m.field(), &setup.op, flavor)?;
        let series = traj
            .snapshots
            .iter()
            .map(|s| Ok((s.state.t, estimate_lhs(&s.state, &setup.op)? / rhs)))
            .collect::<Result<Vec<_>>>()?;
        let name = flavor.name().to_lowercase();
        write_series_csv(&series, flavor.name(), &loaded.hash, out.path(&format!("ratio_{name}.csv")))?;
        maxima.push((flavor.name().to_string(), series.iter().map(|p| p.1).fold(0.0, f64::max)));
    }
    let report = SolveReport {
        epsilon: eps,
        grid: grid.describe(),
        dt: traj.dt,
        steps: traj.steps,
        snapshots: traj.snapshots.len(),
        relative_energy_drift: traj.relative_energy_drift(),
        max_estimate_ratio: maxima,
    };
    out.write_json(&report)?;
    let mut summary = format!(
        "solve at eps = {eps} on {}\n  dt = {:.4e}, {} steps, {} snapshots\n  relative energy drift {:.3e}\n",
        report.grid, report.dt, report.steps, report.snapshots, report.relative_energy_drift
    );
    for (f, r) in &report.max_estimate_ratio {
        summary.push_str(&format!("  max {f} ratio {r:.6e}\n"));
    }
    Ok(out.finish(summary, true))
}

fn run_sweep(command: Command, loaded: &LoadedConfig) -> Result<RunOutcome> {
    let cfg = &loaded.config;
    let setup = cfg.setup()?;
    let solver = cfg.solver()?;
    let net = cfg.net()?;
    let mut out = Output::open(loaded, command)?;
    let report: SweepReport = match command {
        Command::Sweep => existence_sweep(&cfg.mass, &setup, &net, &solver)?,
        Command::Uniqueness => uniqueness_experiment(&cfg.mass, cfg.uniqueness.perturbation, &setup, &net, &solver)?,
        Command::Consistency => consistency_experiment(&cfg.mass, &setup, &net, &solver, &cfg.reference())?,
        _ => unreachable!("not a sweep command"),
    };
    out.write_json(&report)?;
    report.write_records_csv(out.path("records.csv"))?;
    for v in &report.verdicts {
        let p = out.path(&format!("{}.csv", v.name));
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["epsilon", "value"])?;
        for (e, x) in &v.series {
            w.write_record([format!("{e:.12e}"), format!("{x:.12e}")])?;
        }
        w.flush()?;
    }
    let success = report.all_passed();
    Ok(out.finish(report.summary(), success))
}

#[derive(Debug, Serialize)]
struct MollifierReport {
    rows: Vec<NormRow>,
    fits: Vec<(f64, Option<ExponentFit>)>,
}

fn run_mollifier(loaded: &LoadedConfig) -> Result<RunOutcome> {
    let cfg = &loaded.config;
    let setup = cfg.setup()?;
    let net = cfg.net()?;
    let ps = cfg.mollifier_ps()?;
    let max_count = cfg.net.max_count;
    let mut out = Output::open(loaded, Command::Mollifier)?;
    let mut rows = Vec::new();
    for &eps in net.values() {
        match resolving_grid(&setup.grid, eps, max_count) {
            Ok(g) => {
                let m = regularize(&cfg.mass, eps, &Arc::new(g), &setup.psi)?;
                for &p in &ps {
                    rows.push(NormRow { epsilon: eps, p, norm: m.norm(p)?, resolved: true });
                }
            }
            Err(Error::Resolution { .. }) => {
                rows.extend(ps.iter().map(|&p| NormRow { epsilon: eps, p, norm: f64::NAN, resolved: false }))
            }
            Err(e) => return Err(e),
        }
    }
    write_norm_table(&rows, out.path("norms.csv"))?;
    let mut summary = format!("mollifier norms of {} over {} epsilons\n", cfg.mass.label(), net.len());
    let mut fits = Vec::new();
    for &p in &ps {
        let pairs: Vec<(f64, f64)> =
            rows.iter().filter(|r| r.p == p && r.resolved && r.norm > 0.0).map(|r| (r.epsilon, r.norm)).collect();
        let fit = fit_exponent(&pairs).ok();
        match &fit {
            Some(f) => summary.push_str(&format!(
                "  p = {p:<6} exponent {:+.4}  residual {:.2e}  ({} points)\n",
                f.slope, f.residual, f.points
            )),
            None => summary.push_str(&format!("  p = {p:<6} too few resolved positive norms for a fit\n")),
        }
        fits.push((p, fit));
    }
    out.write_json(&MollifierReport { rows, fits })?;
    Ok(out.finish(summary, true))
}

fn run_selftest(loaded: &LoadedConfig) -> Result<RunOutcome> {
    let mut out = Output::open(loaded, Command::Selftest)?;
    let (outcomes, _) = run_battery(|o| eprintln!("{}", o.line()));
    out.write_json(&outcomes)?;
    let summary: String = outcomes.iter().map(|o| format!("{}\n", o.line())).collect();
    let success = outcomes.iter().all(|o: &CriterionOutcome| o.passed);
    Ok(out.finish(summary, success))
}

/// Resolves the config path: explicit file or the built-in default.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig> {
    match path {
        Some(p) => LoadedConfig::from_path(p, overrides),
        None => LoadedConfig::from_str_with(crate::config::DEFAULT_CONFIG, overrides),
    }
}
