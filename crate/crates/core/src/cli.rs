//! `rabictl` command-line front end.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::calibrate::{fit, mse, predict_incidence};
use crate::config::RunConfig;
use crate::control::StrategyMask;
use crate::error::{Error, Result};
use crate::integrate::simulate;
use crate::model::{ParamSet, StateVec};
use crate::optctl::forward_backward_sweep;
use crate::repro::{effective_r, re_grid, spectral_r_with};
use crate::sensitivity::prcc_study;

/// Env var naming the default output root.
pub const OUTDIR_ENV: &str = "RABICTL_OUTDIR";
const DEFAULT_OUTDIR: &str = "rabictl-out";

#[derive(Debug, Parser)]
#[command(name = "rabictl", version, about = "Rabies transmission model toolkit")]
pub struct Cli {
    /// JSON run configuration; defaults apply to anything it leaves out.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set parameters.tau1=0.0005`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Output root. Falls back to `output_dir` in the config, then to
    /// $RABICTL_OUTDIR, then to ./rabictl-out.
    #[arg(long, global = true)]
    pub outdir: Option<PathBuf>,

    /// Worker threads for grid and sampling work (default: all cores).
    #[arg(long, short, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Forward run with constant controls.
    Simulate,
    /// Effective reproduction number at a point or over a 2-D grid.
    Reff,
    /// Optimal control by forward-backward sweep.
    Optimize {
        /// A, B, C, D or a 4-digit mask such as 1010 (overrides the config).
        #[arg(long, short)]
        strategy: Option<StrategyMask>,
    },
    /// LHS/PRCC global sensitivity study.
    Prcc,
    /// Nelder-Mead fit to a yearly case series.
    Fit,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Reff => "reff",
            Command::Optimize { .. } => "optimize",
            Command::Prcc => "prcc",
            Command::Fit => "fit",
        }
    }
}

/// Outcome of a successful command.
#[derive(Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    /// Lines for the terminal.
    pub report: Vec<String>,
}

/// Runs `cli`, returning the directory holding its artifacts.
pub fn run(cli: &Cli) -> Result<RunOutput> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Command::Optimize { strategy: Some(s) } = &cli.command {
        cfg.controls.strategy = *s;
    }
    if let Some(d) = &cli.outdir {
        cfg.output_dir = Some(d.clone());
    }
    let root = cfg
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTDIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTDIR));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;

    // Validate everything before touching the filesystem.
    let p = cfg.params()?;
    cfg.grid.resolve()?;
    cfg.initial_state.resolve(&p)?;
    for fp in &mut cfg.fit.nelder_mead.free {
        if fp.x0.is_none() {
            fp.x0 = p.get(&fp.name);
        }
    }
    let name = cli.command.name();
    let mut out = Artifacts::new(run_dir(&root, name)?);
    let summary = pool.install(|| match &cli.command {
        Command::Simulate => cmd_simulate(&cfg, &p, &mut out),
        Command::Reff => cmd_reff(&cfg, &p, &mut out),
        Command::Optimize { .. } => cmd_optimize(&cfg, &p, &mut out),
        Command::Prcc => cmd_prcc(&cfg, &p, &mut out),
        Command::Fit => cmd_fit(&cfg, &p, &mut out),
    });
    let summary = match summary {
        Ok(s) => s,
        Err(e) => {
            // Leave no half-written run behind.
            let _ = std::fs::remove_dir_all(&out.dir);
            return Err(e);
        }
    };
    out.sidecar(name, &cfg, &p, summary)?;
    Ok(RunOutput {
        dir: out.dir,
        report: out.report,
    })
}

fn run_dir(root: &Path, command: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = root.join(format!("{command}-{stamp}"));
    let mut dir = base.clone();
    let mut k = 1;
    loop {
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                k += 1;
                dir = PathBuf::from(format!("{}-{k}", base.display()));
            }
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    report: Vec<String>,
}

impl Artifacts {
    fn new(dir: PathBuf) -> Self {
        Artifacts {
            dir,
            files: Vec::new(),
            report: Vec::new(),
        }
    }

    fn csv<F>(&mut self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(BufWriter<File>) -> Result<()>,
    {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write(BufWriter::new(f))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn say(&mut self, line: String) {
        self.report.push(line);
    }

    fn sidecar(&mut self, command: &str, cfg: &RunConfig, p: &ParamSet, summary: Value) -> Result<()> {
        let mut params = Map::new();
        for name in ParamSet::NAMES {
            params.insert(name.to_string(), json!(p.get(name)));
        }
        let y0 = cfg.initial_state.resolve(p)?;
        let doc = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "resolved": {
                "parameters": params,
                "initial_state": state_map(&y0),
                "grid": cfg.grid.resolve()?,
            },
            "artifacts": self.files,
            "summary": summary,
        });
        let path = self.dir.join("run.json");
        let text = serde_json::to_string_pretty(&doc)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn state_map(y: &StateVec) -> Map<String, Value> {
    StateVec::NAMES
        .iter()
        .zip(y.0)
        .map(|(n, v)| (n.to_string(), json!(v)))
        .collect()
}

fn cmd_simulate(cfg: &RunConfig, p: &ParamSet, out: &mut Artifacts) -> Result<Value> {
    let grid = cfg.grid.resolve()?;
    let y0 = cfg.initial_state.resolve(p)?;
    let traj = simulate(p, cfg.controls.constant, &y0, &grid)?;
    out.csv("trajectory.csv", |w| traj.write_csv(w))?;
    out.say(format!(
        "simulated {} steps to t = {}; clamped undershoots: {}",
        grid.n_steps, grid.tf, traj.clamped
    ));
    Ok(json!({
        "clamped": traj.clamped,
        "final_state": state_map(traj.final_state()),
    }))
}

fn cmd_reff(cfg: &RunConfig, p: &ParamSet, out: &mut Artifacts) -> Result<Value> {
    let u = cfg.controls.constant;
    u.validate()?;
    match cfg.reff.axes.as_slice() {
        [] => {
            let b = effective_r(p, &u);
            let spectral = spectral_r_with(p, &u, cfg.reff.mode)?;
            out.say(format!(
                "R21 = {}\nR23 = {}\nR31 = {}\nR33 = {}\na3 = {}\nRe = {}",
                b.R21, b.R23, b.R31, b.R33, b.a3, b.Re
            ));
            out.say(format!("spectral radius ({:?}) = {spectral}", cfg.reff.mode));
            Ok(json!({ "breakdown": b, "spectral_radius": spectral, "mode": cfg.reff.mode }))
        }
        [a1, a2] => {
            let g = re_grid(p, a1, a2, &u)?;
            out.csv("reff_grid.csv", |w| g.write_csv(w))?;
            let (lo, hi) = g
                .values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
            out.say(format!(
                "{} x {} grid over ({}, {}); Re in [{lo}, {hi}]",
                a1.n, a2.n, a1.name, a2.name
            ));
            Ok(json!({ "min": lo, "max": hi }))
        }
        other => Err(Error::Config(format!(
            "reff.axes must list 0 or 2 axes, got {}",
            other.len()
        ))),
    }
}

fn cmd_optimize(cfg: &RunConfig, p: &ParamSet, out: &mut Artifacts) -> Result<Value> {
    let grid = cfg.grid.resolve()?;
    let y0 = cfg.initial_state.resolve(p)?;
    let mask = cfg.controls.strategy;
    let r = forward_backward_sweep(p, &cfg.weights, &y0, &grid, mask, &cfg.sweep)?;
    out.csv("trajectory.csv", |w| r.states.write_csv(w))?;
    out.csv("adjoints.csv", |w| r.adjoints.write_csv(w))?;
    out.csv("controls.csv", |w| r.write_controls_csv(w))?;
    out.say(format!("strategy {mask}: J = {}", r.objective()));
    out.say(format!(
        "iterations = {}, converged = {}, last update = {:e}",
        r.iterations, r.converged, r.last_update
    ));
    Ok(json!({
        "strategy": mask,
        "J": r.objective(),
        "J_history": r.j_history,
        "iterations": r.iterations,
        "converged": r.converged,
        "last_update": r.last_update,
    }))
}

fn cmd_prcc(cfg: &RunConfig, p: &ParamSet, out: &mut Artifacts) -> Result<Value> {
    let s = &cfg.sensitivity;
    let grid = cfg.grid.resolve()?;
    let y0 = cfg.initial_state.resolve(p)?;
    let ranges = s.resolve_ranges(p)?;
    let study = prcc_study(&ranges, s.n, s.seed, &s.outputs, &s.times, p, &y0, &grid)?;
    for r in &study.results {
        out.csv(&format!("prcc_{}.csv", r.output), |w| r.write_csv(w))?;
    }
    out.say(format!(
        "{} samples, {} dropped, {} outputs x {} times",
        s.n,
        study.dropped,
        s.outputs.len(),
        s.times.len()
    ));
    Ok(json!({
        "n": s.n,
        "seed": s.seed,
        "dropped": study.dropped,
        "ranges": ranges,
    }))
}

fn cmd_fit(cfg: &RunConfig, p: &ParamSet, out: &mut Artifacts) -> Result<Value> {
    let data = cfg.fit.load_series()?;
    let y0 = cfg.initial_state.resolve(p)?;
    let nm = &cfg.fit.nelder_mead;
    let mut p_start = *p;
    for fp in &nm.free {
        if let Some(x0) = fp.x0 {
            p_start.set(&fp.name, x0)?;
        }
    }
    let start = predict_incidence(&p_start, &y0, &data.years, nm.dt)
        .and_then(|pred| mse(&data, &pred))?;
    let r = fit(&data, nm, p, &y0)?;
    out.csv("fit.csv", |w| r.write_csv(w))?;
    for e in &r.estimates {
        out.say(format!("{} = {}", e.name, e.value));
    }
    out.say(format!(
        "mse = {} (start {start}), evals = {}, converged = {}",
        r.mse, r.evals, r.converged
    ));
    Ok(json!({
        "estimates": r.estimates,
        "mse": r.mse,
        "mse_at_start": start,
        "evals": r.evals,
        "converged": r.converged,
    }))
}
