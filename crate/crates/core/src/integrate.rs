//! Fixed-step classical Runge-Kutta integration on a uniform grid: forward
//! for the state, backward for the adjoint. Both passes share one grid so
//! the forward-backward sweep can pair nodes directly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::model::{rhs, ControlConst, ParamSet, StateVec, N_STATE};
use crate::optctl::AdjointVec;

/// Values below this are an error rather than round-off.
pub const BLOWUP_THRESHOLD: f64 = -1e-6;
/// Undershoot between this and [`BLOWUP_THRESHOLD`] is clamped and counted.
pub const CLAMP_REPORT_THRESHOLD: f64 = -1e-9;

/// Default step, in years.
pub const DEFAULT_STEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t0: f64,
    pub tf: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, n_steps: usize) -> Result<Self> {
        let g = TimeGrid { t0, tf, n_steps };
        g.validate()?;
        Ok(g)
    }

    /// Grid over `[t0, tf]` whose step is as close to `h` as possible.
    pub fn with_step(t0: f64, tf: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("step must be > 0, got {h}")));
        }
        let n = ((tf - t0) / h).round().max(1.0) as usize;
        Self::new(t0, tf, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.tf.is_finite() && self.tf > self.t0) {
            return Err(Error::Config(format!(
                "grid needs finite tf > t0, got [{}, {}]",
                self.t0, self.tf
            )));
        }
        if self.n_steps < 1 {
            return Err(Error::Config("grid needs n_steps >= 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.tf - self.t0) / self.n_steps as f64
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.tf
        } else {
            self.t0 + i as f64 * self.step()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|i| self.time(i))
    }

    /// Index of the node nearest to `t` (clamped to the grid).
    pub fn nearest(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.step()).round();
        (k.max(0.0) as usize).min(self.n_steps)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 - 1e-12 && t <= self.tf + 1e-12
    }
}

/// Integrated state at every node of `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<StateVec>,
    /// Number of component values clamped from a small negative undershoot.
    pub clamped: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateVec {
        self.states.last().expect("trajectory has at least one node")
    }

    pub fn component(&self, idx: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[idx]).collect()
    }

    /// State at the node nearest to `t`.
    pub fn at(&self, t: f64) -> &StateVec {
        &self.states[self.grid.nearest(t)]
    }

    pub fn max_of(&self, idx: usize) -> f64 {
        self.states.iter().map(|s| s[idx]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with header `t,S_H,...,M`, one row per node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t"];
        header.extend(StateVec::NAMES);
        out.write_record(&header)?;
        for (t, s) in self.grid.times().zip(&self.states) {
            let mut row = Vec::with_capacity(N_STATE + 1);
            row.push(t.to_string());
            row.extend(s.0.iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
        Ok(())
    }
}

/// Adjoint values at every node, ordered like the state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub grid: TimeGrid,
    pub values: Vec<AdjointVec>,
}

impl AdjointTrajectory {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=N_STATE).map(|j| format!("lam{j}")));
        out.write_record(&header)?;
        for (t, l) in self.grid.times().zip(&self.values) {
            let mut row = Vec::with_capacity(N_STATE + 1);
            row.push(t.to_string());
            row.extend(l.0.iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("<adjoint csv>", e))?;
        Ok(())
    }
}

#[inline]
fn axpy(y: &[f64; N_STATE], a: f64, k: &[f64; N_STATE]) -> [f64; N_STATE] {
    std::array::from_fn(|j| y[j] + a * k[j])
}

fn check_grid(expected: &TimeGrid, got: &TimeGrid, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::Config(format!(
            "{what} grid {got:?} does not match integration grid {expected:?}"
        )));
    }
    Ok(())
}

/// Classical RK4 of the state equations. Controls at half steps are the
/// average of the adjacent nodes.
///
/// A component that falls below `-1e-6` aborts with
/// [`Error::IntegrationBlowup`]; smaller undershoots are clamped to zero.
pub fn rk4_forward(
    p: &ParamSet,
    u_path: &ControlPath,
    y0: &StateVec,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    grid.validate()?;
    y0.validate()?;
    check_grid(grid, &u_path.grid, "control")?;
    u_path.validate()?;

    let h = grid.step();
    let f = |y: &[f64; N_STATE], u: &ControlConst| rhs(0.0, &StateVec(*y), u, p).0;

    let mut states = Vec::with_capacity(grid.n_nodes());
    states.push(*y0);
    let mut clamped = 0;
    let mut y = y0.0;
    for i in 0..grid.n_steps {
        let u0 = &u_path.values[i];
        let um = u_path.midpoint(i);
        let u1 = &u_path.values[i + 1];

        let k1 = f(&y, u0);
        let k2 = f(&axpy(&y, 0.5 * h, &k1), &um);
        let k3 = f(&axpy(&y, 0.5 * h, &k2), &um);
        let k4 = f(&axpy(&y, h, &k3), u1);
        for j in 0..N_STATE {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            let v = y[j];
            if !v.is_finite() || v < BLOWUP_THRESHOLD {
                return Err(Error::IntegrationBlowup {
                    component: StateVec::NAMES[j],
                    value: v,
                    time: grid.time(i + 1),
                    step: h,
                });
            }
            if v < 0.0 {
                if v < CLAMP_REPORT_THRESHOLD {
                    clamped += 1;
                }
                y[j] = 0.0;
            }
        }
        states.push(StateVec(y));
    }
    Ok(Trajectory {
        grid: *grid,
        states,
        clamped,
    })
}

/// Convenience wrapper for a constant control.
pub fn simulate(
    p: &ParamSet,
    u: ControlConst,
    y0: &StateVec,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    rk4_forward(p, &ControlPath::constant(*grid, u), y0, grid)
}

/// Backward RK4 of an adjoint system `lam' = g(y, lam, u)` from `tf` to
/// `t0`, starting from `terminal`. States at half steps are linearly
/// interpolated between stored nodes.
pub fn rk4_backward<G>(
    adjoint_rhs: G,
    state_traj: &Trajectory,
    u_path: &ControlPath,
    terminal: AdjointVec,
) -> Result<AdjointTrajectory>
where
    G: Fn(&StateVec, &AdjointVec, &ControlConst) -> AdjointVec,
{
    let grid = state_traj.grid;
    check_grid(&grid, &u_path.grid, "control")?;
    if state_traj.states.len() != grid.n_nodes() || u_path.values.len() != grid.n_nodes() {
        return Err(Error::Config(
            "state trajectory or control path length does not match its grid".into(),
        ));
    }
    let h = grid.step();
    let g = |y: &StateVec, l: &[f64; N_STATE], u: &ControlConst| adjoint_rhs(y, &AdjointVec(*l), u).0;

    let mut values = vec![AdjointVec::zeros(); grid.n_nodes()];
    values[grid.n_steps] = terminal;
    let mut lam = terminal.0;
    for i in (0..grid.n_steps).rev() {
        let y_hi = &state_traj.states[i + 1];
        let y_lo = &state_traj.states[i];
        let y_mid = StateVec(std::array::from_fn(|j| 0.5 * (y_hi[j] + y_lo[j])));
        let u_hi = &u_path.values[i + 1];
        let u_lo = &u_path.values[i];
        let u_mid = u_path.midpoint(i);

        let k1 = g(y_hi, &lam, u_hi);
        let k2 = g(&y_mid, &axpy(&lam, -0.5 * h, &k1), &u_mid);
        let k3 = g(&y_mid, &axpy(&lam, -0.5 * h, &k2), &u_mid);
        let k4 = g(y_lo, &axpy(&lam, -h, &k3), u_lo);
        for j in 0..N_STATE {
            lam[j] -= h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            if !lam[j].is_finite() {
                return Err(Error::Numeric(format!(
                    "adjoint lam{} became non-finite at t = {}",
                    j + 1,
                    grid.time(i)
                )));
            }
        }
        values[i] = AdjointVec(lam);
    }
    Ok(AdjointTrajectory { grid, values })
}
