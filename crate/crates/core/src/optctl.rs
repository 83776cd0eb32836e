//! Optimal control of the rabies model via Pontryagin's principle: running
//! cost, Hamiltonian, adjoint system, pointwise control characterization and
//! the forward-backward sweep.
//!
//! The Hamiltonian uses the state equations exactly as [`crate::model::rhs`]
//! evaluates them, i.e. infection flows are `chi * S` with the susceptible
//! population included, so the adjoint system is `-dH/dy` of the same
//! dynamics the forward pass integrates.

use std::io::Write;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::control::{ControlPath, StrategyMask};
use crate::error::{Error, Result};
use crate::integrate::{rk4_backward, rk4_forward, AdjointTrajectory, TimeGrid, Trajectory};
use crate::model::{idx, rhs, sat, ControlConst, ParamSet, StateVec, N_STATE};

/// Adjoint variables `lam1..lam12`, ordered like [`StateVec`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdjointVec(pub [f64; N_STATE]);

impl AdjointVec {
    pub fn zeros() -> Self {
        AdjointVec([0.0; N_STATE])
    }
}

impl Index<usize> for AdjointVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for AdjointVec {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Objective weights. `k1..k6` weight `M, E_H, I_H, E_D, I_D` and (with a
/// minus sign) `S_D`; `a1..a4` are quadratic control costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    #[serde(rename = "K3")]
    pub k3: f64,
    #[serde(rename = "K4")]
    pub k4: f64,
    #[serde(rename = "K5")]
    pub k5: f64,
    #[serde(rename = "K6")]
    pub k6: f64,
    #[serde(rename = "A1")]
    pub a1: f64,
    #[serde(rename = "A2")]
    pub a2: f64,
    #[serde(rename = "A3")]
    pub a3: f64,
    #[serde(rename = "A4")]
    pub a4: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            k1: 1.0,
            k2: 1.0,
            k3: 1.0,
            k4: 1.0,
            k5: 1.0,
            k6: 0.01,
            a1: 50.0,
            a2: 50.0,
            a3: 50.0,
            a4: 50.0,
        }
    }
}

impl Weights {
    pub fn costs(&self) -> [f64; 4] {
        [self.a1, self.a2, self.a3, self.a4]
    }

    pub fn validate(&self) -> Result<()> {
        let ks = [self.k1, self.k2, self.k3, self.k4, self.k5, self.k6];
        if ks.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(Error::Config(format!("state weights must be >= 0, got {ks:?}")));
        }
        if self.costs().iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::Config(format!(
                "control costs must be > 0, got {:?}",
                self.costs()
            )));
        }
        Ok(())
    }
}

/// Integrand of the objective at one instant.
pub fn running_cost(y: &StateVec, u: &ControlConst, w: &Weights) -> f64 {
    use idx::*;
    let state = w.k1 * y[M] + w.k2 * y[E_H] + w.k3 * y[I_H] + w.k4 * y[E_D] + w.k5 * y[I_D]
        - w.k6 * y[S_D];
    let control = 0.5
        * (w.a1 * u.u1 * u.u1 + w.a2 * u.u2 * u.u2 + w.a3 * u.u3 * u.u3 + w.a4 * u.u4 * u.u4);
    state + control
}

/// Trapezoidal quadrature of the running cost.
pub fn objective(states: &Trajectory, u_path: &ControlPath, w: &Weights) -> Result<f64> {
    if states.grid != u_path.grid
        || states.states.len() != u_path.values.len()
        || states.states.len() != states.grid.n_nodes()
    {
        return Err(Error::Config(
            "objective: states and controls are not on the same grid".into(),
        ));
    }
    let h = states.grid.step();
    let vals: Vec<f64> = states
        .states
        .iter()
        .zip(&u_path.values)
        .map(|(y, u)| running_cost(y, u, w))
        .collect();
    let n = vals.len() - 1;
    let inner: f64 = vals[1..n].iter().sum();
    Ok(h * (0.5 * (vals[0] + vals[n]) + inner))
}

pub fn hamiltonian(
    y: &StateVec,
    lam: &AdjointVec,
    u: &ControlConst,
    w: &Weights,
    p: &ParamSet,
) -> f64 {
    let f = rhs(0.0, y, u, p);
    running_cost(y, u, w) + lam.0.iter().zip(f.0).map(|(l, fi)| l * fi).sum::<f64>()
}

/// `lam' = -dH/dy`, derived by hand. Finite-difference agreement with
/// [`hamiltonian`] is checked in the tests and the acceptance suite.
pub fn adjoint_rhs(
    y: &StateVec,
    lam: &AdjointVec,
    u: &ControlConst,
    w: &Weights,
    p: &ParamSet,
) -> AdjointVec {
    use idx::*;
    let l = &lam.0;
    let ch = u.human_factor();
    let cd = u.domestic_factor();
    let [dp1, dp2, dp3] = p.deterred_psi();
    let lm = sat(y[M], p.c);
    let dlm = p.c / ((y[M] + p.c) * (y[M] + p.c));

    let phi_h = p.tau1 * y[I_F] + p.tau2 * y[I_D] + p.tau3 * lm;
    let phi_f = p.kappa1 * y[I_F] + p.kappa2 * y[I_D] + p.kappa3 * lm;
    let phi_d = dp1 * y[I_F] + dp2 * y[I_D] + dp3 * lm;

    // Adjoint gaps across each infection flow S -> E.
    let gh = (l[E_H] - l[S_H]) * ch * y[S_H];
    let gf = (l[E_F] - l[S_F]) * y[S_F];
    let gd = (l[E_D] - l[S_D]) * cd * y[S_D];

    let out_h = p.mu1 + p.beta1 + p.beta2 + u.u4;
    let out_d = p.mu3 + p.gamma1 + p.gamma2 + u.u4;

    let mut dh = [0.0; N_STATE];
    dh[S_H] = (l[E_H] - l[S_H]) * ch * phi_h - l[S_H] * p.mu1;
    dh[E_H] = w.k2 - l[E_H] * out_h + l[I_H] * p.beta1 + l[R_H] * (p.beta2 + u.u4);
    dh[I_H] = w.k3 - l[I_H] * (p.sigma1 + p.mu1) + l[M] * p.nu1;
    dh[R_H] = l[S_H] * p.beta3 - l[R_H] * (p.beta3 + p.mu1);
    dh[S_F] = (l[E_F] - l[S_F]) * phi_f - l[S_F] * p.mu2;
    dh[E_F] = -l[E_F] * (p.mu2 + p.gamma) + l[I_F] * p.gamma;
    dh[I_F] = gh * p.tau1 + gf * p.kappa1 + gd * dp1 - l[I_F] * (p.mu2 + p.sigma2)
        + l[M] * p.nu2;
    dh[S_D] = -w.k6 + (l[E_D] - l[S_D]) * cd * phi_d - l[S_D] * p.mu3;
    dh[E_D] = w.k4 - l[E_D] * out_d + l[I_D] * p.gamma1 + l[R_D] * (p.gamma2 + u.u4);
    dh[I_D] = w.k5 + gh * p.tau2 + gf * p.kappa2 + gd * dp2 - l[I_D] * (p.mu3 + p.sigma3)
        + l[M] * p.nu3;
    dh[R_D] = l[S_D] * p.gamma3 - l[R_D] * (p.mu3 + p.gamma3);
    dh[M] = w.k1 + dlm * (gh * p.tau3 + gf * p.kappa3 + gd * dp3) - l[M] * p.mu4;

    AdjointVec(dh.map(|v| -v))
}

/// Pointwise minimizer of the Hamiltonian over `[0, 1]^4`, in the
/// closed form where each control's switching function is divided by its
/// cost weight and clamped. Masked-off controls are 0.
pub fn characterize_controls(
    y: &StateVec,
    lam: &AdjointVec,
    w: &Weights,
    p: &ParamSet,
    mask: StrategyMask,
) -> ControlConst {
    use idx::*;
    let l = &lam.0;
    let lm = sat(y[M], p.c);
    let [dp1, dp2, dp3] = p.deterred_psi();
    let human = (l[E_H] - l[S_H]) * (p.tau2 * y[I_D] + p.tau1 * y[I_F] + p.tau3 * lm) * y[S_H];
    let g = dp1 * y[I_F] + dp2 * y[I_D] + dp3 * lm;
    let domestic = (l[E_D] - l[S_D]) * g * y[S_D];
    let pep = y[E_H] * (l[E_H] - l[R_H]) + y[E_D] * (l[E_D] - l[R_D]);

    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let u = ControlConst {
        u1: clamp((human + domestic) / w.a1),
        u2: clamp(domestic / w.a2),
        u3: clamp(human / w.a3),
        u4: clamp(pep / w.a4),
    };
    mask.apply(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Weight of the newly characterized controls in each update.
    pub omega: f64,
    /// Stop once the sup-norm of the control update drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            omega: 0.5,
            tol: 1e-4,
            max_iter: 200,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::Config(format!("omega must be in (0, 1], got {}", self.omega)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub controls: ControlPath,
    /// States driven by `controls`.
    pub states: Trajectory,
    /// Adjoints along `states` under `controls`.
    pub adjoints: AdjointTrajectory,
    /// Objective after each forward pass; the last entry belongs to the
    /// returned controls.
    pub j_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm of the last control update.
    pub last_update: f64,
}

impl SweepResult {
    pub fn objective(&self) -> f64 {
        *self.j_history.last().expect("at least one forward pass")
    }

    /// CSV `t,u1,u2,u3,u4`.
    pub fn write_controls_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "u1", "u2", "u3", "u4"])?;
        for (t, u) in self.controls.grid.times().zip(&self.controls.values) {
            let mut row = vec![t.to_string()];
            row.extend(u.to_array().iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("<controls csv>", e))?;
        Ok(())
    }

    /// Largest gap between the returned controls and a fresh
    /// characterization on the returned states and adjoints.
    pub fn characterization_gap(&self, w: &Weights, p: &ParamSet) -> f64 {
        let fresh = characterized_path(&self.states, &self.adjoints, w, p, self.controls.mask);
        fresh.sup_distance(&self.controls)
    }
}

fn characterized_path(
    states: &Trajectory,
    adjoints: &AdjointTrajectory,
    w: &Weights,
    p: &ParamSet,
    mask: StrategyMask,
) -> ControlPath {
    ControlPath {
        grid: states.grid,
        values: states
            .states
            .iter()
            .zip(&adjoints.values)
            .map(|(y, l)| characterize_controls(y, l, w, p, mask))
            .collect(),
        mask,
    }
}

fn backward(
    p: &ParamSet,
    w: &Weights,
    states: &Trajectory,
    u: &ControlPath,
) -> Result<AdjointTrajectory> {
    rk4_backward(
        |y, l, uu| adjoint_rhs(y, l, uu, w, p),
        states,
        u,
        AdjointVec::zeros(),
    )
}

/// Forward-backward sweep: integrate the state with the current controls,
/// integrate the adjoint backward from `lam(tf) = 0`, characterize, and
/// relax `u <- (1 - omega) u + omega u*` until the update is below `tol`.
///
/// Exhausting `max_iter` is not an error; the result reports
/// `converged = false`.
pub fn forward_backward_sweep(
    p: &ParamSet,
    w: &Weights,
    y0: &StateVec,
    grid: &TimeGrid,
    mask: StrategyMask,
    cfg: &SweepConfig,
) -> Result<SweepResult> {
    p.validate()?;
    w.validate()?;
    cfg.validate()?;
    grid.validate()?;

    let mut u = ControlPath {
        mask,
        ..ControlPath::zeros(*grid)
    };
    let mut j_history = Vec::new();
    let mut best = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_update = f64::NAN;

    while iterations < cfg.max_iter {
        let states = rk4_forward(p, &u, y0, grid)?;
        let j = objective(&states, &u, w)?;
        j_history.push(j);
        best = best.min(j);
        if !j.is_finite() || j - best > 10.0 * best.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::SweepDivergence {
                iteration: iterations,
                objective: j,
                best,
            });
        }
        iterations += 1;

        if !mask.any() {
            let adjoints = backward(p, w, &states, &u)?;
            return Ok(SweepResult {
                controls: u,
                states,
                adjoints,
                j_history,
                iterations,
                converged: true,
                last_update: 0.0,
            });
        }

        let adjoints = backward(p, w, &states, &u)?;
        let target = characterized_path(&states, &adjoints, w, p, mask);
        let next = ControlPath {
            grid: *grid,
            values: u
                .values
                .iter()
                .zip(&target.values)
                .map(|(old, new)| {
                    let (o, n) = (old.to_array(), new.to_array());
                    ControlConst::from_array(std::array::from_fn(|j| {
                        ((1.0 - cfg.omega) * o[j] + cfg.omega * n[j]).clamp(0.0, 1.0)
                    }))
                })
                .collect(),
            mask,
        };
        last_update = next.sup_distance(&u);
        u = next;
        if last_update < cfg.tol {
            converged = true;
            break;
        }
    }

    let states = rk4_forward(p, &u, y0, grid)?;
    j_history.push(objective(&states, &u, w)?);
    let adjoints = backward(p, w, &states, &u)?;
    Ok(SweepResult {
        controls: u,
        states,
        adjoints,
        j_history,
        iterations,
        converged,
        last_update,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repro::seeded_infection;
    use idx::*;

    fn point() -> (StateVec, AdjointVec) {
        let y = StateVec([
            1.2e5, 300.0, 40.0, 800.0, 1.4e4, 60.0, 35.0, 1.3e4, 25.0, 12.0, 90.0, 0.4,
        ]);
        let lam = AdjointVec([
            0.3, 1.1, 0.9, 0.2, 0.05, 2.0, 4.0, -0.01, 1.7, 3.1, 0.4, 12.0,
        ]);
        (y, lam)
    }

    #[test]
    fn objective_trivial_cases() {
        let p = ParamSet::estimated();
        let grid = TimeGrid::new(0.0, 3.0, 30).unwrap();
        let y0 = crate::repro::dfe(&p);
        let traj = rk4_forward(&p, &ControlPath::zeros(grid), &y0, &grid).unwrap();
        let zero_w = Weights {
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            k4: 0.0,
            k5: 0.0,
            k6: 0.0,
            ..Weights::default()
        };
        assert_eq!(objective(&traj, &ControlPath::zeros(grid), &zero_w).unwrap(), 0.0);

        let mut constant = traj.clone();
        for s in &mut constant.states {
            s[I_H] = 7.0;
        }
        let w = Weights { k3: 1.0, ..zero_w };
        let j = objective(&constant, &ControlPath::zeros(grid), &w).unwrap();
        assert!((j - 21.0).abs() < 1e-12);

        let w = Weights { a2: 2.0, ..zero_w };
        let u2 = ControlPath::constant(grid, ControlConst::new(0.0, 1.0, 0.0, 0.0));
        assert!((objective(&traj, &u2, &w).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn objective_rejects_grid_mismatch() {
        let p = ParamSet::estimated();
        let grid = TimeGrid::new(0.0, 3.0, 30).unwrap();
        let traj = rk4_forward(&p, &ControlPath::zeros(grid), &crate::repro::dfe(&p), &grid).unwrap();
        let other = ControlPath::zeros(TimeGrid::new(0.0, 3.0, 31).unwrap());
        assert!(objective(&traj, &other, &Weights::default()).is_err());
    }

    #[test]
    fn hamiltonian_trivial_cases() {
        let p = ParamSet::estimated();
        let (y, _) = point();
        let u = ControlConst::new(0.2, 0.3, 0.1, 0.4);
        let w = Weights::default();
        assert_eq!(
            hamiltonian(&y, &AdjointVec::zeros(), &u, &w, &p),
            running_cost(&y, &u, &w)
        );
    }

    #[test]
    fn dh_du4_matches_formula() {
        let p = ParamSet::estimated();
        let (y, lam) = point();
        let w = Weights::default();
        let u4 = 0.4;
        let h = 1e-6;
        let at = |v: f64| hamiltonian(&y, &lam, &ControlConst::new(0.1, 0.2, 0.1, v), &w, &p);
        let fd = (at(u4 + h) - at(u4 - h)) / (2.0 * h);
        let want = w.a4 * u4 - (lam[E_H] - lam[R_H]) * y[E_H] - (lam[E_D] - lam[R_D]) * y[E_D];
        assert!((fd - want).abs() < 1e-6 * want.abs().max(1.0), "{fd} vs {want}");
    }

    #[test]
    fn adjoint_ih_component() {
        let p = ParamSet::estimated();
        let (y, lam) = point();
        let w = Weights::default();
        let a = adjoint_rhs(&y, &lam, &ControlConst::zero(), &w, &p);
        let want = -w.k3 + lam[I_H] * (p.sigma1 + p.mu1) - lam[M] * p.nu1;
        assert!((a[I_H] - want).abs() < 1e-12);
    }

    #[test]
    fn adjoint_vanishes_without_costs_or_costates() {
        let p = ParamSet::estimated();
        let (y, _) = point();
        let w = Weights {
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            k4: 0.0,
            k5: 0.0,
            k6: 0.0,
            ..Weights::default()
        };
        let a = adjoint_rhs(&y, &AdjointVec::zeros(), &ControlConst::zero(), &w, &p);
        assert!(a.0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn characterization_cases() {
        let p = ParamSet::estimated();
        let (y, _) = point();
        let w = Weights::default();
        let u = characterize_controls(&y, &AdjointVec::zeros(), &w, &p, StrategyMask::ALL);
        assert_eq!(u, ControlConst::zero());

        let mut lam = AdjointVec::zeros();
        lam[E_H] = 1e6;
        lam[E_D] = 1e6;
        let u = characterize_controls(&y, &lam, &w, &p, StrategyMask::ALL);
        assert_eq!(u.u4, 1.0);
        let u = characterize_controls(&y, &lam, &w, &p, StrategyMask::strategy('D').unwrap());
        assert_eq!((u.u3, u.u4), (0.0, 0.0));

        // u3 with only the tau1 * I_F * S_H term active, equal to 0.3.
        let mut q = p;
        q.tau2 = 0.0;
        q.tau3 = 0.0;
        let mut z = StateVec::zeros();
        z[S_H] = 1.0;
        z[I_F] = 0.3 / q.tau1;
        let mut lam = AdjointVec::zeros();
        lam[E_H] = 2.0;
        lam[S_H] = 1.0;
        let w1 = Weights { a3: 1.0, ..w };
        let u = characterize_controls(&z, &lam, &w1, &q, StrategyMask::ALL);
        assert!((u.u3 - 0.3).abs() < 1e-12, "{}", u.u3);
    }

    #[test]
    fn sweep_with_no_active_controls_is_one_pass() {
        let p = ParamSet::estimated();
        let grid = TimeGrid::new(0.0, 5.0, 500).unwrap();
        let r = forward_backward_sweep(
            &p,
            &Weights::default(),
            &seeded_infection(&p),
            &grid,
            StrategyMask::NONE,
            &SweepConfig::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!(r.controls.values.iter().all(|u| *u == ControlConst::zero()));
    }

    #[test]
    fn prohibitive_costs_give_negligible_controls() {
        let p = ParamSet::estimated();
        let grid = TimeGrid::new(0.0, 5.0, 500).unwrap();
        let w = Weights {
            a1: 1e10,
            a2: 1e10,
            a3: 1e10,
            a4: 1e10,
            ..Weights::default()
        };
        let r = forward_backward_sweep(
            &p,
            &w,
            &seeded_infection(&p),
            &grid,
            StrategyMask::ALL,
            &SweepConfig::default(),
        )
        .unwrap();
        assert!(r.converged);
        let max_u = r
            .controls
            .values
            .iter()
            .flat_map(|u| u.to_array())
            .fold(0.0, f64::max);
        assert!(max_u < 1e-6, "{max_u}");
        assert_eq!(*r.adjoints.values.last().unwrap(), AdjointVec::zeros());
    }

    #[test]
    fn sweep_config_validation() {
        assert!(SweepConfig { omega: 0.0, ..Default::default() }.validate().is_err());
        assert!(SweepConfig { omega: 1.5, ..Default::default() }.validate().is_err());
        assert!(SweepConfig { tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(SweepConfig::default().validate().is_ok());
    }
}
