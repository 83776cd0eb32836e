//! Disease-free and endemic equilibria, the effective reproduction number
//! and its next-generation-matrix cross-check, linear stability of the
//! disease-free state, and R_e parameter grids.

use std::io::Write;

use nalgebra::linalg::balancing::balance_parlett_reinsch;
use nalgebra::{DMatrix, SMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{simulate, TimeGrid};
use crate::model::{idx, rhs, sat, ControlConst, ParamSet, StateVec, N_STATE};

/// Order of the infected subsystem: `E_H, I_H, E_F, I_F, E_D, I_D, M`.
pub const INFECTED: [usize; 7] = [
    idx::E_H,
    idx::I_H,
    idx::E_F,
    idx::I_F,
    idx::E_D,
    idx::I_D,
    idx::M,
];

pub type Mat7 = SMatrix<f64, 7, 7>;

/// New-infection (`f`) and transition (`v`) Jacobians at the disease-free
/// equilibrium, over [`INFECTED`].
#[derive(Debug, Clone, PartialEq)]
pub struct NgmPair {
    pub f: Mat7,
    pub v: Mat7,
}

/// Which new-infection Jacobian to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NgmMode {
    /// Direct dog-borne transmission only (no `M` column). This is the
    /// matrix the closed form [`effective_r`] diagonalizes.
    #[default]
    Direct,
    /// Adds the environmental column `d lambda(M)/dM = 1/C` at `M = 0`.
    /// Diagnostic only; it does not reduce to the closed form.
    WithEnvironment,
}

/// Intermediate quantities of the closed-form effective reproduction number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ReBreakdown {
    pub R21: f64,
    pub R23: f64,
    pub R31: f64,
    pub R33: f64,
    pub a3: f64,
    pub Re: f64,
}

/// Disease-free equilibrium: susceptibles at `theta_i / mu_i`, all else 0.
pub fn dfe(p: &ParamSet) -> StateVec {
    let mut y = StateVec::zeros();
    y[idx::S_H] = p.theta1 / p.mu1;
    y[idx::S_F] = p.theta2 / p.mu2;
    y[idx::S_D] = p.theta3 / p.mu3;
    y
}

/// Closed-form effective reproduction number.
///
/// The next-generation matrix reduces to the 2x2 block
/// `[[R21, R23], [R31, R33]]` over (free-range, domestic) exposed dogs and
/// `Re` is its dominant root.
pub fn effective_r(p: &ParamSet, u: &ControlConst) -> ReBreakdown {
    let cd = u.domestic_factor();
    let f_out = p.mu2 + p.gamma;
    let f_inf = p.sigma2 + p.mu2;
    let d_out = p.mu3 + p.gamma1 + p.gamma2 + u.u4;
    let d_inf = p.sigma3 + p.mu3;

    let a3 = p.gamma1 / (d_out * d_inf);
    let r21 = p.kappa1 * p.theta2 * p.gamma / (p.mu2 * f_out * f_inf);
    let r23 = p.kappa2 * p.theta2 * a3 / p.mu2;
    let r31 = cd * p.psi1 * p.theta3 * p.gamma / ((1.0 + p.rho1) * p.mu3 * f_out * f_inf);
    let r33 = cd * p.psi2 * p.theta3 * a3 / ((1.0 + p.rho2) * p.mu3);

    let disc = r21 * r21 - 2.0 * r33 * r21 + 4.0 * r31 * r23 + r33 * r33;
    assert!(
        disc >= -1e-12 * (r21 + r33).powi(2),
        "negative discriminant {disc} from non-negative inputs"
    );
    let re = (r33 + r21 + disc.max(0.0).sqrt()) / 2.0;
    ReBreakdown {
        R21: r21,
        R23: r23,
        R31: r31,
        R33: r33,
        a3,
        Re: re,
    }
}

/// Builds `F` and `V` at the disease-free equilibrium.
pub fn ngm_pair(p: &ParamSet, u: &ControlConst, mode: NgmMode) -> NgmPair {
    let ch = u.human_factor();
    let cd = u.domestic_factor();
    let [dp1, dp2, dp3] = p.deterred_psi();
    let s_h = p.theta1 / p.mu1;
    let s_f = p.theta2 / p.mu2;
    let s_d = p.theta3 / p.mu3;

    // Local indices into INFECTED.
    const EH: usize = 0;
    const IH: usize = 1;
    const EF: usize = 2;
    const IF: usize = 3;
    const ED: usize = 4;
    const ID: usize = 5;
    const M: usize = 6;

    let mut f = Mat7::zeros();
    f[(EH, IF)] = ch * p.tau1 * s_h;
    f[(EH, ID)] = ch * p.tau2 * s_h;
    f[(EF, IF)] = p.kappa1 * s_f;
    f[(EF, ID)] = p.kappa2 * s_f;
    f[(ED, IF)] = cd * dp1 * s_d;
    f[(ED, ID)] = cd * dp2 * s_d;
    if mode == NgmMode::WithEnvironment {
        f[(EH, M)] = ch * p.tau3 * s_h / p.c;
        f[(EF, M)] = p.kappa3 * s_f / p.c;
        f[(ED, M)] = cd * dp3 * s_d / p.c;
    }

    let mut v = Mat7::zeros();
    v[(EH, EH)] = p.mu1 + p.beta1 + p.beta2 + u.u4;
    v[(IH, EH)] = -p.beta1;
    v[(IH, IH)] = p.sigma1 + p.mu1;
    v[(EF, EF)] = p.mu2 + p.gamma;
    v[(IF, EF)] = -p.gamma;
    v[(IF, IF)] = p.mu2 + p.sigma2;
    v[(ED, ED)] = p.mu3 + p.gamma1 + p.gamma2 + u.u4;
    v[(ID, ED)] = -p.gamma1;
    v[(ID, ID)] = p.mu3 + p.sigma3;
    v[(M, IH)] = -p.nu1;
    v[(M, IF)] = -p.nu2;
    v[(M, ID)] = -p.nu3;
    v[(M, M)] = p.mu4;
    NgmPair { f, v }
}

fn spectral_abscissa_and_radius(m: DMatrix<f64>) -> Result<(f64, f64)> {
    let mut m = m;
    balance_parlett_reinsch(&mut m);
    let schur = m
        .try_schur(1e-14, 10_000)
        .ok_or_else(|| Error::Numeric("Schur decomposition did not converge".into()))?;
    let ev = schur.complex_eigenvalues();
    let abscissa = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let radius = ev.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok((abscissa, radius))
}

/// Spectral radius of `F V^-1` computed by eigen-decomposition.
pub fn spectral_r(p: &ParamSet, u: &ControlConst) -> Result<f64> {
    spectral_r_with(p, u, NgmMode::Direct)
}

pub fn spectral_r_with(p: &ParamSet, u: &ControlConst, mode: NgmMode) -> Result<f64> {
    let NgmPair { f, v } = ngm_pair(p, u, mode);
    let v_inv = v
        .try_inverse()
        .ok_or_else(|| Error::InvalidParams("transition matrix V is singular".into()))?;
    let k = f * v_inv;
    let (_, radius) = spectral_abscissa_and_radius(DMatrix::from_iterator(7, 7, k.iter().copied()))?;
    Ok(radius)
}

/// Finite-difference Jacobian of the right-hand side.
pub fn jacobian(y: &StateVec, u: &ControlConst, p: &ParamSet, rel_step: f64) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(N_STATE, N_STATE);
    for j in 0..N_STATE {
        let h = rel_step * y[j].abs().max(1.0);
        let mut hi = *y;
        let mut lo = *y;
        hi[j] += h;
        lo[j] -= h;
        let fh = rhs(0.0, &hi, u, p);
        let fl = rhs(0.0, &lo, u, p);
        for i in 0..N_STATE {
            jac[(i, j)] = (fh[i] - fl[i]) / (2.0 * h);
        }
    }
    jac
}

/// Largest real part among the eigenvalues of the Jacobian at the
/// disease-free equilibrium. Negative means locally stable.
pub fn dfe_stability(p: &ParamSet, u: &ControlConst) -> Result<f64> {
    let jac = jacobian(&dfe(p), u, p, 1e-6);
    let (abscissa, _) = spectral_abscissa_and_radius(jac)?;
    Ok(abscissa)
}

/// Per-capita forces of infection at an equilibrium: humans (before the
/// control factor), free-range dogs, domestic dogs (after it).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Forces {
    human: f64,
    free: f64,
    domestic: f64,
}

impl Forces {
    fn of(y: &StateVec, u: &ControlConst, p: &ParamSet) -> Self {
        let lm = sat(y[idx::M], p.c);
        let (i_f, i_d) = (y[idx::I_F], y[idx::I_D]);
        let [dp1, dp2, dp3] = p.deterred_psi();
        Forces {
            human: p.tau1 * i_f + p.tau2 * i_d + p.tau3 * lm,
            free: p.kappa1 * i_f + p.kappa2 * i_d + p.kappa3 * lm,
            domestic: u.domestic_factor() * (dp1 * i_f + dp2 * i_d + dp3 * lm),
        }
    }
}

/// Steady state of every compartment given fixed forces of infection.
fn equilibrium_given_forces(lam: Forces, u: &ControlConst, p: &ParamSet) -> StateVec {
    use idx::*;
    let mut y = StateVec::zeros();

    let f_h = u.human_factor() * lam.human;
    let out_h = p.mu1 + p.beta1 + p.beta2 + u.u4;
    let rec_h = (p.beta2 + u.u4) / (p.beta3 + p.mu1);
    if f_h > 0.0 {
        let e = p.theta1 / (out_h + p.mu1 * out_h / f_h - p.beta3 * rec_h);
        y[E_H] = e;
        y[S_H] = out_h * e / f_h;
    } else {
        y[S_H] = p.theta1 / p.mu1;
    }
    y[I_H] = p.beta1 * y[E_H] / (p.sigma1 + p.mu1);
    y[R_H] = rec_h * y[E_H];

    y[S_F] = p.theta2 / (p.mu2 + lam.free);
    y[E_F] = lam.free * y[S_F] / (p.mu2 + p.gamma);
    y[I_F] = p.gamma * y[E_F] / (p.mu2 + p.sigma2);

    let out_d = p.mu3 + p.gamma1 + p.gamma2 + u.u4;
    let rec_d = (p.gamma2 + u.u4) / (p.mu3 + p.gamma3);
    if lam.domestic > 0.0 {
        let e = p.theta3 / (out_d + p.mu3 * out_d / lam.domestic - p.gamma3 * rec_d);
        y[E_D] = e;
        y[S_D] = out_d * e / lam.domestic;
    } else {
        y[S_D] = p.theta3 / p.mu3;
    }
    y[I_D] = p.gamma1 * y[E_D] / (p.mu3 + p.sigma3);
    y[R_D] = rec_d * y[E_D];

    y[M] = (p.nu1 * y[I_H] + p.nu2 * y[I_F] + p.nu3 * y[I_D]) / p.mu4;
    y
}

/// Seed used for the long integration that initializes the endemic solver.
pub fn seeded_infection(p: &ParamSet) -> StateVec {
    let mut y = dfe(p);
    y[idx::E_F] = 20.0;
    y[idx::I_F] = 50.0;
    y[idx::E_D] = 20.0;
    y[idx::I_D] = 50.0;
    y[idx::M] = 0.1;
    y
}

pub const ENDEMIC_DAMPING: f64 = 0.5;
pub const ENDEMIC_MAX_ITER: usize = 10_000;

/// Endemic equilibrium.
///
/// A 200-year forward run from [`seeded_infection`] supplies the starting
/// forces of infection; a damped fixed-point iteration on those three forces
/// then converges, and every compartment is rebuilt from the steady-state
/// relations (`I_H = beta1 E_H / (sigma1 + mu1)`, `M = sum nu_i I_i / mu4`,
/// and so on).
pub fn endemic_eq(p: &ParamSet, u: &ControlConst) -> Result<StateVec> {
    p.validate()?;
    u.validate()?;
    let re = effective_r(p, u).Re;
    if re < 1.0 {
        return Err(Error::NoEndemicEquilibrium { re });
    }

    let grid = TimeGrid::new(0.0, 200.0, 20_000)?;
    let seed = simulate(p, *u, &seeded_infection(p), &grid)?;
    let mut lam = Forces::of(seed.final_state(), u, p);
    if lam.free <= 0.0 && lam.domestic <= 0.0 {
        return Err(Error::Numeric(
            "forward run died out; no endemic seed available".into(),
        ));
    }

    let mut converged = false;
    for _ in 0..ENDEMIC_MAX_ITER {
        let next = Forces::of(&equilibrium_given_forces(lam, u, p), u, p);
        let relaxed = Forces {
            human: ENDEMIC_DAMPING * lam.human + (1.0 - ENDEMIC_DAMPING) * next.human,
            free: ENDEMIC_DAMPING * lam.free + (1.0 - ENDEMIC_DAMPING) * next.free,
            domestic: ENDEMIC_DAMPING * lam.domestic + (1.0 - ENDEMIC_DAMPING) * next.domestic,
        };
        let delta = [
            (relaxed.human - lam.human, lam.human),
            (relaxed.free - lam.free, lam.free),
            (relaxed.domestic - lam.domestic, lam.domestic),
        ]
        .iter()
        .map(|(d, v)| d.abs() / v.abs().max(1e-300))
        .fold(0.0, f64::max);
        lam = relaxed;
        if delta < 1e-15 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "endemic fixed-point iteration",
            iterations: ENDEMIC_MAX_ITER,
        });
    }

    let y = equilibrium_given_forces(lam, u, p);
    let resid = rhs(0.0, &y, u, p).sup_norm();
    if !(resid < 1e-8 * y.sup_norm()) {
        return Err(Error::Numeric(format!(
            "endemic equilibrium residual {resid:e} too large"
        )));
    }
    Ok(y)
}

/// One axis of an R_e grid: a control (`u1`..`u4`) or a parameter name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn new(name: &str, lo: f64, hi: f64, n: usize) -> Self {
        GridAxis {
            name: name.to_string(),
            lo,
            hi,
            n,
        }
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.n <= 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
        }
    }

    fn validate(&self) -> Result<()> {
        let known = ControlConst::NAMES.contains(&self.name.as_str())
            || ParamSet::NAMES.contains(&self.name.as_str());
        if !known {
            return Err(Error::Config(format!("unknown grid axis '{}'", self.name)));
        }
        if self.n == 0 || !(self.lo.is_finite() && self.hi.is_finite()) || self.hi < self.lo {
            return Err(Error::Config(format!(
                "axis '{}' needs n >= 1 and finite lo <= hi",
                self.name
            )));
        }
        Ok(())
    }
}

fn apply_axis(name: &str, value: f64, p: &mut ParamSet, u: &mut ControlConst) -> Result<()> {
    match name {
        "u1" => u.u1 = value,
        "u2" => u.u2 = value,
        "u3" => u.u3 = value,
        "u4" => u.u4 = value,
        other => p.set(other, value)?,
    }
    Ok(())
}

/// R_e over the Cartesian product of two axes, row-major with `axis1` as
/// the slow index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReGrid {
    pub axis1: GridAxis,
    pub axis2: GridAxis,
    pub values: Vec<f64>,
}

impl ReGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.axis2.n + j]
    }

    /// CSV with header `axis1,axis2,Re`, one row per grid point.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["axis1", "axis2", "Re"])?;
        for i in 0..self.axis1.n {
            for j in 0..self.axis2.n {
                out.write_record([
                    self.axis1.value(i).to_string(),
                    self.axis2.value(j).to_string(),
                    self.at(i, j).to_string(),
                ])?;
            }
        }
        out.flush().map_err(|e| Error::io("<re grid csv>", e))?;
        Ok(())
    }
}

pub fn re_grid(
    p: &ParamSet,
    axis1: &GridAxis,
    axis2: &GridAxis,
    base_u: &ControlConst,
) -> Result<ReGrid> {
    axis1.validate()?;
    axis2.validate()?;
    let points: Vec<(usize, usize)> = (0..axis1.n)
        .flat_map(|i| (0..axis2.n).map(move |j| (i, j)))
        .collect();
    let values = points
        .par_iter()
        .map(|&(i, j)| {
            let mut pp = *p;
            let mut uu = *base_u;
            apply_axis(&axis1.name, axis1.value(i), &mut pp, &mut uu)?;
            apply_axis(&axis2.name, axis2.value(j), &mut pp, &mut uu)?;
            pp.validate()?;
            uu.validate()?;
            Ok(effective_r(&pp, &uu).Re)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ReGrid {
        axis1: axis1.clone(),
        axis2: axis2.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use idx::*;

    #[test]
    fn dfe_components() {
        let p = ParamSet::baseline();
        let y = dfe(&p);
        assert!((y[S_H] - 140_845.070_422_535_2).abs() < 1e-6);
        for j in [E_H, I_H, R_H, E_F, I_F, E_D, I_D, R_D, M] {
            assert_eq!(y[j], 0.0);
        }
        let r = rhs(0.0, &y, &ControlConst::zero(), &ParamSet::baseline());
        assert!(r.sup_norm() < 1e-9);
    }

    #[test]
    fn full_domestic_control_leaves_free_range_only() {
        let p = ParamSet::estimated();
        let b = effective_r(&p, &ControlConst::new(0.5, 0.5, 0.0, 0.0));
        assert_eq!(b.R31, 0.0);
        assert_eq!(b.R33, 0.0);
        assert!((b.Re - b.R21).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_spectral_radius_at_estimates() {
        let p = ParamSet::estimated();
        let u = ControlConst::zero();
        let re = effective_r(&p, &u).Re;
        let sr = spectral_r(&p, &u).unwrap();
        assert!((re - sr).abs() <= 1e-8 * re.max(1.0), "{re} vs {sr}");
    }

    #[test]
    fn re_decreases_with_vaccination() {
        let p = ParamSet::estimated();
        let mut last = f64::INFINITY;
        for k in 0..=9 {
            let re = effective_r(&p, &ControlConst::new(0.0, 0.1 * k as f64, 0.0, 0.0)).Re;
            assert!(re < last);
            last = re;
        }
    }

    #[test]
    fn zero_transmission_gives_zero_spectral_radius() {
        let mut p = ParamSet::estimated();
        for name in ["tau1", "tau2", "tau3", "kappa1", "kappa2", "kappa3", "psi1", "psi2", "psi3"] {
            p.set(name, 0.0).unwrap();
        }
        assert_eq!(spectral_r(&p, &ControlConst::zero()).unwrap(), 0.0);
    }

    #[test]
    fn full_pep_lowers_re() {
        let p = ParamSet::estimated();
        let r0 = spectral_r(&p, &ControlConst::zero()).unwrap();
        let r1 = spectral_r(&p, &ControlConst::new(0.0, 0.0, 0.0, 1.0)).unwrap();
        assert!(r1 < r0);
    }

    #[test]
    fn v_structure() {
        let NgmPair { v, .. } = ngm_pair(&ParamSet::estimated(), &ControlConst::zero(), NgmMode::Direct);
        for i in 0..7 {
            for j in 0..7 {
                if i != j {
                    assert!(v[(i, j)] <= 0.0, "V[{i},{j}] = {}", v[(i, j)]);
                }
            }
        }
        assert!(v.try_inverse().is_some());
    }

    #[test]
    fn environment_dominates_linear_invasion() {
        // With the fitted half-saturation constant, the environmental route
        // is far steeper at M = 0 than direct dog-to-dog transmission.
        let p = ParamSet::estimated();
        let u = ControlConst::zero();
        let direct = spectral_r(&p, &u).unwrap();
        let full = spectral_r_with(&p, &u, NgmMode::WithEnvironment).unwrap();
        assert!(full > 10.0 * direct, "{full} vs {direct}");
        assert!(dfe_stability(&p, &u).unwrap() > 0.0);
    }

    #[test]
    fn endemic_rejects_subthreshold() {
        let mut p = ParamSet::estimated();
        p.kappa1 *= 0.1;
        p.kappa2 *= 0.1;
        p.psi1 *= 0.1;
        p.psi2 *= 0.1;
        assert!(effective_r(&p, &ControlConst::zero()).Re < 1.0);
        assert!(matches!(
            endemic_eq(&p, &ControlConst::zero()),
            Err(Error::NoEndemicEquilibrium { .. })
        ));
    }

    #[test]
    fn endemic_closed_form_relations() {
        let p = ParamSet::estimated();
        let y = endemic_eq(&p, &ControlConst::zero()).unwrap();
        assert!(y.0.iter().all(|v| *v > 0.0));
        let want_if = p.gamma * y[E_F] / (p.mu2 + p.sigma2);
        assert!((y[I_F] - want_if).abs() < 1e-12 * want_if);
        let want_m = p.gamma1 * y[E_D] * p.nu3 / (p.mu4 * (p.mu3 + p.sigma3))
            + p.beta1 * y[E_H] * p.nu1 / (p.mu4 * (p.sigma1 + p.mu1))
            + p.gamma * y[E_F] * p.nu2 / (p.mu4 * (p.mu2 + p.sigma2));
        assert!((y[M] - want_m).abs() < 1e-12 * want_m);
        assert!(rhs(0.0, &y, &ControlConst::zero(), &p).sup_norm() < 1e-8 * y.sup_norm());
    }

    #[test]
    fn grid_degenerate_and_unknown_axis() {
        let p = ParamSet::estimated();
        let u = ControlConst::new(0.1, 0.2, 0.0, 0.3);
        let g = re_grid(&p, &GridAxis::new("u2", 0.2, 0.9, 1), &GridAxis::new("u4", 0.3, 1.0, 1), &u)
            .unwrap();
        assert_eq!(g.values, vec![effective_r(&p, &u).Re]);
        assert!(matches!(
            re_grid(&p, &GridAxis::new("zeta", 0.0, 1.0, 3), &GridAxis::new("u4", 0.0, 1.0, 3), &u),
            Err(Error::Config(_))
        ));
        assert!(re_grid(&p, &GridAxis::new("u1", 0.0, 1.5, 3), &GridAxis::new("u4", 0.0, 1.0, 3), &u)
            .is_err());
    }
}
