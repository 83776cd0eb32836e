//! Parameters, state space and right-hand side of the twelve-compartment
//! rabies model: humans (S, E, I, R), free-range dogs (S, E, I), domestic
//! dogs (S, E, I, R) and the environmental virus concentration M.
//!
//! Time is measured in years throughout.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! param_set {
    ($($(#[$doc:meta])* $field:ident => $key:literal),* $(,)?) => {
        /// Rate constants of the model. Rates are per year; `rho*` are
        /// dimensionless deterrence factors and `c` is the half-saturation
        /// concentration of environmental virus (PFU/mL).
        ///
        /// JSON uses the symbol names (`"theta1"`, `"rho2"`, `"C"`). Missing
        /// keys fall back to [`ParamSet::estimated`]; unknown keys are rejected.
        #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct ParamSet {
            $($(#[$doc])* #[serde(rename = $key)] pub $field: f64,)*
        }

        impl ParamSet {
            /// Symbol names of every field, in declaration order.
            pub const NAMES: &'static [&'static str] = &[$($key),*];

            pub fn get(&self, name: &str) -> Option<f64> {
                match name {
                    $($key => Some(self.$field),)*
                    _ => None,
                }
            }

            pub fn get_mut(&mut self, name: &str) -> Option<&mut f64> {
                match name {
                    $($key => Some(&mut self.$field),)*
                    _ => None,
                }
            }

            fn values(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
                [$(($key, self.$field)),*].into_iter()
            }
        }
    };
}

param_set! {
    /// Human recruitment.
    theta1 => "theta1",
    /// Free-range dog recruitment.
    theta2 => "theta2",
    /// Domestic dog recruitment.
    theta3 => "theta3",
    tau1 => "tau1",
    tau2 => "tau2",
    tau3 => "tau3",
    kappa1 => "kappa1",
    kappa2 => "kappa2",
    kappa3 => "kappa3",
    psi1 => "psi1",
    psi2 => "psi2",
    psi3 => "psi3",
    rho1 => "rho1",
    rho2 => "rho2",
    rho3 => "rho3",
    /// E_H -> I_H.
    beta1 => "beta1",
    /// E_H -> R_H baseline recovery.
    beta2 => "beta2",
    /// R_H -> S_H waning.
    beta3 => "beta3",
    /// E_F -> I_F.
    gamma => "gamma",
    /// E_D -> I_D.
    gamma1 => "gamma1",
    /// E_D -> R_D baseline recovery.
    gamma2 => "gamma2",
    /// R_D -> S_D waning.
    gamma3 => "gamma3",
    mu1 => "mu1",
    mu2 => "mu2",
    mu3 => "mu3",
    /// Environmental virus decay.
    mu4 => "mu4",
    sigma1 => "sigma1",
    sigma2 => "sigma2",
    sigma3 => "sigma3",
    nu1 => "nu1",
    nu2 => "nu2",
    nu3 => "nu3",
    c => "C",
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::estimated()
    }
}

/// Named parameter presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Fitted values against Tanzanian incidence data.
    #[default]
    Estimated,
    /// Literature baseline values; interval entries take their lower end.
    Baseline,
}

impl Preset {
    pub fn params(self) -> ParamSet {
        match self {
            Preset::Estimated => ParamSet::estimated(),
            Preset::Baseline => ParamSet::baseline(),
        }
    }
}

impl ParamSet {
    pub fn estimated() -> Self {
        ParamSet {
            theta1: 1993.382113,
            theta2: 1004.12044,
            theta3: 1203.844461,
            tau1: 0.000405,
            tau2: 0.000604,
            tau3: 0.000303,
            kappa1: 0.000020,
            kappa2: 0.000081,
            kappa3: 0.000040,
            psi1: 0.000077,
            psi2: 0.000066,
            psi3: 0.000030,
            rho1: 9.920733,
            rho2: 8.116421,
            rho3: 14.917005,
            beta1: 0.165581,
            beta2: 0.540487,
            beta3: 0.999301,
            gamma: 0.166374,
            gamma1: 0.172489,
            gamma2: 0.090308,
            gamma3: 0.050128,
            mu1: 0.014417,
            mu2: 0.066268,
            mu3: 0.080129,
            mu4: 0.080625,
            sigma1: 1.006332,
            sigma2: 0.089556,
            sigma3: 0.091393,
            nu1: 0.001958,
            nu2: 0.008971,
            nu3: 0.005735,
            c: 0.003011,
        }
    }

    pub fn baseline() -> Self {
        ParamSet {
            theta1: 2000.0,
            theta2: 1000.0,
            theta3: 1200.0,
            tau1: 0.0004,
            tau2: 0.0004,
            tau3: 0.0003,
            kappa1: 0.00006,
            kappa2: 0.00005,
            kappa3: 0.00001,
            psi1: 0.0004,
            psi2: 0.0004,
            psi3: 0.0003,
            rho1: 10.0,
            rho2: 8.0,
            rho3: 15.0,
            beta1: 1.0 / 6.0,
            beta2: 0.54,
            beta3: 1.0,
            gamma: 1.0 / 6.0,
            gamma1: 1.0 / 6.0,
            gamma2: 0.09,
            gamma3: 0.05,
            mu1: 0.0142,
            mu2: 0.067,
            mu3: 0.067,
            mu4: 0.08,
            sigma1: 1.0,
            sigma2: 0.09,
            sigma3: 0.08,
            nu1: 0.001,
            nu2: 0.006,
            nu3: 0.001,
            c: 0.003,
        }
    }

    /// Normal (mean, standard deviation) pairs reported alongside the fitted
    /// values, keyed by symbol name.
    pub fn normal_moments(name: &str) -> Option<(f64, f64)> {
        let m = match name {
            "theta1" => (1996.691056, 4.4679553),
            "tau1" => (0.000402, 4e-6),
            "tau2" => (0.000502, 1.44e-4),
            "tau3" => (0.000302, 2e-6),
            "beta1" => (0.166124, 7.68e-4),
            "nu3" => (0.003367, 3.3348e-3),
            "beta2" => (0.5402435, 3.7815e-4),
            "beta3" => (0.9996505, 1.6521e-4),
            "mu1" => (0.014309, 1.53e-4),
            "sigma1" => (1.03166, 4.47e-3),
            "theta2" => (1002.060222, 2.913594),
            "kappa1" => (0.000040, 2.8e-5),
            "kappa2" => (0.000066, 2.2e-5),
            "kappa3" => (0.000025, 2.1e-5),
            "gamma" => (0.166520, 2.07e-4),
            "nu1" => (0.001479, 6.77e-4),
            "sigma2" => (0.089778, 3.14e-4),
            "mu4" => (0.080313, 4.42e-4),
            "mu2" => (0.066634, 1.58e-4),
            "theta3" => (1201.922230, 2.718444),
            "psi1" => (0.000238, 2.28e-4),
            "psi2" => (0.000233, 2.36e-4),
            "psi3" => (0.0003, 1.91e-4),
            "mu3" => (0.073565, 8.056e-3),
            "sigma3" => (0.085697, 8.056e-3),
            "gamma1" => (0.169578, 4.117e-3),
            "gamma2" => (0.090154, 2.18e-4),
            "gamma3" => (0.050128, 9.1e-5),
            "nu2" => (0.007485, 2.101e-3),
            "rho1" => (9.960366, 5.605e-2),
            "rho2" => (8.058211, 8.2322e-2),
            "rho3" => (14.958502, 5.8686e-2),
            "C" => (0.003005, 8.0e-6),
            _ => return None,
        };
        Some(m)
    }

    /// Checks strict positivity of every rate and recruitment above natural
    /// mortality in each host population.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.values() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        for (theta, mu, tn, mn) in [
            (self.theta1, self.mu1, "theta1", "mu1"),
            (self.theta2, self.mu2, "theta2", "mu2"),
            (self.theta3, self.mu3, "theta3", "mu3"),
        ] {
            if theta <= mu {
                return Err(Error::InvalidParams(format!(
                    "{tn} = {theta} must exceed {mn} = {mu}"
                )));
            }
        }
        Ok(())
    }

    /// Sets a parameter by symbol name.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        match self.get_mut(name) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(Error::Config(format!("unknown parameter '{name}'"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: ParamSet = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    /// Effective domestic-dog transmission coefficients `psi_i / (1 + rho_i)`.
    #[inline]
    pub fn deterred_psi(&self) -> [f64; 3] {
        [
            self.psi1 / (1.0 + self.rho1),
            self.psi2 / (1.0 + self.rho2),
            self.psi3 / (1.0 + self.rho3),
        ]
    }
}

/// Compartment indices into [`StateVec`].
pub mod idx {
    pub const S_H: usize = 0;
    pub const E_H: usize = 1;
    pub const I_H: usize = 2;
    pub const R_H: usize = 3;
    pub const S_F: usize = 4;
    pub const E_F: usize = 5;
    pub const I_F: usize = 6;
    pub const S_D: usize = 7;
    pub const E_D: usize = 8;
    pub const I_D: usize = 9;
    pub const R_D: usize = 10;
    pub const M: usize = 11;
}

pub const N_STATE: usize = 12;

/// The twelve compartments at one instant, ordered
/// `S_H, E_H, I_H, R_H, S_F, E_F, I_F, S_D, E_D, I_D, R_D, M`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVec(pub [f64; N_STATE]);

impl StateVec {
    pub const NAMES: [&'static str; N_STATE] = [
        "S_H", "E_H", "I_H", "R_H", "S_F", "E_F", "I_F", "S_D", "E_D", "I_D", "R_D", "M",
    ];

    pub fn zeros() -> Self {
        StateVec([0.0; N_STATE])
    }

    pub fn index_of(name: &str) -> Option<usize> {
        Self::NAMES.iter().position(|n| *n == name)
    }

    pub fn humans(&self) -> f64 {
        self.0[idx::S_H] + self.0[idx::E_H] + self.0[idx::I_H] + self.0[idx::R_H]
    }

    pub fn free_range(&self) -> f64 {
        self.0[idx::S_F] + self.0[idx::E_F] + self.0[idx::I_F]
    }

    pub fn domestic(&self) -> f64 {
        self.0[idx::S_D] + self.0[idx::E_D] + self.0[idx::I_D] + self.0[idx::R_D]
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.0) {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain(format!(
                    "state component {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Index<usize> for StateVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for StateVec {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Constant control intensities `u1..u4`, each in `[0, 1]`.
///
/// * `u1` health practice and surveillance,
/// * `u2` domestic dog vaccination,
/// * `u3` public awareness,
/// * `u4` post-exposure prophylaxis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConst {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
}

impl ControlConst {
    pub const NAMES: [&'static str; 4] = ["u1", "u2", "u3", "u4"];

    pub fn new(u1: f64, u2: f64, u3: f64, u4: f64) -> Self {
        ControlConst { u1, u2, u3, u4 }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(u: [f64; 4]) -> Self {
        ControlConst::new(u[0], u[1], u[2], u[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.u1, self.u2, self.u3, self.u4]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.to_array()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("control {name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// `max(0, 1 - u1 - u3)`, the factor multiplying human infection.
    #[inline]
    pub fn human_factor(&self) -> f64 {
        (1.0 - self.u1 - self.u3).max(0.0)
    }

    /// `max(0, 1 - u1 - u2)`, the factor multiplying domestic-dog infection.
    #[inline]
    pub fn domestic_factor(&self) -> f64 {
        (1.0 - self.u1 - self.u2).max(0.0)
    }
}

/// Per-capita infection pressures and the saturated environmental term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceTerms {
    pub chi1: f64,
    pub chi2: f64,
    pub chi3: f64,
    pub lam_m: f64,
}

impl fmt::Display for ForceTerms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "chi1={:.6e} chi2={:.6e} chi3={:.6e} lambda(M)={:.6}",
            self.chi1, self.chi2, self.chi3, self.lam_m
        )
    }
}

/// Saturating environmental response `M / (M + C)`.
pub fn saturation(m: f64, c: f64) -> Result<f64> {
    if !(m >= 0.0 && m.is_finite()) {
        return Err(Error::Domain(format!("concentration M must be >= 0, got {m}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("half-saturation C must be > 0, got {c}")));
    }
    Ok(m / (m + c))
}

#[inline]
pub(crate) fn sat(m: f64, c: f64) -> f64 {
    m / (m + c)
}

/// Infection pressures; `chi1` and `chi3` carry the clamped control factors.
pub fn force_terms(y: &StateVec, u: &ControlConst, p: &ParamSet) -> ForceTerms {
    let i_f = y[idx::I_F];
    let i_d = y[idx::I_D];
    let lam_m = sat(y[idx::M], p.c);
    let [dp1, dp2, dp3] = p.deterred_psi();
    ForceTerms {
        chi1: u.human_factor() * (p.tau1 * i_f + p.tau2 * i_d + p.tau3 * lam_m),
        chi2: p.kappa1 * i_f + p.kappa2 * i_d + p.kappa3 * lam_m,
        chi3: u.domestic_factor() * (dp1 * i_f + dp2 * i_d + dp3 * lam_m),
        lam_m,
    }
}

/// Time derivative of the state. The system is autonomous; `_t` is kept for
/// the usual `f(t, y)` shape.
pub fn rhs(_t: f64, y: &StateVec, u: &ControlConst, p: &ParamSet) -> StateVec {
    use idx::*;
    let ft = force_terms(y, u, p);
    let inf_h = ft.chi1 * y[S_H];
    let inf_f = ft.chi2 * y[S_F];
    let inf_d = ft.chi3 * y[S_D];

    let mut d = [0.0; N_STATE];
    d[S_H] = p.theta1 + p.beta3 * y[R_H] - p.mu1 * y[S_H] - inf_h;
    d[E_H] = inf_h - (p.mu1 + p.beta1 + p.beta2 + u.u4) * y[E_H];
    d[I_H] = p.beta1 * y[E_H] - (p.sigma1 + p.mu1) * y[I_H];
    d[R_H] = (p.beta2 + u.u4) * y[E_H] - (p.beta3 + p.mu1) * y[R_H];

    d[S_F] = p.theta2 - inf_f - p.mu2 * y[S_F];
    d[E_F] = inf_f - (p.mu2 + p.gamma) * y[E_F];
    d[I_F] = p.gamma * y[E_F] - (p.mu2 + p.sigma2) * y[I_F];

    d[S_D] = p.theta3 - p.mu3 * y[S_D] - inf_d + p.gamma3 * y[R_D];
    d[E_D] = inf_d - (p.mu3 + p.gamma1 + p.gamma2 + u.u4) * y[E_D];
    d[I_D] = p.gamma1 * y[E_D] - (p.mu3 + p.sigma3) * y[I_D];
    d[R_D] = (p.gamma2 + u.u4) * y[E_D] - (p.mu3 + p.gamma3) * y[R_D];

    d[M] = p.nu1 * y[I_H] + p.nu2 * y[I_F] + p.nu3 * y[I_D] - p.mu4 * y[M];
    StateVec(d)
}
