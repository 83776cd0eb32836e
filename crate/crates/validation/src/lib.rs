//! Numbered acceptance checks for `rabies-core`.
//!
//! Each check returns an [`Outcome`] rather than panicking so a runner can
//! report every result, passing or not.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rabies_core::calibrate::{fit, predict_incidence, FitConfig, FreeParam, IncidenceSeries};
use rabies_core::integrate::simulate;
use rabies_core::model::{idx::*, rhs};
use rabies_core::optctl::{
    adjoint_rhs, forward_backward_sweep, hamiltonian, AdjointVec, SweepConfig, SweepResult,
    Weights,
};
use rabies_core::repro::{
    dfe, effective_r, endemic_eq, re_grid, seeded_infection, spectral_r, GridAxis,
};
use rabies_core::sensitivity::{lhs_sample, prcc, prcc_study, rank, uniform_ranges, ParamRange};
use rabies_core::{ControlConst, ParamSet, StateVec, StrategyMask, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub limit: Option<Duration>,
}

impl Outcome {
    pub fn line(&self) -> String {
        let limit = match self.limit {
            Some(l) => format!(" (limit {:.0?})", l),
            None => String::new(),
        };
        format!(
            "{} [{:>2}] {}: {} [{:.2?}{limit}]",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed
        )
    }
}

fn timed<F>(id: u32, name: &'static str, limit: Option<Duration>, f: F) -> Outcome
where
    F: FnOnce() -> Result<String, String>,
{
    let start = Instant::now();
    let r = f();
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match r {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if let Some(l) = limit {
        if elapsed > l {
            pass = false;
            detail.push_str("; over time limit");
        }
    }
    Outcome {
        id,
        name,
        pass,
        detail,
        elapsed,
        limit,
    }
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn check(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn default_grid() -> TimeGrid {
    TimeGrid::new(0.0, 20.0, 2000).expect("valid grid")
}

fn random_u(rng: &mut ChaCha8Rng, hi: f64) -> ControlConst {
    ControlConst::from_array(std::array::from_fn(|_| rng.random_range(0.0..hi)))
}

/// Every parameter scaled by an independent factor from `lo..hi`,
/// redrawn until the set is valid.
fn jittered(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ParamSet {
    loop {
        let mut p = ParamSet::estimated();
        for name in ParamSet::NAMES {
            let v = p.get(name).unwrap();
            p.set(name, v * rng.random_range(lo..hi)).unwrap();
        }
        if p.validate().is_ok() {
            return p;
        }
    }
}

pub fn dfe_residual() -> Outcome {
    timed(1, "DFE residual", secs(1), || {
        let p = ParamSet::estimated();
        let r = rhs(0.0, &dfe(&p), &ControlConst::zero(), &p).sup_norm();
        check(r < 1e-9, format!("|rhs(dfe)|_inf = {r:e}"))
    })
}

pub fn re_oracle() -> Outcome {
    timed(2, "closed-form Re vs spectral radius", secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let p = jittered(&mut rng, 0.5, 1.5);
            for u in [ControlConst::zero(), random_u(&mut rng, 0.5)] {
                let a = effective_r(&p, &u).Re;
                let b = spectral_r(&p, &u).map_err(|e| e.to_string())?;
                worst = worst.max((a - b).abs() / a.abs().max(f64::MIN_POSITIVE));
            }
        }
        check(worst <= 1e-8, format!("200 cases, worst relative gap {worst:e}"))
    })
}

/// Host exposed and infectious compartments.
const HOST_INFECTED: [usize; 6] = [E_H, I_H, E_F, I_F, E_D, I_D];

pub fn threshold_law() -> Outcome {
    timed(3, "threshold law", secs(120), || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = TimeGrid::new(0.0, 100.0, 10_000).unwrap();
        let (mut below, mut above) = (0, 0);
        let (mut fail_below, mut fail_above) = (0, 0);
        let (mut worst_decay, mut worst_gap): (f64, f64) = (0.0, 0.0);
        let mut errors = 0;
        while below + above < 50 {
            let mut p = jittered(&mut rng, 0.8, 1.25);
            // Spread Re across 1 by scaling all transmission rates together.
            let scale = (rng.random_range(0.2f64.ln()..2.0f64.ln())).exp();
            for name in ["tau1", "tau2", "tau3", "kappa1", "kappa2", "kappa3", "psi1", "psi2", "psi3"] {
                let v = p.get(name).unwrap();
                p.set(name, v * scale).unwrap();
            }
            let re = effective_r(&p, &ControlConst::zero()).Re;
            if (re - 1.0).abs() <= 0.05 {
                continue;
            }
            let Ok(tr) = simulate(&p, ControlConst::zero(), &seeded_infection(&p), &grid) else {
                errors += 1;
                continue;
            };
            let end = tr.final_state();
            if re < 1.0 {
                below += 1;
                let decay = HOST_INFECTED
                    .iter()
                    .map(|&k| end[k] / tr.max_of(k))
                    .fold(0.0, f64::max);
                worst_decay = worst_decay.max(decay);
                if decay >= 1e-6 {
                    fail_below += 1;
                }
            } else {
                above += 1;
                let Ok(e) = endemic_eq(&p, &ControlConst::zero()) else {
                    errors += 1;
                    fail_above += 1;
                    continue;
                };
                let gap = (0..12)
                    .map(|k| (end[k] - e[k]).abs() / e[k].abs())
                    .fold(0.0, f64::max);
                worst_gap = worst_gap.max(gap);
                if gap > 1e-3 {
                    fail_above += 1;
                }
            }
        }
        check(
            fail_below + fail_above + errors == 0,
            format!(
                "Re<1: {fail_below}/{below} fail (worst end/peak {worst_decay:.2e}); \
                 Re>1: {fail_above}/{above} fail (worst rel gap {worst_gap:.2e}); errors {errors}"
            ),
        )
    })
}

pub fn adjoint_fd() -> Outcome {
    timed(4, "adjoint vs finite differences", secs(5), || {
        let p = ParamSet::estimated();
        let w = Weights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let y = StateVec(std::array::from_fn(|k| match k {
                S_H => rng.random_range(1e4..2e5),
                S_F | S_D => rng.random_range(1e3..2e4),
                M => rng.random_range(0.0..5.0),
                _ => rng.random_range(0.0..500.0),
            }));
            let lam = AdjointVec(std::array::from_fn(|_| rng.random_range(-20.0..20.0)));
            let u = random_u(&mut rng, 0.5);
            let a = adjoint_rhs(&y, &lam, &u, &w, &p);
            for j in 0..12 {
                let h = if j == M {
                    1e-3 * (y[M] + p.c)
                } else {
                    1e-3 * y[j].abs().max(1e-2)
                };
                let at = |d: f64| {
                    let mut yy = y;
                    yy[j] += d;
                    hamiltonian(&yy, &lam, &u, &w, &p)
                };
                let fd = -(at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
                let scale = a[j].abs().max(fd.abs()).max(1e-8);
                worst = worst.max((a[j] - fd).abs() / scale);
            }
        }
        check(worst < 1e-6, format!("1200 components, worst relative error {worst:e}"))
    })
}

/// Strategy A under default weights, grid and initial state.
pub fn strategy_sweep(mask: StrategyMask) -> Result<SweepResult, String> {
    let p = ParamSet::estimated();
    forward_backward_sweep(
        &p,
        &Weights::default(),
        &seeded_infection(&p),
        &default_grid(),
        mask,
        &SweepConfig::default(),
    )
    .map_err(|e| e.to_string())
}

pub fn sweep_convergence() -> (Outcome, Option<SweepResult>) {
    let mut kept = None;
    let o = timed(5, "sweep convergence (strategy A)", secs(120), || {
        let r = strategy_sweep(StrategyMask::strategy('A').unwrap())?;
        let gap = r.characterization_gap(&Weights::default(), &ParamSet::estimated());
        let ok = r.converged && r.iterations <= 200 && r.last_update < 1e-4 && gap <= 1e-3;
        let d = format!(
            "iterations {}, last update {:.2e}, characterization gap {:.2e}, J = {:.4}",
            r.iterations,
            r.last_update,
            gap,
            r.objective()
        );
        kept = Some(r);
        check(ok, d)
    });
    (o, kept)
}

pub fn strategy_a_effectiveness(sweep: Option<&SweepResult>) -> Outcome {
    timed(6, "strategy A effectiveness at t=5", None, || {
        let owned;
        let r = match sweep {
            Some(r) => r,
            None => {
                owned = strategy_sweep(StrategyMask::strategy('A').unwrap())?;
                &owned
            }
        };
        let p = ParamSet::estimated();
        let free = simulate(&p, ControlConst::zero(), &seeded_infection(&p), &default_grid())
            .map_err(|e| e.to_string())?;
        let ratio = |k: usize| r.states.at(5.0)[k] / free.at(5.0)[k];
        let (h, d) = (ratio(I_H), ratio(I_D));
        check(
            h <= 0.05 && d <= 0.05,
            format!(
                "I_H(5) ratio {h:.4}, I_D(5) ratio {d:.4} (controlled I_D(5) = {:.2})",
                r.states.at(5.0)[I_D]
            ),
        )
    })
}

pub fn monotonicity_grids() -> Outcome {
    timed(7, "Re monotonicity grids", secs(10), || {
        let p = ParamSet::estimated();
        let u0 = ControlConst::zero();
        let n = 20;
        let ctrl = |name: &str| GridAxis::new(name, 0.0, 1.0, n);
        let par = |name: &str| {
            let v = p.get(name).unwrap();
            GridAxis::new(name, 0.5 * v, 2.0 * v, n)
        };
        let cases = [
            (ctrl("u1"), ctrl("u2"), -1.0),
            (ctrl("u2"), ctrl("u4"), -1.0),
            (ctrl("u1"), ctrl("u4"), -1.0),
            (par("psi1"), par("psi2"), 1.0),
        ];
        let mut violations = 0;
        let mut pairs = 0;
        for (a1, a2, dir) in &cases {
            let g = re_grid(&p, a1, a2, &u0).map_err(|e| e.to_string())?;
            for i in 0..n {
                for j in 0..n {
                    if i + 1 < n {
                        pairs += 1;
                        if dir * (g.at(i + 1, j) - g.at(i, j)) < 0.0 {
                            violations += 1;
                        }
                    }
                    if j + 1 < n {
                        pairs += 1;
                        if dir * (g.at(i, j + 1) - g.at(i, j)) < 0.0 {
                            violations += 1;
                        }
                    }
                }
            }
        }
        check(
            violations == 0,
            format!("{violations} violations over {pairs} neighbour pairs on 4 grids"),
        )
    })
}

pub fn deterrence() -> Outcome {
    timed(8, "deterrence lowers domestic peaks", None, || {
        let p = ParamSet::estimated();
        let mut q = p;
        q.rho1 *= 2.0;
        q.rho2 *= 2.0;
        q.rho3 *= 2.0;
        let run = |p: &ParamSet| {
            simulate(p, ControlConst::zero(), &seeded_infection(p), &default_grid())
                .map_err(|e| e.to_string())
        };
        let (a, b) = (run(&p)?, run(&q)?);
        let (e0, e1) = (a.max_of(E_D), b.max_of(E_D));
        let (i0, i1) = (a.max_of(I_D), b.max_of(I_D));
        check(
            e1 < e0 && i1 < i0,
            format!("peak E_D {e0:.3} -> {e1:.3}, peak I_D {i0:.3} -> {i1:.3}"),
        )
    })
}

pub const PRCC_TIME: f64 = 20.0;

pub fn prcc_signs() -> Outcome {
    timed(9, "PRCC signs", secs(300), || {
        let p = ParamSet::estimated();
        let ranges = uniform_ranges(&p, 0.25);
        let outputs = ["I_H".to_string(), "M".to_string()];
        let study = prcc_study(
            &ranges,
            1000,
            2024,
            &outputs,
            &[PRCC_TIME],
            &p,
            &seeded_infection(&p),
            &default_grid(),
        )
        .map_err(|e| e.to_string())?;
        let expect: [(&str, &[&str], f64); 3] = [
            ("I_H", &["theta1", "tau1", "tau2", "kappa1", "kappa2"], 1.0),
            ("I_H", &["beta2", "rho1", "rho3", "gamma2"], -1.0),
            ("M", &["nu1", "nu2", "nu3"], 1.0),
        ];
        let mut wrong = Vec::new();
        let mut shown = Vec::new();
        for (out, names, sign) in expect {
            let r = study.results.iter().find(|r| r.output == out).unwrap();
            for name in names {
                let v = r.coefficient(0, name).unwrap();
                shown.push(format!("{out}/{name} {v:+.3}"));
                if !(sign * v > 0.05) {
                    wrong.push(format!("{out}/{name}"));
                }
            }
        }
        let mut d = format!("t={PRCC_TIME}, dropped {}: {}", study.dropped, shown.join(", "));
        if !wrong.is_empty() {
            d.push_str(&format!("; wrong or weak: {}", wrong.join(", ")));
        }
        check(wrong.is_empty(), d)
    })
}

/// Partial rank correlation read off the inverse of the joint rank
/// correlation matrix.
pub fn prcc_by_precision_matrix(x: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
    let (n, p) = x.shape();
    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| rank(x.column(j).as_slice())).collect();
    cols.push(rank(z));
    let mean = |c: &[f64]| c.iter().sum::<f64>() / n as f64;
    let corr = DMatrix::from_fn(p + 1, p + 1, |a, b| {
        let (ma, mb) = (mean(&cols[a]), mean(&cols[b]));
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for r in 0..n {
            let (da, db) = (cols[a][r] - ma, cols[b][r] - mb);
            sab += da * db;
            saa += da * da;
            sbb += db * db;
        }
        sab / (saa * sbb).sqrt()
    });
    let prec = corr.try_inverse().expect("invertible correlation matrix");
    (0..p)
        .map(|i| -prec[(i, p)] / (prec[(i, i)] * prec[(p, p)]).sqrt())
        .collect()
}

pub fn prcc_oracle() -> Outcome {
    timed(10, "PRCC vs precision-matrix oracle", None, || {
        let ranges: Vec<ParamRange> = (0..3)
            .map(|j| ParamRange::uniform(&format!("x{j}"), 0.0, 1.0))
            .collect();
        let x = lhs_sample(&ranges, 50, 10).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let z: Vec<f64> = (0..50)
            .map(|i| x[(i, 0)].powi(2) - 0.5 * x[(i, 1)] + 0.3 * rng.random::<f64>())
            .collect();
        let got = prcc(&x, &z).map_err(|e| e.to_string())?;
        let want = prcc_by_precision_matrix(&x, &z);
        let gap = got
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        check(gap < 1e-10, format!("max gap {gap:e}"))
    })
}

pub fn calibration_recovery() -> Outcome {
    timed(11, "calibration recovery", secs(60), || {
        let truth = ParamSet::estimated();
        let y0 = seeded_infection(&truth);
        let years: Vec<i32> = (1990..=2018).collect();
        let cases = predict_incidence(&truth, &y0, &years, 0.01).map_err(|e| e.to_string())?;
        let data = IncidenceSeries::new(years, cases).map_err(|e| e.to_string())?;
        let free = ["theta1", "tau1", "beta1"]
            .iter()
            .map(|n| {
                let x0 = 1.5 * truth.get(n).unwrap();
                FreeParam {
                    name: n.to_string(),
                    lo: x0 / 10.0,
                    hi: x0 * 10.0,
                    x0: Some(x0),
                }
            })
            .collect();
        let cfg = FitConfig {
            free,
            ..FitConfig::default()
        };
        let r = fit(&data, &cfg, &truth, &y0).map_err(|e| e.to_string())?;
        let errs: Vec<(String, f64)> = r
            .estimates
            .iter()
            .map(|e| (e.name.clone(), e.value / truth.get(&e.name).unwrap() - 1.0))
            .collect();
        let ok = errs.iter().all(|(_, e)| e.abs() < 0.05);
        let shown: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:+.2e}")).collect();
        check(
            ok,
            format!("relative errors {}; {} evals", shown.join(", "), r.evals),
        )
    })
}

pub fn integrator_order() -> Outcome {
    timed(12, "RK4 step-halving", None, || {
        let p = ParamSet::estimated();
        let y0 = seeded_infection(&p);
        let run = |n: usize| {
            simulate(&p, ControlConst::zero(), &y0, &TimeGrid::new(0.0, 20.0, n).unwrap())
                .map_err(|e| e.to_string())
        };
        let n = 250;
        let (a, b, c) = (run(n)?, run(2 * n)?, run(4 * n)?);
        // Scaled difference between two runs at the coarse nodes.
        let diff = |x: &rabies_core::Trajectory, y: &rabies_core::Trajectory, k: usize| {
            (0..=n)
                .map(|i| {
                    let (s, t) = (&x.states[i * k], &y.states[i * 2 * k]);
                    (0..12)
                        .map(|j| (s[j] - t[j]).abs() / (1.0 + t[j].abs()))
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (diff(&a, &b, 1), diff(&b, &c, 2));
        let ratio = e1 / e2;
        let negative = [&a, &b, &c]
            .iter()
            .any(|t| t.states.iter().any(|y| y.0.iter().any(|v| *v < -1e-6)));
        check(
            (10.0..=24.0).contains(&ratio) && !negative,
            format!(
                "h = {} -> {}: ratio {ratio:.2}; clamped {}, negative below -1e-6: {negative}",
                20.0 / n as f64,
                10.0 / n as f64,
                a.clamped + b.clamped + c.clamped
            ),
        )
    })
}

/// J for strategies A to D under the defaults; reported, not asserted.
pub fn strategy_ranking() -> Result<Vec<(char, f64)>, String> {
    ['A', 'B', 'C', 'D']
        .into_iter()
        .map(|s| Ok((s, strategy_sweep(StrategyMask::strategy(s).unwrap())?.objective())))
        .collect()
}

pub fn run_all() -> Vec<Outcome> {
    let (c5, sweep) = sweep_convergence();
    vec![
        dfe_residual(),
        re_oracle(),
        threshold_law(),
        adjoint_fd(),
        c5,
        strategy_a_effectiveness(sweep.as_ref()),
        monotonicity_grids(),
        deterrence(),
        prcc_signs(),
        prcc_oracle(),
        calibration_recovery(),
        integrator_order(),
    ]
}
