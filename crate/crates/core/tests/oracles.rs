//! Cross-checks against independently computed reference values.

use nalgebra::DMatrix;
use rabies_core::calibrate::{fit, mse, predict_incidence, FitConfig, FreeParam, IncidenceSeries};
use rabies_core::config::FitSpec;
use rabies_core::integrate::simulate;
use rabies_core::model::idx::*;
use rabies_core::optctl::{adjoint_rhs, hamiltonian, objective, AdjointVec, Weights};
use rabies_core::repro::{dfe, effective_r, endemic_eq, seeded_infection, spectral_r};
use rabies_core::sensitivity::{lhs_sample, prcc, rank, ParamRange};
use rabies_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Partial correlation of each column with `z` from the inverse of the
/// joint rank-correlation matrix: `r_iz = -P_iz / sqrt(P_ii P_zz)`.
fn prcc_by_precision_matrix(x: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
    let (n, p) = x.shape();
    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| rank(x.column(j).as_slice())).collect();
    cols.push(rank(z));
    let k = p + 1;
    let mean = |c: &[f64]| c.iter().sum::<f64>() / n as f64;
    let corr = DMatrix::from_fn(k, k, |a, b| {
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

#[test]
fn prcc_matches_precision_matrix_oracle() {
    let ranges: Vec<ParamRange> = (0..3)
        .map(|j| ParamRange::uniform(&format!("x{j}"), 0.0, 1.0))
        .collect();
    let x = lhs_sample(&ranges, 50, 99).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z: Vec<f64> = (0..50)
        .map(|i| x[(i, 0)].powi(2) - 0.5 * x[(i, 1)] + 0.3 * rng.random::<f64>())
        .collect();
    let got = prcc(&x, &z).unwrap();
    let want = prcc_by_precision_matrix(&x, &z);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-10, "{got:?} vs {want:?}");
    }
}

#[test]
fn prcc_null_case() {
    let ranges: Vec<ParamRange> = (0..4)
        .map(|j| ParamRange::uniform(&format!("x{j}"), 0.0, 1.0))
        .collect();
    let x = lhs_sample(&ranges, 1000, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let z: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
    for r in prcc(&x, &z).unwrap() {
        assert!(r.abs() < 0.1, "{r}");
    }
}

#[test]
fn adjoint_matches_finite_differences() {
    let p = ParamSet::estimated();
    let w = Weights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let y = StateVec(std::array::from_fn(|k| match k {
            S_H => rng.random_range(1e4..2e5),
            S_F | S_D => rng.random_range(1e3..2e4),
            M => rng.random_range(0.0..5.0),
            _ => rng.random_range(0.0..500.0),
        }));
        let lam = AdjointVec(std::array::from_fn(|_| rng.random_range(-20.0..20.0)));
        let u = ControlConst::new(
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.5),
        );
        let a = adjoint_rhs(&y, &lam, &u, &w, &p);
        for j in 0..12 {
            // Curvature in M lives on the scale M + C; elsewhere H is at
            // most bilinear in y.
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
            assert!(
                (a[j] - fd).abs() / scale < 1e-6,
                "component {j}: analytic {} vs fd {fd}",
                a[j]
            );
        }
    }
}

#[test]
fn control_cost_integrates_exactly() {
    let p = ParamSet::estimated();
    let grid = TimeGrid::new(0.0, 3.0, 300).unwrap();
    let traj = simulate(&p, ControlConst::zero(), &seeded_infection(&p), &grid).unwrap();
    let w = Weights {
        a2: 2.0,
        ..Weights::default()
    };
    let base = objective(&traj, &ControlPath::zeros(grid), &w).unwrap();
    let with_u2 = objective(
        &traj,
        &ControlPath::constant(grid, ControlConst::new(0.0, 1.0, 0.0, 0.0)),
        &w,
    )
    .unwrap();
    assert!((with_u2 - base - 3.0).abs() < 1e-9 * base.abs().max(1.0));
}

#[test]
fn closed_form_re_equals_spectral_radius_on_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..25 {
        let mut p = ParamSet::estimated();
        for name in ParamSet::NAMES {
            let v = p.get(name).unwrap();
            p.set(name, v * rng.random_range(0.5..1.5)).unwrap();
        }
        if p.validate().is_err() {
            continue;
        }
        let u = ControlConst::new(
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.5),
        );
        let a = effective_r(&p, &u).Re;
        let b = spectral_r(&p, &u).unwrap();
        assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-300), "{a} vs {b}");
    }
}

#[test]
fn endemic_state_is_a_rest_point() {
    let p = ParamSet::estimated();
    let e = endemic_eq(&p, &ControlConst::zero()).unwrap();
    let f = model::rhs(0.0, &e, &ControlConst::zero(), &p);
    assert!(f.sup_norm() < 1e-8 * e.sup_norm(), "{f:?}");
    assert!(e[I_H] > 0.0 && e[I_D] > 0.0);
}

#[test]
fn dfe_is_a_rest_point() {
    for p in [ParamSet::estimated(), ParamSet::baseline()] {
        let f = model::rhs(0.0, &dfe(&p), &ControlConst::zero(), &p);
        assert!(f.sup_norm() < 1e-9);
    }
}

#[test]
fn euler_prediction_converges_to_rk4_at_first_order() {
    let p = ParamSet::estimated();
    let y0 = seeded_infection(&p);
    let years: Vec<i32> = (2000..=2010).collect();
    let grid = TimeGrid::new(0.0, 10.0, 10_000).unwrap();
    let reference = simulate(&p, ControlConst::zero(), &y0, &grid).unwrap();
    let err = |dt: f64| {
        let pred = predict_incidence(&p, &y0, &years, dt).unwrap();
        pred.iter()
            .enumerate()
            .map(|(k, v)| (v - reference.at(k as f64)[I_H]).abs())
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (err(0.02), err(0.01));
    let ratio = e1 / e2;
    assert!(e2 < e1 && (1.6..2.4).contains(&ratio), "{e1} {e2} {ratio}");
}

#[test]
fn fit_recovers_theta1() {
    let truth = ParamSet::estimated();
    let y0 = seeded_infection(&truth);
    let years: Vec<i32> = (1990..=2018).collect();
    let cases = predict_incidence(&truth, &y0, &years, 0.01).unwrap();
    let data = IncidenceSeries::new(years, cases).unwrap();
    let start = 1.5 * truth.theta1;
    let cfg = FitConfig {
        free: vec![FreeParam {
            name: "theta1".into(),
            lo: start / 10.0,
            hi: start * 10.0,
            x0: Some(start),
        }],
        ..FitConfig::default()
    };
    let r = fit(&data, &cfg, &truth, &y0).unwrap();
    let est = r.estimate("theta1").unwrap();
    assert!((est / truth.theta1 - 1.0).abs() < 0.05, "{est}");
    assert_eq!(r.predicted.len(), 29);
}

#[test]
fn fit_improves_on_bundled_series() {
    let p = ParamSet::estimated();
    let y0 = seeded_infection(&p);
    let data = FitSpec::default().load_series().unwrap();
    let free = ["theta1", "tau1", "beta1"]
        .iter()
        .map(|n| {
            let v = p.get(n).unwrap();
            FreeParam {
                name: n.to_string(),
                lo: v / 10.0,
                hi: v * 10.0,
                x0: Some(v),
            }
        })
        .collect();
    let cfg = FitConfig {
        free,
        ..FitConfig::default()
    };
    let at_start = mse(&data, &predict_incidence(&p, &y0, &data.years, cfg.dt).unwrap()).unwrap();
    let r = fit(&data, &cfg, &p, &y0).unwrap();
    assert!(r.mse < at_start, "{} vs {at_start}", r.mse);
}
