use nalgebra::DMatrix;
use proptest::prelude::*;
use rabies_core::calibrate::{mse, nelder_mead, FitConfig, FreeParam, IncidenceSeries};
use rabies_core::integrate::simulate;
use rabies_core::model::{idx::*, rhs};
use rabies_core::optctl::{forward_backward_sweep, SweepConfig, Weights};
use rabies_core::repro::{effective_r, seeded_infection};
use rabies_core::sensitivity::{lhs_sample, prcc, rank, ParamRange};
use rabies_core::*;

fn scaled_params(factors: &[f64]) -> ParamSet {
    let mut p = ParamSet::estimated();
    for (name, f) in ParamSet::NAMES.iter().zip(factors) {
        let v = p.get(name).unwrap();
        p.set(name, v * f).unwrap();
    }
    p
}

fn factors() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.7..1.3f64, ParamSet::NAMES.len())
}

fn state() -> impl Strategy<Value = StateVec> {
    prop::array::uniform12(0.0..1e4f64).prop_map(StateVec)
}

fn control() -> impl Strategy<Value = ControlConst> {
    prop::array::uniform4(0.0..=1.0f64).prop_map(ControlConst::from_array)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_compartments_do_not_go_negative(y in state(), zero in 0usize..12, u in control()) {
        let p = ParamSet::estimated();
        let mut y = y;
        y[zero] = 0.0;
        let d = rhs(0.0, &y, &u, &p);
        prop_assert!(d[zero] >= 0.0, "d{} = {}", StateVec::NAMES[zero], d[zero]);
    }

    #[test]
    fn population_balance(y in state(), u in control()) {
        let p = ParamSet::estimated();
        let d = rhs(0.0, &y, &u, &p);
        let dh = d[S_H] + d[E_H] + d[I_H] + d[R_H];
        let want = p.theta1 - p.mu1 * y.humans() - p.sigma1 * y[I_H];
        prop_assert!((dh - want).abs() <= 1e-9 * want.abs().max(1.0));
        let df = d[S_F] + d[E_F] + d[I_F];
        let want = p.theta2 - p.mu2 * y.free_range() - p.sigma2 * y[I_F];
        prop_assert!((df - want).abs() <= 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn trajectories_stay_non_negative(f in factors(), u in control()) {
        let p = scaled_params(&f);
        prop_assume!(p.validate().is_ok());
        let grid = TimeGrid::new(0.0, 10.0, 1000).unwrap();
        let tr = simulate(&p, u, &seeded_infection(&p), &grid).unwrap();
        prop_assert!(tr.states.iter().all(|y| y.0.iter().all(|v| *v >= 0.0)));
    }

    #[test]
    fn re_does_not_increase_with_controls(f in factors(), u in control(), j in 0usize..4, du in 0.0..0.5f64) {
        let p = scaled_params(&f);
        prop_assume!(p.validate().is_ok());
        let mut a = u.to_array();
        a[j] = (a[j] + du).min(1.0);
        let more = ControlConst::from_array(a);
        prop_assert!(effective_r(&p, &more).Re <= effective_r(&p, &u).Re * (1.0 + 1e-12));
    }

    #[test]
    fn lhs_one_sample_per_stratum(n in 2usize..60, seed in any::<u64>()) {
        let ranges = [ParamRange::uniform("a", -1.0, 3.0), ParamRange::uniform("b", 0.0, 1.0)];
        let x = lhs_sample(&ranges, n, seed).unwrap();
        for (j, r) in ranges.iter().enumerate() {
            let rabies_core::sensitivity::Distribution::Uniform { lo, hi } = r.distribution else {
                unreachable!()
            };
            let mut hits = vec![0usize; n];
            for i in 0..n {
                let s = ((x[(i, j)] - lo) / (hi - lo) * n as f64).floor() as usize;
                hits[s.min(n - 1)] += 1;
            }
            prop_assert!(hits.iter().all(|h| *h == 1), "{hits:?}");
        }
    }

    #[test]
    fn mse_ignores_joint_reordering(
        pairs in prop::collection::vec((0.0..1e3f64, 0.0..1e3f64), 1..30),
        seed in any::<u64>(),
    ) {
        let (obs, pred): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let years: Vec<i32> = (0..obs.len() as i32).collect();
        let a = mse(&IncidenceSeries::new(years.clone(), obs.clone()).unwrap(), &pred).unwrap();
        let mut idx: Vec<usize> = (0..obs.len()).collect();
        let mut s = seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let obs2: Vec<f64> = idx.iter().map(|&i| obs[i]).collect();
        let pred2: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        let b = mse(&IncidenceSeries::new(years, obs2).unwrap(), &pred2).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn nelder_mead_stays_in_bounds_and_improves(
        target in prop::array::uniform2(-8.0..8.0f64),
        start in prop::array::uniform2(-0.9..0.9f64),
    ) {
        let cfg = FitConfig {
            free: vec![
                FreeParam { name: "a".into(), lo: -1.0, hi: 1.0, x0: Some(start[0]) },
                FreeParam { name: "b".into(), lo: -1.0, hi: 1.0, x0: Some(start[1]) },
            ],
            max_evals: 400,
            ..FitConfig::default()
        };
        let f = |x: &[f64]| (x[0] - target[0]).powi(2) + 3.0 * (x[1] - target[1]).powi(2);
        let mut first = Vec::new();
        let r = nelder_mead(|x| { let v = f(x); if first.len() < 3 { first.push(v); } v }, &cfg).unwrap();
        let best_initial = first.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(r.fx <= best_initial);
        prop_assert!(r.x.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn prcc_invariant_under_monotone_maps_and_row_order(seed in any::<u64>(), shift in 1usize..39) {
        let ranges: Vec<ParamRange> = (0..3)
            .map(|j| ParamRange::uniform(&format!("x{j}"), -1.0, 1.0))
            .collect();
        let x = lhs_sample(&ranges, 40, seed).unwrap();
        let z: Vec<f64> = (0..40)
            .map(|i| x[(i, 0)] + 0.5 * x[(i, 1)].sin() + 0.1 * ((i * 7919) % 13) as f64)
            .collect();
        let base = prcc(&x, &z).unwrap();

        let cubed = x.map(|v| v * v * v);
        for j in 0..3 {
            prop_assert_eq!(rank(cubed.column(j).as_slice()), rank(x.column(j).as_slice()));
        }
        let z_exp: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let mapped = prcc(&cubed, &z_exp).unwrap();
        for (a, b) in base.iter().zip(&mapped) {
            prop_assert!((a - b).abs() < 1e-12);
        }

        let perm: Vec<usize> = (0..40).map(|i| (i + shift) % 40).collect();
        let xs = DMatrix::from_fn(40, 3, |i, j| x[(perm[i], j)]);
        let zs: Vec<f64> = perm.iter().map(|&i| z[i]).collect();
        let shuffled = prcc(&xs, &zs).unwrap();
        for (a, b) in base.iter().zip(&shuffled) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_controls_are_bounded_and_masked(bits in 0u8..16) {
        let p = ParamSet::estimated();
        let grid = TimeGrid::new(0.0, 2.0, 200).unwrap();
        let mask = StrategyMask::from_bits(bits);
        let r = forward_backward_sweep(
            &p, &Weights::default(), &seeded_infection(&p), &grid, mask, &SweepConfig::default(),
        ).unwrap();
        for u in &r.controls.values {
            for (j, v) in u.to_array().into_iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(&v));
                if !mask.is_active(j) {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
        prop_assert!(r.adjoints.values.last().unwrap().0.iter().all(|v| *v == 0.0));
        if r.converged {
            prop_assert!(r.characterization_gap(&Weights::default(), &p) <= 10.0 * 1e-4);
        }
    }
}
