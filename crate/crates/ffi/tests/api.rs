use std::ffi::CStr;
use std::ptr;

use rabies_ffi::*;

fn last_error() -> String {
    let p = rabies_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn params_round_trip() {
    let p = rabies_params_new(1);
    assert!(!p.is_null());
    unsafe {
        let mut v = 0.0;
        assert_eq!(rabies_params_get(p, c"tau1".as_ptr(), &mut v), RabiesStatus::Ok);
        assert_eq!(v, 0.0004);
        assert_eq!(rabies_params_set(p, c"tau1".as_ptr(), 0.001), RabiesStatus::Ok);
        assert_eq!(rabies_params_get(p, c"tau1".as_ptr(), &mut v), RabiesStatus::Ok);
        assert_eq!(v, 0.001);
        assert_eq!(rabies_params_validate(p), RabiesStatus::Ok);
        assert_eq!(rabies_params_set(p, c"mu1".as_ptr(), -1.0), RabiesStatus::Ok);
        assert_eq!(rabies_params_validate(p), RabiesStatus::InvalidArgument);
        rabies_params_free(p);
    }
    assert!(rabies_params_new(7).is_null());
    assert!(last_error().contains("preset"));
}

#[test]
fn params_from_json() {
    unsafe {
        let p = rabies_params_from_json(cr#"{"tau1": 0.0007}"#.as_ptr());
        assert!(!p.is_null());
        let mut v = 0.0;
        rabies_params_get(p, c"tau1".as_ptr(), &mut v);
        assert_eq!(v, 0.0007);
        rabies_params_free(p);
        assert!(rabies_params_from_json(cr#"{"bogus": 1}"#.as_ptr()).is_null());
        assert!(rabies_params_from_json(ptr::null()).is_null());
    }
}

#[test]
fn null_pointers_are_reported() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(
            rabies_effective_r(ptr::null(), ptr::null(), &mut v),
            RabiesStatus::NullPointer
        );
        assert!(last_error().contains("params"));
        let p = rabies_params_new(0);
        assert_eq!(
            rabies_effective_r(p, ptr::null(), ptr::null_mut()),
            RabiesStatus::NullPointer
        );
        assert_eq!(rabies_dfe(p, ptr::null_mut()), RabiesStatus::NullPointer);
        rabies_params_free(p);
        rabies_params_free(ptr::null_mut());
        rabies_trajectory_free(ptr::null_mut());
        rabies_sweep_free(ptr::null_mut());
        assert_eq!(rabies_trajectory_len(ptr::null()), 0);
    }
}

#[test]
fn reproduction_numbers_agree() {
    let p = rabies_params_new(0);
    let u = [0.1, 0.2, 0.3, 0.4];
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        assert_eq!(rabies_effective_r(p, u.as_ptr(), &mut a), RabiesStatus::Ok);
        assert_eq!(rabies_spectral_r(p, u.as_ptr(), &mut b), RabiesStatus::Ok);
        assert!((a - b).abs() < 1e-8 * a);
        let bad = [1.5, 0.0, 0.0, 0.0];
        assert_eq!(
            rabies_effective_r(p, bad.as_ptr(), &mut a),
            RabiesStatus::InvalidArgument
        );
        rabies_params_free(p);
    }
}

#[test]
fn equilibria() {
    let p = rabies_params_new(0);
    let mut y = [0.0; 12];
    unsafe {
        assert_eq!(rabies_dfe(p, y.as_mut_ptr()), RabiesStatus::Ok);
        assert!(y[0] > 0.0 && y[2] == 0.0);
        assert_eq!(rabies_endemic_eq(p, ptr::null(), y.as_mut_ptr()), RabiesStatus::Ok);
        assert!(y[2] > 0.0);
        // Blocking domestic transmission leaves the free-range loop, which
        // is subcritical once kappa1 is cut.
        rabies_params_set(p, c"kappa1".as_ptr(), 0.00001);
        let u = [0.5, 0.5, 0.0, 0.0];
        assert_eq!(
            rabies_endemic_eq(p, u.as_ptr(), y.as_mut_ptr()),
            RabiesStatus::Numeric
        );
        rabies_params_free(p);
    }
}

#[test]
fn simulate_and_read_nodes() {
    let p = rabies_params_new(0);
    let mut y0 = [0.0; 12];
    unsafe {
        rabies_seeded_state(p, y0.as_mut_ptr());
        let mut tr = ptr::null_mut();
        assert_eq!(
            rabies_simulate(p, y0.as_ptr(), ptr::null(), 0.0, 1.0, 100, &mut tr),
            RabiesStatus::Ok
        );
        assert_eq!(rabies_trajectory_len(tr), 101);
        let (mut t, mut y) = (0.0, [0.0; 12]);
        assert_eq!(rabies_trajectory_node(tr, 0, &mut t, y.as_mut_ptr()), RabiesStatus::Ok);
        assert_eq!((t, y), (0.0, y0));
        assert_eq!(
            rabies_trajectory_node(tr, 101, &mut t, y.as_mut_ptr()),
            RabiesStatus::InvalidArgument
        );
        rabies_trajectory_free(tr);

        // A 5-year step blows up and leaves the output handle NULL.
        let mut tr = ptr::null_mut();
        y0[1] = 1000.0;
        assert_eq!(
            rabies_simulate(p, y0.as_ptr(), ptr::null(), 0.0, 20.0, 4, &mut tr),
            RabiesStatus::Numeric
        );
        assert!(tr.is_null());
        assert!(last_error().contains("blow-up"));
        rabies_params_free(p);
    }
}

#[test]
fn optimize_strategy_c() {
    let p = rabies_params_new(0);
    let mut y0 = [0.0; 12];
    unsafe {
        rabies_seeded_state(p, y0.as_mut_ptr());
        let mut s = ptr::null_mut();
        assert_eq!(
            rabies_optimize(p, y0.as_ptr(), 0.0, 5.0, 500, 0b1000, ptr::null(), &mut s),
            RabiesStatus::Ok
        );
        let (mut j, mut it, mut conv) = (0.0, 0usize, false);
        rabies_sweep_summary(s, &mut j, &mut it, &mut conv);
        assert!(conv && it > 1 && j.is_finite());
        assert_eq!(rabies_sweep_len(s), 501);
        let mut u = [0.0; 4];
        for i in 0..501 {
            rabies_sweep_node(s, i, ptr::null_mut(), ptr::null_mut(), u.as_mut_ptr());
            assert_eq!(&u[..3], &[0.0; 3]);
            assert!((0.0..=1.0).contains(&u[3]));
        }
        rabies_sweep_free(s);
        assert_eq!(
            rabies_optimize(p, y0.as_ptr(), 0.0, 5.0, 500, 0x10, ptr::null(), &mut s),
            RabiesStatus::InvalidArgument
        );
        rabies_params_free(p);
    }
}
