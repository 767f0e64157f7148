use std::ffi::CStr;
use std::ptr;

use latfun_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(latfun_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn model(rho: f64, c: f64) -> *mut LatfunModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { latfun_model_two_user(rho, c, &mut m) }, LatfunStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn lattice_round_trip() {
    let gen = [1.0, 0.0, 0.0, 1.0];
    let mut lat = ptr::null_mut();
    unsafe {
        assert_eq!(latfun_lattice_new(gen.as_ptr(), 2, &mut lat), LatfunStatus::Ok);
        let x = [1.7, -2.2];
        let mut out = [0.0; 2];
        assert_eq!(latfun_lattice_nearest_point(lat, x.as_ptr(), 2, out.as_mut_ptr()), LatfunStatus::Ok);
        assert_eq!(out, [2.0, -2.0]);
        assert_eq!(latfun_lattice_mod(lat, x.as_ptr(), 2, out.as_mut_ptr()), LatfunStatus::Ok);
        assert!((out[0] + 0.3).abs() < 1e-12 && (out[1] + 0.2).abs() < 1e-12);

        let (mut g, mut se) = (0.0, 1.0);
        assert_eq!(latfun_lattice_nsm(lat, 1000, 1, &mut g, &mut se), LatfunStatus::Ok);
        assert!((g - 1.0 / 12.0).abs() < 1e-12);
        assert_eq!(se, 0.0);

        assert_eq!(
            latfun_lattice_nearest_point(lat, x.as_ptr(), 3, out.as_mut_ptr()),
            LatfunStatus::DimensionMismatch
        );
        assert!(!last_error().is_empty());
        latfun_lattice_free(lat);
    }
}

#[test]
fn hexagonal_moment() {
    let s = 3f64.sqrt() / 2.0;
    let gen = [1.0, 0.5, 0.0, s];
    let mut lat = ptr::null_mut();
    unsafe {
        assert_eq!(latfun_lattice_new(gen.as_ptr(), 2, &mut lat), LatfunStatus::Ok);
        let (mut g, mut se) = (0.0, 0.0);
        assert_eq!(latfun_lattice_nsm(lat, 200_000, 3, &mut g, &mut se), LatfunStatus::Ok);
        let exact = 5.0 / (36.0 * 3f64.sqrt());
        assert!(se > 0.0);
        assert!((g - exact).abs() < 4.0 * se, "{g} vs {exact} (se {se})");
        latfun_lattice_free(lat);
    }
}

#[test]
fn rejects_bad_input() {
    let mut lat = ptr::null_mut();
    unsafe {
        let singular = [1.0, 2.0, 2.0, 4.0];
        assert_eq!(latfun_lattice_new(singular.as_ptr(), 2, &mut lat), LatfunStatus::Singular);
        assert!(lat.is_null());
        assert_eq!(latfun_lattice_new(ptr::null(), 2, &mut lat), LatfunStatus::NullPointer);
        let mut big = vec![0.0; 81];
        for i in 0..9 {
            big[i * 10] = 1.0;
        }
        big[1] = 0.5;
        assert_eq!(latfun_lattice_new(big.as_ptr(), 9, &mut lat), LatfunStatus::Ok);
        let x = [0.2; 9];
        let mut out = [0.0; 9];
        assert_eq!(
            latfun_lattice_nearest_point(lat, x.as_ptr(), 9, out.as_mut_ptr()),
            LatfunStatus::Unsupported
        );
        latfun_lattice_free(lat);

        let mut out = 0.0;
        assert_eq!(latfun_lattice_min_sum(ptr::null(), 0.1, &mut out), LatfunStatus::NullPointer);
        let m = model(0.8, 0.8);
        assert_eq!(latfun_lattice_min_sum(m, -1.0, &mut out), LatfunStatus::OutOfRange);
        assert!(last_error().contains("distortion"));
        assert_eq!(latfun_lattice_min_sum(m, 0.1, &mut out), LatfunStatus::Ok);
        assert_eq!(last_error(), "");
        latfun_model_free(m);

        let mut m2 = ptr::null_mut();
        assert_eq!(latfun_model_two_user(1.5, 0.8, &mut m2), LatfunStatus::InvalidArgument);
        latfun_lattice_free(ptr::null_mut());
        latfun_model_free(ptr::null_mut());
    }
}

#[test]
fn rate_functions() {
    let m = model(0.8, 0.8);
    unsafe {
        let mut v = 0.0;
        assert_eq!(latfun_lattice_min_sum(m, 0.1, &mut v), LatfunStatus::Ok);
        assert!((v - 7.2f64.log2()).abs() < 1e-12);
        assert_eq!(latfun_bt_min_sum(m, 0.1, &mut v), LatfunStatus::Ok);
        assert!((v - 0.5 * 66.56f64.log2()).abs() < 1e-12);
        assert_eq!(latfun_bt_min_sum(m, 0.5, &mut v), LatfunStatus::Ok);
        assert_eq!(v, 0.0);

        let mut opt = LatfunBtOptimum {
            q1_star: 0.0,
            q2_star: 0.0,
            sum_rate: 0.0,
            regime: LatfunRegime::ZeroRate,
        };
        assert_eq!(latfun_bt_optimal_q(m, 0.1, &mut opt), LatfunStatus::Ok);
        assert_eq!(opt.regime, LatfunRegime::Interior);
        assert!((opt.q1_star - 0.0288 / 0.416).abs() < 1e-12);
        assert!((opt.q2_star - 0.036 / 0.2968).abs() < 1e-12);
        assert_eq!(latfun_bt_optimal_q(m, 0.3, &mut opt), LatfunStatus::Ok);
        assert_eq!(opt.regime, LatfunRegime::Q2Infinite);
        assert!(opt.q2_star.is_infinite());

        assert_eq!(latfun_sum_rate_gap(0.8, 0.8, 0.1, &mut v), LatfunStatus::Ok);
        assert!((v - (0.5 * 66.56f64.log2() - 7.2f64.log2())).abs() < 1e-12);

        let (mut lo, mut est, mut hi) = (0.0, 0.0, 0.0);
        assert_eq!(
            latfun_epi_sandwich(1.0 / 12.0, 1.0 / 12.0, 20_000, &mut lo, &mut est, &mut hi),
            LatfunStatus::Ok
        );
        assert!(lo < est && est < hi);
        assert!((est - 0.5 / std::f64::consts::LN_2).abs() < 1e-9);
        latfun_model_free(m);
    }
}

#[test]
fn simulation_is_deterministic() {
    let m = model(0.8, 0.8);
    unsafe {
        let mut a = LatfunSimReport::default();
        let mut b = LatfunSimReport::default();
        assert_eq!(latfun_simulate_two_user(m, 0.1, 0.06, 1, 2.0, 20_000, 4, &mut a), LatfunStatus::Ok);
        assert_eq!(latfun_simulate_two_user(m, 0.1, 0.06, 1, 2.0, 20_000, 4, &mut b), LatfunStatus::Ok);
        assert_eq!(a.trials, 20_000);
        assert_eq!(a.conditional_distortion.to_bits(), b.conditional_distortion.to_bits());
        assert!((a.conditional_distortion - 0.1).abs() < 4.0 * a.conditional_std_error);
        assert!((a.rate1 - 0.5 * (0.36 * 0.36 / 0.26 / 0.06f64).log2()).abs() < 1e-12);

        assert_eq!(
            latfun_simulate_two_user(m, 0.1, 0.5, 1, 2.0, 20_000, 4, &mut a),
            LatfunStatus::OutOfRange
        );
        assert_eq!(
            latfun_simulate_two_user(m, 0.1, 0.06, 1, 2.0, 10, 4, &mut a),
            LatfunStatus::InvalidArgument
        );
        latfun_model_free(m);
    }
}

#[test]
fn header_declares_exports() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/latfun.h")).unwrap();
    for sym in [
        "LATFUN_H",
        "LatfunStatus_Ok",
        "LatfunStatus_Panic",
        "LatfunRegime_Q2Infinite",
        "typedef struct LatfunLattice LatfunLattice;",
        "typedef struct LatfunModel LatfunModel;",
        "LatfunSimReport",
        "latfun_last_error_message",
        "latfun_lattice_new",
        "latfun_lattice_free",
        "latfun_lattice_nearest_point",
        "latfun_lattice_mod",
        "latfun_lattice_nsm",
        "latfun_model_two_user",
        "latfun_model_free",
        "latfun_lattice_min_sum",
        "latfun_bt_min_sum",
        "latfun_bt_optimal_q",
        "latfun_sum_rate_gap",
        "latfun_simulate_two_user",
        "latfun_epi_sandwich",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}
