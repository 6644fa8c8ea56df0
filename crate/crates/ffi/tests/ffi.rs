use std::ffi::CStr;
use std::ptr;

use dpdme::dme::{run_protocol, DmeConfig};
use dpdme::quantize::wire::Rational;
use dpdme_ffi::*;

fn config(rotate: bool) -> DmeConfig {
    DmeConfig {
        n: 4,
        d: 6,
        clip_bound: 1.0,
        levels: 8,
        trials: 40,
        p: Rational::HALF,
        delta: 1e-6,
        rotate,
        master_seed: 99,
    }
}

fn inputs() -> Vec<Vec<f64>> {
    (0..4)
        .map(|i| (0..6).map(|j| ((i * 6 + j) as f64 * 0.37).sin() * 0.3).collect())
        .collect()
}

unsafe fn new_handle(c: &DmeConfig) -> *mut DpdmeConfig {
    let mut h = ptr::null_mut();
    let s = dpdme_config_new(
        c.n,
        c.d,
        c.clip_bound,
        c.levels,
        c.trials,
        c.p.num,
        c.p.den,
        c.delta,
        c.rotate,
        c.master_seed,
        &mut h,
    );
    assert_eq!(s, DpdmeStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let p = dpdme_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn round_trip_matches_library() {
    for rotate in [false, true] {
        let c = config(rotate);
        let xs = inputs();
        let expected = run_protocol(&xs, &c).unwrap().estimate;
        unsafe {
            let h = new_handle(&c);
            let mut len = 0usize;
            assert_eq!(dpdme_message_len(h, &mut len), DpdmeStatus::Ok);
            let mut agg = ptr::null_mut();
            assert_eq!(dpdme_aggregator_new(h, &mut agg), DpdmeStatus::Ok);
            for (i, x) in xs.iter().enumerate() {
                let mut buf = vec![0u8; len];
                let mut written = 0usize;
                let s = dpdme_client_encode(
                    h,
                    x.as_ptr(),
                    x.len(),
                    i as u64,
                    buf.as_mut_ptr(),
                    buf.len(),
                    &mut written,
                );
                assert_eq!(s, DpdmeStatus::Ok);
                assert_eq!(written, len);
                assert_eq!(dpdme_aggregator_push(agg, buf.as_ptr(), written), DpdmeStatus::Ok);
            }
            let mut est = vec![0.0; c.d];
            assert_eq!(
                dpdme_aggregator_finish(agg, est.as_mut_ptr(), est.len()),
                DpdmeStatus::Ok
            );
            assert_eq!(est, expected);
            assert_eq!(
                dpdme_aggregator_finish(agg, est.as_mut_ptr(), est.len()),
                DpdmeStatus::Protocol
            );
            assert!(last_error().contains("already finished"));
            dpdme_aggregator_free(agg);
            dpdme_config_free(h);
        }
    }
}

#[test]
fn privacy_and_cost() {
    let c = config(false);
    unsafe {
        let h = new_handle(&c);
        let (mut eps, mut delta) = (0.0, 0.0);
        assert_eq!(dpdme_config_privacy(h, &mut eps, &mut delta), DpdmeStatus::Ok);
        let r = dpdme::dme::privacy_of_run(&c).unwrap();
        assert_eq!(eps.to_bits(), r.report.epsilon.to_bits());
        assert_eq!(delta, r.delta_total);
        let (mut mse, mut bits) = (0.0, 0u64);
        assert_eq!(dpdme_config_cost(h, &mut mse, &mut bits), DpdmeStatus::Ok);
        assert_eq!(bits, dpdme::dme::comm_cost_bits(&c));
        assert_eq!(mse, dpdme::dme::theoretical_mse_bound(&c));
        dpdme_config_free(h);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut h = ptr::null_mut();
        let s = dpdme_config_new(4, 6, 1.0, 1, 40, 1, 2, 1e-6, false, 0, &mut h);
        assert_eq!(s, DpdmeStatus::InvalidConfig);
        assert!(h.is_null());
        assert!(!last_error().is_empty());

        let s = dpdme_config_new(4, 6, 1.0, 8, 40, 3, 2, 1e-6, false, 0, &mut h);
        assert_eq!(s, DpdmeStatus::Wire);

        let s = dpdme_config_new(4, 6, 1.0, 8, 40, 1, 2, 1e-6, false, 0, ptr::null_mut());
        assert_eq!(s, DpdmeStatus::NullPointer);
        assert!(last_error().contains("out"));

        let c = config(false);
        let h = new_handle(&c);
        assert!(dpdme_last_error_message().is_null());
        let x = [0.1; 6];
        let mut small = [0u8; 4];
        let mut written = 0usize;
        let s = dpdme_client_encode(h, x.as_ptr(), 6, 0, small.as_mut_ptr(), small.len(), &mut written);
        assert_eq!(s, DpdmeStatus::BufferTooSmall);
        assert!(written > small.len());
        let s = dpdme_client_encode(h, x.as_ptr(), 5, 0, small.as_mut_ptr(), small.len(), &mut written);
        assert_eq!(s, DpdmeStatus::InvalidArgument);

        let mut agg = ptr::null_mut();
        assert_eq!(dpdme_aggregator_new(h, &mut agg), DpdmeStatus::Ok);
        let junk = [0u8; 50];
        assert_eq!(dpdme_aggregator_push(agg, junk.as_ptr(), junk.len()), DpdmeStatus::Wire);
        let mut est = [0.0; 6];
        assert_eq!(dpdme_aggregator_finish(agg, est.as_mut_ptr(), 6), DpdmeStatus::Protocol);
        dpdme_aggregator_free(agg);
        dpdme_config_free(h);
        dpdme_config_free(ptr::null_mut());
        dpdme_aggregator_free(ptr::null_mut());
    }
}

#[test]
fn accountant_entry_points() {
    unsafe {
        let (mut eps, mut ok) = (0.0, false);
        assert_eq!(
            dpdme_gaussian_epsilon(2.0, 4.0, 1e-6, &mut eps, &mut ok),
            DpdmeStatus::Ok
        );
        assert!((eps - 2.649_4).abs() < 1e-3, "{eps}");
        assert!(!ok);
        let s = dpdme_binomial_epsilon(10_000, 0.5, 1.0, 1, 1e-3, 1.0, 1.0, 1.0, &mut eps, &mut ok);
        assert_eq!(s, DpdmeStatus::Ok);
        assert!(ok);
        assert!((eps - 0.1049).abs() < 1e-3, "{eps}");
        let s = dpdme_binomial_epsilon(10, 1.5, 1.0, 1, 1e-3, 1.0, 1.0, 1.0, &mut eps, &mut ok);
        assert_eq!(s, DpdmeStatus::InvalidArgument);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(dpdme_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/dpdme.h");
    assert!(std::path::Path::new(header).exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"dpdme.h\"\nint main(void) { DpdmeConfig *c = 0; size_t n = 0;\n\
         return dpdme_message_len(c, &n) == DPDME_STATUS_OK; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = std::process::Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I", include])
            .arg(&src)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(_) => eprintln!("{compiler} not available, skipping"),
        }
    }
}
