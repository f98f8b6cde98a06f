use std::ffi::{c_char, CStr};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use fbm_currents_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe {
        fc_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn kernel_matches_the_closed_form() {
    unsafe {
        let mut k = ptr::null_mut();
        assert_eq!(fc_kernel_new(1.0, 3, &mut k), FcStatus::Ok);
        let mut v = 0.0;
        for r in [0.1, 1.0, 3.0] {
            assert_eq!(fc_kernel_eval(k, r, &mut v), FcStatus::Ok);
            let exact = (-r as f64).exp() / (4.0 * std::f64::consts::PI * r);
            assert!((v - exact).abs() < 1e-6 * exact, "r = {r}: {v} vs {exact}");
        }
        assert_eq!(fc_kernel_eval(k, 0.0, &mut v), FcStatus::SingularAtOrigin);
        assert!(last_error().contains("singular"));
        assert_eq!(fc_kernel_eval(k, -1.0, &mut v), FcStatus::OutOfRange);
        fc_kernel_free(k);
    }
}

#[test]
fn bounded_kernel_has_a_value_at_the_origin() {
    unsafe {
        let mut k = ptr::null_mut();
        assert_eq!(fc_kernel_new(1.0, 1, &mut k), FcStatus::Ok);
        let mut v = 0.0;
        assert_eq!(fc_kernel_eval(k, 0.0, &mut v), FcStatus::Ok);
        assert!((v - 0.5).abs() < 1e-10);
        fc_kernel_free(k);
    }
}

#[test]
fn invalid_arguments_are_reported() {
    unsafe {
        let mut k = ptr::null_mut();
        assert_eq!(fc_kernel_new(-1.0, 3, &mut k), FcStatus::InvalidParameter);
        assert!(k.is_null());
        assert!(last_error().contains("alpha"));
        assert_eq!(fc_kernel_new(1.0, 3, ptr::null_mut()), FcStatus::NullPointer);
        let mut v = 0.0;
        assert_eq!(fc_kernel_eval(ptr::null(), 1.0, &mut v), FcStatus::NullPointer);
        let mut p = ptr::null_mut();
        assert_eq!(fc_path_sample(1.5, 2, 1.0, 64, 0.0, 1, &mut p), FcStatus::InvalidParameter);
        fc_kernel_free(ptr::null_mut());
        fc_path_free(ptr::null_mut());
    }
}

#[test]
fn path_round_trip_and_current() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(fc_path_sample(0.5, 3, 1.0, 160, 0.05, 7, &mut p), FcStatus::Ok);
        let (mut dim, mut n) = (0, 0);
        assert_eq!(fc_path_shape(p, &mut dim, &mut n), FcStatus::Ok);
        assert_eq!(dim, 3);
        assert!(n > 160);
        let mut buf = vec![f64::NAN; n];
        assert_eq!(fc_path_coordinate(p, 0, buf.as_mut_ptr(), n), FcStatus::Ok);
        assert_eq!(buf[0], 0.0);
        assert!(buf.iter().all(|x| x.is_finite()));
        assert_eq!(fc_path_coordinate(p, 3, buf.as_mut_ptr(), n), FcStatus::OutOfRange);
        assert_eq!(fc_path_coordinate(p, 0, buf.as_mut_ptr(), n - 1), FcStatus::BufferTooSmall);

        let mut k = ptr::null_mut();
        assert_eq!(fc_kernel_new(2.0, 3, &mut k), FcStatus::Ok);
        let mut z = f64::NAN;
        assert_eq!(fc_z_double_integral(p, k, FcScheme::Symmetric, 0.05, &mut z), FcStatus::Ok);
        assert!(z.is_finite() && z >= 0.0);
        // misaligned width
        assert_eq!(fc_z_double_integral(p, k, FcScheme::Symmetric, 0.0513, &mut z), FcStatus::MisalignedEpsilon);
        let (mut e, mut err) = (f64::NAN, f64::NAN);
        assert_eq!(fc_expected_z_exact(k, 0.5, FcScheme::Symmetric, 0.05, 1.0, &mut e, &mut err), FcStatus::Ok);
        assert!(e > 0.0 && err >= 0.0 && err < 1e-3 * e);
        fc_kernel_free(k);
        fc_path_free(p);
    }
}

#[test]
fn divergent_expectation_maps_to_its_code() {
    unsafe {
        let mut k = ptr::null_mut();
        // below the integrability threshold for H = 0.7, d = 3
        assert_eq!(fc_kernel_new(0.5, 3, &mut k), FcStatus::Ok);
        let mut e = 0.0;
        let s = fc_expected_z_exact(k, 0.7, FcScheme::Symmetric, 0.05, 1.0, &mut e, ptr::null_mut());
        assert_eq!(s, FcStatus::Divergent, "{}", last_error());
        fc_kernel_free(k);
    }
}

#[test]
fn version_is_the_package_version() {
    let v = unsafe { CStr::from_ptr(fc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/fbm_currents.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for f in ["fc_kernel_new", "fc_path_sample", "fc_z_double_integral", "FC_STATUS_OK"] {
        assert!(text.contains(f), "header lacks {f}");
    }
    let probe = std::env::temp_dir().join(format!("fbm_currents_header_{}.c", std::process::id()));
    std::fs::write(
        &probe,
        "#include \"fbm_currents.h\"\nint main(void) { FcKernel *k = 0; return fc_kernel_new(1.0, 3, &k) == FC_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let status = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&probe)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("no C compiler found; header syntax check skipped");
            return;
        }
    };
    let _ = std::fs::remove_file(&probe);
    assert!(status.success());
}
