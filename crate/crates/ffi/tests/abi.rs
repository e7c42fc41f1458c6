use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use fracwos_ffi::*;

fn last_error() -> String {
    let p = fw_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(fw_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_pointers_are_reported() {
    let status = unsafe { fw_problem_example(ptr::null(), 1.0, ptr::null_mut()) };
    assert_eq!(status, FwStatus::NullPointer);
    assert!(last_error().contains("name"));
    let mut n = 0usize;
    assert_eq!(unsafe { fw_hierarchy_vertex_count(ptr::null(), 1, &mut n) }, FwStatus::NullPointer);
    // freeing NULL is a no-op
    unsafe {
        fw_problem_free(ptr::null_mut());
        fw_hierarchy_free(ptr::null_mut());
        fw_solution_free(ptr::null_mut());
    }
}

#[test]
fn bad_input_sets_message() {
    let name = CString::new("example9").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { fw_problem_example(name.as_ptr(), 1.0, &mut p) }, FwStatus::InvalidArgument);
    assert!(last_error().contains("example9"));
    assert!(p.is_null());

    let name = CString::new("example1").unwrap();
    assert_eq!(unsafe { fw_problem_example(name.as_ptr(), 2.5, &mut p) }, FwStatus::InvalidArgument);

    let domain = CString::new("ball(0, 0)").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { fw_hierarchy_new(domain.as_ptr(), 3, &mut h) }, FwStatus::InvalidInput);
}

#[test]
fn errors_are_per_thread() {
    let name = CString::new("nope").unwrap();
    let mut p = ptr::null_mut();
    unsafe { fw_problem_example(name.as_ptr(), 1.0, &mut p) };
    std::thread::spawn(|| assert!(fw_last_error_message().is_null()))
        .join()
        .unwrap();
}

#[test]
fn point_estimate_at_centre() {
    let name = CString::new("example1").unwrap();
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(fw_problem_example(name.as_ptr(), 1.0, &mut p), FwStatus::Ok);
        let (mut mean, mut se) = (0.0, 0.0);
        assert_eq!(fw_point_estimate(p, 0.0, 0.0, 1000, 1, &mut mean, &mut se), FwStatus::Ok);
        assert!((mean - 2.0 / std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(fw_point_estimate(p, 0.5, 0.0, 1000, 1, &mut mean, ptr::null_mut()), FwStatus::Ok);
        fw_problem_free(p);
    }
}

#[test]
fn solve_round_trip() {
    let domain = CString::new("ball(0, 0, 1)").unwrap();
    let f = CString::new("1").unwrap();
    let g = CString::new("0").unwrap();
    let mut p = ptr::null_mut();
    let mut h = ptr::null_mut();
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(fw_problem_custom(1.0, domain.as_ptr(), f.as_ptr(), g.as_ptr(), &mut p), FwStatus::Ok);
        assert_eq!(fw_hierarchy_new(domain.as_ptr(), 4, &mut h), FwStatus::Ok);
        assert_eq!(fw_solve(h, p, 0.05, 2, 4, 3, &mut s), FwStatus::Ok);
        let (mut level, mut len, mut cost, mut err) = (0usize, 0usize, 0u64, 0.0);
        assert_eq!(fw_solution_info(s, &mut level, &mut len, &mut cost, &mut err), FwStatus::Ok);
        assert!(cost > 0 && err > 0.0);
        let mut n = 0usize;
        assert_eq!(fw_hierarchy_vertex_count(h, level, &mut n), FwStatus::Ok);
        assert_eq!(n, len);
        let mut values = vec![0.0; len];
        assert_eq!(fw_solution_values(s, values.as_mut_ptr(), len + 1), FwStatus::InvalidArgument);
        assert_eq!(fw_solution_values(s, values.as_mut_ptr(), len), FwStatus::Ok);
        let mut xy = vec![0.0; 2 * len];
        assert_eq!(fw_hierarchy_vertices(h, level, xy.as_mut_ptr(), len), FwStatus::Ok);
        // mean exit time (1 − r²)^{1/2}·2/π, loosely
        for (v, c) in values.iter().zip(xy.chunks_exact(2)) {
            let r2 = c[0] * c[0] + c[1] * c[1];
            let exact = if r2 < 1.0 { (1.0 - r2).sqrt() * 2.0 / std::f64::consts::PI } else { 0.0 };
            assert!((v - exact).abs() < 0.2, "{v} vs {exact}");
        }
        fw_solution_free(s);
        fw_hierarchy_free(h);
        fw_problem_free(p);
    }
}

#[test]
fn assumption_checks() {
    let (mut max, mut se) = (0.0, 0.0);
    unsafe {
        assert_eq!(fw_check_contraction(0.5, 1.0, 2000, 3, 1, &mut max, &mut se), FwStatus::Ok);
        assert!(max > 0.0 && se > 0.0);
        assert_eq!(fw_check_barrier(0.5, 1.0, 1e4, 2000, 3, 1, &mut max, ptr::null_mut()), FwStatus::Ok);
        assert!(max > 0.0);
        assert_eq!(fw_check_contraction(0.5, 1.5, 2000, 3, 1, &mut max, &mut se), FwStatus::InvalidArgument);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fracwos.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in ["fw_solve", "fw_last_error_message", "FW_STATUS_PANIC", "fw_smallest_eigenvalue"] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }
    let Ok(_) = Command::new("cc").arg("--version").output() else {
        return;
    };
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(
        &src,
        "#include \"fracwos.h\"\nint main(void) { FwProblem *p = 0; return fw_problem_example(\"example1\", 1.0, &p) == FW_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("ffi-header");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
