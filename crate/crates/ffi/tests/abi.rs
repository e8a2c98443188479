use std::ffi::{CStr, CString};
use std::ptr;

use dgm_ffi::*;

fn tetra() -> (Vec<f64>, Vec<u32>) {
    let v = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let f = vec![0, 2, 1, 0, 1, 3, 0, 3, 2, 1, 2, 3];
    (v, f)
}

fn last_error() -> String {
    let p = dgm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn extract_through_handles() {
    let (v, f) = tetra();
    let mut mesh = ptr::null_mut();
    unsafe {
        assert_eq!(dgm_mesh_from_arrays(v.as_ptr(), 4, f.as_ptr(), 4, &mut mesh), DgmStatus::Ok);
        assert_eq!(dgm_mesh_n_vertices(mesh), 4);
        let family = CString::new("hks_pade").unwrap();
        let mut d = ptr::null_mut();
        assert_eq!(dgm_extract(mesh, family.as_ptr(), ptr::null(), &mut d), DgmStatus::Ok);
        let (rows, dim) = (dgm_descriptors_n_rows(d), dgm_descriptors_dim(d));
        assert_eq!((rows, dim), (4, 24));
        let mut buf = vec![0.0; rows * dim];
        assert_eq!(dgm_descriptors_copy(d, buf.as_mut_ptr(), buf.len() - 1), DgmStatus::BufferTooSmall);
        assert!(last_error().contains("need 96"));
        assert_eq!(dgm_descriptors_copy(d, buf.as_mut_ptr(), buf.len()), DgmStatus::Ok);
        assert!(dgm_last_error().is_null());
        assert!(buf.iter().all(|x| x.is_finite() && *x > 0.0));
        dgm_descriptors_free(d);
        dgm_mesh_free(mesh);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let (v, mut f) = tetra();
    let mut mesh = ptr::null_mut();
    unsafe {
        f[0] = 9;
        assert_eq!(dgm_mesh_from_arrays(v.as_ptr(), 4, f.as_ptr(), 4, &mut mesh), DgmStatus::InvalidMesh);
        assert!(last_error().contains("out of range"));
        assert!(mesh.is_null());

        let path = CString::new("/nonexistent/shape.off").unwrap();
        assert_eq!(dgm_mesh_load(path.as_ptr(), &mut mesh), DgmStatus::Io);
        assert_eq!(dgm_mesh_load(ptr::null(), &mut mesh), DgmStatus::NullPointer);

        let (v, f) = tetra();
        assert_eq!(dgm_mesh_from_arrays(v.as_ptr(), 4, f.as_ptr(), 4, &mut mesh), DgmStatus::Ok);
        let mut d = ptr::null_mut();
        let bad = CString::new("sift").unwrap();
        assert_eq!(dgm_extract(mesh, bad.as_ptr(), ptr::null(), &mut d), DgmStatus::InvalidArgument);
        let fam = CString::new("dgm").unwrap();
        let cfg = CString::new("{\"dgm\": {\"k\": 0}}").unwrap();
        assert_ne!(dgm_extract(mesh, fam.as_ptr(), cfg.as_ptr(), &mut d), DgmStatus::Ok);
        let cfg = CString::new("{not json").unwrap();
        assert_eq!(dgm_extract(mesh, fam.as_ptr(), cfg.as_ptr(), &mut d), DgmStatus::Parse);
        dgm_mesh_free(mesh);
        dgm_mesh_free(ptr::null_mut());
    }
}

#[test]
fn retrieval_map_matches_hand_value() {
    // Two tight classes: every query ranks its classmate first.
    let vecs = [1.0, 0.0, 1.0, 0.1, 0.0, 1.0, 0.1, 1.0];
    let labels = [0u32, 0, 1, 1];
    let mut map = f64::NAN;
    let status = unsafe { dgm_retrieval_map(vecs.as_ptr(), 4, 2, labels.as_ptr(), &mut map) };
    assert_eq!(status, DgmStatus::Ok);
    assert_eq!(map, 1.0);
    let s = unsafe { CStr::from_ptr(dgm_version()) };
    assert_eq!(s.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/dgm.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["dgm_extract", "dgm_mesh_load", "dgm_last_error", "DGM_STATUS_BUFFER_TOO_SMALL", "typedef struct DgmMesh DgmMesh"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(cc) = which("cc") else { return };
    let tmp = tempdir();
    let src = tmp.join("probe.c");
    std::fs::write(&src, "#include \"dgm.h\"\nint main(void) { return dgm_last_error() != 0; }\n").unwrap();
    let out = std::process::Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which(name: &str) -> Result<std::path::PathBuf, ()> {
    std::env::var_os("PATH")
        .and_then(|p| std::env::split_paths(&p).map(|d| d.join(name)).find(|p| p.is_file()))
        .ok_or(())
}

fn tempdir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("dgm-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
