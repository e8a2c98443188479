//! C ABI over the `dgm` library.
//!
//! Every fallible call returns a [`DgmStatus`]; on failure the message is
//! available from [`dgm_last_error`] on the same thread. Handles are opaque
//! and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dgm::descriptors::{DescriptorMatrix, Family};
use dgm::mesh::Mesh;
use dgm::pipeline::DescriptorConfig;
use dgm::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DgmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    InvalidMesh = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A preprocessed triangle mesh.
pub struct DgmMesh(Mesh);

/// A per-vertex descriptor matrix, row-major.
pub struct DgmDescriptors(DescriptorMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DgmStatus {
    match e {
        Error::Io { .. } => DgmStatus::Io,
        Error::Parse { .. } | Error::Serde(_) => DgmStatus::Parse,
        Error::NonTriangulable { .. }
        | Error::EmptyMesh(_)
        | Error::AllFacesDegenerate(_)
        | Error::IndexOutOfRange { .. }
        | Error::Disconnected { .. } => DgmStatus::InvalidMesh,
        Error::NonFiniteCotangent(_)
        | Error::SolverBreakdown { .. }
        | Error::NotPositiveDefinite(_)
        | Error::EigenFailure(_)
        | Error::Degenerate(_) => DgmStatus::Numerical,
        _ => DgmStatus::InvalidArgument,
    }
}

/// Run `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (DgmStatus, String)>) -> DgmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DgmStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            DgmStatus::Panic
        }
    }
}

fn lib(e: Error) -> (DgmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DgmStatus, String) {
    (DgmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DgmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (DgmStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dgm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn dgm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Load an OFF or OBJ file and preprocess it.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dgm_mesh_load(path: *const c_char, out: *mut *mut DgmMesh) -> DgmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = str_arg(path, "path")?;
        let mesh = dgm::mesh::load_mesh(Path::new(p)).and_then(|m| dgm::mesh::preprocess(&m)).map_err(lib)?;
        *out = Box::into_raw(Box::new(DgmMesh(mesh)));
        Ok(())
    })
}

/// Build a mesh from `n_vertices` xyz triples and `n_faces` index triples,
/// then preprocess it.
///
/// # Safety
/// `vertices` must hold `3 * n_vertices` doubles, `faces` `3 * n_faces`
/// indices and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dgm_mesh_from_arrays(
    vertices: *const f64,
    n_vertices: usize,
    faces: *const u32,
    n_faces: usize,
    out: *mut *mut DgmMesh,
) -> DgmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if vertices.is_null() || faces.is_null() {
            return Err(null("vertex or face buffer"));
        }
        let v = std::slice::from_raw_parts(vertices, 3 * n_vertices);
        let f = std::slice::from_raw_parts(faces, 3 * n_faces);
        let mesh = Mesh::new(
            v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            f.chunks_exact(3).map(|c| [c[0] as usize, c[1] as usize, c[2] as usize]).collect(),
        );
        let mesh = dgm::mesh::preprocess(&mesh).map_err(lib)?;
        *out = Box::into_raw(Box::new(DgmMesh(mesh)));
        Ok(())
    })
}

/// Vertex count after preprocessing; 0 for NULL.
///
/// # Safety
/// `mesh` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dgm_mesh_n_vertices(mesh: *const DgmMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.n_vertices())
}

/// # Safety
/// `mesh` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dgm_mesh_free(mesh: *mut DgmMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Extract local descriptors of `family` (e.g. "dgm", "hks", "wks").
/// `config_json` is an optional JSON descriptor configuration; NULL uses
/// the defaults and missing keys take default values.
///
/// # Safety
/// `mesh` must be a live handle, `family` and `config_json` (if not NULL)
/// NUL-terminated strings, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dgm_extract(
    mesh: *const DgmMesh,
    family: *const c_char,
    config_json: *const c_char,
    out: *mut *mut DgmDescriptors,
) -> DgmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mesh = mesh.as_ref().ok_or_else(|| null("mesh"))?;
        let family: Family = str_arg(family, "family")?.parse().map_err(lib)?;
        let cfg: DescriptorConfig = if config_json.is_null() {
            DescriptorConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(|e| (DgmStatus::Parse, e.to_string()))?
        };
        let d = dgm::pipeline::extract(&mesh.0, family, &cfg).map_err(lib)?;
        *out = Box::into_raw(Box::new(DgmDescriptors(d)));
        Ok(())
    })
}

/// # Safety
/// `d` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dgm_descriptors_n_rows(d: *const DgmDescriptors) -> usize {
    d.as_ref().map_or(0, |d| d.0.n_rows())
}

/// # Safety
/// `d` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dgm_descriptors_dim(d: *const DgmDescriptors) -> usize {
    d.as_ref().map_or(0, |d| d.0.dim())
}

/// Copy the row-major values into `buf`, which must hold
/// `n_rows * dim` doubles.
///
/// # Safety
/// `d` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dgm_descriptors_copy(d: *const DgmDescriptors, buf: *mut f64, len: usize) -> DgmStatus {
    guard(|| {
        let d = d.as_ref().ok_or_else(|| null("descriptors"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let src = &d.0.data;
        if len < src.len() {
            return Err((DgmStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", src.len())));
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(())
    })
}

/// # Safety
/// `d` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dgm_descriptors_free(d: *mut DgmDescriptors) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Leave-one-out cosine retrieval mAP over `n` row-major global vectors of
/// length `dim` with integer class labels.
///
/// # Safety
/// `vectors` must hold `n * dim` doubles, `labels` `n` values, and
/// `out_map` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dgm_retrieval_map(
    vectors: *const f64,
    n: usize,
    dim: usize,
    labels: *const u32,
    out_map: *mut f64,
) -> DgmStatus {
    guard(|| {
        if vectors.is_null() || labels.is_null() || out_map.is_null() {
            return Err(null("vectors, labels or out_map"));
        }
        let v = std::slice::from_raw_parts(vectors, n * dim);
        let rows: Vec<Vec<f64>> = v.chunks_exact(dim.max(1)).map(<[f64]>::to_vec).collect();
        let ids: Vec<String> = (0..n).map(|i| format!("{i:08}")).collect();
        let labels: Vec<String> = std::slice::from_raw_parts(labels, n).iter().map(u32::to_string).collect();
        let r = dgm::evaluation::retrieve_vectors(&ids, &labels, &rows).map_err(lib)?;
        *out_map = r.map;
        Ok(())
    })
}
