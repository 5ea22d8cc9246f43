//! C ABI over the `saic` core.
//!
//! Every fallible function returns a [`SaicStatus`]. On failure the message is
//! kept per thread and can be read with [`saic_last_error`]. Handles are
//! opaque; each `*_open` / `*_new` has a matching `*_free`. Panics never cross
//! the boundary; they surface as [`SaicStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use saic::cellbank::{CellBank, CellType, ReferenceConstraint, SelectionQuery};
use saic::evalkit::{self, GaussianSummary};
use saic::{Error, HFMap, Raster};

/// Result codes. `Ok` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaicStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    NoMatch = 5,
    EmptyBank = 6,
    Numerical = 7,
    Panic = 8,
}

/// Cell type codes accepted by [`saic_bank_select_candidate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaicCellType {
    SingleCell = 0,
    Clumps = 1,
}

/// Opaque cell bank.
pub struct SaicBank(CellBank);

/// Opaque mean/covariance summary of an embedding set.
pub struct SaicGaussian(GaussianSummary);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SaicStatus {
    match err.root() {
        Error::Io { .. } | Error::MissingRun(_) => SaicStatus::Io,
        Error::Parse { .. } | Error::Schema { .. } | Error::Codec(_) => SaicStatus::Parse,
        Error::NoMatch { .. } | Error::MissingEmbedding(_) => SaicStatus::NoMatch,
        Error::EmptyBank => SaicStatus::EmptyBank,
        Error::NumericalFailure(_) | Error::TooFewSamples { .. } => SaicStatus::Numerical,
        _ => SaicStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

/// Runs `f`, records any failure and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SaicStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SaicStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            SaicStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            SaicStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SaicStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &'static str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn saic_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn saic_status_name(status: SaicStatus) -> *const c_char {
    let s: &'static CStr = match status {
        SaicStatus::Ok => c"ok",
        SaicStatus::NullPointer => c"null_pointer",
        SaicStatus::InvalidArgument => c"invalid_argument",
        SaicStatus::Io => c"io",
        SaicStatus::Parse => c"parse",
        SaicStatus::NoMatch => c"no_match",
        SaicStatus::EmptyBank => c"empty_bank",
        SaicStatus::Numerical => c"numerical",
        SaicStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn saic_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(s) => s,
        Err(_) => panic!("version contains a nul byte"),
    };
    VERSION.as_ptr()
}

/// Opens a bank directory written by `saic build-bank`.
///
/// # Safety
/// `dir` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn saic_bank_open(dir: *const c_char, out: *mut *mut SaicBank) -> SaicStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let dir = str_arg(dir, "dir")?;
        let bank = CellBank::load(Path::new(dir))?;
        *out = Box::into_raw(Box::new(SaicBank(bank)));
        Ok(())
    })
}

/// # Safety
/// `bank` must come from [`saic_bank_open`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn saic_bank_free(bank: *mut SaicBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Number of records; 0 for a null handle.
///
/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn saic_bank_len(bank: *const SaicBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.len())
}

/// Embedding length of the bank, or 0 if records carry no embeddings.
///
/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn saic_bank_embed_dim(bank: *const SaicBank) -> usize {
    bank.as_ref()
        .and_then(|b| b.0.records().first())
        .and_then(|r| r.embedding.as_ref())
        .map_or(0, Vec::len)
}

/// Closest-area record of the given category and type; ties go to the lowest
/// id. `exclude_source` may be null.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn saic_bank_select_candidate(
    bank: *const SaicBank,
    category: *const c_char,
    cell_type: SaicCellType,
    area: u64,
    exclude_source: *const c_char,
    out_id: *mut u64,
) -> SaicStatus {
    guard(|| {
        let bank = non_null(bank, "bank")?;
        let out_id = out_ref(out_id, "out_id")?;
        let query = SelectionQuery {
            category: str_arg(category, "category")?.to_string(),
            cell_type: match cell_type {
                SaicCellType::SingleCell => CellType::SingleCell,
                SaicCellType::Clumps => CellType::Clumps,
            },
            area,
            exclude_source: opt_str_arg(exclude_source, "exclude_source")?.map(String::from),
        };
        *out_id = bank.0.select_candidate(&query)?.id;
        Ok(())
    })
}

/// Most cosine-similar record to `embedding`; ties go to the lowest id.
/// `category` may be null to search the whole bank.
///
/// # Safety
/// `embedding` must point to `len` doubles; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn saic_bank_select_reference(
    bank: *const SaicBank,
    embedding: *const f64,
    len: usize,
    category: *const c_char,
    out_id: *mut u64,
) -> SaicStatus {
    guard(|| {
        let bank = non_null(bank, "bank")?;
        let out_id = out_ref(out_id, "out_id")?;
        let emb = slice_arg(embedding, len, "embedding")?;
        let constraint = ReferenceConstraint {
            category: opt_str_arg(category, "category")?.map(String::from),
        };
        *out_id = bank.0.select_style_reference(emb, &constraint)?.id;
        Ok(())
    })
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `u` and `v` must point to `len` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn saic_cosine_similarity(u: *const f64, v: *const f64, len: usize, out: *mut f64) -> SaicStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = saic::cellbank::cosine_similarity(slice_arg(u, len, "u")?, slice_arg(v, len, "v")?)?;
        Ok(())
    })
}

/// Sobel gradient magnitude of an interleaved 8-bit image with 1 or 3
/// channels. `out` receives `width * height * channels` doubles.
///
/// # Safety
/// `pixels` and `out` must each hold `width * height * channels` elements.
#[no_mangle]
pub unsafe extern "C" fn saic_highpass(
    pixels: *const u8,
    width: u32,
    height: u32,
    channels: u8,
    out: *mut f64,
) -> SaicStatus {
    guard(|| {
        let n = width as usize * height as usize * channels as usize;
        let img = Raster::new(width, height, channels, slice_arg(pixels, n, "pixels")?.to_vec())?;
        let hf = saic::imageproc::highpass(&img)?;
        slice_out(out, n, "out")?.copy_from_slice(hf.data());
        Ok(())
    })
}

/// Element-wise `alpha * ht + (1 - alpha) * hr` over `len` samples.
///
/// # Safety
/// `ht`, `hr` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn saic_blend_hf(
    ht: *const f64,
    hr: *const f64,
    len: usize,
    alpha: f64,
    out: *mut f64,
) -> SaicStatus {
    guard(|| {
        let width = u32::try_from(len).map_err(|_| Fail::Arg(format!("length {len} too large")))?;
        let ht = HFMap::new(width, 1, 1, slice_arg(ht, len, "ht")?.to_vec())?;
        let hr = HFMap::new(width, 1, 1, slice_arg(hr, len, "hr")?.to_vec())?;
        let blended = saic::imageproc::blend_hf(&ht, &hr, alpha)?;
        slice_out(out, len, "out")?.copy_from_slice(blended.data());
        Ok(())
    })
}

/// Mean and unbiased covariance of `count` row-major samples of length `dim`.
///
/// # Safety
/// `samples` must hold `count * dim` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn saic_gaussian_new(
    samples: *const f64,
    count: usize,
    dim: usize,
    out: *mut *mut SaicGaussian,
) -> SaicStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        if dim == 0 {
            return Err(Fail::Arg("dim must be positive".into()));
        }
        let total = count
            .checked_mul(dim)
            .ok_or_else(|| Fail::Arg("count * dim overflows".into()))?;
        let data = slice_arg(samples, total, "samples")?;
        let rows: Vec<Vec<f64>> = data.chunks(dim).map(<[f64]>::to_vec).collect();
        *out = Box::into_raw(Box::new(SaicGaussian(evalkit::summarize(&rows)?)));
        Ok(())
    })
}

/// # Safety
/// `g` must come from [`saic_gaussian_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn saic_gaussian_free(g: *mut SaicGaussian) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Frechet distance between two summaries of the same dimension.
///
/// # Safety
/// `a` and `b` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn saic_frechet_distance(
    a: *const SaicGaussian,
    b: *const SaicGaussian,
    out: *mut f64,
) -> SaicStatus {
    guard(|| {
        let (a, b) = (non_null(a, "a")?, non_null(b, "b")?);
        let out = out_ref(out, "out")?;
        *out = evalkit::frechet_distance(&a.0, &b.0)?;
        Ok(())
    })
}
