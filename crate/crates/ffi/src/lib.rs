//! C ABI for loading a trained stack and running the codec.
//!
//! Every fallible call returns an [`HqarfStatus`]; on failure the message is
//! available from [`hqarf_last_error_message`] on the same thread. Buffers
//! are always owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use hqarf::codec::{self, CompressedBlob, HEADER_LEN};
use hqarf::hae::ModelStack;
use hqarf::sigsynth::IqFrame;
use hqarf::Error;

/// Opaque handle to a loaded model stack.
pub struct HqarfModel {
    stack: ModelStack,
    id: [u8; 16],
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HqarfStatus {
    Ok = 0,
    NullArgument = -1,
    Io = -2,
    Format = -3,
    State = -4,
    Integrity = -5,
    Corruption = -6,
    Config = -7,
    Dimension = -8,
    BufferTooSmall = -9,
    Numerical = -10,
    Panic = -11,
    Other = -12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HqarfRateReport {
    pub level: u32,
    pub width: u64,
    pub payload_bits: u64,
    pub source_bits: f64,
    /// Nominal ratio, rounded to two decimals per level.
    pub cr: f64,
    pub cr_exact: f64,
    /// `1 / cr`.
    pub r: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HqarfStatus {
    match e {
        Error::Io(_) => HqarfStatus::Io,
        Error::Format(_) => HqarfStatus::Format,
        Error::State(_) => HqarfStatus::State,
        Error::Integrity(_) => HqarfStatus::Integrity,
        Error::Corruption { .. } => HqarfStatus::Corruption,
        Error::Config(_) => HqarfStatus::Config,
        Error::Dimension { .. } | Error::InputLength { .. } | Error::Bounds { .. } => {
            HqarfStatus::Dimension
        }
        Error::NonFinite { .. } | Error::Divergence { .. } => HqarfStatus::Numerical,
        Error::Analysis(_) => HqarfStatus::Other,
    }
}

struct Failure(HqarfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HqarfStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HqarfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HqarfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HqarfStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const HqarfModel) -> Result<&'a HqarfModel, Failure> {
    model.as_ref().ok_or_else(|| null("model"))
}

unsafe fn input<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(data, len))
}

/// Copies `src` into the caller's buffer, always reporting the needed length.
unsafe fn emit<T: Copy>(
    src: &[T],
    out: *mut T,
    cap: usize,
    out_len: *mut usize,
) -> Result<(), Failure> {
    if !out_len.is_null() {
        *out_len = src.len();
    }
    if src.len() > cap {
        return Err(Failure(
            HqarfStatus::BufferTooSmall,
            format!("need {} elements, buffer holds {cap}", src.len()),
        ));
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

fn install(stack: ModelStack, out: *mut *mut HqarfModel) -> Result<(), Failure> {
    stack.validate()?;
    let id = stack.digest();
    let handle = Box::new(HqarfModel { stack, id });
    unsafe { *out = Box::into_raw(handle) };
    Ok(())
}

/// Loads a stack checkpoint from a NUL-terminated path.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hqarf_model_load(
    path: *const c_char,
    out: *mut *mut HqarfModel,
) -> HqarfStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null("path or out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(HqarfStatus::Config, "path is not UTF-8".into()))?;
        install(ModelStack::load(path)?, out)
    })
}

/// Loads a stack checkpoint from memory.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hqarf_model_load_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut HqarfModel,
) -> HqarfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let bytes = input(data, len, "data")?;
        install(ModelStack::from_bytes(bytes)?, out)
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from a load call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hqarf_model_free(model: *mut HqarfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Frame length `p` the model expects, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqarf_model_frame_len(model: *const HqarfModel) -> usize {
    model.as_ref().map_or(0, |m| m.stack.frame_len())
}

/// Number of levels, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqarf_model_depth(model: *const HqarfModel) -> usize {
    model.as_ref().map_or(0, |m| m.stack.depth())
}

/// Writes the 16-byte model id carried in every blob header.
///
/// # Safety
/// `out` must have room for 16 bytes.
#[no_mangle]
pub unsafe extern "C" fn hqarf_model_id(model: *const HqarfModel, out: *mut u8) -> HqarfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(m.id.as_ptr(), out, 16);
        Ok(())
    })
}

/// Size in bytes of a blob compressed at `level`.
///
/// # Safety
/// `model` must be a live handle and `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn hqarf_blob_len(
    model: *const HqarfModel,
    level: u32,
    out_len: *mut usize,
) -> HqarfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        let lvl =
            m.stack.levels.get(level as usize).ok_or_else(|| {
                Failure(HqarfStatus::State, format!("level {level} does not exist"))
            })?;
        let cb = lvl
            .codebook
            .as_ref()
            .ok_or_else(|| Failure(HqarfStatus::State, format!("level {level} has no codebook")))?;
        let bits = lvl.spec.out_width() as u64 * cb.index_bits() as u64;
        *out_len = HEADER_LEN + bits.div_ceil(8) as usize;
        Ok(())
    })
}

/// Compresses one `[2, p]` frame given as `2·p` floats (in-phase samples,
/// then quadrature) into `out`. `out_len` receives the blob size, also when
/// the buffer is too small.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn hqarf_compress(
    model: *const HqarfModel,
    iq: *const f32,
    iq_len: usize,
    level: u32,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
) -> HqarfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let frame = IqFrame::from_channels(input(iq, iq_len, "iq")?.to_vec())?;
        let blob = codec::compress_with_id(&frame, &m.stack, level as usize, m.id)?;
        emit(&blob.to_bytes()?, out, out_cap, out_len)
    })
}

/// Decodes a blob into `2·p` floats. `out_len` receives the float count.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn hqarf_decompress(
    model: *const HqarfModel,
    blob: *const u8,
    blob_len: usize,
    out: *mut f32,
    out_cap: usize,
    out_len: *mut usize,
) -> HqarfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let blob = CompressedBlob::from_bytes(input(blob, blob_len, "blob")?)?;
        let frame = codec::decompress_with_id(&blob, &m.stack, m.id)?;
        emit(frame.as_slice(), out, out_cap, out_len)
    })
}

/// Rate figures for `level` at frame length `p` and codebook size `n_c`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hqarf_compression_ratio(
    level: u32,
    p: usize,
    n_c: usize,
    out: *mut HqarfRateReport,
) -> HqarfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n_c < 2 {
            return Err(Failure(
                HqarfStatus::Config,
                format!("codebook size {n_c} is below 2"),
            ));
        }
        let r = codec::compression_ratio(level as usize, p, n_c)?;
        *out = HqarfRateReport {
            level: r.level as u32,
            width: r.width as u64,
            payload_bits: r.payload_bits,
            source_bits: r.source_bits,
            cr: r.cr,
            cr_exact: r.cr_exact,
            r: r.r,
        };
        Ok(())
    })
}

/// Packs `count` indices at `bits` each, MSB first.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn hqarf_pack_indices(
    indices: *const u32,
    count: usize,
    bits: u32,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
) -> HqarfStatus {
    guard(|| {
        let packed = codec::pack_indices(input(indices, count, "indices")?, bits)?;
        emit(&packed, out, out_cap, out_len)
    })
}

/// Unpacks `count` indices of `bits` each from exactly the bytes they need.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn hqarf_unpack_indices(
    bytes: *const u8,
    len: usize,
    count: usize,
    bits: u32,
    out: *mut u32,
    out_cap: usize,
) -> HqarfStatus {
    guard(|| {
        let idx = codec::unpack_indices(input(bytes, len, "bytes")?, count, bits)?;
        emit(&idx, out, out_cap, ptr::null_mut())
    })
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hqarf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn hqarf_status_name(status: HqarfStatus) -> *const c_char {
    let s: &'static CStr = match status {
        HqarfStatus::Ok => c"ok",
        HqarfStatus::NullArgument => c"null_argument",
        HqarfStatus::Io => c"io",
        HqarfStatus::Format => c"format",
        HqarfStatus::State => c"state",
        HqarfStatus::Integrity => c"integrity",
        HqarfStatus::Corruption => c"corruption",
        HqarfStatus::Config => c"config",
        HqarfStatus::Dimension => c"dimension",
        HqarfStatus::BufferTooSmall => c"buffer_too_small",
        HqarfStatus::Numerical => c"numerical",
        HqarfStatus::Panic => c"panic",
        HqarfStatus::Other => c"other",
    };
    s.as_ptr()
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn hqarf_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}
