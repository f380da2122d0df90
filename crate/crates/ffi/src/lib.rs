//! C ABI for asymtrans.
//!
//! Objects cross the boundary as opaque handles created by `*_generate`/`*_read`/
//! `*_load` and released with the matching `*_free`. Every fallible call
//! returns an [`AtStatus`]; on failure [`at_last_error`] describes the cause
//! for the calling thread. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use asymtrans::cmnist::rng::DetRng;
use asymtrans::cmnist::{self, CmnistError, PairedDataset, Split, COLOR_LEN, GRAY_LEN};
use asymtrans::colormetrics::{MetricsError, MetricsReport};
use asymtrans::m21gan::{Domain, ModelBundle, ModelError, StyleInput};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    BufferTooSmall = 5,
    Runtime = 6,
    Panic = 7,
}

/// Paired Colorized-MNIST dataset.
pub struct AtDataset(PairedDataset);

/// Trained translation model.
pub struct AtModel(ModelBundle);

/// Color metrics of generated vs real color images.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AtMetrics {
    pub recall_red: f64,
    pub recall_green: f64,
    pub recall_blue: f64,
    pub recall_avg: f64,
    pub unique_color_count: u64,
    pub n_bins: u32,
}

/// Bytes of one 28x28 RGB image.
pub const AT_COLOR_IMAGE_LEN: usize = 2352;
/// Bytes of one 28x28 grayscale image.
pub const AT_GRAY_IMAGE_LEN: usize = 784;
pub const AT_DOMAIN_COLOR: u32 = 0;
pub const AT_DOMAIN_GRAY: u32 = 1;
pub const AT_SPLIT_TRAIN: u32 = 0;
pub const AT_SPLIT_TEST: u32 = 1;

const CHUNK: usize = 64;
const _: () = assert!(AT_COLOR_IMAGE_LEN == COLOR_LEN && AT_GRAY_IMAGE_LEN == GRAY_LEN);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(AtStatus, String);

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

impl From<CmnistError> for Failure {
    fn from(e: CmnistError) -> Self {
        let status = if matches!(e, CmnistError::Io(_)) {
            AtStatus::Io
        } else {
            AtStatus::Format
        };
        Failure(status, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::Io(_) => AtStatus::Io,
            ModelError::Checkpoint(_) | ModelError::Fingerprint { .. } => AtStatus::Format,
            _ => AtStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure(AtStatus::InvalidArgument, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AtStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting failures and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            AtStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(AtStatus::NullPointer, format!("{name} is null"))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn images<'a>(data: *const u8, count: usize, len: usize, name: &str) -> Result<Vec<&'a [u8]>, Failure> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if data.is_null() {
        return Err(null(name));
    }
    let total = count
        .checked_mul(len)
        .ok_or_else(|| invalid(format!("{name}: size overflow")))?;
    let all = std::slice::from_raw_parts(data, total);
    Ok(all.chunks_exact(len).collect())
}

fn domain(code: u32) -> Result<Domain, Failure> {
    match code {
        AT_DOMAIN_COLOR => Ok(Domain::A),
        AT_DOMAIN_GRAY => Ok(Domain::B),
        other => Err(invalid(format!("unknown domain code {other}"))),
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn at_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn at_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from MNIST IDX files; `count == 0` takes every image.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_dataset_generate(
    images_path: *const c_char,
    labels_path: *const c_char,
    seed: u64,
    count: usize,
    split: u32,
    out: *mut *mut AtDataset,
) -> AtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let split = match split {
            AT_SPLIT_TRAIN => Split::Train,
            AT_SPLIT_TEST => Split::Test,
            other => return Err(invalid(format!("unknown split code {other}"))),
        };
        let mnist = cmnist::load_mnist_idx(
            &path_arg(images_path, "images_path")?,
            &path_arg(labels_path, "labels_path")?,
        )?;
        let count = if count == 0 { mnist.len() } else { count };
        let ds = cmnist::generate_dataset(&mnist, seed, count, split)?;
        *out = Box::into_raw(Box::new(AtDataset(ds)));
        Ok(())
    })
}

/// Reads a CMN1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_dataset_read(path: *const c_char, out: *mut *mut AtDataset) -> AtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = cmnist::read_dataset(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(AtDataset(ds)));
        Ok(())
    })
}

/// Writes a CMN1 file.
///
/// # Safety
/// `ds` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn at_dataset_write(ds: *const AtDataset, path: *const c_char) -> AtStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        cmnist::write_dataset(&ds.0, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn at_dataset_len(ds: *const AtDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Seed the dataset's colors were drawn with; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn at_dataset_seed(ds: *const AtDataset) -> u64 {
    ds.as_ref().map_or(0, |d| d.0.seed)
}

unsafe fn copy_sample(
    ds: *const AtDataset,
    index: usize,
    buf: *mut u8,
    buf_len: usize,
    pick: impl Fn(&cmnist::PairedSample) -> &[u8],
) -> AtStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let sample =
            ds.0.samples
                .get(index)
                .ok_or_else(|| invalid(format!("index {index} out of range")))?;
        let bytes = pick(sample);
        if buf_len < bytes.len() {
            return Err(Failure(
                AtStatus::BufferTooSmall,
                format!("need {} bytes, got {buf_len}", bytes.len()),
            ));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
        Ok(())
    })
}

/// Copies sample `index`'s RGB image (`AT_COLOR_IMAGE_LEN` bytes) into `buf`.
///
/// # Safety
/// `ds` must come from this library; `buf` must hold `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn at_dataset_color_image(
    ds: *const AtDataset,
    index: usize,
    buf: *mut u8,
    buf_len: usize,
) -> AtStatus {
    copy_sample(ds, index, buf, buf_len, |s| &s.color_image[..])
}

/// Copies sample `index`'s grayscale image (`AT_GRAY_IMAGE_LEN` bytes) into `buf`.
///
/// # Safety
/// `ds` must come from this library; `buf` must hold `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn at_dataset_gray_image(
    ds: *const AtDataset,
    index: usize,
    buf: *mut u8,
    buf_len: usize,
) -> AtStatus {
    copy_sample(ds, index, buf, buf_len, |s| s.gray.pixels())
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `ds` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn at_dataset_free(ds: *mut AtDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Color Recall and Unique Color Count of `gen_count` generated images
/// against `real_count` real ones, both packed `AT_COLOR_IMAGE_LEN` bytes each.
///
/// # Safety
/// Buffers must hold `count * AT_COLOR_IMAGE_LEN` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_metrics_compute(
    real: *const u8,
    real_count: usize,
    generated: *const u8,
    gen_count: usize,
    n_bins: u32,
    out: *mut AtMetrics,
) -> AtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = images(real, real_count, COLOR_LEN, "real")?;
        let g = images(generated, gen_count, COLOR_LEN, "generated")?;
        let rep = MetricsReport::from_images(&r, &g, n_bins as usize, None)?;
        *out = AtMetrics {
            recall_red: rep.recall_red,
            recall_green: rep.recall_green,
            recall_blue: rep.recall_blue,
            recall_avg: rep.recall_avg,
            unique_color_count: rep.unique_color_count as u64,
            n_bins,
        };
        Ok(())
    })
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn at_model_load(path: *const c_char, out: *mut *mut AtModel) -> AtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = ModelBundle::load(&path_arg(path, "path")?, None)?;
        *out = Box::into_raw(Box::new(AtModel(m)));
        Ok(())
    })
}

/// Translates `count` packed 28x28 images into `target_domain`
/// (`AT_DOMAIN_COLOR` or `AT_DOMAIN_GRAY`). Multi-modal targets use one
/// latent style per image drawn from `seed`; a gated uni-modal target uses
/// the zero style. `out` receives `count` images of the target's size.
///
/// # Safety
/// `model` must come from this library; `input` must hold `count` source
/// images and `out` `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn at_model_translate(
    model: *const AtModel,
    input: *const u8,
    count: usize,
    target_domain: u32,
    seed: u64,
    out: *mut u8,
    out_len: usize,
) -> AtStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let target = domain(target_domain)?;
        let source = target.other();
        if count == 0 {
            return Err(invalid("count must be positive"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let in_len = GRAY_LEN * source.channels();
        let need = count * GRAY_LEN * target.channels();
        if out_len < need {
            return Err(Failure(
                AtStatus::BufferTooSmall,
                format!("need {need} bytes, got {out_len}"),
            ));
        }
        let x = cmnist::to_model_tensor(&images(input, count, in_len, "input")?, source.channels())?;
        let style = if target.is_unimodal() && m.config.zero_style_gating {
            StyleInput::ZeroStyle
        } else {
            StyleInput::Latent(m.sample_latents(count, &mut DetRng::new(seed)))
        };
        let y = m.translate_tensor(&x, source, target, &style, CHUNK)?;
        let imgs = cmnist::from_model_tensor(&y)?;
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (chunk, img) in dst.chunks_exact_mut(GRAY_LEN * target.channels()).zip(&imgs) {
            chunk.copy_from_slice(img);
        }
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn at_model_free(model: *mut AtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
