//! C ABI over `corrseg`.
//!
//! Every fallible call returns a [`CorrsegStatus`]; on failure a message is
//! available from [`corrseg_last_error`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Null handles are
//! accepted by every `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use corrseg::config::PipelineConfig;
use corrseg::correlation::{
    masked_attention, semantic_matrix, AttentionMode, InteractionMask, SimilarityMatrix, SimilaritySource,
};
use corrseg::evaluation::ConfusionAccumulator;
use corrseg::masks::{rasterize_to_patches, RegionMaskSet};
use corrseg::providers::{resolve_provider, Provider};
use corrseg::segmentation::{Segmenter, Vocabulary};
use corrseg::Error;
use ndarray::Array2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrsegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Io = 5,
    Provider = 6,
    EmptyEvaluation = 7,
    Internal = 8,
}

/// Attention normalization used by [`corrseg_masked_attention`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrsegAttentionMode {
    /// Divide by sqrt(param), param = feature dimension.
    ScopeOnly = 0,
    /// Divide by param, a temperature.
    ValueRecon = 1,
}

/// Pipeline configuration.
pub struct CorrsegConfig(PipelineConfig);

/// A resolved provider plus class vocabulary.
pub struct CorrsegSession {
    provider: Box<dyn Provider>,
    config: PipelineConfig,
    vocabulary: Vocabulary,
}

/// Label map from one segmentation call.
pub struct CorrsegResult {
    labels: Vec<u32>,
    height: usize,
    width: usize,
    num_classes: usize,
}

/// Streaming intersection/union counts.
pub struct CorrsegMiou(ConfusionAccumulator);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> CorrsegStatus {
    match err {
        Error::Shape(_) => CorrsegStatus::Shape,
        Error::InvalidInput(_) | Error::NonFinite(_) | Error::ZeroNorm { .. } | Error::DuplicateName(_) => {
            CorrsegStatus::InvalidArgument
        }
        Error::Config(_) | Error::Json(_) => CorrsegStatus::Config,
        Error::Io { .. } | Error::Image { .. } => CorrsegStatus::Io,
        Error::ProviderMissing(_) | Error::FixtureMissing(_) | Error::Archive(_) => CorrsegStatus::Provider,
        Error::EmptyEvaluation => CorrsegStatus::EmptyEvaluation,
    }
}

struct Fail(CorrsegStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CorrsegStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(CorrsegStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CorrsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CorrsegStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CorrsegStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn corrseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn corrseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default configuration.
#[no_mangle]
pub extern "C" fn corrseg_config_new() -> *mut CorrsegConfig {
    Box::into_raw(Box::new(CorrsegConfig(PipelineConfig::default())))
}

/// Parse a JSON configuration; unspecified keys take their defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn corrseg_config_from_json(json: *const c_char, out: *mut *mut CorrsegConfig) -> CorrsegStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg: PipelineConfig = serde_json::from_str(str_arg(json, "json")?).map_err(Error::from)?;
        cfg.validate()?;
        *out = Box::into_raw(Box::new(CorrsegConfig(cfg)));
        Ok(())
    })
}

/// Set the provider spec, e.g. `synthetic` or `fixture:<dir>`.
///
/// # Safety
/// `config` must come from this library; `spec` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn corrseg_config_set_provider(config: *mut CorrsegConfig, spec: *const c_char) -> CorrsegStatus {
    guard(|| {
        let cfg = out_arg(config, "config")?;
        cfg.0.provider = str_arg(spec, "spec")?.to_string();
        Ok(())
    })
}

/// # Safety
/// `config` must be null or come from this library, and not be used after.
#[no_mangle]
pub unsafe extern "C" fn corrseg_config_free(config: *mut CorrsegConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Resolve the configured provider for a class list. The configuration is
/// copied.
///
/// # Safety
/// `classes` must point to `num_classes` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn corrseg_session_new(
    config: *const CorrsegConfig,
    classes: *const *const c_char,
    num_classes: usize,
    out: *mut *mut CorrsegSession,
) -> CorrsegStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = ref_arg(config, "config")?.0.clone();
        cfg.validate()?;
        if num_classes == 0 {
            return Err(invalid("at least one class is required"));
        }
        let names = slice_arg(classes, num_classes, "classes")?
            .iter()
            .map(|&p| str_arg(p, "class name").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let provider = resolve_provider(&cfg.provider, cfg.clip)?;
        let vocabulary = Vocabulary::new(names);
        // fail early on bad vocabularies
        Segmenter::new(provider.as_ref(), cfg.clone(), &vocabulary)?;
        *out = Box::into_raw(Box::new(CorrsegSession {
            provider,
            config: cfg,
            vocabulary,
        }));
        Ok(())
    })
}

/// # Safety
/// `session` must be null or come from this library, and not be used after.
#[no_mangle]
pub unsafe extern "C" fn corrseg_session_free(session: *mut CorrsegSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

fn run_session(session: &CorrsegSession, image: &image::RgbImage) -> Result<CorrsegResult, Fail> {
    let seg = Segmenter::new(session.provider.as_ref(), session.config.clone(), &session.vocabulary)?;
    let outcome = seg.segment(image, None)?;
    let (height, width) = outcome.labels.dim();
    Ok(CorrsegResult {
        labels: outcome.labels.iter().copied().collect(),
        height,
        width,
        num_classes: seg.classes().len(),
    })
}

/// Segment an interleaved RGB8 buffer of `height * width * 3` bytes.
///
/// # Safety
/// `rgb` must point to `height * width * 3` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn corrseg_segment_rgb(
    session: *const CorrsegSession,
    rgb: *const u8,
    width: u32,
    height: u32,
    out: *mut *mut CorrsegResult,
) -> CorrsegStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let session = ref_arg(session, "session")?;
        if width == 0 || height == 0 {
            return Err(invalid("image must be non-empty"));
        }
        let len = width as usize * height as usize * 3;
        let data = slice_arg(rgb, len, "rgb")?.to_vec();
        let img = image::RgbImage::from_raw(width, height, data).ok_or_else(|| invalid("rgb buffer size"))?;
        *out = Box::into_raw(Box::new(run_session(session, &img)?));
        Ok(())
    })
}

/// Segment an image file.
///
/// # Safety
/// `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn corrseg_segment_file(
    session: *const CorrsegSession,
    path: *const c_char,
    out: *mut *mut CorrsegResult,
) -> CorrsegStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let session = ref_arg(session, "session")?;
        let img = corrseg::imageio::read_rgb(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(run_session(session, &img)?));
        Ok(())
    })
}

/// # Safety
/// `result` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn corrseg_result_height(result: *const CorrsegResult) -> usize {
    result.as_ref().map_or(0, |r| r.height)
}

/// # Safety
/// `result` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn corrseg_result_width(result: *const CorrsegResult) -> usize {
    result.as_ref().map_or(0, |r| r.width)
}

/// # Safety
/// `result` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn corrseg_result_num_classes(result: *const CorrsegResult) -> usize {
    result.as_ref().map_or(0, |r| r.num_classes)
}

/// Row-major `height * width` class indices, owned by `result`.
///
/// # Safety
/// `result` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn corrseg_result_labels(result: *const CorrsegResult) -> *const u32 {
    result.as_ref().map_or(ptr::null(), |r| r.labels.as_ptr())
}

/// # Safety
/// `result` must be null or come from this library, and not be used after.
#[no_mangle]
pub unsafe extern "C" fn corrseg_result_free(result: *mut CorrsegResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// mIoU accumulator over `num_classes` classes; null if `num_classes` is 0.
#[no_mangle]
pub extern "C" fn corrseg_miou_new(num_classes: usize) -> *mut CorrsegMiou {
    if num_classes == 0 {
        set_error("num_classes must be positive");
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(CorrsegMiou(ConfusionAccumulator::new(num_classes))))
}

/// Add `len` prediction/ground-truth pairs; ground truth equal to `ignore`
/// is skipped.
///
/// # Safety
/// `pred` and `gt` must each point to `len` readable elements.
#[no_mangle]
pub unsafe extern "C" fn corrseg_miou_update(
    acc: *mut CorrsegMiou,
    pred: *const u32,
    gt: *const u8,
    len: usize,
    ignore: u8,
) -> CorrsegStatus {
    guard(|| {
        let acc = out_arg(acc, "acc")?;
        acc.0
            .update(slice_arg(pred, len, "pred")?, slice_arg(gt, len, "gt")?, ignore)?;
        Ok(())
    })
}

/// IoU of one class; `EmptyEvaluation` if the class never occurred.
///
/// # Safety
/// `acc` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn corrseg_miou_class(acc: *const CorrsegMiou, class: usize, out: *mut f64) -> CorrsegStatus {
    guard(|| {
        let acc = ref_arg(acc, "acc")?;
        let out = out_arg(out, "out")?;
        if class >= acc.0.num_classes() {
            return Err(invalid(format!("class {class} out of range")));
        }
        *out = acc.0.iou(class).ok_or(Error::EmptyEvaluation)?;
        Ok(())
    })
}

/// Mean IoU over the classes seen so far.
///
/// # Safety
/// `acc` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn corrseg_miou_value(acc: *const CorrsegMiou, out: *mut f64) -> CorrsegStatus {
    guard(|| {
        let acc = ref_arg(acc, "acc")?;
        *out_arg(out, "out")? = acc.0.miou()?;
        Ok(())
    })
}

/// # Safety
/// `acc` must be null or come from this library, and not be used after.
#[no_mangle]
pub unsafe extern "C" fn corrseg_miou_free(acc: *mut CorrsegMiou) {
    if !acc.is_null() {
        drop(Box::from_raw(acc));
    }
}

unsafe fn square(s: *const f32, n: usize) -> Result<SimilarityMatrix, Fail> {
    let values = slice_arg(s, n * n, "similarity")?.to_vec();
    Ok(SimilarityMatrix {
        values: Array2::from_shape_vec((n, n), values).map_err(|e| invalid(e.to_string()))?,
        source: SimilaritySource::DinoQk,
        normalized: true,
    })
}

/// Interaction matrix for `n` patches. `regions[i]` is the region of patch
/// `i` (0 = unsegmented); `similarity` is `n * n` row-major. Writes
/// `n * n` bytes of 0/1 to `out`.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn corrseg_semantic_matrix(
    regions: *const u32,
    similarity: *const f32,
    n: usize,
    out: *mut u8,
) -> CorrsegStatus {
    guard(|| {
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        let labels = slice_arg(regions, n, "regions")?;
        let set = RegionMaskSet::from_pixel_labels(1, n, labels)?;
        let set = rasterize_to_patches(&set, 1, n, 1)?;
        let e = semantic_matrix(&set, &square(similarity, n)?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let out = std::slice::from_raw_parts_mut(out, n * n);
        for (o, &b) in out.iter_mut().zip(e.e().iter()) {
            *o = b as u8;
        }
        Ok(())
    })
}

/// Row-wise masked softmax. `mask` is `n * n` bytes, non-zero = allowed;
/// its diagonal must be set and it must be symmetric. Writes `n * n`
/// floats to `out`.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn corrseg_masked_attention(
    similarity: *const f32,
    mask: *const u8,
    n: usize,
    mode: CorrsegAttentionMode,
    param: f64,
    out: *mut f32,
) -> CorrsegStatus {
    guard(|| {
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        let s = square(similarity, n)?;
        let e: Vec<bool> = slice_arg(mask, n * n, "mask")?.iter().map(|&b| b != 0).collect();
        let e = InteractionMask::from_matrix(Array2::from_shape_vec((n, n), e).map_err(|e| invalid(e.to_string()))?)?;
        let mode = match mode {
            CorrsegAttentionMode::ScopeOnly => {
                if !(param >= 1.0 && param.fract() == 0.0) {
                    return Err(invalid("scope-only mode needs a positive integer dimension"));
                }
                AttentionMode::ScopeOnly { d: param as usize }
            }
            CorrsegAttentionMode::ValueRecon => AttentionMode::ValueRecon { tau: param as f32 },
        };
        let attn = masked_attention(&s, &e, mode)?;
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, n * n).copy_from_slice(attn.as_slice().expect("standard layout"));
        Ok(())
    })
}
