//! C ABI for the sfhead library.
//!
//! Conventions: every object crosses the boundary as an opaque pointer with a
//! paired `_free` function; every fallible call returns an `SfStatus` code and
//! records a message retrievable through `sfhead_last_error`. No panics
//! escape; they are caught and reported as `SFHEAD_RUNTIME_ERROR`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sfhead::backbone::{BackboneConfig, Mode};
use sfhead::data::{load_dataset, save_dataset, DatasetManifest, SkeletonGraph, SkeletonSequence};
use sfhead::gradcheck::run_suite;
use sfhead::losses::LossConfig;
use sfhead::sf_head::SfHeadConfig;
use sfhead::synth::{synth_generate, SynthSpec};
use sfhead::tensor::Tensor;
use sfhead::trainer::{evaluate, load_checkpoint, save_checkpoint, train, Model, TrainConfig};

/// Result code of every fallible call in this API.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SfStatus {
    /// Success.
    SfheadOk = 0,
    /// A required pointer argument was null.
    SfheadNullArgument = 1,
    /// An argument value was rejected.
    SfheadInvalidArgument = 2,
    /// File input/output failed.
    SfheadIoError = 3,
    /// The operation itself failed.
    SfheadRuntimeError = 4,
}

/// Backbone/recipe preset for model construction.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SfProfile {
    /// Two-block backbone, 30-epoch recipe.
    SfheadProfileTiny = 0,
    /// Ten-block backbone, 90-epoch recipe.
    SfheadProfilePaper = 1,
}

/// Opaque dataset handle: samples, labels, and the skeleton graph.
pub struct SfDataset {
    manifest: DatasetManifest,
    sequences: Vec<SkeletonSequence>,
    graph: SkeletonGraph,
}

/// Opaque model handle: backbone plus auxiliary head.
pub struct SfModel {
    model: Model<f32>,
    profile: SfProfile,
    class_names: Vec<String>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn fail(status: SfStatus, msg: &str) -> SfStatus {
    set_error(msg);
    status
}

/// Copy the message of the most recent failure on this thread into `buf`
/// (NUL-terminated, truncated to `cap`). Returns the full length of the
/// message including the terminator; call with a null `buf` to size a buffer.
#[no_mangle]
pub extern "C" fn sfhead_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n - 1) = 0;
            }
        }
        bytes.len()
    })
}

/// Run `f`, converting panics into `SFHEAD_RUNTIME_ERROR`.
fn guarded(f: impl FnOnce() -> SfStatus) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| payload.downcast_ref::<&str>().copied())
                .unwrap_or("internal panic");
            fail(SfStatus::SfheadRuntimeError, msg)
        }
    }
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, SfStatus> {
    if ptr.is_null() {
        return Err(fail(SfStatus::SfheadNullArgument, "path is null"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail(SfStatus::SfheadInvalidArgument, "path is not valid UTF-8")),
    }
}

fn dataset_from_parts(
    manifest: DatasetManifest,
    sequences: Vec<SkeletonSequence>,
) -> Result<SfDataset, String> {
    let graph = SkeletonGraph::new(&manifest.edge_pairs(), manifest.joints)
        .map_err(|e| e.to_string())?;
    Ok(SfDataset { manifest, sequences, graph })
}

/// Generate the built-in 4-class synthetic benchmark deterministically.
///
/// # Safety
/// `out` must be a valid pointer; the result must be released with
/// `sfhead_dataset_free`.
#[no_mangle]
pub unsafe extern "C" fn sfhead_dataset_generate(
    samples_per_class: usize,
    t_target: usize,
    seed: u64,
    out: *mut *mut SfDataset,
) -> SfStatus {
    guarded(|| {
        if out.is_null() {
            return fail(SfStatus::SfheadNullArgument, "out is null");
        }
        if samples_per_class == 0 || t_target < 8 {
            return fail(
                SfStatus::SfheadInvalidArgument,
                "need samples_per_class >= 1 and t_target >= 8",
            );
        }
        let spec = SynthSpec::default_four_class(samples_per_class, t_target);
        match synth_generate(&spec, seed)
            .map_err(|e| e.to_string())
            .and_then(|(m, s)| dataset_from_parts(m, s))
        {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(ds));
                SfStatus::SfheadOk
            }
            Err(e) => fail(SfStatus::SfheadRuntimeError, &e),
        }
    })
}

/// Load a dataset directory (manifest.json + data.bin).
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sfhead_dataset_load(
    dir: *const c_char,
    out: *mut *mut SfDataset,
) -> SfStatus {
    guarded(|| {
        if out.is_null() {
            return fail(SfStatus::SfheadNullArgument, "out is null");
        }
        let dir = match path_arg(dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let loaded = load_dataset(dir)
            .map_err(|e| e.to_string())
            .and_then(|(m, s)| dataset_from_parts(m, s));
        match loaded {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(ds));
                SfStatus::SfheadOk
            }
            Err(e) => fail(SfStatus::SfheadIoError, &e),
        }
    })
}

/// Write a dataset to a directory.
///
/// # Safety
/// `ds` must come from this API; `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sfhead_dataset_save(ds: *const SfDataset, dir: *const c_char) -> SfStatus {
    guarded(|| {
        let Some(ds) = ds.as_ref() else {
            return fail(SfStatus::SfheadNullArgument, "dataset is null");
        };
        let dir = match path_arg(dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        if let Err(e) = std::fs::create_dir_all(dir) {
            return fail(SfStatus::SfheadIoError, &e.to_string());
        }
        match save_dataset(dir, &ds.manifest, &ds.sequences) {
            Ok(()) => SfStatus::SfheadOk,
            Err(e) => fail(SfStatus::SfheadIoError, &e.to_string()),
        }
    })
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or come from this API.
#[no_mangle]
pub unsafe extern "C" fn sfhead_dataset_len(ds: *const SfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.sequences.len())
}

/// Release a dataset handle. Null is a no-op.
///
/// # Safety
/// `ds` must be null or an unreleased handle from this API.
#[no_mangle]
pub unsafe extern "C" fn sfhead_dataset_free(ds: *mut SfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Create a model for the dataset's class count and skeleton.
///
/// # Safety
/// `ds` must come from this API and `out` be valid; release the result with
/// `sfhead_model_free`.
#[no_mangle]
pub unsafe extern "C" fn sfhead_model_new(
    ds: *const SfDataset,
    profile: SfProfile,
    seed: u64,
    out: *mut *mut SfModel,
) -> SfStatus {
    guarded(|| {
        if out.is_null() {
            return fail(SfStatus::SfheadNullArgument, "out is null");
        }
        let Some(ds) = ds.as_ref() else {
            return fail(SfStatus::SfheadNullArgument, "dataset is null");
        };
        let classes = ds.manifest.num_classes();
        let joints = ds.manifest.joints;
        let (bb, head) = match profile {
            SfProfile::SfheadProfileTiny => (
                BackboneConfig::tiny(classes, joints),
                SfHeadConfig { attach_blocks: vec![1], ..SfHeadConfig::default() },
            ),
            SfProfile::SfheadProfilePaper => {
                (BackboneConfig::paper_scale(classes, joints), SfHeadConfig::default())
            }
        };
        let model = Model::new(bb, head, &ds.graph, seed);
        *out = Box::into_raw(Box::new(SfModel {
            model,
            profile,
            class_names: ds.manifest.class_names.clone(),
        }));
        SfStatus::SfheadOk
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `m` must be null or an unreleased handle from this API.
#[no_mangle]
pub unsafe extern "C" fn sfhead_model_free(m: *mut SfModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Trainable parameter count of the auxiliary head; 0 for a null handle.
///
/// # Safety
/// `m` must be null or come from this API.
#[no_mangle]
pub unsafe extern "C" fn sfhead_model_head_param_count(m: *const SfModel) -> usize {
    m.as_ref().map_or(0, |h| h.model.head.param_count())
}

/// Trainable parameter count of the backbone; 0 for a null handle.
///
/// # Safety
/// `m` must be null or come from this API.
#[no_mangle]
pub unsafe extern "C" fn sfhead_model_backbone_param_count(m: *const SfModel) -> usize {
    m.as_ref().map_or(0, |h| h.model.backbone.param_count())
}

/// Serialize the model; `include_head` false writes a backbone-only
/// (inference) checkpoint.
///
/// # Safety
/// `m` must come from this API; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sfhead_model_save(
    m: *const SfModel,
    path: *const c_char,
    include_head: bool,
) -> SfStatus {
    guarded(|| {
        let Some(h) = m.as_ref() else {
            return fail(SfStatus::SfheadNullArgument, "model is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_checkpoint(path, &h.model, include_head, 0, 0) {
            Ok(()) => SfStatus::SfheadOk,
            Err(e) => fail(SfStatus::SfheadIoError, &e.to_string()),
        }
    })
}

/// Load a checkpoint into a model of matching architecture.
///
/// # Safety
/// `m` must come from this API; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sfhead_model_load(m: *mut SfModel, path: *const c_char) -> SfStatus {
    guarded(|| {
        let Some(h) = m.as_ref() else {
            return fail(SfStatus::SfheadNullArgument, "model is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(path, &h.model) {
            Ok(_) => SfStatus::SfheadOk,
            Err(e) => fail(SfStatus::SfheadIoError, &e.to_string()),
        }
    })
}

/// Train in place with the profile's recipe; `epochs` 0 keeps the profile
/// default. On success writes the final validation accuracy (percent) through
/// `out_val_acc` when it is non-null.
///
/// # Safety
/// `m` and `ds` must come from this API; `out_val_acc` may be null.
#[no_mangle]
pub unsafe extern "C" fn sfhead_train(
    m: *mut SfModel,
    ds: *const SfDataset,
    epochs: u32,
    seed: u64,
    out_val_acc: *mut f64,
) -> SfStatus {
    guarded(|| {
        let Some(h) = m.as_ref() else {
            return fail(SfStatus::SfheadNullArgument, "model is null");
        };
        let Some(ds) = ds.as_ref() else {
            return fail(SfStatus::SfheadNullArgument, "dataset is null");
        };
        let mut cfg = match h.profile {
            SfProfile::SfheadProfileTiny => TrainConfig::desk(seed),
            SfProfile::SfheadProfilePaper => TrainConfig::paper(seed),
        };
        if epochs > 0 {
            cfg.epochs = epochs as usize;
            cfg.warmup_epochs = cfg.warmup_epochs.min(epochs as f64 / 2.0);
        }
        match train(&h.model, &ds.sequences, &h.class_names, &cfg, &LossConfig::default(), None) {
            Ok(outcome) => {
                if !out_val_acc.is_null() {
                    *out_val_acc = outcome.final_val_acc();
                }
                SfStatus::SfheadOk
            }
            Err(e) => fail(SfStatus::SfheadRuntimeError, &e.to_string()),
        }
    })
}

/// Eval-mode accuracy (percent) over a whole dataset.
///
/// # Safety
/// `m` and `ds` must come from this API; `out_accuracy` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sfhead_evaluate(
    m: *const SfModel,
    ds: *const SfDataset,
    out_accuracy: *mut f64,
) -> SfStatus {
    guarded(|| {
        let Some(h) = m.as_ref() else {
            return fail(SfStatus::SfheadNullArgument, "model is null");
        };
        let Some(ds) = ds.as_ref() else {
            return fail(SfStatus::SfheadNullArgument, "dataset is null");
        };
        if out_accuracy.is_null() {
            return fail(SfStatus::SfheadNullArgument, "out_accuracy is null");
        }
        let all: Vec<usize> = (0..ds.sequences.len()).collect();
        match evaluate(&h.model.backbone, &ds.sequences, &all, &h.class_names) {
            Ok(report) => {
                *out_accuracy = report.accuracy;
                SfStatus::SfheadOk
            }
            Err(e) => fail(SfStatus::SfheadRuntimeError, &e.to_string()),
        }
    })
}

/// Classify one skeleton sequence laid out as coords[channel][frame][joint]
/// with 3 channels.
///
/// # Safety
/// `m` must come from this API; `coords` must point to `3 * frames * joints`
/// floats; `out_label` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sfhead_predict(
    m: *const SfModel,
    coords: *const f32,
    frames: usize,
    joints: usize,
    out_label: *mut u32,
) -> SfStatus {
    guarded(|| {
        let Some(h) = m.as_ref() else {
            return fail(SfStatus::SfheadNullArgument, "model is null");
        };
        if coords.is_null() || out_label.is_null() {
            return fail(SfStatus::SfheadNullArgument, "coords/out_label is null");
        }
        if frames == 0 || joints == 0 {
            return fail(SfStatus::SfheadInvalidArgument, "frames and joints must be positive");
        }
        let n = 3 * frames * joints;
        let data = std::slice::from_raw_parts(coords, n).to_vec();
        if data.iter().any(|v| !v.is_finite()) {
            return fail(SfStatus::SfheadInvalidArgument, "coordinates must be finite");
        }
        let x = Tensor::<f32>::new(&[3, frames, joints], data);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, _) = h.model.backbone.forward(&x, Mode::Eval, &[], &mut rng);
        let v = logits.to_vec();
        let best = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i as u32)
            .unwrap_or(0);
        *out_label = best;
        SfStatus::SfheadOk
    })
}

/// Run the 64-bit gradient verification suite; returns OK only if every
/// check passes.
#[no_mangle]
pub extern "C" fn sfhead_gradcheck(seed: u64, instances: usize) -> SfStatus {
    guarded(|| {
        if instances == 0 {
            return fail(SfStatus::SfheadInvalidArgument, "instances must be positive");
        }
        let report = run_suite(seed, instances);
        if report.all_passed() {
            SfStatus::SfheadOk
        } else {
            fail(SfStatus::SfheadRuntimeError, &report.render())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn make_dataset() -> *mut SfDataset {
        let mut ds = std::ptr::null_mut();
        let st = unsafe { sfhead_dataset_generate(4, 8, 7, &mut ds) };
        assert_eq!(st, SfStatus::SfheadOk);
        ds
    }

    #[test]
    fn dataset_roundtrip_and_len() {
        let ds = make_dataset();
        assert_eq!(unsafe { sfhead_dataset_len(ds) }, 16);
        let dir = tempfile::tempdir().unwrap();
        let c = CString::new(dir.path().join("d").to_str().unwrap()).unwrap();
        assert_eq!(unsafe { sfhead_dataset_save(ds, c.as_ptr()) }, SfStatus::SfheadOk);
        let mut reloaded = std::ptr::null_mut();
        assert_eq!(unsafe { sfhead_dataset_load(c.as_ptr(), &mut reloaded) }, SfStatus::SfheadOk);
        assert_eq!(unsafe { sfhead_dataset_len(reloaded) }, 16);
        unsafe {
            sfhead_dataset_free(ds);
            sfhead_dataset_free(reloaded);
        }
    }

    #[test]
    fn null_arguments_are_reported_not_fatal() {
        let st = unsafe { sfhead_dataset_load(std::ptr::null(), std::ptr::null_mut()) };
        assert_eq!(st, SfStatus::SfheadNullArgument);
        let needed = sfhead_last_error(std::ptr::null_mut(), 0);
        assert!(needed > 1);
        let mut buf = vec![0i8; needed];
        sfhead_last_error(buf.as_mut_ptr().cast(), buf.len());
        let msg = unsafe { CStr::from_ptr(buf.as_ptr().cast()) }.to_str().unwrap();
        assert!(!msg.is_empty());
    }

    #[test]
    fn model_lifecycle_train_save_load_predict() {
        let ds = make_dataset();
        let mut m = std::ptr::null_mut();
        let st = unsafe { sfhead_model_new(ds, SfProfile::SfheadProfileTiny, 1, &mut m) };
        assert_eq!(st, SfStatus::SfheadOk);
        assert!(unsafe { sfhead_model_head_param_count(m) } > 0);
        assert!(unsafe { sfhead_model_backbone_param_count(m) } > 0);

        let mut acc = -1.0f64;
        let st = unsafe { sfhead_train(m, ds, 1, 1, &mut acc) };
        assert_eq!(st, SfStatus::SfheadOk);
        assert!((0.0..=100.0).contains(&acc));

        let dir = tempfile::tempdir().unwrap();
        let ckpt = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(unsafe { sfhead_model_save(m, ckpt.as_ptr(), true) }, SfStatus::SfheadOk);

        let mut m2 = std::ptr::null_mut();
        unsafe { sfhead_model_new(ds, SfProfile::SfheadProfileTiny, 99, &mut m2) };
        assert_eq!(unsafe { sfhead_model_load(m2, ckpt.as_ptr()) }, SfStatus::SfheadOk);

        let mut acc2 = -1.0;
        assert_eq!(unsafe { sfhead_evaluate(m2, ds, &mut acc2) }, SfStatus::SfheadOk);

        let coords = vec![0.1f32; 3 * 8 * 11];
        let mut label = u32::MAX;
        let st = unsafe { sfhead_predict(m2, coords.as_ptr(), 8, 11, &mut label) };
        assert_eq!(st, SfStatus::SfheadOk);
        assert!(label < 4);

        unsafe {
            sfhead_model_free(m);
            sfhead_model_free(m2);
            sfhead_dataset_free(ds);
        }
    }

    #[test]
    fn gradcheck_entry_point_passes() {
        assert_eq!(sfhead_gradcheck(0, 2), SfStatus::SfheadOk);
    }

    #[test]
    fn generated_header_covers_the_api() {
        let header = std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sfhead.h"),
        )
        .expect("header generated at build time");
        for sym in [
            "sfhead_last_error",
            "sfhead_dataset_generate",
            "sfhead_dataset_load",
            "sfhead_dataset_save",
            "sfhead_dataset_len",
            "sfhead_dataset_free",
            "sfhead_model_new",
            "sfhead_model_free",
            "sfhead_model_head_param_count",
            "sfhead_model_save",
            "sfhead_model_load",
            "sfhead_train",
            "sfhead_evaluate",
            "sfhead_predict",
            "sfhead_gradcheck",
            "SFHEAD_H",
        ] {
            assert!(header.contains(sym), "header is missing {sym}");
        }
    }
}
