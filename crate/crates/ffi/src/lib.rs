//! C interface to depthpose: load or create a model, run pose inference on a
//! depth buffer, and read the decoded skeletons.
//!
//! Every fallible function returns a [`DpStatus`]; on failure a message is
//! available from [`dp_last_error`] on the same thread. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use depthpose::codec::{DecodeParams, Skeleton};
use depthpose::datapipe::{degrade, normalize, DepthImage, DEFAULT_D_MAX};
use depthpose::eval::predict;
use depthpose::model::{Model, ModelConfig};
use depthpose::trainer::{load_checkpoint, save_checkpoint, Checkpoint, TrainConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Model = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// A network with its training configuration.
pub struct DpModel {
    model: Model,
    config: TrainConfig,
}

/// Skeletons decoded from one image, in full-resolution pixel coordinates.
pub struct DpPoses {
    skeletons: Vec<Skeleton>,
    num_joints: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DpKeypoint {
    pub x: f32,
    pub y: f32,
    pub score: f32,
    /// 1 when the joint was detected, 0 otherwise.
    pub present: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

struct Fail(DpStatus, String);

impl Fail {
    fn new(status: DpStatus, msg: impl std::fmt::Display) -> Self {
        Self(status, msg.to_string())
    }
}

/// Runs `f`, recording its error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DpStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            DpStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::new(DpStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    non_null(p, "path")?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::new(DpStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn checkpoint_status(e: &depthpose::trainer::CheckpointError) -> DpStatus {
    use depthpose::trainer::CheckpointError as E;
    match e {
        E::Io(_) => DpStatus::Io,
        E::Model(_) | E::Mismatch(_) => DpStatus::Model,
        _ => DpStatus::Format,
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn dp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A freshly initialized desk-scale model trained for `factor` (8 or 10).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dp_model_new_desk(seed: u64, factor: u32, out: *mut *mut DpModel) -> DpStatus {
    guard(|| {
        non_null(out, "out")?;
        if factor != 8 && factor != 10 {
            return Err(Fail::new(DpStatus::InvalidArgument, format!("factor must be 8 or 10, got {factor}")));
        }
        let config = TrainConfig {
            seed,
            factor: factor as usize,
            model: ModelConfig::desk(),
            ..TrainConfig::default()
        };
        let model = Model::build(&config.model, seed).map_err(|e| Fail::new(DpStatus::Model, e))?;
        *out = Box::into_raw(Box::new(DpModel { model, config }));
        Ok(())
    })
}

/// Loads a checkpoint written by the trainer (with its config sidecar).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_model_load(path: *const c_char, out: *mut *mut DpModel) -> DpStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let ckpt = load_checkpoint(&path).map_err(|e| Fail::new(checkpoint_status(&e), format!("{}: {e}", path.display())))?;
        let config = ckpt
            .config
            .clone()
            .ok_or_else(|| Fail::new(DpStatus::Format, format!("{}: no config sidecar", path.display())))?;
        let model = ckpt.to_model().map_err(|e| Fail::new(checkpoint_status(&e), e))?;
        *out = Box::into_raw(Box::new(DpModel { model, config }));
        Ok(())
    })
}

/// Writes the model as a checkpoint at iteration 0 plus its config sidecar.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dp_model_save(model: *const DpModel, path: *const c_char) -> DpStatus {
    guard(|| {
        non_null(model, "model")?;
        let m = &*model;
        let path = path_arg(path)?;
        let ckpt = Checkpoint::from_model(&m.model, 0, m.config.seed, Some(m.config.clone()));
        save_checkpoint(&path, &ckpt).map_err(|e| Fail::new(checkpoint_status(&e), format!("{}: {e}", path.display())))
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dp_model_free(model: *mut DpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Joint count and downsampling factor of the model.
///
/// # Safety
/// `model` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_model_info(model: *const DpModel, num_joints: *mut usize, factor: *mut u32) -> DpStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(num_joints, "num_joints")?;
        non_null(factor, "factor")?;
        let m = &*model;
        *num_joints = m.model.config().topology.num_joints();
        *factor = m.config.factor as u32;
        Ok(())
    })
}

/// Estimates poses on a row-major depth buffer in millimetres.
///
/// With `full_resolution` nonzero the buffer is degraded by the model's factor
/// first; otherwise it is taken as the low-resolution input. `flip` nonzero
/// enables the flip test. Coordinates are in the full-resolution frame.
///
/// # Safety
/// `depth` must point to `width * height` values; `model` must be live and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_model_infer(
    model: *const DpModel,
    depth: *const u16,
    width: usize,
    height: usize,
    full_resolution: i32,
    flip: i32,
    out: *mut *mut DpPoses,
) -> DpStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(depth, "depth")?;
        non_null(out, "out")?;
        let m = &*model;
        let n = width
            .checked_mul(height)
            .filter(|&n| n > 0)
            .ok_or_else(|| Fail::new(DpStatus::InvalidArgument, format!("bad image size {width}x{height}")))?;
        let raw = std::slice::from_raw_parts(depth, n).to_vec();
        let img = DepthImage::new(width, height, raw).map_err(|e| Fail::new(DpStatus::InvalidArgument, e))?;
        let factor = m.config.factor;
        let mut lr = normalize(&img, DEFAULT_D_MAX);
        if full_resolution != 0 {
            lr = degrade(&lr, factor).map_err(|e| Fail::new(DpStatus::InvalidArgument, e))?.0;
        }
        let skeletons =
            predict(&m.model, &lr, factor, flip != 0, &DecodeParams::default()).map_err(|e| Fail::new(DpStatus::Model, e))?;
        let num_joints = m.model.config().topology.num_joints();
        *out = Box::into_raw(Box::new(DpPoses { skeletons, num_joints }));
        Ok(())
    })
}

/// Number of persons; 0 for a null handle.
///
/// # Safety
/// `poses` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dp_poses_count(poses: *const DpPoses) -> usize {
    poses.as_ref().map_or(0, |p| p.skeletons.len())
}

/// # Safety
/// `poses` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_poses_person_score(poses: *const DpPoses, person: usize, out: *mut f32) -> DpStatus {
    guard(|| {
        non_null(poses, "poses")?;
        non_null(out, "out")?;
        let s = (&*poses)
            .skeletons
            .get(person)
            .ok_or_else(|| Fail::new(DpStatus::OutOfRange, format!("person {person} out of range")))?;
        *out = s.person_score;
        Ok(())
    })
}

/// Keypoint `joint` of `person`; absent joints report `present = 0`.
///
/// # Safety
/// `poses` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_poses_keypoint(poses: *const DpPoses, person: usize, joint: usize, out: *mut DpKeypoint) -> DpStatus {
    guard(|| {
        non_null(poses, "poses")?;
        non_null(out, "out")?;
        let p = &*poses;
        let s = p
            .skeletons
            .get(person)
            .ok_or_else(|| Fail::new(DpStatus::OutOfRange, format!("person {person} out of range")))?;
        if joint >= p.num_joints {
            return Err(Fail::new(DpStatus::OutOfRange, format!("joint {joint} out of range")));
        }
        *out = s.get(joint).map_or(DpKeypoint::default(), |k| DpKeypoint {
            x: k.x,
            y: k.y,
            score: k.score,
            present: 1,
        });
        Ok(())
    })
}

/// # Safety
/// `poses` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dp_poses_free(poses: *mut DpPoses) {
    if !poses.is_null() {
        drop(Box::from_raw(poses));
    }
}
