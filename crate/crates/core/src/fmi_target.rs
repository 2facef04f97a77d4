//! Drives an unpacked FMU through its exported library functions, the way
//! a third-party import tool would.

use std::ffi::{CStr, CString, c_char, c_void};
use std::path::{Path, PathBuf};
use std::ptr;

use libloading::Library;

use crate::fmi::{Fmi3Instance, Fmi3Status, Fmi3ValueReference};
use crate::harness::{CoSimTarget, HarnessError};
use crate::model_description::{ModelDescription, VarType};
use crate::packager::{self, BINARIES_DIR};
use crate::property::PropertyValue;

type InstantiateFn = unsafe extern "C" fn(
    *const c_char,
    *const c_char,
    *const c_char,
    bool,
    bool,
    bool,
    bool,
    *const Fmi3ValueReference,
    usize,
    *mut c_void,
    Option<unsafe extern "C" fn(*mut c_void, Fmi3Status, *const c_char, *const c_char)>,
    *const c_void,
) -> Fmi3Instance;
type EnterInitFn = unsafe extern "C" fn(Fmi3Instance, bool, f64, f64, bool, f64) -> Fmi3Status;
type InstanceFn = unsafe extern "C" fn(Fmi3Instance) -> Fmi3Status;
type FreeFn = unsafe extern "C" fn(Fmi3Instance);
type GetFn<T> = unsafe extern "C" fn(Fmi3Instance, *const Fmi3ValueReference, usize, *mut T, usize) -> Fmi3Status;
type SetFn<T> = unsafe extern "C" fn(Fmi3Instance, *const Fmi3ValueReference, usize, *const T, usize) -> Fmi3Status;
type DoStepFn =
    unsafe extern "C" fn(Fmi3Instance, f64, f64, bool, *mut bool, *mut bool, *mut bool, *mut f64) -> Fmi3Status;

struct Api {
    instantiate: InstantiateFn,
    enter_init: EnterInitFn,
    exit_init: InstanceFn,
    get_f64: GetFn<f64>,
    get_f32: GetFn<f32>,
    get_u32: GetFn<u32>,
    set_f64: SetFn<f64>,
    set_f32: SetFn<f32>,
    set_u32: SetFn<u32>,
    do_step: DoStepFn,
    terminate: InstanceFn,
    free: FreeFn,
}

unsafe extern "C" fn log_message(
    _env: *mut c_void,
    status: Fmi3Status,
    category: *const c_char,
    message: *const c_char,
) {
    let text = |p: *const c_char| {
        if p.is_null() {
            String::new()
        } else {
            // SAFETY: the library passes NUL-terminated strings.
            unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
        }
    };
    log::warn!("[{status:?}] {}: {}", text(category), text(message));
}

/// A loaded FMU library with one live instance.
pub struct FmiTarget {
    instance: Fmi3Instance,
    api: Api,
    terminated: bool,
    // declared last: dropped after the instance is freed
    _library: Library,
}

fn check(status: Fmi3Status, what: &str) -> Result<(), HarnessError> {
    match status {
        Fmi3Status::Ok | Fmi3Status::Warning => Ok(()),
        other => Err(HarnessError::Fmi(format!("{what} returned {other:?}"))),
    }
}

/// Path of the library for the host platform inside an unpacked FMU.
pub fn library_path(root: &Path, md: &ModelDescription) -> Result<PathBuf, HarnessError> {
    let platform = packager::host_platform();
    let ext = packager::library_extension(&platform)
        .ok_or_else(|| HarnessError::Fmi(format!("unsupported host platform {platform}")))?;
    Ok(root.join(BINARIES_DIR).join(&platform).join(format!("{}.{ext}", md.co_simulation.model_identifier)))
}

impl FmiTarget {
    /// Loads the library of the FMU unpacked at `root` and instantiates it.
    pub fn load(root: &Path, md: &ModelDescription) -> Result<FmiTarget, HarnessError> {
        let lib_path = library_path(root, md)?;
        let fail = |e: libloading::Error| HarnessError::Fmi(format!("{}: {e}", lib_path.display()));
        // SAFETY: loading runs the library's initializers; the FMU library
        // is trusted by the caller.
        let library = unsafe { Library::new(&lib_path) }.map_err(fail)?;
        // SAFETY: symbol types follow the FMI 3.0 headers.
        let api = unsafe {
            Api {
                instantiate: *library.get(b"fmi3InstantiateCoSimulation\0").map_err(fail)?,
                enter_init: *library.get(b"fmi3EnterInitializationMode\0").map_err(fail)?,
                exit_init: *library.get(b"fmi3ExitInitializationMode\0").map_err(fail)?,
                get_f64: *library.get(b"fmi3GetFloat64\0").map_err(fail)?,
                get_f32: *library.get(b"fmi3GetFloat32\0").map_err(fail)?,
                get_u32: *library.get(b"fmi3GetUInt32\0").map_err(fail)?,
                set_f64: *library.get(b"fmi3SetFloat64\0").map_err(fail)?,
                set_f32: *library.get(b"fmi3SetFloat32\0").map_err(fail)?,
                set_u32: *library.get(b"fmi3SetUInt32\0").map_err(fail)?,
                do_step: *library.get(b"fmi3DoStep\0").map_err(fail)?,
                terminate: *library.get(b"fmi3Terminate\0").map_err(fail)?,
                free: *library.get(b"fmi3FreeInstance\0").map_err(fail)?,
            }
        };
        let name = CString::new(md.model_name.as_str()).unwrap_or_default();
        let token = md.instantiation_token.as_deref().map(|t| CString::new(t).unwrap_or_default());
        let mut resources = root.join("resources").to_string_lossy().into_owned();
        resources.push(std::path::MAIN_SEPARATOR);
        let resources = CString::new(resources).map_err(|e| HarnessError::Fmi(e.to_string()))?;
        // SAFETY: all pointers are valid for the duration of the call.
        let instance = unsafe {
            (api.instantiate)(
                name.as_ptr(),
                token.as_ref().map_or(ptr::null(), |t| t.as_ptr()),
                resources.as_ptr(),
                false,
                true,
                false,
                false,
                ptr::null(),
                0,
                ptr::null_mut(),
                Some(log_message),
                ptr::null(),
            )
        };
        if instance.is_null() {
            return Err(HarnessError::Fmi("fmi3InstantiateCoSimulation failed".into()));
        }
        Ok(FmiTarget { instance, api, terminated: false, _library: library })
    }
}

impl CoSimTarget for FmiTarget {
    fn enter_initialization_mode(&mut self, start: f64) -> Result<(), HarnessError> {
        // SAFETY: live instance.
        check(
            unsafe { (self.api.enter_init)(self.instance, false, 0.0, start, false, 0.0) },
            "fmi3EnterInitializationMode",
        )
    }

    fn exit_initialization_mode(&mut self) -> Result<(), HarnessError> {
        // SAFETY: live instance.
        check(unsafe { (self.api.exit_init)(self.instance) }, "fmi3ExitInitializationMode")
    }

    fn set(&mut self, vr: u32, value: &PropertyValue) -> Result<(), HarnessError> {
        let vrs = [vr];
        // SAFETY: one reference and one value.
        let status = unsafe {
            match *value {
                PropertyValue::Float64(v) => (self.api.set_f64)(self.instance, vrs.as_ptr(), 1, &v, 1),
                PropertyValue::Float32(v) => (self.api.set_f32)(self.instance, vrs.as_ptr(), 1, &v, 1),
                PropertyValue::UInt32(v) => (self.api.set_u32)(self.instance, vrs.as_ptr(), 1, &v, 1),
                _ => return Err(HarnessError::Fmi(format!("no FMI setter for {:?}", value.value_type()))),
            }
        };
        check(status, "fmi3Set")
    }

    fn get(&mut self, vr: u32, ty: VarType) -> Result<PropertyValue, HarnessError> {
        let vrs = [vr];
        // SAFETY: one reference and one value slot.
        unsafe {
            match ty {
                VarType::Float64 => {
                    let mut v = 0.0f64;
                    check((self.api.get_f64)(self.instance, vrs.as_ptr(), 1, &mut v, 1), "fmi3GetFloat64")?;
                    Ok(PropertyValue::Float64(v))
                }
                VarType::Float32 => {
                    let mut v = 0.0f32;
                    check((self.api.get_f32)(self.instance, vrs.as_ptr(), 1, &mut v, 1), "fmi3GetFloat32")?;
                    Ok(PropertyValue::Float32(v))
                }
                VarType::UInt32 => {
                    let mut v = 0u32;
                    check((self.api.get_u32)(self.instance, vrs.as_ptr(), 1, &mut v, 1), "fmi3GetUInt32")?;
                    Ok(PropertyValue::UInt32(v))
                }
            }
        }
    }

    fn do_step(&mut self, current: f64, step: f64) -> Result<(), HarnessError> {
        let (mut event, mut terminate, mut early) = (false, false, false);
        let mut last = 0.0;
        // SAFETY: live instance; all out-pointers are valid.
        let status = unsafe {
            (self.api.do_step)(self.instance, current, step, true, &mut event, &mut terminate, &mut early, &mut last)
        };
        check(status, "fmi3DoStep")
    }

    fn terminate(&mut self) {
        if !self.terminated {
            self.terminated = true;
            // SAFETY: live instance.
            let _ = unsafe { (self.api.terminate)(self.instance) };
        }
    }
}

impl Drop for FmiTarget {
    fn drop(&mut self) {
        self.terminate();
        // SAFETY: the instance is freed exactly once, before the library.
        unsafe { (self.api.free)(self.instance) };
    }
}
