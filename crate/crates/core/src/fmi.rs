//! FMI 3.0 Co-Simulation entry points exported by the FMU library.
//!
//! Each function is a thin shim over [`AdapterInstance`]. Panics never
//! cross the boundary; they are reported as `fmi3Fatal`.

use std::ffi::{CStr, CString, c_char, c_void};
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::path::{Path, PathBuf};
use std::ptr;

use crate::adapter::{AdapterError, AdapterInstance, AdapterOptions};
use crate::model_description::ModelDescription;

pub type Fmi3Instance = *mut c_void;
pub type Fmi3InstanceEnvironment = *mut c_void;
pub type Fmi3String = *const c_char;
pub type Fmi3Boolean = bool;
pub type Fmi3ValueReference = u32;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fmi3Status {
    Ok = 0,
    Warning = 1,
    Discard = 2,
    Error = 3,
    Fatal = 4,
}

pub type Fmi3LogMessageCallback =
    Option<unsafe extern "C" fn(Fmi3InstanceEnvironment, Fmi3Status, Fmi3String, Fmi3String)>;

pub type Fmi3IntermediateUpdateCallback = Option<
    unsafe extern "C" fn(
        Fmi3InstanceEnvironment,
        f64,
        Fmi3Boolean,
        Fmi3Boolean,
        Fmi3Boolean,
        Fmi3Boolean,
        *mut Fmi3Boolean,
        *mut f64,
    ),
>;

pub const FMI_VERSION: &CStr = c"3.0";
pub const MODEL_DESCRIPTION_FILE: &str = "modelDescription.xml";

struct Logger {
    env: Fmi3InstanceEnvironment,
    callback: Fmi3LogMessageCallback,
    name: String,
}

impl Logger {
    fn log(&self, status: Fmi3Status, category: &str, message: &str) {
        log::debug!("{}: {message}", self.name);
        let Some(cb) = self.callback else { return };
        let category = CString::new(category).unwrap_or_default();
        let message = CString::new(format!("{}: {message}", self.name).replace('\0', " ")).unwrap_or_default();
        // SAFETY: the callback and environment come from the importer, which
        // guarantees they stay valid for the life of the instance.
        unsafe { cb(self.env, status, category.as_ptr(), message.as_ptr()) };
    }
}

struct FmuInstance {
    adapter: AdapterInstance,
    logger: Logger,
}

impl FmuInstance {
    fn report(&self, result: Result<(), AdapterError>) -> Fmi3Status {
        match result {
            Ok(()) => Fmi3Status::Ok,
            Err(e) => {
                self.logger.log(Fmi3Status::Error, "logStatusError", &e.to_string());
                Fmi3Status::Error
            }
        }
    }
}

fn guard(f: impl FnOnce() -> Fmi3Status) -> Fmi3Status {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(Fmi3Status::Fatal)
}

/// # Safety
/// `instance` is null or a pointer returned by `fmi3InstantiateCoSimulation`
/// that has not been freed.
unsafe fn with_instance(instance: Fmi3Instance, f: impl FnOnce(&mut FmuInstance) -> Fmi3Status) -> Fmi3Status {
    if instance.is_null() {
        return Fmi3Status::Error;
    }
    // SAFETY: per the function contract.
    let inst = unsafe { &mut *(instance as *mut FmuInstance) };
    guard(|| f(inst))
}

/// # Safety
/// `s` is null or a valid NUL-terminated string.
unsafe fn string_arg(s: Fmi3String) -> Option<String> {
    if s.is_null() {
        None
    } else {
        // SAFETY: per the function contract.
        Some(unsafe { CStr::from_ptr(s) }.to_string_lossy().into_owned())
    }
}

/// # Safety
/// When `n > 0`, `p` points to `n` readable elements.
unsafe fn slice_arg<'a, T>(p: *const T, n: usize) -> Option<&'a [T]> {
    if n == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        // SAFETY: per the function contract.
        Some(unsafe { std::slice::from_raw_parts(p, n) })
    }
}

/// # Safety
/// When `n > 0`, `p` points to `n` writable elements.
unsafe fn slice_out<'a, T>(p: *mut T, n: usize) -> Option<&'a mut [T]> {
    if n == 0 {
        Some(&mut [])
    } else if p.is_null() {
        None
    } else {
        // SAFETY: per the function contract.
        Some(unsafe { std::slice::from_raw_parts_mut(p, n) })
    }
}

/// FMU root for a resource location: the parent of the `resources`
/// directory. Accepts plain paths and `file://` URIs.
pub fn fmu_root_from_resource_path(resource_path: &str) -> PathBuf {
    let path = resource_path.strip_prefix("file://").unwrap_or(resource_path);
    let path = Path::new(path.trim_end_matches(['/', '\\']));
    path.parent().map(Path::to_owned).unwrap_or_default()
}

#[unsafe(no_mangle)]
pub extern "C" fn fmi3GetVersion() -> Fmi3String {
    FMI_VERSION.as_ptr()
}

/// # Safety
/// Arguments follow the FMI 3.0 calling convention.
#[unsafe(no_mangle)]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fmi3InstantiateCoSimulation(
    instance_name: Fmi3String,
    instantiation_token: Fmi3String,
    resource_path: Fmi3String,
    _visible: Fmi3Boolean,
    _logging_on: Fmi3Boolean,
    _event_mode_used: Fmi3Boolean,
    _early_return_allowed: Fmi3Boolean,
    _required_intermediate_variables: *const Fmi3ValueReference,
    _n_required_intermediate_variables: usize,
    instance_environment: Fmi3InstanceEnvironment,
    log_message: Fmi3LogMessageCallback,
    _intermediate_update: Fmi3IntermediateUpdateCallback,
) -> Fmi3Instance {
    let result = catch_unwind(AssertUnwindSafe(|| {
        // SAFETY: strings supplied by the importer.
        let name = unsafe { string_arg(instance_name) }.unwrap_or_else(|| "fmu".into());
        let logger = Logger { env: instance_environment, callback: log_message, name };
        let fail = |logger: &Logger, msg: String| {
            logger.log(Fmi3Status::Error, "logStatusError", &msg);
            ptr::null_mut()
        };
        // SAFETY: as above.
        let Some(resources) = (unsafe { string_arg(resource_path) }) else {
            return fail(&logger, "resourcePath is required".into());
        };
        let root = fmu_root_from_resource_path(&resources);
        let md_path = root.join(MODEL_DESCRIPTION_FILE);
        let md = match std::fs::read(&md_path)
            .map_err(|e| format!("{}: {e}", md_path.display()))
            .and_then(|b| ModelDescription::parse(&b).map_err(|e| e.to_string()))
        {
            Ok(md) => md,
            Err(e) => return fail(&logger, e),
        };
        // SAFETY: as above.
        if let (Some(expected), Some(given)) = (&md.instantiation_token, unsafe { string_arg(instantiation_token) })
            && *expected != given
        {
            return fail(&logger, format!("instantiationToken {given:?} does not match {expected:?}"));
        }
        let options = match AdapterOptions::from_env() {
            Ok(o) => o,
            Err(e) => return fail(&logger, e),
        };
        match AdapterInstance::instantiate(md, Some(&root), options) {
            Ok(adapter) => Box::into_raw(Box::new(FmuInstance { adapter, logger })) as Fmi3Instance,
            Err(e) => fail(&logger, e.to_string()),
        }
    }));
    result.unwrap_or(ptr::null_mut())
}

/// # Safety
/// `instance` is a live instance handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fmi3EnterInitializationMode(
    instance: Fmi3Instance,
    _tolerance_defined: Fmi3Boolean,
    _tolerance: f64,
    start_time: f64,
    _stop_time_defined: Fmi3Boolean,
    _stop_time: f64,
) -> Fmi3Status {
    // SAFETY: per the function contract.
    unsafe {
        with_instance(instance, |inst| {
            let r = inst.adapter.enter_initialization_mode(Some(start_time));
            inst.report(r)
        })
    }
}

/// # Safety
/// `instance` is a live instance handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fmi3ExitInitializationMode(instance: Fmi3Instance) -> Fmi3Status {
    // SAFETY: per the function contract.
    unsafe {
        with_instance(instance, |inst| {
            let r = inst.adapter.exit_initialization_mode();
            inst.report(r)
        })
    }
}

macro_rules! getter {
    ($name:ident, $ty:ty, $method:ident) => {
        /// # Safety
        /// `instance` is a live handle; `vrs` and `values` hold `n_vrs` and
        /// `n_values` elements.
        #[unsafe(no_mangle)]
        pub unsafe extern "C" fn $name(
            instance: Fmi3Instance,
            vrs: *const Fmi3ValueReference,
            n_vrs: usize,
            values: *mut $ty,
            n_values: usize,
        ) -> Fmi3Status {
            // SAFETY: per the function contract.
            unsafe {
                with_instance(instance, |inst| {
                    let (Some(vrs), Some(out)) = (slice_arg(vrs, n_vrs), slice_out(values, n_values)) else {
                        return inst.report(Err(AdapterError::ArgumentMismatch { vrs: n_vrs, values: n_values }));
                    };
                    if vrs.len() != out.len() {
                        return inst.report(Err(AdapterError::ArgumentMismatch { vrs: n_vrs, values: n_values }));
                    }
                    let r = inst.adapter.$method(vrs).map(|got| out.copy_from_slice(&got));
                    inst.report(r)
                })
            }
        }
    };
}

macro_rules! setter {
    ($name:ident, $ty:ty, $method:ident) => {
        /// # Safety
        /// `instance` is a live handle; `vrs` and `values` hold `n_vrs` and
        /// `n_values` elements.
        #[unsafe(no_mangle)]
        pub unsafe extern "C" fn $name(
            instance: Fmi3Instance,
            vrs: *const Fmi3ValueReference,
            n_vrs: usize,
            values: *const $ty,
            n_values: usize,
        ) -> Fmi3Status {
            // SAFETY: per the function contract.
            unsafe {
                with_instance(instance, |inst| {
                    let (Some(vrs), Some(values)) = (slice_arg(vrs, n_vrs), slice_arg(values, n_values)) else {
                        return inst.report(Err(AdapterError::ArgumentMismatch { vrs: n_vrs, values: n_values }));
                    };
                    let r = inst.adapter.$method(vrs, values);
                    inst.report(r)
                })
            }
        }
    };
}

getter!(fmi3GetFloat64, f64, get_float64);
getter!(fmi3GetFloat32, f32, get_float32);
getter!(fmi3GetUInt32, u32, get_uint32);
setter!(fmi3SetFloat64, f64, set_float64);
setter!(fmi3SetFloat32, f32, set_float32);
setter!(fmi3SetUInt32, u32, set_uint32);

/// # Safety
/// `instance` is a live handle; the output pointers are null or writable.
#[unsafe(no_mangle)]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fmi3DoStep(
    instance: Fmi3Instance,
    current_communication_point: f64,
    communication_step_size: f64,
    _no_set_fmu_state_prior_to_current_point: Fmi3Boolean,
    event_handling_needed: *mut Fmi3Boolean,
    terminate_simulation: *mut Fmi3Boolean,
    early_return: *mut Fmi3Boolean,
    last_successful_time: *mut f64,
) -> Fmi3Status {
    // SAFETY: per the function contract.
    unsafe {
        with_instance(instance, |inst| {
            let r = inst.adapter.do_step(current_communication_point, communication_step_size);
            for flag in [event_handling_needed, terminate_simulation, early_return] {
                if !flag.is_null() {
                    *flag = false;
                }
            }
            if !last_successful_time.is_null() {
                *last_successful_time = inst.adapter.communication_point().as_secs_f64();
            }
            inst.report(r)
        })
    }
}

/// # Safety
/// `instance` is a live instance handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fmi3Terminate(instance: Fmi3Instance) -> Fmi3Status {
    // SAFETY: per the function contract.
    unsafe {
        with_instance(instance, |inst| {
            inst.adapter.terminate();
            Fmi3Status::Ok
        })
    }
}

/// # Safety
/// `instance` is null or a live handle, which is invalid afterwards.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fmi3FreeInstance(instance: Fmi3Instance) {
    if instance.is_null() {
        return;
    }
    // SAFETY: the handle came from Box::into_raw in instantiate.
    let boxed = unsafe { Box::from_raw(instance as *mut FmuInstance) };
    let _ = catch_unwind(AssertUnwindSafe(move || drop(boxed)));
}

/// Logging is always forwarded to the callback; the flag is accepted for
/// compatibility.
///
/// # Safety
/// `instance` is a live instance handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn fmi3SetDebugLogging(
    instance: Fmi3Instance,
    _logging_on: Fmi3Boolean,
    _n_categories: usize,
    _categories: *const Fmi3String,
) -> Fmi3Status {
    // SAFETY: per the function contract.
    unsafe { with_instance(instance, |_| Fmi3Status::Ok) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_is_parent_of_resources() {
        assert_eq!(fmu_root_from_resource_path("/tmp/x/resources/"), PathBuf::from("/tmp/x"));
        assert_eq!(fmu_root_from_resource_path("file:///tmp/x/resources"), PathBuf::from("/tmp/x"));
    }

    #[test]
    fn null_handles_are_rejected() {
        // SAFETY: null is an accepted input.
        unsafe {
            assert_eq!(fmi3ExitInitializationMode(ptr::null_mut()), Fmi3Status::Error);
            fmi3FreeInstance(ptr::null_mut());
        }
        // SAFETY: returns a static string.
        assert_eq!(unsafe { CStr::from_ptr(fmi3GetVersion()) }, c"3.0");
    }
}
