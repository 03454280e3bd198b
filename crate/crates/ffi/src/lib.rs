//! C ABI over the pathcontrol pipelines. Configs are opaque handles;
//! every entry point returns a status code and writes results through out
//! pointers. The last error message is kept per thread and retrievable
//! with `pc_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use pathcontrol::config::ExperimentConfig;
use pathcontrol::control::make_grid_family;
use pathcontrol::error::Error;
use pathcontrol::gexp::{g_pair, GSpec};
use pathcontrol::rng::NoiseModel;
use pathcontrol::value::{value_mc, value_tree, TreeModel};

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    Numeric = 4,
    CapExceeded = 5,
    Io = 6,
    Unknown = 7,
}

/// Opaque experiment configuration handle.
#[repr(C)]
pub struct PcConfig {
    _opaque: [u8; 0],
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &Error) -> PcStatus {
    match err {
        Error::Config(_) | Error::UnknownName { .. } => PcStatus::InvalidConfig,
        Error::NodeCapExceeded { .. } | Error::FamilyCapExceeded { .. } => PcStatus::CapExceeded,
        Error::Io(_) => PcStatus::Io,
        Error::NonFinite { .. }
        | Error::DegenerateDiffusion { .. }
        | Error::NegativeCompensator { .. } => PcStatus::Numeric,
        _ => PcStatus::Unknown,
    }
}

fn fail(err: Error) -> PcStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

unsafe fn cfg_ref<'a>(handle: *const PcConfig) -> Option<&'a ExperimentConfig> {
    (handle as *const ExperimentConfig).as_ref()
}

/// Copy the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length in bytes.
#[no_mangle]
pub unsafe extern "C" fn pc_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            // force termination on truncation
            *buf.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parse a flat key-value config; on success writes a new handle.
#[no_mangle]
pub unsafe extern "C" fn pc_config_parse(
    text: *const c_char,
    out: *mut *mut PcConfig,
) -> PcStatus {
    if text.is_null() || out.is_null() {
        set_error("null pointer argument");
        return PcStatus::NullPointer;
    }
    let text = match CStr::from_ptr(text).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("config text is not valid UTF-8");
            return PcStatus::InvalidUtf8;
        }
    };
    match ExperimentConfig::from_str(text) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(cfg)) as *mut PcConfig;
            PcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// New handle with all defaults.
#[no_mangle]
pub unsafe extern "C" fn pc_config_default(out: *mut *mut PcConfig) -> PcStatus {
    if out.is_null() {
        set_error("null pointer argument");
        return PcStatus::NullPointer;
    }
    *out = Box::into_raw(Box::new(ExperimentConfig::default())) as *mut PcConfig;
    PcStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn pc_config_set_seed(handle: *mut PcConfig, seed: u64) -> PcStatus {
    match (handle as *mut ExperimentConfig).as_mut() {
        Some(cfg) => {
            cfg.seed = seed;
            PcStatus::Ok
        }
        None => {
            set_error("null config handle");
            PcStatus::NullPointer
        }
    }
}

#[no_mangle]
pub unsafe extern "C" fn pc_config_free(handle: *mut PcConfig) {
    if !handle.is_null() {
        drop(Box::from_raw(handle as *mut ExperimentConfig));
    }
}

/// Canonical flat echo of the config; free with `pc_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pc_config_echo(
    handle: *const PcConfig,
    out: *mut *mut c_char,
) -> PcStatus {
    let (Some(cfg), false) = (cfg_ref(handle), out.is_null()) else {
        set_error("null pointer argument");
        return PcStatus::NullPointer;
    };
    *out = CString::new(cfg.to_flat_toml()).unwrap().into_raw();
    PcStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn pc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Exact closed-loop tree value of the configured experiment.
#[no_mangle]
pub unsafe extern "C" fn pc_value_tree(
    handle: *const PcConfig,
    out_value: *mut f64,
) -> PcStatus {
    let (Some(cfg), false) = (cfg_ref(handle), out_value.is_null()) else {
        set_error("null pointer argument");
        return PcStatus::NullPointer;
    };
    let run = || -> Result<f64, Error> {
        let model = TreeModel::new(cfg.coefficients()?, cfg.payoff()?, cfg.grid())
            .with_node_cap(cfg.node_cap);
        Ok(value_tree(&model, &cfg.history()?)?.0.value)
    };
    match run() {
        Ok(v) => {
            *out_value = v;
            PcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Monte Carlo family value with standard error.
#[no_mangle]
pub unsafe extern "C" fn pc_value_mc(
    handle: *const PcConfig,
    out_value: *mut f64,
    out_std_error: *mut f64,
) -> PcStatus {
    let (Some(cfg), false) = (cfg_ref(handle), out_value.is_null() || out_std_error.is_null())
    else {
        set_error("null pointer argument");
        return PcStatus::NullPointer;
    };
    let run = || -> Result<(f64, f64), Error> {
        let coeff = cfg.coefficients()?;
        let family = make_grid_family(
            &coeff.control_set,
            &cfg.family,
            cfg.grid_n,
            cfg.family_cap,
        )?;
        let est = value_mc(
            &coeff,
            &cfg.payoff()?,
            &family,
            &cfg.history()?,
            cfg.samples,
            cfg.seed,
            NoiseModel::Gaussian,
        )?;
        Ok((est.value, est.std_error))
    };
    match run() {
        Ok((v, se)) => {
            *out_value = v;
            *out_std_error = se;
            PcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Upper and lower G-expectation for the model's volatility band.
#[no_mangle]
pub unsafe extern "C" fn pc_gexp_pair(
    handle: *const PcConfig,
    out_upper: *mut f64,
    out_lower: *mut f64,
) -> PcStatus {
    let (Some(cfg), false) = (cfg_ref(handle), out_upper.is_null() || out_lower.is_null())
    else {
        set_error("null pointer argument");
        return PcStatus::NullPointer;
    };
    let run = || -> Result<(f64, f64), Error> {
        let low = cfg.model_params.get("u_low").copied().unwrap_or(0.5);
        let high = cfg.model_params.get("u_high").copied().unwrap_or(1.0);
        let spec = GSpec::new(low, high, cfg.grid(), cfg.payoff()?)?;
        g_pair(&spec, &cfg.history()?)
    };
    match run() {
        Ok((u, l)) => {
            *out_upper = u;
            *out_lower = l;
            PcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Tree DPP residual at the configured split.
#[no_mangle]
pub unsafe extern "C" fn pc_dpp_residual(
    handle: *const PcConfig,
    out_residual: *mut f64,
) -> PcStatus {
    let (Some(cfg), false) = (cfg_ref(handle), out_residual.is_null()) else {
        set_error("null pointer argument");
        return PcStatus::NullPointer;
    };
    let run = || -> Result<f64, Error> {
        let split = cfg
            .split
            .ok_or_else(|| Error::Config("config has no split index".into()))?;
        let model = TreeModel::new(cfg.coefficients()?, cfg.payoff()?, cfg.grid())
            .with_node_cap(cfg.node_cap);
        Ok(pathcontrol::value::dpp_residual_tree(&model, &cfg.history()?, split)?.residual)
    };
    match run() {
        Ok(r) => {
            *out_residual = r;
            PcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Tree 2BSDE summary under the configured fixed control.
#[no_mangle]
pub unsafe extern "C" fn pc_bsde_summary(
    handle: *const PcConfig,
    out_y0: *mut f64,
    out_min_dk: *mut f64,
    out_identity_residual: *mut f64,
) -> PcStatus {
    let (Some(cfg), false) = (
        cfg_ref(handle),
        out_y0.is_null() || out_min_dk.is_null() || out_identity_residual.is_null(),
    ) else {
        set_error("null pointer argument");
        return PcStatus::NullPointer;
    };
    let run = || -> Result<(f64, f64, f64), Error> {
        let model = TreeModel::new(cfg.coefficients()?, cfg.payoff()?, cfg.grid())
            .with_node_cap(cfg.node_cap);
        let dec = pathcontrol::bsde2::decompose_tree(
            &model,
            &cfg.history()?,
            &cfg.fixed_control()?,
            cfg.tol_k,
        )?;
        Ok((dec.y0, dec.min_dk, dec.max_identity_residual))
    };
    match run() {
        Ok((y0, dk, res)) => {
            *out_y0 = y0;
            *out_min_dk = dk;
            *out_identity_residual = res;
            PcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn parse(text: &str) -> *mut PcConfig {
        let c = CString::new(text).unwrap();
        let mut handle: *mut PcConfig = ptr::null_mut();
        let st = unsafe { pc_config_parse(c.as_ptr(), &mut handle) };
        assert_eq!(st, PcStatus::Ok);
        handle
    }

    #[test]
    fn tree_value_through_abi() {
        let h = parse("method = \"tree\"\n");
        let mut v = 0.0;
        assert_eq!(unsafe { pc_value_tree(h, &mut v) }, PcStatus::Ok);
        assert!((v - 1.0).abs() <= 1e-12);
        unsafe { pc_config_free(h) };
    }

    #[test]
    fn gexp_pair_through_abi() {
        let h = parse("");
        let (mut u, mut l) = (0.0, 0.0);
        assert_eq!(unsafe { pc_gexp_pair(h, &mut u, &mut l) }, PcStatus::Ok);
        assert!((u - 1.0).abs() <= 1e-12);
        assert!((l - 0.25).abs() <= 1e-12);
        unsafe { pc_config_free(h) };
    }

    #[test]
    fn mc_value_deterministic_in_seed() {
        let h = parse("samples = 500\n");
        let (mut v1, mut s1, mut v2, mut s2) = (0.0, 0.0, 0.0, 0.0);
        assert_eq!(unsafe { pc_value_mc(h, &mut v1, &mut s1) }, PcStatus::Ok);
        assert_eq!(unsafe { pc_value_mc(h, &mut v2, &mut s2) }, PcStatus::Ok);
        assert_eq!(v1.to_bits(), v2.to_bits());
        unsafe { pc_config_set_seed(h, 99) };
        assert_eq!(unsafe { pc_value_mc(h, &mut v2, &mut s2) }, PcStatus::Ok);
        assert_ne!(v1.to_bits(), v2.to_bits());
        unsafe { pc_config_free(h) };
    }

    #[test]
    fn bsde_summary_hand_value() {
        let h = parse("control_u = 0.5\n");
        let (mut y0, mut dk, mut res) = (0.0, 0.0, 0.0);
        assert_eq!(unsafe { pc_bsde_summary(h, &mut y0, &mut dk, &mut res) }, PcStatus::Ok);
        assert!((y0 - 1.0).abs() <= 1e-12);
        assert!((dk - 0.1875).abs() <= 1e-12);
        assert!(res <= 1e-12);
        unsafe { pc_config_free(h) };
    }

    #[test]
    fn errors_surface_with_message() {
        let c = CString::new("payoff = \"nope\"\n").unwrap();
        let mut handle: *mut PcConfig = ptr::null_mut();
        // config parses (names are checked at build time), but the run fails
        assert_eq!(unsafe { pc_config_parse(c.as_ptr(), &mut handle) }, PcStatus::Ok);
        let mut v = 0.0;
        assert_eq!(unsafe { pc_value_tree(handle, &mut v) }, PcStatus::InvalidConfig);
        let mut buf = [0i8; 256];
        let n = unsafe { pc_last_error(buf.as_mut_ptr(), buf.len()) };
        assert!(n > 0);
        let msg = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        assert!(msg.contains("nope"), "{msg}");
        unsafe { pc_config_free(handle) };
    }

    #[test]
    fn null_arguments_rejected() {
        let mut v = 0.0;
        assert_eq!(unsafe { pc_value_tree(ptr::null(), &mut v) }, PcStatus::NullPointer);
        let mut h: *mut PcConfig = ptr::null_mut();
        assert_eq!(unsafe { pc_config_parse(ptr::null(), &mut h) }, PcStatus::NullPointer);
    }

    #[test]
    fn echo_round_trips_through_abi() {
        let h = parse("seed = 7\nsplit = 2\n");
        let mut s: *mut c_char = ptr::null_mut();
        assert_eq!(unsafe { pc_config_echo(h, &mut s) }, PcStatus::Ok);
        let echo = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
        let h2 = parse(&echo);
        let mut s2: *mut c_char = ptr::null_mut();
        assert_eq!(unsafe { pc_config_echo(h2, &mut s2) }, PcStatus::Ok);
        assert_eq!(echo, unsafe { CStr::from_ptr(s2) }.to_str().unwrap());
        unsafe {
            pc_string_free(s);
            pc_string_free(s2);
            pc_config_free(h);
            pc_config_free(h2);
        }
    }
}
