//! Built-in model and payoff registries. Configs refer to these by name;
//! no user code is ever executed from a config. Parameter maps are strict:
//! unknown keys are rejected so typos surface instead of silently using
//! defaults. See docs/config_schema.md for the full parameter tables.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sde::{CoefficientSpec, ControlSetDescriptor};
use crate::value::Payoff;

pub type Params = BTreeMap<String, f64>;

pub const MODEL_NAMES: &[&str] =
    &["controlled_vol", "lagged_vol", "runningmax_drift", "uncontrolled_drift_controlled_vol"];

pub const PAYOFF_NAMES: &[&str] = &["square", "power", "lookback", "asian", "digital"];

struct ParamReader<'a> {
    kind: &'static str,
    name: &'a str,
    params: &'a Params,
    allowed: Vec<&'static str>,
}

impl<'a> ParamReader<'a> {
    fn new(kind: &'static str, name: &'a str, params: &'a Params) -> Self {
        ParamReader { kind, name, params, allowed: Vec::new() }
    }

    fn get(&mut self, key: &'static str, default: f64) -> f64 {
        self.allowed.push(key);
        self.params.get(key).copied().unwrap_or(default)
    }

    fn finish(self) -> Result<()> {
        for k in self.params.keys() {
            if !self.allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!(
                    "unknown parameter '{k}' for {} '{}' (allowed: {})",
                    self.kind,
                    self.name,
                    self.allowed.join(", ")
                )));
            }
        }
        Ok(())
    }
}

fn control_band(r: &mut ParamReader) -> Result<ControlSetDescriptor> {
    let low = r.get("u_low", 0.5);
    let high = r.get("u_high", 1.0);
    let count = r.get("u_count", 2.0) as usize;
    if !(low <= high) || count < 1 || (count == 1 && low != high) {
        return Err(Error::Config(format!(
            "control band needs u_low <= u_high and u_count >= 2 (or 1 with a degenerate band); \
             got [{low}, {high}] with {count} points"
        )));
    }
    let points = if count == 1 {
        vec![vec![low]]
    } else {
        (0..count)
            .map(|i| vec![low + (high - low) * i as f64 / (count - 1) as f64])
            .collect()
    };
    Ok(ControlSetDescriptor::points(points))
}

/// Model registry. All models are d = 1 with a gridded scalar control band
/// `[u_low, u_high]` (`u_count` points, defaults 0.5, 1.0, 2). All satisfy
/// the strict-positivity sufficient condition when `u_low > 0`.
pub fn make_model(name: &str, params: &Params) -> Result<CoefficientSpec> {
    let mut r = ParamReader::new("model", name, params);
    let spec = match name {
        // mu = 0, sigma = u
        "controlled_vol" => {
            let control_set = control_band(&mut r)?;
            let invertible = positive_band(&control_set);
            CoefficientSpec {
                dim: 1,
                drift: Arc::new(|_, _, _| vec![0.0]),
                diffusion: Arc::new(|_, _, u: &[f64]| vec![u[0]]),
                lipschitz: 0.0,
                control_set,
                diffusion_invertible: invertible,
                drift_uncontrolled: true,
            }
        }
        // mu = 0, sigma = u * (1 + min(|w at the lagged index|, 1))
        "lagged_vol" => {
            let lag = r.get("lag", 1.0) as usize;
            let control_set = control_band(&mut r)?;
            let invertible = positive_band(&control_set);
            let u_high = band_max(&control_set);
            CoefficientSpec {
                dim: 1,
                drift: Arc::new(|_, _, _| vec![0.0]),
                diffusion: Arc::new(move |k: usize, p: &crate::pathspace::PathPrefix, u: &[f64]| {
                    let j = k.saturating_sub(lag);
                    vec![u[0] * (1.0 + p.point(j)[0].abs().min(1.0))]
                }),
                lipschitz: u_high,
                control_set,
                diffusion_invertible: invertible,
                drift_uncontrolled: true,
            }
        }
        // mu = min(running max, cap), sigma = u
        "runningmax_drift" => {
            let cap = r.get("cap", 1.0);
            let control_set = control_band(&mut r)?;
            let invertible = positive_band(&control_set);
            CoefficientSpec {
                dim: 1,
                drift: Arc::new(move |k: usize, p: &crate::pathspace::PathPrefix, _: &[f64]| {
                    let m = (0..=k).map(|j| p.point(j)[0]).fold(f64::NEG_INFINITY, f64::max);
                    vec![m.min(cap)]
                }),
                diffusion: Arc::new(|_, _, u: &[f64]| vec![u[0]]),
                lipschitz: 1.0,
                control_set,
                diffusion_invertible: invertible,
                drift_uncontrolled: true,
            }
        }
        // mu = constant drift, sigma = u
        "uncontrolled_drift_controlled_vol" => {
            let drift = r.get("drift", 0.1);
            let control_set = control_band(&mut r)?;
            let invertible = positive_band(&control_set);
            CoefficientSpec {
                dim: 1,
                drift: Arc::new(move |_, _, _| vec![drift]),
                diffusion: Arc::new(|_, _, u: &[f64]| vec![u[0]]),
                lipschitz: 0.0,
                control_set,
                diffusion_invertible: invertible,
                drift_uncontrolled: true,
            }
        }
        _ => {
            return Err(Error::UnknownName { kind: "model", name: name.to_string() });
        }
    };
    r.finish()?;
    Ok(spec)
}

fn positive_band(set: &ControlSetDescriptor) -> bool {
    set.enumerate().iter().all(|u| u[0] > 0.0)
}

fn band_max(set: &ControlSetDescriptor) -> f64 {
    set.enumerate().iter().map(|u| u[0]).fold(0.0, f64::max)
}

/// Payoff registry (coordinate 0 of the path).
pub fn make_payoff(name: &str, params: &Params) -> Result<Payoff> {
    let mut r = ParamReader::new("payoff", name, params);
    let payoff = match name {
        "square" => Payoff::new("square", |p| {
            let x = p.terminal()[0];
            x * x
        }),
        "power" => {
            let exponent = r.get("p", 2.0);
            if exponent <= 0.0 {
                return Err(Error::Config(format!("power payoff needs p > 0, got {exponent}")));
            }
            Payoff::new("power", move |p| p.terminal()[0].abs().powf(exponent))
        }
        "lookback" => Payoff::new("lookback", |p| {
            (0..=p.grid().steps()).map(|j| p.point(j)[0]).fold(f64::NEG_INFINITY, f64::max)
        })
        .with_lipschitz(1.0),
        "asian" => Payoff::new("asian", |p| {
            let n = p.grid().steps();
            (0..=n).map(|j| p.point(j)[0]).sum::<f64>() / (n + 1) as f64
        })
        .with_lipschitz(1.0),
        // non-Lipschitz by design; excluded from modulus-of-continuity tests
        "digital" => {
            let barrier = r.get("barrier", 0.5);
            Payoff::new("digital", move |p| {
                let hit = (0..=p.grid().steps()).any(|j| p.point(j)[0] >= barrier);
                if hit {
                    1.0
                } else {
                    0.0
                }
            })
            .with_bound(1.0)
        }
        _ => {
            return Err(Error::UnknownName { kind: "payoff", name: name.to_string() });
        }
    };
    r.finish()?;
    Ok(payoff)
}
