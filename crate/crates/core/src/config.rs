//! Flat key-value experiment configuration (TOML surface syntax, no
//! nesting). Every run is fully determined by a config plus nothing else;
//! the echoed config round-trips to an identical run. Schema documented in
//! docs/config_schema.md.

use std::collections::BTreeMap;
use std::path::Path as FsPath;
use std::sync::Arc;

use crate::control::{make_grid_family, ControlFamily, ControlProcess, FamilyKind, StoppingRule};
use crate::error::{Error, Result};
use crate::pathspace::{PathPrefix, TimeGrid};
use crate::registry::{make_model, make_payoff, Params};
use crate::sde::CoefficientSpec;
use crate::value::Payoff;

/// Which estimator(s) a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    Tree,
    Mc,
    Both,
}

impl MethodChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(MethodChoice::Tree),
            "mc" => Ok(MethodChoice::Mc),
            "both" => Ok(MethodChoice::Both),
            _ => Err(Error::Config(format!("method must be tree|mc|both, got '{s}'"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            MethodChoice::Tree => "tree",
            MethodChoice::Mc => "mc",
            MethodChoice::Both => "both",
        }
    }
}

/// One experiment, fully specified. Defaults are documented per field in
/// the schema file; tolerances are overridable but default to the pinned
/// contract values.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: String,
    pub model_params: Params,
    pub payoff: String,
    pub payoff_params: Params,
    pub grid_n: usize,
    pub horizon: f64,
    pub x0: f64,
    pub k0: usize,
    pub family: FamilyKind,
    pub family_cap: usize,
    pub method: MethodChoice,
    pub samples: usize,
    pub inner_samples: usize,
    pub seed: u64,
    pub split: Option<usize>,
    pub stop_barrier: Option<f64>,
    /// Constant control value for fixed-control pipelines (bsde, simulate);
    /// defaults to the lowest control point.
    pub control_u: Option<f64>,
    pub buckets: usize,
    pub node_cap: usize,
    pub out: Option<String>,
    pub threads: usize,
    pub tol_tree: f64,
    pub tol_k: f64,
    pub se_factor: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: "controlled_vol".into(),
            model_params: Params::new(),
            payoff: "square".into(),
            payoff_params: Params::new(),
            grid_n: 4,
            horizon: 1.0,
            x0: 0.0,
            k0: 0,
            family: FamilyKind::Constants,
            family_cap: 4096,
            method: MethodChoice::Tree,
            samples: 10_000,
            inner_samples: 200,
            seed: 1,
            split: None,
            stop_barrier: None,
            control_u: None,
            buckets: 4,
            node_cap: 1 << 22,
            out: None,
            threads: 0,
            tol_tree: 1e-12,
            tol_k: 1e-10,
            se_factor: 3.0,
        }
    }
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("key '{key}' must be a number"))),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(Error::Config(format!("key '{key}' must be a nonnegative integer"))),
    }
}

fn as_str(key: &str, v: &toml::Value) -> Result<String> {
    v.as_str()
        .map(|s| s.to_string())
        .ok_or_else(|| Error::Config(format!("key '{key}' must be a string")))
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let table: toml::Table =
            text.parse().map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        let mut cfg = ExperimentConfig::default();
        let mut family_name: Option<String> = None;
        let mut family_blocks: usize = 2;
        let mut family_thresholds: Vec<f64> = vec![-0.25, 0.0, 0.25];
        for (key, value) in &table {
            match key.as_str() {
                "model" => cfg.model = as_str(key, value)?,
                "payoff" => cfg.payoff = as_str(key, value)?,
                "grid_n" => cfg.grid_n = as_usize(key, value)?,
                "horizon" => cfg.horizon = as_f64(key, value)?,
                "x0" => cfg.x0 = as_f64(key, value)?,
                "k0" => cfg.k0 = as_usize(key, value)?,
                "family" => family_name = Some(as_str(key, value)?),
                "family_blocks" => family_blocks = as_usize(key, value)?,
                "family_thresholds" => {
                    let arr = value.as_array().ok_or_else(|| {
                        Error::Config("family_thresholds must be an array of numbers".into())
                    })?;
                    family_thresholds =
                        arr.iter().map(|v| as_f64(key, v)).collect::<Result<_>>()?;
                }
                "family_cap" => cfg.family_cap = as_usize(key, value)?,
                "method" => cfg.method = MethodChoice::parse(&as_str(key, value)?)?,
                "samples" => cfg.samples = as_usize(key, value)?,
                "inner_samples" => cfg.inner_samples = as_usize(key, value)?,
                "seed" => cfg.seed = as_usize(key, value)? as u64,
                "split" => cfg.split = Some(as_usize(key, value)?),
                "stop_barrier" => cfg.stop_barrier = Some(as_f64(key, value)?),
                "control_u" => cfg.control_u = Some(as_f64(key, value)?),
                "buckets" => cfg.buckets = as_usize(key, value)?,
                "node_cap" => cfg.node_cap = as_usize(key, value)?,
                "out" => cfg.out = Some(as_str(key, value)?),
                "threads" => cfg.threads = as_usize(key, value)?,
                "tol_tree" => cfg.tol_tree = as_f64(key, value)?,
                "tol_k" => cfg.tol_k = as_f64(key, value)?,
                "se_factor" => cfg.se_factor = as_f64(key, value)?,
                _ if key.starts_with("model_") => {
                    cfg.model_params
                        .insert(key["model_".len()..].to_string(), as_f64(key, value)?);
                }
                _ if key.starts_with("payoff_") => {
                    cfg.payoff_params
                        .insert(key["payoff_".len()..].to_string(), as_f64(key, value)?);
                }
                _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
            }
        }
        if let Some(name) = family_name {
            cfg.family = match name.as_str() {
                "constants" => FamilyKind::Constants,
                "piecewise-constant" => FamilyKind::PiecewiseConstant { blocks: family_blocks },
                "threshold-feedback" => {
                    FamilyKind::ThresholdFeedback { thresholds: family_thresholds }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "family must be constants|piecewise-constant|threshold-feedback, \
                         got '{name}'"
                    )))
                }
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &FsPath) -> Result<Self> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_n == 0 || self.horizon <= 0.0 {
            return Err(Error::Config("grid_n >= 1 and horizon > 0 required".into()));
        }
        if self.k0 > self.grid_n {
            return Err(Error::Config(format!(
                "k0 = {} beyond the grid (n = {})",
                self.k0, self.grid_n
            )));
        }
        if let Some(j) = self.split {
            if j < self.k0 || j > self.grid_n {
                return Err(Error::Config(format!(
                    "split = {j} outside [k0 = {}, n = {}]",
                    self.k0, self.grid_n
                )));
            }
        }
        if self.samples == 0 || self.inner_samples == 0 {
            return Err(Error::Config("samples and inner_samples must be >= 1".into()));
        }
        Ok(())
    }

    /// Flat TOML echo with deterministic key order; parsing the echo
    /// reproduces the config.
    pub fn to_flat_toml(&self) -> String {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        kv.insert("model".into(), format!("{:?}", self.model));
        kv.insert("payoff".into(), format!("{:?}", self.payoff));
        for (k, v) in &self.model_params {
            kv.insert(format!("model_{k}"), fmt_f64(*v));
        }
        for (k, v) in &self.payoff_params {
            kv.insert(format!("payoff_{k}"), fmt_f64(*v));
        }
        kv.insert("grid_n".into(), self.grid_n.to_string());
        kv.insert("horizon".into(), fmt_f64(self.horizon));
        kv.insert("x0".into(), fmt_f64(self.x0));
        kv.insert("k0".into(), self.k0.to_string());
        match &self.family {
            FamilyKind::Constants => {
                kv.insert("family".into(), "\"constants\"".into());
            }
            FamilyKind::PiecewiseConstant { blocks } => {
                kv.insert("family".into(), "\"piecewise-constant\"".into());
                kv.insert("family_blocks".into(), blocks.to_string());
            }
            FamilyKind::ThresholdFeedback { thresholds } => {
                kv.insert("family".into(), "\"threshold-feedback\"".into());
                let list =
                    thresholds.iter().map(|t| fmt_f64(*t)).collect::<Vec<_>>().join(", ");
                kv.insert("family_thresholds".into(), format!("[{list}]"));
            }
        }
        kv.insert("family_cap".into(), self.family_cap.to_string());
        kv.insert("method".into(), format!("{:?}", self.method.tag()));
        kv.insert("samples".into(), self.samples.to_string());
        kv.insert("inner_samples".into(), self.inner_samples.to_string());
        kv.insert("seed".into(), self.seed.to_string());
        if let Some(j) = self.split {
            kv.insert("split".into(), j.to_string());
        }
        if let Some(b) = self.stop_barrier {
            kv.insert("stop_barrier".into(), fmt_f64(b));
        }
        if let Some(u) = self.control_u {
            kv.insert("control_u".into(), fmt_f64(u));
        }
        kv.insert("buckets".into(), self.buckets.to_string());
        kv.insert("node_cap".into(), self.node_cap.to_string());
        if let Some(out) = &self.out {
            kv.insert("out".into(), format!("{out:?}"));
        }
        kv.insert("threads".into(), self.threads.to_string());
        kv.insert("tol_tree".into(), fmt_f64(self.tol_tree));
        kv.insert("tol_k".into(), fmt_f64(self.tol_k));
        kv.insert("se_factor".into(), fmt_f64(self.se_factor));
        let mut s = String::new();
        for (k, v) in kv {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn grid(&self) -> Arc<TimeGrid> {
        TimeGrid::uniform(self.horizon, self.grid_n)
    }

    pub fn coefficients(&self) -> Result<CoefficientSpec> {
        make_model(&self.model, &self.model_params)
    }

    pub fn payoff(&self) -> Result<Payoff> {
        make_payoff(&self.payoff, &self.payoff_params)
    }

    /// History prefix: constant at x0 from index 0 through k0.
    pub fn history(&self) -> Result<PathPrefix> {
        PathPrefix::new(self.grid(), 1, vec![self.x0; self.k0 + 1])
    }

    pub fn control_family(&self) -> Result<ControlFamily> {
        let coeff = self.coefficients()?;
        make_grid_family(&coeff.control_set, &self.family, self.grid_n, self.family_cap)
    }

    /// The fixed control for simulate/bsde pipelines: `control_u` if set
    /// (must lie in U), otherwise the lowest control point.
    pub fn fixed_control(&self) -> Result<ControlProcess> {
        let coeff = self.coefficients()?;
        let u = match self.control_u {
            Some(u) => {
                if !coeff.control_set.contains(&[u]) {
                    return Err(Error::ControlOutsideSet { value: vec![u] });
                }
                vec![u]
            }
            None => coeff.control_set.enumerate()[0].clone(),
        };
        Ok(ControlProcess::constant(format!("const_u_{}", u[0]), u))
    }

    pub fn stopping_rule(&self) -> Option<StoppingRule> {
        self.stop_barrier.map(|b| StoppingRule::barrier(self.grid_n, b))
    }
}

/// Round-trippable float formatting for the echo (17 significant digits,
/// always with a decimal marker so TOML reads it back as a float).
fn fmt_f64(v: f64) -> String {
    let s = format!("{v:.16e}");
    debug_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
    s
}
