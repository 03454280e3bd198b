//! Value function and value process.
//!
//! The sup over controls is realized two ways: an exact closed-loop max on
//! binomial trees (the per-node choice is the full discrete control space,
//! serving as ground truth) and a finite-family max for Monte Carlo.

mod mc;
mod tree;

pub use mc::{dpp_residual_mc, value_mc, value_process_mc};
pub use tree::{
    dpp_residual_tree, dpp_residual_tree_at_stop, key_hash, supermartingale_check,
    value_process_tree, value_tree, Decision, DppReport, NodeEntry, SupermartingaleReport,
    TreeOracle,
};

use std::sync::Arc;

use crate::control::ControlFamily;
use crate::error::{Error, Result};
use crate::pathspace::{Path, TimeGrid};
use crate::sde::CoefficientSpec;

/// Reward functional on full paths, with optional declared regularity.
#[derive(Clone)]
pub struct Payoff {
    name: String,
    rule: Arc<dyn Fn(&Path) -> f64 + Send + Sync>,
    /// Declared Lipschitz constant wrt the sup-norm, if any.
    pub lipschitz: Option<f64>,
    /// Declared uniform bound, if any.
    pub bound: Option<f64>,
}

impl std::fmt::Debug for Payoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Payoff")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .field("bound", &self.bound)
            .finish()
    }
}

impl Payoff {
    pub fn new(
        name: impl Into<String>,
        rule: impl Fn(&Path) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Payoff { name: name.into(), rule: Arc::new(rule), lipschitz: None, bound: None }
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn with_bound(mut self, b: f64) -> Self {
        self.bound = Some(b);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, path: &Path) -> Result<f64> {
        let v = (self.rule)(path);
        if !v.is_finite() {
            return Err(Error::NonFinite { context: "payoff", step: path.grid().steps() });
        }
        Ok(v)
    }

    /// Pointwise combination, used by the 1-Lipschitz extension checks.
    pub fn map2(
        name: impl Into<String>,
        a: &Payoff,
        b: &Payoff,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Payoff {
        let ra = a.rule.clone();
        let rb = b.rule.clone();
        Payoff::new(name, move |p: &Path| f(ra(p), rb(p)))
    }

    pub fn scale(&self, lambda: f64) -> Payoff {
        let r = self.rule.clone();
        Payoff::new(format!("{}*{lambda}", self.name), move |p: &Path| lambda * r(p))
    }

    pub fn offset(&self, c: f64) -> Payoff {
        let r = self.rule.clone();
        Payoff::new(format!("{}+{c}", self.name), move |p: &Path| r(p) + c)
    }
}

/// How the estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Tree,
    Mc,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Tree => "tree",
            Method::Mc => "mc",
        }
    }
}

/// Point estimate of the value function.
#[derive(Debug, Clone)]
pub struct ValueEstimate {
    pub value: f64,
    /// Standard error of the winning mean; zero for tree estimates.
    pub std_error: f64,
    pub samples: usize,
    pub argmax_id: String,
    pub method: Method,
    /// Fresh-seed mean under the argmax control (selection-bias control);
    /// MC only.
    pub revalue: Option<f64>,
}

/// Closed-loop tree model: d = 1, Rademacher branching.
#[derive(Clone)]
pub struct TreeModel {
    pub coeff: CoefficientSpec,
    pub payoff: Payoff,
    pub grid: Arc<TimeGrid>,
    pub node_cap: usize,
    /// None: exact per-node max over U. Some: sup over the finite family.
    pub family: Option<ControlFamily>,
}

impl TreeModel {
    pub fn new(coeff: CoefficientSpec, payoff: Payoff, grid: Arc<TimeGrid>) -> Self {
        TreeModel { coeff, payoff, grid, node_cap: 1 << 22, family: None }
    }

    pub fn with_family(mut self, family: ControlFamily) -> Self {
        self.family = Some(family);
        self
    }

    pub fn with_node_cap(mut self, cap: usize) -> Self {
        self.node_cap = cap;
        self
    }
}

/// Per-path per-step value estimates along an ensemble under one fixed
/// control; `y[m][k - k0]` is the value at step k on member m.
#[derive(Debug, Clone)]
pub struct ValuePath {
    pub k0: usize,
    /// Realized states, coordinate 0, per member per step (k0..=N).
    pub states: Vec<Vec<f64>>,
    /// Value estimates per member per step (k0..=N); the terminal entry is
    /// the payoff on the realized path.
    pub y: Vec<Vec<f64>>,
    /// Equal member weights for trees (exhaustive enumeration) or 1/M.
    pub weight: f64,
    pub method: String,
}
