//! Exact backward-induction tree oracle.
//!
//! One-dimensional state, Rademacher branching (+-sqrt(dt) increments).
//! Nodes are realized path prefixes, so path-dependent coefficients and
//! payoffs are handled without recombination assumptions; a memo table
//! keyed by the exact bit pattern of the prefix collapses nodes that do
//! recombine.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use crate::control::{ControlProcess, StoppingRule};
use crate::error::{Error, Result};
use crate::pathspace::PathPrefix;
use crate::sde::euler_step;

use super::{Method, Payoff, TreeModel, ValueEstimate, ValuePath};

type NodeKey = Vec<u64>;

fn key_of(prefix: &PathPrefix) -> NodeKey {
    (0..=prefix.cut()).map(|j| prefix.point(j)[0].to_bits()).collect()
}

/// Stable 64-bit digest of a node key, for report output.
pub fn key_hash(key: &[u64]) -> u64 {
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    h.finish()
}

/// Resolved node of the backward induction.
#[derive(Debug, Clone)]
pub struct NodeEntry {
    pub step: usize,
    pub state: f64,
    pub value: f64,
    /// Control value attaining the node max (single candidate under a
    /// fixed rule).
    pub u: Vec<f64>,
}

/// Per-node control choice.
#[derive(Clone)]
pub enum Decision {
    /// Exact max over the finite control set (closed loop).
    Max(Vec<Vec<f64>>),
    /// Fixed feedback rule.
    Rule(ControlProcess),
}

enum Terminal {
    /// Payoff on the completed path; requires the terminal step to be N.
    Payoff(Payoff),
    /// Another oracle evaluated at the boundary (DPP composition).
    Inner(Box<TreeOracle>),
}

/// Lazy exact tree evaluator with a write-once memo table.
pub struct TreeOracle {
    model: TreeModel,
    decision: Decision,
    terminal_step: usize,
    terminal: Terminal,
    stop: Option<StoppingRule>,
    visited: usize,
    table: HashMap<NodeKey, NodeEntry>,
}

impl TreeOracle {
    /// Closed-loop oracle for the model's full control set, terminal payoff
    /// at N.
    pub fn closed_loop(model: &TreeModel) -> Result<Self> {
        let points = model.coeff.control_set.enumerate();
        Self::with_decision(model, Decision::Max(points))
    }

    /// Oracle under a fixed control rule (plain conditional expectation of
    /// the payoff).
    pub fn fixed_control(model: &TreeModel, control: &ControlProcess) -> Result<Self> {
        Self::with_decision(model, Decision::Rule(control.clone()))
    }

    fn with_decision(model: &TreeModel, decision: Decision) -> Result<Self> {
        if model.coeff.dim != 1 {
            return Err(Error::DimMismatch { expected: 1, got: model.coeff.dim });
        }
        Ok(TreeOracle {
            model: model.clone(),
            decision,
            terminal_step: model.grid.steps(),
            terminal: Terminal::Payoff(model.payoff.clone()),
            stop: None,
            visited: 0,
            table: HashMap::new(),
        })
    }

    fn composed(mut self, boundary: Boundary, inner: TreeOracle) -> Self {
        match boundary {
            Boundary::Split(j) => self.terminal_step = j,
            Boundary::Stop(rule) => self.stop = Some(rule),
        }
        self.terminal = Terminal::Inner(Box::new(inner));
        self
    }

    pub fn grid_steps(&self) -> usize {
        self.model.grid.steps()
    }

    pub fn nodes_resolved(&self) -> usize {
        self.table.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&NodeKey, &NodeEntry)> {
        self.table.iter()
    }

    pub fn entry(&self, prefix: &PathPrefix) -> Option<&NodeEntry> {
        self.table.get(&key_of(prefix))
    }

    /// Rebuild the path prefix encoded by a node key (d = 1).
    pub fn prefix_from_key(&self, key: &[u64]) -> Result<PathPrefix> {
        let values: Vec<f64> = key.iter().map(|b| f64::from_bits(*b)).collect();
        PathPrefix::new(self.model.grid.clone(), 1, values)
    }

    /// Fixed control replaying the per-node argmax of this (resolved)
    /// oracle; only valid on prefixes the oracle has visited.
    pub fn optimal_rule(&self, id: impl Into<String>) -> ControlProcess {
        let table: HashMap<NodeKey, Vec<f64>> =
            self.table.iter().map(|(k, e)| (k.clone(), e.u.clone())).collect();
        ControlProcess::new(id, move |_, p: &PathPrefix| {
            table.get(&key_of(p)).expect("prefix resolved by the oracle").clone()
        })
    }

    /// Both children of a node under control value `u`: (up, down) states.
    pub fn children(&self, prefix: &PathPrefix, u: &[f64]) -> Result<(f64, f64)> {
        let k = prefix.cut();
        let sqrt_dt = self.model.grid.dt(k).sqrt();
        let up = euler_step(&self.model.coeff, k, prefix, u, &[sqrt_dt])?;
        let down = euler_step(&self.model.coeff, k, prefix, u, &[-sqrt_dt])?;
        Ok((up[0], down[0]))
    }

    /// Exact value at the given prefix, resolving the subtree on demand.
    pub fn value(&mut self, prefix: &PathPrefix) -> Result<f64> {
        let mut work = prefix.clone();
        self.value_rec(&mut work)
    }

    fn boundary_reached(&self, prefix: &PathPrefix) -> bool {
        let k = prefix.cut();
        if k >= self.terminal_step {
            return true;
        }
        match &self.stop {
            Some(rule) => k >= rule.cap() || rule.fires(prefix),
            None => false,
        }
    }

    fn terminal_value(&mut self, prefix: &PathPrefix) -> Result<f64> {
        match &mut self.terminal {
            Terminal::Payoff(payoff) => {
                debug_assert_eq!(prefix.cut(), prefix.grid().steps());
                payoff.eval(&prefix.clone().into_path()?)
            }
            Terminal::Inner(inner) => inner.value(prefix),
        }
    }

    fn value_rec(&mut self, prefix: &mut PathPrefix) -> Result<f64> {
        if self.boundary_reached(prefix) {
            return self.terminal_value(prefix);
        }
        let key = key_of(prefix);
        if let Some(e) = self.table.get(&key) {
            return Ok(e.value);
        }
        self.visited += 1;
        if self.visited > self.model.node_cap {
            return Err(Error::NodeCapExceeded { cap: self.model.node_cap });
        }
        let k = prefix.cut();
        let candidates: Vec<Vec<f64>> = match &self.decision {
            Decision::Max(points) => points.clone(),
            Decision::Rule(control) => {
                let u = control.value(k, prefix);
                if !self.model.coeff.control_set.contains(&u) {
                    return Err(Error::ControlOutsideSet { value: u });
                }
                vec![u]
            }
        };
        let sqrt_dt = self.model.grid.dt(k).sqrt();
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = 0;
        for (ui, u) in candidates.iter().enumerate() {
            let mut mean = 0.0;
            for dw in [sqrt_dt, -sqrt_dt] {
                let x = euler_step(&self.model.coeff, k, prefix, u, &[dw])?;
                prefix.push(&x);
                mean += self.value_rec(prefix)?;
                prefix.pop();
            }
            mean *= 0.5;
            // strict > keeps the lowest control index on ties
            if mean > best {
                best = mean;
                best_idx = ui;
            }
        }
        let entry = NodeEntry {
            step: k,
            state: prefix.last()[0],
            value: best,
            u: candidates[best_idx].clone(),
        };
        self.table.insert(key, entry);
        Ok(best)
    }

    /// Visit every node of the fully expanded tree (all control candidates,
    /// both branches), calling `f(prefix, entry)` once per interior node.
    fn walk_nodes(
        &mut self,
        prefix: &mut PathPrefix,
        seen: &mut std::collections::HashSet<NodeKey>,
        f: &mut impl FnMut(&mut TreeOracle, &PathPrefix) -> Result<()>,
    ) -> Result<()> {
        if self.boundary_reached(prefix) {
            return Ok(());
        }
        let key = key_of(prefix);
        if !seen.insert(key) {
            return Ok(());
        }
        f(self, prefix)?;
        let k = prefix.cut();
        let candidates: Vec<Vec<f64>> = match &self.decision {
            Decision::Max(points) => points.clone(),
            Decision::Rule(control) => vec![control.value(k, prefix)],
        };
        let sqrt_dt = self.model.grid.dt(k).sqrt();
        for u in &candidates {
            for dw in [sqrt_dt, -sqrt_dt] {
                let x = euler_step(&self.model.coeff, k, prefix, u, &[dw])?;
                prefix.push(&x);
                self.walk_nodes(prefix, seen, f)?;
                prefix.pop();
            }
        }
        Ok(())
    }
}

enum Boundary {
    Split(usize),
    Stop(StoppingRule),
}

/// Exact tree value from `(k0, history)` via backward induction. Returns
/// the estimate together with the resolved oracle (full node-value table).
pub fn value_tree(model: &TreeModel, history: &PathPrefix) -> Result<(ValueEstimate, TreeOracle)> {
    match &model.family {
        None => {
            let mut oracle = TreeOracle::closed_loop(model)?;
            let value = oracle.value(history)?;
            let argmax_id = oracle
                .entry(history)
                .map(|e| format!("closed_loop(root_u={:?})", e.u))
                .unwrap_or_else(|| "closed_loop(terminal)".into());
            let est = ValueEstimate {
                value,
                std_error: 0.0,
                samples: oracle.nodes_resolved(),
                argmax_id,
                method: Method::Tree,
                revalue: None,
            };
            Ok((est, oracle))
        }
        Some(family) => {
            let mut best: Option<(f64, usize, TreeOracle)> = None;
            for (i, control) in family.controls().iter().enumerate() {
                let mut oracle = TreeOracle::fixed_control(model, control)?;
                let value = oracle.value(history)?;
                // strict > keeps the lowest family index on ties
                if best.as_ref().map_or(true, |(b, _, _)| value > *b) {
                    best = Some((value, i, oracle));
                }
            }
            let (value, idx, oracle) = best.expect("family is nonempty");
            let est = ValueEstimate {
                value,
                std_error: 0.0,
                samples: oracle.nodes_resolved(),
                argmax_id: family.get(idx).id().to_string(),
                method: Method::Tree,
                revalue: None,
            };
            Ok((est, oracle))
        }
    }
}

/// Residuals of the dynamic programming composition.
#[derive(Debug, Clone)]
pub struct DppReport {
    /// |direct - composed| at the root.
    pub residual: f64,
    /// Worst |direct node value - fresh inner value| over boundary nodes.
    pub worst_node: f64,
    pub nodes_checked: usize,
    /// Standard-error style tolerance for MC reports; zero on trees.
    pub combined_std_error: f64,
}

/// DPP residual at a fixed split index: value directly from the history
/// versus the composition with the inner value function at the split used
/// as intermediate payoff.
pub fn dpp_residual_tree(
    model: &TreeModel,
    history: &PathPrefix,
    split: usize,
) -> Result<DppReport> {
    let k0 = history.cut();
    let n = model.grid.steps();
    if split < k0 || split > n {
        return Err(Error::IndexOutOfRange { index: split, max: n });
    }
    let mut direct = TreeOracle::closed_loop(model)?;
    let v_direct = direct.value(history)?;

    let inner = TreeOracle::closed_loop(model)?;
    let mut composed = TreeOracle::closed_loop(model)?.composed(Boundary::Split(split), inner);
    let v_composed = composed.value(history)?;

    // per-node comparison at the split: direct table versus a fresh oracle
    let mut fresh = TreeOracle::closed_loop(model)?;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let boundary: Vec<NodeKey> = direct
        .entries()
        .filter(|(_, e)| e.step == split)
        .map(|(k, _)| k.clone())
        .collect();
    for key in boundary {
        let prefix = direct.prefix_from_key(&key)?;
        let v_node = direct.entry(&prefix).map(|e| e.value).expect("key from table");
        let v_fresh = fresh.value(&prefix)?;
        worst = worst.max((v_node - v_fresh).abs());
        checked += 1;
    }
    Ok(DppReport {
        residual: (v_direct - v_composed).abs(),
        worst_node: worst,
        nodes_checked: checked,
        combined_std_error: 0.0,
    })
}

/// DPP residual with the split determined per path by a stopping rule.
pub fn dpp_residual_tree_at_stop(
    model: &TreeModel,
    history: &PathPrefix,
    stop: &StoppingRule,
) -> Result<DppReport> {
    let mut direct = TreeOracle::closed_loop(model)?;
    let v_direct = direct.value(history)?;
    let inner = TreeOracle::closed_loop(model)?;
    let mut composed =
        TreeOracle::closed_loop(model)?.composed(Boundary::Stop(stop.clone()), inner);
    let v_composed = composed.value(history)?;
    Ok(DppReport {
        residual: (v_direct - v_composed).abs(),
        worst_node: (v_direct - v_composed).abs(),
        nodes_checked: 1,
        combined_std_error: 0.0,
    })
}

/// Supermartingale check over the whole tree.
#[derive(Debug, Clone)]
pub struct SupermartingaleReport {
    /// Most negative value of V_k - E[V_{k+1}] over nodes and rules
    /// (should be >= -1e-12).
    pub max_violation: f64,
    /// Largest |V_k - E[V_{k+1}]| at nodes where the rule picks the argmax
    /// (should be <= 1e-12).
    pub max_argmax_gap: f64,
    pub nodes_checked: usize,
}

/// At every tree node and for every supplied fixed control rule, check
/// V_k(prefix) >= average over branches of V_{k+1} under the rule's control
/// value, with equality where the rule attains the node max.
pub fn supermartingale_check(
    model: &TreeModel,
    history: &PathPrefix,
    rules: &[ControlProcess],
) -> Result<SupermartingaleReport> {
    let mut oracle = TreeOracle::closed_loop(model)?;
    oracle.value(history)?;
    let mut max_violation = 0.0f64;
    let mut max_argmax_gap = 0.0f64;
    let mut nodes = 0usize;
    let rules = rules.to_vec();
    let mut work = history.clone();
    let mut seen = std::collections::HashSet::new();
    oracle.walk_nodes(&mut work, &mut seen, &mut |oracle, prefix| {
        nodes += 1;
        let entry = oracle.entry(prefix).cloned().expect("node resolved");
        let k = prefix.cut();
        let sqrt_dt = prefix.grid().dt(k).sqrt();
        for rule in &rules {
            let u = rule.value(k, prefix);
            let mut mean = 0.0;
            let mut child = prefix.clone();
            for dw in [sqrt_dt, -sqrt_dt] {
                let x = euler_step(&oracle.model.coeff, k, prefix, &u, &[dw])?;
                child.push(&x);
                mean += oracle.value_rec(&mut child)?;
                child.pop();
            }
            mean *= 0.5;
            let slack = entry.value - mean;
            max_violation = max_violation.max(-slack);
            if u == entry.u {
                max_argmax_gap = max_argmax_gap.max(slack.abs());
            }
        }
        Ok(())
    })?;
    Ok(SupermartingaleReport { max_violation, max_argmax_gap, nodes_checked: nodes })
}

/// Value process along all Rademacher paths under one fixed control:
/// exhaustive enumeration with exact table lookups; `y` holds the optimal
/// value evaluated along the realized prefixes, terminal entry the payoff.
pub fn value_process_tree(
    model: &TreeModel,
    history: &PathPrefix,
    control: &ControlProcess,
) -> Result<(ValuePath, TreeOracle)> {
    let k0 = history.cut();
    let n = model.grid.steps();
    let span = n - k0;
    let count = 1usize << span;
    if count > model.node_cap {
        return Err(Error::NodeCapExceeded { cap: model.node_cap });
    }
    let mut oracle = TreeOracle::closed_loop(model)?;
    oracle.value(history)?;
    let mut states = Vec::with_capacity(count);
    let mut ys = Vec::with_capacity(count);
    for signs in 0..count {
        let mut prefix = history.clone();
        let mut xrow = Vec::with_capacity(span + 1);
        let mut yrow = Vec::with_capacity(span + 1);
        xrow.push(prefix.last()[0]);
        yrow.push(oracle.value(&prefix)?);
        for k in k0..n {
            let u = control.value(k, &prefix);
            if !model.coeff.control_set.contains(&u) {
                return Err(Error::ControlOutsideSet { value: u });
            }
            let sqrt_dt = model.grid.dt(k).sqrt();
            let dw = if signs >> (k - k0) & 1 == 0 { sqrt_dt } else { -sqrt_dt };
            let x = euler_step(&model.coeff, k, &prefix, &u, &[dw])?;
            prefix.push(&x);
            xrow.push(x[0]);
            yrow.push(oracle.value(&prefix)?);
        }
        states.push(xrow);
        ys.push(yrow);
    }
    let vp = ValuePath {
        k0,
        states,
        y: ys,
        weight: 1.0 / count as f64,
        method: "tree_exhaustive".into(),
    };
    Ok((vp, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{ControlFamily, ControlProcess, StoppingRule};
    use crate::pathspace::{PathPrefix, TimeGrid};
    use crate::sde::{CoefficientSpec, ControlSetDescriptor};
    use std::sync::Arc;

    fn controlled_vol(us: Vec<f64>) -> CoefficientSpec {
        CoefficientSpec {
            dim: 1,
            drift: Arc::new(|_, _, _| vec![0.0]),
            diffusion: Arc::new(|_, _, u: &[f64]| vec![u[0]]),
            lipschitz: 0.0,
            control_set: ControlSetDescriptor::points(us.into_iter().map(|u| vec![u]).collect()),
            diffusion_invertible: true,
            drift_uncontrolled: true,
        }
    }

    fn square() -> Payoff {
        Payoff::new("square", |p| {
            let x = p.terminal()[0];
            x * x
        })
    }

    fn model(n: usize, payoff: Payoff) -> TreeModel {
        TreeModel::new(controlled_vol(vec![0.5, 1.0]), payoff, TimeGrid::uniform(1.0, n))
    }

    fn origin(m: &TreeModel) -> PathPrefix {
        PathPrefix::origin(m.grid.clone(), &[0.0])
    }

    #[test]
    fn linear_payoff_value_is_start() {
        // every control yields a mean-zero increment sum
        let m = model(4, Payoff::new("terminal", |p| p.terminal()[0]));
        let h = PathPrefix::origin(m.grid.clone(), &[0.7]);
        let (est, _) = value_tree(&m, &h).unwrap();
        assert!((est.value - 0.7).abs() <= 1e-12);
    }

    #[test]
    fn square_payoff_max_variance() {
        // E[(x + u eps sqrt(dt))^2] = x^2 + u^2 dt accumulates to sigma_max^2 T
        for n in [1usize, 2, 4, 5, 8] {
            let m = model(n, square());
            let (est, _) = value_tree(&m, &origin(&m)).unwrap();
            assert!((est.value - 1.0).abs() <= 1e-12, "n={n}: {}", est.value);
        }
    }

    #[test]
    fn neg_square_payoff_min_variance() {
        let m = model(4, Payoff::new("neg_square", |p| -p.terminal()[0] * p.terminal()[0]));
        let (est, _) = value_tree(&m, &origin(&m)).unwrap();
        assert!((est.value + 0.25).abs() <= 1e-12);
    }

    #[test]
    fn family_mode_constant_controls() {
        let fam = ControlFamily::new(vec![
            ControlProcess::constant("lo", vec![0.5]),
            ControlProcess::constant("hi", vec![1.0]),
        ])
        .unwrap();
        let m = model(4, square()).with_family(fam);
        let (est, _) = value_tree(&m, &origin(&m)).unwrap();
        assert!((est.value - 1.0).abs() <= 1e-12);
        assert_eq!(est.argmax_id, "hi");
    }

    #[test]
    fn constant_payoff_any_family() {
        let m = model(3, Payoff::new("const", |_| 4.25));
        let (est, _) = value_tree(&m, &origin(&m)).unwrap();
        assert_eq!(est.value, 4.25);
    }

    #[test]
    fn dpp_residual_zero() {
        let lookback = Payoff::new("lookback", |p| {
            (0..=p.grid().steps()).map(|j| p.point(j)[0]).fold(f64::NEG_INFINITY, f64::max)
        });
        let m = model(4, lookback);
        let h = origin(&m);
        for j in 0..=4 {
            let rep = dpp_residual_tree(&m, &h, j).unwrap();
            assert!(rep.residual <= 1e-12, "split {j}: {}", rep.residual);
            assert!(rep.worst_node <= 1e-12, "split {j}: worst {}", rep.worst_node);
        }
    }

    #[test]
    fn dpp_residual_at_stop_zero() {
        let m = model(4, square());
        let h = origin(&m);
        let stop = StoppingRule::barrier(4, 0.5);
        let rep = dpp_residual_tree_at_stop(&m, &h, &stop).unwrap();
        assert!(rep.residual <= 1e-12);
    }

    #[test]
    fn supermartingale_everywhere() {
        let m = model(4, square());
        let h = origin(&m);
        let rules = vec![
            ControlProcess::constant("lo", vec![0.5]),
            ControlProcess::constant("hi", vec![1.0]),
            ControlProcess::new("switch", |_, p: &PathPrefix| {
                if p.last()[0] >= 0.0 {
                    vec![0.5]
                } else {
                    vec![1.0]
                }
            }),
        ];
        let rep = supermartingale_check(&m, &h, &rules).unwrap();
        assert!(rep.max_violation <= 1e-12, "violation {}", rep.max_violation);
        assert!(rep.max_argmax_gap <= 1e-12, "gap {}", rep.max_argmax_gap);
        assert!(rep.nodes_checked > 0);
    }

    #[test]
    fn value_process_square_closed_form() {
        // Y_k = X_k^2 + sigma_max^2 (T - t_k) at every node
        let m = model(4, square());
        let h = origin(&m);
        let control = ControlProcess::constant("lo", vec![0.5]);
        let (vp, _) = value_process_tree(&m, &h, &control).unwrap();
        for (xrow, yrow) in vp.states.iter().zip(&vp.y) {
            for (k, (x, y)) in xrow.iter().zip(yrow).enumerate() {
                let expected = x * x + (1.0 - k as f64 * 0.25);
                assert!((y - expected).abs() <= 1e-12, "k={k}: {y} vs {expected}");
            }
        }
    }

    #[test]
    fn value_process_terminal_is_payoff() {
        let m = model(3, square());
        let h = origin(&m);
        let control = ControlProcess::constant("hi", vec![1.0]);
        let (vp, _) = value_process_tree(&m, &h, &control).unwrap();
        for (xrow, yrow) in vp.states.iter().zip(&vp.y) {
            let xt = *xrow.last().unwrap();
            assert_eq!(*yrow.last().unwrap(), xt * xt);
        }
    }

    #[test]
    fn monotonicity_and_constants() {
        let m = model(3, square());
        let h = origin(&m);
        let (v_sq, _) = value_tree(&m, &h).unwrap();
        // xi <= psi pointwise => V(xi) <= V(psi)
        let bigger = Payoff::new("square_plus", |p| p.terminal()[0] * p.terminal()[0] + 0.3);
        let m2 = model(3, bigger);
        let (v_big, _) = value_tree(&m2, &h).unwrap();
        assert!(v_sq.value <= v_big.value + 1e-12);
        // V(xi + c) = V(xi) + c exactly
        assert!((v_big.value - v_sq.value - 0.3).abs() <= 1e-12);
    }

    #[test]
    fn node_cap_respected() {
        let m = model(20, square()).with_node_cap(100);
        let h = origin(&m);
        assert!(matches!(value_tree(&m, &h), Err(Error::NodeCapExceeded { .. })));
    }
}
