//! Controlled path-dependent SDE engine.
//!
//! Coefficients are feedback rules on path prefixes, so conditioning on a
//! history is just concatenation, and the explicit left-point Euler scheme
//! makes the flow/conditioning identity hold step by step.

use std::sync::Arc;

use rayon::prelude::*;

use crate::control::ControlProcess;
use crate::error::{Error, Result};
use crate::pathspace::{sup_distance_from, PathPrefix, PathSegment, TimeGrid};
use crate::rng::NoiseModel;

pub type DriftRule = Arc<dyn Fn(usize, &PathPrefix, &[f64]) -> Vec<f64> + Send + Sync>;
/// Row-major d x d matrix.
pub type DiffusionRule = Arc<dyn Fn(usize, &PathPrefix, &[f64]) -> Vec<f64> + Send + Sync>;

/// Finite control set, either explicit points or a gridded axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSetDescriptor {
    Points(Vec<Vec<f64>>),
    Box { low: Vec<f64>, high: Vec<f64>, counts: Vec<usize> },
}

impl ControlSetDescriptor {
    pub fn points(points: Vec<Vec<f64>>) -> Self {
        assert!(!points.is_empty(), "control set must be nonempty");
        assert!(points.iter().flatten().all(|v| v.is_finite()));
        ControlSetDescriptor::Points(points)
    }

    pub fn gridded_box(low: Vec<f64>, high: Vec<f64>, counts: Vec<usize>) -> Self {
        assert_eq!(low.len(), high.len());
        assert_eq!(low.len(), counts.len());
        assert!(counts.iter().all(|&c| c >= 1));
        assert!(low.iter().zip(&high).all(|(l, h)| l <= h));
        ControlSetDescriptor::Box { low, high, counts }
    }

    /// The induced finite list of points, in deterministic order.
    pub fn enumerate(&self) -> Vec<Vec<f64>> {
        match self {
            ControlSetDescriptor::Points(p) => p.clone(),
            ControlSetDescriptor::Box { low, high, counts } => {
                let axes: Vec<Vec<f64>> = low
                    .iter()
                    .zip(high)
                    .zip(counts)
                    .map(|((&l, &h), &c)| {
                        if c == 1 {
                            vec![l]
                        } else {
                            (0..c).map(|i| l + (h - l) * i as f64 / (c - 1) as f64).collect()
                        }
                    })
                    .collect();
                let mut out = vec![vec![]];
                for axis in &axes {
                    let mut next = Vec::with_capacity(out.len() * axis.len());
                    for p in &out {
                        for &v in axis {
                            let mut q = p.clone();
                            q.push(v);
                            next.push(q);
                        }
                    }
                    out = next;
                }
                out
            }
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        const TOL: f64 = 1e-12;
        self.enumerate()
            .iter()
            .any(|p| p.len() == u.len() && p.iter().zip(u).all(|(a, b)| (a - b).abs() <= TOL))
    }
}

/// Drift/diffusion pair with its declared Lipschitz constant (in the prefix
/// sup-norm) and control-set descriptor.
#[derive(Clone)]
pub struct CoefficientSpec {
    pub dim: usize,
    pub drift: DriftRule,
    pub diffusion: DiffusionRule,
    /// Declared Lipschitz constant K of both coefficients in the sup-norm.
    pub lipschitz: f64,
    pub control_set: ControlSetDescriptor,
    /// Attests that the diffusion matrix is invertible at every evaluation.
    pub diffusion_invertible: bool,
    /// The drift does not depend on the control value.
    pub drift_uncontrolled: bool,
}

impl std::fmt::Debug for CoefficientSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientSpec")
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("control_set", &self.control_set)
            .field("diffusion_invertible", &self.diffusion_invertible)
            .field("drift_uncontrolled", &self.drift_uncontrolled)
            .finish()
    }
}

fn det(d: usize, m: &[f64]) -> f64 {
    // Gaussian elimination with partial pivoting; d is small.
    let mut a = m.to_vec();
    let mut det = 1.0;
    for col in 0..d {
        let pivot = (col..d).max_by(|&i, &j| {
            a[i * d + col].abs().partial_cmp(&a[j * d + col].abs()).unwrap()
        });
        let p = pivot.unwrap();
        if a[p * d + col] == 0.0 {
            return 0.0;
        }
        if p != col {
            for j in 0..d {
                a.swap(p * d + j, col * d + j);
            }
            det = -det;
        }
        det *= a[col * d + col];
        for i in col + 1..d {
            let f = a[i * d + col] / a[col * d + col];
            for j in col..d {
                a[i * d + j] -= f * a[col * d + j];
            }
        }
    }
    det
}

impl CoefficientSpec {
    /// Runtime spot-check of the invertibility attestation on sampled
    /// inputs. Returns an error if a sampled diffusion matrix is singular.
    pub fn check_invertibility(&self, prefixes: &[PathPrefix]) -> Result<()> {
        if !self.diffusion_invertible {
            return Ok(());
        }
        for prefix in prefixes {
            for u in self.control_set.enumerate() {
                let m = (self.diffusion)(prefix.cut(), prefix, &u);
                if det(self.dim, &m).abs() < 1e-14 {
                    return Err(Error::DegenerateDiffusion { step: prefix.cut() });
                }
            }
        }
        Ok(())
    }
}

/// Gronwall stability constant C = C0 exp(C0 T). C0 collects the
/// martingale-part bound (8K^2 T + 8K^2 integral) and the drift-part bound
/// (2K^2 T^2 + 2K^2 T integral) through (a+b)^2 <= 2a^2 + 2b^2.
pub fn gronwall_constant(k_lip: f64, horizon: f64) -> f64 {
    let k2 = k_lip * k_lip;
    let c0 = 2.0
        * f64::max(
            8.0 * k2 * horizon + 2.0 * k2 * horizon * horizon,
            8.0 * k2 + 2.0 * k2 * horizon,
        );
    c0 * (c0 * horizon).exp()
}

/// One explicit Euler step from the current prefix endpoint:
/// `x + mu(k, prefix, u) dt + sigma(k, prefix, u) dW`.
/// Shared by the Monte Carlo engine and the tree oracle so that identical
/// inputs give bitwise-identical outputs.
pub(crate) fn euler_step(
    coeff: &CoefficientSpec,
    k: usize,
    prefix: &PathPrefix,
    u: &[f64],
    dw: &[f64],
) -> Result<Vec<f64>> {
    let d = coeff.dim;
    let dt = prefix.grid().dt(k);
    let mu = (coeff.drift)(k, prefix, u);
    let sg = (coeff.diffusion)(k, prefix, u);
    if mu.len() != d || !mu.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "drift", step: k });
    }
    if sg.len() != d * d || !sg.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "diffusion", step: k });
    }
    let x = prefix.last();
    let mut next = Vec::with_capacity(d);
    for i in 0..d {
        let mut v = x[i] + mu[i] * dt;
        for j in 0..d {
            v += sg[i * d + j] * dw[j];
        }
        next.push(v);
    }
    Ok(next)
}

/// Solve the conditioned SDE from index `k0` with the given noise
/// increments (flat, `(N - k0) * d` values). Deterministic given inputs.
pub fn euler_solve(
    coeff: &CoefficientSpec,
    control: &ControlProcess,
    k0: usize,
    history: &PathPrefix,
    noise: &[f64],
) -> Result<PathSegment> {
    let grid = history.grid().clone();
    let n = grid.steps();
    let d = coeff.dim;
    if history.cut() != k0 {
        return Err(Error::IndexOutOfRange { index: history.cut(), max: k0 });
    }
    if history.dim() != d {
        return Err(Error::DimMismatch { expected: d, got: history.dim() });
    }
    if noise.len() != (n - k0) * d {
        return Err(Error::NoiseLength { expected: (n - k0) * d, got: noise.len() });
    }
    let mut prefix = history.clone();
    let mut values = Vec::with_capacity((n + 1 - k0) * d);
    values.extend_from_slice(history.last());
    for k in k0..n {
        let u = control.value(k, &prefix);
        if !coeff.control_set.contains(&u) {
            return Err(Error::ControlOutsideSet { value: u });
        }
        let dw = &noise[(k - k0) * d..(k - k0 + 1) * d];
        let x = euler_step(coeff, k, &prefix, &u, dw)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "state", step: k + 1 });
        }
        values.extend_from_slice(&x);
        prefix.push(&x);
    }
    PathSegment::new(grid, d, k0, values)
}

/// Conditioned coefficients: the original rules evaluated on the
/// concatenation of `history` with the supplied continuation prefix. The
/// declared Lipschitz constant is the inherited bound 2K.
pub fn conditioned_coefficients(
    coeff: &CoefficientSpec,
    k: usize,
    history: &PathPrefix,
) -> Result<CoefficientSpec> {
    if history.cut() != k {
        return Err(Error::IndexOutOfRange { index: history.cut(), max: k });
    }
    let merge = {
        let history = history.clone();
        move |prefix: &PathPrefix| -> PathPrefix {
            let r = prefix.cut();
            if r <= k {
                return history.restrict(r).expect("r <= k <= history cut");
            }
            let mut merged = history.clone();
            let anchor = history.last().to_vec();
            let base = prefix.point(k).to_vec();
            for j in k + 1..=r {
                let p = prefix.point(j);
                let x: Vec<f64> =
                    anchor.iter().zip(&base).zip(p).map(|((a, b), v)| a + (v - b)).collect();
                merged.push(&x);
            }
            merged
        }
    };
    let merge2 = merge.clone();
    let drift = coeff.drift.clone();
    let diffusion = coeff.diffusion.clone();
    Ok(CoefficientSpec {
        dim: coeff.dim,
        drift: Arc::new(move |r, prefix, u| drift(r, &merge(prefix), u)),
        diffusion: Arc::new(move |r, prefix, u| diffusion(r, &merge2(prefix), u)),
        lipschitz: 2.0 * coeff.lipschitz,
        control_set: coeff.control_set.clone(),
        diffusion_invertible: coeff.diffusion_invertible,
        drift_uncontrolled: coeff.drift_uncontrolled,
    })
}

/// Seeded collection of simulated paths: the empirical proxy for the law of
/// the conditioned solution.
#[derive(Debug, Clone)]
pub struct Ensemble {
    k0: usize,
    history: PathPrefix,
    members: Vec<PathSegment>,
    noise: Option<Vec<Vec<f64>>>,
    seed: u64,
    model: NoiseModel,
}

impl Ensemble {
    pub fn k0(&self) -> usize {
        self.k0
    }
    pub fn history(&self) -> &PathPrefix {
        &self.history
    }
    pub fn members(&self) -> &[PathSegment] {
        &self.members
    }
    pub fn len(&self) -> usize {
        self.members.len()
    }
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn noise_model(&self) -> NoiseModel {
        self.model
    }
    pub fn noise(&self) -> Option<&[Vec<f64>]> {
        self.noise.as_deref()
    }

    /// CSV with columns `path_id,step,t,x_0,...`.
    pub fn to_csv(&self) -> String {
        let grid = self.history.grid();
        let d = self.history.dim();
        let mut out = String::from("path_id,step,t");
        for i in 0..d {
            out.push_str(&format!(",x_{i}"));
        }
        out.push('\n');
        for (pid, m) in self.members.iter().enumerate() {
            for j in self.k0..=grid.steps() {
                out.push_str(&format!("{pid},{j},{:.16e}", grid.node(j)));
                for v in m.point(j) {
                    out.push_str(&format!(",{v:.16e}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Noise increments for one member path, indexed by absolute step so that
/// a split re-simulation sees the same increments after the split.
pub fn member_noise(
    grid: &TimeGrid,
    dim: usize,
    k0: usize,
    seed: u64,
    path_id: u64,
    model: NoiseModel,
) -> Vec<f64> {
    let n = grid.steps();
    let mut noise = Vec::with_capacity((n - k0) * dim);
    for k in k0..n {
        let dt = grid.dt(k);
        for axis in 0..dim {
            noise.push(model.increment(seed, path_id, k as u64, axis as u64, dt));
        }
    }
    noise
}

/// Simulate `m` independent solutions with counter-based substreams indexed
/// by `(seed, path id, step)`. Bitwise deterministic given the seed and
/// independent of the parallelism degree.
pub fn simulate_ensemble(
    coeff: &CoefficientSpec,
    control: &ControlProcess,
    k0: usize,
    history: &PathPrefix,
    m: usize,
    seed: u64,
    model: NoiseModel,
    store_noise: bool,
) -> Result<Ensemble> {
    if m < 1 {
        return Err(Error::Config("ensemble size must be >= 1".into()));
    }
    let grid = history.grid().clone();
    let d = coeff.dim;
    let results: Vec<Result<(PathSegment, Option<Vec<f64>>)>> = (0..m)
        .into_par_iter()
        .map(|pid| {
            let noise = member_noise(&grid, d, k0, seed, pid as u64, model);
            let seg = euler_solve(coeff, control, k0, history, &noise)?;
            Ok((seg, if store_noise { Some(noise) } else { None }))
        })
        .collect();
    let mut members = Vec::with_capacity(m);
    let mut noises = if store_noise { Some(Vec::with_capacity(m)) } else { None };
    for r in results {
        let (seg, noise) = r?;
        members.push(seg);
        if let (Some(ns), Some(n)) = (noises.as_mut(), noise) {
            ns.push(n);
        }
    }
    Ok(Ensemble { k0, history: history.clone(), members, noise: noises, seed, model })
}

/// Flow/conditioning identity: solving on `[s, T]` and re-solving on
/// `[t, T]` from the realized history with the same noise must agree on
/// `[t, T]`. Returns the relative sup discrepancy.
pub fn flow_consistency_check(
    coeff: &CoefficientSpec,
    control: &ControlProcess,
    s: usize,
    t: usize,
    history: &PathPrefix,
    noise: &[f64],
) -> Result<f64> {
    if t < s {
        return Err(Error::IndexOutOfRange { index: t, max: s });
    }
    let grid = history.grid().clone();
    let n = grid.steps();
    let d = coeff.dim;
    let full = euler_solve(coeff, control, s, history, noise)?;
    // history for the second solve: the original history concatenated with
    // the [s, t] portion of the first solution
    let mut mid = history.clone();
    for j in s + 1..=t {
        mid.push(full.point(j));
    }
    let tail_noise = &noise[(t - s) * d..];
    let resolved = euler_solve(coeff, control, t, &mid, tail_noise)?;
    let disc = sup_distance_from(&full, &resolved, t, n)?;
    let mut scale = 1.0f64;
    for j in t..=n {
        for v in full.point(j) {
            scale = scale.max(v.abs());
        }
    }
    Ok(disc / scale)
}

/// Convenience constructors used across tests: path-independent constant
/// coefficients.
pub fn constant_coefficients(
    dim: usize,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    control_set: ControlSetDescriptor,
) -> CoefficientSpec {
    assert_eq!(mu.len(), dim);
    assert_eq!(sigma.len(), dim * dim);
    let invertible = det(dim, &sigma).abs() > 0.0;
    CoefficientSpec {
        dim,
        drift: Arc::new(move |_, _, _| mu.clone()),
        diffusion: Arc::new(move |_, _, _| sigma.clone()),
        lipschitz: 0.0,
        control_set,
        diffusion_invertible: invertible,
        drift_uncontrolled: true,
    }
}
