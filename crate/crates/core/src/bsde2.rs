//! Second-order BSDE decomposition of the value process under a fixed
//! control: Y is always the globally optimal value evaluated along the
//! fixed-control paths, Z the martingale-integrand difference quotient,
//! K the nondecreasing compensator. Exact on binomial trees; Z is a
//! bucketed least-squares coefficient on Monte Carlo ensembles.

use std::collections::{HashMap, HashSet};

use crate::control::{ControlFamily, ControlProcess};
use crate::error::{Error, Result};
use crate::pathspace::PathPrefix;
use crate::rng::NoiseModel;
use crate::sde::{euler_solve, member_noise, CoefficientSpec};
use crate::value::{TreeModel, TreeOracle};

/// One step of the decomposition along one path.
#[derive(Debug, Clone)]
pub struct StepEntry {
    pub step: usize,
    pub state: f64,
    pub y: f64,
    pub z: f64,
    /// Realized martingale increment dX - mu dt on this path.
    pub dm: f64,
    pub dk: f64,
    /// K accumulated through this step (K at k0 is zero).
    pub k_cum: f64,
}

/// Exact decomposition under one fixed control, all Rademacher paths.
#[derive(Debug, Clone)]
pub struct BsdeDecomposition {
    pub control_id: String,
    pub k0: usize,
    /// Per enumerated path: one entry per step k0..N.
    pub steps: Vec<Vec<StepEntry>>,
    /// Terminal Y per path (equals the payoff on the realized path).
    pub terminal_y: Vec<f64>,
    pub y0: f64,
    pub min_dk: f64,
    /// Worst |Y_{k+1} - Y_k - Z dM + dK| over all paths and steps.
    pub max_identity_residual: f64,
}

/// Z at one tree node: difference quotient of the continuation values
/// against the martingale increments of the two branches.
pub fn estimate_z_node(
    oracle: &mut TreeOracle,
    coeff: &CoefficientSpec,
    prefix: &PathPrefix,
    u: &[f64],
) -> Result<f64> {
    let k = prefix.cut();
    let sigma = (coeff.diffusion)(k, prefix, u)[0];
    if sigma == 0.0 {
        return Err(Error::DegenerateDiffusion { step: k });
    }
    let sqrt_dt = prefix.grid().dt(k).sqrt();
    let (up, down) = oracle.children(prefix, u)?;
    let mut child = prefix.clone();
    child.push(&[up]);
    let y_up = oracle.value(&child)?;
    child.pop();
    child.push(&[down]);
    let y_down = oracle.value(&child)?;
    // dM_up - dM_down = 2 sigma sqrt(dt)
    Ok((y_up - y_down) / (2.0 * sigma * sqrt_dt))
}

/// Full tree decomposition under `control`: Y from the closed-loop oracle
/// along every fixed-control path, Z per node, dK = Y_k - branch average of
/// Y_{k+1} (branch independent). Errors if any dK < -tol.
pub fn decompose_tree(
    model: &TreeModel,
    history: &PathPrefix,
    control: &ControlProcess,
    tol: f64,
) -> Result<BsdeDecomposition> {
    let k0 = history.cut();
    let n = model.grid.steps();
    let span = n - k0;
    let count = 1usize << span;
    if count > model.node_cap {
        return Err(Error::NodeCapExceeded { cap: model.node_cap });
    }
    let mut oracle = TreeOracle::closed_loop(model)?;
    let y0 = oracle.value(history)?;
    let mut steps = Vec::with_capacity(count);
    let mut terminal_y = Vec::with_capacity(count);
    let mut min_dk = f64::INFINITY;
    let mut max_resid = 0.0f64;
    for signs in 0..count {
        let mut prefix = history.clone();
        let mut k_cum = 0.0;
        let mut row = Vec::with_capacity(span);
        for k in k0..n {
            let u = control.value(k, &prefix);
            if !model.coeff.control_set.contains(&u) {
                return Err(Error::ControlOutsideSet { value: u });
            }
            let y = oracle.value(&prefix)?;
            let z = estimate_z_node(&mut oracle, &model.coeff, &prefix, &u)?;
            let (up, down) = oracle.children(&prefix, &u)?;
            let mut child = prefix.clone();
            child.push(&[up]);
            let y_up = oracle.value(&child)?;
            child.pop();
            child.push(&[down]);
            let y_down = oracle.value(&child)?;
            let dk = y - 0.5 * (y_up + y_down);
            if dk < -tol {
                return Err(Error::NegativeCompensator { value: dk, tol, step: k });
            }
            min_dk = min_dk.min(dk);
            k_cum += dk;
            let sqrt_dt = model.grid.dt(k).sqrt();
            let sigma = (model.coeff.diffusion)(k, &prefix, &u)[0];
            let (x_next, dm, y_next) = if signs >> (k - k0) & 1 == 0 {
                (up, sigma * sqrt_dt, y_up)
            } else {
                (down, -sigma * sqrt_dt, y_down)
            };
            max_resid = max_resid.max((y_next - y - z * dm + dk).abs());
            row.push(StepEntry { step: k, state: prefix.last()[0], y, z, dm, dk, k_cum });
            prefix.push(&[x_next]);
        }
        terminal_y.push(oracle.value(&prefix)?);
        steps.push(row);
    }
    Ok(BsdeDecomposition {
        control_id: control.id().to_string(),
        k0,
        steps,
        terminal_y,
        y0,
        min_dk: if min_dk.is_finite() { min_dk } else { 0.0 },
        max_identity_residual: max_resid,
    })
}

/// Bucketed least-squares Z estimate at one time step: within each
/// quantile bucket of the state, regress dY on dM through the origin.
#[derive(Debug, Clone)]
pub struct ZRegression {
    pub step: usize,
    /// Bucket upper edges on the state (last edge is +inf).
    pub edges: Vec<f64>,
    pub z: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Regression Z from path data: `states[m][j]`, `ys[m][j]` with j indexing
/// steps k0..=N, `dms[m][j]` the martingale increments over [k0+j, k0+j+1].
pub fn estimate_z_mc(
    k0: usize,
    states: &[Vec<f64>],
    ys: &[Vec<f64>],
    dms: &[Vec<f64>],
    buckets: usize,
) -> Result<Vec<ZRegression>> {
    if states.is_empty() || buckets == 0 {
        return Err(Error::Config("regression needs members and >= 1 bucket".into()));
    }
    let span = dms[0].len();
    let mut out = Vec::with_capacity(span);
    for j in 0..span {
        let mut xs: Vec<f64> = states.iter().map(|r| r[j]).collect();
        xs.sort_by(f64::total_cmp);
        let m = xs.len();
        let edges: Vec<f64> = (1..buckets)
            .map(|b| xs[(b * m / buckets).min(m - 1)])
            .chain(std::iter::once(f64::INFINITY))
            .collect();
        let mut num = vec![0.0; buckets];
        let mut den = vec![0.0; buckets];
        let mut counts = vec![0usize; buckets];
        for mth in 0..m {
            let x = states[mth][j];
            let b = edges.iter().position(|e| x <= *e).unwrap_or(buckets - 1);
            let dy = ys[mth][j + 1] - ys[mth][j];
            let dm = dms[mth][j];
            num[b] += dy * dm;
            den[b] += dm * dm;
            counts[b] += 1;
        }
        let z = num
            .iter()
            .zip(&den)
            .map(|(n, d)| if *d > 0.0 { n / d } else { f64::NAN })
            .collect();
        out.push(ZRegression { step: k0 + j, edges, z, counts });
    }
    Ok(out)
}

/// Minimality of the compensator family at one step.
#[derive(Debug, Clone)]
pub struct MinimalityReport {
    pub step: usize,
    /// Per node at the step (reachable under the base control):
    /// (state, inf over continuations of E[K_T - K_k], attaining id).
    pub nodes: Vec<(f64, f64, String)>,
    pub worst: f64,
    /// Set when the optimal continuation was not included, so the reported
    /// infima only bound the true essential infimum from above.
    pub lower_bound_only: bool,
}

/// Inf over pasted continuations of E[K_T - K_k] at every node of step `k`
/// reachable from `history` under `base`. By telescoping, E[K_T - K_k]
/// under a continuation equals Y_k(node) minus the plain expectation of the
/// payoff under that continuation, so the infimum is computed from
/// fixed-control expectations. With `include_optimal` the oracle's argmax
/// rule joins the family and the infimum is exactly zero.
pub fn minimality_residual(
    model: &TreeModel,
    history: &PathPrefix,
    base: &ControlProcess,
    family: &ControlFamily,
    k: usize,
    include_optimal: bool,
) -> Result<MinimalityReport> {
    let k0 = history.cut();
    let n = model.grid.steps();
    if k < k0 || k > n {
        return Err(Error::IndexOutOfRange { index: k, max: n });
    }
    let mut oracle = TreeOracle::closed_loop(model)?;
    oracle.value(history)?;
    // nodes at step k reachable under the base control
    let mut prefixes: Vec<PathPrefix> = Vec::new();
    let mut seen = HashSet::new();
    collect_reachable(model, history, base, k, &mut prefixes, &mut seen)?;

    let mut continuations: Vec<ControlProcess> = family.controls().to_vec();
    if include_optimal {
        continuations.push(oracle.optimal_rule("optimal"));
    }
    let mut evaluators: Vec<TreeOracle> = continuations
        .iter()
        .map(|c| TreeOracle::fixed_control(model, c))
        .collect::<Result<_>>()?;

    let mut nodes = Vec::with_capacity(prefixes.len());
    let mut worst = 0.0f64;
    for prefix in &prefixes {
        let y = oracle.value(prefix)?;
        let mut inf = f64::INFINITY;
        let mut attain = String::new();
        for (c, eval) in continuations.iter().zip(evaluators.iter_mut()) {
            let expected = eval.value(prefix)?;
            let rem = y - expected; // E[K_T - K_k] under this continuation
            if rem < inf {
                inf = rem;
                attain = c.id().to_string();
            }
        }
        worst = worst.max(inf.abs());
        nodes.push((prefix.last()[0], inf, attain));
    }
    Ok(MinimalityReport { step: k, nodes, worst, lower_bound_only: !include_optimal })
}

fn collect_reachable(
    model: &TreeModel,
    history: &PathPrefix,
    base: &ControlProcess,
    k: usize,
    out: &mut Vec<PathPrefix>,
    seen: &mut HashSet<Vec<u64>>,
) -> Result<()> {
    let cut = history.cut();
    if cut == k {
        let key: Vec<u64> =
            (0..=cut).map(|j| history.point(j)[0].to_bits()).collect();
        if seen.insert(key) {
            out.push(history.clone());
        }
        return Ok(());
    }
    let u = base.value(cut, history);
    let sqrt_dt = model.grid.dt(cut).sqrt();
    let mut child = history.clone();
    for dw in [sqrt_dt, -sqrt_dt] {
        let x = crate::sde::euler_step(&model.coeff, cut, history, &u, &[dw])?;
        child.push(&x);
        collect_reachable(model, &child, base, k, out, seen)?;
        child.pop();
    }
    Ok(())
}

/// Minimal-solution comparison: largest Y(node) - alt(node) over all
/// resolved nodes (nonpositive when `alt` is an alternative supersolution).
pub fn compare_alternative_y(
    model: &TreeModel,
    history: &PathPrefix,
    alt: impl Fn(usize, f64) -> f64,
) -> Result<f64> {
    let mut oracle = TreeOracle::closed_loop(model)?;
    oracle.value(history)?;
    let mut worst = f64::NEG_INFINITY;
    for (_, e) in oracle.entries() {
        worst = worst.max(e.value - alt(e.step, e.state));
    }
    Ok(worst)
}

/// Sample check that dM = dX - mu dt behaves like a martingale increment
/// with the right quadratic variation: per step, |sample mean| and
/// |sample second moment - mean of sigma^2 dt| in standard-error units.
#[derive(Debug, Clone)]
pub struct DriftIdentificationReport {
    /// Worst per-step |mean dM| / SE.
    pub worst_mean_stat: f64,
    /// Worst per-step |second moment - sigma^2 dt| / SE.
    pub worst_qv_stat: f64,
    pub steps: usize,
    pub samples: usize,
}

pub fn drift_identification_check(
    coeff: &CoefficientSpec,
    control: &ControlProcess,
    history: &PathPrefix,
    samples: usize,
    seed: u64,
    model: NoiseModel,
) -> Result<DriftIdentificationReport> {
    let k0 = history.cut();
    let grid = history.grid().clone();
    let n = grid.steps();
    let span = n - k0;
    // per step: realized dM and sigma^2 dt along each member
    let mut dms: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); span];
    let mut qvs: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); span];
    for m in 0..samples {
        let noise = member_noise(&grid, coeff.dim, k0, seed, m as u64, model);
        let seg = euler_solve(coeff, control, k0, history, &noise)?;
        let mut prefix = history.clone();
        for k in k0..n {
            let u = control.value(k, &prefix);
            let mu = (coeff.drift)(k, &prefix, &u)[0];
            let sigma = (coeff.diffusion)(k, &prefix, &u)[0];
            let dt = grid.dt(k);
            let dx = seg.point(k + 1)[0] - seg.point(k)[0];
            dms[k - k0].push(dx - mu * dt);
            qvs[k - k0].push(sigma * sigma * dt);
            prefix.push(seg.point(k + 1));
        }
    }
    let mut worst_mean = 0.0f64;
    let mut worst_qv = 0.0f64;
    for j in 0..span {
        let m = samples as f64;
        let mean = dms[j].iter().sum::<f64>() / m;
        let var = dms[j].iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
        let se = (var / m).sqrt();
        if se > 0.0 {
            worst_mean = worst_mean.max(mean.abs() / se);
        }
        let m2: Vec<f64> = dms[j].iter().zip(&qvs[j]).map(|(d, q)| d * d - q).collect();
        let m2_mean = m2.iter().sum::<f64>() / m;
        let m2_var = m2.iter().map(|x| (x - m2_mean) * (x - m2_mean)).sum::<f64>() / (m - 1.0);
        let m2_se = (m2_var / m).sqrt();
        if m2_se > 0.0 {
            worst_qv = worst_qv.max(m2_mean.abs() / m2_se);
        }
    }
    Ok(DriftIdentificationReport {
        worst_mean_stat: worst_mean,
        worst_qv_stat: worst_qv,
        steps: span,
        samples,
    })
}

/// Aggregate dK per step over the enumerated paths (equal weights), used
/// by the CSV report.
pub fn mean_dk_per_step(dec: &BsdeDecomposition) -> HashMap<usize, f64> {
    let mut sums: HashMap<usize, (f64, usize)> = HashMap::new();
    for row in &dec.steps {
        for e in row {
            let s = sums.entry(e.step).or_insert((0.0, 0));
            s.0 += e.dk;
            s.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect()
}
