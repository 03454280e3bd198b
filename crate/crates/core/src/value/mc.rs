//! Monte Carlo value estimation over finite control families.
//!
//! Common random numbers across the family: every control sees the same
//! counter-based increments per member, so the family max is a max of
//! positively coupled means and the comparison is bitwise reproducible
//! regardless of thread count (members are summed in index order).

use rayon::prelude::*;

use crate::control::{ControlFamily, ControlProcess};
use crate::error::Result;
use crate::pathspace::{concat, PathPrefix};
use crate::rng::{derive_seed, NoiseModel};
use crate::sde::{euler_solve, member_noise, CoefficientSpec};

use super::{DppReport, Method, Payoff, ValueEstimate, ValuePath};

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Sup over the family estimated by the max of sample means under common
/// random numbers. `revalue` re-estimates the winning control on a derived
/// seed as a selection-bias check.
pub fn value_mc(
    coeff: &CoefficientSpec,
    payoff: &Payoff,
    family: &ControlFamily,
    history: &PathPrefix,
    samples: usize,
    seed: u64,
    model: NoiseModel,
) -> Result<ValueEstimate> {
    let k0 = history.cut();
    let grid = history.grid().clone();
    // per member: payoff under every control, same increments
    let rows: Vec<Result<Vec<f64>>> = (0..samples)
        .into_par_iter()
        .map(|m| {
            let noise = member_noise(&grid, coeff.dim, k0, seed, m as u64, model);
            family
                .controls()
                .iter()
                .map(|c| {
                    let seg = euler_solve(coeff, c, k0, history, &noise)?;
                    payoff.eval(&concat(history, &seg)?)
                })
                .collect()
        })
        .collect();
    let mut per_control = vec![Vec::with_capacity(samples); family.len()];
    for row in rows {
        for (c, v) in row?.into_iter().enumerate() {
            per_control[c].push(v);
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0;
    for (c, vals) in per_control.iter().enumerate() {
        let (mean, _) = mean_and_se(vals);
        // strict > keeps the lowest family index on ties
        if mean > best {
            best = mean;
            best_idx = c;
        }
    }
    let (_, std_error) = mean_and_se(&per_control[best_idx]);
    let winner = family.get(best_idx);
    let fresh = derive_seed(seed, 0x7265_7661_6c75_65); // "revalue"
    let revalue = fixed_control_mean(coeff, payoff, winner, history, samples, fresh, model)?.0;
    Ok(ValueEstimate {
        value: best,
        std_error,
        samples,
        argmax_id: winner.id().to_string(),
        method: Method::Mc,
        revalue: Some(revalue),
    })
}

/// Plain MC mean of the payoff under one fixed control.
pub(crate) fn fixed_control_mean(
    coeff: &CoefficientSpec,
    payoff: &Payoff,
    control: &ControlProcess,
    history: &PathPrefix,
    samples: usize,
    seed: u64,
    model: NoiseModel,
) -> Result<(f64, f64)> {
    let k0 = history.cut();
    let grid = history.grid().clone();
    let vals: Vec<Result<f64>> = (0..samples)
        .into_par_iter()
        .map(|m| {
            let noise = member_noise(&grid, coeff.dim, k0, seed, m as u64, model);
            let seg = euler_solve(coeff, control, k0, history, &noise)?;
            payoff.eval(&concat(history, &seg)?)
        })
        .collect();
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    Ok(mean_and_se(&vals))
}

/// Nested-MC dynamic programming residual at a fixed split index:
/// direct estimate versus sup over outer controls of the sample mean of
/// the inner value estimated from the realized prefix at the split.
#[allow(clippy::too_many_arguments)]
pub fn dpp_residual_mc(
    coeff: &CoefficientSpec,
    payoff: &Payoff,
    family: &ControlFamily,
    history: &PathPrefix,
    split: usize,
    outer_samples: usize,
    inner_samples: usize,
    seed: u64,
    model: NoiseModel,
) -> Result<DppReport> {
    let k0 = history.cut();
    let grid = history.grid().clone();
    let direct = value_mc(coeff, payoff, family, history, outer_samples, seed, model)?;

    let mut best = f64::NEG_INFINITY;
    let mut best_se = 0.0;
    for (ci, control) in family.controls().iter().enumerate() {
        let outer_seed = derive_seed(seed, 0xd00 + ci as u64);
        let vals: Vec<Result<f64>> = (0..outer_samples)
            .into_par_iter()
            .map(|m| {
                // outer leg reuses the direct-run increments (common random
                // numbers); the inner estimate draws a fresh substream
                let noise = member_noise(&grid, coeff.dim, k0, seed, m as u64, model);
                let seg = euler_solve(coeff, control, k0, history, &noise)?;
                let at_split = concat(history, &seg)?.restrict(split)?;
                let inner_seed = derive_seed(outer_seed, m as u64 + 1);
                let inner =
                    value_mc(coeff, payoff, family, &at_split, inner_samples, inner_seed, model)?;
                Ok(inner.value)
            })
            .collect();
        let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
        let (mean, se) = mean_and_se(&vals);
        if mean > best {
            best = mean;
            best_se = se;
        }
    }
    let combined = (direct.std_error.powi(2) + best_se.powi(2)).sqrt();
    Ok(DppReport {
        residual: (direct.value - best).abs(),
        worst_node: (direct.value - best).abs(),
        nodes_checked: outer_samples,
        combined_std_error: combined,
    })
}

/// Value process along simulated paths under one fixed control, each step
/// revalued by a nested family estimate; the terminal entry is the exact
/// payoff on the realized path.
#[allow(clippy::too_many_arguments)]
pub fn value_process_mc(
    coeff: &CoefficientSpec,
    payoff: &Payoff,
    family: &ControlFamily,
    control: &ControlProcess,
    history: &PathPrefix,
    members: usize,
    inner_samples: usize,
    seed: u64,
    model: NoiseModel,
) -> Result<ValuePath> {
    let k0 = history.cut();
    let n = history.grid().steps();
    let grid = history.grid().clone();
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..members)
        .into_par_iter()
        .map(|m| {
            let noise = member_noise(&grid, coeff.dim, k0, seed, m as u64, model);
            let seg = euler_solve(coeff, control, k0, history, &noise)?;
            let path = concat(history, &seg)?;
            let mut xrow = Vec::with_capacity(n - k0 + 1);
            let mut yrow = Vec::with_capacity(n - k0 + 1);
            for k in k0..=n {
                xrow.push(path.point(k)[0]);
                if k == n {
                    yrow.push(payoff.eval(&path)?);
                } else {
                    let prefix = path.restrict(k)?;
                    let inner_seed = derive_seed(derive_seed(seed, 0xf0 + k as u64), m as u64 + 1);
                    let est =
                        value_mc(coeff, payoff, family, &prefix, inner_samples, inner_seed, model)?;
                    yrow.push(est.value);
                }
            }
            Ok((xrow, yrow))
        })
        .collect();
    let mut states = Vec::with_capacity(members);
    let mut ys = Vec::with_capacity(members);
    for row in rows {
        let (x, y) = row?;
        states.push(x);
        ys.push(y);
    }
    Ok(ValuePath {
        k0,
        states,
        y: ys,
        weight: 1.0 / members as f64,
        method: "mc_nested".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathspace::TimeGrid;
    use crate::sde::ControlSetDescriptor;
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

    fn const_family() -> ControlFamily {
        ControlFamily::new(vec![
            ControlProcess::constant("lo", vec![0.5]),
            ControlProcess::constant("hi", vec![1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn matches_family_optimum_within_se() {
        // sup over constants of E[(u W_T)^2] = 1; MC must land within 3 SE
        let coeff = controlled_vol(vec![0.5, 1.0]);
        let grid = TimeGrid::uniform(1.0, 8);
        let h = PathPrefix::origin(grid, &[0.0]);
        let est =
            value_mc(&coeff, &square(), &const_family(), &h, 4000, 11, NoiseModel::Gaussian)
                .unwrap();
        assert!(est.std_error > 0.0);
        assert!((est.value - 1.0).abs() <= 3.0 * est.std_error, "{est:?}");
        assert_eq!(est.argmax_id, "hi");
        let re = est.revalue.unwrap();
        assert!((re - 1.0).abs() <= 4.0 * est.std_error, "revalue {re}");
    }

    #[test]
    fn repeat_call_is_bitwise_identical() {
        let coeff = controlled_vol(vec![0.5, 1.0]);
        let grid = TimeGrid::uniform(1.0, 6);
        let h = PathPrefix::origin(grid, &[0.2]);
        let a = value_mc(&coeff, &square(), &const_family(), &h, 500, 7, NoiseModel::Gaussian)
            .unwrap();
        let b = value_mc(&coeff, &square(), &const_family(), &h, 500, 7, NoiseModel::Gaussian)
            .unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.revalue.unwrap().to_bits(), b.revalue.unwrap().to_bits());
    }

    #[test]
    fn ties_pick_lowest_index() {
        // two ids, same rule: common random numbers make the means equal
        let coeff = controlled_vol(vec![1.0]);
        let family = ControlFamily::new(vec![
            ControlProcess::constant("first", vec![1.0]),
            ControlProcess::constant("second", vec![1.0]),
        ])
        .unwrap();
        let grid = TimeGrid::uniform(1.0, 4);
        let h = PathPrefix::origin(grid, &[0.0]);
        let est =
            value_mc(&coeff, &square(), &family, &h, 200, 3, NoiseModel::Gaussian).unwrap();
        assert_eq!(est.argmax_id, "first");
    }

    #[test]
    fn dpp_residual_within_tolerance() {
        let coeff = controlled_vol(vec![0.5, 1.0]);
        let grid = TimeGrid::uniform(1.0, 4);
        let h = PathPrefix::origin(grid, &[0.0]);
        let rep = dpp_residual_mc(
            &coeff,
            &square(),
            &const_family(),
            &h,
            2,
            200,
            200,
            19,
            NoiseModel::Gaussian,
        )
        .unwrap();
        assert!(rep.combined_std_error > 0.0);
        assert!(rep.residual <= 3.0 * rep.combined_std_error, "{rep:?}");
    }

    #[test]
    fn value_process_terminal_is_payoff() {
        let coeff = controlled_vol(vec![0.5, 1.0]);
        let grid = TimeGrid::uniform(1.0, 4);
        let h = PathPrefix::origin(grid, &[0.0]);
        let control = ControlProcess::constant("hi", vec![1.0]);
        let vp = value_process_mc(
            &coeff,
            &square(),
            &const_family(),
            &control,
            &h,
            8,
            100,
            23,
            NoiseModel::Gaussian,
        )
        .unwrap();
        assert_eq!(vp.states.len(), 8);
        for (xrow, yrow) in vp.states.iter().zip(&vp.y) {
            assert_eq!(xrow.len(), 5);
            let xt = *xrow.last().unwrap();
            assert_eq!(*yrow.last().unwrap(), xt * xt);
        }
    }
}
