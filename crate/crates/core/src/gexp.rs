//! G-expectations: the special case where the drift vanishes (or ranges in
//! a small interval) and the volatility is the control, ranging in a band.
//! Upper values delegate to the tree/MC machinery of the value module; the
//! band is gridded and the grid refined by doubling until the tree value
//! stabilizes.

use std::sync::Arc;

use crate::control::{ControlFamily, ControlProcess};
use crate::error::{Error, Result};
use crate::pathspace::{PathPrefix, TimeGrid};
use crate::rng::NoiseModel;
use crate::sde::{CoefficientSpec, ControlSetDescriptor};
use crate::value::{value_mc, value_tree, Payoff, TreeModel, ValueEstimate};

/// Volatility band (and optional drift interval) driving a G-expectation.
#[derive(Clone)]
pub struct GSpec {
    pub sigma_low: f64,
    pub sigma_high: f64,
    /// Drift interval; the G-expectation proper has `[0, 0]`.
    pub mu_low: f64,
    pub mu_high: f64,
    pub grid: Arc<TimeGrid>,
    pub payoff: Payoff,
    pub node_cap: usize,
}

impl GSpec {
    pub fn new(
        sigma_low: f64,
        sigma_high: f64,
        grid: Arc<TimeGrid>,
        payoff: Payoff,
    ) -> Result<Self> {
        if !(sigma_low > 0.0 && sigma_low <= sigma_high) {
            return Err(Error::Config(format!(
                "volatility band requires 0 < low <= high, got [{sigma_low}, {sigma_high}]"
            )));
        }
        Ok(GSpec {
            sigma_low,
            sigma_high,
            mu_low: 0.0,
            mu_high: 0.0,
            grid,
            payoff,
            node_cap: 1 << 22,
        })
    }

    pub fn with_drift_interval(mut self, low: f64, high: f64) -> Result<Self> {
        if low > high {
            return Err(Error::Config(format!("drift interval [{low}, {high}] is inverted")));
        }
        self.mu_low = low;
        self.mu_high = high;
        Ok(self)
    }

    /// Coefficients with control u = (mu, sigma) over the gridded bands:
    /// `points` values per non-degenerate band (endpoints always included).
    pub fn coefficients(&self, points: usize) -> CoefficientSpec {
        let mus = band_grid(self.mu_low, self.mu_high, points);
        let sigmas = band_grid(self.sigma_low, self.sigma_high, points);
        let mut u_points = Vec::with_capacity(mus.len() * sigmas.len());
        for m in &mus {
            for s in &sigmas {
                u_points.push(vec![*m, *s]);
            }
        }
        let drift_uncontrolled = self.mu_low == self.mu_high;
        CoefficientSpec {
            dim: 1,
            drift: Arc::new(|_, _, u: &[f64]| vec![u[0]]),
            diffusion: Arc::new(|_, _, u: &[f64]| vec![u[1]]),
            lipschitz: 0.0,
            control_set: ControlSetDescriptor::points(u_points),
            diffusion_invertible: self.sigma_low > 0.0,
            drift_uncontrolled,
        }
    }

    fn tree_model(&self, points: usize) -> TreeModel {
        TreeModel::new(self.coefficients(points), self.payoff.clone(), self.grid.clone())
            .with_node_cap(self.node_cap)
    }
}

/// Equispaced grid over a band; a degenerate band yields one point.
pub fn band_grid(low: f64, high: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 || low == high);
    if low == high {
        return vec![low];
    }
    (0..points).map(|i| low + (high - low) * i as f64 / (points - 1) as f64).collect()
}

/// Upper G-expectation on the tree: band gridded with `points` values,
/// doubled until the value moves by less than `tol` (or the cap is hit; the
/// last estimate is returned either way).
pub fn g_value(spec: &GSpec, history: &PathPrefix) -> Result<ValueEstimate> {
    const TOL: f64 = 1e-9;
    const MAX_DOUBLINGS: usize = 6;
    let mut points = 2;
    let (mut est, _) = value_tree(&spec.tree_model(points), history)?;
    for _ in 0..MAX_DOUBLINGS {
        points *= 2;
        let (next, _) = value_tree(&spec.tree_model(points), history)?;
        let change = (next.value - est.value).abs();
        est = next;
        if change < TOL {
            break;
        }
    }
    Ok(est)
}

/// MC counterpart: family of constant controls over the gridded bands.
pub fn g_value_mc(
    spec: &GSpec,
    history: &PathPrefix,
    points: usize,
    samples: usize,
    seed: u64,
) -> Result<ValueEstimate> {
    let coeff = spec.coefficients(points);
    let controls: Vec<ControlProcess> = coeff
        .control_set
        .enumerate()
        .into_iter()
        .enumerate()
        .map(|(i, u)| ControlProcess::constant(format!("band_{i:03}"), u))
        .collect();
    let family = ControlFamily::new(controls)?;
    value_mc(&coeff, &spec.payoff, &family, history, samples, seed, NoiseModel::Gaussian)
}

/// Upper and lower G-expectations of the spec's payoff; the lower value is
/// the negative upper value of the negated payoff.
pub fn g_pair(spec: &GSpec, history: &PathPrefix) -> Result<(f64, f64)> {
    let upper = g_value(spec, history)?.value;
    let negated = GSpec { payoff: spec.payoff.scale(-1.0), ..spec.clone() };
    let lower = -g_value(&negated, history)?.value;
    Ok((upper, lower))
}

/// Image of the control set through the coefficients at one prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyImage {
    pub step: usize,
    /// (drift, diffusion-matrix) pairs, one per control point, in control
    /// enumeration order.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Set-valued view of the coefficients: D_k(prefix) = {(mu, sigma)(k, prefix, u)}.
pub struct UncertaintySet {
    coeff: CoefficientSpec,
}

impl UncertaintySet {
    pub fn new(coeff: CoefficientSpec) -> Self {
        UncertaintySet { coeff }
    }

    pub fn image(&self, k: usize, prefix: &PathPrefix) -> UncertaintyImage {
        let pairs = self
            .coeff
            .control_set
            .enumerate()
            .iter()
            .map(|u| ((self.coeff.drift)(k, prefix, u), (self.coeff.diffusion)(k, prefix, u)))
            .collect();
        UncertaintyImage { step: k, pairs }
    }
}

/// Uncertainty-set table across sample prefixes, with a path-dependence
/// diagnosis (whether any two prefixes see different images).
#[derive(Debug, Clone)]
pub struct UncertaintyReport {
    pub images: Vec<UncertaintyImage>,
    pub drift_path_dependent: bool,
    pub diffusion_path_dependent: bool,
}

pub fn uncertainty_report(coeff: &CoefficientSpec, prefixes: &[PathPrefix]) -> UncertaintyReport {
    let set = UncertaintySet::new(coeff.clone());
    let images: Vec<UncertaintyImage> =
        prefixes.iter().map(|p| set.image(p.cut(), p)).collect();
    let drift_dep = images.windows(2).any(|w| {
        w[0].pairs.iter().zip(&w[1].pairs).any(|(a, b)| a.0 != b.0)
    });
    let diff_dep = images.windows(2).any(|w| {
        w[0].pairs.iter().zip(&w[1].pairs).any(|(a, b)| a.1 != b.1)
    });
    UncertaintyReport {
        images,
        drift_path_dependent: drift_dep,
        diffusion_path_dependent: diff_dep,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::constant_coefficients;
    use crate::value::TreeOracle;

    fn spec(payoff: Payoff) -> GSpec {
        GSpec::new(0.5, 1.0, TimeGrid::uniform(1.0, 4), payoff).unwrap()
    }

    fn origin(s: &GSpec) -> PathPrefix {
        PathPrefix::origin(s.grid.clone(), &[0.0])
    }

    fn square() -> Payoff {
        Payoff::new("square", |p| {
            let x = p.terminal()[0];
            x * x
        })
    }

    #[test]
    fn rejects_bad_band() {
        assert!(GSpec::new(0.0, 1.0, TimeGrid::uniform(1.0, 2), square()).is_err());
        assert!(GSpec::new(1.0, 0.5, TimeGrid::uniform(1.0, 2), square()).is_err());
    }

    #[test]
    fn martingale_payoff_is_zero() {
        let s = spec(Payoff::new("terminal", |p| p.terminal()[0]));
        let est = g_value(&s, &origin(&s)).unwrap();
        assert!(est.value.abs() <= 1e-12);
    }

    #[test]
    fn closed_band_values() {
        let s = spec(square());
        let h = origin(&s);
        assert!((g_value(&s, &h).unwrap().value - 1.0).abs() <= 1e-12);
        let neg = spec(Payoff::new("neg_square", |p| -p.terminal()[0] * p.terminal()[0]));
        assert!((g_value(&neg, &h).unwrap().value + 0.25).abs() <= 1e-12);
    }

    #[test]
    fn pair_square() {
        let s = spec(square());
        let (upper, lower) = g_pair(&s, &origin(&s)).unwrap();
        assert!((upper - 1.0).abs() <= 1e-12);
        assert!((lower - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn pair_linear_collapses() {
        let s = spec(Payoff::new("affine", |p| 3.0 * p.terminal()[0] + 2.0));
        let h = PathPrefix::origin(s.grid.clone(), &[0.4]);
        let (upper, lower) = g_pair(&s, &h).unwrap();
        let expected = 3.0 * 0.4 + 2.0;
        assert!((upper - expected).abs() <= 1e-12);
        assert!((upper - lower).abs() <= 1e-12);
    }

    #[test]
    fn sublinear_homogeneous_monotone() {
        let f = square();
        let g = Payoff::new("abs", |p| p.terminal()[0].abs());
        let h = origin(&spec(f.clone()));
        let v = |p: Payoff| g_value(&spec(p), &h).unwrap().value;
        let v_sum = v(Payoff::map2("f+g", &f, &g, |a, b| a + b));
        assert!(v_sum <= v(f.clone()) + v(g.clone()) + 1e-12);
        assert!((v(f.scale(2.5)) - 2.5 * v(f.clone())).abs() <= 1e-12);
        // f <= f + 0.1 pointwise
        assert!(v(f.clone()) <= v(f.offset(0.1)) + 1e-12);
        assert!((v(f.offset(0.1)) - v(f.clone()) - 0.1).abs() <= 1e-12);
    }

    #[test]
    fn band_monotonicity() {
        let h = origin(&spec(square()));
        let narrow =
            GSpec::new(0.6, 0.9, TimeGrid::uniform(1.0, 4), square()).unwrap();
        let wide = spec(square());
        let vn = g_value(&narrow, &h).unwrap().value;
        let vw = g_value(&wide, &h).unwrap().value;
        assert!(vw >= vn - 1e-12, "wide {vw} vs narrow {vn}");
    }

    #[test]
    fn degenerate_band_is_plain_expectation() {
        // sigma fixed at 0.7: G-value equals the fixed-control binomial mean
        let s = GSpec::new(0.7, 0.7, TimeGrid::uniform(1.0, 4), square()).unwrap();
        let h = origin(&s);
        let est = g_value(&s, &h).unwrap();
        let model = TreeModel::new(s.coefficients(2), square(), s.grid.clone());
        let fixed = ControlProcess::constant("fixed", vec![0.0, 0.7]);
        let mut oracle = TreeOracle::fixed_control(&model, &fixed).unwrap();
        let plain = oracle.value(&h).unwrap();
        assert_eq!(est.value.to_bits(), plain.to_bits());
    }

    #[test]
    fn mc_band_value_within_se() {
        let s = spec(square());
        let h = origin(&s);
        let est = g_value_mc(&s, &h, 3, 4000, 17).unwrap();
        assert!((est.value - 1.0).abs() <= 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn drift_interval_enters_control_set() {
        let s = spec(square()).with_drift_interval(-0.5, 0.5).unwrap();
        let coeff = s.coefficients(2);
        let points = coeff.control_set.enumerate();
        assert_eq!(points.len(), 4);
        assert!(!coeff.drift_uncontrolled);
        // positive drift available: value exceeds the pure-volatility one
        let h = origin(&s);
        let v_drift = g_value(&s, &h).unwrap().value;
        assert!(v_drift > 1.0);
    }

    #[test]
    fn uncertainty_constant_and_direct_image() {
        let grid = TimeGrid::uniform(1.0, 4);
        let cc = constant_coefficients(
            1,
            vec![0.1],
            vec![0.3],
            ControlSetDescriptor::points(vec![vec![0.0], vec![1.0]]),
        );
        let prefixes = vec![
            PathPrefix::origin(grid.clone(), &[0.0]),
            PathPrefix::new(grid.clone(), 1, vec![0.0, 0.5, -0.2]).unwrap(),
        ];
        let rep = uncertainty_report(&cc, &prefixes);
        assert!(!rep.drift_path_dependent);
        assert!(!rep.diffusion_path_dependent);

        let s = spec(square());
        let rep2 = uncertainty_report(&s.coefficients(2), &prefixes);
        for img in &rep2.images {
            for (mu, sg) in &img.pairs {
                assert_eq!(mu, &vec![0.0]);
                assert!(*sg == vec![0.5] || *sg == vec![1.0]);
            }
        }
    }

    #[test]
    fn uncertainty_lagged_vol_differs_in_sigma_only() {
        // diffusion reads the state one step back
        let grid = TimeGrid::uniform(1.0, 4);
        let coeff = CoefficientSpec {
            dim: 1,
            drift: Arc::new(|_, _, _| vec![0.05]),
            diffusion: Arc::new(|k: usize, p: &PathPrefix, u: &[f64]| {
                let lag = p.point(k.saturating_sub(1))[0];
                vec![u[0] * (1.0 + lag * lag)]
            }),
            lipschitz: 2.0,
            control_set: ControlSetDescriptor::points(vec![vec![0.5], vec![1.0]]),
            diffusion_invertible: true,
            drift_uncontrolled: true,
        };
        let a = PathPrefix::new(grid.clone(), 1, vec![0.0, 0.8, 0.1]).unwrap();
        let b = PathPrefix::new(grid.clone(), 1, vec![0.0, -0.3, 0.1]).unwrap();
        let rep = uncertainty_report(&coeff, &[a, b]);
        assert!(!rep.drift_path_dependent);
        assert!(rep.diffusion_path_dependent);
    }
}
