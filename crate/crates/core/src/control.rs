//! Feedback controls, finite control families and pasting constructions.
//!
//! A control is a feedback rule on the state path prefix. Pasting builds a
//! new admissible control that follows a base rule up to a cut (a fixed
//! index or the first hit of a stopping rule) and then delegates to a
//! cell-specific continuation, where the cell is decided by the prefix
//! frozen at the cut.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::pathspace::PathPrefix;
use crate::sde::ControlSetDescriptor;

type ControlRule = Arc<dyn Fn(usize, &PathPrefix) -> Vec<f64> + Send + Sync>;

/// Feedback control: `(step, state prefix up to step) -> u in U`.
#[derive(Clone)]
pub struct ControlProcess {
    id: String,
    rule: ControlRule,
}

impl std::fmt::Debug for ControlProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlProcess").field("id", &self.id).finish()
    }
}

impl ControlProcess {
    pub fn new(
        id: impl Into<String>,
        rule: impl Fn(usize, &PathPrefix) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        ControlProcess { id: id.into(), rule: Arc::new(rule) }
    }

    pub fn constant(id: impl Into<String>, u: Vec<f64>) -> Self {
        ControlProcess { id: id.into(), rule: Arc::new(move |_, _| u.clone()) }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn value(&self, step: usize, prefix: &PathPrefix) -> Vec<f64> {
        debug_assert!(
            step <= prefix.cut(),
            "control asked for step {step} with prefix cut {}",
            prefix.cut()
        );
        (self.rule)(step, prefix)
    }
}

/// Ordered, nonempty list of controls over which the value sup is taken.
#[derive(Clone, Debug)]
pub struct ControlFamily {
    controls: Vec<ControlProcess>,
}

impl ControlFamily {
    pub fn new(controls: Vec<ControlProcess>) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::Config("control family must be nonempty".into()));
        }
        let mut ids: Vec<&str> = controls.iter().map(|c| c.id()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != controls.len() {
            return Err(Error::Config("control family ids must be unique".into()));
        }
        Ok(ControlFamily { controls })
    }

    pub fn controls(&self) -> &[ControlProcess] {
        &self.controls
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, i: usize) -> &ControlProcess {
        &self.controls[i]
    }
}

/// Finite partition of the state space decided at a fixed cut index:
/// `(prefix restricted to the cut) -> cell index`.
#[derive(Clone)]
pub struct PartitionRule {
    cut: usize,
    cells: usize,
    rule: Arc<dyn Fn(&PathPrefix) -> usize + Send + Sync>,
}

impl PartitionRule {
    pub fn new(
        cut: usize,
        cells: usize,
        rule: impl Fn(&PathPrefix) -> usize + Send + Sync + 'static,
    ) -> Self {
        PartitionRule { cut, cells, rule: Arc::new(rule) }
    }

    /// Whole space as one cell.
    pub fn trivial(cut: usize) -> Self {
        PartitionRule::new(cut, 1, |_| 0)
    }

    /// Cell by sign of coordinate 0 at the cut: negative -> 0, else 1.
    pub fn by_sign(cut: usize) -> Self {
        PartitionRule::new(cut, 2, |p: &PathPrefix| if p.last()[0] < 0.0 { 0 } else { 1 })
    }

    pub fn cut(&self) -> usize {
        self.cut
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn cell(&self, prefix: &PathPrefix) -> Result<usize> {
        let frozen = prefix.restrict(self.cut.min(prefix.cut()))?;
        let c = (self.rule)(&frozen);
        if c >= self.cells {
            return Err(Error::CellOutOfRange { cell: c, cells: self.cells });
        }
        Ok(c)
    }
}

/// First-hit stopping rule with a cap index.
#[derive(Clone)]
pub struct StoppingRule {
    cap: usize,
    rule: Arc<dyn Fn(&PathPrefix) -> bool + Send + Sync>,
}

impl StoppingRule {
    pub fn new(cap: usize, rule: impl Fn(&PathPrefix) -> bool + Send + Sync + 'static) -> Self {
        StoppingRule { cap, rule: Arc::new(rule) }
    }

    /// Stop when |coordinate 0| reaches the barrier.
    pub fn barrier(cap: usize, level: f64) -> Self {
        StoppingRule::new(cap, move |p: &PathPrefix| p.last()[0].abs() >= level)
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Whether the rule fires on the prefix as-is (at its current cut).
    pub fn fires(&self, prefix: &PathPrefix) -> bool {
        (self.rule)(prefix)
    }

    /// First index `j <= min(prefix cut, cap)` at which the rule fires on
    /// the restricted prefix, or the cap if it never fires.
    pub fn first_hit(&self, prefix: &PathPrefix) -> usize {
        let upto = self.cap.min(prefix.cut());
        for j in 0..=upto {
            let restricted = prefix.restrict(j).expect("restrict within cut");
            if (self.rule)(&restricted) {
                return j;
            }
        }
        self.cap
    }
}

/// Kinds of deterministic control family enumerations.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// One constant control per point of U.
    Constants,
    /// One control per assignment of a U point to each time block.
    PiecewiseConstant { blocks: usize },
    /// `u = a if x_0 >= theta else b` over gridded (a, b, theta).
    ThresholdFeedback { thresholds: Vec<f64> },
}

/// Deterministic enumeration of a finite control family; ids are stable
/// across runs (lexicographic in the enumeration indices).
pub fn make_grid_family(
    controlset: &ControlSetDescriptor,
    kind: &FamilyKind,
    steps: usize,
    cap: usize,
) -> Result<ControlFamily> {
    let points = controlset.enumerate();
    let check = |requested: usize| -> Result<()> {
        if requested > cap {
            Err(Error::FamilyCapExceeded { cap, requested })
        } else {
            Ok(())
        }
    };
    let controls = match kind {
        FamilyKind::Constants => {
            check(points.len())?;
            points
                .iter()
                .enumerate()
                .map(|(i, u)| ControlProcess::constant(format!("const_{i:03}"), u.clone()))
                .collect()
        }
        FamilyKind::PiecewiseConstant { blocks } => {
            let blocks = (*blocks).max(1);
            let count = points.len().checked_pow(blocks as u32).unwrap_or(usize::MAX);
            check(count)?;
            let block_len = steps.div_ceil(blocks);
            let mut out = Vec::with_capacity(count);
            for code in 0..count {
                let mut digits = Vec::with_capacity(blocks);
                let mut c = code;
                for _ in 0..blocks {
                    digits.push(c % points.len());
                    c /= points.len();
                }
                digits.reverse();
                let id = format!(
                    "pc_{}",
                    digits.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("")
                );
                let pts = points.clone();
                out.push(ControlProcess::new(id, move |step, _: &PathPrefix| {
                    let b = (step / block_len).min(digits.len() - 1);
                    pts[digits[b]].clone()
                }));
            }
            out
        }
        FamilyKind::ThresholdFeedback { thresholds } => {
            let count = points.len() * points.len() * thresholds.len();
            check(count)?;
            let mut out = Vec::with_capacity(count);
            for (ia, a) in points.iter().enumerate() {
                for (ib, b) in points.iter().enumerate() {
                    for (it, theta) in thresholds.iter().enumerate() {
                        let (a, b, theta) = (a.clone(), b.clone(), *theta);
                        out.push(ControlProcess::new(
                            format!("thr_{ia:02}_{ib:02}_{it:02}"),
                            move |_, p: &PathPrefix| {
                                if p.last()[0] >= theta {
                                    a.clone()
                                } else {
                                    b.clone()
                                }
                            },
                        ));
                    }
                }
            }
            out
        }
    };
    ControlFamily::new(controls)
}

/// Paste continuations onto `base` at a fixed cut index. Before the cut the
/// base rule applies; from the cut on, the partition is evaluated on the
/// prefix frozen at the cut and the selected continuation takes over.
/// Cell i delegates to `continuations[i]`.
pub fn paste(
    base: &ControlProcess,
    cut: usize,
    partition: &PartitionRule,
    continuations: &[ControlProcess],
) -> Result<ControlProcess> {
    if continuations.len() != partition.cells() {
        return Err(Error::Config(format!(
            "partition has {} cells but {} continuations were given",
            partition.cells(),
            continuations.len()
        )));
    }
    let base = base.clone();
    let partition = partition.clone();
    let continuations = continuations.to_vec();
    let id = format!("paste_{}_at_{}", base.id(), cut);
    Ok(ControlProcess::new(id, move |step, prefix: &PathPrefix| {
        if step < cut {
            return base.value(step, prefix);
        }
        // Cell decided by the prefix frozen at the cut; never re-evaluated.
        let cell = partition.cell(prefix).expect("partition must be total");
        continuations[cell].value(step, prefix)
    }))
}

/// Paste at the first hit of a stopping rule. The cut is per path: before
/// the hit the base rule applies; from the hit on, the selector (evaluated
/// on the prefix frozen at the hit index) picks the continuation.
pub fn paste_at_stop(
    base: &ControlProcess,
    stop: &StoppingRule,
    selector: &PartitionRule,
    continuations: &[ControlProcess],
) -> Result<ControlProcess> {
    if continuations.len() != selector.cells() {
        return Err(Error::Config(format!(
            "selector has {} cells but {} continuations were given",
            selector.cells(),
            continuations.len()
        )));
    }
    let base = base.clone();
    let stop = stop.clone();
    let selector = selector.clone();
    let continuations = continuations.to_vec();
    let id = format!("paste_{}_at_stop", base.id());
    Ok(ControlProcess::new(id, move |step, prefix: &PathPrefix| {
        let hit = stop.first_hit(prefix);
        if step < hit {
            return base.value(step, prefix);
        }
        let frozen = prefix.restrict(hit).expect("hit within cut");
        let cell = (|p: &PathPrefix| selector.cell(p))(&frozen).expect("selector must be total");
        continuations[cell].value(step, prefix)
    }))
}
