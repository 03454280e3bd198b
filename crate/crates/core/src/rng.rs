//! Counter-based random streams for reproducible parallel Monte Carlo.
//!
//! Every draw is a pure function of `(seed, path id, step, axis)`, so
//! ensembles are bitwise identical regardless of thread count or
//! evaluation order.

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn counter_word(seed: u64, path_id: u64, step: u64, axis: u64) -> u64 {
    // Chain the coordinates through the finalizer so that nearby counters
    // decorrelate.
    mix64(mix64(mix64(mix64(seed) ^ path_id) ^ step) ^ axis)
}

/// Uniform in (0, 1), never exactly 0 or 1.
fn uniform01(word: u64) -> f64 {
    ((word >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Standard normal via Box-Muller from two substream words.
pub fn standard_normal(seed: u64, path_id: u64, step: u64, axis: u64) -> f64 {
    let u1 = uniform01(counter_word(seed, path_id, step, 2 * axis));
    let u2 = uniform01(counter_word(seed, path_id, step, 2 * axis + 1));
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Rademacher sign in {-1, +1}.
pub fn rademacher(seed: u64, path_id: u64, step: u64, axis: u64) -> f64 {
    if counter_word(seed, path_id, step, axis) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Derive an unrelated stream from a base seed (e.g. for out-of-sample
/// revaluation).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag))
}

/// Noise distribution for the Brownian increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Gaussian increments with variance dt per axis.
    Gaussian,
    /// +-sqrt(dt) per axis; exactly enumerable, used by the tree oracles.
    Rademacher,
}

impl NoiseModel {
    /// One increment coordinate `dW` for the given stream coordinates.
    pub fn increment(&self, seed: u64, path_id: u64, step: u64, axis: u64, dt: f64) -> f64 {
        let sqrt_dt = dt.sqrt();
        match self {
            NoiseModel::Gaussian => standard_normal(seed, path_id, step, axis) * sqrt_dt,
            NoiseModel::Rademacher => rademacher(seed, path_id, step, axis) * sqrt_dt,
        }
    }
}
