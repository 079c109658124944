//! Flow-matching samplers with auditable noise coefficients, plus a small
//! GRPO fine-tuning loop for 2D toy models.
//!
//! Every step rule in [`samplers`] mixes the predicted clean sample and the
//! predicted noise with a fresh Gaussian draw. [`analysis`] audits those
//! coefficients against the scheduler's noise level and [`grpo`] fine-tunes
//! a velocity network with group-relative advantages.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod grpo;
pub mod point;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod spec;
pub mod velocity;

pub use error::{Error, Result};
pub use point::Point;
pub use samplers::{SamplerKind, StepCoeffs, StepReport, Trajectory};
pub use schedule::{uniform_grid, SigmaKind, SigmaRule, TimeGrid};
pub use velocity::{Mlp, MlpArchitecture, VelocityField};

/// Formats a float with 17 significant digits, enough to round-trip `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Worker count from `FLOWCPS_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("FLOWCPS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Maps `f` over `0..n` in parallel when the `parallel` feature is on,
/// always returning results in index order.
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match thread_cap() {
            Some(cap) => match rayon::ThreadPoolBuilder::new().num_threads(cap).build() {
                Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
                Err(_) => (0..n).map(f).collect(),
            },
            None => (0..n).into_par_iter().map(f).collect(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
