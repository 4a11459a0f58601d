//! Position deviation between a paired attacked/nominal run.

use crate::error::SimError;
use crate::harness::RunRecord;

/// Per-step Euclidean deviation of the attacked position trajectory from
/// the nominal one, with first-crossing steps for requested levels.
#[derive(Debug, Clone)]
pub struct DeviationSeries {
    /// Step indices (includes warm-up steps, which are negative).
    pub k: Vec<i64>,
    pub t: Vec<f64>,
    pub deviation: Vec<f64>,
    /// For each requested level alpha: the first step k >= 0 whose
    /// deviation reaches it, if any.
    pub first_crossing: Vec<(f64, Option<i64>)>,
}

impl DeviationSeries {
    /// Deviation at the step closest to time `t` (s).
    pub fn at_time(&self, t: f64) -> Option<f64> {
        if self.t.is_empty() {
            return None;
        }
        let mut best = 0usize;
        let mut best_gap = f64::INFINITY;
        for (i, ti) in self.t.iter().enumerate() {
            let gap = (ti - t).abs();
            if gap < best_gap {
                best_gap = gap;
                best = i;
            }
        }
        Some(self.deviation[best])
    }
}

/// Compute the deviation series for a common-random-numbers pair.
///
/// The runs must come from the same config and seed, with the attack
/// enabled on exactly one side; anything else is a pairing error.
pub fn deviation_series(
    attacked: &RunRecord,
    nominal: &RunRecord,
    alphas: &[f64],
) -> Result<DeviationSeries, SimError> {
    if attacked.meta.seed != nominal.meta.seed {
        return Err(SimError::MismatchedRuns(format!(
            "seeds differ: {} vs {}",
            attacked.meta.seed, nominal.meta.seed
        )));
    }
    if attacked.meta.config_digest != nominal.meta.config_digest {
        return Err(SimError::MismatchedRuns("config digests differ".to_string()));
    }
    if !attacked.meta.attack_enabled || nominal.meta.attack_enabled {
        return Err(SimError::MismatchedRuns(
            "expected one attacked and one nominal record".to_string(),
        ));
    }
    if attacked.steps.len() != nominal.steps.len() {
        return Err(SimError::MismatchedRuns(format!(
            "step counts differ: {} vs {}",
            attacked.steps.len(),
            nominal.steps.len()
        )));
    }

    let n = attacked.steps.len();
    let mut k = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut deviation = Vec::with_capacity(n);
    for (a, b) in attacked.steps.iter().zip(&nominal.steps) {
        debug_assert_eq!(a.k, b.k);
        k.push(a.k);
        t.push(a.t);
        deviation.push((a.truth.position() - b.truth.position()).norm());
    }

    let first_crossing = alphas
        .iter()
        .map(|&alpha| {
            let hit = k
                .iter()
                .zip(&deviation)
                .find(|(kk, d)| **kk >= 0 && **d >= alpha)
                .map(|(kk, _)| *kk);
            (alpha, hit)
        })
        .collect();

    Ok(DeviationSeries { k, t, deviation, first_crossing })
}
