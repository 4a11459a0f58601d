//! Residual-based anomaly detectors.
//!
//! Both detectors consume only the fusion innovations, never ground truth.
//! The chi-square detector scores the covariance-normalized innovation
//! quadratic form per step; the CUSUM detector accumulates that score
//! against a drift and resets on alarm so the per-step alarm rate stays
//! interpretable.

use nalgebra::{DMatrix, DVector};

use crate::error::SimError;

/// Drift subtracted by the CUSUM recursion each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftSpec {
    /// Use the innovation dimension of the step (the attack-free mean of a
    /// chi-square score).
    Dof,
    Fixed(f64),
}

impl DriftSpec {
    pub fn value(&self, dof: usize) -> f64 {
        match self {
            DriftSpec::Dof => dof as f64,
            DriftSpec::Fixed(v) => *v,
        }
    }
}

/// Detector thresholds and the CUSUM policy for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub chi2_threshold: f64,
    pub cusum_threshold: f64,
    pub drift: DriftSpec,
    pub reset_on_alarm: bool,
}

/// Per-run mutable detector state (the CUSUM accumulator).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectorState {
    pub cusum: f64,
}

/// Per-step detector outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub k: i64,
    pub chi2_stat: f64,
    pub chi2_alarm: bool,
    pub cusum_stat: f64,
    pub cusum_alarm: bool,
}

/// Chi-square score `g = v^T S^-1 v` and its threshold test. Under no
/// attack and correct models the score is approximately chi-square with
/// dof equal to the innovation length.
pub fn chi2_step(
    innovation: &DVector<f64>,
    s_cov: &DMatrix<f64>,
    threshold: f64,
) -> Result<(f64, bool), SimError> {
    let chol = s_cov
        .clone()
        .cholesky()
        .ok_or(SimError::SingularInnovation { cond: f64::INFINITY })?;
    let solved = chol.solve(innovation);
    let stat = innovation.dot(&solved);
    Ok((stat, stat > threshold))
}

/// CUSUM recursion `S' = max(0, S + score - drift)`; alarm when `S'`
/// exceeds the threshold, after which the accumulator resets (policy flag).
pub fn cusum_step(
    state: &mut DetectorState,
    score: f64,
    drift: f64,
    threshold: f64,
    reset_on_alarm: bool,
) -> (f64, bool) {
    let next = (state.cusum + score - drift).max(0.0);
    let alarm = next > threshold;
    state.cusum = if alarm && reset_on_alarm { 0.0 } else { next };
    (next, alarm)
}

/// Detector selector for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Chi2,
    Cusum,
}

/// Attack-free per-step scores grouped by run, with each step's drift
/// value alongside; the raw material for threshold calibration.
pub struct CalibrationSamples {
    /// Per run: (chi-square score, drift) per step.
    pub runs: Vec<Vec<(f64, f64)>>,
}

impl CalibrationSamples {
    pub fn total_samples(&self) -> usize {
        self.runs.iter().map(|r| r.len()).sum()
    }
}

/// Calibration output: the threshold plus the alarm rate it achieves on
/// the calibration corpus with a 95% binomial band across runs.
#[derive(Debug, Clone, Copy)]
pub struct CalibratedThreshold {
    pub threshold: f64,
    pub achieved_rate: f64,
    /// Half-width of the 95% interval on the achieved rate, computed across
    /// runs (runs are independent; steps within a run are not).
    pub rate_ci_half_width: f64,
    pub samples: usize,
}

/// Calibrate a detector threshold to a target per-step false-alarm rate
/// over attack-free runs.
///
/// Chi-square thresholds come straight from the empirical `1 - p` quantile
/// of the pooled per-step scores. The CUSUM statistic feeds back on itself
/// through the reset policy, so its threshold is found by bisection on a
/// replay of the recursion until the achieved per-step rate matches the
/// target.
pub fn calibrate_threshold(
    kind: DetectorKind,
    target_pfa: f64,
    samples: &CalibrationSamples,
    reset_on_alarm: bool,
) -> Result<CalibratedThreshold, SimError> {
    if !(target_pfa > 0.0 && target_pfa < 1.0) {
        return Err(SimError::Validation(format!(
            "target_pfa must lie in (0, 1), got {target_pfa}"
        )));
    }
    let total = samples.total_samples();
    let need = (50.0 / target_pfa).ceil() as usize;
    if total < need {
        return Err(SimError::InsufficientSamples { have: total, need });
    }

    let threshold = match kind {
        DetectorKind::Chi2 => {
            let mut scores: Vec<f64> =
                samples.runs.iter().flatten().map(|(s, _)| *s).collect();
            empirical_quantile(&mut scores, 1.0 - target_pfa)
        }
        DetectorKind::Cusum => {
            // Monotone: higher threshold, lower alarm rate. Bisection on the
            // replayed recursion.
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            while cusum_replay_rate(samples, hi, reset_on_alarm) > target_pfa {
                hi *= 2.0;
                if hi > 1e12 {
                    break;
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cusum_replay_rate(samples, mid, reset_on_alarm) > target_pfa {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        }
    };

    let per_run_rates: Vec<f64> = samples
        .runs
        .iter()
        .map(|run| detector_rate_on_run(kind, run, threshold, reset_on_alarm))
        .collect();
    let achieved = mean(&per_run_rates);
    let ci = rate_ci_across_runs(&per_run_rates);

    Ok(CalibratedThreshold {
        threshold,
        achieved_rate: achieved,
        rate_ci_half_width: ci,
        samples: total,
    })
}

/// Per-step alarm rate a detector achieves on sample runs at a given
/// threshold (used for held-out validation).
pub fn detector_rate_on_run(
    kind: DetectorKind,
    run: &[(f64, f64)],
    threshold: f64,
    reset_on_alarm: bool,
) -> f64 {
    if run.is_empty() {
        return 0.0;
    }
    let alarms = match kind {
        DetectorKind::Chi2 => run.iter().filter(|(s, _)| *s > threshold).count(),
        DetectorKind::Cusum => {
            let mut state = DetectorState::default();
            run.iter()
                .filter(|(score, drift)| {
                    cusum_step(&mut state, *score, *drift, threshold, reset_on_alarm).1
                })
                .count()
        }
    };
    alarms as f64 / run.len() as f64
}

fn cusum_replay_rate(samples: &CalibrationSamples, threshold: f64, reset: bool) -> f64 {
    let mut alarms = 0usize;
    let mut steps = 0usize;
    for run in &samples.runs {
        let mut state = DetectorState::default();
        for (score, drift) in run {
            if cusum_step(&mut state, *score, *drift, threshold, reset).1 {
                alarms += 1;
            }
            steps += 1;
        }
    }
    alarms as f64 / steps.max(1) as f64
}

/// Empirical `q`-quantile (linear interpolation between order statistics).
pub fn empirical_quantile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        values[lo]
    } else {
        let w = pos - lo as f64;
        values[lo] * (1.0 - w) + values[hi] * w
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn rate_ci_across_runs(rates: &[f64]) -> f64 {
    if rates.len() < 2 {
        return f64::INFINITY;
    }
    let m = mean(rates);
    let var = rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (rates.len() - 1) as f64;
    1.96 * (var / rates.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{ChiSquared, Distribution};

    #[test]
    fn zero_innovation_scores_zero() {
        let innovation = DVector::zeros(6);
        let s = DMatrix::identity(6, 6);
        let (stat, alarm) = chi2_step(&innovation, &s, 1.0).unwrap();
        assert_eq!(stat, 0.0);
        assert!(!alarm);
    }

    #[test]
    fn unit_innovation_scores_dimension() {
        let innovation = DVector::from_element(3, 1.0);
        let s = DMatrix::identity(3, 3);
        let (stat, _) = chi2_step(&innovation, &s, 10.0).unwrap();
        assert_relative_eq!(stat, 3.0);
    }

    #[test]
    fn chi2_rejects_singular_covariance() {
        let innovation = DVector::from_element(2, 1.0);
        let s = DMatrix::zeros(2, 2);
        assert!(matches!(
            chi2_step(&innovation, &s, 1.0),
            Err(SimError::SingularInnovation { .. })
        ));
    }

    #[test]
    fn chi2_monte_carlo_mean_matches_dof() {
        // Attack-free scores of a consistent filter are chi-square; the
        // sample mean over 1e5 draws lands within 5% of the dof.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let dof = 6.0;
        let dist = ChiSquared::new(dof).unwrap();
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| dist.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - dof).abs() / dof < 0.05, "mean {mean}");
    }

    #[test]
    fn cusum_stays_at_zero_below_drift() {
        let mut state = DetectorState::default();
        let (stat, alarm) = cusum_step(&mut state, 3.0, 6.0, 10.0, true);
        assert_eq!(stat, 0.0);
        assert!(!alarm);
        assert_eq!(state.cusum, 0.0);
    }

    #[test]
    fn cusum_alarm_and_reset_arithmetic() {
        let mut state = DetectorState::default();
        let (stat, alarm) = cusum_step(&mut state, 7.0, 6.0, 0.5, true);
        assert_eq!(stat, 1.0);
        assert!(alarm);
        assert_eq!(state.cusum, 0.0, "reset-on-alarm");
    }

    #[test]
    fn cusum_first_alarm_matches_closed_form() {
        // Constant score drift + delta alarms first at ceil(threshold / delta).
        let drift = 6.0;
        let delta = 0.75;
        let threshold = 10.0_f64;
        let expected = (threshold / delta).ceil() as usize;
        let mut state = DetectorState::default();
        let mut first_alarm = None;
        for step in 1..=100 {
            let (_, alarm) = cusum_step(&mut state, drift + delta, drift, threshold, true);
            if alarm {
                first_alarm = Some(step);
                break;
            }
        }
        assert_eq!(first_alarm, Some(expected));
    }

    #[test]
    fn cusum_statistic_never_negative() {
        let mut state = DetectorState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dist = ChiSquared::new(6.0).unwrap();
        for _ in 0..10_000 {
            let (stat, _) = cusum_step(&mut state, dist.sample(&mut rng), 6.0, 25.0, true);
            assert!(stat >= 0.0);
            assert!(state.cusum >= 0.0);
        }
    }

    #[test]
    fn median_calibration_on_symmetric_scores() {
        // Target 0.5 on symmetric synthetic scores returns the median.
        let runs: Vec<Vec<(f64, f64)>> =
            vec![(0..101).map(|i| (i as f64, 0.0)).collect()];
        let samples = CalibrationSamples { runs };
        let cal = calibrate_threshold(DetectorKind::Chi2, 0.5, &samples, true).unwrap();
        assert_relative_eq!(cal.threshold, 50.0);
    }

    #[test]
    fn chi2_calibration_matches_analytic_quantile() {
        // Inverse-CDF oracle: the empirical 0.999 quantile of chi-square
        // dof-9 samples approximates the analytic quantile.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let dist = ChiSquared::new(9.0).unwrap();
        let runs: Vec<Vec<(f64, f64)>> = (0..10)
            .map(|_| (0..20_000).map(|_| (dist.sample(&mut rng), 9.0)).collect())
            .collect();
        let samples = CalibrationSamples { runs };
        let cal = calibrate_threshold(DetectorKind::Chi2, 0.001, &samples, true).unwrap();
        // statrs oracle value for the 0.999 quantile of chi2(9).
        let analytic = {
            use statrs::distribution::{ChiSquared as StatChi, ContinuousCDF};
            StatChi::new(9.0).unwrap().inverse_cdf(0.999)
        };
        assert!(
            (cal.threshold - analytic).abs() / analytic < 0.05,
            "empirical {} vs analytic {analytic}",
            cal.threshold
        );
        assert!((cal.achieved_rate - 0.001).abs() < 5e-4);
    }

    #[test]
    fn cusum_calibration_hits_target_rate_on_held_out_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let dist = ChiSquared::new(6.0).unwrap();
        let make_runs = |rng: &mut ChaCha8Rng, n_runs: usize| -> Vec<Vec<(f64, f64)>> {
            (0..n_runs)
                .map(|_| (0..40_000).map(|_| (dist.sample(rng), 6.0)).collect())
                .collect()
        };
        let cal_samples = CalibrationSamples { runs: make_runs(&mut rng, 16) };
        let target = 0.01;
        let cal =
            calibrate_threshold(DetectorKind::Cusum, target, &cal_samples, true).unwrap();

        let held_out = make_runs(&mut rng, 8);
        let rates: Vec<f64> = held_out
            .iter()
            .map(|run| detector_rate_on_run(DetectorKind::Cusum, run, cal.threshold, true))
            .collect();
        let achieved = rates.iter().sum::<f64>() / rates.len() as f64;
        assert!(
            (achieved - target).abs() < 0.003,
            "held-out rate {achieved} vs target {target}"
        );
    }

    #[test]
    fn calibration_requires_enough_samples() {
        let samples = CalibrationSamples { runs: vec![vec![(1.0, 6.0); 100]] };
        match calibrate_threshold(DetectorKind::Chi2, 0.001, &samples, true) {
            Err(SimError::InsufficientSamples { have, need }) => {
                assert_eq!(have, 100);
                assert_eq!(need, 50_000);
            }
            other => panic!("expected InsufficientSamples, got {other:?}"),
        }
    }
}
