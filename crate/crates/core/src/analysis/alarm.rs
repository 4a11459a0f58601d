//! Per-step true-detection and false-alarm rates across Monte-Carlo runs.

use crate::detection::Verdict;
use crate::error::SimError;

/// Rates for one detector, attacked side against nominal side.
#[derive(Debug, Clone)]
pub struct DetectorRates {
    /// Fraction of attacked runs alarming at each step k >= 0.
    pub td_per_step: Vec<f64>,
    /// Fraction of nominal runs alarming at each step k >= 0.
    pub fa_per_step: Vec<f64>,
    pub mean_td: f64,
    pub mean_fa: f64,
    /// 95% half-widths on the means, computed across runs (runs are the
    /// independent unit; steps within a run are correlated).
    pub td_ci_half: f64,
    pub fa_ci_half: f64,
    pub n_runs: usize,
}

impl DetectorRates {
    /// Fraction of steps whose attacked-side rate exceeds the nominal
    /// rate's normal-approximation band with the given z value.
    pub fn band_violation_fraction(&self, z: f64) -> f64 {
        if self.td_per_step.is_empty() {
            return 0.0;
        }
        let n = self.n_runs as f64;
        let violations = self
            .td_per_step
            .iter()
            .zip(&self.fa_per_step)
            .filter(|(td, fa)| {
                let band = z * (**fa * (1.0 - **fa) / n).sqrt();
                **td > **fa + band
            })
            .count();
        violations as f64 / self.td_per_step.len() as f64
    }
}

/// Alarm statistics for both detectors.
#[derive(Debug, Clone)]
pub struct AlarmStats {
    pub chi2: DetectorRates,
    pub cusum: DetectorRates,
    pub n_pairs: usize,
    pub steps: usize,
}

/// Aggregate verdict sequences (post-warm-up, aligned) into per-step and
/// mean alarm rates. Run counts and horizons must match between the
/// attacked and nominal sides.
pub fn alarm_stats(
    attacked: &[Vec<Verdict>],
    nominal: &[Vec<Verdict>],
) -> Result<AlarmStats, SimError> {
    if attacked.len() != nominal.len() || attacked.is_empty() {
        return Err(SimError::MismatchedRuns(format!(
            "run counts differ or empty: {} attacked vs {} nominal",
            attacked.len(),
            nominal.len()
        )));
    }
    let steps = attacked[0].len();
    for run in attacked.iter().chain(nominal.iter()) {
        if run.len() != steps {
            return Err(SimError::MismatchedRuns(
                "verdict horizons differ between runs".to_string(),
            ));
        }
    }

    let chi2 = rates_for(attacked, nominal, |v| v.chi2_alarm);
    let cusum = rates_for(attacked, nominal, |v| v.cusum_alarm);
    Ok(AlarmStats { chi2, cusum, n_pairs: attacked.len(), steps })
}

fn rates_for(
    attacked: &[Vec<Verdict>],
    nominal: &[Vec<Verdict>],
    alarm: impl Fn(&Verdict) -> bool + Copy,
) -> DetectorRates {
    let steps = attacked[0].len();
    let n_runs = attacked.len();
    let mut td_counts = vec![0u32; steps];
    let mut fa_counts = vec![0u32; steps];
    let mut td_run_rates = Vec::with_capacity(n_runs);
    let mut fa_run_rates = Vec::with_capacity(n_runs);
    for run in attacked {
        let mut alarms = 0usize;
        for (i, v) in run.iter().enumerate() {
            if alarm(v) {
                td_counts[i] += 1;
                alarms += 1;
            }
        }
        td_run_rates.push(alarms as f64 / steps as f64);
    }
    for run in nominal {
        let mut alarms = 0usize;
        for (i, v) in run.iter().enumerate() {
            if alarm(v) {
                fa_counts[i] += 1;
                alarms += 1;
            }
        }
        fa_run_rates.push(alarms as f64 / steps as f64);
    }
    DetectorRates {
        td_per_step: td_counts.iter().map(|c| *c as f64 / n_runs as f64).collect(),
        fa_per_step: fa_counts.iter().map(|c| *c as f64 / n_runs as f64).collect(),
        mean_td: mean(&td_run_rates),
        mean_fa: mean(&fa_run_rates),
        td_ci_half: ci_half(&td_run_rates),
        fa_ci_half: ci_half(&fa_run_rates),
        n_runs,
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn ci_half(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::INFINITY;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    1.96 * (var / xs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdicts(alarms: &[bool]) -> Vec<Verdict> {
        alarms
            .iter()
            .enumerate()
            .map(|(k, a)| Verdict {
                k: k as i64,
                chi2_stat: 0.0,
                chi2_alarm: *a,
                cusum_stat: 0.0,
                cusum_alarm: *a,
            })
            .collect()
    }

    #[test]
    fn always_alarming_detector_scores_one_on_both_sides() {
        let attacked = vec![verdicts(&[true; 10]); 4];
        let nominal = vec![verdicts(&[true; 10]); 4];
        let stats = alarm_stats(&attacked, &nominal).unwrap();
        assert_eq!(stats.chi2.mean_td, 1.0);
        assert_eq!(stats.chi2.mean_fa, 1.0);
        assert!(stats.chi2.td_per_step.iter().all(|r| *r == 1.0));
        assert_eq!(stats.chi2.band_violation_fraction(2.576), 0.0);
    }

    #[test]
    fn per_step_rates_count_runs() {
        let attacked = vec![
            verdicts(&[true, false, false]),
            verdicts(&[true, true, false]),
        ];
        let nominal = vec![verdicts(&[false; 3]); 2];
        let stats = alarm_stats(&attacked, &nominal).unwrap();
        assert_eq!(stats.chi2.td_per_step, vec![1.0, 0.5, 0.0]);
        assert_eq!(stats.chi2.fa_per_step, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let attacked = vec![verdicts(&[true; 5])];
        let nominal = vec![verdicts(&[false; 5]), verdicts(&[false; 5])];
        assert!(alarm_stats(&attacked, &nominal).is_err());
        let short = vec![verdicts(&[false; 4])];
        assert!(alarm_stats(&attacked, &short).is_err());
    }
}
