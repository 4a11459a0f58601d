//! Paired Monte-Carlo fan-out with common random numbers.
//!
//! Run `i` uses seed `base_seed + i` and simulates the scenario twice,
//! attack on and off, over identical noise streams. Pairs execute in
//! parallel; results merge in run-index order so aggregates are bitwise
//! reproducible regardless of scheduling. Failed runs are reported in the
//! aggregate, never silently dropped.

use rayon::prelude::*;

use crate::analysis::{AlarmStats, DetectorRates};
use crate::attack::AttackConfig;
use crate::detection::CalibrationSamples;
use crate::error::SimError;
use crate::harness::config::ScenarioConfig;
use crate::harness::sim::{default_initial, simulate_loop, LoopModels, ReferenceMode, RngNoise};

const CHUNK: usize = 32;

/// Streamed statistics of one attacked/nominal pair.
struct PairOutcome {
    seed: u64,
    result: Result<PairStats, String>,
}

struct PairStats {
    chi2_attacked: Vec<bool>,
    chi2_nominal: Vec<bool>,
    cusum_attacked: Vec<bool>,
    cusum_nominal: Vec<bool>,
    deviation: Vec<f64>,
}

/// Order-independent aggregate over pairs (counts are additive; float
/// accumulation happens in fixed run order).
pub struct McAggregate {
    pub n_pairs: usize,
    /// Post-warm-up steps per run.
    pub steps: usize,
    pub td: f64,
    pub chi2_td_counts: Vec<u32>,
    pub chi2_fa_counts: Vec<u32>,
    pub cusum_td_counts: Vec<u32>,
    pub cusum_fa_counts: Vec<u32>,
    pub deviation_sum: Vec<f64>,
    pub deviation_min: Vec<f64>,
    pub deviation_max: Vec<f64>,
    /// Per-run mean alarm rates, the independent unit for interval
    /// estimates: (chi2 td, chi2 fa, cusum td, cusum fa) per pair.
    pub per_run_rates: Vec<[f64; 4]>,
    /// (seed, error) for runs that aborted.
    pub failures: Vec<(u64, String)>,
}

impl McAggregate {
    pub fn new(steps: usize, td: f64) -> Self {
        Self::empty(steps, td)
    }

    /// Fold one pair of full records into the aggregate; the record-keeping
    /// path of the Monte-Carlo command uses this instead of streaming.
    pub fn absorb_pair(
        &mut self,
        seed: u64,
        attacked: &crate::harness::record::RunRecord,
        nominal: &crate::harness::record::RunRecord,
    ) -> Result<(), SimError> {
        fn post(
            r: &crate::harness::record::RunRecord,
        ) -> Vec<&crate::harness::record::StepRecord> {
            r.steps.iter().filter(|s| s.k >= 0).collect()
        }
        let a = post(attacked);
        let n = post(nominal);
        if a.len() != self.steps || n.len() != self.steps {
            return Err(SimError::MismatchedRuns(format!(
                "records have {} / {} post-warm-up steps, aggregate expects {}",
                a.len(),
                n.len(),
                self.steps
            )));
        }
        let stats = PairStats {
            chi2_attacked: a.iter().map(|s| s.chi2_alarm).collect(),
            chi2_nominal: n.iter().map(|s| s.chi2_alarm).collect(),
            cusum_attacked: a.iter().map(|s| s.cusum_alarm).collect(),
            cusum_nominal: n.iter().map(|s| s.cusum_alarm).collect(),
            deviation: a
                .iter()
                .zip(&n)
                .map(|(x, y)| (x.truth.position() - y.truth.position()).norm())
                .collect(),
        };
        self.absorb(PairOutcome { seed, result: Ok(stats) });
        Ok(())
    }

    fn empty(steps: usize, td: f64) -> Self {
        McAggregate {
            n_pairs: 0,
            steps,
            td,
            chi2_td_counts: vec![0; steps],
            chi2_fa_counts: vec![0; steps],
            cusum_td_counts: vec![0; steps],
            cusum_fa_counts: vec![0; steps],
            deviation_sum: vec![0.0; steps],
            deviation_min: vec![f64::INFINITY; steps],
            deviation_max: vec![0.0; steps],
            per_run_rates: Vec::new(),
            failures: Vec::new(),
        }
    }

    fn absorb(&mut self, outcome: PairOutcome) {
        match outcome.result {
            Err(message) => self.failures.push((outcome.seed, message)),
            Ok(stats) => {
                self.n_pairs += 1;
                let mut rates = [0.0f64; 4];
                for i in 0..self.steps {
                    if stats.chi2_attacked[i] {
                        self.chi2_td_counts[i] += 1;
                        rates[0] += 1.0;
                    }
                    if stats.chi2_nominal[i] {
                        self.chi2_fa_counts[i] += 1;
                        rates[1] += 1.0;
                    }
                    if stats.cusum_attacked[i] {
                        self.cusum_td_counts[i] += 1;
                        rates[2] += 1.0;
                    }
                    if stats.cusum_nominal[i] {
                        self.cusum_fa_counts[i] += 1;
                        rates[3] += 1.0;
                    }
                    let d = stats.deviation[i];
                    self.deviation_sum[i] += d;
                    self.deviation_min[i] = self.deviation_min[i].min(d);
                    self.deviation_max[i] = self.deviation_max[i].max(d);
                }
                for r in &mut rates {
                    *r /= self.steps as f64;
                }
                self.per_run_rates.push(rates);
            }
        }
    }

    pub fn mean_deviation(&self) -> Vec<f64> {
        let n = self.n_pairs.max(1) as f64;
        self.deviation_sum.iter().map(|s| s / n).collect()
    }

    /// Convert the per-step counts into alarm statistics.
    pub fn alarm_stats(&self) -> AlarmStats {
        let n = self.n_pairs.max(1) as f64;
        let to_rate =
            |counts: &[u32]| counts.iter().map(|c| *c as f64 / n).collect::<Vec<f64>>();
        let column = |idx: usize| -> Vec<f64> {
            self.per_run_rates.iter().map(|r| r[idx]).collect()
        };
        let make = |td_counts: &[u32], fa_counts: &[u32], td_col: usize, fa_col: usize| {
            let td_rates = column(td_col);
            let fa_rates = column(fa_col);
            DetectorRates {
                td_per_step: to_rate(td_counts),
                fa_per_step: to_rate(fa_counts),
                mean_td: mean(&td_rates),
                mean_fa: mean(&fa_rates),
                td_ci_half: ci_half(&td_rates),
                fa_ci_half: ci_half(&fa_rates),
                n_runs: self.n_pairs,
            }
        };
        AlarmStats {
            chi2: make(&self.chi2_td_counts, &self.chi2_fa_counts, 0, 1),
            cusum: make(&self.cusum_td_counts, &self.cusum_fa_counts, 2, 3),
            n_pairs: self.n_pairs,
            steps: self.steps,
        }
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

fn run_pair_streamed(cfg: &ScenarioConfig, seed: u64) -> Result<PairStats, SimError> {
    let models = LoopModels::build(cfg)?;
    let steps = models.horizon_steps as usize;

    struct Side {
        chi2: Vec<bool>,
        cusum: Vec<bool>,
        positions: Vec<nalgebra::Vector3<f64>>,
    }
    let run_side = |attack_enabled: bool| -> Result<Side, SimError> {
        let mut noise = RngNoise::new(seed, &models);
        let init = default_initial(&models, &mut noise, -models.warmup_steps);
        let effective =
            AttackConfig { enabled: models.attack.enabled && attack_enabled, ..models.attack };
        let mut side = Side {
            chi2: Vec::with_capacity(steps),
            cusum: Vec::with_capacity(steps),
            positions: Vec::with_capacity(steps),
        };
        simulate_loop(
            &models,
            init,
            models.horizon_steps,
            Some(&effective),
            ReferenceMode::MissionAfterWarmup,
            &mut noise,
            |out| {
                if out.k >= 0 {
                    side.chi2.push(out.chi2_alarm);
                    side.cusum.push(out.cusum_alarm);
                    side.positions.push(out.truth.position());
                }
            },
        )?;
        Ok(side)
    };

    let attacked = run_side(true)?;
    let nominal = run_side(false)?;
    let deviation = attacked
        .positions
        .iter()
        .zip(&nominal.positions)
        .map(|(a, b)| (a - b).norm())
        .collect();
    Ok(PairStats {
        chi2_attacked: attacked.chi2,
        chi2_nominal: nominal.chi2,
        cusum_attacked: attacked.cusum,
        cusum_nominal: nominal.cusum,
        deviation,
    })
}

/// Run `n_runs` paired scenarios; pair `i` uses seed `base_seed + i`.
pub fn run_monte_carlo(
    cfg: &ScenarioConfig,
    n_runs: usize,
    base_seed: u64,
) -> Result<McAggregate, SimError> {
    assert!(n_runs >= 1);
    let models = LoopModels::build(cfg)?;
    let steps = models.horizon_steps as usize;
    let mut aggregate = McAggregate::empty(steps, models.timing.td);

    let seeds: Vec<u64> = (0..n_runs as u64).map(|i| base_seed + i).collect();
    for chunk in seeds.chunks(CHUNK) {
        let outcomes: Vec<PairOutcome> = chunk
            .par_iter()
            .map(|&seed| PairOutcome {
                seed,
                result: run_pair_streamed(cfg, seed).map_err(|e| e.to_string()),
            })
            .collect();
        // Merge in run order: aggregates are independent of completion order.
        for outcome in outcomes {
            aggregate.absorb(outcome);
        }
    }
    Ok(aggregate)
}

/// Attack-free runs collecting (chi-square score, drift) per post-warm-up
/// step: the calibration corpus.
pub fn calibration_runs(
    cfg: &ScenarioConfig,
    n_runs: usize,
    base_seed: u64,
) -> Result<CalibrationSamples, SimError> {
    let models = LoopModels::build_unarmed(cfg)?;
    let seeds: Vec<u64> = (0..n_runs as u64).map(|i| base_seed + i).collect();
    let runs: Vec<Result<Vec<(f64, f64)>, SimError>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut noise = RngNoise::new(seed, &models);
            let init = default_initial(&models, &mut noise, -models.warmup_steps);
            let mut scores = Vec::with_capacity(models.horizon_steps as usize);
            simulate_loop(
                &models,
                init,
                models.horizon_steps,
                None,
                ReferenceMode::MissionAfterWarmup,
                &mut noise,
                |out| {
                    if out.k >= 0 {
                        scores.push((
                            out.chi2_stat,
                            models.detector.drift.value(out.innovation_dof),
                        ));
                    }
                },
            )?;
            Ok(scores)
        })
        .collect();
    let mut collected = Vec::with_capacity(n_runs);
    for run in runs {
        collected.push(run?);
    }
    Ok(CalibrationSamples { runs: collected })
}
