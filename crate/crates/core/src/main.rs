use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spoofsim_core::analysis::{
    controller_lipschitz, deviation_series, fake_replay_error, fusion_lipschitz, ies_experiment,
    min_effective_step, min_effective_step_paper_variant, stealth_bound, StealthBoundInputs,
    REPLAY_TOLERANCE,
};
use spoofsim_core::detection::{calibrate_threshold, DetectorKind};
use spoofsim_core::harness::{
    self, load_run, run_csv_name, run_monte_carlo, run_scenario, save_run, sidecar_name,
    write_alarm_rates_csv, write_deviation_csv, write_mean_deviation_csv, McAggregate,
    ScenarioConfig,
};
use spoofsim_core::SimError;

#[derive(Parser)]
#[command(
    name = "spoofsim",
    about = "Quadcopter closed-loop simulator with GPS false-data injection, \
             residual anomaly detectors and a stealthiness analysis suite"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its CSV record plus noise sidecar.
    Simulate(SimulateArgs),
    /// Paired attacked/nominal Monte-Carlo fan-out.
    Montecarlo(MonteCarloArgs),
    /// Calibrate detector thresholds to a target per-step false-alarm rate.
    Calibrate(CalibrateArgs),
    /// Analyze recorded runs: deviation series, stealthiness bound,
    /// incremental-stability fit, fake-state replay check.
    Analyze(AnalyzeArgs),
    /// Render SVG plots from recorded runs and aggregates.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Disable the attack injection (produces the nominal half of a pair).
    #[arg(long)]
    no_attack: bool,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct MonteCarloArgs {
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    #[arg(long)]
    runs: usize,
    #[arg(long)]
    base_seed: u64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Keep only aggregate statistics in memory and on disk (recommended
    /// beyond a handful of runs); otherwise every run record is written.
    #[arg(long)]
    stream: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    #[arg(long)]
    target_pfa: f64,
    /// Number of attack-free calibration runs.
    #[arg(long)]
    samples: usize,
    /// Base seed for the calibration runs (defaults to sim.seed + 10000).
    #[arg(long)]
    base_seed: Option<u64>,
    /// Override the run horizon (s) for calibration.
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Seed of the run pair to analyze (defaults to the smallest found).
    #[arg(long)]
    seed: Option<u64>,
    /// Fit empirical incremental-stability constants (kappa, lambda).
    #[arg(long)]
    ies: bool,
    /// Evaluate the stealthiness bound and minimum effective attack time.
    #[arg(long)]
    bound: bool,
    /// Verify the fake-state replay identity on the attacked record.
    #[arg(long)]
    replay_check: bool,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Montecarlo(args) => montecarlo(args),
        Command::Calibrate(args) => calibrate(args),
        Command::Analyze(args) => analyze(args),
        Command::Plot(args) => plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig, SimError> {
    ScenarioConfig::from_path(path)
}

fn stage_out_dir(dir: &Path, cfg: &ScenarioConfig) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let scenario = dir.join("scenario.toml");
    std::fs::write(&scenario, cfg.emit()).map_err(|e| SimError::io(&scenario, e))
}

fn simulate(args: SimulateArgs) -> Result<(), SimError> {
    let cfg = load_config(&args.config)?;
    stage_out_dir(&args.out, &cfg)?;
    let record = run_scenario(&cfg, args.seed, !args.no_attack)?;
    let csv = save_run(&record, &args.out)?;

    let n = record.steps.len();
    let alarms_chi2 = record.steps.iter().filter(|s| s.k >= 0 && s.chi2_alarm).count();
    let alarms_cusum = record.steps.iter().filter(|s| s.k >= 0 && s.cusum_alarm).count();
    let final_wp = record.steps.last().map(|s| s.ctrl.waypoint_idx).unwrap_or(0);
    println!("wrote {}", csv.display());
    println!(
        "steps={n} (warmup {}), attack={}, final_waypoint_index={final_wp}",
        record.meta.warmup_steps, record.meta.attack_enabled
    );
    let post = record.steps.iter().filter(|s| s.k >= 0).count();
    println!(
        "per-step alarm rates: chi2 {:.4}, cusum {:.4}",
        alarms_chi2 as f64 / post.max(1) as f64,
        alarms_cusum as f64 / post.max(1) as f64
    );
    Ok(())
}

fn montecarlo(args: MonteCarloArgs) -> Result<(), SimError> {
    let cfg = load_config(&args.config)?;
    stage_out_dir(&args.out, &cfg)?;

    let aggregate = if args.stream {
        run_monte_carlo(&cfg, args.runs, args.base_seed)?
    } else {
        let models = harness::LoopModels::build(&cfg)?;
        let mut agg = McAggregate::new(models.horizon_steps as usize, models.timing.td);
        for i in 0..args.runs as u64 {
            let seed = args.base_seed + i;
            let attacked = run_scenario(&cfg, seed, true)?;
            let nominal = run_scenario(&cfg, seed, false)?;
            save_run(&attacked, &args.out)?;
            save_run(&nominal, &args.out)?;
            agg.absorb_pair(seed, &attacked, &nominal)?;
        }
        agg
    };

    for (seed, message) in &aggregate.failures {
        eprintln!("run seed {seed} failed: {message}");
    }
    let stats = aggregate.alarm_stats();
    write_alarm_rates_csv(&stats, aggregate.td, &args.out.join("alarm_rates.csv"))?;
    write_mean_deviation_csv(
        &aggregate.mean_deviation(),
        aggregate.td,
        &args.out.join("deviation_mean.csv"),
    )?;
    println!(
        "pairs={} steps={} chi2: td {:.4} fa {:.4} | cusum: td {:.4} fa {:.4}",
        aggregate.n_pairs,
        aggregate.steps,
        stats.chi2.mean_td,
        stats.chi2.mean_fa,
        stats.cusum.mean_td,
        stats.cusum.mean_fa
    );
    if !aggregate.failures.is_empty() {
        return Err(SimError::Validation(format!(
            "{} of {} runs failed",
            aggregate.failures.len(),
            args.runs
        )));
    }
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<(), SimError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(h) = args.horizon {
        cfg.sim.horizon = h;
        cfg.validate()?;
    }
    let base_seed = args.base_seed.unwrap_or(cfg.sim.seed + 10_000);
    let samples = harness::calibration_runs(&cfg, args.samples, base_seed)?;
    let reset = cfg.detectors.reset_on_alarm;

    let chi2 = calibrate_threshold(DetectorKind::Chi2, args.target_pfa, &samples, reset)?;
    let cusum = calibrate_threshold(DetectorKind::Cusum, args.target_pfa, &samples, reset)?;

    println!("calibration runs: {} ({} per-step samples)", args.samples, chi2.samples);
    println!(
        "chi2  threshold = {:.4}  achieved = {:.5} +/- {:.5}",
        chi2.threshold, chi2.achieved_rate, chi2.rate_ci_half_width
    );
    println!(
        "cusum threshold = {:.4}  achieved = {:.5} +/- {:.5}",
        cusum.threshold, cusum.achieved_rate, cusum.rate_ci_half_width
    );
    println!("\n[detectors] lines for the scenario file:");
    println!("chi2_threshold = {:.4}", chi2.threshold);
    println!("cusum_threshold = {:.4}", cusum.threshold);
    Ok(())
}

fn discover_pair_seed(dir: &Path) -> Result<u64, SimError> {
    let mut seeds = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| SimError::io(dir, e))?;
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(rest) = name.strip_prefix("run_seed") {
            if let Some(seed_str) = rest.strip_suffix("_attacked.csv") {
                if let Ok(seed) = seed_str.parse::<u64>() {
                    if dir.join(run_csv_name(seed, false)).exists() {
                        seeds.push(seed);
                    }
                }
            }
        }
    }
    seeds.sort_unstable();
    seeds.first().copied().ok_or_else(|| {
        SimError::Validation(format!(
            "no attacked/nominal run pair found in {}",
            dir.display()
        ))
    })
}

fn analyze(args: AnalyzeArgs) -> Result<(), SimError> {
    let dir = &args.input;
    let scenario = dir.join("scenario.toml");
    let cfg = ScenarioConfig::from_path(&scenario)?;
    let seed = match args.seed {
        Some(s) => s,
        None => discover_pair_seed(dir)?,
    };

    let attacked = load_run(
        &dir.join(run_csv_name(seed, true)),
        &dir.join(sidecar_name(seed, true)),
    )?;
    let nominal = load_run(
        &dir.join(run_csv_name(seed, false)),
        &dir.join(sidecar_name(seed, false)),
    )?;

    let series = deviation_series(&attacked, &nominal, &[1.0, 5.0, 10.0])?;
    write_deviation_csv(&series, &dir.join("deviation.csv"))?;
    let t_attack = cfg.attack.start_time;
    for probe in [50.0, 100.0, 200.0] {
        if let Some(d) = series.at_time(t_attack + probe) {
            if t_attack + probe <= cfg.sim.horizon {
                println!("deviation at t={:.0}s after attack start: {:.3} m", probe, d);
            }
        }
    }
    for (alpha, k) in &series.first_crossing {
        match k {
            Some(k) => println!("deviation reaches {alpha} m at step {k} (t={:.1}s)", *k as f64 * attacked.meta.td),
            None => println!("deviation never reaches {alpha} m within the horizon"),
        }
    }

    if args.replay_check {
        let err = fake_replay_error(&attacked, &cfg)?;
        let verdict = if err <= REPLAY_TOLERANCE { "ok" } else { "MISMATCH" };
        println!("fake-state replay: max discrepancy {err:.3e} ({verdict}, tol {REPLAY_TOLERANCE:.0e})");
    }

    let mut fit = None;
    if args.ies || args.bound {
        let f = ies_experiment(&cfg, cfg.sim.seed + 500, 12, 5.0, 10)?;
        println!(
            "incremental stability: kappa={:.3} lambda(per-step)={:.6} R2={:.3} horizon={} steps",
            f.kappa, f.lambda, f.r_squared, f.horizon_steps
        );
        fit = Some(f);
    }

    if args.bound {
        let fit = fit.expect("fit computed above");
        let models = harness::LoopModels::build_unarmed(&cfg)?;
        let l_g = fusion_lipschitz(&cfg, cfg.sim.seed + 600, 10, 40)?;
        let l_fc = controller_lipschitz(&cfg, cfg.sim.seed + 700, 10, 40)?;
        let c_norm = nalgebra::Vector3::from_row_slice(&cfg.attack.c).norm();
        let result = stealth_bound(StealthBoundInputs {
            kappa: fit.kappa,
            lambda: fit.lambda,
            l_h: models.imu.lipschitz,
            l_g,
            l_fc,
            td: models.timing.td,
            n_g: models.timing.n_g,
            sigma_omega: *models.imu.sigma(),
            sigma_p: *models.gps.sigma(),
            c_norm,
        })?;
        println!(
            "constants: L_h={:.3} L_g={:.3} L_fc={:.3} ||C||={c_norm}",
            models.imu.lipschitz, l_g, l_fc
        );
        println!("stealthiness bound: b_eps={:.6e} eps={:.6}", result.b_eps, result.epsilon);
        if c_norm > 0.0 {
            let k10 = min_effective_step(10.0, c_norm, fit.kappa, l_g, l_fc, models.timing.td);
            let k10_paper =
                min_effective_step_paper_variant(10.0, c_norm, fit.kappa, l_g, l_fc, models.timing.td);
            println!(
                "min effective step for alpha=10 m: k*={k10} (t={:.1}s); alternative grouping: {k10_paper}",
                k10 as f64 * models.timing.td
            );
        }
    }
    Ok(())
}

fn read_simple_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| SimError::RecordFormat(format!("{}: empty", path.display())))?
        .split(',')
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        let row: Vec<f64> = line
            .split(',')
            .map(|f| f.parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        rows.push(row);
    }
    Ok((header, rows))
}

fn plot(args: PlotArgs) -> Result<(), SimError> {
    use spoofsim_core::harness::svg::{
        LinePlot, Series, COLOR_ATTACKED, COLOR_ESTIMATE, COLOR_NOMINAL,
    };
    let dir = &args.input;
    std::fs::create_dir_all(&args.out).map_err(|e| SimError::io(&args.out, e))?;
    let mut wrote_any = false;

    // Trajectory overlay from the first complete pair.
    if let Ok(seed) = discover_pair_seed(dir) {
        let attacked = harness::read_run_csv(&dir.join(run_csv_name(seed, true)))?;
        let nominal = harness::read_run_csv(&dir.join(run_csv_name(seed, false)))?;
        let xy =
            |r: &harness::RunRecord| -> Vec<(f64, f64)> {
                r.steps
                    .iter()
                    .filter(|s| s.k >= 0)
                    .map(|s| (s.truth.position().x, s.truth.position().y))
                    .collect()
            };
        let xy_est: Vec<(f64, f64)> = attacked
            .steps
            .iter()
            .filter(|s| s.k >= 0)
            .map(|s| (s.estimate.position().x, s.estimate.position().y))
            .collect();
        let plot = LinePlot {
            title: format!("XY position trajectories (seed {seed})"),
            x_label: "x (m)".to_string(),
            y_label: "y (m)".to_string(),
            series: vec![
                Series { label: "nominal".to_string(), color: COLOR_NOMINAL, points: xy(&nominal) },
                Series { label: "attacked".to_string(), color: COLOR_ATTACKED, points: xy(&attacked) },
                Series {
                    label: "estimate (attacked)".to_string(),
                    color: COLOR_ESTIMATE,
                    points: xy_est,
                },
            ],
        };
        plot.save(&args.out.join("trajectory_xy.svg"))?;
        println!("wrote {}", args.out.join("trajectory_xy.svg").display());
        wrote_any = true;
    }

    // Alarm-rate curves from the Monte-Carlo aggregate.
    let rates_path = dir.join("alarm_rates.csv");
    if rates_path.exists() {
        let (header, rows) = read_simple_csv(&rates_path)?;
        let col = |name: &str| header.iter().position(|h| h == name);
        if let (Some(t), Some(c_fa), Some(c_td), Some(u_fa), Some(u_td)) = (
            col("t"),
            col("chi2_fa"),
            col("chi2_td"),
            col("cusum_fa"),
            col("cusum_td"),
        ) {
            for (name, fa, td) in [("chi2", c_fa, c_td), ("cusum", u_fa, u_td)] {
                let series = |idx: usize, label: &str, color: &'static str| Series {
                    label: label.to_string(),
                    color,
                    points: rows.iter().map(|r| (r[t], r[idx])).collect(),
                };
                let plot = LinePlot {
                    title: format!("{name} per-step alarm rate"),
                    x_label: "t (s)".to_string(),
                    y_label: "alarm rate".to_string(),
                    series: vec![
                        series(fa, "attack free", COLOR_NOMINAL),
                        series(td, "under attack", COLOR_ATTACKED),
                    ],
                };
                let path = args.out.join(format!("alarm_rate_{name}.svg"));
                plot.save(&path)?;
                println!("wrote {}", path.display());
                wrote_any = true;
            }
        }
    }

    // Deviation curve if an analysis or aggregate produced one.
    for (file, title) in [
        ("deviation.csv", "Position deviation (attacked vs nominal)"),
        ("deviation_mean.csv", "Mean position deviation over pairs"),
    ] {
        let path = dir.join(file);
        if path.exists() {
            let (header, rows) = read_simple_csv(&path)?;
            let t_idx = header.iter().position(|h| h == "t").unwrap_or(1);
            let d_idx = header.len() - 1;
            let plot = LinePlot {
                title: title.to_string(),
                x_label: "t (s)".to_string(),
                y_label: "deviation (m)".to_string(),
                series: vec![Series {
                    label: "||p_attacked - p_nominal||".to_string(),
                    color: COLOR_ATTACKED,
                    points: rows.iter().map(|r| (r[t_idx], r[d_idx])).collect(),
                }],
            };
            let out = args.out.join(file.replace(".csv", ".svg"));
            plot.save(&out)?;
            println!("wrote {}", out.display());
            wrote_any = true;
        }
    }

    if !wrote_any {
        return Err(SimError::Validation(format!(
            "nothing to plot in {}",
            dir.display()
        )));
    }
    Ok(())
}
