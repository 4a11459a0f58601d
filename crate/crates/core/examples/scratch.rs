// Dev scratch: trajectory diagnostics. Not part of the deliverable surface.
use spoofsim_core::harness::{run_scenario, ScenarioConfig};

fn main() {
    let mut m = ScenarioConfig::default();
    m.sim.horizon = 150.0;
    m.attack.enabled = false;
    let record = run_scenario(&m, 42, false).unwrap();
    println!("--- mission (150 s), real noise ---");
    let mut chi2_sum = 0.0;
    let mut chi2_n = 0usize;
    let mut chi2_gps_sum = 0.0;
    let mut chi2_gps_n = 0usize;
    for s in &record.steps {
        if s.k >= 0 {
            if s.innovation_dof == 9 {
                chi2_gps_sum += s.chi2_stat;
                chi2_gps_n += 1;
            } else {
                chi2_sum += s.chi2_stat;
                chi2_n += 1;
            }
        }
        if s.k % 5000 == 0 {
            let p = s.truth.position();
            println!(
                "t={:7.2} pos=({:8.2},{:8.2},{:8.2}) wp={} chi2={:8.2} cusum={:9.2}",
                s.t, p.x, p.y, p.z, s.ctrl.waypoint_idx, s.chi2_stat, s.cusum_stat
            );
        }
    }
    println!(
        "chi2 means: imu-only {:.3} (dof 6), gps {:.3} (dof 9)",
        chi2_sum / chi2_n as f64,
        chi2_gps_sum / chi2_gps_n as f64
    );

    // Step response check.
    let mut cfg = ScenarioConfig::default();
    cfg.sim.horizon = 8.0;
    cfg.sim.warmup = 2.0;
    cfg.mission.start = [1.0, 0.0, 10.0];
    cfg.mission.waypoints = vec![[0.0, 0.0, 10.0]];
    cfg.mission.capture_radius = 0.05;
    cfg.attack.enabled = false;
    cfg.sim.drag_enabled = false;
    cfg.process_noise.sigma_w_diag = vec![1e-14; 12];
    cfg.gps.sigma_p = vec![1e-8, 0.0, 0.0, 0.0, 1e-8, 0.0, 0.0, 0.0, 1e-8];
    cfg.imu.sigma_omega = {
        let mut v = vec![0.0; 36];
        for i in 0..6 { v[i*6+i] = 1e-12; }
        v
    };
    cfg.estimator.init_noise_std = 0.0;
    let record = run_scenario(&cfg, 1, false).unwrap();
    println!("--- step response ---");
    for s in &record.steps {
        if s.k % 500 == 0 && s.k >= 0 {
            println!("t={:6.2} x={:9.5}", s.t, s.truth.position().x);
        }
    }
}
