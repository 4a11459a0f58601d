//! Run persistence and report files.
//!
//! A run is stored as a human-readable CSV (states, estimates, delivered
//! GPS, attack signal, detector outputs) plus a compact binary sidecar
//! carrying the raw noise draws, per-step controller state and the replay
//! checkpoint. The pair reconstructs the full record bit-exactly.
//!
//! All exports are deterministic: floats print in shortest round-trip
//! form and nothing embeds a timestamp.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::analysis::{AlarmStats, DeviationSeries};
use crate::control::ControllerState;
use crate::dynamics::{Matrix12, RotorCommand, StateVector, Vector12};
use crate::error::SimError;
use crate::harness::record::{ReplayCheckpoint, RunMeta, RunRecord, StepRecord};
use crate::sensors::Vector6;

const SIDECAR_MAGIC: &[u8; 4] = b"SPNZ";
const SIDECAR_VERSION: u32 = 1;

const CSV_STATE_COLS: [&str; 12] = [
    "phi", "theta", "psi", "phi_dot", "theta_dot", "psi_dot", "x", "y", "z", "vx", "vy", "vz",
];

pub fn run_csv_name(seed: u64, attacked: bool) -> String {
    format!("run_seed{seed}_{}.csv", if attacked { "attacked" } else { "nominal" })
}

pub fn sidecar_name(seed: u64, attacked: bool) -> String {
    format!("run_seed{seed}_{}.noise.bin", if attacked { "attacked" } else { "nominal" })
}

/// CSV header: step/time, true state, estimate, delivered GPS, attack
/// signal, detector outputs.
fn csv_header() -> String {
    let mut cols = vec!["k".to_string(), "t".to_string()];
    cols.extend(CSV_STATE_COLS.iter().map(|c| c.to_string()));
    cols.extend(CSV_STATE_COLS.iter().map(|c| format!("xhat_{c}")));
    cols.extend(["gps_x", "gps_y", "gps_z", "a_x", "a_y", "a_z"].map(String::from));
    cols.extend(["chi2", "chi2_alarm", "cusum", "cusum_alarm"].map(String::from));
    cols.join(",")
}

pub fn write_run_csv(record: &RunRecord, path: &Path) -> Result<(), SimError> {
    let file = fs::File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e: std::io::Error| SimError::io(path, e);

    let m = &record.meta;
    writeln!(out, "# spoofsim-run v1").map_err(io_err)?;
    writeln!(out, "# seed={}", m.seed).map_err(io_err)?;
    writeln!(out, "# attack={}", if m.attack_enabled { 1 } else { 0 }).map_err(io_err)?;
    writeln!(out, "# digest={}", m.config_digest).map_err(io_err)?;
    writeln!(out, "# warmup_steps={}", m.warmup_steps).map_err(io_err)?;
    writeln!(out, "# horizon_steps={}", m.horizon_steps).map_err(io_err)?;
    writeln!(out, "# td={}", m.td).map_err(io_err)?;
    writeln!(out, "{}", csv_header()).map_err(io_err)?;

    let mut line = String::with_capacity(512);
    for s in &record.steps {
        line.clear();
        line.push_str(&format!("{},{}", s.k, s.t));
        for v in s.truth.0.iter().chain(s.estimate.0.iter()) {
            line.push(',');
            line.push_str(&format!("{v}"));
        }
        match s.gps {
            Some(g) => line.push_str(&format!(",{},{},{}", g.x, g.y, g.z)),
            None => line.push_str(",,,"),
        }
        match s.attack {
            Some(a) => line.push_str(&format!(",{},{},{}", a.x, a.y, a.z)),
            None => line.push_str(",,,"),
        }
        line.push_str(&format!(
            ",{},{},{},{}",
            s.chi2_stat,
            s.chi2_alarm as u8,
            s.cusum_stat,
            s.cusum_alarm as u8
        ));
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Parse a run CSV written by [`write_run_csv`]. Noise draws and
/// controller state come back zeroed; merge the sidecar for a full record.
pub fn read_run_csv(path: &Path) -> Result<RunRecord, SimError> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    let bad = |msg: &str| SimError::RecordFormat(format!("{}: {msg}", path.display()));

    let mut seed = None;
    let mut attack = None;
    let mut digest = None;
    let mut warmup = None;
    let mut horizon = None;
    let mut td = None;
    let mut steps = Vec::new();
    let mut saw_header = false;

    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some((key, value)) = rest.split_once('=') {
                match key {
                    "seed" => seed = value.parse::<u64>().ok(),
                    "attack" => attack = Some(value == "1"),
                    "digest" => digest = Some(value.to_string()),
                    "warmup_steps" => warmup = value.parse::<i64>().ok(),
                    "horizon_steps" => horizon = value.parse::<i64>().ok(),
                    "td" => td = value.parse::<f64>().ok(),
                    _ => {}
                }
            }
            continue;
        }
        if !saw_header {
            if line != csv_header() {
                return Err(bad("unexpected CSV header"));
            }
            saw_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 36 {
            return Err(bad(&format!("expected 36 fields, got {}", fields.len())));
        }
        let f = |i: usize| -> Result<f64, SimError> {
            fields[i].parse::<f64>().map_err(|_| bad(&format!("bad float in column {i}")))
        };
        let opt3 = |i: usize| -> Result<Option<Vector3<f64>>, SimError> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                Ok(Some(Vector3::new(f(i)?, f(i + 1)?, f(i + 2)?)))
            }
        };
        let mut truth = Vector12::zeros();
        let mut estimate = Vector12::zeros();
        for i in 0..12 {
            truth[i] = f(2 + i)?;
            estimate[i] = f(14 + i)?;
        }
        let gps = opt3(26)?;
        let attack_sig = opt3(29)?;
        steps.push(StepRecord {
            k: fields[0].parse::<i64>().map_err(|_| bad("bad k"))?,
            t: f(1)?,
            truth: StateVector(truth),
            estimate: StateVector(estimate),
            ctrl: ControllerState::default(),
            imu: Vector6::zeros(),
            gps,
            attack: attack_sig,
            innovation_dof: if gps.is_some() { 9 } else { 6 },
            chi2_stat: f(32)?,
            chi2_alarm: fields[33] == "1",
            cusum_stat: f(34)?,
            cusum_alarm: fields[35] == "1",
            w: Vector12::zeros(),
            n_imu: Vector6::zeros(),
            n_gps: None,
        });
    }

    Ok(RunRecord {
        meta: RunMeta {
            seed: seed.ok_or_else(|| bad("missing seed"))?,
            attack_enabled: attack.ok_or_else(|| bad("missing attack flag"))?,
            config_digest: digest.ok_or_else(|| bad("missing digest"))?,
            warmup_steps: warmup.ok_or_else(|| bad("missing warmup_steps"))?,
            horizon_steps: horizon.ok_or_else(|| bad("missing horizon_steps"))?,
            td: td.ok_or_else(|| bad("missing td"))?,
        },
        steps,
        checkpoint: None,
    })
}

struct BinWriter<W: Write> {
    out: W,
}

impl<W: Write> BinWriter<W> {
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn i64(&mut self, v: i64) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.out.write_all(&[v])
    }
    fn slice(&mut self, vs: &[f64]) -> std::io::Result<()> {
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }
}

struct BinReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BinReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SimError> {
        if self.pos + n > self.data.len() {
            return Err(SimError::RecordFormat("sidecar truncated".to_string()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn f64(&mut self) -> Result<f64, SimError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, SimError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, SimError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, SimError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u8(&mut self) -> Result<u8, SimError> {
        Ok(self.take(1)?[0])
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, SimError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Write the binary sidecar: versioned header, raw noise draws and
/// controller state per step, then the replay checkpoint.
pub fn write_noise_sidecar(record: &RunRecord, path: &Path) -> Result<(), SimError> {
    let file = fs::File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = BinWriter { out: BufWriter::new(file) };
    let io_err = |e: std::io::Error| SimError::io(path, e);

    (|| -> std::io::Result<()> {
        w.out.write_all(SIDECAR_MAGIC)?;
        w.u32(SIDECAR_VERSION)?;
        w.u64(record.meta.seed)?;
        w.u8(record.meta.attack_enabled as u8)?;
        let digest = record.meta.config_digest.as_bytes();
        w.u32(digest.len() as u32)?;
        w.out.write_all(digest)?;
        w.i64(record.meta.warmup_steps)?;
        w.i64(record.meta.horizon_steps)?;
        w.f64(record.meta.td)?;
        w.u64(record.steps.len() as u64)?;
        for s in &record.steps {
            w.i64(s.k)?;
            w.slice(s.w.as_slice())?;
            w.slice(s.n_imu.as_slice())?;
            match s.n_gps {
                Some(g) => {
                    w.u8(1)?;
                    w.slice(g.as_slice())?;
                }
                None => w.u8(0)?,
            }
            w.slice(&s.ctrl.to_array())?;
        }
        match &record.checkpoint {
            Some(cp) => {
                w.u8(1)?;
                w.i64(cp.k)?;
                w.slice(cp.truth.0.as_slice())?;
                w.slice(cp.est_x.0.as_slice())?;
                w.slice(cp.est_cov.as_slice())?;
                w.slice(&cp.ctrl.to_array())?;
                w.slice(&cp.u_prev.0)?;
            }
            None => w.u8(0)?,
        }
        w.out.flush()
    })()
    .map_err(io_err)
}

/// Load a full record from its CSV and sidecar pair.
pub fn load_run(csv_path: &Path, sidecar_path: &Path) -> Result<RunRecord, SimError> {
    let mut record = read_run_csv(csv_path)?;
    let data = fs::read(sidecar_path).map_err(|e| SimError::io(sidecar_path, e))?;
    let mut r = BinReader { data: &data, pos: 0 };

    if r.take(4)? != SIDECAR_MAGIC {
        return Err(SimError::RecordFormat("bad sidecar magic".to_string()));
    }
    let version = r.u32()?;
    if version != SIDECAR_VERSION {
        return Err(SimError::RecordFormat(format!("unsupported sidecar version {version}")));
    }
    let seed = r.u64()?;
    let attack = r.u8()? == 1;
    let digest_len = r.u32()? as usize;
    let digest = String::from_utf8(r.take(digest_len)?.to_vec())
        .map_err(|_| SimError::RecordFormat("bad digest encoding".to_string()))?;
    let _warmup = r.i64()?;
    let _horizon = r.i64()?;
    let _td = r.f64()?;
    if seed != record.meta.seed || attack != record.meta.attack_enabled {
        return Err(SimError::MismatchedRuns(
            "sidecar does not belong to this CSV (seed/attack mismatch)".to_string(),
        ));
    }
    if digest != record.meta.config_digest {
        return Err(SimError::MismatchedRuns(
            "sidecar does not belong to this CSV (config digest mismatch)".to_string(),
        ));
    }

    let n = r.u64()? as usize;
    if n != record.steps.len() {
        return Err(SimError::RecordFormat(format!(
            "sidecar has {n} steps, CSV has {}",
            record.steps.len()
        )));
    }
    for s in record.steps.iter_mut() {
        let k = r.i64()?;
        if k != s.k {
            return Err(SimError::RecordFormat("sidecar step order mismatch".to_string()));
        }
        s.w = Vector12::from_row_slice(&r.f64s(12)?);
        s.n_imu = Vector6::from_row_slice(&r.f64s(6)?);
        s.n_gps = if r.u8()? == 1 {
            Some(Vector3::from_row_slice(&r.f64s(3)?))
        } else {
            None
        };
        let ctrl: [f64; 14] = r.f64s(14)?.try_into().unwrap();
        s.ctrl = ControllerState::from_array(&ctrl);
    }
    record.checkpoint = if r.u8()? == 1 {
        let k = r.i64()?;
        let truth = StateVector(Vector12::from_row_slice(&r.f64s(12)?));
        let est_x = StateVector(Vector12::from_row_slice(&r.f64s(12)?));
        let est_cov = Matrix12::from_column_slice(&r.f64s(144)?);
        let ctrl: [f64; 14] = r.f64s(14)?.try_into().unwrap();
        let u_prev: [f64; 4] = r.f64s(4)?.try_into().unwrap();
        Some(ReplayCheckpoint {
            k,
            truth,
            est_x,
            est_cov,
            ctrl: ControllerState::from_array(&ctrl),
            u_prev: RotorCommand(u_prev),
        })
    } else {
        None
    };
    Ok(record)
}

/// Persist a run as CSV + sidecar under `dir`; returns the CSV path.
pub fn save_run(record: &RunRecord, dir: &Path) -> Result<PathBuf, SimError> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let csv = dir.join(run_csv_name(record.meta.seed, record.meta.attack_enabled));
    let sidecar = dir.join(sidecar_name(record.meta.seed, record.meta.attack_enabled));
    write_run_csv(record, &csv)?;
    write_noise_sidecar(record, &sidecar)?;
    Ok(csv)
}

/// Aggregate CSV: per-step alarm rates for both detectors and sides.
pub fn write_alarm_rates_csv(stats: &AlarmStats, td: f64, path: &Path) -> Result<(), SimError> {
    let file = fs::File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e: std::io::Error| SimError::io(path, e);
    writeln!(out, "k,t,chi2_fa,chi2_td,cusum_fa,cusum_td").map_err(io_err)?;
    for i in 0..stats.steps {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i,
            i as f64 * td,
            stats.chi2.fa_per_step[i],
            stats.chi2.td_per_step[i],
            stats.cusum.fa_per_step[i],
            stats.cusum.td_per_step[i],
        )
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Aggregate CSV: the deviation series of a pair.
pub fn write_deviation_csv(series: &DeviationSeries, path: &Path) -> Result<(), SimError> {
    let file = fs::File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e: std::io::Error| SimError::io(path, e);
    writeln!(out, "k,t,deviation").map_err(io_err)?;
    for i in 0..series.k.len() {
        writeln!(out, "{},{},{}", series.k[i], series.t[i], series.deviation[i])
            .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Mean deviation over a Monte-Carlo aggregate.
pub fn write_mean_deviation_csv(
    mean: &[f64],
    td: f64,
    path: &Path,
) -> Result<(), SimError> {
    let file = fs::File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e: std::io::Error| SimError::io(path, e);
    writeln!(out, "k,t,mean_deviation").map_err(io_err)?;
    for (i, d) in mean.iter().enumerate() {
        writeln!(out, "{},{},{}", i, i as f64 * td, d).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::record::test_support::tiny_record;

    #[test]
    fn csv_and_sidecar_round_trip() {
        let dir = std::env::temp_dir().join(format!("spoofsim_export_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let mut record = tiny_record(5);
        record.steps[2].gps = Some(Vector3::new(1.0, 2.0, 3.0));
        record.steps[2].n_gps = Some(Vector3::new(0.1, -0.2, 0.05));
        record.steps[2].attack = Some(Vector3::new(-5e-5, 0.0, 0.0));
        record.steps[2].innovation_dof = 9;
        record.checkpoint = Some(ReplayCheckpoint {
            k: 0,
            truth: record.steps[2].truth,
            est_x: record.steps[2].estimate,
            est_cov: Matrix12::identity() * 1e-2,
            ctrl: ControllerState::default(),
            u_prev: RotorCommand([1.0, 2.0, 3.0, 4.0]),
        });

        let csv = save_run(&record, &dir).unwrap();
        let sidecar = dir.join(sidecar_name(5, false));
        let loaded = load_run(&csv, &sidecar).unwrap();
        assert_eq!(loaded, record);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_is_byte_stable() {
        let dir = std::env::temp_dir().join(format!("spoofsim_stable_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let record = tiny_record(9);
        let a = dir.join("a.csv");
        let b = dir.join("b.csv");
        write_run_csv(&record, &a).unwrap();
        write_run_csv(&record, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn mismatched_sidecar_is_rejected() {
        let dir = std::env::temp_dir().join(format!("spoofsim_mismatch_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let a = tiny_record(1);
        let b = tiny_record(2);
        let csv = save_run(&a, &dir).unwrap();
        save_run(&b, &dir).unwrap();
        let wrong = dir.join(sidecar_name(2, false));
        assert!(matches!(load_run(&csv, &wrong), Err(SimError::MismatchedRuns(_))));
        fs::remove_dir_all(&dir).ok();
    }
}
