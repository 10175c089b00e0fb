//! CSV record types for trajectories, training logs, Monte-Carlo trials,
//! stability reports and comparison tables.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the values bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::GuidanceGains;
use crate::sim::{terrain_clearance, Environment, LanderState, Vec3};
use crate::stability::{GainHistoryPoint, StabilityReport};
use crate::trainer::{EpisodeRecord, IterationLog, Trial};

pub fn write_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the header even when `rows` is empty.
pub fn write_csv_with_header<W: Write, T: Serialize>(writer: W, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read, T: DeserializeOwned>(reader: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn save_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_with_header(std::io::BufWriter::new(file), header, rows)
}

pub fn load_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_csv(std::fs::File::open(path)?)
}

/// One row per guidance step plus a final row holding the end state with
/// empty control columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub t: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub m: f64,
    pub clearance: f64,
    pub t_go: Option<f64>,
    pub ax: Option<f64>,
    pub ay: Option<f64>,
    pub az: Option<f64>,
    pub thrust: Option<f64>,
    pub k_r: Option<f64>,
    pub k_v: Option<f64>,
    pub t_f: Option<f64>,
    pub zem_x: Option<f64>,
    pub zem_y: Option<f64>,
    pub zem_z: Option<f64>,
    pub zev_x: Option<f64>,
    pub zev_y: Option<f64>,
    pub zev_z: Option<f64>,
}

pub const TRAJECTORY_HEADER: &[&str] = &[
    "step", "t", "rx", "ry", "rz", "vx", "vy", "vz", "m", "clearance", "t_go", "ax", "ay", "az", "thrust", "k_r", "k_v",
    "t_f", "zem_x", "zem_y", "zem_z", "zev_x", "zev_y", "zev_z",
];

impl TrajectoryRow {
    fn state_only(step: usize, s: &LanderState, env: &Environment) -> Self {
        Self {
            step,
            t: s.t,
            rx: s.r.x,
            ry: s.r.y,
            rz: s.r.z,
            vx: s.v.x,
            vy: s.v.y,
            vz: s.v.z,
            m: s.m,
            clearance: terrain_clearance(&s.r, env),
            t_go: None,
            ax: None,
            ay: None,
            az: None,
            thrust: None,
            k_r: None,
            k_v: None,
            t_f: None,
            zem_x: None,
            zem_y: None,
            zem_z: None,
            zev_x: None,
            zev_y: None,
            zev_z: None,
        }
    }

    pub fn state(&self) -> LanderState {
        LanderState {
            r: Vec3::new(self.rx, self.ry, self.rz),
            v: Vec3::new(self.vx, self.vy, self.vz),
            m: self.m,
            t: self.t,
        }
    }

    pub fn gains(&self) -> Option<GuidanceGains> {
        Some(GuidanceGains::new(self.k_r?, self.k_v?, self.t_f?))
    }
}

pub fn trajectory_rows(ep: &EpisodeRecord, env: &Environment) -> Vec<TrajectoryRow> {
    let mut rows: Vec<TrajectoryRow> = ep
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| TrajectoryRow {
            t_go: Some(s.t_go),
            ax: Some(s.a_cmd.x),
            ay: Some(s.a_cmd.y),
            az: Some(s.a_cmd.z),
            thrust: Some(s.thrust.norm()),
            k_r: Some(s.action.k_r),
            k_v: Some(s.action.k_v),
            t_f: Some(s.action.t_f),
            zem_x: Some(s.zem.x),
            zem_y: Some(s.zem.y),
            zem_z: Some(s.zem.z),
            zev_x: Some(s.zev.x),
            zev_y: Some(s.zev.y),
            zev_z: Some(s.zev.z),
            ..TrajectoryRow::state_only(k, &s.state, env)
        })
        .collect();
    if let Some(last) = ep.final_state() {
        rows.push(TrajectoryRow::state_only(ep.samples.len(), last, env));
    }
    rows
}

/// Gain history of a trajectory, skipping rows without controls.
pub fn gain_history(rows: &[TrajectoryRow]) -> Vec<GainHistoryPoint> {
    rows.iter()
        .filter_map(|r| {
            Some(GainHistoryPoint {
                t: r.t,
                t_go: r.t_go?,
                gains: r.gains()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRow {
    pub iter: usize,
    pub mean_train_cost: f64,
    pub mean_test_cost: f64,
    pub min_cost: f64,
    pub max_cost: f64,
    pub violation_frac: f64,
    pub train_violation_frac: f64,
    pub critic_train_nrmse: f64,
    pub critic_test_nrmse: f64,
    pub critic_hidden: usize,
    pub grad_norm: f64,
    pub alpha: f64,
    pub resampled: usize,
}

pub const TRAINING_LOG_HEADER: &[&str] = &[
    "iter",
    "mean_train_cost",
    "mean_test_cost",
    "min_cost",
    "max_cost",
    "violation_frac",
    "train_violation_frac",
    "critic_train_nrmse",
    "critic_test_nrmse",
    "critic_hidden",
    "grad_norm",
    "alpha",
    "resampled",
];

impl From<&IterationLog> for TrainingLogRow {
    fn from(l: &IterationLog) -> Self {
        Self {
            iter: l.iter,
            mean_train_cost: l.mean_train_cost,
            mean_test_cost: l.mean_test_cost,
            min_cost: l.min_train_cost,
            max_cost: l.max_train_cost,
            violation_frac: l.violation_frac,
            train_violation_frac: l.train_violation_frac,
            critic_train_nrmse: l.critic.train_nrmse,
            critic_test_nrmse: l.critic.test_nrmse,
            critic_hidden: l.critic.hidden_count,
            grad_norm: l.grad_norm,
            alpha: l.alpha,
            resampled: l.resampled,
        }
    }
}

/// Wall-clock time per iteration, kept apart from the reproducible log and
/// written as JSON so every CSV a run emits stays byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub iter: usize,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub r0_x: f64,
    pub r0_y: f64,
    pub r0_z: f64,
    pub v0_x: f64,
    pub v0_y: f64,
    pub v0_z: f64,
    pub rf_x: f64,
    pub rf_y: f64,
    pub rf_z: f64,
    pub vf_x: f64,
    pub vf_y: f64,
    pub vf_z: f64,
    pub position_error: f64,
    pub velocity_error: f64,
    pub mass_depleted: f64,
    pub violation: bool,
    pub min_clearance: f64,
    pub tof: f64,
    pub terminated_by: String,
}

pub const TRIAL_HEADER: &[&str] = &[
    "trial",
    "r0_x",
    "r0_y",
    "r0_z",
    "v0_x",
    "v0_y",
    "v0_z",
    "rf_x",
    "rf_y",
    "rf_z",
    "vf_x",
    "vf_y",
    "vf_z",
    "position_error",
    "velocity_error",
    "mass_depleted",
    "violation",
    "min_clearance",
    "tof",
    "terminated_by",
];

impl From<&Trial> for TrialRow {
    fn from(t: &Trial) -> Self {
        Self {
            trial: t.trial,
            r0_x: t.r0.x,
            r0_y: t.r0.y,
            r0_z: t.r0.z,
            v0_x: t.v0.x,
            v0_y: t.v0.y,
            v0_z: t.v0.z,
            rf_x: t.r_final.x,
            rf_y: t.r_final.y,
            rf_z: t.r_final.z,
            vf_x: t.v_final.x,
            vf_y: t.v_final.y,
            vf_z: t.v_final.z,
            position_error: t.position_error,
            velocity_error: t.velocity_error,
            mass_depleted: t.mass_depleted,
            violation: t.violation,
            min_clearance: t.min_clearance,
            tof: t.tof,
            terminated_by: t.terminated_by.as_str().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCsvRow {
    pub t: f64,
    pub t_go: f64,
    pub k_r: f64,
    pub k_v: f64,
    pub re_lambda1: f64,
    pub im_lambda1: f64,
    pub re_lambda2: f64,
    pub im_lambda2: f64,
    pub stable: bool,
    pub status: String,
    pub phi11: f64,
    pub phi12: f64,
    pub phi21: f64,
    pub phi22: f64,
}

pub const STABILITY_HEADER: &[&str] = &[
    "t",
    "t_go",
    "k_r",
    "k_v",
    "re_lambda1",
    "im_lambda1",
    "re_lambda2",
    "im_lambda2",
    "stable",
    "status",
    "phi11",
    "phi12",
    "phi21",
    "phi22",
];

pub fn stability_rows(report: &StabilityReport) -> Vec<StabilityCsvRow> {
    report
        .rows
        .iter()
        .map(|row| {
            let p = &row.point;
            let phi = &row.stm.phi;
            StabilityCsvRow {
                t: p.t,
                t_go: p.t_go,
                k_r: p.k_r,
                k_v: p.k_v,
                re_lambda1: p.lambda1.re,
                im_lambda1: p.lambda1.im,
                re_lambda2: p.lambda2.re,
                im_lambda2: p.lambda2.im,
                stable: p.is_stable(),
                status: p.status.as_str().into(),
                phi11: phi[(0, 0)],
                phi12: phi[(0, 1)],
                phi21: phi[(1, 0)],
                phi22: phi[(1, 1)],
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub algorithm: String,
    pub mass_depleted: f64,
    pub tof: f64,
    pub position_error: f64,
    pub velocity_error: f64,
    pub violation: bool,
}

pub const COMPARISON_HEADER: &[&str] = &[
    "algorithm",
    "mass_depleted",
    "tof",
    "position_error",
    "velocity_error",
    "violation",
];

impl ComparisonRow {
    pub fn validate(&self, max_propellant: f64) -> Result<()> {
        if !(self.mass_depleted >= 0.0 && self.mass_depleted <= max_propellant) {
            return Err(Error::InvalidState(format!(
                "{}: depleted mass {} outside [0, {}]",
                self.algorithm, self.mass_depleted, max_propellant
            )));
        }
        Ok(())
    }
}
