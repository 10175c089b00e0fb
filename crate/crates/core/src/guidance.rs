//! Zero-effort-miss / zero-effort-velocity feedback guidance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{self, Environment, LanderState, SpacecraftParams, Vec3};

pub const CLASSICAL_K_R: f64 = 6.0;
pub const CLASSICAL_K_V: f64 = -2.0;

/// Position and velocity gains plus the episode time of flight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceGains {
    pub k_r: f64,
    pub k_v: f64,
    /// Time of flight, s.
    pub t_f: f64,
}

impl GuidanceGains {
    pub fn new(k_r: f64, k_v: f64, t_f: f64) -> Self {
        Self { k_r, k_v, t_f }
    }

    /// Energy-optimal gains `(6, -2)`.
    pub fn classical(t_f: f64) -> Self {
        Self::new(CLASSICAL_K_R, CLASSICAL_K_V, t_f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_r.is_finite() && self.k_v.is_finite() && self.t_f.is_finite()) {
            return Err(Error::NonFinite("guidance gains"));
        }
        if self.t_f <= 0.0 {
            return Err(Error::InvalidParameter(format!("t_f must be positive, got {}", self.t_f)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetState {
    pub r_f: Vec3,
    pub v_f: Vec3,
}

impl Default for TargetState {
    fn default() -> Self {
        Self {
            r_f: Vec3::zeros(),
            v_f: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZemZev {
    pub zem: Vec3,
    pub zev: Vec3,
}

impl ZemZev {
    pub fn zero() -> Self {
        Self {
            zem: Vec3::zeros(),
            zev: Vec3::zeros(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            zem: self.zem * s,
            zev: self.zev * s,
        }
    }
}

impl std::ops::Add for ZemZev {
    type Output = ZemZev;
    fn add(self, rhs: ZemZev) -> ZemZev {
        ZemZev {
            zem: self.zem + rhs.zem,
            zev: self.zev + rhs.zev,
        }
    }
}

/// How the zero-effort prediction is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZemZevStrategy {
    /// Closed form for uniform gravity.
    #[default]
    ConstantGravity,
    /// Numerical ballistic propagation to the final time.
    NoControl,
}

impl ZemZevStrategy {
    pub fn compute(
        self,
        state: &LanderState,
        target: &TargetState,
        t_go: f64,
        sc: &SpacecraftParams,
        env: &Environment,
    ) -> Result<ZemZev> {
        match self {
            ZemZevStrategy::ConstantGravity => zemzev_constant_g(state, target, t_go, &env.g),
            ZemZevStrategy::NoControl => zemzev_no_control(state, target, t_go, sc, env),
        }
    }
}

fn check_t_go(t_go: f64) -> Result<()> {
    if !t_go.is_finite() {
        return Err(Error::NonFinite("time-to-go"));
    }
    if t_go <= 0.0 {
        return Err(Error::NonPositiveTimeToGo(t_go));
    }
    Ok(())
}

pub fn zemzev_constant_g(state: &LanderState, target: &TargetState, t_go: f64, g: &Vec3) -> Result<ZemZev> {
    check_t_go(t_go)?;
    Ok(ZemZev {
        zem: target.r_f - state.r - state.v * t_go - g * (0.5 * t_go * t_go),
        zev: target.v_f - state.v - g * t_go,
    })
}

/// ZEM/ZEV from a ballistic propagation over `t_go` (terrain ignored).
pub fn zemzev_no_control(
    state: &LanderState,
    target: &TargetState,
    t_go: f64,
    sc: &SpacecraftParams,
    env: &Environment,
) -> Result<ZemZev> {
    check_t_go(t_go)?;
    let mut start = *state;
    // the propagation is ballistic, so only kinematics matter
    start.m = start.m.max(sc.m_dry);
    let end = sim::coast(&start, t_go, sc, env)?;
    if !end.is_finite() {
        return Err(Error::NonFinite("no-control propagation"));
    }
    Ok(ZemZev {
        zem: target.r_f - end.r,
        zev: target.v_f - end.v,
    })
}

/// `a = (K_R / t_go^2) ZEM + (K_V / t_go) ZEV`, with `t_go` floored at
/// `t_go_floor`.
pub fn generalized_accel(zz: &ZemZev, gains: &GuidanceGains, t_go: f64, t_go_floor: f64) -> Vec3 {
    let t = t_go.max(t_go_floor);
    zz.zem * (gains.k_r / (t * t)) + zz.zev * (gains.k_v / t)
}

/// Energy-optimal law `a = 6 ZEM / t_go^2 - 2 ZEV / t_go`.
pub fn classical_accel(zz: &ZemZev, t_go: f64, t_go_floor: f64) -> Vec3 {
    generalized_accel(zz, &GuidanceGains::classical(t_go), t_go, t_go_floor)
}
