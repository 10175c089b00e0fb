//! Point-mass lander dynamics.
//!
//! The vehicle is a point mass under constant gravity with a throttleable,
//! canted engine cluster. Commands are accelerations; the simulator converts
//! them to a net thrust vector that respects the cluster's throttle range and
//! integrates translation and mass depletion with fixed-step RK4.
//!
//! Frame: z-up, origin at the landing target.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Standard gravity used in the mass-flow equation, m/s^2.
pub const G0: f64 = 9.80665;

/// Default number of RK4 sub-steps per control interval.
pub const DEFAULT_SUBSTEPS: usize = 10;

/// Tolerance on terrain clearance when locating an impact, m.
pub const IMPACT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanderState {
    /// Position, m.
    pub r: Vec3,
    /// Velocity, m/s.
    pub v: Vec3,
    /// Mass, kg.
    pub m: f64,
    /// Elapsed time, s.
    pub t: f64,
}

impl LanderState {
    pub fn new(r: Vec3, v: Vec3, m: f64) -> Self {
        Self { r, v, m, t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.v.iter()).all(|x| x.is_finite())
            && self.m.is_finite()
            && self.t.is_finite()
    }

    /// `[r; v]` as a flat array, the input of the value function.
    pub fn translational(&self) -> [f64; 6] {
        [self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpacecraftParams {
    pub m_dry: f64,
    pub m_wet: f64,
    /// Specific impulse, s.
    pub isp: f64,
    /// Full-throttle thrust of one engine, N.
    pub engine_thrust: f64,
    pub throttle_min: f64,
    pub throttle_max: f64,
    pub n_thrusters: u32,
    /// Engine cant angle relative to the net thrust axis, rad.
    pub cant_angle: f64,
    pub g0: f64,
    /// When false the commanded acceleration is delivered exactly.
    pub thrust_limited: bool,
}

impl Default for SpacecraftParams {
    fn default() -> Self {
        Self {
            m_dry: 1505.0,
            m_wet: 1905.0,
            isp: 225.0,
            engine_thrust: 3100.0,
            throttle_min: 0.3,
            throttle_max: 0.8,
            n_thrusters: 6,
            cant_angle: 27f64.to_radians(),
            g0: G0,
            thrust_limited: true,
        }
    }
}

impl SpacecraftParams {
    fn cluster_thrust(&self) -> f64 {
        self.n_thrusters as f64 * self.engine_thrust * self.cant_angle.cos()
    }

    pub fn net_thrust_min(&self) -> f64 {
        self.throttle_min * self.cluster_thrust()
    }

    pub fn net_thrust_max(&self) -> f64 {
        self.throttle_max * self.cluster_thrust()
    }

    /// Exhaust velocity `Isp * g0`, m/s.
    pub fn exhaust_velocity(&self) -> f64 {
        self.isp * self.g0
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.m_dry,
            self.m_wet,
            self.isp,
            self.engine_thrust,
            self.throttle_min,
            self.throttle_max,
            self.cant_angle,
            self.g0,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("spacecraft parameters"));
        }
        if !(0.0 < self.throttle_min && self.throttle_min < self.throttle_max && self.throttle_max <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "throttle range must satisfy 0 < min < max <= 1, got [{}, {}]",
                self.throttle_min, self.throttle_max
            )));
        }
        if !(0.0 < self.m_dry && self.m_dry < self.m_wet) {
            return Err(Error::InvalidParameter(format!(
                "masses must satisfy 0 < m_dry < m_wet, got {} / {}",
                self.m_dry, self.m_wet
            )));
        }
        if self.cant_angle.cos() <= 0.0 {
            return Err(Error::InvalidParameter("cos(cant_angle) must be positive".into()));
        }
        if self.n_thrusters == 0 || self.engine_thrust <= 0.0 || self.isp <= 0.0 || self.g0 <= 0.0 {
            return Err(Error::InvalidParameter(
                "thruster count, thrust, Isp and g0 must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Environment {
    /// Gravity, m/s^2.
    pub g: Vec3,
    /// Terrain slope outside the flat zone, rad.
    pub slope_angle: f64,
    /// Radius of the flat disk around the target, m.
    pub flat_radius: f64,
    pub glide_limit: f64,
    /// Disable to fly over unconstrained flat terrain.
    pub terrain_enabled: bool,
    pub substeps: usize,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            g: Vec3::new(0.0, 0.0, -3.7114),
            slope_angle: 4f64.to_radians(),
            flat_radius: 5.0,
            glide_limit: 4f64.to_radians(),
            terrain_enabled: true,
            substeps: DEFAULT_SUBSTEPS,
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        if !self.g.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("gravity"));
        }
        if self.g.z >= 0.0 {
            return Err(Error::InvalidParameter("gravity must point down (g_z < 0)".into()));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.slope_angle > 0.0 && self.slope_angle < half_pi) {
            return Err(Error::InvalidParameter("slope_angle must lie in (0, pi/2)".into()));
        }
        if !(self.glide_limit > 0.0 && self.glide_limit < half_pi) {
            return Err(Error::InvalidParameter("glide_limit must lie in (0, pi/2)".into()));
        }
        if !(self.flat_radius >= 0.0) {
            return Err(Error::InvalidParameter("flat_radius must be non-negative".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: LanderState,
    /// Thrust applied at the start of the interval, N.
    pub applied_thrust: Vec3,
    pub thrust_saturated: bool,
    pub fuel_exhausted: bool,
    pub terrain_violation: bool,
    pub impact_point: Option<Vec3>,
}

/// Signed height above the terrain: a flat disk of `flat_radius` around the
/// target surrounded by a cone rising at `slope_angle`. Negative values are
/// violations.
pub fn terrain_clearance(r: &Vec3, env: &Environment) -> f64 {
    let horizontal = (r.x * r.x + r.y * r.y).sqrt();
    r.z - env.slope_angle.tan() * (horizontal - env.flat_radius).max(0.0)
}

/// Net thrust delivering `a_cmd` at the current mass, clamped in magnitude to
/// the cluster's throttle range. A null command maps to minimum thrust along +z.
pub fn acceleration_to_thrust(a_cmd: &Vec3, state: &LanderState, sc: &SpacecraftParams) -> Result<Vec3> {
    thrust_for(a_cmd, state.m, sc).map(|(thrust, _)| thrust)
}

fn thrust_for(a_cmd: &Vec3, mass: f64, sc: &SpacecraftParams) -> Result<(Vec3, bool)> {
    if !a_cmd.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("acceleration command"));
    }
    let thrust = a_cmd * mass;
    if !sc.thrust_limited {
        return Ok((thrust, false));
    }
    let (lo, hi) = (sc.net_thrust_min(), sc.net_thrust_max());
    let magnitude = thrust.norm();
    if magnitude == 0.0 {
        return Ok((Vec3::new(0.0, 0.0, lo), true));
    }
    if magnitude < lo {
        Ok((thrust * (lo / magnitude), true))
    } else if magnitude > hi {
        Ok((thrust * (hi / magnitude), true))
    } else {
        Ok((thrust, false))
    }
}

#[derive(Clone, Copy)]
struct Deriv {
    dr: Vec3,
    dv: Vec3,
    dm: f64,
}

/// Engine setting held over a sub-step.
#[derive(Clone, Copy)]
enum Engine<'a> {
    Off,
    /// Thrust follows the command at the instantaneous mass.
    Accel(&'a Vec3),
}

fn derivative(state: &LanderState, engine: Engine<'_>, sc: &SpacecraftParams, g: &Vec3) -> Deriv {
    let thrust = match engine {
        Engine::Off => Vec3::zeros(),
        // command finiteness is checked on entry
        Engine::Accel(a) => thrust_for(a, state.m, sc).map(|(t, _)| t).unwrap_or_else(|_| Vec3::zeros()),
    };
    Deriv {
        dr: state.v,
        dv: g + thrust / state.m,
        dm: -thrust.norm() / sc.exhaust_velocity(),
    }
}

fn offset(state: &LanderState, d: &Deriv, h: f64) -> LanderState {
    LanderState {
        r: state.r + d.dr * h,
        v: state.v + d.dv * h,
        m: state.m + d.dm * h,
        t: state.t + h,
    }
}

/// One classical RK4 step of length `h`.
fn rk4(state: &LanderState, engine: Engine<'_>, sc: &SpacecraftParams, g: &Vec3, h: f64) -> LanderState {
    let k1 = derivative(state, engine, sc, g);
    let k2 = derivative(&offset(state, &k1, 0.5 * h), engine, sc, g);
    let k3 = derivative(&offset(state, &k2, 0.5 * h), engine, sc, g);
    let k4 = derivative(&offset(state, &k3, h), engine, sc, g);
    LanderState {
        r: state.r + (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr) * (h / 6.0),
        v: state.v + (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv) * (h / 6.0),
        m: state.m + (k1.dm + 2.0 * k2.dm + 2.0 * k3.dm + k4.dm) * (h / 6.0),
        t: state.t + h,
    }
}

/// Advance `h` seconds, cutting the engine when the mass reaches `m_dry`.
/// Returns the new state and whether fuel ran out.
fn burn(state: &LanderState, engine: Engine<'_>, h: f64, sc: &SpacecraftParams, g: &Vec3) -> (LanderState, bool) {
    let full = rk4(state, engine, sc, g, h);
    if matches!(engine, Engine::Off) || full.m >= sc.m_dry {
        return (full, false);
    }
    // mass is monotone in time: bisect for the cut-off instant
    let (mut lo, mut hi) = (0.0_f64, h);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if rk4(state, engine, sc, g, mid).m >= sc.m_dry {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut cut = rk4(state, engine, sc, g, lo);
    cut.m = sc.m_dry;
    let end = rk4(&cut, Engine::Off, sc, g, h - lo);
    (end, true)
}

enum Command<'a> {
    Accel(&'a Vec3),
    Coast,
}

fn check_inputs(state: &LanderState, dt: f64, sc: &SpacecraftParams) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::NonFinite("lander state"));
    }
    if state.m < sc.m_dry {
        return Err(Error::InvalidState(format!(
            "mass {} below dry mass {}",
            state.m, sc.m_dry
        )));
    }
    Ok(())
}

fn integrate(
    state: &LanderState,
    command: Command<'_>,
    dt: f64,
    sc: &SpacecraftParams,
    env: &Environment,
    check_terrain: bool,
) -> Result<StepResult> {
    check_inputs(state, dt, sc)?;
    if let Command::Accel(a) = command {
        if !a.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("acceleration command"));
        }
    }
    let n_sub = env.substeps.max(1);
    let h = dt / n_sub as f64;
    let mut current = *state;
    let mut fuel_out = state.m <= sc.m_dry;
    let mut saturated = false;
    let mut applied = None;

    if check_terrain && terrain_clearance(&current.r, env) < 0.0 {
        return Ok(StepResult {
            next_state: current,
            applied_thrust: Vec3::zeros(),
            thrust_saturated: false,
            fuel_exhausted: fuel_out,
            terrain_violation: true,
            impact_point: Some(current.r),
        });
    }

    for _ in 0..n_sub {
        let engine = match command {
            Command::Accel(a) if !fuel_out => {
                let (thrust, sat) = thrust_for(a, current.m, sc)?;
                saturated |= sat;
                applied.get_or_insert(thrust);
                Engine::Accel(a)
            }
            _ => {
                applied.get_or_insert(Vec3::zeros());
                Engine::Off
            }
        };
        let prev = current;
        let (next, exhausted) = burn(&prev, engine, h, sc, &env.g);
        if !next.is_finite() {
            return Err(Error::NonFinite("integrated state"));
        }

        if check_terrain && terrain_clearance(&next.r, env) < 0.0 {
            let impact = locate_impact(&prev, engine, h, sc, env);
            return Ok(StepResult {
                next_state: impact,
                applied_thrust: applied.unwrap_or_else(Vec3::zeros),
                thrust_saturated: saturated,
                fuel_exhausted: fuel_out || impact.m <= sc.m_dry,
                terrain_violation: true,
                impact_point: Some(impact.r),
            });
        }
        current = next;
        fuel_out |= exhausted;
    }
    current.t = state.t + dt;
    Ok(StepResult {
        next_state: current,
        applied_thrust: applied.unwrap_or_else(Vec3::zeros),
        thrust_saturated: saturated,
        fuel_exhausted: fuel_out,
        terrain_violation: false,
        impact_point: None,
    })
}

/// Bisect the sub-step `[prev, prev + h]` for the first terrain contact. The
/// returned state has clearance in `[0, IMPACT_TOLERANCE]`.
fn locate_impact(prev: &LanderState, engine: Engine<'_>, h: f64, sc: &SpacecraftParams, env: &Environment) -> LanderState {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut best = *prev;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (state, _) = burn(prev, engine, mid * h, sc, &env.g);
        let clearance = terrain_clearance(&state.r, env);
        if clearance < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            best = state;
            if clearance <= IMPACT_TOLERANCE {
                break;
            }
        }
        if hi - lo < f64::EPSILON {
            break;
        }
    }
    best
}

/// Integrate one control interval of length `dt` holding `a_cmd`.
///
/// Thrust is recomputed from the command and the instantaneous mass inside
/// every sub-step. The engine is cut when the mass reaches `m_dry`. Terrain contact
/// ends the step at the interpolated impact point.
pub fn step(
    state: &LanderState,
    a_cmd: &Vec3,
    dt: f64,
    sc: &SpacecraftParams,
    env: &Environment,
) -> Result<StepResult> {
    integrate(state, Command::Accel(a_cmd), dt, sc, env, env.terrain_enabled)
}

/// Ballistic propagation with the engine off and terrain ignored.
pub fn coast(state: &LanderState, dt: f64, sc: &SpacecraftParams, env: &Environment) -> Result<LanderState> {
    integrate(state, Command::Coast, dt, sc, env, false).map(|res| res.next_state)
}
