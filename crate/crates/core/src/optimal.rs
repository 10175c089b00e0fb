//! Unconstrained energy-optimal reference trajectory under uniform gravity.
//!
//! The minimum of `J = 1/2 ∫ |a|^2 dt` with fixed end states has an
//! acceleration profile linear in time, `a(s) = a0 + c s`, so the trajectory
//! and its cost are polynomials.

use crate::guidance::{zemzev_constant_g, TargetState};
use crate::sim::{terrain_clearance, Environment, LanderState, SpacecraftParams, Vec3};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyOptimalArc {
    pub start: LanderState,
    pub g: Vec3,
    pub t_f: f64,
    /// Acceleration at the start, m/s^2.
    pub a0: Vec3,
    /// Acceleration rate, m/s^3.
    pub jerk: Vec3,
}

impl EnergyOptimalArc {
    pub fn new(start: &LanderState, target: &TargetState, t_f: f64, g: &Vec3) -> Result<Self> {
        let zz = zemzev_constant_g(start, target, t_f, g)?;
        let a0 = zz.zem * (6.0 / (t_f * t_f)) - zz.zev * (2.0 / t_f);
        let jerk = (zz.zev - a0 * t_f) * (2.0 / (t_f * t_f));
        Ok(Self {
            start: *start,
            g: *g,
            t_f,
            a0,
            jerk,
        })
    }

    pub fn accel(&self, s: f64) -> Vec3 {
        self.a0 + self.jerk * s
    }

    pub fn position(&self, s: f64) -> Vec3 {
        let net = self.a0 + self.g;
        self.start.r + self.start.v * s + net * (0.5 * s * s) + self.jerk * (s * s * s / 6.0)
    }

    pub fn velocity(&self, s: f64) -> Vec3 {
        self.start.v + (self.a0 + self.g) * s + self.jerk * (0.5 * s * s)
    }

    /// `∫ |a|^2 dt` over the whole arc.
    pub fn accel_energy(&self) -> f64 {
        let t = self.t_f;
        t * (self.a0.norm_squared() + self.a0.dot(&self.jerk) * t + self.jerk.norm_squared() * t * t / 3.0)
    }

    /// `∫ |a| dt`, the ideal velocity increment, by composite Simpson.
    pub fn delta_v(&self, panels: usize) -> f64 {
        let n = panels.max(2) & !1;
        let h = self.t_f / n as f64;
        let mut sum = self.accel(0.0).norm() + self.accel(self.t_f).norm();
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * self.accel(i as f64 * h).norm();
        }
        sum * h / 3.0
    }

    /// Propellant used when the arc is flown exactly: `m0 (1 - exp(-Δv / c))`.
    pub fn mass_depleted(&self, sc: &SpacecraftParams) -> f64 {
        self.start.m * (1.0 - (-self.delta_v(2000) / sc.exhaust_velocity()).exp())
    }

    /// Smallest terrain clearance over `samples + 1` uniformly spaced points.
    pub fn min_clearance(&self, env: &Environment, samples: usize) -> f64 {
        let n = samples.max(1);
        (0..=n)
            .map(|i| terrain_clearance(&self.position(self.t_f * i as f64 / n as f64), env))
            .fold(f64::INFINITY, f64::min)
    }
}
