//! Gaussian policy over the guidance gains and time of flight.
//!
//! Each of `K_R`, `K_V` and `T_f` is drawn from a normal distribution with a
//! fixed standard deviation and a mean linear in a radial-basis feature
//! vector of the lander state.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{GuidanceGains, CLASSICAL_K_R, CLASSICAL_K_V};
use crate::sim::{LanderState, Vec3};

/// Axis-aligned box used to lay out a grid of centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec3,
    pub hi: Vec3,
    pub counts: [usize; 3],
}

impl GridSpec {
    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n <= 1 || hi == lo {
            return vec![0.5 * (lo + hi)];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn points(&self) -> Vec<Vec3> {
        let xs = Self::axis(self.lo.x, self.hi.x, self.counts[0]);
        let ys = Self::axis(self.lo.y, self.hi.y, self.counts[1]);
        let zs = Self::axis(self.lo.z, self.hi.z, self.counts[2]);
        let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
        for &x in &xs {
            for &y in &ys {
                for &z in &zs {
                    out.push(Vec3::new(x, y, z));
                }
            }
        }
        out
    }

    /// Largest spacing along any axis with more than one center.
    pub fn spacing(&self) -> f64 {
        (0..3)
            .filter(|&k| self.counts[k] > 1 && self.hi[k] > self.lo[k])
            .map(|k| (self.hi[k] - self.lo[k]) / (self.counts[k] - 1) as f64)
            .fold(0.0, f64::max)
    }

    /// Shape parameter `1 / (2 Δ^2)` for Gaussian bumps on this grid.
    pub fn default_beta(&self) -> f64 {
        let d = self.spacing();
        if d > 0.0 {
            1.0 / (2.0 * d * d)
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfConfig {
    pub pos_centers: Vec<Vec3>,
    pub vel_centers: Vec<Vec3>,
    /// 1/m^2
    pub beta_r: f64,
    /// s^2/m^2
    pub beta_v: f64,
}

impl RbfConfig {
    pub fn from_grids(pos: &GridSpec, vel: &GridSpec) -> Self {
        Self {
            pos_centers: pos.points(),
            vel_centers: vel.points(),
            beta_r: pos.default_beta(),
            beta_v: vel.default_beta(),
        }
    }

    /// Position and velocity RBFs plus a trailing bias entry.
    pub fn dim(&self) -> usize {
        self.pos_centers.len() + self.vel_centers.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_r > 0.0 && self.beta_v > 0.0) {
            return Err(Error::InvalidParameter("RBF shape parameters must be positive".into()));
        }
        Ok(())
    }
}

impl Default for RbfConfig {
    fn default() -> Self {
        let pos = GridSpec {
            lo: Vec3::new(-1000.0, -1000.0, 0.0),
            hi: Vec3::new(2000.0, 2000.0, 1600.0),
            counts: [5, 5, 5],
        };
        let vel = GridSpec {
            lo: Vec3::new(-150.0, -150.0, -150.0),
            hi: Vec3::new(150.0, 150.0, 150.0),
            counts: [5, 5, 5],
        };
        Self::from_grids(&pos, &vel)
    }
}

/// `[φ_pos(r); φ_vel(v); 1]`.
pub fn features(state: &LanderState, rbf: &RbfConfig) -> Vec<f64> {
    let mut phi = Vec::with_capacity(rbf.dim());
    phi.extend(
        rbf.pos_centers
            .iter()
            .map(|c| (-rbf.beta_r * (state.r - c).norm_squared()).exp()),
    );
    phi.extend(
        rbf.vel_centers
            .iter()
            .map(|c| (-rbf.beta_v * (state.v - c).norm_squared()).exp()),
    );
    phi.push(1.0);
    phi
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta_kr: Vec<f64>,
    pub theta_kv: Vec<f64>,
    pub theta_tf: Vec<f64>,
    pub sigma_gain: f64,
    /// s
    pub sigma_tf: f64,
    pub tf_min: f64,
    pub tf_max: f64,
    pub rbf: RbfConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyInit {
    pub nominal_tf: f64,
    pub sigma_gain: f64,
    pub sigma_tf: f64,
    pub tf_max: f64,
}

impl Default for PolicyInit {
    fn default() -> Self {
        Self {
            nominal_tf: 80.0,
            sigma_gain: 0.3,
            sigma_tf: 2.0,
            tf_max: 300.0,
        }
    }
}

impl PolicyParams {
    /// Means start at the classical gains and the nominal time of flight.
    pub fn warm_start(rbf: RbfConfig, init: &PolicyInit, tf_min: f64) -> Self {
        let dim = rbf.dim();
        let bias_only = |value: f64| {
            let mut theta = vec![0.0; dim];
            theta[dim - 1] = value;
            theta
        };
        Self {
            theta_kr: bias_only(CLASSICAL_K_R),
            theta_kv: bias_only(CLASSICAL_K_V),
            theta_tf: bias_only(init.nominal_tf),
            sigma_gain: init.sigma_gain,
            sigma_tf: init.sigma_tf,
            tf_min,
            tf_max: init.tf_max,
            rbf,
        }
    }

    pub fn dim(&self) -> usize {
        self.rbf.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.rbf.validate()?;
        let dim = self.dim();
        if self.theta_kr.len() != dim || self.theta_kv.len() != dim || self.theta_tf.len() != dim {
            return Err(Error::InvalidParameter(format!(
                "weight vectors must have the feature dimension {dim}"
            )));
        }
        if !(self.sigma_gain >= 0.0 && self.sigma_tf >= 0.0) {
            return Err(Error::InvalidParameter("policy standard deviations must be >= 0".into()));
        }
        if !(self.tf_min > 0.0 && self.tf_min < self.tf_max) {
            return Err(Error::InvalidParameter("time-of-flight clamp must satisfy 0 < min < max".into()));
        }
        let finite = self
            .theta_kr
            .iter()
            .chain(&self.theta_kv)
            .chain(&self.theta_tf)
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("policy weights"));
        }
        Ok(())
    }

    fn raw_means(&self, phi: &[f64]) -> (f64, f64, f64) {
        (dot(phi, &self.theta_kr), dot(phi, &self.theta_kv), dot(phi, &self.theta_tf))
    }

    fn clamp_tf(&self, t_f: f64) -> f64 {
        t_f.clamp(self.tf_min, self.tf_max)
    }
}

/// Mean gains at `state`, with the time of flight clamped to its range.
pub fn mean(state: &LanderState, pp: &PolicyParams) -> GuidanceGains {
    let phi = features(state, &pp.rbf);
    let (k_r, k_v, t_f) = pp.raw_means(&phi);
    GuidanceGains::new(k_r, k_v, pp.clamp_tf(t_f))
}

/// `((u - μ) / σ^2) φ`. Zero when `σ = 0`.
pub fn log_prob_grad(u: f64, mu: f64, sigma: f64, phi: &[f64]) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![0.0; phi.len()];
    }
    let scale = (u - mu) / (sigma * sigma);
    phi.iter().map(|p| scale * p).collect()
}

/// Log density of `N(mu, sigma^2)` at `u`.
pub fn log_prob(u: f64, mu: f64, sigma: f64) -> f64 {
    let z = (u - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyAction {
    pub gains: GuidanceGains,
    pub log_grad_kr: Vec<f64>,
    pub log_grad_kv: Vec<f64>,
    pub log_grad_tf: Vec<f64>,
}

fn draw<R: Rng + ?Sized>(mu: f64, sigma: f64, rng: &mut R) -> f64 {
    let eps: f64 = rng.sample(StandardNormal);
    if sigma > 0.0 {
        mu + sigma * eps
    } else {
        mu
    }
}

/// Gain draw for one control interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GainDraw {
    pub k_r: f64,
    pub k_v: f64,
    pub log_grad_kr: Vec<f64>,
    pub log_grad_kv: Vec<f64>,
}

pub fn sample_gains<R: Rng + ?Sized>(state: &LanderState, pp: &PolicyParams, rng: &mut R) -> GainDraw {
    let phi = features(state, &pp.rbf);
    let (mu_kr, mu_kv, _) = pp.raw_means(&phi);
    let k_r = draw(mu_kr, pp.sigma_gain, rng);
    let k_v = draw(mu_kv, pp.sigma_gain, rng);
    GainDraw {
        k_r,
        k_v,
        log_grad_kr: log_prob_grad(k_r, mu_kr, pp.sigma_gain, &phi),
        log_grad_kv: log_prob_grad(k_v, mu_kv, pp.sigma_gain, &phi),
    }
}

/// Time-of-flight draw, clamped; the gradient refers to the unclamped draw.
pub fn sample_tof<R: Rng + ?Sized>(state: &LanderState, pp: &PolicyParams, rng: &mut R) -> (f64, Vec<f64>) {
    let phi = features(state, &pp.rbf);
    let mu = dot(&phi, &pp.theta_tf);
    let u = draw(mu, pp.sigma_tf, rng);
    (pp.clamp_tf(u), log_prob_grad(u, mu, pp.sigma_tf, &phi))
}

/// Draw all three actions at `state`.
pub fn sample<R: Rng + ?Sized>(state: &LanderState, pp: &PolicyParams, rng: &mut R) -> PolicyAction {
    let (t_f, log_grad_tf) = sample_tof(state, pp, rng);
    let gains = sample_gains(state, pp, rng);
    PolicyAction {
        gains: GuidanceGains::new(gains.k_r, gains.k_v, t_f),
        log_grad_kr: gains.log_grad_kr,
        log_grad_kv: gains.log_grad_kv,
        log_grad_tf,
    }
}

pub const POLICY_FORMAT: &str = "azem-policy";
pub const POLICY_VERSION: u32 = 1;

/// On-disk policy checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub iteration: Option<usize>,
    pub params: PolicyParams,
}

impl PolicyDocument {
    pub fn new(params: PolicyParams, seed: u64, iteration: Option<usize>) -> Self {
        Self {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_VERSION,
            seed,
            iteration,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PolicyDocument = serde_json::from_str(text)?;
        if doc.format != POLICY_FORMAT {
            return Err(Error::InvalidParameter(format!("not a policy document: {}", doc.format)));
        }
        if doc.version != POLICY_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported policy version {}",
                doc.version
            )));
        }
        doc.params.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_rbf() -> RbfConfig {
        RbfConfig {
            pos_centers: vec![Vec3::new(0.0, 0.0, 100.0), Vec3::new(50.0, 0.0, 0.0)],
            vel_centers: vec![Vec3::new(0.0, 0.0, -10.0)],
            beta_r: 1e-3,
            beta_v: 1e-2,
        }
    }

    fn state(r: Vec3, v: Vec3) -> LanderState {
        LanderState::new(r, v, 1800.0)
    }

    #[test]
    fn feature_at_center_is_one() {
        let rbf = small_rbf();
        let phi = features(&state(Vec3::new(0.0, 0.0, 100.0), Vec3::zeros()), &rbf);
        assert_eq!(phi.len(), 4);
        assert_eq!(phi[0], 1.0);
        assert_eq!(phi[3], 1.0);
        assert!(phi.iter().all(|&p| p > 0.0 && p <= 1.0));
    }

    #[test]
    fn unit_exponent_gives_inverse_e() {
        let rbf = small_rbf();
        let d = (1.0 / rbf.beta_r).sqrt();
        let phi = features(&state(Vec3::new(d, 0.0, 100.0), Vec3::zeros()), &rbf);
        assert_relative_eq!(phi[0], (-1.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn sharp_bumps_vanish_off_center() {
        let rbf = RbfConfig {
            beta_r: 1e12,
            ..small_rbf()
        };
        let phi = features(&state(Vec3::new(1.0, 0.0, 99.0), Vec3::zeros()), &rbf);
        assert_eq!(phi[0], 0.0);
        assert_eq!(phi[1], 0.0);
    }

    #[test]
    fn default_grid_layout() {
        let rbf = RbfConfig::default();
        assert_eq!(rbf.pos_centers.len(), 125);
        assert_eq!(rbf.vel_centers.len(), 125);
        assert_eq!(rbf.dim(), 251);
        assert_relative_eq!(rbf.beta_r, 1.0 / (2.0 * 750.0 * 750.0));
        assert_relative_eq!(rbf.beta_v, 1.0 / (2.0 * 75.0 * 75.0));
    }

    #[test]
    fn bias_only_policy_is_constant() {
        let mut pp = PolicyParams::warm_start(small_rbf(), &PolicyInit::default(), 1.0);
        assert!(pp.validate().is_ok());
        for s in [
            state(Vec3::new(10.0, 0.0, 30.0), Vec3::new(1.0, 2.0, 3.0)),
            state(Vec3::new(-700.0, 4.0, 1.0), Vec3::zeros()),
        ] {
            let g = mean(&s, &pp);
            assert_eq!((g.k_r, g.k_v, g.t_f), (6.0, -2.0, 80.0));
        }
        pp.theta_kr = vec![0.0, 1.0, 0.0, 0.0];
        let s = state(Vec3::new(10.0, 0.0, 30.0), Vec3::zeros());
        let phi = features(&s, &pp.rbf);
        assert_eq!(mean(&s, &pp).k_r, phi[1]);
    }

    #[test]
    fn tof_mean_is_clamped() {
        let mut pp = PolicyParams::warm_start(small_rbf(), &PolicyInit::default(), 2.0);
        let last = pp.dim() - 1;
        pp.theta_tf[last] = -50.0;
        assert_eq!(mean(&state(Vec3::zeros(), Vec3::zeros()), &pp).t_f, 2.0);
        pp.theta_tf[last] = 1e6;
        assert_eq!(mean(&state(Vec3::zeros(), Vec3::zeros()), &pp).t_f, 300.0);
    }

    #[test]
    fn zero_sigma_samples_the_mean() {
        let init = PolicyInit {
            sigma_gain: 0.0,
            sigma_tf: 0.0,
            ..Default::default()
        };
        let pp = PolicyParams::warm_start(small_rbf(), &init, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = sample(&state(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros()), &pp, &mut rng);
        assert_eq!(a.gains, GuidanceGains::classical(80.0));
        assert!(a.log_grad_kr.iter().chain(&a.log_grad_kv).chain(&a.log_grad_tf).all(|&g| g == 0.0));
    }

    #[test]
    fn log_grad_examples() {
        assert_eq!(log_prob_grad(1.5, 1.5, 0.3, &[1.0, 2.0]), vec![0.0, 0.0]);
        assert_eq!(log_prob_grad(3.0, 1.0, 2.0, &[1.0, 1.0]), vec![0.5, 0.5]);
        let sigma = 0.3;
        let g = log_prob_grad(2.0 + sigma, 2.0, sigma, &[0.0, 1.0, 0.0]);
        assert_relative_eq!(g[1], 1.0 / sigma, max_relative = 1e-12);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn sample_mean_converges() {
        let pp = PolicyParams::warm_start(small_rbf(), &PolicyInit::default(), 1.0);
        let s = state(Vec3::new(20.0, 0.0, 80.0), Vec3::new(0.0, 0.0, -5.0));
        let mu = mean(&s, &pp);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let (mut kr, mut kv, mut tf) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let a = sample(&s, &pp, &mut rng);
            kr += a.gains.k_r;
            kv += a.gains.k_v;
            tf += a.gains.t_f;
        }
        let nf = n as f64;
        let tol_gain = 4.0 * pp.sigma_gain / nf.sqrt();
        let tol_tf = 4.0 * pp.sigma_tf / nf.sqrt();
        assert!((kr / nf - mu.k_r).abs() < tol_gain);
        assert!((kv / nf - mu.k_v).abs() < tol_gain);
        assert!((tf / nf - mu.t_f).abs() < tol_tf);
    }

    #[test]
    fn document_round_trip_and_validation() {
        let pp = PolicyParams::warm_start(small_rbf(), &PolicyInit::default(), 1.0);
        let doc = PolicyDocument::new(pp, 42, Some(3));
        let back = PolicyDocument::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc);

        let mut bad = doc.clone();
        bad.version = 99;
        assert!(PolicyDocument::from_json(&serde_json::to_string(&bad).unwrap()).is_err());
        let mut short = doc;
        short.params.theta_kv.pop();
        assert!(PolicyDocument::from_json(&serde_json::to_string(&short).unwrap()).is_err());
    }
}
