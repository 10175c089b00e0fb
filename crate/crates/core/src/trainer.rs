//! Actor-critic training of the adaptive gain policy.
//!
//! One iteration: roll out a batch under the stochastic policy, fit the ELM
//! critic on Monte-Carlo returns, estimate the policy gradient from
//! advantages, take a descent step, and score the updated policy on a
//! held-out set of starts flown with mean actions.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critic::{self, FitOptions, InputScaler, ValueFitReport, ValueModel};
use crate::error::{Error, Result};
use crate::guidance::{generalized_accel, GuidanceGains, TargetState, ZemZevStrategy};
use crate::policy::{self, GridSpec, PolicyInit, PolicyParams, RbfConfig};
use crate::rng;
use crate::sim::{self, terrain_clearance, Environment, LanderState, SpacecraftParams, Vec3};

/// Cost weights: propellant, final position and velocity error, impact
/// distance, and the end-of-episode biases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub w_m: f64,
    pub w_r_f: f64,
    pub w_v_f: f64,
    pub w_r_i: f64,
    pub b_f: f64,
    pub b_i: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_m: 0.5,
            w_r_f: 1e-1,
            w_v_f: 1e-1,
            w_r_i: 5e-4,
            b_f: 10.0,
            b_i: 100.0,
        }
    }
}

impl CostWeights {
    pub fn zero() -> Self {
        Self {
            w_m: 0.0,
            w_r_f: 0.0,
            w_v_f: 0.0,
            w_r_i: 0.0,
            b_f: 0.0,
            b_i: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_i > self.b_f && self.b_f > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "biases must satisfy b_i > b_f > 0, got b_i = {}, b_f = {}",
                self.b_i, self.b_f
            )));
        }
        Ok(())
    }

    pub fn final_cost(&self, state: &LanderState, target: &TargetState) -> f64 {
        self.w_r_f * (state.r - target.r_f).norm_squared() + self.w_v_f * (state.v - target.v_f).norm_squared() + self.b_f
    }

    pub fn impact_cost(&self, state: &LanderState, target: &TargetState) -> f64 {
        self.w_r_i * (state.r - target.r_f).norm_squared() + self.b_i
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartDistribution {
    #[default]
    Uniform,
    /// Normal with standard deviation equal to half the bound.
    Gaussian,
}

/// Initial-state distribution around a nominal start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialDistribution {
    pub r: Vec3,
    pub v: Vec3,
    pub r_bounds: Vec3,
    pub v_bounds: Vec3,
    pub kind: StartDistribution,
}

impl InitialDistribution {
    pub fn mars_2d() -> Self {
        Self {
            r: Vec3::new(1500.0, 0.0, 1500.0),
            v: Vec3::new(100.0, 0.0, -60.0),
            r_bounds: Vec3::new(500.0, 0.0, 0.0),
            v_bounds: Vec3::new(5.0, 0.0, 5.0),
            kind: StartDistribution::Uniform,
        }
    }

    pub fn mars_3d() -> Self {
        Self {
            r: Vec3::new(-500.0, -1000.0, 1500.0),
            v: Vec3::new(100.0, -60.0, -60.0),
            r_bounds: Vec3::new(500.0, 500.0, 0.0),
            v_bounds: Vec3::new(5.0, 5.0, 5.0),
            kind: StartDistribution::Uniform,
        }
    }

    pub fn fixed(r: Vec3, v: Vec3) -> Self {
        Self {
            r,
            v,
            r_bounds: Vec3::zeros(),
            v_bounds: Vec3::zeros(),
            kind: StartDistribution::Uniform,
        }
    }

    pub fn nominal(&self, mass: f64) -> LanderState {
        LanderState::new(self.r, self.v, mass)
    }

    pub fn sample<R: Rng + ?Sized>(&self, mass: f64, rng: &mut R) -> LanderState {
        let kind = self.kind;
        let mut perturb = |centre: &Vec3, bound: &Vec3| {
            Vec3::from_fn(|k, _| {
                let b = bound[k];
                if b <= 0.0 {
                    return centre[k];
                }
                match kind {
                    StartDistribution::Uniform => centre[k] + rng.random_range(-b..=b),
                    StartDistribution::Gaussian => {
                        let z: f64 = rng.sample(StandardNormal);
                        centre[k] + 0.5 * b * z
                    }
                }
            })
        };
        let r = perturb(&self.r, &self.r_bounds);
        let v = perturb(&self.v, &self.v_bounds);
        LanderState::new(r, v, mass)
    }
}

impl Default for InitialDistribution {
    fn default() -> Self {
        Self::mars_2d()
    }
}

/// Everything needed to fly one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mission {
    pub spacecraft: SpacecraftParams,
    pub environment: Environment,
    pub target: TargetState,
    pub weights: CostWeights,
    pub strategy: ZemZevStrategy,
    pub n_steps: usize,
    pub slope_contact: SlopeContact,
}

/// What happens when the lander reaches the sloped terrain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeContact {
    /// End the episode at the contact point with the impact cost.
    #[default]
    Terminate,
    /// Flag the violation and keep flying through the terrain.
    Record,
}

impl Default for Mission {
    fn default() -> Self {
        Self {
            spacecraft: SpacecraftParams::default(),
            environment: Environment::default(),
            target: TargetState::default(),
            weights: CostWeights::default(),
            strategy: ZemZevStrategy::ConstantGravity,
            n_steps: 60,
            slope_contact: SlopeContact::Terminate,
        }
    }
}

impl Mission {
    pub fn validate(&self) -> Result<()> {
        self.spacecraft.validate()?;
        self.environment.validate()?;
        if self.n_steps < 1 {
            return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    FinalTime,
    /// Ground contact on the flat pad during the final control interval.
    Touchdown,
    /// Contact with the sloped terrain.
    Impact,
    FuelExhausted,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::FinalTime => "final_time",
            Termination::Touchdown => "touchdown",
            Termination::Impact => "impact",
            Termination::FuelExhausted => "fuel_exhausted",
        }
    }

    pub fn is_violation(self) -> bool {
        matches!(self, Termination::Impact | Termination::FuelExhausted)
    }
}

/// One control interval of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: LanderState,
    pub action: GuidanceGains,
    pub step_cost: f64,
    pub next_state: LanderState,
    pub log_grad_kr: Vec<f64>,
    pub log_grad_kv: Vec<f64>,
    pub t_go: f64,
    pub zem: Vec3,
    pub zev: Vec3,
    pub a_cmd: Vec3,
    pub thrust: Vec3,
}

impl Sample {
    /// A sample carrying only the transition and its cost.
    pub fn bare(state: LanderState, action: GuidanceGains, step_cost: f64, next_state: LanderState) -> Self {
        Self {
            state,
            action,
            step_cost,
            next_state,
            log_grad_kr: Vec::new(),
            log_grad_kv: Vec::new(),
            t_go: action.t_f - state.t,
            zem: Vec3::zeros(),
            zev: Vec3::zeros(),
            a_cmd: Vec3::zeros(),
            thrust: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub samples: Vec<Sample>,
    pub t_f_drawn: f64,
    pub log_grad_tf: Vec<f64>,
    pub terminated_by: Termination,
    pub terminal_cost: f64,
    pub cumulative_cost: f64,
    /// Set when the sloped terrain was reached, whether or not it ended the
    /// episode.
    pub slope_violation: bool,
}

impl EpisodeRecord {
    pub fn new(samples: Vec<Sample>, t_f_drawn: f64, terminated_by: Termination, terminal_cost: f64) -> Self {
        let cumulative_cost = samples.iter().map(|s| s.step_cost).sum::<f64>() + terminal_cost;
        Self {
            samples,
            t_f_drawn,
            log_grad_tf: Vec::new(),
            terminated_by,
            terminal_cost,
            cumulative_cost,
            slope_violation: terminated_by == Termination::Impact,
        }
    }

    pub fn violated(&self) -> bool {
        self.slope_violation || self.terminated_by.is_violation()
    }

    /// Per-transition costs with the terminal cost charged on the last one.
    pub fn transition_costs(&self) -> Vec<f64> {
        let mut costs: Vec<f64> = self.samples.iter().map(|s| s.step_cost).collect();
        if let Some(last) = costs.last_mut() {
            *last += self.terminal_cost;
        }
        costs
    }

    pub fn initial_state(&self) -> Option<&LanderState> {
        self.samples.first().map(|s| &s.state)
    }

    pub fn final_state(&self) -> Option<&LanderState> {
        self.samples.last().map(|s| &s.next_state)
    }

    pub fn mass_depleted(&self) -> f64 {
        match (self.initial_state(), self.final_state()) {
            (Some(a), Some(b)) => a.m - b.m,
            _ => 0.0,
        }
    }
}

/// Source of the gains applied during an episode.
#[derive(Debug, Clone, Copy)]
pub enum Actor<'a> {
    /// Draw from the policy (training).
    Explore(&'a PolicyParams),
    /// Apply the policy means.
    Mean(&'a PolicyParams),
    /// Constant gains and time of flight.
    Fixed(GuidanceGains),
}

/// Fly one closed-loop episode from `start`.
///
/// The time of flight is chosen once at `start` and `[0, T_f]` is divided into
/// `n_steps` equal intervals. At each interval the gains are drawn, the
/// generalized ZEM/ZEV command is held over the interval, and the propellant
/// burned is charged. Terrain contact or fuel exhaustion ends the episode
/// early; contact with the flat pad during the last interval is the landing
/// and is scored like arrival at the final time.
pub fn fly<R: Rng + ?Sized>(start: &LanderState, actor: Actor<'_>, mission: &Mission, rng: &mut R) -> Result<EpisodeRecord> {
    let sc = &mission.spacecraft;
    let env = &mission.environment;
    let target = &mission.target;
    let weights = &mission.weights;
    let (t_f, log_grad_tf) = match actor {
        Actor::Explore(pp) => policy::sample_tof(start, pp, rng),
        Actor::Mean(pp) => (policy::mean(start, pp).t_f, Vec::new()),
        Actor::Fixed(g) => (g.t_f, Vec::new()),
    };
    if !(t_f > 0.0 && t_f.is_finite()) {
        return Err(Error::InvalidParameter(format!("time of flight must be positive, got {t_f}")));
    }
    let n = mission.n_steps.max(1);
    let dt = t_f / n as f64;
    let mut state = *start;
    let mut samples = Vec::with_capacity(n);
    let mut ending = None;
    let mut slope_violation = false;
    let free_env = Environment {
        terrain_enabled: false,
        ..env.clone()
    };

    for k in 0..n {
        let t_go = (n - k) as f64 * dt;
        let (k_r, k_v, grad_kr, grad_kv) = match actor {
            Actor::Explore(pp) => {
                let d = policy::sample_gains(&state, pp, rng);
                (d.k_r, d.k_v, d.log_grad_kr, d.log_grad_kv)
            }
            Actor::Mean(pp) => {
                let g = policy::mean(&state, pp);
                (g.k_r, g.k_v, Vec::new(), Vec::new())
            }
            Actor::Fixed(g) => (g.k_r, g.k_v, Vec::new(), Vec::new()),
        };
        let gains = GuidanceGains::new(k_r, k_v, t_f);
        let zz = mission.strategy.compute(&state, target, t_go, sc, env)?;
        let a_cmd = generalized_accel(&zz, &gains, t_go, dt);
        // below the surface after a recorded contact: fly on until clear
        let buried = env.terrain_enabled && terrain_clearance(&state.r, env) < 0.0;
        let mut res = sim::step(&state, &a_cmd, dt, sc, if buried { &free_env } else { env })?;
        let mut on_pad = false;
        if res.terrain_violation {
            // arriving on the pad during the last interval is the landing itself
            on_pad = k + 1 == n && res.impact_point.is_some_and(|p| p.x.hypot(p.y) <= env.flat_radius);
            if !on_pad {
                slope_violation = true;
                if mission.slope_contact == SlopeContact::Record {
                    res = sim::step(&state, &a_cmd, dt, sc, &free_env)?;
                }
            }
        }
        let next = res.next_state;
        samples.push(Sample {
            state,
            action: gains,
            step_cost: weights.w_m * (state.m - next.m),
            next_state: next,
            log_grad_kr: grad_kr,
            log_grad_kv: grad_kv,
            t_go,
            zem: zz.zem,
            zev: zz.zev,
            a_cmd,
            thrust: res.applied_thrust,
        });
        state = next;
        if res.terrain_violation {
            ending = Some(if on_pad { Termination::Touchdown } else { Termination::Impact });
            break;
        }
        if res.fuel_exhausted {
            ending = Some(Termination::FuelExhausted);
            break;
        }
    }

    let terminated_by = ending.unwrap_or(Termination::FinalTime);
    let terminal_cost = match terminated_by {
        Termination::FinalTime | Termination::Touchdown => weights.final_cost(&state, target),
        Termination::Impact | Termination::FuelExhausted => weights.impact_cost(&state, target),
    };
    let mut record = EpisodeRecord::new(samples, t_f, terminated_by, terminal_cost);
    record.log_grad_tf = log_grad_tf;
    record.slope_violation |= slope_violation;
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RbfGrid {
    pub position: GridSpec,
    pub velocity: GridSpec,
}

impl Default for RbfGrid {
    fn default() -> Self {
        Self {
            position: GridSpec {
                lo: Vec3::new(-1000.0, -1000.0, 0.0),
                hi: Vec3::new(2000.0, 2000.0, 1600.0),
                counts: [5, 5, 5],
            },
            velocity: GridSpec {
                lo: Vec3::new(-150.0, -150.0, -150.0),
                hi: Vec3::new(150.0, 150.0, 150.0),
                counts: [5, 5, 5],
            },
        }
    }
}

impl RbfGrid {
    pub fn build(&self) -> RbfConfig {
        RbfConfig::from_grids(&self.position, &self.velocity)
    }

    /// Critic input normalization over the same envelope.
    pub fn scaler(&self) -> InputScaler {
        let (p, v) = (&self.position, &self.velocity);
        InputScaler::new(
            vec![p.lo.x, p.lo.y, p.lo.z, v.lo.x, v.lo.y, v.lo.z],
            vec![p.hi.x, p.hi.y, p.hi.z, v.hi.x, v.hi.y, v.hi.z],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_episodes_per_iter: usize,
    pub n_test_per_iter: usize,
    pub gamma: f64,
    /// Initial learning rate.
    pub alpha: f64,
    /// The rate decays as `alpha / (1 + iter / alpha_decay_iters)`.
    pub alpha_decay_iters: f64,
    pub epsilon_stop: f64,
    pub stop_window: usize,
    pub max_iters: usize,
    pub initial: InitialDistribution,
    pub seed: u64,
    pub policy: PolicyInit,
    pub rbf: RbfGrid,
    /// Critic hidden units; `None` applies the one-tenth-of-samples rule.
    pub critic_hidden: Option<usize>,
    pub critic_train_fraction: f64,
    /// Fit the critic on bootstrapped instead of Monte-Carlo targets.
    pub td_targets: bool,
    pub parallel: bool,
    pub max_resamples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_episodes_per_iter: 30,
            n_test_per_iter: 25,
            gamma: 0.99,
            alpha: 1e-5,
            alpha_decay_iters: 200.0,
            epsilon_stop: 0.5,
            stop_window: 5,
            max_iters: 500,
            initial: InitialDistribution::mars_2d(),
            seed: 0,
            policy: PolicyInit::default(),
            rbf: RbfGrid::default(),
            critic_hidden: None,
            critic_train_fraction: 0.8,
            td_targets: false,
            parallel: true,
            max_resamples: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, mission: &Mission) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter("alpha must be finite and non-negative".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidParameter("gamma must lie in (0, 1]".into()));
        }
        if mission.n_steps < 2 {
            return Err(Error::InvalidParameter("training needs n_steps >= 2".into()));
        }
        if self.n_episodes_per_iter == 0 {
            return Err(Error::InvalidParameter("n_episodes_per_iter must be positive".into()));
        }
        if !(self.alpha_decay_iters > 0.0) {
            return Err(Error::InvalidParameter("alpha_decay_iters must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, iter: usize) -> f64 {
        self.alpha / (1.0 + iter as f64 / self.alpha_decay_iters)
    }

    /// Warm-started policy for the given mission.
    pub fn initial_policy(&self, mission: &Mission) -> PolicyParams {
        let tf_min = 2.0 * self.policy.nominal_tf.min(self.policy.tf_max) / mission.n_steps.max(1) as f64;
        let tf_min = tf_min.min(0.5 * self.policy.tf_max);
        PolicyParams::warm_start(self.rbf.build(), &self.policy, tf_min)
    }
}

/// Fly an episode from a random start under the exploring policy.
pub fn rollout<R: Rng + ?Sized>(pp: &PolicyParams, cfg: &TrainConfig, mission: &Mission, rng: &mut R) -> Result<EpisodeRecord> {
    let start = cfg.initial.sample(mission.spacecraft.m_wet, rng);
    fly(&start, Actor::Explore(pp), mission, rng)
}

fn is_usable(ep: &EpisodeRecord) -> bool {
    ep.cumulative_cost.is_finite() && ep.samples.iter().all(|s| s.next_state.is_finite())
}

fn map_ordered<T: Send, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Training batch for `iter`; unusable episodes are redrawn from a fresh
/// stream. Returns the episodes and the number of redraws.
pub fn rollout_batch(pp: &PolicyParams, cfg: &TrainConfig, mission: &Mission, iter: usize) -> Result<(Vec<EpisodeRecord>, usize)> {
    let results = map_ordered(cfg.n_episodes_per_iter, cfg.parallel, |i| {
        let mut redraws = 0;
        loop {
            let mut rng = rng::stream(cfg.seed, &[rng::TAG_TRAIN, iter as u64, i as u64, redraws as u64]);
            match rollout(pp, cfg, mission, &mut rng) {
                Ok(ep) if is_usable(&ep) => return Ok((ep, redraws)),
                Ok(_) | Err(Error::NonFinite(_)) if redraws < cfg.max_resamples => redraws += 1,
                Ok(_) => return Err(Error::NonFinite("episode dynamics")),
                Err(e) => return Err(e),
            }
        }
    });
    let mut episodes = Vec::with_capacity(results.len());
    let mut total = 0;
    for r in results {
        let (ep, n) = r?;
        episodes.push(ep);
        total += n;
    }
    Ok((episodes, total))
}

/// Held-out start states, fixed for the whole run.
pub fn test_starts(cfg: &TrainConfig, mission: &Mission) -> Vec<LanderState> {
    (0..cfg.n_test_per_iter)
        .map(|j| {
            let mut rng = rng::stream(cfg.seed, &[rng::TAG_TEST, j as u64]);
            cfg.initial.sample(mission.spacecraft.m_wet, &mut rng)
        })
        .collect()
}

/// Fly the policy means from each start.
pub fn evaluate_starts(pp: &PolicyParams, starts: &[LanderState], mission: &Mission, parallel: bool) -> Result<Vec<EpisodeRecord>> {
    map_ordered(starts.len(), parallel, |j| {
        // mean actions never draw from the stream
        let mut rng = rng::stream(0, &[j as u64]);
        fly(&starts[j], Actor::Mean(pp), mission, &mut rng)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub kr: Vec<f64>,
    pub kv: Vec<f64>,
    pub tf: Vec<f64>,
}

impl PolicyGradient {
    pub fn zeros(dim: usize) -> Self {
        Self {
            kr: vec![0.0; dim],
            kv: vec![0.0; dim],
            tf: vec![0.0; dim],
        }
    }

    pub fn norm(&self) -> f64 {
        self.kr.iter().chain(&self.kv).chain(&self.tf).map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.kr.iter().chain(&self.kv).chain(&self.tf).all(|g| g.is_finite())
    }
}

fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

/// Batch-averaged score-function gradient of the expected cost.
///
/// Each gain log-gradient is weighted by its step's Monte-Carlo advantage;
/// the single time-of-flight draw is weighted by the advantage at the first
/// step.
pub fn estimate_gradient(batch: &[EpisodeRecord], model: &ValueModel, gamma: f64) -> Result<PolicyGradient> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let dim = batch
        .iter()
        .flat_map(|ep| ep.samples.iter().map(|s| s.log_grad_kr.len()).chain([ep.log_grad_tf.len()]))
        .max()
        .unwrap_or(0);
    let mut grad = PolicyGradient::zeros(dim);
    for ep in batch {
        let adv = critic::advantages_mc(ep, model, gamma);
        for (s, a) in ep.samples.iter().zip(&adv) {
            axpy(&mut grad.kr, *a, &s.log_grad_kr);
            axpy(&mut grad.kv, *a, &s.log_grad_kv);
        }
        if let Some(a0) = adv.first() {
            axpy(&mut grad.tf, *a0, &ep.log_grad_tf);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for g in grad.kr.iter_mut().chain(grad.kv.iter_mut()).chain(grad.tf.iter_mut()) {
        *g *= inv;
    }
    Ok(grad)
}

/// `θ ← θ − α ∇` on each weight vector.
pub fn update(pp: &PolicyParams, grad: &PolicyGradient, alpha: f64) -> Result<PolicyParams> {
    if !grad.is_finite() {
        return Err(Error::NonFinite("policy gradient"));
    }
    let dim = pp.dim();
    if [grad.kr.len(), grad.kv.len(), grad.tf.len()].iter().any(|&n| n != dim && n != 0) {
        return Err(Error::InvalidParameter("gradient dimension mismatch".into()));
    }
    let step = |theta: &[f64], g: &[f64]| -> Vec<f64> {
        if g.is_empty() {
            return theta.to_vec();
        }
        theta.iter().zip(g).map(|(t, d)| t - alpha * d).collect()
    };
    Ok(PolicyParams {
        theta_kr: step(&pp.theta_kr, &grad.kr),
        theta_kv: step(&pp.theta_kv, &grad.kv),
        theta_tf: step(&pp.theta_tf, &grad.tf),
        ..pp.clone()
    })
}

/// Surrogate `(1/N) Σ Σ log π(u|x) Â` with advantages held fixed.
pub fn surrogate_objective(pp: &PolicyParams, batch: &[EpisodeRecord], advantages: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (ep, adv) in batch.iter().zip(advantages) {
        for (s, a) in ep.samples.iter().zip(adv) {
            let phi = policy::features(&s.state, &pp.rbf);
            let mu_kr: f64 = phi.iter().zip(&pp.theta_kr).map(|(p, t)| p * t).sum();
            let mu_kv: f64 = phi.iter().zip(&pp.theta_kv).map(|(p, t)| p * t).sum();
            total += a * (policy::log_prob(s.action.k_r, mu_kr, pp.sigma_gain)
                + policy::log_prob(s.action.k_v, mu_kv, pp.sigma_gain));
        }
        if let (Some(first), Some(a0)) = (ep.samples.first(), adv.first()) {
            let phi = policy::features(&first.state, &pp.rbf);
            let mu_tf: f64 = phi.iter().zip(&pp.theta_tf).map(|(p, t)| p * t).sum();
            total += a0 * policy::log_prob(ep.t_f_drawn, mu_tf, pp.sigma_tf);
        }
    }
    total / batch.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub mean_train_cost: f64,
    pub min_train_cost: f64,
    pub max_train_cost: f64,
    pub mean_test_cost: f64,
    pub violation_frac: f64,
    pub train_violation_frac: f64,
    pub critic: ValueFitReport,
    pub grad_norm: f64,
    pub alpha: f64,
    pub resampled: usize,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Converged,
    MaxIters,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyParams,
    pub logs: Vec<IterationLog>,
    pub stop: StopReason,
}

fn violation_fraction(episodes: &[EpisodeRecord]) -> f64 {
    if episodes.is_empty() {
        return 0.0;
    }
    episodes.iter().filter(|e| e.violated()).count() as f64 / episodes.len() as f64
}

fn mean_cost(episodes: &[EpisodeRecord]) -> f64 {
    if episodes.is_empty() {
        return f64::NAN;
    }
    episodes.iter().map(|e| e.cumulative_cost).sum::<f64>() / episodes.len() as f64
}

/// True once the mean absolute change of the test cost over the last
/// `window` iterations falls below `epsilon`.
pub fn should_stop(history: &[f64], window: usize, epsilon: f64) -> bool {
    if window == 0 || history.len() <= window {
        return false;
    }
    let tail = &history[history.len() - window - 1..];
    let mean_change = tail.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / window as f64;
    mean_change < epsilon
}

/// One full iteration starting from `pp`.
pub fn iterate(
    pp: &PolicyParams,
    cfg: &TrainConfig,
    mission: &Mission,
    iter: usize,
    starts: &[LanderState],
) -> Result<(PolicyParams, IterationLog)> {
    let clock = Instant::now();
    let (batch, resampled) = rollout_batch(pp, cfg, mission, iter)?;

    let pairs = critic::build_targets_mc(&batch, cfg.gamma)?;
    let (inputs, targets) = critic::split_targets(&pairs);
    let opts = FitOptions {
        hidden: cfg.critic_hidden,
        train_fraction: cfg.critic_train_fraction,
        scaler: Some(cfg.rbf.scaler()),
        ..Default::default()
    };
    let mut critic_rng: ChaCha8Rng = rng::stream(cfg.seed, &[rng::TAG_CRITIC, iter as u64]);
    let (mut model, mut report) = critic::fit(&inputs, &targets, &opts, &mut critic_rng)?;
    if cfg.td_targets {
        let pairs = critic::build_targets_td(&batch, &model, cfg.gamma)?;
        let (inputs, targets) = critic::split_targets(&pairs);
        (model, report) = critic::fit(&inputs, &targets, &opts, &mut critic_rng)?;
    }

    let grad = estimate_gradient(&batch, &model, cfg.gamma)?;
    let alpha = cfg.learning_rate(iter);
    let next = update(pp, &grad, alpha)?;

    let test = evaluate_starts(&next, starts, mission, cfg.parallel)?;
    let costs: Vec<f64> = batch.iter().map(|e| e.cumulative_cost).collect();
    let log = IterationLog {
        iter,
        mean_train_cost: mean_cost(&batch),
        min_train_cost: costs.iter().copied().fold(f64::INFINITY, f64::min),
        max_train_cost: costs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_test_cost: mean_cost(&test),
        violation_frac: violation_fraction(&test),
        train_violation_frac: violation_fraction(&batch),
        critic: report,
        grad_norm: grad.norm(),
        alpha,
        resampled,
        wall_s: clock.elapsed().as_secs_f64(),
    };
    Ok((next, log))
}

/// Train from the warm start, calling `observer` after every iteration.
pub fn train_with<F>(cfg: &TrainConfig, mission: &Mission, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(&IterationLog, &PolicyParams) -> Result<()>,
{
    mission.validate()?;
    cfg.validate(mission)?;
    let starts = test_starts(cfg, mission);
    let mut pp = cfg.initial_policy(mission);
    let mut logs: Vec<IterationLog> = Vec::new();
    let mut history = Vec::new();
    for iter in 0..cfg.max_iters {
        let (next, log) = match iterate(&pp, cfg, mission, iter, &starts) {
            Ok(v) => v,
            Err(e) => {
                return Ok(TrainOutcome {
                    policy: pp,
                    logs,
                    stop: StopReason::Failed(format!("iteration {iter}: {e}")),
                })
            }
        };
        pp = next;
        history.push(log.mean_test_cost);
        if let Err(e) = observer(&log, &pp) {
            logs.push(log);
            return Ok(TrainOutcome {
                policy: pp,
                logs,
                stop: StopReason::Failed(format!("iteration {iter}: {e}")),
            });
        }
        logs.push(log);
        if should_stop(&history, cfg.stop_window, cfg.epsilon_stop) {
            return Ok(TrainOutcome {
                policy: pp,
                logs,
                stop: StopReason::Converged,
            });
        }
    }
    Ok(TrainOutcome {
        policy: pp,
        logs,
        stop: StopReason::MaxIters,
    })
}

pub fn train(cfg: &TrainConfig, mission: &Mission) -> Result<TrainOutcome> {
    train_with(cfg, mission, |_, _| Ok(()))
}

/// Outcome of one Monte-Carlo trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub r0: Vec3,
    pub v0: Vec3,
    pub r_final: Vec3,
    pub v_final: Vec3,
    pub position_error: f64,
    pub velocity_error: f64,
    pub mass_depleted: f64,
    pub violation: bool,
    pub min_clearance: f64,
    pub tof: f64,
    pub terminated_by: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl Percentiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let pick = |q: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let idx = ((v.len() - 1) as f64 * q).round() as usize;
            v[idx]
        };
        Self {
            p50: pick(0.5),
            p95: pick(0.95),
            max: v.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub trials: Vec<Trial>,
    pub violations: usize,
    pub position_error: Percentiles,
    pub velocity_error: Percentiles,
    pub mass_depleted: Percentiles,
}

pub fn trial_from_episode(trial: usize, ep: &EpisodeRecord, mission: &Mission) -> Trial {
    let start = ep.initial_state().copied().unwrap_or_else(|| LanderState::new(Vec3::zeros(), Vec3::zeros(), 0.0));
    let end = ep.final_state().copied().unwrap_or(start);
    let min_clearance = ep
        .samples
        .iter()
        .map(|s| terrain_clearance(&s.next_state.r, &mission.environment))
        .fold(terrain_clearance(&start.r, &mission.environment), f64::min);
    Trial {
        trial,
        r0: start.r,
        v0: start.v,
        r_final: end.r,
        v_final: end.v,
        position_error: (end.r - mission.target.r_f).norm(),
        velocity_error: (end.v - mission.target.v_f).norm(),
        mass_depleted: ep.mass_depleted(),
        violation: ep.violated(),
        min_clearance,
        tof: ep.t_f_drawn,
        terminated_by: ep.terminated_by,
    }
}

/// Monte-Carlo dispersion analysis with mean actions from dispersed starts.
pub fn evaluate(
    pp: &PolicyParams,
    n_trials: usize,
    dispersion: &InitialDistribution,
    mission: &Mission,
    seed: u64,
    parallel: bool,
) -> Result<MonteCarloReport> {
    let starts: Vec<LanderState> = (0..n_trials)
        .map(|i| {
            let mut rng = rng::stream(seed, &[rng::TAG_TRIAL, i as u64]);
            dispersion.sample(mission.spacecraft.m_wet, &mut rng)
        })
        .collect();
    let episodes = evaluate_starts(pp, &starts, mission, parallel)?;
    let trials: Vec<Trial> = episodes
        .iter()
        .enumerate()
        .map(|(i, ep)| trial_from_episode(i, ep, mission))
        .collect();
    let pick = |f: fn(&Trial) -> f64| Percentiles::of(&trials.iter().map(f).collect::<Vec<_>>());
    Ok(MonteCarloReport {
        violations: trials.iter().filter(|t| t.violation).count(),
        position_error: pick(|t| t.position_error),
        velocity_error: pick(|t| t.velocity_error),
        mass_depleted: pick(|t| t.mass_depleted),
        trials,
    })
}
