use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use azem_core::guidance::GuidanceGains;
use azem_core::policy::{PolicyDocument, PolicyParams};
use azem_core::records::{
    self, ComparisonRow, StabilityCsvRow, TimingRow, TrainingLogRow, TrajectoryRow, TrialRow, COMPARISON_HEADER,
    STABILITY_HEADER, TRAINING_LOG_HEADER, TRAJECTORY_HEADER, TRIAL_HEADER,
};
use azem_core::rng;
use azem_core::scenario::{GuidanceMode, ScenarioConfig};
use azem_core::sim::terrain_clearance;
use azem_core::stability;
use azem_core::trainer::{self, Actor, EpisodeRecord, Mission, Percentiles, SlopeContact, StopReason, Trial};
use azem_core::{EnergyOptimalArc, Environment, Vec3};

use crate::output::OutputDir;
use crate::plot::{self, Figure, Series};

/// Exit status for a run that finished but tripped a `--strict` check.
pub const STRICT_FAILURE: u8 = 2;

pub struct Session {
    pub cfg: ScenarioConfig,
    pub config_json: String,
    pub out: OutputDir,
    pub plots: bool,
    pub strict: bool,
}

impl Session {
    pub fn open(config: Option<&Path>, seed: Option<u64>, out: &Path, plots: bool, strict: bool) -> Result<Self> {
        let mut cfg = match config {
            Some(path) => ScenarioConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
            None => ScenarioConfig::mars_2d(),
        };
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.validate().context("invalid config")?;
        let config_json = cfg.to_json()?;
        let mut out = OutputDir::create(out)?;
        out.write_bytes("config.json", format!("{config_json}\n").as_bytes())?;
        Ok(Self {
            cfg,
            config_json,
            out,
            plots,
            strict,
        })
    }

    fn finish(&self, command: &str, status: &str) -> Result<()> {
        self.out.finish(command, self.cfg.seed, &self.config_json, status)?;
        Ok(())
    }

    fn figure(&mut self, name: &str, fig: Figure, series: &[Series], scatter: bool) -> Result<()> {
        if !self.plots {
            return Ok(());
        }
        let path = self.out.path(name);
        if scatter {
            plot::scatter(&path, &fig, series)?;
        } else {
            plot::lines(&path, &fig, series)?;
        }
        self.out.register(name);
        Ok(())
    }

    fn strict_code(&self, failed: bool) -> u8 {
        if self.strict && failed {
            STRICT_FAILURE
        } else {
            0
        }
    }
}

/// Fixed gains or a policy evaluated at its mean.
pub enum Guide {
    Fixed(GuidanceGains),
    Policy(PolicyParams),
}

impl Guide {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        if let Some(gains) = cfg.fixed_gains() {
            return Ok(Guide::Fixed(gains));
        }
        let doc = cfg.load_policy().context("loading policy")?;
        match doc {
            Some(doc) => Ok(Guide::Policy(doc.params)),
            None => bail!("scenario has no guidance"),
        }
    }

    pub fn actor(&self) -> Actor<'_> {
        match self {
            Guide::Fixed(g) => Actor::Fixed(*g),
            Guide::Policy(pp) => Actor::Mean(pp),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Guide::Fixed(g) if g.k_r == 6.0 && g.k_v == -2.0 => "classical",
            Guide::Fixed(_) => "generalized_fixed",
            Guide::Policy(_) => "adaptive_policy",
        }
    }
}

fn load_policy_file(path: &Path) -> Result<PolicyParams> {
    let doc = PolicyDocument::load(path).with_context(|| format!("loading policy {}", path.display()))?;
    Ok(doc.params)
}

fn fly_nominal(cfg: &ScenarioConfig, mission: &Mission, guide: &Guide) -> Result<EpisodeRecord> {
    let mut rng = rng::stream(cfg.seed, &[rng::TAG_SIM]);
    Ok(trainer::fly(&cfg.nominal_start(), guide.actor(), mission, &mut rng)?)
}

fn horizontal(x: f64, y: f64) -> f64 {
    x.hypot(y)
}

/// Terrain height against horizontal distance from the origin.
fn terrain_profile(env: &Environment, reach: f64) -> Vec<(f64, f64)> {
    (0..=100)
        .map(|i| {
            let rho = reach * i as f64 / 100.0;
            (rho, -terrain_clearance(&Vec3::new(rho, 0.0, 0.0), env))
        })
        .collect()
}

fn series_with_terrain(mut series: Vec<Series>, env: &Environment, terrain: Vec<(f64, f64)>) -> Vec<Series> {
    if env.terrain_enabled {
        series.push(Series::new("terrain", terrain));
    }
    series
}

fn trajectory_figures(s: &mut Session, rows: &[TrajectoryRow], prefix: &str) -> Result<()> {
    if !s.plots || rows.is_empty() {
        return Ok(());
    }
    let env = s.cfg.environment.clone();
    let path: Vec<(f64, f64)> = rows.iter().map(|r| (horizontal(r.rx, r.ry), r.rz)).collect();
    let reach = path.iter().map(|p| p.0).fold(env.flat_radius, f64::max);
    let terrain = terrain_profile(&env, reach);
    s.figure(
        &format!("{prefix}trajectory.svg"),
        Figure {
            title: "Descent profile",
            x_label: "horizontal distance, m",
            y_label: "altitude, m",
        },
        &series_with_terrain(vec![Series::new("trajectory", path)], &env, terrain),
        false,
    )?;
    let against_t = |f: fn(&TrajectoryRow) -> f64| rows.iter().map(|r| (r.t, f(r))).collect::<Vec<_>>();
    s.figure(
        &format!("{prefix}position.svg"),
        Figure {
            title: "Position",
            x_label: "t, s",
            y_label: "m",
        },
        &[
            Series::new("x", against_t(|r| r.rx)),
            Series::new("y", against_t(|r| r.ry)),
            Series::new("z", against_t(|r| r.rz)),
        ],
        false,
    )?;
    s.figure(
        &format!("{prefix}velocity.svg"),
        Figure {
            title: "Velocity",
            x_label: "t, s",
            y_label: "m/s",
        },
        &[
            Series::new("vx", against_t(|r| r.vx)),
            Series::new("vy", against_t(|r| r.vy)),
            Series::new("vz", against_t(|r| r.vz)),
        ],
        false,
    )?;
    let thrust: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.t, r.thrust?))).collect();
    s.figure(
        &format!("{prefix}thrust.svg"),
        Figure {
            title: "Thrust magnitude",
            x_label: "t, s",
            y_label: "N",
        },
        &[Series::new("|T|", thrust)],
        false,
    )?;
    s.figure(
        &format!("{prefix}mass.svg"),
        Figure {
            title: "Mass",
            x_label: "t, s",
            y_label: "kg",
        },
        &[Series::new("m", against_t(|r| r.m))],
        false,
    )
}

fn describe(trial: &Trial) -> String {
    format!(
        "{}: tof {:.2} s, |dr| {:.4} m, |dv| {:.4} m/s, propellant {:.2} kg, min clearance {:.2} m, violation {}",
        trial.terminated_by.as_str(),
        trial.tof,
        trial.position_error,
        trial.velocity_error,
        trial.mass_depleted,
        trial.min_clearance,
        trial.violation
    )
}

pub struct SimulateArgs {
    pub stop_on_impact: bool,
}

pub fn simulate(s: &mut Session, args: &SimulateArgs) -> Result<u8> {
    let guide = Guide::from_config(&s.cfg)?;
    let mut mission = s.cfg.mission();
    if !args.stop_on_impact {
        mission.slope_contact = SlopeContact::Record;
    }
    let ep = fly_nominal(&s.cfg, &mission, &guide)?;
    let rows = records::trajectory_rows(&ep, &mission.environment);
    s.out.write_csv("trajectory.csv", TRAJECTORY_HEADER, &rows)?;
    let trial = trainer::trial_from_episode(0, &ep, &mission);
    s.out.write_csv("summary.csv", TRIAL_HEADER, &[TrialRow::from(&trial)])?;
    trajectory_figures(s, &rows, "")?;
    println!("simulate [{}] {} steps, {}", guide.label(), ep.samples.len(), describe(&trial));
    if trial.violation {
        println!("glide-slope constraint violated");
    }
    s.finish("simulate", "ok")?;
    Ok(s.strict_code(trial.violation))
}

pub struct TrainArgs {
    pub iters: Option<usize>,
    pub episodes: Option<usize>,
}

pub fn train(s: &mut Session, args: &TrainArgs) -> Result<u8> {
    let mission = s.cfg.mission();
    let mut tc = s.cfg.train_config();
    if let Some(n) = args.iters {
        tc.max_iters = n;
    }
    if let Some(n) = args.episodes {
        tc.n_episodes_per_iter = n;
    }
    let seed = tc.seed;
    let every = s.cfg.checkpoint_every;
    let mut last_checkpoint = None;
    let out = &mut s.out;
    let outcome = trainer::train_with(&tc, &mission, |log, pp| {
        println!(
            "iter {:>4}  train {:>9.3}  test {:>9.3}  viol {:.2}  critic nrmse {:.3}  |grad| {:.3e}  {:.2} s",
            log.iter,
            log.mean_train_cost,
            log.mean_test_cost,
            log.violation_frac,
            log.critic.test_nrmse,
            log.grad_norm,
            log.wall_s
        );
        let done = log.iter + 1;
        if every > 0 && done % every == 0 {
            save_checkpoint(out, pp, seed, done).map_err(|e| azem_core::Error::InvalidState(format!("{e:#}")))?;
            last_checkpoint = Some(done);
        }
        Ok(())
    })?;

    let done = outcome.logs.len();
    if done > 0 && last_checkpoint != Some(done) {
        save_checkpoint(&mut s.out, &outcome.policy, seed, done)?;
    }
    let log_rows: Vec<TrainingLogRow> = outcome.logs.iter().map(TrainingLogRow::from).collect();
    s.out.write_csv("training_log.csv", TRAINING_LOG_HEADER, &log_rows)?;
    let timing: Vec<TimingRow> = outcome
        .logs
        .iter()
        .map(|l| TimingRow {
            iter: l.iter,
            wall_s: l.wall_s,
        })
        .collect();
    s.out.write_json("timing.json", &timing)?;
    s.out.mark_volatile("timing.json");
    let doc = PolicyDocument::new(outcome.policy.clone(), seed, Some(done));
    s.out.write_bytes("policy.json", format!("{}\n", doc.to_json()?).as_bytes())?;
    let series = |f: fn(&TrainingLogRow) -> f64| log_rows.iter().map(|r| (r.iter as f64, f(r))).collect::<Vec<_>>();
    if !log_rows.is_empty() {
        s.figure(
            "training_cost.svg",
            Figure {
                title: "Training cost",
                x_label: "iteration",
                y_label: "cost",
            },
            &[
                Series::new("train mean", series(|r| r.mean_train_cost)),
                Series::new("test mean", series(|r| r.mean_test_cost)),
            ],
            false,
        )?;
    }

    let total: f64 = outcome.logs.iter().map(|l| l.wall_s).sum();
    match &outcome.stop {
        StopReason::Failed(msg) => {
            s.finish("train", "failed")?;
            bail!("training stopped after {done} iterations: {msg} (partial outputs kept)");
        }
        StopReason::Converged => println!("converged after {done} iterations in {total:.1} s"),
        StopReason::MaxIters => println!("reached {done} iterations in {total:.1} s"),
    }
    s.finish("train", "ok")?;
    Ok(0)
}

fn save_checkpoint(out: &mut OutputDir, pp: &PolicyParams, seed: u64, iteration: usize) -> Result<()> {
    let doc = PolicyDocument::new(pp.clone(), seed, Some(iteration));
    out.write_bytes(
        &format!("checkpoints/policy_{iteration:04}.json"),
        format!("{}\n", doc.to_json()?).as_bytes(),
    )?;
    Ok(())
}

pub struct MonteCarloArgs {
    pub policy: Option<PathBuf>,
    pub trials: Option<usize>,
    pub flat: bool,
}

#[derive(Debug, Serialize)]
struct MonteCarloSummary {
    policy: String,
    n_trials: usize,
    violations: usize,
    /// Fraction of trials within 1 m and 0.1 m/s of the target.
    within_tolerance: f64,
    position_error: Percentiles,
    velocity_error: Percentiles,
    mass_depleted: Percentiles,
}

pub fn montecarlo(s: &mut Session, args: &MonteCarloArgs) -> Result<u8> {
    let mut mission = s.cfg.mission();
    if args.flat {
        mission.environment.terrain_enabled = false;
    }
    let (pp, source) = match (&args.policy, &s.cfg.guidance) {
        (Some(path), _) => (load_policy_file(path)?, path.display().to_string()),
        (None, GuidanceMode::AdaptivePolicy { policy }) => (load_policy_file(policy)?, policy.display().to_string()),
        (None, _) => (s.cfg.train_config().initial_policy(&mission), "warm_start".to_string()),
    };
    let n = args.trials.unwrap_or(s.cfg.n_trials);
    let report = trainer::evaluate(&pp, n, &s.cfg.initial, &mission, s.cfg.seed, s.cfg.train.parallel)?;
    let rows: Vec<TrialRow> = report.trials.iter().map(TrialRow::from).collect();
    s.out.write_csv("trials.csv", TRIAL_HEADER, &rows)?;
    let within = report
        .trials
        .iter()
        .filter(|t| t.position_error < 1.0 && t.velocity_error < 0.1)
        .count();
    let summary = MonteCarloSummary {
        policy: source,
        n_trials: n,
        violations: report.violations,
        within_tolerance: if n > 0 { within as f64 / n as f64 } else { 0.0 },
        position_error: report.position_error,
        velocity_error: report.velocity_error,
        mass_depleted: report.mass_depleted,
    };
    s.out.write_json("summary.json", &summary)?;
    if !rows.is_empty() {
        s.figure(
            "landing_scatter.svg",
            Figure {
                title: "Final position",
                x_label: "x, m",
                y_label: "y, m",
            },
            &[Series::new("trials", rows.iter().map(|r| (r.rf_x, r.rf_y)).collect())],
            true,
        )?;
        s.figure(
            "final_velocity.svg",
            Figure {
                title: "Final velocity",
                x_label: "horizontal speed, m/s",
                y_label: "vertical velocity, m/s",
            },
            &[Series::new("trials", rows.iter().map(|r| (horizontal(r.vf_x, r.vf_y), r.vf_z)).collect())],
            true,
        )?;
    }
    println!(
        "montecarlo: {n} trials, {} violations, {:.1}% within 1 m / 0.1 m/s, |dr| p50 {:.4} max {:.4} m, |dv| p50 {:.4} max {:.4} m/s",
        report.violations,
        100.0 * summary.within_tolerance,
        report.position_error.p50,
        report.position_error.max,
        report.velocity_error.p50,
        report.velocity_error.max
    );
    s.finish("montecarlo", "ok")?;
    Ok(s.strict_code(report.violations > 0))
}

pub struct CompareArgs {
    pub policy: Option<PathBuf>,
}

/// Propellant and flight time for the adaptive, classical and unconstrained
/// energy-optimal solutions of the nominal 2D and 3D problems, as published.
const REFERENCE_2D: [(&str, f64, f64); 3] = [
    ("adaptive", 382.75, 84.1),
    ("classical", 385.51, 84.1),
    ("fuel_optimal", 352.59, 64.7),
];
const REFERENCE_3D: [(&str, f64, f64); 3] = [
    ("adaptive", 376.54, 84.1),
    ("classical", 378.81, 84.1),
    ("fuel_optimal", 357.25, 64.8),
];

fn row_from(label: &str, ep: &EpisodeRecord, mission: &Mission) -> ComparisonRow {
    let trial = trainer::trial_from_episode(0, ep, mission);
    ComparisonRow {
        algorithm: label.to_string(),
        mass_depleted: trial.mass_depleted,
        tof: trial.tof,
        position_error: trial.position_error,
        velocity_error: trial.velocity_error,
        violation: trial.violation,
    }
}

pub fn compare(s: &mut Session, args: &CompareArgs) -> Result<u8> {
    let pp = match (&args.policy, &s.cfg.guidance) {
        (Some(path), _) => load_policy_file(path)?,
        (None, GuidanceMode::AdaptivePolicy { policy }) => load_policy_file(policy)?,
        (None, _) => bail!("compare needs --policy or an adaptive_policy scenario"),
    };
    let mut mission = s.cfg.mission();
    mission.slope_contact = SlopeContact::Record;
    let start = s.cfg.nominal_start();
    let adaptive = fly_nominal(&s.cfg, &mission, &Guide::Policy(pp.clone()))?;
    let tof = adaptive.t_f_drawn;
    let classical = fly_nominal(&s.cfg, &mission, &Guide::Fixed(GuidanceGains::classical(tof)))?;

    let arc = EnergyOptimalArc::new(&start, &mission.target, tof, &mission.environment.g)?;
    let end_r = arc.position(tof);
    let end_v = arc.velocity(tof);
    let optimal = ComparisonRow {
        algorithm: "energy_optimal".into(),
        mass_depleted: arc.mass_depleted(&mission.spacecraft),
        tof,
        position_error: (end_r - mission.target.r_f).norm(),
        velocity_error: (end_v - mission.target.v_f).norm(),
        violation: mission.environment.terrain_enabled && arc.min_clearance(&mission.environment, 2000) < 0.0,
    };

    let rows = vec![
        row_from("adaptive", &adaptive, &mission),
        row_from("classical", &classical, &mission),
        optimal,
    ];
    let max_prop = mission.spacecraft.m_wet - mission.spacecraft.m_dry;
    for r in &rows {
        r.validate(max_prop)?;
    }
    s.out.write_csv("comparison.csv", COMPARISON_HEADER, &rows)?;
    let env = &mission.environment;
    let traj_a = records::trajectory_rows(&adaptive, env);
    let traj_c = records::trajectory_rows(&classical, env);
    s.out.write_csv("trajectory_adaptive.csv", TRAJECTORY_HEADER, &traj_a)?;
    s.out.write_csv("trajectory_classical.csv", TRAJECTORY_HEADER, &traj_c)?;
    if s.plots {
        let profile = |rows: &[TrajectoryRow]| rows.iter().map(|r| (horizontal(r.rx, r.ry), r.rz)).collect();
        let arc_profile: Vec<(f64, f64)> = (0..=200)
            .map(|i| {
                let p = arc.position(tof * i as f64 / 200.0);
                (horizontal(p.x, p.y), p.z)
            })
            .collect();
        let reach = horizontal(start.r.x, start.r.y).max(env.flat_radius);
        let terrain = terrain_profile(env, reach);
        s.figure(
            "comparison_profile.svg",
            Figure {
                title: "Descent profiles",
                x_label: "horizontal distance, m",
                y_label: "altitude, m",
            },
            &series_with_terrain(
                vec![
                    Series::new("adaptive", profile(&traj_a)),
                    Series::new("classical", profile(&traj_c)),
                    Series::new("energy optimal", arc_profile),
                ],
                env,
                terrain,
            ),
            false,
        )?;
    }

    println!("{:<16} {:>12} {:>8} {:>12} {:>12} {:>9}", "algorithm", "propellant kg", "tof s", "|dr| m", "|dv| m/s", "violation");
    for r in &rows {
        println!(
            "{:<16} {:>12.2} {:>8.2} {:>12.4} {:>12.4} {:>9}",
            r.algorithm, r.mass_depleted, r.tof, r.position_error, r.velocity_error, r.violation
        );
    }
    let planar = s.cfg.initial.r.y == 0.0 && s.cfg.initial.v.y == 0.0 && s.cfg.initial.r_bounds.y == 0.0;
    let reference = if planar { &REFERENCE_2D } else { &REFERENCE_3D };
    println!("reference values for the nominal {} problem:", if planar { "2D" } else { "3D" });
    for (name, mass, tof) in reference {
        println!("{:<16} {:>12.2} {:>8.1}", name, mass, tof);
    }
    s.finish("compare", "ok")?;
    Ok(s.strict_code(rows[0].violation))
}

pub struct StabilityArgs {
    pub trajectory: Option<PathBuf>,
}

pub fn stability(s: &mut Session, args: &StabilityArgs) -> Result<u8> {
    let rows: Vec<TrajectoryRow> = match &args.trajectory {
        Some(path) => records::load_csv(path).with_context(|| format!("reading trajectory {}", path.display()))?,
        None => {
            let guide = Guide::from_config(&s.cfg)?;
            let mut mission = s.cfg.mission();
            mission.slope_contact = SlopeContact::Record;
            let ep = fly_nominal(&s.cfg, &mission, &guide)?;
            records::trajectory_rows(&ep, &mission.environment)
        }
    };
    let history = records::gain_history(&rows);
    let report = stability::trajectory_report(&history);
    let csv_rows: Vec<StabilityCsvRow> = records::stability_rows(&report);
    s.out.write_csv("stability.csv", STABILITY_HEADER, &csv_rows)?;
    if !csv_rows.is_empty() {
        let pts = |f: fn(&StabilityCsvRow) -> f64| csv_rows.iter().map(|r| (r.t, f(r))).collect::<Vec<_>>();
        s.figure(
            "eigenvalues.svg",
            Figure {
                title: "Closed-loop eigenvalues",
                x_label: "t, s",
                y_label: "Re(lambda)",
            },
            &[
                Series::new("Re lambda1", pts(|r| r.re_lambda1)),
                Series::new("Re lambda2", pts(|r| r.re_lambda2)),
            ],
            false,
        )?;
        s.figure(
            "stm.svg",
            Figure {
                title: "State transition matrix",
                x_label: "t, s",
                y_label: "component",
            },
            &[
                Series::new("phi11", pts(|r| r.phi11)),
                Series::new("phi12", pts(|r| r.phi12)),
                Series::new("phi21", pts(|r| r.phi21)),
                Series::new("phi22", pts(|r| r.phi22)),
            ],
            false,
        )?;
    }
    println!(
        "stability: {} steps, {} unstable, {} marginal, max |phi| {:.4}",
        report.rows.len(),
        report.unstable_steps,
        report.marginal_steps,
        report.max_stm
    );
    s.finish("stability", "ok")?;
    Ok(s.strict_code(report.any_unstable()))
}
