//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the report is printed even when everything passes.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use azem_core::critic::{self, FitOptions, InputScaler, ValueModel};
use azem_core::guidance::GuidanceGains;
use azem_core::policy::{self, PolicyInit, PolicyParams};
use azem_core::scenario::ScenarioConfig;
use azem_core::sim::Vec3;
use azem_core::stability::{a_matrix, eigen_check, stm, Status};
use azem_core::trainer::{self, fly, Actor, InitialDistribution, Mission, RbfGrid, SlopeContact, TrainConfig};
use azem_core::EnergyOptimalArc;
use nalgebra::{DVector, Matrix2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn classical_flight(n_steps: usize) -> (Mission, azem_core::EpisodeRecord) {
    let cfg = ScenarioConfig::mars_2d();
    let mut mission = cfg.mission();
    mission.n_steps = n_steps;
    mission.spacecraft.thrust_limited = false;
    mission.environment.terrain_enabled = false;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let ep = fly(&cfg.nominal_start(), Actor::Fixed(GuidanceGains::classical(80.0)), &mission, &mut rng).unwrap();
    (mission, ep)
}

fn criterion_1() -> Outcome {
    let clock = Instant::now();
    let (mission, ep) = classical_flight(1000);
    let secs = clock.elapsed().as_secs_f64();
    let end = ep.final_state().unwrap();
    let dr = (end.r - mission.target.r_f).norm();
    let dv = (end.v - mission.target.v_f).norm();
    outcome(
        dr < 1e-3 && dv < 1e-3 && secs < 1.0,
        format!("|dr| = {dr:.3e} m, |dv| = {dv:.3e} m/s, {secs:.3} s"),
    )
}

fn criterion_2() -> Outcome {
    let (mission, ep) = classical_flight(1000);
    let dt = 80.0 / 1000.0;
    let flown: f64 = ep.samples.iter().map(|s| s.a_cmd.norm_squared() * dt).sum();
    let start = ScenarioConfig::mars_2d().nominal_start();
    let arc = EnergyOptimalArc::new(&start, &mission.target, 80.0, &mission.environment.g).unwrap();
    let optimum = arc.accel_energy();
    let rel = (flown - optimum).abs() / optimum;
    outcome(rel < 1e-3, format!("closed loop {flown:.6}, optimum {optimum:.6}, rel {rel:.3e}"))
}

fn criterion_3() -> Outcome {
    let clock = Instant::now();
    let p = eigen_check(&GuidanceGains::new(6.0, -2.0, 80.0));
    let exact = p.lambda1 == Complex64::new(-2.0, 0.0) && p.lambda2 == Complex64::new(-3.0, 0.0);
    let labels = [
        ((6.0, -2.0), Status::Stable),
        ((0.0, 0.0), Status::Marginal),
        ((6.0, -8.0), Status::Unstable),
    ];
    let labels_ok = labels
        .iter()
        .all(|&((k_r, k_v), want)| eigen_check(&GuidanceGains::new(k_r, k_v, 80.0)).status == want);
    let secs = clock.elapsed().as_secs_f64();
    outcome(
        exact && labels_ok && secs < 1e-3,
        format!(
            "lambda = {{{}, {}}}, labels {}, {:.1} us",
            p.lambda1.re,
            p.lambda2.re,
            if labels_ok { "ok" } else { "wrong" },
            secs * 1e6
        ),
    )
}

fn integrated_stm(gains: &GuidanceGains, t_go_end: f64) -> Matrix2<f64> {
    let mut phi = Matrix2::identity();
    let mut t_go = gains.t_f;
    let f = |t_go: f64, p: &Matrix2<f64>| a_matrix(gains, t_go) * p;
    while t_go > t_go_end {
        let h = (t_go * 2e-3).min(t_go - t_go_end);
        let k1 = f(t_go, &phi);
        let k2 = f(t_go - 0.5 * h, &(phi + k1 * (0.5 * h)));
        let k3 = f(t_go - 0.5 * h, &(phi + k2 * (0.5 * h)));
        let k4 = f(t_go - h, &(phi + k3 * h));
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t_go -= h;
    }
    phi
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut worst: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    let mut pairs = 0;
    while pairs < 20 {
        let gains = GuidanceGains::new(rng.random_range(0.5..12.0), rng.random_range(-4.0..4.0), 80.0);
        if eigen_check(&gains).status != Status::Stable {
            continue;
        }
        pairs += 1;
        worst_identity = worst_identity.max((stm(&gains, 80.0).phi - Matrix2::identity()).amax());
        for j in 0..10 {
            let ratio = 1.0 - 0.098 * j as f64;
            let closed = stm(&gains, ratio * 80.0).phi;
            let numeric = integrated_stm(&gains, ratio * 80.0);
            worst = worst.max((closed - numeric).amax() / numeric.amax());
        }
    }
    outcome(
        worst < 1e-6 && worst_identity < 1e-12,
        format!("max rel err {worst:.3e} over 200 samples, |phi(1) - I| = {worst_identity:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = 200;
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let model = ValueModel::random(40, InputScaler::from_data(&inputs), &mut rng);
        let h = model.hidden_matrix(&inputs);
        let beta = critic::solve_min_norm(&h, &y, critic::RCOND).unwrap();
        let res = (&h * &beta - &y).norm();
        // independent least-squares residual from a Householder QR
        let q = h.clone().qr().q();
        let res_oracle = (&y - &q * (q.transpose() * &y)).norm();
        worst = worst.max((res - res_oracle).abs() / res_oracle);
    }
    let inputs: Vec<Vec<f64>> = (0..1000).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let targets: Vec<f64> = inputs
        .iter()
        .map(|x| (x[0] + 0.5 * x[1]).sin() + x[2] * x[3] + 0.3 * (x[4] - x[5]).powi(2))
        .collect();
    let opts = FitOptions {
        hidden: Some(100),
        ..Default::default()
    };
    let (_, report) = critic::fit(&inputs, &targets, &opts, &mut rng).unwrap();
    outcome(
        worst < 1e-8 && report.test_nrmse <= 0.3,
        format!(
            "max residual rel diff {worst:.2e}, smooth 6D test NRMSE {:.4} (L = 100, N = 1000)",
            report.test_nrmse
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let base = PolicyParams::warm_start(RbfGrid::default().build(), &PolicyInit::default(), 2.6);
    let dim = base.dim();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 100 {
        let mut pp = base.clone();
        for th in [&mut pp.theta_kr, &mut pp.theta_kv] {
            th.iter_mut().for_each(|t| *t += rng.random_range(-0.5..0.5));
        }
        pp.theta_tf.iter_mut().for_each(|t| *t += rng.random_range(-3.0..3.0));
        let state = azem_core::LanderState::new(
            Vec3::new(rng.random_range(500.0..2500.0), rng.random_range(-500.0..500.0), rng.random_range(200.0..1600.0)),
            Vec3::new(rng.random_range(-120.0..120.0), rng.random_range(-60.0..60.0), rng.random_range(-100.0..20.0)),
            1905.0,
        );
        let act = policy::sample(&state, &pp, &mut rng);
        if act.gains.t_f <= pp.tf_min || act.gains.t_f >= pp.tf_max {
            continue;
        }
        checked += 1;
        let phi = policy::features(&state, &pp.rbf);
        let dot = |th: &[f64]| phi.iter().zip(th).map(|(a, b)| a * b).sum::<f64>();
        let logp = |p: &PolicyParams| {
            policy::log_prob(act.gains.k_r, dot(&p.theta_kr), p.sigma_gain)
                + policy::log_prob(act.gains.k_v, dot(&p.theta_kv), p.sigma_gain)
                + policy::log_prob(act.gains.t_f, dot(&p.theta_tf), p.sigma_tf)
        };
        let h = 1e-5;
        for (which, analytic) in [&act.log_grad_kr, &act.log_grad_kv, &act.log_grad_tf].into_iter().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..dim {
                let (mut up, mut dn) = (pp.clone(), pp.clone());
                let (u, d) = match which {
                    0 => (&mut up.theta_kr, &mut dn.theta_kr),
                    1 => (&mut up.theta_kv, &mut dn.theta_kv),
                    _ => (&mut up.theta_tf, &mut dn.theta_tf),
                };
                u[i] += h;
                d[i] -= h;
                let fd = (logp(&up) - logp(&dn)) / (2.0 * h);
                num += (fd - analytic[i]).powi(2);
                den += analytic[i].powi(2);
            }
            worst = worst.max(num.sqrt() / den.sqrt().max(1e-300));
        }
    }
    outcome(worst < 1e-5, format!("max rel err {worst:.2e} over 100 (K_R, K_V, T_f) draws"))
}

fn desk_config() -> (TrainConfig, Mission) {
    let cfg = ScenarioConfig::mars_2d();
    let tc = TrainConfig {
        max_iters: 50,
        n_episodes_per_iter: 20,
        epsilon_stop: 0.0,
        alpha: 1e-5,
        seed: SEED,
        ..cfg.train_config()
    };
    let mut mission = cfg.mission();
    mission.n_steps = 60;
    (tc, mission)
}

fn criterion_7_and_8() -> (Outcome, Outcome) {
    let (tc, mission) = desk_config();
    let clock = Instant::now();
    let result = trainer::train(&tc, &mission).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    let logs = &result.logs;
    let mean = |it: &[trainer::IterationLog]| it.iter().map(|l| l.mean_test_cost).sum::<f64>() / it.len() as f64;
    let n = logs.len();
    let c7 = if n < 10 {
        outcome(false, format!("only {n} iterations ran ({:?})", result.stop))
    } else {
        let (first, last) = (mean(&logs[..5]), mean(&logs[n - 5..]));
        let (v0, v1) = (logs[0].violation_frac, logs[n - 1].violation_frac);
        outcome(
            last < first && v1 <= v0 && secs < 600.0,
            format!(
                "{n} iterations in {secs:.1} s, test cost first-5 {first:.2} -> last-5 {last:.2}, violations {v0:.2} -> {v1:.2}"
            ),
        )
    };

    let mut flight = mission.clone();
    flight.slope_contact = SlopeContact::Record;
    let start = InitialDistribution::mars_2d().nominal(mission.spacecraft.m_wet);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let adaptive = fly(&start, Actor::Mean(&result.policy), &flight, &mut rng).unwrap();
    let tof = adaptive.t_f_drawn;
    let classical = fly(&start, Actor::Fixed(GuidanceGains::classical(tof)), &flight, &mut rng).unwrap();
    let (ma, mc) = (adaptive.mass_depleted(), classical.mass_depleted());
    let c8 = outcome(
        ma <= 1.02 * mc,
        format!(
            "adaptive {ma:.2} kg vs classical {mc:.2} kg at {tof:.2} s (ratio {:.4}; adaptive violation {}, classical violation {})",
            ma / mc,
            adaptive.violated(),
            classical.violated()
        ),
    );
    (c7, c8)
}

fn criterion_9() -> Outcome {
    let cfg = ScenarioConfig::mars_2d();
    let mut mission = cfg.mission();
    mission.environment.terrain_enabled = false;
    let pp = cfg.train_config().initial_policy(&mission);
    let report = trainer::evaluate(&pp, 100, &cfg.initial, &mission, SEED, true).unwrap();
    let good = report
        .trials
        .iter()
        .filter(|t| t.position_error < 1.0 && t.velocity_error < 0.1)
        .count();
    outcome(
        good == 100,
        format!(
            "{good}/100 within 1 m and 0.1 m/s, max |dr| {:.2e} m, max |dv| {:.2e} m/s, {} violations",
            report.position_error.max, report.velocity_error.max, report.violations
        ),
    )
}

fn azem(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_azem"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let root = tmp.path();
    let policy = root.join("policy.json");
    let mut serial_cfg = ScenarioConfig::mars_2d();
    serial_cfg.train.parallel = false;
    let serial_path = root.join("serial.json");
    fs::write(&serial_path, serial_cfg.to_json().unwrap()).unwrap();

    let runs: Vec<(&str, Vec<String>)> = vec![
        ("simulate", vec!["simulate".into()]),
        ("train", vec!["train".into(), "--iters".into(), "3".into(), "--episodes".into(), "8".into()]),
        ("montecarlo", vec!["montecarlo".into(), "--trials".into(), "30".into()]),
        ("stability", vec!["stability".into()]),
    ];
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for (name, args) in &runs {
        let mut outs = Vec::new();
        for rep in ["a", "b"] {
            let out = root.join(format!("{name}_{rep}"));
            let mut full: Vec<String> = vec!["--out".into(), out.display().to_string(), "--seed".into(), "11".into(), "--no-plots".into()];
            full.extend(args.iter().cloned());
            let refs: Vec<&str> = full.iter().map(String::as_str).collect();
            if !azem(&refs) {
                return outcome(false, format!("{name} run failed"));
            }
            outs.push(out);
        }
        let (a, b) = (csv_files(&outs[0]), csv_files(&outs[1]));
        compared += a.len();
        if a != b {
            mismatches.push(name.to_string());
        }
    }
    fs::copy(root.join("train_a/policy.json"), &policy).unwrap();
    for rep in ["a", "b"] {
        let out = root.join(format!("compare_{rep}"));
        if !azem(&["--out", &out.display().to_string(), "--seed", "11", "--no-plots", "compare", "--policy", &policy.display().to_string()]) {
            return outcome(false, "compare run failed".into());
        }
    }
    if csv_files(&root.join("compare_a")) != csv_files(&root.join("compare_b")) {
        mismatches.push("compare".into());
    }
    compared += csv_files(&root.join("compare_a")).len();

    // serial and parallel episode execution must agree byte for byte
    for (tag, cfg) in [("par", None), ("ser", Some(&serial_path))] {
        let out = root.join(format!("train_{tag}"));
        let mut args = vec!["--out".to_string(), out.display().to_string(), "--seed".into(), "11".into(), "--no-plots".into()];
        if let Some(c) = cfg {
            args.extend(["--config".to_string(), c.display().to_string()]);
        }
        args.extend(["train", "--iters", "3", "--episodes", "8"].map(String::from));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        if !azem(&refs) {
            return outcome(false, format!("train_{tag} failed"));
        }
    }
    if csv_files(&root.join("train_par")) != csv_files(&root.join("train_ser")) {
        mismatches.push("train serial vs parallel".into());
    }
    outcome(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{compared} CSV files identical across repeated runs; serial and parallel training agree")
        } else {
            format!("differences in {}", mismatches.join(", "))
        },
    )
}

fn main() {
    // accept and ignore libtest arguments such as --nocapture or filters
    let mut results: Vec<(usize, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
    ];
    let (c7, c8) = criterion_7_and_8();
    results.push((7, c7));
    results.push((8, c8));
    results.push((9, criterion_9()));
    results.push((10, criterion_10()));

    let mut failed = 0;
    for (n, r) in &results {
        println!("criterion {n:>2}: {}  {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        if !r.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
