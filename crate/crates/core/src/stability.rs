//! Stability of the closed-loop ZEM/ZEV error dynamics.
//!
//! With `x = (ZEM, ZEV)` the generalized law gives the time-varying system
//! `ẋ = A(t) x`, `A = [[-K_R/t_go, -K_V], [-K_R/t_go², -K_V/t_go]]`. The change
//! of variables `x = T z`, `T = diag(1, t_f/t_go)`, with the time scale
//! `τ = -ln(t_go/t_f)` turns it into `dz/dτ = R z` with the constant matrix
//! `R = [[-K_R, -K_V t_f], [-K_R/t_f, -(K_V + 1)]]`, so `Φ = T exp(R τ)`.

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::guidance::GuidanceGains;

/// Below this `|Δ|` the eigenvalues are treated as repeated.
pub const CONFLUENT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Stable,
    /// Largest eigenvalue real part is exactly zero.
    Marginal,
    Unstable,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Stable => "stable",
            Status::Marginal => "marginal",
            Status::Unstable => "unstable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stable" => Some(Status::Stable),
            "marginal" => Some(Status::Marginal),
            "unstable" => Some(Status::Unstable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootCase {
    RealRoots,
    ComplexRoots,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityPoint {
    pub t: f64,
    pub t_go: f64,
    pub k_r: f64,
    pub k_v: f64,
    /// `K_R + K_V + 1`.
    pub k: f64,
    /// `K² - 4 K_R`.
    pub delta: f64,
    pub lambda1: Complex64,
    pub lambda2: Complex64,
    pub status: Status,
    pub case: RootCase,
}

impl StabilityPoint {
    pub fn is_stable(&self) -> bool {
        self.status == Status::Stable
    }
}

/// Closed-loop system matrix in the transformed time scale.
pub fn r_matrix(gains: &GuidanceGains) -> Matrix2<f64> {
    let (k_r, k_v, t_f) = (gains.k_r, gains.k_v, gains.t_f);
    Matrix2::new(-k_r, -k_v * t_f, -k_r / t_f, -(k_v + 1.0))
}

/// Original time-varying system matrix at `t_go`.
pub fn a_matrix(gains: &GuidanceGains, t_go: f64) -> Matrix2<f64> {
    let (k_r, k_v) = (gains.k_r, gains.k_v);
    Matrix2::new(-k_r / t_go, -k_v, -k_r / (t_go * t_go), -k_v / t_go)
}

/// Roots of `λ² + Kλ + K_R`, with `λ1` the `+√Δ` root.
fn roots(k: f64, k_r: f64, delta: f64) -> (Complex64, Complex64) {
    if delta >= 0.0 {
        let sq = delta.sqrt();
        // avoid cancellation: pick the root where −K and ∓√Δ add in magnitude
        let q = -0.5 * (k + if k >= 0.0 { sq } else { -sq });
        if q == 0.0 {
            return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        }
        let other = k_r / q + 0.0;
        let (l1, l2) = if k >= 0.0 { (other, q) } else { (q, other) };
        (Complex64::new(l1, 0.0), Complex64::new(l2, 0.0))
    } else {
        let im = 0.5 * (-delta).sqrt();
        (Complex64::new(-0.5 * k, im), Complex64::new(-0.5 * k, -im))
    }
}

fn classify(k: f64, k_r: f64, delta: f64) -> Status {
    if delta >= 0.0 {
        if k > 0.0 && k_r > 0.0 {
            Status::Stable
        } else if k_r == 0.0 && k >= 0.0 {
            Status::Marginal
        } else {
            Status::Unstable
        }
    } else if k > 0.0 {
        Status::Stable
    } else if k == 0.0 {
        Status::Marginal
    } else {
        Status::Unstable
    }
}

/// Eigenvalues of `R` and the stability label for constant gains.
///
/// For real roots the condition `K > √Δ` is tested as `K > 0 ∧ K_R > 0`,
/// which is equivalent and free of cancellation.
pub fn eigen_check(gains: &GuidanceGains) -> StabilityPoint {
    let (k_r, k_v) = (gains.k_r, gains.k_v);
    let k = k_r + k_v + 1.0;
    let delta = k * k - 4.0 * k_r;
    let (lambda1, lambda2) = roots(k, k_r, delta);
    StabilityPoint {
        t: 0.0,
        t_go: gains.t_f,
        k_r,
        k_v,
        k,
        delta,
        lambda1,
        lambda2,
        status: classify(k, k_r, delta),
        case: if delta >= 0.0 {
            RootCase::RealRoots
        } else {
            RootCase::ComplexRoots
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StmSample {
    /// `t_go / t_f`.
    pub ratio: f64,
    pub tau: f64,
    pub phi: Matrix2<f64>,
    pub max_abs: f64,
}

/// `exp(R τ)` by Sylvester's formula, or the confluent form for repeated roots.
pub fn lti_stm(gains: &GuidanceGains, tau: f64) -> Matrix2<f64> {
    let r = r_matrix(gains);
    let p = eigen_check(gains);
    let eye = Matrix2::<f64>::identity();
    if p.delta.abs() < CONFLUENT_TOLERANCE {
        let lam = -0.5 * p.k;
        return ((r - eye * lam) * tau + eye) * (lam * tau).exp();
    }
    let rc = r.map(|x| Complex64::new(x, 0.0));
    let ec = Matrix2::<Complex64>::identity();
    let (l1, l2) = (p.lambda1, p.lambda2);
    let e1 = (l1 * tau).exp();
    let e2 = (l2 * tau).exp();
    let m = ((rc - ec * l2) * e1 - (rc - ec * l1) * e2) / (l1 - l2);
    m.map(|z| z.re)
}

/// STM of the original system from `t_go = t_f` to `t_go`.
pub fn stm(gains: &GuidanceGains, t_go: f64) -> StmSample {
    let ratio = t_go / gains.t_f;
    let tau = -ratio.ln();
    let e = lti_stm(gains, tau);
    let t = Matrix2::new(1.0, 0.0, 0.0, 1.0 / ratio);
    let phi = t * e;
    StmSample {
        ratio,
        tau,
        phi,
        max_abs: phi.amax(),
    }
}

/// Gains in force at one guidance step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainHistoryPoint {
    pub t: f64,
    pub t_go: f64,
    pub gains: GuidanceGains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub point: StabilityPoint,
    pub stm: StmSample,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    pub unstable_steps: usize,
    pub marginal_steps: usize,
    pub max_stm: f64,
}

impl StabilityReport {
    pub fn any_unstable(&self) -> bool {
        self.unstable_steps > 0
    }
}

/// Per-step eigenvalues and STM along a gain history.
pub fn trajectory_report(history: &[GainHistoryPoint]) -> StabilityReport {
    let mut report = StabilityReport {
        max_stm: 0.0,
        ..Default::default()
    };
    for h in history {
        let mut point = eigen_check(&h.gains);
        point.t = h.t;
        point.t_go = h.t_go;
        let s = stm(&h.gains, h.t_go);
        match point.status {
            Status::Unstable => report.unstable_steps += 1,
            Status::Marginal => report.marginal_steps += 1,
            Status::Stable => {}
        }
        report.max_stm = report.max_stm.max(s.max_abs);
        report.rows.push(StabilityRow { point, stm: s });
    }
    report
}
