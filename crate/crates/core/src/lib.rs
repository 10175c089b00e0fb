//! Powered-descent guidance laboratory: lander dynamics, ZEM/ZEV feedback
//! laws, an actor-critic trainer for adaptive gains, and closed-loop
//! stability analysis.

pub mod critic;
pub mod error;
pub mod guidance;
pub mod optimal;
pub mod policy;
pub mod records;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod stability;
pub mod trainer;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use critic::{FitOptions, InputScaler, ValueFitReport, ValueModel};
pub use error::{Error, Result};
pub use guidance::{GuidanceGains, TargetState, ZemZev, ZemZevStrategy};
pub use optimal::EnergyOptimalArc;
pub use policy::{PolicyAction, PolicyDocument, PolicyParams, RbfConfig};
pub use scenario::{GuidanceMode, ScenarioConfig};
pub use sim::{Environment, LanderState, SpacecraftParams, StepResult, Vec3};
pub use stability::{StabilityPoint, StabilityReport, Status, StmSample};
pub use trainer::{
    Actor, CostWeights, EpisodeRecord, InitialDistribution, IterationLog, Mission, MonteCarloReport, Termination,
    TrainConfig, TrainOutcome,
};
