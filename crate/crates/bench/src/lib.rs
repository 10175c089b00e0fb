//! Shared fixtures for the benchmarks.

use azem_core::sim::Vec3;
use azem_core::LanderState;

/// 2D nominal start at wet mass.
pub fn nominal_start() -> LanderState {
    LanderState::new(Vec3::new(1500.0, 0.0, 1500.0), Vec3::new(100.0, 0.0, -60.0), 1905.0)
}
