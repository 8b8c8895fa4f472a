//! Shared fixtures for the benchmarks.

use pond_core::{default_valve_table, Adversary, GridSpec, Model, PondParams, RainProgram};

/// Grid coarse enough for synthesis to finish in about a second.
pub const COARSE: GridSpec = GridSpec { level_step: 2.0, storage_fraction: 0.05, clock_step: 5.0, adversary: Adversary::Phase };

/// The three-day pond under the forecast rain with the given inflow scale.
pub fn pond_model(scale: f64) -> Model<PondParams> {
    let p = PondParams::vilhelmsborg().with_inflow_scale(scale);
    Model::new(p, default_valve_table(95.0, 60.0).unwrap(), RainProgram::forecast(), 0.5, 4320.0).unwrap()
}
