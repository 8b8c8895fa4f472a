//! Flow functions of the detention pond: the volume balance with its two
//! boundary cases, the urban catchment as a one-layer linear reservoir, the
//! overflow clock and the sedimentation cost rate.

use serde::{Deserialize, Serialize};

use crate::error::{PondError, Result};
use crate::hmdp::Plant;
use crate::units;

/// Missing fields take the Vilhelmsborg values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PondParams {
    /// Average pond surface area A_p [m²].
    pub area_m2: f64,
    /// Maximum level W above the permanent water level [cm].
    pub max_level_cm: f64,
    /// Urban catchment area A_uc [m²].
    pub catchment_area_m2: f64,
    /// Surface reaction factor k [1/min].
    pub reaction_per_min: f64,
    /// Calibration multiplier on the catchment outflow.
    pub inflow_scale: f64,
}

impl Default for PondParams {
    fn default() -> Self {
        Self::vilhelmsborg()
    }
}

impl PondParams {
    /// Vilhelmsborg Skov: A_uc = 0.59 ha, A_p = 5572 m², k = 0.25, W = 300 cm.
    pub fn vilhelmsborg() -> Self {
        PondParams {
            area_m2: 5572.0,
            max_level_cm: 300.0,
            catchment_area_m2: units::hectare_to_m2(0.59),
            reaction_per_min: 0.25,
            inflow_scale: 1.0,
        }
    }

    pub fn with_inflow_scale(mut self, scale: f64) -> Self {
        self.inflow_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.area_m2, self.max_level_cm, self.catchment_area_m2, self.reaction_per_min, self.inflow_scale];
        if vals.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(PondError::invalid(format!("pond parameters must be positive: {self:?}")))
        }
    }
}

/// Q_in = k·S·A_uc, with S in mm. Returns m³/min.
pub fn catchment_inflow(storage_mm: f64, p: &PondParams) -> f64 {
    p.reaction_per_min * units::mm_to_m(storage_mm) * p.catchment_area_m2 * p.inflow_scale
}

/// dS/dt = rain − k·S [mm/min].
pub fn catchment_derivative(storage_mm: f64, rain: f64, p: &PondParams) -> f64 {
    rain - p.reaction_per_min * storage_mm
}

/// Volume balance with the empty-pond and full-pond boundary cases.
pub fn bounded_volume_rate(at_bottom: bool, at_top: bool, q_in: f64, q_out: f64) -> f64 {
    if (at_bottom && q_out >= q_in) || (at_top && q_in >= q_out) {
        0.0
    } else {
        q_in - q_out
    }
}

/// dV/dt [m³/min] at level `w` [cm].
pub fn pond_volume_derivative(w: f64, q_in: f64, q_out: f64, p: &PondParams) -> f64 {
    bounded_volume_rate(w <= 0.0, w >= p.max_level_cm, q_in, q_out)
}

/// do/dt: 1 while the pond is at its maximum level.
pub fn overflow_derivative(w: f64, p: &PondParams) -> f64 {
    if w >= p.max_level_cm {
        1.0
    } else {
        0.0
    }
}

/// dc/dt = 1 − w/W.
pub fn cost_derivative(w: f64, p: &PondParams) -> f64 {
    1.0 - w / p.max_level_cm
}

impl Plant for PondParams {
    fn max_level(&self) -> f64 {
        self.max_level_cm
    }

    fn level(&self, volume: f64) -> f64 {
        units::m_to_cm(volume / self.area_m2)
    }

    fn volume(&self, level: f64) -> f64 {
        units::cm_to_m(level) * self.area_m2
    }

    fn inflow(&self, storage: f64, _rain: f64) -> f64 {
        catchment_inflow(storage, self)
    }

    fn storage_rate(&self, storage: f64, rain: f64) -> f64 {
        catchment_derivative(storage, rain, self)
    }

    fn storage_ceiling(&self, rain: f64) -> f64 {
        rain / self.reaction_per_min
    }
}

/// The small tank with a two-way valve, used as a test fixture. Rain falls
/// straight into the tank, so there is no catchment storage.
pub mod tank {
    use super::*;
    use crate::control::ValveTable;
    use crate::rain::{RainInterval, RainProgram, SamplingLaw};

    #[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
    pub struct TankParams {
        pub max_volume: f64,
        pub outflow_open: f64,
        pub rain_range: (f64, f64),
        pub dry_range: (f64, f64),
        pub rain_duration: (f64, f64),
        pub period: f64,
    }

    impl Default for TankParams {
        fn default() -> Self {
            TankParams {
                max_volume: 20.0,
                outflow_open: 8.0,
                rain_range: (5.0, 10.0),
                dry_range: (6.0, 12.0),
                rain_duration: (8.0, 12.0),
                period: 1.0,
            }
        }
    }

    impl TankParams {
        /// Closed (0) and Open (`outflow_open`).
        pub fn valves(&self) -> ValveTable {
            ValveTable::new(vec![0.0, self.outflow_open], self.period).expect("tank valve table")
        }

        /// `cycles` repetitions of the dry/raining loop.
        pub fn rain_program(&self, cycles: usize) -> RainProgram {
            let (lo, hi) = self.rain_range;
            let iv = RainInterval {
                dry_min: self.dry_range.0,
                dry_max: self.dry_range.1,
                rain_min: self.rain_duration.0,
                rain_max: self.rain_duration.1,
                intensity: 0.5 * (lo + hi),
            };
            RainProgram { epsilon: (hi - lo) / (hi + lo), intervals: vec![iv; cycles], law: SamplingLaw::Uniform }
        }
    }

    impl Plant for TankParams {
        fn max_level(&self) -> f64 {
            self.max_volume
        }

        fn level(&self, volume: f64) -> f64 {
            volume
        }

        fn volume(&self, level: f64) -> f64 {
            level
        }

        fn inflow(&self, _storage: f64, rain: f64) -> f64 {
            rain
        }

        fn storage_rate(&self, _storage: f64, _rain: f64) -> f64 {
            0.0
        }

        fn storage_ceiling(&self, _rain: f64) -> f64 {
            0.0
        }
    }
}
