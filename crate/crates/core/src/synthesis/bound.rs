//! Sound one-period bounds from the upper corner of a cell.
//!
//! With the valve fixed, one Euler step of the volume with its clamp at zero
//! is `V' = max(0, V + Δ)` where `Δ` depends on the catchment storage only.
//! Below the top clamp the volume path is therefore the Lindley recursion
//! driven by the increments `Δ_k`, which gives
//! `V_k = max(V0 + X_k, M_k)` with `X_k` the partial sums and `M_k` the same
//! recursion started from an empty pond. One storage integration per period
//! then serves every level cell.

use crate::control::ValveTable;
use crate::error::Result;
use crate::hmdp::{integrate_step, level_of, Configuration, ContinuousState, ControlModeId, EnvMode, Phase, Plant};

use super::adversary::RainPieces;

/// Integration sub-steps `(length, rain)` over one period: the `dt` grid,
/// refined at the rain piece boundaries.
pub fn substeps(period: f64, dt: f64, rain: &RainPieces) -> Vec<(f64, f64)> {
    let steps = (period / dt).round() as usize;
    let mut cuts: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    for &(a, b, _) in rain {
        for t in [a, b] {
            if t > 0.0 && t < period {
                cuts.push(t);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    cuts.windows(2)
        .map(|w| {
            let at = w[0];
            let r = rain.iter().filter(|&&(a, b, _)| a <= at && at < b).map(|p| p.2).fold(0.0, f64::max);
            (w[1] - w[0], r)
        })
        .collect()
}

/// Level-independent summary of one period under a fixed valve and rain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodProfile {
    pub max_x: f64,
    pub max_m: f64,
    pub x_end: f64,
    pub m_end: f64,
    pub storage_end: f64,
}

impl PeriodProfile {
    pub fn compute<P: Plant + ?Sized>(plant: &P, q_out: f64, s0: f64, steps: &[(f64, f64)]) -> Self {
        let (mut x, mut m, mut s) = (0.0_f64, 0.0_f64, s0);
        let (mut max_x, mut max_m) = (0.0_f64, 0.0_f64);
        for &(h, r) in steps {
            let d = h * (plant.inflow(s, r) - q_out);
            x += d;
            m = (m + d).max(0.0);
            s = (s + h * plant.storage_rate(s, r)).max(0.0);
            max_x = max_x.max(x);
            max_m = max_m.max(m);
        }
        PeriodProfile { max_x, max_m, x_end: x, m_end: m, storage_end: s }
    }

    /// Peak and end volume from initial volume `v0`, ignoring the top clamp.
    pub fn volumes(&self, v0: f64) -> (f64, f64) {
        ((v0 + self.max_x).max(self.max_m), (v0 + self.x_end).max(self.m_end))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodBound {
    pub w_peak: f64,
    pub w_end: f64,
    pub s_end: f64,
}

/// Integrates one period from `(w_hi, s_hi)` under the rain pieces with the
/// simulator's own step function and reports peak level, end level and end
/// storage.
pub fn period_upper_bound<P: Plant + ?Sized>(
    plant: &P,
    valves: &ValveTable,
    mode: ControlModeId,
    w_hi: f64,
    s_hi: f64,
    rain: &RainPieces,
    dt: f64,
) -> Result<PeriodBound> {
    let mut cfg = Configuration {
        control: mode,
        env: EnvMode { phase: Phase::Dry, interval: 0 },
        x: ContinuousState { volume: plant.volume(w_hi), storage: s_hi, ..ContinuousState::default() },
    };
    let mut w_peak = level_of(plant, cfg.x.volume);
    for (h, r) in substeps(valves.period, dt, rain) {
        cfg.x.rain = r;
        cfg = integrate_step(&cfg, plant, valves, h)?;
        w_peak = w_peak.max(level_of(plant, cfg.x.volume));
    }
    Ok(PeriodBound { w_peak, w_end: level_of(plant, cfg.x.volume), s_end: cfg.x.storage })
}
