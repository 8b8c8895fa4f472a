use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PondError, Result};
use crate::hmdp::{EnvMode, Model, Phase, Plant};

/// How the rain adversary is abstracted during synthesis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    /// Tracks the rain automaton (interval, location, bucketed clock).
    #[default]
    Phase,
    /// Time-only worst-case envelope; the strategy ignores the rain state.
    Envelope,
}

impl fmt::Display for Adversary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Adversary::Phase => "phase",
            Adversary::Envelope => "envelope",
        })
    }
}

impl FromStr for Adversary {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "phase" => Ok(Adversary::Phase),
            "envelope" => Ok(Adversary::Envelope),
            _ => Err(format!("unknown adversary '{s}'")),
        }
    }
}

/// Grid resolution knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub level_step: f64,
    /// Storage cell width as a fraction of the storage ceiling.
    pub storage_fraction: f64,
    /// Width of the rain-clock buckets [min].
    pub clock_step: f64,
    pub adversary: Adversary,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { level_step: 2.0, storage_fraction: 0.05, clock_step: 1.0, adversary: Adversary::Phase }
    }
}

/// Abstract environment state used as a strategy index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvKey {
    /// Envelope adversary: one state per decision.
    Any,
    /// Program exhausted, permanently dry.
    Exhausted,
    Segment { interval: u16, phase: Phase, bucket: u32 },
}

impl fmt::Display for EnvKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvKey::Any => f.write_str("any"),
            EnvKey::Exhausted => f.write_str("end"),
            EnvKey::Segment { interval, phase, bucket } => {
                let p = if *phase == Phase::Dry { 'D' } else { 'R' };
                write!(f, "{p}:{interval}:{bucket}")
            }
        }
    }
}

impl FromStr for EnvKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "any" => return Ok(EnvKey::Any),
            "end" => return Ok(EnvKey::Exhausted),
            _ => {}
        }
        let mut it = s.split(':');
        let phase = match it.next() {
            Some("D") => Phase::Dry,
            Some("R") => Phase::Raining,
            _ => return Err(format!("bad environment key '{s}'")),
        };
        let interval = it.next().and_then(|v| v.parse().ok());
        let bucket = it.next().and_then(|v| v.parse().ok());
        match (interval, bucket, it.next()) {
            (Some(interval), Some(bucket), None) => Ok(EnvKey::Segment { interval, phase, bucket }),
            _ => Err(format!("bad environment key '{s}'")),
        }
    }
}

/// Address of one strategy cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellRef {
    pub decision: usize,
    pub env: EnvKey,
    pub level: usize,
    pub storage: usize,
}

/// Discretisation of decision-time states: level and storage axes, the
/// rain-clock buckets and the decision index.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionGrid {
    pub max_level: f64,
    pub level_step: f64,
    pub level_cells: usize,
    pub storage_max: f64,
    pub storage_step: f64,
    pub storage_cells: usize,
    pub clock_step: f64,
    pub period: f64,
    pub decisions: usize,
    pub program_len: usize,
    pub adversary: Adversary,
}

impl DecisionGrid {
    pub fn for_model<P: Plant>(model: &Model<P>, spec: &GridSpec) -> Result<Self> {
        if !(spec.level_step > 0.0 && spec.storage_fraction > 0.0 && spec.clock_step > 0.0) {
            return Err(PondError::invalid(format!("grid steps must be positive: {spec:?}")));
        }
        let max_level = model.plant.max_level();
        let level_cells = ((max_level / spec.level_step) - 1e-9).ceil().max(1.0) as usize;
        let ceiling = 2.0 * model.plant.storage_ceiling(model.rain.max_intensity());
        let (storage_max, storage_cells, storage_step) = if ceiling > 0.0 {
            let cells = (1.0 / spec.storage_fraction).round().max(1.0) as usize;
            (ceiling, cells, ceiling / cells as f64)
        } else {
            (0.0, 1, 0.0)
        };
        Ok(DecisionGrid {
            max_level,
            level_step: spec.level_step,
            level_cells,
            storage_max,
            storage_step,
            storage_cells,
            clock_step: spec.clock_step,
            period: model.period(),
            decisions: model.decisions(),
            program_len: model.rain.len(),
            adversary: spec.adversary,
        })
    }

    /// Half-open cells `[lo, hi)`, the top cell closed at W.
    pub fn level_cell(&self, w: f64) -> usize {
        ((w / self.level_step).floor().max(0.0) as usize).min(self.level_cells - 1)
    }

    pub fn level_bounds(&self, cell: usize) -> (f64, f64) {
        let lo = cell as f64 * self.level_step;
        let hi = if cell + 1 == self.level_cells { self.max_level } else { lo + self.level_step };
        (lo, hi)
    }

    pub fn storage_cell(&self, s: f64) -> Option<usize> {
        if s > self.storage_max || s.is_nan() {
            return None;
        }
        if self.storage_step == 0.0 {
            return Some(0);
        }
        Some(((s / self.storage_step).floor().max(0.0) as usize).min(self.storage_cells - 1))
    }

    pub fn storage_bounds(&self, cell: usize) -> (f64, f64) {
        let lo = cell as f64 * self.storage_step;
        let hi = if cell + 1 == self.storage_cells { self.storage_max } else { lo + self.storage_step };
        (lo, hi)
    }

    pub fn bucket(&self, elapsed: f64) -> u32 {
        (elapsed / self.clock_step).floor().max(0.0) as u32
    }

    pub fn env_key(&self, env: EnvMode, elapsed: f64) -> EnvKey {
        match self.adversary {
            Adversary::Envelope => EnvKey::Any,
            Adversary::Phase if env.interval >= self.program_len => EnvKey::Exhausted,
            Adversary::Phase => EnvKey::Segment {
                interval: env.interval as u16,
                phase: env.phase,
                bucket: self.bucket(elapsed),
            },
        }
    }

    /// Keys of the neighbouring bucket when `elapsed` sits on a bucket edge
    /// up to rounding noise.
    pub fn env_key_neighbours(&self, env: EnvMode, elapsed: f64) -> Vec<EnvKey> {
        let k = self.env_key(env, elapsed);
        let mut out = Vec::new();
        for e in [elapsed - 1e-6, elapsed + 1e-6] {
            let alt = self.env_key(env, e.max(0.0));
            if alt != k && !out.contains(&alt) {
                out.push(alt);
            }
        }
        out
    }

    pub fn cells_per_node(&self) -> usize {
        self.level_cells * self.storage_cells
    }
}
