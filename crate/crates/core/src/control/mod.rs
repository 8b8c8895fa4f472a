//! Valve table, mode sets and the strategies that drive the periodic
//! controller.

mod file;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{PondError, Result};
use crate::hmdp::{ControlModeId, DecisionPoint, Policy};
use crate::synthesis::{CellRef, EnvKey, PermissiveStrategy};
use crate::units;

pub use file::StrategyFile;

/// Largest number of valve modes; mode sets are stored as a byte mask.
pub const MAX_MODES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValveTable {
    /// Outflow per mode [m³/min], strictly increasing.
    pub q_out: Vec<f64>,
    /// Control period P [min].
    pub period: f64,
}

impl ValveTable {
    pub fn new(q_out: Vec<f64>, period: f64) -> Result<Self> {
        let t = ValveTable { q_out, period };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_out.is_empty() || self.q_out.len() > MAX_MODES {
            return Err(PondError::invalid(format!("valve table needs 1..={MAX_MODES} modes")));
        }
        if self.q_out.iter().any(|q| !q.is_finite() || *q < 0.0) {
            return Err(PondError::invalid("valve flows must be finite and non-negative"));
        }
        if self.q_out.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PondError::invalid(format!("valve flows must be strictly increasing: {:?}", self.q_out)));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(PondError::invalid("control period must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.q_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_out.is_empty()
    }

    pub fn q_out(&self, mode: ControlModeId) -> Result<f64> {
        self.q_out
            .get(mode.index())
            .copied()
            .ok_or_else(|| PondError::invalid(format!("mode {} not in a table of {}", mode.0, self.len())))
    }

    pub fn all_modes(&self) -> ModeSet {
        ModeSet::full(self.len())
    }
}

/// Low, medium and high settings at 0.25, 1 and 1.5 times the permitted
/// discharge given in L/s.
pub fn default_valve_table(permitted_l_per_s: f64, period: f64) -> Result<ValveTable> {
    if !(permitted_l_per_s.is_finite() && permitted_l_per_s > 0.0) {
        return Err(PondError::invalid(format!("permitted discharge {permitted_l_per_s} must be positive")));
    }
    let q = units::l_per_s_to_m3_per_min(permitted_l_per_s);
    ValveTable::new(vec![0.25 * q, q, 1.5 * q], period)
}

/// A set of control modes as a bitmask; bit `i` is mode `i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ModeSet(pub u8);

impl ModeSet {
    pub const EMPTY: ModeSet = ModeSet(0);

    pub fn full(n: usize) -> Self {
        ModeSet(((1u16 << n) - 1) as u8)
    }

    pub fn single(m: ControlModeId) -> Self {
        ModeSet(1 << m.0)
    }

    pub fn contains(self, m: ControlModeId) -> bool {
        m.index() < MAX_MODES && self.0 & (1 << m.0) != 0
    }

    pub fn insert(&mut self, m: ControlModeId) {
        self.0 |= 1 << m.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset(self, other: ModeSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl DoubleEndedIterator<Item = ControlModeId> {
        (0..MAX_MODES as u8).filter(move |i| self.0 & (1 << i) != 0).map(ControlModeId)
    }

    /// Mode with the largest outflow.
    pub fn highest(self) -> Option<ControlModeId> {
        self.iter().next_back()
    }

    pub fn lowest(self) -> Option<ControlModeId> {
        self.iter().next()
    }
}

impl fmt::Display for ModeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.iter().map(|m| m.0.to_string()).collect();
        write!(f, "{{{}}}", ids.join(","))
    }
}

/// Keeps one valve mode forever.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StaticStrategy {
    pub mode: ControlModeId,
}

impl Policy for StaticStrategy {
    fn choose(&self, _point: &DecisionPoint<'_>, _rng: &mut dyn RngCore) -> Result<ControlModeId> {
        Ok(self.mode)
    }
}

/// How a permissive strategy is resolved into a single mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Largest allowed outflow.
    Highest,
    Lowest,
    /// Uniformly random among allowed modes.
    #[default]
    Uniform,
}

/// A permissive strategy restricted to one mode per decision.
#[derive(Clone, Copy, Debug)]
pub struct ShieldedPolicy<'a> {
    pub shield: &'a PermissiveStrategy,
    pub tie: TieBreak,
}

impl Policy for ShieldedPolicy<'_> {
    fn choose(&self, point: &DecisionPoint<'_>, rng: &mut dyn RngCore) -> Result<ControlModeId> {
        let (_, allowed) = self.shield.allowed_nonempty(point)?;
        let m = match self.tie {
            TieBreak::Highest => allowed.highest(),
            TieBreak::Lowest => allowed.lowest(),
            TieBreak::Uniform => allowed.iter().nth(rng.random_range(0..allowed.len())),
        };
        Ok(m.expect("non-empty mode set"))
    }
}

/// Factors by which learning states merge neighbouring grid cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coarsening {
    pub level: usize,
    pub storage: usize,
    pub clock: u32,
}

impl Default for Coarsening {
    fn default() -> Self {
        Coarsening { level: 1, storage: 1, clock: 1 }
    }
}

impl Coarsening {
    pub fn validate(&self) -> Result<()> {
        if self.level == 0 || self.storage == 0 || self.clock == 0 {
            return Err(PondError::invalid("coarsening factors must be at least 1"));
        }
        Ok(())
    }

    pub fn key(&self, cell: &CellRef) -> LearnKey {
        let env = match cell.env {
            EnvKey::Segment { interval, phase, bucket } => {
                EnvKey::Segment { interval, phase, bucket: bucket / self.clock }
            }
            other => other,
        };
        LearnKey {
            decision: cell.decision as u32,
            env,
            level: (cell.level / self.level) as u32,
            storage: (cell.storage / self.storage) as u32,
        }
    }
}

/// State key of the learner and of deterministic strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LearnKey {
    pub decision: u32,
    pub env: EnvKey,
    pub level: u32,
    pub storage: u32,
}

/// One mode per state: the shield restricted by a ranking of modes for
/// each learning key. States without a usable ranking fall back to the
/// largest allowed outflow.
#[derive(Clone, Debug)]
pub struct DeterministicStrategy {
    pub shield: PermissiveStrategy,
    pub coarsening: Coarsening,
    pub ranking: BTreeMap<LearnKey, Vec<ControlModeId>>,
}

impl DeterministicStrategy {
    pub fn decide(&self, point: &DecisionPoint<'_>) -> Result<ControlModeId> {
        let (cell, allowed) = self.shield.allowed_nonempty(point)?;
        let key = self.coarsening.key(&cell);
        let picked = self.ranking.get(&key).and_then(|r| r.iter().copied().find(|m| allowed.contains(*m)));
        Ok(picked.or_else(|| allowed.highest()).expect("non-empty mode set"))
    }
}

impl Policy for DeterministicStrategy {
    fn choose(&self, point: &DecisionPoint<'_>, _rng: &mut dyn RngCore) -> Result<ControlModeId> {
        self.decide(point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_from_permitted_discharge() {
        let t = default_valve_table(95.0, 60.0).unwrap();
        let expect = [1.425, 5.7, 8.55];
        for (q, e) in t.q_out.iter().zip(expect) {
            assert!((q - e).abs() < 1e-12);
        }
        let t = default_valve_table(1.0, 60.0).unwrap();
        let l: Vec<f64> = t.q_out.iter().map(|&q| units::m3_per_min_to_l_per_s(q)).collect();
        for (q, e) in l.iter().zip([0.25, 1.0, 1.5]) {
            assert!((q - e).abs() < 1e-12);
        }
        assert!(default_valve_table(0.0, 60.0).is_err());
    }

    #[test]
    fn valve_table_rejects_unordered_flows() {
        assert!(ValveTable::new(vec![2.0, 1.0], 60.0).is_err());
        assert!(ValveTable::new(vec![], 60.0).is_err());
        assert!(ValveTable::new(vec![1.0], 0.0).is_err());
        let t = ValveTable::new(vec![0.0, 8.0], 1.0).unwrap();
        assert!(t.q_out(ControlModeId(2)).is_err());
    }

    #[test]
    fn mode_set_operations() {
        let s = ModeSet(0b101);
        assert_eq!(s.len(), 2);
        assert_eq!(s.highest(), Some(ControlModeId(2)));
        assert_eq!(s.lowest(), Some(ControlModeId(0)));
        assert!(!s.contains(ControlModeId(1)));
        assert!(s.is_subset(ModeSet::full(3)));
        assert_eq!(ModeSet::full(8).len(), 8);
        assert_eq!(s.to_string(), "{0,2}");
        assert_eq!(ModeSet::EMPTY.highest(), None);
    }

    #[test]
    fn coarse_keys_merge_cells() {
        let c = Coarsening { level: 5, storage: 2, clock: 3 };
        let cell = |level, bucket| CellRef {
            decision: 4,
            env: EnvKey::Segment { interval: 1, phase: crate::hmdp::Phase::Dry, bucket },
            level,
            storage: 3,
        };
        assert_eq!(c.key(&cell(10, 6)), c.key(&cell(14, 8)));
        assert_ne!(c.key(&cell(10, 6)), c.key(&cell(15, 6)));
        assert_eq!(c.key(&cell(0, 0)).storage, 1);
    }
}
