//! Maximally permissive safe strategy for "the pond never overflows",
//! computed by backward induction over the decision grid against an
//! abstract rain adversary.

mod adversary;
mod bound;
mod grid;

use std::collections::HashMap;
use std::fmt;

pub use adversary::{build_env_layers, check_phase_assumptions, EnvLayer, EnvNode, Outcome, RainPieces};
pub use bound::{period_upper_bound, substeps, PeriodBound, PeriodProfile};
pub use grid::{Adversary, CellRef, DecisionGrid, EnvKey, GridSpec};

use crate::control::{ModeSet, ValveTable};
use crate::error::{PondError, Result};
use crate::hmdp::{level_of, Configuration, ControlModeId, DecisionPoint, Model, Plant};

/// Allowed sets of one decision layer. Safe sets are closed downward in
/// the level and upward in the outflow, so each `(node, storage)` row is
/// stored as one threshold per mode: mode `m` is allowed in the level cells
/// below `limits[m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShieldLayer {
    pub keys: Vec<EnvKey>,
    index: HashMap<EnvKey, usize>,
    /// Indexed by `(node * storage_cells + storage) * modes + mode`.
    pub limits: Vec<u32>,
}

impl ShieldLayer {
    pub fn new(keys: Vec<EnvKey>, limits: Vec<u32>) -> Self {
        let index = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        ShieldLayer { keys, index, limits }
    }

    pub fn node(&self, key: &EnvKey) -> Option<usize> {
        self.index.get(key).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermissiveStrategy {
    pub grid: DecisionGrid,
    pub valves: ValveTable,
    /// One layer per decision index.
    pub layers: Vec<ShieldLayer>,
}

impl PermissiveStrategy {
    /// Per-mode thresholds of one row.
    pub fn row(&self, n: usize, node: usize, storage: usize) -> &[u32] {
        let k = self.n_modes();
        let off = (node * self.grid.storage_cells + storage) * k;
        &self.layers[n].limits[off..off + k]
    }

    fn mask(row: &[u32], level: usize) -> ModeSet {
        let mut m = ModeSet::EMPTY;
        for (i, &lim) in row.iter().enumerate() {
            if (level as u32) < lim {
                m.insert(ControlModeId(i as u8));
            }
        }
        m
    }

    /// Allowed set of a cell; `None` if its environment node was never reached.
    pub fn allowed(&self, cell: &CellRef) -> Option<ModeSet> {
        let node = self.layers.get(cell.decision)?.node(&cell.env)?;
        Some(Self::mask(self.row(cell.decision, node, cell.storage), cell.level))
    }

    /// Allowed sets of all level cells of one row.
    pub fn row_masks(&self, n: usize, node: usize, storage: usize) -> Vec<ModeSet> {
        let row = self.row(n, node, storage);
        (0..self.grid.level_cells).map(|w| Self::mask(row, w)).collect()
    }

    /// Cell holding `cfg` at decision `n`, where `level` is its water level.
    pub fn locate(&self, n: usize, cfg: &Configuration, level: f64) -> Result<CellRef> {
        let g = &self.grid;
        let layer = self.layers.get(n).ok_or_else(|| PondError::OutOfGrid {
            decision: n,
            what: format!("decision index beyond the {} layers", self.layers.len()),
        })?;
        let storage = g.storage_cell(cfg.x.storage).ok_or_else(|| PondError::OutOfGrid {
            decision: n,
            what: format!("storage {} mm above {}", cfg.x.storage, g.storage_max),
        })?;
        if !(0.0..=g.max_level).contains(&level) {
            return Err(PondError::OutOfGrid { decision: n, what: format!("level {level} cm") });
        }
        let primary = g.env_key(cfg.env, cfg.x.env_clock);
        let env = std::iter::once(primary)
            .chain(g.env_key_neighbours(cfg.env, cfg.x.env_clock))
            .find(|k| layer.node(k).is_some())
            .ok_or_else(|| PondError::OutOfGrid {
                decision: n,
                what: format!("environment state {primary} not reachable in the abstraction"),
            })?;
        Ok(CellRef { decision: n, env, level: g.level_cell(level), storage })
    }

    /// Cell and allowed set at a decision point; an empty set is a strategy gap.
    pub fn allowed_nonempty(&self, point: &DecisionPoint<'_>) -> Result<(CellRef, ModeSet)> {
        let cell = self.locate(point.index, point.config, point.level)?;
        let allowed = self.allowed(&cell).unwrap_or(ModeSet::EMPTY);
        if allowed.is_empty() {
            return Err(PondError::StrategyGap {
                decision: point.index,
                time: point.config.x.time,
                level: point.level,
            });
        }
        Ok((cell, allowed))
    }

    pub fn n_modes(&self) -> usize {
        self.valves.len()
    }

    /// Number of cells with a non-empty allowed set at decision `n`.
    pub fn safe_cells(&self, n: usize) -> usize {
        self.layers[n].limits.chunks(self.n_modes()).map(|r| *r.iter().max().unwrap() as usize).sum()
    }

    /// Checks that allowed sets shrink as storage grows and that a mode is
    /// allowed wherever a mode with smaller outflow is. Returns the first
    /// violating cell otherwise.
    pub fn check_monotone(&self) -> std::result::Result<(), CellRef> {
        let g = &self.grid;
        for (n, layer) in self.layers.iter().enumerate() {
            for (node, key) in layer.keys.iter().enumerate() {
                for s in 0..g.storage_cells {
                    let row = self.row(n, node, s);
                    let cell = |w: u32| CellRef { decision: n, env: *key, level: w as usize, storage: s };
                    if let Some(i) = row.windows(2).position(|p| p[0] > p[1]) {
                        return Err(cell(row[i + 1]));
                    }
                    if s > 0 {
                        let below = self.row(n, node, s - 1);
                        if let Some(i) = row.iter().zip(below).position(|(a, b)| a > b) {
                            return Err(cell(below[i]));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Backward induction over the decision grid. A mode is allowed in a cell
/// iff, for every abstract rain outcome of the period, the bound from the
/// cell's upper corner stays below the maximum level and lands in a cell
/// that is safe at the next decision.
pub fn synthesize_safe<P: Plant>(model: &Model<P>, grid: &DecisionGrid) -> Result<PermissiveStrategy> {
    model.validate()?;
    let env_layers = build_env_layers(&model.rain, model.env_start, grid)?;
    let plant = &model.plant;
    let (nw, ns) = (grid.level_cells, grid.storage_cells);
    let n_modes = model.valves.len();
    let v_max = plant.max_volume();
    let v_hi: Vec<f64> = (0..nw).map(|w| plant.volume(grid.level_bounds(w).1)).collect();

    let terminal = &env_layers[grid.decisions];
    let mut next = ShieldLayer::new(
        terminal.nodes.iter().map(|n| n.key).collect(),
        vec![nw as u32; terminal.nodes.len() * ns * n_modes],
    );
    // Safe prefix length per (node, storage) of a layer: the threshold of
    // the largest outflow.
    let prefix = |layer: &ShieldLayer| -> Vec<usize> {
        layer.limits.chunks(n_modes).map(|r| *r.iter().max().unwrap() as usize).collect()
    };
    let mut next_safe = prefix(&next);
    let mut cache = ProfileCache::new(ns * n_modes);
    let mut layers = Vec::with_capacity(grid.decisions);
    for n in (0..grid.decisions).rev() {
        let el = &env_layers[n];
        let mut limits = vec![0u32; el.nodes.len() * ns * n_modes];
        for (node, outcomes) in el.outcomes.iter().enumerate() {
            let ids: Vec<usize> = outcomes.iter().map(|o| cache.intern(&o.rain)).collect();
            let succ: Vec<usize> = outcomes
                .iter()
                .map(|o| next.node(&env_layers[n + 1].nodes[o.next].key).expect("successor layer node"))
                .collect();
            for s in 0..ns {
                let s_hi = grid.storage_bounds(s).1;
                for m in 0..n_modes {
                    let q = model.valves.q_out(ControlModeId(m as u8))?;
                    // number of safe level cells counted from the bottom
                    let mut limit = nw;
                    for (o, &id) in ids.iter().enumerate() {
                        if limit == 0 {
                            break;
                        }
                        let prof = cache.get(id, s * n_modes + m, || {
                            PeriodProfile::compute(plant, q, s_hi, &substeps(grid.period, model.dt, &outcomes[o].rain))
                        });
                        let Some(s2) = grid.storage_cell(prof.storage_end) else {
                            limit = 0;
                            break;
                        };
                        let room = next_safe[succ[o] * ns + s2];
                        // peak and end volume grow with the initial volume, so
                        // the safe cells form a prefix: bisect for its end
                        let safe = |w: usize| {
                            let (peak, end) = prof.volumes(v_hi[w]);
                            peak < v_max && grid.level_cell(level_of(plant, end)) < room
                        };
                        let (mut lo, mut hi) = (0, limit);
                        while lo < hi {
                            let mid = (lo + hi) / 2;
                            if safe(mid) {
                                lo = mid + 1;
                            } else {
                                hi = mid;
                            }
                        }
                        limit = lo;
                    }
                    limits[(node * ns + s) * n_modes + m] = limit as u32;
                }
            }
        }
        let layer = ShieldLayer::new(el.nodes.iter().map(|n| n.key).collect(), limits);
        next_safe = prefix(&layer);
        next = layer.clone();
        layers.push(layer);
    }
    layers.reverse();
    Ok(PermissiveStrategy { grid: grid.clone(), valves: model.valves.clone(), layers })
}

/// Period profiles depend on the rain pieces, the storage cell and the mode
/// only, and the same rain pieces recur across nodes and layers.
struct ProfileCache {
    ids: HashMap<Vec<[u64; 3]>, usize>,
    slots: usize,
    table: Vec<Vec<Option<PeriodProfile>>>,
}

impl ProfileCache {
    fn new(slots: usize) -> Self {
        ProfileCache { ids: HashMap::new(), slots, table: Vec::new() }
    }

    fn intern(&mut self, rain: &RainPieces) -> usize {
        let key: Vec<[u64; 3]> = rain.iter().map(|&(a, b, r)| [a.to_bits(), b.to_bits(), r.to_bits()]).collect();
        let next = self.table.len();
        let id = *self.ids.entry(key).or_insert(next);
        if id == next {
            self.table.push(vec![None; self.slots]);
        }
        id
    }

    fn get(&mut self, id: usize, slot: usize, compute: impl FnOnce() -> PeriodProfile) -> PeriodProfile {
        *self.table[id][slot].get_or_insert_with(compute)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub level: f64,
    pub storage: f64,
    pub cell: CellRef,
    pub allowed: ModeSet,
    /// Supremum of initial levels, at the same storage and rain state, from
    /// which the strategy keeps the pond safe; `None` if no level is safe.
    pub max_safe_level: Option<f64>,
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "initial level: {} cm, storage: {} mm", self.level, self.storage)?;
        writeln!(f, "initial cell: level {}, storage {}, environment {}", self.cell.level, self.cell.storage, self.cell.env)?;
        writeln!(f, "allowed modes: {}", self.allowed)?;
        match self.max_safe_level {
            Some(w) => writeln!(f, "maximal safe initial level: {w} cm")?,
            None => writeln!(f, "maximal safe initial level: none")?,
        }
        write!(f, "feasible: {}", self.feasible)
    }
}

/// Whether `init` lies in a safe cell of the first layer, with the largest
/// safe initial level along the level axis as a diagnostic.
pub fn check_feasible<P: Plant>(strategy: &PermissiveStrategy, plant: &P, init: &Configuration) -> Result<FeasibilityReport> {
    let level = init.level(plant);
    let cell = strategy.locate(0, init, level)?;
    let allowed = strategy.allowed(&cell).unwrap_or(ModeSet::EMPTY);
    let g = &strategy.grid;
    let mut max_safe = None;
    for w in 0..g.level_cells {
        let c = CellRef { level: w, ..cell };
        if strategy.allowed(&c).is_some_and(|m| !m.is_empty()) {
            max_safe = Some(g.level_bounds(w).1);
        } else {
            break;
        }
    }
    Ok(FeasibilityReport {
        feasible: !allowed.is_empty(),
        level,
        storage: init.x.storage,
        cell,
        allowed,
        max_safe_level: max_safe,
    })
}
