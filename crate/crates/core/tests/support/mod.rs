//! Tiny tank instance with a discrete rain adversary, and brute-force
//! oracles for it written without the library's synthesis or learning code.
//!
//! Tank: W = 20, valve Closed (0) or Open (8), rain intensity 10, P = 1,
//! dt = 0.5, six periods. Dry spells last 6, 9 or 12 min, rain 8, 10 or
//! 12 min, each choice equally likely. The run starts 3 min into the first
//! dry spell with the tank at 10, so every switch lands on a period
//! boundary and the environment state at decisions is an integer clock.
#![allow(dead_code)]

pub mod checks;

use std::collections::{BTreeMap, HashMap};

use pond_core::env::tank::TankParams;
use pond_core::synthesis::{DecisionGrid, EnvKey, GridSpec};
use pond_core::{EnvMode, EnvStart, Model, Phase, RainProgram, SamplingLaw};

pub const W: f64 = 20.0;
pub const CELL: f64 = 2.0;
pub const CELLS: usize = 10;
pub const Q: [f64; 2] = [0.0, 8.0];
pub const RAIN: f64 = 10.0;
pub const DRY_CHOICES: [u32; 3] = [6, 9, 12];
pub const RAIN_CHOICES: [u32; 3] = [8, 10, 12];
pub const INTERVALS: usize = 2;
pub const PERIODS: usize = 6;
pub const DT: f64 = 0.5;
pub const START_ELAPSED: u32 = 3;
pub const V0: f64 = 10.0;

pub fn tank() -> TankParams {
    TankParams { max_volume: W, outflow_open: Q[1], rain_range: (RAIN, RAIN), dry_range: (6.0, 12.0), rain_duration: (8.0, 12.0), period: 1.0 }
}

pub fn model() -> Model<TankParams> {
    let t = tank();
    let prog: RainProgram = t.rain_program(INTERVALS).with_law(SamplingLaw::Grid(3));
    let start = EnvStart { mode: EnvMode { phase: Phase::Dry, interval: 0 }, elapsed: START_ELAPSED as f64, intensity: 0.0 };
    Model::new(t, t.valves(), prog, DT, PERIODS as f64).unwrap().with_env_start(start)
}

pub fn grid(model: &Model<TankParams>) -> DecisionGrid {
    let spec = GridSpec { level_step: CELL, storage_fraction: 0.05, clock_step: 1.0, ..GridSpec::default() };
    DecisionGrid::for_model(model, &spec).unwrap()
}

/// Exact environment state at a decision instant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Env {
    pub interval: usize,
    pub raining: bool,
    pub elapsed: u32,
}

impl Env {
    pub fn start() -> Self {
        Env { interval: 0, raining: false, elapsed: START_ELAPSED }
    }

    pub fn key(self) -> EnvKey {
        if self.interval >= INTERVALS {
            return EnvKey::Exhausted;
        }
        let phase = if self.raining { Phase::Raining } else { Phase::Dry };
        EnvKey::Segment { interval: self.interval as u16, phase, bucket: self.elapsed }
    }

    /// `(probability, rain during the period, state at its end)`. Durations
    /// are uniform over the choices still exceeding the elapsed time.
    pub fn successors(self) -> Vec<(f64, f64, Env)> {
        if self.interval >= INTERVALS {
            return vec![(1.0, 0.0, self)];
        }
        let choices: Vec<u32> = (if self.raining { RAIN_CHOICES } else { DRY_CHOICES })
            .into_iter()
            .filter(|d| *d > self.elapsed)
            .collect();
        let p = 1.0 / choices.len() as f64;
        let rain = if self.raining { RAIN } else { 0.0 };
        let mut out: BTreeMap<Env, f64> = BTreeMap::new();
        for d in choices {
            let next = if d == self.elapsed + 1 {
                if self.raining {
                    Env { interval: self.interval + 1, raining: false, elapsed: 0 }
                } else {
                    Env { interval: self.interval, raining: true, elapsed: 0 }
                }
            } else {
                Env { elapsed: self.elapsed + 1, ..self }
            };
            *out.entry(next).or_default() += p;
        }
        out.into_iter().map(|(e, p)| (p, rain, e)).collect()
    }
}

/// Environment states reachable at each decision `0..=PERIODS`.
pub fn reachable() -> Vec<Vec<Env>> {
    let mut layers = vec![vec![Env::start()]];
    for _ in 0..PERIODS {
        let mut next: Vec<Env> = layers.last().unwrap().iter().flat_map(|e| e.successors()).map(|s| s.2).collect();
        next.sort();
        next.dedup();
        layers.push(next);
    }
    layers
}

/// One period of explicit Euler on the tank: `(peak, end volume, cost)`.
/// Cost accrues at `1 - v/W` evaluated at the start of each step.
pub fn period(v0: f64, q: f64, rain: f64) -> (f64, f64, f64) {
    let (mut v, mut peak, mut cost) = (v0, v0, 0.0);
    for _ in 0..2 {
        cost += DT * (1.0 - v.min(W) / W);
        v = (v + DT * (rain - q)).clamp(0.0, W);
        peak = peak.max(v);
    }
    (peak, v, cost)
}

pub fn cell_of(v: f64) -> usize {
    ((v / CELL).floor() as usize).min(CELLS - 1)
}

/// Allowed-mode bitmasks `[decision][env] -> [cell]` from min-max
/// enumeration: a mode is safe in a cell iff, from the cell's top, every
/// rain choice keeps the peak below W and ends in a cell with a safe mode.
pub fn minmax_safe() -> Vec<HashMap<Env, [u8; CELLS]>> {
    let layers = reachable();
    let mut safe: Vec<HashMap<Env, [u8; CELLS]>> = vec![HashMap::new(); PERIODS + 1];
    for e in &layers[PERIODS] {
        safe[PERIODS].insert(*e, [0b11; CELLS]);
    }
    for n in (0..PERIODS).rev() {
        for e in &layers[n] {
            let mut row = [0u8; CELLS];
            for (c, slot) in row.iter_mut().enumerate() {
                let top = CELL * (c + 1) as f64;
                for (m, q) in Q.iter().enumerate() {
                    let ok = e.successors().iter().all(|&(_, r, e2)| {
                        let (peak, end, _) = period(top, *q, r);
                        peak < W && safe[n + 1][&e2][cell_of(end)] != 0
                    });
                    if ok {
                        *slot |= 1 << m;
                    }
                }
            }
            safe[n].insert(*e, row);
        }
    }
    safe
}

/// Minimal expected cost over every policy restricted to `allowed`,
/// computed by expectimin over the concrete states.
pub fn optimal_cost(allowed: &[HashMap<Env, [u8; CELLS]>]) -> f64 {
    fn go(n: usize, e: Env, v: f64, allowed: &[HashMap<Env, [u8; CELLS]>], memo: &mut HashMap<(usize, Env, u64), f64>) -> f64 {
        if n == PERIODS {
            return 0.0;
        }
        if let Some(x) = memo.get(&(n, e, v.to_bits())) {
            return *x;
        }
        let mask = allowed[n][&e][cell_of(v)];
        assert_ne!(mask, 0, "optimal policy reached an unsafe state");
        let mut best = f64::INFINITY;
        for (m, q) in Q.iter().enumerate() {
            if mask & (1 << m) == 0 {
                continue;
            }
            let mut value = 0.0;
            for (p, r, e2) in e.successors() {
                let (_, end, cost) = period(v, *q, r);
                value += p * (cost + go(n + 1, e2, end, allowed, memo));
            }
            best = best.min(value);
        }
        memo.insert((n, e, v.to_bits()), best);
        best
    }
    go(0, Env::start(), V0, allowed, &mut HashMap::new())
}

/// Exact expected cost of a deterministic decision rule `(n, env, v) -> mode`.
pub fn policy_cost(decide: &mut dyn FnMut(usize, Env, f64) -> usize) -> f64 {
    fn go(n: usize, e: Env, v: f64, decide: &mut dyn FnMut(usize, Env, f64) -> usize) -> f64 {
        if n == PERIODS {
            return 0.0;
        }
        let q = Q[decide(n, e, v)];
        e.successors()
            .into_iter()
            .map(|(p, r, e2)| {
                let (_, end, cost) = period(v, q, r);
                p * (cost + go(n + 1, e2, end, decide))
            })
            .sum()
    }
    go(0, Env::start(), V0, decide)
}
