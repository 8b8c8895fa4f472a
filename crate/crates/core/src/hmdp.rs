//! Hybrid Markov decision process semantics: configurations, periodic
//! controller decisions, stochastic environment switches and fixed-step
//! forward-Euler integration of the flows.

use std::io::Write;
use std::path::Path;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::ValveTable;
use crate::env::bounded_volume_rate;
use crate::error::{PondError, Result};
use crate::rain::{sample_trace_from, EnvStart, RainProgram, RainTrace};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ControlModeId(pub u8);

impl ControlModeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Dry,
    Raining,
}

/// Environment location plus the rain interval it belongs to. An interval
/// index one past the end of the program means the program is exhausted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvMode {
    pub phase: Phase,
    pub interval: usize,
}

/// Continuous part of a configuration. The pond is integrated in volume;
/// the level is derived through the [`Plant`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ContinuousState {
    /// Water volume above the permanent level [m³].
    pub volume: f64,
    /// Catchment storage S [mm].
    pub storage: f64,
    /// Current rain intensity [mm/min].
    pub rain: f64,
    /// Accumulated overflow duration o [min].
    pub overflow: f64,
    /// Accumulated sedimentation cost c.
    pub cost: f64,
    pub env_clock: f64,
    pub ctrl_clock: f64,
    pub time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Configuration {
    pub control: ControlModeId,
    pub env: EnvMode,
    pub x: ContinuousState,
}

impl Configuration {
    pub fn level<P: Plant + ?Sized>(&self, plant: &P) -> f64 {
        level_of(plant, self.x.volume)
    }

    pub fn env_start(&self) -> EnvStart {
        EnvStart { mode: self.env, elapsed: self.x.env_clock, intensity: self.x.rain }
    }
}

/// Physical flows of a reservoir fed by a catchment.
pub trait Plant: Send + Sync + std::fmt::Debug {
    /// Level W at which the reservoir overflows.
    fn max_level(&self) -> f64;
    fn level(&self, volume: f64) -> f64;
    fn volume(&self, level: f64) -> f64;
    /// Inflow [volume/min] from the catchment.
    fn inflow(&self, storage: f64, rain: f64) -> f64;
    fn storage_rate(&self, storage: f64, rain: f64) -> f64;
    /// Steady-state storage under constant rain.
    fn storage_ceiling(&self, rain: f64) -> f64;

    fn max_volume(&self) -> f64 {
        self.volume(self.max_level())
    }
}

/// Level with the two clamps mapped exactly onto 0 and W.
pub fn level_of<P: Plant + ?Sized>(plant: &P, volume: f64) -> f64 {
    if volume <= 0.0 {
        0.0
    } else if volume >= plant.max_volume() {
        plant.max_level()
    } else {
        plant.level(volume)
    }
}

/// Time derivatives of the integrated quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rates {
    pub volume: f64,
    pub storage: f64,
    pub overflow: f64,
    pub cost: f64,
    pub inflow: f64,
}

pub fn rates<P: Plant + ?Sized>(plant: &P, x: &ContinuousState, q_out: f64) -> Rates {
    let v_max = plant.max_volume();
    let at_top = x.volume >= v_max;
    let q_in = plant.inflow(x.storage, x.rain);
    let w = level_of(plant, x.volume);
    Rates {
        volume: bounded_volume_rate(x.volume <= 0.0, at_top, q_in, q_out),
        storage: plant.storage_rate(x.storage, x.rain),
        overflow: if at_top { 1.0 } else { 0.0 },
        cost: 1.0 - w / plant.max_level(),
        inflow: q_in,
    }
}

/// One explicit Euler step of length `dt`. The volume is clamped to
/// `[0, V(W)]` afterwards; all clocks advance by `dt`.
pub fn integrate_step<P: Plant + ?Sized>(
    cfg: &Configuration,
    plant: &P,
    valves: &ValveTable,
    dt: f64,
) -> Result<Configuration> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(PondError::invalid(format!("step size {dt} must be positive")));
    }
    let q_out = valves.q_out(cfg.control)?;
    let r = rates(plant, &cfg.x, q_out);
    let all = [r.volume, r.storage, r.overflow, r.cost];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(PondError::Model { time: cfg.x.time, what: format!("non-finite derivative {r:?}") });
    }
    let mut next = *cfg;
    let x = &mut next.x;
    x.volume = (x.volume + dt * r.volume).clamp(0.0, plant.max_volume());
    x.storage = (x.storage + dt * r.storage).max(0.0);
    x.overflow += dt * r.overflow;
    x.cost += dt * r.cost;
    x.env_clock += dt;
    x.ctrl_clock += dt;
    x.time += dt;
    Ok(next)
}

/// A complete model instance: plant, valve table, rain program and timing.
#[derive(Clone, Debug)]
pub struct Model<P> {
    pub plant: P,
    pub valves: ValveTable,
    pub rain: RainProgram,
    pub dt: f64,
    pub horizon: f64,
    /// Environment state at t = 0.
    pub env_start: EnvStart,
}

impl<P: Plant> Model<P> {
    pub fn new(plant: P, valves: ValveTable, rain: RainProgram, dt: f64, horizon: f64) -> Result<Self> {
        let m = Model { plant, valves, rain, dt, horizon, env_start: EnvStart::default() };
        m.validate()?;
        Ok(m)
    }

    pub fn with_env_start(mut self, start: EnvStart) -> Self {
        self.env_start = start;
        self
    }

    pub fn period(&self) -> f64 {
        self.valves.period
    }

    pub fn steps_per_period(&self) -> usize {
        (self.period() / self.dt).round() as usize
    }

    pub fn decisions(&self) -> usize {
        (self.horizon / self.period()).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.rain.validate()?;
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(PondError::invalid("dt and horizon must be positive"));
        }
        if !is_multiple(self.period(), self.dt) {
            return Err(PondError::invalid(format!("period {} is not a multiple of dt {}", self.period(), self.dt)));
        }
        if !is_multiple(self.horizon, self.period()) {
            return Err(PondError::invalid(format!(
                "horizon {} is not a multiple of the period {}",
                self.horizon,
                self.period()
            )));
        }
        Ok(())
    }

    /// Initial configuration at level `w0` and storage `s0`, in the first
    /// control mode and the model's start environment.
    pub fn initial(&self, w0: f64, s0: f64) -> Result<Configuration> {
        if !(0.0..=self.plant.max_level()).contains(&w0) || s0 < 0.0 {
            return Err(PondError::invalid(format!("initial state w={w0}, S={s0} out of range")));
        }
        let start = self.env_start;
        Ok(Configuration {
            control: ControlModeId(0),
            env: start.mode,
            x: ContinuousState {
                volume: self.plant.volume(w0),
                storage: s0,
                rain: if start.mode.phase == Phase::Raining { start.intensity } else { 0.0 },
                env_clock: start.elapsed,
                ..ContinuousState::default()
            },
        })
    }
}

fn is_multiple(a: f64, b: f64) -> bool {
    let q = a / b;
    q >= 1.0 - 1e-9 && (q - q.round()).abs() < 1e-9
}

/// Derived quantities reported alongside each step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepObs {
    pub level: f64,
    pub q_in: f64,
    pub q_out: f64,
}

/// Receives the state after every step and at every decision.
pub trait StepSink {
    fn step(&mut self, _cfg: &Configuration, _obs: &StepObs) {}
    fn decision(&mut self, _index: usize, _cfg: &Configuration) {}
}

impl StepSink for () {}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub w: f64,
    pub storage: f64,
    pub rain: f64,
    pub q_in: f64,
    pub q_out: f64,
    pub mode: u8,
    pub overflow: f64,
    pub cost: f64,
}

/// Full record of one run: one row per integration step plus the decisions.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub decisions: Vec<(f64, ControlModeId)>,
}

impl Trajectory {
    pub fn final_row(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }

    pub const CSV_HEADER: &'static str =
        "t_min,w_cm,S_mm,rain_mm_per_min,Q_in_m3_per_min,Q_out_m3_per_min,mode,o_min,c";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.6}",
                r.t, r.w, r.storage, r.rain, r.q_in, r.q_out, r.mode, r.overflow, r.cost
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| PondError::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| PondError::io(path, e))
    }
}

impl StepSink for Trajectory {
    fn step(&mut self, cfg: &Configuration, obs: &StepObs) {
        self.rows.push(TrajectoryRow {
            t: cfg.x.time,
            w: obs.level,
            storage: cfg.x.storage,
            rain: cfg.x.rain,
            q_in: obs.q_in,
            q_out: obs.q_out,
            mode: cfg.control.0,
            overflow: cfg.x.overflow,
            cost: cfg.x.cost,
        });
    }

    fn decision(&mut self, _index: usize, cfg: &Configuration) {
        self.decisions.push((cfg.x.time, cfg.control));
    }
}

fn observe<P: Plant + ?Sized>(plant: &P, cfg: &Configuration, q_out: f64) -> StepObs {
    StepObs { level: cfg.level(plant), q_in: plant.inflow(cfg.x.storage, cfg.x.rain), q_out }
}

/// Position in a rain trace: index of the next event to apply.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TraceCursor(pub usize);

/// Advances exactly one control period with the control mode held fixed.
/// Environment switches are applied at their sampled times by splitting the
/// Euler step; a switch exactly at the period end is applied at the end.
pub fn run_period<P: Plant + ?Sized, S: StepSink + ?Sized>(
    cfg: &Configuration,
    plant: &P,
    valves: &ValveTable,
    dt: f64,
    trace: &RainTrace,
    cursor: &mut TraceCursor,
    sink: &mut S,
) -> Result<Configuration> {
    let period = valves.period;
    let steps = (period / dt).round() as usize;
    let q_out = valves.q_out(cfg.control)?;
    let start = cfg.x.time;
    let mut c = *cfg;
    if let Some(ev) = trace.events.get(cursor.0) {
        if ev.time < start {
            return Err(PondError::Internal(format!("event at {} precedes period start {}", ev.time, start)));
        }
    }
    for k in 1..=steps {
        let t_end = start + k as f64 * dt;
        while let Some(ev) = trace.events.get(cursor.0) {
            if ev.time > t_end {
                break;
            }
            let h = ev.time - c.x.time;
            if h > 0.0 {
                c = integrate_step(&c, plant, valves, h)?;
            }
            c.x.time = ev.time;
            c.env = ev.mode;
            c.x.rain = ev.intensity;
            c.x.env_clock = 0.0;
            cursor.0 += 1;
        }
        let h = t_end - c.x.time;
        if h > 0.0 {
            c = integrate_step(&c, plant, valves, h)?;
        }
        c.x.time = t_end;
        sink.step(&c, &observe(plant, &c, q_out));
    }
    c.x.ctrl_clock = period;
    Ok(c)
}

/// What a strategy sees at a decision instant.
#[derive(Clone, Copy, Debug)]
pub struct DecisionPoint<'a> {
    pub index: usize,
    pub config: &'a Configuration,
    /// Level of `config` as seen by the plant [cm].
    pub level: f64,
}

pub trait Policy {
    fn choose(&self, point: &DecisionPoint<'_>, rng: &mut dyn RngCore) -> Result<ControlModeId>;
}

impl<T: Policy + ?Sized> Policy for &T {
    fn choose(&self, point: &DecisionPoint<'_>, rng: &mut dyn RngCore) -> Result<ControlModeId> {
        (**self).choose(point, rng)
    }
}

/// Simulates a run of `model` under `policy` from `init` over the model
/// horizon. The rain trace and any randomised tie-breaks come from one
/// ChaCha stream seeded with `seed`.
pub fn simulate<P: Plant, Pol: Policy + ?Sized, S: StepSink + ?Sized>(
    model: &Model<P>,
    policy: &Pol,
    init: &Configuration,
    seed: u64,
    sink: &mut S,
) -> Result<Configuration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace = sample_trace_from(&model.rain, init.env_start(), model.horizon, &mut rng)?;
    simulate_trace(model, policy, init, &trace, &mut rng, sink)
}

/// Like [`simulate`] but with an explicit rain trace.
pub fn simulate_trace<P: Plant, Pol: Policy + ?Sized, S: StepSink + ?Sized>(
    model: &Model<P>,
    policy: &Pol,
    init: &Configuration,
    trace: &RainTrace,
    rng: &mut dyn RngCore,
    sink: &mut S,
) -> Result<Configuration> {
    let mut cfg = *init;
    cfg.x.time = 0.0;
    let mut cursor = TraceCursor::default();
    let n = model.decisions();
    let period = model.period();
    sink.step(&cfg, &observe(&model.plant, &cfg, model.valves.q_out(cfg.control).unwrap_or(0.0)));
    for i in 0..n {
        cfg.x.time = i as f64 * period;
        cfg.x.ctrl_clock = 0.0;
        let level = cfg.level(&model.plant);
        cfg.control = policy.choose(&DecisionPoint { index: i, config: &cfg, level }, rng)?;
        sink.decision(i, &cfg);
        cfg = run_period(&cfg, &model.plant, &model.valves, model.dt, trace, &mut cursor, sink)?;
    }
    Ok(cfg)
}

/// Convenience wrapper recording the full trajectory.
pub fn simulate_recorded<P: Plant, Pol: Policy + ?Sized>(
    model: &Model<P>,
    policy: &Pol,
    init: &Configuration,
    seed: u64,
) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    simulate(model, policy, init, seed, &mut traj)?;
    Ok(traj)
}

/// Independent per-run seeds derived from one base seed (SplitMix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
