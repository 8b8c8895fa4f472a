//! Shielded tabular Q-learning of the expected sedimentation cost, and the
//! Monte Carlo evaluator.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::control::{Coarsening, DeterministicStrategy, LearnKey, ModeSet, MAX_MODES};
use crate::error::{PondError, Result};
use crate::hmdp::{derive_seed, simulate, Configuration, ControlModeId, DecisionPoint, Model, Plant, Policy};
use crate::synthesis::{check_feasible, PermissiveStrategy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnParams {
    /// Episodes to complete per generation.
    pub successful_runs: usize,
    /// Cap on attempted episodes per generation.
    pub max_runs: usize,
    /// Cheapest episodes of a generation replayed once more.
    pub good_runs: usize,
    /// Episodes used to evaluate the greedy strategy after each generation.
    pub eval_runs: usize,
    pub max_generations: usize,
    /// Generations without evaluation improvement before stopping.
    pub patience: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub coarsening: Coarsening,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams {
            successful_runs: 40,
            max_runs: 100,
            good_runs: 20,
            eval_runs: 20,
            max_generations: 30,
            patience: 30,
            epsilon_start: 0.5,
            epsilon_end: 0.05,
            coarsening: Coarsening::default(),
        }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<()> {
        if self.successful_runs == 0 || self.max_runs == 0 || self.eval_runs == 0 || self.max_generations == 0 {
            return Err(PondError::invalid("learning run counts must be positive"));
        }
        if self.successful_runs > self.max_runs {
            return Err(PondError::invalid("successful_runs exceeds max_runs"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err(PondError::invalid("exploration rates must lie in [0, 1]"));
        }
        self.coarsening.validate()
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over the generations.
    pub fn epsilon(&self, generation: usize) -> f64 {
        if self.max_generations <= 1 {
            return self.epsilon_start;
        }
        let f = generation as f64 / (self.max_generations - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f.min(1.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QEntry {
    pub q: [f64; MAX_MODES],
    pub visits: [u32; MAX_MODES],
}

/// Expected remaining cost per learning key and mode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QTable {
    pub entries: HashMap<LearnKey, QEntry>,
}

impl QTable {
    pub fn get(&self, key: &LearnKey, mode: ControlModeId) -> Option<f64> {
        let e = self.entries.get(key)?;
        (e.visits[mode.index()] > 0).then_some(e.q[mode.index()])
    }

    /// Lowest visited Q among `allowed`, ties toward the larger outflow.
    pub fn best(&self, key: &LearnKey, allowed: ModeSet) -> Option<(ControlModeId, f64)> {
        let e = self.entries.get(key)?;
        let mut best: Option<(ControlModeId, f64)> = None;
        for m in allowed.iter().rev() {
            if e.visits[m.index()] == 0 {
                continue;
            }
            let q = e.q[m.index()];
            if best.is_none_or(|(_, b)| q < b) {
                best = Some((m, q));
            }
        }
        best
    }

    fn update(&mut self, key: LearnKey, mode: ControlModeId, target: f64) -> f64 {
        let e = self.entries.entry(key).or_default();
        let i = mode.index();
        let alpha = 1.0 / (1.0 + e.visits[i] as f64);
        e.q[i] += alpha * (target - e.q[i]);
        e.visits[i] += 1;
        e.q[i]
    }

    /// Visited modes per key ordered by Q, ties toward larger outflow.
    pub fn ranking(&self) -> BTreeMap<LearnKey, Vec<ControlModeId>> {
        self.entries
            .iter()
            .map(|(k, e)| {
                let mut modes: Vec<ControlModeId> =
                    (0..MAX_MODES as u8).map(ControlModeId).filter(|m| e.visits[m.index()] > 0).collect();
                modes.sort_by(|a, b| e.q[a.index()].total_cmp(&e.q[b.index()]).then(b.cmp(a)));
                (*k, modes)
            })
            .collect()
    }

    /// Entries in key order, for logging and comparisons.
    pub fn sorted(&self) -> Vec<(LearnKey, QEntry)> {
        let mut v: Vec<_> = self.entries.iter().map(|(k, e)| (*k, *e)).collect();
        v.sort_by_key(|e| e.0);
        v
    }
}

/// One decision of an episode.
#[derive(Clone, Copy, Debug)]
struct Step {
    key: LearnKey,
    allowed: ModeSet,
    mode: ControlModeId,
    cost_before: f64,
}

#[derive(Clone, Debug)]
struct Episode {
    steps: Vec<Step>,
    final_cost: f64,
}

impl Episode {
    fn total(&self) -> f64 {
        self.final_cost - self.steps.first().map_or(0.0, |s| s.cost_before)
    }
}

/// ε-greedy over the shield, recording every decision.
struct Explorer<'a> {
    shield: &'a PermissiveStrategy,
    table: &'a QTable,
    coarsening: Coarsening,
    epsilon: f64,
    steps: RefCell<Vec<Step>>,
}

impl Policy for Explorer<'_> {
    fn choose(&self, point: &DecisionPoint<'_>, rng: &mut dyn RngCore) -> Result<ControlModeId> {
        let (cell, allowed) = self.shield.allowed_nonempty(point)?;
        let key = self.coarsening.key(&cell);
        let explore = rng.random::<f64>() < self.epsilon;
        let mode = if explore {
            allowed.iter().nth(rng.random_range(0..allowed.len()))
        } else {
            self.table.best(&key, allowed).map(|b| b.0).or_else(|| allowed.highest())
        }
        .expect("non-empty mode set");
        if !allowed.contains(mode) {
            return Err(PondError::Internal(format!("learner chose mode {} outside the shield", mode.0)));
        }
        self.steps.borrow_mut().push(Step { key, allowed, mode, cost_before: point.config.x.cost });
        Ok(mode)
    }
}

/// Per-generation training record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub episodes: usize,
    pub mean_eval_cost: f64,
    pub epsilon: f64,
}

pub fn write_training_log<W: Write>(log: &[GenerationLog], mut out: W) -> std::io::Result<()> {
    writeln!(out, "generation,episodes,mean_eval_cost,epsilon")?;
    for g in log {
        writeln!(out, "{},{},{:.6},{:.4}", g.generation, g.episodes, g.mean_eval_cost, g.epsilon)?;
    }
    Ok(())
}

pub fn save_training_log(log: &[GenerationLog], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_training_log(log, &mut buf).expect("write to memory");
    std::fs::write(path, buf).map_err(|e| PondError::io(path, e))
}

#[derive(Clone, Debug)]
pub struct LearnOutcome {
    pub strategy: DeterministicStrategy,
    pub table: QTable,
    pub log: Vec<GenerationLog>,
}

fn backup(table: &mut QTable, ep: &Episode, horizon: f64) -> Result<()> {
    let mut next_value = 0.0;
    let mut next_cost = ep.final_cost;
    for st in ep.steps.iter().rev() {
        let target = (next_cost - st.cost_before) + next_value;
        let q = table.update(st.key, st.mode, target);
        if !(0.0..=horizon + 1e-9).contains(&q) {
            return Err(PondError::Internal(format!("Q-value {q} outside [0, {horizon}]")));
        }
        next_value = table.best(&st.key, st.allowed).map_or(q, |b| b.1);
        next_cost = st.cost_before;
    }
    Ok(())
}

fn greedy(shield: &PermissiveStrategy, table: &QTable, coarsening: Coarsening) -> DeterministicStrategy {
    DeterministicStrategy { shield: shield.clone(), coarsening, ranking: table.ranking() }
}

/// Learns a deterministic strategy minimising the expected final cost
/// `c(H)` inside the shield. All randomness derives from `seed`.
pub fn q_learn<P: Plant>(
    model: &Model<P>,
    shield: &PermissiveStrategy,
    init: &Configuration,
    params: &LearnParams,
    seed: u64,
) -> Result<LearnOutcome> {
    params.validate()?;
    let report = check_feasible(shield, &model.plant, init)?;
    if !report.feasible {
        return Err(PondError::Infeasible(format!(
            "no safe mode at w = {} cm (maximal safe level {:?})",
            report.level, report.max_safe_level
        )));
    }
    let horizon = model.horizon;
    let mut table = QTable::default();
    let mut log = Vec::new();
    let mut best: Option<(f64, DeterministicStrategy)> = None;
    let mut stale = 0;
    let mut episode_no = 0u64;
    for gen in 0..params.max_generations {
        let epsilon = params.epsilon(gen);
        let mut episodes = Vec::new();
        let mut attempts = 0;
        while episodes.len() < params.successful_runs && attempts < params.max_runs {
            attempts += 1;
            let explorer = Explorer {
                shield,
                table: &table,
                coarsening: params.coarsening,
                epsilon,
                steps: RefCell::new(Vec::new()),
            };
            let run_seed = derive_seed(seed, episode_no);
            episode_no += 1;
            match simulate(model, &explorer, init, run_seed, &mut ()) {
                Ok(end) => {
                    let ep = Episode { steps: explorer.steps.into_inner(), final_cost: end.x.cost };
                    backup(&mut table, &ep, horizon)?;
                    episodes.push(ep);
                }
                Err(PondError::StrategyGap { .. } | PondError::OutOfGrid { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        episodes.sort_by(|a, b| a.total().total_cmp(&b.total()));
        for ep in episodes.iter().take(params.good_runs) {
            backup(&mut table, ep, horizon)?;
        }
        let candidate = greedy(shield, &table, params.coarsening);
        let eval_seed = derive_seed(seed ^ 0x5EED_E7A1, gen as u64);
        let score = evaluate(model, &candidate, init, params.eval_runs.max(2), eval_seed, Observer::Cost)?.mean;
        log.push(GenerationLog { generation: gen, episodes: episodes.len(), mean_eval_cost: score, epsilon });
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, candidate));
            stale = 0;
        } else {
            stale += 1;
            if stale >= params.patience {
                break;
            }
        }
    }
    let strategy = best.map(|b| b.1).expect("at least one generation");
    Ok(LearnOutcome { strategy, table, log })
}

/// Observer whose final value is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observer {
    /// Accumulated overflow duration o.
    #[serde(rename = "o")]
    Overflow,
    /// Accumulated sedimentation cost c.
    #[serde(rename = "c")]
    Cost,
}

impl Observer {
    pub fn value(self, cfg: &Configuration) -> f64 {
        match self {
            Observer::Overflow => cfg.x.overflow,
            Observer::Cost => cfg.x.cost,
        }
    }
}

impl fmt::Display for Observer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Observer::Overflow => "o",
            Observer::Cost => "c",
        })
    }
}

impl FromStr for Observer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "o" => Ok(Observer::Overflow),
            "c" => Ok(Observer::Cost),
            _ => Err(format!("unknown observer '{s}' (expected o or c)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub observer: Observer,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% confidence interval.
    pub half_width: f64,
    pub n_runs: usize,
    pub values: Vec<f64>,
}

impl EvalResult {
    pub fn from_values(observer: Observer, values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        EvalResult { observer, mean, half_width: 1.96 * (var / n).sqrt(), n_runs: values.len(), values }
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.mean - self.half_width, self.mean + self.half_width)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "run,{}", self.observer)?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{i},{v:.6}")?;
        }
        Ok(())
    }
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "E({}) = {:.3} ± {:.3} over {} runs", self.observer, self.mean, self.half_width, self.n_runs)
    }
}

/// `n_runs` independent runs with seeds derived from `seed`; mean and 95%
/// confidence half-width of the observer's final value.
pub fn evaluate<P: Plant, Pol: Policy + ?Sized>(
    model: &Model<P>,
    policy: &Pol,
    init: &Configuration,
    n_runs: usize,
    seed: u64,
    observer: Observer,
) -> Result<EvalResult> {
    if n_runs < 2 {
        return Err(PondError::invalid("evaluation needs at least two runs"));
    }
    let values = (0..n_runs)
        .map(|i| simulate(model, policy, init, derive_seed(seed, i as u64), &mut ()).map(|end| observer.value(&end)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalResult::from_values(observer, values))
}
