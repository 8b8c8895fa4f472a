//! Experiment driver shared by the command line and the replication bundle.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::control::{StaticStrategy, StrategyFile};
use crate::env::PondParams;
use crate::error::{PondError, Result};
use crate::hmdp::{derive_seed, simulate_recorded, Configuration, Model, Policy, Trajectory};
use crate::learning::{evaluate, q_learn, save_training_log, EvalResult, LearnOutcome, Observer};
use crate::plot::{save_svg, PlotSpec};
use crate::synthesis::{check_feasible, synthesize_safe, DecisionGrid, FeasibilityReport, PermissiveStrategy};

/// Salt separating the learner's random stream from evaluation runs.
const LEARN_SALT: u64 = 0x4C45_4152_4E00_0000;

pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: Model<PondParams>,
    pub grid: DecisionGrid,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = config.model()?;
        let grid = DecisionGrid::for_model(&model, &config.grid)?;
        Ok(Experiment { config, model, grid })
    }

    pub fn initial(&self, w0: f64) -> Result<Configuration> {
        self.model.initial(w0, self.config.initial_storage_mm)
    }

    pub fn static_strategy(&self) -> StaticStrategy {
        StaticStrategy { mode: self.config.static_mode() }
    }

    pub fn synthesize(&self) -> Result<PermissiveStrategy> {
        synthesize_safe(&self.model, &self.grid)
    }

    pub fn feasibility(&self, shield: &PermissiveStrategy, w0: f64) -> Result<FeasibilityReport> {
        check_feasible(shield, &self.model.plant, &self.initial(w0)?)
    }

    pub fn learn(&self, shield: &PermissiveStrategy, w0: f64) -> Result<LearnOutcome> {
        q_learn(&self.model, shield, &self.initial(w0)?, &self.config.learn, derive_seed(self.config.seed ^ LEARN_SALT, 0))
    }

    /// Run `i` of every strategy sees the same rain, so comparisons use
    /// common random numbers.
    pub fn evaluate(&self, policy: &dyn Policy, w0: f64, observer: Observer) -> Result<EvalResult> {
        evaluate(&self.model, policy, &self.initial(w0)?, self.config.eval_runs, self.config.seed, observer)
    }

    pub fn traces(&self, policy: &dyn Policy, w0: f64, runs: usize) -> Result<Vec<Trajectory>> {
        let init = self.initial(w0)?;
        (0..runs).map(|i| simulate_recorded(&self.model, policy, &init, derive_seed(self.config.seed, i as u64))).collect()
    }

    /// Writes `run_XX.csv` per trace and an overlay `plot.svg` into `dir`.
    pub fn write_traces(&self, dir: &Path, title: &str, runs: &[Trajectory]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| PondError::io(dir, e))?;
        for (i, t) in runs.iter().enumerate() {
            t.save_csv(&dir.join(format!("run_{i:02}.csv")))?;
        }
        let spec = PlotSpec { title, horizon: self.model.horizon, max_level: self.config.pond.max_level_cm };
        save_svg(&dir.join("plot.svg"), &spec, runs)
    }
}

/// One line of the replication summary.
#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub scenario: String,
    pub w0: f64,
    pub strategy: String,
    pub feasible: bool,
    pub overflow: Option<EvalResult>,
    pub cost: Option<EvalResult>,
    /// Runs of the trace plot that overflowed.
    pub overflowing_traces: Option<usize>,
}

pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn row(&self, scenario: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.scenario == scenario)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scenario,w0_cm,strategy,feasible,E_o,E_o_half_width,E_c,E_c_half_width,overflowing_traces\n");
        let num = |e: &Option<EvalResult>| e.as_ref().map_or((String::new(), String::new()), |e| (fmt6(e.mean), fmt6(e.half_width)));
        for r in &self.rows {
            let (o, oh) = num(&r.overflow);
            let (c, ch) = num(&r.cost);
            let tr = r.overflowing_traces.map_or(String::new(), |n| n.to_string());
            writeln!(s, "{},{},{},{},{o},{oh},{c},{ch},{tr}", r.scenario, r.w0, r.strategy, r.feasible).unwrap();
        }
        s
    }

    /// Aligned table for the terminal.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<16} {:>6} {:<13} {:>8} {:>18} {:>20} {:>8}\n", "scenario", "w0", "strategy", "feasible", "E(o)", "E(c)", "traces");
        let pm = |e: &Option<EvalResult>| e.as_ref().map_or("-".to_string(), |e| format!("{:.3} ± {:.3}", e.mean, e.half_width));
        for r in &self.rows {
            let tr = r.overflowing_traces.map_or("-".to_string(), |n| format!("{n} ovf"));
            writeln!(
                s,
                "{:<16} {:>6} {:<13} {:>8} {:>18} {:>20} {:>8}",
                r.scenario,
                r.w0,
                r.strategy,
                r.feasible,
                pm(&r.overflow),
                pm(&r.cost),
                tr
            )
            .unwrap();
        }
        s
    }
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Runs the packaged experiment set into `out`: static and learned control
/// from 100 cm and from an empty pond, and the feasibility check at 150 cm.
/// `progress` receives one line per finished stage.
pub fn replicate(config: ExperimentConfig, out: &Path, progress: &mut dyn FnMut(&str)) -> Result<Summary> {
    let exp = Experiment::new(config)?;
    std::fs::create_dir_all(out).map_err(|e| PondError::io(out, e))?;
    let plot_runs = exp.config.plot_runs;
    let mut rows = Vec::new();

    let shield = exp.synthesize()?;
    StrategyFile::Permissive(shield.clone()).save(&out.join("shield.strategy"))?;
    progress("synthesized the safe strategy");

    let stat = exp.static_strategy();
    for (w0, tag) in [(100.0, "w100"), (0.0, "w0")] {
        let traces = exp.traces(&stat, w0, plot_runs)?;
        exp.write_traces(&out.join(format!("static_{tag}")), &format!("static control, w0 = {w0} cm"), &traces)?;
        rows.push(SummaryRow {
            scenario: format!("static_{tag}"),
            w0,
            strategy: "static".into(),
            feasible: true,
            overflow: Some(exp.evaluate(&stat, w0, Observer::Overflow)?),
            cost: Some(exp.evaluate(&stat, w0, Observer::Cost)?),
            overflowing_traces: Some(overflowing(&traces)),
        });
        progress(&format!("evaluated static control from {w0} cm"));

        let report = exp.feasibility(&shield, w0)?;
        if !report.feasible {
            rows.push(SummaryRow {
                scenario: format!("learned_{tag}"),
                w0,
                strategy: "learned".into(),
                feasible: false,
                overflow: None,
                cost: None,
                overflowing_traces: None,
            });
            progress(&format!("no safe strategy from {w0} cm"));
            continue;
        }
        let learned = exp.learn(&shield, w0)?;
        let dir = out.join(format!("learned_{tag}"));
        let traces = exp.traces(&learned.strategy, w0, plot_runs)?;
        exp.write_traces(&dir, &format!("shielded learned control, w0 = {w0} cm"), &traces)?;
        save_training_log(&learned.log, &dir.join("training_log.csv"))?;
        StrategyFile::Deterministic(learned.strategy.clone()).save(&out.join(format!("learned_{tag}.strategy")))?;
        rows.push(SummaryRow {
            scenario: format!("learned_{tag}"),
            w0,
            strategy: "learned".into(),
            feasible: true,
            overflow: Some(exp.evaluate(&learned.strategy, w0, Observer::Overflow)?),
            cost: Some(exp.evaluate(&learned.strategy, w0, Observer::Cost)?),
            overflowing_traces: Some(overflowing(&traces)),
        });
        progress(&format!("learned and evaluated shielded control from {w0} cm"));
    }

    let report = exp.feasibility(&shield, 150.0)?;
    std::fs::write(out.join("feasibility_w150.txt"), format!("{report}\n")).map_err(|e| PondError::io(out, e))?;
    rows.push(SummaryRow {
        scenario: "shield_w150".into(),
        w0: 150.0,
        strategy: "shield".into(),
        feasible: report.feasible,
        overflow: None,
        cost: None,
        overflowing_traces: None,
    });
    progress("checked feasibility from 150 cm");

    let summary = Summary { rows };
    std::fs::write(out.join("summary.csv"), summary.to_csv()).map_err(|e| PondError::io(out, e))?;
    Ok(summary)
}

fn overflowing(traces: &[Trajectory]) -> usize {
    traces.iter().filter(|t| t.final_row().is_some_and(|r| r.overflow > 0.0)).count()
}
