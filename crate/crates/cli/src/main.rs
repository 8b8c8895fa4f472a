use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pond_core::config::RainSource;
use pond_core::learning::save_training_log;
use pond_core::{replicate, Experiment, ExperimentConfig, Observer, RainProgram, StrategyFile};

const PACKAGED_CONFIG: &str = include_str!("../../../configs/pond.json");
const PACKAGED_RAIN: &str = include_str!("../../../configs/forecast.rain.json");

#[derive(Parser)]
#[command(name = "pondctl", version, about = "Safe and cost-optimal valve control for detention ponds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults to the packaged calibrated pond.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate runs and write one CSV per run plus an overlay SVG.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Strategy file; the static medium setting when omitted.
        #[arg(long)]
        strategy: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Synthesize the maximally permissive safe strategy and report feasibility.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Learn a cost-optimal strategy inside a safe strategy.
    Learn {
        #[command(flatten)]
        common: Common,
        /// Permissive strategy used as the shield; synthesized when omitted.
        #[arg(long)]
        strategy: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Estimate the expected final value of an observer.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Option<PathBuf>,
        #[arg(long, default_value = "c")]
        observer: Observer,
        #[arg(long)]
        runs: Option<usize>,
        /// Directory for the per-run values; printing only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole experiment set and write a summary table.
    Replicate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "replication")]
        out: PathBuf,
    },
}

fn packaged_config() -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(PACKAGED_CONFIG)?;
    if let RainSource::Path(_) = cfg.rain {
        let prog: RainProgram = serde_json::from_str(PACKAGED_RAIN).context("packaged rain program")?;
        cfg.rain = RainSource::Inline(prog);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => packaged_config()?,
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_strategy(path: &Path, exp: &Experiment) -> Result<StrategyFile> {
    let file = StrategyFile::load(path).with_context(|| format!("reading strategy {}", path.display()))?;
    if file.valves() != &exp.model.valves {
        bail!("strategy {} was built for another valve table", path.display());
    }
    let grid = match &file {
        StrategyFile::Static { .. } => None,
        StrategyFile::Permissive(p) => Some(&p.grid),
        StrategyFile::Deterministic(d) => Some(&d.shield.grid),
    };
    if let Some(g) = grid {
        if g.decisions != exp.model.decisions() || g.program_len != exp.model.rain.len() {
            bail!("strategy {} does not match the horizon or rain program of the config", path.display());
        }
    }
    Ok(file)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, strategy, runs, out } => {
            let exp = Experiment::new(load_config(&common)?)?;
            let file = strategy.as_deref().map(|p| load_strategy(p, &exp)).transpose()?;
            let stat = exp.static_strategy();
            let policy = file.as_ref().map(|f| f.policy(exp.config.tie_break));
            let policy: &dyn pond_core::Policy = match &policy {
                Some(p) => p.as_ref(),
                None => &stat,
            };
            let w0 = exp.config.initial_level_cm;
            let traces = exp.traces(policy, w0, runs.unwrap_or(exp.config.plot_runs))?;
            let name = file.as_ref().map_or("static", |f| f.kind());
            exp.write_traces(&out, &format!("{name} control, w0 = {w0} cm"), &traces)?;
            println!("run,o_min,c");
            for (i, t) in traces.iter().enumerate() {
                let (o, c) = t.final_row().map_or((0.0, 0.0), |r| (r.overflow, r.cost));
                println!("{i},{o},{c:.6}");
            }
        }
        Command::Synthesize { common, out } => {
            let exp = Experiment::new(load_config(&common)?)?;
            let shield = exp.synthesize()?;
            create_dir(&out)?;
            let report = exp.feasibility(&shield, exp.config.initial_level_cm)?;
            StrategyFile::Permissive(shield).save(&out.join("shield.strategy"))?;
            let text = format!("{report}\n");
            std::fs::write(out.join("feasibility.txt"), &text).context("writing feasibility report")?;
            print!("{text}");
        }
        Command::Learn { common, strategy, out } => {
            let exp = Experiment::new(load_config(&common)?)?;
            let shield = match strategy {
                Some(p) => match load_strategy(&p, &exp)? {
                    StrategyFile::Permissive(s) => s,
                    StrategyFile::Deterministic(d) => d.shield,
                    StrategyFile::Static { .. } => bail!("{} is a static strategy, not a shield", p.display()),
                },
                None => exp.synthesize()?,
            };
            let learned = exp.learn(&shield, exp.config.initial_level_cm)?;
            create_dir(&out)?;
            StrategyFile::Deterministic(learned.strategy).save(&out.join("learned.strategy"))?;
            save_training_log(&learned.log, &out.join("training_log.csv"))?;
            let last = learned.log.iter().map(|g| g.mean_eval_cost).fold(f64::INFINITY, f64::min);
            println!("generations: {}, best evaluation cost: {last:.3}", learned.log.len());
        }
        Command::Evaluate { common, strategy, observer, runs, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = runs {
                cfg.eval_runs = n;
            }
            let exp = Experiment::new(cfg)?;
            let file = strategy.as_deref().map(|p| load_strategy(p, &exp)).transpose()?;
            let stat = exp.static_strategy();
            let policy = file.as_ref().map(|f| f.policy(exp.config.tie_break));
            let policy: &dyn pond_core::Policy = match &policy {
                Some(p) => p.as_ref(),
                None => &stat,
            };
            let res = exp.evaluate(policy, exp.config.initial_level_cm, observer)?;
            println!("{res}");
            if let Some(dir) = out {
                create_dir(&dir)?;
                let path = dir.join(format!("eval_{observer}.csv"));
                let mut buf = Vec::new();
                res.write_csv(&mut buf)?;
                std::fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Replicate { common, out } => {
            let summary = replicate(load_config(&common)?, &out, &mut |msg| eprintln!("{msg}"))?;
            print!("{}", summary.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
