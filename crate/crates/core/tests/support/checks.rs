//! Checks shared by the integration tests and the acceptance run. Each
//! returns a short detail line on success and the reason on failure.
#![allow(clippy::needless_range_loop)]

use std::collections::HashMap;

use pond_core::env::{catchment_inflow, PondParams};
use pond_core::hmdp::integrate_step;
use pond_core::synthesis::{synthesize_safe, CellRef};
use pond_core::{
    default_valve_table, derive_seed, evaluate, q_learn, sample_trace, simulate_recorded, worst_case_envelope,
    Configuration, ContinuousState, ControlModeId, DecisionPoint, EnvMode, LearnParams, Model, Observer, Phase, Plant,
    RainProgram, StaticStrategy,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Env, CELLS, PERIODS};

pub type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg()) }
}

/// S approaches rain/k within 0.1% after 10/k minutes of constant rain.
pub fn catchment_steady_state() -> Check {
    let p = PondParams::vilhelmsborg();
    let valves = default_valve_table(95.0, 60.0).unwrap();
    let mut worst: f64 = 0.0;
    for rain in [0.00952, 0.02545, 0.03478 * 1.1] {
        let mut c = Configuration {
            control: ControlModeId(1),
            env: EnvMode { phase: Phase::Raining, interval: 0 },
            x: ContinuousState { rain, ..ContinuousState::default() },
        };
        let steps = (10.0 / p.reaction_per_min / 0.5) as usize;
        for _ in 0..steps {
            c = integrate_step(&c, &p, &valves, 0.5).map_err(|e| e.to_string())?;
        }
        let s_star = rain / p.reaction_per_min;
        let rel = (c.x.storage - s_star).abs() / s_star;
        let q_star = rain * 1e-3 * p.catchment_area_m2;
        let rel_q = (catchment_inflow(c.x.storage, &p) - q_star).abs() / q_star;
        ensure(rel < 1e-3 && rel_q < 1e-3, || format!("rain {rain}: S off by {rel:.2e}, inflow by {rel_q:.2e}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("largest relative gap {worst:.1e}"))
}

/// Volume change against the trapezoid integral of the net flow; the gap is
/// the Euler error.
pub fn mass_gap(dt: f64) -> Result<f64, String> {
    let p = PondParams::vilhelmsborg().with_inflow_scale(400.0);
    let m = Model::new(p, default_valve_table(95.0, 60.0).unwrap(), RainProgram::forecast(), dt, 600.0).unwrap();
    let init = m.initial(120.0, 0.0).unwrap();
    let t = simulate_recorded(&m, &StaticStrategy { mode: ControlModeId(0) }, &init, 17).map_err(|e| e.to_string())?;
    ensure(t.rows.iter().all(|r| r.w > 0.0 && r.w < 300.0), || "boundary touched".into())?;
    let mut flow = 0.0;
    for w in t.rows.windows(2) {
        let h = w[1].t - w[0].t;
        flow += 0.5 * h * ((w[0].q_in - w[0].q_out) + (w[1].q_in - w[1].q_out));
    }
    let dv = p.volume(t.final_row().unwrap().w) - p.volume(t.rows[0].w);
    Ok((dv - flow).abs())
}

/// The gap stays small and shrinks when dt is halved.
pub fn mass_conservation() -> Check {
    let (a, b) = (mass_gap(0.5)?, mass_gap(0.25)?);
    ensure(a < 5.0, || format!("gap {a:.3} m³ at dt 0.5"))?;
    ensure(b < 0.6 * a, || format!("gap {a:.3} -> {b:.3} m³ does not shrink with dt"))?;
    Ok(format!("gap {a:.3} m³ at dt 0.5, {b:.3} m³ at dt 0.25"))
}

/// No sampled rain intensity exceeds the worst-case envelope.
pub fn envelope_soundness(traces: u64) -> Check {
    let prog = RainProgram::forecast();
    let horizon = 4320.0;
    let env = worst_case_envelope(&prog, horizon);
    let (mut violations, mut raining_points) = (0usize, 0usize);
    for i in 0..traces {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(2024, i));
        let trace = sample_trace(&prog, horizon, &mut rng).map_err(|e| e.to_string())?;
        // the trace is piecewise constant, so only grid points inside rain matter
        let mut start: Option<(f64, f64)> = None;
        let ends = trace.events.iter().map(|e| (e.time, Some(*e))).chain([(horizon, None)]);
        for (time, ev) in ends {
            if let Some((a, r)) = start.take() {
                let mut k = (a / 0.5).ceil() as usize;
                while (k as f64) * 0.5 < time {
                    raining_points += 1;
                    violations += usize::from(r > env.at(k as f64 * 0.5));
                    k += 1;
                }
            }
            if let Some(ev) = ev.filter(|e| e.mode.phase == Phase::Raining) {
                start = Some((ev.time, ev.intensity));
            }
        }
    }
    ensure(violations == 0, || format!("{violations} of {raining_points} rain points above the envelope"))?;
    ensure(raining_points as u64 > traces * 300, || format!("only {raining_points} rain points sampled"))?;
    Ok(format!("{traces} traces, {raining_points} rain points, 0 violations"))
}

/// Synthesized allowed sets against min-max enumeration on the tiny tank.
pub fn synthesis_matches_enumeration() -> Check {
    let model = super::model();
    let shield = synthesize_safe(&model, &super::grid(&model)).map_err(|e| e.to_string())?;
    let oracle = super::minmax_safe();
    let reach = super::reachable();
    let (mut compared, mut mismatches) = (0, 0);
    for n in 0..PERIODS {
        for e in &reach[n] {
            for c in 0..CELLS {
                let cell = CellRef { decision: n, env: e.key(), level: c, storage: 0 };
                let got = shield.allowed(&cell).map(|m| m.0);
                compared += 1;
                mismatches += usize::from(got != Some(oracle[n][e][c]));
            }
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} of {compared} cells differ"))?;
    Ok(format!("{compared} cells compared, 0 mismatches"))
}

/// Greedy learned strategy against the expectimin optimum on the tiny tank.
pub fn learner_matches_optimum() -> Check {
    let model = super::model();
    let shield = synthesize_safe(&model, &super::grid(&model)).map_err(|e| e.to_string())?;
    let init = model.initial(super::V0, 0.0).unwrap();
    let strategy = q_learn(&model, &shield, &init, &LearnParams::default(), 11).map_err(|e| e.to_string())?.strategy;
    let optimum = super::optimal_cost(&super::minmax_safe());
    let mut memo: HashMap<(usize, Env, u64), usize> = HashMap::new();
    let mut decide = |n: usize, e: Env, v: f64| {
        *memo.entry((n, e, v.to_bits())).or_insert_with(|| {
            let mut cfg = model.initial(v, 0.0).unwrap();
            cfg.env = EnvMode { phase: if e.raining { Phase::Raining } else { Phase::Dry }, interval: e.interval };
            cfg.x.env_clock = e.elapsed as f64;
            cfg.x.rain = if e.raining { super::RAIN } else { 0.0 };
            cfg.x.time = n as f64;
            strategy.decide(&DecisionPoint { index: n, config: &cfg, level: v }).unwrap().index()
        })
    };
    let exact = super::policy_cost(&mut decide);
    let mc = evaluate(&model, &strategy, &init, 10_000, 4242, Observer::Cost).map_err(|e| e.to_string())?;
    ensure((mc.mean - optimum).abs() <= 1.0, || format!("sampled {mc}, optimum {optimum:.4}"))?;
    ensure(exact - optimum <= 1.0, || format!("learned {exact:.4}, optimum {optimum:.4}"))?;
    Ok(format!("optimum {optimum:.4}, learned {exact:.4} exact, {:.4} ± {:.4} sampled", mc.mean, mc.half_width))
}
