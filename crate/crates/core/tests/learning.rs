mod support;

use pond_core::synthesis::{synthesize_safe, PermissiveStrategy};
use pond_core::{
    default_valve_table, evaluate, q_learn, ControlModeId, LearnParams, Model, Observer, PondError, PondParams,
    RainProgram, ShieldedPolicy, StaticStrategy, StrategyFile, TieBreak,
};

fn shield() -> PermissiveStrategy {
    let model = support::model();
    synthesize_safe(&model, &support::grid(&model)).unwrap()
}

#[test]
fn singleton_shield_leaves_nothing_to_learn() {
    let model = support::model();
    let mut s = shield();
    // forbid the closed valve everywhere: the open valve is then the only choice
    for layer in &mut s.layers {
        for (i, lim) in layer.limits.iter_mut().enumerate() {
            if i % 2 == 0 {
                *lim = 0;
            }
        }
    }
    let init = model.initial(support::V0, 0.0).unwrap();
    let learned = q_learn(&model, &s, &init, &LearnParams::default(), 3).unwrap().strategy;
    let open = ShieldedPolicy { shield: &s, tie: TieBreak::Highest };
    let a = evaluate(&model, &learned, &init, 300, 8, Observer::Cost).unwrap();
    let b = evaluate(&model, &open, &init, 300, 8, Observer::Cost).unwrap();
    assert_eq!(a.values, b.values);
    let always_open = support::policy_cost(&mut |_, _, _| 1);
    assert!((a.mean - always_open).abs() < 3.0 * a.half_width.max(1e-9));
}

#[test]
fn equal_seeds_give_equal_tables_and_strategies() {
    let model = support::model();
    let s = shield();
    let init = model.initial(support::V0, 0.0).unwrap();
    let params = LearnParams { max_generations: 8, ..LearnParams::default() };
    let a = q_learn(&model, &s, &init, &params, 21).unwrap();
    let b = q_learn(&model, &s, &init, &params, 21).unwrap();
    assert_eq!(a.table, b.table);
    assert_eq!(a.strategy.ranking, b.strategy.ranking);
    assert_eq!(a.log, b.log);
    assert!(!a.table.entries.is_empty());
}

#[test]
fn learned_strategy_beats_random_choice_inside_the_shield() {
    let model = support::model();
    let s = shield();
    let init = model.initial(support::V0, 0.0).unwrap();
    let learned = q_learn(&model, &s, &init, &LearnParams::default(), 5).unwrap().strategy;
    let uniform = ShieldedPolicy { shield: &s, tie: TieBreak::Uniform };
    let a = evaluate(&model, &learned, &init, 4000, 77, Observer::Cost).unwrap();
    let b = evaluate(&model, &uniform, &init, 4000, 77, Observer::Cost).unwrap();
    assert!(a.mean + a.half_width < b.mean - b.half_width, "learned {a}, uniform {b}");
}

#[test]
fn dry_weather_from_empty_costs_the_full_horizon_with_no_spread() {
    let p = PondParams::vilhelmsborg();
    let m = Model::new(p, default_valve_table(95.0, 60.0).unwrap(), RainProgram::dry(), 0.5, 4320.0).unwrap();
    let init = m.initial(0.0, 0.0).unwrap();
    let r = evaluate(&m, &StaticStrategy { mode: ControlModeId(1) }, &init, 10, 1, Observer::Cost).unwrap();
    assert_eq!((r.mean, r.half_width, r.n_runs), (4320.0, 0.0, 10));
    let o = evaluate(&m, &StaticStrategy { mode: ControlModeId(0) }, &init, 10, 1, Observer::Overflow).unwrap();
    assert_eq!(o.interval(), (0.0, 0.0));
}

#[test]
fn evaluation_needs_two_runs() {
    let model = support::model();
    let init = model.initial(support::V0, 0.0).unwrap();
    let err = evaluate(&model, &StaticStrategy { mode: ControlModeId(1) }, &init, 1, 1, Observer::Cost).unwrap_err();
    assert!(matches!(err, PondError::InvalidParam(_)), "{err}");
}

#[test]
fn learning_from_an_unsafe_start_is_refused() {
    let model = support::model();
    let init = model.initial(support::W - 0.5, 0.0).unwrap();
    let err = q_learn(&model, &shield(), &init, &LearnParams::default(), 1).unwrap_err();
    assert!(matches!(err, PondError::Infeasible(_)), "{err}");
}

#[test]
fn bad_learning_parameters_are_rejected() {
    let model = support::model();
    let init = model.initial(support::V0, 0.0).unwrap();
    for params in [
        LearnParams { successful_runs: 0, ..LearnParams::default() },
        LearnParams { successful_runs: 200, max_runs: 100, ..LearnParams::default() },
        LearnParams { epsilon_start: 1.5, ..LearnParams::default() },
    ] {
        let err = q_learn(&model, &shield(), &init, &params, 1).unwrap_err();
        assert!(matches!(err, PondError::InvalidParam(_)), "{err}");
    }
}

#[test]
fn deterministic_strategy_files_round_trip() {
    let model = support::model();
    let init = model.initial(support::V0, 0.0).unwrap();
    let learned = q_learn(&model, &shield(), &init, &LearnParams::default(), 9).unwrap().strategy;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("learned.strategy");
    StrategyFile::Deterministic(learned.clone()).save(&path).unwrap();
    let StrategyFile::Deterministic(back) = StrategyFile::load(&path).unwrap() else {
        panic!("wrong kind");
    };
    assert_eq!(back.shield, learned.shield);
    assert_eq!(back.coarsening, learned.coarsening);
    assert_eq!(back.ranking, learned.ranking);
    let a = evaluate(&model, &learned, &init, 200, 4, Observer::Cost).unwrap();
    let b = evaluate(&model, &back, &init, 200, 4, Observer::Cost).unwrap();
    assert_eq!(a.values, b.values);
}
