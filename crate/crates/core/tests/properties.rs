use pond_core::{
    default_valve_table, sample_trace, simulate_recorded, ControlModeId, Model, ModeSet, Phase, PondParams, RainProgram,
    StaticStrategy,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn completed_spells_respect_their_bounds(seed in any::<u64>()) {
        let prog = RainProgram::forecast();
        let trace = sample_trace(&prog, 4320.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut prev = (0.0, Phase::Dry, 0usize);
        for ev in &trace.events {
            let len = ev.time - prev.0;
            let iv = prog.intervals[prev.2];
            let (lo, hi) = match prev.1 {
                Phase::Dry => (iv.dry_min, iv.dry_max),
                Phase::Raining => (iv.rain_min, iv.rain_max),
            };
            prop_assert!(len >= lo - 1e-9 && len <= hi + 1e-9, "{:?} spell of {len} outside [{lo}, {hi}]", prev.1);
            if ev.mode.phase == Phase::Raining {
                let nominal = prog.intervals[ev.mode.interval].intensity;
                let eps = prog.epsilon;
                prop_assert!(ev.intensity >= nominal * (1.0 - eps) - 1e-12);
                prop_assert!(ev.intensity <= nominal * (1.0 + eps) + 1e-12);
            } else {
                prop_assert_eq!(ev.intensity, 0.0);
            }
            prev = (ev.time, ev.mode.phase, ev.mode.interval);
        }
    }

    #[test]
    fn level_stays_in_range_and_observers_never_decrease(
        scale in 1.0f64..2000.0,
        mode in 0u8..3,
        w0 in 0.0f64..=300.0,
        seed in any::<u64>(),
    ) {
        let p = PondParams::vilhelmsborg().with_inflow_scale(scale);
        let m = Model::new(p, default_valve_table(95.0, 60.0).unwrap(), RainProgram::forecast(), 0.5, 1440.0).unwrap();
        let init = m.initial(w0, 0.0).unwrap();
        let t = simulate_recorded(&m, &StaticStrategy { mode: ControlModeId(mode) }, &init, seed).unwrap();
        for r in &t.rows {
            prop_assert!((0.0..=300.0).contains(&r.w), "level {}", r.w);
        }
        for w in t.rows.windows(2) {
            prop_assert!(w[1].t > w[0].t);
            prop_assert!(w[1].overflow >= w[0].overflow);
            prop_assert!(w[1].cost >= w[0].cost);
            // cost rate is at most one, overflow rate exactly zero or one
            prop_assert!(w[1].cost - w[0].cost <= w[1].t - w[0].t + 1e-9);
            prop_assert!(w[1].overflow - w[0].overflow <= w[1].t - w[0].t + 1e-9);
        }
        let last = t.final_row().unwrap();
        prop_assert!((last.t - 1440.0).abs() < 1e-9);
        prop_assert!(last.cost + 1e-9 >= 0.0 && last.cost <= 1440.0 + 1e-9);
    }

    #[test]
    fn mode_sets_behave_like_bit_sets(a in any::<u8>(), b in any::<u8>()) {
        let (x, y) = (ModeSet(a), ModeSet(b));
        prop_assert_eq!(x.len(), a.count_ones() as usize);
        prop_assert_eq!(x.is_subset(y), a & !b == 0);
        prop_assert_eq!(x.iter().count(), x.len());
        prop_assert_eq!(x.highest().map(|m| m.0), (a != 0).then(|| 7 - a.leading_zeros() as u8));
        prop_assert_eq!(x.lowest().map(|m| m.0), (a != 0).then(|| a.trailing_zeros() as u8));
        for m in x.iter() {
            prop_assert!(x.contains(m));
        }
    }
}
