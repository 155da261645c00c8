use uavopt_core::orchestrator::{
    collect_metrics, run_scheme_on, verify_run, Mission, SchemeId, SchemeRun,
};
use uavopt_core::scenario::ScenarioConfig;

fn mission(seed: u64) -> Mission {
    let mut cfg = ScenarioConfig::paper();
    cfg.rng_seed = seed;
    Mission::generate(&cfg).unwrap()
}

fn non_decreasing(h: &[f64]) -> bool {
    h.windows(2).all(|w| w[1] >= w[0] - 1e-6 * w[0].abs())
}

fn strip(run: &SchemeRun) -> String {
    let mut r = run.clone();
    r.scheme = SchemeId::Proposed;
    serde_json::to_string(&r).unwrap()
}

#[test]
fn static_users_make_prediction_irrelevant() {
    for seed in [1, 2] {
        let mut cfg = ScenarioConfig::paper();
        cfg.rng_seed = seed;
        cfg.mobility.mean_speed = 0.0;
        cfg.mobility.speed_std = 0.0;
        let m = Mission::generate(&cfg).unwrap();
        assert_eq!(m.predicted, m.truth);
        let a = run_scheme_on(&m, SchemeId::Proposed).unwrap();
        let b = run_scheme_on(&m, SchemeId::NoPrediction).unwrap();
        assert_eq!(strip(&a), strip(&b), "seed {seed}");
    }
}

#[test]
fn same_seed_same_run() {
    let a = run_scheme_on(&mission(4), SchemeId::Proposed).unwrap();
    let b = run_scheme_on(&mission(4), SchemeId::Proposed).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn every_scheme_keeps_the_invariants_and_dominance_holds_on_average() {
    let seeds: Vec<u64> = (1..=10).collect();
    let schemes = [SchemeId::UpperBound, SchemeId::Proposed, SchemeId::FixedResources];
    let mut mean = [0.0; 3];
    for &seed in &seeds {
        let m = mission(seed);
        for &s in &SchemeId::ALL {
            let run = run_scheme_on(&m, s).unwrap();
            if let Err(e) = verify_run(&run, &m) {
                panic!("{s} seed {seed}: {e:?}");
            }
            assert!(run.slots_used() <= m.n_slots);
            for r in &run.rounds {
                assert!(non_decreasing(&r.bcd_history), "{s} seed {seed} round {}: {:?}", r.round, r.bcd_history);
                assert!(r.bcd_iters <= m.cfg.sca_max_iters);
                for h in r.traj_histories.iter().chain(&r.alloc_histories) {
                    assert!(non_decreasing(h), "{s} seed {seed} round {}: {h:?}", r.round);
                }
                let served: Vec<f64> = (0..r.members.len())
                    .filter(|&i| r.assoc.slots_of(i) > 0)
                    .map(|i| r.per_user_rates[i])
                    .collect();
                let min = served.iter().copied().fold(f64::INFINITY, f64::min);
                assert_eq!(r.min_rate, min);
            }
            let metrics = collect_metrics(&run, &m);
            assert!(metrics.speed.iter().all(|&v| v <= m.cfg.v_xy_max().hypot(m.cfg.v_h_max()) * (1.0 + 1e-9)));
            if let Some(i) = schemes.iter().position(|&x| x == s) {
                mean[i] += metrics.min_rate / seeds.len() as f64;
            }
        }
    }
    let [ub, prop, fixed] = mean;
    assert!(ub >= prop, "upper bound {ub} below proposed {prop}");
    assert!(prop >= fixed, "proposed {prop} below fixed resources {fixed}");
}
