use instructmpc_core::l2d::window_end;
use instructmpc_core::par;
use instructmpc_core::sims::{
    run_episode, EnergyScenario, EpisodeRunner, LearnerConfig, ModelChoice, Preset, RobotScenario, TunerChoice,
    Variant,
};

fn bits(costs: &[f64]) -> Vec<u64> {
    costs.iter().map(|c| c.to_bits()).collect()
}

fn robot() -> Preset {
    Preset::Robot(RobotScenario { horizon: 120, ..Default::default() })
}

#[test]
fn reruns_are_bit_identical() {
    let preset = robot();
    let learner = preset.default_learner();
    for variant in Variant::ALL {
        let a = run_episode(preset.plant(9, 2).unwrap(), variant, &learner, 5).unwrap();
        let b = run_episode(preset.plant(9, 2).unwrap(), variant, &learner, 5).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.trace, b.trace);
    }
}

#[test]
fn seeds_draw_independent_streams() {
    let preset = robot();
    let learner = preset.default_learner();
    let a = run_episode(preset.plant(9, 0).unwrap(), Variant::Classic, &learner, 5).unwrap();
    let b = run_episode(preset.plant(9, 1).unwrap(), Variant::Classic, &learner, 5).unwrap();
    let c = run_episode(preset.plant(10, 0).unwrap(), Variant::Classic, &learner, 5).unwrap();
    assert_ne!(a.trace.disturbances, b.trace.disturbances);
    assert_ne!(a.trace.disturbances, c.trace.disturbances);
}

#[test]
fn parallel_and_sequential_fan_out_agree() {
    let preset = robot();
    let learner = preset.default_learner();
    let seeds: Vec<u64> = (0..6).collect();
    let run = |s: &u64| run_episode(preset.plant(1, *s).unwrap(), Variant::Tuned, &learner, 5).unwrap().total_cost();
    assert_eq!(bits(&par::map_seq(&seeds, run)), bits(&par::map(&seeds, run)));
}

#[test]
fn robot_transitions_follow_the_linear_recursion() {
    let sc = RobotScenario::default();
    let preset = Preset::Robot(sc.clone());
    let out = run_episode(preset.plant(4, 0).unwrap(), Variant::Tuned, &preset.default_learner(), 5).unwrap();
    let plant = preset.plant(4, 0).unwrap();
    let defect = out.trace.check_transitions(plant.solution().model(), 1e-10).unwrap();
    assert!(defect <= 1e-10);
    let bound = sc.w_bound();
    assert!(out.trace.disturbances.iter().all(|w| w.norm() <= bound));
}

#[test]
fn energy_state_of_charge_stays_in_the_unit_interval() {
    let preset = Preset::Energy(EnergyScenario { days: 10, ..Default::default() });
    let learner = preset.default_learner();
    for variant in Variant::ALL {
        let out = run_episode(preset.plant(2, 0).unwrap(), variant, &learner, preset.default_k()).unwrap();
        for r in &out.records {
            assert!((0.0..=1.0).contains(&r.display[0]), "SoC {} at t={}", r.display[0], r.t);
            assert!((0.0..=1.0).contains(&r.u[0]));
            assert!(r.stage_cost >= 0.0);
        }
    }
}

#[test]
fn scripted_override_reproduces_the_scripted_run() {
    let preset = robot();
    let learner = preset.default_learner();
    let scripted = run_episode(preset.plant(6, 1).unwrap(), Variant::Tuned, &learner, 5).unwrap();
    let mut runner = EpisodeRunner::new(preset.plant(6, 1).unwrap(), Variant::Tuned, &learner, 5).unwrap();
    while let Some(text) = runner.scripted_context() {
        runner.step(Some(&text)).unwrap();
    }
    assert_eq!(runner.finish().unwrap().records, scripted.records);
}

#[test]
fn classic_forecasts_are_zero_and_windows_truncate() {
    let preset = robot();
    let out = run_episode(preset.plant(0, 0).unwrap(), Variant::Classic, &preset.default_learner(), 5).unwrap();
    let horizon = out.records.len();
    for r in &out.records {
        assert_eq!(r.what.len(), window_end(r.t, 5, horizon) - r.t + 1);
        assert!(r.what.iter().flatten().all(|v| *v == 0.0));
    }
}

#[test]
fn softmax_dpo_runs_update_batches() {
    let preset = robot();
    let learner = LearnerConfig {
        model: ModelChoice::Softmax,
        tuner: TunerChoice::Dpo,
        dpo_threshold: Some(60),
        ..Default::default()
    };
    let out = run_episode(preset.plant(5, 0).unwrap(), Variant::Tuned, &learner, 5).unwrap();
    let updates: Vec<(f64, f64)> = out.records.iter().filter_map(|r| r.dpo).collect();
    assert!(!updates.is_empty());
    for (before, after) in updates {
        assert!(after < before, "a DPO step lowers its batch loss");
    }
    for r in &out.records {
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn invalid_learner_pairings_are_rejected() {
    let preset = robot();
    let bad = LearnerConfig { tuner: TunerChoice::Dpo, ..Default::default() };
    assert!(EpisodeRunner::new(preset.plant(0, 0).unwrap(), Variant::Tuned, &bad, 5).is_err());
    assert!(EpisodeRunner::new(preset.plant(0, 0).unwrap(), Variant::Tuned, &LearnerConfig::default(), 0).is_err());
}
