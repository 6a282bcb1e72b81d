mod common;

use common::{random_context, random_library, random_params, random_system, random_vectors};
use instructmpc_core::analysis::{
    estimate_g, hindsight_theta, loss_discrepancy_sampled, model_gradient_bound, regret_report, simulate_affine,
    AffineEpisode, BoundConstants, PsiModel,
};
use instructmpc_core::control::RiccatiSolution;
use instructmpc_core::l2d::{
    featurize, prediction_jacobian, AffineMixerParams, ContextFeatures, ScenarioLibrary, ScenarioSpec,
    TrajectorySpec,
};
use instructmpc_core::linalg::{quad_form, Mat, Vector};
use instructmpc_core::sims::{make_robot_system, run_episode, LearnerConfig, Preset, RobotScenario, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    sol: RiccatiSolution,
    lib: ScenarioLibrary,
    params: AffineMixerParams,
    x0: Vector,
    w: Vec<Vector>,
    feats: Vec<ContextFeatures>,
}

impl Fixture {
    fn random(seed: u64, diameter: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sol = random_system(&mut rng, 2, 1);
        let lib = random_library(&mut rng, 2, 2, 9);
        let params = random_params(&mut rng, &lib, diameter);
        let horizon = 60;
        let w = random_vectors(&mut rng, horizon, 2, 1.0);
        let feats = (0..horizon).map(|_| random_context(&mut rng, &lib)).collect();
        let x0 = random_vectors(&mut rng, 1, 2, 1.0).remove(0);
        Fixture { sol, lib, params, x0, w, feats }
    }

    fn episode(&self, k: usize) -> AffineEpisode<'_> {
        AffineEpisode {
            sol: &self.sol,
            lib: &self.lib,
            params: &self.params,
            x0: self.x0.clone(),
            disturbances: self.w.clone(),
            feats: self.feats.clone(),
            k,
        }
    }
}

#[test]
fn affine_objective_matches_closed_loop_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..5 {
        let fx = Fixture::random(seed, 4.0);
        let ep = fx.episode(3);
        let model = PsiModel::build(&ep).unwrap();
        for _ in 0..4 {
            let theta = fx.params.theta_vec().map(|v| v + rng.gen_range(-1.0..1.0));
            let replay = simulate_affine(&ep, &vec![theta.clone(); ep.horizon()]).unwrap();
            let exact = model.objective(&theta);
            assert!((replay - exact).abs() <= 1e-9 * replay.max(1.0), "{replay} vs {exact}");
        }
    }
}

/// Library whose single scenario has no keywords: the parameter reduces to
/// one scalar (the bias-feature weight), so a dense grid is a full oracle.
fn scalar_parameter_fixture() -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let sol = random_system(&mut rng, 2, 1);
    let lib = ScenarioLibrary::new(
        2,
        10.0,
        vec![ScenarioSpec {
            id: "only".into(),
            label: "only".into(),
            keywords: vec![],
            trajectory: TrajectorySpec::Table {
                rows: (0..5).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect(),
            },
        }],
        None,
    )
    .unwrap();
    let params = AffineMixerParams::new(Mat::zeros(1, 1), Vector::zeros(1), Mat::zeros(1, 1), 4.0).unwrap();
    let horizon = 50;
    let w = (0..horizon).map(|t| lib.bank(0, t, 1).row(0).transpose() * 0.8 + random_vectors(&mut rng, 1, 2, 0.2).remove(0)).collect();
    let feats = (0..horizon).map(|_| featurize("", &lib.vocabulary())).collect();
    Fixture { sol, lib, params, x0: Vector::zeros(2), w, feats }
}

#[test]
fn hindsight_matches_a_dense_grid() {
    let fx = scalar_parameter_fixture();
    let ep = fx.episode(2);
    let model = PsiModel::build(&ep).unwrap();
    let star = hindsight_theta(&model).unwrap();
    let steps = 4000;
    let (mut best_j, mut best_theta) = (f64::INFINITY, 0.0);
    for i in 0..=steps {
        let theta = -2.0 + 4.0 * i as f64 / steps as f64;
        let j = simulate_affine(&ep, &vec![Vector::from_element(1, theta); ep.horizon()]).unwrap();
        if j < best_j {
            best_j = j;
            best_theta = theta;
        }
    }
    assert!(star.objective <= best_j + 1e-9 * best_j);
    assert!((star.theta[0] - best_theta).abs() <= 4.0 / steps as f64, "{} vs {best_theta}", star.theta[0]);
}

#[test]
fn hindsight_beats_random_probes_in_the_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 10..14 {
        let fx = Fixture::random(seed, 1.0);
        let ep = fx.episode(4);
        let model = PsiModel::build(&ep).unwrap();
        let star = hindsight_theta(&model).unwrap();
        let center = fx.params.center_vec();
        assert!((star.theta_vec() - &center).norm() <= fx.params.radius() * (1.0 + 1e-9));
        for _ in 0..300 {
            let dir = Vector::from_fn(center.len(), |_, _| rng.gen_range(-1.0..1.0));
            let theta = &center + dir.normalize() * (fx.params.radius() * rng.gen::<f64>().sqrt());
            assert!(star.objective <= model.objective(&theta) + 1e-9 * star.objective.max(1.0));
        }
    }
}

#[test]
fn unconstrained_hindsight_matches_normal_equations() {
    let fx = Fixture::random(5, 1e6);
    let ep = fx.episode(3);
    let model = PsiModel::build(&ep).unwrap();
    let star = hindsight_theta(&model).unwrap();
    let dim = fx.params.dim();
    let mut hess = Mat::zeros(dim, dim);
    let mut lin = Vector::zeros(dim);
    for t in 0..ep.horizon() {
        let mth = model.m[t].transpose() * &fx.sol.h;
        hess += &mth * &model.m[t];
        lin += &mth * &model.a[t];
    }
    let normal = hess.svd(true, true).solve(&lin, 1e-12).unwrap();
    let j_normal = model.objective(&normal);
    assert!(star.objective <= j_normal + 1e-8 * j_normal.max(1.0), "{} vs {j_normal}", star.objective);
    assert!(star.objective >= j_normal - 1e-8 * j_normal.max(1.0));
}

#[test]
fn estimated_g_dominates_gradients_over_the_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fx = Fixture::random(3, 2.0);
    let ep = fx.episode(3);
    let model = PsiModel::build(&ep).unwrap();
    let g = estimate_g(&model);
    let center = fx.params.center_vec();
    for _ in 0..50 {
        let dir = Vector::from_fn(center.len(), |_, _| rng.gen_range(-1.0..1.0));
        let theta = &center + dir.normalize() * fx.params.radius();
        for t in 0..ep.horizon() {
            assert!(model.loss_gradient(t, &theta).norm() <= g);
        }
    }
}

#[test]
fn sampled_discrepancy_equals_exact_on_the_affine_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fx = Fixture::random(8, 2.0);
    let k = 3;
    let ep = fx.episode(k);
    let model = PsiModel::build(&ep).unwrap();
    let horizon = ep.horizon();
    for t in [0, 10, horizon - 2] {
        let len = (t + k).min(horizon) - t;
        let jac = |theta: &Vector| {
            prediction_jacobian(&fx.params.with_theta_vec(theta), &fx.feats[t], &fx.lib, t, k, horizon)
        };
        let sampled = loss_discrepancy_sampled(
            &fx.sol,
            &model.tail[t],
            len,
            jac,
            &fx.params.center_vec(),
            fx.params.radius(),
            32,
            &mut rng,
        )
        .unwrap();
        let exact = model.loss_discrepancy(t);
        assert!((sampled - exact).abs() <= 1e-12 * exact.max(1.0));
    }
}

#[test]
fn robot_regret_is_nonnegative_and_under_the_theorem_bound() {
    let sc = RobotScenario { horizon: 200, ..Default::default() };
    let preset = Preset::Robot(sc.clone());
    let (_, sol) = make_robot_system(&sc).unwrap();
    let lib = sc.library().unwrap();
    let learner = LearnerConfig::default();
    for seed in 0..2 {
        let out = run_episode(preset.plant(3, seed).unwrap(), Variant::Tuned, &learner, 5).unwrap();
        let params = out.mixer.clone().unwrap();
        let ep = AffineEpisode {
            sol: &sol,
            lib: &lib,
            params: &params,
            x0: out.trace.states[0].clone(),
            disturbances: out.trace.disturbances.clone(),
            feats: out.feats.clone(),
            k: 5,
        };
        let model = PsiModel::build(&ep).unwrap();
        let star = hindsight_theta(&model).unwrap();
        let c = BoundConstants::new(&sol, params.diameter, out.g.unwrap(), model_gradient_bound(&lib, 200), sc.w_bound())
            .unwrap();
        let report = regret_report(&ep, &model, &out.thetas, &star.theta_vec(), &c, 10).unwrap();
        let terminal = quad_form(&sol.p, out.trace.terminal_state());
        let recorded = out.total_cost() + terminal;
        assert!((report.j_alg - recorded).abs() <= 1e-9 * recorded, "replay reproduces the run");
        assert!(report.regret >= -1e-6 * report.j_alg.max(1.0));
        assert!(report.j_hindsight >= report.j_star - 1e-9 * report.j_star.max(1.0));
        assert!(report.regret <= report.theorem1_rhs);
    }
}
