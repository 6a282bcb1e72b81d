#![allow(dead_code)]

use instructmpc_core::control::{solve_dare_default, RiccatiSolution, SystemModel};
use instructmpc_core::linalg::{Mat, Vector};
use rand::Rng;

/// Random stabilizable system with positive definite costs, retried until the
/// Riccati iteration converges.
pub fn random_system<R: Rng>(rng: &mut R, n: usize, m: usize) -> RiccatiSolution {
    loop {
        let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-0.8..0.8));
        let b = Mat::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let lq = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let lr = Mat::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let q = &lq * lq.transpose() + Mat::identity(n, n) * 0.5;
        let r = &lr * lr.transpose() + Mat::identity(m, m) * 0.5;
        let Ok(model) = SystemModel::new(a, b, q, r, 1.0) else { continue };
        if let Ok(sol) = solve_dare_default(&model) {
            return sol;
        }
    }
}

pub fn random_vectors<R: Rng>(rng: &mut R, count: usize, n: usize, scale: f64) -> Vec<Vector> {
    (0..count).map(|_| Vector::from_fn(n, |_, _| rng.gen_range(-scale..scale))).collect()
}

pub fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

use instructmpc_core::l2d::{featurize, AffineMixerParams, ContextFeatures, ScenarioLibrary, ScenarioSpec, TrajectorySpec};

pub const WORDS: [&str; 4] = ["storm", "calm", "north", "south"];

/// Library of `count` table scenarios over `n` states with random rows of
/// the given period; scenario i is keyed by `WORDS[i % 4]`.
pub fn random_library<R: Rng>(rng: &mut R, n: usize, count: usize, period: usize) -> ScenarioLibrary {
    let specs = (0..count)
        .map(|i| ScenarioSpec {
            id: format!("s{i}"),
            label: format!("scenario {i}"),
            keywords: vec![WORDS[i % WORDS.len()].to_string()],
            trajectory: TrajectorySpec::Table {
                rows: (0..period).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
            },
        })
        .collect();
    ScenarioLibrary::new(n, 10.0, specs, None).unwrap()
}

pub fn random_context<R: Rng>(rng: &mut R, lib: &ScenarioLibrary) -> ContextFeatures {
    let text: Vec<&str> = WORDS.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    featurize(&text.join(" "), &lib.vocabulary())
}

pub fn random_params<R: Rng>(rng: &mut R, lib: &ScenarioLibrary, diameter: f64) -> AffineMixerParams {
    let f = lib.vocabulary().dim();
    let theta = random_mat(rng, lib.len(), f, 0.5);
    let bias = Vector::from_fn(lib.len(), |_, _| rng.gen_range(0.0..0.5));
    AffineMixerParams::new(theta.clone(), bias, theta, diameter).unwrap()
}
