use std::sync::Arc;

use proxyrec::autodiff::{finite_difference_check, Evaluation, FdConfig, ParamSet, Tensor};
use proxyrec::combiner::ScoringMode;
use proxyrec::dataset::{sample_negatives, ItemId, PredictionInstance};
use proxyrec::parallel::Executor;
use proxyrec::params::{ModelDims, ModelParams};
use proxyrec::trainer::{batch_gradients, objective_with_kinks, Example, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const USERS: [&str; 2] = ["ann", "bo"];

/// Random parameters (zero-initialized tensors included) and a handful of
/// instances, half of them from known users.
fn problem(seed: u64, mode: ScoringMode) -> (ModelParams, Vec<Example>, TrainConfig, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims {
        num_items: 30,
        dim: 8,
        num_proxies: 3,
        max_len: 5,
    };
    let mut params = ModelParams::init(dims, USERS.iter().map(|u| u.to_string()), &mut rng);
    for name in ["encoder.b1", "encoder.b2", "user_bias"] {
        let id = params.set.find(name).unwrap();
        let t = params.get_mut(id);
        let [r, c] = t.shape();
        *t = Tensor::filled_with(r, c, || rng.gen_range(-0.3..0.3));
    }
    let mut examples = Vec::new();
    for k in 0..4 {
        let n = rng.gen_range(2..=5);
        let items: Vec<ItemId> = (0..n).map(|_| ItemId(rng.gen_range(1..=30))).collect();
        let prefix = rng.gen_range(1..n);
        let user = (k % 2 == 0).then(|| Arc::<str>::from(USERS[k / 2 % 2]));
        let mut inst = PredictionInstance::new(items.into(), prefix, user);
        inst.known_user = inst.user_tag.is_some();
        let negatives = sample_negatives(inst.target(), 30, 2, &mut rng).unwrap();
        examples.push(Example { inst, negatives });
    }
    let cfg = TrainConfig {
        dim: 8,
        num_proxies: 3,
        max_len: 5,
        negatives: 2,
        lambda_dist: 0.3,
        lambda_orthog: 0.4,
        mode,
        ..TrainConfig::default()
    };
    let tau = rng.gen_range(0.5..3.0);
    (params, examples, cfg, tau)
}

fn check(seed: u64, mode: ScoringMode) {
    let (params, examples, cfg, tau) = problem(seed, mode);
    let (_, grads) = batch_gradients(&params, &examples, tau, &cfg, &Executor::sequential()).unwrap();
    let users = params.users.clone();
    let f = |set: &ParamSet| {
        let p = ModelParams::from_set(set.clone(), users.clone())?;
        let (value, kinks) = objective_with_kinks(&p, &examples, tau, &cfg)?;
        Ok(Evaluation { value, kinks })
    };
    let report = finite_difference_check(f, &params.set, &grads, &FdConfig::default()).unwrap();
    let worst = report
        .tensors
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    assert!(
        report.pass(),
        "{mode} seed {seed}: {} off by {:e}",
        worst.name,
        worst.max_rel_error
    );
    assert!(report.checked() > report.skipped());
}

#[test]
fn every_mode_matches_finite_differences() {
    for mode in ScoringMode::ALL {
        for seed in 0..3 {
            check(seed, mode);
        }
    }
}

#[test]
fn parallel_gradients_are_bit_identical() {
    let (params, examples, cfg, tau) = problem(9, ScoringMode::Full);
    let (l1, g1) = batch_gradients(&params, &examples, tau, &cfg, &Executor::sequential()).unwrap();
    let (l2, g2) = batch_gradients(&params, &examples, tau, &cfg, &Executor::with_threads(3)).unwrap();
    assert_eq!(l1, l2);
    for id in params.set.ids() {
        assert_eq!(g1.dense(&params.set, id), g2.dense(&params.set, id));
    }
}
