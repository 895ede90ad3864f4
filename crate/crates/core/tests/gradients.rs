//! Reverse-mode gradients against central finite differences.

mod common;

use common::{dqn_gradient_trials, fd_check, ppo_gradient_trials, random_vec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tunelab::agents::dqn::dqn_loss_and_grad;
use tunelab::agents::{Mlp, Transition};

#[test]
fn dqn_loss_gradients_match_finite_differences() {
    for (trial, worst) in dqn_gradient_trials(11, 100).into_iter().enumerate() {
        assert!(worst <= 1e-4, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn ppo_loss_gradients_match_finite_differences() {
    for (trial, worst) in ppo_gradient_trials(12, 100).into_iter().enumerate() {
        assert!(worst <= 1e-4, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn largest_net_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let net = Mlp::new(&[8, 8, 8, 5], &mut rng).unwrap();
    let target = net.clone();
    let batch: Vec<Transition> = (0..8)
        .map(|i| Transition {
            state: random_vec(&mut rng, 8),
            action: i % 5,
            reward: 1.0,
            next_state: random_vec(&mut rng, 8),
            done: i % 3 == 0,
        })
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let (_, grads) = dqn_loss_and_grad(&net, &target, &refs, 0.9).unwrap();
    let worst = fd_check(&net, &grads.flat(), |m| dqn_loss_and_grad(m, &target, &refs, 0.9).unwrap().0);
    assert!(worst <= 1e-4, "{worst}");
}
