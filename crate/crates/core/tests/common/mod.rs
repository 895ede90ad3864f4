//! Oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tunelab::agents::dqn::dqn_loss_and_grad;
use tunelab::agents::ppo::{ppo_loss_and_grad, PpoSample, PPO_OUTPUTS};
use tunelab::agents::{Mlp, Transition};
use tunelab::kmeans::{kmeans_fit, partition_sse, KMeansConfig};

pub const FD_STEP: f64 = 1e-6;

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub fn random_sizes(rng: &mut ChaCha8Rng, out: usize) -> Vec<usize> {
    let depth = rng.random_range(1..=2);
    let mut sizes = vec![rng.random_range(2..=8)];
    for _ in 0..depth {
        sizes.push(rng.random_range(2..=8));
    }
    sizes.push(out);
    sizes
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Worst relative error between `analytic` and central differences of `loss`
/// over every parameter.
pub fn fd_check<F: Fn(&Mlp) -> f64>(net: &Mlp, analytic: &[f64], loss: F) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, &g) in analytic.iter().enumerate() {
        let mut plus = net.clone();
        *plus.param_mut(i) += FD_STEP;
        let mut minus = net.clone();
        *minus.param_mut(i) -= FD_STEP;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(g, numeric));
    }
    worst
}

/// Pre-activations within `margin` of zero make finite differences cross a
/// ReLU kink; such draws are skipped and redrawn.
pub fn near_kink(net: &Mlp, inputs: &[Vec<f64>], margin: f64) -> bool {
    inputs.iter().any(|x| {
        let mut a = x.clone();
        let layers = net.weights().len();
        for l in 0..layers - 1 {
            let w = &net.weights()[l];
            let b = &net.biases()[l];
            let n_in = a.len();
            let z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, bias)| bias + (0..n_in).map(|j| w[o * n_in + j] * a[j]).sum::<f64>())
                .collect();
            if z.iter().any(|v| v.abs() < margin) {
                return true;
            }
            a = z.into_iter().map(|v| v.max(0.0)).collect();
        }
        false
    })
}

/// Worst relative gradient error per trial of the DQN loss.
pub fn dqn_gradient_trials(seed: u64, trials: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    while out.len() < trials {
        let sizes = random_sizes(&mut rng, 5);
        let net = Mlp::new(&sizes, &mut rng).unwrap();
        let target = Mlp::new(&sizes, &mut rng).unwrap();
        let batch: Vec<Transition> = (0..4)
            .map(|_| Transition {
                state: random_vec(&mut rng, sizes[0]),
                action: rng.random_range(0..5),
                reward: rng.random_range(-2.0..2.0),
                next_state: random_vec(&mut rng, sizes[0]),
                done: rng.random_bool(0.3),
            })
            .collect();
        let states: Vec<Vec<f64>> = batch.iter().map(|t| t.state.clone()).collect();
        if near_kink(&net, &states, 1e-4) {
            continue;
        }
        let refs: Vec<&Transition> = batch.iter().collect();
        let (_, grads) = dqn_loss_and_grad(&net, &target, &refs, 0.99).unwrap();
        out.push(fd_check(&net, &grads.flat(), |m| {
            dqn_loss_and_grad(m, &target, &refs, 0.99).unwrap().0
        }));
    }
    out
}

/// Worst relative gradient error per trial of the full PPO loss; odd trials
/// include an entropy bonus.
pub fn ppo_gradient_trials(seed: u64, trials: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip = 0.2;
    let mut out = Vec::with_capacity(trials);
    while out.len() < trials {
        let sizes = random_sizes(&mut rng, PPO_OUTPUTS);
        let net = Mlp::new(&sizes, &mut rng).unwrap();
        let states: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, sizes[0])).collect();
        if near_kink(&net, &states, 1e-4) {
            continue;
        }
        // Old log-probs near the current ones, kept away from the clip edges.
        let mut samples = Vec::new();
        let mut ok = true;
        for s in &states {
            let out = net.predict(s).unwrap();
            let logits = &out[..5];
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            let action = rng.random_range(0..5);
            let ratio: f64 = rng.random_range(0.6..1.4);
            if ((ratio - 1.0).abs() - clip).abs() < 1e-3 {
                ok = false;
            }
            samples.push((s, action, logits[action] - lse - ratio.ln()));
        }
        if !ok {
            continue;
        }
        let batch: Vec<PpoSample<'_>> = samples
            .iter()
            .map(|&(s, action, old)| PpoSample {
                state: s,
                action,
                old_log_prob: old,
                advantage: rng.random_range(-2.0..2.0),
                ret: rng.random_range(-2.0..2.0),
            })
            .collect();
        let ent = if out.len() % 2 == 0 { 0.0 } else { 0.01 };
        let (_, grads) = ppo_loss_and_grad(&net, &batch, clip, 0.5, ent).unwrap();
        out.push(fd_check(&net, &grads.flat(), |m| {
            let (st, _) = ppo_loss_and_grad(m, &batch, clip, 0.5, ent).unwrap();
            st.total(0.5, ent)
        }));
    }
    out
}

/// Minimum SSE over all assignments of `points` into two nonempty clusters.
pub fn brute_force_sse(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    // point 0 fixed in cluster 0 removes the label symmetry
    for mask in 1u32..(1 << (n - 1)) {
        let assign: Vec<usize> = (0..n)
            .map(|i| if i > 0 && mask & (1 << (i - 1)) != 0 { 1 } else { 0 })
            .collect();
        best = best.min(partition_sse(points, &assign, 2));
    }
    best
}

pub fn small_instance(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rng.random_range(2..=8);
    let dim = rng.random_range(1..=3);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect()
}

/// `(fitted SSE, optimal SSE)` per random instance with k = 2.
pub fn kmeans_oracle_trials(seed: u64, trials: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = KMeansConfig {
        k: 2,
        ..KMeansConfig::default()
    };
    (0..trials)
        .map(|t| {
            let pts = small_instance(&mut rng);
            (kmeans_fit(&pts, &cfg, t).unwrap().sse, brute_force_sse(&pts))
        })
        .collect()
}

pub fn sse_matches(fit: f64, oracle: f64) -> bool {
    (fit - oracle).abs() <= 1e-9 * oracle.max(1.0)
}
