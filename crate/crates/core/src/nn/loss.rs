//! Rollout losses and their gradients w.r.t. the network outputs.

use alloc::vec::Vec;

use super::{OutputGrad, ACTION_DIM};
use crate::geometry::ActionDelta;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `sum_i m_i * sum_c |target_ic - mu_ic|`, with gradient w.r.t. `mu`.
pub fn masked_l1(
    mu: &[ActionDelta],
    target: &[ActionDelta],
    mask: &[bool],
) -> (f64, Vec<OutputGrad>) {
    assert!(mu.len() == target.len() && mu.len() == mask.len());
    let mut loss = 0.0;
    let grads = mu
        .iter()
        .zip(target)
        .zip(mask)
        .map(|((m, t), &on)| {
            let mut g = OutputGrad::default();
            if on {
                for c in 0..ACTION_DIM {
                    let diff = m.0[c] - t.0[c];
                    loss += libm::fabs(diff);
                    g.d_mu[c] = sign(diff);
                }
            }
            g
        })
        .collect();
    (loss, grads)
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_density(a: &ActionDelta, mu: &ActionDelta, sigma: &[f64; ACTION_DIM]) -> f64 {
    (0..ACTION_DIM)
        .map(|c| {
            let z = (a.0[c] - mu.0[c]) / sigma[c];
            -0.5 * z * z - libm::log(sigma[c]) - 0.5 * LN_2PI
        })
        .sum()
}

/// One transition as seen by the actor-critic loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorCriticStep {
    pub mu: ActionDelta,
    pub action: ActionDelta,
    pub sigma: [f64; ACTION_DIM],
    pub value: f64,
    pub ret: f64,
}

/// `sum_i [ -log N(a_i; mu_i, sigma_i) * A_i + c_v (R_i - v_i)^2 ]` with
/// `A_i = R_i - v_i` and `sigma_i` held constant.
pub fn actor_critic_loss(steps: &[ActorCriticStep], value_coef: f64) -> (f64, Vec<OutputGrad>) {
    let mut loss = 0.0;
    let grads = steps
        .iter()
        .map(|s| {
            let adv = s.ret - s.value;
            loss +=
                -gaussian_log_density(&s.action, &s.mu, &s.sigma) * adv + value_coef * adv * adv;
            let mut g = OutputGrad::default();
            for c in 0..ACTION_DIM {
                // d/dmu log N = (a - mu) / sigma^2
                g.d_mu[c] = -adv * (s.action.0[c] - s.mu.0[c]) / (s.sigma[c] * s.sigma[c]);
            }
            g.d_value = -2.0 * value_coef * adv;
            g
        })
        .collect();
    (loss, grads)
}

/// Discounted suffix sums `R_i = r_i + gamma R_{i+1}`, seeded with `bootstrap`.
pub fn discounted_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut out = alloc::vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for i in (0..rewards.len()).rev() {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    out
}
