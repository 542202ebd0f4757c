//! Central finite-difference verification of the analytic gradients.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::loss::*;
use super::*;
use crate::geometry::BBox;

/// Uniform random patches in the standardized range.
pub fn random_observation(cfg: &ModelConfig, seed: u64) -> Observation {
    let mut rng = PortableRng::new(seed);
    let n = cfg.channels * cfg.patch_size * cfg.patch_size;
    Observation {
        channels: cfg.channels,
        size: cfg.patch_size,
        patch_prev: (0..n).map(|_| rng.range(-0.5, 0.5)).collect(),
        patch_cur: (0..n).map(|_| rng.range(-0.5, 0.5)).collect(),
        source_box: BBox::new(0.0, 0.0, 1.0, 1.0),
        frame_index: 1,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    libm::fabs(a - b) / libm::fabs(a).max(libm::fabs(b)).max(1e-6)
}

/// Rollout loss mixing every output path: masked L1 on mu, the Gaussian
/// policy term and the value regression. The advantage multiplying the
/// policy term is computed from `frozen` values so it stays constant under
/// parameter perturbation, matching the analytic gradient.
fn mixed_loss(
    net: &PolicyValueNet,
    obs: &[Observation],
    frozen: &[f64],
    tape: Option<&mut Tape>,
) -> Result<(f64, Vec<OutputGrad>)> {
    let mut rs = net.initial_state();
    let mut outs = Vec::new();
    let mut tape = tape;
    for o in obs {
        let (out, next) = match tape.as_deref_mut() {
            Some(t) => net.forward_recorded(o, &rs, t)?,
            None => net.forward(o, &rs)?,
        };
        outs.push(out);
        rs = next;
    }
    let targets: Vec<ActionDelta> = (0..outs.len())
        .map(|i| ActionDelta::new(0.3 - 0.1 * i as f64, -0.2, 0.15, 0.05 * i as f64 - 0.4))
        .collect();
    let mus: Vec<ActionDelta> = outs.iter().map(|o| o.mu).collect();
    let mask: Vec<bool> = (0..outs.len()).map(|i| i % 3 != 2).collect();
    let (l1, g1) = masked_l1(&mus, &targets, &mask);
    let steps: Vec<ActorCriticStep> = outs
        .iter()
        .enumerate()
        .map(|(i, o)| ActorCriticStep {
            mu: o.mu,
            action: ActionDelta::new(0.1, -0.3 + 0.1 * i as f64, 0.2, -0.05),
            sigma: [0.4, 0.25, 0.3, 0.5],
            value: o.value,
            ret: 0.7 - 0.5 * i as f64,
        })
        .collect();
    let (_, g2) = actor_critic_loss(&steps, 0.5);
    let l2: f64 = steps
        .iter()
        .zip(frozen)
        .map(|(s, v)| {
            let e = s.ret - s.value;
            -gaussian_log_density(&s.action, &s.mu, &s.sigma) * (s.ret - v) + 0.5 * e * e
        })
        .sum();
    let grads = g1
        .iter()
        .zip(&g2)
        .map(|(a, b)| {
            let mut g = *b;
            for c in 0..ACTION_DIM {
                g.d_mu[c] += a.d_mu[c];
            }
            g
        })
        .collect();
    Ok((l1 + l2, grads))
}

/// Worst relative error per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.1).fold(0.0, f64::max)
    }
}

/// Compares backprop through a `steps`-long rollout with central differences
/// (step 1e-5) on every parameter.
pub fn gradient_check(cfg: &ModelConfig, steps: usize, seed: u64) -> Result<GradCheckReport> {
    let mut net = PolicyValueNet::init(cfg, seed)?;
    // non-zero biases so every path is exercised
    let mut rng = PortableRng::new(seed + 99);
    for v in net.params.iter_mut() {
        *v += rng.range(-0.05, 0.05);
    }
    let obs: Vec<Observation> = (0..steps)
        .map(|i| random_observation(cfg, seed * 10 + i as u64))
        .collect();
    let mut rs = net.initial_state();
    let mut frozen = Vec::with_capacity(steps);
    for o in &obs {
        let (out, next) = net.forward(o, &rs)?;
        rs = next;
        frozen.push(out.value);
    }
    let mut tape = Tape::new();
    let (_, d_out) = mixed_loss(&net, &obs, &frozen, Some(&mut tape))?;
    let mut grads = vec![0.0; net.num_params()];
    net.backward(&tape, &d_out, &mut grads)?;

    let h = 1e-5;
    let specs = net.layout().specs.clone();
    let mut blocks = Vec::with_capacity(specs.len());
    for spec in &specs {
        let mut worst: f64 = 0.0;
        for i in spec.range() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let lp = mixed_loss(&net, &obs, &frozen, None)?.0;
            net.params[i] = orig - h;
            let lm = mixed_loss(&net, &obs, &frozen, None)?.0;
            net.params[i] = orig;
            worst = worst.max(rel_err(grads[i], (lp - lm) / (2.0 * h)));
        }
        blocks.push((spec.name.clone(), worst));
    }
    Ok(GradCheckReport { blocks })
}

/// Worst relative error of the two loss gradients w.r.t. their inputs on a
/// fixed fixture (advantage held constant, as the estimator does).
pub fn loss_check() -> f64 {
    let mu = [
        ActionDelta::new(0.2, -0.4, 0.1, 0.05),
        ActionDelta::new(-0.3, 0.6, -0.2, 0.3),
    ];
    let tg = [
        ActionDelta::new(0.5, -0.1, 0.0, 0.2),
        ActionDelta::new(-0.1, 0.2, 0.1, -0.3),
    ];
    let mask = [true, false];
    let (_, g) = masked_l1(&mu, &tg, &mask);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for c in 0..ACTION_DIM {
            let (mut p, mut m) = (mu, mu);
            p[i].0[c] += h;
            m[i].0[c] -= h;
            let num = (masked_l1(&p, &tg, &mask).0 - masked_l1(&m, &tg, &mask).0) / (2.0 * h);
            worst = worst.max(libm::fabs(num - g[i].d_mu[c]));
        }
    }
    let step = ActorCriticStep {
        mu: mu[0],
        action: ActionDelta::new(0.1, -0.2, 0.3, 0.0),
        sigma: [0.3, 0.2, 0.1, 0.4],
        value: 0.25,
        ret: 1.1,
    };
    let (_, g) = actor_critic_loss(&[step], 0.5);
    let adv = step.ret - step.value;
    let f = |s: &ActorCriticStep| {
        let e = s.ret - s.value;
        -gaussian_log_density(&s.action, &s.mu, &s.sigma) * adv + 0.5 * e * e
    };
    for c in 0..ACTION_DIM {
        let (mut p, mut m) = (step, step);
        p.mu.0[c] += h;
        m.mu.0[c] -= h;
        worst = worst.max(rel_err(g[0].d_mu[c], (f(&p) - f(&m)) / (2.0 * h)));
    }
    let (mut p, mut m) = (step, step);
    p.value += h;
    m.value -= h;
    worst.max(rel_err(g[0].d_value, (f(&p) - f(&m)) / (2.0 * h)))
}
