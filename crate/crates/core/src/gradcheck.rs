//! Central finite-difference checks of every hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{EnvKind, MixerKind, TrainingConfig};
use crate::decomposition::{AgentQNet, JointApproxNet, MonotonicMixer};
use crate::error::Result;
use crate::losses::{
    joint_approx_loss, mcvd_td_loss, weighted_squared_loss, weighted_td_loss, KernelBandwidth, TdWeighting,
};
use crate::nn::{finite_diff_check, max_relative_error, DenseNet, FD_STEP};
use crate::training::{EnvDims, Learner, Transition};

/// Largest accepted relative error between analytic and numeric gradients.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Zero-initialised biases put every unit fed by an all-dead layer exactly on
/// the relu kink, where the central difference is one-sided. Checks run at a
/// generic point instead.
fn jitter_biases(net: &mut DenseNet, rng: &mut ChaCha8Rng) {
    for layer in net.layers_mut() {
        for b in &mut layer.bias {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
}

fn squared_readout(coeffs: Vec<f64>) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
    move |out: &[f64]| {
        let loss = out.iter().zip(&coeffs).map(|(o, c)| 0.5 * c * o * o).sum();
        let grad = out.iter().zip(&coeffs).map(|(o, c)| c * o).collect();
        (loss, grad)
    }
}

fn agent_net(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = AgentQNet::new(6, 3, 5, &[16, 16], true, true, &mut rng)?;
    let mut net = agents.online()[0].clone();
    jitter_biases(&mut net, &mut rng);
    let obs = normal_vec(&mut rng, 6, 1.0);
    let input = agents.encode(&obs, Some(rng.gen_range(0..5)), rng.gen_range(0..3))?;
    let coeffs = normal_vec(&mut rng, 5, 1.0);
    finite_diff_check(&mut net, &input, squared_readout(coeffs))
}

fn joint_net(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let joint = JointApproxNet::new(4, 3, 5, &[16, 16], &mut rng)?;
    let mut net = joint.online().clone();
    jitter_biases(&mut net, &mut rng);
    let state = normal_vec(&mut rng, 4, 1.0);
    let action: Vec<usize> = (0..3).map(|_| rng.gen_range(0..5)).collect();
    let input = joint.encode(&state, &action)?;
    let y = rng.gen_range(-5.0..5.0);
    finite_diff_check(&mut net, &input, move |out: &[f64]| {
        let l = joint_approx_loss(out, &[y]).expect("one sample");
        (l.loss, l.grad)
    })
}

fn mixer_params(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mixer = MonotonicMixer::new(4, 3, 8, &mut rng)?;
    let state = normal_vec(&mut rng, 4, 1.0);
    let chosen = normal_vec(&mut rng, 3, 2.0);
    let c = rng.gen_range(0.5..2.0);
    let mut worst = 0.0_f64;

    for net in mixer.online_mut().nets_mut() {
        jitter_biases(net, &mut rng);
        net.zero_grad();
    }
    let (q, trace) = mixer.forward_traced(&state, &chosen)?;
    let d_chosen = mixer.backward(&trace, c * q)?;

    for k in 0..4 {
        let analytic = mixer.online_mut().nets_mut()[k].grads();
        let count = analytic.len();
        let mut numeric = Vec::with_capacity(count);
        for i in 0..count {
            let p = mixer.online_mut().nets_mut()[k].param(i);
            let eval = |v: f64, m: &mut MonotonicMixer| -> Result<f64> {
                m.online_mut().nets_mut()[k].set_param(i, v);
                let q = m.mix(&state, &chosen)?;
                Ok(0.5 * c * q * q)
            };
            let plus = eval(p + FD_STEP, &mut mixer)?;
            let minus = eval(p - FD_STEP, &mut mixer)?;
            eval(p, &mut mixer)?;
            numeric.push((plus - minus) / (2.0 * FD_STEP));
        }
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }

    let numeric_chosen: Vec<f64> = (0..chosen.len())
        .map(|i| {
            let mut shifted = chosen.clone();
            shifted[i] += FD_STEP;
            let plus = mixer.mix(&state, &shifted)?;
            shifted[i] -= 2.0 * FD_STEP;
            let minus = mixer.mix(&state, &shifted)?;
            Ok((0.5 * c * plus * plus - 0.5 * c * minus * minus) / (2.0 * FD_STEP))
        })
        .collect::<Result<_>>()?;
    Ok(worst.max(max_relative_error(&d_chosen, &numeric_chosen)))
}

/// Derivative of a weighted squared loss with the weights held fixed.
fn loss_operator(seed: u64, weighting: TdWeighting) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = normal_vec(&mut rng, 16, 5.0);
    let q = normal_vec(&mut rng, 16, 5.0);
    let value = match weighting {
        TdWeighting::Correntropy { sigma } => mcvd_td_loss(&q, &y, sigma)?,
        TdWeighting::Optimistic { alpha } => weighted_td_loss(&q, &y, alpha)?,
        TdWeighting::Mse => weighted_squared_loss(&q, &y, &[1.0; 16])?,
    };
    let numeric: Vec<f64> = (0..q.len())
        .map(|i| {
            let mut shifted = q.clone();
            shifted[i] += FD_STEP;
            let plus = weighted_squared_loss(&shifted, &y, &value.weights)?.loss;
            shifted[i] -= 2.0 * FD_STEP;
            let minus = weighted_squared_loss(&shifted, &y, &value.weights)?.loss;
            Ok((plus - minus) / (2.0 * FD_STEP))
        })
        .collect::<Result<_>>()?;
    Ok(max_relative_error(&value.grad, &numeric))
}

fn random_batch(rng: &mut ChaCha8Rng, dims: EnvDims, size: usize) -> Vec<Transition> {
    (0..size)
        .map(|_| {
            let obs = |rng: &mut ChaCha8Rng| {
                (0..dims.n_agents)
                    .map(|_| normal_vec(rng, dims.obs_dim, 1.0))
                    .collect::<Vec<_>>()
            };
            Transition {
                state: normal_vec(rng, dims.state_dim, 1.0),
                observations: obs(rng),
                last_actions: (0..dims.n_agents)
                    .map(|_| rng.gen_bool(0.7).then(|| rng.gen_range(0..dims.n_actions)))
                    .collect(),
                actions: (0..dims.n_agents).map(|_| rng.gen_range(0..dims.n_actions)).collect(),
                reward: rng.gen_range(-10.0..10.0),
                next_state: normal_vec(rng, dims.state_dim, 1.0),
                next_observations: obs(rng),
                terminal: rng.gen_bool(0.3),
            }
        })
        .collect()
}

/// Step for whole-learner checks. A batch pushes many samples through each
/// relu unit, so a smaller step keeps the probe from straddling a kink.
const LEARNER_FD_STEP: f64 = 1e-6;

fn numeric_over<F>(net: &mut DenseNet, f: F) -> Vec<f64>
where
    F: FnMut(&DenseNet) -> f64,
{
    crate::nn::numeric_gradient(net, LEARNER_FD_STEP, f)
}

/// Full learner backward pass against the TD and joint losses, with targets and
/// weights frozen at their batch values.
fn learner(seed: u64, mixer: MixerKind, weighting: &str) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = TrainingConfig::defaults(EnvKind::ParticleNav);
    config.hidden_dim = 8;
    config.mixer_embed_dim = 4;
    config.mixer = mixer;
    config.set("loss", weighting)?;
    config.sigma = 2.0;
    let dims = EnvDims {
        n_agents: 3,
        n_actions: 4,
        obs_dim: 5,
        state_dim: 6,
    };
    let mut learner = Learner::new(&config, dims, &mut rng)?;
    // distinct target networks so bootstrapping is non-trivial
    let mut perturbed = Learner::new(&config, dims, &mut rng)?;
    learner.agents.targets_mut().clone_from_slice(perturbed.agents.targets_mut());
    for net in learner.agents.online_mut() {
        jitter_biases(net, &mut rng);
    }
    for net in learner.mixer.nets_mut() {
        jitter_biases(net, &mut rng);
    }
    if let Some(j) = &mut learner.joint {
        jitter_biases(j.online_mut(), &mut rng);
    }
    let owned = random_batch(&mut rng, dims, 8);
    let batch: Vec<&Transition> = owned.iter().collect();

    let targets = learner.batch_targets(&batch)?;
    learner.compute_gradients(&batch)?;
    let mut worst = 0.0_f64;

    let n_agent_nets = learner.agents.online().len();
    for k in 0..n_agent_nets {
        let analytic = learner.agents.online()[k].grads();
        let mut probe = learner.clone();
        let mut net = probe.agents.online()[k].clone();
        let numeric = numeric_over(&mut net, |n| {
            probe.agents.online_mut()[k].clone_from(n);
            probe
                .td_loss_fixed(&batch, &targets.y, &targets.weights)
                .expect("batch shapes are valid")
        });
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }

    let n_mixer_nets = learner.mixer.nets_mut().len();
    for k in 0..n_mixer_nets {
        let analytic = learner.mixer.nets_mut()[k].grads();
        let mut probe = learner.clone();
        let mut net = probe.mixer.nets_mut()[k].clone();
        let numeric = numeric_over(&mut net, |n| {
            probe.mixer.nets_mut()[k].clone_from(n);
            probe
                .td_loss_fixed(&batch, &targets.y, &targets.weights)
                .expect("batch shapes are valid")
        });
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }

    if let Some(joint) = &learner.joint {
        let analytic = joint.online().grads();
        let mut probe = learner.clone();
        let mut net = joint.online().clone();
        let numeric = numeric_over(&mut net, |n| {
            probe.joint.as_mut().expect("joint net").online_mut().clone_from(n);
            probe.joint_loss_fixed(&batch, &targets.y).expect("batch shapes are valid")
        });
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Every check for one seed.
pub fn run_seed(seed: u64) -> Result<Vec<GradCheck>> {
    let case = |name, value: Result<f64>| -> Result<GradCheck> {
        Ok(GradCheck {
            name,
            seed,
            max_rel_error: value?,
        })
    };
    Ok(vec![
        case("agent_net", agent_net(seed))?,
        case("joint_net", joint_net(seed))?,
        case("monotonic_mixer", mixer_params(seed))?,
        case("mcvd_loss", loss_operator(seed, TdWeighting::Correntropy { sigma: KernelBandwidth::new(1.5)? }))?,
        case("ow_loss", loss_operator(seed, TdWeighting::Optimistic { alpha: 0.3 }))?,
        case("mse_loss", loss_operator(seed, TdWeighting::Mse))?,
        case("learner_sum_mcvd", learner(seed, MixerKind::Sum, "mcvd"))?,
        case("learner_monotonic_mcvd", learner(seed, MixerKind::Monotonic, "mcvd"))?,
        case("learner_monotonic_ow", learner(seed, MixerKind::Monotonic, "ow"))?,
    ])
}

/// Checks for seeds `0..seeds`.
pub fn run_suite(seeds: u64) -> Result<Vec<GradCheck>> {
    let mut all = Vec::new();
    for seed in 0..seeds {
        all.extend(run_seed(seed)?);
    }
    Ok(all)
}
