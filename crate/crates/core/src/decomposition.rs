//! Individual Q networks, mixers that combine their chosen values into a joint
//! value, and the separate joint action-value approximation network.

use rand::Rng;

use crate::env::{enumerate_joint_actions, one_hot};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, Trace};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}

/// Independent per-agent argmax.
pub fn greedy_joint_action(q_vectors: &[Vec<f64>]) -> Vec<usize> {
    q_vectors.iter().map(|q| argmax(q)).collect()
}

/// Hard copy `online -> target` for paired network lists.
pub fn sync_targets(online: &[DenseNet], targets: &mut [DenseNet]) -> Result<()> {
    if online.len() != targets.len() {
        return Err(Error::config("target networks", "online/target counts differ"));
    }
    targets
        .iter_mut()
        .zip(online)
        .try_for_each(|(t, o)| t.copy_params_from(o))
}

/// Per-agent action-value networks with frozen target copies.
///
/// With `shared` set, one network serves every agent and the input carries a
/// one-hot agent id; otherwise each agent owns a network.
#[derive(Clone, Debug)]
pub struct AgentQNet {
    obs_dim: usize,
    n_agents: usize,
    n_actions: usize,
    last_action: bool,
    shared: bool,
    online: Vec<DenseNet>,
    target: Vec<DenseNet>,
}

impl AgentQNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        n_agents: usize,
        n_actions: usize,
        hidden: &[usize],
        last_action: bool,
        shared: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let input_dim = obs_dim
            + if last_action { n_actions } else { 0 }
            + if shared { n_agents } else { 0 };
        let sizes: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(n_actions))
            .collect();
        let count = if shared { 1 } else { n_agents };
        let online = (0..count)
            .map(|_| DenseNet::mlp(&sizes, Activation::Relu, Activation::Identity, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(AgentQNet {
            obs_dim,
            n_agents,
            n_actions,
            last_action,
            shared,
            target: online.clone(),
            online,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Network index serving `agent`.
    pub fn net_index(&self, agent: usize) -> usize {
        if self.shared {
            0
        } else {
            agent
        }
    }

    /// `obs ++ one_hot(last_action) ++ one_hot(agent)`; `None` encodes as zeros.
    pub fn encode(&self, obs: &[f64], last_action: Option<usize>, agent: usize) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::shape("observation", self.obs_dim, obs.len()));
        }
        if agent >= self.n_agents {
            return Err(Error::Usage(format!("agent {agent} out of range")));
        }
        let mut input = obs.to_vec();
        if self.last_action {
            match last_action {
                Some(a) if a < self.n_actions => input.extend(one_hot(a, self.n_actions)),
                Some(a) => return Err(Error::Usage(format!("last action {a} out of range"))),
                None => input.extend(std::iter::repeat_n(0.0, self.n_actions)),
            }
        }
        if self.shared {
            input.extend(one_hot(agent, self.n_agents));
        }
        Ok(input)
    }

    pub fn q_values(&self, obs: &[f64], last_action: Option<usize>, agent: usize) -> Result<Vec<f64>> {
        let input = self.encode(obs, last_action, agent)?;
        self.online[self.net_index(agent)].evaluate(&input)
    }

    pub fn target_q_values(
        &self,
        obs: &[f64],
        last_action: Option<usize>,
        agent: usize,
    ) -> Result<Vec<f64>> {
        let input = self.encode(obs, last_action, agent)?;
        self.target[self.net_index(agent)].evaluate(&input)
    }

    /// Q-vectors of every agent from the online networks.
    pub fn all_q_values(
        &self,
        observations: &[Vec<f64>],
        last_actions: &[Option<usize>],
    ) -> Result<Vec<Vec<f64>>> {
        if observations.len() != self.n_agents || last_actions.len() != self.n_agents {
            return Err(Error::shape("agent observations", self.n_agents, observations.len()));
        }
        (0..self.n_agents)
            .map(|i| self.q_values(&observations[i], last_actions[i], i))
            .collect()
    }

    pub fn online(&self) -> &[DenseNet] {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut [DenseNet] {
        &mut self.online
    }

    pub fn targets(&self) -> &[DenseNet] {
        &self.target
    }

    pub fn targets_mut(&mut self) -> &mut [DenseNet] {
        &mut self.target
    }

    pub fn sync_targets(&mut self) -> Result<()> {
        sync_targets(&self.online, &mut self.target)
    }
}

/// `Q_jt = sum_i Q_i`.
pub fn sum_mix(chosen_q: &[f64]) -> f64 {
    chosen_q.iter().sum()
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Hypernetwork heads producing the parameters of a one-hidden-layer mixing
/// network from the global state. Weight heads end in `abs`, so every mixing
/// weight is non-negative and the joint value is monotone in each input.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperHeads {
    pub w1: DenseNet,
    pub b1: DenseNet,
    pub w2: DenseNet,
    pub b2: DenseNet,
}

impl HyperHeads {
    fn nets(&self) -> [&DenseNet; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn nets_mut(&mut self) -> [&mut DenseNet; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Hypernetwork biases start uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
/// With zero biases a constant zero state (the matrix game) makes every `abs`
/// head output exactly zero, where its subgradient is zero too, so the mixer
/// could never leave the constant function.
fn randomize_biases<R: Rng + ?Sized>(net: &mut DenseNet, rng: &mut R) {
    for layer in net.layers_mut() {
        let bound = 1.0 / (layer.in_dim() as f64).sqrt();
        for b in &mut layer.bias {
            *b = rng.gen_range(-bound..=bound);
        }
    }
}

/// Everything a monotonic mixing forward pass needs for its backward pass.
#[derive(Clone, Debug)]
pub struct MixTrace {
    chosen: Vec<f64>,
    w1: Vec<f64>,
    w2: Vec<f64>,
    pre_hidden: Vec<f64>,
    hidden: Vec<f64>,
    traces: [Trace; 4],
}

#[derive(Clone, Debug)]
pub struct MonotonicMixer {
    n_agents: usize,
    embed: usize,
    online: HyperHeads,
    target: HyperHeads,
}

impl MonotonicMixer {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        n_agents: usize,
        embed: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let online = HyperHeads {
            w1: DenseNet::mlp(&[state_dim, n_agents * embed], Activation::Identity, Activation::Abs, rng)?,
            b1: DenseNet::mlp(&[state_dim, embed], Activation::Identity, Activation::Identity, rng)?,
            w2: DenseNet::mlp(&[state_dim, embed], Activation::Identity, Activation::Abs, rng)?,
            b2: DenseNet::mlp(&[state_dim, embed, 1], Activation::Relu, Activation::Identity, rng)?,
        };
        let mut online = online;
        for net in online.nets_mut() {
            randomize_biases(net, rng);
        }
        MonotonicMixer::from_heads(n_agents, embed, online)
    }

    pub fn from_heads(n_agents: usize, embed: usize, heads: HyperHeads) -> Result<Self> {
        let dims = [
            (heads.w1.output_dim(), n_agents * embed, "hyper w1"),
            (heads.b1.output_dim(), embed, "hyper b1"),
            (heads.w2.output_dim(), embed, "hyper w2"),
            (heads.b2.output_dim(), 1, "hyper b2"),
        ];
        for (got, want, what) in dims {
            if got != want {
                return Err(Error::shape(what, want, got));
            }
        }
        let state_dim = heads.w1.input_dim();
        if heads.nets().iter().any(|n| n.input_dim() != state_dim) {
            return Err(Error::config("mixer", "hypernetworks disagree on state size"));
        }
        Ok(MonotonicMixer {
            n_agents,
            embed,
            target: heads.clone(),
            online: heads,
        })
    }

    pub fn online(&self) -> &HyperHeads {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut HyperHeads {
        &mut self.online
    }

    pub fn target(&self) -> &HyperHeads {
        &self.target
    }

    pub fn sync_targets(&mut self) -> Result<()> {
        for (t, o) in self.target.nets_mut().into_iter().zip(self.online.nets()) {
            t.copy_params_from(o)?;
        }
        Ok(())
    }

    fn check(&self, chosen: &[f64]) -> Result<()> {
        if chosen.len() != self.n_agents {
            return Err(Error::shape("chosen values", self.n_agents, chosen.len()));
        }
        Ok(())
    }

    fn mix_with(&self, heads: &HyperHeads, state: &[f64], chosen: &[f64]) -> Result<f64> {
        self.check(chosen)?;
        let w1 = heads.w1.evaluate(state)?;
        let b1 = heads.b1.evaluate(state)?;
        let w2 = heads.w2.evaluate(state)?;
        let b2 = heads.b2.evaluate(state)?[0];
        let e = self.embed;
        let out = (0..e)
            .map(|k| {
                let pre = b1[k] + (0..self.n_agents).map(|i| chosen[i] * w1[i * e + k]).sum::<f64>();
                w2[k] * elu(pre)
            })
            .sum::<f64>();
        Ok(out + b2)
    }

    pub fn mix(&self, state: &[f64], chosen: &[f64]) -> Result<f64> {
        self.mix_with(&self.online, state, chosen)
    }

    pub fn mix_target(&self, state: &[f64], chosen: &[f64]) -> Result<f64> {
        self.mix_with(&self.target, state, chosen)
    }

    pub fn forward_traced(&self, state: &[f64], chosen: &[f64]) -> Result<(f64, MixTrace)> {
        self.check(chosen)?;
        let h = &self.online;
        let (w1, t_w1) = h.w1.forward_traced(state)?;
        let (b1, t_b1) = h.b1.forward_traced(state)?;
        let (w2, t_w2) = h.w2.forward_traced(state)?;
        let (b2, t_b2) = h.b2.forward_traced(state)?;
        let e = self.embed;
        let pre_hidden: Vec<f64> = (0..e)
            .map(|k| b1[k] + (0..self.n_agents).map(|i| chosen[i] * w1[i * e + k]).sum::<f64>())
            .collect();
        let hidden: Vec<f64> = pre_hidden.iter().map(|&p| elu(p)).collect();
        let q_jt = hidden.iter().zip(&w2).map(|(h, w)| h * w).sum::<f64>() + b2[0];
        Ok((
            q_jt,
            MixTrace {
                chosen: chosen.to_vec(),
                w1,
                w2,
                pre_hidden,
                hidden,
                traces: [t_w1, t_b1, t_w2, t_b2],
            },
        ))
    }

    /// Accumulates hypernetwork gradients for upstream `dL/dQ_jt` and returns
    /// `dL/dQ_i` for each chosen value.
    pub fn backward(&mut self, trace: &MixTrace, upstream: f64) -> Result<Vec<f64>> {
        let e = self.embed;
        let n = self.n_agents;
        let d_w2: Vec<f64> = trace.hidden.iter().map(|h| upstream * h).collect();
        let d_pre: Vec<f64> = (0..e)
            .map(|k| upstream * trace.w2[k] * elu_derivative(trace.pre_hidden[k]))
            .collect();
        let mut d_w1 = vec![0.0; n * e];
        let mut d_chosen = vec![0.0; n];
        for i in 0..n {
            for k in 0..e {
                d_w1[i * e + k] = d_pre[k] * trace.chosen[i];
                d_chosen[i] += d_pre[k] * trace.w1[i * e + k];
            }
        }
        let [t_w1, t_b1, t_w2, t_b2] = &trace.traces;
        let h = &mut self.online;
        h.w1.backward_traced(t_w1, &d_w1)?;
        h.b1.backward_traced(t_b1, &d_pre)?;
        h.w2.backward_traced(t_w2, &d_w2)?;
        h.b2.backward_traced(t_b2, &[upstream])?;
        Ok(d_chosen)
    }
}

pub fn monotonic_mix(chosen_q: &[f64], state: &[f64], mixer: &MonotonicMixer) -> Result<f64> {
    mixer.mix(state, chosen_q)
}

/// How chosen individual values become the joint value.
#[derive(Clone, Debug)]
pub enum Mixer {
    Sum,
    Monotonic(MonotonicMixer),
}

/// Backward context for one [`Mixer::forward_traced`] call.
#[derive(Clone, Debug)]
pub enum MixerTrace {
    Sum(usize),
    Monotonic(Box<MixTrace>),
}

impl Mixer {
    pub fn mix(&self, state: &[f64], chosen: &[f64]) -> Result<f64> {
        match self {
            Mixer::Sum => Ok(sum_mix(chosen)),
            Mixer::Monotonic(m) => m.mix(state, chosen),
        }
    }

    pub fn mix_target(&self, state: &[f64], chosen: &[f64]) -> Result<f64> {
        match self {
            Mixer::Sum => Ok(sum_mix(chosen)),
            Mixer::Monotonic(m) => m.mix_target(state, chosen),
        }
    }

    pub fn forward_traced(&self, state: &[f64], chosen: &[f64]) -> Result<(f64, MixerTrace)> {
        match self {
            Mixer::Sum => Ok((sum_mix(chosen), MixerTrace::Sum(chosen.len()))),
            Mixer::Monotonic(m) => {
                let (q, t) = m.forward_traced(state, chosen)?;
                Ok((q, MixerTrace::Monotonic(Box::new(t))))
            }
        }
    }

    pub fn backward(&mut self, trace: &MixerTrace, upstream: f64) -> Result<Vec<f64>> {
        match (self, trace) {
            (Mixer::Sum, MixerTrace::Sum(n)) => Ok(vec![upstream; *n]),
            (Mixer::Monotonic(m), MixerTrace::Monotonic(t)) => m.backward(t, upstream),
            _ => Err(Error::Usage("mixer trace does not match mixer".into())),
        }
    }

    pub fn sync_targets(&mut self) -> Result<()> {
        match self {
            Mixer::Sum => Ok(()),
            Mixer::Monotonic(m) => m.sync_targets(),
        }
    }

    pub fn nets_mut(&mut self) -> Vec<&mut DenseNet> {
        match self {
            Mixer::Sum => Vec::new(),
            Mixer::Monotonic(m) => m.online.nets_mut().into_iter().collect(),
        }
    }
}

/// Scalar estimate of the joint action value from the global state and the
/// one-hot joint action.
#[derive(Clone, Debug)]
pub struct JointApproxNet {
    state_dim: usize,
    n_agents: usize,
    n_actions: usize,
    online: DenseNet,
    target: DenseNet,
}

impl JointApproxNet {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        n_agents: usize,
        n_actions: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(state_dim + n_agents * n_actions)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let online = DenseNet::mlp(&sizes, Activation::Relu, Activation::Identity, rng)?;
        Ok(JointApproxNet {
            state_dim,
            n_agents,
            n_actions,
            target: online.clone(),
            online,
        })
    }

    pub fn encode(&self, state: &[f64], joint_action: &[usize]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::shape("state", self.state_dim, state.len()));
        }
        crate::env::check_joint_action(joint_action, self.n_agents, self.n_actions)?;
        let mut input = state.to_vec();
        for &a in joint_action {
            input.extend(one_hot(a, self.n_actions));
        }
        Ok(input)
    }

    pub fn q(&self, state: &[f64], joint_action: &[usize]) -> Result<f64> {
        Ok(self.online.evaluate(&self.encode(state, joint_action)?)?[0])
    }

    pub fn target_q(&self, state: &[f64], joint_action: &[usize]) -> Result<f64> {
        Ok(self.target.evaluate(&self.encode(state, joint_action)?)?[0])
    }

    pub fn online(&self) -> &DenseNet {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut DenseNet {
        &mut self.online
    }

    pub fn target(&self) -> &DenseNet {
        &self.target
    }

    pub fn sync_targets(&mut self) -> Result<()> {
        self.target.copy_params_from(&self.online)
    }
}

/// Whether the per-agent greedy actions jointly attain the maximum of `joint`
/// over the whole (enumerated) joint action space.
pub fn igm_holds<F>(q_vectors: &[Vec<f64>], n_actions: usize, mut joint: F) -> Result<bool>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    let greedy = greedy_joint_action(q_vectors);
    let mut best = f64::NEG_INFINITY;
    for action in enumerate_joint_actions(q_vectors.len(), n_actions)? {
        best = best.max(joint(&action)?);
    }
    Ok(joint(&greedy)? >= best)
}
