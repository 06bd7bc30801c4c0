use rand::Rng;

use super::buffer::Transition;
use crate::config::{ArgmaxSource, MixerKind, TrainingConfig};
use crate::decomposition::{argmax, AgentQNet, JointApproxNet, Mixer, MixerTrace, MonotonicMixer};
use crate::env::one_hot;
use crate::error::{Error, Result};
use crate::losses::{td_target, weighted_squared_loss, TdWeighting};
use crate::nn::{clip_grad_norm, DenseNet, RmsProp, Trace};

/// Environment sizes a learner is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvDims {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainMetrics {
    pub loss_td: f64,
    pub loss_jt: f64,
    /// Clip scale applied to the individual-network (and mixer) gradients.
    pub td_clip_scale: f64,
    /// Clip scale applied to the joint approximation gradients.
    pub jt_clip_scale: f64,
    pub mean_weight: f64,
}

/// Bootstrap targets and the (detached) TD weights for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTargets {
    pub y: Vec<f64>,
    pub q_jt: Vec<f64>,
    pub weights: Vec<f64>,
}

/// The trainable networks of one run plus their optimizers.
///
/// Two losses drive two disjoint parameter groups: the weighted TD loss on the
/// mixed individual values updates the agent networks (and a monotonic mixer),
/// the squared loss on the joint approximation updates only that network.
#[derive(Clone, Debug)]
pub struct Learner {
    pub agents: AgentQNet,
    pub mixer: Mixer,
    pub joint: Option<JointApproxNet>,
    agent_opts: Vec<RmsProp>,
    mixer_opts: Vec<RmsProp>,
    joint_opt: Option<RmsProp>,
    weighting: TdWeighting,
    gamma: f64,
    lr: f64,
    grad_clip: f64,
    argmax_source: ArgmaxSource,
}

struct SampleTrace {
    agent_traces: Vec<Trace>,
    mixer: MixerTrace,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(config: &TrainingConfig, dims: EnvDims, rng: &mut R) -> Result<Self> {
        let hidden = config.hidden_sizes();
        let agents = AgentQNet::new(
            dims.obs_dim,
            dims.n_agents,
            dims.n_actions,
            &hidden,
            config.last_action,
            config.reuse_network,
            rng,
        )?;
        let mut mixer = match config.mixer {
            MixerKind::Sum => Mixer::Sum,
            MixerKind::Monotonic => Mixer::Monotonic(MonotonicMixer::new(
                dims.state_dim,
                dims.n_agents,
                config.mixer_embed_dim,
                rng,
            )?),
        };
        let joint = if config.use_joint_net {
            Some(JointApproxNet::new(
                dims.state_dim,
                dims.n_agents,
                dims.n_actions,
                &hidden,
                rng,
            )?)
        } else {
            None
        };
        let opt = |net: &DenseNet| RmsProp::new(net, config.rms_decay, config.rms_eps);
        let agent_opts = agents.online().iter().map(opt).collect::<Result<_>>()?;
        let mixer_opts = mixer
            .nets_mut()
            .into_iter()
            .map(|n| opt(n))
            .collect::<Result<_>>()?;
        let joint_opt = joint.as_ref().map(|j| opt(j.online())).transpose()?;
        Ok(Learner {
            agents,
            mixer,
            joint,
            agent_opts,
            mixer_opts,
            joint_opt,
            weighting: config.td_weighting()?,
            gamma: config.gamma,
            lr: config.lr,
            grad_clip: config.grad_norm_clip,
            argmax_source: config.double_q_argmax_source,
        })
    }

    pub fn weighting(&self) -> TdWeighting {
        self.weighting
    }

    pub fn sync_targets(&mut self) -> Result<()> {
        self.agents.sync_targets()?;
        self.mixer.sync_targets()?;
        if let Some(j) = &mut self.joint {
            j.sync_targets()?;
        }
        Ok(())
    }

    /// Joint value of `joint_action` from the online decomposition.
    pub fn q_jt(
        &self,
        state: &[f64],
        observations: &[Vec<f64>],
        last_actions: &[Option<usize>],
        joint_action: &[usize],
    ) -> Result<f64> {
        let q = self.agents.all_q_values(observations, last_actions)?;
        let chosen: Vec<f64> = q.iter().zip(joint_action).map(|(q, &a)| q[a]).collect();
        self.mixer.mix(state, &chosen)
    }

    /// Bootstrapped value of the next state: the greedy next joint action comes
    /// from the individual networks, its value from the target joint network
    /// (or from the target decomposition when no joint network is used).
    fn next_value(&self, t: &Transition) -> Result<f64> {
        let n = self.agents.n_agents();
        let mut greedy = Vec::with_capacity(n);
        let mut target_chosen = Vec::with_capacity(n);
        for i in 0..n {
            let obs = &t.next_observations[i];
            let last = Some(t.actions[i]);
            let target_q = self.agents.target_q_values(obs, last, i)?;
            let a = match self.argmax_source {
                ArgmaxSource::Target => argmax(&target_q),
                ArgmaxSource::Online => argmax(&self.agents.q_values(obs, last, i)?),
            };
            greedy.push(a);
            target_chosen.push(target_q[a]);
        }
        match &self.joint {
            Some(j) => j.target_q(&t.next_state, &greedy),
            None => self.mixer.mix_target(&t.next_state, &target_chosen),
        }
    }

    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|t| {
                let next = if t.terminal { 0.0 } else { self.next_value(t)? };
                Ok(td_target(t.reward, self.gamma, t.terminal, next))
            })
            .collect()
    }

    /// Targets, current joint values and detached weights for `batch`.
    pub fn batch_targets(&self, batch: &[&Transition]) -> Result<BatchTargets> {
        let y = self.td_targets(batch)?;
        let q_jt = batch
            .iter()
            .map(|t| self.q_jt(&t.state, &t.observations, &t.last_actions, &t.actions))
            .collect::<Result<Vec<_>>>()?;
        let weights = q_jt
            .iter()
            .zip(&y)
            .map(|(&q, &y)| self.weighting.weight(q, y))
            .collect::<Result<_>>()?;
        Ok(BatchTargets { y, q_jt, weights })
    }

    /// TD loss at the current parameters with `y` and weights held fixed.
    pub fn td_loss_fixed(&self, batch: &[&Transition], y: &[f64], weights: &[f64]) -> Result<f64> {
        let q_jt = batch
            .iter()
            .map(|t| self.q_jt(&t.state, &t.observations, &t.last_actions, &t.actions))
            .collect::<Result<Vec<_>>>()?;
        Ok(weighted_squared_loss(&q_jt, y, weights)?.loss)
    }

    pub fn joint_loss_fixed(&self, batch: &[&Transition], y: &[f64]) -> Result<f64> {
        let joint = self
            .joint
            .as_ref()
            .ok_or_else(|| Error::Usage("no joint network".into()))?;
        let q_hat = batch
            .iter()
            .map(|t| joint.q(&t.state, &t.actions))
            .collect::<Result<Vec<_>>>()?;
        Ok(weighted_squared_loss(&q_hat, y, &vec![1.0; y.len()])?.loss)
    }

    fn zero_grad(&mut self) {
        self.agents.online_mut().iter_mut().for_each(DenseNet::zero_grad);
        self.mixer.nets_mut().into_iter().for_each(DenseNet::zero_grad);
        if let Some(j) = &mut self.joint {
            j.online_mut().zero_grad();
        }
    }

    /// Fills every gradient buffer for `batch` without touching parameters.
    pub fn compute_gradients(&mut self, batch: &[&Transition]) -> Result<TrainMetrics> {
        if batch.is_empty() {
            return Err(Error::Usage("empty training batch".into()));
        }
        self.zero_grad();
        let y = self.td_targets(batch)?;

        let mut traces = Vec::with_capacity(batch.len());
        let mut q_jt = Vec::with_capacity(batch.len());
        for t in batch {
            let mut agent_traces = Vec::with_capacity(t.actions.len());
            let mut chosen = Vec::with_capacity(t.actions.len());
            for (i, &a) in t.actions.iter().enumerate() {
                let input = self.agents.encode(&t.observations[i], t.last_actions[i], i)?;
                let idx = self.agents.net_index(i);
                let (q, trace) = self.agents.online()[idx].forward_traced(&input)?;
                chosen.push(q[a]);
                agent_traces.push(trace);
            }
            let (q, mixer) = self.mixer.forward_traced(&t.state, &chosen)?;
            q_jt.push(q);
            traces.push(SampleTrace {
                agent_traces,
                mixer,
            });
        }
        let weights = q_jt
            .iter()
            .zip(&y)
            .map(|(&q, &y)| self.weighting.weight(q, y))
            .collect::<Result<Vec<_>>>()?;
        let td = weighted_squared_loss(&q_jt, &y, &weights)?;

        let n_actions = self.agents.n_actions();
        for ((t, trace), &g) in batch.iter().zip(&traces).zip(&td.grad) {
            let d_chosen = self.mixer.backward(&trace.mixer, g)?;
            for (i, (&a, agent_trace)) in t.actions.iter().zip(&trace.agent_traces).enumerate() {
                let mut upstream = one_hot(a, n_actions);
                upstream[a] = d_chosen[i];
                let idx = self.agents.net_index(i);
                self.agents.online_mut()[idx].backward_traced(agent_trace, &upstream)?;
            }
        }

        let mut loss_jt = 0.0;
        if let Some(joint) = &mut self.joint {
            let mut q_hat = Vec::with_capacity(batch.len());
            let mut jt_traces = Vec::with_capacity(batch.len());
            for t in batch {
                let input = joint.encode(&t.state, &t.actions)?;
                let (q, trace) = joint.online().forward_traced(&input)?;
                q_hat.push(q[0]);
                jt_traces.push(trace);
            }
            let jt = weighted_squared_loss(&q_hat, &y, &vec![1.0; y.len()])?;
            for (trace, &g) in jt_traces.iter().zip(&jt.grad) {
                joint.online_mut().backward_traced(trace, &[g])?;
            }
            loss_jt = jt.loss;
        }

        Ok(TrainMetrics {
            loss_td: td.loss,
            loss_jt,
            td_clip_scale: 1.0,
            jt_clip_scale: 1.0,
            mean_weight: weights.iter().sum::<f64>() / weights.len() as f64,
        })
    }

    /// One update on both parameter groups: gradients, per-group norm clipping,
    /// RMSProp.
    pub fn train_step(&mut self, batch: &[&Transition]) -> Result<TrainMetrics> {
        let mut m = self.compute_gradients(batch)?;
        if !m.loss_td.is_finite() || !m.loss_jt.is_finite() {
            return Err(Error::NonFinite {
                what: format!("loss (td {}, jt {})", m.loss_td, m.loss_jt),
                episode: 0,
                step: 0,
            });
        }
        {
            let mut td_group: Vec<&mut DenseNet> = self.agents.online_mut().iter_mut().collect();
            td_group.extend(self.mixer.nets_mut());
            m.td_clip_scale = clip_grad_norm(&mut td_group, self.grad_clip)?;
        }
        for (net, opt) in self.agents.online_mut().iter_mut().zip(&mut self.agent_opts) {
            opt.step(net, self.lr)?;
        }
        for (net, opt) in self.mixer.nets_mut().into_iter().zip(&mut self.mixer_opts) {
            opt.step(net, self.lr)?;
        }
        if let (Some(joint), Some(opt)) = (&mut self.joint, &mut self.joint_opt) {
            m.jt_clip_scale = clip_grad_norm(&mut [joint.online_mut()], self.grad_clip)?;
            opt.step(joint.online_mut(), self.lr)?;
        }
        Ok(m)
    }

    pub fn has_non_finite_params(&self) -> bool {
        self.agents.online().iter().any(DenseNet::has_non_finite_params)
            || self
                .joint
                .as_ref()
                .is_some_and(|j| j.online().has_non_finite_params())
            || match &self.mixer {
                Mixer::Sum => false,
                Mixer::Monotonic(m) => {
                    let h = m.online();
                    [&h.w1, &h.b1, &h.w2, &h.b2]
                        .iter()
                        .any(|n| n.has_non_finite_params())
                }
            }
    }
}
