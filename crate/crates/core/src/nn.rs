//! Dense feed-forward networks with a hand-written backward pass.
//!
//! Every network in the crate (individual Q, joint approximation, hypernetwork
//! heads) is a [`DenseNet`]. Parameters carry a gradient buffer of the same
//! shape; optimizer state lives in [`RmsProp`], outside the network.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
    /// Only used for the output of monotonic hypernetwork heads.
    Abs,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Abs => x.abs(),
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Abs => {
                if pre > 0.0 {
                    1.0
                } else if pre < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One affine map followed by an elementwise activation.
///
/// `weight` is stored row-major with shape `out_dim x in_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    grad_weight: Vec<f64>,
    grad_bias: Vec<f64>,
}

impl Layer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config("layer", "dimensions must be positive"));
        }
        if weight.len() != in_dim * out_dim {
            return Err(Error::shape("layer weight", in_dim * out_dim, weight.len()));
        }
        if bias.len() != out_dim {
            return Err(Error::shape("layer bias", out_dim, bias.len()));
        }
        Ok(Layer {
            in_dim,
            out_dim,
            grad_weight: vec![0.0; weight.len()],
            grad_bias: vec![0.0; bias.len()],
            weight,
            bias,
            activation,
        })
    }

    /// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 {
            return Err(Error::config("layer", "dimensions must be positive"));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Layer::new(in_dim, out_dim, weight, vec![0.0; out_dim], activation)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn grad_weight(&self) -> &[f64] {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &[f64] {
        &self.grad_bias
    }

    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

/// Activations recorded by a forward pass, needed to run the matching backward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct DenseNet {
    layers: Vec<Layer>,
    cache: Option<Trace>,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network", "needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::config(
                    "network",
                    format!(
                        "layer {k} outputs {} values but layer {} expects {}",
                        pair[0].out_dim,
                        k + 1,
                        pair[1].in_dim
                    ),
                ));
            }
        }
        Ok(DenseNet {
            layers,
            cache: None,
        })
    }

    /// Builds a randomly initialised MLP. `sizes` lists every width from input to
    /// output; all hidden layers share `hidden` and the last layer uses `output`.
    pub fn mlp<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("network", "needs input and output sizes"));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last { output } else { hidden };
                Layer::random(w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        DenseNet::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Forward pass without recording anything.
    pub fn evaluate(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer
                .pre_activation(&x)
                .into_iter()
                .map(|p| layer.activation.apply(p))
                .collect();
        }
        Ok(x)
    }

    pub fn forward_traced(&self, input: &[f64]) -> Result<(Vec<f64>, Trace)> {
        self.check_input(input)?;
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for layer in &self.layers {
            let pre = layer.pre_activation(&x);
            let out = pre.iter().map(|&p| layer.activation.apply(p)).collect();
            trace.inputs.push(std::mem::replace(&mut x, out));
            trace.pre.push(pre);
        }
        Ok((x, trace))
    }

    /// Forward pass that caches activations for a later [`DenseNet::backward`].
    pub fn forward(&mut self, input: &[f64]) -> Result<Vec<f64>> {
        let (out, trace) = self.forward_traced(input)?;
        self.cache = Some(trace);
        Ok(out)
    }

    /// Backpropagates through the most recent [`DenseNet::forward`], accumulating
    /// parameter gradients. Returns the gradient with respect to the input.
    pub fn backward(&mut self, upstream: &[f64]) -> Result<Vec<f64>> {
        let trace = self
            .cache
            .take()
            .ok_or_else(|| Error::Usage("backward called before forward".into()))?;
        let result = self.backward_traced(&trace, upstream);
        self.cache = Some(trace);
        result
    }

    pub fn backward_traced(&mut self, trace: &Trace, upstream: &[f64]) -> Result<Vec<f64>> {
        if trace.pre.len() != self.layers.len() {
            return Err(Error::Usage("trace does not belong to this network".into()));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::shape("upstream gradient", self.output_dim(), upstream.len()));
        }
        let mut grad = upstream.to_vec();
        for (k, layer) in self.layers.iter_mut().enumerate().rev() {
            let input = &trace.inputs[k];
            let delta: Vec<f64> = grad
                .iter()
                .zip(&trace.pre[k])
                .map(|(g, &p)| g * layer.activation.derivative(p))
                .collect();
            let mut grad_in = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                layer.grad_bias[o] += d;
                let row = o * layer.in_dim;
                for i in 0..layer.in_dim {
                    layer.grad_weight[row + i] += d * input[i];
                    grad_in[i] += d * layer.weight[row + i];
                }
            }
            grad = grad_in;
        }
        Ok(grad)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.grad_weight.iter_mut().for_each(|g| *g = 0.0);
            layer.grad_bias.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for (k, l) in self.layers.iter().enumerate() {
            if index < l.weight.len() {
                return (k, true, index);
            }
            index -= l.weight.len();
            if index < l.bias.len() {
                return (k, false, index);
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat parameter access in layer order (weights then bias per layer).
    pub fn param(&self, index: usize) -> f64 {
        let (k, is_w, i) = self.locate(index);
        if is_w {
            self.layers[k].weight[i]
        } else {
            self.layers[k].bias[i]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (k, is_w, i) = self.locate(index);
        if is_w {
            self.layers[k].weight[i] = value;
        } else {
            self.layers[k].bias[i] = value;
        }
    }

    pub fn grad(&self, index: usize) -> f64 {
        let (k, is_w, i) = self.locate(index);
        if is_w {
            self.layers[k].grad_weight[i]
        } else {
            self.layers[k].grad_bias[i]
        }
    }

    pub fn grads(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.grad_weight.iter().chain(&l.grad_bias).copied())
            .collect()
    }

    pub fn grad_sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.grad_weight.iter().chain(&l.grad_bias))
            .map(|g| g * g)
            .sum()
    }

    pub fn scale_grads(&mut self, scale: f64) {
        for layer in &mut self.layers {
            layer.grad_weight.iter_mut().for_each(|g| *g *= scale);
            layer.grad_bias.iter_mut().for_each(|g| *g *= scale);
        }
    }

    pub fn same_shape(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    /// Hard copy of all parameters from `source`.
    pub fn copy_params_from(&mut self, source: &DenseNet) -> Result<()> {
        if !self.same_shape(source) {
            return Err(Error::config("network", "cannot copy between different shapes"));
        }
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            dst.weight.copy_from_slice(&src.weight);
            dst.bias.copy_from_slice(&src.bias);
            dst.activation = src.activation;
        }
        Ok(())
    }

    pub fn has_non_finite_params(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias))
            .any(|p| !p.is_finite())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), input.len()));
        }
        Ok(())
    }
}

/// RMSProp running averages of squared gradients for one network.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub decay: f64,
    pub eps: f64,
    mean_sq: Vec<(Vec<f64>, Vec<f64>)>,
}

impl RmsProp {
    pub fn new(net: &DenseNet, decay: f64, eps: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::config("rms_decay", "must lie in (0, 1)"));
        }
        if !(eps >= 0.0) {
            return Err(Error::config("rms_eps", "must be non-negative"));
        }
        Ok(RmsProp {
            decay,
            eps,
            mean_sq: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
                .collect(),
        })
    }

    pub fn mean_sq(&self) -> impl Iterator<Item = f64> + '_ {
        self.mean_sq
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b).copied())
    }

    /// `s <- decay*s + (1-decay)*g^2; p <- p - lr*g/(sqrt(s)+eps)`.
    pub fn step(&mut self, net: &mut DenseNet, lr: f64) -> Result<()> {
        if self.mean_sq.len() != net.layers.len() {
            return Err(Error::config("optimizer", "state does not match network"));
        }
        let (decay, eps) = (self.decay, self.eps);
        let update = |p: &mut [f64], g: &[f64], s: &mut [f64]| {
            for ((p, &g), s) in p.iter_mut().zip(g).zip(s.iter_mut()) {
                *s = decay * *s + (1.0 - decay) * g * g;
                if g != 0.0 {
                    *p -= lr * g / (s.sqrt() + eps);
                }
            }
        };
        for (layer, (sw, sb)) in net.layers.iter_mut().zip(&mut self.mean_sq) {
            update(&mut layer.weight, &layer.grad_weight, sw);
            update(&mut layer.bias, &layer.grad_bias, sb);
        }
        Ok(())
    }
}

/// Scales all gradients in `nets` so their joint L2 norm is at most `max_norm`.
/// Returns the scale that was applied (1 when no clipping happened).
pub fn clip_grad_norm(nets: &mut [&mut DenseNet], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::config("grad_norm_clip", "must be positive"));
    }
    let norm = nets.iter().map(|n| n.grad_sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for net in nets.iter_mut() {
            net.scale_grads(scale);
        }
        Ok(scale)
    } else {
        Ok(1.0)
    }
}

/// Central-difference gradient of `f` with respect to every parameter of `net`.
/// Parameters are restored afterwards.
pub fn numeric_gradient<F>(net: &mut DenseNet, h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&DenseNet) -> f64,
{
    (0..net.param_count())
        .map(|i| {
            let p = net.param(i);
            net.set_param(i, p + h);
            let plus = f(net);
            net.set_param(i, p - h);
            let minus = f(net);
            net.set_param(i, p);
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `max |analytic - numeric| / max(1, |numeric|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-4;

/// Compares the analytic gradient of `loss(net(input))` with central differences.
///
/// `loss` returns the scalar loss and its gradient with respect to the network
/// output. The network's gradient buffers are left holding the analytic gradient.
pub fn finite_diff_check<L>(net: &mut DenseNet, input: &[f64], loss: L) -> Result<f64>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    net.zero_grad();
    let out = net.forward(input)?;
    let (_, upstream) = loss(&out);
    net.backward(&upstream)?;
    let analytic = net.grads();
    let numeric = numeric_gradient(net, FD_STEP, |n| {
        let out = n.evaluate(input).expect("input shape already checked");
        loss(&out).0
    });
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: f64, b: f64, act: Activation) -> DenseNet {
        DenseNet::from_layers(vec![Layer::new(1, 1, vec![w], vec![b], act).unwrap()]).unwrap()
    }

    #[test]
    fn forward_hand_cases() {
        assert_eq!(single(1.0, 0.0, Activation::Identity).evaluate(&[3.5]).unwrap(), vec![3.5]);
        assert_eq!(single(-1.0, 0.0, Activation::Relu).evaluate(&[2.0]).unwrap(), vec![0.0]);
        let net = DenseNet::from_layers(vec![
            Layer::new(1, 1, vec![2.0], vec![1.0], Activation::Relu).unwrap(),
            Layer::new(1, 1, vec![3.0], vec![0.0], Activation::Identity).unwrap(),
        ])
        .unwrap();
        assert_eq!(net.evaluate(&[1.0]).unwrap(), vec![9.0]);
    }

    #[test]
    fn shape_errors() {
        let net = single(1.0, 0.0, Activation::Identity);
        assert!(matches!(net.evaluate(&[1.0, 2.0]), Err(Error::Config { .. })));
        let bad = DenseNet::from_layers(vec![
            Layer::new(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Relu).unwrap(),
            Layer::new(2, 1, vec![0.0; 2], vec![0.0], Activation::Identity).unwrap(),
        ]);
        assert!(bad.is_err());
        assert!(Layer::new(2, 2, vec![0.0; 3], vec![0.0; 2], Activation::Relu).is_err());
    }

    #[test]
    fn backward_linear_and_dead_relu() {
        let mut net = single(1.0, 0.0, Activation::Identity);
        net.forward(&[3.5]).unwrap();
        assert_eq!(net.backward(&[1.0]).unwrap(), vec![1.0]);
        assert_eq!(net.layers()[0].grad_weight(), &[3.5]);
        assert_eq!(net.layers()[0].grad_bias(), &[1.0]);

        let mut dead = single(-1.0, 0.0, Activation::Relu);
        dead.forward(&[2.0]).unwrap();
        assert_eq!(dead.backward(&[1.0]).unwrap(), vec![0.0]);
        assert_eq!(dead.grads(), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_before_forward_is_usage_error() {
        let mut net = single(1.0, 0.0, Activation::Identity);
        assert!(matches!(net.backward(&[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn rmsprop_hand_step() {
        let mut net = single(1.0, 0.0, Activation::Identity);
        net.layers_mut()[0].grad_weight[0] = 1.0;
        let mut opt = RmsProp::new(&net, 0.99, 0.0).unwrap();
        opt.step(&mut net, 0.5).unwrap();
        let s: Vec<f64> = opt.mean_sq().collect();
        assert!((s[0] - 0.01).abs() < 1e-15);
        assert!((net.param(0) - (-4.0)).abs() < 1e-12);
        // bias had zero gradient
        assert_eq!(net.param(1), 0.0);
    }

    #[test]
    fn rmsprop_zero_gradient_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = DenseNet::mlp(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng)
            .unwrap();
        let before = net.clone();
        let mut opt = RmsProp::new(&net, 0.99, 1e-5).unwrap();
        opt.step(&mut net, 0.1).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn rmsprop_effective_step_shrinks() {
        let mut net = single(0.0, 0.0, Activation::Identity);
        let mut opt = RmsProp::new(&net, 0.99, 1e-5).unwrap();
        let mut prev = net.param(0);
        let mut steps = Vec::new();
        for _ in 0..3 {
            net.zero_grad();
            net.layers_mut()[0].grad_weight[0] = 1.0;
            opt.step(&mut net, 0.01).unwrap();
            steps.push((prev - net.param(0)).abs());
            prev = net.param(0);
        }
        assert!(steps[1] < steps[0] && steps[2] < steps[1]);
    }

    #[test]
    fn clip_cases() {
        let mut a = DenseNet::from_layers(vec![
            Layer::new(1, 2, vec![0.0, 0.0], vec![0.0, 0.0], Activation::Identity).unwrap(),
        ])
        .unwrap();
        assert_eq!(clip_grad_norm(&mut [&mut a], 10.0).unwrap(), 1.0);
        a.layers_mut()[0].grad_weight.copy_from_slice(&[3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut [&mut a], 10.0).unwrap(), 1.0);
        assert_eq!(a.layers()[0].grad_weight(), &[3.0, 4.0]);
        a.layers_mut()[0].grad_weight.copy_from_slice(&[30.0, 40.0]);
        let scale = clip_grad_norm(&mut [&mut a], 10.0).unwrap();
        assert!((scale - 0.2).abs() < 1e-15);
        let g = a.layers()[0].grad_weight();
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
        assert!(clip_grad_norm(&mut [&mut a], 0.0).is_err());
    }

    #[test]
    fn finite_diff_on_linear_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net =
            DenseNet::mlp(&[3, 2], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let err = finite_diff_check(&mut net, &[0.3, -1.2, 0.7], |y| {
            (y.iter().map(|v| v * v).sum(), y.iter().map(|v| 2.0 * v).collect())
        })
        .unwrap();
        assert!(err < 1e-7, "err = {err}");
    }

    #[test]
    fn copy_params_makes_outputs_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DenseNet::mlp(&[2, 5, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let mut b =
            DenseNet::mlp(&[2, 5, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        b.copy_params_from(&a).unwrap();
        assert_eq!(a.evaluate(&[0.1, 0.2]).unwrap(), b.evaluate(&[0.1, 0.2]).unwrap());
        let c = DenseNet::mlp(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        assert!(b.copy_params_from(&c).is_err());
    }
}
