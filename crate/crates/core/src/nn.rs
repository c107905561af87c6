//! Small dense feed-forward networks with ReLU hidden layers and a linear
//! head, trained with Adam. Both the mortality classifier (which wraps the
//! head in a sigmoid) and the indirect feature estimator are built on this.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layer. `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.gen_range(-limit..=limit)).collect();
        Dense {
            inputs,
            outputs,
            weights,
            biases: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.biases)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

/// Stack of dense layers. Every layer but the last applies ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl Network {
    /// Glorot-uniform weights, zero biases. `dims` runs input to output.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims.windows(2).map(|w| Dense::glorot(w[0], w[1], &mut rng)).collect();
        Ok(Network { layers })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Network {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::InvalidConfig(format!(
                    "layer {i}: parameter lengths do not match {}x{}",
                    l.outputs, l.inputs
                )));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = relu(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Post-activation values of every layer, input first.
    fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&acts[i], &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = relu(*v));
            }
            acts.push(out);
        }
        acts
    }

    /// Jacobian of the outputs with respect to the inputs, `outputs x inputs`.
    /// ReLU uses subgradient 0 at the kink.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let acts = self.trace(x);
        let first = &self.layers[0];
        let mut jac: Vec<Vec<f64>> = first.weights.chunks_exact(first.inputs).map(<[f64]>::to_vec).collect();
        for (li, layer) in self.layers.iter().enumerate().skip(1) {
            // mask rows of the previous layer's jacobian by its ReLU state
            for (row, &a) in jac.iter_mut().zip(&acts[li]) {
                if a <= 0.0 {
                    row.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            let mut next = vec![vec![0.0; x.len()]; layer.outputs];
            for (o, out_row) in next.iter_mut().enumerate() {
                for (h, in_row) in jac.iter().enumerate() {
                    let w = layer.weight(o, h);
                    if w != 0.0 {
                        out_row.iter_mut().zip(in_row).for_each(|(d, s)| *d += w * s);
                    }
                }
            }
            jac = next;
        }
        Ok(jac)
    }

    /// Gradient of `upstream · output(x)` with respect to `x`.
    pub fn input_gradient(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let acts = self.trace(x);
        Ok(self.backward(&acts, upstream.to_vec(), None))
    }

    /// Back-propagates `delta` (gradient at the linear output) and returns
    /// the gradient at the input. Parameter gradients are accumulated into
    /// `grads` when provided.
    fn backward(&self, acts: &[Vec<f64>], mut delta: Vec<f64>, mut grads: Option<&mut [Dense]>) -> Vec<f64> {
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            if let Some(g) = grads.as_deref_mut() {
                let g = &mut g[li];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.biases[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(w, a)| *w += d * a);
                }
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            if li > 0 {
                prev.iter_mut().zip(input).for_each(|(p, &a)| {
                    if a <= 0.0 {
                        *p = 0.0
                    }
                });
            }
            delta = prev;
        }
        delta
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidConfig("network needs input and output sizes".into()));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidConfig(format!("zero-width layer in {dims:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    #[default]
    FullBatch,
    MiniBatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Loss {
    /// Binary cross-entropy on a sigmoid of the single linear output.
    LogisticCrossEntropy,
    /// Mean of squared errors over all outputs.
    MeanSquared,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FitOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch: BatchMode,
    pub seed: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: i32,
}

impl Adam {
    fn new(net: &Network) -> Self {
        let zeros: Vec<Dense> = net.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Network, grads: &[Dense], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads[li];
            let m = &mut self.m[li];
            let v = &mut self.v[li];
            update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights, lr, c1, c2);
            update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases, lr, c1, c2);
        }
    }
}

fn update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, c1: f64, c2: f64) {
    for i in 0..p.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        p[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
}

/// Numerically stable `ln(1 + e^z) - y z`.
pub(crate) fn logistic_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Network {
    /// Mean loss over the given rows.
    pub(crate) fn loss(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>], loss: Loss) -> f64 {
        let n = inputs.len() as f64;
        inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| sample_loss(&self.forward_unchecked(x), t, loss))
            .sum::<f64>()
            / n
    }

    /// Trains in place with Adam. Returns the mean loss before each epoch
    /// followed by the loss after the last one.
    pub(crate) fn fit(&mut self, inputs: &[Vec<f64>], targets: &[Vec<f64>], loss: Loss, opts: FitOptions) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        for x in inputs {
            self.check_input(x)?;
        }
        for t in targets {
            if t.len() != self.output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.output_dim(),
                    got: t.len(),
                });
            }
        }
        if opts.epochs == 0 || !(opts.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("epochs and learning rate must be positive".into()));
        }

        let n = inputs.len();
        let batch = match opts.batch {
            BatchMode::FullBatch => n,
            BatchMode::MiniBatch(0) => return Err(Error::InvalidConfig("mini-batch size must be positive".into())),
            BatchMode::MiniBatch(b) => b.min(n),
        };
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut adam = Adam::new(self);
        let mut grads: Vec<Dense> = self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect();
        let mut history = Vec::with_capacity(opts.epochs + 1);

        for epoch in 0..opts.epochs {
            if batch < n {
                order.shuffle(&mut rng);
            }
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                grads.iter_mut().for_each(|g| {
                    g.weights.iter_mut().for_each(|w| *w = 0.0);
                    g.biases.iter_mut().for_each(|b| *b = 0.0);
                });
                let scale = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    let acts = self.trace(&inputs[i]);
                    let out = &acts[acts.len() - 1];
                    epoch_loss += sample_loss(out, &targets[i], loss);
                    let delta = output_delta(out, &targets[i], loss, scale);
                    self.backward(&acts, delta, Some(&mut grads));
                }
                adam.step(self, &grads, opts.learning_rate);
            }
            let epoch_loss = epoch_loss / n as f64;
            if !epoch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            history.push(epoch_loss);
        }
        let final_loss = self.loss(inputs, targets, loss);
        if !final_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: opts.epochs });
        }
        history.push(final_loss);
        Ok(history)
    }
}

fn sample_loss(out: &[f64], target: &[f64], loss: Loss) -> f64 {
    match loss {
        Loss::LogisticCrossEntropy => logistic_loss(out[0], target[0]),
        Loss::MeanSquared => out.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / out.len() as f64,
    }
}

fn output_delta(out: &[f64], target: &[f64], loss: Loss, scale: f64) -> Vec<f64> {
    match loss {
        Loss::LogisticCrossEntropy => vec![(sigmoid(out[0]) - target[0]) * scale],
        Loss::MeanSquared => {
            let k = out.len() as f64;
            out.iter().zip(target).map(|(o, t)| 2.0 * (o - t) * scale / k).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff_jacobian(net: &Network, x: &[f64], h: f64) -> Vec<Vec<f64>> {
        let out_dim = net.output_dim();
        let mut jac = vec![vec![0.0; x.len()]; out_dim];
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fp = net.forward(&xp).unwrap();
            let fm = net.forward(&xm).unwrap();
            for o in 0..out_dim {
                jac[o][j] = (fp[o] - fm[o]) / (2.0 * h);
            }
        }
        jac
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let net = Network::new(&[4, 6, 3], 11).unwrap();
        let x = [0.3, 0.7, 0.1, 0.55];
        let jac = net.jacobian(&x).unwrap();
        let fd = finite_diff_jacobian(&net, &x, 1e-6);
        for (a, b) in jac.iter().flatten().zip(fd.iter().flatten()) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn input_gradient_is_jacobian_transpose_product() {
        let net = Network::new(&[3, 5, 2], 3).unwrap();
        let x = [0.2, 0.9, 0.4];
        let up = [0.7, -1.3];
        let g = net.input_gradient(&x, &up).unwrap();
        let jac = net.jacobian(&x).unwrap();
        for j in 0..3 {
            let expect = up[0] * jac[0][j] + up[1] * jac[1][j];
            assert!((g[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_network_is_constant() {
        let net = Network::zeros(&[3, 4, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert!(net.jacobian(&[0.5, 0.5, 0.5]).unwrap().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_wrong_input_length() {
        let net = Network::zeros(&[3, 1]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn glorot_init_respects_limits() {
        let net = Network::new(&[10, 5, 1], 0).unwrap();
        let limit = (6.0f64 / 15.0).sqrt();
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() <= limit));
        assert!(net.layers()[0].biases.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn logistic_loss_is_stable() {
        assert!((logistic_loss(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!(logistic_loss(800.0, 1.0).abs() < 1e-12);
        assert!((logistic_loss(800.0, 0.0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn mse_fit_reduces_loss() {
        let inputs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 50.0]).collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![2.0 * x[0] - 0.5]).collect();
        let mut net = Network::new(&[1, 1], 1).unwrap();
        let opts = FitOptions {
            epochs: 500,
            learning_rate: 0.05,
            batch: BatchMode::MiniBatch(8),
            seed: 2,
        };
        let hist = net.fit(&inputs, &targets, Loss::MeanSquared, opts).unwrap();
        assert!(hist.last().unwrap() < &1e-4, "final loss {:?}", hist.last());
    }
}
