use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{Activation, Grads, Mode, Params};
use crate::error::{Error, Result};

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Affine map followed by an element-wise activation. Weights are row-major
/// `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Dense {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Dense {
            in_dim,
            out_dim,
            activation,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    fn affine(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        let sparse = x.len() > 64 && x.iter().filter(|&&v| v == 0.0).count() * 2 > x.len();
        if sparse {
            let nz: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
            for (o, z) in out.iter_mut().enumerate() {
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                *z += nz.iter().map(|&i| row[i] * x[i]).sum::<f64>();
            }
        } else {
            for (o, z) in out.iter_mut().enumerate() {
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                *z += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            }
        }
    }
}

/// Cached activations from a forward pass, consumed by [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    stamp: u64,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl Trace {
    /// Final network output (after the last activation).
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Feed-forward stack of dense layers with inverted dropout on hidden layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    label: String,
    layers: Vec<Dense>,
    dropout: f64,
    #[serde(skip, default = "fresh_stamp")]
    stamp: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label && self.layers == other.layers && self.dropout == other.dropout
    }
}

impl DenseNet {
    pub fn from_layers(label: impl Into<String>, layers: Vec<Dense>, dropout: f64) -> Result<Self> {
        let label = label.into();
        if layers.is_empty() {
            return Err(Error::Config(format!("{label}: network needs at least one layer")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("{label}: dropout {dropout} outside [0, 1)")));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::dim(
                    format!("{label} layer {} input", k + 1),
                    pair[0].out_dim,
                    pair[1].in_dim,
                ));
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::dim(
                    format!("{label} layer {k} parameters"),
                    l.in_dim * l.out_dim + l.out_dim,
                    l.weights.len() + l.bias.len(),
                ));
            }
        }
        Ok(DenseNet {
            label,
            layers,
            dropout,
            stamp: fresh_stamp(),
        })
    }

    /// One hidden layer of width `hidden_multiplier × output`, Glorot init.
    #[allow(clippy::too_many_arguments)]
    pub fn one_hidden<R: Rng + ?Sized>(
        label: impl Into<String>,
        input: usize,
        output: usize,
        hidden_multiplier: usize,
        hidden_act: Activation,
        output_act: Activation,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = hidden_multiplier * output;
        let layers = vec![
            Dense::glorot(input, hidden, hidden_act, rng),
            Dense::glorot(hidden, output, output_act, rng),
        ];
        Self::from_layers(label, layers, dropout)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Mutable access to the layers; invalidates outstanding traces.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.stamp = fresh_stamp();
        &mut self.layers
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::dim(
                format!("{} layer 0 input", self.label),
                self.input_dim(),
                input.len(),
            ));
        }
        Ok(())
    }

    /// Inference pass: no dropout, nothing cached.
    pub fn infer(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = vec![0.0; layer.out_dim];
            layer.affine(&x, &mut z);
            z.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            x = z;
        }
        Ok(x)
    }

    /// Forward pass that records what [`backward`](Self::backward) needs. In
    /// `Mode::Train` hidden activations are masked with rate `dropout` and
    /// rescaled by `1/(1-dropout)`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Trace)> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut outputs = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut x = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut a = vec![0.0; layer.out_dim];
            layer.affine(&x, &mut a);
            a.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            let hidden = k + 1 < n;
            let mask = if hidden && mode == Mode::Train && self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                let scale = 1.0 / keep;
                let m: Vec<f64> = (0..a.len())
                    .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                    .collect();
                Some(m)
            } else {
                None
            };
            let next = match &mask {
                Some(m) => a.iter().zip(m).map(|(v, s)| v * s).collect(),
                None => a.clone(),
            };
            inputs.push(std::mem::replace(&mut x, next));
            outputs.push(a);
            masks.push(mask);
        }
        Ok((
            x,
            Trace {
                stamp: self.stamp,
                inputs,
                outputs,
                masks,
            },
        ))
    }

    /// Backpropagates `upstream = ∂L/∂output` through the cached pass,
    /// accumulating parameter gradients into `grads` and returning `∂L/∂input`.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grads: &mut Grads) -> Result<Vec<f64>> {
        self.backward_limited(trace, upstream, grads, self.input_dim())
    }

    /// As [`backward`](Self::backward) but only the first `input_len` entries
    /// of the input gradient are computed (the rest is data, not parameters).
    pub fn backward_limited(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grads: &mut Grads,
        input_len: usize,
    ) -> Result<Vec<f64>> {
        if trace.stamp != self.stamp || trace.inputs.len() != self.layers.len() {
            return Err(Error::StaleTrace(self.label.clone()));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::dim(
                format!("{} upstream gradient", self.label),
                self.output_dim(),
                upstream.len(),
            ));
        }
        if grads.blocks.len() != 2 * self.layers.len() {
            return Err(Error::dim(
                format!("{} gradient blocks", self.label),
                2 * self.layers.len(),
                grads.blocks.len(),
            ));
        }
        let mut g = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if let Some(m) = &trace.masks[k] {
                g.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
            }
            let a = &trace.outputs[k];
            let dz: Vec<f64> = g
                .iter()
                .zip(a)
                .map(|(gv, av)| gv * layer.activation.derivative_from_output(*av))
                .collect();
            let x = &trace.inputs[k];
            let (wb, rest) = grads.blocks[2 * k..].split_at_mut(1);
            let gw = &mut wb[0];
            let gb = &mut rest[0];
            let nz: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
            for (o, d) in dz.iter().enumerate() {
                gb[o] += d;
                if *d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for &i in &nz {
                    row[i] += d * x[i];
                }
            }
            let want = if k == 0 { input_len.min(layer.in_dim) } else { layer.in_dim };
            let mut gin = vec![0.0; want];
            for (o, d) in dz.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..o * layer.in_dim + want];
                for (gi, w) in gin.iter_mut().zip(row) {
                    *gi += d * w;
                }
            }
            g = gin;
        }
        Ok(g)
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

impl Params for DenseNet {
    fn label(&self) -> &str {
        &self.label
    }

    fn block_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|k| {
                [
                    format!("{}.layer{k}.weight", self.label),
                    format!("{}.layer{k}.bias", self.label),
                ]
            })
            .collect()
    }

    fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.stamp = fresh_stamp();
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut l = Dense::zeros(2, 2, Activation::Identity);
        l.weights = vec![1.0, 0.0, 0.0, 1.0];
        let net = DenseNet::from_layers("id", vec![l], 0.0).unwrap();
        assert_eq!(net.infer(&[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
    }

    #[test]
    fn zero_sigmoid_layer_outputs_half() {
        let net =
            DenseNet::from_layers("s", vec![Dense::zeros(3, 4, Activation::Sigmoid)], 0.0).unwrap();
        assert_eq!(net.infer(&[5.0, -2.0, 9.0]).unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn rejects_unchained_layers() {
        let layers = vec![
            Dense::zeros(3, 4, Activation::Tanh),
            Dense::zeros(5, 1, Activation::Identity),
        ];
        let err = DenseNet::from_layers("bad", layers, 0.0).unwrap_err();
        assert!(err.to_string().contains("bad layer 1"));
    }

    #[test]
    fn input_mismatch_names_layer() {
        let net = DenseNet::one_hidden("enc", 4, 2, 2, Activation::Tanh, Activation::Identity, 0.0, &mut rng(1))
            .unwrap();
        let err = net.infer(&[1.0; 3]).unwrap_err();
        assert!(err.to_string().contains("enc layer 0"), "{err}");
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = DenseNet::one_hidden("n", 5, 3, 2, Activation::Tanh, Activation::Identity, 0.4, &mut rng(2))
            .unwrap();
        let (_, trace) = net.forward(&[0.1, 0.2, 0.3, 0.4, 0.5], Mode::Train, &mut rng(9)).unwrap();
        let mut g = Grads::zeros_like(&net);
        let gin = net.backward(&trace, &[0.0; 3], &mut g).unwrap();
        assert!(g.is_zero());
        assert!(gin.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_weight_grad_is_outer_product() {
        let net = DenseNet::from_layers(
            "lin",
            vec![Dense::glorot(3, 2, Activation::Identity, &mut rng(4))],
            0.0,
        )
        .unwrap();
        let x = [0.5, -1.0, 2.0];
        let (_, trace) = net.forward(&x, Mode::Infer, &mut rng(0)).unwrap();
        let mut g = Grads::zeros_like(&net);
        net.backward(&trace, &[1.0, 1.0], &mut g).unwrap();
        assert_eq!(g.blocks[0], vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert_eq!(g.blocks[1], vec![1.0, 1.0]);
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut net =
            DenseNet::one_hidden("n", 2, 1, 2, Activation::Tanh, Activation::Sigmoid, 0.0, &mut rng(5)).unwrap();
        let (_, trace) = net.forward(&[0.1, 0.2], Mode::Train, &mut rng(0)).unwrap();
        net.blocks_mut()[0][0] += 0.1;
        let mut g = Grads::zeros_like(&net);
        assert!(matches!(
            net.backward(&trace, &[1.0], &mut g),
            Err(Error::StaleTrace(_))
        ));
    }

    #[test]
    fn limited_backward_truncates_input_grad() {
        let net = DenseNet::one_hidden("n", 6, 2, 2, Activation::Tanh, Activation::Identity, 0.0, &mut rng(6))
            .unwrap();
        let x = [0.1, 0.0, 0.3, 1.0, 0.0, 1.0];
        let (_, trace) = net.forward(&x, Mode::Infer, &mut rng(0)).unwrap();
        let mut g1 = Grads::zeros_like(&net);
        let full = net.backward(&trace, &[0.7, -0.2], &mut g1).unwrap();
        let mut g2 = Grads::zeros_like(&net);
        let part = net.backward_limited(&trace, &[0.7, -0.2], &mut g2, 3).unwrap();
        assert_eq!(&full[..3], part.as_slice());
        assert_eq!(g1, g2);
    }

    #[test]
    fn infer_matches_forward_without_dropout() {
        let net = DenseNet::one_hidden("n", 4, 3, 2, Activation::Tanh, Activation::Identity, 0.4, &mut rng(8))
            .unwrap();
        let x = [0.2, 0.0, 0.5, 0.3];
        let (y, _) = net.forward(&x, Mode::Infer, &mut rng(0)).unwrap();
        assert_eq!(y, net.infer(&x).unwrap());
    }
}
