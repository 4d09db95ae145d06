//! A plain fully-connected ReLU network in f64, with hand-rolled
//! forward/backward passes. Everything is seeded and single-threaded so a
//! (config, seed) pair pins every weight for the whole training history.

use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub seed: u64,
}

impl NetConfig {
    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.input > 12 {
            return Err(Error::InvalidConfig(format!("input width {} not in 1..=12", self.input)));
        }
        if self.hidden.is_empty() || self.hidden.len() > 3 {
            return Err(Error::InvalidConfig("need 1..=3 hidden layers".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) || self.classes < 2 {
            return Err(Error::InvalidConfig("layer widths must be positive, classes >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct DenseLayer {
    pub weights: Vec<f64>, // row-major out x in
    pub bias: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

impl DenseLayer {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Multilayer perceptron: ReLU hidden layers, linear class scores on top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyNetwork {
    pub(crate) layers: Vec<DenseLayer>,
    config: NetConfig,
}

impl ToyNetwork {
    /// He-normal initialization from the config seed.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let mut layers = Vec::new();
        let mut widths = vec![config.input];
        widths.extend_from_slice(&config.hidden);
        widths.push(config.classes);
        for pair in widths.windows(2) {
            let (inputs, outputs) = (pair[0], pair[1]);
            let std = (2.0 / inputs as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("valid std");
            let weights = (0..inputs * outputs).map(|_| normal.sample(&mut rng)).collect();
            layers.push(DenseLayer { weights, bias: vec![0.0; outputs], inputs, outputs });
        }
        Ok(ToyNetwork { layers, config })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn class_count(&self) -> usize {
        self.config.classes
    }

    /// Class scores before any normalization.
    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        let mut cur = features.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if i != last {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn softmax(&self, features: &[f64]) -> Vec<f64> {
        softmax(&self.logits(features))
    }

    /// Mean cross-entropy over a set of (features, label) pairs.
    pub fn mean_cross_entropy<'a>(
        &self,
        samples: impl Iterator<Item = (&'a [f64], usize)>,
    ) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (x, label) in samples {
            let p = self.softmax(x)[label];
            // f64::max would silently swallow a NaN coming out of a broken
            // forward pass; keep it visible so divergence is detectable.
            total += if p.is_finite() { -(p.max(1e-300)).ln() } else { f64::NAN };
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    /// One SGD step on a mini-batch with softmax cross-entropy loss.
    pub fn sgd_step(&mut self, batch: &[(&[f64], usize)], lr: f64) {
        if batch.is_empty() {
            return;
        }
        let grads = self.batch_gradients(batch);
        let scale = lr / batch.len() as f64;
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads) {
            for (w, g) in layer.weights.iter_mut().zip(&gw) {
                *w -= scale * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&gb) {
                *b -= scale * g;
            }
        }
    }

    /// Summed (not averaged) gradients of the cross-entropy loss over the
    /// batch, per layer.
    pub(crate) fn batch_gradients(&self, batch: &[(&[f64], usize)]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();

        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        for &(x, label) in batch {
            // forward, keeping activations
            activations.clear();
            activations.push(x.to_vec());
            let last = self.layers.len() - 1;
            for (i, layer) in self.layers.iter().enumerate() {
                let mut out = Vec::new();
                layer.forward(activations.last().unwrap(), &mut out);
                if i != last {
                    for v in &mut out {
                        *v = v.max(0.0);
                    }
                }
                activations.push(out);
            }
            // dL/dlogits = softmax - onehot
            let mut delta = softmax(activations.last().unwrap());
            delta[label] -= 1.0;
            // backward
            for i in (0..self.layers.len()).rev() {
                let layer = &self.layers[i];
                let input = &activations[i];
                let (gw, gb) = &mut grads[i];
                for o in 0..layer.outputs {
                    let d = delta[o];
                    gb[o] += d;
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (slot, v) in row.iter_mut().zip(input) {
                        *slot += d * v;
                    }
                }
                if i > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for o in 0..layer.outputs {
                        let d = delta[o];
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (slot, w) in prev.iter_mut().zip(row) {
                            *slot += d * w;
                        }
                    }
                    // ReLU mask of the layer below
                    for (slot, &a) in prev.iter_mut().zip(&activations[i]) {
                        if a <= 0.0 {
                            *slot = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        grads
    }

    /// Flat weight blob with a versioned header; the inverse of
    /// [`ToyNetwork::from_blob`].
    pub fn to_blob(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::new();
        out.extend_from_slice(b"TOYNET1\n");
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for layer in &self.layers {
            for w in layer.weights.iter().chain(&layer.bias) {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let fail = |reason: &str| Error::Parse { path: "<blob>".into(), reason: reason.into() };
        let magic = b"TOYNET1\n";
        if bytes.len() < magic.len() + 4 || &bytes[..magic.len()] != magic {
            return Err(fail("bad magic"));
        }
        let mut at = magic.len();
        let header_len = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        at += 4;
        if bytes.len() < at + header_len {
            return Err(fail("truncated header"));
        }
        let config: NetConfig = serde_json::from_slice(&bytes[at..at + header_len])
            .map_err(|e| fail(&format!("header: {e}")))?;
        at += header_len;
        let mut net = ToyNetwork::new(config)?;
        for layer in &mut net.layers {
            for slot in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                if bytes.len() < at + 8 {
                    return Err(fail("truncated weights"));
                }
                *slot = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
                at += 8;
            }
        }
        if at != bytes.len() {
            return Err(fail("trailing bytes"));
        }
        Ok(net)
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
