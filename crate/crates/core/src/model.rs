//! Fully-connected head mapping an embedding to one logit per grid age.
//!
//! Weights are row-major `(out_dim, in_dim)`. The softmax is not part of the head;
//! it is applied by the losses and by inference.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    // Derivative at a pre-activation; the ReLU derivative at 0 is taken as 0.
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
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(invalid!(
                "layer dimensions must be positive, got {out_dim}x{in_dim}"
            ));
        }
        if weights.len() != in_dim * out_dim {
            return Err(invalid!(
                "layer {out_dim}x{in_dim} needs {} weights, got {}",
                in_dim * out_dim,
                weights.len()
            ));
        }
        if biases.len() != out_dim {
            return Err(invalid!(
                "layer with {out_dim} outputs got {} biases",
                biases.len()
            ));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            biases,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        Self::new(
            in_dim,
            out_dim,
            alloc::vec![0.0; in_dim * out_dim],
            alloc::vec![0.0; out_dim],
            activation,
        )
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

/// Activations recorded by [`ModelHead::forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `inputs[l]` is the input fed to layer `l`; `inputs[0]` is the embedding.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn embedding(&self) -> &[f64] {
        &self.inputs[0]
    }

    pub fn num_layers(&self) -> usize {
        self.pre.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Gradient of a scalar loss with respect to every parameter of a [`ModelHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub layers: Vec<LayerGradient>,
}

impl HeadGradient {
    pub fn zeros_like(head: &ModelHead) -> Self {
        Self {
            layers: head
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: alloc::vec![0.0; l.weights.len()],
                    biases: alloc::vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn fill_zero(&mut self) {
        for v in self.values_mut() {
            *v = 0.0;
        }
    }

    /// Flattened values in the same order as [`ModelHead::parameters`].
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }
}

/// Stack of dense layers; the last one has identity activation and outputs `K` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHead {
    layers: Vec<DenseLayer>,
}

impl ModelHead {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(invalid!("a head needs at least one layer"));
        };
        if last.activation != Activation::Identity {
            return Err(invalid!("the output layer must use identity activation"));
        }
        if let Some(i) = layers
            .windows(2)
            .position(|pair| pair[0].out_dim != pair[1].in_dim)
        {
            return Err(invalid!(
                "layer {} outputs {} values but layer {} expects {}",
                i,
                layers[i].out_dim,
                i + 1,
                layers[i + 1].in_dim
            ));
        }
        Ok(Self { layers })
    }

    /// Rectifier hidden layers of the given widths followed by a linear layer with
    /// `k` outputs. Weights are drawn from `N(0, 2 / fan_in)`, biases start at zero.
    pub fn init(in_dim: usize, hidden_dims: &[usize], k: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 {
            return Err(invalid!("input dimension must be positive"));
        }
        if k < 2 {
            return Err(invalid!("need at least two output labels, got {k}"));
        }
        if hidden_dims.contains(&0) {
            return Err(invalid!("hidden layer widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden_dims.len() + 1);
        let mut fan_in = in_dim;
        let widths = hidden_dims.iter().map(|&w| (w, Activation::Relu));
        for (out_dim, activation) in widths.chain(core::iter::once((k, Activation::Identity))) {
            let std = libm::sqrt(2.0 / fan_in as f64);
            let normal = Normal::new(0.0, std).map_err(|e| invalid!("bad init scale: {e}"))?;
            let weights = (0..fan_in * out_dim)
                .map(|_| normal.sample(&mut rng))
                .collect();
            layers.push(DenseLayer::new(
                fan_in,
                out_dim,
                weights,
                alloc::vec![0.0; out_dim],
                activation,
            )?);
            fan_in = out_dim;
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    fn check_input(&self, embedding: &[f64]) -> Result<()> {
        if embedding.len() != self.in_dim() {
            return Err(invalid!(
                "embedding has {} values, head expects {}",
                embedding.len(),
                self.in_dim()
            ));
        }
        Ok(())
    }

    /// Logits for one embedding, plus the trace needed by [`ModelHead::backward`].
    pub fn forward(&self, embedding: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_input(embedding)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = embedding.to_vec();
        for layer in &self.layers {
            let z = layer.pre_activation(&current);
            let next = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(core::mem::replace(&mut current, next));
            pre.push(z);
        }
        Ok((current, ForwardTrace { inputs, pre }))
    }

    /// Logits without keeping a trace.
    pub fn logits(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        self.check_input(embedding)?;
        let mut current = embedding.to_vec();
        for layer in &self.layers {
            current = layer
                .pre_activation(&current)
                .into_iter()
                .map(|v| layer.activation.apply(v))
                .collect();
        }
        Ok(current)
    }

    /// Gradient of a scalar loss given its gradient with respect to the logits.
    pub fn backward(&self, trace: &ForwardTrace, dloss_dlogits: &[f64]) -> Result<HeadGradient> {
        let mut grad = HeadGradient::zeros_like(self);
        self.backward_accumulate(trace, dloss_dlogits, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `scale` times the parameter gradient into `grad`.
    pub fn backward_accumulate(
        &self,
        trace: &ForwardTrace,
        dloss_dlogits: &[f64],
        scale: f64,
        grad: &mut HeadGradient,
    ) -> Result<()> {
        self.check_trace(trace)?;
        if dloss_dlogits.len() != self.out_dim() {
            return Err(invalid!(
                "got {} logit gradients for a head with {} outputs",
                dloss_dlogits.len(),
                self.out_dim()
            ));
        }
        if grad.layers.len() != self.layers.len()
            || grad.layers.iter().zip(&self.layers).any(|(g, l)| {
                g.weights.len() != l.weights.len() || g.biases.len() != l.biases.len()
            })
        {
            return Err(Error::InvalidState(
                "gradient buffer does not match the head".into(),
            ));
        }

        // delta = dL/d(output of the current layer), then turned into dL/d(pre-activation).
        let mut delta: Vec<f64> = dloss_dlogits.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (d, &z) in delta.iter_mut().zip(&trace.pre[l]) {
                *d *= layer.activation.derivative(z);
            }
            let input = &trace.inputs[l];
            let g = &mut grad.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += scale * d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += scale * d * x;
                }
            }
            if l > 0 {
                let mut upstream = alloc::vec![0.0; layer.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (u, w) in upstream.iter_mut().zip(row) {
                        *u += d * w;
                    }
                }
                delta = upstream;
            }
        }
        Ok(())
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let ok = trace.pre.len() == self.layers.len()
            && trace.inputs.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(trace.pre.iter().zip(&trace.inputs))
                .all(|(l, (z, x))| z.len() == l.out_dim && x.len() == l.in_dim);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidState(
                "forward trace was not produced by this head's architecture".into(),
            ))
        }
    }

    /// `param += step` for every parameter, in [`ModelHead::parameters`] order.
    pub fn apply_update(&mut self, step: &HeadGradient) -> Result<()> {
        if step.layers.len() != self.layers.len() {
            return Err(Error::InvalidState("update does not match the head".into()));
        }
        for (layer, s) in self.layers.iter_mut().zip(&step.layers) {
            if s.weights.len() != layer.weights.len() || s.biases.len() != layer.biases.len() {
                return Err(Error::InvalidState("update does not match the head".into()));
            }
            for (w, d) in layer.weights.iter_mut().zip(&s.weights) {
                *w += d;
            }
            for (b, d) in layer.biases.iter_mut().zip(&s.biases) {
                *b += d;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    // Straightforward triple loop kept separate from the iterator-based layer code.
    fn reference_forward(head: &ModelHead, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in head.layers() {
            let mut out = vec![0.0; layer.out_dim()];
            for o in 0..layer.out_dim() {
                let mut acc = layer.biases()[o];
                for i in 0..layer.in_dim() {
                    acc += layer.weights()[o * layer.in_dim() + i] * cur[i];
                }
                out[o] = if layer.activation() == Activation::Relu {
                    acc.max(0.0)
                } else {
                    acc
                };
            }
            cur = out;
        }
        cur
    }

    #[test]
    fn init_shapes() {
        let head = ModelHead::init(400, &[256], 100, 7).unwrap();
        let l = head.layers();
        assert_eq!((l[0].out_dim(), l[0].in_dim()), (256, 400));
        assert_eq!((l[1].out_dim(), l[1].in_dim()), (100, 256));
        assert_eq!(l[0].activation(), Activation::Relu);
        assert_eq!(l[1].activation(), Activation::Identity);

        let lin = ModelHead::init(4, &[], 3, 0).unwrap();
        assert_eq!(lin.layers().len(), 1);
        assert_eq!(
            (lin.layers()[0].out_dim(), lin.layers()[0].in_dim()),
            (3, 4)
        );
        assert!(lin.layers()[0].biases().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelHead::init(32, &[16, 8], 10, 42).unwrap();
        let b = ModelHead::init(32, &[16, 8], 10, 42).unwrap();
        let c = ModelHead::init(32, &[16, 8], 10, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_scale_follows_fan_in() {
        let head = ModelHead::init(400, &[256], 10, 1).unwrap();
        let w = head.layers()[0].weights();
        let var = w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64;
        assert!((var - 2.0 / 400.0).abs() < 0.05 * 2.0 / 400.0, "var {var}");
    }

    #[test]
    fn init_rejects_zero_dims() {
        assert!(ModelHead::init(0, &[4], 3, 0).is_err());
        assert!(ModelHead::init(4, &[0], 3, 0).is_err());
        assert!(ModelHead::init(4, &[], 1, 0).is_err());
    }

    #[test]
    fn new_validates_chain() {
        let a = DenseLayer::zeros(4, 3, Activation::Relu).unwrap();
        let b = DenseLayer::zeros(2, 5, Activation::Identity).unwrap();
        assert!(ModelHead::new(vec![a.clone(), b]).is_err());
        assert!(ModelHead::new(vec![a.clone()]).is_err());
        assert!(ModelHead::new(vec![]).is_err());
        let c = DenseLayer::zeros(3, 5, Activation::Identity).unwrap();
        assert!(ModelHead::new(vec![a, c]).is_ok());
        assert!(DenseLayer::new(2, 2, vec![0.0; 3], vec![0.0; 2], Activation::Relu).is_err());
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let head = ModelHead::new(vec![
            DenseLayer::zeros(5, 4, Activation::Relu).unwrap(),
            DenseLayer::zeros(4, 7, Activation::Identity).unwrap(),
        ])
        .unwrap();
        let (logits, _) = head.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(logits, vec![0.0; 7]);
    }

    #[test]
    fn identity_layer_passes_embedding_through() {
        let k = 4;
        let mut w = vec![0.0; k * k];
        for i in 0..k {
            w[i * k + i] = 1.0;
        }
        let head = ModelHead::new(vec![DenseLayer::new(
            k,
            k,
            w,
            vec![0.0; k],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let x = [0.3, -1.0, 2.5, 7.0];
        assert_eq!(head.logits(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn forward_matches_reference_and_norm_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let head = ModelHead::init(6, &[9, 5], 4, seed).unwrap();
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (logits, trace) = head.forward(&x).unwrap();
            let reference = reference_forward(&head, &x);
            for (a, b) in logits.iter().zip(&reference) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
            assert_eq!(head.logits(&x).unwrap(), logits);
            assert_eq!(trace.num_layers(), 3);
            // Biases are zero at init and ReLU is 1-Lipschitz, so the Frobenius norms bound the output.
            let bound: f64 = head
                .layers()
                .iter()
                .map(|l| l.weights().iter().map(|w| w * w).sum::<f64>().sqrt())
                .product::<f64>()
                * x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(logits.iter().all(|v| v.is_finite() && v.abs() <= bound));
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let head = ModelHead::init(3, &[], 2, 0).unwrap();
        assert!(head.forward(&[1.0, 2.0]).is_err());
        assert!(head.logits(&[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn zero_upstream_gradient() {
        let head = ModelHead::init(4, &[3], 3, 9).unwrap();
        let (_, trace) = head.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let g = head.backward(&trace, &[0.0; 3]).unwrap();
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_weight_gradient_is_outer_product() {
        let head = ModelHead::init(3, &[], 2, 4).unwrap();
        let x = [0.5, -1.5, 2.0];
        let (_, trace) = head.forward(&x).unwrap();
        let up = [0.25, -3.0];
        let g = head.backward(&trace, &up).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.layers[0].weights[o * 3 + i], up[o] * x[i]);
            }
            assert_eq!(g.layers[0].biases[o], up[o]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Scalar loss: a fixed linear functional of the logits.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let head = ModelHead::init(4, &[3], 3, 21).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |h: &ModelHead| -> f64 {
            h.logits(&x)
                .unwrap()
                .iter()
                .zip(&c)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (_, trace) = head.forward(&x).unwrap();
        let grad = head.backward(&trace, &c).unwrap();
        let analytic: Vec<f64> = grad.values().copied().collect();
        let h = 1e-5;
        for (idx, a) in analytic.iter().enumerate() {
            let mut up = head.clone();
            *up.parameters_mut().nth(idx).unwrap() += h;
            let mut down = head.clone();
            *down.parameters_mut().nth(idx).unwrap() -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            let denom = a.abs().max(fd.abs()).max(1e-3);
            assert!((a - fd).abs() / denom < 1e-4, "param {idx}: {a} vs {fd}");
        }
    }

    #[test]
    fn backward_rejects_foreign_trace() {
        let a = ModelHead::init(4, &[3], 3, 0).unwrap();
        let b = ModelHead::init(4, &[5], 3, 0).unwrap();
        let (_, trace) = a.forward(&[0.0; 4]).unwrap();
        assert!(matches!(
            b.backward(&trace, &[0.0; 3]),
            Err(Error::InvalidState(_))
        ));
    }
}
