use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

/// Fully connected layer computing `W x + b`, `W` of shape out x in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn forward(&self, input: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(input.rows(), self.outputs());
        for (i, x) in input.iter_rows().enumerate() {
            for (o, (w, b)) in out
                .row_mut(i)
                .iter_mut()
                .zip(self.weights.iter_rows().zip(&self.biases))
            {
                *o = crate::math::dot(w, x) + b;
            }
        }
        out
    }
}

/// ReLU multilayer perceptron whose last layer emits the feature vector
/// without an activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; the first entry is the batch input.
    inputs: Vec<Matrix>,
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl Mlp {
    /// Gaussian weights with standard deviation `init_std`, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], init_std: f64, rng: &mut R) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "need at least input and feature sizes, all positive; got {layer_sizes:?}"
            )));
        }
        let normal = Normal::new(0.0, init_std)
            .map_err(|e| Error::InvalidArgument(format!("init std {init_std}: {e}")))?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let data = (0..w[0] * w[1]).map(|_| normal.sample(rng)).collect();
                Dense {
                    weights: Matrix::from_vec(w[1], w[0], data).expect("shape"),
                    biases: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "model needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::DimMismatch {
                    expected: pair[0].outputs(),
                    found: pair[1].inputs(),
                });
            }
        }
        for l in &layers {
            if l.biases.len() != l.outputs() {
                return Err(Error::DimMismatch {
                    expected: l.outputs(),
                    found: l.biases.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs()];
        sizes.extend(self.layers.iter().map(Dense::outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    pub fn forward(&self, input: &Matrix) -> Result<ForwardCache> {
        if input.cols() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                found: input.cols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&x);
            if l + 1 < self.layers.len() {
                y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(x);
            x = y;
        }
        Ok(ForwardCache { inputs, output: x })
    }

    /// Feature-layer output without keeping intermediate activations.
    pub fn features(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.forward(input)?.output)
    }

    /// Parameter gradients given `dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, d_output: &Matrix) -> Vec<LayerGrad> {
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut upstream = d_output.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[l];
            let mut d_w = Matrix::zeros(layer.outputs(), layer.inputs());
            let mut d_b = vec![0.0; layer.outputs()];
            let mut d_in = Matrix::zeros(input.rows(), layer.inputs());
            for i in 0..input.rows() {
                let x = input.row(i);
                for (o, &g) in upstream.row(i).iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    d_b[o] += g;
                    for (dw, xv) in d_w.row_mut(o).iter_mut().zip(x) {
                        *dw += g * xv;
                    }
                    for (di, w) in d_in.row_mut(i).iter_mut().zip(layer.weights.row(o)) {
                        *di += g * w;
                    }
                }
            }
            if l > 0 {
                // The layer input is a ReLU output: zero entries pass no gradient.
                for (d, x) in d_in.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if *x <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            grads.push(LayerGrad {
                weights: d_w,
                biases: d_b,
            });
            upstream = d_in;
        }
        grads.reverse();
        grads
    }
}
