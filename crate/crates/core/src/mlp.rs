//! Feed-forward networks with hand-derived backward passes.
//!
//! The model graph is fixed and small, so reverse-mode differentiation is
//! realized as per-layer analytic backward passes instead of a general tape.
//! Every gradient produced here is covered by the finite-difference oracle in
//! [`crate::gradcheck`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn forward(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative dy/dz given pre-activation `z` and output `y = forward(z)`.
    #[inline]
    fn grad(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Dense layer `y = activation(x W + b)` with `W` stored as `in_dim x out_dim`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl LinearLayer {
    /// Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)); biases zero.
    pub fn new_with_rng<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut weight = Tensor2::zeros(in_dim, out_dim);
        for v in weight.as_mut_slice() {
            *v = rng.gen_range(-limit..limit);
        }
        Self {
            weight,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// A stack of dense layers applied row-wise to a batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
}

/// Per-layer records from a forward pass, sufficient for an exact backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (the batch for layer 0, post-activations after).
    inputs: Vec<Tensor2>,
    /// Pre-activation values of each layer.
    preacts: Vec<Tensor2>,
    /// Post-activation output of the final layer.
    output: Tensor2,
}

impl MlpCache {
    pub fn output(&self) -> &Tensor2 {
        &self.output
    }
}

/// Gradients shaped exactly like [`Mlp`] parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weight: Tensor2,
    pub d_bias: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrads {
                    d_weight: Tensor2::zeros(l.weight.rows(), l.weight.cols()),
                    d_bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// `self += scale * other`, used for batch accumulation.
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient layer count mismatch".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.d_weight.add_scaled(&b.d_weight, scale)?;
            for (x, y) in a.d_bias.iter_mut().zip(&b.d_bias) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.d_weight.scale(factor);
            for b in &mut l.d_bias {
                *b *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.d_weight.is_finite() && l.d_bias.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Builds a stack from `(out_dim, activation)` specs starting at `in_dim`.
    pub fn new_with_rng<R: Rng + ?Sized>(
        in_dim: usize,
        layers: &[(usize, Activation)],
        rng: &mut R,
    ) -> Self {
        let mut built = Vec::with_capacity(layers.len());
        let mut dim = in_dim;
        for &(out, act) in layers {
            built.push(LinearLayer::new_with_rng(dim, out, act, rng));
            dim = out;
        }
        Self { layers: built }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, LinearLayer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, LinearLayer::out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LinearLayer::param_count).sum()
    }

    /// Forward pass over a batch; the cache suffices for an exact backward pass.
    pub fn forward(&self, input: &Tensor2) -> Result<(Tensor2, MlpCache)> {
        if self.layers.is_empty() {
            return Err(Error::Shape("mlp has no layers".into()));
        }
        if input.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, first layer expects {}",
                input.cols(),
                self.in_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let rows = current.rows();
            let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());
            let mut z = Tensor2::zeros(rows, out_dim);
            for r in 0..rows {
                let x = current.row(r);
                let zr = z.row_mut(r);
                zr.copy_from_slice(&layer.bias);
                for (i, &xi) in x.iter().enumerate() {
                    let wrow = layer.weight.row(i);
                    for (o, zo) in zr.iter_mut().enumerate() {
                        *zo = wrow[o].mul_add(xi, *zo);
                    }
                }
            }
            let mut y = Tensor2::zeros(rows, out_dim);
            for r in 0..rows {
                for (o, v) in y.row_mut(r).iter_mut().enumerate() {
                    *v = layer.activation.forward(z.get(r, o));
                }
            }
            inputs.push(std::mem::replace(&mut current, y));
            preacts.push(z);
            let _ = in_dim;
        }
        current.ensure_finite("mlp forward output")?;
        let cache = MlpCache {
            inputs,
            preacts,
            output: current.clone(),
        };
        Ok((current, cache))
    }

    /// Backward pass: exact analytic derivatives of the forward map.
    ///
    /// `output_grad` is dL/d(output), post-activation. Returns dL/d(input)
    /// and parameter gradients shaped like the network.
    pub fn backward(&self, cache: &MlpCache, output_grad: &Tensor2) -> Result<(Tensor2, MlpGrads)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Shape("cache does not match network depth".into()));
        }
        if !output_grad.same_shape(&cache.output) {
            return Err(Error::Shape(format!(
                "output_grad {}x{} vs forward output {}x{}",
                output_grad.rows(),
                output_grad.cols(),
                cache.output.rows(),
                cache.output.cols()
            )));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut upstream = output_grad.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[k];
            let z = &cache.preacts[k];
            // y for grad-from-output: recompute from z only for the last layer
            // where cache.output holds it; intermediate layer outputs are the
            // next layer's input.
            let y: &Tensor2 = if k + 1 < self.layers.len() {
                &cache.inputs[k + 1]
            } else {
                &cache.output
            };
            let rows = x.rows();
            let lg = &mut grads.layers[k];
            let mut d_input = Tensor2::zeros(rows, layer.in_dim());
            for r in 0..rows {
                let xr = x.row(r);
                let ur = upstream.row(r);
                // dL/dz = dL/dy * act'(z)
                let mut dz = vec![0.0; layer.out_dim()];
                for o in 0..layer.out_dim() {
                    dz[o] = ur[o] * layer.activation.grad(z.get(r, o), y.get(r, o));
                    lg.d_bias[o] += dz[o];
                }
                for (i, &xi) in xr.iter().enumerate() {
                    let wrow = layer.weight.row(i);
                    let grow = lg.d_weight.row_mut(i);
                    let mut acc = 0.0;
                    for (o, &dzo) in dz.iter().enumerate() {
                        grow[o] = xi.mul_add(dzo, grow[o]);
                        acc = wrow[o].mul_add(dzo, acc);
                    }
                    d_input.row_mut(r)[i] = acc;
                }
            }
            upstream = d_input;
        }
        Ok((upstream, grads))
    }

    /// Flattens all parameters into a single vector (layer order, weights then bias).
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Writes a flat vector back into the parameter tensors.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "flat vector length {} vs parameter count {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let wlen = l.weight.rows() * l.weight.cols();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + wlen]);
            at += wlen;
            let blen = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + blen]);
            at += blen;
        }
        Ok(())
    }
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.d_weight.as_slice());
            out.extend_from_slice(&l.d_bias);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(dim: usize) -> LinearLayer {
        let mut weight = Tensor2::zeros(dim, dim);
        for i in 0..dim {
            weight.set(i, i, 1.0);
        }
        LinearLayer {
            weight,
            bias: vec![0.0; dim],
            activation: Activation::Identity,
        }
    }

    #[test]
    fn identity_single_layer_passes_through() {
        let mlp = Mlp {
            layers: vec![identity_layer(2)],
        };
        let input = Tensor2::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (out, _) = mlp.forward(&input).unwrap();
        assert_eq!(out.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut layer = identity_layer(2);
        layer.activation = Activation::Relu;
        let mlp = Mlp { layers: vec![layer] };
        let input = Tensor2::from_rows(&[vec![-1.0, 3.0]]).unwrap();
        let (out, _) = mlp.forward(&input).unwrap();
        assert_eq!(out.row(0), &[0.0, 3.0]);
    }

    #[test]
    fn two_layer_composition() {
        // W1=[[2]], b1=[0], W2=[[3]], b2=[1], identity: 3*(2*1)+1 = 7
        let l1 = LinearLayer {
            weight: Tensor2::from_vec(1, 1, vec![2.0]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
        };
        let l2 = LinearLayer {
            weight: Tensor2::from_vec(1, 1, vec![3.0]).unwrap(),
            bias: vec![1.0],
            activation: Activation::Identity,
        };
        let mlp = Mlp { layers: vec![l1, l2] };
        let (out, _) = mlp.forward(&Tensor2::from_rows(&[vec![1.0]]).unwrap()).unwrap();
        assert_eq!(out.get(0, 0), 7.0);
    }

    #[test]
    fn forward_rejects_dim_mismatch() {
        let mlp = Mlp {
            layers: vec![identity_layer(2)],
        };
        let input = Tensor2::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(mlp.forward(&input).is_err());
    }

    #[test]
    fn single_linear_weight_grad_is_input() {
        // d(w*x)/dw = x = 5
        let l = LinearLayer {
            weight: Tensor2::from_vec(1, 1, vec![2.0]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
        };
        let mlp = Mlp { layers: vec![l] };
        let (_, cache) = mlp.forward(&Tensor2::from_rows(&[vec![5.0]]).unwrap()).unwrap();
        let upstream = Tensor2::from_rows(&[vec![1.0]]).unwrap();
        let (_, grads) = mlp.backward(&cache, &upstream).unwrap();
        assert_eq!(grads.layers[0].d_weight.get(0, 0), 5.0);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        // pre-activation -2 => zero gradient through the unit
        let l = LinearLayer {
            weight: Tensor2::from_vec(1, 1, vec![1.0]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Relu,
        };
        let mlp = Mlp { layers: vec![l] };
        let (_, cache) = mlp.forward(&Tensor2::from_rows(&[vec![-2.0]]).unwrap()).unwrap();
        let upstream = Tensor2::from_rows(&[vec![1.0]]).unwrap();
        let (d_input, grads) = mlp.backward(&cache, &upstream).unwrap();
        assert_eq!(grads.layers[0].d_weight.get(0, 0), 0.0);
        assert_eq!(d_input.get(0, 0), 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mlp = Mlp::new_with_rng(
            3,
            &[(5, Activation::Relu), (2, Activation::Sigmoid)],
            &mut rng,
        );
        let input = Tensor2::from_rows(&[vec![0.3, -0.2, 0.9], vec![1.0, 0.0, -1.0]]).unwrap();
        let (a, _) = mlp.forward(&input).unwrap();
        let (b, _) = mlp.forward(&input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flat_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp = Mlp::new_with_rng(2, &[(3, Activation::Relu), (1, Activation::Identity)], &mut rng);
        let flat = mlp.flatten_params();
        let mut copy = mlp.clone();
        copy.set_flat_params(&flat).unwrap();
        assert_eq!(copy.flatten_params(), flat);
        assert!(mlp.set_flat_params(&flat[1..]).is_err());
    }
}
