use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Identity => {}
        }
    }

    /// Multiply `grad` in place by the derivative, expressed through the output `y`.
    fn backprop(self, y: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Tanh => grad.iter_mut().zip(y).for_each(|(g, y)| *g *= 1.0 - y * y),
            Activation::Relu => grad.iter_mut().zip(y).for_each(|(g, y)| {
                if *y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Identity => {}
        }
    }
}

/// Fully connected feed-forward network.
#[derive(Debug)]
pub struct DenseNet {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    id: u64,
    generation: u64,
}

impl Clone for DenseNet {
    // A clone is a different network: tapes recorded on one are stale for the other.
    fn clone(&self) -> Self {
        DenseNet {
            sizes: self.sizes.clone(),
            activations: self.activations.clone(),
            params: self.params.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.activations == other.activations && self.params == other.params
    }
}

/// Forward-pass record consumed by [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    net_id: u64,
    generation: u64,
    batch: usize,
    // layer inputs a_0 .. a_{L-1} followed by the output a_L
    activations: Vec<Vec<f64>>,
    output_shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same layout as [`DenseNet::params`].
    pub params: Tensor,
    /// Same shape as the forward input.
    pub input: Tensor,
}

/// Serialized network: layer sizes, activation tags, and per-layer weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetFragment {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    /// Per layer, `[out, in]` row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl DenseNet {
    /// Zero-initialized network; `activations[l]` follows layer `l`.
    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::InvalidModel(format!(
                "{} layer sizes need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        if sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidModel("layer sizes must be positive".into()));
        }
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(DenseNet {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; n],
            id: fresh_id(),
            generation: 0,
        })
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for weights and biases.
    pub fn new<R: Rng>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, activations)?;
        for l in 0..net.n_layers() {
            let bound = 1.0 / (net.sizes[l] as f64).sqrt();
            let r = net.layer_range(l);
            for p in &mut net.params[r] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// Hidden layers with `hidden` activation and an identity head.
    pub fn mlp<R: Rng>(input: usize, hidden: &[usize], output: usize, hidden_act: Activation, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(Activation::Identity);
        Self::new(&sizes, &acts, rng)
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension {
                axis: "network parameters",
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        self.generation += 1;
        Ok(())
    }

    /// Mutable access to the flat parameters; invalidates existing tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    /// `self <- tau * source + (1 - tau) * self`
    pub fn soft_update_from(&mut self, source: &DenseNet, tau: f64) {
        debug_assert_eq!(self.params.len(), source.params.len());
        for (t, s) in self.params_mut().iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.sizes
            .windows(2)
            .take(l)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layer_range(&self, l: usize) -> Range<usize> {
        let start = self.layer_offset(l);
        start..start + self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1]
    }

    /// Named parameter blocks (`layer{l}.weight`, `layer{l}.bias`) and their flat ranges.
    pub fn param_blocks(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::with_capacity(2 * self.n_layers());
        for l in 0..self.n_layers() {
            let start = self.layer_offset(l);
            let w = self.sizes[l] * self.sizes[l + 1];
            out.push((format!("layer{l}.weight"), start..start + w));
            out.push((format!("layer{l}.bias"), start + w..start + w + self.sizes[l + 1]));
        }
        out
    }

    /// Per-layer `(weight [out, in], bias [out])`.
    pub fn layers(&self) -> Vec<(Tensor, Tensor)> {
        (0..self.n_layers())
            .map(|l| {
                let (i, o) = (self.sizes[l], self.sizes[l + 1]);
                let start = self.layer_offset(l);
                let w = Tensor::new(vec![o, i], self.params[start..start + o * i].to_vec()).expect("shape");
                let b = Tensor::vector(self.params[start + o * i..start + o * i + o].to_vec());
                (w, b)
            })
            .collect()
    }

    pub fn from_layers(layers: &[(Tensor, Tensor)], activations: &[Activation]) -> Result<Self> {
        let mut sizes = Vec::with_capacity(layers.len() + 1);
        for (l, (w, b)) in layers.iter().enumerate() {
            if w.shape().len() != 2 {
                return Err(Error::InvalidModel(format!("layer {l} weight must be 2-D")));
            }
            let (o, i) = (w.shape()[0], w.shape()[1]);
            if l == 0 {
                sizes.push(i);
            } else if sizes[l] != i {
                return Err(Error::Dimension {
                    axis: "layer input",
                    expected: sizes[l],
                    actual: i,
                });
            }
            if b.len() != o {
                return Err(Error::Dimension {
                    axis: "layer bias",
                    expected: o,
                    actual: b.len(),
                });
            }
            sizes.push(o);
        }
        let mut net = Self::zeros(&sizes, activations)?;
        let flat: Vec<f64> = layers
            .iter()
            .flat_map(|(w, b)| w.data().iter().chain(b.data()).copied())
            .collect();
        net.set_params(&flat)?;
        Ok(net)
    }

    pub fn to_fragment(&self) -> NetFragment {
        let layers = self.layers();
        NetFragment {
            layer_sizes: self.sizes.clone(),
            activations: self.activations.clone(),
            weights: layers.iter().map(|(w, _)| w.data().to_vec()).collect(),
            biases: layers.iter().map(|(_, b)| b.data().to_vec()).collect(),
        }
    }

    pub fn from_fragment(f: &NetFragment) -> Result<Self> {
        let n = f.layer_sizes.len().saturating_sub(1);
        if f.weights.len() != n || f.biases.len() != n {
            return Err(Error::InvalidModel("fragment layer count mismatch".into()));
        }
        let layers = (0..n)
            .map(|l| {
                let (i, o) = (f.layer_sizes[l], f.layer_sizes[l + 1]);
                Ok((
                    Tensor::new(vec![o, i], f.weights[l].clone())?,
                    Tensor::vector(f.biases[l].clone()),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(&layers, &f.activations)
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        if x.cols() != self.input_size() || x.shape().is_empty() {
            return Err(Error::Dimension {
                axis: "network input",
                expected: self.input_size(),
                actual: x.cols(),
            });
        }
        Ok(x.rows())
    }

    fn output_shape(&self, x: &Tensor) -> Vec<usize> {
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-empty") = self.output_size();
        shape
    }

    fn layer_forward(&self, l: usize, input: &[f64], batch: usize) -> Vec<f64> {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.layer_offset(l);
        let w = &self.params[start..start + o * i];
        let b = &self.params[start + o * i..start + o * i + o];
        let mut z = Vec::with_capacity(batch * o);
        for _ in 0..batch {
            z.extend_from_slice(b);
        }
        // z[B, o] += x[B, i] * w^T
        unsafe {
            matrixmultiply::dgemm(
                batch,
                i,
                o,
                1.0,
                input.as_ptr(),
                i as isize,
                1,
                w.as_ptr(),
                1,
                i as isize,
                1.0,
                z.as_mut_ptr(),
                o as isize,
                1,
            );
        }
        self.activations[l].apply(&mut z);
        z
    }

    /// Output only, no tape.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        let mut a = x.data().to_vec();
        for l in 0..self.n_layers() {
            a = self.layer_forward(l, &a, batch);
        }
        Tensor::new(self.output_shape(x), a)
    }

    /// Single-row convenience.
    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in 0..self.n_layers() {
            a = self.layer_forward(l, &a, 1);
        }
        a
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tape)> {
        let batch = self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.n_layers() + 1);
        activations.push(x.data().to_vec());
        for l in 0..self.n_layers() {
            let next = self.layer_forward(l, activations.last().expect("non-empty"), batch);
            activations.push(next);
        }
        let y = Tensor::new(self.output_shape(x), activations.last().expect("non-empty").clone())?;
        let tape = Tape {
            net_id: self.id,
            generation: self.generation,
            batch,
            activations,
            output_shape: y.shape().to_vec(),
        };
        Ok((y, tape))
    }

    /// Gradients of `<upstream, y>` with respect to the parameters and the input.
    pub fn backward(&self, tape: &Tape, upstream: &Tensor) -> Result<Gradients> {
        if tape.net_id != self.id || tape.generation != self.generation {
            return Err(Error::StaleTape);
        }
        if upstream.shape() != tape.output_shape.as_slice() {
            return Err(Error::Dimension {
                axis: "upstream gradient",
                expected: tape.output_shape.iter().product(),
                actual: upstream.len(),
            });
        }
        let batch = tape.batch;
        let mut grad_params = vec![0.0; self.params.len()];
        let mut g = upstream.data().to_vec();
        for l in (0..self.n_layers()).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            self.activations[l].backprop(&tape.activations[l + 1], &mut g);
            let x = &tape.activations[l];
            let start = self.layer_offset(l);
            let (gw, rest) = grad_params[start..].split_at_mut(o * i);
            let gb = &mut rest[..o];
            // gw[o, i] = g^T[o, B] * x[B, i]
            unsafe {
                matrixmultiply::dgemm(
                    o,
                    batch,
                    i,
                    1.0,
                    g.as_ptr(),
                    1,
                    o as isize,
                    x.as_ptr(),
                    i as isize,
                    1,
                    0.0,
                    gw.as_mut_ptr(),
                    i as isize,
                    1,
                );
            }
            for row in g.chunks_exact(o) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            // gx[B, i] = g[B, o] * w[o, i]
            let w = &self.params[start..start + o * i];
            let mut gx = vec![0.0; batch * i];
            unsafe {
                matrixmultiply::dgemm(
                    batch,
                    o,
                    i,
                    1.0,
                    g.as_ptr(),
                    o as isize,
                    1,
                    w.as_ptr(),
                    i as isize,
                    1,
                    0.0,
                    gx.as_mut_ptr(),
                    i as isize,
                    1,
                );
            }
            g = gx;
        }
        let mut in_shape = tape.output_shape.clone();
        *in_shape.last_mut().expect("non-empty") = self.input_size();
        Ok(Gradients {
            params: Tensor::vector(grad_params),
            input: Tensor::new(in_shape, g)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input() {
        let w = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let b = Tensor::vector(vec![0.0; 3]);
        let net = DenseNet::from_layers(&[(w, b)], &[Activation::Identity]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.5], vec![0.25, 0.0, -1.0]]).unwrap();
        let (y, _) = net.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_tanh_is_tanh_bias() {
        let w = Tensor::zeros(vec![2, 3]);
        let b = Tensor::vector(vec![0.3, -1.2]);
        let net = DenseNet::from_layers(&[(w, b)], &[Activation::Tanh]).unwrap();
        let x = Tensor::from_rows(&[vec![5.0, 6.0, 7.0], vec![-1.0, 0.0, 1.0]]).unwrap();
        let y = net.predict(&x).unwrap();
        for r in 0..2 {
            assert_eq!(y.row(r), &[0.3f64.tanh(), (-1.2f64).tanh()]);
        }
    }

    #[test]
    fn linear_input_gradient_is_transpose_product() {
        let w = Tensor::new(vec![2, 3], vec![1., 2., 3., -4., 5., -6.]).unwrap();
        let net = DenseNet::from_layers(&[(w, Tensor::vector(vec![0.5, 0.5]))], &[Activation::Identity]).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let (_, tape) = net.forward(&x).unwrap();
        let up = Tensor::from_rows(&[vec![2.0, -1.0]]).unwrap();
        let g = net.backward(&tape, &up).unwrap();
        // W^T u = [2 + 4, 4 - 5, 6 + 6]
        assert_eq!(g.input.data(), &[6.0, -1.0, 12.0]);
    }

    #[test]
    fn constant_head_has_zero_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = DenseNet::mlp(3, &[8], 1, Activation::Tanh, &mut rng).unwrap();
        // zero the head weights: the output is its bias regardless of input
        let blocks = net.param_blocks();
        let head = blocks[2].1.clone();
        net.params_mut()[head].iter_mut().for_each(|p| *p = 0.0);
        let x = Tensor::from_rows(&[vec![0.3, -0.1, 0.9]]).unwrap();
        let (_, tape) = net.forward(&x).unwrap();
        let g = net.backward(&tape, &Tensor::from_rows(&[vec![1.0]]).unwrap()).unwrap();
        assert!(g.input.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_tape_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = DenseNet::mlp(2, &[4], 1, Activation::Relu, &mut rng).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 0.2]]).unwrap();
        let (_, tape) = net.forward(&x).unwrap();
        let up = Tensor::from_rows(&[vec![1.0]]).unwrap();
        assert!(net.backward(&tape, &up).is_ok());
        let other = net.clone();
        assert!(matches!(other.backward(&tape, &up), Err(Error::StaleTape)));
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&tape, &up), Err(Error::StaleTape)));
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::mlp(2, &[4], 1, Activation::Relu, &mut rng).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        assert!(matches!(net.forward(&x), Err(Error::Dimension { .. })));
        let x = Tensor::from_rows(&[vec![0.1, 0.2]]).unwrap();
        let (_, tape) = net.forward(&x).unwrap();
        let bad = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(net.backward(&tape, &bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn fragment_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::mlp(3, &[5, 4], 2, Activation::Tanh, &mut rng).unwrap();
        let text = serde_json::to_string(&net.to_fragment()).unwrap();
        let back = DenseNet::from_fragment(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(net.params(), back.params());
        let relayered = DenseNet::from_layers(&net.layers(), net.activations()).unwrap();
        assert_eq!(relayered, net);
    }

    #[test]
    fn soft_update_interpolates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = DenseNet::mlp(2, &[3], 1, Activation::Relu, &mut rng).unwrap();
        let mut dst = DenseNet::mlp(2, &[3], 1, Activation::Relu, &mut rng).unwrap();
        let before = dst.params().to_vec();
        dst.soft_update_from(&src, 0.25);
        for ((d, b), s) in dst.params().iter().zip(&before).zip(src.params()) {
            assert!((d - (0.25 * s + 0.75 * b)).abs() < 1e-15);
        }
    }
}
