use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{gemm, Tensor};
use crate::error::{shape_err, Result};

/// Anything owning a flat, ordered list of trainable tensors.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Polyak mixing: `self = tau * source + (1 - tau) * self`.
    fn soft_update_from(&mut self, source: &Self, tau: f64)
    where
        Self: Sized,
    {
        for (t, s) in self.tensors_mut().into_iter().zip(source.tensors()) {
            for (x, &y) in t.data_mut().iter_mut().zip(s.data()) {
                *x = tau * y + (1.0 - tau) * *x;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// Fully connected network, relu on hidden layers, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Output node plus the parameter leaves bound for this forward pass, in
/// [`Parameters::tensors`] order.
pub struct Bound {
    pub out: Var,
    pub params: Vec<Var>,
}

impl Bound {
    /// Gradients for the bound parameters; unreachable ones come back as
    /// zeros of the right shape.
    pub fn grads(&self, g: &Graph, grads: &super::graph::Gradients) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|&v| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
            })
            .collect()
    }
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`. Weights uniform in
    /// ±sqrt(6 / (fan_in + fan_out)), biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect();
                Dense {
                    weight: Tensor::new(vec![fan_in, fan_out], data).expect("sized"),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(shape_err("Mlp::from_layers", "no layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            let ws = l.weight.shape();
            if ws.len() != 2 || l.bias.shape() != [ws[1]] {
                return Err(shape_err(
                    "Mlp::from_layers",
                    format!("layer {i}: weight {:?} bias {:?}", ws, l.bias.shape()),
                ));
            }
            if i > 0 && layers[i - 1].weight.shape()[1] != ws[0] {
                return Err(shape_err(
                    "Mlp::from_layers",
                    format!("layer {} output does not feed layer {i}", i - 1),
                ));
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

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.shape()[1]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let ok = x.shape().len() == 2 && x.shape()[1] == self.input_dim();
        if !ok {
            return Err(shape_err(
                "mlp_forward",
                format!(
                    "input {:?} does not match first layer width {}",
                    x.shape(),
                    self.input_dim()
                ),
            ));
        }
        Ok(())
    }

    fn forward_with(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<Bound> {
        self.check_input(g.value(x))?;
        let mut h = x;
        let mut params = Vec::with_capacity(self.layers.len() * 2);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = if trainable {
                (g.param(layer.weight.clone()), g.param(layer.bias.clone()))
            } else {
                (g.constant(layer.weight.clone()), g.constant(layer.bias.clone()))
            };
            params.push(w);
            params.push(b);
            let z = g.matmul(h, w)?;
            let z = g.add_row(z, b)?;
            h = if i < last { g.relu(z) } else { z };
        }
        Ok(Bound { out: h, params })
    }

    /// Records the forward pass on `g` with parameters as differentiable
    /// leaves. `x` must be `[batch, input_dim]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Bound> {
        self.forward_with(g, x, true)
    }

    /// Forward pass whose parameters are constants: gradients still flow
    /// into `x` but never into this network.
    pub fn forward_frozen(&self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(self.forward_with(g, x, false)?.out)
    }

    /// Graph-free evaluation for acting and probing.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let batch = x.shape()[0];
        let mut h = x.data().to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (layer.weight.shape()[0], layer.weight.shape()[1]);
            let mut out = vec![0.0; batch * fan_out];
            for row in out.chunks_mut(fan_out) {
                row.copy_from_slice(layer.bias.data());
            }
            gemm(batch, fan_in, fan_out, &h, false, layer.weight.data(), false, &mut out, true);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        Tensor::new(vec![batch, self.output_dim()], h)
    }

    /// Sign of every hidden pre-activation, flattened. Two parameter
    /// settings with equal patterns lie on the same linear piece.
    pub fn activation_pattern(&self, x: &Tensor) -> Result<Vec<bool>> {
        self.check_input(x)?;
        let batch = x.shape()[0];
        let mut h = x.data().to_vec();
        let mut pattern = Vec::new();
        for layer in &self.layers[..self.layers.len() - 1] {
            let (fan_in, fan_out) = (layer.weight.shape()[0], layer.weight.shape()[1]);
            let mut out = vec![0.0; batch * fan_out];
            for row in out.chunks_mut(fan_out) {
                row.copy_from_slice(layer.bias.data());
            }
            gemm(batch, fan_in, fan_out, &h, false, layer.weight.data(), false, &mut out, true);
            pattern.extend(out.iter().map(|&v| v > 0.0));
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            h = out;
        }
        Ok(pattern)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::new(vec![1, x.len()], x.to_vec())?;
        Ok(self.predict(&t)?.into_data())
    }

    /// `(name, tensor)` pairs for checkpointing: `{prefix}.{i}.weight` etc.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), &l.weight));
            out.push((format!("{prefix}.{i}.bias"), &l.bias));
        }
        out
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![1, x.len()], x.to_vec()).unwrap());
        let b = mlp.forward(&mut g, xv).unwrap();
        g.value(b.out).data().to_vec()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp = Mlp::new(&[3, 5, 2], &mut rng);
        for t in mlp.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(run(&mlp, &[1.0, -4.0, 9.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let mlp = Mlp::from_layers(vec![Dense {
            weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(&[2]),
        }])
        .unwrap();
        assert_eq!(run(&mlp, &[1.0, 2.0]), vec![1.0, 2.0]);
        assert_eq!(mlp.predict_one(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn hand_unrolled_relu_net() {
        // hidden = relu(W1^T x + b1), out = W2^T hidden + b2
        let w1 = [0.5, -1.0, 2.0, 0.25]; // [in=2, out=2], row-major
        let b1 = [0.1, -0.2];
        let w2 = [1.5, -0.5]; // [2, 1]
        let b2 = [0.3];
        let mlp = Mlp::from_layers(vec![
            Dense {
                weight: Tensor::new(vec![2, 2], w1.to_vec()).unwrap(),
                bias: Tensor::vector(b1.to_vec()),
            },
            Dense {
                weight: Tensor::new(vec![2, 1], w2.to_vec()).unwrap(),
                bias: Tensor::vector(b2.to_vec()),
            },
        ])
        .unwrap();
        let (x0, x1) = (1.0, -1.0);
        let h0 = f64::max(0.0, x0 * w1[0] + x1 * w1[2] + b1[0]); // 0.5 - 2 + 0.1 < 0
        let h1 = f64::max(0.0, x0 * w1[1] + x1 * w1[3] + b1[1]); // -1 - 0.25 - 0.2 < 0
        let expected = h0 * w2[0] + h1 * w2[1] + b2[0];
        assert_eq!(run(&mlp, &[x0, x1]), vec![expected]);
        // and a point where both hidden units are active
        let (x0, x1) = (-1.0, 2.0);
        let h0 = f64::max(0.0, x0 * w1[0] + x1 * w1[2] + b1[0]);
        let h1 = f64::max(0.0, x0 * w1[1] + x1 * w1[3] + b1[1]);
        assert!(h0 > 0.0 && h1 > 0.0);
        let expected = h0 * w2[0] + h1 * w2[1] + b2[0];
        let got = run(&mlp, &[x0, x1])[0];
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn input_width_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::new(&[3, 4, 1], &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[5, 2]));
        let err = mlp.forward(&mut g, x).err().unwrap().to_string();
        assert!(err.contains("[5, 2]") && err.contains('3'), "{err}");
    }

    #[test]
    fn init_is_bounded_and_deterministic() {
        let a = Mlp::new(&[10, 20, 3], &mut ChaCha8Rng::seed_from_u64(9));
        let b = Mlp::new(&[10, 20, 3], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(a.layers()[0].weight.data().iter().all(|w| w.abs() <= bound));
        assert!(a.layers()[0].bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn predict_matches_graph_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[4, 7, 6, 2], &mut rng);
        let x = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = mlp.forward(&mut g, xv).unwrap().out;
        let p = mlp.predict(&x).unwrap();
        for (a, b) in g.value(out).data().iter().zip(p.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
