//! Dense-layer toolkit with hand-written backward passes.
//!
//! Everything is plain `f64` slices; gradients are accumulated into the
//! layer's own buffers so a finite-difference checker can compare them
//! against loss perturbations without any framework in between.

use rand::Rng;

/// Leaky rectifier.
#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Derivative of the leaky rectifier at pre-activation `x`.
#[inline]
pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// Numerically stable sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max-subtraction. Returns a simplex vector.
pub fn softmax_stable(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&w| (w - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Mutable view of one named parameter tensor and its gradient buffer.
///
/// The optimizer and the gradient checker both walk models through these;
/// a model must yield its groups in a fixed order so optimizer state stays
/// aligned across steps.
pub struct ParamRef<'a> {
    pub name: String,
    pub data: &'a mut [f64],
    pub grad: &'a mut [f64],
}

/// Affine layer `y = W x + b`, `W` row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub gw: Vec<f64>,
    pub gb: Vec<f64>,
}

impl Linear {
    /// Seeded init: uniform in `[-1/sqrt(in_dim), 1/sqrt(in_dim)]` for both
    /// weights and biases.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let b = (0..out_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            in_dim,
            out_dim,
            w,
            b,
            gw: vec![0.0; in_dim * out_dim],
            gb: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
            gw: vec![0.0; in_dim * out_dim],
            gb: vec![0.0; out_dim],
        }
    }

    /// Build from explicit weights (row-major) and biases.
    pub fn from_parts(in_dim: usize, out_dim: usize, w: Vec<f64>, b: Vec<f64>) -> Self {
        assert_eq!(w.len(), in_dim * out_dim);
        assert_eq!(b.len(), out_dim);
        Self {
            in_dim,
            out_dim,
            w,
            b,
            gw: vec![0.0; in_dim * out_dim],
            gb: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|i| self.b[i] + dot(&self.w[i * self.in_dim..(i + 1) * self.in_dim], x))
            .collect()
    }

    /// Accumulate parameter gradients for input `x` and upstream `dy`;
    /// returns dL/dx.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(dy.len(), self.out_dim);
        let mut dx = vec![0.0; self.in_dim];
        for i in 0..self.out_dim {
            let row = &mut self.gw[i * self.in_dim..(i + 1) * self.in_dim];
            let g = dy[i];
            self.gb[i] += g;
            for (j, r) in row.iter_mut().enumerate() {
                *r += g * x[j];
                dx[j] += g * self.w[i * self.in_dim + j];
            }
        }
        dx
    }

    pub fn zero_grad(&mut self) {
        self.gw.iter_mut().for_each(|g| *g = 0.0);
        self.gb.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn param_refs<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: format!("{prefix}.w"),
            data: &mut self.w,
            grad: &mut self.gw,
        });
        out.push(ParamRef {
            name: format!("{prefix}.b"),
            data: &mut self.b,
            grad: &mut self.gb,
        });
    }

    /// Named tensors for checkpointing: (name, shape, data).
    pub fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>, Vec<f64>)>) {
        out.push((
            format!("{prefix}.w"),
            vec![self.out_dim, self.in_dim],
            self.w.clone(),
        ));
        out.push((format!("{prefix}.b"), vec![self.out_dim], self.b.clone()));
    }
}

/// Intermediate activations of one MLP forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (after the previous activation).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pub pre: Vec<Vec<f64>>,
}

/// Stack of affine layers with leaky-rectifier activations between them.
/// The final layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub slope: f64,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`; at least one layer.
    pub fn init<R: Rng>(dims: &[usize], slope: f64, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least [in, out] dims");
        let layers = dims
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Self { layers, slope }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut cur = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            let z = layer.forward(&cur);
            pre.push(z.clone());
            cur = if li + 1 == n {
                z
            } else {
                z.into_iter().map(|v| leaky_relu(v, self.slope)).collect()
            };
        }
        (cur, MlpCache { inputs, pre })
    }

    /// Accumulate parameter gradients; returns dL/dx.
    pub fn backward(&mut self, cache: &MlpCache, dy: &[f64]) -> Vec<f64> {
        let n = self.layers.len();
        let mut grad = dy.to_vec();
        for li in (0..n).rev() {
            if li + 1 != n {
                for (g, &z) in grad.iter_mut().zip(&cache.pre[li]) {
                    *g *= leaky_relu_grad(z, self.slope);
                }
            }
            grad = self.layers[li].backward(&cache.inputs[li], &grad);
        }
        grad
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Linear::zero_grad);
    }

    pub fn param_refs<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.param_refs(&format!("{prefix}.{i}"), out);
        }
    }

    pub fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>, Vec<f64>)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.named_tensors(&format!("{prefix}.{i}"), out);
        }
    }
}
