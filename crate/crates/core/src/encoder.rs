//! Trainable fused-representation encoder and classification head.
//!
//! The encoder maps concatenated `[image ‖ text]` feature vectors to a
//! single representation. It has two entry layers over a shared trunk:
//! one for a bare item and one for a demonstration-plus-item pair (the
//! demonstration occupies the leading slot), so both paths train the same
//! downstream weights. All backward passes are hand-written.

use rand::Rng;

use crate::corpus::NewsItem;
use crate::error::ModelError;
use crate::nn::{dot, leaky_relu, leaky_relu_grad, sigmoid, Linear, ParamRef};

/// Default clamp keeping classifier outputs strictly inside (0, 1).
pub const DEFAULT_PROB_EPS: f64 = 1e-7;

/// MLP over fused features with one shared trunk and two entry points.
///
/// The bare path feeds `entry_item` alone; the demonstration path adds a
/// demo-slot contribution to the same first-layer pre-activation:
/// `leaky(entry_item(item) + entry_demo(demo))`. The item-block weights
/// are therefore shared by both paths (the demo entry is the leading
/// block of an input twice as wide), and everything downstream of the
/// first layer is common.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub entry_item: Linear,
    pub entry_demo: Linear,
    pub trunk: Vec<Linear>,
    pub out: Linear,
    pub slope: f64,
}

/// Per-pass activations retained for the backward sweep.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    item_input: Vec<f64>,
    demo_input: Option<Vec<f64>>,
    /// Pre-activation output of entry and each trunk layer.
    pre: Vec<Vec<f64>>,
    /// Post-activation inputs to trunk layers and to `out`.
    acts: Vec<Vec<f64>>,
}

impl Encoder {
    /// `feature_dim` is d_v + d_t of a single item.
    pub fn init<R: Rng>(
        feature_dim: usize,
        width: usize,
        hidden_layers: usize,
        out_dim: usize,
        slope: f64,
        rng: &mut R,
    ) -> Self {
        assert!(hidden_layers >= 1, "need at least one hidden layer");
        let entry_item = Linear::init(feature_dim, width, rng);
        // The demo block starts at zero: the pair path initially equals
        // the bare path, and the demonstration contribution grows only
        // where gradients ask for it.
        let entry_demo = Linear::zeros(feature_dim, width);
        let trunk = (1..hidden_layers)
            .map(|_| Linear::init(width, width, rng))
            .collect();
        let out = Linear::init(width, out_dim, rng);
        Self {
            entry_item,
            entry_demo,
            trunk,
            out,
            slope,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out.out_dim
    }

    pub fn solo_in_dim(&self) -> usize {
        self.entry_item.in_dim
    }

    /// The demo path reads `[demo ‖ item]`, twice the item width.
    pub fn demo_in_dim(&self) -> usize {
        self.entry_item.in_dim + self.entry_demo.in_dim
    }

    /// `[image ‖ text]` feature vector of one item.
    pub fn fused_features(item: &NewsItem) -> Vec<f64> {
        let mut v = Vec::with_capacity(item.image_features.len() + item.text_features.len());
        v.extend_from_slice(&item.image_features);
        v.extend_from_slice(&item.text_features);
        v
    }

    /// Demonstration-first ordered concatenation for the demo path.
    pub fn demo_features(demo: &NewsItem, item: &NewsItem) -> Vec<f64> {
        let mut v = Self::fused_features(demo);
        v.extend(Self::fused_features(item));
        v
    }

    fn check_finite(v: &[f64], layer: usize) -> Result<(), ModelError> {
        if v.iter().any(|x| !x.is_finite()) {
            Err(ModelError::NonFinite {
                context: "encoder",
                layer,
            })
        } else {
            Ok(())
        }
    }

    fn run(
        &self,
        item_features: &[f64],
        demo_features: Option<&[f64]>,
    ) -> Result<(Vec<f64>, EncoderCache), ModelError> {
        if item_features.len() != self.entry_item.in_dim {
            return Err(ModelError::DimensionMismatch {
                context: "encoder input",
                expected: self.entry_item.in_dim,
                found: item_features.len(),
            });
        }
        if let Some(demo) = demo_features {
            if demo.len() != self.entry_demo.in_dim {
                return Err(ModelError::DimensionMismatch {
                    context: "encoder demo input",
                    expected: self.entry_demo.in_dim,
                    found: demo.len(),
                });
            }
        }

        let mut pre = Vec::with_capacity(self.trunk.len() + 1);
        let mut acts = Vec::with_capacity(self.trunk.len() + 1);

        let mut z0 = self.entry_item.forward(item_features);
        if let Some(demo) = demo_features {
            for (z, d) in z0.iter_mut().zip(self.entry_demo.forward(demo)) {
                *z += d;
            }
        }
        Self::check_finite(&z0, 0)?;
        let mut cur: Vec<f64> = z0.iter().map(|&v| leaky_relu(v, self.slope)).collect();
        pre.push(z0);
        for (li, layer) in self.trunk.iter().enumerate() {
            acts.push(cur.clone());
            let z = layer.forward(&cur);
            Self::check_finite(&z, li + 1)?;
            cur = z.iter().map(|&v| leaky_relu(v, self.slope)).collect();
            pre.push(z);
        }
        acts.push(cur.clone());
        let h = self.out.forward(&cur);
        Self::check_finite(&h, self.trunk.len() + 1)?;
        Ok((
            h,
            EncoderCache {
                item_input: item_features.to_vec(),
                demo_input: demo_features.map(<[f64]>::to_vec),
                pre,
                acts,
            },
        ))
    }

    /// Representation of a bare item.
    pub fn encode(&self, item: &NewsItem) -> Result<Vec<f64>, ModelError> {
        self.encode_features(&Self::fused_features(item))
    }

    pub fn encode_features(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.run(features, None).map(|(h, _)| h)
    }

    pub fn encode_cached(&self, features: &[f64]) -> Result<(Vec<f64>, EncoderCache), ModelError> {
        self.run(features, None)
    }

    /// Representation of a demonstration-plus-item pair.
    pub fn encode_with_demo(
        &self,
        item: &NewsItem,
        demo: &NewsItem,
    ) -> Result<Vec<f64>, ModelError> {
        self.encode_demo_features(&Self::demo_features(demo, item))
    }

    /// Demo path over stacked `[demo ‖ item]` features.
    pub fn encode_demo_features(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.encode_demo_cached(features).map(|(h, _)| h)
    }

    pub fn encode_demo_cached(
        &self,
        features: &[f64],
    ) -> Result<(Vec<f64>, EncoderCache), ModelError> {
        if features.len() != self.demo_in_dim() {
            return Err(ModelError::DimensionMismatch {
                context: "encoder demo input",
                expected: self.demo_in_dim(),
                found: features.len(),
            });
        }
        let (demo, item) = features.split_at(self.entry_demo.in_dim);
        self.run(item, Some(demo))
    }

    /// Accumulate parameter gradients for one cached pass; returns
    /// dL/d(item features).
    pub fn backward(&mut self, cache: &EncoderCache, dh: &[f64]) -> Vec<f64> {
        let last = self.trunk.len();
        let mut grad = self.out.backward(&cache.acts[last], dh);
        for li in (0..self.trunk.len()).rev() {
            for (g, &z) in grad.iter_mut().zip(&cache.pre[li + 1]) {
                *g *= leaky_relu_grad(z, self.slope);
            }
            grad = self.trunk[li].backward(&cache.acts[li], &grad);
        }
        for (g, &z) in grad.iter_mut().zip(&cache.pre[0]) {
            *g *= leaky_relu_grad(z, self.slope);
        }
        if let Some(demo) = &cache.demo_input {
            self.entry_demo.backward(demo, &grad);
        }
        self.entry_item.backward(&cache.item_input, &grad)
    }

    pub fn zero_grad(&mut self) {
        self.entry_item.zero_grad();
        self.entry_demo.zero_grad();
        self.trunk.iter_mut().for_each(Linear::zero_grad);
        self.out.zero_grad();
    }

    pub fn param_refs<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.entry_item
            .param_refs(&format!("{prefix}.entry_item"), out);
        self.entry_demo
            .param_refs(&format!("{prefix}.entry_demo"), out);
        for (i, layer) in self.trunk.iter_mut().enumerate() {
            layer.param_refs(&format!("{prefix}.trunk.{i}"), out);
        }
        self.out.param_refs(&format!("{prefix}.out"), out);
    }

    pub fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>, Vec<f64>)>) {
        self.entry_item
            .named_tensors(&format!("{prefix}.entry_item"), out);
        self.entry_demo
            .named_tensors(&format!("{prefix}.entry_demo"), out);
        for (i, layer) in self.trunk.iter().enumerate() {
            layer.named_tensors(&format!("{prefix}.trunk.{i}"), out);
        }
        self.out.named_tensors(&format!("{prefix}.out"), out);
    }
}

/// Linear probe with a clamped sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w: Vec<f64>,
    pub b: f64,
    pub gw: Vec<f64>,
    pub gb: f64,
}

/// Forward record for the head: probability plus clamp state.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub prob: f64,
    pub logit: f64,
    /// True when the sigmoid output fell outside `[eps, 1-eps]` and the
    /// probability was clamped; the logit gradient is zero there.
    pub clamped: bool,
}

impl ClassifierHead {
    pub fn init<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        Self {
            w: (0..dim).map(|_| rng.gen_range(-bound..=bound)).collect(),
            b: rng.gen_range(-bound..=bound),
            gw: vec![0.0; dim],
            gb: 0.0,
        }
    }

    pub fn from_parts(w: Vec<f64>, b: f64) -> Self {
        let gw = vec![0.0; w.len()];
        Self { w, b, gw, gb: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Probability that the input is fake, clamped to `[eps, 1-eps]`.
    pub fn classify(&self, h: &[f64], eps: f64) -> Result<HeadOutput, ModelError> {
        if h.len() != self.w.len() {
            return Err(ModelError::DimensionMismatch {
                context: "classifier head",
                expected: self.w.len(),
                found: h.len(),
            });
        }
        let logit = dot(&self.w, h) + self.b;
        let raw = sigmoid(logit);
        let prob = raw.clamp(eps, 1.0 - eps);
        Ok(HeadOutput {
            prob,
            logit,
            clamped: raw != prob,
        })
    }

    /// Accumulate gradients given dL/dlogit; returns dL/dh.
    pub fn backward(&mut self, h: &[f64], dlogit: f64) -> Vec<f64> {
        self.gb += dlogit;
        let mut dh = vec![0.0; h.len()];
        for i in 0..h.len() {
            self.gw[i] += dlogit * h[i];
            dh[i] = dlogit * self.w[i];
        }
        dh
    }

    pub fn zero_grad(&mut self) {
        self.gw.iter_mut().for_each(|g| *g = 0.0);
        self.gb = 0.0;
    }

    pub fn param_refs<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: format!("{prefix}.w"),
            data: &mut self.w,
            grad: &mut self.gw,
        });
        out.push(ParamRef {
            name: format!("{prefix}.b"),
            data: std::slice::from_mut(&mut self.b),
            grad: std::slice::from_mut(&mut self.gb),
        });
    }

    pub fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>, Vec<f64>)>) {
        out.push((format!("{prefix}.w"), vec![self.w.len()], self.w.clone()));
        out.push((format!("{prefix}.b"), vec![1], vec![self.b]));
    }
}
