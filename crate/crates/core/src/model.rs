//! The reference text classifier: mean-pooled token embeddings, one smooth
//! hidden layer and a linear head.
//!
//! ```text
//! u      = mean_i E[t_i]                 (d)
//! z      = W_hᵀ u + b_h                   (h)
//! a      = σ(z)                           (h)
//! logits = W_oᵀ a + b_o                   (C)
//! ```
//!
//! Weight matrices are stored row-major with the input dimension as rows,
//! so `W_h[j, k]` lives at `j * h + k`.
//!
//! The forward pass is generic over [`DualNum`] so that dual and hyper-dual
//! numbers can push tangents through it. Training uses the hand-written
//! reverse passes below; both the cross-entropy gradient and the
//! second-order gradient of input×gradient attributions are checked against
//! finite differences and against the dual-number forward in the tests.

use num_dual::{DualNum, HyperDual64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Tanh,
    /// Linear hidden layer. Only useful for tests and hand-checked examples.
    Identity,
}

impl Nonlinearity {
    fn apply<D: DualNum<Primitive = f64> + Copy>(self, z: D) -> D {
        match self {
            Nonlinearity::Tanh => z.tanh(),
            Nonlinearity::Identity => z,
        }
    }

    /// (σ(z), σ'(z), σ''(z))
    fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Nonlinearity::Tanh => {
                let a = z.tanh();
                let d1 = 1.0 - a * a;
                (a, d1, -2.0 * a * d1)
            }
            Nonlinearity::Identity => (z, 1.0, 0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Nonlinearity::Tanh),
            "identity" => Some(Nonlinearity::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub nonlinearity: Nonlinearity,
    /// Standard deviation of the initial embedding entries.
    pub embedding_init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 32,
            hidden_dim: 32,
            nonlinearity: Nonlinearity::Tanh,
            embedding_init_std: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Embeddings,
    HiddenWeights,
    HiddenBias,
    OutputWeights,
    OutputBias,
}

impl ParamGroup {
    /// Fixed serialization order.
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Embeddings,
        ParamGroup::HiddenWeights,
        ParamGroup::HiddenBias,
        ParamGroup::OutputWeights,
        ParamGroup::OutputBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Embeddings => "embeddings",
            ParamGroup::HiddenWeights => "hidden_weights",
            ParamGroup::HiddenBias => "hidden_bias",
            ParamGroup::OutputWeights => "output_weights",
            ParamGroup::OutputBias => "output_bias",
        }
    }
}

/// All trainable tensors, also used as the gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T = f64> {
    pub embeddings: Vec<T>,
    pub hidden_weights: Vec<T>,
    pub hidden_bias: Vec<T>,
    pub output_weights: Vec<T>,
    pub output_bias: Vec<T>,
}

impl<T> Params<T> {
    pub fn group(&self, group: ParamGroup) -> &[T] {
        match group {
            ParamGroup::Embeddings => &self.embeddings,
            ParamGroup::HiddenWeights => &self.hidden_weights,
            ParamGroup::HiddenBias => &self.hidden_bias,
            ParamGroup::OutputWeights => &self.output_weights,
            ParamGroup::OutputBias => &self.output_bias,
        }
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut Vec<T> {
        match group {
            ParamGroup::Embeddings => &mut self.embeddings,
            ParamGroup::HiddenWeights => &mut self.hidden_weights,
            ParamGroup::HiddenBias => &mut self.hidden_bias,
            ParamGroup::OutputWeights => &mut self.output_weights,
            ParamGroup::OutputBias => &mut self.output_bias,
        }
    }

    pub fn len(&self) -> usize {
        ParamGroup::ALL.iter().map(|&g| self.group(g).len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        ParamGroup::ALL.into_iter().flat_map(move |g| self.group(g).iter())
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Params<U> {
        Params {
            embeddings: self.embeddings.iter().map(&mut f).collect(),
            hidden_weights: self.hidden_weights.iter().map(&mut f).collect(),
            hidden_bias: self.hidden_bias.iter().map(&mut f).collect(),
            output_weights: self.output_weights.iter().map(&mut f).collect(),
            output_bias: self.output_bias.iter().map(&mut f).collect(),
        }
    }
}

impl Params<f64> {
    pub fn zeros_like(other: &Params<f64>) -> Self {
        other.map(|_| 0.0)
    }

    pub fn fill_zero(&mut self) {
        for g in ParamGroup::ALL {
            self.group_mut(g).iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// `self -= step * grad`
    pub fn descend(&mut self, grad: &Params<f64>, step: f64) {
        for g in ParamGroup::ALL {
            for (p, d) in self.group_mut(g).iter_mut().zip(grad.group(g)) {
                *p -= step * d;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    /// Pairs each value with a tangent, producing hyper-dual parameters
    /// whose two infinitesimal parts both follow `direction`.
    pub fn lift_hyperdual(&self, direction: &Params<f64>) -> Params<HyperDual64> {
        let mut out = self.map(|&x| HyperDual64::new(x, 0.0, 0.0, 0.0));
        for g in ParamGroup::ALL {
            for (p, &v) in out.group_mut(g).iter_mut().zip(direction.group(g)) {
                p.eps1 = v;
                p.eps2 = v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub logits: Vec<f64>,
    pub predicted: usize,
    pub correct: bool,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Intermediate values of one forward pass, kept for the reverse passes.
#[derive(Debug, Clone)]
pub struct Trace {
    pub pooled: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub activation: Vec<f64>,
    pub d_activation: Vec<f64>,
    pub dd_activation: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextClassifier {
    vocab_size: usize,
    embedding_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    nonlinearity: Nonlinearity,
    params: Params,
}

impl TextClassifier {
    /// Random initialization: embeddings ~ N(0, embedding_init_std²), weights
    /// ~ N(0, 1/fan_in), zero biases.
    pub fn new(vocab_size: usize, num_classes: usize, config: &ModelConfig) -> Result<Self> {
        let mut model = Self::zeros(vocab_size, num_classes, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, h) = (config.embedding_dim, config.hidden_dim);
        let emb = Normal::new(0.0, config.embedding_init_std)
            .map_err(|e| Error::Argument(format!("embedding_init_std: {e}")))?;
        let w_h = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
        let w_o = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("positive std");
        for x in model.params.embeddings.iter_mut() {
            *x = emb.sample(&mut rng);
        }
        for x in model.params.hidden_weights.iter_mut() {
            *x = w_h.sample(&mut rng);
        }
        for x in model.params.output_weights.iter_mut() {
            *x = w_o.sample(&mut rng);
        }
        Ok(model)
    }

    pub fn zeros(vocab_size: usize, num_classes: usize, config: &ModelConfig) -> Result<Self> {
        let (d, h) = (config.embedding_dim, config.hidden_dim);
        if vocab_size == 0 || num_classes == 0 || d == 0 || h == 0 {
            return Err(Error::Argument(format!(
                "model dimensions must be positive (|V|={vocab_size}, C={num_classes}, d={d}, h={h})"
            )));
        }
        Ok(Self {
            vocab_size,
            embedding_dim: d,
            hidden_dim: h,
            num_classes,
            nonlinearity: config.nonlinearity,
            params: Params {
                embeddings: vec![0.0; vocab_size * d],
                hidden_weights: vec![0.0; d * h],
                hidden_bias: vec![0.0; h],
                output_weights: vec![0.0; h * num_classes],
                output_bias: vec![0.0; num_classes],
            },
        })
    }

    /// Assembles a model from raw tensors, checking every shape.
    pub fn from_params(
        vocab_size: usize,
        embedding_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        nonlinearity: Nonlinearity,
        params: Params,
    ) -> Result<Self> {
        let expected = [
            vocab_size * embedding_dim,
            embedding_dim * hidden_dim,
            hidden_dim,
            hidden_dim * num_classes,
            num_classes,
        ];
        for (group, want) in ParamGroup::ALL.into_iter().zip(expected) {
            let got = params.group(group).len();
            if got != want {
                return Err(Error::Validation(format!(
                    "{}: expected {want} values, got {got}",
                    group.name()
                )));
            }
        }
        if !params.all_finite() {
            return Err(Error::Validation("parameters must be finite".into()));
        }
        Ok(Self {
            vocab_size,
            embedding_dim,
            hidden_dim,
            num_classes,
            nonlinearity,
            params,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn embedding(&self, token_id: usize) -> &[f64] {
        let d = self.embedding_dim;
        &self.params.embeddings[token_id * d..(token_id + 1) * d]
    }

    pub fn check_tokens(&self, token_ids: &[usize]) -> Result<()> {
        if token_ids.is_empty() {
            return Err(Error::Argument("cannot classify an empty token sequence".into()));
        }
        match token_ids.iter().find(|&&t| t >= self.vocab_size) {
            Some(&token_id) => Err(Error::TokenOutOfRange {
                token_id,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    pub fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes {
            return Err(Error::Argument(format!(
                "class {class} outside [0, {})",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Mean of the token embeddings. Rows are summed in sorted id order so
    /// the result does not depend on token order, bit for bit.
    pub fn pooled(&self, token_ids: &[usize]) -> Vec<f64> {
        let mut sorted = token_ids.to_vec();
        sorted.sort_unstable();
        let rows: Vec<&[f64]> = sorted.iter().map(|&t| self.embedding(t)).collect();
        mean_rows(&rows, self.embedding_dim)
    }

    pub fn logits(&self, token_ids: &[usize]) -> Result<Vec<f64>> {
        self.check_tokens(token_ids)?;
        Ok(self.trace_pooled(self.pooled(token_ids)).logits)
    }

    pub fn forward(&self, example: &Example) -> Result<Prediction> {
        let logits = self.logits(&example.token_ids)?;
        let predicted = argmax(&logits);
        Ok(Prediction {
            example_id: example.id.clone(),
            logits,
            predicted,
            correct: predicted == example.label,
        })
    }

    /// Logits for explicit per-position input vectors (each of length d).
    /// Used to differentiate with respect to the inputs themselves.
    pub fn logits_from_inputs(&self, inputs: &[Vec<f64>]) -> Vec<f64> {
        let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        self.trace_pooled(mean_rows(&rows, self.embedding_dim)).logits
    }

    /// Full forward trace starting from a pooled input vector.
    pub fn trace_pooled(&self, pooled: Vec<f64>) -> Trace {
        let (d, h, c) = (self.embedding_dim, self.hidden_dim, self.num_classes);
        let p = &self.params;
        let mut pre_activation = p.hidden_bias.clone();
        for (j, &u) in pooled.iter().enumerate() {
            let row = &p.hidden_weights[j * h..(j + 1) * h];
            for (z, &w) in pre_activation.iter_mut().zip(row) {
                *z += w * u;
            }
        }
        let mut activation = vec![0.0; h];
        let mut d_activation = vec![0.0; h];
        let mut dd_activation = vec![0.0; h];
        for k in 0..h {
            let (a, d1, d2) = self.nonlinearity.eval(pre_activation[k]);
            activation[k] = a;
            d_activation[k] = d1;
            dd_activation[k] = d2;
        }
        let mut logits = p.output_bias.clone();
        for (k, &a) in activation.iter().enumerate() {
            let row = &p.output_weights[k * c..(k + 1) * c];
            for (y, &w) in logits.iter_mut().zip(row) {
                *y += w * a;
            }
        }
        debug_assert_eq!(pooled.len(), d);
        Trace {
            pooled,
            pre_activation,
            activation,
            d_activation,
            dd_activation,
            logits,
        }
    }

    pub fn trace(&self, token_ids: &[usize]) -> Result<Trace> {
        self.check_tokens(token_ids)?;
        Ok(self.trace_pooled(self.pooled(token_ids)))
    }

    /// ∂logit_c/∂e_i. Under mean pooling this vector is shared by every
    /// position: (1/n) W_h (σ'(z) ⊙ W_o[:, c]).
    pub fn input_gradient(&self, trace: &Trace, n: usize, class: usize) -> Vec<f64> {
        let (h, c) = (self.hidden_dim, self.num_classes);
        let p = &self.params;
        let r: Vec<f64> = (0..h)
            .map(|k| trace.d_activation[k] * p.output_weights[k * c + class])
            .collect();
        let inv_n = 1.0 / n as f64;
        (0..self.embedding_dim)
            .map(|j| {
                let row = &p.hidden_weights[j * h..(j + 1) * h];
                row.iter().zip(&r).map(|(w, r)| w * r).sum::<f64>() * inv_n
            })
            .collect()
    }

    /// Accumulates `scale * ∂CE/∂θ` into `grads` and returns the
    /// cross-entropy of `label` under the current parameters.
    #[allow(clippy::needless_range_loop)]
    pub fn accumulate_ce_gradient(
        &self,
        token_ids: &[usize],
        label: usize,
        grads: &mut Params,
        scale: f64,
    ) -> Result<f64> {
        let trace = self.trace(token_ids)?;
        let (d, h, c) = (self.embedding_dim, self.hidden_dim, self.num_classes);
        let p = &self.params;

        let probs = softmax(&trace.logits);
        let loss = -log_softmax_at(&trace.logits, label);

        let mut dy = probs;
        dy[label] -= 1.0;
        for v in dy.iter_mut() {
            *v *= scale;
        }

        for (gb, &g) in grads.output_bias.iter_mut().zip(&dy) {
            *gb += g;
        }
        let mut dz = vec![0.0; h];
        for k in 0..h {
            let a = trace.activation[k];
            let row = &p.output_weights[k * c..(k + 1) * c];
            let grow = &mut grads.output_weights[k * c..(k + 1) * c];
            let mut da = 0.0;
            for cls in 0..c {
                grow[cls] += a * dy[cls];
                da += row[cls] * dy[cls];
            }
            dz[k] = da * trace.d_activation[k];
        }
        self.backprop_pre_activation(token_ids, &trace, &dz, grads, d, h);
        Ok(loss)
    }

    /// Given dL/dz (already scaled), accumulates the gradients of the hidden
    /// layer and the embeddings reached through the pooled input.
    #[allow(clippy::needless_range_loop)]
    fn backprop_pre_activation(
        &self,
        token_ids: &[usize],
        trace: &Trace,
        dz: &[f64],
        grads: &mut Params,
        d: usize,
        h: usize,
    ) {
        let p = &self.params;
        for (gb, &g) in grads.hidden_bias.iter_mut().zip(dz) {
            *gb += g;
        }
        let inv_n = 1.0 / token_ids.len() as f64;
        let mut du = vec![0.0; d];
        for j in 0..d {
            let u = trace.pooled[j];
            let row = &p.hidden_weights[j * h..(j + 1) * h];
            let grow = &mut grads.hidden_weights[j * h..(j + 1) * h];
            let mut acc = 0.0;
            for k in 0..h {
                grow[k] += u * dz[k];
                acc += row[k] * dz[k];
            }
            du[j] = acc * inv_n;
        }
        for &t in token_ids {
            let grow = &mut grads.embeddings[t * d..(t + 1) * d];
            for (g, &v) in grow.iter_mut().zip(&du) {
                *g += v;
            }
        }
    }

    /// Second-order reverse pass through input×gradient attributions.
    ///
    /// With `s_i = e_i · g` and `g = ∂logit_c/∂e_i`, accumulates
    /// `scale * Σ_i ds_i ∂s_i/∂θ` into `grads`. `ds` holds the upstream
    /// derivative of some loss with respect to each position's score.
    #[allow(clippy::needless_range_loop)]
    pub fn accumulate_score_gradient(
        &self,
        token_ids: &[usize],
        trace: &Trace,
        class: usize,
        ds: &[f64],
        grads: &mut Params,
        scale: f64,
    ) {
        let (d, h, c) = (self.embedding_dim, self.hidden_dim, self.num_classes);
        let p = &self.params;
        let n = token_ids.len();
        let inv_n = 1.0 / n as f64;
        let g = self.input_gradient(trace, n, class);

        // s_i = e_i · g: direct embedding term and q = dL/dg.
        let mut q = vec![0.0; d];
        for (&t, &dsi) in token_ids.iter().zip(ds) {
            if dsi == 0.0 {
                continue;
            }
            let w = dsi * scale;
            let e = self.embedding(t);
            let grow = &mut grads.embeddings[t * d..(t + 1) * d];
            for j in 0..d {
                grow[j] += w * g[j];
                q[j] += w * e[j];
            }
        }

        // g = (1/n) W_h r with r = σ'(z) ⊙ W_o[:, c].
        let mut dr = vec![0.0; h];
        for j in 0..d {
            let qj = q[j] * inv_n;
            if qj == 0.0 {
                continue;
            }
            let row = &p.hidden_weights[j * h..(j + 1) * h];
            let grow = &mut grads.hidden_weights[j * h..(j + 1) * h];
            for k in 0..h {
                let r = trace.d_activation[k] * p.output_weights[k * c + class];
                grow[k] += qj * r;
                dr[k] += qj * row[k];
            }
        }

        // r_k = σ'(z_k) W_o[k, c]
        let mut dz = vec![0.0; h];
        for k in 0..h {
            grads.output_weights[k * c + class] += dr[k] * trace.d_activation[k];
            dz[k] = dr[k] * p.output_weights[k * c + class] * trace.dd_activation[k];
        }
        self.backprop_pre_activation(token_ids, trace, &dz, grads, d, h);
    }

    /// Forward pass over arbitrary dual-number parameters. Mirrors
    /// [`TextClassifier::logits`], including the sorted pooling order.
    pub fn logits_generic<D>(&self, params: &Params<D>, token_ids: &[usize]) -> Result<Vec<D>>
    where
        D: DualNum<Primitive = f64> + Copy,
    {
        self.check_tokens(token_ids)?;
        let (d, h, c) = (self.embedding_dim, self.hidden_dim, self.num_classes);
        let mut sorted = token_ids.to_vec();
        sorted.sort_unstable();
        let inv_n = 1.0 / sorted.len() as f64;
        let mut pooled = vec![D::zero(); d];
        for &t in &sorted {
            for (u, &e) in pooled.iter_mut().zip(&params.embeddings[t * d..(t + 1) * d]) {
                *u += e;
            }
        }
        for u in pooled.iter_mut() {
            *u *= inv_n;
        }
        let mut hidden = params.hidden_bias.clone();
        for (j, &u) in pooled.iter().enumerate() {
            for (z, &w) in hidden.iter_mut().zip(&params.hidden_weights[j * h..(j + 1) * h]) {
                *z += w * u;
            }
        }
        let hidden: Vec<D> = hidden.into_iter().map(|z| self.nonlinearity.apply(z)).collect();
        let mut logits = params.output_bias.clone();
        for (k, &a) in hidden.iter().enumerate() {
            for (y, &w) in logits.iter_mut().zip(&params.output_weights[k * c..(k + 1) * c]) {
                *y += w * a;
            }
        }
        Ok(logits)
    }

    /// `vᵀ ∇²f v` for `f = Σ_c logit_c` along `direction`, computed exactly
    /// with hyper-dual numbers.
    pub fn logit_sum_second_directional(
        &self,
        token_ids: &[usize],
        direction: &Params,
    ) -> Result<f64> {
        let lifted = self.params.lift_hyperdual(direction);
        let logits = self.logits_generic(&lifted, token_ids)?;
        Ok(logits.iter().map(|y| y.eps1eps2).sum())
    }
}

fn mean_rows(rows: &[&[f64]], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for row in rows {
        for (o, &v) in out.iter_mut().zip(row.iter()) {
            *o += v;
        }
    }
    let inv_n = 1.0 / rows.len() as f64;
    for o in out.iter_mut() {
        *o *= inv_n;
    }
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&y| (y - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax_at(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&y| (y - max).exp()).sum::<f64>().ln();
    logits[class] - lse
}
