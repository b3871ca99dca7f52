//! Pre-norm transformer encoder with a classification head over position 0.
//!
//! Every layer and every head receives the same token bucket grid. The
//! dependency embedding table is shared across layers unless
//! `share_dependency_table` is off; each layer owns its own bias projection.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{self, AttentionCache, AttentionParams, Mechanism, PairBias};
use crate::conversation::Conversation;
use crate::distance::{conversation_buckets, segment_bucket_matrix, BucketGrid, DEFAULT_TAU};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Base,
    Dependency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    /// Width of dependency embeddings; defaults to `d_model`.
    pub d_r: usize,
    pub classes: usize,
    pub tau: usize,
    pub mechanism: Mechanism,
    pub share_dependency_table: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, classes: usize, mechanism: Mechanism) -> Self {
        ModelConfig {
            vocab_size,
            max_len: 64,
            d_model: 64,
            heads: 4,
            layers: 2,
            d_ff: 128,
            d_r: 64,
            classes,
            tau: DEFAULT_TAU,
            mechanism,
            share_dependency_table: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
            ("d_ff", self.d_ff),
            ("d_r", self.d_r),
            ("classes", self.classes),
            ("tau", self.tau),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::validation(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    /// Rows in the dependency embedding table, or 0 if the variant has none.
    pub fn bucket_count(&self) -> usize {
        match self.mechanism {
            Mechanism::Rede => 2 * self.tau + 1,
            Mechanism::Segment => 2,
            Mechanism::Vanilla | Mechanism::Mask => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array2<f64>,
    pub ln1_bias: Array2<f64>,
    pub attn: AttentionParams,
    /// `heads × d_r` projection turning a dependency embedding into one scalar per head.
    pub dep_proj: Option<Array2<f64>>,
    pub ln2_gain: Array2<f64>,
    pub ln2_bias: Array2<f64>,
    pub ff_in: Array2<f64>,
    pub ff_in_bias: Array2<f64>,
    pub ff_out: Array2<f64>,
    pub ff_out_bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: ModelConfig,
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    /// One table when shared, otherwise one per layer; empty for variants
    /// without dependency parameters.
    pub dep_tables: Vec<Array2<f64>>,
    pub final_gain: Array2<f64>,
    pub final_bias: Array2<f64>,
    pub head: Array2<f64>,
    pub head_bias: Array2<f64>,
}

/// Visits every tensor in a fixed order with its name and group.
macro_rules! visit_tensors {
    ($model:expr, $f:expr, $iter:ident, $($m:tt)?) => {{
        let f = $f;
        f("token_embedding".to_string(), ParamGroup::Base, & $($m)? $model.token_embedding);
        f("position_embedding".to_string(), ParamGroup::Base, & $($m)? $model.position_embedding);
        for (i, layer) in $model.layers.$iter().enumerate() {
            let base = ParamGroup::Base;
            f(format!("layers.{i}.ln1.gain"), base, & $($m)? layer.ln1_gain);
            f(format!("layers.{i}.ln1.bias"), base, & $($m)? layer.ln1_bias);
            f(format!("layers.{i}.attn.wq"), base, & $($m)? layer.attn.wq);
            f(format!("layers.{i}.attn.wk"), base, & $($m)? layer.attn.wk);
            f(format!("layers.{i}.attn.wv"), base, & $($m)? layer.attn.wv);
            f(format!("layers.{i}.attn.wo"), base, & $($m)? layer.attn.wo);
            if let Some(p) = & $($m)? layer.dep_proj {
                f(format!("layers.{i}.attn.dep_proj"), ParamGroup::Dependency, p);
            }
            f(format!("layers.{i}.ln2.gain"), base, & $($m)? layer.ln2_gain);
            f(format!("layers.{i}.ln2.bias"), base, & $($m)? layer.ln2_bias);
            f(format!("layers.{i}.ff.in"), base, & $($m)? layer.ff_in);
            f(format!("layers.{i}.ff.in_bias"), base, & $($m)? layer.ff_in_bias);
            f(format!("layers.{i}.ff.out"), base, & $($m)? layer.ff_out);
            f(format!("layers.{i}.ff.out_bias"), base, & $($m)? layer.ff_out_bias);
        }
        for (i, t) in $model.dep_tables.$iter().enumerate() {
            f(format!("dependency.table.{i}"), ParamGroup::Dependency, t);
        }
        f("final.gain".to_string(), ParamGroup::Base, & $($m)? $model.final_gain);
        f("final.bias".to_string(), ParamGroup::Base, & $($m)? $model.final_bias);
        f("head.weight".to_string(), ParamGroup::Base, & $($m)? $model.head);
        f("head.bias".to_string(), ParamGroup::Base, & $($m)? $model.head_bias);
    }};
}

fn normal(rng: &mut impl Rng, shape: (usize, usize), std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn(shape, || dist.sample(rng))
}

impl EncoderModel {
    /// All-zero model with the shapes implied by `config`; also serves as a
    /// gradient accumulator.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let z = |r: usize, c: usize| Array2::zeros((r, c));
        let dep = config.mechanism.has_dependency_params();
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                ln1_gain: z(1, d),
                ln1_bias: z(1, d),
                attn: AttentionParams::zeros(d, config.heads),
                dep_proj: dep.then(|| z(config.heads, config.d_r)),
                ln2_gain: z(1, d),
                ln2_bias: z(1, d),
                ff_in: z(d, config.d_ff),
                ff_in_bias: z(1, config.d_ff),
                ff_out: z(config.d_ff, d),
                ff_out_bias: z(1, d),
            })
            .collect();
        let table_count = match (dep, config.share_dependency_table) {
            (false, _) => 0,
            (true, true) => 1,
            (true, false) => config.layers,
        };
        Ok(EncoderModel {
            config: config.clone(),
            token_embedding: z(config.vocab_size, d),
            position_embedding: z(config.max_len, d),
            layers,
            dep_tables: (0..table_count).map(|_| z(config.bucket_count(), config.d_r)).collect(),
            final_gain: z(1, d),
            final_bias: z(1, d),
            head: z(d, config.classes),
            head_bias: z(1, config.classes),
        })
    }

    /// Randomly initialized base weights. Dependency tables are drawn from
    /// `N(0, 0.1)` here; see [`crate::init`] for the statistics-based scheme.
    pub fn new(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let d = config.d_model;
        let w = 1.0 / (d as f64).sqrt();
        m.token_embedding = normal(rng, m.token_embedding.dim(), 0.5);
        m.position_embedding = normal(rng, m.position_embedding.dim(), 0.1);
        for layer in &mut m.layers {
            layer.ln1_gain.fill(1.0);
            layer.ln2_gain.fill(1.0);
            layer.attn.wq = normal(rng, (d, d), w);
            layer.attn.wk = normal(rng, (d, d), w);
            layer.attn.wv = normal(rng, (d, d), w);
            layer.attn.wo = normal(rng, (d, d), w);
            layer.ff_in = normal(rng, (d, config.d_ff), w);
            layer.ff_out = normal(rng, (config.d_ff, d), 1.0 / (config.d_ff as f64).sqrt());
        }
        m.final_gain.fill(1.0);
        m.head = normal(rng, m.head.dim(), w);
        // dependency tensors last, so base weights match across variants for a seed
        for layer in &mut m.layers {
            if let Some(p) = &mut layer.dep_proj {
                *p = normal(rng, p.dim(), 0.02);
            }
        }
        for t in &mut m.dep_tables {
            *t = normal(rng, t.dim(), 0.1);
        }
        Ok(m)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(|_, _, t| t.fill(0.0));
        z
    }

    pub fn for_each_tensor<'a>(&'a self, mut f: impl FnMut(String, ParamGroup, &'a Array2<f64>)) {
        visit_tensors!(self, &mut f, iter,);
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(String, ParamGroup, &mut Array2<f64>)) {
        visit_tensors!(self, &mut f, iter_mut, mut);
    }

    pub fn tensors(&self) -> Vec<(String, ParamGroup, &Array2<f64>)> {
        let mut out = Vec::new();
        self.for_each_tensor(|n, g, t| out.push((n, g, t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ParamGroup, &mut Array2<f64>)> {
        let mut out = Vec::new();
        visit_tensors!(self, &mut |n, g, t| out.push((n, g, t)), iter_mut, mut);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Sets every dependency-group tensor to zero.
    pub fn zero_dependency(&mut self) {
        self.for_each_tensor_mut(|_, g, t| {
            if g == ParamGroup::Dependency {
                t.fill(0.0)
            }
        });
    }

    /// Adds `scale * other` tensor by tensor.
    pub fn add_scaled(&mut self, other: &EncoderModel, scale: f64) {
        let others = other.tensors();
        for ((_, _, t), (_, _, o)) in self.tensors_mut().into_iter().zip(others) {
            t.scaled_add(scale, o);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, _, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Token grid for the configured mechanism.
    pub fn bucket_grid(&self, conv: &Conversation) -> Result<Option<BucketGrid>> {
        Ok(match self.config.mechanism {
            Mechanism::Vanilla => None,
            Mechanism::Rede | Mechanism::Mask => Some(conversation_buckets(conv, self.config.tau)?),
            Mechanism::Segment => Some(segment_bucket_matrix(conv)),
        })
    }

    pub fn prepare(&self, conv: &Conversation) -> Result<EncoderInput> {
        Ok(EncoderInput {
            tokens: conv.tokens.clone(),
            grid: self.bucket_grid(conv)?,
        })
    }

    fn pair_bias<'a>(&'a self, layer: usize, grid: Option<&'a BucketGrid>) -> PairBias<'a> {
        match (self.config.mechanism, grid) {
            (Mechanism::Vanilla, _) | (_, None) => PairBias::None,
            (Mechanism::Mask, Some(grid)) => PairBias::Mask(grid),
            (Mechanism::Rede | Mechanism::Segment, Some(grid)) => PairBias::Learned {
                table: &self.dep_tables[self.table_index(layer)],
                proj: self.layers[layer].dep_proj.as_ref().expect("dependency projection"),
                grid,
            },
        }
    }

    fn table_index(&self, layer: usize) -> usize {
        if self.config.share_dependency_table {
            0
        } else {
            layer
        }
    }

    fn check_input(&self, input: &EncoderInput) -> Result<()> {
        let len = input.tokens.len();
        if len == 0 {
            return Err(Error::shape("empty sequence"));
        }
        if len > self.config.max_len {
            return Err(Error::shape(format!(
                "sequence of {len} tokens exceeds maximum length {}",
                self.config.max_len
            )));
        }
        if let Some(&t) = input.tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::shape(format!(
                "token id {t} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let needs_grid = self.config.mechanism != Mechanism::Vanilla;
        match &input.grid {
            None if needs_grid => Err(Error::shape(format!(
                "{} attention needs a bucket grid",
                self.config.mechanism
            ))),
            Some(g) if needs_grid && g.len() != len => Err(Error::shape(format!(
                "bucket grid covers {} tokens, input has {len}",
                g.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Final normalized activations, `L × d_model`.
    pub fn encode(&self, input: &EncoderInput) -> Result<Array2<f64>> {
        Ok(self.forward_cached(input)?.0)
    }

    pub fn logits(&self, input: &EncoderInput) -> Result<Array1<f64>> {
        let (h, _) = self.forward_cached(input)?;
        Ok(self.classify(&h))
    }

    fn classify(&self, h: &Array2<f64>) -> Array1<f64> {
        h.row(0).dot(&self.head) + self.head_bias.row(0)
    }

    fn forward_cached(&self, input: &EncoderInput) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(input)?;
        let len = input.tokens.len();
        let d = self.config.d_model;
        let mut x = Array2::zeros((len, d));
        for (p, &t) in input.tokens.iter().enumerate() {
            let mut row = x.row_mut(p);
            row.assign(&self.token_embedding.row(t as usize));
            row += &self.position_embedding.row(p);
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let ln1 = layer_norm(x.view(), &layer.ln1_gain, &layer.ln1_bias);
            let (attn_out, attn) =
                attention::forward(ln1.out.view(), &layer.attn, self.pair_bias(i, input.grid.as_ref()))?;
            let mid = &x + &attn_out;
            let ln2 = layer_norm(mid.view(), &layer.ln2_gain, &layer.ln2_bias);
            let pre = ln2.out.dot(&layer.ff_in) + &layer.ff_in_bias;
            let act = pre.mapv(gelu);
            let ff = act.dot(&layer.ff_out) + &layer.ff_out_bias;
            x = &mid + &ff;
            layers.push(LayerCache {
                ln1,
                attn,
                ln2,
                pre,
                act,
            });
        }
        let fin = layer_norm(x.view(), &self.final_gain, &self.final_bias);
        let out = fin.out.clone();
        Ok((out, ForwardCache { layers, fin }))
    }

    /// Cross-entropy loss of `label` and the gradient of every tensor.
    pub fn loss_and_grad(&self, input: &EncoderInput, label: usize) -> Result<(f64, EncoderModel)> {
        if label >= self.config.classes {
            return Err(Error::validation(format!(
                "label {label} outside {} classes",
                self.config.classes
            )));
        }
        let (h, cache) = self.forward_cached(input)?;
        let logits = self.classify(&h);
        let (loss, d_logits) = cross_entropy(&logits, label);
        let mut g = self.zeros_like();

        // classification head on position 0
        let h0 = h.row(0);
        g.head = h0.insert_axis(Axis(1)).dot(&d_logits.view().insert_axis(Axis(0)));
        g.head_bias.row_mut(0).assign(&d_logits);
        let mut dh = Array2::zeros(h.raw_dim());
        dh.row_mut(0).assign(&self.head.dot(&d_logits));

        let (mut dx, dgain, dbias) = layer_norm_backward(&cache.fin, &self.final_gain, dh.view());
        g.final_gain = dgain;
        g.final_bias = dbias;

        for (i, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            // x_out = mid + ff(ln2(mid))
            let d_ff = dx.view();
            let gl = &mut g.layers[i];
            gl.ff_out = lc.act.t().dot(&d_ff);
            gl.ff_out_bias = d_ff.sum_axis(Axis(0)).insert_axis(Axis(0));
            let mut d_pre = d_ff.dot(&layer.ff_out.t());
            ndarray::Zip::from(&mut d_pre)
                .and(&lc.pre)
                .for_each(|g, &p| *g *= gelu_grad(p));
            gl.ff_in = lc.ln2.out.t().dot(&d_pre);
            gl.ff_in_bias = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
            let d_ln2 = d_pre.dot(&layer.ff_in.t());
            let (d_mid_ln, dg2, db2) = layer_norm_backward(&lc.ln2, &layer.ln2_gain, d_ln2.view());
            gl.ln2_gain = dg2;
            gl.ln2_bias = db2;
            let d_mid = &dx + &d_mid_ln;

            // mid = x + attn(ln1(x))
            let bias = self.pair_bias(i, input.grid.as_ref());
            let ag = attention::backward(&layer.attn, bias, &lc.attn, d_mid.view());
            let gl = &mut g.layers[i];
            gl.attn.wq = ag.wq;
            gl.attn.wk = ag.wk;
            gl.attn.wv = ag.wv;
            gl.attn.wo = ag.wo;
            if let (Some(dp), Some(slot)) = (ag.proj, gl.dep_proj.as_mut()) {
                *slot = dp;
            }
            if let Some(dt) = ag.table {
                let ti = self.table_index(i);
                g.dep_tables[ti] += &dt;
            }
            let (d_x_ln, dg1, db1) = layer_norm_backward(&lc.ln1, &layer.ln1_gain, ag.x.view());
            let gl = &mut g.layers[i];
            gl.ln1_gain = dg1;
            gl.ln1_bias = db1;
            dx = d_mid + d_x_ln;
        }

        let len = input.tokens.len();
        g.position_embedding.slice_mut(s![..len, ..]).assign(&dx);
        for (p, &t) in input.tokens.iter().enumerate() {
            let mut row = g.token_embedding.row_mut(t as usize);
            row += &dx.row(p);
        }
        Ok((loss, g))
    }
}

/// Token ids plus the bucket grid the configured mechanism consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub tokens: Vec<u32>,
    pub grid: Option<BucketGrid>,
}

/// Final activations for a conversation, `L × d_model`.
pub fn encoder_forward(model: &EncoderModel, conv: &Conversation) -> Result<Array2<f64>> {
    model.encode(&model.prepare(conv)?)
}

struct LayerCache {
    ln1: NormCache,
    attn: AttentionCache,
    ln2: NormCache,
    pre: Array2<f64>,
    act: Array2<f64>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    fin: NormCache,
}

struct NormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    out: Array2<f64>,
}

fn layer_norm(x: ArrayView2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> NormCache {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = &x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let normalized = centered * inv_std.view().insert_axis(Axis(1));
    let out = &normalized * gain + bias;
    NormCache {
        normalized,
        inv_std,
        out,
    }
}

fn layer_norm_backward(
    cache: &NormCache,
    gain: &Array2<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let d_gain = (&dy * &cache.normalized).sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_bias = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_norm = &dy * gain;
    let d = d_norm.ncols() as f64;
    let mean_d = d_norm.sum_axis(Axis(1)) / d;
    let mean_dn = (&d_norm * &cache.normalized).sum_axis(Axis(1)) / d;
    let mut dx = d_norm;
    ndarray::Zip::from(dx.rows_mut())
        .and(cache.normalized.rows())
        .and(&mean_d)
        .and(&mean_dn)
        .and(&cache.inv_std)
        .for_each(|mut row, n, &md, &mdn, &is| {
            ndarray::Zip::from(&mut row)
                .and(&n)
                .for_each(|g, &nv| *g = is * (*g - md - nv * mdn));
        });
    (dx, d_gain, d_bias)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Softmax cross-entropy; returns the loss and `∂loss/∂logits`.
pub fn cross_entropy(logits: &Array1<f64>, label: usize) -> (f64, Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad = exp / sum;
    grad[label] -= 1.0;
    (loss, grad)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn argmax_ties_prefer_lowest() {
        assert_eq!(argmax(&array![1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&array![0.0, 0.0]), 0);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (loss, g) = cross_entropy(&array![0.5, -1.0, 2.0], 2);
        assert!(loss > 0.0);
        assert!(g.sum().abs() < 1e-15);
        assert!(g[2] < 0.0);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::new(10, 3, Mechanism::Rede);
        c.validate().unwrap();
        c.heads = 3;
        assert!(c.validate().is_err());
        c.heads = 4;
        c.classes = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn groups_and_table_sharing() {
        let mut c = ModelConfig::new(10, 3, Mechanism::Rede);
        c.d_model = 8;
        c.d_r = 8;
        c.heads = 2;
        let m = EncoderModel::zeros(&c).unwrap();
        let deps: Vec<String> = m
            .tensors()
            .into_iter()
            .filter(|(_, g, _)| *g == ParamGroup::Dependency)
            .map(|(n, _, _)| n)
            .collect();
        assert_eq!(
            deps,
            ["layers.0.attn.dep_proj", "layers.1.attn.dep_proj", "dependency.table.0"]
        );
        assert_eq!(m.dep_tables[0].nrows(), 15);

        c.share_dependency_table = false;
        assert_eq!(EncoderModel::zeros(&c).unwrap().dep_tables.len(), 2);

        c.mechanism = Mechanism::Segment;
        assert_eq!(EncoderModel::zeros(&c).unwrap().dep_tables[0].nrows(), 2);

        for mech in [Mechanism::Vanilla, Mechanism::Mask] {
            c.mechanism = mech;
            let m = EncoderModel::zeros(&c).unwrap();
            assert!(m.tensors().iter().all(|(_, g, _)| *g == ParamGroup::Base));
        }
    }
}
