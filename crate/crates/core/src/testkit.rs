//! Reference oracles for tests. Nothing here shares code paths with the
//! implementations it checks.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;

use crate::attention::{self, AttentionParams, PairBias};
use crate::conversation::DependencyTree;
use crate::distance::{BucketGrid, RelDistance};
use crate::encoder::{EncoderInput, EncoderModel};

/// Uniform random recursive tree over `n` utterances.
pub fn random_tree(n: usize, rng: &mut impl Rng) -> DependencyTree {
    let parents = (0..n).map(|i| (i > 0).then(|| rng.random_range(0..i))).collect();
    DependencyTree::from_parents(parents).expect("valid by construction")
}

/// Length of the directed walk from `from` to `to` over `edges` (child → parent),
/// found by breadth-first search.
fn walk_length(n: usize, edges: &[(usize, usize)], from: usize, to: usize) -> Option<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([(from, 0usize)]);
    seen[from] = true;
    while let Some((node, len)) = queue.pop_front() {
        if node == to {
            return Some(len);
        }
        for &next in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                queue.push_back((next, len + 1));
            }
        }
    }
    None
}

/// Signed distance by explicit search over the directed dependency edges.
pub fn brute_force_distance(n: usize, edges: &[(usize, usize)], i: usize, j: usize) -> RelDistance {
    if i == j {
        return RelDistance::Finite(1);
    }
    if let Some(k) = walk_length(n, edges, i, j) {
        return RelDistance::Finite(k as i32);
    }
    if let Some(k) = walk_length(n, edges, j, i) {
        return RelDistance::Finite(-(k as i32));
    }
    RelDistance::Inf
}

/// `||a - b|| / max(||a||, ||b||)`; zero when both are (numerically) zero.
pub fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let norm = |t: &Array2<f64>| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&(analytic - numeric));
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-10 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of the classification loss for every tensor of
/// `model`, in [`EncoderModel::tensors`] order.
pub fn numeric_model_grads(
    model: &EncoderModel,
    input: &EncoderInput,
    label: usize,
    step: f64,
) -> Vec<(String, Array2<f64>)> {
    let loss = |m: &EncoderModel| {
        let logits = m.logits(input).expect("forward");
        let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = logits.mapv(|v| (v - max).exp()).sum().ln() + max;
        lse - logits[label]
    };
    let mut probe = model.clone();
    let shapes: Vec<(String, (usize, usize))> = model.tensors().into_iter().map(|(n, _, t)| (n, t.dim())).collect();
    let mut out = Vec::with_capacity(shapes.len());
    for (ti, (name, dim)) in shapes.into_iter().enumerate() {
        let mut grad = Array2::zeros(dim);
        for idx in ndarray::indices(dim) {
            let orig = probe.tensors()[ti].2[idx];
            set(&mut probe, ti, idx, orig + step);
            let plus = loss(&probe);
            set(&mut probe, ti, idx, orig - step);
            let minus = loss(&probe);
            set(&mut probe, ti, idx, orig);
            grad[idx] = (plus - minus) / (2.0 * step);
        }
        out.push((name, grad));
    }
    out
}

fn set(model: &mut EncoderModel, tensor: usize, idx: (usize, usize), value: f64) {
    let mut tensors = model.tensors_mut();
    tensors[tensor].2[idx] = value;
}

/// Attention tensors that finite differences can perturb.
#[derive(Debug, Clone)]
pub struct AttentionProbe {
    pub x: Array2<f64>,
    pub params: AttentionParams,
    pub table: Array2<f64>,
    pub proj: Array2<f64>,
}

/// Which pair term to apply to an [`AttentionProbe`].
#[derive(Debug, Clone, Copy)]
pub enum ProbeBias<'g> {
    None,
    Learned(&'g BucketGrid),
    Mask(&'g BucketGrid),
}

impl AttentionProbe {
    pub fn bias<'a>(&'a self, kind: ProbeBias<'a>) -> PairBias<'a> {
        match kind {
            ProbeBias::None => PairBias::None,
            ProbeBias::Learned(grid) => PairBias::Learned {
                table: &self.table,
                proj: &self.proj,
                grid,
            },
            ProbeBias::Mask(grid) => PairBias::Mask(grid),
        }
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Array2<f64>); 7] {
        [
            ("x", &mut self.x),
            ("wq", &mut self.params.wq),
            ("wk", &mut self.params.wk),
            ("wv", &mut self.params.wv),
            ("wo", &mut self.params.wo),
            ("table", &mut self.table),
            ("proj", &mut self.proj),
        ]
    }
}

/// Central differences of `sum(weights ⊙ attention(x))` for every tensor of
/// `probe`, with the pair term rebuilt from the perturbed probe.
pub fn numeric_attention_grads(
    probe: &AttentionProbe,
    weights: &Array2<f64>,
    step: f64,
    kind: ProbeBias<'_>,
) -> Vec<(&'static str, Array2<f64>)> {
    let objective = |p: &AttentionProbe| {
        let (out, _) = attention::forward(p.x.view(), &p.params, p.bias(kind)).expect("forward");
        (&out * weights).sum()
    };
    let mut work = probe.clone();
    let count = work.tensors_mut().len();
    let mut result = Vec::with_capacity(count);
    for ti in 0..count {
        let (name, dim) = {
            let t = &work.tensors_mut()[ti];
            (t.0, t.1.dim())
        };
        let mut grad = Array2::zeros(dim);
        for idx in ndarray::indices(dim) {
            let orig = work.tensors_mut()[ti].1[idx];
            work.tensors_mut()[ti].1[idx] = orig + step;
            let plus = objective(&work);
            work.tensors_mut()[ti].1[idx] = orig - step;
            let minus = objective(&work);
            work.tensors_mut()[ti].1[idx] = orig;
            grad[idx] = (plus - minus) / (2.0 * step);
        }
        result.push((name, grad));
    }
    result
}

/// A small random conversation with at most `max_tokens` flat positions
/// (including `<cls>`), its tree drawn uniformly.
pub fn random_conversation(max_tokens: usize, vocab_words: usize, rng: &mut impl Rng) -> crate::Conversation {
    use crate::conversation::{Conversation, Tokenizer, Vocab};
    assert!(max_tokens >= 2);
    let words: Vec<String> = (0..vocab_words).map(|i| format!("v{i}")).collect();
    let tok = Tokenizer::new(Vocab::from(words.clone()), true);
    let budget = rng.random_range(1..max_tokens);
    let mut lens = Vec::new();
    let mut used = 0;
    while used < budget {
        let len = rng.random_range(1..=(budget - used).min(3));
        lens.push(len);
        used += len;
    }
    let turns: Vec<(String, String)> = lens
        .iter()
        .map(|&len| {
            let text: Vec<&str> = (0..len)
                .map(|_| words[rng.random_range(0..vocab_words)].as_str())
                .collect();
            ("s".to_string(), text.join(" "))
        })
        .collect();
    let tree = random_tree(lens.len(), rng);
    Conversation::from_texts(&turns, tree, &tok).expect("valid conversation")
}

/// Small model (`d_model` 8, 2 heads) with every tensor randomized, so all
/// gradients are generically non-zero.
pub fn random_small_model(
    mechanism: crate::Mechanism,
    layers: usize,
    vocab_size: usize,
    rng: &mut impl Rng,
) -> EncoderModel {
    use crate::encoder::ModelConfig;
    let mut cfg = ModelConfig::new(vocab_size, 3, mechanism);
    cfg.d_model = 8;
    cfg.d_r = 4;
    cfg.heads = 2;
    cfg.d_ff = 12;
    cfg.layers = layers;
    cfg.max_len = 6;
    cfg.tau = 2;
    cfg.share_dependency_table = rng.random_bool(0.5);
    let mut model = EncoderModel::zeros(&cfg).expect("valid config");
    model.for_each_tensor_mut(|name, _, t| {
        let (center, spread) = if name.ends_with("gain") { (1.0, 0.3) } else { (0.0, 0.6) };
        t.mapv_inplace(|_| center + spread * (rng.random::<f64>() * 2.0 - 1.0));
    });
    model
}

/// A model of another mechanism carrying the same BASE tensors; its
/// dependency tensors (if any) are zero.
pub fn with_mechanism(model: &EncoderModel, mechanism: crate::Mechanism) -> EncoderModel {
    let mut cfg = model.config.clone();
    cfg.mechanism = mechanism;
    let mut out = EncoderModel::zeros(&cfg).expect("valid config");
    let source: std::collections::HashMap<String, Array2<f64>> = model
        .tensors()
        .into_iter()
        .filter(|(_, g, _)| *g == crate::ParamGroup::Base)
        .map(|(n, _, t)| (n, t.clone()))
        .collect();
    out.for_each_tensor_mut(|name, _, t| {
        if let Some(src) = source.get(&name) {
            t.assign(src);
        }
    });
    out
}

/// Puts `value` in `bucket` and zero everywhere else, for every head and layer.
pub fn set_bucket_bias(model: &mut EncoderModel, bucket: usize, value: f64) {
    model.for_each_tensor_mut(|name, group, t| {
        if group != crate::ParamGroup::Dependency {
            return;
        }
        t.fill(0.0);
        if name.starts_with("dependency.table") {
            t[(bucket, 0)] = value;
        } else {
            t.column_mut(0).fill(1.0);
        }
    });
}
