//! Multi-head self-attention with an optional per-pair additive term.
//!
//! For head `h` the pre-softmax score between positions `i` and `j` is
//!
//! ```text
//! s_ij = (q_i · k_j + w_h · E[b_ij]) / sqrt(d_head)
//! ```
//!
//! where `E` is the dependency embedding table, `w_h` the head's bias
//! projection and `b_ij` the bucket of the utterance pair that owns the two
//! tokens. The masking baseline instead adds [`MASK_PENALTY`] after scaling
//! wherever the pair has no dependency relation.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::distance::BucketGrid;
use crate::error::{Error, Result};

/// Additive pre-softmax penalty for blocked pairs.
pub const MASK_PENALTY: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Vanilla,
    Rede,
    Mask,
    Segment,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [Mechanism::Vanilla, Mechanism::Rede, Mechanism::Mask, Mechanism::Segment];

    /// Whether the variant owns a dependency embedding table and bias projection.
    pub fn has_dependency_params(self) -> bool {
        matches!(self, Mechanism::Rede | Mechanism::Segment)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Vanilla => "vanilla",
            Mechanism::Rede => "rede",
            Mechanism::Mask => "mask",
            Mechanism::Segment => "segment",
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown variant {s:?}")))
    }
}

/// Base projections of one attention layer. Each matrix is `d_model × d_model`;
/// head `h` owns columns `h*d_head..(h+1)*d_head` of `wq`, `wk`, `wv` and the
/// matching rows of `wo`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
}

impl AttentionParams {
    pub fn zeros(d_model: usize, heads: usize) -> Self {
        assert!(
            heads > 0 && d_model.is_multiple_of(heads),
            "d_model must split evenly across heads"
        );
        let z = || Array2::zeros((d_model, d_model));
        AttentionParams {
            heads,
            wq: z(),
            wk: z(),
            wv: z(),
            wo: z(),
        }
    }

    pub fn d_model(&self) -> usize {
        self.wq.nrows()
    }

    pub fn d_head(&self) -> usize {
        self.d_model() / self.heads
    }
}

/// The per-pair term added to attention scores.
#[derive(Debug, Clone, Copy)]
pub enum PairBias<'a> {
    None,
    /// Learned bias `proj[h] · table[grid[i][j]]`. `table` is `buckets × d_r`,
    /// `proj` is `heads × d_r`.
    Learned {
        table: &'a Array2<f64>,
        proj: &'a Array2<f64>,
        grid: &'a BucketGrid,
    },
    /// Blocks pairs whose bucket is `grid.no_relation`.
    Mask(&'a BucketGrid),
}

impl PairBias<'_> {
    fn check(&self, len: usize, heads: usize) -> Result<()> {
        let grid = match self {
            PairBias::None => return Ok(()),
            PairBias::Learned { table, proj, grid } => {
                if table.nrows() != grid.bucket_count {
                    return Err(Error::shape(format!(
                        "embedding table has {} rows, bucket map needs {}",
                        table.nrows(),
                        grid.bucket_count
                    )));
                }
                if proj.nrows() != heads || proj.ncols() != table.ncols() {
                    return Err(Error::shape(format!(
                        "bias projection is {:?}, expected ({heads}, {})",
                        proj.dim(),
                        table.ncols()
                    )));
                }
                grid
            }
            PairBias::Mask(grid) => grid,
        };
        if grid.len() != len {
            return Err(Error::shape(format!(
                "bucket grid is {}×{0}, sequence has {len} tokens",
                grid.len()
            )));
        }
        Ok(())
    }

    /// Per-head scalar bias for every bucket: `heads × buckets`.
    fn bucket_bias(&self) -> Option<Array2<f64>> {
        match self {
            PairBias::Learned { table, proj, .. } => Some(proj.dot(&table.t())),
            _ => None,
        }
    }
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub x: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Post-softmax weights, one `L × L` matrix per head.
    pub probs: Vec<Array2<f64>>,
    pub context: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub x: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    /// Present only for [`PairBias::Learned`].
    pub table: Option<Array2<f64>>,
    pub proj: Option<Array2<f64>>,
}

fn check_input(x: ArrayView2<f64>, params: &AttentionParams) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::shape("empty sequence"));
    }
    if x.ncols() != params.d_model() {
        return Err(Error::shape(format!(
            "activations have width {}, projections expect {}",
            x.ncols(),
            params.d_model()
        )));
    }
    Ok(())
}

fn head_scores(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    head: usize,
    scale: f64,
    bias: &PairBias<'_>,
    bucket_bias: Option<&Array2<f64>>,
) -> Array2<f64> {
    let mut scores = q.dot(&k.t());
    match (bias, bucket_bias) {
        (PairBias::Learned { grid, .. }, Some(bb)) => {
            let row = bb.row(head);
            ndarray::Zip::from(&mut scores)
                .and(&grid.buckets)
                .for_each(|s, &b| *s = (*s + row[b]) / scale);
        }
        (PairBias::Mask(grid), _) => {
            ndarray::Zip::from(&mut scores).and(&grid.buckets).for_each(|s, &b| {
                *s /= scale;
                if b == grid.no_relation {
                    *s += MASK_PENALTY;
                }
            });
        }
        _ => scores.mapv_inplace(|s| s / scale),
    }
    scores
}

/// Pre-softmax scores for every head.
pub fn attention_scores(x: ArrayView2<f64>, params: &AttentionParams, bias: PairBias<'_>) -> Result<Vec<Array2<f64>>> {
    check_input(x, params)?;
    bias.check(x.nrows(), params.heads)?;
    let q = x.dot(&params.wq);
    let k = x.dot(&params.wk);
    let dh = params.d_head();
    let scale = (dh as f64).sqrt();
    let bucket_bias = bias.bucket_bias();
    Ok((0..params.heads)
        .map(|h| {
            let cols = s![.., h * dh..(h + 1) * dh];
            head_scores(q.slice(cols), k.slice(cols), h, scale, &bias, bucket_bias.as_ref())
        })
        .collect())
}

pub fn attention_scores_vanilla(x: ArrayView2<f64>, params: &AttentionParams) -> Result<Vec<Array2<f64>>> {
    attention_scores(x, params, PairBias::None)
}

pub fn attention_scores_rede(
    x: ArrayView2<f64>,
    params: &AttentionParams,
    table: &Array2<f64>,
    proj: &Array2<f64>,
    grid: &BucketGrid,
) -> Result<Vec<Array2<f64>>> {
    attention_scores(x, params, PairBias::Learned { table, proj, grid })
}

pub fn attention_scores_mask(
    x: ArrayView2<f64>,
    params: &AttentionParams,
    grid: &BucketGrid,
) -> Result<Vec<Array2<f64>>> {
    attention_scores(x, params, PairBias::Mask(grid))
}

/// Row-wise softmax, stabilized by the row maximum.
pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Multi-head attention: `softmax(scores) · V`, heads concatenated and
/// projected through `wo`.
pub fn forward(
    x: ArrayView2<f64>,
    params: &AttentionParams,
    bias: PairBias<'_>,
) -> Result<(Array2<f64>, AttentionCache)> {
    check_input(x, params)?;
    bias.check(x.nrows(), params.heads)?;
    let q = x.dot(&params.wq);
    let k = x.dot(&params.wk);
    let v = x.dot(&params.wv);
    let dh = params.d_head();
    let scale = (dh as f64).sqrt();
    let bucket_bias = bias.bucket_bias();
    let mut context = Array2::zeros(x.raw_dim());
    let mut probs = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let scores = head_scores(q.slice(cols), k.slice(cols), h, scale, &bias, bucket_bias.as_ref());
        let p = softmax_rows(&scores);
        context.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    let out = context.dot(&params.wo);
    Ok((
        out,
        AttentionCache {
            x: x.to_owned(),
            q,
            k,
            v,
            probs,
            context,
        },
    ))
}

/// Gradients of a scalar loss given `d_out = ∂loss/∂output`.
pub fn backward(
    params: &AttentionParams,
    bias: PairBias<'_>,
    cache: &AttentionCache,
    d_out: ArrayView2<f64>,
) -> AttentionGrads {
    let dh = params.d_head();
    let scale = (dh as f64).sqrt();
    let d_wo = cache.context.t().dot(&d_out);
    let d_context = d_out.dot(&params.wo.t());

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    let mut d_bucket = match bias {
        PairBias::Learned { grid, .. } => Some(Array2::<f64>::zeros((params.heads, grid.bucket_count))),
        _ => None,
    };

    for h in 0..params.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let p = &cache.probs[h];
        let d_ctx_h = d_context.slice(cols);
        let dp = d_ctx_h.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&d_ctx_h));

        // softmax backward, then undo the 1/sqrt(d) scaling
        let row_dot: Array1<f64> = (&dp * p).sum_axis(Axis(1));
        let mut d_raw = dp;
        ndarray::Zip::from(d_raw.rows_mut())
            .and(p.rows())
            .and(&row_dot)
            .for_each(|mut dr, pr, &rd| {
                ndarray::Zip::from(&mut dr)
                    .and(&pr)
                    .for_each(|g, &pv| *g = pv * (*g - rd) / scale);
            });

        if let (Some(db), PairBias::Learned { grid, .. }) = (d_bucket.as_mut(), &bias) {
            let mut row = db.row_mut(h);
            ndarray::Zip::from(&d_raw)
                .and(&grid.buckets)
                .for_each(|&g, &b| row[b] += g);
        }

        dq.slice_mut(cols).assign(&d_raw.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&d_raw.t().dot(&cache.q.slice(cols)));
    }

    let x = &cache.x;
    let d_x = dq.dot(&params.wq.t()) + dk.dot(&params.wk.t()) + dv.dot(&params.wv.t());
    let (table, proj) = match (bias, d_bucket) {
        (PairBias::Learned { table, proj, .. }, Some(db)) => {
            // bias[h][b] = proj[h] · table[b]
            (Some(db.t().dot(proj)), Some(db.dot(table)))
        }
        _ => (None, None),
    };
    AttentionGrads {
        x: d_x,
        wq: x.t().dot(&dq),
        wk: x.t().dot(&dk),
        wv: x.t().dot(&dv),
        wo: d_wo,
        table,
        proj,
    }
}
