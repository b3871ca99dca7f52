//! Signed relative dependency distances between utterances, clipping, and
//! the bucket indices that select rows of the dependency embedding table.

use std::fmt;

use ndarray::Array2;
use serde::{Serialize, Serializer};

use crate::conversation::{Conversation, DependencyTree};
use crate::error::{Error, Result};

pub const DEFAULT_TAU: usize = 7;

/// Signed tree path length between two utterances, or `Inf` when neither is
/// an ancestor of the other. Positive values run from a descendant up toward
/// its ancestor. A finite value is never zero: self-distance is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelDistance {
    Finite(i32),
    Inf,
}

impl RelDistance {
    pub fn is_finite(self) -> bool {
        matches!(self, RelDistance::Finite(_))
    }

    pub fn finite(self) -> Option<i32> {
        match self {
            RelDistance::Finite(d) => Some(d),
            RelDistance::Inf => None,
        }
    }
}

impl fmt::Display for RelDistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelDistance::Finite(d) => write!(f, "{d}"),
            RelDistance::Inf => f.write_str("INF"),
        }
    }
}

impl Serialize for RelDistance {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            RelDistance::Finite(d) => s.serialize_i32(*d),
            RelDistance::Inf => s.serialize_str("INF"),
        }
    }
}

/// Distance from utterance `i` to utterance `j`.
pub fn rel_distance(tree: &DependencyTree, i: usize, j: usize) -> Result<RelDistance> {
    let n = tree.len();
    if i >= n || j >= n {
        return Err(Error::validation(format!(
            "utterance pair ({i}, {j}) out of range for {n} utterances"
        )));
    }
    if i == j {
        return Ok(RelDistance::Finite(1));
    }
    let up = |from: usize, to: usize| tree.ancestors(from).position(|a| a == to).map(|k| k as i32 + 1);
    Ok(if j < i {
        up(i, j).map_or(RelDistance::Inf, RelDistance::Finite)
    } else {
        up(j, i).map_or(RelDistance::Inf, |k| RelDistance::Finite(-k))
    })
}

/// Keeps distances with `|d| <= tau`; everything else becomes `Inf`.
pub fn clip(d: RelDistance, tau: usize) -> RelDistance {
    match d {
        RelDistance::Finite(v) if v.unsigned_abs() as usize <= tau => d,
        _ => RelDistance::Inf,
    }
}

/// Layout of the dependency embedding table rows:
/// `-tau..=-1 -> 0..tau`, `1..=tau -> tau..2*tau`, `Inf -> 2*tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BucketMap {
    pub tau: usize,
}

impl Default for BucketMap {
    fn default() -> Self {
        BucketMap { tau: DEFAULT_TAU }
    }
}

impl BucketMap {
    pub fn new(tau: usize) -> Result<Self> {
        if tau == 0 {
            return Err(Error::validation("tau must be at least 1"));
        }
        Ok(BucketMap { tau })
    }

    pub fn bucket_count(&self) -> usize {
        2 * self.tau + 1
    }

    pub fn inf_bucket(&self) -> usize {
        2 * self.tau
    }

    /// Row for an already clipped distance. `None` for 0 or `|d| > tau`.
    pub fn index(&self, d: RelDistance) -> Option<usize> {
        let tau = self.tau as i64;
        match d {
            RelDistance::Inf => Some(self.inf_bucket()),
            RelDistance::Finite(v) => {
                let v = v as i64;
                match v {
                    _ if v >= -tau && v <= -1 => Some((v + tau) as usize),
                    _ if v >= 1 && v <= tau => Some((v - 1 + tau) as usize),
                    _ => None,
                }
            }
        }
    }

    pub fn distance(&self, index: usize) -> Option<RelDistance> {
        let tau = self.tau;
        match index {
            i if i < tau => Some(RelDistance::Finite(i as i32 - tau as i32)),
            i if i < 2 * tau => Some(RelDistance::Finite((i - tau) as i32 + 1)),
            i if i == 2 * tau => Some(RelDistance::Inf),
            _ => None,
        }
    }
}

/// N×N utterance distances, optionally clipped at `tau`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    tau: Option<usize>,
    data: Vec<RelDistance>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn tau(&self) -> Option<usize> {
        self.tau
    }

    pub fn get(&self, i: usize, j: usize) -> RelDistance {
        self.data[i * self.n + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[RelDistance]> {
        self.data.chunks(self.n)
    }

    pub fn to_nested(&self) -> Vec<Vec<RelDistance>> {
        self.rows().map(<[RelDistance]>::to_vec).collect()
    }
}

/// All-pairs distances by walking each node's ancestor chain once.
pub fn raw_distance_matrix(tree: &DependencyTree) -> DistanceMatrix {
    let n = tree.len();
    let mut data = vec![RelDistance::Inf; n * n];
    for i in 0..n {
        data[i * n + i] = RelDistance::Finite(1);
        for (k, a) in tree.ancestors(i).enumerate() {
            let k = k as i32 + 1;
            data[i * n + a] = RelDistance::Finite(k);
            data[a * n + i] = RelDistance::Finite(-k);
        }
    }
    DistanceMatrix { n, tau: None, data }
}

pub fn utterance_distance_matrix(tree: &DependencyTree, tau: usize) -> DistanceMatrix {
    let raw = raw_distance_matrix(tree);
    DistanceMatrix {
        n: raw.n,
        tau: Some(tau),
        data: raw.data.into_iter().map(|d| clip(d, tau)).collect(),
    }
}

/// Token-level L×L grid of embedding-table rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketGrid {
    pub buckets: Array2<usize>,
    pub bucket_count: usize,
    /// Row meaning "no dependency relation"; used by the masking baseline.
    pub no_relation: usize,
}

impl BucketGrid {
    pub fn len(&self) -> usize {
        self.buckets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn get(&self, p: usize, q: usize) -> usize {
        self.buckets[[p, q]]
    }

    pub fn is_related(&self, p: usize, q: usize) -> bool {
        self.buckets[[p, q]] != self.no_relation
    }
}

/// Looks each token pair up through the token-to-utterance map. Padding
/// positions fall in the `Inf` bucket against every token.
pub fn token_bucket_matrix(conv: &Conversation, matrix: &DistanceMatrix, buckets: &BucketMap) -> Result<BucketGrid> {
    if matrix.len() != conv.utterance_count() {
        return Err(Error::shape(format!(
            "distance matrix covers {} utterances, conversation has {}",
            matrix.len(),
            conv.utterance_count()
        )));
    }
    if matrix.tau() != Some(buckets.tau) {
        return Err(Error::shape(format!(
            "distance matrix clipped at {:?}, bucket map expects tau {}",
            matrix.tau(),
            buckets.tau
        )));
    }
    let owners = &conv.token_to_utt;
    let len = owners.len();
    let inf = buckets.inf_bucket();
    let grid = Array2::from_shape_fn((len, len), |(p, q)| match (owners[p], owners[q]) {
        (Some(u), Some(v)) => buckets
            .index(matrix.get(u, v))
            .expect("clipped distance always has a bucket"),
        _ => inf,
    });
    Ok(BucketGrid {
        buckets: grid,
        bucket_count: buckets.bucket_count(),
        no_relation: inf,
    })
}

/// Two-row segment grid: 0 for same-utterance pairs, 1 otherwise.
pub fn segment_bucket_matrix(conv: &Conversation) -> BucketGrid {
    let owners = &conv.token_to_utt;
    let len = owners.len();
    let grid = Array2::from_shape_fn((len, len), |(p, q)| match (owners[p], owners[q]) {
        (Some(u), Some(v)) if u == v => 0,
        _ => 1,
    });
    BucketGrid {
        buckets: grid,
        bucket_count: 2,
        no_relation: 1,
    }
}

/// Convenience: clipped utterance matrix followed by token expansion.
pub fn conversation_buckets(conv: &Conversation, tau: usize) -> Result<BucketGrid> {
    let map = BucketMap::new(tau)?;
    token_bucket_matrix(conv, &utterance_distance_matrix(&conv.tree, tau), &map)
}
