//! Per-sample feature tensor assembly and the directed temporal K-NN graph.
//!
//! Every (timestamp, EPC) pair is a node carrying the 2-dimensional
//! (RSS, phase) feature. Each node at time `t >= 2` receives directed edges
//! from the `k` nodes at `t - 1` whose features are nearest in Euclidean
//! distance, so information flows strictly forward in time.

use thiserror::Error;

use crate::types::ProcessedGesture;

/// Dense `T x N x D` feature tensor of one gesture, row-major over
/// `(t, n, d)` with `D = 2` (RSS, phase).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub t_len: usize,
    pub n_tags: usize,
    values: Vec<f64>,
}

pub const FEATURE_DIM: usize = 2;

impl FeatureTensor {
    pub fn new(t_len: usize, n_tags: usize, values: Vec<f64>) -> Result<Self, GraphError> {
        if values.len() != t_len * n_tags * FEATURE_DIM {
            return Err(GraphError::Shape {
                expected: t_len * n_tags * FEATURE_DIM,
                found: values.len(),
            });
        }
        Ok(FeatureTensor {
            t_len,
            n_tags,
            values,
        })
    }

    /// Feature pair of tag `n` (0-based) at time `t` (0-based).
    #[inline]
    pub fn feature(&self, t: usize, n: usize) -> [f64; FEATURE_DIM] {
        let base = (t * self.n_tags + n) * FEATURE_DIM;
        [self.values[base], self.values[base + 1]]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_count(&self) -> usize {
        self.t_len * self.n_tags
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("tensor shape mismatch: expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("dataframe for EPC {epc} has {found} rows, expected {expected}")]
    FrameLength {
        epc: u8,
        expected: usize,
        found: usize,
    },
    #[error("neighbor count k={k} out of range 1..={n_tags}")]
    BadNeighborCount { k: usize, n_tags: usize },
}

/// Stack a fully-repaired gesture into a `T x N x D` tensor.
///
/// Layout is canonical: `n` in EPC order, `t` in time order, so permuting
/// the input frame order does not change the output.
pub fn build_tensor(gesture: &ProcessedGesture) -> Result<FeatureTensor, GraphError> {
    let n_tags = gesture.frames.len();
    let mut frames: Vec<&crate::types::Dataframe> = gesture.frames.iter().collect();
    frames.sort_by_key(|f| f.epc);
    let t_len = frames.first().map(|f| f.len()).unwrap_or(0);
    for f in &frames {
        if f.len() != t_len {
            return Err(GraphError::FrameLength {
                epc: f.epc,
                expected: t_len,
                found: f.len(),
            });
        }
    }
    let mut values = Vec::with_capacity(t_len * n_tags * FEATURE_DIM);
    for t in 0..t_len {
        for f in &frames {
            values.push(f.rss[t]);
            values.push(f.phase[t]);
        }
    }
    FeatureTensor::new(t_len, n_tags, values)
}

/// Directed temporal K-NN graph over a feature tensor.
///
/// `in_neighbors[t][j]` lists the source EPC indices (0-based, ascending) at
/// time `t - 1` feeding node `(t, j)`; index `t = 0` is empty since the
/// first timestamp has no predecessors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalGraph {
    pub t_len: usize,
    pub n_tags: usize,
    pub k: usize,
    in_neighbors: Vec<Vec<Vec<usize>>>,
}

impl TemporalGraph {
    /// Assemble a graph from explicit in-neighbor lists. Every node at
    /// `t >= 1` must list exactly `k` sources (in any order); nodes at
    /// `t = 0` must list none.
    pub fn from_in_neighbors(
        t_len: usize,
        n_tags: usize,
        k: usize,
        in_neighbors: Vec<Vec<Vec<usize>>>,
    ) -> Result<Self, GraphError> {
        if k == 0 || k > n_tags {
            return Err(GraphError::BadNeighborCount { k, n_tags });
        }
        assert_eq!(in_neighbors.len(), t_len);
        for (t, per_t) in in_neighbors.iter().enumerate() {
            assert_eq!(per_t.len(), n_tags);
            for sources in per_t {
                if t == 0 {
                    assert!(sources.is_empty(), "t=0 nodes cannot have in-edges");
                } else {
                    assert_eq!(sources.len(), k, "in-degree must equal k");
                    assert!(sources.iter().all(|&s| s < n_tags));
                }
            }
        }
        Ok(TemporalGraph {
            t_len,
            n_tags,
            k,
            in_neighbors,
        })
    }

    /// Sources at `t - 1` feeding node `(t, j)`.
    #[inline]
    pub fn in_neighbors(&self, t: usize, j: usize) -> &[usize] {
        &self.in_neighbors[t][j]
    }

    pub fn node_count(&self) -> usize {
        self.t_len * self.n_tags
    }

    pub fn edge_count(&self) -> usize {
        self.in_neighbors
            .iter()
            .map(|per_t| per_t.iter().map(Vec::len).sum::<usize>())
            .sum()
    }

    /// Edge list rows `t_src,epc_src,t_dst,epc_dst` with 1-based timestamps
    /// and EPC ids, in deterministic order.
    pub fn edge_list_csv(&self) -> String {
        let mut out = String::from("t_src,epc_src,t_dst,epc_dst\n");
        for t in 1..self.t_len {
            for j in 0..self.n_tags {
                for &i in self.in_neighbors(t, j) {
                    out.push_str(&format!("{},{},{},{}\n", t, i + 1, t + 1, j + 1));
                }
            }
        }
        out
    }
}

/// Build the temporal K-NN graph: for every target node at `t >= 2`, connect
/// the `k` sources at `t - 1` with the smallest Euclidean feature distance,
/// ties broken by smaller source EPC id.
pub fn build_temporal_knn_graph(
    tensor: &FeatureTensor,
    k: usize,
) -> Result<TemporalGraph, GraphError> {
    if k == 0 || k > tensor.n_tags {
        return Err(GraphError::BadNeighborCount {
            k,
            n_tags: tensor.n_tags,
        });
    }
    let t_len = tensor.t_len;
    let n = tensor.n_tags;
    let mut in_neighbors: Vec<Vec<Vec<usize>>> = Vec::with_capacity(t_len);
    in_neighbors.push(vec![Vec::new(); n]);
    let mut order: Vec<usize> = (0..n).collect();
    for t in 1..t_len {
        let mut per_target = Vec::with_capacity(n);
        for j in 0..n {
            let target = tensor.feature(t, j);
            let dists: Vec<f64> = (0..n)
                .map(|i| {
                    let source = tensor.feature(t - 1, i);
                    let dr = target[0] - source[0];
                    let dp = target[1] - source[1];
                    dr * dr + dp * dp
                })
                .collect();
            for (idx, o) in order.iter_mut().enumerate() {
                *o = idx;
            }
            order.sort_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap().then(a.cmp(&b)));
            let mut selected: Vec<usize> = order[..k].to_vec();
            selected.sort_unstable();
            per_target.push(selected);
        }
        in_neighbors.push(per_target);
    }
    Ok(TemporalGraph {
        t_len,
        n_tags: n,
        k,
        in_neighbors,
    })
}
