//! Face graph over one video's detections and its component-based cleaning.
//!
//! Nodes are detections; two nodes are joined when the dot product of their
//! unit embeddings is strictly greater than the threshold. Connected
//! components approximate face tracks. Components whose size is at most a
//! fraction of `n_f` (the number of frames with a detection) are flagged as
//! false detections.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Component, ComponentSet, FaceRecord, RecordId, VideoGroup};
use crate::union_find::UnionFind;

/// Operating point used for the reference experiments.
pub const DEFAULT_THETA: f64 = 0.8;

/// Pair-evaluation tile edge. Only affects traversal order, never the result.
const BLOCK: usize = 64;

/// Edge threshold on embedding similarity, in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SimilarityThreshold(f64);

impl SimilarityThreshold {
    pub fn new(theta: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&theta) {
            return Err(Error::InvalidThreshold(theta));
        }
        Ok(SimilarityThreshold(theta))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for SimilarityThreshold {
    fn default() -> Self {
        SimilarityThreshold(DEFAULT_THETA)
    }
}

impl fmt::Display for SimilarityThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for SimilarityThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidThreshold(f64::NAN))?;
        SimilarityThreshold::new(v)
    }
}

/// Component-size threshold as a fraction of `n_f`, kept as an exact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SizeFraction {
    numerator: u32,
    denominator: u32,
}

impl SizeFraction {
    pub const QUARTER: SizeFraction = SizeFraction {
        numerator: 1,
        denominator: 4,
    };
    pub const HALF: SizeFraction = SizeFraction {
        numerator: 1,
        denominator: 2,
    };
    pub const THREE_QUARTERS: SizeFraction = SizeFraction {
        numerator: 3,
        denominator: 4,
    };

    pub fn new(numerator: u32, denominator: u32) -> Result<Self> {
        if numerator == 0 || denominator == 0 || numerator > denominator {
            return Err(Error::InvalidFraction(format!("{numerator}/{denominator}")));
        }
        Ok(SizeFraction {
            numerator,
            denominator,
        })
    }

    pub fn numerator(self) -> u32 {
        self.numerator
    }

    pub fn denominator(self) -> u32 {
        self.denominator
    }

    pub fn as_f64(self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

impl Default for SizeFraction {
    fn default() -> Self {
        SizeFraction::HALF
    }
}

impl fmt::Display for SizeFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

impl FromStr for SizeFraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidFraction(s.to_string());
        let (n, d) = s.trim().split_once('/').ok_or_else(bad)?;
        let n = n.trim().parse().map_err(|_| bad())?;
        let d = d.trim().parse().map_err(|_| bad())?;
        SizeFraction::new(n, d)
    }
}

/// Dot product of two embeddings of equal length.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(dot(a, b))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Undirected similarity graph over the detections of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceGraph {
    /// Node `i` is `node_ids[i]`; ascending.
    pub node_ids: Vec<RecordId>,
    /// Pairs `(i, j)` with `i < j`, sorted lexicographically.
    pub edges: Vec<(usize, usize)>,
}

impl FaceGraph {
    /// Builds a graph directly from an edge list. Self-loops are dropped and
    /// each undirected edge is stored once.
    pub fn from_edges(
        node_ids: Vec<RecordId>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let n = node_ids.len();
        let mut edges: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|&(a, b)| a != b)
            .map(|(a, b)| {
                assert!(a < n && b < n, "edge ({a}, {b}) out of range for {n} nodes");
                (a.min(b), a.max(b))
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        FaceGraph { node_ids, edges }
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Normalizes every embedding of the group into one row-major `K x D` buffer.
fn unit_rows(records: &[FaceRecord]) -> Result<(Vec<f64>, usize)> {
    let dim = match records.first() {
        None => return Ok((Vec::new(), 0)),
        Some(r) => r
            .embedding
            .as_ref()
            .ok_or_else(|| Error::MissingEmbedding(r.id()))?
            .dim(),
    };
    let mut rows = Vec::with_capacity(records.len() * dim);
    for r in records {
        let e = r
            .embedding
            .as_ref()
            .ok_or_else(|| Error::MissingEmbedding(r.id()))?;
        if e.dim() != dim {
            return Err(Error::LengthMismatch {
                left: dim,
                right: e.dim(),
            });
        }
        rows.extend_from_slice(e.normalized()?.as_slice());
    }
    Ok((rows, dim))
}

/// Evaluates every unordered pair of detections and links those with
/// similarity strictly above `theta`. Faces from the same frame are compared
/// like any other pair. Embeddings are normalized before comparison.
pub fn build_face_graph(group: &VideoGroup, theta: SimilarityThreshold) -> Result<FaceGraph> {
    let records = group.records();
    let (rows, dim) = unit_rows(records)?;
    let k = records.len();
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];
    let theta = theta.value();

    let mut edges = Vec::new();
    for bi in (0..k).step_by(BLOCK) {
        for bj in (bi..k).step_by(BLOCK) {
            for i in bi..(bi + BLOCK).min(k) {
                let start = if bi == bj { i + 1 } else { bj };
                for j in start..(bj + BLOCK).min(k) {
                    if dot(row(i), row(j)) > theta {
                        edges.push((i, j));
                    }
                }
            }
        }
    }
    edges.sort_unstable();

    Ok(FaceGraph {
        node_ids: records.iter().map(FaceRecord::id).collect(),
        edges,
    })
}

/// Connected components of `graph`, ordered by descending size and then by
/// smallest member id. All components start out kept.
pub fn connected_components(graph: &FaceGraph) -> Vec<Component> {
    let mut uf = UnionFind::new(graph.node_count());
    for &(a, b) in &graph.edges {
        uf.union(a, b);
    }
    let mut components: Vec<Component> = uf
        .groups()
        .into_iter()
        .map(|members| {
            Component::new(
                members
                    .into_iter()
                    .map(|i| graph.node_ids[i].clone())
                    .collect(),
            )
        })
        .collect();
    sort_components(&mut components);
    components
}

pub(crate) fn sort_components(components: &mut [Component]) {
    components.sort_by(|a, b| {
        b.size()
            .cmp(&a.size())
            .then_with(|| a.min_id().cmp(&b.min_id()))
    });
}

/// True when a component of `size` falls at or below `frac * n_f`.
///
/// Evaluated as `size * den <= n_f * num` in integers.
pub fn is_pruned(size: usize, n_f: usize, frac: SizeFraction) -> bool {
    (size as u128) * (frac.denominator() as u128) <= (n_f as u128) * (frac.numerator() as u128)
}

/// Flags every component with the size rule. Components are never removed.
pub fn prune_components(
    mut components: Vec<Component>,
    n_f: usize,
    frac: SizeFraction,
) -> Vec<Component> {
    for c in &mut components {
        c.kept = !is_pruned(c.size(), n_f, frac);
    }
    components
}

/// Graph construction, components and pruning for one video.
pub fn clean_video(
    group: &VideoGroup,
    theta: SimilarityThreshold,
    frac: SizeFraction,
) -> Result<ComponentSet> {
    let graph = build_face_graph(group, theta)?;
    let components = prune_components(connected_components(&graph), group.n_f(), frac);
    Ok(ComponentSet {
        video_id: group.video_id().to_string(),
        components,
        n_f: group.n_f(),
        theta: Some(theta),
        size_fraction: Some(frac),
    })
}

/// Like [`clean_video`] but keeps every component, so the component structure
/// is available to the Face scheme without discarding any detection.
pub fn components_only(group: &VideoGroup, theta: SimilarityThreshold) -> Result<ComponentSet> {
    let graph = build_face_graph(group, theta)?;
    Ok(ComponentSet {
        video_id: group.video_id().to_string(),
        components: connected_components(&graph),
        n_f: group.n_f(),
        theta: Some(theta),
        size_fraction: None,
    })
}
