//! Cluster ensembles over a (C, T_dur) grid and the connected-triple
//! similarity (CTS) consensus.
//!
//! Each ensemble member is one partition of the same meters at the same
//! cluster count. Every cluster of every member becomes a vertex of a
//! weighted cluster graph, with Jaccard overlap as the edge weight. Two
//! clusters of the same member never share meters, so their similarity
//! comes only from common neighbours:
//!
//! ```text
//! WCT(x, y) = sum_z min(w(x, z), w(y, z))        z != x, y
//! sim(i, j) = mean over members m of
//!             1                                   if i, j share a cluster in m
//!             dc * WCT(c_m(i), c_m(j)) / WCT_max  otherwise
//! ```

use std::io::Write;

use serde::Serialize;

use crate::cache::DistanceCache;
use crate::clustering::{agglomerative_cluster, cut, Distances, Linkage, Partition};
use crate::correlation::write_square_csv;
use crate::error::{Error, Result};
use crate::ingest::FeederDataset;
use crate::segmentation::{SegmentParams, DEFAULT_MIN_POINTS};

pub const DEFAULT_DECAY: f64 = 0.8;
pub const DEFAULT_TARGET_CLUSTERS: usize = 36;

/// Cluster target 3n* for `n` meters: 36, or on small feeders the largest
/// multiple of three not above n/2.
pub fn default_target_clusters(n: usize) -> usize {
    if n >= DEFAULT_TARGET_CLUSTERS {
        DEFAULT_TARGET_CLUSTERS
    } else {
        (n / 2) / 3 * 3
    }
}

/// Knobs shared by every analysis path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisOptions {
    pub min_points: usize,
    pub linkage: Linkage,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            min_points: DEFAULT_MIN_POINTS,
            linkage: Linkage::Average,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleMember {
    pub params: SegmentParams,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    members: Vec<EnsembleMember>,
    k: usize,
}

impl Ensemble {
    pub fn new(members: Vec<EnsembleMember>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::contract("an ensemble needs at least one member"))?;
        let (n, k) = (first.partition.n(), first.partition.k());
        for m in &members {
            if m.partition.n() != n || m.partition.k() != k {
                return Err(Error::contract(format!(
                    "ensemble members disagree: ({n} meters, k={k}) vs ({} meters, k={})",
                    m.partition.n(),
                    m.partition.k()
                )));
            }
        }
        Ok(Self { members, k })
    }

    pub fn from_partitions(partitions: Vec<Partition>) -> Result<Self> {
        let dummy = SegmentParams {
            c_threshold: 0.0,
            t_dur_hours: 0.0,
            delta_t_minutes: 15,
            min_points: 0,
        };
        Self::new(
            partitions
                .into_iter()
                .map(|partition| EnsembleMember {
                    params: dummy,
                    partition,
                })
                .collect(),
        )
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.members[0].partition.n()
    }
}

/// One partition per (C, T_dur) grid cell, each cut at `3 * n_star`.
/// Members are ordered C-major.
pub fn build_ensemble(
    ds: &FeederDataset,
    c_grid: &[f64],
    t_grid: &[f64],
    n_star: usize,
    opts: &AnalysisOptions,
    cache: &DistanceCache,
) -> Result<Ensemble> {
    if c_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::config("ensemble grids must be non-empty"));
    }
    let k = 3 * n_star;
    if n_star == 0 || k > ds.len() {
        return Err(Error::contract(format!(
            "3 x n* = {k} must lie in [3, {}]",
            ds.len()
        )));
    }
    let hash = ds.content_hash();
    let mut members = Vec::with_capacity(c_grid.len() * t_grid.len());
    for &c in c_grid {
        for &t in t_grid {
            let cell = |e: Error| e.context(format!("ensemble cell C={c} kW, T_dur={t} h"));
            let params = SegmentParams::new(c, t, ds.delta_t_minutes())
                .map_err(cell)?
                .with_min_points(opts.min_points);
            let dm = cache.get_or_compute(ds, &hash, &params).map_err(cell)?;
            let dg = agglomerative_cluster(dm.as_ref(), opts.linkage).map_err(cell)?;
            let partition = cut(&dg, k).map_err(cell)?;
            members.push(EnsembleMember { params, partition });
        }
    }
    Ensemble::new(members)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterVertex {
    pub member: usize,
    pub cluster: usize,
    pub meters: Vec<usize>,
}

/// Clusters of all members with Jaccard edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterGraph {
    vertices: Vec<ClusterVertex>,
    offsets: Vec<usize>,
    weights: Vec<f64>,
}

impl ClusterGraph {
    pub fn vertices(&self) -> &[ClusterVertex] {
        &self.vertices
    }

    pub fn vertex(&self, member: usize, cluster: usize) -> usize {
        self.offsets[member] + cluster
    }

    pub fn weight(&self, x: usize, y: usize) -> f64 {
        self.weights[x * self.vertices.len() + y]
    }

    /// Normalized weighted connected-triple score for every vertex pair.
    fn wct(&self) -> Vec<f64> {
        let v = self.vertices.len();
        let mut out = vec![0.0; v * v];
        let mut max = 0.0f64;
        for x in 0..v {
            let wx = &self.weights[x * v..(x + 1) * v];
            for y in x + 1..v {
                let wy = &self.weights[y * v..(y + 1) * v];
                let mut s = 0.0;
                for z in 0..v {
                    if z != x && z != y {
                        s += wx[z].min(wy[z]);
                    }
                }
                out[x * v + y] = s;
                out[y * v + x] = s;
                max = max.max(s);
            }
        }
        if max > 0.0 {
            out.iter_mut().for_each(|s| *s /= max);
        }
        out
    }
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    // both sorted ascending
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn cluster_graph(e: &Ensemble) -> ClusterGraph {
    let mut vertices = Vec::new();
    let mut offsets = Vec::with_capacity(e.members.len());
    for (mi, m) in e.members.iter().enumerate() {
        offsets.push(vertices.len());
        for (c, meters) in m.partition.members().into_iter().enumerate() {
            vertices.push(ClusterVertex {
                member: mi,
                cluster: c,
                meters,
            });
        }
    }
    let v = vertices.len();
    let mut weights = vec![0.0; v * v];
    for x in 0..v {
        for y in x + 1..v {
            let w = jaccard(&vertices[x].meters, &vertices[y].meters);
            weights[x * v + y] = w;
            weights[y * v + x] = w;
        }
    }
    ClusterGraph {
        vertices,
        offsets,
        weights,
    }
}

/// Symmetric meter-by-meter similarity in [0, 1] with a unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    sim: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.sim[i * self.n + j]
    }

    pub fn write_csv<W: Write>(&self, writer: W, ids: &[String]) -> Result<()> {
        if ids.len() != self.n {
            return Err(Error::contract("id count does not match similarity matrix"));
        }
        write_square_csv(writer, ids, |i, j| self.get(i, j))
    }

    fn from_pair_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut sim = vec![0.0; n * n];
        for i in 0..n {
            sim[i * n + i] = 1.0;
            for j in i + 1..n {
                let s = f(i, j);
                sim[i * n + j] = s;
                sim[j * n + i] = s;
            }
        }
        Self { n, sim }
    }
}

impl Distances for SimilarityMatrix {
    fn n(&self) -> usize {
        self.n
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        1.0 - self.get(i, j)
    }
}

pub fn cts_matrix(e: &Ensemble, g: &ClusterGraph, dc: f64) -> Result<SimilarityMatrix> {
    if !(0.0..=1.0).contains(&dc) {
        return Err(Error::contract(format!("decay factor {dc} outside [0, 1]")));
    }
    let v = g.vertices.len();
    let wct = g.wct();
    let members = e.members();
    let n_members = members.len() as f64;
    Ok(SimilarityMatrix::from_pair_fn(e.n(), |i, j| {
        let mut s = 0.0;
        for (mi, m) in members.iter().enumerate() {
            let (ci, cj) = (m.partition.cluster_of(i), m.partition.cluster_of(j));
            if ci == cj {
                s += 1.0;
            } else {
                let (x, y) = (g.vertex(mi, ci), g.vertex(mi, cj));
                s += dc * wct[x * v + y];
            }
        }
        s / n_members
    }))
}

/// Fraction of members in which each pair shares a cluster.
pub fn co_association(e: &Ensemble) -> SimilarityMatrix {
    let n_members = e.members().len() as f64;
    SimilarityMatrix::from_pair_fn(e.n(), |i, j| {
        let together = e
            .members()
            .iter()
            .filter(|m| m.partition.cluster_of(i) == m.partition.cluster_of(j))
            .count();
        together as f64 / n_members
    })
}

/// Hierarchical clustering on `1 - sim`, cut at `k`.
pub fn final_partition(s: &SimilarityMatrix, k: usize, linkage: Linkage) -> Result<Partition> {
    let dg = agglomerative_cluster(s, linkage)?;
    cut(&dg, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(parts: &[&[usize]]) -> Ensemble {
        Ensemble::from_partitions(parts.iter().map(|p| Partition::from_labels(p)).collect()).unwrap()
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(jaccard(&[1, 2], &[3, 4]), 0.0);
        assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
    }

    #[test]
    fn identical_members_give_unit_edges() {
        let e = ens(&[&[0, 0, 1, 1], &[0, 0, 1, 1]]);
        let g = cluster_graph(&e);
        assert_eq!(g.weight(g.vertex(0, 0), g.vertex(1, 0)), 1.0);
        assert_eq!(g.weight(g.vertex(0, 0), g.vertex(1, 1)), 0.0);
    }

    #[test]
    fn identical_partitions() {
        let e = ens(&[&[0, 0, 1, 1, 2, 2], &[0, 0, 1, 1, 2, 2], &[0, 0, 1, 1, 2, 2]]);
        let g = cluster_graph(&e);
        let s = cts_matrix(&e, &g, 0.8).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(2, 3), 1.0);
        assert!(s.get(0, 2) <= 0.8);
        let p = final_partition(&s, 3, Linkage::Average).unwrap();
        assert_eq!(p, e.members()[0].partition);
    }

    #[test]
    fn single_member_without_triples_is_co_membership() {
        let e = ens(&[&[0, 1, 0, 2]]);
        let g = cluster_graph(&e);
        let s = cts_matrix(&e, &g, 0.8).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let same = e.members()[0].partition.cluster_of(i)
                    == e.members()[0].partition.cluster_of(j);
                assert_eq!(s.get(i, j), if same { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn decay_out_of_range() {
        let e = ens(&[&[0, 1]]);
        let g = cluster_graph(&e);
        assert!(cts_matrix(&e, &g, 1.5).is_err());
        assert!(cts_matrix(&e, &g, -0.1).is_err());
    }

    #[test]
    fn target_cluster_rule() {
        assert_eq!(default_target_clusters(1100), 36);
        assert_eq!(default_target_clusters(36), 36);
        assert_eq!(default_target_clusters(30), 15);
        assert_eq!(default_target_clusters(20), 9);
    }

    #[test]
    fn mismatched_members_rejected() {
        let a = Partition::from_labels(&[0, 1, 1]);
        let b = Partition::from_labels(&[0, 1, 2]);
        assert!(Ensemble::from_partitions(vec![a, b]).is_err());
    }
}
