//! Agglomerative hierarchical clustering on a precomputed distance matrix.
//!
//! Node ids follow the scipy linkage convention: leaves are `0..n` and the
//! cluster created by merge `s` gets id `n + s`. Among equal-height
//! candidate pairs the one whose smallest member indices are
//! lexicographically smallest merges first.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::correlation::DistanceMatrix;
use crate::error::{Error, Result};

/// Anything that can serve as a square, symmetric distance matrix.
pub trait Distances {
    fn n(&self) -> usize;
    fn distance(&self, i: usize, j: usize) -> f64;
}

impl Distances for DistanceMatrix {
    fn n(&self) -> usize {
        DistanceMatrix::n(self)
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }
}

/// Plain row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::contract(format!(
                "square matrix of order {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = (0..n * n).map(|k| f(k / n, k % n)).collect();
        Self { n, values }
    }
}

impl Distances for SquareMatrix {
    fn n(&self) -> usize {
        self.n
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        })
    }
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(Error::config(format!("unknown linkage '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub linkage: Linkage,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dendrogram serializes")
    }
}

/// Flat clustering of `n` meters into `k` non-empty clusters.
///
/// Cluster ids are canonical: clusters are numbered in order of their
/// smallest member index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    k: usize,
    assignment: Vec<usize>,
}

impl Partition {
    /// Relabels arbitrary cluster labels into canonical ids.
    pub fn from_labels<T: Ord + Copy>(labels: &[T]) -> Self {
        let mut map: BTreeMap<T, usize> = BTreeMap::new();
        let mut next = 0;
        let assignment = labels
            .iter()
            .map(|l| {
                *map.entry(*l).or_insert_with(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Self { k: next, assignment }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    /// Member indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// True when every cluster of `self` lies inside one cluster of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        if self.n() != coarser.n() {
            return false;
        }
        let mut parent = vec![usize::MAX; self.k];
        for (i, &c) in self.assignment.iter().enumerate() {
            let p = coarser.assignment[i];
            if parent[c] == usize::MAX {
                parent[c] = p;
            } else if parent[c] != p {
                return false;
            }
        }
        true
    }
}

fn validate<D: Distances>(d: &D) -> Result<()> {
    let n = d.n();
    for i in 0..n {
        if d.distance(i, i) != 0.0 {
            return Err(Error::contract(format!("non-zero diagonal at {i}")));
        }
        for j in i + 1..n {
            let a = d.distance(i, j);
            let b = d.distance(j, i);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::contract(format!("non-finite distance at ({i}, {j})")));
            }
            if a != b {
                return Err(Error::contract(format!(
                    "asymmetric distance at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

/// Bottom-up merging under `linkage`; `n - 1` merges for `n` points.
pub fn agglomerative_cluster<D: Distances>(d: &D, linkage: Linkage) -> Result<Dendrogram> {
    validate(d)?;
    let n = d.n();
    if n == 0 {
        return Err(Error::contract("cannot cluster an empty matrix"));
    }
    // Working matrix; slot s holds the cluster whose smallest member is s.
    let mut dm: Vec<f64> = (0..n * n).map(|k| d.distance(k / n, k % n)).collect();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node = (0..n).collect::<Vec<_>>();
    // nearest partner j > i for each active row i
    let mut nn = vec![usize::MAX; n];
    let mut nn_d = vec![f64::INFINITY; n];

    let rescan = |i: usize, dm: &[f64], active: &[bool], nn: &mut [usize], nn_d: &mut [f64]| {
        nn[i] = usize::MAX;
        nn_d[i] = f64::INFINITY;
        for j in i + 1..n {
            if active[j] && dm[i * n + j] < nn_d[i] {
                nn_d[i] = dm[i * n + j];
                nn[i] = j;
            }
        }
    };
    for i in 0..n {
        rescan(i, &dm, &active, &mut nn, &mut nn_d);
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut last_height = f64::NEG_INFINITY;
    for step in 0..n.saturating_sub(1) {
        let mut lo = usize::MAX;
        let mut best = f64::INFINITY;
        for i in 0..n {
            if active[i] && nn[i] != usize::MAX && nn_d[i] < best {
                best = nn_d[i];
                lo = i;
            }
        }
        let hi = nn[lo];
        // average-linkage updates can land an ulp below the previous merge
        let height = best.max(last_height);
        last_height = height;
        merges.push(Merge {
            a: node[lo],
            b: node[hi],
            height,
            size: size[lo] + size[hi],
        });

        for k in 0..n {
            if !active[k] || k == lo || k == hi {
                continue;
            }
            let dl = dm[lo * n + k];
            let dh = dm[hi * n + k];
            let v = match linkage {
                Linkage::Single => dl.min(dh),
                Linkage::Complete => dl.max(dh),
                Linkage::Average => {
                    (size[lo] as f64 * dl + size[hi] as f64 * dh) / (size[lo] + size[hi]) as f64
                }
            };
            dm[lo * n + k] = v;
            dm[k * n + lo] = v;
        }
        active[hi] = false;
        size[lo] += size[hi];
        node[lo] = n + step;

        rescan(lo, &dm, &active, &mut nn, &mut nn_d);
        for k in 0..lo {
            if !active[k] {
                continue;
            }
            if nn[k] == lo || nn[k] == hi {
                rescan(k, &dm, &active, &mut nn, &mut nn_d);
            } else {
                let v = dm[k * n + lo];
                if v < nn_d[k] || (v == nn_d[k] && lo < nn[k]) {
                    nn_d[k] = v;
                    nn[k] = lo;
                }
            }
        }
        for k in lo + 1..hi {
            if active[k] && nn[k] == hi {
                rescan(k, &dm, &active, &mut nn, &mut nn_d);
            }
        }
    }

    Ok(Dendrogram {
        n_leaves: n,
        linkage,
        merges,
    })
}

/// Undoes the last `k - 1` merges.
pub fn cut(dg: &Dendrogram, k: usize) -> Result<Partition> {
    let n = dg.n_leaves;
    if k == 0 || k > n {
        return Err(Error::contract(format!(
            "cluster count {k} outside [1, {n}]"
        )));
    }
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (s, m) in dg.merges.iter().take(n - k).enumerate() {
        let new = n + s;
        let ra = find(&mut parent, m.a);
        let rb = find(&mut parent, m.b);
        parent[ra] = new;
        parent[rb] = new;
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    Ok(Partition::from_labels(&roots))
}

/// Partitions at `k = 3, 6, ..., 3 * n_max`.
pub fn cluster_sweep(dg: &Dendrogram, n_max: usize) -> Result<Vec<Partition>> {
    if n_max == 0 || 3 * n_max > dg.n_leaves {
        return Err(Error::contract(format!(
            "3 x n_max = {} must lie in [3, {}]",
            3 * n_max,
            dg.n_leaves
        )));
    }
    (1..=n_max).map(|m| cut(dg, 3 * m)).collect()
}
