//! Pearson correlation over selected segments and the correlation distance
//! matrix `1 - |PCC|` used for clustering.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FeederDataset;
use crate::segmentation::{joint_from_masks, MeterMasks, SegmentParams, SegmentSet};

/// Pearson coefficient with means taken over the given samples.
///
/// Returns `Ok(None)` when either input has zero variance.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::contract(format!(
            "pcc inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::contract("pcc needs at least two samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// `1 - |p|`, or 1 for an undefined coefficient.
pub fn correlation_distance(p: Option<f64>) -> f64 {
    match p {
        Some(v) => 1.0 - v.abs(),
        None => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairMeta {
    pub total_points: usize,
    pub fallback_used: bool,
    pub degenerate: bool,
}

/// Symmetric correlation distances between all meters of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    dist: Vec<f64>,
    pcc: Vec<Option<f64>>,
    meta: Vec<PairMeta>,
}

/// Position of pair `i < j` in a condensed upper-triangle array.
pub(crate) fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl DistanceMatrix {
    /// Assembles a matrix from condensed (i < j, row-major) pair results.
    pub fn from_pairs(ids: Vec<String>, pairs: Vec<(Option<f64>, PairMeta)>) -> Result<Self> {
        let n = ids.len();
        if pairs.len() != n * n.saturating_sub(1) / 2 {
            return Err(Error::contract("pair count does not match meter count"));
        }
        let mut dist = vec![0.0; n * n];
        let mut pcc = vec![Some(1.0); n * n];
        let mut meta = Vec::with_capacity(pairs.len());
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                let (p, m) = pairs[k];
                let d = correlation_distance(p);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
                pcc[i * n + j] = p;
                pcc[j * n + i] = p;
                meta.push(m);
                k += 1;
            }
        }
        Ok(Self {
            ids,
            dist,
            pcc,
            meta,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n() + j]
    }

    pub fn pcc(&self, i: usize, j: usize) -> Option<f64> {
        self.pcc[i * self.n() + j]
    }

    pub fn meta(&self, i: usize, j: usize) -> Option<PairMeta> {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => Some(self.meta[condensed_index(self.n(), i, j)]),
            std::cmp::Ordering::Greater => Some(self.meta[condensed_index(self.n(), j, i)]),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn fallback_count(&self) -> usize {
        self.meta.iter().filter(|m| m.fallback_used).count()
    }

    pub fn degenerate_count(&self) -> usize {
        self.meta.iter().filter(|m| m.degenerate).count()
    }

    /// Row-major `n x n` distances.
    pub fn as_slice(&self) -> &[f64] {
        &self.dist
    }

    pub(crate) fn condensed(&self) -> impl Iterator<Item = (Option<f64>, PairMeta)> + '_ {
        let n = self.n();
        (0..n)
            .flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
            .zip(&self.meta)
            .map(move |((i, j), m)| (self.pcc(i, j), *m))
    }

    /// Square CSV with a meter-id header row and a leading id column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_square_csv(writer, &self.ids, |i, j| self.get(i, j))
    }
}

pub(crate) fn write_square_csv<W: Write>(
    writer: W,
    ids: &[String],
    value: impl Fn(usize, usize) -> f64,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["meter_id".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend((0..ids.len()).map(|j| value(i, j).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Segment sets for every meter pair `(i, j)`, `i < j`.
pub fn pair_segments(ds: &FeederDataset, p: &SegmentParams) -> Vec<(usize, usize, SegmentSet)> {
    let masks: Vec<MeterMasks> = ds
        .meters()
        .iter()
        .map(|m| MeterMasks::new(m, p.c_threshold))
        .collect();
    let n = ds.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    pairs
        .into_par_iter()
        .map(|(i, j)| (i, j, joint_from_masks(&masks[i], &masks[j], p)))
        .collect()
}

/// Correlation distance between every pair of meters over their jointly
/// selected low-power segments.
pub fn pairwise_distance_matrix(ds: &FeederDataset, p: &SegmentParams) -> Result<DistanceMatrix> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::contract(format!(
            "distance matrix needs at least 2 meters, got {n}"
        )));
    }
    if p.delta_t_minutes != ds.delta_t_minutes() {
        return Err(Error::contract(format!(
            "segment params use a {}-minute interval but the dataset uses {}",
            p.delta_t_minutes,
            ds.delta_t_minutes()
        )));
    }
    let masks: Vec<MeterMasks> = ds
        .meters()
        .iter()
        .map(|m| MeterMasks::new(m, p.c_threshold))
        .collect();
    let volts: Vec<Vec<f64>> = ds
        .meters()
        .iter()
        .map(|m| m.voltage.iter().map(|v| v.unwrap_or(f64::NAN)).collect())
        .collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();

    let results: Vec<(Option<f64>, PairMeta)> = pairs
        .into_par_iter()
        .map(|(i, j)| {
            let seg = joint_from_masks(&masks[i], &masks[j], p);
            let (x, y): (Vec<f64>, Vec<f64>) =
                seg.indices().map(|t| (volts[i][t], volts[j][t])).unzip();
            let r = if x.len() >= 2 {
                pcc(&x, &y).expect("equal-length inputs")
            } else {
                None
            };
            let meta = PairMeta {
                total_points: seg.total_points,
                fallback_used: seg.fallback_used,
                degenerate: r.is_none(),
            };
            (r, meta)
        })
        .collect();

    DistanceMatrix::from_pairs(ds.meter_ids(), results)
}
