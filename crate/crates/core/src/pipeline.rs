//! End-to-end workflows built from the individual stages.

use std::sync::Arc;

use serde::Serialize;

use crate::cache::DistanceCache;
use crate::clustering::{agglomerative_cluster, cluster_sweep, cut, Dendrogram, Partition};
use crate::correlation::DistanceMatrix;
use crate::ensemble::{
    build_ensemble, cluster_graph, co_association, cts_matrix, final_partition, AnalysisOptions, Ensemble,
    SimilarityMatrix,
};
use crate::error::{Error, Result};
use crate::ingest::{drop_sparse_meters, normalize_voltages, DropSummary, FeederDataset};
use crate::labeling::{majority_vote, score, AccuracyReport, PhaseAssignment};
use crate::phase::Phase;
use crate::segmentation::SegmentParams;

/// Drops sparse meters, then converts voltages to per-unit.
pub fn prepare(ds: &FeederDataset, max_missing: f64) -> Result<(FeederDataset, DropSummary)> {
    let (kept, summary) = drop_sparse_meters(ds, max_missing)?;
    if kept.is_empty() {
        log::warn!("every meter exceeded the missing-data limit {max_missing}");
        return Ok((kept, summary));
    }
    let kept = if kept.is_normalized() {
        kept
    } else {
        normalize_voltages(&kept)?
    };
    Ok((kept, summary))
}

/// `lo, lo + step, ...` up to and including `hi`, rounded to 1e-9.
pub fn grid_range(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::config(format!("invalid grid {lo}:{step}:{hi}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGrid {
    pub c_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// Cluster counts 3, 6, ..., 3 * n_max are evaluated.
    pub n_max: usize,
}

impl Default for SweepGrid {
    /// C in [0, 2.0] kW by 0.1, T_dur in [0, 3.0] h by 0.5, k up to 36.
    fn default() -> Self {
        Self {
            c_grid: grid_range(0.0, 2.0, 0.1).expect("static grid"),
            t_grid: grid_range(0.0, 3.0, 0.5).expect("static grid"),
            n_max: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub c_kw: f64,
    pub t_dur_h: f64,
    pub k: usize,
    pub accuracy: f64,
    pub n_validated: usize,
    pub fallback_pairs: usize,
    pub degenerate_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Highest accuracy; ties go to the (C, T_dur) cell with the higher mean
    /// accuracy over k, then the smaller k, then grid order.
    pub fn best(&self) -> Option<&SweepRow> {
        let cell_mean = |r: &SweepRow| {
            let same: Vec<f64> = self
                .rows
                .iter()
                .filter(|o| o.c_kw == r.c_kw && o.t_dur_h == r.t_dur_h)
                .map(|o| o.accuracy)
                .collect();
            same.iter().sum::<f64>() / same.len() as f64
        };
        let mut best: Option<(&SweepRow, f64)> = None;
        for r in &self.rows {
            let mean = cell_mean(r);
            let better = match best {
                None => true,
                Some((b, bm)) => {
                    r.accuracy > b.accuracy
                        || (r.accuracy == b.accuracy && (mean > bm || (mean == bm && r.k < b.k)))
                }
            };
            if better {
                best = Some((r, mean));
            }
        }
        best.map(|b| b.0)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

fn check_labels(ds: &FeederDataset, labels: &[Option<Phase>], truth: &[Phase]) -> Result<()> {
    if labels.len() != ds.len() || truth.len() != ds.len() {
        return Err(Error::contract(format!(
            "{} meters but {} labels and {} reference phases",
            ds.len(),
            labels.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Labels clusters by majority vote over `labels` and scores against
/// `truth`, for every (C, T_dur, k) combination of the grid.
pub fn sweep(
    ds: &FeederDataset,
    labels: &[Option<Phase>],
    truth: &[Phase],
    grid: &SweepGrid,
    opts: &AnalysisOptions,
    cache: &DistanceCache,
) -> Result<SweepResult> {
    check_labels(ds, labels, truth)?;
    if grid.c_grid.is_empty() || grid.t_grid.is_empty() {
        return Err(Error::config("sweep grids must be non-empty"));
    }
    let hash = ds.content_hash();
    let mut rows = Vec::new();
    for &c in &grid.c_grid {
        for &t in &grid.t_grid {
            let cell = |e: Error| e.context(format!("sweep cell C={c} kW, T_dur={t} h"));
            let params = SegmentParams::new(c, t, ds.delta_t_minutes())
                .map_err(cell)?
                .with_min_points(opts.min_points);
            let dm = cache.get_or_compute(ds, &hash, &params).map_err(cell)?;
            let dg = agglomerative_cluster(dm.as_ref(), opts.linkage).map_err(cell)?;
            for p in cluster_sweep(&dg, grid.n_max).map_err(cell)? {
                let pa = majority_vote(&p, labels)?;
                let r = score(&pa, truth)?;
                rows.push(SweepRow {
                    c_kw: c,
                    t_dur_h: t,
                    k: p.k(),
                    accuracy: r.accuracy,
                    n_validated: r.n_validated,
                    fallback_pairs: dm.fallback_count(),
                    degenerate_pairs: dm.degenerate_count(),
                });
            }
        }
    }
    Ok(SweepResult { rows })
}

/// Cluster count for a single identification run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClusterCount {
    Fixed(usize),
    /// Try k = 3..3 * n_max and keep the most accurate (smallest k on ties).
    Best(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct Identification {
    pub params: SegmentParams,
    pub k: usize,
    pub partition: Partition,
    pub assignment: PhaseAssignment,
    pub report: AccuracyReport,
    #[serde(skip)]
    pub dendrogram: Dendrogram,
    #[serde(skip)]
    pub distances: Arc<DistanceMatrix>,
}

/// Segmentation, correlation, clustering and majority vote at one (C, T_dur).
pub fn identify(
    ds: &FeederDataset,
    params: &SegmentParams,
    count: ClusterCount,
    labels: &[Option<Phase>],
    truth: &[Phase],
    opts: &AnalysisOptions,
    cache: &DistanceCache,
) -> Result<Identification> {
    check_labels(ds, labels, truth)?;
    let params = params.with_min_points(opts.min_points);
    let dm = cache.get_or_compute(ds, &ds.content_hash(), &params)?;
    let dg = agglomerative_cluster(dm.as_ref(), opts.linkage)?;
    let candidates = match count {
        ClusterCount::Fixed(k) => vec![cut(&dg, k)?],
        ClusterCount::Best(n_max) => cluster_sweep(&dg, n_max)?,
    };
    let mut best: Option<(Partition, PhaseAssignment, AccuracyReport)> = None;
    for p in candidates {
        let pa = majority_vote(&p, labels)?;
        let r = score(&pa, truth)?;
        if best.as_ref().is_none_or(|b| r.accuracy > b.2.accuracy) {
            best = Some((p, pa, r));
        }
    }
    let (partition, assignment, report) = best.expect("at least one candidate");
    Ok(Identification {
        params,
        k: partition.k(),
        partition,
        assignment,
        report,
        dendrogram: dg,
        distances: dm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub c_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// Final and per-member cluster count is 3 * n_star.
    pub n_star: usize,
    pub decay: f64,
    pub options: AnalysisOptions,
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub ensemble: Ensemble,
    pub similarity: SimilarityMatrix,
    pub partition: Partition,
}

/// Ensemble over the grid, CTS consensus, final clustering at 3 * n_star.
pub fn run_ensemble(ds: &FeederDataset, cfg: &EnsembleConfig, cache: &DistanceCache) -> Result<EnsembleOutcome> {
    let ensemble = build_ensemble(ds, &cfg.c_grid, &cfg.t_grid, cfg.n_star, &cfg.options, cache)?;
    let graph = cluster_graph(&ensemble);
    let similarity = cts_matrix(&ensemble, &graph, cfg.decay)?;
    let partition = final_partition(&similarity, ensemble.k(), cfg.options.linkage)?;
    Ok(EnsembleOutcome {
        ensemble,
        similarity,
        partition,
    })
}

/// Same as [`run_ensemble`] with the plain co-association consensus.
pub fn run_co_association(
    ds: &FeederDataset,
    cfg: &EnsembleConfig,
    cache: &DistanceCache,
) -> Result<EnsembleOutcome> {
    let ensemble = build_ensemble(ds, &cfg.c_grid, &cfg.t_grid, cfg.n_star, &cfg.options, cache)?;
    let similarity = co_association(&ensemble);
    let partition = final_partition(&similarity, ensemble.k(), cfg.options.linkage)?;
    Ok(EnsembleOutcome {
        ensemble,
        similarity,
        partition,
    })
}

/// Scores unlabeled clusters: each cluster takes the majority of the
/// withheld reference phases of its members.
pub fn purity_score(p: &Partition, truth: &[Phase]) -> Result<(PhaseAssignment, AccuracyReport)> {
    let labels: Vec<Option<Phase>> = truth.iter().copied().map(Some).collect();
    let pa = majority_vote(p, &labels)?;
    let r = score(&pa, truth)?;
    Ok((pa, r))
}
