//! Majority-vote phase labeling of clusters and accuracy scoring.

use std::io::Write;

use serde::Serialize;

use crate::clustering::Partition;
use crate::error::{Error, Result};
use crate::phase::Phase;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterVote {
    pub phase: Phase,
    /// Votes for A, B, C.
    pub votes: [usize; 3],
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseAssignment {
    pub cluster_of: Vec<usize>,
    pub predicted: Vec<Phase>,
    pub clusters: Vec<ClusterVote>,
}

impl PhaseAssignment {
    pub fn ambiguous_clusters(&self) -> usize {
        self.clusters.iter().filter(|c| c.ambiguous).count()
    }
}

/// Labels each cluster with its most common recorded phase; ties go to the
/// earliest phase in A, B, C order and are flagged.
pub fn majority_vote(p: &Partition, labels: &[Option<Phase>]) -> Result<PhaseAssignment> {
    if labels.len() != p.n() {
        return Err(Error::contract(format!(
            "{} labels for {} meters",
            labels.len(),
            p.n()
        )));
    }
    let mut votes = vec![[0usize; 3]; p.k()];
    for (i, l) in labels.iter().enumerate() {
        let l = l.ok_or_else(|| {
            Error::contract(format!(
                "meter {i} has no recorded phase; use the ensemble workflow for unlabeled meters"
            ))
        })?;
        votes[p.cluster_of(i)][l.index()] += 1;
    }
    let clusters: Vec<ClusterVote> = votes
        .into_iter()
        .map(|v| {
            let top = *v.iter().max().expect("three phases");
            let winners: Vec<usize> = (0..3).filter(|&i| v[i] == top).collect();
            ClusterVote {
                phase: Phase::from_index(winners[0]).expect("index < 3"),
                votes: v,
                ambiguous: winners.len() > 1,
            }
        })
        .collect();
    let predicted = p.assignment().iter().map(|&c| clusters[c].phase).collect();
    Ok(PhaseAssignment {
        cluster_of: p.assignment().to_vec(),
        predicted,
        clusters,
    })
}

/// Counts laid out per phase, plus the overall accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub n_total: usize,
    pub n_validated: usize,
    /// Mismatches against the recorded labels that a correction confirms.
    pub n_corrected: usize,
    /// Reference label counts per phase (A, B, C).
    pub recorded: [usize; 3],
    pub predicted: [usize; 3],
    pub accuracy: f64,
}

impl AccuracyReport {
    /// Plain-text table: per-phase recorded/predicted rows, then totals.
    pub fn table(&self) -> String {
        let mut s = String::new();
        for ph in Phase::ALL {
            s += &format!(
                "Phase {ph}\n  Recorded phase   {:>6}\n  Predicted phase  {:>6}\n",
                self.recorded[ph.index()],
                self.predicted[ph.index()]
            );
        }
        s += &format!("Total (N_T)        {:>6}\n", self.n_total);
        s += &format!("Corrected (N_c)    {:>6}\n", self.n_corrected);
        s += &format!("Validated (N_v)    {:>6}\n", self.n_validated);
        s += &format!("Accuracy           {:>6.1}%\n", 100.0 * self.accuracy);
        s
    }
}

fn tally(xs: impl Iterator<Item = Phase>) -> [usize; 3] {
    let mut c = [0; 3];
    for x in xs {
        c[x.index()] += 1;
    }
    c
}

/// Fraction of meters whose predicted phase equals `truth`.
pub fn score(pa: &PhaseAssignment, truth: &[Phase]) -> Result<AccuracyReport> {
    if truth.len() != pa.predicted.len() {
        return Err(Error::contract(format!(
            "truth covers {} meters, assignment has {}",
            truth.len(),
            pa.predicted.len()
        )));
    }
    let n_validated = pa.predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    let n_total = truth.len();
    Ok(AccuracyReport {
        n_total,
        n_validated,
        n_corrected: 0,
        recorded: tally(truth.iter().copied()),
        predicted: tally(pa.predicted.iter().copied()),
        accuracy: if n_total == 0 {
            0.0
        } else {
            n_validated as f64 / n_total as f64
        },
    })
}

/// Scores against recorded labels, crediting mismatches that a field
/// correction confirms: accuracy = (N_c + N_v) / N_T.
pub fn score_with_corrections(
    pa: &PhaseAssignment,
    recorded: &[Phase],
    corrections: &[Option<Phase>],
) -> Result<AccuracyReport> {
    if corrections.len() != recorded.len() {
        return Err(Error::contract("corrections must cover every meter"));
    }
    let mut report = score(pa, recorded)?;
    report.n_corrected = pa
        .predicted
        .iter()
        .zip(recorded)
        .zip(corrections)
        .filter(|((p, r), c)| p != r && c.as_ref() == Some(*p))
        .count();
    report.accuracy = if report.n_total == 0 {
        0.0
    } else {
        (report.n_corrected + report.n_validated) as f64 / report.n_total as f64
    };
    Ok(report)
}

/// `meter_id,cluster,predicted_phase,recorded_phase,match`
pub fn write_assignment_csv<W: Write>(
    writer: W,
    meter_ids: &[String],
    pa: &PhaseAssignment,
    recorded: &[Option<Phase>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["meter_id", "cluster", "predicted_phase", "recorded_phase", "match"])?;
    for (i, id) in meter_ids.iter().enumerate() {
        let rec = recorded[i].map(|p| p.to_string()).unwrap_or_default();
        let matched = recorded[i] == Some(pa.predicted[i]);
        w.write_record([
            id.as_str(),
            &pa.cluster_of[i].to_string(),
            pa.predicted[i].as_str(),
            &rec,
            if matched { "true" } else { "false" },
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
