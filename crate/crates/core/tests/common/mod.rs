#![allow(dead_code)]

use chrono::NaiveDate;
use phaseid::clustering::Merge;
use phaseid::{Dendrogram, FeederDataset, Linkage, MeterSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dataset(meters: Vec<MeterSeries>) -> FeederDataset {
    let t = meters.first().map_or(0, |m| m.len());
    let start = NaiveDate::from_ymd_opt(2024, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    FeederDataset::new(FeederDataset::uniform_axis(start, 15, t), 15, meters).unwrap()
}

/// Meters with uniform random power in [0, 3) kW and voltage near 1 p.u.
pub fn random_dataset(seed: u64, n: usize, t: usize, gap_rate: f64) -> FeederDataset {
    let mut r = rng(seed);
    let meters = (0..n)
        .map(|i| {
            let mut power = Vec::with_capacity(t);
            let mut volts = Vec::with_capacity(t);
            for _ in 0..t {
                if r.random::<f64>() < gap_rate {
                    power.push(None);
                    volts.push(None);
                } else {
                    power.push(Some(3.0 * r.random::<f64>()));
                    volts.push(Some(1.0 + 0.02 * (r.random::<f64>() - 0.5)));
                }
            }
            MeterSeries::new(format!("m{i:02}"), power, volts)
        })
        .collect();
    dataset(meters)
}

/// Textbook Pearson coefficient from raw sums of products.
pub fn naive_pcc(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for k in 0..x.len() {
        num += (x[k] - mx) * (y[k] - my);
        vx += (x[k] - mx).powi(2);
        vy += (y[k] - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(num / (vx * vy).sqrt())
    }
}

/// Random symmetric matrix with zero diagonal and entries in (0, 1).
pub fn random_matrix(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = r.random::<f64>();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Same set partition, ignoring cluster numbering.
pub fn same_grouping(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

/// Recomputes every cluster-pair linkage from the original matrix at each
/// step. Pairs are scanned in (smaller slot, larger slot) order, where a
/// cluster's slot is its smallest member; the first strict minimum wins.
pub fn brute_force(d: &[f64], n: usize, linkage: Linkage) -> Dendrogram {
    let mut clusters: Vec<(Vec<usize>, usize)> = (0..n).map(|i| (vec![i], i)).collect();
    let mut merges = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for step in 0..n - 1 {
        clusters.sort_by_key(|c| c.0[0]);
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let pairs = clusters[a]
                    .0
                    .iter()
                    .flat_map(|&i| clusters[b].0.iter().map(move |&j| d[i * n + j]));
                let v = match linkage {
                    Linkage::Single => pairs.fold(f64::INFINITY, f64::min),
                    Linkage::Complete => pairs.fold(f64::NEG_INFINITY, f64::max),
                    Linkage::Average => {
                        let all: Vec<f64> = pairs.collect();
                        all.iter().sum::<f64>() / all.len() as f64
                    }
                };
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        let (v, a, b) = best;
        let height = v.max(last);
        last = height;
        let mut joined = clusters[a].0.clone();
        joined.extend(&clusters[b].0);
        joined.sort_unstable();
        merges.push(Merge {
            a: clusters[a].1,
            b: clusters[b].1,
            height,
            size: joined.len(),
        });
        clusters[a] = (joined, n + step);
        clusters.remove(b);
    }
    Dendrogram {
        n_leaves: n,
        linkage,
        merges,
    }
}

pub fn assert_same_dendrogram(got: &Dendrogram, want: &Dendrogram, tol: f64) {
    assert_eq!(got.merges.len(), want.merges.len());
    for (g, w) in got.merges.iter().zip(&want.merges) {
        assert_eq!((g.a, g.b, g.size), (w.a, w.b, w.size), "{got:?} vs {want:?}");
        assert!((g.height - w.height).abs() <= tol, "{} vs {}", g.height, w.height);
    }
}

