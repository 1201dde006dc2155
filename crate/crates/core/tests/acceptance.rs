//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero when any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use phaseid::circuit::{default_load_bins, LoadBin, DEFAULT_BANDS};
use phaseid::clustering::SquareMatrix;
use phaseid::ensemble::{AnalysisOptions, DEFAULT_DECAY};
use phaseid::ingest::{load_meter_csv, write_meter_csv, IngestConfig};
use phaseid::pipeline::{
    grid_range, identify, prepare, purity_score, run_co_association, run_ensemble, sweep, ClusterCount,
    EnsembleConfig, SweepGrid,
};
use phaseid::{
    agglomerative_cluster, cut, generate_synthetic_feeder, joint_segments, monte_carlo_pcc, pairwise_distance_matrix,
    ConnectionType, DistanceCache, FeederDataset, Linkage, MonteCarloConfig, Partition, Phase, SecondaryCircuit,
    SegmentParams, SyntheticFeederConfig,
};
use rand::seq::SliceRandom;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(cond: bool, what: impl Into<String>, failures: &mut Vec<String>) {
    if !cond {
        failures.push(what.into());
    }
}

fn finish(failures: Vec<String>, detail: String) -> Outcome {
    if failures.is_empty() {
        Outcome { pass: true, detail }
    } else {
        Outcome {
            pass: false,
            detail: format!("{detail}; failed: {}", failures.join("; ")),
        }
    }
}

fn correlation_oracle() -> Outcome {
    let start = Instant::now();
    let ds = random_dataset(2024, 10, 200, 0.05);
    let p = SegmentParams::new(1.0, 0.5, 15).unwrap().with_min_points(20);
    let dm = pairwise_distance_matrix(&ds, &p).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        for j in 0..10 {
            let want = if i == j {
                0.0
            } else {
                let (a, b) = (ds.meter(i.min(j)), ds.meter(i.max(j)));
                let seg = joint_segments(a, b, &p);
                let x: Vec<f64> = seg.indices().map(|t| a.voltage[t].unwrap()).collect();
                let y: Vec<f64> = seg.indices().map(|t| b.voltage[t].unwrap()).collect();
                naive_pcc(&x, &y).map_or(1.0, |r| 1.0 - r.abs())
            };
            worst = worst.max((dm.get(i, j) - want).abs());
        }
    }
    let elapsed = start.elapsed();
    let mut f = Vec::new();
    check(worst <= 1e-12, format!("max deviation {worst:e} > 1e-12"), &mut f);
    check(elapsed < Duration::from_secs(1), format!("runtime {elapsed:?} >= 1 s"), &mut f);
    finish(f, format!("max |diff| = {worst:.1e}, {elapsed:.2?}"))
}

fn circuit_monte_carlo() -> Outcome {
    let start = Instant::now();
    let c = SecondaryCircuit::of_type(ConnectionType::InParallel, 0.01, 0.05, 0.05).unwrap();
    let cfg = MonteCarloConfig {
        band: 0.2,
        samples_per_bin: 10_000,
        bins: default_load_bins(),
        seed: 42,
        tied_loads: false,
    };
    let rows = monte_carlo_pcc(&c, &cfg).unwrap();
    let elapsed = start.elapsed();
    let get = |lo: f64, hi: f64| {
        rows.iter()
            .find(|r| r.bin == LoadBin { lo, hi })
            .and_then(|r| r.pcc)
            .expect("bin present")
    };
    let (low, high) = (get(0.0, 1.0), get(5.0, 15.0));
    let series: Vec<f64> = rows.iter().map(|r| r.pcc.unwrap()).collect();
    let mut f = Vec::new();
    check(high < 0.4, format!("high-load PCC {high:.3} >= 0.4"), &mut f);
    check(low > 0.9, format!("low-load PCC {low:.3} <= 0.9"), &mut f);
    check(
        series.windows(2).all(|w| w[1] <= w[0]),
        format!("PCC not non-increasing over bins: {series:.3?}"),
        &mut f,
    );
    check(elapsed < Duration::from_secs(60), format!("runtime {elapsed:?} >= 60 s"), &mut f);

    // diagnostic only: which bands would meet both bounds
    let meeting: Vec<f64> = DEFAULT_BANDS
        .iter()
        .copied()
        .filter(|&band| {
            let r = monte_carlo_pcc(&c, &MonteCarloConfig { band, ..cfg.clone() }).unwrap();
            let p: Vec<f64> = r.iter().map(|b| b.pcc.unwrap()).collect();
            p[0] > 0.9 && p[p.len() - 1] < 0.4 && p.windows(2).all(|w| w[1] <= w[0])
        })
        .collect();
    finish(
        f,
        format!("band 0.2 V per-bin PCC {series:.3?}, {elapsed:.2?}; bands meeting both bounds: {meeting:?} V"),
    )
}

fn prepared(cfg: &SyntheticFeederConfig) -> (FeederDataset, Vec<Phase>, f64) {
    let feeder = generate_synthetic_feeder(cfg).unwrap();
    let powers: Vec<f64> = feeder
        .dataset
        .meters()
        .iter()
        .flat_map(|m| m.power.iter().flatten().copied())
        .collect();
    let mean_kw = powers.iter().sum::<f64>() / powers.len() as f64;
    let (ds, summary) = prepare(&feeder.dataset, 0.8).unwrap();
    assert!(summary.removed.is_empty());
    (ds, feeder.truth_phases(), mean_kw)
}

fn case_one(cache: &DistanceCache) -> Outcome {
    let start = Instant::now();
    let cfg = SyntheticFeederConfig::default();
    let (ds, truth, _) = prepared(&cfg);
    let res = sweep(
        &ds,
        &ds.recorded_phases(),
        &truth,
        &SweepGrid::default(),
        &AnalysisOptions::default(),
        cache,
    )
    .unwrap();
    let best = res.best().unwrap().clone();
    let elapsed = start.elapsed();
    let mut f = Vec::new();
    check(ds.len() >= 90, "fewer than 90 meters", &mut f);
    check(best.accuracy >= 0.98, format!("best accuracy {:.4} < 0.98", best.accuracy), &mut f);
    check(
        best.c_kw > 0.4 && best.t_dur_h > 0.5,
        format!("argmax at C={} kW, T_dur={} h", best.c_kw, best.t_dur_h),
        &mut f,
    );
    check(elapsed < Duration::from_secs(300), format!("runtime {elapsed:?} >= 5 min"), &mut f);
    finish(
        f,
        format!(
            "{} meters, {} grid rows, best {:.1}% at C={} kW T_dur={} h k={}, {elapsed:.1?}",
            ds.len(),
            res.rows.len(),
            100.0 * best.accuracy,
            best.c_kw,
            best.t_dur_h,
            best.k
        ),
    )
}

fn segmentation_ablation() -> Outcome {
    let mut f = Vec::new();
    let mut notes = Vec::new();
    let mut strict = false;
    for seed in [7, 8] {
        let cfg = SyntheticFeederConfig {
            load_scale: 2.3,
            seed,
            ..Default::default()
        };
        let (ds, truth, mean_kw) = prepared(&cfg);
        let labels = ds.recorded_phases();
        let cache = DistanceCache::in_memory();
        let opts = AnalysisOptions::default();
        let tuned = sweep(&ds, &labels, &truth, &SweepGrid::default(), &opts, &cache).unwrap();
        let tuned = tuned.best().unwrap().accuracy;
        let all = SegmentParams::new(f64::INFINITY, 0.0, ds.delta_t_minutes()).unwrap();
        let full = identify(&ds, &all, ClusterCount::Best(12), &labels, &truth, &opts, &cache)
            .unwrap()
            .report
            .accuracy;
        check(mean_kw >= 3.0, format!("seed {seed}: mean load {mean_kw:.2} kW < 3"), &mut f);
        check(tuned >= full, format!("seed {seed}: tuned {tuned:.4} < full {full:.4}"), &mut f);
        strict |= tuned > full;
        notes.push(format!(
            "seed {seed}: mean {mean_kw:.2} kW, tuned {:.1}% vs full-data {:.1}%",
            100.0 * tuned,
            100.0 * full
        ));
    }
    check(strict, "no fixture shows a strict improvement", &mut f);
    finish(f, notes.join("; "))
}

fn case_two(cache: &DistanceCache) -> Outcome {
    let start = Instant::now();
    let (ds, truth, _) = prepared(&SyntheticFeederConfig::default());
    let cfg = EnsembleConfig {
        c_grid: grid_range(0.4, 0.8, 0.1).unwrap(),
        t_grid: vec![2.5, 3.0],
        n_star: 12,
        decay: DEFAULT_DECAY,
        options: AnalysisOptions::default(),
    };
    let out = run_ensemble(&ds, &cfg, cache).unwrap();
    let accuracy = purity_score(&out.partition, &truth).unwrap().1.accuracy;
    let mut members: Vec<f64> = out
        .ensemble
        .members()
        .iter()
        .map(|m| purity_score(&m.partition, &truth).unwrap().1.accuracy)
        .collect();
    members.sort_by(f64::total_cmp);
    let median = (members[members.len() / 2 - 1] + members[members.len() / 2]) / 2.0;

    let zero = EnsembleConfig { decay: 0.0, ..cfg.clone() };
    let cts0 = run_ensemble(&ds, &zero, cache).unwrap();
    let coa = run_co_association(&ds, &zero, cache).unwrap();
    let elapsed = start.elapsed();

    let mut f = Vec::new();
    check(out.ensemble.members().len() == 10, "ensemble does not have 10 members", &mut f);
    check(accuracy >= median, format!("ensemble {accuracy:.4} < median member {median:.4}"), &mut f);
    check(accuracy >= 0.98, format!("ensemble accuracy {accuracy:.4} < 0.98"), &mut f);
    check(cts0.similarity == coa.similarity, "dc = 0 similarity differs from co-association", &mut f);
    check(cts0.partition == coa.partition, "dc = 0 partition differs from co-association", &mut f);
    finish(
        f,
        format!(
            "ensemble {:.1}%, median member {:.1}%, dc=0 identical to co-association, {elapsed:.1?}",
            100.0 * accuracy,
            100.0 * median
        ),
    )
}

fn clustering_reference() -> Outcome {
    let mut f = Vec::new();
    for seed in 0..100u64 {
        let n = 2 + seed as usize % 11;
        let d = random_matrix(seed, n);
        let m = SquareMatrix::new(n, d.clone()).unwrap();
        for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
            let got = agglomerative_cluster(&m, linkage).unwrap();
            let want = brute_force(&d, n, linkage);
            let tol = if linkage == Linkage::Average { 1e-12 } else { 0.0 };
            let same = got.merges.len() == want.merges.len()
                && got.merges.iter().zip(&want.merges).all(|(g, w)| {
                    (g.a, g.b, g.size) == (w.a, w.b, w.size) && (g.height - w.height).abs() <= tol
                });
            check(same, format!("seed {seed} {linkage}: dendrogram differs from brute force"), &mut f);
        }
    }

    // block fixtures
    for seed in 0..20u64 {
        let mut r = rng(seed);
        let sizes: Vec<usize> = (0..3).map(|_| r.random_range(1..5)).collect();
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| vec![b; s]).collect();
        let n = labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let shuffled: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let noise: Vec<f64> = random_matrix(seed + 40, n);
        let m = SquareMatrix::from_fn(n, |i, j| {
            if i == j {
                0.0
            } else if shuffled[i] == shuffled[j] {
                0.2 * noise[i * n + j]
            } else {
                0.7 + 0.3 * noise[i * n + j]
            }
        });
        for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
            let p = cut(&agglomerative_cluster(&m, linkage).unwrap(), 3).unwrap();
            check(
                p == Partition::from_labels(&shuffled),
                format!("block fixture {seed} {linkage} not recovered"),
                &mut f,
            );
        }
    }

    // refinement and permutation equivariance
    for seed in 0..100u64 {
        let n = 3 + seed as usize % 10;
        let d = random_matrix(seed + 200, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng(seed + 300));
        let m = SquareMatrix::new(n, d.clone()).unwrap();
        let pm = SquareMatrix::from_fn(n, |a, b| d[perm[a] * n + perm[b]]);
        for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
            let dg = agglomerative_cluster(&m, linkage).unwrap();
            let pdg = agglomerative_cluster(&pm, linkage).unwrap();
            for k in 1..n {
                let fine = cut(&dg, k + 1).unwrap();
                let coarse = cut(&dg, k).unwrap();
                check(fine.refines(&coarse), format!("seed {seed} {linkage}: k={} does not refine k={k}", k + 1), &mut f);
                let back: Vec<usize> = (0..n).map(|a| coarse.cluster_of(perm[a])).collect();
                check(
                    same_grouping(&back, cut(&pdg, k).unwrap().assignment()),
                    format!("seed {seed} {linkage} k={k}: not permutation equivariant"),
                    &mut f,
                );
            }
        }
    }
    f.truncate(5);
    finish(f, "100 brute-force seeds x 3 linkages, 20 block fixtures, 100 refinement/permutation seeds".into())
}

fn ingestion_contract() -> Outcome {
    let cfg = SyntheticFeederConfig {
        meters_per_phase: 6,
        transformers_per_phase: 3,
        days: 7,
        ..Default::default()
    };
    let feeder = generate_synthetic_feeder(&cfg).unwrap();
    let mut meters = feeder.dataset.meters().to_vec();
    let sparse_id = meters[4].meter_id.clone();
    let t = meters[4].len();
    let mut idx: Vec<usize> = (0..t).collect();
    idx.shuffle(&mut rng(85));
    for &k in idx.iter().take((0.85 * t as f64).round() as usize) {
        meters[4].power[k] = None;
        meters[4].voltage[k] = None;
    }
    let ds = FeederDataset::new(feeder.dataset.timestamps().to_vec(), 15, meters).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("meters.csv");
    write_meter_csv(&ds, std::fs::File::create(&path).unwrap()).unwrap();

    let mut f = Vec::new();
    let loaded = match load_meter_csv(&path, &IngestConfig::default()) {
        Ok(l) => l,
        Err(e) => return finish(vec![format!("load failed: {e}")], String::new()),
    };
    let typical: Vec<f64> = loaded
        .meters()
        .iter()
        .filter(|m| m.meter_id != sparse_id)
        .map(|m| m.missing_fraction())
        .collect();
    let (clean, summary) = prepare(&loaded, 0.8).unwrap();
    check(loaded == ds, "reloaded dataset differs from the written one", &mut f);
    check(
        typical.iter().all(|&x| (x - 0.0857).abs() < 0.01),
        format!("scattered missing fractions off target: {typical:.3?}"),
        &mut f,
    );
    check(summary.removed == vec![sparse_id.clone()], format!("removed {:?}", summary.removed), &mut f);
    let labels = clean.recorded_phases();
    let truth: Vec<Phase> = clean
        .meter_ids()
        .iter()
        .map(|id| feeder.truth.iter().find(|t| &t.meter_id == id).unwrap().phase)
        .collect();
    let params = SegmentParams::new(1.0, 0.5, 15).unwrap();
    let run = identify(
        &clean,
        &params,
        ClusterCount::Best(2),
        &labels,
        &truth,
        &AnalysisOptions::default(),
        &DistanceCache::in_memory(),
    );
    check(run.is_ok(), format!("pipeline failed: {:?}", run.err()), &mut f);
    finish(
        f,
        format!(
            "{} meters loaded, dropped {:?}, {} retained, pipeline completed",
            loaded.len(),
            summary.removed,
            summary.retained
        ),
    )
}

fn main() {
    let cache = DistanceCache::in_memory();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("1 correlation oracle", Box::new(correlation_oracle)),
        ("2 secondary-circuit Monte Carlo", Box::new(circuit_monte_carlo)),
        ("3 end-to-end labeled sweep", Box::new(|| case_one(&cache))),
        ("4 segmentation ablation at high load", Box::new(segmentation_ablation)),
        ("5 CTS ensemble", Box::new(|| case_two(&cache))),
        ("6 clustering reference", Box::new(clustering_reference)),
        ("7 ingestion contract", Box::new(ingestion_contract)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("criterion {name}: {tag} ({})", o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
