mod common;

use std::collections::BTreeSet;

use common::*;
use phaseid::clustering::SquareMatrix;
use phaseid::ensemble::{cluster_graph, cts_matrix, Ensemble};
use phaseid::ingest::{drop_sparse_meters, normalize_voltages, read_meter_csv, write_meter_csv, IngestConfig};
use phaseid::{
    agglomerative_cluster, cut, joint_segments, majority_vote, pairwise_distance_matrix, pcc, score, solve_secondary,
    ConnectionType, Linkage, MeterSeries, Partition, Phase, SecondaryCircuit, SegmentParams,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn power_series(len: usize) -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(prop::option::weighted(0.9, -0.5f64..4.0), len)
}

fn meter_pair() -> impl Strategy<Value = (MeterSeries, MeterSeries)> {
    (20usize..120).prop_flat_map(|t| {
        (power_series(t), power_series(t)).prop_map(|(a, b)| {
            let v = |p: &Vec<Option<f64>>| p.iter().map(|x| x.map(|_| 1.0)).collect();
            (MeterSeries::new("i", a.clone(), v(&a)), MeterSeries::new("j", b.clone(), v(&b)))
        })
    })
}

fn selected(i: &MeterSeries, j: &MeterSeries, c: f64, t: f64) -> Option<BTreeSet<usize>> {
    let p = SegmentParams::new(c, t, 15).unwrap().with_min_points(0);
    let s = joint_segments(i, j, &p);
    (!s.fallback_used).then(|| s.indices().collect())
}

proptest! {
    #[test]
    fn selection_grows_with_threshold((i, j) in meter_pair(), c1 in 0.0f64..3.0, dc in 0.0f64..2.0, t in 0.0f64..2.0) {
        if let Some(lo) = selected(&i, &j, c1, t) {
            let hi = selected(&i, &j, c1 + dc, t).expect("larger threshold keeps the runs");
            prop_assert!(lo.is_subset(&hi));
        }
    }

    #[test]
    fn selection_shrinks_with_duration((i, j) in meter_pair(), c in 0.0f64..3.0, t1 in 0.0f64..2.0, dt in 0.0f64..2.0) {
        if let Some(long) = selected(&i, &j, c, t1 + dt) {
            let short = selected(&i, &j, c, t1).expect("shorter duration keeps the runs");
            prop_assert!(long.is_subset(&short));
        }
    }

    #[test]
    fn selection_is_symmetric((i, j) in meter_pair(), c in 0.0f64..3.0, t in 0.0f64..2.0, min_points in 0usize..40) {
        let p = SegmentParams::new(c, t, 15).unwrap().with_min_points(min_points);
        prop_assert_eq!(joint_segments(&i, &j, &p), joint_segments(&j, &i, &p));
    }

    #[test]
    fn selected_runs_satisfy_both_conditions((i, j) in meter_pair(), c in 0.0f64..3.0, t in 0.0f64..2.0) {
        let p = SegmentParams::new(c, t, 15).unwrap().with_min_points(0);
        let s = joint_segments(&i, &j, &p);
        if !s.fallback_used {
            let mut prev_end = 0;
            for &(a, b) in &s.runs {
                prop_assert!(b - a >= p.min_run_len());
                prop_assert!(a >= prev_end);
                prev_end = b;
            }
            for k in s.indices() {
                for m in [&i, &j] {
                    let pw = m.power[k].unwrap();
                    prop_assert!((0.0..=c).contains(&pw));
                    prop_assert!(m.voltage[k].is_some());
                }
            }
        } else {
            let joint: Vec<usize> = (0..i.len()).filter(|&k| i.is_present(k) && j.is_present(k)).collect();
            prop_assert_eq!(s.indices().collect::<Vec<_>>(), joint);
        }
    }

    #[test]
    fn pcc_scale_shift_invariant(
        xy in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..60),
        a in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        b in -100.0f64..100.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let base = pcc(&x, &y).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        match (base, pcc(&scaled, &y).unwrap()) {
            (Some(r0), Some(r1)) => prop_assert!((r1 - a.signum() * r0).abs() < 1e-9),
            (r0, r1) => prop_assert_eq!(r0.is_none(), r1.is_none()),
        }
    }

    #[test]
    fn distance_matrix_is_symmetric_with_zero_diagonal(seed in any::<u64>(), n in 2usize..9, t in 10usize..80) {
        let ds = random_dataset(seed, n, t, 0.1);
        let p = SegmentParams::new(1.5, 0.25, 15).unwrap().with_min_points(5);
        let dm = pairwise_distance_matrix(&ds, &p).unwrap();
        for i in 0..n {
            prop_assert_eq!(dm.get(i, i), 0.0);
            for j in 0..n {
                let d = dm.get(i, j);
                prop_assert!(d.is_finite() && (0.0..=1.0).contains(&d));
                prop_assert_eq!(d, dm.get(j, i));
                if i != j {
                    match dm.pcc(i, j) {
                        Some(r) => prop_assert_eq!(d, 1.0 - r.abs()),
                        None => prop_assert_eq!(d, 1.0),
                    }
                }
            }
        }
    }

    #[test]
    fn ingest_round_trip(seed in any::<u64>(), n in 1usize..5, t in 2usize..40) {
        let mut ds = random_dataset(seed, n, t, 0.2);
        // the axis is only recoverable when its ends carry data
        let mut meters: Vec<MeterSeries> = ds.meters().to_vec();
        meters[0].power[0] = Some(0.5);
        meters[0].voltage[0] = Some(1.0);
        meters[0].power[t - 1] = Some(0.5);
        meters[0].voltage[t - 1] = Some(1.0);
        ds = dataset(meters);
        let mut buf = Vec::new();
        write_meter_csv(&ds, &mut buf).unwrap();
        let back = read_meter_csv(buf.as_slice(), &IngestConfig::default()).unwrap();
        prop_assert_eq!(&back, &ds);
        let mut again = Vec::new();
        write_meter_csv(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn cleaning_preserves_samples(seed in any::<u64>(), n in 1usize..6, t in 5usize..60, max_missing in 0.0f64..1.0) {
        let ds = random_dataset(seed, n, t, 0.3);
        let (kept, summary) = drop_sparse_meters(&ds, max_missing).unwrap();
        prop_assert_eq!(summary.removed.len() + kept.len(), n);
        for m in kept.meters() {
            prop_assert!(m.missing_fraction() <= max_missing);
            let original = ds.meter(ds.index_of(&m.meter_id).unwrap());
            prop_assert_eq!(m, original);
        }
        let mut meters = ds.meters().to_vec();
        meters.iter_mut().for_each(|m| m.service_voltage = Some(120.0));
        let raw = dataset(meters);
        let norm = normalize_voltages(&raw).unwrap();
        prop_assert_eq!(norm.gap_count(), raw.gap_count());
    }

    #[test]
    fn solved_samples_satisfy_circuit_equations(
        ty in 1u8..=3,
        r in 0.0f64..0.03,
        ri in 0.0f64..0.08,
        rj in 0.0f64..0.08,
        v_t in 110.0f64..130.0,
        p_i in 0.0f64..15.0,
        p_j in 0.0f64..15.0,
    ) {
        let c = SecondaryCircuit::of_type(ConnectionType::from_number(ty).unwrap(), r, ri, rj).unwrap();
        let s = solve_secondary(&c, v_t, p_i, p_j).unwrap();
        prop_assert!(s.residual(&c) < 1e-6);
    }
}

fn random_partition(r: &mut impl Rng, n: usize, k: usize) -> Partition {
    let mut labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { r.random_range(0..k) }).collect();
    labels.shuffle(r);
    Partition::from_labels(&labels)
}

#[test]
fn cuts_refine_and_cover_over_seeds() {
    for seed in 0..100 {
        let n = 3 + seed as usize % 10;
        let m = SquareMatrix::new(n, random_matrix(seed, n)).unwrap();
        for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
            let dg = agglomerative_cluster(&m, linkage).unwrap();
            assert_eq!(dg.merges.len(), n - 1);
            assert!(dg.merges.windows(2).all(|w| w[0].height <= w[1].height));
            let mut prev: Option<Partition> = None;
            for k in (1..=n).rev() {
                let p = cut(&dg, k).unwrap();
                assert_eq!(p.k(), k);
                assert!(p.members().iter().all(|c| !c.is_empty()));
                if let Some(finer) = &prev {
                    assert!(finer.refines(&p), "seed {seed} k {k}");
                }
                prev = Some(p);
            }
        }
    }
}

#[test]
fn clustering_is_permutation_equivariant_over_seeds() {
    for seed in 0..100 {
        let n = 3 + seed as usize % 10;
        let d = random_matrix(seed, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng(seed + 500));
        // permuted[a][b] = d[perm[a]][perm[b]]
        let pd = SquareMatrix::from_fn(n, |a, b| d[perm[a] * n + perm[b]]);
        let m = SquareMatrix::new(n, d).unwrap();
        for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
            let dg = agglomerative_cluster(&m, linkage).unwrap();
            let pdg = agglomerative_cluster(&pd, linkage).unwrap();
            for k in 1..=n {
                let orig = cut(&dg, k).unwrap();
                let moved = cut(&pdg, k).unwrap();
                let back: Vec<usize> = (0..n).map(|a| orig.cluster_of(perm[a])).collect();
                assert!(same_grouping(&back, moved.assignment()), "seed {seed} {linkage} k {k}");
            }
        }
    }
}

#[test]
fn cts_bounds_and_symmetry_over_seeds() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let n = 4 + seed as usize % 12;
        let k = 2 + seed as usize % 3;
        let parts = (0..1 + seed as usize % 6).map(|_| random_partition(&mut r, n, k)).collect();
        let e = Ensemble::from_partitions(parts).unwrap();
        let dc = r.random::<f64>();
        let s = cts_matrix(&e, &cluster_graph(&e), dc).unwrap();
        for i in 0..n {
            assert_eq!(s.get(i, i), 1.0);
            for j in 0..n {
                let v = s.get(i, j);
                assert!((0.0..=1.0 + 1e-12).contains(&v));
                assert_eq!(v, s.get(j, i));
                let always = e.members().iter().all(|m| m.partition.cluster_of(i) == m.partition.cluster_of(j));
                if always {
                    assert_eq!(v, 1.0);
                }
            }
        }
    }
}

#[test]
fn cts_is_permutation_equivariant_over_seeds() {
    for seed in 0..100 {
        let mut r = rng(seed + 77);
        let n = 4 + seed as usize % 10;
        let parts: Vec<Partition> = (0..3).map(|_| random_partition(&mut r, n, 3)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let moved: Vec<Partition> = parts
            .iter()
            .map(|p| Partition::from_labels(&(0..n).map(|a| p.cluster_of(perm[a])).collect::<Vec<_>>()))
            .collect();
        let e = Ensemble::from_partitions(parts).unwrap();
        let pe = Ensemble::from_partitions(moved).unwrap();
        let s = cts_matrix(&e, &cluster_graph(&e), 0.8).unwrap();
        let ps = cts_matrix(&pe, &cluster_graph(&pe), 0.8).unwrap();
        for a in 0..n {
            for b in 0..n {
                assert!((ps.get(a, b) - s.get(perm[a], perm[b])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn majority_vote_ignores_member_order_and_rewards_purity() {
    for seed in 0..100 {
        let mut r = rng(seed + 9000);
        let n = 6 + seed as usize % 20;
        let truth: Vec<Phase> = (0..n).map(|_| Phase::ALL[r.random_range(0..3)]).collect();
        // clusters nested inside phases are pure
        let labels: Vec<usize> = truth.iter().map(|p| p.index() * 10 + r.random_range(0..3)).collect();
        let p = Partition::from_labels(&labels);
        let recorded: Vec<Option<Phase>> = truth.iter().copied().map(Some).collect();
        let pa = majority_vote(&p, &recorded).unwrap();
        assert_eq!(score(&pa, &truth).unwrap().accuracy, 1.0);

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let p2 = Partition::from_labels(&perm.iter().map(|&i| labels[i]).collect::<Vec<_>>());
        let rec2: Vec<Option<Phase>> = perm.iter().map(|&i| recorded[i]).collect();
        let pa2 = majority_vote(&p2, &rec2).unwrap();
        for (a, &i) in perm.iter().enumerate() {
            assert_eq!(pa2.predicted[a], pa.predicted[i]);
        }
    }
}
