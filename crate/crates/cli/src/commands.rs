use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use phaseid::circuit::{default_load_bins, DEFAULT_BANDS};
use phaseid::correlation::pair_segments;
use phaseid::ensemble::default_target_clusters;
use phaseid::labeling::{score_with_corrections, write_assignment_csv};
use phaseid::pipeline::{
    identify as run_identify, prepare, purity_score, run_co_association, run_ensemble, sweep as run_sweep,
    ClusterCount, EnsembleConfig, SweepGrid,
};
use phaseid::synth::{read_phase_csv, write_truth_csv};
use phaseid::{
    generate_synthetic_feeder, ingest::write_meter_csv, load_meter_csv, majority_vote, monte_carlo_pcc, score,
    AnalysisOptions, ConnectionType, DistanceCache, Error, FeederDataset, IngestConfig, MonteCarloConfig, Partition,
    Phase, Result, SecondaryCircuit, SegmentParams, SyntheticFeederConfig,
};
use serde_json::json;

use crate::artifact::{OutDir, RunRecord};
use crate::{AnalysisArgs, Consensus, EnsembleArgs, EvaluateArgs, IdentifyArgs, InputArgs, LabelArgs, SimulateArgs,
    SweepArgs};

const NO_LABELS: &str = "no recorded phase labels supplied; pass --labels with a meter_id,phase CSV, \
     or run `phaseid ensemble` to cluster unlabeled meters";

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn options(a: &AnalysisArgs) -> AnalysisOptions {
    AnalysisOptions {
        min_points: a.min_points,
        linkage: a.linkage.into(),
    }
}

struct Loaded {
    raw: FeederDataset,
    max_missing: f64,
}

fn load(a: &InputArgs, record: &mut RunRecord) -> Result<Loaded> {
    let mut cfg = match &a.ingest_config {
        Some(p) => {
            record.add_input("ingest_config", p)?;
            IngestConfig::from_toml_file(p)?
        }
        None => IngestConfig::default(),
    };
    if let Some(m) = a.max_missing {
        cfg.max_missing = m;
    }
    cfg.validate()?;
    record.add_input("input", &a.input)?;
    let raw = load_meter_csv(&a.input, &cfg)?;
    Ok(Loaded {
        raw,
        max_missing: cfg.max_missing,
    })
}

fn read_phases(path: &Path, record: &mut RunRecord, role: &str) -> Result<Vec<(String, Phase)>> {
    record.add_input(role, path)?;
    read_phase_csv(open(path)?).map_err(|e| e.context(path.display()))
}

/// Phases for every meter of `ds`, in dataset order.
fn phases_for(ds: &FeederDataset, table: &[(String, Phase)], what: &str) -> Result<Vec<Phase>> {
    let map: HashMap<&str, Phase> = table.iter().map(|(id, p)| (id.as_str(), *p)).collect();
    ds.meter_ids()
        .iter()
        .map(|id| {
            map.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Input(format!("no {what} phase for meter '{id}'")))
        })
        .collect()
}

struct Labeled {
    ds: FeederDataset,
    dropped: Vec<String>,
    recorded: Vec<Option<Phase>>,
    truth: Vec<Phase>,
}

/// Applies `--labels`, prepares the dataset and resolves the reference phases.
fn labeled(input: &InputArgs, la: &LabelArgs, record: &mut RunRecord) -> Result<Labeled> {
    let labels_path = la.labels.as_ref().ok_or_else(|| Error::config(NO_LABELS))?;
    let loaded = load(input, record)?;
    let labels = read_phases(labels_path, record, "labels")?;
    let (ds, summary) = prepare(&loaded.raw, loaded.max_missing)?;
    let recorded: Vec<Option<Phase>> = phases_for(&ds, &labels, "recorded")
        .map_err(|e| e.context("--labels"))?
        .into_iter()
        .map(Some)
        .collect();
    let truth = match &la.truth {
        Some(p) => phases_for(&ds, &read_phases(p, record, "truth")?, "reference")?,
        None => recorded.iter().map(|p| p.expect("all labeled")).collect(),
    };
    let kept: Vec<(String, Phase)> = labels.into_iter().filter(|(id, _)| ds.index_of(id).is_some()).collect();
    let ds = ds.with_recorded_phases(&kept)?;
    Ok(Labeled {
        ds,
        dropped: summary.removed,
        recorded,
        truth,
    })
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut record = RunRecord::new("simulate", a);
    let mut cfg = match &a.config {
        Some(p) => {
            record.add_input("config", p)?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            SyntheticFeederConfig::from_toml_str(&text).map_err(|e| e.context(p.display()))?
        }
        None => SyntheticFeederConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(l) = a.load_scale {
        cfg.load_scale = l;
    }
    record.config["feeder"] = serde_json::to_value(&cfg).expect("config serializes");
    let feeder = generate_synthetic_feeder(&cfg)?;
    let mut out = OutDir::create(&a.out, &record)?;
    out.csv("meters.csv", |w| write_meter_csv(&feeder.dataset, w))?;
    out.csv("truth.csv", |w| write_truth_csv(w, &feeder.truth))?;
    out.csv("labels.csv", |w| {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["meter_id", "phase"])?;
        for (m, p) in feeder.dataset.meters().iter().zip(feeder.dataset.recorded_phases()) {
            cw.write_record([m.meter_id.as_str(), p.map_or("", |p| p.as_str())])?;
        }
        cw.flush().map_err(|e| Error::io("labels.csv", e))?;
        Ok(())
    })?;

    let mut mc = Vec::new();
    if !a.no_mc {
        let conn = ConnectionType::from_number(a.connection).expect("validated by clap");
        let circuit = SecondaryCircuit::of_type(conn, a.r_shared, a.r_i, a.r_j)?;
        let bands = if a.bands.is_empty() { DEFAULT_BANDS.to_vec() } else { a.bands.clone() };
        for band in bands {
            let mcfg = MonteCarloConfig {
                band,
                samples_per_bin: a.mc_samples,
                bins: default_load_bins(),
                seed: a.mc_seed,
                tied_loads: a.tied_loads,
            };
            mc.extend(monte_carlo_pcc(&circuit, &mcfg)?);
        }
        out.csv("mc_pcc.csv", |w| {
            let mut cw = csv::Writer::from_writer(w);
            cw.write_record(["bin_lo_kw", "bin_hi_kw", "band_v", "pcc", "redrawn"])?;
            for r in &mc {
                cw.write_record([
                    r.bin.lo.to_string(),
                    r.bin.hi.to_string(),
                    r.band.to_string(),
                    r.pcc.map(|p| p.to_string()).unwrap_or_default(),
                    r.redrawn.to_string(),
                ])?;
            }
            cw.flush().map_err(|e| Error::io("mc_pcc.csv", e))?;
            Ok(())
        })?;
    }
    let missing = feeder.dataset.gap_count() as f64 / (feeder.dataset.len() * feeder.dataset.n_samples()) as f64;
    out.report(
        &record,
        json!({
            "meters": feeder.dataset.len(),
            "samples": feeder.dataset.n_samples(),
            "missing_fraction": missing,
            "mislabeled": feeder.dataset.recorded_phases().iter().zip(&feeder.truth)
                .filter(|(r, t)| **r != Some(t.phase)).count(),
            "monte_carlo": mc,
        }),
    )?;
    println!(
        "simulated {} meters x {} samples into {}",
        feeder.dataset.len(),
        feeder.dataset.n_samples(),
        a.out.display()
    );
    Ok(())
}

pub fn identify(a: &IdentifyArgs, cache: &DistanceCache) -> Result<()> {
    let mut record = RunRecord::new("identify", a);
    let Labeled {
        ds,
        dropped,
        recorded,
        truth,
    } = labeled(&a.input, &a.labels, &mut record)?;
    let params = SegmentParams::new(a.c_kw, a.t_dur, ds.delta_t_minutes())?;
    let count = match a.k {
        Some(k) => ClusterCount::Fixed(k),
        None => ClusterCount::Best(a.n_max),
    };
    let opts = options(&a.analysis);
    let res = run_identify(&ds, &params, count, &recorded, &truth, &opts, cache)?;
    let ids = ds.meter_ids();

    let mut out = OutDir::create(&a.out, &record)?;
    out.csv("assignment.csv", |w| write_assignment_csv(w, &ids, &res.assignment, &recorded))?;
    out.csv("distances.csv", |w| res.distances.write_csv(w))?;
    out.json("dendrogram.json", &res.dendrogram)?;
    if a.dump_segments {
        let segs: Vec<_> = pair_segments(&ds, &res.params)
            .into_iter()
            .map(|(i, j, s)| {
                json!({
                    "meter_i": ids[i],
                    "meter_j": ids[j],
                    "runs": s.runs,
                    "total_points": s.total_points,
                    "fallback_used": s.fallback_used,
                })
            })
            .collect();
        out.json("segments.json", &json!({ "params": res.params, "pairs": segs }))?;
    }
    out.report(
        &record,
        json!({
            "dropped_meters": dropped,
            "meters": ds.len(),
            "params": res.params,
            "k": res.k,
            "fallback_pairs": res.distances.fallback_count(),
            "degenerate_pairs": res.distances.degenerate_count(),
            "ambiguous_clusters": res.assignment.ambiguous_clusters(),
            "accuracy": res.report,
        }),
    )?;
    println!("k = {}\n{}", res.k, res.report.table());
    Ok(())
}

pub fn sweep(a: &SweepArgs, cache: &DistanceCache) -> Result<()> {
    let mut record = RunRecord::new("sweep", a);
    let Labeled {
        ds,
        dropped,
        recorded,
        truth,
    } = labeled(&a.input, &a.labels, &mut record)?;
    let grid = SweepGrid {
        c_grid: a.c_grid.0.clone(),
        t_grid: a.t_grid.0.clone(),
        n_max: a.n_max,
    };
    let res = run_sweep(&ds, &recorded, &truth, &grid, &options(&a.analysis), cache)?;
    let best = res.best().expect("non-empty grid").clone();
    let mut out = OutDir::create(&a.out, &record)?;
    out.csv("sweep.csv", |w| res.write_csv(w))?;
    out.report(
        &record,
        json!({
            "dropped_meters": dropped,
            "meters": ds.len(),
            "rows": res.rows.len(),
            "best": best,
        }),
    )?;
    println!(
        "best accuracy {:.1}% at C = {} kW, T_dur = {} h, k = {}",
        100.0 * best.accuracy,
        best.c_kw,
        best.t_dur_h,
        best.k
    );
    Ok(())
}

pub fn ensemble(a: &EnsembleArgs, cache: &DistanceCache) -> Result<()> {
    let mut record = RunRecord::new("ensemble", a);
    let loaded = load(&a.input, &mut record)?;
    let (ds, summary) = prepare(&loaded.raw, loaded.max_missing)?;
    let truth = match &a.truth {
        Some(p) => Some(phases_for(&ds, &read_phases(p, &mut record, "truth")?, "reference")?),
        None => None,
    };
    let n_star = a.n_star.unwrap_or(default_target_clusters(ds.len()) / 3);
    record.config["n_star"] = n_star.into();
    let cfg = EnsembleConfig {
        c_grid: a.c_grid.0.clone(),
        t_grid: a.t_grid.0.clone(),
        n_star,
        decay: a.dc,
        options: options(&a.analysis),
    };
    let res = match a.consensus {
        Consensus::Cts => run_ensemble(&ds, &cfg, cache)?,
        Consensus::CoAssociation => run_co_association(&ds, &cfg, cache)?,
    };
    let ids = ds.meter_ids();
    let scored = match &truth {
        Some(t) => Some(purity_score(&res.partition, t)?),
        None => None,
    };

    let mut out = OutDir::create(&a.out, &record)?;
    out.csv("clusters.csv", |w| {
        let mut cw = csv::Writer::from_writer(w);
        let mut header = vec!["meter_id", "cluster"];
        if scored.is_some() {
            header.extend(["predicted_phase", "reference_phase"]);
        }
        cw.write_record(&header)?;
        for (i, id) in ids.iter().enumerate() {
            let mut row = vec![id.clone(), res.partition.cluster_of(i).to_string()];
            if let (Some((pa, _)), Some(t)) = (&scored, &truth) {
                row.push(pa.predicted[i].to_string());
                row.push(t[i].to_string());
            }
            cw.write_record(&row)?;
        }
        cw.flush().map_err(|e| Error::io("clusters.csv", e))?;
        Ok(())
    })?;
    out.csv("similarity.csv", |w| res.similarity.write_csv(w, &ids))?;
    let members: Vec<_> = res
        .ensemble
        .members()
        .iter()
        .map(|m| {
            let acc = truth
                .as_ref()
                .map(|t| purity_score(&m.partition, t).map(|(_, r)| r.accuracy))
                .transpose()?;
            Ok(json!({ "params": m.params, "accuracy": acc }))
        })
        .collect::<Result<_>>()?;
    out.report(
        &record,
        json!({
            "dropped_meters": summary.removed,
            "meters": ds.len(),
            "k": res.partition.k(),
            "members": members,
            "accuracy": scored.as_ref().map(|s| &s.1),
        }),
    )?;
    match &scored {
        Some((_, r)) => println!("k = {}\n{}", res.partition.k(), r.table()),
        None => println!("k = {}, {} meters clustered", res.partition.k(), ds.len()),
    }
    Ok(())
}

/// Reads `meter_id` plus `predicted_phase` or `cluster` from an output CSV.
enum Prediction {
    Phases(Vec<(String, Phase)>),
    Clusters(Vec<(String, usize)>),
}

fn read_prediction(path: &Path) -> Result<Prediction> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id = col("meter_id").ok_or_else(|| Error::Input(format!("{}: missing column 'meter_id'", path.display())))?;
    let bad = |row: u64, msg: String| Error::Row { row, msg };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push((rec.position().map_or(0, |p| p.line()), rec));
    }
    if let Some(c) = col("predicted_phase") {
        let v = rows
            .iter()
            .map(|(line, r)| {
                let p = r[c].parse::<Phase>().map_err(|e| bad(*line, e.to_string()))?;
                Ok((r[id].to_string(), p))
            })
            .collect::<Result<_>>()?;
        Ok(Prediction::Phases(v))
    } else if let Some(c) = col("cluster") {
        let v = rows
            .iter()
            .map(|(line, r)| {
                let k = r[c].parse::<usize>().map_err(|e| bad(*line, format!("cluster: {e}")))?;
                Ok((r[id].to_string(), k))
            })
            .collect::<Result<_>>()?;
        Ok(Prediction::Clusters(v))
    } else {
        Err(Error::Input(format!(
            "{}: need a 'predicted_phase' or 'cluster' column",
            path.display()
        )))
    }
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut record = RunRecord::new("evaluate", a);
    record.add_input("assignment", &a.assignment)?;
    let truth_table = read_phases(&a.truth, &mut record, "truth")?;
    let truth_map: HashMap<&str, Phase> = truth_table.iter().map(|(id, p)| (id.as_str(), *p)).collect();
    let lookup = |id: &str| {
        truth_map
            .get(id)
            .copied()
            .ok_or_else(|| Error::Input(format!("no reference phase for meter '{id}'")))
    };
    let (ids, pa, truth, mode) = match read_prediction(&a.assignment)? {
        Prediction::Phases(rows) => {
            let truth: Vec<Phase> = rows.iter().map(|(id, _)| lookup(id)).collect::<Result<_>>()?;
            // one singleton cluster per meter carries the given phases through the vote
            let p = Partition::from_labels(&(0..rows.len()).collect::<Vec<_>>());
            let labels: Vec<Option<Phase>> = rows.iter().map(|(_, ph)| Some(*ph)).collect();
            let pa = majority_vote(&p, &labels)?;
            (rows.into_iter().map(|r| r.0).collect::<Vec<_>>(), pa, truth, "phases")
        }
        Prediction::Clusters(rows) => {
            let truth: Vec<Phase> = rows.iter().map(|(id, _)| lookup(id)).collect::<Result<_>>()?;
            let p = Partition::from_labels(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
            let (pa, _) = purity_score(&p, &truth)?;
            (rows.into_iter().map(|r| r.0).collect(), pa, truth, "clusters")
        }
    };
    let report = match &a.corrections {
        Some(path) => {
            let table = read_phases(path, &mut record, "corrections")?;
            let map: HashMap<&str, Phase> = table.iter().map(|(id, p)| (id.as_str(), *p)).collect();
            let corr: Vec<Option<Phase>> = ids.iter().map(|id| map.get(id.as_str()).copied()).collect();
            score_with_corrections(&pa, &truth, &corr)?
        }
        None => score(&pa, &truth)?,
    };
    if let Some(dir) = &a.out {
        let mut out = OutDir::create(dir, &record)?;
        out.report(&record, json!({ "mode": mode, "meters": ids.len(), "accuracy": report }))?;
    }
    println!("{}", report.table());
    Ok(())
}
