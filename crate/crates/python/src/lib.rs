//! Python bindings. Phases cross the boundary as the strings "A", "B", "C".

use phaseid::pipeline::{self, ClusterCount, EnsembleConfig, SweepGrid};
use phaseid::{
    AnalysisOptions, ConnectionType, DistanceCache, ErrorCategory, FeederDataset, IngestConfig, Linkage,
    MonteCarloConfig, Partition, Phase, SecondaryCircuit, SegmentParams, SyntheticFeederConfig,
};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(phaseid_py, PhaseIdError, PyException);
create_exception!(phaseid_py, InputError, PhaseIdError);
create_exception!(phaseid_py, ConfigError, PhaseIdError);
create_exception!(phaseid_py, ContractError, PhaseIdError);

type Series = Vec<Option<f64>>;
/// `(c, t_dur, k, accuracy)`
type SweepRow = (f64, f64, usize, f64);
/// `(bin_lo_kw, bin_hi_kw, band_v, pcc)`
type McRow = (f64, f64, f64, Option<f64>);

fn err(e: phaseid::Error) -> PyErr {
    let msg = e.to_string();
    match e.category() {
        ErrorCategory::Input => InputError::new_err(msg),
        ErrorCategory::Config => ConfigError::new_err(msg),
        ErrorCategory::Contract => ContractError::new_err(msg),
    }
}

fn phase(s: &str) -> PyResult<Phase> {
    s.parse::<Phase>().map_err(err)
}

fn phases(xs: &[String]) -> PyResult<Vec<Phase>> {
    xs.iter().map(|s| phase(s)).collect()
}

fn names(xs: &[Phase]) -> Vec<String> {
    xs.iter().map(|p| p.to_string()).collect()
}

fn linkage(s: &str) -> PyResult<Linkage> {
    s.parse().map_err(err)
}

fn options(min_points: usize, link: &str) -> PyResult<AnalysisOptions> {
    Ok(AnalysisOptions {
        min_points,
        linkage: linkage(link)?,
    })
}

/// Meter time series on a shared timestamp axis.
#[pyclass(name = "Dataset", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: FeederDataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(meters={}, samples={}, delta_t_minutes={}, normalized={})",
            self.inner.len(),
            self.inner.n_samples(),
            self.inner.delta_t_minutes(),
            self.inner.is_normalized()
        )
    }

    #[getter]
    fn meter_ids(&self) -> Vec<String> {
        self.inner.meter_ids()
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn delta_t_minutes(&self) -> u32 {
        self.inner.delta_t_minutes()
    }

    #[getter]
    fn is_normalized(&self) -> bool {
        self.inner.is_normalized()
    }

    /// Recorded phase per meter, `None` where unknown.
    #[getter]
    fn recorded_phases(&self) -> Vec<Option<String>> {
        self.inner
            .recorded_phases()
            .iter()
            .map(|p| p.map(|p| p.to_string()))
            .collect()
    }

    fn missing_fractions(&self) -> Vec<f64> {
        self.inner.meters().iter().map(|m| m.missing_fraction()).collect()
    }

    /// Power (kW) and voltage of one meter, `None` for gaps.
    fn series(&self, i: usize) -> PyResult<(Series, Series)> {
        if i >= self.inner.len() {
            return Err(pyo3::exceptions::PyIndexError::new_err(i));
        }
        let m = self.inner.meter(i);
        Ok((m.power.clone(), m.voltage.clone()))
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(|e| err(phaseid::Error::io(path, e)))?;
        phaseid::ingest::write_meter_csv(&self.inner, f).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (path, max_missing = 0.8, delta_t_minutes = 15, config_toml = None))]
fn load_meter_csv(path: &str, max_missing: f64, delta_t_minutes: u32, config_toml: Option<&str>) -> PyResult<PyDataset> {
    let cfg = match config_toml {
        Some(t) => IngestConfig::from_toml_str(t).map_err(err)?,
        None => IngestConfig {
            max_missing,
            delta_t_minutes,
            ..Default::default()
        },
    };
    cfg.validate().map_err(err)?;
    let inner = phaseid::load_meter_csv(path, &cfg).map_err(err)?;
    Ok(PyDataset { inner })
}

/// Drops meters above `max_missing` and converts voltages to per-unit.
/// Returns the cleaned dataset and the ids that were removed.
#[pyfunction]
#[pyo3(signature = (ds, max_missing = 0.8))]
fn prepare(ds: &PyDataset, max_missing: f64) -> PyResult<(PyDataset, Vec<String>)> {
    let (inner, summary) = pipeline::prepare(&ds.inner, max_missing).map_err(err)?;
    Ok((PyDataset { inner }, summary.removed))
}

#[pyclass(name = "SyntheticFeeder", frozen, get_all)]
struct PySyntheticFeeder {
    dataset: PyDataset,
    truth_phases: Vec<String>,
    transformer_ids: Vec<String>,
}

/// Generates a seeded synthetic feeder. `config_toml` may override any
/// generator setting; `seed` and `load_scale` override it again.
#[pyfunction]
#[pyo3(signature = (config_toml = None, seed = None, load_scale = None))]
fn simulate_feeder(config_toml: Option<&str>, seed: Option<u64>, load_scale: Option<f64>) -> PyResult<PySyntheticFeeder> {
    let mut cfg: SyntheticFeederConfig = match config_toml {
        Some(t) => SyntheticFeederConfig::from_toml_str(t).map_err(err)?,
        None => SyntheticFeederConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(l) = load_scale {
        cfg.load_scale = l;
    }
    let f = phaseid::generate_synthetic_feeder(&cfg).map_err(err)?;
    Ok(PySyntheticFeeder {
        truth_phases: names(&f.truth_phases()),
        transformer_ids: f.truth.iter().map(|t| t.transformer_id.clone()).collect(),
        dataset: PyDataset { inner: f.dataset },
    })
}

#[pyclass(name = "DistanceMatrix", frozen)]
struct PyDistanceMatrix {
    inner: std::sync::Arc<phaseid::DistanceMatrix>,
}

#[pymethods]
impl PyDistanceMatrix {
    fn __len__(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().to_vec()
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    /// PCC of the pair, `None` when either side is constant.
    fn pcc(&self, i: usize, j: usize) -> Option<f64> {
        self.inner.pcc(i, j)
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.inner.as_slice().chunks(self.inner.n()).map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn fallback_count(&self) -> usize {
        self.inner.fallback_count()
    }

    #[getter]
    fn degenerate_count(&self) -> usize {
        self.inner.degenerate_count()
    }
}

/// Correlation distances over jointly selected low-power segments.
/// `c = float("inf")` keeps every present sample.
#[pyfunction]
#[pyo3(signature = (ds, c, t_dur, min_points = 96))]
fn distance_matrix(ds: &PyDataset, c: f64, t_dur: f64, min_points: usize) -> PyResult<PyDistanceMatrix> {
    let p = SegmentParams::new(c, t_dur, ds.inner.delta_t_minutes())
        .map_err(err)?
        .with_min_points(min_points);
    let dm = phaseid::pairwise_distance_matrix(&ds.inner, &p).map_err(err)?;
    Ok(PyDistanceMatrix { inner: dm.into() })
}

#[pyfunction]
fn pcc(x: Vec<f64>, y: Vec<f64>) -> PyResult<Option<f64>> {
    phaseid::pcc(&x, &y).map_err(err)
}

#[pyclass(name = "Dendrogram", frozen)]
struct PyDendrogram {
    inner: phaseid::Dendrogram,
}

#[pymethods]
impl PyDendrogram {
    /// Merge rows `(a, b, height, size)` with scipy-style node ids.
    #[getter]
    fn merges(&self) -> Vec<(usize, usize, f64, usize)> {
        self.inner.merges.iter().map(|m| (m.a, m.b, m.height, m.size)).collect()
    }

    /// Cluster id per leaf for `k` clusters, ids ordered by smallest member.
    fn cut(&self, k: usize) -> PyResult<Vec<usize>> {
        Ok(phaseid::cut(&self.inner, k).map_err(err)?.assignment().to_vec())
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

/// Agglomerative clustering of a square distance matrix given as nested lists.
#[pyfunction]
#[pyo3(signature = (distances, linkage = "average"))]
fn cluster(distances: Vec<Vec<f64>>, linkage: &str) -> PyResult<PyDendrogram> {
    let n = distances.len();
    if distances.iter().any(|r| r.len() != n) {
        return Err(ContractError::new_err("distance matrix must be square"));
    }
    let m = phaseid::clustering::SquareMatrix::new(n, distances.concat()).map_err(err)?;
    let inner = phaseid::agglomerative_cluster(&m, self::linkage(linkage)?).map_err(err)?;
    Ok(PyDendrogram { inner })
}

#[pyclass(name = "Identification", frozen, get_all)]
struct PyIdentification {
    k: usize,
    clusters: Vec<usize>,
    predicted: Vec<String>,
    accuracy: f64,
    n_validated: usize,
    report: String,
}

/// Segments, clusters and labels clusters by majority vote over `labels`.
/// `k` fixes the cluster count; otherwise the best of 3, 6, ..., 3 * n_max.
#[pyfunction]
#[pyo3(signature = (ds, labels, truth = None, c = 1.0, t_dur = 0.5, k = None, n_max = 12, min_points = 96, linkage = "average"))]
#[allow(clippy::too_many_arguments)]
fn identify(
    ds: &PyDataset,
    labels: Vec<String>,
    truth: Option<Vec<String>>,
    c: f64,
    t_dur: f64,
    k: Option<usize>,
    n_max: usize,
    min_points: usize,
    linkage: &str,
) -> PyResult<PyIdentification> {
    let labels = phases(&labels)?;
    let truth = match truth {
        Some(t) => phases(&t)?,
        None => labels.clone(),
    };
    let recorded: Vec<Option<Phase>> = labels.into_iter().map(Some).collect();
    let params = SegmentParams::new(c, t_dur, ds.inner.delta_t_minutes()).map_err(err)?;
    let count = k.map_or(ClusterCount::Best(n_max), ClusterCount::Fixed);
    let res = pipeline::identify(
        &ds.inner,
        &params,
        count,
        &recorded,
        &truth,
        &options(min_points, linkage)?,
        &DistanceCache::in_memory(),
    )
    .map_err(err)?;
    Ok(PyIdentification {
        k: res.k,
        clusters: res.partition.assignment().to_vec(),
        predicted: names(&res.assignment.predicted),
        accuracy: res.report.accuracy,
        n_validated: res.report.n_validated,
        report: res.report.table(),
    })
}

/// Accuracy over the (C, T_dur, k) grid. Returns
/// `(rows, best)` where each row is `(c, t_dur, k, accuracy)`.
#[pyfunction]
#[pyo3(signature = (ds, labels, truth, c_grid, t_grid, n_max = 12, min_points = 96, linkage = "average"))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    ds: &PyDataset,
    labels: Vec<String>,
    truth: Vec<String>,
    c_grid: Vec<f64>,
    t_grid: Vec<f64>,
    n_max: usize,
    min_points: usize,
    linkage: &str,
) -> PyResult<(Vec<SweepRow>, SweepRow)> {
    let recorded: Vec<Option<Phase>> = phases(&labels)?.into_iter().map(Some).collect();
    let grid = SweepGrid { c_grid, t_grid, n_max };
    let res = pipeline::sweep(
        &ds.inner,
        &recorded,
        &phases(&truth)?,
        &grid,
        &options(min_points, linkage)?,
        &DistanceCache::in_memory(),
    )
    .map_err(err)?;
    let row = |r: &pipeline::SweepRow| (r.c_kw, r.t_dur_h, r.k, r.accuracy);
    let best = res.best().map(row).expect("grid is non-empty");
    Ok((res.rows.iter().map(row).collect(), best))
}

#[pyclass(name = "EnsembleResult", frozen, get_all)]
struct PyEnsembleResult {
    clusters: Vec<usize>,
    member_params: Vec<(f64, f64)>,
    member_clusters: Vec<Vec<usize>>,
    similarity: Vec<Vec<f64>>,
}

/// Consensus clustering over the C x T_dur grid with 3 * n_star clusters.
/// `consensus` is "cts" or "co-association".
#[pyfunction]
#[pyo3(signature = (ds, c_grid, t_grid, n_star = 12, dc = 0.8, consensus = "cts", min_points = 96, linkage = "average"))]
#[allow(clippy::too_many_arguments)]
fn ensemble(
    ds: &PyDataset,
    c_grid: Vec<f64>,
    t_grid: Vec<f64>,
    n_star: usize,
    dc: f64,
    consensus: &str,
    min_points: usize,
    linkage: &str,
) -> PyResult<PyEnsembleResult> {
    let cfg = EnsembleConfig {
        c_grid,
        t_grid,
        n_star,
        decay: dc,
        options: options(min_points, linkage)?,
    };
    let cache = DistanceCache::in_memory();
    let out = match consensus {
        "cts" => pipeline::run_ensemble(&ds.inner, &cfg, &cache),
        "co-association" => pipeline::run_co_association(&ds.inner, &cfg, &cache),
        other => return Err(ConfigError::new_err(format!("unknown consensus '{other}'"))),
    }
    .map_err(err)?;
    let n = out.similarity.n();
    Ok(PyEnsembleResult {
        clusters: out.partition.assignment().to_vec(),
        member_params: out
            .ensemble
            .members()
            .iter()
            .map(|m| (m.params.c_threshold, m.params.t_dur_hours))
            .collect(),
        member_clusters: out
            .ensemble
            .members()
            .iter()
            .map(|m| m.partition.assignment().to_vec())
            .collect(),
        similarity: (0..n).map(|i| (0..n).map(|j| out.similarity.get(i, j)).collect()).collect(),
    })
}

/// Labels each cluster with its members' majority reference phase and
/// returns `(predicted, accuracy)`.
#[pyfunction]
fn purity_score(clusters: Vec<usize>, truth: Vec<String>) -> PyResult<(Vec<String>, f64)> {
    let p = Partition::from_labels(&clusters);
    let (pa, r) = pipeline::purity_score(&p, &phases(&truth)?).map_err(err)?;
    Ok((names(&pa.predicted), r.accuracy))
}

/// Per-bin PCC of the two load voltages of a secondary circuit. Returns
/// rows `(bin_lo_kw, bin_hi_kw, band_v, pcc)`.
#[pyfunction]
#[pyo3(signature = (connection = 1, r_shared = 0.01, r_i = 0.05, r_j = 0.05, band = 0.2, samples_per_bin = 10_000, seed = 42, tied_loads = false))]
#[allow(clippy::too_many_arguments)]
fn monte_carlo_pcc(
    connection: u8,
    r_shared: f64,
    r_i: f64,
    r_j: f64,
    band: f64,
    samples_per_bin: usize,
    seed: u64,
    tied_loads: bool,
) -> PyResult<Vec<McRow>> {
    let conn = ConnectionType::from_number(connection)
        .ok_or_else(|| ConfigError::new_err(format!("connection type {connection} is not 1, 2 or 3")))?;
    let circuit = SecondaryCircuit::of_type(conn, r_shared, r_i, r_j).map_err(err)?;
    let cfg = MonteCarloConfig {
        band,
        samples_per_bin,
        bins: phaseid::circuit::default_load_bins(),
        seed,
        tied_loads,
    };
    let rows = phaseid::monte_carlo_pcc(&circuit, &cfg).map_err(err)?;
    Ok(rows.iter().map(|r| (r.bin.lo, r.bin.hi, r.band, r.pcc)).collect())
}

#[pymodule]
fn phaseid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("PhaseIdError", py.get_type::<PhaseIdError>())?;
    m.add("InputError", py.get_type::<InputError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("ContractError", py.get_type::<ContractError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySyntheticFeeder>()?;
    m.add_class::<PyDistanceMatrix>()?;
    m.add_class::<PyDendrogram>()?;
    m.add_class::<PyIdentification>()?;
    m.add_class::<PyEnsembleResult>()?;
    m.add_function(wrap_pyfunction!(load_meter_csv, m)?)?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_feeder, m)?)?;
    m.add_function(wrap_pyfunction!(distance_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(pcc, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(purity_score, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_pcc, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
