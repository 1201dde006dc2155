//! Synthetic feeders with known phase connectivity.
//!
//! Three phase-voltage processes share a daily shape and a slow common
//! component and each add an independent slow component. Transformers hang
//! off one phase each; meters on a transformer are grouped in pairs, and
//! each pair forms a two-load secondary circuit solved with
//! [`solve_secondary`]. Loads are simulated minute by minute: a base load,
//! a cycling thermostatic load and occupancy-driven appliance events.
//! Reported power is the interval average; reported voltage is the
//! instantaneous value at the end of the interval, rounded to the meter
//! resolution.

use std::io::Write;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::circuit::{solve_secondary, ConnectionType, SecondaryCircuit};
use crate::error::{Error, Result};
use crate::ingest::{FeederDataset, MeterSeries};
use crate::phase::Phase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticFeederConfig {
    pub meters_per_phase: usize,
    pub transformers_per_phase: usize,
    pub days: usize,
    pub delta_t_minutes: u32,
    pub service_voltage: f64,
    /// Mean primary-side voltage referred to the secondary (V).
    pub phase_mean_volts: f64,
    /// Peak-to-mean amplitude of the shared daily voltage shape (V).
    pub daily_amplitude: f64,
    /// Stationary std of the slow component common to all phases (V).
    pub common_sigma: f64,
    /// Stationary std of each phase's own slow component (V).
    pub phase_sigma: f64,
    /// Per-interval AR(1) coefficient of the slow components.
    pub process_phi: f64,
    /// Transformer plus primary-lateral resistance range (ohm).
    pub r_transformer: (f64, f64),
    /// Shared service-drop resistance range (ohm).
    pub r_shared: (f64, f64),
    /// Branch resistance range to each meter (ohm).
    pub r_branch: (f64, f64),
    /// Multiplies every load; raises mean demand without changing shape.
    pub load_scale: f64,
    pub base_kw: (f64, f64),
    pub hvac_kw: (f64, f64),
    pub appliance_kw: (f64, f64),
    /// Mean appliance events per hour at the evening peak.
    pub peak_event_rate: f64,
    /// Service limit on instantaneous household demand (kW).
    pub max_kw: f64,
    pub meter_noise_volts: f64,
    pub voltage_resolution: f64,
    pub missing_fraction: f64,
    /// Share of meters whose recorded phase disagrees with the truth.
    pub mislabel_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticFeederConfig {
    fn default() -> Self {
        Self {
            meters_per_phase: 30,
            transformers_per_phase: 15,
            days: 30,
            delta_t_minutes: 15,
            service_voltage: 120.0,
            phase_mean_volts: 121.5,
            daily_amplitude: 0.4,
            common_sigma: 0.5,
            phase_sigma: 0.25,
            process_phi: 0.95,
            r_transformer: (0.002, 0.006),
            r_shared: (0.005, 0.02),
            r_branch: (0.02, 0.08),
            load_scale: 1.0,
            base_kw: (0.1, 0.4),
            hvac_kw: (2.0, 4.0),
            appliance_kw: (1.0, 5.0),
            peak_event_rate: 2.0,
            max_kw: 20.0,
            meter_noise_volts: 0.02,
            voltage_resolution: 0.1,
            missing_fraction: 0.0857,
            mislabel_fraction: 0.05,
            seed: 7,
        }
    }
}

impl SyntheticFeederConfig {
    /// Parses TOML; omitted keys keep their defaults.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::config(format!("feeder config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_meters(&self) -> usize {
        3 * self.meters_per_phase
    }

    pub fn n_samples(&self) -> usize {
        self.days * 1440 / self.delta_t_minutes as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.transformers_per_phase == 0 {
            return bad("need at least one transformer per phase");
        }
        if self.meters_per_phase < self.transformers_per_phase {
            return bad("fewer meters than transformers on a phase");
        }
        if self.days == 0 {
            return bad("days must be positive");
        }
        if self.delta_t_minutes == 0 || 1440 % self.delta_t_minutes != 0 {
            return bad("delta_t_minutes must divide a day");
        }
        if !(self.service_voltage > 0.0) || !(self.phase_mean_volts > 0.0) {
            return bad("voltages must be positive");
        }
        if !(0.0..1.0).contains(&self.process_phi) {
            return bad("process_phi must lie in [0, 1)");
        }
        for (name, (lo, hi)) in [
            ("r_transformer", self.r_transformer),
            ("r_shared", self.r_shared),
            ("r_branch", self.r_branch),
            ("base_kw", self.base_kw),
            ("hvac_kw", self.hvac_kw),
            ("appliance_kw", self.appliance_kw),
        ] {
            if !(lo >= 0.0 && hi >= lo) {
                return Err(Error::config(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        for (name, f) in [
            ("missing_fraction", self.missing_fraction),
            ("mislabel_fraction", self.mislabel_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.load_scale >= 0.0) || !(self.peak_event_rate >= 0.0) || !(self.max_kw >= 0.0) {
            return bad("load_scale, peak_event_rate and max_kw must be >= 0");
        }
        if !(self.meter_noise_volts >= 0.0) || !(self.voltage_resolution >= 0.0) {
            return bad("meter noise and resolution must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub meter_id: String,
    pub phase: Phase,
    pub transformer_id: String,
}

#[derive(Debug, Clone)]
pub struct SyntheticFeeder {
    /// Raw volts; recorded phases include the configured mislabels.
    pub dataset: FeederDataset,
    pub truth: Vec<TruthRecord>,
    pub circuits: Vec<SecondaryCircuit>,
}

impl SyntheticFeeder {
    pub fn truth_phases(&self) -> Vec<Phase> {
        self.truth.iter().map(|t| t.phase).collect()
    }
}

// RNG stream layout; every consumer gets its own ChaCha stream.
const STREAM_PROCESS: u64 = 1 << 40;
const STREAM_TOPOLOGY: u64 = 2 << 40;
const STREAM_LOAD: u64 = 3 << 40;
const STREAM_METER: u64 = 4 << 40;
const STREAM_MISSING: u64 = 5 << 40;
const STREAM_LABELS: u64 = 6 << 40;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// AR(1) with stationary standard deviation `sigma`.
fn ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64, sigma: f64) -> Vec<f64> {
    let innov = Normal::new(0.0, sigma * (1.0 - phi * phi).sqrt()).expect("finite sigma");
    let mut x = Normal::new(0.0, sigma).expect("finite sigma").sample(rng);
    (0..n)
        .map(|_| {
            x = phi * x + innov.sample(rng);
            x
        })
        .collect()
}

/// Phase voltages (V) at each sample instant, indexed `[phase][t]`.
fn phase_voltages(cfg: &SyntheticFeederConfig) -> Vec<Vec<f64>> {
    let n = cfg.n_samples();
    let dt = cfg.delta_t_minutes as f64;
    let mut rng = stream(cfg.seed, STREAM_PROCESS);
    let common = ar1(&mut rng, n, cfg.process_phi, cfg.common_sigma);
    (0..3)
        .map(|p| {
            let mut rng = stream(cfg.seed, STREAM_PROCESS + 1 + p);
            let own = ar1(&mut rng, n, cfg.process_phi, cfg.phase_sigma);
            (0..n)
                .map(|t| {
                    let hour = ((t + 1) as f64 * dt / 60.0) % 24.0;
                    // voltage sags in the evening peak, rises overnight
                    let daily = -cfg.daily_amplitude * ((hour - 13.0) * std::f64::consts::PI / 12.0).cos();
                    cfg.phase_mean_volts + daily + common[t] + own[t]
                })
                .collect()
        })
        .collect()
}

/// Appliance event rate per minute at a given hour of day.
fn event_rate(hour: f64, peak_per_hour: f64) -> f64 {
    let morning = (-(hour - 7.5).powi(2) / 2.0).exp() * 0.6;
    let evening = (-(hour - 19.0).powi(2) / 4.5).exp();
    let night = if (0.5..5.5).contains(&hour) { 0.02 } else { 0.12 };
    peak_per_hour * (morning + evening + night) / 60.0
}

/// Thermostatic duty cycle by hour: low overnight, highest mid-afternoon.
fn hvac_duty(hour: f64, bias: f64) -> f64 {
    let shape = 0.5 - 0.5 * ((hour - 15.0) * std::f64::consts::PI / 12.0).cos();
    (bias + 0.45 * shape).clamp(0.0, 0.95)
}

struct MeterLoad {
    /// Interval-average kW.
    avg: Vec<f64>,
    /// Instantaneous kW at the end of each interval.
    snap: Vec<f64>,
}

fn simulate_load(cfg: &SyntheticFeederConfig, meter: usize) -> MeterLoad {
    let mut rng = stream(cfg.seed, STREAM_LOAD + meter as u64);
    let n = cfg.n_samples();
    let dt = cfg.delta_t_minutes as usize;
    let scale = cfg.load_scale * (0.6 + 0.8 * rng.random::<f64>());
    let base = uniform(&mut rng, cfg.base_kw);
    let hvac = uniform(&mut rng, cfg.hvac_kw);
    let duty_bias = -0.10 + 0.18 * rng.random::<f64>();
    let activity = 0.5 + rng.random::<f64>();
    let cycle_len = 15.0 + 15.0 * rng.random::<f64>();

    let mut hvac_on = false;
    let mut hvac_left = (cycle_len * rng.random::<f64>()) as i64;
    // active appliance events: (kW, minutes left)
    let mut events: Vec<(f64, u32)> = Vec::new();
    let mut avg = Vec::with_capacity(n);
    let mut snap = Vec::with_capacity(n);
    for t in 0..n {
        let mut sum = 0.0;
        let mut last = 0.0;
        for m in 0..dt {
            let minute = t * dt + m;
            let hour = (minute % 1440) as f64 / 60.0;

            if hvac_left <= 0 {
                let duty = hvac_duty(hour, duty_bias);
                let stretch = cycle_len * (0.7 + 0.6 * rng.random::<f64>());
                hvac_on = !hvac_on && (duty * stretch).round() >= 1.0;
                let frac = if hvac_on { duty } else { 1.0 - duty };
                hvac_left = (frac * stretch).round().max(1.0) as i64;
            }
            hvac_left -= 1;

            if rng.random::<f64>() < event_rate(hour, cfg.peak_event_rate * activity) && events.len() < 2 {
                let kw = uniform(&mut rng, cfg.appliance_kw);
                let minutes = 2 + (rng.random::<f64>().powi(2) * 40.0) as u32;
                events.push((kw, minutes));
            }
            let appliance: f64 = events.iter().map(|e| e.0).sum();
            events.iter_mut().for_each(|e| e.1 -= 1);
            events.retain(|e| e.1 > 0);

            let jitter = 1.0 + 0.1 * (rng.random::<f64>() - 0.5);
            let p = (scale * (base * jitter + if hvac_on { hvac } else { 0.0 } + appliance)).min(cfg.max_kw);
            sum += p;
            last = p;
        }
        avg.push(sum / dt as f64);
        snap.push(last);
    }
    MeterLoad { avg, snap }
}

/// Builds a feeder dataset and its ground truth.
pub fn generate_synthetic_feeder(cfg: &SyntheticFeederConfig) -> Result<SyntheticFeeder> {
    cfg.validate()?;
    let n_meters = cfg.n_meters();
    let n = cfg.n_samples();
    let phases = phase_voltages(cfg);

    // Topology: meters of each phase spread over its transformers, then
    // paired in order into two-load secondaries.
    let mut topo = stream(cfg.seed, STREAM_TOPOLOGY);
    let mut truth = Vec::with_capacity(n_meters);
    let mut xfmr_of = Vec::with_capacity(n_meters);
    let mut r_xfmr = Vec::new();
    for (pi, phase) in Phase::ALL.iter().enumerate() {
        for x in 0..cfg.transformers_per_phase {
            r_xfmr.push(uniform(&mut topo, cfg.r_transformer));
            let lo = x * cfg.meters_per_phase / cfg.transformers_per_phase;
            let hi = (x + 1) * cfg.meters_per_phase / cfg.transformers_per_phase;
            for _ in lo..hi {
                let m = truth.len();
                truth.push(TruthRecord {
                    meter_id: format!("M{m:04}"),
                    phase: *phase,
                    transformer_id: format!("T{}{:02}", phase, x),
                });
                xfmr_of.push(pi * cfg.transformers_per_phase + x);
            }
        }
    }
    let n_xfmr = r_xfmr.len();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_xfmr];
    for (m, &x) in xfmr_of.iter().enumerate() {
        groups[x].push(m);
    }
    // (circuit, meter i, optional meter j)
    let mut secondaries: Vec<(SecondaryCircuit, usize, Option<usize>)> = Vec::new();
    for g in &groups {
        for pair in g.chunks(2) {
            let conn = ConnectionType::ALL[topo.random_range(0..3)];
            let c = SecondaryCircuit::of_type(
                conn,
                uniform(&mut topo, cfg.r_shared),
                uniform(&mut topo, cfg.r_branch),
                uniform(&mut topo, cfg.r_branch),
            )?;
            secondaries.push((c, pair[0], pair.get(1).copied()));
        }
    }

    let loads: Vec<MeterLoad> = (0..n_meters).map(|m| simulate_load(cfg, m)).collect();

    let mut volts = vec![vec![0.0; n]; n_meters];
    for t in 0..n {
        let mut v_t = vec![0.0; n_xfmr];
        for x in 0..n_xfmr {
            let v_phase = phases[x / cfg.transformers_per_phase][t];
            let amps: f64 = groups[x].iter().map(|&m| 1000.0 * loads[m].snap[t] / v_phase).sum();
            v_t[x] = v_phase - r_xfmr[x] * amps;
        }
        for (c, i, j) in &secondaries {
            let p_i = loads[*i].snap[t];
            let p_j = j.map_or(0.0, |j| loads[j].snap[t]);
            let s = solve_secondary(c, v_t[xfmr_of[*i]], p_i, p_j)
                .map_err(|e| e.context(format!("meter M{i:04} at sample {t}")))?;
            volts[*i][t] = s.v_i;
            if let Some(j) = j {
                volts[*j][t] = s.v_j;
            }
        }
    }

    let noise = Normal::new(0.0, cfg.meter_noise_volts.max(f64::MIN_POSITIVE)).expect("finite");
    let start = NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date");
    let timestamps = FeederDataset::uniform_axis(start, cfg.delta_t_minutes, n);

    let mut meters = Vec::with_capacity(n_meters);
    for m in 0..n_meters {
        let mut rng = stream(cfg.seed, STREAM_METER + m as u64);
        let mut gaps = stream(cfg.seed, STREAM_MISSING + m as u64);
        let missing = missing_mask(&mut gaps, n, cfg.missing_fraction);
        let mut power = Vec::with_capacity(n);
        let mut voltage = Vec::with_capacity(n);
        for t in 0..n {
            let mut v = volts[m][t];
            if cfg.meter_noise_volts > 0.0 {
                v += noise.sample(&mut rng);
            }
            if cfg.voltage_resolution > 0.0 {
                v = (v / cfg.voltage_resolution).round() * cfg.voltage_resolution;
            }
            let kw = (loads[m].avg[t] * 1000.0).round() / 1000.0;
            if missing[t] {
                power.push(None);
                voltage.push(None);
            } else {
                power.push(Some(kw));
                voltage.push(Some(v));
            }
        }
        let mut series = MeterSeries::new(truth[m].meter_id.clone(), power, voltage);
        series.service_voltage = Some(cfg.service_voltage);
        series.recorded_phase = Some(truth[m].phase);
        meters.push(series);
    }

    let mut labels = stream(cfg.seed, STREAM_LABELS);
    let n_flip = (cfg.mislabel_fraction * n_meters as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_meters).collect();
    order.shuffle(&mut labels);
    for &m in order.iter().take(n_flip) {
        let wrong = (truth[m].phase.index() + labels.random_range(1..3)) % 3;
        meters[m].recorded_phase = Phase::from_index(wrong);
    }

    Ok(SyntheticFeeder {
        dataset: FeederDataset::new(timestamps, cfg.delta_t_minutes, meters)?,
        truth,
        circuits: secondaries.iter().map(|s| s.0).collect(),
    })
}

/// Scattered outages of geometric length (mean 3 samples) until `fraction`
/// of the axis is missing.
fn missing_mask(rng: &mut ChaCha8Rng, n: usize, fraction: f64) -> Vec<bool> {
    let mut mask = vec![false; n];
    let target = (fraction * n as f64).round() as usize;
    let mut count = 0;
    while count < target {
        let start = rng.random_range(0..n);
        let mut t = start;
        loop {
            if t >= n || count >= target {
                break;
            }
            if !mask[t] {
                mask[t] = true;
                count += 1;
            }
            t += 1;
            if rng.random::<f64>() < 1.0 / 3.0 {
                break;
            }
        }
    }
    mask
}

pub fn write_truth_csv<W: Write>(writer: W, truth: &[TruthRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["meter_id", "phase", "transformer_id"])?;
    for r in truth {
        w.write_record([r.meter_id.as_str(), r.phase.as_str(), r.transformer_id.as_str()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Reads `meter_id,phase[,...]` rows; extra columns are ignored.
pub fn read_phase_csv<R: std::io::Read>(reader: R) -> Result<Vec<(String, Phase)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("missing column '{name}'")))
    };
    let (c_id, c_phase) = (col("meter_id")?, col("phase")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let phase = rec
            .get(c_phase)
            .unwrap_or_default()
            .parse::<Phase>()
            .map_err(|e| Error::Row {
                row,
                msg: e.to_string(),
            })?;
        out.push((rec.get(c_id).unwrap_or_default().to_string(), phase));
    }
    Ok(out)
}
