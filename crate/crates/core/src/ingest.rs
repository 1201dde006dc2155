//! Loading, cleaning and normalizing long-format smart-meter CSV data.
//!
//! Input rows are `meter_id,timestamp,kw,volts[,phase][,service_voltage]`.
//! All meters are placed on one shared timestamp axis with a constant
//! sampling interval; a (meter, timestamp) pair with no row is a gap. Gaps
//! are never interpolated.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::phase::Phase;

/// Normalized voltages outside this open interval (p.u.) are flagged.
pub const OUTLIER_BAND: (f64, f64) = (0.5, 1.5);

pub const DEFAULT_DELTA_T_MINUTES: u32 = 15;
pub const DEFAULT_MAX_MISSING: f64 = 0.80;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Column names in the input CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub meter_id: String,
    pub timestamp: String,
    pub kw: String,
    pub volts: String,
    pub phase: String,
    pub service_voltage: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            meter_id: "meter_id".into(),
            timestamp: "timestamp".into(),
            kw: "kw".into(),
            volts: "volts".into(),
            phase: "phase".into(),
            service_voltage: "service_voltage".into(),
        }
    }
}

/// Ingest configuration, readable from a TOML file:
///
/// ```toml
/// delta_t_minutes = 15
/// max_missing = 0.8
/// service_voltage = 120.0   # used when the CSV has no service_voltage column
///
/// [columns]
/// meter_id = "MeterID"
/// kw = "kW"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub columns: ColumnSchema,
    pub delta_t_minutes: u32,
    pub max_missing: f64,
    pub service_voltage: Option<f64>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            columns: ColumnSchema::default(),
            delta_t_minutes: DEFAULT_DELTA_T_MINUTES,
            max_missing: DEFAULT_MAX_MISSING,
            service_voltage: None,
        }
    }
}

impl IngestConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: IngestConfig =
            toml::from_str(s).map_err(|e| Error::config(format!("ingest config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta_t_minutes == 0 {
            return Err(Error::config("delta_t_minutes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.max_missing) {
            return Err(Error::config(format!(
                "max_missing {} outside [0, 1]",
                self.max_missing
            )));
        }
        if let Some(v) = self.service_voltage {
            if !(v > 0.0) {
                return Err(Error::config("service_voltage must be positive"));
            }
        }
        Ok(())
    }
}

/// One meter's samples on the dataset's shared axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterSeries {
    pub meter_id: String,
    /// Real power in kW, `None` where missing.
    pub power: Vec<Option<f64>>,
    /// Volts before normalization, p.u. after.
    pub voltage: Vec<Option<f64>>,
    pub recorded_phase: Option<Phase>,
    pub service_voltage: Option<f64>,
    /// Indices of normalized voltages outside [`OUTLIER_BAND`].
    pub outliers: Vec<usize>,
}

impl MeterSeries {
    pub fn new(meter_id: impl Into<String>, power: Vec<Option<f64>>, voltage: Vec<Option<f64>>) -> Self {
        Self {
            meter_id: meter_id.into(),
            power,
            voltage,
            recorded_phase: None,
            service_voltage: None,
            outliers: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    /// A sample counts as present only when both power and voltage are.
    pub fn is_present(&self, t: usize) -> bool {
        self.power[t].is_some() && self.voltage[t].is_some()
    }

    pub fn gap_count(&self) -> usize {
        (0..self.len()).filter(|&t| !self.is_present(t)).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        self.gap_count() as f64 / self.len() as f64
    }
}

/// All meters of one feeder on a uniform timestamp axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederDataset {
    meters: Vec<MeterSeries>,
    timestamps: Vec<NaiveDateTime>,
    delta_t_minutes: u32,
    normalized: bool,
}

impl FeederDataset {
    /// Builds a dataset, checking the axis spacing and series lengths.
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        delta_t_minutes: u32,
        meters: Vec<MeterSeries>,
    ) -> Result<Self> {
        if delta_t_minutes == 0 {
            return Err(Error::config("delta_t_minutes must be positive"));
        }
        let step = TimeDelta::minutes(delta_t_minutes as i64);
        for w in timestamps.windows(2) {
            if w[1] - w[0] != step {
                return Err(Error::Input(format!(
                    "timestamps {} and {} are not {} minutes apart",
                    w[0], w[1], delta_t_minutes
                )));
            }
        }
        let t = timestamps.len();
        for m in &meters {
            if m.power.len() != t || m.voltage.len() != t {
                return Err(Error::contract(format!(
                    "meter '{}' has {} power / {} voltage samples, axis has {}",
                    m.meter_id,
                    m.power.len(),
                    m.voltage.len(),
                    t
                )));
            }
        }
        Ok(Self {
            meters,
            timestamps,
            delta_t_minutes,
            normalized: false,
        })
    }

    /// Axis of `len` timestamps starting at `start`.
    pub fn uniform_axis(start: NaiveDateTime, delta_t_minutes: u32, len: usize) -> Vec<NaiveDateTime> {
        let step = TimeDelta::minutes(delta_t_minutes as i64);
        (0..len).map(|i| start + step * i as i32).collect()
    }

    pub fn meters(&self) -> &[MeterSeries] {
        &self.meters
    }

    pub fn meter(&self, i: usize) -> &MeterSeries {
        &self.meters[i]
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn delta_t_minutes(&self) -> u32 {
        self.delta_t_minutes
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.meters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meters.is_empty()
    }

    pub fn n_samples(&self) -> usize {
        self.timestamps.len()
    }

    pub fn meter_ids(&self) -> Vec<String> {
        self.meters.iter().map(|m| m.meter_id.clone()).collect()
    }

    pub fn index_of(&self, meter_id: &str) -> Option<usize> {
        self.meters.iter().position(|m| m.meter_id == meter_id)
    }

    pub fn recorded_phases(&self) -> Vec<Option<Phase>> {
        self.meters.iter().map(|m| m.recorded_phase).collect()
    }

    pub fn gap_count(&self) -> usize {
        self.meters.iter().map(MeterSeries::gap_count).sum()
    }

    /// Replaces recorded phases by meter id. Unknown ids are an input error.
    pub fn with_recorded_phases(mut self, labels: &[(String, Phase)]) -> Result<Self> {
        for (id, phase) in labels {
            let i = self
                .index_of(id)
                .ok_or_else(|| Error::Input(format!("label for unknown meter '{id}'")))?;
            self.meters[i].recorded_phase = Some(*phase);
        }
        Ok(self)
    }

    /// Keeps only the meters at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            meters: indices.iter().map(|&i| self.meters[i].clone()).collect(),
            timestamps: self.timestamps.clone(),
            delta_t_minutes: self.delta_t_minutes,
            normalized: self.normalized,
        }
    }

    /// Hex SHA-256 over every sample, used to key cached matrices.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.delta_t_minutes.to_le_bytes());
        h.update([self.normalized as u8]);
        h.update((self.timestamps.len() as u64).to_le_bytes());
        if let Some(t0) = self.timestamps.first() {
            h.update(t0.and_utc().timestamp().to_le_bytes());
        }
        for m in &self.meters {
            h.update((m.meter_id.len() as u64).to_le_bytes());
            h.update(m.meter_id.as_bytes());
            h.update([m.recorded_phase.map_or(0, |p| p.index() as u8 + 1)]);
            h.update(m.service_voltage.unwrap_or(f64::NAN).to_bits().to_le_bytes());
            for series in [&m.power, &m.voltage] {
                for v in series {
                    match v {
                        Some(x) => {
                            h.update([1]);
                            h.update(x.to_bits().to_le_bytes());
                        }
                        None => h.update([0]),
                    }
                }
            }
        }
        hex::encode(h.finalize())
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn parse_opt_f64(field: &str, what: &str, row: u64) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() || field.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Row {
            row,
            msg: format!("cannot parse {what} '{field}'"),
        })
}

struct RawMeter {
    id: String,
    samples: Vec<(i64, Option<f64>, Option<f64>, u64)>,
    phase: Option<Phase>,
    service_voltage: Option<f64>,
}

/// Reads a long-format meter CSV from any reader.
pub fn read_meter_csv<R: Read>(reader: R, cfg: &IngestConfig) -> Result<FeederDataset> {
    cfg.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| Error::Input(format!("missing required column '{name}'")))
    };
    let c_id = need(&cfg.columns.meter_id)?;
    let c_ts = need(&cfg.columns.timestamp)?;
    let c_kw = need(&cfg.columns.kw)?;
    let c_v = need(&cfg.columns.volts)?;
    let c_phase = col(&cfg.columns.phase);
    let c_sv = col(&cfg.columns.service_voltage);

    let step_secs = cfg.delta_t_minutes as i64 * 60;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut raw: Vec<RawMeter> = Vec::new();

    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let id = rec.get(c_id).unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(Error::Row {
                row,
                msg: "empty meter_id".into(),
            });
        }
        let ts_str = rec.get(c_ts).unwrap_or_default();
        let ts = parse_timestamp(ts_str).ok_or_else(|| Error::Row {
            row,
            msg: format!("unparseable timestamp '{ts_str}'"),
        })?;
        let secs = ts.and_utc().timestamp();
        if ts.and_utc().timestamp_subsec_nanos() != 0 || secs.rem_euclid(step_secs) != 0 {
            return Err(Error::Row {
                row,
                msg: format!(
                    "timestamp {ts_str} is off the {}-minute grid",
                    cfg.delta_t_minutes
                ),
            });
        }
        let kw = parse_opt_f64(rec.get(c_kw).unwrap_or_default(), "kw", row)?;
        let volts = parse_opt_f64(rec.get(c_v).unwrap_or_default(), "volts", row)?;
        let phase = match c_phase.and_then(|c| rec.get(c)) {
            Some(s) if !s.is_empty() => Some(s.parse::<Phase>().map_err(|e| Error::Row {
                row,
                msg: e.to_string(),
            })?),
            _ => None,
        };
        let sv = match c_sv.and_then(|c| rec.get(c)) {
            Some(s) => parse_opt_f64(s, "service_voltage", row)?,
            None => None,
        };

        let slot = *index.entry(id.clone()).or_insert_with(|| {
            raw.push(RawMeter {
                id: id.clone(),
                samples: Vec::new(),
                phase: None,
                service_voltage: None,
            });
            raw.len() - 1
        });
        let m = &mut raw[slot];
        m.samples.push((secs, kw, volts, row));
        if let Some(p) = phase {
            match m.phase {
                Some(prev) if prev != p => {
                    return Err(Error::Row {
                        row,
                        msg: format!("meter '{id}' has conflicting phases {prev} and {p}"),
                    })
                }
                _ => m.phase = Some(p),
            }
        }
        if let Some(v) = sv {
            match m.service_voltage {
                Some(prev) if prev != v => {
                    return Err(Error::Row {
                        row,
                        msg: format!("meter '{id}' has conflicting service voltages"),
                    })
                }
                _ => m.service_voltage = Some(v),
            }
        }
    }

    if raw.is_empty() {
        return Err(Error::EmptyInput("no data rows".into()));
    }

    let (t_min, t_max) = raw
        .iter()
        .flat_map(|m| m.samples.iter().map(|s| s.0))
        .fold((i64::MAX, i64::MIN), |(lo, hi), s| (lo.min(s), hi.max(s)));
    let n_t = ((t_max - t_min) / step_secs) as usize + 1;
    let start = DateTime::from_timestamp(t_min, 0)
        .ok_or_else(|| Error::Input("timestamp out of range".into()))?
        .naive_utc();
    let timestamps = FeederDataset::uniform_axis(start, cfg.delta_t_minutes, n_t);

    let mut meters = Vec::with_capacity(raw.len());
    for m in raw {
        let mut power = vec![None; n_t];
        let mut voltage = vec![None; n_t];
        let mut seen = vec![false; n_t];
        for (secs, kw, v, _row) in m.samples {
            let t = ((secs - t_min) / step_secs) as usize;
            if seen[t] {
                return Err(Error::DuplicateSample {
                    meter_id: m.id,
                    timestamp: timestamps[t].format(TIMESTAMP_FORMAT).to_string(),
                });
            }
            seen[t] = true;
            power[t] = kw;
            voltage[t] = v;
        }
        let mut series = MeterSeries::new(m.id, power, voltage);
        series.recorded_phase = m.phase;
        series.service_voltage = m.service_voltage.or(cfg.service_voltage);
        meters.push(series);
    }

    FeederDataset::new(timestamps, cfg.delta_t_minutes, meters)
}

/// Loads a meter CSV file onto a unified timestamp axis.
pub fn load_meter_csv(path: impl AsRef<Path>, cfg: &IngestConfig) -> Result<FeederDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_meter_csv(file, cfg)
}

/// Writes the dataset back out in the long CSV format it was read from.
///
/// Rows where both kW and volts are missing are omitted, except at the two
/// ends of the axis so that a reload reproduces the same axis.
pub fn write_meter_csv<W: Write>(ds: &FeederDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["meter_id", "timestamp", "kw", "volts", "phase", "service_voltage"])?;
    let n_t = ds.n_samples();
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (mi, m) in ds.meters().iter().enumerate() {
        let phase = m.recorded_phase.map(|p| p.to_string()).unwrap_or_default();
        let sv = fmt_opt(m.service_voltage);
        for t in 0..n_t {
            let anchor = mi == 0 && (t == 0 || t + 1 == n_t);
            if m.power[t].is_none() && m.voltage[t].is_none() && !anchor {
                continue;
            }
            w.write_record([
                m.meter_id.as_str(),
                &ds.timestamps()[t].format(TIMESTAMP_FORMAT).to_string(),
                &fmt_opt(m.power[t]),
                &fmt_opt(m.voltage[t]),
                &phase,
                &sv,
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Outcome of [`drop_sparse_meters`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DropSummary {
    pub removed: Vec<String>,
    pub retained: usize,
}

/// Removes meters whose missing fraction exceeds `max_missing`.
pub fn drop_sparse_meters(ds: &FeederDataset, max_missing: f64) -> Result<(FeederDataset, DropSummary)> {
    if !(0.0..=1.0).contains(&max_missing) {
        return Err(Error::contract(format!(
            "max_missing {max_missing} outside [0, 1]"
        )));
    }
    let mut keep = Vec::new();
    let mut summary = DropSummary::default();
    for (i, m) in ds.meters().iter().enumerate() {
        if m.missing_fraction() > max_missing {
            summary.removed.push(m.meter_id.clone());
        } else {
            keep.push(i);
        }
    }
    summary.retained = keep.len();
    if keep.is_empty() {
        log::warn!("all {} meters exceed the missing-data limit", ds.len());
    }
    Ok((ds.select(&keep), summary))
}

/// Divides every voltage by its meter's service voltage.
pub fn normalize_voltages(ds: &FeederDataset) -> Result<FeederDataset> {
    if ds.normalized {
        return Err(Error::contract("dataset voltages are already normalized"));
    }
    let mut out = ds.clone();
    for m in &mut out.meters {
        let sv = match m.service_voltage {
            Some(v) if v > 0.0 => v,
            Some(v) => {
                return Err(Error::config(format!(
                    "meter '{}' has non-positive service voltage {v}",
                    m.meter_id
                )))
            }
            None => {
                return Err(Error::config(format!(
                    "meter '{}' has no service voltage",
                    m.meter_id
                )))
            }
        };
        m.outliers.clear();
        for (t, v) in m.voltage.iter_mut().enumerate() {
            if let Some(x) = v {
                *x /= sv;
                if !(*x > OUTLIER_BAND.0 && *x < OUTLIER_BAND.1) {
                    m.outliers.push(t);
                }
            }
        }
    }
    out.normalized = true;
    Ok(out)
}
