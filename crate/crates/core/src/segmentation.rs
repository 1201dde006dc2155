//! Low-power data segment selection for a pair of meters.
//!
//! A sample is usable for a pair when both meters draw between zero and
//! `C` kW and both voltages are present. Usable samples are split into
//! maximal contiguous runs and only runs lasting at least `T_dur` are kept.
//! When the kept runs hold fewer than `min_points` samples the pair falls
//! back to every jointly present sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::MeterSeries;

/// Fewest selected points before the full-data fallback kicks in
/// (one day at 15-minute resolution).
pub const DEFAULT_MIN_POINTS: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    /// Power threshold in kW; `f64::INFINITY` selects every present sample.
    pub c_threshold: f64,
    /// Minimum run duration in hours.
    pub t_dur_hours: f64,
    pub delta_t_minutes: u32,
    pub min_points: usize,
}

impl SegmentParams {
    pub fn new(c_threshold: f64, t_dur_hours: f64, delta_t_minutes: u32) -> Result<Self> {
        Self {
            c_threshold,
            t_dur_hours,
            delta_t_minutes,
            min_points: DEFAULT_MIN_POINTS,
        }
        .validated()
    }

    pub fn with_min_points(mut self, min_points: usize) -> Self {
        self.min_points = min_points;
        self
    }

    pub fn validated(self) -> Result<Self> {
        if self.c_threshold.is_nan() || self.c_threshold < 0.0 {
            return Err(Error::contract(format!(
                "power threshold C={} must be >= 0",
                self.c_threshold
            )));
        }
        if !self.t_dur_hours.is_finite() || self.t_dur_hours < 0.0 {
            return Err(Error::contract(format!(
                "minimum duration T_dur={} must be finite and >= 0",
                self.t_dur_hours
            )));
        }
        if self.delta_t_minutes == 0 {
            return Err(Error::contract("sampling interval must be positive"));
        }
        Ok(self)
    }

    /// `ceil(T_dur * 60 / ΔT)`, never below one sample.
    pub fn min_run_len(&self) -> usize {
        let ratio = self.t_dur_hours * 60.0 / self.delta_t_minutes as f64;
        // absorb representation error such as 0.1 * 3 != 0.3
        let n = (ratio - 1e-9).ceil();
        (n.max(1.0)) as usize
    }
}

/// Selected half-open index runs `[start, end)` for one meter pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSet {
    pub runs: Vec<(usize, usize)>,
    pub total_points: usize,
    pub fallback_used: bool,
}

impl SegmentSet {
    fn from_runs(runs: Vec<(usize, usize)>, fallback_used: bool) -> Self {
        let total_points = runs.iter().map(|(s, e)| e - s).sum();
        Self {
            runs,
            total_points,
            fallback_used,
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.runs.iter().flat_map(|&(s, e)| s..e)
    }
}

/// `true` where power is present and within `[0, c]`.
pub fn low_power_mask(power: &[Option<f64>], c: f64) -> Vec<bool> {
    power
        .iter()
        .map(|p| matches!(p, Some(x) if *x >= 0.0 && *x <= c))
        .collect()
}

/// Maximal runs of `true` in `mask`, keeping those at least `min_len` long.
pub(crate) fn runs_of(mask: impl Iterator<Item = bool>, min_len: usize) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    let mut len = 0;
    for (t, on) in mask.enumerate() {
        len = t + 1;
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                if t - s >= min_len {
                    runs.push((s, t));
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        if len - s >= min_len {
            runs.push((s, len));
        }
    }
    runs
}

/// Per-meter masks that pair selection combines.
#[derive(Debug, Clone)]
pub(crate) struct MeterMasks {
    /// Low power and voltage present.
    pub low: Vec<bool>,
    /// Voltage present.
    pub present: Vec<bool>,
}

impl MeterMasks {
    pub fn new(m: &MeterSeries, c: f64) -> Self {
        let mut low = low_power_mask(&m.power, c);
        let present: Vec<bool> = m.voltage.iter().map(Option::is_some).collect();
        for (l, p) in low.iter_mut().zip(&present) {
            *l &= *p;
        }
        Self { low, present }
    }
}

pub(crate) fn joint_from_masks(a: &MeterMasks, b: &MeterMasks, p: &SegmentParams) -> SegmentSet {
    let joint = a.low.iter().zip(&b.low).map(|(x, y)| *x && *y);
    let runs = runs_of(joint, p.min_run_len());
    let selected: usize = runs.iter().map(|(s, e)| e - s).sum();
    if !runs.is_empty() && selected >= p.min_points {
        return SegmentSet::from_runs(runs, false);
    }
    let all = a.present.iter().zip(&b.present).map(|(x, y)| *x && *y);
    SegmentSet::from_runs(runs_of(all, 1), true)
}

/// Selects the low-power segments shared by meters `i` and `j`.
pub fn joint_segments(i: &MeterSeries, j: &MeterSeries, p: &SegmentParams) -> SegmentSet {
    let a = MeterMasks::new(i, p.c_threshold);
    let b = MeterMasks::new(j, p.c_threshold);
    joint_from_masks(&a, &b, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meter(power: &[Option<f64>]) -> MeterSeries {
        let v = power.iter().map(|_| Some(1.0)).collect();
        MeterSeries::new("m", power.to_vec(), v)
    }

    fn some(xs: &[f64]) -> Vec<Option<f64>> {
        xs.iter().copied().map(Some).collect()
    }

    #[test]
    fn mask_examples() {
        assert_eq!(low_power_mask(&some(&[0.3, 1.2, 0.5]), 1.0), vec![true, false, true]);
        assert_eq!(
            low_power_mask(&[Some(0.3), None, Some(0.5)], 1.0),
            vec![true, false, true]
        );
        assert_eq!(low_power_mask(&some(&[-0.2]), 1.0), vec![false]);
    }

    #[test]
    fn min_run_length() {
        let p = SegmentParams::new(1.0, 0.5, 15).unwrap();
        assert_eq!(p.min_run_len(), 2);
        assert_eq!(SegmentParams::new(1.0, 0.0, 15).unwrap().min_run_len(), 1);
        assert_eq!(SegmentParams::new(1.0, 0.3, 6).unwrap().min_run_len(), 3);
        assert_eq!(SegmentParams::new(1.0, 2.1, 15).unwrap().min_run_len(), 9);
        assert!(SegmentParams::new(-1.0, 0.5, 15).is_err());
        assert!(SegmentParams::new(1.0, f64::NAN, 15).is_err());
    }

    #[test]
    fn hand_enumerated_pair() {
        // masks [1,1,1,0] and [1,1,0,1] intersect to [1,1,0,0]
        let i = meter(&some(&[0.5, 0.5, 0.5, 2.0]));
        let j = meter(&some(&[0.4, 0.4, 2.0, 0.4]));
        let p = SegmentParams::new(1.0, 0.5, 15).unwrap().with_min_points(1);
        let s = joint_segments(&i, &j, &p);
        assert_eq!(s.runs, vec![(0, 2)]);
        assert_eq!(s.total_points, 2);
        assert!(!s.fallback_used);
    }

    #[test]
    fn all_low_gives_one_run() {
        let i = meter(&some(&[0.1; 10]));
        let j = meter(&some(&[0.2; 10]));
        let p = SegmentParams::new(1.0, 1.0, 15).unwrap().with_min_points(1);
        let s = joint_segments(&i, &j, &p);
        assert_eq!(s.runs, vec![(0, 10)]);
        assert!(!s.fallback_used);
    }

    #[test]
    fn all_high_falls_back_to_joint_data() {
        let mut i = meter(&some(&[3.0; 6]));
        i.voltage[2] = None;
        let j = meter(&some(&[4.0; 6]));
        let p = SegmentParams::new(1.0, 0.5, 15).unwrap().with_min_points(1);
        let s = joint_segments(&i, &j, &p);
        assert!(s.fallback_used);
        assert_eq!(s.runs, vec![(0, 2), (3, 6)]);
        assert_eq!(s.total_points, 5);
    }

    #[test]
    fn too_few_points_falls_back() {
        let i = meter(&some(&[0.5, 0.5, 3.0, 3.0, 3.0]));
        let j = meter(&some(&[0.5, 0.5, 3.0, 3.0, 3.0]));
        let p = SegmentParams::new(1.0, 0.25, 15).unwrap().with_min_points(3);
        let s = joint_segments(&i, &j, &p);
        assert!(s.fallback_used);
        assert_eq!(s.runs, vec![(0, 5)]);
    }

    #[test]
    fn gap_breaks_contiguity() {
        let i = meter(&[Some(0.1), Some(0.1), None, Some(0.1), Some(0.1)]);
        let j = meter(&some(&[0.1; 5]));
        let p = SegmentParams::new(1.0, 0.5, 15).unwrap().with_min_points(1);
        assert_eq!(joint_segments(&i, &j, &p).runs, vec![(0, 2), (3, 5)]);
        let p3 = SegmentParams::new(1.0, 0.75, 15).unwrap().with_min_points(1);
        assert!(joint_segments(&i, &j, &p3).fallback_used);
    }

    #[test]
    fn infinite_threshold_selects_everything() {
        let i = meter(&some(&[9.0, 0.0, 15.0]));
        let j = meter(&some(&[1.0, 2.0, 3.0]));
        let p = SegmentParams::new(f64::INFINITY, 0.0, 15).unwrap().with_min_points(1);
        let s = joint_segments(&i, &j, &p);
        assert_eq!(s.runs, vec![(0, 3)]);
        assert!(!s.fallback_used);
    }
}
