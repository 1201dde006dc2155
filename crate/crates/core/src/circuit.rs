//! Two constant-power loads on one transformer secondary.
//!
//! ```text
//! V_i = V_T - I R - I_i R_i
//! V_j = V_T - I R - I_j R_j
//! I   = I_i + I_j,     I_x = 1000 P_x / V_x   (P in kW)
//! ```
//!
//! Loads are purely resistive-real; there is no reactance anywhere.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correlation::pcc;
use crate::error::{Error, Result};

const TOLERANCE_V: f64 = 1e-9;
const MAX_ITERATIONS: usize = 200;
const FIXED_POINT_BUDGET: usize = 100;

/// Connection of two loads relative to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConnectionType {
    /// Type 1: separate drops from the transformer, no shared path.
    InParallel,
    /// Type 2: a shared service drop, then separate branches.
    PartiallyParallel,
    /// Type 3: load j sits at the end of the shared path, load i beyond it.
    InSeries,
}

impl ConnectionType {
    pub const ALL: [ConnectionType; 3] = [
        ConnectionType::InParallel,
        ConnectionType::PartiallyParallel,
        ConnectionType::InSeries,
    ];

    pub fn number(self) -> u8 {
        match self {
            ConnectionType::InParallel => 1,
            ConnectionType::PartiallyParallel => 2,
            ConnectionType::InSeries => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.get((n as usize).wrapping_sub(1)).copied()
    }
}

impl fmt::Display for ConnectionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "type {}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondaryCircuit {
    pub conn_type: ConnectionType,
    /// Shared path resistance R (ohm).
    pub r_shared: f64,
    pub r_i: f64,
    pub r_j: f64,
}

impl SecondaryCircuit {
    /// Validates the resistances against the connection type.
    pub fn new(conn_type: ConnectionType, r_shared: f64, r_i: f64, r_j: f64) -> Result<Self> {
        for (name, r) in [("R", r_shared), ("R_i", r_i), ("R_j", r_j)] {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::config(format!("{name}={r} must be finite and >= 0")));
            }
        }
        match conn_type {
            ConnectionType::InParallel if r_shared != 0.0 => {
                Err(Error::config("type 1 connection requires R = 0"))
            }
            ConnectionType::InSeries if r_j != 0.0 => {
                Err(Error::config("type 3 connection requires R_j = 0"))
            }
            _ => Ok(Self {
                conn_type,
                r_shared,
                r_i,
                r_j,
            }),
        }
    }

    /// Builds a circuit from common (R, R_i, R_j) values, zeroing whichever
    /// resistance the connection type does not have.
    pub fn of_type(conn_type: ConnectionType, r_shared: f64, r_i: f64, r_j: f64) -> Result<Self> {
        match conn_type {
            ConnectionType::InParallel => Self::new(conn_type, 0.0, r_i, r_j),
            ConnectionType::PartiallyParallel => Self::new(conn_type, r_shared, r_i, r_j),
            ConnectionType::InSeries => Self::new(conn_type, r_shared, r_i, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircuitSample {
    pub v_t: f64,
    pub p_i: f64,
    pub p_j: f64,
    pub v_i: f64,
    pub v_j: f64,
    pub i_i: f64,
    pub i_j: f64,
    pub i_shared: f64,
}

impl CircuitSample {
    /// Largest absolute residual of the KVL, KCL and power equations.
    pub fn residual(&self, c: &SecondaryCircuit) -> f64 {
        let kvl_i = self.v_t - self.i_shared * c.r_shared - self.i_i * c.r_i - self.v_i;
        let kvl_j = self.v_t - self.i_shared * c.r_shared - self.i_j * c.r_j - self.v_j;
        let kcl = self.i_i + self.i_j - self.i_shared;
        let pw_i = (self.v_i * self.i_i - 1000.0 * self.p_i) / self.v_i.max(1.0);
        let pw_j = (self.v_j * self.i_j - 1000.0 * self.p_j) / self.v_j.max(1.0);
        [kvl_i, kvl_j, kcl, pw_i, pw_j]
            .iter()
            .fold(0.0f64, |m, r| m.max(r.abs()))
    }
}

fn sample_at(v_t: f64, p_i: f64, p_j: f64, v_i: f64, v_j: f64) -> CircuitSample {
    let i_i = 1000.0 * p_i / v_i;
    let i_j = 1000.0 * p_j / v_j;
    CircuitSample {
        v_t,
        p_i,
        p_j,
        v_i,
        v_j,
        i_i,
        i_j,
        i_shared: i_i + i_j,
    }
}

/// Solves the constant-power secondary for both load voltages.
///
/// Runs damped fixed-point iteration from the no-drop currents, switching
/// to Newton steps if that stalls; 200 iterations in total.
pub fn solve_secondary(c: &SecondaryCircuit, v_t: f64, p_i: f64, p_j: f64) -> Result<CircuitSample> {
    if !(v_t > 0.0) || !v_t.is_finite() {
        return Err(Error::contract(format!("V_T={v_t} must be positive")));
    }
    if !(p_i >= 0.0 && p_j >= 0.0) || !p_i.is_finite() || !p_j.is_finite() {
        return Err(Error::contract(format!("loads ({p_i}, {p_j}) kW must be >= 0")));
    }
    let (wi, wj) = (1000.0 * p_i, 1000.0 * p_j);
    let (r, ri, rj) = (c.r_shared, c.r_i, c.r_j);
    if c.conn_type == ConnectionType::InParallel {
        // independent quadratics V^2 - V_T V + P R_x = 0
        for (w, rx) in [(wi, ri), (wj, rj)] {
            if v_t * v_t < 4.0 * w * rx {
                return Err(Error::Infeasible(format!(
                    "{:.3} kW through {rx} ohm exceeds what {v_t} V can deliver",
                    w / 1000.0
                )));
            }
        }
    }

    let map = |vi: f64, vj: f64| {
        let ii = wi / vi;
        let ij = wj / vj;
        let shared = (ii + ij) * r;
        (v_t - shared - ii * ri, v_t - shared - ij * rj)
    };

    // fixed point, seeded with currents at V_T
    let (mut vi, mut vj) = (v_t, v_t);
    let damping = 0.8;
    for _ in 0..FIXED_POINT_BUDGET {
        let (gi, gj) = map(vi, vj);
        let (ni, nj) = (vi + damping * (gi - vi), vj + damping * (gj - vj));
        if !(ni > 0.0 && nj > 0.0) {
            break;
        }
        let step = (ni - vi).abs().max((nj - vj).abs());
        vi = ni;
        vj = nj;
        if step < TOLERANCE_V {
            let (gi, gj) = map(vi, vj);
            return Ok(sample_at(v_t, p_i, p_j, gi, gj));
        }
    }

    // Newton on F(V) = V - map(V), restarting from V_T to land on the
    // high-voltage root
    let (mut vi, mut vj) = (v_t, v_t);
    for _ in 0..(MAX_ITERATIONS - FIXED_POINT_BUDGET) {
        let (gi, gj) = map(vi, vj);
        let (fi, fj) = (vi - gi, vj - gj);
        let a11 = 1.0 - wi * (r + ri) / (vi * vi);
        let a12 = -wj * r / (vj * vj);
        let a21 = -wi * r / (vi * vi);
        let a22 = 1.0 - wj * (r + rj) / (vj * vj);
        let det = a11 * a22 - a12 * a21;
        if det.abs() < 1e-14 {
            break;
        }
        let di = (fi * a22 - fj * a12) / det;
        let dj = (a11 * fj - a21 * fi) / det;
        vi -= di;
        vj -= dj;
        if !(vi > 0.0 && vj > 0.0) || !vi.is_finite() || !vj.is_finite() {
            break;
        }
        if di.abs().max(dj.abs()) < TOLERANCE_V {
            return Ok(sample_at(v_t, p_i, p_j, vi, vj));
        }
    }
    Err(Error::Infeasible(format!(
        "no operating point for P_i={p_i} kW, P_j={p_j} kW at V_T={v_t} V ({})",
        c.conn_type
    )))
}

/// Load-level bin: both loads drawn uniformly from `[lo, hi]` kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadBin {
    pub lo: f64,
    pub hi: f64,
}

/// Transformer-voltage bands (volts of total width around 120 V).
pub const DEFAULT_BANDS: [f64; 5] = [0.2, 0.5, 1.0, 2.0, 5.0];
pub const NOMINAL_VOLTS: f64 = 120.0;
pub const DEFAULT_MC_SAMPLES: usize = 10_000;

pub fn default_load_bins() -> Vec<LoadBin> {
    [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 5.0), (5.0, 15.0)]
        .iter()
        .map(|&(lo, hi)| LoadBin { lo, hi })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub band: f64,
    pub samples_per_bin: usize,
    pub bins: Vec<LoadBin>,
    pub seed: u64,
    /// Draw one load level per sample and apply it to both loads.
    #[serde(default)]
    pub tied_loads: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinPcc {
    pub bin: LoadBin,
    pub band: f64,
    /// `None` when the sampled voltages have no variance.
    pub pcc: Option<f64>,
    pub redrawn: usize,
}

/// PCC between the two load voltages per load bin.
///
/// Draw `s` uses the `s`-th ChaCha stream of `seed` in every bin, so bins
/// see common random numbers and runs are reproducible in any order.
pub fn monte_carlo_pcc(c: &SecondaryCircuit, cfg: &MonteCarloConfig) -> Result<Vec<BinPcc>> {
    if cfg.samples_per_bin < 100 {
        return Err(Error::config("need at least 100 Monte Carlo samples per bin"));
    }
    if !(cfg.band >= 0.0) || !cfg.band.is_finite() {
        return Err(Error::config(format!("band {} must be >= 0", cfg.band)));
    }
    let max_redraws = cfg.samples_per_bin / 10;
    cfg.bins
        .iter()
        .map(|bin| {
            if !(bin.lo >= 0.0 && bin.hi >= bin.lo) {
                return Err(Error::config(format!(
                    "load bin [{}, {}] is invalid",
                    bin.lo, bin.hi
                )));
            }
            let mut vi = Vec::with_capacity(cfg.samples_per_bin);
            let mut vj = Vec::with_capacity(cfg.samples_per_bin);
            let mut redrawn = 0;
            for s in 0..cfg.samples_per_bin {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(s as u64);
                loop {
                    let v_t = NOMINAL_VOLTS + cfg.band * (rng.random::<f64>() - 0.5);
                    let p_i = bin.lo + (bin.hi - bin.lo) * rng.random::<f64>();
                    let p_j = if cfg.tied_loads {
                        p_i
                    } else {
                        bin.lo + (bin.hi - bin.lo) * rng.random::<f64>()
                    };
                    match solve_secondary(c, v_t, p_i, p_j) {
                        Ok(smp) => {
                            vi.push(smp.v_i);
                            vj.push(smp.v_j);
                            break;
                        }
                        Err(Error::Infeasible(_)) => {
                            redrawn += 1;
                            if redrawn > max_redraws {
                                return Err(Error::config(format!(
                                    "more than 10% of draws infeasible in bin [{}, {}] kW",
                                    bin.lo, bin.hi
                                )));
                            }
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            Ok(BinPcc {
                bin: *bin,
                band: cfg.band,
                pcc: pcc(&vi, &vj)?,
                redrawn,
            })
        })
        .collect()
}
