//! Output artifacts: CSV tables with provenance headers, flat key=value
//! metadata records, and the pinned acceptance gates the runner checks
//! results against.

use crate::numerics::fnv1a64;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Pinned thresholds for the gated studies.
pub mod gates {
    /// Per-cell sample-mean band over 1e4 seeds.
    pub const NOISE_MEAN_BAND: f64 = 0.05;
    /// Per-cell sample-variance band over 1e4 seeds.
    pub const NOISE_VAR_LO: f64 = 0.94;
    pub const NOISE_VAR_HI: f64 = 1.06;
    /// Relative band for the mean squared noise norm against the cell count.
    pub const NOISE_NORM_REL: f64 = 0.05;
    /// Relative band for Var[(W_h, x1)] against 1/3 at the finest level.
    pub const PAIRING_FINAL_REL: f64 = 0.10;
    /// Solver vs retarded potential, per probe, at dx = h/4.
    pub const ORACLE_REL_ERR: f64 = 0.05;
    /// Order of the solver-oracle convergence over three dyadic spacings.
    pub const ORACLE_SLOPE_MIN: f64 = 1.8;
    /// Laplace transform of the oracle trace vs the Helmholtz convolution.
    pub const LAPLACE_REL_ERR: f64 = 1e-3;
    /// max/min of the Green-continuity ratio over four dyadic halvings.
    pub const GREEN_RATIO_SPREAD: f64 = 3.0;
    /// Band for the noise-refinement rate of E[err^2].
    pub const H_RATE_SLOPE_LO: f64 = 0.7;
    pub const H_RATE_SLOPE_HI: f64 = 1.3;
    /// Log-linear slope of the PML error in sigma0*d/2.
    pub const PML_SLOPE_MAX: f64 = -0.5;
    /// Points required above the discretization floor.
    pub const PML_MIN_POINTS: usize = 4;
    /// Reciprocity, free space.
    pub const SYMMETRY_FREE_REL: f64 = 1e-6;
    /// Reciprocity with the spherical obstacle.
    pub const SYMMETRY_OBSTACLE_REL: f64 = 1e-3;
    /// Log-log decay of |u_L| beyond twice the source bandwidth.
    pub const RESOLVENT_SLOPE_MAX: f64 = -4.0;
}

/// Hex form of the FNV-1a hash used as a provenance id.
pub fn text_hash(text: &str) -> String {
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

/// CSV table with a provenance comment line and a header row. Values are
/// written with the shortest round-trip float formatting, so identical inputs
/// produce identical bytes.
pub struct CsvTable {
    buf: String,
    columns: usize,
}

impl CsvTable {
    pub fn new(config_hash: &str, header: &[&str]) -> CsvTable {
        let mut buf = String::new();
        let _ = writeln!(buf, "# config_hash={config_hash}");
        let _ = writeln!(buf, "{}", header.join(","));
        CsvTable {
            buf,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.columns, "row width mismatch");
        let mut first = true;
        for v in values {
            if !first {
                self.buf.push(',');
            }
            let _ = write!(self.buf, "{v}");
            first = false;
        }
        self.buf.push('\n');
    }

    pub fn row_mixed(&mut self, values: &[String]) {
        assert_eq!(values.len(), self.columns, "row width mismatch");
        self.buf.push_str(&values.join(","));
        self.buf.push('\n');
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.buf.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }
}

/// Direction of a gate comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateCmp {
    /// value <= threshold
    Le,
    /// value >= threshold
    Ge,
}

#[derive(Debug, Clone)]
pub struct GateCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub cmp: GateCmp,
    pub pass: bool,
}

impl GateCheck {
    pub fn le(name: &str, value: f64, threshold: f64) -> GateCheck {
        GateCheck {
            name: name.to_string(),
            value,
            threshold,
            cmp: GateCmp::Le,
            pass: value <= threshold,
        }
    }

    pub fn ge(name: &str, value: f64, threshold: f64) -> GateCheck {
        GateCheck {
            name: name.to_string(),
            value,
            threshold,
            cmp: GateCmp::Ge,
            pass: value >= threshold,
        }
    }
}

/// Pass/fail record for one study run.
#[derive(Debug, Clone, Default)]
pub struct StudySummary {
    pub study: String,
    pub config_hash: String,
    pub checks: Vec<GateCheck>,
    /// Ungated quantities worth recording (name, value).
    pub extra: Vec<(String, String)>,
}

impl StudySummary {
    pub fn new(study: &str, config_hash: &str) -> StudySummary {
        StudySummary {
            study: study.to_string(),
            config_hash: config_hash.to_string(),
            ..Default::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn note(&mut self, name: &str, value: impl ToString) {
        self.extra.push((name.to_string(), value.to_string()));
    }

    /// Writes `summary.csv`: one row per gate, then one row per note.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut t = CsvTable::new(&self.config_hash, &["study", "name", "value", "threshold", "cmp", "pass"]);
        for c in &self.checks {
            let cmp = match c.cmp {
                GateCmp::Le => "le",
                GateCmp::Ge => "ge",
            };
            t.row_mixed(&[
                self.study.clone(),
                c.name.clone(),
                format!("{}", c.value),
                format!("{}", c.threshold),
                cmp.to_string(),
                c.pass.to_string(),
            ]);
        }
        for (name, value) in &self.extra {
            t.row_mixed(&[
                self.study.clone(),
                format!("note:{name}"),
                value.clone(),
                String::new(),
                String::new(),
                String::new(),
            ]);
        }
        t.write_to(path)
    }
}

/// Flat key=value metadata record, keys written in the given order.
pub fn write_metadata(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut buf = String::new();
    for (k, v) in entries {
        let _ = writeln!(buf, "{k}={v}");
    }
    std::fs::write(path, buf.as_bytes()).map_err(|e| Error::io(path, e))
}
