//! Plain-text run configuration: flat `key = value` lines, `#` comments,
//! documented defaults. The effective configuration (defaults filled in,
//! keys sorted) can be re-emitted and re-parsed losslessly, and its text
//! hash stamps every output file.

use crate::grid::{Box3, GridSpec};
use crate::report::text_hash;
use crate::{Error, Result};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Which experiment the runner dispatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    SingleRun,
    OracleCheck,
    HRate,
    PmlRate,
    Symmetry,
    ResolventDecay,
}

impl Study {
    pub fn name(&self) -> &'static str {
        match self {
            Study::SingleRun => "single-run",
            Study::OracleCheck => "oracle-check",
            Study::HRate => "h-rate",
            Study::PmlRate => "pml-rate",
            Study::Symmetry => "symmetry",
            Study::ResolventDecay => "resolvent-decay",
        }
    }

    fn from_name(s: &str) -> Option<Study> {
        Some(match s {
            "single-run" => Study::SingleRun,
            "oracle-check" => Study::OracleCheck,
            "h-rate" => Study::HRate,
            "pml-rate" => Study::PmlRate,
            "symmetry" => Study::Symmetry,
            "resolvent-decay" => Study::ResolventDecay,
            _ => return None,
        })
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub study: Study,
    // geometry
    pub r_phys: f64,
    pub rho: f64,
    pub obstacle_radius: f64,
    pub dx: f64,
    // pml
    pub sigma0: f64,
    pub m_pml: u32,
    /// Stretching rate; defaults to `1/t_end`.
    pub s1: f64,
    pub safety: f64,
    // source
    pub support: Box3,
    pub t_on: f64,
    pub t_off: f64,
    pub amplitude: f64,
    // noise
    pub h0: f64,
    pub level: u32,
    pub base_seed: u64,
    pub noise_dump: bool,
    // time
    pub t_end: f64,
    pub snapshot_every: usize,
    // probes and monte carlo
    pub probes: Vec<[f64; 3]>,
    pub mc_samples: usize,
    pub output_dir: PathBuf,
    // study-specific knobs
    pub oracle_dx_values: Vec<f64>,
    pub oracle_pad_radius: f64,
    pub oracle_subdivisions: usize,
    /// `midpoint` or `gauss` (product Gauss of `oracle.order` per sub-cell).
    pub oracle_rule: String,
    pub oracle_order: usize,
    pub hrate_levels: Vec<u32>,
    pub hrate_ref_level: u32,
    pub hrate_eval_radius: f64,
    pub hrate_eval_spacing: f64,
    pub hrate_eval_fine_spacing: f64,
    pub hrate_eval_fine_margin: f64,
    pub hrate_times: usize,
    pub hrate_manufactured: bool,
    pub pmlrate_sigma0_values: Vec<f64>,
    pub pmlrate_measure_floor: bool,
    pub symmetry_a: [f64; 3],
    pub symmetry_b: [f64; 3],
    pub symmetry_impulse_width: f64,
    pub resolvent_probe: [f64; 3],
    pub resolvent_window: [f64; 2],
    pub resolvent_points: usize,
    pub resolvent_dt: f64,
}

fn parse_f64(field: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| Error::config(field, format!("expected a number, got `{v}`")))
}

fn parse_scalar_list(field: &str, v: &str) -> Result<Vec<f64>> {
    v.split_whitespace().map(|t| parse_f64(field, t)).collect()
}

fn parse_point(field: &str, v: &str) -> Result<[f64; 3]> {
    let parts = parse_scalar_list(field, v)?;
    if parts.len() != 3 {
        return Err(Error::config(field, format!("expected 3 coordinates, got {}", parts.len())));
    }
    Ok([parts[0], parts[1], parts[2]])
}

struct Raw {
    map: HashMap<String, String>,
    used: std::cell::RefCell<Vec<String>>,
}

impl Raw {
    fn get(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().push(key.to_string());
        self.map.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(key, "missing required field"))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            Some(v) => parse_f64(key, v),
            None => Ok(default),
        }
    }

    fn f64_req(&self, key: &str) -> Result<f64> {
        parse_f64(key, self.require(key)?)
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| Error::config(key, format!("expected a nonnegative integer, got `{v}`"))),
            None => Ok(default),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| Error::config(key, format!("expected an integer, got `{v}`"))),
            None => Ok(default),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::config(key, format!("expected true/false, got `{v}`"))),
            None => Ok(default),
        }
    }
}

/// Parses configuration text. Unknown keys are rejected (they are usually
/// typos), missing optional keys take their documented defaults.
pub fn parse_config_text(text: &str) -> Result<RunConfig> {
    let mut map = HashMap::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(
                &format!("line {}", lineno + 1),
                format!("expected `key = value`, got `{line}`"),
            )
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::config(&key, "duplicate key"));
        }
    }
    let raw = Raw {
        map,
        used: Default::default(),
    };

    let study_name = raw.require("study")?;
    let study = Study::from_name(study_name).ok_or_else(|| {
        Error::config(
            "study",
            format!(
                "unknown study `{study_name}`; expected one of single-run, oracle-check, h-rate, pml-rate, symmetry, resolvent-decay"
            ),
        )
    })?;

    let t_end = raw.f64_req("time.t_end")?;
    if !(t_end >= 0.0) {
        return Err(Error::config("time.t_end", "must be nonnegative"));
    }

    let support = {
        let v = raw.require("source.box")?;
        let parts = parse_scalar_list("source.box", v)?;
        if parts.len() != 6 {
            return Err(Error::config(
                "source.box",
                format!("expected 6 numbers (lo xyz, hi xyz), got {}", parts.len()),
            ));
        }
        Box3::new([parts[0], parts[1], parts[2]], [parts[3], parts[4], parts[5]])
    };

    let probes = match raw.get("probes") {
        Some(v) if !v.trim().is_empty() => v
            .split(';')
            .map(|p| parse_point("probes", p.trim()))
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };

    let cfg = RunConfig {
        study,
        r_phys: raw.f64_req("geometry.R")?,
        rho: raw.f64_req("geometry.rho")?,
        obstacle_radius: raw.f64_or("geometry.obstacle_radius", 0.0)?,
        dx: raw.f64_req("geometry.dx")?,
        sigma0: raw.f64_or("pml.sigma0", 4.0)?,
        m_pml: raw.u64_or("pml.m", 2)? as u32,
        s1: raw.f64_or("pml.s1", 1.0 / t_end.max(f64::MIN_POSITIVE))?,
        safety: raw.f64_or("pml.safety", 0.9)?,
        support,
        t_on: raw.f64_req("source.t_on")?,
        t_off: raw.f64_req("source.t_off")?,
        amplitude: raw.f64_or("source.amplitude", 1.0)?,
        h0: raw.f64_req("noise.h0")?,
        level: raw.u64_or("noise.level", 0)? as u32,
        base_seed: raw.u64_or("noise.base_seed", 1)?,
        noise_dump: raw.bool_or("noise.dump", false)?,
        t_end,
        snapshot_every: raw.usize_or("time.snapshot_every", 0)?,
        probes,
        mc_samples: raw.usize_or("mc.samples", 64)?,
        output_dir: PathBuf::from(raw.get("output.dir").unwrap_or("out")),
        oracle_dx_values: match raw.get("oracle.dx_values") {
            Some(v) => parse_scalar_list("oracle.dx_values", v)?,
            None => vec![0.08, 0.04, 0.02],
        },
        oracle_pad_radius: raw.f64_or("oracle.pad_radius", 1.84)?,
        oracle_subdivisions: raw.usize_or("oracle.subdivisions", 10)?,
        hrate_levels: match raw.get("hrate.levels") {
            Some(v) => parse_scalar_list("hrate.levels", v)?
                .into_iter()
                .map(|x| x as u32)
                .collect(),
            None => vec![0, 1, 2, 3],
        },
        hrate_ref_level: raw.u64_or("hrate.ref_level", 5)? as u32,
        hrate_eval_radius: raw.f64_or("hrate.eval_radius", 0.95)?,
        hrate_eval_spacing: raw.f64_or("hrate.eval_spacing", 0.22)?,
        hrate_eval_fine_spacing: raw.f64_or("hrate.eval_fine_spacing", 0.06)?,
        hrate_eval_fine_margin: raw.f64_or("hrate.eval_fine_margin", 0.06)?,
        hrate_times: raw.usize_or("hrate.times", 24)?,
        hrate_manufactured: raw.bool_or("hrate.manufactured", false)?,
        pmlrate_sigma0_values: match raw.get("pmlrate.sigma0_values") {
            Some(v) => parse_scalar_list("pmlrate.sigma0_values", v)?,
            None => vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0],
        },
        pmlrate_measure_floor: raw.bool_or("pmlrate.measure_floor", true)?,
        symmetry_a: match raw.get("symmetry.a") {
            Some(v) => parse_point("symmetry.a", v)?,
            None => [0.5, 0.0, 0.0],
        },
        symmetry_b: match raw.get("symmetry.b") {
            Some(v) => parse_point("symmetry.b", v)?,
            None => [-0.3, 0.25, 0.1],
        },
        symmetry_impulse_width: raw.f64_or("symmetry.impulse_width", 0.3)?,
        resolvent_probe: match raw.get("resolvent.probe") {
            Some(v) => parse_point("resolvent.probe", v)?,
            None => [0.6, 0.0, 0.0],
        },
        resolvent_window: match raw.get("resolvent.window") {
            Some(v) => {
                let parts = parse_scalar_list("resolvent.window", v)?;
                if parts.len() != 2 {
                    return Err(Error::config("resolvent.window", "expected 2 bandwidth multiples"));
                }
                [parts[0], parts[1]]
            }
            None => [2.0, 8.0],
        },
        resolvent_points: raw.usize_or("resolvent.points", 9)?,
        resolvent_dt: raw.f64_or("resolvent.dt", 5e-4)?,
    };

    // reject unknown keys
    let used: std::collections::HashSet<String> = raw.used.borrow().iter().cloned().collect();
    for key in raw.map.keys() {
        if !used.contains(key) {
            return Err(Error::config(key, "unknown key"));
        }
    }

    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text)
}

impl RunConfig {
    /// Geometry as a grid spec.
    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            rho: self.rho,
            r_phys: self.r_phys,
            obstacle_radius: self.obstacle_radius,
            dx: self.dx,
            center: [0.0; 3],
        }
    }

    /// Cross-field validation with field-named messages.
    pub fn validate(&self) -> Result<()> {
        self.grid_spec()
            .validate()
            .map_err(|e| Error::config("geometry", e.to_string()))?;
        if !(self.t_on >= 0.0 && self.t_off > self.t_on) {
            return Err(Error::config(
                "source.t_on",
                "require 0 <= t_on < t_off",
            ));
        }
        if self.t_off >= self.t_end && self.t_end > 0.0 {
            return Err(Error::config(
                "source.t_off",
                format!("t_off = {} must be smaller than time.t_end = {}", self.t_off, self.t_end),
            ));
        }
        self.grid_spec()
            .contains_support_box(&self.support)
            .map_err(|e| Error::config("source.box", e.to_string()))?;
        if !(self.h0 > 0.0) {
            return Err(Error::config("noise.h0", "must be positive"));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return Err(Error::config("pml.safety", "must be in (0, 1)"));
        }
        if !(self.s1 > 0.0) {
            return Err(Error::config("pml.s1", "must be positive"));
        }
        if self.sigma0 < 0.0 {
            return Err(Error::config("pml.sigma0", "must be nonnegative"));
        }
        if self.m_pml < 1 {
            return Err(Error::config("pml.m", "must be >= 1"));
        }
        Ok(())
    }

    /// The effective configuration: every field, defaults included, sorted by
    /// key. Re-parsing this text reproduces the configuration exactly.
    pub fn effective_text(&self) -> String {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("study", self.study.name().to_string());
        put("geometry.R", format!("{}", self.r_phys));
        put("geometry.rho", format!("{}", self.rho));
        put("geometry.obstacle_radius", format!("{}", self.obstacle_radius));
        put("geometry.dx", format!("{}", self.dx));
        put("pml.sigma0", format!("{}", self.sigma0));
        put("pml.m", format!("{}", self.m_pml));
        put("pml.s1", format!("{}", self.s1));
        put("pml.safety", format!("{}", self.safety));
        put(
            "source.box",
            format!(
                "{} {} {} {} {} {}",
                self.support.lo[0],
                self.support.lo[1],
                self.support.lo[2],
                self.support.hi[0],
                self.support.hi[1],
                self.support.hi[2]
            ),
        );
        put("source.t_on", format!("{}", self.t_on));
        put("source.t_off", format!("{}", self.t_off));
        put("source.amplitude", format!("{}", self.amplitude));
        put("noise.h0", format!("{}", self.h0));
        put("noise.level", format!("{}", self.level));
        put("noise.base_seed", format!("{}", self.base_seed));
        put("noise.dump", self.noise_dump.to_string());
        put("time.t_end", format!("{}", self.t_end));
        put("time.snapshot_every", format!("{}", self.snapshot_every));
        put(
            "probes",
            self.probes
                .iter()
                .map(|p| format!("{} {} {}", p[0], p[1], p[2]))
                .collect::<Vec<_>>()
                .join("; "),
        );
        put("mc.samples", format!("{}", self.mc_samples));
        put("output.dir", self.output_dir.display().to_string());
        put(
            "oracle.dx_values",
            self.oracle_dx_values
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(" "),
        );
        put("oracle.pad_radius", format!("{}", self.oracle_pad_radius));
        put("oracle.subdivisions", format!("{}", self.oracle_subdivisions));
        put(
            "hrate.levels",
            self.hrate_levels
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(" "),
        );
        put("hrate.ref_level", format!("{}", self.hrate_ref_level));
        put("hrate.eval_radius", format!("{}", self.hrate_eval_radius));
        put("hrate.eval_spacing", format!("{}", self.hrate_eval_spacing));
        put("hrate.eval_fine_spacing", format!("{}", self.hrate_eval_fine_spacing));
        put("hrate.eval_fine_margin", format!("{}", self.hrate_eval_fine_margin));
        put("hrate.times", format!("{}", self.hrate_times));
        put("hrate.manufactured", self.hrate_manufactured.to_string());
        put(
            "pmlrate.sigma0_values",
            self.pmlrate_sigma0_values
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(" "),
        );
        put("pmlrate.measure_floor", self.pmlrate_measure_floor.to_string());
        put(
            "symmetry.a",
            format!("{} {} {}", self.symmetry_a[0], self.symmetry_a[1], self.symmetry_a[2]),
        );
        put(
            "symmetry.b",
            format!("{} {} {}", self.symmetry_b[0], self.symmetry_b[1], self.symmetry_b[2]),
        );
        put("symmetry.impulse_width", format!("{}", self.symmetry_impulse_width));
        put(
            "resolvent.probe",
            format!(
                "{} {} {}",
                self.resolvent_probe[0], self.resolvent_probe[1], self.resolvent_probe[2]
            ),
        );
        put(
            "resolvent.window",
            format!("{} {}", self.resolvent_window[0], self.resolvent_window[1]),
        );
        put("resolvent.points", format!("{}", self.resolvent_points));
        put("resolvent.dt", format!("{}", self.resolvent_dt));

        let mut out = String::new();
        for (k, v) in map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Provenance hash over the effective configuration, excluding the output
    /// location: runs of the same experiment hash identically wherever their
    /// artifacts land.
    pub fn hash(&self) -> String {
        let filtered: String = self
            .effective_text()
            .lines()
            .filter(|l| !l.starts_with("output.dir"))
            .collect::<Vec<_>>()
            .join("\n");
        text_hash(&filtered)
    }
}
