//! Study dispatcher: turns a [`RunConfig`](crate::config::RunConfig) into CSV
//! artifacts, a flat metadata record and a gated summary.

use crate::analysis::time_space_l2;
use crate::config::{RunConfig, Study};
use crate::grid::{cell_partition, Grid};
use crate::noise::sample_noise;
use crate::oracle::{QuadratureSpec, RetardedTable};
use crate::report::{gates, text_hash, CsvTable, GateCheck, StudySummary};
use crate::solver::{noise_source_pattern, PmlParams, TimeProfile, WaveSolver};
use crate::source::SourceProfile;
use crate::studies::{
    green_symmetry_check, h_convergence_study, oracle_equivalence_study, pml_convergence_study,
    resolvent_decay_check, HRateConfig, OracleCheckConfig, PmlStudyConfig, SymmetryConfig,
};
use crate::analysis::{fit_rate, FitScale, RatePoint};
use crate::{Error, Result};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Everything a study run leaves behind.
#[derive(Debug)]
pub struct StudyArtifacts {
    pub summary: StudySummary,
    pub files: Vec<PathBuf>,
}

impl StudyArtifacts {
    pub fn passed(&self) -> bool {
        self.summary.passed()
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_run_metadata(
    dir: &Path,
    cfg: &RunConfig,
    extras: &[(String, String)],
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    let mut entries: Vec<(String, String)> = vec![("config_hash".into(), cfg.hash())];
    entries.extend(extras.iter().cloned());
    for line in cfg.effective_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            entries.push((format!("config.{k}"), v.to_string()));
        }
    }
    let path = dir.join("metadata.txt");
    crate::report::write_metadata(&path, &entries)?;
    files.push(path);
    Ok(())
}

/// Runs the configured study, writes its artifacts under `cfg.output_dir`
/// and returns the gated summary. The run is deterministic for a fixed
/// configuration, independent of the worker count.
pub fn run_study(cfg: &RunConfig) -> Result<StudyArtifacts> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;
    match cfg.study {
        Study::SingleRun => run_single(cfg, &dir),
        Study::OracleCheck => run_oracle_check(cfg, &dir),
        Study::HRate => run_h_rate(cfg, &dir),
        Study::PmlRate => run_pml_rate(cfg, &dir),
        Study::Symmetry => run_symmetry(cfg, &dir),
        Study::ResolventDecay => run_resolvent(cfg, &dir),
    }
}

fn run_single(cfg: &RunConfig, dir: &Path) -> Result<StudyArtifacts> {
    let hash = cfg.hash();
    let grid = Arc::new(Grid::build(cfg.grid_spec())?);
    let part = cell_partition(&cfg.grid_spec(), cfg.support, cfg.h0, cfg.level)?;
    let noise = sample_noise(&part, cfg.base_seed);
    let src = SourceProfile::new(cfg.support, cfg.t_on, cfg.t_off, cfg.amplitude)?;
    let pml = PmlParams {
        r_phys: cfg.r_phys,
        rho: cfg.rho,
        sigma0: cfg.sigma0,
        m_pml: cfg.m_pml,
        s1: cfg.s1,
    };
    let pattern = noise_source_pattern(&grid, &noise, &src);
    let solver = WaveSolver::new(
        grid.clone(),
        pml,
        pattern,
        TimeProfile::Bump {
            t_on: cfg.t_on,
            t_off: cfg.t_off,
        },
        cfg.safety,
    )?;
    let run = solver.run(
        cfg.t_end,
        &cfg.probes,
        cfg.snapshot_every,
        Some(cfg.base_seed),
        Some(cfg.level),
    )?;

    let mut files = Vec::new();

    let mut header: Vec<String> = vec!["t".into()];
    for i in 0..run.probe_series.len() {
        header.push(format!("probe{i}"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut probes_csv = CsvTable::new(&hash, &header_refs);
    let n_samples = run.physical_l2.len();
    for n in 0..n_samples {
        let mut row = vec![n as f64 * run.dt];
        for series in &run.probe_series {
            row.push(series[n]);
        }
        probes_csv.row(&row);
    }
    let p = dir.join("probes.csv");
    probes_csv.write_to(&p)?;
    files.push(p);

    let mut norms_csv = CsvTable::new(&hash, &["t", "physical_l2"]);
    for (n, v) in run.physical_l2.iter().enumerate() {
        norms_csv.row(&[n as f64 * run.dt, *v]);
    }
    let p = dir.join("norms.csv");
    norms_csv.write_to(&p)?;
    files.push(p);

    if cfg.noise_dump {
        let mut noise_csv = CsvTable::new(&hash, &["i", "j", "k", "xi"]);
        for c in 0..part.cell_count() {
            let ijk = part.cell_ijk(c);
            noise_csv.row(&[ijk[0] as f64, ijk[1] as f64, ijk[2] as f64, noise.xi[c]]);
        }
        let p = dir.join("noise.csv");
        noise_csv.write_to(&p)?;
        files.push(p);
    }

    if let Some(snaps) = &run.snapshots {
        for (fi, frame) in snaps.frames.iter().enumerate() {
            let step = fi * snaps.every;
            let mut t = CsvTable::new(&hash, &["node", "u"]);
            for (i, v) in frame.iter().enumerate() {
                t.row(&[i as f64, *v]);
            }
            let p = dir.join(format!("snapshot_{step:06}.csv"));
            t.write_to(&p)?;
            files.push(p);
        }
    }

    let mut summary = StudySummary::new("single-run", &hash);
    summary.note("steps", run.n_steps());
    summary.note("dt", run.dt);
    summary.note("grid_hash", format!("{:016x}", grid.hash()));
    summary.note("time_space_l2", time_space_l2(&run));
    let extras = vec![
        ("grid_hash".to_string(), format!("{:016x}", grid.hash())),
        ("dt".to_string(), format!("{}", run.dt)),
        ("steps".to_string(), format!("{}", run.n_steps())),
    ];
    write_run_metadata(dir, cfg, &extras, &mut files)?;
    let p = dir.join("summary.csv");
    summary.write_to(&p)?;
    files.push(p);
    Ok(StudyArtifacts { summary, files })
}

fn run_oracle_check(cfg: &RunConfig, dir: &Path) -> Result<StudyArtifacts> {
    if cfg.probes.is_empty() {
        return Err(Error::config("probes", "oracle-check needs at least one probe"));
    }
    let hash = cfg.hash();
    let study = OracleCheckConfig {
        support: cfg.support,
        h0: cfg.h0,
        level: cfg.level,
        seed: cfg.base_seed,
        t_on: cfg.t_on,
        t_off: cfg.t_off,
        amplitude: cfg.amplitude,
        probes: cfg.probes.clone(),
        dx_values: cfg.oracle_dx_values.clone(),
        t_end: cfg.t_end,
        r_phys: cfg.r_phys,
        pad_radius: cfg.oracle_pad_radius,
        oracle_quad: QuadratureSpec::midpoint(cfg.oracle_subdivisions),
        safety: cfg.safety,
    };
    let out = oracle_equivalence_study(&study)?;

    let mut header: Vec<String> = vec!["dx".into(), "pooled_rel_err".into()];
    for i in 0..cfg.probes.len() {
        header.push(format!("probe{i}_rel_err"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut t = CsvTable::new(&hash, &header_refs);
    for (i, &dx) in study.dx_values.iter().enumerate() {
        let mut row = vec![dx, out.pooled[i]];
        row.extend(&out.per_probe[i]);
        t.row(&row);
    }
    let mut files = Vec::new();
    let p = dir.join("oracle_check.csv");
    t.write_to(&p)?;
    files.push(p);

    // the error gate applies at dx = h/4; fall back to the finest spacing if
    // the sweep does not contain it
    let h = cfg.h0 / (1u64 << cfg.level) as f64;
    let gate_idx = study
        .dx_values
        .iter()
        .position(|&dx| (dx - h / 4.0).abs() < 1e-12)
        .unwrap_or(study.dx_values.len() - 1);
    let gate_worst = out.per_probe[gate_idx]
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    let mut summary = StudySummary::new("oracle-check", &hash);
    summary.checks.push(GateCheck::le(
        &format!("max_probe_rel_err_at_dx_{}", study.dx_values[gate_idx]),
        gate_worst,
        gates::ORACLE_REL_ERR,
    ));
    summary
        .checks
        .push(GateCheck::ge("convergence_slope", out.fit.slope, gates::ORACLE_SLOPE_MIN));
    summary.note("slope_ci", out.fit.slope_ci);
    summary.note("fit_residual", out.fit.residual);

    write_run_metadata(dir, cfg, &[], &mut files)?;
    let p = dir.join("summary.csv");
    summary.write_to(&p)?;
    files.push(p);
    Ok(StudyArtifacts { summary, files })
}

fn run_h_rate(cfg: &RunConfig, dir: &Path) -> Result<StudyArtifacts> {
    let hash = cfg.hash();
    let mut files = Vec::new();
    let mut summary = StudySummary::new("h-rate", &hash);

    if cfg.hrate_manufactured {
        // fit-sanity path: synthetic errors err^2 = h through the same
        // reporting machinery; the fitted slope must be exactly 1
        let points: Vec<RatePoint> = cfg
            .hrate_levels
            .iter()
            .map(|&l| {
                let h = cfg.h0 / (1u64 << l) as f64;
                RatePoint {
                    parameter: h,
                    error: h,
                    ci_halfwidth: 0.0,
                }
            })
            .collect();
        let fit = fit_rate(&points, FitScale::LogLog)?;
        let mut t = CsvTable::new(&hash, &["h", "err_sq", "ci"]);
        for p in &points {
            t.row(&[p.parameter, p.error, p.ci_halfwidth]);
        }
        let p = dir.join("h_rate.csv");
        t.write_to(&p)?;
        files.push(p);
        summary.checks.push(GateCheck::le(
            "manufactured_slope_deviation",
            (fit.slope - 1.0).abs(),
            1e-12,
        ));
        summary.note("slope", fit.slope);
    } else {
        let study = HRateConfig {
            support: cfg.support,
            h0: cfg.h0,
            measured_levels: cfg.hrate_levels.clone(),
            ref_level: cfg.hrate_ref_level,
            n_seeds: cfg.mc_samples,
            base_seed: cfg.base_seed,
            t_on: cfg.t_on,
            t_off: cfg.t_off,
            amplitude: cfg.amplitude,
            eval_radius: cfg.hrate_eval_radius,
            eval_spacing: cfg.hrate_eval_spacing,
            eval_fine_spacing: cfg.hrate_eval_fine_spacing,
            eval_fine_margin: cfg.hrate_eval_fine_margin,
            n_times: cfg.hrate_times,
            t_end: cfg.t_end,
        };
        let out = h_convergence_study(&study)?;
        let mut t = CsvTable::new(&hash, &["h", "err_sq_mean", "ci", "err_sq_exact", "noise_norm_mean"]);
        for ((p, &e), &nn) in out
            .points
            .iter()
            .zip(&out.exact)
            .zip(&out.noise_norm_means)
        {
            t.row(&[p.parameter, p.error, p.ci_halfwidth, e, nn]);
        }
        let p = dir.join("h_rate.csv");
        t.write_to(&p)?;
        files.push(p);

        // CI-adjusted band check: the slope interval must overlap the band
        summary.checks.push(GateCheck::le(
            "slope_minus_ci",
            out.fit.slope - out.fit.slope_ci,
            gates::H_RATE_SLOPE_HI,
        ));
        summary.checks.push(GateCheck::ge(
            "slope_plus_ci",
            out.fit.slope + out.fit.slope_ci,
            gates::H_RATE_SLOPE_LO,
        ));
        summary.note("slope", out.fit.slope);
        summary.note("slope_ci", out.fit.slope_ci);
        summary.note("noise_norm_exponent", out.noise_norm_exponent);
    }

    write_run_metadata(dir, cfg, &[], &mut files)?;
    let p = dir.join("summary.csv");
    summary.write_to(&p)?;
    files.push(p);
    Ok(StudyArtifacts { summary, files })
}

fn run_pml_rate(cfg: &RunConfig, dir: &Path) -> Result<StudyArtifacts> {
    let hash = cfg.hash();
    let study = PmlStudyConfig {
        r_phys: cfg.r_phys,
        rho: cfg.rho,
        obstacle_radius: cfg.obstacle_radius,
        dx: cfg.dx,
        sigma0_values: cfg.pmlrate_sigma0_values.clone(),
        m_pml: cfg.m_pml,
        s1: Some(cfg.s1),
        support: cfg.support,
        h0: cfg.h0,
        level: cfg.level,
        seed: cfg.base_seed,
        t_on: cfg.t_on,
        t_off: cfg.t_off,
        amplitude: cfg.amplitude,
        t_end: cfg.t_end,
        safety: cfg.safety,
        snapshot_every: cfg.snapshot_every.max(1),
        measure_floor: cfg.pmlrate_measure_floor,
    };
    let out = pml_convergence_study(&study)?;

    let mut t = CsvTable::new(&hash, &["sigma0", "sigma0_d_over_2", "error"]);
    for &(s0, x, e) in &out.points {
        t.row(&[s0, x, e]);
    }
    let mut files = Vec::new();
    let p = dir.join("pml_rate.csv");
    t.write_to(&p)?;
    files.push(p);

    let mut summary = StudySummary::new("pml-rate", &hash);
    summary.checks.push(GateCheck::ge(
        "points_above_floor",
        out.fitted_points as f64,
        gates::PML_MIN_POINTS as f64,
    ));
    match &out.fit {
        Some(fit) => {
            summary
                .checks
                .push(GateCheck::le("decay_slope", fit.slope, gates::PML_SLOPE_MAX));
            summary.note("slope_ci", fit.slope_ci);
            summary.note("fit_residual", fit.residual);
        }
        None => {
            summary
                .checks
                .push(GateCheck::le("decay_slope", f64::INFINITY, gates::PML_SLOPE_MAX));
        }
    }
    if let Some((_, _, e0)) = out.points.iter().find(|&&(s0, _, _)| s0 == 0.0) {
        let max_rest = out
            .points
            .iter()
            .filter(|&&(s0, _, _)| s0 > 0.0)
            .map(|&(_, _, e)| e)
            .fold(0.0f64, f64::max);
        summary.checks.push(GateCheck::ge(
            "truncation_error_ratio_at_sigma0_zero",
            e0 / max_rest,
            1.0,
        ));
    }
    if let Some(f) = out.floor {
        summary.note("dx_refinement_floor", f);
    }

    write_run_metadata(dir, cfg, &[], &mut files)?;
    let p = dir.join("summary.csv");
    summary.write_to(&p)?;
    files.push(p);
    Ok(StudyArtifacts { summary, files })
}

fn run_symmetry(cfg: &RunConfig, dir: &Path) -> Result<StudyArtifacts> {
    let hash = cfg.hash();
    let study = SymmetryConfig {
        spec: cfg.grid_spec(),
        pml: PmlParams {
            r_phys: cfg.r_phys,
            rho: cfg.rho,
            sigma0: cfg.sigma0,
            m_pml: cfg.m_pml,
            s1: cfg.s1,
        },
        a: cfg.symmetry_a,
        b: cfg.symmetry_b,
        impulse_width: cfg.symmetry_impulse_width,
        t_end: cfg.t_end,
        safety: cfg.safety,
    };
    let rel = green_symmetry_check(&study)?;

    let mut t = CsvTable::new(&hash, &["ax", "ay", "az", "bx", "by", "bz", "rel_difference"]);
    t.row(&[
        cfg.symmetry_a[0],
        cfg.symmetry_a[1],
        cfg.symmetry_a[2],
        cfg.symmetry_b[0],
        cfg.symmetry_b[1],
        cfg.symmetry_b[2],
        rel,
    ]);
    let mut files = Vec::new();
    let p = dir.join("symmetry.csv");
    t.write_to(&p)?;
    files.push(p);

    let threshold = if cfg.obstacle_radius > 0.0 {
        gates::SYMMETRY_OBSTACLE_REL
    } else {
        gates::SYMMETRY_FREE_REL
    };
    let mut summary = StudySummary::new("symmetry", &hash);
    summary
        .checks
        .push(GateCheck::le("reciprocity_rel_difference", rel, threshold));
    summary.note("obstacle_radius", cfg.obstacle_radius);

    write_run_metadata(dir, cfg, &[], &mut files)?;
    let p = dir.join("summary.csv");
    summary.write_to(&p)?;
    files.push(p);
    Ok(StudyArtifacts { summary, files })
}

fn run_resolvent(cfg: &RunConfig, dir: &Path) -> Result<StudyArtifacts> {
    let hash = cfg.hash();
    let part = cell_partition(&cfg.grid_spec(), cfg.support, cfg.h0, cfg.level)?;
    let noise = sample_noise(&part, cfg.base_seed);
    let src = SourceProfile::new(cfg.support, cfg.t_on, cfg.t_off, cfg.amplitude)?;
    let probe = cfg.resolvent_probe;
    let quad = QuadratureSpec::midpoint(4);
    let table = RetardedTable::build(probe, &noise, &src, &quad);

    // the oracle trace has compact support: capture it fully
    let max_dist = cfg.support.farthest_corner_radius(probe);
    let t_end = cfg.t_off + max_dist + 8.0 * cfg.resolvent_dt;
    let n = (t_end / cfg.resolvent_dt).ceil() as usize;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * cfg.resolvent_dt).collect();
    let series = table.eval_series(&times);

    let bandwidth = src.bandwidth();
    let sweep = crate::numerics::logspace(
        cfg.resolvent_window[0] * bandwidth,
        cfg.resolvent_window[1] * bandwidth,
        cfg.resolvent_points,
    );
    let s1 = 1.0 / t_end;
    let fit = resolvent_decay_check(&series, cfg.resolvent_dt, s1, &sweep)?;

    let mut t = CsvTable::new(&hash, &["s2", "abs_u_laplace"]);
    for p in &fit.points {
        t.row(&[p.parameter, p.error]);
    }
    let mut files = Vec::new();
    let p = dir.join("resolvent.csv");
    t.write_to(&p)?;
    files.push(p);

    let mut summary = StudySummary::new("resolvent-decay", &hash);
    summary
        .checks
        .push(GateCheck::le("laplace_decay_slope", fit.slope, gates::RESOLVENT_SLOPE_MAX));
    summary.note("bandwidth", bandwidth);
    summary.note("s1", s1);
    summary.note("fit_residual", fit.residual);

    write_run_metadata(dir, cfg, &[], &mut files)?;
    let p = dir.join("summary.csv");
    summary.write_to(&p)?;
    files.push(p);
    Ok(StudyArtifacts { summary, files })
}

/// Manufactured-data fit sanity used by the command line `selftest`:
/// power-law and exponential inputs must be recovered exactly.
pub fn selftest() -> Result<Vec<(String, bool)>> {
    let mut results = Vec::new();
    let pts: Vec<RatePoint> = [1.0, 0.5, 0.25, 0.125]
        .iter()
        .map(|&h| RatePoint {
            parameter: h,
            error: 3.0 * h,
            ci_halfwidth: 0.0,
        })
        .collect();
    let fit = fit_rate(&pts, FitScale::LogLog)?;
    results.push((
        format!("log-log slope 1 recovered (got {})", fit.slope),
        (fit.slope - 1.0).abs() < 1e-12 && fit.residual < 1e-12,
    ));
    let pts: Vec<RatePoint> = [0.5, 1.5, 2.5, 4.0]
        .iter()
        .map(|&x| RatePoint {
            parameter: x,
            error: 0.7 * (-x).exp(),
            ci_halfwidth: 0.0,
        })
        .collect();
    let fit = fit_rate(&pts, FitScale::LogLinear)?;
    results.push((
        format!("log-linear slope -1 recovered (got {})", fit.slope),
        (fit.slope + 1.0).abs() < 1e-12 && fit.residual < 1e-12,
    ));
    let (mean, ci) = crate::analysis::mc_expectation(|_| 1.25, 16, 0)?;
    results.push((
        format!("constant expectation recovered (got {mean} +- {ci})"),
        mean == 1.25 && ci == 0.0,
    ));
    results.push((
        "hash stability".to_string(),
        text_hash("stochwave") == text_hash("stochwave"),
    ));
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_text;

    fn tiny_single_run(dir: &Path) -> String {
        format!(
            "study = single-run\n\
             geometry.R = 1.0\n\
             geometry.rho = 1.6\n\
             geometry.dx = 0.1\n\
             source.box = -0.3 -0.3 -0.3 0.3 0.3 0.3\n\
             source.t_on = 0.05\n\
             source.t_off = 0.4\n\
             noise.h0 = 0.3\n\
             noise.level = 1\n\
             time.t_end = 0.5\n\
             probes = 0.5 0 0\n\
             output.dir = {}\n",
            dir.display()
        )
    }

    #[test]
    fn single_run_produces_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = parse_config_text(&tiny_single_run(tmp.path())).unwrap();
        let artifacts = run_study(&cfg).unwrap();
        assert!(artifacts.passed());
        assert!(tmp.path().join("probes.csv").exists());
        assert!(tmp.path().join("norms.csv").exists());
        assert!(tmp.path().join("metadata.txt").exists());
        assert!(tmp.path().join("summary.csv").exists());
        let meta = std::fs::read_to_string(tmp.path().join("metadata.txt")).unwrap();
        assert!(meta.contains("config_hash="));
        let probes = std::fs::read_to_string(tmp.path().join("probes.csv")).unwrap();
        assert!(probes.starts_with(&format!("# config_hash={}", cfg.hash())));
    }

    #[test]
    fn zero_t_end_single_run_is_trivial_success() {
        let tmp = tempfile::tempdir().unwrap();
        let text = tiny_single_run(tmp.path())
            .replace("time.t_end = 0.5", "time.t_end = 0")
            .replace("source.t_off = 0.4", "source.t_off = 0.4");
        let cfg = parse_config_text(&text).unwrap();
        let artifacts = run_study(&cfg).unwrap();
        assert!(artifacts.passed());
        let probes = std::fs::read_to_string(tmp.path().join("probes.csv")).unwrap();
        // header comment + column header + the single t=0 sample
        assert_eq!(probes.lines().count(), 3);
    }

    #[test]
    fn manufactured_h_rate_reports_unit_slope() {
        let tmp = tempfile::tempdir().unwrap();
        let text = tiny_single_run(tmp.path())
            .replace("study = single-run", "study = h-rate")
            + "hrate.manufactured = true\n";
        let cfg = parse_config_text(&text).unwrap();
        let artifacts = run_study(&cfg).unwrap();
        assert!(artifacts.passed());
        let summary = std::fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
        assert!(summary.contains("note:slope,1,"), "{summary}");
    }

    #[test]
    fn byte_identical_outputs_across_worker_counts() {
        let run_with_threads = |threads: usize, dir: &Path| {
            let text = tiny_single_run(dir);
            let cfg = parse_config_text(&text).unwrap();
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_study(&cfg).unwrap());
            std::fs::read(dir.join("probes.csv")).unwrap()
        };
        let t1 = tempfile::tempdir().unwrap();
        let t4 = tempfile::tempdir().unwrap();
        let a = run_with_threads(1, t1.path());
        let b = run_with_threads(4, t4.path());
        assert_eq!(a, b);
    }

    #[test]
    fn selftest_passes() {
        for (name, ok) in selftest().unwrap() {
            assert!(ok, "selftest failed: {name}");
        }
    }
}
