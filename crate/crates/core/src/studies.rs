//! The empirical studies: oracle equivalence of the solver, Laplace
//! consistency, the noise-refinement rate, PML decay in the layer parameters,
//! reciprocity and resolvent decay.

use crate::analysis::{error_between, fit_rate, laplace_trace, FitScale, RatePoint, RateReport};
use crate::grid::{Box3, CellPartition, Grid, GridSpec};
use crate::noise::{coarsen_to_levels, sample_noise, standard_normal, NoiseField};
use crate::oracle::{QuadratureSpec, RetardedTable};
use crate::solver::{
    impulse_source_pattern, noise_source_pattern, padded_grid_spec, PmlParams, TimeProfile,
    WaveSolver,
};
use crate::source::SourceProfile;
use crate::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use std::sync::Arc;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

// ---------------------------------------------------------------------------
// Oracle equivalence: solver against the retarded potential in free space
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct OracleCheckConfig {
    pub support: Box3,
    pub h0: f64,
    pub level: u32,
    pub seed: u64,
    pub t_on: f64,
    pub t_off: f64,
    pub amplitude: f64,
    pub probes: Vec<[f64; 3]>,
    /// Dyadic spacings, coarse to fine.
    pub dx_values: Vec<f64>,
    pub t_end: f64,
    /// Radius of the physical ball the probes live in.
    pub r_phys: f64,
    /// Half-extent of the padded domain (must keep reflections unreachable).
    pub pad_radius: f64,
    pub oracle_quad: QuadratureSpec,
    pub safety: f64,
}

#[derive(Debug, Clone)]
pub struct OracleCheckOutput {
    /// Per dx value, per probe: relative L2-in-time error solver vs oracle.
    pub per_probe: Vec<Vec<f64>>,
    /// Per dx value: pooled relative error across probes.
    pub pooled: Vec<f64>,
    /// Log-log fit of pooled error against dx.
    pub fit: RateReport,
}

/// Runs the free-space solver at each spacing and compares probe traces with
/// the retarded-potential oracle evaluated at the same sample times.
pub fn oracle_equivalence_study(cfg: &OracleCheckConfig) -> Result<OracleCheckOutput> {
    if cfg.dx_values.len() < 3 {
        return Err(Error::InvalidStudy("need at least 3 dx values".into()));
    }
    let part = CellPartition::new(cfg.support, cfg.h0, cfg.level)?;
    let noise = sample_noise(&part, cfg.seed);
    let src = SourceProfile::new(cfg.support, cfg.t_on, cfg.t_off, cfg.amplitude)?;

    let mut per_probe = Vec::new();
    let mut pooled = Vec::new();
    for &dx in &cfg.dx_values {
        let spec = GridSpec {
            rho: cfg.pad_radius,
            r_phys: cfg.r_phys,
            obstacle_radius: 0.0,
            dx,
            center: [0.0; 3],
        };
        let grid = Arc::new(Grid::build(spec)?);
        let pml = PmlParams {
            r_phys: spec.r_phys,
            rho: spec.rho,
            sigma0: 0.0,
            m_pml: 2,
            s1: 1.0,
        };
        let pattern = noise_source_pattern(&grid, &noise, &src);
        let solver = WaveSolver::new(
            grid,
            pml,
            pattern,
            TimeProfile::Bump {
                t_on: cfg.t_on,
                t_off: cfg.t_off,
            },
            cfg.safety,
        )?;
        let run = solver.run(cfg.t_end, &cfg.probes, 0, Some(cfg.seed), Some(cfg.level))?;
        let times: Vec<f64> = (0..run.probe_series[0].len())
            .map(|i| i as f64 * run.dt)
            .collect();
        // evaluate the oracle at the node-snapped probe coordinates the run
        // actually recorded
        let tables: Vec<RetardedTable> = run
            .probe_points
            .par_iter()
            .map(|&p| RetardedTable::build(p, &noise, &src, &cfg.oracle_quad))
            .collect();
        let mut probe_errs = Vec::new();
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, table) in tables.iter().enumerate() {
            let reference = table.eval_series(&times);
            let diff2: f64 = run.probe_series[p]
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let ref2: f64 = reference.iter().map(|v| v * v).sum();
            probe_errs.push((diff2 / ref2).sqrt());
            num += diff2;
            den += ref2;
        }
        per_probe.push(probe_errs);
        pooled.push((num / den).sqrt());
    }

    let points: Vec<RatePoint> = cfg
        .dx_values
        .iter()
        .zip(&pooled)
        .map(|(&dx, &e)| RatePoint {
            parameter: dx,
            error: e,
            ci_halfwidth: 0.0,
        })
        .collect();
    let fit = fit_rate(&points, FitScale::LogLog)?;
    Ok(OracleCheckOutput {
        per_probe,
        pooled,
        fit,
    })
}

// ---------------------------------------------------------------------------
// Laplace consistency: transform of the time-domain oracle vs the Helmholtz
// convolution on shared quadrature terms
// ---------------------------------------------------------------------------

/// For each `s = 1/T + i s2` (with `T` the full support of the probe trace),
/// the relative difference between the numerically transformed
/// retarded-potential trace and the Helmholtz convolution at the probe.
pub fn laplace_consistency_check(
    noise: &NoiseField,
    src: &SourceProfile,
    probe: [f64; 3],
    s2_values: &[f64],
    dt: f64,
    quad: &QuadratureSpec,
) -> Result<Vec<(Complex64, f64)>> {
    let table = RetardedTable::build(probe, noise, src, quad);
    // the trace support ends at t_off + max travel distance
    let max_dist = noise.partition.bbox.farthest_corner_radius(probe);
    let t_end = src.t_off + max_dist + 4.0 * dt;
    let n = (t_end / dt).ceil() as usize;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    let series = table.eval_series(&times);
    let s1 = 1.0 / t_end;
    let mut out = Vec::with_capacity(s2_values.len());
    for &s2 in s2_values {
        let s = Complex64::new(s1, s2);
        let transformed = laplace_trace(&series, dt, s)?;
        let direct = table.laplace_value(s, src.laplace_time_factor(s));
        let rel = (transformed - direct).norm() / direct.norm();
        out.push((s, rel));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Noise refinement rate (oracle-evaluated, coupled multilevel Monte Carlo)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HRateConfig {
    pub support: Box3,
    pub h0: f64,
    /// Levels whose error against the reference is measured, coarse to fine.
    pub measured_levels: Vec<u32>,
    /// Reference level; should sit at least two levels below the finest
    /// measured one so the telescoped error keeps the O(h) signature.
    pub ref_level: u32,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub t_on: f64,
    pub t_off: f64,
    pub amplitude: f64,
    /// Evaluation lattice: midpoints spaced `eval_spacing` inside the ball of
    /// radius `eval_radius` (the physical region, source support included).
    pub eval_radius: f64,
    pub eval_spacing: f64,
    /// Refined spacing used near the source support, where the kernel is
    /// singular and carries the O(h) part of the error; the refined tier
    /// covers the support dilated by `eval_fine_margin`.
    pub eval_fine_spacing: f64,
    pub eval_fine_margin: f64,
    pub n_times: usize,
    pub t_end: f64,
}

#[derive(Debug, Clone)]
pub struct HRateOutput {
    /// One point per measured level: (h, mean over seeds of err^2, 95% CI).
    pub points: Vec<RatePoint>,
    /// The same squared errors evaluated exactly through the Ito isometry.
    pub exact: Vec<f64>,
    /// Mean squared noise norm per measured level, with the fitted exponent
    /// of its growth in h (cube cells give ~ h^-3).
    pub noise_norm_means: Vec<f64>,
    pub noise_norm_exponent: f64,
    pub fit: RateReport,
}

/// Coupled multilevel study of `E || u^(h) - u^(ref) ||^2_{L2(0,T;L2)}` with
/// all solutions evaluated through the retarded-potential oracle.
///
/// Per seed, noise is sampled once at the reference level and every coarser
/// field is derived by exact coarsening, so level differences measure
/// projection error, not sampling noise. The per-cell kernel integrals are
/// computed once at the reference level and aggregated up the octree, giving
/// every level the same (nested) quadrature.
pub fn h_convergence_study(cfg: &HRateConfig) -> Result<HRateOutput> {
    if cfg.measured_levels.len() < 3 {
        return Err(Error::InvalidStudy("need at least 3 measured levels".into()));
    }
    if cfg.n_seeds < 2 {
        return Err(Error::InvalidStudy("need at least 2 seeds".into()));
    }
    let max_measured = *cfg.measured_levels.iter().max().unwrap();
    if cfg.ref_level <= max_measured {
        return Err(Error::InvalidStudy(format!(
            "reference level {} must be finer than every measured level (max {})",
            cfg.ref_level, max_measured
        )));
    }
    let src = SourceProfile::new(cfg.support, cfg.t_on, cfg.t_off, cfg.amplitude)?;
    let fine = CellPartition::new(cfg.support, cfg.h0, cfg.ref_level)?;
    let n_fine = fine.cell_count();
    let h_fine = fine.h();
    let vol_fine = fine.cell_volume();
    let n_levels = cfg.measured_levels.len();

    // static per-cell data
    let centers: Vec<[f64; 3]> = (0..n_fine).map(|c| fine.cell_center(c)).collect();
    let g_vals: Vec<f64> = centers.iter().map(|&c| src.eval_g(c)).collect();
    // ancestor linear index per measured level
    let fine_dims = fine.dims();
    let level_dims: Vec<[usize; 3]> = cfg
        .measured_levels
        .iter()
        .map(|&l| {
            let shift = cfg.ref_level - l;
            [
                fine_dims[0] >> shift,
                fine_dims[1] >> shift,
                fine_dims[2] >> shift,
            ]
        })
        .collect();
    let ancestors: Vec<Vec<u32>> = cfg
        .measured_levels
        .iter()
        .enumerate()
        .map(|(li, &l)| {
            let shift = cfg.ref_level - l;
            let d = level_dims[li];
            (0..n_fine)
                .map(|c| {
                    let ijk = fine.cell_ijk(c);
                    let (i, j, k) = (ijk[0] >> shift, ijk[1] >> shift, ijk[2] >> shift);
                    ((k * d[1] + j) * d[0] + i) as u32
                })
                .collect()
        })
        .collect();
    let level_cells: Vec<usize> = level_dims.iter().map(|d| d[0] * d[1] * d[2]).collect();
    let h_levels: Vec<f64> = cfg
        .measured_levels
        .iter()
        .map(|&l| cfg.h0 / (1u64 << l) as f64)
        .collect();
    // u_l = c_l * sum_K Xi_K I_K with c_l = h_l^{-3/2} 8^{-(L-l)/2}
    let c_ref = h_fine.powf(-1.5);
    let c_levels: Vec<f64> = cfg
        .measured_levels
        .iter()
        .zip(&h_levels)
        .map(|(&l, &h)| h.powf(-1.5) * (8.0f64).powf(-0.5 * (cfg.ref_level - l) as f64))
        .collect();

    // per-seed fine coefficients and their octree aggregates
    let n_seeds = cfg.n_seeds;
    let xi_fine: Vec<Vec<f64>> = (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.base_seed + i;
            (0..n_fine).map(|c| standard_normal(seed, c as u64)).collect()
        })
        .collect();
    let xi_agg: Vec<Vec<Vec<f64>>> = xi_fine
        .par_iter()
        .map(|xi| {
            (0..n_levels)
                .map(|li| {
                    let mut acc = vec![0.0; level_cells[li]];
                    for c in 0..n_fine {
                        acc[ancestors[li][c] as usize] += xi[c];
                    }
                    acc
                })
                .collect()
        })
        .collect();

    // two-tier evaluation lattice over the ball: refined midpoints near the
    // source support (singular shells), coarse midpoints elsewhere
    let fine_box = Box3::new(
        [
            cfg.support.lo[0] - cfg.eval_fine_margin,
            cfg.support.lo[1] - cfg.eval_fine_margin,
            cfg.support.lo[2] - cfg.eval_fine_margin,
        ],
        [
            cfg.support.hi[0] + cfg.eval_fine_margin,
            cfg.support.hi[1] + cfg.eval_fine_margin,
            cfg.support.hi[2] + cfg.eval_fine_margin,
        ],
    );
    let mut eval_points: Vec<([f64; 3], f64)> = Vec::new();
    let half_count = (cfg.eval_radius / cfg.eval_spacing).ceil() as i64;
    for kz in -half_count..=half_count {
        for ky in -half_count..=half_count {
            for kx in -half_count..=half_count {
                let p = [
                    kx as f64 * cfg.eval_spacing,
                    ky as f64 * cfg.eval_spacing,
                    kz as f64 * cfg.eval_spacing,
                ];
                if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] < cfg.eval_radius * cfg.eval_radius
                    && !fine_box.contains_half_open(p)
                {
                    eval_points.push((p, cfg.eval_spacing.powi(3)));
                }
            }
        }
    }
    let fine_counts: Vec<i64> = (0..3)
        .map(|a| (fine_box.side(a) / cfg.eval_fine_spacing).round() as i64)
        .collect();
    for kz in 0..fine_counts[2] {
        for ky in 0..fine_counts[1] {
            for kx in 0..fine_counts[0] {
                let p = [
                    fine_box.lo[0] + (kx as f64 + 0.5) * cfg.eval_fine_spacing,
                    fine_box.lo[1] + (ky as f64 + 0.5) * cfg.eval_fine_spacing,
                    fine_box.lo[2] + (kz as f64 + 0.5) * cfg.eval_fine_spacing,
                ];
                if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] < cfg.eval_radius * cfg.eval_radius {
                    eval_points.push((p, cfg.eval_fine_spacing.powi(3)));
                }
            }
        }
    }
    if eval_points.is_empty() {
        return Err(Error::InvalidStudy("empty evaluation lattice".into()));
    }
    let dt = cfg.t_end / (cfg.n_times - 1) as f64;
    let excise = f64::sqrt(3.0) * h_fine;

    struct PerPoint {
        err_sq: Vec<f64>, // [seed * n_levels + level]
        exact: Vec<f64>,  // [level]
    }

    // one task per evaluation point: kernel integrals at the reference level,
    // octree aggregation, exact expectations and per-seed dots
    let per_point: Vec<PerPoint> = eval_points
        .par_iter()
        .map(|&(x, w_space)| {
            let mut radii = vec![0.0f64; n_fine];
            let mut skip = vec![false; n_fine];
            for c in 0..n_fine {
                let d = [
                    x[0] - centers[c][0],
                    x[1] - centers[c][1],
                    x[2] - centers[c][2],
                ];
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                radii[c] = r;
                skip[c] = r < excise;
            }
            let mut err_sq = vec![0.0; n_seeds * n_levels];
            let mut exact = vec![0.0; n_levels];
            let mut i_fine = vec![0.0f64; n_fine];
            let mut i_agg: Vec<Vec<f64>> = level_cells.iter().map(|&n| vec![0.0; n]).collect();
            for ti in 0..cfg.n_times {
                let t = ti as f64 * dt;
                let w_time = if ti == 0 || ti == cfg.n_times - 1 { 0.5 } else { 1.0 };
                let w = w_space * w_time * dt;
                // midpoint kernel integrals over reference cells
                let mut sum_sq_fine = 0.0;
                for c in 0..n_fine {
                    let v = if skip[c] || g_vals[c] == 0.0 {
                        0.0
                    } else {
                        let tau = t - radii[c];
                        if tau <= src.t_on || tau >= src.t_off {
                            0.0
                        } else {
                            let dbump = src.t_off - src.t_on;
                            let p = (4.0 / (dbump * dbump)
                                - 1.0 / ((tau - src.t_on) * (src.t_off - tau)))
                                .exp();
                            vol_fine * g_vals[c] * p / (FOUR_PI * radii[c])
                        }
                    };
                    i_fine[c] = v;
                    sum_sq_fine += v * v;
                }
                for (li, agg) in i_agg.iter_mut().enumerate() {
                    agg.iter_mut().for_each(|a| *a = 0.0);
                    let anc = &ancestors[li];
                    for c in 0..n_fine {
                        agg[anc[c] as usize] += i_fine[c];
                    }
                }
                // exact expectation through the Ito isometry:
                // E[(u_l - u_ref)^2] = h_l^{-3} S_l - 2 c_l c_ref S_l + c_ref^2 S_ref
                // with S_l = sum over level-l cells of I_K^2
                for li in 0..n_levels {
                    let s_l: f64 = i_agg[li].iter().map(|v| v * v).sum();
                    let e = h_levels[li].powi(-3) * s_l - 2.0 * c_levels[li] * c_ref * s_l
                        + c_ref * c_ref * sum_sq_fine;
                    exact[li] += w * src.amplitude * src.amplitude * e;
                }
                // Monte Carlo dots
                for (si, xi) in xi_fine.iter().enumerate() {
                    let mut u_ref = 0.0;
                    for c in 0..n_fine {
                        u_ref += xi[c] * i_fine[c];
                    }
                    u_ref *= c_ref * src.amplitude;
                    for li in 0..n_levels {
                        let mut u_l = 0.0;
                        let agg = &i_agg[li];
                        let xa = &xi_agg[si][li];
                        for k in 0..agg.len() {
                            u_l += xa[k] * agg[k];
                        }
                        u_l *= c_levels[li] * src.amplitude;
                        let d = u_l - u_ref;
                        err_sq[si * n_levels + li] += w * d * d;
                    }
                }
            }
            PerPoint { err_sq, exact }
        })
        .collect();

    // reduce in point order (deterministic regardless of thread count)
    let mut err_sq = vec![0.0; n_seeds * n_levels];
    let mut exact = vec![0.0; n_levels];
    for pp in &per_point {
        for (a, b) in err_sq.iter_mut().zip(&pp.err_sq) {
            *a += b;
        }
        for (a, b) in exact.iter_mut().zip(&pp.exact) {
            *a += b;
        }
    }

    let mut points = Vec::with_capacity(n_levels);
    for li in 0..n_levels {
        let vals: Vec<f64> = (0..n_seeds).map(|si| err_sq[si * n_levels + li]).collect();
        let mean = vals.iter().sum::<f64>() / n_seeds as f64;
        let var =
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_seeds as f64 - 1.0);
        points.push(RatePoint {
            parameter: h_levels[li],
            error: mean,
            ci_halfwidth: 1.96 * (var / n_seeds as f64).sqrt(),
        });
    }
    let fit = fit_rate(&points, FitScale::LogLog)?;

    // re-measured noise norm scaling: E||W_h||^2 = cell count ~ h^{-3}
    let mut noise_norm_means = Vec::with_capacity(n_levels);
    for li in 0..n_levels {
        let scale = (8.0f64).powf(-((cfg.ref_level - cfg.measured_levels[li]) as f64));
        let mean = (0..n_seeds)
            .map(|si| {
                let xa = &xi_agg[si][li];
                xa.iter().map(|v| v * v * scale).sum::<f64>()
            })
            .sum::<f64>()
            / n_seeds as f64;
        noise_norm_means.push(mean);
    }
    let norm_points: Vec<RatePoint> = h_levels
        .iter()
        .zip(&noise_norm_means)
        .map(|(&h, &m)| RatePoint {
            parameter: h,
            error: m,
            ci_halfwidth: 0.0,
        })
        .collect();
    let norm_fit = fit_rate(&norm_points, FitScale::LogLog)?;

    Ok(HRateOutput {
        points,
        exact,
        noise_norm_means,
        noise_norm_exponent: norm_fit.slope,
        fit,
    })
}

// ---------------------------------------------------------------------------
// Solver-based refinement study (for obstacle or layer configurations where
// no oracle exists): padded runs per level against the finest level
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HRateSolverConfig {
    pub support: Box3,
    pub h0: f64,
    pub measured_levels: Vec<u32>,
    pub ref_level: u32,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub t_on: f64,
    pub t_off: f64,
    pub amplitude: f64,
    pub r_phys: f64,
    pub obstacle_radius: f64,
    pub dx: f64,
    pub t_end: f64,
    pub snapshot_every: usize,
    pub safety: f64,
}

/// Self-convergence in the noise level with solutions from the padded solver:
/// per seed, all levels share one Brownian sheet and one grid, and errors are
/// taken against the reference-level run.
pub fn h_convergence_study_solver(cfg: &HRateSolverConfig) -> Result<Vec<RatePoint>> {
    let max_measured = *cfg.measured_levels.iter().max().unwrap();
    if cfg.ref_level <= max_measured {
        return Err(Error::InvalidStudy("reference level must be finest".into()));
    }
    let src = SourceProfile::new(cfg.support, cfg.t_on, cfg.t_off, cfg.amplitude)?;
    let fine_part = CellPartition::new(cfg.support, cfg.h0, cfg.ref_level)?;
    let base_spec = GridSpec {
        rho: cfg.r_phys + 0.5,
        r_phys: cfg.r_phys,
        obstacle_radius: cfg.obstacle_radius,
        dx: cfg.dx,
        center: [0.0; 3],
    };
    let spec = padded_grid_spec(
        &base_spec,
        cfg.support.farthest_corner_radius([0.0; 3]),
        cfg.t_end,
    );
    let grid = Arc::new(Grid::build(spec)?);
    let pml = PmlParams {
        r_phys: spec.r_phys,
        rho: spec.rho,
        sigma0: 0.0,
        m_pml: 2,
        s1: 1.0,
    };
    let temporal = TimeProfile::Bump {
        t_on: cfg.t_on,
        t_off: cfg.t_off,
    };
    let run_one = |noise: &NoiseField, seed: u64| -> Result<crate::solver::SimulationResult> {
        let pattern = noise_source_pattern(&grid, noise, &src);
        let solver = WaveSolver::new(grid.clone(), pml, pattern, temporal, cfg.safety)?;
        solver.run(cfg.t_end, &[], cfg.snapshot_every, Some(seed), Some(noise.level()))
    };

    let coarsest = *cfg.measured_levels.iter().min().unwrap();
    let mut acc = vec![0.0; cfg.measured_levels.len()];
    for i in 0..cfg.n_seeds as u64 {
        let seed = cfg.base_seed + i;
        let finest = sample_noise(&fine_part, seed);
        let stack = coarsen_to_levels(&finest, coarsest)?;
        let reference = run_one(&finest, seed)?;
        for (li, &level) in cfg.measured_levels.iter().enumerate() {
            let field = &stack[(level - coarsest) as usize];
            debug_assert_eq!(field.level(), level);
            let run = run_one(field, seed)?;
            let e = error_between(&run, &reference)?;
            acc[li] += e * e;
        }
    }
    Ok(cfg
        .measured_levels
        .iter()
        .enumerate()
        .map(|(li, &level)| RatePoint {
            parameter: cfg.h0 / (1u64 << level) as f64,
            error: acc[li] / cfg.n_seeds as f64,
            ci_halfwidth: 0.0,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// PML convergence in the layer parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PmlStudyConfig {
    pub r_phys: f64,
    pub rho: f64,
    pub obstacle_radius: f64,
    pub dx: f64,
    pub sigma0_values: Vec<f64>,
    pub m_pml: u32,
    /// Defaults to `1/t_end` when `None`.
    pub s1: Option<f64>,
    pub support: Box3,
    pub h0: f64,
    pub level: u32,
    pub seed: u64,
    pub t_on: f64,
    pub t_off: f64,
    pub amplitude: f64,
    pub t_end: f64,
    pub safety: f64,
    /// Snapshot cadence of the compared runs (1 = every step).
    pub snapshot_every: usize,
    /// Measure the dx-refinement floor with a half-spacing reference run.
    pub measure_floor: bool,
}

#[derive(Debug, Clone)]
pub struct PmlStudyOutput {
    /// (sigma0, sigma0*d/2, error) for every swept value.
    pub points: Vec<(f64, f64, f64)>,
    /// dx-refinement floor of the comparison, when measured.
    pub floor: Option<f64>,
    /// Log-linear fit of error against sigma0*d/2 over the points above the
    /// floor (2x margin); `None` if fewer than 3 such points.
    pub fit: Option<RateReport>,
    /// Number of points that entered the fit.
    pub fitted_points: usize,
}

/// Sweeps the absorption strength at fixed thickness against a padded
/// reference run sharing the same noise realization, and fits the exponential
/// decay of the truncation error in `sigma0 d / 2`.
pub fn pml_convergence_study(cfg: &PmlStudyConfig) -> Result<PmlStudyOutput> {
    if cfg.sigma0_values.is_empty() {
        return Err(Error::InvalidStudy("empty sigma0 sweep".into()));
    }
    let s1 = cfg.s1.unwrap_or(1.0 / cfg.t_end);
    let d = cfg.rho - cfg.r_phys;
    let part = CellPartition::new(cfg.support, cfg.h0, cfg.level)?;
    let noise = sample_noise(&part, cfg.seed);
    let src = SourceProfile::new(cfg.support, cfg.t_on, cfg.t_off, cfg.amplitude)?;
    let temporal = TimeProfile::Bump {
        t_on: cfg.t_on,
        t_off: cfg.t_off,
    };

    let source_radius = cfg.support.farthest_corner_radius([0.0; 3]);
    let padded_run = |dx: f64, every: usize| -> Result<crate::solver::SimulationResult> {
        let base = GridSpec {
            rho: cfg.rho,
            r_phys: cfg.r_phys,
            obstacle_radius: cfg.obstacle_radius,
            dx,
            center: [0.0; 3],
        };
        let spec = padded_grid_spec(&base, source_radius, cfg.t_end);
        let grid = Arc::new(Grid::build(spec)?);
        let pml = PmlParams {
            r_phys: cfg.r_phys,
            rho: spec.rho,
            sigma0: 0.0,
            m_pml: cfg.m_pml,
            s1,
        };
        let pattern = noise_source_pattern(&grid, &noise, &src);
        let solver = WaveSolver::new(grid, pml, pattern, temporal, cfg.safety)?;
        solver.run(cfg.t_end, &[], every, Some(cfg.seed), Some(cfg.level))
    };

    let reference = padded_run(cfg.dx, cfg.snapshot_every)?;
    let floor = if cfg.measure_floor {
        // half spacing, doubled cadence: frame times coincide with the
        // reference cadence, so the comparison resamples in space only
        let refined = padded_run(cfg.dx / 2.0, 2 * cfg.snapshot_every)?;
        Some(error_between(&reference, &refined)?)
    } else {
        None
    };

    let spec = GridSpec {
        rho: cfg.rho,
        r_phys: cfg.r_phys,
        obstacle_radius: cfg.obstacle_radius,
        dx: cfg.dx,
        center: [0.0; 3],
    };
    let grid = Arc::new(Grid::build(spec)?);
    let mut points = Vec::new();
    for &sigma0 in &cfg.sigma0_values {
        let pml = PmlParams {
            r_phys: cfg.r_phys,
            rho: cfg.rho,
            sigma0,
            m_pml: cfg.m_pml,
            s1,
        };
        let pattern = noise_source_pattern(&grid, &noise, &src);
        let solver = WaveSolver::new(grid.clone(), pml, pattern, temporal, cfg.safety)?;
        let run = solver.run(cfg.t_end, &[], cfg.snapshot_every, Some(cfg.seed), Some(cfg.level))?;
        let err = error_between(&reference, &run)?;
        points.push((sigma0, 0.5 * sigma0 * d, err));
    }

    // fit over the sweep above the floor; sigma0 = 0 is the pure-truncation
    // datum and is excluded from the exponential fit
    let cutoff = floor.map(|f| 2.0 * f).unwrap_or(0.0);
    let fit_points: Vec<RatePoint> = points
        .iter()
        .filter(|&&(s0, _, e)| s0 > 0.0 && e > cutoff)
        .map(|&(_, x, e)| RatePoint {
            parameter: x,
            error: e,
            ci_halfwidth: 0.0,
        })
        .collect();
    let fitted_points = fit_points.len();
    let fit = if fitted_points >= 3 {
        Some(fit_rate(&fit_points, FitScale::LogLinear)?)
    } else {
        None
    };
    Ok(PmlStudyOutput {
        points,
        floor,
        fit,
        fitted_points,
    })
}

// ---------------------------------------------------------------------------
// Green-function symmetry (reciprocity)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SymmetryConfig {
    pub spec: GridSpec,
    pub pml: PmlParams,
    pub a: [f64; 3],
    pub b: [f64; 3],
    /// Width of the narrow impulse bump (support `(0, impulse_width)`).
    pub impulse_width: f64,
    pub t_end: f64,
    pub safety: f64,
}

/// Runs the solver with a smooth single-node impulse at `a` probed at `b`,
/// then with source and probe exchanged, and returns the relative difference
/// of the cross traces. Exact self-adjointness of the assembled operator
/// makes this a rounding-level quantity for any medium and obstacle.
pub fn green_symmetry_check(cfg: &SymmetryConfig) -> Result<f64> {
    let grid = Arc::new(Grid::build(cfg.spec)?);
    let temporal = TimeProfile::Bump {
        t_on: 0.0,
        t_off: cfg.impulse_width,
    };
    let run_pair = |from: [f64; 3], to: [f64; 3]| -> Result<Vec<f64>> {
        let (pattern, _) = impulse_source_pattern(&grid, from)?;
        let solver = WaveSolver::new(grid.clone(), cfg.pml, pattern, temporal, cfg.safety)?;
        let run = solver.run(cfg.t_end, &[to], 0, None, None)?;
        Ok(run.probe_series.into_iter().next().unwrap())
    };
    let ab = run_pair(cfg.a, cfg.b)?;
    let ba = run_pair(cfg.b, cfg.a)?;
    let diff: f64 = ab
        .iter()
        .zip(&ba)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = ab
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .max(ba.iter().map(|x| x * x).sum::<f64>())
        .sqrt();
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(diff / scale)
}

// ---------------------------------------------------------------------------
// Resolvent decay along a vertical line in the Laplace domain
// ---------------------------------------------------------------------------

/// `|u_L(s1 + i s2)|` over the sweep, fitted log-log against `s2`.
pub fn resolvent_decay_check(
    series: &[f64],
    dt: f64,
    s1: f64,
    s2_values: &[f64],
) -> Result<RateReport> {
    let mut points = Vec::with_capacity(s2_values.len());
    for &s2 in s2_values {
        let v = laplace_trace(series, dt, Complex64::new(s1, s2))?;
        points.push(RatePoint {
            parameter: s2,
            error: v.norm(),
            ci_halfwidth: 0.0,
        });
    }
    fit_rate(&points, FitScale::LogLog)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_fields_give_identical_oracle_values() {
        let support = Box3::cube([0.0; 3], 0.6);
        let part = CellPartition::new(support, 0.6, 2).unwrap();
        let noise = sample_noise(&part, 3);
        let src = SourceProfile::new(support, 0.1, 0.9, 1.0).unwrap();
        let quad = QuadratureSpec::midpoint(2);
        let x = [0.7, 0.0, 0.0];
        let a = RetardedTable::build(x, &noise, &src, &quad);
        let b = RetardedTable::build(x, &noise, &src, &quad);
        for &t in &[0.9, 1.2, 1.5] {
            assert_eq!(a.eval(t), b.eval(t));
        }
    }

    #[test]
    fn h_rate_study_recovers_first_order() {
        // Small, fast configuration; the exact (Ito isometry) curve must show
        // a slope near 1 and the MC means must agree with it within CIs.
        let cfg = HRateConfig {
            support: Box3::cube([0.0; 3], 0.6),
            h0: 0.6,
            measured_levels: vec![0, 1, 2],
            ref_level: 4,
            n_seeds: 48,
            base_seed: 1000,
            t_on: 0.1,
            t_off: 0.9,
            amplitude: 1.0,
            eval_radius: 0.8,
            eval_spacing: 0.26,
            eval_fine_spacing: 0.1,
            eval_fine_margin: 0.05,
            n_times: 12,
            t_end: 1.9,
        };
        let out = h_convergence_study(&cfg).unwrap();
        for (p, &e) in out.points.iter().zip(&out.exact) {
            assert!(
                (p.error - e).abs() <= 3.0 * p.ci_halfwidth.max(1e-12),
                "MC {} vs exact {} (ci {})",
                p.error,
                e,
                p.ci_halfwidth
            );
        }
        let exact_points: Vec<RatePoint> = out
            .points
            .iter()
            .zip(&out.exact)
            .map(|(p, &e)| RatePoint {
                parameter: p.parameter,
                error: e,
                ci_halfwidth: 0.0,
            })
            .collect();
        let fit = fit_rate(&exact_points, FitScale::LogLog).unwrap();
        assert!(fit.slope > 0.6 && fit.slope < 1.5, "exact slope {}", fit.slope);
        // cube cells: noise norm grows like h^{-3}
        assert!(
            (out.noise_norm_exponent + 3.0).abs() < 0.1,
            "noise norm exponent {}",
            out.noise_norm_exponent
        );
    }

    #[test]
    fn manufactured_rate_fits() {
        let pts: Vec<RatePoint> = [0.6, 0.3, 0.15, 0.075]
            .iter()
            .map(|&h| RatePoint {
                parameter: h,
                error: h,
                ci_halfwidth: 0.0,
            })
            .collect();
        let f = fit_rate(&pts, FitScale::LogLog).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        let pts: Vec<RatePoint> = [0.4, 0.8, 1.6, 2.4]
            .iter()
            .map(|&x| RatePoint {
                parameter: x,
                error: (-x).exp() * 7.0,
                ci_halfwidth: 0.0,
            })
            .collect();
        let f = fit_rate(&pts, FitScale::LogLinear).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
    }
}
