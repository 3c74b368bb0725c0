//! Norms, Laplace traces, error metrics between runs, the Monte Carlo
//! expectation driver and convergence-rate fitting.

use crate::numerics::deterministic_sum;
use crate::solver::SimulationResult;
use crate::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use std::collections::HashMap;

/// Midpoint-rule L2 norm of a nodal field sample: `sqrt(dx^3 sum u^2)`.
pub fn space_l2(values: &[f64], dx: f64) -> f64 {
    let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
    (dx.powi(3) * deterministic_sum(&squares)).sqrt()
}

/// `L2(0, T; L2)` norm of a run: trapezoid rule in time applied to the
/// squared per-step physical-region norms.
pub fn time_space_l2(result: &SimulationResult) -> f64 {
    time_norm_squared(&result.physical_l2, result.dt).sqrt()
}

fn time_norm_squared(norms: &[f64], dt: f64) -> f64 {
    if norms.len() < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (i, v) in norms.iter().enumerate() {
        let w = if i == 0 || i == norms.len() - 1 { 0.5 } else { 1.0 };
        acc += w * v * v;
    }
    acc * dt
}

/// Trapezoid quadrature of `e^{-st} u(t)` over the sampled series.
///
/// Truncation control: the discarded tail is estimated from the damped
/// magnitude of the last 5% of samples and must be below 1e-8 of the series
/// peak, otherwise the series is too short for this `s`.
pub fn laplace_trace(series: &[f64], dt: f64, s: Complex64) -> Result<Complex64> {
    if series.len() < 2 {
        return Err(Error::InvalidStudy("laplace_trace needs at least 2 samples".into()));
    }
    if s.re <= 0.0 {
        return Err(Error::InvalidStudy("laplace_trace requires Re s > 0".into()));
    }
    let peak = series.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let t_end = (series.len() - 1) as f64 * dt;
        let tail_start = series.len() - (series.len() / 20).max(1);
        let tail = series[tail_start..]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let bound = (-s.re * t_end).exp() * tail;
        if bound > 1e-8 * peak {
            return Err(Error::InvalidStudy(format!(
                "series too short for Re s = {}: truncation bound {bound:.3e} exceeds 1e-8 * peak",
                s.re
            )));
        }
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, &u) in series.iter().enumerate() {
        let w = if i == 0 || i == series.len() - 1 { 0.5 } else { 1.0 };
        let t = i as f64 * dt;
        acc += (-s * t).exp() * (w * u);
    }
    Ok(acc * dt)
}

/// Reconstructs the canonical integer offsets of a ball region (the order
/// used by `BallRegion::build`).
fn region_offsets(radius: f64, dx: f64) -> Vec<[i32; 3]> {
    let n = (radius / dx).ceil() as i32;
    let mut out = Vec::new();
    for oz in -n..=n {
        for oy in -n..=n {
            for ox in -n..=n {
                let r2 = (ox as f64 * dx).powi(2) + (oy as f64 * dx).powi(2) + (oz as f64 * dx).powi(2);
                if r2 < radius * radius {
                    out.push([ox, oy, oz]);
                }
            }
        }
    }
    out
}

/// `L2(0, T; L2)` distance between two runs over the physical region.
///
/// Fast path: identical region layout and time sampling. Otherwise `b` is
/// resampled onto `a`'s snapshot lattice: trilinearly in space and linearly
/// in time. Incompatible time ranges are rejected.
pub fn error_between(a: &SimulationResult, b: &SimulationResult) -> Result<f64> {
    let sa = a
        .snapshots
        .as_ref()
        .ok_or_else(|| Error::Incompatible("first run has no snapshots".into()))?;
    let sb = b
        .snapshots
        .as_ref()
        .ok_or_else(|| Error::Incompatible("second run has no snapshots".into()))?;
    let dt_a = a.dt * sa.every as f64;
    let dt_b = b.dt * sb.every as f64;
    let t_end_a = (sa.frames.len().saturating_sub(1)) as f64 * dt_a;
    let t_end_b = (sb.frames.len().saturating_sub(1)) as f64 * dt_b;
    if t_end_b + 1e-12 < t_end_a {
        return Err(Error::Incompatible(format!(
            "second run covers [0, {t_end_b}], first needs [0, {t_end_a}]"
        )));
    }

    let same_layout = sa.region.compatible(&sb.region)
        && (dt_a - dt_b).abs() <= 1e-12 * dt_a
        && sa.frames.len() == sb.frames.len();

    let dx = sa.region.dx;
    let norms: Vec<f64> = if same_layout {
        sa.frames
            .par_iter()
            .zip(&sb.frames)
            .map(|(fa, fb)| {
                let sq: Vec<f64> = fa.iter().zip(fb).map(|(x, y)| (x - y) * (x - y)).collect();
                (dx.powi(3) * deterministic_sum(&sq)).sqrt()
            })
            .collect()
    } else {
        let offs_a = region_offsets(sa.region.radius, sa.region.dx);
        let offs_b = region_offsets(sb.region.radius, sb.region.dx);
        if offs_a.len() != sa.region.len() || offs_b.len() != sb.region.len() {
            return Err(Error::Incompatible(
                "snapshot regions do not match their canonical enumeration".into(),
            ));
        }
        let index_b: HashMap<[i32; 3], usize> =
            offs_b.iter().enumerate().map(|(i, &o)| (o, i)).collect();
        let ratio = sa.region.dx / sb.region.dx;
        // spatial interpolation plan: for each a-node the 8 b-nodes and weights
        let plan: Vec<Vec<(usize, f64)>> = offs_a
            .par_iter()
            .map(|&o| {
                let pos = [
                    o[0] as f64 * ratio,
                    o[1] as f64 * ratio,
                    o[2] as f64 * ratio,
                ];
                let base = [pos[0].floor(), pos[1].floor(), pos[2].floor()];
                let frac = [pos[0] - base[0], pos[1] - base[1], pos[2] - base[2]];
                let mut entries = Vec::new();
                for cz in 0..2 {
                    for cy in 0..2 {
                        for cx in 0..2 {
                            let w = (if cx == 0 { 1.0 - frac[0] } else { frac[0] })
                                * (if cy == 0 { 1.0 - frac[1] } else { frac[1] })
                                * (if cz == 0 { 1.0 - frac[2] } else { frac[2] });
                            if w == 0.0 {
                                continue;
                            }
                            let key = [
                                base[0] as i32 + cx,
                                base[1] as i32 + cy,
                                base[2] as i32 + cz,
                            ];
                            entries.push((key, w));
                        }
                    }
                }
                entries
                    .into_iter()
                    .filter_map(|(key, w)| index_b.get(&key).map(|&i| (i, w)))
                    .collect()
            })
            .collect();

        (0..sa.frames.len())
            .into_par_iter()
            .map(|fi| {
                let t = fi as f64 * dt_a;
                // linear interpolation between b's frames at time t
                let pos = t / dt_b;
                let lo = (pos.floor() as usize).min(sb.frames.len() - 1);
                let hi = (lo + 1).min(sb.frames.len() - 1);
                let wt = pos - lo as f64;
                let fa = &sa.frames[fi];
                let flo = &sb.frames[lo];
                let fhi = &sb.frames[hi];
                let sq: Vec<f64> = fa
                    .iter()
                    .enumerate()
                    .map(|(i, &va)| {
                        let vb: f64 = plan[i]
                            .iter()
                            .map(|&(j, w)| w * ((1.0 - wt) * flo[j] + wt * fhi[j]))
                            .sum();
                        (va - vb) * (va - vb)
                    })
                    .collect();
                (dx.powi(3) * deterministic_sum(&sq)).sqrt()
            })
            .collect()
    };
    Ok(time_norm_squared(&norms, dt_a).sqrt())
}

/// Sample mean and 95% normal confidence half-width of `runner` over seeds
/// `base_seed .. base_seed + n`. Seeds are evaluated in parallel and reduced
/// in seed order, so the estimate is deterministic for any worker count.
pub fn mc_expectation<F>(runner: F, n: usize, base_seed: u64) -> Result<(f64, f64)>
where
    F: Fn(u64) -> f64 + Sync,
{
    if n < 2 {
        return Err(Error::InvalidStudy("mc_expectation needs n >= 2".into()));
    }
    let values: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| runner(base_seed + i))
        .collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    Ok((mean, 1.96 * (var / n as f64).sqrt()))
}

/// Abscissa transform of a rate fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitScale {
    /// `ln(error)` against `ln(parameter)`: power laws.
    LogLog,
    /// `ln(error)` against the raw parameter: exponential laws.
    LogLinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub parameter: f64,
    pub error: f64,
    pub ci_halfwidth: f64,
}

/// Least-squares rate fit with its diagnostics.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub points: Vec<RatePoint>,
    pub scale: FitScale,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in log-error space.
    pub residual: f64,
    /// 95% half-width of the slope estimate.
    pub slope_ci: f64,
}

/// Fits `ln(error)` against the (possibly log-transformed) parameter.
/// Requires at least three points with positive errors.
pub fn fit_rate(points: &[RatePoint], scale: FitScale) -> Result<RateReport> {
    if points.len() < 3 {
        return Err(Error::InvalidStudy(format!(
            "rate fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for p in points {
        if !(p.error > 0.0) {
            return Err(Error::InvalidStudy(format!(
                "rate fit requires positive errors, got {} at parameter {}",
                p.error, p.parameter
            )));
        }
        let x = match scale {
            FitScale::LogLog => {
                if !(p.parameter > 0.0) {
                    return Err(Error::InvalidStudy(
                        "log-log fit requires positive parameters".into(),
                    ));
                }
                p.parameter.ln()
            }
            FitScale::LogLinear => p.parameter,
        };
        xs.push(x);
        ys.push(p.error.ln());
    }
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidStudy("degenerate fit: constant parameter".into()));
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let residual = (ss_res / n).sqrt();
    let df = (points.len() as f64 - 2.0).max(1.0);
    let slope_ci = 1.96 * (ss_res / df / sxx).sqrt();
    Ok(RateReport {
        points: points.to_vec(),
        scale,
        slope,
        intercept,
        residual,
        slope_ci,
    })
}
