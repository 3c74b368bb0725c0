//! Scratch driver for sizing the study configurations. Not part of the API.

use std::time::Instant;
use stochwave::analysis::{fit_rate, FitScale, RatePoint};
use stochwave::grid::{Box3, CellPartition};
use stochwave::noise::sample_noise;
use stochwave::oracle::{green_continuity_integral, AnnulusDomain, QuadratureSpec, RetardedTable};
use stochwave::source::SourceProfile;
use stochwave::studies::*;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());

    if which == "pml" || which == "all" {
        let t0 = Instant::now();
        let cfg = PmlStudyConfig {
            r_phys: 0.9,
            rho: 1.5,
            obstacle_radius: 0.0,
            dx: 0.05,
            sigma0_values: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0],
            m_pml: 2,
            s1: None,
            support: Box3::cube([0.0; 3], 0.5),
            h0: 0.25,
            level: 0,
            seed: 17,
            t_on: 0.05,
            t_off: 0.85,
            amplitude: 1.0,
            t_end: 4.0,
            safety: 0.9,
            snapshot_every: 2,
            measure_floor: true,
        };
        let out = pml_convergence_study(&cfg).unwrap();
        println!("== pml sweep ({:?}) floor={:?}", t0.elapsed(), out.floor);
        for (s0, x, e) in &out.points {
            println!("  sigma0={s0:5.1} x={x:5.2} err={e:.4e}");
        }
        if let Some(f) = &out.fit {
            println!("  fit slope={:.3} ci={:.3} over {} pts", f.slope, f.slope_ci, out.fitted_points);
        }
    }

    if which == "oracle" || which == "all" {
        let t0 = Instant::now();
        let cfg = OracleCheckConfig {
            support: Box3::cube([0.0; 3], 0.64),
            h0: 0.16,
            level: 0,
            seed: 5,
            t_on: 0.1,
            t_off: 1.7,
            amplitude: 1.0,
            probes: vec![
                [0.48, 0.0, 0.0],
                [-0.48, 0.0, 0.0],
                [0.0, 0.48, 0.0],
                [0.0, -0.48, 0.0],
                [0.0, 0.0, 0.48],
            ],
            dx_values: vec![0.16, 0.08, 0.04, 0.02],
            t_end: 2.6,
            r_phys: 1.0,
            pad_radius: 1.84,
            oracle_quad: QuadratureSpec::gauss(4, 4),
            safety: 0.9,
        };
        let out = oracle_equivalence_study(&cfg).unwrap();
        println!("== oracle check ({:?})", t0.elapsed());
        for (dx, (pooled, per)) in cfg
            .dx_values
            .iter()
            .zip(out.pooled.iter().zip(&out.per_probe))
        {
            println!("  dx={dx}: pooled={pooled:.4} per-probe={per:?}");
        }
        println!("  slope={:.3}", out.fit.slope);
    }

    if which == "hrate" || which == "all" {
        let t0 = Instant::now();
        let cfg = HRateConfig {
            support: Box3::cube([0.0; 3], 0.6),
            h0: 0.6,
            measured_levels: vec![0, 1, 2, 3],
            ref_level: 5,
            n_seeds: 64,
            base_seed: 4242,
            t_on: 0.1,
            t_off: 1.3,
            amplitude: 1.0,
            eval_radius: 0.95,
            eval_spacing: 0.22,
            eval_fine_spacing: 0.06,
            eval_fine_margin: 0.06,
            n_times: 24,
            t_end: 2.8,
        };
        let out = h_convergence_study(&cfg).unwrap();
        println!("== h-rate ({:?})", t0.elapsed());
        for (p, e) in out.points.iter().zip(&out.exact) {
            println!(
                "  h={:.5} mc={:.5e} ci={:.2e} exact={:.5e}",
                p.parameter, p.error, p.ci_halfwidth, e
            );
        }
        println!(
            "  mc slope={:.3} ci={:.3}; noise-norm exponent={:.3}",
            out.fit.slope, out.fit.slope_ci, out.noise_norm_exponent
        );
        let exact_points: Vec<RatePoint> = out
            .points
            .iter()
            .zip(&out.exact)
            .map(|(p, &e)| RatePoint { parameter: p.parameter, error: e, ci_halfwidth: 0.0 })
            .collect();
        let f = fit_rate(&exact_points, FitScale::LogLog).unwrap();
        println!("  exact slope={:.3}", f.slope);
    }

    if which == "green" || which == "all" {
        let t0 = Instant::now();
        let dom = AnnulusDomain { r_outer: 1.0, r_inner: 0.0, cells_per_axis: 64 };
        let quad = QuadratureSpec::midpoint(2);
        let s = 1.0;
        println!("== green continuity");
        let mut ratios = Vec::new();
        for &dsep in &[0.64, 0.32, 0.16, 0.08, 0.04] {
            let y = [dsep / 2.0, 0.0, 0.0];
            let z = [-dsep / 2.0, 0.0, 0.0];
            let v = green_continuity_integral(y, z, s, &dom, &quad);
            let free = (1.0 - (-s * dsep).exp()) / (4.0 * std::f64::consts::PI * s);
            ratios.push(v / dsep);
            println!("  d={dsep:5.2} I={v:.5e} I/d={:.5e} free-space={free:.5e}", v / dsep);
        }
        let mx = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let mn = ratios.iter().cloned().fold(f64::MAX, f64::min);
        println!("  max/min ratio = {:.3} ({:?})", mx / mn, t0.elapsed());
    }

    if which == "resolvent" || which == "all" {
        let t0 = Instant::now();
        let support = Box3::cube([0.0; 3], 0.6);
        let part = CellPartition::new(support, 0.6, 2).unwrap();
        let noise = sample_noise(&part, 9);
        let src = SourceProfile::new(support, 0.1, 1.3, 1.0).unwrap();
        let probe = [0.6, 0.0, 0.0];
        let table = RetardedTable::build(probe, &noise, &src, &QuadratureSpec::midpoint(4));
        let dt = 5e-4;
        let t_end = src.t_off + 0.6 + 0.3f64.sqrt() * 2.0;
        let n = (t_end / dt).ceil() as usize;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
        let series = table.eval_series(&times);
        let s1 = 1.0 / t_end;
        let w = src.bandwidth();
        println!("== resolvent decay: bandwidth={w:.2}, s1={s1:.3}");
        for (lo, hi) in [(1.0, 4.0), (2.0, 8.0), (2.0, 6.0), (3.0, 9.0)] {
            let sweep = stochwave::numerics::logspace(lo * w, hi * w, 9);
            let fit = resolvent_decay_check(&series, dt, s1, &sweep).unwrap();
            println!("  window [{lo}W, {hi}W]: slope={:.3} residual={:.3}", fit.slope, fit.residual);
        }
        // also check a laplace-consistency sample
        let rels = laplace_consistency_check(
            &noise,
            &src,
            probe,
            &[0.0, 2.0, 5.0],
            1e-3,
            &QuadratureSpec::midpoint(4),
        )
        .unwrap();
        for (s, r) in rels {
            println!("  laplace consistency at s={s}: rel={r:.3e}");
        }
        println!("  ({:?})", t0.elapsed());
    }
}
