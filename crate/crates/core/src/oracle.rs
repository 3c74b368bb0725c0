//! Free-space reference solutions built on the fundamental solution
//! `G0(x, y; lambda) = e^{i lambda |x-y|} / (4 pi |x-y|)`.
//!
//! With no obstacle the time-domain solution driven by `f W_h` is the
//! retarded potential
//!
//! ```text
//! u(x, t) = (1/4pi) \int_D f(y, t - |x-y|) W_h(y) / |x-y| dy,
//! ```
//!
//! and its Laplace transform solves the Helmholtz problem with kernel
//! `e^{-s|x-y|}/(4pi |x-y|)`. Both are evaluated by per-cell product
//! quadrature over the noise partition; sharing one table of quadrature terms
//! between the two makes the Laplace-consistency identity hold up to time
//! integration alone.

use crate::grid::Box3;
use crate::noise::NoiseField;
use crate::numerics::gauss_legendre;
use crate::source::SourceProfile;
use num_complex::Complex64;
use rayon::prelude::*;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Per-cell quadrature control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadRule {
    /// One point per sub-cell.
    Midpoint,
    /// Product Gauss–Legendre of the given order per sub-cell axis.
    Gauss(usize),
}

/// Quadrature specification: each cell is split into `subdivisions^3`
/// sub-cells, each integrated with `rule`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub subdivisions: usize,
    pub rule: QuadRule,
}

impl QuadratureSpec {
    pub fn midpoint(subdivisions: usize) -> Self {
        assert!(subdivisions >= 1);
        QuadratureSpec {
            subdivisions,
            rule: QuadRule::Midpoint,
        }
    }

    pub fn gauss(subdivisions: usize, order: usize) -> Self {
        assert!(subdivisions >= 1 && order >= 1);
        QuadratureSpec {
            subdivisions,
            rule: QuadRule::Gauss(order),
        }
    }

    /// Visits every quadrature point of `cell` with its weight.
    fn for_each_point<F: FnMut([f64; 3], f64)>(&self, cell: &Box3, mut visit: F) {
        let n = self.subdivisions;
        let sub = [
            cell.side(0) / n as f64,
            cell.side(1) / n as f64,
            cell.side(2) / n as f64,
        ];
        match self.rule {
            QuadRule::Midpoint => {
                let w = sub[0] * sub[1] * sub[2];
                for k in 0..n {
                    for j in 0..n {
                        for i in 0..n {
                            let p = [
                                cell.lo[0] + (i as f64 + 0.5) * sub[0],
                                cell.lo[1] + (j as f64 + 0.5) * sub[1],
                                cell.lo[2] + (k as f64 + 0.5) * sub[2],
                            ];
                            visit(p, w);
                        }
                    }
                }
            }
            QuadRule::Gauss(order) => {
                let (nodes, weights) = gauss_legendre(order);
                let vol_factor = sub[0] * sub[1] * sub[2] / 8.0;
                for k in 0..n {
                    for j in 0..n {
                        for i in 0..n {
                            let mid = [
                                cell.lo[0] + (i as f64 + 0.5) * sub[0],
                                cell.lo[1] + (j as f64 + 0.5) * sub[1],
                                cell.lo[2] + (k as f64 + 0.5) * sub[2],
                            ];
                            for (za, wa) in nodes.iter().zip(&weights) {
                                for (zb, wb) in nodes.iter().zip(&weights) {
                                    for (zc, wc) in nodes.iter().zip(&weights) {
                                        let p = [
                                            mid[0] + 0.5 * sub[0] * za,
                                            mid[1] + 0.5 * sub[1] * zb,
                                            mid[2] + 0.5 * sub[2] * zc,
                                        ];
                                        visit(p, vol_factor * wa * wb * wc);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// The free-space kernel `e^{i lambda |x-y|} / (4 pi |x-y|)`.
pub fn g0_kernel(x: [f64; 3], y: [f64; 3], lambda: Complex64) -> Complex64 {
    let r = dist(x, y);
    assert!(r > 0.0, "g0_kernel called with coincident points");
    (Complex64::new(0.0, 1.0) * lambda * r).exp() / (FOUR_PI * r)
}

/// Precomputed quadrature terms of the retarded potential at one observation
/// point: `u(x, t) = amplitude * sum_j w_j * p(t - r_j)`, where each term
/// carries the noise coefficient, the spatial bump and the `1/4pi r` kernel.
#[derive(Debug, Clone)]
pub struct RetardedTable {
    terms: Vec<(f64, f64)>, // (weight, travel radius)
    amplitude: f64,
    t_on: f64,
    t_off: f64,
}

impl RetardedTable {
    /// Builds the table. Cells close to `x` are refined one extra dyadic
    /// level and sub-cells whose point falls within one sub-cell diameter of
    /// `x` are excised (the integrand is integrable there).
    pub fn build(
        x: [f64; 3],
        noise: &NoiseField,
        src: &SourceProfile,
        quad: &QuadratureSpec,
    ) -> RetardedTable {
        let part = &noise.partition;
        let h = part.h();
        let cell_diam = h * f64::sqrt(3.0);
        let inv_sqrt_vol = 1.0 / part.cell_volume().sqrt();
        let mut terms = Vec::new();
        for k in 0..part.cell_count() {
            let xi = noise.xi[k];
            if xi == 0.0 {
                continue;
            }
            let cell = part.cell_box(k);
            let near = dist(part.cell_center(k), x) < 2.0 * cell_diam;
            let q = if near {
                QuadratureSpec {
                    subdivisions: quad.subdivisions * 2,
                    rule: quad.rule,
                }
            } else {
                *quad
            };
            let sub_diam = cell_diam / q.subdivisions as f64;
            q.for_each_point(&cell, |p, w| {
                let r = dist(p, x);
                if near && r < sub_diam {
                    return;
                }
                let g = src.eval_g(p);
                if g == 0.0 {
                    return;
                }
                terms.push((inv_sqrt_vol * xi * g * w / (FOUR_PI * r), r));
            });
        }
        RetardedTable {
            terms,
            amplitude: src.amplitude,
            t_on: src.t_on,
            t_off: src.t_off,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for &(w, r) in &self.terms {
            let tau = t - r;
            if tau <= self.t_on || tau >= self.t_off {
                continue;
            }
            let d = self.t_off - self.t_on;
            acc += w * (4.0 / (d * d) - 1.0 / ((tau - self.t_on) * (self.t_off - tau))).exp();
        }
        self.amplitude * acc
    }

    pub fn eval_series(&self, times: &[f64]) -> Vec<f64> {
        times.par_iter().map(|&t| self.eval(t)).collect()
    }

    /// Laplace-domain value on the same quadrature terms:
    /// `amplitude * p_hat(s) * sum_j w_j e^{-s r_j}`.
    pub fn laplace_value(&self, s: Complex64, time_factor: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(w, r) in &self.terms {
            acc += (-s * r).exp() * w;
        }
        acc * time_factor * self.amplitude
    }
}

/// `u^{(h)}(x, t)` in free space by per-cell quadrature.
pub fn retarded_potential(
    x: [f64; 3],
    t: f64,
    noise: &NoiseField,
    src: &SourceProfile,
    quad: &QuadratureSpec,
) -> f64 {
    RetardedTable::build(x, noise, src, quad).eval(t)
}

/// Laplace-domain solution `u_L^{(h)}(x, s)` in free space: the convolution of
/// `f_L W_h` with the kernel at `lambda = i s`. Shares its quadrature terms
/// with the retarded potential.
pub fn helmholtz_convolution(
    x: [f64; 3],
    s: Complex64,
    noise: &NoiseField,
    src: &SourceProfile,
    quad: &QuadratureSpec,
) -> Complex64 {
    let table = RetardedTable::build(x, noise, src, quad);
    table.laplace_value(s, src.laplace_time_factor(s))
}

/// Integration domain for the Green continuity integral: the annulus
/// `r_inner < |x| < r_outer`, voxelized at `cells_per_axis` per axis.
#[derive(Debug, Clone, Copy)]
pub struct AnnulusDomain {
    pub r_outer: f64,
    pub r_inner: f64,
    pub cells_per_axis: usize,
}

/// `\int_domain |G0(x, y; i s) - G0(x, z; i s)|^2 dx` by midpoint voxel
/// quadrature. Voxels near either singular point are subdivided one extra
/// level and sub-cells within one sub-cell diameter of a singularity are
/// skipped.
pub fn green_continuity_integral(
    y: [f64; 3],
    z: [f64; 3],
    s: f64,
    domain: &AnnulusDomain,
    quad: &QuadratureSpec,
) -> f64 {
    if dist(y, z) == 0.0 {
        return 0.0;
    }
    let n = domain.cells_per_axis;
    let delta = 2.0 * domain.r_outer / n as f64;
    let diam = delta * f64::sqrt(3.0);
    // kernel at lambda = i s: e^{-s r} / (4 pi r), real for real s
    let kernel = |p: [f64; 3], q: [f64; 3]| {
        let r = dist(p, q);
        (-s * r).exp() / (FOUR_PI * r)
    };
    let partials: Vec<f64> = (0..n * n * n)
        .into_par_iter()
        .map(|lin| {
            let i = lin % n;
            let j = (lin / n) % n;
            let k = lin / (n * n);
            let lo = [
                -domain.r_outer + i as f64 * delta,
                -domain.r_outer + j as f64 * delta,
                -domain.r_outer + k as f64 * delta,
            ];
            let c = [lo[0] + 0.5 * delta, lo[1] + 0.5 * delta, lo[2] + 0.5 * delta];
            let rc = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            if rc >= domain.r_outer || rc <= domain.r_inner {
                return 0.0;
            }
            let near = dist(c, y) < 2.0 * diam || dist(c, z) < 2.0 * diam;
            let q = if near {
                QuadratureSpec {
                    subdivisions: quad.subdivisions * 2,
                    rule: quad.rule,
                }
            } else {
                *quad
            };
            let sub_diam = diam / q.subdivisions as f64;
            let cell = Box3::new(lo, [lo[0] + delta, lo[1] + delta, lo[2] + delta]);
            let mut acc = 0.0;
            q.for_each_point(&cell, |p, w| {
                if dist(p, y) < sub_diam || dist(p, z) < sub_diam {
                    return;
                }
                let d = kernel(p, y) - kernel(p, z);
                acc += w * d * d;
            });
            acc
        })
        .collect();
    partials.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellPartition;
    use crate::noise::{sample_noise, NoiseField};
    use approx::assert_relative_eq;

    fn single_cell_field(center: [f64; 3], h: f64, xi: f64) -> NoiseField {
        let part = CellPartition::new(Box3::cube(center, h), h, 0).unwrap();
        let mut f = sample_noise(&part, 0);
        f.xi[0] = xi;
        f
    }

    #[test]
    fn kernel_reference_values() {
        let x = [0.0; 3];
        let y = [1.0, 0.0, 0.0];
        let v = g0_kernel(x, y, Complex64::new(0.0, 0.0));
        assert_relative_eq!(v.re, 1.0 / FOUR_PI, epsilon = 1e-15);
        assert_relative_eq!(v.re, 0.07957747154594767, epsilon = 1e-15);
        assert!(v.im.abs() < 1e-16);

        // lambda = i gives e^{-|x-y|}
        let v = g0_kernel(x, y, Complex64::new(0.0, 1.0));
        assert_relative_eq!(v.re, (-1.0f64).exp() / FOUR_PI, epsilon = 1e-15);
        assert_relative_eq!(v.re, 0.029274915762159584, max_relative = 1e-12);
    }

    #[test]
    fn kernel_symmetry() {
        let pairs = [
            ([0.1, -0.4, 0.2], [0.9, 0.3, -0.7]),
            ([1.0, 2.0, 3.0], [-0.5, 0.1, 0.6]),
            ([0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
        ];
        let lambda = Complex64::new(1.3, 0.4);
        for (a, b) in pairs {
            let v = g0_kernel(a, b, lambda);
            let w = g0_kernel(b, a, lambda);
            assert_eq!(v, w);
        }
    }

    #[test]
    fn causality_is_exact() {
        let field = single_cell_field([0.0; 3], 0.2, 1.0);
        let src = SourceProfile::new(Box3::cube([0.0; 3], 0.2), 0.1, 0.5, 1.0).unwrap();
        let x = [1.0, 0.0, 0.0];
        let quad = QuadratureSpec::midpoint(3);
        // earliest possible arrival: t_on + dist(x, D)
        let d_min = 1.0 - 0.1 * f64::sqrt(3.0);
        for &t in &[0.0, 0.3, 0.9, 0.1 + d_min] {
            assert_eq!(retarded_potential(x, t, &field, &src, &quad), 0.0);
        }
        // and a later time is nonzero
        assert!(retarded_potential(x, 1.3, &field, &src, &quad).abs() > 0.0);
    }

    #[test]
    fn zero_noise_gives_zero() {
        let field = single_cell_field([0.0; 3], 0.2, 0.0);
        let src = SourceProfile::new(Box3::cube([0.0; 3], 0.2), 0.1, 0.5, 1.0).unwrap();
        let quad = QuadratureSpec::midpoint(2);
        assert_eq!(retarded_potential([0.8, 0.0, 0.0], 1.2, &field, &src, &quad), 0.0);
        let v = helmholtz_convolution(
            [0.8, 0.0, 0.0],
            Complex64::new(1.0, 2.0),
            &field,
            &src,
            &quad,
        );
        assert_eq!(v, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn far_cell_limit_matches_closed_form() {
        // One small cell far from the probe: u -> sqrt(V) g(c) p(t - r)/(4 pi r).
        let h = 0.04;
        let c = [0.1, 0.0, 0.0];
        let field = single_cell_field(c, h, 1.0);
        // wide source box so g is nearly constant over the cell
        let src = SourceProfile::new(Box3::cube([0.0; 3], 1.2), 0.1, 0.9, 1.0).unwrap();
        let diam = h * f64::sqrt(3.0);
        let x = [c[0] + 5.0 * diam, 0.0, 0.0];
        let r = dist(x, c);
        let t = 0.5 + r; // sits at the temporal peak after travel
        let expected = (h * h * h).sqrt() * src.eval_g(c) * src.eval_p(t - r) / (FOUR_PI * r);
        let v = retarded_potential(x, t, &field, &src, &QuadratureSpec::midpoint(4));
        assert!(
            (v - expected).abs() / expected.abs() < 0.01,
            "quad {v} vs closed form {expected}"
        );
    }

    #[test]
    fn linearity_in_the_noise_field() {
        let part = CellPartition::new(Box3::cube([0.0; 3], 0.4), 0.2, 1).unwrap();
        let f1 = sample_noise(&part, 11);
        let f2 = sample_noise(&part, 22);
        let mut combo = f1.clone();
        for (c, (a, b)) in combo.xi.iter_mut().zip(f1.xi.iter().zip(&f2.xi)) {
            *c = 2.5 * a - 0.75 * b;
        }
        let src = SourceProfile::new(Box3::cube([0.0; 3], 0.4), 0.1, 0.7, 1.0).unwrap();
        let quad = QuadratureSpec::midpoint(3);
        let x = [0.9, 0.1, -0.2];
        let t = 1.4;
        let va = retarded_potential(x, t, &f1, &src, &quad);
        let vb = retarded_potential(x, t, &f2, &src, &quad);
        let vc = retarded_potential(x, t, &combo, &src, &quad);
        assert_relative_eq!(vc, 2.5 * va - 0.75 * vb, max_relative = 1e-12, epsilon = 1e-15);
    }

    #[test]
    fn helmholtz_real_for_real_s() {
        let part = CellPartition::new(Box3::cube([0.0; 3], 0.4), 0.2, 1).unwrap();
        let field = sample_noise(&part, 3);
        let src = SourceProfile::new(Box3::cube([0.0; 3], 0.4), 0.1, 0.7, 1.0).unwrap();
        let v = helmholtz_convolution(
            [0.7, 0.2, 0.0],
            Complex64::new(1.5, 0.0),
            &field,
            &src,
            &QuadratureSpec::midpoint(2),
        );
        assert!(v.im.abs() < 1e-14 * v.re.abs().max(1.0));
    }

    #[test]
    fn green_continuity_zero_at_coincident_points() {
        let dom = AnnulusDomain {
            r_outer: 1.0,
            r_inner: 0.0,
            cells_per_axis: 16,
        };
        let y = [0.2, 0.0, 0.0];
        let v = green_continuity_integral(y, y, 1.0, &dom, &QuadratureSpec::midpoint(1));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn green_continuity_monotone_and_bounded() {
        // Over whole space the integral has the closed form (1 - e^{-s d})/(4 pi s);
        // on the ball it should stay within a modest factor and grow with d.
        let dom = AnnulusDomain {
            r_outer: 1.0,
            r_inner: 0.0,
            cells_per_axis: 32,
        };
        let quad = QuadratureSpec::midpoint(2);
        let s = 1.0;
        let mut prev = 0.0;
        for &d in &[0.16, 0.32, 0.64] {
            let y = [d / 2.0, 0.0, 0.0];
            let z = [-d / 2.0, 0.0, 0.0];
            let v = green_continuity_integral(y, z, s, &dom, &quad);
            assert!(v > prev, "not monotone at d={d}: {v} <= {prev}");
            let free_space = (1.0 - (-s * d).exp()) / (FOUR_PI * s);
            assert!(
                v < free_space && v > 0.5 * free_space,
                "d={d}: ball value {v} vs free-space {free_space}"
            );
            prev = v;
        }
    }
}
