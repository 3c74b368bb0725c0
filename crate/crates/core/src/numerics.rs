//! Small numerical utilities shared across the crate: Gauss–Legendre rules,
//! adaptive quadrature for complex-valued integrands, order-independent
//! summation and a tiny hash for provenance records.

use num_complex::Complex64;
use std::sync::OnceLock;

/// Gauss–Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence. Accurate to machine precision for modest `n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative via the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn gl_cached(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static GL15: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static GL30: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match n {
        15 => GL15.get_or_init(|| gauss_legendre(15)),
        30 => GL30.get_or_init(|| gauss_legendre(30)),
        _ => unreachable!("only 15/30 point rules are cached"),
    }
}

fn gl_eval<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64, n: usize) -> Complex64 {
    let (nodes, weights) = gl_cached(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, w) in nodes.iter().zip(weights) {
        acc += f(mid + half * x) * *w;
    }
    acc * half
}

/// Adaptive Gauss quadrature of a complex integrand over [a, b] with an
/// embedded 15/30-point error estimate and interval bisection. `rel_tol` is
/// applied against the running global magnitude.
pub fn integrate_complex<F: Fn(f64) -> Complex64>(f: F, a: f64, b: f64, rel_tol: f64) -> Complex64 {
    // First global pass to set the error scale.
    let coarse = gl_eval(&f, a, b, 30);
    let scale = coarse.norm().max(1e-300);
    let mut total = Complex64::new(0.0, 0.0);
    let mut stack = vec![(a, b, 0u32)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let i15 = gl_eval(&f, lo, hi, 15);
        let i30 = gl_eval(&f, lo, hi, 30);
        let err = (i30 - i15).norm();
        if err <= rel_tol * scale.max(total.norm()) || depth >= 24 {
            total += i30;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, depth + 1));
            stack.push((mid, hi, depth + 1));
        }
    }
    total
}

/// Real-valued convenience wrapper around [`integrate_complex`].
pub fn integrate_real<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    integrate_complex(|t| Complex64::new(f(t), 0.0), a, b, rel_tol).re
}

/// Sums `values` in fixed 4096-element chunks and folds the partial sums in
/// order. The result is independent of thread count and identical to a serial
/// pass over the same chunking, which keeps norm reductions reproducible.
pub fn deterministic_sum(values: &[f64]) -> f64 {
    use rayon::prelude::*;
    const CHUNK: usize = 4096;
    if values.len() <= CHUNK {
        return values.iter().sum();
    }
    let partials: Vec<f64> = values
        .par_chunks(CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partials.iter().sum()
}

/// FNV-1a 64-bit hash; used for provenance identifiers (config/grid hashes),
/// not for anything security-sensitive.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Evenly spaced samples including both endpoints.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let step = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + step * i as f64 })
        .collect()
}

/// Log-spaced samples including both endpoints; requires `0 < a < b`.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > a);
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // n-point GL is exact for degree 2n-1.
        let (nodes, weights) = gauss_legendre(5);
        let val: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(x, w)| w * x.powi(8))
            .sum();
        assert_relative_eq!(val, 2.0 / 9.0, epsilon = 1e-14);
        let sum_w: f64 = weights.iter().sum();
        assert_relative_eq!(sum_w, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn adaptive_quadrature_hits_tolerance() {
        // \int_0^1 e^{-t} dt = 1 - 1/e
        let v = integrate_real(|t| (-t).exp(), 0.0, 1.0, 1e-12);
        assert_relative_eq!(v, 1.0 - (-1.0f64).exp(), epsilon = 1e-12);
        // Oscillatory complex case: \int_0^1 e^{i w t} dt
        let w = 40.0;
        let v = integrate_complex(|t| Complex64::new(0.0, w * t).exp(), 0.0, 1.0, 1e-12);
        let exact = (Complex64::new(0.0, w).exp() - 1.0) / Complex64::new(0.0, w);
        assert!((v - exact).norm() < 1e-11);
    }

    #[test]
    fn deterministic_sum_matches_serial() {
        let values: Vec<f64> = (0..100_000).map(|i| ((i * 2654435761u64 as usize) % 1000) as f64 * 1e-3).collect();
        let par = deterministic_sum(&values);
        let chunked: f64 = values.chunks(4096).map(|c| c.iter().sum::<f64>()).sum();
        assert_eq!(par.to_bits(), chunked.to_bits());
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn logspace_endpoints() {
        let v = logspace(1.0, 100.0, 5);
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(v[4], 100.0, epsilon = 1e-12);
    }
}
