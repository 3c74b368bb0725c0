//! The source strength `f(x, t) = amplitude * g(x) * p(t)`: a separable
//! product of classical mollifier bumps, smooth and compactly supported in
//! the box `D` and the interval `(t_on, t_off)`.

use crate::grid::Box3;
use crate::numerics::integrate_complex;
use crate::{Error, Result};
use num_complex::Complex64;

/// Smooth separable source profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceProfile {
    /// Spatial support box (the noise support `D`).
    pub support: Box3,
    pub t_on: f64,
    pub t_off: f64,
    pub amplitude: f64,
}

impl SourceProfile {
    pub fn new(support: Box3, t_on: f64, t_off: f64, amplitude: f64) -> Result<Self> {
        if !(t_on >= 0.0 && t_off > t_on) {
            return Err(Error::InvalidSource(format!(
                "require 0 <= t_on < t_off, got t_on={t_on} t_off={t_off}"
            )));
        }
        for a in 0..3 {
            if support.side(a) <= 0.0 {
                return Err(Error::InvalidSource("degenerate support box".into()));
            }
        }
        Ok(SourceProfile {
            support,
            t_on,
            t_off,
            amplitude,
        })
    }

    /// Spatial bump: product over axes of `exp(-1/(1 - y^2))` where `y` maps
    /// the support box onto `(-1, 1)^3`. Not peak-normalized: the center value
    /// is `e^{-3}`.
    pub fn eval_g(&self, x: [f64; 3]) -> f64 {
        let mut v = 1.0;
        for a in 0..3 {
            let mid = 0.5 * (self.support.lo[a] + self.support.hi[a]);
            let half = 0.5 * self.support.side(a);
            let y = (x[a] - mid) / half;
            if y.abs() >= 1.0 {
                return 0.0;
            }
            v *= (-1.0 / (1.0 - y * y)).exp();
        }
        v
    }

    /// Temporal bump `exp(-1/((t - t_on)(t_off - t)))`, scaled to peak 1 at
    /// the interval midpoint.
    pub fn eval_p(&self, t: f64) -> f64 {
        if t <= self.t_on || t >= self.t_off {
            return 0.0;
        }
        let d = self.t_off - self.t_on;
        (4.0 / (d * d) - 1.0 / ((t - self.t_on) * (self.t_off - t))).exp()
    }

    /// `f(x, t)`.
    pub fn eval(&self, x: [f64; 3], t: f64) -> f64 {
        self.amplitude * self.eval_g(x) * self.eval_p(t)
    }

    /// `\int p(t) e^{-st} dt`, by adaptive quadrature to 1e-10 relative
    /// tolerance. The factor every Laplace-domain quantity shares.
    pub fn laplace_time_factor(&self, s: Complex64) -> Complex64 {
        let f = |t: f64| Complex64::new(self.eval_p(t), 0.0) * (-s * t).exp();
        integrate_complex(f, self.t_on, self.t_off, 1e-10)
    }

    /// `f_L(x, s) = amplitude * g(x) * \int p e^{-st} dt`.
    pub fn eval_laplace(&self, x: [f64; 3], s: Complex64) -> Complex64 {
        let g = self.eval_g(x);
        if g == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        self.laplace_time_factor(s) * (self.amplitude * g)
    }

    /// Pulse duration `t_off - t_on`.
    pub fn duration(&self) -> f64 {
        self.t_off - self.t_on
    }

    /// Nominal angular bandwidth of the pulse. The transform of the bump is
    /// concentrated below a few cycles across its width; `4*pi/duration` marks
    /// where the superpolynomial roll-off is underway.
    pub fn bandwidth(&self) -> f64 {
        4.0 * std::f64::consts::PI / self.duration()
    }
}
