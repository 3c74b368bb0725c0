//! Piecewise-constant white-noise realizations.
//!
//! A realization assigns one standard normal coefficient `xi_K` to every cell
//! of a [`CellPartition`]; the field value on cell `K` is `|K|^{-1/2} xi_K`.
//! Coefficients come from a stateless counter-based generator keyed on
//! `(seed, cell index)`, so sampling is reproducible, order-independent and
//! random-access — exactly what deterministic parallel Monte Carlo needs.
//! Coarser levels are never sampled fresh: they are derived by
//! [`coarsen_noise`], which keeps every refinement level coupled to the same
//! underlying Brownian sheet.

use crate::grid::CellPartition;
use crate::{Error, Result};

/// splitmix64 finalizer; good avalanche behavior, stable across platforms.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn to_unit_open(bits: u64) -> f64 {
    // (0, 1]: never 0, so the log below is finite.
    ((bits >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

#[inline]
fn to_unit_half_open(bits: u64) -> f64 {
    // [0, 1)
    (bits >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Standard normal variate for `(seed, counter)` via Box–Muller on two
/// decorrelated splitmix64 streams.
#[inline]
pub fn standard_normal(seed: u64, counter: u64) -> f64 {
    let a = mix64(seed ^ mix64(counter));
    let b = mix64(a ^ 0x6a09_e667_f3bc_c909);
    let u1 = to_unit_open(a);
    let u2 = to_unit_half_open(b);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One realization of the discretized white noise on a cell partition.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    pub partition: CellPartition,
    /// Per-cell standard normal coefficients, indexed canonically.
    pub xi: Vec<f64>,
    /// Master seed the realization derives from.
    pub seed: u64,
}

impl NoiseField {
    /// Refinement level of the underlying partition.
    pub fn level(&self) -> u32 {
        self.partition.level
    }

    /// Field value at a point: `|K|^{-1/2} xi_K` on cell `K`, 0 outside the
    /// support box. Cells are half-open so faces are owned by exactly one cell.
    pub fn value_at(&self, x: [f64; 3]) -> f64 {
        match self.partition.cell_of_point(x) {
            Some(k) => self.xi[k] / self.partition.cell_volume().sqrt(),
            None => 0.0,
        }
    }

    /// `||W_h||^2_{L2(D)}`, which collapses to the plain sum of squared
    /// coefficients: the `|K|^{-1}` density and the cell volume cancel.
    pub fn l2_norm_squared(&self) -> f64 {
        self.xi.iter().map(|x| x * x).sum()
    }

    /// Scales coefficients; handy for linearity checks.
    pub fn scaled(&self, c: f64) -> NoiseField {
        NoiseField {
            partition: self.partition.clone(),
            xi: self.xi.iter().map(|x| c * x).collect(),
            seed: self.seed,
        }
    }
}

/// Samples `xi_K` iid N(0,1), keyed on `(seed, canonical cell index)`.
pub fn sample_noise(partition: &CellPartition, seed: u64) -> NoiseField {
    let n = partition.cell_count();
    let xi = (0..n).map(|k| standard_normal(seed, k as u64)).collect();
    NoiseField {
        partition: partition.clone(),
        xi,
        seed,
    }
}

/// Exact one-level coarsening: each parent coefficient is the normalized sum
/// of its eight children, `xi_K = 8^{-1/2} sum_i xi_{K_i}`, which is the
/// coefficient the parent cell would receive from the same Brownian sheet.
pub fn coarsen_noise(fine: &NoiseField) -> Result<NoiseField> {
    let coarse_part = fine.partition.coarsen()?;
    let inv_sqrt8 = 1.0 / f64::sqrt(8.0);
    let mut xi = vec![0.0; coarse_part.cell_count()];
    for (k, v) in xi.iter_mut().enumerate() {
        let children = coarse_part.child_indices(k, &fine.partition);
        *v = inv_sqrt8 * children.iter().map(|&c| fine.xi[c]).sum::<f64>();
    }
    Ok(NoiseField {
        partition: coarse_part,
        xi,
        seed: fine.seed,
    })
}

/// Derives the whole level stack `levels..=field.level()` from one finest
/// realization; index 0 of the result is the coarsest requested level.
pub fn coarsen_to_levels(finest: &NoiseField, coarsest_level: u32) -> Result<Vec<NoiseField>> {
    if coarsest_level > finest.level() {
        return Err(Error::InvalidPartition(format!(
            "coarsest level {} exceeds field level {}",
            coarsest_level,
            finest.level()
        )));
    }
    let mut stack = vec![finest.clone()];
    while stack.last().unwrap().level() > coarsest_level {
        let next = coarsen_noise(stack.last().unwrap())?;
        stack.push(next);
    }
    stack.reverse();
    Ok(stack)
}

/// The pairing `(W_h, phi) = sum_K |K|^{-1/2} xi_K \int_K phi`, with the cell
/// integral taken by the midpoint rule.
pub fn pair_with_function<F: Fn([f64; 3]) -> f64>(field: &NoiseField, phi: F) -> f64 {
    let vol = field.partition.cell_volume();
    let scale = vol / vol.sqrt(); // |K|^{-1/2} * |K|
    (0..field.partition.cell_count())
        .map(|k| scale * field.xi[k] * phi(field.partition.cell_center(k)))
        .sum()
}
