//! Voxel grid over the ball `B_rho` with region classification and the dyadic
//! cell partition that carries the discretized noise.

use crate::numerics::fnv1a64;
use crate::{Error, Result};

/// Region tag of a grid node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Region {
    /// Inside the sound-soft obstacle; field pinned to zero.
    Obstacle = 0,
    /// Physical annulus `B_R \ O`.
    Physical = 1,
    /// Absorbing layer `R <= |x| < rho`.
    Pml = 2,
    /// Outside `B_rho`; field pinned to zero.
    Exterior = 3,
}

/// Geometry of the computational ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Outer (truncation) radius `rho`.
    pub rho: f64,
    /// Physical radius `R` of the region where solutions are measured.
    pub r_phys: f64,
    /// Radius of the spherical obstacle; 0 means free space.
    pub obstacle_radius: f64,
    /// Grid spacing.
    pub dx: f64,
    /// Coordinates of the grid origin (a node lies exactly here).
    pub center: [f64; 3],
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.obstacle_radius >= 0.0 && self.obstacle_radius < self.r_phys) {
            return Err(Error::InvalidGrid(format!(
                "require 0 <= obstacle_radius < R, got obstacle_radius={} R={}",
                self.obstacle_radius, self.r_phys
            )));
        }
        if !(self.r_phys < self.rho) {
            return Err(Error::InvalidGrid(format!(
                "require R < rho, got R={} rho={}",
                self.r_phys, self.rho
            )));
        }
        if !(self.dx > 0.0) {
            return Err(Error::InvalidGrid(format!("require dx > 0, got {}", self.dx)));
        }
        if self.rho / self.dx < 8.0 {
            return Err(Error::InvalidGrid(format!(
                "grid too coarse: rho/dx = {} < 8",
                self.rho / self.dx
            )));
        }
        if self.dx >= self.rho - self.r_phys {
            return Err(Error::InvalidGrid(format!(
                "dx = {} must be smaller than the layer thickness rho - R = {}",
                self.dx,
                self.rho - self.r_phys
            )));
        }
        Ok(())
    }

    /// Checks that `b` lies strictly inside the physical annulus `B_R \ O`.
    pub fn contains_support_box(&self, b: &Box3) -> Result<()> {
        let far = b.farthest_corner_radius(self.center);
        if far >= self.r_phys {
            return Err(Error::InvalidPartition(format!(
                "support box reaches radius {far:.6} >= R = {}",
                self.r_phys
            )));
        }
        if self.obstacle_radius > 0.0 {
            let near = b.distance_to_point(self.center);
            if near <= self.obstacle_radius {
                return Err(Error::InvalidPartition(format!(
                    "support box comes within {near:.6} of the center, obstacle radius is {}",
                    self.obstacle_radius
                )));
            }
        }
        Ok(())
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Box3 {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Box3 { lo, hi }
    }

    pub fn cube(center: [f64; 3], side: f64) -> Self {
        let h = side / 2.0;
        Box3 {
            lo: [center[0] - h, center[1] - h, center[2] - h],
            hi: [center[0] + h, center[1] + h, center[2] + h],
        }
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        self.side(0) * self.side(1) * self.side(2)
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
            0.5 * (self.lo[2] + self.hi[2]),
        ]
    }

    /// Half-open membership `lo <= x < hi`, so adjacent cells tile without
    /// double counting.
    pub fn contains_half_open(&self, x: [f64; 3]) -> bool {
        (0..3).all(|a| x[a] >= self.lo[a] && x[a] < self.hi[a])
    }

    /// Volume of the intersection with another box.
    pub fn overlap_volume(&self, other: &Box3) -> f64 {
        let mut v = 1.0;
        for a in 0..3 {
            let lo = self.lo[a].max(other.lo[a]);
            let hi = self.hi[a].min(other.hi[a]);
            if hi <= lo {
                return 0.0;
            }
            v *= hi - lo;
        }
        v
    }

    /// Largest distance from `origin` to a corner of the box.
    pub fn farthest_corner_radius(&self, origin: [f64; 3]) -> f64 {
        let mut r2 = 0.0;
        for a in 0..3 {
            let d = (self.lo[a] - origin[a]).abs().max((self.hi[a] - origin[a]).abs());
            r2 += d * d;
        }
        f64::sqrt(r2)
    }

    fn distance_to_point(&self, p: [f64; 3]) -> f64 {
        let mut d2 = 0.0;
        for a in 0..3 {
            let d = if p[a] < self.lo[a] {
                self.lo[a] - p[a]
            } else if p[a] > self.hi[a] {
                p[a] - self.hi[a]
            } else {
                0.0
            };
            d2 += d * d;
        }
        f64::sqrt(d2)
    }
}

/// Uniform node-centered voxel grid covering `[-L, L]^3` around the center,
/// where `L = ceil(rho/dx) * dx`. Nodes are tagged by region; the tag arrays
/// are immutable after construction.
#[derive(Debug, Clone)]
pub struct Grid {
    pub spec: GridSpec,
    /// Nodes per axis (odd; the center node is at index `n_half`).
    pub dims: [usize; 3],
    n_half: i64,
    tags: Vec<Region>,
}

impl Grid {
    pub fn build(spec: GridSpec) -> Result<Grid> {
        spec.validate()?;
        let n_half = (spec.rho / spec.dx).ceil() as i64;
        let n = (2 * n_half + 1) as usize;
        let mut tags = vec![Region::Exterior; n * n * n];
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    let x = Self::coord_static(&spec, n_half, [ix, iy, iz]);
                    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                    let tag = if spec.obstacle_radius > 0.0 && r <= spec.obstacle_radius {
                        Region::Obstacle
                    } else if r < spec.r_phys {
                        Region::Physical
                    } else if r < spec.rho {
                        Region::Pml
                    } else {
                        Region::Exterior
                    };
                    tags[(iz * n + iy) * n + ix] = tag;
                }
            }
        }
        Ok(Grid {
            spec,
            dims: [n, n, n],
            n_half,
            tags,
        })
    }

    fn coord_static(spec: &GridSpec, n_half: i64, idx: [usize; 3]) -> [f64; 3] {
        [
            spec.center[0] + (idx[0] as i64 - n_half) as f64 * spec.dx,
            spec.center[1] + (idx[1] as i64 - n_half) as f64 * spec.dx,
            spec.center[2] + (idx[2] as i64 - n_half) as f64 * spec.dx,
        ]
    }

    #[inline]
    pub fn node_coord(&self, idx: [usize; 3]) -> [f64; 3] {
        Self::coord_static(&self.spec, self.n_half, idx)
    }

    #[inline]
    pub fn lin_index(&self, idx: [usize; 3]) -> usize {
        (idx[2] * self.dims[1] + idx[1]) * self.dims[0] + idx[0]
    }

    #[inline]
    pub fn region(&self, idx: [usize; 3]) -> Region {
        self.tags[self.lin_index(idx)]
    }

    #[inline]
    pub fn region_lin(&self, lin: usize) -> Region {
        self.tags[lin]
    }

    pub fn node_count(&self) -> usize {
        self.tags.len()
    }

    /// Nearest node to a point; errors if the point is off-grid.
    pub fn nearest_node(&self, p: [f64; 3]) -> Result<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let i = ((p[a] - self.spec.center[a]) / self.spec.dx).round() as i64 + self.n_half;
            if i < 0 || i as usize >= self.dims[a] {
                return Err(Error::InvalidGrid(format!(
                    "point {p:?} is outside the grid on axis {a}"
                )));
            }
            idx[a] = i as usize;
        }
        Ok(idx)
    }

    pub fn count_region(&self, region: Region) -> usize {
        self.tags.iter().filter(|&&t| t == region).count()
    }

    /// Provenance hash over the geometric parameters and dimensions.
    pub fn hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(64);
        for v in [
            self.spec.rho,
            self.spec.r_phys,
            self.spec.obstacle_radius,
            self.spec.dx,
            self.spec.center[0],
            self.spec.center[1],
            self.spec.center[2],
        ] {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        bytes.extend_from_slice(&(self.dims[0] as u64).to_le_bytes());
        fnv1a64(&bytes)
    }
}

/// Dyadic cube partition of an axis-aligned support box. Cells are implicit:
/// a lattice of cubes of side `h = h0 * 2^-level`, indexed lexicographically
/// by `(i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPartition {
    pub bbox: Box3,
    pub h0: f64,
    pub level: u32,
    /// Cells per axis at level 0.
    base_dims: [usize; 3],
}

impl CellPartition {
    /// Builds the partition without geometry checks. Each side of `bbox` must
    /// be an integer multiple of `h0` (to 1e-9 relative).
    pub fn new(bbox: Box3, h0: f64, level: u32) -> Result<CellPartition> {
        if !(h0 > 0.0) {
            return Err(Error::InvalidPartition(format!("h0 must be positive, got {h0}")));
        }
        let mut base_dims = [0usize; 3];
        for a in 0..3 {
            let side = bbox.side(a);
            if side <= 0.0 {
                return Err(Error::InvalidPartition(format!(
                    "degenerate support box on axis {a}"
                )));
            }
            let n = side / h0;
            let n_round = n.round();
            if n_round < 1.0 || (n - n_round).abs() > 1e-9 * n.max(1.0) {
                return Err(Error::InvalidPartition(format!(
                    "box side {side} on axis {a} is not a multiple of h0 = {h0}"
                )));
            }
            base_dims[a] = n_round as usize;
        }
        Ok(CellPartition {
            bbox,
            h0,
            level,
            base_dims,
        })
    }

    /// Cell size at this level.
    pub fn h(&self) -> f64 {
        self.h0 / (1u64 << self.level) as f64
    }

    pub fn cell_volume(&self) -> f64 {
        let h = self.h();
        h * h * h
    }

    /// Cells per axis at this level.
    pub fn dims(&self) -> [usize; 3] {
        let f = (1usize << self.level) as usize;
        [
            self.base_dims[0] * f,
            self.base_dims[1] * f,
            self.base_dims[2] * f,
        ]
    }

    pub fn cell_count(&self) -> usize {
        let d = self.dims();
        d[0] * d[1] * d[2]
    }

    /// Canonical linear index of cell `(i, j, k)` (lexicographic, x fastest).
    pub fn lin_index(&self, ijk: [usize; 3]) -> usize {
        let d = self.dims();
        (ijk[2] * d[1] + ijk[1]) * d[0] + ijk[0]
    }

    pub fn cell_ijk(&self, lin: usize) -> [usize; 3] {
        let d = self.dims();
        let i = lin % d[0];
        let j = (lin / d[0]) % d[1];
        let k = lin / (d[0] * d[1]);
        [i, j, k]
    }

    pub fn cell_center(&self, lin: usize) -> [f64; 3] {
        let h = self.h();
        let ijk = self.cell_ijk(lin);
        [
            self.bbox.lo[0] + (ijk[0] as f64 + 0.5) * h,
            self.bbox.lo[1] + (ijk[1] as f64 + 0.5) * h,
            self.bbox.lo[2] + (ijk[2] as f64 + 0.5) * h,
        ]
    }

    pub fn cell_box(&self, lin: usize) -> Box3 {
        let h = self.h();
        let ijk = self.cell_ijk(lin);
        let lo = [
            self.bbox.lo[0] + ijk[0] as f64 * h,
            self.bbox.lo[1] + ijk[1] as f64 * h,
            self.bbox.lo[2] + ijk[2] as f64 * h,
        ];
        Box3::new(lo, [lo[0] + h, lo[1] + h, lo[2] + h])
    }

    /// Cell containing `x` (half-open convention), if any.
    pub fn cell_of_point(&self, x: [f64; 3]) -> Option<usize> {
        let h = self.h();
        let d = self.dims();
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let t = (x[a] - self.bbox.lo[a]) / h;
            if t < 0.0 {
                return None;
            }
            let i = t.floor() as usize;
            if i >= d[a] {
                return None;
            }
            ijk[a] = i;
        }
        Some(self.lin_index(ijk))
    }

    /// Partition one dyadic level coarser. Errors at level 0.
    pub fn coarsen(&self) -> Result<CellPartition> {
        if self.level == 0 {
            return Err(Error::InvalidPartition(
                "cannot coarsen a level-0 partition".into(),
            ));
        }
        Ok(CellPartition {
            bbox: self.bbox,
            h0: self.h0,
            level: self.level - 1,
            base_dims: self.base_dims,
        })
    }

    /// The eight child cell indices (one level finer) of `lin`.
    pub fn child_indices(&self, lin: usize, finer: &CellPartition) -> [usize; 8] {
        debug_assert_eq!(finer.level, self.level + 1);
        let ijk = self.cell_ijk(lin);
        let mut out = [0usize; 8];
        let mut n = 0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    out[n] = finer.lin_index([2 * ijk[0] + dx, 2 * ijk[1] + dy, 2 * ijk[2] + dz]);
                    n += 1;
                }
            }
        }
        out
    }
}

/// Builds the dyadic cell partition of a noise support box after checking it
/// sits strictly inside the physical annulus of `spec`.
pub fn cell_partition(
    spec: &GridSpec,
    support_box: Box3,
    h0: f64,
    level: u32,
) -> Result<CellPartition> {
    spec.contains_support_box(&support_box)?;
    CellPartition::new(support_box, h0, level)
}
