//! Space-time lattice on which the white noise is discretized.

use serde::Serialize;

use crate::error::{Error, Result};

/// Geometry of the discretization: `K = T/dt` time slabs, spatial grid
/// `{-L, -L+dx, ..., L}^d`. Cell increments of the noise carry variance
/// `dt * dx^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeSpec {
    pub d: usize,
    pub dt: f64,
    pub dx: f64,
    /// Time horizon T; must be an integer multiple of `dt`.
    pub t: f64,
    /// Half-width L of the spatial box; `2L/dx` must be an integer.
    pub half_width: f64,
}

fn near_integer(x: f64) -> Option<u64> {
    let r = x.round();
    if r >= 0.5 && (x - r).abs() <= 1e-6 * r.max(1.0) {
        Some(r as u64)
    } else {
        None
    }
}

impl LatticeSpec {
    pub fn new(d: usize, dt: f64, dx: f64, t: f64, half_width: f64) -> Result<Self> {
        let spec = LatticeSpec { d, dt, dx, t, half_width };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidLattice("d must be >= 1".into()));
        }
        for (name, v) in [("dt", self.dt), ("dx", self.dx), ("t", self.t), ("L", self.half_width)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidLattice(format!("{name} must be positive, got {v}")));
            }
        }
        if near_integer(self.t / self.dt).is_none() {
            return Err(Error::InvalidLattice(format!(
                "T/dt = {} is not an integer",
                self.t / self.dt
            )));
        }
        if near_integer(2.0 * self.half_width / self.dx).is_none() {
            return Err(Error::InvalidLattice(format!(
                "2L/dx = {} is not an integer",
                2.0 * self.half_width / self.dx
            )));
        }
        if self.points_per_axis() > u32::MAX as usize {
            return Err(Error::InvalidLattice("too many grid points per axis".into()));
        }
        Ok(())
    }

    /// Number of time slabs K = T/dt.
    pub fn slabs(&self) -> usize {
        near_integer(self.t / self.dt).expect("validated") as usize
    }

    /// Grid points per axis, `2L/dx + 1`.
    pub fn points_per_axis(&self) -> usize {
        near_integer(2.0 * self.half_width / self.dx).expect("validated") as usize + 1
    }

    /// Spatial cells per slab, `(2L/dx + 1)^d`.
    pub fn cells_per_slab(&self) -> u128 {
        (self.points_per_axis() as u128).pow(self.d as u32)
    }

    /// Coordinate of grid index `i` along one axis.
    #[inline(always)]
    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx
    }

    /// Variance of a single cell increment, `dt * dx^d`.
    pub fn cell_variance(&self) -> f64 {
        self.dt * self.dx.powi(self.d as i32)
    }

    /// Bytes needed to hold the realization densely (one f64 per cell).
    pub fn dense_bytes(&self) -> u128 {
        self.slabs() as u128 * self.cells_per_slab() * 8
    }

    /// Half-width that keeps paths of horizon `t` plus a mollifier of radius
    /// `rho` inside the box with large margin: `max(3 sqrt(d t), user) + rho`,
    /// rounded up to a grid multiple. Exits are still hard errors at use
    /// sites; the margin only makes them rare.
    pub fn auto_half_width(d: usize, dx: f64, t: f64, rho: f64, user: f64) -> f64 {
        let l = (3.0 * (d as f64 * t).sqrt()).max(user) + rho;
        (l / dx).ceil() * dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_consistent_spec() {
        let s = LatticeSpec::new(3, 0.02, 0.25, 4.0, 6.0).unwrap();
        assert_eq!(s.slabs(), 200);
        assert_eq!(s.points_per_axis(), 49);
        assert_eq!(s.cells_per_slab(), 49u128.pow(3));
        assert!((s.cell_variance() - 0.02 * 0.015625).abs() < 1e-18);
        assert!((s.axis_coord(0) + 6.0).abs() < 1e-12);
        assert!((s.axis_coord(48) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_integer_ratios() {
        assert!(LatticeSpec::new(3, 0.03, 0.25, 1.0, 6.0).is_err());
        assert!(LatticeSpec::new(3, 0.02, 0.23, 1.0, 6.0).is_err());
        assert!(LatticeSpec::new(0, 0.02, 0.25, 1.0, 6.0).is_err());
        assert!(LatticeSpec::new(3, -0.02, 0.25, 1.0, 6.0).is_err());
    }

    #[test]
    fn auto_half_width_is_grid_aligned_and_generous() {
        let l = LatticeSpec::auto_half_width(3, 0.25, 4.0, 1.0, 0.0);
        assert!(l >= 3.0 * (12.0f64).sqrt() + 1.0);
        assert!((2.0 * l / 0.25 - (2.0 * l / 0.25).round()).abs() < 1e-9);
    }
}
