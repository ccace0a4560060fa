use std::ops::Mul;

use serde::{Deserialize, Serialize};

use super::{Field, Group, Side};
use crate::error::{Error, Result};

/// A point of the first Heisenberg group in exponential coordinates.
///
/// `x`, `y` sit in the horizontal layer (weight 1), `t` in the centre
/// (weight 2).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct HPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl HPoint {
    pub const ZERO: HPoint = HPoint {
        x: 0.0,
        y: 0.0,
        t: 0.0,
    };

    pub const WEIGHTS: [u32; 3] = [1, 1, 2];

    pub const fn new(x: f64, y: f64, t: f64) -> Self {
        HPoint { x, y, t }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        HPoint::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.t]
    }

    #[inline]
    pub fn inv(self) -> Self {
        HPoint::new(-self.x, -self.y, -self.t)
    }

    /// Unchecked dilation `delta_s`; `s` must be positive.
    #[inline]
    pub fn dilate(self, s: f64) -> Self {
        debug_assert!(s > 0.0);
        HPoint::new(s * self.x, s * self.y, s * s * self.t)
    }

    /// `self^{-1} * other`, the relative position used by every left-invariant distance.
    #[inline]
    pub fn between(self, other: HPoint) -> HPoint {
        self.inv() * other
    }

    pub fn sup_norm(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.t.abs())
    }
}

impl Mul for HPoint {
    type Output = HPoint;

    #[inline]
    fn mul(self, q: HPoint) -> HPoint {
        HPoint::new(
            self.x + q.x,
            self.y + q.y,
            self.t + q.t + 0.5 * (self.x * q.y - self.y * q.x),
        )
    }
}

/// The first Heisenberg group `H^1` with `[X, Y] = T`.
///
/// Left-invariant fields: `X = d_x - (y/2) d_t`, `Y = d_y + (x/2) d_t`.
/// Right-invariant fields: `X~ = d_x + (y/2) d_t`, `Y~ = d_y - (x/2) d_t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Heisenberg;

impl Heisenberg {
    pub const HOMOGENEOUS_DIM: u32 = 4;
    pub const TOPOLOGICAL_DIM: usize = 3;

    pub fn multiply(&self, p: HPoint, q: HPoint) -> HPoint {
        p * q
    }

    pub fn inverse(&self, p: HPoint) -> HPoint {
        p.inv()
    }

    pub fn dilate(&self, s: f64, p: HPoint) -> Result<HPoint> {
        if s.is_nan() || s <= 0.0 {
            return Err(Error::NonPositiveDilation(s));
        }
        Ok(p.dilate(s))
    }

    /// Euclidean coefficient vector of a first-layer field at `p`.
    #[inline]
    pub fn field_coefficients(field: Field, p: HPoint) -> [f64; 3] {
        match (field.index, field.side) {
            (0, Side::Left) => [1.0, 0.0, -0.5 * p.y],
            (1, Side::Left) => [0.0, 1.0, 0.5 * p.x],
            (0, Side::Right) => [1.0, 0.0, 0.5 * p.y],
            (1, Side::Right) => [0.0, 1.0, -0.5 * p.x],
            _ => panic!("H^1 has two horizontal fields, got index {}", field.index),
        }
    }

    /// `d_i A^j` for the coefficient vector `A` of `field`; constant on `H^1`.
    pub fn field_coefficient_jacobian(field: Field) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        match (field.index, field.side) {
            (0, Side::Left) => m[1][2] = -0.5,
            (1, Side::Left) => m[0][2] = 0.5,
            (0, Side::Right) => m[1][2] = 0.5,
            (1, Side::Right) => m[0][2] = -0.5,
            _ => panic!("H^1 has two horizontal fields, got index {}", field.index),
        }
        m
    }
}

impl Group for Heisenberg {
    type Point = HPoint;

    fn horizontal_dim(&self) -> usize {
        2
    }

    fn compose(&self, p: &HPoint, q: &HPoint) -> Result<HPoint> {
        Ok(*p * *q)
    }

    #[inline]
    fn flow(&self, p: &HPoint, field: Field, s: f64) -> HPoint {
        let step = match field.index {
            0 => HPoint::new(s, 0.0, 0.0),
            1 => HPoint::new(0.0, s, 0.0),
            i => panic!("H^1 has two horizontal fields, got index {i}"),
        };
        match field.side {
            Side::Left => *p * step,
            Side::Right => step * *p,
        }
    }

    fn coordinate_scale(&self, p: &HPoint) -> f64 {
        p.sup_norm()
    }

    fn check_point(&self, _p: &HPoint) -> Result<()> {
        Ok(())
    }
}
