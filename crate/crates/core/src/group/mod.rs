//! Stratified groups: the generic presentation, the hard-coded first
//! Heisenberg group, and left/right-invariant differential calculus.

mod calculus;
mod heisenberg;
mod smooth;
mod spec;

pub use calculus::{
    apply_field, apply_field_analytic, apply_fields, horizontal_gradient,
    horizontal_gradient_analytic, sub_laplacian, sub_laplacian_analytic, FdConfig, FdEstimate,
};
pub use heisenberg::{HPoint, Heisenberg};
pub use smooth::{
    harmonic_quadratic, horizontal_square, Constant, Coordinate, GaugeBump, KoranyiQuartic, Mat3,
    Product, Scaled, Smooth, Sum, Translated, Vec3,
};
pub use spec::{
    Bracket, BracketTerm, Coefficient, GroupPoint, GroupSpec, GroupSpecDocument, Rational,
};

use crate::error::Result;

/// Which side a vector field acts from.
///
/// Left-invariant fields differentiate along `p * exp(sX)`, right-invariant
/// ones along `exp(sX) * p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Side {
    #[default]
    Left,
    Right,
}

/// A single first-layer basis field `X_j` (0-based `index`) with its side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Field {
    pub index: usize,
    pub side: Side,
}

impl Field {
    pub fn left(index: usize) -> Self {
        Field {
            index,
            side: Side::Left,
        }
    }

    pub fn right(index: usize) -> Self {
        Field {
            index,
            side: Side::Right,
        }
    }
}

/// A composite operator `X_a = X_{a_1} ... X_{a_l}` over first-layer fields.
///
/// Letters are 0-based. The operator is homogeneous of degree `len()`; the
/// leftmost letter is applied last.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct OperatorWord {
    pub letters: Vec<usize>,
    pub side: Side,
}

impl OperatorWord {
    pub fn left(letters: &[usize]) -> Self {
        OperatorWord {
            letters: letters.to_vec(),
            side: Side::Left,
        }
    }

    pub fn right(letters: &[usize]) -> Self {
        OperatorWord {
            letters: letters.to_vec(),
            side: Side::Right,
        }
    }

    /// Homogeneity degree of the operator.
    pub fn degree(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn fields(&self) -> Vec<Field> {
        self.letters
            .iter()
            .map(|&index| Field {
                index,
                side: self.side,
            })
            .collect()
    }
}

/// Minimal group interface needed by the finite-difference calculus.
pub trait Group {
    type Point: Clone;

    /// Dimension of the horizontal layer.
    fn horizontal_dim(&self) -> usize;

    fn compose(&self, p: &Self::Point, q: &Self::Point) -> Result<Self::Point>;

    /// `p * exp(s X_j)` for a left field, `exp(s X_j) * p` for a right field.
    fn flow(&self, p: &Self::Point, field: Field, s: f64) -> Self::Point;

    /// Sup norm of the coordinates, used to scale finite-difference steps.
    fn coordinate_scale(&self, p: &Self::Point) -> f64;

    /// Checks that `p` belongs to this group.
    fn check_point(&self, p: &Self::Point) -> Result<()>;
}
