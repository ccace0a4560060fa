//! Scalar fields on `H^1` with closed-form Euclidean gradient and Hessian.
//!
//! These feed the analytic field path: `X f = <A_X, grad f>` and the
//! second-order formula with the (constant) coefficient Jacobian.

use super::HPoint;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub trait Smooth: Sync {
    fn value(&self, p: HPoint) -> f64;
    fn gradient(&self, p: HPoint) -> Vec3;
    fn hessian(&self, p: HPoint) -> Mat3;
}

impl<S: Smooth + ?Sized> Smooth for &S {
    fn value(&self, p: HPoint) -> f64 {
        (**self).value(p)
    }
    fn gradient(&self, p: HPoint) -> Vec3 {
        (**self).gradient(p)
    }
    fn hessian(&self, p: HPoint) -> Mat3 {
        (**self).hessian(p)
    }
}

impl<S: Smooth + ?Sized> Smooth for Box<S> {
    fn value(&self, p: HPoint) -> f64 {
        (**self).value(p)
    }
    fn gradient(&self, p: HPoint) -> Vec3 {
        (**self).gradient(p)
    }
    fn hessian(&self, p: HPoint) -> Mat3 {
        (**self).hessian(p)
    }
}

/// Constant field.
#[derive(Clone, Copy, Debug)]
pub struct Constant(pub f64);

impl Smooth for Constant {
    fn value(&self, _p: HPoint) -> f64 {
        self.0
    }
    fn gradient(&self, _p: HPoint) -> Vec3 {
        [0.0; 3]
    }
    fn hessian(&self, _p: HPoint) -> Mat3 {
        [[0.0; 3]; 3]
    }
}

/// The coordinate function `p -> p[i]` (0 = x, 1 = y, 2 = t).
#[derive(Clone, Copy, Debug)]
pub struct Coordinate(pub usize);

impl Smooth for Coordinate {
    fn value(&self, p: HPoint) -> f64 {
        p.to_array()[self.0]
    }
    fn gradient(&self, _p: HPoint) -> Vec3 {
        let mut g = [0.0; 3];
        g[self.0] = 1.0;
        g
    }
    fn hessian(&self, _p: HPoint) -> Mat3 {
        [[0.0; 3]; 3]
    }
}

/// Fourth power of the Koranyi gauge: `(x^2 + y^2)^2 + 16 t^2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct KoranyiQuartic;

impl Smooth for KoranyiQuartic {
    fn value(&self, p: HPoint) -> f64 {
        let r2 = p.x * p.x + p.y * p.y;
        r2 * r2 + 16.0 * p.t * p.t
    }
    fn gradient(&self, p: HPoint) -> Vec3 {
        let r2 = p.x * p.x + p.y * p.y;
        [4.0 * r2 * p.x, 4.0 * r2 * p.y, 32.0 * p.t]
    }
    fn hessian(&self, p: HPoint) -> Mat3 {
        let r2 = p.x * p.x + p.y * p.y;
        [
            [4.0 * r2 + 8.0 * p.x * p.x, 8.0 * p.x * p.y, 0.0],
            [8.0 * p.x * p.y, 4.0 * r2 + 8.0 * p.y * p.y, 0.0],
            [0.0, 0.0, 32.0],
        ]
    }
}

/// `(1 - (N(c^{-1} p) / R)^4)^k` on the gauge ball `B(c, R)`, zero outside.
///
/// It is `C^{k-1}` across the boundary sphere, so `k >= 3` gives a field
/// whose second derivatives are continuous.
#[derive(Clone, Copy, Debug)]
pub struct GaugeBump {
    pub center: HPoint,
    pub radius: f64,
    pub power: u32,
}

impl GaugeBump {
    pub fn new(center: HPoint, radius: f64, power: u32) -> Self {
        assert!(radius > 0.0 && power >= 1);
        GaugeBump {
            center,
            radius,
            power,
        }
    }

    pub fn unit() -> Self {
        GaugeBump::new(HPoint::ZERO, 1.0, 4)
    }

    fn local(&self) -> Translated<CenteredBump> {
        Translated {
            center: self.center,
            inner: CenteredBump {
                radius: self.radius,
                power: self.power,
            },
        }
    }
}

impl Smooth for GaugeBump {
    fn value(&self, p: HPoint) -> f64 {
        self.local().value(p)
    }
    fn gradient(&self, p: HPoint) -> Vec3 {
        self.local().gradient(p)
    }
    fn hessian(&self, p: HPoint) -> Mat3 {
        self.local().hessian(p)
    }
}

#[derive(Clone, Copy, Debug)]
struct CenteredBump {
    radius: f64,
    power: u32,
}

impl CenteredBump {
    fn parts(&self, p: HPoint) -> Option<(f64, f64)> {
        let r4 = self.radius.powi(4);
        let v = KoranyiQuartic.value(p) / r4;
        (v < 1.0).then_some((1.0 - v, r4))
    }
}

impl Smooth for CenteredBump {
    fn value(&self, p: HPoint) -> f64 {
        self.parts(p).map_or(0.0, |(w, _)| w.powi(self.power as i32))
    }
    fn gradient(&self, p: HPoint) -> Vec3 {
        let Some((w, r4)) = self.parts(p) else {
            return [0.0; 3];
        };
        let k = self.power as f64;
        let f = -k * w.powi(self.power as i32 - 1) / r4;
        KoranyiQuartic.gradient(p).map(|g| f * g)
    }
    fn hessian(&self, p: HPoint) -> Mat3 {
        let Some((w, r4)) = self.parts(p) else {
            return [[0.0; 3]; 3];
        };
        let k = self.power as f64;
        let g = KoranyiQuartic.gradient(p);
        let h = KoranyiQuartic.hessian(p);
        let a = if self.power >= 2 {
            k * (k - 1.0) * w.powi(self.power as i32 - 2) / (r4 * r4)
        } else {
            0.0
        };
        let b = -k * w.powi(self.power as i32 - 1) / r4;
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = a * g[i] * g[j] + b * h[i][j];
            }
        }
        out
    }
}

/// `p -> inner(c^{-1} p)`. The map `p -> c^{-1} p` is affine in exponential
/// coordinates with the constant Jacobian returned by `jacobian`.
#[derive(Clone, Copy, Debug)]
pub struct Translated<F> {
    pub center: HPoint,
    pub inner: F,
}

impl<F> Translated<F> {
    fn jacobian(&self) -> Mat3 {
        let c = self.center;
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.5 * c.y, -0.5 * c.x, 1.0]]
    }
}

impl<F: Smooth> Smooth for Translated<F> {
    fn value(&self, p: HPoint) -> f64 {
        self.inner.value(self.center.inv() * p)
    }
    fn gradient(&self, p: HPoint) -> Vec3 {
        let g = self.inner.gradient(self.center.inv() * p);
        let m = self.jacobian();
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..3).map(|k| m[k][i] * g[k]).sum();
        }
        out
    }
    fn hessian(&self, p: HPoint) -> Mat3 {
        let h = self.inner.hessian(self.center.inv() * p);
        let m = self.jacobian();
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        s += m[k][i] * h[k][l] * m[l][j];
                    }
                }
                out[i][j] = s;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Product<A, B>(pub A, pub B);

impl<A: Smooth, B: Smooth> Smooth for Product<A, B> {
    fn value(&self, p: HPoint) -> f64 {
        self.0.value(p) * self.1.value(p)
    }
    fn gradient(&self, p: HPoint) -> Vec3 {
        let (a, b) = (self.0.value(p), self.1.value(p));
        let (ga, gb) = (self.0.gradient(p), self.1.gradient(p));
        [0, 1, 2].map(|i| ga[i] * b + a * gb[i])
    }
    fn hessian(&self, p: HPoint) -> Mat3 {
        let (a, b) = (self.0.value(p), self.1.value(p));
        let (ga, gb) = (self.0.gradient(p), self.1.gradient(p));
        let (ha, hb) = (self.0.hessian(p), self.1.hessian(p));
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = ha[i][j] * b + ga[i] * gb[j] + gb[i] * ga[j] + a * hb[i][j];
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Sum<A, B>(pub A, pub B);

impl<A: Smooth, B: Smooth> Smooth for Sum<A, B> {
    fn value(&self, p: HPoint) -> f64 {
        self.0.value(p) + self.1.value(p)
    }
    fn gradient(&self, p: HPoint) -> Vec3 {
        let (a, b) = (self.0.gradient(p), self.1.gradient(p));
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }
    fn hessian(&self, p: HPoint) -> Mat3 {
        let (a, b) = (self.0.hessian(p), self.1.hessian(p));
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = a[i][j] + b[i][j];
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Scaled<A> {
    pub factor: f64,
    pub inner: A,
}

impl<A: Smooth> Smooth for Scaled<A> {
    fn value(&self, p: HPoint) -> f64 {
        self.factor * self.inner.value(p)
    }
    fn gradient(&self, p: HPoint) -> Vec3 {
        self.inner.gradient(p).map(|g| self.factor * g)
    }
    fn hessian(&self, p: HPoint) -> Mat3 {
        self.inner.hessian(p).map(|row| row.map(|h| self.factor * h))
    }
}

/// `x^2 + y^2`.
pub fn horizontal_square() -> impl Smooth + Copy {
    Sum(
        Product(Coordinate(0), Coordinate(0)),
        Product(Coordinate(1), Coordinate(1)),
    )
}

/// `x^2 - y^2 + t`, annihilated by the sub-Laplacian.
pub fn harmonic_quadratic() -> impl Smooth + Copy {
    Sum(
        Sum(
            Product(Coordinate(0), Coordinate(0)),
            Scaled {
                factor: -1.0,
                inner: Product(Coordinate(1), Coordinate(1)),
            },
        ),
        Coordinate(2),
    )
}
