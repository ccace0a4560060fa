//! Product rules in gauge polar coordinates.
//!
//! Every point is `y = x * delta_rho(omega)` with `omega` on the unit Koranyi
//! sphere, `omega(theta, phi) = (sqrt(cos theta) cos phi, sqrt(cos theta)
//! sin phi, sin theta / 4)`, `theta in [-pi/2, pi/2]`, `phi in [0, 2 pi)`.
//! Haar measure becomes `rho^3 / 4 drho dtheta dphi`, so a kernel of degree
//! `-2` or `-3` is integrable in `rho` with no further change of variables.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::group::HPoint;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Point on the unit Koranyi sphere.
#[inline]
pub fn sphere_point(theta: f64, phi: f64) -> HPoint {
    let c = theta.cos().max(0.0).sqrt();
    HPoint::new(c * phi.cos(), c * phi.sin(), 0.25 * theta.sin())
}

/// Directions on the unit sphere with weights summing to `2 pi^2`
/// (Gauss-Legendre in `theta`, trapezoid in `phi`).
#[derive(Clone, Debug)]
pub struct AngularRule {
    pub dirs: Vec<HPoint>,
    pub weights: Vec<f64>,
}

impl AngularRule {
    pub fn new(n_theta: usize, n_phi: usize) -> Self {
        let (tn, tw) = gauss_legendre(n_theta);
        let mut dirs = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        let dphi = 2.0 * PI / n_phi as f64;
        for (x, w) in tn.iter().zip(&tw) {
            let theta = 0.5 * PI * x;
            for k in 0..n_phi {
                // Offset by half a step so no node sits on a coordinate axis.
                let phi = (k as f64 + 0.5) * dphi;
                dirs.push(sphere_point(theta, phi));
                weights.push(0.5 * PI * w * dphi);
            }
        }
        AngularRule { dirs, weights }
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

/// A fixed product rule over a gauge ball `B(c, r)`.
#[derive(Clone, Debug)]
pub struct BallRule {
    /// Offsets `delta_rho(omega)` for the unit ball.
    pub offsets: Vec<HPoint>,
    /// Weights including the `rho^3/4` Jacobian; they sum to the unit-ball volume.
    pub weights: Vec<f64>,
}

impl BallRule {
    pub fn new(n_rho: usize, n_theta: usize, n_phi: usize) -> Self {
        let ang = AngularRule::new(n_theta, n_phi);
        let (rn, rw) = gauss_legendre(n_rho);
        let mut offsets = Vec::with_capacity(ang.len() * n_rho);
        let mut weights = Vec::with_capacity(ang.len() * n_rho);
        for (x, w) in rn.iter().zip(&rw) {
            let rho = 0.5 * (x + 1.0);
            let jac = 0.5 * w * rho.powi(3) / 4.0;
            for (d, aw) in ang.dirs.iter().zip(&ang.weights) {
                offsets.push(d.dilate(rho));
                weights.push(jac * aw);
            }
        }
        BallRule { offsets, weights }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Nodes of the rule on `B(c, r)` with weights scaled by `r^4`.
    pub fn nodes(&self, center: HPoint, radius: f64) -> impl Iterator<Item = (HPoint, f64)> + '_ {
        let r4 = radius.powi(4);
        self.offsets
            .iter()
            .zip(&self.weights)
            .map(move |(o, w)| (center * o.dilate(radius), w * r4))
    }
}

/// Adaptive singular integration around a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingularRule {
    pub n_rho: usize,
    pub n_theta: usize,
    pub n_phi: usize,
    /// Stop descending into annuli once one contributes less than this
    /// fraction of the running absolute total along its direction.
    pub threshold: f64,
    pub max_annuli: usize,
}

impl Default for SingularRule {
    fn default() -> Self {
        SingularRule {
            n_rho: 8,
            n_theta: 12,
            n_phi: 24,
            threshold: 1e-10,
            max_annuli: 60,
        }
    }
}

impl SingularRule {
    /// The companion rule used for the error estimate.
    pub fn coarse(&self) -> SingularRule {
        SingularRule {
            n_rho: (self.n_rho * 2).div_ceil(3).max(2),
            n_theta: (self.n_theta * 2).div_ceil(3).max(2),
            n_phi: (self.n_phi * 2).div_ceil(3).max(3),
            ..*self
        }
    }

    pub fn refined(&self) -> SingularRule {
        SingularRule {
            n_rho: self.n_rho * 3 / 2,
            n_theta: self.n_theta * 3 / 2,
            n_phi: self.n_phi * 3 / 2,
            threshold: self.threshold * 0.5,
            ..*self
        }
    }
}

/// Value of an integral with a self-reported error.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    /// Integral of the absolute integrand, for relative tolerances.
    pub magnitude: f64,
}

/// One radial problem handed to the integrator.
pub struct Radial<'a> {
    /// `x` in `y = x * delta_rho(omega)`.
    pub center: HPoint,
    /// Outer radius: the integrand vanishes beyond it.
    pub rmax: f64,
    /// Extra breakpoints in `rho` along a direction (support boundaries).
    pub breaks: Option<&'a (dyn Fn(HPoint) -> Vec<f64> + Sync)>,
}

fn integrate_once(
    radial: &Radial,
    rule: &SingularRule,
    f: &(dyn Fn(HPoint, f64, HPoint) -> f64 + Sync),
) -> Result<(f64, f64, f64)> {
    let ang = AngularRule::new(rule.n_theta, rule.n_phi);
    let (rn, rw) = gauss_legendre(rule.n_rho);
    let mut total = 0.0;
    let mut magnitude = 0.0;
    let mut tail = 0.0;
    for (omega, aw) in ang.dirs.iter().zip(&ang.weights) {
        let mut cuts: Vec<f64> = radial
            .breaks
            .map(|b| b(*omega))
            .unwrap_or_default()
            .into_iter()
            .filter(|&r| r > 0.0 && r < radial.rmax)
            .collect();
        cuts.sort_by(f64::total_cmp);
        let segment = |a: f64, b: f64| -> Result<(f64, f64)> {
            let (mut s, mut m) = (0.0, 0.0);
            let half = 0.5 * (b - a);
            for (x, w) in rn.iter().zip(&rw) {
                let rho = a + half * (x + 1.0);
                let y = radial.center * omega.dilate(rho);
                let v = f(y, rho, *omega);
                if !v.is_finite() {
                    return Err(Error::QuadratureFailure { residual: f64::NAN });
                }
                let wt = half * w * rho.powi(3) * 0.25;
                s += wt * v;
                m += wt * v.abs();
            }
            Ok((s, m))
        };
        let (mut dir_total, mut dir_mag) = (0.0, 0.0);
        // Dyadic annuli toward the singularity, cut at the breakpoints.
        let mut hi = radial.rmax;
        let mut converged = false;
        let mut last = 0.0;
        for _ in 0..rule.max_annuli {
            let lo = 0.5 * hi;
            let mut edges = vec![lo];
            edges.extend(cuts.iter().copied().filter(|&c| c > lo && c < hi));
            edges.push(hi);
            let (mut s, mut m) = (0.0, 0.0);
            for w in edges.windows(2) {
                let (a, b) = segment(w[0], w[1])?;
                s += a;
                m += b;
            }
            dir_total += s;
            dir_mag += m;
            last = m;
            hi = lo;
            if (dir_mag > 0.0 && m <= rule.threshold * dir_mag) || hi < 1e-13 * radial.rmax {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::QuadratureFailure {
                residual: dir_mag,
            });
        }
        total += aw * dir_total;
        magnitude += aw * dir_mag;
        // The skipped core shrinks at least geometrically for integrable
        // singularities, so it is bounded by the last annulus.
        tail += aw * last;
    }
    Ok((total, magnitude, tail))
}

/// Integrates `f(y, rho, omega)` over `B(x, rmax)` in polar coordinates
/// around `x`, where `f` may blow up like `rho^{-3}` at `rho = 0`.
pub fn integrate_singular(
    radial: &Radial,
    rule: &SingularRule,
    f: &(dyn Fn(HPoint, f64, HPoint) -> f64 + Sync),
) -> Result<Quadrature> {
    let (fine, magnitude, tail) = integrate_once(radial, rule, f)?;
    let (coarse, _, _) = integrate_once(radial, &rule.coarse(), f)?;
    let roundoff = 64.0 * f64::EPSILON * magnitude;
    Ok(Quadrature {
        value: fine,
        error: (fine - coarse).abs() + tail + roundoff,
        magnitude,
    })
}

/// Radii in `(0, rmax)` where `rho -> N(a^{-1} x delta_rho(omega))` crosses
/// `r`, found by sampling the quartic and bisecting sign changes.
pub fn gauge_sphere_crossings(a: HPoint, r: f64, x: HPoint, omega: HPoint, rmax: f64) -> Vec<f64> {
    let base = a.inv() * x;
    let r4 = r.powi(4);
    let g = |rho: f64| {
        let q = base * HPoint::new(rho * omega.x, rho * omega.y, rho * rho * omega.t);
        let h = q.x * q.x + q.y * q.y;
        h * h + 16.0 * q.t * q.t - r4
    };
    let steps = 64;
    let mut out = Vec::new();
    let mut prev_rho = 0.0;
    let mut prev = g(0.0);
    for k in 1..=steps {
        let rho = rmax * k as f64 / steps as f64;
        let v = g(rho);
        if prev == 0.0 && prev_rho > 0.0 {
            out.push(prev_rho);
        } else if prev.signum() != v.signum() && v != 0.0 {
            let (mut lo, mut hi) = (prev_rho, rho);
            let sign_lo = prev.signum();
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if g(mid).signum() == sign_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        prev = v;
        prev_rho = rho;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exactness() {
        for n in [1, 2, 5, 8, 17] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for deg in 0..(2 * n) {
                let num: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg + 1) as f64 };
                assert!((num - exact).abs() < 1e-12, "n={n} deg={deg}: {num} vs {exact}");
            }
        }
    }

    #[test]
    fn sphere_points_are_unit() {
        for &(th, ph) in &[(0.0, 0.0), (1.2, 2.0), (-1.5, 4.0), (PI / 2.0, 1.0)] {
            let p = sphere_point(th, ph);
            let n = ((p.x * p.x + p.y * p.y).powi(2) + 16.0 * p.t * p.t).powf(0.25);
            assert!((n - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn ball_rule_volume() {
        let rule = BallRule::new(4, 6, 8);
        let v: f64 = rule.weights.iter().sum();
        assert!((v - PI * PI / 8.0).abs() < 1e-13);
        let v2: f64 = rule.nodes(HPoint::new(1.0, 2.0, 3.0), 2.0).map(|(_, w)| w).sum();
        assert!((v2 - 16.0 * PI * PI / 8.0).abs() < 1e-12);
    }

    #[test]
    fn singular_integral_of_inverse_square() {
        // int_{B(0,1)} N^{-2} = 2 pi^2 * int_0^1 rho / 4 = pi^2 / 4.
        let radial = Radial {
            center: HPoint::new(0.3, -0.1, 0.2),
            rmax: 1.0,
            breaks: None,
        };
        let q = integrate_singular(&radial, &SingularRule::default(), &|_, rho, _| rho.powi(-2)).unwrap();
        assert!((q.value - PI * PI / 4.0).abs() < 1e-10, "{q:?}");
        // rho^{-3} is still integrable against rho^3.
        let q = integrate_singular(&radial, &SingularRule::default(), &|_, rho, _| rho.powi(-3)).unwrap();
        assert!((q.value - PI * PI / 2.0).abs() < q.error && q.error < 1e-8, "{q:?}");
    }

    #[test]
    fn crossings_of_centered_sphere() {
        let a = HPoint::ZERO;
        let omega = sphere_point(0.3, 1.1);
        let c = gauge_sphere_crossings(a, 0.7, a, omega, 2.0);
        assert_eq!(c.len(), 1);
        assert!((c[0] - 0.7).abs() < 1e-12);
    }
}
