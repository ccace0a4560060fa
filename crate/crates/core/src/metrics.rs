//! Homogeneous gauges, gauge balls, unit-ball volumes and a bracketing
//! estimator for the Carnot-Caratheodory distance on `H^1`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::HPoint;
use crate::kernel::GAMMA_CONSTANT;
use crate::quadrature::sphere_point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeKind {
    /// `((x^2 + y^2)^2 + 16 t^2)^{1/4}`; satisfies the triangle inequality.
    Koranyi,
    /// `Gamma(p)^{-1/2}`, a constant multiple of the Koranyi gauge.
    GammaGauge,
    /// `max(|x|, |y|, |t|^{1/2})`.
    Box,
}

impl GaugeKind {
    pub const ALL: [GaugeKind; 3] = [GaugeKind::Koranyi, GaugeKind::GammaGauge, GaugeKind::Box];

    fn index(self) -> usize {
        match self {
            GaugeKind::Koranyi => 0,
            GaugeKind::GammaGauge => 1,
            GaugeKind::Box => 2,
        }
    }
}

impl std::str::FromStr for GaugeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "koranyi" => Ok(GaugeKind::Koranyi),
            "gamma_gauge" => Ok(GaugeKind::GammaGauge),
            "box" => Ok(GaugeKind::Box),
            other => Err(Error::Config(format!("unknown gauge kind {other:?}"))),
        }
    }
}

#[inline]
pub fn koranyi(p: HPoint) -> f64 {
    let r2 = p.x * p.x + p.y * p.y;
    (r2 * r2 + 16.0 * p.t * p.t).sqrt().sqrt()
}

/// Koranyi gauge distance `N(p^{-1} q)`.
#[inline]
pub fn koranyi_distance(p: HPoint, q: HPoint) -> f64 {
    koranyi(p.between(q))
}

pub fn gauge_norm(p: HPoint, kind: GaugeKind) -> f64 {
    match kind {
        GaugeKind::Koranyi => koranyi(p),
        GaugeKind::GammaGauge => koranyi(p) / GAMMA_CONSTANT.sqrt(),
        GaugeKind::Box => p.x.abs().max(p.y.abs()).max(p.t.abs().sqrt()),
    }
}

pub fn gauge_distance(p: HPoint, q: HPoint, kind: GaugeKind) -> f64 {
    gauge_norm(p.between(q), kind)
}

/// Open ball `{y : |x^{-1} y| < r}` for a gauge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: HPoint,
    pub radius: f64,
    pub kind: GaugeKind,
}

impl Ball {
    pub fn new(center: HPoint, radius: f64, kind: GaugeKind) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Precondition(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Ball {
            center,
            radius,
            kind,
        })
    }

    pub fn koranyi(center: HPoint, radius: f64) -> Self {
        Ball::new(center, radius, GaugeKind::Koranyi).expect("positive radius")
    }

    pub fn contains(&self, p: HPoint) -> bool {
        gauge_distance(self.center, p, self.kind) < self.radius
    }

    pub fn volume(&self) -> f64 {
        ball_volume(self.radius, self.kind)
    }
}

/// Quasi-Monte Carlo estimate of a unit-ball volume.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub value: f64,
    pub std_error: f64,
    pub nodes: usize,
}

const QMC_SHIFTS: usize = 8;
const QMC_NODES_PER_SHIFT: usize = 1 << 17;
const QMC_SEED: u64 = 0x5eed_0f_ba11;

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while i > 0 {
        f /= b;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Bounding box of each unit ball: half-widths in `x, y` and `t`.
fn unit_box(kind: GaugeKind) -> (f64, f64) {
    match kind {
        GaugeKind::Koranyi => (1.0, 0.25),
        GaugeKind::GammaGauge => {
            let s = GAMMA_CONSTANT.sqrt();
            (s, 0.25 * s * s)
        }
        GaugeKind::Box => (1.0, 1.0),
    }
}

fn estimate_unit_volume(kind: GaugeKind) -> VolumeEstimate {
    let (hx, ht) = unit_box(kind);
    let box_volume = 8.0 * hx * hx * ht;
    let mut rng = ChaCha8Rng::seed_from_u64(QMC_SEED);
    let mut estimates = Vec::with_capacity(QMC_SHIFTS);
    for _ in 0..QMC_SHIFTS {
        let shift: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let mut inside = 0usize;
        for i in 0..QMC_NODES_PER_SHIFT {
            let u = [
                (radical_inverse(i, 2) + shift[0]).fract(),
                (radical_inverse(i, 3) + shift[1]).fract(),
                (radical_inverse(i, 5) + shift[2]).fract(),
            ];
            let p = HPoint::new(hx * (2.0 * u[0] - 1.0), hx * (2.0 * u[1] - 1.0), ht * (2.0 * u[2] - 1.0));
            if gauge_norm(p, kind) < 1.0 {
                inside += 1;
            }
        }
        estimates.push(box_volume * inside as f64 / QMC_NODES_PER_SHIFT as f64);
    }
    let mean = estimates.iter().sum::<f64>() / QMC_SHIFTS as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (QMC_SHIFTS - 1) as f64;
    VolumeEstimate {
        value: mean,
        std_error: (var / QMC_SHIFTS as f64).sqrt(),
        nodes: QMC_SHIFTS * QMC_NODES_PER_SHIFT,
    }
}

/// Randomly shifted Halton estimate of `|B(0, 1)|`, computed once per gauge.
pub fn unit_ball_volume(kind: GaugeKind) -> VolumeEstimate {
    static CACHE: [OnceLock<VolumeEstimate>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    *CACHE[kind.index()].get_or_init(|| estimate_unit_volume(kind))
}

/// `|B(x, r)| = r^4 |B(0, 1)|`.
pub fn ball_volume(r: f64, kind: GaugeKind) -> f64 {
    r.powi(4) * unit_ball_volume(kind).value
}

/// Empirical bounds `c_low <= |p|_b <= c_high` over `|p|_a = 1`, widened by
/// `margin` (relative) on both sides.
pub fn norm_equivalence_with_margin(
    a: GaugeKind,
    b: GaugeKind,
    samples: usize,
    seed: u64,
    margin: f64,
) -> Result<(f64, f64)> {
    if samples < 1000 {
        return Err(Error::Precondition(format!("need at least 1000 sphere samples, got {samples}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    let mut drawn = 0;
    while drawn < samples {
        let p = match a {
            GaugeKind::Koranyi | GaugeKind::GammaGauge => {
                let q = sphere_point(rng.gen_range(-PI / 2.0..PI / 2.0), rng.gen_range(0.0..2.0 * PI));
                q.dilate(1.0 / gauge_norm(q, a))
            }
            GaugeKind::Box => {
                let q = HPoint::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let n = gauge_norm(q, a);
                if n < 1e-6 {
                    continue;
                }
                q.dilate(1.0 / n)
            }
        };
        let v = gauge_norm(p, b);
        if !v.is_finite() {
            return Err(Error::Precondition("degenerate sample on the unit sphere".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
        drawn += 1;
    }
    if !(lo > 0.0) || hi < lo {
        return Err(Error::Precondition("degenerate sphere sampling".into()));
    }
    Ok((lo / (1.0 + margin), hi * (1.0 + margin)))
}

/// [`norm_equivalence_with_margin`] with the default 5% margin.
pub fn norm_equivalence(a: GaugeKind, b: GaugeKind, samples: usize, seed: u64) -> Result<(f64, f64)> {
    norm_equivalence_with_margin(a, b, samples, seed, 0.05)
}

/// Largest observed `|p q| / (|p| + |q|)` over random pairs.
pub fn quasi_triangle_constant(kind: GaugeKind, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let mut draw = || {
            let q = sphere_point(rng.gen_range(-PI / 2.0..PI / 2.0), rng.gen_range(0.0..2.0 * PI));
            q.dilate(rng.gen_range(0.0..1.0_f64))
        };
        let p = draw();
        let q = draw();
        let denom = gauge_norm(p, kind) + gauge_norm(q, kind);
        if denom > 0.0 {
            worst = worst.max(gauge_norm(p * q, kind) / denom);
        }
    }
    worst
}

/// Work limits for [`cc_distance`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcBudget {
    /// Largest number of segments tried; segment counts double from 1.
    pub max_segments: usize,
    /// Requested bracket quality `upper / lower`.
    pub target_ratio: f64,
}

impl Default for CcBudget {
    fn default() -> Self {
        CcBudget {
            max_segments: 1 << 12,
            target_ratio: 1.0 + 1e-3,
        }
    }
}

/// `lower <= d_cc(p, q) <= upper`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcInterval {
    pub lower: f64,
    pub upper: f64,
    /// Segment count of the best path.
    pub segments: usize,
    /// `false` when the budget ran out before `upper / lower <= target_ratio`.
    pub converged: bool,
}

impl CcInterval {
    pub fn ratio(&self) -> f64 {
        if self.lower == 0.0 {
            if self.upper == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            self.upper / self.lower
        }
    }
}

/// Unit-speed polygon with `n` equal segments whose direction turns by a
/// constant total `theta`; returns the chord and the signed area
/// `1/2 int (x dy - y dx)` (= the `t` reached by the horizontal lift).
fn turning_polygon(n: usize, theta: f64) -> (f64, f64, f64) {
    let mut p = HPoint::ZERO;
    for k in 0..n {
        let a = theta * k as f64 / n as f64;
        p = p * HPoint::new(a.cos(), a.sin(), 0.0);
    }
    (p.x, p.y, p.t)
}

/// Length of an `n`-segment horizontal polygon from `0` to `(h, t)`, where
/// the polygon is a scaled and rotated [`turning_polygon`].
fn polygon_length(n: usize, hx: f64, hy: f64, t: f64) -> f64 {
    let h = hx.hypot(hy);
    if t == 0.0 {
        return h;
    }
    if h == 0.0 {
        if n < 3 {
            return f64::INFINITY;
        }
        // Regular n-gon of area |t|.
        let side = (4.0 * t.abs() * (PI / n as f64).tan() / n as f64).sqrt();
        return n as f64 * side;
    }
    if n < 2 {
        return f64::INFINITY;
    }
    let target = t.abs() / (h * h);
    let ratio = |theta: f64| {
        let (cx, cy, a) = turning_polygon(n, theta);
        a / (cx * cx + cy * cy)
    };
    let (mut lo, mut hi) = (0.0, 2.0 * PI * (1.0 - 1e-12));
    if ratio(hi) < target {
        // Numerically closed before reaching the area: use the tightest loop.
        lo = hi;
    }
    for _ in 0..200 {
        if hi - lo < 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (cx, cy, _) = turning_polygon(n, 0.5 * (lo + hi));
    n as f64 * h / cx.hypot(cy)
}

/// Certified lower bound: a horizontal curve of length `L` from `0` to
/// `(h, t)` closes with the chord into a loop of length `L + |h|` enclosing
/// signed area `t`, so `L >= sqrt(4 pi |t|) - |h|` by the isoperimetric
/// inequality, and `L >= |h|` by projection.
fn cc_lower(hx: f64, hy: f64, t: f64) -> f64 {
    let h = hx.hypot(hy);
    h.max((4.0 * PI * t.abs()).sqrt() - h)
}

/// Brackets `d_cc(p, q)`. The upper bound is the length of an explicit
/// piecewise-horizontal path, refined by doubling the segment count until
/// the improvement drops below `1e-4` (relative) or the budget runs out.
pub fn cc_distance(p: HPoint, q: HPoint, budget: CcBudget) -> CcInterval {
    let d = p.between(q);
    let lower = cc_lower(d.x, d.y, d.t);
    if d.x == 0.0 && d.y == 0.0 && d.t == 0.0 {
        return CcInterval {
            lower: 0.0,
            upper: 0.0,
            segments: 0,
            converged: true,
        };
    }
    let mut best = f64::INFINITY;
    let mut best_n = 0;
    let mut n = 1;
    while n <= budget.max_segments.max(1) {
        let len = polygon_length(n, d.x, d.y, d.t);
        let improved = best.is_finite() && best - len < 1e-4 * best;
        if len < best {
            best = len;
            best_n = n;
        }
        if best / lower <= budget.target_ratio || improved && n >= 8 {
            break;
        }
        n *= 2;
    }
    let upper = best.max(lower);
    CcInterval {
        lower,
        upper,
        segments: best_n,
        converged: upper / lower <= budget.target_ratio,
    }
}
