//! Seminorm estimators, witness potentials `mu * Gamma` and the two-sided
//! capacity bounds.
//!
//! Lower bounds come from a witness: a Frostman measure `mu` for the content
//! exponent, smoothed into blobs inside the leaves, and its potential
//! `f = mu * Gamma`. Then `L f` is supported in `K`, `<-L f, 1> = mu(K)` and
//! `f / ||f||` is admissible, so the capacity is at least `mu(K) / ||f||`.
//! The seminorm is sampled, hence a lower estimate of the sup, and the bound
//! holds modulo that sampling. Upper bounds are `J^2` times the dyadic cover
//! sum.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::HPoint;
use crate::kernel::{require_order_two, unit_ball_potential, Blob, BALL_POTENTIAL_RADIUS};
use crate::metrics::{koranyi, koranyi_distance, Ball};
use crate::partition::{derivative_scaling_check, sample_in_ball, sibling_family, standard_words};
use crate::quadrature::{sphere_point, BallRule};
use crate::tiling::{
    dyadic_content, frostman_measure, sample_in_tile, tile_geometry, tiles_meeting_ball, TileMeasure, TileSet,
    TileWord, CENTER, LOCATE_RESOLUTION,
};

/// Homogeneous dimension of `H^1`.
pub const Q: f64 = 4.0;
/// Order of the sub-Laplacian.
pub const LAMBDA: f64 = 2.0;

// ---------------------------------------------------------------------------
// Exponents and budgets.

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentKind {
    Campanato,
    Holder,
    Lipschitz,
}

impl ExponentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExponentKind::Campanato => "campanato",
            ExponentKind::Holder => "holder",
            ExponentKind::Lipschitz => "lipschitz",
        }
    }
}

impl fmt::Display for ExponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExponentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "campanato" | "rho" => Ok(ExponentKind::Campanato),
            "holder" | "delta" => Ok(ExponentKind::Holder),
            "lipschitz" => Ok(ExponentKind::Lipschitz),
            other => Err(Error::Config(format!("unknown exponent kind {other:?}"))),
        }
    }
}

/// `rho` for Campanato, `delta` for Holder; the Lipschitz value is fixed at 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exponent {
    pub kind: ExponentKind,
    pub value: f64,
}

impl Exponent {
    pub fn campanato(rho: f64) -> Self {
        Exponent {
            kind: ExponentKind::Campanato,
            value: rho,
        }
    }

    pub fn holder(delta: f64) -> Self {
        Exponent {
            kind: ExponentKind::Holder,
            value: delta,
        }
    }

    pub fn lipschitz() -> Self {
        Exponent {
            kind: ExponentKind::Lipschitz,
            value: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.value;
        let (ok, range) = match self.kind {
            ExponentKind::Campanato => ((LAMBDA..=Q).contains(&v), "[2, 4]"),
            ExponentKind::Holder => (v > 0.0 && v < 1.0, "(0, 1)"),
            ExponentKind::Lipschitz => (v == 1.0, "{1}"),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ExponentOutOfRange {
                value: v,
                range: range.into(),
            })
        }
    }

    /// The content exponent `s` paired with this capacity: `rho - 2`,
    /// `Q - 2 + delta`, and `Q - 1` for the Lipschitz witness.
    pub fn content_exponent(&self) -> f64 {
        match self.kind {
            ExponentKind::Campanato => self.value - LAMBDA,
            ExponentKind::Holder => Q - LAMBDA + self.value,
            ExponentKind::Lipschitz => Q - 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    /// Balls for the Campanato seminorm.
    pub balls: usize,
    /// Point pairs for the Holder seminorm.
    pub pairs: usize,
    /// Points for the horizontal gradient sup.
    pub samples: usize,
    /// A source cluster of outer radius `R` seen from distance `d` is
    /// replaced by its monopole once `(R / d)^2` is below this.
    pub quadrature_threshold: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            balls: 192,
            pairs: 2048,
            samples: 2048,
            quadrature_threshold: 0.25,
        }
    }
}

impl Budgets {
    pub fn validate(&self) -> Result<()> {
        if self.balls == 0 || self.pairs == 0 || self.samples == 0 {
            return Err(Error::Config("budgets must be positive".into()));
        }
        if !(self.quadrature_threshold > 0.0 && self.quadrature_threshold < 1.0) {
            return Err(Error::Config(format!(
                "quadrature_threshold must lie in (0, 1), got {}",
                self.quadrature_threshold
            )));
        }
        Ok(())
    }

    /// Opening angle of the far-field test.
    pub fn theta(&self) -> f64 {
        self.quadrature_threshold.sqrt()
    }
}

// ---------------------------------------------------------------------------
// Fields evaluable on regions.

/// A function sampled region by region. All points passed in one call lie in
/// `B(center, radius)` and see one fixed approximation of the function, so
/// differences within a region are consistent.
pub trait LocalField: Sync {
    fn values(&self, center: HPoint, radius: f64, pts: &[HPoint]) -> Vec<f64>;
    /// `f_B`, when the field can do better than the quadrature mean.
    fn ball_mean(&self, _ball: &Ball, _rule: &BallRule) -> Option<f64> {
        None
    }
    /// `(X f, Y f)(x)`.
    fn gradient(&self, x: HPoint) -> [f64; 2];
}

/// Wraps a closure; the gradient is a central difference along the flows.
pub struct FnField<F>(pub F);

impl<F: Fn(HPoint) -> f64 + Sync> LocalField for FnField<F> {
    fn values(&self, _center: HPoint, _radius: f64, pts: &[HPoint]) -> Vec<f64> {
        pts.iter().map(|&p| (self.0)(p)).collect()
    }

    fn gradient(&self, x: HPoint) -> [f64; 2] {
        let h = 1e-5 * (1.0 + x.sup_norm());
        let f = &self.0;
        let dx = (f(x * HPoint::new(h, 0.0, 0.0)) - f(x * HPoint::new(-h, 0.0, 0.0))) / (2.0 * h);
        let dy = (f(x * HPoint::new(0.0, h, 0.0)) - f(x * HPoint::new(0.0, -h, 0.0))) / (2.0 * h);
        [dx, dy]
    }
}

// ---------------------------------------------------------------------------
// Witness potentials.

#[derive(Clone, Debug)]
struct WitnessNode {
    /// Center of the inner ball of `T_v`.
    center: HPoint,
    r_out: f64,
    mass: f64,
    /// Coordinate mean of the leaf centers weighted by mass; the monopole
    /// sits here so the first-order term of the far expansion vanishes.
    pole: HPoint,
    children: Vec<usize>,
}

/// `f = mu_h * Gamma`, where each leaf atom of `mu` is spread over the blob of
/// radius `R_in` of its leaf. Clusters far from a region are summed as
/// monopoles, chosen once per region.
#[derive(Clone, Debug)]
pub struct Witness {
    blob: Blob,
    theta: f64,
    mass: f64,
    atoms: usize,
    nodes: Vec<WitnessNode>,
}

impl Witness {
    pub fn new(mu: &TileMeasure, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::Precondition(format!("opening angle must lie in (0, 1], got {theta}")));
        }
        let atoms: Vec<(TileWord, f64)> = mu
            .atoms
            .iter()
            .filter(|(_, &m)| m > 0.0)
            .map(|(w, &m)| (w.clone(), m))
            .collect();
        if atoms.is_empty() {
            return Err(Error::ZeroContent);
        }
        let g = tile_geometry();
        let blob = Blob::new(0.5f64.powi(mu.level as i32) * g.r_in)?;
        let mut w = Witness {
            blob,
            theta,
            mass: mu.total(),
            atoms: atoms.len(),
            nodes: Vec::new(),
        };
        w.grow(&TileWord::root(), &atoms, mu.level);
        Ok(w)
    }

    fn grow(&mut self, word: &TileWord, atoms: &[(TileWord, f64)], leaf_level: usize) -> usize {
        let idx = self.nodes.len();
        let l = word.level();
        self.nodes.push(WitnessNode {
            center: word.map(CENTER),
            r_out: 0.5f64.powi(l as i32) * tile_geometry().r_out,
            mass: 0.0,
            pole: HPoint::ZERO,
            children: Vec::new(),
        });
        if l == leaf_level {
            let n = &mut self.nodes[idx];
            n.mass = atoms[0].1;
            n.pole = n.center;
            return idx;
        }
        let mut children = Vec::new();
        let mut start = 0;
        while start < atoms.len() {
            let d = atoms[start].0.digits()[l];
            let end = start + atoms[start..].partition_point(|(w, _)| w.digits()[l] == d);
            children.push(self.grow(&word.child(d), &atoms[start..end], leaf_level));
            start = end;
        }
        let (mut m, mut px, mut py, mut pt) = (0.0, 0.0, 0.0, 0.0);
        for &c in &children {
            let n = &self.nodes[c];
            m += n.mass;
            px += n.mass * n.pole.x;
            py += n.mass * n.pole.y;
            pt += n.mass * n.pole.t;
        }
        let n = &mut self.nodes[idx];
        n.mass = m;
        n.pole = HPoint::new(px / m, py / m, pt / m);
        n.children = children;
        idx
    }

    pub fn blob(&self) -> Blob {
        self.blob
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `mu(K)`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    /// Poles and masses representing `mu` on `B(c, r)`: a cluster is
    /// collapsed when every point of the ball is farther than
    /// `(1 + 1/theta) R_out` from its tile center, leaves are kept otherwise.
    fn sources(&self, c: HPoint, r: f64) -> Vec<(HPoint, f64)> {
        let open = 1.0 + 1.0 / self.theta;
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i];
            if n.children.is_empty() || koranyi_distance(c, n.center) > r + open * n.r_out {
                out.push((n.pole, n.mass));
            } else {
                stack.extend(n.children.iter().rev());
            }
        }
        out
    }

    /// Exact value, summing all leaves.
    pub fn value_exact(&self, x: HPoint) -> f64 {
        self.nodes
            .iter()
            .filter(|n| n.children.is_empty())
            .fold(0.0, |a, n| a + n.mass * self.blob.potential(n.pole.between(x)))
    }
}

impl LocalField for Witness {
    fn values(&self, center: HPoint, radius: f64, pts: &[HPoint]) -> Vec<f64> {
        let src = self.sources(center, radius);
        pts.iter()
            .map(|&x| src.iter().fold(0.0, |a, &(p, m)| a + m * self.blob.potential(p.between(x))))
            .collect()
    }

    /// Sources within `3r` of the center are integrated exactly through the
    /// potential of the unit ball plus the blob defect, the rest by the rule.
    /// Balls smaller than twice the blob resolve the blobs themselves.
    fn ball_mean(&self, ball: &Ball, rule: &BallRule) -> Option<f64> {
        let (c, r) = (ball.center, ball.radius);
        let h = self.blob.radius;
        if r < 2.0 * h {
            return None;
        }
        let (near, far): (Vec<_>, Vec<_>) = self
            .sources(c, r)
            .into_iter()
            .partition(|&(p, _)| koranyi_distance(c, p) <= BALL_POTENTIAL_RADIUS * r);
        let mut far_int = 0.0;
        let mut vol = 0.0;
        for (x, w) in rule.nodes(c, r) {
            vol += w;
            far_int += w * far.iter().fold(0.0, |a, &(p, m)| a + m * self.blob.potential(p.between(x)));
        }
        let defect = self.blob.defect();
        let near_int = near.iter().fold(0.0, |a, &(p, m)| {
            let d = koranyi_distance(c, p);
            // Share of the blob inside the ball, exact away from the sphere.
            let inside = ((r + h - d) / (2.0 * h)).clamp(0.0, 1.0);
            a + m * (r * r * unit_ball_potential(c.between(p).dilate(1.0 / r)) + inside * defect)
        });
        Some((far_int + near_int) / vol)
    }

    fn gradient(&self, x: HPoint) -> [f64; 2] {
        let mut g = [0.0, 0.0];
        for (p, m) in self.sources(x, 0.0) {
            // Left-invariant fields commute with left translation.
            let d = self.blob.gradient(p.between(x));
            g[0] += m * d[0];
            g[1] += m * d[1];
        }
        g
    }
}

// ---------------------------------------------------------------------------
// Seminorm estimates.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub samples: usize,
    pub value: f64,
}

/// A sampled sup: a lower estimate of the true seminorm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeminormEstimate {
    pub kind: ExponentKind,
    pub exponent: f64,
    pub value: f64,
    pub sample_count: usize,
    /// Running max after 1, 2, 4, ... samples, and after all of them.
    pub trace: Vec<TracePoint>,
}

impl SeminormEstimate {
    fn from_samples(kind: ExponentKind, exponent: f64, samples: &[f64]) -> Result<Self> {
        if let Some(&bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::QuadratureFailure { residual: bad });
        }
        let mut trace = Vec::new();
        let mut best = 0.0_f64;
        let mut next = 1;
        for (i, &v) in samples.iter().enumerate() {
            best = best.max(v);
            if i + 1 == next || i + 1 == samples.len() {
                trace.push(TracePoint {
                    samples: i + 1,
                    value: best,
                });
                if i + 1 == next {
                    next *= 2;
                }
            }
        }
        Ok(SeminormEstimate {
            kind,
            exponent,
            value: best,
            sample_count: samples.len(),
            trace,
        })
    }

    /// Relative growth of the estimate over the last doubling of the sample.
    pub fn last_doubling_growth(&self) -> f64 {
        let half = self.sample_count / 2;
        let before = self
            .trace
            .iter()
            .rev()
            .find(|t| t.samples <= half)
            .map_or(0.0, |t| t.value);
        if before > 0.0 {
            self.value / before - 1.0
        } else {
            f64::INFINITY
        }
    }
}

/// `(4, 6, 8)` product rule used on every Campanato ball.
pub fn campanato_rule() -> &'static BallRule {
    static RULE: OnceLock<BallRule> = OnceLock::new();
    RULE.get_or_init(|| BallRule::new(4, 6, 8))
}

/// `r^{-rho} int_B |f - f_B|` on one ball, as `2 int_B (f_B - f)_+`: the two
/// agree since `f - f_B` has mean zero, and sharp peaks of `f` above the mean
/// drop out of the quadrature when `f_B` comes from [`LocalField::ball_mean`].
pub fn mean_oscillation(f: &dyn LocalField, ball: &Ball, rho: f64, rule: &BallRule) -> f64 {
    let (pts, w): (Vec<HPoint>, Vec<f64>) = rule.nodes(ball.center, ball.radius).unzip();
    let v = f.values(ball.center, ball.radius, &pts);
    // Centered on the first value, which keeps constants exact.
    let v0 = v[0];
    let mean = match f.ball_mean(ball, rule) {
        Some(m) => m - v0,
        None => {
            let vol = w.iter().sum::<f64>();
            v.iter().zip(&w).fold(0.0, |a, (v, w)| a + (v - v0) * w) / vol
        }
    };
    let below = v.iter().zip(&w).fold(0.0, |a, (v, w)| a + w * (mean - (v - v0)).max(0.0));
    2.0 * below / ball.radius.powf(rho)
}

/// `max_B r^{-rho} int_B |f - f_B|` over the given balls.
pub fn campanato_seminorm(f: &dyn LocalField, rho: f64, balls: &[Ball], rule: &BallRule) -> Result<SeminormEstimate> {
    if !(rho > 0.0) {
        return Err(Error::ExponentOutOfRange {
            value: rho,
            range: "(0, inf)".into(),
        });
    }
    let vals: Vec<f64> = balls.par_iter().map(|b| mean_oscillation(f, b, rho, rule)).collect();
    SeminormEstimate::from_samples(ExponentKind::Campanato, rho, &vals)
}

/// `max |f(x) - f(y)| / d(x, y)^delta` over the given pairs.
pub fn holder_seminorm(f: &dyn LocalField, delta: f64, pairs: &[(HPoint, HPoint)]) -> Result<SeminormEstimate> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::ExponentOutOfRange {
            value: delta,
            range: "(0, 1]".into(),
        });
    }
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(x, y)| {
            let d = koranyi_distance(x, y);
            if d == 0.0 {
                return 0.0;
            }
            let v = f.values(x, d, &[x, y]);
            (v[0] - v[1]).abs() / d.powf(delta)
        })
        .collect();
    SeminormEstimate::from_samples(ExponentKind::Holder, delta, &vals)
}

/// `max |grad_H f|` over the given points.
pub fn lipschitz_grad_sup(f: &dyn LocalField, points: &[HPoint]) -> Result<SeminormEstimate> {
    let vals: Vec<f64> = points
        .par_iter()
        .map(|&x| {
            let g = f.gradient(x);
            g[0].hypot(g[1])
        })
        .collect();
    SeminormEstimate::from_samples(ExponentKind::Lipschitz, 1.0, &vals)
}

// ---------------------------------------------------------------------------
// Sample families around a tile set.

/// Scales `2^{-j} R_out` for `j = 0 ..= level + 3`, reaching below the blob
/// radius.
fn scale_count(k: &TileSet) -> usize {
    k.level() + 4
}

fn resolution(level: usize) -> usize {
    (level + 8).min(LOCATE_RESOLUTION)
}

/// A random point near `K` at scale `j`: uniform in an ancestor tile down to
/// the leaf level, in a ball around the leaf center below it.
fn point_at_scale(k: &TileSet, j: usize, rng: &mut ChaCha8Rng) -> HPoint {
    let leaf = &k.words()[rng.gen_range(0..k.len())];
    let d = k.level();
    if j <= d {
        let w = leaf.prefix(j);
        sample_in_tile(&w, resolution(j), rng)
    } else {
        let r = 0.5f64.powi(j as i32 - 1) * tile_geometry().r_out;
        sample_in_ball(leaf.map(CENTER), r, rng)
    }
}

/// Picks up to `n` items spread evenly over `items`.
fn spread<T: Clone>(items: &[T], n: usize) -> Vec<T> {
    if items.len() <= n {
        return items.to_vec();
    }
    (0..n).map(|i| items[i * items.len() / n].clone()).collect()
}

/// Up to this many deterministic centers per scale.
const CORE_CENTERS: usize = 8;

/// Balls of radius `2^{-j} R_out`: first tile-centered ones at every scale,
/// then jittered centers at stratified scales.
pub fn ball_family(k: &TileSet, count: usize, seed: u64) -> Vec<Ball> {
    if k.is_empty() || count == 0 {
        return Vec::new();
    }
    let g = tile_geometry();
    let scales = scale_count(k);
    let mut out = Vec::with_capacity(count);
    'core: for j in 0..scales {
        let level = j.min(k.level());
        let mut ancestors: Vec<TileWord> = k.words().iter().map(|w| w.prefix(level)).collect();
        ancestors.dedup();
        for w in spread(&ancestors, CORE_CENTERS) {
            if out.len() == count {
                break 'core;
            }
            out.push(Ball::koranyi(w.map(CENTER), 0.5f64.powi(j as i32) * g.r_out));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut j = 0;
    while out.len() < count {
        let c = point_at_scale(k, j, &mut rng);
        out.push(Ball::koranyi(c, 0.5f64.powi(j as i32) * g.r_out));
        j = (j + 1) % scales;
    }
    out
}

/// A point on the unit gauge sphere.
fn unit_direction(rng: &mut ChaCha8Rng) -> HPoint {
    let theta = (rng.gen::<f64>() - 0.5) * std::f64::consts::PI;
    let p = sphere_point(theta, rng.gen_range(0.0..std::f64::consts::TAU));
    p.dilate(1.0 / koranyi(p))
}

/// Pairs `(x, x . delta_r(omega))` with `r` spread over each dyadic scale.
pub fn pair_family(k: &TileSet, count: usize, seed: u64) -> Vec<(HPoint, HPoint)> {
    if k.is_empty() {
        return Vec::new();
    }
    let g = tile_geometry();
    let scales = scale_count(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let j = i % scales;
            let x = point_at_scale(k, j, &mut rng);
            let r = 0.5f64.powf(j as f64 + rng.gen::<f64>()) * g.r_out;
            (x, x * unit_direction(&mut rng).dilate(r))
        })
        .collect()
}

/// Points near `K` at stratified scales.
pub fn gradient_samples(k: &TileSet, count: usize, seed: u64) -> Vec<HPoint> {
    if k.is_empty() {
        return Vec::new();
    }
    let scales = scale_count(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| point_at_scale(k, i % scales, &mut rng)).collect()
}

/// Largest number of tiles returned by [`tiles_meeting_ball`] over the balls.
pub fn doubling_count(balls: &[Ball]) -> Result<usize> {
    let mut n = 0;
    for b in balls {
        n = n.max(tiles_meeting_ball(b.center, b.radius)?.words.len());
    }
    Ok(n)
}

// ---------------------------------------------------------------------------
// Frostman ball property.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrostmanBallReport {
    pub balls: usize,
    /// Largest doubling count over the balls.
    pub n_measured: usize,
    /// The constant `C` of [`crate::tiling::ball_constant`].
    pub c: f64,
    /// `max mu(B) / (C r^s)`; at most `n_measured` when the property holds.
    pub worst_ratio: f64,
    pub violations: usize,
}

/// Checks `mu_h(B(x, r)) <= N C r^s` for the blob-smoothed measure. Balls must
/// have radius in `[2^{-m-1} R_out, R_out]` with `m` the leaf level; the mass
/// of a ball is bounded above by the atoms whose blob meets it.
pub fn frostman_ball_check(mu: &TileMeasure, balls: &[Ball]) -> Result<FrostmanBallReport> {
    let g = tile_geometry();
    let h = 0.5f64.powi(mu.level as i32) * g.r_in;
    let lo = 0.5f64.powi(mu.level as i32 + 1) * g.r_out;
    let c = crate::tiling::ball_constant(mu.s);
    let atoms: Vec<(HPoint, f64)> = mu.atoms.iter().map(|(w, &m)| (w.map(CENTER), m)).collect();
    let mut counts = Vec::with_capacity(balls.len());
    let mut ratios = Vec::with_capacity(balls.len());
    for b in balls {
        if !(b.radius >= lo && b.radius <= g.r_out) {
            return Err(Error::Precondition(format!(
                "ball radius {} outside [{lo}, {}]",
                b.radius, g.r_out
            )));
        }
        let mass = atoms
            .iter()
            .filter(|(p, _)| koranyi_distance(*p, b.center) < b.radius + h)
            .fold(0.0, |a, (_, m)| a + m);
        counts.push(tiles_meeting_ball(b.center, b.radius)?.words.len());
        ratios.push(mass / (c * b.radius.powf(mu.s)));
    }
    let n = counts.iter().copied().max().unwrap_or(0);
    Ok(FrostmanBallReport {
        balls: balls.len(),
        n_measured: n,
        c,
        worst_ratio: ratios.iter().copied().fold(0.0, f64::max),
        violations: ratios.iter().filter(|&&r| r > n as f64).count(),
    })
}

/// Random balls near `K` with radii log-uniform in the range accepted by
/// [`frostman_ball_check`].
pub fn frostman_test_balls(k: &TileSet, count: usize, seed: u64) -> Vec<Ball> {
    if k.is_empty() {
        return Vec::new();
    }
    let g = tile_geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = k.level() as f64 + 1.0;
    (0..count)
        .map(|_| {
            let e = rng.gen::<f64>() * span;
            let j = (e.floor() as usize).min(k.level());
            let c = point_at_scale(k, j, &mut rng);
            Ball::koranyi(c, 0.5f64.powf(e) * g.r_out)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Capacity bounds.

/// Measured constants reported next to the bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Doubling count over the ball family.
    #[serde(rename = "N")]
    pub n: usize,
    /// Normalized partition-of-unity derivative sups for `|alpha| = 1, 2`.
    #[serde(rename = "C_alpha")]
    pub c_alpha: Vec<f64>,
}

/// The witness behind a lower bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessInfo {
    pub atoms: usize,
    pub blob_radius: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityBounds {
    pub set: String,
    pub exponent: Exponent,
    pub lambda: f64,
    pub s: f64,
    pub content: f64,
    pub mu_mass: f64,
    pub seminorm: Option<SeminormEstimate>,
    /// `mu(K) / seminorm`, modulo seminorm sampling.
    pub lower: Option<f64>,
    /// `J^2` times the dyadic content; none for the Lipschitz capacity,
    /// which admits no content upper bound.
    pub upper: Option<f64>,
    #[serde(rename = "J")]
    pub j: u32,
    pub witness: Option<WitnessInfo>,
    pub constants: Constants,
}

impl CapacityBounds {
    pub fn ratio_lower(&self) -> Option<f64> {
        self.lower.filter(|_| self.content > 0.0).map(|l| l / self.content)
    }

    pub fn ratio_upper(&self) -> Option<f64> {
        self.upper.filter(|_| self.content > 0.0).map(|u| u / self.content)
    }
}

/// Measured partition constants on the level-1 sibling family.
pub fn partition_constants() -> &'static [f64] {
    static C: OnceLock<Vec<f64>> = OnceLock::new();
    C.get_or_init(|| {
        let rows = sibling_family(1)
            .and_then(|f| derivative_scaling_check(&f, &standard_words(), 48, 0))
            .unwrap_or_default();
        let max_deg = |d: usize| {
            rows.iter()
                .filter(|r| r.word.len() == d)
                .fold(0.0_f64, |a, r| a.max(r.normalized_sup))
        };
        vec![max_deg(1), max_deg(2)]
    })
}

/// A short label for a tile set.
pub fn set_label(k: &TileSet) -> String {
    format!("level{}-n{}", k.level(), k.len())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Want {
    Lower,
    Upper,
    Both,
}

fn estimate(k: &TileSet, exponent: Exponent, budgets: &Budgets, seed: u64, want: Want) -> Result<CapacityBounds> {
    require_order_two(LAMBDA)?;
    exponent.validate()?;
    budgets.validate()?;
    let s = exponent.content_exponent();
    let content = dyadic_content(k, s)?;
    let jc = tile_geometry().j_constant();
    let with_upper = want != Want::Lower && exponent.kind != ExponentKind::Lipschitz;
    let with_lower = want != Want::Upper;
    let balls = ball_family(k, budgets.balls.min(256), seed);
    let mut out = CapacityBounds {
        set: set_label(k),
        exponent,
        lambda: LAMBDA,
        s,
        content,
        mu_mass: 0.0,
        seminorm: None,
        lower: with_lower.then_some(0.0),
        upper: with_upper.then(|| (jc * jc) as f64 * content),
        j: jc,
        witness: None,
        constants: Constants {
            n: doubling_count(&balls)?,
            c_alpha: partition_constants().to_vec(),
        },
    };
    if !with_lower || !(content > 0.0) {
        return Ok(out);
    }
    let mu = frostman_measure(k, s)?;
    let f = Witness::new(&mu, budgets.theta())?;
    let est = match exponent.kind {
        ExponentKind::Campanato => {
            let balls = ball_family(k, budgets.balls, seed);
            campanato_seminorm(&f, exponent.value, &balls, campanato_rule())?
        }
        ExponentKind::Holder => holder_seminorm(&f, exponent.value, &pair_family(k, budgets.pairs, seed))?,
        ExponentKind::Lipschitz => lipschitz_grad_sup(&f, &gradient_samples(k, budgets.samples, seed))?,
    };
    if !(est.value > 0.0) {
        return Err(Error::QuadratureFailure { residual: est.value });
    }
    out.mu_mass = f.mass();
    out.lower = Some(f.mass() / est.value);
    out.seminorm = Some(est);
    out.witness = Some(WitnessInfo {
        atoms: f.atoms(),
        blob_radius: f.blob().radius,
        theta: f.theta(),
    });
    Ok(out)
}

pub fn campanato_capacity_lower(k: &TileSet, rho: f64, budgets: &Budgets, seed: u64) -> Result<CapacityBounds> {
    estimate(k, Exponent::campanato(rho), budgets, seed, Want::Lower)
}

/// `J^2 sum (diam T_j)^{rho - 2}` over the optimal dyadic cover.
pub fn campanato_capacity_upper(k: &TileSet, rho: f64) -> Result<CapacityBounds> {
    estimate(k, Exponent::campanato(rho), &Budgets::default(), 0, Want::Upper)
}

pub fn campanato_capacity_bounds(k: &TileSet, rho: f64, budgets: &Budgets, seed: u64) -> Result<CapacityBounds> {
    estimate(k, Exponent::campanato(rho), budgets, seed, Want::Both)
}

pub fn holder_capacity_bounds(k: &TileSet, delta: f64, budgets: &Budgets, seed: u64) -> Result<CapacityBounds> {
    estimate(k, Exponent::holder(delta), budgets, seed, Want::Both)
}

/// Witness at `s = Q - 1`; there is no upper bound.
pub fn lipschitz_capacity_lower(k: &TileSet, budgets: &Budgets, seed: u64) -> Result<CapacityBounds> {
    if k.is_empty() {
        return Err(Error::Precondition("the Lipschitz bound needs a nonempty set".into()));
    }
    estimate(k, Exponent::lipschitz(), budgets, seed, Want::Lower)
}

pub fn capacity_bounds(k: &TileSet, exponent: Exponent, budgets: &Budgets, seed: u64) -> Result<CapacityBounds> {
    estimate(k, exponent, budgets, seed, Want::Both)
}

// ---------------------------------------------------------------------------
// Self-similar test sets.

/// Kept digits of the `k`-map sets, `k in {1, 2, 4, 8, 16}`. The digits are
/// unions of cosets of subgroups of `(Z/2)^4` acting on `(a, b, c0, c1)`.
pub fn k_map_digits(k: usize) -> Result<Vec<u8>> {
    match k {
        1 => Ok(vec![0]),
        2 => Ok(vec![0, 15]),
        4 => Ok(vec![0, 5, 10, 15]),
        8 => Ok(vec![0, 3, 5, 6, 9, 10, 12, 15]),
        16 => Ok((0..16).collect()),
        _ => Err(Error::Precondition(format!("no k-map set for k = {k}"))),
    }
}

pub fn k_map_set(k: usize, depth: usize) -> Result<TileSet> {
    TileSet::self_similar(&k_map_digits(k)?, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{convolve_measure, MeasureMode};
    use crate::group::OperatorWord;

    fn budgets() -> Budgets {
        Budgets {
            balls: 64,
            pairs: 256,
            samples: 256,
            ..Budgets::default()
        }
    }

    #[test]
    fn exponent_ranges() {
        assert!(Exponent::campanato(2.0).validate().is_ok());
        assert!(Exponent::campanato(4.0).validate().is_ok());
        assert!(Exponent::campanato(4.5).validate().is_err());
        assert!(Exponent::holder(1.0).validate().is_err());
        assert_eq!(Exponent::holder(0.5).content_exponent(), 2.5);
        assert_eq!(Exponent::lipschitz().content_exponent(), 3.0);
    }

    #[test]
    fn constant_has_zero_seminorms() {
        let f = FnField(|_p: HPoint| 3.0);
        let k = k_map_set(4, 2).unwrap();
        let c = campanato_seminorm(&f, 3.0, &ball_family(&k, 20, 1), campanato_rule()).unwrap();
        let h = holder_seminorm(&f, 0.5, &pair_family(&k, 50, 1)).unwrap();
        let l = lipschitz_grad_sup(&f, &gradient_samples(&k, 50, 1)).unwrap();
        assert_eq!(c.value, 0.0);
        assert_eq!(h.value, 0.0);
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn trace_is_monotone() {
        let f = FnField(|p: HPoint| p.x * p.y + p.t);
        let k = k_map_set(8, 2).unwrap();
        let e = campanato_seminorm(&f, 3.0, &ball_family(&k, 100, 4), campanato_rule()).unwrap();
        assert_eq!(e.trace.first().unwrap().samples, 1);
        assert_eq!(e.trace.last().unwrap().samples, 100);
        assert!(e.trace.windows(2).all(|w| w[0].value <= w[1].value));
        assert_eq!(e.trace.last().unwrap().value, e.value);
    }

    #[test]
    fn witness_tree_code_matches_direct_sum() {
        let k = k_map_set(16, 2).unwrap();
        let mu = frostman_measure(&k, 1.0).unwrap();
        let f = Witness::new(&mu, 0.5).unwrap();
        for b in ball_family(&k, 40, 9) {
            let (pts, _): (Vec<_>, Vec<_>) = campanato_rule().nodes(b.center, b.radius).unzip();
            let v = f.values(b.center, b.radius, &pts[..8]);
            for (p, v) in pts.iter().zip(&v) {
                let exact = f.value_exact(*p);
                assert!((v - exact).abs() <= 0.02 * exact, "{v} vs {exact}");
            }
        }
    }

    #[test]
    fn witness_ball_mean_matches_fine_quadrature() {
        let k = k_map_set(2, 3).unwrap();
        let mu = frostman_measure(&k, 1.0).unwrap();
        let f = Witness::new(&mu, 0.5).unwrap();
        let fine = BallRule::new(24, 32, 64);
        for b in ball_family(&k, 60, 3).into_iter().filter(|b| b.radius >= 2.0 * f.blob().radius).step_by(5) {
            let mean = f.ball_mean(&b, campanato_rule()).unwrap();
            let (pts, w): (Vec<_>, Vec<_>) = fine.nodes(b.center, b.radius).unzip();
            let v = f.values(b.center, b.radius, &pts);
            let q = v.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() / w.iter().sum::<f64>();
            assert!((mean - q).abs() < 0.02 * q, "r = {}: {mean} vs {q}", b.radius);
        }
    }

    #[test]
    fn witness_matches_smoothed_convolution() {
        let k = k_map_set(4, 2).unwrap();
        let mu = frostman_measure(&k, 2.0).unwrap();
        let f = Witness::new(&mu, 0.5).unwrap();
        let x = HPoint::new(0.3, -0.2, 0.4);
        let conv = convolve_measure(&mu, &OperatorWord::left(&[]), x, MeasureMode::Smoothed).unwrap();
        assert!((f.value_exact(x) - conv.value).abs() < 1e-12 * conv.value.abs().max(1.0));
    }

    #[test]
    fn witness_gradient_matches_finite_difference() {
        let k = k_map_set(2, 2).unwrap();
        let mu = frostman_measure(&k, 1.5).unwrap();
        let f = Witness::new(&mu, 0.5).unwrap();
        let fd = FnField(|p: HPoint| f.value_exact(p));
        for x in gradient_samples(&k, 30, 2) {
            let (a, b) = (f.gradient(x), fd.gradient(x));
            let scale = b[0].hypot(b[1]).max(1e-3);
            assert!((a[0] - b[0]).abs() < 0.03 * scale && (a[1] - b[1]).abs() < 0.03 * scale);
        }
    }

    #[test]
    fn campanato_of_x_matches_dense_oracle() {
        // int_{B(c, r)} |x - c_x| = r^5 int_{B_1} |x|, so every ball gives the
        // same value at rho = 5.
        let f = FnField(|p: HPoint| p.x);
        let balls: Vec<Ball> = (0..10)
            .map(|i| Ball::koranyi(HPoint::new(0.1 * i as f64, -0.05 * i as f64, 0.02 * i as f64), 0.3 + 0.07 * i as f64))
            .collect();
        let rule = BallRule::new(8, 16, 48);
        let e = campanato_seminorm(&f, 5.0, &balls, &rule).unwrap();
        // Midpoint rule on the box [-1, 1]^2 x [-1/4, 1/4] around the unit ball.
        let n = 160;
        let (hx, ht) = (2.0 / n as f64, 0.5 / n as f64);
        let mut oracle = 0.0;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let p = HPoint::new(-1.0 + (i as f64 + 0.5) * hx, -1.0 + (j as f64 + 0.5) * hx, -0.25 + (l as f64 + 0.5) * ht);
                    if koranyi(p) < 1.0 {
                        oracle += p.x.abs();
                    }
                }
            }
        }
        oracle *= hx * hx * ht;
        assert!((e.value - oracle).abs() < 1e-3 * oracle, "{} vs {oracle}", e.value);
    }

    #[test]
    fn gauge_norm_is_one_lipschitz_on_horizontal_pairs() {
        let f = FnField(koranyi);
        let pairs: Vec<(HPoint, HPoint)> =
            (1..20).map(|i| (HPoint::ZERO, HPoint::new(0.1 * i as f64, 0.05 * i as f64, 0.0))).collect();
        let e = holder_seminorm(&f, 1.0, &pairs).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frostman_balls_hold() {
        for k in [1, 4, 16] {
            let set = k_map_set(k, 3).unwrap();
            for s in [0.5, 2.0] {
                let mu = frostman_measure(&set, s).unwrap();
                let r = frostman_ball_check(&mu, &frostman_test_balls(&set, 100, 3)).unwrap();
                assert_eq!(r.violations, 0, "k = {k}, s = {s}: {r:?}");
            }
        }
    }

    #[test]
    fn empty_set_has_zero_bounds() {
        let k = TileSet::empty(2);
        let b = campanato_capacity_bounds(&k, 3.0, &budgets(), 0).unwrap();
        assert_eq!(b.lower, Some(0.0));
        assert_eq!(b.upper, Some(0.0));
        let h = holder_capacity_bounds(&k, 0.5, &budgets(), 0).unwrap();
        assert_eq!((h.lower, h.upper), (Some(0.0), Some(0.0)));
        assert!(lipschitz_capacity_lower(&k, &budgets(), 0).is_err());
    }

    #[test]
    fn full_set_at_rho_two_has_unit_mass() {
        let k = TileSet::full(2).unwrap();
        let b = campanato_capacity_lower(&k, 2.0, &budgets(), 0).unwrap();
        assert!((b.mu_mass - 1.0).abs() < 1e-9);
        let m = b.seminorm.as_ref().unwrap().value;
        assert!((b.lower.unwrap() - b.mu_mass / m).abs() < 1e-15);
        assert!(b.upper.is_none());
    }

    #[test]
    fn upper_bound_cases() {
        let g = tile_geometry();
        let leaf = TileSet::new(3, vec!["5a3".parse().unwrap()]).unwrap();
        let u = campanato_capacity_upper(&leaf, 3.5).unwrap().upper.unwrap();
        assert!((u - 4.0 * (g.diam / 8.0).powf(1.5)).abs() < 1e-12);
        for depth in 1..=3 {
            let u = campanato_capacity_upper(&k_map_set(4, depth).unwrap(), 4.0).unwrap().upper.unwrap();
            assert!((u - 4.0 * g.diam * g.diam).abs() < 1e-12 * u);
        }
    }

    #[test]
    fn lambda_other_than_two_is_rejected() {
        assert!(matches!(require_order_two(4.0), Err(Error::UnsupportedOrder(_))));
    }

    #[test]
    fn four_map_at_rho_four_is_positive() {
        let k = k_map_set(4, 3).unwrap();
        let b = campanato_capacity_bounds(&k, 4.0, &budgets(), 5).unwrap();
        assert!(b.lower.unwrap() > 0.0);
        assert!(b.upper.unwrap() > 0.0);
        let l = lipschitz_capacity_lower(&TileSet::full(1).unwrap(), &budgets(), 5).unwrap();
        assert!(l.lower.unwrap() > 0.0 && l.upper.is_none());
    }

    #[test]
    fn k_map_digit_sets() {
        for k in [1, 2, 4, 8, 16] {
            let d = k_map_digits(k).unwrap();
            assert_eq!(d.len(), k);
            assert!(d.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(k_map_digits(3).is_err());
    }
}
