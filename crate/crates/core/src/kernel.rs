//! The fundamental solution `Gamma = c N^{-2}` of the sub-Laplacian on `H^1`,
//! its horizontal derivatives, mollifiers, radial blob potentials and
//! convolution against tile measures.
//!
//! Sign convention: `-L Gamma = delta` with `L = X^2 + Y^2`, so `Gamma > 0`
//! and `int Gamma (-L phi) = phi(0)`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{
    apply_fields, sub_laplacian_analytic, FdConfig, GaugeBump, HPoint, Heisenberg, KoranyiQuartic,
    Mat3, OperatorWord, Side, Smooth, Vec3,
};
use crate::metrics::koranyi;
use crate::quadrature::{
    gauge_sphere_crossings, integrate_singular, AngularRule, BallRule, Quadrature, Radial, SingularRule,
};
use crate::tiling::{tile_geometry, Tile, TileMeasure, TileWord, ALPHABET};

/// `c` in `Gamma = c N^{-2}`: `1 / (2 pi)`. The unit-mass radial blob below
/// has flux `-2 pi^2 * N^3 G'(N) = 1` through the unit sphere exactly when
/// `c = 1/(2 pi)`; [`calibrate_constant`] reproduces it by quadrature.
pub const GAMMA_CONSTANT: f64 = 0.159_154_943_091_895_35;

/// A kernel of type `lambda`: smooth off the origin and homogeneous of
/// degree `lambda - Q`.
pub trait FundamentalSolution: Sync {
    /// Order `lambda` of the operator it inverts.
    fn order(&self) -> f64;
    fn homogeneity_degree(&self) -> f64;
    fn eval(&self, p: HPoint) -> Result<f64>;
    fn deriv(&self, w: &OperatorWord, p: HPoint) -> Result<f64>;
}

/// `Gamma` for the sub-Laplacian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub homogeneity_degree: f64,
    pub constant: f64,
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel {
            homogeneity_degree: -2.0,
            constant: GAMMA_CONSTANT,
        }
    }
}

impl FundamentalSolution for Kernel {
    fn order(&self) -> f64 {
        2.0
    }

    fn homogeneity_degree(&self) -> f64 {
        self.homogeneity_degree
    }

    fn eval(&self, p: HPoint) -> Result<f64> {
        Ok(self.constant / GAMMA_CONSTANT * gamma(p)?)
    }

    fn deriv(&self, w: &OperatorWord, p: HPoint) -> Result<f64> {
        Ok(self.constant / GAMMA_CONSTANT * gamma_deriv(w, p)?)
    }
}

/// Rejects kernels of any order other than 2.
pub fn require_order_two(lambda: f64) -> Result<()> {
    if lambda == 2.0 {
        Ok(())
    } else {
        Err(Error::UnsupportedOrder(lambda))
    }
}

pub fn gamma(p: HPoint) -> Result<f64> {
    let u = KoranyiQuartic.value(p);
    if u == 0.0 {
        return Err(Error::Singularity);
    }
    Ok(GAMMA_CONSTANT / u.sqrt())
}

#[inline]
fn horizontal_parts(p: HPoint) -> (f64, [f64; 2], f64) {
    let r2 = p.x * p.x + p.y * p.y;
    let u = r2 * r2 + 16.0 * p.t * p.t;
    (r2, [r2 * p.x - 4.0 * p.t * p.y, r2 * p.y + 4.0 * p.t * p.x], u)
}

/// Left-invariant derivatives of `Gamma` of order at most two.
fn gamma_left(letters: &[usize], p: HPoint) -> f64 {
    let c = GAMMA_CONSTANT;
    let (r2, a, u) = horizontal_parts(p);
    match letters {
        [] => c / u.sqrt(),
        [i] => -2.0 * c * a[*i] * u.powf(-1.5),
        [i, j] => {
            // X_i applied to the coefficient A_j.
            let xa = match (i, j) {
                (0, 0) | (1, 1) => 3.0 * r2,
                (0, 1) => 4.0 * p.t,
                _ => -4.0 * p.t,
            };
            -2.0 * c * (xa * u.powf(-1.5) - 6.0 * a[*i] * a[*j] * u.powf(-2.5))
        }
        _ => unreachable!(),
    }
}

/// `X_w Gamma(p)`: closed forms for `|w| <= 2` on either side, finite
/// differences along group flows beyond.
///
/// Right-invariant words follow from `Gamma(p^{-1}) = Gamma(p)`:
/// `X~_w Gamma(p) = (-1)^{|w|} (X_w Gamma)(p^{-1})`.
pub fn gamma_deriv(w: &OperatorWord, p: HPoint) -> Result<f64> {
    if w.letters.iter().any(|&l| l > 1) {
        return Err(Error::Precondition("H^1 has two horizontal fields".into()));
    }
    if p.x == 0.0 && p.y == 0.0 && p.t == 0.0 {
        return Err(Error::Singularity);
    }
    let n = w.degree();
    if n <= 2 {
        return Ok(match w.side {
            Side::Left => gamma_left(&w.letters, p),
            Side::Right => {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                sign * gamma_left(&w.letters, p.inv())
            }
        });
    }
    let f = |q: &HPoint| gamma(*q).unwrap_or(f64::NAN);
    apply_fields(&Heisenberg, &w.fields(), &f, &p, FdConfig::default()).map(|e| e.value)
}

/// `Gamma` as a closed-form field (Euclidean gradient and Hessian) for the
/// analytic calculus path. Undefined at the origin.
#[derive(Clone, Copy, Debug, Default)]
pub struct GammaField;

impl Smooth for GammaField {
    fn value(&self, p: HPoint) -> f64 {
        GAMMA_CONSTANT / KoranyiQuartic.value(p).sqrt()
    }
    fn gradient(&self, p: HPoint) -> Vec3 {
        let u = KoranyiQuartic.value(p);
        let f = -0.5 * GAMMA_CONSTANT * u.powf(-1.5);
        KoranyiQuartic.gradient(p).map(|g| f * g)
    }
    fn hessian(&self, p: HPoint) -> Mat3 {
        let u = KoranyiQuartic.value(p);
        let g = KoranyiQuartic.gradient(p);
        let h = KoranyiQuartic.hessian(p);
        let a = 0.75 * GAMMA_CONSTANT * u.powf(-2.5);
        let b = -0.5 * GAMMA_CONSTANT * u.powf(-1.5);
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = a * g[i] * g[j] + b * h[i][j];
            }
        }
        out
    }
}

/// Result of one delta-pairing calibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// `phi(0) / int N^{-2} (-L phi)`.
    pub constant: f64,
    /// `int N^{-2} (-L phi)` with its quadrature error.
    pub pairing: Quadrature,
    /// `|int Gamma (-L phi) - phi(0)| / |phi(0)|` with the stored constant.
    pub residual: f64,
}

/// `int f(y) (-L phi)(y) dy` over `supp phi`, in polar coordinates around `x`.
pub fn pair_with_sub_laplacian(
    bump: &GaugeBump,
    x: HPoint,
    rule: &SingularRule,
    f: &(dyn Fn(HPoint, f64) -> f64 + Sync),
) -> Result<Quadrature> {
    let rmax = koranyi(x.between(bump.center)) + bump.radius;
    let breaks = |omega: HPoint| gauge_sphere_crossings(bump.center, bump.radius, x, omega, rmax);
    let radial = Radial {
        center: x,
        rmax,
        breaks: Some(&breaks),
    };
    integrate_singular(&radial, rule, &|y, rho, _| -sub_laplacian_analytic(bump, y) * f(y, rho))
}

/// Solves `c int N^{-2} (-L phi) = phi(0)` for `c`.
pub fn calibrate_constant(bump: &GaugeBump, rule: &SingularRule) -> Result<Calibration> {
    let phi0 = bump.value(HPoint::ZERO);
    if phi0 == 0.0 {
        return Err(Error::Precondition("calibration bump must not vanish at the origin".into()));
    }
    let pairing = pair_with_sub_laplacian(bump, HPoint::ZERO, rule, &|_, rho| rho.powi(-2))?;
    if !(pairing.value > 0.0) {
        return Err(Error::QuadratureFailure {
            residual: pairing.value,
        });
    }
    Ok(Calibration {
        constant: phi0 / pairing.value,
        pairing,
        residual: (GAMMA_CONSTANT * pairing.value - phi0).abs() / phi0.abs(),
    })
}

/// The two reference bumps used for calibration.
pub fn reference_bumps() -> [GaugeBump; 2] {
    [GaugeBump::unit(), GaugeBump::new(HPoint::new(0.12, -0.07, 0.05), 0.8, 5)]
}

/// `|Gamma(X Y) - Gamma(X)| / (|Y| |X|^{-3})` for `|Y| <= |X| / 2`.
pub fn difference_bound_check(x: HPoint, y: HPoint) -> Result<f64> {
    let nx = koranyi(x);
    let ny = koranyi(y);
    if nx == 0.0 || ny > 0.5 * nx {
        return Err(Error::Precondition(format!("need |Y| <= |X|/2, got |X| = {nx}, |Y| = {ny}")));
    }
    if ny == 0.0 {
        return Ok(0.0);
    }
    Ok((gamma(x * y)? - gamma(x)?).abs() / (ny * nx.powi(-3)))
}

// ---------------------------------------------------------------------------
// Mollifiers.

/// `zeta_t(p) = t^{-4} zeta(delta_{1/t} p)` with the profile
/// `zeta = (1 - N^4)^4 / m` on the unit ball, `m` its numerical mass.
#[derive(Clone, Debug)]
pub struct Mollifier {
    pub scale: f64,
    pub mass: f64,
    rule: BallRule,
}

impl Mollifier {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::NonPositiveDilation(scale));
        }
        let rule = BallRule::new(10, 12, 24);
        let mass = rule
            .nodes(HPoint::ZERO, 1.0)
            .map(|(y, w)| w * Mollifier::profile(y))
            .sum();
        Ok(Mollifier { scale, mass, rule })
    }

    fn profile(p: HPoint) -> f64 {
        let u = KoranyiQuartic.value(p);
        if u < 1.0 {
            (1.0 - u).powi(4)
        } else {
            0.0
        }
    }

    pub fn eval(&self, p: HPoint) -> f64 {
        let t = self.scale;
        Mollifier::profile(p.dilate(1.0 / t)) / (self.mass * t.powi(4))
    }

    pub fn support_radius(&self) -> f64 {
        self.scale
    }

    /// `(zeta_t * g)(p) = int zeta_t(y) g(y^{-1} p) dy`.
    pub fn mollify(&self, g: &dyn Fn(HPoint) -> f64, p: HPoint) -> f64 {
        self.rule
            .nodes(HPoint::ZERO, self.scale)
            .map(|(y, w)| w * self.eval(y) * g(y.inv() * p))
            .sum()
    }
}

/// `zeta_t * g (p)`.
pub fn mollify(g: &dyn Fn(HPoint) -> f64, t: f64, p: HPoint) -> Result<f64> {
    Ok(Mollifier::new(t)?.mollify(g, p))
}

// ---------------------------------------------------------------------------
// Radial blob potentials.

const BLOB_K: f64 = 24.0 / PI;

/// A unit-mass radial density on `B(0, h)` and its potential `g_h = beta_h * Gamma`.
///
/// `beta(p) = (24/pi) (|z|^2 / N^2) (1 - N^2)^2` on the unit ball solves
/// `-L g = beta` for the radial `g` below, which equals `Gamma` outside the
/// ball; `beta_h = h^{-4} beta o delta_{1/h}`, `g_h = h^{-2} g o delta_{1/h}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub radius: f64,
}

impl Blob {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::NonPositiveDilation(radius));
        }
        Ok(Blob { radius })
    }

    pub fn density(&self, p: HPoint) -> f64 {
        let q = p.dilate(1.0 / self.radius);
        let n2 = KoranyiQuartic.value(q).sqrt();
        if n2 >= 1.0 || n2 == 0.0 {
            return 0.0;
        }
        let r2 = q.x * q.x + q.y * q.y;
        BLOB_K * (r2 / n2) * (1.0 - n2).powi(2) / self.radius.powi(4)
    }

    /// `G(n)` for the unit blob.
    fn radial(n: f64) -> f64 {
        if n >= 1.0 {
            return GAMMA_CONSTANT / (n * n);
        }
        let n2 = n * n;
        let n4 = n2 * n2;
        GAMMA_CONSTANT + BLOB_K * ((1.0 - n2) / 8.0 - (1.0 - n4) / 12.0 + (1.0 - n4 * n2) / 48.0)
    }

    /// `G'(n)`.
    fn radial_deriv(n: f64) -> f64 {
        if n >= 1.0 {
            return -2.0 * GAMMA_CONSTANT / (n * n * n);
        }
        let n3 = n * n * n;
        -BLOB_K * (n / 4.0 - n3 / 3.0 + n3 * n * n / 8.0)
    }

    /// `g_h(p)`.
    #[inline]
    pub fn potential(&self, p: HPoint) -> f64 {
        let h = self.radius;
        Blob::radial(koranyi(p) / h) / (h * h)
    }

    /// `(X g_h, Y g_h)(p)`, using `X N = A / N^3`, `Y N = B / N^3`.
    pub fn gradient(&self, p: HPoint) -> [f64; 2] {
        let (_, a, u) = horizontal_parts(p);
        if u == 0.0 {
            return [0.0, 0.0];
        }
        let n = u.sqrt().sqrt();
        let h = self.radius;
        let d = Blob::radial_deriv(n / h) / (h * h * h);
        let n3 = n * n * n;
        [d * a[0] / n3, d * a[1] / n3]
    }

    /// `sup_p |grad_H g_h| = max |G'| / h^3`, since `|grad_H N| = |z| / N <= 1`
    /// with equality on the horizontal plane. `|G'|` peaks where
    /// `5 n^4 / 8 - n^2 + 1/4 = 0`.
    /// `int (g_h - Gamma) = -pi h^2 / 40`, supported in `B(0, h)`.
    pub fn defect(&self) -> f64 {
        -PI * self.radius * self.radius / 40.0
    }

    pub fn gradient_sup(&self) -> f64 {
        let n = ((1.0 - (0.375f64).sqrt()) / 1.25).sqrt();
        Blob::radial_deriv(n).abs() / self.radius.powi(3)
    }
}

// ---------------------------------------------------------------------------
// Convolution with tile measures.

/// How the mass of each leaf is spread out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum MeasureMode {
    /// Point mass at each leaf center.
    Atomic,
    /// Uniform on the leaf tile, by adaptive subdivision into subtiles.
    UniformOnTile { max_extra_depth: usize },
    /// The radial blob of radius `R_in` of the leaf around its center; the
    /// blob lies inside the leaf.
    Smoothed,
}

/// Value of a potential with an absolute error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialValue {
    pub value: f64,
    pub error: f64,
}

/// The centroid of `T`; each `f_v` is affine with constant Jacobian, so it
/// maps this to the centroid of `T_v`.
pub const TILE_CENTROID: HPoint = HPoint::new(0.5, 0.5, 0.125);

/// Side left, length at most one.
fn check_potential_word(w: &OperatorWord) -> Result<()> {
    if w.degree() > 1 || w.side != Side::Left {
        return Err(Error::Precondition(
            "measure potentials take left words of length at most one".into(),
        ));
    }
    Ok(())
}

fn kernel_at(w: &OperatorWord, rel: HPoint) -> Result<f64> {
    if w.is_empty() {
        gamma(rel)
    } else {
        gamma_deriv(w, rel)
    }
}

/// Far-field acceptance: subtiles at least this many outer radii away use
/// the 16-point rule.
const UNIFORM_SEPARATION: f64 = 4.0;

fn uniform_tile_potential(
    word: &TileWord,
    density_mass: f64,
    w: &OperatorWord,
    x: HPoint,
    depth_left: usize,
) -> Result<PotentialValue> {
    let t = Tile::new(word.clone());
    let c = word.map(TILE_CENTROID);
    let d = koranyi(c.between(x));
    if d > UNIFORM_SEPARATION * t.r_out {
        let coarse = density_mass * kernel_at(w, c.between(x))?;
        let mut fine = 0.0;
        for j in 0..ALPHABET as u8 {
            let cj = word.child(j).map(TILE_CENTROID);
            fine += density_mass / ALPHABET as f64 * kernel_at(w, cj.between(x))?;
        }
        return Ok(PotentialValue {
            value: fine,
            error: (fine - coarse).abs(),
        });
    }
    if depth_left == 0 {
        // The subtile is comparable to a ball of the same volume around x.
        let vol = 0.25 * 16f64.powi(-(word.level() as i32));
        let r = (vol / (PI * PI / 8.0)).powf(0.25);
        let density = density_mass / vol;
        let bound = if w.is_empty() {
            density * GAMMA_CONSTANT * PI * PI * r * r / 4.0
        } else {
            density * 2.0 * GAMMA_CONSTANT * PI * PI * r / 2.0
        };
        return Ok(PotentialValue {
            value: if w.is_empty() { 0.5 * bound } else { 0.0 },
            error: bound,
        });
    }
    let mut acc = PotentialValue { value: 0.0, error: 0.0 };
    for j in 0..ALPHABET as u8 {
        let v = uniform_tile_potential(&word.child(j), density_mass / ALPHABET as f64, w, x, depth_left - 1)?;
        acc.value += v.value;
        acc.error += v.error;
    }
    Ok(acc)
}

/// `X_w (mu * Gamma)(x)` for `|w| <= 1`.
pub fn convolve_measure(mu: &TileMeasure, w: &OperatorWord, x: HPoint, mode: MeasureMode) -> Result<PotentialValue> {
    check_potential_word(w)?;
    let g = tile_geometry();
    let mut acc = PotentialValue { value: 0.0, error: 0.0 };
    let leaf_scale = 0.5f64.powi(mu.level as i32);
    let blob = Blob::new(leaf_scale * g.r_in)?;
    for (word, &m) in &mu.atoms {
        if m == 0.0 {
            continue;
        }
        match mode {
            MeasureMode::Atomic => {
                let rel = word.map(g.center).between(x);
                acc.value += m * kernel_at(w, rel)?;
                acc.error += 4.0 * f64::EPSILON * (m * kernel_at(w, rel)?).abs();
            }
            MeasureMode::Smoothed => {
                let rel = word.map(g.center).between(x);
                let v = if w.is_empty() {
                    blob.potential(rel)
                } else {
                    blob.gradient(rel)[w.letters[0]]
                };
                acc.value += m * v;
                acc.error += 4.0 * f64::EPSILON * (m * v).abs();
            }
            MeasureMode::UniformOnTile { max_extra_depth } => {
                let v = uniform_tile_potential(word, m, w, x, max_extra_depth)?;
                acc.value += v.value;
                acc.error += v.error;
            }
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Potential of the unit ball.

/// [`unit_ball_potential`] is tabulated for `N(q)` up to this.
pub const BALL_POTENTIAL_RADIUS: f64 = 3.0;

/// Radii in `(0, rmax)` where `rho -> N(q . delta_rho(omega))^4 - 1` changes
/// sign. The map is the quartic `(|z|^2)^2 + 16 t^2 - 1` with `|z|^2` and `t`
/// quadratic in `rho`.
fn ray_crossings(q: HPoint, omega: HPoint, rmax: f64, out: &mut Vec<f64>) {
    out.clear();
    let a0 = q.x * q.x + q.y * q.y;
    let a1 = 2.0 * (q.x * omega.x + q.y * omega.y);
    let a2 = omega.x * omega.x + omega.y * omega.y;
    let t0 = q.t;
    let t1 = 0.5 * (q.x * omega.y - q.y * omega.x);
    let t2 = omega.t;
    let c = [
        a0 * a0 + 16.0 * t0 * t0 - 1.0,
        2.0 * a0 * a1 + 32.0 * t0 * t1,
        a1 * a1 + 2.0 * a0 * a2 + 16.0 * (t1 * t1 + 2.0 * t0 * t2),
        2.0 * a1 * a2 + 32.0 * t1 * t2,
        a2 * a2 + 16.0 * t2 * t2,
    ];
    let p = |r: f64| (((c[4] * r + c[3]) * r + c[2]) * r + c[1]) * r + c[0];
    const STEPS: usize = 32;
    let (mut r0, mut p0) = (0.0, c[0]);
    for k in 1..=STEPS {
        let r1 = rmax * k as f64 / STEPS as f64;
        let p1 = p(r1);
        if (p0 < 0.0) != (p1 < 0.0) {
            // Illinois false position.
            let (mut lo, mut hi, mut flo, mut fhi) = (r0, r1, p0, p1);
            let mut side = 0;
            let mut mid = lo;
            for _ in 0..60 {
                mid = (lo * fhi - hi * flo) / (fhi - flo);
                let fm = p(mid);
                if fm == 0.0 || hi - lo < 1e-14 * rmax {
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                    if side == -1 {
                        fhi *= 0.5;
                    }
                    side = -1;
                } else {
                    hi = mid;
                    fhi = fm;
                    if side == 1 {
                        flo *= 0.5;
                    }
                    side = 1;
                }
            }
            out.push(mid);
        }
        r0 = r1;
        p0 = p1;
    }
}

/// Angular rule used for [`unit_ball_potential_direct`] in the table.
pub fn ball_potential_rule() -> AngularRule {
    AngularRule::new(64, 128)
}

/// `int_{B(0,1)} Gamma(x^{-1} q) dx` by polar coordinates around `q`: along
/// each ray `q . delta_rho(omega)` the integrand is `c rho / 4`, so only the
/// radii where the ray crosses the unit sphere are needed.
///
/// From `N(q) >= 1.5` on the cone of rays hitting the ball is narrow and a
/// product rule on the ball itself, where the integrand is smooth, is used.
pub fn unit_ball_potential_direct(q: HPoint, rule: &AngularRule) -> f64 {
    if koranyi(q) >= 1.5 {
        static FAR: OnceLock<BallRule> = OnceLock::new();
        let far = FAR.get_or_init(|| BallRule::new(10, 16, 32));
        return far
            .nodes(HPoint::ZERO, 1.0)
            .fold(0.0, |a, (x, w)| a + w * GAMMA_CONSTANT / koranyi(x.between(q)).powi(2));
    }
    let rmax = 1.0 + koranyi(q) + 1e-9;
    let inside_at_start = koranyi(q) < 1.0;
    let mut cross = Vec::with_capacity(4);
    let mut acc = 0.0;
    for (omega, w) in rule.dirs.iter().zip(&rule.weights) {
        ray_crossings(q, *omega, rmax, &mut cross);
        let mut inside = inside_at_start;
        let mut last = 0.0;
        let mut sum = 0.0;
        for &r in &cross {
            if inside {
                sum += r * r - last * last;
            }
            inside = !inside;
            last = r;
        }
        acc += w * sum;
    }
    acc * GAMMA_CONSTANT / 8.0
}

/// Values on the polar grid `q = delta_N(omega(theta, 0))`, `N = i h_N`,
/// `theta = j h_theta` in `[0, pi/2]`.
struct BallTable {
    values: Vec<f64>,
    nn: usize,
    nt: usize,
}

const TABLE_N_STEP: f64 = 1.0 / 24.0;
const TABLE_THETA_NODES: usize = 25;

fn table_theta_step() -> f64 {
    0.5 * PI / (TABLE_THETA_NODES - 1) as f64
}

fn ball_table() -> &'static BallTable {
    static TABLE: OnceLock<BallTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        use rayon::prelude::*;
        // The integrand is smooth in the direction for interior points.
        let (inner, outer) = (AngularRule::new(24, 48), ball_potential_rule());
        let nn = (BALL_POTENTIAL_RADIUS / TABLE_N_STEP).round() as usize + 1;
        let nt = TABLE_THETA_NODES;
        let values = (0..nn * nt)
            .into_par_iter()
            .map(|k| {
                let n = (k / nt) as f64 * TABLE_N_STEP;
                let th = (k % nt) as f64 * table_theta_step();
                let q = HPoint::new(n * th.cos().max(0.0).sqrt(), 0.0, n * n * th.sin() / 4.0);
                unit_ball_potential_direct(q, if n < 1.0 { &inner } else { &outer })
            })
            .collect();
        BallTable { values, nn, nt }
    })
}

/// Lagrange weights for the four nodes `i0 .. i0 + 4` at fractional index `x`.
fn lagrange4(x: f64, i0: usize) -> [f64; 4] {
    let mut w = [1.0; 4];
    for (i, wi) in w.iter_mut().enumerate() {
        for j in 0..4 {
            if j != i {
                *wi *= (x - (i0 + j) as f64) / (i as f64 - j as f64);
            }
        }
    }
    w
}

/// Start of a four-node stencil around `x` inside `[lo, hi]`.
fn stencil(x: f64, lo: usize, hi: usize) -> usize {
    let i = (x.floor() as isize - 1).max(lo as isize) as usize;
    i.min(hi - 3)
}

/// [`unit_ball_potential_direct`] interpolated from a polar table, to about
/// `1e-3` relative, and `1e-2` just outside the poles of the sphere. Rotations about the `t`-axis and `(x, y, t) -> (x, -y, -t)`
/// preserve the ball, so the table only spans `N` and `theta in [0, pi/2]`.
/// The second derivatives jump across the unit sphere, and stencils never
/// straddle it. Beyond the tabulated range it falls back to the direct sum.
pub fn unit_ball_potential(q: HPoint) -> f64 {
    let n = koranyi(q);
    let tab = ball_table();
    let fn_ = n / TABLE_N_STEP;
    if fn_ > (tab.nn - 1) as f64 {
        return unit_ball_potential_direct(q, &ball_potential_rule());
    }
    let a2 = q.x * q.x + q.y * q.y;
    let th = (4.0 * q.t.abs()).atan2(a2);
    let ft = th / table_theta_step();
    let one = (1.0 / TABLE_N_STEP).round() as usize;
    let (lo, hi) = if fn_ < one as f64 { (0, one) } else { (one, tab.nn - 1) };
    let i0 = stencil(fn_, lo, hi);
    let j0 = stencil(ft, 0, tab.nt - 1);
    let (wn, wt) = (lagrange4(fn_, i0), lagrange4(ft, j0));
    let mut acc = 0.0;
    for (di, wn) in wn.iter().enumerate() {
        for (dj, wt) in wt.iter().enumerate() {
            acc += wn * wt * tab.values[(i0 + di) * tab.nt + j0 + dj];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{apply_field_analytic, Field};
    use crate::quadrature::sphere_point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn words() -> Vec<OperatorWord> {
        let mut out = Vec::new();
        for side in [Side::Left, Side::Right] {
            for w in [vec![0], vec![1], vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]] {
                out.push(OperatorWord { letters: w, side });
            }
        }
        out
    }

    #[test]
    fn gamma_basics() {
        assert!(gamma(HPoint::ZERO).is_err());
        let p = HPoint::new(0.3, -0.2, 0.7);
        assert!((gamma(p.dilate(2.0)).unwrap() / gamma(p).unwrap() - 0.25).abs() < 1e-15);
        assert!((gamma(p.inv()).unwrap() - gamma(p).unwrap()).abs() < 1e-15);
        assert!(gamma_deriv(&OperatorWord::left(&[0]), HPoint::ZERO).is_err());
    }

    #[test]
    fn symbolic_matches_analytic_and_fd() {
        let p = HPoint::new(1.0, 1.0, 1.0);
        for w in words() {
            let sym = gamma_deriv(&w, p).unwrap();
            let ana = apply_field_analytic(&w.fields(), &GammaField, p).unwrap();
            let f = |q: &HPoint| gamma(*q).unwrap();
            let fd = apply_fields(&Heisenberg, &w.fields(), &f, &p, FdConfig::default()).unwrap();
            assert!((sym - ana).abs() <= 1e-12 * sym.abs().max(1e-3), "{w:?}: {sym} vs {ana}");
            assert!((sym - fd.value).abs() <= 1e-6 * sym.abs().max(1e-3), "{w:?}: {sym} vs {fd:?}");
        }
        // Longer words fall back to finite differences.
        let w3 = OperatorWord::left(&[0, 1, 0]);
        assert!(gamma_deriv(&w3, p).unwrap().is_finite());
    }

    #[test]
    fn derivative_decay_bounded_on_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sup = 0.0_f64;
        for _ in 0..10_000 {
            let q = sphere_point(rng.gen_range(-1.57..1.57), rng.gen_range(0.0..6.283));
            let r: f64 = rng.gen_range(0.1..10.0);
            let p = q.dilate(r);
            let v = gamma_deriv(&OperatorWord::left(&[0]), p).unwrap().abs() * r.powi(3);
            sup = sup.max(v);
        }
        // |A| <= N^3 gives |X Gamma| N^3 <= 2c.
        assert!(sup <= 2.0 * GAMMA_CONSTANT * (1.0 + 1e-12), "{sup}");
    }

    #[test]
    fn calibration_recovers_constant() {
        for bump in reference_bumps() {
            let cal = calibrate_constant(&bump, &SingularRule::default()).unwrap();
            assert!(cal.residual < 1e-6, "{cal:?}");
            assert!((cal.constant - GAMMA_CONSTANT).abs() < 1e-6);
        }
        // phi o delta_t is the bump of radius R / t.
        let b = GaugeBump::new(HPoint::ZERO, 0.5, 4);
        let cal = calibrate_constant(&b, &SingularRule::default()).unwrap();
        assert!((cal.constant - GAMMA_CONSTANT).abs() < 1e-6);
    }

    #[test]
    fn difference_bound() {
        let x = HPoint::new(1.0, 0.5, -0.2);
        assert_eq!(difference_bound_check(x, HPoint::ZERO).unwrap(), 0.0);
        assert!(difference_bound_check(x, x).is_err());
        let y = HPoint::new(0.1, -0.2, 0.01);
        let a = difference_bound_check(x, y).unwrap();
        let b = difference_bound_check(x.dilate(3.0), y.dilate(3.0)).unwrap();
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn mollifier() {
        let m = Mollifier::new(0.1).unwrap();
        assert!((m.mass - PI * PI / 40.0).abs() < 1e-10, "{}", m.mass);
        let p = HPoint::new(0.3, 0.2, -0.1);
        assert!((m.mollify(&|_| 1.0, p) - 1.0).abs() < 1e-12);
        // Symmetric profile: linear functions are reproduced to all orders.
        for t in [0.1, 0.05] {
            let v = mollify(&|q| 2.0 * q.x - q.y, t, p).unwrap();
            assert!((v - (2.0 * p.x - p.y)).abs() < 1e-12);
        }
        assert_eq!(m.eval(HPoint::new(0.1, 0.0, 0.0)), 0.0);
        assert!(m.eval(HPoint::new(0.099, 0.0, 0.0)) > 0.0);
    }

    #[test]
    fn blob_is_a_potential() {
        let b = Blob::new(0.5).unwrap();
        // Unit mass.
        let rule = BallRule::new(12, 16, 32);
        let mass: f64 = rule.nodes(HPoint::ZERO, 0.5).map(|(y, w)| w * b.density(y)).sum();
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
        // Continuity across the boundary and agreement with Gamma outside.
        let q = sphere_point(0.4, 1.0);
        assert!((b.potential(q.dilate(0.5 * (1.0 - 1e-12))) - b.potential(q.dilate(0.5))).abs() < 1e-9);
        assert!((b.potential(q.dilate(0.9)) - gamma(q.dilate(0.9)).unwrap()).abs() < 1e-15);
        // -L g_h = beta_h inside, by finite differences.
        let p = q.dilate(0.3);
        let f = |y: &HPoint| b.potential(*y);
        let lap = crate::group::sub_laplacian(&Heisenberg, &f, &p).unwrap();
        assert!((lap + b.density(p)).abs() < 1e-5 * b.density(p), "{lap} {}", b.density(p));
        // The gradient matches finite differences.
        let gx = apply_fields(&Heisenberg, &[Field::left(0)], &f, &p, FdConfig::default()).unwrap();
        assert!((gx.value - b.gradient(p)[0]).abs() < 1e-7);
    }

    #[test]
    fn convolution_modes() {
        let x = HPoint::new(0.4, 0.1, -0.3);
        let zero = TileMeasure::zero(2, 1.0);
        for mode in [MeasureMode::Atomic, MeasureMode::Smoothed] {
            assert_eq!(convolve_measure(&zero, &OperatorWord::default(), x, mode).unwrap().value, 0.0);
        }
        // Far from the blobs the smoothed and atomic potentials coincide.
        let mut atoms = BTreeMap::new();
        atoms.insert("00".parse().unwrap(), 0.7);
        let mu = TileMeasure::new(2, 1.0, atoms).unwrap();
        let far = HPoint::new(3.0, -1.0, 2.0);
        let w = OperatorWord::left(&[1]);
        let a = convolve_measure(&mu, &w, far, MeasureMode::Atomic).unwrap();
        let s = convolve_measure(&mu, &w, far, MeasureMode::Smoothed).unwrap();
        assert!((a.value - s.value).abs() < 1e-14);
    }

    #[test]
    fn uniform_tile_matches_grid_oracle() {
        let word: TileWord = "36".parse().unwrap();
        let mut atoms = BTreeMap::new();
        atoms.insert(word.clone(), 1.0);
        let mu = TileMeasure::new(2, 0.0, atoms).unwrap();
        let x = HPoint::new(2.2, -1.4, 1.1);
        let v = convolve_measure(&mu, &OperatorWord::default(), x, MeasureMode::UniformOnTile { max_extra_depth: 4 })
            .unwrap();
        // Midpoint grid over f_w(box), keeping nodes located in T_w.
        let (lo, hi) = crate::tiling::BOUNDING_BOX;
        let n = 48;
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let u = HPoint::new(
                        lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / n as f64,
                        lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / n as f64,
                        lo[2] + (hi[2] - lo[2]) * (k as f64 + 0.5) / n as f64,
                    );
                    let y = word.map(u);
                    if crate::tiling::locate(y, 16).is_some_and(|f| word.is_prefix_of(&f)) {
                        sum += gamma(y.between(x)).unwrap();
                        count += 1;
                    }
                }
            }
        }
        let oracle = sum / count as f64;
        assert!((v.value - oracle).abs() < 1e-4, "{v:?} vs {oracle}");
        assert!(v.error < 1e-4);
    }

    #[test]
    fn unit_ball_potential_oracles() {
        // Center: 2 pi^2 int_0^1 c rho / 4 = pi^2 c / 4.
        let u0 = unit_ball_potential(HPoint::ZERO);
        assert!((u0 - PI * PI * GAMMA_CONSTANT / 4.0).abs() < 1e-6 * u0, "{u0}");
        // Midpoint grid over the bounding box of the ball, at an exterior point.
        let q = HPoint::new(1.3, 0.0, 0.2);
        let n = 120;
        let (hx, ht) = (2.0 / n as f64, 0.5 / n as f64);
        let mut grid = 0.0;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let x = HPoint::new(-1.0 + (i as f64 + 0.5) * hx, -1.0 + (j as f64 + 0.5) * hx, -0.25 + (l as f64 + 0.5) * ht);
                    if koranyi(x) < 1.0 {
                        grid += gamma(x.between(q)).unwrap();
                    }
                }
            }
        }
        grid *= hx * hx * ht;
        let u = unit_ball_potential(q);
        assert!((u - grid).abs() < 3e-3 * grid, "{u} vs {grid}");
    }

    #[test]
    fn unit_ball_table_matches_direct() {
        let rule = AngularRule::new(128, 256);
        for &(x, y, t) in &[(0.3, 0.1, 0.05), (0.7, -0.4, 0.2), (1.05, 0.2, -0.1), (0.1, 0.0, 0.3), (0.0, 0.0, 0.26), (0.9, 0.0, 0.01), (1.45, 0.3, 0.2), (2.2, 1.0, 1.4)] {
            let q = HPoint::new(x, y, t);
            let (a, b) = (unit_ball_potential(q), unit_ball_potential_direct(q, &rule));
            // Rays from points just outside the poles graze the sphere and
            // the angular sums converge slowly there.
            let tol = if q.x.hypot(q.y) < 0.2 && koranyi(q) < 1.1 { 1e-2 } else { 1e-3 };
            assert!((a - b).abs() < tol * b, "{q:?}: {a} vs {b}");
        }
    }

    #[test]
    fn blob_defect_is_exact() {
        let blob = Blob::new(0.3).unwrap();
        let (nodes, weights) = crate::quadrature::gauss_legendre(40);
        let dir = crate::quadrature::sphere_point(0.4, 1.1);
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(&weights) {
            let rho = 0.15 * (x + 1.0);
            let p = HPoint::new(rho * dir.x, rho * dir.y, rho * rho * dir.t);
            acc += 0.15 * w * (blob.potential(p) - GAMMA_CONSTANT / (rho * rho)) * rho.powi(3) / 4.0;
        }
        acc *= 2.0 * PI * PI;
        assert!((acc - blob.defect()).abs() < 1e-10, "{acc} vs {}", blob.defect());
    }
}
