//! Numerical checks of the calculus identities behind the potential theory:
//! the Leibniz rule for composite fields, the left/right switch for kernel
//! derivatives, the integration-by-parts formula against `Y Gamma`, the
//! distributional representation of `phi L f` and the inversion `-L(h) * Gamma = h`.
//!
//! Every check reports both sides, the residual and the tolerance it was
//! held to. Quadrature-based tolerances come from the integrator's own error
//! estimate, since the achievable accuracy depends on where `x` sits
//! relative to the supports.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{
    apply_field_analytic, apply_fields, harmonic_quadratic, horizontal_square, sub_laplacian_analytic,
    Constant, Coordinate, FdConfig, Field, GaugeBump, HPoint, Heisenberg, OperatorWord, Product, Side,
    Smooth, Sum,
};
use crate::kernel::{gamma, gamma_deriv, mollify, GammaField};
use crate::metrics::koranyi;
use crate::quadrature::{gauge_sphere_crossings, BallRule, integrate_singular, Quadrature, Radial, SingularRule};

/// Absolute tolerance for the switch-variables identity.
pub const SWITCH_TOLERANCE: f64 = 1e-6;

/// Roundoff allowance added to quadrature tolerances, relative to the
/// integrated magnitude.
const ROUNDOFF: f64 = 1e-12;

/// Result of one identity check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub identity: String,
    pub case: String,
    pub point: [f64; 3],
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(identity: &str, case: impl Into<String>, p: HPoint, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let residual = (lhs - rhs).abs();
        Check {
            identity: identity.into(),
            case: case.into(),
            point: p.to_array(),
            lhs,
            rhs,
            residual,
            tolerance,
            passed: residual <= tolerance,
        }
    }
}

fn quad_tolerance(parts: &[&Quadrature]) -> f64 {
    parts.iter().map(|q| q.error + ROUNDOFF * q.magnitude).sum()
}

// ---------------------------------------------------------------------------
// Product rule.

/// The `2^l` ways of splitting `X_a` between two factors of a product.
///
/// Bit `i` of `beta` sends letter `i` to the first factor, so the pair is
/// `(X_a^beta, *X_a^beta)`; both keep the letters in their original order.
pub fn product_rule_terms(alpha: &[usize]) -> Vec<(u32, Vec<usize>, Vec<usize>)> {
    (0..1u32 << alpha.len())
        .map(|beta| {
            let (mut first, mut second) = (Vec::new(), Vec::new());
            for (i, &a) in alpha.iter().enumerate() {
                if beta >> i & 1 == 1 {
                    first.push(a);
                } else {
                    second.push(a);
                }
            }
            (beta, first, second)
        })
        .collect()
}

fn analytic(letters: &[usize], f: &dyn Smooth, p: HPoint) -> Result<f64> {
    let fields: Vec<Field> = letters.iter().map(|&i| Field::left(i)).collect();
    apply_field_analytic(&fields, f, p)
}

/// `X_a(psi phi)(p)` by finite differences against the expanded sum.
/// Tolerance is ten times the finite-difference error estimate plus a
/// roundoff floor.
pub fn check_product_rule(psi: &dyn Smooth, phi: &dyn Smooth, alpha: &[usize], p: HPoint) -> Result<Check> {
    if alpha.len() > 2 {
        return Err(Error::Precondition("product rule is checked for |alpha| <= 2".into()));
    }
    let fields: Vec<Field> = alpha.iter().map(|&i| Field::left(i)).collect();
    let prod = |q: &HPoint| psi.value(*q) * phi.value(*q);
    let lhs = apply_fields(&Heisenberg, &fields, &prod, &p, FdConfig::default())?;
    let mut rhs = 0.0;
    for (_, first, second) in product_rule_terms(alpha) {
        rhs += analytic(&first, psi, p)? * analytic(&second, phi, p)?;
    }
    let tol = 10.0 * lhs.error + 1e-9 * lhs.value.abs().max(1.0);
    Ok(Check::new("product_rule", format!("alpha={alpha:?}"), p, lhs.value, rhs, tol))
}

// ---------------------------------------------------------------------------
// Switch of variables.

/// `(Y Gamma)(y^{-1} x) = -(Y~ Gamma~)(x^{-1} y)` with `Gamma~(p) = Gamma(p^{-1})`
/// and `Y~` the field of the opposite side. The left side uses the closed
/// form, the right side finite differences of `Gamma~`.
pub fn check_switch_variables(word: &OperatorWord, x: HPoint, y: HPoint) -> Result<Check> {
    if word.degree() != 1 {
        return Err(Error::Precondition("switch of variables takes a single field".into()));
    }
    if x == y {
        return Err(Error::Singularity);
    }
    let lhs = gamma_deriv(word, y.inv() * x)?;
    let flipped = Field {
        index: word.letters[0],
        side: match word.side {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        },
    };
    let tilde = |q: &HPoint| gamma(q.inv()).unwrap_or(f64::NAN);
    let fd = apply_fields(&Heisenberg, &[flipped], &tilde, &(x.inv() * y), FdConfig::default())?;
    Ok(Check::new("switch_variables", format!("{word:?}"), x, lhs, -fd.value, SWITCH_TOLERANCE))
}

// ---------------------------------------------------------------------------
// Singular integrals around a point.

fn around(x: HPoint, bump: &GaugeBump, rule: &SingularRule, f: &(dyn Fn(HPoint, f64, HPoint) -> f64 + Sync)) -> Result<Quadrature> {
    let rmax = koranyi(x.between(bump.center)) + bump.radius;
    let breaks = |omega: HPoint| gauge_sphere_crossings(bump.center, bump.radius, x, omega, rmax);
    let radial = Radial {
        center: x,
        rmax,
        breaks: Some(&breaks),
    };
    integrate_singular(&radial, rule, f)
}

/// The two integrals on the right of the integration-by-parts formula for
/// a function known only by its values.
fn ibp_rhs(
    g: &(dyn Fn(HPoint) -> f64 + Sync),
    psi: &GaugeBump,
    xi: usize,
    yj: usize,
    x: HPoint,
    rule: &SingularRule,
) -> Result<(Quadrature, Quadrature)> {
    let gx = g(x);
    let xpsi = OperatorWord::left(&[xi]);
    let yword = OperatorWord::left(&[yj]);
    let mixed = [Field::left(xi), Field::right(yj)];
    let first = around(x, psi, rule, &|y, rho, omega| {
        let w = psi.value(y);
        if w == 0.0 {
            return 0.0;
        }
        let k = apply_field_analytic(&mixed, &GammaField, omega.dilate(rho)).unwrap_or(f64::NAN);
        (g(y) - gx) * w * k
    })?;
    let second = around(x, psi, rule, &|y, rho, omega| {
        let dpsi = analytic(&xpsi.letters, psi, y).unwrap_or(f64::NAN);
        if dpsi == 0.0 {
            return 0.0;
        }
        let k = gamma_deriv(&yword, omega.dilate(rho).inv()).unwrap_or(f64::NAN);
        (g(y) - gx) * dpsi * k
    })?;
    Ok((first, second))
}

/// `int (X g) psi (Y Gamma)(y^{-1} x) dy` against
/// `int (g(y) - g(x)) psi(y) (X Y~ Gamma~)(x^{-1} y) dy - int (g(y) - g(x)) (X psi)(y) (Y Gamma)(y^{-1} x) dy`.
/// `xi` and `yj` index the horizontal fields.
pub fn check_ibp(g: &dyn Smooth, psi: &GaugeBump, xi: usize, yj: usize, x: HPoint, rule: &SingularRule) -> Result<Check> {
    let yword = OperatorWord::left(&[yj]);
    let lhs = around(x, psi, rule, &|y, rho, omega| {
        let w = psi.value(y);
        if w == 0.0 {
            return 0.0;
        }
        let dg = analytic(&[xi], g, y).unwrap_or(f64::NAN);
        let k = gamma_deriv(&yword, omega.dilate(rho).inv()).unwrap_or(f64::NAN);
        dg * w * k
    })?;
    let (first, second) = ibp_rhs(&|p| g.value(p), psi, xi, yj, x, rule)?;
    let rhs = first.value - second.value;
    let tol = quad_tolerance(&[&lhs, &first, &second]);
    Ok(Check::new("ibp", format!("X{} Y{}", xi + 1, yj + 1), x, lhs.value, rhs, tol))
}

/// Right-hand side of the integration-by-parts formula for `g_t = zeta_t * g`
/// as `t` shrinks, against the same expression for `g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifiedTrend {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    pub reference: f64,
    pub gaps: Vec<f64>,
    pub monotone: bool,
}

pub fn ibp_mollified_trend(
    g: &(dyn Fn(HPoint) -> f64 + Sync),
    psi: &GaugeBump,
    xi: usize,
    yj: usize,
    x: HPoint,
    ts: &[f64],
    rule: &SingularRule,
) -> Result<MollifiedTrend> {
    let rhs = |h: &(dyn Fn(HPoint) -> f64 + Sync)| -> Result<f64> {
        let (a, b) = ibp_rhs(h, psi, xi, yj, x, rule)?;
        Ok(a.value - b.value)
    };
    let reference = rhs(g)?;
    let values = ts
        .par_iter()
        .map(|&t| rhs(&|p| mollify(g, t, p).unwrap_or(f64::NAN)))
        .collect::<Result<Vec<f64>>>()?;
    let gaps: Vec<f64> = values.iter().map(|v| (v - reference).abs()).collect();
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    Ok(MollifiedTrend {
        t: ts.to_vec(),
        values,
        reference,
        gaps,
        monotone,
    })
}

// ---------------------------------------------------------------------------
// Distributional formula and inversion.

/// `(phi L f) * Gamma (x)` against `-f phi (x) - 2 sum_i X_i(f X_i phi) * Gamma (x) + (f L phi) * Gamma (x)`,
/// with `h * Gamma (x) = int h(y) Gamma(y^{-1} x) dy`.
pub fn check_dist_form_lip(f: &dyn Smooth, phi: &GaugeBump, x: HPoint, rule: &SingularRule) -> Result<Check> {
    let kernel = |rho: f64| crate::kernel::GAMMA_CONSTANT * rho.powi(-2);
    let lhs = around(x, phi, rule, &|y, rho, _| {
        let w = phi.value(y);
        if w == 0.0 {
            return 0.0;
        }
        w * sub_laplacian_analytic(f, y) * kernel(rho)
    })?;
    let div = around(x, phi, rule, &|y, rho, _| {
        let mut s = 0.0;
        for i in 0..2 {
            let fi = analytic(&[i], f, y).unwrap_or(f64::NAN);
            let pi = analytic(&[i], phi, y).unwrap_or(f64::NAN);
            let pii = analytic(&[i, i], phi, y).unwrap_or(f64::NAN);
            s += fi * pi + f.value(y) * pii;
        }
        s * kernel(rho)
    })?;
    let lap = around(x, phi, rule, &|y, rho, _| f.value(y) * sub_laplacian_analytic(phi, y) * kernel(rho))?;
    let rhs = -f.value(x) * phi.value(x) - 2.0 * div.value + lap.value;
    let tol = quad_tolerance(&[&lhs, &div, &lap]) + 2.0 * div.error;
    Ok(Check::new("dist_form_lip", "", x, lhs.value, rhs, tol))
}

/// A smooth integrand over `B(c, r)` by two product rules.
fn regular(bump: &GaugeBump, f: &(dyn Fn(HPoint) -> f64 + Sync)) -> Quadrature {
    let run = |rule: BallRule| -> (f64, f64) {
        rule.nodes(bump.center, bump.radius)
            .map(|(y, w)| {
                let v = f(y);
                (w * v, w * v.abs())
            })
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
    };
    let (fine, magnitude) = run(BallRule::new(24, 32, 64));
    let (coarse, _) = run(BallRule::new(16, 24, 48));
    Quadrature {
        value: fine,
        error: (fine - coarse).abs(),
        magnitude,
    }
}

/// `-L(psi f) * Gamma (x)` against `psi f (x)`. Points well outside the
/// support see a smooth integrand and use a regular rule over it.
pub fn check_inversion(psi: &GaugeBump, f: &dyn Smooth, x: HPoint, rule: &SingularRule) -> Result<Check> {
    let prod = Product(*psi, f);
    let lhs = if koranyi(x.between(psi.center)) > 1.5 * psi.radius {
        regular(psi, &|y| -sub_laplacian_analytic(&prod, y) * gamma(y.inv() * x).unwrap_or(f64::NAN))
    } else {
        around(x, psi, rule, &|y, rho, _| {
            -sub_laplacian_analytic(&prod, y) * crate::kernel::GAMMA_CONSTANT * rho.powi(-2)
        })?
    };
    if !lhs.value.is_finite() {
        return Err(Error::QuadratureFailure { residual: lhs.value });
    }
    let rhs = psi.value(x) * f.value(x);
    let tol = quad_tolerance(&[&lhs]);
    Ok(Check::new("inversion", "", x, lhs.value, rhs, tol))
}

// ---------------------------------------------------------------------------
// Suites.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Ibp,
    Identities,
    All,
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ibp" => Ok(Suite::Ibp),
            "identities" => Ok(Suite::Identities),
            "all" => Ok(Suite::All),
            _ => Err(Error::Config(format!("unknown verification suite `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suite: Suite,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub trend: Option<MollifiedTrend>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn random_point(rng: &mut ChaCha8Rng, scale: f64) -> HPoint {
    loop {
        let p = HPoint::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5));
        let n = koranyi(p);
        if n < 1.0 && n > 0.05 {
            return p.dilate(scale);
        }
    }
}

/// Sample points for the quadrature checks: inside the bump, near its
/// edge and (for inversion) outside it.
fn quadrature_points(rng: &mut ChaCha8Rng) -> Vec<HPoint> {
    vec![HPoint::ZERO, random_point(rng, 0.5), random_point(rng, 0.8)]
}

fn identities(seed: u64, rule: &SingularRule) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bump = GaugeBump::unit();
    let square = horizontal_square();
    let harmonic = harmonic_quadratic();
    let mut checks = Vec::new();

    let prod_points: Vec<HPoint> = (0..3).map(|_| random_point(&mut rng, 0.9)).collect();
    checks.push(check_product_rule(&Coordinate(0), &Coordinate(1), &[0, 1], prod_points[0])?);
    for &p in &prod_points {
        checks.push(check_product_rule(&Constant(1.0), &square, &[1, 0], p)?);
        for alpha in [&[0usize][..], &[1, 1], &[0, 1], &[1, 0]] {
            checks.push(check_product_rule(&bump, &harmonic, alpha, p)?);
        }
    }

    for _ in 0..4 {
        let (x, y) = (random_point(&mut rng, 1.0), random_point(&mut rng, 1.0));
        if koranyi(x.between(y)) < 0.05 {
            continue;
        }
        for j in 0..2 {
            checks.push(check_switch_variables(&OperatorWord::left(&[j]), x, y)?);
            checks.push(check_switch_variables(&OperatorWord::right(&[j]), x, y)?);
        }
    }

    let pts = quadrature_points(&mut rng);
    let quad: Vec<Check> = pts
        .par_iter()
        .map(|&x| -> Result<Vec<Check>> {
            let mut h = check_dist_form_lip(&harmonic, &bump, x, rule)?;
            h.case = "harmonic".into();
            let mut s = check_dist_form_lip(&square, &bump, x, rule)?;
            s.case = "horizontal_square".into();
            let mut one = check_inversion(&bump, &Constant(1.0), x, rule)?;
            one.case = "f=1".into();
            let mut sq = check_inversion(&bump, &square, x, rule)?;
            sq.case = "f=x^2+y^2".into();
            Ok(vec![h, s, one, sq])
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    checks.extend(quad);
    let mut far = check_inversion(&bump, &Constant(1.0), HPoint::new(3.0, -1.0, 2.0), rule)?;
    far.case = "f=1, outside support".into();
    checks.push(far);
    Ok(checks)
}

fn ibp_checks(seed: u64, rule: &SingularRule) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1b9);
    let bump = GaugeBump::unit();
    let pts = quadrature_points(&mut rng);
    let g = Product(Coordinate(0), Sum(Constant(1.0), Coordinate(1)));
    pts.par_iter()
        .map(|&x| -> Result<Vec<Check>> {
            let mut out = Vec::new();
            let mut a = check_ibp(&Coordinate(0), &bump, 0, 1, x, rule)?;
            a.case = format!("g=x, {}", a.case);
            out.push(a);
            let mut b = check_ibp(&g, &bump, 1, 0, x, rule)?;
            b.case = format!("g=x(1+y), {}", b.case);
            out.push(b);
            let mut c = check_ibp(&horizontal_square(), &bump, 0, 0, x, rule)?;
            c.case = format!("g=x^2+y^2, {}", c.case);
            out.push(c);
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

/// Mollification scales for the trend check.
pub const TREND_SCALES: [f64; 3] = [0.2, 0.1, 0.05];

/// Singular rule for the mollified trend: each integrand value costs one
/// mollification.
pub fn trend_rule() -> SingularRule {
    SingularRule {
        n_rho: 6,
        n_theta: 8,
        n_phi: 16,
        threshold: 1e-7,
        max_annuli: 40,
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<VerificationReport> {
    let rule = SingularRule::default();
    let mut checks = Vec::new();
    let mut trend = None;
    if matches!(suite, Suite::Identities | Suite::All) {
        checks.extend(identities(seed, &rule)?);
    }
    if matches!(suite, Suite::Ibp | Suite::All) {
        checks.extend(ibp_checks(seed, &rule)?);
        let gauge = |p: HPoint| koranyi(p);
        let x = HPoint::new(0.2, -0.1, 0.05);
        trend = Some(ibp_mollified_trend(&gauge, &GaugeBump::unit(), 0, 1, x, &TREND_SCALES, &trend_rule())?);
    }
    let passed = checks.iter().all(|c| c.passed) && trend.as_ref().is_none_or(|t| t.monotone);
    Ok(VerificationReport {
        suite,
        seed,
        checks,
        trend,
        passed,
    })
}
