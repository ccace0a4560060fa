use super::{Field, Group, HPoint, Heisenberg, OperatorWord, Smooth};
use crate::error::{Error, Result};

/// Finite-difference settings for [`apply_field`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdConfig {
    /// Step for one- and two-letter words is `base_step * (1 + |p|_inf)`.
    pub base_step: f64,
    pub richardson: bool,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            base_step: 1e-4,
            richardson: true,
        }
    }
}

/// A derivative estimate with a truncation/roundoff error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdEstimate {
    pub value: f64,
    pub error: f64,
}

fn mixed_difference<G: Group>(
    group: &G,
    fields: &[Field],
    f: &dyn Fn(&G::Point) -> f64,
    p: &G::Point,
    h: f64,
) -> Result<(f64, f64)> {
    let n = fields.len();
    let mut acc = 0.0;
    let mut mag = 0.0_f64;
    for mask in 0..(1u32 << n) {
        let mut q = p.clone();
        let mut sign = 1.0;
        for (bit, &field) in fields.iter().enumerate() {
            let s = if mask >> bit & 1 == 1 {
                sign = -sign;
                -h
            } else {
                h
            };
            q = group.flow(&q, field, s);
        }
        let v = f(&q);
        if !v.is_finite() {
            return Err(Error::NonFiniteField);
        }
        mag = mag.max(v.abs());
        acc += sign * v;
    }
    let scale = (2.0 * h).powi(n as i32);
    Ok((acc / scale, mag / scale))
}

/// `X_{a_1} ... X_{a_l} f(p)` by nested central differences along group
/// flows, with one Richardson extrapolation step.
///
/// Fields may mix left and right sides; each letter flows from the side its
/// field says.
pub fn apply_fields<G: Group>(
    group: &G,
    fields: &[Field],
    f: &dyn Fn(&G::Point) -> f64,
    p: &G::Point,
    cfg: FdConfig,
) -> Result<FdEstimate> {
    group.check_point(p)?;
    if fields.iter().any(|fl| fl.index >= group.horizontal_dim()) {
        return Err(Error::Precondition("field index outside the first layer".into()));
    }
    let v0 = f(p);
    if !v0.is_finite() {
        return Err(Error::NonFiniteField);
    }
    if fields.is_empty() {
        return Ok(FdEstimate {
            value: v0,
            error: 0.0,
        });
    }
    let n = fields.len();
    // Higher orders amplify roundoff as h^-n; widen the step accordingly.
    let widen = if n > 2 { 10f64.powf((n - 2) as f64 * 0.5) } else { 1.0 };
    let h = cfg.base_step * widen * (1.0 + group.coordinate_scale(p));
    let (d1, mag) = mixed_difference(group, fields, f, p, h)?;
    let roundoff = 4.0 * f64::EPSILON * mag * (1u32 << n) as f64;
    if !cfg.richardson {
        return Ok(FdEstimate {
            value: d1,
            error: roundoff,
        });
    }
    let (d2, mag2) = mixed_difference(group, fields, f, p, 0.5 * h)?;
    let value = (4.0 * d2 - d1) / 3.0;
    let roundoff = roundoff.max(4.0 * f64::EPSILON * mag2 * (1u32 << n) as f64);
    Ok(FdEstimate {
        value,
        error: (value - d2).abs() + roundoff,
    })
}

/// `X_w f(p)` for an operator word, by finite differences.
pub fn apply_field<G: Group>(
    group: &G,
    w: &OperatorWord,
    f: &dyn Fn(&G::Point) -> f64,
    p: &G::Point,
) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::Precondition("operator word must be nonempty".into()));
    }
    apply_fields(group, &w.fields(), f, p, FdConfig::default()).map(|e| e.value)
}

pub fn horizontal_gradient<G: Group>(
    group: &G,
    f: &dyn Fn(&G::Point) -> f64,
    p: &G::Point,
) -> Result<Vec<f64>> {
    (0..group.horizontal_dim())
        .map(|i| apply_fields(group, &[Field::left(i)], f, p, FdConfig::default()).map(|e| e.value))
        .collect()
}

pub fn sub_laplacian<G: Group>(
    group: &G,
    f: &dyn Fn(&G::Point) -> f64,
    p: &G::Point,
) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..group.horizontal_dim() {
        let fl = Field::left(i);
        acc += apply_fields(group, &[fl, fl], f, p, FdConfig::default())?.value;
    }
    Ok(acc)
}

/// `X_w f(p)` from the closed-form gradient and Hessian on `H^1`:
/// `X_a X_b f = A_a^T H A_b + A_a . (d A_b) grad f`. Words of length at most
/// two; sides may be mixed.
pub fn apply_field_analytic(fields: &[Field], f: &dyn Smooth, p: HPoint) -> Result<f64> {
    if fields.iter().any(|fl| fl.index > 1) {
        return Err(Error::Precondition("H^1 has two horizontal fields".into()));
    }
    let out = match fields {
        [] => f.value(p),
        [a] => {
            let c = Heisenberg::field_coefficients(*a, p);
            let g = f.gradient(p);
            dot(&c, &g)
        }
        [a, b] => {
            let ca = Heisenberg::field_coefficients(*a, p);
            let cb = Heisenberg::field_coefficients(*b, p);
            let jb = Heisenberg::field_coefficient_jacobian(*b);
            let g = f.gradient(p);
            let h = f.hessian(p);
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += ca[i] * cb[j] * h[i][j] + ca[i] * jb[i][j] * g[j];
                }
            }
            s
        }
        _ => {
            return Err(Error::Precondition(format!(
                "analytic path supports words of length <= 2, got {}",
                fields.len()
            )))
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFiniteField);
    }
    Ok(out)
}

pub fn horizontal_gradient_analytic(f: &dyn Smooth, p: HPoint) -> [f64; 2] {
    let g = f.gradient(p);
    [
        dot(&Heisenberg::field_coefficients(Field::left(0), p), &g),
        dot(&Heisenberg::field_coefficients(Field::left(1), p), &g),
    ]
}

pub fn sub_laplacian_analytic(f: &dyn Smooth, p: HPoint) -> f64 {
    let x = Field::left(0);
    let y = Field::left(1);
    apply_field_analytic(&[x, x], f, p).unwrap_or(f64::NAN)
        + apply_field_analytic(&[y, y], f, p).unwrap_or(f64::NAN)
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
