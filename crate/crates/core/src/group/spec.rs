use std::fmt::Debug;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use super::{Field, Group, Side};
use crate::error::{Error, Result};

/// Exact coefficient type for structure constants.
pub type Rational = Ratio<i64>;

/// One output term `c * e_k` of a bracket (1-based `k`, rational `c` as text).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BracketTerm {
    pub k: usize,
    pub c: String,
}

/// `[e_i, e_j] = sum c_k e_k`, 1-based indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub i: usize,
    pub j: usize,
    pub out: Vec<BracketTerm>,
}

/// On-disk form of a group presentation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpecDocument {
    pub layers: Vec<usize>,
    #[serde(default)]
    pub brackets: Vec<Bracket>,
}

/// Scalars the BCH evaluator can run over: `f64` for evaluation, `Rational`
/// for exact checks.
pub trait Coefficient:
    Clone
    + Debug
    + PartialEq
    + Zero
    + One
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Neg<Output = Self>
{
    fn from_rational(r: &Rational) -> Self;
}

impl Coefficient for f64 {
    fn from_rational(r: &Rational) -> Self {
        *r.numer() as f64 / *r.denom() as f64
    }
}

impl Coefficient for Rational {
    fn from_rational(r: &Rational) -> Self {
        *r
    }
}

/// A stratified nilpotent Lie algebra given by its layer dimensions and
/// structure constants in a graded basis.
///
/// Basis vectors are ordered layer by layer; the group is identified with the
/// algebra through the exponential map, so points are coordinate vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSpec {
    layer_dims: Vec<usize>,
    weights: Vec<u32>,
    /// Nonzero `(i, j, k, c)` with `[e_i, e_j] = c e_k`, both orders stored.
    terms: Vec<(usize, usize, usize, Rational)>,
    terms_f64: Vec<(usize, usize, usize, f64)>,
}

/// A point in exponential coordinates together with the layer weight of each
/// coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPoint {
    pub coords: Vec<f64>,
    pub weights: Vec<u32>,
}

impl GroupPoint {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

pub(crate) fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::InvalidGroup(format!("cannot parse coefficient {s:?}"));
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((int, frac)) = s.split_once('.') {
        if s.contains('/') || frac.is_empty() && int.is_empty() {
            return Err(bad());
        }
        let neg = int.starts_with('-');
        let digits = format!("{}{}", int.trim_start_matches(['-', '+']), frac);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 18 {
            return Err(bad());
        }
        let numer: i64 = digits.parse().map_err(|_| bad())?;
        let denom = 10_i64.checked_pow(frac.len() as u32).ok_or_else(bad)?;
        let r = Rational::new(numer, denom);
        return Ok(if neg { -r } else { r });
    }
    let r = Rational::from_str(s).map_err(|_| bad())?;
    Ok(r)
}

impl GroupSpec {
    /// Builds and validates a presentation. `brackets` contains
    /// `(i, j, k, c)` with 0-based indices meaning `[e_i, e_j] += c e_k`.
    pub fn new(layer_dims: Vec<usize>, brackets: &[(usize, usize, usize, Rational)]) -> Result<Self> {
        if layer_dims.is_empty() || layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGroup("layer dimensions must be positive".into()));
        }
        let weights: Vec<u32> = layer_dims
            .iter()
            .enumerate()
            .flat_map(|(layer, &d)| std::iter::repeat(layer as u32 + 1).take(d))
            .collect();
        let n = weights.len();
        let mut table = vec![Rational::zero(); n * n * n];
        let mut given = vec![false; n * n];
        let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;

        let mut grouped: Vec<(usize, usize)> = Vec::new();
        for &(i, j, k, _) in brackets {
            if i >= n || j >= n || k >= n {
                return Err(Error::InvalidGroup(format!(
                    "bracket index out of range in [e{}, e{}] -> e{}",
                    i + 1,
                    j + 1,
                    k + 1
                )));
            }
            if i == j {
                return Err(Error::InvalidGroup(format!("[e{0}, e{0}] must vanish", i + 1)));
            }
            if !grouped.contains(&(i, j)) {
                grouped.push((i, j));
            }
        }
        for &(i, j) in &grouped {
            if given[j * n + i] {
                // Both orders supplied: they must be negatives of each other.
                for k in 0..n {
                    let c: Rational = brackets
                        .iter()
                        .filter(|b| b.0 == i && b.1 == j && b.2 == k)
                        .map(|b| b.3)
                        .sum();
                    if c != -table[idx(j, i, k)] {
                        return Err(Error::InvalidGroup(format!(
                            "[e{}, e{}] and [e{}, e{}] are not antisymmetric",
                            i + 1,
                            j + 1,
                            j + 1,
                            i + 1
                        )));
                    }
                }
                continue;
            }
            given[i * n + j] = true;
            for b in brackets.iter().filter(|b| b.0 == i && b.1 == j) {
                table[idx(i, j, b.2)] += b.3;
                table[idx(j, i, b.2)] -= b.3;
            }
        }

        let mut terms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let c = table[idx(i, j, k)];
                    if !c.is_zero() {
                        terms.push((i, j, k, c));
                    }
                }
            }
        }
        let terms_f64 = terms
            .iter()
            .map(|&(i, j, k, c)| (i, j, k, f64::from_rational(&c)))
            .collect();
        let spec = GroupSpec {
            layer_dims,
            weights,
            terms,
            terms_f64,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_document(doc: &GroupSpecDocument) -> Result<Self> {
        let mut brackets = Vec::new();
        for b in &doc.brackets {
            if b.i == 0 || b.j == 0 {
                return Err(Error::InvalidGroup("bracket indices are 1-based".into()));
            }
            for t in &b.out {
                if t.k == 0 {
                    return Err(Error::InvalidGroup("bracket indices are 1-based".into()));
                }
                brackets.push((b.i - 1, b.j - 1, t.k - 1, parse_rational(&t.c)?));
            }
        }
        GroupSpec::new(doc.layers.clone(), &brackets)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GroupSpecDocument =
            serde_json::from_str(text).map_err(|e| Error::InvalidGroup(e.to_string()))?;
        GroupSpec::from_document(&doc)
    }

    pub fn to_document(&self) -> GroupSpecDocument {
        let mut brackets: Vec<Bracket> = Vec::new();
        for &(i, j, k, c) in self.terms.iter().filter(|t| t.0 < t.1) {
            let term = BracketTerm {
                k: k + 1,
                c: c.to_string(),
            };
            match brackets.iter_mut().find(|b| b.i == i + 1 && b.j == j + 1) {
                Some(b) => b.out.push(term),
                None => brackets.push(Bracket {
                    i: i + 1,
                    j: j + 1,
                    out: vec![term],
                }),
            }
        }
        GroupSpecDocument {
            layers: self.layer_dims.clone(),
            brackets,
        }
    }

    /// `H^1`: `[e1, e2] = e3`.
    pub fn heisenberg() -> Self {
        GroupSpec::new(vec![2, 1], &[(0, 1, 2, Rational::one())]).expect("valid presentation")
    }

    /// The Engel group: `[e1, e2] = e3`, `[e1, e3] = e4`.
    pub fn engel() -> Self {
        GroupSpec::new(
            vec![2, 1, 1],
            &[(0, 1, 2, Rational::one()), (0, 2, 3, Rational::one())],
        )
        .expect("valid presentation")
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    /// Homogeneous dimension.
    pub fn q(&self) -> u32 {
        self.weights.iter().sum()
    }

    /// Topological dimension.
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn m1(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn step(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn structure_constant(&self, i: usize, j: usize, k: usize) -> Rational {
        self.terms
            .iter()
            .find(|t| t.0 == i && t.1 == j && t.2 == k)
            .map(|t| t.3)
            .unwrap_or_else(Rational::zero)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        let s = self.step() as u32;
        for &(i, j, k, _) in &self.terms {
            let w = self.weights[i] + self.weights[j];
            if w > s || self.weights[k] != w {
                return Err(Error::InvalidGroup(format!(
                    "[e{}, e{}] has a component on e{} outside layer {}",
                    i + 1,
                    j + 1,
                    k + 1,
                    w
                )));
            }
        }
        let basis = |i: usize| {
            let mut v = vec![Rational::zero(); n];
            v[i] = Rational::one();
            v
        };
        for a in 0..n {
            for b in (a + 1)..n {
                for c in (b + 1)..n {
                    let (ea, eb, ec) = (basis(a), basis(b), basis(c));
                    let t1 = self.bracket(&ea, &self.bracket(&eb, &ec));
                    let t2 = self.bracket(&eb, &self.bracket(&ec, &ea));
                    let t3 = self.bracket(&ec, &self.bracket(&ea, &eb));
                    if (0..n).any(|k| !(t1[k] + t2[k] + t3[k]).is_zero()) {
                        return Err(Error::InvalidGroup(format!(
                            "Jacobi identity fails on (e{}, e{}, e{})",
                            a + 1,
                            b + 1,
                            c + 1
                        )));
                    }
                }
            }
        }
        // Stratification: layer i+1 must be spanned by [v1, v_i].
        let m1 = self.m1();
        let mut offset = 0;
        for layer in 0..self.layer_dims.len() - 1 {
            let dim = self.layer_dims[layer];
            let next_start = offset + dim;
            let next_dim = self.layer_dims[layer + 1];
            let mut rows: Vec<Vec<Rational>> = Vec::new();
            for a in 0..m1 {
                for b in offset..next_start {
                    let v = self.bracket(&basis(a), &basis(b));
                    rows.push(v[next_start..next_start + next_dim].to_vec());
                }
            }
            if rank(rows) < next_dim {
                return Err(Error::InvalidGroup(format!(
                    "layer {} is not generated by brackets with the first layer",
                    layer + 2
                )));
            }
            offset = next_start;
        }
        Ok(())
    }

    /// Lie bracket of coordinate vectors.
    pub fn bracket<T: Coefficient>(&self, a: &[T], b: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n()];
        for &(i, j, k, ref c) in &self.terms {
            if a[i].is_zero() || b[j].is_zero() {
                continue;
            }
            out[k] = out[k].clone() + a[i].clone() * b[j].clone() * T::from_rational(c);
        }
        out
    }

    fn bracket_f64(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for &(i, j, k, c) in &self.terms_f64 {
            out[k] += a[i] * b[j] * c;
        }
        out
    }

    /// `log(exp(a) exp(b))` through the BCH series up to degree 4, exact for
    /// step at most 4.
    pub fn bch<T: Coefficient>(&self, a: &[T], b: &[T]) -> Result<Vec<T>> {
        if self.step() > 4 {
            return Err(Error::InvalidGroup(format!(
                "BCH evaluator is truncated at step 4, group has step {}",
                self.step()
            )));
        }
        let r = |p: i64, q: i64| T::from_rational(&Rational::new(p, q));
        let ab = self.bracket(a, b);
        let aab = self.bracket(a, &ab);
        let bab = self.bracket(b, &ab);
        let baab = self.bracket(b, &aab);
        let mut out = Vec::with_capacity(self.n());
        for k in 0..self.n() {
            out.push(
                a[k].clone() + b[k].clone() + r(1, 2) * ab[k].clone() + r(1, 12) * aab[k].clone()
                    - r(1, 12) * bab[k].clone()
                    - r(1, 24) * baab[k].clone(),
            );
        }
        Ok(out)
    }

    fn bch_f64(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        if self.step() > 4 {
            return self.bch(a, b);
        }
        let ab = self.bracket_f64(a, b);
        if self.step() == 2 {
            return Ok((0..self.n()).map(|k| a[k] + b[k] + 0.5 * ab[k]).collect());
        }
        let aab = self.bracket_f64(a, &ab);
        let bab = self.bracket_f64(b, &ab);
        let baab = self.bracket_f64(b, &aab);
        Ok((0..self.n())
            .map(|k| a[k] + b[k] + 0.5 * ab[k] + (aab[k] - bab[k]) / 12.0 - baab[k] / 24.0)
            .collect())
    }

    pub fn point(&self, coords: Vec<f64>) -> Result<GroupPoint> {
        if coords.len() != self.n() {
            return Err(Error::GroupMismatch {
                expected: self.n(),
                got: coords.len(),
            });
        }
        Ok(GroupPoint {
            coords,
            weights: self.weights.clone(),
        })
    }

    pub fn identity(&self) -> GroupPoint {
        GroupPoint {
            coords: vec![0.0; self.n()],
            weights: self.weights.clone(),
        }
    }

    fn check(&self, p: &GroupPoint) -> Result<()> {
        if p.coords.len() != self.n() || p.weights != self.weights {
            return Err(Error::GroupMismatch {
                expected: self.n(),
                got: p.coords.len(),
            });
        }
        Ok(())
    }

    pub fn multiply(&self, p: &GroupPoint, q: &GroupPoint) -> Result<GroupPoint> {
        self.check(p)?;
        self.check(q)?;
        Ok(GroupPoint {
            coords: self.bch_f64(&p.coords, &q.coords)?,
            weights: self.weights.clone(),
        })
    }

    /// Exact product on rational coordinates.
    pub fn multiply_exact(&self, p: &[Rational], q: &[Rational]) -> Result<Vec<Rational>> {
        if p.len() != self.n() || q.len() != self.n() {
            return Err(Error::GroupMismatch {
                expected: self.n(),
                got: p.len().min(q.len()),
            });
        }
        self.bch(p, q)
    }

    pub fn inverse(&self, p: &GroupPoint) -> Result<GroupPoint> {
        self.check(p)?;
        Ok(GroupPoint {
            coords: p.coords.iter().map(|c| -c).collect(),
            weights: p.weights.clone(),
        })
    }

    pub fn dilate(&self, t: f64, p: &GroupPoint) -> Result<GroupPoint> {
        self.check(p)?;
        if t.is_nan() || t <= 0.0 {
            return Err(Error::NonPositiveDilation(t));
        }
        Ok(GroupPoint {
            coords: p
                .coords
                .iter()
                .zip(&self.weights)
                .map(|(c, &w)| c * t.powi(w as i32))
                .collect(),
            weights: p.weights.clone(),
        })
    }

    /// Euclidean coefficients of the left or right invariant extension of
    /// `e_j` at `p`: `sum_n b_n ad_p^n e_j` with the Bernoulli-type weights of
    /// the exponential map's differential.
    pub fn field_coefficients(&self, field: Field, p: &GroupPoint) -> Result<Vec<f64>> {
        self.check(p)?;
        if field.index >= self.m1() {
            return Err(Error::Precondition(format!(
                "field index {} exceeds first-layer dimension {}",
                field.index,
                self.m1()
            )));
        }
        let b: [f64; 5] = match field.side {
            Side::Left => [1.0, 0.5, 1.0 / 12.0, 0.0, -1.0 / 720.0],
            Side::Right => [1.0, -0.5, 1.0 / 12.0, 0.0, -1.0 / 720.0],
        };
        let mut term = vec![0.0; self.n()];
        term[field.index] = 1.0;
        let mut out = term.clone();
        for coef in b.iter().skip(1).take(self.step().saturating_sub(1)) {
            term = self.bracket_f64(&p.coords, &term);
            for (o, t) in out.iter_mut().zip(&term) {
                *o += coef * t;
            }
        }
        Ok(out)
    }
}

fn rank(mut rows: Vec<Vec<Rational>>) -> usize {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..cols {
        let Some(pivot) = (r..rows.len()).find(|&i| !rows[i][c].is_zero()) else {
            continue;
        };
        rows.swap(r, pivot);
        let lead = rows[r][c];
        for i in 0..rows.len() {
            if i != r && !rows[i][c].is_zero() {
                let f = rows[i][c] / lead;
                for k in c..cols {
                    let v = rows[r][k];
                    rows[i][k] -= f * v;
                }
            }
        }
        r += 1;
    }
    r
}

impl Group for GroupSpec {
    type Point = GroupPoint;

    fn horizontal_dim(&self) -> usize {
        self.m1()
    }

    fn compose(&self, p: &GroupPoint, q: &GroupPoint) -> Result<GroupPoint> {
        self.multiply(p, q)
    }

    fn flow(&self, p: &GroupPoint, field: Field, s: f64) -> GroupPoint {
        let mut step = vec![0.0; self.n()];
        step[field.index] = s;
        let coords = match field.side {
            Side::Left => self.bch_f64(&p.coords, &step),
            Side::Right => self.bch_f64(&step, &p.coords),
        }
        .expect("flow on a group whose step exceeds the BCH truncation");
        GroupPoint {
            coords,
            weights: p.weights.clone(),
        }
    }

    fn coordinate_scale(&self, p: &GroupPoint) -> f64 {
        p.coords.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    fn check_point(&self, p: &GroupPoint) -> Result<()> {
        self.check(p)
    }
}
