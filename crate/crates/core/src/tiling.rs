//! The self-similar dyadic tiling of `H^1`, tile geometry, doubling counts,
//! the dyadic Hausdorff content and Frostman measures.
//!
//! Sixteen `1/2`-homotheties `f_j(x) = delta_{1/2}(d_j . x)` with digits
//! `d_j = (a, b, c/4)`, `j = a + 2b + 4c`, `a, b in {0, 1}`, `c in 0..4`.
//! The digits are coset representatives of `delta_2 L` in the lattice
//! `L = Z x Z x Z/4`, so the attractor `T` tiles `H^1` by `L`-translates and
//! has volume `1/4`. A word `w = w_1 ... w_m` names `T_w = f_{w_1} o ... o
//! f_{w_m}(T)`.
//!
//! Membership is decided exactly in the depth-`D` approximation of `T`
//! (the union of `f_w(F)` over `|w| = D`, with `F = [0,1)^2 x [0,1/4)`),
//! by peeling digits off the lattice point `delta_2^D x` lies over.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::HPoint;
use crate::metrics::{koranyi, koranyi_distance};

pub const ALPHABET: usize = 16;
/// Deepest level accepted for tile sets and exports.
pub const DEPTH_CAP: usize = 6;
/// Resolution used by [`locate`] callers that do not choose one.
pub const LOCATE_RESOLUTION: usize = 18;

/// `max_j N(d_j) = N(1, 1, 3/4) = 13^{1/4}`; every point of `T` has gauge
/// at most this.
pub fn digit_radius() -> f64 {
    13f64.powf(0.25)
}

/// `d_j`.
pub fn digit(j: u8) -> HPoint {
    let j = j as u32;
    HPoint::new((j & 1) as f64, (j >> 1 & 1) as f64, (j >> 2) as f64 * 0.25)
}

/// `f_j(x)`.
#[inline]
pub fn homothety(j: u8, x: HPoint) -> HPoint {
    (digit(j) * x).dilate(0.5)
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TileWord(Vec<u8>);

impl TileWord {
    pub fn new(digits: Vec<u8>) -> Result<Self> {
        if let Some(&d) = digits.iter().find(|&&d| d as usize >= ALPHABET) {
            return Err(Error::InvalidWord(format!("digit {d} out of range")));
        }
        Ok(TileWord(digits))
    }

    pub fn root() -> Self {
        TileWord(Vec::new())
    }

    pub fn level(&self) -> usize {
        self.0.len()
    }

    pub fn digits(&self) -> &[u8] {
        &self.0
    }

    pub fn child(&self, j: u8) -> TileWord {
        debug_assert!((j as usize) < ALPHABET);
        let mut d = self.0.clone();
        d.push(j);
        TileWord(d)
    }

    pub fn parent(&self) -> Option<TileWord> {
        (!self.0.is_empty()).then(|| TileWord(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn prefix(&self, level: usize) -> TileWord {
        TileWord(self.0[..level.min(self.0.len())].to_vec())
    }

    pub fn is_prefix_of(&self, other: &TileWord) -> bool {
        other.0.starts_with(&self.0)
    }

    /// Drops the first digit: `T_{w_2 ... w_m}` is the `delta_2`-rescaled copy
    /// of `T_w` (up to translation).
    pub fn shift(&self) -> Option<TileWord> {
        (!self.0.is_empty()).then(|| TileWord(self.0[1..].to_vec()))
    }

    /// `f_w(x)`.
    pub fn map(&self, x: HPoint) -> HPoint {
        self.0.iter().rev().fold(x, |acc, &j| homothety(j, acc))
    }

    /// `f_w(0)`: the image of the fixed point of `f_0`, which lies in `T_w`.
    pub fn anchor(&self) -> HPoint {
        self.map(HPoint::ZERO)
    }

    /// Every word of the given level, in lexicographic order.
    pub fn all(level: usize) -> impl Iterator<Item = TileWord> {
        (0..ALPHABET.pow(level as u32)).map(move |mut i| {
            let mut d = vec![0u8; level];
            for k in (0..level).rev() {
                d[k] = (i % ALPHABET) as u8;
                i /= ALPHABET;
            }
            TileWord(d)
        })
    }
}

impl fmt::Display for TileWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("-");
        }
        for d in &self.0 {
            write!(f, "{d:x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for TileWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TileWord({self})")
    }
}

impl FromStr for TileWord {
    type Err = Error;

    /// Lowercase hex digits; `-` or the empty string is the root.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "-" {
            return Ok(TileWord::root());
        }
        s.chars()
            .map(|c| match c {
                '0'..='9' | 'a'..='f' => Ok(c.to_digit(16).unwrap() as u8),
                _ => Err(Error::InvalidWord(format!("{s:?}: bad digit {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(TileWord)
    }
}

impl Serialize for TileWord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TileWord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Exact lattice arithmetic. `(a, b, c)` stands for `(a, b, c/4)`.

type Lattice = (i64, i64, i64);

fn lattice_peel(l: Lattice) -> (u8, Lattice) {
    let (a, b, c) = l;
    let aj = a.rem_euclid(2);
    let bj = b.rem_euclid(2);
    // l . d_j^{-1} has t-part (c - cj + 2 (b aj - a bj)) / 4; it must be an integer.
    let cj = (c + 2 * (b * aj - a * bj)).rem_euclid(4);
    let c2 = c - cj + 2 * (b * aj - a * bj);
    debug_assert!(c2 % 4 == 0 && (a - aj) % 2 == 0 && (b - bj) % 2 == 0);
    let j = (aj + 2 * bj + 4 * cj) as u8;
    (j, ((a - aj) / 2, (b - bj) / 2, c2 / 4))
}

/// The level-`resolution` word `w` with `x in f_w(F)`, or `None` when `x` lies
/// outside the depth-`resolution` approximation of `T`.
pub fn locate(x: HPoint, resolution: usize) -> Option<TileWord> {
    let z = x.dilate(2f64.powi(resolution as i32));
    let a = z.x.floor();
    let b = z.y.floor();
    let c = (4.0 * (z.t + 0.5 * (b * z.x - a * z.y))).floor();
    if !(a.abs() < 4e15 && b.abs() < 4e15 && c.abs() < 4e15) {
        return None;
    }
    let mut l: Lattice = (a as i64, b as i64, c as i64);
    let mut digits = vec![0u8; resolution];
    for k in (0..resolution).rev() {
        let (j, rest) = lattice_peel(l);
        digits[k] = j;
        l = rest;
    }
    (l == (0, 0, 0)).then_some(TileWord(digits))
}

/// Uniform sample of `T_w` (in the depth-`resolution` model): `f_w f_v(u)`
/// with `v` a uniform word of length `resolution - |w|` and `u` uniform in `F`.
pub fn sample_in_tile<R: Rng>(word: &TileWord, resolution: usize, rng: &mut R) -> HPoint {
    let extra = resolution.saturating_sub(word.level());
    let mut p = HPoint::new(rng.gen(), rng.gen(), 0.25 * rng.gen::<f64>());
    for _ in 0..extra {
        p = homothety(rng.gen_range(0..ALPHABET as u8), p);
    }
    word.map(p)
}

// ---------------------------------------------------------------------------
// Geometry of T.

/// Bounding box `[0, 1]^2 x [-1/6, 5/12]` of `T`; the `t` range is the
/// closed-form extremes of the digit series.
pub const BOUNDING_BOX: ([f64; 3], [f64; 3]) = ([0.0, 0.0, -1.0 / 6.0], [1.0, 1.0, 5.0 / 12.0]);

/// Center of `T`, placed near the center of the largest inscribed gauge ball.
pub const CENTER: HPoint = HPoint::new(0.264_557_56, 0.264_560_02, 0.124_878_34);

/// Certified radii and diameter of `T` around [`CENTER`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileGeometry {
    pub center: HPoint,
    /// Lower bound for `sup {r : B(p, r) in T}`.
    pub r_in: f64,
    /// Upper bound for `sup {d(p, y) : y in T}`.
    pub r_out: f64,
    /// Upper bound for `diam T` in the Koranyi gauge.
    pub diam: f64,
    /// Widths of the certified brackets (best attained point vs bound).
    pub r_in_gap: f64,
    pub r_out_gap: f64,
    pub diam_gap: f64,
}

impl TileGeometry {
    /// `J`: the smallest integer with `diam T <= J`.
    pub fn j_constant(&self) -> u32 {
        self.diam.ceil() as u32
    }
}

const BNB_TOL: f64 = 2e-4;
const BNB_MAX_POPS: usize = 300_000;

struct Ranked<T> {
    key: f64,
    item: T,
}

impl<T> PartialEq for Ranked<T> {
    fn eq(&self, o: &Self) -> bool {
        self.key.total_cmp(&o.key).is_eq()
    }
}
impl<T> Eq for Ranked<T> {}
impl<T> PartialOrd for Ranked<T> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl<T> Ord for Ranked<T> {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.key.total_cmp(&o.key)
    }
}

/// Best-first branch and bound for a sup over a tree of pieces. `eval`
/// returns a value attained inside the piece and an upper bound over it.
/// Returns `(best attained, certified upper bound)`.
fn maximize<T>(roots: Vec<T>, eval: &dyn Fn(&T) -> (f64, f64), expand: &dyn Fn(&T) -> Vec<T>) -> (f64, f64) {
    let mut heap = std::collections::BinaryHeap::new();
    let mut best = f64::NEG_INFINITY;
    for r in roots {
        let (a, key) = eval(&r);
        best = best.max(a);
        heap.push(Ranked { key, item: r });
    }
    let mut pruned = f64::NEG_INFINITY;
    let mut pops = 0;
    while let Some(top) = heap.pop() {
        if top.key <= best + BNB_TOL || pops >= BNB_MAX_POPS {
            return (best, top.key.max(pruned).max(best));
        }
        pops += 1;
        for c in expand(&top.item) {
            let (a, key) = eval(&c);
            best = best.max(a);
            if key > best + BNB_TOL {
                heap.push(Ranked { key, item: c });
            } else {
                pruned = pruned.max(key);
            }
        }
    }
    (best, pruned.max(best))
}

/// A subtile `T_v` by its anchor `f_v(0)` and level.
type Piece = (HPoint, usize);

fn children(q: HPoint, level: usize) -> impl Iterator<Item = Piece> {
    let s = 0.5f64.powi(level as i32);
    (0..ALPHABET as u8).map(move |j| (q * digit(j).dilate(0.5).dilate(s), level + 1))
}

/// Certified `sup {N(y) : y in T}`, bootstrapped from `N(d_j) <= 13^{1/4}`.
fn bound_gauge_radius() -> f64 {
    let rho = digit_radius();
    maximize(
        vec![(HPoint::ZERO, 0usize)],
        &|&(q, l): &Piece| {
            let d = koranyi(q);
            (d, d + rho * 0.5f64.powi(l as i32))
        },
        &|&(q, l)| children(q, l).collect(),
    )
    .1
}

/// Sup of `d(p, y)` over `y in T`: `T_v` lies in `B(f_v(0), 2^{-|v|} rho)`.
fn bound_r_out(p: HPoint, rho: f64) -> (f64, f64) {
    maximize(
        vec![(HPoint::ZERO, 0usize)],
        &|&(q, l): &Piece| {
            let d = koranyi_distance(p, q);
            (d, d + rho * 0.5f64.powi(l as i32))
        },
        &|&(q, l)| children(q, l).collect(),
    )
}

/// `f_v(p)` from the anchor `f_v(0)`.
fn piece_center(&(q, l): &Piece, p: HPoint) -> HPoint {
    q * p.dilate(0.5f64.powi(l as i32))
}

/// Inf of `d(p, g T)` over lattice points `g != 0`; `B(p, r)` with `r` below
/// it misses every other tile and so lies in `T`. Uses
/// `g T_v in B(g f_v(p), 2^{-|v|} r_out)`.
fn bound_r_in(p: HPoint, r_out: f64) -> (f64, f64) {
    let reach = 2.0 * r_out + 1.0;
    let mut roots: Vec<Piece> = Vec::new();
    for a in -4i64..=5 {
        for b in -4i64..=5 {
            for c in -40i64..=40 {
                let g = HPoint::new(a as f64, b as f64, c as f64 * 0.25);
                if (a, b, c) != (0, 0, 0) && koranyi_distance(p, g * p) < reach {
                    roots.push((g, 0));
                }
            }
        }
    }
    let (neg_best, neg_lb) = maximize(
        roots,
        &|piece: &Piece| {
            let d = koranyi_distance(p, piece.0);
            let dc = koranyi_distance(p, piece_center(piece, p));
            (-d.min(dc), -dc + r_out * 0.5f64.powi(piece.1 as i32))
        },
        &|&(q, l)| children(q, l).collect(),
    );
    ((-neg_lb).max(0.0), -neg_best)
}

/// `diam T` by branch and bound over pairs of subtiles around their
/// centers, refining the coarser member of each pair.
fn bound_diam(p: HPoint, r_out: f64) -> (f64, f64) {
    maximize(
        vec![((HPoint::ZERO, 0usize), (HPoint::ZERO, 0usize))],
        &|(a, b): &(Piece, Piece)| {
            let d = koranyi_distance(a.0, b.0);
            let dc = koranyi_distance(piece_center(a, p), piece_center(b, p));
            (d.max(dc), dc + r_out * (0.5f64.powi(a.1 as i32) + 0.5f64.powi(b.1 as i32)))
        },
        &|&(a, b)| {
            if a == b {
                let c: Vec<Piece> = children(a.0, a.1).collect();
                let mut out = Vec::with_capacity(136);
                for i in 0..c.len() {
                    for j in i..c.len() {
                        out.push((c[i], c[j]));
                    }
                }
                out
            } else if a.1 <= b.1 {
                children(a.0, a.1).map(|c| (c, b)).collect()
            } else {
                children(b.0, b.1).map(|c| (a, c)).collect()
            }
        },
    )
}

/// Branch-and-bound brackets `(attained, bound)` for the geometry of `T`
/// around `p`. `r_in` is bracketed as `(bound, attained)` since it is an inf.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryBrackets {
    /// Certified `sup {N(y) : y in T}`.
    pub gauge_radius: f64,
    pub r_out: (f64, f64),
    pub r_in: (f64, f64),
    pub diam: (f64, f64),
}

/// Recomputes the brackets behind [`tile_geometry`]; takes a few seconds.
pub fn certify_geometry(p: HPoint) -> GeometryBrackets {
    let rho = bound_gauge_radius();
    let r_out = bound_r_out(p, rho);
    GeometryBrackets {
        gauge_radius: rho,
        r_out,
        r_in: bound_r_in(p, r_out.1),
        diam: bound_diam(p, r_out.1),
    }
}

/// Geometry of the fundamental tile. The radii and diameter are rounded
/// outward from the brackets of [`certify_geometry`] at [`CENTER`].
pub fn tile_geometry() -> &'static TileGeometry {
    static GEOMETRY: TileGeometry = TileGeometry {
        center: CENTER,
        r_in: 0.264_24,
        r_out: 1.182_72,
        diam: 1.960_95,
        r_in_gap: 6.8e-4,
        r_out_gap: 2.1e-4,
        diam_gap: 2.2e-2,
    };
    &GEOMETRY
}

/// `(diam T_w)^s` for a level-`level` tile.
#[inline]
pub fn diam_pow(level: usize, s: f64) -> f64 {
    (tile_geometry().diam * 0.5f64.powi(level as i32)).powf(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub word: TileWord,
    pub center: HPoint,
    pub r_in: f64,
    pub r_out: f64,
    pub diam: f64,
}

impl Tile {
    pub fn new(word: TileWord) -> Tile {
        let g = tile_geometry();
        let s = 0.5f64.powi(word.level() as i32);
        Tile {
            center: word.map(g.center),
            r_in: s * g.r_in,
            r_out: s * g.r_out,
            diam: s * g.diam,
            word,
        }
    }

    pub fn level(&self) -> usize {
        self.word.level()
    }
}

/// Outcome of the Monte-Carlo overlap test of one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub level: usize,
    pub samples: usize,
    /// Fraction of samples of some `T_w` located in a different tile.
    pub overlap: f64,
    /// Fraction of samples located outside `T` altogether.
    pub escaped: f64,
    /// The pair with the most shared samples, if any.
    pub worst_pair: Option<(TileWord, TileWord)>,
}

/// Samples each level-`m` tile at resolution `D + 2` and locates the samples
/// at resolution `D`; a sample of `T_w` found in `T_{w'}` counts as overlap.
pub fn check_overlap(level: usize, samples_per_tile: usize, seed: u64) -> OverlapReport {
    let resolution = LOCATE_RESOLUTION.max(level);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shared: BTreeMap<(TileWord, TileWord), usize> = BTreeMap::new();
    let (mut total, mut mismatched, mut escaped) = (0usize, 0usize, 0usize);
    for w in TileWord::all(level) {
        for _ in 0..samples_per_tile {
            let x = sample_in_tile(&w, resolution + 2, &mut rng);
            total += 1;
            match locate(x, resolution) {
                Some(found) => {
                    let p = found.prefix(level);
                    if p != w {
                        mismatched += 1;
                        *shared.entry((w.clone(), p)).or_default() += 1;
                    }
                }
                None => escaped += 1,
            }
        }
    }
    let worst_pair = shared
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(k, _)| k);
    OverlapReport {
        level,
        samples: total,
        overlap: mismatched as f64 / total.max(1) as f64,
        escaped: escaped as f64 / total.max(1) as f64,
        worst_pair,
    }
}

pub const OVERLAP_TOLERANCE: f64 = 1e-2;

/// All `16^m` tiles of level `m`, after the overlap test passes.
pub fn build_tiling(level: usize) -> Result<Vec<Tile>> {
    if level > DEPTH_CAP {
        return Err(Error::Precondition(format!("level {level} exceeds depth cap {DEPTH_CAP}")));
    }
    let per_tile = (1usize << 16).div_ceil(ALPHABET.pow(level as u32)).max(4);
    let report = check_overlap(level, per_tile, 0x7117_0000 + level as u64);
    if report.overlap + report.escaped >= OVERLAP_TOLERANCE {
        let (first, second) = report.worst_pair.unwrap_or_default();
        return Err(Error::TileOverlap {
            first: first.to_string(),
            second: second.to_string(),
            overlap: report.overlap + report.escaped,
        });
    }
    Ok(TileWord::all(level).map(Tile::new).collect())
}

/// Monte-Carlo volume of `T_w` from points of `f_w(box)` located in `T_w`.
pub fn tile_volume_estimate(word: &TileWord, samples: usize, seed: u64) -> f64 {
    let (lo, hi) = BOUNDING_BOX;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let resolution = LOCATE_RESOLUTION.max(word.level());
    let mut hits = 0usize;
    for _ in 0..samples {
        let u = HPoint::new(
            rng.gen_range(lo[0]..hi[0]),
            rng.gen_range(lo[1]..hi[1]),
            rng.gen_range(lo[2]..hi[2]),
        );
        if locate(word.map(u), resolution).is_some_and(|f| word.is_prefix_of(&f)) {
            hits += 1;
        }
    }
    let box_volume = (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
    box_volume * 16f64.powi(-(word.level() as i32)) * hits as f64 / samples as f64
}

/// Result of [`tiles_meeting_ball`].
#[derive(Clone, Debug, PartialEq)]
pub struct BallTiles {
    pub level: usize,
    pub words: Vec<TileWord>,
    /// `r > R_out`: the search was clamped to level 0.
    pub clamped: bool,
}

/// Level-`m` tiles whose outer ball meets `B(q, r)`, where
/// `2^{-m-1} R_out <= r < 2^{-m} R_out`.
pub fn tiles_meeting_ball(q: HPoint, r: f64) -> Result<BallTiles> {
    if !(r > 0.0) {
        return Err(Error::Precondition(format!("ball radius must be positive, got {r}")));
    }
    let g = tile_geometry();
    let clamped = r > g.r_out;
    let level = if clamped {
        0
    } else {
        let mut m = 0usize;
        while r < 0.5f64.powi(m as i32 + 1) * g.r_out && m < 40 {
            m += 1;
        }
        m
    };
    let target_r_out = 0.5f64.powi(level as i32) * g.r_out;
    let mut words = Vec::new();
    let mut stack = vec![TileWord::root()];
    while let Some(w) = stack.pop() {
        let t = Tile::new(w);
        let d = koranyi_distance(q, t.center);
        if t.level() == level {
            if d < r + t.r_out {
                words.push(t.word);
            }
            continue;
        }
        // Centers of level-m descendants lie in T_w, within r_out of its center.
        if d - t.r_out >= r + target_r_out {
            continue;
        }
        for j in (0..ALPHABET as u8).rev() {
            stack.push(t.word.child(j));
        }
    }
    words.sort();
    Ok(BallTiles {
        level,
        words,
        clamped,
    })
}

/// `(2 diam T / R_out)^s`: with `m` as in [`tiles_meeting_ball`],
/// `(diam T_w)^s <= C r^s`.
pub fn ball_constant(s: f64) -> f64 {
    let g = tile_geometry();
    (2.0 * g.diam / g.r_out).powf(s)
}

// ---------------------------------------------------------------------------
// Tile sets.

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSet {
    level: usize,
    words: Vec<TileWord>,
}

impl TileSet {
    pub fn new(level: usize, mut words: Vec<TileWord>) -> Result<Self> {
        if level > DEPTH_CAP {
            return Err(Error::Precondition(format!("level {level} exceeds depth cap {DEPTH_CAP}")));
        }
        if let Some(w) = words.iter().find(|w| w.level() != level) {
            return Err(Error::InvalidWord(format!("{w} is not a level-{level} word")));
        }
        words.sort();
        if words.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::InvalidWord("duplicate word in tile set".into()));
        }
        Ok(TileSet { level, words })
    }

    pub fn empty(level: usize) -> Self {
        TileSet {
            level,
            words: Vec::new(),
        }
    }

    pub fn full(level: usize) -> Result<Self> {
        TileSet::new(level, TileWord::all(level).collect())
    }

    /// Words whose every digit lies in `kept`.
    pub fn self_similar(kept: &[u8], depth: usize) -> Result<Self> {
        let mut kept = kept.to_vec();
        kept.sort_unstable();
        kept.dedup();
        if kept.is_empty() {
            return Err(Error::Config("kept digit set is empty".into()));
        }
        if let Some(&d) = kept.iter().find(|&&d| d as usize >= ALPHABET) {
            return Err(Error::InvalidWord(format!("digit {d} out of range")));
        }
        let mut words = vec![TileWord::root()];
        for _ in 0..depth {
            words = words
                .iter()
                .flat_map(|w| kept.iter().map(move |&j| w.child(j)))
                .collect();
        }
        TileSet::new(depth, words)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn words(&self) -> &[TileWord] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, w: &TileWord) -> bool {
        self.words.binary_search(w).is_ok()
    }

    pub fn is_subset(&self, other: &TileSet) -> bool {
        self.level == other.level && self.words.iter().all(|w| other.contains(w))
    }

    pub fn tiles(&self) -> Vec<Tile> {
        self.words.iter().cloned().map(Tile::new).collect()
    }

    /// One lowercase hex word per line; the level is inferred from the
    /// first word. Blank lines and `#` comments are skipped.
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut words = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            words.push(line.parse::<TileWord>()?);
        }
        let level = words.first().map_or(0, TileWord::level);
        TileSet::new(level, words)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for w in &self.words {
            writeln!(out, "{w}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Writes `word,center_x,center_y,center_t,r_in,r_out` rows for every tile
/// of the level; returns the row count.
pub fn export_tiles<W: Write>(level: usize, out: &mut W) -> Result<usize> {
    if level > DEPTH_CAP {
        return Err(Error::Precondition(format!("level {level} exceeds depth cap {DEPTH_CAP}")));
    }
    writeln!(out, "word,center_x,center_y,center_t,r_in,r_out")?;
    let mut n = 0;
    for w in TileWord::all(level) {
        let t = Tile::new(w);
        writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            t.word, t.center.x, t.center.y, t.center.t, t.r_in, t.r_out
        )?;
        n += 1;
    }
    Ok(n)
}

// ---------------------------------------------------------------------------
// Dyadic content.

/// The sparse 16-ary tree above a tile set, with the content DP values.
#[derive(Clone, Debug)]
pub struct ContentTree {
    pub s: f64,
    nodes: Vec<ContentNode>,
}

#[derive(Clone, Debug)]
struct ContentNode {
    word: TileWord,
    value: f64,
    /// The optimal cover of this subtree is the node itself.
    covers_self: bool,
    children: Vec<usize>,
}

impl ContentTree {
    pub fn build(k: &TileSet, s: f64) -> Result<Self> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::ExponentOutOfRange {
                value: s,
                range: "[0, inf)".into(),
            });
        }
        let mut tree = ContentTree { s, nodes: Vec::new() };
        if !k.is_empty() {
            tree.grow(TileWord::root(), k.words(), k.level());
        }
        Ok(tree)
    }

    fn grow(&mut self, word: TileWord, leaves: &[TileWord], leaf_level: usize) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(ContentNode {
            word: word.clone(),
            value: 0.0,
            covers_self: true,
            children: Vec::new(),
        });
        let own = diam_pow(word.level(), self.s);
        if word.level() == leaf_level {
            self.nodes[idx].value = own;
            return idx;
        }
        let l = word.level();
        let mut children = Vec::new();
        let mut start = 0;
        while start < leaves.len() {
            let d = leaves[start].digits()[l];
            let end = start + leaves[start..].partition_point(|w| w.digits()[l] == d);
            children.push(self.grow(word.child(d), &leaves[start..end], leaf_level));
            start = end;
        }
        let sum = children.iter().fold(0.0, |acc, &c| acc + self.nodes[c].value);
        let node = &mut self.nodes[idx];
        node.children = children;
        if sum <= own {
            node.value = sum;
            node.covers_self = false;
        } else {
            node.value = own;
        }
        idx
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn content(&self) -> f64 {
        self.nodes.first().map_or(0.0, |n| n.value)
    }

    /// DP value of every materialized node, in depth-first order.
    pub fn values(&self) -> Vec<(TileWord, f64)> {
        self.nodes.iter().map(|n| (n.word.clone(), n.value)).collect()
    }

    /// The tiles of the optimal cover, in lexicographic order.
    pub fn optimal_cover(&self) -> Vec<TileWord> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i];
            if n.covers_self {
                out.push(n.word.clone());
            } else {
                stack.extend(n.children.iter().rev());
            }
        }
        out
    }
}

/// `inf sum (diam T_{w_i})^s` over covers of `K` by tiles, exact for the
/// depth-capped tree.
pub fn dyadic_content(k: &TileSet, s: f64) -> Result<f64> {
    Ok(ContentTree::build(k, s)?.content())
}

// ---------------------------------------------------------------------------
// Measures on leaf tiles.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileMeasure {
    pub level: usize,
    /// The exponent the measure was built for.
    pub s: f64,
    pub atoms: BTreeMap<TileWord, f64>,
}

impl TileMeasure {
    pub fn new(level: usize, s: f64, atoms: BTreeMap<TileWord, f64>) -> Result<Self> {
        for (w, &m) in &atoms {
            if w.level() != level {
                return Err(Error::InvalidWord(format!("{w} is not a level-{level} word")));
            }
            if !(m >= 0.0) || !m.is_finite() {
                return Err(Error::Precondition(format!("mass of {w} must be finite and nonnegative")));
            }
        }
        Ok(TileMeasure { level, s, atoms })
    }

    pub fn zero(level: usize, s: f64) -> Self {
        TileMeasure {
            level,
            s,
            atoms: BTreeMap::new(),
        }
    }

    pub fn total(&self) -> f64 {
        self.atoms.values().fold(0.0, |a, &m| a + m)
    }

    /// Mass of every ancestor of a charged leaf (and of the leaves), summed
    /// bottom-up.
    pub fn node_masses(&self) -> BTreeMap<TileWord, f64> {
        let mut out: BTreeMap<TileWord, f64> = self.atoms.clone();
        for level in (0..self.level).rev() {
            let mut parents: BTreeMap<TileWord, f64> = BTreeMap::new();
            for (w, &m) in out.range(..).filter(|(w, _)| w.level() == level + 1) {
                *parents.entry(w.prefix(level)).or_default() += m;
            }
            out.extend(parents);
        }
        out
    }

    /// `mu(T_w)`.
    pub fn tile_mass(&self, w: &TileWord) -> f64 {
        if w.level() >= self.level {
            return self.atoms.get(&w.prefix(self.level)).copied().unwrap_or(0.0);
        }
        self.atoms
            .range(w.clone()..)
            .take_while(|(k, _)| w.is_prefix_of(k))
            .fold(0.0, |a, (_, &m)| a + m)
    }
}

/// Relative margin removed at the root so rounding in the pushdown can never
/// lift a node above its cap.
pub const FROSTMAN_SHRINK: f64 = 1.0 - 1.0 / (1u64 << 40) as f64;

/// Pushes the content down the DP tree, splitting each node's mass among its
/// children in proportion to their DP values.
pub fn frostman_measure(k: &TileSet, s: f64) -> Result<TileMeasure> {
    let tree = ContentTree::build(k, s)?;
    let content = tree.content();
    if !(content > 0.0) {
        return Err(Error::ZeroContent);
    }
    let mut atoms = BTreeMap::new();
    let mut stack = vec![(0usize, content * FROSTMAN_SHRINK)];
    while let Some((i, mass)) = stack.pop() {
        let n = &tree.nodes[i];
        if n.children.is_empty() {
            atoms.insert(n.word.clone(), mass);
            continue;
        }
        let sum = n.children.iter().fold(0.0, |a, &c| a + tree.nodes[c].value);
        for &c in n.children.iter().rev() {
            stack.push((c, mass * (tree.nodes[c].value / sum)));
        }
    }
    TileMeasure::new(k.level(), s, atoms)
}

/// Checks `mu(T_w) <= (diam T_w)^s` on every node with mass.
pub fn frostman_node_violations(mu: &TileMeasure) -> Vec<(TileWord, f64)> {
    mu.node_masses()
        .into_iter()
        .filter(|(w, m)| *m > diam_pow(w.level(), mu.s))
        .collect()
}

/// Dyadic content against randomized greedy ball covers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparability {
    pub dyadic: f64,
    /// Cheapest greedy cover `sum (2 r_i)^s` over the trials.
    pub ball_upper: f64,
    /// Mass-distribution estimate `mu(K) / max mu(B) (2r)^{-s}` over the
    /// balls used in the covers.
    pub ball_lower: f64,
    /// `(dyadic / ball_lower, dyadic / ball_upper)`.
    pub ratios: (f64, f64),
}

pub fn content_comparability(k: &TileSet, s: f64, trials: usize, seed: u64) -> Result<Comparability> {
    if k.is_empty() {
        return Err(Error::Precondition("comparability needs a nonempty set".into()));
    }
    let dyadic = dyadic_content(k, s)?;
    let mu = frostman_measure(k, s)?;
    let g = tile_geometry();
    let leaves = k.tiles();
    let masses: Vec<f64> = leaves.iter().map(|t| mu.atoms[&t.word]).collect();
    let radii: Vec<f64> = (0..=k.level()).map(|j| 0.5f64.powi(j as i32) * g.r_out).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ball_upper = f64::INFINITY;
    let mut worst_density = 0.0_f64;
    let mut order: Vec<usize> = (0..leaves.len()).collect();
    for _ in 0..trials.max(1) {
        order.shuffle(&mut rng);
        let mut covered = vec![false; leaves.len()];
        let mut cost = 0.0;
        for &i in &order {
            if covered[i] {
                continue;
            }
            let c = leaves[i].center;
            let dist: Vec<f64> = leaves.iter().map(|t| koranyi_distance(c, t.center) + t.r_out).collect();
            let mut pick = (f64::INFINITY, 0.0, 0usize);
            for &r in &radii {
                let fresh = (0..leaves.len()).filter(|&j| !covered[j] && dist[j] <= r).count();
                if fresh > 0 {
                    let eff = (2.0 * r).powf(s) / fresh as f64;
                    if eff < pick.0 {
                        pick = (eff, r, fresh);
                    }
                }
            }
            let r = pick.1;
            let mut mass = 0.0;
            for j in 0..leaves.len() {
                if dist[j] <= r {
                    covered[j] = true;
                    mass += masses[j];
                }
            }
            cost += (2.0 * r).powf(s);
            worst_density = worst_density.max(mass / (2.0 * r).powf(s));
        }
        ball_upper = ball_upper.min(cost);
    }
    let ball_lower = mu.total() / worst_density;
    Ok(Comparability {
        dyadic,
        ball_upper,
        ball_lower,
        ratios: (dyadic / ball_lower, dyadic / ball_upper),
    })
}

/// Gauge norm on `f_w(0)` offsets, exposed for bounds in other modules.
pub fn anchor_radius(level: usize) -> f64 {
    digit_radius() * 0.5f64.powi(level as i32)
}
