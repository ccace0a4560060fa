//! Partitions of unity subordinate to families of tiles.
//!
//! `eta_i = q(d(p_i, x) / R_out_i)` equals 1 on `B(p_i, 1.2 R_out_i)` and
//! vanishes off `B(p_i, 2 R_out_i)`; `phi_i = eta_i prod_{j<i} (1 - eta_j)`
//! in lexicographic word order. Then `sum phi_i = 1 - prod (1 - eta_i)`,
//! which is 1 on every tile of the family.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{apply_fields, FdConfig, HPoint, Heisenberg, OperatorWord};
use crate::metrics::koranyi_distance;
use crate::quadrature::sphere_point;
use crate::tiling::{Tile, TileWord};

pub const RAMP_INNER: f64 = 1.2;
pub const RAMP_OUTER: f64 = 2.0;

/// 1 on `u <= 1.2`, 0 on `u >= 2`, and the quintic smoothstep in between,
/// so that value, first and second derivatives match at both ends.
pub fn ramp(u: f64) -> f64 {
    if u <= RAMP_INNER {
        return 1.0;
    }
    if u >= RAMP_OUTER {
        return 0.0;
    }
    let s = (u - RAMP_INNER) / (RAMP_OUTER - RAMP_INNER);
    1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

#[derive(Clone, Debug)]
pub struct PartitionFamily {
    tiles: Vec<Tile>,
}

impl PartitionFamily {
    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn level(&self, i: usize) -> usize {
        self.tiles[i].level()
    }

    pub fn eta(&self, i: usize, x: HPoint) -> f64 {
        let t = &self.tiles[i];
        ramp(koranyi_distance(t.center, x) / t.r_out)
    }

    /// `phi_i(x)`.
    pub fn phi(&self, i: usize, x: HPoint) -> f64 {
        let t = &self.tiles[i];
        if koranyi_distance(t.center, x) >= RAMP_OUTER * t.r_out {
            return 0.0;
        }
        (0..i).fold(self.eta(i, x), |acc, j| acc * (1.0 - self.eta(j, x)))
    }

    /// Every `phi_i(x)` in one pass.
    pub fn phis(&self, x: HPoint) -> Vec<f64> {
        let mut rest = 1.0;
        self.tiles
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let e = self.eta(i, x);
                let v = e * rest;
                rest *= 1.0 - e;
                v
            })
            .collect()
    }

    pub fn sum(&self, x: HPoint) -> f64 {
        self.phis(x).iter().sum()
    }

    /// `1 - prod (1 - eta_i)`.
    pub fn telescoped(&self, x: HPoint) -> f64 {
        1.0 - (0..self.len()).fold(1.0, |acc, i| acc * (1.0 - self.eta(i, x)))
    }

    /// `X_w phi_i(x)` by finite differences along group flows.
    pub fn derivative(&self, i: usize, w: &OperatorWord, x: HPoint) -> Result<f64> {
        let f = |y: &HPoint| self.phi(i, *y);
        apply_fields(&Heisenberg, &w.fields(), &f, &x, FdConfig::default()).map(|e| e.value)
    }
}

/// Orders the tiles by word and checks that no tile contains another.
pub fn build_partition(tiles: Vec<Tile>) -> Result<PartitionFamily> {
    let mut tiles = tiles;
    tiles.sort_by(|a, b| a.word.cmp(&b.word));
    // Sorted words between a prefix and its extension share that prefix, so
    // nesting always shows up in a neighbouring pair.
    for pair in tiles.windows(2) {
        if pair[0].word == pair[1].word || pair[0].word.is_prefix_of(&pair[1].word) {
            return Err(Error::TileOverlap {
                first: pair[0].word.to_string(),
                second: pair[1].word.to_string(),
                overlap: 1.0,
            });
        }
    }
    Ok(PartitionFamily { tiles })
}

/// The sixteen children of `0^{m-1}`: an exactly self-similar family at
/// level `m`.
pub fn sibling_family(level: usize) -> Result<PartitionFamily> {
    if level == 0 {
        return build_partition(vec![Tile::new(TileWord::root())]);
    }
    let parent = TileWord::new(vec![0; level - 1])?;
    build_partition((0..16u8).map(|j| Tile::new(parent.child(j))).collect())
}

/// A Haar-uniform point of the Koranyi ball `B(c, r)`: in polar coordinates
/// `dp = rho^3/4 drho dtheta dphi`, so `theta` and `phi` are flat.
pub fn sample_in_ball<R: Rng>(c: HPoint, r: f64, rng: &mut R) -> HPoint {
    let theta = (rng.gen::<f64>() - 0.5) * std::f64::consts::PI;
    let omega = sphere_point(theta, rng.gen_range(0.0..std::f64::consts::TAU));
    let rho = r * rng.gen::<f64>().powf(0.25);
    c * HPoint::new(rho * omega.x, rho * omega.y, rho * rho * omega.t)
}

/// `sup_{i, x} |X_w phi_i(x)| 2^{-m(i) |w|}` for one word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub word: Vec<usize>,
    pub raw_sup: f64,
    pub normalized_sup: f64,
    pub samples: usize,
}

/// Samples each bump on its support ball and records the normalized sups.
pub fn derivative_scaling_check(
    family: &PartitionFamily,
    words: &[OperatorWord],
    samples_per_bump: usize,
    seed: u64,
) -> Result<Vec<ScalingRow>> {
    if let Some(w) = words.iter().find(|w| w.degree() > 2 || w.is_empty()) {
        return Err(Error::Precondition(format!("derivative words must have length 1 or 2, got {w:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for (i, t) in family.tiles().iter().enumerate() {
        for _ in 0..samples_per_bump {
            points.push((i, sample_in_ball(t.center, RAMP_OUTER * t.r_out, &mut rng)));
        }
    }
    words
        .iter()
        .map(|w| {
            let (mut raw, mut norm) = (0.0_f64, 0.0_f64);
            for &(i, x) in &points {
                let v = family.derivative(i, w, x)?.abs();
                raw = raw.max(v);
                norm = norm.max(v * 0.5f64.powi((family.level(i) * w.degree()) as i32));
            }
            Ok(ScalingRow {
                word: w.letters.clone(),
                raw_sup: raw,
                normalized_sup: norm,
                samples: points.len(),
            })
        })
        .collect()
}

/// The six horizontal words of length one and two.
pub fn standard_words() -> Vec<OperatorWord> {
    vec![
        OperatorWord::left(&[0]),
        OperatorWord::left(&[1]),
        OperatorWord::left(&[0, 0]),
        OperatorWord::left(&[0, 1]),
        OperatorWord::left(&[1, 0]),
        OperatorWord::left(&[1, 1]),
    ]
}
