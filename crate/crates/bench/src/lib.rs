//! Benchmark fixtures shared by the criterion targets.

use carnot_cap::capacity::k_map_set;
use carnot_cap::tiling::TileSet;
use carnot_cap::HPoint;

/// A deterministic spread of points in `[-1, 1]^3` avoiding the origin.
pub fn points(n: usize) -> Vec<HPoint> {
    (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            let a = std::f64::consts::TAU * u * 7.0;
            HPoint::new(a.cos() * (0.2 + 0.8 * u), a.sin() * (0.2 + 0.8 * u), 2.0 * u - 1.0)
        })
        .collect()
}

pub fn k_map(k: usize, depth: usize) -> TileSet {
    k_map_set(k, depth).expect("k-map set")
}
