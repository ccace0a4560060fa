//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines appear in order; exits nonzero if any
//! criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use carnot_cap::capacity::{frostman_ball_check, frostman_test_balls, k_map_digits, k_map_set, Budgets, ExponentKind};
use carnot_cap::experiment::{to_csv, run, ExperimentConfig, ExponentConfig, OneOrMany, Row, SetConfig};
use carnot_cap::group::{Constant, GaugeBump, GroupSpec, Rational};
use carnot_cap::kernel::{calibrate_constant, gamma, gamma_deriv, reference_bumps, GAMMA_CONSTANT};
use carnot_cap::metrics::koranyi;
use carnot_cap::partition::{derivative_scaling_check, sibling_family, standard_words};
use carnot_cap::quadrature::SingularRule;
use carnot_cap::tiling::{diam_pow, dyadic_content, frostman_measure, frostman_node_violations, sample_in_tile, TileSet, TileWord};
use carnot_cap::verify::{run_suite, Suite};
use carnot_cap::{HPoint, OperatorWord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and budgets.
const GROUP_RESIDUAL: f64 = 1e-12;
const GROUP_TRIPLES: usize = 1000;
const HOMOGENEITY_REL: f64 = 1e-8;
const HOMOGENEITY_SAMPLES: usize = 10_000;
const CALIBRATION_REL: f64 = 1e-3;
const CONTENT_INSTANCES: usize = 240;
const CONTENT_EXPONENTS: [f64; 4] = [0.5, 1.0, 2.0, 3.0];
const FROSTMAN_BALLS: usize = 1000;
const PARTITION_SUM_TOL: f64 = 1e-9;
const PARTITION_POINTS: usize = 10_000;
const PARTITION_SPREAD: f64 = 3.0;
const RATIO_SPREAD: f64 = 10.0;
const SEED: u64 = 7;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn criterion(n: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let in_time = took <= limit;
    let passed = o.passed && in_time;
    let timing = if in_time {
        format!("{:.2}s", took.as_secs_f64())
    } else {
        format!("{:.2}s, over the {}s limit", took.as_secs_f64(), limit.as_secs())
    };
    println!(
        "criterion {n:>2} {} {name}: {} [{timing}]",
        if passed { "PASS" } else { "FAIL" },
        o.detail
    );
    passed
}

fn random_point(rng: &mut ChaCha8Rng) -> HPoint {
    HPoint::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn sup_diff(a: HPoint, b: HPoint) -> f64 {
    (a.x - b.x).abs().max((a.y - b.y).abs()).max((a.t - b.t).abs())
}

fn group_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0_f64;
    for _ in 0..GROUP_TRIPLES {
        let (p, q, r) = (random_point(&mut rng), random_point(&mut rng), random_point(&mut rng));
        worst = worst
            .max(sup_diff((p * q) * r, p * (q * r)))
            .max(sup_diff(p * HPoint::ZERO, p))
            .max(sup_diff(HPoint::ZERO * p, p))
            .max(sup_diff(p * p.inv(), HPoint::ZERO))
            .max(sup_diff(p.inv() * p, HPoint::ZERO));
    }
    // Dyadic coordinates keep the hard-coded law exact in binary floating point.
    let spec = GroupSpec::heisenberg();
    let mut mismatches = 0;
    for _ in 0..GROUP_TRIPLES {
        let a: Vec<i64> = (0..3).map(|_| rng.gen_range(-256..=256)).collect();
        let b: Vec<i64> = (0..3).map(|_| rng.gen_range(-256..=256)).collect();
        let ra: Vec<Rational> = a.iter().map(|&k| Rational::new(k, 64)).collect();
        let rb: Vec<Rational> = b.iter().map(|&k| Rational::new(k, 64)).collect();
        let exact = spec.multiply_exact(&ra, &rb).expect("H^1 product");
        let fa = HPoint::new(a[0] as f64 / 64.0, a[1] as f64 / 64.0, a[2] as f64 / 64.0);
        let fb = HPoint::new(b[0] as f64 / 64.0, b[1] as f64 / 64.0, b[2] as f64 / 64.0);
        let hard = (fa * fb).to_array();
        let ok = exact.iter().zip(hard).all(|(e, h)| {
            let back = Rational::new((h * 8192.0) as i64, 8192);
            (h * 8192.0).fract() == 0.0 && back == *e
        });
        mismatches += usize::from(!ok);
    }
    outcome(
        worst <= GROUP_RESIDUAL && mismatches == 0,
        format!("max axiom residual {worst:.1e} (tol {GROUP_RESIDUAL:.0e}), BCH mismatches {mismatches}/{GROUP_TRIPLES}"),
    )
}

fn homogeneity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut words = vec![OperatorWord::left(&[])];
    for side in [OperatorWord::left as fn(&[usize]) -> OperatorWord, OperatorWord::right] {
        for w in [&[0usize][..], &[1], &[0, 0], &[0, 1], &[1, 0], &[1, 1]] {
            words.push(side(w));
        }
    }
    let mut worst = 0.0_f64;
    for _ in 0..HOMOGENEITY_SAMPLES {
        let p = random_point(&mut rng);
        if koranyi(p) < 1e-3 {
            continue;
        }
        let t = 10f64.powf(rng.gen_range(-1.0..1.0));
        let w = &words[rng.gen_range(0..words.len())];
        let deg = -2.0 - w.degree() as f64;
        let (a, b) = if w.is_empty() {
            (gamma(p.dilate(t)).unwrap(), t.powf(deg) * gamma(p).unwrap())
        } else {
            (gamma_deriv(w, p.dilate(t)).unwrap(), t.powf(deg) * gamma_deriv(w, p).unwrap())
        };
        // Relative to the natural size c N^{deg} so zeros of X_w Gamma do not
        // blow up the ratio.
        let scale = b.abs().max(GAMMA_CONSTANT * koranyi(p.dilate(t)).powf(deg));
        worst = worst.max((a - b).abs() / scale);
    }
    outcome(
        worst <= HOMOGENEITY_REL,
        format!("max relative defect {worst:.1e} over {HOMOGENEITY_SAMPLES} samples (tol {HOMOGENEITY_REL:.0e})"),
    )
}

fn calibration() -> Outcome {
    let rule = SingularRule::default();
    let cals: Vec<_> = reference_bumps().iter().map(|b| calibrate_constant(b, &rule).unwrap()).collect();
    let agree = (cals[0].constant - cals[1].constant).abs() / cals[0].constant;
    let worst = cals.iter().map(|c| c.residual).fold(0.0, f64::max);
    // Off-center points sit close to the support sphere, where the default
    // rule is too coarse; the residual is measured against sup psi = 1.
    let bump = GaugeBump::unit();
    let fine = rule.refined();
    let inv = [HPoint::new(0.3, -0.2, 0.1), HPoint::new(-0.5, 0.1, 0.2)]
        .iter()
        .map(|&x| carnot_cap::verify::check_inversion(&bump, &Constant(1.0), x, &fine).unwrap().residual)
        .fold(0.0, f64::max);
    outcome(
        worst < CALIBRATION_REL && agree < CALIBRATION_REL && inv < CALIBRATION_REL,
        format!(
            "pairing residuals {worst:.1e}, constants {:.9} / {:.9} agree to {agree:.1e}, off-center inversion {inv:.1e} (tol {CALIBRATION_REL:.0e})",
            cals[0].constant, cals[1].constant
        ),
    )
}

/// Minimum over every antichain cover of a level-2 leaf set: the root, or per
/// occupied level-1 tile either the tile or its occupied leaves.
fn exhaustive_content(leaves: &[TileWord], s: f64) -> f64 {
    let mut groups: BTreeMap<u8, usize> = BTreeMap::new();
    for w in leaves {
        *groups.entry(w.digits()[0]).or_default() += 1;
    }
    let counts: Vec<usize> = groups.values().copied().collect();
    let leaf = diam_pow(2, s);
    let mid = diam_pow(1, s);
    let mut best = diam_pow(0, s);
    for mask in 0..1u32 << counts.len() {
        let total = counts.iter().enumerate().fold(0.0, |acc, (i, &n)| {
            acc + if mask >> i & 1 == 1 { mid } else { (0..n).fold(0.0, |a, _| a + leaf) }
        });
        best = best.min(total);
    }
    best
}

fn content_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let all: Vec<TileWord> = TileWord::all(2).collect();
    let (mut checked, mut mismatched) = (0, 0);
    for instance in 0..CONTENT_INSTANCES {
        let size = 1 + instance % 8;
        // Half the instances concentrate on a few parents so coarse covers win.
        let pool: Vec<TileWord> = if instance % 2 == 0 {
            let parents: Vec<u8> = (0..2).map(|_| rng.gen_range(0..16)).collect();
            all.iter().filter(|w| parents.contains(&w.digits()[0])).cloned().collect()
        } else {
            all.clone()
        };
        let mut picked = Vec::new();
        while picked.len() < size.min(pool.len()) {
            let w = pool[rng.gen_range(0..pool.len())].clone();
            if !picked.contains(&w) {
                picked.push(w);
            }
        }
        let k = TileSet::new(2, picked.clone()).unwrap();
        for s in CONTENT_EXPONENTS {
            checked += 1;
            if dyadic_content(&k, s).unwrap() != exhaustive_content(&picked, s) {
                mismatched += 1;
            }
        }
    }
    outcome(
        mismatched == 0,
        format!("{mismatched} mismatches in {checked} (set, s) pairs, exact equality required"),
    )
}

fn frostman() -> Outcome {
    let exponents = [0.5, 1.0, 1.5, 2.0, 2.25, 2.5, 2.75];
    let (mut measures, mut node_violations, mut ball_violations, mut worst) = (0, 0, 0, 0.0_f64);
    let mut n_max = 0;
    for k in [1usize, 2, 4, 8, 16] {
        for depth in 1..=4 {
            let set = k_map_set(k, depth).unwrap();
            let balls = frostman_test_balls(&set, FROSTMAN_BALLS, SEED + depth as u64);
            for s in exponents {
                let mu = frostman_measure(&set, s).unwrap();
                measures += 1;
                node_violations += frostman_node_violations(&mu).len();
                let r = frostman_ball_check(&mu, &balls).unwrap();
                ball_violations += r.violations;
                worst = worst.max(r.worst_ratio / r.n_measured as f64);
                n_max = n_max.max(r.n_measured);
            }
        }
    }
    outcome(
        node_violations == 0 && ball_violations == 0,
        format!(
            "{measures} measures: {node_violations} node violations, {ball_violations} ball violations over {FROSTMAN_BALLS} balls each (worst mu(B)/(N C r^s) = {worst:.3}, N <= {n_max})"
        ),
    )
}

fn partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut worst_sum = 0.0_f64;
    let mut norm: Vec<[f64; 2]> = Vec::new();
    for level in 1..=4 {
        let family = sibling_family(level).unwrap();
        for _ in 0..PARTITION_POINTS / 4 {
            let t = &family.tiles()[rng.gen_range(0..family.len())];
            let x = sample_in_tile(&t.word, level + 12, &mut rng);
            worst_sum = worst_sum.max((family.sum(x) - 1.0).abs());
        }
        let rows = derivative_scaling_check(&family, &standard_words(), 48, SEED + level as u64).unwrap();
        let sup = |d: usize| rows.iter().filter(|r| r.word.len() == d).fold(0.0_f64, |a, r| a.max(r.normalized_sup));
        norm.push([sup(1), sup(2)]);
    }
    let spread = |d: usize| {
        let v: Vec<f64> = norm.iter().map(|n| n[d]).collect();
        v.iter().copied().fold(0.0, f64::max) / v.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let (s1, s2) = (spread(0), spread(1));
    outcome(
        worst_sum <= PARTITION_SUM_TOL && s1 < PARTITION_SPREAD && s2 < PARTITION_SPREAD,
        format!(
            "max |sum - 1| = {worst_sum:.1e} on {PARTITION_POINTS} points; normalized sup spread over levels 1-4: {s1:.2}x for |a|=1, {s2:.2}x for |a|=2 (tol {PARTITION_SPREAD}x)"
        ),
    )
}

fn identities() -> Outcome {
    let report = run_suite(Suite::All, SEED).unwrap();
    let mut per: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for c in &report.checks {
        let e = per.entry(c.identity.as_str()).or_default();
        e.0 += 1;
        e.1 += usize::from(c.passed);
    }
    let points: BTreeMap<&str, usize> = per
        .keys()
        .map(|&id| {
            let mut pts: Vec<[u64; 3]> = report
                .checks
                .iter()
                .filter(|c| c.identity == id)
                .map(|c| c.point.map(f64::to_bits))
                .collect();
            pts.sort_unstable();
            pts.dedup();
            (id, pts.len())
        })
        .collect();
    let harmonic = report
        .checks
        .iter()
        .filter(|c| c.identity == "dist_form_lip" && c.case == "harmonic")
        .all(|c| c.lhs == 0.0 && c.passed);
    let enough = ["product_rule", "switch_variables", "ibp", "dist_form_lip", "inversion"]
        .iter()
        .all(|id| points.get(id).copied().unwrap_or(0) >= 3);
    let trend = report.trend.as_ref().is_some_and(|t| t.monotone);
    let summary: Vec<String> = per.iter().map(|(id, (n, ok))| format!("{id} {ok}/{n}")).collect();
    let gaps = report
        .trend
        .as_ref()
        .map(|t| t.gaps.iter().map(|g| format!("{g:.1e}")).collect::<Vec<_>>().join(" > "))
        .unwrap_or_default();
    outcome(
        report.passed && harmonic && enough && trend,
        format!("{}; harmonic case vanishes: {harmonic}; mollified gaps {gaps}", summary.join(", ")),
    )
}

fn sweep_config(kind: ExponentKind) -> ExperimentConfig {
    let (values, depths): (Vec<f64>, Vec<usize>) = match kind {
        ExponentKind::Holder => (vec![0.25, 0.5, 0.75], vec![2, 3]),
        _ => (vec![2.5, 3.0, 3.5, 4.0], vec![2, 3, 4]),
    };
    ExperimentConfig {
        group: None,
        set: OneOrMany::Many(
            [1, 2, 4, 8, 16]
                .iter()
                .map(|&k| SetConfig {
                    kept_digits: k_map_digits(k).unwrap(),
                    depth: OneOrMany::Many(depths.clone()),
                })
                .collect(),
        ),
        exponents: values
            .iter()
            .map(|&v| match kind {
                ExponentKind::Holder => ExponentConfig::Delta { delta: v },
                _ => ExponentConfig::Rho { rho: v },
            })
            .collect(),
        budgets: Budgets::default(),
        seed: SEED,
        output: "unused".into(),
    }
}

fn stability(rows: &[Row]) -> Outcome {
    let mut groups: BTreeMap<(String, u64), Vec<&Row>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.set_id.clone(), r.exponent.to_bits())).or_default().push(r);
    }
    let spread = |v: &[f64]| v.iter().copied().fold(0.0, f64::max) / v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut positive = true;
    let (mut worst_lo, mut worst_up, mut worst_at) = (1.0_f64, 1.0_f64, String::new());
    for ((set, e), g) in &groups {
        positive &= g.iter().all(|r| !(r.content > 0.0) || r.lower.is_some_and(|l| l > 0.0));
        let lo: Vec<f64> = g.iter().filter_map(|r| r.ratio_lo).collect();
        let up: Vec<f64> = g.iter().filter_map(|r| r.ratio_up).collect();
        if lo.len() != g.len() || up.len() != g.len() {
            positive = false;
            continue;
        }
        let (a, b) = (spread(&lo), spread(&up));
        if a > worst_lo {
            worst_lo = a;
            worst_at = format!("{set} at {}", f64::from_bits(*e));
        }
        worst_up = worst_up.max(b);
    }
    outcome(
        positive && worst_lo < RATIO_SPREAD && worst_up < RATIO_SPREAD,
        format!(
            "{} rows, lower > 0 throughout: {positive}; worst spread across depth: ratio_lo {worst_lo:.2}x ({worst_at}), ratio_up {worst_up:.2}x (tol {RATIO_SPREAD}x)",
            rows.len()
        ),
    )
}

fn main() {
    let mut results = Vec::new();
    results.push(criterion(1, "group axioms", Duration::from_secs(1), group_axioms));
    results.push(criterion(2, "kernel homogeneity", Duration::from_secs(5), homogeneity));
    results.push(criterion(3, "calibration and inversion", Duration::from_secs(60), calibration));
    results.push(criterion(4, "content DP against exhaustive covers", Duration::from_secs(30), content_oracle));
    results.push(criterion(5, "Frostman bounds", Duration::from_secs(10), frostman));
    results.push(criterion(6, "partition of unity", Duration::from_secs(60), partition));
    results.push(criterion(7, "identity suite", Duration::from_secs(300), identities));

    let campanato = sweep_config(ExponentKind::Campanato);
    let holder = sweep_config(ExponentKind::Holder);
    let mut csvs = Vec::new();
    results.push(criterion(8, "Campanato comparability sweep", Duration::from_secs(1800), || {
        let out = run(&campanato).unwrap();
        csvs.push(to_csv(&out.rows).unwrap());
        stability(&out.rows)
    }));
    results.push(criterion(9, "Holder comparability sweep", Duration::from_secs(900), || {
        let out = run(&holder).unwrap();
        csvs.push(to_csv(&out.rows).unwrap());
        stability(&out.rows)
    }));
    results.push(criterion(10, "determinism", Duration::from_secs(2700), || {
        let again = [
            to_csv(&run(&campanato).unwrap().rows).unwrap(),
            to_csv(&run(&holder).unwrap().rows).unwrap(),
        ];
        let same = csvs.len() == 2 && csvs.iter().zip(&again).all(|(a, b)| a.as_bytes() == b.as_bytes());
        outcome(
            same,
            format!(
                "reran both sweeps with seed {SEED}: CSVs byte-identical: {same} ({} + {} bytes)",
                again[0].len(),
                again[1].len()
            ),
        )
    }));

    let failed = results.iter().filter(|&&p| !p).count();
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
