//! Comparability experiments: a config names self-similar sets, depths and
//! exponents, and a run produces one CSV row per (set, depth, exponent) plus
//! a JSON sidecar with the full estimates.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{capacity_bounds, Budgets, CapacityBounds, Exponent, ExponentKind};
use crate::error::{Error, Result};
use crate::group::GroupSpec;
use crate::tiling::{TileSet, ALPHABET, DEPTH_CAP};

/// One value or a list of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(t) => vec![t.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetConfig {
    pub kept_digits: Vec<u8>,
    pub depth: OneOrMany<usize>,
}

impl SetConfig {
    /// `k{count}-{digits in hex}`, e.g. `k4-05af`.
    pub fn id(&self) -> String {
        let mut d = self.kept_digits.clone();
        d.sort_unstable();
        d.dedup();
        let hex: String = d.iter().map(|&j| char::from_digit(j as u32, 16).unwrap_or('?')).collect();
        format!("k{}-{hex}", d.len())
    }
}

/// An exponent as `{"kind": ..., "value": ...}` or the shorthands
/// `{"rho": ...}` and `{"delta": ...}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExponentConfig {
    Full(Exponent),
    Rho { rho: f64 },
    Delta { delta: f64 },
}

impl ExponentConfig {
    pub fn exponent(&self) -> Exponent {
        match *self {
            ExponentConfig::Full(e) => e,
            ExponentConfig::Rho { rho } => Exponent::campanato(rho),
            ExponentConfig::Delta { delta } => Exponent::holder(delta),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Group presentation file; must describe `H^1`. Relative paths resolve
    /// against the config file.
    #[serde(default)]
    pub group: Option<PathBuf>,
    pub set: OneOrMany<SetConfig>,
    #[serde(default)]
    pub exponents: Vec<ExponentConfig>,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub seed: u64,
    /// Prefix for `<output>.csv` and `<output>.json`.
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and checks it, including the group file if any.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(g) = &cfg.group {
            if g.is_relative() {
                cfg.group = Some(path.parent().unwrap_or(Path::new(".")).join(g));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sets(&self) -> Vec<SetConfig> {
        self.set.to_vec()
    }

    pub fn exponent_list(&self) -> Vec<Exponent> {
        self.exponents.iter().map(ExponentConfig::exponent).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(path) = &self.group {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read group file {}: {e}", path.display())))?;
            let spec = GroupSpec::from_json(&text)?;
            if spec.to_document() != GroupSpec::heisenberg().to_document() {
                return Err(Error::Config(
                    "capacities are only instantiated for H^1 with [e1, e2] = e3".into(),
                ));
            }
        }
        let sets = self.sets();
        if sets.is_empty() {
            return Err(Error::Config("no sets given".into()));
        }
        for s in &sets {
            if s.kept_digits.is_empty() {
                return Err(Error::Config("kept_digits must be nonempty".into()));
            }
            if let Some(d) = s.kept_digits.iter().find(|&&d| d as usize >= ALPHABET) {
                return Err(Error::Config(format!("digit {d} is outside 0..{ALPHABET}")));
            }
            let depths = s.depth.to_vec();
            if depths.is_empty() {
                return Err(Error::Config(format!("set {} has no depth", s.id())));
            }
            if let Some(d) = depths.iter().find(|&&d| d > DEPTH_CAP) {
                return Err(Error::Config(format!("depth {d} exceeds the cap {DEPTH_CAP}")));
            }
        }
        for e in self.exponent_list() {
            e.validate()?;
        }
        self.budgets.validate()
    }
}

pub const CSV_HEADER: [&str; 13] = [
    "set_id",
    "depth",
    "exponent_kind",
    "exponent",
    "s",
    "content",
    "mu_mass",
    "seminorm",
    "lower",
    "upper",
    "ratio_lo",
    "ratio_up",
    "seed",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub set_id: String,
    pub depth: usize,
    pub exponent_kind: ExponentKind,
    pub exponent: f64,
    pub s: f64,
    pub content: f64,
    pub mu_mass: f64,
    pub seminorm: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub ratio_lo: Option<f64>,
    pub ratio_up: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub set_id: String,
    pub kept_digits: Vec<u8>,
    pub depth: usize,
    pub bounds: CapacityBounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub version: String,
    pub config: ExperimentConfig,
    pub results: Vec<ResultRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<Row>,
    pub records: Vec<ResultRecord>,
}

/// Runs every (set, depth, exponent) job. Jobs run concurrently; the output
/// is ordered by set (config order), depth, then exponent kind and value.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let mut jobs = Vec::new();
    for (si, set) in config.sets().into_iter().enumerate() {
        let mut depths = set.depth.to_vec();
        depths.sort_unstable();
        depths.dedup();
        for d in depths {
            for e in config.exponent_list() {
                jobs.push((si, set.clone(), d, e));
            }
        }
    }
    jobs.sort_by(|a, b| {
        (a.0, a.2, a.3.kind.as_str())
            .cmp(&(b.0, b.2, b.3.kind.as_str()))
            .then(a.3.value.total_cmp(&b.3.value))
    });
    jobs.dedup_by(|a, b| a.0 == b.0 && a.2 == b.2 && a.3 == b.3);
    let records = jobs
        .par_iter()
        .map(|(_, set, depth, e)| -> Result<ResultRecord> {
            let k = TileSet::self_similar(&set.kept_digits, *depth)?;
            let mut bounds = capacity_bounds(&k, *e, &config.budgets, config.seed)?;
            bounds.set = set.id();
            Ok(ResultRecord {
                set_id: set.id(),
                kept_digits: set.kept_digits.clone(),
                depth: *depth,
                bounds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = records
        .iter()
        .map(|r| {
            let b = &r.bounds;
            Row {
                set_id: r.set_id.clone(),
                depth: r.depth,
                exponent_kind: b.exponent.kind,
                exponent: b.exponent.value,
                s: b.s,
                content: b.content,
                mu_mass: b.mu_mass,
                seminorm: b.seminorm.as_ref().map(|m| m.value),
                lower: b.lower,
                upper: b.upper,
                ratio_lo: b.ratio_lower(),
                ratio_up: b.ratio_upper(),
                seed: config.seed,
            }
        })
        .collect();
    Ok(ExperimentOutput { rows, records })
}

pub fn to_csv(rows: &[Row]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

pub fn csv_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, "csv")
}

pub fn json_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, "json")
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Runs the experiment and writes `<output>.csv` and `<output>.json`.
pub fn run_and_write(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let out = run(config)?;
    if let Some(dir) = config.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(csv_path(&config.output), to_csv(&out.rows)?)?;
    let sidecar = Sidecar {
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        results: out.records.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(json_path(&config.output), json)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    #[test]
    fn parses_shorthand_exponents_and_depth_lists() {
        let c = config(
            r#"{"set": {"kept_digits": [0, 15], "depth": [2, 3]},
                "exponents": [{"rho": 3}, {"delta": 0.5}, {"kind": "campanato", "value": 2.5}],
                "seed": 4, "output": "out/x"}"#,
        );
        assert_eq!(c.sets()[0].depth.to_vec(), vec![2, 3]);
        assert_eq!(
            c.exponent_list(),
            vec![Exponent::campanato(3.0), Exponent::holder(0.5), Exponent::campanato(2.5)]
        );
        assert_eq!(c.sets()[0].id(), "k2-0f");
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            r#"{"set": {"kept_digits": [], "depth": 2}, "output": "o"}"#,
            r#"{"set": {"kept_digits": [16], "depth": 2}, "output": "o"}"#,
            r#"{"set": {"kept_digits": [0], "depth": 9}, "output": "o"}"#,
            r#"{"set": {"kept_digits": [0], "depth": 2}, "exponents": [{"rho": 5}], "output": "o"}"#,
            r#"{"set": {"kept_digits": [0], "depth": 2}, "exponents": [{"delta": 1}], "output": "o"}"#,
        ];
        for b in bad {
            assert!(config(b).validate().is_err(), "{b}");
        }
        assert!(ExperimentConfig::from_json(r#"{"set": 3, "output": "o"}"#).is_err());
    }

    #[test]
    fn empty_exponent_list_gives_header_only() {
        let c = config(r#"{"set": {"kept_digits": [0], "depth": 2}, "output": "o"}"#);
        let out = run(&c).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(to_csv(&out.rows).unwrap(), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn full_set_content_is_the_diameter() {
        let c = config(r#"{"set": {"kept_digits": [0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15], "depth": 3},
                           "exponents": [{"rho": 3}], "output": "o"}"#);
        let out = run(&c).unwrap();
        assert_eq!(out.rows.len(), 1);
        let diam = crate::tiling::tile_geometry().diam;
        assert!((out.rows[0].content - diam).abs() < 1e-12);
        assert!(out.rows[0].lower.unwrap() > 0.0);
    }

    #[test]
    fn rows_are_sorted() {
        let c = config(
            r#"{"set": [{"kept_digits": [0, 15], "depth": [3, 2]}, {"kept_digits": [0], "depth": 2}],
                "exponents": [{"rho": 3}, {"delta": 0.5}, {"rho": 2.5}],
                "budgets": {"balls": 16, "pairs": 32}, "output": "o"}"#,
        );
        let out = run(&c).unwrap();
        let keys: Vec<_> = out.rows.iter().map(|r| (r.set_id.clone(), r.depth, r.exponent_kind, r.exponent)).collect();
        assert_eq!(keys.len(), 9);
        assert_eq!(keys[0], ("k2-0f".into(), 2, ExponentKind::Campanato, 2.5));
        assert_eq!(keys[1], ("k2-0f".into(), 2, ExponentKind::Campanato, 3.0));
        assert_eq!(keys[2], ("k2-0f".into(), 2, ExponentKind::Holder, 0.5));
        assert_eq!(keys[3].1, 3);
        assert_eq!(keys[8].0, "k1-0");
    }
}
