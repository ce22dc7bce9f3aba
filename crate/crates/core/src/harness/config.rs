//! Experiment settings: a flat `key = value` file, overridden by flags of the
//! same names.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{Box3, Theta, Vec3};
use crate::octree::Neuron;
use crate::population::{enclosing_cube, parse_population, uniform_cube, Population, VacancyProfile, DEFAULT_CUBE_SIDE};
use crate::plasticity::DEFAULT_KERNEL_SIGMA;
use crate::distributed::is_admissible_rank_count;

/// Default output directory when `out` is not given.
pub const OUT_DIR_ENV: &str = "BH_PLASTICITY_OUT";
pub const DEFAULT_OUT_DIR: &str = "bh-out";

pub const KNOWN_KEYS: &[&str] = &[
    "name",
    "n",
    "theta",
    "sigma",
    "seed",
    "steps",
    "ranks",
    "population_file",
    "vacancy",
    "side",
    "draws",
    "populations",
    "out",
];

/// Raw settings in insertion-independent order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected key = value, found '{line}'"),
                });
            };
            let key = normalize_key(key.trim());
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("unknown key '{key}'"),
                });
            }
            map.insert(key, value.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(normalize_key(key), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// Entries of `other` replace ours.
    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }
}

fn normalize_key(key: &str) -> String {
    let key = key.replace('-', "_");
    if key == "population" {
        "population_file".into()
    } else {
        key
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PopulationSource {
    File(PathBuf),
    UniformCube { side: f64, profile: VacancyProfile },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub population: PopulationSource,
    /// Generator sizes, ascending. Ignored for file populations.
    pub sizes: Vec<usize>,
    pub thetas: Vec<Theta>,
    pub sigma: f64,
    pub seed: u64,
    pub steps: u64,
    pub ranks: Vec<usize>,
    pub profile: VacancyProfile,
    pub draws: u64,
    pub populations: u64,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let profile: VacancyProfile = s.get("vacancy").map_or(Ok(VacancyProfile::default()), str::parse)?;
        let side = parse_one(s, "side", DEFAULT_CUBE_SIDE)?;
        let population = match s.get("population_file") {
            Some(path) if !path.is_empty() => PopulationSource::File(PathBuf::from(path)),
            _ => PopulationSource::UniformCube { side, profile },
        };

        let mut sizes = s.get("n").map_or(Ok(vec![4096]), parse_sizes)?;
        sizes.sort_unstable();
        sizes.dedup();
        if let Some(&n) = sizes.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidConfig(format!("n = {n}: need at least 2 neurons")));
        }

        let thetas = s
            .get("theta")
            .unwrap_or("0.25")
            .split(',')
            .map(|t| {
                let v: f64 = t.trim().parse().map_err(|_| bad_value("theta", t))?;
                Theta::new(v)
            })
            .collect::<Result<Vec<_>>>()?;

        let ranks = s
            .get("ranks")
            .unwrap_or("1,8")
            .split(',')
            .map(|r| r.trim().parse::<usize>().map_err(|_| bad_value("ranks", r)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(&p) = ranks.iter().find(|&&p| !is_admissible_rank_count(p)) {
            return Err(Error::InvalidRankCount(p));
        }

        let steps = parse_one(s, "steps", 1u64)?;
        let draws = parse_one(s, "draws", 100_000u64)?;
        let populations = parse_one(s, "populations", 10u64)?;
        for (key, v) in [("steps", steps), ("draws", draws), ("populations", populations)] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{key} must be positive")));
            }
        }
        if thetas.is_empty() || ranks.is_empty() {
            return Err(Error::InvalidConfig("theta and ranks need at least one value".into()));
        }

        let out_dir = match s.get("out") {
            Some(o) if !o.is_empty() => PathBuf::from(o),
            _ => std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from),
        };

        Ok(Self {
            name: s.get("name").unwrap_or("experiment").to_string(),
            population,
            sizes,
            thetas,
            sigma: parse_one(s, "sigma", DEFAULT_KERNEL_SIGMA)?,
            seed: parse_one(s, "seed", 1u64)?,
            steps,
            ranks,
            profile,
            draws,
            populations,
            out_dir,
        })
    }

    /// One population per size, or the file population alone.
    pub fn populations(&self) -> Result<Vec<Population>> {
        match &self.population {
            PopulationSource::File(path) => Ok(vec![load_population_file(path)?]),
            PopulationSource::UniformCube { side, profile } => self
                .sizes
                .iter()
                .map(|&n| uniform_cube(n, *side, *profile, self.seed))
                .collect(),
        }
    }

    /// The smallest configured population.
    pub fn first_population(&self) -> Result<Population> {
        match &self.population {
            PopulationSource::File(path) => load_population_file(path),
            PopulationSource::UniformCube { side, profile } => uniform_cube(self.sizes[0], *side, *profile, self.seed),
        }
    }

    pub fn output_path(&self, suffix: &str) -> PathBuf {
        self.out_dir.join(format!("{}{suffix}.csv", self.name))
    }
}

/// Reads a population file and fits a bounding cube around it.
pub fn load_population_file(path: &Path) -> Result<Population> {
    let everything = Box3::cube(Vec3::splat(-f64::MAX / 4.0), f64::MAX / 2.0)?;
    let file = std::fs::File::open(path)?;
    let pop = parse_population(std::io::BufReader::new(file), everything)?;
    let neurons: Vec<Neuron> = pop.neurons().to_vec();
    if neurons.len() < 2 {
        return Err(Error::InvalidConfig(format!("{}: need at least 2 neurons", path.display())));
    }
    Population::new(enclosing_cube(&neurons)?, neurons)
}

fn bad_value(key: &str, value: &str) -> Error {
    Error::InvalidConfig(format!("bad value '{}' for {key}", value.trim()))
}

fn parse_one<T: std::str::FromStr>(s: &Settings, key: &str, default: T) -> Result<T> {
    match s.get(key) {
        None => Ok(default),
        Some(v) => v.trim().parse().map_err(|_| bad_value(key, v)),
    }
}

/// Comma-separated sizes; each entry is a count or `2^k`.
fn parse_sizes(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(|item| {
            let item = item.trim();
            if let Some(exp) = item.strip_prefix("2^") {
                let k: u32 = exp.parse().map_err(|_| bad_value("n", item))?;
                1usize.checked_shl(k).filter(|_| k < 48).ok_or_else(|| bad_value("n", item))
            } else {
                item.parse().map_err(|_| bad_value("n", item))
            }
        })
        .collect()
}
