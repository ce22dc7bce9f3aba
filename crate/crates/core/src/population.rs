//! Neuron populations: the uniform-cube generator and the text file format
//! `id x y z vacant_axons vacant_dendrites`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Box3, Vec3};
use crate::octree::{Neuron, NeuronId, Vacancy};
use crate::rng::{KeyedRng, Purpose};

pub const DEFAULT_CUBE_SIDE: f64 = 1000.0;

#[derive(Debug, Clone)]
pub struct Population {
    bounds: Box3,
    neurons: Vec<Neuron>,
    index: HashMap<NeuronId, usize>,
}

impl Population {
    pub fn new(bounds: Box3, neurons: Vec<Neuron>) -> Result<Self> {
        let mut index = HashMap::with_capacity(neurons.len());
        for (i, n) in neurons.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(Error::DuplicateId(n.id));
            }
            if !bounds.contains(&n.position) {
                return Err(Error::OutOfBounds {
                    id: n.id,
                    position: n.position.to_string(),
                });
            }
        }
        Ok(Self { bounds, neurons, index })
    }

    pub fn bounds(&self) -> Box3 {
        self.bounds
    }

    pub fn neurons(&self) -> &[Neuron] {
        &self.neurons
    }

    pub fn neurons_mut(&mut self) -> &mut [Neuron] {
        &mut self.neurons
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn get(&self, id: NeuronId) -> Option<&Neuron> {
        self.index.get(&id).map(|&i| &self.neurons[i])
    }

    pub fn get_mut(&mut self, id: NeuronId) -> Option<&mut Neuron> {
        self.index.get(&id).map(|&i| &mut self.neurons[i])
    }

    pub fn total_vacant(&self) -> u64 {
        self.neurons.iter().map(|n| n.vacant.total()).sum()
    }

    /// Adds the profile's elements to every neuron.
    pub fn replenish(&mut self, profile: &VacancyProfile, seed: u64, step: u64) {
        let keys = KeyedRng::new(seed, step);
        for n in &mut self.neurons {
            let add = profile.sample(&keys, n.id.0);
            n.vacant.axons += add.axons;
            n.vacant.dendrites += add.dendrites;
        }
    }
}

/// How many vacant elements each generated neuron starts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VacancyProfile {
    Fixed { axons: u32, dendrites: u32 },
    /// Independent uniform counts in `0..=max`.
    Uniform { max: u32 },
}

impl Default for VacancyProfile {
    fn default() -> Self {
        VacancyProfile::Fixed { axons: 1, dendrites: 1 }
    }
}

impl VacancyProfile {
    /// Elements added to neuron `id` under `keys`.
    pub fn sample(&self, keys: &KeyedRng, id: u64) -> Vacancy {
        match *self {
            VacancyProfile::Fixed { axons, dendrites } => Vacancy::new(axons, dendrites),
            VacancyProfile::Uniform { max } => {
                let mut rng = keys.stream(Purpose::Population, id, 1, 0);
                Vacancy::new(rng.random_range(0..=max), rng.random_range(0..=max))
            }
        }
    }
}

impl std::str::FromStr for VacancyProfile {
    type Err = Error;

    /// `fixed:A:D` or `uniform:MAX`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("vacancy profile '{s}' (expected fixed:A:D or uniform:MAX)"));
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["fixed", a, d] => Ok(VacancyProfile::Fixed {
                axons: a.parse().map_err(|_| bad())?,
                dendrites: d.parse().map_err(|_| bad())?,
            }),
            ["uniform", m] => Ok(VacancyProfile::Uniform {
                max: m.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// `n` neurons uniformly distributed in the cube `[0, side)^3`, ids `0..n`.
pub fn uniform_cube(n: usize, side: f64, profile: VacancyProfile, seed: u64) -> Result<Population> {
    let bounds = Box3::cube(Vec3::ZERO, side)?;
    let keys = KeyedRng::new(seed, 0);
    let mut rng = keys.stream(Purpose::Population, 0, 0, 0);
    let neurons = (0..n as u64)
        .map(|id| {
            let position = Vec3::new(
                rng.random_range(0.0..side),
                rng.random_range(0.0..side),
                rng.random_range(0.0..side),
            );
            Neuron {
                id: NeuronId(id),
                position,
                vacant: profile.sample(&keys, id),
            }
        })
        .collect();
    Population::new(bounds, neurons)
}

/// Parses population records. Lines starting with `#` and blank lines are
/// skipped. The bounds are supplied by the caller.
pub fn parse_population<R: BufRead>(reader: R, bounds: Box3) -> Result<Population> {
    let mut neurons = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let err = |message: String| Error::Parse { line: i + 1, message };
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let id: u64 = fields[0].parse().map_err(|_| err(format!("bad id '{}'", fields[0])))?;
        let mut coords = [0.0; 3];
        for (c, f) in coords.iter_mut().zip(&fields[1..4]) {
            *c = f.parse().map_err(|_| err(format!("bad coordinate '{f}'")))?;
        }
        let axons: u32 = fields[4].parse().map_err(|_| err(format!("bad axon count '{}'", fields[4])))?;
        let dendrites: u32 = fields[5]
            .parse()
            .map_err(|_| err(format!("bad dendrite count '{}'", fields[5])))?;
        neurons.push(Neuron {
            id: NeuronId(id),
            position: Vec3::new(coords[0], coords[1], coords[2]),
            vacant: Vacancy::new(axons, dendrites),
        });
    }
    Population::new(bounds, neurons)
}

pub fn read_population(path: &Path, bounds: Box3) -> Result<Population> {
    let file = std::fs::File::open(path)?;
    parse_population(std::io::BufReader::new(file), bounds)
}

/// Smallest cube anchored at the minimum coordinates that contains every
/// position under half-open containment.
pub fn enclosing_cube(neurons: &[Neuron]) -> Result<Box3> {
    let mut lo = Vec3::splat(f64::INFINITY);
    let mut hi = Vec3::splat(f64::NEG_INFINITY);
    for n in neurons {
        let p = n.position;
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    if !lo.is_finite() {
        return Err(Error::InvalidConfig("empty population".into()));
    }
    let extent = (hi - lo).max_component();
    let side = if extent > 0.0 { extent * (1.0 + 1e-9) + 1e-9 } else { 1.0 };
    Box3::cube(lo, side)
}

pub fn write_population<W: Write>(mut out: W, population: &Population) -> Result<()> {
    let mut buf = String::from("# id x y z vacant_axons vacant_dendrites\n");
    for n in population.neurons() {
        let _ = writeln!(
            buf,
            "{} {} {} {} {} {}",
            n.id, n.position.x, n.position.y, n.position.z, n.vacant.axons, n.vacant.dendrites
        );
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}
