//! Quadratic reference for partner selection. Works from the flat neuron
//! list only; no tree is involved.

use std::collections::BTreeMap;

use rand::Rng;

use crate::octree::{ElementKind, Neuron, NeuronId};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateDistribution {
    pub probabilities: BTreeMap<NeuronId, f64>,
}

impl CandidateDistribution {
    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn get(&self, id: NeuronId) -> f64 {
        self.probabilities.get(&id).copied().unwrap_or(0.0)
    }

    /// Half the L1 distance to another distribution given as id -> mass.
    pub fn total_variation<'a>(&self, other: impl IntoIterator<Item = (&'a NeuronId, &'a f64)>) -> f64 {
        let mut diff: BTreeMap<NeuronId, f64> = self.probabilities.clone();
        for (id, p) in other {
            *diff.entry(*id).or_insert(0.0) -= *p;
        }
        0.5 * diff.values().map(|d| d.abs()).sum::<f64>()
    }
}

/// Probability of each neuron being picked by `searcher` when every vacant
/// element of `kind` attracts with a Gaussian of width `kernel_sigma`.
pub fn naive_distribution(searcher: &Neuron, population: &[Neuron], kind: ElementKind, kernel_sigma: f64) -> CandidateDistribution {
    let q = searcher.position;
    let inv_s2 = 1.0 / (kernel_sigma * kernel_sigma);
    let mut raw = BTreeMap::new();
    let mut total = 0.0;
    for n in population {
        if n.id == searcher.id {
            continue;
        }
        let count = n.vacant.get(kind);
        if count == 0 {
            continue;
        }
        let dx = q.x - n.position.x;
        let dy = q.y - n.position.y;
        let dz = q.z - n.position.z;
        let w = f64::from(count) * (-(dx * dx + dy * dy + dz * dz) * inv_s2).exp();
        total += w;
        raw.insert(n.id, w);
    }
    if total.is_nan() || total <= 0.0 {
        return CandidateDistribution::default();
    }
    for w in raw.values_mut() {
        *w /= total;
    }
    CandidateDistribution { probabilities: raw }
}

/// Samples the naive distribution with one draw; ids are visited in
/// ascending order.
pub fn naive_pick<R: Rng + ?Sized>(
    searcher: &Neuron,
    population: &[Neuron],
    kind: ElementKind,
    kernel_sigma: f64,
    rng: &mut R,
) -> Option<NeuronId> {
    let dist = naive_distribution(searcher, population, kind, kernel_sigma);
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last = None;
    for (&id, &p) in &dist.probabilities {
        if p <= 0.0 {
            continue;
        }
        cumulative += p;
        last = Some(id);
        if u < cumulative {
            return Some(id);
        }
    }
    last
}
