//! Per-neuron target search for new synapses.
//!
//! A search starts at the global root and gathers candidates: children that
//! satisfy the acceptance criterion or are actual neurons. One candidate is
//! drawn with probability proportional to its attraction. If it is a virtual
//! neuron the search gathers again from there, until an actual neuron is
//! chosen. Each gathering pass is one descent and is counted separately.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{acceptance, Theta, Vec3};
use crate::octree::{ElementKind, ExpansionCounter, Neuron, NeuronId, NodeId, NodeSummary, Octree};
use crate::population::Population;
use crate::rng::{KeyedRng, Purpose};

pub const DEFAULT_KERNEL_SIGMA: f64 = 750.0;

/// Searches always start from the axon side and look for dendrites.
pub const SEARCH_KIND: ElementKind = ElementKind::Axon;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub theta: Theta,
    pub kernel_sigma: f64,
    pub rng_seed: u64,
    /// Never accept virtual nodes: every candidate is an actual neuron.
    pub oracle_mode: bool,
    /// Keep per-descent counters for every search.
    pub record_descents: bool,
}

impl SearchConfig {
    pub fn new(theta: Theta, kernel_sigma: f64, rng_seed: u64) -> Result<Self> {
        if !(kernel_sigma.is_finite() && kernel_sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("kernel_sigma must be positive, got {kernel_sigma}")));
        }
        Ok(Self {
            theta,
            kernel_sigma,
            rng_seed,
            oracle_mode: false,
            record_descents: false,
        })
    }

    pub fn with_oracle_mode(mut self, on: bool) -> Self {
        self.oracle_mode = on;
        self
    }

    pub fn with_recording(mut self, on: bool) -> Self {
        self.record_descents = on;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DescentStats {
    pub first_descent: ExpansionCounter,
    pub subsequent_descents: Vec<ExpansionCounter>,
}

impl DescentStats {
    pub fn chosen_path_length(&self) -> usize {
        1 + self.subsequent_descents.len()
    }

    pub fn total(&self) -> u64 {
        self.first_descent.total() + self.subsequent_descents.iter().map(|c| c.total()).sum::<u64>()
    }

    pub fn descents(&self) -> impl Iterator<Item = &ExpansionCounter> {
        std::iter::once(&self.first_descent).chain(self.subsequent_descents.iter())
    }

    fn clear(&mut self) {
        self.first_descent = ExpansionCounter::default();
        self.subsequent_descents.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SynapseProposal {
    /// Axon side.
    pub source: NeuronId,
    /// Dendrite side.
    pub target: NeuronId,
}

/// A node as seen by a search: an opaque handle plus its summary.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<H> {
    pub handle: H,
    pub summary: NodeSummary,
}

/// Read access to a tree for target searches. The distributed simulator
/// implements this over a rank's partial view with on-demand downloads.
pub trait SearchTree {
    type Handle: Copy;

    fn root_candidate(&mut self) -> Result<Candidate<Self::Handle>>;

    /// Appends the children of an inner node with positive weight of `kind`
    /// to `out`, in Morton order, and counts each one as inspected.
    fn children(
        &mut self,
        node: &Candidate<Self::Handle>,
        kind: ElementKind,
        counter: &mut ExpansionCounter,
        out: &mut Vec<Candidate<Self::Handle>>,
    ) -> Result<()>;
}

impl SearchTree for &Octree {
    type Handle = NodeId;

    fn root_candidate(&mut self) -> Result<Candidate<NodeId>> {
        let root = Octree::root(self);
        Ok(Candidate {
            handle: root,
            summary: *self.summary(root),
        })
    }

    fn children(
        &mut self,
        node: &Candidate<NodeId>,
        kind: ElementKind,
        counter: &mut ExpansionCounter,
        out: &mut Vec<Candidate<NodeId>>,
    ) -> Result<()> {
        let tree: &Octree = self;
        let n = tree.node(node.handle);
        if n.is_leaf() {
            return Err(Error::ExpandLeaf);
        }
        let before = out.len();
        out.extend(n.children().iter().filter_map(|&(_, handle)| {
            let summary = tree.summary(handle);
            (summary.weight(kind) > 0).then_some(Candidate {
                handle,
                summary: *summary,
            })
        }));
        counter.nodes_inspected += (out.len() - before) as u64;
        Ok(())
    }
}

fn accepts(summary: &NodeSummary, q: &Vec3, kind: ElementKind, config: &SearchConfig) -> bool {
    if config.oracle_mode {
        return false;
    }
    let Some(c) = summary.centroid(kind) else {
        return false;
    };
    // A centroid on top of the searcher cannot be approximated; expand it.
    acceptance(summary.bbox.max_side(), q.distance(&c), config.theta).unwrap_or(false)
}

/// One descent from `root`: expands nodes until every gathered node either
/// satisfies the acceptance criterion or is an actual neuron. The searcher's
/// own leaf is never returned.
pub fn gather_candidates<T: SearchTree>(
    tree: &mut T,
    root: &Candidate<T::Handle>,
    q: Vec3,
    searcher: NeuronId,
    kind: ElementKind,
    config: &SearchConfig,
    counter: &mut ExpansionCounter,
) -> Result<Vec<Candidate<T::Handle>>> {
    if let Some(id) = root.summary.leaf {
        let usable = id != searcher && root.summary.weight(kind) > 0;
        return Ok(if usable { vec![*root] } else { Vec::new() });
    }
    let mut nodes = Vec::new();
    let mut stack = vec![*root];
    let mut children = Vec::with_capacity(8);
    while let Some(node) = stack.pop() {
        children.clear();
        tree.children(&node, kind, counter, &mut children)?;
        for &child in &children {
            match child.summary.leaf {
                Some(id) if id == searcher => {}
                Some(_) => nodes.push(child),
                None if accepts(&child.summary, &q, kind, config) => nodes.push(child),
                None => {
                    counter.stack_pushes += 1;
                    stack.push(child);
                }
            }
        }
    }
    Ok(nodes)
}

/// `weight * exp(-|q - c|^2 / sigma^2)`.
pub fn attraction_weight(q: Vec3, candidate_centroid: Vec3, candidate_weight: u64, kernel_sigma: f64) -> f64 {
    if candidate_weight == 0 {
        return 0.0;
    }
    let d2 = q.distance_squared(&candidate_centroid);
    candidate_weight as f64 * (-d2 / (kernel_sigma * kernel_sigma)).exp()
}

/// Index drawn with probability `weights[i] / sum(weights)` from a single
/// uniform `u` in `[0, 1)`. `None` when no weight is positive.
pub fn choose_with(weights: &[f64], u: f64) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return None;
    }
    let target = u * total;
    let mut cumulative = 0.0;
    let mut last_positive = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        cumulative += w;
        last_positive = Some(i);
        if target < cumulative {
            return Some(i);
        }
    }
    last_positive
}

/// Consumes exactly one draw from `rng`.
pub fn choose<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let u: f64 = rng.random();
    choose_with(weights, u)
}

fn candidate_weights<H>(nodes: &[Candidate<H>], q: Vec3, kind: ElementKind, sigma: f64) -> Vec<f64> {
    nodes
        .iter()
        .map(|c| match c.summary.centroid(kind) {
            Some(centroid) => attraction_weight(q, centroid, c.summary.weight(kind), sigma),
            None => 0.0,
        })
        .collect()
}

/// Runs the full search for one vacant axon of `searcher`. `search_index`
/// distinguishes multiple axons of the same neuron in the random streams.
pub fn find_target<T: SearchTree>(
    tree: &mut T,
    searcher: &Neuron,
    config: &SearchConfig,
    keys: &KeyedRng,
    search_index: u32,
    stats: &mut DescentStats,
) -> Result<Option<SynapseProposal>> {
    stats.clear();
    let kind = SEARCH_KIND.opposite();
    let q = searcher.position;
    let mut current = tree.root_candidate()?;
    let mut descent = 0u32;
    loop {
        if let Some(id) = current.summary.leaf {
            if id == searcher.id || current.summary.weight(kind) == 0 {
                return Ok(None);
            }
            return Ok(Some(SynapseProposal {
                source: searcher.id,
                target: id,
            }));
        }
        let mut counter = ExpansionCounter::default();
        let nodes = gather_candidates(tree, &current, q, searcher.id, kind, config, &mut counter)?;
        if descent == 0 {
            stats.first_descent = counter;
        } else {
            stats.subsequent_descents.push(counter);
        }
        let weights = candidate_weights(&nodes, q, kind, config.kernel_sigma);
        let u = keys.descent_draw(searcher.id.0, search_index, descent);
        let Some(i) = choose_with(&weights, u) else {
            return Ok(None);
        };
        current = nodes[i];
        descent += 1;
    }
}

/// First-descent candidate list with normalized selection probabilities.
pub fn candidate_distribution(
    tree: &Octree,
    searcher: &Neuron,
    config: &SearchConfig,
) -> Result<Vec<(NodeSummary, f64)>> {
    let kind = SEARCH_KIND.opposite();
    let mut view = tree;
    let root = view.root_candidate()?;
    let mut counter = ExpansionCounter::default();
    let nodes = gather_candidates(&mut view, &root, searcher.position, searcher.id, kind, config, &mut counter)?;
    let weights = candidate_weights(&nodes, searcher.position, kind, config.kernel_sigma);
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Ok(Vec::new());
    }
    Ok(nodes.iter().zip(&weights).map(|(c, w)| (c.summary, w / total)).collect())
}

/// Exact probability that a search by `searcher` ends at each neuron,
/// obtained by following every branch of the descent instead of sampling.
pub fn exact_target_distribution(
    tree: &Octree,
    searcher: &Neuron,
    config: &SearchConfig,
) -> Result<HashMap<NeuronId, f64>> {
    let kind = SEARCH_KIND.opposite();
    let mut view = tree;
    let mut out = HashMap::new();
    let root = view.root_candidate()?;
    let mut pending = vec![(root, 1.0f64)];
    while let Some((node, prob)) = pending.pop() {
        if let Some(id) = node.summary.leaf {
            if id != searcher.id && node.summary.weight(kind) > 0 {
                *out.entry(id).or_insert(0.0) += prob;
            }
            continue;
        }
        let mut counter = ExpansionCounter::default();
        let nodes = gather_candidates(&mut view, &node, searcher.position, searcher.id, kind, config, &mut counter)?;
        let weights = candidate_weights(&nodes, searcher.position, kind, config.kernel_sigma);
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            continue;
        }
        for (c, w) in nodes.into_iter().zip(weights) {
            if w > 0.0 {
                pending.push((c, prob * w / total));
            }
        }
    }
    Ok(out)
}

/// Per-descent record for the stats CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct DescentRecord {
    pub step: u64,
    pub neuron_id: u64,
    pub descent_index: u32,
    pub nodes_inspected: u64,
    pub stack_pushes: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregateStats {
    pub searches: u64,
    pub proposals: u64,
    pub no_partner: u64,
    pub first: ExpansionCounter,
    pub subsequent: ExpansionCounter,
    pub subsequent_count: u64,
    pub max_subsequent_inspected: u64,
    pub max_subsequent_pushes: u64,
    pub max_path_length: u64,
    /// Nodes touched while refreshing the tree before the searches.
    pub update_work: u64,
}

impl AggregateStats {
    pub fn record(&mut self, stats: &DescentStats, proposed: bool) {
        self.searches += 1;
        if proposed {
            self.proposals += 1;
        } else {
            self.no_partner += 1;
        }
        self.first += stats.first_descent;
        for c in &stats.subsequent_descents {
            self.subsequent += *c;
            self.subsequent_count += 1;
            self.max_subsequent_inspected = self.max_subsequent_inspected.max(c.nodes_inspected);
            self.max_subsequent_pushes = self.max_subsequent_pushes.max(c.stack_pushes);
        }
        self.max_path_length = self.max_path_length.max(stats.chosen_path_length() as u64);
    }

    pub fn merge(&mut self, other: &AggregateStats) {
        self.searches += other.searches;
        self.proposals += other.proposals;
        self.no_partner += other.no_partner;
        self.first += other.first;
        self.subsequent += other.subsequent;
        self.subsequent_count += other.subsequent_count;
        self.max_subsequent_inspected = self.max_subsequent_inspected.max(other.max_subsequent_inspected);
        self.max_subsequent_pushes = self.max_subsequent_pushes.max(other.max_subsequent_pushes);
        self.max_path_length = self.max_path_length.max(other.max_path_length);
        self.update_work += other.update_work;
    }

    pub fn mean_first(&self) -> f64 {
        ratio(self.first.nodes_inspected, self.searches)
    }

    pub fn mean_subsequent(&self) -> f64 {
        ratio(self.subsequent.nodes_inspected, self.subsequent_count)
    }

    /// All search counters: inspections plus stack pushes over every descent.
    pub fn search_work(&self) -> u64 {
        self.first.total() + self.subsequent.total()
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Default)]
pub struct UpdateOutcome {
    pub proposals: Vec<SynapseProposal>,
    pub stats: AggregateStats,
    /// Filled when `SearchConfig::record_descents` is set.
    pub records: Vec<DescentRecord>,
}

struct SearchResult {
    proposal: Option<SynapseProposal>,
    stats: DescentStats,
    neuron: NeuronId,
}

/// Runs every search for `neurons` against `tree` and returns results in
/// neuron order, then search order.
pub fn search_all<T, F>(make_view: F, neurons: &[Neuron], config: &SearchConfig, keys: &KeyedRng, parallel: bool) -> Result<UpdateOutcome>
where
    T: SearchTree,
    F: Fn() -> T + Sync,
{
    let per_neuron = |n: &Neuron| -> Result<Vec<SearchResult>> {
        let mut view = make_view();
        (0..n.vacant.get(SEARCH_KIND))
            .map(|search| {
                let mut stats = DescentStats::default();
                let proposal = find_target(&mut view, n, config, keys, search, &mut stats)?;
                Ok(SearchResult {
                    proposal,
                    stats,
                    neuron: n.id,
                })
            })
            .collect()
    };
    let results: Vec<Vec<SearchResult>> = if parallel {
        neurons.par_iter().map(per_neuron).collect::<Result<_>>()?
    } else {
        neurons.iter().map(per_neuron).collect::<Result<_>>()?
    };

    let mut outcome = UpdateOutcome::default();
    for r in results.iter().flatten() {
        outcome.stats.record(&r.stats, r.proposal.is_some());
        outcome.proposals.extend(r.proposal);
        if config.record_descents {
            for (i, c) in r.stats.descents().enumerate() {
                outcome.records.push(DescentRecord {
                    step: keys.step,
                    neuron_id: r.neuron.0,
                    descent_index: i as u32,
                    nodes_inspected: c.nodes_inspected,
                    stack_pushes: c.stack_pushes,
                });
            }
        }
    }
    Ok(outcome)
}

/// One update step's search phase: refresh the tree from the population,
/// then one search per vacant axon of every neuron.
pub fn connectivity_update(population: &Population, tree: &mut Octree, config: &SearchConfig, step: u64) -> Result<UpdateOutcome> {
    let update_work = tree.update_leaves_and_subtree(population.neurons())?;
    let keys = KeyedRng::new(config.rng_seed, step);
    let tree: &Octree = tree;
    let mut outcome = search_all(|| tree, population.neurons(), config, &keys, true)?;
    outcome.stats.update_work = update_work;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Synapse {
    pub source: NeuronId,
    pub target: NeuronId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Resolution {
    pub formed: Vec<Synapse>,
    pub unmatched: Vec<SynapseProposal>,
}

/// Grants proposals per target in a random order until the target runs out
/// of vacant dendrites. The order for each target comes from a stream keyed
/// by the target id, so the outcome does not depend on proposal order.
pub fn resolve_proposals(proposals: &[SynapseProposal], population: &mut Population, keys: &KeyedRng) -> Resolution {
    let mut by_target: BTreeMap<NeuronId, Vec<SynapseProposal>> = BTreeMap::new();
    for p in proposals {
        by_target.entry(p.target).or_default().push(*p);
    }
    let mut out = Resolution::default();
    for (target, mut group) in by_target {
        group.sort_unstable();
        let mut rng = keys.stream(Purpose::Resolve, target.0, 0, 0);
        group.shuffle(&mut rng);
        for p in group {
            let source_ok = population.get(p.source).is_some_and(|n| n.vacant.axons > 0);
            let target_ok = population.get(p.target).is_some_and(|n| n.vacant.dendrites > 0);
            if source_ok && target_ok && p.source != p.target {
                if let Some(n) = population.get_mut(p.source) {
                    n.vacant.axons -= 1;
                }
                if let Some(n) = population.get_mut(p.target) {
                    n.vacant.dendrites -= 1;
                }
                out.formed.push(Synapse {
                    source: p.source,
                    target: p.target,
                });
            } else {
                out.unmatched.push(p);
            }
        }
    }
    out
}
