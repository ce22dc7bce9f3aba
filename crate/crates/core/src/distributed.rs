//! In-process simulation of the parallel search over `p` ranks.
//!
//! The simulation space is cut into `8^L` branch cells (`L = ceil(log8 p)`)
//! and every rank owns a Morton-contiguous block of `8^L / p` cells, which is
//! always a box. Each rank builds one octree per owned cell. Per update step:
//!
//! 1. ranks refresh their local trees,
//! 2. all ranks exchange their branch roots and assemble the common upper
//!    tree above the branch cells,
//! 3. each rank searches for its local neurons; children of nodes owned by
//!    another rank are downloaded on demand and cached,
//! 4. proposals are routed to the owner of the target, which arbitrates,
//! 5. caches are discarded.
//!
//! Ranks run one after another in rank order; all cross-rank data goes
//! through explicit request/reply calls that are counted as messages.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::geometry::Box3;
use crate::octree::{ElementKind, ExpansionCounter, Neuron, NeuronId, NodeId, NodeSummary, Octree};
use crate::plasticity::{find_target, AggregateStats, Candidate, DescentStats, SearchConfig, SearchTree, Synapse, SynapseProposal, SEARCH_KIND};
use crate::rng::{KeyedRng, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct RankCounters {
    pub messages_sent: u64,
    pub nodes_downloaded: u64,
    pub local_work: u64,
}

/// One branch cell owned by a rank.
#[derive(Debug, Clone)]
pub struct BranchCell {
    /// Morton index among all `8^L` cells.
    pub cell_index: usize,
    pub bbox: Box3,
    pub tree: Option<Octree>,
    /// Indices into the rank's `local_neurons`.
    neurons: Vec<usize>,
}

/// Reference to a node in another rank's local tree, valid for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RemoteHandle {
    pub owner: usize,
    pub branch: u32,
    pub node: NodeId,
    pub generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemoteChild {
    pub handle: RemoteHandle,
    pub summary: NodeSummary,
}

#[derive(Debug, Clone)]
pub struct RankState {
    pub rank_id: usize,
    pub subdomain: Box3,
    pub local_neurons: Vec<Neuron>,
    pub branches: Vec<BranchCell>,
    pub counters: RankCounters,
    remote_cache: HashMap<RemoteHandle, Vec<RemoteChild>>,
    upper: Option<Arc<UpperTree>>,
    generation: u64,
    index: HashMap<NeuronId, usize>,
}

impl RankState {
    pub fn remote_cache(&self) -> &HashMap<RemoteHandle, Vec<RemoteChild>> {
        &self.remote_cache
    }

    pub fn upper_tree(&self) -> Option<&UpperTree> {
        self.upper.as_deref()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn owns(&self, id: NeuronId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn neuron_mut(&mut self, id: NeuronId) -> Option<&mut Neuron> {
        self.index.get(&id).map(|&i| &mut self.local_neurons[i])
    }

    /// Handle for the root of one of this rank's branch trees.
    pub fn branch_root_handle(&self, branch: usize) -> Option<RemoteHandle> {
        let b = self.branches.get(branch)?;
        let tree = b.tree.as_ref()?;
        Some(RemoteHandle {
            owner: self.rank_id,
            branch: branch as u32,
            node: tree.root(),
            generation: self.generation,
        })
    }

    fn node_summary(&self, handle: &RemoteHandle) -> Result<&NodeSummary> {
        if handle.owner != self.rank_id || handle.generation != self.generation {
            return Err(Error::StaleHandle(format!("{handle:?} (rank {} at generation {})", self.rank_id, self.generation)));
        }
        self.branches
            .get(handle.branch as usize)
            .and_then(|b| b.tree.as_ref())
            .and_then(|t| t.get(handle.node))
            .map(|n| &n.summary)
            .ok_or_else(|| Error::StaleHandle(format!("{handle:?} does not name a live node")))
    }

    /// Rebuilds every branch tree's summaries from the current vacancy counts.
    fn update_local_trees(&mut self) -> Result<u64> {
        let mut touched = 0;
        for b in &mut self.branches {
            if let Some(tree) = &mut b.tree {
                let neurons: Vec<Neuron> = b.neurons.iter().map(|&i| self.local_neurons[i]).collect();
                touched += tree.update_leaves_and_subtree(&neurons)?;
            }
        }
        Ok(touched)
    }

    fn branch_message(&self) -> BranchRootMessage {
        BranchRootMessage {
            rank_id: self.rank_id,
            roots: self
                .branches
                .iter()
                .enumerate()
                .map(|(i, b)| BranchRoot {
                    cell_index: b.cell_index,
                    branch: i as u32,
                    bbox: b.bbox,
                    summary: b.tree.as_ref().map(|t| *t.summary(t.root())),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRoot {
    pub cell_index: usize,
    pub branch: u32,
    pub bbox: Box3,
    /// `None` for a cell without neurons.
    pub summary: Option<NodeSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRootMessage {
    pub rank_id: usize,
    pub roots: Vec<BranchRoot>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpperChild {
    Upper(u32),
    Branch { owner: usize, branch: u32, summary: NodeSummary },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpperNode {
    pub summary: NodeSummary,
    pub children: Vec<UpperChild>,
}

/// Tree above the branch cells, identical on every rank.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperTree {
    pub nodes: Vec<UpperNode>,
    pub root: Option<UpperChild>,
}

impl UpperTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root_summary(&self) -> Option<NodeSummary> {
        self.root.map(|r| self.child_summary(&r))
    }

    pub fn child_summary(&self, c: &UpperChild) -> NodeSummary {
        match c {
            UpperChild::Upper(i) => self.nodes[*i as usize].summary,
            UpperChild::Branch { summary, .. } => *summary,
        }
    }

    fn assemble(bounds: Box3, level: u32, messages: &[BranchRootMessage]) -> Self {
        let mut slots: BTreeMap<usize, (usize, &BranchRoot)> = BTreeMap::new();
        for m in messages {
            for r in &m.roots {
                slots.insert(r.cell_index, (m.rank_id, r));
            }
        }
        let mut tree = UpperTree {
            nodes: Vec::new(),
            root: None,
        };
        tree.root = tree.build(bounds, 0, level, 0, &slots);
        tree
    }

    fn build(&mut self, bbox: Box3, depth: u32, level: u32, cell: usize, slots: &BTreeMap<usize, (usize, &BranchRoot)>) -> Option<UpperChild> {
        if depth == level {
            let (owner, root) = slots.get(&cell)?;
            return root.summary.map(|summary| UpperChild::Branch {
                owner: *owner,
                branch: root.branch,
                summary,
            });
        }
        let children: Vec<UpperChild> = (0..8)
            .filter_map(|oct| self.build(bbox.octant(oct), depth + 1, level, cell * 8 + oct, slots))
            .collect();
        if children.is_empty() {
            return None;
        }
        // A cell holding a single neuron is a leaf in the full tree as well.
        if let [only] = children.as_slice() {
            let s = self.child_summary(only);
            if s.is_leaf() {
                let summary = NodeSummary { bbox, ..s };
                let idx = self.nodes.len() as u32;
                self.nodes.push(UpperNode {
                    summary,
                    children: Vec::new(),
                });
                return Some(UpperChild::Upper(idx));
            }
        }
        let summaries: Vec<NodeSummary> = children.iter().map(|c| self.child_summary(c)).collect();
        let summary = NodeSummary::aggregate(bbox, summaries.iter());
        let idx = self.nodes.len() as u32;
        self.nodes.push(UpperNode { summary, children });
        Some(UpperChild::Upper(idx))
    }
}

pub fn is_admissible_rank_count(p: usize) -> bool {
    p.is_power_of_two()
}

/// Depth of the branch cells for `p` ranks.
pub fn branch_level(p: usize) -> u32 {
    let k = p.trailing_zeros();
    k.div_ceil(3)
}

/// All cells at `level` in Morton order.
pub fn cells_at_level(bounds: Box3, level: u32) -> Vec<Box3> {
    let mut cells = vec![bounds];
    for _ in 0..level {
        cells = cells.iter().flat_map(|c| (0..8).map(move |o| c.octant(o))).collect();
    }
    cells
}

fn cell_of(bounds: Box3, level: u32, p: &crate::geometry::Vec3) -> usize {
    let mut b = bounds;
    let mut idx = 0;
    for _ in 0..level {
        let o = b.octant_of(p);
        idx = idx * 8 + o;
        b = b.octant(o);
    }
    idx
}

fn union_box(cells: &[Box3]) -> Result<Box3> {
    let mut lo = cells[0].min_corner();
    let mut hi = cells[0].max_corner();
    for c in &cells[1..] {
        let (a, b) = (c.min_corner(), c.max_corner());
        lo = crate::geometry::Vec3::new(lo.x.min(a.x), lo.y.min(a.y), lo.z.min(a.z));
        hi = crate::geometry::Vec3::new(hi.x.max(b.x), hi.y.max(b.y), hi.z.max(b.z));
    }
    Box3::new(lo, hi - lo)
}

/// Splits `neurons` over `p` ranks by position.
pub fn partition(neurons: &[Neuron], bounds: Box3, p: usize) -> Result<Vec<RankState>> {
    if !is_admissible_rank_count(p) {
        return Err(Error::InvalidRankCount(p));
    }
    if neurons.len() < p {
        return Err(Error::TooFewNeurons {
            neurons: neurons.len(),
            ranks: p,
        });
    }
    let level = branch_level(p);
    let cells = cells_at_level(bounds, level);
    let per_rank = cells.len() / p;

    let mut by_cell: Vec<Vec<Neuron>> = vec![Vec::new(); cells.len()];
    for n in neurons {
        if !n.position.is_finite() || !bounds.contains(&n.position) {
            return Err(Error::OutOfBounds {
                id: n.id,
                position: n.position.to_string(),
            });
        }
        by_cell[cell_of(bounds, level, &n.position)].push(*n);
    }

    let mut ranks = Vec::with_capacity(p);
    let mut by_cell = by_cell.into_iter();
    for rank_id in 0..p {
        let first = rank_id * per_rank;
        let own_cells = &cells[first..first + per_rank];
        let mut local_neurons = Vec::new();
        let mut branches = Vec::with_capacity(per_rank);
        for (offset, bbox) in own_cells.iter().enumerate() {
            let cell_neurons = by_cell.next().unwrap_or_default();
            let start = local_neurons.len();
            let tree = if cell_neurons.is_empty() {
                None
            } else {
                Some(Octree::build(&cell_neurons, *bbox)?)
            };
            local_neurons.extend_from_slice(&cell_neurons);
            branches.push(BranchCell {
                cell_index: first + offset,
                bbox: *bbox,
                tree,
                neurons: (start..local_neurons.len()).collect(),
            });
        }
        let index = local_neurons.iter().enumerate().map(|(i, n)| (n.id, i)).collect::<HashMap<_, _>>();
        if index.len() != local_neurons.len() {
            let mut seen = std::collections::HashSet::new();
            let dup = local_neurons.iter().find(|n| !seen.insert(n.id)).map(|n| n.id);
            return Err(Error::DuplicateId(dup.unwrap_or(NeuronId(0))));
        }
        ranks.push(RankState {
            rank_id,
            subdomain: union_box(own_cells)?,
            local_neurons,
            branches,
            counters: RankCounters::default(),
            remote_cache: HashMap::new(),
            upper: None,
            generation: 0,
            index,
        });
    }
    Ok(ranks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExchangeReport {
    /// Every rank sends its roots to every other rank: `p * (p - 1)`.
    pub pairwise_messages: u64,
    /// One broadcast per rank: `p`.
    pub broadcast_messages: u64,
    /// Upper-tree nodes assembled on each rank.
    pub upper_nodes: u64,
}

fn check_tiling(ranks: &[RankState], bounds: Box3) -> Result<()> {
    let volume: f64 = ranks.iter().map(|r| r.subdomain.volume()).sum();
    if (volume - bounds.volume()).abs() > 1e-9 * bounds.volume() {
        return Err(Error::InconsistentTiling(format!(
            "subdomain volumes sum to {volume}, bounds volume is {}",
            bounds.volume()
        )));
    }
    for (i, a) in ranks.iter().enumerate() {
        for b in &ranks[i + 1..] {
            if a.subdomain.intersects(&b.subdomain) {
                return Err(Error::InconsistentTiling(format!("ranks {} and {} overlap", a.rank_id, b.rank_id)));
            }
        }
    }
    Ok(())
}

/// Exchanges branch roots between all ranks; every rank assembles its own
/// copy of the upper tree from the same messages.
pub fn exchange_and_build_upper(ranks: &mut [RankState], bounds: Box3) -> Result<ExchangeReport> {
    check_tiling(ranks, bounds)?;
    let p = ranks.len() as u64;
    let cells: usize = ranks.iter().map(|r| r.branches.len()).sum();
    let level = branch_level(ranks.len());
    if cells != 8usize.pow(level) {
        return Err(Error::InconsistentTiling(format!("{cells} branch cells for {p} ranks")));
    }
    let messages: Vec<BranchRootMessage> = ranks.iter().map(RankState::branch_message).collect();
    let mut report = ExchangeReport {
        pairwise_messages: p * (p - 1),
        broadcast_messages: p,
        upper_nodes: 0,
    };
    for rank in ranks.iter_mut() {
        let upper = UpperTree::assemble(bounds, level, &messages);
        report.upper_nodes = upper.len() as u64;
        rank.counters.messages_sent += p - 1;
        rank.counters.local_work += upper.len() as u64;
        rank.upper = Some(Arc::new(upper));
    }
    Ok(report)
}

/// Downloads the children of a node owned by `owner`. Repeated requests in
/// the same step are served from the requester's cache without a message.
pub fn fetch_children(requester: &mut RankState, owner: &RankState, handle: RemoteHandle) -> Result<Vec<RemoteChild>> {
    if let Some(hit) = requester.remote_cache.get(&handle) {
        return Ok(hit.clone());
    }
    owner.node_summary(&handle)?;
    let tree = owner.branches[handle.branch as usize]
        .tree
        .as_ref()
        .ok_or_else(|| Error::StaleHandle(format!("{handle:?}")))?;
    let node = tree.node(handle.node);
    if node.is_leaf() {
        return Err(Error::ExpandLeaf);
    }
    let reply: Vec<RemoteChild> = node
        .children()
        .iter()
        .map(|&(_, c)| RemoteChild {
            handle: RemoteHandle { node: c, ..handle },
            summary: *tree.summary(c),
        })
        .collect();
    requester.counters.messages_sent += 1;
    requester.counters.nodes_downloaded += reply.len() as u64;
    requester.remote_cache.insert(handle, reply.clone());
    Ok(reply)
}

pub fn end_of_step_discard(ranks: &mut [RankState]) {
    for r in ranks {
        r.remote_cache.clear();
    }
}

struct Peers<'a> {
    before: &'a [RankState],
    after: &'a [RankState],
}

impl Peers<'_> {
    fn get(&self, rank: usize) -> &RankState {
        if rank < self.before.len() {
            &self.before[rank]
        } else {
            &self.after[rank - self.before.len() - 1]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistHandle {
    Upper(u32),
    Local { branch: u32, node: NodeId },
    Remote(RemoteHandle),
}

/// A rank's view of the global tree: the shared upper portion, its own
/// branch trees and whatever it downloads from peers.
struct RankView<'a> {
    me: &'a mut RankState,
    peers: Peers<'a>,
    upper: Arc<UpperTree>,
}

impl RankView<'_> {
    fn upper_child(&self, c: &UpperChild) -> Candidate<DistHandle> {
        match *c {
            UpperChild::Upper(i) => Candidate {
                handle: DistHandle::Upper(i),
                summary: self.upper.nodes[i as usize].summary,
            },
            UpperChild::Branch { owner, branch, summary } => {
                let (root, generation) = if owner == self.me.rank_id {
                    let tree = self.me.branches[branch as usize].tree.as_ref().expect("non-empty branch has a tree");
                    (tree.root(), self.me.generation)
                } else {
                    let peer = self.peers.get(owner);
                    let tree = peer.branches[branch as usize].tree.as_ref().expect("non-empty branch has a tree");
                    (tree.root(), peer.generation)
                };
                let handle = if owner == self.me.rank_id {
                    DistHandle::Local { branch, node: root }
                } else {
                    DistHandle::Remote(RemoteHandle {
                        owner,
                        branch,
                        node: root,
                        generation,
                    })
                };
                Candidate { handle, summary }
            }
        }
    }
}

impl SearchTree for RankView<'_> {
    type Handle = DistHandle;

    fn root_candidate(&mut self) -> Result<Candidate<DistHandle>> {
        let root = self.upper.root.ok_or_else(|| Error::InvalidConfig("empty global tree".into()))?;
        Ok(self.upper_child(&root))
    }

    fn children(
        &mut self,
        node: &Candidate<DistHandle>,
        kind: ElementKind,
        counter: &mut ExpansionCounter,
        out: &mut Vec<Candidate<DistHandle>>,
    ) -> Result<()> {
        let all: Vec<Candidate<DistHandle>> = match node.handle {
            DistHandle::Upper(i) => {
                let upper = Arc::clone(&self.upper);
                let n = &upper.nodes[i as usize];
                if n.summary.is_leaf() {
                    return Err(Error::ExpandLeaf);
                }
                n.children.iter().map(|c| self.upper_child(c)).collect()
            }
            DistHandle::Local { branch, node } => {
                let tree = self.me.branches[branch as usize]
                    .tree
                    .as_ref()
                    .ok_or_else(|| Error::StaleHandle(format!("local branch {branch}")))?;
                let n = tree.node(node);
                if n.is_leaf() {
                    return Err(Error::ExpandLeaf);
                }
                n.children()
                    .iter()
                    .map(|&(_, c)| Candidate {
                        handle: DistHandle::Local { branch, node: c },
                        summary: *tree.summary(c),
                    })
                    .collect()
            }
            DistHandle::Remote(h) => {
                let owner = self.peers.get(h.owner);
                fetch_children(self.me, owner, h)?
                    .into_iter()
                    .map(|c| Candidate {
                        handle: DistHandle::Remote(c.handle),
                        summary: c.summary,
                    })
                    .collect()
            }
        };
        let before = out.len();
        out.extend(all.into_iter().filter(|c| c.summary.weight(kind) > 0));
        counter.nodes_inspected += (out.len() - before) as u64;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct DistributedOutcome {
    pub proposals: Vec<SynapseProposal>,
    pub per_rank: Vec<RankCounters>,
    pub stats: AggregateStats,
    pub exchange: ExchangeReport,
}

/// Search phase of one update step across all ranks: local refresh, root
/// exchange, then every rank's searches against its view of the tree.
pub fn distributed_connectivity_update(ranks: &mut [RankState], bounds: Box3, config: &SearchConfig, step: u64) -> Result<DistributedOutcome> {
    let mut stats = AggregateStats::default();
    for r in ranks.iter_mut() {
        r.generation = step;
        r.remote_cache.clear();
        let touched = r.update_local_trees()?;
        r.counters.local_work += touched;
        stats.update_work += touched;
    }
    let exchange = exchange_and_build_upper(ranks, bounds)?;
    let keys = KeyedRng::new(config.rng_seed, step);

    let mut proposals = Vec::new();
    for i in 0..ranks.len() {
        let (before, rest) = ranks.split_at_mut(i);
        let (me, after) = rest.split_first_mut().expect("rank index in range");
        let upper = me.upper.clone().ok_or_else(|| Error::InvalidConfig("upper tree missing".into()))?;
        let searchers: Vec<Neuron> = me.local_neurons.clone();
        let mut view = RankView {
            me,
            peers: Peers { before, after },
            upper,
        };
        let mut work = 0;
        let mut descent = DescentStats::default();
        for n in &searchers {
            for search in 0..n.vacant.get(SEARCH_KIND) {
                let p = find_target(&mut view, n, config, &keys, search, &mut descent)?;
                work += descent.total();
                stats.record(&descent, p.is_some());
                proposals.extend(p);
            }
        }
        view.me.counters.local_work += work;
    }

    // Proposals for neurons on other ranks travel to the owner.
    let owner: HashMap<NeuronId, usize> = ranks
        .iter()
        .flat_map(|r| r.local_neurons.iter().map(move |n| (n.id, r.rank_id)))
        .collect();
    for p in &proposals {
        let (src, dst) = (owner[&p.source], owner[&p.target]);
        if src != dst {
            ranks[src].counters.messages_sent += 1;
        }
    }

    Ok(DistributedOutcome {
        proposals,
        per_rank: ranks.iter().map(|r| r.counters).collect(),
        stats,
        exchange,
    })
}

/// Owner-side arbitration: each target's owner grants proposals in a random
/// order keyed by the target id while vacant dendrites remain, then notifies
/// the source's owner so the axon count is decremented there.
pub fn distributed_resolve(ranks: &mut [RankState], proposals: &[SynapseProposal], keys: &KeyedRng) -> Vec<Synapse> {
    let owner: HashMap<NeuronId, usize> = ranks
        .iter()
        .flat_map(|r| r.local_neurons.iter().map(move |n| (n.id, r.rank_id)))
        .collect();
    let mut by_target: BTreeMap<NeuronId, Vec<SynapseProposal>> = BTreeMap::new();
    for p in proposals {
        if owner.contains_key(&p.target) && owner.contains_key(&p.source) {
            by_target.entry(p.target).or_default().push(*p);
        }
    }
    let mut formed = Vec::new();
    for (target, mut group) in by_target {
        group.sort_unstable();
        let mut rng = keys.stream(Purpose::Resolve, target.0, 0, 0);
        group.shuffle(&mut rng);
        let t_owner = owner[&target];
        for p in group {
            let s_owner = owner[&p.source];
            let has_dendrite = ranks[t_owner].neuron_mut(target).is_some_and(|n| n.vacant.dendrites > 0);
            let has_axon = ranks[s_owner].neuron_mut(p.source).is_some_and(|n| n.vacant.axons > 0);
            if !(has_dendrite && has_axon) || p.source == p.target {
                continue;
            }
            if let Some(n) = ranks[t_owner].neuron_mut(target) {
                n.vacant.dendrites -= 1;
            }
            if let Some(n) = ranks[s_owner].neuron_mut(p.source) {
                n.vacant.axons -= 1;
            }
            if s_owner != t_owner {
                ranks[t_owner].counters.messages_sent += 1;
            }
            formed.push(Synapse {
                source: p.source,
                target: p.target,
            });
        }
    }
    formed
}

/// Per-rank counter row for the CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct RankCounterRow {
    pub p: usize,
    pub rank: usize,
    pub step: u64,
    pub messages_sent: u64,
    pub nodes_downloaded: u64,
    pub local_work: u64,
}

pub fn counter_rows(ranks: &[RankState], step: u64) -> Vec<RankCounterRow> {
    ranks
        .iter()
        .map(|r| RankCounterRow {
            p: ranks.len(),
            rank: r.rank_id,
            step,
            messages_sent: r.counters.messages_sent,
            nodes_downloaded: r.counters.nodes_downloaded,
            local_work: r.counters.local_work,
        })
        .collect()
}

pub fn reset_counters(ranks: &mut [RankState]) {
    for r in ranks {
        r.counters = RankCounters::default();
    }
}
