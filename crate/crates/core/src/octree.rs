//! Spatial octree over neurons, weighted by vacant synaptic elements.
//!
//! Nodes live in an arena in pre-order, so a reverse scan visits children
//! before their parents. Children are stored in Morton order and empty
//! octants have no node.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{Box3, Vec3};

const MAX_DEPTH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NeuronId(pub u64);

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Axon,
    Dendrite,
}

impl ElementKind {
    pub const ALL: [ElementKind; 2] = [ElementKind::Axon, ElementKind::Dendrite];

    pub fn index(self) -> usize {
        match self {
            ElementKind::Axon => 0,
            ElementKind::Dendrite => 1,
        }
    }

    /// The kind a searching element of this kind connects to.
    pub fn opposite(self) -> ElementKind {
        match self {
            ElementKind::Axon => ElementKind::Dendrite,
            ElementKind::Dendrite => ElementKind::Axon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Vacancy {
    pub axons: u32,
    pub dendrites: u32,
}

impl Vacancy {
    pub fn new(axons: u32, dendrites: u32) -> Self {
        Self { axons, dendrites }
    }

    pub fn get(&self, kind: ElementKind) -> u32 {
        match kind {
            ElementKind::Axon => self.axons,
            ElementKind::Dendrite => self.dendrites,
        }
    }

    pub fn get_mut(&mut self, kind: ElementKind) -> &mut u32 {
        match kind {
            ElementKind::Axon => &mut self.axons,
            ElementKind::Dendrite => &mut self.dendrites,
        }
    }

    pub fn total(&self) -> u64 {
        u64::from(self.axons) + u64::from(self.dendrites)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neuron {
    pub id: NeuronId,
    pub position: Vec3,
    pub vacant: Vacancy,
}

impl Neuron {
    pub fn new(id: u64, position: Vec3, vacant: Vacancy) -> Self {
        Self {
            id: NeuronId(id),
            position,
            vacant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KindSummary {
    pub weight: u64,
    /// `None` when the weight is zero.
    pub centroid: Option<Vec3>,
}

/// What a search needs to know about a node: its box, per-kind weight and
/// centroid, and the neuron if it is a leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSummary {
    pub bbox: Box3,
    pub kinds: [KindSummary; 2],
    pub leaf: Option<NeuronId>,
}

impl NodeSummary {
    pub fn for_neuron(bbox: Box3, neuron: &Neuron) -> Self {
        let kind = |k: ElementKind| {
            let weight = u64::from(neuron.vacant.get(k));
            KindSummary {
                weight,
                centroid: (weight > 0).then_some(neuron.position),
            }
        };
        Self {
            bbox,
            kinds: [kind(ElementKind::Axon), kind(ElementKind::Dendrite)],
            leaf: Some(neuron.id),
        }
    }

    /// Aggregates child summaries in the given order. The weighted sum is
    /// accumulated left to right so identical inputs give bit-identical output.
    pub fn aggregate<'a>(bbox: Box3, children: impl Iterator<Item = &'a NodeSummary> + Clone) -> Self {
        let mut kinds = [KindSummary::default(); 2];
        for kind in ElementKind::ALL {
            let mut weight = 0u64;
            let mut sum = Vec3::ZERO;
            for child in children.clone() {
                let k = &child.kinds[kind.index()];
                if let Some(c) = k.centroid {
                    weight += k.weight;
                    sum = sum + c * k.weight as f64;
                }
            }
            kinds[kind.index()] = KindSummary {
                weight,
                centroid: (weight > 0).then(|| bbox.clamp(sum * (1.0 / weight as f64))),
            };
        }
        Self {
            bbox,
            kinds,
            leaf: None,
        }
    }

    pub fn weight(&self, kind: ElementKind) -> u64 {
        self.kinds[kind.index()].weight
    }

    pub fn centroid(&self, kind: ElementKind) -> Option<Vec3> {
        self.kinds[kind.index()].centroid
    }

    pub fn is_leaf(&self) -> bool {
        self.leaf.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeContent {
    Leaf(NeuronId),
    /// `(octant, child)` pairs in Morton order.
    Inner(Vec<(u8, NodeId)>),
}

#[derive(Debug, Clone)]
pub struct OctreeNode {
    pub summary: NodeSummary,
    pub content: NodeContent,
    pub depth: u32,
}

impl OctreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.content, NodeContent::Leaf(_))
    }

    pub fn children(&self) -> &[(u8, NodeId)] {
        match &self.content {
            NodeContent::Leaf(_) => &[],
            NodeContent::Inner(c) => c,
        }
    }
}

/// Node-expansion counters for one descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExpansionCounter {
    pub nodes_inspected: u64,
    pub stack_pushes: u64,
}

impl ExpansionCounter {
    pub fn total(&self) -> u64 {
        self.nodes_inspected + self.stack_pushes
    }
}

impl std::ops::AddAssign for ExpansionCounter {
    fn add_assign(&mut self, rhs: Self) {
        self.nodes_inspected += rhs.nodes_inspected;
        self.stack_pushes += rhs.stack_pushes;
    }
}

#[derive(Debug, Clone)]
pub struct Octree {
    bounds: Box3,
    nodes: Vec<OctreeNode>,
    leaf_of: HashMap<NeuronId, NodeId>,
    height: u32,
}

impl Octree {
    /// Subdivides `bounds` until every cell holds at most one neuron.
    pub fn build(neurons: &[Neuron], bounds: Box3) -> Result<Self> {
        if neurons.is_empty() {
            return Err(Error::InvalidConfig("cannot build an octree over zero neurons".into()));
        }
        let mut seen = HashMap::with_capacity(neurons.len());
        for n in neurons {
            if !n.position.is_finite() || !bounds.contains(&n.position) {
                return Err(Error::OutOfBounds {
                    id: n.id,
                    position: n.position.to_string(),
                });
            }
            if seen.insert(n.id, ()).is_some() {
                return Err(Error::DuplicateId(n.id));
            }
        }
        check_distinct_positions(neurons)?;

        let mut tree = Octree {
            bounds,
            nodes: Vec::with_capacity(neurons.len() * 2),
            leaf_of: HashMap::with_capacity(neurons.len()),
            height: 0,
        };
        let mut indices: Vec<usize> = (0..neurons.len()).collect();
        tree.build_node(bounds, &mut indices, neurons, 0)?;
        Ok(tree)
    }

    fn build_node(&mut self, bbox: Box3, indices: &mut [usize], neurons: &[Neuron], depth: usize) -> Result<NodeId> {
        if depth > MAX_DEPTH {
            return Err(Error::DepthExceeded(MAX_DEPTH));
        }
        let id = NodeId(self.nodes.len() as u32);
        self.height = self.height.max(depth as u32);

        if let [only] = indices {
            let neuron = &neurons[*only];
            self.nodes.push(OctreeNode {
                summary: NodeSummary::for_neuron(bbox, neuron),
                content: NodeContent::Leaf(neuron.id),
                depth: depth as u32,
            });
            self.leaf_of.insert(neuron.id, id);
            return Ok(id);
        }

        self.nodes.push(OctreeNode {
            summary: NodeSummary::aggregate(bbox, std::iter::empty()),
            content: NodeContent::Inner(Vec::new()),
            depth: depth as u32,
        });

        indices.sort_unstable_by_key(|&i| bbox.octant_of(&neurons[i].position));
        let mut children = Vec::with_capacity(8);
        let mut rest = indices;
        while let Some(&first) = rest.first() {
            let octant = bbox.octant_of(&neurons[first].position);
            let split = rest
                .iter()
                .position(|&i| bbox.octant_of(&neurons[i].position) != octant)
                .unwrap_or(rest.len());
            let (head, tail) = rest.split_at_mut(split);
            let child = self.build_node(bbox.octant(octant), head, neurons, depth + 1)?;
            children.push((octant as u8, child));
            rest = tail;
        }

        let summary = NodeSummary::aggregate(bbox, children.iter().map(|(_, c)| &self.nodes[c.index()].summary));
        let node = &mut self.nodes[id.index()];
        node.summary = summary;
        node.content = NodeContent::Inner(children);
        Ok(id)
    }

    pub fn bounds(&self) -> Box3 {
        self.bounds
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &OctreeNode {
        &self.nodes[id.index()]
    }

    pub fn get(&self, id: NodeId) -> Option<&OctreeNode> {
        self.nodes.get(id.index())
    }

    pub fn summary(&self, id: NodeId) -> &NodeSummary {
        &self.nodes[id.index()].summary
    }

    pub fn nodes(&self) -> &[OctreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_of.len()
    }

    pub fn leaf_of(&self, id: NeuronId) -> Option<NodeId> {
        self.leaf_of.get(&id).copied()
    }

    /// Depth of the deepest node; a single-leaf tree has height 0.
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Refreshes leaf weights from `neurons` and recomputes every inner
    /// summary bottom-up. Returns the number of nodes touched.
    pub fn update_leaves_and_subtree(&mut self, neurons: &[Neuron]) -> Result<u64> {
        for n in neurons {
            let leaf = self.leaf_of.get(&n.id).ok_or(Error::UnknownNeuron(n.id))?;
            let node = &mut self.nodes[leaf.index()];
            node.summary = NodeSummary::for_neuron(node.summary.bbox, n);
        }
        let mut touched = neurons.len() as u64;
        for i in (0..self.nodes.len()).rev() {
            let NodeContent::Inner(children) = &self.nodes[i].content else {
                continue;
            };
            let bbox = self.nodes[i].summary.bbox;
            let summary = NodeSummary::aggregate(bbox, children.iter().map(|(_, c)| &self.nodes[c.index()].summary));
            self.nodes[i].summary = summary;
            touched += 1;
        }
        Ok(touched)
    }

    /// Children of an inner node that carry weight of `kind`, in Morton
    /// order. Counts each returned child as inspected.
    pub fn expand(&self, node: NodeId, kind: ElementKind, counter: &mut ExpansionCounter) -> Result<Vec<NodeId>> {
        let NodeContent::Inner(children) = &self.node(node).content else {
            return Err(Error::ExpandLeaf);
        };
        let out: Vec<NodeId> = children
            .iter()
            .map(|&(_, c)| c)
            .filter(|c| self.summary(*c).weight(kind) > 0)
            .collect();
        counter.nodes_inspected += out.len() as u64;
        Ok(out)
    }
}

fn check_distinct_positions(neurons: &[Neuron]) -> Result<()> {
    // +0.0 folds -0.0 into 0.0 so the bit patterns compare like the values.
    let key = |p: &Vec3| ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits(), (p.z + 0.0).to_bits());
    let mut order: Vec<usize> = (0..neurons.len()).collect();
    order.sort_unstable_by_key(|&i| key(&neurons[i].position));
    for w in order.windows(2) {
        let (a, b) = (&neurons[w[0]], &neurons[w[1]]);
        if key(&a.position) == key(&b.position) {
            return Err(Error::DuplicatePosition {
                first: a.id,
                second: b.id,
                position: a.position.to_string(),
            });
        }
    }
    Ok(())
}
