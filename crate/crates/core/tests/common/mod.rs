#![allow(dead_code)]

use std::collections::HashMap;

use bh_plasticity::geometry::{Box3, Vec3};
use bh_plasticity::octree::{ElementKind, Neuron, NeuronId, NodeContent, NodeSummary, Octree, Vacancy};
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub enum Layout {
    Uniform,
    Clustered,
    /// Points on a coarse grid, so many lie exactly on octant boundaries.
    Grid,
}

pub const LAYOUTS: [Layout; 3] = [Layout::Uniform, Layout::Clustered, Layout::Grid];

/// `n` neurons with distinct positions inside `[0, side)^3` and vacancy
/// counts in `0..=max_vacant`.
pub fn random_neurons<R: Rng>(rng: &mut R, n: usize, side: f64, layout: Layout, max_vacant: u32) -> Vec<Neuron> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    let centers: Vec<Vec3> = (0..4)
        .map(|_| Vec3::new(rng.random_range(0.0..side), rng.random_range(0.0..side), rng.random_range(0.0..side)))
        .collect();
    let grid = 64.0;
    while out.len() < n {
        let p = match layout {
            Layout::Uniform => Vec3::new(rng.random_range(0.0..side), rng.random_range(0.0..side), rng.random_range(0.0..side)),
            Layout::Clustered => {
                let c = centers[rng.random_range(0..centers.len())];
                let spread = side * 0.02;
                let mut jitter = || rng.random_range(-spread..spread);
                let q = c + Vec3::new(jitter(), jitter(), jitter());
                Vec3::new(q.x.clamp(0.0, side * 0.999_999), q.y.clamp(0.0, side * 0.999_999), q.z.clamp(0.0, side * 0.999_999))
            }
            Layout::Grid => {
                let mut cell = || f64::from(rng.random_range(0..grid as u32)) * side / grid;
                Vec3::new(cell(), cell(), cell())
            }
        };
        if !seen.insert([p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]) {
            continue;
        }
        let vacant = Vacancy::new(rng.random_range(0..=max_vacant), rng.random_range(0..=max_vacant));
        out.push(Neuron::new(out.len() as u64, p, vacant));
    }
    out
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn vec_close(a: Vec3, b: Vec3, tol: f64) -> bool {
    close(a.x, b.x, tol) && close(a.y, b.y, tol) && close(a.z, b.z, tol)
}

/// Structural and summary invariants of a tree built over `neurons`.
pub fn check_octree(tree: &Octree, neurons: &[Neuron]) -> Result<(), String> {
    let by_id: HashMap<NeuronId, &Neuron> = neurons.iter().map(|n| (n.id, n)).collect();
    let nodes = tree.nodes();
    let mut parent = vec![usize::MAX; nodes.len()];
    let mut leaves = 0;

    for (i, node) in nodes.iter().enumerate() {
        let s = &node.summary;
        match &node.content {
            NodeContent::Leaf(id) => {
                leaves += 1;
                let n = by_id.get(id).ok_or_else(|| format!("leaf {i} holds unknown id {id}"))?;
                if tree.leaf_of(*id).map(|l| l.index()) != Some(i) {
                    return Err(format!("leaf_of({id}) does not point at node {i}"));
                }
                if !s.bbox.contains(&n.position) {
                    return Err(format!("neuron {id} outside its leaf box"));
                }
                if s.leaf != Some(*id) {
                    return Err(format!("leaf {i} summary names {:?}", s.leaf));
                }
            }
            NodeContent::Inner(children) => {
                if children.is_empty() {
                    return Err(format!("inner node {i} has no children"));
                }
                if s.leaf.is_some() {
                    return Err(format!("inner node {i} marked as leaf"));
                }
                for w in children.windows(2) {
                    if w[0].0 >= w[1].0 {
                        return Err(format!("children of {i} not in Morton order"));
                    }
                }
                for &(oct, c) in children {
                    if c.index() <= i {
                        return Err(format!("child {} of {i} precedes it", c.index()));
                    }
                    parent[c.index()] = i;
                    if nodes[c.index()].summary.bbox != s.bbox.octant(oct as usize) {
                        return Err(format!("child {} of {i} is not octant {oct}", c.index()));
                    }
                    if nodes[c.index()].depth != node.depth + 1 {
                        return Err(format!("child {} depth", c.index()));
                    }
                }
                for kind in ElementKind::ALL {
                    let w: u64 = children.iter().map(|(_, c)| nodes[c.index()].summary.weight(kind)).sum();
                    if w != s.weight(kind) {
                        return Err(format!("node {i} {kind:?} weight {} != child sum {w}", s.weight(kind)));
                    }
                    if w > 0 {
                        let mut acc = Vec3::ZERO;
                        for (_, c) in children {
                            let cs = &nodes[c.index()].summary;
                            if let Some(cc) = cs.centroid(kind) {
                                acc = acc + cc * cs.weight(kind) as f64;
                            }
                        }
                        let expected = acc * (1.0 / w as f64);
                        let got = s.centroid(kind).ok_or_else(|| format!("node {i} {kind:?} lacks a centroid"))?;
                        if !vec_close(got, expected, 1e-12) {
                            return Err(format!("node {i} {kind:?} centroid {got} != weighted mean {expected}"));
                        }
                    }
                }
            }
        }
        for kind in ElementKind::ALL {
            match s.centroid(kind) {
                Some(c) if s.weight(kind) == 0 => return Err(format!("node {i} has centroid {c} at zero weight")),
                Some(c) if !s.bbox.contains_closed(&c) => return Err(format!("node {i} centroid {c} outside {}", s.bbox.min_corner())),
                None if s.weight(kind) > 0 => return Err(format!("node {i} lacks a centroid")),
                _ => {}
            }
        }
    }
    if leaves != neurons.len() || tree.leaf_count() != neurons.len() {
        return Err(format!("{leaves} leaves for {} neurons", neurons.len()));
    }
    if nodes[0].summary.bbox != tree.bounds() {
        return Err("root box differs from bounds".into());
    }

    // Weights against direct sums over the neurons each node contains.
    let mut direct = vec![[0u64; 2]; nodes.len()];
    for n in neurons {
        let mut at = tree.leaf_of(n.id).ok_or_else(|| format!("neuron {} has no leaf", n.id))?.index();
        loop {
            for kind in ElementKind::ALL {
                direct[at][kind.index()] += u64::from(n.vacant.get(kind));
            }
            if at == 0 {
                break;
            }
            at = parent[at];
            if at == usize::MAX {
                return Err("detached node".into());
            }
        }
    }
    for (i, node) in nodes.iter().enumerate() {
        for kind in ElementKind::ALL {
            if node.summary.weight(kind) != direct[i][kind.index()] {
                return Err(format!("node {i} {kind:?} weight differs from contained neurons"));
            }
        }
    }
    Ok(())
}

/// Same structure and summaries in both trees.
pub fn same_summaries(a: &Octree, b: &Octree, tol: f64) -> Result<(), String> {
    if a.len() != b.len() {
        return Err(format!("{} vs {} nodes", a.len(), b.len()));
    }
    for (i, (x, y)) in a.nodes().iter().zip(b.nodes()).enumerate() {
        if x.content != y.content {
            return Err(format!("node {i} structure differs"));
        }
        summary_close(&x.summary, &y.summary, tol).map_err(|e| format!("node {i}: {e}"))?;
    }
    Ok(())
}

pub fn summary_close(x: &NodeSummary, y: &NodeSummary, tol: f64) -> Result<(), String> {
    if x.bbox != y.bbox || x.leaf != y.leaf {
        return Err("box or leaf differs".into());
    }
    for kind in ElementKind::ALL {
        if x.weight(kind) != y.weight(kind) {
            return Err(format!("{kind:?} weight {} vs {}", x.weight(kind), y.weight(kind)));
        }
        match (x.centroid(kind), y.centroid(kind)) {
            (None, None) => {}
            (Some(p), Some(q)) if vec_close(p, q, tol) => {}
            (p, q) => return Err(format!("{kind:?} centroid {p:?} vs {q:?}")),
        }
    }
    Ok(())
}

/// Smallest per-axis maximum separation over all pairs.
pub fn min_max_norm_separation(neurons: &[Neuron]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in neurons.iter().enumerate() {
        for b in &neurons[i + 1..] {
            let d = a.position - b.position;
            best = best.min(d.x.abs().max(d.y.abs()).max(d.z.abs()));
        }
    }
    best
}

pub fn cube(side: f64) -> Box3 {
    Box3::cube(Vec3::ZERO, side).unwrap()
}
