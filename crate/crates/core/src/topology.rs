//! Rooted transmission trees: node roles, generators, and the link-failure
//! diagnostic that turns a candidate topology into a ready one.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

pub type NodeId = u32;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("node {child} has unknown parent {parent}")]
    UnknownParent { child: NodeId, parent: NodeId },
    #[error("edges do not form a tree rooted at {root}: node {node} cannot reach the root")]
    NotATree { root: NodeId, node: NodeId },
    #[error("compression factor must be at least 2, got {0}")]
    DegenerateCompression(usize),
    #[error("p-ary parameters out of range: p={p}, levels={levels}")]
    BadParyParams { p: usize, levels: usize },
}

/// Node role under a given compression factor `M`: a node with at most `M-1`
/// descendants relays plaintext readings, a node with `M` or more emits `M`
/// weighted sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Forwarder,
    Aggregator,
    Collector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub role: Role,
    pub descendant_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatencyClass {
    Ok,
    Delayed,
    Dead,
}

/// Observed state of one candidate link during the diagnostic test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkState {
    /// `(child, parent)` pair.
    pub link: (NodeId, NodeId),
    pub alive: bool,
    pub latency_class: LatencyClass,
}

impl LinkState {
    pub fn dead(child: NodeId, parent: NodeId) -> Self {
        LinkState {
            link: (child, parent),
            alive: false,
            latency_class: LatencyClass::Dead,
        }
    }

    pub fn delayed(child: NodeId, parent: NodeId) -> Self {
        LinkState {
            link: (child, parent),
            alive: true,
            latency_class: LatencyClass::Delayed,
        }
    }

    fn usable(&self) -> bool {
        self.alive && self.latency_class == LatencyClass::Ok
    }
}

/// Rooted transmission tree. The root is the collector and is not a meter;
/// every other node has exactly one primary parent plus an ordered list of
/// candidate parents for failover.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    root_id: NodeId,
    parent: BTreeMap<NodeId, NodeId>,
    candidates: BTreeMap<NodeId, Vec<NodeId>>,
    unreachable: BTreeSet<NodeId>,
}

impl Topology {
    pub fn new(
        root_id: NodeId,
        parent: BTreeMap<NodeId, NodeId>,
        candidates: BTreeMap<NodeId, Vec<NodeId>>,
    ) -> Result<Self, TopologyError> {
        if parent.contains_key(&root_id) {
            return Err(TopologyError::DuplicateId(root_id));
        }
        for (&child, &p) in &parent {
            if p != root_id && !parent.contains_key(&p) {
                return Err(TopologyError::UnknownParent { child, parent: p });
            }
        }
        let topo = Topology {
            root_id,
            parent,
            candidates,
            unreachable: BTreeSet::new(),
        };
        topo.check_tree()?;
        Ok(topo)
    }

    fn check_tree(&self) -> Result<(), TopologyError> {
        // every node must reach the root without revisiting itself
        for &start in self.parent.keys() {
            let mut cur = start;
            let mut steps = 0usize;
            while cur != self.root_id {
                cur = *self.parent.get(&cur).ok_or(TopologyError::UnknownParent {
                    child: start,
                    parent: cur,
                })?;
                steps += 1;
                if steps > self.parent.len() {
                    return Err(TopologyError::NotATree {
                        root: self.root_id,
                        node: start,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn root_id(&self) -> NodeId {
        self.root_id
    }

    /// Number of meters (root excluded).
    pub fn n_meters(&self) -> usize {
        self.parent.len()
    }

    /// Meter ids in ascending order; the canonical column order of every
    /// reading vector and sensing matrix.
    pub fn meter_ids(&self) -> Vec<NodeId> {
        self.parent.keys().copied().collect()
    }

    pub fn parent_of(&self, id: NodeId) -> Option<NodeId> {
        self.parent.get(&id).copied()
    }

    pub fn parent_map(&self) -> &BTreeMap<NodeId, NodeId> {
        &self.parent
    }

    pub fn candidates_of(&self, id: NodeId) -> &[NodeId] {
        self.candidates.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn candidate_map(&self) -> &BTreeMap<NodeId, Vec<NodeId>> {
        &self.candidates
    }

    pub fn unreachable(&self) -> &BTreeSet<NodeId> {
        &self.unreachable
    }

    pub fn mark_unreachable(&mut self, ids: impl IntoIterator<Item = NodeId>) {
        self.unreachable.extend(ids);
    }

    /// children map (root included as a key when it has children).
    pub fn children(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut ch: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for (&c, &p) in &self.parent {
            ch.entry(p).or_default().push(c);
        }
        ch
    }

    /// Subtree size (the node itself included) for every meter.
    pub fn subtree_sizes(&self) -> BTreeMap<NodeId, usize> {
        let ch = self.children();
        let mut sizes = BTreeMap::new();
        // meters in reverse depth order so children are done before parents
        for &id in self.depth_order().iter().rev() {
            let s = 1 + ch
                .get(&id)
                .map(|cs| cs.iter().map(|c| sizes[c]).sum::<usize>())
                .unwrap_or(0);
            sizes.insert(id, s);
        }
        sizes
    }

    pub fn descendant_counts(&self) -> BTreeMap<NodeId, usize> {
        self.subtree_sizes()
            .into_iter()
            .map(|(id, s)| (id, s - 1))
            .collect()
    }

    /// All members of the subtree rooted at `id`, `id` included.
    pub fn subtree_members(&self, id: NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        collect_subtree(self, id, &mut out);
        out
    }

    /// Meters ordered root-outward (parents before children), ascending id
    /// within a depth.
    pub fn depth_order(&self) -> Vec<NodeId> {
        let ch = self.children();
        let mut order = Vec::with_capacity(self.parent.len());
        let mut frontier: Vec<NodeId> = ch.get(&self.root_id).cloned().unwrap_or_default();
        frontier.sort_unstable();
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &id in &frontier {
                order.push(id);
                if let Some(cs) = ch.get(&id) {
                    next.extend(cs.iter().copied());
                }
            }
            next.sort_unstable();
            frontier = next;
        }
        order
    }

    /// Node records with roles classified for compression factor `m`.
    pub fn records(&self, m: usize) -> Result<Vec<NodeRecord>, TopologyError> {
        let roles = classify_roles(self, m)?;
        let desc = self.descendant_counts();
        Ok(self
            .meter_ids()
            .into_iter()
            .map(|id| NodeRecord {
                id,
                role: roles[&id],
                descendant_count: desc[&id],
            })
            .collect())
    }
}

/// Role assignment under compression factor `m`: forwarder iff the node has
/// at most `m - 1` descendants (subtree size minus one), aggregator otherwise.
pub fn classify_roles(
    topo: &Topology,
    m: usize,
) -> Result<BTreeMap<NodeId, Role>, TopologyError> {
    if m < 2 {
        return Err(TopologyError::DegenerateCompression(m));
    }
    Ok(topo
        .descendant_counts()
        .into_iter()
        .map(|(id, d)| {
            let role = if d <= m - 1 {
                Role::Forwarder
            } else {
                Role::Aggregator
            };
            (id, role)
        })
        .collect())
}

const ROOT: NodeId = 0;

/// Random tree by uniform attachment: node `i` picks its parent uniformly
/// among the root and the `i - 1` earlier nodes. Every node also gets up to
/// two candidate parents drawn from its non-descendants.
pub fn gen_random_tree(n: usize, tree_seed: u64) -> Topology {
    let mut rng = seed::stream_rng("gridcs.topology.v1", tree_seed);
    let mut parent = BTreeMap::new();
    for i in 1..=n as NodeId {
        let pick = seed::uniform_index(&mut rng, i as usize);
        parent.insert(i, pick as NodeId); // 0 = root, 1..i-1 = earlier nodes
    }
    let topo = Topology::new(ROOT, parent, BTreeMap::new()).expect("attachment builds a tree");

    // candidate parents: any non-descendant other than self and the primary
    let mut candidates = BTreeMap::new();
    for i in 1..=n as NodeId {
        let mut in_subtree = BTreeSet::new();
        collect_subtree(&topo, i, &mut in_subtree);
        let primary = topo.parent_of(i).unwrap();
        let pool: Vec<NodeId> = std::iter::once(ROOT)
            .chain(1..=n as NodeId)
            .filter(|&c| c != i && c != primary && !in_subtree.contains(&c))
            .collect();
        let mut picks = Vec::new();
        let mut pool = pool;
        while picks.len() < 2 && !pool.is_empty() {
            let k = seed::uniform_index(&mut rng, pool.len());
            picks.push(pool.swap_remove(k));
        }
        candidates.insert(i, picks);
    }
    Topology::new(ROOT, topo.parent_map().clone(), candidates).unwrap()
}

fn collect_subtree(topo: &Topology, node: NodeId, out: &mut BTreeSet<NodeId>) {
    out.insert(node);
    let ch = topo.children();
    let mut stack = vec![node];
    while let Some(v) = stack.pop() {
        if let Some(cs) = ch.get(&v) {
            for &c in cs {
                if out.insert(c) {
                    stack.push(c);
                }
            }
        }
    }
}

/// Full p-ary tree of depth `levels` below the collector; the collector sits
/// at layer 0 and layers `1..=levels` hold the meters.
pub fn gen_pary_tree(p: usize, levels: usize) -> Result<Topology, TopologyError> {
    if p < 2 || levels < 1 {
        return Err(TopologyError::BadParyParams { p, levels });
    }
    let mut parent = BTreeMap::new();
    let mut next_id: NodeId = 1;
    let mut layer = vec![ROOT];
    for _ in 0..levels {
        let mut new_layer = Vec::with_capacity(layer.len() * p);
        for &pa in &layer {
            for _ in 0..p {
                parent.insert(next_id, pa);
                new_layer.push(next_id);
                next_id += 1;
            }
        }
        layer = new_layer;
    }
    Topology::new(ROOT, parent, BTreeMap::new())
}

/// Chain: root <- 1 <- 2 <- ... <- n.
pub fn gen_chain(n: usize) -> Topology {
    let parent = (1..=n as NodeId).map(|i| (i, i - 1)).collect();
    Topology::new(ROOT, parent, BTreeMap::new()).unwrap()
}

/// Star: every meter parented directly to the root.
pub fn gen_star(n: usize) -> Topology {
    let parent = (1..=n as NodeId).map(|i| (i, ROOT)).collect();
    Topology::new(ROOT, parent, BTreeMap::new()).unwrap()
}

/// Outcome of the link diagnostic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DiagnosisReport {
    /// `(node, old_parent, new_parent)` for every promotion that took place.
    pub promoted: Vec<(NodeId, NodeId, NodeId)>,
    /// Nodes that ran out of candidate parents.
    pub exhausted: Vec<NodeId>,
    /// Every node without a working path to the root (exhausted nodes plus
    /// anything stranded behind them).
    pub unreachable: Vec<NodeId>,
}

/// Iteratively promote candidate links until every root-reachable primary is
/// usable. Nodes that exhaust their candidates are reported unreachable and
/// excluded from collection rather than aborting the round.
pub fn diagnose_links(candidate: &Topology, failures: &[LinkState]) -> (Topology, DiagnosisReport) {
    let bad: BTreeSet<(NodeId, NodeId)> = failures
        .iter()
        .filter(|ls| !ls.usable())
        .map(|ls| ls.link)
        .collect();
    let mut parent = candidate.parent_map().clone();
    let mut remaining: BTreeMap<NodeId, Vec<NodeId>> = candidate.candidate_map().clone();
    let mut report = DiagnosisReport::default();
    let mut exhausted = BTreeSet::new();

    // each test round, every node with a failed primary tries its candidate
    // list in stored order; stop when no promotion is possible any more
    loop {
        let mut progressed = false;
        let ids: Vec<NodeId> = parent.keys().copied().collect();
        for node in ids {
            if exhausted.contains(&node) || !bad.contains(&(node, parent[&node])) {
                continue;
            }
            let cands = remaining.entry(node).or_default();
            let pick = cands.iter().position(|&c| {
                c != node && !bad.contains(&(node, c)) && !creates_cycle(&parent, node, c)
            });
            match pick {
                Some(k) => {
                    let new_parent = cands.remove(k);
                    report.promoted.push((node, parent[&node], new_parent));
                    parent.insert(node, new_parent);
                    progressed = true;
                }
                None => {
                    if cands.iter().all(|&c| c == node || bad.contains(&(node, c))) {
                        exhausted.insert(node);
                    }
                    // cycle-blocked candidates stay for later rounds
                }
            }
        }
        let unresolved = parent
            .iter()
            .any(|(&n, &p)| !exhausted.contains(&n) && bad.contains(&(n, p)));
        if !unresolved || !progressed {
            break;
        }
    }
    // anything still pointing over a bad link is permanently stuck
    for (&n, &p) in &parent {
        if bad.contains(&(n, p)) && !exhausted.contains(&n) {
            exhausted.insert(n);
        }
    }

    report.exhausted = exhausted.iter().copied().collect();
    let mut ready = Topology {
        root_id: candidate.root_id(),
        parent,
        candidates: remaining,
        unreachable: BTreeSet::new(),
    };
    // reachability over usable primaries only
    let mut reachable = BTreeSet::new();
    let ch = ready.children();
    let mut stack = vec![ready.root_id()];
    while let Some(v) = stack.pop() {
        if let Some(cs) = ch.get(&v) {
            for &c in cs {
                if !bad.contains(&(c, ready.parent[&c])) && reachable.insert(c) {
                    stack.push(c);
                }
            }
        }
    }
    let unreachable: BTreeSet<NodeId> = ready
        .parent
        .keys()
        .copied()
        .filter(|id| !reachable.contains(id))
        .collect();
    report.unreachable = unreachable.iter().copied().collect();
    ready.unreachable = unreachable;
    (ready, report)
}

fn creates_cycle(parent: &BTreeMap<NodeId, NodeId>, node: NodeId, new_parent: NodeId) -> bool {
    // walking up from the proposed parent must not pass through `node`
    let mut cur = new_parent;
    let mut steps = 0;
    while let Some(&p) = parent.get(&cur) {
        if cur == node {
            return true;
        }
        cur = p;
        steps += 1;
        if steps > parent.len() {
            return true;
        }
    }
    cur == node
}

/// On-disk JSON form: `{root, nodes: [{id, parent, candidates: [...]}]}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TopologyFile {
    pub root: NodeId,
    pub nodes: Vec<TopologyNodeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TopologyNodeEntry {
    pub id: NodeId,
    pub parent: NodeId,
    #[serde(default)]
    pub candidates: Vec<NodeId>,
}

impl Topology {
    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            root: self.root_id,
            nodes: self
                .meter_ids()
                .into_iter()
                .map(|id| TopologyNodeEntry {
                    id,
                    parent: self.parent[&id],
                    candidates: self.candidates_of(id).to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_file(f: &TopologyFile) -> Result<Self, TopologyError> {
        let mut parent = BTreeMap::new();
        let mut candidates = BTreeMap::new();
        for e in &f.nodes {
            if parent.insert(e.id, e.parent).is_some() {
                return Err(TopologyError::DuplicateId(e.id));
            }
            candidates.insert(e.id, e.candidates.clone());
        }
        Topology::new(f.root, parent, candidates)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("topology serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, Box<dyn std::error::Error>> {
        let f: TopologyFile = serde_json::from_str(s)?;
        Ok(Topology::from_file(&f)?)
    }
}
