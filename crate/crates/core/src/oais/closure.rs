use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::RecordId;
use crate::registry::RegistryStore;

use super::PackageError;

/// Source of `requires-ri` edges.
pub trait RequirementGraph {
    /// `requires-ri` targets of `id`, or `None` if `id` is not a node.
    fn requirements(&self, id: &RecordId) -> Option<Vec<RecordId>>;
}

impl RequirementGraph for RegistryStore {
    fn requirements(&self, id: &RecordId) -> Option<Vec<RecordId>> {
        self.required_ri(id)
    }
}

impl RequirementGraph for BTreeMap<RecordId, Vec<RecordId>> {
    fn requirements(&self, id: &RecordId) -> Option<Vec<RecordId>> {
        self.get(id).cloned()
    }
}

impl RequirementGraph for HashMap<RecordId, Vec<RecordId>> {
    fn requirements(&self, id: &RecordId) -> Option<Vec<RecordId>> {
        self.get(id).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequirementEdge {
    pub from: RecordId,
    pub to: RecordId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiClosure {
    pub roots: Vec<RecordId>,
    pub nodes: BTreeSet<RecordId>,
    pub edges: Vec<RequirementEdge>,
    pub baseline_set: BTreeSet<RecordId>,
    pub unresolved: BTreeSet<RecordId>,
}

impl RiClosure {
    pub fn is_resolved(&self) -> bool {
        self.unresolved.is_empty()
    }
}

/// Breadth-first traversal of `requires-ri` edges from `roots`.
///
/// Baseline members are not expanded. A node counts as resolved when it is
/// in the baseline or all of its requirements are resolved; every other
/// node of the closure, including targets missing from the graph, is
/// reported as unresolved. Cycles without a baseline exit stay unresolved.
pub fn compute_ri_closure<G: RequirementGraph + ?Sized>(
    roots: &[RecordId],
    graph: &G,
    baseline: &BTreeSet<RecordId>,
) -> Result<RiClosure, PackageError> {
    let mut adjacency: HashMap<RecordId, Vec<RecordId>> = HashMap::new();
    for root in roots {
        if graph.requirements(root).is_none() {
            return Err(PackageError::NotFound(format!("record {root}")));
        }
    }

    let mut nodes = BTreeSet::new();
    let mut queue = VecDeque::new();
    for root in roots {
        if nodes.insert(root.clone()) {
            queue.push_back(root.clone());
        }
    }
    while let Some(id) = queue.pop_front() {
        if baseline.contains(&id) {
            continue;
        }
        let Some(mut targets) = graph.requirements(&id) else {
            continue;
        };
        targets.sort();
        targets.dedup();
        for t in &targets {
            if nodes.insert(t.clone()) {
                queue.push_back(t.clone());
            }
        }
        if !targets.is_empty() {
            adjacency.insert(id, targets);
        }
    }

    // resolve backwards from the baseline
    let mut pending: HashMap<&RecordId, usize> = HashMap::new();
    let mut dependents: HashMap<&RecordId, Vec<&RecordId>> = HashMap::new();
    for (from, targets) in &adjacency {
        pending.insert(from, targets.len());
        for t in targets {
            dependents.entry(t).or_default().push(from);
        }
    }
    let mut resolved: BTreeSet<&RecordId> =
        nodes.iter().filter(|n| baseline.contains(*n)).collect();
    let mut work: Vec<&RecordId> = resolved.iter().copied().collect();
    while let Some(done) = work.pop() {
        for &dep in dependents.get(done).map(Vec::as_slice).unwrap_or_default() {
            let left = pending.get_mut(dep).expect("dependent has edges");
            *left -= 1;
            if *left == 0 && resolved.insert(dep) {
                work.push(dep);
            }
        }
    }
    let unresolved = nodes
        .iter()
        .filter(|n| !resolved.contains(n))
        .cloned()
        .collect();

    let mut edges: Vec<RequirementEdge> = adjacency
        .into_iter()
        .flat_map(|(from, targets)| {
            targets.into_iter().map(move |to| RequirementEdge {
                from: from.clone(),
                to,
            })
        })
        .collect();
    edges.sort();

    Ok(RiClosure {
        roots: roots.to_vec(),
        baseline_set: nodes
            .iter()
            .filter(|n| baseline.contains(*n))
            .cloned()
            .collect(),
        nodes,
        edges,
        unresolved,
    })
}
