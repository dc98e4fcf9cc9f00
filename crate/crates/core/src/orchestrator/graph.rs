use serde::Serialize;

use super::header::{McpHeader, StageKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum NodeRole {
    /// Index query at the header tier.
    Retrieve { k: usize },
    /// One backend call of a fanned-out stage.
    Leaf { backend: String },
    /// Waits for every leaf, then takes the first ok result in backend order.
    Join,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphNode {
    pub id: usize,
    pub stage_index: usize,
    pub kind: StageKind,
    #[serde(flatten)]
    pub role: NodeRole,
    pub depends_on: Vec<usize>,
}

/// Executable plan for one request. Plain data; inspect before running.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrchestrationGraph {
    pub header: McpHeader,
    pub nodes: Vec<GraphNode>,
}

impl OrchestrationGraph {
    pub fn stage_nodes(&self, stage_index: usize) -> impl Iterator<Item = &GraphNode> {
        self.nodes.iter().filter(move |n| n.stage_index == stage_index)
    }

    /// Backends of a stage's leaves, in configured order.
    pub fn leaves(&self, stage_index: usize) -> Vec<&str> {
        self.stage_nodes(stage_index)
            .filter_map(|n| match &n.role {
                NodeRole::Leaf { backend } => Some(backend.as_str()),
                _ => None,
            })
            .collect()
    }
}

/// Linear chain of stages; a generating stage fans out to one leaf per
/// backend followed by a join.
pub fn plan(header: &McpHeader) -> OrchestrationGraph {
    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut tail: Option<usize> = None;
    for (i, stage) in header.stack.iter().enumerate() {
        let upstream: Vec<usize> = tail.into_iter().collect();
        if stage.kind == StageKind::Retrieve {
            let id = nodes.len();
            nodes.push(GraphNode {
                id,
                stage_index: i,
                kind: stage.kind,
                role: NodeRole::Retrieve { k: stage.k() },
                depends_on: upstream,
            });
            tail = Some(id);
            continue;
        }
        let leaves: Vec<usize> = stage
            .backends
            .iter()
            .map(|b| {
                let id = nodes.len();
                nodes.push(GraphNode {
                    id,
                    stage_index: i,
                    kind: stage.kind,
                    role: NodeRole::Leaf { backend: b.clone() },
                    depends_on: upstream.clone(),
                });
                id
            })
            .collect();
        let id = nodes.len();
        nodes.push(GraphNode {
            id,
            stage_index: i,
            kind: stage.kind,
            role: NodeRole::Join,
            depends_on: leaves,
        });
        tail = Some(id);
    }
    OrchestrationGraph {
        header: header.clone(),
        nodes,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::orchestrator::StageSpec;
    use crate::SecurityTier;

    #[test]
    fn retrieve_then_three_way_infer() {
        let header = McpHeader {
            stack: vec![StageSpec::retrieve(8), StageSpec::generate(StageKind::Infer, &["a", "b", "c"])],
            budgets: BTreeMap::from([(0, 100), (1, 100)]),
            security_tier: SecurityTier::Public,
        };
        let g = plan(&header);
        let count = |f: &dyn Fn(&NodeRole) -> bool| g.nodes.iter().filter(|n| f(&n.role)).count();
        assert_eq!(count(&|r| matches!(r, NodeRole::Retrieve { .. })), 1);
        assert_eq!(count(&|r| matches!(r, NodeRole::Leaf { .. })), 3);
        assert_eq!(count(&|r| matches!(r, NodeRole::Join)), 1);
        assert_eq!(g.leaves(1), ["a", "b", "c"]);
        // Leaves hang off the retrieve node; the join waits for all leaves.
        assert!(g.nodes[1..4].iter().all(|n| n.depends_on == [0]));
        assert_eq!(g.nodes[4].depends_on, [1, 2, 3]);
    }
}
