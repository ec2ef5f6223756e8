//! Arena-backed search tree over subplans.
//!
//! Nodes are stored in a `Vec` and addressed by [`NodeId`]; ids are handed out in
//! increasing order and never reused. Selection uses the redundancy-aware UCT rule
//!
//! ```text
//! V_j + beta * sqrt( ln(N_i + w * N^_i) / (N_j + w * N^_j) )
//! ```
//!
//! where `N^` counts selections made earlier in the current batch. With `w = 0` this is
//! plain UCT. Backpropagation keeps the maximum reward seen in each subtree.

use std::fmt::Write as _;

use thiserror::Error;

use crate::core_model::{GuidanceSchedule, MetaAction, State, Subplan, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("node {node} already has a child for guidance {action}")]
    DuplicateChild { node: usize, action: MetaAction },
    #[error("guidance {0} is not in the configured guidance set")]
    UnknownAction(MetaAction),
    #[error("no child of the root has been visited")]
    NoVisitedNode,
    #[error("guidance set must not be empty")]
    EmptyGuidanceSet,
}

/// Value and visit statistics read by the selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeStats {
    pub value: f64,
    pub visits: u64,
    pub temp_visits: u64,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub parent: Option<NodeId>,
    /// Index into the guidance set of the action that created this node.
    pub action: Option<usize>,
    /// Child per guidance-set index.
    pub children: Vec<Option<NodeId>>,
    pub subplan: Subplan,
    pub depth: usize,
    pub value: f64,
    pub visits: u64,
    pub temp_visits: u64,
    pub terminal: bool,
}

impl Node {
    pub fn stats(&self) -> NodeStats {
        NodeStats {
            value: self.value,
            visits: self.visits,
            temp_visits: self.temp_visits,
        }
    }

    pub fn is_fully_expanded(&self) -> bool {
        self.children.iter().all(Option::is_some)
    }

    pub fn child_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.children.iter().flatten().copied()
    }
}

/// Redundancy-aware UCT score of `child` under `parent`. Children with no real or
/// in-batch visits score `+inf`.
pub fn uct_score(child: NodeStats, parent: NodeStats, beta: f64, w: f64) -> f64 {
    let denom = child.visits as f64 + child.temp_visits as f64 * w;
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    let parent_total = (parent.visits as f64 + parent.temp_visits as f64 * w).max(1.0);
    child.value + beta * (parent_total.ln() / denom).sqrt()
}

/// Argmax of [`uct_score`] over `children`; the first maximum wins.
pub fn select_child(parent: NodeStats, children: &[NodeStats], beta: f64, w: f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, c) in children.iter().enumerate() {
        let score = uct_score(*c, parent, beta, w);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    guidance_set: Vec<MetaAction>,
}

impl Tree {
    /// A tree holding only the root, whose subplan is the single start state.
    pub fn new(
        start: State,
        guidance_set: Vec<MetaAction>,
        root_terminal: bool,
    ) -> Result<Self, TreeError> {
        if guidance_set.is_empty() {
            return Err(TreeError::EmptyGuidanceSet);
        }
        let root = Node {
            parent: None,
            action: None,
            children: vec![None; guidance_set.len()],
            subplan: Subplan::denoised(vec![start]),
            depth: 0,
            value: 0.0,
            visits: 0,
            temp_visits: 0,
            terminal: root_terminal,
        };
        Ok(Self {
            nodes: vec![root],
            guidance_set,
        })
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn guidance_set(&self) -> &[MetaAction] {
        &self.guidance_set
    }

    pub fn action_index(&self, action: MetaAction) -> Result<usize, TreeError> {
        self.guidance_set
            .iter()
            .position(|a| *a == action)
            .ok_or(TreeError::UnknownAction(action))
    }

    /// Guidance-set indices that have no child yet, in guidance-set order.
    pub fn unexpanded_actions(&self, id: NodeId) -> impl Iterator<Item = usize> + '_ {
        self.node(id)
            .children
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .map(|(i, _)| i)
    }

    /// Best child of `id` under the selection rule, if it has any children.
    pub fn best_uct_child(&self, id: NodeId, beta: f64, w: f64) -> Option<NodeId> {
        let node = self.node(id);
        let parent = node.stats();
        let mut best: Option<(f64, NodeId)> = None;
        for child in node.child_ids() {
            let score = uct_score(self.node(child).stats(), parent, beta, w);
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, child));
            }
        }
        best.map(|(_, c)| c)
    }

    /// Descends from the root through fully expanded, non-terminal nodes and returns the
    /// visited path. Every node on the path gets its in-batch count incremented.
    pub fn select_leaf(&mut self, beta: f64, w: f64) -> Vec<NodeId> {
        let mut path = vec![self.root()];
        let mut current = self.root();
        loop {
            let node = self.node(current);
            if node.terminal || !node.is_fully_expanded() {
                break;
            }
            match self.best_uct_child(current, beta, w) {
                Some(next) => {
                    path.push(next);
                    current = next;
                }
                None => break,
            }
        }
        for id in &path {
            self.nodes[id.0].temp_visits += 1;
        }
        path
    }

    pub fn reset_temp_counts(&mut self) {
        for node in &mut self.nodes {
            node.temp_visits = 0;
        }
    }

    pub fn expand(
        &mut self,
        parent: NodeId,
        action: MetaAction,
        subplan: Subplan,
    ) -> Result<NodeId, TreeError> {
        let index = self.action_index(action)?;
        self.expand_index(parent, index, subplan, false)
    }

    /// Adds a child under guidance-set index `action`.
    pub fn expand_index(
        &mut self,
        parent: NodeId,
        action: usize,
        subplan: Subplan,
        terminal: bool,
    ) -> Result<NodeId, TreeError> {
        let Some(slot) = self.guidance_set.get(action) else {
            return Err(TreeError::UnknownAction(MetaAction::new(f64::NAN)));
        };
        if self.nodes[parent.0].children[action].is_some() {
            return Err(TreeError::DuplicateChild {
                node: parent.0,
                action: *slot,
            });
        }
        let id = NodeId(self.nodes.len());
        let depth = self.nodes[parent.0].depth + 1;
        self.nodes.push(Node {
            parent: Some(parent),
            action: Some(action),
            children: vec![None; self.guidance_set.len()],
            subplan,
            depth,
            value: 0.0,
            visits: 0,
            temp_visits: 0,
            terminal,
        });
        self.nodes[parent.0].children[action] = Some(id);
        Ok(id)
    }

    pub fn set_terminal(&mut self, id: NodeId, terminal: bool) {
        self.nodes[id.0].terminal = terminal;
    }

    /// Applies `(leaf, reward)` results in order: every node from the leaf up to the
    /// root gets one more visit and keeps the larger of its value and the reward.
    pub fn backpropagate_batch(&mut self, results: &[(NodeId, f64)]) {
        for &(leaf, reward) in results {
            let mut current = Some(leaf);
            while let Some(id) = current {
                let node = &mut self.nodes[id.0];
                node.visits += 1;
                node.value = node.value.max(reward);
                current = node.parent;
            }
        }
    }

    /// One selection, then up to `m` unexpanded actions of the selected leaf.
    pub fn leaf_parallel_select(&mut self, beta: f64, w: f64, m: usize) -> Vec<(NodeId, usize)> {
        let path = self.select_leaf(beta, w);
        let leaf = *path.last().expect("path always holds the root");
        if self.node(leaf).terminal {
            return Vec::new();
        }
        self.unexpanded_actions(leaf)
            .take(m.max(1))
            .map(|a| (leaf, a))
            .collect()
    }

    /// Root-to-node path, root first.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut current = id;
        while let Some(parent) = self.node(current).parent {
            path.push(parent);
            current = parent;
        }
        path.reverse();
        path
    }

    /// Concatenation of the subplans from the root to `id`, starting with the start state.
    pub fn prefix(&self, id: NodeId) -> Trajectory {
        let mut states = Vec::new();
        for node in self.path_to(id) {
            states.extend_from_slice(&self.node(node).subplan.states);
        }
        Trajectory::from_states_unchecked(states)
    }

    pub fn schedule(&self, id: NodeId) -> GuidanceSchedule {
        GuidanceSchedule {
            actions: self
                .path_to(id)
                .into_iter()
                .filter_map(|n| self.node(n).action)
                .map(|a| self.guidance_set[a])
                .collect(),
        }
    }

    /// Follows the highest-value child (ties: more visits, then guidance order) down to a
    /// terminal or unvisited frontier and returns the endpoint.
    pub fn best_node(&self) -> Result<NodeId, TreeError> {
        let mut current = self.root();
        if !self
            .node(current)
            .child_ids()
            .any(|c| self.node(c).visits > 0)
        {
            return Err(TreeError::NoVisitedNode);
        }
        loop {
            let node = self.node(current);
            if node.terminal {
                break;
            }
            let mut best: Option<NodeId> = None;
            for child in node.child_ids() {
                let c = self.node(child);
                if c.visits == 0 {
                    continue;
                }
                best = match best {
                    None => Some(child),
                    Some(b) => {
                        let bn = self.node(b);
                        if c.value > bn.value || (c.value == bn.value && c.visits > bn.visits) {
                            Some(child)
                        } else {
                            Some(b)
                        }
                    }
                };
            }
            match best {
                Some(next) => current = next,
                None => break,
            }
        }
        Ok(current)
    }

    pub fn best_path(&self) -> Result<(GuidanceSchedule, Trajectory), TreeError> {
        let best = self.best_node()?;
        Ok((self.schedule(best), self.prefix(best)))
    }

    /// One line per node: `id parent depth action V N children...`, `-` for none.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let parent = node
                .parent
                .map_or_else(|| "-".to_string(), |p| p.0.to_string());
            let action = node
                .action
                .map_or_else(|| "-".to_string(), |a| self.guidance_set[a].to_string());
            let _ = write!(
                out,
                "{i} {parent} {} {action} {} {}",
                node.depth, node.value, node.visits
            );
            for child in node.child_ids() {
                let _ = write!(out, " {}", child.0);
            }
            out.push('\n');
        }
        out
    }
}
