//! The tree of possible futures over a sampled set of interventions.
//!
//! Every node owns the interventions whose rollout starts with the node's
//! prefix of semantic events. Expanding a node runs the batched forward model
//! on the node's world states and splits its interventions by next event,
//! refining a tessellation of intervention space.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Scene;
use crate::dynamics::{self, SemanticEvent, Vec2, WorldState, DEFAULT_HORIZON};
use crate::rng::{self, Rng};

pub type NodeId = usize;

/// Maximum prefix length of any tree node.
pub const MAX_TREE_DEPTH: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("scene has no pivot")]
    MissingPivot,
    #[error("scene has no object {0}")]
    UnknownPivot(crate::ObjectId),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node {0} has no interventions")]
    EmptyNode(NodeId),
    #[error("node {node} cannot be expanded: {reason}")]
    NotExpandable { node: NodeId, reason: &'static str },
}

/// The pivot's velocity at `t = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub velocity: Vec2,
}

impl Intervention {
    pub fn new(vx: f64, vy: f64) -> Self {
        Self {
            velocity: Vec2::new(vx, vy),
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// Uniform direction, uniform speed in `[min_speed, max_speed]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionDistribution {
    pub min_speed: f64,
    pub max_speed: f64,
}

impl Default for InterventionDistribution {
    fn default() -> Self {
        Self {
            min_speed: 0.5,
            max_speed: 3.0,
        }
    }
}

impl InterventionDistribution {
    pub fn sample(&self, rng: &mut Rng) -> Intervention {
        let angle = rng.gen_range(0.0..TAU);
        let speed = rng.gen_range(self.min_speed..=self.max_speed);
        Intervention {
            velocity: Vec2::from_polar(speed, angle),
        }
    }

    pub fn contains(&self, y: &Intervention) -> bool {
        let s = y.speed();
        s >= self.min_speed - 1e-12 && s <= self.max_speed + 1e-12
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub sample_count: usize,
    pub max_depth: usize,
    pub horizon: f64,
    pub interventions: InterventionDistribution,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            sample_count: 1_000_000,
            max_depth: MAX_TREE_DEPTH,
            horizon: DEFAULT_HORIZON,
            interventions: InterventionDistribution::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    /// Event leading from the parent to this node; `None` for the root and
    /// for terminal "null" children.
    pub event: Option<SemanticEvent>,
    pub prefix: Vec<SemanticEvent>,
    /// Sorted indices into [`EventTree::interventions`].
    pub samples: Vec<u32>,
    pub children: Vec<NodeId>,
    /// Null child: interventions that produce no event after the prefix.
    pub terminal: bool,
    pub expanded: bool,
    pub predicted_score: Option<f64>,
    pub label_score: Option<f64>,
    states: Vec<WorldState>,
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        self.prefix.len()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Clone, Debug)]
pub struct EventTree {
    nodes: Vec<TreeNode>,
    scene: Scene,
    interventions: Vec<Intervention>,
    config: TreeConfig,
    dynamics_failures: usize,
}

/// Size of the intersection of two sorted index lists.
pub fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

impl EventTree {
    pub const ROOT: NodeId = 0;

    /// Root over `config.sample_count` interventions drawn with `seed`.
    pub fn init_root(scene: &Scene, config: TreeConfig, seed: u64) -> Result<Self, TreeError> {
        Self::init_root_with(scene, config, seed, &[])
    }

    /// Like [`EventTree::init_root`], with `extra` interventions appended
    /// after the random draws (used to guarantee support for a known
    /// solution when labelling).
    pub fn init_root_with(
        scene: &Scene,
        config: TreeConfig,
        seed: u64,
        extra: &[Intervention],
    ) -> Result<Self, TreeError> {
        let pivot = scene.pivot.ok_or(TreeError::MissingPivot)?;
        let pivot_index = scene
            .initial_state()
            .find(pivot)
            .ok_or(TreeError::UnknownPivot(pivot))?;
        if config.sample_count == 0 && extra.is_empty() {
            return Err(TreeError::NoSamples);
        }
        let mut rng = rng::stream(seed, "tree-samples", 0);
        let mut interventions: Vec<Intervention> = (0..config.sample_count)
            .map(|_| config.interventions.sample(&mut rng))
            .collect();
        interventions.extend_from_slice(extra);
        let base = scene.initial_state();
        let states = interventions
            .iter()
            .map(|y| {
                let mut w = base.clone();
                w.objects[pivot_index].velocity = y.velocity;
                w
            })
            .collect();
        let root = TreeNode {
            id: Self::ROOT,
            parent: None,
            event: None,
            prefix: Vec::new(),
            samples: (0..interventions.len() as u32).collect(),
            children: Vec::new(),
            terminal: false,
            expanded: false,
            predicted_score: None,
            label_score: None,
            states,
        };
        Ok(Self {
            nodes: vec![root],
            scene: scene.clone(),
            interventions,
            config,
            dynamics_failures: 0,
        })
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[Self::ROOT]
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut TreeNode {
        &mut self.nodes[id]
    }

    pub fn get(&self, id: NodeId) -> Result<&TreeNode, TreeError> {
        self.nodes.get(id).ok_or(TreeError::UnknownNode(id))
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn interventions(&self) -> &[Intervention] {
        &self.interventions
    }

    pub fn sample_count(&self) -> usize {
        self.interventions.len()
    }

    /// Samples routed to null children because the forward model rejected
    /// their state.
    pub fn dynamics_failures(&self) -> usize {
        self.dynamics_failures
    }

    /// World state of every sample currently held by an unexpanded node.
    pub fn states(&self, id: NodeId) -> &[WorldState] {
        &self.nodes[id].states
    }

    pub fn is_expandable(&self, id: NodeId) -> bool {
        !self.nodes[id].expanded && self.has_future(id)
    }

    /// Whether `id` has (or would have) children, regardless of whether it
    /// was expanded already.
    pub fn has_future(&self, id: NodeId) -> bool {
        let n = &self.nodes[id];
        !n.terminal && n.depth() < self.config.max_depth && !n.samples.is_empty()
    }

    /// Ancestors of `id` from the root down to and including `id`.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn is_ancestor(&self, ancestor: NodeId, mut node: NodeId) -> bool {
        loop {
            if node == ancestor {
                return true;
            }
            match self.nodes[node].parent {
                Some(p) => node = p,
                None => return false,
            }
        }
    }

    /// Non-terminal child reached through `event`.
    pub fn child_with_event(&self, id: NodeId, event: SemanticEvent) -> Option<NodeId> {
        self.nodes[id]
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c].event == Some(event))
    }

    pub fn null_child(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id]
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c].terminal)
    }

    /// Split a node's interventions by their next semantic event.
    ///
    /// One child per distinct event (in event order), then a terminal null
    /// child for interventions with no further event. Expanding an already
    /// expanded node returns its children.
    pub fn expand_node(&mut self, id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        let node = self.nodes.get(id).ok_or(TreeError::UnknownNode(id))?;
        if node.expanded {
            return Ok(node.children.clone());
        }
        if node.terminal {
            return Err(TreeError::NotExpandable {
                node: id,
                reason: "terminal node",
            });
        }
        if node.depth() >= self.config.max_depth {
            return Err(TreeError::NotExpandable {
                node: id,
                reason: "depth limit reached",
            });
        }
        let mut states = std::mem::take(&mut self.nodes[id].states);
        let samples = self.nodes[id].samples.clone();
        let outcomes = dynamics::batched_advance(&mut states, self.config.horizon);

        let mut groups: BTreeMap<SemanticEvent, (Vec<u32>, Vec<WorldState>)> = BTreeMap::new();
        let mut quiet: Vec<u32> = Vec::new();
        for ((sample, state), outcome) in samples.into_iter().zip(states).zip(outcomes) {
            match outcome {
                Ok(Some(c)) => {
                    let group = groups.entry(c.event).or_default();
                    group.0.push(sample);
                    group.1.push(state);
                }
                Ok(None) => quiet.push(sample),
                Err(_) => {
                    self.dynamics_failures += 1;
                    quiet.push(sample);
                }
            }
        }

        let prefix = self.nodes[id].prefix.clone();
        let mut children = Vec::with_capacity(groups.len() + 1);
        for (event, (samples, states)) in groups {
            let mut child_prefix = prefix.clone();
            child_prefix.push(event);
            children.push(self.push_node(id, Some(event), child_prefix, samples, states, false));
        }
        if !quiet.is_empty() {
            children.push(self.push_node(id, None, prefix, quiet, Vec::new(), true));
        }
        let node = &mut self.nodes[id];
        node.children = children.clone();
        node.expanded = true;
        Ok(children)
    }

    fn push_node(
        &mut self,
        parent: NodeId,
        event: Option<SemanticEvent>,
        prefix: Vec<SemanticEvent>,
        samples: Vec<u32>,
        states: Vec<WorldState>,
        terminal: bool,
    ) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            id,
            parent: Some(parent),
            event,
            prefix,
            samples,
            children: Vec::new(),
            terminal,
            expanded: false,
            predicted_score: None,
            label_score: None,
            states,
        });
        id
    }

    /// Deepest node whose prefix is a prefix of `seq`, expanding along the
    /// way. `None` if `seq` is non-empty and not even its first event has
    /// sample support.
    pub fn locate_sequence(&mut self, seq: &[SemanticEvent]) -> Option<NodeId> {
        self.locate_sequence_traced(seq, |_| {})
    }

    /// [`EventTree::locate_sequence`], reporting every node it expands.
    pub fn locate_sequence_traced(
        &mut self,
        seq: &[SemanticEvent],
        mut on_expand: impl FnMut(NodeId),
    ) -> Option<NodeId> {
        let mut node = Self::ROOT;
        for (k, &event) in seq.iter().enumerate() {
            if !self.nodes[node].expanded {
                if !self.is_expandable(node) {
                    break;
                }
                on_expand(node);
                if self.expand_node(node).is_err() {
                    break;
                }
            }
            match self.child_with_event(node, event) {
                Some(child) => node = child,
                None if k == 0 => return None,
                None => break,
            }
        }
        Some(node)
    }

    /// Uniformly random intervention of a node.
    pub fn select_intervention(&self, id: NodeId, rng: &mut Rng) -> Result<Intervention, TreeError> {
        let node = self.get(id)?;
        if node.samples.is_empty() {
            return Err(TreeError::EmptyNode(id));
        }
        let pick = node.samples[rng.gen_range(0..node.samples.len())];
        Ok(self.interventions[pick as usize])
    }

    /// Rollout-independent check that every expanded node's children split
    /// its samples exactly. Returns the offending node ids.
    pub fn partition_violations(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.expanded)
            .filter(|n| {
                let mut union: Vec<u32> = n
                    .children
                    .iter()
                    .flat_map(|&c| self.nodes[c].samples.iter().copied())
                    .collect();
                union.sort_unstable();
                let disjoint = union.windows(2).all(|w| w[0] != w[1]);
                !(disjoint && union == n.samples)
            })
            .map(|n| n.id)
            .collect()
    }

    pub fn dump(&self) -> TreeDump {
        TreeDump {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDump {
                    id: n.id,
                    parent: n.parent,
                    prefix: n.prefix.clone(),
                    sample_count: n.samples.len(),
                    predicted_score: n.predicted_score,
                    label_score: n.label_score,
                })
                .collect(),
        }
    }
}

/// JSON layout written by `inspect-tree`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub nodes: Vec<NodeDump>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDump {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub prefix: Vec<SemanticEvent>,
    pub sample_count: usize,
    pub predicted_score: Option<f64>,
    pub label_score: Option<f64>,
}
