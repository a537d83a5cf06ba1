//! Node score labels from sample fractions, ablation labelers, and the
//! counterfactual correction of predicted scores.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, SemanticEvent};
use crate::event_tree::{intersection_size, EventTree, NodeId};
use crate::instruction::{satisfies, Instruction};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Probabilistic,
    Linear,
    Step,
    AllOrNone,
    Negative,
}

/// Which positive labels to put on the root-to-target path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    Probabilistic,
    Linear,
    Step,
    AllOrNone,
}

impl LabelScheme {
    pub fn kind(self) -> ScoreKind {
        match self {
            LabelScheme::Probabilistic => ScoreKind::Probabilistic,
            LabelScheme::Linear => ScoreKind::Linear,
            LabelScheme::Step => ScoreKind::Step,
            LabelScheme::AllOrNone => ScoreKind::AllOrNone,
        }
    }
}

impl std::str::FromStr for LabelScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "probabilistic" => Ok(Self::Probabilistic),
            "linear" => Ok(Self::Linear),
            "step" => Ok(Self::Step),
            "all_or_none" => Ok(Self::AllOrNone),
            other => Err(format!("unknown label scheme {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreLabel {
    pub node: NodeId,
    pub prefix: Vec<SemanticEvent>,
    pub value: f64,
    pub kind: ScoreKind,
}

/// Label as stored next to a dataset row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub node_prefix: Vec<SemanticEvent>,
    pub score: f64,
    pub kind: ScoreKind,
}

impl From<&ScoreLabel> for LabelRecord {
    fn from(l: &ScoreLabel) -> Self {
        Self {
            node_prefix: l.prefix.clone(),
            score: l.value,
            kind: l.kind,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("target sequence lost sample support at depth {reached} of {wanted}; sample dropped")]
    DropSample { reached: usize, wanted: usize },
    #[error("node {0} holds no interventions")]
    EmptyNode(NodeId),
}

/// Expand along `target_seq` and return the node whose prefix equals it.
pub fn locate_target(tree: &mut EventTree, target_seq: &[SemanticEvent]) -> Result<NodeId, ScoreError> {
    let found = tree.locate_sequence(target_seq);
    match found {
        Some(u) if tree.node(u).prefix.len() == target_seq.len() => Ok(u),
        other => Err(ScoreError::DropSample {
            reached: other.map_or(0, |u| tree.node(u).prefix.len()),
            wanted: target_seq.len(),
        }),
    }
}

/// Sample-fraction labels on the path to `target_seq` plus negatives.
pub fn label_solution_path(
    tree: &mut EventTree,
    target_seq: &[SemanticEvent],
    rng: &mut Rng,
) -> Result<Vec<ScoreLabel>, ScoreError> {
    label_ablation(LabelScheme::Probabilistic, tree, target_seq, rng)
}

/// Labels for every node on the root-to-target path (root included) under
/// `scheme`, then value-0 negatives: children diverging from the path and
/// the nodes of one random path of the same length.
pub fn label_ablation(
    scheme: LabelScheme,
    tree: &mut EventTree,
    target_seq: &[SemanticEvent],
    rng: &mut Rng,
) -> Result<Vec<ScoreLabel>, ScoreError> {
    let target = locate_target(tree, target_seq)?;
    let path = tree.path_to(target);
    let target_count = tree.node(target).sample_count();
    let target_depth = tree.node(target).depth();
    let mut labels = Vec::new();
    for &u in &path {
        let n = tree.node(u);
        let value = match scheme {
            LabelScheme::Probabilistic => target_count as f64 / n.sample_count() as f64,
            LabelScheme::Linear => {
                if target_depth == 0 {
                    1.0
                } else {
                    n.depth() as f64 / target_depth as f64
                }
            }
            LabelScheme::Step => 0.5 + 0.5 * (u == target) as u8 as f64,
            LabelScheme::AllOrNone => (u == target) as u8 as f64,
        };
        labels.push(ScoreLabel {
            node: u,
            prefix: n.prefix.clone(),
            value,
            kind: scheme.kind(),
        });
    }

    let negative = |tree: &EventTree, u: NodeId, labels: &mut Vec<ScoreLabel>| {
        let n = tree.node(u);
        if n.terminal || path.contains(&u) || labels.iter().any(|l| l.node == u) {
            return;
        }
        labels.push(ScoreLabel {
            node: u,
            prefix: n.prefix.clone(),
            value: 0.0,
            kind: ScoreKind::Negative,
        });
    };
    for &u in &path[..path.len() - 1] {
        for &c in &tree.node(u).children.clone() {
            negative(tree, c, &mut labels);
        }
    }
    let mut u = EventTree::ROOT;
    for _ in 0..target_depth {
        if !tree.node(u).expanded {
            if !tree.is_expandable(u) {
                break;
            }
            tree.expand_node(u).expect("expandable node");
        }
        let options: Vec<NodeId> = tree
            .node(u)
            .children
            .iter()
            .copied()
            .filter(|&c| !tree.node(c).terminal)
            .collect();
        let Some(&next) = options.choose(rng) else {
            break;
        };
        negative(tree, next, &mut labels);
        u = next;
    }
    Ok(labels)
}

/// Fraction of `u`'s interventions that also belong to `u_obs`.
pub fn fr_estimate(tree: &EventTree, u_obs: NodeId, u: NodeId) -> Result<f64, ScoreError> {
    let su = &tree.node(u).samples;
    if su.is_empty() {
        return Err(ScoreError::EmptyNode(u));
    }
    Ok(intersection_size(&tree.node(u_obs).samples, su) as f64 / su.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corrected {
    pub raw: f64,
    /// `raw` clipped to `[0, 1]`, used as a search priority.
    pub clamped: f64,
}

/// Score of `u` given that the observed cascade does not satisfy the
/// instruction: `v_u - v_obs * fr`.
pub fn counterfactual_update(v_u: f64, v_obs: f64, fr: f64) -> Corrected {
    let raw = v_u - v_obs * fr;
    Corrected {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    }
}

/// For every intervention of the tree, whether its full rollout (to the
/// tree's depth and horizon) satisfies `g`.
pub fn sample_satisfaction(tree: &EventTree, g: &Instruction) -> Vec<bool> {
    let cfg = tree.config();
    tree.interventions()
        .iter()
        .map(|y| {
            let w = tree.scene().with_intervention(y).expect("tree scenes have a pivot");
            dynamics::rollout_events(&w, cfg.max_depth, cfg.horizon)
                .map(|c| satisfies(&dynamics::events_of(&c), g))
                .unwrap_or(false)
        })
        .collect()
}

/// Fraction of a node's interventions flagged in `ok`.
pub fn sample_fraction(tree: &EventTree, u: NodeId, ok: &[bool]) -> f64 {
    let s = &tree.node(u).samples;
    s.iter().filter(|&&k| ok[k as usize]).count() as f64 / s.len() as f64
}
