//! The tree as a Markov reward process: transitions follow sample
//! fractions, and entering a null child pays 1 when the completed cascade
//! satisfies the instruction. Its value function should equal the
//! sample-fraction score at every node.

use serde::{Deserialize, Serialize};

use crate::event_tree::{EventTree, NodeId};
use crate::instruction::{satisfies, Instruction};
use crate::scoring::{sample_fraction, sample_satisfaction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrpReport {
    pub max_deviation: f64,
    pub nodes_compared: usize,
    /// Nodes whose subtree hits the depth cap before terminating.
    pub excluded: usize,
}

/// Expand every expandable node, stopping once the tree holds `max_nodes`
/// nodes. Returns whether the tree is complete.
pub fn expand_fully(tree: &mut EventTree, max_nodes: usize) -> bool {
    let mut stack = vec![EventTree::ROOT];
    while let Some(u) = stack.pop() {
        if tree.len() >= max_nodes {
            return false;
        }
        if tree.is_expandable(u) {
            stack.extend(tree.expand_node(u).expect("expandable"));
        } else {
            stack.extend(tree.node(u).children.iter().copied());
        }
    }
    true
}

/// Maximum |V_MRP − V̂| over all non-terminal nodes whose subtrees end in
/// null children.
pub fn mrp_check(tree: &EventTree, g: &Instruction) -> MrpReport {
    let ok = sample_satisfaction(tree, g);
    let n = tree.len();
    // Children always have larger ids than their parent.
    let mut value = vec![0.0; n];
    let mut capped = vec![false; n];
    for u in (0..n).rev() {
        let node = tree.node(u);
        if node.terminal {
            continue;
        }
        if !node.expanded {
            capped[u] = true;
            continue;
        }
        let total = node.sample_count() as f64;
        let reward = satisfies(&node.prefix, g) as u8 as f64;
        let mut v = 0.0;
        for &c in &node.children {
            let child = tree.node(c);
            let p = child.sample_count() as f64 / total;
            v += if child.terminal { p * reward } else { p * value[c] };
            capped[u] |= capped[c];
        }
        value[u] = v;
    }
    let mut report = MrpReport {
        max_deviation: 0.0,
        nodes_compared: 0,
        excluded: 0,
    };
    for u in 0..n {
        let node: NodeId = u;
        if tree.node(node).terminal {
            continue;
        }
        if capped[node] {
            report.excluded += 1;
            continue;
        }
        let dev = (value[node] - sample_fraction(tree, node, &ok)).abs();
        report.max_deviation = report.max_deviation.max(dev);
        report.nodes_compared += 1;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_episode_with_retries, GenConfig};
    use crate::event_tree::TreeConfig;

    #[test]
    fn value_iteration_matches_sample_fractions() {
        let ep = generate_episode_with_retries(3, 11, &GenConfig::default(), 10).unwrap().0;
        let cfg = TreeConfig {
            sample_count: 150,
            horizon: 8.0,
            ..TreeConfig::default()
        };
        let mut tree = EventTree::init_root(&ep.scene, cfg, 5).unwrap();
        assert!(expand_fully(&mut tree, 20_000));
        for g in &ep.instructions {
            let r = mrp_check(&tree, g);
            assert!(r.nodes_compared > 0);
            assert!(r.max_deviation < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn leaves_pay_their_own_satisfaction() {
        let ep = generate_episode_with_retries(1, 2, &GenConfig::default(), 10).unwrap().0;
        let cfg = TreeConfig {
            sample_count: 1,
            horizon: 5.0,
            ..TreeConfig::default()
        };
        let mut tree = EventTree::init_root_with(&ep.scene, cfg, 0, &[ep.y_star]).unwrap();
        assert!(expand_fully(&mut tree, 1000));
        let r = mrp_check(&tree, &ep.instructions[0]);
        assert!(r.max_deviation == 0.0);
    }
}
