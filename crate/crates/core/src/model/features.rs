//! Graph features of a node prefix conditioned on an instruction.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ObjectId, SemanticEvent};
use crate::instruction::{build_dag, embed, EventDag, Instruction, EMBEDDING_DIM};

/// one-hot (12), is_stationary, is_active, five instruction inner products,
/// bottleneck_ind, count, count_ind.
pub const OBJ_FEAT_DIM: usize = ObjectId::COUNT + 2 + 5 + 3;
pub const NODE_FEAT_DIM: usize = 2 * OBJ_FEAT_DIM;
pub const EDGE_FEAT_DIM: usize = OBJ_FEAT_DIM;
pub const GLOBAL_FEAT_DIM: usize = EMBEDDING_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// Edges follow shared objects between events.
    Dag,
    /// Edges connect consecutive events only.
    Sequential,
}

impl std::str::FromStr for GraphMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dag" => Ok(Self::Dag),
            "sequential" => Ok(Self::Sequential),
            other => Err(format!("unknown graph mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphSample {
    pub node_features: Array2<f64>,
    /// Directed edges as (source, destination) node indices.
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Array2<f64>,
    pub global: Array1<f64>,
    pub label: f64,
}

impl GraphSample {
    pub fn n_nodes(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edge multiplicities; two objects shared by the same pair of events
    /// give that pair a count of two.
    pub fn adjacency(&self) -> Array2<u32> {
        let n = self.n_nodes();
        let mut a = Array2::zeros((n, n));
        for &(s, d) in &self.edges {
            a[[s, d]] += 1;
        }
        a
    }

    /// Same graph with node `k` moved to position `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> GraphSample {
        let mut nodes = Array2::zeros(self.node_features.raw_dim());
        for (k, &p) in perm.iter().enumerate() {
            nodes.row_mut(p).assign(&self.node_features.row(k));
        }
        GraphSample {
            node_features: nodes,
            edges: self.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect(),
            edge_features: self.edge_features.clone(),
            global: self.global.clone(),
            label: self.label,
        }
    }
}

/// For every event, whether a chain of events starting at the pivot leads
/// into it.
fn pivot_reached(dag: &EventDag, pivot: ObjectId) -> Vec<bool> {
    let mut reached = vec![false; dag.len()];
    for j in 0..dag.len() {
        reached[j] = dag.events[j].involves(pivot) || dag.parents(j).iter().any(|&i| reached[i]);
    }
    reached
}

fn obj_feat(out: &mut [f64], o: ObjectId, active: bool, g: &Instruction, emb: &[f64]) {
    let n = ObjectId::COUNT;
    out[o.index()] = 1.0;
    out[n] = o.is_stationary() as u8 as f64;
    out[n + 1] = active as u8 as f64;
    // The inner product of two one-hots is 1 exactly when they name the
    // same object.
    for slot in 0..5 {
        out[n + 2 + slot] = emb[slot * n + o.index()];
    }
    out[n + 7] = emb[5 * n];
    out[n + 8] = emb[5 * n + 1];
    out[n + 9] = emb[5 * n + 2];
    debug_assert_eq!(out[n + 9] == 1.0, g.count.is_some());
}

/// Graph of a non-empty prefix. Node `j` describes event `j`; the label is
/// left at zero.
pub fn featurize(prefix: &[SemanticEvent], g: &Instruction, mode: GraphMode) -> GraphSample {
    let dag = build_dag(prefix);
    let reached = pivot_reached(&dag, g.pivot);
    let emb = embed(g);
    let n = prefix.len();

    // Event of each object's previous appearance, for is_active.
    let mut last: [Option<usize>; ObjectId::COUNT] = [None; ObjectId::COUNT];
    let mut nodes = Array2::zeros((n, NODE_FEAT_DIM));
    for (j, e) in prefix.iter().enumerate() {
        let mut row = nodes.row_mut(j);
        let row = row.as_slice_mut().expect("standard layout");
        for (side, o) in e.objects().into_iter().enumerate() {
            let active = o.is_ball()
                && (o == g.pivot || last[o.index()].map_or(false, |i| reached[i]));
            let start = side * OBJ_FEAT_DIM;
            obj_feat(&mut row[start..start + OBJ_FEAT_DIM], o, active, g, &emb);
        }
        for o in e.objects() {
            last[o.index()] = Some(j);
        }
    }

    // Edge feature: the shared object's features as seen at the later event.
    let shared_feat = |to: usize, o: ObjectId| -> Vec<f64> {
        let side = if prefix[to].a == o { 0 } else { 1 };
        nodes.row(to).as_slice().expect("standard layout")[side * OBJ_FEAT_DIM..(side + 1) * OBJ_FEAT_DIM].to_vec()
    };

    let (edges, feats): (Vec<(usize, usize)>, Vec<Vec<f64>>) = match mode {
        GraphMode::Dag => dag
            .edges
            .iter()
            .map(|e| ((e.from, e.to), shared_feat(e.to, e.shared)))
            .unzip(),
        GraphMode::Sequential => (1..n)
            .map(|j| {
                let shared = prefix[j - 1]
                    .objects()
                    .into_iter()
                    .find(|&o| o.is_ball() && prefix[j].involves(o));
                let feat = shared.map_or_else(|| vec![0.0; EDGE_FEAT_DIM], |o| shared_feat(j, o));
                ((j - 1, j), feat)
            })
            .unzip(),
    };
    let mut edge_features = Array2::zeros((edges.len(), EDGE_FEAT_DIM));
    for (k, f) in feats.iter().enumerate() {
        edge_features.row_mut(k).assign(&Array1::from(f.clone()));
    }
    GraphSample {
        node_features: nodes,
        edges,
        edge_features,
        global: Array1::from(emb.to_vec()),
        label: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Wall;

    fn ev(a: usize, b: usize) -> SemanticEvent {
        SemanticEvent::new(ObjectId::new(a as u8).unwrap(), ObjectId::new(b as u8).unwrap())
    }

    const N: usize = ObjectId::COUNT;

    #[test]
    fn dimensions() {
        let g = Instruction::new(ObjectId::BALLS[0], ev(1, 2));
        let s = featurize(&[ev(0, 1), ev(1, 2)], &g, GraphMode::Dag);
        assert_eq!(s.node_features.dim(), (2, 44));
        assert_eq!(s.edge_features.dim(), (1, 22));
        assert_eq!(s.global.len(), 63);
        assert_eq!(s.adjacency().iter().sum::<u32>() as usize, s.n_edges());
    }

    #[test]
    fn active_follows_the_pivot_chain() {
        // red(0) is the pivot: red-green, then green-blue is active for green;
        // yellow-top wall is not.
        let g = Instruction::new(ObjectId::BALLS[0], ev(1, 2));
        let top = Wall::Top.id().index();
        let s = featurize(&[ev(0, 1), ev(3, top), ev(1, 2), ev(2, 3)], &g, GraphMode::Dag);
        let active = |j: usize, side: usize| s.node_features[[j, side * OBJ_FEAT_DIM + N + 1]];
        assert_eq!(active(0, 0), 1.0); // red, the pivot
        assert_eq!(active(0, 1), 0.0); // green had no prior event
        assert_eq!(active(1, 0), 0.0); // yellow
        assert_eq!(active(1, 1), 0.0); // wall
        assert_eq!(active(2, 0), 1.0); // green came from red
        assert_eq!(active(2, 1), 0.0); // blue had no prior event
        assert_eq!(active(3, 0), 1.0); // blue came from green
        assert_eq!(active(3, 1), 0.0); // yellow came from the wall hit
        assert_eq!(s.node_features[[1, OBJ_FEAT_DIM + N]], 1.0); // wall is stationary
    }

    #[test]
    fn inner_products_mark_instruction_objects() {
        let g = Instruction {
            pivot: ObjectId::BALLS[0],
            target: ev(1, 2),
            bottleneck: Some(ev(0, 9)),
            count: Some(2),
        };
        let s = featurize(&[ev(1, 3)], &g, GraphMode::Dag);
        let row = s.node_features.row(0);
        // green is target_obj_a
        assert_eq!(row[N + 2], 1.0);
        assert_eq!(row.slice(ndarray::s![N + 3..N + 7]).sum(), 0.0);
        assert_eq!((row[N + 7], row[N + 8], row[N + 9]), (1.0, 2.0, 1.0));
        // yellow matches nothing
        assert_eq!(row.slice(ndarray::s![OBJ_FEAT_DIM + N + 2..OBJ_FEAT_DIM + N + 7]).sum(), 0.0);
    }

    #[test]
    fn sequential_mode_chains_events() {
        let g = Instruction::new(ObjectId::BALLS[0], ev(1, 2));
        let seq = [ev(0, 1), ev(2, 3), ev(4, 5), ev(0, 4)];
        let s = featurize(&seq, &g, GraphMode::Sequential);
        assert_eq!(s.edges, vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(s.edge_features.row(0).sum(), 0.0);
        let d = featurize(&seq, &g, GraphMode::Dag);
        assert_eq!(d.edges, vec![(0, 3), (2, 3)]);
    }

    #[test]
    fn edge_feature_is_the_shared_object() {
        let g = Instruction::new(ObjectId::BALLS[0], ev(1, 2));
        let s = featurize(&[ev(0, 1), ev(1, 2)], &g, GraphMode::Dag);
        assert_eq!(s.edge_features[[0, 1]], 1.0);
        assert_eq!(s.edge_features.row(0).slice(ndarray::s![..N]).sum(), 1.0);
    }
}
