//! Graph network scorer: stacked edge/node/global update blocks with mean
//! aggregation and a logistic output on the last global state.
//!
//! All parameters live in one flat vector so that the optimiser and the
//! finite-difference check can treat them uniformly.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::features::{GraphSample, EDGE_FEAT_DIM, GLOBAL_FEAT_DIM, NODE_FEAT_DIM};
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            hidden: 128,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

impl Dense {
    fn size(&self) -> usize {
        self.rows * self.cols + self.cols
    }
}

/// Two dense layers with a rectifier in between.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Mlp {
    first: Dense,
    second: Dense,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Block {
    edge: Mlp,
    node: Mlp,
    global: Mlp,
    edge_in: usize,
    node_in: usize,
    global_in: usize,
}

fn layout(config: ScorerConfig) -> (Vec<Block>, usize) {
    let h = config.hidden;
    let mut offset = 0;
    let mut dense = |rows: usize, cols: usize| {
        let d = Dense {
            w: offset,
            b: offset + rows * cols,
            rows,
            cols,
        };
        offset += d.size();
        d
    };
    let mut blocks = Vec::with_capacity(config.layers);
    let (mut de, mut dn, mut dg) = (EDGE_FEAT_DIM, NODE_FEAT_DIM, GLOBAL_FEAT_DIM);
    for l in 0..config.layers {
        let out_g = if l + 1 == config.layers { 1 } else { h };
        let edge = Mlp {
            first: dense(de + 2 * dn + dg, h),
            second: dense(h, h),
        };
        let node = Mlp {
            first: dense(dn + h + dg, h),
            second: dense(h, h),
        };
        let global = Mlp {
            first: dense(dg + 2 * h, h),
            second: dense(h, out_g),
        };
        blocks.push(Block {
            edge,
            node,
            global,
            edge_in: de,
            node_in: dn,
            global_in: dg,
        });
        (de, dn, dg) = (h, h, out_g);
    }
    (blocks, offset)
}

/// Disjoint union of graphs, ready for batched message passing.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    nodes: Array2<f64>,
    edges: Array2<f64>,
    globals: Array2<f64>,
    src: Vec<usize>,
    dst: Vec<usize>,
    node_graph: Vec<usize>,
    edge_graph: Vec<usize>,
    in_degree: Vec<usize>,
    graph_nodes: Vec<usize>,
    graph_edges: Vec<usize>,
    pub labels: Array1<f64>,
}

impl Batch {
    pub fn new(samples: &[&GraphSample]) -> Result<Self, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let n: usize = samples.iter().map(|s| s.n_nodes()).sum();
        let m: usize = samples.iter().map(|s| s.n_edges()).sum();
        let mut nodes = Array2::zeros((n, NODE_FEAT_DIM));
        let mut edges = Array2::zeros((m, EDGE_FEAT_DIM));
        let mut globals = Array2::zeros((samples.len(), GLOBAL_FEAT_DIM));
        let (mut src, mut dst) = (Vec::with_capacity(m), Vec::with_capacity(m));
        let (mut node_graph, mut edge_graph) = (Vec::with_capacity(n), Vec::with_capacity(m));
        let mut in_degree = vec![0; n];
        let (mut graph_nodes, mut graph_edges) = (Vec::new(), Vec::new());
        let (mut n0, mut m0) = (0, 0);
        for (gi, sample) in samples.iter().enumerate() {
            let (sn, sm) = (sample.n_nodes(), sample.n_edges());
            if sample.node_features.ncols() != NODE_FEAT_DIM
                || sample.edge_features.dim() != (sm, EDGE_FEAT_DIM)
                || sample.global.len() != GLOBAL_FEAT_DIM
            {
                return Err(ModelError::Shape(format!("graph {gi} has inconsistent feature sizes")));
            }
            nodes.slice_mut(s![n0..n0 + sn, ..]).assign(&sample.node_features);
            edges.slice_mut(s![m0..m0 + sm, ..]).assign(&sample.edge_features);
            globals.row_mut(gi).assign(&sample.global);
            for &(a, b) in &sample.edges {
                if a >= sn || b >= sn {
                    return Err(ModelError::Shape(format!("graph {gi} edge ({a}, {b}) out of range")));
                }
                src.push(n0 + a);
                dst.push(n0 + b);
                in_degree[n0 + b] += 1;
                edge_graph.push(gi);
            }
            node_graph.extend(std::iter::repeat(gi).take(sn));
            graph_nodes.push(sn);
            graph_edges.push(sm);
            n0 += sn;
            m0 += sm;
        }
        Ok(Self {
            nodes,
            edges,
            globals,
            src,
            dst,
            node_graph,
            edge_graph,
            in_degree,
            graph_nodes,
            graph_edges,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn gather(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Row `i` of the result is the sum of rows `k` of `x` with `idx[k] == i`.
fn scatter_add(out: &mut Array2<f64>, x: ArrayView2<f64>, idx: &[usize]) {
    for (k, &i) in idx.iter().enumerate() {
        out.row_mut(i).scaled_add(1.0, &x.row(k));
    }
}

/// Per-group mean of rows (zero for empty groups).
fn group_mean(x: &Array2<f64>, idx: &[usize], counts: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((counts.len(), x.ncols()));
    scatter_add(&mut out, x.view(), idx);
    for (g, &c) in counts.iter().enumerate() {
        if c > 0 {
            out.row_mut(g).mapv_inplace(|v| v / c as f64);
        }
    }
    out
}

fn concat(parts: &[ArrayView2<f64>]) -> Array2<f64> {
    ndarray::concatenate(Axis(1), parts).expect("row counts agree")
}

struct MlpCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
}

struct BlockCache {
    edge: MlpCache,
    node: MlpCache,
    global: MlpCache,
}

/// Flat parameters plus their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Scorer {
    config: ScorerConfig,
    blocks: Vec<Block>,
    pub params: Vec<f64>,
}

impl Scorer {
    pub fn zeros(config: ScorerConfig) -> Self {
        assert!(config.layers >= 1 && config.hidden >= 1);
        let (blocks, size) = layout(config);
        Self {
            config,
            blocks,
            params: vec![0.0; size],
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(config: ScorerConfig, rng: &mut Rng) -> Self {
        let mut s = Self::zeros(config);
        let denses: Vec<Dense> = s
            .blocks
            .iter()
            .flat_map(|b| [b.edge, b.node, b.global])
            .flat_map(|m| [m.first, m.second])
            .collect();
        for d in denses {
            let bound = 1.0 / (d.rows as f64).sqrt();
            for v in &mut s.params[d.w..d.w + d.rows * d.cols] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        s
    }

    /// Set the bias of the final output unit, i.e. the logit predicted when
    /// every hidden unit is off.
    pub fn set_output_bias(&mut self, logit: f64) {
        let last = self.blocks.last().expect("at least one block").global.second;
        self.params[last.b] = logit;
    }

    pub fn from_params(config: ScorerConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        let mut s = Self::zeros(config);
        if params.len() != s.params.len() {
            return Err(ModelError::Shape(format!(
                "expected {} parameters, got {}",
                s.params.len(),
                params.len()
            )));
        }
        s.params = params;
        Ok(s)
    }

    pub fn config(&self) -> ScorerConfig {
        self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn weight(&self, d: Dense) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((d.rows, d.cols), &self.params[d.w..d.w + d.rows * d.cols]).expect("layout")
    }

    fn bias(&self, d: Dense) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[d.b..d.b + d.cols])
    }

    fn mlp_forward(&self, m: Mlp, input: Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut hidden = input.dot(&self.weight(m.first));
        hidden += &self.bias(m.first);
        hidden.mapv_inplace(|v| v.max(0.0));
        let mut out = hidden.dot(&self.weight(m.second));
        out += &self.bias(m.second);
        (out, MlpCache { input, hidden })
    }

    /// Accumulates parameter gradients into `grad`, returns the input gradient
    /// (empty when `need_input` is false).
    fn mlp_backward(
        &self,
        m: Mlp,
        cache: &MlpCache,
        d_out: &Array2<f64>,
        grad: &mut [f64],
        need_input: bool,
    ) -> Array2<f64> {
        accumulate(grad, m.second, &cache.hidden, d_out);
        let mut d_hidden = d_out.dot(&self.weight(m.second).t());
        d_hidden.zip_mut_with(&cache.hidden, |d, &h| {
            if h <= 0.0 {
                *d = 0.0
            }
        });
        accumulate(grad, m.first, &cache.input, &d_hidden);
        if !need_input {
            return Array2::zeros((0, 0));
        }
        d_hidden.dot(&self.weight(m.first).t())
    }

    fn forward_cached(&self, batch: &Batch) -> (Array1<f64>, Vec<BlockCache>) {
        let mut v = batch.nodes.clone();
        let mut e = batch.edges.clone();
        let mut u = batch.globals.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let edge_in = concat(&[
                e.view(),
                gather(&v, &batch.src).view(),
                gather(&v, &batch.dst).view(),
                gather(&u, &batch.edge_graph).view(),
            ]);
            let (e_new, edge) = self.mlp_forward(b.edge, edge_in);
            let agg = group_mean(&e_new, &batch.dst, &batch.in_degree);
            let node_in = concat(&[v.view(), agg.view(), gather(&u, &batch.node_graph).view()]);
            let (v_new, node) = self.mlp_forward(b.node, node_in);
            let mean_v = group_mean(&v_new, &batch.node_graph, &batch.graph_nodes);
            let mean_e = group_mean(&e_new, &batch.edge_graph, &batch.graph_edges);
            let global_in = concat(&[u.view(), mean_v.view(), mean_e.view()]);
            let (u_new, global) = self.mlp_forward(b.global, global_in);
            caches.push(BlockCache { edge, node, global });
            (v, e, u) = (v_new, e_new, u_new);
        }
        (u.column(0).to_owned(), caches)
    }

    /// Raw output before the logistic, one per graph.
    pub fn logits(&self, batch: &Batch) -> Array1<f64> {
        self.forward_cached(batch).0
    }

    /// Scores in (0, 1), one per graph.
    pub fn predict(&self, batch: &Batch) -> Array1<f64> {
        self.logits(batch).mapv(sigmoid)
    }

    pub fn forward(&self, sample: &GraphSample) -> Result<f64, ModelError> {
        Ok(self.predict(&Batch::new(&[sample])?)[0])
    }

    /// Mean squared error of the batch.
    pub fn loss(&self, batch: &Batch) -> f64 {
        let p = self.predict(batch);
        (&p - &batch.labels).mapv(|d| d * d).mean().unwrap_or(0.0)
    }

    /// Mean squared error and its exact gradient.
    pub fn loss_and_grad(&self, batch: &Batch) -> (f64, Vec<f64>) {
        let (z, caches) = self.forward_cached(batch);
        let p = z.mapv(sigmoid);
        let diff = &p - &batch.labels;
        let count = batch.len() as f64;
        let loss = diff.mapv(|d| d * d).sum() / count;
        let mut grad = vec![0.0; self.params.len()];

        let dz: Array1<f64> = diff
            .iter()
            .zip(p.iter())
            .map(|(&d, &p)| 2.0 * d / count * p * (1.0 - p))
            .collect();
        let mut du = dz.insert_axis(Axis(1));
        let mut dv = Array2::zeros((batch.nodes.nrows(), 0));
        let mut de = Array2::zeros((batch.edges.nrows(), 0));
        let last = self.blocks.len() - 1;
        for (l, (b, cache)) in self.blocks.iter().zip(&caches).enumerate().rev() {
            // Gradients flowing into this block's outputs.
            let h = self.config.hidden;
            let mut dv_out = if l == last { Array2::zeros((batch.nodes.nrows(), h)) } else { dv };
            let mut de_out = if l == last { Array2::zeros((batch.edges.nrows(), h)) } else { de };

            let d_global_in = self.mlp_backward(b.global, &cache.global, &du, &mut grad, true);
            let gi = b.global_in;
            let mut du_in = d_global_in.slice(s![.., ..gi]).to_owned();
            let d_mean_v = d_global_in.slice(s![.., gi..gi + h]);
            let d_mean_e = d_global_in.slice(s![.., gi + h..]);
            for (k, &g) in batch.node_graph.iter().enumerate() {
                dv_out
                    .row_mut(k)
                    .scaled_add(1.0 / batch.graph_nodes[g] as f64, &d_mean_v.row(g));
            }
            for (k, &g) in batch.edge_graph.iter().enumerate() {
                de_out
                    .row_mut(k)
                    .scaled_add(1.0 / batch.graph_edges[g] as f64, &d_mean_e.row(g));
            }

            let d_node_in = self.mlp_backward(b.node, &cache.node, &dv_out, &mut grad, true);
            let ni = b.node_in;
            let mut dv_in = d_node_in.slice(s![.., ..ni]).to_owned();
            let d_agg = d_node_in.slice(s![.., ni..ni + h]);
            scatter_add(&mut du_in, d_node_in.slice(s![.., ni + h..]), &batch.node_graph);
            for (k, &d) in batch.dst.iter().enumerate() {
                de_out.row_mut(k).scaled_add(1.0 / batch.in_degree[d] as f64, &d_agg.row(d));
            }

            let d_edge_in = self.mlp_backward(b.edge, &cache.edge, &de_out, &mut grad, l > 0);
            if l == 0 {
                break;
            }
            let ei = b.edge_in;
            let de_in = d_edge_in.slice(s![.., ..ei]).to_owned();
            scatter_add(&mut dv_in, d_edge_in.slice(s![.., ei..ei + ni]), &batch.src);
            scatter_add(&mut dv_in, d_edge_in.slice(s![.., ei + ni..ei + 2 * ni]), &batch.dst);
            scatter_add(&mut du_in, d_edge_in.slice(s![.., ei + 2 * ni..]), &batch.edge_graph);

            (dv, de, du) = (dv_in, de_in, du_in);
        }
        (loss, grad)
    }

    /// Rectifier on/off pattern over the whole network for `batch`; used to
    /// skip finite-difference probes that straddle a kink.
    pub fn activation_pattern(&self, batch: &Batch) -> Vec<bool> {
        let (_, caches) = self.forward_cached(batch);
        caches
            .iter()
            .flat_map(|c| [&c.edge.hidden, &c.node.hidden, &c.global.hidden])
            .flat_map(|h| h.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect()
    }
}

fn accumulate(grad: &mut [f64], d: Dense, input: &Array2<f64>, d_out: &Array2<f64>) {
    let gw = input.t().dot(d_out);
    for (g, w) in grad[d.w..d.w + d.rows * d.cols].iter_mut().zip(gw.iter()) {
        *g += w;
    }
    let gb = d_out.sum_axis(Axis(0));
    for (g, b) in grad[d.b..d.b + d.cols].iter_mut().zip(gb.iter()) {
        *g += b;
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ObjectId, SemanticEvent};
    use crate::instruction::Instruction;
    use crate::model::features::{featurize, GraphMode};
    use crate::rng;

    fn ev(a: usize, b: usize) -> SemanticEvent {
        SemanticEvent::new(ObjectId::new(a as u8).unwrap(), ObjectId::new(b as u8).unwrap())
    }

    fn sample(label: f64) -> GraphSample {
        let g = Instruction {
            pivot: ObjectId::BALLS[0],
            target: ev(2, 3),
            bottleneck: Some(ev(1, 2)),
            count: Some(3),
        };
        let mut s = featurize(&[ev(0, 1), ev(1, 2), ev(4, 10), ev(0, 4), ev(2, 3)], &g, GraphMode::Dag);
        s.label = label;
        s
    }

    fn small() -> ScorerConfig {
        ScorerConfig { layers: 2, hidden: 6 }
    }

    #[test]
    fn zero_network_outputs_one_half() {
        let s = Scorer::zeros(ScorerConfig::default());
        assert_eq!(s.forward(&sample(0.0)).unwrap(), 0.5);
    }

    #[test]
    fn output_in_open_unit_interval() {
        let mut rng = rng::stream(1, "p", 0);
        for _ in 0..10 {
            let s = Scorer::init(small(), &mut rng);
            let p = s.forward(&sample(0.0)).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn node_permutation_leaves_output_unchanged() {
        let mut rng = rng::stream(2, "p", 0);
        let s = Scorer::init(small(), &mut rng);
        let x = sample(0.3);
        let y = x.permuted(&[3, 0, 4, 1, 2]);
        let a = s.forward(&x).unwrap();
        let b = s.forward(&y).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng::stream(3, "p", 0);
        let s = Scorer::init(small(), &mut rng);
        let x = sample(0.8);
        let batch = Batch::new(&[&x]).unwrap();
        let (_, grad) = s.loss_and_grad(&batch);
        let base = s.activation_pattern(&batch);
        let eps = 1e-4;
        let mut checked = 0;
        for k in 0..s.param_count() {
            let mut plus = s.clone();
            plus.params[k] += eps;
            let mut minus = s.clone();
            minus.params[k] -= eps;
            if plus.activation_pattern(&batch) != base || minus.activation_pattern(&batch) != base {
                continue;
            }
            let fd = (plus.loss(&batch) - minus.loss(&batch)) / (2.0 * eps);
            let rel = (fd - grad[k]).abs() / (fd.abs() + grad[k].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {k}: {fd} vs {}", grad[k]);
            checked += 1;
        }
        assert!(checked > s.param_count() / 2);
    }

    #[test]
    fn shape_errors() {
        let mut bad = sample(0.0);
        bad.edges.push((0, 17));
        bad.edge_features = Array2::zeros((bad.edges.len(), EDGE_FEAT_DIM));
        assert!(matches!(Batch::new(&[&bad]), Err(ModelError::Shape(_))));
        assert_eq!(Batch::new(&[]), Err(ModelError::EmptyBatch));
        assert!(Scorer::from_params(small(), vec![0.0; 3]).is_err());
    }
}
