use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::features::GraphSample;
use super::gnn::{Batch, ModelError, Scorer, ScorerConfig};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scorer: ScorerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scorer: ScorerConfig::default(),
            batch_size: 8192,
            epochs: 15,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss diverged to {loss} at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub scorer: Scorer,
    pub curve: Vec<EpochLoss>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(size: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; size],
            v: vec![0.0; size],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Mean squared error over a dataset, evaluated in chunks.
pub fn dataset_loss(scorer: &Scorer, data: &[GraphSample], chunk: usize) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for part in data.chunks(chunk.max(1)) {
        let refs: Vec<&GraphSample> = part.iter().collect();
        total += scorer.loss(&Batch::new(&refs)?) * part.len() as f64;
    }
    Ok(total / data.len() as f64)
}

pub fn predict_all(scorer: &Scorer, data: &[GraphSample], chunk: usize) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::with_capacity(data.len());
    for part in data.chunks(chunk.max(1)) {
        let refs: Vec<&GraphSample> = part.iter().collect();
        out.extend(scorer.predict(&Batch::new(&refs)?));
    }
    Ok(out)
}

/// Adam on mean squared error, shuffling every epoch with `seed`.
/// `on_epoch` sees every epoch's losses as they are produced.
pub fn train(
    data: &[GraphSample],
    val: &[GraphSample],
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<Trained, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut init_rng = rng::stream(seed, "model-init", 0);
    let mut scorer = Scorer::init(cfg.scorer, &mut init_rng);
    // Start from the label mean so the first steps do not push every
    // hidden unit of the output block into the dead half of the rectifier.
    let mean = (data.iter().map(|s| s.label).sum::<f64>() / data.len() as f64).clamp(1e-3, 1.0 - 1e-3);
    scorer.set_output_bias((mean / (1.0 - mean)).ln());
    let mut adam = Adam::new(scorer.param_count(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng: Rng = rng::stream(seed, "model-shuffle", 0);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for idx in order.chunks(cfg.batch_size.max(1)) {
            let refs: Vec<&GraphSample> = idx.iter().map(|&i| &data[i]).collect();
            let batch = Batch::new(&refs)?;
            let (loss, grad) = scorer.loss_and_grad(&batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Diverged { epoch, step, loss });
            }
            adam.step(&mut scorer.params, &grad);
            sum += loss * idx.len() as f64;
            step += 1;
        }
        let record = EpochLoss {
            epoch,
            steps: step,
            train_loss: sum / data.len() as f64,
            val_loss: if val.is_empty() {
                None
            } else {
                Some(dataset_loss(&scorer, val, cfg.batch_size)?)
            },
        };
        on_epoch(&record);
        curve.push(record);
    }
    Ok(Trained { scorer, curve })
}

pub fn write_loss_csv<W: Write>(curve: &[EpochLoss], out: &mut W) -> io::Result<()> {
    writeln!(out, "epoch,steps,train_loss,val_loss")?;
    for e in curve {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", e.epoch, e.steps, e.train_loss, val)?;
    }
    Ok(())
}

pub const CHECKPOINT_FORMAT: &str = "cascade-scorer";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layers: usize,
    pub hidden: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub global_dim: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl Checkpoint {
    pub fn of(scorer: &Scorer) -> Self {
        use super::features::{EDGE_FEAT_DIM, GLOBAL_FEAT_DIM, NODE_FEAT_DIM};
        let c = scorer.config();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layers: c.layers,
            hidden: c.hidden,
            node_dim: NODE_FEAT_DIM,
            edge_dim: EDGE_FEAT_DIM,
            global_dim: GLOBAL_FEAT_DIM,
            params: scorer.params.clone(),
        }
    }

    pub fn into_scorer(self) -> Result<Scorer, CheckpointError> {
        use super::features::{EDGE_FEAT_DIM, GLOBAL_FEAT_DIM, NODE_FEAT_DIM};
        if self.format != CHECKPOINT_FORMAT
            || self.version != CHECKPOINT_VERSION
            || (self.node_dim, self.edge_dim, self.global_dim) != (NODE_FEAT_DIM, EDGE_FEAT_DIM, GLOBAL_FEAT_DIM)
        {
            return Err(CheckpointError::Format(format!("{} v{}", self.format, self.version)));
        }
        let cfg = ScorerConfig {
            layers: self.layers,
            hidden: self.hidden,
        };
        Ok(Scorer::from_params(cfg, self.params)?)
    }

    pub fn save(scorer: &Scorer, path: &Path) -> Result<(), CheckpointError> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, &Self::of(scorer))?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Scorer, CheckpointError> {
        let f = io::BufReader::new(std::fs::File::open(path)?);
        let c: Checkpoint = serde_json::from_reader(f)?;
        c.into_scorer()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ObjectId, SemanticEvent};
    use crate::instruction::Instruction;
    use crate::model::features::{featurize, GraphMode};

    fn ev(a: usize, b: usize) -> SemanticEvent {
        SemanticEvent::new(ObjectId::new(a as u8).unwrap(), ObjectId::new(b as u8).unwrap())
    }

    fn sample(prefix: &[SemanticEvent], label: f64) -> GraphSample {
        let g = Instruction::new(ObjectId::BALLS[0], ev(1, 2));
        let mut s = featurize(prefix, &g, GraphMode::Dag);
        s.label = label;
        s
    }

    fn tiny(epochs: usize) -> TrainConfig {
        TrainConfig {
            scorer: ScorerConfig { layers: 2, hidden: 8 },
            batch_size: 4,
            epochs,
            learning_rate: 1e-2,
        }
    }

    #[test]
    fn memorises_a_single_sample() {
        let data = vec![sample(&[ev(0, 1), ev(1, 2)], 0.9)];
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            ..tiny(500)
        };
        let trained = train(&data, &[], &cfg, 1, |_| {}).unwrap();
        assert!(trained.curve.last().unwrap().train_loss < 1e-4);
        assert!(dataset_loss(&trained.scorer, &data, 8).unwrap() < 1e-4);
    }

    #[test]
    fn gradient_vanishes_at_a_constant_optimum() {
        // Zero weights output 0.5 everywhere, the optimum for labels of 0.5.
        let s = Scorer::zeros(ScorerConfig { layers: 2, hidden: 8 });
        let a = sample(&[ev(0, 1)], 0.5);
        let b = sample(&[ev(0, 3), ev(3, 9)], 0.5);
        let (loss, grad) = s.loss_and_grad(&Batch::new(&[&a, &b]).unwrap());
        assert_eq!(loss, 0.0);
        assert!(grad.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-8);
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<GraphSample> = (0..10)
            .map(|k| sample(&[ev(0, 1 + k % 5), ev(1 + k % 5, 8 + k % 4)], (k % 3) as f64 / 2.0))
            .collect();
        let a = train(&data, &data[..3], &tiny(3), 9, |_| {}).unwrap();
        let b = train(&data, &data[..3], &tiny(3), 9, |_| {}).unwrap();
        assert_eq!(a.scorer.params, b.scorer.params);
        assert_eq!(a.curve, b.curve);
        assert!(a.curve[0].val_loss.is_some());
    }

    #[test]
    fn empty_dataset_and_divergence() {
        assert!(matches!(train(&[], &[], &tiny(1), 0, |_| {}), Err(TrainError::EmptyDataset)));
        let mut cfg = tiny(2);
        cfg.learning_rate = f64::NAN;
        let data = vec![sample(&[ev(0, 1)], 1.0)];
        assert!(matches!(train(&data, &[], &cfg, 0, |_| {}), Err(TrainError::Diverged { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = rng::stream(5, "ck", 0);
        let s = Scorer::init(ScorerConfig { layers: 2, hidden: 5 }, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        Checkpoint::save(&s, &path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), s);
        let mut curve_csv = Vec::new();
        write_loss_csv(
            &[EpochLoss { epoch: 0, steps: 3, train_loss: 0.25, val_loss: None }],
            &mut curve_csv,
        )
        .unwrap();
        assert_eq!(String::from_utf8(curve_csv).unwrap(), "epoch,steps,train_loss,val_loss\n0,3,0.25,\n");
    }
}
