use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::losses::{total_loss, LossSettings, LossValues, LossWeights, Target};
use super::optim::Adam;
use crate::autograd::Graph;
use crate::dataio::{DensityMap, SceneRecord};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::parallel::{self, Execution};
use crate::pipeline::scene_queries;
use crate::query_init::RoomQueries;
use crate::representation::SampledFloorplan;

/// Where the initial queries of a training scene come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QueryInit {
    /// The scene's own masks, falling back to masks drawn from its ground truth.
    #[default]
    Masks,
    /// Masks drawn from the ground-truth rooms.
    GtMasks,
    /// Uniform random rows.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip: f64,
    pub raster_res: usize,
    pub tau_sd: f64,
    pub weights: LossWeights,
    pub init: QueryInit,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<u64>,
    /// Stop once this much wall time has passed in one call.
    pub time_limit_secs: Option<f64>,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            epochs: 1,
            batch_size: 1,
            seed: 0,
            clip: 0.1,
            raster_res: 64,
            tau_sd: 1.0,
            weights: LossWeights::default(),
            init: QueryInit::default(),
            max_steps: None,
            time_limit_secs: None,
            execution: Execution::available(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.raster_res == 0 {
            return Err(Error::Config("batch_size and raster_res must be positive".into()));
        }
        if !(self.tau_sd > 0.0) || !(self.clip >= 0.0) {
            return Err(Error::Config(format!("tau_sd must be > 0 and clip >= 0, got {} and {}", self.tau_sd, self.clip)));
        }
        self.weights.validate()
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            weights: self.weights,
            raster_res: self.raster_res,
            tau_sd: self.tau_sd,
        }
    }
}

/// One scene ready for training.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub density: DensityMap,
    pub target: Target,
    pub queries: RoomQueries,
}

/// Encodes ground truth and initial queries for every scene.
pub fn prepare_samples(scenes: &[SceneRecord], m: usize, n: usize, init: QueryInit, seed: u64) -> Result<Vec<TrainSample>> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let sampled = SampledFloorplan::encode(&s.gt, n)?;
            if sampled.rooms.len() > m {
                return Err(Error::Capacity {
                    what: "ground-truth rooms",
                    got: sampled.rooms.len(),
                    limit: m,
                });
            }
            let queries = scene_queries(s, m, n, init, seed.wrapping_add(i as u64))?;
            Ok(TrainSample {
                id: s.id.clone(),
                density: s.density.clone(),
                target: Target::from_sampled(&sampled),
                queries,
            })
        })
        .collect()
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub total: f64,
    pub cls: f64,
    pub coord: f64,
    pub ras: f64,
    pub ang: f64,
    pub grad_norm: f64,
}

/// Loss and parameter gradients of a single sample.
pub fn sample_gradients(model: &Model, sample: &TrainSample, settings: &LossSettings) -> Result<(LossValues, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let out = model.forward(&mut g, &b, &sample.density, &sample.queries)?;
    let terms = total_loss(&mut g, &out, &sample.target, settings)?;
    let v = &terms.values;
    if ![v.total, v.cls, v.coord, v.ras, v.ang].iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite loss on scene {}: {v:?}", sample.id)));
    }
    g.backward(terms.total)?;
    let grads = b
        .vars()
        .iter()
        .zip(model.params().tensors())
        .map(|(&var, t)| g.grad(var).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    Ok((terms.values, grads))
}

/// Batch order of one epoch; a function of the seed and epoch only.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    idx.shuffle(&mut rng);
    idx
}

pub struct Trainer {
    pub model: Model,
    pub optimizer: Adam,
    pub step: u64,
    pub cfg: TrainConfig,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Adam::new(model.params(), cfg.lr, cfg.clip);
        Ok(Self {
            model,
            optimizer,
            step: 0,
            cfg,
        })
    }

    /// Continues from a checkpoint; optimizer moments are restored when saved.
    pub fn resume(ck: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut optimizer = ck.optimizer.unwrap_or_else(|| Adam::new(ck.model.params(), cfg.lr, cfg.clip));
        optimizer.lr = cfg.lr;
        optimizer.clip = cfg.clip;
        Ok(Self {
            model: ck.model,
            optimizer,
            step: ck.step,
            cfg,
        })
    }

    /// One optimizer step on the mean gradient of `batch`.
    pub fn step_on(&mut self, batch: &[&TrainSample], epoch: usize) -> Result<StepRecord> {
        let settings = self.cfg.loss_settings();
        let model = &self.model;
        let results = parallel::try_map(self.cfg.execution, batch, |s| sample_gradients(model, s, &settings))
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("step {}: {msg}", self.step + 1)),
                other => other,
            })?;
        let k = 1.0 / results.len() as f64;
        let mut grads: Vec<Vec<f64>> = self.model.params().tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        let mut rec = StepRecord {
            step: self.step + 1,
            epoch,
            total: 0.0,
            cls: 0.0,
            coord: 0.0,
            ras: 0.0,
            ang: 0.0,
            grad_norm: 0.0,
        };
        for (v, gs) in &results {
            rec.total += v.total * k;
            rec.cls += v.cls * k;
            rec.coord += v.coord * k;
            rec.ras += v.ras * k;
            rec.ang += v.ang * k;
            for (acc, g) in grads.iter_mut().zip(gs) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b * k);
            }
        }
        rec.grad_norm = self.optimizer.update(self.model.params_mut(), grads)?;
        self.step += 1;
        Ok(rec)
    }

    /// Runs the configured epochs, picking up at `self.step`. `on_step` sees
    /// every record.
    pub fn train(&mut self, data: &[TrainSample], mut on_step: impl FnMut(&StepRecord) -> Result<()>) -> Result<Vec<StepRecord>> {
        if data.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let per_epoch = data.len().div_ceil(self.cfg.batch_size);
        let total = (self.cfg.epochs * per_epoch) as u64;
        let limit = self.cfg.max_steps.map_or(total, |s| s.min(total));
        let start = Instant::now();
        let mut records = Vec::new();
        while self.step < limit {
            if self.cfg.time_limit_secs.is_some_and(|t| start.elapsed().as_secs_f64() >= t) {
                log::info!("time limit reached at step {}", self.step);
                break;
            }
            let epoch = (self.step / per_epoch as u64) as usize;
            let b = (self.step % per_epoch as u64) as usize;
            let order = epoch_order(data.len(), self.cfg.seed, epoch);
            let end = ((b + 1) * self.cfg.batch_size).min(data.len());
            let batch: Vec<&TrainSample> = order[b * self.cfg.batch_size..end].iter().map(|&i| &data[i]).collect();
            let rec = self.step_on(&batch, epoch)?;
            log::debug!("step {} total {:.5}", rec.step, rec.total);
            on_step(&rec)?;
            records.push(rec);
        }
        Ok(records)
    }
}

/// Appends records as line-delimited JSON.
pub struct JsonlLog {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl JsonlLog {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::options().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, rec: &StepRecord) -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| Error::json(&self.path, e))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
