use std::path::Path;

use polyroom::dataio::{MaskDegradation, SynthConfig};
use polyroom::evaluation::EvalConfig;
use polyroom::extraction::ExtractionConfig;
use polyroom::model::{AttentionMode, ModelConfig};
use polyroom::parallel::Execution;
use polyroom::training::{LossWeights, QueryInit, TrainConfig};
use polyroom::{Error, Result};
use serde::{Deserialize, Serialize};

/// Every tunable of every subcommand, as one flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub scenes: usize,
    pub width: usize,
    pub height: usize,
    pub rooms_min: usize,
    pub rooms_max: usize,
    pub min_side: usize,
    pub min_notch: usize,
    pub degrade_masks: bool,
    pub p_drop: f64,
    pub morph_min: usize,
    pub morph_max: usize,

    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub k_points: usize,
    pub encoder_layers: usize,
    pub feature_stride: usize,
    pub ffn_dim: usize,
    pub attention: AttentionMode,

    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip: f64,
    pub raster_res: usize,
    pub tau_sd: f64,
    pub w_cls: f64,
    pub w_coord: f64,
    pub w_ras: f64,
    pub w_ang: f64,
    pub init: QueryInit,
    pub max_steps: Option<u64>,
    pub time_limit_secs: Option<f64>,
    pub execution: Execution,

    pub t_pro: f64,
    pub t_ang: f64,
    pub dp_eps: f64,
    pub use_gt_masks: bool,
    pub svg: bool,
    pub dump_queries: bool,

    pub iou_thresh: f64,
    pub corner_px: f64,
    pub angle_deg: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let ext = ExtractionConfig::default();
        let eval = EvalConfig::default();
        let deg = MaskDegradation::default();
        Self {
            seed: 0,
            scenes: 10,
            width: 128,
            height: 128,
            rooms_min: 1,
            rooms_max: 4,
            min_side: 16,
            min_notch: 8,
            degrade_masks: false,
            p_drop: deg.p_drop,
            morph_min: 2,
            morph_max: 2,
            m: model.m,
            n: model.n,
            d: model.d,
            layers: model.layers,
            heads: model.heads,
            k_points: model.k_points,
            encoder_layers: model.encoder_layers,
            feature_stride: model.feature_stride,
            ffn_dim: model.ffn_dim,
            attention: model.attention,
            lr: train.lr,
            epochs: train.epochs,
            batch_size: train.batch_size,
            clip: train.clip,
            raster_res: train.raster_res,
            tau_sd: train.tau_sd,
            w_cls: train.weights.cls,
            w_coord: train.weights.coord,
            w_ras: train.weights.ras,
            w_ang: train.weights.ang,
            init: train.init,
            max_steps: None,
            time_limit_secs: None,
            execution: train.execution,
            t_pro: ext.t_pro,
            t_ang: ext.t_ang,
            dp_eps: ext.dp_eps,
            use_gt_masks: false,
            svg: false,
            dump_queries: false,
            iou_thresh: eval.iou_thresh,
            corner_px: eval.corner_px,
            angle_deg: eval.angle_deg,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("plain data serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let cfg = SynthConfig {
            width: self.width,
            height: self.height,
            rooms_min: self.rooms_min,
            rooms_max: self.rooms_max,
            min_side: self.min_side,
            min_notch: self.min_notch,
            degrade: self.degrade_masks.then_some(MaskDegradation {
                p_drop: self.p_drop,
                morph_min: self.morph_min,
                morph_max: self.morph_max,
            }),
            ..SynthConfig::default()
        };
        cfg.validate(self.m)?;
        Ok(cfg)
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            m: self.m,
            n: self.n,
            d: self.d,
            layers: self.layers,
            heads: self.heads,
            k_points: self.k_points,
            encoder_layers: self.encoder_layers,
            feature_stride: self.feature_stride,
            ffn_dim: self.ffn_dim,
            attention: self.attention,
            ..ModelConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            clip: self.clip,
            raster_res: self.raster_res,
            tau_sd: self.tau_sd,
            weights: LossWeights {
                cls: self.w_cls,
                coord: self.w_coord,
                ras: self.w_ras,
                ang: self.w_ang,
            },
            init: self.init,
            max_steps: self.max_steps,
            time_limit_secs: self.time_limit_secs,
            execution: self.execution,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn extraction(&self) -> Result<ExtractionConfig> {
        let cfg = ExtractionConfig {
            t_pro: self.t_pro,
            t_ang: self.t_ang,
            dp_eps: self.dp_eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eval(&self) -> Result<EvalConfig> {
        let cfg = EvalConfig {
            iou_thresh: self.iou_thresh,
            corner_px: self.corner_px,
            angle_deg: self.angle_deg,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
