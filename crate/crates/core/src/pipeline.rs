//! Scene-level glue: initial queries, inference and dataset evaluation.

use crate::dataio::{InstanceMasks, SceneRecord};
use crate::error::Result;
use crate::evaluation::{evaluate_many, EvalConfig, MetricsReport};
use crate::extraction::{extract_floorplan, ExtractionConfig, VectorFloorplan};
use crate::model::{DecoderOutput, Model};
use crate::parallel::{self, Execution};
use crate::query_init::{init_queries, random_queries, RoomQueries};
use crate::training::QueryInit;

/// Initial queries of a scene. Random rows still take their room count
/// from the masks.
pub fn scene_queries(scene: &SceneRecord, m: usize, n: usize, init: QueryInit, seed: u64) -> Result<RoomQueries> {
    let gt_masks = || InstanceMasks::from_floorplan(&scene.gt);
    let masks = match (init, &scene.masks) {
        (QueryInit::GtMasks, _) | (_, None) => gt_masks(),
        (_, Some(mk)) => mk.clone(),
    };
    match init {
        QueryInit::Random => Ok(random_queries(m, n, masks.len(), seed)),
        _ => init_queries(&masks, m, n, seed),
    }
}

pub struct Inference {
    pub queries: RoomQueries,
    pub output: DecoderOutput,
    pub floorplan: VectorFloorplan,
}

pub fn infer_scene(model: &Model, scene: &SceneRecord, init: QueryInit, seed: u64, ext: &ExtractionConfig) -> Result<Inference> {
    let cfg = model.config();
    let queries = scene_queries(scene, cfg.m, cfg.n, init, seed)?;
    let output = model.predict(&scene.density, &queries)?;
    let floorplan = extract_floorplan(&output, &queries, ext, scene.density.width, scene.density.height)?;
    Ok(Inference {
        queries,
        output,
        floorplan,
    })
}

/// Infers every scene (scene `i` seeded with `seed + i`) and scores the
/// extracted floorplans against ground truth.
pub fn evaluate_model(
    model: &Model,
    scenes: &[SceneRecord],
    init: QueryInit,
    seed: u64,
    ext: &ExtractionConfig,
    eval: &EvalConfig,
    exec: Execution,
) -> Result<(MetricsReport, Vec<VectorFloorplan>)> {
    let indexed: Vec<(usize, &SceneRecord)> = scenes.iter().enumerate().collect();
    let fps = parallel::try_map(exec, &indexed, |(i, s)| Ok(infer_scene(model, s, init, seed.wrapping_add(*i as u64), ext)?.floorplan))?;
    let preds: Vec<_> = fps.iter().map(VectorFloorplan::to_floorplan).collect();
    let report = evaluate_many(preds.iter().zip(scenes.iter().map(|s| &s.gt)), eval)?;
    Ok((report, fps))
}
