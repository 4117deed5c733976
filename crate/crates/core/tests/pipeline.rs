use polyroom::dataio::{generate_scene, load_dataset, read_rooms, save_dataset, SceneRecord, SynthConfig};
use polyroom::evaluation::{evaluate, EvalConfig};
use polyroom::extraction::{export_json, ExtractionConfig};
use polyroom::geometry::{Floorplan, Polygon};
use polyroom::model::{Model, ModelConfig};
use polyroom::parallel::Execution;
use polyroom::pipeline::{evaluate_model, infer_scene};
use polyroom::training::{load_checkpoint, prepare_samples, save_checkpoint, QueryInit, TrainConfig, Trainer};

fn scenes(k: u64) -> Vec<SceneRecord> {
    let cfg = SynthConfig {
        width: 48,
        height: 48,
        min_side: 10,
        min_notch: 5,
        rooms_max: 2,
        ..SynthConfig::default()
    };
    (0..k).map(|s| generate_scene(s, &cfg).unwrap()).collect()
}

fn tiny() -> ModelConfig {
    ModelConfig {
        m: 3,
        n: 12,
        d: 16,
        layers: 2,
        heads: 2,
        ffn_dim: 32,
        ..ModelConfig::default()
    }
}

#[test]
fn dataset_survives_disk() {
    let t = tempfile::tempdir().unwrap();
    let data = scenes(3);
    save_dataset(&data, t.path()).unwrap();
    let back = load_dataset(t.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.gt, b.gt);
        assert_eq!(a.masks, b.masks);
        assert_eq!(a.density.width, b.density.width);
        // Density is stored quantized to 8 bits.
        assert!(a.density.data.iter().zip(&b.density.data).all(|(x, y)| (x - y).abs() <= 1.0 / 255.0));
    }
}

#[test]
fn train_save_load_infer_export_evaluate() {
    let t = tempfile::tempdir().unwrap();
    let data = scenes(4);
    let samples = prepare_samples(&data, 3, 12, QueryInit::GtMasks, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 2,
        raster_res: 16,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(Model::new(tiny(), 3).unwrap(), cfg).unwrap();
    let recs = trainer.train(&samples, |_| Ok(())).unwrap();
    assert_eq!(recs.len(), 4);
    assert!(recs.iter().all(|r| r.total.is_finite()));

    save_checkpoint(t.path(), &trainer.model, trainer.step, Some(&trainer.optimizer)).unwrap();
    let ck = load_checkpoint(t.path()).unwrap();
    assert_eq!(ck.step, 4);

    let ext = ExtractionConfig::default();
    for (i, scene) in data.iter().enumerate() {
        let a = infer_scene(&trainer.model, scene, QueryInit::GtMasks, 0, &ext).unwrap();
        let b = infer_scene(&ck.model, scene, QueryInit::GtMasks, 0, &ext).unwrap();
        assert_eq!(a.floorplan, b.floorplan);
        assert_eq!(a.floorplan.rooms.len() + a.floorplan.dropped.len(), scene.gt.rooms.len());

        let path = t.path().join(format!("{i}.json"));
        export_json(&a.floorplan, Some(&scene.id), &path).unwrap();
        let file = read_rooms(&path).unwrap();
        let rooms: Vec<Polygon> = file.rooms.into_iter().map(|r| Polygon::new(r).unwrap()).collect();
        let fp = Floorplan {
            rooms,
            width: file.width,
            height: file.height,
        };
        assert_eq!(fp, a.floorplan.to_floorplan());
        let r = evaluate(&fp, &scene.gt, &EvalConfig::default()).unwrap();
        assert!(r.room.precision <= 1.0 && r.room_iou >= 0.0);
    }
}

#[test]
fn execution_modes_agree_on_evaluation() {
    let data = scenes(5);
    let model = Model::new(tiny(), 9).unwrap();
    let run = |exec| evaluate_model(&model, &data, QueryInit::Masks, 0, &ExtractionConfig::default(), &EvalConfig::default(), exec).unwrap();
    let (ra, fa) = run(Execution::Sequential);
    let (rb, fb) = run(Execution::Parallel);
    assert_eq!(ra, rb);
    assert_eq!(fa, fb);
}

#[test]
fn zeroed_offset_heads_keep_queries() {
    let data = scenes(6);
    let mut model = Model::new(tiny(), 1).unwrap();
    for name in model.params().names().to_vec() {
        if name.contains(".offset.1.") {
            model.params_mut().get_mut(&name).unwrap().data.fill(0.0);
        }
    }
    for scene in &data {
        let a = infer_scene(&model, scene, QueryInit::GtMasks, 0, &ExtractionConfig::default()).unwrap();
        let q = &a.queries;
        let last = a.output.queries.last().unwrap();
        assert_eq!(last.len(), q.coords.len());
        assert!(last.iter().zip(&q.coords).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
