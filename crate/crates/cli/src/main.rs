mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polyroom::dataio::{dataset_scene_dirs, generate_scene, load_dataset, load_scene, read_rooms, save_dataset};
use polyroom::evaluation::evaluate_many;
use polyroom::extraction::{export_json, export_svg};
use polyroom::geometry::{Floorplan, Polygon};
use polyroom::model::Model;
use polyroom::parallel;
use polyroom::pipeline::infer_scene;
use polyroom::training::{load_checkpoint, prepare_samples, save_checkpoint, JsonlLog, QueryInit, Trainer, MANIFEST_FILE};
use polyroom::{Error, Result};
use serde::Serialize;

use config::RunConfig;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "polyroom", version, about = "Floorplan reconstruction from density maps")]
struct Cli {
    /// Flat JSON config; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log more (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Reconstruct floorplans for one scene or a dataset.
    Infer(InferArgs),
    /// Score predicted floorplans against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rooms_min: Option<usize>,
    #[arg(long)]
    rooms_max: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    degrade_masks: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint directory.
    #[arg(long)]
    model: PathBuf,
    /// A scene directory or a dataset directory.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    use_gt_masks: bool,
    #[arg(long)]
    t_pro: Option<f64>,
    #[arg(long)]
    t_ang: Option<f64>,
    #[arg(long)]
    dp_eps: Option<f64>,
    #[arg(long)]
    svg: bool,
    /// Also write every layer's queries and the corner probabilities.
    #[arg(long)]
    dump_queries: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Report path; defaults to `metrics.json` in the prediction directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iou_thresh: Option<f64>,
    #[arg(long)]
    corner_px: Option<f64>,
    #[arg(long)]
    angle_deg: Option<f64>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))
}

fn synth(mut cfg: RunConfig, a: SynthArgs) -> Result<()> {
    set(&mut cfg.scenes, a.scenes);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.rooms_min, a.rooms_min);
    set(&mut cfg.rooms_max, a.rooms_max);
    set(&mut cfg.width, a.width);
    set(&mut cfg.height, a.height);
    cfg.degrade_masks |= a.degrade_masks;
    let sc = cfg.synth()?;
    let scenes = parallel::try_map(cfg.execution, &(0..cfg.scenes as u64).collect::<Vec<_>>(), |&i| generate_scene(cfg.seed.wrapping_add(i), &sc))?;
    save_dataset(&scenes, &a.out)?;
    cfg.save(&a.out.join("run_config.json"))?;
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.d, a.d);
    set(&mut cfg.layers, a.layers);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.batch_size, a.batch_size);
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    let tc = cfg.train()?;
    let scenes = load_dataset(&a.data)?;
    if scenes.is_empty() {
        return Err(Error::Coverage(format!("no scenes in {}", a.data.display())));
    }
    create_dir(&a.out)?;
    let mut trainer = if a.resume && a.out.join(MANIFEST_FILE).is_file() {
        let ck = load_checkpoint(&a.out)?;
        log::info!("resuming at step {}", ck.step);
        Trainer::resume(ck, tc)?
    } else {
        Trainer::new(Model::new(cfg.model()?, cfg.seed)?, tc)?
    };
    let mc = trainer.model.config().clone();
    let data = prepare_samples(&scenes, mc.m, mc.n, cfg.init, cfg.seed)?;
    cfg.save(&a.out.join("run_config.json"))?;
    let mut log = JsonlLog::create(&a.out.join("train.jsonl"))?;
    let records = trainer.train(&data, |r| log.write(r))?;
    save_checkpoint(&a.out, &trainer.model, trainer.step, Some(&trainer.optimizer))?;
    match records.last() {
        Some(r) => println!("step {} total loss {:.5}", r.step, r.total),
        None => println!("nothing to do at step {}", trainer.step),
    }
    Ok(())
}

#[derive(Serialize)]
struct QueryDump {
    /// Per layer, `m × n × 2` normalized coordinates.
    queries: Vec<Vec<f64>>,
    corner_probs: Vec<Vec<f64>>,
    valid_count: usize,
}

fn infer(mut cfg: RunConfig, a: InferArgs) -> Result<()> {
    set(&mut cfg.t_pro, a.t_pro);
    set(&mut cfg.t_ang, a.t_ang);
    set(&mut cfg.dp_eps, a.dp_eps);
    set(&mut cfg.seed, a.seed);
    cfg.use_gt_masks |= a.use_gt_masks;
    cfg.svg |= a.svg;
    cfg.dump_queries |= a.dump_queries;
    let ext = cfg.extraction()?;
    let model = load_checkpoint(&a.model)?.model;
    let dirs = dataset_scene_dirs(&a.scene)?;
    let init = match (cfg.use_gt_masks, cfg.init) {
        (true, _) => QueryInit::GtMasks,
        (false, QueryInit::Random) => QueryInit::Random,
        _ => QueryInit::Masks,
    };
    create_dir(&a.out)?;
    cfg.save(&a.out.join("run_config.json"))?;
    let (mut rooms, mut dropped, mut non_simple) = (0, 0, 0);
    for (i, dir) in dirs.iter().enumerate() {
        let scene = load_scene(dir)?;
        if scene.masks.is_none() && init == QueryInit::Masks {
            log::warn!("scene {} has no masks; using masks drawn from its ground truth", scene.id);
        }
        let inf = infer_scene(&model, &scene, init, cfg.seed.wrapping_add(i as u64), &ext)?;
        let fp = &inf.floorplan;
        rooms += fp.rooms.len();
        dropped += fp.dropped.len();
        non_simple += fp.non_simple_count();
        export_json(fp, Some(&scene.id), &a.out.join(format!("{}.json", scene.id)))?;
        if cfg.svg {
            export_svg(fp, Some(&scene.density), &a.out.join(format!("{}.svg", scene.id)))?;
        }
        if cfg.dump_queries {
            let dump = QueryDump {
                queries: inf.output.queries.clone(),
                corner_probs: (0..inf.output.m).map(|r| inf.output.corner_probs(r)).collect(),
                valid_count: inf.queries.valid_count,
            };
            let path = a.out.join(format!("{}.queries.json", scene.id));
            let text = serde_json::to_string(&dump).expect("plain data serializes");
            std::fs::write(&path, text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        }
    }
    println!("{} scene(s): {rooms} room(s), {dropped} dropped, {non_simple} non-simple", dirs.len());
    Ok(())
}

fn eval(mut cfg: RunConfig, a: EvalArgs) -> Result<()> {
    set(&mut cfg.iou_thresh, a.iou_thresh);
    set(&mut cfg.corner_px, a.corner_px);
    set(&mut cfg.angle_deg, a.angle_deg);
    let ec = cfg.eval()?;
    let gt = load_dataset(&a.gt)?;
    let missing: Vec<&str> = gt.iter().filter(|s| !a.pred.join(format!("{}.json", s.id)).is_file()).map(|s| s.id.as_str()).collect();
    if !missing.is_empty() || gt.is_empty() {
        return Err(Error::Coverage(format!(
            "{} of {} ground-truth scene(s) have no prediction in {} (first: {:?})",
            missing.len(),
            gt.len(),
            a.pred.display(),
            missing.first()
        )));
    }
    let preds = gt
        .iter()
        .map(|s| {
            let path = a.pred.join(format!("{}.json", s.id));
            let f = read_rooms(&path)?;
            let rooms = f.rooms.into_iter().map(Polygon::new).collect::<Result<Vec<_>>>()?;
            Ok(Floorplan {
                rooms,
                width: f.width,
                height: f.height,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_many(preds.iter().zip(gt.iter().map(|s| &s.gt)), &ec)?;
    print!("{}", report.table());
    let out = a.out.unwrap_or_else(|| a.pred.join("metrics.json"));
    let text = serde_json::to_string_pretty(&report).expect("plain data serializes");
    std::fs::write(&out, text + "\n").map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = ["warn", "info", "debug"][usize::from(cli.verbose.min(2))];
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = parallel::init_from_env() {
        log::info!("{} = {n}", parallel::THREADS_ENV);
    }
    let run = RunConfig::load(cli.config.as_deref()).and_then(|cfg| match cli.cmd {
        Command::Synth(a) => synth(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Infer(a) => infer(cfg, a),
        Command::Eval(a) => eval(cfg, a),
    });
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
