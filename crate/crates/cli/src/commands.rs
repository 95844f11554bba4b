//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use sspose::mesh::{read_ply, SurfaceModel};
use sspose::so3::{read_codebook, write_codebook};
use sspose::{build_codebook, Codebook, FeatureMap, Pose, PoseRecord};
use sspose_harness::dataset::{load_models, read_pose_file, write_pose_file};
use sspose_harness::{
    generate_dataset, initial_state, load_dataset, optimize as run_optimizer, prepare_sample, pseudo_points, scene_pseudo_label,
    write_dataset, write_trace_csv, CameraSpec, DatasetSpec, HarnessError, KindPlan, NoiseSpec, PoseSampler, SceneSample, Shape, TraceRow,
};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::report::{merge_prefixed, pose_metrics};
use crate::{CodebookArgs, EvalArgs, GenScenesArgs, OptimizeArgs, PseudolabelArgs};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

pub fn codebook(args: &CodebookArgs, out: &mut dyn Write) -> Result<()> {
    if args.viewpoints == 0 || args.inplane == 0 {
        return Err(CliError::Usage("--viewpoints and --inplane must be at least 1".into()));
    }
    let mut book: Codebook = build_codebook(args.viewpoints, args.inplane)?;
    if args.embed {
        book = book.embed_with(&FeatureMap::Flat);
    }
    let mut w = create(&args.out)?;
    write_codebook(&book, &mut w)?;
    w.flush().map_err(|e| io_err(&args.out, e))?;
    writeln!(out, "wrote {} rotations to {}", book.len(), args.out.display())?;
    Ok(())
}

fn parse_shape(name: &str) -> Result<Option<Shape>> {
    match name {
        "catalog" => Ok(None),
        other => Shape::from_name(other)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("unknown shape {other:?}; expected catalog, sphere, cuboid or cylinder"))),
    }
}

pub fn gen_scenes(args: &GenScenesArgs, out: &mut dyn Write) -> Result<()> {
    let kinds = KindPlan::parse(&args.kinds).ok_or_else(|| CliError::Usage(format!("unknown kinds {:?}", args.kinds)))?;
    let spec = DatasetSpec {
        count: args.count,
        shape: parse_shape(&args.shape)?,
        kinds,
        camera: CameraSpec::default(),
        sampler: PoseSampler { random_rotation: !args.fronto, ..PoseSampler::default() },
        noise: NoiseSpec {
            rotation_sigma: args.noise_rotation,
            translation_sigma_frac: args.noise_translation,
            mask_erosion: args.noise_mask_erosion,
            depth_noise_sigma: args.noise_depth,
            occlusion_fraction: args.occlusion,
            center_sigma_px: args.noise_center,
            tz_bias: args.tz_bias,
        },
        seed: args.seed,
    };
    if spec.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let scenes = generate_dataset(&spec)?;
    write_dataset(&args.out, &scenes)?;
    writeln!(out, "wrote {} scenes to {}", scenes.len(), args.out.display())?;
    Ok(())
}

/// Scenes of a set together with the initial pose of each.
struct Inputs {
    root: PathBuf,
    scenes: Vec<SceneSample>,
    initial: Vec<Pose>,
}

fn load_inputs(root: &Path, init: Option<&Path>) -> Result<Inputs> {
    let scenes = load_dataset(root)?;
    let init_path = init.map(Path::to_path_buf).unwrap_or_else(|| root.join("init_poses.txt"));
    let records = read_pose_file(&init_path)?;
    let mut by_scene: BTreeMap<u64, PoseRecord> = BTreeMap::new();
    for r in records {
        if by_scene.insert(r.scene_id, r).is_some() {
            return Err(CliError::Data(format!("{}: duplicate pose for scene {}", init_path.display(), r.scene_id)));
        }
    }
    let mut initial = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let r =
            by_scene.get(&(i as u64)).ok_or_else(|| CliError::Data(format!("{}: no initial pose for scene {i}", init_path.display())))?;
        if r.obj_id != scene.spec.shape.obj_id() {
            return Err(CliError::Data(format!(
                "scene {i}: initial pose names object {} but the scene holds {}",
                r.obj_id,
                scene.spec.shape.obj_id()
            )));
        }
        initial.push(r.pose);
    }
    if by_scene.len() != scenes.len() {
        return Err(CliError::Data(format!("{}: {} poses for {} scenes", init_path.display(), by_scene.len(), scenes.len())));
    }
    Ok(Inputs { root: root.to_path_buf(), scenes, initial })
}

/// Pseudo-label points of every object in the set, read from its model file.
fn object_points(inputs: &Inputs, config: &Config) -> Result<BTreeMap<u64, Vec<Vector3<f64>>>> {
    let mut out = BTreeMap::new();
    for scene in &inputs.scenes {
        let id = scene.spec.shape.obj_id();
        if out.contains_key(&id) {
            continue;
        }
        let path = inputs.root.join("models").join(format!("obj_{id:06}.ply"));
        let file = File::open(&path).map_err(|e| io_err(&path, e))?;
        let model: SurfaceModel<f64> = read_ply(BufReader::new(file))?;
        out.insert(id, pseudo_points(&model, &config.refine, id)?);
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn pseudolabel(args: &PseudolabelArgs, out: &mut dyn Write) -> Result<()> {
    let config = Config::load(args.config.as_deref())?;
    let inputs = load_inputs(&args.scenes, args.init.as_deref())?;
    let points = object_points(&inputs, &config)?;
    let labels: Vec<_> = (0..inputs.scenes.len())
        .into_par_iter()
        .map(|i| {
            let scene = &inputs.scenes[i];
            scene_pseudo_label(scene, i, &inputs.initial[i], &points[&scene.spec.shape.obj_id()], &config.refine)
        })
        .collect::<std::result::Result<_, HarnessError>>()?;

    let sink: Box<dyn Write + '_> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(&mut *out),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["scene_id", "obj_id", "status", "t_z_bar", "delta_d", "k", "t_z_init", "t_z_gt", "error"])?;
    for (i, (scene, label)) in inputs.scenes.iter().zip(&labels).enumerate() {
        let t_z_init = inputs.initial[i].translation.z;
        let t_z_gt = scene.gt_pose.translation.z;
        let status = if label.is_some() { "ok" } else { "skipped" };
        w.write_record([
            i.to_string(),
            scene.spec.shape.obj_id().to_string(),
            status.to_string(),
            opt(label.map(|l| l.t_z_bar)),
            opt(label.map(|l| l.delta_d)),
            label.and_then(|l| l.selected_index_k).map(|k| k.to_string()).unwrap_or_default(),
            t_z_init.to_string(),
            t_z_gt.to_string(),
            opt(label.map(|l| l.t_z_bar - t_z_gt)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let config = Config::load(args.config.as_deref())?;
    let gt = read_pose_file(&args.gt)?;
    let pred = read_pose_file(&args.pred)?;
    // either the `models` directory itself or the set root holding it
    let root = match args.models.parent() {
        Some(parent) if args.models.join("models_info.txt").is_file() => parent,
        _ => args.models.as_path(),
    };
    let models = load_models(root)?;
    let report = pose_metrics(&gt, &pred, &models, config.auc_mode)?;
    let text = report.to_text();
    if let Some(path) = &args.out {
        fs::write(path, &text).map_err(|e| io_err(path, e))?;
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn load_codebook(path: Option<&Path>, config: &Config) -> Result<Codebook> {
    match path {
        Some(p) => {
            let file = File::open(p).map_err(|e| io_err(p, e))?;
            Ok(read_codebook(BufReader::new(file))?)
        }
        None => Ok(build_codebook(config.codebook_viewpoints, config.codebook_inplane)?),
    }
}

fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = create(path)?;
    write_trace_csv(trace, &mut w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn optimize(args: &OptimizeArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = Config::load(args.config.as_deref())?;
    if let Some(n) = args.iters {
        config.optimizer.iterations = n;
    }
    if let Some(seed) = args.seed {
        config.refine.aug_seed = seed;
    }
    config.validate()?;
    let inputs = load_inputs(&args.scenes, args.init.as_deref())?;
    let points = object_points(&inputs, &config)?;
    let codebook = load_codebook(args.codebook.as_deref(), &config)?;
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;

    let samples: Vec<_> = (0..inputs.scenes.len())
        .into_par_iter()
        .map(|i| {
            let scene = &inputs.scenes[i];
            prepare_sample(scene, i, &inputs.initial[i], &codebook, &points[&scene.spec.shape.obj_id()], &config.refine)
        })
        .collect::<std::result::Result<_, HarnessError>>()?;
    let states = samples.iter().map(initial_state).collect::<std::result::Result<_, HarnessError>>()?;

    let result = match run_optimizer(&samples, states, &config.refine, &config.optimizer) {
        Ok(r) => r,
        Err(HarnessError::Diverged { iteration, trace }) => {
            write_trace(&args.out.join("trace.csv"), &trace)?;
            return Err(CliError::Numeric(format!("loss became non-finite at iteration {iteration}; partial trace written")));
        }
        Err(e) => return Err(e.into()),
    };
    write_trace(&args.out.join("trace.csv"), &result.trace)?;

    let records = |poses: &[Pose]| -> Vec<PoseRecord> {
        inputs
            .scenes
            .iter()
            .zip(poses)
            .enumerate()
            .map(|(i, (s, p))| PoseRecord { scene_id: i as u64, obj_id: s.spec.shape.obj_id(), pose: *p })
            .collect()
    };
    let refined = records(&result.poses);
    write_pose_file(&args.out.join("poses.txt"), &refined)?;

    let gt: Vec<Pose> = inputs.scenes.iter().map(|s| s.gt_pose).collect();
    let gt = records(&gt);
    let models = load_models(&inputs.root)?;
    let mut report = sspose::metrics::MetricReport::default();
    merge_prefixed(&mut report, "before", &pose_metrics(&gt, &records(&inputs.initial), &models, config.auc_mode)?);
    merge_prefixed(&mut report, "after", &pose_metrics(&gt, &refined, &models, config.auc_mode)?);
    let last = result.trace.last().expect("trace holds the final evaluation");
    report.insert("final_loss", last.loss);
    let text = report.to_text();
    let metrics_path = args.out.join("metrics.txt");
    fs::write(&metrics_path, &text).map_err(|e| io_err(&metrics_path, e))?;
    out.write_all(text.as_bytes())?;
    Ok(())
}
