//! On-disk scene sets.
//!
//! ```text
//! <root>/scene_NNN/{depth.pgm, mask.pgm, meta}
//! <root>/models/obj_XXXXXX.ply, <root>/models/models_info.txt
//! <root>/gt_poses.txt, <root>/init_poses.txt
//! ```
//!
//! Depth is stored in millimeters, so a loaded scene's depth is the
//! quantized render; everything else round-trips exactly.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use sspose::image::{depth_from_mm, depth_to_mm, mask_from_u8, mask_to_u8, read_pgm16, read_pgm8, write_pgm16, write_pgm8};
use sspose::mesh::{read_ply, sample_surface_points, write_ply};
use sspose::metrics::{parse_pose_records, write_pose_records};
use sspose::{BoundingBox, Intrinsics, ModelInfo, Pose, PoseRecord};

use crate::error::{HarnessError, Result};
use crate::scene::{generate_scene, CameraSpec, NoiseSpec, Occluder, PoseSampler, SampleKind, SceneSample, SceneSpec, Shape, MODEL_POINTS};

/// Which frames of a generated set carry labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindPlan {
    Real,
    Synthetic,
    /// Even indices real, odd indices synthetic.
    Alternate,
}

impl KindPlan {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(KindPlan::Real),
            "synthetic" => Some(KindPlan::Synthetic),
            "alternate" => Some(KindPlan::Alternate),
            _ => None,
        }
    }

    pub fn kind_of(&self, i: usize) -> SampleKind {
        match self {
            KindPlan::Real => SampleKind::Real,
            KindPlan::Synthetic => SampleKind::Synthetic,
            KindPlan::Alternate if i % 2 == 0 => SampleKind::Real,
            KindPlan::Alternate => SampleKind::Synthetic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub count: usize,
    /// Fixed shape, or the catalog cycled by index when `None`.
    pub shape: Option<Shape>,
    pub kinds: KindPlan,
    pub camera: CameraSpec,
    pub sampler: PoseSampler,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count: 10,
            shape: None,
            kinds: KindPlan::Real,
            camera: CameraSpec::default(),
            sampler: PoseSampler::default(),
            noise: NoiseSpec::zero(),
            seed: 0,
        }
    }
}

/// Seed of scene `i` in a set seeded with `base`.
pub fn scene_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

pub fn scene_spec(spec: &DatasetSpec, i: usize) -> SceneSpec {
    let shape = spec.shape.unwrap_or(Shape::catalog()[i % 3]);
    SceneSpec { shape, kind: spec.kinds.kind_of(i), camera: spec.camera, sampler: spec.sampler, noise: spec.noise }
}

/// Generates every scene of `spec`, in index order.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<SceneSample>> {
    spec.noise.validate()?;
    (0..spec.count).into_par_iter().map(|i| generate_scene(&scene_spec(spec, i), scene_seed(spec.seed, i))).collect()
}

pub fn scene_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("scene_{i:03}"))
}

fn model_file(root: &Path, obj_id: u64) -> PathBuf {
    root.join("models").join(format!("obj_{obj_id:06}.ply"))
}

fn shape_text(shape: &Shape) -> String {
    match *shape {
        Shape::Sphere { radius } => format!("sphere {radius}"),
        Shape::Cuboid { size } => format!("cuboid {} {} {}", size[0], size[1], size[2]),
        Shape::Cylinder { radius, height } => format!("cylinder {radius} {height}"),
    }
}

fn parse_shape(s: &str) -> Option<Shape> {
    let tok: Vec<&str> = s.split_whitespace().collect();
    let nums: Vec<f64> = tok.get(1..)?.iter().map(|t| t.parse().ok()).collect::<Option<_>>()?;
    match (tok.first()?, nums.as_slice()) {
        (&"sphere", [r]) => Some(Shape::Sphere { radius: *r }),
        (&"cuboid", [x, y, z]) => Some(Shape::Cuboid { size: [*x, *y, *z] }),
        (&"cylinder", [r, h]) => Some(Shape::Cylinder { radius: *r, height: *h }),
        _ => None,
    }
}

fn join(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn pose_text(p: &Pose) -> String {
    let r = &p.rotation;
    join((0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])).chain(p.translation.iter().copied()))
}

/// Text of the `meta` file of one scene.
pub fn scene_meta(scene: &SceneSample) -> String {
    let s = &scene.spec;
    let k = &s.camera.intrinsics;
    let n = &s.noise;
    let d = &scene.detection;
    let mut out = vec![
        format!("seed = {}", scene.seed),
        format!("kind = {}", s.kind.as_str()),
        format!("shape = {}", shape_text(&s.shape)),
        format!("obj_id = {}", s.shape.obj_id()),
        format!("intrinsics = {}", join([k.fx, k.fy, k.cx, k.cy])),
        format!("image_size = {} {}", s.camera.width, s.camera.height),
        format!("sampler = {} {} {} {}", s.sampler.tz_range.0, s.sampler.tz_range.1, s.sampler.border_px, s.sampler.random_rotation),
        format!("noise.rotation_sigma = {}", n.rotation_sigma),
        format!("noise.translation_sigma_frac = {}", n.translation_sigma_frac),
        format!("noise.mask_erosion = {}", n.mask_erosion),
        format!("noise.depth_noise_sigma = {}", n.depth_noise_sigma),
        format!("noise.occlusion_fraction = {}", n.occlusion_fraction),
        format!("noise.center_sigma_px = {}", n.center_sigma_px),
        format!("noise.tz_bias = {}", n.tz_bias),
        format!("gt_pose = {}", pose_text(&scene.gt_pose)),
        format!("initial_pose = {}", pose_text(&scene.initial_pose)),
        format!("bbox = {}", join([d.x, d.y, d.w, d.h])),
    ];
    out.push(match &scene.occluder {
        None => "occluder = none".into(),
        Some(o) => format!("occluder = {}", join([o.direction.x, o.direction.y, o.offset, o.depth])),
    });
    out.join("\n") + "\n"
}

struct Meta(BTreeMap<String, String>);

impl Meta {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| HarnessError::Data(format!("meta line without '=': {line}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.0.get(key).map(String::as_str).ok_or_else(|| HarnessError::Data(format!("meta lacks {key}")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.raw(key)?.parse().map_err(|_| HarnessError::Data(format!("meta {key} is not a number")))
    }

    fn nums(&self, key: &str, n: usize) -> Result<Vec<f64>> {
        let v: Vec<f64> = self
            .raw(key)?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| HarnessError::Data(format!("meta {key}: bad number {t}"))))
            .collect::<Result<_>>()?;
        if v.len() != n {
            return Err(HarnessError::Data(format!("meta {key}: expected {n} values, found {}", v.len())));
        }
        Ok(v)
    }

    fn pose(&self, key: &str) -> Result<Pose> {
        let v = self.nums(key, 12)?;
        Ok(Pose::new(Matrix3::from_row_slice(&v[..9]), Vector3::new(v[9], v[10], v[11]))?)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_context(e, path))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| io_context(e, path))?))
}

fn io_context(e: std::io::Error, path: &Path) -> HarnessError {
    HarnessError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn write_scene(dir: &Path, scene: &SceneSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_context(e, dir))?;
    write_pgm16(&depth_to_mm(&scene.depth), create(&dir.join("depth.pgm"))?)?;
    write_pgm8(&mask_to_u8(&scene.gt_mask), create(&dir.join("mask.pgm"))?)?;
    fs::write(dir.join("meta"), scene_meta(scene)).map_err(|e| io_context(e, dir))?;
    Ok(())
}

/// Model of `shape` as the metrics see it when read back from `models/`.
fn model_from_ply(path: &Path, obj_id: u64, diameter: f64, symmetric: bool) -> Result<ModelInfo> {
    let surface = read_ply(open(path)?)?;
    let points = sample_surface_points(&surface, MODEL_POINTS, obj_id)?;
    Ok(ModelInfo::new(points, diameter, symmetric)?)
}

/// Writes scenes, models and pose files under `root`.
pub fn write_dataset(root: &Path, scenes: &[SceneSample]) -> Result<()> {
    fs::create_dir_all(root.join("models")).map_err(|e| io_context(e, root))?;
    let mut shapes: BTreeMap<u64, Shape> = BTreeMap::new();
    for (i, scene) in scenes.iter().enumerate() {
        write_scene(&scene_dir(root, i), scene)?;
        shapes.insert(scene.spec.shape.obj_id(), scene.spec.shape);
    }
    let mut info = String::from("# obj_id diameter symmetric shape\n");
    for (id, shape) in &shapes {
        let mesh = shape.mesh();
        write_ply(&mesh.vertices, &mesh.faces, create(&model_file(root, *id))?)?;
        info.push_str(&format!("{id} {} {} {}\n", 2.0 * shape.bounding_radius(), shape.is_symmetric(), shape.name()));
    }
    fs::write(root.join("models").join("models_info.txt"), info).map_err(|e| io_context(e, root))?;
    let records = |f: fn(&SceneSample) -> Pose| -> Vec<PoseRecord> {
        scenes.iter().enumerate().map(|(i, s)| PoseRecord { scene_id: i as u64, obj_id: s.spec.shape.obj_id(), pose: f(s) }).collect()
    };
    fs::write(root.join("gt_poses.txt"), write_pose_records(&records(|s| s.gt_pose))).map_err(|e| io_context(e, root))?;
    fs::write(root.join("init_poses.txt"), write_pose_records(&records(|s| s.initial_pose))).map_err(|e| io_context(e, root))?;
    Ok(())
}

/// Object models listed in `models/models_info.txt`, keyed by id.
pub fn load_models(root: &Path) -> Result<BTreeMap<u64, ModelInfo>> {
    let dir = root.join("models");
    let text = fs::read_to_string(dir.join("models_info.txt")).map_err(|e| io_context(e, &dir))?;
    let mut out = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let tok: Vec<&str> = line.split_whitespace().collect();
        let bad = || HarnessError::Data(format!("bad models_info line: {line}"));
        if tok.len() < 3 {
            return Err(bad());
        }
        let id: u64 = tok[0].parse().map_err(|_| bad())?;
        let diameter: f64 = tok[1].parse().map_err(|_| bad())?;
        let symmetric: bool = tok[2].parse().map_err(|_| bad())?;
        out.insert(id, model_from_ply(&model_file(root, id), id, diameter, symmetric)?);
    }
    Ok(out)
}

/// Reads one scene directory. The model is rebuilt from the shape in `meta`.
pub fn load_scene(dir: &Path) -> Result<SceneSample> {
    let meta = Meta::parse(&fs::read_to_string(dir.join("meta")).map_err(|e| io_context(e, dir))?)?;
    let shape = parse_shape(meta.raw("shape")?).ok_or_else(|| HarnessError::Data("meta shape is malformed".into()))?;
    let kind = SampleKind::parse(meta.raw("kind")?).ok_or_else(|| HarnessError::Data("meta kind is malformed".into()))?;
    let k = meta.nums("intrinsics", 4)?;
    let size = meta.nums("image_size", 2)?;
    let sampler_tok: Vec<&str> = meta.raw("sampler")?.split_whitespace().collect();
    let bad_sampler = || HarnessError::Data("meta sampler is malformed".into());
    if sampler_tok.len() != 4 {
        return Err(bad_sampler());
    }
    let f = |i: usize| sampler_tok[i].parse::<f64>().map_err(|_| bad_sampler());
    let sampler =
        PoseSampler { tz_range: (f(0)?, f(1)?), border_px: f(2)?, random_rotation: sampler_tok[3].parse().map_err(|_| bad_sampler())? };
    let noise = NoiseSpec {
        rotation_sigma: meta.num("noise.rotation_sigma")?,
        translation_sigma_frac: meta.num("noise.translation_sigma_frac")?,
        mask_erosion: meta.num("noise.mask_erosion")?,
        depth_noise_sigma: meta.num("noise.depth_noise_sigma")?,
        occlusion_fraction: meta.num("noise.occlusion_fraction")?,
        center_sigma_px: meta.num("noise.center_sigma_px")?,
        tz_bias: meta.num("noise.tz_bias")?,
    };
    let camera = CameraSpec { intrinsics: Intrinsics::new(k[0], k[1], k[2], k[3])?, width: size[0] as usize, height: size[1] as usize };
    let b = meta.nums("bbox", 4)?;
    let occluder = match meta.raw("occluder")? {
        "none" => None,
        _ => {
            let o = meta.nums("occluder", 4)?;
            Some(Occluder { direction: Vector2::new(o[0], o[1]), offset: o[2], depth: o[3] })
        }
    };
    let depth = depth_from_mm(&read_pgm16(open(&dir.join("depth.pgm"))?)?);
    let gt_mask = mask_from_u8(&read_pgm8(open(&dir.join("mask.pgm"))?)?);
    if (depth.0.width(), depth.0.height()) != (camera.width, camera.height)
        || (gt_mask.0.width(), gt_mask.0.height()) != (camera.width, camera.height)
    {
        return Err(HarnessError::Data(format!("{}: image size disagrees with meta", dir.display())));
    }
    Ok(SceneSample {
        seed: meta.num("seed")?,
        spec: SceneSpec { shape, kind, camera, sampler, noise },
        model: shape.model_info(),
        gt_pose: meta.pose("gt_pose")?,
        initial_pose: meta.pose("initial_pose")?,
        occluder,
        depth,
        gt_mask,
        detection: BoundingBox::new(b[0], b[1], b[2], b[3])?,
    })
}

/// Number of consecutive `scene_NNN` directories under `root`.
pub fn count_scenes(root: &Path) -> usize {
    (0..).take_while(|i| scene_dir(root, *i).join("meta").is_file()).count()
}

/// All scenes under `root`, in index order.
pub fn load_dataset(root: &Path) -> Result<Vec<SceneSample>> {
    let n = count_scenes(root);
    if n == 0 {
        return Err(HarnessError::Data(format!("no scenes under {}", root.display())));
    }
    (0..n).into_par_iter().map(|i| load_scene(&scene_dir(root, i))).collect()
}

pub fn read_pose_file(path: &Path) -> Result<Vec<PoseRecord>> {
    let text = fs::read_to_string(path).map_err(|e| io_context(e, path))?;
    Ok(parse_pose_records(&text)?)
}

pub fn write_pose_file(path: &Path, records: &[PoseRecord]) -> Result<()> {
    fs::write(path, write_pose_records(records)).map_err(|e| io_context(e, path))?;
    Ok(())
}
