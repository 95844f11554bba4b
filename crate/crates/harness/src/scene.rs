//! Synthetic single-object RGB-D frames: a convex primitive in front of a
//! background wall, an optional planar occluder, and a noisy initial
//! estimate of pose and mask.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use sspose::mesh::{sample_surface_points, SurfaceModel, TriangleMesh};
use sspose::{BoundingBox, Depth, Grid, Intrinsics, Mask, ModelInfo, Pose};

use crate::error::{HarnessError, Result};

/// Surface samples used for metrics.
pub const MODEL_POINTS: usize = 1000;
/// Target spacing of rendered surface samples, in pixels.
pub const SPLAT_SPACING_PX: f64 = 0.35;
/// Background wall distance behind the object center, meters.
pub const BACKGROUND_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    Cuboid { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
}

impl Shape {
    pub const SPHERE: Shape = Shape::Sphere { radius: 0.05 };
    pub const CUBOID: Shape = Shape::Cuboid { size: [0.12, 0.08, 0.05] };
    pub const CYLINDER: Shape = Shape::Cylinder { radius: 0.035, height: 0.12 };

    /// Default object set, cycled through by scene index.
    pub fn catalog() -> [Shape; 3] {
        [Self::SPHERE, Self::CUBOID, Self::CYLINDER]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Cuboid { .. } => "cuboid",
            Shape::Cylinder { .. } => "cylinder",
        }
    }

    pub fn obj_id(&self) -> u64 {
        match self {
            Shape::Sphere { .. } => 1,
            Shape::Cuboid { .. } => 2,
            Shape::Cylinder { .. } => 3,
        }
    }

    /// Catalog entry by name.
    pub fn from_name(name: &str) -> Option<Shape> {
        Self::catalog().into_iter().find(|s| s.name() == name)
    }

    /// Sphere and cylinder are treated as symmetric for ADD(-S).
    pub fn is_symmetric(&self) -> bool {
        !matches!(self, Shape::Cuboid { .. })
    }

    pub fn mesh(&self) -> TriangleMesh<f64> {
        match *self {
            Shape::Sphere { radius } => TriangleMesh::uv_sphere(radius, 48, 24),
            Shape::Cuboid { size } => TriangleMesh::cuboid(Vector3::from(size) * 0.5),
            Shape::Cylinder { radius, height } => TriangleMesh::cylinder(radius, height * 0.5, 64),
        }
    }

    /// Radius of a ball around the origin containing the object.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Cuboid { size } => Vector3::from(size).norm() * 0.5,
            Shape::Cylinder { radius, height } => (radius * radius + height * height * 0.25).sqrt(),
        }
    }

    /// Model points and diameter used by the metrics, drawn with a fixed seed.
    pub fn model_info(&self) -> ModelInfo {
        let points =
            sample_surface_points(&SurfaceModel::Mesh(self.mesh()), MODEL_POINTS, self.obj_id()).expect("primitive meshes are non-empty");
        ModelInfo::new(points, 2.0 * self.bounding_radius(), self.is_symmetric()).expect("valid primitive model")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    /// Unlabeled frame, supervised through consistency and depth.
    Real,
    /// Frame whose ground truth may be used as a label.
    Synthetic,
}

impl SampleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SampleKind::Real => "real",
            SampleKind::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(SampleKind::Real),
            "synthetic" => Some(SampleKind::Synthetic),
            _ => None,
        }
    }
}

/// Error model of the initial estimate and of the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Std-dev of the rotation error angle, degrees (uniform random axis).
    pub rotation_sigma: f64,
    /// Std-dev of the relative distance error along the viewing ray.
    pub translation_sigma_frac: f64,
    /// Erosion radius of the predicted mask, pixels.
    pub mask_erosion: usize,
    /// Std-dev of additive depth noise, meters.
    pub depth_noise_sigma: f64,
    /// Share of the visible object hidden by the occluder.
    pub occlusion_fraction: f64,
    /// Std-dev of the image-plane error of the projected center, pixels.
    pub center_sigma_px: f64,
    /// Deterministic offset added to the initial `t_z` along the ray, meters.
    pub tz_bias: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::zero()
    }
}

impl NoiseSpec {
    pub const fn zero() -> Self {
        Self {
            rotation_sigma: 0.0,
            translation_sigma_frac: 0.0,
            mask_erosion: 0,
            depth_noise_sigma: 0.0,
            occlusion_fraction: 0.0,
            center_sigma_px: 0.0,
            tz_bias: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg =
            [self.rotation_sigma, self.translation_sigma_frac, self.depth_noise_sigma, self.occlusion_fraction, self.center_sigma_px];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !self.tz_bias.is_finite() {
            return Err(HarnessError::Config(format!("noise parameters must be finite and non-negative: {self:?}")));
        }
        if self.occlusion_fraction >= 1.0 {
            return Err(HarnessError::Config("occlusion fraction must be below 1".into()));
        }
        Ok(())
    }
}

/// Distribution of ground-truth poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSampler {
    pub tz_range: (f64, f64),
    /// Projected centers keep this many pixels from every image border.
    pub border_px: f64,
    /// Uniform rotations when true, identity otherwise.
    pub random_rotation: bool,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self { tz_range: (0.6, 1.2), border_px: 160.0, random_rotation: true }
    }
}

/// Camera shared by all generated scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSpec {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self { intrinsics: Intrinsics::new(1066.778, 1067.487, 312.9869, 241.3109).expect("valid intrinsics"), width: 640, height: 480 }
    }
}

/// Everything `generate_scene` needs besides the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub shape: Shape,
    pub kind: SampleKind,
    pub camera: CameraSpec,
    pub sampler: PoseSampler,
    pub noise: NoiseSpec,
}

/// Fronto-parallel plane hiding every pixel on the far side of an image line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occluder {
    /// Unit normal of the line in the image plane.
    pub direction: Vector2<f64>,
    /// Pixels with `direction . p >= offset` are covered.
    pub offset: f64,
    pub depth: f64,
}

impl Occluder {
    pub fn covers(&self, p: &Vector2<f64>) -> bool {
        self.direction.dot(p) >= self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub seed: u64,
    pub spec: SceneSpec,
    pub model: ModelInfo,
    pub gt_pose: Pose,
    pub initial_pose: Pose,
    pub occluder: Option<Occluder>,
    pub depth: Depth,
    pub gt_mask: Mask,
    pub detection: BoundingBox<f64>,
}

impl SceneSample {
    pub fn intrinsics(&self) -> &Intrinsics {
        &self.spec.camera.intrinsics
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.spec.camera.width, self.spec.camera.height)
    }

    /// The estimator's mask: the visible mask eroded by the configured radius.
    pub fn predicted_mask(&self) -> Mask {
        self.gt_mask.eroded(self.spec.noise.mask_erosion)
    }
}

// independent random streams per aspect of a scene
const STREAM_POSE: u64 = 1;
const STREAM_OCCLUDER: u64 = 2;
const STREAM_DEPTH: u64 = 3;
const STREAM_ESTIMATE: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn uniform_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q)).to_rotation_matrix().into_inner()
}

pub fn sample_gt_pose(sampler: &PoseSampler, camera: &CameraSpec, rng: &mut impl Rng) -> Result<Pose> {
    let (lo, hi) = sampler.tz_range;
    let b = sampler.border_px;
    if !(lo > 0.0 && hi >= lo) || 2.0 * b >= camera.width.min(camera.height) as f64 {
        return Err(HarnessError::Config(format!("invalid pose sampler {sampler:?}")));
    }
    let rotation = if sampler.random_rotation { uniform_rotation(rng) } else { Matrix3::identity() };
    let u = rng.random_range(b..=camera.width as f64 - b);
    let v = rng.random_range(b..=camera.height as f64 - b);
    let tz = rng.random_range(lo..=hi);
    let t = camera.intrinsics.unproject(&Vector2::new(u, v)) * tz;
    Ok(Pose::new(rotation, t)?)
}

/// Nearest depth per pixel of a convex mesh, by splatting densely sampled
/// points of its camera-facing triangles. Empty pixels hold infinity.
pub fn render_mesh_depth(mesh: &TriangleMesh<f64>, pose: &Pose, camera: &CameraSpec) -> Grid<f64> {
    let k = &camera.intrinsics;
    let mut zbuf = Grid::filled(camera.width, camera.height, f64::INFINITY);
    for f in 0..mesh.faces.len() {
        let tri = mesh.triangle(f).map(|v| pose.transform(&v));
        let normal = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
        let centroid = (tri[0] + tri[1] + tri[2]) / 3.0;
        if normal.dot(&centroid) >= 0.0 {
            continue;
        }
        let Some(px) = tri.iter().map(|v| k.project(v)).collect::<Option<Vec<_>>>() else { continue };
        let longest = [(0, 1), (1, 2), (2, 0)].iter().map(|&(a, b)| (px[a] - px[b]).norm()).fold(0.0, f64::max);
        let n = (longest / SPLAT_SPACING_PX).ceil().max(1.0) as usize;
        let (e1, e2) = ((tri[1] - tri[0]) / n as f64, (tri[2] - tri[0]) / n as f64);
        for i in 0..=n {
            for j in 0..=n - i {
                let p = tri[0] + e1 * i as f64 + e2 * j as f64;
                if let Some(q) = k.project(&p) {
                    if let Some((x, y)) = zbuf.pixel_at(&q) {
                        if p.z < zbuf.get(x, y) {
                            zbuf.set(x, y, p.z);
                        }
                    }
                }
            }
        }
    }
    zbuf
}

/// Places the occluder line so that `fraction` of the object pixels fall on
/// the covered side.
pub fn place_occluder(object: &Grid<bool>, fraction: f64, angle: f64, depth: f64) -> Option<Occluder> {
    if fraction <= 0.0 {
        return None;
    }
    let direction = Vector2::new(angle.cos(), angle.sin());
    let mut proj: Vec<f64> = Vec::new();
    for y in 0..object.height() {
        for x in 0..object.width() {
            if object.get(x, y) {
                proj.push(direction.dot(&Vector2::new(x as f64 + 0.5, y as f64 + 0.5)));
            }
        }
    }
    if proj.is_empty() {
        return None;
    }
    proj.sort_by(|a, b| a.total_cmp(b));
    let hidden = ((fraction * proj.len() as f64).round() as usize).min(proj.len());
    let offset = if hidden == 0 { f64::INFINITY } else { proj[proj.len() - hidden] };
    Some(Occluder { direction, offset, depth })
}

/// Composites object, occluder and wall into the sensor depth. Returns the
/// depth (with noise when configured) and the visible-object mask.
pub fn compose_depth(
    object: &Grid<f64>,
    occluder: Option<&Occluder>,
    background: f64,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> (Grid<f64>, Grid<bool>) {
    let (w, h) = (object.width(), object.height());
    let mut depth = Grid::filled(w, h, background);
    let mut visible = Grid::filled(w, h, false);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    for y in 0..h {
        for x in 0..w {
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut d = background;
            let obj = object.get(x, y);
            if obj < d {
                d = obj;
                visible.set(x, y, true);
            }
            if let Some(o) = occluder {
                if o.covers(&p) && o.depth < d {
                    d = o.depth;
                    visible.set(x, y, false);
                }
            }
            if noise_sigma > 0.0 {
                d = (d + noise.sample(rng)).max(1e-3);
            }
            depth.set(x, y, d);
        }
    }
    (depth, visible)
}

/// Tight box around the set pixels of a mask.
pub fn mask_bbox(mask: &Grid<bool>) -> Option<BoundingBox<f64>> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != usize::MAX).then(|| BoundingBox::new(x0 as f64, y0 as f64, (x1 + 1 - x0) as f64, (y1 + 1 - y0) as f64).expect("non-empty box"))
}

/// Noisy estimate of `gt`: rotation perturbed about a random axis, distance
/// scaled along the viewing ray, and the projected center jittered.
pub fn perturb_pose(gt: &Pose, noise: &NoiseSpec, k: &Intrinsics, rng: &mut impl Rng) -> Result<Pose> {
    let axis = Unit::new_normalize(Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)));
    let angle = rng.sample::<f64, _>(StandardNormal) * noise.rotation_sigma.to_radians();
    let rotation = Rotation3::from_axis_angle(&axis, angle).into_inner() * gt.rotation;
    let scale = (1.0 + rng.sample::<f64, _>(StandardNormal) * noise.translation_sigma_frac).clamp(0.5, 1.5);
    let jitter = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * noise.center_sigma_px;
    let tz = gt.translation.z * scale + noise.tz_bias;
    let center = k.project(&gt.translation).ok_or_else(|| HarnessError::Generation("object behind camera".into()))? + jitter;
    Ok(Pose::new(rotation, k.unproject(&center) * tz)?)
}

fn inside_frustum(mesh: &TriangleMesh<f64>, pose: &Pose, camera: &CameraSpec) -> bool {
    mesh.vertices.iter().all(|v| {
        camera
            .intrinsics
            .project(&pose.transform(v))
            .is_some_and(|p| p.x >= 0.0 && p.y >= 0.0 && p.x < camera.width as f64 && p.y < camera.height as f64)
    })
}

/// Renders the sensor view of `shape` at `gt_pose`. Deterministic in `seed`.
pub fn render_scene(
    shape: &Shape,
    gt_pose: &Pose,
    camera: &CameraSpec,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<(Depth, Grid<bool>, Option<Occluder>)> {
    let mesh = shape.mesh();
    if !inside_frustum(&mesh, gt_pose, camera) {
        return Err(HarnessError::Generation("object leaves the camera frustum".into()));
    }
    let object = render_mesh_depth(&mesh, gt_pose, camera);
    let footprint = object.map(|d| d.is_finite());
    let mut occ_rng = stream(seed, STREAM_OCCLUDER);
    let angle = occ_rng.random_range(0.0..std::f64::consts::TAU);
    let occ_depth = 0.75 * (gt_pose.translation.z - shape.bounding_radius());
    let occluder = place_occluder(&footprint, noise.occlusion_fraction, angle, occ_depth);
    let background = gt_pose.translation.z + BACKGROUND_OFFSET;
    let (depth, visible) = compose_depth(&object, occluder.as_ref(), background, noise.depth_noise_sigma, &mut stream(seed, STREAM_DEPTH));
    Ok((sspose::DepthImage(depth), visible, occluder))
}

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SceneSample> {
    spec.noise.validate()?;
    let camera = &spec.camera;
    let gt_pose = sample_gt_pose(&spec.sampler, camera, &mut stream(seed, STREAM_POSE))?;
    let (depth, visible, occluder) = render_scene(&spec.shape, &gt_pose, camera, &spec.noise, seed)?;
    let detection = mask_bbox(&visible).ok_or_else(|| HarnessError::Generation("object fully hidden".into()))?;
    let initial_pose = perturb_pose(&gt_pose, &spec.noise, &camera.intrinsics, &mut stream(seed, STREAM_ESTIMATE))?;
    Ok(SceneSample {
        seed,
        spec: *spec,
        model: spec.shape.model_info(),
        gt_pose,
        initial_pose,
        occluder,
        depth,
        gt_mask: Mask::from_binary(&visible),
        detection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(shape: Shape, noise: NoiseSpec) -> SceneSpec {
        SceneSpec { shape, kind: SampleKind::Real, camera: CameraSpec::default(), sampler: PoseSampler::default(), noise }
    }

    #[test]
    fn sphere_nearest_depth() {
        let camera = CameraSpec::default();
        let k = camera.intrinsics;
        let center = Vector2::new(k.cx, k.cy);
        let pose = Pose::new(Matrix3::identity(), k.unproject(&center)).unwrap();
        let (depth, visible, occ) = render_scene(&Shape::SPHERE, &pose, &camera, &NoiseSpec::zero(), 1).unwrap();
        assert!(occ.is_none());
        let min = depth.0.data().iter().copied().fold(f64::INFINITY, f64::min);
        assert!((min - 0.95).abs() <= 1e-3, "{min}");
        let mm = sspose::image::depth_to_mm(&depth);
        assert_eq!(*mm.data().iter().min().unwrap(), 950);
        // disc of radius f * r / sqrt(z^2 - r^2)
        let rad = k.fx * 0.05 / (1.0f64 - 0.0025).sqrt();
        let area = visible.data().iter().filter(|v| **v).count() as f64;
        let expected = std::f64::consts::PI * rad * rad;
        assert!((area - expected).abs() / expected < 0.02, "{area} vs {expected}");
    }

    #[test]
    fn occluded_area_matches_fraction() {
        for (i, shape) in Shape::catalog().into_iter().enumerate() {
            let base = generate_scene(&spec(shape, NoiseSpec::zero()), 40 + i as u64).unwrap();
            let occl = generate_scene(&spec(shape, NoiseSpec { occlusion_fraction: 0.4, ..NoiseSpec::zero() }), 40 + i as u64).unwrap();
            assert_eq!(base.gt_pose, occl.gt_pose);
            let area = |m: &Mask| m.0.data().iter().filter(|v| **v > 0.5).count() as f64;
            let ratio = area(&occl.gt_mask) / area(&base.gt_mask);
            assert!((ratio - 0.6).abs() <= 0.06, "{ratio}");
            let o = occl.occluder.unwrap();
            assert!(o.depth < occl.gt_pose.translation.z - shape.bounding_radius());
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let s =
            spec(Shape::CUBOID, NoiseSpec { rotation_sigma: 15.0, depth_noise_sigma: 0.002, occlusion_fraction: 0.3, ..NoiseSpec::zero() });
        let a = generate_scene(&s, 9).unwrap();
        let b = generate_scene(&s, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.depth.0.data().iter().zip(b.depth.0.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(generate_scene(&s, 10).unwrap().gt_pose, a.gt_pose);
    }

    #[test]
    fn depth_matches_pose_where_visible() {
        let s = generate_scene(&spec(Shape::CUBOID, NoiseSpec::zero()), 3).unwrap();
        let k = s.intrinsics();
        // every visible pixel lies on the box surface in the object frame
        let inv = s.gt_pose.rotation.transpose();
        for y in 0..480 {
            for x in 0..640 {
                if s.gt_mask.0.get(x, y) > 0.5 {
                    let ray = k.unproject(&Vector2::new(x as f64 + 0.5, y as f64 + 0.5));
                    let p = inv * (ray * s.depth.0.get(x, y) - s.gt_pose.translation);
                    let outside = (p.abs() - Vector3::new(0.06, 0.04, 0.025)).max();
                    // within a pixel footprint of the surface
                    assert!(outside < 0.01, "{outside}");
                }
            }
        }
        let bb = s.detection;
        assert!(bb.w > 10.0 && bb.h > 10.0);
    }

    #[test]
    fn perturbation_statistics() {
        let k = CameraSpec::default().intrinsics;
        let gt = Pose::new(Matrix3::identity(), Vector3::new(0.05, -0.02, 0.9)).unwrap();
        let noise = NoiseSpec { rotation_sigma: 15.0, translation_sigma_frac: 0.1, ..NoiseSpec::zero() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 4000;
        let (mut sa, mut sz) = (0.0, 0.0);
        for _ in 0..n {
            let p = perturb_pose(&gt, &noise, &k, &mut rng).unwrap();
            let a = sspose::geodesic_distance(&p.rotation, &gt.rotation);
            sa += a * a;
            let rel = p.translation.z / gt.translation.z - 1.0;
            sz += rel * rel;
            let (c0, c1) = (k.project(&p.translation).unwrap(), k.project(&gt.translation).unwrap());
            assert!((c0 - c1).norm() < 1e-9);
        }
        assert!(((sa / n as f64).sqrt().to_degrees() - 15.0).abs() < 0.8);
        assert!(((sz / n as f64).sqrt() - 0.1).abs() < 0.005);
        let exact = perturb_pose(&gt, &NoiseSpec::zero(), &k, &mut rng).unwrap();
        assert!((exact.translation - gt.translation).norm() < 1e-12);
        assert_eq!(exact.rotation, gt.rotation);
    }
}
