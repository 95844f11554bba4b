//! Per-frame stand-in for the network outputs: free translation codes and
//! rotation queries on an anchor crop and a few augmented crops, scored by
//! the combined synthetic, consistency and depth pseudo-label objective.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sspose::consistency::rotation2;
use sspose::depth::truncated_l1;
use sspose::image::{nearest, resample};
use sspose::so3::{argmax, geodesic_distance, logits, rotation_nll_with_grad, FeatureMap, TRAINING_TEMPERATURE};
use sspose::{
    apply_aug_transform, derive_aug_code, encode_translation, generate_pseudo_label, mask_consistency_loss, recover_translation,
    sample_anchor_box, virtual_intrinsics, warp_mask_to_aug, AugRanges, AugTransform, Codebook, Crop, CropFrame, Depth, Error as CoreError,
    LossWeights, ModelInfo, Pose, PseudoLabel, PseudoLabelParams, RotatedCrop, TranslationCode,
};

use crate::error::{HarnessError, Result};
use crate::scene::{SampleKind, SceneSample};

/// Parameters per view: `delta_x, delta_y, ln delta_z` and a 9-d query.
pub const VIEW_PARAMS: usize = 12;
/// Codebook entries closer than this to the initial rotation are dropped
/// from its hypothesis set, degrees.
pub const MIN_HYPOTHESIS_SEPARATION_DEG: f64 = 5.0;
/// Below this magnitude an L1 residual contributes no gradient.
const L1_DEAD_ZONE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub crop_size: usize,
    /// Augmented views per frame.
    pub n_views: usize,
    /// Codebook neighbours of the initial rotation kept as hypotheses.
    pub n_hypotheses: usize,
    /// Scale between query parameters and logits numerator.
    pub query_gain: f64,
    pub temperature: f64,
    pub aug: AugRanges,
    pub pseudo: PseudoLabelParams,
    pub self_weights: LossWeights,
    pub syn_weights: LossWeights,
    pub lambda_syn: f64,
    pub lambda_self: f64,
    pub lambda_pseudo: f64,
    pub aug_seed: u64,
    /// Seed of the model points used for pseudo-labels.
    pub points_seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            crop_size: 128,
            n_views: 3,
            n_hypotheses: 256,
            query_gain: 1000.0,
            temperature: TRAINING_TEMPERATURE,
            aug: AugRanges::default(),
            pseudo: PseudoLabelParams::default(),
            self_weights: LossWeights::SELF_DEFAULT,
            syn_weights: LossWeights::SYN_DEFAULT,
            lambda_syn: 1.0,
            lambda_self: 0.1,
            lambda_pseudo: 10.0,
            aug_seed: 0,
            points_seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        self.aug.validate()?;
        self.pseudo.validate()?;
        self.self_weights.validate()?;
        self.syn_weights.validate()?;
        let lambdas = [self.lambda_syn, self.lambda_self, self.lambda_pseudo];
        if self.crop_size < 8 || self.n_hypotheses == 0 || !(self.query_gain > 0.0) || !(self.temperature > 0.0) {
            return Err(HarnessError::Config("crop size, hypothesis count, query gain and temperature must be positive".into()));
        }
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(HarnessError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// One crop of a frame with its rotation hypotheses.
#[derive(Debug, Clone)]
pub struct View {
    pub delta: AugTransform<f64>,
    pub crop: RotatedCrop<f64>,
    /// Hypotheses in this crop's frame, with flat embeddings.
    pub hypotheses: Codebook,
    /// Linear part of the anchor-to-view code map.
    xy_map: Matrix2<f64>,
    xy_offset: Vector2<f64>,
}

impl View {
    fn new(anchor: &Crop, delta: AugTransform<f64>, hypotheses: Codebook) -> Result<Self> {
        let (crop, _) = apply_aug_transform(anchor, &delta)?;
        let xy_map = rotation2(delta.delta_rz) / delta.delta_s;
        let xy_offset = xy_map * delta.delta_p / anchor.scale;
        Ok(Self { delta, crop, hypotheses, xy_map, xy_offset })
    }
}

/// Ground-truth targets of a synthetic-labeled view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewLabel {
    pub code: TranslationCode<f64>,
    pub rotation_index: usize,
}

/// Frame data the objective needs, fixed during optimization.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub scene_id: usize,
    pub kind: SampleKind,
    pub obj_id: u64,
    pub model: ModelInfo,
    pub gt_pose: Pose,
    pub initial_pose: Pose,
    pub anchor: Crop,
    /// Views; index 0 is the anchor crop itself.
    pub views: Vec<View>,
    pub pseudo: Option<PseudoLabel<f64>>,
    pub labels: Option<Vec<ViewLabel>>,
    /// Frozen mask consistency term of each augmented view.
    pub mask_terms: Vec<f64>,
    /// Frozen mask error against the ground-truth mask.
    pub syn_mask_term: f64,
}

/// Free variables of one frame, `VIEW_PARAMS` per view.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableState {
    pub params: Vec<f64>,
}

impl TrainableState {
    pub fn view(&self, j: usize) -> &[f64] {
        &self.params[j * VIEW_PARAMS..(j + 1) * VIEW_PARAMS]
    }

    pub fn code(&self, j: usize) -> TranslationCode<f64> {
        let v = self.view(j);
        TranslationCode { delta_xy: Vector2::new(v[0], v[1]), delta_z: v[2].exp() }
    }

    /// Unit-scale query parameters; logits use them times the query gain.
    pub fn query(&self, j: usize) -> &[f64] {
        &self.view(j)[3..]
    }

    fn set_view(&mut self, j: usize, code: &TranslationCode<f64>, query: &[f64]) {
        let v = &mut self.params[j * VIEW_PARAMS..(j + 1) * VIEW_PARAMS];
        v[0] = code.delta_xy.x;
        v[1] = code.delta_xy.y;
        v[2] = code.delta_z.ln();
        v[3..].copy_from_slice(query);
    }
}

/// Loss value with its unweighted components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub self_xy: f64,
    pub self_z: f64,
    pub self_r: f64,
    pub self_m: f64,
    pub pseudo: f64,
    pub syn: f64,
}

fn scaled(q: &[f64], gain: f64) -> Vec<f64> {
    q.iter().map(|v| v * gain).collect()
}

/// Model points for the pseudo-label: area-weighted surface samples plus,
/// for meshes, every vertex. The nearest point of a convex polyhedron is a
/// vertex, which random samples almost never hit.
pub fn pseudo_points(model: &sspose::mesh::SurfaceModel<f64>, cfg: &RefineConfig, obj_id: u64) -> Result<Vec<Vector3<f64>>> {
    let mut points = sspose::mesh::sample_surface_points(model, cfg.pseudo.n_points, cfg.points_seed ^ obj_id)?;
    if let sspose::mesh::SurfaceModel::Mesh(mesh) = model {
        points.extend_from_slice(&mesh.vertices);
    }
    Ok(points)
}

fn crop_inverse(crop: &Crop) -> Result<Matrix3<f64>> {
    crop.warp_matrix().try_inverse().ok_or_else(|| HarnessError::Core(CoreError::Geometry("crop warp not invertible".into())))
}

fn crop_mask(src: &sspose::Grid<f64>, crop: &Crop) -> Result<sspose::Mask> {
    let s = crop.out_size;
    Ok(sspose::MaskImage(resample(src, s, s, &crop_inverse(crop)?, |g, p| g.bilinear(p))))
}

fn augmentation_rng(cfg: &RefineConfig, scene_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.aug_seed);
    rng.set_stream(scene_id as u64);
    rng
}

fn anchor_crop(scene: &SceneSample, cfg: &RefineConfig, rng: &mut ChaCha8Rng) -> Result<Crop> {
    let f_anc = cfg.aug.sample_f_anc(rng);
    Ok(sample_anchor_box(&scene.detection, f_anc, cfg.crop_size, *scene.intrinsics())?)
}

fn crop_pseudo_label(
    scene: &SceneSample,
    initial_pose: &Pose,
    anchor: &Crop,
    pred_mask: &sspose::Mask,
    points: &[Vector3<f64>],
    params: &PseudoLabelParams,
) -> Result<Option<PseudoLabel<f64>>> {
    let s = anchor.out_size;
    let depth = Depth::new(resample(&scene.depth.0, s, s, &crop_inverse(anchor)?, nearest))?;
    match generate_pseudo_label(points, initial_pose, &virtual_intrinsics(anchor), &depth, pred_mask, params) {
        Ok(label) => Ok(Some(label)),
        Err(CoreError::NoObservation(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Depth pseudo-label of `initial_pose`, computed on the same anchor crop
/// the optimizer uses for scene `scene_id`. `None` when no model point
/// passes the gate.
pub fn scene_pseudo_label(
    scene: &SceneSample,
    scene_id: usize,
    initial_pose: &Pose,
    points: &[Vector3<f64>],
    cfg: &RefineConfig,
) -> Result<Option<PseudoLabel<f64>>> {
    let anchor = anchor_crop(scene, cfg, &mut augmentation_rng(cfg, scene_id))?;
    let pred_mask = crop_mask(&scene.predicted_mask().0, &anchor)?;
    crop_pseudo_label(scene, initial_pose, &anchor, &pred_mask, points, &cfg.pseudo)
}

/// Builds anchor and augmented crops, hypotheses, the pseudo-label and
/// (for synthetic frames) ground-truth labels.
pub fn prepare_sample(
    scene: &SceneSample,
    scene_id: usize,
    initial_pose: &Pose,
    codebook: &Codebook,
    points: &[Vector3<f64>],
    cfg: &RefineConfig,
) -> Result<PreparedSample> {
    let mut rng = augmentation_rng(cfg, scene_id);
    let anchor = anchor_crop(scene, cfg, &mut rng)?;

    let frame = anchor.frame_rotation();
    let start = frame * initial_pose.rotation;
    let min_sep = MIN_HYPOTHESIS_SEPARATION_DEG.to_radians();
    let mut rotations = vec![start];
    rotations.extend(
        codebook
            .k_nearest(&start, cfg.n_hypotheses + 8)
            .into_iter()
            .map(|i| *codebook.rotation(i))
            .filter(|r| geodesic_distance(r, &start) >= min_sep)
            .take(cfg.n_hypotheses),
    );
    // hypotheses follow the exact change of crop frame between views
    let hyps = |change: Matrix3<f64>| -> Result<Codebook> {
        Ok(Codebook::from_rotations(rotations.iter().map(|r| change * r).collect())?.embed_with(&FeatureMap::Flat))
    };
    let mut views = vec![View::new(&anchor, AugTransform::identity(), hyps(Matrix3::identity())?)?];
    for _ in 0..cfg.n_views {
        let delta = cfg.aug.sample_delta(&mut rng, anchor.scale);
        let (crop, _) = apply_aug_transform(&anchor, &delta)?;
        views.push(View::new(&anchor, delta, hyps(crop.frame_rotation() * frame.transpose())?)?);
    }

    let pred_mask = crop_mask(&scene.predicted_mask().0, &anchor)?;
    let pseudo = crop_pseudo_label(scene, initial_pose, &anchor, &pred_mask, points, &cfg.pseudo)?;

    let mut mask_terms = vec![0.0];
    for v in &views[1..] {
        let (aug_mask, _) = warp_mask_to_aug(&pred_mask, &v.delta, &anchor)?;
        mask_terms.push(mask_consistency_loss(&pred_mask, &aug_mask, &v.delta, &anchor)?);
    }

    let (labels, syn_mask_term) = if scene.spec.kind == SampleKind::Synthetic {
        let gt = &scene.gt_pose;
        let labels = views
            .iter()
            .map(|v| {
                Ok(ViewLabel {
                    code: encode_translation(&gt.translation, &v.crop)?,
                    rotation_index: v.hypotheses.nearest(&(v.crop.frame_rotation() * gt.rotation)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let gt_mask = crop_mask(&scene.gt_mask.0, &anchor)?.0;
        let diff: f64 = gt_mask.data().iter().zip(pred_mask.0.data()).map(|(a, b)| (a - b).abs()).sum();
        (Some(labels), diff / gt_mask.data().len() as f64)
    } else {
        (None, 0.0)
    };

    Ok(PreparedSample {
        scene_id,
        kind: scene.spec.kind,
        obj_id: scene.spec.shape.obj_id(),
        model: scene.model.clone(),
        gt_pose: scene.gt_pose,
        initial_pose: *initial_pose,
        anchor,
        views,
        pseudo,
        labels,
        mask_terms,
        syn_mask_term,
    })
}

/// Encodes a pose in every view of `prep`. With `derived`, augmented views
/// take the anchor encoding mapped through their transforms instead of
/// their own direct encoding.
pub fn encode_state(prep: &PreparedSample, pose: &Pose, derived: bool) -> Result<TrainableState> {
    let mut state = TrainableState { params: vec![0.0; prep.views.len() * VIEW_PARAMS] };
    let anchor_code = encode_translation(&pose.translation, &prep.anchor)?;
    let anchor_rot = prep.anchor.frame_rotation() * pose.rotation;
    for (j, v) in prep.views.iter().enumerate() {
        let (code, rot) = if j == 0 {
            (anchor_code, anchor_rot)
        } else if derived {
            let change = v.crop.frame_rotation() * prep.anchor.frame_rotation().transpose();
            (derive_aug_code(&anchor_code, &v.delta, &prep.anchor), change * anchor_rot)
        } else {
            (encode_translation(&pose.translation, &v.crop)?, v.crop.frame_rotation() * pose.rotation)
        };
        if !(code.delta_z > 0.0) {
            return Err(HarnessError::Core(CoreError::Geometry("non-positive distance code".into())));
        }
        state.set_view(j, &code, &FeatureMap::Flat.embed(&rot));
    }
    Ok(state)
}

/// Starting point: the initial estimate on the anchor, carried to the
/// augmented views through the crop relation.
pub fn initial_state(prep: &PreparedSample) -> Result<TrainableState> {
    encode_state(prep, &prep.initial_pose, true)
}

fn sgn(x: f64) -> f64 {
    if x.abs() <= L1_DEAD_ZONE {
        0.0
    } else {
        x.signum()
    }
}

fn anchor_argmax(prep: &PreparedSample, state: &TrainableState, cfg: &RefineConfig) -> Result<usize> {
    let l = logits(&scaled(state.query(0), cfg.query_gain), &prep.views[0].hypotheses, cfg.temperature)?;
    argmax(&l).ok_or_else(|| HarnessError::Core(CoreError::Empty("no rotation hypotheses".into())))
}

/// Objective of one frame and, optionally, its gradient with respect to
/// `state.params`.
pub fn total_loss(
    prep: &PreparedSample,
    state: &TrainableState,
    cfg: &RefineConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    let mut grad = vec![0.0; state.params.len()];
    let mut out = LossBreakdown::default();
    let tau = cfg.temperature;
    match &prep.labels {
        None => {
            let w = &cfg.self_weights;
            let n_aug = prep.views.len() - 1;
            let u0 = state.view(0)[2];
            let d0 = state.code(0).delta_xy;
            if n_aug > 0 {
                let k0 = anchor_argmax(prep, state, cfg)?;
                let scale = cfg.lambda_self / n_aug as f64;
                for (j, v) in prep.views.iter().enumerate().skip(1) {
                    let a = state.code(j).delta_xy - (v.xy_map * d0 - v.xy_offset);
                    let uj = state.view(j)[2];
                    let az = uj.exp() - v.delta.delta_s * u0.exp();
                    let (nll, g_q) = rotation_nll_with_grad(&scaled(state.query(j), cfg.query_gain), k0, &v.hypotheses, tau)?;
                    out.self_xy += (a.x.abs() + a.y.abs()) / n_aug as f64;
                    out.self_z += az.abs() / n_aug as f64;
                    out.self_r += nll / n_aug as f64;
                    out.self_m += prep.mask_terms[j] / n_aug as f64;
                    if want_grad {
                        let s = Vector2::new(sgn(a.x), sgn(a.y)) * (scale * w.xy);
                        let g0 = -(v.xy_map.transpose() * s);
                        let base = j * VIEW_PARAMS;
                        grad[base] += s.x;
                        grad[base + 1] += s.y;
                        grad[0] += g0.x;
                        grad[1] += g0.y;
                        let sz = sgn(az) * scale * w.z;
                        grad[base + 2] += sz * uj.exp();
                        grad[2] -= sz * v.delta.delta_s * u0.exp();
                        for (g, d) in grad[base + 3..base + VIEW_PARAMS].iter_mut().zip(g_q) {
                            *g += scale * w.r * cfg.query_gain * d;
                        }
                    }
                }
            }
            let self_total = w.xy * out.self_xy + w.z * out.self_z + w.r * out.self_r + w.m * out.self_m;
            if let Some(label) = &prep.pseudo {
                let r = prep.anchor.rescale();
                let tz = r * u0.exp();
                out.pseudo = truncated_l1(label.t_z_bar, tz, cfg.pseudo.xi);
                let diff = tz - label.t_z_bar;
                if want_grad && diff.abs() < cfg.pseudo.xi {
                    grad[2] += cfg.lambda_pseudo * sgn(diff) * tz;
                }
            }
            out.total = cfg.lambda_self * self_total + cfg.lambda_pseudo * out.pseudo;
        }
        Some(labels) => {
            let w = &cfg.syn_weights;
            let n = prep.views.len() as f64;
            let scale = cfg.lambda_syn / n;
            let mut syn = 0.0;
            for (j, (v, label)) in prep.views.iter().zip(labels).enumerate() {
                let a = state.code(j).delta_xy - label.code.delta_xy;
                let uj = state.view(j)[2];
                let az = uj.exp() - label.code.delta_z;
                let (nll, g_q) = rotation_nll_with_grad(&scaled(state.query(j), cfg.query_gain), label.rotation_index, &v.hypotheses, tau)?;
                syn += w.xy * (a.x.abs() + a.y.abs()) + w.z * az.abs() + w.r * nll + w.m * prep.syn_mask_term;
                if want_grad {
                    let base = j * VIEW_PARAMS;
                    grad[base] += scale * w.xy * sgn(a.x);
                    grad[base + 1] += scale * w.xy * sgn(a.y);
                    grad[base + 2] += scale * w.z * sgn(az) * uj.exp();
                    for (g, d) in grad[base + 3..base + VIEW_PARAMS].iter_mut().zip(g_q) {
                        *g += scale * w.r * cfg.query_gain * d;
                    }
                }
            }
            out.syn = syn / n;
            out.total = cfg.lambda_syn * out.syn;
        }
    }
    Ok((out, want_grad.then_some(grad)))
}

/// Pose read off the anchor view: translation from its code, rotation from
/// the most likely hypothesis.
pub fn decode_pose(prep: &PreparedSample, state: &TrainableState, cfg: &RefineConfig) -> Result<Pose> {
    let t = recover_translation(&state.code(0), &prep.anchor)?;
    let k = anchor_argmax(prep, state, cfg)?;
    let r = prep.anchor.frame_rotation().transpose() * prep.views[0].hypotheses.rotation(k);
    Ok(Pose::new(r, t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, CameraSpec, NoiseSpec, PoseSampler, SceneSpec, Shape};
    use rand::Rng;
    use sspose::build_codebook;
    use sspose::mesh::SurfaceModel;

    fn setup(shape: Shape, noise: NoiseSpec, kind: SampleKind, seed: u64) -> (PreparedSample, RefineConfig) {
        let cfg = RefineConfig { n_hypotheses: 64, ..Default::default() };
        let spec = SceneSpec { shape, kind, camera: CameraSpec::default(), sampler: PoseSampler::default(), noise };
        let scene = generate_scene(&spec, seed).unwrap();
        let cb = build_codebook::<f64>(60, 12).unwrap();
        let pts = pseudo_points(&SurfaceModel::Mesh(shape.mesh()), &cfg, shape.obj_id()).unwrap();
        let prep = prepare_sample(&scene, seed as usize, &scene.initial_pose, &cb, &pts, &cfg).unwrap();
        (prep, cfg)
    }

    #[test]
    fn initial_state_decodes_to_initial_pose() {
        let noise = NoiseSpec { rotation_sigma: 15.0, translation_sigma_frac: 0.1, ..NoiseSpec::zero() };
        let (prep, cfg) = setup(Shape::CUBOID, noise, SampleKind::Real, 4);
        let state = initial_state(&prep).unwrap();
        let pose = decode_pose(&prep, &state, &cfg).unwrap();
        assert!((pose.translation - prep.initial_pose.translation).norm() < 1e-12);
        assert!((pose.rotation - prep.initial_pose.rotation).abs().max() < 1e-12);
        let (loss, _) = total_loss(&prep, &state, &cfg, false).unwrap();
        assert!(loss.self_xy < 1e-12 && loss.self_z < 1e-12 && loss.self_m == 0.0);
    }

    #[test]
    fn zero_weights_give_zero_loss() {
        let noise = NoiseSpec { rotation_sigma: 10.0, translation_sigma_frac: 0.1, ..NoiseSpec::zero() };
        for kind in [SampleKind::Real, SampleKind::Synthetic] {
            let (prep, mut cfg) = setup(Shape::CYLINDER, noise, kind, 5);
            cfg.lambda_self = 0.0;
            cfg.lambda_pseudo = 0.0;
            cfg.lambda_syn = 0.0;
            let (loss, grad) = total_loss(&prep, &initial_state(&prep).unwrap(), &cfg, true).unwrap();
            assert_eq!(loss.total, 0.0);
            assert!(grad.unwrap().iter().all(|g| *g == 0.0));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let noise = NoiseSpec { rotation_sigma: 15.0, translation_sigma_frac: 0.1, occlusion_fraction: 0.2, ..NoiseSpec::zero() };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut worst: f64 = 0.0;
        for (i, kind) in [SampleKind::Real, SampleKind::Synthetic].into_iter().cycle().take(20).enumerate() {
            let shape = Shape::catalog()[i % 3];
            let (prep, cfg) = setup(shape, noise, kind, 100 + i as u64);
            let mut state = initial_state(&prep).unwrap();
            for p in state.params.iter_mut() {
                *p += rng.random_range(-0.05..0.05);
            }
            for j in 0..prep.views.len() {
                for q in &mut state.params[j * VIEW_PARAMS + 3..(j + 1) * VIEW_PARAMS] {
                    *q = rng.random_range(-0.003..0.003);
                }
            }
            let (_, g) = total_loss(&prep, &state, &cfg, true).unwrap();
            let g = g.unwrap();
            let mut num = 0.0;
            let mut den: f64 = 0.0;
            for k in 0..state.params.len() {
                // logits scale with the query gain, so queries need a finer step
                let h = if k % VIEW_PARAMS >= 3 { 1e-5 / cfg.query_gain } else { 1e-5 };
                let mut a = state.clone();
                let mut b = state.clone();
                a.params[k] += h;
                b.params[k] -= h;
                let fd =
                    (total_loss(&prep, &a, &cfg, false).unwrap().0.total - total_loss(&prep, &b, &cfg, false).unwrap().0.total) / (2.0 * h);
                num += (fd - g[k]).powi(2);
                den = den.max(fd.abs()).max(g[k].abs());
            }
            worst = worst.max(num.sqrt() / den);
        }
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn ground_truth_encoding_is_a_fixed_point() {
        let sampler = PoseSampler { random_rotation: false, ..Default::default() };
        let spec =
            SceneSpec { shape: Shape::CUBOID, kind: SampleKind::Real, camera: CameraSpec::default(), sampler, noise: NoiseSpec::zero() };
        let scene = generate_scene(&spec, 8).unwrap();
        let cfg = RefineConfig { n_hypotheses: 64, ..Default::default() };
        let cb = build_codebook::<f64>(60, 12).unwrap();
        let pts = pseudo_points(&SurfaceModel::Mesh(Shape::CUBOID.mesh()), &cfg, 2).unwrap();
        let prep = prepare_sample(&scene, 0, &scene.gt_pose, &cb, &pts, &cfg).unwrap();
        let state = encode_state(&prep, &scene.gt_pose, false).unwrap();
        let (loss, _) = total_loss(&prep, &state, &cfg, false).unwrap();
        assert!(loss.total < 1e-6, "{loss:?}");
    }
}
