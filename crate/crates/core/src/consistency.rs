//! Anchor/augmented crop pairs with a known relative pose, and the
//! consistency losses tying predictions on the two crops together.

use nalgebra::{Matrix3, Vector2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{rot_z, BoundingBox, CameraIntrinsics, CropSpec, RotatedCrop, TranslationCode};
use crate::image::{Grid, MaskImage};
use crate::scalar::Real;

/// Relative transform between an anchor crop and its augmented variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugTransform<T: Real> {
    /// Rescaling of the crop side.
    pub delta_s: T,
    /// Shift of the crop center, in source-image pixels.
    pub delta_p: Vector2<T>,
    /// In-plane rotation of the crop content, radians.
    pub delta_rz: T,
}

impl<T: Real> AugTransform<T> {
    pub fn new(delta_s: T, delta_p: Vector2<T>, delta_rz: T) -> Result<Self> {
        if !(delta_s > T::zero()) {
            return Err(Error::Geometry("delta_s must be positive".into()));
        }
        Ok(Self { delta_s, delta_p, delta_rz })
    }

    pub fn identity() -> Self {
        Self { delta_s: T::one(), delta_p: Vector2::zeros(), delta_rz: T::zero() }
    }

    /// Applies `self`, then `next`. The offset of `next` is measured along the
    /// axes of the crop produced by `self`, in source pixels.
    pub fn then(&self, next: &Self) -> Self {
        let back = rotation2(-self.delta_rz);
        Self { delta_s: self.delta_s * next.delta_s, delta_p: self.delta_p + back * next.delta_p, delta_rz: self.delta_rz + next.delta_rz }
    }
}

pub fn rotation2<T: Real>(angle: T) -> nalgebra::Matrix2<T> {
    let (s, c) = angle.sin_cos();
    nalgebra::Matrix2::new(c, -s, s, c)
}

/// Sampling ranges for the anchor enlargement and the augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugRanges {
    pub f_anc: (f64, f64),
    pub delta_s: (f64, f64),
    /// Maximum center shift per axis, as a fraction of the anchor scale.
    pub offset_frac: f64,
    /// Maximum in-plane rotation magnitude, radians.
    pub max_roll: f64,
}

impl Default for AugRanges {
    fn default() -> Self {
        Self { f_anc: (1.2, 1.6), delta_s: (0.8, 1.25), offset_frac: 0.1, max_roll: 30f64.to_radians() }
    }
}

impl AugRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = self.f_anc.0 > 0.0
            && self.f_anc.0 <= self.f_anc.1
            && self.delta_s.0 > 0.0
            && self.delta_s.0 <= self.delta_s.1
            && self.offset_frac >= 0.0
            && self.max_roll >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation ranges {self:?}")))
        }
    }

    pub fn sample_f_anc(&self, rng: &mut impl Rng) -> f64 {
        uniform(rng, self.f_anc)
    }

    pub fn sample_delta<T: Real>(&self, rng: &mut impl Rng, anchor_scale: T) -> AugTransform<T> {
        let s = anchor_scale.as_f64() * self.offset_frac;
        let delta_s = uniform(rng, self.delta_s);
        let dx = uniform(rng, (-s, s));
        let dy = uniform(rng, (-s, s));
        let rz = uniform(rng, (-self.max_roll, self.max_roll));
        AugTransform { delta_s: T::lit(delta_s), delta_p: Vector2::new(T::lit(dx), T::lit(dy)), delta_rz: T::lit(rz) }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Square anchor crop centered on the detection, `f_anc` times its longer side.
pub fn sample_anchor_box<T: Real>(
    detection: &BoundingBox<T>,
    f_anc: T,
    out_size: usize,
    source: CameraIntrinsics<T>,
) -> Result<CropSpec<T>> {
    if !(f_anc > T::zero()) {
        return Err(Error::Geometry("f_anc must be positive".into()));
    }
    CropSpec::new(detection.center(), f_anc * detection.side(), out_size, source)
}

/// The augmented crop and the homogeneous map from anchor-crop pixels to
/// augmented-crop pixels.
pub fn apply_aug_transform<T: Real>(anchor: &CropSpec<T>, delta: &AugTransform<T>) -> Result<(RotatedCrop<T>, Matrix3<T>)> {
    let crop = CropSpec::new(anchor.center + delta.delta_p, anchor.scale * delta.delta_s, anchor.out_size, anchor.source)?;
    let half = anchor.size() * T::lit(0.5);
    let r = anchor.rescale();
    let lin = rotation2(delta.delta_rz) / delta.delta_s;
    let shift = -(lin * (Vector2::new(half, half) + delta.delta_p * r)) + Vector2::new(half, half);
    let mut warp = Matrix3::identity();
    warp.fixed_view_mut::<2, 2>(0, 0).copy_from(&lin);
    warp[(0, 2)] = shift.x;
    warp[(1, 2)] = shift.y;
    Ok((RotatedCrop { crop, roll: delta.delta_rz }, warp))
}

/// Predictions for one crop.
#[derive(Debug, Clone, PartialEq)]
pub struct PosePrediction<T: Real> {
    pub code: TranslationCode<T>,
    pub rotation: Matrix3<T>,
    pub mask: MaskImage<T>,
}

/// Translation code expected on the augmented crop.
pub fn derive_aug_code<T: Real>(anchor: &TranslationCode<T>, delta: &AugTransform<T>, anchor_crop: &CropSpec<T>) -> TranslationCode<T> {
    TranslationCode {
        delta_xy: rotation2(delta.delta_rz) * (anchor.delta_xy - delta.delta_p / anchor_crop.scale) / delta.delta_s,
        delta_z: delta.delta_s * anchor.delta_z,
    }
}

/// Rotation expected on the augmented crop (crop-frame rotations).
pub fn derive_aug_rotation<T: Real>(anchor: &Matrix3<T>, delta: &AugTransform<T>) -> Matrix3<T> {
    rot_z(delta.delta_rz) * anchor
}

/// Full set of augmented-crop targets, including the anchor mask resampled
/// onto the augmented grid.
pub fn derive_aug_pose<T: Real>(
    anchor_pred: &PosePrediction<T>,
    delta: &AugTransform<T>,
    anchor_crop: &CropSpec<T>,
) -> Result<PosePrediction<T>> {
    let (mask, _) = warp_mask_to_aug(&anchor_pred.mask, delta, anchor_crop)?;
    Ok(PosePrediction {
        code: derive_aug_code(&anchor_pred.code, delta, anchor_crop),
        rotation: derive_aug_rotation(&anchor_pred.rotation, delta),
        mask,
    })
}

/// L1 distances of the augmented code to its target: `(l_z, l_xy)`.
pub fn translation_consistency_loss<T: Real>(
    aug: &TranslationCode<T>,
    anchor: &TranslationCode<T>,
    delta: &AugTransform<T>,
    anchor_crop: &CropSpec<T>,
) -> (T, T) {
    let target = derive_aug_code(anchor, delta, anchor_crop);
    let d = aug.delta_xy - target.delta_xy;
    ((aug.delta_z - target.delta_z).abs(), d.x.abs() + d.y.abs())
}

/// Samples the anchor mask on the augmented crop's pixel grid. Returns the
/// sampled mask and the per-pixel validity (sample location inside the
/// anchor grid). Invalid pixels hold zero.
pub fn warp_mask_to_aug<T: Real>(
    anchor_mask: &MaskImage<T>,
    delta: &AugTransform<T>,
    anchor_crop: &CropSpec<T>,
) -> Result<(MaskImage<T>, Grid<bool>)> {
    let (_, warp) = apply_aug_transform(anchor_crop, delta)?;
    let inv = warp.try_inverse().ok_or_else(|| Error::Geometry("augmentation warp not invertible".into()))?;
    let g = &anchor_mask.0;
    let (w, h) = (g.width(), g.height());
    let half = T::lit(0.5);
    let mut out = Grid::filled(w, h, T::zero());
    let mut valid = Grid::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let q = Vector2::new(T::from_usize_lossy(x) + half, T::from_usize_lossy(y) + half);
            let p = (inv * q.push(T::one())).xy();
            if g.contains(&p) {
                out.set(x, y, g.bilinear(&p));
                valid.set(x, y, true);
            }
        }
    }
    Ok((MaskImage(out), valid))
}

/// Mean L1 between the warped anchor mask and the augmented mask over valid pixels.
pub fn mask_consistency_loss<T: Real>(
    anchor_mask: &MaskImage<T>,
    aug_mask: &MaskImage<T>,
    delta: &AugTransform<T>,
    anchor_crop: &CropSpec<T>,
) -> Result<T> {
    let (a, b) = (&anchor_mask.0, &aug_mask.0);
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Geometry("anchor and augmented masks differ in size".into()));
    }
    let (warped, valid) = warp_mask_to_aug(anchor_mask, delta, anchor_crop)?;
    let mut sum = T::zero();
    let mut n = 0usize;
    for ((m, p), v) in warped.0.data().iter().zip(b.data()).zip(valid.data()) {
        if *v {
            sum += (*m - *p).abs();
            n += 1;
        }
    }
    Ok(if n == 0 { T::zero() } else { sum / T::from_usize_lossy(n) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub xy: f64,
    pub z: f64,
    pub r: f64,
    pub m: f64,
}

impl LossWeights {
    /// Weights of the self-supervised consistency terms.
    pub const SELF_DEFAULT: Self = Self { xy: 10.0, z: 10.0, r: 0.1, m: 10.0 };
    /// Weights of the synthetic supervised terms.
    pub const SYN_DEFAULT: Self = Self { xy: 10.0, z: 1.0, r: 1.0, m: 10.0 };

    pub fn validate(&self) -> Result<()> {
        if [self.xy, self.z, self.r, self.m].iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be non-negative: {self:?}")))
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::SELF_DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyLosses<T: Real> {
    pub l_xy: T,
    pub l_z: T,
    pub l_r: T,
    pub l_m: T,
    pub weighted_total: T,
}

pub fn aggregate_self_losses<T: Real>(l_xy: T, l_z: T, l_r: T, l_m: T, weights: &LossWeights) -> ConsistencyLosses<T> {
    let total = T::lit(weights.xy) * l_xy + T::lit(weights.z) * l_z + T::lit(weights.r) * l_r + T::lit(weights.m) * l_m;
    ConsistencyLosses { l_xy, l_z, l_r, l_m, weighted_total: total }
}
