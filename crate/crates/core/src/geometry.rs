//! Pinhole camera and object-centric crop geometry.
//!
//! A crop is a square window of the source image, rescaled to `S x S`
//! pixels. Every crop carries a virtual camera: the source camera whose
//! image plane has been warped by the crop's similarity transform. The
//! translation code `(delta_xy, delta_z)` is defined relative to that
//! virtual camera, which makes it invariant to the crop's zoom.
//!
//! Pixel `(i, j)` has its center at continuous coordinate `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Points whose camera-frame depth falls below this are not projected.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T) -> Result<Self> {
        if !(fx > T::zero() && fy > T::zero()) {
            return Err(Error::Geometry(format!("focal lengths must be positive, got fx={fx:?} fy={fy:?}")));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// The 3x3 calibration matrix.
    pub fn matrix(&self) -> Matrix3<T> {
        let (o, l) = (T::zero(), T::one());
        Matrix3::new(self.fx, o, self.cx, o, self.fy, self.cy, o, o, l)
    }

    /// Perspective projection of a camera-frame point. Returns `None` when
    /// the point lies (numerically) on or behind the camera plane.
    pub fn project(&self, p: &Vector3<T>) -> Option<Vector2<T>> {
        if p.z <= T::lit(MIN_PROJECTION_DEPTH) {
            return None;
        }
        Some(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Viewing ray through a pixel, scaled so that its z component is one.
    pub fn unproject(&self, pixel: &Vector2<T>) -> Vector3<T> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, T::one())
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
        }
    }
}

/// Returns true when `m` is a proper rotation within `tol`.
pub fn is_rotation<T: Real>(m: &Matrix3<T>, tol: T) -> bool {
    let err = (m.transpose() * m - Matrix3::identity()).abs().max();
    err <= tol && (m.determinant() - T::one()).abs() <= tol
}

/// Closest rotation to `m` in the Frobenius sense (polar decomposition).
pub fn orthonormalize<T: Real>(m: &Matrix3<T>) -> Result<Matrix3<T>> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Geometry("SVD failed during orthonormalization".into())),
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < T::zero() {
        d[(2, 2)] = -T::one();
    }
    let r = u * d * v_t;
    if !r.iter().all(|x| x.is_finite()) {
        return Err(Error::Geometry("non-finite rotation".into()));
    }
    Ok(r)
}

/// Rotation by `angle` radians about the camera z axis.
pub fn rot_z<T: Real>(angle: T) -> Matrix3<T> {
    let (s, c) = angle.sin_cos();
    let (o, l) = (T::zero(), T::one());
    Matrix3::new(c, -s, o, s, c, o, o, o, l)
}

/// Rigid object pose in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6D<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Pose6D<T> {
    /// Builds a pose, projecting a slightly non-orthonormal rotation back
    /// onto SO(3).
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        let rotation = if is_rotation(&rotation, T::lit(ROTATION_TOLERANCE)) { rotation } else { orthonormalize(&rotation)? };
        Self::check_translation(&translation)?;
        Ok(Self { rotation, translation })
    }

    /// Like [`Pose6D::new`] but rejects rotations outside tolerance.
    pub fn new_strict(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        if !is_rotation(&rotation, T::lit(ROTATION_TOLERANCE)) {
            return Err(Error::Geometry("rotation is not in SO(3)".into()));
        }
        Self::check_translation(&translation)?;
        Ok(Self { rotation, translation })
    }

    fn check_translation(t: &Vector3<T>) -> Result<()> {
        if !(t.z > T::zero()) || !t.iter().all(|x| x.is_finite()) {
            return Err(Error::Geometry(format!("translation z must be positive, got {:?}", t.z)));
        }
        Ok(())
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }
}

/// Axis-aligned detection box given by its center and extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T: Real> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Real> BoundingBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Result<Self> {
        if !(w > T::zero() && h > T::zero()) {
            return Err(Error::Geometry("bounding box extents must be positive".into()));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn center(&self) -> Vector2<T> {
        Vector2::new(self.x, self.y)
    }

    /// Side of the square box enclosing this one.
    pub fn side(&self) -> T {
        self.w.max(self.h)
    }
}

/// Square crop of the source image rescaled to `out_size x out_size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSpec<T: Real> {
    pub center: Vector2<T>,
    pub scale: T,
    pub out_size: usize,
    pub source: CameraIntrinsics<T>,
}

impl<T: Real> CropSpec<T> {
    pub fn new(center: Vector2<T>, scale: T, out_size: usize, source: CameraIntrinsics<T>) -> Result<Self> {
        if !(scale > T::zero()) || out_size == 0 {
            return Err(Error::Geometry(format!("crop scale and size must be positive, got scale={scale:?} size={out_size}")));
        }
        Ok(Self { center, scale, out_size, source })
    }

    /// Square crop around a box; rectangular boxes use their longer side.
    pub fn from_bbox(bbox: &BoundingBox<T>, out_size: usize, source: CameraIntrinsics<T>) -> Result<Self> {
        Self::new(bbox.center(), bbox.side(), out_size, source)
    }

    /// `r = S / scale`.
    pub fn rescale(&self) -> T {
        T::from_usize_lossy(self.out_size) / self.scale
    }

    pub fn size(&self) -> T {
        T::from_usize_lossy(self.out_size)
    }

    /// Source pixel to crop pixel: `r * (p - center) + S / 2`.
    pub fn warp(&self, p: &Vector2<T>) -> Vector2<T> {
        let half = self.size() * T::lit(0.5);
        (p - self.center) * self.rescale() + Vector2::new(half, half)
    }

    pub fn unwarp(&self, q: &Vector2<T>) -> Vector2<T> {
        let half = self.size() * T::lit(0.5);
        (q - Vector2::new(half, half)) / self.rescale() + self.center
    }
}

/// Intrinsics of the camera that directly images the crop:
/// `f' = r f` and `c' = r (c - center + scale / 2)`.
pub fn virtual_intrinsics<T: Real>(crop: &CropSpec<T>) -> CameraIntrinsics<T> {
    let r = crop.rescale();
    let half = crop.scale * T::lit(0.5);
    let k = &crop.source;
    CameraIntrinsics { fx: r * k.fx, fy: r * k.fy, cx: r * (k.cx - crop.center.x + half), cy: r * (k.cy - crop.center.y + half) }
}

/// Crop whose content is additionally rotated in-plane by `roll` radians
/// about the crop center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedCrop<T: Real> {
    pub crop: CropSpec<T>,
    pub roll: T,
}

/// Common interface of axis-aligned and rolled crops.
pub trait CropFrame<T: Real> {
    fn base(&self) -> &CropSpec<T>;

    /// In-plane rotation applied to the crop content.
    fn roll(&self) -> T {
        T::zero()
    }

    fn rescale(&self) -> T {
        self.base().rescale()
    }

    fn size(&self) -> T {
        self.base().size()
    }

    /// Affine map from source pixels to crop pixels as a homogeneous 3x3 matrix.
    fn warp_matrix(&self) -> Matrix3<T> {
        let c = self.base();
        let r = c.rescale();
        let half = c.size() * T::lit(0.5);
        let rot = rot_z(self.roll());
        let mut a = rot * r;
        a[(2, 2)] = T::one();
        let shift = rot.fixed_view::<2, 2>(0, 0) * (-c.center * r);
        a[(0, 2)] = shift.x + half;
        a[(1, 2)] = shift.y + half;
        a
    }

    fn warp(&self, p: &Vector2<T>) -> Vector2<T> {
        (self.warp_matrix() * p.push(T::one())).xy()
    }

    /// Projection matrix of the virtual camera that images the crop.
    fn camera_matrix(&self) -> Matrix3<T> {
        self.warp_matrix() * self.base().source.matrix()
    }

    /// Rotation from the source camera frame to the crop's virtual frame:
    /// the optical axis is turned onto the ray through the crop center and
    /// the camera is then rolled with the crop.
    fn frame_rotation(&self) -> Matrix3<T> {
        let c = self.base();
        let ray = c.source.unproject(&c.center);
        let align = Rotation3::rotation_between(&Vector3::z(), &ray).map(|r| r.into_inner()).unwrap_or_else(Matrix3::identity);
        rot_z(self.roll()) * align.transpose()
    }
}

impl<T: Real> CropFrame<T> for CropSpec<T> {
    fn base(&self) -> &CropSpec<T> {
        self
    }
}

impl<T: Real> CropFrame<T> for RotatedCrop<T> {
    fn base(&self) -> &CropSpec<T> {
        &self.crop
    }

    fn roll(&self) -> T {
        self.roll
    }
}

/// Crop-relative translation code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationCode<T: Real> {
    /// Offset of the projected object center from the crop center, in units of `S`.
    pub delta_xy: Vector2<T>,
    /// Scale-invariant distance, `t_z / r`.
    pub delta_z: T,
}

impl<T: Real> TranslationCode<T> {
    /// True when the encoded center projects inside the crop.
    pub fn inside_crop(&self) -> bool {
        let h = T::lit(0.5);
        self.delta_xy.x.abs() <= h && self.delta_xy.y.abs() <= h
    }
}

/// `t = r * delta_z * K'^-1 [o_x, o_y, 1]` with `o = S (delta_xy + 0.5)`.
pub fn recover_translation<T: Real, C: CropFrame<T>>(code: &TranslationCode<T>, crop: &C) -> Result<Vector3<T>> {
    if !(code.delta_z > T::zero()) {
        return Err(Error::Geometry("delta_z must be positive".into()));
    }
    let k_inv = crop.camera_matrix().try_inverse().ok_or_else(|| Error::Geometry("virtual intrinsics not invertible".into()))?;
    let s = crop.size();
    let half = Vector2::new(T::lit(0.5), T::lit(0.5));
    let o = (code.delta_xy + half) * s;
    let ray = k_inv * o.push(T::one());
    Ok(ray * (crop.rescale() * code.delta_z))
}

/// Inverse of [`recover_translation`].
pub fn encode_translation<T: Real, C: CropFrame<T>>(t: &Vector3<T>, crop: &C) -> Result<TranslationCode<T>> {
    if !(t.z > T::zero()) {
        return Err(Error::Geometry(format!("t_z must be positive, got {:?}", t.z)));
    }
    let p = crop.camera_matrix() * t;
    let o = Vector2::new(p.x / p.z, p.y / p.z);
    let half = Vector2::new(T::lit(0.5), T::lit(0.5));
    Ok(TranslationCode { delta_xy: o / crop.size() - half, delta_z: t.z / crop.rescale() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint<T: Real> {
    pub pixel: Vector2<T>,
    pub depth: T,
}

/// Projects model points under `pose`; entries are `None` for points that
/// land on or behind the camera plane.
pub fn project_points<T: Real>(points: &[Vector3<T>], pose: &Pose6D<T>, k: &CameraIntrinsics<T>) -> Vec<Option<ProjectedPoint<T>>> {
    points
        .iter()
        .map(|p| {
            let pc = pose.transform(p);
            k.project(&pc).map(|pixel| ProjectedPoint { pixel, depth: pc.z })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(1066.778, 1067.487, 312.9869, 241.3109).unwrap()
    }

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Rotation3::new(axis * 2.0).into_inner()
    }

    #[test]
    fn identity_crop_keeps_focal_and_centers_principal_point() {
        let k = CameraIntrinsics::new(500.0, 500.0, 128.0, 128.0).unwrap();
        let crop = CropSpec::new(Vector2::new(128.0, 128.0), 256.0, 256, k).unwrap();
        let kv = virtual_intrinsics(&crop);
        assert_eq!(kv.fx, 500.0);
        assert_eq!((kv.cx, kv.cy), (128.0, 128.0));
    }

    #[test]
    fn half_scale_crop_doubles_focal_lengths() {
        let crop = CropSpec::new(Vector2::new(300.0, 200.0), 128.0, 256, k()).unwrap();
        assert_eq!(crop.rescale(), 2.0);
        let kv = virtual_intrinsics(&crop);
        assert_eq!(kv.fx, 2.0 * k().fx);
        assert_eq!(kv.fy, 2.0 * k().fy);
    }

    #[test]
    fn rectangular_box_uses_longer_side() {
        let b = BoundingBox::new(10.0, 20.0, 100.0, 60.0).unwrap();
        let crop = CropSpec::from_bbox(&b, 256, k()).unwrap();
        assert_eq!(crop.scale, 100.0);
    }

    #[test]
    fn virtual_intrinsics_commute_with_warp() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let crop = CropSpec::new(
                Vector2::new(rng.random_range(50.0..600.0), rng.random_range(50.0..400.0)),
                rng.random_range(40.0..300.0),
                256,
                k(),
            )
            .unwrap();
            let p = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.3..2.0));
            let warped = crop.warp(&k().project(&p).unwrap());
            let direct = virtual_intrinsics(&crop).project(&p).unwrap();
            assert!((warped - direct).norm() < 1e-9);
            // the general camera matrix agrees with the diagonal form
            let viaw = crop.camera_matrix() * p;
            assert!((viaw.xy() / viaw.z - direct).norm() < 1e-9);
        }
    }

    #[test]
    fn principal_ray_decodes_to_optical_axis() {
        let kk = CameraIntrinsics::new(600.0, 600.0, 128.0, 128.0).unwrap();
        let crop = CropSpec::new(Vector2::new(128.0, 128.0), 128.0, 256, kk).unwrap();
        let code = TranslationCode { delta_xy: Vector2::zeros(), delta_z: 1.0 };
        let t = recover_translation(&code, &crop).unwrap();
        assert_eq!(t, Vector3::new(0.0, 0.0, 2.0));
        let back = encode_translation(&Vector3::new(0.0, 0.0, 2.0), &crop).unwrap();
        assert_eq!(back.delta_xy, Vector2::zeros());
        assert_eq!(back.delta_z, 1.0);
    }

    #[test]
    fn encoding_matches_projection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let crop = CropSpec::new(
                Vector2::new(rng.random_range(50.0..600.0), rng.random_range(50.0..400.0)),
                rng.random_range(40.0..300.0),
                256,
                k(),
            )
            .unwrap();
            let t = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.3..2.0));
            let code = encode_translation(&t, &crop).unwrap();
            // independent route: project with source K, warp to crop pixels
            let px = Vector2::new(k().fx * t.x / t.z + k().cx, k().fy * t.y / t.z + k().cy);
            let q = (px - crop.center) * (256.0 / crop.scale) + Vector2::new(128.0, 128.0);
            let expect = q / 256.0 - Vector2::new(0.5, 0.5);
            assert!((code.delta_xy - expect).norm() < 1e-9);
            assert!((code.delta_z - t.z * crop.scale / 256.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rolled_crop_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let crop = RotatedCrop {
                crop: CropSpec::new(Vector2::new(rng.random_range(50.0..600.0), 240.0), 150.0, 128, k()).unwrap(),
                roll: rng.random_range(-1.0..1.0),
            };
            let t = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.3..2.0));
            let code = encode_translation(&t, &crop).unwrap();
            let back = recover_translation(&code, &crop).unwrap();
            assert!((back - t).norm() < 1e-9);
        }
    }

    #[test]
    fn nonpositive_depth_is_rejected() {
        let crop = CropSpec::new(Vector2::new(300.0, 200.0), 128.0, 256, k()).unwrap();
        assert!(encode_translation(&Vector3::new(0.0, 0.0, 0.0), &crop).is_err());
        let code = TranslationCode { delta_xy: Vector2::zeros(), delta_z: -1.0 };
        assert!(recover_translation(&code, &crop).is_err());
    }

    #[test]
    fn projection_of_origin_hits_principal_point() {
        let pose = Pose6D::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let out = project_points(&[Vector3::zeros()], &pose, &k());
        let p = out[0].unwrap();
        assert_eq!(p.pixel, Vector2::new(k().cx, k().cy));
        assert_eq!(p.depth, 1.0);
    }

    #[test]
    fn projection_depth_is_additive_along_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<_> =
            (0..100).map(|_| Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1))).collect();
        let r = random_rotation(&mut rng);
        let a = Pose6D::new(r, Vector3::new(0.01, 0.02, 0.7)).unwrap();
        let b = Pose6D::new(r, Vector3::new(0.01, 0.02, 0.95)).unwrap();
        for (pa, pb) in project_points(&pts, &a, &k()).iter().zip(project_points(&pts, &b, &k())) {
            assert!((pb.unwrap().depth - pa.unwrap().depth - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = Pose6D::new(random_rotation(&mut rng), Vector3::new(0.05, -0.02, 0.8)).unwrap();
        let pts: Vec<_> = (0..10_000)
            .map(|_| Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)))
            .collect();
        let kk = k();
        let km = kk.matrix();
        for (p, out) in pts.iter().zip(project_points(&pts, &pose, &kk)) {
            let h = km * (pose.rotation * p + pose.translation);
            let out = out.unwrap();
            assert!((out.pixel.x - h.x / h.z).abs() < 1e-9);
            assert!((out.pixel.y - h.y / h.z).abs() < 1e-9);
            assert!((out.depth - h.z).abs() < 1e-12);
        }
    }

    #[test]
    fn points_behind_camera_are_invalid() {
        let pose = Pose6D::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 0.5)).unwrap();
        let out = project_points(&[Vector3::new(0.0, 0.0, -0.6), Vector3::new(0.0, 0.0, -0.5)], &pose, &k());
        assert!(out.iter().all(Option::is_none));
    }

    #[test]
    fn pose_construction_repairs_or_rejects_drift() {
        let mut r = rot_z(0.3);
        r[(0, 1)] += 1e-6;
        let t = Vector3::new(0.0, 0.0, 1.0);
        assert!(Pose6D::new_strict(r, t).is_err());
        let p = Pose6D::new(r, t).unwrap();
        assert!(is_rotation(&p.rotation, 1e-12));
        assert!(Pose6D::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn f32_instantiation() {
        let k = CameraIntrinsics::<f32>::new(500.0, 500.0, 320.0, 240.0).unwrap();
        let crop = CropSpec::new(Vector2::new(300.0f32, 250.0), 100.0, 128, k).unwrap();
        let t = Vector3::new(0.02f32, -0.01, 0.9);
        let back = recover_translation(&encode_translation(&t, &crop).unwrap(), &crop).unwrap();
        assert!((back - t).norm() < 1e-5);
    }
}
