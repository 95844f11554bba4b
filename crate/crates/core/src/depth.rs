//! Depth-guided pseudo-labels for the object distance.
//!
//! Model points are projected with the initial pose, gated by the predicted
//! mask, and paired with the observed depth at the same pixels. The offset
//! between the closest observed and the closest rendered depth corrects the
//! initial `t_z`.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{project_points, CameraIntrinsics, Pose6D, ProjectedPoint};
use crate::image::{DepthImage, MaskImage};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetMode {
    /// Closest real depth chosen by the sorted/smoothed gap scan.
    Adaptive,
    /// Plain minimum of the gated real depths.
    PlainMin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabelParams {
    /// Mask confidence threshold.
    pub rho: f64,
    /// Gap threshold of the adaptive selection, meters.
    pub gamma: f64,
    /// Truncation of the pseudo-label loss, meters.
    pub xi: f64,
    /// Moving-average window over the sorted real depths.
    pub window: usize,
    /// Penalty depth assigned to gated-out points; must exceed every real depth.
    pub epsilon: f64,
    /// Number of model surface points.
    pub n_points: usize,
    pub mode: OffsetMode,
}

impl Default for PseudoLabelParams {
    fn default() -> Self {
        Self { rho: 0.9, gamma: 0.001, xi: 0.1, window: 5, epsilon: 1000.0, n_points: 8192, mode: OffsetMode::Adaptive }
    }
}

impl PseudoLabelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.rho)
            && self.gamma >= 0.0
            && self.xi > 0.0
            && self.window >= 1
            && self.epsilon > 0.0
            && self.n_points >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid pseudo-label parameters {self:?}")))
        }
    }
}

/// Projects model points with the initial pose, keeping point identity.
pub fn render_synthetic_depth<T: Real>(points: &[Vector3<T>], pose: &Pose6D<T>, k: &CameraIntrinsics<T>) -> Vec<Option<ProjectedPoint<T>>> {
    project_points(points, pose, k)
}

/// Per-point depth pairs after mask gating. Gated-out entries hold `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedDepthSets<T: Real> {
    pub d_synth: Vec<T>,
    pub d_real: Vec<T>,
    pub valid: Vec<bool>,
    pub epsilon: T,
}

impl<T: Real> GatedDepthSets<T> {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    fn valid_values<'a>(&'a self, xs: &'a [T]) -> impl Iterator<Item = T> + 'a {
        xs.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(x, _)| *x)
    }
}

/// Keeps point `i` when its pixel (nearest lookup) is inside the mask grid,
/// has confidence at least `rho`, and carries a nonzero real depth.
pub fn gate_depths<T: Real>(
    projected: &[Option<ProjectedPoint<T>>],
    real_depth: &DepthImage<T>,
    mask: &MaskImage<T>,
    rho: T,
    epsilon: T,
) -> Result<GatedDepthSets<T>> {
    if !(rho >= T::zero() && rho <= T::one()) {
        return Err(Error::Config("rho must lie in [0, 1]".into()));
    }
    if !(epsilon > real_depth.max_depth()) {
        return Err(Error::Config(format!("penalty depth {epsilon:?} must exceed the largest real depth {:?}", real_depth.max_depth())));
    }
    let (d, m) = (&real_depth.0, &mask.0);
    if d.width() != m.width() || d.height() != m.height() {
        return Err(Error::Config("depth and mask sizes differ".into()));
    }
    let n = projected.len();
    let mut out = GatedDepthSets { d_synth: vec![epsilon; n], d_real: vec![epsilon; n], valid: vec![false; n], epsilon };
    for (i, p) in projected.iter().enumerate() {
        let Some(p) = p else { continue };
        let Some((x, y)) = m.pixel_at(&p.pixel) else { continue };
        let real = d.get(x, y);
        if m.get(x, y) >= rho && real > T::zero() {
            out.d_synth[i] = p.depth;
            out.d_real[i] = real;
            out.valid[i] = true;
        }
    }
    Ok(out)
}

/// Ascending sort followed by a centered moving average. Near the ends the
/// half-width shrinks so the window stays centered, hence the first and
/// last values are kept as they are.
pub fn smoothed_sorted<T: Real>(values: &[T], window: usize) -> Vec<T> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    let (left, right) = ((window.max(1) - 1) / 2, window.max(1) / 2);
    (0..n)
        .map(|k| {
            let reach = k.min(n - 1 - k);
            let lo = k - left.min(reach);
            let hi = k + right.min(reach);
            let sum = sorted[lo..=hi].iter().fold(T::zero(), |a, v| a + *v);
            sum / T::from_usize_lossy(hi - lo + 1)
        })
        .collect()
}

/// Closest real depth robust to isolated near outliers: returns the first
/// smoothed value whose gap to its successor is at most `gamma`, or the
/// plain minimum (index `None`) when no such gap exists.
pub fn adaptive_min_depth<T: Real>(d_real: &[T], valid: &[bool], gamma: T, window: usize) -> Result<(T, Option<usize>)> {
    if window == 0 {
        return Err(Error::Config("moving-average window must be at least 1".into()));
    }
    let vals: Vec<T> = d_real.iter().zip(valid).filter(|(_, v)| **v).map(|(d, _)| *d).collect();
    if vals.is_empty() {
        return Err(Error::NoObservation("no gated real depth".into()));
    }
    let smooth = smoothed_sorted(&vals, window);
    for k in 0..smooth.len().saturating_sub(1) {
        let gap = smooth[k + 1] - smooth[k];
        // absorbs rounding in differences of millimeter-quantized depths
        let slack = T::default_epsilon() * T::lit(8.0) * smooth[k + 1].abs();
        if gap <= gamma + slack {
            return Ok((smooth[k], Some(k)));
        }
    }
    let min = vals.iter().copied().fold(T::lit(f64::INFINITY), T::min);
    Ok((min, None))
}

/// Offset between the closest observed and closest rendered depth, plus the
/// selection that produced it.
pub fn depth_offset<T: Real>(gated: &GatedDepthSets<T>, gamma: T, window: usize, mode: OffsetMode) -> Result<(T, T, Option<usize>)> {
    let synth_min = gated.valid_values(&gated.d_synth).fold(T::lit(f64::INFINITY), T::min);
    if !synth_min.is_finite() {
        return Err(Error::NoObservation("no gated synthetic depth".into()));
    }
    let (real, k) = match mode {
        OffsetMode::Adaptive => adaptive_min_depth(&gated.d_real, &gated.valid, gamma, window)?,
        OffsetMode::PlainMin => (gated.valid_values(&gated.d_real).fold(T::lit(f64::INFINITY), T::min), None),
    };
    Ok((real - synth_min, real, k))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel<T: Real> {
    pub t_z_bar: T,
    pub delta_d: T,
    pub selected_real_depth: T,
    pub selected_index_k: Option<usize>,
}

/// `t_z_bar = delta_d + t_z` of the initial pose.
pub fn pseudo_label<T: Real>(initial_pose: &Pose6D<T>, gated: &GatedDepthSets<T>, params: &PseudoLabelParams) -> Result<PseudoLabel<T>> {
    let (delta_d, real, k) = depth_offset(gated, T::lit(params.gamma), params.window, params.mode)?;
    Ok(PseudoLabel { t_z_bar: delta_d + initial_pose.translation.z, delta_d, selected_real_depth: real, selected_index_k: k })
}

/// Full pipeline on an object-centric crop: project, gate, select, label.
pub fn generate_pseudo_label<T: Real>(
    model_points: &[Vector3<T>],
    initial_pose: &Pose6D<T>,
    crop_intrinsics: &CameraIntrinsics<T>,
    depth: &DepthImage<T>,
    mask: &MaskImage<T>,
    params: &PseudoLabelParams,
) -> Result<PseudoLabel<T>> {
    params.validate()?;
    let projected = render_synthetic_depth(model_points, initial_pose, crop_intrinsics);
    let gated = gate_depths(&projected, depth, mask, T::lit(params.rho), T::lit(params.epsilon))?;
    pseudo_label(initial_pose, &gated, params)
}

/// `min(|t_z_bar - t_z|, xi)`.
pub fn truncated_l1<T: Real>(t_z_bar: T, t_z_pred: T, xi: T) -> T {
    (t_z_bar - t_z_pred).abs().min(xi)
}

/// Derivative of [`truncated_l1`] with respect to the prediction; zero in the
/// truncated region and at the kink.
pub fn truncated_l1_grad<T: Real>(t_z_bar: T, t_z_pred: T, xi: T) -> T {
    let d = t_z_pred - t_z_bar;
    if d.abs() >= xi || d == T::zero() {
        T::zero()
    } else {
        d.signum()
    }
}
