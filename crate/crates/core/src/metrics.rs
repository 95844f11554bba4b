//! Pose accuracy metrics: ADD, ADD-S, recall at a diameter fraction and the
//! area under the accuracy-threshold curve. Also the line-oriented pose file
//! and key-value report formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose6D;
use crate::mesh::diameter;
use crate::scalar::Real;

/// Default upper threshold of the AUC curve, meters.
pub const AUC_MAX_THRESHOLD: f64 = 0.10;
/// Default recall threshold as a fraction of the object diameter.
pub const RECALL_DIAMETER_FRACTION: f64 = 0.1;
/// Bin count of the binned AUC compatibility mode.
pub const AUC_BINS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModelInfo<T: Real> {
    pub points: Vec<Vector3<T>>,
    pub diameter: T,
    pub is_symmetric: bool,
}

impl<T: Real> ObjectModelInfo<T> {
    pub fn new(points: Vec<Vector3<T>>, diameter: T, is_symmetric: bool) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Empty("object model needs at least two points".into()));
        }
        if !(diameter > T::zero()) {
            return Err(Error::Geometry("object diameter must be positive".into()));
        }
        Ok(Self { points, diameter, is_symmetric })
    }

    /// Diameter measured as the largest pairwise point distance.
    pub fn from_points(points: Vec<Vector3<T>>, is_symmetric: bool) -> Result<Self> {
        let d = diameter(&points);
        Self::new(points, d, is_symmetric)
    }
}

/// Mean distance between corresponding transformed model points.
pub fn add_error<T: Real>(pred: &Pose6D<T>, gt: &Pose6D<T>, model: &ObjectModelInfo<T>) -> T {
    let sum = model.points.iter().fold(T::zero(), |acc, x| acc + (pred.transform(x) - gt.transform(x)).norm());
    sum / T::from_usize_lossy(model.points.len())
}

/// Mean distance from each GT-transformed point to the closest
/// prediction-transformed point.
pub fn adds_error<T: Real>(pred: &Pose6D<T>, gt: &Pose6D<T>, model: &ObjectModelInfo<T>) -> T {
    let predicted: Vec<Vector3<T>> = model.points.iter().map(|x| pred.transform(x)).collect();
    let sum = model.points.iter().fold(T::zero(), |acc, x| {
        let g = gt.transform(x);
        let nearest = predicted.iter().fold(T::lit(f64::INFINITY), |m, p| m.min((p - g).norm_squared()));
        acc + nearest.sqrt()
    });
    sum / T::from_usize_lossy(model.points.len())
}

/// ADD-S for symmetric objects, ADD otherwise.
pub fn add_s_dispatch<T: Real>(pred: &Pose6D<T>, gt: &Pose6D<T>, model: &ObjectModelInfo<T>) -> T {
    if model.is_symmetric {
        adds_error(pred, gt, model)
    } else {
        add_error(pred, gt, model)
    }
}

/// Share of errors strictly below `fraction * diameter`.
pub fn recall_at_diameter<T: Real>(errors: &[T], diameter: T, fraction: T) -> Result<T> {
    if errors.is_empty() {
        return Err(Error::Empty("no errors to score".into()));
    }
    if !(fraction > T::zero()) {
        return Err(Error::Config("recall fraction must be positive".into()));
    }
    let thr = fraction * diameter;
    let hits = errors.iter().filter(|e| **e < thr).count();
    Ok(T::from_usize_lossy(hits) / T::from_usize_lossy(errors.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AucMode {
    /// Exact integral of the step-shaped accuracy curve.
    #[default]
    Exact,
    /// Accuracy averaged over evenly spaced threshold bins.
    Binned(usize),
}

/// Normalized area under accuracy(threshold) on `[0, max_threshold]`, where
/// accuracy is the share of errors below the threshold.
pub fn auc<T: Real>(errors: &[T], max_threshold: T) -> Result<T> {
    auc_with_mode(errors, max_threshold, AucMode::Exact)
}

pub fn auc_with_mode<T: Real>(errors: &[T], max_threshold: T, mode: AucMode) -> Result<T> {
    if errors.is_empty() {
        return Err(Error::Empty("no errors to score".into()));
    }
    if !(max_threshold > T::zero()) {
        return Err(Error::Config("AUC threshold must be positive".into()));
    }
    let n = T::from_usize_lossy(errors.len());
    match mode {
        AucMode::Exact => {
            // each error contributes the share of the threshold range it is counted in
            let area = errors.iter().fold(T::zero(), |acc, e| acc + (T::one() - *e / max_threshold).max(T::zero()).min(T::one()));
            Ok(area / n)
        }
        AucMode::Binned(bins) => {
            if bins == 0 {
                return Err(Error::Config("AUC bin count must be positive".into()));
            }
            let mut sorted = errors.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            let step = max_threshold / T::from_usize_lossy(bins);
            let mut acc = T::zero();
            for b in 0..bins {
                let thr = step * (T::from_usize_lossy(b) + T::lit(0.5));
                let below = sorted.partition_point(|e| *e < thr);
                acc += T::from_usize_lossy(below) / n;
            }
            Ok(acc / T::from_usize_lossy(bins))
        }
    }
}

/// One pose estimate or annotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub scene_id: u64,
    pub obj_id: u64,
    pub pose: Pose6D<f64>,
}

/// `scene obj r00 .. r22 tx ty tz` per line; `#` starts a comment.
pub fn write_pose_records(records: &[PoseRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = write!(out, "{} {}", r.scene_id, r.obj_id);
        let m = &r.pose.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let _ = write!(out, " {}", m[(i, j)]);
            }
        }
        for v in r.pose.translation.iter() {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_pose_records(text: &str) -> Result<Vec<PoseRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("pose line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 14 {
            return Err(bad(&format!("expected 14 fields, found {}", fields.len())));
        }
        let scene_id = fields[0].parse().map_err(|_| bad("bad scene id"))?;
        let obj_id = fields[1].parse().map_err(|_| bad("bad object id"))?;
        let vals = fields[2..].iter().map(|f| f.parse::<f64>().map_err(|_| bad("bad number"))).collect::<Result<Vec<_>>>()?;
        let rotation = Matrix3::from_row_slice(&vals[..9]);
        let translation = Vector3::new(vals[9], vals[10], vals[11]);
        let pose = Pose6D::new(rotation, translation).map_err(|e| bad(&e.to_string()))?;
        out.push(PoseRecord { scene_id, obj_id, pose });
    }
    Ok(out)
}

/// Flat `key = value` report, keys kept sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub entries: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn insert(&mut self, key: impl Into<String>, value: f64) {
        self.entries.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut report = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("missing '=' in {line:?}")))?;
            let v = v.trim().parse().map_err(|_| Error::Format(format!("bad value in {line:?}")))?;
            report.insert(k.trim(), v);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_z;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng) -> Pose6D<f64> {
        let axis = Unit::new_normalize(Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let r = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..3.1)).into_inner();
        Pose6D::new(r, Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.5..1.5))).unwrap()
    }

    fn random_model(rng: &mut impl Rng, n: usize) -> ObjectModelInfo<f64> {
        let pts = (0..n)
            .map(|_| Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)))
            .collect();
        ObjectModelInfo::from_points(pts, false).unwrap()
    }

    #[test]
    fn identical_poses_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, 50);
        let p = random_pose(&mut rng);
        assert_eq!(add_error(&p, &p, &m), 0.0);
        assert_eq!(adds_error(&p, &p, &m), 0.0);
    }

    #[test]
    fn pure_translation_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_model(&mut rng, 50);
        let gt = random_pose(&mut rng);
        let pred = Pose6D { translation: gt.translation + Vector3::new(0.0, 0.0, 0.02), ..gt };
        assert!((add_error(&pred, &gt, &m) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn naive_loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_model(&mut rng, 100);
            let (p, g) = (random_pose(&mut rng), random_pose(&mut rng));
            let mut add = 0.0;
            let mut adds = 0.0;
            for x in &m.points {
                let gx = g.rotation * x + g.translation;
                let px = p.rotation * x + p.translation;
                add += ((px[0] - gx[0]).powi(2) + (px[1] - gx[1]).powi(2) + (px[2] - gx[2]).powi(2)).sqrt();
                let mut best = f64::INFINITY;
                for y in &m.points {
                    let py = p.rotation * y + p.translation;
                    best = best.min((py - gx).norm());
                }
                adds += best;
            }
            assert!((add_error(&p, &g, &m) - add / 100.0).abs() < 1e-12);
            assert!((adds_error(&p, &g, &m) - adds / 100.0).abs() < 1e-12);
            assert!(adds_error(&p, &g, &m) <= add_error(&p, &g, &m));
        }
    }

    #[test]
    fn ring_symmetry() {
        let n = 360;
        let pts: Vec<_> = (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                Vector3::new(0.05 * a.cos(), 0.05 * a.sin(), 0.0)
            })
            .collect();
        let spacing = 0.05 * std::f64::consts::TAU / n as f64;
        let m = ObjectModelInfo::from_points(pts, true).unwrap();
        let gt = Pose6D::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let pred = Pose6D { rotation: rot_z(0.7), ..gt };
        assert!(adds_error(&pred, &gt, &m) <= spacing);
        assert!(add_error(&pred, &gt, &m) > 0.03);
        assert_eq!(add_s_dispatch(&pred, &gt, &m), adds_error(&pred, &gt, &m));
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at_diameter(&[0.0, 0.0], 0.1, 0.1).unwrap(), 1.0);
        assert_eq!(recall_at_diameter(&[0.005, 0.02], 0.1, 0.1).unwrap(), 0.5);
        assert!(recall_at_diameter::<f64>(&[], 0.1, 0.1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let errs: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..0.05)).collect();
        let mut count = 0;
        for e in &errs {
            if *e < 0.1 * 0.2 {
                count += 1;
            }
        }
        assert_eq!(recall_at_diameter(&errs, 0.2, 0.1).unwrap(), count as f64 / 1000.0);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[0.0, 0.0], 0.1).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.3], 0.1).unwrap(), 0.0);
        assert!((auc(&[0.05f64], 0.10).unwrap() - 0.5).abs() < 1e-15);
        assert!(auc::<f64>(&[], 0.1).is_err());
    }

    #[test]
    fn exact_auc_matches_fine_riemann_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let errs: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..0.15)).collect();
        let bins = 10_000;
        let mut sum = 0.0;
        for b in 0..bins {
            let t = (b as f64 + 0.5) * 0.1 / bins as f64;
            sum += errs.iter().filter(|e| **e < t).count() as f64 / errs.len() as f64;
        }
        let riemann = sum / bins as f64;
        assert!((auc(&errs, 0.1).unwrap() - riemann).abs() < 1e-4);
        assert!((auc_with_mode(&errs, 0.1, AucMode::Binned(bins)).unwrap() - riemann).abs() < 1e-12);
        assert!((auc_with_mode(&errs, 0.1, AucMode::Binned(AUC_BINS)).unwrap() - riemann).abs() < 2e-3);
    }

    #[test]
    fn pose_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let recs: Vec<_> = (0..10).map(|i| PoseRecord { scene_id: i, obj_id: 3, pose: random_pose(&mut rng) }).collect();
        let text = write_pose_records(&recs);
        assert_eq!(text.lines().count(), 10);
        assert_eq!(parse_pose_records(&text).unwrap(), recs);
        assert!(parse_pose_records("1 2 3").is_err());
    }

    #[test]
    fn report_round_trip() {
        let mut r = MetricReport::default();
        r.insert("mean.auc_adds", 92.5);
        r.insert("obj_000001.recall", 0.125);
        assert_eq!(MetricReport::parse(&r.to_text()).unwrap(), r);
    }
}
