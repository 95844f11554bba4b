//! Pose metrics over matched record sets.

use std::collections::BTreeMap;

use sspose::metrics::{MetricReport, AUC_MAX_THRESHOLD, RECALL_DIAMETER_FRACTION};
use sspose::{add_s_dispatch, adds_error, auc_with_mode, AucMode, ModelInfo, PoseRecord};

use crate::error::{CliError, Result};

/// Report keys, percentages where the name says so.
pub const RECALL_KEY: &str = "recall_add(-s)";
pub const AUC_ADDS_KEY: &str = "auc_add-s";
pub const AUC_ADD_S_KEY: &str = "auc_add(-s)";

fn keyed(records: &[PoseRecord], what: &str) -> Result<BTreeMap<(u64, u64), PoseRecord>> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert((r.scene_id, r.obj_id), *r).is_some() {
            return Err(CliError::Data(format!("{what}: duplicate record for scene {} object {}", r.scene_id, r.obj_id)));
        }
    }
    Ok(map)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Metrics of `pred` against `gt`. Both must cover the same
/// (scene, object) pairs.
pub fn pose_metrics(gt: &[PoseRecord], pred: &[PoseRecord], models: &BTreeMap<u64, ModelInfo>, mode: AucMode) -> Result<MetricReport> {
    let gt = keyed(gt, "ground truth")?;
    let pred = keyed(pred, "predictions")?;
    if gt.is_empty() {
        return Err(CliError::Data("no ground-truth records".into()));
    }
    if gt.keys().ne(pred.keys()) {
        return Err(CliError::Data(format!("record sets differ: {} ground-truth vs {} predicted entries", gt.len(), pred.len())));
    }
    let (mut adds, mut dispatch, mut hits, mut tz, mut t) = (vec![], vec![], 0usize, vec![], vec![]);
    for (key, g) in &gt {
        let p = &pred[key];
        let model = models.get(&key.1).ok_or_else(|| CliError::Data(format!("no model for object {}", key.1)))?;
        let e = add_s_dispatch(&p.pose, &g.pose, model);
        if e < RECALL_DIAMETER_FRACTION * model.diameter {
            hits += 1;
        }
        dispatch.push(e);
        adds.push(adds_error(&p.pose, &g.pose, model));
        tz.push((p.pose.translation.z - g.pose.translation.z).abs());
        t.push((p.pose.translation - g.pose.translation).norm());
    }
    let n = gt.len();
    let mut report = MetricReport::default();
    report.insert("count", n as f64);
    report.insert(RECALL_KEY, 100.0 * hits as f64 / n as f64);
    report.insert(AUC_ADDS_KEY, 100.0 * auc_with_mode(&adds, AUC_MAX_THRESHOLD, mode)?);
    report.insert(AUC_ADD_S_KEY, 100.0 * auc_with_mode(&dispatch, AUC_MAX_THRESHOLD, mode)?);
    report.insert("median_tz_error", median(tz));
    report.insert("median_translation_error", median(t));
    Ok(report)
}

/// `prefix.key` copies of every entry of `from`.
pub fn merge_prefixed(into: &mut MetricReport, prefix: &str, from: &MetricReport) {
    for (k, v) in &from.entries {
        into.insert(format!("{prefix}.{k}"), *v);
    }
}
