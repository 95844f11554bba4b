use std::fs;
use std::path::Path;

use sspose::so3::read_codebook;
use sspose::Codebook;
use sspose_cli::{run, CliError};

fn sspose(args: &[&str]) -> (Result<(), CliError>, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("sspose").chain(args.iter().copied());
    let r = run(argv, &mut out);
    (r, String::from_utf8(out).unwrap())
}

fn ok(args: &[&str]) -> String {
    let (r, out) = sspose(args);
    r.unwrap_or_else(|e| panic!("{args:?}: {e}"));
    out
}

fn code(args: &[&str]) -> i32 {
    sspose(args).0.err().map_or(0, |e| e.exit_code())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(text: &str) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(text.as_bytes()).records().map(Result::unwrap).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn codebook_has_product_size_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("cb.bin");
    ok(&["codebook", "--viewpoints", "4000", "--inplane", "120", "--out", p(&file)]);
    let book: Codebook = read_codebook(fs::File::open(&file).unwrap()).unwrap();
    assert_eq!(book.len(), 480_000);
    assert!(!book.has_embeddings());

    ok(&["codebook", "--viewpoints", "1", "--inplane", "1", "--embed", "--out", p(&file)]);
    let book: Codebook = read_codebook(fs::File::open(&file).unwrap()).unwrap();
    assert_eq!(book.len(), 1);
    assert_eq!(book.embedding_dim(), 9);
    let r = book.rotation(0);
    assert!((r.transpose() * r - nalgebra::Matrix3::identity()).abs().max() < 1e-12);
}

#[test]
fn gen_scenes_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        ok(&["gen-scenes", "--count", "4", "--noise-rotation", "10", "--seed", seed, "--out", p(out)]);
    }
    for f in ["gt_poses.txt", "init_poses.txt", "scene_002/depth.pgm", "scene_003/meta"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("gt_poses.txt")).unwrap(), fs::read(c.join("gt_poses.txt")).unwrap());
}

#[test]
fn zero_occlusion_matches_unoccluded_set() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-scenes", "--count", "3", "--seed", "9", "--out", p(&a)]);
    ok(&["gen-scenes", "--count", "3", "--seed", "9", "--occlusion", "0", "--out", p(&b)]);
    for i in 0..3 {
        let f = format!("scene_{i:03}/depth.pgm");
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap());
        assert!(fs::read_to_string(a.join(format!("scene_{i:03}/meta"))).unwrap().contains("occluder = none"));
    }
}

#[test]
fn pseudolabel_of_exact_poses_is_within_quantization_on_fronto_boxes() {
    // Axis-aligned boxes seen head-on: the nearest face is flat, so the
    // nearest observed depth is the face depth up to millimeter rounding.
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("s");
    ok(&["gen-scenes", "--count", "12", "--shape", "cuboid", "--fronto", "--seed", "1", "--out", p(&set)]);
    let gt = set.join("gt_poses.txt");
    let rows = csv_rows(&ok(&["pseudolabel", "--scenes", p(&set), "--init", p(&gt)]));
    assert_eq!(rows.len(), 12);
    for row in rows {
        assert_eq!(&row[2], "ok");
        let delta: f64 = row[4].parse().unwrap();
        assert!(delta.abs() <= 0.0005 + 1e-9, "{row:?}");
    }
}

#[test]
fn pseudolabel_recovers_depth_bias() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("s");
    ok(&["gen-scenes", "--count", "30", "--tz-bias", "0.03", "--seed", "2", "--out", p(&set)]);
    let csv_path = dir.path().join("labels.csv");
    ok(&["pseudolabel", "--scenes", p(&set), "--out", p(&csv_path)]);
    let rows = csv_rows(&fs::read_to_string(&csv_path).unwrap());
    let deltas: Vec<f64> = rows.iter().filter(|r| &r[2] == "ok").map(|r| r[4].parse().unwrap()).collect();
    assert_eq!(deltas.len(), 30);
    let m = median(deltas);
    assert!((m + 0.03).abs() < 0.005, "{m}");
}

#[test]
fn empty_mask_gives_skipped_row() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("s");
    ok(&["gen-scenes", "--count", "2", "--seed", "5", "--out", p(&set)]);
    let mask = set.join("scene_001/mask.pgm");
    let bytes = fs::read(&mask).unwrap();
    // the P5 header ends after three newlines; zero every pixel after it
    let header_end = bytes.iter().enumerate().filter(|(_, b)| **b == b'\n').nth(2).unwrap().0 + 1;
    let mut zeroed = bytes[..header_end].to_vec();
    zeroed.resize(bytes.len(), 0);
    fs::write(&mask, zeroed).unwrap();
    let rows = csv_rows(&ok(&["pseudolabel", "--scenes", p(&set)]));
    assert_eq!(&rows[0][2], "ok");
    assert_eq!(&rows[1][2], "skipped");
    assert_eq!(&rows[1][3], "");
    assert_eq!(&rows[1][8], "");
}

#[test]
fn eval_scores_ground_truth_at_full_marks() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("s");
    ok(&["gen-scenes", "--count", "6", "--seed", "6", "--out", p(&set)]);
    let gt = set.join("gt_poses.txt");
    let out = ok(&["eval", "--gt", p(&gt), "--pred", p(&gt), "--models", p(&set.join("models"))]);
    let report = sspose::metrics::MetricReport::parse(&out).unwrap();
    for key in ["recall_add(-s)", "auc_add-s", "auc_add(-s)"] {
        assert_eq!(report.get(key), Some(100.0), "{key}");
    }
    assert_eq!(report.get("count"), Some(6.0));
    // the set root works as well
    assert_eq!(ok(&["eval", "--gt", p(&gt), "--pred", p(&gt), "--models", p(&set)]), out);
}

#[test]
fn eval_rejects_mismatched_records() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("s");
    ok(&["gen-scenes", "--count", "3", "--seed", "6", "--out", p(&set)]);
    let gt = set.join("gt_poses.txt");
    let text = fs::read_to_string(&gt).unwrap();
    let short = dir.path().join("short.txt");
    let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("2 ")).collect();
    fs::write(&short, kept.join("\n")).unwrap();
    assert_eq!(code(&["eval", "--gt", p(&gt), "--pred", p(&short), "--models", p(&set)]), 4);
}

#[test]
fn optimize_without_iterations_keeps_poses() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("s");
    let out = dir.path().join("o");
    ok(&["gen-scenes", "--count", "4", "--noise-rotation", "10", "--noise-translation", "0.05", "--seed", "7", "--out", p(&set)]);
    ok(&["optimize", "--scenes", p(&set), "--iters", "0", "--out", p(&out)]);
    let init = sspose::metrics::parse_pose_records(&fs::read_to_string(set.join("init_poses.txt")).unwrap()).unwrap();
    let refined = sspose::metrics::parse_pose_records(&fs::read_to_string(out.join("poses.txt")).unwrap()).unwrap();
    assert_eq!(init.len(), refined.len());
    for (a, b) in init.iter().zip(&refined) {
        assert_eq!((a.scene_id, a.obj_id), (b.scene_id, b.obj_id));
        assert!((a.pose.translation - b.pose.translation).norm() <= 1e-12);
        assert!((a.pose.rotation - b.pose.rotation).abs().max() <= 1e-12);
    }
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
    let metrics = sspose::metrics::MetricReport::parse(&fs::read_to_string(out.join("metrics.txt")).unwrap()).unwrap();
    assert!(metrics.get("before.recall_add(-s)").is_some() && metrics.get("after.recall_add(-s)").is_some());
}

#[test]
fn optimize_trace_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("s");
    ok(&["gen-scenes", "--count", "4", "--kinds", "alternate", "--noise-rotation", "10", "--seed", "8", "--out", p(&set)]);
    let traces: Vec<String> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            ok(&["optimize", "--scenes", p(&set), "--iters", "6", "--seed", "3", "--out", p(&out)]);
            fs::read_to_string(out.join("trace.csv")).unwrap()
        })
        .collect();
    assert_eq!(traces[0], traces[1]);
    assert_eq!(traces[0].lines().count(), 8);
}

#[test]
fn optimize_divergence_exits_five_with_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("s");
    let out = dir.path().join("o");
    ok(&["gen-scenes", "--count", "2", "--noise-rotation", "10", "--seed", "9", "--out", p(&set)]);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "optimizer.step_size = 1e300\n").unwrap();
    assert_eq!(code(&["optimize", "--scenes", p(&set), "--config", p(&cfg), "--iters", "5", "--out", p(&out)]), 5);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.lines().count() >= 2);
    assert!(!out.join("poses.txt").exists());
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["gen-scenes", "--count", "2", "--shape", "torus", "--out", p(dir.path())]), 2);
    assert_eq!(code(&["codebook", "--viewpoints", "0", "--inplane", "3", "--out", p(&dir.path().join("x"))]), 2);
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "pseudo.rho = 3.0\n").unwrap();
    assert_eq!(code(&["optimize", "--scenes", p(dir.path()), "--config", p(&cfg), "--out", p(dir.path())]), 2);
    let missing = dir.path().join("missing.txt");
    assert_eq!(code(&["eval", "--gt", p(&missing), "--pred", p(&missing), "--models", p(dir.path())]), 3);
    assert_eq!(code(&["optimize", "--scenes", p(&dir.path().join("nowhere")), "--out", p(dir.path())]), 4);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn print_config_round_trips_through_parser() {
    let text = ok(&["print-config"]);
    assert_eq!(sspose_cli::Config::parse(&text).unwrap(), sspose_cli::Config::default());
}
