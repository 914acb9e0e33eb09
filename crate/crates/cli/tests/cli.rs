use std::path::Path;
use std::process::{Command, Output};

use nalgebra::Vector3;
use serde_json::Value;
use viewrope::attention::parse_heatmap_csv;
use viewrope::trajgen::read_trajectory;
use viewrope::warp::{loop_closure_loss, DepthMap, FloatGrid, Image, LoopClosureParams};

fn viewrope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewrope"))
        .args(args)
        .env_remove("VIEWROPE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let mut all = vec!["--json"];
    all.extend_from_slice(args);
    let out = viewrope(&all);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_traj_writes_parseable_deterministic_file() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        let summary = ok_json(&["gen-traj", "--axes", "yaw+pitch", "--angle", "75", "--frames", "21", "--out", s(p)]);
        assert_eq!(summary["records"], 21);
    }
    let traj = read_trajectory(&a).unwrap();
    assert_eq!(traj.len(), 21);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let action = dir.path().join("action.jsonl");
    ok_json(&["gen-traj", "--kind", "action", "--frames", "40", "--seed", "3", "--out", s(&action)]);
    assert_eq!(read_trajectory(&action).unwrap().len(), 40);
}

#[test]
fn gen_traj_rejects_bad_axes() {
    let out = viewrope(&["gen-traj", "--axes", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sideways"));
}

#[test]
fn attend_saturated_sparse_matches_dense() {
    let v = ok_json(&["attend", "--mode", "sparse", "--k", "999", "--seed", "5"]);
    assert!(v["max_abs_diff_vs_dense"].as_f64().unwrap() < 1e-5);
    assert_eq!(v["macs"], v["dense_macs"]);
    let text = viewrope(&["attend", "--mode", "sparse", "--k", "999"]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("max abs diff vs dense"));
}

#[test]
fn attend_sliding_window_one_is_self_and_previous() {
    let v = ok_json(&["attend", "--mode", "sliding", "-w", "1", "--blocks", "6"]);
    let rows = v["selected"].as_array().unwrap();
    assert_eq!(rows[0], serde_json::json!([0]));
    for (i, r) in rows.iter().enumerate().skip(1) {
        assert_eq!(r, &serde_json::json!([i - 1, i]));
    }
}

#[test]
fn attend_heatmap_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let heat = dir.path().join("heat.csv");
    let v = ok_json(&["attend", "--mode", "sparse", "--k", "2", "--Ks", "4", "--heatmap", s(&heat)]);
    let table = parse_heatmap_csv(std::io::BufReader::new(std::fs::File::open(&heat).unwrap())).unwrap();
    assert_eq!(table.rows, 8);
    for (i, row) in v["selected"].as_array().unwrap().iter().enumerate() {
        let chosen: Vec<usize> = row.as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect();
        for j in 0..table.cols {
            assert_eq!(table.is_selected(i, j), chosen.contains(&j), "({i}, {j})");
        }
    }
}

#[test]
fn attend_reads_tensor_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("qkv.json");
    let vals: Vec<f64> = (0..4 * 3).map(|i| (i as f64 * 0.37).sin()).collect();
    let doc = serde_json::json!({"block_size": 2, "heads": 1, "dim": 3, "q": vals, "k": vals, "v": vals});
    std::fs::write(&input, doc.to_string()).unwrap();
    let out = dir.path().join("out.json");
    let v = ok_json(&["attend", "--input", s(&input), "--mode", "dense", "--out", s(&out)]);
    assert_eq!(v["query_blocks"], 2);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written["out"].as_array().unwrap().len(), 12);

    std::fs::write(&input, r#"{"block_size": 2, "heads": 1, "dim": 3, "q": [1.0], "k": [1.0], "v": [1.0]}"#).unwrap();
    assert_eq!(viewrope(&["attend", "--input", s(&input)]).status.code(), Some(1));
}

/// Frames of a textured plane 5 m ahead of the start pose, with exact depth.
fn write_plane_scene(dir: &Path, angle: f64, frames: usize) -> Vec<(FloatGrid, FloatGrid)> {
    let traj_path = dir.join("traj.jsonl");
    ok_json(&[
        "gen-traj",
        "--angle",
        &angle.to_string(),
        "--frames",
        &frames.to_string(),
        "--out",
        s(&traj_path),
    ]);
    let traj = read_trajectory(&traj_path).unwrap();
    std::fs::create_dir_all(dir.join("frames")).unwrap();
    std::fs::create_dir_all(dir.join("depths")).unwrap();
    let (w, h) = (32usize, 24usize);
    traj.iter()
        .enumerate()
        .map(|(i, rec)| {
            let pose = rec.camera_pose(w as u32, h as u32).unwrap();
            let mut img = Vec::new();
            let mut depth = Vec::new();
            for v in 0..h {
                for u in 0..w {
                    let ray = pose.rotation * pose.intrinsics.unproject(u as f64, v as f64);
                    let s = 5.0 / ray.x;
                    let p: Vector3<f64> = pose.position + ray * s;
                    img.push(((2.0 * p.y).sin() + (3.0 * p.z).cos()) as f32);
                    depth.push(s as f32);
                }
            }
            let g = FloatGrid::new(h, w, img).unwrap();
            let d = FloatGrid::new(h, w, depth).unwrap();
            g.save(&dir.join(format!("frames/frame_{i:04}.vrkd"))).unwrap();
            d.save(&dir.join(format!("depths/depth_{i:04}.csv"))).unwrap();
            (g, d)
        })
        .collect()
}

fn eval_args<'a>(dir: &'a Path, eps: &'a str) -> Vec<String> {
    vec![
        "eval-lc".into(),
        "--traj".into(),
        s(&dir.join("traj.jsonl")).into(),
        "--frames".into(),
        s(&dir.join("frames")).into(),
        "--depths".into(),
        s(&dir.join("depths")).into(),
        "--eps".into(),
        eps.into(),
    ]
}

#[test]
fn eval_lc_static_loop_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_plane_scene(dir.path(), 0.0, 4);
    let args = eval_args(dir.path(), "0.01");
    let v = ok_json(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(v["report"]["total"].as_f64().unwrap(), 0.0);
    assert_eq!(v["report"]["pairs"].as_array().unwrap().len(), 6);
}

#[test]
fn eval_lc_missing_depth_skips_pairs() {
    let dir = tempfile::tempdir().unwrap();
    write_plane_scene(dir.path(), 0.0, 3);
    std::fs::remove_file(dir.path().join("depths/depth_0002.csv")).unwrap();
    let mut args = vec!["--json".to_string()];
    args.extend(eval_args(dir.path(), "0.01"));
    let out = viewrope(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped pair (2, 0)"));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["pairs"].as_array().unwrap().len(), 1);
    assert_eq!(v["report"]["skipped"].as_array().unwrap().len(), 2);
    assert_eq!(v["missing_depths"], serde_json::json!([2]));
}

#[test]
fn eval_lc_matches_library_on_plane_scene() {
    let dir = tempfile::tempdir().unwrap();
    let grids = write_plane_scene(dir.path(), 20.0, 5);
    let args = eval_args(dir.path(), "0.05");
    let v = ok_json(&args.iter().map(String::as_str).collect::<Vec<_>>());

    let traj = read_trajectory(&dir.path().join("traj.jsonl")).unwrap();
    let poses: Vec<_> = traj.iter().map(|r| r.camera_pose(32, 24).unwrap()).collect();
    let frames: Vec<Image> = grids.iter().map(|(g, _)| Image::from_grid(g)).collect();
    let depths: Vec<Option<DepthMap>> = grids
        .iter()
        .zip(&poses)
        .map(|((_, d), p)| Some(DepthMap::from_grid(d, p.clone()).unwrap()))
        .collect();
    let report = loop_closure_loss(&frames, &poses, &depths, &LoopClosureParams::new(0.05)).unwrap();
    assert!(!report.pairs.is_empty());
    assert_eq!(v["report"]["total"].as_f64().unwrap(), report.total);
    assert_eq!(v["report"]["pairs"].as_array().unwrap().len(), report.pairs.len());
}

#[test]
fn eval_lc_requires_eps() {
    let dir = tempfile::tempdir().unwrap();
    write_plane_scene(dir.path(), 0.0, 3);
    let mut args = eval_args(dir.path(), "0");
    args.truncate(args.len() - 2);
    let out = viewrope(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--eps"));
}

#[test]
fn toy_train_and_counterfactual_table() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let train = ok_json(&["train-toy", "--out-dir", s(&run_dir), "--stage-steps", "5,5,5,5"]);
    assert_eq!(train["stages"].as_array().unwrap().len(), 4);
    let ckpt = run_dir.join("model.ckpt");
    assert!(ckpt.is_file() && run_dir.join("model.ckpt.json").is_file());
    let csv = std::fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    assert!(csv.starts_with("step,stage,loss\n"));
    assert_eq!(csv.lines().count(), 21);

    let args = ["infer-toy", "--checkpoint", s(&ckpt), "--seeds", "2", "--loop-frames", "5"];
    let a = ok_json(&args);
    let rows = a["table"]["rows"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["Normal", "Random", "Exclude"]);
    let b = ok_json(&args);
    for (ra, rb) in rows.iter().zip(b["table"]["rows"].as_array().unwrap()) {
        for (x, y) in ra["lce"].as_array().unwrap().iter().zip(rb["lce"].as_array().unwrap()) {
            assert!((x.as_f64().unwrap() - y.as_f64().unwrap()).abs() < 1e-5);
        }
    }
    let text = viewrope(&args);
    let stdout = String::from_utf8_lossy(&text.stdout);
    assert!(stdout.contains("PASS") || stdout.contains("FAIL"));
}

#[test]
fn bench_csv_schema_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("bench.csv");
    let out = viewrope(&["bench", "--frames", "8,16", "--k", "3", "--repeats", "1", "--out", s(&csv_path)]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "frames,k,block_size,heads,dim,dense_macs,sparse_macs,dense_macs_analytic,sparse_macs_analytic,affinity_macs,dense_ms,sparse_ms,ratio"
    );
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 13);
        assert_eq!(f[5], f[7]);
        assert_eq!(f[6], f[8]);
    }
}

#[test]
fn config_round_trip_and_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let first = viewrope(&["--print-config", "attend", "--k", "4"]);
    assert!(first.status.success());
    let path = dir.path().join("run.json");
    std::fs::write(&path, &first.stdout).unwrap();
    let second = viewrope(&["--config", s(&path), "--print-config", "attend"]);
    assert_eq!(first.stdout, second.stdout);

    // flag beats file, file beats default
    std::fs::write(&path, r#"{"attend": {"k": 6, "window": 9}}"#).unwrap();
    let v: Value = serde_json::from_slice(
        &viewrope(&["--config", s(&path), "--print-config", "attend", "--k", "2"]).stdout,
    )
    .unwrap();
    assert_eq!(v["attend"]["k"], 2);
    assert_eq!(v["attend"]["window"], 9);
    assert_eq!(v["attend"]["block_size"], 16);

    std::fs::write(&path, r#"{"attend": {"kk": 6}}"#).unwrap();
    assert_eq!(viewrope(&["--config", s(&path), "attend"]).status.code(), Some(1));
}

#[test]
fn thread_variable_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_viewrope"))
        .args(["attend", "--blocks", "2"])
        .env("VIEWROPE_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_viewrope"))
        .args(["--json", "attend", "--blocks", "2"])
        .env("VIEWROPE_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
}
