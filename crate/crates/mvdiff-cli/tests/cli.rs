//! End-to-end tests of the `mvdiff` binary: every subcommand is exercised
//! through `std::process::Command` against real artifacts in a temp dir, the
//! way a user would run it.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvdiff::scene::{read_png, write_png};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mvdiff")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Small-but-real settings: 16×16 images so SSIM's 11×11 window fits.
fn write_train_config(dir: &Path) -> PathBuf {
    let path = dir.join("train.kv");
    std::fs::write(
        &path,
        "net.channels=4,6\nnet.image_size=16\nnet.time_dim=16\nnet.mod_hidden=8\n\
         net.src_channels=4,8\nsched.t_steps=6\ntrain.steps=4\ntrain.holdout_views=1\n",
    )
    .unwrap();
    path
}

fn gen_dataset(root: &Path, seed: u64) -> PathBuf {
    let data = root.join(format!("data_{seed}"));
    run_ok(&[
        "dataset-gen",
        "--out",
        path_str(&data),
        "--scenes",
        "3",
        "--views",
        "4",
        "--size",
        "16",
        "--seed",
        &seed.to_string(),
    ]);
    data
}

fn scene_dirs(data: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs
}

// ---- dataset-gen -----------------------------------------------------------

#[test]
fn dataset_gen_emits_expected_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(tmp.path(), 7);
    assert!(data.join("manifest.txt").exists());
    assert!(data.join("resolved.kv").exists());
    let scenes = scene_dirs(&data);
    assert_eq!(scenes.len(), 3);
    for scene in &scenes {
        assert!(scene.join("cameras.txt").exists());
        for v in 0..4 {
            assert!(scene.join(format!("{v}.png")).exists());
        }
    }
}

#[test]
fn dataset_gen_requires_an_output_path() {
    let out = run(&["dataset-gen", "--scenes", "2"]);
    assert_eq!(out.status.code(), Some(2), "missing --out is a usage error");
}

#[test]
fn dataset_seed_changes_scene_ids_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let ids = |data: &Path| -> Vec<String> {
        scene_dirs(data)
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect()
    };
    let a = gen_dataset(tmp.path(), 1);
    let b = gen_dataset(tmp.path(), 2);
    assert_ne!(ids(&a), ids(&b), "different seeds give different scenes");

    let rerun = tmp.path().join("rerun");
    run_ok(&[
        "dataset-gen",
        "--out",
        path_str(&rerun),
        "--scenes",
        "3",
        "--views",
        "4",
        "--size",
        "16",
        "--seed",
        "1",
    ]);
    assert_eq!(ids(&a), ids(&rerun), "same seed reproduces the same scenes");
    // And the images themselves are bit-identical.
    let first = ids(&a)[0].clone();
    assert_eq!(
        std::fs::read(a.join(&first).join("0.png")).unwrap(),
        std::fs::read(rerun.join(&first).join("0.png")).unwrap()
    );
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.kv");
    std::fs::write(&cfg, "scene_count=2\nscene_cuont=3\n").unwrap();
    let out = run(&[
        "dataset-gen",
        "--out",
        path_str(&tmp.path().join("d")),
        "--config",
        path_str(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("scene_cuont"), "error names the bad key: {stderr}");
}

// ---- train ------------------------------------------------------------------

#[test]
fn train_writes_checkpoint_log_and_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(tmp.path(), 3);
    let cfg = write_train_config(tmp.path());
    let out_dir = tmp.path().join("run");
    run_ok(&[
        "train",
        "--data",
        path_str(&data),
        "--out",
        path_str(&out_dir),
        "--config",
        path_str(&cfg),
        "--seed",
        "5",
    ]);
    assert!(out_dir.join("checkpoint.mvdf").exists());
    assert!(out_dir.join("report.txt").exists());
    let log = std::fs::read_to_string(out_dir.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,loss,lr,psnr_eval\n"));
    assert_eq!(log.lines().count(), 1 + 4, "header plus one row per step");
    let resolved = std::fs::read_to_string(out_dir.join("resolved.kv")).unwrap();
    assert!(resolved.contains("train.seed=5"), "flag override lands in resolved config");
    assert!(resolved.contains("net.mode=rcn"));
}

#[test]
fn train_resume_with_zero_steps_reproduces_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(tmp.path(), 3);
    let cfg = write_train_config(tmp.path());
    let first = tmp.path().join("first");
    run_ok(&["train", "--data", path_str(&data), "--out", path_str(&first), "--config", path_str(&cfg)]);
    let resumed = tmp.path().join("resumed");
    run_ok(&[
        "train",
        "--data",
        path_str(&data),
        "--out",
        path_str(&resumed),
        "--config",
        path_str(&cfg),
        "--init-from",
        path_str(&first.join("checkpoint.mvdf")),
        "--steps",
        "0",
    ]);
    assert_eq!(
        std::fs::read(first.join("checkpoint.mvdf")).unwrap(),
        std::fs::read(resumed.join("checkpoint.mvdf")).unwrap(),
        "a zero-step resume round-trips the model bit for bit"
    );
}

#[test]
fn invalid_conditioning_mode_lists_the_valid_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(tmp.path(), 3);
    let out = run(&[
        "train",
        "--data",
        path_str(&data),
        "--out",
        path_str(&tmp.path().join("run")),
        "--mode",
        "film_global",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    for mode in ["pose_token", "concat_input", "concat_multiscale", "rcn"] {
        assert!(stderr.contains(mode), "error lists {mode}: {stderr}");
    }
}

#[test]
fn resume_rejects_architecture_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(tmp.path(), 3);
    let cfg = write_train_config(tmp.path());
    let first = tmp.path().join("first");
    run_ok(&["train", "--data", path_str(&data), "--out", path_str(&first), "--config", path_str(&cfg)]);
    let out = run(&[
        "train",
        "--data",
        path_str(&data),
        "--out",
        path_str(&tmp.path().join("second")),
        "--init-from",
        path_str(&first.join("checkpoint.mvdf")),
        "--mode",
        "pose_token",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot be changed when resuming"));
}

// ---- render ------------------------------------------------------------------

/// Trains a throwaway checkpoint once per test that needs one.
fn quick_checkpoint(tmp: &Path, data: &Path) -> PathBuf {
    let cfg = write_train_config(tmp);
    let run_dir = tmp.join("ck_run");
    run_ok(&["train", "--data", path_str(data), "--out", path_str(&run_dir), "--config", path_str(&cfg)]);
    run_dir.join("checkpoint.mvdf")
}

#[test]
fn render_emits_frames_orbit_and_montage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(tmp.path(), 3);
    let ck = quick_checkpoint(tmp.path(), &data);
    let out_dir = tmp.path().join("orbit");
    run_ok(&[
        "render",
        "--checkpoint",
        path_str(&ck),
        "--data",
        path_str(&data),
        "--out",
        path_str(&out_dir),
        "--frames",
        "8",
        "--montage",
    ]);
    for i in 0..8 {
        assert!(out_dir.join(format!("frame_{i:03}.png")).exists());
    }
    assert!(out_dir.join("orbit.txt").exists());
    assert!(out_dir.join("montage.png").exists());
    let views = mvdiff::geometry::read_orbit_file(&out_dir.join("orbit.txt")).unwrap();
    assert_eq!(views.len(), 8);
}

#[test]
fn render_noise_modes_differ_but_reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(tmp.path(), 3);
    let ck = quick_checkpoint(tmp.path(), &data);
    let render = |out: &Path, noise: &str| {
        run_ok(&[
            "render",
            "--checkpoint",
            path_str(&ck),
            "--data",
            path_str(&data),
            "--out",
            path_str(out),
            "--frames",
            "3",
            "--noise",
            noise,
            "--seed",
            "9",
        ]);
    };
    let shared = tmp.path().join("shared");
    let shared2 = tmp.path().join("shared2");
    let indep = tmp.path().join("indep");
    render(&shared, "shared");
    render(&shared2, "shared");
    render(&indep, "independent");

    let frame = |dir: &Path, i: usize| std::fs::read(dir.join(format!("frame_{i:03}.png"))).unwrap();
    for i in 0..3 {
        assert_eq!(frame(&shared, i), frame(&shared2, i), "deterministic rerun, frame {i}");
    }
    let any_differ = (0..3).any(|i| frame(&shared, i) != frame(&indep, i));
    assert!(any_differ, "noise mode changes the frame set under a fixed seed");
}

// ---- eval ---------------------------------------------------------------------

#[test]
fn eval_of_ground_truth_against_itself_hits_the_caps() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(tmp.path(), 3);
    let scene = scene_dirs(&data)[0].clone();
    let out_dir = tmp.path().join("eval");
    run_ok(&[
        "eval",
        "--frames",
        path_str(&scene),
        "--reference",
        path_str(&scene),
        "--out",
        path_str(&out_dir),
    ]);
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("frame,psnr,ssim,perceptual\n"), "documented schema");
    let mean = metrics.lines().last().unwrap();
    let cols: Vec<&str> = mean.split(',').collect();
    assert_eq!(cols[0], "mean");
    assert_eq!(cols[1].parse::<f64>().unwrap(), 99.0, "identical frames sit at the PSNR cap");
    assert_eq!(cols[2].parse::<f64>().unwrap(), 1.0, "identical frames have SSIM 1");
    assert_eq!(cols[3].parse::<f64>().unwrap(), 0.0, "identical frames have zero perceptual distance");
    let pplc = std::fs::read_to_string(out_dir.join("pplc.csv")).unwrap();
    assert!(pplc.starts_with("pair,raw,phi,score,coverage,note\n"), "documented schema");
}

#[test]
fn eval_scores_a_constant_sequence_at_zero_consistency_error() {
    // A degenerate "orbit": the same frame and camera repeated. The sequence
    // is perfectly view-consistent, so its consistency score must be 0.
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(tmp.path(), 3);
    let scene = scene_dirs(&data)[0].clone();
    let views = mvdiff::geometry::read_orbit_file(&scene.join("cameras.txt")).unwrap();
    let image = read_png(&scene.join("0.png")).unwrap();

    let const_dir = tmp.path().join("constant");
    std::fs::create_dir_all(&const_dir).unwrap();
    for i in 0..3 {
        write_png(&const_dir.join(format!("frame_{i:03}.png")), &image).unwrap();
    }
    mvdiff::geometry::write_orbit_file(&const_dir.join("orbit.txt"), &vec![views[0]; 3]).unwrap();

    let out_dir = tmp.path().join("eval");
    run_ok(&["eval", "--frames", path_str(&const_dir), "--out", path_str(&out_dir)]);
    let pplc = std::fs::read_to_string(out_dir.join("pplc.csv")).unwrap();
    let summary = pplc.lines().last().unwrap();
    assert!(summary.contains("mean=0.00000000e0"), "constant sequence scores zero: {summary}");
}

#[test]
fn eval_reports_the_missing_camera_file_by_path() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    let out = run(&["eval", "--frames", path_str(&frames), "--out", path_str(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(1), "missing inputs are runtime errors");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains(&frames.join("orbit.txt").display().to_string()),
        "error names the missing camera file: {stderr}"
    );
}

// ---- ablate --------------------------------------------------------------------

#[test]
fn ablate_emits_six_rows_and_reuses_the_checkpoint_for_f() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(tmp.path(), 3);
    let cfg = tmp.path().join("ablate.kv");
    std::fs::write(
        &cfg,
        "net.channels=4,6\nnet.image_size=16\nnet.time_dim=16\nnet.mod_hidden=8\n\
         net.src_channels=4,8\nsched.t_steps=6\ntrain.holdout_views=1\ntrain.views=2\n\
         ablate.stage1_steps=2\nablate.stage2_steps=2\nablate.orbit_frames=3\n\
         ablate.recon_pairs=2\nablate.eval_scenes=1\nablate.orbit_scenes=1\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("ladder");
    run_ok(&[
        "ablate",
        "--data",
        path_str(&data),
        "--out",
        path_str(&out_dir),
        "--config",
        path_str(&cfg),
        "--seed",
        "5",
    ]);

    let csv = std::fs::read_to_string(out_dir.join("ladder.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "mode,label,psnr,ssim,perceptual,pplc,recon_psnr");
    assert_eq!(lines.len(), 1 + 6, "exactly six rows");
    for (line, label) in lines[1..].iter().zip(["A", "B", "C", "D", "E", "F"]) {
        assert!(line.starts_with(&format!("{label},")), "row order: {line}");
    }

    let report = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report.contains("check (d) F reuses E's checkpoint byte for byte -> PASS"), "{report}");
    assert_eq!(
        std::fs::read(out_dir.join("E/checkpoint.mvdf")).unwrap(),
        std::fs::read(out_dir.join("F/checkpoint.mvdf")).unwrap()
    );
    // Directional checks are present (pass or fail at this toy budget).
    assert!(report.contains("check (a) rcn beats pose_token"));
    assert!(report.contains("check (b) concat_input beats pose_token"));
    assert!(report.contains("check (c) shared noise lowers PPLC"));
}
