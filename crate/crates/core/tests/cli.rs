use std::fs;
use std::path::Path;
use std::process::Command;

use shadefield::cli::{evaluate_tuples, run};
use shadefield::envlight::{
    descriptor_from_envmap, make_partition, EnvMap, IlluminationDescriptor,
};
use shadefield::forge::{random_envs, random_scenes, rasterize, MANIFEST_FILE};
use shadefield::io::{self, CameraInfo};
use shadefield::raster::RgbImage;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shadefield"))
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn forge(dir: &Path, seed: u64) -> std::path::PathBuf {
    let out = dir.join("data");
    let code = run([
        "shadefield",
        "forge",
        "--out",
        &s(&out),
        "--seed",
        &seed.to_string(),
        "--scenes",
        "1",
        "--envs",
        "2",
        "--render-size",
        "128x96",
        "--bg-size",
        "96x72",
        "--env-size",
        "32x16",
    ]);
    assert_eq!(code, 0);
    out.join(MANIFEST_FILE)
}

#[test]
fn descriptor_command_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let env = EnvMap::new(RgbImage::from_fn(32, 16, |x, y| {
        [x as f64 * 0.1, y as f64 * 0.2, 1.0]
    }))
    .unwrap();
    let env_path = dir.path().join("env.pfm");
    io::write_rgb_pfm(&env_path, &env.radiance).unwrap();
    let out = dir.path().join("d.json");
    assert_eq!(
        run([
            "shadefield",
            "descriptor",
            "--env",
            &s(&env_path),
            "--k",
            "16",
            "--out",
            &s(&out)
        ]),
        0
    );
    let d: IlluminationDescriptor = io::read_json(&out).unwrap();
    assert_eq!(d.flatten().len(), 48);
    let stored = io::read_envmap(&env_path).unwrap();
    let expect = descriptor_from_envmap(&stored, &make_partition(16).unwrap());
    for (a, b) in d.flatten().iter().zip(expect.flatten()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn shade_with_pixel_bases_matches_oracle_shade() {
    let dir = tempfile::tempdir().unwrap();
    let scene = &random_scenes(1, 3)[0];
    let (depth, _, _, k, rot) = rasterize(scene, (24, 18)).unwrap();
    let plane = shadefield::forge::ground_plane_in_camera(&rot, scene.camera.height);
    let (dp, cp, ep) = (
        dir.path().join("depth.pfm"),
        dir.path().join("cam.json"),
        dir.path().join("env.pfm"),
    );
    io::write_depth_pfm(&dp, &depth).unwrap();
    io::write_json(&cp, &CameraInfo::new(k, &rot, Some(plane))).unwrap();
    let env = random_envs(1, 4, (32, 16)).unwrap().remove(0).env;
    io::write_rgb_pfm(&ep, &env.radiance).unwrap();
    let (bases, desc, shade, oracle) = (
        dir.path().join("bases"),
        dir.path().join("d.json"),
        dir.path().join("s.pfm"),
        dir.path().join("o.pfm"),
    );
    let common = [
        "--depth".to_string(),
        s(&dp),
        "--camera".into(),
        s(&cp),
        "--samples-per-cell".into(),
        "1".into(),
    ];
    let mut args = vec!["shadefield".to_string(), "bases".into()];
    args.extend(common.iter().cloned());
    args.extend([
        "--env-pixels".into(),
        "32x16".into(),
        "--out".into(),
        s(&bases),
    ]);
    assert_eq!(run(args), 0);
    assert_eq!(
        run([
            "shadefield",
            "descriptor",
            "--env",
            &s(&ep),
            "--env-pixels",
            "32x16",
            "--out",
            &s(&desc)
        ]),
        0
    );
    assert_eq!(
        run([
            "shadefield",
            "shade",
            "--bases",
            &s(&bases),
            "--descriptor",
            &s(&desc),
            "--out",
            &s(&shade)
        ]),
        0
    );
    let mut args = vec!["shadefield".to_string(), "oracle-shade".into()];
    args.extend(common.iter().cloned());
    args.extend(["--env".into(), s(&ep), "--out".into(), s(&oracle)]);
    assert_eq!(run(args), 0);
    let a = io::read_rgb_pfm(&shade).unwrap();
    let b = io::read_rgb_pfm(&oracle).unwrap();
    let mut lit = 0;
    for (p, q) in a.data.iter().zip(&b.data) {
        for c in 0..3 {
            assert!(
                (p[c] - q[c]).abs() <= 1e-5 * q[c].abs().max(1e-3),
                "{} vs {}",
                p[c],
                q[c]
            );
            if q[c] > 0.0 {
                lit += 1;
            }
        }
    }
    assert!(lit > 0);
}

#[test]
fn evaluate_csv_matches_library_values() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = forge(dir.path(), 11);
    let (csv, json) = (dir.path().join("m.csv"), dir.path().join("m.json"));
    assert_eq!(
        run([
            "shadefield",
            "evaluate",
            "--manifest",
            &s(&manifest),
            "--out-csv",
            &s(&csv),
            "--out-json",
            &s(&json)
        ]),
        0
    );
    let rows = evaluate_tuples(&manifest, None).unwrap();
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("tuple_id,fmae,fpsnr,fssim"));
    let parsed: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(parsed.len(), rows.len());
    for (p, (id, _, r)) in parsed.iter().zip(&rows) {
        assert_eq!(&p[0], id);
        assert_eq!(p[1].parse::<f64>().unwrap(), r.fmae);
        assert_eq!(p[2].parse::<f64>().unwrap(), r.fpsnr_db);
        assert_eq!(p[3].parse::<f64>().unwrap(), r.fssim);
    }
    let summary: serde_json::Value = io::read_json(&json).unwrap();
    assert_eq!(summary["all"]["tuples"], rows.len());
}

fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((s(&p), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn harmonize_batch_leaves_inputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = forge(dir.path(), 12);
    let before = snapshot(manifest.parent().unwrap());
    let preds = dir.path().join("preds");
    assert_eq!(
        run([
            "shadefield",
            "harmonize",
            "--manifest",
            &s(&manifest),
            "--oracle-target",
            "--out-dir",
            &s(&preds),
            "--k",
            "16",
        ]),
        0
    );
    assert_eq!(before, snapshot(manifest.parent().unwrap()));
    let rows = evaluate_tuples(&manifest, Some(&preds)).unwrap();
    let base = evaluate_tuples(&manifest, None).unwrap();
    let mean = |r: &[(String, String, shadefield::metrics::MetricReport)]| {
        r.iter().map(|x| x.2.fpsnr_db).sum::<f64>() / r.len() as f64
    };
    assert!(
        mean(&rows) > mean(&base),
        "{} vs {}",
        mean(&rows),
        mean(&base)
    );
}

#[test]
fn exit_codes() {
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().output().unwrap().status.code(), Some(2));
    assert_eq!(
        bin()
            .args(["forge", "--out", "/tmp/never"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );
    let missing = bin()
        .args([
            "shade",
            "--bases",
            "/nonexistent",
            "--descriptor",
            "/nonexistent.json",
            "--out",
            "/tmp/x.pfm",
        ])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));
}

#[test]
fn print_config_reports_the_effective_settings() {
    let out = bin()
        .args([
            "--print-config",
            "fit-bg",
            "--manifest",
            "m.json",
            "--k",
            "16",
            "--lambda",
            "0.5",
            "--out",
            "w.json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["K"], 16);
    assert_eq!(v["ridge_lambda"], 0.5);
    assert_eq!(v["subcommand"], "fit-bg");
    let out = bin().args(["--print-config"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["K"], 32);
    assert_eq!(v["samples_per_cell"], 8);
}
