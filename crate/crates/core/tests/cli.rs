use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iqt::backbone::{load_feature_file, save_feature_file, FeatureMap};
use iqt::io::{decode_pgm, write_manifest, ManifestRow};
use iqt::pipeline::write_synthetic_dataset;

fn iqt(args: &[&str]) -> Output {
    iqt_with_env(args, &[])
}

fn iqt_with_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_iqt"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("IQT_CONFIG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_tiny(manifest: &Path, out: &Path, seed: &str) -> Output {
    iqt(&[
        "train", "--preset", "tiny", "--manifest", s(manifest), "--steps", "15", "--seed", seed, "--set",
        "batch_size=4", "--out-dir", s(out),
    ])
}

#[test]
fn train_score_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic_dataset(dir.path().join("data"), 32, 0).unwrap();
    let (out1, out2) = (dir.path().join("run1"), dir.path().join("run2"));

    let o = train_tiny(&manifest, &out1, "4");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(train_tiny(&manifest, &out2, "4").status.success());
    for f in ["model.iqtc", "loss.csv"] {
        assert_eq!(fs::read(out1.join(f)).unwrap(), fs::read(out2.join(f)).unwrap(), "{f} differs between runs");
    }
    let loss = fs::read_to_string(out1.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("step,lr,mse"));
    assert_eq!(loss.lines().count(), 16);

    let ckpt = out1.join("model.iqtc");
    let data = dir.path().join("data");
    let o = iqt(&["score", "--ckpt", s(&ckpt), "--ref", s(&data.join("ref.ppm")), "--dist", s(&data.join("dist_3.ppm"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1);
    let score: f64 = text.trim().parse().unwrap();
    assert!(score.is_finite());

    let eval_dir = dir.path().join("eval");
    let o = iqt(&["eval", "--ckpt", s(&ckpt), "--manifest", s(&manifest), "--out-dir", s(&eval_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(eval_dir.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("config_id,srcc,krcc,plcc,main_score,n"));
    let cells: Vec<f64> = lines.next().unwrap().split(',').skip(1).map(|c| c.parse().unwrap()).collect();
    assert_eq!(cells[3], cells[2] + cells[0]);
    assert_eq!(cells[4], 8.0);
    let preds = fs::read_to_string(eval_dir.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 9);
    assert!(stdout(&o).contains("SRCC"));

    let attn_dir = dir.path().join("attn");
    let o = iqt(&[
        "attn-export", "--ckpt", s(&ckpt), "--ref", s(&data.join("ref.ppm")), "--dist", s(&data.join("dist_5.ppm")),
        "--out-dir", s(&attn_dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, w, px) = decode_pgm(&fs::read(attn_dir.join("attention.pgm")).unwrap()).unwrap();
    assert_eq!((h, w), (32, 32));
    assert_eq!(px.iter().max(), Some(&255));
    assert!(attn_dir.join("ref_crop.ppm").exists());

    let feat_dir = dir.path().join("features");
    let o = iqt(&["extract-features", "--preset", "tiny", "--image", s(&data.join("ref.ppm")), "--out-dir", s(&feat_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let f = load_feature_file(feat_dir.join("ref.iqtf")).unwrap();
    assert_eq!(f.dims(), (4, 4, 24));
    let o = iqt(&["extract-features", "--preset", "tiny", "--manifest", s(&manifest), "--out-dir", s(&feat_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = iqt::io::parse_manifest(feat_dir.join("manifest.csv")).unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(load_feature_file(&rows[2].dist_path).unwrap().dims(), (4, 4, 24));
}

#[test]
fn feature_file_models_train_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let base = FeatureMap::new(21, 21, 12, (0..21 * 21 * 12).map(|_| rng.random::<f32>()).collect()).unwrap();
    save_feature_file(dir.path().join("ref.iqtf"), &base).unwrap();
    let mut rows = Vec::new();
    for k in 0..6 {
        let noisy: Vec<f32> = base.data().iter().map(|v| v + 0.1 * k as f32 * rng.random::<f32>()).collect();
        let name = format!("dist{k}.iqtf");
        save_feature_file(dir.path().join(&name), &FeatureMap::new(21, 21, 12, noisy).unwrap()).unwrap();
        rows.push(ManifestRow {
            ref_path: "ref.iqtf".into(),
            dist_path: name.into(),
            mos: 5.0 - k as f64,
        });
    }
    let manifest = dir.path().join("m.csv");
    write_manifest(&manifest, &rows).unwrap();
    let out = dir.path().join("out");
    let o = iqt(&[
        "train", "--preset", "iqt-c", "--manifest", s(&manifest), "--steps", "3", "--set", "stage_channels=2",
        "--set", "d_model=16", "--set", "d_feat=32", "--set", "d_head=16", "--set", "batch_size=2", "--out-dir",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = iqt(&[
        "score", "--ckpt", s(&out.join("model.iqtc")), "--ref", s(&dir.path().join("ref.iqtf")), "--dist",
        s(&dir.path().join("dist2.iqtf")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).trim().parse::<f64>().unwrap().is_finite());
}

#[test]
fn ablation_writes_every_routing() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic_dataset(dir.path(), 32, 1).unwrap();
    let out = dir.path().join("ablate");
    let o = iqt(&[
        "ablate", "--preset", "tiny", "--manifest", s(&manifest), "--steps", "2", "--set", "batch_size=2", "--out-dir",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let ids: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["1", "2", "3", "4", "5", "6", "7", "8", "image"]);
    let table = fs::read_to_string(out.join("ablation.txt")).unwrap();
    assert!(table.contains("Encoder") && table.contains("image"));
}

#[test]
fn config_file_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic_dataset(dir.path().join("data"), 32, 2).unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("out");
    fs::write(
        &cfg,
        format!(
            "preset = tiny\ntotal_steps = 2\nbatch_size = 2\nmanifest = {}\nout_dir = {}\n",
            manifest.display(),
            out.display()
        ),
    )
    .unwrap();
    let o = iqt_with_env(&["train"], &[("IQT_CONFIG", s(&cfg))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("loss.csv")).unwrap().lines().count(), 3);

    // command-line values win over the file
    let o = iqt_with_env(&["train", "--steps", "1"], &[("IQT_CONFIG", s(&cfg))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("loss.csv")).unwrap().lines().count(), 2);
}

#[test]
fn usage_errors_exit_two() {
    for args in [&["frobnicate"][..], &["score", "--bogus"], &[]] {
        let o = iqt(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).contains("Usage"), "{args:?}: {}", stderr(&o));
    }
}

fn expect_failure(args: &[&str], needles: &[&str]) {
    let o = iqt(args);
    assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    let err = stderr(&o);
    for n in needles {
        assert!(err.contains(n), "{args:?}: `{n}` missing from `{err}`");
    }
}

#[test]
fn malformed_inputs_give_actionable_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = d.join("out");
    let write = |name: &str, bytes: &[u8]| -> PathBuf {
        let p = d.join(name);
        fs::write(&p, bytes).unwrap();
        p
    };
    let bad_mos = write("bad_mos.csv", b"ref_path,dist_path,mos\na.ppm,b.ppm,abc\n");
    expect_failure(&["train", "--preset", "tiny", "--manifest", s(&bad_mos), "--out-dir", s(&out)], &["bad_mos.csv", "line 2", "abc"]);
    let bad_header = write("bad_header.csv", b"ref,dist,score\n");
    expect_failure(&["train", "--preset", "tiny", "--manifest", s(&bad_header), "--out-dir", s(&out)], &["line 1", "header"]);

    let truncated = write("trunc.ppm", b"P6\n4 4\n255\n\x00\x01");
    let good = write_synthetic_dataset(d.join("data"), 32, 0).unwrap();
    let data = good.parent().unwrap().to_path_buf();
    let ckpt_dir = d.join("run");
    assert!(train_tiny(&good, &ckpt_dir, "1").status.success());
    let ckpt = ckpt_dir.join("model.iqtc");
    expect_failure(&["score", "--ckpt", s(&ckpt), "--ref", s(&truncated), "--dist", s(&truncated)], &["trunc.ppm", "offset"]);

    let small_ref = data.join("ref.ppm");
    let bytes = fs::read(&ckpt).unwrap();
    let cut = write("cut.iqtc", &bytes[..bytes.len() / 3]);
    expect_failure(&["score", "--ckpt", s(&cut), "--ref", s(&small_ref), "--dist", s(&small_ref)], &["IQTC", "offset"]);
    let missing = d.join("missing.iqtc");
    expect_failure(&["score", "--ckpt", s(&missing), "--ref", s(&small_ref), "--dist", s(&small_ref)], &["missing.iqtc"]);

    let cfg = write("bad.cfg", b"preset = tiny\nlearning_rate = 1\n");
    expect_failure(&["train", "--config", s(&cfg), "--manifest", s(&good), "--out-dir", s(&out)], &["bad.cfg", "line 2", "learning_rate"]);
    expect_failure(&["train", "--preset", "huge", "--manifest", s(&good), "--out-dir", s(&out)], &["huge"]);
    expect_failure(&["train", "--preset", "tiny", "--set", "patch_size=30", "--manifest", s(&good), "--out-dir", s(&out)], &["patch size 30"]);
    expect_failure(&["extract-features", "--preset", "iqt", "--image", s(&small_ref), "--out-dir", s(&out)], &["toy backbone"]);
}
