use std::fs;
use std::path::Path;

use fewshot_nerf::trainer::{Checkpoint, TrainConfig};
use fewshot_nerf_cli::{run, EXIT_ABORT, EXIT_OK, EXIT_USAGE, EXIT_VERIFY};

const TINY: &str = r#"
preset = "toy"
iterations = 6
rays_per_iter = 32
samples_per_ray = 8

[data]
image_size = 12

[model]
density_hidden = [8]
geo_dim = 4
color_hidden = [8]

[model.hashgrid]
levels = 4
log2_table_size = 10
max_resolution = 16
"#;

fn cli(args: &[&str]) -> u8 {
    run(std::iter::once("fewshot-nerf").chain(args.iter().copied()))
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn train_writes_outputs_and_refuses_to_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    assert_eq!(cli(&["train", "--config", &cfg, "--out", &s(&out)]), EXIT_OK);
    for f in ["checkpoint.bin", "loss.log", "config.toml", "run.json", "eval.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let log = fs::read_to_string(out.join("loss.log")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let before = fs::read(out.join("checkpoint.bin")).unwrap();

    assert_eq!(cli(&["train", "--config", &cfg, "--out", &s(&out)]), EXIT_USAGE);
    assert_eq!(fs::read(out.join("checkpoint.bin")).unwrap(), before);
    assert_eq!(cli(&["train", "--config", &cfg, "--seed", "3", "--out", &s(&out), "--force"]), EXIT_OK);
    assert_ne!(fs::read(out.join("checkpoint.bin")).unwrap(), before);
    let leftovers: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains("staging"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(
        cli(&["train", "--config", &cfg, "--toggle", "kl=off", "--seed", "5", "--out", &s(&a)]),
        EXIT_OK
    );
    let resolved = s(&a.join("config.toml"));
    let parsed = TrainConfig::from_toml(&fs::read_to_string(&resolved).unwrap()).unwrap();
    assert!(!parsed.toggles.kl);
    assert_eq!(parsed.seed, 5);
    assert_eq!(cli(&["train", "--config", &resolved, "--out", &s(&b)]), EXIT_OK);
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());
    assert_eq!(fs::read(a.join("loss.log")).unwrap(), fs::read(b.join("loss.log")).unwrap());
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = s(&tmp.path().join("x"));
    assert_eq!(cli(&["train", "--config", "/nonexistent.toml", "--out", &out]), EXIT_USAGE);
    assert_eq!(cli(&["train", "--config", &cfg, "--toggle", "bogus=on", "--out", &out]), EXIT_USAGE);
    assert_eq!(cli(&["train", "--config", &cfg, "--toggle", "kl=maybe", "--out", &out]), EXIT_USAGE);
    assert_eq!(cli(&["train", "--preset", "nope", "--out", &out]), EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(cli(&["make-scene", "teapot", "--out", &out]), EXIT_USAGE);
    assert_eq!(cli(&["gradcheck", "--scale", "huge"]), EXIT_USAGE);
    assert_eq!(cli(&["eval", "--checkpoint", "/nonexistent.bin"]), EXIT_USAGE);
    assert!(!tmp.path().join("x").exists());
    assert_eq!(cli(&["--help"]), EXIT_OK);
}

#[test]
fn eval_and_render_from_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    assert_eq!(cli(&["train", "--config", &cfg, "--out", &s(&out)]), EXIT_OK);
    let ck = s(&out.join("checkpoint.bin"));

    let report = tmp.path().join("eval.json");
    assert_eq!(cli(&["eval", "--checkpoint", &ck, "--out", &s(&report)]), EXIT_OK);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let train_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(json, train_json);

    let img = tmp.path().join("v0.png");
    let depth = tmp.path().join("v0.depth");
    assert_eq!(
        cli(&["render", "--checkpoint", &ck, "--view", "0", "--out", &s(&img), "--depth", &s(&depth)]),
        EXIT_OK
    );
    assert!(img.is_file() && depth.is_file());
    assert_eq!(cli(&["render", "--checkpoint", &ck, "--view", "999", "--out", &s(&img)]), EXIT_USAGE);

    let ckpt = Checkpoint::load(&out.join("checkpoint.bin")).unwrap();
    assert_eq!(ckpt.resolution, (12, 12));
    let scene = tmp.path().join("scene16");
    assert_eq!(cli(&["make-scene", "sphere3", "--size", "16", "--out", &s(&scene)]), EXIT_OK);
    let manifest = s(&scene.join("transforms.json"));
    assert_eq!(cli(&["eval", "--checkpoint", &ck, "--manifest", &manifest]), EXIT_USAGE);
}

#[test]
fn make_scene_writes_a_loadable_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    assert_eq!(cli(&["make-scene", "sphere3", "--size", "12", "--out", &s(&scene)]), EXIT_OK);
    assert!(scene.join("transforms.json").is_file());
    assert_eq!(fs::read_dir(scene.join("images")).unwrap().count(), 24);
    assert_eq!(cli(&["make-scene", "sphere3", "--size", "12", "--out", &s(&scene)]), EXIT_USAGE);

    let out = tmp.path().join("run");
    let manifest = s(&scene.join("transforms.json"));
    let path = tmp.path().join("manifest.toml");
    fs::write(&path, TINY.replace("[data]", &format!("[data]\nmanifest = {manifest:?}"))).unwrap();
    assert_eq!(cli(&["train", "--config", &s(&path), "--out", &s(&out)]), EXIT_OK);
}

#[test]
fn gradcheck_reports_injected_fault() {
    assert_eq!(cli(&["gradcheck", "--scale", "quick"]), EXIT_OK);
    assert_eq!(cli(&["gradcheck", "--scale", "quick", "--inject-fault"]), EXIT_VERIFY);
}

#[test]
fn ablate_ladder_has_eight_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("abl");
    assert_eq!(
        cli(&["ablate", "--config", &cfg, "--iterations", "2", "--toggle", "ds=off", "--out", &s(&out)]),
        EXIT_OK
    );
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[0]["name"], "vanilla");
    assert_eq!(rows[7]["name"], "full");
    assert_eq!(rows[8]["name"], "custom");
    assert!(out.join("ablation.txt").is_file());
    assert_eq!(cli(&["ablate", "--config", &cfg, "--variants", "nope", "--out", &s(&out), "--force"]), EXIT_USAGE);
}

#[test]
fn exit_codes_are_distinct() {
    let codes = [EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_ABORT];
    for (i, a) in codes.iter().enumerate() {
        assert!(codes[i + 1..].iter().all(|b| a != b));
    }
}
