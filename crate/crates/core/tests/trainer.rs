use fewshot_nerf::scenedata::{make_fewshot_split, sphere3_dataset, Dataset};
use fewshot_nerf::trainer::{evaluate, mask_at, train, Checkpoint, Preset, Toggles, TrainConfig};

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::preset(Preset::Toy);
    cfg.iterations = 12;
    cfg.rays_per_iter = 32;
    cfg.samples_per_ray = 8;
    cfg.data.image_size = 12;
    cfg.model.hashgrid.levels = 4;
    cfg.model.hashgrid.log2_table_size = 10;
    cfg.model.hashgrid.max_resolution = 16;
    cfg.model.density_hidden = vec![8];
    cfg.model.geo_dim = 4;
    cfg.model.color_hidden = vec![8];
    cfg
}

fn tiny_data() -> Dataset {
    make_fewshot_split(&sphere3_dataset(12).unwrap(), 3).unwrap()
}

#[test]
fn same_seed_gives_identical_runs() {
    let data = tiny_data();
    let cfg = tiny_config();
    let a = train(&cfg, &data).unwrap();
    let b = train(&cfg, &data).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.log_text(), b.log_text());

    let mut other = cfg.clone();
    other.seed = 1;
    let c = train(&other, &data).unwrap();
    assert_ne!(a.checkpoint.params, c.checkpoint.params);
}

#[test]
fn saved_checkpoint_evaluates_identically() {
    let data = tiny_data();
    let run = train(&tiny_config(), &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    run.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, run.checkpoint);
    assert_eq!(evaluate(&back, &data).unwrap(), evaluate(&run.checkpoint, &data).unwrap());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let run = train(&tiny_config(), &tiny_data()).unwrap();
    let mut bytes = run.checkpoint.to_bytes();
    let p = std::path::Path::new("mem");
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2], p).is_err());
    bytes[0] ^= 0xff;
    assert!(Checkpoint::from_bytes(&bytes, p).is_err());
}

#[test]
fn each_toggle_controls_only_its_term() {
    let data = tiny_data();
    let terms = [("dist", "dist="), ("fg", "fg="), ("kl", "kl="), ("ds", "ds=")];
    for (toggle, key) in terms {
        let mut cfg = tiny_config();
        cfg.iterations = 2;
        cfg.toggles.set(toggle, false).unwrap();
        let line = train(&cfg, &data).unwrap().log[0].to_line();
        assert!(!line.contains(&format!(" {key}")), "{toggle}: {line}");
        for (other, other_key) in terms.iter().filter(|(t, _)| *t != toggle) {
            assert!(line.contains(&format!(" {other_key}")), "{toggle} removed {other}: {line}");
        }
        assert!(line.contains("lip_excess="));
    }
    let mut cfg = tiny_config();
    cfg.iterations = 2;
    cfg.toggles.set("lipschitz", false).unwrap();
    let line = train(&cfg, &data).unwrap().log[0].to_line();
    assert!(!line.contains("lip_excess="));
    assert!(line.contains(" kl=") && line.contains(" ds="));
}

#[test]
fn schedules_follow_the_config() {
    let mut cfg = tiny_config();
    cfg.iterations = 1100;
    cfg.samples_per_ray = 4;
    let run = train(&cfg, &tiny_data()).unwrap();
    assert!(run.aborted.is_none());
    let lambda = cfg.loss.lambda_dist;
    let saturate = (cfg.mask.saturate_fraction * cfg.iterations as f64).ceil() as usize;
    for pair in run.log.windows(2) {
        assert!(pair[1].mask_position >= pair[0].mask_position);
    }
    for rec in &run.log {
        let expected = if rec.iter < cfg.loss.dist_warmup_iters { 0.0 } else { lambda };
        assert_eq!(rec.report.weights.dist, expected, "iteration {}", rec.iter);
        if rec.iter >= saturate {
            assert_eq!(rec.mask_position, 1.0, "iteration {}", rec.iter);
        }
        assert_eq!((rec.mask_position, rec.mask_direction), mask_at(&cfg, rec.iter));
    }
    assert!(run.log[0].mask_position < 1.0);
}

#[test]
fn vanilla_has_no_regularizers() {
    let mut cfg = tiny_config();
    cfg.toggles = Toggles::none();
    let run = train(&cfg, &tiny_data()).unwrap();
    assert!(run.log.iter().all(|r| r.report.total == r.report.rgb && r.mask_position == 1.0));
}
