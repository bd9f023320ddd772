use std::path::Path;
use std::process::Command;

use mmnet::dataset::{write_synthetic_dataset, DiskDataset, MANIFEST};
use mmnet::netpbm::{decode_pgm_values, read_pgm, read_ppm, write_ppm};
use mmnet::runner::{self, CHECKPOINT_FILE, METRICS_FILE};
use mmnet::{RunConfig, RunError};
use mmnet_core::data::{generate_synthetic, SampleSource, SyntheticSpec};

const TINY: &str = "\
iterations = 2
batch = 2
memory.n = 6
decoder.width = 4
backbone.stem = 4
backbone.level1 = 4
backbone.level2 = 4
backbone.level3 = 4
backbone.level4 = 4
backbone.dim = 8
data.extent = 32
data.samples_per_class = 20
eval.episodes = 6
seed = 3
";

fn tiny(extra: &str) -> RunConfig {
    RunConfig::parse(&format!("{TINY}{extra}")).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("");
    let a = runner::train(&cfg, &dir.path().join("a"), &mut std::io::sink()).unwrap();
    let b = runner::train(&cfg, &dir.path().join("b"), &mut std::io::sink()).unwrap();
    assert_eq!(read(&a.checkpoint), read(&b.checkpoint));
    let (ma, mb) = (
        read(&dir.path().join("a").join(METRICS_FILE)),
        read(&dir.path().join("b").join(METRICS_FILE)),
    );
    assert_eq!(ma, mb);
    let text = String::from_utf8(ma).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,seg_loss,recon_loss,total_loss");
    assert_eq!(lines.len(), 3);
    assert!(!text.contains('\r'));
    assert_eq!(a.history.len(), 2);
    assert!(a.history.iter().all(|m| m.recon > 0.0));
}

#[test]
fn zero_gamma_writes_zero_recon_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("loss.gamma = 0\n");
    runner::train(&cfg, dir.path(), &mut std::io::sink()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    for line in text.lines().skip(1) {
        let recon: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(recon, 0.0);
    }
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("checkpoint_every = 1\n");
    runner::train(&cfg, dir.path(), &mut std::io::sink()).unwrap();
    for name in ["checkpoint_1.bin", CHECKPOINT_FILE, "config.txt"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("checkpoint_2.bin").exists());
    let saved = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert_eq!(RunConfig::parse(&saved).unwrap(), cfg);
}

#[test]
fn evaluation_is_deterministic_and_k_shot_paths_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("");
    let out = runner::train(&cfg, dir.path(), &mut std::io::sink()).unwrap();
    let model = runner::load_model(&cfg, Some(&out.checkpoint)).unwrap();
    let a = runner::evaluate_model(&cfg, &model, 1, 6).unwrap();
    let b = runner::evaluate_model(&cfg, &model, 1, 6).unwrap();
    assert_eq!(a.mean_iou.to_bits(), b.mean_iou.to_bits());
    assert!(a.per_class.iter().all(|&(c, _)| (1..=3).contains(&c)));

    let averaging = tiny("qmm = false\n");
    let plain = runner::load_model(&averaging, Some(&out.checkpoint)).unwrap();
    let five = runner::evaluate_model(&averaging, &plain, 5, 12).unwrap();
    assert!((0.0..=1.0).contains(&five.mean_iou));

    let csv = dir.path().join("eval.csv");
    runner::write_eval_csv(&a, &csv).unwrap();
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("class_id,iou\n"));
    assert!(text.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn activation_dump_writes_one_map_per_embedding() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("");
    let img_path = dir.path().join("img.ppm");
    let s = generate_synthetic(&cfg.data, 1, 0).unwrap();
    write_ppm(&s.image, &img_path).unwrap();
    let model = runner::load_model(&cfg, None).unwrap();
    let files = runner::dump_activations(&model, &img_path, &dir.path().join("act")).unwrap();
    assert_eq!(files.len(), 6);
    for f in &files {
        let map = decode_pgm_values(&read(f)).unwrap();
        assert_eq!(map.shape(), &[8, 8]);
    }

    let bypass = runner::load_model(&tiny("memory.bypass = true\n"), None).unwrap();
    assert!(runner::dump_activations(&bypass, &img_path, &dir.path().join("none")).is_err());
}

#[test]
fn default_model_dumps_fifty_maps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let img_path = dir.path().join("img.ppm");
    write_ppm(
        &generate_synthetic(&cfg.data, 2, 0).unwrap().image,
        &img_path,
    )
    .unwrap();
    let model = runner::load_model(&cfg, None).unwrap();
    let files = runner::dump_activations(&model, &img_path, dir.path()).unwrap();
    assert_eq!(files.len(), 50);
}

#[test]
fn disk_dataset_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        image_extent: 16,
        class_count: 4,
        samples_per_class: 3,
        ..SyntheticSpec::default()
    };
    assert_eq!(write_synthetic_dataset(&spec, dir.path()).unwrap(), 12);
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
    assert_eq!(manifest.lines().count(), 12);
    assert!(manifest.starts_with("1\tclass_1/sample_0.ppm\tclass_1/sample_0_mask.pgm\n"));

    let ds = DiskDataset::open(dir.path()).unwrap();
    assert_eq!(ds.class_count(), 4);
    assert_eq!(ds.samples_in_class(2), 3);
    let from_disk = ds.sample(3, 1).unwrap();
    let fresh = generate_synthetic(&spec, 3, 1).unwrap();
    assert_eq!(from_disk.mask, fresh.mask);
    assert!(from_disk.image.max_abs_diff(&fresh.image) <= 0.5 / 255.0 + 1e-12);
    assert_eq!(
        read_pgm(&dir.path().join("class_3/sample_1_mask.pgm")).unwrap(),
        fresh.mask
    );
    assert_eq!(
        read_ppm(&dir.path().join("class_3/sample_1.ppm")).unwrap(),
        from_disk.image
    );
    assert!(ds.sample(5, 0).is_err());
}

#[test]
fn training_from_disk_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = tiny("");
    runner::gen_data(&cfg, cfg.data.seed, &data).unwrap();
    let on_disk = tiny(&format!("data.root = {}\n", data.display()));
    let out = runner::train(&on_disk, &dir.path().join("run"), &mut std::io::sink()).unwrap();
    assert_eq!(out.history.len(), 2);
}

#[test]
fn malformed_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(MANIFEST), "1\tonly-two-columns\n").unwrap();
    let err = DiskDataset::open(dir.path()).unwrap_err();
    assert!(matches!(err, RunError::Dataset(_)));
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("line 1"));
}

#[test]
fn gradcheck_command_passes() {
    let results = runner::gradcheck(&mut std::io::sink()).unwrap();
    assert_eq!(results.len(), 8);
}

// ---- binary ----------------------------------------------------------------

fn mmnet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mmnet"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).display().to_string();

    assert_eq!(mmnet(&["no-such-command"]).status.code(), Some(1));

    std::fs::write(d("bad.cfg"), "lr = banana\n").unwrap();
    let out = mmnet(&["train", "--config", &d("bad.cfg"), "--out", &d("run")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    std::fs::write(d("tiny.cfg"), TINY).unwrap();
    let out = mmnet(&["train", "--config", &d("tiny.cfg"), "--out", &d("run")]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ckpt = d("run/checkpoint.bin");

    let out = mmnet(&[
        "eval",
        "--config",
        &d("tiny.cfg"),
        "--ckpt",
        &ckpt,
        "--shots",
        "1",
        "--episodes",
        "12",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mIoU"));
    assert!(dir.path().join("run/eval.csv").exists());

    std::fs::write(d("garbage.bin"), b"not a checkpoint").unwrap();
    let out = mmnet(&[
        "eval",
        "--config",
        &d("tiny.cfg"),
        "--ckpt",
        &d("garbage.bin"),
        "--episodes",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = mmnet(&[
        "dump-act",
        "--config",
        &d("tiny.cfg"),
        "--ckpt",
        &ckpt,
        "--image",
        &d("missing.ppm"),
        "--out",
        &d("act"),
    ]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(
        d("nan.cfg"),
        format!(
            "{}lr = 1e300\n",
            TINY.replace("iterations = 2", "iterations = 10")
        ),
    )
    .unwrap();
    let out = mmnet(&["train", "--config", &d("nan.cfg"), "--out", &d("nan")]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration"));

    std::fs::write(
        d("gen.cfg"),
        "data.extent = 16\ndata.samples_per_class = 2\n",
    )
    .unwrap();
    let out = mmnet(&[
        "gen-data",
        "--spec",
        &d("gen.cfg"),
        "--out",
        &d("data"),
        "--seed",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("data/class_12/sample_1_mask.pgm").exists());
}

#[test]
fn cli_gradcheck_succeeds() {
    let out = mmnet(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 8);
}
