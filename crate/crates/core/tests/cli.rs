use std::path::Path;
use std::process::{Command, Output};

use npnet::data::{synthetic_rectangles, write_generic_dataset, Size};
use npnet::model::load_checkpoint;
use npnet::{Model, ModelConfig};

fn npnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npnet"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn fixture(root: &Path, count: usize) {
    write_generic_dataset(&synthetic_rectangles(count, Size::new(16, 16), 1, 4), root).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_smoke() {
    let out = npnet(&["analyze", "--input-size", "224x224"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("block1.conv1"));
    assert!(text.contains("total params 846096"));
    let model = Model::new(ModelConfig::default(), 0).unwrap();
    assert!(text.contains(&format!(
        "total MACs {}",
        model.count_macs(224, 224).unwrap()
    )));
}

#[test]
fn analyze_rejects_bad_size_and_unknown_flags() {
    assert_eq!(code(&npnet(&["analyze", "--input-size", "100x100"])), 1);
    assert_eq!(code(&npnet(&["analyze", "--input-size", "abc"])), 1);
    assert_eq!(code(&npnet(&["analyze", "--frobnicate"])), 1);
    assert_eq!(code(&npnet(&["analyze", "--attention", "transformer"])), 1);
}

#[test]
fn missing_data_dir_is_data_error_naming_path() {
    let out = npnet(&[
        "train",
        "--data-dir",
        "/nonexistent",
        "--out",
        "/tmp/never.npnt",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("/nonexistent"));
}

#[test]
fn train_eval_predict_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fixture(&data, 5);
    let ckpt = dir.path().join("m.npnt");
    let log = dir.path().join("train.log");
    let train_args = [
        "train",
        "--data-dir",
        s(&data),
        "--layout",
        "generic",
        "--epochs",
        "2",
        "--widths",
        "8,8,16",
        "--reduction",
        "4",
        "--out",
        s(&ckpt),
        "--log",
        s(&log),
        "--seed",
        "3",
    ];
    let out = npnet(&train_args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let model = load_checkpoint(&ckpt).unwrap();
    assert_eq!(model.config().widths, [8, 8, 16]);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);

    let first = std::fs::read(&ckpt).unwrap();
    let again = dir.path().join("again.npnt");
    let mut args2 = train_args.to_vec();
    let pos = args2.iter().position(|a| *a == s(&ckpt)).unwrap();
    args2[pos] = s(&again);
    assert_eq!(code(&npnet(&args2)), 0);
    assert_eq!(std::fs::read(&again).unwrap(), first);

    let report = dir.path().join("eval.tsv");
    let out = npnet(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data-dir",
        s(&data),
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let tsv = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "image\tiou\tdice");
    // 5 samples at 0.8 leave one test image.
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("MEAN\t") && lines[3].starts_with("POOLED\t"));

    let mask = dir.path().join("out").join("mask.png");
    let overlay = dir.path().join("overlay.png");
    let input = data.join("images").join("rect000.png");
    let out = npnet(&[
        "predict",
        "--ckpt",
        s(&ckpt),
        "--input",
        s(&input),
        "--out",
        s(&mask),
        "--overlay",
        s(&overlay),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = image::open(&mask).unwrap().to_luma8();
    assert_eq!(m.dimensions(), (16, 16));
    assert!(m.pixels().all(|p| p[0] == 0 || p[0] == 255));
    let o = image::open(&overlay).unwrap().to_rgb8();
    let src = image::open(&input).unwrap().to_rgb8();
    for ((mp, op), sp) in m.pixels().zip(o.pixels()).zip(src.pixels()) {
        if mp[0] == 0 {
            assert_eq!(op, sp);
        } else {
            assert_eq!(op[0], ((sp[0] as f32 + 255.0) / 2.0).round() as u8);
        }
    }
}

#[test]
fn predict_rejects_indivisible_image() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.npnt");
    let model = Model::new(
        ModelConfig::default()
            .with_widths([4, 8, 8])
            .with_reduction(4),
        0,
    )
    .unwrap();
    npnet::model::save_checkpoint(&model, &ckpt).unwrap();
    let img = dir.path().join("odd.png");
    image::RgbImage::new(20, 12).save(&img).unwrap();
    let out = npnet(&[
        "predict",
        "--ckpt",
        s(&ckpt),
        "--input",
        s(&img),
        "--out",
        s(&dir.path().join("m.png")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("odd.png"));
    let out = npnet(&[
        "predict",
        "--ckpt",
        s(&ckpt),
        "--input",
        s(&img),
        "--out",
        s(&dir.path().join("m.png")),
        "--target-size",
        "24x16",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        image::open(dir.path().join("m.png"))
            .unwrap()
            .to_luma8()
            .dimensions(),
        (20, 12)
    );
}

#[test]
fn corrupt_checkpoint_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.npnt");
    std::fs::write(&ckpt, b"XXXXjunk").unwrap();
    let out = npnet(&["eval", "--ckpt", s(&ckpt), "--data-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bad.npnt"));
}

#[test]
fn config_file_fills_flags_and_cli_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "widths = \"8,16,32\"\nreduction = 4\ninput_size = \"32x32\"\nformat = \"tsv\"\n",
    )
    .unwrap();
    let out = npnet(&["--config", s(&cfg), "analyze"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let small = Model::new(
        ModelConfig::default()
            .with_widths([8, 16, 32])
            .with_reduction(4),
        0,
    )
    .unwrap();
    let total = format!(
        "\t{}\t{}",
        small.count_params(),
        small.count_macs(32, 32).unwrap()
    );
    assert!(stdout(&out).lines().last().unwrap().ends_with(&total));

    let out = npnet(&["--config", s(&cfg), "analyze", "--input-size", "64x64"]);
    let total = format!("\t{}", small.count_macs(64, 64).unwrap());
    assert!(stdout(&out).lines().last().unwrap().ends_with(&total));

    std::fs::write(&cfg, "widths = [8, 16, 32]\nreduction = 4\nbogus_key = 1\n").unwrap();
    let out = npnet(&["--config", s(&cfg), "analyze"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("bogus_key"));
}

#[test]
fn shipped_presets_parse() {
    let presets = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let mut seen = 0;
    for entry in std::fs::read_dir(&presets).unwrap() {
        let path = entry.unwrap().path();
        // Presets carry only training keys, so `train` without a data dir must
        // fail on the data dir, not on the config.
        let out = npnet(&[
            "--config",
            s(&path),
            "train",
            "--data-dir",
            "/nonexistent",
            "--out",
            "/tmp/x.npnt",
        ]);
        assert_eq!(code(&out), 2, "{}: {}", path.display(), stderr(&out));
        seen += 1;
    }
    assert_eq!(seen, 4);
}

#[test]
fn gradcheck_command_passes() {
    let out = npnet(&["gradcheck", "--seed", "0"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("npnet_end_to_end"));
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&npnet(&["--help"])), 0);
    assert_eq!(code(&npnet(&["train", "--help"])), 0);
    assert_eq!(code(&npnet(&[])), 1);
}
